//! Partition of the annular velocity domain into congruent spherical-coordinate
//! cells, direction vectors with certified positivity margins, and the derived
//! observation-time geometry.
//!
//! Velocities live in the annulus `{v0 < |v| < v1}` in dimension 2 or 3. The
//! annulus is split into `m = L0` (2-D) or `m = L0*L1` (3-D) congruent cells by
//! uniform half-open angular intervals. Each cell `j` carries a direction
//! vector `gamma_j` (cell centroid direction at mean radius) together with a
//! certified margin `kappa_j <= min over the cell closure of gamma_j . v`.
//! All margins must be strictly positive; that is what makes the piecewise
//! weight construction work.

use crate::geometry::{dot, norm, SpatialBox, Vec3};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("velocity domain needs 0 < v0 < v1, got v0={v0}, v1={v1}")]
    BadRadii { v0: f64, v1: f64 },
    #[error("velocity dimension {0} not supported (expected 2 or 3)")]
    BadDimension(usize),
    #[error("angular counts {got:?} do not match dimension {dim} (need {need} entries >= 1)")]
    BadCounts { dim: usize, need: usize, got: Vec<usize> },
    #[error("cell {0} has no positive margin: its angular width is too large for its direction vector; refine the partition (increase L)")]
    NonPositiveKappa(usize),
    #[error("direction vectors not selected yet")]
    GammasUnset,
    #[error("margins not certified yet")]
    KappasUnset,
    #[error("velocity {0:?} lies outside the base cell V_0")]
    OutsideBaseCell(Vec3),
    #[error("observation horizon {t} is too short: the partition requires T > {t_min}")]
    TimeTooShort { t: f64, t_min: f64 },
    #[error("no positive grid-aligned delta fits the margin interval (dt={dt}); increase T or refine the time step")]
    DeltaCollapsed { dt: f64 },
}

/// The annulus `{v0 < |v| < v1}` in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityDomain {
    pub dim: usize,
    pub v0: f64,
    pub v1: f64,
}

impl VelocityDomain {
    pub fn new(dim: usize, v0: f64, v1: f64) -> Result<Self, PartitionError> {
        if dim < 2 || dim > 3 {
            return Err(PartitionError::BadDimension(dim));
        }
        if !(v0 > 0.0 && v1 > v0) {
            return Err(PartitionError::BadRadii { v0, v1 });
        }
        Ok(Self { dim, v0, v1 })
    }

    /// Lebesgue measure of the annulus.
    pub fn measure(&self) -> f64 {
        match self.dim {
            2 => PI * (self.v1 * self.v1 - self.v0 * self.v0),
            _ => 4.0 * PI / 3.0 * (self.v1.powi(3) - self.v0.powi(3)),
        }
    }

    pub fn mean_radius(&self) -> f64 {
        0.5 * (self.v0 + self.v1)
    }

    pub fn contains(&self, v: Vec3) -> bool {
        let r = norm(v);
        r > self.v0 && r < self.v1
    }
}

/// Spherical coordinates `(r, theta, phi)` with azimuth `theta in [0, 2pi)`
/// and (3-D only) polar angle `phi in [0, pi]`.
pub fn to_spherical(dim: usize, v: Vec3) -> (f64, f64, f64) {
    let r = norm(v);
    let mut theta = v[1].atan2(v[0]);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    if dim == 2 {
        (r, theta, 0.0)
    } else {
        let phi = (v[2] / r).clamp(-1.0, 1.0).acos();
        (r, theta, phi)
    }
}

pub fn from_spherical(dim: usize, r: f64, theta: f64, phi: f64) -> Vec3 {
    if dim == 2 {
        [r * theta.cos(), r * theta.sin(), 0.0]
    } else {
        [
            r * phi.sin() * theta.cos(),
            r * phi.sin() * theta.sin(),
            r * phi.cos(),
        ]
    }
}

/// Half-open interval `[lo, hi)` in one angular coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularInterval {
    pub lo: f64,
    pub hi: f64,
}

impl AngularInterval {
    pub fn contains(&self, a: f64) -> bool {
        a >= self.lo && a < self.hi
    }
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// One spherical-coordinate cell of the partition.
///
/// `index` is zero-based storage order; `l` keeps the one-based angular
/// multi-index, so `index + 1 = l0 + (l1 - 1) * L0`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityCell {
    pub index: usize,
    pub l: [usize; 2],
    pub theta: AngularInterval,
    pub phi: Option<AngularInterval>,
}

impl VelocityCell {
    pub fn contains(&self, domain: &VelocityDomain, v: Vec3) -> bool {
        if !domain.contains(v) {
            return false;
        }
        let (_, theta, phi) = to_spherical(domain.dim, v);
        if !self.theta.contains(theta) {
            return false;
        }
        match self.phi {
            Some(p) => p.contains(phi),
            None => true,
        }
    }

    /// Measure of the cell (exact closed form).
    pub fn measure(&self, domain: &VelocityDomain) -> f64 {
        match self.phi {
            None => 0.5 * self.theta.width() * (domain.v1.powi(2) - domain.v0.powi(2)),
            Some(p) => {
                self.theta.width() * (p.lo.cos() - p.hi.cos()) * (domain.v1.powi(3) - domain.v0.powi(3))
                    / 3.0
            }
        }
    }

    /// Corner points of the cell closure in velocity space.
    pub fn corners(&self, domain: &VelocityDomain) -> Vec<Vec3> {
        let radii = [domain.v0, domain.v1];
        let thetas = [self.theta.lo, self.theta.hi];
        let mut out = Vec::new();
        match self.phi {
            None => {
                for &r in &radii {
                    for &t in &thetas {
                        out.push(from_spherical(2, r, t, 0.0));
                    }
                }
            }
            Some(p) => {
                for &r in &radii {
                    for &t in &thetas {
                        for &f in &[p.lo, p.hi] {
                            out.push(from_spherical(3, r, t, f));
                        }
                    }
                }
            }
        }
        out
    }
}

/// The full partition with (optionally) selected directions and certified
/// margins. Build with [`VelocityPartition::build`], then
/// [`select_gammas`](Self::select_gammas) and
/// [`certify_kappas`](Self::certify_kappas).
#[derive(Debug, Clone)]
pub struct VelocityPartition {
    pub domain: VelocityDomain,
    pub counts: Vec<usize>,
    pub cells: Vec<VelocityCell>,
    pub gammas: Vec<Vec3>,
    pub kappas: Vec<f64>,
}

impl VelocityPartition {
    /// Tile the annulus with `counts = [L0]` (2-D) or `[L0, L1]` (3-D)
    /// congruent half-open cells.
    pub fn build(domain: VelocityDomain, counts: &[usize]) -> Result<Self, PartitionError> {
        let need = domain.dim - 1;
        if counts.len() != need || counts.iter().any(|&c| c == 0) {
            return Err(PartitionError::BadCounts {
                dim: domain.dim,
                need,
                got: counts.to_vec(),
            });
        }
        let l0 = counts[0];
        let l1 = if domain.dim == 3 { counts[1] } else { 1 };
        let mut cells = Vec::with_capacity(l0 * l1);
        for j1 in 1..=l1 {
            for j0 in 1..=l0 {
                let index = (j0 - 1) + (j1 - 1) * l0;
                let theta = AngularInterval {
                    lo: 2.0 * PI * (j0 as f64 - 1.0) / l0 as f64,
                    hi: 2.0 * PI * j0 as f64 / l0 as f64,
                };
                let phi = (domain.dim == 3).then(|| AngularInterval {
                    lo: PI * (j1 as f64 - 1.0) / l1 as f64,
                    hi: PI * j1 as f64 / l1 as f64,
                });
                cells.push(VelocityCell {
                    index,
                    l: [j0, j1],
                    theta,
                    phi,
                });
            }
        }
        Ok(Self {
            domain,
            counts: counts.to_vec(),
            cells,
            gammas: Vec::new(),
            kappas: Vec::new(),
        })
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Which cell contains `v`, if any (half-open convention).
    pub fn locate(&self, v: Vec3) -> Option<usize> {
        if !self.domain.contains(v) {
            return None;
        }
        let (_, theta, phi) = to_spherical(self.domain.dim, v);
        let l0 = self.counts[0] as f64;
        let i0 = ((theta / (2.0 * PI)) * l0).floor() as usize;
        let i0 = i0.min(self.counts[0] - 1);
        let idx = if self.domain.dim == 3 {
            let l1 = self.counts[1] as f64;
            let i1 = (((phi / PI) * l1).floor() as usize).min(self.counts[1] - 1);
            i0 + i1 * self.counts[0]
        } else {
            i0
        };
        self.cells[idx].contains(&self.domain, v).then_some(idx)
    }

    /// Choose `gamma_j` as the cell centroid direction at mean radius.
    /// Deterministic, and the worst-case margin over a congruent cell is
    /// maximized by the angular midpoint.
    pub fn select_gammas(mut self) -> Self {
        let r = self.domain.mean_radius();
        self.gammas = self
            .cells
            .iter()
            .map(|c| {
                let theta = c.theta.midpoint();
                let phi = c.phi.map(|p| p.midpoint()).unwrap_or(0.0);
                from_spherical(self.domain.dim, r, theta, phi)
            })
            .collect();
        self
    }

    /// Certify the positivity margins `kappa_j = min over closure(V_j) of
    /// gamma_j . v`, by exact corner enumeration plus a dense inclusive grid
    /// over the closure. The minimum of a linear functional over the closure
    /// sits on the boundary, and for centroid directions it lands on a corner,
    /// so the certified value is the true minimum up to roundoff.
    pub fn certify_kappas(mut self, samples_per_cell: usize) -> Result<Self, PartitionError> {
        if self.gammas.is_empty() {
            return Err(PartitionError::GammasUnset);
        }
        let mut kappas = Vec::with_capacity(self.cells.len());
        for (cell, &gamma) in self.cells.iter().zip(&self.gammas) {
            let mut min = f64::INFINITY;
            for c in cell.corners(&self.domain) {
                min = min.min(dot(gamma, c));
            }
            // Inclusive closure grid; radius endpoints are enough because the
            // functional is linear in r at fixed angles.
            let n_ang = grid_side(self.domain.dim, samples_per_cell);
            for ia in 0..n_ang {
                let theta = lerp(cell.theta.lo, cell.theta.hi, ia as f64 / (n_ang - 1) as f64);
                match cell.phi {
                    None => {
                        for &r in &[self.domain.v0, self.domain.v1] {
                            min = min.min(dot(gamma, from_spherical(2, r, theta, 0.0)));
                        }
                    }
                    Some(p) => {
                        for ip in 0..n_ang {
                            let phi = lerp(p.lo, p.hi, ip as f64 / (n_ang - 1) as f64);
                            for &r in &[self.domain.v0, self.domain.v1] {
                                min = min.min(dot(gamma, from_spherical(3, r, theta, phi)));
                            }
                        }
                    }
                }
            }
            if !(min > 0.0) {
                return Err(PartitionError::NonPositiveKappa(cell.index));
            }
            kappas.push(min);
        }
        self.kappas = kappas;
        Ok(self)
    }

    pub fn kappa_min(&self) -> Result<f64, PartitionError> {
        if self.kappas.is_empty() {
            return Err(PartitionError::KappasUnset);
        }
        Ok(self.kappas.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// Map `v in V_0` into cell `j` by shifting the angular coordinates by the
    /// cell offsets. Speed is preserved; `j = 0` is the identity.
    pub fn rotate_into(&self, j: usize, v: Vec3) -> Result<Vec3, PartitionError> {
        if !self.cells[0].contains(&self.domain, v) {
            return Err(PartitionError::OutsideBaseCell(v));
        }
        if j == 0 {
            return Ok(v);
        }
        let cell = &self.cells[j];
        let (r, theta, phi) = to_spherical(self.domain.dim, v);
        let theta2 = theta + cell.theta.lo;
        let phi2 = phi + cell.phi.map(|p| p.lo).unwrap_or(0.0);
        Ok(from_spherical(self.domain.dim, r, theta2, phi2))
    }

    /// Smallest admissible observation horizon for a spatial box: the spread
    /// of `gamma_j . x` over the box divided by the worst certified margin.
    pub fn minimal_time(&self, omega: &SpatialBox) -> Result<f64, PartitionError> {
        let kappa_min = self.kappa_min()?;
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for &g in &self.gammas {
            let (a, b) = omega.dot_range(g);
            lo = lo.min(a);
            hi = hi.max(b);
        }
        Ok((hi - lo) / kappa_min)
    }

    /// Derive the full time geometry for horizon `t` on a `dt`-grid:
    /// decay rate `beta`, the sandwich levels `r0 < r1`, and the largest
    /// grid-aligned `delta` for the cut-off margins.
    pub fn time_geometry(
        &self,
        omega: &SpatialBox,
        t: f64,
        dt: f64,
    ) -> Result<TimeGeometry, PartitionError> {
        let kappa_min = self.kappa_min()?;
        let t_min = self.minimal_time(omega)?;
        if t <= t_min {
            return Err(PartitionError::TimeTooShort { t, t_min });
        }
        let mut r_max = f64::NEG_INFINITY;
        let mut r_min = f64::INFINITY;
        for &g in &self.gammas {
            let (a, b) = omega.dot_range(g);
            r_min = r_min.min(a);
            r_max = r_max.max(b);
        }
        let beta = 0.5 * ((r_max - r_min) / t + kappa_min);
        let floor = r_max - beta * t;
        let gap = r_min - floor;
        debug_assert!(gap > 0.0);
        let r0 = floor + gap / 3.0;
        let r1 = floor + 2.0 * gap / 3.0;
        // Continuous bounds: phi > r1 on [0, delta] needs r_min - beta*delta > r1;
        // phi < r0 on [T - 2 delta, T] needs r_max - beta*(T - 2 delta) < r0.
        let d1 = (r_min - r1) / beta;
        let d2 = (r0 - floor) / (2.0 * beta);
        let d_cont = d1.min(d2).min(0.25 * t);
        let steps = ((d_cont / dt) - 1e-12).floor();
        if steps < 1.0 {
            return Err(PartitionError::DeltaCollapsed { dt });
        }
        let delta = steps * dt;
        let geo = TimeGeometry {
            r_max,
            r_min,
            t_min,
            beta,
            r0,
            r1,
            delta,
            horizon: t,
        };
        debug_assert!(geo.validate_on_samples(self, omega, dt));
        Ok(geo)
    }
}

fn grid_side(dim: usize, samples_per_cell: usize) -> usize {
    let n = match dim {
        2 => samples_per_cell / 2,
        _ => ((samples_per_cell as f64 / 2.0).sqrt().ceil()) as usize,
    };
    n.max(9)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Derived quantities tying the weight decay to the observation horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGeometry {
    pub r_max: f64,
    pub r_min: f64,
    pub t_min: f64,
    pub beta: f64,
    pub r0: f64,
    pub r1: f64,
    pub delta: f64,
    pub horizon: f64,
}

impl TimeGeometry {
    /// Check the sandwich inequalities on grid-sampled times and exact box
    /// extrema: `phi_j > r1` on `[0, delta]` and `phi_j < r0` on
    /// `[T - 2 delta, T]`.
    pub fn validate_on_samples(
        &self,
        partition: &VelocityPartition,
        omega: &SpatialBox,
        dt: f64,
    ) -> bool {
        if !(self.beta > 0.0) || self.delta <= 0.0 {
            return false;
        }
        if let Ok(km) = partition.kappa_min() {
            if self.beta >= km {
                return false;
            }
        }
        if !(self.r_max - self.beta * self.horizon < self.r0
            && self.r0 < self.r1
            && self.r1 < self.r_min)
        {
            return false;
        }
        let mut lo_all = f64::INFINITY;
        let mut hi_all = f64::NEG_INFINITY;
        for &g in &partition.gammas {
            let (a, b) = omega.dot_range(g);
            lo_all = lo_all.min(a);
            hi_all = hi_all.max(b);
        }
        let mut t = 0.0;
        while t <= self.delta + 1e-12 {
            if !(lo_all - self.beta * t > self.r1) {
                return false;
            }
            t += dt;
        }
        let mut t = self.horizon - 2.0 * self.delta;
        while t <= self.horizon + 1e-12 {
            if !(hi_all - self.beta * t < self.r0) {
                return false;
            }
            t += dt;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annulus2() -> VelocityDomain {
        VelocityDomain::new(2, 1.0, 2.0).unwrap()
    }

    #[test]
    fn single_cell_covers_circle() {
        let p = VelocityPartition::build(annulus2(), &[1]).unwrap();
        assert_eq!(p.cell_count(), 1);
        assert_eq!(p.cells[0].theta.lo, 0.0);
        assert!((p.cells[0].theta.hi - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn quadrant_breaks_at_right_angles() {
        let p = VelocityPartition::build(annulus2(), &[4]).unwrap();
        assert_eq!(p.cell_count(), 4);
        for (j, c) in p.cells.iter().enumerate() {
            assert!((c.theta.lo - PI / 2.0 * j as f64).abs() < 1e-15);
            // one-based multi-index formula
            assert_eq!(c.index + 1, c.l[0] + (c.l[1] - 1) * 4);
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(VelocityPartition::build(annulus2(), &[0]).is_err());
        assert!(VelocityPartition::build(annulus2(), &[]).is_err());
        let d3 = VelocityDomain::new(3, 1.0, 2.0).unwrap();
        assert!(VelocityPartition::build(d3, &[4]).is_err());
    }

    #[test]
    fn cell_measures_tile_the_annulus() {
        for l0 in [1usize, 4, 8] {
            let p = VelocityPartition::build(annulus2(), &[l0]).unwrap();
            let total: f64 = p.cells.iter().map(|c| c.measure(&p.domain)).sum();
            assert!((total - p.domain.measure()).abs() < 1e-12);
        }
        let d3 = VelocityDomain::new(3, 0.5, 1.5).unwrap();
        let p = VelocityPartition::build(d3, &[4, 2]).unwrap();
        let total: f64 = p.cells.iter().map(|c| c.measure(&p.domain)).sum();
        assert!((total - p.domain.measure()).abs() < 1e-12);
    }

    #[test]
    fn centroid_gamma_for_full_circle_points_at_pi() {
        let p = VelocityPartition::build(annulus2(), &[1]).unwrap().select_gammas();
        let g = p.gammas[0];
        let r = norm(g);
        assert!((r - 1.5).abs() < 1e-14);
        assert!((g[0] + 1.5).abs() < 1e-14, "expected direction theta = pi");
        assert!(g[1].abs() < 1e-13);
    }

    #[test]
    fn centroid_gamma_quadrant_and_3d() {
        let p = VelocityPartition::build(annulus2(), &[4]).unwrap().select_gammas();
        let g = p.gammas[0];
        let theta = g[1].atan2(g[0]);
        assert!((theta - PI / 4.0).abs() < 1e-14);
        assert!(p.cells[0].contains(&p.domain, g));

        let d3 = VelocityDomain::new(3, 1.0, 2.0).unwrap();
        let p3 = VelocityPartition::build(d3, &[4, 2]).unwrap().select_gammas();
        let (_, th, ph) = to_spherical(3, p3.gammas[0]);
        assert!((th - PI / 4.0).abs() < 1e-14);
        assert!((ph - PI / 4.0).abs() < 1e-14);
    }

    #[test]
    fn full_annulus_has_no_positive_margin() {
        let p = VelocityPartition::build(annulus2(), &[1]).unwrap().select_gammas();
        match p.certify_kappas(1000) {
            Err(PartitionError::NonPositiveKappa(0)) => {}
            other => panic!("expected NonPositiveKappa, got {other:?}"),
        }
    }

    // Brute-force oracle: minimum of gamma . v over a dense sample of the
    // cell closure, independent of the certification path.
    fn brute_min(p: &VelocityPartition, j: usize, n: usize) -> f64 {
        let cell = &p.cells[j];
        let g = p.gammas[j];
        let mut min = f64::INFINITY;
        for ir in 0..n {
            let r = lerp(p.domain.v0, p.domain.v1, ir as f64 / (n - 1) as f64);
            for ia in 0..n {
                let th = lerp(cell.theta.lo, cell.theta.hi, ia as f64 / (n - 1) as f64);
                match cell.phi {
                    None => min = min.min(dot(g, from_spherical(2, r, th, 0.0))),
                    Some(pp) => {
                        for ip in 0..n {
                            let ph = lerp(pp.lo, pp.hi, ip as f64 / (n - 1) as f64);
                            min = min.min(dot(g, from_spherical(3, r, th, ph)));
                        }
                    }
                }
            }
        }
        min
    }

    #[test]
    fn quadrant_kappa_matches_brute_force() {
        let p = VelocityPartition::build(annulus2(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap();
        // |gamma| = 1.5, worst angle pi/4 at the inner radius.
        let expected = 1.5 * 1.0 * (PI / 4.0).cos();
        for j in 0..4 {
            assert!((p.kappas[j] - expected).abs() < 1e-12);
            let oracle = brute_min(&p, j, 101);
            assert!(p.kappas[j] <= oracle + 1e-12);
            assert!((p.kappas[j] - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn kappa_grows_with_refinement() {
        let k4 = VelocityPartition::build(annulus2(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap()
            .kappa_min()
            .unwrap();
        let k8 = VelocityPartition::build(annulus2(), &[8])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap()
            .kappa_min()
            .unwrap();
        let expected8 = 1.5 * (PI / 8.0).cos();
        assert!((k8 - expected8).abs() < 1e-12);
        assert!(k8 > k4);
    }

    #[test]
    fn rotation_is_identity_on_cell_zero_and_lands_in_cells() {
        let p = VelocityPartition::build(annulus2(), &[4]).unwrap();
        let v = from_spherical(2, 1.3, PI / 8.0, 0.0);
        assert_eq!(p.rotate_into(0, v).unwrap(), v);
        let w = p.rotate_into(1, v).unwrap();
        let (r, th, _) = to_spherical(2, w);
        assert!((r - 1.3).abs() < 1e-13);
        assert!((th - (PI / 8.0 + PI / 2.0)).abs() < 1e-13);
        assert!(p.cells[1].contains(&p.domain, w));
        // outside V_0 is rejected
        let bad = from_spherical(2, 1.3, PI, 0.0);
        assert!(p.rotate_into(1, bad).is_err());
    }

    #[test]
    fn minimal_time_unit_square_quadrant() {
        let p = VelocityPartition::build(annulus2(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap();
        let omega = SpatialBox::unit(2);
        let t_min = p.minimal_time(&omega).unwrap();
        // Oracle: enumerate gamma . corner over all cells and corners.
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for &g in &p.gammas {
            for c in omega.corners() {
                hi = hi.max(dot(g, c));
                lo = lo.min(dot(g, c));
            }
        }
        let expected = (hi - lo) / p.kappa_min().unwrap();
        assert!((t_min - expected).abs() < 1e-12);
        assert!((t_min - 4.0).abs() < 1e-12);
    }

    #[test]
    fn minimal_time_of_point_is_zero() {
        // The gamma . x spread vanishes only where all products coincide,
        // which for a one-point domain means the origin.
        let p = VelocityPartition::build(annulus2(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(500)
            .unwrap();
        let omega = SpatialBox::point(2, &[0.0, 0.0]).unwrap();
        assert_eq!(p.minimal_time(&omega).unwrap(), 0.0);
        // beta is the midpoint of (0, kappa_min)
        let geo = p.time_geometry(&omega, 1.0, 1e-3).unwrap();
        assert!((geo.beta - 0.5 * p.kappa_min().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn doubling_speeds_halves_minimal_time() {
        // Both the direction magnitudes and the margins scale, so the
        // enumeration oracle fixes the exact relation: the numerator scales
        // by 2, the denominator by 4.
        let omega = SpatialBox::unit(2);
        let p1 = VelocityPartition::build(annulus2(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap();
        let d2 = VelocityDomain::new(2, 2.0, 4.0).unwrap();
        let p2 = VelocityPartition::build(d2, &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap();
        let t1 = p1.minimal_time(&omega).unwrap();
        let t2 = p2.minimal_time(&omega).unwrap();
        assert!((t2 - 0.5 * t1).abs() < 1e-12);
    }

    #[test]
    fn time_geometry_accepts_2tmin_rejects_half() {
        let p = VelocityPartition::build(annulus2(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap();
        let omega = SpatialBox::unit(2);
        let t_min = p.minimal_time(&omega).unwrap();
        let dt = 1.0 / 128.0;
        let geo = p.time_geometry(&omega, 2.0 * t_min, dt).unwrap();
        assert!(geo.validate_on_samples(&p, &omega, dt));
        assert!(geo.delta > 0.0);
        assert!(2.0 * geo.delta < geo.horizon);
        match p.time_geometry(&omega, 0.5 * t_min, dt) {
            Err(PartitionError::TimeTooShort { .. }) => {}
            other => panic!("expected TimeTooShort, got {other:?}"),
        }
    }

    #[test]
    fn beta_leaves_positive_node_margin() {
        let p = VelocityPartition::build(annulus2(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap();
        let omega = SpatialBox::unit(2);
        let geo = p
            .time_geometry(&omega, 2.0 * p.minimal_time(&omega).unwrap(), 1.0 / 64.0)
            .unwrap();
        let km = p.kappa_min().unwrap();
        assert!(geo.beta > 0.0 && geo.beta < km);
    }
}
