//! Weighted-inequality diagnostics: per-cell linear weights
//! `phi_j(x, t) = gamma_j . x - beta t`, the temporal cut-off, numerical
//! evaluation of both sides of the weighted estimate on discrete fields, and
//! the energy-balance checks.
//!
//! Weighted integrals accumulate against a per-`s` exponent shift (streaming
//! log-sum-exp), since `e^{2 s phi}` spans hundreds of orders of magnitude
//! over the space-time cylinder once `s` is large.

use crate::geometry::{dot, Vec3};
use crate::norms;
use crate::partition::{TimeGeometry, VelocityPartition};
use crate::transport::{
    apply_operator_level, BoundaryFace, Trajectory, TransportError, TransportProblem,
};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CarlemanError {
    #[error("beta = {beta} is not in the admissible interval (0, {kappa_min})")]
    InadmissibleBeta { beta: f64, kappa_min: f64 },
    #[error("cut-off needs 0 < 2 delta < T, got delta={delta}, T={horizon}")]
    DeltaTooLarge { delta: f64, horizon: f64 },
    #[error("field does not vanish at t = T: terminal/max norm ratio {0:.3e} exceeds 1e-12")]
    FieldNotVanishingAtT(f64),
    #[error("need at least 2 stored levels, got {0}")]
    TooFewLevels(usize),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// The per-cell weight family and its transport rate.
#[derive(Debug, Clone)]
pub struct CarlemanWeights {
    pub gammas: Vec<Vec3>,
    pub beta: f64,
    pub kappa_min: f64,
}

impl CarlemanWeights {
    pub fn new(partition: &VelocityPartition, beta: f64) -> Result<Self, CarlemanError> {
        let kappa_min = partition
            .kappa_min()
            .map_err(|_| CarlemanError::InadmissibleBeta {
                beta,
                kappa_min: f64::NAN,
            })?;
        if !(beta > 0.0 && beta < kappa_min) {
            return Err(CarlemanError::InadmissibleBeta { beta, kappa_min });
        }
        Ok(Self {
            gammas: partition.gammas.clone(),
            beta,
            kappa_min,
        })
    }

    pub fn from_geometry(
        partition: &VelocityPartition,
        geometry: &TimeGeometry,
    ) -> Result<Self, CarlemanError> {
        Self::new(partition, geometry.beta)
    }

    /// `phi_j(x, t) = gamma_j . x - beta t`
    #[inline]
    pub fn phi(&self, cell: usize, x: Vec3, t: f64) -> f64 {
        dot(self.gammas[cell], x) - self.beta * t
    }

    /// Transport rate `B = -beta + v . gamma_j`, positive on cell `j`.
    #[inline]
    pub fn transport_rate(&self, cell: usize, v: Vec3) -> f64 {
        -self.beta + dot(v, self.gammas[cell])
    }
}

/// Temporal cut-off: 1 on `[0, T - 2 delta]`, 0 on `[T - delta, T]`, quintic
/// smoothstep ramp in between (so `|chi'| <= 15 / (8 delta)` in closed form).
#[derive(Debug, Clone, Copy)]
pub struct CutOff {
    pub horizon: f64,
    pub delta: f64,
}

impl CutOff {
    pub fn new(horizon: f64, delta: f64) -> Result<Self, CarlemanError> {
        if !(delta > 0.0 && 2.0 * delta < horizon) {
            return Err(CarlemanError::DeltaTooLarge { delta, horizon });
        }
        Ok(Self { horizon, delta })
    }

    pub fn value(&self, t: f64) -> f64 {
        let start = self.horizon - 2.0 * self.delta;
        let end = self.horizon - self.delta;
        if t <= start {
            1.0
        } else if t >= end {
            0.0
        } else {
            let tau = (t - start) / self.delta;
            let s = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
            1.0 - s
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let start = self.horizon - 2.0 * self.delta;
        let end = self.horizon - self.delta;
        if t <= start || t >= end {
            0.0
        } else {
            let tau = (t - start) / self.delta;
            let ds = 30.0 * tau * tau * (tau - 1.0) * (tau - 1.0);
            -ds / self.delta
        }
    }

    pub fn derivative_bound(&self) -> f64 {
        15.0 / (8.0 * self.delta)
    }
}

/// The four weighted integrals of the estimate at one `s`, in linear and log
/// form, plus the fitted constant
/// `C_req = max(0, lhs_init + lhs_bulk - rhs_boundary) / rhs_interior`.
#[derive(Debug, Clone, Copy)]
pub struct CarlemanReport {
    pub s: f64,
    pub lhs_init: f64,
    pub lhs_bulk: f64,
    pub rhs_interior: f64,
    pub rhs_boundary: f64,
    pub ln_lhs_init: f64,
    pub ln_lhs_bulk: f64,
    pub ln_rhs_interior: f64,
    pub ln_rhs_boundary: f64,
    pub c_req: f64,
}

/// Per-`s` shifted accumulator; `value = sum * e^shift`.
#[derive(Debug, Clone, Copy)]
struct ShiftedTerms {
    shift: f64,
    init: f64,
    bulk: f64,
    interior: f64,
    boundary: f64,
}

impl ShiftedTerms {
    fn report(&self, s: f64) -> CarlemanReport {
        let ln = |v: f64| {
            if v > 0.0 {
                v.ln() + self.shift
            } else {
                f64::NEG_INFINITY
            }
        };
        let ln_lhs_init = ln(self.init);
        let ln_lhs_bulk = ln(self.bulk);
        let ln_rhs_interior = ln(self.interior);
        let ln_rhs_boundary = ln(self.boundary);
        // lhs = e^a + e^b, then subtract the boundary term, all in log form
        let a = ln_lhs_init.max(ln_lhs_bulk);
        let ln_lhs = if a.is_finite() {
            a + ((ln_lhs_init - a).exp() + (ln_lhs_bulk - a).exp()).ln()
        } else {
            f64::NEG_INFINITY
        };
        let ln_num = if !ln_lhs.is_finite() || ln_rhs_boundary >= ln_lhs {
            f64::NEG_INFINITY
        } else {
            ln_lhs + (-((ln_rhs_boundary - ln_lhs).exp())).ln_1p()
        };
        let c_req = if !ln_num.is_finite() {
            0.0
        } else if ln_rhs_interior.is_finite() {
            (ln_num - ln_rhs_interior).exp()
        } else {
            f64::INFINITY
        };
        CarlemanReport {
            s,
            lhs_init: (ln_lhs_init).exp(),
            lhs_bulk: (ln_lhs_bulk).exp(),
            rhs_interior: (ln_rhs_interior).exp(),
            rhs_boundary: (ln_rhs_boundary).exp(),
            ln_lhs_init,
            ln_lhs_bulk,
            ln_rhs_interior,
            ln_rhs_boundary,
            c_req,
        }
    }
}

/// Streaming accumulator over time levels for a whole `s`-scan.
///
/// Feed per-level aggregates grouped by partition cell:
/// `a_z[i, x] = sum_{q in cell i} w_q z^2`, same for `|P z|^2`, and the
/// outflow trace aggregate `a_tr[i, face]` (already weighted by `(w . nu)`,
/// node weight and face area).
pub struct ScanAccumulator {
    s_values: Vec<f64>,
    beta: f64,
    dt: f64,
    cell_volume: f64,
    /// per s: spatial weight tables `e^{2 s gamma_i . x - shift}`
    wx: Vec<Array2<f64>>,
    wf: Vec<Array2<f64>>,
    terms: Vec<ShiftedTerms>,
}

impl ScanAccumulator {
    pub fn new(
        problem: &TransportProblem,
        weights: &CarlemanWeights,
        faces: &[BoundaryFace],
        s_values: &[f64],
    ) -> Self {
        let grid = &problem.grid;
        let m = weights.gammas.len();
        let nx = grid.cell_count();
        let mut wx = Vec::with_capacity(s_values.len());
        let mut wf = Vec::with_capacity(s_values.len());
        let mut terms = Vec::with_capacity(s_values.len());
        for &s in s_values {
            // shift by the largest possible exponent so the scaled tables
            // never exceed 1
            let mut max_exp = f64::NEG_INFINITY;
            for g in &weights.gammas {
                let (_, hi) = grid.domain.dot_range(*g);
                max_exp = max_exp.max(2.0 * s * hi);
            }
            let mut tx = Array2::zeros((m, nx));
            for i in 0..m {
                for x in 0..nx {
                    let e = 2.0 * s * dot(weights.gammas[i], grid.cell_center(x));
                    tx[[i, x]] = (e - max_exp).exp();
                }
            }
            let mut tf = Array2::zeros((m, faces.len()));
            for i in 0..m {
                for (fi, face) in faces.iter().enumerate() {
                    let e = 2.0 * s * dot(weights.gammas[i], face.center);
                    tf[[i, fi]] = (e - max_exp).exp();
                }
            }
            wx.push(tx);
            wf.push(tf);
            terms.push(ShiftedTerms {
                shift: max_exp,
                init: 0.0,
                bulk: 0.0,
                interior: 0.0,
                boundary: 0.0,
            });
        }
        Self {
            s_values: s_values.to_vec(),
            beta: weights.beta,
            dt: problem.dt,
            cell_volume: grid.cell_volume(),
            wx,
            wf,
            terms,
        }
    }

    pub fn add_level(
        &mut self,
        level: usize,
        t: f64,
        a_z: &Array2<f64>,
        a_pz: &Array2<f64>,
        a_tr: &Array2<f64>,
    ) {
        for (si, &s) in self.s_values.iter().enumerate() {
            let ft = (-2.0 * s * self.beta * t).exp();
            let wx = self.wx[si].as_slice().unwrap();
            let wf = self.wf[si].as_slice().unwrap();
            let az = a_z.as_slice().unwrap();
            let apz = a_pz.as_slice().unwrap();
            let atr = a_tr.as_slice().unwrap();
            let mut zsum = 0.0;
            let mut psum = 0.0;
            for k in 0..az.len() {
                zsum += az[k] * wx[k];
                psum += apz[k] * wx[k];
            }
            let mut bsum = 0.0;
            for k in 0..atr.len() {
                bsum += atr[k] * wf[k];
            }
            let terms = &mut self.terms[si];
            terms.bulk += s * s * self.dt * self.cell_volume * ft * zsum;
            terms.interior += self.dt * self.cell_volume * ft * psum;
            terms.boundary += s * self.dt * ft * bsum;
            if level == 0 {
                terms.init += s * self.cell_volume * ft * zsum;
            }
        }
    }

    pub fn finish(self) -> Vec<CarlemanReport> {
        self.s_values
            .iter()
            .zip(self.terms.iter())
            .map(|(&s, t)| t.report(s))
            .collect()
    }
}

/// Group `sum_q w_q field[q, x]^2` by partition cell.
fn aggregate_by_cell(problem: &TransportProblem, field: &Array2<f64>, out: &mut Array2<f64>) {
    out.fill(0.0);
    let nx = problem.grid.cell_count();
    for (q, node) in problem.quadrature.nodes.iter().enumerate() {
        for x in 0..nx {
            let v = field[[q, x]];
            out[[node.cell, x]] += node.weight * v * v;
        }
    }
}

/// Outflow aggregate `sum_{q in cell i, (w.nu) > 0} (w.nu) w_q area z^2`
/// per (cell, face), where the trace is the face-adjacent state.
fn aggregate_outflow(
    problem: &TransportProblem,
    faces: &[BoundaryFace],
    field: &Array2<f64>,
    out: &mut Array2<f64>,
) {
    out.fill(0.0);
    for (fi, face) in faces.iter().enumerate() {
        for (q, node) in problem.quadrature.nodes.iter().enumerate() {
            let speed = face.outward_speed(node.v);
            if speed > 0.0 {
                let z = field[[q, face.cell]];
                out[[node.cell, fi]] += speed * node.weight * face.area * z * z;
            }
        }
    }
}

/// Evaluate the four terms for one `s` on stored fields `z^0 .. z^K`
/// (the fields must vanish at the last level). `z_ghost(q, face, t)` supplies
/// upwind boundary values for the transport stencil.
pub fn carleman_sides(
    problem: &TransportProblem,
    weights: &CarlemanWeights,
    z_levels: &[Array2<f64>],
    z_ghost: &dyn Fn(usize, usize, f64) -> f64,
    s: f64,
) -> Result<CarlemanReport, CarlemanError> {
    if z_levels.len() < 2 {
        return Err(CarlemanError::TooFewLevels(z_levels.len()));
    }
    let max_norm = z_levels
        .iter()
        .map(|z| norms::linf(z))
        .fold(0.0f64, f64::max);
    let terminal = norms::linf(z_levels.last().unwrap());
    if max_norm > 0.0 && terminal > 1e-12 * max_norm {
        return Err(CarlemanError::FieldNotVanishingAtT(terminal / max_norm));
    }
    let faces = problem.grid.faces();
    let mut acc = ScanAccumulator::new(problem, weights, &faces, &[s]);
    let m = weights.gammas.len();
    let nx = problem.grid.cell_count();
    let (nq, _) = problem.state_shape();
    let mut a_z = Array2::zeros((m, nx));
    let mut a_pz = Array2::zeros((m, nx));
    let mut a_tr = Array2::zeros((m, faces.len()));
    let mut pz = Array2::zeros((nq, nx));
    for n in 0..z_levels.len() - 1 {
        let t = n as f64 * problem.dt;
        apply_operator_level(
            problem,
            &z_levels[n],
            &z_levels[n + 1],
            &|q, f| z_ghost(q, f, t),
            &mut pz,
        );
        aggregate_by_cell(problem, &z_levels[n], &mut a_z);
        aggregate_by_cell(problem, &pz, &mut a_pz);
        aggregate_outflow(problem, &faces, &z_levels[n], &mut a_tr);
        acc.add_level(n, t, &a_z, &a_pz, &a_tr);
    }
    Ok(acc.finish().pop().unwrap())
}

/// Scan summary: supremum of `C_req` over the window and the knee past which
/// the curve is non-increasing (1% slack).
#[derive(Debug, Clone, Copy)]
pub struct ScanSummary {
    pub sup_c: f64,
    pub argmax_s: f64,
    pub knee_s: Option<f64>,
}

pub fn summarize_scan(reports: &[CarlemanReport]) -> ScanSummary {
    let mut sup_c = f64::NEG_INFINITY;
    let mut argmax_s = f64::NAN;
    for r in reports {
        if r.c_req > sup_c {
            sup_c = r.c_req;
            argmax_s = r.s;
        }
    }
    let mut knee_s = None;
    'outer: for k in 0..reports.len() {
        for w in reports[k..].windows(2) {
            if w[1].c_req > w[0].c_req * 1.01 + 1e-300 {
                continue 'outer;
            }
        }
        knee_s = Some(reports[k].s);
        break;
    }
    ScanSummary {
        sup_c,
        argmax_s,
        knee_s,
    }
}

/// Run the forward problem and evaluate the scan on `z = chi * dt_u` without
/// storing the full space-time field: a three-level ring buffer of states is
/// enough for `z^n`, `z^{n+1}`, and the transport stencil between them.
pub fn carleman_scan(
    problem: &TransportProblem,
    weights: &CarlemanWeights,
    cutoff: &CutOff,
    s_values: &[f64],
) -> Result<Vec<CarlemanReport>, CarlemanError> {
    problem.check_cfl()?;
    if problem.steps < 2 {
        return Err(CarlemanError::TooFewLevels(problem.steps));
    }
    let faces = problem.grid.faces();
    let (nq, nx) = problem.state_shape();
    let m = weights.gammas.len();
    let mut acc = ScanAccumulator::new(problem, weights, &faces, s_values);

    // ring of three consecutive states
    let mut u0 = problem.initial.clone();
    let mut u1 = Array2::zeros((nq, nx));
    let mut u2 = Array2::zeros((nq, nx));
    step_into(problem, &u0, 0, &mut u1)?;
    step_into(problem, &u1, 1, &mut u2)?;

    let dt = problem.dt;
    let mut z_n = Array2::zeros((nq, nx));
    let mut z_np1 = Array2::zeros((nq, nx));
    let mut pz = Array2::zeros((nq, nx));
    let mut a_z = Array2::zeros((m, nx));
    let mut a_pz = Array2::zeros((m, nx));
    let mut a_tr = Array2::zeros((m, faces.len()));

    for n in 0..problem.steps {
        let t = n as f64 * dt;
        let chi_n = cutoff.value(t);
        let chi_np1 = cutoff.value(t + dt);
        fill_z(&u0, &u1, chi_n, dt, &mut z_n);
        if n + 1 < problem.steps {
            fill_z(&u1, &u2, chi_np1, dt, &mut z_np1);
        } else {
            // last level: chi(T) = 0 forces z^K = 0
            z_np1.fill(0.0);
        }
        let ghost = |q: usize, f: usize, tt: f64| {
            cutoff.value(tt) * (problem.inflow.value(q, f, tt + dt) - problem.inflow.value(q, f, tt))
                / dt
        };
        apply_operator_level(problem, &z_n, &z_np1, &|q, f| ghost(q, f, t), &mut pz);
        aggregate_by_cell(problem, &z_n, &mut a_z);
        aggregate_by_cell(problem, &pz, &mut a_pz);
        aggregate_outflow(problem, &faces, &z_n, &mut a_tr);
        acc.add_level(n, t, &a_z, &a_pz, &a_tr);

        if n + 2 < problem.steps {
            // rotate the ring: u0 <- u1 <- u2 <- step(u2)
            std::mem::swap(&mut u0, &mut u1);
            std::mem::swap(&mut u1, &mut u2);
            let src = u1.clone();
            step_into(problem, &src, n + 2, &mut u2)?;
        } else {
            std::mem::swap(&mut u0, &mut u1);
            std::mem::swap(&mut u1, &mut u2);
        }
    }
    Ok(acc.finish())
}

fn fill_z(u_n: &Array2<f64>, u_np1: &Array2<f64>, chi: f64, dt: f64, out: &mut Array2<f64>) {
    ndarray::Zip::from(out)
        .and(u_n)
        .and(u_np1)
        .for_each(|z, &a, &b| *z = chi * (b - a) / dt);
}

fn step_into(
    problem: &TransportProblem,
    u: &Array2<f64>,
    level: usize,
    out: &mut Array2<f64>,
) -> Result<(), CarlemanError> {
    let t = level as f64 * problem.dt;
    let coll = problem.coefficients.kernel.as_ref().map(|k| {
        let mut c = Array2::zeros(u.dim());
        crate::transport::collision_apply(k, &problem.quadrature, u, &mut c);
        c
    });
    let force = if problem.source.is_zero() {
        None
    } else {
        let mut f = Array2::zeros(u.dim());
        problem.source.fill_level(level, t, &mut f);
        Some(f)
    };
    crate::transport::apply_forward_step(problem, u, coll.as_ref(), force.as_ref(), t, out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(TransportError::NonFiniteState { step: level }.into());
    }
    Ok(())
}

/// Both sides of the energy inequalities on a stored trajectory, with the
/// smallest constant making the state-energy bound hold, and the slack of the
/// boundary-flux bound at constant one.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    /// `t_k` for `k = 1..=K` (backward differences live on these levels).
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub outflow_cum: Vec<f64>,
    pub inflow_cum: Vec<f64>,
    /// `max_t E(t)`
    pub lhs_state: f64,
    /// `sum (|f|^2 + |a|^2 + |grad a|^2) + inflow total`
    pub rhs_state: f64,
    /// fitted constant `lhs_state / rhs_state`
    pub c_energy: f64,
    /// outflow total
    pub lhs_flux: f64,
    /// inflow total plus data terms, constant one
    pub rhs_flux: f64,
    pub slack_flux: f64,
}

/// Evaluate the energy estimates; the trajectory must store snapshots.
/// `f` is the stationary source factor (zero if absent).
pub fn energy_check(
    problem: &TransportProblem,
    traj: &Trajectory,
    f: Option<&Array2<f64>>,
) -> Result<EnergyReport, CarlemanError> {
    let snapshots = traj
        .snapshots
        .as_ref()
        .ok_or(CarlemanError::TooFewLevels(0))?;
    let quad = &problem.quadrature;
    let grid = &problem.grid;
    let faces = grid.faces();
    let mut times = Vec::with_capacity(traj.steps);
    let mut energy = Vec::with_capacity(traj.steps);
    let mut outflow_cum = Vec::with_capacity(traj.steps);
    let mut inflow_cum = Vec::with_capacity(traj.steps);
    let mut out_acc = 0.0;
    let mut in_acc = 0.0;
    for k in 1..=traj.steps {
        let w = (&snapshots[k] - &snapshots[k - 1]) / traj.dt;
        energy.push(norms::l2_xv_sq(&w, grid, quad));
        times.push(traj.time(k));
        let tr = &traj.dt_traces[k];
        for (fi, face) in faces.iter().enumerate() {
            for (q, node) in quad.nodes.iter().enumerate() {
                let speed = face.outward_speed(node.v);
                let flux = node.weight * face.area * tr[[q, fi]] * tr[[q, fi]] * traj.dt;
                if speed > 0.0 {
                    out_acc += speed * flux;
                } else if speed < 0.0 {
                    in_acc += -speed * flux;
                }
            }
        }
        outflow_cum.push(out_acc);
        inflow_cum.push(in_acc);
    }
    let zero = Array2::zeros(problem.initial.dim());
    let f_field = f.unwrap_or(&zero);
    let data_terms = norms::l2_xv_sq(f_field, grid, quad)
        + norms::l2_xv_sq(&problem.initial, grid, quad)
        + norms::per_cell_grad_l2(&problem.initial, grid, quad)
            .iter()
            .map(|v| v * v)
            .sum::<f64>();
    let lhs_state = energy.iter().cloned().fold(0.0, f64::max);
    let rhs_state = data_terms + in_acc;
    let c_energy = if rhs_state > 0.0 {
        lhs_state / rhs_state
    } else if lhs_state > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let lhs_flux = out_acc;
    let rhs_flux = in_acc + data_terms;
    Ok(EnergyReport {
        times,
        energy,
        outflow_cum,
        inflow_cum,
        lhs_state,
        rhs_state,
        c_energy,
        lhs_flux,
        rhs_flux,
        slack_flux: rhs_flux - lhs_flux,
    })
}

/// Free-decay balance: with `sigma = k = 0`, `F = 0`, `g = 0`, the rate field
/// obeys `E(t) - E(0) <= -outflow(0..t)` step by step (upwind dissipation only
/// strengthens it). Returns the worst signed violation, normalized by `E(0)`.
pub fn dissipation_residual(problem: &TransportProblem, traj: &Trajectory) -> f64 {
    let snapshots = traj.snapshots.as_ref().expect("need snapshots");
    let quad = &problem.quadrature;
    let grid = &problem.grid;
    let faces = grid.faces();
    let mut rates: Vec<Array2<f64>> = Vec::with_capacity(traj.steps);
    for n in 0..traj.steps {
        rates.push((&snapshots[n + 1] - &snapshots[n]) / traj.dt);
    }
    let e0 = norms::l2_xv_sq(&rates[0], grid, quad);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut cum_out = 0.0;
    for n in 0..traj.steps - 1 {
        // outflow of the rate field at level n, by forward trace differences
        let mut out = 0.0;
        for (fi, face) in faces.iter().enumerate() {
            for (q, node) in quad.nodes.iter().enumerate() {
                let speed = face.outward_speed(node.v);
                if speed > 0.0 {
                    let w = (traj.traces[n + 1][[q, fi]] - traj.traces[n][[q, fi]]) / traj.dt;
                    out += speed * node.weight * face.area * w * w * traj.dt;
                }
            }
        }
        cum_out += out;
        let e = norms::l2_xv_sq(&rates[n + 1], grid, quad);
        worst = worst.max(e - e0 + cum_out);
    }
    worst / e0.max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpatialBox;
    use crate::partition::{VelocityDomain, VelocityPartition};
    use crate::quadrature::VelocityQuadrature;
    use crate::transport::{
        solve_forward, Coefficients, InflowData, SolveOptions, SourceTerm, SpatialGrid,
    };
    use std::sync::Arc;

    fn quadrant_partition() -> VelocityPartition {
        VelocityPartition::build(VelocityDomain::new(2, 1.0, 2.0).unwrap(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap()
    }

    fn base_problem(nx: usize, steps: usize) -> (TransportProblem, VelocityPartition) {
        let p = quadrant_partition();
        let quad = Arc::new(VelocityQuadrature::build(&p, 1, 2, 1));
        let grid = SpatialGrid::new(SpatialBox::unit(2), nx).unwrap();
        let (nq, nxt) = (quad.len(), grid.cell_count());
        let dt = 1.0 / (quad.max_speed() * (1.0 / grid.h[0] + 1.0 / grid.h[1]));
        let problem = TransportProblem {
            grid,
            coefficients: Coefficients {
                sigma: Array2::from_elem((nq, nxt), 0.3),
                kernel: None,
                bound_m: 5.0,
            },
            initial: Array2::zeros((nq, nxt)),
            inflow: InflowData::Zero,
            source: SourceTerm::Zero,
            dt,
            steps,
            quadrature: quad,
        };
        (problem, p)
    }

    #[test]
    fn weight_is_linear_and_rate_positive() {
        let p = quadrant_partition();
        let kappa = p.kappa_min().unwrap();
        let w = CarlemanWeights::new(&p, kappa / 2.0).unwrap();
        for j in 0..4 {
            assert_eq!(w.phi(j, [0.0; 3], 0.0), 0.0);
            // time slope is exactly -beta
            let d = (w.phi(j, [0.3, 0.4, 0.0], 1e-3) - w.phi(j, [0.3, 0.4, 0.0], 0.0)) / 1e-3;
            assert!((d + w.beta).abs() < 1e-10);
        }
        // B >= kappa_j - beta > 0 at the quadrature nodes
        let quad = VelocityQuadrature::build(&p, 2, 3, 1);
        let mut min_rate = f64::INFINITY;
        for node in &quad.nodes {
            min_rate = min_rate.min(w.transport_rate(node.cell, node.v));
        }
        assert!(min_rate >= kappa - w.beta - 1e-12);
        assert!(min_rate > 0.0);

        assert!(matches!(
            CarlemanWeights::new(&p, kappa * 1.5),
            Err(CarlemanError::InadmissibleBeta { .. })
        ));
    }

    #[test]
    fn cutoff_plateaus_and_total_variation() {
        let c = CutOff::new(8.0, 1.0).unwrap();
        assert_eq!(c.value(0.0), 1.0);
        assert_eq!(c.value(8.0), 0.0);
        assert_eq!(c.value(6.0), 1.0);
        assert_eq!(c.value(7.0), 0.0);
        assert_eq!(c.derivative(5.9), 0.0);
        assert_eq!(c.derivative(7.1), 0.0);
        // |chi'| <= 15 / (8 delta), attained mid-ramp
        let mut max_d: f64 = 0.0;
        let mut tv = 0.0;
        let n = 20000;
        for i in 0..n {
            let t = 8.0 * i as f64 / n as f64;
            let d = c.derivative(t);
            max_d = max_d.max(d.abs());
            tv += d.abs() * 8.0 / n as f64;
        }
        assert!(max_d <= c.derivative_bound() + 1e-12);
        assert!((max_d - c.derivative_bound()).abs() < 1e-3);
        // monotone ramp from 1 to 0 has total variation 1
        assert!((tv - 1.0).abs() < 1e-3);
        assert!(CutOff::new(8.0, 4.0).is_err());
    }

    #[test]
    fn zero_fields_give_zero_terms() {
        let (problem, p) = base_problem(6, 8);
        let w = CarlemanWeights::new(&p, 0.5).unwrap();
        let (nq, nx) = problem.state_shape();
        let z: Vec<Array2<f64>> = (0..=8).map(|_| Array2::zeros((nq, nx))).collect();
        let r = carleman_sides(&problem, &w, &z, &|_, _, _| 0.0, 3.0).unwrap();
        assert_eq!(r.lhs_init, 0.0);
        assert_eq!(r.lhs_bulk, 0.0);
        assert_eq!(r.rhs_interior, 0.0);
        assert_eq!(r.rhs_boundary, 0.0);
        assert_eq!(r.c_req, 0.0);
    }

    #[test]
    fn s_zero_kills_the_explicit_prefactors() {
        let (mut problem, p) = base_problem(6, 8);
        let (nq, nx) = problem.state_shape();
        for q in 0..nq {
            for x in 0..nx {
                let c = problem.grid.cell_center(x);
                problem.initial[[q, x]] = (c[0] * 3.1).sin() + 1.5;
            }
        }
        let w = CarlemanWeights::new(&p, 0.5).unwrap();
        let mut z: Vec<Array2<f64>> = (0..=8)
            .map(|k| &problem.initial * ((8 - k) as f64 / 8.0))
            .collect();
        z[8].fill(0.0);
        let r = carleman_sides(&problem, &w, &z, &|_, _, _| 0.0, 0.0).unwrap();
        assert_eq!(r.lhs_init, 0.0);
        assert_eq!(r.lhs_bulk, 0.0);
        assert_eq!(r.rhs_boundary, 0.0);
        assert!(r.rhs_interior > 0.0);
        assert_eq!(r.c_req, 0.0);
    }

    #[test]
    fn nonvanishing_terminal_slice_rejected() {
        let (problem, p) = base_problem(6, 4);
        let w = CarlemanWeights::new(&p, 0.5).unwrap();
        let (nq, nx) = problem.state_shape();
        let z: Vec<Array2<f64>> = (0..=4).map(|_| Array2::from_elem((nq, nx), 1.0)).collect();
        assert!(matches!(
            carleman_sides(&problem, &w, &z, &|_, _, _| 0.0, 1.0),
            Err(CarlemanError::FieldNotVanishingAtT(_))
        ));
    }

    #[test]
    fn streaming_scan_matches_stored_evaluation() {
        let (mut problem, p) = base_problem(8, 24);
        let (nq, nx) = problem.state_shape();
        for q in 0..nq {
            for x in 0..nx {
                let c = problem.grid.cell_center(x);
                problem.initial[[q, x]] = 0.5
                    + (-((c[0] - 0.5).powi(2) + (c[1] - 0.4).powi(2)) / 0.03).exp();
            }
        }
        let geo_t = problem.horizon();
        let cutoff = CutOff::new(geo_t, 4.0 * problem.dt).unwrap();
        let w = CarlemanWeights::new(&p, 0.5).unwrap();
        let s_values = [1.0, 5.0, 17.0];
        let scan = carleman_scan(&problem, &w, &cutoff, &s_values).unwrap();

        // stored route
        let traj = solve_forward(
            &problem,
            SolveOptions {
                store_snapshots: true,
            },
        )
        .unwrap();
        let snaps = traj.snapshots.as_ref().unwrap();
        let mut z: Vec<Array2<f64>> = Vec::new();
        for n in 0..problem.steps {
            let chi = cutoff.value(n as f64 * problem.dt);
            z.push((&snaps[n + 1] - &snaps[n]).mapv(|v| v) * (chi / problem.dt));
        }
        z.push(Array2::zeros((nq, nx)));
        for (k, &s) in s_values.iter().enumerate() {
            let r = carleman_sides(&problem, &w, &z, &|_, _, _| 0.0, s).unwrap();
            for (a, b) in [
                (r.lhs_init, scan[k].lhs_init),
                (r.lhs_bulk, scan[k].lhs_bulk),
                (r.rhs_interior, scan[k].rhs_interior),
                (r.rhs_boundary, scan[k].rhs_boundary),
            ] {
                let rel = (a - b).abs() / a.abs().max(1e-300);
                assert!(rel < 1e-10, "term mismatch at s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn weighted_integrals_stay_finite_for_huge_s() {
        let (mut problem, p) = base_problem(6, 12);
        let (nq, nx) = problem.state_shape();
        for q in 0..nq {
            for x in 0..nx {
                problem.initial[[q, x]] = 1.0 + problem.grid.cell_center(x)[0];
            }
        }
        let cutoff = CutOff::new(problem.horizon(), 3.0 * problem.dt).unwrap();
        let w = CarlemanWeights::new(&p, 0.5).unwrap();
        let scan = carleman_scan(&problem, &w, &cutoff, &[100.0]).unwrap();
        let r = &scan[0];
        assert!(r.ln_lhs_bulk.is_finite() || r.lhs_bulk == 0.0);
        assert!(r.ln_rhs_interior.is_finite());
        assert!(r.c_req.is_finite());
    }

    #[test]
    fn free_decay_dissipation_identity() {
        let (mut problem, _) = base_problem(12, 160);
        problem.coefficients.sigma.fill(0.0);
        let (nq, nx) = problem.state_shape();
        for q in 0..nq {
            for x in 0..nx {
                let c = problem.grid.cell_center(x);
                problem.initial[[q, x]] =
                    (-((c[0] - 0.5).powi(2) + (c[1] - 0.5).powi(2)) / 0.02).exp();
            }
        }
        let traj = solve_forward(
            &problem,
            SolveOptions {
                store_snapshots: true,
            },
        )
        .unwrap();
        let worst = dissipation_residual(&problem, &traj);
        assert!(worst <= 1e-10, "balance violated by {worst}");
    }
}
