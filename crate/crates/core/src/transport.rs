//! Forward transport solver: first-order upwind in space, explicit Euler in
//! time, collision term as a weighted quadrature sum, inflow data imposed
//! strongly on upwind ghost values.
//!
//! The update is written as a convex combination of the current state and its
//! upwind neighbours, which is what makes the scheme monotone (and hence
//! positivity-preserving) under the CFL condition.

use crate::geometry::{SpatialBox, Vec3};
use crate::quadrature::VelocityQuadrature;
use crate::recipes::TimeProfile;
use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("grid needs at least one cell per axis")]
    EmptyGrid,
    #[error("CFL violated: dt * max|v| * sum(1/h) = {value} > 1 (dt={dt})")]
    CflViolation { dt: f64, value: f64 },
    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("coefficient bound violated: {0}")]
    CoefficientBound(String),
}

/// Uniform cell-centered grid on an axis-aligned box.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    pub domain: SpatialBox,
    pub dim: usize,
    pub n: [usize; 3],
    pub h: [f64; 3],
    strides: [usize; 3],
    face_base: [[usize; 2]; 3],
    face_total: usize,
}

impl SpatialGrid {
    /// Equal cell count per axis.
    pub fn new(domain: SpatialBox, cells_per_axis: usize) -> Result<Self, TransportError> {
        let dim = domain.dim;
        Self::with_counts(domain, &vec![cells_per_axis; dim])
    }

    pub fn with_counts(domain: SpatialBox, counts: &[usize]) -> Result<Self, TransportError> {
        let dim = domain.dim;
        if counts.len() != dim || counts.iter().any(|&c| c == 0) {
            return Err(TransportError::EmptyGrid);
        }
        let mut n = [1usize; 3];
        let mut h = [1.0f64; 3];
        for d in 0..dim {
            n[d] = counts[d];
            h[d] = domain.extent(d) / counts[d] as f64;
            if !(h[d] > 0.0) {
                return Err(TransportError::EmptyGrid);
            }
        }
        let strides = [1, n[0], n[0] * n[1]];
        let mut face_base = [[0usize; 2]; 3];
        let mut acc = 0usize;
        let total = n[0] * n[1] * n[2];
        for d in 0..dim {
            for s in 0..2 {
                face_base[d][s] = acc;
                acc += total / n[d];
            }
        }
        Ok(Self {
            domain,
            dim,
            n,
            h,
            strides,
            face_base,
            face_total: acc,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|d| self.h[d]).product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn coords(&self, flat: usize) -> [usize; 3] {
        [
            flat % self.n[0],
            (flat / self.n[0]) % self.n[1],
            flat / (self.n[0] * self.n[1]),
        ]
    }

    pub fn flat(&self, c: [usize; 3]) -> usize {
        c[0] + self.n[0] * (c[1] + self.n[1] * c[2])
    }

    pub fn cell_center(&self, flat: usize) -> Vec3 {
        let c = self.coords(flat);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = self.domain.lo[d] + (c[d] as f64 + 0.5) * self.h[d];
        }
        x
    }

    pub fn face_count(&self) -> usize {
        self.face_total
    }

    /// Index of the boundary face touching cell `coords` on `axis`;
    /// `side` is 0 for the low face, 1 for the high face.
    pub fn face_index(&self, axis: usize, side: usize, coords: [usize; 3]) -> usize {
        let mut tang = 0usize;
        let mut mult = 1usize;
        for d in 0..self.dim {
            if d == axis {
                continue;
            }
            tang += coords[d] * mult;
            mult *= self.n[d];
        }
        self.face_base[axis][side] + tang
    }

    /// Boundary faces in index order.
    pub fn faces(&self) -> Vec<BoundaryFace> {
        let mut out = Vec::with_capacity(self.face_total);
        for axis in 0..self.dim {
            for side in 0..2 {
                let mut coords = [0usize; 3];
                coords[axis] = if side == 0 { 0 } else { self.n[axis] - 1 };
                loop {
                    let mut center = self.cell_center(self.flat(coords));
                    center[axis] = if side == 0 {
                        self.domain.lo[axis]
                    } else {
                        self.domain.hi[axis]
                    };
                    let area: f64 = (0..self.dim)
                        .filter(|&d| d != axis)
                        .map(|d| self.h[d])
                        .product();
                    out.push(BoundaryFace {
                        axis,
                        side,
                        cell: self.flat(coords),
                        center,
                        area,
                    });
                    // odometer over the tangential axes, first other axis fastest
                    let mut advanced = false;
                    for d in 0..self.dim {
                        if d == axis {
                            continue;
                        }
                        coords[d] += 1;
                        if coords[d] < self.n[d] {
                            advanced = true;
                            break;
                        }
                        coords[d] = 0;
                    }
                    if !advanced {
                        break;
                    }
                }
            }
        }
        debug_assert_eq!(out.len(), self.face_total);
        out
    }
}

/// One boundary face with its adjacent interior cell.
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub axis: usize,
    pub side: usize,
    pub cell: usize,
    pub center: Vec3,
    pub area: f64,
}

impl BoundaryFace {
    /// Outward normal component of a node velocity, `v . nu`.
    pub fn outward_speed(&self, v: Vec3) -> f64 {
        if self.side == 0 {
            -v[self.axis]
        } else {
            v[self.axis]
        }
    }
}

/// Absorption and scattering coefficients on the discrete phase space.
#[derive(Debug, Clone)]
pub struct Coefficients {
    /// `sigma[q, x]`
    pub sigma: Array2<f64>,
    /// `kernel[q, q', x]`; `None` means no scattering.
    pub kernel: Option<Array3<f64>>,
    /// Sup-norm budget `M` for both coefficients.
    pub bound_m: f64,
}

impl Coefficients {
    pub fn validate(&self) -> Result<(), TransportError> {
        let m = self.bound_m;
        if self.sigma.iter().any(|&s| !(0.0..=m).contains(&s)) {
            return Err(TransportError::CoefficientBound(format!(
                "sigma outside [0, {m}]"
            )));
        }
        if let Some(k) = &self.kernel {
            if k.iter().any(|&v| !(0.0..=m).contains(&v)) {
                return Err(TransportError::CoefficientBound(format!(
                    "kernel outside [0, {m}]"
                )));
            }
        }
        Ok(())
    }
}

type GhostFn = Arc<dyn Fn(usize, usize, f64) -> f64 + Send + Sync>;

/// Inflow data `g(face, v, t)`, imposed on upwind ghost values.
#[derive(Clone)]
pub enum InflowData {
    Zero,
    /// `g[q, face]`, constant in time.
    Static(Array2<f64>),
    /// `g[q, face] * profile(t)`.
    Scaled {
        spatial: Array2<f64>,
        profile: TimeProfile,
    },
    /// Fully general `g(q, face, t)`.
    Callback(GhostFn),
}

impl InflowData {
    #[inline]
    pub fn value(&self, q: usize, face: usize, t: f64) -> f64 {
        match self {
            InflowData::Zero => 0.0,
            InflowData::Static(g) => g[[q, face]],
            InflowData::Scaled { spatial, profile } => spatial[[q, face]] * profile.value(t),
            InflowData::Callback(f) => f(q, face, t),
        }
    }

    pub fn is_static_in_time(&self) -> bool {
        matches!(self, InflowData::Zero | InflowData::Static(_))
    }
}

impl std::fmt::Debug for InflowData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InflowData::Zero => write!(f, "InflowData::Zero"),
            InflowData::Static(_) => write!(f, "InflowData::Static"),
            InflowData::Scaled { profile, .. } => write!(f, "InflowData::Scaled({profile:?})"),
            InflowData::Callback(_) => write!(f, "InflowData::Callback"),
        }
    }
}

type SourceFn = Arc<dyn Fn(usize, usize, f64) -> f64 + Send + Sync>;

/// Time factor `R(x, v, t)` of a separable source `F = f * R`.
#[derive(Clone)]
pub enum SourceFactor {
    One,
    Profile(TimeProfile),
    /// `R` sampled per time level (used for subtracted twin systems,
    /// where `R = -u^2` lives on the solver's own time grid).
    Snapshots {
        values: Arc<Vec<Array2<f64>>>,
        scale: f64,
    },
    Callback(SourceFn),
}

impl std::fmt::Debug for SourceFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceFactor::One => write!(f, "SourceFactor::One"),
            SourceFactor::Profile(p) => write!(f, "SourceFactor::Profile({p:?})"),
            SourceFactor::Snapshots { scale, .. } => {
                write!(f, "SourceFactor::Snapshots(scale={scale})")
            }
            SourceFactor::Callback(_) => write!(f, "SourceFactor::Callback"),
        }
    }
}

/// Internal source `F(x, v, t) = f(x, v) * R(x, v, t)`.
#[derive(Debug, Clone)]
pub enum SourceTerm {
    Zero,
    Separable { f: Array2<f64>, r: SourceFactor },
}

impl SourceTerm {
    /// Write `F` at time level `level` (time `t`) into `buf`.
    pub fn fill_level(&self, level: usize, t: f64, buf: &mut Array2<f64>) {
        match self {
            SourceTerm::Zero => buf.fill(0.0),
            SourceTerm::Separable { f, r } => match r {
                SourceFactor::One => buf.assign(f),
                SourceFactor::Profile(p) => {
                    let s = p.value(t);
                    buf.assign(f);
                    buf.mapv_inplace(|v| v * s);
                }
                SourceFactor::Snapshots { values, scale } => {
                    let u = &values[level.min(values.len() - 1)];
                    ndarray::Zip::from(buf)
                        .and(f)
                        .and(u)
                        .for_each(|b, &fv, &uv| *b = fv * uv * scale);
                }
                SourceFactor::Callback(cb) => {
                    for ((q, x), b) in buf.indexed_iter_mut() {
                        *b = f[[q, x]] * cb(q, x, t);
                    }
                }
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SourceTerm::Zero)
    }
}

/// A fully specified discrete transport problem.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub grid: SpatialGrid,
    pub quadrature: Arc<VelocityQuadrature>,
    pub coefficients: Coefficients,
    /// `a[q, x]`
    pub initial: Array2<f64>,
    pub inflow: InflowData,
    pub source: SourceTerm,
    pub dt: f64,
    pub steps: usize,
}

impl TransportProblem {
    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn state_shape(&self) -> (usize, usize) {
        (self.quadrature.len(), self.grid.cell_count())
    }

    /// `dt * max|v| * sum_d 1/h_d`, must be `<= 1`.
    pub fn cfl_number(&self) -> f64 {
        let inv_h: f64 = (0..self.grid.dim).map(|d| 1.0 / self.grid.h[d]).sum();
        self.dt * self.quadrature.max_speed() * inv_h
    }

    pub fn check_cfl(&self) -> Result<(), TransportError> {
        let value = self.cfl_number();
        if value > 1.0 + 1e-12 {
            return Err(TransportError::CflViolation { dt: self.dt, value });
        }
        Ok(())
    }

    /// Whether initial and inflow data agree at `t = 0` on the inflow
    /// boundary; a mismatch is legal but worth surfacing.
    pub fn compatibility_gap(&self) -> f64 {
        let faces = self.grid.faces();
        let mut gap = 0.0f64;
        for (fi, face) in faces.iter().enumerate() {
            for (q, node) in self.quadrature.nodes.iter().enumerate() {
                if face.outward_speed(node.v) < 0.0 {
                    let g = self.inflow.value(q, fi, 0.0);
                    gap = gap.max((g - self.initial[[q, face.cell]]).abs());
                }
            }
        }
        gap
    }
}

/// Discrete solution path: snapshots (optional), boundary traces, and their
/// backward time differences.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub steps: usize,
    /// `K + 1` levels of `u[q, x]`, present if requested.
    pub snapshots: Option<Vec<Array2<f64>>>,
    /// `K + 1` levels of boundary traces `[q, face]`: the face-adjacent
    /// upwind state (interior cell on the outflow side, inflow data on the
    /// inflow side, zero on the tangent set).
    pub traces: Vec<Array2<f64>>,
    /// Backward differences of `traces`; level 0 is zero.
    pub dt_traces: Vec<Array2<f64>>,
    /// Per-level minimum of the state, for positivity-floor checks.
    pub level_min: Vec<f64>,
}

impl Trajectory {
    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn final_state(&self) -> Option<&Array2<f64>> {
        self.snapshots.as_ref().map(|s| s.last().unwrap())
    }

    /// Minimum of the state over levels with `t <= t_max`.
    pub fn min_until(&self, t_max: f64) -> f64 {
        self.level_min
            .iter()
            .enumerate()
            .filter(|(k, _)| *k as f64 * self.dt <= t_max + 1e-12)
            .map(|(_, &m)| m)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    pub store_snapshots: bool,
}

struct NodeCoef {
    coef: [f64; 3],
    positive: [bool; 3],
    base_diag: f64,
}

fn node_coefs(problem: &TransportProblem) -> Vec<NodeCoef> {
    let grid = &problem.grid;
    problem
        .quadrature
        .nodes
        .iter()
        .map(|node| {
            let mut coef = [0.0; 3];
            let mut positive = [false; 3];
            let mut total = 0.0;
            for d in 0..grid.dim {
                coef[d] = node.v[d].abs() * problem.dt / grid.h[d];
                positive[d] = node.v[d] > 0.0;
                total += coef[d];
            }
            NodeCoef {
                coef,
                positive,
                base_diag: 1.0 - total,
            }
        })
        .collect()
}

/// One explicit upwind Euler step; `coll` and `force` are the collision and
/// source fields at the current level (may be empty arrays when absent).
#[allow(clippy::too_many_arguments)]
fn step_forward(
    problem: &TransportProblem,
    coefs: &[NodeCoef],
    u: &Array2<f64>,
    coll: Option<&Array2<f64>>,
    force: Option<&Array2<f64>>,
    t: f64,
    out: &mut Array2<f64>,
) {
    let grid = &problem.grid;
    let nx = grid.cell_count();
    let dt = problem.dt;
    let dim = grid.dim;
    let n = grid.n;
    let sx = grid.stride(0);
    let sy = grid.stride(1);
    let sz = grid.stride(2);
    let u_flat = u.as_slice().unwrap();
    let sigma_flat = problem.coefficients.sigma.as_slice().unwrap();
    let coll_flat = coll.map(|c| c.as_slice().unwrap());
    let force_flat = force.map(|f| f.as_slice().unwrap());
    let inflow = &problem.inflow;

    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(nx)
        .enumerate()
        .for_each(|(q, row_out)| {
            let nc = &coefs[q];
            let row = &u_flat[q * nx..(q + 1) * nx];
            let sigma_row = &sigma_flat[q * nx..(q + 1) * nx];
            let strides = [sx, sy, sz];
            let mut x = 0usize;
            for i2 in 0..n[2] {
                for i1 in 0..n[1] {
                    for i0 in 0..n[0] {
                        let coords = [i0, i1, i2];
                        let mut acc = (nc.base_diag - dt * sigma_row[x]) * row[x];
                        for d in 0..dim {
                            let c = nc.coef[d];
                            if c == 0.0 {
                                continue;
                            }
                            let nb = if nc.positive[d] {
                                if coords[d] > 0 {
                                    row[x - strides[d]]
                                } else {
                                    inflow.value(q, grid.face_index(d, 0, coords), t)
                                }
                            } else if coords[d] + 1 < n[d] {
                                row[x + strides[d]]
                            } else {
                                inflow.value(q, grid.face_index(d, 1, coords), t)
                            };
                            acc += c * nb;
                        }
                        if let Some(cf) = coll_flat {
                            acc += dt * cf[q * nx + x];
                        }
                        if let Some(ff) = force_flat {
                            acc += dt * ff[q * nx + x];
                        }
                        row_out[x] = acc;
                        x += 1;
                    }
                }
            }
        });
}

/// One forward step `u -> (I - dt L) u + dt (coll + force)`, using the
/// problem's inflow data as ghost values at time `t`. Building block for the
/// solver loop and for transpose verification.
pub fn apply_forward_step(
    problem: &TransportProblem,
    u: &Array2<f64>,
    coll: Option<&Array2<f64>>,
    force: Option<&Array2<f64>>,
    t: f64,
    out: &mut Array2<f64>,
) {
    let coefs = node_coefs(problem);
    step_forward(problem, &coefs, u, coll, force, t, out);
}

/// Collision term `(K u)(x, v_q) = sum_q' k[q, q', x] w_q' u[q', x]`.
pub fn collision_apply(
    kernel: &Array3<f64>,
    quad: &VelocityQuadrature,
    u: &Array2<f64>,
    out: &mut Array2<f64>,
) {
    let nq = quad.len();
    let nx = u.shape()[1];
    out.fill(0.0);
    let u_flat = u.as_slice().unwrap();
    let k_flat = kernel.as_slice().unwrap();
    out.as_slice_mut()
        .unwrap()
        .par_chunks_mut(nx)
        .enumerate()
        .for_each(|(q, row_out)| {
            for qp in 0..nq {
                let w = quad.nodes[qp].weight;
                let krow = &k_flat[(q * nq + qp) * nx..(q * nq + qp + 1) * nx];
                let urow = &u_flat[qp * nx..(qp + 1) * nx];
                for x in 0..nx {
                    row_out[x] += krow[x] * w * urow[x];
                }
            }
        });
}

/// Same sum re-associated cell block by cell block; agrees with
/// [`collision_apply`] to roundoff and exists so the coupled-system grouping
/// can be verified directly.
pub fn collision_apply_blocked(
    kernel: &Array3<f64>,
    quad: &VelocityQuadrature,
    u: &Array2<f64>,
    out: &mut Array2<f64>,
) {
    let nx = u.shape()[1];
    out.fill(0.0);
    for q in 0..quad.len() {
        for cell in 0..quad.cell_count {
            let mut block = Array1::<f64>::zeros(nx);
            for qp in quad.cell_nodes(cell) {
                let w = quad.nodes[qp].weight;
                for x in 0..nx {
                    block[x] += kernel[[q, qp, x]] * w * u[[qp, x]];
                }
            }
            for x in 0..nx {
                out[[q, x]] += block[x];
            }
        }
    }
}

fn record_traces(
    problem: &TransportProblem,
    faces: &[BoundaryFace],
    u: &Array2<f64>,
    t: f64,
) -> Array2<f64> {
    let nq = problem.quadrature.len();
    let mut tr = Array2::zeros((nq, faces.len()));
    for (fi, face) in faces.iter().enumerate() {
        for q in 0..nq {
            let speed = face.outward_speed(problem.quadrature.nodes[q].v);
            tr[[q, fi]] = if speed > 0.0 {
                u[[q, face.cell]]
            } else if speed < 0.0 {
                problem.inflow.value(q, fi, t)
            } else {
                0.0
            };
        }
    }
    tr
}

/// March the problem from `t = 0` to `t = steps * dt`.
pub fn solve_forward(
    problem: &TransportProblem,
    options: SolveOptions,
) -> Result<Trajectory, TransportError> {
    problem.check_cfl()?;
    problem.coefficients.validate()?;
    let (nq, nx) = problem.state_shape();
    if problem.initial.dim() != (nq, nx) {
        return Err(TransportError::ShapeMismatch(format!(
            "initial data is {:?}, expected ({nq}, {nx})",
            problem.initial.dim()
        )));
    }
    let faces = problem.grid.faces();
    let coefs = node_coefs(problem);
    let mut u = problem.initial.clone();
    let mut u_next = Array2::zeros((nq, nx));
    let mut coll = problem
        .coefficients
        .kernel
        .as_ref()
        .map(|_| Array2::zeros((nq, nx)));
    let mut force = if problem.source.is_zero() {
        None
    } else {
        Some(Array2::zeros((nq, nx)))
    };

    let mut snapshots = options.store_snapshots.then(Vec::new);
    let mut traces = Vec::with_capacity(problem.steps + 1);
    let mut level_min = Vec::with_capacity(problem.steps + 1);

    for step in 0..=problem.steps {
        let t = step as f64 * problem.dt;
        traces.push(record_traces(problem, &faces, &u, t));
        level_min.push(u.iter().cloned().fold(f64::INFINITY, f64::min));
        if let Some(s) = snapshots.as_mut() {
            s.push(u.clone());
        }
        if step == problem.steps {
            break;
        }
        if let (Some(c), Some(k)) = (coll.as_mut(), problem.coefficients.kernel.as_ref()) {
            collision_apply(k, &problem.quadrature, &u, c);
        }
        if let Some(f) = force.as_mut() {
            problem.source.fill_level(step, t, f);
        }
        step_forward(
            problem,
            &coefs,
            &u,
            coll.as_ref(),
            force.as_ref(),
            t,
            &mut u_next,
        );
        std::mem::swap(&mut u, &mut u_next);
        if !u.iter().all(|v| v.is_finite()) {
            return Err(TransportError::NonFiniteState { step });
        }
    }

    let mut dt_traces = Vec::with_capacity(problem.steps + 1);
    dt_traces.push(Array2::zeros((nq, faces.len())));
    for k in 1..=problem.steps {
        dt_traces.push((&traces[k] - &traces[k - 1]) / problem.dt);
    }

    Ok(Trajectory {
        dt: problem.dt,
        steps: problem.steps,
        snapshots,
        traces,
        dt_traces,
        level_min,
    })
}

/// Apply the discrete transport operator `P u + sigma u - K u` at one time
/// level, with the same stencils as the solver. `ghost` supplies upwind
/// boundary values (for the plain residual that is the inflow data).
pub fn apply_operator_level(
    problem: &TransportProblem,
    u_n: &Array2<f64>,
    u_np1: &Array2<f64>,
    ghost: &dyn Fn(usize, usize) -> f64,
    out: &mut Array2<f64>,
) {
    let grid = &problem.grid;
    let nx = grid.cell_count();
    let nq = problem.quadrature.len();
    let dt = problem.dt;
    let n = grid.n;
    let strides = [grid.stride(0), grid.stride(1), grid.stride(2)];
    let mut coll = Array2::zeros((nq, nx));
    if let Some(k) = problem.coefficients.kernel.as_ref() {
        collision_apply(k, &problem.quadrature, u_n, &mut coll);
    }
    for q in 0..nq {
        let v = problem.quadrature.nodes[q].v;
        let mut x = 0usize;
        for i2 in 0..n[2] {
            for i1 in 0..n[1] {
                for i0 in 0..n[0] {
                    let coords = [i0, i1, i2];
                    let mut acc = (u_np1[[q, x]] - u_n[[q, x]]) / dt
                        + problem.coefficients.sigma[[q, x]] * u_n[[q, x]]
                        - coll[[q, x]];
                    for d in 0..grid.dim {
                        if v[d] == 0.0 {
                            continue;
                        }
                        let diff = if v[d] > 0.0 {
                            let nb = if coords[d] > 0 {
                                u_n[[q, x - strides[d]]]
                            } else {
                                ghost(q, grid.face_index(d, 0, coords))
                            };
                            (u_n[[q, x]] - nb) / grid.h[d]
                        } else {
                            let nb = if coords[d] + 1 < n[d] {
                                u_n[[q, x + strides[d]]]
                            } else {
                                ghost(q, grid.face_index(d, 1, coords))
                            };
                            (nb - u_n[[q, x]]) / grid.h[d]
                        };
                        acc += v[d] * diff;
                    }
                    out[[q, x]] = acc;
                    x += 1;
                }
            }
        }
    }
}

/// Residual of the discrete equation on a stored solution path:
/// `P u + sigma u - K u - F` per level. Zero (to roundoff) on solver output.
pub fn residual(problem: &TransportProblem, states: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let (nq, nx) = problem.state_shape();
    let mut out = Vec::with_capacity(states.len().saturating_sub(1));
    let mut force = Array2::zeros((nq, nx));
    for k in 0..states.len().saturating_sub(1) {
        let t = k as f64 * problem.dt;
        let mut level = Array2::zeros((nq, nx));
        apply_operator_level(
            problem,
            &states[k],
            &states[k + 1],
            &|q, f| problem.inflow.value(q, f, t),
            &mut level,
        );
        if !problem.source.is_zero() {
            problem.source.fill_level(k, t, &mut force);
            level -= &force;
        }
        out.push(level);
    }
    out
}

/// Weighted boundary data norms of a trajectory: `d0` is the outflow-trace
/// time-derivative norm, `d` adds the per-cell initial-data norms.
#[derive(Debug, Clone, Copy)]
pub struct DataNorm {
    pub d0: f64,
    pub init_terms: f64,
    pub d: f64,
}

/// `d0^2 = sum_i int_0^T int_{Gamma_+^i} (w_i . nu) |dt u_i|^2 dS dv dt`
/// by face quadrature, plus the summed per-cell initial-data norms.
pub fn outflow_data_norm(
    problem: &TransportProblem,
    traj: &Trajectory,
    initial: &Array2<f64>,
) -> DataNorm {
    let faces = problem.grid.faces();
    let quad = &problem.quadrature;
    let mut d0_sq = 0.0;
    for k in 1..=traj.steps {
        let tr = &traj.dt_traces[k];
        for (fi, face) in faces.iter().enumerate() {
            for (q, node) in quad.nodes.iter().enumerate() {
                let speed = face.outward_speed(node.v);
                if speed > 0.0 {
                    d0_sq += speed * node.weight * face.area * tr[[q, fi]] * tr[[q, fi]] * traj.dt;
                }
            }
        }
    }
    let init_terms = crate::norms::per_cell_l2(initial, &problem.grid, quad)
        .iter()
        .sum::<f64>()
        + crate::norms::per_cell_grad_l2(initial, &problem.grid, quad)
            .iter()
            .sum::<f64>();
    let d0 = d0_sq.max(0.0).sqrt();
    DataNorm {
        d0,
        init_terms,
        d: d0 + init_terms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{VelocityDomain, VelocityPartition};

    fn small_problem(nx: usize, sigma: f64) -> TransportProblem {
        let p = VelocityPartition::build(VelocityDomain::new(2, 1.0, 2.0).unwrap(), &[4])
            .unwrap()
            .select_gammas();
        let quad = Arc::new(VelocityQuadrature::build(&p, 1, 2, 1));
        let grid = SpatialGrid::new(SpatialBox::unit(2), nx).unwrap();
        let nq = quad.len();
        let nxt = grid.cell_count();
        let dt = 0.9 / (quad.max_speed() * (1.0 / grid.h[0] + 1.0 / grid.h[1]));
        TransportProblem {
            grid,
            coefficients: Coefficients {
                sigma: Array2::from_elem((nq, nxt), sigma),
                kernel: None,
                bound_m: 10.0,
            },
            initial: Array2::zeros((nq, nxt)),
            inflow: InflowData::Zero,
            source: SourceTerm::Zero,
            dt,
            steps: 32,
            quadrature: quad,
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let problem = small_problem(8, 0.0);
        let traj = solve_forward(&problem, SolveOptions::default()).unwrap();
        assert!(traj.traces.iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert_eq!(traj.level_min.iter().cloned().fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn cfl_violation_detected() {
        let mut problem = small_problem(8, 0.0);
        problem.dt *= 2.0;
        match solve_forward(&problem, SolveOptions::default()) {
            Err(TransportError::CflViolation { .. }) => {}
            other => panic!("expected CflViolation, got {other:?}"),
        }
    }

    #[test]
    fn face_indexing_is_consistent() {
        let grid = SpatialGrid::new(SpatialBox::unit(2), 5).unwrap();
        let faces = grid.faces();
        assert_eq!(faces.len(), 4 * 5);
        for (fi, face) in faces.iter().enumerate() {
            let coords = grid.coords(face.cell);
            assert_eq!(grid.face_index(face.axis, face.side, coords), fi);
        }
    }

    #[test]
    fn solver_output_has_zero_residual() {
        let mut problem = small_problem(8, 0.4);
        // non-trivial data: bump initial state, static inflow
        let (nq, nx) = problem.state_shape();
        for q in 0..nq {
            for x in 0..nx {
                let c = problem.grid.cell_center(x);
                problem.initial[[q, x]] =
                    1.0 + (-((c[0] - 0.4).powi(2) + (c[1] - 0.6).powi(2)) / 0.02).exp();
            }
        }
        problem.inflow = InflowData::Static(Array2::from_elem(
            (nq, problem.grid.face_count()),
            1.0,
        ));
        let traj = solve_forward(
            &problem,
            SolveOptions {
                store_snapshots: true,
            },
        )
        .unwrap();
        let res = residual(&problem, traj.snapshots.as_ref().unwrap());
        let max = res
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max < 1e-10, "residual {max}");
    }

    #[test]
    fn constants_are_steady_free_streaming_states() {
        let mut problem = small_problem(6, 0.0);
        let (nq, nx) = problem.state_shape();
        problem.initial = Array2::from_elem((nq, nx), 1.0);
        let states = vec![problem.initial.clone(), problem.initial.clone()];
        // ghost values equal to the constant state
        problem.inflow = InflowData::Static(Array2::from_elem(
            (nq, problem.grid.face_count()),
            1.0,
        ));
        let res = residual(&problem, &states);
        let max = res[0].iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max < 1e-13);
    }
}
