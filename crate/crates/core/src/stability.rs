//! Twin-experiment harness for the both-sided stability estimates, and a
//! projected-gradient reconstruction of the absorption coefficient from
//! outflow data that demonstrates the stability constructively.

use crate::adjoint::{misfit, solve_adjoint, TraceObservation};
use crate::norms;
use crate::transport::{
    outflow_data_norm, solve_forward, SolveOptions, SourceFactor, SourceTerm, Trajectory,
    TransportError, TransportProblem,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("positivity hypothesis violated: floor {floor} but minimum {min}")]
    PositivityViolated { floor: f64, min: f64 },
    #[error("observation horizon {t} too short, need T > {t_min}")]
    TimeTooShort { t: f64, t_min: f64 },
    #[error("coefficient bound exceeded: {0}")]
    BoundExceeded(String),
    #[error("ensemble has no record with a nonzero misfit norm")]
    DegenerateEnsemble,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Shared gates for the stability experiments.
#[derive(Debug, Clone, Copy)]
pub struct StabilityConfig {
    /// Sup-norm budget `M` for coefficients.
    pub bound_m: f64,
    /// Positivity floor `a0` for the initial value (coefficient problem) or
    /// the source factor at `t = 0` (source problem).
    pub positivity_floor: f64,
    /// Admissibility threshold from the partition.
    pub t_min: f64,
}

/// One measured stability data point: the unknown's misfit norm against the
/// boundary-data norm, with the initial-data terms of the subtracted system.
#[derive(Debug, Clone)]
pub struct StabilityRecord {
    pub label: String,
    pub lhs: f64,
    pub data_norm: f64,
    pub init_terms: f64,
    pub ratio_data_over_lhs: Option<f64>,
    pub ratio_lhs_over_data: Option<f64>,
}

impl StabilityRecord {
    fn new(label: String, lhs: f64, data_norm: f64, init_terms: f64) -> Self {
        let ratio_data_over_lhs = (lhs > 0.0).then(|| data_norm / lhs);
        let ratio_lhs_over_data = (data_norm > 0.0).then(|| lhs / data_norm);
        Self {
            label,
            lhs,
            data_norm,
            init_terms,
            ratio_data_over_lhs,
            ratio_lhs_over_data,
        }
    }
}

/// Result of one twin experiment; the trajectories are kept so callers can
/// run consistency checks (positivity floor, subtracted residual).
pub struct TwinOutcome {
    pub record: StabilityRecord,
    pub traj1: Trajectory,
    pub traj2: Trajectory,
}

fn check_sigma_bound(sigma: &Array2<f64>, m: f64, which: &str) -> Result<(), StabilityError> {
    let max = norms::linf(sigma);
    if max > m {
        return Err(StabilityError::BoundExceeded(format!(
            "|{which}|_inf = {max} > M = {m}"
        )));
    }
    Ok(())
}

/// Solve the same problem under two absorption coefficients with identical
/// initial and inflow data, and record both sides of the coefficient
/// stability estimate.
pub fn twin_experiment(
    base: &TransportProblem,
    sigma1: &Array2<f64>,
    sigma2: &Array2<f64>,
    config: &StabilityConfig,
    options: SolveOptions,
    label: &str,
) -> Result<TwinOutcome, StabilityError> {
    check_sigma_bound(sigma1, config.bound_m, "sigma1")?;
    check_sigma_bound(sigma2, config.bound_m, "sigma2")?;
    if let Some(k) = &base.coefficients.kernel {
        let max = k.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if max > config.bound_m {
            return Err(StabilityError::BoundExceeded(format!(
                "|k|_inf = {max} > M = {}",
                config.bound_m
            )));
        }
    }
    if base.horizon() <= config.t_min {
        return Err(StabilityError::TimeTooShort {
            t: base.horizon(),
            t_min: config.t_min,
        });
    }
    let a_min = base.initial.iter().cloned().fold(f64::INFINITY, f64::min);
    if a_min < config.positivity_floor {
        return Err(StabilityError::PositivityViolated {
            floor: config.positivity_floor,
            min: a_min,
        });
    }

    let mut p1 = base.clone();
    p1.coefficients.sigma = sigma1.clone();
    let mut p2 = base.clone();
    p2.coefficients.sigma = sigma2.clone();
    let traj1 = solve_forward(&p1, options)?;
    let traj2 = solve_forward(&p2, options)?;

    let lhs = norms::l2_xv(&(sigma1 - sigma2), &base.grid, &base.quadrature);
    let d0 = difference_data_norm(base, &traj1, &traj2);
    // identical initial data: the subtracted system starts from zero
    let record = StabilityRecord::new(label.to_string(), lhs, d0, 0.0);
    Ok(TwinOutcome {
        record,
        traj1,
        traj2,
    })
}

/// `d0` of the trace difference `u^1 - u^2` (outflow side only; the shared
/// inflow cancels exactly).
pub fn difference_data_norm(
    problem: &TransportProblem,
    traj1: &Trajectory,
    traj2: &Trajectory,
) -> f64 {
    let faces = problem.grid.faces();
    let mut acc = 0.0;
    for k in 1..=traj1.steps {
        for (fi, face) in faces.iter().enumerate() {
            for (q, node) in problem.quadrature.nodes.iter().enumerate() {
                let speed = face.outward_speed(node.v);
                if speed > 0.0 {
                    let d = traj1.dt_traces[k][[q, fi]] - traj2.dt_traces[k][[q, fi]];
                    acc += speed * node.weight * face.area * d * d * traj1.dt;
                }
            }
        }
    }
    acc.max(0.0).sqrt()
}

/// Minimum of the source factor `R` at `t = 0` over the discrete phase space.
pub fn source_factor_floor(problem: &TransportProblem) -> f64 {
    match &problem.source {
        SourceTerm::Zero => 0.0,
        SourceTerm::Separable { r, .. } => match r {
            SourceFactor::One => 1.0,
            SourceFactor::Profile(p) => p.value(0.0),
            SourceFactor::Snapshots { values, scale } => values[0]
                .iter()
                .map(|&v| v * scale)
                .fold(f64::INFINITY, f64::min),
            SourceFactor::Callback(cb) => {
                let (nq, nx) = problem.state_shape();
                let mut min = f64::INFINITY;
                for q in 0..nq {
                    for x in 0..nx {
                        min = min.min(cb(q, x, 0.0));
                    }
                }
                min
            }
        },
    }
}

/// Single solve of the source problem `F = f R`, recording both sides of the
/// source stability estimate (inflow must be zero for the outflow-only
/// variant; that is the caller's configuration).
pub fn source_experiment(
    problem: &TransportProblem,
    config: &StabilityConfig,
    options: SolveOptions,
    label: &str,
) -> Result<(StabilityRecord, Trajectory), StabilityError> {
    check_sigma_bound(&problem.coefficients.sigma, config.bound_m, "sigma")?;
    if problem.horizon() <= config.t_min {
        return Err(StabilityError::TimeTooShort {
            t: problem.horizon(),
            t_min: config.t_min,
        });
    }
    let f = match &problem.source {
        SourceTerm::Separable { f, .. } => f.clone(),
        SourceTerm::Zero => Array2::zeros(problem.state_shape()),
    };
    if !matches!(problem.source, SourceTerm::Zero) {
        let r_floor = source_factor_floor(problem);
        if r_floor <= config.positivity_floor {
            return Err(StabilityError::PositivityViolated {
                floor: config.positivity_floor,
                min: r_floor,
            });
        }
    }
    let traj = solve_forward(problem, options)?;
    let data = outflow_data_norm(problem, &traj, &problem.initial);
    let lhs = norms::l2_xv(&f, &problem.grid, &problem.quadrature);
    Ok((
        StabilityRecord::new(label.to_string(), lhs, data.d0, data.init_terms),
        traj,
    ))
}

/// Empirical envelope of the two-sided estimate over an ensemble:
/// the smallest data-to-misfit and largest misfit-to-data ratios.
pub fn ratio_bounds(records: &[StabilityRecord]) -> Result<(f64, f64), StabilityError> {
    let mut c_low = f64::INFINITY;
    let mut c_high: f64 = 0.0;
    let mut seen = false;
    for r in records {
        if let Some(dl) = r.ratio_data_over_lhs {
            seen = true;
            c_low = c_low.min(dl);
            match r.ratio_lhs_over_data {
                Some(ld) => c_high = c_high.max(ld),
                None => c_high = f64::INFINITY,
            }
        }
    }
    if !seen {
        return Err(StabilityError::DegenerateEnsemble);
    }
    Ok((c_low, c_high))
}

/// Verify the subtraction identity on a pair of twin solves: the difference
/// field satisfies the transport equation with the first coefficient and the
/// source `f = sigma1 - sigma2`, `R = -u^2`. Returns the max-norm of the
/// discrete residual (machine-zero when the stencils match).
pub fn subtracted_residual_linf(
    base: &TransportProblem,
    sigma1: &Array2<f64>,
    sigma2: &Array2<f64>,
    traj1: &Trajectory,
    traj2: &Trajectory,
) -> f64 {
    let snaps1 = traj1.snapshots.as_ref().expect("need snapshots");
    let snaps2 = traj2.snapshots.as_ref().expect("need snapshots");
    let diff: Vec<Array2<f64>> = snaps1
        .iter()
        .zip(snaps2.iter())
        .map(|(a, b)| a - b)
        .collect();
    let mut problem = base.clone();
    problem.coefficients.sigma = sigma1.clone();
    problem.inflow = crate::transport::InflowData::Zero;
    problem.source = SourceTerm::Separable {
        f: sigma1 - sigma2,
        r: SourceFactor::Snapshots {
            values: std::sync::Arc::new(snaps2.clone()),
            scale: -1.0,
        },
    };
    let res = crate::transport::residual(&problem, &diff);
    res.iter().map(norms::linf).fold(0.0, f64::max)
}

/// Additive i.i.d. Gaussian noise on the outflow traces before time
/// differencing; `level` is relative to the RMS of the outflow entries.
///
/// Also returns the discrepancy floor: the misfit of the noisy data against
/// the clean traces, which is the natural stopping level for an iterative
/// reconstruction (fitting below it means fitting the noise).
pub fn noisy_observation<R: Rng>(
    problem: &TransportProblem,
    traj: &Trajectory,
    level: f64,
    rng: &mut R,
) -> (TraceObservation, f64) {
    let faces = problem.grid.faces();
    let mut outflow_mask = Array2::from_elem(traj.traces[0].dim(), false);
    let mut sq = 0.0;
    let mut count = 0usize;
    for (fi, face) in faces.iter().enumerate() {
        for (q, node) in problem.quadrature.nodes.iter().enumerate() {
            if face.outward_speed(node.v) > 0.0 {
                outflow_mask[[q, fi]] = true;
            }
        }
    }
    for k in 1..=traj.steps {
        for ((q, fi), &m) in outflow_mask.indexed_iter() {
            if m {
                sq += traj.traces[k][[q, fi]] * traj.traces[k][[q, fi]];
                count += 1;
            }
        }
    }
    let rms = (sq / count.max(1) as f64).sqrt();
    let eta = level * rms;
    let mut noisy: Vec<Array2<f64>> = traj.traces.clone();
    for tr in noisy.iter_mut() {
        for ((q, fi), &m) in outflow_mask.indexed_iter() {
            if m {
                let xi: f64 = rng.sample(StandardNormal);
                tr[[q, fi]] += eta * xi;
            }
        }
    }
    let mut dt_traces = Vec::with_capacity(traj.steps + 1);
    dt_traces.push(Array2::zeros(traj.traces[0].dim()));
    for k in 1..=traj.steps {
        dt_traces.push((&noisy[k] - &noisy[k - 1]) / traj.dt);
    }
    let obs = TraceObservation { dt_traces };
    let mut floor = 0.0;
    for k in 1..=traj.steps {
        for (fi, face) in faces.iter().enumerate() {
            for (q, node) in problem.quadrature.nodes.iter().enumerate() {
                let speed = face.outward_speed(node.v);
                if speed > 0.0 {
                    let d = traj.dt_traces[k][[q, fi]] - obs.dt_traces[k][[q, fi]];
                    floor += 0.5 * speed * node.weight * face.area * traj.dt * d * d;
                }
            }
        }
    }
    (obs, floor)
}

/// Settings for the projected-gradient reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructSettings {
    pub iterations: usize,
    pub bound_m: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Give up a line search after this many halvings.
    pub max_backtracks: usize,
    /// Stop early once the misfit drops below this.
    pub misfit_tol: f64,
    pub noise_level: f64,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self {
            iterations: 200,
            bound_m: 5.0,
            armijo: 1e-4,
            max_backtracks: 40,
            misfit_tol: 0.0,
            noise_level: 0.0,
        }
    }
}

/// Gradient-descent path for the coefficient reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructionRun {
    pub sigma_history: Vec<Array1<f64>>,
    pub misfit_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub error_history: Option<Vec<f64>>,
    pub final_sigma: Array1<f64>,
    pub final_rel_error: Option<f64>,
    pub iterations_run: usize,
    pub stalled: bool,
    pub noise_level: f64,
}

fn broadcast_sigma(param: &Array1<f64>, nq: usize) -> Array2<f64> {
    let nx = param.len();
    let mut out = Array2::zeros((nq, nx));
    for q in 0..nq {
        for x in 0..nx {
            out[[q, x]] = param[x];
        }
    }
    out
}

fn rel_l2_error(
    param: &Array1<f64>,
    truth: &Array1<f64>,
    problem: &TransportProblem,
) -> f64 {
    let nq = problem.quadrature.len();
    let diff = broadcast_sigma(&(param - truth), nq);
    let t = broadcast_sigma(truth, nq);
    let denom = norms::l2_xv(&t, &problem.grid, &problem.quadrature);
    norms::l2_xv(&diff, &problem.grid, &problem.quadrature) / denom.max(1e-300)
}

/// Projected gradient descent with backtracking line search on the outflow
/// misfit; the coefficient is parameterized on the spatial grid
/// (velocity-independent) and projected onto `[0, M]`.
///
/// `truth` is only used to fill the error diagnostics.
pub fn reconstruct_sigma(
    base: &TransportProblem,
    sigma_init: &Array1<f64>,
    observed: &TraceObservation,
    settings: &ReconstructSettings,
    truth: Option<&Array1<f64>>,
) -> Result<ReconstructionRun, StabilityError> {
    let nq = base.quadrature.len();
    let clamp = |p: &mut Array1<f64>| {
        p.mapv_inplace(|v| v.clamp(0.0, settings.bound_m));
    };
    let mut sigma = sigma_init.clone();
    clamp(&mut sigma);

    fn run_solve(
        base: &TransportProblem,
        param: &Array1<f64>,
        nq: usize,
        snapshots: bool,
    ) -> Result<(TransportProblem, Trajectory), StabilityError> {
        let mut p = base.clone();
        p.coefficients.sigma = broadcast_sigma(param, nq);
        let traj = solve_forward(
            &p,
            SolveOptions {
                store_snapshots: snapshots,
            },
        )?;
        Ok((p, traj))
    }

    let mut sigma_history = vec![sigma.clone()];
    let mut misfit_history = Vec::new();
    let mut step_history = Vec::new();
    let mut error_history = truth.map(|t| vec![rel_l2_error(&sigma, t, base)]);
    let mut stalled = false;

    let (mut problem, mut traj) = run_solve(base, &sigma, nq, true)?;
    let mut grad_out = solve_adjoint(&problem, &traj, observed)?;
    misfit_history.push(grad_out.misfit);

    let mut step = {
        let gmax = grad_out.gradient_x.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        if gmax > 0.0 {
            0.1 * settings.bound_m.max(1.0) / gmax
        } else {
            1.0
        }
    };
    let mut iterations_run = 0usize;
    let mut prev: Option<(Array1<f64>, Array1<f64>)> = None;

    for _ in 0..settings.iterations {
        let j_cur = *misfit_history.last().unwrap();
        if j_cur <= settings.misfit_tol {
            break;
        }
        let gnorm_sq: f64 = grad_out.gradient_x.iter().map(|g| g * g).sum();
        if gnorm_sq == 0.0 {
            break;
        }
        // spectral (Barzilai-Borwein) trial step when curvature information
        // is available, otherwise grow the last accepted step
        if let Some((ds, dg)) = prev.as_ref() {
            let ss: f64 = ds.iter().map(|v| v * v).sum();
            let sy: f64 = ds.iter().zip(dg.iter()).map(|(a, b)| a * b).sum();
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-12, 1e12);
            }
        }
        let mut accepted = false;
        let mut trial = step;
        for _ in 0..settings.max_backtracks {
            let mut cand = &sigma - &(trial * &grad_out.gradient_x);
            clamp(&mut cand);
            let move_sq: f64 = cand
                .iter()
                .zip(sigma.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if move_sq == 0.0 {
                break;
            }
            let (p_new, t_new) = run_solve(base, &cand, nq, true)?;
            let j_new = misfit(&p_new, &t_new, observed);
            if j_new <= j_cur - settings.armijo / trial.max(1e-300) * move_sq {
                let d_sigma = &cand - &sigma;
                sigma = cand;
                problem = p_new;
                traj = t_new;
                misfit_history.push(j_new);
                step_history.push(trial);
                sigma_history.push(sigma.clone());
                if let (Some(h), Some(t)) = (error_history.as_mut(), truth) {
                    h.push(rel_l2_error(&sigma, t, base));
                }
                let g_old = grad_out.gradient_x.clone();
                grad_out = solve_adjoint(&problem, &traj, observed)?;
                prev = Some((d_sigma, &grad_out.gradient_x - &g_old));
                accepted = true;
                break;
            }
            trial *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
        iterations_run += 1;
        step = (trial * 2.0).min(1e12);
    }

    let final_rel_error = truth.map(|t| rel_l2_error(&sigma, t, base));
    Ok(ReconstructionRun {
        sigma_history,
        misfit_history,
        step_history,
        error_history,
        final_sigma: sigma,
        final_rel_error,
        iterations_run,
        stalled,
        noise_level: settings.noise_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpatialBox;
    use crate::partition::{VelocityDomain, VelocityPartition};
    use crate::quadrature::VelocityQuadrature;
    use crate::recipes::ScalarRecipe;
    use crate::transport::{Coefficients, InflowData, SpatialGrid};
    use std::sync::Arc;

    fn base_problem(nx: usize, steps: usize, a_floor: f64) -> (TransportProblem, f64) {
        let p = VelocityPartition::build(VelocityDomain::new(2, 1.0, 2.0).unwrap(), &[4])
            .unwrap()
            .select_gammas()
            .certify_kappas(2000)
            .unwrap();
        let quad = Arc::new(VelocityQuadrature::build(&p, 1, 2, 1));
        let grid = SpatialGrid::new(SpatialBox::unit(2), nx).unwrap();
        let t_min = p.minimal_time(&grid.domain.clone()).unwrap();
        let (nq, nxt) = (quad.len(), grid.cell_count());
        let dt = 1.0 / (quad.max_speed() * (1.0 / grid.h[0] + 1.0 / grid.h[1]));
        let initial = Array2::from_elem((nq, nxt), a_floor);
        let inflow = InflowData::Static(Array2::from_elem((nq, grid.face_count()), a_floor));
        let problem = TransportProblem {
            grid,
            coefficients: Coefficients {
                sigma: Array2::from_elem((nq, nxt), 0.5),
                kernel: None,
                bound_m: 5.0,
            },
            initial,
            inflow,
            source: SourceTerm::Zero,
            dt,
            steps,
            quadrature: quad,
        };
        (problem, t_min)
    }

    #[test]
    fn identical_coefficients_give_zero_on_both_sides() {
        let (problem, t_min) = base_problem(8, 8 * 64, 1.0);
        let config = StabilityConfig {
            bound_m: 5.0,
            positivity_floor: 0.5,
            t_min,
        };
        let sigma = problem.coefficients.sigma.clone();
        let out = twin_experiment(
            &problem,
            &sigma,
            &sigma,
            &config,
            SolveOptions::default(),
            "same",
        )
        .unwrap();
        assert_eq!(out.record.lhs, 0.0);
        assert_eq!(out.record.data_norm, 0.0);
    }

    #[test]
    fn positivity_gate_fires() {
        let (problem, t_min) = base_problem(8, 512, 0.1);
        let config = StabilityConfig {
            bound_m: 5.0,
            positivity_floor: 0.5,
            t_min,
        };
        let sigma = problem.coefficients.sigma.clone();
        match twin_experiment(&problem, &sigma, &sigma, &config, SolveOptions::default(), "x") {
            Err(StabilityError::PositivityViolated { .. }) => {}
            other => panic!("expected PositivityViolated, got {:?}", other.map(|o| o.record)),
        }
    }

    #[test]
    fn subtraction_identity_is_machine_exact() {
        let (problem, t_min) = base_problem(8, 96, 1.0);
        let config = StabilityConfig {
            bound_m: 5.0,
            positivity_floor: 0.5,
            t_min: t_min.min(problem.horizon() * 0.5),
        };
        let sigma1 = problem.coefficients.sigma.clone();
        let bump = ScalarRecipe::GaussianBump {
            center: [0.5, 0.5, 0.0],
            width: 0.15,
            amplitude: 0.4,
            floor: 0.0,
        }
        .materialize(&problem.grid, &problem.quadrature);
        let sigma2 = &sigma1 + &bump;
        let out = twin_experiment(
            &problem,
            &sigma1,
            &sigma2,
            &config,
            SolveOptions {
                store_snapshots: true,
            },
            "bump",
        )
        .unwrap();
        let res = subtracted_residual_linf(&problem, &sigma1, &sigma2, &out.traj1, &out.traj2);
        assert!(res < 1e-11, "subtracted residual {res}");
        assert!(out.record.lhs > 0.0);
        assert!(out.record.data_norm > 0.0);
    }

    #[test]
    fn source_scaling_is_exactly_homogeneous() {
        let (mut problem, t_min) = base_problem(8, 8 * 64, 0.0);
        problem.initial.fill(0.0);
        problem.inflow = InflowData::Zero;
        let f = ScalarRecipe::GaussianBump {
            center: [0.4, 0.6, 0.0],
            width: 0.2,
            amplitude: 1.0,
            floor: 0.0,
        }
        .materialize(&problem.grid, &problem.quadrature);
        let config = StabilityConfig {
            bound_m: 5.0,
            positivity_floor: 0.5,
            t_min,
        };
        problem.source = SourceTerm::Separable {
            f: f.clone(),
            r: SourceFactor::One,
        };
        let (rec1, _) = source_experiment(&problem, &config, SolveOptions::default(), "f").unwrap();
        let lambda = 3.7;
        problem.source = SourceTerm::Separable {
            f: &f * lambda,
            r: SourceFactor::One,
        };
        let (rec2, _) =
            source_experiment(&problem, &config, SolveOptions::default(), "lf").unwrap();
        assert!((rec2.data_norm - lambda * rec1.data_norm).abs() <= 1e-10 * rec2.data_norm);
        let r1 = rec1.ratio_data_over_lhs.unwrap();
        let r2 = rec2.ratio_data_over_lhs.unwrap();
        assert!((r1 - r2).abs() <= 1e-10 * r1.abs());
    }

    #[test]
    fn singleton_ratio_bounds_are_reciprocal() {
        let rec = StabilityRecord::new("one".into(), 2.0, 0.5, 0.0);
        let (c_low, c_high) = ratio_bounds(&[rec]).unwrap();
        assert!((c_low * c_high - 1.0).abs() < 1e-12);
        assert!(matches!(
            ratio_bounds(&[StabilityRecord::new("z".into(), 0.0, 0.0, 0.0)]),
            Err(StabilityError::DegenerateEnsemble)
        ));
    }

    #[test]
    fn reconstruction_at_truth_terminates_immediately() {
        let (problem, _) = base_problem(6, 64, 1.0);
        let truth = Array1::from_elem(problem.grid.cell_count(), 0.5);
        let (p, traj) = {
            let mut p = problem.clone();
            p.coefficients.sigma = broadcast_sigma(&truth, problem.quadrature.len());
            let t = solve_forward(&p, SolveOptions::default()).unwrap();
            (p, t)
        };
        let _ = p;
        let obs = TraceObservation::from_trajectory(&traj);
        let run = reconstruct_sigma(
            &problem,
            &truth,
            &obs,
            &ReconstructSettings {
                iterations: 10,
                ..Default::default()
            },
            Some(&truth),
        )
        .unwrap();
        assert_eq!(run.iterations_run, 0);
        assert_eq!(run.misfit_history[0], 0.0);
        assert_eq!(run.final_rel_error.unwrap(), 0.0);
    }

    #[test]
    fn misfit_is_monotone_along_accepted_steps() {
        let (problem, _) = base_problem(8, 128, 1.0);
        let nx = problem.grid.cell_count();
        let truth_field = ScalarRecipe::BoxBump {
            lo: [0.3, 0.3, 0.0],
            hi: [0.7, 0.7, 0.0],
            amplitude: 0.5,
            floor: 0.3,
        };
        let truth = Array1::from_shape_fn(nx, |x| {
            truth_field.eval(&problem.grid, problem.grid.cell_center(x))
        });
        let mut p_truth = problem.clone();
        p_truth.coefficients.sigma = broadcast_sigma(&truth, problem.quadrature.len());
        let traj = solve_forward(&p_truth, SolveOptions::default()).unwrap();
        let obs = TraceObservation::from_trajectory(&traj);
        let init = Array1::from_elem(nx, 0.3);
        let run = reconstruct_sigma(
            &problem,
            &init,
            &obs,
            &ReconstructSettings {
                iterations: 12,
                ..Default::default()
            },
            Some(&truth),
        )
        .unwrap();
        for w in run.misfit_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-18, "misfit increased: {:?}", w);
        }
        assert!(run.misfit_history.last().unwrap() < &run.misfit_history[0]);
    }
}
