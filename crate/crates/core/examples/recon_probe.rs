//! Convergence behaviour of the coefficient reconstruction on the standard
//! twin setup, with and without trace noise.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rte_core::adjoint::TraceObservation;
use rte_core::partition::{VelocityDomain, VelocityPartition};
use rte_core::quadrature::VelocityQuadrature;
use rte_core::recipes::ScalarRecipe;
use rte_core::stability::{noisy_observation, reconstruct_sigma, ReconstructSettings};
use rte_core::transport::{
    solve_forward, Coefficients, InflowData, SolveOptions, SourceTerm, SpatialGrid,
    TransportProblem,
};
use rte_core::SpatialBox;
use std::sync::Arc;

fn main() {
    let p = VelocityPartition::build(VelocityDomain::new(2, 1.0, 2.0).unwrap(), &[4])
        .unwrap()
        .select_gammas()
        .certify_kappas(2000)
        .unwrap();
    let quad = Arc::new(VelocityQuadrature::build(&p, 1, 2, 1));
    let grid = SpatialGrid::new(SpatialBox::unit(2), 32).unwrap();
    let (nq, nx) = (quad.len(), grid.cell_count());
    let vmax = quad.max_speed();
    let dt = 1.0 / (vmax * (1.0 / grid.h[0] + 1.0 / grid.h[1]));
    let t_min = p.minimal_time(&grid.domain).unwrap();
    let steps = (2.0 * t_min / dt).ceil() as usize;
    println!("# steps={steps} dt={dt}");

    let truth_recipe = ScalarRecipe::BoxBump {
        lo: [0.35, 0.35, 0.0],
        hi: [0.7, 0.7, 0.0],
        amplitude: 0.5,
        floor: 0.3,
    };
    let truth = Array1::from_shape_fn(nx, |x| truth_recipe.eval(&grid, grid.cell_center(x)));
    let mut kernel = ndarray::Array3::zeros((nq, nq, nx));
    kernel.fill(0.05);
    let base = TransportProblem {
        grid: grid.clone(),
        coefficients: Coefficients {
            sigma: Array2::zeros((nq, nx)),
            kernel: Some(kernel),
            bound_m: 5.0,
        },
        initial: Array2::from_elem((nq, nx), 1.0),
        inflow: InflowData::Static(Array2::from_elem((nq, grid.face_count()), 1.0)),
        source: SourceTerm::Zero,
        dt,
        steps,
        quadrature: quad.clone(),
    };

    // synthesize data from the truth
    let mut p_truth = base.clone();
    for q in 0..nq {
        for x in 0..nx {
            p_truth.coefficients.sigma[[q, x]] = truth[x];
        }
    }
    let t0 = std::time::Instant::now();
    let traj_truth = solve_forward(&p_truth, SolveOptions::default()).unwrap();
    println!("# one forward solve: {:?}", t0.elapsed());

    for noise in [0.0, 0.005, 0.01, 0.02] {
        let (obs, floor) = if noise == 0.0 {
            (TraceObservation::from_trajectory(&traj_truth), 0.0)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            noisy_observation(&base, &traj_truth, noise, &mut rng)
        };
        let init = Array1::from_elem(nx, 0.3);
        let t0 = std::time::Instant::now();
        let run = reconstruct_sigma(
            &base,
            &init,
            &obs,
            &ReconstructSettings {
                iterations: 200,
                bound_m: 5.0,
                noise_level: noise,
                misfit_tol: 1.05 * floor,
                ..Default::default()
            },
            Some(&truth),
        )
        .unwrap();
        let errs = run.error_history.as_ref().unwrap();
        let marks: Vec<String> = [0, 10, 25, 50, 100, 150, 200]
            .iter()
            .filter(|&&k| k < errs.len())
            .map(|&k| format!("e[{k}]={:.4}", errs[k]))
            .collect();
        println!(
            "noise={:5.3} iters={} stalled={} final_err={:.4} J0={:.3e} Jend={:.3e} time={:?} {}",
            noise,
            run.iterations_run,
            run.stalled,
            run.final_rel_error.unwrap(),
            run.misfit_history[0],
            run.misfit_history.last().unwrap(),
            t0.elapsed(),
            marks.join(" ")
        );
    }
}
