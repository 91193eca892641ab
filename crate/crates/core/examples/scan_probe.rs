//! Quick look at the weighted-estimate scan on the standard setup:
//! prints C_req(s) for the base grid and one refinement.

use ndarray::Array2;
use rte_core::carleman::{carleman_scan, summarize_scan, CarlemanWeights, CutOff};
use rte_core::partition::{VelocityDomain, VelocityPartition};
use rte_core::quadrature::VelocityQuadrature;
use rte_core::recipes::{ScalarRecipe, TimeProfile};
use rte_core::transport::{
    Coefficients, InflowData, SourceFactor, SourceTerm, SpatialGrid, TransportProblem,
};
use rte_core::SpatialBox;
use std::sync::Arc;

fn build(nx: usize) -> (TransportProblem, VelocityPartition) {
    let p = VelocityPartition::build(VelocityDomain::new(2, 1.0, 2.0).unwrap(), &[4])
        .unwrap()
        .select_gammas()
        .certify_kappas(2000)
        .unwrap();
    let quad = Arc::new(VelocityQuadrature::build(&p, 1, 2, 1));
    let grid = SpatialGrid::new(SpatialBox::unit(2), nx).unwrap();
    let (nq, nxt) = (quad.len(), grid.cell_count());
    let vmax = quad.max_speed();
    let dt = 1.0 / (vmax * (1.0 / grid.h[0] + 1.0 / grid.h[1]));
    let t_min = p.minimal_time(&grid.domain).unwrap();
    let steps = (2.0 * t_min / dt).ceil() as usize;
    let a = Array2::from_elem((nq, nxt), 0.5);
    let f = ScalarRecipe::GaussianBump {
        center: [0.5, 0.4, 0.0],
        width: 0.15,
        amplitude: 1.0,
        floor: 0.5,
    }
    .materialize(&grid, &quad);
    let mut kernel = ndarray::Array3::zeros((nq, nq, nxt));
    kernel.fill(0.05);
    let g = Array2::from_elem((nq, grid.face_count()), 0.5);
    let problem = TransportProblem {
        grid,
        coefficients: Coefficients {
            sigma: Array2::from_elem((nq, nxt), 2.0),
            kernel: Some(kernel),
            bound_m: 5.0,
        },
        initial: a,
        inflow: InflowData::Static(g),
        source: SourceTerm::Separable {
            f,
            r: SourceFactor::Profile(TimeProfile::Wobble {
                amplitude: 0.5,
                omega: 2.0,
            }),
        },
        dt,
        steps,
        quadrature: quad,
    };
    (problem, p)
}

fn main() {
    let s_values: Vec<f64> = (0..79).map(|k| 1.0 + 0.5 * k as f64).collect();
    for nx in [32usize, 64] {
        let t0 = std::time::Instant::now();
        let (problem, p) = build(nx);
        let geo = p
            .time_geometry(&problem.grid.domain, problem.horizon(), problem.dt)
            .unwrap();
        let w = CarlemanWeights::from_geometry(&p, &geo).unwrap();
        let cutoff = CutOff::new(problem.horizon(), geo.delta).unwrap();
        let reports = carleman_scan(&problem, &w, &cutoff, &s_values).unwrap();
        println!(
            "# nx={nx} steps={} dt={} beta={:.4} delta={:.4} elapsed={:?}",
            problem.steps,
            problem.dt,
            geo.beta,
            geo.delta,
            t0.elapsed()
        );
        println!("s, lhs_init, lhs_bulk, rhs_interior, rhs_boundary, c_req");
        for r in &reports {
            println!(
                "{:5.1}  {:12.5e} {:12.5e} {:12.5e} {:12.5e}  c_req={:12.6e}",
                r.s, r.lhs_init, r.lhs_bulk, r.rhs_interior, r.rhs_boundary, r.c_req
            );
        }
        let summary = summarize_scan(&reports);
        println!(
            "# sup={:.6e} at s={} knee={:?}",
            summary.sup_c, summary.argmax_s, summary.knee_s
        );
    }
}
