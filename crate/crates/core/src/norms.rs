//! Discrete norms over the phase space `Omega x V`, with the velocity
//! quadrature weights and cell volumes baked in.

use crate::quadrature::VelocityQuadrature;
use crate::transport::SpatialGrid;
use ndarray::Array2;

/// `L^2(Omega x V)` norm of a `[q, x]` field.
pub fn l2_xv(field: &Array2<f64>, grid: &SpatialGrid, quad: &VelocityQuadrature) -> f64 {
    l2_xv_sq(field, grid, quad).sqrt()
}

pub fn l2_xv_sq(field: &Array2<f64>, grid: &SpatialGrid, quad: &VelocityQuadrature) -> f64 {
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for (q, node) in quad.nodes.iter().enumerate() {
        let mut s = 0.0;
        for x in 0..grid.cell_count() {
            s += field[[q, x]] * field[[q, x]];
        }
        acc += node.weight * s;
    }
    acc * vol
}

/// Per-partition-cell `L^2(Omega x V_0)` norms (one entry per cell).
pub fn per_cell_l2(
    field: &Array2<f64>,
    grid: &SpatialGrid,
    quad: &VelocityQuadrature,
) -> Vec<f64> {
    let vol = grid.cell_volume();
    let mut out = vec![0.0; quad.cell_count];
    for (q, node) in quad.nodes.iter().enumerate() {
        let mut s = 0.0;
        for x in 0..grid.cell_count() {
            s += field[[q, x]] * field[[q, x]];
        }
        out[node.cell] += node.weight * s * vol;
    }
    out.iter_mut().for_each(|v| *v = v.sqrt());
    out
}

/// Spatial gradient magnitude-squared by centered differences (one-sided at
/// the boundary), integrated per partition cell; returns per-cell norms.
pub fn per_cell_grad_l2(
    field: &Array2<f64>,
    grid: &SpatialGrid,
    quad: &VelocityQuadrature,
) -> Vec<f64> {
    let vol = grid.cell_volume();
    let n = grid.n;
    let mut out = vec![0.0; quad.cell_count];
    for (q, node) in quad.nodes.iter().enumerate() {
        let mut s = 0.0;
        let mut x = 0usize;
        for i2 in 0..n[2] {
            for i1 in 0..n[1] {
                for i0 in 0..n[0] {
                    let coords = [i0, i1, i2];
                    for d in 0..grid.dim {
                        let stride = grid.stride(d);
                        let g = if coords[d] == 0 {
                            (field[[q, x + stride]] - field[[q, x]]) / grid.h[d]
                        } else if coords[d] + 1 == n[d] {
                            (field[[q, x]] - field[[q, x - stride]]) / grid.h[d]
                        } else {
                            (field[[q, x + stride]] - field[[q, x - stride]]) / (2.0 * grid.h[d])
                        };
                        s += g * g;
                    }
                    x += 1;
                }
            }
        }
        out[node.cell] += node.weight * s * vol;
    }
    out.iter_mut().for_each(|v| *v = v.sqrt());
    out
}

pub fn linf(field: &Array2<f64>) -> f64 {
    field.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpatialBox;
    use crate::partition::{VelocityDomain, VelocityPartition};
    use std::f64::consts::PI;

    #[test]
    fn constant_field_norm_is_measure_product() {
        let p = VelocityPartition::build(VelocityDomain::new(2, 1.0, 2.0).unwrap(), &[4])
            .unwrap()
            .select_gammas();
        let quad = VelocityQuadrature::build(&p, 2, 2, 1);
        let grid = SpatialGrid::new(SpatialBox::unit(2), 10).unwrap();
        let f = Array2::from_elem((quad.len(), grid.cell_count()), 2.0);
        let expected = (4.0 * 3.0 * PI).sqrt(); // |u|^2 * |Omega| * |V|
        assert!((l2_xv(&f, &grid, &quad) - expected).abs() < 1e-12);
        // per-cell norms recombine to the global one
        let per: f64 = per_cell_l2(&f, &grid, &quad).iter().map(|v| v * v).sum();
        assert!((per.sqrt() - expected).abs() < 1e-12);
        // constants have zero gradient
        let g: f64 = per_cell_grad_l2(&f, &grid, &quad).iter().sum();
        assert!(g < 1e-14);
    }
}
