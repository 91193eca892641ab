//! Velocity quadrature aligned with the partition cells.
//!
//! Each cell carries the same spherical-coordinate sub-grid; nodes sit at
//! sub-cell midpoints while weights are the exact sub-cell measures, so the
//! per-cell weight sums reproduce cell measures to roundoff and the node set
//! of cell `i` is exactly the rotated image of the node set of cell 0.

use crate::geometry::Vec3;
use crate::partition::{from_spherical, VelocityPartition};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadNode {
    pub v: Vec3,
    pub weight: f64,
    pub cell: usize,
}

#[derive(Debug, Clone)]
pub struct VelocityQuadrature {
    pub nodes: Vec<QuadNode>,
    pub nodes_per_cell: usize,
    pub cell_count: usize,
}

impl VelocityQuadrature {
    /// `radial` x `angular` (x `polar` in 3-D) nodes per cell, cell-major
    /// node ordering.
    pub fn build(
        partition: &VelocityPartition,
        radial: usize,
        angular: usize,
        polar: usize,
    ) -> Self {
        assert!(radial >= 1 && angular >= 1 && polar >= 1);
        let dim = partition.domain.dim;
        let (v0, v1) = (partition.domain.v0, partition.domain.v1);
        let npolar = if dim == 3 { polar } else { 1 };
        let mut nodes = Vec::new();
        for cell in &partition.cells {
            for ip in 0..npolar {
                for ia in 0..angular {
                    let th_lo = cell.theta.lo
                        + cell.theta.width() * ia as f64 / angular as f64;
                    let th_hi = cell.theta.lo
                        + cell.theta.width() * (ia + 1) as f64 / angular as f64;
                    let theta = 0.5 * (th_lo + th_hi);
                    let (phi, phi_meas) = match cell.phi {
                        None => (0.0, 1.0),
                        Some(p) => {
                            let lo = p.lo + p.width() * ip as f64 / npolar as f64;
                            let hi = p.lo + p.width() * (ip + 1) as f64 / npolar as f64;
                            (0.5 * (lo + hi), lo.cos() - hi.cos())
                        }
                    };
                    for ir in 0..radial {
                        let r_lo = v0 + (v1 - v0) * ir as f64 / radial as f64;
                        let r_hi = v0 + (v1 - v0) * (ir + 1) as f64 / radial as f64;
                        let r = 0.5 * (r_lo + r_hi);
                        let weight = match dim {
                            2 => (th_hi - th_lo) * 0.5 * (r_hi * r_hi - r_lo * r_lo),
                            _ => {
                                (th_hi - th_lo) * phi_meas
                                    * (r_hi.powi(3) - r_lo.powi(3))
                                    / 3.0
                            }
                        };
                        nodes.push(QuadNode {
                            v: from_spherical(dim, r, theta, phi),
                            weight,
                            cell: cell.index,
                        });
                    }
                }
            }
        }
        let nodes_per_cell = radial * angular * npolar;
        VelocityQuadrature {
            nodes,
            nodes_per_cell,
            cell_count: partition.cell_count(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_speed(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| crate::geometry::norm(n.v))
            .fold(0.0, f64::max)
    }

    pub fn cell_weight(&self, cell: usize) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.cell == cell)
            .map(|n| n.weight)
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// Node indices belonging to one cell (contiguous by construction).
    pub fn cell_nodes(&self, cell: usize) -> std::ops::Range<usize> {
        let a = cell * self.nodes_per_cell;
        a..a + self.nodes_per_cell
    }
}
