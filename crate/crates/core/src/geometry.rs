//! Axis-aligned spatial boxes and small fixed-dimension vector helpers.
//!
//! Vectors are stored as `[f64; 3]` regardless of the working dimension;
//! unused trailing components are kept at zero so dot products and norms
//! are dimension-agnostic.

use thiserror::Error;

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("box dimension {0} not supported (expected 2 or 3)")]
    BadDimension(usize),
    #[error("box bounds inverted on axis {axis}: lo={lo}, hi={hi}")]
    InvertedBounds { axis: usize, lo: f64, hi: f64 },
}

/// Axis-aligned box; degenerate boxes (a single point) are allowed so
/// travel-time formulas stay meaningful in edge cases.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBox {
    pub dim: usize,
    pub lo: Vec3,
    pub hi: Vec3,
}

impl SpatialBox {
    pub fn new(dim: usize, lo: &[f64], hi: &[f64]) -> Result<Self, GeometryError> {
        if dim < 2 || dim > 3 {
            return Err(GeometryError::BadDimension(dim));
        }
        let mut l = [0.0; 3];
        let mut h = [0.0; 3];
        for d in 0..dim {
            if lo[d] > hi[d] {
                return Err(GeometryError::InvertedBounds {
                    axis: d,
                    lo: lo[d],
                    hi: hi[d],
                });
            }
            l[d] = lo[d];
            h[d] = hi[d];
        }
        Ok(Self { dim, lo: l, hi: h })
    }

    pub fn unit(dim: usize) -> Self {
        let mut hi = [0.0; 3];
        for d in 0..dim {
            hi[d] = 1.0;
        }
        Self {
            dim,
            lo: [0.0; 3],
            hi,
        }
    }

    pub fn point(dim: usize, x: &[f64]) -> Result<Self, GeometryError> {
        Self::new(dim, x, x)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn corners(&self) -> Vec<Vec3> {
        let n = 1usize << self.dim;
        let mut out = Vec::with_capacity(n);
        for mask in 0..n {
            let mut c = [0.0; 3];
            for d in 0..self.dim {
                c[d] = if mask & (1 << d) != 0 {
                    self.hi[d]
                } else {
                    self.lo[d]
                };
            }
            out.push(c);
        }
        out
    }

    /// Exact extrema of the linear functional `x -> g.x` over the closed box.
    /// Separable per axis, so no corner enumeration blow-up is needed.
    pub fn dot_range(&self, g: Vec3) -> (f64, f64) {
        let mut min = 0.0;
        let mut max = 0.0;
        for d in 0..self.dim {
            let a = g[d] * self.lo[d];
            let b = g[d] * self.hi[d];
            min += a.min(b);
            max += a.max(b);
        }
        (min, max)
    }

    pub fn contains(&self, x: Vec3) -> bool {
        (0..self.dim).all(|d| x[d] >= self.lo[d] && x[d] <= self.hi[d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_range_matches_corner_enumeration() {
        let b = SpatialBox::new(3, &[-1.0, 0.5, 2.0], &[0.25, 1.5, 2.0]).unwrap();
        let g = [0.3, -1.2, 0.7];
        let (lo, hi) = b.dot_range(g);
        let vals: Vec<f64> = b.corners().iter().map(|&c| dot(g, c)).collect();
        let cmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let cmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - cmin).abs() < 1e-14);
        assert!((hi - cmax).abs() < 1e-14);
    }

    #[test]
    fn degenerate_box_is_a_point() {
        let b = SpatialBox::point(2, &[0.3, 0.4]).unwrap();
        let (lo, hi) = b.dot_range([2.0, -1.0, 0.0]);
        assert_eq!(lo, hi);
    }

    #[test]
    fn inverted_bounds_rejected() {
        assert!(SpatialBox::new(2, &[1.0, 0.0], &[0.0, 1.0]).is_err());
    }
}
