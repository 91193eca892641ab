//! Named synthetic field recipes so experiments stay declarative and
//! reproducible: every coefficient, initial value, and inflow profile used in
//! a run is one of these, parameterized in the run configuration.

use crate::geometry::Vec3;
use crate::quadrature::VelocityQuadrature;
use crate::transport::SpatialGrid;
use ndarray::Array2;
use rand::Rng;

/// Scalar spatial profile evaluated at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarRecipe {
    Constant {
        value: f64,
    },
    /// `floor + amplitude * exp(-|x - center|^2 / (2 width^2))`
    GaussianBump {
        center: Vec3,
        width: f64,
        amplitude: f64,
        floor: f64,
    },
    /// `low`/`high` tiles in a `tiles`-per-axis checkerboard.
    Checkerboard {
        tiles: usize,
        low: f64,
        high: f64,
    },
    /// `floor` everywhere, `floor + amplitude` inside the axis-aligned box.
    BoxBump {
        lo: Vec3,
        hi: Vec3,
        amplitude: f64,
        floor: f64,
    },
}

impl ScalarRecipe {
    pub fn eval(&self, grid: &SpatialGrid, x: Vec3) -> f64 {
        match self {
            ScalarRecipe::Constant { value } => *value,
            ScalarRecipe::GaussianBump {
                center,
                width,
                amplitude,
                floor,
            } => {
                let mut d2 = 0.0;
                for d in 0..grid.dim {
                    d2 += (x[d] - center[d]) * (x[d] - center[d]);
                }
                floor + amplitude * (-d2 / (2.0 * width * width)).exp()
            }
            ScalarRecipe::Checkerboard { tiles, low, high } => {
                let mut parity = 0usize;
                for d in 0..grid.dim {
                    let rel = (x[d] - grid.domain.lo[d]) / grid.domain.extent(d).max(1e-300);
                    let k = ((rel * *tiles as f64).floor() as isize).clamp(0, *tiles as isize - 1);
                    parity += k as usize;
                }
                if parity % 2 == 0 {
                    *low
                } else {
                    *high
                }
            }
            ScalarRecipe::BoxBump {
                lo,
                hi,
                amplitude,
                floor,
            } => {
                let inside = (0..grid.dim).all(|d| x[d] >= lo[d] && x[d] <= hi[d]);
                if inside {
                    floor + amplitude
                } else {
                    *floor
                }
            }
        }
    }

    /// Materialize on the spatial grid, broadcast across velocity nodes.
    pub fn materialize(&self, grid: &SpatialGrid, quad: &VelocityQuadrature) -> Array2<f64> {
        let nx = grid.cell_count();
        let mut out = Array2::zeros((quad.len(), nx));
        for x in 0..nx {
            let value = self.eval(grid, grid.cell_center(x));
            for q in 0..quad.len() {
                out[[q, x]] = value;
            }
        }
        out
    }
}

/// Multiplicative time profile for inflow data and source factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeProfile {
    One,
    /// `exp(-rate * t)`
    Decay { rate: f64 },
    /// `1 + amplitude * sin(omega * t)`
    Wobble { amplitude: f64, omega: f64 },
    /// Linear ramp `1 + rate * t`.
    Ramp { rate: f64 },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeProfile::One => 1.0,
            TimeProfile::Decay { rate } => (-rate * t).exp(),
            TimeProfile::Wobble { amplitude, omega } => 1.0 + amplitude * (omega * t).sin(),
            TimeProfile::Ramp { rate } => 1.0 + rate * t,
        }
    }
}

/// Random smooth bump for ensemble draws; deterministic given the RNG state.
pub fn random_gaussian_bump<R: Rng>(
    rng: &mut R,
    grid: &SpatialGrid,
    amplitude_range: (f64, f64),
    width_range: (f64, f64),
) -> ScalarRecipe {
    let mut center = [0.0; 3];
    for d in 0..grid.dim {
        let span = grid.domain.extent(d);
        center[d] = grid.domain.lo[d] + span * (0.25 + 0.5 * rng.random::<f64>());
    }
    let amplitude =
        amplitude_range.0 + (amplitude_range.1 - amplitude_range.0) * rng.random::<f64>();
    let width = width_range.0 + (width_range.1 - width_range.0) * rng.random::<f64>();
    ScalarRecipe::GaussianBump {
        center,
        width,
        amplitude,
        floor: 0.0,
    }
}
