//! Numerical laboratory for transport equations with partitioned velocity
//! domains: forward/adjoint upwind solver, piecewise-linear weighted
//! (Carleman-type) inequality diagnostics, energy estimates, and a
//! twin-experiment harness measuring both-sided Lipschitz stability of
//! coefficient and source reconstruction from outflow boundary data.

pub mod adjoint;
pub mod carleman;
pub mod stability;
pub mod geometry;
pub mod norms;
pub mod partition;
pub mod quadrature;
pub mod recipes;
pub mod transport;

pub use geometry::{SpatialBox, Vec3};
pub use partition::{TimeGeometry, VelocityCell, VelocityDomain, VelocityPartition};
pub use quadrature::{QuadNode, VelocityQuadrature};
pub use transport::{
    Coefficients, InflowData, SourceFactor, SourceTerm, SpatialGrid, Trajectory, TransportProblem,
};
