//! Solver for convex relaxations of parabolic optimal control problems with
//! combinatorial switching constraints.
//!
//! The relaxation is solved by an outer approximation loop. Each subproblem
//! (box constraints plus a finite set of cutting planes) is solved with a
//! semi-smooth Newton method whose linear systems go through a preconditioned
//! MINRES solve. Cuts come from the alternating-inequality separation oracle
//! for a bound on the number of switchings.
//!
//! The model PDE is the heat equation on the unit square with homogeneous
//! Dirichlet data, discretized by P1 finite elements in space and
//! Crank–Nicolson in time.

pub mod clock;
pub mod error;
pub mod heat;
pub mod instancegen;
pub mod linalg;
pub mod mesh;
pub mod minres;
pub mod outerloop;
pub mod ssnewton;
pub mod switchpoly;
pub mod timegrid;
pub mod validate;

pub use error::{Error, Result};
pub use heat::{FormFunctions, HeatOperators, SourceField, TimeLayout, TrackingProblem, Trajectory};
pub use instancegen::{Instance, InstanceSpec};
pub use mesh::{SpatialMesh, SparseOperator};
pub use outerloop::{BoundLogRecord, OuterConfig, OuterResult, OuterStatus, ProjectionStrategy};
pub use ssnewton::{ActiveSets, CutPool, NewtonConfig, NewtonState, NewtonStatus};
pub use switchpoly::{CuttingPlane, SwitchingBudget};
pub use timegrid::{Control, Projection, TimePartition};
