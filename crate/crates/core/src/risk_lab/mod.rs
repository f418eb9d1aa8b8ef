//! Simulation laboratory for the finite-sample risk identities of the
//! adaptive procedure.

pub mod experiments;
pub mod functions;
pub mod identities;
pub mod scenario;

pub use experiments::*;
pub use functions::TestFunction;
pub use identities::*;
pub use scenario::{NoiseSpec, Prepared, SimulationScenario};
