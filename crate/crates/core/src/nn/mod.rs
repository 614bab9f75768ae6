//! Layers, parameters, differentiation and optimisation.

pub mod adam;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use graph::{Eager, Graph};
pub use ops::Padding;
pub use params::{he_normal, Gradients, Param, ParameterSet};
pub use tape::{Grads, Tape, Var};
