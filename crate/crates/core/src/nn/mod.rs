//! Feedforward network evaluation and reduction of output properties to a
//! single signed margin.

mod compose;
mod network;
mod property;

pub use compose::Expr;
pub use network::{load_network, Activation, Layer, LayerFile, Network, NetworkFile};
pub use property::{Constraint, FnLabeler, Labeler, MarginLabeler, OutputProperty};
