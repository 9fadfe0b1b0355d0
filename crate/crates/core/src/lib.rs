//! Domain adaptation with a maximal domain-independent representation.
//!
//! Five networks share one forward pass per step: a generator `G` producing the
//! domain-independent representation (DIRep), an encoder `E` producing a small
//! domain-dependent one (DDRep), a decoder `F` reconstructing the input from
//! both, a classifier `C` and a domain discriminator `D` reading the DIRep.

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod networks;
pub mod trainers;

pub use error::{Error, Result, TensorError};
