//! Minimal dense tensor library with a reverse-mode tape.
//!
//! Gradients can be taken with `create_graph = true`, which records the
//! backward pass itself on the tape so that a second `grad` call can
//! differentiate through it. Everything runs single-threaded in `f64`, which
//! makes results bit-reproducible for a given sequence of operations.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::{ConvGeometry, Tensor};
