//! A small reverse-mode autodiff engine over `ndarray`, sized for the
//! networks in this crate: dynamic graphs rebuilt every step, f64 throughout,
//! deterministic execution.

mod conv;
mod params;
mod tape;

pub use params::{Adam, ParamStore};
pub use tape::{Gradients, Tape, Var};
