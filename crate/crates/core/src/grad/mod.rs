//! Reverse-mode differentiation over real-valued arrays.
//!
//! Values are recorded on a [`Tape`] in construction order, so the record is
//! always topologically sorted. Conventions at kinks: `d|x|/dx = 0` at zero
//! and `clamp` counts its bounds as interior (derivative 1). Divisions by
//! values smaller than [`DIV_GUARD`] in magnitude are clamped with the sign
//! preserved and counted in [`Tape::guard_events`].

mod check;
mod shape;
mod tape;

pub use check::{grad_check, grad_check_excluding, GradCheck};
pub use tape::{CustomOp, GradError, GradResult, Gradients, Node, Tape, DIV_GUARD};

#[cfg(test)]
mod tests;
