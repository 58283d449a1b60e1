//! Reduction of quasi-periodically forced linear systems
//! `i ẋ = (A + εP(ωt)) x` to diagonal constant-coefficient form by a KAM
//! iteration at finite truncation, together with the independent checks
//! (direct propagation, monodromy spectra, norm inequalities) used to
//! validate every step.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diophantine;
pub mod error;
pub mod floquet;
pub mod homological;
pub mod io;
pub mod kam;
pub mod linalg;
pub mod oscillator;
pub mod scenario;
pub mod torus;

pub use error::{Error, Result};
