//! Truncated Fourier calculus on the torus `T^n`: scalar series, operator
//! series in the eigenbasis of the unperturbed part, the diagonal part
//! `diag(λ_i + μ_i(φ))`, and the weighted norms built on them.

mod diagonal;
mod grid;
pub mod norms;
mod operator;
mod serial;
mod series;

pub use diagonal::DiagonalPart;
pub use grid::{GridPlan, ModeBox};
pub use norms::{delta_norm, g_norm, lipschitz_seminorm, plain_norm};
pub(crate) use operator::assemble_points;
pub use operator::{GridOperator, OperatorSeries};
pub use serial::{CoeffDocument, EntryDocument, SeriesDocument};
pub use series::TorusSeries;
