// NaN-rejecting `!(a < b)` checks are intentional; the expression builders
// are constructors, not operator impls.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::should_implement_trait,
    clippy::redundant_guards
)]

pub mod analysis;
pub mod config;
pub mod curve;
pub mod expr;
pub mod io;
pub mod model;
pub mod ode;
pub mod pipeline;
pub mod selfsimilar;
pub mod solver;
