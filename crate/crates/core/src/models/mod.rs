//! Concrete model implementations.

pub mod elementary;
pub mod hh;
