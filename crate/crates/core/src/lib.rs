//! Numerical laboratory for Poisson bracket invariants of subsets of
//! two-dimensional symplectic surfaces.
//!
//! The crate computes brackets and sup-norms of smooth fields, certifies
//! lower bounds on `‖{F,G}‖` by Stokes' theorem, builds explicit pairs of
//! functions with controlled brackets, searches for upper bounds on
//! `pb3`/`pb4`/`pb_N` by constrained minimax optimization, and integrates
//! Hamiltonian flows to find chords between sets.

pub mod certificates;
pub mod cli;
pub mod constructions;
pub mod decimal;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod grid;
pub mod optimizer;
pub mod rng;
pub mod scenes;
pub mod selftest;

pub use error::{Error, Result};
