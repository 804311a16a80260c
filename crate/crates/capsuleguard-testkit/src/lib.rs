//! Test-only generators and independent oracles for `capsuleguard`.
//!
//! Nothing in this crate is used at runtime. It exists so that the main
//! crate's algebra can be checked against *independently derived* answers
//! rather than against itself:
//!
//! * [`worlds`] enumerates small "evidence worlds" — abstract summaries of
//!   what a program/request could guarantee — and evaluates policies against
//!   them by brute force. Lattice operations (`normalize`, `combine`,
//!   `implies`, `residual_with`) are compared to truth-table answers over
//!   those worlds.
//! * [`gen`] produces seeded random policies, programs, and tables with
//!   enough overlap (shared columns, nested intervals, comparable budgets)
//!   to exercise the interesting corners.
//! * [`programs`] produces seeded random dataflow programs with matching
//!   tables and program-aware policies, plus the split helper used to test
//!   that analysis composes across capsule boundaries.

pub mod gen;
pub mod programs;
pub mod worlds;
