//! Policy-carrying data capsules.
//!
//! This crate implements three cooperating pieces:
//!
//! 1. **A policy language** ([`policy`]): data owners write usage policies as a
//!    disjunction of requirement clauses ("allow this use if the program filters
//!    to adults AND aggregates over at least 100 people, OR if the requester is
//!    a doctor"). Policies form a lattice: they can be combined, compared for
//!    strength, and reduced by what a program already guarantees.
//! 2. **A program analyzer** ([`frontend`], [`ir`], [`analyzer`]): analysts
//!    submit small dataframe programs. A static pass tracks what each value
//!    guarantees (filters applied, columns redacted, aggregation width,
//!    differential-privacy noise) and discharges policy requirements the
//!    program provably meets. Whatever is left over is the *residual policy*.
//! 3. **A capsule store** ([`manager`], [`service`], [`executor`], [`table`]):
//!    data is held encrypted next to its policy. Compliant programs run and
//!    release plaintext results; non-compliant programs still run, but their
//!    outputs are sealed into new capsules guarded by the residual policy.
//!
//! The [`manager::Manager`] type ties the pieces together; the `capsuleguard`
//! binary and the HTTP service in [`service`] are thin adapters over it.
//!
//! # A three-minute tour
//!
//! ```
//! use capsuleguard::policy::Policy;
//!
//! // An owner protects a payments table: merchant names must be hashed,
//! // results must aggregate at least 10 people, and noise must be added.
//! let policy = Policy::parse(
//!     "ALLOW REDACT merchant AND PRIVACY AGGREGATE(10) AND PRIVACY DP(1.0, 0)",
//! )?;
//!
//! // An analyst's program is parsed and analyzed against that policy.
//! let program = capsuleguard::frontend::parse_program(r#"
//! df = read_capsule("payments")
//! safe = hash_column(df, "merchant")
//! by_cat = safe.groupby("category").agg({"amount": "mean"})
//! big = filter_groups(by_cat, min_size=10)
//! noisy = laplace(big, epsilon=1.0, sensitivity=1.0)
//! output(noisy)
//! "#)?;
//!
//! let capsules = [("payments".to_string(), capsuleguard::analyzer::CapsuleFacts {
//!     policy,
//!     schema: ["merchant", "category", "amount"].iter().map(|s| s.to_string()).collect(),
//!     row_count: Some(200),
//!     analysis_state: None,
//! })].into_iter().collect();
//!
//! let report = capsuleguard::analyzer::analyze(
//!     &program,
//!     &capsules,
//!     &capsuleguard::analyzer::RequestContext::default(),
//! )?;
//! assert!(report.compliant());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod analyzer;
pub mod executor;
pub mod frontend;
pub mod ir;
pub mod manager;
pub mod policy;
pub mod service;
pub mod table;

#[cfg(doctest)]
mod book;
