//! Seeded random generators.
//!
//! The generators deliberately draw from *small, overlapping* universes —
//! three filterable columns, a handful of interval endpoints, comparable
//! aggregation widths and privacy budgets — because the interesting behavior
//! of the policy algebra lives in collisions: two filters on the same column,
//! one clause entailing another, a DP budget that is almost-but-not-quite
//! strong enough. Independent uniform atoms would almost never collide.

use std::collections::BTreeSet;

use capsuleguard::policy::{Clause, Interval, Policy, Requirement};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// A deterministic RNG from a case number; every generator takes `&mut impl
/// Rng` so tests can split streams however they like.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const FILTER_COLUMNS: &[&str] = &["age", "amount", "score"];
pub const ALL_COLUMNS: &[&str] = &["age", "amount", "score", "name", "merchant", "category"];
pub const ROLES: &[&str] = &["doctor", "nurse", "auditor", "analyst"];
pub const PURPOSES: &[&str] = &["research", "treatment", "billing"];
const BOUNDS: &[f64] = &[-10.0, 0.0, 0.5, 18.0, 21.0, 65.0, 100.0, 250.0];
const AGG_WIDTHS: &[u64] = &[1, 2, 5, 10, 50, 100, 250];
const EPSILONS: &[f64] = &[0.1, 0.25, 0.5, 1.0, 2.0, 4.0];
const DELTAS: &[f64] = &[0.0, 1e-6, 0.001, 0.01, 0.5];

/// A random non-empty interval with endpoints from the shared bound set.
pub fn random_interval(rng: &mut impl Rng) -> Interval {
    loop {
        let lo = if rng.gen_bool(0.25) {
            f64::NEG_INFINITY
        } else {
            *BOUNDS.choose(rng).unwrap()
        };
        let hi = if rng.gen_bool(0.25) {
            f64::INFINITY
        } else {
            *BOUNDS.choose(rng).unwrap()
        };
        if let Ok(iv) = Interval::new(lo, rng.gen_bool(0.7), hi, rng.gen_bool(0.7)) {
            return iv;
        }
    }
}

pub fn random_requirement(rng: &mut impl Rng) -> Requirement {
    match rng.gen_range(0..7) {
        0 => Requirement::filter(*FILTER_COLUMNS.choose(rng).unwrap(), random_interval(rng)).unwrap(),
        1 => {
            let n = rng.gen_range(1..=3);
            let cols: BTreeSet<&str> = ALL_COLUMNS.choose_multiple(rng, n).copied().collect();
            Requirement::schema(cols).unwrap()
        }
        2 => Requirement::redact(*ALL_COLUMNS.choose(rng).unwrap()).unwrap(),
        3 => Requirement::role(*ROLES.choose(rng).unwrap()).unwrap(),
        4 => Requirement::purpose(*PURPOSES.choose(rng).unwrap()).unwrap(),
        5 => Requirement::aggregate(*AGG_WIDTHS.choose(rng).unwrap()).unwrap(),
        _ => Requirement::dp(*EPSILONS.choose(rng).unwrap(), *DELTAS.choose(rng).unwrap()).unwrap(),
    }
}

/// Up to `n` distinct requirements sharing the overlapping universes above.
pub fn random_atom_pool(rng: &mut impl Rng, n: usize) -> Vec<Requirement> {
    let mut pool: Vec<Requirement> = Vec::new();
    // Retries bound the loop: the universes are finite, so after enough draws
    // we accept a smaller pool rather than spin.
    for _ in 0..n * 10 {
        if pool.len() == n {
            break;
        }
        let r = random_requirement(rng);
        if !pool.contains(&r) {
            pool.push(r);
        }
    }
    pool
}

/// A random (possibly unnormalized) policy built from the given atoms.
/// Occasionally returns the satisfied or unsatisfiable constants, which the
/// lattice laws must treat as identity and absorbing elements.
pub fn random_policy_from_pool(rng: &mut impl Rng, pool: &[Requirement]) -> Policy {
    if rng.gen_bool(0.05) {
        return Policy::satisfied();
    }
    if rng.gen_bool(0.05) {
        return Policy::unsatisfiable();
    }
    let n_clauses = rng.gen_range(1..=3);
    let clauses = (0..n_clauses)
        .map(|_| {
            let n_atoms = rng.gen_range(1..=3.min(pool.len()));
            Clause::new(pool.choose_multiple(rng, n_atoms).cloned())
        })
        .collect();
    Policy::new(clauses)
}

/// A pair of policies drawing from one shared pool of at most `atom_budget`
/// distinct requirements (so truth-table world spaces stay small).
pub fn random_policy_pair(rng: &mut impl Rng, atom_budget: usize) -> (Policy, Policy) {
    let pool = random_atom_pool(rng, atom_budget);
    (
        random_policy_from_pool(rng, &pool),
        random_policy_from_pool(rng, &pool),
    )
}

/// A single random policy over its own small pool.
pub fn random_policy(rng: &mut impl Rng, atom_budget: usize) -> Policy {
    let pool = random_atom_pool(rng, atom_budget);
    random_policy_from_pool(rng, &pool)
}

/// Keeps each item independently with probability `keep`.
pub fn random_subset<T: Clone>(rng: &mut impl Rng, items: &[T], keep: f64) -> Vec<T> {
    items.iter().filter(|_| rng.gen_bool(keep)).cloned().collect()
}
