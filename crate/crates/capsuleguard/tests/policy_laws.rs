//! Algebraic laws of the policy lattice, checked two ways:
//!
//! * structurally (idempotence, commutativity, identities), and
//! * against the truth-table oracle in `capsuleguard_testkit::worlds`, which
//!   evaluates policies by brute force over every distinguishable evidence
//!   world. The oracle knows nothing about normalization or clause
//!   entailment, so agreement is real evidence the algebra is correct.
//!
//! The `implies` check is equality, not one-sided soundness: the syntactic
//! comparison is designed to be *exact* on canonicalized clauses, and these
//! tests would catch any gap in that argument.

use std::collections::BTreeSet;

use capsuleguard::policy::{Policy, Requirement};
use capsuleguard_testkit::{gen, worlds};
use proptest::prelude::*;

fn pair(seed: u64) -> (Policy, Policy) {
    gen::random_policy_pair(&mut gen::rng(seed), 8)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn print_parse_round_trips_to_normal_form(seed in any::<u64>()) {
        let p = gen::random_policy(&mut gen::rng(seed), 8);
        let printed = p.to_string();
        let reparsed = Policy::parse(&printed).unwrap();
        prop_assert_eq!(&reparsed, &p.normalize(), "printed: {}", printed);
        // Printing is a fixpoint after one round.
        prop_assert_eq!(reparsed.to_string(), printed);
    }

    #[test]
    fn normalize_is_idempotent(seed in any::<u64>()) {
        let p = gen::random_policy(&mut gen::rng(seed), 8);
        let once = p.normalize();
        prop_assert_eq!(once.normalize(), once);
    }

    #[test]
    fn normalize_preserves_meaning(seed in any::<u64>()) {
        let p = gen::random_policy(&mut gen::rng(seed), 8);
        let n = p.normalize();
        for w in worlds::world_space(&[&p, &n]) {
            prop_assert_eq!(worlds::sat(&p, &w), worlds::sat(&n, &w), "world: {:?}", w);
        }
    }

    #[test]
    fn implies_matches_the_truth_table_exactly(seed in any::<u64>()) {
        let (p, q) = pair(seed);
        prop_assert_eq!(
            p.implies(&q),
            worlds::implies_oracle(&p, &q),
            "p: {} / q: {}", p, q,
        );
    }

    #[test]
    fn combine_is_conjunction(seed in any::<u64>()) {
        let (p, q) = pair(seed);
        let c = p.combine(&q).unwrap();
        for w in worlds::world_space(&[&p, &q, &c]) {
            prop_assert_eq!(
                worlds::sat(&c, &w),
                worlds::sat(&p, &w) && worlds::sat(&q, &w),
                "combined: {} / world: {:?}", c, w,
            );
        }
        // The conjunction is below both operands in the strength order.
        prop_assert!(c.implies(&p));
        prop_assert!(c.implies(&q));
    }

    #[test]
    fn combine_is_commutative_and_associative(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let pool = gen::random_atom_pool(&mut rng, 8);
        let p = gen::random_policy_from_pool(&mut rng, &pool);
        let q = gen::random_policy_from_pool(&mut rng, &pool);
        let r = gen::random_policy_from_pool(&mut rng, &pool);
        prop_assert_eq!(p.combine(&q).unwrap(), q.combine(&p).unwrap());
        prop_assert_eq!(
            p.combine(&q).unwrap().combine(&r).unwrap(),
            p.combine(&q.combine(&r).unwrap()).unwrap(),
        );
        // Identity and absorbing elements.
        prop_assert_eq!(p.combine(&Policy::satisfied()).unwrap(), p.normalize());
        prop_assert!(p.combine(&Policy::unsatisfiable()).unwrap().is_unsatisfiable());
    }

    #[test]
    fn implies_is_a_partial_order_up_to_printing(seed in any::<u64>()) {
        let (p, q) = pair(seed);
        prop_assert!(p.implies(&p));
        prop_assert!(p.implies(&Policy::satisfied()));
        prop_assert!(Policy::unsatisfiable().implies(&p));
        if p.implies(&q) && q.implies(&p) {
            // Mutual implication collapses to identical canonical text.
            prop_assert_eq!(p.to_string(), q.to_string());
        }
    }

    #[test]
    fn satisfied_and_unsatisfiable_match_the_bottom_world(seed in any::<u64>()) {
        let p = gen::random_policy(&mut gen::rng(seed), 8);
        prop_assert_eq!(p.is_satisfied(), worlds::sat(&p, &worlds::World::bottom()));
        let all_false = worlds::world_space(&[&p]).iter().all(|w| !worlds::sat(&p, w));
        prop_assert_eq!(p.is_unsatisfiable(), all_false);
    }

    #[test]
    fn residual_is_satisfaction_under_assumptions(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let p = gen::random_policy(&mut rng, 8).normalize();
        // Assume a random subset of the policy's own atoms is discharged.
        let atoms: Vec<Requirement> = p
            .clauses()
            .iter()
            .flat_map(|c| c.requirements().cloned())
            .collect();
        let assumed: BTreeSet<Requirement> =
            gen::random_subset(&mut rng, &atoms, 0.5).into_iter().collect();
        let residual = p.residual_with(|r| assumed.contains(r));
        for w in worlds::world_space(&[&p, &residual]) {
            prop_assert_eq!(
                worlds::sat(&residual, &w),
                worlds::sat_assuming(&p, &w, &assumed),
                "p: {} / residual: {} / assumed: {:?}", p, residual, assumed,
            );
        }
    }
}

/// The random-subset law above, made exhaustive: for small policies, *every*
/// one of the up-to-2⁸ discharged subsets must make the residual agree with
/// satisfaction-under-assumptions on every world.
#[test]
fn residual_matches_assumption_semantics_for_every_subset() {
    for seed in 0..40u64 {
        let p = gen::random_policy(&mut gen::rng(seed), 8).normalize();
        let atoms: Vec<Requirement> = p
            .clauses()
            .iter()
            .flat_map(|c| c.requirements().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        assert!(atoms.len() <= 8, "seed {seed}: atom budget exceeded");
        for mask in 0u32..(1 << atoms.len()) {
            let assumed: BTreeSet<Requirement> = atoms
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, r)| r.clone())
                .collect();
            let residual = p.residual_with(|r| assumed.contains(r));
            for w in worlds::world_space(&[&p, &residual]) {
                assert_eq!(
                    worlds::sat(&residual, &w),
                    worlds::sat_assuming(&p, &w, &assumed),
                    "seed {seed}: p: {p} / residual: {residual} / assumed: {assumed:?} / \
                     world: {w:?}",
                );
            }
        }
    }
}

// Non-random spot checks that pin behavior the generators may hit rarely.

#[test]
fn residual_of_fully_discharged_policy_is_satisfied() {
    let p = Policy::parse("ALLOW ROLE doctor AND PURPOSE treatment").unwrap();
    let all: BTreeSet<Requirement> = p
        .clauses()
        .iter()
        .flat_map(|c| c.requirements().cloned())
        .collect();
    assert!(p.residual_with(|r| all.contains(r)).is_satisfied());
}

#[test]
fn residual_never_discharges_across_clauses() {
    // Discharging the doctor role must not weaken the aggregate arm.
    let p = Policy::parse("ALLOW ROLE doctor OR ALLOW PRIVACY AGGREGATE(100)").unwrap();
    let residual = p.residual_with(|r| matches!(r, Requirement::Role(_)));
    assert!(residual.is_satisfied()); // the doctor arm is now empty
}

#[test]
fn implies_distinguishes_open_and_closed_endpoints() {
    let open = Policy::parse("ALLOW FILTER age IN (18, inf)").unwrap();
    let closed = Policy::parse("ALLOW FILTER age IN [18, inf)").unwrap();
    assert!(open.implies(&closed));
    assert!(!closed.implies(&open));
    assert!(worlds::implies_oracle(&open, &closed));
    assert!(!worlds::implies_oracle(&closed, &open));
}
