//! A brute-force model of policy satisfaction.
//!
//! A [`World`] is everything a policy can observe about a program and its
//! request: the interval each column is provably filtered to, which columns
//! were redacted, the aggregation floor, the differential-privacy budget
//! spent, the set of touched columns, the requester's roles, and the declared
//! purpose. Given a world, whether a requirement is discharged is a one-line
//! check, and a policy is satisfied iff some clause has every requirement
//! discharged.
//!
//! [`world_space`] enumerates enough worlds to be *exact* for the policies it
//! is given: for every mentioned column it includes the full intersection
//! closure of the mentioned intervals (plus "unfiltered"), for schemas the
//! intersection closure of mentioned column sets (plus "touched something
//! unmentioned"), the cross product of mentioned ε and δ values (plus "no
//! noise"), and the power sets of mentioned roles and redacted columns. Any
//! evidence a normalized clause could demand appears as one of these worlds,
//! which is what makes truth-table comparison a complete oracle and not just
//! a soundness smoke test.

use std::collections::{BTreeMap, BTreeSet};

use capsuleguard::policy::{Interval, Policy, Real, Requirement};

/// One point of program/request evidence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct World {
    /// Per-column guaranteed filter; absent means unconstrained. Intervals
    /// here are never empty: the model deliberately ignores the degenerate
    /// "program filtered everything away" vacuity, as the analyzer does.
    pub filters: BTreeMap<String, Interval>,
    /// Columns whose raw values are unrecoverable from the output.
    pub redacted: BTreeSet<String>,
    /// Every released value aggregates at least this many rows.
    pub agg_floor: u64,
    /// Noise actually applied, if any.
    pub dp: Option<(Real, Real)>,
    /// Columns the program touched; `None` means it touched at least one
    /// column outside every schema the policies mention, so no SCHEMA
    /// requirement can hold.
    pub touched: Option<BTreeSet<String>>,
    /// Roles held by the requester.
    pub roles: BTreeSet<String>,
    /// Purpose declared by the request.
    pub purpose: Option<String>,
}

impl World {
    /// The world with no evidence at all: nothing filtered, nothing redacted,
    /// no aggregation, no noise, unknown columns touched, no roles, no
    /// purpose. Exactly the satisfied policy holds here.
    pub fn bottom() -> World {
        World {
            filters: BTreeMap::new(),
            redacted: BTreeSet::new(),
            agg_floor: 0,
            dp: None,
            touched: None,
            roles: BTreeSet::new(),
            purpose: None,
        }
    }

    /// Is `req` discharged by this much evidence?
    pub fn discharges(&self, req: &Requirement) -> bool {
        match req {
            Requirement::Filter { column, interval } => match self.filters.get(column) {
                Some(ev) => ev.is_subset(interval),
                None => interval.is_full(),
            },
            Requirement::Redact(c) => self.redacted.contains(c),
            Requirement::Aggregate(k) => self.agg_floor >= *k,
            Requirement::Dp { epsilon, delta } => match &self.dp {
                Some((e, d)) => e <= epsilon && d <= delta,
                None => false,
            },
            Requirement::Schema(cols) => match &self.touched {
                Some(t) => t.is_subset(cols),
                None => false,
            },
            Requirement::Role(r) => self.roles.contains(r),
            Requirement::Purpose(p) => self.purpose.as_deref() == Some(p.as_str()),
        }
    }
}

/// Truth-table satisfaction: some clause has all requirements discharged.
pub fn sat(policy: &Policy, world: &World) -> bool {
    policy
        .clauses()
        .iter()
        .any(|c| c.requirements().all(|r| world.discharges(r)))
}

/// Satisfaction where requirements in `assumed` count as discharged outright.
/// This is the specification of the residual: `residual_with(p, ∈assumed)`
/// must hold in exactly the worlds where `p` holds under these assumptions.
pub fn sat_assuming(policy: &Policy, world: &World, assumed: &BTreeSet<Requirement>) -> bool {
    policy
        .clauses()
        .iter()
        .any(|c| c.requirements().all(|r| assumed.contains(r) || world.discharges(r)))
}

/// Everything the given policies mention, bucketed by evidence component.
#[derive(Default)]
struct Mentioned {
    filter_intervals: BTreeMap<String, Vec<Interval>>,
    redact_cols: BTreeSet<String>,
    agg_widths: BTreeSet<u64>,
    epsilons: BTreeSet<Real>,
    deltas: BTreeSet<Real>,
    schemas: Vec<BTreeSet<String>>,
    roles: BTreeSet<String>,
    purposes: BTreeSet<String>,
}

fn scan(policies: &[&Policy]) -> Mentioned {
    let mut m = Mentioned::default();
    for p in policies {
        for clause in p.clauses() {
            for r in clause.requirements() {
                match r {
                    Requirement::Filter { column, interval } => {
                        m.filter_intervals.entry(column.clone()).or_default().push(interval.clone());
                    }
                    Requirement::Redact(c) => {
                        m.redact_cols.insert(c.clone());
                    }
                    Requirement::Aggregate(k) => {
                        m.agg_widths.insert(*k);
                    }
                    Requirement::Dp { epsilon, delta } => {
                        m.epsilons.insert(*epsilon);
                        m.deltas.insert(*delta);
                    }
                    Requirement::Schema(cols) => m.schemas.push(cols.clone()),
                    Requirement::Role(r) => {
                        m.roles.insert(r.clone());
                    }
                    Requirement::Purpose(p) => {
                        m.purposes.insert(p.clone());
                    }
                }
            }
        }
    }
    m
}

/// Closure of a set of intervals under pairwise intersection (empty results
/// discarded — empty evidence is outside the model).
fn interval_closure(intervals: &[Interval]) -> Vec<Interval> {
    let mut closed: Vec<Interval> = Vec::new();
    for iv in intervals {
        if !closed.contains(iv) {
            closed.push(iv.clone());
        }
    }
    loop {
        let mut added = false;
        for i in 0..closed.len() {
            for j in (i + 1)..closed.len() {
                if let Some(meet) = closed[i].intersect(&closed[j]) {
                    if !closed.contains(&meet) {
                        closed.push(meet);
                        added = true;
                    }
                }
            }
        }
        if !added {
            return closed;
        }
    }
}

/// Closure of column sets under intersection; empty sets are dropped (no
/// satisfiable clause demands an empty schema).
fn schema_closure(schemas: &[BTreeSet<String>]) -> Vec<BTreeSet<String>> {
    let mut closed: Vec<BTreeSet<String>> = Vec::new();
    for s in schemas {
        if !closed.contains(s) {
            closed.push(s.clone());
        }
    }
    loop {
        let mut added = false;
        for i in 0..closed.len() {
            for j in (i + 1)..closed.len() {
                let meet: BTreeSet<String> = closed[i].intersection(&closed[j]).cloned().collect();
                if !meet.is_empty() && !closed.contains(&meet) {
                    closed.push(meet);
                    added = true;
                }
            }
        }
        if !added {
            return closed;
        }
    }
}

fn power_set(items: &BTreeSet<String>) -> Vec<BTreeSet<String>> {
    let items: Vec<&String> = items.iter().collect();
    let mut out = Vec::with_capacity(1 << items.len());
    for mask in 0u32..(1 << items.len()) {
        out.push(
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| (*s).clone())
                .collect(),
        );
    }
    out
}

/// Enumerates every world distinguishable by the given policies. Exact for
/// policies whose atoms it was built from — see the module docs.
pub fn world_space(policies: &[&Policy]) -> Vec<World> {
    let m = scan(policies);

    // Per-column filter options: unfiltered, or any closure interval.
    let filter_options: Vec<(String, Vec<Option<Interval>>)> = m
        .filter_intervals
        .iter()
        .map(|(col, ivs)| {
            let mut opts: Vec<Option<Interval>> = vec![None];
            opts.extend(interval_closure(ivs).into_iter().map(Some));
            (col.clone(), opts)
        })
        .collect();

    let redact_options = power_set(&m.redact_cols);
    let mut agg_options: Vec<u64> = vec![0];
    agg_options.extend(m.agg_widths.iter().copied());

    let mut dp_options: Vec<Option<(Real, Real)>> = vec![None];
    for e in &m.epsilons {
        for d in &m.deltas {
            dp_options.push(Some((*e, *d)));
        }
    }

    let mut touched_options: Vec<Option<BTreeSet<String>>> = vec![None];
    touched_options.extend(schema_closure(&m.schemas).into_iter().map(Some));

    let role_options = power_set(&m.roles);
    let mut purpose_options: Vec<Option<String>> = vec![None];
    purpose_options.extend(m.purposes.iter().cloned().map(Some));

    // Cross product, filters last so the innermost loop is the recursion.
    let mut worlds = Vec::new();
    for redacted in &redact_options {
        for agg_floor in &agg_options {
            for dp in &dp_options {
                for touched in &touched_options {
                    for roles in &role_options {
                        for purpose in &purpose_options {
                            let base = World {
                                filters: BTreeMap::new(),
                                redacted: redacted.clone(),
                                agg_floor: *agg_floor,
                                dp: *dp,
                                touched: touched.clone(),
                                roles: roles.clone(),
                                purpose: purpose.clone(),
                            };
                            extend_filters(&filter_options, 0, base, &mut worlds);
                        }
                    }
                }
            }
        }
    }
    worlds
}

fn extend_filters(
    options: &[(String, Vec<Option<Interval>>)],
    idx: usize,
    partial: World,
    out: &mut Vec<World>,
) {
    if idx == options.len() {
        out.push(partial);
        return;
    }
    let (col, opts) = &options[idx];
    for opt in opts {
        let mut next = partial.clone();
        if let Some(iv) = opt {
            next.filters.insert(col.clone(), iv.clone());
        }
        extend_filters(options, idx + 1, next, out);
    }
}

/// Truth-table implication over the joint world space.
pub fn implies_oracle(p: &Policy, q: &Policy) -> bool {
    world_space(&[p, q]).iter().all(|w| !sat(p, w) || sat(q, w))
}

/// Truth-table equivalence.
pub fn equivalent_oracle(p: &Policy, q: &Policy) -> bool {
    world_space(&[p, q]).iter().all(|w| sat(p, w) == sat(q, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Policy {
        Policy::parse(text).unwrap()
    }

    #[test]
    fn bottom_world_satisfies_only_the_empty_policy() {
        let bottom = World::bottom();
        assert!(sat(&Policy::satisfied(), &bottom));
        assert!(!sat(&Policy::unsatisfiable(), &bottom));
        assert!(!sat(&p("ALLOW ROLE doctor"), &bottom));
        assert!(!sat(&p("ALLOW FILTER age IN [18, inf)"), &bottom));
    }

    #[test]
    fn world_space_is_exact_enough_to_separate_filters() {
        let strict = p("ALLOW FILTER age IN [21, inf)");
        let loose = p("ALLOW FILTER age IN [18, inf)");
        assert!(implies_oracle(&strict, &loose));
        assert!(!implies_oracle(&loose, &strict));
        // ... and agrees with the syntactic check on these.
        assert!(strict.implies(&loose));
        assert!(!loose.implies(&strict));
    }

    #[test]
    fn oracle_sees_combined_evidence() {
        let a = p("ALLOW ROLE doctor");
        let b = p("ALLOW PRIVACY AGGREGATE(10)");
        let both = a.combine(&b).unwrap();
        for w in world_space(&[&a, &b, &both]) {
            assert_eq!(sat(&both, &w), sat(&a, &w) && sat(&b, &w));
        }
    }

    #[test]
    fn intersection_closure_covers_merged_clauses() {
        // combine intersects the two age intervals; the oracle must have a
        // world carrying exactly that intersection to stay complete.
        let a = p("ALLOW FILTER age IN [18, 65]");
        let b = p("ALLOW FILTER age IN [21, inf)");
        let both = a.combine(&b).unwrap();
        assert_eq!(both.to_string(), "ALLOW FILTER age IN [21, 65]");
        assert!(implies_oracle(&both, &a));
        assert!(implies_oracle(&both, &b));
        assert!(!implies_oracle(&a, &both));
    }
}
