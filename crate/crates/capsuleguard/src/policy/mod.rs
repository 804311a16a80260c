//! The policy language: usage policies attached to data capsules.
//!
//! A [`Policy`] is a disjunction of [`Clause`]s; a clause is a conjunction of
//! [`Requirement`]s. A program may use the data if it discharges *every*
//! requirement of *at least one* clause. Two constants fall out of that shape:
//! a policy with a single empty clause is **satisfied** (nothing left to
//! prove, printed `EMPTY`), and a policy with no clauses at all is
//! **unsatisfiable** (no way to comply).
//!
//! Policies form a lattice-like algebra:
//!
//! * [`Policy::normalize`] rewrites to a canonical form, so that equal
//!   meaning ⇒ equal text,
//! * [`Policy::combine`] conjoins two policies (used when a program reads
//!   several capsules: every source's policy must hold),
//! * [`Policy::implies`] compares strength (`p.implies(q)` means satisfying
//!   `p` always satisfies `q`), and
//! * [`Policy::residual_with`] removes requirements a program already
//!   guarantees, leaving what still stands between the result and release.
//!
//! ```
//! use capsuleguard::policy::Policy;
//!
//! let p = Policy::parse("ALLOW ROLE doctor OR ALLOW PRIVACY AGGREGATE(100)")?;
//! let q = Policy::parse("ALLOW PRIVACY AGGREGATE(250) AND FILTER age IN [18, inf)")?;
//!
//! // q is stricter than the aggregate arm of p, so q implies p.
//! assert!(q.implies(&p));
//! assert!(!p.implies(&q));
//!
//! // Reading both capsules at once means meeting both policies. Note how the
//! // doctor arm is absorbed: paired with q's only clause it became strictly
//! // harder to meet than the aggregate arm, so the disjunction drops it.
//! let both = p.combine(&q)?;
//! assert_eq!(
//!     both.to_string(),
//!     "ALLOW FILTER age IN [18, inf) AND PRIVACY AGGREGATE(250)",
//! );
//! # Ok::<(), capsuleguard::policy::PolicyError>(())
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

mod interval;
mod parse;

pub use interval::{Interval, IntervalError, NotANumber, Real};

/// Hard cap on the clause cross-product in [`Policy::combine`]. Policies this
/// large are almost certainly adversarial; refusing keeps analysis linear.
pub const CLAUSE_CAP: usize = 1024;

/// Reserved words of the policy grammar. Identifiers (column names, roles,
/// purposes) may not collide with these, which keeps printing unambiguous.
pub const KEYWORDS: &[&str] = &[
    "EMPTY", "ALLOW", "OR", "AND", "SCHEMA", "FILTER", "IN", "REDACT", "ROLE",
    "PURPOSE", "PRIVACY", "AGGREGATE", "DP", "inf",
];

/// `[A-Za-z_][A-Za-z0-9_]*`, excluding reserved words.
pub fn is_valid_ident(s: &str) -> bool {
    let mut chars = s.chars();
    let head_ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&s)
}

/// Errors from parsing, constructing, or combining policies.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    /// The text did not match the grammar.
    #[error("{line}:{col}: expected {}, found {found}", expected.join(" | "))]
    Syntax {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    /// The text matched the grammar but violated a value invariant
    /// (empty interval, epsilon ≤ 0, aggregate width of 0, …).
    #[error("{message}")]
    Semantic { message: String },
    /// `combine` would have produced more than [`CLAUSE_CAP`] clauses.
    #[error("combined policy would have {clauses} clauses, exceeding the cap of {cap}")]
    Size { clauses: usize, cap: usize },
}

impl PolicyError {
    fn semantic(message: impl Into<String>) -> PolicyError {
        PolicyError::Semantic { message: message.into() }
    }
}

/// One atomic obligation inside a clause.
///
/// Requirements order and compare by their printed form; the derived
/// structural equality coincides with printed equality because printing is
/// injective on canonical values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Requirement {
    /// Only the named columns may be read or otherwise touched.
    Schema(BTreeSet<String>),
    /// Every contributing row must have `column` inside `interval`.
    Filter { column: String, interval: Interval },
    /// The named column's raw values must not be derivable from the output.
    Redact(String),
    /// The requesting principal must hold this role.
    Role(String),
    /// The request must declare this purpose.
    Purpose(String),
    /// Every released value must aggregate at least this many rows.
    Aggregate(u64),
    /// The release must be (ε, δ)-differentially private at least this strong.
    Dp { epsilon: Real, delta: Real },
}

impl Requirement {
    pub fn schema<I, S>(columns: I) -> Result<Requirement, PolicyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let cols: BTreeSet<String> = columns.into_iter().map(Into::into).collect();
        if cols.is_empty() {
            return Err(PolicyError::semantic("SCHEMA requires at least one column"));
        }
        for c in &cols {
            check_ident(c, "column")?;
        }
        Ok(Requirement::Schema(cols))
    }

    pub fn filter(column: impl Into<String>, interval: Interval) -> Result<Requirement, PolicyError> {
        let column = column.into();
        check_ident(&column, "column")?;
        Ok(Requirement::Filter { column, interval })
    }

    pub fn redact(column: impl Into<String>) -> Result<Requirement, PolicyError> {
        let column = column.into();
        check_ident(&column, "column")?;
        Ok(Requirement::Redact(column))
    }

    pub fn role(role: impl Into<String>) -> Result<Requirement, PolicyError> {
        let role = role.into();
        check_ident(&role, "role")?;
        Ok(Requirement::Role(role))
    }

    pub fn purpose(purpose: impl Into<String>) -> Result<Requirement, PolicyError> {
        let purpose = purpose.into();
        check_ident(&purpose, "purpose")?;
        Ok(Requirement::Purpose(purpose))
    }

    pub fn aggregate(min_rows: u64) -> Result<Requirement, PolicyError> {
        if min_rows < 1 {
            return Err(PolicyError::semantic("AGGREGATE width must be at least 1"));
        }
        Ok(Requirement::Aggregate(min_rows))
    }

    pub fn dp(epsilon: f64, delta: f64) -> Result<Requirement, PolicyError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(PolicyError::semantic(format!(
                "DP epsilon must be finite and positive, got {epsilon}"
            )));
        }
        if !(delta.is_finite() && (0.0..=1.0).contains(&delta)) {
            return Err(PolicyError::semantic(format!(
                "DP delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(Requirement::Dp {
            epsilon: Real::new(epsilon).expect("finite"),
            delta: Real::new(delta).expect("finite"),
        })
    }

    /// Parses a single requirement, e.g. `"PRIVACY DP(1.0, 1e-6)"`.
    pub fn parse(text: &str) -> Result<Requirement, PolicyError> {
        parse::parse_requirement(text)
    }

    /// The strength preorder: `self.subsumes(r)` means any program/request
    /// meeting `self` also meets `r`. Requirements of different kinds are
    /// never comparable.
    pub fn subsumes(&self, weaker: &Requirement) -> bool {
        use Requirement::*;
        match (self, weaker) {
            (Schema(a), Schema(b)) => a.is_subset(b),
            (Filter { column: c1, interval: i1 }, Filter { column: c2, interval: i2 }) => {
                c1 == c2 && i1.is_subset(i2)
            }
            (Redact(a), Redact(b)) => a == b,
            (Role(a), Role(b)) => a == b,
            (Purpose(a), Purpose(b)) => a == b,
            (Aggregate(k1), Aggregate(k2)) => k1 >= k2,
            (Dp { epsilon: e1, delta: d1 }, Dp { epsilon: e2, delta: d2 }) => e1 <= e2 && d1 <= d2,
            _ => false,
        }
    }
}

fn check_ident(s: &str, what: &str) -> Result<(), PolicyError> {
    if is_valid_ident(s) {
        Ok(())
    } else {
        Err(PolicyError::semantic(format!("invalid {what} name {s:?}")))
    }
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Requirement::Schema(cols) => {
                write!(f, "SCHEMA(")?;
                for (i, c) in cols.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
            Requirement::Filter { column, interval } => write!(f, "FILTER {column} IN {interval}"),
            Requirement::Redact(c) => write!(f, "REDACT {c}"),
            Requirement::Role(r) => write!(f, "ROLE {r}"),
            Requirement::Purpose(p) => write!(f, "PURPOSE {p}"),
            Requirement::Aggregate(k) => write!(f, "PRIVACY AGGREGATE({k})"),
            Requirement::Dp { epsilon, delta } => write!(f, "PRIVACY DP({epsilon}, {delta})"),
        }
    }
}

impl PartialOrd for Requirement {
    fn partial_cmp(&self, other: &Requirement) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Requirement {
    /// Lexicographic by printed form — this is what makes normalized output
    /// deterministic and human-diffable.
    fn cmp(&self, other: &Requirement) -> std::cmp::Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl Serialize for Requirement {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Requirement {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Requirement, D::Error> {
        let s = String::deserialize(deserializer)?;
        Requirement::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A conjunction of requirements. The empty clause is trivially met.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Clause(BTreeSet<Requirement>);

impl Clause {
    pub fn new(requirements: impl IntoIterator<Item = Requirement>) -> Clause {
        Clause(requirements.into_iter().collect())
    }

    pub fn requirements(&self) -> impl Iterator<Item = &Requirement> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, r: &Requirement) -> bool {
        self.0.contains(r)
    }

    /// Clause entailment: meeting `self` is enough to meet `weaker` when every
    /// requirement of `weaker` has an at-least-as-strict counterpart here.
    pub fn entails(&self, weaker: &Clause) -> bool {
        weaker.0.iter().all(|w| self.0.iter().any(|s| s.subsumes(w)))
    }

    /// Canonicalizes one clause: merges same-kind requirements (intersect
    /// filters per column, intersect schemas, keep the largest aggregate
    /// width, keep the componentwise-smallest DP budget) and drops vacuous
    /// atoms. Returns `None` when the conjunction is unsatisfiable.
    fn canonicalize(&self) -> Option<Clause> {
        let mut filters: BTreeMap<&str, Interval> = BTreeMap::new();
        let mut schema: Option<BTreeSet<String>> = None;
        let mut aggregate: Option<u64> = None;
        let mut dp: Option<(Real, Real)> = None;
        let mut purposes: BTreeSet<&str> = BTreeSet::new();
        let mut rest: BTreeSet<Requirement> = BTreeSet::new();

        for r in &self.0 {
            match r {
                Requirement::Purpose(p) => {
                    // A request declares exactly one purpose, so demanding
                    // two different ones is as impossible as an empty filter.
                    purposes.insert(p);
                    if purposes.len() > 1 {
                        return None;
                    }
                    rest.insert(r.clone());
                }
                Requirement::Filter { column, interval } => match filters.entry(column) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(interval.clone());
                    }
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        // Conflicting filters on one column make the clause
                        // impossible to discharge: no row set satisfies both.
                        match e.get().intersect(interval) {
                            Some(iv) => {
                                e.insert(iv);
                            }
                            None => return None,
                        }
                    }
                },
                Requirement::Schema(cols) => {
                    let merged: BTreeSet<String> = match &schema {
                        None => cols.clone(),
                        Some(prev) => prev.intersection(cols).cloned().collect(),
                    };
                    if merged.is_empty() {
                        // "Touch no column at all" admits no program.
                        return None;
                    }
                    schema = Some(merged);
                }
                Requirement::Aggregate(k) => {
                    aggregate = Some(aggregate.map_or(*k, |prev: u64| prev.max(*k)));
                }
                Requirement::Dp { epsilon, delta } => {
                    dp = Some(match dp {
                        None => (*epsilon, *delta),
                        Some((e, d)) => (e.min(*epsilon), d.min(*delta)),
                    });
                }
                other => {
                    rest.insert(other.clone());
                }
            }
        }

        let mut out = rest;
        for (column, interval) in filters {
            // A filter over the full line constrains nothing.
            if !interval.is_full() {
                out.insert(Requirement::Filter { column: column.to_string(), interval });
            }
        }
        if let Some(cols) = schema {
            out.insert(Requirement::Schema(cols));
        }
        if let Some(k) = aggregate {
            out.insert(Requirement::Aggregate(k));
        }
        if let Some((epsilon, delta)) = dp {
            out.insert(Requirement::Dp { epsilon, delta });
        }
        Some(Clause(out))
    }
}

impl FromIterator<Requirement> for Clause {
    fn from_iter<T: IntoIterator<Item = Requirement>>(iter: T) -> Clause {
        Clause(iter.into_iter().collect())
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ALLOW")?;
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " AND")?;
            }
            write!(f, " {r}")?;
        }
        Ok(())
    }
}

/// A usage policy: a disjunction of clauses.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Policy {
    clauses: Vec<Clause>,
}

/// The grammar has no literal for "no clause can ever be met", but printing
/// must stay total and printable text must re-parse. This clause is plainly
/// self-contradictory (one column pinned to two disjoint points), and
/// normalization collapses it back to the unsatisfiable policy.
const UNSATISFIABLE_TEXT: &str = "ALLOW FILTER _ IN [0, 0] AND FILTER _ IN [1, 1]";

impl Policy {
    /// The policy that is already met — combining with it changes nothing.
    pub fn satisfied() -> Policy {
        Policy { clauses: vec![Clause::default()] }
    }

    /// The policy no program can meet.
    pub fn unsatisfiable() -> Policy {
        Policy { clauses: Vec::new() }
    }

    pub fn new(clauses: Vec<Clause>) -> Policy {
        Policy { clauses }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    /// Parses policy text. The result is always in normal form.
    pub fn parse(text: &str) -> Result<Policy, PolicyError> {
        parse::parse_policy(text)
    }

    /// Rewrites to the canonical form:
    ///
    /// * each clause is canonicalized (see [`Clause`] merging rules);
    ///   impossible clauses are dropped — they offer no way to comply and
    ///   contribute nothing to a disjunction;
    /// * duplicate clauses collapse;
    /// * a clause that entails another is dropped (the weaker one already
    ///   covers every program the stricter one would admit);
    /// * clauses and requirements sort lexicographically by printed form.
    ///
    /// Normalization is idempotent, and two policies that admit exactly the
    /// same programs normalize to identical text.
    pub fn normalize(&self) -> Policy {
        let canon: BTreeSet<Clause> = self.clauses.iter().filter_map(Clause::canonicalize).collect();
        let kept: Vec<Clause> = canon
            .iter()
            .filter(|c| {
                // Keep c unless it entails some other clause. If two distinct
                // clauses ever entailed each other we would keep the first in
                // clause order; canonicalization makes that case unreachable
                // (mutual entailment implies equality), but the tiebreak keeps
                // the drop rule safe regardless.
                !canon.iter().any(|d| {
                    *c != d && c.entails(d) && (!d.entails(c) || d < *c)
                })
            })
            .cloned()
            .collect();
        Policy { clauses: kept }
    }

    /// True when nothing is left to prove (normal form is the single empty
    /// clause).
    pub fn is_satisfied(&self) -> bool {
        self.normalize().clauses.iter().any(Clause::is_empty)
    }

    /// True when no program can comply (normal form has no clauses).
    pub fn is_unsatisfiable(&self) -> bool {
        self.normalize().clauses.is_empty()
    }

    /// Conjunction: the result admits exactly the programs admitted by both
    /// inputs. Distributes over the clause disjunctions, so the result has up
    /// to `|self| × |other|` clauses before normalization; beyond
    /// [`CLAUSE_CAP`] this returns [`PolicyError::Size`].
    pub fn combine(&self, other: &Policy) -> Result<Policy, PolicyError> {
        let a = self.normalize();
        let b = other.normalize();
        let product = a.clauses.len().saturating_mul(b.clauses.len());
        if product > CLAUSE_CAP {
            return Err(PolicyError::Size { clauses: product, cap: CLAUSE_CAP });
        }
        let mut clauses = Vec::with_capacity(product);
        for ca in &a.clauses {
            for cb in &b.clauses {
                clauses.push(Clause(ca.0.union(&cb.0).cloned().collect()));
            }
        }
        Ok(Policy { clauses }.normalize())
    }

    /// Strength comparison: `p.implies(q)` means every program (and request
    /// context) that satisfies `p` also satisfies `q`. A preorder with
    /// `satisfied` at the top of the implied side and `unsatisfiable` implying
    /// everything.
    pub fn implies(&self, other: &Policy) -> bool {
        let p = self.normalize();
        let q = other.normalize();
        // Whichever clause of p the prover meets, some clause of q must be
        // covered by it.
        p.clauses
            .iter()
            .all(|cp| q.clauses.iter().any(|cq| cp.entails(cq)))
    }

    /// Removes every requirement the predicate discharges, clause by clause,
    /// then normalizes. A clause whose requirements are all discharged makes
    /// the residual `EMPTY` — the policy is fully met.
    pub fn residual_with(&self, mut discharged: impl FnMut(&Requirement) -> bool) -> Policy {
        let clauses = self
            .normalize()
            .clauses
            .into_iter()
            .map(|c| Clause(c.0.into_iter().filter(|r| !discharged(r)).collect()))
            .collect();
        Policy { clauses }.normalize()
    }
}

impl fmt::Display for Policy {
    /// Prints the canonical text of the normal form. `EMPTY` for the
    /// satisfied policy; the unsatisfiable policy prints as a deliberately
    /// contradictory clause (see [`UNSATISFIABLE_TEXT`]) because the grammar
    /// has no dedicated literal for it.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let normal = self.normalize();
        if normal.clauses.is_empty() {
            return f.write_str(UNSATISFIABLE_TEXT);
        }
        if normal.clauses.len() == 1 && normal.clauses[0].is_empty() {
            return f.write_str("EMPTY");
        }
        for (i, c) in normal.clauses.iter().enumerate() {
            if i > 0 {
                write!(f, " OR ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Policy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Policy, PolicyError> {
        Policy::parse(s)
    }
}

impl Serialize for Policy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Policy, D::Error> {
        let s = String::deserialize(deserializer)?;
        Policy::parse(&s).map_err(serde::de::Error::custom)
    }
}
