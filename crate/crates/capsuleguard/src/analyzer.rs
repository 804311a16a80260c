//! Static analysis of dataflow programs against policies.
//!
//! The analyzer walks a [`Program`](crate::ir::Program) without touching any
//! data, tracking for each variable an abstract description of what has
//! provably happened to it (filters applied, columns redacted, aggregation
//! floors, differential-privacy spend). Each policy requirement attached to
//! an input capsule is then either *discharged* by that evidence or left
//! *pending*; the pending part is the residual policy.
//!
//! Extensible operations ("stubs") are declared to the analyzer through a
//! [`StubRegistry`]: a stub's [`StubEffect`] states the one abstract effect
//! the operation is trusted to have, and the executor applies the matching
//! concrete semantics so the trust is testable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{AggFn, Expr, Lit, Program, Statement};
use crate::policy::{Interval, Policy, PolicyError, Real, Requirement};

/// Operation names with built-in transfer rules; stubs may not shadow them.
pub const BUILTIN_OPS: &[&str] = &[
    "read_capsule",
    "filter_rows",
    "project",
    "drop_columns",
    "hash_column",
    "group_agg",
    "filter_groups_min_size",
    "agg_all",
    "join",
    "laplace",
    "branch_join",
    "output",
];

/// The abstract effect a registered stub is declared (and trusted) to have.
/// Argument indices refer to the literal argument list after the source
/// frame, so `clip_outliers(df, "age", 0, 120)` uses indices 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum StubEffect {
    /// The table passes through unchanged.
    Passthrough,
    /// Rows whose named column falls outside `[lo, hi]` are removed, so the
    /// call discharges `FILTER col IN [lo, hi]`.
    EnforceFilter { column_arg: usize, lo_arg: usize, hi_arg: usize },
    /// The named column is replaced with salted digests, so the call
    /// discharges `REDACT col`.
    RedactColumn { column_arg: usize },
}

/// A declared stub operation: its name, literal-argument count, and effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubDescriptor {
    pub name: String,
    pub arity: usize,
    pub effect: StubEffect,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StubError {
    #[error("operation {name:?} is already registered")]
    DuplicateStub { name: String },
    #[error("malformed stub descriptor: {message}")]
    MalformedDescriptor { message: String },
}

/// The set of operations the analyzer (and executor) will accept beyond the
/// built-in ones. Registries are cheap to clone; analyses capture a snapshot.
#[derive(Clone, Debug, Default)]
pub struct StubRegistry {
    stubs: BTreeMap<String, StubDescriptor>,
}

impl StubRegistry {
    /// An empty registry: built-in operations only.
    pub fn new() -> StubRegistry {
        StubRegistry::default()
    }

    /// Registers a stub. Built-in operation names and already-registered
    /// names are rejected; use [`StubRegistry::register_override`] to
    /// intentionally replace an earlier registration.
    pub fn register(&mut self, descriptor: StubDescriptor) -> Result<(), StubError> {
        if self.stubs.contains_key(&descriptor.name) {
            return Err(StubError::DuplicateStub { name: descriptor.name });
        }
        self.register_override(descriptor)
    }

    /// Registers a stub, replacing any previous registration of the same
    /// name. Built-in names remain off-limits.
    pub fn register_override(&mut self, descriptor: StubDescriptor) -> Result<(), StubError> {
        validate_descriptor(&descriptor)?;
        self.stubs.insert(descriptor.name.clone(), descriptor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&StubDescriptor> {
        self.stubs.get(name)
    }

    /// The registered names, in the form the frontend whitelist expects.
    pub fn stub_names(&self) -> BTreeSet<String> {
        self.stubs.keys().cloned().collect()
    }

    /// A registry with the two stock stubs used throughout the examples:
    /// `passthrough(df)` and `clip_outliers(df, col, lo, hi)`.
    pub fn with_stock_stubs() -> StubRegistry {
        let mut reg = StubRegistry::new();
        reg.register(StubDescriptor {
            name: "passthrough".into(),
            arity: 0,
            effect: StubEffect::Passthrough,
        })
        .expect("stock stub registers");
        reg.register(StubDescriptor {
            name: "clip_outliers".into(),
            arity: 3,
            effect: StubEffect::EnforceFilter { column_arg: 0, lo_arg: 1, hi_arg: 2 },
        })
        .expect("stock stub registers");
        reg
    }
}

fn validate_descriptor(d: &StubDescriptor) -> Result<(), StubError> {
    let valid_name = !d.name.is_empty()
        && d.name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !valid_name {
        return Err(StubError::MalformedDescriptor {
            message: format!("{:?} is not a valid operation name", d.name),
        });
    }
    if BUILTIN_OPS.contains(&d.name.as_str()) {
        // Built-in ops are pre-registered through the same namespace, so
        // shadowing one is a duplicate, not a malformed descriptor.
        return Err(StubError::DuplicateStub { name: d.name.clone() });
    }
    if d.arity > 8 {
        return Err(StubError::MalformedDescriptor {
            message: format!("arity {} exceeds the supported maximum of 8", d.arity),
        });
    }
    let indices: Vec<usize> = match &d.effect {
        StubEffect::Passthrough => vec![],
        StubEffect::EnforceFilter { column_arg, lo_arg, hi_arg } => vec![*column_arg, *lo_arg, *hi_arg],
        StubEffect::RedactColumn { column_arg } => vec![*column_arg],
    };
    for idx in &indices {
        if *idx >= d.arity {
            return Err(StubError::MalformedDescriptor {
                message: format!("argument index {idx} out of range for arity {}", d.arity),
            });
        }
    }
    let distinct: BTreeSet<usize> = indices.iter().copied().collect();
    if distinct.len() != indices.len() {
        return Err(StubError::MalformedDescriptor {
            message: "effect argument indices must be distinct".into(),
        });
    }
    Ok(())
}

/// Metadata the analyzer is given about one input capsule. This is the
/// *entire* interface to a capsule: the analyzer never sees payload bytes,
/// so it cannot leak them and cannot accidentally depend on them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapsuleFacts {
    /// The policy guarding the capsule.
    pub policy: Policy,
    /// Column names of the capsule's table.
    pub schema: BTreeSet<String>,
    /// Number of rows, when recorded in the capsule metadata.
    pub row_count: Option<u64>,
    /// For capsules derived from an earlier analyzed run: the abstract value
    /// of the variable that produced them. Restoring it lets a follow-up
    /// program keep the evidence (filters, redactions, floors) the earlier
    /// pipeline already established.
    pub analysis_state: Option<AnalysisState>,
}

/// Who is asking, and why. Role and purpose requirements are discharged
/// against this context rather than against the program.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestContext {
    pub roles: BTreeSet<String>,
    pub purpose: String,
}

/// Everything the analyzer has proven about one program variable.
///
/// The first seven fields are the policy-facing evidence; the remaining
/// fields are refinements that keep the transfer rules sound:
///
/// * `derived` mirrors the executor's column provenance exactly — for each
///   present column, the set of raw source columns whose values can reach
///   it (empty once hashed, or for counts).
/// * `scalar_derived` plays the same role after the value collapses to a
///   scalar; a `mean(amount)` still carries raw `amount`.
/// * `row_count_known` holds the statically known row count, cleared by any
///   operation that can change it; it justifies whole-table aggregation
///   floors.
/// * `grouped` records that the value is a group-aggregation result, which
///   is what makes a later `filter_groups_min_size` meaningful.
/// * `raw` lists the columns whose cells are still verbatim source values —
///   shared by every contributing row whose capsule has the column. Only a
///   filter on such a column says anything about source rows; filtering a
///   mean or a noised value selects rows by a *computed* quantity, and the
///   underlying raw values can lie anywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractValue {
    /// Capsules whose data can reach this value.
    pub sources: BTreeSet<String>,
    /// Columns present right now (empty for scalars).
    pub columns: BTreeSet<String>,
    /// Intervals provably enforced on contributing rows, per column. Entries
    /// survive projection and aggregation: the *rows* that contributed were
    /// filtered, whether or not the column is still visible.
    pub filtered: BTreeMap<String, Interval>,
    /// Columns that left the frame or were hashed to digests.
    pub redacted: BTreeSet<String>,
    /// Every released cell provably aggregates at least this many distinct
    /// source rows (0 = no guarantee).
    pub agg_floor: u64,
    /// `(epsilon, delta)` of the differential-privacy mechanism applied as
    /// the final transformation, if any. Any later operation other than
    /// output clears it.
    pub dp_spent: Option<(Real, Real)>,
    /// True when the value is a single number rather than a table.
    pub is_scalarized: bool,
    /// Per present column: raw source columns whose values can reach it.
    pub derived: BTreeMap<String, BTreeSet<String>>,
    /// Raw source columns reaching the scalar value, when scalarized.
    pub scalar_derived: BTreeSet<String>,
    /// Row count if statically known (fresh capsule, before any filtering).
    pub row_count_known: Option<u64>,
    /// True when the value is the result of a group aggregation.
    pub grouped: bool,
    /// Columns whose values some operation consumed (filter predicates,
    /// grouping keys, aggregation inputs, join keys, hashes). A schema
    /// requirement covers these too: merely projecting a column away does
    /// not undo having used it.
    pub touched: BTreeSet<String>,
    /// Columns whose cells are verbatim source values: for every row, the
    /// cell equals the raw value of that column in each contributing source
    /// row whose capsule has the column. Group keys keep this property
    /// (every member shares the key); aggregates, digests, and noised
    /// columns lose it.
    pub raw: BTreeSet<String>,
}

impl AbstractValue {
    fn fresh(capsule: &str, facts: &CapsuleFacts) -> AbstractValue {
        AbstractValue {
            sources: BTreeSet::from([capsule.to_string()]),
            columns: facts.schema.clone(),
            filtered: BTreeMap::new(),
            redacted: BTreeSet::new(),
            // Raw rows: every cell trivially aggregates one row.
            agg_floor: 1,
            dp_spent: None,
            is_scalarized: false,
            derived: facts
                .schema
                .iter()
                .map(|c| (c.clone(), BTreeSet::from([c.clone()])))
                .collect(),
            scalar_derived: BTreeSet::new(),
            row_count_known: facts.row_count,
            grouped: false,
            touched: BTreeSet::new(),
            raw: facts.schema.clone(),
        }
    }

    /// Union of all raw source columns that can reach any part of the value.
    pub fn derived_union(&self) -> BTreeSet<String> {
        let mut all: BTreeSet<String> = self.derived.values().flatten().cloned().collect();
        all.extend(self.scalar_derived.iter().cloned());
        all
    }
}

/// A serializable [`AbstractValue`] snapshot, stored alongside a derived
/// capsule so a later analysis can resume from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnalysisState(pub AbstractValue);

/// Whether a requirement was discharged at an output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Satisfaction {
    Satisfied,
    Pending,
}

impl fmt::Display for Satisfaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Satisfaction::Satisfied => "SATISFIED",
            Satisfaction::Pending => "PENDING",
        })
    }
}

/// One requirement check at one output statement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Index of the output statement where the check ran.
    pub statement: usize,
    pub requirement: Requirement,
    pub status: Satisfaction,
    pub reason: String,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} {} {}", self.statement, self.requirement, self.status, self.reason)
    }
}

/// What the analyzer concluded about a program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    /// Residual policy per output variable: what the program did *not*
    /// discharge. `EMPTY` means fully compliant for that output.
    pub per_output: BTreeMap<String, Policy>,
    /// True when every output's residual is satisfied.
    pub compliant: bool,
    /// Every requirement check, in program order.
    pub trace: Vec<TraceEntry>,
    /// Abstract value of each output variable, for sealing into derived
    /// capsules.
    pub per_output_state: BTreeMap<String, AnalysisState>,
}

impl AnalysisResult {
    /// True when every output's residual policy is satisfied.
    pub fn compliant(&self) -> bool {
        self.compliant
    }

    /// Canonical JSON: stable key order, human-readable.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis results always serialize")
    }

    pub fn from_json(text: &str) -> Result<AnalysisResult, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The trace as one line per check: `#<stmt> <REQ> <STATUS> <reason>`.
    pub fn render_trace(&self) -> String {
        let mut out = String::new();
        for entry in &self.trace {
            out.push_str(&entry.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AnalyzeError {
    /// The program failed [`Program::validate`].
    #[error("invalid program: {message}")]
    InvalidProgram { message: String },
    /// The program reads a capsule that is not among the inputs.
    #[error("capsule {capsule:?} is not available to this analysis")]
    MissingCapsule { capsule: String },
    /// The program references a column (or value shape) its data does not
    /// have at that point.
    #[error("statement {statement}: {message}")]
    SchemaMismatch { statement: usize, message: String },
    /// The program calls an operation that is neither built in nor
    /// registered as a stub.
    #[error("statement {statement}: operation {name:?} is not registered")]
    UnknownOperation { statement: usize, name: String },
    /// A stub call's literal arguments do not fit its descriptor.
    #[error("statement {statement}: {message}")]
    MalformedCall { statement: usize, message: String },
    /// Propagated from policy combination (e.g. the clause cap).
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Removes every requirement in `discharged` from every clause of `policy`,
/// then normalizes. A clause whose requirements are all discharged makes the
/// result `EMPTY`.
pub fn residual_for(policy: &Policy, discharged: &BTreeSet<Requirement>) -> Policy {
    policy.residual_with(|r| discharged.contains(r))
}

/// Analyzes `program` against capsule metadata, with built-in operations
/// only. See [`analyze_with_stubs`].
pub fn analyze(
    program: &Program,
    inputs: &BTreeMap<String, CapsuleFacts>,
    ctx: &RequestContext,
) -> Result<AnalysisResult, AnalyzeError> {
    analyze_with_stubs(program, inputs, ctx, &StubRegistry::new())
}

/// Analyzes `program` against capsule metadata and a request context.
///
/// The analyzer abstractly executes the program in statement order, tracking
/// an [`AbstractValue`] per variable, and at each `output` statement checks
/// every requirement of the combined policy of the capsules that value
/// touches. Requirements the evidence meets are discharged; the rest form
/// the residual policy. The function is pure: same inputs, same result, and
/// no capsule payloads are ever consulted.
pub fn analyze_with_stubs(
    program: &Program,
    inputs: &BTreeMap<String, CapsuleFacts>,
    ctx: &RequestContext,
    registry: &StubRegistry,
) -> Result<AnalysisResult, AnalyzeError> {
    let diagnostics = program.validate();
    if let Some(d) = diagnostics.first() {
        return Err(AnalyzeError::InvalidProgram { message: d.to_string() });
    }

    let mut pass = Pass { inputs, registry, env: BTreeMap::new() };
    let mut per_output = BTreeMap::new();
    let mut per_output_state = BTreeMap::new();
    let mut trace = Vec::new();

    for (idx, statement) in program.statements.iter().enumerate() {
        match statement {
            Statement::Assign { var, expr } => {
                let value = pass.apply(idx, expr)?;
                pass.env.insert(var.clone(), value);
            }
            Statement::Output { var } => {
                let value = pass.value(idx, var)?.clone();
                let combined = combined_policy(&value, inputs)?;
                let residual = discharge_against(idx, &value, &combined, ctx, &mut trace);
                per_output.insert(var.clone(), residual);
                per_output_state.insert(var.clone(), AnalysisState(value));
            }
        }
    }

    let compliant = per_output.values().all(Policy::is_satisfied);
    Ok(AnalysisResult { per_output, compliant, trace, per_output_state })
}

/// Conjunction of the policies of every capsule the value touches.
fn combined_policy(
    value: &AbstractValue,
    inputs: &BTreeMap<String, CapsuleFacts>,
) -> Result<Policy, AnalyzeError> {
    let mut combined = Policy::parse("EMPTY").expect("EMPTY is in the grammar");
    for source in &value.sources {
        let facts = inputs
            .get(source)
            .ok_or_else(|| AnalyzeError::MissingCapsule { capsule: source.clone() })?;
        combined = combined.combine(&facts.policy)?;
    }
    Ok(combined)
}

/// Checks every distinct requirement of `combined` against the evidence,
/// appends trace entries for statement `idx`, and returns the residual.
fn discharge_against(
    idx: usize,
    value: &AbstractValue,
    combined: &Policy,
    ctx: &RequestContext,
    trace: &mut Vec<TraceEntry>,
) -> Policy {
    let normal = combined.normalize();
    let atoms: BTreeSet<Requirement> =
        normal.clauses().iter().flat_map(|c| c.requirements().cloned()).collect();
    let mut discharged = BTreeSet::new();
    for requirement in atoms {
        let (ok, reason) = check_requirement(&requirement, value, ctx);
        let status = if ok { Satisfaction::Satisfied } else { Satisfaction::Pending };
        trace.push(TraceEntry { statement: idx, requirement: requirement.clone(), status, reason });
        if ok {
            discharged.insert(requirement);
        }
    }
    residual_for(&normal, &discharged)
}

/// The per-requirement discharge rules. Returns the verdict and a
/// human-readable reason for the trace.
fn check_requirement(
    requirement: &Requirement,
    value: &AbstractValue,
    ctx: &RequestContext,
) -> (bool, String) {
    match requirement {
        Requirement::Role(role) => {
            if ctx.roles.contains(role) {
                (true, format!("requester holds role {role:?}"))
            } else {
                (false, format!("requester roles {:?} do not include {role:?}", ctx.roles))
            }
        }
        Requirement::Purpose(purpose) => {
            if &ctx.purpose == purpose {
                (true, format!("declared purpose {purpose:?} matches"))
            } else {
                (false, format!("declared purpose {:?} is not {purpose:?}", ctx.purpose))
            }
        }
        Requirement::Filter { column, interval } => match value.filtered.get(column) {
            Some(applied) if applied.is_subset(interval) => {
                (true, format!("rows are filtered to {applied}, within the required {interval}"))
            }
            Some(applied) => {
                (false, format!("rows are filtered to {applied}, which is not within {interval}"))
            }
            None => (false, format!("no filter is applied to column {column:?}")),
        },
        Requirement::Redact(column) => {
            if value.derived_union().contains(column) {
                (false, format!("raw values of {column:?} can reach this output"))
            } else {
                (true, format!("raw values of {column:?} cannot reach this output"))
            }
        }
        Requirement::Schema(allowed) => {
            let mut outside: BTreeSet<&String> =
                value.columns.difference(allowed).collect();
            outside.extend(value.touched.difference(allowed));
            let derived = value.derived_union();
            outside.extend(derived.difference(allowed));
            if outside.is_empty() {
                (true, "every column used or released is inside the allowed set".to_string())
            } else {
                let names: Vec<&str> = outside.iter().map(|s| s.as_str()).collect();
                (false, format!("columns {names:?} are outside the allowed set"))
            }
        }
        Requirement::Aggregate(min_rows) => {
            if value.agg_floor >= *min_rows {
                (
                    true,
                    format!(
                        "every released value aggregates at least {} source rows (needs {min_rows})",
                        value.agg_floor
                    ),
                )
            } else {
                (
                    false,
                    format!(
                        "aggregation floor is {}, below the required {min_rows}",
                        value.agg_floor
                    ),
                )
            }
        }
        Requirement::Dp { epsilon, delta } => match value.dp_spent {
            Some((spent_eps, spent_delta)) if spent_eps <= *epsilon && spent_delta <= *delta => (
                true,
                format!(
                    "noise applied with epsilon {spent_eps} and delta {spent_delta}, within \
                     budget (epsilon {epsilon}, delta {delta})"
                ),
            ),
            Some((spent_eps, spent_delta)) => (
                false,
                format!(
                    "noise spend (epsilon {spent_eps}, delta {spent_delta}) exceeds budget \
                     (epsilon {epsilon}, delta {delta})"
                ),
            ),
            None => {
                (false, "no differential-privacy mechanism is the final step before output".into())
            }
        },
    }
}

/// Narrows `map[column]` by `interval`. If the intersection is empty, the
/// most recent interval wins: no rows can satisfy both, so any claim about
/// contributing rows is vacuous and the newer bound is still honest.
fn narrow_filter(map: &mut BTreeMap<String, Interval>, column: &str, interval: &Interval) {
    let entry = match map.get(column) {
        Some(old) => old.intersect(interval).unwrap_or_else(|| interval.clone()),
        None => interval.clone(),
    };
    map.insert(column.to_string(), entry);
}

/// The weaker (larger) of two enforced intervals when one contains the
/// other; `None` when they are incomparable and no single claim is sound.
fn weaker(a: &Interval, b: &Interval) -> Option<Interval> {
    if a.is_subset(b) {
        Some(b.clone())
    } else if b.is_subset(a) {
        Some(a.clone())
    } else {
        None
    }
}

/// One abstract execution over a program.
struct Pass<'a> {
    inputs: &'a BTreeMap<String, CapsuleFacts>,
    registry: &'a StubRegistry,
    env: BTreeMap<String, AbstractValue>,
}

impl Pass<'_> {
    fn value(&self, stmt: usize, var: &str) -> Result<&AbstractValue, AnalyzeError> {
        self.env.get(var).ok_or_else(|| AnalyzeError::InvalidProgram {
            message: format!("statement {stmt} uses undefined variable {var:?}"),
        })
    }

    fn table(&self, stmt: usize, var: &str) -> Result<&AbstractValue, AnalyzeError> {
        let value = self.value(stmt, var)?;
        if value.is_scalarized {
            return Err(AnalyzeError::SchemaMismatch {
                statement: stmt,
                message: format!("{var:?} is a scalar, but a table operation is applied to it"),
            });
        }
        Ok(value)
    }

    fn need_column(&self, stmt: usize, value: &AbstractValue, column: &str) -> Result<(), AnalyzeError> {
        if !value.columns.contains(column) {
            return Err(AnalyzeError::SchemaMismatch {
                statement: stmt,
                message: format!(
                    "column {column:?} is not present at this point (available: {:?})",
                    value.columns
                ),
            });
        }
        Ok(())
    }

    /// True when none of the value's source capsules has `column` in its
    /// schema — so no contributing row carries a raw value for it, even one
    /// projected away before this point.
    fn sources_lack_column(&self, value: &AbstractValue, column: &str) -> bool {
        value
            .sources
            .iter()
            .all(|s| self.inputs.get(s).is_some_and(|f| !f.schema.contains(column)))
    }

    fn apply(&mut self, stmt: usize, expr: &Expr) -> Result<AbstractValue, AnalyzeError> {
        match expr {
            Expr::ReadCapsule { capsule } => {
                let facts = self
                    .inputs
                    .get(capsule)
                    .ok_or_else(|| AnalyzeError::MissingCapsule { capsule: capsule.clone() })?;
                match &facts.analysis_state {
                    Some(state) => {
                        // A derived capsule: resume exactly where the
                        // producing pipeline stopped, re-rooted at this
                        // capsule so its (residual) policy governs.
                        let mut value = state.0.clone();
                        value.sources = BTreeSet::from([capsule.clone()]);
                        Ok(value)
                    }
                    None => Ok(AbstractValue::fresh(capsule, facts)),
                }
            }

            Expr::FilterRows { src, column, interval } => {
                let source = self.table(stmt, src)?;
                self.need_column(stmt, source, column)?;
                let mut value = source.clone();
                // Selecting rows by a computed value (a mean, a noised cell)
                // says nothing about the raw values underneath, so only
                // filters on verbatim columns become evidence.
                if value.raw.contains(column) {
                    narrow_filter(&mut value.filtered, column, interval);
                }
                value.touched.insert(column.clone());
                // Row count is data-dependent from here on.
                value.agg_floor = 0;
                value.row_count_known = None;
                value.dp_spent = None;
                Ok(value)
            }

            Expr::Project { src, columns } => {
                let source = self.table(stmt, src)?;
                for column in columns {
                    self.need_column(stmt, source, column)?;
                }
                let keep: BTreeSet<String> = columns.iter().cloned().collect();
                let mut value = source.clone();
                let removed: Vec<String> = value.columns.difference(&keep).cloned().collect();
                value.redacted.extend(removed);
                value.columns = keep.clone();
                value.derived.retain(|c, _| keep.contains(c));
                value.raw.retain(|c| keep.contains(c));
                value.dp_spent = None;
                Ok(value)
            }

            Expr::DropColumns { src, columns } => {
                let source = self.table(stmt, src)?;
                for column in columns {
                    self.need_column(stmt, source, column)?;
                }
                let dropped: BTreeSet<String> = columns.iter().cloned().collect();
                let mut value = source.clone();
                value.columns = value.columns.difference(&dropped).cloned().collect();
                value.derived.retain(|c, _| !dropped.contains(c));
                value.raw.retain(|c| !dropped.contains(c));
                value.redacted.extend(dropped);
                value.dp_spent = None;
                Ok(value)
            }

            Expr::HashColumn { src, column } => {
                let source = self.table(stmt, src)?;
                self.need_column(stmt, source, column)?;
                let mut value = source.clone();
                value.redacted.insert(column.clone());
                // Digests are one-way: raw values no longer reach the column.
                value.derived.insert(column.clone(), BTreeSet::new());
                value.raw.remove(column);
                value.touched.insert(column.clone());
                value.dp_spent = None;
                Ok(value)
            }

            Expr::GroupAgg { src, keys, aggs } => {
                let source = self.table(stmt, src)?;
                let mut derived = BTreeMap::new();
                for key in keys {
                    self.need_column(stmt, source, key)?;
                    if aggs.contains_key(key) {
                        return Err(AnalyzeError::SchemaMismatch {
                            statement: stmt,
                            message: format!("column {key:?} is both a grouping key and an aggregate"),
                        });
                    }
                    derived.insert(key.clone(), source.derived[key].clone());
                }
                for (column, agg) in aggs {
                    self.need_column(stmt, source, column)?;
                    let from = match agg {
                        AggFn::Count => BTreeSet::new(),
                        AggFn::Sum | AggFn::Mean => source.derived[column].clone(),
                    };
                    derived.insert(column.clone(), from);
                }
                let new_columns: BTreeSet<String> = derived.keys().cloned().collect();
                let mut value = source.clone();
                let removed: Vec<String> =
                    value.columns.difference(&new_columns).cloned().collect();
                value.redacted.extend(removed);
                value.touched.extend(keys.iter().cloned());
                value.touched.extend(aggs.keys().cloned());
                value.columns = new_columns;
                value.derived = derived;
                // Every member of a group shares the key cell, so keys stay
                // verbatim; aggregate columns hold computed values.
                value.raw = keys.iter().filter(|k| source.raw.contains(*k)).cloned().collect();
                // Group sizes are data-dependent until filter_groups runs.
                value.agg_floor = 0;
                value.grouped = true;
                value.row_count_known = None;
                value.dp_spent = None;
                Ok(value)
            }

            Expr::FilterGroupsMinSize { src, min_size } => {
                let source = self.table(stmt, src)?;
                let mut value = source.clone();
                if value.grouped {
                    // The executor keeps exactly the groups built from at
                    // least min_size distinct source rows, so the floor is
                    // sound even for provenance that overlaps after joins.
                    value.agg_floor = value.agg_floor.max(*min_size);
                }
                value.row_count_known = None;
                value.dp_spent = None;
                Ok(value)
            }

            Expr::AggAll { src, column, agg } => {
                let source = self.table(stmt, src)?;
                self.need_column(stmt, source, column)?;
                let mut value = source.clone();
                value.touched.insert(column.clone());
                value.is_scalarized = true;
                value.scalar_derived = match agg {
                    AggFn::Count => BTreeSet::new(),
                    AggFn::Sum | AggFn::Mean => source.derived[column].clone(),
                };
                // A whole-table aggregate covers every row — but only if the
                // row count is still the statically known one.
                value.agg_floor = source.row_count_known.unwrap_or(0);
                let gone: Vec<String> = source
                    .columns
                    .iter()
                    .filter(|c| !value.scalar_derived.contains(*c))
                    .cloned()
                    .collect();
                value.redacted.extend(gone);
                value.columns = BTreeSet::new();
                value.derived = BTreeMap::new();
                value.raw = BTreeSet::new();
                value.grouped = false;
                value.row_count_known = None;
                value.dp_spent = None;
                Ok(value)
            }

            Expr::Join { left, right, on } => {
                let l = self.table(stmt, left)?;
                let r = self.table(stmt, right)?;
                self.need_column(stmt, l, on)?;
                self.need_column(stmt, r, on)?;
                let overlap: Vec<&String> =
                    l.columns.intersection(&r.columns).filter(|c| *c != on).collect();
                if !overlap.is_empty() {
                    return Err(AnalyzeError::SchemaMismatch {
                        statement: stmt,
                        message: format!("columns {overlap:?} appear on both sides of the join"),
                    });
                }

                let mut derived = l.derived.clone();
                for (column, from) in &r.derived {
                    derived.entry(column.clone()).or_default().extend(from.iter().cloned());
                }

                let mut filtered = BTreeMap::new();
                let names: BTreeSet<&String> = l.filtered.keys().chain(r.filtered.keys()).collect();
                let key_raw_both = l.raw.contains(on) && r.raw.contains(on);
                for name in names {
                    let la = l.filtered.get(name);
                    let rb = r.filtered.get(name);
                    let merged = if name == on && key_raw_both {
                        // Matched rows carry one shared verbatim key value,
                        // which therefore satisfies every bound either side
                        // enforced. An empty intersection means no row can
                        // match at all, so no claim is needed.
                        match (la, rb) {
                            (Some(a), Some(b)) => a.intersect(b),
                            (Some(a), None) => Some(a.clone()),
                            (None, Some(b)) => Some(b.clone()),
                            (None, None) => unreachable!("name came from one of the maps"),
                        }
                    } else {
                        match (la, rb) {
                            // A one-sided claim covers every contributing row
                            // only when the other side's capsules cannot even
                            // contain the column: rows from a capsule that
                            // has it (even projected away before the join)
                            // carry unconstrained raw values.
                            (Some(a), None) if self.sources_lack_column(r, name) => {
                                Some(a.clone())
                            }
                            (None, Some(b)) if self.sources_lack_column(l, name) => {
                                Some(b.clone())
                            }
                            // Claims on both sides: each side's rows satisfy
                            // their own bound, so a single bound covering
                            // both is sound — if one exists.
                            (Some(a), Some(b)) => weaker(a, b),
                            _ => None,
                        }
                    };
                    if let Some(interval) = merged {
                        filtered.insert(name.clone(), interval);
                    }
                }

                // A joined cell is verbatim only if it is verbatim for both
                // sides' contributors: its own side's rows, plus the other
                // side's rows whenever their capsules have the column. The
                // shared key matches by value, so both-raw keys stay raw.
                let mut raw = BTreeSet::new();
                for c in &l.raw {
                    if (c == on && r.raw.contains(on)) || self.sources_lack_column(r, c) {
                        raw.insert(c.clone());
                    }
                }
                for c in &r.raw {
                    if (c == on && l.raw.contains(on)) || self.sources_lack_column(l, c) {
                        raw.insert(c.clone());
                    }
                }

                let columns: BTreeSet<String> = l.columns.union(&r.columns).cloned().collect();
                let mut redacted: BTreeSet<String> =
                    l.redacted.union(&r.redacted).cloned().collect();
                // A column redacted in one history but live in the other is
                // not redacted for the joined value.
                redacted.retain(|c| !derived.get(c).is_some_and(|from| from.contains(c)));

                let mut touched: BTreeSet<String> = l.touched.union(&r.touched).cloned().collect();
                touched.insert(on.clone());

                Ok(AbstractValue {
                    sources: l.sources.union(&r.sources).cloned().collect(),
                    columns,
                    filtered,
                    redacted,
                    // Joins re-shuffle which rows contribute where, so the
                    // aggregate and privacy evidence is invalidated.
                    agg_floor: 0,
                    dp_spent: None,
                    is_scalarized: false,
                    derived,
                    scalar_derived: BTreeSet::new(),
                    row_count_known: None,
                    grouped: false,
                    touched,
                    raw,
                })
            }

            Expr::Laplace { src, epsilon, .. } => {
                let source = self.value(stmt, src)?;
                let eps = Real::new(*epsilon).map_err(|_| AnalyzeError::InvalidProgram {
                    message: format!("statement {stmt}: laplace epsilon must be a number"),
                })?;
                let mut value = source.clone();
                // Noised cells are no longer the source values.
                value.raw.clear();
                // The mechanism is pure ε-DP; δ is compared against policy
                // budgets as 0. Consecutive mechanisms keep the strongest
                // (smallest ε) guarantee — later noise is post-processing.
                value.dp_spent = Some(match source.dp_spent {
                    Some((prior, _)) => (prior.min(eps), Real::ZERO),
                    None => (eps, Real::ZERO),
                });
                Ok(value)
            }

            Expr::BranchJoin { cond, then_var, else_var } => {
                let condition = self.value(stmt, &cond.var)?;
                if !condition.is_scalarized {
                    return Err(AnalyzeError::SchemaMismatch {
                        statement: stmt,
                        message: format!("branch condition {:?} is not a scalar", cond.var),
                    });
                }
                let t = self.value(stmt, then_var)?;
                let e = self.value(stmt, else_var)?;
                Ok(meet(t, e))
            }

            Expr::Call { name, src, args } => {
                let descriptor = self.registry.get(name).cloned().ok_or_else(|| {
                    AnalyzeError::UnknownOperation { statement: stmt, name: name.clone() }
                })?;
                if args.len() != descriptor.arity {
                    return Err(AnalyzeError::MalformedCall {
                        statement: stmt,
                        message: format!(
                            "{name} expects {} literal arguments, got {}",
                            descriptor.arity,
                            args.len()
                        ),
                    });
                }
                match descriptor.effect {
                    StubEffect::Passthrough => {
                        let mut value = self.value(stmt, src)?.clone();
                        value.dp_spent = None;
                        Ok(value)
                    }
                    StubEffect::EnforceFilter { column_arg, lo_arg, hi_arg } => {
                        let column = str_arg(stmt, name, args, column_arg)?;
                        let lo = num_arg(stmt, name, args, lo_arg)?;
                        let hi = num_arg(stmt, name, args, hi_arg)?;
                        let interval =
                            Interval::new(lo, true, hi, true).map_err(|e| {
                                AnalyzeError::MalformedCall {
                                    statement: stmt,
                                    message: format!("{name}: invalid bounds: {e}"),
                                }
                            })?;
                        let source = self.table(stmt, src)?;
                        self.need_column(stmt, source, &column)?;
                        let mut value = source.clone();
                        if value.raw.contains(&column) {
                            narrow_filter(&mut value.filtered, &column, &interval);
                        }
                        value.touched.insert(column);
                        value.agg_floor = 0;
                        value.row_count_known = None;
                        value.dp_spent = None;
                        Ok(value)
                    }
                    StubEffect::RedactColumn { column_arg } => {
                        let column = str_arg(stmt, name, args, column_arg)?;
                        let source = self.table(stmt, src)?;
                        self.need_column(stmt, source, &column)?;
                        let mut value = source.clone();
                        value.redacted.insert(column.clone());
                        value.touched.insert(column.clone());
                        value.derived.insert(column.clone(), BTreeSet::new());
                        value.raw.remove(&column);
                        value.dp_spent = None;
                        Ok(value)
                    }
                }
            }
        }
    }
}

fn str_arg(stmt: usize, name: &str, args: &[Lit], index: usize) -> Result<String, AnalyzeError> {
    match &args[index] {
        Lit::Str(s) => Ok(s.clone()),
        Lit::Num(n) => Err(AnalyzeError::MalformedCall {
            statement: stmt,
            message: format!("{name}: argument {index} must be a column name, got {n}"),
        }),
    }
}

fn num_arg(stmt: usize, name: &str, args: &[Lit], index: usize) -> Result<f64, AnalyzeError> {
    match &args[index] {
        Lit::Num(n) => Ok(*n),
        Lit::Str(s) => Err(AnalyzeError::MalformedCall {
            statement: stmt,
            message: format!("{name}: argument {index} must be a number, got {s:?}"),
        }),
    }
}

/// Conservative join of the two branch values: keeps only evidence that
/// holds whichever branch ran, so a requirement is discharged after the
/// join only if it would be discharged in both branches alone.
fn meet(t: &AbstractValue, e: &AbstractValue) -> AbstractValue {
    let mut derived = t.derived.clone();
    for (column, from) in &e.derived {
        derived.entry(column.clone()).or_default().extend(from.iter().cloned());
    }

    let mut filtered = BTreeMap::new();
    for (name, a) in &t.filtered {
        if let Some(b) = e.filtered.get(name) {
            if let Some(hull) = weaker(a, b) {
                filtered.insert(name.clone(), hull);
            }
        }
    }

    AbstractValue {
        sources: t.sources.union(&e.sources).cloned().collect(),
        columns: t.columns.union(&e.columns).cloned().collect(),
        filtered,
        redacted: t.redacted.intersection(&e.redacted).cloned().collect(),
        agg_floor: t.agg_floor.min(e.agg_floor),
        dp_spent: match (t.dp_spent, e.dp_spent) {
            (Some((e1, d1)), Some((e2, d2))) => Some((e1.max(e2), d1.max(d2))),
            _ => None,
        },
        is_scalarized: t.is_scalarized || e.is_scalarized,
        derived,
        scalar_derived: t.scalar_derived.union(&e.scalar_derived).cloned().collect(),
        row_count_known: match (t.row_count_known, e.row_count_known) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        },
        grouped: t.grouped && e.grouped,
        touched: t.touched.union(&e.touched).cloned().collect(),
        raw: t.raw.intersection(&e.raw).cloned().collect(),
    }
}

#[cfg(test)]
mod registry_tests {
    use super::*;

    #[test]
    fn duplicate_and_builtin_registrations_are_rejected() {
        let mut reg = StubRegistry::with_stock_stubs();
        let again = StubDescriptor {
            name: "passthrough".into(),
            arity: 0,
            effect: StubEffect::Passthrough,
        };
        assert_eq!(
            reg.register(again.clone()),
            Err(StubError::DuplicateStub { name: "passthrough".into() })
        );
        assert!(reg.register_override(again).is_ok());

        let laplace = StubDescriptor {
            name: "laplace".into(),
            arity: 0,
            effect: StubEffect::Passthrough,
        };
        assert_eq!(
            reg.register(laplace.clone()),
            Err(StubError::DuplicateStub { name: "laplace".into() })
        );
        assert_eq!(
            reg.register_override(laplace),
            Err(StubError::DuplicateStub { name: "laplace".into() })
        );
    }

    #[test]
    fn malformed_descriptors_are_rejected() {
        let mut reg = StubRegistry::new();
        let bad_name = StubDescriptor {
            name: "9lives".into(),
            arity: 0,
            effect: StubEffect::Passthrough,
        };
        assert!(matches!(reg.register(bad_name), Err(StubError::MalformedDescriptor { .. })));

        let out_of_range = StubDescriptor {
            name: "clip".into(),
            arity: 2,
            effect: StubEffect::EnforceFilter { column_arg: 0, lo_arg: 1, hi_arg: 2 },
        };
        assert!(matches!(reg.register(out_of_range), Err(StubError::MalformedDescriptor { .. })));

        let overlapping = StubDescriptor {
            name: "clip".into(),
            arity: 3,
            effect: StubEffect::EnforceFilter { column_arg: 0, lo_arg: 0, hi_arg: 2 },
        };
        assert!(matches!(reg.register(overlapping), Err(StubError::MalformedDescriptor { .. })));
    }
}
