//! Random well-typed dataflow programs with matching tables, capsule
//! metadata, and program-aware policies.
//!
//! Two generators share one builder:
//!
//! * [`random_analysis_case`] produces *wild* pipelines — joins, branches,
//!   repeated filters, mid-chain noise — for checking that whatever the
//!   analyzer discharges, the executor's row-level oracle confirms.
//! * [`random_monotone_case`] produces *monotone-evidence* straight-line
//!   pipelines: every piece of evidence, once established, survives to the
//!   end (filters on distinct verbatim columns, grouping and its floor late,
//!   noise terminal). On these, splitting the pipeline anywhere and resuming
//!   from the derived capsule must reproduce the whole-pipeline residual
//!   exactly, which is the compositionality property.
//!
//! Policies are *program-aware*: alongside random atoms, the pool contains
//! requirements the generated program plausibly discharges (the filter it
//! applied, the column it hashed, the group floor it enforced), so that
//! soundness runs exercise many actual discharges instead of vacuously
//! pending ones.

use std::collections::{BTreeMap, BTreeSet};

use capsuleguard::analyzer::{CapsuleFacts, RequestContext};
use capsuleguard::ir::{AggFn, CmpOp, Cond, Expr, Lit, Program, Statement};
use capsuleguard::policy::{Clause, Interval, Policy, Requirement};
use capsuleguard::table::{ColType, Table, Value};
use rand::prelude::*;

use crate::gen;

/// One generated scenario: a program, concrete tables for its capsules, and
/// the capsule metadata (shared policy, schema, row count) the analyzer sees.
#[derive(Clone, Debug)]
pub struct GenCase {
    pub program: Program,
    pub tables: BTreeMap<String, Table>,
    pub capsules: BTreeMap<String, CapsuleFacts>,
    pub output_var: String,
}

/// The fixed column universe with its types. Values overlap heavily with the
/// policy generator's interval bounds so filters actually bite.
fn col_type(name: &str) -> ColType {
    match name {
        "age" | "score" => ColType::Int,
        "amount" => ColType::Float,
        _ => ColType::String,
    }
}

fn is_numeric(name: &str) -> bool {
    col_type(name) != ColType::String
}

fn random_cell(rng: &mut impl Rng, column: &str) -> Value {
    match column {
        "age" => Value::Int(if rng.gen_bool(0.3) {
            *[0_i64, 18, 21, 65, 100].choose(rng).unwrap()
        } else {
            rng.gen_range(0..=100)
        }),
        "score" => Value::Int(rng.gen_range(-10..=250)),
        "amount" => Value::Float(if rng.gen_bool(0.3) {
            *[-10.0, 0.0, 0.5, 18.0, 100.0, 250.0].choose(rng).unwrap()
        } else {
            f64::from(rng.gen_range(-200..=2600)) / 10.0
        }),
        "category" => Value::Str((*["a", "b", "c", "d"].choose(rng).unwrap()).into()),
        "merchant" => Value::Str(format!("m{}", rng.gen_range(1..=5))),
        _ => Value::Str(format!("n{:02}", rng.gen_range(1..=20))),
    }
}

/// A table over `columns` with `rows` random rows of the right types.
pub fn random_table(rng: &mut impl Rng, columns: &[String], rows: usize) -> Table {
    let schema: Vec<(String, ColType)> =
        columns.iter().map(|c| (c.clone(), col_type(c))).collect();
    let rows: Vec<Vec<Value>> = (0..rows)
        .map(|_| columns.iter().map(|c| random_cell(rng, c)).collect())
        .collect();
    Table::new(schema, rows).expect("generated rows conform to the schema")
}

/// A request context drawing from the same role/purpose universes as the
/// policy generator, so ROLE and PURPOSE atoms discharge about half the time.
pub fn random_context(rng: &mut impl Rng) -> RequestContext {
    RequestContext {
        roles: gen::ROLES
            .iter()
            .filter(|_| rng.gen_bool(0.4))
            .map(|r| r.to_string())
            .collect(),
        purpose: (*gen::PURPOSES.choose(rng).unwrap()).to_string(),
    }
}

// ---------------------------------------------------------------------------
// Shared builder
// ---------------------------------------------------------------------------

/// What the generator knows the program plausibly discharged, used to seed
/// policy atoms that are satisfiable on purpose.
#[derive(Default)]
struct Hooks {
    /// Filters applied to still-verbatim columns, in order.
    filters: Vec<(String, Interval)>,
    /// Columns hashed or dropped from the frame at some point.
    concealed: BTreeSet<String>,
    /// `filter_groups` minimum sizes emitted.
    group_floors: Vec<u64>,
    /// Epsilons of laplace steps emitted.
    epsilons: Vec<f64>,
}

#[derive(Clone)]
enum Shape {
    Table { cols: Vec<(String, ColType)>, grouped: bool },
    Scalar,
}

impl Shape {
    fn cols(&self) -> &[(String, ColType)] {
        match self {
            Shape::Table { cols, .. } => cols,
            Shape::Scalar => &[],
        }
    }

    fn numeric_cols(&self) -> Vec<String> {
        self.cols()
            .iter()
            .filter(|(_, t)| *t != ColType::String)
            .map(|(c, _)| c.clone())
            .collect()
    }
}

struct Builder {
    statements: Vec<Statement>,
    next_var: usize,
    hooks: Hooks,
}

impl Builder {
    fn new() -> Builder {
        Builder { statements: Vec::new(), next_var: 0, hooks: Hooks::default() }
    }

    fn emit(&mut self, expr: Expr) -> String {
        self.next_var += 1;
        let var = format!("v{}", self.next_var);
        self.statements.push(Statement::Assign { var: var.clone(), expr });
        var
    }

    fn finish(mut self, output_var: String) -> (Program, Hooks) {
        self.statements.push(Statement::Output { var: output_var });
        (Program { statements: self.statements }, self.hooks)
    }
}

const CLIP_BOUNDS: &[f64] = &[-10.0, 0.0, 18.0, 21.0, 65.0, 100.0, 250.0];

fn clip_range(rng: &mut impl Rng) -> (f64, f64) {
    let a = *CLIP_BOUNDS.choose(rng).unwrap();
    let b = *CLIP_BOUNDS.choose(rng).unwrap();
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Widens an interval (or keeps it): the policy atom is easier than the
/// filter actually applied, so the application discharges it.
fn widen(rng: &mut impl Rng, iv: &Interval) -> Interval {
    let (lo, lo_closed) = iv.lo();
    let (hi, hi_closed) = iv.hi();
    match rng.gen_range(0..4) {
        2 if hi.is_finite() => Interval::at_most(hi.get(), hi_closed).expect("half-line is valid"),
        3 if lo.is_finite() => Interval::at_least(lo.get(), lo_closed).expect("half-line is valid"),
        _ => iv.clone(),
    }
}

// ---------------------------------------------------------------------------
// The wild generator (soundness sweeps)
// ---------------------------------------------------------------------------

/// A random 3–8 statement program over one or two capsules of 5–50 rows,
/// with a policy drawn from program-aware and random atoms. Programs are
/// well-typed (filters and sums only on numeric columns, joins on a shared
/// same-typed key with disjoint value columns) but otherwise unconstrained:
/// repeated filters, post-aggregation filters, mid-chain noise, branches and
/// joins all occur.
pub fn random_analysis_case(rng: &mut impl Rng) -> GenCase {
    let mut b = Builder::new();
    let two_capsules = rng.gen_bool(0.25);

    let mut capsule_columns: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let (mut shape, mut cur, budget) = if two_capsules {
        let mut c1: Vec<String> = vec!["category".into(), "age".into(), "amount".into()];
        if rng.gen_bool(0.5) {
            c1.push("name".into());
        }
        let mut c2: Vec<String> = vec!["category".into(), "score".into()];
        if rng.gen_bool(0.5) {
            c2.push("merchant".into());
        }
        capsule_columns.insert("c1".into(), c1.clone());
        capsule_columns.insert("c2".into(), c2.clone());
        let left = b.emit(Expr::ReadCapsule { capsule: "c1".into() });
        let right = b.emit(Expr::ReadCapsule { capsule: "c2".into() });
        let joined =
            b.emit(Expr::Join { left, right, on: "category".into() });
        let mut cols: Vec<(String, ColType)> =
            c1.iter().map(|c| (c.clone(), col_type(c))).collect();
        cols.extend(c2.iter().filter(|c| c.as_str() != "category").map(|c| (c.clone(), col_type(c))));
        let n_total = rng.gen_range(5..=8);
        (Shape::Table { cols, grouped: false }, joined, n_total - 4)
    } else {
        let mut cols: Vec<String> = vec!["category".into()];
        for extra in ["age", "amount", "score", "name", "merchant"] {
            if rng.gen_bool(0.55) {
                cols.push(extra.into());
            }
        }
        if !cols.iter().any(|c| is_numeric(c)) {
            cols.push("amount".into());
        }
        capsule_columns.insert("c1".into(), cols.clone());
        let read = b.emit(Expr::ReadCapsule { capsule: "c1".into() });
        let n_total = rng.gen_range(3..=8);
        let cols = cols.iter().map(|c| (c.clone(), col_type(c))).collect();
        (Shape::Table { cols, grouped: false }, read, n_total - 2)
    };

    let mut remaining = budget;
    while remaining > 0 {
        match &shape {
            Shape::Scalar => {
                if rng.gen_bool(0.5) {
                    let epsilon = *[0.5, 1.0, 2.0].choose(rng).unwrap();
                    b.hooks.epsilons.push(epsilon);
                    cur = b.emit(Expr::Laplace {
                        src: cur,
                        epsilon,
                        delta: 0.0,
                        sensitivity: *[1.0, 5.0].choose(rng).unwrap(),
                    });
                }
                break;
            }
            Shape::Table { .. } => {
                let step = pick_wild_step(rng, &shape, remaining);
                let cost = apply_wild_step(rng, &mut b, &mut shape, &mut cur, step);
                remaining = remaining.saturating_sub(cost);
            }
        }
    }

    let (program, hooks) = b.finish(cur.clone());

    let mut tables = BTreeMap::new();
    let mut schema_union: BTreeSet<String> = BTreeSet::new();
    let mut row_counts = BTreeMap::new();
    for (capsule, columns) in &capsule_columns {
        let rows = rng.gen_range(5..=50);
        tables.insert(capsule.clone(), random_table(rng, columns, rows));
        schema_union.extend(columns.iter().cloned());
        row_counts.insert(capsule.clone(), rows as u64);
    }

    let policy = policy_for_case(rng, &hooks, &schema_union, false);
    let capsules = capsule_columns
        .iter()
        .map(|(capsule, columns)| {
            (
                capsule.clone(),
                CapsuleFacts {
                    policy: policy.clone(),
                    schema: columns.iter().cloned().collect(),
                    row_count: Some(row_counts[capsule]),
                    analysis_state: None,
                },
            )
        })
        .collect();

    GenCase { program, tables, capsules, output_var: cur }
}

#[derive(Clone, Copy, PartialEq)]
enum WildStep {
    Filter,
    Clip,
    Project,
    Drop,
    Hash,
    Group,
    FilterGroups,
    AggAll,
    LaplaceTable,
    Passthrough,
    Branch,
}

fn pick_wild_step(rng: &mut impl Rng, shape: &Shape, remaining: usize) -> WildStep {
    let Shape::Table { cols, grouped } = shape else { unreachable!("tables only") };
    let has_numeric = cols.iter().any(|(_, t)| *t != ColType::String);
    let mut menu: Vec<(WildStep, u32)> = Vec::new();
    if has_numeric {
        menu.push((WildStep::Filter, 30));
        menu.push((WildStep::Clip, 10));
    }
    if cols.len() >= 2 {
        menu.push((WildStep::Project, 8));
        menu.push((WildStep::Drop, 8));
        menu.push((WildStep::Group, 20));
    }
    menu.push((WildStep::Hash, 10));
    if *grouped {
        menu.push((WildStep::FilterGroups, 25));
    }
    menu.push((WildStep::AggAll, 12));
    menu.push((WildStep::LaplaceTable, 5));
    menu.push((WildStep::Passthrough, 4));
    if remaining >= 3 && has_numeric {
        menu.push((WildStep::Branch, 10));
    }
    menu.choose_weighted(rng, |(_, w)| *w).expect("menu never empty").0
}

/// Emits one step, updating the tracked shape; returns how many statements
/// it cost.
fn apply_wild_step(
    rng: &mut impl Rng,
    b: &mut Builder,
    shape: &mut Shape,
    cur: &mut String,
    step: WildStep,
) -> usize {
    let Shape::Table { cols, grouped } = shape else { unreachable!("tables only") };
    match step {
        WildStep::Filter => {
            let numeric: Vec<String> =
                cols.iter().filter(|(_, t)| *t != ColType::String).map(|(c, _)| c.clone()).collect();
            let column = numeric.choose(rng).unwrap().clone();
            let interval = gen::random_interval(rng);
            b.hooks.filters.push((column.clone(), interval.clone()));
            *cur = b.emit(Expr::FilterRows { src: cur.clone(), column, interval });
            1
        }
        WildStep::Clip => {
            let numeric: Vec<String> =
                cols.iter().filter(|(_, t)| *t != ColType::String).map(|(c, _)| c.clone()).collect();
            let column = numeric.choose(rng).unwrap().clone();
            let (lo, hi) = clip_range(rng);
            b.hooks.filters.push((
                column.clone(),
                Interval::new(lo, true, hi, true).expect("clip range is ordered"),
            ));
            *cur = b.emit(Expr::Call {
                name: "clip_outliers".into(),
                src: cur.clone(),
                args: vec![Lit::Str(column), Lit::Num(lo), Lit::Num(hi)],
            });
            1
        }
        WildStep::Project => {
            let keep_n = rng.gen_range(1..cols.len());
            let keep: Vec<String> = cols
                .choose_multiple(rng, keep_n)
                .map(|(c, _)| c.clone())
                .collect();
            for (c, _) in cols.iter() {
                if !keep.contains(c) {
                    b.hooks.concealed.insert(c.clone());
                }
            }
            cols.retain(|(c, _)| keep.contains(c));
            *cur = b.emit(Expr::Project { src: cur.clone(), columns: keep });
            1
        }
        WildStep::Drop => {
            let drop_n = rng.gen_range(1..cols.len());
            let dropped: Vec<String> = cols
                .choose_multiple(rng, drop_n)
                .map(|(c, _)| c.clone())
                .collect();
            b.hooks.concealed.extend(dropped.iter().cloned());
            cols.retain(|(c, _)| !dropped.contains(c));
            *cur = b.emit(Expr::DropColumns { src: cur.clone(), columns: dropped });
            1
        }
        WildStep::Hash => {
            let column = cols.choose(rng).unwrap().0.clone();
            if let Some(entry) = cols.iter_mut().find(|(c, _)| *c == column) {
                entry.1 = ColType::String;
            }
            b.hooks.concealed.insert(column.clone());
            *cur = b.emit(Expr::HashColumn { src: cur.clone(), column });
            1
        }
        WildStep::Group => {
            let key_n = if cols.len() > 2 && rng.gen_bool(0.25) { 2 } else { 1 };
            let keys: Vec<String> =
                cols.choose_multiple(rng, key_n).map(|(c, _)| c.clone()).collect();
            let rest: Vec<(String, ColType)> =
                cols.iter().filter(|(c, _)| !keys.contains(c)).cloned().collect();
            let agg_n = rng.gen_range(1..=2.min(rest.len()));
            let mut aggs: BTreeMap<String, AggFn> = BTreeMap::new();
            for (c, t) in rest.choose_multiple(rng, agg_n) {
                let f = if *t == ColType::String {
                    AggFn::Count
                } else {
                    *[AggFn::Sum, AggFn::Mean, AggFn::Count].choose(rng).unwrap()
                };
                aggs.insert(c.clone(), f);
            }
            let mut new_cols: Vec<(String, ColType)> = keys
                .iter()
                .map(|k| (k.clone(), cols.iter().find(|(c, _)| c == k).unwrap().1))
                .collect();
            for (c, f) in &aggs {
                let src_ty = cols.iter().find(|(n, _)| n == c).unwrap().1;
                let ty = match f {
                    AggFn::Count => ColType::Int,
                    AggFn::Mean => ColType::Float,
                    AggFn::Sum => src_ty,
                };
                new_cols.push((c.clone(), ty));
            }
            for (c, _) in cols.iter() {
                if !new_cols.iter().any(|(n, _)| n == c) {
                    b.hooks.concealed.insert(c.clone());
                }
            }
            *cols = new_cols;
            *grouped = true;
            *cur = b.emit(Expr::GroupAgg { src: cur.clone(), keys, aggs });
            1
        }
        WildStep::FilterGroups => {
            let min_size = rng.gen_range(1..=12);
            b.hooks.group_floors.push(min_size);
            *cur = b.emit(Expr::FilterGroupsMinSize { src: cur.clone(), min_size });
            1
        }
        WildStep::AggAll => {
            let numeric: Vec<String> =
                cols.iter().filter(|(_, t)| *t != ColType::String).map(|(c, _)| c.clone()).collect();
            let (column, agg) = if numeric.is_empty() || rng.gen_bool(0.25) {
                (cols.choose(rng).unwrap().0.clone(), AggFn::Count)
            } else {
                let c = numeric.choose(rng).unwrap().clone();
                let f = *[AggFn::Sum, AggFn::Sum, AggFn::Count, AggFn::Mean].choose(rng).unwrap();
                (c, f)
            };
            *cur = b.emit(Expr::AggAll { src: cur.clone(), column, agg });
            *shape = Shape::Scalar;
            1
        }
        WildStep::LaplaceTable => {
            let epsilon = *[0.5, 1.0, 2.0].choose(rng).unwrap();
            b.hooks.epsilons.push(epsilon);
            for entry in cols.iter_mut() {
                if entry.1 == ColType::Int {
                    entry.1 = ColType::Float;
                }
            }
            *cur = b.emit(Expr::Laplace {
                src: cur.clone(),
                epsilon,
                delta: 0.0,
                sensitivity: *[1.0, 5.0].choose(rng).unwrap(),
            });
            1
        }
        WildStep::Passthrough => {
            *cur = b.emit(Expr::Call { name: "passthrough".into(), src: cur.clone(), args: vec![] });
            1
        }
        WildStep::Branch => {
            let count_col = cols.choose(rng).unwrap().0.clone();
            let cond_var =
                b.emit(Expr::AggAll { src: cur.clone(), column: count_col, agg: AggFn::Count });
            let numeric: Vec<String> =
                cols.iter().filter(|(_, t)| *t != ColType::String).map(|(c, _)| c.clone()).collect();
            let column = numeric.choose(rng).unwrap().clone();
            let then_var = b.emit(Expr::FilterRows {
                src: cur.clone(),
                column,
                interval: gen::random_interval(rng),
            });
            let cmp = *[CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge].choose(rng).unwrap();
            *cur = b.emit(Expr::BranchJoin {
                cond: Cond { var: cond_var, cmp, value: f64::from(rng.gen_range(0..=40)) },
                then_var,
                else_var: cur.clone(),
            });
            3
        }
    }
}

// ---------------------------------------------------------------------------
// The monotone generator (compositionality)
// ---------------------------------------------------------------------------

/// A straight-line single-capsule pipeline whose evidence only accumulates:
///
/// * each column is filtered at most once, while still verbatim;
/// * at most one group-aggregation, with its floor (`filter_groups`) applied
///   immediately and nothing floor-resetting afterwards;
/// * whole-table aggregation only as the terminal collapse;
/// * laplace noise only as the final transformation;
/// * no joins or branches.
///
/// On such pipelines a requirement discharged at any prefix stays discharged
/// at the end, which is exactly what makes split-and-resume equal to
/// whole-pipeline analysis. The paired policy never demands `AGGREGATE(1)`
/// (raw rows satisfy it, and a later filter would withdraw that evidence).
pub fn random_monotone_case(rng: &mut impl Rng) -> GenCase {
    let mut b = Builder::new();

    let will_group = rng.gen_bool(0.5);
    let will_scalar = !will_group && rng.gen_bool(0.4);
    let will_noise = rng.gen_bool(0.4);

    let mut columns: Vec<String> = vec!["category".into(), "amount".into()];
    for extra in ["age", "score", "name", "merchant"] {
        if rng.gen_bool(0.5) {
            columns.push(extra.into());
        }
    }
    // `category` keys the grouping and `amount` feeds aggregations, so they
    // must survive phase A untouched when a later phase needs them.
    let reserved: BTreeSet<String> = if will_group {
        ["category".to_string(), "amount".to_string()].into()
    } else if will_scalar {
        ["amount".to_string()].into()
    } else {
        BTreeSet::new()
    };

    let mut cols: Vec<(String, ColType)> =
        columns.iter().map(|c| (c.clone(), col_type(c))).collect();
    let mut cur = b.emit(Expr::ReadCapsule { capsule: "c1".into() });

    // Statement budget: read + output take 2 of the at most 8.
    let mut remaining: usize = 6;
    if will_noise {
        remaining -= 1;
    }
    if will_group {
        remaining -= 2; // groupby + filter_groups
    }
    if will_scalar {
        remaining -= 1;
    }

    // Phase A: filters on distinct verbatim numeric columns, concealment of
    // unreserved ones.
    let mut filtered_cols: BTreeSet<String> = BTreeSet::new();
    let mut hashed_cols: BTreeSet<String> = BTreeSet::new();
    for _ in 0..rng.gen_range(0..=2.min(remaining)) {
        let fresh_numeric: Vec<String> = cols
            .iter()
            .filter(|(c, t)| {
                *t != ColType::String && !filtered_cols.contains(c) && !hashed_cols.contains(c)
            })
            .map(|(c, _)| c.clone())
            .collect();
        let hashable: Vec<String> = cols
            .iter()
            .filter(|(c, _)| !reserved.contains(c))
            .map(|(c, _)| c.clone())
            .collect();
        let droppable: Vec<String> = if cols.len() > 2 { hashable.clone() } else { Vec::new() };

        let mut menu: Vec<(u32, u32)> = Vec::new();
        if !fresh_numeric.is_empty() {
            menu.push((0, 40)); // filter
            menu.push((1, 15)); // clip
        }
        if !hashable.is_empty() {
            menu.push((2, 15)); // hash
        }
        if !droppable.is_empty() {
            menu.push((3, 10)); // drop
        }
        if menu.is_empty() {
            break;
        }
        match menu.choose_weighted(rng, |(_, w)| *w).unwrap().0 {
            0 => {
                let column = fresh_numeric.choose(rng).unwrap().clone();
                let interval = gen::random_interval(rng);
                filtered_cols.insert(column.clone());
                b.hooks.filters.push((column.clone(), interval.clone()));
                cur = b.emit(Expr::FilterRows { src: cur, column, interval });
            }
            1 => {
                let column = fresh_numeric.choose(rng).unwrap().clone();
                let (lo, hi) = clip_range(rng);
                filtered_cols.insert(column.clone());
                b.hooks.filters.push((
                    column.clone(),
                    Interval::new(lo, true, hi, true).expect("clip range is ordered"),
                ));
                cur = b.emit(Expr::Call {
                    name: "clip_outliers".into(),
                    src: cur,
                    args: vec![Lit::Str(column), Lit::Num(lo), Lit::Num(hi)],
                });
            }
            2 => {
                let column = hashable.choose(rng).unwrap().clone();
                hashed_cols.insert(column.clone());
                if let Some(entry) = cols.iter_mut().find(|(c, _)| *c == column) {
                    entry.1 = ColType::String;
                }
                b.hooks.concealed.insert(column.clone());
                cur = b.emit(Expr::HashColumn { src: cur, column });
            }
            _ => {
                let column = droppable.choose(rng).unwrap().clone();
                cols.retain(|(c, _)| *c != column);
                b.hooks.concealed.insert(column.clone());
                cur = b.emit(Expr::DropColumns { src: cur, columns: vec![column] });
            }
        }
        remaining -= 1;
    }

    if will_group {
        let agg = *[AggFn::Mean, AggFn::Sum].choose(rng).unwrap();
        for (c, _) in cols.iter() {
            if c != "category" && c != "amount" {
                b.hooks.concealed.insert(c.clone());
            }
        }
        cols.retain(|(c, _)| c == "category" || c == "amount");
        if let Some(entry) = cols.iter_mut().find(|(c, _)| c == "amount") {
            entry.1 = if agg == AggFn::Mean { ColType::Float } else { entry.1 };
        }
        cur = b.emit(Expr::GroupAgg {
            src: cur,
            keys: vec!["category".into()],
            aggs: BTreeMap::from([("amount".to_string(), agg)]),
        });
        let min_size = rng.gen_range(2..=8);
        b.hooks.group_floors.push(min_size);
        cur = b.emit(Expr::FilterGroupsMinSize { src: cur, min_size });

        // Phase C: concealment only — nothing here resets the floor.
        for _ in 0..rng.gen_range(0..=2.min(remaining)) {
            if rng.gen_bool(0.5) && cols.len() > 1 {
                let column = "category".to_string();
                if cols.iter().any(|(c, _)| *c == column) {
                    cols.retain(|(c, _)| *c != column);
                    b.hooks.concealed.insert(column.clone());
                    cur = b.emit(Expr::DropColumns { src: cur, columns: vec![column] });
                }
            } else if cols.iter().any(|(c, t)| c == "category" && *t == ColType::String) {
                b.hooks.concealed.insert("category".into());
                cur = b.emit(Expr::HashColumn { src: cur, column: "category".into() });
            }
        }
    } else if will_scalar {
        let agg = *[AggFn::Sum, AggFn::Count].choose(rng).unwrap();
        cur = b.emit(Expr::AggAll { src: cur, column: "amount".into(), agg });
    }

    if will_noise {
        let epsilon = *[0.5, 1.0, 2.0].choose(rng).unwrap();
        b.hooks.epsilons.push(epsilon);
        cur = b.emit(Expr::Laplace { src: cur, epsilon, delta: 0.0, sensitivity: 1.0 });
    }

    let (program, hooks) = b.finish(cur.clone());

    let rows = rng.gen_range(5..=50);
    let table = random_table(rng, &columns, rows);
    let schema: BTreeSet<String> = columns.iter().cloned().collect();
    let policy = policy_for_case(rng, &hooks, &schema, true);

    GenCase {
        program,
        tables: BTreeMap::from([("c1".to_string(), table)]),
        capsules: BTreeMap::from([(
            "c1".to_string(),
            CapsuleFacts {
                policy,
                schema,
                row_count: Some(rows as u64),
                analysis_state: None,
            },
        )]),
        output_var: cur,
    }
}

/// Splits a straight-line pipeline after its `boundary`-th assignment
/// (1-based). Returns the prefix (ending in an output of the split variable)
/// and the suffix (re-reading that variable from `derived_capsule`, then the
/// remaining statements verbatim), plus the split variable's name.
pub fn split_program(
    program: &Program,
    boundary: usize,
    derived_capsule: &str,
) -> (Program, Program, String) {
    let n_assigns = program
        .statements
        .iter()
        .filter(|s| matches!(s, Statement::Assign { .. }))
        .count();
    assert!(
        boundary >= 1 && boundary <= n_assigns,
        "boundary {boundary} outside 1..={n_assigns}"
    );
    let split_var = match &program.statements[boundary - 1] {
        Statement::Assign { var, .. } => var.clone(),
        Statement::Output { .. } => panic!("boundary lands on an output statement"),
    };

    let mut prefix = program.statements[..boundary].to_vec();
    prefix.push(Statement::Output { var: split_var.clone() });

    let mut suffix = vec![Statement::Assign {
        var: split_var.clone(),
        expr: Expr::ReadCapsule { capsule: derived_capsule.to_string() },
    }];
    suffix.extend(program.statements[boundary..].iter().cloned());

    (Program { statements: prefix }, Program { statements: suffix }, split_var)
}

// ---------------------------------------------------------------------------
// Program-aware policies
// ---------------------------------------------------------------------------

/// A policy mixing atoms the program plausibly discharges with random ones.
/// With `monotone` set, aggregation widths of 1 are excluded: raw rows
/// already satisfy them, and a later filter withdraws that evidence, which
/// would (correctly) break split-equals-whole.
fn policy_for_case(
    rng: &mut impl Rng,
    hooks: &Hooks,
    schema: &BTreeSet<String>,
    monotone: bool,
) -> Policy {
    if rng.gen_bool(0.03) {
        return Policy::satisfied();
    }

    let mut pool: Vec<Requirement> = Vec::new();

    for (column, interval) in hooks.filters.iter().take(3) {
        pool.push(
            Requirement::filter(column.clone(), widen(rng, interval))
                .expect("generated filters are valid"),
        );
    }
    for column in hooks.concealed.iter().take(2) {
        pool.push(Requirement::redact(column.clone()).expect("column names are valid"));
    }
    pool.push(Requirement::redact(*gen::ALL_COLUMNS.choose(rng).unwrap()).unwrap());

    pool.push(Requirement::schema(schema.iter().cloned()).expect("non-empty schema"));
    let subset: BTreeSet<String> =
        schema.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
    if !subset.is_empty() {
        pool.push(Requirement::schema(subset).unwrap());
    }

    for floor in hooks.group_floors.iter().take(2) {
        pool.push(Requirement::aggregate(*floor).expect("positive width"));
        if *floor > 2 {
            pool.push(Requirement::aggregate(floor - 1).unwrap());
        }
    }
    let random_widths: &[u64] =
        if monotone { &[2, 5, 10, 50] } else { &[1, 2, 5, 10, 50] };
    pool.push(Requirement::aggregate(*random_widths.choose(rng).unwrap()).unwrap());

    for epsilon in hooks.epsilons.iter().take(2) {
        pool.push(Requirement::dp(*epsilon, 0.0).expect("valid budget"));
        pool.push(Requirement::dp(epsilon * 2.0, 0.01).unwrap());
    }
    if rng.gen_bool(0.3) {
        pool.push(Requirement::dp(1.0, 0.0).unwrap());
    }

    if rng.gen_bool(0.5) {
        pool.push(Requirement::role(*gen::ROLES.choose(rng).unwrap()).unwrap());
    }
    if rng.gen_bool(0.5) {
        pool.push(Requirement::purpose(*gen::PURPOSES.choose(rng).unwrap()).unwrap());
    }

    let n_clauses = rng.gen_range(1..=3);
    let clauses: Vec<Clause> = (0..n_clauses)
        .map(|_| {
            let n_atoms = rng.gen_range(1..=4.min(pool.len()));
            Clause::new(pool.choose_multiple(rng, n_atoms).cloned())
        })
        .collect();
    Policy::new(clauses)
}
