//! The dataflow IR analysts' programs lower to.
//!
//! A [`Program`] is a straight line of single-assignment statements over a
//! closed set of dataframe operations — no control flow survives lowering
//! (loops are unrolled, conditionals become [`Expr::BranchJoin`]). That
//! flatness is what makes the abstract interpreter in [`crate::analyzer`] a
//! single forward pass, and the JSON form is canonical (stable field order)
//! so golden corpus files and service payloads diff cleanly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::policy::Interval;

/// Aggregation functions accepted by `GroupAgg` and `AggAll`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFn {
    Sum,
    Mean,
    Count,
}

impl fmt::Display for AggFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggFn::Sum => "sum",
            AggFn::Mean => "mean",
            AggFn::Count => "count",
        })
    }
}

/// Comparison operators in branch conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        })
    }
}

/// A scalar branch condition: `var cmp value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cond {
    pub var: String,
    pub cmp: CmpOp,
    pub value: f64,
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.var, self.cmp, self.value)
    }
}

/// Literal arguments to registered stub calls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lit {
    Num(f64),
    Str(String),
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lit::Num(n) => write!(f, "{n}"),
            Lit::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// Right-hand sides. `src`-style fields always name previously assigned vars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    /// Load a capsule's table. The id is always a literal — policies must be
    /// resolvable before any analysis begins.
    ReadCapsule { capsule: String },
    /// Keep rows whose `column` lies in `interval`.
    FilterRows { src: String, column: String, interval: Interval },
    /// Keep exactly these columns, in this order.
    Project { src: String, columns: Vec<String> },
    /// Remove these columns.
    DropColumns { src: String, columns: Vec<String> },
    /// Replace a column's values with salted digests (pseudonymization).
    HashColumn { src: String, column: String },
    /// Group by `keys` and aggregate each listed column.
    GroupAgg { src: String, keys: Vec<String>, aggs: BTreeMap<String, AggFn> },
    /// Keep only groups built from at least `min_size` rows.
    FilterGroupsMinSize { src: String, min_size: u64 },
    /// Collapse the whole table to one scalar.
    AggAll { src: String, column: String, agg: AggFn },
    /// Inner equi-join on a shared column.
    Join { left: String, right: String, on: String },
    /// Add Laplace noise (scale = sensitivity/epsilon) to every released
    /// value. `delta` is carried for policy comparison; the mechanism itself
    /// is pure ε-DP.
    Laplace { src: String, epsilon: f64, delta: f64, sensitivity: f64 },
    /// The value is `then_var` where `cond` held, `else_var` otherwise —
    /// the residue of a lowered if/else.
    BranchJoin { cond: Cond, then_var: String, else_var: String },
    /// A registered stub operation (see the analyzer's stub registry).
    Call { name: String, src: String, args: Vec<Lit> },
}

impl Expr {
    /// Variables this expression reads, in field order.
    pub fn used_vars(&self) -> Vec<&str> {
        match self {
            Expr::ReadCapsule { .. } => vec![],
            Expr::FilterRows { src, .. }
            | Expr::Project { src, .. }
            | Expr::DropColumns { src, .. }
            | Expr::HashColumn { src, .. }
            | Expr::GroupAgg { src, .. }
            | Expr::FilterGroupsMinSize { src, .. }
            | Expr::AggAll { src, .. }
            | Expr::Laplace { src, .. }
            | Expr::Call { src, .. } => vec![src],
            Expr::Join { left, right, .. } => vec![left, right],
            Expr::BranchJoin { cond, then_var, else_var } => {
                vec![cond.var.as_str(), then_var, else_var]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statement {
    Assign { var: String, expr: Expr },
    Output { var: String },
}

/// A validated-on-demand straight-line program.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Program {
    pub statements: Vec<Statement>,
}

/// What [`Program::validate`] found wrong, if anything.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Index of the offending statement; `statements.len()` for
    /// program-level problems (e.g. a missing output).
    pub statement: usize,
    pub code: DiagCode,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagCode {
    DuplicateAssign,
    UseBeforeAssign,
    MissingOutput,
    InvalidArg,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "statement {}: {:?}: {}", self.statement, self.code, self.message)
    }
}

impl Program {
    /// Canonical JSON: declaration-order fields, pretty-printed. Two equal
    /// programs always serialize byte-identically.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn from_json(text: &str) -> Result<Program, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Every capsule id the program reads.
    pub fn read_capsules(&self) -> BTreeSet<String> {
        self.statements
            .iter()
            .filter_map(|s| match s {
                Statement::Assign { expr: Expr::ReadCapsule { capsule }, .. } => {
                    Some(capsule.clone())
                }
                _ => None,
            })
            .collect()
    }

    /// Checks the IR invariants. An empty result means the program is
    /// well-formed: single assignment, no use before assignment, at least one
    /// output, and per-op argument sanity.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let mut assigned: BTreeSet<&str> = BTreeSet::new();
        let mut has_output = false;

        for (i, stmt) in self.statements.iter().enumerate() {
            let use_of = |var: &str, assigned: &BTreeSet<&str>, diags: &mut Vec<Diagnostic>| {
                if !assigned.contains(var) {
                    diags.push(Diagnostic {
                        statement: i,
                        code: DiagCode::UseBeforeAssign,
                        message: format!("variable {var:?} used before assignment"),
                    });
                }
            };
            match stmt {
                Statement::Assign { var, expr } => {
                    for used in expr.used_vars() {
                        use_of(used, &assigned, &mut diags);
                    }
                    self.check_args(i, expr, &mut diags);
                    if !assigned.insert(var) {
                        diags.push(Diagnostic {
                            statement: i,
                            code: DiagCode::DuplicateAssign,
                            message: format!("variable {var:?} assigned more than once"),
                        });
                    }
                }
                Statement::Output { var } => {
                    use_of(var, &assigned, &mut diags);
                    has_output = true;
                }
            }
        }

        if !has_output {
            diags.push(Diagnostic {
                statement: self.statements.len(),
                code: DiagCode::MissingOutput,
                message: "program has no output statement".into(),
            });
        }
        diags
    }

    fn check_args(&self, i: usize, expr: &Expr, diags: &mut Vec<Diagnostic>) {
        let mut bad = |message: String| {
            diags.push(Diagnostic { statement: i, code: DiagCode::InvalidArg, message });
        };
        match expr {
            Expr::Project { columns, .. } if columns.is_empty() => {
                bad("projection keeps no columns".into());
            }
            Expr::GroupAgg { keys, aggs, .. } => {
                if keys.is_empty() {
                    bad("groupby needs at least one key column".into());
                }
                if aggs.is_empty() {
                    bad("groupby needs at least one aggregation".into());
                }
                for k in keys {
                    if aggs.contains_key(k) {
                        bad(format!("column {k:?} cannot be both key and aggregate"));
                    }
                }
            }
            Expr::FilterGroupsMinSize { min_size, .. } if *min_size < 1 => {
                bad("min_size must be at least 1".into());
            }
            Expr::Laplace { epsilon, delta, sensitivity, .. } => {
                if !(epsilon.is_finite() && *epsilon > 0.0) {
                    bad(format!("laplace epsilon must be positive, got {epsilon}"));
                }
                if !(delta.is_finite() && (0.0..=1.0).contains(delta)) {
                    bad(format!("laplace delta must lie in [0, 1], got {delta}"));
                }
                if !(sensitivity.is_finite() && *sensitivity > 0.0) {
                    bad(format!("laplace sensitivity must be positive, got {sensitivity}"));
                }
            }
            Expr::BranchJoin { cond, .. } if !cond.value.is_finite() => {
                bad(format!("branch condition compares against {}", cond.value));
            }
            _ => {}
        }
    }
}
