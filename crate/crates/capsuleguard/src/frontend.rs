//! The analyst surface language.
//!
//! Analysts write small, Python-flavored dataframe scripts:
//!
//! ```text
//! df = read_capsule("payments")
//! adults = df[df["age"] >= 18]
//! safe = hash_column(adults, "merchant")
//! by_cat = safe.groupby("category").agg({"amount": "mean"})
//! big = filter_groups(by_cat, min_size=10)
//! noisy = laplace(big, epsilon=1.0, sensitivity=1.0)
//! output(noisy)
//! ```
//!
//! [`parse_program`] lowers such a script to the straight-line IR in
//! [`crate::ir`]. The language is deliberately finite: every construct maps
//! to an IR operation the analyzer has a transfer rule for. `for` loops over
//! literal lists are unrolled (at most [`MAX_LOOP_ITERATIONS`] iterations,
//! [`MAX_STATEMENTS`] statements total); `if`/`else` lowers to
//! [`Expr::BranchJoin`] provided both branches assign the same variables;
//! everything else — `while`, recursion, dynamic capsule ids, calls that are
//! neither builtins nor registered stubs — is rejected up front.
//!
//! Assignments are converted to single-assignment form: rebinding a name
//! creates a fresh IR variable (`x`, then `x__2`, …), so emitted IR always
//! passes [`Program::validate`] cleanly. The full grammar is documented in
//! `docs/surface-language.md` with a golden corpus under `tests/corpus/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ir::{AggFn, CmpOp, Cond, Expr, Lit, Program, Statement};
use crate::policy::Interval;

/// Unrolling stops here: a literal list may not drive more iterations.
pub const MAX_LOOP_ITERATIONS: usize = 64;
/// Total emitted IR statements are capped to keep analysis time bounded.
pub const MAX_STATEMENTS: usize = 4096;

/// Names with fixed meaning; none may be used as a variable.
const BUILTINS: &[&str] = &[
    "read_capsule", "filter_groups", "agg_all", "laplace", "hash_column", "join", "output",
];
const KEYWORDS: &[&str] = &["for", "in", "if", "else"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrontendError {
    #[error("{line}:{col}: expected {}, found {found}", expected.join(" | "))]
    Syntax {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{line}: unsupported: {message}")]
    Unsupported { line: usize, message: String },
    #[error("{line}: limit exceeded: {message}")]
    Limit { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// Lexing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum T {
    Ident(String),
    Str(String),
    Num(f64),
    Sym(&'static str),
}

impl fmt::Display for T {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            T::Ident(s) => write!(f, "identifier '{s}'"),
            T::Str(s) => write!(f, "string {s:?}"),
            T::Num(n) => write!(f, "number '{n}'"),
            T::Sym(s) => write!(f, "'{s}'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    t: T,
    col: usize,
}

/// One meaningful source line.
struct Line {
    no: usize,
    indent: usize,
    toks: Vec<Spanned>,
}

const SYMBOLS: &[&str] = &["==", ">=", "<=", "=", ">", "<", "[", "]", "(", ")", "{", "}", ",", ":", "."];

fn lex_line(no: usize, text: &str) -> Result<Option<Line>, FrontendError> {
    let mut indent = 0usize;
    let mut rest = text;
    loop {
        if let Some(r) = rest.strip_prefix(' ') {
            indent += 1;
            rest = r;
        } else if rest.starts_with('\t') {
            return Err(FrontendError::Syntax {
                line: no,
                col: indent + 1,
                expected: vec!["spaces".into()],
                found: "tab indentation".into(),
            });
        } else {
            break;
        }
    }

    let mut toks = Vec::new();
    let mut chars = rest.char_indices().peekable();
    'outer: while let Some(&(i, c)) = chars.peek() {
        let col = indent + i + 1;
        if c == '#' {
            break; // comment to end of line
        }
        if c == ' ' {
            chars.next();
            continue;
        }
        if c == '"' {
            chars.next();
            let mut s = String::new();
            for (_, c) in chars.by_ref() {
                match c {
                    '"' => {
                        toks.push(Spanned { t: T::Str(s), col });
                        continue 'outer;
                    }
                    '\\' => {
                        return Err(FrontendError::Syntax {
                            line: no,
                            col,
                            expected: vec!["plain string".into()],
                            found: "escape sequence".into(),
                        })
                    }
                    c => s.push(c),
                }
            }
            return Err(FrontendError::Syntax {
                line: no,
                col,
                expected: vec!["closing '\"'".into()],
                found: "end of line".into(),
            });
        }
        if c.is_ascii_digit() || c == '-' {
            let start = i;
            let mut prev = c;
            chars.next();
            while let Some(&(_, c)) = chars.peek() {
                let continues = c.is_ascii_digit()
                    || c == '.'
                    || c == 'e'
                    || c == 'E'
                    || ((c == '-' || c == '+') && (prev == 'e' || prev == 'E'));
                if continues {
                    prev = c;
                    chars.next();
                } else {
                    break;
                }
            }
            let end = chars.peek().map_or(rest.len(), |&(j, _)| j);
            let lexeme = &rest[start..end];
            let n: f64 = lexeme.parse().map_err(|_| FrontendError::Syntax {
                line: no,
                col,
                expected: vec!["number".into()],
                found: format!("'{lexeme}'"),
            })?;
            toks.push(Spanned { t: T::Num(n), col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            chars.next();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    chars.next();
                } else {
                    break;
                }
            }
            let end = chars.peek().map_or(rest.len(), |&(j, _)| j);
            toks.push(Spanned { t: T::Ident(rest[start..end].to_string()), col });
            continue;
        }
        let tail = &rest[i..];
        match SYMBOLS.iter().find(|s| tail.starts_with(**s)) {
            Some(sym) => {
                for _ in 0..sym.len() {
                    chars.next();
                }
                toks.push(Spanned { t: T::Sym(sym), col });
            }
            None => {
                return Err(FrontendError::Syntax {
                    line: no,
                    col,
                    expected: vec!["token".into()],
                    found: format!("'{c}'"),
                })
            }
        }
    }

    if toks.is_empty() {
        Ok(None)
    } else {
        Ok(Some(Line { no, indent, toks }))
    }
}

// ---------------------------------------------------------------------------
// Parsing and lowering
// ---------------------------------------------------------------------------

/// Parses a script against the builtin operations only.
pub fn parse_program(source: &str) -> Result<Program, FrontendError> {
    parse_program_with_stubs(source, &BTreeSet::new())
}

/// Parses a script that may also call the named registered stub operations
/// (`name(df, literal…)` → [`Expr::Call`]). The analyzer and executor decide
/// what those calls mean; unlisted names are rejected here.
pub fn parse_program_with_stubs(
    source: &str,
    stubs: &BTreeSet<String>,
) -> Result<Program, FrontendError> {
    let mut lines = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        if let Some(line) = lex_line(i + 1, raw)? {
            lines.push(line);
        }
    }
    if let Some(first) = lines.first() {
        if first.indent != 0 {
            return Err(FrontendError::Syntax {
                line: first.no,
                col: 1,
                expected: vec!["unindented statement".into()],
                found: "indentation".into(),
            });
        }
    }

    let mut lower = Lower {
        stubs,
        statements: Vec::new(),
        scope: BTreeMap::new(),
        used_names: BTreeSet::new(),
        rename_counter: BTreeMap::new(),
        subst: BTreeMap::new(),
        outputs_allowed: true,
        saw_output: false,
    };
    let mut pos = 0;
    lower.block(&lines, &mut pos, 0)?;
    if pos < lines.len() {
        let line = &lines[pos];
        return Err(FrontendError::Syntax {
            line: line.no,
            col: 1,
            expected: vec!["consistent indentation".into()],
            found: "unexpected indentation".into(),
        });
    }
    if !lower.saw_output {
        let last = lines.last().map_or(1, |l| l.no);
        return Err(FrontendError::Syntax {
            line: last,
            col: 1,
            expected: vec!["at least one output(...)".into()],
            found: "end of program".into(),
        });
    }

    let program = Program { statements: lower.statements };
    debug_assert_eq!(program.validate(), vec![], "lowering must emit valid IR");
    Ok(program)
}

struct Lower<'a> {
    stubs: &'a BTreeSet<String>,
    statements: Vec<Statement>,
    /// surface name → current IR variable.
    scope: BTreeMap<String, String>,
    /// every IR variable emitted so far.
    used_names: BTreeSet<String>,
    rename_counter: BTreeMap<String, usize>,
    /// loop variable → literal for the current unrolled iteration.
    subst: BTreeMap<String, Lit>,
    outputs_allowed: bool,
    saw_output: bool,
}

impl<'a> Lower<'a> {
    /// Lowers consecutive lines at exactly `indent`, stopping at the first
    /// line that is shallower. Deeper lines are consumed by the statement
    /// that owns them (loop/branch bodies) or rejected.
    fn block(&mut self, lines: &[Line], pos: &mut usize, indent: usize) -> Result<(), FrontendError> {
        while *pos < lines.len() {
            let line = &lines[*pos];
            if line.indent < indent {
                return Ok(());
            }
            if line.indent > indent {
                return Err(FrontendError::Syntax {
                    line: line.no,
                    col: line.indent + 1,
                    expected: vec![format!("indentation of {indent}")],
                    found: "deeper indentation".into(),
                });
            }
            self.statement(lines, pos)?;
        }
        Ok(())
    }

    /// Consumes one statement (and its body, for `for`/`if`).
    fn statement(&mut self, lines: &[Line], pos: &mut usize) -> Result<(), FrontendError> {
        let line = &lines[*pos];
        let mut p = LineParser { line, at: 0 };
        match p.peek() {
            Some(T::Ident(w)) if w == "for" => self.for_loop(lines, pos),
            Some(T::Ident(w)) if w == "if" => self.if_else(lines, pos),
            Some(T::Ident(w)) if w == "else" => Err(FrontendError::Syntax {
                line: line.no,
                col: 1,
                expected: vec!["statement".into()],
                found: "'else' without matching 'if'".into(),
            }),
            Some(T::Ident(w)) if w == "while" => Err(FrontendError::Unsupported {
                line: line.no,
                message: "while loops are not supported; only for-loops over literal lists".into(),
            }),
            Some(T::Ident(w)) if w == "output" => {
                self.output(&mut p)?;
                *pos += 1;
                Ok(())
            }
            Some(T::Ident(w)) if w == "def" => Err(FrontendError::Unsupported {
                line: line.no,
                message: "function definitions are not supported".into(),
            }),
            _ => {
                self.assignment(&mut p)?;
                *pos += 1;
                Ok(())
            }
        }
    }

    fn emit(&mut self, line: usize, stmt: Statement) -> Result<(), FrontendError> {
        if self.statements.len() >= MAX_STATEMENTS {
            return Err(FrontendError::Limit {
                line,
                message: format!("program exceeds {MAX_STATEMENTS} lowered statements"),
            });
        }
        self.statements.push(stmt);
        Ok(())
    }

    /// Fresh IR name for a surface binding: the bare name on first use,
    /// `name__2`, `name__3`, … on rebinds (single-assignment conversion).
    fn bind(&mut self, surface: &str) -> String {
        let mut candidate = surface.to_string();
        while self.used_names.contains(&candidate) {
            let n = self.rename_counter.entry(surface.to_string()).or_insert(1);
            *n += 1;
            candidate = format!("{surface}__{n}");
        }
        self.used_names.insert(candidate.clone());
        self.scope.insert(surface.to_string(), candidate.clone());
        candidate
    }

    /// Resolves a variable reference.
    fn resolve(&self, p: &LineParser, name: &str, col: usize) -> Result<String, FrontendError> {
        if self.subst.contains_key(name) {
            return Err(FrontendError::Unsupported {
                line: p.line.no,
                message: format!("loop variable {name:?} cannot be used as a dataframe"),
            });
        }
        self.scope.get(name).cloned().ok_or_else(|| FrontendError::Syntax {
            line: p.line.no,
            col,
            expected: vec!["a previously assigned variable".into()],
            found: format!("undefined variable '{name}'"),
        })
    }

    fn output(&mut self, p: &mut LineParser) -> Result<(), FrontendError> {
        if !self.outputs_allowed {
            return Err(FrontendError::Unsupported {
                line: p.line.no,
                message: "output(...) inside if/else branches is not supported".into(),
            });
        }
        p.expect_ident("output")?;
        p.expect_sym("(")?;
        let (name, col) = p.ident("variable name")?;
        let var = self.resolve(p, &name, col)?;
        p.expect_sym(")")?;
        p.end()?;
        let line = p.line.no;
        self.saw_output = true;
        self.emit(line, Statement::Output { var })
    }

    fn assignment(&mut self, p: &mut LineParser) -> Result<(), FrontendError> {
        let (target, col) = p.ident("variable name")?;
        if KEYWORDS.contains(&target.as_str()) || BUILTINS.contains(&target.as_str()) {
            return Err(FrontendError::Syntax {
                line: p.line.no,
                col,
                expected: vec!["variable name".into()],
                found: format!("reserved word '{target}'"),
            });
        }
        if self.subst.contains_key(&target) {
            return Err(FrontendError::Unsupported {
                line: p.line.no,
                message: format!("loop variable {target:?} cannot be reassigned"),
            });
        }
        p.expect_sym("=")?;
        let expr = self.expr(p)?;
        p.end()?;
        let line = p.line.no;
        let var = self.bind(&target);
        self.emit(line, Statement::Assign { var, expr })
    }

    fn for_loop(&mut self, lines: &[Line], pos: &mut usize) -> Result<(), FrontendError> {
        let header = &lines[*pos];
        let mut p = LineParser { line: header, at: 0 };
        p.expect_ident("for")?;
        let (loop_var, _) = p.ident("loop variable")?;
        p.expect_ident("in")?;
        p.expect_sym("[")?;
        let mut items = Vec::new();
        if !p.peek_sym("]") {
            items.push(p.literal(&self.subst)?);
            while p.peek_sym(",") {
                p.expect_sym(",")?;
                items.push(p.literal(&self.subst)?);
            }
        }
        p.expect_sym("]")?;
        p.expect_sym(":")?;
        p.end()?;

        if items.len() > MAX_LOOP_ITERATIONS {
            return Err(FrontendError::Limit {
                line: header.no,
                message: format!(
                    "loop over {} items exceeds the {MAX_LOOP_ITERATIONS}-iteration unrolling limit",
                    items.len()
                ),
            });
        }

        let body_start = *pos + 1;
        let body_end = block_extent(lines, body_start, header.indent, header.no)?;
        let shadowed = self.subst.get(&loop_var).cloned();

        for item in items {
            self.subst.insert(loop_var.clone(), item);
            let mut body_pos = body_start;
            self.block(&lines[..body_end], &mut body_pos, lines[body_start].indent)?;
        }
        match shadowed {
            Some(lit) => self.subst.insert(loop_var.clone(), lit),
            None => self.subst.remove(&loop_var),
        };
        *pos = body_end;
        Ok(())
    }

    fn if_else(&mut self, lines: &[Line], pos: &mut usize) -> Result<(), FrontendError> {
        let header = &lines[*pos];
        let mut p = LineParser { line: header, at: 0 };
        p.expect_ident("if")?;
        let (cond_name, cond_col) = p.ident("scalar variable")?;
        let cond_var = self.resolve(&p, &cond_name, cond_col)?;
        let cmp = p.cmp_op()?;
        let value = p.number(&self.subst)?;
        p.expect_sym(":")?;
        p.end()?;
        let cond = Cond { var: cond_var, cmp, value };

        let then_start = *pos + 1;
        let then_end = block_extent(lines, then_start, header.indent, header.no)?;

        // `else:` must follow at the same indent as the `if`.
        let else_header = lines.get(then_end).ok_or_else(|| FrontendError::Unsupported {
            line: header.no,
            message: "if without else is not supported (branches must bind the same variables)".into(),
        })?;
        let mut ep = LineParser { line: else_header, at: 0 };
        if else_header.indent != header.indent || !matches!(ep.peek(), Some(T::Ident(w)) if w == "else") {
            return Err(FrontendError::Unsupported {
                line: header.no,
                message: "if without else is not supported (branches must bind the same variables)".into(),
            });
        }
        ep.expect_ident("else")?;
        ep.expect_sym(":")?;
        ep.end()?;
        let else_start = then_end + 1;
        let else_end = block_extent(lines, else_start, header.indent, else_header.no)?;

        // Lower each branch against the same pre-branch scope, then join.
        let outer_scope = self.scope.clone();
        let outputs_were_allowed = self.outputs_allowed;
        self.outputs_allowed = false;

        let run_branch = |this: &mut Self, start: usize, end: usize| -> Result<BTreeMap<String, String>, FrontendError> {
            this.scope = outer_scope.clone();
            let mut bpos = start;
            this.block(&lines[..end], &mut bpos, lines[start].indent)?;
            // Which surface names point at new bindings?
            let changed: BTreeMap<String, String> = this
                .scope
                .iter()
                .filter(|(k, v)| outer_scope.get(*k) != Some(*v))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            Ok(changed)
        };

        let then_bound = run_branch(self, then_start, then_end)?;
        let else_bound = run_branch(self, else_start, else_end)?;
        self.outputs_allowed = outputs_were_allowed;
        self.scope = outer_scope;

        let then_names: BTreeSet<&String> = then_bound.keys().collect();
        let else_names: BTreeSet<&String> = else_bound.keys().collect();
        if then_names != else_names {
            let only: Vec<String> = then_names
                .symmetric_difference(&else_names)
                .map(|s| (*s).clone())
                .collect();
            return Err(FrontendError::Unsupported {
                line: header.no,
                message: format!(
                    "if/else branches must assign the same variables; {} assigned in only one branch",
                    only.join(", ")
                ),
            });
        }
        if then_bound.is_empty() {
            return Err(FrontendError::Unsupported {
                line: header.no,
                message: "if/else branches assign no variables".into(),
            });
        }

        for (surface, then_var) in &then_bound {
            let else_var = else_bound[surface].clone();
            let expr = Expr::BranchJoin {
                cond: cond.clone(),
                then_var: then_var.clone(),
                else_var,
            };
            let var = self.bind(surface);
            self.emit(header.no, Statement::Assign { var, expr })?;
        }
        *pos = else_end;
        Ok(())
    }

    // -- expressions --------------------------------------------------------

    fn expr(&mut self, p: &mut LineParser) -> Result<Expr, FrontendError> {
        let (head, col) = p.ident("expression")?;
        match head.as_str() {
            "read_capsule" => {
                p.expect_sym("(")?;
                // Substituted loop variables are deliberately not accepted
                // here: input capsules must be knowable without unrolling.
                let capsule = match p.peek() {
                    Some(T::Str(_)) => match p.next() {
                        Some(Spanned { t: T::Str(s), .. }) => s.clone(),
                        _ => unreachable!("peeked a string"),
                    },
                    Some(T::Ident(v)) if self.subst.contains_key(v) => {
                        return Err(FrontendError::Unsupported {
                            line: p.line.no,
                            message: format!(
                                "capsule ids must be string literals, not loop variable {v:?}"
                            ),
                        })
                    }
                    _ => return Err(p.err(&["string literal capsule id"])),
                };
                p.expect_sym(")")?;
                Ok(Expr::ReadCapsule { capsule })
            }
            "filter_groups" => {
                p.expect_sym("(")?;
                let src = self.src_arg(p)?;
                p.expect_sym(",")?;
                p.expect_ident("min_size")?;
                p.expect_sym("=")?;
                let k = p.number(&self.subst)?;
                p.expect_sym(")")?;
                if k.fract() != 0.0 || k < 1.0 {
                    return Err(FrontendError::Syntax {
                        line: p.line.no,
                        col,
                        expected: vec!["positive integer min_size".into()],
                        found: format!("'{k}'"),
                    });
                }
                Ok(Expr::FilterGroupsMinSize { src, min_size: k as u64 })
            }
            "agg_all" => {
                p.expect_sym("(")?;
                let src = self.src_arg(p)?;
                p.expect_sym(",")?;
                let column = p.string(&self.subst)?;
                p.expect_sym(",")?;
                let fn_name = p.string(&self.subst)?;
                let agg = parse_agg_fn(p, &fn_name)?;
                p.expect_sym(")")?;
                Ok(Expr::AggAll { src, column, agg })
            }
            "laplace" => {
                p.expect_sym("(")?;
                let src = self.src_arg(p)?;
                let mut epsilon = None;
                let mut delta = 0.0;
                let mut sensitivity = None;
                while p.peek_sym(",") {
                    p.expect_sym(",")?;
                    let (key, kcol) = p.ident("epsilon | delta | sensitivity")?;
                    p.expect_sym("=")?;
                    let v = p.number(&self.subst)?;
                    match key.as_str() {
                        "epsilon" => epsilon = Some(v),
                        "delta" => delta = v,
                        "sensitivity" => sensitivity = Some(v),
                        other => {
                            return Err(FrontendError::Syntax {
                                line: p.line.no,
                                col: kcol,
                                expected: vec!["'epsilon'".into(), "'delta'".into(), "'sensitivity'".into()],
                                found: format!("'{other}'"),
                            })
                        }
                    }
                }
                p.expect_sym(")")?;
                let epsilon = epsilon.ok_or_else(|| FrontendError::Syntax {
                    line: p.line.no,
                    col,
                    expected: vec!["epsilon=<number>".into()],
                    found: "missing epsilon argument".into(),
                })?;
                let sensitivity = sensitivity.ok_or_else(|| FrontendError::Syntax {
                    line: p.line.no,
                    col,
                    expected: vec!["sensitivity=<number>".into()],
                    found: "missing sensitivity argument".into(),
                })?;
                Ok(Expr::Laplace { src, epsilon, delta, sensitivity })
            }
            "hash_column" => {
                p.expect_sym("(")?;
                let src = self.src_arg(p)?;
                p.expect_sym(",")?;
                let column = p.string(&self.subst)?;
                p.expect_sym(")")?;
                Ok(Expr::HashColumn { src, column })
            }
            "join" => {
                p.expect_sym("(")?;
                let left = self.src_arg(p)?;
                p.expect_sym(",")?;
                let right = self.src_arg(p)?;
                p.expect_sym(",")?;
                p.expect_ident("on")?;
                p.expect_sym("=")?;
                let on = p.string(&self.subst)?;
                p.expect_sym(")")?;
                Ok(Expr::Join { left, right, on })
            }
            "output" => Err(FrontendError::Syntax {
                line: p.line.no,
                col,
                expected: vec!["expression".into()],
                found: "'output' used as an expression".into(),
            }),
            _ if p.peek_sym("(") => {
                // Registered stub call: name(df, literal…).
                if !self.stubs.contains(&head) {
                    return Err(FrontendError::Unsupported {
                        line: p.line.no,
                        message: format!("unknown operation {head:?} (not a builtin or registered stub)"),
                    });
                }
                p.expect_sym("(")?;
                let src = self.src_arg(p)?;
                let mut args = Vec::new();
                while p.peek_sym(",") {
                    p.expect_sym(",")?;
                    args.push(p.literal(&self.subst)?);
                }
                p.expect_sym(")")?;
                Ok(Expr::Call { name: head, src, args })
            }
            _ if p.peek_sym("[") => self.subscript(p, &head, col),
            _ if p.peek_sym(".") => self.method_chain(p, &head, col),
            _ => Err(FrontendError::Unsupported {
                line: p.line.no,
                message: format!("bare expression {head:?}; every statement must build a new value"),
            }),
        }
    }

    fn src_arg(&mut self, p: &mut LineParser) -> Result<String, FrontendError> {
        let (name, col) = p.ident("dataframe variable")?;
        self.resolve(p, &name, col)
    }

    /// `df[df["age"] >= 18]` or `df[["a", "b"]]`.
    fn subscript(&mut self, p: &mut LineParser, head: &str, col: usize) -> Result<Expr, FrontendError> {
        let src = self.resolve(p, head, col)?;
        p.expect_sym("[")?;
        if p.peek_sym("[") {
            // Projection.
            p.expect_sym("[")?;
            let mut columns = vec![p.string(&self.subst)?];
            while p.peek_sym(",") {
                p.expect_sym(",")?;
                columns.push(p.string(&self.subst)?);
            }
            p.expect_sym("]")?;
            p.expect_sym("]")?;
            return Ok(Expr::Project { src, columns });
        }
        // Filter mask: the inner frame must be the outer frame.
        let (inner, icol) = p.ident("the same dataframe variable")?;
        if inner != head {
            return Err(FrontendError::Unsupported {
                line: p.line.no,
                message: format!(
                    "filter mask must reference the frame being filtered ({head:?}), found {inner:?}"
                ),
            });
        }
        let _ = icol;
        p.expect_sym("[")?;
        let column = p.string(&self.subst)?;
        p.expect_sym("]")?;
        let cmp = p.cmp_op()?;
        let value = p.number(&self.subst)?;
        p.expect_sym("]")?;
        let interval = interval_for(cmp, value).map_err(|message| FrontendError::Syntax {
            line: p.line.no,
            col,
            expected: vec!["finite comparison value".into()],
            found: message,
        })?;
        Ok(Expr::FilterRows { src, column, interval })
    }

    /// `df.drop(columns=[...])` or `df.groupby(...).agg({...})`.
    fn method_chain(&mut self, p: &mut LineParser, head: &str, col: usize) -> Result<Expr, FrontendError> {
        let src = self.resolve(p, head, col)?;
        p.expect_sym(".")?;
        let (method, _) = p.ident("method name")?;
        match method.as_str() {
            "drop" => {
                p.expect_sym("(")?;
                p.expect_ident("columns")?;
                p.expect_sym("=")?;
                p.expect_sym("[")?;
                let mut columns = vec![p.string(&self.subst)?];
                while p.peek_sym(",") {
                    p.expect_sym(",")?;
                    columns.push(p.string(&self.subst)?);
                }
                p.expect_sym("]")?;
                p.expect_sym(")")?;
                Ok(Expr::DropColumns { src, columns })
            }
            "groupby" => {
                p.expect_sym("(")?;
                let mut keys = Vec::new();
                if p.peek_sym("[") {
                    p.expect_sym("[")?;
                    keys.push(p.string(&self.subst)?);
                    while p.peek_sym(",") {
                        p.expect_sym(",")?;
                        keys.push(p.string(&self.subst)?);
                    }
                    p.expect_sym("]")?;
                } else {
                    keys.push(p.string(&self.subst)?);
                }
                p.expect_sym(")")?;
                p.expect_sym(".")?;
                p.expect_ident("agg")?;
                p.expect_sym("(")?;
                p.expect_sym("{")?;
                let mut aggs = BTreeMap::new();
                loop {
                    let column = p.string(&self.subst)?;
                    p.expect_sym(":")?;
                    let fn_name = p.string(&self.subst)?;
                    let f = parse_agg_fn(p, &fn_name)?;
                    aggs.insert(column, f);
                    if p.peek_sym(",") {
                        p.expect_sym(",")?;
                    } else {
                        break;
                    }
                }
                p.expect_sym("}")?;
                p.expect_sym(")")?;
                Ok(Expr::GroupAgg { src, keys, aggs })
            }
            other => Err(FrontendError::Unsupported {
                line: p.line.no,
                message: format!("unsupported method .{other}(...); only .drop and .groupby(...).agg are available"),
            }),
        }
    }
}

fn parse_agg_fn(p: &LineParser, name: &str) -> Result<AggFn, FrontendError> {
    match name {
        "sum" => Ok(AggFn::Sum),
        "mean" => Ok(AggFn::Mean),
        "count" => Ok(AggFn::Count),
        other => Err(FrontendError::Syntax {
            line: p.line.no,
            col: 1,
            expected: vec!["\"sum\"".into(), "\"mean\"".into(), "\"count\"".into()],
            found: format!("{other:?}"),
        }),
    }
}

fn interval_for(cmp: CmpOp, value: f64) -> Result<Interval, String> {
    if !value.is_finite() {
        return Err(format!("'{value}'"));
    }
    let iv = match cmp {
        CmpOp::Ge => Interval::at_least(value, true),
        CmpOp::Gt => Interval::at_least(value, false),
        CmpOp::Le => Interval::at_most(value, true),
        CmpOp::Lt => Interval::at_most(value, false),
        CmpOp::Eq => Interval::point(value),
    };
    iv.map_err(|e| e.to_string())
}

/// Returns the end index (exclusive) of the indented block starting at
/// `start`, validating that the block is non-empty and evenly indented.
fn block_extent(lines: &[Line], start: usize, parent_indent: usize, header_line: usize) -> Result<usize, FrontendError> {
    if start >= lines.len() || lines[start].indent <= parent_indent {
        return Err(FrontendError::Syntax {
            line: header_line,
            col: 1,
            expected: vec!["an indented block".into()],
            found: "no indented lines follow".into(),
        });
    }
    let body_indent = lines[start].indent;
    let mut end = start;
    while end < lines.len() && lines[end].indent > parent_indent {
        end += 1;
    }
    for line in &lines[start..end] {
        if line.indent < body_indent {
            return Err(FrontendError::Syntax {
                line: line.no,
                col: line.indent + 1,
                expected: vec![format!("indentation of {body_indent}")],
                found: format!("indentation of {}", line.indent),
            });
        }
    }
    Ok(end)
}

// ---------------------------------------------------------------------------
// Token cursor over one line
// ---------------------------------------------------------------------------

struct LineParser<'a> {
    line: &'a Line,
    at: usize,
}

impl<'a> LineParser<'a> {
    fn peek(&self) -> Option<&T> {
        self.line.toks.get(self.at).map(|s| &s.t)
    }

    fn peek_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Some(T::Sym(s)) if *s == sym)
    }

    fn next(&mut self) -> Option<&Spanned> {
        let t = self.line.toks.get(self.at);
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn here(&self) -> (usize, String) {
        match self.line.toks.get(self.at) {
            Some(s) => (s.col, s.t.to_string()),
            None => (self.line.toks.last().map_or(1, |s| s.col + 1), "end of line".into()),
        }
    }

    fn err(&self, expected: &[&str]) -> FrontendError {
        let (col, found) = self.here();
        FrontendError::Syntax {
            line: self.line.no,
            col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn end(&self) -> Result<(), FrontendError> {
        if self.at == self.line.toks.len() {
            Ok(())
        } else {
            Err(self.err(&["end of line"]))
        }
    }

    fn expect_sym(&mut self, sym: &'static str) -> Result<(), FrontendError> {
        if self.peek_sym(sym) {
            self.at += 1;
            Ok(())
        } else {
            Err(self.err(&[&format!("'{sym}'")]))
        }
    }

    fn expect_ident(&mut self, word: &str) -> Result<(), FrontendError> {
        match self.peek() {
            Some(T::Ident(w)) if w == word => {
                self.at += 1;
                Ok(())
            }
            _ => Err(self.err(&[&format!("'{word}'")])),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), FrontendError> {
        match self.line.toks.get(self.at) {
            Some(Spanned { t: T::Ident(s), col }) => {
                let out = (s.clone(), *col);
                self.at += 1;
                Ok(out)
            }
            _ => Err(self.err(&[what])),
        }
    }

    fn cmp_op(&mut self) -> Result<CmpOp, FrontendError> {
        let op = match self.peek() {
            Some(T::Sym(">=")) => CmpOp::Ge,
            Some(T::Sym(">")) => CmpOp::Gt,
            Some(T::Sym("<=")) => CmpOp::Le,
            Some(T::Sym("<")) => CmpOp::Lt,
            Some(T::Sym("==")) => CmpOp::Eq,
            _ => return Err(self.err(&["'>='", "'>'", "'<='", "'<'", "'=='"])),
        };
        self.at += 1;
        Ok(op)
    }

    /// A string literal, or a loop variable currently bound to one.
    fn string(&mut self, subst: &BTreeMap<String, Lit>) -> Result<String, FrontendError> {
        match self.line.toks.get(self.at) {
            Some(Spanned { t: T::Str(s), .. }) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            Some(Spanned { t: T::Ident(v), .. }) if subst.contains_key(v) => {
                let lit = &subst[v];
                match lit {
                    Lit::Str(s) => {
                        let s = s.clone();
                        self.at += 1;
                        Ok(s)
                    }
                    Lit::Num(_) => Err(self.err(&["string literal (loop variable holds a number)"])),
                }
            }
            _ => Err(self.err(&["string literal"])),
        }
    }

    /// A numeric literal, or a loop variable currently bound to one.
    fn number(&mut self, subst: &BTreeMap<String, Lit>) -> Result<f64, FrontendError> {
        match self.line.toks.get(self.at) {
            Some(Spanned { t: T::Num(n), .. }) => {
                let n = *n;
                self.at += 1;
                Ok(n)
            }
            Some(Spanned { t: T::Ident(v), .. }) if subst.contains_key(v) => match &subst[v] {
                Lit::Num(n) => {
                    let n = *n;
                    self.at += 1;
                    Ok(n)
                }
                Lit::Str(_) => Err(self.err(&["number (loop variable holds a string)"])),
            },
            _ => Err(self.err(&["number"])),
        }
    }

    /// Any literal (for loop lists and stub arguments).
    fn literal(&mut self, subst: &BTreeMap<String, Lit>) -> Result<Lit, FrontendError> {
        match self.line.toks.get(self.at) {
            Some(Spanned { t: T::Str(s), .. }) => {
                let lit = Lit::Str(s.clone());
                self.at += 1;
                Ok(lit)
            }
            Some(Spanned { t: T::Num(n), .. }) => {
                let lit = Lit::Num(*n);
                self.at += 1;
                Ok(lit)
            }
            Some(Spanned { t: T::Ident(v), .. }) if subst.contains_key(v) => {
                let lit = subst[v].clone();
                self.at += 1;
                Ok(lit)
            }
            _ => Err(self.err(&["string or number literal"])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Program {
        let p = parse_program(src).expect("program should parse");
        assert_eq!(p.validate(), vec![], "emitted IR must be valid");
        p
    }

    const BUDGETING_DEMO: &str = r#"
df = read_capsule("payments")
safe = hash_column(df, "merchant")
by_cat = safe.groupby("category").agg({"amount": "mean"})
big = filter_groups(by_cat, min_size=10)
noisy = laplace(big, epsilon=1.0, sensitivity=1.0)
output(noisy)
"#;

    #[test]
    fn budgeting_demo_lowers_to_the_expected_pipeline() {
        let p = parse(BUDGETING_DEMO);
        assert_eq!(p.statements.len(), 6);
        assert_eq!(
            p.statements[0],
            Statement::Assign {
                var: "df".into(),
                expr: Expr::ReadCapsule { capsule: "payments".into() },
            }
        );
        assert_eq!(
            p.statements[1],
            Statement::Assign {
                var: "safe".into(),
                expr: Expr::HashColumn { src: "df".into(), column: "merchant".into() },
            }
        );
        match &p.statements[2] {
            Statement::Assign { var, expr: Expr::GroupAgg { src, keys, aggs } } => {
                assert_eq!(var, "by_cat");
                assert_eq!(src, "safe");
                assert_eq!(keys, &["category".to_string()]);
                assert_eq!(aggs.get("amount"), Some(&AggFn::Mean));
            }
            other => panic!("expected group_agg, got {other:?}"),
        }
        assert_eq!(
            p.statements[3],
            Statement::Assign {
                var: "big".into(),
                expr: Expr::FilterGroupsMinSize { src: "by_cat".into(), min_size: 10 },
            }
        );
        match &p.statements[4] {
            Statement::Assign { var, expr: Expr::Laplace { src, epsilon, delta, sensitivity } } => {
                assert_eq!(var, "noisy");
                assert_eq!(src, "big");
                assert_eq!((*epsilon, *delta, *sensitivity), (1.0, 0.0, 1.0));
            }
            other => panic!("expected laplace, got {other:?}"),
        }
        assert_eq!(p.statements[5], Statement::Output { var: "noisy".into() });
    }

    #[test]
    fn masks_map_comparison_operators_onto_intervals() {
        let p = parse(
            r#"
df = read_capsule("t")
a = df[df["age"] >= 18]
b = a[a["age"] > 18]
c = b[b["age"] <= 65]
d = c[c["age"] < 65]
e = d[d["score"] == 0.5]
output(e)
"#,
        );
        let intervals: Vec<String> = p
            .statements
            .iter()
            .filter_map(|s| match s {
                Statement::Assign { expr: Expr::FilterRows { interval, .. }, .. } => {
                    Some(interval.to_string())
                }
                _ => None,
            })
            .collect();
        assert_eq!(intervals, ["[18, inf)", "(18, inf)", "(-inf, 65]", "(-inf, 65)", "[0.5, 0.5]"]);
    }

    #[test]
    fn projection_drop_join_and_multi_key_groupby_lower() {
        let p = parse(
            r#"
a = read_capsule("left")
b = read_capsule("right")
cols = a[["id", "age"]]
slim = b.drop(columns=["notes"])
j = join(cols, slim, on="id")
g = j.groupby(["city", "age"]).agg({"amount": "sum", "score": "count"})
total = agg_all(g, "amount", "sum")
output(total)
"#,
        );
        assert!(matches!(
            &p.statements[2],
            Statement::Assign { expr: Expr::Project { columns, .. }, .. } if columns == &["id".to_string(), "age".to_string()]
        ));
        assert!(matches!(
            &p.statements[3],
            Statement::Assign { expr: Expr::DropColumns { columns, .. }, .. } if columns == &["notes".to_string()]
        ));
        assert!(matches!(
            &p.statements[4],
            Statement::Assign { expr: Expr::Join { left, right, on }, .. }
                if left == "cols" && right == "slim" && on == "id"
        ));
        match &p.statements[5] {
            Statement::Assign { expr: Expr::GroupAgg { keys, aggs, .. }, .. } => {
                assert_eq!(keys, &["city".to_string(), "age".to_string()]);
                assert_eq!(aggs.len(), 2);
            }
            other => panic!("expected group_agg, got {other:?}"),
        }
        assert!(matches!(
            &p.statements[6],
            Statement::Assign { expr: Expr::AggAll { agg: AggFn::Sum, .. }, .. }
        ));
    }

    #[test]
    fn for_loops_unroll_with_fresh_names_per_iteration() {
        let p = parse(
            r#"
df = read_capsule("t")
for col in ["age", "score"]:
    df2 = hash_column(df, col)
    output(df2)
output(df)
"#,
        );
        // Two iterations, each: assign + output, then the trailing output.
        assert_eq!(p.statements.len(), 1 + 4 + 1);
        assert_eq!(
            p.statements[1],
            Statement::Assign {
                var: "df2".into(),
                expr: Expr::HashColumn { src: "df".into(), column: "age".into() },
            }
        );
        assert_eq!(p.statements[2], Statement::Output { var: "df2".into() });
        assert_eq!(
            p.statements[3],
            Statement::Assign {
                var: "df2__2".into(),
                expr: Expr::HashColumn { src: "df".into(), column: "score".into() },
            }
        );
        assert_eq!(p.statements[4], Statement::Output { var: "df2__2".into() });
    }

    #[test]
    fn loop_variable_substitutes_in_numeric_positions_and_persists_after_loop() {
        let p = parse(
            r#"
df = read_capsule("t")
for cutoff in [18, 21]:
    kept = df[df["age"] >= cutoff]
final = hash_column(kept, "name")
output(final)
"#,
        );
        // `kept` after the loop refers to the last iteration's binding.
        let intervals: Vec<(String, String)> = p
            .statements
            .iter()
            .filter_map(|s| match s {
                Statement::Assign { var, expr: Expr::FilterRows { interval, .. } } => {
                    Some((var.clone(), interval.to_string()))
                }
                _ => None,
            })
            .collect();
        assert_eq!(
            intervals,
            [("kept".to_string(), "[18, inf)".to_string()), ("kept__2".to_string(), "[21, inf)".to_string())]
        );
        assert!(matches!(
            &p.statements[3],
            Statement::Assign { expr: Expr::HashColumn { src, .. }, .. } if src == "kept__2"
        ));
    }

    #[test]
    fn nested_loops_multiply_iterations() {
        let p = parse(
            r#"
df = read_capsule("t")
for a in [1, 2]:
    for b in [3, 4]:
        x = df[df["age"] >= b]
        output(x)
output(df)
"#,
        );
        let filters = p
            .statements
            .iter()
            .filter(|s| matches!(s, Statement::Assign { expr: Expr::FilterRows { .. }, .. }))
            .count();
        assert_eq!(filters, 4);
    }

    #[test]
    fn empty_loop_list_runs_zero_iterations() {
        let p = parse(
            r#"
df = read_capsule("t")
for c in []:
    x = hash_column(df, c)
output(df)
"#,
        );
        assert_eq!(p.statements.len(), 2);
    }

    #[test]
    fn unrolling_past_the_limit_is_rejected() {
        let items: Vec<String> = (0..65).map(|i| i.to_string()).collect();
        let src = format!(
            "df = read_capsule(\"t\")\nfor k in [{}]:\n    x = df[df[\"age\"] >= k]\noutput(df)\n",
            items.join(", ")
        );
        match parse_program(&src) {
            Err(FrontendError::Limit { line: 2, .. }) => {}
            other => panic!("expected limit error, got {other:?}"),
        }
    }

    #[test]
    fn if_else_lowers_to_branch_join() {
        let p = parse(
            r#"
df = read_capsule("t")
n = agg_all(df, "amount", "count")
if n >= 100:
    stat = agg_all(df, "amount", "mean")
else:
    stat = agg_all(df, "amount", "sum")
output(stat)
"#,
        );
        // then-branch binds `stat`, else-branch `stat__2`, join `stat__3`.
        match &p.statements[4] {
            Statement::Assign { var, expr: Expr::BranchJoin { cond, then_var, else_var } } => {
                assert_eq!(var, "stat__3");
                assert_eq!(cond.var, "n");
                assert_eq!(cond.cmp, CmpOp::Ge);
                assert_eq!(cond.value, 100.0);
                assert_eq!(then_var, "stat");
                assert_eq!(else_var, "stat__2");
            }
            other => panic!("expected branch_join, got {other:?}"),
        }
        assert_eq!(p.statements[5], Statement::Output { var: "stat__3".into() });
    }

    #[test]
    fn branches_must_assign_the_same_variables() {
        let err = parse_program(
            r#"
df = read_capsule("t")
n = agg_all(df, "amount", "count")
if n >= 100:
    a = agg_all(df, "amount", "mean")
else:
    b = agg_all(df, "amount", "sum")
output(n)
"#,
        )
        .unwrap_err();
        match err {
            FrontendError::Unsupported { message, .. } => {
                assert!(message.contains("same variables"), "got: {message}")
            }
            other => panic!("expected unsupported, got {other:?}"),
        }
    }

    #[test]
    fn output_inside_a_branch_is_rejected() {
        let err = parse_program(
            r#"
df = read_capsule("t")
n = agg_all(df, "amount", "count")
if n >= 100:
    a = agg_all(df, "amount", "mean")
    output(a)
else:
    a = agg_all(df, "amount", "sum")
output(n)
"#,
        )
        .unwrap_err();
        assert!(matches!(err, FrontendError::Unsupported { .. }), "got {err:?}");
    }

    #[test]
    fn reassignment_becomes_single_assignment_form() {
        let p = parse(
            r#"
df = read_capsule("t")
df = df[df["age"] >= 18]
df = df[df["age"] < 65]
output(df)
"#,
        );
        assert!(matches!(
            &p.statements[1],
            Statement::Assign { var, expr: Expr::FilterRows { src, .. } } if var == "df__2" && src == "df"
        ));
        assert!(matches!(
            &p.statements[2],
            Statement::Assign { var, expr: Expr::FilterRows { src, .. } } if var == "df__3" && src == "df__2"
        ));
        assert_eq!(p.statements[3], Statement::Output { var: "df__3".into() });
    }

    #[test]
    fn while_loops_and_unknown_calls_are_unsupported() {
        let err = parse_program("while n > 0:\n    n = agg_all(df, \"a\", \"sum\")\n").unwrap_err();
        assert!(matches!(err, FrontendError::Unsupported { line: 1, .. }), "got {err:?}");

        let err = parse_program("df = read_capsule(\"t\")\nx = winsorize(df, 5)\noutput(x)\n").unwrap_err();
        match err {
            FrontendError::Unsupported { line: 2, message } => {
                assert!(message.contains("winsorize"), "got: {message}")
            }
            other => panic!("expected unsupported, got {other:?}"),
        }
    }

    #[test]
    fn registered_stubs_parse_as_calls() {
        let stubs: BTreeSet<String> = ["clip_outliers".to_string()].into();
        let p = parse_program_with_stubs(
            "df = read_capsule(\"t\")\nx = clip_outliers(df, \"age\", 0, 120)\noutput(x)\n",
            &stubs,
        )
        .expect("stub call should parse");
        match &p.statements[1] {
            Statement::Assign { expr: Expr::Call { name, src, args }, .. } => {
                assert_eq!(name, "clip_outliers");
                assert_eq!(src, "df");
                assert_eq!(
                    args,
                    &[Lit::Str("age".into()), Lit::Num(0.0), Lit::Num(120.0)]
                );
            }
            other => panic!("expected call, got {other:?}"),
        }
    }

    #[test]
    fn dynamic_capsule_ids_are_rejected() {
        let err = parse_program("name = read_capsule(\"t\")\ndf = read_capsule(name)\noutput(df)\n")
            .unwrap_err();
        assert!(matches!(err, FrontendError::Syntax { line: 2, .. }), "got {err:?}");

        let err = parse_program(
            "for c in [\"a\", \"b\"]:\n    df = read_capsule(c)\n    output(df)\n",
        )
        .unwrap_err();
        match err {
            FrontendError::Unsupported { line: 2, message } => {
                assert!(message.contains("loop variable"), "got: {message}")
            }
            other => panic!("expected unsupported, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position_and_expectations() {
        let err = parse_program("df = read_capsule(\"t\")\nx = df[df[\"age\"] >= ]\noutput(x)\n")
            .unwrap_err();
        match err {
            FrontendError::Syntax { line: 2, expected, found, .. } => {
                assert_eq!(expected, vec!["number".to_string()]);
                assert_eq!(found, "']'");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }

        let err = parse_program("df = read_capsule(\"t\")\n\tx = df\noutput(df)\n").unwrap_err();
        assert!(
            matches!(&err, FrontendError::Syntax { line: 2, found, .. } if found.contains("tab")),
            "got {err:?}"
        );
    }

    #[test]
    fn missing_output_and_undefined_variables_are_errors() {
        let err = parse_program("df = read_capsule(\"t\")\n").unwrap_err();
        assert!(
            matches!(&err, FrontendError::Syntax { expected, .. } if expected[0].contains("output")),
            "got {err:?}"
        );

        let err = parse_program("x = hash_column(df, \"a\")\noutput(x)\n").unwrap_err();
        assert!(
            matches!(&err, FrontendError::Syntax { line: 1, found, .. } if found.contains("df")),
            "got {err:?}"
        );
    }

    #[test]
    fn aliasing_and_reserved_names_are_rejected() {
        let err = parse_program("df = read_capsule(\"t\")\nx = df\noutput(x)\n").unwrap_err();
        assert!(matches!(err, FrontendError::Unsupported { line: 2, .. }), "got {err:?}");

        let err = parse_program("join = read_capsule(\"t\")\noutput(join)\n").unwrap_err();
        assert!(
            matches!(&err, FrontendError::Syntax { line: 1, found, .. } if found.contains("join")),
            "got {err:?}"
        );
    }

    #[test]
    fn scientific_notation_and_negative_numbers_lex() {
        let p = parse(
            r#"
df = read_capsule("t")
a = df[df["score"] >= -2.5]
b = a[a["score"] < 1e-3]
noisy = laplace(b, epsilon=2.5e-1, sensitivity=1.0)
output(noisy)
"#,
        );
        let intervals: Vec<String> = p
            .statements
            .iter()
            .filter_map(|s| match s {
                Statement::Assign { expr: Expr::FilterRows { interval, .. }, .. } => {
                    Some(interval.to_string())
                }
                _ => None,
            })
            .collect();
        assert_eq!(intervals, ["[-2.5, inf)", "(-inf, 0.001)"]);
        assert!(matches!(
            &p.statements[3],
            Statement::Assign { expr: Expr::Laplace { epsilon, .. }, .. } if *epsilon == 0.25
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let p = parse(
            "# load\ndf = read_capsule(\"t\")  # trailing comment\n\n   \noutput(df)\n",
        );
        assert_eq!(p.statements.len(), 2);
    }

    #[test]
    fn json_round_trip_preserves_lowered_programs() {
        let p = parse(BUDGETING_DEMO);
        let json = p.to_json();
        let back = Program::from_json(&json).expect("canonical JSON parses back");
        assert_eq!(p, back);
    }
}
