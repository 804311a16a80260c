//! Lexer and recursive-descent parser for policy text.
//!
//! The grammar is small enough that a hand-written parser is clearer than a
//! grammar-generator dependency, and it lets syntax errors carry an exact
//! line/column and the token set that would have been accepted.
//!
//! ```text
//! policy      := "EMPTY" | clause ("OR" clause)*
//! clause      := "ALLOW" requirement ("AND" requirement)*
//! requirement := "SCHEMA" "(" ident ("," ident)* ")"
//!              | "FILTER" ident "IN" interval
//!              | "REDACT" ident
//!              | "ROLE" ident
//!              | "PURPOSE" ident
//!              | "PRIVACY" "AGGREGATE" "(" int ")"
//!              | "PRIVACY" "DP" "(" number "," number ")"
//! interval    := ("[" | "(") bound "," bound ("]" | ")")
//! bound       := "-"? (number | "inf")
//! ```

use super::{Clause, Interval, Policy, PolicyError, Requirement, KEYWORDS};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Kw(&'static str),
    Ident(String),
    Number(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Minus,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Kw(k) => write!(f, "'{k}'"),
            Tok::Ident(s) => write!(f, "identifier '{s}'"),
            Tok::Number(s) => write!(f, "number '{s}'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::LBracket => write!(f, "'['"),
            Tok::RBracket => write!(f, "']'"),
            Tok::Comma => write!(f, "','"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, PolicyError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();

    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };

        if c.is_whitespace() {
            bump(&mut chars);
            continue;
        }

        let tok = match c {
            '(' => {
                bump(&mut chars);
                Tok::LParen
            }
            ')' => {
                bump(&mut chars);
                Tok::RParen
            }
            '[' => {
                bump(&mut chars);
                Tok::LBracket
            }
            ']' => {
                bump(&mut chars);
                Tok::RBracket
            }
            ',' => {
                bump(&mut chars);
                Tok::Comma
            }
            '-' => {
                bump(&mut chars);
                Tok::Minus
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        word.push(bump(&mut chars));
                    } else {
                        break;
                    }
                }
                match KEYWORDS.iter().find(|k| **k == word) {
                    Some(k) => Tok::Kw(k),
                    None => Tok::Ident(word),
                }
            }
            c if c.is_ascii_digit() => {
                let mut num = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        num.push(bump(&mut chars));
                    } else {
                        break;
                    }
                }
                if chars.peek() == Some(&'.') {
                    num.push(bump(&mut chars));
                    if !matches!(chars.peek(), Some(c) if c.is_ascii_digit()) {
                        return Err(PolicyError::Syntax {
                            line,
                            col,
                            expected: vec!["digit".into()],
                            found: chars.peek().map_or("end of input".into(), |c| format!("'{c}'")),
                        });
                    }
                    while let Some(&c) = chars.peek() {
                        if c.is_ascii_digit() {
                            num.push(bump(&mut chars));
                        } else {
                            break;
                        }
                    }
                }
                if matches!(chars.peek(), Some('e' | 'E')) {
                    num.push(bump(&mut chars));
                    if matches!(chars.peek(), Some('+' | '-')) {
                        num.push(bump(&mut chars));
                    }
                    if !matches!(chars.peek(), Some(c) if c.is_ascii_digit()) {
                        return Err(PolicyError::Syntax {
                            line,
                            col,
                            expected: vec!["exponent digit".into()],
                            found: chars.peek().map_or("end of input".into(), |c| format!("'{c}'")),
                        });
                    }
                    while let Some(&c) = chars.peek() {
                        if c.is_ascii_digit() {
                            num.push(bump(&mut chars));
                        } else {
                            break;
                        }
                    }
                }
                Tok::Number(num)
            }
            other => {
                return Err(PolicyError::Syntax {
                    line,
                    col,
                    expected: vec!["token".into()],
                    found: format!("'{other}'"),
                });
            }
        };
        out.push(Spanned { tok, line: tline, col: tcol });
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn advance(&mut self) -> &Tok {
        let tok = &self.toks[self.pos].tok;
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        tok
    }

    fn err(&self, expected: &[&str]) -> PolicyError {
        let at = &self.toks[self.pos];
        PolicyError::Syntax {
            line: at.line,
            col: at.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: at.tok.to_string(),
        }
    }

    /// Wraps constructor errors with the position of the current requirement.
    fn at(&self, start: usize, e: PolicyError) -> PolicyError {
        match e {
            PolicyError::Semantic { message } => {
                let sp = &self.toks[start];
                PolicyError::Semantic { message: format!("{}:{}: {message}", sp.line, sp.col) }
            }
            other => other,
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), PolicyError> {
        match self.peek() {
            Tok::Kw(k) if *k == kw => {
                self.advance();
                Ok(())
            }
            _ => Err(self.err(&[&format!("'{kw}'")])),
        }
    }

    fn expect(&mut self, tok: Tok, desc: &str) -> Result<(), PolicyError> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            Err(self.err(&[desc]))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, PolicyError> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.err(&[what])),
        }
    }

    /// `-? number`, used for DP parameters.
    fn number(&mut self) -> Result<f64, PolicyError> {
        let negative = if *self.peek() == Tok::Minus {
            self.advance();
            true
        } else {
            false
        };
        match self.peek() {
            Tok::Number(text) => {
                let v: f64 = text.parse().map_err(|_| self.err(&["number"]))?;
                self.advance();
                Ok(if negative { -v } else { v })
            }
            _ => Err(self.err(&["number"])),
        }
    }

    /// `-? (number | inf)`, used for interval endpoints.
    fn bound(&mut self) -> Result<f64, PolicyError> {
        let negative = if *self.peek() == Tok::Minus {
            self.advance();
            true
        } else {
            false
        };
        let v = match self.peek() {
            Tok::Number(text) => {
                let v: f64 = text.parse().map_err(|_| self.err(&["number"]))?;
                self.advance();
                v
            }
            Tok::Kw("inf") => {
                self.advance();
                f64::INFINITY
            }
            _ => return Err(self.err(&["number", "'inf'"])),
        };
        Ok(if negative { -v } else { v })
    }

    fn interval(&mut self) -> Result<Interval, PolicyError> {
        let start = self.pos;
        let lo_closed = match self.peek() {
            Tok::LBracket => true,
            Tok::LParen => false,
            _ => return Err(self.err(&["'['", "'('"])),
        };
        self.advance();
        let lo = self.bound()?;
        self.expect(Tok::Comma, "','")?;
        let hi = self.bound()?;
        let hi_closed = match self.peek() {
            Tok::RBracket => true,
            Tok::RParen => false,
            _ => return Err(self.err(&["']'", "')'"])),
        };
        self.advance();
        Interval::new(lo, lo_closed, hi, hi_closed)
            .map_err(|e| self.at(start, PolicyError::Semantic { message: e.to_string() }))
    }

    fn requirement(&mut self) -> Result<Requirement, PolicyError> {
        let start = self.pos;
        match self.peek() {
            Tok::Kw("SCHEMA") => {
                self.advance();
                self.expect(Tok::LParen, "'('")?;
                let mut cols = vec![self.ident("column name")?];
                while *self.peek() == Tok::Comma {
                    self.advance();
                    cols.push(self.ident("column name")?);
                }
                self.expect(Tok::RParen, "')'")?;
                Requirement::schema(cols).map_err(|e| self.at(start, e))
            }
            Tok::Kw("FILTER") => {
                self.advance();
                let column = self.ident("column name")?;
                self.expect_kw("IN")?;
                let interval = self.interval()?;
                Requirement::filter(column, interval).map_err(|e| self.at(start, e))
            }
            Tok::Kw("REDACT") => {
                self.advance();
                let column = self.ident("column name")?;
                Requirement::redact(column).map_err(|e| self.at(start, e))
            }
            Tok::Kw("ROLE") => {
                self.advance();
                let role = self.ident("role name")?;
                Requirement::role(role).map_err(|e| self.at(start, e))
            }
            Tok::Kw("PURPOSE") => {
                self.advance();
                let purpose = self.ident("purpose name")?;
                Requirement::purpose(purpose).map_err(|e| self.at(start, e))
            }
            Tok::Kw("PRIVACY") => {
                self.advance();
                match self.peek() {
                    Tok::Kw("AGGREGATE") => {
                        self.advance();
                        self.expect(Tok::LParen, "'('")?;
                        let k = match self.peek() {
                            Tok::Number(text) if text.bytes().all(|b| b.is_ascii_digit()) => {
                                let k: u64 = text.parse().map_err(|_| {
                                    self.at(
                                        start,
                                        PolicyError::Semantic {
                                            message: format!("AGGREGATE width {text} is out of range"),
                                        },
                                    )
                                })?;
                                self.advance();
                                k
                            }
                            _ => return Err(self.err(&["integer"])),
                        };
                        self.expect(Tok::RParen, "')'")?;
                        Requirement::aggregate(k).map_err(|e| self.at(start, e))
                    }
                    Tok::Kw("DP") => {
                        self.advance();
                        self.expect(Tok::LParen, "'('")?;
                        let epsilon = self.number()?;
                        self.expect(Tok::Comma, "','")?;
                        let delta = self.number()?;
                        self.expect(Tok::RParen, "')'")?;
                        Requirement::dp(epsilon, delta).map_err(|e| self.at(start, e))
                    }
                    _ => Err(self.err(&["'AGGREGATE'", "'DP'"])),
                }
            }
            _ => Err(self.err(&["'SCHEMA'", "'FILTER'", "'REDACT'", "'ROLE'", "'PURPOSE'", "'PRIVACY'"])),
        }
    }

    fn clause(&mut self) -> Result<Clause, PolicyError> {
        self.expect_kw("ALLOW")?;
        let mut reqs = vec![self.requirement()?];
        while *self.peek() == Tok::Kw("AND") {
            self.advance();
            reqs.push(self.requirement()?);
        }
        Ok(Clause::new(reqs))
    }

    fn policy(&mut self) -> Result<Policy, PolicyError> {
        if *self.peek() == Tok::Kw("EMPTY") {
            self.advance();
            self.expect(Tok::Eof, "end of input")?;
            return Ok(Policy::satisfied());
        }
        let mut clauses = vec![self.clause()?];
        while *self.peek() == Tok::Kw("OR") {
            self.advance();
            clauses.push(self.clause()?);
        }
        self.expect(Tok::Eof, "end of input")?;
        Ok(Policy::new(clauses).normalize())
    }
}

pub fn parse_policy(text: &str) -> Result<Policy, PolicyError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.policy()
}

pub fn parse_requirement(text: &str) -> Result<Requirement, PolicyError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let r = p.requirement()?;
    p.expect(Tok::Eof, "end of input")?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_readme_examples() {
        let p = parse_policy(
            "ALLOW FILTER age IN [18, inf) AND PRIVACY AGGREGATE(100) OR ALLOW ROLE doctor",
        )
        .unwrap();
        assert_eq!(
            p.to_string(),
            "ALLOW FILTER age IN [18, inf) AND PRIVACY AGGREGATE(100) OR ALLOW ROLE doctor",
        );
        assert!(parse_policy("EMPTY").unwrap().is_satisfied());
    }

    #[test]
    fn accepts_scientific_notation_and_prints_decimals() {
        let p = parse_policy("ALLOW PRIVACY DP(1.0, 1e-6)").unwrap();
        assert_eq!(p.to_string(), "ALLOW PRIVACY DP(1, 0.000001)");
    }

    #[test]
    fn whitespace_and_newlines_are_insignificant() {
        let p = parse_policy("ALLOW\n  ROLE doctor\n  AND PURPOSE treatment").unwrap();
        assert_eq!(p.to_string(), "ALLOW PURPOSE treatment AND ROLE doctor");
    }

    #[test]
    fn syntax_errors_carry_position_and_expectations() {
        let err = parse_policy("ALLOW FILTER age IN 18").unwrap_err();
        match err {
            super::PolicyError::Syntax { line, col, expected, found } => {
                assert_eq!((line, col), (1, 21));
                assert_eq!(expected, vec!["'['", "'('"]);
                assert_eq!(found, "number '18'");
            }
            other => panic!("unexpected error {other:?}"),
        }

        let err = parse_policy("ALLOW ROLE doctor AND").unwrap_err();
        assert!(matches!(err, super::PolicyError::Syntax { col: 22, .. }), "{err:?}");

        // Keywords are reserved and cannot be identifiers.
        assert!(parse_policy("ALLOW ROLE OR").is_err());
        assert!(parse_policy("ALLOW FILTER inf IN [0, 1]").is_err());
    }

    #[test]
    fn trailing_input_is_rejected() {
        assert!(parse_policy("EMPTY OR ALLOW ROLE doctor").is_err());
        assert!(parse_policy("ALLOW ROLE doctor extra").is_err());
        assert!(parse_policy("").is_err());
    }

    #[test]
    fn semantic_errors_carry_position() {
        let err = parse_policy("ALLOW PRIVACY DP(0, 0)").unwrap_err();
        assert_eq!(
            err.to_string(),
            "1:7: DP epsilon must be finite and positive, got 0",
        );
        let err = parse_policy("ALLOW PRIVACY AGGREGATE(0)").unwrap_err();
        assert_eq!(err.to_string(), "1:7: AGGREGATE width must be at least 1");
        let err = parse_policy("ALLOW FILTER x IN [3, 2]").unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        // δ > 1 and negative ε are invariant violations, not syntax errors.
        assert!(matches!(
            parse_policy("ALLOW PRIVACY DP(1, 2)"),
            Err(super::PolicyError::Semantic { .. })
        ));
        assert!(matches!(
            parse_policy("ALLOW PRIVACY DP(-1, 0)"),
            Err(super::PolicyError::Semantic { .. })
        ));
    }

    #[test]
    fn aggregate_argument_must_be_an_integer_literal() {
        assert!(matches!(
            parse_policy("ALLOW PRIVACY AGGREGATE(10.5)"),
            Err(super::PolicyError::Syntax { .. })
        ));
        assert!(matches!(
            parse_policy("ALLOW PRIVACY AGGREGATE(1e2)"),
            Err(super::PolicyError::Syntax { .. })
        ));
    }

    #[test]
    fn interval_edge_cases() {
        // Point interval, open bounds, infinite bounds.
        for text in [
            "ALLOW FILTER x IN [1, 1]",
            "ALLOW FILTER x IN (0, 1)",
            "ALLOW FILTER x IN (-inf, 0]",
            "ALLOW FILTER x IN [-5.5, inf)",
        ] {
            let p = parse_policy(text).unwrap();
            assert_eq!(p.to_string(), text, "round-trip of {text}");
        }
        // [x, inf] normalizes to [x, inf): infinity is never attained.
        let p = parse_policy("ALLOW FILTER x IN [0, inf]").unwrap();
        assert_eq!(p.to_string(), "ALLOW FILTER x IN [0, inf)");
        // Degenerate empties.
        assert!(parse_policy("ALLOW FILTER x IN [0, 0)").is_err());
        assert!(parse_policy("ALLOW FILTER x IN (5, 5]").is_err());
    }
}
