//! Parsers for the line-oriented TRS/workspace format, proof-term
//! expressions, contexts, and derivation scripts.
//!
//! Workspace format (UTF-8, `#` comments):
//!
//! ```text
//! mu : f(x) -> g(x)                  # a rule
//! let psi = comp i. g^{i}(mu(rec X. f(X)))
//! ```
//!
//! Term syntax: prefix applications `f(t,u)`, `rec X. t` for rational
//! terms with uppercase rec-variables, lowercase identifiers for symbols.
//! The names `x y z u v w` (optionally digit-suffixed) are reserved as
//! rule variables. Proof terms add the right-associative infix `.` for
//! composition, `comp i. <body>` for infinite compositions, and affine
//! exponents `g^{2*i+1}(...)` on unary symbols inside a `comp` body.

use crate::pterm::{
    pt_fun, pt_rule, schema_fun, schema_rule, Affine, Ctx1, OmegaSchema, ProofTerm, SchemaTerm,
};
use crate::term::{uniquify_binders, Position, Term};
use crate::trs::{Trs, TrsError};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loc {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{loc}: {msg}")]
    Syntax { loc: Loc, msg: String },
    #[error("{loc}: {source}")]
    Trs { loc: Loc, source: TrsError },
    #[error("{loc}: variable {name} not allowed in a closed term")]
    StrayVariable { loc: Loc, name: String },
    #[error("{loc}: index variable {name} used outside an exponent")]
    StrayIndex { loc: Loc, name: String },
}

pub fn is_reserved_var(name: &str) -> bool {
    let mut chars = name.chars();
    let first = match chars.next() {
        Some(c) => c,
        None => return false,
    };
    matches!(first, 'x' | 'y' | 'z' | 'u' | 'v' | 'w') && chars.all(|c| c.is_ascii_digit())
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Dot,
    Caret,
    Star,
    Plus,
    Arrow,
    Colon,
    Equals,
    At,
    Hole,
}

struct Lexer {
    toks: Vec<(Tok, Loc)>,
    pos: usize,
}

fn lex(line: &str, lineno: usize) -> Result<Lexer, ParseError> {
    let mut toks = Vec::new();
    let bytes: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let loc = Loc {
            line: lineno,
            col: i + 1,
        };
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, loc));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, loc));
                i += 1;
            }
            '{' => {
                toks.push((Tok::LBrace, loc));
                i += 1;
            }
            '}' => {
                toks.push((Tok::RBrace, loc));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, loc));
                i += 1;
            }
            '.' => {
                toks.push((Tok::Dot, loc));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, loc));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, loc));
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, loc));
                i += 1;
            }
            '@' => {
                toks.push((Tok::At, loc));
                i += 1;
            }
            ':' => {
                toks.push((Tok::Colon, loc));
                i += 1;
            }
            '=' => {
                toks.push((Tok::Equals, loc));
                i += 1;
            }
            '[' => {
                if i + 1 < bytes.len() && bytes[i + 1] == ']' {
                    toks.push((Tok::Hole, loc));
                    i += 2;
                } else {
                    return Err(ParseError::Syntax {
                        loc,
                        msg: "expected [] hole".into(),
                    });
                }
            }
            '-' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '>' {
                    toks.push((Tok::Arrow, loc));
                    i += 2;
                } else {
                    return Err(ParseError::Syntax {
                        loc,
                        msg: "expected ->".into(),
                    });
                }
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: u64 = bytes[start..i]
                    .iter()
                    .collect::<String>()
                    .parse()
                    .map_err(|_| ParseError::Syntax {
                        loc: loc.clone(),
                        msg: "number too large".into(),
                    })?;
                toks.push((Tok::Num(n), loc));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_alphanumeric() || bytes[i] == '_' || bytes[i] == '\'')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(bytes[start..i].iter().collect()), loc));
            }
            other => {
                return Err(ParseError::Syntax {
                    loc,
                    msg: format!("unexpected character {:?}", other),
                })
            }
        }
    }
    Ok(Lexer { toks, pos: 0 })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn loc(&self) -> Loc {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, l)| l.clone())
            .unwrap_or(Loc { line: 0, col: 0 })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        let loc = self.loc();
        match self.next() {
            Some(t) if t == tok => Ok(()),
            got => Err(ParseError::Syntax {
                loc,
                msg: format!("expected {:?}, found {:?}", tok, got),
            }),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

/// Raw parse tree before symbols are classified against a TRS.
#[derive(Clone, Debug)]
enum Expr {
    App(String, Vec<Expr>, Loc),
    Rec(String, Box<Expr>, Loc),
    Comp(Box<Expr>, Box<Expr>),
    Omega(String, Box<Expr>, Loc),
    Power(String, Affine, Box<Expr>, Loc),
}

fn parse_expr(lx: &mut Lexer, index_var: Option<&str>) -> Result<Expr, ParseError> {
    let head = parse_app(lx, index_var)?;
    if lx.peek() == Some(&Tok::Dot) {
        lx.next();
        let rest = parse_expr(lx, index_var)?;
        Ok(Expr::Comp(Box::new(head), Box::new(rest)))
    } else {
        Ok(head)
    }
}

fn parse_app(lx: &mut Lexer, index_var: Option<&str>) -> Result<Expr, ParseError> {
    let loc = lx.loc();
    match lx.peek() {
        Some(Tok::LParen) => {
            lx.next();
            let e = parse_expr(lx, index_var)?;
            lx.expect(Tok::RParen)?;
            Ok(e)
        }
        Some(Tok::Ident(name)) if name == "comp" => {
            lx.next();
            let var = match lx.next() {
                Some(Tok::Ident(v)) => v,
                _ => {
                    return Err(ParseError::Syntax {
                        loc,
                        msg: "expected index variable after comp".into(),
                    })
                }
            };
            lx.expect(Tok::Dot)?;
            let body = parse_expr(lx, Some(&var))?;
            Ok(Expr::Omega(var, Box::new(body), loc))
        }
        Some(Tok::Ident(name)) if name == "rec" => {
            lx.next();
            let var = match lx.next() {
                Some(Tok::Ident(v)) => v,
                _ => {
                    return Err(ParseError::Syntax {
                        loc,
                        msg: "expected rec-variable after rec".into(),
                    })
                }
            };
            if !var.chars().next().is_some_and(|c| c.is_uppercase()) {
                return Err(ParseError::Syntax {
                    loc,
                    msg: format!("rec-variable {} must be uppercase", var),
                });
            }
            lx.expect(Tok::Dot)?;
            // the rec body is a single application, not a composition
            let body = parse_app(lx, index_var)?;
            Ok(Expr::Rec(var, Box::new(body), loc))
        }
        Some(Tok::Ident(_)) => {
            let name = match lx.next() {
                Some(Tok::Ident(n)) => n,
                _ => unreachable!(),
            };
            if lx.peek() == Some(&Tok::Caret) {
                lx.next();
                lx.expect(Tok::LBrace)?;
                let aff = parse_affine(lx, index_var)?;
                lx.expect(Tok::RBrace)?;
                lx.expect(Tok::LParen)?;
                let inner = parse_expr(lx, index_var)?;
                lx.expect(Tok::RParen)?;
                return Ok(Expr::Power(name, aff, Box::new(inner), loc));
            }
            if lx.peek() == Some(&Tok::LParen) {
                lx.next();
                let mut args = Vec::new();
                if lx.peek() != Some(&Tok::RParen) {
                    loop {
                        args.push(parse_expr(lx, index_var)?);
                        if lx.peek() == Some(&Tok::Comma) {
                            lx.next();
                        } else {
                            break;
                        }
                    }
                }
                lx.expect(Tok::RParen)?;
                Ok(Expr::App(name, args, loc))
            } else {
                Ok(Expr::App(name, Vec::new(), loc))
            }
        }
        other => Err(ParseError::Syntax {
            loc,
            msg: format!("expected a term, found {:?}", other),
        }),
    }
}

fn parse_affine(lx: &mut Lexer, index_var: Option<&str>) -> Result<Affine, ParseError> {
    let loc = lx.loc();
    let var_ok = |name: &str| index_var == Some(name);
    match lx.next() {
        Some(Tok::Num(n)) => {
            if lx.peek() == Some(&Tok::Star) {
                lx.next();
                match lx.next() {
                    Some(Tok::Ident(v)) if var_ok(&v) => {
                        if lx.peek() == Some(&Tok::Plus) {
                            lx.next();
                            match lx.next() {
                                Some(Tok::Num(b)) => Ok(Affine::new(n, b)),
                                _ => Err(ParseError::Syntax {
                                    loc,
                                    msg: "expected constant after +".into(),
                                }),
                            }
                        } else {
                            Ok(Affine::new(n, 0))
                        }
                    }
                    _ => Err(ParseError::Syntax {
                        loc,
                        msg: "expected index variable after *".into(),
                    }),
                }
            } else {
                Ok(Affine::new(0, n))
            }
        }
        Some(Tok::Ident(v)) if var_ok(&v) => {
            if lx.peek() == Some(&Tok::Plus) {
                lx.next();
                match lx.next() {
                    Some(Tok::Num(b)) => Ok(Affine::new(1, b)),
                    _ => Err(ParseError::Syntax {
                        loc,
                        msg: "expected constant after +".into(),
                    }),
                }
            } else {
                Ok(Affine::new(1, 0))
            }
        }
        Some(Tok::Ident(v)) => Err(ParseError::StrayIndex { loc, name: v }),
        other => Err(ParseError::Syntax {
            loc,
            msg: format!("expected exponent, found {:?}", other),
        }),
    }
}

/// Lowers a raw expression to a pattern term (rule sides): reserved names
/// are variables.
fn lower_pattern(e: &Expr) -> Result<Term, ParseError> {
    match e {
        Expr::App(name, args, loc) => {
            if args.is_empty() && is_reserved_var(name) {
                return Ok(Term::Var(name.clone()));
            }
            if name.chars().next().is_some_and(|c| c.is_uppercase()) {
                return Err(ParseError::Syntax {
                    loc: loc.clone(),
                    msg: format!("unexpected rec-variable {} in a rule pattern", name),
                });
            }
            let args: Result<Vec<Term>, _> = args.iter().map(lower_pattern).collect();
            Ok(Term::Fun(name.clone(), args?))
        }
        Expr::Rec(_, _, loc) | Expr::Omega(_, _, loc) | Expr::Power(_, _, _, loc) => {
            Err(ParseError::Syntax {
                loc: loc.clone(),
                msg: "rule patterns are finite first-order terms".into(),
            })
        }
        Expr::Comp(_, _) => Err(ParseError::Syntax {
            loc: Loc { line: 0, col: 0 },
            msg: "rule patterns cannot contain compositions".into(),
        }),
    }
}

/// Lowers a raw expression to a closed term (no compositions).
fn lower_term(e: &Expr, trs: &Trs, bound: &mut Vec<String>) -> Result<Term, ParseError> {
    match e {
        Expr::App(name, args, loc) => {
            if args.is_empty() {
                if bound.iter().any(|b| b == name) {
                    return Ok(Term::RecVar(name.clone()));
                }
                if name.chars().next().is_some_and(|c| c.is_uppercase()) {
                    return Err(ParseError::Syntax {
                        loc: loc.clone(),
                        msg: format!("rec-variable {} is unbound", name),
                    });
                }
                if is_reserved_var(name) {
                    return Err(ParseError::StrayVariable {
                        loc: loc.clone(),
                        name: name.clone(),
                    });
                }
            }
            let args: Result<Vec<Term>, _> =
                args.iter().map(|a| lower_term(a, trs, bound)).collect();
            let args = args?;
            if trs.is_rule(name) {
                Ok(Term::Rule(name.clone(), args))
            } else {
                Ok(Term::Fun(name.clone(), args))
            }
        }
        Expr::Rec(v, body, _) => {
            bound.push(v.clone());
            let b = lower_term(body, trs, bound);
            bound.pop();
            Ok(Term::Rec(v.clone(), Box::new(b?)))
        }
        Expr::Power(name, aff, inner, loc) => {
            if aff.coef != 0 {
                return Err(ParseError::StrayIndex {
                    loc: loc.clone(),
                    name: "i".into(),
                });
            }
            let mut t = lower_term(inner, trs, bound)?;
            for _ in 0..aff.base {
                t = if trs.is_rule(name) {
                    Term::Rule(name.clone(), vec![t])
                } else {
                    Term::Fun(name.clone(), vec![t])
                };
            }
            Ok(t)
        }
        Expr::Comp(_, _) | Expr::Omega(_, _, _) => Err(ParseError::Syntax {
            loc: Loc { line: 0, col: 0 },
            msg: "compositions cannot occur inside a term".into(),
        }),
    }
}

/// Lowers a raw expression to a proof term.
fn lower_pt(e: &Expr, trs: &Trs) -> Result<ProofTerm, ParseError> {
    match e {
        Expr::Comp(a, b) => Ok(ProofTerm::comp(lower_pt(a, trs)?, lower_pt(b, trs)?)),
        Expr::Omega(var, body, _) => {
            let st = lower_schema(body, trs, var)?;
            Ok(ProofTerm::Omega(OmegaSchema::new(var, st)))
        }
        Expr::App(name, args, _) => {
            if contains_comp(e) {
                let kids: Result<Vec<ProofTerm>, _> =
                    args.iter().map(|a| lower_pt(a, trs)).collect();
                let kids = kids?;
                if trs.is_rule(name) {
                    Ok(pt_rule(name, kids))
                } else {
                    Ok(pt_fun(name, kids))
                }
            } else {
                let t = lower_term(e, trs, &mut Vec::new())?;
                Ok(ProofTerm::Multi(uniquify_binders(&t)))
            }
        }
        Expr::Rec(_, _, _) => {
            let t = lower_term(e, trs, &mut Vec::new())?;
            Ok(ProofTerm::Multi(uniquify_binders(&t)))
        }
        Expr::Power(name, aff, inner, loc) => {
            if aff.coef != 0 {
                return Err(ParseError::StrayIndex {
                    loc: loc.clone(),
                    name: "index".into(),
                });
            }
            let mut pt = lower_pt(inner, trs)?;
            for _ in 0..aff.base {
                pt = if trs.is_rule(name) {
                    pt_rule(name, vec![pt])
                } else {
                    pt_fun(name, vec![pt])
                };
            }
            Ok(pt)
        }
    }
}

fn contains_comp(e: &Expr) -> bool {
    match e {
        Expr::Comp(_, _) | Expr::Omega(_, _, _) => true,
        Expr::App(_, args, _) => args.iter().any(contains_comp),
        Expr::Rec(_, body, _) => contains_comp(body),
        Expr::Power(_, _, inner, _) => contains_comp(inner),
    }
}

fn lower_schema(e: &Expr, trs: &Trs, var: &str) -> Result<SchemaTerm, ParseError> {
    match e {
        Expr::Comp(a, b) => Ok(SchemaTerm::comp(
            lower_schema(a, trs, var)?,
            lower_schema(b, trs, var)?,
        )),
        Expr::Power(name, aff, inner, loc) => {
            if trs.is_rule(name) {
                return Err(ParseError::Syntax {
                    loc: loc.clone(),
                    msg: format!("exponents apply to function symbols, {} is a rule", name),
                });
            }
            Ok(SchemaTerm::power(
                Ctx1::unary(name),
                *aff,
                lower_schema(inner, trs, var)?,
            ))
        }
        Expr::Omega(_, _, loc) => Err(ParseError::Syntax {
            loc: loc.clone(),
            msg: "nested infinite compositions are not supported".into(),
        }),
        Expr::App(name, args, _) if contains_index(e, var) => {
            let kids: Result<Vec<SchemaTerm>, _> =
                args.iter().map(|a| lower_schema(a, trs, var)).collect();
            let kids = kids?;
            if trs.is_rule(name) {
                Ok(schema_rule(name, kids))
            } else {
                Ok(schema_fun(name, kids))
            }
        }
        other => {
            let t = lower_term(other, trs, &mut Vec::new())?;
            Ok(SchemaTerm::Multi(uniquify_binders(&t)))
        }
    }
}

fn contains_index(e: &Expr, var: &str) -> bool {
    match e {
        Expr::Power(_, aff, inner, _) => aff.coef > 0 || contains_index(inner, var),
        Expr::App(_, args, _) => args.iter().any(|a| contains_index(a, var)),
        Expr::Rec(_, body, _) => contains_index(body, var),
        Expr::Comp(a, b) => contains_index(a, var) || contains_index(b, var),
        Expr::Omega(_, body, _) => contains_index(body, var),
    }
}

/// A parsed workspace: a TRS plus named proof terms in file order.
#[derive(Clone, Debug, Default)]
pub struct ParsedWorkspace {
    pub trs: Trs,
    pub terms: Vec<(String, ProofTerm)>,
}

impl ParsedWorkspace {
    pub fn get(&self, name: &str) -> Option<&ProofTerm> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }
}

/// Parses a workspace file: rule lines `name : lhs -> rhs` and proof-term
/// bindings `let name = pt`.
pub fn parse_workspace(text: &str) -> Result<ParsedWorkspace, ParseError> {
    let mut ws = ParsedWorkspace::default();
    let mut term_lines: Vec<(usize, String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut lx = lex(line, lineno)?;
        match lx.peek() {
            Some(Tok::Ident(kw)) if kw == "let" => {
                lx.next();
                let name = match lx.next() {
                    Some(Tok::Ident(n)) => n,
                    _ => {
                        return Err(ParseError::Syntax {
                            loc: lx.loc(),
                            msg: "expected a name after let".into(),
                        })
                    }
                };
                lx.expect(Tok::Equals)?;
                // defer proof-term parsing until all rules are known
                let rest: String = raw.splitn(2, '=').nth(1).unwrap_or("").to_string();
                term_lines.push((lineno, name, rest));
            }
            _ => {
                parse_rule_into(&mut ws.trs, line, lineno)?;
            }
        }
    }
    for (lineno, name, rest) in term_lines {
        let pt = parse_proofterm_at(&rest, &mut ws.trs, lineno)?;
        ws.terms.push((name, pt));
    }
    Ok(ws)
}

fn parse_rule_into(trs: &mut Trs, line: &str, lineno: usize) -> Result<(), ParseError> {
    let mut lx = lex(line, lineno)?;
    let loc = lx.loc();
    let name = match lx.next() {
        Some(Tok::Ident(n)) => n,
        other => {
            return Err(ParseError::Syntax {
                loc,
                msg: format!("expected rule name, found {:?}", other),
            })
        }
    };
    lx.expect(Tok::Colon)?;
    let lhs_expr = parse_app(&mut lx, None)?;
    lx.expect(Tok::Arrow)?;
    let rhs_expr = parse_app(&mut lx, None)?;
    if !lx.at_end() {
        return Err(ParseError::Syntax {
            loc: lx.loc(),
            msg: "trailing input after rule".into(),
        });
    }
    let lhs = lower_pattern(&lhs_expr)?;
    let rhs = lower_pattern(&rhs_expr)?;
    trs.add_rule(&name, lhs, rhs)
        .map_err(|source| ParseError::Trs {
            loc: Loc {
                line: lineno,
                col: 1,
            },
            source,
        })
}

/// Parses a bare TRS file: rule lines only.
pub fn parse_trs(text: &str) -> Result<Trs, ParseError> {
    let ws = parse_workspace(text)?;
    if let Some((name, _)) = ws.terms.first() {
        return Err(ParseError::Syntax {
            loc: Loc { line: 0, col: 0 },
            msg: format!("unexpected proof-term binding {} in a TRS file", name),
        });
    }
    Ok(ws.trs)
}

/// Parses a proof term against a TRS, registering new function symbols.
pub fn parse_proofterm(text: &str, trs: &mut Trs) -> Result<ProofTerm, ParseError> {
    parse_proofterm_at(text, trs, 1)
}

fn parse_proofterm_at(text: &str, trs: &mut Trs, lineno: usize) -> Result<ProofTerm, ParseError> {
    let mut lx = lex(text, lineno)?;
    let e = parse_expr(&mut lx, None)?;
    if !lx.at_end() {
        return Err(ParseError::Syntax {
            loc: lx.loc(),
            msg: "trailing input after proof term".into(),
        });
    }
    let pt = lower_pt(&e, trs)?;
    absorb_pt_symbols(trs, &pt, lineno)?;
    Ok(pt)
}

fn absorb_pt_symbols(trs: &mut Trs, pt: &ProofTerm, lineno: usize) -> Result<(), ParseError> {
    let to_err = |source: TrsError| ParseError::Trs {
        loc: Loc {
            line: lineno,
            col: 1,
        },
        source,
    };
    match pt {
        ProofTerm::Multi(t) => trs.absorb_term_symbols(t).map_err(to_err),
        ProofTerm::Fun(f, kids) => {
            trs.register_symbol(f, kids.len()).map_err(to_err)?;
            for k in kids {
                absorb_pt_symbols(trs, k, lineno)?;
            }
            Ok(())
        }
        ProofTerm::Rule(_, kids) => {
            for k in kids {
                absorb_pt_symbols(trs, k, lineno)?;
            }
            Ok(())
        }
        ProofTerm::Comp(a, b) => {
            absorb_pt_symbols(trs, a, lineno)?;
            absorb_pt_symbols(trs, b, lineno)
        }
        ProofTerm::Omega(o) => absorb_schema_symbols(trs, &o.body, lineno),
        ProofTerm::Pending(_) => Ok(()),
    }
}

fn absorb_schema_symbols(trs: &mut Trs, body: &SchemaTerm, lineno: usize) -> Result<(), ParseError> {
    let to_err = |source: TrsError| ParseError::Trs {
        loc: Loc {
            line: lineno,
            col: 1,
        },
        source,
    };
    match body {
        SchemaTerm::Multi(t) => trs.absorb_term_symbols(t).map_err(to_err),
        SchemaTerm::Fun(f, kids) => {
            trs.register_symbol(f, kids.len()).map_err(to_err)?;
            for k in kids {
                absorb_schema_symbols(trs, k, lineno)?;
            }
            Ok(())
        }
        SchemaTerm::Rule(_, kids) => {
            for k in kids {
                absorb_schema_symbols(trs, k, lineno)?;
            }
            Ok(())
        }
        SchemaTerm::Comp(a, b) => {
            absorb_schema_symbols(trs, a, lineno)?;
            absorb_schema_symbols(trs, b, lineno)
        }
        SchemaTerm::Power(c, _, inner) => {
            for layer in &c.0 {
                trs.register_symbol(&layer.sym, layer.arity())
                    .map_err(to_err)?;
            }
            absorb_schema_symbols(trs, inner, lineno)
        }
    }
}

/// Parses a closed term (no compositions) against a TRS.
pub fn parse_term(text: &str, trs: &mut Trs) -> Result<Term, ParseError> {
    let mut lx = lex(text, 1)?;
    let e = parse_app(&mut lx, None)?;
    if !lx.at_end() {
        return Err(ParseError::Syntax {
            loc: lx.loc(),
            msg: "trailing input after term".into(),
        });
    }
    let t = lower_term(&e, trs, &mut Vec::new())?;
    let t = uniquify_binders(&t);
    trs.absorb_term_symbols(&t)
        .map_err(|source| ParseError::Trs {
            loc: Loc { line: 1, col: 1 },
            source,
        })?;
    Ok(t)
}

/// A multi-hole context over function symbols: a term with `[]` holes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Context {
    Hole,
    Fun(String, Vec<Context>),
}

impl Context {
    pub fn hole_count(&self) -> usize {
        match self {
            Context::Hole => 1,
            Context::Fun(_, kids) => kids.iter().map(|k| k.hole_count()).sum(),
        }
    }

    /// Builds the context `l[...]` from a rule pattern, with holes at the
    /// variable positions.
    pub fn from_pattern(pat: &Term) -> Context {
        match pat {
            Term::Var(_) => Context::Hole,
            Term::Fun(f, args) => {
                Context::Fun(f.clone(), args.iter().map(Context::from_pattern).collect())
            }
            _ => unreachable!("patterns contain only function symbols and variables"),
        }
    }

    pub fn non_hole_positions(&self) -> Vec<Position> {
        let mut out = Vec::new();
        fn walk(c: &Context, at: Position, out: &mut Vec<Position>) {
            match c {
                Context::Hole => {}
                Context::Fun(_, kids) => {
                    out.push(at.clone());
                    for (i, k) in kids.iter().enumerate() {
                        walk(k, at.child(i as u32 + 1), out);
                    }
                }
            }
        }
        walk(self, Position::root(), &mut out);
        out
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Context::Hole => write!(f, "[]"),
            Context::Fun(name, kids) => {
                write!(f, "{}", name)?;
                if !kids.is_empty() {
                    write!(f, "(")?;
                    for (i, k) in kids.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{}", k)?;
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

/// Parses a context with `[]` holes.
pub fn parse_context(text: &str) -> Result<Context, ParseError> {
    fn go(lx: &mut Lexer) -> Result<Context, ParseError> {
        let loc = lx.loc();
        match lx.next() {
            Some(Tok::Hole) => Ok(Context::Hole),
            Some(Tok::Ident(name)) => {
                if lx.peek() == Some(&Tok::LParen) {
                    lx.next();
                    let mut kids = Vec::new();
                    if lx.peek() != Some(&Tok::RParen) {
                        loop {
                            kids.push(go(lx)?);
                            if lx.peek() == Some(&Tok::Comma) {
                                lx.next();
                            } else {
                                break;
                            }
                        }
                    }
                    lx.expect(Tok::RParen)?;
                    Ok(Context::Fun(name, kids))
                } else {
                    Ok(Context::Fun(name, Vec::new()))
                }
            }
            other => Err(ParseError::Syntax {
                loc,
                msg: format!("expected context, found {:?}", other),
            }),
        }
    }
    let mut lx = lex(text, 1)?;
    let c = go(&mut lx)?;
    if !lx.at_end() {
        return Err(ParseError::Syntax {
            loc: lx.loc(),
            msg: "trailing input after context".into(),
        });
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pterm::{src, tgt};
    use crate::term::term_eq;

    #[test]
    fn parses_rules_and_arities() {
        let ws = parse_workspace("mu : f(x) -> g(x)\npi : a -> b\n").unwrap();
        assert_eq!(ws.trs.rule("mu").unwrap().arity(), 1);
        assert_eq!(ws.trs.rule("pi").unwrap().arity(), 0);
    }

    #[test]
    fn rejects_non_left_linear() {
        let err = parse_workspace("bad : h(x,x) -> x\n");
        assert!(matches!(
            err,
            Err(ParseError::Trs {
                source: TrsError::NotLeftLinear(_, _),
                ..
            })
        ));
    }

    #[test]
    fn reports_line_and_column() {
        let err = parse_workspace("mu : f(x) -> g(x)\nnu : g(x) -> ?\n");
        match err {
            Err(ParseError::Syntax { loc, .. }) => {
                assert_eq!(loc.line, 2);
                assert!(loc.col > 10);
            }
            other => panic!("expected syntax error, got {:?}", other),
        }
    }

    #[test]
    fn parses_proof_terms_and_round_trips() {
        let text = "\
mu : f(x) -> g(x)
nu : g(x) -> k(x)
let psi = f(nu(a)) . mu(k(a))
let momega = rec X. mu(X)
let tower = comp i. g^{i}(mu(rec X. f(X)))
let pair = comp i. g^{2*i}(f(mu(rec X. f(X)))) . g^{2*i}(mu(g(rec X. f(X))))
";
        let ws = parse_workspace(text).unwrap();
        for (name, pt) in &ws.terms {
            let printed = pt.to_string();
            let mut trs = ws.trs.clone();
            let reparsed = parse_proofterm(&printed, &mut trs)
                .unwrap_or_else(|e| panic!("reparse of {} = {} failed: {}", name, printed, e));
            assert!(
                crate::pterm::defeq(&ws.trs, pt, &reparsed),
                "round trip failed for {}: {}",
                name,
                printed
            );
        }
        let psi = ws.get("psi").unwrap();
        let s = src(&ws.trs, psi);
        assert_eq!(s.to_string(), "f(g(a))");
        let t = tgt(&ws.trs, psi).unwrap();
        assert_eq!(t.to_string(), "g(k(a))");
    }

    #[test]
    fn omega_schema_with_shifted_exponent() {
        let text = "\
mu : f(x) -> g(x)
let t = comp i. g^{i+1}(mu(rec X. f(X)))
";
        let ws = parse_workspace(text).unwrap();
        let pt = ws.get("t").unwrap();
        match pt {
            ProofTerm::Omega(o) => {
                let c0 = o.component(0);
                let expect = Term::fun(
                    "g",
                    vec![Term::rule(
                        "mu",
                        vec![Term::rec(
                            "X",
                            Term::fun("f", vec![Term::RecVar("X".into())]),
                        )],
                    )],
                );
                match c0 {
                    ProofTerm::Multi(t) => assert!(term_eq(&t, &expect)),
                    other => panic!("unexpected {}", other),
                }
            }
            other => panic!("expected omega, got {}", other),
        }
    }

    #[test]
    fn stray_variable_rejected() {
        let mut trs = Trs::new();
        let err = parse_proofterm("f(x)", &mut trs);
        assert!(matches!(err, Err(ParseError::StrayVariable { .. })));
    }

    #[test]
    fn context_parsing() {
        let c = parse_context("j(g([]),[])").unwrap();
        assert_eq!(c.hole_count(), 2);
        assert_eq!(c.to_string(), "j(g([]),[])");
        assert_eq!(parse_context("[]").unwrap(), Context::Hole);
    }

    #[test]
    fn constant_power_expands() {
        let mut trs = parse_trs("mu : f(x) -> g(x)\n").unwrap();
        let pt = parse_proofterm("g^{3}(mu(a))", &mut trs).unwrap();
        let expect = ProofTerm::Multi(Term::fun(
            "g",
            vec![Term::fun(
                "g",
                vec![Term::fun("g", vec![Term::rule("mu", vec![Term::cst("a")])])],
            )],
        ));
        assert_eq!(pt, expect);
    }
}
