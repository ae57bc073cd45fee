//! Rewrite rules, signatures, and the source/target companion systems.
//!
//! Each rule `mu : l -> h` introduces a rule symbol `mu` whose arity is the
//! number of distinct variables of `l`, ordered by first occurrence. The
//! companion systems replace `mu(t1..tm)` by `l[t1..tm]` (source side) or
//! `h[t1..tm]` (target side); both folds act structurally on the rational
//! representation.

use crate::term::{
    apply_subst, is_guarded, prune_binders, term_eq, Position, Term,
};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    /// Variables of the left-hand side in order of first occurrence; the
    /// i-th argument of the rule symbol corresponds to `vars[i]`.
    pub vars: Vec<String>,
    /// Position of each variable in the left-hand side (left-linear, so unique).
    pub var_pos: BTreeMap<String, Position>,
    pub lhs: Term,
    pub rhs: Term,
}

impl Rule {
    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    /// A collapsing rule rewrites to a bare variable.
    pub fn is_collapsing(&self) -> bool {
        matches!(self.rhs, Term::Var(_))
    }

    /// The non-variable positions of the left-hand side: the pattern the
    /// rule overlaps with.
    pub fn pattern_positions(&self) -> Vec<Position> {
        let mut out = Vec::new();
        fn walk(t: &Term, at: Position, out: &mut Vec<Position>) {
            match t {
                Term::Var(_) => {}
                Term::Fun(_, args) => {
                    out.push(at.clone());
                    for (i, a) in args.iter().enumerate() {
                        walk(a, at.child(i as u32 + 1), out);
                    }
                }
                _ => unreachable!("patterns contain only function symbols and variables"),
            }
        }
        walk(&self.lhs, Position::root(), &mut out);
        out.sort();
        out
    }

    /// Instantiates the lhs with terms at the rule-symbol argument slots.
    pub fn instantiate_lhs(&self, args: &[Term]) -> Term {
        let subst: BTreeMap<String, Term> = self
            .vars
            .iter()
            .cloned()
            .zip(args.iter().cloned())
            .collect();
        apply_subst(&self.lhs, &subst)
    }

    pub fn instantiate_rhs(&self, args: &[Term]) -> Term {
        let subst: BTreeMap<String, Term> = self
            .vars
            .iter()
            .cloned()
            .zip(args.iter().cloned())
            .collect();
        apply_subst(&self.rhs, &subst)
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum TrsError {
    #[error("rule {0}: left-hand side is not left-linear (variable {1} repeats)")]
    NotLeftLinear(String, String),
    #[error("rule {0}: left-hand side is a bare variable")]
    LhsIsVariable(String),
    #[error("rule {0}: right-hand side uses variable {1} not bound on the left")]
    UnboundRhsVar(String, String),
    #[error("symbol {0} used with arities {1} and {2}")]
    ArityMismatch(String, usize, usize),
    #[error("rule name {0} already defined")]
    DuplicateRule(String),
    #[error("name {0} is both a rule symbol and a function symbol")]
    NameClash(String),
    #[error("rule {0}: left-hand side may not contain rule symbols or rec-binders")]
    BadPattern(String),
}

/// A left-linear TRS: a signature plus named rules.
#[derive(Clone, Debug, Default)]
pub struct Trs {
    arities: BTreeMap<String, usize>,
    rules: BTreeMap<String, Rule>,
}

impl Trs {
    pub fn new() -> Trs {
        Trs::default()
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.get(name)
    }

    pub fn is_rule(&self, name: &str) -> bool {
        self.rules.contains_key(name)
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.values()
    }

    pub fn arity(&self, name: &str) -> Option<usize> {
        self.arities.get(name).copied().or_else(|| {
            self.rules.get(name).map(|r| r.arity())
        })
    }

    pub fn function_symbols(&self) -> impl Iterator<Item = (&String, usize)> {
        self.arities.iter().map(|(k, v)| (k, *v))
    }

    pub fn register_symbol(&mut self, name: &str, arity: usize) -> Result<(), TrsError> {
        if self.rules.contains_key(name) {
            return Err(TrsError::NameClash(name.to_string()));
        }
        match self.arities.get(name) {
            Some(&a) if a != arity => {
                Err(TrsError::ArityMismatch(name.to_string(), a, arity))
            }
            _ => {
                self.arities.insert(name.to_string(), arity);
                Ok(())
            }
        }
    }

    /// Adds a rule, validating left-linearity and variable containment and
    /// registering the symbols of both sides.
    pub fn add_rule(&mut self, name: &str, lhs: Term, rhs: Term) -> Result<(), TrsError> {
        if self.rules.contains_key(name) {
            return Err(TrsError::DuplicateRule(name.to_string()));
        }
        if self.arities.contains_key(name) {
            return Err(TrsError::NameClash(name.to_string()));
        }
        if matches!(lhs, Term::Var(_)) {
            return Err(TrsError::LhsIsVariable(name.to_string()));
        }
        let mut vars: Vec<String> = Vec::new();
        let mut var_pos: BTreeMap<String, Position> = BTreeMap::new();
        fn scan_lhs(
            t: &Term,
            at: Position,
            rule: &str,
            vars: &mut Vec<String>,
            var_pos: &mut BTreeMap<String, Position>,
        ) -> Result<(), TrsError> {
            match t {
                Term::Var(x) => {
                    if var_pos.contains_key(x) {
                        return Err(TrsError::NotLeftLinear(rule.to_string(), x.clone()));
                    }
                    vars.push(x.clone());
                    var_pos.insert(x.clone(), at);
                    Ok(())
                }
                Term::Fun(_, args) => {
                    for (i, a) in args.iter().enumerate() {
                        scan_lhs(a, at.child(i as u32 + 1), rule, vars, var_pos)?;
                    }
                    Ok(())
                }
                _ => Err(TrsError::BadPattern(rule.to_string())),
            }
        }
        scan_lhs(&lhs, Position::root(), name, &mut vars, &mut var_pos)?;
        fn scan_rhs(t: &Term, rule: &str, vars: &[String]) -> Result<(), TrsError> {
            match t {
                Term::Var(x) => {
                    if vars.iter().any(|v| v == x) {
                        Ok(())
                    } else {
                        Err(TrsError::UnboundRhsVar(rule.to_string(), x.clone()))
                    }
                }
                Term::Fun(_, args) => {
                    for a in args {
                        scan_rhs(a, rule, vars)?;
                    }
                    Ok(())
                }
                _ => Err(TrsError::BadPattern(rule.to_string())),
            }
        }
        scan_rhs(&rhs, name, &vars)?;
        let mut syms = BTreeMap::new();
        lhs.symbols(&mut syms);
        rhs.symbols(&mut syms);
        for (s, a) in syms {
            self.register_symbol(&s, a)?;
        }
        self.rules.insert(
            name.to_string(),
            Rule {
                name: name.to_string(),
                vars,
                var_pos,
                lhs,
                rhs,
            },
        );
        Ok(())
    }

    /// Registers every symbol occurring in a term, for arity consistency.
    pub fn absorb_term_symbols(&mut self, t: &Term) -> Result<(), TrsError> {
        let mut syms = BTreeMap::new();
        t.symbols(&mut syms);
        for (s, a) in syms {
            if let Some(r) = self.rules.get(&s) {
                if r.arity() != a {
                    return Err(TrsError::ArityMismatch(s, r.arity(), a));
                }
            } else {
                self.register_symbol(&s, a)?;
            }
        }
        Ok(())
    }

    /// Source fold: the normal form of a multistep in the companion system
    /// that replaces each rule symbol by its lhs pattern.
    pub fn src_term(&self, t: &Term) -> Term {
        match t {
            Term::Rule(name, args) => {
                let folded: Vec<Term> = args.iter().map(|a| self.src_term(a)).collect();
                match self.rule(name) {
                    Some(rule) => rule.instantiate_lhs(&folded),
                    None => Term::Rule(name.clone(), folded),
                }
            }
            Term::Fun(f, args) => Term::Fun(
                f.clone(),
                args.iter().map(|a| self.src_term(a)).collect(),
            ),
            Term::Rec(v, body) => Term::Rec(v.clone(), Box::new(self.src_term(body))),
            other => other.clone(),
        }
    }

    /// Target fold; fails whenever the image contains an unguarded cycle,
    /// the signature of a collapsing tower with no normal form.
    pub fn tgt_term(&self, t: &Term) -> Result<Term, TgtUndefined> {
        fn go(trs: &Trs, t: &Term) -> Term {
            match t {
                Term::Rule(name, args) => {
                    let folded: Vec<Term> = args.iter().map(|a| go(trs, a)).collect();
                    match trs.rule(name) {
                        Some(rule) => rule.instantiate_rhs(&folded),
                        None => Term::Rule(name.clone(), folded),
                    }
                }
                Term::Fun(f, args) => {
                    Term::Fun(f.clone(), args.iter().map(|a| go(trs, a)).collect())
                }
                Term::Rec(v, body) => Term::Rec(v.clone(), Box::new(go(trs, body))),
                other => other.clone(),
            }
        }
        let folded = go(self, t);
        if let Err(crate::term::TermError::UnguardedRec(v)) = folded.validate() {
            return Err(TgtUndefined::CollapsingTower(v));
        }
        Ok(prune_binders(&folded))
    }

    /// Checks that the subterm of `t` at `r` is an instance of the rule's
    /// lhs, returning the argument terms in rule-symbol order.
    pub fn match_redex(&self, t: &Term, r: &Position, rule: &Rule) -> Option<Vec<Term>> {
        let sub = t.subterm_at(r).ok()?;
        let subst = match_pattern(&rule.lhs, &sub)?;
        Some(
            rule.vars
                .iter()
                .map(|v| subst.get(v).cloned().unwrap_or(Term::Var(v.clone())))
                .collect(),
        )
    }
}

pub use crate::term::match_pattern;

/// Why a target is undefined.
#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum TgtUndefined {
    #[error("collapsing tower: rec-binder {0} loses its guard in the target image")]
    CollapsingTower(String),
    #[error("divergent infinite composition: minimal activity depths do not tend to infinity")]
    DivergentComposition,
    #[error("no rational form detected for the limit within the certification depth")]
    NoRationalForm,
}

/// Convenience equality used all over the test suites.
pub fn same_tree(a: &Term, b: &Term) -> bool {
    term_eq(a, b)
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} : {} -> {}", self.name, self.lhs, self.rhs)
    }
}

impl fmt::Display for Trs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in self.rules.values() {
            writeln!(f, "{}", r)?;
        }
        Ok(())
    }
}

/// The guard check exposed for target imagesassembled elsewhere.
pub fn image_is_guarded(t: &Term) -> bool {
    fn check(t: &Term) -> bool {
        match t {
            Term::Rec(v, body) => is_guarded(v, body) && check(body),
            Term::Fun(_, args) | Term::Rule(_, args) => args.iter().all(check),
            _ => true,
        }
    }
    check(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_trs() -> Trs {
        let mut trs = Trs::new();
        trs.add_rule(
            "mu",
            Term::fun("f", vec![Term::var("x")]),
            Term::fun("g", vec![Term::var("x")]),
        )
        .unwrap();
        trs.add_rule(
            "nu",
            Term::fun("g", vec![Term::var("x")]),
            Term::fun("k", vec![Term::var("x")]),
        )
        .unwrap();
        trs.add_rule(
            "rho",
            Term::fun(
                "j",
                vec![Term::fun("m", vec![Term::var("x")]), Term::fun("m", vec![Term::var("y")])],
            ),
            Term::fun("k", vec![Term::var("x")]),
        )
        .unwrap();
        trs
    }

    #[test]
    fn arity_from_lhs_vars() {
        let trs = demo_trs();
        assert_eq!(trs.rule("mu").unwrap().arity(), 1);
        assert_eq!(trs.rule("rho").unwrap().arity(), 2);
    }

    #[test]
    fn rejects_non_left_linear() {
        let mut trs = Trs::new();
        let err = trs.add_rule(
            "bad",
            Term::fun("h", vec![Term::var("x"), Term::var("x")]),
            Term::var("x"),
        );
        assert!(matches!(err, Err(TrsError::NotLeftLinear(_, _))));
    }

    #[test]
    fn pattern_positions() {
        let trs = demo_trs();
        assert_eq!(
            trs.rule("mu").unwrap().pattern_positions(),
            vec![Position::root()]
        );
        assert_eq!(
            trs.rule("rho").unwrap().pattern_positions(),
            vec![
                Position::root(),
                Position(vec![1]),
                Position(vec![2])
            ]
        );
    }

    #[test]
    fn src_and_tgt_folds() {
        let trs = demo_trs();
        let step = Term::rule("mu", vec![Term::cst("a")]);
        assert_eq!(trs.src_term(&step), Term::fun("f", vec![Term::cst("a")]));
        assert_eq!(
            trs.tgt_term(&step).unwrap(),
            Term::fun("g", vec![Term::cst("a")])
        );

        // mu^w : f^w -> g^w
        let mu_omega = Term::rec("X", Term::rule("mu", vec![Term::RecVar("X".into())]));
        let f_omega = Term::rec("X", Term::fun("f", vec![Term::RecVar("X".into())]));
        let g_omega = Term::rec("X", Term::fun("g", vec![Term::RecVar("X".into())]));
        assert!(term_eq(&trs.src_term(&mu_omega), &f_omega));
        assert!(term_eq(&trs.tgt_term(&mu_omega).unwrap(), &g_omega));
    }

    #[test]
    fn collapsing_tower_is_undefined() {
        let mut trs = Trs::new();
        trs.add_rule(
            "kappa",
            Term::fun("i", vec![Term::var("x")]),
            Term::var("x"),
        )
        .unwrap();
        let tower = Term::rec("X", Term::rule("kappa", vec![Term::RecVar("X".into())]));
        assert!(matches!(
            trs.tgt_term(&tower),
            Err(TgtUndefined::CollapsingTower(_))
        ));
        // a guarded occurrence survives collapse
        let ok = Term::rec(
            "X",
            Term::rule(
                "kappa",
                vec![Term::fun("f", vec![Term::RecVar("X".into())])],
            ),
        );
        let f_omega = Term::rec("X", Term::fun("f", vec![Term::RecVar("X".into())]));
        assert!(term_eq(&trs.tgt_term(&ok).unwrap(), &f_omega));
    }

    #[test]
    fn erasing_rule_drops_argument() {
        let trs = demo_trs();
        // rho erases y
        let step = Term::rule("rho", vec![Term::cst("a"), Term::cst("b")]);
        assert_eq!(
            trs.src_term(&step),
            Term::fun(
                "j",
                vec![
                    Term::fun("m", vec![Term::cst("a")]),
                    Term::fun("m", vec![Term::cst("b")])
                ]
            )
        );
        assert_eq!(
            trs.tgt_term(&step).unwrap(),
            Term::fun("k", vec![Term::cst("a")])
        );
    }
}
