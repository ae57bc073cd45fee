//! Finite and rational (regular) infinite first-order terms.
//!
//! Rational infinite terms are represented by guarded `rec`-binders:
//! `rec X. f(X)` denotes the infinite unary tower `f(f(f(...)))`. All
//! operations unfold binders lazily, so positions of arbitrary finite
//! length are addressable. Terms over the signature extended with rule
//! symbols double as infinitary multisteps.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

/// A position in a term: a finite sequence of 1-based argument indices.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Position(pub Vec<u32>);

impl Position {
    pub fn root() -> Position {
        Position(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, i: u32) -> Position {
        let mut v = self.0.clone();
        v.push(i);
        Position(v)
    }

    pub fn concat(&self, other: &Position) -> Position {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Position(v)
    }

    /// Strict prefix order `self < other`.
    pub fn is_proper_prefix_of(&self, other: &Position) -> bool {
        self.0.len() < other.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    pub fn is_prefix_of(&self, other: &Position) -> bool {
        self.0.len() <= other.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    pub fn is_disjoint_from(&self, other: &Position) -> bool {
        !self.is_prefix_of(other) && !other.is_prefix_of(self)
    }

    /// The suffix of `other` after `self`, if `self` is a prefix.
    pub fn strip_prefix(&self, other: &Position) -> Option<Position> {
        if self.is_prefix_of(other) {
            Some(Position(other.0[self.0.len()..].to_vec()))
        } else {
            None
        }
    }

    pub fn parse(s: &str) -> Option<Position> {
        let s = s.trim();
        if s == "e" || s == "ε" || s.is_empty() {
            return Some(Position::root());
        }
        let mut v = Vec::new();
        for part in s.split('.') {
            let n: u32 = part.trim().parse().ok()?;
            if n == 0 {
                return None;
            }
            v.push(n);
        }
        Some(Position(v))
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "e");
        }
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

/// A term node. `Fun` and `Rule` both apply a named symbol; rule symbols
/// are those registered as rules in the enclosing [`crate::trs::Trs`].
/// `Cut` is a reserved nullary marker produced only by [`unfold`].
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Term {
    Var(String),
    Fun(String, Vec<Term>),
    Rule(String, Vec<Term>),
    Rec(String, Box<Term>),
    RecVar(String),
    Cut,
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("position {0} out of range")]
    PositionOutOfRange(Position),
    #[error("rec-variable {0} is unbound")]
    UnboundRecVar(String),
    #[error("rec-binder {0} is unguarded")]
    UnguardedRec(String),
    #[error("pattern variable {0} occurs in a closed term")]
    StrayVar(String),
}

impl Term {
    pub fn fun(name: &str, args: Vec<Term>) -> Term {
        Term::Fun(name.to_string(), args)
    }

    pub fn rule(name: &str, args: Vec<Term>) -> Term {
        Term::Rule(name.to_string(), args)
    }

    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn cst(name: &str) -> Term {
        Term::Fun(name.to_string(), Vec::new())
    }

    pub fn rec(v: &str, body: Term) -> Term {
        Term::Rec(v.to_string(), Box::new(body))
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Fun(_, a) | Term::Rule(_, a) => a,
            _ => &[],
        }
    }

    /// Substitutes `replacement` for free occurrences of rec-variable `v`.
    /// Replacements are closed, so no capture can occur; inner binders of
    /// the same name shadow as usual.
    pub fn subst_recvar(&self, v: &str, replacement: &Term) -> Term {
        match self {
            Term::RecVar(x) if x == v => replacement.clone(),
            Term::RecVar(_) | Term::Var(_) | Term::Cut => self.clone(),
            Term::Fun(f, args) => Term::Fun(
                f.clone(),
                args.iter().map(|a| a.subst_recvar(v, replacement)).collect(),
            ),
            Term::Rule(r, args) => Term::Rule(
                r.clone(),
                args.iter().map(|a| a.subst_recvar(v, replacement)).collect(),
            ),
            Term::Rec(x, _) if x == v => self.clone(),
            Term::Rec(x, body) => Term::Rec(x.clone(), Box::new(body.subst_recvar(v, replacement))),
        }
    }

    /// Unfolds rec-binders at the root until the head is a symbol,
    /// variable or cut. Guarded binders guarantee termination.
    pub fn head_unfold(&self) -> Term {
        let mut cur = self.clone();
        let mut steps = 0usize;
        while let Term::Rec(v, body) = &cur {
            let unfolded = body.subst_recvar(v, &cur);
            cur = unfolded;
            steps += 1;
            if steps > 1024 {
                // unguarded cycle; callers validate first, this is a backstop
                return Term::Cut;
            }
        }
        cur
    }

    pub fn is_rec_headed(&self) -> bool {
        matches!(self, Term::Rec(_, _))
    }

    /// True when the term contains no rule symbol, i.e. is an object term.
    pub fn is_object(&self) -> bool {
        !self.has_rule_symbol()
    }

    pub fn has_rule_symbol(&self) -> bool {
        match self {
            Term::Rule(_, _) => true,
            Term::Fun(_, args) => args.iter().any(|a| a.has_rule_symbol()),
            Term::Rec(_, body) => body.has_rule_symbol(),
            Term::Var(_) | Term::RecVar(_) | Term::Cut => false,
        }
    }

    pub fn contains_cut(&self) -> bool {
        match self {
            Term::Cut => true,
            Term::Fun(_, args) | Term::Rule(_, args) => args.iter().any(|a| a.contains_cut()),
            Term::Rec(_, body) => body.contains_cut(),
            _ => false,
        }
    }

    /// Checks closedness and guardedness of every rec-binder.
    pub fn validate(&self) -> Result<(), TermError> {
        fn walk(t: &Term, bound: &mut Vec<String>) -> Result<(), TermError> {
            match t {
                Term::Var(x) => Err(TermError::StrayVar(x.clone())),
                Term::RecVar(x) => {
                    if bound.iter().any(|b| b == x) {
                        Ok(())
                    } else {
                        Err(TermError::UnboundRecVar(x.clone()))
                    }
                }
                Term::Cut => Ok(()),
                Term::Fun(_, args) | Term::Rule(_, args) => {
                    for a in args {
                        walk(a, bound)?;
                    }
                    Ok(())
                }
                Term::Rec(v, body) => {
                    if !is_guarded(v, body) {
                        return Err(TermError::UnguardedRec(v.clone()));
                    }
                    bound.push(v.clone());
                    let r = walk(body, bound);
                    bound.pop();
                    r
                }
            }
        }
        walk(self, &mut Vec::new())
    }

    /// The subterm at `r`, unfolding rec-binders as needed. The result is
    /// closed whenever `self` is.
    pub fn subterm_at(&self, r: &Position) -> Result<Term, TermError> {
        let mut cur = self.clone();
        for (k, step) in r.0.iter().enumerate() {
            cur = cur.head_unfold();
            let args = match &cur {
                Term::Fun(_, args) | Term::Rule(_, args) => args,
                _ => return Err(TermError::PositionOutOfRange(Position(r.0[..=k].to_vec()))),
            };
            match args.get((*step - 1) as usize) {
                Some(a) => cur = a.clone(),
                None => return Err(TermError::PositionOutOfRange(Position(r.0[..=k].to_vec()))),
            }
        }
        Ok(cur)
    }

    /// The symbol name at `r`, if a symbol (function or rule) sits there.
    pub fn symbol_at(&self, r: &Position) -> Result<Term, TermError> {
        let t = self.subterm_at(r)?.head_unfold();
        Ok(t)
    }

    /// Replaces the subterm at `r` by `s`. Rec-cycles on the path to `r`
    /// are unfolded just enough for `r` to be a tree position of the result.
    pub fn replace_at(&self, r: &Position, s: &Term) -> Result<Term, TermError> {
        fn go(t: &Term, steps: &[u32], s: &Term, full: &Position) -> Result<Term, TermError> {
            if steps.is_empty() {
                return Ok(s.clone());
            }
            let t = t.head_unfold();
            let i = (steps[0] - 1) as usize;
            match t {
                Term::Fun(f, args) => {
                    if i >= args.len() {
                        return Err(TermError::PositionOutOfRange(full.clone()));
                    }
                    let mut args = args.clone();
                    args[i] = go(&args[i], &steps[1..], s, full)?;
                    Ok(Term::Fun(f, args))
                }
                Term::Rule(rname, args) => {
                    if i >= args.len() {
                        return Err(TermError::PositionOutOfRange(full.clone()));
                    }
                    let mut args = args.clone();
                    args[i] = go(&args[i], &steps[1..], s, full)?;
                    Ok(Term::Rule(rname, args))
                }
                _ => Err(TermError::PositionOutOfRange(full.clone())),
            }
        }
        go(self, &r.0, s, r)
    }

    /// Depth-bounded unfolding: equal to `self` on all positions of length
    /// `< depth`, with every node at depth `depth` replaced by [`Term::Cut`].
    pub fn unfold(&self, depth: usize) -> Term {
        if depth == 0 {
            return Term::Cut;
        }
        match self.head_unfold() {
            Term::Fun(f, args) => {
                Term::Fun(f, args.iter().map(|a| a.unfold(depth - 1)).collect())
            }
            Term::Rule(r, args) => {
                Term::Rule(r, args.iter().map(|a| a.unfold(depth - 1)).collect())
            }
            other => other,
        }
    }

    /// Depth of the shallowest rule symbol; `None` when the term is an
    /// object term. Cycles only revisit nodes, so a non-revisiting walk of
    /// the rational representation is exact.
    pub fn min_rule_depth(&self) -> Option<u64> {
        fn go(t: &Term, env: &BTreeMap<String, Option<u64>>) -> Option<u64> {
            match t {
                Term::Rule(_, _) => Some(0),
                Term::Fun(_, args) => args
                    .iter()
                    .filter_map(|a| go(a, env))
                    .min()
                    .map(|d| d + 1),
                Term::Rec(v, body) => {
                    // First pass treats the bound variable as rule-free; the
                    // minimum is reached in the first unfolding.
                    let mut env2 = env.clone();
                    env2.insert(v.clone(), None);
                    go(body, &env2)
                }
                Term::RecVar(v) => env.get(v).cloned().flatten(),
                Term::Var(_) | Term::Cut => None,
            }
        }
        go(self, &BTreeMap::new())
    }

    /// Collects all symbol names with arities (rule and function alike).
    pub fn symbols(&self, out: &mut BTreeMap<String, usize>) {
        match self {
            Term::Fun(f, args) | Term::Rule(f, args) => {
                out.insert(f.clone(), args.len());
                for a in args {
                    a.symbols(out);
                }
            }
            Term::Rec(_, body) => body.symbols(out),
            _ => {}
        }
    }
}

/// Every occurrence of `v` in `body` lies strictly below at least one
/// function or rule symbol.
pub fn is_guarded(v: &str, body: &Term) -> bool {
    fn spine_has_var(v: &str, t: &Term) -> bool {
        match t {
            Term::RecVar(x) => x == v,
            Term::Rec(x, b) if x != v => spine_has_var(v, b),
            _ => false,
        }
    }
    fn occurs_unguarded(v: &str, t: &Term) -> bool {
        // only the spine (rec-binders without an intervening symbol) counts
        spine_has_var(v, t)
    }
    fn all_inner_ok(v: &str, t: &Term) -> bool {
        match t {
            Term::Fun(_, _) | Term::Rule(_, _) | Term::Var(_) | Term::Cut => true,
            Term::RecVar(x) => x != v,
            Term::Rec(x, b) => x == v || all_inner_ok(v, b),
        }
    }
    !occurs_unguarded(v, body) && all_inner_ok(v, body)
}

/// Bisimulation equality of rational trees: `true` iff the two terms
/// denote the same (possibly infinite) tree.
pub fn term_eq(a: &Term, b: &Term) -> bool {
    let mut seen: HashSet<(Term, Term)> = HashSet::new();
    let mut work: Vec<(Term, Term)> = vec![(a.clone(), b.clone())];
    while let Some((x, y)) = work.pop() {
        if x == y || !seen.insert((x.clone(), y.clone())) {
            continue;
        }
        let xh = x.head_unfold();
        let yh = y.head_unfold();
        match (&xh, &yh) {
            (Term::Fun(f, xs), Term::Fun(g, ys)) | (Term::Rule(f, xs), Term::Rule(g, ys)) => {
                if f != g || xs.len() != ys.len() {
                    return false;
                }
                for (xa, ya) in xs.iter().zip(ys.iter()) {
                    work.push((xa.clone(), ya.clone()));
                }
            }
            (Term::Var(u), Term::Var(w)) => {
                if u != w {
                    return false;
                }
            }
            (Term::Cut, Term::Cut) => {}
            _ => return false,
        }
    }
    true
}

/// Matches a left-linear pattern `pat` against `t`, producing the witness
/// substitution when `σ(pat)` equals `t`.
pub fn match_pattern(pat: &Term, t: &Term) -> Option<BTreeMap<String, Term>> {
    fn go(pat: &Term, t: &Term, subst: &mut BTreeMap<String, Term>) -> bool {
        match pat {
            Term::Var(x) => {
                // left-linearity makes each variable fresh
                subst.insert(x.clone(), t.clone());
                true
            }
            Term::Fun(f, pargs) => match t.head_unfold() {
                Term::Fun(g, targs) if *f == g && pargs.len() == targs.len() => pargs
                    .iter()
                    .zip(targs.iter())
                    .all(|(p, a)| go(p, a, subst)),
                _ => false,
            },
            _ => false,
        }
    }
    let mut subst = BTreeMap::new();
    if go(pat, t, &mut subst) {
        Some(subst)
    } else {
        None
    }
}

/// Applies a substitution to a pattern.
pub fn apply_subst(pat: &Term, subst: &BTreeMap<String, Term>) -> Term {
    match pat {
        Term::Var(x) => subst
            .get(x)
            .cloned()
            .unwrap_or_else(|| Term::Var(x.clone())),
        Term::Fun(f, args) => Term::Fun(
            f.clone(),
            args.iter().map(|a| apply_subst(a, subst)).collect(),
        ),
        Term::Rule(r, args) => Term::Rule(
            r.clone(),
            args.iter().map(|a| apply_subst(a, subst)).collect(),
        ),
        Term::Rec(v, body) => Term::Rec(v.clone(), Box::new(apply_subst(body, subst))),
        other => other.clone(),
    }
}

/// Drops rec-binders whose variable no longer occurs in the body.
pub fn prune_binders(t: &Term) -> Term {
    fn occurs(v: &str, t: &Term) -> bool {
        match t {
            Term::RecVar(x) => x == v,
            Term::Fun(_, args) | Term::Rule(_, args) => args.iter().any(|a| occurs(v, a)),
            Term::Rec(x, b) => x != v && occurs(v, b),
            _ => false,
        }
    }
    match t {
        Term::Fun(f, args) => Term::Fun(f.clone(), args.iter().map(prune_binders).collect()),
        Term::Rule(r, args) => Term::Rule(r.clone(), args.iter().map(prune_binders).collect()),
        Term::Rec(v, body) => {
            let body = prune_binders(body);
            if occurs(v, &body) {
                Term::Rec(v.clone(), Box::new(body))
            } else {
                body
            }
        }
        other => other.clone(),
    }
}

/// Renames rec-binders so every binder in the term is unique. Substitution
/// under this invariant can never capture.
pub fn uniquify_binders(t: &Term) -> Term {
    fn go(t: &Term, counter: &mut u32, env: &BTreeMap<String, String>) -> Term {
        match t {
            Term::Rec(v, body) => {
                *counter += 1;
                let fresh = if *counter == 1 {
                    v.clone()
                } else {
                    format!("{}{}", v, counter)
                };
                let mut env2 = env.clone();
                env2.insert(v.clone(), fresh.clone());
                Term::Rec(fresh, Box::new(go(body, counter, &env2)))
            }
            Term::RecVar(v) => Term::RecVar(env.get(v).cloned().unwrap_or_else(|| v.clone())),
            Term::Fun(f, args) => Term::Fun(
                f.clone(),
                args.iter().map(|a| go(a, counter, env)).collect(),
            ),
            Term::Rule(r, args) => Term::Rule(
                r.clone(),
                args.iter().map(|a| go(a, counter, env)).collect(),
            ),
            other => other.clone(),
        }
    }
    let mut names: Vec<String> = Vec::new();
    fn collect(t: &Term, names: &mut Vec<String>) {
        match t {
            Term::Rec(v, b) => {
                names.push(v.clone());
                collect(b, names);
            }
            Term::Fun(_, args) | Term::Rule(_, args) => {
                for a in args {
                    collect(a, names);
                }
            }
            _ => {}
        }
    }
    collect(t, &mut names);
    let mut uniq: HashSet<&String> = HashSet::new();
    let all_unique = names.iter().all(|n| uniq.insert(n));
    if all_unique {
        return t.clone();
    }
    go(t, &mut 0, &BTreeMap::new())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(x) | Term::RecVar(x) => write!(f, "{}", x),
            Term::Cut => write!(f, "..."),
            Term::Fun(name, args) | Term::Rule(name, args) => {
                write!(f, "{}", name)?;
                if !args.is_empty() {
                    write!(f, "(")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{}", a)?;
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
            Term::Rec(v, body) => write!(f, "rec {}. {}", v, body),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f_omega() -> Term {
        Term::rec("X", Term::fun("f", vec![Term::RecVar("X".into())]))
    }

    #[test]
    fn subterm_basic() {
        let t = Term::fun("f", vec![Term::fun("g", vec![Term::cst("a")])]);
        assert_eq!(
            t.subterm_at(&Position(vec![1])).unwrap(),
            Term::fun("g", vec![Term::cst("a")])
        );
        assert!(t.subterm_at(&Position(vec![2])).is_err());
    }

    #[test]
    fn subterm_unfolds_cycles() {
        let t = f_omega();
        let s = t.subterm_at(&Position(vec![1, 1, 1])).unwrap();
        assert!(term_eq(&s, &t));
    }

    #[test]
    fn subterm_nested() {
        // j(m(f(a)), m(b)) | 1.1 = f(a)
        let t = Term::fun(
            "j",
            vec![
                Term::fun("m", vec![Term::fun("f", vec![Term::cst("a")])]),
                Term::fun("m", vec![Term::cst("b")]),
            ],
        );
        assert_eq!(
            t.subterm_at(&Position(vec![1, 1])).unwrap(),
            Term::fun("f", vec![Term::cst("a")])
        );
    }

    #[test]
    fn replace_basic() {
        let t = Term::fun("f", vec![Term::cst("a")]);
        assert_eq!(
            t.replace_at(&Position(vec![1]), &Term::cst("b")).unwrap(),
            Term::fun("f", vec![Term::cst("b")])
        );
    }

    #[test]
    fn replace_at_root() {
        assert_eq!(
            f_omega()
                .replace_at(&Position::root(), &Term::cst("a"))
                .unwrap(),
            Term::cst("a")
        );
    }

    #[test]
    fn replace_unfolds_once() {
        let got = f_omega()
            .replace_at(&Position(vec![1]), &Term::fun("g", vec![Term::cst("a")]))
            .unwrap();
        let expect = Term::fun("f", vec![Term::fun("g", vec![Term::cst("a")])]);
        assert_eq!(got.unfold(3), expect.unfold(3));
    }

    #[test]
    fn bisimulation_equality() {
        let one = f_omega();
        let two = Term::rec(
            "X",
            Term::fun("f", vec![Term::fun("f", vec![Term::RecVar("X".into())])]),
        );
        assert!(term_eq(&one, &two));
        assert!(term_eq(
            &one,
            &Term::fun("f", vec![one.clone()]) // one unfolding
        ));
        let g_omega = Term::rec("X", Term::fun("g", vec![Term::RecVar("X".into())]));
        assert!(!term_eq(&one, &g_omega));
    }

    #[test]
    fn unfold_cuts() {
        assert_eq!(
            f_omega().unfold(2),
            Term::fun("f", vec![Term::fun("f", vec![Term::Cut])])
        );
        assert_eq!(Term::cst("a").unfold(5), Term::cst("a"));
        let t = Term::rec(
            "X",
            Term::fun("g", vec![Term::fun("f", vec![Term::RecVar("X".into())])]),
        );
        assert_eq!(
            t.unfold(3),
            Term::fun(
                "g",
                vec![Term::fun("f", vec![Term::fun("g", vec![Term::Cut])])]
            )
        );
    }

    #[test]
    fn matching() {
        // j(g(x), y) against j(g(b), n(d))
        let pat = Term::fun(
            "j",
            vec![Term::fun("g", vec![Term::var("x")]), Term::var("y")],
        );
        let t = Term::fun(
            "j",
            vec![
                Term::fun("g", vec![Term::cst("b")]),
                Term::fun("n", vec![Term::cst("d")]),
            ],
        );
        let subst = match_pattern(&pat, &t).unwrap();
        assert_eq!(subst["x"], Term::cst("b"));
        assert_eq!(subst["y"], Term::fun("n", vec![Term::cst("d")]));
        assert!(term_eq(&apply_subst(&pat, &subst), &t));

        let no = match_pattern(
            &Term::fun("f", vec![Term::var("x")]),
            &Term::fun("g", vec![Term::cst("a")]),
        );
        assert!(no.is_none());

        // f(x) against f^w binds x to f^w itself
        let sigma = match_pattern(&Term::fun("f", vec![Term::var("x")]), &f_omega()).unwrap();
        assert!(term_eq(&sigma["x"], &f_omega()));
    }

    #[test]
    fn guardedness() {
        assert!(Term::rec("X", Term::fun("f", vec![Term::RecVar("X".into())]))
            .validate()
            .is_ok());
        assert!(matches!(
            Term::rec("X", Term::RecVar("X".into())).validate(),
            Err(TermError::UnguardedRec(_))
        ));
        assert!(matches!(
            Term::Rec(
                "X".into(),
                Box::new(Term::Rec(
                    "Y".into(),
                    Box::new(Term::RecVar("X".into()))
                ))
            )
            .validate(),
            Err(TermError::UnguardedRec(_))
        ));
        assert!(matches!(
            Term::fun("f", vec![Term::RecVar("X".into())]).validate(),
            Err(TermError::UnboundRecVar(_))
        ));
    }

    #[test]
    fn min_rule_depth_on_cycles() {
        let mu_omega = Term::rec("X", Term::rule("mu", vec![Term::RecVar("X".into())]));
        assert_eq!(mu_omega.min_rule_depth(), Some(0));
        let deep = Term::rec(
            "X",
            Term::fun("g", vec![Term::rule("mu", vec![Term::RecVar("X".into())])]),
        );
        assert_eq!(deep.min_rule_depth(), Some(1));
        assert_eq!(f_omega().min_rule_depth(), None);
    }
}
