//! Proof terms: multisteps, compositions, and omega-indexed infinite
//! compositions given by affine-exponent schemas.
//!
//! A proof term denotes contraction activity over a TRS. Multisteps are
//! plain terms over the extended signature; `Comp` sequences two proof
//! terms; `Omega` is an infinite composition whose components arise from a
//! schema body by instantiating the index variable. One-hole contexts in a
//! schema body carry affine exponents `a*i+b`, which keeps chaining and
//! convergence checkable without sampling.

use crate::term::{term_eq, Position, Term, TermError};
use crate::trs::{TgtUndefined, Trs};
use std::fmt;

/// One layer of a one-hole context: `sym(before..., HOLE, after...)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub sym: String,
    pub before: Vec<Term>,
    pub after: Vec<Term>,
}

impl Layer {
    pub fn unary(sym: &str) -> Layer {
        Layer {
            sym: sym.to_string(),
            before: Vec::new(),
            after: Vec::new(),
        }
    }

    pub fn hole_index(&self) -> usize {
        self.before.len() + 1
    }

    pub fn arity(&self) -> usize {
        self.before.len() + self.after.len() + 1
    }

    pub fn same_shape(&self, other: &Layer) -> bool {
        self.sym == other.sym
            && self.before.len() == other.before.len()
            && self.after.len() == other.after.len()
            && self
                .before
                .iter()
                .zip(other.before.iter())
                .all(|(a, b)| term_eq(a, b))
            && self
                .after
                .iter()
                .zip(other.after.iter())
                .all(|(a, b)| term_eq(a, b))
    }
}

/// A finite one-hole context as a chain of layers, outermost first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ctx1(pub Vec<Layer>);

impl Ctx1 {
    pub fn unary(sym: &str) -> Ctx1 {
        Ctx1(vec![Layer::unary(sym)])
    }

    pub fn same_shape(&self, other: &Ctx1) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(other.0.iter())
                .all(|(a, b)| a.same_shape(b))
    }

    /// Wraps a term in one copy of the context.
    pub fn apply_term(&self, inner: Term) -> Term {
        let mut cur = inner;
        for layer in self.0.iter().rev() {
            let mut args = layer.before.clone();
            args.push(cur);
            args.extend(layer.after.iter().cloned());
            cur = Term::Fun(layer.sym.clone(), args);
        }
        cur
    }

    pub fn apply_term_n(&self, inner: Term, n: u64) -> Term {
        let mut cur = inner;
        for _ in 0..n {
            cur = self.apply_term(cur);
        }
        cur
    }
}

/// An affine exponent `coef*i + base`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub coef: u64,
    pub base: u64,
}

impl Affine {
    pub fn new(coef: u64, base: u64) -> Affine {
        Affine { coef, base }
    }

    pub fn eval(&self, i: u64) -> u64 {
        self.coef * i + self.base
    }

    /// The exponent after substituting `i := i + d`.
    pub fn shifted(&self, d: u64) -> Affine {
        Affine {
            coef: self.coef,
            base: self.base + self.coef * d,
        }
    }

    pub fn plus(&self, other: &Affine) -> Affine {
        Affine {
            coef: self.coef + other.coef,
            base: self.base + other.base,
        }
    }
}

impl fmt::Display for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.coef, self.base) {
            (0, b) => write!(f, "{}", b),
            (1, 0) => write!(f, "i"),
            (1, b) => write!(f, "i+{}", b),
            (a, 0) => write!(f, "{}*i", a),
            (a, b) => write!(f, "{}*i+{}", a, b),
        }
    }
}

/// Body of an omega composition; may mention the index variable only in
/// `Power` exponents.
#[derive(Clone, Debug, PartialEq)]
pub enum SchemaTerm {
    Multi(Term),
    Fun(String, Vec<SchemaTerm>),
    Rule(String, Vec<SchemaTerm>),
    Comp(Box<SchemaTerm>, Box<SchemaTerm>),
    Power(Ctx1, Affine, Box<SchemaTerm>),
}

impl SchemaTerm {
    pub fn comp(a: SchemaTerm, b: SchemaTerm) -> SchemaTerm {
        SchemaTerm::Comp(Box::new(a), Box::new(b))
    }

    /// Normalizing constructor: constant exponents expand to literal layers.
    pub fn power(ctx: Ctx1, aff: Affine, inner: SchemaTerm) -> SchemaTerm {
        if ctx.0.is_empty() {
            return inner;
        }
        if aff.coef == 0 {
            let mut cur = inner;
            for _ in 0..aff.base {
                for layer in ctx.0.iter().rev() {
                    cur = SchemaTerm::layer_apply(layer, cur);
                }
            }
            return cur;
        }
        SchemaTerm::Power(ctx, aff, Box::new(inner))
    }

    fn layer_apply(layer: &Layer, inner: SchemaTerm) -> SchemaTerm {
        let mut kids: Vec<SchemaTerm> = layer
            .before
            .iter()
            .map(|t| SchemaTerm::Multi(t.clone()))
            .collect();
        kids.push(inner);
        kids.extend(layer.after.iter().map(|t| SchemaTerm::Multi(t.clone())));
        schema_fun(&layer.sym, kids)
    }

    pub fn has_rule(&self, trs: &Trs) -> bool {
        match self {
            SchemaTerm::Multi(t) => t.has_rule_symbol(),
            SchemaTerm::Fun(_, kids) => kids.iter().any(|k| k.has_rule(trs)),
            SchemaTerm::Rule(_, _) => true,
            SchemaTerm::Comp(a, b) => a.has_rule(trs) || b.has_rule(trs),
            SchemaTerm::Power(_, _, inner) => inner.has_rule(trs),
        }
    }

    /// Substitutes `i := i + d`.
    pub fn shifted(&self, d: u64) -> SchemaTerm {
        match self {
            SchemaTerm::Multi(t) => SchemaTerm::Multi(t.clone()),
            SchemaTerm::Fun(f, kids) => {
                SchemaTerm::Fun(f.clone(), kids.iter().map(|k| k.shifted(d)).collect())
            }
            SchemaTerm::Rule(r, kids) => {
                SchemaTerm::Rule(r.clone(), kids.iter().map(|k| k.shifted(d)).collect())
            }
            SchemaTerm::Comp(a, b) => SchemaTerm::comp(a.shifted(d), b.shifted(d)),
            SchemaTerm::Power(c, aff, inner) => {
                SchemaTerm::Power(c.clone(), aff.shifted(d), Box::new(inner.shifted(d)))
            }
        }
    }

    /// Instantiates the index variable, expanding powers to nested layers.
    pub fn instantiate(&self, i: u64) -> ProofTerm {
        match self {
            SchemaTerm::Multi(t) => ProofTerm::Multi(t.clone()),
            SchemaTerm::Fun(f, kids) => {
                pt_fun(f, kids.iter().map(|k| k.instantiate(i)).collect())
            }
            SchemaTerm::Rule(r, kids) => {
                pt_rule(r, kids.iter().map(|k| k.instantiate(i)).collect())
            }
            SchemaTerm::Comp(a, b) => ProofTerm::comp(a.instantiate(i), b.instantiate(i)),
            SchemaTerm::Power(c, aff, inner) => {
                let mut cur = inner.instantiate(i);
                for _ in 0..aff.eval(i) {
                    for layer in c.0.iter().rev() {
                        let mut kids: Vec<ProofTerm> = layer
                            .before
                            .iter()
                            .map(|t| ProofTerm::Multi(t.clone()))
                            .collect();
                        kids.push(cur);
                        kids.extend(layer.after.iter().map(|t| ProofTerm::Multi(t.clone())));
                        cur = pt_fun(&layer.sym, kids);
                    }
                }
                cur
            }
        }
    }
}

/// An omega composition given as a schema over one index variable.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaSchema {
    pub var: String,
    pub body: SchemaTerm,
}

impl OmegaSchema {
    pub fn new(var: &str, body: SchemaTerm) -> OmegaSchema {
        OmegaSchema {
            var: var.to_string(),
            body,
        }
    }

    pub fn component(&self, i: u64) -> ProofTerm {
        self.body.instantiate(i)
    }

    /// The schema for components `i+d, i+d+1, ...`.
    pub fn shifted(&self, d: u64) -> OmegaSchema {
        OmegaSchema {
            var: self.var.clone(),
            body: self.body.shifted(d),
        }
    }
}

/// A proof term. `Multi` is an infinitary multistep (possibly an object
/// term); `Fun`/`Rule` nodes appear only when at least one argument is not
/// a multistep; `Pending` marks an unresolved sub-projection inside
/// truncated projection results.
#[derive(Clone, Debug, PartialEq)]
pub enum ProofTerm {
    Multi(Term),
    Fun(String, Vec<ProofTerm>),
    Rule(String, Vec<ProofTerm>),
    Comp(Box<ProofTerm>, Box<ProofTerm>),
    Omega(OmegaSchema),
    Pending(u32),
}

impl ProofTerm {
    pub fn obj(t: Term) -> ProofTerm {
        ProofTerm::Multi(t)
    }

    pub fn comp(a: ProofTerm, b: ProofTerm) -> ProofTerm {
        ProofTerm::Comp(Box::new(a), Box::new(b))
    }

    pub fn is_comp(&self) -> bool {
        matches!(self, ProofTerm::Comp(_, _))
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, ProofTerm::Multi(_))
    }

    /// An object proof term: a multistep without rule symbols.
    pub fn is_object(&self) -> bool {
        matches!(self, ProofTerm::Multi(t) if t.is_object())
    }

    pub fn as_object(&self) -> Option<&Term> {
        match self {
            ProofTerm::Multi(t) if t.is_object() => Some(t),
            _ => None,
        }
    }

    pub fn has_rule(&self) -> bool {
        match self {
            ProofTerm::Multi(t) => t.has_rule_symbol(),
            ProofTerm::Fun(_, kids) => kids.iter().any(|k| k.has_rule()),
            ProofTerm::Rule(_, _) => true,
            ProofTerm::Comp(a, b) => a.has_rule() || b.has_rule(),
            ProofTerm::Omega(o) => match &o.body {
                SchemaTerm::Multi(t) => t.has_rule_symbol(),
                body => body_has_rule(body),
            },
            ProofTerm::Pending(_) => true,
        }
    }

    /// Number of rule symbol occurrences, `None` when infinite (a rule
    /// inside a rec-cycle or an omega body).
    pub fn rule_count(&self) -> Option<usize> {
        fn term_count(t: &Term, under_rec: bool) -> Option<usize> {
            match t {
                Term::Rule(_, args) => {
                    if under_rec {
                        return None;
                    }
                    let mut n = 1;
                    for a in args {
                        n += term_count(a, under_rec)?;
                    }
                    Some(n)
                }
                Term::Fun(_, args) => {
                    let mut n = 0;
                    for a in args {
                        n += term_count(a, under_rec)?;
                    }
                    Some(n)
                }
                Term::Rec(_, body) => {
                    if body.has_rule_symbol() {
                        None
                    } else {
                        Some(0)
                    }
                }
                _ => Some(0),
            }
        }
        match self {
            ProofTerm::Multi(t) => term_count(t, false),
            ProofTerm::Fun(_, kids) | ProofTerm::Rule(_, kids) => {
                let mut n = if matches!(self, ProofTerm::Rule(_, _)) {
                    1
                } else {
                    0
                };
                for k in kids {
                    n += k.rule_count()?;
                }
                Some(n)
            }
            ProofTerm::Comp(a, b) => Some(a.rule_count()? + b.rule_count()?),
            ProofTerm::Omega(o) => {
                if body_has_rule(&o.body) {
                    None
                } else {
                    Some(0)
                }
            }
            ProofTerm::Pending(_) => None,
        }
    }

    pub fn contains_pending(&self) -> bool {
        match self {
            ProofTerm::Pending(_) => true,
            ProofTerm::Fun(_, kids) | ProofTerm::Rule(_, kids) => {
                kids.iter().any(|k| k.contains_pending())
            }
            ProofTerm::Comp(a, b) => a.contains_pending() || b.contains_pending(),
            _ => false,
        }
    }
}

fn body_has_rule(body: &SchemaTerm) -> bool {
    match body {
        SchemaTerm::Multi(t) => t.has_rule_symbol(),
        SchemaTerm::Fun(_, kids) => kids.iter().any(body_has_rule),
        SchemaTerm::Rule(_, _) => true,
        SchemaTerm::Comp(a, b) => body_has_rule(a) || body_has_rule(b),
        SchemaTerm::Power(_, _, inner) => body_has_rule(inner),
    }
}

/// Function-node constructor collapsing into a multistep whenever every
/// argument already is one.
pub fn pt_fun(name: &str, kids: Vec<ProofTerm>) -> ProofTerm {
    if kids.iter().all(|k| k.is_multi()) {
        let args = kids
            .into_iter()
            .map(|k| match k {
                ProofTerm::Multi(t) => t,
                _ => unreachable!(),
            })
            .collect();
        ProofTerm::Multi(Term::Fun(name.to_string(), args))
    } else {
        ProofTerm::Fun(name.to_string(), kids)
    }
}

pub fn pt_rule(name: &str, kids: Vec<ProofTerm>) -> ProofTerm {
    if kids.iter().all(|k| k.is_multi()) {
        let args = kids
            .into_iter()
            .map(|k| match k {
                ProofTerm::Multi(t) => t,
                _ => unreachable!(),
            })
            .collect();
        ProofTerm::Multi(Term::Rule(name.to_string(), args))
    } else {
        ProofTerm::Rule(name.to_string(), kids)
    }
}

pub fn schema_fun(name: &str, kids: Vec<SchemaTerm>) -> SchemaTerm {
    if kids
        .iter()
        .all(|k| matches!(k, SchemaTerm::Multi(_)))
    {
        let args = kids
            .into_iter()
            .map(|k| match k {
                SchemaTerm::Multi(t) => t,
                _ => unreachable!(),
            })
            .collect();
        SchemaTerm::Multi(Term::Fun(name.to_string(), args))
    } else {
        SchemaTerm::Fun(name.to_string(), kids)
    }
}

pub fn schema_rule(name: &str, kids: Vec<SchemaTerm>) -> SchemaTerm {
    if kids
        .iter()
        .all(|k| matches!(k, SchemaTerm::Multi(_)))
    {
        let args = kids
            .into_iter()
            .map(|k| match k {
                SchemaTerm::Multi(t) => t,
                _ => unreachable!(),
            })
            .collect();
        SchemaTerm::Multi(Term::Rule(name.to_string(), args))
    } else {
        SchemaTerm::Rule(name.to_string(), kids)
    }
}

/// Instantiates a rule pattern with proof-term arguments in variable order.
pub fn instantiate_pattern(pat: &Term, vars: &[String], args: &[ProofTerm]) -> ProofTerm {
    match pat {
        Term::Var(x) => {
            let idx = vars.iter().position(|v| v == x).expect("rhs var bound");
            args[idx].clone()
        }
        Term::Fun(f, pargs) => pt_fun(
            f,
            pargs
                .iter()
                .map(|p| instantiate_pattern(p, vars, args))
                .collect(),
        ),
        _ => unreachable!("rule patterns contain only function symbols and variables"),
    }
}

/// Minimal activity depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Finite(u64),
    Infinite,
}

impl Depth {
    pub fn min(self, other: Depth) -> Depth {
        match (self, other) {
            (Depth::Finite(a), Depth::Finite(b)) => Depth::Finite(a.min(b)),
            (Depth::Finite(a), Depth::Infinite) | (Depth::Infinite, Depth::Finite(a)) => {
                Depth::Finite(a)
            }
            _ => Depth::Infinite,
        }
    }

    pub fn add(self, d: u64) -> Depth {
        match self {
            Depth::Finite(a) => Depth::Finite(a + d),
            Depth::Infinite => Depth::Infinite,
        }
    }

    pub fn exceeds(self, k: u64) -> bool {
        match self {
            Depth::Finite(a) => a > k,
            Depth::Infinite => true,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Finite(n) => write!(f, "{}", n),
            Depth::Infinite => write!(f, "inf"),
        }
    }
}

/// Minimal activity depth of a proof term; infinite iff it contains no
/// rule symbol. Exact on omega schemas: exponents are monotone in the
/// index, so the minimum is attained at the first component.
pub fn mind(pt: &ProofTerm) -> Depth {
    match pt {
        ProofTerm::Multi(t) => match t.min_rule_depth() {
            Some(d) => Depth::Finite(d),
            None => Depth::Infinite,
        },
        ProofTerm::Fun(_, kids) => kids
            .iter()
            .map(mind)
            .fold(Depth::Infinite, Depth::min)
            .add(1),
        ProofTerm::Rule(_, _) => Depth::Finite(0),
        ProofTerm::Comp(a, b) => mind(a).min(mind(b)),
        ProofTerm::Omega(o) => mind(&o.component(0)),
        ProofTerm::Pending(_) => Depth::Finite(0),
    }
}

/// Source of a proof term; always defined.
pub fn src(trs: &Trs, pt: &ProofTerm) -> Term {
    match pt {
        ProofTerm::Multi(t) => trs.src_term(t),
        ProofTerm::Fun(f, kids) => {
            Term::Fun(f.clone(), kids.iter().map(|k| src(trs, k)).collect())
        }
        ProofTerm::Rule(r, kids) => {
            let args: Vec<Term> = kids.iter().map(|k| src(trs, k)).collect();
            match trs.rule(r) {
                Some(rule) => rule.instantiate_lhs(&args),
                None => Term::Rule(r.clone(), args),
            }
        }
        ProofTerm::Comp(a, _) => src(trs, a),
        ProofTerm::Omega(o) => src(trs, &o.component(0)),
        ProofTerm::Pending(_) => Term::Cut,
    }
}

pub const DEFAULT_LIMIT_DEPTH: usize = 32;

/// Target of a proof term; undefined for collapsing towers and divergent
/// infinite compositions.
pub fn tgt(trs: &Trs, pt: &ProofTerm) -> Result<Term, TgtUndefined> {
    tgt_at_depth(trs, pt, DEFAULT_LIMIT_DEPTH)
}

pub fn tgt_at_depth(trs: &Trs, pt: &ProofTerm, depth: usize) -> Result<Term, TgtUndefined> {
    match pt {
        ProofTerm::Multi(t) => trs.tgt_term(t),
        ProofTerm::Fun(f, kids) => {
            let args: Result<Vec<Term>, TgtUndefined> =
                kids.iter().map(|k| tgt_at_depth(trs, k, depth)).collect();
            Ok(Term::Fun(f.clone(), args?))
        }
        ProofTerm::Rule(r, kids) => {
            let args: Result<Vec<Term>, TgtUndefined> =
                kids.iter().map(|k| tgt_at_depth(trs, k, depth)).collect();
            match trs.rule(r) {
                Some(rule) => Ok(rule.instantiate_rhs(&args?)),
                None => Ok(Term::Rule(r.clone(), args?)),
            }
        }
        ProofTerm::Comp(_, b) => tgt_at_depth(trs, b, depth),
        ProofTerm::Omega(o) => {
            let lim = limit_of_targets(trs, o, depth)?;
            if lim.rational {
                Ok(lim.term)
            } else {
                Err(TgtUndefined::NoRationalForm)
            }
        }
        ProofTerm::Pending(_) => Err(TgtUndefined::NoRationalForm),
    }
}

/// Convergence verdict with a witness for the limit-depth function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Convergent,
    Divergent,
    Unknown,
}

#[derive(Clone, Debug)]
pub struct ConvergenceCertificate {
    pub verdict: Verdict,
    /// Lower bounds `coef*i + base` for the depth of each rule occurrence
    /// across the component family; empty for non-omega proof terms.
    pub depth_bounds: Vec<Affine>,
    pub sampled_chain: bool,
}

impl ConvergenceCertificate {
    /// Least index beyond which every component has activity deeper than `n`.
    pub fn witness_index(&self, n: u64) -> Option<u64> {
        if self.verdict != Verdict::Convergent {
            return None;
        }
        let mut w = 0u64;
        for aff in &self.depth_bounds {
            if aff.base > n {
                continue;
            }
            if aff.coef == 0 {
                return None;
            }
            // least i with coef*i + base > n
            let need = (n - aff.base) / aff.coef + 1;
            w = w.max(need);
        }
        Some(w)
    }
}

/// Convergence analysis. For omega schemas the verdict is read off the
/// affine exponents: convergent iff every rule occurrence of the body sits
/// under at least one indexed power.
pub fn is_convergent(trs: &Trs, pt: &ProofTerm) -> ConvergenceCertificate {
    fn certify(trs: &Trs, pt: &ProofTerm) -> Verdict {
        match pt {
            ProofTerm::Multi(t) => {
                if trs.tgt_term(t).is_ok() {
                    Verdict::Convergent
                } else {
                    Verdict::Divergent
                }
            }
            ProofTerm::Fun(_, kids) | ProofTerm::Rule(_, kids) => {
                if kids.iter().all(|k| certify(trs, k) == Verdict::Convergent) {
                    Verdict::Convergent
                } else {
                    Verdict::Divergent
                }
            }
            ProofTerm::Comp(a, b) => {
                if certify(trs, a) == Verdict::Convergent
                    && certify(trs, b) == Verdict::Convergent
                {
                    Verdict::Convergent
                } else {
                    Verdict::Divergent
                }
            }
            ProofTerm::Omega(o) => {
                let mut bounds = Vec::new();
                collect_depth_bounds(&o.body, Affine::new(0, 0), &mut bounds);
                if bounds.iter().all(|b| b.coef >= 1)
                    && certify(trs, &o.component(0)) == Verdict::Convergent
                {
                    Verdict::Convergent
                } else if bounds.is_empty() {
                    Verdict::Convergent
                } else {
                    Verdict::Divergent
                }
            }
            ProofTerm::Pending(_) => Verdict::Unknown,
        }
    }
    let verdict = certify(trs, pt);
    let mut bounds = Vec::new();
    if let ProofTerm::Omega(o) = pt {
        collect_depth_bounds(&o.body, Affine::new(0, 0), &mut bounds);
    }
    ConvergenceCertificate {
        verdict,
        depth_bounds: bounds,
        sampled_chain: false,
    }
}

fn collect_depth_bounds(body: &SchemaTerm, acc: Affine, out: &mut Vec<Affine>) {
    match body {
        SchemaTerm::Multi(t) => {
            if let Some(d) = t.min_rule_depth() {
                out.push(Affine::new(acc.coef, acc.base + d));
            }
        }
        SchemaTerm::Fun(_, kids) => {
            for k in kids {
                collect_depth_bounds(k, Affine::new(acc.coef, acc.base + 1), out);
            }
        }
        SchemaTerm::Rule(_, kids) => {
            out.push(acc);
            for k in kids {
                // arguments sit at least one level down
                collect_depth_bounds(k, Affine::new(acc.coef, acc.base + 1), out);
            }
        }
        SchemaTerm::Comp(a, b) => {
            collect_depth_bounds(a, acc, out);
            collect_depth_bounds(b, acc, out);
        }
        SchemaTerm::Power(c, aff, inner) => {
            let per_copy = c.0.len() as u64;
            let grown = Affine::new(
                acc.coef + aff.coef * per_copy,
                acc.base + aff.base * per_copy,
            );
            collect_depth_bounds(inner, grown, out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct LimitResult {
    pub term: Term,
    pub certified_depth: usize,
    /// True when a rational closed form was detected and verified; false
    /// when the term is the depth-bounded finite approximation.
    pub rational: bool,
}

/// The limit of the component-target sequence of a convergent omega
/// composition, certified to the given depth: the result agrees with
/// `tgt` of every sufficiently late component on all positions shorter
/// than each `k <= depth`.
pub fn limit_of_targets(
    trs: &Trs,
    omega: &OmegaSchema,
    depth: usize,
) -> Result<LimitResult, TgtUndefined> {
    let pt = ProofTerm::Omega(omega.clone());
    let cert = is_convergent(trs, &pt);
    if cert.verdict != Verdict::Convergent {
        return Err(TgtUndefined::DivergentComposition);
    }
    let mut prefixes: Vec<Term> = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let w = cert
            .witness_index(k as u64)
            .ok_or(TgtUndefined::DivergentComposition)?;
        let t = trs.tgt_term(&term_of_component(trs, omega, w)?)?;
        prefixes.push(t.unfold(k));
    }
    let deepest = prefixes[depth].clone();
    if !deepest.contains_cut() {
        return Ok(LimitResult {
            term: deepest,
            certified_depth: depth,
            rational: true,
        });
    }
    // search for a repeating suffix: a position q dominating every cut,
    // whose replacement by a back-edge reproduces all certified prefixes
    let mut candidates: Vec<Position> = Vec::new();
    collect_positions(&deepest, Position::root(), depth.min(16), &mut candidates);
    for q in candidates {
        if q.is_root() {
            continue;
        }
        if !cuts_below(&deepest, &q) {
            continue;
        }
        let bound = deepest
            .replace_at(&q, &Term::RecVar("X".into()))
            .map_err(|_| TgtUndefined::NoRationalForm);
        let Ok(body) = bound else { continue };
        if body.contains_cut() {
            continue;
        }
        let candidate = Term::Rec("X".into(), Box::new(body));
        if candidate.validate().is_err() {
            continue;
        }
        let ok = (0..=depth).all(|k| candidate.unfold(k) == prefixes[k]);
        if ok {
            return Ok(LimitResult {
                term: candidate,
                certified_depth: depth,
                rational: true,
            });
        }
    }
    Ok(LimitResult {
        term: deepest,
        certified_depth: depth,
        rational: false,
    })
}

fn term_of_component(
    trs: &Trs,
    omega: &OmegaSchema,
    i: u64,
) -> Result<Term, TgtUndefined> {
    let inst = omega.component(i);
    fn as_term(trs: &Trs, pt: &ProofTerm) -> Result<Term, TgtUndefined> {
        match pt {
            ProofTerm::Multi(t) => Ok(t.clone()),
            ProofTerm::Comp(_, b) => as_term(trs, b),
            ProofTerm::Fun(f, kids) => {
                let kids: Result<Vec<Term>, _> =
                    kids.iter().map(|k| as_term(trs, k)).collect();
                Ok(Term::Fun(f.clone(), kids?))
            }
            ProofTerm::Rule(r, kids) => {
                let kids: Result<Vec<Term>, _> =
                    kids.iter().map(|k| as_term(trs, k)).collect();
                Ok(Term::Rule(r.clone(), kids?))
            }
            _ => Err(TgtUndefined::NoRationalForm),
        }
    }
    // components are proof terms; for the limit only their target matters,
    // so a composition component contributes its final multistep
    match &inst {
        ProofTerm::Comp(_, _) => {
            let mut cur = inst.clone();
            while let ProofTerm::Comp(_, b) = cur {
                cur = (*b).clone();
            }
            as_term(trs, &cur)
        }
        other => as_term(trs, other),
    }
}

fn collect_positions(t: &Term, at: Position, max_len: usize, out: &mut Vec<Position>) {
    if at.len() > max_len {
        return;
    }
    out.push(at.clone());
    if let Term::Fun(_, args) | Term::Rule(_, args) = t {
        for (i, a) in args.iter().enumerate() {
            collect_positions(a, at.child(i as u32 + 1), max_len, out);
        }
    }
}

fn cuts_below(t: &Term, q: &Position) -> bool {
    fn cut_positions(t: &Term, at: Position, out: &mut Vec<Position>) {
        match t {
            Term::Cut => out.push(at),
            Term::Fun(_, args) | Term::Rule(_, args) => {
                for (i, a) in args.iter().enumerate() {
                    cut_positions(a, at.child(i as u32 + 1), out);
                }
            }
            _ => {}
        }
    }
    let mut cuts = Vec::new();
    cut_positions(t, Position::root(), &mut cuts);
    cuts.iter().all(|c| q.is_prefix_of(c))
}

/// Validity violations, reported with the AST path where they occur.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub at: Position,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    UnknownSymbol(String),
    Term(TermError),
    NotComposable {
        left_tgt: String,
        right_src: String,
    },
    LeftTargetUndefined(String),
    SchemaChainBroken {
        index: u64,
    },
    StrayPending,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::Arity {
                name,
                expected,
                got,
            } => write!(
                f,
                "at {}: symbol {} has arity {}, applied to {} arguments",
                self.at, name, expected, got
            ),
            ViolationKind::UnknownSymbol(s) => {
                write!(f, "at {}: unknown symbol {}", self.at, s)
            }
            ViolationKind::Term(e) => write!(f, "at {}: {}", self.at, e),
            ViolationKind::NotComposable {
                left_tgt,
                right_src,
            } => write!(
                f,
                "at {}: composition mismatch: tgt {} != src {}",
                self.at, left_tgt, right_src
            ),
            ViolationKind::LeftTargetUndefined(why) => {
                write!(f, "at {}: left component has undefined target: {}", self.at, why)
            }
            ViolationKind::SchemaChainBroken { index } => write!(
                f,
                "at {}: omega chaining tgt(psi_{}) != src(psi_{})",
                self.at,
                index,
                index + 1
            ),
            ViolationKind::StrayPending => {
                write!(f, "at {}: unresolved projection marker", self.at)
            }
        }
    }
}

/// Full well-formedness check: arities, closedness and guardedness,
/// composability of every composition node, omega chaining.
pub fn validate(trs: &Trs, pt: &ProofTerm) -> Vec<Violation> {
    let mut out = Vec::new();
    check(trs, pt, Position::root(), &mut out);
    out
}

fn check_term(trs: &Trs, t: &Term, at: &Position, out: &mut Vec<Violation>) {
    if let Err(e) = t.validate() {
        out.push(Violation {
            at: at.clone(),
            kind: ViolationKind::Term(e),
        });
    }
    fn arities(trs: &Trs, t: &Term, at: Position, out: &mut Vec<Violation>) {
        match t {
            Term::Fun(f, args) | Term::Rule(f, args) => {
                match trs.arity(f) {
                    Some(a) if a != args.len() => out.push(Violation {
                        at: at.clone(),
                        kind: ViolationKind::Arity {
                            name: f.clone(),
                            expected: a,
                            got: args.len(),
                        },
                    }),
                    None => out.push(Violation {
                        at: at.clone(),
                        kind: ViolationKind::UnknownSymbol(f.clone()),
                    }),
                    _ => {}
                }
                for (i, a) in args.iter().enumerate() {
                    arities(trs, a, at.child(i as u32 + 1), out);
                }
            }
            Term::Rec(_, body) => arities(trs, body, at, out),
            _ => {}
        }
    }
    arities(trs, t, at.clone(), out);
}

fn check(trs: &Trs, pt: &ProofTerm, at: Position, out: &mut Vec<Violation>) {
    match pt {
        ProofTerm::Multi(t) => check_term(trs, t, &at, out),
        ProofTerm::Fun(f, kids) | ProofTerm::Rule(f, kids) => {
            match trs.arity(f) {
                Some(a) if a != kids.len() => out.push(Violation {
                    at: at.clone(),
                    kind: ViolationKind::Arity {
                        name: f.clone(),
                        expected: a,
                        got: kids.len(),
                    },
                }),
                None => out.push(Violation {
                    at: at.clone(),
                    kind: ViolationKind::UnknownSymbol(f.clone()),
                }),
                _ => {}
            }
            for (i, k) in kids.iter().enumerate() {
                check(trs, k, at.child(i as u32 + 1), out);
            }
        }
        ProofTerm::Comp(a, b) => {
            check(trs, a, at.child(1), out);
            check(trs, b, at.child(2), out);
            match tgt(trs, a) {
                Err(e) => out.push(Violation {
                    at: at.clone(),
                    kind: ViolationKind::LeftTargetUndefined(e.to_string()),
                }),
                Ok(ta) => {
                    let sb = src(trs, b);
                    if !term_eq(&ta, &sb) {
                        out.push(Violation {
                            at: at.clone(),
                            kind: ViolationKind::NotComposable {
                                left_tgt: ta.to_string(),
                                right_src: sb.to_string(),
                            },
                        });
                    }
                }
            }
        }
        ProofTerm::Omega(o) => {
            for i in 0..2u64 {
                check(trs, &o.component(i), at.clone(), out);
            }
            match check_schema_chain(trs, o) {
                Ok(_) => {}
                Err(i) => out.push(Violation {
                    at: at.clone(),
                    kind: ViolationKind::SchemaChainBroken { index: i },
                }),
            }
        }
        ProofTerm::Pending(_) => out.push(Violation {
            at,
            kind: ViolationKind::StrayPending,
        }),
    }
}

/// Evidence for the omega chaining condition `tgt(psi_i) = src(psi_{i+1})`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainEvidence {
    Symbolic,
    Sampled(u64),
}

/// Verifies the chaining condition of a schema, symbolically when both
/// sides normalize to a power spine, by sampling otherwise. Returns the
/// first failing index on failure.
pub fn check_schema_chain(trs: &Trs, o: &OmegaSchema) -> Result<ChainEvidence, u64> {
    if let (Some(t_norm), Some(s_norm)) = (
        schema_tgt(trs, &o.body).and_then(|t| norm_spine(trs, &t)),
        schema_src(trs, &o.body.shifted(1)).and_then(|s| norm_spine(trs, &s)),
    ) {
        if spine_eq(&t_norm, &s_norm) {
            return Ok(ChainEvidence::Symbolic);
        }
    }
    let max_base = max_base_of(&o.body);
    let upto = std::cmp::max(8, 2 * max_base + 2);
    for i in 0..upto {
        let a = o.component(i);
        let b = o.component(i + 1);
        match tgt(trs, &a) {
            Ok(ta) => {
                if !term_eq(&ta, &src(trs, &b)) {
                    return Err(i);
                }
            }
            Err(_) => return Err(i),
        }
    }
    Ok(ChainEvidence::Sampled(upto))
}

fn max_base_of(body: &SchemaTerm) -> u64 {
    match body {
        SchemaTerm::Multi(_) => 0,
        SchemaTerm::Fun(_, kids) | SchemaTerm::Rule(_, kids) => {
            kids.iter().map(max_base_of).max().unwrap_or(0)
        }
        SchemaTerm::Comp(a, b) => max_base_of(a).max(max_base_of(b)),
        SchemaTerm::Power(_, aff, inner) => aff.base.max(max_base_of(inner)),
    }
}

/// Structural source of a schema body, as a schema body.
pub fn schema_src(trs: &Trs, body: &SchemaTerm) -> Option<SchemaTerm> {
    match body {
        SchemaTerm::Multi(t) => Some(SchemaTerm::Multi(trs.src_term(t))),
        SchemaTerm::Fun(f, kids) => {
            let kids: Option<Vec<_>> = kids.iter().map(|k| schema_src(trs, k)).collect();
            Some(schema_fun(f, kids?))
        }
        SchemaTerm::Rule(r, kids) => {
            let rule = trs.rule(r)?;
            let kids: Option<Vec<_>> = kids.iter().map(|k| schema_src(trs, k)).collect();
            Some(instantiate_pattern_schema(&rule.lhs, &rule.vars, &kids?))
        }
        SchemaTerm::Comp(a, _) => schema_src(trs, a),
        SchemaTerm::Power(c, aff, inner) => Some(SchemaTerm::power(
            c.clone(),
            *aff,
            schema_src(trs, inner)?,
        )),
    }
}

/// Structural target of a schema body; `None` when undefined or when a
/// collapsing rule makes the power spine unreliable.
pub fn schema_tgt(trs: &Trs, body: &SchemaTerm) -> Option<SchemaTerm> {
    match body {
        SchemaTerm::Multi(t) => Some(SchemaTerm::Multi(trs.tgt_term(t).ok()?)),
        SchemaTerm::Fun(f, kids) => {
            let kids: Option<Vec<_>> = kids.iter().map(|k| schema_tgt(trs, k)).collect();
            Some(schema_fun(f, kids?))
        }
        SchemaTerm::Rule(r, kids) => {
            let rule = trs.rule(r)?;
            let kids: Option<Vec<_>> = kids.iter().map(|k| schema_tgt(trs, k)).collect();
            Some(instantiate_pattern_schema(&rule.rhs, &rule.vars, &kids?))
        }
        SchemaTerm::Comp(_, b) => schema_tgt(trs, b),
        SchemaTerm::Power(c, aff, inner) => Some(SchemaTerm::power(
            c.clone(),
            *aff,
            schema_tgt(trs, inner)?,
        )),
    }
}

fn instantiate_pattern_schema(pat: &Term, vars: &[String], args: &[SchemaTerm]) -> SchemaTerm {
    match pat {
        Term::Var(x) => {
            let idx = vars.iter().position(|v| v == x).expect("rhs var bound");
            args[idx].clone()
        }
        Term::Fun(f, pargs) => schema_fun(
            f,
            pargs
                .iter()
                .map(|p| instantiate_pattern_schema(p, vars, args))
                .collect(),
        ),
        _ => unreachable!(),
    }
}

/// Normal form of an object schema term as a spine of powered contexts
/// over a rational tail. `None` when the body does not fit the shape.
fn norm_spine(trs: &Trs, body: &SchemaTerm) -> Option<(Vec<(Ctx1, Affine)>, Term)> {
    let _ = trs;
    fn go(body: &SchemaTerm) -> Option<(Vec<(Ctx1, Affine)>, Term)> {
        match body {
            SchemaTerm::Multi(t) => Some((Vec::new(), t.clone())),
            SchemaTerm::Power(c, aff, inner) => {
                let (mut segs, tail) = go(inner)?;
                segs.insert(0, (c.clone(), *aff));
                Some((segs, tail))
            }
            SchemaTerm::Fun(f, kids) => {
                // treat a unary function layer as a constant-power segment
                if kids.len() == 1 {
                    let (mut segs, tail) = go(&kids[0])?;
                    segs.insert(0, (Ctx1::unary(f), Affine::new(0, 1)));
                    Some((segs, tail))
                } else {
                    None
                }
            }
            _ => None,
        }
    }
    let (segs, mut tail) = go(body)?;
    // merge adjacent equal-context segments
    let mut merged: Vec<(Ctx1, Affine)> = Vec::new();
    for (c, a) in segs {
        match merged.last_mut() {
            Some((lc, la)) if lc.same_shape(&c) => *la = la.plus(&a),
            _ => merged.push((c, a)),
        }
    }
    // absorb literal copies of the innermost context from the tail
    let mut guard = 0;
    while let Some((c, a)) = merged.last_mut() {
        if c.0.len() != 1 || guard > 64 {
            break;
        }
        guard += 1;
        let layer = &c.0[0];
        let h = tail.head_unfold();
        match h {
            Term::Fun(ref f, ref args)
                if *f == layer.sym && args.len() == layer.arity() =>
            {
                let hole = layer.before.len();
                let sides_match = layer
                    .before
                    .iter()
                    .enumerate()
                    .all(|(i, t)| term_eq(t, &args[i]))
                    && layer
                        .after
                        .iter()
                        .enumerate()
                        .all(|(i, t)| term_eq(t, &args[hole + 1 + i]));
                if sides_match {
                    a.base += 1;
                    tail = args[hole].clone();
                } else {
                    break;
                }
            }
            _ => break,
        }
    }
    Some((merged, tail))
}

fn spine_eq(a: &(Vec<(Ctx1, Affine)>, Term), b: &(Vec<(Ctx1, Affine)>, Term)) -> bool {
    a.0.len() == b.0.len()
        && a.0
            .iter()
            .zip(b.0.iter())
            .all(|((c1, a1), (c2, a2))| c1.same_shape(c2) && a1 == a2)
        && term_eq(&a.1, &b.1)
}

/// Reduction-identity normal form: the top-level composition chain is
/// right-nested with object-term components removed. Arguments of function
/// and rule nodes are left untouched.
pub fn normalize(trs: &Trs, pt: &ProofTerm) -> ProofTerm {
    let original_src = src(trs, pt);
    let mut parts: Vec<ProofTerm> = Vec::new();
    flatten(pt, &mut parts);
    let kept: Vec<ProofTerm> = parts
        .into_iter()
        .filter(|p| !p.is_object())
        .map(|p| match p {
            // an omega composition of object terms denotes the empty
            // reduction; it normalizes to its source below when alone
            other => other,
        })
        .collect();
    let kept: Vec<ProofTerm> = kept
        .into_iter()
        .filter(|p| match p {
            ProofTerm::Omega(o) => body_has_rule(&o.body),
            _ => true,
        })
        .collect();
    if kept.is_empty() {
        return ProofTerm::Multi(original_src);
    }
    rebuild_chain(kept)
}

pub fn flatten(pt: &ProofTerm, out: &mut Vec<ProofTerm>) {
    match pt {
        ProofTerm::Comp(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
        other => out.push(other.clone()),
    }
}

pub fn rebuild_chain(parts: Vec<ProofTerm>) -> ProofTerm {
    let mut it = parts.into_iter().rev();
    let mut cur = it.next().expect("nonempty chain");
    for p in it {
        cur = ProofTerm::comp(p, cur);
    }
    cur
}

/// The head rule symbol with argument proof terms, when the proof term is
/// a rule application (unfolding rec-multisteps at the head).
pub fn rule_headed(pt: &ProofTerm) -> Option<(String, Vec<ProofTerm>)> {
    match pt {
        ProofTerm::Rule(r, kids) => Some((r.clone(), kids.clone())),
        ProofTerm::Multi(t) => match t.head_unfold() {
            Term::Rule(r, args) => {
                Some((r, args.into_iter().map(ProofTerm::Multi).collect()))
            }
            _ => None,
        },
        _ => None,
    }
}

/// Head function symbol with arguments, for multisteps and function nodes.
pub fn fun_headed(pt: &ProofTerm) -> Option<(String, Vec<ProofTerm>)> {
    match pt {
        ProofTerm::Fun(f, kids) => Some((f.clone(), kids.clone())),
        ProofTerm::Multi(t) => match t.head_unfold() {
            Term::Fun(f, args) => {
                Some((f, args.into_iter().map(ProofTerm::Multi).collect()))
            }
            _ => None,
        },
        _ => None,
    }
}

/// A proof term "includes head steps" when it is rule-headed, or it is a
/// composition some component of which includes head steps.
pub fn includes_head_steps(pt: &ProofTerm) -> bool {
    match pt {
        ProofTerm::Rule(_, _) => true,
        ProofTerm::Multi(t) => matches!(t.head_unfold(), Term::Rule(_, _)),
        ProofTerm::Fun(_, _) => false,
        ProofTerm::Comp(a, b) => includes_head_steps(a) || includes_head_steps(b),
        ProofTerm::Omega(o) => schema_includes_head_steps(&o.body),
        ProofTerm::Pending(_) => false,
    }
}

fn schema_includes_head_steps(body: &SchemaTerm) -> bool {
    match body {
        SchemaTerm::Multi(t) => matches!(t.head_unfold(), Term::Rule(_, _)),
        SchemaTerm::Rule(_, _) => true,
        SchemaTerm::Fun(_, _) => false,
        SchemaTerm::Comp(a, b) => {
            schema_includes_head_steps(a) || schema_includes_head_steps(b)
        }
        SchemaTerm::Power(_, aff, inner) => {
            // the component at index 0 is bare when the exponent base is 0
            aff.base == 0 && schema_includes_head_steps(inner)
        }
    }
}

/// Exposes one function layer `f` uniformly across all components of a
/// schema body, returning per-argument bodies.
pub fn schema_expose(trs: &Trs, body: &SchemaTerm, f: &str) -> Option<Vec<SchemaTerm>> {
    match body {
        SchemaTerm::Multi(t) => match t.head_unfold() {
            Term::Fun(g, args) if g == f => {
                Some(args.into_iter().map(SchemaTerm::Multi).collect())
            }
            _ => None,
        },
        SchemaTerm::Fun(g, kids) if g == f => Some(kids.clone()),
        SchemaTerm::Fun(_, _) | SchemaTerm::Rule(_, _) => None,
        SchemaTerm::Comp(a, b) => {
            let ea = schema_expose(trs, a, f)?;
            let eb = schema_expose(trs, b, f)?;
            if ea.len() != eb.len() {
                return None;
            }
            Some(
                ea.into_iter()
                    .zip(eb)
                    .map(|(x, y)| SchemaTerm::comp(x, y))
                    .collect(),
            )
        }
        SchemaTerm::Power(c, aff, inner) => {
            if aff.base == 0 {
                return None;
            }
            let first = &c.0[0];
            if first.sym != f {
                return None;
            }
            let rest = Ctx1(c.0[1..].to_vec());
            let core = SchemaTerm::Power(
                c.clone(),
                Affine::new(aff.coef, aff.base - 1),
                inner.clone(),
            );
            let hole_body = wrap_layers(&rest, core);
            let mut kids: Vec<SchemaTerm> = first
                .before
                .iter()
                .map(|t| SchemaTerm::Multi(t.clone()))
                .collect();
            kids.push(hole_body);
            kids.extend(first.after.iter().map(|t| SchemaTerm::Multi(t.clone())));
            Some(kids)
        }
    }
}

fn wrap_layers(ctx: &Ctx1, inner: SchemaTerm) -> SchemaTerm {
    let mut cur = inner;
    for layer in ctx.0.iter().rev() {
        cur = SchemaTerm::layer_apply(layer, cur);
    }
    cur
}

/// Structural-definitional equality: multisteps compare by bisimulation,
/// omega compositions unfold against binary compositions as needed, and
/// collapsed/uncollapsed node forms are identified.
pub fn defeq(trs: &Trs, a: &ProofTerm, b: &ProofTerm) -> bool {
    defeq_fuel(trs, a, b, 64)
}

fn defeq_fuel(trs: &Trs, a: &ProofTerm, b: &ProofTerm, fuel: u32) -> bool {
    match (a, b) {
        (ProofTerm::Multi(s), ProofTerm::Multi(t)) => term_eq(s, t),
        (ProofTerm::Pending(x), ProofTerm::Pending(y)) => x == y,
        (ProofTerm::Fun(f, xs), ProofTerm::Fun(g, ys))
        | (ProofTerm::Rule(f, xs), ProofTerm::Rule(g, ys)) => {
            f == g
                && xs.len() == ys.len()
                && xs
                    .iter()
                    .zip(ys.iter())
                    .all(|(x, y)| defeq_fuel(trs, x, y, fuel))
        }
        (ProofTerm::Comp(a1, a2), ProofTerm::Comp(b1, b2)) => {
            defeq_fuel(trs, a1, b1, fuel) && defeq_fuel(trs, a2, b2, fuel)
        }
        (ProofTerm::Omega(x), ProofTerm::Omega(y)) => {
            schema_eq(&x.body, &y.body)
                || (fuel > 0
                    && defeq_fuel(trs, &omega_unfold(x), &omega_unfold(y), fuel - 1))
        }
        (ProofTerm::Omega(o), ProofTerm::Comp(_, _)) => {
            fuel > 0 && defeq_fuel(trs, &omega_unfold(o), b, fuel - 1)
        }
        (ProofTerm::Comp(_, _), ProofTerm::Omega(o)) => {
            fuel > 0 && defeq_fuel(trs, a, &omega_unfold(o), fuel - 1)
        }
        (ProofTerm::Multi(t), ProofTerm::Fun(_, _))
        | (ProofTerm::Multi(t), ProofTerm::Rule(_, _)) => match decompose_multi(t) {
            Some(d) => defeq_fuel(trs, &d, b, fuel),
            None => false,
        },
        (ProofTerm::Fun(_, _), ProofTerm::Multi(t))
        | (ProofTerm::Rule(_, _), ProofTerm::Multi(t)) => match decompose_multi(t) {
            Some(d) => defeq_fuel(trs, a, &d, fuel),
            None => false,
        },
        _ => false,
    }
}

/// One definitional unfolding of an omega composition.
pub fn omega_unfold(o: &OmegaSchema) -> ProofTerm {
    ProofTerm::comp(o.component(0), ProofTerm::Omega(o.shifted(1)))
}

/// Exposes the head node of a multistep as an uncollapsed proof-term node.
pub fn decompose_multi(t: &Term) -> Option<ProofTerm> {
    match t.head_unfold() {
        Term::Fun(f, args) => Some(ProofTerm::Fun(
            f,
            args.into_iter().map(ProofTerm::Multi).collect(),
        )),
        Term::Rule(r, args) => Some(ProofTerm::Rule(
            r,
            args.into_iter().map(ProofTerm::Multi).collect(),
        )),
        _ => None,
    }
}

/// Syntactic schema equality modulo index-variable naming.
pub fn schema_eq(a: &SchemaTerm, b: &SchemaTerm) -> bool {
    match (a, b) {
        (SchemaTerm::Multi(s), SchemaTerm::Multi(t)) => term_eq(s, t),
        (SchemaTerm::Fun(f, xs), SchemaTerm::Fun(g, ys))
        | (SchemaTerm::Rule(f, xs), SchemaTerm::Rule(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| schema_eq(x, y))
        }
        (SchemaTerm::Comp(a1, a2), SchemaTerm::Comp(b1, b2)) => {
            schema_eq(a1, b1) && schema_eq(a2, b2)
        }
        (SchemaTerm::Power(c1, e1, i1), SchemaTerm::Power(c2, e2, i2)) => {
            c1.same_shape(c2) && e1 == e2 && schema_eq(i1, i2)
        }
        (SchemaTerm::Multi(t), other) | (other, SchemaTerm::Multi(t)) => {
            match t.head_unfold() {
                Term::Fun(f, args) => schema_eq(
                    &SchemaTerm::Fun(f, args.into_iter().map(SchemaTerm::Multi).collect()),
                    other,
                ),
                Term::Rule(r, args) => schema_eq(
                    &SchemaTerm::Rule(r, args.into_iter().map(SchemaTerm::Multi).collect()),
                    other,
                ),
                _ => false,
            }
        }
        _ => false,
    }
}

/// Equality modulo reduction identities: both sides normalized, then
/// compared structurally with bisimulation at multistep leaves.
pub fn eq_mod_rid(trs: &Trs, a: &ProofTerm, b: &ProofTerm) -> bool {
    fn strict(trs: &Trs, a: &ProofTerm, b: &ProofTerm) -> bool {
        match (a, b) {
            (ProofTerm::Multi(s), ProofTerm::Multi(t)) => term_eq(s, t),
            (ProofTerm::Fun(f, xs), ProofTerm::Fun(g, ys))
            | (ProofTerm::Rule(f, xs), ProofTerm::Rule(g, ys)) => {
                f == g
                    && xs.len() == ys.len()
                    && xs.iter().zip(ys).all(|(x, y)| strict(trs, x, y))
            }
            (ProofTerm::Comp(a1, a2), ProofTerm::Comp(b1, b2)) => {
                strict(trs, a1, b1) && strict(trs, a2, b2)
            }
            (ProofTerm::Omega(x), ProofTerm::Omega(y)) => schema_eq(&x.body, &y.body),
            (ProofTerm::Multi(t), ProofTerm::Fun(_, _))
            | (ProofTerm::Multi(t), ProofTerm::Rule(_, _)) => match decompose_multi(t) {
                Some(d) => strict(trs, &d, b),
                None => false,
            },
            (ProofTerm::Fun(_, _), ProofTerm::Multi(t))
            | (ProofTerm::Rule(_, _), ProofTerm::Multi(t)) => match decompose_multi(t) {
                Some(d) => strict(trs, a, &d),
                None => false,
            },
            (ProofTerm::Pending(x), ProofTerm::Pending(y)) => x == y,
            _ => false,
        }
    }
    strict(trs, &normalize(trs, a), &normalize(trs, b))
}

/// Navigates to the node at `at` and rewrites it. Positions address the
/// proof-term AST: composition children are 1 and 2, symbol arguments are
/// 1-based; descending into an omega composition materializes one
/// definitional unfolding, so component `j` sits at `2^j · 1`.
pub fn rewrite_at<E>(
    pt: &ProofTerm,
    at: &Position,
    f: &mut dyn FnMut(&ProofTerm) -> Result<ProofTerm, E>,
) -> Result<ProofTerm, Option<E>> {
    fn go<E>(
        pt: &ProofTerm,
        steps: &[u32],
        f: &mut dyn FnMut(&ProofTerm) -> Result<ProofTerm, E>,
    ) -> Result<ProofTerm, Option<E>> {
        if steps.is_empty() {
            return f(pt).map_err(Some);
        }
        let i = steps[0] as usize;
        match pt {
            ProofTerm::Fun(name, kids) => {
                if i == 0 || i > kids.len() {
                    return Err(None);
                }
                let mut kids = kids.clone();
                kids[i - 1] = go(&kids[i - 1], &steps[1..], f)?;
                Ok(pt_fun(name, kids))
            }
            ProofTerm::Rule(name, kids) => {
                if i == 0 || i > kids.len() {
                    return Err(None);
                }
                let mut kids = kids.clone();
                kids[i - 1] = go(&kids[i - 1], &steps[1..], f)?;
                Ok(pt_rule(name, kids))
            }
            ProofTerm::Comp(a, b) => match i {
                1 => Ok(ProofTerm::comp(go(a, &steps[1..], f)?, (**b).clone())),
                2 => Ok(ProofTerm::comp((**a).clone(), go(b, &steps[1..], f)?)),
                _ => Err(None),
            },
            ProofTerm::Multi(t) => {
                let d = decompose_multi(t).ok_or(None)?;
                go(&d, steps, f)
            }
            ProofTerm::Omega(o) => {
                let unfolded = omega_unfold(o);
                go(&unfolded, steps, f)
            }
            ProofTerm::Pending(_) => Err(None),
        }
    }
    go(pt, &at.0, f)
}

/// Read-only lookup of the node at a position.
pub fn node_at(pt: &ProofTerm, at: &Position) -> Option<ProofTerm> {
    let mut found = None;
    let r: Result<ProofTerm, Option<()>> = rewrite_at(pt, at, &mut |node| {
        found = Some(node.clone());
        Ok::<ProofTerm, ()>(node.clone())
    });
    r.ok()?;
    found
}

/// Builds a stepwise proof term from consecutive one-steps.
pub fn stepwise(
    trs: &Trs,
    steps: &[ProofTerm],
    declared_src: Option<Term>,
) -> Result<ProofTerm, StepwiseError> {
    if steps.is_empty() {
        let t = declared_src.ok_or(StepwiseError::EmptyWithoutSource)?;
        return Ok(ProofTerm::Multi(t));
    }
    for (i, s) in steps.iter().enumerate() {
        if s.rule_count() != Some(1) {
            return Err(StepwiseError::NotOneStep(i));
        }
    }
    for i in 0..steps.len() - 1 {
        let t = tgt(trs, &steps[i]).map_err(|_| StepwiseError::NotComposable(i))?;
        if !term_eq(&t, &src(trs, &steps[i + 1])) {
            return Err(StepwiseError::NotComposable(i));
        }
    }
    Ok(rebuild_chain(steps.to_vec()))
}

/// An omega composition of one-steps, checked componentwise on the schema.
pub fn stepwise_omega(trs: &Trs, o: &OmegaSchema) -> Result<ProofTerm, StepwiseError> {
    for i in 0..3 {
        if o.component(i).rule_count() != Some(1) {
            return Err(StepwiseError::NotOneStep(i as usize));
        }
    }
    if check_schema_chain(trs, o).is_err() {
        return Err(StepwiseError::NotComposable(0));
    }
    Ok(ProofTerm::Omega(o.clone()))
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum StepwiseError {
    #[error("step {0} is not a one-step")]
    NotOneStep(usize),
    #[error("steps {0} and {} do not compose", .0 + 1)]
    NotComposable(usize),
    #[error("an empty reduction needs a declared source term")]
    EmptyWithoutSource,
}

impl fmt::Display for ProofTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn prec(pt: &ProofTerm, f: &mut fmt::Formatter<'_>, at_comp: bool) -> fmt::Result {
            match pt {
                ProofTerm::Multi(t) => write!(f, "{}", t),
                ProofTerm::Fun(name, kids) | ProofTerm::Rule(name, kids) => {
                    write!(f, "{}(", name)?;
                    for (i, k) in kids.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        prec(k, f, false)?;
                    }
                    write!(f, ")")
                }
                ProofTerm::Comp(a, b) => {
                    if at_comp {
                        write!(f, "(")?;
                    }
                    match **a {
                        ProofTerm::Comp(_, _) | ProofTerm::Omega(_) => {
                            write!(f, "(")?;
                            prec(a, f, false)?;
                            write!(f, ")")?;
                        }
                        _ => prec(a, f, true)?,
                    }
                    write!(f, " . ")?;
                    prec(b, f, false)?;
                    if at_comp {
                        write!(f, ")")?;
                    }
                    Ok(())
                }
                ProofTerm::Omega(o) => {
                    if at_comp {
                        write!(f, "(")?;
                    }
                    write!(f, "comp {}. ", o.var)?;
                    write_schema(&o.body, f)?;
                    if at_comp {
                        write!(f, ")")?;
                    }
                    Ok(())
                }
                ProofTerm::Pending(id) => write!(f, "<pending:{}>", id),
            }
        }
        prec(self, f, false)
    }
}

fn write_schema(body: &SchemaTerm, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match body {
        SchemaTerm::Multi(t) => write!(f, "{}", t),
        SchemaTerm::Fun(name, kids) | SchemaTerm::Rule(name, kids) => {
            write!(f, "{}(", name)?;
            for (i, k) in kids.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write_schema(k, f)?;
            }
            write!(f, ")")
        }
        SchemaTerm::Comp(a, b) => {
            match **a {
                SchemaTerm::Comp(_, _) => {
                    write!(f, "(")?;
                    write_schema(a, f)?;
                    write!(f, ")")?;
                }
                _ => write_schema(a, f)?,
            }
            write!(f, " . ")?;
            write_schema(b, f)
        }
        SchemaTerm::Power(c, aff, inner) => {
            if c.0.len() == 1 && c.0[0].before.is_empty() && c.0[0].after.is_empty() {
                write!(f, "{}^{{{}}}(", c.0[0].sym, aff)?;
            } else {
                write!(f, "(")?;
                let rendered = c.apply_term(Term::Var("[]".into()));
                write!(f, "{}", rendered)?;
                write!(f, ")^{{{}}}(", aff)?;
            }
            write_schema(inner, f)?;
            write!(f, ")")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::Term;

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
        trs.register_symbol("a", 0).unwrap();
        trs.register_symbol("m", 1).unwrap();
        trs
    }

    fn f_omega() -> Term {
        Term::rec("X", Term::fun("f", vec![Term::RecVar("X".into())]))
    }

    fn g_omega() -> Term {
        Term::rec("X", Term::fun("g", vec![Term::RecVar("X".into())]))
    }

    fn gi_mu_fomega() -> OmegaSchema {
        OmegaSchema::new(
            "i",
            SchemaTerm::power(
                Ctx1::unary("g"),
                Affine::new(1, 0),
                SchemaTerm::Multi(Term::rule("mu", vec![f_omega()])),
            ),
        )
    }

    #[test]
    fn src_tgt_of_simple_step() {
        let trs = demo_trs();
        let step = ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")]));
        assert_eq!(src(&trs, &step), Term::fun("f", vec![Term::cst("a")]));
        assert_eq!(
            tgt(&trs, &step).unwrap(),
            Term::fun("g", vec![Term::cst("a")])
        );
    }

    #[test]
    fn src_of_rec_multistep() {
        let trs = demo_trs();
        let mu_omega = ProofTerm::Multi(Term::rec(
            "X",
            Term::rule("mu", vec![Term::RecVar("X".into())]),
        ));
        assert!(term_eq(&src(&trs, &mu_omega), &f_omega()));
        assert!(term_eq(&tgt(&trs, &mu_omega).unwrap(), &g_omega()));
    }

    #[test]
    fn src_of_composition() {
        let trs = demo_trs();
        // f(nu(a)) . mu(k(a)) : f(g(a)) -> g(k(a))
        let pt = ProofTerm::comp(
            ProofTerm::Multi(Term::fun("f", vec![Term::rule("nu", vec![Term::cst("a")])])),
            ProofTerm::Multi(Term::rule(
                "mu",
                vec![Term::fun("k", vec![Term::cst("a")])],
            )),
        );
        assert_eq!(
            src(&trs, &pt),
            Term::fun("f", vec![Term::fun("g", vec![Term::cst("a")])])
        );
        assert_eq!(
            tgt(&trs, &pt).unwrap(),
            Term::fun("g", vec![Term::fun("k", vec![Term::cst("a")])])
        );
        assert!(validate(&trs, &pt).is_empty());
    }

    #[test]
    fn invalid_composition_reported() {
        let trs = demo_trs();
        let bad = ProofTerm::comp(
            ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
            ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
        );
        let violations = validate(&trs, &bad);
        assert!(violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::NotComposable { .. })));
    }

    #[test]
    fn mind_examples() {
        let trs = demo_trs();
        let _ = &trs;
        // f(mu(a)) . mu(g(a)) has a root step
        let a = ProofTerm::comp(
            ProofTerm::Multi(Term::fun("f", vec![Term::rule("mu", vec![Term::cst("a")])])),
            ProofTerm::Multi(Term::rule(
                "mu",
                vec![Term::fun("g", vec![Term::cst("a")])],
            )),
        );
        assert_eq!(mind(&a), Depth::Finite(0));
        let b = ProofTerm::comp(
            ProofTerm::Multi(Term::fun(
                "m",
                vec![Term::fun("f", vec![Term::rule("mu", vec![Term::cst("a")])])],
            )),
            ProofTerm::Multi(Term::fun(
                "m",
                vec![Term::rule("mu", vec![Term::fun("g", vec![Term::cst("a")])])],
            )),
        );
        assert_eq!(mind(&b), Depth::Finite(1));
        assert_eq!(
            mind(&ProofTerm::Multi(Term::fun("g", vec![Term::cst("a")]))),
            Depth::Infinite
        );
    }

    #[test]
    fn omega_validates_and_converges() {
        let trs = demo_trs();
        let omega = ProofTerm::Omega(gi_mu_fomega());
        assert!(validate(&trs, &omega).is_empty());
        let cert = is_convergent(&trs, &omega);
        assert_eq!(cert.verdict, Verdict::Convergent);
        assert_eq!(cert.witness_index(0), Some(1));
        assert_eq!(cert.witness_index(5), Some(6));
    }

    #[test]
    fn constant_schema_diverges() {
        let trs = demo_trs();
        let o = OmegaSchema::new(
            "i",
            SchemaTerm::Multi(Term::rule("mu", vec![f_omega()])),
        );
        // every component repeats the same root step
        let cert = is_convergent(&trs, &ProofTerm::Omega(o));
        assert_eq!(cert.verdict, Verdict::Divergent);
    }

    #[test]
    fn limit_detects_g_omega() {
        let trs = demo_trs();
        let lim = limit_of_targets(&trs, &gi_mu_fomega(), 8).unwrap();
        assert!(lim.rational);
        assert!(term_eq(&lim.term, &g_omega()));
        let via_tgt = tgt(&trs, &ProofTerm::Omega(gi_mu_fomega())).unwrap();
        assert!(term_eq(&via_tgt, &g_omega()));
    }

    #[test]
    fn limit_of_constant_targets() {
        let trs = demo_trs();
        // components m^i-deep: mu(a) under growing prefix has target g(a) under it;
        // a constant family instead: every component the same identity-free step
        // at growing depth over a FIXED spine converges to the fixed tree.
        let o = OmegaSchema::new(
            "i",
            SchemaTerm::power(
                Ctx1::unary("m"),
                Affine::new(1, 0),
                SchemaTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
            ),
        );
        // this family is not chained (sources differ), but the limit machinery
        // only needs convergence of depths; chain validity is checked separately
        let lim = limit_of_targets(&trs, &o, 8).unwrap();
        assert_eq!(lim.certified_depth, 8);
        assert!(!lim.term.is_object() || lim.term.is_object());
    }

    #[test]
    fn expand_schema_instances() {
        let o = gi_mu_fomega();
        let i0 = o.component(0);
        assert!(matches!(i0, ProofTerm::Multi(_)));
        let i2 = o.component(2);
        let expect = Term::fun(
            "g",
            vec![Term::fun("g", vec![Term::rule("mu", vec![f_omega()])])],
        );
        match i2 {
            ProofTerm::Multi(t) => assert!(term_eq(&t, &expect)),
            other => panic!("expected multistep, got {}", other),
        }
    }

    #[test]
    fn chaining_is_symbolic_for_affine_spines() {
        let trs = demo_trs();
        assert_eq!(
            check_schema_chain(&trs, &gi_mu_fomega()),
            Ok(ChainEvidence::Symbolic)
        );
    }

    #[test]
    fn collapsing_tower_target_undefined() {
        let mut trs = Trs::new();
        trs.add_rule(
            "kappa",
            Term::fun("i", vec![Term::var("x")]),
            Term::var("x"),
        )
        .unwrap();
        let tower = ProofTerm::Multi(Term::rec(
            "X",
            Term::rule("kappa", vec![Term::RecVar("X".into())]),
        ));
        assert!(matches!(
            tgt(&trs, &tower),
            Err(TgtUndefined::CollapsingTower(_))
        ));
    }

    #[test]
    fn normalize_drops_object_components() {
        let trs = demo_trs();
        let pt = ProofTerm::comp(
            ProofTerm::Multi(Term::fun("f", vec![Term::cst("a")])),
            ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
        );
        let n = normalize(&trs, &pt);
        assert_eq!(
            n,
            ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")]))
        );
        // right-nesting
        let abc = ProofTerm::comp(
            ProofTerm::comp(
                ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
                ProofTerm::Multi(Term::rule("nu", vec![Term::cst("a")])),
            ),
            ProofTerm::Multi(Term::fun("k", vec![Term::cst("a")])),
        );
        let n2 = normalize(&trs, &abc);
        match n2 {
            ProofTerm::Comp(a, b) => {
                assert!(matches!(*a, ProofTerm::Multi(_)));
                assert!(matches!(*b, ProofTerm::Multi(_)));
            }
            other => panic!("unexpected {}", other),
        }
    }

    #[test]
    fn normalize_keeps_inner_compositions() {
        let trs = demo_trs();
        // g is not in demo signature as unary?? use m
        let inner = ProofTerm::Fun(
            "m".into(),
            vec![ProofTerm::comp(
                ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
                ProofTerm::Multi(Term::rule(
                    "nu",
                    vec![Term::cst("a")],
                )),
            )],
        );
        let n = normalize(&trs, &inner);
        assert_eq!(n, inner);
    }

    #[test]
    fn defeq_unfolds_omega() {
        let trs = demo_trs();
        let o = gi_mu_fomega();
        let lhs = ProofTerm::Omega(o.clone());
        let rhs = ProofTerm::comp(o.component(0), ProofTerm::Omega(o.shifted(1)));
        assert!(defeq(&trs, &lhs, &rhs));
    }

    #[test]
    fn stepwise_builds_chain() {
        let trs = demo_trs();
        let s1 = ProofTerm::Multi(Term::fun(
            "f",
            vec![Term::rule("nu", vec![Term::cst("a")])],
        ));
        let s2 = ProofTerm::Multi(Term::rule(
            "mu",
            vec![Term::fun("k", vec![Term::cst("a")])],
        ));
        let pt = stepwise(&trs, &[s1, s2], None).unwrap();
        assert!(pt.is_comp());
        let bad = stepwise(
            &trs,
            &[
                ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
                ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")])),
            ],
            None,
        );
        assert!(matches!(bad, Err(StepwiseError::NotComposable(0))));
        let empty = stepwise(&trs, &[], Some(Term::cst("a"))).unwrap();
        assert_eq!(empty, ProofTerm::Multi(Term::cst("a")));
    }
}
