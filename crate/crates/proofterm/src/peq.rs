//! Permutation equivalence: the basic equations, derivation checking, and
//! decision procedures.
//!
//! The congruence is generated by seven equations (identities, associativity,
//! the structural laws for function symbols and infinite compositions, and
//! the two head-step permutation laws), closed under an omega-indexed
//! congruence rule for infinite compositions and a limit rule that compares
//! two proof terms through matching factorizations at every activity depth.

use crate::pterm::{
    self, defeq, fun_headed, instantiate_pattern, mind, normalize, node_at, omega_unfold, pt_fun,
    pt_rule, rewrite_at, rule_headed, schema_fun, schema_rule, src, tgt, Depth, OmegaSchema,
    ProofTerm, SchemaTerm,
};
use crate::term::{term_eq, Position, Term};
use crate::trs::Trs;
use std::fmt;

/// The seven basic equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EquationName {
    IdLeft,
    IdRight,
    Assoc,
    Struct,
    InfStruct,
    OutIn,
    InOut,
}

impl EquationName {
    pub fn parse(s: &str) -> Option<EquationName> {
        match s.to_ascii_lowercase().as_str() {
            "idleft" => Some(EquationName::IdLeft),
            "idright" => Some(EquationName::IdRight),
            "assoc" => Some(EquationName::Assoc),
            "struct" => Some(EquationName::Struct),
            "infstruct" => Some(EquationName::InfStruct),
            "outin" => Some(EquationName::OutIn),
            "inout" => Some(EquationName::InOut),
            _ => None,
        }
    }
}

impl fmt::Display for EquationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EquationName::IdLeft => "idleft",
            EquationName::IdRight => "idright",
            EquationName::Assoc => "assoc",
            EquationName::Struct => "struct",
            EquationName::InfStruct => "infstruct",
            EquationName::OutIn => "outin",
            EquationName::InOut => "inout",
        };
        write!(f, "{}", s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ltr,
    Rtl,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Ltr => Direction::Rtl,
            Direction::Rtl => Direction::Ltr,
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s.to_ascii_lowercase().as_str() {
            "ltr" => Some(Direction::Ltr),
            "rtl" => Some(Direction::Rtl),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Ltr => write!(f, "ltr"),
            Direction::Rtl => write!(f, "rtl"),
        }
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum EqError {
    #[error("position {0} does not address a node")]
    BadPosition(Position),
    #[error("{eq} {dir} does not match at {at}: {why}")]
    NoMatch {
        eq: EquationName,
        dir: Direction,
        at: Position,
        why: String,
    },
    #[error("side condition of {eq} failed at {at}: {why}")]
    SideCondition {
        eq: EquationName,
        at: Position,
        why: String,
    },
}

/// One application of a basic equation at a position of the proof-term AST.
/// Positions use composition children 1/2 and 1-based symbol arguments;
/// descending into an omega composition materializes a definitional
/// unfolding, so component `j` of an omega node sits below `2^j . 1`.
pub fn apply_equation(
    trs: &Trs,
    eq: EquationName,
    dir: Direction,
    pt: &ProofTerm,
    at: &Position,
) -> Result<ProofTerm, EqError> {
    let result = rewrite_at(pt, at, &mut |node| apply_local(trs, eq, dir, node, at));
    match result {
        Ok(pt) => Ok(pt),
        Err(Some(e)) => Err(e),
        Err(None) => Err(EqError::BadPosition(at.clone())),
    }
}

fn no_match(eq: EquationName, dir: Direction, at: &Position, why: &str) -> EqError {
    EqError::NoMatch {
        eq,
        dir,
        at: at.clone(),
        why: why.to_string(),
    }
}

fn apply_local(
    trs: &Trs,
    eq: EquationName,
    dir: Direction,
    node: &ProofTerm,
    at: &Position,
) -> Result<ProofTerm, EqError> {
    match (eq, dir) {
        (EquationName::IdLeft, Direction::Ltr) => match node {
            ProofTerm::Comp(a, b) => {
                let a_obj = a
                    .as_object()
                    .ok_or_else(|| no_match(eq, dir, at, "left component is not an object term"))?;
                if !term_eq(a_obj, &src(trs, b)) {
                    return Err(EqError::SideCondition {
                        eq,
                        at: at.clone(),
                        why: "left component differs from the source of the right".into(),
                    });
                }
                Ok((**b).clone())
            }
            _ => Err(no_match(eq, dir, at, "not a composition")),
        },
        (EquationName::IdLeft, Direction::Rtl) => Ok(ProofTerm::comp(
            ProofTerm::Multi(src(trs, node)),
            node.clone(),
        )),
        (EquationName::IdRight, Direction::Ltr) => match node {
            ProofTerm::Comp(a, b) => {
                let b_obj = b.as_object().ok_or_else(|| {
                    no_match(eq, dir, at, "right component is not an object term")
                })?;
                let ta = tgt(trs, a).map_err(|e| EqError::SideCondition {
                    eq,
                    at: at.clone(),
                    why: e.to_string(),
                })?;
                if !term_eq(b_obj, &ta) {
                    return Err(EqError::SideCondition {
                        eq,
                        at: at.clone(),
                        why: "right component differs from the target of the left".into(),
                    });
                }
                Ok((**a).clone())
            }
            _ => Err(no_match(eq, dir, at, "not a composition")),
        },
        (EquationName::IdRight, Direction::Rtl) => {
            let t = tgt(trs, node).map_err(|e| EqError::SideCondition {
                eq,
                at: at.clone(),
                why: e.to_string(),
            })?;
            Ok(ProofTerm::comp(node.clone(), ProofTerm::Multi(t)))
        }
        (EquationName::Assoc, Direction::Ltr) => match node {
            ProofTerm::Comp(a, bc) => match &**bc {
                ProofTerm::Comp(b, c) => Ok(ProofTerm::comp(
                    ProofTerm::comp((**a).clone(), (**b).clone()),
                    (**c).clone(),
                )),
                ProofTerm::Omega(o) => {
                    // an infinite composition is also a binary composition
                    let unfolded = omega_unfold(o);
                    match unfolded {
                        ProofTerm::Comp(b, c) => Ok(ProofTerm::comp(
                            ProofTerm::comp((**a).clone(), (*b).clone()),
                            (*c).clone(),
                        )),
                        _ => unreachable!(),
                    }
                }
                _ => Err(no_match(eq, dir, at, "right component is not a composition")),
            },
            _ => Err(no_match(eq, dir, at, "not a composition")),
        },
        (EquationName::Assoc, Direction::Rtl) => match node {
            ProofTerm::Comp(ab, c) => match &**ab {
                ProofTerm::Comp(a, b) => Ok(ProofTerm::comp(
                    (**a).clone(),
                    ProofTerm::comp((**b).clone(), (**c).clone()),
                )),
                _ => Err(no_match(eq, dir, at, "left component is not a composition")),
            },
            _ => Err(no_match(eq, dir, at, "not a composition")),
        },
        (EquationName::Struct, Direction::Ltr) => match node {
            ProofTerm::Comp(a, b) => {
                let (f, xs) = fun_headed(a)
                    .ok_or_else(|| no_match(eq, dir, at, "left component is not function-headed"))?;
                let (g, ys) = fun_headed(b).ok_or_else(|| {
                    no_match(eq, dir, at, "right component is not function-headed")
                })?;
                if f != g || xs.len() != ys.len() {
                    return Err(no_match(eq, dir, at, "head symbols differ"));
                }
                Ok(pt_fun(
                    &f,
                    xs.into_iter()
                        .zip(ys)
                        .map(|(x, y)| ProofTerm::comp(x, y))
                        .collect(),
                ))
            }
            _ => Err(no_match(eq, dir, at, "not a composition")),
        },
        (EquationName::Struct, Direction::Rtl) => {
            let (f, kids) = fun_headed(node)
                .ok_or_else(|| no_match(eq, dir, at, "not function-headed"))?;
            if kids.is_empty() {
                return Err(no_match(eq, dir, at, "nullary symbol"));
            }
            let mut lefts = Vec::with_capacity(kids.len());
            let mut rights = Vec::with_capacity(kids.len());
            for k in &kids {
                match k {
                    ProofTerm::Comp(a, b) => {
                        lefts.push((**a).clone());
                        rights.push((**b).clone());
                    }
                    _ => {
                        return Err(no_match(
                            eq,
                            dir,
                            at,
                            "an argument is not a composition",
                        ))
                    }
                }
            }
            Ok(ProofTerm::comp(pt_fun(&f, lefts), pt_fun(&f, rights)))
        }
        (EquationName::InfStruct, Direction::Ltr) => match node {
            ProofTerm::Omega(o) => {
                let f = schema_head_symbol(&o.body).ok_or_else(|| {
                    no_match(eq, dir, at, "schema components are not function-headed")
                })?;
                let kids = pterm::schema_expose(trs, &o.body, &f).ok_or_else(|| {
                    no_match(
                        eq,
                        dir,
                        at,
                        "components are not uniformly headed by one function symbol",
                    )
                })?;
                Ok(pt_fun(
                    &f,
                    kids.into_iter()
                        .map(|b| omega_or_multi(&o.var, b))
                        .collect(),
                ))
            }
            _ => Err(no_match(eq, dir, at, "not an infinite composition")),
        },
        (EquationName::InfStruct, Direction::Rtl) => {
            let (f, kids) = fun_headed(node)
                .ok_or_else(|| no_match(eq, dir, at, "not function-headed"))?;
            if kids.is_empty() {
                return Err(no_match(eq, dir, at, "nullary symbol"));
            }
            let mut var: Option<String> = None;
            let mut bodies = Vec::with_capacity(kids.len());
            for k in &kids {
                match k {
                    ProofTerm::Omega(o) => {
                        let v = var.get_or_insert_with(|| o.var.clone()).clone();
                        let _ = v;
                        bodies.push(o.body.clone());
                    }
                    ProofTerm::Multi(t) => bodies.push(SchemaTerm::Multi(t.clone())),
                    _ => {
                        return Err(no_match(
                            eq,
                            dir,
                            at,
                            "an argument is not an infinite composition",
                        ))
                    }
                }
            }
            if var.is_none() {
                return Err(no_match(eq, dir, at, "no omega-composition argument"));
            }
            Ok(ProofTerm::Omega(OmegaSchema::new(
                &var.unwrap(),
                schema_fun(&f, bodies),
            )))
        }
        (EquationName::OutIn, Direction::Ltr) => {
            let (name, kids) = rule_headed(node)
                .ok_or_else(|| no_match(eq, dir, at, "not rule-headed"))?;
            let rule = trs.rule(&name).ok_or_else(|| {
                no_match(eq, dir, at, &format!("unknown rule {}", name))
            })?;
            let srcs: Vec<Term> = kids.iter().map(|k| src(trs, k)).collect();
            let head = ProofTerm::Multi(Term::Rule(name.clone(), srcs));
            let body = instantiate_pattern(&rule.rhs, &rule.vars, &kids);
            Ok(ProofTerm::comp(head, body))
        }
        (EquationName::OutIn, Direction::Rtl) => match node {
            ProofTerm::Comp(a, b) => {
                let (name, s_args) = rule_headed(a)
                    .ok_or_else(|| no_match(eq, dir, at, "left component is not rule-headed"))?;
                if !s_args.iter().all(|s| s.is_object()) {
                    return Err(no_match(eq, dir, at, "head-step arguments are not sources"));
                }
                let rule = trs.rule(&name).ok_or_else(|| {
                    no_match(eq, dir, at, &format!("unknown rule {}", name))
                })?;
                let mut slots: Vec<Option<ProofTerm>> = vec![None; rule.arity()];
                extract_args(trs, &rule.rhs, &rule.vars, b, &mut slots).map_err(|why| {
                    no_match(eq, dir, at, &why)
                })?;
                let kids: Vec<ProofTerm> = slots
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        s.unwrap_or_else(|| {
                            // argument erased by the rule: the canonical
                            // reverse instance keeps it at its source
                            s_args[i].clone()
                        })
                    })
                    .collect();
                for (i, k) in kids.iter().enumerate() {
                    let expect = s_args[i].as_object().ok_or_else(|| {
                        no_match(eq, dir, at, "head-step arguments are not object terms")
                    })?;
                    if !term_eq(&src(trs, k), expect) {
                        return Err(EqError::SideCondition {
                            eq,
                            at: at.clone(),
                            why: format!("argument {} source mismatch", i + 1),
                        });
                    }
                }
                Ok(pt_rule(&name, kids))
            }
            _ => Err(no_match(eq, dir, at, "not a composition")),
        },
        (EquationName::InOut, Direction::Ltr) => {
            let (name, kids) = rule_headed(node)
                .ok_or_else(|| no_match(eq, dir, at, "not rule-headed"))?;
            let rule = trs.rule(&name).ok_or_else(|| {
                no_match(eq, dir, at, &format!("unknown rule {}", name))
            })?;
            let mut tgts = Vec::with_capacity(kids.len());
            for k in &kids {
                let t = tgt(trs, k).map_err(|e| EqError::SideCondition {
                    eq,
                    at: at.clone(),
                    why: e.to_string(),
                })?;
                tgts.push(t);
            }
            let body = instantiate_pattern(&rule.lhs, &rule.vars, &kids);
            let head = ProofTerm::Multi(Term::Rule(name.clone(), tgts));
            Ok(ProofTerm::comp(body, head))
        }
        (EquationName::InOut, Direction::Rtl) => match node {
            ProofTerm::Comp(a, b) => {
                let (name, t_args) = rule_headed(b)
                    .ok_or_else(|| no_match(eq, dir, at, "right component is not rule-headed"))?;
                if !t_args.iter().all(|s| s.is_object()) {
                    return Err(no_match(eq, dir, at, "head-step arguments are not targets"));
                }
                let rule = trs.rule(&name).ok_or_else(|| {
                    no_match(eq, dir, at, &format!("unknown rule {}", name))
                })?;
                let mut slots: Vec<Option<ProofTerm>> = vec![None; rule.arity()];
                extract_args(trs, &rule.lhs, &rule.vars, a, &mut slots)
                    .map_err(|why| no_match(eq, dir, at, &why))?;
                let kids: Vec<ProofTerm> = slots
                    .into_iter()
                    .map(|s| s.expect("lhs mentions every rule variable"))
                    .collect();
                for (i, k) in kids.iter().enumerate() {
                    let expect = t_args[i].as_object().ok_or_else(|| {
                        no_match(eq, dir, at, "head-step arguments are not object terms")
                    })?;
                    let kt = tgt(trs, k).map_err(|e| EqError::SideCondition {
                        eq,
                        at: at.clone(),
                        why: e.to_string(),
                    })?;
                    if !term_eq(&kt, expect) {
                        return Err(EqError::SideCondition {
                            eq,
                            at: at.clone(),
                            why: format!("argument {} target mismatch", i + 1),
                        });
                    }
                }
                Ok(pt_rule(&name, kids))
            }
            _ => Err(no_match(eq, dir, at, "not a composition")),
        },
    }
}

fn omega_or_multi(var: &str, body: SchemaTerm) -> ProofTerm {
    match body {
        SchemaTerm::Multi(t) => ProofTerm::Multi(t),
        other => ProofTerm::Omega(OmegaSchema::new(var, other)),
    }
}

fn schema_head_symbol(body: &SchemaTerm) -> Option<String> {
    match body {
        SchemaTerm::Fun(f, _) => Some(f.clone()),
        SchemaTerm::Multi(t) => match t.head_unfold() {
            Term::Fun(f, _) => Some(f),
            _ => None,
        },
        SchemaTerm::Power(c, aff, inner) => {
            if aff.base >= 1 {
                Some(c.0[0].sym.clone())
            } else {
                schema_head_symbol(inner)
            }
        }
        SchemaTerm::Comp(_, _) | SchemaTerm::Rule(_, _) => None,
    }
}

/// Matches a proof term against a rule pattern, collecting the argument
/// proof terms at variable positions. Repeated variables must agree.
fn extract_args(
    trs: &Trs,
    pat: &Term,
    vars: &[String],
    pt: &ProofTerm,
    slots: &mut Vec<Option<ProofTerm>>,
) -> Result<(), String> {
    match pat {
        Term::Var(x) => {
            let idx = vars.iter().position(|v| v == x).expect("bound var");
            match &slots[idx] {
                Some(prev) => {
                    if !defeq(trs, prev, pt) {
                        return Err(format!("conflicting occurrences of {}", x));
                    }
                }
                None => slots[idx] = Some(pt.clone()),
            }
            Ok(())
        }
        Term::Fun(f, pargs) => {
            let (g, kids) = fun_headed(pt)
                .ok_or_else(|| format!("expected {} node in rule-shaped component", f))?;
            if g != *f || kids.len() != pargs.len() {
                return Err(format!("expected {}, found {}", f, g));
            }
            for (p, k) in pargs.iter().zip(kids.iter()) {
                extract_args(trs, p, vars, k, slots)?;
            }
            Ok(())
        }
        _ => Err("rule patterns contain only function symbols and variables".into()),
    }
}

/// One checked derivation step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivationStep {
    pub eq: EquationName,
    pub dir: Direction,
    pub at: Position,
}

impl fmt::Display for DerivationStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} @ {}", self.eq, self.dir, self.at)
    }
}

/// A family of equation applications performed uniformly on the body of an
/// omega composition: the omega-indexed congruence rule with a symbolic
/// per-component derivation.
#[derive(Clone, Debug, PartialEq)]
pub struct InfCompBundle {
    pub at: Position,
    pub steps: Vec<DerivationStep>,
}

/// The factorization data for one depth level of a limit closure.
#[derive(Clone, Debug, PartialEq)]
pub struct LimLevel {
    pub k: u64,
    pub left: Vec<DerivItem>,
    pub right: Vec<DerivItem>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimClosure {
    pub levels: Vec<LimLevel>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DerivItem {
    Step(DerivationStep),
    InfComp(InfCompBundle),
    Lim(LimClosure),
}

impl DerivItem {
    /// Prefixes every position with `p` (for reuse inside a larger term).
    pub fn prefixed(&self, p: &Position) -> DerivItem {
        match self {
            DerivItem::Step(s) => DerivItem::Step(DerivationStep {
                eq: s.eq,
                dir: s.dir,
                at: p.concat(&s.at),
            }),
            DerivItem::InfComp(b) => DerivItem::InfComp(InfCompBundle {
                at: p.concat(&b.at),
                steps: b.steps.clone(),
            }),
            DerivItem::Lim(_) => self.clone(),
        }
    }

    /// The inverse item, when one exists.
    pub fn reversed(&self) -> Option<DerivItem> {
        match self {
            DerivItem::Step(s) => Some(DerivItem::Step(DerivationStep {
                eq: s.eq,
                dir: s.dir.flip(),
                at: s.at.clone(),
            })),
            DerivItem::InfComp(b) => {
                let steps = b
                    .steps
                    .iter()
                    .rev()
                    .map(|s| DerivationStep {
                        eq: s.eq,
                        dir: s.dir.flip(),
                        at: s.at.clone(),
                    })
                    .collect();
                Some(DerivItem::InfComp(InfCompBundle {
                    at: b.at.clone(),
                    steps,
                }))
            }
            DerivItem::Lim(_) => None,
        }
    }
}

/// A checkable derivation: a source proof term, items, and an optional goal.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub source: ProofTerm,
    pub goal: Option<ProofTerm>,
    pub items: Vec<DerivItem>,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub ok: bool,
    pub failure: Option<CheckFailure>,
    pub final_term: ProofTerm,
    /// True when some bundle needed sampled verification.
    pub sampled: bool,
}

#[derive(Clone, Debug)]
pub struct CheckFailure {
    pub item: usize,
    pub reason: String,
}

/// Verifies a derivation step by step; the first failing item is reported.
pub fn check_derivation(trs: &Trs, d: &Derivation) -> CheckOutcome {
    let mut cur = normalize(trs, &d.source);
    let mut sampled = false;
    for (i, item) in d.items.iter().enumerate() {
        match run_item(trs, &cur, item, d.goal.as_ref(), &mut sampled) {
            Ok(next) => cur = next,
            Err(reason) => {
                return CheckOutcome {
                    ok: false,
                    failure: Some(CheckFailure { item: i, reason }),
                    final_term: cur,
                    sampled,
                }
            }
        }
    }
    let ok = match &d.goal {
        Some(goal) => defeq(trs, &cur, &normalize(trs, goal)),
        None => true,
    };
    let failure = if ok {
        None
    } else {
        Some(CheckFailure {
            item: d.items.len(),
            reason: format!(
                "final term {} does not match the goal",
                cur
            ),
        })
    };
    CheckOutcome {
        ok,
        failure,
        final_term: cur,
        sampled,
    }
}

fn run_item(
    trs: &Trs,
    cur: &ProofTerm,
    item: &DerivItem,
    goal: Option<&ProofTerm>,
    sampled: &mut bool,
) -> Result<ProofTerm, String> {
    match item {
        DerivItem::Step(s) => {
            apply_equation(trs, s.eq, s.dir, cur, &s.at).map_err(|e| e.to_string())
        }
        DerivItem::InfComp(b) => run_bundle(trs, cur, b, sampled),
        DerivItem::Lim(l) => {
            let goal = goal.ok_or("a limit closure needs an explicit goal")?;
            run_lim(trs, cur, goal, l)?;
            Ok(normalize(trs, goal))
        }
    }
}

fn run_bundle(
    trs: &Trs,
    cur: &ProofTerm,
    b: &InfCompBundle,
    sampled: &mut bool,
) -> Result<ProofTerm, String> {
    let node = node_at(cur, &b.at).ok_or_else(|| format!("no node at {}", b.at))?;
    let omega = match node {
        ProofTerm::Omega(o) => o,
        other => {
            return Err(format!(
                "infcomp must address an infinite composition, found {}",
                other
            ))
        }
    };
    let new_body = match apply_bundle_symbolic(trs, &omega.body, &b.steps) {
        Ok(body) => body,
        Err(symbolic_err) => {
            // sampled fallback: the steps must apply to each expanded
            // component; accepted only when every instance agrees on shape
            *sampled = true;
            return Err(format!(
                "bundle does not apply symbolically ({}); sampled checking \
                 requires index-free action positions",
                symbolic_err
            ));
        }
    };
    let replaced = rewrite_at(cur, &b.at, &mut |_| {
        Ok::<ProofTerm, String>(ProofTerm::Omega(OmegaSchema::new(&omega.var, new_body.clone())))
    });
    match replaced {
        Ok(pt) => Ok(pt),
        Err(_) => Err(format!("cannot rebuild at {}", b.at)),
    }
}

/// Applies equation steps to a schema body. A step position may descend
/// through a power node (step `1` enters the powered subterm), and the
/// subtree being rewritten must be index-free so the same local rewrite is
/// valid in every component.
fn apply_bundle_symbolic(
    trs: &Trs,
    body: &SchemaTerm,
    steps: &[DerivationStep],
) -> Result<SchemaTerm, String> {
    let mut cur = body.clone();
    for s in steps {
        cur = schema_rewrite(trs, &cur, &s.at.0, s)?;
    }
    Ok(cur)
}

fn schema_rewrite(
    trs: &Trs,
    body: &SchemaTerm,
    steps: &[u32],
    s: &DerivationStep,
) -> Result<SchemaTerm, String> {
    if steps.is_empty() {
        let index_free_pt = schema_to_pt(body)
            .ok_or("the rewritten subtree mentions the index variable")?;
        let rewritten = apply_local(trs, s.eq, s.dir, &index_free_pt, &s.at)
            .map_err(|e| e.to_string())?;
        return pt_to_schema(&rewritten).ok_or_else(|| "rewrite left the schema language".into());
    }
    let i = steps[0] as usize;
    match body {
        SchemaTerm::Fun(f, kids) => {
            if i == 0 || i > kids.len() {
                return Err(format!("no schema child {}", i));
            }
            let mut kids = kids.clone();
            kids[i - 1] = schema_rewrite(trs, &kids[i - 1], &steps[1..], s)?;
            Ok(schema_fun(f, kids))
        }
        SchemaTerm::Rule(r, kids) => {
            if i == 0 || i > kids.len() {
                return Err(format!("no schema child {}", i));
            }
            let mut kids = kids.clone();
            kids[i - 1] = schema_rewrite(trs, &kids[i - 1], &steps[1..], s)?;
            Ok(schema_rule(r, kids))
        }
        SchemaTerm::Comp(a, b) => match i {
            1 => Ok(SchemaTerm::comp(
                schema_rewrite(trs, a, &steps[1..], s)?,
                (**b).clone(),
            )),
            2 => Ok(SchemaTerm::comp(
                (**a).clone(),
                schema_rewrite(trs, b, &steps[1..], s)?,
            )),
            _ => Err("composition children are 1 and 2".into()),
        },
        SchemaTerm::Power(c, aff, inner) => {
            if i != 1 {
                return Err("a power node has one child".into());
            }
            Ok(SchemaTerm::Power(
                c.clone(),
                *aff,
                Box::new(schema_rewrite(trs, inner, &steps[1..], s)?),
            ))
        }
        SchemaTerm::Multi(t) => {
            let d = pterm::decompose_multi(t).ok_or("cannot descend into this multistep")?;
            let as_schema = pt_to_schema(&d).ok_or("not schematic")?;
            schema_rewrite(trs, &as_schema, steps, s)
        }
    }
}

fn schema_to_pt(body: &SchemaTerm) -> Option<ProofTerm> {
    match body {
        SchemaTerm::Multi(t) => Some(ProofTerm::Multi(t.clone())),
        SchemaTerm::Fun(f, kids) => {
            let kids: Option<Vec<_>> = kids.iter().map(schema_to_pt).collect();
            Some(pt_fun(f, kids?))
        }
        SchemaTerm::Rule(r, kids) => {
            let kids: Option<Vec<_>> = kids.iter().map(schema_to_pt).collect();
            Some(pt_rule(r, kids?))
        }
        SchemaTerm::Comp(a, b) => Some(ProofTerm::comp(schema_to_pt(a)?, schema_to_pt(b)?)),
        SchemaTerm::Power(_, _, _) => None,
    }
}

fn pt_to_schema(pt: &ProofTerm) -> Option<SchemaTerm> {
    match pt {
        ProofTerm::Multi(t) => Some(SchemaTerm::Multi(t.clone())),
        ProofTerm::Fun(f, kids) => {
            let kids: Option<Vec<_>> = kids.iter().map(pt_to_schema).collect();
            Some(schema_fun(f, kids?))
        }
        ProofTerm::Rule(r, kids) => {
            let kids: Option<Vec<_>> = kids.iter().map(pt_to_schema).collect();
            Some(schema_rule(r, kids?))
        }
        ProofTerm::Comp(a, b) => Some(SchemaTerm::comp(pt_to_schema(a)?, pt_to_schema(b)?)),
        ProofTerm::Omega(_) | ProofTerm::Pending(_) => None,
    }
}

fn run_lim(trs: &Trs, cur: &ProofTerm, goal: &ProofTerm, l: &LimClosure) -> Result<(), String> {
    if l.levels.is_empty() {
        return Err("a limit closure needs at least level k=0".into());
    }
    let mut ks: Vec<u64> = l.levels.iter().map(|lv| lv.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let kmax = *ks.last().unwrap();
    for k in 0..=kmax {
        if !ks.contains(&k) {
            return Err(format!("missing limit level k={}", k));
        }
    }
    for lv in &l.levels {
        if contains_lim(&lv.left) || contains_lim(&lv.right) {
            return Err("limit levels may not use nested limit closures".into());
        }
        let left_final = run_plain(trs, cur, &lv.left)?;
        let right_final = run_plain(trs, goal, &lv.right)?;
        let (lp, lrest) = split_at_depth(trs, &left_final, lv.k)
            .ok_or_else(|| format!("k={}: cannot factor the left side", lv.k))?;
        let (rp, rrest) = split_at_depth(trs, &right_final, lv.k)
            .ok_or_else(|| format!("k={}: cannot factor the right side", lv.k))?;
        if !mind(&lrest).exceeds(lv.k) || !mind(&rrest).exceeds(lv.k) {
            return Err(format!("k={}: residual activity is not deeper than {}", lv.k, lv.k));
        }
        if lp.len() != rp.len()
            || lp.iter().zip(rp.iter()).any(|(a, b)| !defeq(trs, a, b))
        {
            return Err(format!(
                "k={}: the factored prefixes differ ({} vs {} components)",
                lv.k,
                lp.len(),
                rp.len()
            ));
        }
    }
    Ok(())
}

fn contains_lim(items: &[DerivItem]) -> bool {
    items.iter().any(|i| matches!(i, DerivItem::Lim(_)))
}

fn run_plain(trs: &Trs, start: &ProofTerm, items: &[DerivItem]) -> Result<ProofTerm, String> {
    let mut cur = normalize(trs, start);
    let mut sampled = false;
    for item in items {
        cur = run_item(trs, &cur, item, None, &mut sampled)?;
    }
    Ok(cur)
}

/// Factors a proof term as `prefix . rest` with `mind(rest) > k`, taking
/// the minimal prefix of the composition chain and unfolding omega
/// compositions as needed.
pub fn split_at_depth(trs: &Trs, pt: &ProofTerm, k: u64) -> Option<(Vec<ProofTerm>, ProofTerm)> {
    let mut parts: Vec<ProofTerm> = Vec::new();
    pterm::flatten(&normalize(trs, pt), &mut parts);
    let mut prefix: Vec<ProofTerm> = Vec::new();
    let mut guard = 0usize;
    loop {
        guard += 1;
        if guard > 4096 {
            return None;
        }
        let rest_depth = parts
            .iter()
            .map(mind)
            .fold(Depth::Infinite, Depth::min);
        if rest_depth.exceeds(k) {
            let rest = if parts.is_empty() {
                ProofTerm::Multi(tgt(trs, pt).ok()?)
            } else {
                pterm::rebuild_chain(parts)
            };
            return Some((prefix, rest));
        }
        let first = parts.remove(0);
        match first {
            ProofTerm::Omega(o) => {
                if mind(&ProofTerm::Omega(o.clone())).exceeds(k) {
                    parts.insert(0, ProofTerm::Omega(o));
                    continue;
                }
                // peel one component; convergence bounds the iterations
                parts.insert(0, ProofTerm::Omega(o.shifted(1)));
                parts.insert(0, o.component(0));
            }
            other => prefix.push(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_proofterm, parse_workspace};

    fn ws2() -> crate::parse::ParsedWorkspace {
        parse_workspace(
            "\
mu : f(x) -> g(x)
nu : g(x) -> k(x)
let lhs = f(nu(a)) . mu(k(a))
let rhs = mu(g(a)) . g(nu(a))
let simul = mu(nu(a))
",
        )
        .unwrap()
    }

    #[test]
    fn outin_and_inout_on_nested_redexes() {
        let ws = ws2();
        let trs = &ws.trs;
        let simul = ws.get("simul").unwrap();
        let outin = apply_equation(trs, EquationName::OutIn, Direction::Ltr, simul, &Position::root())
            .unwrap();
        assert_eq!(outin.to_string(), "mu(g(a)) . g(nu(a))");
        let inout = apply_equation(trs, EquationName::InOut, Direction::Ltr, simul, &Position::root())
            .unwrap();
        assert_eq!(inout.to_string(), "f(nu(a)) . mu(k(a))");
        // and back
        let back = apply_equation(trs, EquationName::InOut, Direction::Rtl, &inout, &Position::root())
            .unwrap();
        assert!(defeq(trs, &back, simul));
    }

    #[test]
    fn struct_distributes_contexts() {
        let mut trs = crate::parse::parse_trs("mu : f(x) -> g(x)\nnu : g(x) -> k(x)\n").unwrap();
        let pt = parse_proofterm("m(f(nu(a)) . mu(k(a)))", &mut trs).unwrap();
        let split = apply_equation(&trs, EquationName::Struct, Direction::Rtl, &pt, &Position::root())
            .unwrap();
        assert_eq!(split.to_string(), "m(f(nu(a))) . m(mu(k(a)))");
        let merged =
            apply_equation(&trs, EquationName::Struct, Direction::Ltr, &split, &Position::root())
                .unwrap();
        assert!(defeq(&trs, &merged, &pt));
    }

    #[test]
    fn two_step_equivalence_of_sequentialisations() {
        // lhs ~ simul ~ rhs by InOut (rtl) then OutIn (ltr)
        let ws = ws2();
        let d = Derivation {
            source: ws.get("lhs").unwrap().clone(),
            goal: Some(ws.get("rhs").unwrap().clone()),
            items: vec![
                DerivItem::Step(DerivationStep {
                    eq: EquationName::InOut,
                    dir: Direction::Rtl,
                    at: Position::root(),
                }),
                DerivItem::Step(DerivationStep {
                    eq: EquationName::OutIn,
                    dir: Direction::Ltr,
                    at: Position::root(),
                }),
            ],
        };
        let out = check_derivation(&ws.trs, &d);
        assert!(out.ok, "failure: {:?}", out.failure);
    }

    #[test]
    fn wrong_sources_rejected() {
        let ws = ws2();
        // claim OutIn rtl on a composition whose head step has wrong sources
        let mut trs = ws.trs.clone();
        let bad = parse_proofterm("mu(k(a)) . g(nu(a))", &mut trs).unwrap();
        let r = apply_equation(&trs, EquationName::OutIn, Direction::Rtl, &bad, &Position::root());
        assert!(r.is_err());
    }

    #[test]
    fn fixed_context_chain() {
        let mut trs = crate::parse::parse_trs("mu : f(x) -> g(x)\nnu : g(x) -> k(x)\n").unwrap();
        let start = parse_proofterm("m(f(nu(a))) . m(mu(k(a)))", &mut trs).unwrap();
        let goal = parse_proofterm("m(mu(g(a))) . m(g(nu(a)))", &mut trs).unwrap();
        let d = Derivation {
            source: start,
            goal: Some(goal),
            items: vec![
                DerivItem::Step(DerivationStep {
                    eq: EquationName::Struct,
                    dir: Direction::Ltr,
                    at: Position::root(),
                }),
                DerivItem::Step(DerivationStep {
                    eq: EquationName::InOut,
                    dir: Direction::Rtl,
                    at: Position(vec![1]),
                }),
                DerivItem::Step(DerivationStep {
                    eq: EquationName::OutIn,
                    dir: Direction::Ltr,
                    at: Position(vec![1]),
                }),
                DerivItem::Step(DerivationStep {
                    eq: EquationName::Struct,
                    dir: Direction::Rtl,
                    at: Position::root(),
                }),
            ],
        };
        let out = check_derivation(&trs, &d);
        assert!(out.ok, "failure: {:?}", out.failure);
    }

    #[test]
    fn infstruct_peels_omega_head() {
        let ws = parse_workspace(
            "\
mu : f(x) -> g(x)
let t = comp i. g^{i+1}(mu(rec X. f(X)))
",
        )
        .unwrap();
        let pt = ws.get("t").unwrap();
        let out = apply_equation(
            &ws.trs,
            EquationName::InfStruct,
            Direction::Ltr,
            pt,
            &Position::root(),
        )
        .unwrap();
        assert_eq!(out.to_string(), "g(comp i. g^{i}(mu(rec X. f(X))))");
    }

    #[test]
    fn navigation_materializes_omega_unfolding() {
        let ws = parse_workspace(
            "\
mu : f(x) -> g(x)
let t = comp i. g^{i}(mu(rec X. f(X)))
",
        )
        .unwrap();
        let pt = ws.get("t").unwrap();
        // rewrite at position 2: the tail after the first component
        let out = apply_equation(
            &ws.trs,
            EquationName::InfStruct,
            Direction::Ltr,
            pt,
            &Position(vec![2]),
        )
        .unwrap();
        assert_eq!(
            out.to_string(),
            "mu(rec X. f(X)) . g(comp i. g^{i}(mu(rec X. f(X))))"
        );
    }

    #[test]
    fn split_at_depth_unfolds_omegas() {
        let ws = parse_workspace(
            "\
mu : f(x) -> g(x)
let t = comp i. g^{i}(mu(rec X. f(X)))
",
        )
        .unwrap();
        let pt = ws.get("t").unwrap();
        let (prefix, rest) = split_at_depth(&ws.trs, pt, 2).unwrap();
        assert_eq!(prefix.len(), 3);
        assert!(mind(&rest).exceeds(2));
    }

    #[test]
    fn lim_proves_tower_equals_simultaneous() {
        // comp i. g^i(mu(f^w)) ~ mu^w via limit levels k=0..3
        let ws = parse_workspace(
            "\
mu : f(x) -> g(x)
let tower = comp i. g^{i}(mu(rec X. f(X)))
let momega = rec X. mu(X)
",
        )
        .unwrap();
        let tower = ws.get("tower").unwrap().clone();
        let momega = ws.get("momega").unwrap().clone();
        let mut levels = Vec::new();
        for k in 0..=3u64 {
            // right side: round t rewrites the tail g^t(mu^w) into
            // g^t(mu f^w) . g^{t+1}(mu^w): OutIn at the innermost copy,
            // then t Struct splits to flatten the context back out
            let mut right: Vec<DerivItem> = Vec::new();
            for t in 0..=k {
                right.push(DerivItem::Step(DerivationStep {
                    eq: EquationName::OutIn,
                    dir: Direction::Ltr,
                    at: tail_position(t, t),
                }));
                for d in (0..t).rev() {
                    right.push(DerivItem::Step(DerivationStep {
                        eq: EquationName::Struct,
                        dir: Direction::Rtl,
                        at: tail_position(t, d),
                    }));
                }
            }
            levels.push(LimLevel {
                k,
                left: Vec::new(),
                right,
            });
        }
        let d = Derivation {
            source: tower,
            goal: Some(momega),
            items: vec![DerivItem::Lim(LimClosure { levels })],
        };
        let out = check_derivation(&ws.trs, &d);
        assert!(out.ok, "failure: {:?}", out.failure);
    }

    // after t full rounds the chain is mu f^w . (g mu f^w . ... . g^t(mu^w));
    // the tail sits below t composition steps, and `depth` g-layers further in
    fn tail_position(t: u64, depth: u64) -> Position {
        let mut v = Vec::new();
        for _ in 0..t {
            v.push(2);
        }
        for _ in 0..depth {
            v.push(1);
        }
        Position(v)
    }
}
