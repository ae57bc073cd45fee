//! Projection of one reduction over another, as an operation on proof
//! terms given by ordered clauses.
//!
//! The clauses, tried in order on reduction-identity-normalized operands:
//!
//! 1. identities: an object operand equal to the other side's source;
//! 2. equal rule heads project componentwise into the rule's rhs;
//! 3. a rule head on the left over a divisor with the lhs pattern as a
//!    fixed prefix;
//! 4. symmetrically, a divisor rule head over a pattern-prefixed left;
//! 5. a composition with head steps on the left, when the divisor is
//!    rule-headed, function-headed, or an infinite composition;
//! 6. a composition divisor, when either side includes head steps;
//! 7. a common one-layer function prefix, componentwise.
//!
//! Projections that recur forever (erasure in the limit, infinite over
//! infinite) are detected by comparing pending goals against ancestors and
//! closed as truncated results carrying the recurrence equation and a
//! depth-bounded approximation.

use crate::parse::Context;
use crate::pterm::{
    self, defeq, fun_headed, includes_head_steps, instantiate_pattern, normalize, pt_fun, pt_rule,
    rule_headed, src, tgt, OmegaSchema, ProofTerm, SchemaTerm,
};
use crate::term::{term_eq, Position, Term};
use crate::trs::Trs;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Debug)]
pub struct ProjOptions {
    /// Maximum number of clause applications.
    pub fuel: u64,
    /// Certification depth for truncated approximations and limits.
    pub depth: usize,
    /// Test-only: invert the composition-shape preference between the two
    /// composition clauses (reproduces the non-terminating clause order).
    pub swap_comp_guard: bool,
}

impl Default for ProjOptions {
    fn default() -> Self {
        ProjOptions {
            fuel: 10_000,
            depth: 8,
            swap_comp_guard: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClauseUse {
    pub clause: u8,
    pub left: String,
    pub right: String,
}

impl fmt::Display for ClauseUse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cl. {}: {} / {}", self.clause, self.left, self.right)
    }
}

#[derive(Clone, Debug)]
pub struct Recurrence {
    /// Rendering of the recurring goal, `psi/phi` for the root goal.
    pub name: String,
    /// The recurrence equation, e.g. `psi/phi = rho(b) . f(psi/phi)`.
    pub equation: String,
    pub exact: bool,
}

#[derive(Clone, Debug)]
pub enum ProjOutcome {
    Closed(ProofTerm),
    Truncated {
        /// Depth-bounded approximation with cut markers at the unresolved
        /// sub-projections.
        approx: ProofTerm,
        certified_depth: usize,
        recurrences: Vec<Recurrence>,
    },
}

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub outcome: ProjOutcome,
    pub trace: Vec<ClauseUse>,
}

impl ProjectionResult {
    pub fn clauses(&self) -> Vec<u8> {
        self.trace.iter().map(|c| c.clause).collect()
    }

    pub fn closed(&self) -> Option<&ProofTerm> {
        match &self.outcome {
            ProjOutcome::Closed(pt) => Some(pt),
            _ => None,
        }
    }
}

#[derive(thiserror::Error, Debug, Clone)]
pub enum ProjError {
    #[error("operands are not coinitial: {0} vs {1}")]
    NotCoinitial(String, String),
    #[error("no clause applies to {left} / {right}: {why}")]
    ClauseMatchFailure {
        left: String,
        right: String,
        why: String,
    },
    #[error("fuel exhausted without recurrence detection")]
    FuelExhausted,
    #[error("the divisor has an undefined target: {0}")]
    DivisorTargetUndefined(String),
    #[error("mutual orthogonality violated: {0}")]
    Orthogonality(String),
}

/// A finite one-layer or multi-hole fixed-prefix check: the context must
/// consist of function symbols only and be left untouched by the proof
/// term's activity.
#[derive(Clone, Debug)]
pub struct FixedPrefixWitness {
    pub context: Context,
    /// AST positions with the definitional case that applied there.
    pub trace: Vec<(Position, PrefixCase)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefixCase {
    Hole,
    Function,
    Composition,
    OmegaComposition,
    Multistep,
}

/// Tests the fixed-prefix property, producing the witness trace.
pub fn is_fixed_prefix(trs: &Trs, ctx: &Context, pt: &ProofTerm) -> Option<FixedPrefixWitness> {
    let mut trace = Vec::new();
    if prefix_rec(trs, ctx, pt, &Position::root(), &mut trace) {
        Some(FixedPrefixWitness {
            context: ctx.clone(),
            trace,
        })
    } else {
        None
    }
}

fn prefix_rec(
    trs: &Trs,
    ctx: &Context,
    pt: &ProofTerm,
    at: &Position,
    trace: &mut Vec<(Position, PrefixCase)>,
) -> bool {
    match ctx {
        Context::Hole => {
            trace.push((at.clone(), PrefixCase::Hole));
            true
        }
        Context::Fun(f, kids) => match pt {
            ProofTerm::Multi(t) => match t.head_unfold() {
                Term::Fun(g, args) if g == *f && args.len() == kids.len() => {
                    trace.push((at.clone(), PrefixCase::Multistep));
                    args.iter().zip(kids.iter()).enumerate().all(|(i, (a, c))| {
                        prefix_rec(
                            trs,
                            c,
                            &ProofTerm::Multi(a.clone()),
                            &at.child(i as u32 + 1),
                            trace,
                        )
                    })
                }
                _ => false,
            },
            ProofTerm::Fun(g, args) if g == f && args.len() == kids.len() => {
                trace.push((at.clone(), PrefixCase::Function));
                args.iter()
                    .zip(kids.iter())
                    .enumerate()
                    .all(|(i, (a, c))| prefix_rec(trs, c, a, &at.child(i as u32 + 1), trace))
            }
            ProofTerm::Comp(a, b) => {
                trace.push((at.clone(), PrefixCase::Composition));
                prefix_rec(trs, ctx, a, &at.child(1), trace)
                    && prefix_rec(trs, ctx, b, &at.child(2), trace)
            }
            ProofTerm::Omega(o) => {
                trace.push((at.clone(), PrefixCase::OmegaComposition));
                match pterm::schema_expose(trs, &o.body, f) {
                    Some(bodies) if bodies.len() == kids.len() => bodies
                        .iter()
                        .zip(kids.iter())
                        .enumerate()
                        .all(|(i, (b, c))| {
                            prefix_rec(
                                trs,
                                c,
                                &omega_or_multi(&o.var, b.clone()),
                                &at.child(i as u32 + 1),
                                trace,
                            )
                        }),
                    _ => false,
                }
            }
            _ => false,
        },
    }
}

fn omega_or_multi(var: &str, body: SchemaTerm) -> ProofTerm {
    match body {
        SchemaTerm::Multi(t) => ProofTerm::Multi(t),
        other => ProofTerm::Omega(OmegaSchema::new(var, other)),
    }
}

#[derive(thiserror::Error, Debug, Clone)]
#[error("the context {ctx} is not a fixed prefix: {why}")]
pub struct PrefixViolation {
    pub ctx: String,
    pub why: String,
}

/// The proof terms filling the holes of the explicit fixed-prefix form, in
/// left-to-right hole order.
pub fn efp_fill(trs: &Trs, pt: &ProofTerm, ctx: &Context) -> Result<Vec<ProofTerm>, PrefixViolation> {
    let fail = |why: &str| PrefixViolation {
        ctx: ctx.to_string(),
        why: why.to_string(),
    };
    match ctx {
        Context::Hole => Ok(vec![pt.clone()]),
        Context::Fun(f, kids) => {
            let parts: Vec<ProofTerm> = match pt {
                ProofTerm::Multi(t) => match t.head_unfold() {
                    Term::Fun(g, args) if g == *f && args.len() == kids.len() => {
                        args.into_iter().map(ProofTerm::Multi).collect()
                    }
                    other => {
                        return Err(fail(&format!("head {} is not {}", other, f)));
                    }
                },
                ProofTerm::Fun(g, args) if g == f && args.len() == kids.len() => args.clone(),
                ProofTerm::Comp(a, b) => {
                    let shallow = Context::Fun(f.clone(), vec![Context::Hole; kids.len()]);
                    let la = efp_fill(trs, a, &shallow)?;
                    let lb = efp_fill(trs, b, &shallow)?;
                    la.into_iter()
                        .zip(lb)
                        .map(|(x, y)| ProofTerm::comp(x, y))
                        .collect()
                }
                ProofTerm::Omega(o) => match pterm::schema_expose(trs, &o.body, f) {
                    Some(bodies) if bodies.len() == kids.len() => bodies
                        .into_iter()
                        .map(|b| omega_or_multi(&o.var, b))
                        .collect(),
                    _ => return Err(fail("components do not expose the prefix symbol")),
                },
                other => return Err(fail(&format!("{} is not shaped by the prefix", other))),
            };
            let mut out = Vec::new();
            for (part, c) in parts.iter().zip(kids.iter()) {
                out.extend(efp_fill(trs, part, c)?);
            }
            Ok(out)
        }
    }
}

/// The explicit fixed-prefix form itself: the context applied to the hole
/// fillers.
pub fn efp_wrap(trs: &Trs, pt: &ProofTerm, ctx: &Context) -> Result<ProofTerm, PrefixViolation> {
    let fills = efp_fill(trs, pt, ctx)?;
    let mut it = fills.into_iter();
    fn build(ctx: &Context, it: &mut std::vec::IntoIter<ProofTerm>) -> ProofTerm {
        match ctx {
            Context::Hole => it.next().expect("hole count matches"),
            Context::Fun(f, kids) => {
                pt_fun(f, kids.iter().map(|c| build(c, it)).collect())
            }
        }
    }
    Ok(build(ctx, &mut it))
}

/// The explicit fixed-prefix form together with derivation items (using
/// only structural equations) transforming the proof term into it.
pub fn efp_with_derivation(
    trs: &Trs,
    pt: &ProofTerm,
    ctx: &Context,
) -> Result<(ProofTerm, Vec<crate::peq::DerivItem>), PrefixViolation> {
    use crate::peq::{DerivItem, DerivationStep, Direction, EquationName};
    let fail = |why: &str| PrefixViolation {
        ctx: ctx.to_string(),
        why: why.to_string(),
    };
    fn go(
        trs: &Trs,
        pt: &ProofTerm,
        ctx: &Context,
        at: &Position,
        items: &mut Vec<DerivItem>,
    ) -> Result<ProofTerm, PrefixViolation> {
        use crate::peq::{DerivItem, DerivationStep, Direction, EquationName};
        let fail = |why: &str| PrefixViolation {
            ctx: ctx.to_string(),
            why: why.to_string(),
        };
        match ctx {
            Context::Hole => Ok(pt.clone()),
            Context::Fun(f, kids) => match pt {
                ProofTerm::Multi(t) => match t.head_unfold() {
                    Term::Fun(g, _) if g == *f => Ok(pt.clone()),
                    _ => Err(fail("not headed by the prefix symbol")),
                },
                ProofTerm::Fun(g, args) if g == f && args.len() == kids.len() => {
                    let mut new_args = Vec::with_capacity(args.len());
                    for (i, (a, c)) in args.iter().zip(kids.iter()).enumerate() {
                        new_args.push(go(trs, a, c, &at.child(i as u32 + 1), items)?);
                    }
                    Ok(pt_fun(f, new_args))
                }
                ProofTerm::Comp(a, b) => {
                    let shallow = Context::Fun(f.clone(), vec![Context::Hole; kids.len()]);
                    let fa = go(trs, a, &shallow, &at.child(1), items)?;
                    let fb = go(trs, b, &shallow, &at.child(2), items)?;
                    items.push(DerivItem::Step(DerivationStep {
                        eq: EquationName::Struct,
                        dir: Direction::Ltr,
                        at: at.clone(),
                    }));
                    let la = children_of(&fa, kids.len());
                    let lb = children_of(&fb, kids.len());
                    let mut new_args = Vec::with_capacity(kids.len());
                    for (i, c) in kids.iter().enumerate() {
                        let merged = ProofTerm::comp(la[i].clone(), lb[i].clone());
                        new_args.push(go(trs, &merged, c, &at.child(i as u32 + 1), items)?);
                    }
                    Ok(pt_fun(f, new_args))
                }
                ProofTerm::Omega(_) => {
                    items.push(DerivItem::Step(DerivationStep {
                        eq: EquationName::InfStruct,
                        dir: Direction::Ltr,
                        at: at.clone(),
                    }));
                    let exposed = crate::peq::apply_equation(
                        trs,
                        EquationName::InfStruct,
                        Direction::Ltr,
                        pt,
                        &Position::root(),
                    )
                    .map_err(|e| fail(&e.to_string()))?;
                    let args = children_of(&exposed, kids.len());
                    let mut new_args = Vec::with_capacity(kids.len());
                    for (i, c) in kids.iter().enumerate() {
                        new_args.push(go(trs, &args[i], c, &at.child(i as u32 + 1), items)?);
                    }
                    Ok(pt_fun(f, new_args))
                }
                other => Err(fail(&format!("{} is not shaped by the prefix", other))),
            },
        }
    }
    fn children_of(pt: &ProofTerm, n: usize) -> Vec<ProofTerm> {
        match fun_headed(pt) {
            Some((_, kids)) if kids.len() == n => kids,
            _ => unreachable!("exposed form is function-headed"),
        }
    }
    let _ = (
        fail("unused"),
        DerivItem::Step(DerivationStep {
            eq: EquationName::Struct,
            dir: Direction::Ltr,
            at: Position::root(),
        }),
    );
    let mut items = Vec::new();
    let result = go(trs, pt, ctx, &Position::root(), &mut items)?;
    Ok((result, items))
}

struct Frame {
    id: u32,
    left: ProofTerm,
    right: ProofTerm,
    key: String,
}

struct RecurrenceRecord {
    result: Option<ProofTerm>,
    exact: bool,
}

struct Engine<'a> {
    trs: &'a Trs,
    opts: &'a ProjOptions,
    fuel: u64,
    trace: Vec<ClauseUse>,
    frames: Vec<Frame>,
    next_id: u32,
    recurrences: BTreeMap<u32, RecurrenceRecord>,
}

/// Projects `psi` over `phi`.
pub fn project(
    trs: &Trs,
    psi: &ProofTerm,
    phi: &ProofTerm,
    opts: &ProjOptions,
) -> Result<ProjectionResult, ProjError> {
    let sp = src(trs, psi);
    let sf = src(trs, phi);
    if !term_eq(&sp, &sf) {
        return Err(ProjError::NotCoinitial(sp.to_string(), sf.to_string()));
    }
    let mut engine = Engine {
        trs,
        opts,
        fuel: opts.fuel,
        trace: Vec::new(),
        frames: Vec::new(),
        next_id: 0,
        recurrences: BTreeMap::new(),
    };
    let result = engine.proj(psi, phi)?;
    let outcome = if result.contains_pending() || !engine.recurrences.is_empty() {
        let mut recurrences = Vec::new();
        for (id, rec) in &engine.recurrences {
            let name = if *id == 0 {
                "psi/phi".to_string()
            } else {
                format!("p{}", id)
            };
            let equation = match &rec.result {
                Some(r) => format!("{} = {}", name, render_with_pending(r, &engine.recurrences)),
                None => format!("{} recurs without a closed context", name),
            };
            recurrences.push(Recurrence {
                name,
                equation,
                exact: rec.exact,
            });
        }
        let approx = build_approx(&result, &engine.recurrences, opts.depth);
        ProjOutcome::Truncated {
            approx,
            certified_depth: opts.depth,
            recurrences,
        }
    } else {
        ProjOutcome::Closed(result)
    };
    Ok(ProjectionResult {
        outcome,
        trace: engine.trace,
    })
}

fn render_with_pending(pt: &ProofTerm, recs: &BTreeMap<u32, RecurrenceRecord>) -> String {
    let mut renamed = pt.clone();
    for id in recs.keys() {
        let name = if *id == 0 {
            "psi/phi".to_string()
        } else {
            format!("p{}", id)
        };
        renamed = subst_pending(&renamed, *id, &ProofTerm::Multi(Term::Fun(name, Vec::new())));
    }
    renamed.to_string()
}

fn subst_pending(pt: &ProofTerm, id: u32, repl: &ProofTerm) -> ProofTerm {
    match pt {
        ProofTerm::Pending(x) if *x == id => repl.clone(),
        ProofTerm::Fun(f, kids) => pt_fun(
            f,
            kids.iter().map(|k| subst_pending(k, id, repl)).collect(),
        ),
        ProofTerm::Rule(r, kids) => pt_rule(
            r,
            kids.iter().map(|k| subst_pending(k, id, repl)).collect(),
        ),
        ProofTerm::Comp(a, b) => {
            ProofTerm::comp(subst_pending(a, id, repl), subst_pending(b, id, repl))
        }
        other => other.clone(),
    }
}

fn build_approx(
    result: &ProofTerm,
    recs: &BTreeMap<u32, RecurrenceRecord>,
    depth: usize,
) -> ProofTerm {
    let mut cur = result.clone();
    for _ in 0..depth {
        for (id, rec) in recs {
            if let Some(r) = &rec.result {
                cur = subst_pending(&cur, *id, r);
            }
        }
    }
    // cut the remaining markers
    fn cut(pt: &ProofTerm) -> ProofTerm {
        match pt {
            ProofTerm::Pending(_) => ProofTerm::Multi(Term::Cut),
            ProofTerm::Fun(f, kids) => pt_fun(f, kids.iter().map(cut).collect()),
            ProofTerm::Rule(r, kids) => pt_rule(r, kids.iter().map(cut).collect()),
            ProofTerm::Comp(a, b) => ProofTerm::comp(cut(a), cut(b)),
            other => other.clone(),
        }
    }
    cut(&cur)
}

/// Skeleton rendering for loop detection: multistep leaves truncated to a
/// small depth, exponent offsets masked.
fn skeleton(pt: &ProofTerm, depth: usize) -> String {
    match pt {
        ProofTerm::Multi(t) => t.unfold(depth).to_string(),
        ProofTerm::Fun(f, kids) | ProofTerm::Rule(f, kids) => {
            let inner: Vec<String> = kids.iter().map(|k| skeleton(k, depth)).collect();
            format!("{}({})", f, inner.join(","))
        }
        ProofTerm::Comp(a, b) => format!("{} . {}", skeleton(a, depth), skeleton(b, depth)),
        ProofTerm::Omega(o) => format!("comp[{}]", skeleton_schema(&o.body, depth)),
        ProofTerm::Pending(id) => format!("<p{}>", id),
    }
}

fn skeleton_schema(body: &SchemaTerm, depth: usize) -> String {
    match body {
        SchemaTerm::Multi(t) => t.unfold(depth).to_string(),
        SchemaTerm::Fun(f, kids) | SchemaTerm::Rule(f, kids) => {
            let inner: Vec<String> = kids.iter().map(|k| skeleton_schema(k, depth)).collect();
            format!("{}({})", f, inner.join(","))
        }
        SchemaTerm::Comp(a, b) => format!(
            "{} . {}",
            skeleton_schema(a, depth),
            skeleton_schema(b, depth)
        ),
        SchemaTerm::Power(c, aff, inner) => {
            let sym: Vec<String> = c.0.iter().map(|l| l.sym.clone()).collect();
            format!(
                "{}^{{{}i+_}}({})",
                sym.join(""),
                aff.coef,
                skeleton_schema(inner, depth)
            )
        }
    }
}

impl<'a> Engine<'a> {
    fn proj(&mut self, left: &ProofTerm, right: &ProofTerm) -> Result<ProofTerm, ProjError> {
        let left = normalize(self.trs, left);
        let right = normalize(self.trs, right);
        if left.contains_pending() || right.contains_pending() {
            // downstream of an already-detected recurrence; cut here
            let id = self.next_id;
            self.next_id += 1;
            self.recurrences.entry(id).or_insert(RecurrenceRecord {
                result: None,
                exact: false,
            });
            return Ok(ProofTerm::Pending(id));
        }
        // exact recurrence: this goal already sits on the stack
        for f in self.frames.iter().rev() {
            if defeq(self.trs, &left, &f.left) && defeq(self.trs, &right, &f.right) {
                let id = f.id;
                self.recurrences.entry(id).or_insert(RecurrenceRecord {
                    result: None,
                    exact: true,
                });
                return Ok(ProofTerm::Pending(id));
            }
        }
        // growing recurrence: the same goal shape keeps returning
        let key = format!("{} / {}", skeleton(&left, 3), skeleton(&right, 3));
        let same_shape: Vec<u32> = self
            .frames
            .iter()
            .filter(|f| f.key == key)
            .map(|f| f.id)
            .collect();
        if same_shape.len() >= 2 {
            let id = *same_shape.last().unwrap();
            self.recurrences.entry(id).or_insert(RecurrenceRecord {
                result: None,
                exact: false,
            });
            return Ok(ProofTerm::Pending(id));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.frames.push(Frame {
            id,
            left: left.clone(),
            right: right.clone(),
            key,
        });
        let result = self.dispatch(&left, &right);
        self.frames.pop();
        let result = result?;
        if contains_marker(&result, id) {
            self.recurrences
                .entry(id)
                .and_modify(|r| r.result = Some(result.clone()));
        }
        Ok(result)
    }

    fn spend(&mut self, clause: u8, left: &ProofTerm, right: &ProofTerm) -> Result<(), ProjError> {
        if self.fuel == 0 {
            return Err(ProjError::FuelExhausted);
        }
        self.fuel -= 1;
        self.trace.push(ClauseUse {
            clause,
            left: left.to_string(),
            right: right.to_string(),
        });
        Ok(())
    }

    fn dispatch(&mut self, left: &ProofTerm, right: &ProofTerm) -> Result<ProofTerm, ProjError> {
        let trs = self.trs;
        // clause 1: identities
        if let Some(t) = left.as_object() {
            if term_eq(t, &src(trs, right)) {
                self.spend(1, left, right)?;
                let out = tgt(trs, right)
                    .map_err(|e| ProjError::DivisorTargetUndefined(e.to_string()))?;
                return Ok(ProofTerm::Multi(out));
            }
            return Err(ProjError::ClauseMatchFailure {
                left: left.to_string(),
                right: right.to_string(),
                why: "object operand differs from the divisor source".into(),
            });
        }
        if let Some(t) = right.as_object() {
            if term_eq(t, &src(trs, left)) {
                self.spend(1, left, right)?;
                return Ok(left.clone());
            }
            return Err(ProjError::ClauseMatchFailure {
                left: left.to_string(),
                right: right.to_string(),
                why: "object divisor differs from the operand source".into(),
            });
        }
        // clause 2: equal rule heads
        let lh = rule_headed(left);
        let rh = rule_headed(right);
        if let (Some((lr, largs)), Some((rr, rargs))) = (&lh, &rh) {
            if lr == rr {
                self.spend(2, left, right)?;
                let rule = trs.rule(lr).ok_or_else(|| ProjError::ClauseMatchFailure {
                    left: left.to_string(),
                    right: right.to_string(),
                    why: format!("unknown rule {}", lr),
                })?;
                let rhs = rule.rhs.clone();
                let vars = rule.vars.clone();
                let mut projected = Vec::with_capacity(largs.len());
                for (a, b) in largs.iter().zip(rargs.iter()) {
                    projected.push(self.proj(a, b)?);
                }
                return Ok(instantiate_pattern(&rhs, &vars, &projected));
            }
            return Err(ProjError::Orthogonality(format!(
                "coinitial head redexes of distinct rules {} and {}",
                lr, rr
            )));
        }
        // clause 3: rule head over a pattern-prefixed divisor
        if let Some((lr, largs)) = &lh {
            if let Some(rule) = trs.rule(lr) {
                let ctx = Context::from_pattern(&rule.lhs);
                if let Ok(fills) = efp_fill(trs, right, &ctx) {
                    self.spend(3, left, right)?;
                    let mut projected = Vec::with_capacity(largs.len());
                    for (a, b) in largs.iter().zip(fills.iter()) {
                        projected.push(self.proj(a, b)?);
                    }
                    return Ok(pt_rule(lr, projected));
                }
            }
        }
        // clause 4: pattern-prefixed operand over a rule-headed divisor
        if let Some((rr, rargs)) = &rh {
            if let Some(rule) = trs.rule(rr) {
                let ctx = Context::from_pattern(&rule.lhs);
                if let Ok(fills) = efp_fill(trs, left, &ctx) {
                    self.spend(4, left, right)?;
                    let rhs = rule.rhs.clone();
                    let vars = rule.vars.clone();
                    let mut projected = Vec::with_capacity(rargs.len());
                    for (a, b) in fills.iter().zip(rargs.iter()) {
                        projected.push(self.proj(a, b)?);
                    }
                    return Ok(instantiate_pattern(&rhs, &vars, &projected));
                }
            }
        }
        // clause 5: composition with head steps over a suitable divisor
        let left_comp = comp_split(&left.clone());
        let right_comp = comp_split(&right.clone());
        if let Some((a, b)) = &left_comp {
            if includes_head_steps(left) && self.chi_shape_ok(right, right_comp.is_some()) {
                self.spend(5, left, right)?;
                let pa = self.proj(a, right)?;
                let divisor_rest = self.proj(right, a)?;
                let pb = self.proj(b, &divisor_rest)?;
                return Ok(ProofTerm::comp(pa, pb));
            }
        }
        // clause 6: composition divisor
        if let Some((a, b)) = &right_comp {
            if includes_head_steps(right) || includes_head_steps(left) {
                self.spend(6, left, right)?;
                let first = self.proj(left, a)?;
                return self.proj(&first, b);
            }
        }
        // clause 7: common function prefix
        let head = match src(trs, left).head_unfold() {
            Term::Fun(f, args) => Some((f, args.len())),
            _ => None,
        };
        if let Some((f, arity)) = head {
            let ctx = Context::Fun(f.clone(), vec![Context::Hole; arity]);
            match (efp_fill(trs, left, &ctx), efp_fill(trs, right, &ctx)) {
                (Ok(lf), Ok(rf)) => {
                    self.spend(7, left, right)?;
                    let mut projected = Vec::with_capacity(arity);
                    for (a, b) in lf.iter().zip(rf.iter()) {
                        projected.push(self.proj(a, b)?);
                    }
                    return Ok(pt_fun(&f, projected));
                }
                (le, re) => {
                    let why = match (le, re) {
                        (Err(e), _) => format!("left operand: {}", e),
                        (_, Err(e)) => format!("divisor: {}", e),
                        _ => unreachable!(),
                    };
                    return Err(ProjError::ClauseMatchFailure {
                        left: left.to_string(),
                        right: right.to_string(),
                        why,
                    });
                }
            }
        }
        Err(ProjError::ClauseMatchFailure {
            left: left.to_string(),
            right: right.to_string(),
            why: "operands have no common shape; mutual orthogonality is likely violated".into(),
        })
    }

    /// The divisor-shape condition of the left-composition clause: a rule
    /// head, a function head, or an infinite composition. The test flag
    /// swaps the treatment of composite divisors.
    fn chi_shape_ok(&self, chi: &ProofTerm, chi_is_comp: bool) -> bool {
        if !chi_is_comp {
            return true; // rule- or function-headed (objects are handled earlier)
        }
        let is_omega_chain = omega_chain(chi);
        if self.opts.swap_comp_guard {
            !is_omega_chain
        } else {
            is_omega_chain
        }
    }
}

fn contains_marker(pt: &ProofTerm, id: u32) -> bool {
    match pt {
        ProofTerm::Pending(x) => *x == id,
        ProofTerm::Fun(_, kids) | ProofTerm::Rule(_, kids) => {
            kids.iter().any(|k| contains_marker(k, id))
        }
        ProofTerm::Comp(a, b) => contains_marker(a, id) || contains_marker(b, id),
        _ => false,
    }
}

/// Splits a composition (binary or omega) into head and tail.
fn comp_split(pt: &ProofTerm) -> Option<(ProofTerm, ProofTerm)> {
    match pt {
        ProofTerm::Comp(a, b) => Some(((**a).clone(), (**b).clone())),
        ProofTerm::Omega(o) => Some((o.component(0), ProofTerm::Omega(o.shifted(1)))),
        _ => None,
    }
}

/// A right-nested chain counts as an infinite composition when its final
/// component is one.
fn omega_chain(pt: &ProofTerm) -> bool {
    match pt {
        ProofTerm::Omega(_) => true,
        ProofTerm::Comp(_, b) => omega_chain(b),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_context, parse_proofterm, parse_workspace};
    use crate::pterm::eq_mod_rid;

    fn finitary_ws() -> crate::parse::ParsedWorkspace {
        parse_workspace(
            "\
rho : j(g(x), y) -> j(x, y)
mu : f(x) -> g(x)
pi : a -> b
tau : c -> d
sigma : m(x) -> n(x)
let psi1 = j(mu(pi), m(c)) . rho(b, sigma(c))
let phi1 = j(f(pi), sigma(tau))
let psi2 = rho(m(c), b)
let phi2 = j(g(sigma(c)) . g(n(tau)), b)
",
        )
        .unwrap()
    }

    #[test]
    fn fixed_prefix_witnesses() {
        let w = finitary_ws();
        let trs = &w.trs;
        let ctx = parse_context("j(g([]),[])").unwrap();
        let phi2 = w.get("phi2").unwrap();
        assert!(is_fixed_prefix(trs, &ctx, phi2).is_some());
        // the hole is a prefix of anything
        assert!(is_fixed_prefix(trs, &Context::Hole, phi2).is_some());
        // a rule node under the context is not
        let mu_a = ProofTerm::Multi(Term::rule("mu", vec![Term::cst("a")]));
        let fctx = parse_context("f([])").unwrap();
        assert!(is_fixed_prefix(trs, &fctx, &mu_a).is_none());
    }

    #[test]
    fn efp_merges_compositions() {
        let w = finitary_ws();
        let trs = &w.trs;
        let ctx = parse_context("j(g([]),[])").unwrap();
        let phi2 = w.get("phi2").unwrap();
        let wrapped = efp_wrap(trs, phi2, &ctx).unwrap();
        assert_eq!(wrapped.to_string(), "j(g(sigma(c) . n(tau)),b)");
        // the emitted derivation uses structural equations only and checks
        let (wrapped2, items) = efp_with_derivation(trs, phi2, &ctx).unwrap();
        assert!(defeq(trs, &wrapped, &wrapped2));
        let d = crate::peq::Derivation {
            source: phi2.clone(),
            goal: Some(wrapped),
            items,
        };
        let out = crate::peq::check_derivation(trs, &d);
        assert!(out.ok, "{:?}", out.failure);
    }

    #[test]
    fn finitary_projection_one() {
        let w = finitary_ws();
        let trs = &w.trs;
        let out = project(
            trs,
            w.get("psi1").unwrap(),
            w.get("phi1").unwrap(),
            &ProjOptions::default(),
        )
        .unwrap();
        let mut t2 = trs.clone();
        let expect = parse_proofterm("j(mu(b), n(d)) . rho(b, n(d))", &mut t2).unwrap();
        let got = out.closed().expect("closed form");
        assert!(eq_mod_rid(trs, got, &expect), "got {}", got);
    }

    #[test]
    fn finitary_projection_two() {
        let w = finitary_ws();
        let trs = &w.trs;
        let out = project(
            trs,
            w.get("psi2").unwrap(),
            w.get("phi2").unwrap(),
            &ProjOptions::default(),
        )
        .unwrap();
        let mut t2 = trs.clone();
        let expect = parse_proofterm("rho(n(d), b)", &mut t2).unwrap();
        let got = out.closed().expect("closed form");
        assert!(eq_mod_rid(trs, got, &expect), "got {}", got);
    }

    #[test]
    fn self_projection_is_target() {
        let w = finitary_ws();
        let trs = &w.trs;
        let psi = w.get("psi1").unwrap();
        let s = src(trs, psi);
        let out = project(trs, psi, &ProofTerm::Multi(s), &ProjOptions::default()).unwrap();
        assert!(defeq(trs, out.closed().unwrap(), psi));
    }

    #[test]
    fn infinite_multistep_projections() {
        let ws = parse_workspace(
            "\
mu : f(x) -> g(x)
let psi = f(rec X. mu(X))
let phi = mu(f(mu(rec X. f(X))))
",
        )
        .unwrap();
        let trs = &ws.trs;
        let psi = ws.get("psi").unwrap();
        let phi = ws.get("phi").unwrap();
        // f mu^w / mu f mu f^w = g mu g mu^w
        let out = project(trs, psi, phi, &ProjOptions::default()).unwrap();
        let mut t2 = trs.clone();
        let expect = parse_proofterm("g(mu(g(rec X. mu(X))))", &mut t2).unwrap();
        assert!(eq_mod_rid(trs, out.closed().unwrap(), &expect));
        // mu f mu f^w / f mu^w = mu g^w
        let out2 = project(trs, phi, psi, &ProjOptions::default()).unwrap();
        let expect2 = parse_proofterm("mu(rec X. g(X))", &mut t2).unwrap();
        assert!(eq_mod_rid(trs, out2.closed().unwrap(), &expect2));
    }

    #[test]
    fn sequential_tower_over_two_steps() {
        // comp i. f(g^i(mu f^w)) / (mu f^w . g(f(mu f^w)))
        let ws = parse_workspace(
            "\
mu : f(x) -> g(x)
let psi = comp i. f(g^{i}(mu(rec X. f(X))))
let phi = mu(rec X. f(X)) . g(f(mu(rec X. f(X))))
",
        )
        .unwrap();
        let trs = &ws.trs;
        let out = project(
            trs,
            ws.get("psi").unwrap(),
            ws.get("phi").unwrap(),
            &ProjOptions::default(),
        )
        .unwrap();
        let mut t2 = trs.clone();
        let expect = parse_proofterm(
            "g(mu(g(rec X. f(X))) . g(comp i. g^{i+1}(mu(rec X. f(X)))))",
            &mut t2,
        )
        .unwrap();
        let got = out.closed().expect("closed form");
        assert!(eq_mod_rid(trs, got, &expect), "got {}", got);
        // the main clause applications appear in the order of the worked
        // computation: 6, 4, 1, 7, 5, then 7 and 5 again, closing with 1
        let clauses = out.clauses();
        assert!(
            is_subsequence(&[6, 4, 1, 7, 5, 7, 5, 1], &clauses),
            "trace {:?}",
            clauses
        );
    }

    fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
        let mut it = hay.iter();
        needle.iter().all(|n| it.any(|h| h == n))
    }

    fn appendix_ws() -> crate::parse::ParsedWorkspace {
        parse_workspace(
            "\
mu : f(x) -> g(x)
let fin = mu(rec X. f(X)) . g(f(mu(rec X. f(X))))
let inf = f(mu(rec X. f(X))) . comp i. f(g(f(g^{i}(mu(rec X. f(X))))))
",
        )
        .unwrap()
    }

    #[test]
    fn appendix_finite_over_infinite() {
        let ws = appendix_ws();
        let trs = &ws.trs;
        let out = project(
            trs,
            ws.get("fin").unwrap(),
            ws.get("inf").unwrap(),
            &ProjOptions::default(),
        )
        .unwrap();
        let mut t2 = trs.clone();
        let expect = parse_proofterm(
            "mu(g(f(rec X. g(X)))) . g^{2}(mu(rec X. g(X)))",
            &mut t2,
        )
        .unwrap();
        let got = out.closed().expect("closed form");
        assert!(eq_mod_rid(trs, got, &expect), "got {}", got);
    }

    #[test]
    fn appendix_infinite_over_finite() {
        let ws = appendix_ws();
        let trs = &ws.trs;
        let out = project(
            trs,
            ws.get("inf").unwrap(),
            ws.get("fin").unwrap(),
            &ProjOptions::default(),
        )
        .unwrap();
        let mut t2 = trs.clone();
        let expect = parse_proofterm(
            "g(mu(g(rec X. f(X))) . g^{2}(comp i. g^{i}(mu(rec X. f(X)))))",
            &mut t2,
        )
        .unwrap();
        let got = out.closed().expect("closed form");
        assert!(eq_mod_rid(trs, got, &expect), "got {}", got);
    }

    #[test]
    fn swapped_guard_loops_are_detected() {
        let ws = appendix_ws();
        let trs = &ws.trs;
        let swapped = ProjOptions {
            swap_comp_guard: true,
            ..ProjOptions::default()
        };
        let one = project(trs, ws.get("fin").unwrap(), ws.get("inf").unwrap(), &swapped).unwrap();
        assert!(
            matches!(one.outcome, ProjOutcome::Truncated { .. }),
            "expected loop detection"
        );
        let two = project(trs, ws.get("inf").unwrap(), ws.get("fin").unwrap(), &swapped).unwrap();
        assert!(
            matches!(two.outcome, ProjOutcome::Truncated { .. }),
            "expected loop detection"
        );
    }

    #[test]
    fn erasure_in_the_limit_truncates() {
        let ws = parse_workspace(
            "\
rho : g(x) -> f(g(x))
pi : a -> b
let psi = comp i. f^{i}(rho(a))
let phi = g(pi)
",
        )
        .unwrap();
        let trs = &ws.trs;
        let psi = ws.get("psi").unwrap();
        let phi = ws.get("phi").unwrap();
        let out = project(trs, psi, phi, &ProjOptions::default()).unwrap();
        match &out.outcome {
            ProjOutcome::Truncated { recurrences, .. } => {
                assert!(recurrences
                    .iter()
                    .any(|r| r.equation == "psi/phi = rho(b) . f(psi/phi)"));
            }
            other => panic!("expected truncation, got {:?}", other),
        }
        let out2 = project(trs, phi, psi, &ProjOptions::default()).unwrap();
        match &out2.outcome {
            ProjOutcome::Truncated {
                recurrences,
                approx,
                ..
            } => {
                assert!(recurrences.iter().any(|r| r.equation == "psi/phi = f(psi/phi)"));
                // the approximation is the erased tower f(f(...)); it
                // agrees with f^w on the whole certified prefix
                match approx {
                    ProofTerm::Multi(t) => {
                        let f_omega =
                            Term::rec("X", Term::fun("f", vec![Term::RecVar("X".into())]));
                        assert_eq!(t.unfold(8), f_omega.unfold(8));
                    }
                    other => panic!("expected an object approximation, got {}", other),
                }
            }
            other => panic!("expected truncation, got {:?}", other),
        }
    }
}
