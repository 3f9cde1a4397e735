//! Structural operational semantics: discrete transitions over agents and
//! continuous evolution of all active ODEs, integrated jointly with RK4.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::flows::{apply_op, eval_bool, fold, Contract, Flow, Tri};
use crate::syntax::{
    free_names, refresh_bound, substitute, BoolExpr, Branch, Expr, Name, Ode, Polarity, Prefix, Process, ReadySet,
    Subst, SubstError,
};

/// Result type of a discrete transition.
#[derive(Clone, Debug)]
pub enum Agent {
    Proc(Process),
    /// `(x⃗).P`
    Abs { binders: Vec<Name>, body: Process },
    /// `(νy⃗)⟨e⃗⟩.P`
    Conc { restricted: Vec<Name>, payload: Vec<Expr>, body: Process },
}

impl Agent {
    pub fn as_proc(&self) -> Option<&Process> {
        match self {
            Agent::Proc(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Label {
    Tau,
    In(Name),
    Out(Name),
}

impl Label {
    pub fn chan(&self) -> Option<&Name> {
        match self {
            Label::Tau => None,
            Label::In(x) | Label::Out(x) => Some(x),
        }
    }
}

/// Which rule a participating thread fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Tau,
    Pass,
    Input,
    Output,
    Sense,
    Actuate,
}

/// A sequential thread (a sum) taking part in a transition.
#[derive(Clone, Debug)]
pub struct Participant {
    pub origin: Origin,
    pub thread: Process,
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub label: Label,
    pub agent: Agent,
    /// One entry for single actions; output side then input side for a
    /// synchronization.
    pub participants: Vec<Participant>,
    /// Channel and folded payload of a synchronization.
    pub sync: Option<(Name, Vec<Expr>)>,
}

impl Transition {
    pub fn is_sync(&self) -> bool {
        self.sync.is_some()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Transitions {
    pub list: Vec<Transition>,
    /// Replication depth ran out somewhere in the derivation.
    pub truncated: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("urgency violation: {0}")]
    UrgencyViolation(String),
    #[error("open system: no process guarantees {0:?}")]
    OpenSystem(Vec<String>),
    #[error("variable `{0}` is guaranteed by two parallel ODEs")]
    GuaranteeOverlap(String),
    #[error("undefined dynamics: {0}")]
    UndefinedDynamics(String),
    #[error("step overflow after {0} substeps")]
    StepOverflow(u64),
    #[error("horizon must be positive")]
    BadHorizon,
    #[error("application arity mismatch: {0} binders, {1} values")]
    Arity(usize, usize),
    #[error(transparent)]
    Subst(#[from] SubstError),
}

#[derive(Clone, Copy, Debug)]
pub struct IntegratorConfig {
    /// RK4 step δ in seconds.
    pub step: f64,
    /// Width to which boundary crossings are localized.
    pub event_tol: f64,
    pub max_substeps: u64,
    /// Record every k-th grid point in emitted flows (segment ends are always
    /// recorded).
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { step: 1e-3, event_tol: 1e-9, max_substeps: 100_000_000, record_stride: 1 }
    }
}

pub const DEFAULT_DEPTH: usize = 64;

// ---------------------------------------------------------------------------
// Ions

/// An agent that may still have restrictions or parallel partners outside
/// its abstraction/concretion prefix.
#[derive(Clone, Debug)]
pub enum RawAgent {
    Agent(Agent),
    Res(Name, Box<RawAgent>),
    /// `A ∥ Q`
    ParRight(Box<RawAgent>, Process),
    /// `Q ∥ A`
    ParLeft(Process, Box<RawAgent>),
}

fn rename_fresh(ns: &[Name]) -> (Vec<Name>, Subst) {
    let fresh: Vec<Name> = ns.iter().map(|n| n.refresh()).collect();
    let pairs: Vec<(Name, Name)> = ns.iter().cloned().zip(fresh.iter().cloned()).collect();
    (fresh, Subst::rename(&pairs))
}

fn ion_restrict(y: &Name, a: Agent) -> Agent {
    match a {
        Agent::Proc(p) => Agent::Proc(Process::res(y.clone(), p)),
        Agent::Abs { binders, body } => {
            if binders.contains(y) {
                let (fresh, s) = rename_fresh(&binders);
                let body = substitute(&body, &s).expect("renaming is name-to-name");
                Agent::Abs { binders: fresh, body: Process::res(y.clone(), body) }
            } else {
                Agent::Abs { binders, body: Process::res(y.clone(), body) }
            }
        }
        Agent::Conc { mut restricted, payload, body } => {
            let in_payload = payload.iter().any(|e| e.names().contains(y));
            if in_payload {
                restricted.insert(0, y.clone());
                Agent::Conc { restricted, payload, body }
            } else {
                Agent::Conc { restricted, payload, body: Process::res(y.clone(), body) }
            }
        }
    }
}

fn captures(bound: &[Name], q: &Process) -> bool {
    if bound.is_empty() {
        return false;
    }
    let fq = free_names(q);
    bound.iter().any(|b| fq.contains(b))
}

fn ion_par(a: Agent, q: &Process, agent_left: bool) -> Agent {
    let join = |p: Process| if agent_left { Process::par(p, q.clone()) } else { Process::par(q.clone(), p) };
    match a {
        Agent::Proc(p) => Agent::Proc(join(p)),
        Agent::Abs { binders, body } => {
            if captures(&binders, q) {
                let (fresh, s) = rename_fresh(&binders);
                let body = substitute(&body, &s).expect("renaming is name-to-name");
                Agent::Abs { binders: fresh, body: join(body) }
            } else {
                Agent::Abs { binders, body: join(body) }
            }
        }
        Agent::Conc { restricted, payload, body } => {
            if captures(&restricted, q) {
                let (fresh, s) = rename_fresh(&restricted);
                let payload = payload.iter().map(|e| e.subst(&s)).collect();
                let body = substitute(&body, &s).expect("renaming is name-to-name");
                Agent::Conc { restricted: fresh, payload, body: join(body) }
            } else {
                Agent::Conc { restricted, payload, body: join(body) }
            }
        }
    }
}

/// Push restrictions and parallel partners through abstraction and
/// concretion prefixes.
pub fn ion_normalize(a: RawAgent) -> Agent {
    match a {
        RawAgent::Agent(a) => a,
        RawAgent::Res(y, inner) => ion_restrict(&y, ion_normalize(*inner)),
        RawAgent::ParRight(inner, q) => ion_par(ion_normalize(*inner), &q, true),
        RawAgent::ParLeft(q, inner) => ion_par(ion_normalize(*inner), &q, false),
    }
}

/// `(x⃗).P @ (νy⃗)⟨e⃗⟩.Q = (νy⃗)(P{e⃗/x⃗} ∥ Q)`. With `abs_left = false` the
/// parallel components are swapped.
pub fn apply_oriented(f: &Agent, c: &Agent, abs_left: bool) -> Result<Process, KernelError> {
    let (Agent::Abs { binders, body: p }, Agent::Conc { restricted, payload, body: q }) = (f, c) else {
        panic!("apply needs an abstraction and a concretion");
    };
    if binders.len() != payload.len() {
        return Err(KernelError::Arity(binders.len(), payload.len()));
    }
    let (ys, payload, q) = if restricted.is_empty() {
        (Vec::new(), payload.clone(), q.clone())
    } else {
        let (fresh, s) = rename_fresh(restricted);
        (fresh, payload.iter().map(|e| e.subst(&s)).collect(), substitute(q, &s)?)
    };
    let s = Subst::zip(binders, &payload)?;
    let p = substitute(p, &s)?;
    let body = if abs_left { Process::par(p, q) } else { Process::par(q, p) };
    Ok(Process::res_all(&ys, body))
}

pub fn apply(f: &Agent, c: &Agent) -> Result<Process, KernelError> {
    apply_oriented(f, c, true)
}

// ---------------------------------------------------------------------------
// Discrete transitions

struct Ctx {
    truncated: bool,
    diagnostics: Vec<String>,
}

fn single(label: Label, agent: Agent, origin: Origin, thread: &Process) -> Transition {
    Transition { label, agent, participants: vec![Participant { origin, thread: thread.clone() }], sync: None }
}

fn sum_transitions(p: &Process, bs: &[Branch], ctx: &mut Ctx, out: &mut Vec<Transition>) {
    for b in bs {
        match &b.prefix {
            Prefix::Tau => out.push(single(Label::Tau, Agent::Proc(b.cont.clone()), Origin::Tau, p)),
            Prefix::Guard(g) => match eval_bool(g, &Default::default()) {
                Tri::True => out.push(single(Label::Tau, Agent::Proc(b.cont.clone()), Origin::Pass, p)),
                Tri::False => {}
                Tri::Undefined => ctx.diagnostics.push(format!(
                    "guard {} is undefined",
                    crate::parser::pretty(&Process::guard(g.clone(), Process::nil()))
                )),
            },
            Prefix::Input { chan, binders } => out.push(single(
                Label::In(chan.clone()),
                Agent::Abs { binders: binders.clone(), body: b.cont.clone() },
                Origin::Input,
                p,
            )),
            Prefix::Output { chan, payload } => out.push(single(
                Label::Out(chan.clone()),
                Agent::Conc { restricted: Vec::new(), payload: payload.iter().map(fold).collect(), body: b.cont.clone() },
                Origin::Output,
                p,
            )),
            Prefix::Cont(ode) => {
                let me = Process::prefix(b.prefix.clone(), b.cont.clone());
                for (v, pol) in ode.ready.iter() {
                    let i = ode.index_of(v).expect("ready entries are variables");
                    match pol {
                        Polarity::Out => out.push(single(
                            Label::Out(v.clone()),
                            Agent::Conc { restricted: Vec::new(), payload: vec![fold(&ode.init[i])], body: me.clone() },
                            Origin::Sense,
                            p,
                        )),
                        Polarity::In => {
                            let x = Name::fresh("x");
                            let mut new = (**ode).clone();
                            new.init[i] = Expr::Var(x.clone());
                            let body = Process::cont(new, b.cont.clone());
                            out.push(single(
                                Label::In(v.clone()),
                                Agent::Abs { binders: vec![x], body },
                                Origin::Actuate,
                                p,
                            ));
                        }
                    }
                }
            }
        }
    }
}

fn sync_pair(l: &Transition, r: &Transition, ctx: &mut Ctx) -> Option<Transition> {
    let (out_t, in_t, abs_left) = match (&l.label, &r.label) {
        (Label::In(x), Label::Out(y)) if x == y => (r, l, true),
        (Label::Out(x), Label::In(y)) if x == y => (l, r, false),
        _ => return None,
    };
    let chan = out_t.label.chan().unwrap().clone();
    let Agent::Conc { payload, .. } = &out_t.agent else { return None };
    match apply_oriented(&in_t.agent, &out_t.agent, abs_left) {
        Ok(p) => {
            let mut participants = out_t.participants.clone();
            participants.extend(in_t.participants.iter().cloned());
            Some(Transition { label: Label::Tau, agent: Agent::Proc(p), participants, sync: Some((chan, payload.clone())) })
        }
        Err(e) => {
            ctx.diagnostics.push(format!("synchronization on `{}` skipped: {e}", chan.display()));
            None
        }
    }
}

fn transitions(p: &Process, depth: usize, ctx: &mut Ctx) -> Vec<Transition> {
    match p {
        Process::Sum(bs) => {
            let mut out = Vec::new();
            sum_transitions(p, bs, ctx, &mut out);
            out
        }
        Process::Res(x, body) => transitions(body, depth, ctx)
            .into_iter()
            .filter(|t| t.label.chan() != Some(x))
            .map(|mut t| {
                t.agent = ion_restrict(x, t.agent);
                t
            })
            .collect(),
        Process::Par(a, b) => {
            let ta = transitions(a, depth, ctx);
            let tb = transitions(b, depth, ctx);
            par_transitions(&ta, b, &tb, a, ctx)
        }
        Process::Rep(body) => {
            if depth == 0 {
                ctx.truncated = true;
                return Vec::new();
            }
            let c1 = refresh_bound(body);
            let t1 = transitions(&c1, depth - 1, ctx);
            let mut out: Vec<Transition> = t1
                .iter()
                .cloned()
                .map(|mut t| {
                    t.agent = ion_par(t.agent, p, true);
                    t
                })
                .collect();
            if t1.iter().any(|t| matches!(t.label, Label::In(_))) && t1.iter().any(|t| matches!(t.label, Label::Out(_))) {
                let c2 = refresh_bound(body);
                let t2 = transitions(&c2, depth - 1, ctx);
                for l in t1.iter().filter(|t| matches!(t.label, Label::In(_))) {
                    for r in t2.iter().filter(|t| matches!(t.label, Label::Out(_))) {
                        if let Some(mut s) = sync_pair(l, r, ctx) {
                            if let Agent::Proc(q) = s.agent {
                                s.agent = Agent::Proc(Process::par(q, p.clone()));
                            }
                            out.push(s);
                        }
                    }
                }
            }
            out
        }
        Process::Call(d, _) => {
            ctx.diagnostics.push(format!("unresolved definition `{d}` has no transitions"));
            Vec::new()
        }
    }
}

fn par_transitions(ta: &[Transition], b: &Process, tb: &[Transition], a: &Process, ctx: &mut Ctx) -> Vec<Transition> {
    let mut out = Vec::with_capacity(ta.len() + tb.len());
    for t in ta {
        let mut t = t.clone();
        t.agent = ion_par(t.agent, b, true);
        out.push(t);
    }
    for t in tb {
        let mut t = t.clone();
        t.agent = ion_par(t.agent, a, false);
        out.push(t);
    }
    for l in ta.iter().filter(|t| t.label != Label::Tau) {
        for r in tb.iter().filter(|t| t.label != Label::Tau) {
            if let Some(s) = sync_pair(l, r, ctx) {
                out.push(s);
            }
        }
    }
    out
}

/// Every transition derivable from `p`, unfolding each replication at most
/// `depth` times along a derivation.
pub fn discrete_transitions(p: &Process, depth: usize) -> Transitions {
    let mut ctx = Ctx { truncated: false, diagnostics: Vec::new() };
    let list = transitions(p, depth, &mut ctx);
    Transitions { list, truncated: ctx.truncated, diagnostics: ctx.diagnostics }
}

// ---------------------------------------------------------------------------
// Continuous evolution

/// `⟨ρ, R⟩`
#[derive(Clone, Debug)]
pub struct ContinuousLabel {
    pub flow: Contract,
    pub ready: ReadySet,
}

/// A stopped ODE and the state it handed to its continuation.
#[derive(Clone, Debug)]
pub struct Stop {
    pub vars: Vec<Name>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    /// `None` for a zero-duration stop.
    pub label: Option<ContinuousLabel>,
    /// Flow over every evolving variable, restricted ones included.
    pub full: Option<Flow>,
    pub successor: Process,
    pub stops: Vec<Stop>,
    pub zero_duration: bool,
    pub diagnostics: Vec<String>,
}

impl Evolution {
    pub fn duration(&self) -> f64 {
        self.full.as_ref().map_or(0.0, |f| f.duration())
    }
}

struct Active {
    ode: Arc<Ode>,
    cont: Process,
}

#[derive(Default)]
struct Scan {
    active: Vec<Active>,
    components: Vec<ReadySet>,
    restricted: BTreeSet<Name>,
    urgent: Vec<String>,
    diagnostics: Vec<String>,
}

fn scan(p: &Process, in_rep: bool, s: &mut Scan) {
    match p {
        Process::Sum(bs) => {
            if bs.is_empty() {
                return;
            }
            let mut ready = ReadySet::new();
            let mut cont_seen = false;
            for b in bs.iter() {
                match &b.prefix {
                    Prefix::Tau => s.urgent.push("a τ prefix is enabled".into()),
                    Prefix::Guard(g) => match eval_bool(g, &Default::default()) {
                        Tri::True => s.urgent.push("a true guard is enabled".into()),
                        Tri::False => {}
                        Tri::Undefined => s.diagnostics.push("a guard is undefined and blocks".into()),
                    },
                    Prefix::Input { chan, .. } => ready.insert(chan.clone(), Polarity::In),
                    Prefix::Output { chan, .. } => ready.insert(chan.clone(), Polarity::Out),
                    Prefix::Cont(ode) => {
                        if cont_seen {
                            s.diagnostics.push("only the first continuous branch of a sum evolves".into());
                            continue;
                        }
                        cont_seen = true;
                        if in_rep {
                            s.diagnostics.push("continuous prefix under replication does not evolve".into());
                            continue;
                        }
                        s.active.push(Active { ode: ode.clone(), cont: b.cont.clone() });
                    }
                }
            }
            if cont_seen && !in_rep {
                let ode = &s.active.last().unwrap().ode;
                s.components.push(ode.ready.clone());
            } else {
                s.components.push(ready);
            }
        }
        Process::Res(x, body) => {
            s.restricted.insert(x.clone());
            scan(body, in_rep, s);
        }
        Process::Par(a, b) => {
            scan(a, in_rep, s);
            scan(b, in_rep, s);
        }
        Process::Rep(body) => scan(body, true, s),
        Process::Call(..) => s.diagnostics.push("unresolved definition".into()),
    }
}

fn rebuild(p: &Process, replace: &mut dyn FnMut(usize) -> Process, idx: &mut usize) -> Process {
    match p {
        Process::Sum(bs) => {
            if bs.iter().any(|b| matches!(b.prefix, Prefix::Cont(_))) {
                let i = *idx;
                *idx += 1;
                replace(i)
            } else {
                p.clone()
            }
        }
        Process::Res(x, body) => Process::res(x.clone(), rebuild(body, replace, idx)),
        Process::Par(a, b) => {
            let a = rebuild(a, replace, idx);
            let b = rebuild(b, replace, idx);
            Process::par(a, b)
        }
        Process::Rep(_) | Process::Call(..) => p.clone(),
    }
}

/// Whether some ODE of `p` can evolve.
pub fn has_active_ode(p: &Process) -> bool {
    let mut s = Scan::default();
    scan(p, false, &mut s);
    !s.active.is_empty()
}

/// The visible interface of `p`: waiting prefixes and ODE ready sets of all
/// parallel components, without restricted names.
pub fn ready_set(p: &Process) -> ReadySet {
    let mut s = Scan::default();
    scan(p, false, &mut s);
    let mut r = ReadySet::new();
    for c in &s.components {
        r = r.union(c);
    }
    ReadySet(r.0.into_iter().filter(|(n, _)| !s.restricted.contains(n)).collect())
}

/// Closedness report: variables read by some active ODE but guaranteed by
/// none.
pub fn is_closed_for_evolution(p: &Process) -> (bool, Vec<Name>) {
    let mut s = Scan::default();
    scan(p, false, &mut s);
    let vars: BTreeSet<Name> = s.active.iter().flat_map(|a| a.ode.vars.iter().cloned()).collect();
    let mut missing = BTreeSet::new();
    for a in &s.active {
        let mut used = BTreeSet::new();
        a.ode.field.iter().for_each(|e| e.names_into(&mut used));
        a.ode.boundary.names_into(&mut used);
        missing.extend(used.into_iter().filter(|n| !vars.contains(n)));
    }
    (missing.is_empty(), missing.into_iter().collect())
}

fn check_urgency(s: &Scan) -> Result<(), KernelError> {
    if let Some(u) = s.urgent.first() {
        return Err(KernelError::UrgencyViolation(u.clone()));
    }
    let mut ins: BTreeMap<&Name, Vec<usize>> = BTreeMap::new();
    let mut outs: BTreeMap<&Name, Vec<usize>> = BTreeMap::new();
    for (i, c) in s.components.iter().enumerate() {
        for (n, pol) in c.iter() {
            match pol {
                Polarity::In => ins.entry(n).or_default().push(i),
                Polarity::Out => outs.entry(n).or_default().push(i),
            }
        }
    }
    for (n, is) in &ins {
        if let Some(os) = outs.get(n) {
            if is.iter().any(|i| os.iter().any(|o| o != i)) {
                return Err(KernelError::UrgencyViolation(format!(
                    "ready sets match on `{}`; the processes must communicate",
                    n.display()
                )));
            }
        }
    }
    Ok(())
}

/// Compiled expression over a slot vector; NaN stands for undefined.
#[derive(Clone, Debug)]
pub(crate) enum Ce {
    K(f64),
    S(usize),
    Op(crate::syntax::Op, Vec<Ce>),
}

impl Ce {
    pub(crate) fn compile(e: &Expr, slots: &BTreeMap<Name, usize>, missing: &mut BTreeSet<Name>) -> Ce {
        match e {
            Expr::Num(v) => Ce::K(*v),
            Expr::Str(_) => Ce::K(f64::NAN),
            Expr::Var(n) => match slots.get(n) {
                Some(i) => Ce::S(*i),
                None => {
                    missing.insert(n.clone());
                    Ce::K(f64::NAN)
                }
            },
            Expr::Op(op, args) => {
                let args: Vec<Ce> = args.iter().map(|a| Ce::compile(a, slots, missing)).collect();
                if let Some(xs) = args
                    .iter()
                    .map(|a| if let Ce::K(v) = a { Some(*v) } else { None })
                    .collect::<Option<Vec<f64>>>()
                {
                    return Ce::K(apply_op(*op, &xs).unwrap_or(f64::NAN));
                }
                Ce::Op(*op, args)
            }
        }
    }

    #[inline]
    pub(crate) fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Ce::K(v) => *v,
            Ce::S(i) => y[*i],
            Ce::Op(op, args) => {
                if args.len() == 1 {
                    let a = args[0].eval(y);
                    apply_op(*op, &[a]).unwrap_or(f64::NAN)
                } else {
                    let a = args[0].eval(y);
                    let b = args[1].eval(y);
                    if a.is_nan() || b.is_nan() {
                        return f64::NAN;
                    }
                    apply_op(*op, &[a, b]).unwrap_or(f64::NAN)
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Cb {
    F,
    Lt(Ce, Ce),
    And(Box<Cb>, Box<Cb>),
    Not(Box<Cb>),
}

impl Cb {
    pub(crate) fn compile(b: &BoolExpr, slots: &BTreeMap<Name, usize>, missing: &mut BTreeSet<Name>) -> Cb {
        match b {
            BoolExpr::False => Cb::F,
            BoolExpr::Less(x, y) => Cb::Lt(Ce::compile(x, slots, missing), Ce::compile(y, slots, missing)),
            BoolExpr::And(x, y) => Cb::And(Box::new(Cb::compile(x, slots, missing)), Box::new(Cb::compile(y, slots, missing))),
            BoolExpr::Not(x) => Cb::Not(Box::new(Cb::compile(x, slots, missing))),
        }
    }

    pub(crate) fn eval(&self, y: &[f64]) -> Tri {
        match self {
            Cb::F => Tri::False,
            Cb::Lt(a, b) => {
                let (a, b) = (a.eval(y), b.eval(y));
                if a.is_nan() || b.is_nan() {
                    Tri::Undefined
                } else {
                    Tri::from_bool(a < b)
                }
            }
            Cb::And(a, b) => match (a.eval(y), b.eval(y)) {
                (Tri::Undefined, _) | (_, Tri::Undefined) => Tri::Undefined,
                (Tri::True, Tri::True) => Tri::True,
                _ => Tri::False,
            },
            Cb::Not(a) => match a.eval(y) {
                Tri::True => Tri::False,
                Tri::False => Tri::True,
                Tri::Undefined => Tri::Undefined,
            },
        }
    }
}

/// Joint vector field of all active ODEs.
pub(crate) struct System {
    pub(crate) field: Vec<Ce>,
}

impl System {
    fn deriv(&self, y: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.field) {
            *o = f.eval(y);
        }
    }

    /// One classical RK4 step of size `h`.
    pub(crate) fn rk4(&self, y: &[f64], h: f64, scratch: &mut [Vec<f64>; 5], out: &mut [f64]) {
        let n = y.len();
        let [k1, k2, k3, k4, tmp] = scratch;
        self.deriv(y, k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        self.deriv(tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        self.deriv(tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        self.deriv(tmp, k4);
        for i in 0..n {
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn display_list(ns: &BTreeSet<Name>) -> Vec<String> {
    ns.iter().map(|n| n.display().to_string()).collect()
}

/// Evolve `p` for at most `horizon` seconds.
///
/// All active ODEs integrate as one coupled system. The step ends early when
/// some boundary fails; every ODE whose boundary fails at the crossing stops
/// and hands its state to its continuation, the rest keep running from the
/// new state.
pub fn continuous_step(p: &Process, horizon: f64, cfg: &IntegratorConfig) -> Result<Evolution, KernelError> {
    if !(horizon > 0.0) {
        return Err(KernelError::BadHorizon);
    }
    let mut s = Scan::default();
    scan(p, false, &mut s);
    check_urgency(&s)?;

    let mut visible_ready = ReadySet::new();
    for c in &s.components {
        visible_ready = visible_ready.union(c);
    }
    let visible_ready = ReadySet(visible_ready.0.into_iter().filter(|(n, _)| !s.restricted.contains(n)).collect());

    if s.active.is_empty() {
        let flow = Flow::empty(horizon).expect("positive horizon");
        return Ok(Evolution {
            label: Some(ContinuousLabel { flow: Contract::closed(flow.clone()), ready: visible_ready }),
            full: Some(flow),
            successor: p.clone(),
            stops: Vec::new(),
            zero_duration: false,
            diagnostics: s.diagnostics,
        });
    }

    // slots
    let mut slots = BTreeMap::new();
    let mut names = Vec::new();
    for a in &s.active {
        for v in &a.ode.vars {
            if slots.insert(v.clone(), names.len()).is_some() {
                return Err(KernelError::GuaranteeOverlap(v.display().to_string()));
            }
            names.push(v.clone());
        }
    }
    let mut missing = BTreeSet::new();
    let mut field = Vec::with_capacity(names.len());
    let mut bounds = Vec::with_capacity(s.active.len());
    let mut y0 = Vec::with_capacity(names.len());
    for a in &s.active {
        for (v, e) in a.ode.vars.iter().zip(&a.ode.init) {
            match fold(e) {
                Expr::Num(x) => y0.push(x),
                other => {
                    let mut ns = BTreeSet::new();
                    other.names_into(&mut ns);
                    if ns.is_empty() {
                        return Err(KernelError::UndefinedDynamics(format!("initial value of `{}`", v.display())));
                    }
                    return Err(KernelError::OpenSystem(display_list(&ns)));
                }
            }
        }
        field.extend(a.ode.field.iter().map(|e| Ce::compile(e, &slots, &mut missing)));
        bounds.push(Cb::compile(&a.ode.boundary, &slots, &mut missing));
    }
    if !missing.is_empty() {
        return Err(KernelError::OpenSystem(display_list(&missing)));
    }
    let sys = System { field };

    let failing = |y: &[f64]| -> Result<Vec<bool>, KernelError> {
        bounds
            .iter()
            .enumerate()
            .map(|(i, b)| match b.eval(y) {
                Tri::True => Ok(false),
                Tri::False => Ok(true),
                Tri::Undefined => Err(KernelError::UndefinedDynamics(format!(
                    "boundary of ODE over {:?} is undefined",
                    s.active[i].ode.vars.iter().map(|v| v.display()).collect::<Vec<_>>()
                ))),
            })
            .collect()
    };

    let fail0 = failing(&y0)?;
    if fail0.iter().any(|f| *f) {
        let (succ, stops) = successor(p, &s, &y0, &fail0, &slots)?;
        return Ok(Evolution {
            label: None,
            full: None,
            successor: succ,
            stops,
            zero_duration: true,
            diagnostics: s.diagnostics,
        });
    }

    let n = names.len();
    let stride = cfg.record_stride.max(1);
    let mut grid = vec![0.0];
    let mut samples = vec![y0.clone()];
    let mut y = y0;
    let mut next = vec![0.0; n];
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut t = 0.0;
    let mut k: u64 = 0;
    let mut stopped: Option<Vec<bool>> = None;
    loop {
        if k >= cfg.max_substeps {
            return Err(KernelError::StepOverflow(k));
        }
        let t_next = {
            let cand = (k + 1) as f64 * cfg.step;
            if cand >= horizon - cfg.step * 1e-9 {
                horizon
            } else {
                cand
            }
        };
        let h = t_next - t;
        sys.rk4(&y, h, &mut scratch, &mut next);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(KernelError::UndefinedDynamics(format!("vector field undefined near t = {t}")));
        }
        let fail = failing(&next)?;
        k += 1;
        if fail.iter().any(|f| *f) {
            // bisect the substep for the first failing point
            let (mut lo, mut hi) = (0.0, h);
            let mut at_hi = next.clone();
            let mut fail_hi = fail;
            let mut probe = vec![0.0; n];
            while hi - lo > cfg.event_tol {
                let mid = 0.5 * (lo + hi);
                sys.rk4(&y, mid, &mut scratch, &mut probe);
                let f = failing(&probe)?;
                if f.iter().any(|x| *x) {
                    hi = mid;
                    at_hi.copy_from_slice(&probe);
                    fail_hi = f;
                } else {
                    lo = mid;
                }
            }
            t += hi;
            y = at_hi;
            grid.push(t);
            samples.push(y.clone());
            stopped = Some(fail_hi);
            break;
        }
        t = t_next;
        std::mem::swap(&mut y, &mut next);
        if t >= horizon {
            grid.push(t);
            samples.push(y.clone());
            break;
        }
        if k as usize % stride == 0 {
            grid.push(t);
            samples.push(y.clone());
        }
    }

    let full = Flow::new(names.clone(), grid, samples).expect("grid is increasing");
    let full = if stopped.is_some() { full.with_events(vec![t]) } else { full };
    let visible = full.without(&s.restricted);
    let none = vec![false; s.active.len()];
    let (succ, stops) = successor(p, &s, &y, stopped.as_ref().unwrap_or(&none), &slots)?;
    Ok(Evolution {
        label: Some(ContinuousLabel { flow: Contract::closed(visible), ready: visible_ready }),
        full: Some(full),
        successor: succ,
        stops,
        zero_duration: false,
        diagnostics: s.diagnostics,
    })
}

fn successor(
    p: &Process,
    s: &Scan,
    y: &[f64],
    stop: &[bool],
    slots: &BTreeMap<Name, usize>,
) -> Result<(Process, Vec<Stop>), KernelError> {
    let mut built = Vec::with_capacity(s.active.len());
    let mut stops = Vec::new();
    for (a, st) in s.active.iter().zip(stop) {
        let vals: Vec<f64> = a.ode.vars.iter().map(|v| y[slots[v]]).collect();
        if *st {
            let cont = if a.ode.binders.is_empty() {
                a.cont.clone()
            } else {
                let es: Vec<Expr> = vals.iter().map(|v| Expr::Num(*v)).collect();
                substitute(&a.cont, &Subst::zip(&a.ode.binders, &es)?)?
            };
            stops.push(Stop { vars: a.ode.vars.clone(), values: vals });
            built.push(cont);
        } else {
            let mut ode = (*a.ode).clone();
            ode.init = vals.iter().map(|v| Expr::Num(*v)).collect();
            built.push(Process::cont(ode, a.cont.clone()));
        }
    }
    let mut idx = 0;
    let mut take = |i: usize| built[i].clone();
    Ok((rebuild(p, &mut take, &mut idx), stops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_process, ParseOptions};
    use crate::syntax::{alpha_equivalent, struct_congruent};

    fn proc_(src: &str) -> Process {
        parse_process(src, &ParseOptions::default()).unwrap()
    }

    #[test]
    fn bigben_senses_its_clock() {
        let p = proc_("{0 | c' = 1 ; ready c!}");
        let ts = discrete_transitions(&p, DEFAULT_DEPTH);
        assert_eq!(ts.list.len(), 1);
        let t = &ts.list[0];
        assert!(matches!(&t.label, Label::Out(c) if c.display() == "c"));
        let Agent::Conc { payload, body, .. } = &t.agent else { panic!() };
        assert!(matches!(payload[0], Expr::Num(v) if v == 0.0));
        assert!(alpha_equivalent(body, &p));
        assert_eq!(t.participants[0].origin, Origin::Sense);
    }

    #[test]
    fn ball_actuation_replaces_one_coordinate() {
        let p = proc_("{5, 0 | h' = v, v' = -9.8 & h >= 0 ; ready v!, v?}");
        let ts = discrete_transitions(&p, DEFAULT_DEPTH);
        let t = ts.list.iter().find(|t| matches!(t.label, Label::In(_))).unwrap();
        let Agent::Abs { binders, body } = &t.agent else { panic!() };
        let Process::Sum(bs) = body else { panic!() };
        let Prefix::Cont(ode) = &bs[0].prefix else { panic!() };
        assert!(matches!(ode.init[0], Expr::Num(v) if v == 5.0));
        assert!(matches!(&ode.init[1], Expr::Var(x) if *x == binders[0]));
    }

    #[test]
    fn true_guard_passes() {
        let p = proc_("[1 < 2] . a!<> + b!<>");
        let ts = discrete_transitions(&p, DEFAULT_DEPTH);
        let taus: Vec<_> = ts.list.iter().filter(|t| t.label == Label::Tau).collect();
        assert_eq!(taus.len(), 1);
        assert_eq!(taus[0].participants[0].origin, Origin::Pass);
        let undefined = proc_("[x < 2] . a!<>");
        let ts = discrete_transitions(&undefined, DEFAULT_DEPTH);
        assert!(ts.list.is_empty());
        assert_eq!(ts.diagnostics.len(), 1);
    }

    #[test]
    fn apply_examples() {
        let (x, y, a) = (Name::fresh("x"), Name::fresh("y"), Name::fresh("a"));
        let f = Agent::Abs { binders: vec![x.clone()], body: Process::output(&a, vec![Expr::var(&x)], Process::nil()) };
        let c = Agent::Conc { restricted: vec![], payload: vec![Expr::num(1.0)], body: Process::nil() };
        let r = apply(&f, &c).unwrap();
        let want = Process::par(Process::output(&a, vec![Expr::num(1.0)], Process::nil()), Process::nil());
        assert!(alpha_equivalent(&r, &want));
        let c = Agent::Conc { restricted: vec![y.clone()], payload: vec![Expr::var(&y)], body: Process::nil() };
        let r = apply(&f, &c).unwrap();
        let want = Process::res(
            y.clone(),
            Process::par(Process::output(&a, vec![Expr::var(&y)], Process::nil()), Process::nil()),
        );
        assert!(alpha_equivalent(&r, &want));
        let f0 = Agent::Abs { binders: vec![], body: Process::tau(Process::nil()) };
        let c0 = Agent::Conc { restricted: vec![], payload: vec![], body: Process::nil() };
        assert!(alpha_equivalent(&apply(&f0, &c0).unwrap(), &Process::par(Process::tau(Process::nil()), Process::nil())));
        assert!(matches!(apply(&f, &c0), Err(KernelError::Arity(1, 0))));
    }

    #[test]
    fn ion_laws() {
        let (x, y, z) = (Name::fresh("x"), Name::fresh("y"), Name::fresh("z"));
        let body = Process::output(&y, vec![Expr::var(&x)], Process::nil());
        let a = ion_normalize(RawAgent::Res(
            y.clone(),
            Box::new(RawAgent::Agent(Agent::Abs { binders: vec![x.clone()], body: body.clone() })),
        ));
        let Agent::Abs { binders, body: b } = a else { panic!() };
        assert_eq!(binders, vec![x.clone()]);
        assert!(alpha_equivalent(&b, &Process::res(y.clone(), body.clone())));

        let c = ion_normalize(RawAgent::Res(
            y.clone(),
            Box::new(RawAgent::Agent(Agent::Conc { restricted: vec![], payload: vec![Expr::var(&y)], body: Process::nil() })),
        ));
        let Agent::Conc { restricted, .. } = c else { panic!() };
        assert_eq!(restricted, vec![y.clone()]);

        let q = Process::output(&z, vec![], Process::nil());
        let a = ion_normalize(RawAgent::ParRight(
            Box::new(RawAgent::Agent(Agent::Abs { binders: vec![x.clone()], body: body.clone() })),
            q.clone(),
        ));
        let Agent::Abs { body: b, .. } = a else { panic!() };
        assert!(alpha_equivalent(&b, &Process::par(body, q)));
    }

    #[test]
    fn sync_and_restriction() {
        let p = proc_("x(y) . y!<> || x!<z> . 0");
        let ts = discrete_transitions(&p, DEFAULT_DEPTH);
        let sync: Vec<_> = ts.list.iter().filter(|t| t.is_sync()).collect();
        assert_eq!(sync.len(), 1);
        let r = proc_("new x . (x(y) . 0 || x!<1> . 0)");
        let ts = discrete_transitions(&r, DEFAULT_DEPTH);
        assert_eq!(ts.list.len(), 1);
        assert_eq!(ts.list[0].label, Label::Tau);
    }

    #[test]
    fn scope_extrusion_through_restriction() {
        let p = proc_("new y . x!<y> . y(u)");
        let ts = discrete_transitions(&p, DEFAULT_DEPTH);
        let Agent::Conc { restricted, .. } = &ts.list[0].agent else { panic!() };
        assert_eq!(restricted.len(), 1);
    }

    #[test]
    fn replication_unfolds_and_truncates() {
        let p = proc_("repl a!<>");
        let ts = discrete_transitions(&p, 3);
        assert_eq!(ts.list.len(), 1);
        let ts = discrete_transitions(&p, 0);
        assert!(ts.list.is_empty() && ts.truncated);
        let q = proc_("repl (a!<1> + a(u))");
        let ts = discrete_transitions(&q, 3);
        assert!(ts.list.iter().any(|t| t.is_sync()));
    }

    #[test]
    fn congruent_terms_have_congruent_transitions() {
        let free = ["a", "b"].iter().map(|s| (s.to_string(), Name::fresh(s))).collect();
        let opts = ParseOptions { free };
        let p = parse_process("a!<1> || a(x) . b!<x> || tau", &opts).unwrap();
        let q = parse_process("tau || (a(x) . b!<x> || a!<1>)", &opts).unwrap();
        let tp = discrete_transitions(&p, 4).list;
        let tq = discrete_transitions(&q, 4).list;
        assert_eq!(tp.len(), tq.len());
        for t in &tp {
            let Agent::Proc(a) = &t.agent else { continue };
            assert!(tq.iter().any(|u| u.label == t.label && matches!(&u.agent, Agent::Proc(b) if struct_congruent(a, b))));
        }
    }

    #[test]
    fn example_exponential_stops_at_ln5() {
        let p = proc_("{1 | v' = v & v < 5}(y) . halt!<y>");
        let e = continuous_step(&p, 10.0, &IntegratorConfig::default()).unwrap();
        assert!((e.duration() - 5f64.ln()).abs() < 1e-6, "{}", e.duration());
        assert_eq!(e.stops.len(), 1);
        assert!((e.stops[0].values[0] - 5.0).abs() < 1e-6);
        let Process::Sum(bs) = &e.successor else { panic!() };
        let Prefix::Output { payload, .. } = &bs[0].prefix else { panic!() };
        assert!(matches!(payload[0], Expr::Num(v) if (v - 5.0).abs() < 1e-6));
    }

    #[test]
    fn example_exponential_runs_for_one_second() {
        let p = proc_("{1 | v' = v & v < 5}(y) . halt!<y>");
        let e = continuous_step(&p, 1.0, &IntegratorConfig::default()).unwrap();
        assert!(e.stops.is_empty());
        assert!((e.duration() - 1.0).abs() < 1e-12);
        let Process::Sum(bs) = &e.successor else { panic!() };
        let Prefix::Cont(ode) = &bs[0].prefix else { panic!() };
        assert!(matches!(ode.init[0], Expr::Num(v) if (v - 1f64.exp()).abs() < 1e-9));
    }

    #[test]
    fn matched_ready_sets_forbid_evolution() {
        let p = proc_("x(y) . 0 || x!<1> . 0");
        assert!(matches!(continuous_step(&p, 1.0, &IntegratorConfig::default()), Err(KernelError::UrgencyViolation(_))));
    }

    #[test]
    fn open_systems_are_rejected() {
        let p = proc_("{0 | v' = w}");
        assert!(matches!(continuous_step(&p, 1.0, &IntegratorConfig::default()), Err(KernelError::OpenSystem(_))));
        assert!(!is_closed_for_evolution(&p).0);
        let ball = proc_("{5, 0 | h' = v, v' = -9.8 & h >= 0 ; ready v!, v?}");
        assert!(is_closed_for_evolution(&ball).0);
    }

    #[test]
    fn ready_sets() {
        let run = proc_("new p, v, a . {0, 0, 0 | p' = v, v' = a, a' = 0 ; ready p!, v!, a?}");
        assert!(ready_set(&run).is_empty());
        let run = proc_("{0, 0, 0 | p' = v, v' = a, a' = 0 ; ready p!, v!, a?}");
        assert_eq!(ready_set(&run).len(), 3);
        assert!(ready_set(&Process::nil()).is_empty());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |step: f64| {
            let p = proc_("{1 | v' = v}");
            let cfg = IntegratorConfig { step, ..Default::default() };
            let e = continuous_step(&p, 1.0, &cfg).unwrap();
            (e.full.unwrap().right_limit()[0] - 1f64.exp()).abs()
        };
        let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
        assert!(e1 / e2 >= 12.0 && e2 / e3 >= 12.0, "{e1} {e2} {e3}");
    }

    #[test]
    fn zero_duration_stop() {
        let p = proc_("{0 | c' = 1 & c > 0}(z) . done!<z>");
        let e = continuous_step(&p, 1.0, &IntegratorConfig::default()).unwrap();
        assert!(e.zero_duration && e.label.is_none());
    }
}
