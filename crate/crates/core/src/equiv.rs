//! Behavioural equivalences: strong and weak bisimulation on finite
//! discrete fragments, approximate bisimulation by co-simulation, and the
//! RK4 discretisation of a timed continuous prefix.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::flows::{apply_op, fold};
use crate::kernel::{discrete_transitions, ready_set, Agent, KernelError, Label, DEFAULT_DEPTH};
use crate::sim::{gc, simulate, EventKind, Policy, SimConfig, SimResult, Termination, Trace};
use crate::syntax::{
    canonical_bits, congruence_canonical, free_names, substitute, BoolExpr, CProc, Expr, Name, Ode, Process,
    ReadySet, Subst,
};

#[derive(Debug, Error)]
pub enum EquivError {
    #[error("process has continuous prefixes; only discrete fragments have a finite LTS")]
    ContinuousUnsupported,
    #[error("process contains unresolved definitions")]
    Unresolved,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("observed variable `{0}` never appears in the runs of {1}")]
    UnknownObservation(String, &'static str),
    #[error("duration must be positive (got {0})")]
    BadDuration(f64),
    #[error("step must be positive (got {0})")]
    BadStep(f64),
    #[error("field has {field} entries for {vars} variables and {init} initial values")]
    Shape { init: usize, vars: usize, field: usize },
    #[error("field mentions `{0}`, which is not one of its variables")]
    ForeignName(String),
}

// ---------------------------------------------------------------------------
// Labelled transition systems

/// A ground payload value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ground {
    Num(u64),
    Name(Name),
    Other(String),
}

impl Ground {
    fn of(e: &Expr) -> Ground {
        match fold(e) {
            Expr::Num(v) => Ground::Num(canonical_bits(v)),
            Expr::Var(n) => Ground::Name(n),
            other => Ground::Other(format!("{other:?}")),
        }
    }
}

impl fmt::Display for Ground {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ground::Num(b) => write!(f, "{}", f64::from_bits(*b)),
            Ground::Name(n) => write!(f, "{n}"),
            Ground::Other(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Act {
    Tau,
    In(Name, Vec<Ground>),
    Out(Name, Vec<Ground>),
}

impl fmt::Display for Act {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[Ground]| v.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ");
        match self {
            Act::Tau => write!(f, "τ"),
            Act::In(c, v) => write!(f, "{c}({})", list(v)),
            Act::Out(c, v) => write!(f, "{c}!<{}>", list(v)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LtsBounds {
    pub max_states: usize,
    pub depth: usize,
    /// Collect garbage (`P ∥ 0`, unused restrictions) in every state.
    pub gc: bool,
}

impl Default for LtsBounds {
    fn default() -> Self {
        LtsBounds { max_states: 20_000, depth: DEFAULT_DEPTH, gc: false }
    }
}

#[derive(Clone, Debug)]
pub struct Lts {
    pub states: Vec<Process>,
    pub edges: Vec<Vec<(Act, usize)>>,
    pub initial: usize,
    /// Some bound was hit; the LTS is an under-approximation.
    pub truncated: bool,
}

impl Lts {
    pub fn transition_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }
}

/// Names `ext_0, ext_1, …` used for extruded names, shared by every LTS so
/// that bound outputs of different processes can be compared.
fn ext_name(k: usize) -> Name {
    static POOL: OnceLock<Mutex<Vec<Name>>> = OnceLock::new();
    let mut pool = POOL.get_or_init(|| Mutex::new(Vec::new())).lock().unwrap();
    while pool.len() <= k {
        let n = pool.len();
        pool.push(Name::fresh(&format!("ext_{n}")));
    }
    pool[k].clone()
}

fn tuples(universe: &[Expr], k: usize) -> Vec<Vec<Expr>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| {
                universe.iter().map(move |v| {
                    let mut t = t.clone();
                    t.push(v.clone());
                    t
                })
            })
            .collect();
    }
    out
}

/// One-step successors of a discrete state, with inputs instantiated over
/// `universe` and extruded names replaced by the shared `ext_k` names.
pub fn successors(p: &Process, universe: &[Expr], depth: usize) -> (Vec<(Act, Process)>, bool) {
    let ts = discrete_transitions(p, depth);
    let mut out = Vec::new();
    for t in ts.list {
        match (&t.label, t.agent) {
            (Label::Tau, Agent::Proc(q)) => out.push((Act::Tau, q)),
            (Label::In(c), Agent::Abs { binders, body }) => {
                for vals in tuples(universe, binders.len()) {
                    let Ok(s) = Subst::zip(&binders, &vals) else { continue };
                    if let Ok(q) = substitute(&body, &s) {
                        out.push((Act::In(c.clone(), vals.iter().map(Ground::of).collect()), q));
                    }
                }
            }
            (Label::Out(c), Agent::Conc { restricted, payload, body }) => {
                let taken = free_names(p);
                let mut pairs = Vec::new();
                let mut k = 0;
                for r in &restricted {
                    while taken.contains(&ext_name(k)) {
                        k += 1;
                    }
                    pairs.push((r.clone(), ext_name(k)));
                    k += 1;
                }
                let s = Subst::rename(&pairs);
                let Ok(q) = substitute(&body, &s) else { continue };
                let vals: Vec<Ground> = payload.iter().map(|e| Ground::of(&e.subst(&s))).collect();
                out.push((Act::Out(c.clone(), vals), q));
            }
            _ => unreachable!("kernel pairs labels with matching agents"),
        }
    }
    (out, ts.truncated)
}

/// Reachable canonical states of a discrete process.
pub fn build_lts(p: &Process, universe: &[Expr], bounds: &LtsBounds) -> Result<Lts, EquivError> {
    if p.has_continuous() {
        return Err(EquivError::ContinuousUnsupported);
    }
    if p.has_calls() {
        return Err(EquivError::Unresolved);
    }
    let prep = |q: &Process| if bounds.gc { gc(q) } else { q.clone() };
    let start = prep(p);
    let mut index: HashMap<CProc, usize> = HashMap::new();
    index.insert(congruence_canonical(&start), 0);
    let mut lts = Lts { states: vec![start], edges: vec![Vec::new()], initial: 0, truncated: false };
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let (succ, truncated) = successors(&lts.states[i], universe, bounds.depth);
        lts.truncated |= truncated;
        let mut edges = Vec::new();
        for (act, q) in succ {
            let q = prep(&q);
            let key = congruence_canonical(&q);
            let j = match index.get(&key) {
                Some(&j) => j,
                None => {
                    if lts.states.len() >= bounds.max_states {
                        lts.truncated = true;
                        continue;
                    }
                    let j = lts.states.len();
                    index.insert(key, j);
                    lts.states.push(q);
                    lts.edges.push(Vec::new());
                    queue.push_back(j);
                    j
                }
            };
            edges.push((act, j));
        }
        edges.sort();
        edges.dedup();
        lts.edges[i] = edges;
    }
    Ok(lts)
}

// ---------------------------------------------------------------------------
// Partition refinement

/// The coarsest bisimulation over the disjoint union of two LTSs.
#[derive(Clone, Debug)]
pub struct Bisimulation {
    pub related: bool,
    /// Block of each state; states of the first LTS come first.
    pub blocks: Vec<usize>,
    pub left_states: usize,
}

impl Bisimulation {
    pub fn relates(&self, i: usize, j: usize) -> bool {
        self.blocks[i] == self.blocks[self.left_states + j]
    }

    /// All related pairs `(i, j)` with `i` in the first and `j` in the
    /// second LTS.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let right = self.blocks.len() - self.left_states;
        let mut out = Vec::new();
        for i in 0..self.left_states {
            for j in 0..right {
                if self.relates(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn block_count(&self) -> usize {
        self.blocks.iter().collect::<BTreeSet<_>>().len()
    }
}

/// Signature refinement: split blocks by the set of (action, target block)
/// pairs until stable.
fn refine(edges: &[Vec<(Act, usize)>]) -> Vec<usize> {
    let n = edges.len();
    let mut blocks = vec![0usize; n];
    let mut count = 1;
    loop {
        let mut ids: HashMap<(usize, Vec<(&Act, usize)>), usize> = HashMap::new();
        let mut next = Vec::with_capacity(n);
        for (s, es) in edges.iter().enumerate() {
            let mut sig: Vec<(&Act, usize)> = es.iter().map(|(a, t)| (a, blocks[*t])).collect();
            sig.sort();
            sig.dedup();
            let fresh = ids.len();
            next.push(*ids.entry((blocks[s], sig)).or_insert(fresh));
        }
        let new_count = ids.len();
        blocks = next;
        if new_count == count {
            return blocks;
        }
        count = new_count;
    }
}

fn union_edges(a: &Lts, b: &Lts) -> Vec<Vec<(Act, usize)>> {
    let off = a.states.len();
    let mut edges = a.edges.clone();
    edges.extend(b.edges.iter().map(|es| es.iter().map(|(x, t)| (x.clone(), t + off)).collect()));
    edges
}

fn verdict(blocks: Vec<usize>, a: &Lts, b: &Lts) -> Bisimulation {
    let left_states = a.states.len();
    let related = blocks[a.initial] == blocks[left_states + b.initial];
    Bisimulation { related, blocks, left_states }
}

pub fn strong_bisim(a: &Lts, b: &Lts) -> Bisimulation {
    verdict(refine(&union_edges(a, b)), a, b)
}

fn tau_closure(edges: &[Vec<(Act, usize)>]) -> Vec<Vec<usize>> {
    (0..edges.len())
        .map(|s| {
            let mut seen = BTreeSet::from([s]);
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for (a, t) in &edges[u] {
                    if *a == Act::Tau && seen.insert(*t) {
                        stack.push(*t);
                    }
                }
            }
            seen.into_iter().collect()
        })
        .collect()
}

/// `⇒` saturation: `s =τ=> t` for every τ*-reachable `t` (including `s`)
/// and `s =a=> t` for `τ* a τ*`.
pub fn saturate(edges: &[Vec<(Act, usize)>]) -> Vec<Vec<(Act, usize)>> {
    let close = tau_closure(edges);
    (0..edges.len())
        .map(|s| {
            let mut out: BTreeSet<(Act, usize)> = close[s].iter().map(|t| (Act::Tau, *t)).collect();
            for &t in &close[s] {
                for (a, u) in &edges[t] {
                    if *a != Act::Tau {
                        for &w in &close[*u] {
                            out.insert((a.clone(), w));
                        }
                    }
                }
            }
            out.into_iter().collect()
        })
        .collect()
}

pub fn weak_bisim(a: &Lts, b: &Lts) -> Bisimulation {
    verdict(refine(&saturate(&union_edges(a, b))), a, b)
}

// ---------------------------------------------------------------------------
// Random discrete terms

/// Shape of generated terms.
#[derive(Clone, Debug)]
pub struct TermGen {
    pub chans: Vec<Name>,
    pub values: Vec<f64>,
    pub max_prefixes: usize,
}

impl TermGen {
    pub fn new(chans: &[Name], max_prefixes: usize) -> TermGen {
        TermGen { chans: chans.to_vec(), values: vec![0.0, 1.0], max_prefixes }
    }

    pub fn term(&self, rng: &mut impl Rng) -> Process {
        let budget = rng.gen_range(0..=self.max_prefixes);
        self.gen(rng, budget, &self.chans, &[])
    }

    /// A term whose top level is a sum (possibly empty).
    pub fn sum(&self, rng: &mut impl Rng) -> Process {
        let budget = rng.gen_range(0..=self.max_prefixes);
        self.gen_sum(rng, budget, &self.chans, &[])
    }

    fn payload(&self, rng: &mut impl Rng, vars: &[Name]) -> Expr {
        if !vars.is_empty() && rng.gen_bool(0.4) {
            Expr::Var(vars[rng.gen_range(0..vars.len())].clone())
        } else {
            Expr::Num(self.values[rng.gen_range(0..self.values.len())])
        }
    }

    fn gen(&self, rng: &mut impl Rng, budget: usize, chans: &[Name], vars: &[Name]) -> Process {
        if budget == 0 {
            return Process::nil();
        }
        match rng.gen_range(0..10) {
            0..=5 => self.gen_sum(rng, budget, chans, vars),
            6..=7 if budget >= 2 => {
                let k = rng.gen_range(1..budget);
                Process::par(self.gen(rng, k, chans, vars), self.gen(rng, budget - k, chans, vars))
            }
            _ => {
                let x = Name::fresh("r");
                let mut inner = chans.to_vec();
                inner.push(x.clone());
                Process::res(x, self.gen(rng, budget, &inner, vars))
            }
        }
    }

    fn gen_sum(&self, rng: &mut impl Rng, budget: usize, chans: &[Name], vars: &[Name]) -> Process {
        if budget == 0 {
            return Process::nil();
        }
        if budget >= 2 && rng.gen_bool(0.25) {
            let k = rng.gen_range(1..budget);
            let a = self.gen_sum(rng, k, chans, vars);
            let b = self.gen_sum(rng, budget - k, chans, vars);
            return Process::plus(&a, &b).unwrap();
        }
        let chan = chans[rng.gen_range(0..chans.len())].clone();
        match rng.gen_range(0..4) {
            0 => Process::tau(self.gen(rng, budget - 1, chans, vars)),
            1 => {
                let y = Name::fresh("y");
                let mut inner = vars.to_vec();
                inner.push(y.clone());
                Process::input(&chan, vec![y], self.gen(rng, budget - 1, chans, &inner))
            }
            2 => {
                let e = self.payload(rng, vars);
                Process::output(&chan, vec![e], self.gen(rng, budget - 1, chans, vars))
            }
            _ => {
                let b = BoolExpr::lt(self.payload(rng, vars), Expr::Num(1.0));
                Process::guard(b, self.gen(rng, budget - 1, chans, vars))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Approximate bisimulation by co-simulation

/// A co-simulation scenario: a context composed in parallel with both
/// processes (typically a disturbance profile), plus a scheduling policy.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub label: String,
    pub context: Process,
    pub policy: Policy,
    pub seed: u64,
}

impl Scenario {
    pub fn plain() -> Scenario {
        Scenario { label: "plain".into(), context: Process::nil(), policy: Policy::FirstEnabled, seed: 0 }
    }

    pub fn with_context(label: &str, context: Process) -> Scenario {
        Scenario { label: label.into(), context, policy: Policy::FirstEnabled, seed: 0 }
    }
}

/// A piecewise-constant input: `u` holds each value for its duration; the
/// last piece lasts forever.
pub fn disturbance(u: &Name, pieces: &[(f64, f64)]) -> Process {
    let Some((&(_, last), init)) = pieces.split_last() else { return Process::nil() };
    let forever = Ode {
        init: vec![Expr::Num(last)],
        vars: vec![u.clone()],
        field: vec![Expr::Num(0.0)],
        boundary: BoolExpr::tt(),
        ready: ReadySet::new(),
        binders: Vec::new(),
    };
    init.iter().rev().fold(Process::cont(forever, Process::nil()), |next, &(d, v)| {
        let c = Name::fresh("c");
        let ode = Ode {
            init: vec![Expr::Num(0.0), Expr::Num(v)],
            vars: vec![c.clone(), u.clone()],
            field: vec![Expr::Num(1.0), Expr::Num(0.0)],
            boundary: BoolExpr::lt(Expr::var(&c), Expr::Num(d)),
            ready: ReadySet::new(),
            binders: Vec::new(),
        };
        Process::res(c, Process::cont(ode, next))
    })
}

/// `pieces` seeded uniform values in `[lo, hi]`, each held for `len`.
pub fn random_pieces(seed: u64, pieces: usize, len: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pieces).map(|_| (len, rng.gen_range(lo..=hi))).collect()
}

#[derive(Clone, Debug)]
pub struct ApproxConfig {
    pub eps: f64,
    pub delta: f64,
    /// Pairs of compared variables, by spelling: (left run, right run).
    pub observe: Vec<(String, String)>,
    pub sim: SimConfig,
    /// Numerical slack added to both ε and δ.
    pub slack: f64,
}

impl ApproxConfig {
    pub fn new(eps: f64, delta: f64, observe: &[(&str, &str)], sim: SimConfig) -> ApproxConfig {
        ApproxConfig {
            eps,
            delta,
            observe: observe.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            sim,
            slack: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub label: String,
    /// Largest observed distance over all recorded samples.
    pub max_distance: f64,
    /// Largest distance at segment boundaries of either run.
    pub max_distance_alignment: f64,
    /// Largest distance at boundaries shared by both runs.
    pub max_distance_shared: f64,
    pub skew: f64,
    pub end_left: f64,
    pub end_right: f64,
    pub alignment_points: usize,
    pub violation: Option<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub time: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub scenario: usize,
    pub label: String,
    pub violation: Violation,
    pub left: Trace,
    pub right: Trace,
}

#[derive(Clone, Debug, Serialize)]
pub struct Coverage {
    pub scenarios: usize,
    pub alignment_points: usize,
    pub simulated_time: f64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ApproxStatus {
    Refuted(Box<Counterexample>),
    EmpiricallyConsistent(Coverage),
}

#[derive(Clone, Debug, Serialize)]
pub struct ApproxVerdict {
    pub status: ApproxStatus,
    pub eps: f64,
    pub delta: f64,
    pub max_distance: f64,
    pub max_distance_alignment: f64,
    pub max_distance_shared: f64,
    pub max_skew: f64,
    pub scenarios: Vec<ScenarioReport>,
    pub warnings: Vec<String>,
}

impl ApproxVerdict {
    pub fn consistent(&self) -> bool {
        matches!(self.status, ApproxStatus::EmpiricallyConsistent(_))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts serialize")
    }
}

struct Compared {
    report: ScenarioReport,
    left: SimResult,
    right: SimResult,
    warnings: Vec<String>,
}

fn boundaries(r: &SimResult) -> Vec<f64> {
    let mut out = Vec::new();
    for e in r.trace.of_kind(EventKind::Evolve) {
        out.push(e.time);
        out.push(e.time + e.duration.unwrap_or(0.0));
    }
    out
}

fn finished(r: &SimResult) -> bool {
    r.termination != Termination::Horizon
}

fn ready_display(r: &ReadySet) -> BTreeSet<String> {
    r.iter().map(|(n, p)| format!("{}{:?}", n.display(), p)).collect()
}

fn compare(p: &Process, q: &Process, sc: &Scenario, cfg: &ApproxConfig) -> Result<Compared, EquivError> {
    let mut sim = cfg.sim.clone();
    sim.policy = sc.policy;
    sim.seed = sc.seed;
    sim.observe_all = true;
    let left = simulate(&Process::par(p.clone(), sc.context.clone()), &sim)?;
    let right = simulate(&Process::par(q.clone(), sc.context.clone()), &sim)?;
    let mut warnings = Vec::new();

    let mut cols = Vec::new();
    for (a, b) in &cfg.observe {
        let ca = left.trajectory.column_of(a).ok_or_else(|| EquivError::UnknownObservation(a.clone(), "the left process"))?;
        let cb = right.trajectory.column_of(b).ok_or_else(|| EquivError::UnknownObservation(b.clone(), "the right process"))?;
        cols.push((ca, cb));
    }
    let end = left.final_time.min(right.final_time);
    let distance = |t: f64| -> Option<f64> {
        let mut d: Option<f64> = None;
        for &(ca, cb) in &cols {
            let (x, y) = (left.trajectory.value_at(ca, t)?, right.trajectory.value_at(cb, t)?);
            d = Some(d.unwrap_or(0.0).max((x - y).abs()));
        }
        Some(d.unwrap_or(0.0))
    };

    let (bl, br) = (boundaries(&left), boundaries(&right));
    let key = |t: f64| (t * 1e6).round() as i64;
    let left_keys: BTreeSet<i64> = bl.iter().map(|t| key(*t)).collect();
    let right_keys: BTreeSet<i64> = br.iter().map(|t| key(*t)).collect();
    let mut points: BTreeMap<i64, f64> = BTreeMap::new();
    for t in bl.iter().chain(&br) {
        if *t <= end + cfg.slack {
            points.entry(key(*t)).or_insert(*t);
        }
    }

    let tol = cfg.eps + cfg.slack;
    let mut violation: Option<Violation> = None;
    let (mut max_align, mut max_shared) = (0.0f64, 0.0f64);
    let mut missing = false;
    for (k, t) in &points {
        let t = t.min(end);
        let Some(d) = distance(t) else {
            missing = true;
            continue;
        };
        max_align = max_align.max(d);
        if left_keys.contains(k) && right_keys.contains(k) {
            max_shared = max_shared.max(d);
        }
        if d > tol && violation.is_none() {
            violation = Some(Violation { time: t, reason: format!("observed distance {d} exceeds ε = {}", cfg.eps) });
        }
    }
    if missing && !cols.is_empty() {
        warnings.push(format!("{}: an observed variable is absent at some alignment points", sc.label));
    }

    let mut max_dense = max_align;
    let mut grid: Vec<f64> = left.trajectory.times.iter().chain(&right.trajectory.times).copied().filter(|t| *t <= end).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    for t in grid {
        if let Some(d) = distance(t) {
            max_dense = max_dense.max(d);
        }
    }

    let skew = if finished(&left) || finished(&right) { (left.final_time - right.final_time).abs() } else { 0.0 };
    if violation.is_none() && skew > cfg.delta + cfg.slack {
        violation = Some(Violation {
            time: end,
            reason: format!(
                "total evolution {} vs {} differs by more than δ = {}",
                left.final_time, right.final_time, cfg.delta
            ),
        });
    }
    if violation.is_none() && finished(&left) && finished(&right) {
        let (rl, rr) = (ready_display(&ready_set(&left.final_state)), ready_display(&ready_set(&right.final_state)));
        if rl != rr {
            violation = Some(Violation {
                time: end,
                reason: format!("final interfaces differ: {rl:?} vs {rr:?}"),
            });
        }
    }

    let ready_of = |r: &SimResult| -> BTreeMap<i64, Vec<String>> {
        r.trace.of_kind(EventKind::Evolve).map(|e| (key(e.time), e.ready.clone())).collect()
    };
    let (ra, rb) = (ready_of(&left), ready_of(&right));
    for (k, ready) in &ra {
        if let Some(other) = rb.get(k) {
            if other != ready {
                warnings.push(format!("{}: ready sets differ at t = {}", sc.label, *k as f64 / 1e6));
                break;
            }
        }
    }

    let report = ScenarioReport {
        label: sc.label.clone(),
        max_distance: max_dense,
        max_distance_alignment: max_align,
        max_distance_shared: max_shared,
        skew,
        end_left: left.final_time,
        end_right: right.final_time,
        alignment_points: points.len(),
        violation,
    };
    Ok(Compared { report, left, right, warnings })
}

/// Co-simulate `p` and `q` under every scenario and compare observed
/// states at segment boundaries and total evolution times. Refutation is
/// sound for the simulated runs; consistency is evidence only.
pub fn approx_bisim(p: &Process, q: &Process, scenarios: &[Scenario], cfg: &ApproxConfig) -> Result<ApproxVerdict, EquivError> {
    let results: Vec<Result<Compared, EquivError>> = scenarios.par_iter().map(|sc| compare(p, q, sc, cfg)).collect();
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    let mut refuted: Option<Counterexample> = None;
    let (mut points, mut simulated) = (0, 0.0);
    for (i, r) in results.into_iter().enumerate() {
        let c = r?;
        points += c.report.alignment_points;
        simulated += c.left.final_time.max(c.right.final_time);
        warnings.extend(c.warnings);
        if refuted.is_none() {
            if let Some(v) = &c.report.violation {
                refuted = Some(Counterexample {
                    scenario: i,
                    label: c.report.label.clone(),
                    violation: v.clone(),
                    left: c.left.trace.clone(),
                    right: c.right.trace.clone(),
                });
            }
        }
        reports.push(c.report);
    }
    let max = |f: fn(&ScenarioReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    let status = match refuted {
        Some(cx) => ApproxStatus::Refuted(Box::new(cx)),
        None => ApproxStatus::EmpiricallyConsistent(Coverage {
            scenarios: scenarios.len(),
            alignment_points: points,
            simulated_time: simulated,
        }),
    };
    Ok(ApproxVerdict {
        status,
        eps: cfg.eps,
        delta: cfg.delta,
        max_distance: max(|r| r.max_distance),
        max_distance_alignment: max(|r| r.max_distance_alignment),
        max_distance_shared: max(|r| r.max_distance_shared),
        max_skew: max(|r| r.skew),
        scenarios: reports,
        warnings,
    })
}

/// Re-run the scenario of a counterexample and check that it violates the
/// same condition at the same time.
pub fn replay(p: &Process, q: &Process, scenarios: &[Scenario], cfg: &ApproxConfig, cx: &Counterexample) -> Result<bool, EquivError> {
    let c = compare(p, q, &scenarios[cx.scenario], cfg)?;
    Ok(c.report.violation.as_ref() == Some(&cx.violation) && c.left.trace.to_jsonl() == cx.left.to_jsonl())
}

// ---------------------------------------------------------------------------
// Discretisation

/// Symbolic RK4 increment `Φ(y⃗, h)` of `v⃗' = field`, evaluated at `y⃗`.
pub fn rk4_increment(vars: &[Name], field: &[Expr], y: &[Expr], h: &Expr) -> Vec<Expr> {
    let at = |point: &[Expr]| -> Vec<Expr> {
        let s = Subst::zip(vars, point).expect("one value per variable");
        field.iter().map(|e| e.subst(&s)).collect()
    };
    let shift = |k: &[Expr], c: Expr| -> Vec<Expr> {
        y.iter().zip(k).map(|(yi, ki)| Expr::add(yi.clone(), Expr::mul(c.clone(), ki.clone()))).collect()
    };
    let half = Expr::div(h.clone(), Expr::Num(2.0));
    let k1 = at(y);
    let k2 = at(&shift(&k1, half.clone()));
    let k3 = at(&shift(&k2, half));
    let k4 = at(&shift(&k3, h.clone()));
    (0..vars.len())
        .map(|i| {
            let mid = Expr::mul(Expr::Num(2.0), Expr::add(k2[i].clone(), k3[i].clone()));
            let sum = Expr::add(Expr::add(k1[i].clone(), mid), k4[i].clone());
            Expr::div(sum, Expr::Num(6.0))
        })
        .collect()
}

/// `step(y⃗, h) ≜ (νc){0, y⃗ | c' = 1, v⃗' = 0 & c < h}`.
fn step(vars: &[Name], y: &[Expr], h: Expr, cont: Process) -> Process {
    let c = Name::fresh("c");
    let mut init = vec![Expr::Num(0.0)];
    init.extend(y.iter().cloned());
    let mut all = vec![c.clone()];
    all.extend(vars.iter().cloned());
    let mut field = vec![Expr::Num(1.0)];
    field.extend(vars.iter().map(|_| Expr::Num(0.0)));
    let ode = Ode { init, vars: all, field, boundary: BoolExpr::lt(Expr::var(&c), h), ready: ReadySet::new(), binders: Vec::new() };
    Process::res(c, Process::cont(ode, cont))
}

/// The stepped recursion approximating `{init | vars' = field}` for `d`
/// time units with step `delta`. Guards on `z` carry a relative tolerance
/// of 1e-9 so that accumulated rounding in `z` neither adds nor drops a
/// step. The recursion channel is spelled `rk`; its payloads are the
/// discrete states.
pub fn discretize(init: &[Expr], vars: &[Name], field: &[Expr], d: f64, delta: f64) -> Result<Process, EquivError> {
    if !(d > 0.0) {
        return Err(EquivError::BadDuration(d));
    }
    if !(delta > 0.0) {
        return Err(EquivError::BadStep(delta));
    }
    if init.len() != vars.len() || field.len() != vars.len() {
        return Err(EquivError::Shape { init: init.len(), vars: vars.len(), field: field.len() });
    }
    for e in field {
        if let Some(n) = e.names().into_iter().find(|n| !vars.contains(n)) {
            return Err(EquivError::ForeignName(n.display().to_string()));
        }
    }
    let x = Name::fresh("rk");
    let ys: Vec<Name> = vars.iter().map(|v| Name::fresh(&format!("{}_y", v.display()))).collect();
    let z = Name::fresh("z");
    let y: Vec<Expr> = ys.iter().map(Expr::var).collect();
    let eta = delta * 1e-9;
    let dz = Expr::Num(delta);

    let phi = rk4_increment(vars, field, &y, &dz);
    let mut next: Vec<Expr> = y.iter().zip(&phi).map(|(yi, k)| Expr::add(yi.clone(), Expr::mul(k.clone(), dz.clone()))).collect();
    next.push(Expr::sub(Expr::var(&z), dz.clone()));

    let full = Process::guard(
        BoolExpr::ge(Expr::var(&z), Expr::Num(delta - eta)),
        step(vars, &y, dz.clone(), Process::output(&x, next, Process::nil())),
    );
    let partial = Process::guard(
        BoolExpr::and(BoolExpr::lt(Expr::Num(eta), Expr::var(&z)), BoolExpr::lt(Expr::var(&z), Expr::Num(delta - eta))),
        step(vars, &y, Expr::var(&z), Process::nil()),
    );
    let halt = Process::guard(
        BoolExpr::and(BoolExpr::le(Expr::var(&z), Expr::Num(eta)), BoolExpr::ge(Expr::var(&z), Expr::Num(-eta))),
        Process::nil(),
    );
    let body = Process::plus(&Process::plus(&full, &partial).unwrap(), &halt).unwrap();
    let mut params = ys;
    params.push(z);
    let mut args = init.to_vec();
    args.push(Expr::Num(d));
    Ok(Process::mu(x, params, body, args))
}

/// Discrete states carried by the recursion of a discretised run, in order.
pub fn rk_states(trace: &Trace) -> Vec<Vec<f64>> {
    trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Sync && e.chan.as_deref() == Some("rk"))
        .map(|e| {
            let vals: Vec<f64> = e.values.iter().filter_map(|v| v.as_num()).collect();
            vals[..vals.len() - 1].to_vec()
        })
        .collect()
}

fn eval_field(field: &[Expr], vars: &[Name], at: &[f64]) -> Option<Vec<f64>> {
    fn ev(e: &Expr, vars: &[Name], at: &[f64]) -> Option<f64> {
        match e {
            Expr::Num(v) => Some(*v),
            Expr::Var(n) => vars.iter().position(|v| v == n).map(|i| at[i]),
            Expr::Op(op, args) => {
                let xs: Option<Vec<f64>> = args.iter().map(|a| ev(a, vars, at)).collect();
                apply_op(*op, &xs?)
            }
            Expr::Str(_) => None,
        }
    }
    field.iter().map(|e| ev(e, vars, at)).collect()
}

/// Largest difference quotient `‖f(c₁) − f(c₂)‖ / ‖c₁ − c₂‖` (max-norm)
/// over `samples` seeded random pairs in the box `[lo, hi]`.
pub fn estimate_lipschitz(vars: &[Name], field: &[Expr], lo: &[f64], hi: &[f64], samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = || -> Vec<f64> { lo.iter().zip(hi).map(|(a, b)| if a < b { rng.gen_range(*a..=*b) } else { *a }).collect() };
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(f64::abs).fold(0.0, f64::max);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let (c1, c2) = (point(), point());
        let (Some(f1), Some(f2)) = (eval_field(field, vars, &c1), eval_field(field, vars, &c2)) else { continue };
        let dc = norm(&mut c1.iter().zip(&c2).map(|(a, b)| a - b));
        if dc > 0.0 {
            best = best.max(norm(&mut f1.iter().zip(&f2).map(|(a, b)| a - b)) / dc);
        }
    }
    best
}

/// Step size heuristic `δ = ε·L / (e^{L·d} − 1) / 10`.
pub fn suggest_step(eps: f64, lipschitz: f64, d: f64) -> f64 {
    if lipschitz <= 0.0 {
        return d;
    }
    (eps * lipschitz / ((lipschitz * d).exp() - 1.0) / 10.0).min(d)
}

/// Evaluate an operator tree built by [`rk4_increment`] on numbers.
pub fn eval_numeric(e: &Expr) -> Option<f64> {
    match fold(e) {
        Expr::Num(v) => Some(v),
        _ => None,
    }
}
