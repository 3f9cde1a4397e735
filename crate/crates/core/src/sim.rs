//! Closed-system simulation: urgent discrete steps interleaved with
//! continuous evolution, with traces, trajectories and Zeno detection.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::flows::{unique_labels, Flow};
use crate::kernel::{
    continuous_step, discrete_transitions, has_active_ode, ready_set, Agent, IntegratorConfig, KernelError, Origin, Transition,
    DEFAULT_DEPTH,
};
use crate::syntax::{free_names, Expr, Name, Prefix, Process};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Always the first enabled transition in source order.
    FirstEnabled,
    /// Uniform choice from a generator seeded with [`SimConfig::seed`].
    RandomSeeded,
    /// Explore every choice up to this many branching points.
    Exhaustive(usize),
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::FirstEnabled => write!(f, "first"),
            Policy::RandomSeeded => write!(f, "random"),
            Policy::Exhaustive(d) => write!(f, "exhaustive:{d}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZenoConfig {
    pub max_events: usize,
    pub window: f64,
}

impl Default for ZenoConfig {
    fn default() -> Self {
        ZenoConfig { max_events: 1000, window: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    pub policy: Policy,
    pub seed: u64,
    pub zeno: ZenoConfig,
    pub depth: usize,
    /// Record restricted variables in the trajectory as well.
    pub observe_all: bool,
    /// Record the trajectory at all.
    pub record: bool,
    /// Upper bound on the number of runs kept by [`Policy::Exhaustive`].
    pub max_runs: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 10.0,
            integrator: IntegratorConfig::default(),
            policy: Policy::FirstEnabled,
            seed: 0,
            zeno: ZenoConfig::default(),
            depth: DEFAULT_DEPTH,
            observe_all: false,
            record: true,
            max_runs: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Tau,
    Sync,
    Sense,
    Actuate,
    Evolve,
    Stop,
    ZenoAbort,
    Deadlock,
}

/// A payload value: a number or a (mobile) name.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Val {
    Num(f64),
    Name(String),
}

impl Val {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Val::Num(v) => Some(*v),
            Val::Name(_) => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chan: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<Val>,
    /// Free names of the discrete thread on the other side of the action.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ready: Vec<String>,
    /// Variables of a stopped ODE.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub vars: Vec<String>,
    #[serde(skip)]
    pub chan_name: Option<Name>,
}

impl Event {
    fn new(time: f64, kind: EventKind) -> Event {
        Event {
            time,
            kind,
            chan: None,
            values: Vec::new(),
            provenance: Vec::new(),
            duration: None,
            ready: Vec::new(),
            vars: Vec::new(),
            chan_name: None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, EventKind::Tau | EventKind::Sync | EventKind::Sense | EventKind::Actuate | EventKind::Stop)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Trace {
    pub events: Vec<Event>,
}

impl Trace {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn of_kind(&self, k: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == k)
    }

    pub fn total_evolved(&self) -> f64 {
        self.of_kind(EventKind::Evolve).filter_map(|e| e.duration).sum()
    }
}

/// Concatenated flows of a run; columns appear as variables come into scope.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub names: Vec<Name>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<Option<f64>>>,
    /// Times at which segments meet.
    pub events: Vec<f64>,
}

impl Trajectory {
    fn column(&mut self, n: &Name) -> usize {
        match self.names.iter().position(|m| m == n) {
            Some(i) => i,
            None => {
                self.names.push(n.clone());
                self.names.len() - 1
            }
        }
    }

    pub fn append(&mut self, t0: f64, f: &Flow) {
        let cols: Vec<usize> = f.names().iter().map(|n| self.column(n)).collect();
        let width = self.names.len();
        for (k, (t, s)) in f.grid().iter().zip(f.samples()).enumerate() {
            let time = t0 + t;
            let merge = k == 0 && self.times.last().is_some_and(|last| *last == time);
            if !merge {
                self.times.push(time);
                self.rows.push(vec![None; width]);
            }
            let row = self.rows.last_mut().unwrap();
            row.resize(width, None);
            for (c, v) in cols.iter().zip(s) {
                row[*c] = Some(*v);
            }
        }
        self.events.push(t0);
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Samples of the first variable spelled `display`.
    pub fn series(&self, display: &str) -> Vec<(f64, f64)> {
        let Some(i) = self.names.iter().position(|n| n.display() == display) else { return Vec::new() };
        self.times
            .iter()
            .zip(&self.rows)
            .filter_map(|(t, r)| r.get(i).copied().flatten().map(|v| (*t, v)))
            .collect()
    }

    pub fn column_of(&self, display: &str) -> Option<usize> {
        self.names.iter().position(|n| n.display() == display)
    }

    /// Value of column `col` at time `t`, right-continuous at segment
    /// junctions and linear in between samples.
    pub fn value_at(&self, col: usize, t: f64) -> Option<f64> {
        let get = |i: usize| self.rows[i].get(col).copied().flatten();
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => get(i),
            Err(0) => None,
            Err(i) if i == self.times.len() => None,
            Err(i) => {
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let (a, b) = (get(i - 1)?, get(i)?);
                Some(a + (b - a) * (t - t0) / (t1 - t0))
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for l in unique_labels(&self.names) {
            out.push(',');
            out.push_str(&l);
        }
        out.push('\n');
        for (t, r) in self.times.iter().zip(&self.rows) {
            let _ = write!(out, "{:.16e}", t);
            for i in 0..self.names.len() {
                out.push(',');
                if let Some(v) = r.get(i).copied().flatten() {
                    let _ = write!(out, "{:.16e}", v);
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Inaction,
    Deadlock,
    ZenoAbort,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub trace: Trace,
    pub trajectory: Trajectory,
    pub final_state: Process,
    pub final_time: f64,
    pub termination: Termination,
    pub truncated: bool,
    pub diagnostics: Vec<String>,
    /// Further maximal runs found by [`Policy::Exhaustive`].
    pub alternatives: Vec<SimResult>,
}

impl SimResult {
    /// Current values of every evolving ODE in the final state, by spelling
    /// (later duplicates win).
    pub fn ode_values(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        collect_ode_values(&self.final_state, &mut out);
        out
    }
}

fn collect_ode_values(p: &Process, out: &mut BTreeMap<String, f64>) {
    match p {
        Process::Sum(bs) => {
            for b in bs.iter() {
                if let Prefix::Cont(ode) = &b.prefix {
                    for (v, e) in ode.vars.iter().zip(&ode.init) {
                        if let Expr::Num(x) = e {
                            out.insert(v.display().to_string(), *x);
                        }
                    }
                }
            }
        }
        Process::Res(_, q) | Process::Rep(q) => collect_ode_values(q, out),
        Process::Par(a, b) => {
            collect_ode_values(a, out);
            collect_ode_values(b, out);
        }
        Process::Call(..) => {}
    }
}

/// Garbage collection by the bisimulation laws `P ∥ 0 ∼ P`, `(νx)P ∼ P` for
/// `x ∉ F(P)` and `!0 ∼ 0`.
pub fn gc(p: &Process) -> Process {
    gc_free(p).0
}

/// `gc` together with the free names of its result, so that each
/// restriction is checked without rescanning its body.
fn gc_free(p: &Process) -> (Process, BTreeSet<Name>) {
    match p {
        Process::Par(a, b) => {
            let ((a, mut fa), (b, fb)) = (gc_free(a), gc_free(b));
            fa.extend(fb);
            let q = if a.is_nil() {
                b
            } else if b.is_nil() {
                a
            } else {
                Process::par(a, b)
            };
            (q, fa)
        }
        Process::Res(x, body) => {
            let (body, mut fb) = gc_free(body);
            if fb.remove(x) {
                (Process::res(x.clone(), body), fb)
            } else {
                (body, fb)
            }
        }
        Process::Rep(body) => {
            let (body, fb) = gc_free(body);
            if body.is_nil() {
                (Process::nil(), fb)
            } else {
                (Process::rep(body), fb)
            }
        }
        _ => (p.clone(), free_names(p)),
    }
}

fn provenance(threads: &[&Process]) -> Vec<String> {
    let mut s = BTreeSet::new();
    for t in threads {
        for n in free_names(t) {
            s.insert(n.display().to_string());
        }
    }
    s.into_iter().collect()
}

fn val(e: &Expr) -> Val {
    match e {
        Expr::Num(v) => Val::Num(*v),
        Expr::Var(n) => Val::Name(n.display().to_string()),
        other => Val::Name(format!("{other:?}")),
    }
}

fn discrete_event(time: f64, t: &Transition) -> Event {
    match &t.sync {
        Some((chan, payload)) => {
            let (out_p, in_p) = (&t.participants[0], &t.participants[1]);
            let (kind, prov) = if out_p.origin == Origin::Sense {
                (EventKind::Sense, provenance(&[&in_p.thread]))
            } else if in_p.origin == Origin::Actuate {
                (EventKind::Actuate, provenance(&[&out_p.thread]))
            } else {
                (EventKind::Sync, provenance(&[&out_p.thread, &in_p.thread]))
            };
            let mut e = Event::new(time, kind);
            e.chan = Some(chan.display().to_string());
            e.chan_name = Some(chan.clone());
            e.values = payload.iter().map(val).collect();
            e.provenance = prov;
            e
        }
        None => {
            let mut e = Event::new(time, EventKind::Tau);
            e.provenance = provenance(&[&t.participants[0].thread]);
            e
        }
    }
}

#[derive(Clone)]
struct Run {
    p: Process,
    t: f64,
    trace: Vec<Event>,
    traj: Trajectory,
    recent: VecDeque<f64>,
    truncated: bool,
    diagnostics: BTreeSet<String>,
    done: Option<Termination>,
}

enum Next {
    Done,
    Choice(Vec<Transition>),
}

impl Run {
    fn new(p: &Process) -> Run {
        Run {
            p: p.clone(),
            t: 0.0,
            trace: Vec::new(),
            traj: Trajectory::default(),
            recent: VecDeque::new(),
            truncated: false,
            diagnostics: BTreeSet::new(),
            done: None,
        }
    }

    fn finish(self, alternatives: Vec<SimResult>) -> SimResult {
        SimResult {
            trace: Trace { events: self.trace },
            trajectory: self.traj,
            final_state: self.p,
            final_time: self.t,
            termination: self.done.unwrap_or(Termination::Horizon),
            truncated: self.truncated,
            diagnostics: self.diagnostics.into_iter().collect(),
            alternatives,
        }
    }

    /// Count a discrete event; returns true when the Zeno guard trips.
    fn tick(&mut self, cfg: &SimConfig) -> bool {
        self.recent.push_back(self.t);
        while let Some(&f) = self.recent.front() {
            if f <= self.t - cfg.zeno.window {
                self.recent.pop_front();
            } else {
                break;
            }
        }
        if self.recent.len() > cfg.zeno.max_events {
            self.trace.push(Event::new(self.t, EventKind::ZenoAbort));
            self.done = Some(Termination::ZenoAbort);
            true
        } else {
            false
        }
    }

    /// Advance until a discrete choice is needed or the run ends.
    fn advance(&mut self, cfg: &SimConfig) -> Result<Next, KernelError> {
        loop {
            if self.done.is_some() {
                return Ok(Next::Done);
            }
            self.p = gc(&self.p);
            if self.p.is_nil() {
                self.done = Some(Termination::Inaction);
                return Ok(Next::Done);
            }
            if self.t >= cfg.horizon {
                self.done = Some(Termination::Horizon);
                return Ok(Next::Done);
            }
            let ts = discrete_transitions(&self.p, cfg.depth);
            self.truncated |= ts.truncated;
            self.diagnostics.extend(ts.diagnostics);
            let taus: Vec<Transition> = ts.list.into_iter().filter(|t| t.label == crate::kernel::Label::Tau).collect();
            if !taus.is_empty() {
                return Ok(Next::Choice(taus));
            }
            if !has_active_ode(&self.p) {
                // stuck with nothing visible is bisimilar to 0
                if ready_set(&self.p).is_empty() {
                    self.done = Some(Termination::Inaction);
                } else {
                    self.trace.push(Event::new(self.t, EventKind::Deadlock));
                    self.done = Some(Termination::Deadlock);
                }
                return Ok(Next::Done);
            }
            let mut icfg = cfg.integrator;
            if !cfg.record {
                icfg.record_stride = usize::MAX;
            }
            let ev = continuous_step(&self.p, cfg.horizon - self.t, &icfg)?;
            self.diagnostics.extend(ev.diagnostics.iter().cloned());
            if let Some(label) = &ev.label {
                let d = ev.duration();
                let mut e = Event::new(self.t, EventKind::Evolve);
                e.duration = Some(d);
                e.ready = label
                    .ready
                    .iter()
                    .map(|(n, p)| format!("{}{}", n.display(), if *p == crate::syntax::Polarity::Out { "!" } else { "?" }))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                self.trace.push(e);
                if cfg.record {
                    let f = if cfg.observe_all { ev.full.as_ref().unwrap() } else { &label.flow.guarantee };
                    self.traj.append(self.t, f);
                }
                self.t += d;
            }
            self.p = ev.successor;
            for s in &ev.stops {
                let mut e = Event::new(self.t, EventKind::Stop);
                e.vars = s.vars.iter().map(|v| v.display().to_string()).collect();
                e.values = s.values.iter().map(|v| Val::Num(*v)).collect();
                self.trace.push(e);
                if self.tick(cfg) {
                    return Ok(Next::Done);
                }
            }
        }
    }

    fn take(&mut self, t: Transition, cfg: &SimConfig) {
        self.trace.push(discrete_event(self.t, &t));
        let Agent::Proc(p) = t.agent else { unreachable!("τ-transitions yield processes") };
        self.p = p;
        self.tick(cfg);
    }
}

/// Simulate `p` under `cfg`.
pub fn simulate(p: &Process, cfg: &SimConfig) -> Result<SimResult, KernelError> {
    match cfg.policy {
        Policy::Exhaustive(depth) => {
            let mut runs = Vec::new();
            explore(Run::new(p), cfg, depth, &mut runs)?;
            let mut it = runs.into_iter();
            let first = it.next().expect("at least one run");
            let rest: Vec<SimResult> = it.map(|r| r.finish(Vec::new())).collect();
            Ok(first.finish(rest))
        }
        policy => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut run = Run::new(p);
            loop {
                match run.advance(cfg)? {
                    Next::Done => break,
                    Next::Choice(mut ts) => {
                        let i = if policy == Policy::RandomSeeded && ts.len() > 1 { rng.gen_range(0..ts.len()) } else { 0 };
                        let t = ts.swap_remove(i);
                        run.take(t, cfg);
                    }
                }
            }
            Ok(run.finish(Vec::new()))
        }
    }
}

fn explore(mut run: Run, cfg: &SimConfig, budget: usize, out: &mut Vec<Run>) -> Result<(), KernelError> {
    loop {
        if out.len() >= cfg.max_runs {
            return Ok(());
        }
        match run.advance(cfg)? {
            Next::Done => {
                out.push(run);
                return Ok(());
            }
            Next::Choice(ts) if ts.len() > 1 && budget > 0 => {
                for t in ts {
                    let mut r = run.clone();
                    r.take(t, cfg);
                    explore(r, cfg, budget - 1, out)?;
                }
                return Ok(());
            }
            Next::Choice(mut ts) => {
                let t = ts.swap_remove(0);
                run.take(t, cfg);
            }
        }
    }
}

/// Zeno analysis of a trace.
#[derive(Clone, Debug, Serialize)]
pub struct ZenoReport {
    pub flagged: bool,
    /// Largest number of discrete events seen in one window.
    pub max_density: usize,
    /// Extrapolated accumulation point of event times.
    pub accumulation: Option<f64>,
}

/// Flag excessive event density and extrapolate the accumulation time from
/// the geometric decay of gaps between event clusters.
pub fn detect_zeno(tr: &Trace, zeno: &ZenoConfig) -> ZenoReport {
    let times: Vec<f64> = tr.events.iter().filter(|e| e.is_discrete()).map(|e| e.time).collect();
    let mut max_density = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi] - times[lo] >= zeno.window {
            lo += 1;
        }
        max_density = max_density.max(hi - lo + 1);
    }
    let aborted = tr.events.iter().any(|e| e.kind == EventKind::ZenoAbort);
    let flagged = aborted || max_density > zeno.max_events;

    // cluster near-simultaneous events, then look at gaps between clusters
    let mut clusters: Vec<f64> = Vec::new();
    for &t in &times {
        if clusters.last().map_or(true, |c| t - c >= 1e-6) {
            clusters.push(t);
        }
    }
    let gaps: Vec<f64> = clusters.windows(2).map(|w| w[1] - w[0]).collect();
    let accumulation = if gaps.len() >= 3 {
        let mut ratios: Vec<f64> = gaps.windows(2).map(|w| w[1] / w[0]).collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = ratios[ratios.len() / 2];
        if r > 0.0 && r < 0.999 {
            let g_last = *gaps.last().unwrap();
            Some(clusters.last().unwrap() + g_last * r / (1.0 - r))
        } else {
            None
        }
    } else {
        None
    };
    ZenoReport { flagged, max_density, accumulation: if flagged { accumulation } else { None } }
}
