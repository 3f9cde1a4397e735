//! `hpc`: command-line front end for the hybrid pi-calculus workbench.
//!
//! Exit codes: 0 success or a positive verdict, 1 a negative verdict
//! (refuted, violated, not bisimilar), 2 usage error, 3 model error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use hpc_core::cert::{check_certificate, BarrierCertificate, CertReport, CheckConfig, HybridAutomaton};
use hpc_core::equiv::{
    approx_bisim, build_lts, discretize, disturbance, estimate_lipschitz, random_pieces, strong_bisim, suggest_step,
    weak_bisim, ApproxConfig, ApproxStatus, LtsBounds, Scenario,
};
use hpc_core::parser::{parse_with, pretty, ModelFile, ParseOptions};
use hpc_core::sim::{detect_zeno, simulate, EventKind, Policy, SimConfig, SimResult};
use hpc_core::syntax::{Expr, Name, Prefix, Process};
use hpc_core::zoo::{self, Kind, Model};

#[derive(Parser)]
#[command(name = "hpc", version, about = "Hybrid pi-calculus workbench", long_about = None)]
#[command(after_help = "All times are in seconds and all positions in meters (SI units). \
FILE arguments accept FILE:DEF to select a parameterless definition instead of the `run` entry.")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a model file and print its entry process
    Parse {
        file: String,
        /// Print the abstract syntax tree instead of surface syntax
        #[arg(long)]
        ast: bool,
    },
    /// Simulate a closed model
    Simulate {
        file: String,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Build the labelled transition system of a discrete model
    Lts {
        file: String,
        #[command(flatten)]
        lts: LtsArgs,
        /// Write states and transitions as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide strong or weak bisimilarity of two discrete models
    Bisim {
        a: String,
        b: String,
        #[arg(long, value_enum, default_value_t = Mode::Strong)]
        mode: Mode,
        #[command(flatten)]
        lts: LtsArgs,
    },
    /// Check (eps, delta)-approximate bisimilarity by co-simulation
    Approx {
        a: String,
        b: String,
        /// Distance bound on observed variables (their units, e.g. m)
        #[arg(long)]
        eps: f64,
        /// Bound on time skew between matching evolutions (s)
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Observed variables, comma separated; `x` or `left=right`
        #[arg(long, value_delimiter = ',')]
        observe: Vec<String>,
        /// JSON scenario file; without it both models run unperturbed
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Worker threads for scenario batches
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        sim: SimArgs,
        /// Write the verdict as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replace the first continuous prefix of a model by its RK4 discretization
    Discretize {
        file: String,
        /// Target accuracy of the discrete states
        #[arg(long)]
        eps: f64,
        /// Duration to discretize (s)
        #[arg(long)]
        duration: f64,
        /// RK4 step (s); derived from eps and a Lipschitz estimate if absent
        #[arg(long)]
        step: Option<f64>,
        /// Write the discretized process here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a barrier certificate on a hybrid automaton by sampling
    Certcheck {
        automaton: PathBuf,
        /// Certificate file; defaults to the one embedded in the automaton
        certificate: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Write the report as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bundled example models
    Models {
        #[command(subcommand)]
        cmd: ModelsCmd,
    },
}

#[derive(Subcommand)]
enum ModelsCmd {
    /// List bundled models
    List,
    /// Describe a model and print its source
    Show { id: String },
    /// Simulate a model, or check the certificate of an automaton
    Run {
        id: String,
        /// Horizon (s); defaults to the model's pinned horizon
        #[arg(long)]
        horizon: Option<f64>,
        /// RK4 step (s)
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, env = "HPC_SEED")]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<Policy>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Copy a model's source files into a directory
    Export { id: String, dir: PathBuf },
}

#[derive(Args)]
struct SimArgs {
    /// Simulation horizon (s)
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    /// RK4 step (s)
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Seed for the random policy
    #[arg(long, env = "HPC_SEED", default_value_t = 0)]
    seed: u64,
    /// Scheduling policy: first, random or exhaustive:N
    #[arg(long, value_parser = parse_policy, default_value = "first")]
    policy: Policy,
    /// Record every k-th integration step in trajectories
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Record restricted variables in trajectories too
    #[arg(long)]
    observe_all: bool,
    /// Abort as Zeno after this many discrete events within one second
    #[arg(long, default_value_t = 1000)]
    zeno_events: usize,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        let mut cfg = SimConfig {
            horizon: self.horizon,
            policy: self.policy,
            seed: self.seed,
            observe_all: self.observe_all,
            ..Default::default()
        };
        cfg.integrator.step = self.step;
        cfg.integrator.record_stride = self.stride.max(1);
        cfg.zeno.max_events = self.zeno_events;
        cfg
    }
}

#[derive(Args)]
struct OutArgs {
    /// Write the event trace as JSON lines
    #[arg(long)]
    out_trace: Option<PathBuf>,
    /// Write the trajectory as CSV
    #[arg(long)]
    out_traj: Option<PathBuf>,
}

#[derive(Args)]
struct LtsArgs {
    /// Values substituted for input binders, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    universe: Vec<f64>,
    /// Unfolding depth for replication
    #[arg(long, default_value_t = hpc_core::kernel::DEFAULT_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = 20_000)]
    max_states: usize,
    /// Garbage-collect `P || 0` and unused restrictions in every state
    #[arg(long)]
    gc: bool,
}

impl LtsArgs {
    fn bounds(&self) -> LtsBounds {
        LtsBounds { max_states: self.max_states, depth: self.depth, gc: self.gc }
    }

    fn universe(&self) -> Vec<Expr> {
        self.universe.iter().map(|v| Expr::Num(*v)).collect()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strong,
    Weak,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    match s {
        "first" => Ok(Policy::FirstEnabled),
        "random" => Ok(Policy::RandomSeeded),
        _ => match s.strip_prefix("exhaustive:").map(str::parse) {
            Some(Ok(n)) => Ok(Policy::Exhaustive(n)),
            _ => Err(format!("expected first, random or exhaustive:N, got `{s}`")),
        },
    }
}

/// Errors mapped to exit codes 2 and 3.
enum Failure {
    Usage(anyhow::Error),
    Model(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Failure {
        Failure::Model(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

type Outcome = std::result::Result<ExitCode, Failure>;

fn verdict(ok: bool) -> Outcome {
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Parse { file, ast } => {
            let (_, p) = load_process(&file, &ParseOptions::default())?;
            if ast {
                println!("{p:#?}");
            } else {
                println!("{}", pretty(&p));
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate { file, sim, out } => {
            let (_, p) = load_process(&file, &ParseOptions::default())?;
            let r = simulate(&p, &sim.config()).map_err(|e| anyhow!(e))?;
            report_run(&r, &sim.config(), &out)
        }
        Cmd::Lts { file, lts, out } => {
            let (_, p) = load_process(&file, &ParseOptions::default())?;
            let l = build_lts(&p, &lts.universe(), &lts.bounds()).map_err(|e| anyhow!(e))?;
            println!("states {} transitions {}{}", l.states.len(), l.transition_count(), truncated_note(l.truncated));
            if let Some(path) = out {
                let edges: Vec<_> = l
                    .edges
                    .iter()
                    .enumerate()
                    .flat_map(|(i, es)| es.iter().map(move |(a, j)| serde_json::json!([i, a.to_string(), j])))
                    .collect();
                let states: Vec<String> = l.states.iter().map(pretty).collect();
                let doc = serde_json::json!({
                    "initial": l.initial, "truncated": l.truncated, "states": states, "edges": edges,
                });
                write(&path, &serde_json::to_string_pretty(&doc).unwrap())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bisim { a, b, mode, lts } => {
            let (fa, p) = load_process(&a, &ParseOptions::default())?;
            let (_, q) = load_process(&b, &ParseOptions { free: fa.free.clone() })?;
            let (la, lb) = (build_lts(&p, &lts.universe(), &lts.bounds()), build_lts(&q, &lts.universe(), &lts.bounds()));
            let (la, lb) = (la.map_err(|e| anyhow!(e))?, lb.map_err(|e| anyhow!(e))?);
            let rel = match mode {
                Mode::Strong => strong_bisim(&la, &lb),
                Mode::Weak => weak_bisim(&la, &lb),
            };
            let related = rel.relates(la.initial, lb.initial);
            println!(
                "{} ({} + {} states, {} classes){}",
                if related { "bisimilar" } else { "not bisimilar" },
                la.states.len(),
                lb.states.len(),
                rel.block_count(),
                truncated_note(la.truncated || lb.truncated)
            );
            verdict(related)
        }
        Cmd::Approx { a, b, eps, delta, observe, scenarios, jobs, sim, out } => {
            let (fa, p) = load_process(&a, &ParseOptions::default())?;
            let (fb, q) = load_process(&b, &ParseOptions { free: fa.free.clone() })?;
            let mut free = fa.free.clone();
            free.extend(fb.free.clone());
            let scs = match scenarios {
                Some(path) => read_scenarios(&path, &free)?,
                None => vec![Scenario::plain()],
            };
            let pairs: Vec<(String, String)> = observe
                .iter()
                .map(|o| match o.split_once('=') {
                    Some((l, r)) => (l.trim().to_string(), r.trim().to_string()),
                    None => (o.trim().to_string(), o.trim().to_string()),
                })
                .collect();
            let refs: Vec<(&str, &str)> = pairs.iter().map(|(l, r)| (l.as_str(), r.as_str())).collect();
            let cfg = ApproxConfig::new(eps, delta, &refs, sim.config());
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| anyhow!(e))?;
            let v = pool.install(|| approx_bisim(&p, &q, &scs, &cfg)).map_err(|e| anyhow!(e))?;
            for s in &v.scenarios {
                println!("{:<16} max distance {:.6} skew {:.6}", s.label, s.max_distance, s.skew);
            }
            match &v.status {
                ApproxStatus::EmpiricallyConsistent(c) => println!(
                    "consistent with ({eps}, {delta}): max distance {:.6} over {} scenarios",
                    v.max_distance, c.scenarios
                ),
                ApproxStatus::Refuted(cx) => println!(
                    "refuted in scenario `{}` at t = {:.6}: {}",
                    cx.label, cx.violation.time, cx.violation.reason
                ),
            }
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(path) = out {
                write(&path, &v.to_json())?;
            }
            verdict(v.consistent())
        }
        Cmd::Discretize { file, eps, duration, step, out } => discretize_cmd(&file, eps, duration, step, out),
        Cmd::Certcheck { automaton, certificate, samples, tolerance, out } => {
            let text = read(&automaton)?;
            let (h, inline) = HybridAutomaton::from_json(&text).map_err(|e| anyhow!(e))?;
            let cert = match certificate {
                Some(path) => BarrierCertificate::from_json(&h, &read(&path)?).map_err(|e| anyhow!(e))?,
                None => inline.ok_or_else(|| usage(anyhow!("{} embeds no certificate; pass one", automaton.display())))?,
            };
            let report = check_certificate(&h, &cert, &CheckConfig { samples, tolerance });
            print_cert(&report);
            if let Some(path) = out {
                write(&path, &report.to_json())?;
            }
            verdict(report.holds())
        }
        Cmd::Models { cmd } => models(cmd),
    }
}

fn truncated_note(t: bool) -> &'static str {
    if t {
        " [truncated: a bound was hit]"
    } else {
        ""
    }
}

fn read(path: &Path) -> std::result::Result<String, Failure> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)
}

fn write(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(usage)
}

/// Split `FILE:DEF` unless the whole argument names an existing file.
fn split_def(arg: &str) -> (&str, Option<&str>) {
    if Path::new(arg).exists() {
        return (arg, None);
    }
    match arg.rsplit_once(':') {
        Some((f, d)) if !d.is_empty() && d.chars().all(|c| c.is_alphanumeric() || c == '_') => (f, Some(d)),
        _ => (arg, None),
    }
}

fn load_process(arg: &str, opts: &ParseOptions) -> std::result::Result<(ModelFile, Process), Failure> {
    let (path, def) = split_def(arg);
    let text = read(Path::new(path))?;
    let file = parse_with(&text, opts).map_err(|e| anyhow!("{path}: {e}"))?;
    let p = file.select(def).map_err(|e| anyhow!("{path}: {e}"))?;
    Ok((file, p))
}

fn report_run(r: &SimResult, cfg: &SimConfig, out: &OutArgs) -> Outcome {
    let count = |k: EventKind| r.trace.of_kind(k).count();
    println!(
        "termination {:?} at t = {:.6} s; {} events ({} sync, {} sense, {} actuate, {} stop)",
        r.termination,
        r.final_time,
        r.trace.events.len(),
        count(EventKind::Sync),
        count(EventKind::Sense),
        count(EventKind::Actuate),
        count(EventKind::Stop)
    );
    let z = detect_zeno(&r.trace, &cfg.zeno);
    if z.flagged {
        match z.accumulation {
            Some(a) => println!("Zeno: accumulation point near t = {a:.4} s"),
            None => println!("Zeno: {} events within {} s", z.max_density, cfg.zeno.window),
        }
    }
    if !r.alternatives.is_empty() {
        println!("{} further maximal runs explored", r.alternatives.len());
    }
    if r.truncated {
        eprintln!("warning: exploration truncated by the depth bound");
    }
    for d in &r.diagnostics {
        eprintln!("note: {d}");
    }
    if let Some(path) = &out.out_trace {
        write(path, &r.trace.to_jsonl())?;
    }
    if let Some(path) = &out.out_traj {
        write(path, &r.trajectory.to_csv())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_cert(report: &CertReport) {
    for c in &report.conditions {
        println!(
            "{:<5} {:<32} {:>8} samples  min margin {:>12.6}{}",
            c.condition,
            c.scope,
            c.samples,
            c.min_margin,
            if c.violated { "  VIOLATED" } else { "" }
        );
        if c.violated {
            if let Some(w) = &c.worst {
                let at: Vec<String> = w.iter().map(|(k, v)| format!("{k} = {v}")).collect();
                println!("      witness: {}", at.join(", "));
            }
        }
    }
    if !report.note.is_empty() {
        println!("note: {}", report.note);
    }
    println!("{} violated condition(s)", report.violations);
}

// ---------------------------------------------------------------------------
// Scenario files

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    /// Default disturbance input, by spelling.
    #[serde(default)]
    input: Option<String>,
    #[serde(default)]
    scenarios: Vec<ScenarioSpec>,
    /// The standard set: three constants and `seeded` random profiles.
    #[serde(default)]
    standard: Option<Standard>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Standard {
    seeded: u64,
    horizon: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSpec {
    label: String,
    #[serde(default)]
    input: Option<String>,
    #[serde(default)]
    constant: Option<f64>,
    /// `[duration, value]` pieces; the last holds forever.
    #[serde(default)]
    pieces: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    random: Option<RandomProfile>,
    #[serde(default)]
    policy: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomProfile {
    seed: u64,
    pieces: usize,
    len: f64,
    lo: f64,
    hi: f64,
}

fn read_scenarios(path: &Path, free: &BTreeMap<String, Name>) -> std::result::Result<Vec<Scenario>, Failure> {
    let doc: ScenarioFile =
        serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display())).map_err(usage)?;
    let name = |spelling: Option<&String>| -> std::result::Result<Name, Failure> {
        let s = spelling.or(doc.input.as_ref()).ok_or_else(|| usage(anyhow!("scenario without an input name")))?;
        free.get(s).cloned().ok_or_else(|| usage(anyhow!("input `{s}` is not a free name of either model")))
    };
    let mut out = Vec::new();
    if let Some(std) = &doc.standard {
        out.extend(zoo::disturbance_scenarios(&name(None)?, std.seeded, std.horizon));
    }
    for s in &doc.scenarios {
        let pieces = match (&s.constant, &s.pieces, &s.random) {
            (None, None, None) => None,
            (Some(c), None, None) => Some(vec![(1.0, *c)]),
            (None, Some(p), None) => Some(p.clone()),
            (None, None, Some(r)) => Some(random_pieces(r.seed, r.pieces, r.len, r.lo, r.hi)),
            _ => return Err(usage(anyhow!("scenario `{}`: give at most one of constant, pieces, random", s.label))),
        };
        let mut sc = match pieces {
            Some(p) => Scenario::with_context(&s.label, disturbance(&name(s.input.as_ref())?, &p)),
            None => Scenario { label: s.label.clone(), ..Scenario::plain() },
        };
        if let Some(p) = &s.policy {
            sc.policy = parse_policy(p).map_err(|e| usage(anyhow!(e)))?;
        }
        sc.seed = s.seed.unwrap_or(0);
        out.push(sc);
    }
    if out.is_empty() {
        return Err(usage(anyhow!("{} defines no scenarios", path.display())));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Discretization

fn first_ode(p: &Process) -> Option<(&hpc_core::syntax::Ode, &Process)> {
    match p {
        Process::Sum(bs) => bs.iter().find_map(|b| match &b.prefix {
            Prefix::Cont(ode) => Some((ode.as_ref(), &b.cont)),
            _ => first_ode(&b.cont),
        }),
        Process::Res(_, q) | Process::Rep(q) => first_ode(q),
        Process::Par(a, b) => first_ode(a).or_else(|| first_ode(b)),
        Process::Call(..) => None,
    }
}

fn discretize_cmd(file: &str, eps: f64, duration: f64, step: Option<f64>, out: Option<PathBuf>) -> Outcome {
    if !(eps > 0.0) || !(duration > 0.0) {
        return Err(usage(anyhow!("--eps and --duration must be positive")));
    }
    let (_, p) = load_process(file, &ParseOptions::default())?;
    let (ode, _) = first_ode(&p).ok_or_else(|| anyhow!("{file} has no continuous prefix"))?;
    let init: Vec<f64> = ode
        .init
        .iter()
        .map(hpc_core::equiv::eval_numeric)
        .collect::<Option<_>>()
        .ok_or_else(|| anyhow!("initial values must be numeric"))?;
    // Lipschitz estimate over the box swept by the exact flow
    let free_run = Process::cont(
        hpc_core::syntax::Ode {
            boundary: hpc_core::syntax::BoolExpr::tt(),
            ready: Default::default(),
            binders: Vec::new(),
            ..ode.clone()
        },
        Process::nil(),
    );
    let mut cfg = SimConfig { horizon: duration, observe_all: true, ..Default::default() };
    cfg.integrator.record_stride = 10;
    let r = simulate(&free_run, &cfg).map_err(|e| anyhow!(e))?;
    let (mut lo, mut hi) = (init.clone(), init.clone());
    for (i, v) in ode.vars.iter().enumerate() {
        for (_, x) in r.trajectory.series(v.display()) {
            lo[i] = lo[i].min(x);
            hi[i] = hi[i].max(x);
        }
    }
    let lipschitz = estimate_lipschitz(&ode.vars, &ode.field, &lo, &hi, 10_000, 0);
    let delta = step.unwrap_or_else(|| suggest_step(eps, lipschitz, duration));
    let d = discretize(&ode.init, &ode.vars, &ode.field, duration, delta).map_err(|e| anyhow!(e))?;
    let steps = (duration / delta).ceil();
    eprintln!("Lipschitz estimate {lipschitz:.6}, step {delta:.6e} s, {steps} steps");
    if steps / duration > 1000.0 {
        eprintln!("note: simulate the result with --zeno-events above {}", (steps / duration).ceil() * 3.0);
    }
    let text = pretty(&d);
    match out {
        Some(path) => write(&path, &format!("run {text};\n"))?,
        None => println!("run {text};"),
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// Models

fn models(cmd: ModelsCmd) -> Outcome {
    match cmd {
        ModelsCmd::List => {
            for e in zoo::list_models() {
                println!("{:<22} {}", e.id, e.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        ModelsCmd::Show { id } => {
            let e = zoo::find(&id).map_err(usage)?;
            println!("id:          {}", e.id);
            println!("description: {}", e.description);
            println!("example:     {}", e.anchor);
            for s in std::iter::once(&e.main).chain(&e.reference).chain(&e.certificate) {
                println!("file:        {}{}", s.path, s.def.map(|d| format!(":{d}")).unwrap_or_default());
            }
            if let Some((m, r)) = e.disturbed {
                println!("disturbed:   {m} vs {r}");
            }
            if !e.fixtures.is_empty() {
                println!("fixtures:    {}", e.fixtures.join(", "));
            }
            println!("\n{}", e.main.text);
            Ok(ExitCode::SUCCESS)
        }
        ModelsCmd::Run { id, horizon, step, seed, policy, out } => {
            let e = zoo::find(&id).map_err(usage)?;
            match zoo::load(&id).map_err(|err| anyhow!(err))? {
                Model::Automaton(m) => {
                    let cert = m.certificate.as_ref().ok_or_else(|| anyhow!("{id} has no certificate"))?;
                    let report = check_certificate(&m.automaton, cert, &CheckConfig::default());
                    print_cert(&report);
                    verdict(report.holds())
                }
                Model::Process(m) => {
                    debug_assert_eq!(e.kind, Kind::Process);
                    let mut cfg = e.sim_config();
                    if let Some(h) = horizon {
                        cfg.horizon = h;
                    }
                    if let Some(s) = step {
                        cfg.integrator.step = s;
                    }
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    if let Some(p) = policy {
                        cfg.policy = p;
                    }
                    let r = simulate(&m.main, &cfg).map_err(|err| anyhow!(err))?;
                    report_run(&r, &cfg, &out)
                }
            }
        }
        ModelsCmd::Export { id, dir } => {
            let e = zoo::find(&id).map_err(usage)?;
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(usage)?;
            for s in std::iter::once(&e.main).chain(&e.reference).chain(&e.certificate) {
                let name = Path::new(s.path).file_name().unwrap();
                write(&dir.join(name), s.text)?;
                println!("{}", dir.join(name).display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
