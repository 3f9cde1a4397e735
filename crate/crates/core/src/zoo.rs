//! The model zoo: every worked example as a surface-syntax file compiled
//! into the library, with pinned simulation settings and golden fixtures.

use thiserror::Error;

use crate::cert::{BarrierCertificate, CertError, HybridAutomaton};
use crate::equiv::{disturbance, random_pieces, Scenario};
use crate::parser::{parse_with, ModelFile, ParseError, ParseOptions};
use crate::sim::SimConfig;
use crate::syntax::{Name, Process};

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("no model named `{0}`")]
    NotFound(String),
    #[error("model `{id}`: {err}")]
    Parse { id: String, err: ParseError },
    #[error("model `{id}`: {err}")]
    Cert { id: String, err: CertError },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Process,
    Automaton,
}

/// A process model, optionally paired with the reference it is compared to.
#[derive(Clone, Copy, Debug)]
pub struct Source {
    pub path: &'static str,
    pub text: &'static str,
    /// Parameterless definition to use instead of the `run` entry.
    pub def: Option<&'static str>,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelEntry {
    pub id: &'static str,
    pub kind: Kind,
    pub description: &'static str,
    /// The worked example this entry encodes.
    pub anchor: &'static str,
    pub main: Source,
    /// Reference model for approximate-bisimulation checks.
    pub reference: Option<Source>,
    /// Standalone certificate file for automaton entries.
    pub certificate: Option<Source>,
    /// Definitions of `main` and `reference` left open in the disturbance
    /// `u`, for co-simulation under disturbance profiles.
    pub disturbed: Option<(&'static str, &'static str)>,
    /// Simulation horizon in seconds for `run` and fixtures.
    pub horizon: f64,
    /// Fixture files under `fixtures/`, regenerated from `main` under
    /// [`ModelEntry::sim_config`].
    pub fixtures: &'static [&'static str],
}

macro_rules! model {
    ($file:literal) => {
        Source { path: concat!("models/", $file), text: include_str!(concat!("../../../models/", $file)), def: None }
    };
    ($file:literal, $def:literal) => {
        Source { path: concat!("models/", $file), text: include_str!(concat!("../../../models/", $file)), def: Some($def) }
    };
}

static ENTRIES: &[ModelEntry] = &[
    ModelEntry {
        id: "bigben",
        kind: Kind::Process,
        description: "global clock sensed by a periodic observer",
        anchor: "motivating examples: BigBen and Observer",
        main: model!("bigben.hpc"),
        reference: None,
        certificate: None,
        disturbed: None,
        horizon: 10.0,
        fixtures: &["bigben.trace.jsonl"],
    },
    ModelEntry {
        id: "wait",
        kind: Kind::Process,
        description: "a private clock as a three-second delay",
        anchor: "motivating examples: wait(d)",
        main: model!("wait.hpc"),
        reference: None,
        certificate: None,
        disturbed: None,
        horizon: 10.0,
        fixtures: &["wait.trace.jsonl"],
    },
    ModelEntry {
        id: "ball",
        kind: Kind::Process,
        description: "bouncing ball with an inelastic ground; Zeno",
        anchor: "bouncing ball: a ball falling from an initial height of 5 m",
        main: model!("ball.hpc"),
        reference: None,
        certificate: None,
        disturbed: None,
        horizon: 12.0,
        fixtures: &["ball.trace.jsonl"],
    },
    ModelEntry {
        id: "vehicle",
        kind: Kind::Process,
        description: "vehicle handed back and forth between two base stations",
        anchor: "mobile vehicle: Vehicle || Base1 || Base2",
        main: model!("vehicle.hpc"),
        reference: None,
        certificate: None,
        disturbed: None,
        horizon: 60.0,
        fixtures: &["vehicle.trace.jsonl"],
    },
    ModelEntry {
        id: "exp-growth",
        kind: Kind::Process,
        description: "v' = v stopped at v = 5, after ln 5 seconds",
        anchor: "boundary stop of {1 | v' = v & v < 5}(y).P",
        main: model!("exp_growth.hpc"),
        reference: None,
        certificate: None,
        disturbed: None,
        horizon: 5.0,
        fixtures: &["exp-growth.trace.jsonl", "exp-growth.traj.csv"],
    },
    ModelEntry {
        id: "urgency",
        kind: Kind::Process,
        description: "matched input and output synchronize before time passes",
        anchor: "urgency: x(y).P || x<1>.Q",
        main: model!("urgency.hpc"),
        reference: None,
        certificate: None,
        disturbed: None,
        horizon: 2.0,
        fixtures: &["urgency.trace.jsonl"],
    },
    ModelEntry {
        id: "handover-network",
        kind: Kind::Process,
        description: "one train, three sectors and a terminus with channel handover",
        anchor: "handover case study: Network = Starter || RESOURCE",
        main: model!("network.hpc"),
        reference: None,
        certificate: None,
        disturbed: None,
        horizon: 500.0,
        fixtures: &[],
    },
    ModelEntry {
        id: "spec-system",
        kind: Kind::Process,
        description: "two-sector train system against its undisturbed specification",
        anchor: "handover case study: SPEC vs System, successful handover",
        main: model!("system.hpc", "System_CALM"),
        reference: Some(model!("spec.hpc", "SPEC")),
        certificate: None,
        disturbed: Some(("System", "SPEC")),
        horizon: 320.0,
        fixtures: &[],
    },
    ModelEntry {
        id: "spec-system-failed",
        kind: Kind::Process,
        description: "refused handover: the train stops at the end of the first sector",
        anchor: "handover case study: SPEC' vs System', failed handover",
        main: model!("system.hpc", "System_FAILED_CALM"),
        reference: Some(model!("spec.hpc", "SPEC_FAILED")),
        certificate: None,
        disturbed: Some(("System_FAILED", "SPEC_FAILED")),
        horizon: 320.0,
        fixtures: &[],
    },
    ModelEntry {
        id: "composed-automaton-H",
        kind: Kind::Automaton,
        description: "reconstructed product automaton of SPEC and System with its barrier certificate",
        anchor: "barrier certificate for the composed automaton H",
        main: model!("composed_automaton_h.json"),
        reference: None,
        certificate: Some(model!("barrier_certificate_h.json")),
        disturbed: None,
        horizon: 0.0,
        fixtures: &[],
    },
];

pub fn list_models() -> &'static [ModelEntry] {
    ENTRIES
}

pub fn find(id: &str) -> Result<&'static ModelEntry, ZooError> {
    ENTRIES.iter().find(|e| e.id == id).ok_or_else(|| ZooError::NotFound(id.to_string()))
}

impl ModelEntry {
    /// Pinned settings for runs and fixtures. Trajectories keep every 10th
    /// grid point.
    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = SimConfig { horizon: self.horizon, ..Default::default() };
        cfg.integrator.record_stride = 10;
        cfg
    }
}

/// A loaded process model. `main` and `reference` share free names, so a
/// spelling such as `x` denotes the same name in both.
#[derive(Clone, Debug)]
pub struct ProcessModel {
    pub entry: &'static ModelEntry,
    pub file: ModelFile,
    pub main: Process,
    pub reference: Option<Process>,
    /// The `disturbed` definitions of `main` and `reference`.
    pub disturbed: Option<(Process, Process)>,
}

impl ProcessModel {
    /// The disturbance input `u`, if the model mentions one.
    pub fn disturbance_input(&self) -> Option<&Name> {
        self.file.free_name("u")
    }
}

#[derive(Clone, Debug)]
pub struct AutomatonModel {
    pub entry: &'static ModelEntry,
    pub automaton: HybridAutomaton,
    pub certificate: Option<BarrierCertificate>,
}

#[derive(Clone, Debug)]
pub enum Model {
    Process(ProcessModel),
    Automaton(AutomatonModel),
}

fn parse_source(id: &str, src: &Source, opts: &ParseOptions) -> Result<(ModelFile, Process), ZooError> {
    let perr = |err| ZooError::Parse { id: id.to_string(), err };
    let file = parse_with(src.text, opts).map_err(perr)?;
    let p = file.select(src.def).map_err(perr)?;
    Ok((file, p))
}

pub fn load(id: &str) -> Result<Model, ZooError> {
    let entry = find(id)?;
    match entry.kind {
        Kind::Process => load_process(entry).map(Model::Process),
        Kind::Automaton => {
            let cerr = |err| ZooError::Cert { id: id.to_string(), err };
            let (automaton, inline) = HybridAutomaton::from_json(entry.main.text).map_err(cerr)?;
            let certificate = match &entry.certificate {
                Some(c) => Some(BarrierCertificate::from_json(&automaton, c.text).map_err(cerr)?),
                None => inline,
            };
            Ok(Model::Automaton(AutomatonModel { entry, automaton, certificate }))
        }
    }
}

fn load_process(entry: &'static ModelEntry) -> Result<ProcessModel, ZooError> {
    let perr = |err| ZooError::Parse { id: entry.id.to_string(), err };
    let mut opts = ParseOptions::default();
    let reference = match &entry.reference {
        Some(r) => {
            let (file, p) = parse_source(entry.id, r, &opts)?;
            opts.free = file.free.clone();
            Some((file, p))
        }
        None => None,
    };
    let (file, main) = parse_source(entry.id, &entry.main, &opts)?;
    let disturbed = match (entry.disturbed, &reference) {
        (Some((m, r)), Some((rfile, _))) => {
            Some((file.select(Some(m)).map_err(perr)?, rfile.select(Some(r)).map_err(perr)?))
        }
        _ => None,
    };
    Ok(ProcessModel { entry, file, main, reference: reference.map(|r| r.1), disturbed })
}

/// Disturbance profiles on `u`: the constants −0.1, 0 and 0.1, then
/// `seeded` piecewise-constant profiles with 1 s pieces drawn uniformly from
/// [−0.1, 0.1] by seeds `0..seeded`, long enough to cover `horizon`.
pub fn disturbance_scenarios(u: &Name, seeded: u64, horizon: f64) -> Vec<Scenario> {
    let mut out: Vec<Scenario> =
        [-0.1, 0.0, 0.1].iter().map(|&c| Scenario::with_context(&format!("const {c}"), disturbance(u, &[(1.0, c)]))).collect();
    let pieces = horizon.ceil().max(1.0) as usize;
    for s in 0..seeded {
        out.push(Scenario::with_context(&format!("seed {s}"), disturbance(u, &random_pieces(s, pieces, 1.0, -0.1, 0.1))));
    }
    out
}

/// Shorthand for process entries.
pub fn load_process_model(id: &str) -> Result<ProcessModel, ZooError> {
    match load(id)? {
        Model::Process(m) => Ok(m),
        Model::Automaton(_) => Err(ZooError::NotFound(format!("{id} (not a process model)"))),
    }
}

// ---------------------------------------------------------------------------
// The train control law

/// Train limits: top speed, braking deceleration and full acceleration, in
/// SI units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Protection {
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for Protection {
    fn default() -> Self {
        Protection { v_max: 40.0, a_min: -1.0, a_max: 1.0 }
    }
}

impl Protection {
    /// Highest speed at `p0` from which braking at `a_min` stops by `pe`.
    pub fn v_lim(&self, p0: f64, pe: f64) -> Result<f64, ZooError> {
        if pe <= p0 {
            return Err(ZooError::Domain(format!("end point {pe} is not ahead of {p0}")));
        }
        Ok(self.curve(p0, pe))
    }

    // v_lim extended by 0 at and beyond the end point, as in the models
    fn curve(&self, p0: f64, pe: f64) -> f64 {
        let gap = (pe - p0).max(0.0);
        if gap >= self.v_max * self.v_max / (-2.0 * self.a_min) {
            self.v_max
        } else {
            (-2.0 * self.a_min * gap).sqrt()
        }
    }

    /// Acceleration for the next period of length `d`: `a_max` if the
    /// predicted speed stays under the curve at the predicted position,
    /// else 0 if holding the speed is safe, else `a_min`.
    pub fn control_law_f(&self, p0: f64, v0: f64, pe: f64, d: f64) -> Result<f64, ZooError> {
        if pe <= p0 {
            return Err(ZooError::Domain(format!("end point {pe} is not ahead of {p0}")));
        }
        let v1 = v0 + self.a_max * d;
        let p1 = p0 + v0 * d + 0.5 * self.a_max * d * d;
        Ok(if v1 <= self.curve(p1, pe) {
            self.a_max
        } else if v0 <= self.curve(p0 + v0 * d, pe) {
            0.0
        } else {
            self.a_min
        })
    }
}

pub fn v_lim(p0: f64, pe: f64) -> Result<f64, ZooError> {
    Protection::default().v_lim(p0, pe)
}

pub fn control_law_f(p0: f64, v0: f64, pe: f64, d: f64) -> Result<f64, ZooError> {
    Protection::default().control_law_f(p0, v0, pe, d)
}
