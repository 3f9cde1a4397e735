//! Hybrid automata with polynomial data and sampling checks of
//! barrier-certificate conditions.
//!
//! A certificate `{φ_l}` with rates `λ_l` and edge factors `γ_e ≥ 0` must
//! satisfy
//!
//! * BC-1: `φ_l(x) ≤ 0` on `Init(l)`
//! * BC-2: `⟨∇φ_l, f_l⟩ − λ_l φ_l(x) ≤ 0` on `I(l)`
//! * BC-3: `γ_e φ_l(x) − φ_l'(x') ≥ 0` for `x ∈ G(e)`, `x' = R(e, x)`
//! * BC-4: `φ_l(x) > 0` on `Unsafe(l)`
//!
//! Each condition is turned into a margin that must be non-negative and
//! evaluated on a Halton sample of its set plus the vertices of the set's
//! box. A negative margin is a genuine counterexample; a clean run is only
//! evidence.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("invalid automaton JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown variable `{0}`")]
    UnknownVar(String),
    #[error("unknown location `{0}`")]
    UnknownLocation(String),
    #[error("variable `{0}` has no box bounds")]
    Unbounded(String),
    #[error("edge factor γ = {0} on edge {1} is negative")]
    NegativeGamma(f64, usize),
    #[error("{0} edge factors given for {1} edges")]
    GammaCount(usize, usize),
    #[error("location `{0}` has no certificate function")]
    MissingPhi(String),
}

/// Polynomial over the coordinates `0..n`, keyed by exponent vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    pub n: usize,
    pub terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(n: usize) -> Poly {
        Poly { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: f64) -> Poly {
        let mut p = Poly::zero(n);
        p.add_term(vec![0; n], c);
        p
    }

    pub fn var(n: usize, i: usize) -> Poly {
        let mut e = vec![0; n];
        e[i] = 1;
        let mut p = Poly::zero(n);
        p.add_term(e, 1.0);
        p
    }

    pub fn add_term(&mut self, exp: Vec<u32>, c: f64) {
        let slot = self.terms.entry(exp).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn scale(&self, k: f64) -> Poly {
        let mut out = Poly::zero(self.n);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * k);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.n);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                out.add_term(e1.iter().zip(e2).map(|(a, b)| a + b).collect(), c1 * c2);
            }
        }
        out
    }

    pub fn derivative(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.n);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut d = e.clone();
                d[i] -= 1;
                out.add_term(d, c * e[i] as f64);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(k, xi)| xi.powi(*k as i32)).product::<f64>())
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn display(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        // highest degree first, constant last
        let mut terms: Vec<_> = self.terms.iter().collect();
        terms.sort_by_key(|(e, _)| std::cmp::Reverse(e.iter().sum::<u32>()));
        for (k, (e, c)) in terms.into_iter().enumerate() {
            let mono: Vec<String> = e
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0)
                .map(|(i, p)| if *p == 1 { names[i].clone() } else { format!("{}^{}", names[i], p) })
                .collect();
            let sign = if *c < 0.0 { "-" } else { "+" };
            if k == 0 {
                if *c < 0.0 {
                    out.push('-');
                }
            } else {
                out.push_str(&format!(" {sign} "));
            }
            let mag = c.abs();
            if mono.is_empty() {
                out.push_str(&format!("{mag}"));
            } else if mag == 1.0 {
                out.push_str(&mono.join("*"));
            } else {
                out.push_str(&format!("{mag}*{}", mono.join("*")));
            }
        }
        out
    }
}

/// `⟨∇φ, f⟩`.
pub fn lie_derivative(phi: &Poly, f: &[Poly]) -> Poly {
    let mut out = Poly::zero(phi.n);
    for (i, fi) in f.iter().enumerate() {
        let d = phi.derivative(i);
        if !d.is_zero() && !fi.is_zero() {
            out = out.add(&d.mul(fi));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// JSON schema

/// One term: a coefficient and the exponents of the variables it mentions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermJson {
    pub coef: f64,
    #[serde(default)]
    pub mono: BTreeMap<String, u32>,
}

pub type PolyJson = Vec<TermJson>;

/// Box bounds and constraints `g(x) ≥ 0`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SetJson {
    #[serde(default, rename = "box")]
    pub bounds: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub constraints: Vec<PolyJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocationJson {
    pub name: String,
    /// Right-hand side per variable; absent variables are constant.
    #[serde(default)]
    pub flow: BTreeMap<String, PolyJson>,
    #[serde(default)]
    pub invariant: SetJson,
    /// Union of sets.
    #[serde(default)]
    pub init: Vec<SetJson>,
    /// Union of sets.
    #[serde(default, rename = "unsafe")]
    pub unsafe_: Vec<SetJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeJson {
    #[serde(default)]
    pub label: String,
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub guard: SetJson,
    /// New value per variable; absent variables keep their value.
    #[serde(default)]
    pub reset: BTreeMap<String, PolyJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateJson {
    pub phi: BTreeMap<String, PolyJson>,
    pub lambda: BTreeMap<String, f64>,
    /// One factor per edge, or a single factor for all edges.
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AutomatonJson {
    #[serde(default)]
    pub note: String,
    pub variables: Vec<String>,
    #[serde(rename = "box")]
    pub bounds: BTreeMap<String, (f64, f64)>,
    pub locations: Vec<LocationJson>,
    #[serde(default)]
    pub edges: Vec<EdgeJson>,
    #[serde(default)]
    pub certificate: Option<CertificateJson>,
}

// ---------------------------------------------------------------------------
// Compiled forms

#[derive(Clone, Debug)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub constraints: Vec<Poly>,
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
            && self.constraints.iter().all(|g| g.eval(x) >= 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct Location {
    pub name: String,
    pub flow: Vec<Poly>,
    pub invariant: Region,
    pub init: Vec<Region>,
    pub unsafe_: Vec<Region>,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub label: String,
    pub from: usize,
    pub to: usize,
    pub guard: Region,
    pub reset: Vec<Poly>,
}

#[derive(Clone, Debug)]
pub struct HybridAutomaton {
    pub variables: Vec<String>,
    pub locations: Vec<Location>,
    pub edges: Vec<Edge>,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct BarrierCertificate {
    pub phi: Vec<Poly>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
}

struct Compiler<'a> {
    vars: &'a [String],
    global: &'a BTreeMap<String, (f64, f64)>,
}

impl Compiler<'_> {
    fn index(&self, v: &str) -> Result<usize, CertError> {
        self.vars.iter().position(|w| w == v).ok_or_else(|| CertError::UnknownVar(v.into()))
    }

    fn poly(&self, p: &PolyJson) -> Result<Poly, CertError> {
        let n = self.vars.len();
        let mut out = Poly::zero(n);
        for t in p {
            let mut e = vec![0; n];
            for (v, k) in &t.mono {
                e[self.index(v)?] += k;
            }
            out.add_term(e, t.coef);
        }
        Ok(out)
    }

    fn region(&self, s: &SetJson) -> Result<Region, CertError> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for v in self.vars {
            let (a, b) = s.bounds.get(v).or_else(|| self.global.get(v)).ok_or_else(|| CertError::Unbounded(v.clone()))?;
            lo.push(*a);
            hi.push(*b);
        }
        for v in s.bounds.keys() {
            self.index(v)?;
        }
        let constraints = s.constraints.iter().map(|c| self.poly(c)).collect::<Result<_, _>>()?;
        Ok(Region { lo, hi, constraints })
    }
}

impl HybridAutomaton {
    pub fn from_json(text: &str) -> Result<(HybridAutomaton, Option<BarrierCertificate>), CertError> {
        let raw: AutomatonJson = serde_json::from_str(text)?;
        HybridAutomaton::compile(&raw)
    }

    pub fn compile(raw: &AutomatonJson) -> Result<(HybridAutomaton, Option<BarrierCertificate>), CertError> {
        let c = Compiler { vars: &raw.variables, global: &raw.bounds };
        let n = raw.variables.len();
        let mut locations = Vec::new();
        for l in &raw.locations {
            let mut flow = vec![Poly::zero(n); n];
            for (v, p) in &l.flow {
                flow[c.index(v)?] = c.poly(p)?;
            }
            locations.push(Location {
                name: l.name.clone(),
                flow,
                invariant: c.region(&l.invariant)?,
                init: l.init.iter().map(|s| c.region(s)).collect::<Result<_, _>>()?,
                unsafe_: l.unsafe_.iter().map(|s| c.region(s)).collect::<Result<_, _>>()?,
            });
        }
        let loc = |name: &str| {
            raw.locations.iter().position(|l| l.name == name).ok_or_else(|| CertError::UnknownLocation(name.into()))
        };
        let mut edges = Vec::new();
        for e in &raw.edges {
            let mut reset: Vec<Poly> = (0..n).map(|i| Poly::var(n, i)).collect();
            for (v, p) in &e.reset {
                reset[c.index(v)?] = c.poly(p)?;
            }
            edges.push(Edge { label: e.label.clone(), from: loc(&e.from)?, to: loc(&e.to)?, guard: c.region(&e.guard)?, reset });
        }
        let h = HybridAutomaton { variables: raw.variables.clone(), locations, edges, note: raw.note.clone() };
        let cert = match &raw.certificate {
            None => None,
            Some(cj) => Some(compile_certificate(&c, &h, cj)?),
        };
        Ok((h, cert))
    }
}

fn compile_certificate(c: &Compiler, h: &HybridAutomaton, cj: &CertificateJson) -> Result<BarrierCertificate, CertError> {
    let mut phi = Vec::new();
    let mut lambda = Vec::new();
    for l in &h.locations {
        let p = cj.phi.get(&l.name).ok_or_else(|| CertError::MissingPhi(l.name.clone()))?;
        phi.push(c.poly(p)?);
        lambda.push(cj.lambda.get(&l.name).copied().unwrap_or(0.0));
    }
    let gamma = match cj.gamma.len() {
        1 => vec![cj.gamma[0]; h.edges.len()],
        n if n == h.edges.len() => cj.gamma.clone(),
        n => return Err(CertError::GammaCount(n, h.edges.len())),
    };
    BarrierCertificate::new(phi, lambda, gamma)
}

impl BarrierCertificate {
    /// A certificate kept in its own file, for an already compiled automaton.
    pub fn from_json(h: &HybridAutomaton, text: &str) -> Result<BarrierCertificate, CertError> {
        let cj: CertificateJson = serde_json::from_str(text)?;
        let global = BTreeMap::new();
        compile_certificate(&Compiler { vars: &h.variables, global: &global }, h, &cj)
    }

    pub fn new(phi: Vec<Poly>, lambda: Vec<f64>, gamma: Vec<f64>) -> Result<BarrierCertificate, CertError> {
        if let Some((i, g)) = gamma.iter().enumerate().find(|(_, g)| **g < 0.0) {
            return Err(CertError::NegativeGamma(*g, i));
        }
        Ok(BarrierCertificate { phi, lambda, gamma })
    }

    /// `Ω = ⋂_l {(l, x) | φ_l(x) ≤ 0}`, one inequality per location.
    pub fn invariant_region(&self, h: &HybridAutomaton) -> Vec<String> {
        h.locations
            .iter()
            .zip(&self.phi)
            .map(|(l, p)| if p.is_zero() { format!("{}: true", l.name) } else { format!("{}: {} <= 0", l.name, p.display(&h.variables)) })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Sampling

const PRIMES: [u64; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0 / base as f64;
    let mut r = 0.0;
    let inv = f;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// The `i`-th Halton point scaled into `[lo, hi]`.
pub fn halton_point(i: u64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .enumerate()
        .map(|(d, (a, b))| if a == b { *a } else { a + (b - a) * radical_inverse(i, PRIMES[d % PRIMES.len()]) })
        .collect()
}

/// Vertices of the box of `r` (free coordinates only), then Halton points
/// until `samples` of them satisfy the constraints, giving up after
/// `MAX_DRAWS_PER_SAMPLE * samples` draws.
fn sample_points(r: &Region, samples: usize) -> Vec<Vec<f64>> {
    let free: Vec<usize> = (0..r.lo.len()).filter(|i| r.lo[*i] < r.hi[*i]).collect();
    let mut pts = Vec::new();
    if free.len() <= 16 {
        for mask in 0u32..(1 << free.len()) {
            let mut x = r.lo.clone();
            for (bit, i) in free.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    x[*i] = r.hi[*i];
                }
            }
            pts.push(x);
        }
    }
    let inside = |x: &Vec<f64>| r.constraints.iter().all(|g| g.eval(x) >= 0.0);
    pts.retain(inside);
    let (mut accepted, mut next) = (0, 1u64);
    let cap = (MAX_DRAWS_PER_SAMPLE * samples) as u64;
    while accepted < samples && next <= cap {
        let batch = ((samples - accepted) as u64).max(1024).min(cap + 1 - next);
        let mut found: Vec<Vec<f64>> =
            (next..next + batch).into_par_iter().map(|i| halton_point(i, &r.lo, &r.hi)).filter(inside).collect();
        found.truncate(samples - accepted);
        accepted += found.len();
        pts.extend(found);
        next += batch;
    }
    pts
}

const MAX_DRAWS_PER_SAMPLE: usize = 64;

#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { samples: 100_000, tolerance: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub condition: String,
    pub scope: String,
    pub samples: usize,
    pub min_margin: f64,
    pub max_margin: f64,
    pub violated: bool,
    /// Point of least margin, by variable.
    pub worst: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertReport {
    pub conditions: Vec<ConditionReport>,
    pub violations: usize,
    pub invariant: Vec<String>,
    pub note: String,
}

impl CertReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn find(&self, condition: &str) -> impl Iterator<Item = &ConditionReport> {
        let c = condition.to_string();
        self.conditions.iter().filter(move |r| r.condition == c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

fn margins(
    condition: &str,
    scope: String,
    pts: Vec<Vec<f64>>,
    vars: &[String],
    tol: f64,
    margin: impl Fn(&[f64]) -> f64 + Sync,
) -> ConditionReport {
    let evaluated: Vec<(f64, usize)> = pts.par_iter().enumerate().map(|(i, x)| (margin(x), i)).collect();
    let min = evaluated.iter().copied().min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let max = evaluated.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
    let worst = min.map(|(_, i)| vars.iter().cloned().zip(pts[i].iter().copied()).collect());
    let min_margin = min.map_or(f64::INFINITY, |m| m.0);
    ConditionReport {
        condition: condition.into(),
        scope,
        samples: pts.len(),
        min_margin,
        max_margin: if pts.is_empty() { f64::NEG_INFINITY } else { max },
        violated: min_margin < -tol,
        worst,
    }
}

/// Sample every condition of `cert` on `h`. Margins are oriented so that
/// negative means violated.
pub fn check_certificate(h: &HybridAutomaton, cert: &BarrierCertificate, cfg: &CheckConfig) -> CertReport {
    let vars = &h.variables;
    let tol = cfg.tolerance;
    let mut out = Vec::new();
    for (li, l) in h.locations.iter().enumerate() {
        let phi = &cert.phi[li];
        for (k, r) in l.init.iter().enumerate() {
            let pts = sample_points(r, cfg.samples);
            out.push(margins("BC-1", format!("{} init #{k}", l.name), pts, vars, tol, |x| -phi.eval(x)));
        }
        let lie = lie_derivative(phi, &l.flow);
        let lambda = cert.lambda[li];
        let pts = sample_points(&l.invariant, cfg.samples);
        out.push(margins("BC-2", l.name.clone(), pts, vars, tol, |x| -(lie.eval(x) - lambda * phi.eval(x))));
        for (k, r) in l.unsafe_.iter().enumerate() {
            let pts = sample_points(r, cfg.samples);
            out.push(margins("BC-4", format!("{} unsafe #{k}", l.name), pts, vars, tol, |x| phi.eval(x)));
        }
    }
    for (ei, e) in h.edges.iter().enumerate() {
        let (pf, pt) = (&cert.phi[e.from], &cert.phi[e.to]);
        let gamma = cert.gamma[ei];
        let pts = sample_points(&e.guard, cfg.samples);
        let scope = if e.label.is_empty() { format!("edge #{ei}") } else { e.label.clone() };
        out.push(margins("BC-3", scope, pts, vars, tol, |x| {
            let x2: Vec<f64> = e.reset.iter().map(|r| r.eval(x)).collect();
            gamma * pf.eval(x) - pt.eval(&x2)
        }));
    }
    let violations = out.iter().filter(|r| r.violated).count();
    CertReport { conditions: out, violations, invariant: cert.invariant_region(h), note: h.note.clone() }
}

impl fmt::Display for CertReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.conditions {
            writeln!(
                f,
                "{:5} {:28} samples {:7}  margin [{:.6}, {:.6}]  {}",
                r.condition,
                r.scope,
                r.samples,
                r.min_margin,
                r.max_margin,
                if r.violated { "VIOLATED" } else { "ok" }
            )?;
            if r.violated {
                if let Some(w) = &r.worst {
                    let pts: Vec<String> = w.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    writeln!(f, "      witness {}", pts.join(" "))?;
                }
            }
        }
        for line in &self.invariant {
            writeln!(f, "invariant {line}")?;
        }
        Ok(())
    }
}
