//! Valuations, expression evaluation, sampled flows and assumption/guarantee
//! contracts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::syntax::{canonical_bits, BoolExpr, Expr, Name, Op, ReadySet};

/// Agreement tolerance when gluing or composing flows.
pub const TAU_GLUE: f64 = 1e-9;

/// A valuation of continuous variables.
pub type State = BTreeMap<Name, f64>;

/// Result of evaluating an expression.
#[derive(Clone, Debug)]
pub enum Value {
    Real(f64),
    Residual(Expr),
    Undefined,
}

impl Value {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }
}

/// Three-valued truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tri {
    True,
    False,
    Undefined,
}

impl Tri {
    pub fn from_bool(b: bool) -> Tri {
        if b {
            Tri::True
        } else {
            Tri::False
        }
    }
}

/// Apply an operator to real arguments; `None` means undefined.
pub fn apply_op(op: Op, a: &[f64]) -> Option<f64> {
    let r = match op {
        Op::Add => a[0] + a[1],
        Op::Sub => a[0] - a[1],
        Op::Mul => a[0] * a[1],
        Op::Div => {
            if a[1] == 0.0 {
                return None;
            }
            a[0] / a[1]
        }
        Op::Sqrt => {
            if a[0] < 0.0 {
                return None;
            }
            a[0].sqrt()
        }
        Op::Min => a[0].min(a[1]),
        Op::Max => a[0].max(a[1]),
        Op::Neg => -a[0],
    };
    if r.is_finite() {
        Some(r)
    } else {
        None
    }
}

/// Evaluate `e` in `s`. Names outside the state stay symbolic, and an
/// operator only fires when all of its arguments are real.
pub fn eval_expr(e: &Expr, s: &State) -> Value {
    match e {
        Expr::Num(v) => Value::Real(*v),
        Expr::Str(_) => Value::Residual(e.clone()),
        Expr::Var(n) => match s.get(n) {
            Some(v) => Value::Real(*v),
            None => Value::Residual(e.clone()),
        },
        Expr::Op(op, args) => {
            let mut vals = Vec::with_capacity(args.len());
            let mut residual = false;
            for a in args {
                match eval_expr(a, s) {
                    Value::Undefined => return Value::Undefined,
                    v => {
                        residual |= !matches!(v, Value::Real(_));
                        vals.push(v);
                    }
                }
            }
            if residual {
                let args = vals
                    .into_iter()
                    .map(|v| match v {
                        Value::Real(x) => Expr::Num(x),
                        Value::Residual(r) => r,
                        Value::Undefined => unreachable!(),
                    })
                    .collect();
                Value::Residual(Expr::Op(*op, args))
            } else {
                let xs: Vec<f64> = vals.iter().map(|v| v.as_real().unwrap()).collect();
                match apply_op(*op, &xs) {
                    Some(r) => Value::Real(r),
                    None => Value::Undefined,
                }
            }
        }
    }
}

fn same_expr(a: &Expr, b: &Expr) -> bool {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => canonical_bits(*x) == canonical_bits(*y),
        (Expr::Str(x), Expr::Str(y)) => x == y,
        (Expr::Var(x), Expr::Var(y)) => x == y,
        (Expr::Op(o1, a1), Expr::Op(o2, a2)) => {
            o1 == o2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| same_expr(x, y))
        }
        _ => false,
    }
}

/// Evaluate a Boolean expression. Comparisons involving symbolic values are
/// undefined, except `e < e` which is false whatever `e` denotes; connectives
/// are strict in undefinedness.
pub fn eval_bool(b: &BoolExpr, s: &State) -> Tri {
    match b {
        BoolExpr::False => Tri::False,
        BoolExpr::Less(l, r) => match (eval_expr(l, s), eval_expr(r, s)) {
            (Value::Real(x), Value::Real(y)) => Tri::from_bool(x < y),
            (Value::Undefined, _) | (_, Value::Undefined) => Tri::Undefined,
            (x, y) => {
                let ex = value_expr(x);
                let ey = value_expr(y);
                if same_expr(&ex, &ey) {
                    Tri::False
                } else {
                    Tri::Undefined
                }
            }
        },
        BoolExpr::And(x, y) => match (eval_bool(x, s), eval_bool(y, s)) {
            (Tri::Undefined, _) | (_, Tri::Undefined) => Tri::Undefined,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::False,
        },
        BoolExpr::Not(x) => match eval_bool(x, s) {
            Tri::True => Tri::False,
            Tri::False => Tri::True,
            Tri::Undefined => Tri::Undefined,
        },
    }
}

fn value_expr(v: Value) -> Expr {
    match v {
        Value::Real(x) => Expr::Num(x),
        Value::Residual(e) => e,
        Value::Undefined => unreachable!(),
    }
}

/// Evaluate as far as possible without a state, replacing `e` by a constant
/// when it is closed and defined.
pub fn fold(e: &Expr) -> Expr {
    match eval_expr(e, &State::new()) {
        Value::Real(x) => Expr::Num(x),
        Value::Residual(r) => r,
        Value::Undefined => e.clone(),
    }
}

pub fn ready_dual(r: &ReadySet) -> ReadySet {
    r.dual()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("flow grid must start at 0, increase strictly and have positive duration")]
    BadGrid,
    #[error("flow sample has {got} values, expected {expected}")]
    BadSample { expected: usize, got: usize },
    #[error("flows range over different names")]
    NameMismatch,
    #[error("flows do not glue: `{name}` differs by {offset:e}")]
    Glue { name: String, offset: f64 },
    #[error("durations differ: {0} vs {1}")]
    Duration(f64, f64),
    #[error("guarantees overlap on `{0}`")]
    GuaranteeOverlap(String),
    #[error("assumption and guarantee share `{0}`")]
    NotDisjoint(String),
    #[error("flows disagree on `{name}` by {offset:e}")]
    Disagree { name: String, offset: f64 },
}

/// A finite-duration trajectory sampled on a strictly increasing grid,
/// interpolated linearly in between.
#[derive(Clone, Debug)]
pub struct Flow {
    names: Vec<Name>,
    grid: Vec<f64>,
    samples: Vec<Vec<f64>>,
    right_limit: Vec<f64>,
    /// Grid times where the trajectory may have a corner (glue points,
    /// boundary crossings); excluded from derivative checks.
    events: Vec<f64>,
}

impl Flow {
    pub fn new(names: Vec<Name>, grid: Vec<f64>, samples: Vec<Vec<f64>>) -> Result<Flow, FlowError> {
        if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FlowError::BadGrid);
        }
        if samples.len() != grid.len() {
            return Err(FlowError::BadSample { expected: grid.len(), got: samples.len() });
        }
        for s in &samples {
            if s.len() != names.len() {
                return Err(FlowError::BadSample { expected: names.len(), got: s.len() });
            }
        }
        let right_limit = samples.last().unwrap().clone();
        Ok(Flow { names, grid, samples, right_limit, events: Vec::new() })
    }

    /// Flow over no names lasting `d`.
    pub fn empty(d: f64) -> Result<Flow, FlowError> {
        Flow::new(Vec::new(), vec![0.0, d], vec![vec![], vec![]])
    }

    /// Sample `f` on a uniform grid of step `step` (the last step may be shorter).
    pub fn sample(names: Vec<Name>, duration: f64, step: f64, f: impl Fn(f64) -> Vec<f64>) -> Result<Flow, FlowError> {
        if !(duration > 0.0) || !(step > 0.0) {
            return Err(FlowError::BadGrid);
        }
        let mut grid = Vec::new();
        let mut k = 0u64;
        loop {
            let t = k as f64 * step;
            if t >= duration - step * 1e-9 {
                break;
            }
            grid.push(t);
            k += 1;
        }
        grid.push(duration);
        let samples = grid.iter().map(|&t| f(t)).collect();
        Flow::new(names, grid, samples)
    }

    pub fn with_events(mut self, events: Vec<f64>) -> Flow {
        self.events = events;
        self
    }

    pub fn duration(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn names(&self) -> &[Name] {
        &self.names
    }

    pub fn name_set(&self) -> BTreeSet<Name> {
        self.names.iter().cloned().collect()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn left(&self) -> &[f64] {
        &self.samples[0]
    }

    pub fn right_limit(&self) -> &[f64] {
        &self.right_limit
    }

    pub fn index_of(&self, n: &Name) -> Option<usize> {
        self.names.iter().position(|m| m == n)
    }

    /// Interpolated values at `t`, clamped to the flow's domain.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let g = &self.grid;
        if t <= 0.0 {
            return self.samples[0].clone();
        }
        if t >= self.duration() {
            return self.right_limit.clone();
        }
        let j = g.partition_point(|&x| x <= t);
        let (i0, i1) = (j - 1, j);
        let (t0, t1) = (g[i0], g[i1]);
        let w = (t - t0) / (t1 - t0);
        self.samples[i0]
            .iter()
            .zip(&self.samples[i1])
            .map(|(a, b)| a + (b - a) * w)
            .collect()
    }

    pub fn state_at(&self, t: f64) -> State {
        self.names.iter().cloned().zip(self.value_at(t)).collect()
    }

    /// The sub-flow over `keep` (names not in the flow are ignored).
    pub fn restrict(&self, keep: &BTreeSet<Name>) -> Flow {
        let idx: Vec<usize> = (0..self.names.len()).filter(|&i| keep.contains(&self.names[i])).collect();
        self.project(&idx)
    }

    pub fn without(&self, drop: &BTreeSet<Name>) -> Flow {
        let idx: Vec<usize> = (0..self.names.len()).filter(|&i| !drop.contains(&self.names[i])).collect();
        self.project(&idx)
    }

    fn project(&self, idx: &[usize]) -> Flow {
        Flow {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            grid: self.grid.clone(),
            samples: self.samples.iter().map(|s| idx.iter().map(|&i| s[i]).collect()).collect(),
            right_limit: idx.iter().map(|&i| self.right_limit[i]).collect(),
            events: self.events.clone(),
        }
    }

    /// Re-sample on `grid` (which must span the same duration).
    fn resample(&self, grid: &[f64]) -> Vec<Vec<f64>> {
        grid.iter().map(|&t| self.value_at(t)).collect()
    }
}

fn merge_grids(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    g.sort_by(|x, y| x.partial_cmp(y).unwrap());
    g.dedup_by(|x, y| (*x - *y).abs() <= 1e-12);
    g
}

/// `ρ₁ ⌢ ρ₂`: append `r2` after `r1`.
pub fn flow_concat(r1: &Flow, r2: &Flow) -> Result<Flow, FlowError> {
    if r1.name_set() != r2.name_set() {
        return Err(FlowError::NameMismatch);
    }
    let perm: Vec<usize> = r1.names.iter().map(|n| r2.index_of(n).unwrap()).collect();
    let left2: Vec<f64> = perm.iter().map(|&i| r2.left()[i]).collect();
    let mut worst: Option<(usize, f64)> = None;
    for (i, (a, b)) in r1.right_limit.iter().zip(&left2).enumerate() {
        let off = (a - b).abs();
        if off > TAU_GLUE && worst.map_or(true, |(_, w)| off > w) {
            worst = Some((i, off));
        }
    }
    if let Some((i, off)) = worst {
        return Err(FlowError::Glue { name: r1.names[i].display().to_string(), offset: off });
    }
    let d1 = r1.duration();
    let mut grid = r1.grid.clone();
    let mut samples = r1.samples.clone();
    samples.pop();
    grid.pop();
    for (t, s) in r2.grid.iter().zip(&r2.samples) {
        grid.push(d1 + t);
        samples.push(perm.iter().map(|&i| s[i]).collect());
    }
    let mut events = r1.events.clone();
    events.push(d1);
    events.extend(r2.events.iter().map(|t| t + d1));
    Ok(Flow::new(r1.names.clone(), grid, samples)?.with_events(events))
}

/// Union of two flows of equal duration; shared names must agree.
pub fn flow_union(a: &Flow, b: &Flow) -> Result<Flow, FlowError> {
    if (a.duration() - b.duration()).abs() > TAU_GLUE {
        return Err(FlowError::Duration(a.duration(), b.duration()));
    }
    let grid = merge_grids(&a.grid, &b.grid);
    let sa = a.resample(&grid);
    let sb = b.resample(&grid);
    let mut names = a.names.clone();
    let mut extra = Vec::new();
    for (j, n) in b.names.iter().enumerate() {
        match a.index_of(n) {
            Some(i) => {
                for (ra, rb) in sa.iter().zip(&sb) {
                    let off = (ra[i] - rb[j]).abs();
                    if off > TAU_GLUE {
                        return Err(FlowError::Disagree { name: n.display().to_string(), offset: off });
                    }
                }
            }
            None => {
                names.push(n.clone());
                extra.push(j);
            }
        }
    }
    let samples = sa
        .into_iter()
        .zip(sb)
        .map(|(mut ra, rb)| {
            ra.extend(extra.iter().map(|&j| rb[j]));
            ra
        })
        .collect();
    let mut events = a.events.clone();
    events.extend(b.events.iter().copied());
    events.sort_by(|x, y| x.partial_cmp(y).unwrap());
    events.dedup();
    let mut g = grid;
    let last = g.len() - 1;
    g[last] = a.duration();
    Ok(Flow::new(names, g, samples)?.with_events(events))
}

/// A flow split into an assumption (external variables) and a guarantee
/// (variables defined locally).
#[derive(Clone, Debug)]
pub struct Contract {
    pub assumption: Flow,
    pub guarantee: Flow,
}

impl Contract {
    pub fn new(assumption: Flow, guarantee: Flow) -> Result<Contract, FlowError> {
        if (assumption.duration() - guarantee.duration()).abs() > TAU_GLUE {
            return Err(FlowError::Duration(assumption.duration(), guarantee.duration()));
        }
        if let Some(n) = assumption.names.iter().find(|n| guarantee.index_of(n).is_some()) {
            return Err(FlowError::NotDisjoint(n.display().to_string()));
        }
        Ok(Contract { assumption, guarantee })
    }

    pub fn closed(guarantee: Flow) -> Contract {
        let d = guarantee.duration();
        Contract { assumption: Flow::empty(d).expect("positive duration"), guarantee }
    }

    pub fn duration(&self) -> f64 {
        self.guarantee.duration()
    }

    pub fn is_closed(&self) -> bool {
        self.assumption.names.is_empty()
    }

    /// The joint flow `A ⊎ G`.
    pub fn joint(&self) -> Flow {
        flow_union(&self.assumption, &self.guarantee).expect("assumption and guarantee are disjoint")
    }
}

fn check_agreement(x: &Flow, y: &Flow, names: &BTreeSet<Name>) -> Result<(), FlowError> {
    if names.is_empty() {
        return Ok(());
    }
    let grid = merge_grids(&x.grid, &y.grid);
    for n in names {
        let (i, j) = (x.index_of(n).unwrap(), y.index_of(n).unwrap());
        for &t in &grid {
            let off = (x.value_at(t)[i] - y.value_at(t)[j]).abs();
            if off > TAU_GLUE {
                return Err(FlowError::Disagree { name: n.display().to_string(), offset: off });
            }
        }
    }
    Ok(())
}

/// Contract composition `((A − G′) ∪ (A′ − G)) · (G ∪ G′)`.
pub fn contract_compose(c1: &Contract, c2: &Contract) -> Result<Contract, FlowError> {
    if (c1.duration() - c2.duration()).abs() > TAU_GLUE {
        return Err(FlowError::Duration(c1.duration(), c2.duration()));
    }
    let (g1, g2) = (c1.guarantee.name_set(), c2.guarantee.name_set());
    if let Some(n) = g1.intersection(&g2).next() {
        return Err(FlowError::GuaranteeOverlap(n.display().to_string()));
    }
    let (a1, a2) = (c1.assumption.name_set(), c2.assumption.name_set());
    check_agreement(&c1.assumption, &c2.guarantee, &a1.intersection(&g2).cloned().collect())?;
    check_agreement(&c2.assumption, &c1.guarantee, &a2.intersection(&g1).cloned().collect())?;
    let assumption = flow_union(&c1.assumption.without(&g2), &c2.assumption.without(&g1))?;
    let guarantee = flow_union(&c1.guarantee, &c2.guarantee)?;
    Contract::new(assumption, guarantee)
}

/// Does the guarantee of `c` evolve along `vars' = field`? Checked with
/// central differences at interior grid points, skipping event points and
/// their neighbours.
pub fn check_ode_along(vars: &[Name], field: &[Expr], c: &Contract, tol: f64) -> bool {
    let g = &c.guarantee;
    let joint = c.joint();
    let near_event = |t: f64| g.events.iter().any(|e| (e - t).abs() <= 1e-12);
    let idx: Option<Vec<usize>> = vars.iter().map(|v| g.index_of(v)).collect();
    let Some(idx) = idx else { return false };
    for i in 1..g.grid.len().saturating_sub(1) {
        let (t0, t, t1) = (g.grid[i - 1], g.grid[i], g.grid[i + 1]);
        if near_event(t0) || near_event(t) || near_event(t1) {
            continue;
        }
        let s = joint.state_at(t);
        for (k, &j) in idx.iter().enumerate() {
            let fd = (g.samples[i + 1][j] - g.samples[i - 1][j]) / (t1 - t0);
            let Some(f) = eval_expr(&field[k], &s).as_real() else { return false };
            if (fd - f).abs() > tol * (1.0 + f.abs()) {
                return false;
            }
        }
    }
    true
}

/// Give each name a distinct printable label, suffixing `_k` on clashes.
pub fn unique_labels<'a>(names: impl IntoIterator<Item = &'a Name>) -> Vec<String> {
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for n in names {
        let mut label = n.display().to_string();
        let mut k = 1;
        while used.contains(&label) {
            label = format!("{}_{}", n.display(), k);
            k += 1;
        }
        used.insert(label.clone());
        out.push(label);
    }
    out
}

/// CSV with a `time` column followed by one column per name, 17 significant
/// digits.
pub fn flow_to_csv(f: &Flow) -> String {
    let mut out = String::from("time");
    for l in unique_labels(&f.names) {
        out.push(',');
        out.push_str(&l);
    }
    out.push('\n');
    for (t, s) in f.grid.iter().zip(&f.samples) {
        let _ = write!(out, "{:.16e}", t);
        for v in s {
            let _ = write!(out, ",{:.16e}", v);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{Polarity, ReadySet};

    fn n(s: &str) -> Name {
        Name::fresh(s)
    }

    #[test]
    fn evaluation_rules() {
        let s = State::new();
        let e = Expr::add(Expr::num(1.0), Expr::num(2.0));
        assert_eq!(eval_expr(&e, &s).as_real(), Some(3.0));
        let x = n("x");
        assert!(matches!(eval_expr(&Expr::var(&x), &s), Value::Residual(Expr::Var(ref m)) if *m == x));
        let bad = Expr::div(Expr::num(1.0), Expr::num(0.0));
        assert!(matches!(eval_expr(&bad, &s), Value::Undefined));
        assert!(matches!(eval_expr(&Expr::sqrt(Expr::num(-1.0)), &s), Value::Undefined));
        let mut st = State::new();
        st.insert(x.clone(), 4.0);
        assert_eq!(eval_expr(&Expr::sqrt(Expr::var(&x)), &st).as_real(), Some(2.0));
    }

    #[test]
    fn boolean_rules() {
        let s = State::new();
        let (x, y) = (n("x"), n("y"));
        assert_eq!(eval_bool(&BoolExpr::eq(Expr::var(&x), Expr::var(&x)), &s), Tri::True);
        assert_eq!(eval_bool(&BoolExpr::gt(Expr::var(&x), Expr::var(&y)), &s), Tri::Undefined);
        let strict = BoolExpr::and(
            BoolExpr::False,
            BoolExpr::lt(Expr::div(Expr::num(1.0), Expr::num(0.0)), Expr::num(1.0)),
        );
        assert_eq!(eval_bool(&strict, &s), Tri::Undefined);
        assert_eq!(eval_bool(&BoolExpr::lt(Expr::num(1.0), Expr::num(2.0)), &s), Tri::True);
        assert_eq!(eval_bool(&BoolExpr::or(BoolExpr::False, BoolExpr::tt()), &s), Tri::True);
    }

    #[test]
    fn concat_constant_flows() {
        let c = n("c");
        let f = Flow::sample(vec![c.clone()], 1.0, 0.25, |_| vec![0.0]).unwrap();
        let g = flow_concat(&f, &f).unwrap();
        assert_eq!(g.duration(), 2.0);
        assert!(g.samples().iter().all(|s| s[0] == 0.0));
    }

    #[test]
    fn concat_clock_pieces() {
        let c = n("c");
        let f = Flow::sample(vec![c.clone()], 1.0, 0.1, |t| vec![t]).unwrap();
        let g = Flow::sample(vec![c.clone()], 2.0, 0.1, |t| vec![1.0 + t]).unwrap();
        let h = flow_concat(&f, &g).unwrap();
        assert!((h.duration() - 3.0).abs() < 1e-12);
        for (t, s) in h.grid().iter().zip(h.samples()) {
            assert!((s[0] - t).abs() < 1e-12);
        }
        let bad = Flow::sample(vec![c.clone()], 1.0, 0.1, |t| vec![5.0 + t]).unwrap();
        assert!(matches!(flow_concat(&f, &bad), Err(FlowError::Glue { .. })));
    }

    #[test]
    fn compose_closes_mutual_assumptions() {
        let (v, w) = (n("v"), n("w"));
        let fw = Flow::sample(vec![w.clone()], 1.0, 0.1, |t| vec![t]).unwrap();
        let fv = Flow::sample(vec![v.clone()], 1.0, 0.1, |t| vec![2.0 * t]).unwrap();
        let c1 = Contract::new(fw.clone(), fv.clone()).unwrap();
        let c2 = Contract::new(fv.clone(), fw.clone()).unwrap();
        let c = contract_compose(&c1, &c2).unwrap();
        assert!(c.is_closed());
        assert_eq!(c.guarantee.name_set(), BTreeSet::from([v.clone(), w.clone()]));
        let overlap = contract_compose(&Contract::closed(fv.clone()), &Contract::closed(fv.clone()));
        assert!(matches!(overlap, Err(FlowError::GuaranteeOverlap(_))));
        let wrong = Flow::sample(vec![w.clone()], 1.0, 0.1, |t| vec![t + 1.0]).unwrap();
        let c3 = Contract::new(fv.clone(), wrong).unwrap();
        assert!(matches!(contract_compose(&c1, &c3), Err(FlowError::Disagree { .. })));
    }

    #[test]
    fn ode_check_against_exact_solutions() {
        let (c, v) = (n("c"), n("v"));
        let clock = Contract::closed(Flow::sample(vec![c.clone()], 1.0, 1e-3, |t| vec![t]).unwrap());
        assert!(check_ode_along(&[c.clone()], &[Expr::num(1.0)], &clock, 1e-4));
        let exp = Contract::closed(Flow::sample(vec![v.clone()], 1.0, 1e-3, |t| vec![t.exp()]).unwrap());
        assert!(check_ode_along(&[v.clone()], &[Expr::var(&v)], &exp, 1e-4));
        let lin = Contract::closed(Flow::sample(vec![v.clone()], 1.0, 1e-3, |t| vec![t]).unwrap());
        assert!(!check_ode_along(&[v.clone()], &[Expr::var(&v)], &lin, 1e-4));
    }

    #[test]
    fn dual_of_train_interface() {
        let (p, v, a) = (n("p"), n("v"), n("a"));
        let r = ReadySet::from_iter([(p.clone(), Polarity::Out), (v.clone(), Polarity::Out), (a.clone(), Polarity::In)]);
        let d = ready_dual(&r);
        assert_eq!(
            d,
            ReadySet::from_iter([(p.clone(), Polarity::In), (v.clone(), Polarity::In), (a.clone(), Polarity::Out)])
        );
        assert!(ready_dual(&ReadySet::new()).is_empty());
        let x = n("x");
        let blocked = ready_dual(&ReadySet::from_iter([(x.clone(), Polarity::In)]))
            .intersection(&ReadySet::from_iter([(x.clone(), Polarity::Out)]));
        assert_eq!(blocked.len(), 1);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = n("c");
        let f = Flow::sample(vec![c], 1.0, 0.5, |t| vec![t]).unwrap();
        let csv = flow_to_csv(&f);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "time,c");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("1.0000000000000000e0,"));
    }
}
