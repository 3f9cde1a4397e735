//! Abstract syntax of hybrid pi-calculus terms.
//!
//! Names are compared by a numeric id minted from a process-wide atomic
//! counter, so renaming a bound name is just a matter of minting a new id
//! with the same display text. Bound-name hygiene is maintained by
//! [`substitute`] (capture-avoiding) and [`refresh_bound`] (used whenever a
//! replicated body is copied).
//!
//! Equality modulo alpha-conversion and structural congruence is decided on
//! canonical forms ([`CProc`]) where bound names are replaced by their binding
//! depth (de Bruijn levels). Levels do not depend on sibling order, so the same
//! canonical form can be sorted to compare parallel compositions and sums as
//! multisets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

static NEXT_NAME_ID: AtomicU64 = AtomicU64::new(1);

/// A channel, variable or message name.
#[derive(Clone)]
pub struct Name {
    id: u64,
    display: Arc<str>,
}

impl Name {
    /// Mint a name that has never been handed out before in this process.
    pub fn fresh(display: &str) -> Name {
        Name {
            id: NEXT_NAME_ID.fetch_add(1, Ordering::Relaxed),
            display: Arc::from(display),
        }
    }

    /// A fresh name with the same display text.
    pub fn refresh(&self) -> Name {
        Name {
            id: NEXT_NAME_ID.fetch_add(1, Ordering::Relaxed),
            display: self.display.clone(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn display(&self) -> &str {
        &self.display
    }
}

impl PartialEq for Name {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for Name {}
impl Hash for Name {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state)
    }
}
impl PartialOrd for Name {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Name {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.id.cmp(&other.id)
    }
}
impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.display, self.id)
    }
}
impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Min,
    Max,
    Neg,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Sqrt | Op::Neg => 1,
            _ => 2,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Sqrt => "sqrt",
            Op::Min => "min",
            Op::Max => "max",
            Op::Neg => "-",
        }
    }
}

#[derive(Clone, Debug)]
pub enum Expr {
    Num(f64),
    Str(Arc<str>),
    Var(Name),
    Op(Op, Vec<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(n: &Name) -> Expr {
        Expr::Var(n.clone())
    }

    /// Build an operator node. Panics if the arity is wrong, which is a
    /// programming error rather than a user error: the parser checks arity
    /// before calling this.
    pub fn op(op: Op, args: Vec<Expr>) -> Expr {
        assert_eq!(op.arity(), args.len(), "arity mismatch for {:?}", op);
        Expr::Op(op, args)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::op(Op::Add, vec![a, b])
    }
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::op(Op::Sub, vec![a, b])
    }
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::op(Op::Mul, vec![a, b])
    }
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::op(Op::Div, vec![a, b])
    }
    pub fn neg(a: Expr) -> Expr {
        Expr::op(Op::Neg, vec![a])
    }
    pub fn sqrt(a: Expr) -> Expr {
        Expr::op(Op::Sqrt, vec![a])
    }
    pub fn min(a: Expr, b: Expr) -> Expr {
        Expr::op(Op::Min, vec![a, b])
    }
    pub fn max(a: Expr, b: Expr) -> Expr {
        Expr::op(Op::Max, vec![a, b])
    }

    pub fn as_name(&self) -> Option<&Name> {
        match self {
            Expr::Var(n) => Some(n),
            _ => None,
        }
    }

    pub fn names_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            Expr::Var(n) => {
                out.insert(n.clone());
            }
            Expr::Op(_, args) => args.iter().for_each(|a| a.names_into(out)),
            _ => {}
        }
    }

    pub fn names(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.names_into(&mut s);
        s
    }

    fn map_names(&self, f: &impl Fn(&Name) -> Option<Expr>) -> Expr {
        match self {
            Expr::Var(n) => f(n).unwrap_or_else(|| self.clone()),
            Expr::Op(op, args) => Expr::Op(*op, args.iter().map(|a| a.map_names(f)).collect()),
            _ => self.clone(),
        }
    }

    /// Replace names according to `s`. Expressions have no binders.
    pub fn subst(&self, s: &Subst) -> Expr {
        if s.is_empty() {
            return self.clone();
        }
        self.map_names(&|n| s.get(n).cloned())
    }
}

/// Boolean expressions in their four base constructors.
#[derive(Clone, Debug)]
pub enum BoolExpr {
    False,
    Less(Expr, Expr),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Not(Box<BoolExpr>),
}

impl BoolExpr {
    pub fn tt() -> BoolExpr {
        BoolExpr::not(BoolExpr::False)
    }
    pub fn lt(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::Less(a, b)
    }
    pub fn gt(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::Less(b, a)
    }
    pub fn le(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::not(BoolExpr::Less(b, a))
    }
    pub fn ge(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::not(BoolExpr::Less(a, b))
    }
    pub fn eq(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::and(BoolExpr::le(a.clone(), b.clone()), BoolExpr::ge(a, b))
    }
    pub fn ne(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::not(BoolExpr::eq(a, b))
    }
    pub fn and(a: BoolExpr, b: BoolExpr) -> BoolExpr {
        BoolExpr::And(Box::new(a), Box::new(b))
    }
    pub fn or(a: BoolExpr, b: BoolExpr) -> BoolExpr {
        BoolExpr::not(BoolExpr::and(BoolExpr::not(a), BoolExpr::not(b)))
    }
    #[allow(clippy::should_implement_trait)]
    pub fn not(a: BoolExpr) -> BoolExpr {
        BoolExpr::Not(Box::new(a))
    }

    pub fn is_true_literal(&self) -> bool {
        matches!(self, BoolExpr::Not(b) if matches!(**b, BoolExpr::False))
    }

    pub fn names_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            BoolExpr::False => {}
            BoolExpr::Less(a, b) => {
                a.names_into(out);
                b.names_into(out);
            }
            BoolExpr::And(a, b) => {
                a.names_into(out);
                b.names_into(out);
            }
            BoolExpr::Not(a) => a.names_into(out),
        }
    }

    pub fn subst(&self, s: &Subst) -> BoolExpr {
        match self {
            BoolExpr::False => BoolExpr::False,
            BoolExpr::Less(a, b) => BoolExpr::Less(a.subst(s), b.subst(s)),
            BoolExpr::And(a, b) => BoolExpr::And(Box::new(a.subst(s)), Box::new(b.subst(s))),
            BoolExpr::Not(a) => BoolExpr::Not(Box::new(a.subst(s))),
        }
    }
}

/// Polarity of a ready-set entry: `In` is actuation (`v`), `Out` is sensing (`v̄`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    In,
    Out,
}

impl Polarity {
    pub fn flip(self) -> Polarity {
        match self {
            Polarity::In => Polarity::Out,
            Polarity::Out => Polarity::In,
        }
    }
}

/// A set of polarized names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ReadySet(pub BTreeSet<(Name, Polarity)>);

impl ReadySet {
    pub fn new() -> ReadySet {
        ReadySet::default()
    }

    pub fn from_iter<I: IntoIterator<Item = (Name, Polarity)>>(it: I) -> ReadySet {
        ReadySet(it.into_iter().collect())
    }

    pub fn insert(&mut self, n: Name, p: Polarity) {
        self.0.insert((n, p));
    }

    pub fn contains(&self, n: &Name, p: Polarity) -> bool {
        self.0.contains(&(n.clone(), p))
    }

    pub fn dual(&self) -> ReadySet {
        ReadySet(self.0.iter().map(|(n, p)| (n.clone(), p.flip())).collect())
    }

    pub fn union(&self, other: &ReadySet) -> ReadySet {
        ReadySet(self.0.union(&other.0).cloned().collect())
    }

    pub fn intersection(&self, other: &ReadySet) -> ReadySet {
        ReadySet(self.0.intersection(&other.0).cloned().collect())
    }

    pub fn without(&self, n: &Name) -> ReadySet {
        ReadySet(self.0.iter().filter(|(m, _)| m != n).cloned().collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Name, Polarity)> {
        self.0.iter()
    }
}

/// Body of a continuous prefix `{init | vars' = field & boundary, ready}(binders)`.
#[derive(Clone, Debug)]
pub struct Ode {
    pub init: Vec<Expr>,
    pub vars: Vec<Name>,
    pub field: Vec<Expr>,
    pub boundary: BoolExpr,
    pub ready: ReadySet,
    pub binders: Vec<Name>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("continuous prefix has {init} initial values, {vars} variables and {field} field entries")]
    Shape { init: usize, vars: usize, field: usize },
    #[error("variable `{0}` appears twice in a continuous prefix")]
    DuplicateVar(String),
    #[error("continuation binds {0} names but the prefix has {1} variables")]
    Binders(usize, usize),
    #[error("ready entry `{0}` is not a variable of the continuous prefix")]
    Ready(String),
}

impl Ode {
    pub fn new(
        init: Vec<Expr>,
        vars: Vec<Name>,
        field: Vec<Expr>,
        boundary: BoolExpr,
        ready: ReadySet,
        binders: Vec<Name>,
    ) -> Result<Ode, OdeError> {
        let ode = Ode { init, vars, field, boundary, ready, binders };
        ode.validate()?;
        Ok(ode)
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        if self.init.len() != self.vars.len() || self.field.len() != self.vars.len() {
            return Err(OdeError::Shape {
                init: self.init.len(),
                vars: self.vars.len(),
                field: self.field.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for v in &self.vars {
            if !seen.insert(v.clone()) {
                return Err(OdeError::DuplicateVar(v.display().to_string()));
            }
        }
        if !self.binders.is_empty() && self.binders.len() != self.vars.len() {
            return Err(OdeError::Binders(self.binders.len(), self.vars.len()));
        }
        for (n, _) in self.ready.iter() {
            if !seen.contains(n) {
                return Err(OdeError::Ready(n.display().to_string()));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, v: &Name) -> Option<usize> {
        self.vars.iter().position(|w| w == v)
    }
}

#[derive(Clone, Debug)]
pub enum Prefix {
    Tau,
    Input { chan: Name, binders: Vec<Name> },
    Output { chan: Name, payload: Vec<Expr> },
    Guard(BoolExpr),
    Cont(Arc<Ode>),
}

impl Prefix {
    /// Names bound by this prefix in its continuation.
    pub fn bound(&self) -> &[Name] {
        match self {
            Prefix::Input { binders, .. } => binders,
            Prefix::Cont(ode) => &ode.binders,
            _ => &[],
        }
    }

    fn names_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            Prefix::Tau => {}
            Prefix::Input { chan, .. } => {
                out.insert(chan.clone());
            }
            Prefix::Output { chan, payload } => {
                out.insert(chan.clone());
                payload.iter().for_each(|e| e.names_into(out));
            }
            Prefix::Guard(b) => b.names_into(out),
            Prefix::Cont(ode) => {
                ode.init.iter().for_each(|e| e.names_into(out));
                out.extend(ode.vars.iter().cloned());
                ode.field.iter().for_each(|e| e.names_into(out));
                ode.boundary.names_into(out);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub prefix: Prefix,
    pub cont: Process,
}

#[derive(Clone, Debug)]
pub enum Process {
    Sum(Arc<Vec<Branch>>),
    Res(Name, Arc<Process>),
    Par(Arc<Process>, Arc<Process>),
    Rep(Arc<Process>),
    /// Reference to a named definition; only exists before resolution.
    Call(Arc<str>, Vec<Expr>),
}

impl Process {
    pub fn nil() -> Process {
        Process::Sum(Arc::new(Vec::new()))
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Process::Sum(b) if b.is_empty())
    }

    pub fn prefix(prefix: Prefix, cont: Process) -> Process {
        Process::Sum(Arc::new(vec![Branch { prefix, cont }]))
    }

    pub fn sum(branches: Vec<Branch>) -> Process {
        Process::Sum(Arc::new(branches))
    }

    /// `M + N`, flattening both operands (which must be sums).
    pub fn plus(m: &Process, n: &Process) -> Option<Process> {
        match (m, n) {
            (Process::Sum(a), Process::Sum(b)) => {
                let mut v: Vec<Branch> = a.as_ref().clone();
                v.extend(b.iter().cloned());
                Some(Process::sum(v))
            }
            _ => None,
        }
    }

    pub fn par(p: Process, q: Process) -> Process {
        Process::Par(Arc::new(p), Arc::new(q))
    }

    /// Right-nested parallel composition; the empty list is `0`.
    pub fn par_all(mut ps: Vec<Process>) -> Process {
        match ps.len() {
            0 => Process::nil(),
            1 => ps.pop().unwrap(),
            _ => {
                let last = ps.pop().unwrap();
                ps.into_iter().rev().fold(last, |acc, p| Process::par(p, acc))
            }
        }
    }

    pub fn res(x: Name, p: Process) -> Process {
        Process::Res(x, Arc::new(p))
    }

    pub fn res_all(xs: &[Name], p: Process) -> Process {
        xs.iter().rev().fold(p, |acc, x| Process::res(x.clone(), acc))
    }

    pub fn rep(p: Process) -> Process {
        Process::Rep(Arc::new(p))
    }

    pub fn tau(cont: Process) -> Process {
        Process::prefix(Prefix::Tau, cont)
    }

    pub fn input(chan: &Name, binders: Vec<Name>, cont: Process) -> Process {
        Process::prefix(Prefix::Input { chan: chan.clone(), binders }, cont)
    }

    pub fn output(chan: &Name, payload: Vec<Expr>, cont: Process) -> Process {
        Process::prefix(Prefix::Output { chan: chan.clone(), payload }, cont)
    }

    pub fn guard(b: BoolExpr, cont: Process) -> Process {
        Process::prefix(Prefix::Guard(b), cont)
    }

    pub fn cont(ode: Ode, cont: Process) -> Process {
        Process::prefix(Prefix::Cont(Arc::new(ode)), cont)
    }

    /// `μx(y⃗).P @ ⟨e⃗⟩ ≜ (νx)(x̄⟨e⃗⟩ ∥ !x(y⃗).P)`.
    pub fn mu(x: Name, params: Vec<Name>, body: Process, args: Vec<Expr>) -> Process {
        let call = Process::output(&x, args, Process::nil());
        let server = Process::rep(Process::input(&x, params, body));
        Process::res(x, Process::par(call, server))
    }

    /// Number of syntax nodes (prefixes count once each).
    pub fn size(&self) -> usize {
        match self {
            Process::Sum(bs) => 1 + bs.iter().map(|b| 1 + b.cont.size()).sum::<usize>(),
            Process::Res(_, p) | Process::Rep(p) => 1 + p.size(),
            Process::Par(p, q) => 1 + p.size() + q.size(),
            Process::Call(_, _) => 1,
        }
    }

    pub fn has_calls(&self) -> bool {
        match self {
            Process::Sum(bs) => bs.iter().any(|b| b.cont.has_calls()),
            Process::Res(_, p) | Process::Rep(p) => p.has_calls(),
            Process::Par(p, q) => p.has_calls() || q.has_calls(),
            Process::Call(_, _) => true,
        }
    }

    pub fn has_continuous(&self) -> bool {
        match self {
            Process::Sum(bs) => bs
                .iter()
                .any(|b| matches!(b.prefix, Prefix::Cont(_)) || b.cont.has_continuous()),
            Process::Res(_, p) | Process::Rep(p) => p.has_continuous(),
            Process::Par(p, q) => p.has_continuous() || q.has_continuous(),
            Process::Call(_, _) => false,
        }
    }
}

/// Free names per the scoping rules: input and continuation binders and
/// restrictions bind, everything else (including ODE variables) is free.
pub fn free_names(p: &Process) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    free_into(p, &mut out);
    out
}

fn free_into(p: &Process, out: &mut BTreeSet<Name>) {
    match p {
        Process::Sum(bs) => {
            for b in bs.iter() {
                b.prefix.names_into(out);
                let bound = b.prefix.bound();
                if bound.is_empty() {
                    free_into(&b.cont, out);
                } else {
                    let mut inner = BTreeSet::new();
                    free_into(&b.cont, &mut inner);
                    for n in inner {
                        if !bound.contains(&n) {
                            out.insert(n);
                        }
                    }
                }
            }
        }
        Process::Res(x, body) => {
            let mut inner = BTreeSet::new();
            free_into(body, &mut inner);
            inner.remove(x);
            out.extend(inner);
        }
        Process::Par(a, b) => {
            free_into(a, out);
            free_into(b, out);
        }
        Process::Rep(a) => free_into(a, out),
        Process::Call(_, args) => args.iter().for_each(|e| e.names_into(out)),
    }
}

/// All names bound somewhere in `p`.
pub fn bound_names(p: &Process) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    bound_into(p, &mut out);
    out
}

fn bound_into(p: &Process, out: &mut BTreeSet<Name>) {
    match p {
        Process::Sum(bs) => {
            for b in bs.iter() {
                out.extend(b.prefix.bound().iter().cloned());
                bound_into(&b.cont, out);
            }
        }
        Process::Res(x, body) => {
            out.insert(x.clone());
            bound_into(body, out);
        }
        Process::Par(a, b) => {
            bound_into(a, out);
            bound_into(b, out);
        }
        Process::Rep(a) => bound_into(a, out),
        Process::Call(..) => {}
    }
}

/// Barendregt's convention: no name is both free and bound, and no name is
/// bound twice.
pub fn satisfies_barendregt(p: &Process) -> bool {
    fn walk(p: &Process, seen: &mut BTreeSet<Name>) -> bool {
        match p {
            Process::Sum(bs) => bs.iter().all(|b| {
                b.prefix.bound().iter().all(|n| seen.insert(n.clone())) && walk(&b.cont, seen)
            }),
            Process::Res(x, body) => seen.insert(x.clone()) && walk(body, seen),
            Process::Par(a, b) => walk(a, seen) && walk(b, seen),
            Process::Rep(a) => walk(a, seen),
            Process::Call(..) => true,
        }
    }
    let mut seen = BTreeSet::new();
    walk(p, &mut seen) && free_names(p).is_disjoint(&seen)
}

/// A finite map from pairwise distinct names to expressions.
#[derive(Clone, Debug, Default)]
pub struct Subst {
    map: BTreeMap<Name, Expr>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubstError {
    #[error("substitution target `{0}` appears twice")]
    DuplicateTarget(String),
    #[error("cannot substitute a non-name expression for `{0}`, which is used as a channel or variable")]
    ChannelPosition(String),
    #[error("substitution lengths differ: {0} targets, {1} replacements")]
    Arity(usize, usize),
}

impl Subst {
    pub fn new() -> Subst {
        Subst::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (Name, Expr)>>(pairs: I) -> Result<Subst, SubstError> {
        let mut s = Subst::new();
        for (n, e) in pairs {
            if s.map.contains_key(&n) {
                return Err(SubstError::DuplicateTarget(n.display().to_string()));
            }
            s.map.insert(n, e);
        }
        Ok(s)
    }

    /// `{e⃗/x⃗}`.
    pub fn zip(targets: &[Name], replacements: &[Expr]) -> Result<Subst, SubstError> {
        if targets.len() != replacements.len() {
            return Err(SubstError::Arity(targets.len(), replacements.len()));
        }
        Subst::from_pairs(targets.iter().cloned().zip(replacements.iter().cloned()))
    }

    pub fn single(x: &Name, e: Expr) -> Subst {
        let mut s = Subst::new();
        s.map.insert(x.clone(), e);
        s
    }

    pub fn rename(pairs: &[(Name, Name)]) -> Subst {
        let mut s = Subst::new();
        for (a, b) in pairs {
            s.map.insert(a.clone(), Expr::Var(b.clone()));
        }
        s
    }

    pub fn get(&self, n: &Name) -> Option<&Expr> {
        self.map.get(n)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = &Name> {
        self.map.keys()
    }

    pub fn replacements(&self) -> impl Iterator<Item = &Expr> {
        self.map.values()
    }

    fn without(&self, names: &[Name]) -> Subst {
        if names.iter().all(|n| !self.map.contains_key(n)) {
            return self.clone();
        }
        Subst {
            map: self
                .map
                .iter()
                .filter(|(k, _)| !names.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    fn with(&self, extra: &[(Name, Name)]) -> Subst {
        let mut s = self.clone();
        for (a, b) in extra {
            s.map.insert(a.clone(), Expr::Var(b.clone()));
        }
        s
    }

    fn name_at(&self, n: &Name) -> Result<Name, SubstError> {
        match self.map.get(n) {
            None => Ok(n.clone()),
            Some(Expr::Var(m)) => Ok(m.clone()),
            Some(_) => Err(SubstError::ChannelPosition(n.display().to_string())),
        }
    }
}

/// Capture-avoiding substitution `PΔ`.
///
/// A binder is renamed to a fresh name whenever it occurs free in one of the
/// replacements; binders that shadow a target stop the substitution below
/// them. Non-name expressions may only replace names used as values.
pub fn substitute(p: &Process, s: &Subst) -> Result<Process, SubstError> {
    if s.is_empty() {
        return Ok(p.clone());
    }
    let mut danger = BTreeSet::new();
    for e in s.replacements() {
        e.names_into(&mut danger);
    }
    subst_proc(p, s, &danger)
}

fn rebind(
    binders: &[Name],
    s: &Subst,
    danger: &BTreeSet<Name>,
) -> (Vec<Name>, Subst) {
    let inner = s.without(binders);
    let mut renames = Vec::new();
    let mut out = Vec::with_capacity(binders.len());
    for b in binders {
        if danger.contains(b) {
            let fresh = b.refresh();
            renames.push((b.clone(), fresh.clone()));
            out.push(fresh);
        } else {
            out.push(b.clone());
        }
    }
    if renames.is_empty() {
        (out, inner)
    } else {
        (out, inner.with(&renames))
    }
}

fn subst_ode(ode: &Ode, s: &Subst) -> Result<Ode, SubstError> {
    let vars = ode.vars.iter().map(|v| s.name_at(v)).collect::<Result<Vec<_>, _>>()?;
    let mut ready = ReadySet::new();
    for (n, pol) in ode.ready.iter() {
        ready.insert(s.name_at(n)?, *pol);
    }
    Ok(Ode {
        init: ode.init.iter().map(|e| e.subst(s)).collect(),
        vars,
        field: ode.field.iter().map(|e| e.subst(s)).collect(),
        boundary: ode.boundary.subst(s),
        ready,
        binders: ode.binders.clone(),
    })
}

fn subst_proc(p: &Process, s: &Subst, danger: &BTreeSet<Name>) -> Result<Process, SubstError> {
    match p {
        Process::Sum(bs) => {
            let mut out = Vec::with_capacity(bs.len());
            for b in bs.iter() {
                let (prefix, cont) = match &b.prefix {
                    Prefix::Tau => (Prefix::Tau, subst_proc(&b.cont, s, danger)?),
                    Prefix::Guard(g) => (Prefix::Guard(g.subst(s)), subst_proc(&b.cont, s, danger)?),
                    Prefix::Output { chan, payload } => (
                        Prefix::Output {
                            chan: s.name_at(chan)?,
                            payload: payload.iter().map(|e| e.subst(s)).collect(),
                        },
                        subst_proc(&b.cont, s, danger)?,
                    ),
                    Prefix::Input { chan, binders } => {
                        let chan = s.name_at(chan)?;
                        let (binders, inner) = rebind(binders, s, danger);
                        let cont = subst_proc(&b.cont, &inner, danger)?;
                        (Prefix::Input { chan, binders }, cont)
                    }
                    Prefix::Cont(ode) => {
                        let mut new = subst_ode(ode, s)?;
                        let (binders, inner) = rebind(&ode.binders, s, danger);
                        new.binders = binders;
                        let cont = subst_proc(&b.cont, &inner, danger)?;
                        (Prefix::Cont(Arc::new(new)), cont)
                    }
                };
                out.push(Branch { prefix, cont });
            }
            Ok(Process::sum(out))
        }
        Process::Res(x, body) => {
            let (xs, inner) = rebind(std::slice::from_ref(x), s, danger);
            Ok(Process::res(xs[0].clone(), subst_proc(body, &inner, danger)?))
        }
        Process::Par(a, b) => Ok(Process::par(subst_proc(a, s, danger)?, subst_proc(b, s, danger)?)),
        Process::Rep(a) => Ok(Process::rep(subst_proc(a, s, danger)?)),
        Process::Call(d, args) => Ok(Process::Call(d.clone(), args.iter().map(|e| e.subst(s)).collect())),
    }
}

/// Rename every bound name of `p` to a fresh one.
pub fn refresh_bound(p: &Process) -> Process {
    fn fresh_all(bs: &[Name]) -> (Vec<Name>, Vec<(Name, Name)>) {
        let fresh: Vec<Name> = bs.iter().map(|b| b.refresh()).collect();
        let pairs = bs.iter().cloned().zip(fresh.iter().cloned()).collect();
        (fresh, pairs)
    }
    fn go(p: &Process, s: &Subst) -> Process {
        match p {
            Process::Sum(bs) => Process::sum(
                bs.iter()
                    .map(|b| match &b.prefix {
                        Prefix::Input { chan, binders } => {
                            let (nb, pairs) = fresh_all(binders);
                            let chan = s.name_at(chan).expect("renaming is name-to-name");
                            Branch {
                                prefix: Prefix::Input { chan, binders: nb },
                                cont: go(&b.cont, &s.with(&pairs)),
                            }
                        }
                        Prefix::Cont(ode) => {
                            let mut new = subst_ode(ode, s).expect("renaming is name-to-name");
                            let (nb, pairs) = fresh_all(&ode.binders);
                            new.binders = nb;
                            Branch {
                                prefix: Prefix::Cont(Arc::new(new)),
                                cont: go(&b.cont, &s.with(&pairs)),
                            }
                        }
                        Prefix::Tau => Branch { prefix: Prefix::Tau, cont: go(&b.cont, s) },
                        Prefix::Guard(g) => Branch { prefix: Prefix::Guard(g.subst(s)), cont: go(&b.cont, s) },
                        Prefix::Output { chan, payload } => Branch {
                            prefix: Prefix::Output {
                                chan: s.name_at(chan).expect("renaming is name-to-name"),
                                payload: payload.iter().map(|e| e.subst(s)).collect(),
                            },
                            cont: go(&b.cont, s),
                        },
                    })
                    .collect(),
            ),
            Process::Res(x, body) => {
                let y = x.refresh();
                Process::res(y.clone(), go(body, &s.with(&[(x.clone(), y)])))
            }
            Process::Par(a, b) => Process::par(go(a, s), go(b, s)),
            Process::Rep(a) => Process::rep(go(a, s)),
            Process::Call(d, args) => Process::Call(d.clone(), args.iter().map(|e| e.subst(s)).collect()),
        }
    }
    go(p, &Subst::new())
}

// ---------------------------------------------------------------------------
// Canonical forms

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CName {
    Free(u64),
    Bound(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CExpr {
    Num(u64),
    Str(String),
    Var(CName),
    Op(Op, Vec<CExpr>),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CBool {
    False,
    Less(CExpr, CExpr),
    And(Box<CBool>, Box<CBool>),
    Not(Box<CBool>),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CPrefix {
    Tau,
    In(CName, usize),
    Out(CName, Vec<CExpr>),
    Guard(CBool),
    Cont {
        init: Vec<CExpr>,
        vars: Vec<CName>,
        field: Vec<CExpr>,
        boundary: CBool,
        ready: Vec<(CName, Polarity)>,
        binders: usize,
    },
}

/// Canonical process: bound names replaced by binding depth.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CProc {
    Sum(Vec<(CPrefix, CProc)>),
    Res(Box<CProc>),
    Par(Vec<CProc>),
    Rep(Box<CProc>),
    Call(String, Vec<CExpr>),
}

/// Canonical bits of a float: `-0.0` and `0.0` coincide, all NaNs coincide.
pub fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else if v.is_nan() {
        f64::NAN.to_bits()
    } else {
        v.to_bits()
    }
}

struct Env {
    levels: BTreeMap<Name, u32>,
    depth: u32,
}

impl Env {
    fn name(&self, n: &Name) -> CName {
        match self.levels.get(n) {
            Some(l) => CName::Bound(*l),
            None => CName::Free(n.id()),
        }
    }

    fn bind(&self, ns: &[Name]) -> Env {
        let mut levels = self.levels.clone();
        let mut depth = self.depth;
        for n in ns {
            levels.insert(n.clone(), depth);
            depth += 1;
        }
        Env { levels, depth }
    }

    fn expr(&self, e: &Expr) -> CExpr {
        match e {
            Expr::Num(v) => CExpr::Num(canonical_bits(*v)),
            Expr::Str(s) => CExpr::Str(s.to_string()),
            Expr::Var(n) => CExpr::Var(self.name(n)),
            Expr::Op(op, args) => CExpr::Op(*op, args.iter().map(|a| self.expr(a)).collect()),
        }
    }

    fn boolean(&self, b: &BoolExpr) -> CBool {
        match b {
            BoolExpr::False => CBool::False,
            BoolExpr::Less(x, y) => CBool::Less(self.expr(x), self.expr(y)),
            BoolExpr::And(x, y) => CBool::And(Box::new(self.boolean(x)), Box::new(self.boolean(y))),
            BoolExpr::Not(x) => CBool::Not(Box::new(self.boolean(x))),
        }
    }
}

fn canon(p: &Process, env: &Env, modulo_ac: bool) -> CProc {
    match p {
        Process::Sum(bs) => {
            let mut out: Vec<(CPrefix, CProc)> = bs
                .iter()
                .map(|b| {
                    let (cp, inner) = match &b.prefix {
                        Prefix::Tau => (CPrefix::Tau, None),
                        Prefix::Guard(g) => (CPrefix::Guard(env.boolean(g)), None),
                        Prefix::Output { chan, payload } => (
                            CPrefix::Out(env.name(chan), payload.iter().map(|e| env.expr(e)).collect()),
                            None,
                        ),
                        Prefix::Input { chan, binders } => {
                            (CPrefix::In(env.name(chan), binders.len()), Some(env.bind(binders)))
                        }
                        Prefix::Cont(ode) => {
                            let mut ready: Vec<(CName, Polarity)> =
                                ode.ready.iter().map(|(n, p)| (env.name(n), *p)).collect();
                            ready.sort();
                            let cp = CPrefix::Cont {
                                init: ode.init.iter().map(|e| env.expr(e)).collect(),
                                vars: ode.vars.iter().map(|v| env.name(v)).collect(),
                                field: ode.field.iter().map(|e| env.expr(e)).collect(),
                                boundary: env.boolean(&ode.boundary),
                                ready,
                                binders: ode.binders.len(),
                            };
                            (cp, Some(env.bind(&ode.binders)))
                        }
                    };
                    let cont = canon(&b.cont, inner.as_ref().unwrap_or(env), modulo_ac);
                    (cp, cont)
                })
                .collect();
            if modulo_ac {
                out.sort();
            }
            CProc::Sum(out)
        }
        Process::Res(x, body) => CProc::Res(Box::new(canon(body, &env.bind(std::slice::from_ref(x)), modulo_ac))),
        Process::Par(a, b) => {
            if modulo_ac {
                let mut parts = Vec::new();
                flatten_par(p, &mut parts);
                let mut cs: Vec<CProc> = parts.iter().map(|q| canon(q, env, true)).collect();
                cs.sort();
                CProc::Par(cs)
            } else {
                CProc::Par(vec![canon(a, env, false), canon(b, env, false)])
            }
        }
        Process::Rep(a) => CProc::Rep(Box::new(canon(a, env, modulo_ac))),
        Process::Call(d, args) => CProc::Call(d.to_string(), args.iter().map(|e| env.expr(e)).collect()),
    }
}

/// Collect the maximal non-parallel components of `p`.
pub fn flatten_par<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
    match p {
        Process::Par(a, b) => {
            flatten_par(a, out);
            flatten_par(b, out);
        }
        _ => out.push(p),
    }
}

/// Canonical form up to alpha-conversion only.
pub fn alpha_canonical(p: &Process) -> CProc {
    canon(p, &Env { levels: BTreeMap::new(), depth: 0 }, false)
}

/// Canonical form up to alpha-conversion, commutativity and associativity of
/// `∥` and `+`.
pub fn congruence_canonical(p: &Process) -> CProc {
    canon(p, &Env { levels: BTreeMap::new(), depth: 0 }, true)
}

pub fn alpha_equivalent(p: &Process, q: &Process) -> bool {
    alpha_canonical(p) == alpha_canonical(q)
}

pub fn struct_congruent(p: &Process, q: &Process) -> bool {
    congruence_canonical(p) == congruence_canonical(q)
}

/// Reorder `p` into the representative of its congruence class: parallel
/// components and sum branches sorted by canonical form, parallel
/// right-nested.
pub fn normalize(p: &Process) -> Process {
    fn key(p: &Process) -> CProc {
        congruence_canonical(p)
    }
    match p {
        Process::Sum(bs) => {
            let mut v: Vec<(CProc, Branch)> = bs
                .iter()
                .map(|b| {
                    let nb = Branch { prefix: b.prefix.clone(), cont: normalize(&b.cont) };
                    let k = key(&Process::prefix(nb.prefix.clone(), nb.cont.clone()));
                    (k, nb)
                })
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            Process::sum(v.into_iter().map(|(_, b)| b).collect())
        }
        Process::Res(x, body) => Process::res(x.clone(), normalize(body)),
        Process::Par(..) => {
            let mut parts = Vec::new();
            flatten_par(p, &mut parts);
            let mut v: Vec<(CProc, Process)> = parts
                .into_iter()
                .map(|q| {
                    let n = normalize(q);
                    (key(&n), n)
                })
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            Process::par_all(v.into_iter().map(|(_, q)| q).collect())
        }
        Process::Rep(a) => Process::rep(normalize(a)),
        Process::Call(..) => p.clone(),
    }
}
