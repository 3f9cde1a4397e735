//! Surface syntax: model files with constants, definitions and a `run` entry,
//! and a pretty-printer whose output parses back to an alpha-equivalent term.
//!
//! Definitions are macros. A call `D(e1,...)` is replaced by D's body with
//! parameters substituted; free names of the body are also captured by the
//! binders of the same spelling at the call site, so a definition can talk
//! about channels restricted by its caller.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::syntax::{
    free_names, refresh_bound, substitute, BoolExpr, Branch, Expr, Name, Ode, OdeError, Op, Polarity, Prefix,
    Process, ReadySet, Subst, SubstError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unknown definition `{name}`")]
    UnknownDef { line: usize, col: usize, name: String },
    #[error("{line}:{col}: `{name}` expects {expected} argument(s), got {got}")]
    Arity { line: usize, col: usize, name: String, expected: usize, got: usize },
    #[error("{line}:{col}: {err}")]
    Ode { line: usize, col: usize, err: OdeError },
    #[error("definition `{0}` is recursive; use `mu` or `repl` instead")]
    Cycle(String),
    #[error("model has no `run` entry")]
    NoEntry,
    #[error("no definition named `{0}`")]
    NoSuchDef(String),
    #[error("while inlining `{name}`: {err}")]
    Subst { name: String, err: SubstError },
}

const KEYWORDS: &[&str] = &[
    "const", "def", "run", "new", "repl", "mu", "tau", "ready", "and", "or", "not", "true", "false", "sqrt", "min",
    "max", "neg",
];

#[derive(Clone, Debug, PartialEq)]
enum T {
    Ident(String),
    Num(f64),
    Str(String),
    Kw(&'static str),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Tok {
    t: T,
    line: usize,
    col: usize,
}

const SYMS2: &[&str] = &["||", "<=", ">=", "==", "!="];
const SYMS1: &[&str] = &[
    ".", ",", "(", ")", "{", "}", "[", "]", "<", ">", "=", "!", "?", "'", "|", "&", ";", "+", "-", "*", "/", "@",
];

fn lex(src: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, msg: String| ParseError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (l0, c0) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let t = match KEYWORDS.iter().find(|k| **k == s) {
                Some(k) => T::Kw(k),
                None => T::Ident(s),
            };
            out.push(Tok { t, line: l0, col: c0 });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let v: f64 = s.parse().map_err(|_| err(l0, c0, format!("bad number `{s}`")))?;
            out.push(Tok { t: T::Num(v), line: l0, col: c0 });
            continue;
        }
        if c == '"' {
            let start = i + 1;
            i += 1;
            while i < chars.len() && chars[i] != '"' && chars[i] != '\n' {
                i += 1;
            }
            if i >= chars.len() || chars[i] != '"' {
                return Err(err(l0, c0, "unterminated string".into()));
            }
            let s: String = chars[start..i].iter().collect();
            i += 1;
            col += s.chars().count() + 2;
            out.push(Tok { t: T::Str(s), line: l0, col: c0 });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        if let Some(s) = SYMS2.iter().find(|s| **s == two) {
            out.push(Tok { t: T::Sym(s), line: l0, col: c0 });
            i += 2;
            col += 2;
            continue;
        }
        let one = c.to_string();
        if let Some(s) = SYMS1.iter().find(|s| **s == one) {
            out.push(Tok { t: T::Sym(s), line: l0, col: c0 });
            i += 1;
            col += 1;
            continue;
        }
        return Err(err(l0, c0, format!("unexpected character `{c}`")));
    }
    out.push(Tok { t: T::Eof, line, col });
    Ok(out)
}

/// A definition `def NAME(params) = body;` with calls still unresolved.
#[derive(Clone, Debug)]
pub struct Def {
    pub params: Vec<Name>,
    pub body: Process,
}

/// A parsed model file.
#[derive(Clone, Debug, Default)]
pub struct ModelFile {
    pub constants: BTreeMap<String, f64>,
    pub defs: BTreeMap<String, Def>,
    /// The `run` entry with all calls inlined.
    pub entry: Option<Process>,
    /// File-level free names by spelling.
    pub free: BTreeMap<String, Name>,
}

impl ModelFile {
    pub fn entry(&self) -> Result<&Process, ParseError> {
        self.entry.as_ref().ok_or(ParseError::NoEntry)
    }

    /// Inline `name(args)` at top level.
    pub fn instantiate(&self, name: &str, args: &[Expr]) -> Result<Process, ParseError> {
        let def = self.defs.get(name).ok_or_else(|| ParseError::NoSuchDef(name.to_string()))?;
        if def.params.len() != args.len() {
            return Err(ParseError::Arity {
                line: 0,
                col: 0,
                name: name.to_string(),
                expected: def.params.len(),
                got: args.len(),
            });
        }
        self.resolve(&Process::Call(name.into(), args.to_vec()), &mut Vec::new(), &mut Vec::new())
    }

    /// The entry, or a parameterless definition when `def` is given.
    pub fn select(&self, def: Option<&str>) -> Result<Process, ParseError> {
        match def {
            None => self.entry().cloned(),
            Some(d) => self.instantiate(d, &[]),
        }
    }

    pub fn free_name(&self, display: &str) -> Option<&Name> {
        self.free.get(display)
    }

    fn is_global(&self, n: &Name) -> bool {
        self.free.get(n.display()).is_some_and(|g| g == n)
    }

    fn resolve(&self, p: &Process, scope: &mut Vec<Name>, stack: &mut Vec<String>) -> Result<Process, ParseError> {
        Ok(match p {
            Process::Sum(bs) => {
                let mut out = Vec::with_capacity(bs.len());
                for b in bs.iter() {
                    let bound = b.prefix.bound().to_vec();
                    let k = scope.len();
                    scope.extend(bound);
                    let cont = self.resolve(&b.cont, scope, stack);
                    scope.truncate(k);
                    out.push(Branch { prefix: b.prefix.clone(), cont: cont? });
                }
                Process::sum(out)
            }
            Process::Res(x, body) => {
                scope.push(x.clone());
                let body = self.resolve(body, scope, stack);
                scope.pop();
                Process::res(x.clone(), body?)
            }
            Process::Par(a, b) => Process::par(self.resolve(a, scope, stack)?, self.resolve(b, scope, stack)?),
            Process::Rep(a) => Process::rep(self.resolve(a, scope, stack)?),
            Process::Call(d, args) => {
                let name = d.to_string();
                if stack.contains(&name) {
                    return Err(ParseError::Cycle(name));
                }
                let def = self.defs.get(&name).ok_or_else(|| ParseError::NoSuchDef(name.clone()))?;
                stack.push(name.clone());
                let mut inner = def.params.clone();
                let body = self.resolve(&def.body, &mut inner, stack);
                stack.pop();
                let body = body?;
                let mut pairs: Vec<(Name, Expr)> = def.params.iter().cloned().zip(args.iter().cloned()).collect();
                for n in free_names(&body) {
                    if !self.is_global(&n) {
                        continue;
                    }
                    if let Some(b) = scope.iter().rev().find(|b| b.display() == n.display()) {
                        pairs.push((n.clone(), Expr::Var(b.clone())));
                    }
                }
                let s = Subst::from_pairs(pairs).map_err(|err| ParseError::Subst { name: name.clone(), err })?;
                let body = substitute(&body, &s).map_err(|err| ParseError::Subst { name: name.clone(), err })?;
                refresh_bound(&body)
            }
        })
    }
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    consts: BTreeMap<String, f64>,
    arity: BTreeMap<String, usize>,
    free: BTreeMap<String, Name>,
    scope: Vec<Name>,
}

type R<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &T {
        &self.toks[self.pos].t
    }

    fn peek2(&self) -> &T {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].t
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> T {
        let t = self.toks[self.pos].t.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<X>(&self, msg: impl Into<String>) -> R<X> {
        let (line, col) = self.here();
        Err(ParseError::Syntax { line, col, msg: msg.into() })
    }

    fn at(&self, s: &str) -> bool {
        matches!(self.peek(), T::Sym(x) if *x == s)
    }

    fn at_kw(&self, k: &str) -> bool {
        matches!(self.peek(), T::Kw(x) if *x == k)
    }

    fn expect(&mut self, s: &str) -> R<()> {
        if self.at(s) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> R<String> {
        match self.peek().clone() {
            T::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected a name, found {}", describe(&t))),
        }
    }

    fn in_scope(&self, s: &str) -> Option<Name> {
        self.scope.iter().rev().find(|n| n.display() == s).cloned()
    }

    fn global(&mut self, s: &str) -> Name {
        self.free.entry(s.to_string()).or_insert_with(|| Name::fresh(s)).clone()
    }

    /// A name in channel or variable position.
    fn name_ref(&mut self) -> R<Name> {
        let s = self.ident()?;
        if let Some(n) = self.in_scope(&s) {
            return Ok(n);
        }
        if self.consts.contains_key(&s) {
            self.pos -= 1;
            return self.err(format!("constant `{s}` used where a name is required"));
        }
        Ok(self.global(&s))
    }

    fn binder_list(&mut self) -> R<Vec<Name>> {
        self.expect("(")?;
        let mut out = Vec::new();
        if !self.at(")") {
            loop {
                let s = self.ident()?;
                out.push(Name::fresh(&s));
                if self.at(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(")")?;
        Ok(out)
    }

    fn with_scope<X>(&mut self, names: &[Name], f: impl FnOnce(&mut Self) -> R<X>) -> R<X> {
        let k = self.scope.len();
        self.scope.extend(names.iter().cloned());
        let r = f(self);
        self.scope.truncate(k);
        r
    }

    // ---- expressions

    fn expr(&mut self) -> R<Expr> {
        let mut e = self.term()?;
        loop {
            let op = if self.at("+") {
                Op::Add
            } else if self.at("-") {
                Op::Sub
            } else {
                return Ok(e);
            };
            self.bump();
            let r = self.term()?;
            e = Expr::op(op, vec![e, r]);
        }
    }

    fn term(&mut self) -> R<Expr> {
        let mut e = self.factor()?;
        loop {
            let op = if self.at("*") {
                Op::Mul
            } else if self.at("/") {
                Op::Div
            } else {
                return Ok(e);
            };
            self.bump();
            let r = self.factor()?;
            e = Expr::op(op, vec![e, r]);
        }
    }

    fn factor(&mut self) -> R<Expr> {
        if self.at("-") {
            self.bump();
            if let T::Num(v) = *self.peek() {
                self.bump();
                return Ok(Expr::Num(-v));
            }
            return Ok(Expr::neg(self.factor()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> R<Expr> {
        match self.peek().clone() {
            T::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            T::Str(s) => {
                self.bump();
                Ok(Expr::Str(s.into()))
            }
            T::Ident(s) => {
                self.bump();
                if let Some(n) = self.in_scope(&s) {
                    Ok(Expr::Var(n))
                } else if let Some(v) = self.consts.get(&s) {
                    Ok(Expr::Num(*v))
                } else {
                    Ok(Expr::Var(self.global(&s)))
                }
            }
            T::Kw(k @ ("sqrt" | "neg" | "min" | "max")) => {
                self.bump();
                self.expect("(")?;
                let a = self.expr()?;
                let e = match k {
                    "sqrt" => Expr::sqrt(a),
                    "neg" => Expr::neg(a),
                    _ => {
                        self.expect(",")?;
                        let b = self.expr()?;
                        if k == "min" {
                            Expr::min(a, b)
                        } else {
                            Expr::max(a, b)
                        }
                    }
                };
                self.expect(")")?;
                Ok(e)
            }
            T::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            t => self.err(format!("expected an expression, found {}", describe(&t))),
        }
    }

    fn expr_list(&mut self, close: &str) -> R<Vec<Expr>> {
        let mut out = Vec::new();
        if self.at(close) {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.at(",") {
                self.bump();
            } else {
                return Ok(out);
            }
        }
    }

    // ---- booleans

    fn boolean(&mut self) -> R<BoolExpr> {
        let mut b = self.bool_and()?;
        while self.at_kw("or") {
            self.bump();
            let r = self.bool_and()?;
            b = BoolExpr::or(b, r);
        }
        Ok(b)
    }

    fn bool_and(&mut self) -> R<BoolExpr> {
        let mut b = self.bool_not()?;
        while self.at_kw("and") {
            self.bump();
            let r = self.bool_not()?;
            b = BoolExpr::and(b, r);
        }
        Ok(b)
    }

    fn bool_not(&mut self) -> R<BoolExpr> {
        if self.at_kw("not") {
            self.bump();
            return Ok(BoolExpr::not(self.bool_not()?));
        }
        if self.at_kw("true") {
            self.bump();
            return Ok(BoolExpr::tt());
        }
        if self.at_kw("false") {
            self.bump();
            return Ok(BoolExpr::False);
        }
        if self.at("(") {
            let save = self.pos;
            self.bump();
            if let Ok(b) = self.boolean() {
                if self.at(")") {
                    self.bump();
                    if !self.at_relop() && !self.at_arith() {
                        return Ok(b);
                    }
                }
            }
            self.pos = save;
        }
        self.comparison()
    }

    fn at_relop(&self) -> bool {
        ["<", "<=", ">", ">=", "=", "==", "!="].iter().any(|s| self.at(s))
    }

    fn at_arith(&self) -> bool {
        ["+", "-", "*", "/"].iter().any(|s| self.at(s))
    }

    fn comparison(&mut self) -> R<BoolExpr> {
        let a = self.expr()?;
        let op = match self.peek() {
            T::Sym(s @ ("<" | "<=" | ">" | ">=" | "=" | "==" | "!=")) => *s,
            t => return self.err(format!("expected a comparison, found {}", describe(t))),
        };
        self.bump();
        let b = self.expr()?;
        Ok(match op {
            "<" => BoolExpr::lt(a, b),
            "<=" => BoolExpr::le(a, b),
            ">" => BoolExpr::gt(a, b),
            ">=" => BoolExpr::ge(a, b),
            "!=" => BoolExpr::ne(a, b),
            _ => BoolExpr::eq(a, b),
        })
    }

    // ---- processes

    fn process(&mut self) -> R<Process> {
        let mut p = self.sum()?;
        while self.at("||") {
            self.bump();
            let q = self.sum()?;
            p = Process::par(p, q);
        }
        Ok(p)
    }

    fn sum(&mut self) -> R<Process> {
        let first_at = self.here();
        let first = self.unary()?;
        if !self.at("+") {
            return Ok(first);
        }
        let not_sum = |(line, col): (usize, usize)| ParseError::Syntax {
            line,
            col,
            msg: "operands of `+` must be prefixed processes or sums".into(),
        };
        let mut acc = first;
        if !matches!(acc, Process::Sum(_)) {
            return Err(not_sum(first_at));
        }
        while self.at("+") {
            self.bump();
            let at = self.here();
            let next = self.unary()?;
            acc = Process::plus(&acc, &next).ok_or_else(|| not_sum(at))?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> R<Process> {
        let (line, col) = self.here();
        match self.peek().clone() {
            T::Kw("new") => {
                self.bump();
                let mut names = Vec::new();
                loop {
                    let s = self.ident()?;
                    names.push(Name::fresh(&s));
                    if self.at(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.expect(".")?;
                let body = self.with_scope(&names, |p| p.unary())?;
                Ok(Process::res_all(&names, body))
            }
            T::Kw("repl") => {
                self.bump();
                Ok(Process::rep(self.unary()?))
            }
            T::Kw("mu") => {
                self.bump();
                let x = Name::fresh(&self.ident()?);
                let params = if self.at("(") { self.binder_list()? } else { Vec::new() };
                let args = if self.at("@") {
                    self.bump();
                    self.expect("<")?;
                    let a = self.expr_list(">")?;
                    self.expect(">")?;
                    a
                } else {
                    Vec::new()
                };
                if args.len() != params.len() {
                    return Err(ParseError::Arity {
                        line,
                        col,
                        name: x.display().to_string(),
                        expected: params.len(),
                        got: args.len(),
                    });
                }
                self.expect(".")?;
                let mut scope = vec![x.clone()];
                scope.extend(params.iter().cloned());
                let body = self.with_scope(&scope, |p| p.unary())?;
                Ok(Process::mu(x, params, body, args))
            }
            T::Num(v) if v == 0.0 => {
                self.bump();
                Ok(Process::nil())
            }
            T::Sym("(") => {
                self.bump();
                let p = self.process()?;
                self.expect(")")?;
                Ok(p)
            }
            T::Ident(s) if self.in_scope(&s).is_none() && self.arity.contains_key(&s) => {
                self.bump();
                let args = if self.at("(") {
                    self.bump();
                    let a = self.expr_list(")")?;
                    self.expect(")")?;
                    a
                } else {
                    Vec::new()
                };
                let expected = self.arity[&s];
                if args.len() != expected {
                    return Err(ParseError::Arity { line, col, name: s, expected, got: args.len() });
                }
                Ok(Process::Call(s.into(), args))
            }
            _ => {
                let prefix = self.prefix()?;
                let cont = if self.at(".") {
                    self.bump();
                    let bound = prefix.bound().to_vec();
                    self.with_scope(&bound, |p| p.unary())?
                } else {
                    Process::nil()
                };
                Ok(Process::prefix(prefix, cont))
            }
        }
    }

    fn prefix(&mut self) -> R<Prefix> {
        let (line, col) = self.here();
        match self.peek().clone() {
            T::Kw("tau") => {
                self.bump();
                Ok(Prefix::Tau)
            }
            T::Sym("[") => {
                self.bump();
                let b = self.boolean()?;
                self.expect("]")?;
                Ok(Prefix::Guard(b))
            }
            T::Sym("{") => self.continuous(),
            T::Ident(s) => match self.peek2() {
                T::Sym("!") => {
                    let chan = self.name_ref()?;
                    self.bump();
                    let payload = if self.at("<") {
                        self.bump();
                        let p = self.expr_list(">")?;
                        self.expect(">")?;
                        p
                    } else {
                        Vec::new()
                    };
                    Ok(Prefix::Output { chan, payload })
                }
                T::Sym("(") => {
                    let chan = self.name_ref()?;
                    let binders = self.binder_list()?;
                    Ok(Prefix::Input { chan, binders })
                }
                _ if self.in_scope(&s).is_none() => Err(ParseError::UnknownDef { line, col, name: s }),
                t => {
                    let t = t.clone();
                    self.bump();
                    self.err(format!("expected `!` or `(` after channel `{s}`, found {}", describe(&t)))
                }
            },
            t => self.err(format!("expected a process, found {}", describe(&t))),
        }
    }

    fn continuous(&mut self) -> R<Prefix> {
        let (line, col) = self.here();
        self.expect("{")?;
        let init = self.expr_list("|")?;
        self.expect("|")?;
        let mut vars = Vec::new();
        let mut field = Vec::new();
        loop {
            vars.push(self.name_ref()?);
            self.expect("'")?;
            self.expect("=")?;
            field.push(self.expr()?);
            if self.at(",") {
                self.bump();
            } else {
                break;
            }
        }
        let boundary = if self.at("&") {
            self.bump();
            self.boolean()?
        } else {
            BoolExpr::tt()
        };
        let mut ready = ReadySet::new();
        if self.at(";") {
            self.bump();
            if !self.at_kw("ready") {
                return self.err("expected `ready`");
            }
            self.bump();
            loop {
                let n = self.name_ref()?;
                let pol = if self.at("!") {
                    Polarity::Out
                } else if self.at("?") {
                    Polarity::In
                } else {
                    return self.err("expected `!` (sense) or `?` (actuate) after ready entry");
                };
                self.bump();
                ready.insert(n, pol);
                if self.at(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect("}")?;
        let binders = if self.at("(") { self.binder_list()? } else { Vec::new() };
        let ode = Ode::new(init, vars, field, boundary, ready, binders).map_err(|err| ParseError::Ode { line, col, err })?;
        Ok(Prefix::Cont(Arc::new(ode)))
    }

    fn const_value(&mut self) -> R<f64> {
        let e = self.expr()?;
        match crate::flows::eval_expr(&e, &Default::default()) {
            crate::flows::Value::Real(v) => Ok(v),
            _ => self.err("constant must evaluate to a number"),
        }
    }

    fn file(mut self) -> R<ModelFile> {
        let mut m = ModelFile::default();
        let mut bodies = BTreeMap::new();
        let mut entry = None;
        loop {
            match self.peek().clone() {
                T::Eof => break,
                T::Kw("const") => {
                    self.bump();
                    let s = self.ident()?;
                    self.expect("=")?;
                    let v = self.const_value()?;
                    self.expect(";")?;
                    self.consts.insert(s, v);
                }
                T::Kw("def") => {
                    self.bump();
                    let s = self.ident()?;
                    if bodies.contains_key(&s) {
                        self.pos -= 1;
                        return self.err(format!("definition `{s}` given twice"));
                    }
                    let params = if self.at("(") { self.binder_list()? } else { Vec::new() };
                    self.expect("=")?;
                    let body = self.with_scope(&params, |p| p.process())?;
                    self.expect(";")?;
                    bodies.insert(s, Def { params, body });
                }
                T::Kw("run") => {
                    if entry.is_some() {
                        return self.err("more than one `run` entry");
                    }
                    self.bump();
                    entry = Some(self.process()?);
                    self.expect(";")?;
                }
                t => return self.err(format!("expected `const`, `def` or `run`, found {}", describe(&t))),
            }
        }
        m.constants = self.consts;
        m.defs = bodies;
        m.free = self.free;
        if let Some(e) = entry {
            m.entry = Some(m.resolve(&e, &mut Vec::new(), &mut Vec::new())?);
        }
        Ok(m)
    }
}

fn describe(t: &T) -> String {
    match t {
        T::Ident(s) => format!("`{s}`"),
        T::Num(v) => format!("`{v}`"),
        T::Str(s) => format!("\"{s}\""),
        T::Kw(k) => format!("`{k}`"),
        T::Sym(s) => format!("`{s}`"),
        T::Eof => "end of input".into(),
    }
}

fn def_arities(toks: &[Tok]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for i in 0..toks.len() {
        if toks[i].t != T::Kw("def") {
            continue;
        }
        let Some(T::Ident(name)) = toks.get(i + 1).map(|t| &t.t) else { continue };
        let mut n = 0;
        if toks.get(i + 2).map(|t| &t.t) == Some(&T::Sym("(")) {
            let mut j = i + 3;
            while let Some(T::Ident(_)) = toks.get(j).map(|t| &t.t) {
                n += 1;
                j += 1;
                if toks.get(j).map(|t| &t.t) == Some(&T::Sym(",")) {
                    j += 1;
                }
            }
        }
        out.insert(name.clone(), n);
    }
    out
}

/// Options for [`parse_with`].
#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    /// Spellings that must denote these particular free names.
    pub free: BTreeMap<String, Name>,
}

pub fn parse(text: &str) -> Result<ModelFile, ParseError> {
    parse_with(text, &ParseOptions::default())
}

pub fn parse_with(text: &str, opts: &ParseOptions) -> Result<ModelFile, ParseError> {
    let toks = lex(text)?;
    let arity = def_arities(&toks);
    let p = Parser { toks, pos: 0, consts: BTreeMap::new(), arity, free: opts.free.clone(), scope: Vec::new() };
    p.file()
}

/// Parse a bare process term (no sections), optionally ending in `;`.
pub fn parse_process(text: &str, opts: &ParseOptions) -> Result<Process, ParseError> {
    let toks = lex(text)?;
    let mut p =
        Parser { toks, pos: 0, consts: BTreeMap::new(), arity: BTreeMap::new(), free: opts.free.clone(), scope: Vec::new() };
    let proc_ = p.process()?;
    if p.at(";") {
        p.bump();
    }
    if *p.peek() != T::Eof {
        return p.err(format!("unexpected {}", describe(p.peek())));
    }
    Ok(proc_)
}

// ---------------------------------------------------------------------------
// Pretty-printing

struct Printer {
    labels: HashMap<Name, String>,
    used: HashSet<String>,
    out: String,
}

fn sanitize(s: &str) -> String {
    let mut t: String = s.chars().filter(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
    if t.is_empty() || t.starts_with(|c: char| c.is_ascii_digit()) {
        t.insert(0, 'n');
    }
    t
}

impl Printer {
    fn label(&mut self, n: &Name) -> String {
        if let Some(l) = self.labels.get(n) {
            return l.clone();
        }
        let base = sanitize(n.display());
        let mut l = base.clone();
        let mut k = 1;
        while self.used.contains(&l) {
            l = format!("{base}_{k}");
            k += 1;
        }
        self.used.insert(l.clone());
        self.labels.insert(n.clone(), l.clone());
        l
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    let _ = write!(self.out, "(-{})", -v);
                } else {
                    let _ = write!(self.out, "{v}");
                }
            }
            Expr::Str(s) => {
                let _ = write!(self.out, "\"{s}\"");
            }
            Expr::Var(n) => {
                let l = self.label(n);
                self.out.push_str(&l);
            }
            Expr::Op(op, args) => match op {
                Op::Sqrt | Op::Neg | Op::Min | Op::Max => {
                    let f = if *op == Op::Neg { "neg" } else { op.symbol() };
                    self.out.push_str(f);
                    self.out.push('(');
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            self.out.push_str(", ");
                        }
                        self.expr(a);
                    }
                    self.out.push(')');
                }
                _ => {
                    self.out.push('(');
                    self.expr(&args[0]);
                    let _ = write!(self.out, " {} ", op.symbol());
                    self.expr(&args[1]);
                    self.out.push(')');
                }
            },
        }
    }

    fn exprs(&mut self, es: &[Expr]) {
        for (i, e) in es.iter().enumerate() {
            if i > 0 {
                self.out.push_str(", ");
            }
            self.expr(e);
        }
    }

    fn boolean(&mut self, b: &BoolExpr) {
        match b {
            BoolExpr::False => self.out.push_str("false"),
            BoolExpr::Less(x, y) => {
                self.expr(x);
                self.out.push_str(" < ");
                self.expr(y);
            }
            BoolExpr::And(x, y) => {
                self.out.push('(');
                self.boolean(x);
                self.out.push_str(" and ");
                self.boolean(y);
                self.out.push(')');
            }
            BoolExpr::Not(x) => match &**x {
                BoolExpr::False => self.out.push_str("true"),
                BoolExpr::Less(l, r) => {
                    self.expr(l);
                    self.out.push_str(" >= ");
                    self.expr(r);
                }
                _ => {
                    self.out.push_str("not (");
                    self.boolean(x);
                    self.out.push(')');
                }
            },
        }
    }

    fn binders(&mut self, bs: &[Name]) {
        self.out.push('(');
        for (i, b) in bs.iter().enumerate() {
            if i > 0 {
                self.out.push_str(", ");
            }
            let l = self.label(b);
            self.out.push_str(&l);
        }
        self.out.push(')');
    }

    fn prefix(&mut self, p: &Prefix) {
        match p {
            Prefix::Tau => self.out.push_str("tau"),
            Prefix::Guard(b) => {
                self.out.push('[');
                self.boolean(b);
                self.out.push(']');
            }
            Prefix::Input { chan, binders } => {
                let l = self.label(chan);
                self.out.push_str(&l);
                self.binders(binders);
            }
            Prefix::Output { chan, payload } => {
                let l = self.label(chan);
                self.out.push_str(&l);
                self.out.push_str("!<");
                self.exprs(payload);
                self.out.push('>');
            }
            Prefix::Cont(ode) => {
                self.out.push('{');
                self.exprs(&ode.init);
                self.out.push_str(" | ");
                for (i, (v, f)) in ode.vars.iter().zip(&ode.field).enumerate() {
                    if i > 0 {
                        self.out.push_str(", ");
                    }
                    let l = self.label(v);
                    let _ = write!(self.out, "{l}' = ");
                    self.expr(f);
                }
                if !ode.boundary.is_true_literal() {
                    self.out.push_str(" & ");
                    self.boolean(&ode.boundary);
                }
                if !ode.ready.is_empty() {
                    self.out.push_str(" ; ready ");
                    for (i, (n, pol)) in ode.ready.iter().enumerate() {
                        if i > 0 {
                            self.out.push_str(", ");
                        }
                        let l = self.label(n);
                        self.out.push_str(&l);
                        self.out.push(if *pol == Polarity::Out { '!' } else { '?' });
                    }
                }
                self.out.push('}');
                if !ode.binders.is_empty() {
                    self.binders(&ode.binders);
                }
            }
        }
    }

    fn branch(&mut self, b: &Branch) {
        self.prefix(&b.prefix);
        if !b.cont.is_nil() {
            self.out.push_str(" . ");
            self.unary(&b.cont);
        }
    }

    /// Print in a position where `+` and `||` need parentheses.
    fn unary(&mut self, p: &Process) {
        match p {
            Process::Par(..) => {
                self.out.push('(');
                self.par(p);
                self.out.push(')');
            }
            Process::Sum(bs) if bs.len() > 1 => {
                self.out.push('(');
                self.sum(bs);
                self.out.push(')');
            }
            Process::Sum(bs) if bs.is_empty() => self.out.push('0'),
            Process::Sum(bs) => self.branch(&bs[0]),
            Process::Res(x, body) => {
                let l = self.label(x);
                let _ = write!(self.out, "new {l} . ");
                self.unary(body);
            }
            Process::Rep(body) => {
                self.out.push_str("repl ");
                self.unary(body);
            }
            Process::Call(d, args) => {
                self.out.push_str(d);
                if !args.is_empty() {
                    self.out.push('(');
                    self.exprs(args);
                    self.out.push(')');
                }
            }
        }
    }

    fn sum(&mut self, bs: &[Branch]) {
        for (i, b) in bs.iter().enumerate() {
            if i > 0 {
                self.out.push_str(" + ");
            }
            self.branch(b);
        }
    }

    fn par(&mut self, p: &Process) {
        match p {
            Process::Par(a, b) => {
                self.par(a);
                self.out.push_str(" || ");
                self.unary(b);
            }
            Process::Sum(bs) if bs.len() > 1 => self.sum(bs),
            _ => self.unary(p),
        }
    }
}

/// Render `p` in surface syntax.
pub fn pretty(p: &Process) -> String {
    pretty_with_names(p).0
}

/// Render `p` and return the spelling chosen for each free name, for use with
/// [`ParseOptions::free`].
pub fn pretty_with_names(p: &Process) -> (String, BTreeMap<String, Name>) {
    let mut pr = Printer {
        labels: HashMap::new(),
        used: KEYWORDS.iter().map(|k| k.to_string()).collect(),
        out: String::new(),
    };
    let free: BTreeSet<Name> = free_names(p);
    // label free names first so bound names get the suffixes
    for n in &free {
        pr.label(n);
    }
    pr.par(p);
    let table = free.into_iter().map(|n| (pr.labels[&n].clone(), n)).collect();
    (pr.out, table)
}
