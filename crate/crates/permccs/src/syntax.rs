//! Abstract syntax of the value-passing calculus: values, expressions,
//! boolean conditions, processes and definition tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Numerals are 64-bit signed integers; arithmetic is checked.
pub type Value = i64;

/// Interned-ish identifier used for channels, variables and definition names.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name(Arc<str>);

impl Name {
    pub fn new(s: &str) -> Name {
        Name(Arc::from(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Name {
    fn from(s: &str) -> Name {
        Name::new(s)
    }
}

impl From<String> for Name {
    fn from(s: String) -> Name {
        Name(Arc::from(s.as_str()))
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A name derived from `base` that `taken` rejects.
pub fn fresh_name(base: &Name, taken: impl Fn(&Name) -> bool) -> Name {
    let stem = base.as_str().split('\'').next().unwrap_or("n");
    let stem = if stem.is_empty() { "n" } else { stem };
    let mut k = 1usize;
    loop {
        let cand = Name::from(format!("{stem}'{k}"));
        if !taken(&cand) {
            return cand;
        }
        k += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(Name),
    #[error("integer overflow")]
    Overflow,
}

/// Simultaneous substitution from variables to (possibly open) expressions.
pub type Subst = BTreeMap<Name, Expr>;

pub fn subst_of<I: IntoIterator<Item = (Name, Expr)>>(pairs: I) -> Subst {
    pairs.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Lit(Value),
    Var(Name),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn lit(v: Value) -> Expr {
        Expr::Lit(v)
    }

    pub fn var(x: &str) -> Expr {
        Expr::Var(Name::new(x))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn free_vars_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(x) => {
                out.insert(x.clone());
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.free_vars_into(&mut s);
        s
    }

    pub fn is_closed(&self) -> bool {
        match self {
            Expr::Lit(_) => true,
            Expr::Var(_) => false,
            Expr::Add(a, b) | Expr::Sub(a, b) => a.is_closed() && b.is_closed(),
        }
    }

    pub fn subst(&self, s: &Subst) -> Expr {
        match self {
            Expr::Lit(_) => self.clone(),
            Expr::Var(x) => s.get(x).cloned().unwrap_or_else(|| self.clone()),
            Expr::Add(a, b) => Expr::add(a.subst(s), b.subst(s)),
            Expr::Sub(a, b) => Expr::sub(a.subst(s), b.subst(s)),
        }
    }

    pub fn eval(&self, s: &Subst) -> Result<Value, EvalError> {
        match self {
            Expr::Lit(v) => Ok(*v),
            Expr::Var(x) => match s.get(x) {
                Some(e) => e.eval(&Subst::new()),
                None => Err(EvalError::UnboundVariable(x.clone())),
            },
            Expr::Add(a, b) => a
                .eval(s)?
                .checked_add(b.eval(s)?)
                .ok_or(EvalError::Overflow),
            Expr::Sub(a, b) => a
                .eval(s)?
                .checked_sub(b.eval(s)?)
                .ok_or(EvalError::Overflow),
        }
    }

    /// Replaces every closed sub-expression by its value (overflowing ones are kept).
    pub fn fold(&self) -> Expr {
        if self.is_closed() {
            if let Ok(v) = self.eval(&Subst::new()) {
                return Expr::Lit(v);
            }
        }
        match self {
            Expr::Add(a, b) => Expr::add(a.fold(), b.fold()),
            Expr::Sub(a, b) => Expr::sub(a.fold(), b.fold()),
            _ => self.clone(),
        }
    }
}

pub fn eval_expr(e: &Expr, s: &Subst) -> Result<Value, EvalError> {
    e.eval(s)
}

pub fn eval_exprs(es: &[Expr], s: &Subst) -> Result<Vec<Value>, EvalError> {
    es.iter().map(|e| e.eval(s)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoolExpr {
    Leq(Expr, Expr),
    Not(Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
}

impl BoolExpr {
    pub fn leq(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::Leq(a, b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(b: BoolExpr) -> BoolExpr {
        BoolExpr::Not(Box::new(b))
    }

    pub fn and(a: BoolExpr, b: BoolExpr) -> BoolExpr {
        BoolExpr::And(Box::new(a), Box::new(b))
    }

    pub fn tt() -> BoolExpr {
        BoolExpr::Leq(Expr::Lit(0), Expr::Lit(1))
    }

    pub fn ff() -> BoolExpr {
        BoolExpr::Leq(Expr::Lit(1), Expr::Lit(0))
    }

    pub fn eq(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::and(BoolExpr::Leq(a.clone(), b.clone()), BoolExpr::Leq(b, a))
    }

    pub fn lt(a: Expr, b: Expr) -> BoolExpr {
        BoolExpr::not(BoolExpr::Leq(b, a))
    }

    pub fn or(a: BoolExpr, b: BoolExpr) -> BoolExpr {
        BoolExpr::not(BoolExpr::and(BoolExpr::not(a), BoolExpr::not(b)))
    }

    pub fn implies(a: BoolExpr, b: BoolExpr) -> BoolExpr {
        BoolExpr::not(BoolExpr::and(a, BoolExpr::not(b)))
    }

    /// Conjunction of a list; the empty conjunction is `true`.
    pub fn all(items: Vec<BoolExpr>) -> BoolExpr {
        let mut it = items.into_iter().rev();
        match it.next() {
            None => BoolExpr::tt(),
            Some(last) => it.fold(last, |acc, b| BoolExpr::and(b, acc)),
        }
    }

    /// Disjunction of a list; the empty disjunction is `false`.
    pub fn any(items: Vec<BoolExpr>) -> BoolExpr {
        let mut it = items.into_iter().rev();
        match it.next() {
            None => BoolExpr::ff(),
            Some(last) => it.fold(last, |acc, b| BoolExpr::or(b, acc)),
        }
    }

    /// Pointwise equality of two expression lists (`false` on length mismatch).
    pub fn eq_lists(a: &[Expr], b: &[Expr]) -> BoolExpr {
        if a.len() != b.len() {
            return BoolExpr::ff();
        }
        BoolExpr::all(a.iter().zip(b).map(|(x, y)| BoolExpr::eq(x.clone(), y.clone())).collect())
    }

    pub fn free_vars_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            BoolExpr::Leq(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
            BoolExpr::Not(b) => b.free_vars_into(out),
            BoolExpr::And(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.free_vars_into(&mut s);
        s
    }

    pub fn subst(&self, s: &Subst) -> BoolExpr {
        match self {
            BoolExpr::Leq(a, b) => BoolExpr::Leq(a.subst(s), b.subst(s)),
            BoolExpr::Not(b) => BoolExpr::not(b.subst(s)),
            BoolExpr::And(a, b) => BoolExpr::and(a.subst(s), b.subst(s)),
        }
    }

    pub fn eval(&self, s: &Subst) -> Result<bool, EvalError> {
        match self {
            BoolExpr::Leq(a, b) => Ok(a.eval(s)? <= b.eval(s)?),
            BoolExpr::Not(b) => Ok(!b.eval(s)?),
            BoolExpr::And(a, b) => Ok(a.eval(s)? && b.eval(s)?),
        }
    }

    pub fn fold(&self) -> BoolExpr {
        match self {
            BoolExpr::Leq(a, b) => BoolExpr::Leq(a.fold(), b.fold()),
            BoolExpr::Not(b) => BoolExpr::not(b.fold()),
            BoolExpr::And(a, b) => BoolExpr::and(a.fold(), b.fold()),
        }
    }
}

pub fn eval_bool(b: &BoolExpr, s: &Subst) -> Result<bool, EvalError> {
    b.eval(s)
}

/// Processes. Calls carry their channel renaming as `(actual, formal)` pairs,
/// one per declared formal channel of the definition, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Process {
    Nil,
    Out(Name, Vec<Expr>),
    In(Name, Vec<Name>, Arc<Process>),
    If(BoolExpr, Arc<Process>, Arc<Process>),
    Call(Name, Vec<Expr>, Vec<(Name, Name)>),
    Par(Arc<Process>, Arc<Process>),
    New(Name, Arc<Process>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenameError {
    #[error("renaming arity mismatch: {targets} targets for {sources} sources")]
    ArityMismatch { targets: usize, sources: usize },
}

impl Process {
    pub fn out(c: &str, args: Vec<Expr>) -> Process {
        Process::Out(Name::new(c), args)
    }

    pub fn inp(c: &str, xs: &[&str], body: Process) -> Process {
        Process::In(Name::new(c), xs.iter().map(|x| Name::new(x)).collect(), Arc::new(body))
    }

    pub fn cond(b: BoolExpr, p: Process, q: Process) -> Process {
        Process::If(b, Arc::new(p), Arc::new(q))
    }

    pub fn par(p: Process, q: Process) -> Process {
        Process::Par(Arc::new(p), Arc::new(q))
    }

    pub fn new_chan(c: &str, p: Process) -> Process {
        Process::New(Name::new(c), Arc::new(p))
    }

    /// Right-nested parallel composition; the empty list is `0`.
    pub fn par_all(items: Vec<Process>) -> Process {
        let mut it = items.into_iter().rev();
        match it.next() {
            None => Process::Nil,
            Some(last) => it.fold(last, |acc, p| Process::par(p, acc)),
        }
    }

    pub fn new_all(chans: &[Name], body: Process) -> Process {
        chans
            .iter()
            .rev()
            .fold(body, |acc, c| Process::New(c.clone(), Arc::new(acc)))
    }

    pub fn free_vars_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            Process::Nil => {}
            Process::Out(_, es) | Process::Call(_, es, _) => {
                for e in es {
                    e.free_vars_into(out);
                }
            }
            Process::In(_, xs, p) => {
                let mut inner = BTreeSet::new();
                p.free_vars_into(&mut inner);
                for x in xs {
                    inner.remove(x);
                }
                out.extend(inner);
            }
            Process::If(b, p, q) => {
                b.free_vars_into(out);
                p.free_vars_into(out);
                q.free_vars_into(out);
            }
            Process::Par(p, q) => {
                p.free_vars_into(out);
                q.free_vars_into(out);
            }
            Process::New(_, p) => p.free_vars_into(out),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.free_vars_into(&mut s);
        s
    }

    pub fn free_chans_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            Process::Nil => {}
            Process::Out(c, _) => {
                out.insert(c.clone());
            }
            Process::In(c, _, p) => {
                out.insert(c.clone());
                p.free_chans_into(out);
            }
            Process::If(_, p, q) | Process::Par(p, q) => {
                p.free_chans_into(out);
                q.free_chans_into(out);
            }
            Process::Call(_, _, ren) => {
                for (c, _) in ren {
                    out.insert(c.clone());
                }
            }
            Process::New(c, p) => {
                let mut inner = BTreeSet::new();
                p.free_chans_into(&mut inner);
                inner.remove(c);
                out.extend(inner);
            }
        }
    }

    pub fn free_chans(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.free_chans_into(&mut s);
        s
    }

    pub fn mentions_chan(&self, c: &Name) -> bool {
        self.free_chans().contains(c)
    }

    /// Every name occurring anywhere (free or bound); used to pick fresh names.
    pub fn all_names_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            Process::Nil => {}
            Process::Out(c, es) => {
                out.insert(c.clone());
                for e in es {
                    e.free_vars_into(out);
                }
            }
            Process::In(c, xs, p) => {
                out.insert(c.clone());
                out.extend(xs.iter().cloned());
                p.all_names_into(out);
            }
            Process::If(b, p, q) => {
                b.free_vars_into(out);
                p.all_names_into(out);
                q.all_names_into(out);
            }
            Process::Call(_, es, ren) => {
                for e in es {
                    e.free_vars_into(out);
                }
                for (c, _) in ren {
                    out.insert(c.clone());
                }
            }
            Process::Par(p, q) => {
                p.all_names_into(out);
                q.all_names_into(out);
            }
            Process::New(c, p) => {
                out.insert(c.clone());
                p.all_names_into(out);
            }
        }
    }

    /// Capture-avoiding simultaneous substitution of expressions for variables.
    pub fn substitute(&self, s: &Subst) -> Process {
        if s.is_empty() {
            return self.clone();
        }
        match self {
            Process::Nil => Process::Nil,
            Process::Out(c, es) => Process::Out(c.clone(), es.iter().map(|e| e.subst(s)).collect()),
            Process::Call(k, es, ren) => {
                Process::Call(k.clone(), es.iter().map(|e| e.subst(s)).collect(), ren.clone())
            }
            Process::If(b, p, q) => {
                Process::If(b.subst(s), Arc::new(p.substitute(s)), Arc::new(q.substitute(s)))
            }
            Process::Par(p, q) => Process::Par(Arc::new(p.substitute(s)), Arc::new(q.substitute(s))),
            Process::New(c, p) => Process::New(c.clone(), Arc::new(p.substitute(s))),
            Process::In(c, xs, body) => {
                let body_fv = body.free_vars();
                let inner: Subst = s
                    .iter()
                    .filter(|(k, _)| !xs.contains(k) && body_fv.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if inner.is_empty() {
                    return self.clone();
                }
                let mut image_fv = BTreeSet::new();
                for e in inner.values() {
                    e.free_vars_into(&mut image_fv);
                }
                let mut taken = BTreeSet::new();
                body.all_names_into(&mut taken);
                taken.extend(image_fv.iter().cloned());
                taken.extend(xs.iter().cloned());
                taken.extend(inner.keys().cloned());
                let mut new_xs = Vec::with_capacity(xs.len());
                let mut rename = Subst::new();
                for x in xs {
                    if image_fv.contains(x) {
                        let y = fresh_name(x, |n| taken.contains(n));
                        taken.insert(y.clone());
                        rename.insert(x.clone(), Expr::Var(y.clone()));
                        new_xs.push(y);
                    } else {
                        new_xs.push(x.clone());
                    }
                }
                let body = if rename.is_empty() {
                    body.as_ref().clone()
                } else {
                    body.substitute(&rename)
                };
                Process::In(c.clone(), new_xs, Arc::new(body.substitute(&inner)))
            }
        }
    }

    /// Simultaneous channel renaming; each pair is `(target, source)`, i.e. `[c/d]`.
    pub fn rename_channels(&self, pairs: &[(Name, Name)]) -> Process {
        let map: BTreeMap<Name, Name> = pairs
            .iter()
            .filter(|(c, d)| c != d)
            .map(|(c, d)| (d.clone(), c.clone()))
            .collect();
        if map.is_empty() {
            return self.clone();
        }
        self.rename_map(&map)
    }

    /// Renaming from parallel lists of targets and sources.
    pub fn rename_channel_lists(&self, targets: &[Name], sources: &[Name]) -> Result<Process, RenameError> {
        if targets.len() != sources.len() {
            return Err(RenameError::ArityMismatch { targets: targets.len(), sources: sources.len() });
        }
        let pairs: Vec<(Name, Name)> = targets.iter().cloned().zip(sources.iter().cloned()).collect();
        Ok(self.rename_channels(&pairs))
    }

    fn rename_map(&self, map: &BTreeMap<Name, Name>) -> Process {
        let r = |c: &Name| map.get(c).cloned().unwrap_or_else(|| c.clone());
        match self {
            Process::Nil => Process::Nil,
            Process::Out(c, es) => Process::Out(r(c), es.clone()),
            Process::In(c, xs, p) => Process::In(r(c), xs.clone(), Arc::new(p.rename_map(map))),
            Process::If(b, p, q) => Process::If(b.clone(), Arc::new(p.rename_map(map)), Arc::new(q.rename_map(map))),
            Process::Par(p, q) => Process::Par(Arc::new(p.rename_map(map)), Arc::new(q.rename_map(map))),
            Process::Call(k, es, ren) => {
                Process::Call(k.clone(), es.clone(), ren.iter().map(|(c, d)| (r(c), d.clone())).collect())
            }
            Process::New(b, body) => {
                let body_fn = body.free_chans();
                let inner: BTreeMap<Name, Name> = map
                    .iter()
                    .filter(|(k, _)| *k != b && body_fn.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if inner.is_empty() {
                    return self.clone();
                }
                if inner.values().any(|v| v == b) {
                    let mut taken = BTreeSet::new();
                    body.all_names_into(&mut taken);
                    taken.extend(inner.keys().cloned());
                    taken.extend(inner.values().cloned());
                    let b2 = fresh_name(b, |n| taken.contains(n));
                    let mut m2 = BTreeMap::new();
                    m2.insert(b.clone(), b2.clone());
                    let body2 = body.rename_map(&m2);
                    Process::New(b2, Arc::new(body2.rename_map(&inner)))
                } else {
                    Process::New(b.clone(), Arc::new(body.rename_map(&inner)))
                }
            }
        }
    }

    /// Folds closed arithmetic everywhere; outputs like `c!(1+1)` become `c!(2)`.
    pub fn fold_values(&self) -> Process {
        match self {
            Process::Nil => Process::Nil,
            Process::Out(c, es) => Process::Out(c.clone(), es.iter().map(Expr::fold).collect()),
            Process::Call(k, es, ren) => Process::Call(k.clone(), es.iter().map(Expr::fold).collect(), ren.clone()),
            Process::In(c, xs, p) => Process::In(c.clone(), xs.clone(), Arc::new(p.fold_values())),
            Process::If(b, p, q) => Process::If(b.fold(), Arc::new(p.fold_values()), Arc::new(q.fold_values())),
            Process::Par(p, q) => Process::Par(Arc::new(p.fold_values()), Arc::new(q.fold_values())),
            Process::New(c, p) => Process::New(c.clone(), Arc::new(p.fold_values())),
        }
    }

    /// Number of syntax nodes; used by generators and budgets.
    pub fn size(&self) -> usize {
        match self {
            Process::Nil | Process::Out(..) | Process::Call(..) => 1,
            Process::In(_, _, p) | Process::New(_, p) => 1 + p.size(),
            Process::If(_, p, q) | Process::Par(p, q) => 1 + p.size() + q.size(),
        }
    }
}

pub fn substitute(p: &Process, s: &Subst) -> Process {
    p.substitute(s)
}

pub fn rename_channels(p: &Process, pairs: &[(Name, Name)]) -> Process {
    p.rename_channels(pairs)
}

/// A parameterised (possibly recursive) process definition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Definition {
    pub params: Vec<Name>,
    pub chans: Vec<Name>,
    pub body: Process,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DefError {
    #[error("unknown definition `{0}`")]
    UnknownDefinition(Name),
    #[error("`{name}` expects {expected} arguments, got {found}")]
    ArityMismatch { name: Name, expected: usize, found: usize },
    #[error("`{chan}` is not a formal channel of `{name}`")]
    UnknownFormal { name: Name, chan: Name },
    #[error("channel `{chan}` renamed twice in call to `{name}`")]
    DuplicateRenaming { name: Name, chan: Name },
    #[error("definition `{name}` is not closed: {detail}")]
    OpenBody { name: Name, detail: String },
    #[error("definition `{0}` declared twice")]
    Duplicate(Name),
}

/// A definition as written: formal channels may be left implicit and calls
/// may rename only some formals.
#[derive(Clone, Debug)]
pub struct RawDef {
    pub name: Name,
    pub params: Vec<Name>,
    pub chans: Option<Vec<Name>>,
    pub body: Process,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DefTable {
    defs: BTreeMap<Name, Arc<Definition>>,
}

impl DefTable {
    pub fn empty() -> DefTable {
        DefTable::default()
    }

    /// Builds a table from raw definitions, inferring omitted formal channel
    /// lists as the free channels of the body, and normalising every call.
    pub fn build(raw: Vec<RawDef>) -> Result<DefTable, DefError> {
        let mut formals: BTreeMap<Name, Vec<Name>> = BTreeMap::new();
        let mut arities: BTreeMap<Name, usize> = BTreeMap::new();
        for d in &raw {
            if arities.insert(d.name.clone(), d.params.len()).is_some() {
                return Err(DefError::Duplicate(d.name.clone()));
            }
            formals.insert(d.name.clone(), d.chans.clone().unwrap_or_default());
        }
        // Fixpoint for implicit formal lists.
        loop {
            let mut changed = false;
            for d in raw.iter().filter(|d| d.chans.is_none()) {
                let mut fc = BTreeSet::new();
                raw_free_chans(&d.body, &formals, &mut fc)?;
                let cur: BTreeSet<Name> = formals[&d.name].iter().cloned().collect();
                if fc != cur {
                    let mut merged: BTreeSet<Name> = cur;
                    merged.extend(fc);
                    formals.insert(d.name.clone(), merged.into_iter().collect());
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut table = DefTable::default();
        for d in &raw {
            table.defs.insert(
                d.name.clone(),
                Arc::new(Definition { params: d.params.clone(), chans: formals[&d.name].clone(), body: Process::Nil }),
            );
        }
        let mut resolved = BTreeMap::new();
        for d in &raw {
            let body = table.resolve(&d.body)?;
            let fv = body.free_vars();
            let params: BTreeSet<Name> = d.params.iter().cloned().collect();
            if let Some(x) = fv.iter().find(|x| !params.contains(*x)) {
                return Err(DefError::OpenBody { name: d.name.clone(), detail: format!("free variable `{x}`") });
            }
            let chans: BTreeSet<Name> = formals[&d.name].iter().cloned().collect();
            if let Some(c) = body.free_chans().iter().find(|c| !chans.contains(*c)) {
                return Err(DefError::OpenBody { name: d.name.clone(), detail: format!("channel `{c}` is not a formal") });
            }
            resolved.insert(
                d.name.clone(),
                Arc::new(Definition { params: d.params.clone(), chans: formals[&d.name].clone(), body }),
            );
        }
        table.defs = resolved;
        Ok(table)
    }

    pub fn get(&self, name: &Name) -> Option<&Arc<Definition>> {
        self.defs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &Name> {
        self.defs.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Name, &Arc<Definition>)> {
        self.defs.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// Merges two tables; definitions in `other` must not clash.
    pub fn merged(&self, other: &DefTable) -> Result<DefTable, DefError> {
        let mut t = self.clone();
        for (k, v) in &other.defs {
            if let Some(old) = t.defs.get(k) {
                if old != v {
                    return Err(DefError::Duplicate(k.clone()));
                }
            }
            t.defs.insert(k.clone(), v.clone());
        }
        Ok(t)
    }

    /// Normalises every call in `p` to the positional renaming over the callee's
    /// formal channels, checking arities.
    pub fn resolve(&self, p: &Process) -> Result<Process, DefError> {
        Ok(match p {
            Process::Nil | Process::Out(..) => p.clone(),
            Process::In(c, xs, q) => Process::In(c.clone(), xs.clone(), Arc::new(self.resolve(q)?)),
            Process::If(b, q, r) => Process::If(b.clone(), Arc::new(self.resolve(q)?), Arc::new(self.resolve(r)?)),
            Process::Par(q, r) => Process::Par(Arc::new(self.resolve(q)?), Arc::new(self.resolve(r)?)),
            Process::New(c, q) => Process::New(c.clone(), Arc::new(self.resolve(q)?)),
            Process::Call(k, es, ren) => {
                let def = self.defs.get(k).ok_or_else(|| DefError::UnknownDefinition(k.clone()))?;
                if def.params.len() != es.len() {
                    return Err(DefError::ArityMismatch { name: k.clone(), expected: def.params.len(), found: es.len() });
                }
                Process::Call(k.clone(), es.clone(), normalise_renaming(k, &def.chans, ren)?)
            }
        })
    }

    /// `K(ē)[c̄/d̄]` unfolds to `body[ē/x̄][c̄/d̄]`.
    pub fn unfold(&self, name: &Name, args: &[Expr], ren: &[(Name, Name)]) -> Result<Process, DefError> {
        let def = self.defs.get(name).ok_or_else(|| DefError::UnknownDefinition(name.clone()))?;
        if def.params.len() != args.len() {
            return Err(DefError::ArityMismatch { name: name.clone(), expected: def.params.len(), found: args.len() });
        }
        let s: Subst = def.params.iter().cloned().zip(args.iter().cloned()).collect();
        Ok(def.body.substitute(&s).rename_channels(ren))
    }
}

fn normalise_renaming(k: &Name, formals: &[Name], ren: &[(Name, Name)]) -> Result<Vec<(Name, Name)>, DefError> {
    let mut given: BTreeMap<Name, Name> = BTreeMap::new();
    for (c, d) in ren {
        if !formals.contains(d) {
            return Err(DefError::UnknownFormal { name: k.clone(), chan: d.clone() });
        }
        if given.insert(d.clone(), c.clone()).is_some() {
            return Err(DefError::DuplicateRenaming { name: k.clone(), chan: d.clone() });
        }
    }
    Ok(formals
        .iter()
        .map(|d| (given.get(d).cloned().unwrap_or_else(|| d.clone()), d.clone()))
        .collect())
}

fn raw_free_chans(p: &Process, formals: &BTreeMap<Name, Vec<Name>>, out: &mut BTreeSet<Name>) -> Result<(), DefError> {
    match p {
        Process::Nil => {}
        Process::Out(c, _) => {
            out.insert(c.clone());
        }
        Process::In(c, _, q) => {
            out.insert(c.clone());
            raw_free_chans(q, formals, out)?;
        }
        Process::If(_, q, r) | Process::Par(q, r) => {
            raw_free_chans(q, formals, out)?;
            raw_free_chans(r, formals, out)?;
        }
        Process::New(c, q) => {
            let mut inner = BTreeSet::new();
            raw_free_chans(q, formals, &mut inner)?;
            inner.remove(c);
            out.extend(inner);
        }
        Process::Call(k, _, ren) => {
            let fs = formals.get(k).ok_or_else(|| DefError::UnknownDefinition(k.clone()))?;
            for d in fs {
                match ren.iter().find(|(_, d2)| d2 == d) {
                    Some((c, _)) => out.insert(c.clone()),
                    None => out.insert(d.clone()),
                };
            }
            for (c, d) in ren {
                if !fs.contains(d) {
                    // Unknown formal; reported precisely during resolution.
                    out.insert(c.clone());
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::var("x")
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_expr(&Expr::sub(Expr::lit(5), Expr::lit(3)), &Subst::new()), Ok(2));
        let s = subst_of([(Name::new("x"), Expr::lit(7))]);
        assert_eq!(eval_expr(&x(), &s), Ok(7));
        let s = subst_of([(Name::new("x"), Expr::lit(2))]);
        assert_eq!(eval_expr(&Expr::add(x(), x()), &s), Ok(4));
        assert_eq!(eval_expr(&x(), &Subst::new()), Err(EvalError::UnboundVariable(Name::new("x"))));
        assert_eq!(
            eval_expr(&Expr::add(Expr::lit(i64::MAX), Expr::lit(1)), &Subst::new()),
            Err(EvalError::Overflow)
        );
    }

    #[test]
    fn bool_examples() {
        let e = Subst::new();
        assert_eq!(eval_bool(&BoolExpr::leq(Expr::lit(2), Expr::lit(9)), &e), Ok(true));
        assert_eq!(eval_bool(&BoolExpr::not(BoolExpr::ff()), &e), Ok(true));
        let c = BoolExpr::and(
            BoolExpr::leq(x(), Expr::lit(9)),
            BoolExpr::not(BoolExpr::leq(x(), Expr::lit(9))),
        );
        assert_eq!(eval_bool(&c, &subst_of([(Name::new("x"), Expr::lit(4))])), Ok(false));
    }

    #[test]
    fn substitution_examples() {
        let s = subst_of([(Name::new("x"), Expr::lit(2))]);
        let p = Process::out("c1", vec![x(), Expr::add(x(), x())]);
        assert_eq!(p.substitute(&s), Process::out("c1", vec![Expr::lit(2), Expr::add(Expr::lit(2), Expr::lit(2))]));

        let bound = Process::inp("c", &["x"], Process::out("d", vec![x()]));
        assert_eq!(bound.substitute(&subst_of([(Name::new("x"), Expr::lit(5))])), bound);

        let p = Process::par(Process::out("d", vec![Expr::var("y")]), Process::inp("c", &["y"], Process::Nil));
        let s = subst_of([(Name::new("y"), Expr::lit(1))]);
        assert_eq!(
            p.substitute(&s),
            Process::par(Process::out("d", vec![Expr::lit(1)]), Process::inp("c", &["y"], Process::Nil))
        );
    }

    #[test]
    fn substitution_avoids_capture() {
        // c?(x).d!(x+y) with y := x must rename the binder.
        let p = Process::inp("c", &["x"], Process::out("d", vec![Expr::add(x(), Expr::var("y"))]));
        let q = p.substitute(&subst_of([(Name::new("y"), x())]));
        match q {
            Process::In(_, xs, body) => {
                assert_ne!(xs[0].as_str(), "x");
                assert_eq!(*body, Process::out("d", vec![Expr::add(Expr::Var(xs[0].clone()), x())]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn renaming_examples() {
        let p = Process::out("r", vec![]);
        assert_eq!(p.rename_channels(&[(Name::new("r3"), Name::new("r"))]), Process::out("r3", vec![]));
        assert_eq!(p.rename_channels(&[]), p);
        // The binder shields the renamed channel.
        let p = Process::new_chan("c", Process::out("c", vec![]));
        assert_eq!(p.rename_channels(&[(Name::new("d"), Name::new("c"))]), p);
        // Capture avoidance: renaming d to c under new c.
        let p = Process::new_chan("c", Process::par(Process::out("c", vec![]), Process::out("d", vec![])));
        let q = p.rename_channels(&[(Name::new("c"), Name::new("d"))]);
        match q {
            Process::New(b, body) => {
                assert_ne!(b.as_str(), "c");
                assert_eq!(*body, Process::par(Process::Out(b.clone(), vec![]), Process::out("c", vec![])));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            p.rename_channel_lists(&[Name::new("a")], &[]),
            Err(RenameError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn deftable_infers_formals_and_resolves_calls() {
        let raw = vec![
            RawDef {
                name: Name::new("A"),
                params: vec![Name::new("n")],
                chans: None,
                body: Process::par(
                    Process::out("c", vec![Expr::var("n")]),
                    Process::Call(Name::new("B"), vec![], vec![(Name::new("e"), Name::new("d"))]),
                ),
            },
            RawDef { name: Name::new("B"), params: vec![], chans: None, body: Process::out("d", vec![]) },
        ];
        let t = DefTable::build(raw).unwrap();
        assert_eq!(t.get(&Name::new("A")).unwrap().chans, vec![Name::new("c"), Name::new("e")]);
        let bad = Process::Call(Name::new("A"), vec![], vec![]);
        assert!(matches!(t.resolve(&bad), Err(DefError::ArityMismatch { .. })));
        let unknown = Process::Call(Name::new("Z"), vec![], vec![]);
        assert!(matches!(t.resolve(&unknown), Err(DefError::UnknownDefinition(_))));
    }
}
