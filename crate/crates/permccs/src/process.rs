//! Unconstrained reduction semantics: canonical forms for structural
//! equivalence, one-step reduction, evaluation and determinism checking.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::syntax::{DefError, DefTable, EvalError, Expr, Name, Process, Subst};

/// Default exploration budget (number of expanded states).
pub const DEFAULT_BUDGET: usize = 10_000;

/// Upper bound on binder permutations tried when ordering restricted names.
const PERMUTATION_CAP: usize = 5040;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProcessError {
    #[error("stuck on open term: {0}")]
    StuckOnOpenTerm(EvalError),
    #[error(transparent)]
    Definition(#[from] DefError),
}

impl From<EvalError> for ProcessError {
    fn from(e: EvalError) -> Self {
        ProcessError::StuckOnOpenTerm(e)
    }
}

/// Canonical representative of a structural-equivalence class: hoisted
/// restricted names (named by level) over a sorted multiset of atoms.
/// Atoms are outputs, inputs, conditionals and calls, themselves in
/// canonical form below their prefixes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonProcess {
    pub binders: Vec<Name>,
    pub atoms: Vec<Process>,
}

impl CanonProcess {
    pub fn nil() -> CanonProcess {
        CanonProcess { binders: vec![], atoms: vec![] }
    }

    pub fn to_process(&self) -> Process {
        Process::new_all(&self.binders, Process::par_all(self.atoms.clone()))
    }

    pub fn is_nil(&self) -> bool {
        self.atoms.is_empty()
    }
}

pub fn chan_level(k: usize) -> Name {
    Name::from(format!("_c{k}"))
}

pub fn var_level(k: usize) -> Name {
    Name::from(format!("_v{k}"))
}

pub fn canon(p: &Process) -> CanonProcess {
    let mut tmp = 0usize;
    canon_at(p, 0, 0, &mut tmp)
}

pub fn struct_eq(p: &Process, q: &Process) -> bool {
    canon(p) == canon(q)
}

/// Canonical form with closed arithmetic folded, used to compare results
/// such as `c!(2+2)` and `c!(4)`.
pub fn value_normal(c: &CanonProcess) -> CanonProcess {
    canon(&c.to_process().fold_values())
}

/// Splits a process into hoisted restricted names (as fresh temporaries) and atoms.
pub(crate) fn flatten(p: &Process, binders: &mut Vec<Name>, atoms: &mut Vec<Process>, tmp: &mut usize) {
    match p {
        Process::Nil => {}
        Process::Par(a, b) => {
            flatten(a, binders, atoms, tmp);
            flatten(b, binders, atoms, tmp);
        }
        Process::New(c, q) => {
            let t = Name::from(format!("%t{}", *tmp));
            *tmp += 1;
            let q = q.rename_channels(&[(t.clone(), c.clone())]);
            binders.push(t);
            flatten(&q, binders, atoms, tmp);
        }
        _ => atoms.push(p.clone()),
    }
}

pub(crate) fn canon_at(p: &Process, cl: usize, vl: usize, tmp: &mut usize) -> CanonProcess {
    let mut binders = Vec::new();
    let mut atoms = Vec::new();
    flatten(p, &mut binders, &mut atoms, tmp);
    let (binders, atoms) = order_binders(binders, atoms, cl, |a, lvl, t| canon_atom(a, lvl, vl, t), tmp);
    CanonProcess { binders, atoms }
}

/// Drops unused temporaries, then chooses level names for the rest so that
/// the sorted canonical atom list is minimal. `canon_item` canonicalises one
/// item given the channel level below the binders.
pub(crate) fn order_binders<T: Ord + Clone>(
    temps: Vec<Name>,
    items: Vec<T>,
    cl: usize,
    canon_item: impl Fn(&T, usize, &mut usize) -> T,
    tmp: &mut usize,
) -> (Vec<Name>, Vec<T>)
where
    T: RenameChans,
{
    let fcs: Vec<BTreeSet<Name>> = items.iter().map(|a| a.free_chans()).collect();
    let used: Vec<Name> = temps.into_iter().filter(|t| fcs.iter().any(|s| s.contains(t))).collect();
    let nb = used.len();
    let inner = cl + nb;
    if nb == 0 {
        let mut out: Vec<T> = items.iter().map(|a| canon_item(a, inner, tmp)).collect();
        out.sort();
        return (vec![], out);
    }
    let self_name = Name::new("%self");
    let other_name = Name::new("%o");
    let mut sigs: Vec<(Vec<T>, Name)> = used
        .iter()
        .map(|t| {
            let pairs: Vec<(Name, Name)> = used
                .iter()
                .map(|u| (if u == t { self_name.clone() } else { other_name.clone() }, u.clone()))
                .collect();
            let mut sig: Vec<T> = items
                .iter()
                .zip(&fcs)
                .filter(|(_, fc)| fc.contains(t))
                .map(|(a, _)| canon_item(&a.rename(&pairs), inner, tmp))
                .collect();
            sig.sort();
            (sig, t.clone())
        })
        .collect();
    sigs.sort();
    // Tie groups of equal signatures.
    let mut groups: Vec<Vec<Name>> = Vec::new();
    for i in 0..sigs.len() {
        if i > 0 && sigs[i].0 == sigs[i - 1].0 {
            groups.last_mut().unwrap().push(sigs[i].1.clone());
        } else {
            groups.push(vec![sigs[i].1.clone()]);
        }
    }
    let mut total: usize = 1;
    for g in &groups {
        for k in 1..=g.len() {
            total = total.saturating_mul(k);
        }
    }
    let orders: Vec<Vec<Name>> = if total <= PERMUTATION_CAP {
        let mut acc: Vec<Vec<Name>> = vec![vec![]];
        for g in &groups {
            let perms = permutations(g);
            let mut next = Vec::with_capacity(acc.len() * perms.len());
            for prefix in &acc {
                for p in &perms {
                    let mut v = prefix.clone();
                    v.extend(p.iter().cloned());
                    next.push(v);
                }
            }
            acc = next;
        }
        acc
    } else {
        vec![groups.concat()]
    };
    let mut best: Option<Vec<T>> = None;
    for order in orders {
        let pairs: Vec<(Name, Name)> =
            order.iter().enumerate().map(|(k, t)| (chan_level(cl + k), t.clone())).collect();
        let mut cand: Vec<T> = items.iter().map(|a| canon_item(&a.rename(&pairs), inner, tmp)).collect();
        cand.sort();
        if best.as_ref().map_or(true, |b| cand < *b) {
            best = Some(cand);
        }
    }
    ((cl..cl + nb).map(chan_level).collect(), best.unwrap_or_default())
}

/// Items that can appear under hoisted binders (atoms of processes or leaves of systems).
pub(crate) trait RenameChans {
    fn free_chans(&self) -> BTreeSet<Name>;
    fn rename(&self, pairs: &[(Name, Name)]) -> Self;
}

impl RenameChans for Process {
    fn free_chans(&self) -> BTreeSet<Name> {
        Process::free_chans(self)
    }

    fn rename(&self, pairs: &[(Name, Name)]) -> Self {
        self.rename_channels(pairs)
    }
}

fn permutations(items: &[Name]) -> Vec<Vec<Name>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

pub(crate) fn canon_atom(a: &Process, cl: usize, vl: usize, tmp: &mut usize) -> Process {
    match a {
        Process::In(c, xs, body) => {
            let s: Subst = xs
                .iter()
                .enumerate()
                .map(|(i, x)| (x.clone(), Expr::Var(var_level(vl + i))))
                .collect();
            let nxs: Vec<Name> = (0..xs.len()).map(|i| var_level(vl + i)).collect();
            let body = rename_vars(body, xs, &s);
            let inner = canon_at(&body, cl, vl + xs.len(), tmp);
            Process::In(c.clone(), nxs, Arc::new(inner.to_process()))
        }
        Process::If(b, p, q) => Process::If(
            b.clone(),
            Arc::new(canon_at(p, cl, vl, tmp).to_process()),
            Arc::new(canon_at(q, cl, vl, tmp).to_process()),
        ),
        Process::Par(..) | Process::New(..) | Process::Nil => canon_at(a, cl, vl, tmp).to_process(),
        _ => a.clone(),
    }
}

/// Renames input-bound variables, going through fresh intermediates so that a
/// permutation of level names cannot collide with itself.
fn rename_vars(body: &Process, xs: &[Name], s: &Subst) -> Process {
    let clash = s.values().any(|e| matches!(e, Expr::Var(v) if xs.contains(v)));
    if !clash {
        return body.substitute(s);
    }
    let mid: Subst = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (x.clone(), Expr::Var(Name::from(format!("%x{i}")))))
        .collect();
    let back: Subst = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (Name::from(format!("%x{i}")), s[x].clone()))
        .collect();
    body.substitute(&mid).substitute(&back)
}

/// Reduction rule labels for traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProcRule {
    RThn,
    REls,
    RCom,
    RPrc,
}

impl ProcRule {
    pub fn name(self) -> &'static str {
        match self {
            ProcRule::RThn => "rThn",
            ProcRule::REls => "rEls",
            ProcRule::RCom => "rCom",
            ProcRule::RPrc => "rPrc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcStep {
    pub rule: ProcRule,
    /// Indices of the canonical atoms taking part in the redex.
    pub redex: Vec<usize>,
    pub result: CanonProcess,
}

fn rebuild(c: &CanonProcess, remove: &[usize], add: Vec<Process>) -> CanonProcess {
    let mut atoms: Vec<Process> = c
        .atoms
        .iter()
        .enumerate()
        .filter(|(i, _)| !remove.contains(i))
        .map(|(_, a)| a.clone())
        .collect();
    atoms.extend(add);
    canon(&Process::new_all(&c.binders, Process::par_all(atoms)))
}

fn lits(vs: Vec<i64>) -> Vec<Expr> {
    vs.into_iter().map(Expr::Lit).collect()
}

/// Substitution of values for input-bound variables.
pub fn bind_values(xs: &[Name], vs: &[i64]) -> Subst {
    xs.iter().cloned().zip(vs.iter().map(|v| Expr::Lit(*v))).collect()
}

/// All one-step successors of a canonical process, with rule labels.
pub fn step_canon(c: &CanonProcess, defs: &DefTable) -> Result<Vec<ProcStep>, ProcessError> {
    let mut out = Vec::new();
    for (i, a) in c.atoms.iter().enumerate() {
        match a {
            Process::If(b, p, q) => {
                let taken = b.eval(&Subst::new())?;
                let (rule, next) = if taken { (ProcRule::RThn, p) } else { (ProcRule::REls, q) };
                out.push(ProcStep { rule, redex: vec![i], result: rebuild(c, &[i], vec![(**next).clone()]) });
            }
            Process::Call(k, es, ren) => {
                let vs = crate::syntax::eval_exprs(es, &Subst::new())?;
                let body = defs.unfold(k, &lits(vs), ren)?;
                out.push(ProcStep { rule: ProcRule::RPrc, redex: vec![i], result: rebuild(c, &[i], vec![body]) });
            }
            Process::Out(ch, es) => {
                let mut vals = None;
                for (j, b) in c.atoms.iter().enumerate() {
                    if let Process::In(ch2, xs, body) = b {
                        if ch2 == ch && xs.len() == es.len() {
                            if vals.is_none() {
                                vals = Some(crate::syntax::eval_exprs(es, &Subst::new())?);
                            }
                            let vs = vals.as_ref().unwrap();
                            let next = body.substitute(&bind_values(xs, vs));
                            out.push(ProcStep {
                                rule: ProcRule::RCom,
                                redex: vec![i, j],
                                result: rebuild(c, &[i, j], vec![next]),
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// One-step successors modulo structural equivalence.
pub fn step(p: &Process, defs: &DefTable) -> Result<BTreeSet<CanonProcess>, ProcessError> {
    Ok(step_canon(&canon(p), defs)?.into_iter().map(|s| s.result).collect())
}

/// Explored fragment of the reduction graph.
#[derive(Clone, Debug, Default)]
pub struct ReductionGraph {
    pub nodes: Vec<CanonProcess>,
    /// Successor indices; `None` for nodes never expanded.
    pub edges: Vec<Option<Vec<usize>>>,
    pub truncated: bool,
}

impl ReductionGraph {
    /// Expanded nodes without successors.
    pub fn stable(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(&self.edges[i], Some(e) if e.is_empty()))
            .collect()
    }

    /// A cycle reachable from the root, if the explored graph has one.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Grey,
            Black,
        }
        let n = self.nodes.len();
        if n == 0 {
            return None;
        }
        let mut color = vec![Color::White; n];
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        color[0] = Color::Grey;
        while let Some(&mut (v, ref mut k)) = stack.last_mut() {
            let succ = self.edges[v].as_deref().unwrap_or(&[]);
            if *k < succ.len() {
                let w = succ[*k];
                *k += 1;
                match color[w] {
                    Color::White => {
                        color[w] = Color::Grey;
                        stack.push((w, 0));
                    }
                    Color::Grey => {
                        let start = stack.iter().position(|&(u, _)| u == w).unwrap_or(0);
                        return Some(stack[start..].iter().map(|&(u, _)| u).collect());
                    }
                    Color::Black => {}
                }
            } else {
                color[v] = Color::Black;
                stack.pop();
            }
        }
        None
    }
}

/// Breadth-first exploration of the reduction graph from `p`, expanding at
/// most `budget` states.
pub fn explore(p: &Process, defs: &DefTable, budget: usize) -> Result<ReductionGraph, ProcessError> {
    let root = canon(p);
    let mut g = ReductionGraph::default();
    let mut index: HashMap<CanonProcess, usize> = HashMap::new();
    index.insert(root.clone(), 0);
    g.nodes.push(root);
    g.edges.push(None);
    let mut queue = VecDeque::from([0usize]);
    let mut expanded = 0usize;
    while let Some(v) = queue.pop_front() {
        if expanded >= budget {
            g.truncated = true;
            break;
        }
        expanded += 1;
        let succ: BTreeSet<CanonProcess> = step_canon(&g.nodes[v], defs)?.into_iter().map(|s| s.result).collect();
        let mut ids = Vec::with_capacity(succ.len());
        for s in succ {
            let id = match index.get(&s) {
                Some(&id) => id,
                None => {
                    let id = g.nodes.len();
                    index.insert(s.clone(), id);
                    g.nodes.push(s);
                    g.edges.push(None);
                    queue.push_back(id);
                    id
                }
            };
            ids.push(id);
        }
        g.edges[v] = Some(ids);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvaluateError {
    #[error("budget exhausted after finding {} stable result(s)", partial.len())]
    BudgetExhausted { partial: BTreeSet<CanonProcess> },
    #[error(transparent)]
    Process(#[from] ProcessError),
}

/// All stable canonical processes reachable from `p`.
pub fn evaluate(p: &Process, defs: &DefTable, budget: usize) -> Result<BTreeSet<CanonProcess>, EvaluateError> {
    let g = explore(p, defs, budget)?;
    let stable: BTreeSet<CanonProcess> = g.stable().into_iter().map(|i| g.nodes[i].clone()).collect();
    if g.truncated {
        Err(EvaluateError::BudgetExhausted { partial: stable })
    } else {
        Ok(stable)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Determinism {
    /// Converges and every stable result is the given class.
    Deterministic(CanonProcess),
    /// Two stable results that are not equivalent.
    NonDeterministic(CanonProcess, CanonProcess),
    /// A reachable reduction cycle.
    Diverges(Vec<CanonProcess>),
    /// Budget ran out before any of the above could be decided.
    Unknown,
}

/// Decides determinism within budget. Stable results are compared after
/// folding closed arithmetic.
pub fn is_deterministic(p: &Process, defs: &DefTable, budget: usize) -> Result<Determinism, ProcessError> {
    let g = explore(p, defs, budget)?;
    let mut classes: BTreeMap<CanonProcess, CanonProcess> = BTreeMap::new();
    for i in g.stable() {
        classes.entry(value_normal(&g.nodes[i])).or_insert_with(|| g.nodes[i].clone());
        if classes.len() >= 2 {
            let mut it = classes.into_values();
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            return Ok(Determinism::NonDeterministic(a, b));
        }
    }
    if let Some(cycle) = g.find_cycle() {
        return Ok(Determinism::Diverges(cycle.into_iter().map(|i| g.nodes[i].clone()).collect()));
    }
    if g.truncated {
        return Ok(Determinism::Unknown);
    }
    match classes.into_values().next() {
        Some(c) => Ok(Determinism::Deterministic(c)),
        None => Ok(Determinism::Unknown),
    }
}

/// A maximal reduction sequence choosing the first successor each time.
pub fn trace_first(p: &Process, defs: &DefTable, budget: usize) -> Result<(Vec<ProcStep>, bool), ProcessError> {
    let mut cur = canon(p);
    let mut out = Vec::new();
    for _ in 0..budget {
        let mut succ = step_canon(&cur, defs)?;
        if succ.is_empty() {
            return Ok((out, true));
        }
        let s = succ.swap_remove(0);
        cur = s.result.clone();
        out.push(s);
    }
    Ok((out, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{BoolExpr, RawDef};

    fn out(c: &str, vs: &[i64]) -> Process {
        Process::out(c, vs.iter().map(|v| Expr::Lit(*v)).collect())
    }

    #[test]
    fn structural_rules() {
        let p = out("a", &[1]);
        assert_eq!(canon(&Process::par(p.clone(), Process::Nil)), canon(&p));
        assert_eq!(canon(&Process::new_chan("c", Process::Nil)), canon(&Process::Nil));
        let q = out("c", &[]);
        let lhs = Process::par(p.clone(), Process::new_chan("c", q.clone()));
        let rhs = Process::new_chan("c", Process::par(p.clone(), q.clone()));
        assert_eq!(canon(&lhs), canon(&rhs));
        let swp1 = Process::new_chan("c", Process::new_chan("d", Process::par(out("c", &[1]), out("d", &[2]))));
        let swp2 = Process::new_chan("d", Process::new_chan("c", Process::par(out("c", &[1]), out("d", &[2]))));
        assert_eq!(canon(&swp1), canon(&swp2));
        // Alpha renaming of binders.
        let a1 = Process::new_chan("x", out("x", &[3]));
        let a2 = Process::new_chan("y", out("y", &[3]));
        assert_eq!(canon(&a1), canon(&a2));
        // Distinct processes stay distinct.
        assert_ne!(canon(&out("c", &[1])), canon(&out("c", &[2])));
        let twoscopes = Process::par(Process::new_chan("c", out("c", &[1])), Process::new_chan("c", out("c", &[2])));
        let onescope = Process::new_chan("c", Process::par(out("c", &[1]), out("c", &[2])));
        assert_ne!(canon(&twoscopes), canon(&onescope));
    }

    #[test]
    fn binder_symmetry_is_resolved() {
        // new a,b.(a!1 | b!1 | a?().b!2)  vs the same with a and b swapped.
        let mk = |x: &str, y: &str| {
            Process::new_chan(
                "a",
                Process::new_chan(
                    "b",
                    Process::par_all(vec![out(x, &[1]), out(y, &[1]), Process::inp(x, &[], out(y, &[2]))]),
                ),
            )
        };
        assert_eq!(canon(&mk("a", "b")), canon(&mk("b", "a")));
    }

    #[test]
    fn input_binders_are_alpha_invariant() {
        let p = Process::inp("c", &["x"], Process::out("d", vec![Expr::var("x")]));
        let q = Process::inp("c", &["y"], Process::out("d", vec![Expr::var("y")]));
        assert_eq!(canon(&p), canon(&q));
    }

    #[test]
    fn step_examples() {
        let defs = DefTable::empty();
        let p = Process::par(out("c1", &[4]), Process::inp("c1", &["x"], Process::out("d", vec![Expr::var("x")])));
        let s = step(&p, &defs).unwrap();
        assert_eq!(s, BTreeSet::from([canon(&out("d", &[4]))]));
        let c = Process::cond(BoolExpr::leq(Expr::lit(2), Expr::lit(9)), out("p", &[]), out("q", &[]));
        assert_eq!(step(&c, &defs).unwrap(), BTreeSet::from([canon(&out("p", &[]))]));
        let open = Process::cond(BoolExpr::leq(Expr::var("z"), Expr::lit(9)), Process::Nil, Process::Nil);
        assert!(matches!(step(&open, &defs), Err(ProcessError::StuckOnOpenTerm(_))));
        // Arity mismatch means no communication.
        let m = Process::par(out("c", &[1]), Process::inp("c", &["x", "y"], Process::Nil));
        assert!(step(&m, &defs).unwrap().is_empty());
    }

    #[test]
    fn loop_diverges() {
        let defs = DefTable::build(vec![RawDef {
            name: Name::new("Loop"),
            params: vec![],
            chans: None,
            body: Process::Call(Name::new("Loop"), vec![], vec![]),
        }])
        .unwrap();
        let p = Process::Call(Name::new("Loop"), vec![], vec![]);
        assert!(matches!(is_deterministic(&p, &defs, 100).unwrap(), Determinism::Diverges(_)));
    }

    #[test]
    fn nil_evaluates_to_nil() {
        let r = evaluate(&Process::Nil, &DefTable::empty(), 10).unwrap();
        assert_eq!(r, BTreeSet::from([CanonProcess::nil()]));
    }

    #[test]
    fn budget_is_reported() {
        // An ever-growing counter never repeats a state.
        let defs = DefTable::build(vec![RawDef {
            name: Name::new("Up"),
            params: vec![Name::new("n")],
            chans: Some(vec![]),
            body: Process::Call(Name::new("Up"), vec![Expr::add(Expr::var("n"), Expr::lit(1))], vec![]),
        }])
        .unwrap();
        let p = Process::Call(Name::new("Up"), vec![Expr::lit(0)], vec![]);
        assert!(matches!(evaluate(&p, &defs, 50), Err(EvaluateError::BudgetExhausted { .. })));
        assert_eq!(is_deterministic(&p, &defs, 50).unwrap(), Determinism::Unknown);
    }
}
