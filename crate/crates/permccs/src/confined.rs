//! Permission-confined systems: ownership, separation, violations,
//! confined reduction and safe evaluation (narrative search).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::process::{self, canon, canon_at, chan_level, order_binders, CanonProcess, RenameChans};
use crate::syntax::{DefTable, Name, Process, Subst};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    In,
    Out,
}

/// A linear capability to input (`c?`) or output (`c!`) on a channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Perm {
    pub chan: Name,
    pub pol: Polarity,
}

impl Perm {
    pub fn input(c: &str) -> Perm {
        Perm { chan: Name::new(c), pol: Polarity::In }
    }

    pub fn output(c: &str) -> Perm {
        Perm { chan: Name::new(c), pol: Polarity::Out }
    }

    pub fn of(chan: &Name, pol: Polarity) -> Perm {
        Perm { chan: chan.clone(), pol }
    }
}

impl fmt::Display for Perm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pol {
            Polarity::In => write!(f, "{}?", self.chan),
            Polarity::Out => write!(f, "{}!", self.chan),
        }
    }
}

pub type PermSet = BTreeSet<Perm>;

/// `{c?, c!}`
pub fn both(c: &Name) -> PermSet {
    PermSet::from([Perm::of(c, Polarity::In), Perm::of(c, Polarity::Out)])
}

pub fn perm_names(e: &PermSet) -> BTreeSet<Name> {
    e.iter().map(|p| p.chan.clone()).collect()
}

fn rename_perms(e: &PermSet, map: &BTreeMap<Name, Name>) -> PermSet {
    e.iter()
        .map(|p| Perm { chan: map.get(&p.chan).cloned().unwrap_or_else(|| p.chan.clone()), pol: p.pol })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfinedError {
    #[error("parallel components are not separate: both own {0}")]
    NotSeparate(Perm),
    #[error("permission set of size {size} exceeds split cap {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("search budget exhausted after {0} states")]
    BudgetExhausted(usize),
    #[error(transparent)]
    Process(#[from] process::ProcessError),
}

/// Systems of confined processes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum System {
    Leaf(PermSet, Process),
    Par(Arc<System>, Arc<System>),
    New(Name, Arc<System>),
}

impl System {
    pub fn leaf(e: PermSet, p: Process) -> System {
        System::Leaf(e, p)
    }

    pub fn unit() -> System {
        System::Leaf(PermSet::new(), Process::Nil)
    }

    /// Parallel composition; rejects components that are not separate.
    pub fn par(s: System, t: System) -> Result<System, ConfinedError> {
        let a = owned_perms(&s);
        let b = owned_perms(&t);
        if let Some(p) = a.intersection(&b).next() {
            return Err(ConfinedError::NotSeparate(p.clone()));
        }
        Ok(System::Par(Arc::new(s), Arc::new(t)))
    }

    /// Parallel composition without the separation check.
    pub fn par_unchecked(s: System, t: System) -> System {
        System::Par(Arc::new(s), Arc::new(t))
    }

    pub fn par_all(items: Vec<System>) -> Result<System, ConfinedError> {
        let mut it = items.into_iter().rev();
        match it.next() {
            None => Ok(System::unit()),
            Some(last) => it.try_fold(last, |acc, s| System::par(s, acc)),
        }
    }

    pub fn par_all_unchecked(items: Vec<System>) -> System {
        let mut it = items.into_iter().rev();
        match it.next() {
            None => System::unit(),
            Some(last) => it.fold(last, |acc, s| System::par_unchecked(s, acc)),
        }
    }

    pub fn new_chan(c: &str, s: System) -> System {
        System::New(Name::new(c), Arc::new(s))
    }

    pub fn new_all(chans: &[Name], s: System) -> System {
        chans.iter().rev().fold(s, |acc, c| System::New(c.clone(), Arc::new(acc)))
    }

    pub fn free_chans_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            System::Leaf(e, p) => {
                out.extend(perm_names(e));
                p.free_chans_into(out);
            }
            System::Par(a, b) => {
                a.free_chans_into(out);
                b.free_chans_into(out);
            }
            System::New(c, s) => {
                let mut inner = BTreeSet::new();
                s.free_chans_into(&mut inner);
                inner.remove(c);
                out.extend(inner);
            }
        }
    }

    /// Free names, including names occurring in permission sets.
    pub fn free_chans(&self) -> BTreeSet<Name> {
        let mut s = BTreeSet::new();
        self.free_chans_into(&mut s);
        s
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.visit_leaves(&mut |_, p| p.free_vars_into(&mut out));
        out
    }

    fn visit_leaves(&self, f: &mut impl FnMut(&PermSet, &Process)) {
        match self {
            System::Leaf(e, p) => f(e, p),
            System::Par(a, b) => {
                a.visit_leaves(f);
                b.visit_leaves(f);
            }
            System::New(_, s) => s.visit_leaves(f),
        }
    }

    fn all_names_into(&self, out: &mut BTreeSet<Name>) {
        match self {
            System::Leaf(e, p) => {
                out.extend(perm_names(e));
                p.all_names_into(out);
            }
            System::Par(a, b) => {
                a.all_names_into(out);
                b.all_names_into(out);
            }
            System::New(c, s) => {
                out.insert(c.clone());
                s.all_names_into(out);
            }
        }
    }

    /// Simultaneous channel renaming `(target, source)`, capture-avoiding.
    pub fn rename_channels(&self, pairs: &[(Name, Name)]) -> System {
        let map: BTreeMap<Name, Name> =
            pairs.iter().filter(|(c, d)| c != d).map(|(c, d)| (d.clone(), c.clone())).collect();
        if map.is_empty() {
            return self.clone();
        }
        self.rename_map(&map)
    }

    fn rename_map(&self, map: &BTreeMap<Name, Name>) -> System {
        match self {
            System::Leaf(e, p) => {
                let pairs: Vec<(Name, Name)> = map.iter().map(|(d, c)| (c.clone(), d.clone())).collect();
                System::Leaf(rename_perms(e, map), p.rename_channels(&pairs))
            }
            System::Par(a, b) => System::Par(Arc::new(a.rename_map(map)), Arc::new(b.rename_map(map))),
            System::New(b, s) => {
                let fc = s.free_chans();
                let inner: BTreeMap<Name, Name> = map
                    .iter()
                    .filter(|(k, _)| *k != b && fc.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if inner.is_empty() {
                    return self.clone();
                }
                if inner.values().any(|v| v == b) {
                    let mut taken = BTreeSet::new();
                    s.all_names_into(&mut taken);
                    taken.extend(inner.keys().cloned());
                    taken.extend(inner.values().cloned());
                    let b2 = crate::syntax::fresh_name(b, |n| taken.contains(n));
                    let s2 = s.rename_map(&BTreeMap::from([(b.clone(), b2.clone())]));
                    System::New(b2, Arc::new(s2.rename_map(&inner)))
                } else {
                    System::New(b.clone(), Arc::new(s.rename_map(&inner)))
                }
            }
        }
    }

    /// Applies a value substitution to every confined process.
    pub fn substitute(&self, s: &Subst) -> System {
        match self {
            System::Leaf(e, p) => System::Leaf(e.clone(), p.substitute(s)),
            System::Par(a, b) => System::Par(Arc::new(a.substitute(s)), Arc::new(b.substitute(s))),
            System::New(c, t) => System::New(c.clone(), Arc::new(t.substitute(s))),
        }
    }

    /// Replaces every permission set by the empty set.
    pub fn strip(&self) -> System {
        match self {
            System::Leaf(_, p) => System::Leaf(PermSet::new(), p.clone()),
            System::Par(a, b) => System::Par(Arc::new(a.strip()), Arc::new(b.strip())),
            System::New(c, t) => System::New(c.clone(), Arc::new(t.strip())),
        }
    }

    pub fn map_processes(&self, f: &impl Fn(&Process) -> Process) -> System {
        match self {
            System::Leaf(e, p) => System::Leaf(e.clone(), f(p)),
            System::Par(a, b) => System::Par(Arc::new(a.map_processes(f)), Arc::new(b.map_processes(f))),
            System::New(c, t) => System::New(c.clone(), Arc::new(t.map_processes(f))),
        }
    }
}

/// Visibly owned permissions.
pub fn owned_perms(s: &System) -> PermSet {
    match s {
        System::Leaf(e, _) => e.clone(),
        System::Par(a, b) => {
            let mut x = owned_perms(a);
            x.extend(owned_perms(b));
            x
        }
        System::New(c, t) => {
            let mut x = owned_perms(t);
            x.remove(&Perm::of(c, Polarity::In));
            x.remove(&Perm::of(c, Polarity::Out));
            x
        }
    }
}

pub fn separate(s: &System, t: &System) -> bool {
    owned_perms(s).is_disjoint(&owned_perms(t))
}

pub fn well_resourced(s: &System) -> bool {
    match s {
        System::Leaf(..) => true,
        System::Par(a, b) => well_resourced(a) && well_resourced(b) && separate(a, b),
        System::New(_, t) => well_resourced(t),
    }
}

/// Permission-confinement erasure.
pub fn erase(s: &System) -> Process {
    match s {
        System::Leaf(_, p) => p.clone(),
        System::Par(a, b) => Process::par(erase(a), erase(b)),
        System::New(c, t) => Process::New(c.clone(), Arc::new(erase(t))),
    }
}

/// A canonical confined leaf: permissions plus canonical body.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonLeaf {
    pub body: CanonProcess,
    pub perms: PermSet,
}

impl CanonLeaf {
    pub fn single_atom(&self) -> Option<&Process> {
        if self.body.binders.is_empty() && self.body.atoms.len() == 1 {
            Some(&self.body.atoms[0])
        } else {
            None
        }
    }

    pub fn is_nil(&self) -> bool {
        self.body.is_nil()
    }

    /// Groups of atoms connected through the leaf's own restricted names.
    pub fn clusters(&self) -> Vec<(Vec<Name>, Vec<Process>)> {
        let n = self.body.atoms.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            let mut j = i;
            while p[j] != r {
                let nx = p[j];
                p[j] = r;
                j = nx;
            }
            r
        }
        let fcs: Vec<BTreeSet<Name>> = self.body.atoms.iter().map(|a| a.free_chans()).collect();
        for b in &self.body.binders {
            let users: Vec<usize> = (0..n).filter(|&i| fcs[i].contains(b)).collect();
            for w in users.windows(2) {
                let (x, y) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if x != y {
                    parent[y] = x;
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups
            .into_values()
            .map(|idx| {
                let binders: Vec<Name> = self
                    .body
                    .binders
                    .iter()
                    .filter(|b| idx.iter().any(|&i| fcs[i].contains(*b)))
                    .cloned()
                    .collect();
                (binders, idx.into_iter().map(|i| self.body.atoms[i].clone()).collect())
            })
            .collect()
    }
}

impl RenameChans for CanonLeaf {
    fn free_chans(&self) -> BTreeSet<Name> {
        let mut s = perm_names(&self.perms);
        self.body.to_process().free_chans_into(&mut s);
        s
    }

    fn rename(&self, pairs: &[(Name, Name)]) -> Self {
        let map: BTreeMap<Name, Name> = pairs.iter().map(|(c, d)| (d.clone(), c.clone())).collect();
        CanonLeaf {
            perms: rename_perms(&self.perms, &map),
            body: CanonProcess { binders: vec![], atoms: vec![self.body.to_process().rename_channels(pairs)] },
        }
    }
}

/// Canonical representative of a system up to structural equivalence
/// (with leaf bodies taken up to process equivalence).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonSystem {
    pub binders: Vec<Name>,
    pub leaves: Vec<CanonLeaf>,
}

impl CanonSystem {
    pub fn to_system(&self) -> System {
        let leaves = self.leaves.iter().map(|l| System::Leaf(l.perms.clone(), l.body.to_process())).collect();
        System::new_all(&self.binders, System::par_all_unchecked(leaves))
    }

    fn with_leaves(&self, leaves: Vec<System>) -> CanonSystem {
        canon_system(&System::new_all(&self.binders, System::par_all_unchecked(leaves)))
    }

    fn leaves_except(&self, skip: &[usize]) -> Vec<System> {
        self.leaves
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, l)| System::Leaf(l.perms.clone(), l.body.to_process()))
            .collect()
    }

    pub fn owned(&self) -> PermSet {
        let mut all: PermSet = self.leaves.iter().flat_map(|l| l.perms.iter().cloned()).collect();
        for b in &self.binders {
            for p in both(b) {
                all.remove(&p);
            }
        }
        all
    }
}

pub fn canon_system(s: &System) -> CanonSystem {
    let mut tmp = 0usize;
    let mut temps = Vec::new();
    let mut items = Vec::new();
    flatten_system(s, &mut temps, &mut items, &mut tmp);
    let (binders, leaves) = order_binders(
        temps,
        items,
        0,
        |l: &CanonLeaf, lvl, t| CanonLeaf { perms: l.perms.clone(), body: canon_at(&l.body.to_process(), lvl, 0, t) },
        &mut tmp,
    );
    CanonSystem { binders, leaves }
}

fn flatten_system(s: &System, temps: &mut Vec<Name>, items: &mut Vec<CanonLeaf>, tmp: &mut usize) {
    match s {
        System::Leaf(e, p) => {
            if e.is_empty() && canon(p).is_nil() {
                return;
            }
            items.push(CanonLeaf { perms: e.clone(), body: CanonProcess { binders: vec![], atoms: vec![p.clone()] } });
        }
        System::Par(a, b) => {
            flatten_system(a, temps, items, tmp);
            flatten_system(b, temps, items, tmp);
        }
        System::New(c, t) => {
            let n = Name::from(format!("%s{}", *tmp));
            *tmp += 1;
            let t = t.rename_channels(&[(n.clone(), c.clone())]);
            temps.push(n);
            flatten_system(&t, temps, items, tmp);
        }
    }
}

pub fn sys_struct_eq(s: &System, t: &System) -> bool {
    canon_system(s) == canon_system(t)
}

/// Equivalence up to owned permissions.
pub fn quaseq(s: &System, t: &System) -> bool {
    canon_system(&s.strip()) == canon_system(&t.strip())
}

pub fn quaseq_canon(s: &CanonSystem, t: &CanonSystem) -> bool {
    quaseq(&s.to_system(), &t.to_system())
}

/// A leaf that is exactly an output (input) lacking its own permission.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub leaf: usize,
    pub missing: Perm,
}

pub fn leaf_violation(l: &CanonLeaf) -> Option<Perm> {
    match l.single_atom()? {
        Process::Out(c, _) if !l.perms.contains(&Perm::of(c, Polarity::Out)) => Some(Perm::of(c, Polarity::Out)),
        Process::In(c, _, _) if !l.perms.contains(&Perm::of(c, Polarity::In)) => Some(Perm::of(c, Polarity::In)),
        _ => None,
    }
}

pub fn violation_canon(s: &CanonSystem) -> Option<Violation> {
    s.leaves
        .iter()
        .enumerate()
        .find_map(|(i, l)| leaf_violation(l).map(|missing| Violation { leaf: i, missing }))
}

pub fn has_violation(s: &System) -> Option<Violation> {
    violation_canon(&canon_system(s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SysRule {
    CThn,
    CEls,
    CCom,
    CPrc,
    CSpl,
    CLcl,
    CTgh,
    CDsc,
}

impl SysRule {
    pub fn name(self) -> &'static str {
        match self {
            SysRule::CThn => "cThn",
            SysRule::CEls => "cEls",
            SysRule::CCom => "cCom",
            SysRule::CPrc => "cPrc",
            SysRule::CSpl => "cSpl",
            SysRule::CLcl => "cLcl",
            SysRule::CTgh => "cTgh",
            SysRule::CDsc => "cDsc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SysStep {
    pub rule: SysRule,
    /// Indices of the canonical leaves taking part.
    pub redex: Vec<usize>,
    pub result: CanonSystem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SysConfig {
    pub budget: usize,
    pub split_cap: usize,
}

pub const DEFAULT_SPLIT_CAP: usize = 14;

impl Default for SysConfig {
    fn default() -> Self {
        SysConfig { budget: process::DEFAULT_BUDGET, split_cap: DEFAULT_SPLIT_CAP }
    }
}

fn cluster_process(c: &(Vec<Name>, Vec<Process>)) -> Process {
    Process::new_all(&c.0, Process::par_all(c.1.clone()))
}

fn subset_by_mask(perms: &[Perm], mask: u64) -> (PermSet, PermSet) {
    let mut a = PermSet::new();
    let mut b = PermSet::new();
    for (i, p) in perms.iter().enumerate() {
        if mask >> i & 1 == 1 {
            a.insert(p.clone());
        } else {
            b.insert(p.clone());
        }
    }
    (a, b)
}

fn leaf_sys(perms: PermSet, p: Process) -> System {
    System::Leaf(perms, p)
}

fn cdsc(s: &CanonSystem, i: usize) -> Option<SysStep> {
    let l = &s.leaves[i];
    (l.is_nil() && !l.perms.is_empty())
        .then(|| SysStep { rule: SysRule::CDsc, redex: vec![i], result: s.with_leaves(s.leaves_except(&[i])) })
}

fn cond_or_call(s: &CanonSystem, i: usize, defs: &DefTable) -> Result<Option<SysStep>, ConfinedError> {
    let l = &s.leaves[i];
    let Some(atom) = l.single_atom() else { return Ok(None) };
    let (rule, next) = match atom {
        Process::If(b, p, q) => {
            if b.eval(&Subst::new()).map_err(process::ProcessError::from)? {
                (SysRule::CThn, (**p).clone())
            } else {
                (SysRule::CEls, (**q).clone())
            }
        }
        Process::Call(k, es, ren) => {
            let vs = crate::syntax::eval_exprs(es, &Subst::new()).map_err(process::ProcessError::from)?;
            let args: Vec<_> = vs.into_iter().map(crate::syntax::Expr::Lit).collect();
            let body = defs.unfold(k, &args, ren).map_err(process::ProcessError::from)?;
            (SysRule::CPrc, body)
        }
        _ => return Ok(None),
    };
    let mut leaves = s.leaves_except(&[i]);
    leaves.push(leaf_sys(l.perms.clone(), next));
    Ok(Some(SysStep { rule, redex: vec![i], result: s.with_leaves(leaves) }))
}

fn clcl(s: &CanonSystem, i: usize, k: usize) -> SysStep {
    let l = &s.leaves[i];
    let b = l.body.binders[k].clone();
    let others: Vec<Name> = l.body.binders.iter().filter(|x| **x != b).cloned().collect();
    let body = Process::new_all(&others, Process::par_all(l.body.atoms.clone()));
    let mut perms = l.perms.clone();
    perms.extend(both(&b));
    let mut leaves = s.leaves_except(&[i]);
    leaves.push(System::New(b, Arc::new(leaf_sys(perms, body))));
    SysStep { rule: SysRule::CLcl, redex: vec![i], result: s.with_leaves(leaves) }
}

fn ccom(s: &CanonSystem, i: usize, j: usize) -> Result<Option<SysStep>, ConfinedError> {
    let (li, lj) = (&s.leaves[i], &s.leaves[j]);
    let (Some(Process::Out(c, es)), Some(Process::In(d, xs, body))) = (li.single_atom(), lj.single_atom()) else {
        return Ok(None);
    };
    if c != d
        || es.len() != xs.len()
        || !li.perms.contains(&Perm::of(c, Polarity::Out))
        || !lj.perms.contains(&Perm::of(c, Polarity::In))
    {
        return Ok(None);
    }
    let vs = crate::syntax::eval_exprs(es, &Subst::new()).map_err(process::ProcessError::from)?;
    let next = body.substitute(&process::bind_values(xs, &vs));
    let mut perms = lj.perms.clone();
    perms.extend(li.perms.iter().cloned());
    let mut leaves = s.leaves_except(&[i, j]);
    leaves.push(leaf_sys(perms, next));
    Ok(Some(SysStep { rule: SysRule::CCom, redex: vec![i, j], result: s.with_leaves(leaves) }))
}

fn ctgh(s: &CanonSystem, b: &Name, i: usize) -> Option<SysStep> {
    let l = &s.leaves[i];
    let bp = both(b);
    if l.perms.is_disjoint(&bp) || l.body.to_process().mentions_chan(b) {
        return None;
    }
    let perms: PermSet = l.perms.difference(&bp).cloned().collect();
    let mut leaves = s.leaves_except(&[i]);
    leaves.push(leaf_sys(perms, l.body.to_process()));
    Some(SysStep { rule: SysRule::CTgh, redex: vec![i], result: s.with_leaves(leaves) })
}

fn cspl(s: &CanonSystem, i: usize, cmask: u64, pmask: u64, clusters: &[(Vec<Name>, Vec<Process>)]) -> SysStep {
    let l = &s.leaves[i];
    let perms: Vec<Perm> = l.perms.iter().cloned().collect();
    let (ea, eb) = subset_by_mask(&perms, pmask);
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    for (k, c) in clusters.iter().enumerate() {
        if cmask >> k & 1 == 1 {
            pa.push(cluster_process(c));
        } else {
            pb.push(cluster_process(c));
        }
    }
    let mut leaves = s.leaves_except(&[i]);
    leaves.push(leaf_sys(ea, Process::par_all(pa)));
    leaves.push(leaf_sys(eb, Process::par_all(pb)));
    SysStep { rule: SysRule::CSpl, redex: vec![i], result: s.with_leaves(leaves) }
}

/// All one-step successors of a canonical system.
pub fn sys_step_canon(s: &CanonSystem, defs: &DefTable, split_cap: usize) -> Result<Vec<SysStep>, ConfinedError> {
    let mut out = Vec::new();
    for i in 0..s.leaves.len() {
        let l = &s.leaves[i];
        if let Some(st) = cdsc(s, i) {
            out.push(st);
        }
        if let Some(st) = cond_or_call(s, i, defs)? {
            out.push(st);
        }
        for k in 0..l.body.binders.len() {
            out.push(clcl(s, i, k));
        }
        for j in 0..s.leaves.len() {
            if i != j {
                if let Some(st) = ccom(s, i, j)? {
                    out.push(st);
                }
            }
        }
        for b in &s.binders {
            if let Some(st) = ctgh(s, b, i) {
                out.push(st);
            }
        }
        let clusters = l.clusters();
        if clusters.len() >= 2 {
            if l.perms.len() > split_cap {
                return Err(ConfinedError::CapExceeded { size: l.perms.len(), cap: split_cap });
            }
            let k = clusters.len();
            // Unordered bipartitions: the first cluster always goes left.
            for cm in 0..(1u64 << (k - 1)) {
                let cmask = (cm << 1) | 1;
                if cmask == (1u64 << k) - 1 {
                    continue;
                }
                for pm in 0..(1u64 << l.perms.len()) {
                    out.push(cspl(s, i, cmask, pm, &clusters));
                }
            }
        }
    }
    Ok(out)
}

/// Every result of splitting one leaf in two by clusters and permissions.
/// With `allow_empty`, one side may receive no atoms.
pub fn split_results(s: &CanonSystem, allow_empty: bool, split_cap: usize) -> Result<Vec<CanonSystem>, ConfinedError> {
    let mut out = Vec::new();
    for (i, l) in s.leaves.iter().enumerate() {
        let clusters = l.clusters();
        let k = clusters.len();
        if k < 2 && !allow_empty {
            continue;
        }
        if l.perms.len() > split_cap {
            return Err(ConfinedError::CapExceeded { size: l.perms.len(), cap: split_cap });
        }
        for cmask in 0..(1u64 << k) {
            if !allow_empty && (cmask == 0 || cmask == (1u64 << k) - 1) {
                continue;
            }
            for pm in 0..(1u64 << l.perms.len()) {
                out.push(cspl(s, i, cmask, pm, &clusters).result);
            }
        }
    }
    Ok(out)
}

/// Every result of moving one leaf-local restriction to system level.
pub fn local_results(s: &CanonSystem) -> Vec<CanonSystem> {
    let mut out = Vec::new();
    for (i, l) in s.leaves.iter().enumerate() {
        for k in 0..l.body.binders.len() {
            out.push(clcl(s, i, k).result);
        }
    }
    out
}

pub fn sys_step(s: &System, defs: &DefTable, split_cap: usize) -> Result<BTreeSet<CanonSystem>, ConfinedError> {
    Ok(sys_step_canon(&canon_system(s), defs, split_cap)?.into_iter().map(|st| st.result).collect())
}

/// Safe stability by definition: no successor and no violation.
pub fn is_safely_stable_canon(s: &CanonSystem, defs: &DefTable, split_cap: usize) -> Result<bool, ConfinedError> {
    Ok(violation_canon(s).is_none() && sys_step_canon(s, defs, split_cap)?.is_empty())
}

pub fn is_safely_stable(s: &System, defs: &DefTable) -> Result<bool, ConfinedError> {
    is_safely_stable_canon(&canon_system(s), defs, DEFAULT_SPLIT_CAP)
}

/// Structural characterisation of safe stability: every leaf is a single
/// output owning `c!` or a single input owning `c?`, no output meets an input
/// of the same channel and arity, and no leaf holds permissions of a hoisted
/// name it does not mention.
pub fn safely_stable_structural(s: &CanonSystem) -> bool {
    let mut outs = BTreeSet::new();
    let mut ins = BTreeSet::new();
    for l in &s.leaves {
        match l.single_atom() {
            Some(Process::Out(c, es)) if l.perms.contains(&Perm::of(c, Polarity::Out)) => {
                outs.insert((c.clone(), es.len()));
            }
            Some(Process::In(c, xs, _)) if l.perms.contains(&Perm::of(c, Polarity::In)) => {
                ins.insert((c.clone(), xs.len()));
            }
            _ => return false,
        }
        let body = l.body.to_process();
        if s.binders.iter().any(|b| !l.perms.is_disjoint(&both(b)) && !body.mentions_chan(b)) {
            return false;
        }
    }
    outs.is_disjoint(&ins)
}

/// The literal shape condition: outputs and inputs on disjoint channel sets,
/// each owning its own-polarity permission (arity and scoping ignored).
pub fn safely_stable_shape_literal(s: &CanonSystem) -> bool {
    let mut outs = BTreeSet::new();
    let mut ins = BTreeSet::new();
    for l in &s.leaves {
        match l.single_atom() {
            Some(Process::Out(c, _)) if l.perms.contains(&Perm::of(c, Polarity::Out)) => {
                outs.insert(c.clone());
            }
            Some(Process::In(c, _, _)) if l.perms.contains(&Perm::of(c, Polarity::In)) => {
                ins.insert(c.clone());
            }
            _ => return false,
        }
    }
    outs.is_disjoint(&ins)
}

/// One step of a narrative trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub rule: SysRule,
    pub redex: Vec<usize>,
    pub system: CanonSystem,
}

/// A successful safe evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Narrative {
    pub initial: CanonSystem,
    pub result: CanonSystem,
    pub trace: Vec<TraceStep>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SafeEval {
    Found(Narrative),
    /// The search space was exhausted without a safely stable system; the
    /// deepest violating state seen is reported.
    NoNarrative { deepest_violation: Option<(CanonSystem, Violation)> },
}

/// Channel/polarity usage of processes, resolving calls through definitions.
struct Usage {
    defs: BTreeMap<Name, (Vec<Name>, PermSet)>,
}

impl Usage {
    fn new(defs: &DefTable) -> Usage {
        let mut map: BTreeMap<Name, (Vec<Name>, PermSet)> =
            defs.iter().map(|(k, d)| (k.clone(), (d.chans.clone(), PermSet::new()))).collect();
        loop {
            let mut changed = false;
            for (k, d) in defs.iter() {
                let u = Usage { defs: map.clone() };
                let got = u.of(&d.body);
                let entry = map.get_mut(k).unwrap();
                if !got.is_subset(&entry.1) {
                    entry.1.extend(got);
                    changed = true;
                }
            }
            if !changed {
                return Usage { defs: map };
            }
        }
    }

    fn of(&self, p: &Process) -> PermSet {
        let mut out = PermSet::new();
        self.into(p, &mut out);
        out
    }

    fn into(&self, p: &Process, out: &mut PermSet) {
        match p {
            Process::Nil => {}
            Process::Out(c, _) => {
                out.insert(Perm::of(c, Polarity::Out));
            }
            Process::In(c, _, q) => {
                out.insert(Perm::of(c, Polarity::In));
                self.into(q, out);
            }
            Process::If(b, q, r) => match b.eval(&Subst::new()) {
                Ok(true) => self.into(q, out),
                Ok(false) => self.into(r, out),
                Err(_) => {
                    self.into(q, out);
                    self.into(r, out);
                }
            },
            Process::Par(q, r) => {
                self.into(q, out);
                self.into(r, out);
            }
            Process::New(c, q) => {
                let mut inner = PermSet::new();
                self.into(q, &mut inner);
                out.extend(inner.into_iter().filter(|x| &x.chan != c));
            }
            Process::Call(k, _, ren) => match self.defs.get(k) {
                Some((_, used)) => {
                    for u in used {
                        if let Some((c, _)) = ren.iter().find(|(_, d)| *d == u.chan) {
                            out.insert(Perm::of(c, u.pol));
                        }
                    }
                }
                None => {
                    for (c, _) in ren {
                        out.extend(both(c));
                    }
                }
            },
        }
    }
}

fn immediate(p: &Process) -> Option<Perm> {
    match p {
        Process::Out(c, _) => Some(Perm::of(c, Polarity::Out)),
        Process::In(c, _, _) => Some(Perm::of(c, Polarity::In)),
        _ => None,
    }
}

/// Permissions needed by the continuations of blocked inputs, per channel.
fn demands(s: &CanonSystem, usage: &Usage) -> BTreeMap<Name, PermSet> {
    let mut d: BTreeMap<Name, PermSet> = BTreeMap::new();
    for l in &s.leaves {
        if let Some(Process::In(c, _, k)) = l.single_atom() {
            d.entry(c.clone()).or_default().extend(usage.of(k));
        }
    }
    d
}

/// Preferred permission split between the first cluster `a` and the rest.
fn preferred_mask(
    perms: &[Perm],
    a: &[Process],
    r: &[Process],
    usage: &Usage,
    demand: &BTreeMap<Name, PermSet>,
) -> u64 {
    let ua: PermSet = a.iter().flat_map(|p| usage.of(p)).collect();
    let ur: PermSet = r.iter().flat_map(|p| usage.of(p)).collect();
    let ia: PermSet = a.iter().filter_map(immediate).collect();
    let ir: PermSet = r.iter().filter_map(immediate).collect();
    let waiting = |imm: &PermSet, other_use: &PermSet| {
        imm.iter().any(|p| p.pol == Polarity::In && other_use.contains(&Perm::of(&p.chan, Polarity::Out)))
    };
    let feeds = |imm: &PermSet, p: &Perm| {
        imm.iter().any(|o| o.pol == Polarity::Out && demand.get(&o.chan).is_some_and(|d| d.contains(p)))
    };
    let a_waits = waiting(&ia, &ur);
    let r_waits = waiting(&ir, &ua);
    let mut mask = 0u64;
    for (i, p) in perms.iter().enumerate() {
        let to_a = match (ua.contains(p), ur.contains(p)) {
            (true, false) => true,
            (false, true) => false,
            // Unused here: follow the side whose eventual output reaches a
            // blocked receiver needing it.
            (false, false) => match (feeds(&ua, p), feeds(&ur, p)) {
                (true, false) => true,
                (false, true) => false,
                _ => feeds(&ia, p) || !feeds(&ir, p),
            },
            (true, true) => {
                if ia.contains(p) != ir.contains(p) {
                    ia.contains(p)
                } else if a_waits != r_waits {
                    r_waits
                } else {
                    true
                }
            }
        };
        if to_a {
            mask |= 1 << i;
        }
    }
    mask
}

struct Node {
    sys: CanonSystem,
    parent: Option<usize>,
    rule: Option<SysRule>,
    redex: Vec<usize>,
    depth: usize,
}

struct Frame {
    node: usize,
    leaf: usize,
    clusters: Vec<(Vec<Name>, Vec<Process>)>,
    masks: Vec<u64>,
    next: usize,
}

enum Expand {
    Dead,
    Terminal(usize),
    Branch(Frame),
}

struct Search<'a> {
    defs: &'a DefTable,
    cfg: SysConfig,
    usage: Usage,
    nodes: Vec<Node>,
    visited: HashSet<CanonSystem>,
    deepest: Option<(usize, CanonSystem, Violation)>,
}

impl<'a> Search<'a> {
    fn push(&mut self, sys: CanonSystem, parent: Option<usize>, rule: Option<SysRule>, redex: Vec<usize>) -> Result<usize, ConfinedError> {
        if self.nodes.len() >= self.cfg.budget {
            return Err(ConfinedError::BudgetExhausted(self.nodes.len()));
        }
        let depth = parent.map_or(0, |p| self.nodes[p].depth + 1);
        self.nodes.push(Node { sys, parent, rule, redex, depth });
        Ok(self.nodes.len() - 1)
    }

    fn forced(&self, s: &CanonSystem) -> Result<Option<SysStep>, ConfinedError> {
        for i in 0..s.leaves.len() {
            if let Some(st) = cdsc(s, i) {
                return Ok(Some(st));
            }
        }
        for i in 0..s.leaves.len() {
            if let Some(st) = cond_or_call(s, i, self.defs)? {
                return Ok(Some(st));
            }
        }
        for i in 0..s.leaves.len() {
            if !s.leaves[i].body.binders.is_empty() {
                return Ok(Some(clcl(s, i, 0)));
            }
        }
        for i in 0..s.leaves.len() {
            for j in 0..s.leaves.len() {
                if i != j {
                    if let Some(st) = ccom(s, i, j)? {
                        return Ok(Some(st));
                    }
                }
            }
        }
        // Names no body mentions any more: their permissions are dead weight.
        for b in &s.binders {
            if s.leaves.iter().all(|l| !l.body.to_process().mentions_chan(b)) {
                for i in 0..s.leaves.len() {
                    if let Some(st) = ctgh(s, b, i) {
                        return Ok(Some(st));
                    }
                }
            }
        }
        Ok(None)
    }

    fn cleanup(&self, s: &CanonSystem) -> Option<SysStep> {
        for i in 0..s.leaves.len() {
            if let Some(st) = cdsc(s, i) {
                return Some(st);
            }
        }
        for b in &s.binders {
            for i in 0..s.leaves.len() {
                if let Some(st) = ctgh(s, b, i) {
                    return Some(st);
                }
            }
        }
        None
    }

    fn note_violation(&mut self, node: usize, v: Violation) {
        let d = self.nodes[node].depth;
        if self.deepest.as_ref().map_or(true, |(dd, _, _)| d > *dd) {
            self.deepest = Some((d, self.nodes[node].sys.clone(), v));
        }
    }

    fn expand(&mut self, mut node: usize) -> Result<Expand, ConfinedError> {
        loop {
            if let Some(v) = violation_canon(&self.nodes[node].sys) {
                self.note_violation(node, v);
                return Ok(Expand::Dead);
            }
            match self.forced(&self.nodes[node].sys)? {
                Some(st) => node = self.push(st.result, Some(node), Some(st.rule), st.redex)?,
                None => break,
            }
        }
        if !self.visited.insert(self.nodes[node].sys.clone()) {
            return Ok(Expand::Dead);
        }
        let s = self.nodes[node].sys.clone();
        for (i, l) in s.leaves.iter().enumerate() {
            let clusters = l.clusters();
            if clusters.len() >= 2 {
                if l.perms.len() > self.cfg.split_cap {
                    return Err(ConfinedError::CapExceeded { size: l.perms.len(), cap: self.cfg.split_cap });
                }
                let perms: Vec<Perm> = l.perms.iter().cloned().collect();
                let rest: Vec<Process> = clusters[1..].iter().map(cluster_process).collect();
                let demand = demands(&s, &self.usage);
                let pref = preferred_mask(&perms, &[cluster_process(&clusters[0])], &rest, &self.usage, &demand);
                let mut masks: Vec<u64> = (0..(1u64 << perms.len())).collect();
                masks.sort_by_key(|m| ((m ^ pref).count_ones(), *m));
                // Split the first cluster from the rest.
                let grouped = vec![clusters[0].clone(), (clusters[1..].iter().flat_map(|c| c.0.clone()).collect(), clusters[1..].iter().flat_map(|c| c.1.clone()).collect())];
                return Ok(Expand::Branch(Frame { node, leaf: i, clusters: grouped, masks, next: 0 }));
            }
        }
        // No splits left: garbage-collect and check safe stability.
        while let Some(st) = self.cleanup(&self.nodes[node].sys) {
            node = self.push(st.result, Some(node), Some(st.rule), st.redex)?;
        }
        if is_safely_stable_canon(&self.nodes[node].sys, self.defs, self.cfg.split_cap)? {
            Ok(Expand::Terminal(node))
        } else {
            if let Some(v) = violation_canon(&self.nodes[node].sys) {
                self.note_violation(node, v);
            }
            Ok(Expand::Dead)
        }
    }

    /// Depth-first search; `on_terminal` returns true to stop.
    fn run(&mut self, root: CanonSystem, mut on_terminal: impl FnMut(&mut Self, usize) -> bool) -> Result<bool, ConfinedError> {
        let r = self.push(root, None, None, vec![])?;
        let mut stack: Vec<Frame> = Vec::new();
        let mut pending = Some(r);
        loop {
            if let Some(n) = pending.take() {
                match self.expand(n)? {
                    Expand::Dead => {}
                    Expand::Terminal(t) => {
                        if on_terminal(self, t) {
                            return Ok(true);
                        }
                    }
                    Expand::Branch(f) => stack.push(f),
                }
            }
            let Some(top) = stack.last_mut() else { return Ok(false) };
            if top.next >= top.masks.len() {
                stack.pop();
                continue;
            }
            let mask = top.masks[top.next];
            top.next += 1;
            let (node, leaf) = (top.node, top.leaf);
            let st = cspl(&self.nodes[node].sys, leaf, 1, mask, &top.clusters);
            pending = Some(self.push(st.result, Some(node), Some(SysRule::CSpl), st.redex)?);
        }
    }

    fn narrative(&self, t: usize) -> Narrative {
        let mut path = Vec::new();
        let mut cur = Some(t);
        while let Some(i) = cur {
            path.push(i);
            cur = self.nodes[i].parent;
        }
        path.reverse();
        let trace = path[1..]
            .iter()
            .map(|&i| TraceStep {
                rule: self.nodes[i].rule.expect("non-root node has a rule"),
                redex: self.nodes[i].redex.clone(),
                system: self.nodes[i].sys.clone(),
            })
            .collect();
        Narrative { initial: self.nodes[path[0]].sys.clone(), result: self.nodes[t].sys.clone(), trace }
    }
}

fn new_search<'a>(defs: &'a DefTable, cfg: SysConfig) -> Search<'a> {
    Search { defs, cfg, usage: Usage::new(defs), nodes: Vec::new(), visited: HashSet::new(), deepest: None }
}

/// Searches for a safe evaluation whose safely stable result satisfies `accept`.
pub fn evaluate_safe_where(
    s: &System,
    defs: &DefTable,
    cfg: SysConfig,
    accept: impl Fn(&CanonSystem) -> bool,
) -> Result<SafeEval, ConfinedError> {
    let mut search = new_search(defs, cfg);
    let mut found = None;
    search.run(canon_system(s), |se, t| {
        if accept(&se.nodes[t].sys) {
            found = Some(se.narrative(t));
            true
        } else {
            false
        }
    })?;
    Ok(match found {
        Some(n) => SafeEval::Found(n),
        None => SafeEval::NoNarrative { deepest_violation: search.deepest.map(|(_, s, v)| (s, v)) },
    })
}

/// Safe evaluation: a reduction sequence to a safely stable system.
pub fn evaluate_safe(s: &System, defs: &DefTable, cfg: SysConfig) -> Result<SafeEval, ConfinedError> {
    evaluate_safe_where(s, defs, cfg, |_| true)
}

/// Every safely stable system reachable by the search (up to equivalence).
pub fn safe_outcomes(s: &System, defs: &DefTable, cfg: SysConfig) -> Result<BTreeSet<CanonSystem>, ConfinedError> {
    let mut search = new_search(defs, cfg);
    let mut out = BTreeSet::new();
    search.run(canon_system(s), |se, t| {
        out.insert(se.nodes[t].sys.clone());
        false
    })?;
    Ok(out)
}

/// On success, the canonical erased result, which is then the unique
/// evaluation of the erased process.
pub fn certify_deterministic(s: &System, defs: &DefTable, cfg: SysConfig) -> Result<Option<CanonProcess>, ConfinedError> {
    Ok(match evaluate_safe(s, defs, cfg)? {
        SafeEval::Found(n) => Some(canon(&erase(&n.result.to_system()))),
        SafeEval::NoNarrative { .. } => None,
    })
}

/// Explored fragment of the full confined reduction graph.
#[derive(Clone, Debug, Default)]
pub struct SysGraph {
    pub nodes: Vec<CanonSystem>,
    pub edges: Vec<Option<Vec<(SysRule, usize)>>>,
    pub truncated: bool,
}

impl SysGraph {
    pub fn has_cycle(&self) -> bool {
        let n = self.nodes.len();
        let mut color = vec![0u8; n];
        for root in 0..n {
            if color[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            color[root] = 1;
            while let Some(&mut (v, ref mut k)) = stack.last_mut() {
                let succ = self.edges[v].as_deref().unwrap_or(&[]);
                if *k < succ.len() {
                    let w = succ[*k].1;
                    *k += 1;
                    match color[w] {
                        0 => {
                            color[w] = 1;
                            stack.push((w, 0));
                        }
                        1 => return true,
                        _ => {}
                    }
                } else {
                    color[v] = 2;
                    stack.pop();
                }
            }
        }
        false
    }
}

/// Breadth-first exploration of every confined reduction.
pub fn sys_explore(s: &System, defs: &DefTable, cfg: SysConfig) -> Result<SysGraph, ConfinedError> {
    let mut g = SysGraph::default();
    let mut index: std::collections::HashMap<CanonSystem, usize> = Default::default();
    let root = canon_system(s);
    index.insert(root.clone(), 0);
    g.nodes.push(root);
    g.edges.push(None);
    let mut q = std::collections::VecDeque::from([0usize]);
    let mut expanded = 0;
    while let Some(v) = q.pop_front() {
        if expanded >= cfg.budget {
            g.truncated = true;
            break;
        }
        expanded += 1;
        let mut ids = Vec::new();
        for st in sys_step_canon(&g.nodes[v], defs, cfg.split_cap)? {
            let id = match index.get(&st.result) {
                Some(&id) => id,
                None => {
                    let id = g.nodes.len();
                    index.insert(st.result.clone(), id);
                    g.nodes.push(st.result);
                    g.edges.push(None);
                    q.push_back(id);
                    id
                }
            };
            ids.push((st.rule, id));
        }
        g.edges[v] = Some(ids);
    }
    Ok(g)
}

/// Renames a canonical system's hoisted names back to readable ones.
pub fn binder_names(s: &CanonSystem) -> Vec<Name> {
    (0..s.binders.len()).map(chan_level).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::Expr;

    fn out(c: &str, vs: &[i64]) -> Process {
        Process::out(c, vs.iter().map(|v| Expr::Lit(*v)).collect())
    }

    fn ps(items: &[Perm]) -> PermSet {
        items.iter().cloned().collect()
    }

    #[test]
    fn owned_examples() {
        let s = System::new_chan(
            "c",
            System::leaf(ps(&[Perm::input("c"), Perm::output("c"), Perm::output("d")]), Process::Nil),
        );
        assert_eq!(owned_perms(&s), ps(&[Perm::output("d")]));
        assert!(owned_perms(&System::unit()).is_empty());
    }

    #[test]
    fn separation() {
        let a = System::leaf(ps(&[Perm::input("c1")]), Process::Nil);
        let b = System::leaf(ps(&[Perm::output("c1")]), Process::Nil);
        assert!(separate(&a, &b));
        assert!(separate(&a, &System::unit()));
        assert!(System::par(a.clone(), a.clone()).is_err());
    }

    #[test]
    fn violations() {
        assert!(has_violation(&System::leaf(PermSet::new(), out("c1", &[2]))).is_some());
        assert!(has_violation(&System::leaf(ps(&[Perm::output("c")]), out("c", &[1]))).is_none());
        let composite = System::leaf(ps(&[Perm::output("c")]), Process::par(out("c", &[1]), out("d", &[2])));
        assert!(has_violation(&composite).is_none());
    }

    #[test]
    fn quaseq_examples() {
        let p = out("c", &[1]);
        let a = System::leaf(ps(&[Perm::output("c")]), p.clone());
        let b = System::leaf(PermSet::new(), p.clone());
        assert!(quaseq(&a, &b));
        let q = out("d", &[1]);
        let joined = System::leaf(ps(&[Perm::output("c"), Perm::output("d")]), Process::par(p.clone(), q.clone()));
        let split = System::par_unchecked(
            System::leaf(ps(&[Perm::output("c")]), p),
            System::leaf(ps(&[Perm::output("d")]), q),
        );
        assert!(!quaseq(&joined, &split));
        assert!(quaseq(&split, &split));
    }

    #[test]
    fn split_count() {
        let s = System::leaf(ps(&[Perm::output("a"), Perm::output("b")]), Process::par(out("a", &[1]), out("b", &[1])));
        let steps = sys_step_canon(&canon_system(&s), &DefTable::empty(), 14).unwrap();
        assert_eq!(steps.iter().filter(|s| s.rule == SysRule::CSpl).count(), 4);
    }

    #[test]
    fn ccom_needs_receiver_permission() {
        let s = System::par_unchecked(
            System::leaf(ps(&[Perm::output("c")]), out("c", &[1])),
            System::leaf(PermSet::new(), Process::inp("c", &["x"], Process::Nil)),
        );
        let steps = sys_step_canon(&canon_system(&s), &DefTable::empty(), 14).unwrap();
        assert!(steps.iter().all(|s| s.rule != SysRule::CCom));
    }

    #[test]
    fn stability_examples() {
        let comm = System::par_unchecked(
            System::leaf(ps(&[Perm::output("c")]), out("c", &[1])),
            System::leaf(ps(&[Perm::input("c")]), Process::inp("c", &["x"], Process::Nil)),
        );
        assert!(!is_safely_stable(&comm, &DefTable::empty()).unwrap());
        let bad = System::leaf(PermSet::new(), out("d", &[1]));
        assert!(!is_safely_stable(&bad, &DefTable::empty()).unwrap());
        let ok = System::leaf(ps(&[Perm::output("d")]), out("d", &[1]));
        assert!(is_safely_stable(&ok, &DefTable::empty()).unwrap());
    }

    #[test]
    fn unit_certifies_nil_and_bare_output_fails() {
        let r = certify_deterministic(&System::unit(), &DefTable::empty(), SysConfig::default()).unwrap();
        assert_eq!(r, Some(CanonProcess::nil()));
        let bad = System::leaf(PermSet::new(), out("c", &[1]));
        match evaluate_safe(&bad, &DefTable::empty(), SysConfig::default()).unwrap() {
            SafeEval::NoNarrative { deepest_violation } => assert!(deepest_violation.is_some()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn erase_is_homomorphic() {
        let s = System::new_chan(
            "c",
            System::par_unchecked(
                System::leaf(ps(&[Perm::output("c")]), out("c", &[1])),
                System::leaf(PermSet::new(), out("d", &[2])),
            ),
        );
        assert_eq!(erase(&s), Process::new_chan("c", Process::par(out("c", &[1]), out("d", &[2]))));
    }

    #[test]
    fn tighten_counterexample_has_no_diamond() {
        // new c.(<d!,c!>d!1 || <d?>d?(x).c!(x) || <c?>c?(y).0)
        let s = System::new_chan(
            "c",
            System::par_all_unchecked(vec![
                System::leaf(ps(&[Perm::output("d"), Perm::output("c")]), out("d", &[1])),
                System::leaf(ps(&[Perm::input("d")]), Process::inp("d", &["x"], Process::out("c", vec![Expr::var("x")]))),
                System::leaf(ps(&[Perm::input("c")]), Process::inp("c", &["y"], Process::Nil)),
            ]),
        );
        let defs = DefTable::empty();
        let steps = sys_step_canon(&canon_system(&s), &defs, 14).unwrap();
        let t1 = steps.iter().find(|s| s.rule == SysRule::CTgh).unwrap().result.clone();
        let t2 = steps.iter().find(|s| s.rule == SysRule::CCom).unwrap().result.clone();
        let n1: BTreeSet<_> = sys_step_canon(&t1, &defs, 14).unwrap().into_iter().map(|s| s.result).collect();
        let n2: BTreeSet<_> = sys_step_canon(&t2, &defs, 14).unwrap().into_iter().map(|s| s.result).collect();
        assert!(n1.is_disjoint(&n2));
        assert!(!quaseq_canon(&t1, &t2));
        // The search still finds the safe evaluation.
        assert!(matches!(evaluate_safe(&s, &defs, SysConfig::default()).unwrap(), SafeEval::Found(_)));
    }
}
