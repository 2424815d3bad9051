//! Permission environments, separation-logic formulas and satisfaction.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::confined::{
    both, canon_system, perm_names, safe_outcomes, CanonSystem, ConfinedError, Perm, PermSet, Polarity, SysConfig,
    System,
};
use crate::syntax::{eval_exprs, DefTable, Expr, Name, Process, Subst, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("environment maps `{0}` to a set containing `{0}?`")]
    InputInOwnSet(Name),
    #[error("environment maps `{0}` to a set lacking `{0}!`")]
    MissingOutput(Name),
    #[error("permission set of `{chan}` mentions `{name}`, which is outside the domain")]
    NotClosed { chan: Name, name: Name },
}

/// Finite map from channels to the permissions guarded by them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PermEnv {
    map: BTreeMap<Name, PermSet>,
}

pub fn env_check(map: &BTreeMap<Name, PermSet>) -> Result<(), EnvError> {
    for (c, e) in map {
        if e.contains(&Perm::of(c, Polarity::In)) {
            return Err(EnvError::InputInOwnSet(c.clone()));
        }
        if !e.contains(&Perm::of(c, Polarity::Out)) {
            return Err(EnvError::MissingOutput(c.clone()));
        }
        if let Some(n) = perm_names(e).into_iter().find(|n| !map.contains_key(n)) {
            return Err(EnvError::NotClosed { chan: c.clone(), name: n });
        }
    }
    Ok(())
}

pub fn env_wellformed(map: &BTreeMap<Name, PermSet>) -> bool {
    env_check(map).is_ok()
}

impl PermEnv {
    pub fn new(map: BTreeMap<Name, PermSet>) -> Result<PermEnv, EnvError> {
        env_check(&map)?;
        Ok(PermEnv { map })
    }

    pub fn empty() -> PermEnv {
        PermEnv::default()
    }

    pub fn get(&self, c: &Name) -> Option<&PermSet> {
        self.map.get(c)
    }

    pub fn contains(&self, c: &Name) -> bool {
        self.map.contains_key(c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Name, &PermSet)> {
        self.map.iter()
    }

    pub fn map(&self) -> &BTreeMap<Name, PermSet> {
        &self.map
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Every name mentioned, in the domain or in a permission set.
    pub fn names(&self) -> BTreeSet<Name> {
        let mut s: BTreeSet<Name> = self.map.keys().cloned().collect();
        for e in self.map.values() {
            s.extend(perm_names(e));
        }
        s
    }

    /// Extends (or overrides) one entry.
    pub fn with(&self, c: &Name, e: PermSet) -> Result<PermEnv, EnvError> {
        let mut map = self.map.clone();
        map.insert(c.clone(), e);
        PermEnv::new(map)
    }

    /// Drops `c` from the domain and `{c?, c!}` from every codomain set.
    pub fn restrict(&self, c: &Name) -> PermEnv {
        let cp = both(c);
        PermEnv {
            map: self
                .map
                .iter()
                .filter(|(d, _)| *d != c)
                .map(|(d, e)| (d.clone(), e.difference(&cp).cloned().collect()))
                .collect(),
        }
    }

    pub fn restrict_all(&self, cs: &[Name]) -> PermEnv {
        cs.iter().fold(self.clone(), |g, c| g.restrict(c))
    }

    /// Renames `c` to `d` in the domain and inside every permission set.
    pub fn rename(&self, c: &Name, d: &Name) -> PermEnv {
        let r = |n: &Name| if n == c { d.clone() } else { n.clone() };
        PermEnv {
            map: self
                .map
                .iter()
                .map(|(k, e)| (r(k), e.iter().map(|p| Perm { chan: r(&p.chan), pol: p.pol }).collect()))
                .collect(),
        }
    }
}

/// Separation-logic formulas.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Emp,
    Any,
    State(Name, Vec<Expr>),
    Blk(Name),
    Sep(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn state(c: &str, es: Vec<Expr>) -> Formula {
        Formula::State(Name::new(c), es)
    }

    pub fn blk(c: &str) -> Formula {
        Formula::Blk(Name::new(c))
    }

    pub fn sep(a: Formula, b: Formula) -> Formula {
        Formula::Sep(Box::new(a), Box::new(b))
    }

    /// Right-nested conjunction; `emp` when empty.
    pub fn sep_all(items: Vec<Formula>) -> Formula {
        let mut it = items.into_iter().rev();
        match it.next() {
            None => Formula::Emp,
            Some(last) => it.fold(last, |acc, f| Formula::sep(f, acc)),
        }
    }

    pub fn is_state_formula(&self) -> bool {
        match self {
            Formula::Emp | Formula::State(..) => true,
            Formula::Sep(a, b) => a.is_state_formula() && b.is_state_formula(),
            Formula::Any | Formula::Blk(_) => false,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::State(_, es) = f {
                for e in es {
                    e.free_vars_into(&mut out);
                }
            }
        });
        out
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    pub fn chans(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| match f {
            Formula::State(c, _) | Formula::Blk(c) => {
                out.insert(c.clone());
            }
            _ => {}
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Formula)) {
        f(self);
        if let Formula::Sep(a, b) = self {
            a.visit(f);
            b.visit(f);
        }
    }

    pub fn subst(&self, s: &Subst) -> Formula {
        match self {
            Formula::State(c, es) => Formula::State(c.clone(), es.iter().map(|e| e.subst(s)).collect()),
            Formula::Sep(a, b) => Formula::sep(a.subst(s), b.subst(s)),
            other => other.clone(),
        }
    }

    pub fn rename_chan(&self, c: &Name, d: &Name) -> Formula {
        let r = |n: &Name| if n == c { d.clone() } else { n.clone() };
        match self {
            Formula::State(n, es) => Formula::State(r(n), es.clone()),
            Formula::Blk(n) => Formula::Blk(r(n)),
            Formula::Sep(a, b) => Formula::sep(a.rename_chan(c, d), b.rename_chan(c, d)),
            other => other.clone(),
        }
    }

    /// Non-`emp` atoms of the conjunction, in order.
    pub fn atoms(&self) -> Vec<Formula> {
        let mut out = Vec::new();
        self.visit(&mut |f| match f {
            Formula::Emp | Formula::Sep(..) => {}
            atom => out.push(atom.clone()),
        });
        out
    }

    /// Normal form modulo associativity, commutativity and unit of `*`.
    pub fn ac_normal(&self) -> Vec<Formula> {
        let mut a = self.atoms();
        a.sort();
        a
    }

    pub fn ac_eq(&self, other: &Formula) -> bool {
        self.ac_normal() == other.ac_normal()
    }

    pub fn fold_values(&self) -> Formula {
        match self {
            Formula::State(c, es) => Formula::State(c.clone(), es.iter().map(Expr::fold).collect()),
            Formula::Sep(a, b) => Formula::sep(a.fold_values(), b.fold_values()),
            other => other.clone(),
        }
    }
}

/// Output permissions a satisfying system may offer; undefined under `any`.
pub fn edges(f: &Formula) -> Option<PermSet> {
    match f {
        Formula::Emp | Formula::Blk(_) => Some(PermSet::new()),
        Formula::State(c, _) => Some(PermSet::from([Perm::of(c, Polarity::Out)])),
        Formula::Sep(a, b) => {
            let mut x = edges(a)?;
            x.extend(edges(b)?);
            Some(x)
        }
        Formula::Any => None,
    }
}

/// Output permissions that would unblock a satisfying system.
pub fn triggers(f: &Formula) -> Option<PermSet> {
    match f {
        Formula::Emp | Formula::State(..) => Some(PermSet::new()),
        Formula::Blk(c) => Some(PermSet::from([Perm::of(c, Polarity::Out)])),
        Formula::Sep(a, b) => {
            let mut x = triggers(a)?;
            x.extend(triggers(b)?);
            Some(x)
        }
        Formula::Any => None,
    }
}

pub fn formulas_separate(f: &Formula, g: &Formula) -> bool {
    match (edges(f), triggers(f), edges(g), triggers(g)) {
        (Some(ef), Some(tf), Some(eg), Some(tg)) => ef.is_disjoint(&tg) && eg.is_disjoint(&tf),
        _ => false,
    }
}

/// Weakens assertions on scoped channels to `any`.
pub fn formula_restrict(f: &Formula, cs: &[Name]) -> Formula {
    match f {
        Formula::State(d, _) | Formula::Blk(d) if !cs.contains(d) => f.clone(),
        Formula::Emp => Formula::Emp,
        Formula::Sep(a, b) => Formula::sep(formula_restrict(a, cs), formula_restrict(b, cs)),
        _ => Formula::Any,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("formula has free variables: {0:?}")]
    OpenFormula(Vec<Name>),
    #[error("system has free variables: {0:?}")]
    OpenSystem(Vec<Name>),
    #[error(transparent)]
    Confined(#[from] ConfinedError),
}

/// Why no safe evaluation satisfies a formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnsatClass {
    /// The system has no safe evaluation at all.
    MissingPermission,
    /// Some safe result fits the formula except for environment obligations.
    EnvObligation,
    /// Some safe result has the right shape but different data.
    DataMismatch,
    /// No safe result has the shape the formula describes.
    ShapeMismatch,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Satisfaction {
    Sat(CanonSystem),
    Unsat(UnsatClass),
    Unknown(String),
}

impl Satisfaction {
    pub fn is_sat(&self) -> bool {
        matches!(self, Satisfaction::Sat(_))
    }
}

#[derive(Clone, Copy)]
struct Mode {
    env: bool,
    data: bool,
}

fn values(es: &[Expr]) -> Option<Vec<Value>> {
    eval_exprs(es, &Subst::new()).ok()
}

fn half(s: &CanonSystem, pick: impl Fn(usize) -> bool) -> CanonSystem {
    let leaves = s
        .leaves
        .iter()
        .enumerate()
        .filter(|(i, _)| pick(*i))
        .map(|(_, l)| System::Leaf(l.perms.clone(), l.body.to_process()))
        .collect();
    canon_system(&System::new_all(&s.binders, System::par_all_unchecked(leaves)))
}

/// Satisfaction on a safely stable canonical system.
fn sat_stable(env: &PermEnv, t: &CanonSystem, f: &Formula, m: Mode) -> bool {
    match f {
        Formula::Emp => t.leaves.is_empty(),
        Formula::Any => true,
        Formula::State(c, es) => {
            let [leaf] = t.leaves.as_slice() else { return false };
            let Some(Process::Out(d, es2)) = leaf.single_atom() else { return false };
            if d != c {
                return false;
            }
            if m.data && (values(es).is_none() || values(es) != values(es2)) {
                return false;
            }
            if m.data && es.len() != es2.len() {
                return false;
            }
            !m.env || env.get(c).is_some_and(|g| g.is_subset(&leaf.perms))
        }
        Formula::Blk(c) => {
            let [leaf] = t.leaves.as_slice() else { return false };
            matches!(leaf.single_atom(), Some(Process::In(d, _, _)) if d == c && !t.binders.contains(c))
                && (!m.env || env.contains(c))
        }
        Formula::Sep(a, b) => {
            let n = t.leaves.len();
            if n > 20 {
                return false;
            }
            (0..(1u64 << n)).any(|mask| {
                let l = half(t, |i| mask >> i & 1 == 1);
                let r = half(t, |i| mask >> i & 1 == 0);
                sat_stable(env, &l, a, m) && sat_stable(env, &r, b, m)
            })
        }
    }
}

/// Satisfaction of a closed formula by a closed system.
pub fn satisfies(env: &PermEnv, s: &System, f: &Formula, defs: &DefTable, cfg: SysConfig) -> Result<Satisfaction, LogicError> {
    let fv = f.free_vars();
    if !fv.is_empty() {
        return Err(LogicError::OpenFormula(fv.into_iter().collect()));
    }
    let sv = s.free_vars();
    if !sv.is_empty() {
        return Err(LogicError::OpenSystem(sv.into_iter().collect()));
    }
    let outcomes = match safe_outcomes(s, defs, cfg) {
        Ok(o) => o,
        Err(ConfinedError::BudgetExhausted(n)) => return Ok(Satisfaction::Unknown(format!("budget exhausted after {n} states"))),
        Err(e) => return Err(e.into()),
    };
    if outcomes.is_empty() {
        return Ok(Satisfaction::Unsat(UnsatClass::MissingPermission));
    }
    let full = Mode { env: true, data: true };
    if let Some(t) = outcomes.iter().find(|t| sat_stable(env, t, f, full)) {
        return Ok(Satisfaction::Sat(t.clone()));
    }
    let class = if outcomes.iter().any(|t| sat_stable(env, t, f, Mode { env: false, data: true })) {
        UnsatClass::EnvObligation
    } else if outcomes.iter().any(|t| sat_stable(env, t, f, Mode { env: false, data: false })) {
        UnsatClass::DataMismatch
    } else {
        UnsatClass::ShapeMismatch
    };
    Ok(Satisfaction::Unsat(class))
}

/// Size bound for brute-force candidate enumeration.
#[derive(Clone, Copy, Debug)]
pub struct BruteBound {
    pub max_atoms: usize,
    /// Keep only candidates where every channel carries one arity.
    pub well_sorted: bool,
}

#[derive(Clone, Debug)]
pub enum ImpliesVerdict {
    BoundedValid { checked: usize },
    Counterexample { env: PermEnv, system: System },
    Unknown(String),
}

/// Candidate systems built from the channels and data of the given formulas:
/// up to `max_atoms` leaves, each a single output or blocked input, with
/// every separate assignment of own-polarity permissions.
pub fn candidate_systems(formulas: &[&Formula], bound: BruteBound) -> Vec<System> {
    let mut atoms: BTreeSet<Process> = BTreeSet::new();
    for f in formulas {
        for a in f.atoms() {
            match a {
                Formula::State(c, es) => {
                    if let Some(vs) = values(&es) {
                        atoms.insert(Process::Out(c.clone(), vs.into_iter().map(Expr::Lit).collect()));
                    }
                    atoms.insert(Process::In(c.clone(), (0..es.len()).map(|i| Name::from(format!("x{i}"))).collect(), std::sync::Arc::new(Process::Nil)));
                }
                Formula::Blk(c) => {
                    for k in 0..2 {
                        let xs = (0..k).map(|i| Name::from(format!("x{i}"))).collect();
                        atoms.insert(Process::In(c.clone(), xs, std::sync::Arc::new(Process::Nil)));
                    }
                }
                _ => {}
            }
        }
    }
    let atoms: Vec<Process> = atoms.into_iter().collect();
    let own = |p: &Process| match p {
        Process::Out(c, _) => Some(Perm::of(c, Polarity::Out)),
        Process::In(c, _, _) => Some(Perm::of(c, Polarity::In)),
        _ => None,
    };
    let mut out = vec![System::unit()];
    // Multisets of atoms of size 1..=max_atoms.
    fn multisets(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == k {
            return;
        }
        for i in start..n {
            cur.push(i);
            multisets(n, k, i, cur, out);
            cur.pop();
        }
    }
    let arity = |p: &Process| match p {
        Process::Out(c, es) => (c.clone(), es.len()),
        Process::In(c, xs, _) => (c.clone(), xs.len()),
        _ => unreachable!("candidate atoms are prefixes"),
    };
    let mut sets = Vec::new();
    multisets(atoms.len(), bound.max_atoms, 0, &mut Vec::new(), &mut sets);
    for set in sets {
        if bound.well_sorted {
            let mut sorts = BTreeMap::new();
            if set.iter().map(|&i| arity(&atoms[i])).any(|(c, n)| *sorts.entry(c).or_insert(n) != n) {
                continue;
            }
        }
        for mask in 0..(1u32 << set.len()) {
            let mut taken = PermSet::new();
            let mut leaves = Vec::new();
            let mut ok = true;
            for (k, &i) in set.iter().enumerate() {
                let mut e = PermSet::new();
                if mask >> k & 1 == 1 {
                    let p = own(&atoms[i]).unwrap();
                    if !taken.insert(p.clone()) {
                        ok = false;
                        break;
                    }
                    e.insert(p);
                }
                leaves.push(System::Leaf(e, atoms[i].clone()));
            }
            if ok {
                out.push(System::par_all_unchecked(leaves));
            }
        }
    }
    out
}

/// Minimal environment over the formulas' channels: each `c` guards `{c!}`.
pub fn minimal_env(formulas: &[&Formula]) -> PermEnv {
    let mut map = BTreeMap::new();
    for f in formulas {
        for c in f.chans() {
            map.insert(c.clone(), PermSet::from([Perm::of(&c, Polarity::Out)]));
        }
    }
    PermEnv::new(map).expect("minimal environments are well formed")
}

/// A candidate system satisfying `f` under the minimal environment, if any.
pub fn find_model(f: &Formula, bound: BruteBound, defs: &DefTable, cfg: SysConfig) -> Result<ModelSearch, LogicError> {
    let env = minimal_env(&[f]);
    let mut checked = 0;
    for s in candidate_systems(&[f], bound) {
        match satisfies(&env, &s, f, defs, cfg)? {
            Satisfaction::Sat(_) => return Ok(ModelSearch::Model { env, system: s }),
            Satisfaction::Unknown(why) => return Ok(ModelSearch::Unknown(why)),
            Satisfaction::Unsat(_) => checked += 1,
        }
    }
    Ok(ModelSearch::NoModel { checked })
}

#[derive(Clone, Debug)]
pub enum ModelSearch {
    NoModel { checked: usize },
    Model { env: PermEnv, system: System },
    Unknown(String),
}

/// Bounded check of `f ⊨ g` over candidate systems and the minimal environment.
pub fn semantic_implies_bruteforce(f: &Formula, g: &Formula, bound: BruteBound, defs: &DefTable, cfg: SysConfig) -> Result<ImpliesVerdict, LogicError> {
    let env = minimal_env(&[f, g]);
    let mut checked = 0;
    for s in candidate_systems(&[f, g], bound) {
        let a = satisfies(&env, &s, f, defs, cfg)?;
        if let Satisfaction::Unknown(why) = a {
            return Ok(ImpliesVerdict::Unknown(why));
        }
        if a.is_sat() {
            match satisfies(&env, &s, g, defs, cfg)? {
                Satisfaction::Sat(_) => {}
                Satisfaction::Unknown(why) => return Ok(ImpliesVerdict::Unknown(why)),
                Satisfaction::Unsat(_) => return Ok(ImpliesVerdict::Counterexample { env, system: s }),
            }
        }
        checked += 1;
    }
    Ok(ImpliesVerdict::BoundedValid { checked })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(items: &[Perm]) -> PermSet {
        items.iter().cloned().collect()
    }

    fn gamma() -> PermEnv {
        PermEnv::new(BTreeMap::from([
            (Name::new("c1"), ps(&[Perm::output("c1")])),
            (Name::new("c2"), ps(&[Perm::output("c2")])),
            (Name::new("c4"), ps(&[Perm::output("c4"), Perm::input("c1")])),
        ]))
        .unwrap()
    }

    #[test]
    fn env_wellformedness() {
        assert!(env_wellformed(gamma().map()));
        assert!(!env_wellformed(&BTreeMap::from([(Name::new("c"), ps(&[Perm::input("c"), Perm::output("c")]))])));
        assert!(!env_wellformed(&BTreeMap::from([(Name::new("c"), ps(&[Perm::output("c"), Perm::output("d")]))])));
    }

    #[test]
    fn env_restriction() {
        let g = PermEnv::new(BTreeMap::from([
            (Name::new("c"), ps(&[Perm::output("c")])),
            (Name::new("d"), ps(&[Perm::output("d"), Perm::input("c")])),
        ]))
        .unwrap();
        let r = g.restrict(&Name::new("c"));
        assert_eq!(r.map(), &BTreeMap::from([(Name::new("d"), ps(&[Perm::output("d")]))]));
        assert!(env_wellformed(r.map()));
        assert_eq!(gamma().restrict(&Name::new("zz")), gamma());
    }

    #[test]
    fn edges_and_triggers() {
        let s = Formula::state("c", vec![Expr::lit(1)]);
        assert_eq!(edges(&s), Some(ps(&[Perm::output("c")])));
        assert_eq!(triggers(&s), Some(PermSet::new()));
        assert_eq!(triggers(&Formula::blk("c")), Some(ps(&[Perm::output("c")])));
        assert_eq!(edges(&Formula::blk("c")), Some(PermSet::new()));
        assert_eq!(edges(&Formula::Any), None);
        assert!(formulas_separate(&Formula::state("c4", vec![Expr::var("x")]), &Formula::blk("c3")));
        assert!(!formulas_separate(&s, &Formula::blk("c")));
        assert!(!formulas_separate(&Formula::Any, &Formula::Emp));
    }

    #[test]
    fn restriction_of_formulas() {
        let f = Formula::sep(Formula::state("c4", vec![Expr::var("x")]), Formula::blk("c3"));
        assert_eq!(
            formula_restrict(&f, &[Name::new("c3")]),
            Formula::sep(Formula::state("c4", vec![Expr::var("x")]), Formula::Any)
        );
        assert_eq!(formula_restrict(&Formula::Emp, &[Name::new("c")]), Formula::Emp);
    }

    #[test]
    fn ac_equivalence() {
        let a = Formula::state("a", vec![]);
        let b = Formula::blk("b");
        let c = Formula::Any;
        assert!(Formula::sep(Formula::Emp, a.clone()).ac_eq(&a));
        assert!(Formula::sep(a.clone(), Formula::sep(b.clone(), c.clone()))
            .ac_eq(&Formula::sep(Formula::sep(a.clone(), b.clone()), c.clone())));
        assert!(Formula::sep(a.clone(), b.clone()).ac_eq(&Formula::sep(b, a)));
    }

    #[test]
    fn emp_and_unit() {
        let r = satisfies(&PermEnv::empty(), &System::unit(), &Formula::Emp, &DefTable::empty(), SysConfig::default()).unwrap();
        assert!(r.is_sat());
    }

    #[test]
    fn data_mismatch_is_classified() {
        let s = System::par_unchecked(
            System::leaf(ps(&[Perm::output("c1")]), Process::out("c1", vec![Expr::lit(2), Expr::lit(3)])),
            System::leaf(ps(&[Perm::output("c4"), Perm::input("c1")]), Process::out("c4", vec![])),
        );
        let f = Formula::sep(Formula::state("c1", vec![Expr::lit(2), Expr::lit(4)]), Formula::state("c4", vec![]));
        let r = satisfies(&gamma(), &s, &f, &DefTable::empty(), SysConfig::default()).unwrap();
        assert_eq!(r, Satisfaction::Unsat(UnsatClass::DataMismatch));
    }
}
