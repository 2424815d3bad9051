//! Sequents, proof trees and a rule-by-rule proof checker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::confined::{
    canon_system, local_results, separate, split_results, well_resourced, CanonSystem, Perm, PermSet, Polarity,
    SysConfig, System,
};
use crate::logic::{formula_restrict, formulas_separate, satisfies, Formula, LogicError, PermEnv, Satisfaction};
use crate::syntax::{fresh_name, subst_of, BoolExpr, DefTable, Expr, Name, Process, Subst, Value};

/// A sequent `Γ; b ⊢ {φ} S {ψ}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequent {
    pub env: PermEnv,
    pub cond: BoolExpr,
    pub pre: Formula,
    pub sys: System,
    pub post: Formula,
}

impl Sequent {
    pub fn new(env: PermEnv, cond: BoolExpr, pre: Formula, sys: System, post: Formula) -> Sequent {
        Sequent { env, cond, pre, sys, post }
    }

    fn with(&self, cond: Option<BoolExpr>, pre: Option<Formula>, sys: Option<System>, post: Option<Formula>) -> Sequent {
        Sequent {
            env: self.env.clone(),
            cond: cond.unwrap_or_else(|| self.cond.clone()),
            pre: pre.unwrap_or_else(|| self.pre.clone()),
            sys: sys.unwrap_or_else(|| self.sys.clone()),
            post: post.unwrap_or_else(|| self.post.clone()),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut v = self.cond.free_vars();
        v.extend(self.pre.free_vars());
        v.extend(self.post.free_vars());
        v.extend(self.sys.free_vars());
        v
    }

    /// Equality up to system ≡, formula AC and constant folding.
    pub fn equivalent(&self, other: &Sequent) -> bool {
        self.env == other.env
            && self.cond.fold() == other.cond.fold()
            && f_eq(&self.pre, &other.pre)
            && f_eq(&self.post, &other.post)
            && sys_canon(&self.sys) == sys_canon(&other.sys)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    LNil,
    LFls,
    LBlk,
    LOut,
    LIn,
    LIf,
    LDef,
    LPar,
    LSpl,
    LRes,
    LLcl,
    LInst,
    LSub,
    LImp,
    LRen,
    LCut,
    LSep,
    LSepSt,
    LOutD,
    LInD,
    LFrm,
    LFrmSt,
}

impl Rule {
    pub const ALL: [Rule; 22] = [
        Rule::LNil,
        Rule::LFls,
        Rule::LBlk,
        Rule::LOut,
        Rule::LIn,
        Rule::LIf,
        Rule::LDef,
        Rule::LPar,
        Rule::LSpl,
        Rule::LRes,
        Rule::LLcl,
        Rule::LInst,
        Rule::LSub,
        Rule::LImp,
        Rule::LRen,
        Rule::LCut,
        Rule::LSep,
        Rule::LSepSt,
        Rule::LOutD,
        Rule::LInD,
        Rule::LFrm,
        Rule::LFrmSt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::LNil => "lNil",
            Rule::LFls => "lFls",
            Rule::LBlk => "lBlk",
            Rule::LOut => "lOut",
            Rule::LIn => "lIn",
            Rule::LIf => "lIf",
            Rule::LDef => "lDef",
            Rule::LPar => "lPar",
            Rule::LSpl => "lSpl",
            Rule::LRes => "lRes",
            Rule::LLcl => "lLcl",
            Rule::LInst => "lInst",
            Rule::LSub => "lSub",
            Rule::LImp => "lImp",
            Rule::LRen => "lRen",
            Rule::LCut => "lCut",
            Rule::LSep => "lSep",
            Rule::LSepSt => "lSepSt",
            Rule::LOutD => "lOutD",
            Rule::LInD => "lInD",
            Rule::LFrm => "lFrm",
            Rule::LFrmSt => "lFrmSt",
        }
    }

    pub fn from_name(s: &str) -> Option<Rule> {
        Rule::ALL.iter().copied().find(|r| r.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            Rule::LNil | Rule::LFls | Rule::LBlk | Rule::LOut | Rule::LOutD => 0,
            Rule::LIf | Rule::LPar | Rule::LCut | Rule::LSep | Rule::LSepSt => 2,
            _ => 1,
        }
    }

    pub fn is_derived(self) -> bool {
        matches!(self, Rule::LCut | Rule::LSep | Rule::LSepSt | Rule::LOutD | Rule::LInD | Rule::LFrm | Rule::LFrmSt)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rule-specific witnesses. Fields a rule does not use are ignored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Inst {
    /// Scoped channels for `lRes`.
    pub chans: Vec<Name>,
    /// Variable for `lInst` and `lSub`.
    pub var: Option<Name>,
    /// Expression for `lInst` and `lSub`.
    pub expr: Option<Expr>,
    /// Cut formula for `lPar`; inferred when absent.
    pub cut: Option<Formula>,
    /// Frame formula for `lFrm` and `lFrmSt`; inferred when absent.
    pub frame: Option<Formula>,
    /// Renamed channel for `lRen`.
    pub from: Option<Name>,
    /// Fresh channel for `lRen`.
    pub to: Option<Name>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProofTree {
    pub rule: Rule,
    pub conclusion: Sequent,
    pub inst: Inst,
    pub premises: Vec<ProofTree>,
}

impl ProofTree {
    pub fn new(rule: Rule, conclusion: Sequent, premises: Vec<ProofTree>) -> ProofTree {
        ProofTree { rule, conclusion, inst: Inst::default(), premises }
    }

    pub fn with_inst(mut self, inst: Inst) -> ProofTree {
        self.inst = inst;
        self
    }

    pub fn node(&self, path: &[usize]) -> Option<&ProofTree> {
        match path.split_first() {
            None => Some(self),
            Some((i, rest)) => self.premises.get(*i)?.node(rest),
        }
    }

    pub fn node_mut(&mut self, path: &[usize]) -> Option<&mut ProofTree> {
        match path.split_first() {
            None => Some(self),
            Some((i, rest)) => self.premises.get_mut(*i)?.node_mut(rest),
        }
    }

    /// Paths of every node, parents before children.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for (i, p) in self.premises.iter().enumerate() {
            for mut sub in p.paths() {
                sub.insert(0, i);
                out.push(sub);
            }
        }
        out
    }

    pub fn size(&self) -> usize {
        1 + self.premises.iter().map(ProofTree::size).sum::<usize>()
    }

    pub fn rules_used(&self) -> BTreeSet<Rule> {
        let mut s = BTreeSet::from([self.rule]);
        for p in &self.premises {
            s.extend(p.rules_used());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RuleErrorKind {
    #[error("expected {expected} premises, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("missing instantiation `{0}`")]
    MissingInstantiation(&'static str),
    #[error("permission side condition failed: {0}")]
    PermissionSideConditionFailed(String),
    #[error("cut shape mismatch: {0}")]
    CutShapeMismatch(String),
    #[error("separation check failed: {0}")]
    SeparationCheckFailed(String),
    #[error("systems not structurally equal: {0}")]
    NotStructurallyEqual(String),
    #[error("formula mismatch: {0}")]
    FormulaMismatch(String),
    #[error("environment mismatch: {0}")]
    EnvMismatch(String),
    #[error("boolean condition mismatch: {0}")]
    ConditionMismatch(String),
    #[error("entailment not established: {0}")]
    EntailmentFailed(String),
    #[error("not a state formula: {0}")]
    NotStateFormula(String),
    #[error("freshness violated: {0}")]
    FreshnessViolated(String),
    #[error("conclusion does not have the rule's shape: {0}")]
    ShapeMismatch(String),
    #[error("ill-formed sequent: {0}")]
    IllFormed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("at {} ({rule}): {kind}", path_string(.path))]
pub struct RuleError {
    pub path: Vec<usize>,
    pub rule: Rule,
    pub kind: RuleErrorKind,
}

pub fn path_string(path: &[usize]) -> String {
    let mut s = String::from("root");
    for i in path {
        s.push('.');
        s.push_str(&i.to_string());
    }
    s
}

/// Checker configuration.
#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    /// Per-variable domain bound for brute-force entailment.
    pub bound: i64,
    /// Variable cap for brute-force entailment.
    pub max_vars: usize,
    /// Accept entailments established only by the bounded scan.
    pub accept_bounded: bool,
    pub split_cap: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { bound: 64, max_vars: 6, accept_bounded: false, split_cap: crate::confined::DEFAULT_SPLIT_CAP }
    }
}

// ---------------------------------------------------------------------------
// Boolean entailment

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entailment {
    Valid,
    /// No counterexample within `[-bound, bound]` per variable.
    BoundedValid { bound: i64 },
    Refuted(Subst),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EntailError {
    #[error("{count} variables exceed the cap of {cap}")]
    TooManyVariables { count: usize, cap: usize },
}

/// Linear form `Σ coef·x + k`.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Lin {
    coef: BTreeMap<Name, i64>,
    k: i64,
}

impl Lin {
    fn of(e: &Expr) -> Option<Lin> {
        match e {
            Expr::Lit(v) => Some(Lin { coef: BTreeMap::new(), k: *v }),
            Expr::Var(x) => Some(Lin { coef: BTreeMap::from([(x.clone(), 1)]), k: 0 }),
            Expr::Add(a, b) => Lin::of(a)?.combine(&Lin::of(b)?, 1),
            Expr::Sub(a, b) => Lin::of(a)?.combine(&Lin::of(b)?, -1),
        }
    }

    fn combine(&self, o: &Lin, sign: i64) -> Option<Lin> {
        let mut coef = self.coef.clone();
        for (x, c) in &o.coef {
            let e = coef.entry(x.clone()).or_insert(0);
            *e = e.checked_add(c.checked_mul(sign)?)?;
        }
        coef.retain(|_, c| *c != 0);
        Some(Lin { coef, k: self.k.checked_add(o.k.checked_mul(sign)?)? })
    }

    fn constant(&self) -> Option<i64> {
        self.coef.is_empty().then_some(self.k)
    }
}

/// A literal `lin ≤ 0`.
fn literal(b: &BoolExpr) -> Option<Lin> {
    match b {
        BoolExpr::Leq(a, c) => Lin::of(a)?.combine(&Lin::of(c)?, -1),
        BoolExpr::Not(inner) => match &**inner {
            BoolExpr::Leq(a, c) => Lin::of(c)?.combine(&Lin::of(a)?, -1)?.combine(&Lin { coef: BTreeMap::new(), k: 1 }, 1),
            BoolExpr::Not(x) => literal(x),
            BoolExpr::And(..) => None,
        },
        BoolExpr::And(..) => None,
    }
}

fn conjuncts(b: &BoolExpr, out: &mut Vec<BoolExpr>) {
    match b {
        BoolExpr::And(a, c) => {
            conjuncts(a, out);
            conjuncts(c, out);
        }
        BoolExpr::Not(inner) => match &**inner {
            BoolExpr::Not(x) => conjuncts(x, out),
            _ => out.push(b.clone()),
        },
        _ => out.push(b.clone()),
    }
}

/// Literals of a disjunction, if `b` is one.
fn disjuncts(b: &BoolExpr) -> Option<Vec<Lin>> {
    match b {
        BoolExpr::Not(inner) => match &**inner {
            BoolExpr::And(a, c) => {
                let mut v = disjuncts(&BoolExpr::not((**a).clone()))?;
                v.extend(disjuncts(&BoolExpr::not((**c).clone()))?);
                Some(v)
            }
            BoolExpr::Not(x) => disjuncts(x),
            BoolExpr::Leq(..) => Some(vec![literal(b)?]),
        },
        BoolExpr::Leq(..) => Some(vec![literal(b)?]),
        BoolExpr::And(..) => None,
    }
}

const FM_CAP: usize = 2000;

impl Lin {
    fn scale(&self, m: i64) -> Option<Lin> {
        Lin { coef: BTreeMap::new(), k: 0 }.combine(self, m)
    }

    /// Divides by the coefficient gcd, rounding the constant up (integer tightening).
    fn tighten(mut self) -> Lin {
        let g = self.coef.values().fold(0i64, |g, c| gcd(g, c.unsigned_abs() as i64));
        if g > 1 {
            self.coef.values_mut().for_each(|c| *c /= g);
            self.k = self.k.div_euclid(g) + i64::from(self.k.rem_euclid(g) != 0);
        }
        self
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Fourier–Motzkin refutation of `∧ lits ≤ 0`; `false` means "not shown unsat".
fn fm_unsat(lits: Vec<Lin>) -> bool {
    let mut cur: Vec<Lin> = Vec::new();
    for l in lits {
        let l = l.tighten();
        match l.constant() {
            Some(k) if k > 0 => return true,
            Some(_) => {}
            None if !cur.contains(&l) => cur.push(l),
            None => {}
        }
    }
    loop {
        let vars: BTreeSet<&Name> = cur.iter().flat_map(|l| l.coef.keys()).collect();
        let count = |x: &Name| {
            let p = cur.iter().filter(|l| l.coef.get(x).is_some_and(|c| *c > 0)).count();
            let n = cur.iter().filter(|l| l.coef.get(x).is_some_and(|c| *c < 0)).count();
            p * n
        };
        let Some(x) = vars.into_iter().min_by_key(|x| count(x)).cloned() else { return false };
        let (with, mut next): (Vec<Lin>, Vec<Lin>) = cur.into_iter().partition(|l| l.coef.contains_key(&x));
        let (pos, neg): (Vec<&Lin>, Vec<&Lin>) = with.iter().partition(|l| l.coef[&x] > 0);
        for p in &pos {
            for n in &neg {
                let (a, b) = (p.coef[&x], -n.coef[&x]);
                let Some(l) = p.scale(b).and_then(|p| n.scale(a).and_then(|n| p.combine(&n, 1))) else { return false };
                let l = l.tighten();
                match l.constant() {
                    Some(k) if k > 0 => return true,
                    Some(_) => {}
                    None if !next.contains(&l) => next.push(l),
                    None => {}
                }
                if next.len() > FM_CAP {
                    return false;
                }
            }
        }
        cur = next;
    }
}

fn negate(l: &Lin) -> Option<Lin> {
    l.scale(-1)?.combine(&Lin { coef: BTreeMap::new(), k: 1 }, 1)
}

/// Sound linear-arithmetic check of `b1 ⊨ b2`.
fn linear_valid(b1: &BoolExpr, b2: &BoolExpr) -> bool {
    let mut prem_parts = Vec::new();
    conjuncts(&b1.fold(), &mut prem_parts);
    let prem: Vec<Lin> = prem_parts.iter().filter_map(literal).collect();
    if fm_unsat(prem.clone()) {
        return true;
    }
    let mut goal_parts = Vec::new();
    conjuncts(&b2.fold(), &mut goal_parts);
    goal_parts.iter().all(|g| {
        if prem_parts.contains(g) {
            return true;
        }
        let Some(lits) = disjuncts(g) else { return false };
        let Some(negs) = lits.iter().map(negate).collect::<Option<Vec<_>>>() else { return false };
        fm_unsat(prem.iter().cloned().chain(negs).collect())
    })
}

const SCAN_POINTS: u64 = 2_000_000;

/// `b1 ⊨ b2` over the integers.
pub fn bool_entails(b1: &BoolExpr, b2: &BoolExpr, bound: i64, max_vars: usize) -> Result<Entailment, EntailError> {
    if linear_valid(b1, b2) {
        return Ok(Entailment::Valid);
    }
    let mut vars: BTreeSet<Name> = b1.free_vars();
    vars.extend(b2.free_vars());
    let vars: Vec<Name> = vars.into_iter().collect();
    let n = vars.len();
    if n > max_vars {
        return Err(EntailError::TooManyVariables { count: n, cap: max_vars });
    }
    let mut b = bound.max(0);
    while b > 0 && (2 * b as u64 + 1).checked_pow(n as u32).is_none_or(|p| p > SCAN_POINTS) {
        b -= 1;
    }
    let mut point = vec![-b; n];
    loop {
        let sigma: Subst = vars.iter().cloned().zip(point.iter().map(|v| Expr::Lit(*v))).collect();
        if b1.eval(&sigma) == Ok(true) && b2.eval(&sigma) != Ok(true) {
            return Ok(Entailment::Refuted(sigma));
        }
        let mut i = 0;
        loop {
            if i == n {
                return Ok(if n == 0 { Entailment::Valid } else { Entailment::BoundedValid { bound: b } });
            }
            if point[i] < b {
                point[i] += 1;
                break;
            }
            point[i] = -b;
            i += 1;
        }
    }
}

/// Entailment between formulas: AC of `*` with unit `emp`, plus weakening
/// of leftover atoms into an `any` on the right.
pub fn formula_implies(phi: &Formula, psi: &Formula) -> bool {
    let left = phi.fold_values().ac_normal();
    let right = psi.fold_values().ac_normal();
    let has_any = right.contains(&Formula::Any);
    let mut rest = left;
    for a in right.iter().filter(|a| **a != Formula::Any) {
        match rest.iter().position(|x| x == a) {
            Some(i) => {
                rest.remove(i);
            }
            None => return false,
        }
    }
    rest.is_empty() || has_any
}

// ---------------------------------------------------------------------------
// Step checking

fn sys_canon(s: &System) -> CanonSystem {
    canon_system(&s.map_processes(&|p| p.fold_values()))
}

fn f_eq(a: &Formula, b: &Formula) -> bool {
    a.fold_values().ac_eq(&b.fold_values())
}

/// Multiset difference of AC atoms, `None` unless `b ⊆ a`.
fn ac_minus(a: &Formula, b: &Formula) -> Option<Formula> {
    let mut rest = a.fold_values().ac_normal();
    for x in b.fold_values().ac_normal() {
        let i = rest.iter().position(|y| *y == x)?;
        rest.remove(i);
    }
    Some(Formula::sep_all(rest))
}

fn show_f(f: &Formula) -> String {
    crate::parser::print_formula(f)
}

fn show_s(s: &System) -> String {
    crate::parser::print_system(s)
}

type StepResult = Result<(), RuleErrorKind>;

fn need<T: Clone>(o: &Option<T>, what: &'static str) -> Result<T, RuleErrorKind> {
    o.clone().ok_or(RuleErrorKind::MissingInstantiation(what))
}

fn same_env(c: &Sequent, p: &Sequent) -> StepResult {
    if c.env != p.env {
        return Err(RuleErrorKind::EnvMismatch("premise and conclusion environments differ".into()));
    }
    Ok(())
}

fn same_cond(c: &Sequent, p: &Sequent) -> StepResult {
    if c.cond.fold() != p.cond.fold() {
        return Err(RuleErrorKind::ConditionMismatch("premise and conclusion conditions differ".into()));
    }
    Ok(())
}

fn same_formula(a: &Formula, b: &Formula, what: &str) -> StepResult {
    if !f_eq(a, b) {
        return Err(RuleErrorKind::FormulaMismatch(format!("{what}: `{}` vs `{}`", show_f(a), show_f(b))));
    }
    Ok(())
}

fn same_sys(a: &System, b: &System, what: &str) -> StepResult {
    if sys_canon(a) != sys_canon(b) {
        return Err(RuleErrorKind::NotStructurallyEqual(format!("{what}: `{}` vs `{}`", show_s(a), show_s(b))));
    }
    Ok(())
}

fn entails(cfg: &CheckConfig, b1: &BoolExpr, b2: &BoolExpr, what: &str) -> StepResult {
    let p = |b: &BoolExpr| crate::parser::print_bool(b);
    match bool_entails(b1, b2, cfg.bound, cfg.max_vars) {
        Ok(Entailment::Valid) => Ok(()),
        Ok(Entailment::BoundedValid { .. }) if cfg.accept_bounded => Ok(()),
        Ok(Entailment::BoundedValid { bound }) => Err(RuleErrorKind::EntailmentFailed(format!(
            "{what}: `{}` ⊨ `{}` holds only within bound {bound}",
            p(b1),
            p(b2)
        ))),
        Ok(Entailment::Refuted(s)) => Err(RuleErrorKind::EntailmentFailed(format!(
            "{what}: `{}` ⊭ `{}`, counterexample {}",
            p(b1),
            p(b2),
            crate::parser::print_subst(&s)
        ))),
        Err(e) => Err(RuleErrorKind::EntailmentFailed(format!("{what}: {e}"))),
    }
}

fn sep_check(a: &Formula, b: &Formula) -> StepResult {
    if !formulas_separate(a, b) {
        return Err(RuleErrorKind::SeparationCheckFailed(format!("`{}` ⊥ `{}` does not hold", show_f(a), show_f(b))));
    }
    Ok(())
}

fn state_check(f: &Formula) -> StepResult {
    if !f.is_state_formula() {
        return Err(RuleErrorKind::NotStateFormula(show_f(f)));
    }
    Ok(())
}

fn single_atom_post(f: &Formula) -> Option<Formula> {
    match f.fold_values().atoms().as_slice() {
        [a] => Some(a.clone()),
        _ => None,
    }
}

fn emp_pre(c: &Sequent) -> StepResult {
    if !c.pre.atoms().is_empty() {
        return Err(RuleErrorKind::FormulaMismatch(format!("precondition must be emp, found `{}`", show_f(&c.pre))));
    }
    Ok(())
}

/// The single leaf of a one-leaf system and its only top-level atom.
fn lone_atom(c: &Sequent) -> Result<(CanonSystem, Process, PermSet), RuleErrorKind> {
    let cs = sys_canon(&c.sys);
    match cs.leaves.as_slice() {
        [l] => match l.single_atom() {
            Some(a) => Ok((cs.clone(), a.clone(), l.perms.clone())),
            None => Err(RuleErrorKind::ShapeMismatch(format!("`{}` is not a single prefix", show_s(&c.sys)))),
        },
        _ => Err(RuleErrorKind::ShapeMismatch(format!("`{}` is not a single confined process", show_s(&c.sys)))),
    }
}

fn guarded_subset(c: &Sequent, chan: &Name, e: &PermSet) -> StepResult {
    let Some(g) = c.env.get(chan) else {
        return Err(RuleErrorKind::PermissionSideConditionFailed(format!("`{chan}` is not in the environment")));
    };
    if !g.is_subset(e) {
        let missing: Vec<String> = g.difference(e).map(|p| p.to_string()).collect();
        return Err(RuleErrorKind::PermissionSideConditionFailed(format!(
            "Γ({chan}) ⊄ E, missing {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

fn rebuild(cs: &CanonSystem, skip: usize, extra: System) -> CanonSystem {
    let mut leaves: Vec<System> = cs
        .leaves
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, l)| System::Leaf(l.perms.clone(), l.body.to_process()))
        .collect();
    leaves.push(extra);
    sys_canon(&System::new_all(&cs.binders, System::par_all_unchecked(leaves)))
}

fn subsets(items: &[Perm]) -> Vec<PermSet> {
    (0..(1u64 << items.len().min(16)))
        .map(|m| items.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, p)| p.clone()).collect())
        .collect()
}

fn check_out(c: &Sequent, derived: bool, cfg: &CheckConfig) -> StepResult {
    emp_pre(c)?;
    let Some(Formula::State(chan, want)) = single_atom_post(&c.post) else {
        return Err(RuleErrorKind::FormulaMismatch(format!("postcondition must be c↦ē, found `{}`", show_f(&c.post))));
    };
    let (_, atom, perms) = lone_atom(c)?;
    let Process::Out(d, have) = atom else {
        return Err(RuleErrorKind::ShapeMismatch("system is not an output".into()));
    };
    if d != chan || have.len() != want.len() {
        return Err(RuleErrorKind::ShapeMismatch(format!("output on `{d}` does not match `{}`", show_f(&c.post))));
    }
    if derived {
        entails(cfg, &c.cond, &BoolExpr::eq_lists(&have, &want), "output data")?;
    } else if have != want {
        return Err(RuleErrorKind::ShapeMismatch("output data differs from the postcondition".into()));
    }
    guarded_subset(c, &chan, &perms)
}

fn check_in(c: &Sequent, p: &Sequent) -> StepResult {
    same_env(c, p)?;
    same_cond(c, p)?;
    same_formula(&c.post, &p.post, "postcondition")?;
    let consumed = ac_minus(&c.pre, &p.pre)
        .ok_or_else(|| RuleErrorKind::FormulaMismatch("premise precondition is not part of the conclusion's".into()))?;
    let Some(Formula::State(chan, es)) = single_atom_post(&consumed) else {
        return Err(RuleErrorKind::FormulaMismatch(format!(
            "consumed precondition must be a single c↦ē, found `{}`",
            show_f(&consumed)
        )));
    };
    let Some(g) = c.env.get(&chan) else {
        return Err(RuleErrorKind::PermissionSideConditionFailed(format!("`{chan}` is not in the environment")));
    };
    let gv: Vec<Perm> = g.iter().cloned().collect();
    let cs = sys_canon(&c.sys);
    let target = sys_canon(&p.sys);
    let mut saw_input = false;
    let mut perm_issue = None;
    for (i, l) in cs.leaves.iter().enumerate() {
        let Some(Process::In(d, xs, body)) = l.single_atom() else { continue };
        if *d != chan || xs.len() != es.len() || cs.binders.contains(d) {
            continue;
        }
        saw_input = true;
        if !l.perms.is_disjoint(g) {
            perm_issue = Some(format!("leaf permissions already hold part of Γ({chan})"));
            continue;
        }
        let next = body.substitute(&xs.iter().cloned().zip(es.iter().cloned()).collect());
        for x in subsets(&gv) {
            let mut e = l.perms.clone();
            e.extend(x);
            if !e.contains(&Perm::of(&chan, Polarity::In)) {
                perm_issue = Some(format!("{}? is not owned by the input", chan));
                continue;
            }
            if rebuild(&cs, i, System::Leaf(e, next.clone())) == target {
                return Ok(());
            }
        }
    }
    if !saw_input {
        return Err(RuleErrorKind::ShapeMismatch(format!("no confined input on `{chan}` of matching arity")));
    }
    if let Some(m) = perm_issue {
        return Err(RuleErrorKind::PermissionSideConditionFailed(m));
    }
    Err(RuleErrorKind::NotStructurallyEqual(format!(
        "premise system `{}` is not the continuation of the input on `{chan}`",
        show_s(&p.sys)
    )))
}

fn check_par_like(c: &Sequent, p1: &Sequent, p2: &Sequent) -> StepResult {
    same_env(c, p1)?;
    same_env(c, p2)?;
    same_cond(c, p1)?;
    same_cond(c, p2)?;
    if !separate(&p1.sys, &p2.sys) {
        return Err(RuleErrorKind::SeparationCheckFailed("premise systems own overlapping permissions".into()));
    }
    same_sys(&c.sys, &System::par_unchecked(p1.sys.clone(), p2.sys.clone()), "composed system")
}

fn check_step(t: &ProofTree, defs: &DefTable, cfg: &CheckConfig) -> StepResult {
    let c = &t.conclusion;
    if t.premises.len() != t.rule.arity() {
        return Err(RuleErrorKind::ArityMismatch { expected: t.rule.arity(), found: t.premises.len() });
    }
    if !well_resourced(&c.sys) {
        return Err(RuleErrorKind::IllFormed("system is not well-resourced".into()));
    }
    let ps: Vec<&Sequent> = t.premises.iter().map(|p| &p.conclusion).collect();
    match t.rule {
        Rule::LNil => {
            same_formula(&c.pre, &c.post, "lNil wires pre to post")?;
            let cs = sys_canon(&c.sys);
            if cs.leaves.len() > 1 || cs.leaves.iter().any(|l| !l.is_nil()) {
                return Err(RuleErrorKind::ShapeMismatch(format!("`{}` is not ⟨E⟩0", show_s(&c.sys))));
            }
            Ok(())
        }
        Rule::LFls => entails(cfg, &c.cond, &BoolExpr::ff(), "condition is unsatisfiable"),
        Rule::LBlk => {
            emp_pre(c)?;
            let Some(Formula::Blk(chan)) = single_atom_post(&c.post) else {
                return Err(RuleErrorKind::FormulaMismatch(format!("postcondition must be blk c, found `{}`", show_f(&c.post))));
            };
            let (cs, atom, perms) = lone_atom(c)?;
            match atom {
                Process::In(d, _, _) if d == chan && !cs.binders.contains(&d) => {}
                _ => return Err(RuleErrorKind::ShapeMismatch(format!("system is not an input on `{chan}`"))),
            }
            if !perms.contains(&Perm::of(&chan, Polarity::In)) {
                return Err(RuleErrorKind::PermissionSideConditionFailed(format!("{chan}? ∉ E")));
            }
            Ok(())
        }
        Rule::LOut => check_out(c, false, cfg),
        Rule::LOutD => check_out(c, true, cfg),
        Rule::LIn | Rule::LInD => check_in(c, ps[0]),
        Rule::LIf => {
            let (p1, p2) = (ps[0], ps[1]);
            for p in [p1, p2] {
                same_env(c, p)?;
                same_formula(&c.pre, &p.pre, "precondition")?;
                same_formula(&c.post, &p.post, "postcondition")?;
            }
            let b1 = c.cond.fold();
            let BoolExpr::And(l, b2) = p1.cond.fold() else {
                return Err(RuleErrorKind::ConditionMismatch("then-premise condition must be b ∧ b2".into()));
            };
            if *l != b1 {
                return Err(RuleErrorKind::ConditionMismatch("then-premise condition does not extend the conclusion's".into()));
            }
            if p2.cond.fold() != BoolExpr::and(b1.clone(), BoolExpr::not((*b2).clone())).fold() {
                return Err(RuleErrorKind::ConditionMismatch("else-premise condition must be b ∧ ¬b2".into()));
            }
            let cs = sys_canon(&c.sys);
            let (t1, t2) = (sys_canon(&p1.sys), sys_canon(&p2.sys));
            let mut found_if = false;
            for (i, leaf) in cs.leaves.iter().enumerate() {
                let Some(Process::If(g, th, el)) = leaf.single_atom() else { continue };
                if g.fold() != *b2 {
                    continue;
                }
                found_if = true;
                if rebuild(&cs, i, System::Leaf(leaf.perms.clone(), (**th).clone())) == t1
                    && rebuild(&cs, i, System::Leaf(leaf.perms.clone(), (**el).clone())) == t2
                {
                    return Ok(());
                }
            }
            if !found_if {
                return Err(RuleErrorKind::ShapeMismatch("no confined conditional on the split guard".into()));
            }
            Err(RuleErrorKind::NotStructurallyEqual("premise systems are not the two branches".into()))
        }
        Rule::LDef => {
            let p = ps[0];
            same_env(c, p)?;
            same_cond(c, p)?;
            same_formula(&c.pre, &p.pre, "precondition")?;
            same_formula(&c.post, &p.post, "postcondition")?;
            let cs = sys_canon(&c.sys);
            let target = sys_canon(&p.sys);
            for (i, leaf) in cs.leaves.iter().enumerate() {
                let Some(Process::Call(k, es, ren)) = leaf.single_atom() else { continue };
                let body = defs
                    .unfold(k, es, ren)
                    .map_err(|e| RuleErrorKind::ShapeMismatch(format!("cannot unfold `{k}`: {e}")))?;
                if rebuild(&cs, i, System::Leaf(leaf.perms.clone(), body)) == target {
                    return Ok(());
                }
            }
            Err(RuleErrorKind::NotStructurallyEqual("premise is not a one-call unfolding of the conclusion".into()))
        }
        Rule::LPar => {
            let (p1, p2) = (ps[0], ps[1]);
            check_par_like(c, p1, p2)?;
            let phi2 = ac_minus(&c.pre, &p1.pre)
                .ok_or_else(|| RuleErrorKind::CutShapeMismatch("left premise pre is not part of the conclusion pre".into()))?;
            let phi3 = ac_minus(&p2.pre, &phi2)
                .ok_or_else(|| RuleErrorKind::CutShapeMismatch("right premise pre lacks the conclusion's remainder".into()))?;
            if let Some(cut) = &t.inst.cut {
                if !f_eq(cut, &phi3) {
                    return Err(RuleErrorKind::CutShapeMismatch(format!(
                        "declared cut `{}` but premises cut `{}`",
                        show_f(cut),
                        show_f(&phi3)
                    )));
                }
            }
            let psi1 = ac_minus(&p1.post, &phi3)
                .ok_or_else(|| RuleErrorKind::CutShapeMismatch("left premise post does not provide the cut".into()))?;
            same_formula(&c.post, &Formula::sep(psi1.clone(), p2.post.clone()), "postcondition")?;
            sep_check(&phi2, &phi3)?;
            sep_check(&psi1, &p2.post)
        }
        Rule::LCut => {
            let (p1, p2) = (ps[0], ps[1]);
            check_par_like(c, p1, p2)?;
            same_formula(&c.pre, &p1.pre, "precondition")?;
            same_formula(&c.post, &p2.post, "postcondition")?;
            if !f_eq(&p1.post, &p2.pre) {
                return Err(RuleErrorKind::CutShapeMismatch(format!(
                    "left post `{}` differs from right pre `{}`",
                    show_f(&p1.post),
                    show_f(&p2.pre)
                )));
            }
            Ok(())
        }
        Rule::LSep | Rule::LSepSt => {
            let (p1, p2) = (ps[0], ps[1]);
            check_par_like(c, p1, p2)?;
            same_formula(&c.pre, &Formula::sep(p1.pre.clone(), p2.pre.clone()), "precondition")?;
            same_formula(&c.post, &Formula::sep(p1.post.clone(), p2.post.clone()), "postcondition")?;
            if t.rule == Rule::LSep {
                sep_check(&p1.post, &p2.post)
            } else {
                [&p1.pre, &p2.pre, &p1.post, &p2.post].into_iter().try_for_each(|f| state_check(f))
            }
        }
        Rule::LFrm | Rule::LFrmSt => {
            let p = ps[0];
            same_env(c, p)?;
            same_cond(c, p)?;
            same_sys(&c.sys, &p.sys, "framed system")?;
            let frame = match &t.inst.frame {
                Some(f) => f.clone(),
                None => ac_minus(&c.pre, &p.pre)
                    .ok_or_else(|| RuleErrorKind::FormulaMismatch("premise pre is not part of the conclusion pre".into()))?,
            };
            same_formula(&c.pre, &Formula::sep(p.pre.clone(), frame.clone()), "precondition")?;
            same_formula(&c.post, &Formula::sep(p.post.clone(), frame.clone()), "postcondition")?;
            if t.rule == Rule::LFrm {
                sep_check(&p.post, &frame)
            } else {
                [&p.pre, &p.post, &frame].into_iter().try_for_each(|f| state_check(f))
            }
        }
        Rule::LSpl | Rule::LLcl => {
            let p = ps[0];
            same_env(c, p)?;
            same_cond(c, p)?;
            same_formula(&c.pre, &p.pre, "precondition")?;
            same_formula(&c.post, &p.post, "postcondition")?;
            let cs = sys_canon(&c.sys);
            let target = sys_canon(&p.sys);
            let ok = if t.rule == Rule::LSpl {
                split_results(&cs, true, cfg.split_cap)
                    .map_err(|e| RuleErrorKind::ShapeMismatch(e.to_string()))?
                    .contains(&target)
            } else {
                local_results(&cs).contains(&target)
            };
            if !ok {
                return Err(RuleErrorKind::NotStructurallyEqual(format!(
                    "`{}` is not a {} of `{}`",
                    show_s(&p.sys),
                    if t.rule == Rule::LSpl { "permission split" } else { "scope extrusion" },
                    show_s(&c.sys)
                )));
            }
            Ok(())
        }
        Rule::LRes => {
            let p = ps[0];
            let cs = &t.inst.chans;
            if cs.is_empty() {
                return Err(RuleErrorKind::MissingInstantiation("chans"));
            }
            same_cond(c, p)?;
            same_formula(&c.pre, &p.pre, "precondition")?;
            if let Some(x) = cs.iter().find(|x| c.pre.chans().contains(*x)) {
                return Err(RuleErrorKind::FreshnessViolated(format!("scoped `{x}` occurs in the precondition")));
            }
            if c.env != p.env.restrict_all(cs) {
                return Err(RuleErrorKind::EnvMismatch("conclusion environment is not the premise's restriction".into()));
            }
            same_formula(&c.post, &formula_restrict(&p.post, cs), "restricted postcondition")?;
            same_sys(&c.sys, &System::new_all(cs, p.sys.clone()), "scoped system")
        }
        Rule::LInst => {
            let p = ps[0];
            let s = subst_of([(need(&t.inst.var, "var")?, need(&t.inst.expr, "expr")?)]);
            same_env(c, p)?;
            if c.cond.fold() != p.cond.subst(&s).fold() {
                return Err(RuleErrorKind::ConditionMismatch("condition is not the instantiated premise condition".into()));
            }
            same_formula(&c.pre, &p.pre.subst(&s), "instantiated precondition")?;
            same_formula(&c.post, &p.post.subst(&s), "instantiated postcondition")?;
            same_sys(&c.sys, &p.sys.substitute(&s), "instantiated system")
        }
        Rule::LSub => {
            let p = ps[0];
            let x = need(&t.inst.var, "var")?;
            let e = need(&t.inst.expr, "expr")?;
            entails(cfg, &c.cond, &BoolExpr::eq(Expr::Var(x.clone()), e.clone()), "substituted equality")?;
            let s = subst_of([(x, e)]);
            same_env(c, p)?;
            same_cond(c, p)?;
            same_formula(&p.pre, &c.pre.subst(&s), "substituted precondition")?;
            same_formula(&p.post, &c.post.subst(&s), "substituted postcondition")?;
            same_sys(&p.sys, &c.sys.substitute(&s), "substituted system")
        }
        Rule::LImp => {
            let p = ps[0];
            same_env(c, p)?;
            entails(cfg, &c.cond, &p.cond, "strengthened condition")?;
            if !formula_implies(&c.pre, &p.pre) {
                return Err(RuleErrorKind::FormulaMismatch(format!(
                    "`{}` does not imply `{}`",
                    show_f(&c.pre),
                    show_f(&p.pre)
                )));
            }
            if !formula_implies(&p.post, &c.post) {
                return Err(RuleErrorKind::FormulaMismatch(format!(
                    "`{}` does not imply `{}`",
                    show_f(&p.post),
                    show_f(&c.post)
                )));
            }
            same_sys(&c.sys, &p.sys, "system")
        }
        Rule::LRen => {
            let p = ps[0];
            let from = need(&t.inst.from, "from")?;
            let to = need(&t.inst.to, "to")?;
            let mut used = p.env.names();
            used.extend(p.pre.chans());
            used.extend(p.post.chans());
            used.extend(p.sys.free_chans());
            if used.contains(&to) {
                return Err(RuleErrorKind::FreshnessViolated(format!("`{to}` already occurs in the premise")));
            }
            same_cond(c, p)?;
            if c.env != p.env.rename(&from, &to) {
                return Err(RuleErrorKind::EnvMismatch("conclusion environment is not the renamed premise's".into()));
            }
            same_formula(&c.pre, &p.pre.rename_chan(&from, &to), "renamed precondition")?;
            same_formula(&c.post, &p.post.rename_chan(&from, &to), "renamed postcondition")?;
            same_sys(&c.sys, &p.sys.rename_channels(&[(to, from)]), "renamed system")
        }
    }
}

fn check_into(t: &ProofTree, path: &mut Vec<usize>, defs: &DefTable, cfg: &CheckConfig, errs: &mut Vec<RuleError>) {
    for (i, p) in t.premises.iter().enumerate() {
        path.push(i);
        check_into(p, path, defs, cfg, errs);
        path.pop();
    }
    if let Err(kind) = check_step(t, defs, cfg) {
        errs.push(RuleError { path: path.clone(), rule: t.rule, kind });
    }
}

/// Checks a whole tree bottom-up; errors are listed children first.
pub fn check_proof(t: &ProofTree, defs: &DefTable, cfg: &CheckConfig) -> Result<Sequent, Vec<RuleError>> {
    let mut errs = Vec::new();
    check_into(t, &mut Vec::new(), defs, cfg, &mut errs);
    if errs.is_empty() {
        Ok(t.conclusion.clone())
    } else {
        Err(errs)
    }
}

// ---------------------------------------------------------------------------
// Derived-rule expansion

fn imp(c: Sequent, p: ProofTree) -> ProofTree {
    ProofTree::new(Rule::LImp, c, vec![p])
}

fn expand_node(t: ProofTree) -> ProofTree {
    let c = t.conclusion.clone();
    let mut prem = t.premises.clone().into_iter();
    match t.rule {
        Rule::LCut => {
            let (p1, p2) = (prem.next().unwrap(), prem.next().unwrap());
            let psi = p1.conclusion.post.clone();
            let l = imp(p1.conclusion.with(None, None, None, Some(Formula::sep(Formula::Emp, psi.clone()))), p1);
            let r = imp(p2.conclusion.with(None, Some(Formula::sep(Formula::Emp, psi.clone())), None, None), p2);
            let par_c = c.with(
                None,
                Some(Formula::sep(c.pre.clone(), Formula::Emp)),
                Some(System::par_unchecked(l.conclusion.sys.clone(), r.conclusion.sys.clone())),
                Some(Formula::sep(Formula::Emp, c.post.clone())),
            );
            let par = ProofTree::new(Rule::LPar, par_c, vec![l, r]).with_inst(Inst { cut: Some(psi), ..Inst::default() });
            imp(c, par)
        }
        Rule::LSep | Rule::LSepSt => {
            let (p1, p2) = (prem.next().unwrap(), prem.next().unwrap());
            let l = imp(p1.conclusion.with(None, None, None, Some(Formula::sep(p1.conclusion.post.clone(), Formula::Emp))), p1);
            let r = imp(p2.conclusion.with(None, Some(Formula::sep(p2.conclusion.pre.clone(), Formula::Emp)), None, None), p2);
            ProofTree::new(Rule::LPar, c, vec![l, r]).with_inst(Inst { cut: Some(Formula::Emp), ..Inst::default() })
        }
        Rule::LInD => imp(c.clone(), ProofTree::new(Rule::LIn, c, t.premises)),
        Rule::LFrm | Rule::LFrmSt => {
            let p = prem.next().unwrap();
            let frame = t.inst.frame.clone().or_else(|| ac_minus(&c.pre, &p.conclusion.pre)).unwrap_or(Formula::Emp);
            let nil = ProofTree::new(
                Rule::LNil,
                c.with(None, Some(frame.clone()), Some(System::unit()), Some(frame.clone())),
                vec![],
            );
            let sep_rule = if t.rule == Rule::LFrm { Rule::LSep } else { Rule::LSepSt };
            let sep_c = c.with(
                None,
                Some(Formula::sep(p.conclusion.pre.clone(), frame.clone())),
                Some(System::par_unchecked(p.conclusion.sys.clone(), System::unit())),
                Some(Formula::sep(p.conclusion.post.clone(), frame)),
            );
            imp(c, expand_node(ProofTree::new(sep_rule, sep_c, vec![p, nil])))
        }
        Rule::LOutD => expand_outd(&c),
        _ => t,
    }
}

fn expand_outd(c: &Sequent) -> ProofTree {
    let cs = sys_canon(&c.sys);
    let (Some(leaf), Some(Formula::State(chan, want))) = (cs.leaves.first(), single_atom_post(&c.post)) else {
        return ProofTree::new(Rule::LOutD, c.clone(), vec![]);
    };
    let Some(Process::Out(_, have)) = leaf.single_atom() else {
        return ProofTree::new(Rule::LOutD, c.clone(), vec![]);
    };
    let perms = leaf.perms.clone();
    let mut taken = c.free_vars();
    let xs: Vec<Name> = have
        .iter()
        .map(|_| {
            let x = fresh_name(&Name::new("z"), |n| taken.contains(n));
            taken.insert(x.clone());
            x
        })
        .collect();
    let xv: Vec<Expr> = xs.iter().cloned().map(Expr::Var).collect();
    let out_sys = |es: Vec<Expr>| System::Leaf(perms.clone(), Process::Out(chan.clone(), es));
    let inner_cond = BoolExpr::and(BoolExpr::and(c.cond.clone(), BoolExpr::eq_lists(&xv, have)), BoolExpr::eq_lists(&xv, &want));
    let base = c.with(Some(inner_cond.clone()), None, None, None);
    // lOut on the specified data, then lSub back to the fresh variables one at a time.
    let mut tree = ProofTree::new(Rule::LOut, base.with(None, None, Some(out_sys(want.clone())), None), vec![]);
    for k in (0..xs.len()).rev() {
        let mut es: Vec<Expr> = want[..k].to_vec();
        es.extend(xv[k..].iter().cloned());
        tree = ProofTree::new(Rule::LSub, base.with(None, None, Some(out_sys(es)), None), vec![tree])
            .with_inst(Inst { var: Some(xs[k].clone()), expr: Some(want[k].clone()), ..Inst::default() });
    }
    // lInst replaces the fresh variables by the emitted data.
    let mut cond = inner_cond;
    let mut es = xv.clone();
    for k in 0..xs.len() {
        let s = subst_of([(xs[k].clone(), have[k].clone())]);
        cond = cond.subst(&s);
        es[k] = have[k].clone();
        tree = ProofTree::new(Rule::LInst, base.with(Some(cond.clone()), None, Some(out_sys(es.clone())), None), vec![tree])
            .with_inst(Inst { var: Some(xs[k].clone()), expr: Some(have[k].clone()), ..Inst::default() });
    }
    imp(c.clone(), tree)
}

/// Replaces every derived rule by its derivation from the primitive rules.
pub fn expand_derived(t: &ProofTree) -> ProofTree {
    let premises = t.premises.iter().map(expand_derived).collect();
    let node = ProofTree { rule: t.rule, conclusion: t.conclusion.clone(), inst: t.inst.clone(), premises };
    let mut out = expand_node(node);
    // Expansions may introduce lSep/lSepSt, which expand again.
    fn again(t: ProofTree) -> ProofTree {
        let premises = t.premises.into_iter().map(again).collect();
        let node = ProofTree { premises, ..t };
        if node.rule.is_derived() {
            expand_node(node)
        } else {
            node
        }
    }
    out.premises = out.premises.into_iter().map(again).collect();
    out
}

// ---------------------------------------------------------------------------
// Semantic sequent check

#[derive(Clone, Debug)]
pub enum SemVerdict {
    /// No counterexample among the sampled substitutions and contexts.
    Holds { checked: usize, vacuous: usize },
    Counterexample { sigma: Subst, context: System, verdict: Satisfaction },
    Unknown(String),
}

impl SemVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, SemVerdict::Holds { .. })
    }
}

/// Cartesian grid of closing substitutions.
pub fn sigma_grid(axes: &[(&str, Vec<Value>)]) -> Vec<Subst> {
    let mut out = vec![Subst::new()];
    for (x, vs) in axes {
        out = out
            .into_iter()
            .flat_map(|s| {
                vs.iter().map(move |v| {
                    let mut s = s.clone();
                    s.insert(Name::new(x), Expr::Lit(*v));
                    s
                })
            })
            .collect();
    }
    out
}

/// Representative context systems for a closed precondition.
pub fn contexts_for(env: &PermEnv, pre: &Formula) -> Vec<System> {
    let atoms = pre.atoms();
    let guard = |c: &Name| env.get(c).cloned().unwrap_or_else(|| PermSet::from([Perm::of(c, Polarity::Out)]));
    let mut outs = Vec::new();
    let mut blks = Vec::new();
    for a in &atoms {
        match a {
            Formula::State(c, es) => outs.push((c.clone(), es.clone())),
            Formula::Blk(c) => blks.push(System::Leaf(
                PermSet::from([Perm::of(c, Polarity::In)]),
                Process::In(c.clone(), vec![], std::sync::Arc::new(Process::Nil)),
            )),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let split: Vec<System> = outs.iter().map(|(c, es)| System::Leaf(guard(c), Process::Out(c.clone(), es.clone()))).collect();
    if let Ok(s) = System::par_all(split.into_iter().chain(blks.iter().cloned()).collect()) {
        out.push(s);
    }
    if outs.len() > 1 {
        let perms: PermSet = outs.iter().flat_map(|(c, _)| guard(c)).collect();
        let body = Process::par_all(outs.iter().map(|(c, es)| Process::Out(c.clone(), es.clone())).collect());
        if let Ok(s) = System::par_all(std::iter::once(System::Leaf(perms, body)).chain(blks.iter().cloned()).collect()) {
            out.push(s);
        }
    }
    out
}

/// Bounded check of sequent validity over sampled substitutions and contexts.
pub fn sequent_holds_semantically(
    seq: &Sequent,
    samples: &[Subst],
    defs: &DefTable,
    cfg: SysConfig,
) -> Result<SemVerdict, LogicError> {
    let mut checked = 0;
    let mut vacuous = 0;
    for sigma in samples {
        if seq.cond.eval(sigma) != Ok(true) {
            vacuous += 1;
            continue;
        }
        let pre = seq.pre.subst(sigma).fold_values();
        let post = seq.post.subst(sigma).fold_values();
        let sys = seq.sys.substitute(sigma);
        let mut any_context = false;
        for t in contexts_for(&seq.env, &pre) {
            if !separate(&t, &sys) {
                continue;
            }
            match satisfies(&seq.env, &t, &pre, defs, cfg)? {
                Satisfaction::Sat(_) => {}
                Satisfaction::Unknown(why) => return Ok(SemVerdict::Unknown(why)),
                Satisfaction::Unsat(_) => continue,
            }
            any_context = true;
            let whole = System::par_unchecked(t.clone(), sys.clone());
            match satisfies(&seq.env, &whole, &post, defs, cfg)? {
                Satisfaction::Sat(_) => checked += 1,
                Satisfaction::Unknown(why) => return Ok(SemVerdict::Unknown(why)),
                v => return Ok(SemVerdict::Counterexample { sigma: sigma.clone(), context: t, verdict: v }),
            }
        }
        if !any_context {
            vacuous += 1;
        }
    }
    Ok(SemVerdict::Holds { checked, vacuous })
}

/// Process-level check: the first narrative `(Γ, E)` under which the
/// confined sequent holds on the samples.
#[allow(clippy::too_many_arguments)]
pub fn process_sequent_holds(
    cond: &BoolExpr,
    pre: &Formula,
    p: &Process,
    post: &Formula,
    narratives: &[(PermEnv, PermSet)],
    samples: &[Subst],
    defs: &DefTable,
    cfg: SysConfig,
) -> Result<Option<(PermEnv, PermSet)>, LogicError> {
    for (env, e) in narratives {
        let seq = Sequent::new(env.clone(), cond.clone(), pre.clone(), System::Leaf(e.clone(), p.clone()), post.clone());
        let v = sequent_holds_semantically(&seq, samples, defs, cfg)?;
        if matches!(v, SemVerdict::Holds { checked, .. } if checked > 0) {
            return Ok(Some((env.clone(), e.clone())));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::var("x")
    }

    #[test]
    fn entailment_examples() {
        let le9 = BoolExpr::leq(x(), Expr::lit(9));
        let contra = BoolExpr::and(le9.clone(), BoolExpr::not(le9.clone()));
        assert_eq!(bool_entails(&contra, &BoolExpr::ff(), 64, 6), Ok(Entailment::Valid));
        let double = BoolExpr::eq(Expr::add(x(), x()), Expr::add(x(), x()));
        assert_eq!(bool_entails(&BoolExpr::tt(), &double, 64, 6), Ok(Entailment::Valid));
        let r = bool_entails(&BoolExpr::leq(x(), Expr::lit(5)), &BoolExpr::leq(x(), Expr::lit(3)), 64, 6).unwrap();
        assert_eq!(r, Entailment::Refuted(subst_of([(Name::new("x"), Expr::lit(4))])));
    }

    #[test]
    fn entailment_bounded_and_capped() {
        // x + x ≤ 2·x is not syntactically linear-identical but holds everywhere.
        let b = BoolExpr::leq(Expr::add(x(), x()), Expr::add(Expr::add(x(), x()), Expr::var("y")));
        let r = bool_entails(&BoolExpr::leq(Expr::lit(0), Expr::var("y")), &b, 8, 6).unwrap();
        assert_eq!(r, Entailment::Valid);
        let many = BoolExpr::all((0..8).map(|i| BoolExpr::leq(Expr::var(&format!("v{i}")), Expr::lit(0))).collect());
        assert!(matches!(
            bool_entails(&BoolExpr::tt(), &BoolExpr::not(many), 4, 6),
            Err(EntailError::TooManyVariables { count: 8, cap: 6 })
        ));
        let or = BoolExpr::or(BoolExpr::leq(x(), Expr::lit(0)), BoolExpr::leq(Expr::lit(1), x()));
        assert_eq!(bool_entails(&BoolExpr::tt(), &or, 3, 6), Ok(Entailment::Valid));
        let y = Expr::var("y");
        let nested = BoolExpr::or(
            BoolExpr::leq(x(), Expr::lit(0)),
            BoolExpr::and(BoolExpr::leq(Expr::lit(1), x()), BoolExpr::leq(y.clone(), y)),
        );
        assert_eq!(bool_entails(&BoolExpr::tt(), &nested, 3, 6), Ok(Entailment::BoundedValid { bound: 3 }));
        let half = BoolExpr::and(BoolExpr::leq(Expr::add(x(), x()), Expr::lit(1)), BoolExpr::leq(Expr::lit(1), Expr::add(x(), x())));
        assert_eq!(bool_entails(&half, &BoolExpr::ff(), 3, 6), Ok(Entailment::Valid));
    }

    #[test]
    fn formula_implication() {
        let a = Formula::state("a", vec![Expr::lit(1)]);
        let b = Formula::blk("b");
        assert!(formula_implies(&Formula::sep(Formula::Emp, a.clone()), &a));
        assert!(formula_implies(&a, &Formula::sep(Formula::Emp, a.clone())));
        assert!(formula_implies(&Formula::sep(a.clone(), b.clone()), &Formula::sep(a.clone(), Formula::Any)));
        assert!(formula_implies(&a, &Formula::Any));
        assert!(!formula_implies(&a, &Formula::state("a", vec![Expr::lit(2)])));
        assert!(!formula_implies(&Formula::sep(a.clone(), b), &a));
    }

    #[test]
    fn rule_names_roundtrip() {
        for r in Rule::ALL {
            assert_eq!(Rule::from_name(r.name()), Some(r));
        }
    }

    #[test]
    fn grid_is_cartesian() {
        let g = sigma_grid(&[("x", vec![1, 2]), ("y", vec![0, 5, 7])]);
        assert_eq!(g.len(), 6);
    }
}
