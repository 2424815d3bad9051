//! Randomized metatheory harness: a generator of small well-resourced
//! systems and one suite per invariant of the confined semantics and logic.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::confined::{
    canon_system, erase, evaluate_safe, is_safely_stable_canon, safe_outcomes, safely_stable_shape_literal,
    safely_stable_structural, separate, sys_explore, violation_canon, well_resourced, CanonSystem, ConfinedError, Perm,
    PermSet, Polarity, SafeEval, SysConfig, SysGraph, SysRule, System,
};
use crate::logic::{formula_restrict, formulas_separate, minimal_env, satisfies, Formula, LogicError};
use crate::parser::{print_canon_process, print_canon_system};
use crate::process::{canon, evaluate, step, value_normal, EvaluateError, ProcessError, DEFAULT_BUDGET};
use crate::syntax::{BoolExpr, DefTable, Expr, Name, Process};

/// Shape bounds for generated systems.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GenSpec {
    pub max_atoms: usize,
    pub max_chans: usize,
    pub max_depth: usize,
    pub value_range: (i64, i64),
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec { max_atoms: 4, max_chans: 3, max_depth: 3, value_range: (0, 3), seed: 7 }
    }
}

fn chan(k: usize) -> Name {
    Name::from(format!("c{k}"))
}

struct Gen<'a> {
    spec: &'a GenSpec,
    rng: ChaCha8Rng,
    fresh: usize,
}

impl Gen<'_> {
    fn expr(&mut self, vars: &[Name]) -> Expr {
        let (lo, hi) = self.spec.value_range;
        match (vars.choose(&mut self.rng), self.rng.gen_range(0..4)) {
            (Some(x), 0 | 1) => Expr::Var(x.clone()),
            (Some(x), 2) => Expr::add(Expr::Var(x.clone()), Expr::lit(1)),
            _ => Expr::lit(self.rng.gen_range(lo..=hi)),
        }
    }

    fn process(&mut self, depth: usize, chans: &[Name], vars: &[Name]) -> Process {
        let c = chans.choose(&mut self.rng).expect("at least one channel").clone();
        let pick = if depth == 0 { self.rng.gen_range(0..2) } else { self.rng.gen_range(0..20) };
        match pick {
            0 => Process::Nil,
            1..=6 => Process::Out(c, vec![self.expr(vars)]),
            7..=12 => {
                let x = Name::from(format!("x{}", vars.len()));
                let mut inner = vars.to_vec();
                inner.push(x.clone());
                Process::In(c, vec![x], self.process(depth - 1, chans, &inner).into())
            }
            13..=15 => Process::par(self.process(depth - 1, chans, vars), self.process(depth - 1, chans, vars)),
            16..=17 => {
                let b = BoolExpr::leq(self.expr(vars), self.expr(vars));
                Process::cond(b, self.process(depth - 1, chans, vars), self.process(depth - 1, chans, vars))
            }
            _ => {
                let n = Name::from(format!("n{}", self.fresh));
                self.fresh += 1;
                let mut inner = chans.to_vec();
                inner.push(n.clone());
                Process::New(n, self.process(depth - 1, &inner, vars).into())
            }
        }
    }

    /// Atoms in separate leaves; each `c?`/`c!` goes to at most one leaf.
    fn system(&mut self) -> System {
        let k = self.rng.gen_range(1..=self.spec.max_chans);
        let chans: Vec<Name> = (0..k).map(chan).collect();
        let n = self.rng.gen_range(1..=self.spec.max_atoms);
        let bodies: Vec<Process> = (0..n).map(|_| self.process(self.spec.max_depth, &chans, &[])).collect();
        let mut perms = vec![PermSet::new(); n];
        let used: Vec<PermSet> = bodies.iter().map(uses).collect();
        for c in &chans {
            for pol in [Polarity::In, Polarity::Out] {
                let p = Perm::of(c, pol);
                let users: Vec<usize> = (0..n).filter(|&i| used[i].contains(&p)).collect();
                let slot = match users.choose(&mut self.rng) {
                    Some(&i) if self.rng.gen_bool(0.8) => i,
                    _ => self.rng.gen_range(0..=n),
                };
                if slot < n {
                    perms[slot].insert(p);
                }
            }
        }
        let leaves = perms.into_iter().zip(bodies).map(|(e, p)| System::Leaf(e, p)).collect();
        let s = System::par_all_unchecked(leaves);
        if self.rng.gen_bool(0.25) {
            System::New(chans[0].clone(), s.into())
        } else {
            s
        }
    }
}

/// Free channel prefixes of a process, as permissions.
fn uses(p: &Process) -> PermSet {
    let mut out = PermSet::new();
    fn go(p: &Process, bound: &[Name], out: &mut PermSet) {
        match p {
            Process::Nil | Process::Call(..) => {}
            Process::Out(c, _) if !bound.contains(c) => {
                out.insert(Perm::of(c, Polarity::Out));
            }
            Process::Out(..) => {}
            Process::In(c, _, q) => {
                if !bound.contains(c) {
                    out.insert(Perm::of(c, Polarity::In));
                }
                go(q, bound, out);
            }
            Process::If(_, q, r) | Process::Par(q, r) => {
                go(q, bound, out);
                go(r, bound, out);
            }
            Process::New(c, q) => {
                let mut inner = bound.to_vec();
                inner.push(c.clone());
                go(q, &inner, out);
            }
        }
    }
    go(p, &[], &mut out);
    out
}

/// The `index`-th generated system of a seed; independent of other indices.
pub fn generate_system(spec: &GenSpec, index: u64) -> System {
    let seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index;
    let mut g = Gen { spec, rng: ChaCha8Rng::seed_from_u64(seed), fresh: 0 };
    g.system()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Locality,
    Resourcing,
    ViolationPreservation,
    Confluence,
    EvaluationDeterminism,
    Convergence,
    Correspondence,
    ProcessDeterminism,
    Stability,
    Merging,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Locality,
        Suite::Resourcing,
        Suite::ViolationPreservation,
        Suite::Confluence,
        Suite::EvaluationDeterminism,
        Suite::Convergence,
        Suite::Correspondence,
        Suite::ProcessDeterminism,
        Suite::Stability,
        Suite::Merging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Locality => "locality",
            Suite::Resourcing => "resourcing",
            Suite::ViolationPreservation => "violation",
            Suite::Confluence => "confluence",
            Suite::EvaluationDeterminism => "determinism",
            Suite::Convergence => "convergence",
            Suite::Correspondence => "correspondence",
            Suite::ProcessDeterminism => "process-determinism",
            Suite::Stability => "stability",
            Suite::Merging => "merging",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown suite `{0}`")]
pub struct UnknownSuite(pub String);

impl FromStr for Suite {
    type Err = UnknownSuite;
    fn from_str(s: &str) -> Result<Suite, UnknownSuite> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Confined(#[from] ConfinedError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

/// Outcome of one suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub systems: usize,
    /// Individual assertions evaluated.
    pub checks: usize,
    /// Systems whose state space exceeded the budget or where the premise never held.
    pub skipped: usize,
    pub failures: usize,
    pub first_counterexample: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confluence: Option<ConfluenceNotes>,
}

/// Peaks the confluence suite reports beside its failures.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ConfluenceNotes {
    /// Peaks whose sides reach no identical system within the join depth;
    /// they meet only up to owned permissions.
    pub strict: usize,
    /// Those of them where one side is a tightening step.
    pub tightening: usize,
    pub tightening_witness: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} systems, {} checks, {} skipped, {} failures",
            self.suite, self.systems, self.checks, self.skipped, self.failures
        )?;
        if let Some(c) = &self.confluence {
            write!(f, "; {} peaks join only up to owned permissions ({} via tightening)", c.strict, c.tightening)?;
        }
        if let Some(c) = &self.first_counterexample {
            write!(f, "\n  first counterexample: {c}")?;
        }
        if let Some(w) = self.confluence.as_ref().and_then(|c| c.tightening_witness.as_ref()) {
            write!(f, "\n  tightening peak: {w}")?;
        }
        Ok(())
    }
}

/// Budget knobs for one suite run.
#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    pub systems: usize,
    pub sys: SysConfig,
    /// Node budget for full state-space exploration per system.
    pub explore_budget: usize,
    /// Steps each side of a confluence peak may take to meet.
    pub join_depth: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { systems: 500, sys: SysConfig::default(), explore_budget: 4000, join_depth: 3 }
    }
}

struct Tally {
    checks: usize,
    skipped: usize,
    failures: usize,
    first: Option<String>,
    extra: ConfluenceNotes,
}

impl Tally {
    fn check(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(witness());
            }
        }
    }
}

fn show(s: &CanonSystem) -> String {
    print_canon_system(s)
}

fn successors(g: &SysGraph, v: usize) -> Option<Vec<usize>> {
    g.edges[v].as_ref().map(|es| es.iter().map(|(_, w)| *w).collect::<BTreeSet<_>>().into_iter().collect())
}

fn erased(s: &CanonSystem) -> crate::process::CanonProcess {
    canon(&erase(&s.to_system()))
}

/// Runs one suite over `cfg.systems` generated systems.
pub fn run_suite(suite: Suite, spec: &GenSpec, cfg: &OracleConfig) -> Result<SuiteReport, OracleError> {
    let defs = DefTable::empty();
    let mut t = Tally { checks: 0, skipped: 0, failures: 0, first: None, extra: ConfluenceNotes::default() };
    let explore_cfg = SysConfig { budget: cfg.explore_budget, ..cfg.sys };
    for i in 0..cfg.systems as u64 {
        let s = generate_system(spec, i);
        debug_assert!(well_resourced(&s));
        match suite {
            Suite::Merging => merging_case(spec, i, &defs, cfg, &mut t)?,
            Suite::ProcessDeterminism => {
                let SafeEval::Found(n) = evaluate_safe(&s, &defs, cfg.sys)? else {
                    t.skipped += 1;
                    continue;
                };
                let want = value_normal(&erased(&n.result));
                match evaluate(&erase(&s), &defs, DEFAULT_BUDGET) {
                    Ok(leaves) => t.check(leaves.iter().all(|l| value_normal(l) == want), || {
                        format!("{}: certified {}, process leaves {}", show(&canon_system(&s)), print_canon_process(&want), leaves.len())
                    }),
                    Err(EvaluateError::BudgetExhausted { .. }) => t.skipped += 1,
                    Err(e) => t.check(false, || format!("{}: {e}", show(&canon_system(&s)))),
                }
            }
            _ => {
                let g = sys_explore(&s, &defs, explore_cfg)?;
                if g.truncated {
                    t.skipped += 1;
                    continue;
                }
                graph_suite(suite, &s, &g, &defs, cfg, &mut t)?;
            }
        }
    }
    Ok(SuiteReport { suite, systems: cfg.systems, checks: t.checks, skipped: t.skipped, failures: t.failures, first_counterexample: t.first,
        confluence: (suite == Suite::Confluence).then_some(t.extra) })
}

fn graph_suite(suite: Suite, s: &System, g: &SysGraph, defs: &DefTable, cfg: &OracleConfig, t: &mut Tally) -> Result<(), OracleError> {
    let n = g.nodes.len();
    match suite {
        Suite::Locality => {
            for v in 0..n {
                for w in successors(g, v).unwrap_or_default() {
                    let (a, b) = (g.nodes[v].owned(), g.nodes[w].owned());
                    t.check(b.is_subset(&a), || format!("{} --> {}", show(&g.nodes[v]), show(&g.nodes[w])));
                }
            }
        }
        Suite::Resourcing => {
            for v in 0..n {
                t.check(well_resourced(&g.nodes[v].to_system()), || show(&g.nodes[v]));
            }
        }
        Suite::ViolationPreservation => {
            for v in (0..n).filter(|&v| violation_canon(&g.nodes[v]).is_some()) {
                for w in successors(g, v).unwrap_or_default() {
                    t.check(violation_canon(&g.nodes[w]).is_some(), || format!("{} --> {}", show(&g.nodes[v]), show(&g.nodes[w])));
                }
            }
        }
        Suite::Confluence => {
            let mut ids: std::collections::HashMap<CanonSystem, usize> = Default::default();
            let key: Vec<usize> = g
                .nodes
                .iter()
                .map(|x| {
                    let k = canon_system(&x.to_system().strip());
                    let next = ids.len();
                    *ids.entry(k).or_insert(next)
                })
                .collect();
            // Successors reachable only by tightening.
            let tgh_only = |v: usize, w: usize| {
                g.edges[v].as_ref().is_some_and(|es| es.iter().filter(|(_, x)| *x == w).all(|(r, _)| *r == SysRule::CTgh))
            };
            let ident: Vec<usize> = (0..n).collect();
            let mut memo = vec![None; n];
            let mut exact = vec![None; n];
            for v in 0..n {
                let succ = successors(g, v).unwrap_or_default();
                for (k, &a) in succ.iter().enumerate() {
                    for &b in &succ[k + 1..] {
                        if key[a] == key[b] {
                            t.check(true, String::new);
                            continue;
                        }
                        let (Some(ra), Some(rb)) = (reach(g, &key, a, cfg.join_depth, &mut memo), reach(g, &key, b, cfg.join_depth, &mut memo)) else {
                            continue;
                        };
                        let joinable = !ra.is_disjoint(&rb);
                        let ia = reach(g, &ident, a, cfg.join_depth, &mut exact).expect("explored above");
                        let ib = reach(g, &ident, b, cfg.join_depth, &mut exact).expect("explored above");
                        let witness = || format!("{} --> {} and --> {}", show(&g.nodes[v]), show(&g.nodes[a]), show(&g.nodes[b]));
                        if ia.is_disjoint(&ib) {
                            t.extra.strict += 1;
                            if tgh_only(v, a) || tgh_only(v, b) {
                                t.extra.tightening += 1;
                                t.extra.tightening_witness.get_or_insert_with(witness);
                            }
                        }
                        t.check(joinable, witness);
                    }
                }
            }
        }
        Suite::EvaluationDeterminism => {
            let results: BTreeSet<_> = (0..n)
                .filter(|&v| successors(g, v).is_some_and(|s| s.is_empty()) && violation_canon(&g.nodes[v]).is_none())
                .map(|v| value_normal(&erased(&g.nodes[v])))
                .collect();
            t.check(results.len() <= 1, || {
                format!("{}: {}", show(&g.nodes[0]), results.iter().map(print_canon_process).collect::<Vec<_>>().join(" / "))
            });
        }
        Suite::Convergence => {
            if matches!(evaluate_safe(s, defs, cfg.sys)?, SafeEval::Found(_)) {
                t.check(!g.has_cycle(), || show(&g.nodes[0]));
            } else {
                t.skipped += 1;
            }
        }
        Suite::Correspondence => {
            for v in 0..n {
                let p = erased(&g.nodes[v]);
                let next = step(&p.to_process(), defs)?;
                let next: BTreeSet<_> = next.iter().map(value_normal).collect();
                for w in successors(g, v).unwrap_or_default() {
                    let q = erased(&g.nodes[w]);
                    let ok = value_normal(&p) == value_normal(&q) || next.contains(&value_normal(&q));
                    t.check(ok, || format!("{} --> {}", show(&g.nodes[v]), show(&g.nodes[w])));
                }
            }
        }
        Suite::Stability => {
            for v in 0..n {
                let by_def = is_safely_stable_canon(&g.nodes[v], defs, cfg.sys.split_cap)?;
                t.check(by_def == safely_stable_structural(&g.nodes[v]), || {
                    format!("{} (definition {by_def}, literal shape {})", show(&g.nodes[v]), safely_stable_shape_literal(&g.nodes[v]))
                });
            }
        }
        Suite::Merging | Suite::ProcessDeterminism => unreachable!("handled without exploration"),
    }
    Ok(())
}

/// Equivalence-up-to-owned-permissions classes reachable from `v` in at
/// most `depth` steps; `None` when the exploration frontier is hit.
fn reach(g: &SysGraph, key: &[usize], v: usize, depth: usize, memo: &mut Vec<Option<(usize, BTreeSet<usize>)>>) -> Option<BTreeSet<usize>> {
    if let Some((d, r)) = &memo[v] {
        if *d == depth {
            return Some(r.clone());
        }
    }
    let mut out = BTreeSet::from([key[v]]);
    if depth > 0 {
        for w in successors(g, v)? {
            out.extend(reach(g, key, w, depth - 1, memo)?);
        }
    }
    memo[v] = Some((depth, out.clone()));
    Some(out)
}

/// Formula read off a safely stable system: states for outputs, `blk` for
/// inputs, `any` for atoms on scoped channels.
pub fn describe(t: &CanonSystem) -> Formula {
    let atoms = t
        .leaves
        .iter()
        .map(|l| match l.single_atom() {
            Some(Process::Out(c, es)) => Formula::State(c.clone(), es.clone()),
            Some(Process::In(c, _, _)) => Formula::Blk(c.clone()),
            _ => Formula::Any,
        })
        .collect();
    formula_restrict(&Formula::sep_all(atoms), &t.binders)
}

/// Splits a generated system's leaves in two and checks that separately
/// satisfied, separate formulas merge.
fn merging_case(spec: &GenSpec, i: u64, defs: &DefTable, cfg: &OracleConfig, t: &mut Tally) -> Result<(), OracleError> {
    let s = generate_system(spec, i);
    let (binders, leaves) = match &s {
        System::New(c, inner) => (vec![c.clone()], leaves_of(inner)),
        other => (vec![], leaves_of(other)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ i.rotate_left(17));
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for l in leaves {
        if rng.gen_bool(0.5) { left.push(l) } else { right.push(l) }
    }
    let a = System::new_all(&binders, System::par_all_unchecked(left));
    let b = System::par_all_unchecked(right);
    if !separate(&a, &b) {
        t.skipped += 1;
        return Ok(());
    }
    let pick = |x: &System, rng: &mut ChaCha8Rng| -> Result<Option<Formula>, OracleError> {
        let outs: Vec<CanonSystem> = safe_outcomes(x, defs, cfg.sys)?.into_iter().collect();
        Ok(outs.choose(rng).map(describe))
    };
    let (Some(f), Some(g)) = (pick(&a, &mut rng)?, pick(&b, &mut rng)?) else {
        t.skipped += 1;
        return Ok(());
    };
    if !formulas_separate(&f, &g) {
        t.skipped += 1;
        return Ok(());
    }
    let env = minimal_env(&[&f, &g]);
    let fa = satisfies(&env, &a, &f, defs, cfg.sys)?;
    let gb = satisfies(&env, &b, &g, defs, cfg.sys)?;
    if !(fa.is_sat() && gb.is_sat()) {
        t.skipped += 1;
        return Ok(());
    }
    let both = System::par_unchecked(a.clone(), b.clone());
    let merged = satisfies(&env, &both, &Formula::sep(f.clone(), g.clone()), defs, cfg.sys)?;
    t.check(merged.is_sat(), || format!("{} |= {f}, {} |= {g}, merged: {merged:?}", show(&canon_system(&a)), show(&canon_system(&b))));
    Ok(())
}

fn leaves_of(s: &System) -> Vec<System> {
    match s {
        System::Par(a, b) => {
            let mut v = leaves_of(a);
            v.extend(leaves_of(b));
            v
        }
        other => vec![other.clone()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_systems_are_well_resourced_and_closed() {
        let spec = GenSpec::default();
        for i in 0..200 {
            let s = generate_system(&spec, i);
            assert!(well_resourced(&s));
            assert!(s.free_vars().is_empty());
        }
    }

    #[test]
    fn generation_is_seed_stable() {
        let spec = GenSpec::default();
        assert_eq!(generate_system(&spec, 3), generate_system(&spec, 3));
        let other = GenSpec { seed: 8, ..spec };
        assert!((0..20).any(|i| generate_system(&spec, i) != generate_system(&other, i)));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
