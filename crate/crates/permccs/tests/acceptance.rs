//! One pass/fail line per acceptance criterion, with the wall-clock limit each one carries.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use permccs::confined::{canon_system, certify_deterministic, evaluate_safe_where, SafeEval, SysConfig, System};
use permccs::corpus::*;
use permccs::logic::{find_model, satisfies, BruteBound, ModelSearch, Satisfaction};
use permccs::oracles::{run_suite, GenSpec, OracleConfig, Suite};
use permccs::parser::print_canon_process;
use permccs::process::{evaluate, is_deterministic, value_normal, Determinism, DEFAULT_BUDGET};
use permccs::proof::{check_proof, expand_derived, sequent_holds_semantically, sigma_grid, CheckConfig, ProofTree};
use permccs::syntax::DefTable;

type Verdict = Result<String, String>;

fn secs(d: Duration) -> String {
    format!("{:.3}s", d.as_secs_f64())
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    if t < limit {
        Ok(())
    } else {
        Err(format!("{what} took {} (limit {})", secs(t), secs(limit)))
    }
}

fn prg_behaviour() -> Verdict {
    let defs = build_prg();
    let mut slowest = Duration::ZERO;
    let mut n = 0;
    for v1 in (0..=9).chain([10, 11]) {
        for v2 in [0, 5] {
            let start = Instant::now();
            let out = evaluate(&prg_in_context(v1, v2), &defs, DEFAULT_BUDGET).map_err(|e| e.to_string())?;
            let got: Vec<_> = out.iter().map(value_normal).collect();
            if got != vec![value_normal(&prg_expected(v1))] {
                return Err(format!("v1={v1} v2={v2}: got {} results", got.len()));
            }
            within(start, Duration::from_secs(1), &format!("v1={v1} v2={v2}"))?;
            slowest = slowest.max(start.elapsed());
            n += 1;
        }
    }
    Ok(format!("{n} instances exact, slowest {}", secs(slowest)))
}

fn race() -> Verdict {
    let start = Instant::now();
    let defs = build_prg();
    let p = race_process();
    let det = is_deterministic(&p, &defs, DEFAULT_BUDGET).map_err(|e| e.to_string())?;
    if !matches!(det, Determinism::NonDeterministic(..)) {
        return Err("race reported deterministic".into());
    }
    let leaves: Vec<_> = evaluate(&p, &defs, DEFAULT_BUDGET).map_err(|e| e.to_string())?.iter().map(value_normal).collect();
    within(start, Duration::from_secs(5), "race")?;
    let missing: Vec<_> =
        race_expected_leaves().into_iter().filter(|l| !leaves.contains(&value_normal(l))).map(|l| print_canon_process(&l)).collect();
    if missing.is_empty() {
        return Ok(format!("{} stable leaves, all 4 listed present", leaves.len()));
    }
    let corrected = leaves.contains(&value_normal(&race_corrected_leaf()));
    Err(format!(
        "{} stable leaves; listed leaf {} is unreachable (pairing 3 with 2 needs a second doubling); \
         the reachable channel-reuse leak {} is {}",
        leaves.len(),
        missing.join(", "),
        print_canon_process(&race_corrected_leaf()),
        if corrected { "present" } else { "also missing" }
    ))
}

fn narratives() -> Verdict {
    let start = Instant::now();
    let defs = build_prg();
    for (label, s) in [("first assignment", prg_split_system()), ("second assignment", prg_lent_system())] {
        let got = certify_deterministic(&s, &defs, SysConfig::default())
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("{label}: no narrative"))?;
        if value_normal(&got) != value_normal(&prg_certified_result()) {
            return Err(format!("{label}: certified {}", print_canon_process(&got)));
        }
    }
    let leaves = narrative_terminal_leaves().into_iter().map(|(e, p)| System::Leaf(e, p)).collect();
    let want = canon_system(&System::par_all(leaves).map_err(|e| e.to_string())?);
    match evaluate_safe_where(&prg_split_system(), &defs, SysConfig::default(), |t| t == &want).map_err(|e| e.to_string())? {
        SafeEval::Found(n) if n.result == want => {}
        _ => return Err("no narrative reaches the displayed terminal permission sets".into()),
    }
    within(start, Duration::from_secs(5), "narratives")?;
    Ok(format!("both assignments certified, terminal permissions matched, {}", secs(start.elapsed())))
}

fn metatheory() -> Verdict {
    let start = Instant::now();
    let spec = GenSpec::default();
    let cfg = OracleConfig::default();
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for suite in Suite::ALL {
        let r = run_suite(suite, &spec, &cfg).map_err(|e| e.to_string())?;
        if !r.passed() {
            bad.push(format!("{suite}: {} failures, e.g. {}", r.failures, r.first_counterexample.clone().unwrap_or_default()));
        }
        lines.push(format!("{suite} {}/{}", r.checks, r.skipped));
    }
    if !bad.is_empty() {
        return Err(bad.join("; "));
    }
    within(start, Duration::from_secs(60), "suites")?;
    Ok(format!("{} suites x {} systems, seed {}, 0 violations, {} (checks/skipped: {})", Suite::ALL.len(), cfg.systems, spec.seed, secs(start.elapsed()), lines.join(", ")))
}

fn satisfaction() -> Verdict {
    let start = Instant::now();
    let defs = build_prg();
    let cases = satisfaction_cases();
    for case in &cases {
        let got = satisfies(&case.env, &case.system, &case.formula, &defs, SysConfig::default()).map_err(|e| e.to_string())?;
        match (&case.expected, &got) {
            (Expected::Sat, Satisfaction::Sat(_)) => {}
            (Expected::Unsat(c), Satisfaction::Unsat(d)) if c == d => {}
            _ => return Err(format!("{}: expected {:?}, got {:?}", case.label, case.expected, got)),
        }
    }
    let mut checked = Vec::new();
    for f in unsatisfiable_formulas() {
        let bound = BruteBound { max_atoms: 3, well_sorted: true };
        match find_model(&f, bound, &DefTable::empty(), SysConfig::default()).map_err(|e| e.to_string())? {
            ModelSearch::NoModel { checked: n } => checked.push(n),
            other => return Err(format!("{f}: {other:?}")),
        }
    }
    within(start, Duration::from_secs(30), "satisfaction")?;
    Ok(format!(
        "{} regressions match, {} formulas have no well-sorted model ({:?} candidates), {}",
        cases.len(),
        checked.len(),
        checked,
        secs(start.elapsed())
    ))
}

fn one_proof(defs: &DefTable, t: &ProofTree, xs: Vec<i64>) -> Result<usize, String> {
    let cfg = CheckConfig::default();
    let root = check_proof(t, defs, &cfg).map_err(|errs| errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))?;
    let grid = sigma_grid(&[("x", xs), ("y", vec![0, 5])]);
    let v = sequent_holds_semantically(&root, &grid, defs, SysConfig::default()).map_err(|e| e.to_string())?;
    if !v.holds() {
        return Err(format!("root fails on the grid: {v:?}"));
    }
    let ms = mutants(t, 10);
    if ms.len() < 10 {
        return Err(format!("only {} mutants", ms.len()));
    }
    for m in ms {
        match check_proof(&m.tree, defs, &cfg) {
            Ok(_) => return Err(format!("{:?} mutant at {:?} accepted", m.kind, m.path)),
            Err(errs) if errs[0].path != m.path => {
                return Err(format!("{:?} mutant at {:?} reported at {:?}", m.kind, m.path, errs[0].path))
            }
            Err(_) => {}
        }
    }
    Ok(grid.len())
}

fn proofs() -> Verdict {
    let start = Instant::now();
    let (d1, t1) = prg_le9_proof();
    let g1 = one_proof(&d1, &t1, vec![0, 4, 9, 12]).map_err(|e| format!("small branch: {e}"))?;
    let (d2, t2) = prg_gt9_proof();
    let g2 = one_proof(&d2, &t2, vec![8, 10, 11, 20]).map_err(|e| format!("large branch: {e}"))?;
    within(start, Duration::from_secs(30), "proofs")?;
    Ok(format!("2 proofs accepted, 20 mutants rejected at their node, grids of {g1} and {g2} points, {}", secs(start.elapsed())))
}

fn permutations(xs: &[i64]) -> Vec<Vec<i64>> {
    if xs.len() <= 1 {
        return vec![xs.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..xs.len() {
        let mut rest = xs.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn quicksort() -> Verdict {
    let start = Instant::now();
    let mut arrays = permutations(&[1, 2, 3, 4]);
    arrays.extend([vec![2, 2, 1], vec![1, 1, 1]]);
    let mut slowest = Duration::ZERO;
    for vals in &arrays {
        let t = Instant::now();
        let (defs, sys) = quicksort_instance(vals).map_err(|e| e.to_string())?;
        let got = certify_deterministic(&sys, &defs, SysConfig::default())
            .map_err(|e| format!("{vals:?}: {e}"))?
            .ok_or_else(|| format!("{vals:?}: no narrative"))?;
        let mut sorted = vals.clone();
        sorted.sort_unstable();
        if value_normal(&got) != value_normal(&sorted_cells(&sorted)) {
            return Err(format!("{vals:?}: got {}", print_canon_process(&got)));
        }
        within(t, Duration::from_secs(10), &format!("{vals:?}"))?;
        slowest = slowest.max(t.elapsed());
    }
    within(start, Duration::from_secs(300), "quicksort")?;
    Ok(format!("{} arrays sorted, slowest {}, total {}", arrays.len(), secs(slowest), secs(start.elapsed())))
}

fn derived_rules() -> Verdict {
    let start = Instant::now();
    let cfg = CheckConfig::default();
    let defs = DefTable::empty();
    let mut n = 0;
    for rule in DERIVED_RULES {
        let cases = derived_cases(rule);
        if cases.len() != 5 {
            return Err(format!("{rule}: {} cases", cases.len()));
        }
        for t in cases {
            let show = |errs: Vec<permccs::proof::RuleError>| errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
            let a = check_proof(&t, &defs, &cfg).map_err(|e| format!("{rule} script: {}", show(e)))?;
            let x = expand_derived(&t);
            if x.rules_used().iter().any(|r| r.is_derived()) {
                return Err(format!("{rule}: expansion still uses derived rules"));
            }
            let b = check_proof(&x, &defs, &cfg).map_err(|e| format!("{rule} expansion: {}", show(e)))?;
            if a != b {
                return Err(format!("{rule}: script and expansion certify different sequents"));
            }
            n += 1;
        }
    }
    within(start, Duration::from_secs(10), "derived rules")?;
    Ok(format!("{n} cases agree, {}", secs(start.elapsed())))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("prg functional behaviour", prg_behaviour),
        ("race detection", race),
        ("narrative certification", narratives),
        ("metatheory suites", metatheory),
        ("satisfaction regressions", satisfaction),
        ("proof checking", proofs),
        ("quicksort end-to-end", quicksort),
        ("derived-rule coherence", derived_rules),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match v {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
}
