use std::time::{Duration, Instant};

use permccs::confined::{canon_system, certify_deterministic, evaluate_safe, evaluate_safe_where, SafeEval, SysConfig};
use permccs::corpus::*;
use permccs::logic::{find_model, satisfies, BruteBound, ModelSearch, Satisfaction};
use permccs::process::{evaluate, is_deterministic, value_normal, Determinism, DEFAULT_BUDGET};
use permccs::proof::{check_proof, expand_derived, sequent_holds_semantically, sigma_grid, CheckConfig};
use permccs::syntax::DefTable;

#[test]
fn prg_evaluates_to_the_documented_result() {
    let defs = build_prg();
    for v1 in (0..=11).filter(|v| *v <= 9 || *v >= 10) {
        for v2 in [0, 5] {
            let start = Instant::now();
            let out = evaluate(&prg_in_context(v1, v2), &defs, DEFAULT_BUDGET).unwrap();
            let out: Vec<_> = out.iter().map(value_normal).collect();
            assert_eq!(out, vec![value_normal(&prg_expected(v1))], "v1 = {v1}, v2 = {v2}");
            assert!(start.elapsed() < Duration::from_secs(1));
        }
    }
}

#[test]
fn race_is_nondeterministic_with_all_documented_leaks() {
    let defs = build_prg();
    let p = race_process();
    assert!(matches!(is_deterministic(&p, &defs, DEFAULT_BUDGET).unwrap(), Determinism::NonDeterministic(..)));
    let leaves: Vec<_> = evaluate(&p, &defs, DEFAULT_BUDGET).unwrap().iter().map(value_normal).collect();
    let documented = race_expected_leaves();
    for want in &documented[..3] {
        assert!(leaves.contains(&value_normal(want)), "missing {}", permccs::parser::print_canon_process(want));
    }
    assert!(!leaves.contains(&value_normal(&documented[3])), "pairing 3 with 2 needs a second doubling");
    assert!(leaves.contains(&value_normal(&race_corrected_leaf())));
}

#[test]
fn both_assignments_certify_prg() {
    let defs = build_prg();
    for s in [prg_split_system(), prg_lent_system()] {
        let got = certify_deterministic(&s, &defs, SysConfig::default()).unwrap().expect("narrative found");
        assert_eq!(value_normal(&got), value_normal(&prg_certified_result()));
    }
}

#[test]
fn narrative_reaches_the_displayed_terminal_permissions() {
    let defs = build_prg();
    let want = canon_system(
        &permccs::confined::System::par_all(
            narrative_terminal_leaves().into_iter().map(|(e, p)| permccs::confined::System::Leaf(e, p)).collect(),
        )
        .unwrap(),
    );
    let r = evaluate_safe_where(&prg_split_system(), &defs, SysConfig::default(), |t| t == &want).unwrap();
    let SafeEval::Found(n) = r else { panic!("no narrative ends in the displayed system") };
    assert_eq!(n.result, want);
}

#[test]
fn satisfaction_regressions() {
    let defs = build_prg();
    for case in satisfaction_cases() {
        let got = satisfies(&case.env, &case.system, &case.formula, &defs, SysConfig::default()).unwrap();
        match (&case.expected, &got) {
            (Expected::Sat, Satisfaction::Sat(_)) => {}
            (Expected::Unsat(c), Satisfaction::Unsat(d)) if c == d => {}
            _ => panic!("{}: expected {:?}, got {:?}", case.label, case.expected, got),
        }
    }
}

#[test]
fn unsatisfiable_formulas_have_no_well_sorted_model_up_to_three_atoms() {
    for f in unsatisfiable_formulas() {
        let bound = BruteBound { max_atoms: 3, well_sorted: true };
        let v = find_model(&f, bound, &DefTable::empty(), SysConfig::default()).unwrap();
        assert!(matches!(v, ModelSearch::NoModel { checked } if checked > 10), "{f}: {v:?}");
    }
}

#[test]
fn output_beside_arity_mismatched_input_models_the_blocked_conjunction() {
    let f = &unsatisfiable_formulas()[1];
    let bound = BruteBound { max_atoms: 3, well_sorted: false };
    let v = find_model(f, bound, &DefTable::empty(), SysConfig::default()).unwrap();
    let ModelSearch::Model { system, .. } = v else { panic!("expected an ill-sorted model, got {v:?}") };
    assert!(format!("{system}").contains("c?()"), "{system}");
}

fn check_application_proof(defs: &DefTable, t: &permccs::proof::ProofTree, xs: Vec<i64>) {
    let cfg = CheckConfig::default();
    let root = check_proof(t, defs, &cfg).unwrap_or_else(|errs| {
        panic!("{}", errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))
    });
    let grid = sigma_grid(&[("x", xs), ("y", vec![0, 5])]);
    assert!(grid.len() >= 4);
    let v = sequent_holds_semantically(&root, &grid, defs, SysConfig::default()).unwrap();
    assert!(v.holds(), "{v:?}");
    for m in mutants(t, 10) {
        let errs = check_proof(&m.tree, defs, &cfg).expect_err("mutant rejected");
        assert_eq!(errs[0].path, m.path, "{:?} at {:?}: first error {}", m.kind, m.path, errs[0]);
    }
}

#[test]
fn application_proof_le9() {
    let (defs, t) = prg_le9_proof();
    check_application_proof(&defs, &t, vec![0, 4, 9, 12]);
}

#[test]
fn application_proof_gt9() {
    let (defs, t) = prg_gt9_proof();
    check_application_proof(&defs, &t, vec![8, 10, 11, 20]);
}

#[test]
fn derived_rules_agree_with_their_expansions() {
    let cfg = CheckConfig::default();
    let defs = DefTable::empty();
    for rule in DERIVED_RULES {
        let cases = derived_cases(rule);
        assert_eq!(cases.len(), 5, "{rule}");
        for t in cases {
            let show = |errs: Vec<permccs::proof::RuleError>| errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n");
            let a = check_proof(&t, &defs, &cfg).unwrap_or_else(|e| panic!("{rule} script: {}", show(e)));
            let x = expand_derived(&t);
            assert!(x.rules_used().iter().all(|r| !r.is_derived()), "{rule}");
            let b = check_proof(&x, &defs, &cfg).unwrap_or_else(|e| panic!("{rule} expansion: {}", show(e)));
            assert_eq!(a, b);
        }
    }
}

#[test]
fn quicksort_small_arrays_sort() {
    for vals in [vec![1], vec![2, 1], vec![3, 1, 2], vec![2, 2, 1], vec![1, 1, 1]] {
        let (defs, sys) = quicksort_instance(&vals).unwrap();
        let mut sorted = vals.clone();
        sorted.sort();
        let got = certify_deterministic(&sys, &defs, SysConfig::default()).unwrap().expect("narrative");
        assert_eq!(value_normal(&got), value_normal(&sorted_cells(&sorted)), "{vals:?}");
        let SafeEval::Found(_) = evaluate_safe(&sys, &defs, SysConfig::default()).unwrap() else { unreachable!() };
    }
}

#[test]
fn shipped_quicksort_file_matches_the_generator() {
    let (defs, sys) = permccs::parser::parse_system_file(include_str!("../../../data/qsort4.sys")).unwrap();
    assert_eq!(permccs::parser::print_defs(&defs), permccs::parser::print_defs(&build_quicksort(4)));
    let (_, want) = quicksort_instance(&[3, 1, 4, 2]).unwrap();
    assert_eq!(canon_system(&sys), canon_system(&want));
}
