use proptest::prelude::*;

use permccs::confined::{canon_system, has_violation, sys_step, well_resourced, DEFAULT_SPLIT_CAP};
use permccs::logic::Formula;
use permccs::oracles::{generate_system, GenSpec};
use permccs::parser::{parse_bool, parse_expr, parse_formula, parse_system, print_bool, print_expr, print_formula, print_system};
use permccs::proof::{bool_entails, sigma_grid, Entailment};
use permccs::syntax::{BoolExpr, DefTable, Expr};

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(-5i64..20).prop_map(Expr::lit), prop::sample::select(vec!["x", "y"]).prop_map(Expr::var)];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::sub(a, b)),
        ]
    })
}

fn boolean() -> impl Strategy<Value = BoolExpr> {
    let leaf = (expr(), expr()).prop_map(|(a, b)| BoolExpr::leq(a, b));
    leaf.prop_recursive(3, 10, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(BoolExpr::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| BoolExpr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| BoolExpr::or(a, b)),
        ]
    })
}

fn formula() -> impl Strategy<Value = Formula> {
    let chan = prop::sample::select(vec!["a", "b", "c"]);
    let leaf = prop_oneof![
        Just(Formula::Emp),
        Just(Formula::Any),
        chan.clone().prop_map(Formula::blk),
        (chan, prop::collection::vec(expr(), 0..3)).prop_map(|(c, es)| Formula::state(c, es)),
    ];
    leaf.prop_recursive(3, 8, 2, |inner| (inner.clone(), inner).prop_map(|(a, b)| Formula::sep(a, b)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn expressions_round_trip(e in expr()) {
        prop_assert_eq!(parse_expr(&print_expr(&e)).unwrap(), e);
    }

    #[test]
    fn booleans_round_trip(b in boolean()) {
        prop_assert_eq!(parse_bool(&print_bool(&b)).unwrap(), b);
    }

    #[test]
    fn formulas_round_trip_up_to_ac(f in formula()) {
        prop_assert!(parse_formula(&print_formula(&f)).unwrap().ac_eq(&f));
    }

    #[test]
    fn systems_round_trip_up_to_structure(i in 0u64..100_000, seed in 0u64..64) {
        let s = generate_system(&GenSpec { seed, ..GenSpec::default() }, i);
        let back = parse_system(&print_system(&s)).unwrap();
        prop_assert_eq!(canon_system(&back), canon_system(&s));
    }

    #[test]
    fn canonical_forms_are_idempotent(i in 0u64..100_000) {
        let c = canon_system(&generate_system(&GenSpec::default(), i));
        prop_assert_eq!(canon_system(&c.to_system()), c);
    }

    #[test]
    fn one_step_preserves_resourcing_locality_and_violations(i in 0u64..100_000, seed in 0u64..64) {
        let s = generate_system(&GenSpec { seed, ..GenSpec::default() }, i);
        let c = canon_system(&s);
        let bad = has_violation(&s).is_some();
        for t in sys_step(&s, &DefTable::empty(), DEFAULT_SPLIT_CAP).unwrap() {
            let ts = t.to_system();
            prop_assert!(well_resourced(&ts));
            prop_assert!(t.owned().is_subset(&c.owned()));
            if bad {
                prop_assert!(has_violation(&ts).is_some());
            }
        }
    }

    #[test]
    fn linear_entailment_is_sound(p in boolean(), g in boolean()) {
        if let Ok(Entailment::Valid) = bool_entails(&p, &g, 0, 2) {
            for sigma in sigma_grid(&[("x", (-6..=6).collect()), ("y", (-6..=6).collect())]) {
                if p.eval(&sigma).unwrap() {
                    prop_assert!(g.eval(&sigma).unwrap(), "{} |= {} fails at {:?}", print_bool(&p), print_bool(&g), sigma);
                }
            }
        }
    }
}
