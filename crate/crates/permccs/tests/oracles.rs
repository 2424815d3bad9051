use permccs::oracles::{generate_system, run_suite, GenSpec, OracleConfig, Suite};

fn small() -> OracleConfig {
    OracleConfig { systems: 120, ..OracleConfig::default() }
}

#[test]
fn every_suite_passes_on_a_small_sample() {
    let spec = GenSpec { seed: 11, ..GenSpec::default() };
    for suite in Suite::ALL {
        let r = run_suite(suite, &spec, &small()).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.checks > 0, "{r}");
    }
}

#[test]
fn reports_are_reproducible_per_seed() {
    let spec = GenSpec::default();
    let cfg = OracleConfig { systems: 40, ..OracleConfig::default() };
    let a = serde_json::to_string(&run_suite(Suite::Confluence, &spec, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_suite(Suite::Confluence, &spec, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tightening_peaks_are_reported_not_hidden() {
    let r = run_suite(Suite::Confluence, &GenSpec::default(), &OracleConfig::default()).unwrap();
    let notes = r.confluence.as_ref().expect("confluence notes");
    assert!(notes.strict >= notes.tightening);
    if notes.tightening > 0 {
        assert!(notes.tightening_witness.is_some());
    }
}

#[test]
fn generator_respects_shape_bounds() {
    let spec = GenSpec::default();
    for i in 0..300 {
        let s = generate_system(&spec, i);
        let chans: std::collections::BTreeSet<_> = s.free_chans().into_iter().filter(|c| c.as_str().starts_with('c')).collect();
        assert!(chans.len() <= spec.max_chans);
        let leaves = permccs::parser::print_system(&s).matches(" || ").count() + 1;
        assert!(leaves <= spec.max_atoms, "{}", permccs::parser::print_system(&s));
    }
}
