mod common;

use skillform::model::fixtures::{random_ces, random_translog};
use skillform::model::RestrictionSet;

fn run(specs: Vec<skillform::model::ModelSpec>, sets: &[RestrictionSet]) {
    for (k, spec) in specs.iter().enumerate() {
        let r = common::equivalence_check(spec, sets).unwrap_or_else(|e| panic!("spec {k}: {e}"));
        assert_eq!(r.checked, sets.len());
        assert!(r.passes(), "spec {k}: {r:?}");
    }
}

#[test]
fn random_translog_specs_are_equivalent_under_every_set() {
    run(
        (0..10).map(random_translog).collect(),
        &RestrictionSet::all_translog(),
    );
}

#[test]
fn random_ces_specs_are_equivalent_under_every_set() {
    run(
        (0..10).map(random_ces).collect(),
        &RestrictionSet::all_ces(),
    );
}
