mod common;

use common::*;

#[test]
fn port_agnostic_corpus_matches_ground_truth() {
    let reg = full_registry();
    let c = corpus("manifests/port-agnostic.json", &reg);
    let a = analyze(&c, &reg);
    let s = score(&c, &a);
    assert!(s.mismatches.is_empty(), "{:#?}", s.mismatches);
    assert_eq!((s.true_pos, s.false_pos, s.false_neg), (62, 0, 0));
    let m = finding_mismatches(&c, &a);
    assert!(m.is_empty(), "{m:#?}");
}

#[test]
fn rule_coverage_corpus_matches_ground_truth() {
    for reg in [full_registry(), subset_registry()] {
        let c = corpus("manifests/rule-coverage.json", &reg);
        let a = analyze(&c, &reg);
        let m = finding_mismatches(&c, &a);
        assert!(m.is_empty(), "{m:#?}");
    }
}

#[test]
fn four_device_corpus_matches_ground_truth() {
    let reg = full_registry();
    let c = corpus("manifests/four-devices.json", &reg);
    let a = analyze(&c, &reg);
    let m = finding_mismatches(&c, &a);
    assert!(m.is_empty(), "{m:#?}");
}

