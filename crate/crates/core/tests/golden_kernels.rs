mod common;

#[test]
fn every_op_level_matches_reference_output() {
    let (ops, policies) = common::golden_manifest();
    assert_eq!(ops.len(), 2 * 15 * 5);
    assert_eq!(policies.len(), 2);
    let bad = common::golden_mismatches();
    assert!(bad.is_empty(), "{} mismatches: {bad:?}", bad.len());
}
