use v3dg_core::splat::gradcheck::{gradient_check, PARAMS, SCENE_SIZE};

#[test]
fn analytic_gradients_match_central_differences() {
    let report = gradient_check(20, 20);
    assert!(report.failures.is_empty(), "{:#?}", report.failures);
    assert_eq!(report.checked, 20 * SCENE_SIZE * PARAMS);
    assert!(
        report.significant > report.checked / 2,
        "only {} of {} gradients are non-trivial",
        report.significant,
        report.checked
    );
}
