mod common;

use common::*;

#[test]
fn straight_bar_fold_matches_unrolled_bar() {
    let d = fold_equivalence(0.0);
    assert!(d <= 1e-12, "{d:e}");
}

#[test]
fn slanted_bar_fold_matches_unrolled_bar() {
    let d = fold_equivalence(0.7);
    assert!(d <= 1e-12, "{d:e}");
}

#[test]
fn uniform_magnetisation_is_exchange_free() {
    let r = uniform_exchange_residual();
    assert!(r <= 1e-10, "{r:e}");
}

#[test]
fn exchange_sinusoid_converges_at_second_order() {
    let errs: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&n| exchange_sinusoid_error(n))
        .collect();
    for w in errs.windows(2) {
        let p = (w[0] / w[1]).log2();
        assert!(p >= 1.9, "errors {errs:?}");
    }
    assert!(errs[2] < 1e-2);
}
