//! Central-difference verification of every backward rule, plus the
//! composed checks: one full transformer layer and the complete masked
//! prototype loss differentiated end to end.

use mocos_core::autodiff::op_gradient_checks;
use mocos_core::train::{full_loss_gradient_check, mgt_layer_gradient_check};

const OP_TOL: f64 = 1e-5;
const COMPOSED_TOL: f64 = 1e-4;

#[test]
fn every_op_matches_central_differences() {
    let start = std::time::Instant::now();
    let mut seen = 0usize;
    for seed in 0..10u64 {
        let report = op_gradient_checks(seed).unwrap();
        assert!(!report.is_empty());
        for (name, err) in &report {
            assert!(
                *err <= OP_TOL,
                "seed {seed}: {name} gradient error {err:.3e}"
            );
        }
        seen = report.len();
    }
    assert!(seen >= 20, "op catalog shrank to {seen} entries");
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn composed_transformer_layer_matches_central_differences() {
    for seed in [7u64, 8, 9] {
        let err = mgt_layer_gradient_check(seed).unwrap();
        assert!(err <= COMPOSED_TOL, "seed {seed}: layer error {err:.3e}");
    }
}

#[test]
fn composed_masked_prototype_loss_matches_central_differences() {
    for seed in [7u64, 8, 9] {
        let err = full_loss_gradient_check(seed).unwrap();
        assert!(err <= COMPOSED_TOL, "seed {seed}: loss error {err:.3e}");
    }
}
