//! Full finite-difference sweep over every differentiable operation and the
//! composite counterfactual objective, at 20 random instances apiece.

use cfx_core::gradcheck::{verify_composite, verify_tape_ops, COMPOSITE_TOLERANCE, OP_TOLERANCE};
use std::time::Instant;

#[test]
fn every_op_matches_central_differences() {
    let started = Instant::now();
    let report = verify_tape_ops(20).unwrap();
    assert!(report.checks >= 20 * 17);
    assert!(
        report.worst_relative_error < OP_TOLERANCE,
        "worst relative error {}",
        report.worst_relative_error
    );
    assert!(
        started.elapsed().as_secs() < 60,
        "op sweep took {:?}",
        started.elapsed()
    );
}

#[test]
fn composite_objective_matches_central_differences_off_kinks() {
    let started = Instant::now();
    let report = verify_composite(20).unwrap();
    assert!(report.checks >= 20 * 4);
    assert!(
        report.worst_relative_error < COMPOSITE_TOLERANCE,
        "worst relative error {}",
        report.worst_relative_error
    );
    assert!(
        started.elapsed().as_secs() < 60,
        "composite sweep took {:?}",
        started.elapsed()
    );
}
