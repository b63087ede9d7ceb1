mod common;

use common::{contrastive_gradient_check, objective_gradient_check, Term};

const MAX_RELATIVE_ERROR: f64 = 1e-4;

fn assert_term(term: Term) {
    let r = objective_gradient_check(term);
    assert!(r.coordinates > 0);
    assert!(
        r.max_relative_error < MAX_RELATIVE_ERROR,
        "{term:?}: {} at {:?}",
        r.max_relative_error,
        r.worst
    );
}

#[test]
fn classification_loss_gradient() {
    assert_term(Term::Classification);
}

#[test]
fn attribute_kl_gradient() {
    assert_term(Term::AttributeKl);
}

#[test]
fn neighbor_kl_gradient() {
    assert_term(Term::NeighborKl);
}

#[test]
fn self_supervision_gradient() {
    assert_term(Term::SelfSupervision);
}

#[test]
fn assembled_objective_gradient() {
    assert_term(Term::Total);
}

#[test]
fn contrastive_estimator_gradient() {
    let r = contrastive_gradient_check();
    assert!(r.max_relative_error < MAX_RELATIVE_ERROR, "{r:?}");
}
