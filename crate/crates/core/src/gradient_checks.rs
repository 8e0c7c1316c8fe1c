//! Analytic gradients of every loss term against central differences.

use crate::model::ReconKind;
use crate::test_oracles::*;
use proptest::prelude::*;

fn case_from(seed: u64, recon: ReconKind) -> GradCase {
    (0..)
        .find_map(|k| grad_case(seed.wrapping_mul(7919).wrapping_add(k), recon))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_term_matches_finite_differences(seed in any::<u64>(), gaussian in any::<bool>()) {
        let recon = if gaussian { ReconKind::Gaussian } else { ReconKind::Bernoulli };
        let c = case_from(seed, recon);
        for term in Term::ALL {
            let err = term_grad_error(&c, term);
            prop_assert!(err <= GRAD_REL_TOL, "{term:?}: relative error {err:e}");
        }
    }

    #[test]
    fn standard_kl_and_probability_bce_match_finite_differences(seed in any::<u64>()) {
        let err = standalone_grad_error(seed);
        prop_assert!(err <= GRAD_REL_TOL, "relative error {err:e}");
    }
}

#[test]
fn latent_match_gradient_skips_the_first_pass() {
    let c = case_from(3, ReconKind::Bernoulli);
    let (value, analytic) = term_value(&c.state, &c, Term::LatentMatch, true);
    assert!((value - frozen_match_value(&c.state, &c.state, &c)).abs() < 1e-12);
    let frozen = numeric_grad(&c.state, |s| frozen_match_value(s, &c.state, &c));
    assert!(max_rel_err(&analytic, &frozen) <= GRAD_REL_TOL);
    // Letting the first pass move with the parameters gives a different
    // gradient, so the check above is not vacuous.
    let coupled = numeric_grad(&c.state, |s| frozen_match_value(s, s, &c));
    assert!(max_rel_err(&analytic, &coupled) > 1e-2);
}

#[test]
fn latent_distill_gradient_leaves_the_teacher_alone() {
    let c = case_from(5, ReconKind::Bernoulli);
    let before = c.old.checksum();
    let (_, g) = term_value(&c.state, &c, Term::LatentDistill, true);
    assert!(g.iter().any(|t| t.data().iter().any(|v| *v != 0.0)));
    assert_eq!(c.old.checksum(), before);
}
