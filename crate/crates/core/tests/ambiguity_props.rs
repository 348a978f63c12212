use audit_core::ambiguity::{composite_uncertainty, detect_ambiguity, tier_partition, Weights};
use audit_core::analysis::{profile_from_assessments, ModelProfile};
use audit_core::{Exact, RiskAssessment};
use num_traits::Zero;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn assessment() -> impl Strategy<Value = (u8, Vec<u8>, Vec<u8>, u8)> {
    (
        0u8..=6,
        prop::sample::subsequence((2u8..=10).collect::<Vec<_>>(), 0..=4).prop_shuffle(),
        prop::sample::subsequence((1u8..=8).collect::<Vec<_>>(), 0..=8).prop_shuffle(),
        0u8..=3,
    )
        .prop_map(|(level, mut types, evidence, unc)| {
            if level >= 2 && types.is_empty() {
                types.push(2);
            }
            (level, types, evidence, unc)
        })
}

fn cohort(parts: &[(u8, Vec<u8>, Vec<u8>, u8)]) -> Vec<RiskAssessment> {
    parts
        .iter()
        .enumerate()
        .map(|(i, (level, types, evidence, unc))| RiskAssessment {
            window_id: "w".into(),
            model_id: format!("m{i}"),
            window_has_risk: u8::from(*level >= 1),
            overall_risk_level: *level,
            risk_types: types.clone(),
            evidence_signals: evidence.clone(),
            uncertainty: *unc,
        })
        .collect()
}

fn exact(c: &[RiskAssessment], tau: u8) -> audit_core::ExactScenarioDisagreement {
    composite_uncertainty(c, tau, &Weights::<Exact>::equal()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn range_and_boundary(parts in prop::collection::vec(assessment(), 2..6), tau in 1u8..=6) {
        let c = cohort(&parts);
        let d = exact(&c, tau);
        let zero = Exact::zero();
        let one = Exact::from_integer(1);
        for v in [d.d_sev, d.d_esc, d.d_evi, d.d_fac, d.composite] {
            prop_assert!(v >= zero && v <= one);
        }
        for v in d.per_model_contribution.values() {
            prop_assert!(*v >= zero && *v <= one);
        }
        prop_assert_eq!((d.d_sev + d.d_esc + d.d_evi + d.d_fac) / Exact::from_integer(4), d.composite);
        let all_zero = [d.d_sev, d.d_esc, d.d_evi, d.d_fac].iter().all(|v| v.is_zero());
        prop_assert_eq!(d.composite.is_zero(), all_zero);
        prop_assert_eq!(detect_ambiguity(&c, tau).unwrap(), !all_zero);
        prop_assert_eq!(d.ambiguous, !all_zero);
    }

    #[test]
    fn permutation_symmetry(parts in prop::collection::vec(assessment(), 2..6), rot in 0usize..6) {
        let c = cohort(&parts);
        let mut rotated = c.clone();
        rotated.rotate_left(rot % c.len());
        let (a, b) = (exact(&c, 4), exact(&rotated, 4));
        prop_assert_eq!(a.composite, b.composite);
        prop_assert_eq!(a.per_model_contribution, b.per_model_contribution);
    }

    #[test]
    fn widening_level_spread_never_lowers_composite(parts in prop::collection::vec(assessment(), 2..6)) {
        let c = cohort(&parts);
        let max = c.iter().map(|a| a.overall_risk_level).max().unwrap();
        prop_assume!(max < 6);
        let mut wider = c.clone();
        for a in wider.iter_mut().filter(|a| a.overall_risk_level == max) {
            a.overall_risk_level += 1;
            a.window_has_risk = 1;
        }
        prop_assume!(wider.iter().all(|a| a.overall_risk_level < 2 || !a.risk_types.is_empty()));
        let (before, after) = (exact(&c, 4), exact(&wider, 4));
        prop_assume!(before.d_esc == after.d_esc);
        prop_assert!(after.d_sev >= before.d_sev);
        prop_assert!(after.composite >= before.composite);
    }

    #[test]
    fn rho_high_non_increasing_in_tau(parts in prop::collection::vec(assessment(), 1..30)) {
        let c = cohort(&parts);
        let rhos: Vec<Exact> = (1..=6)
            .map(|tau| {
                let p: ModelProfile<Exact> = profile_from_assessments("m", &c, &BTreeMap::new(), tau).unwrap();
                p.rho_high
            })
            .collect();
        prop_assert!(rhos.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tier_sizes(n in 0usize..80) {
        let ds: Vec<_> = (0..n)
            .map(|i| {
                let c = cohort(&[(1, vec![2], vec![1], 0), ((i % 7) as u8, vec![2], vec![1], 0)]);
                let mut d = composite_uncertainty(&c, 4, &Weights::<f64>::equal()).unwrap();
                d.window_id = format!("w{i:03}");
                d
            })
            .collect();
        let t = tier_partition(&ds);
        prop_assert_eq!(t.sizes(), (n / 3, n - 2 * (n / 3), n / 3));
    }
}

#[test]
fn graded_values_exist_for_three_models() {
    let c = cohort(&[
        (2, vec![2], vec![1, 2, 3], 1),
        (4, vec![2], vec![1, 2, 3], 1),
        (5, vec![4], vec![1, 2, 3, 4, 5], 1),
    ]);
    let d = exact(&c, 4);
    assert!(d.composite > Exact::zero() && d.composite < Exact::from_integer(1));
}
