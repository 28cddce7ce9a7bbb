mod common;

use common::{base_of, close, d6, dgp, oracle_mean};
use proptest::prelude::*;
use transport_core::bias::LevelMultiplier;
use transport_core::{
    estimate_triple, fit_nuisance, generate, Arm, BiasFunctionSpec, Design, Estimator, EstimatorOptions, EvalContext,
    ModelSpec, Modulation, ModulationRule, NuisanceModels, StudyDataset, Target,
};

fn applicable(design: Design) -> Vec<Estimator> {
    Estimator::ALL
        .into_iter()
        .filter(|e| e.check_design(design).is_ok())
        .collect()
}

fn x2_modulation(ds: &StudyDataset) -> Modulation {
    Modulation::new(
        "x2",
        &ds.covariate_names,
        ModulationRule::Levels(vec![
            LevelMultiplier {
                value: 0.0,
                multiplier: 0.5,
            },
            LevelMultiplier {
                value: 1.0,
                multiplier: 2.0,
            },
        ]),
    )
    .unwrap()
}

fn fitted(n: usize, seed: u64, design: Design) -> Option<(StudyDataset, NuisanceModels)> {
    let ds = generate(&dgp(n, seed, design)).ok()?;
    let nm = fit_nuisance(&ds, &ModelSpec::default()).ok()?;
    Some((ds, nm))
}

#[test]
fn d6_all_estimators() {
    for design in [Design::NonNested, Design::Nested] {
        let ds = d6(design);
        let nm = fit_nuisance(&ds, &ModelSpec::intercept_only()).unwrap();
        let ctx = EvalContext::new(&ds, &nm).unwrap();
        for e in applicable(design) {
            let [m1, m0, ate] = estimate_triple(&ctx, e, &BiasFunctionSpec::zero(), &EstimatorOptions::default()).unwrap();
            assert!(close(m1, 12.0, 1e-12), "{e} {design:?}: {m1}");
            assert!(close(m0, 7.0, 1e-12), "{e} {design:?}: {m0}");
            assert!(close(ate, 5.0, 1e-12), "{e} {design:?}: {ate}");
        }
    }
}

#[test]
fn d6_whole_population_rejected_for_non_nested() {
    assert!(Estimator::Aipw2.check_design(Design::NonNested).is_err());
    assert_eq!(Estimator::Aipw2.target(), Target::WholePopulation);
}

#[test]
fn d6_constant_bias() {
    // With p̂ = 2/3 and spec (u0 = 1, δ = 2): non-nested shifts are −3 and −1, nested
    // shifts are scaled by n0/n = 1/3.
    let bias = BiasFunctionSpec::constant(1.0, 2.0);
    let ds = d6(Design::Nested);
    let nm = fit_nuisance(&ds, &ModelSpec::intercept_only()).unwrap();
    let ctx = EvalContext::new(&ds, &nm).unwrap();
    let opts = EstimatorOptions::default();
    for e in applicable(Design::Nested) {
        let [m1, m0, ate] = estimate_triple(&ctx, e, &bias, &opts).unwrap();
        let (expect1, expect0, expect_ate) = match e.target() {
            Target::NonRandomized => (9.0, 6.0, 3.0),
            Target::WholePopulation => (11.0, 7.0 - 1.0 / 3.0, 5.0 - 2.0 / 3.0),
        };
        assert!(close(m1, expect1, 1e-12), "{e}: {m1}");
        assert!(close(m0, expect0, 1e-12), "{e}: {m0}");
        assert!(close(ate, expect_ate, 1e-12), "{e}: {ate}");
    }
}

#[test]
fn zero_bias_bc_equals_base() {
    let mut checked = 0;
    for seed in 0..20 {
        for design in [Design::NonNested, Design::Nested] {
            let Some((ds, nm)) = fitted(150, seed, design) else { continue };
            let ctx = EvalContext::new(&ds, &nm).unwrap();
            let opts = EstimatorOptions::default();
            for e in applicable(design) {
                let bc = estimate_triple(&ctx, e, &BiasFunctionSpec::zero(), &opts).unwrap();
                let base = estimate_triple(&ctx, base_of(e), &BiasFunctionSpec::zero(), &opts).unwrap();
                for k in 0..3 {
                    assert!(close(bc[k], base[k], 1e-12), "{e}: {} vs {}", bc[k], base[k]);
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 300);
}

#[test]
fn constant_bias_bc_outcome_iow_equals_corrected_iow2() {
    let (ds, nm) = fitted(400, 3, Design::NonNested).unwrap();
    let ctx = EvalContext::new(&ds, &nm).unwrap();
    let opts = EstimatorOptions::default();
    for u0 in [-40.0, 0.0, 40.0] {
        for delta in [-60.0, -20.0, 0.0, 20.0, 60.0] {
            let bias = BiasFunctionSpec::constant(u0, delta);
            let bc = estimate_triple(&ctx, Estimator::BcOutcomeIow, &bias, &opts).unwrap();
            let iow2 = estimate_triple(&ctx, Estimator::Iow2, &bias, &opts).unwrap();
            for k in 0..3 {
                assert!(close(bc[k], iow2[k], 1e-12));
            }
        }
    }
}

#[test]
fn nested_bc_outcome_exact_with_constant_participation() {
    let ds = generate(&dgp(400, 5, Design::Nested)).unwrap();
    let spec = ModelSpec {
        participation: transport_core::DesignSpec::intercept_only(),
        ..ModelSpec::default()
    };
    let nm = fit_nuisance(&ds, &spec).unwrap();
    let ctx = EvalContext::new(&ds, &nm).unwrap();
    let opts = EstimatorOptions::default();
    let bias = BiasFunctionSpec::constant(-2.0, 5.0);
    let bc = estimate_triple(&ctx, Estimator::BcOutcomeIpw, &bias, &opts).unwrap();
    let ipw2 = estimate_triple(&ctx, Estimator::Ipw2, &bias, &opts).unwrap();
    for k in 0..3 {
        assert!(close(bc[k], ipw2[k], 1e-12), "{} vs {}", bc[k], ipw2[k]);
    }
}

#[test]
fn truncation_caps_weighted_estimators_only() {
    let (ds, nm) = fitted(300, 8, Design::NonNested).unwrap();
    let ctx = EvalContext::new(&ds, &nm).unwrap();
    let zero = BiasFunctionSpec::zero();
    let plain = EstimatorOptions::default();
    let capped = EstimatorOptions {
        truncate_quantile: Some(0.9),
    };
    let om = estimate_triple(&ctx, Estimator::Om, &zero, &plain).unwrap();
    assert_eq!(om, estimate_triple(&ctx, Estimator::Om, &zero, &capped).unwrap());
    let iow1 = estimate_triple(&ctx, Estimator::Iow1, &zero, &plain).unwrap();
    assert_ne!(iow1, estimate_triple(&ctx, Estimator::Iow1, &zero, &capped).unwrap());
}

fn scale(v: f64) -> f64 {
    1e-10 * v.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimators_match_oracle(
        seed in any::<u64>(),
        n in 60usize..160,
        nested in any::<bool>(),
        u0 in -50.0f64..50.0,
        delta in -50.0f64..50.0,
        modulated in any::<bool>(),
    ) {
        let design = if nested { Design::Nested } else { Design::NonNested };
        let fit = fitted(n, seed, design);
        prop_assume!(fit.is_some());
        let (ds, nm) = fit.unwrap();
        let bias = if modulated {
            BiasFunctionSpec::modulated(u0, delta, x2_modulation(&ds))
        } else {
            BiasFunctionSpec::constant(u0, delta)
        };
        let ctx = EvalContext::new(&ds, &nm).unwrap();
        for e in applicable(design) {
            let got = estimate_triple(&ctx, e, &bias, &EstimatorOptions::default()).unwrap();
            let m1 = oracle_mean(&ds, &nm, e, Arm::Treated, &bias);
            let m0 = oracle_mean(&ds, &nm, e, Arm::Control, &bias);
            prop_assert!(close(got[0], m1, scale(m1)), "{} MeanA1 {} vs {}", e, got[0], m1);
            prop_assert!(close(got[1], m0, scale(m0)), "{} MeanA0 {} vs {}", e, got[1], m0);
            prop_assert!(close(got[2], m1 - m0, scale(m1 - m0)), "{} ATE", e);
        }
    }

    #[test]
    fn constant_shift_laws(
        seed in any::<u64>(),
        nested in any::<bool>(),
        u0 in -50.0f64..50.0,
        delta in -70.0f64..70.0,
    ) {
        let design = if nested { Design::Nested } else { Design::NonNested };
        let fit = fitted(120, seed, design);
        prop_assume!(fit.is_some());
        let (ds, nm) = fit.unwrap();
        let ctx = EvalContext::new(&ds, &nm).unwrap();
        let opts = EstimatorOptions::default();
        let ratio = ds.n_target() as f64 / ds.n() as f64;
        let bias = BiasFunctionSpec::constant(u0, delta);
        for e in applicable(design) {
            if e == Estimator::BcOutcomeIpw {
                continue;
            }
            let base = estimate_triple(&ctx, e, &BiasFunctionSpec::zero(), &opts).unwrap();
            let shifted = estimate_triple(&ctx, e, &bias, &opts).unwrap();
            let factor = if e.target() == Target::NonRandomized { 1.0 } else { ratio };
            let expect = [
                base[0] - (u0 + delta) * factor,
                base[1] - u0 * factor,
                base[2] - delta * factor,
            ];
            for k in 0..3 {
                prop_assert!(close(shifted[k], expect[k], 1e-12 * expect[k].abs().max(1.0) * 10.0), "{} {}", e, k);
            }
        }
    }

    #[test]
    fn ate_is_difference_of_means(seed in any::<u64>(), u0 in -10.0f64..10.0, delta in -10.0f64..10.0) {
        let fit = fitted(100, seed, Design::Nested);
        prop_assume!(fit.is_some());
        let (ds, nm) = fit.unwrap();
        let ctx = EvalContext::new(&ds, &nm).unwrap();
        let bias = BiasFunctionSpec::constant(u0, delta);
        for e in Estimator::ALL {
            let [m1, m0, ate] = estimate_triple(&ctx, e, &bias, &EstimatorOptions::default()).unwrap();
            prop_assert_eq!(ate, m1 - m0);
        }
    }
}
