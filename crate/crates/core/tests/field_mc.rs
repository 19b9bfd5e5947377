use berry_core::covariance::{cov_field, deriv_cov, DerivCovKind};
use berry_core::field::{
    replicate_rng, sample_ensemble, sample_grid, sample_lambda, write_brw1, GridSpec, LambdaLaw, Link, MixtureSpec,
    WaveEnsemble,
};
use berry_core::harness::{normality_test, NormalityKind};
use berry_core::par::with_threads;

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn ensembles(seed: u64, count: u64) -> Vec<WaveEnsemble> {
    (0..count).map(|r| sample_ensemble(256, &mut replicate_rng(seed, r)).unwrap()).collect()
}

#[test]
fn field_covariance_converges_to_j0() {
    let es = ensembles(11, 2000);
    for r in [0.5, 1.0, 2.0, 5.0] {
        let prods: Vec<f64> = es.iter().map(|e| e.eval_field([0.0, 0.0]) * e.eval_field([0.0, r])).collect();
        let (m, se) = mean_se(&prods);
        assert!((m - cov_field(r)).abs() <= 3.0 * se, "r={r}: {m} ± {se} vs {}", cov_field(r));
    }
}

#[test]
fn derivative_covariances_on_the_axis() {
    let es = ensembles(12, 2000);
    let check = |name: &str, pairs: Vec<f64>, target: f64| {
        let (m, se) = mean_se(&pairs);
        assert!((m - target).abs() <= 3.0 * se, "{name}: {m} ± {se} vs {target}");
    };
    for r in [0.7, 1.5, 3.0] {
        let d: Vec<_> = es.iter().map(|e| (e.eval_derivs([0.0, 0.0]), e.eval_derivs([0.0, r]))).collect();
        check("d2 d2", d.iter().map(|(a, b)| a.d2 * b.d2).collect(), deriv_cov(DerivCovKind::G2, r));
        check("d1 d1", d.iter().map(|(a, b)| a.d1 * b.d1).collect(), deriv_cov(DerivCovKind::G1, r));
        check("d22 d22", d.iter().map(|(a, b)| a.d22 * b.d22).collect(), deriv_cov(DerivCovKind::G7, r));
        check("d2 d22", d.iter().map(|(a, b)| a.d2 * b.d22).collect(), deriv_cov(DerivCovKind::G4, r));
        // the two mixed pairs carry opposite signs in this orientation
        let g3 = deriv_cov(DerivCovKind::G3, r);
        check("d1 d12", d.iter().map(|(a, b)| a.d1 * b.d12).collect(), g3);
        check("d11 d2", d.iter().map(|(a, b)| a.d11 * b.d2).collect(), -g3);
    }
}

#[test]
fn mixed_pair_signs_are_resolved() {
    // at r = 1.5 |g3| is about 28 standard errors, so the sign is unambiguous
    let es = ensembles(13, 2000);
    let r = 1.5;
    let a: Vec<f64> = es.iter().map(|e| e.eval_derivs([0.0, 0.0]).d1 * e.eval_derivs([0.0, r]).d12).collect();
    let b: Vec<f64> = es.iter().map(|e| e.eval_derivs([0.0, 0.0]).d11 * e.eval_derivs([0.0, r]).d2).collect();
    assert!(mean_se(&a).0 < 0.0 && mean_se(&b).0 > 0.0);
}

#[test]
fn value_at_a_point_is_gaussian() {
    let values: Vec<f64> = ensembles(14, 5000).iter().map(|e| e.eval_field([0.0, 0.0])).collect();
    let r = normality_test(&values, NormalityKind::AndersonDarling).unwrap();
    assert!(r.p_value.unwrap() > 0.01, "{r:?}");
    let (m, se) = mean_se(&values);
    assert!(m.abs() <= 3.0 * se);
}

#[test]
fn stationary_mean_over_a_window() {
    // the window mean of one realization is nearly deterministic; average over 40
    let means: Vec<f64> = ensembles(15, 40)
        .iter()
        .map(|e| {
            let s = sample_grid(e, GridSpec::new(25.0, 2).unwrap(), false).unwrap();
            s.values.iter().sum::<f64>() / s.values.len() as f64
        })
        .collect();
    let (m, se) = mean_se(&means);
    assert!(m.abs() <= 3.0 * se, "{m} ± {se}");
}

#[test]
fn samples_are_identical_across_worker_counts() {
    let render = |threads| {
        with_threads(Some(threads), || {
            let e = sample_ensemble(256, &mut replicate_rng(99, 7)).unwrap();
            let mut out = Vec::new();
            write_brw1(&sample_grid(&e, GridSpec::new(20.0, 4).unwrap(), true).unwrap(), &mut out).unwrap();
            out
        })
        .unwrap()
    };
    assert_eq!(render(1), render(3));
}

#[test]
fn lambda_moments() {
    let draws = |law: LambdaLaw| -> Vec<f64> {
        let m = MixtureSpec::new(Link::Scale, law).unwrap();
        let mut rng = replicate_rng(16, 0);
        (0..200_000).map(|_| sample_lambda(&m, &mut rng).unwrap().powi(2)).collect()
    };
    let (m, se) = mean_se(&draws(LambdaLaw::ParetoSqrt { alpha: 4.0 }));
    assert!((m - 4.0 / 3.0).abs() <= 3.0 * se, "{m} ± {se}");
    let (m, se) = mean_se(&draws(LambdaLaw::ExpSqrt { theta: 2.0 }));
    assert!((m - 2.0).abs() <= 3.0 * se, "{m} ± {se}");
}
