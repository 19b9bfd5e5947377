use berry_core::field::{replicate_rng, sample_ensemble, GridSpec, LambdaLaw, Link, MixtureSpec};
use berry_core::geometry::{epc_curve, EpcMethod, EpcSource};
use berry_core::harness::{convergence_study, parse_levels, run_mc, MCConfig, NormalityKind};
use berry_core::specfun::std_normal_sf;

fn paired_estimates(levels: &[f64], reps: u64, n: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut diffs = vec![Vec::new(); levels.len()];
    let mut critical = vec![0.0; levels.len()];
    for r in 0..reps {
        let e = sample_ensemble(256, &mut replicate_rng(500, r)).unwrap();
        let s = berry_core::field::sample_grid(&e, GridSpec::new(n, 8).unwrap(), false).unwrap();
        let p = epc_curve(EpcSource::Sample(&s), levels, EpcMethod::Pixel).unwrap();
        let c = epc_curve(
            EpcSource::Ensemble { ensemble: &e, half_width: n, scan_resolution: 4, seed: None },
            levels,
            EpcMethod::Critical,
        )
        .unwrap();
        for k in 0..levels.len() {
            diffs[k].push(p[k].ec - c[k].ec);
            critical[k] += c[k].ec / reps as f64;
        }
    }
    (diffs, critical)
}

#[test]
fn pixel_and_critical_estimators_agree_on_average() {
    // The halved pixel count keeps the window's own Euler term, expectation Φ̄(u),
    // which the interior critical count does not have.
    let levels = [-2.0, -0.5, 0.5, 2.0];
    let (diffs, critical) = paired_estimates(&levels, 50, 20.0);
    for (k, &u) in levels.iter().enumerate() {
        let n = diffs[k].len() as f64;
        let m = diffs[k].iter().sum::<f64>() / n;
        let se = (diffs[k].iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let offset = std_normal_sf(u);
        assert!((m - offset).abs() <= 3.0 * se, "u={u}: paired difference {m} ± {se}, expected {offset}");
        let pixel = critical[k] + m - offset;
        let rel = (pixel - critical[k]).abs() / critical[k].abs().max(1.0);
        assert!(rel <= 0.1, "u={u}: pixel {pixel} vs critical {}", critical[k]);
    }
}

#[test]
fn scale_mixture_means_track_perturbed_theory() {
    let cfg = MCConfig {
        replicates: 300,
        half_width: 30.0,
        pixels_per_unit: 4,
        waves: 256,
        levels: parse_levels("-2.5:2.5:0.5").unwrap(),
        method: EpcMethod::Pixel,
        mixture: Some(MixtureSpec::new(Link::Scale, LambdaLaw::ParetoSqrt { alpha: 4.0 }).unwrap()),
        master_seed: 600,
        normality_test: NormalityKind::AndersonDarling,
        scan_resolution: 4,
        memory_budget_bytes: None,
    };
    let rep = run_mc(&cfg).unwrap();
    for s in &rep.levels {
        let band = (3.0 * s.std_error).max(0.1 * s.theory_mean.abs());
        assert!(
            (s.sample_mean - s.theory_mean).abs() <= band,
            "u={}: {} vs {} (band {band})",
            s.level,
            s.sample_mean,
            s.theory_mean
        );
    }
}

#[test]
fn convergence_table_flags_the_unit_level() {
    let template = MCConfig {
        replicates: 12,
        half_width: 5.0,
        pixels_per_unit: 2,
        waves: 128,
        levels: vec![1.0, 1.5, 2.0, 2.5],
        method: EpcMethod::Pixel,
        mixture: None,
        master_seed: 700,
        normality_test: NormalityKind::AndersonDarling,
        scan_resolution: 4,
        memory_budget_bytes: None,
    };
    let t = convergence_study(&[5.0, 10.0], &template).unwrap();
    assert_eq!(t.rows.len(), 8);
    assert_eq!(t.summary.len(), 2);
    assert!(t.rows.iter().filter(|r| r.level == 1.0).all(|r| r.degenerate && r.var_ratio.is_none()));
    assert!(t.summary.iter().all(|s| s.median_var_ratio.is_some()));
    assert!(convergence_study(&[10.0, 5.0], &template).is_err());
}

/// Second-chaos symbol of the EC density `δ(∇f) det(∇²f) 1{f ≥ u}` on the unit
/// circle. Writing `∇²f = −f I/2 + H̃` with `H̃` traceless and independent of `f`
/// gives `det = ¼H₂(f) − (H₂(α) + H₂(β))/8`, and every term has a constant symbol.
fn ec_symbol(u: f64) -> f64 {
    let phi = (-0.5 * u * u).exp() / std::f64::consts::TAU.sqrt();
    phi * u * (u * u - 1.0) / (8.0 * std::f64::consts::PI)
}

#[test]
fn ec_variance_matches_isotropic_symbol() {
    let n = 40.0;
    let cfg = MCConfig {
        replicates: 300,
        half_width: n,
        pixels_per_unit: 4,
        waves: 256,
        levels: vec![-2.0, 2.0, 2.5],
        method: EpcMethod::Pixel,
        mixture: None,
        master_seed: 800,
        normality_test: NormalityKind::AndersonDarling,
        scan_resolution: 4,
        memory_budget_bytes: None,
    };
    let rep = run_mc(&cfg).unwrap();
    // Var(∫H₂(f)) / (2N)³ → 8C*/π
    let s_density = 8.0 * berry_core::theory::variance_constant() / std::f64::consts::PI;
    for s in &rep.levels {
        let target = (2.0 * n).powi(3) * ec_symbol(s.level).powi(2) * s_density;
        let ratio = s.sample_var / target;
        assert!((0.75..=1.25).contains(&ratio), "u={}: ratio {ratio}", s.level);
    }
}
