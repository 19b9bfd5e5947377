//! Named numerical self-checks grouped into suites, reported as JSON.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::chaosnum::{
    dominant_asymptote, dominant_integral, h2_decomposition_residual, radial_bound_check, sublinearity_checks,
    Dominant, RadialIntegrand,
};
use crate::covariance::{deriv_cov, deriv_cov_altform, DerivCovKind, DerivVariances};
use crate::error::{Error, Result};
use crate::field::{replicate_rng, sample_ensemble};
use crate::quad::GaussLegendre;
use crate::specfun::{bessel_j, hermite_eval, lower_incomplete_gamma, std_normal_cdf, std_normal_pdf};
use crate::theory::{
    assembled_covariance_bracket, assembled_variance_bracket, hermite_expansion_check, rho, upsilon,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Specfun,
    Covariance,
    Chaos,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "specfun" => Ok(Suite::Specfun),
            "covariance" => Ok(Suite::Covariance),
            "chaos" => Ok(Suite::Chaos),
            "all" => Ok(Suite::All),
            _ => Err(Error::Domain(format!("unknown suite {s:?}"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Specfun => "specfun",
            Suite::Covariance => "covariance",
            Suite::Chaos => "chaos",
            Suite::All => "all",
        })
    }
}

/// `|measured − target| ≤ tolerance`, or `measured ≤ target + tolerance` for bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn close(name: impl Into<String>, measured: f64, target: f64, tolerance: f64) -> Self {
        let pass = (measured - target).abs() <= tolerance;
        Check { name: name.into(), measured, target, tolerance, pass }
    }

    fn at_most(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        let pass = measured <= bound + tolerance;
        Check { name: name.into(), measured, target: bound, tolerance, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub suite: Suite,
    pub version: String,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

pub fn run_suite(suite: Suite) -> Result<ValidationReport> {
    let checks = match suite {
        Suite::Specfun => specfun_checks()?,
        Suite::Covariance => covariance_checks()?,
        Suite::Chaos => chaos_checks()?,
        Suite::All => {
            let mut v = specfun_checks()?;
            v.extend(covariance_checks()?);
            v.extend(chaos_checks()?);
            v
        }
    };
    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport { suite, version: env!("CARGO_PKG_VERSION").to_string(), checks, pass })
}

fn max_over<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

pub fn specfun_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    // J_{n-1} + J_{n+1} = (2n/r) J_n
    let mut worst = 0.0f64;
    for r in grid(0.1, 60.0, 600) {
        for n in 1..=3 {
            let lhs = bessel_j(n - 1, r)? + bessel_j(n + 1, r)?;
            let rhs = 2.0 * n as f64 / r * bessel_j(n, r)?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    out.push(Check::close("bessel_j_three_term_recurrence", worst, 0.0, 1e-12));

    // J_0' = −J_1 by central differences
    let h = 1e-5;
    let fd = max_over(grid(0.5, 40.0, 200).map(|r| {
        let d = (bessel_j(0, r + h).unwrap() - bessel_j(0, r - h).unwrap()) / (2.0 * h);
        (d + bessel_j(1, r).unwrap()).abs()
    }));
    out.push(Check::close("bessel_j0_derivative", fd, 0.0, 1e-8));

    // ∫ He_m He_n φ = n! δ_mn
    let rule = GaussLegendre::new(40);
    let mut worst = 0.0f64;
    for m in 0..=7u32 {
        for n in 0..=m {
            let v = rule.integrate_panels(|x| hermite_eval(m, x) * hermite_eval(n, x) * std_normal_pdf(x), -14.0, 14.0, 1.0);
            let target = if m == n { (1..=n).map(f64::from).product::<f64>() } else { 0.0 };
            worst = worst.max((v - target).abs() / target.max(1.0));
        }
    }
    out.push(Check::close("hermite_orthogonality", worst, 0.0, 1e-10));

    // ρ_j' = −√(2π) ρ_{j+1}
    let sq = (2.0 * std::f64::consts::PI).sqrt();
    let mut worst = 0.0f64;
    for x in grid(-4.0, 4.0, 81) {
        for j in 0..7 {
            let d = (rho(j, x + h)? - rho(j, x - h)?) / (2.0 * h);
            worst = worst.max((d + sq * rho(j + 1, x)?).abs());
        }
    }
    out.push(Check::close("rho_derivative_recursion", worst, 0.0, 1e-8));

    let fd = max_over(grid(-6.0, 6.0, 121).map(|x| {
        ((std_normal_cdf(x + h) - std_normal_cdf(x - h)) / (2.0 * h) - std_normal_pdf(x)).abs()
    }));
    out.push(Check::close("normal_cdf_derivative_is_pdf", fd, 0.0, 1e-9));

    // γ(1, x) = 1 − e^{−x}
    let mut worst = 0.0f64;
    for x in grid(0.01, 30.0, 100) {
        worst = worst.max((lower_incomplete_gamma(1.0, x)? - (1.0 - (-x).exp())).abs());
    }
    out.push(Check::close("incomplete_gamma_order_one", worst, 0.0, 1e-13));

    let worst = max_over(grid(-4.0, 4.0, 401).map(hermite_expansion_check));
    out.push(Check::close("upsilon_hermite_expansion", worst, 0.0, 1e-10));
    Ok(out)
}

pub fn covariance_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for k in [DerivCovKind::G3, DerivCovKind::G5, DerivCovKind::G6, DerivCovKind::G7] {
        let mut worst = 0.0f64;
        for r in grid(0.01, 50.0, 1000) {
            worst = worst.max((deriv_cov(k, r) - deriv_cov_altform(k, r)?).abs());
        }
        out.push(Check::close(format!("{k}_forms_agree"), worst, 0.0, 1e-10));
    }
    let v = DerivVariances::BERRY;
    let limits = [
        ("g1_at_zero", DerivCovKind::G1, v.var_di),
        ("g2_at_zero", DerivCovKind::G2, v.var_di),
        ("g5_at_zero", DerivCovKind::G5, v.var_d11),
        ("g6_at_zero", DerivCovKind::G6, v.var_d12),
        ("g7_at_zero", DerivCovKind::G7, v.var_d22),
    ];
    for (name, k, target) in limits {
        out.push(Check::close(name, deriv_cov(k, 0.0), target, 1e-15));
    }
    out.push(Check::close(
        "corr_d11_d22_at_zero",
        deriv_cov(DerivCovKind::G6, 0.0) / (v.var_d11 * v.var_d22).sqrt(),
        1.0 / 3.0,
        1e-15,
    ));
    // eigenfunction identity ∂11 f + ∂22 f + f = 0 on random ensembles
    let mut worst = 0.0f64;
    for s in 0..10u64 {
        let e = sample_ensemble(256, &mut replicate_rng(0xC0FFEE, s))?;
        for i in 0..100 {
            let t = (s * 100 + i) as f64;
            let x = [37.0 * (0.7 * t).sin(), 37.0 * (1.3 * t).cos()];
            let d = e.eval_derivs(x);
            worst = worst.max((d.d11 + d.d22 + d.f).abs());
        }
    }
    out.push(Check::close("eigenfunction_identity", worst, 0.0, 1e-10));
    Ok(out)
}

pub fn chaos_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let tp = 32.0 * std::f64::consts::PI;
    let (mut wv, mut wc) = (0.0f64, 0.0f64);
    for u in grid(-4.0, 4.0, 200) {
        wv = wv.max((assembled_variance_bracket(u) - upsilon(u) / tp).abs());
        let target = std_normal_pdf(u) * u * (u * u - 1.0) / (4.0 * std::f64::consts::PI.sqrt());
        wc = wc.max((assembled_covariance_bracket(u) - target).abs());
    }
    out.push(Check::close("assembled_variance_bracket", wv, 0.0, 1e-10));
    out.push(Check::close("assembled_covariance_bracket", wc, 0.0, 1e-10));

    let n = 50.0;
    let asymptote = dominant_asymptote(n);
    let i2 = dominant_integral(n, Dominant::G2sq)?;
    let i4 = dominant_integral(n, Dominant::G4sq)?;
    let i7 = dominant_integral(n, Dominant::G7sq)?;
    out.push(Check::close("dominant_g2sq_over_asymptote_n50", i2 / asymptote, 1.0, 0.1));
    out.push(Check::close("dominant_g2sq_over_g7sq_n50", i2 / i7, 1.0, 0.05));
    out.push(Check::close("dominant_g2sq_over_g4sq_n50", i2 / i4, 1.0, 0.05));
    out.push(Check::close("dominant_g4sq_over_g7sq_n50", i4 / i7, 1.0, 0.05));

    for (h, n) in [
        (RadialIntegrand::DerivSq(DerivCovKind::G2), 10.0),
        (RadialIntegrand::DerivSq(DerivCovKind::G7), 20.0),
    ] {
        let b = radial_bound_check(h, n)?;
        out.push(Check::at_most(format!("radial_bound_{h}_n{n}"), b.lhs / b.rhs, 1.0, 1e-6));
    }

    let rep = sublinearity_checks(&[5.0, 10.0, 20.0, 40.0, 80.0])?;
    out.push(Check::close("r_g2_closed_form", rep.closed_form_error, 0.0, 1e-8));
    for g in &rep.growth {
        out.push(Check::at_most(
            format!("slope_r{}_{}", g.power, g.kind),
            g.slope,
            g.claimed,
            crate::chaosnum::SLOPE_TOLERANCE,
        ));
    }

    let e = sample_ensemble(64, &mut replicate_rng(0xBEEF, 0))?;
    let worst = max_over((0..200).map(|i| {
        let t = i as f64;
        h2_decomposition_residual(&e.eval_derivs([20.0 * (0.37 * t).sin(), 20.0 * (0.91 * t).cos()]))
    }));
    out.push(Check::close("h2_decomposition", worst, 0.0, 1e-10));
    Ok(out)
}
