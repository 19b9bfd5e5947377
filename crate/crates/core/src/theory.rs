//! Closed-form limit theory: expected modified EPC, limiting variance, the
//! second-chaos coefficients, `ρ_j` functions and the Gaussian-mixture variants.
//!
//! Normalization: the CLT divides by `√(½ L_1(T_N) L_2(T_N)) = √((2N)³)` for
//! `T_N = [−N, N]²`, so the variance of the EPC is `≈ (2N)³ V(u)`, not `N³ V(u)`.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use crate::error::{domain, Result};
use crate::field::{LambdaLaw, Link, MixtureSpec};
use crate::geometry::fmt_f64;
use crate::quad;
use crate::specfun::{bessel_k01, hermite_eval, lower_incomplete_gamma, std_normal_pdf, std_normal_sf};

/// Second spectral moment of the Berry field.
pub const LAMBDA_F: f64 = 0.5;

/// `C* = (1 − √2)/3 + ln(1 + √2)`.
pub fn variance_constant() -> f64 {
    (1.0 - SQRT_2) / 3.0 + SQRT_2.ln_1p()
}

/// `C*/π ≈ 0.2366`, the constant of the dominant covariance integral.
pub fn variance_constant_over_pi() -> f64 {
    variance_constant() / PI
}

/// `υ(u) = φ(u)² u² (u² − 1)²`.
pub fn upsilon(u: f64) -> f64 {
    let p = std_normal_pdf(u);
    let w = u * u - 1.0;
    p * p * u * u * w * w
}

/// Expected modified EPC on `[−N, N]²`: `(2N)² (2π)^{−3/2} λ_f u e^{−u²/2}`.
pub fn mean_epc(u: f64, half_width: f64) -> f64 {
    let area = 4.0 * half_width * half_width;
    area * (2.0 * PI).powf(-1.5) * LAMBDA_F * u * (-0.5 * u * u).exp()
}

/// `V(u) = υ(u) C* / (8π²)`.
pub fn variance_limit(u: f64) -> f64 {
    upsilon(u) * variance_constant() / (8.0 * PI * PI)
}

/// `(2N)³ V(u)`, the large-window variance of the EPC.
pub fn var_total(u: f64, half_width: f64) -> f64 {
    (2.0 * half_width).powi(3) * variance_limit(u)
}

/// Second-chaos coefficients of the modified EPC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosCoeffs {
    pub c2: f64,
    pub c5: f64,
    pub cz: f64,
    pub cz5: f64,
    pub c25: f64,
    pub c2z: f64,
}

pub fn chaos_coeffs(u: f64) -> ChaosCoeffs {
    let p = std_normal_pdf(u);
    let tail = std_normal_sf(u);
    let s = 1.0 / PI.sqrt();
    let poly = u * p + u * u * u * p;
    let r8 = 8f64.sqrt();
    ChaosCoeffs {
        c2: -s * 0.25 * u * p,
        c5: s * (poly / 6.0 + tail / 4.0),
        cz: s * poly / 12.0,
        cz5: s * (poly / (3.0 * r8) + tail / r8),
        c25: 0.0,
        c2z: 0.0,
    }
}

// covariance weights of the normalized pairs, unit dominant integral
const WA: f64 = 0.816_496_580_927_726; // 4/√24
const WB: f64 = 2.309_401_076_758_503; // 4/√3
const WC: f64 = 0.942_809_041_582_063_4; // √8/3
const WD: f64 = 8.0 / 3.0;
const WE: f64 = 1.0 / 3.0;

/// The sixteen-term variance bracket with every `g_i²` integral replaced by one.
/// Equals `υ(u)/(32π)`.
pub fn assembled_variance_bracket(u: f64) -> f64 {
    let ChaosCoeffs { c2, c5, cz, cz5, .. } = chaos_coeffs(u);
    let (a, b, c, d, e) = (WA, WB, WC, WD, WE);
    0.5 * c2 * c2 * 4.0 + 0.5 * c2 * c5 * b * b + 0.5 * c2 * cz * a * a + c2 * cz5 * (-a * b)
        + 0.5 * c5 * c2 * b * b + 0.5 * c5 * c5 * d * d + 0.5 * c5 * cz * c * c + c5 * cz5 * (-c * d)
        + 0.5 * cz * c2 * a * a + 0.5 * cz * c5 * c * c + 0.5 * cz * cz * e * e + cz * cz5 * (-c * e)
        + cz5 * c2 * (-a * b) + cz5 * c5 * (-c * d) + cz5 * cz * (-c * e) + cz5 * cz5 * (d * e + c * c)
}

/// The covariance bracket between the EPC second chaos and `∫H_2(f)`, unit integrals.
/// Equals `φ(u) u (u² − 1) / (4√π)`.
pub fn assembled_covariance_bracket(u: f64) -> f64 {
    let ChaosCoeffs { c2, c5, cz, cz5, .. } = chaos_coeffs(u);
    let (a, b, c, d, e) = (WA, WB, WC, WD, WE);
    let r = SQRT_2 / 3.0;
    c2 * a * a / 3.0 + c2 * (2.0 / 3.0) * b * b + 2.0 * c2 * r * (-a * b)
        + c5 * c * c / 3.0 + c5 * (2.0 / 3.0) * d * d + 2.0 * c5 * r * (-c * d)
        + cz * e * e / 3.0 + cz * (2.0 / 3.0) * c * c + 2.0 * cz * r * (-c * e)
        + 2.0 * cz5 * (-c * e) / 3.0 + 2.0 * cz5 * (2.0 / 3.0) * (-c * d) + 2.0 * cz5 * r * (d * e + c * c)
}

/// `ρ_0 = Φ̄` and `ρ_j(x) = (2π)^{−(1+j)/2} e^{−x²/2} He_{j−1}(x)` for `1 ≤ j ≤ 7`.
pub fn rho(j: u32, x: f64) -> Result<f64> {
    match j {
        0 => Ok(std_normal_sf(x)),
        1..=7 => Ok((2.0 * PI).powf(-0.5 * (1 + j) as f64) * (-0.5 * x * x).exp() * hermite_eval(j - 1, x)),
        _ => domain(format!("rho is defined for j in 0..=7, got {j}")),
    }
}

/// `|υ(u) − ⅛((2π)³ρ_7(ũ) + 11(2π)²ρ_5(ũ) + 25(2π)ρ_3(ũ) + 7ρ_1(ũ))|` with `ũ = √2 u`.
pub fn hermite_expansion_check(u: f64) -> f64 {
    let t = SQRT_2 * u;
    let tp = 2.0 * PI;
    let r = |j| rho(j, t).expect("orders in range");
    let rhs = (tp.powi(3) * r(7) + 11.0 * tp * tp * r(5) + 25.0 * tp * r(3) + 7.0 * r(1)) / 8.0;
    (upsilon(u) - rhs).abs()
}

/// A function of the level averaged over the law of `Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// `ρ_2`, odd.
    Rho2,
    /// `υ`, even.
    Upsilon,
}

impl Functional {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Functional::Rho2 => rho(2, x).expect("order in range"),
            Functional::Upsilon => upsilon(x),
        }
    }

    fn parity(self) -> f64 {
        match self {
            Functional::Rho2 => -1.0,
            Functional::Upsilon => 1.0,
        }
    }
}

/// `E[g(h(u, Λ))]`: closed form where one exists and is numerically sound,
/// adaptive quadrature over the law of `Λ` otherwise.
pub fn expectation(func: Functional, u: f64, m: &MixtureSpec) -> Result<f64> {
    m.validate()?;
    match expectation_closed_form(func, u, m) {
        Some(v) => Ok(v),
        None => expectation_quadrature(func, u, m),
    }
}

/// The closed forms for the scale link with Pareto or exponential `Λ²`.
///
/// Negative levels use the parity of `g`. Returns `None` where no closed form
/// applies or where its terms cancel too severely to be trusted.
pub fn expectation_closed_form(func: Functional, u: f64, m: &MixtureSpec) -> Option<f64> {
    if m.link != Link::Scale || !u.is_finite() {
        return None;
    }
    if u == 0.0 {
        return matches!(m.lambda_law, LambdaLaw::ParetoSqrt { .. } | LambdaLaw::ExpSqrt { .. }).then_some(0.0);
    }
    let sign = if u < 0.0 { func.parity() } else { 1.0 };
    let u = u.abs();
    if u < 1e-6 {
        return None;
    }
    let v = match (m.lambda_law, func) {
        (LambdaLaw::ParetoSqrt { alpha }, Functional::Rho2) => {
            let g = lower_incomplete_gamma(alpha + 0.5, 0.5 * u * u).ok()?;
            u.powf(-2.0 * alpha) * 2f64.powf(alpha - 1.0) * PI.powf(-1.5) * alpha * g
        }
        (LambdaLaw::ParetoSqrt { alpha }, Functional::Upsilon) => {
            let a = alpha;
            let t = SQRT_2 * u;
            let g = lower_incomplete_gamma(a, u * u).ok()?;
            let first = t.powf(-2.0 * a) * g * (8.0 * a * a * a + 8.0 * a * a + 8.0 * a);
            let second = 2f64.powf(1.0 - a)
                * (-u * u).exp()
                * (t.powi(4) + 2.0 * a * t * t + 4.0 * a * a + 4.0 * a + 4.0);
            if (first - second).abs() < 1e-6 * first.abs().max(second.abs()) {
                return None;
            }
            0.125 * 2f64.powf(a - 1.0) / PI * a * (first - second)
        }
        (LambdaLaw::ExpSqrt { theta }, Functional::Rho2) => {
            let a = (2.0 / theta).sqrt();
            a * u * (-a * u).exp() / (4.0 * PI)
        }
        (LambdaLaw::ExpSqrt { theta }, Functional::Upsilon) => {
            let a = (2.0 / theta).sqrt();
            let z = a * SQRT_2 * u;
            let (k0, k1) = bessel_k01(z);
            let pos = z.powi(4) * k0 + 4.0 * z * z * k0;
            let neg = 2.0 * z.powi(3) * k1;
            if (pos - neg).abs() < 1e-6 * pos.abs().max(neg.abs()) {
                return None;
            }
            (pos - neg) / (16.0 * PI)
        }
        _ => return None,
    };
    Some(sign * v)
}

/// `E[g(h(u, Λ))]` by adaptive quadrature over the law of `Λ`.
///
/// Pareto: with `s = Λ^{−1}`, `E = ∫_0^1 g(h(u, 1/s)) 2α s^{2α−1} ds`.
/// Exponential `Λ²` of mean `θ`: with `Λ = √θ v`, `E = ∫_0^∞ g(h(u, √θ v)) 2v e^{−v²} dv`.
pub fn expectation_quadrature(func: Functional, u: f64, m: &MixtureSpec) -> Result<f64> {
    m.validate()?;
    let h = |lam: f64| match m.link {
        Link::Scale => u / lam,
        Link::Location => u - lam,
    };
    const TOL: f64 = 1e-14;
    match m.lambda_law {
        LambdaLaw::Constant(l) => Ok(func.eval(h(l))),
        LambdaLaw::ParetoSqrt { alpha } => {
            let f = |s: f64| {
                if s <= 0.0 {
                    return 0.0;
                }
                func.eval(h(1.0 / s)) * 2.0 * alpha * s.powf(2.0 * alpha - 1.0)
            };
            Ok(quad::integrate(f, 0.0, 1.0, TOL, 1e-12)?.value)
        }
        LambdaLaw::ExpSqrt { theta } => {
            let st = theta.sqrt();
            let f = |v: f64| {
                if v <= 0.0 {
                    return 0.0;
                }
                func.eval(h(st * v)) * 2.0 * v * (-v * v).exp()
            };
            // e^{−v²} is below 1e-40 past v = 10
            let mut total = 0.0;
            for (a, b) in [(0.0, 1.0), (1.0, 3.0), (3.0, 10.0)] {
                total += quad::integrate(f, a, b, TOL, 1e-12)?.value;
            }
            Ok(total)
        }
    }
}

/// `(2N)² λ_f E[ρ_2(h(u, Λ))]`; reduces to [`mean_epc`] for `Λ ≡ 1`.
pub fn perturbed_mean_epc(u: f64, half_width: f64, m: &MixtureSpec) -> Result<f64> {
    let area = 4.0 * half_width * half_width;
    Ok(area * LAMBDA_F * expectation(Functional::Rho2, u, m)?)
}

/// Limiting variance density of a mixture model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedVariance {
    /// `V_Λ(u) = E[υ(h(u, Λ))] C*/(8π²)`.
    pub value: f64,
    /// Set when `E[υ(h(u, Λ))] = 0`, where the CLT is not available.
    pub degenerate: bool,
}

pub fn perturbed_variance_limit(u: f64, m: &MixtureSpec) -> Result<PerturbedVariance> {
    let e = expectation(Functional::Upsilon, u, m)?;
    if e == 0.0 {
        return Ok(PerturbedVariance { value: 0.0, degenerate: true });
    }
    Ok(PerturbedVariance { value: e * variance_constant() / (8.0 * PI * PI), degenerate: false })
}

/// Closed-form predictions over a level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCurve {
    pub levels: Vec<f64>,
    pub mean_epc: Vec<f64>,
    /// `(2N)³ V(u)` or `(2N)³ V_Λ(u)`.
    pub var_limit: Vec<f64>,
    /// `V(u)` or `V_Λ(u)`.
    pub var_density: Vec<f64>,
    pub model: MixtureSpec,
    pub half_width: f64,
}

pub fn theory_curve(levels: &[f64], half_width: f64, model: &MixtureSpec) -> Result<TheoryCurve> {
    if !(half_width > 0.0) {
        return domain(format!("half width must be positive, got {half_width}"));
    }
    model.validate()?;
    let scale = (2.0 * half_width).powi(3);
    let mut curve = TheoryCurve {
        levels: levels.to_vec(),
        mean_epc: Vec::with_capacity(levels.len()),
        var_limit: Vec::with_capacity(levels.len()),
        var_density: Vec::with_capacity(levels.len()),
        model: *model,
        half_width,
    };
    for &u in levels {
        let (mean, var) = if model.is_gaussian() {
            (mean_epc(u, half_width), variance_limit(u))
        } else {
            (perturbed_mean_epc(u, half_width, model)?, perturbed_variance_limit(u, model)?.value)
        };
        curve.mean_epc.push(mean);
        curve.var_density.push(var);
        curve.var_limit.push(scale * var);
    }
    Ok(curve)
}

/// `(model, params)` columns of the theory CSV.
pub fn model_columns(m: &MixtureSpec) -> (String, String) {
    if m.is_gaussian() {
        return ("gaussian".into(), String::new());
    }
    let (name, param) = match m.lambda_law {
        LambdaLaw::Constant(v) => ("constant", format!("lambda={v}")),
        LambdaLaw::ParetoSqrt { alpha } => ("pareto", format!("alpha={alpha}")),
        LambdaLaw::ExpSqrt { theta } => ("exp", format!("theta={theta}")),
    };
    (name.into(), format!("link={};{param}", m.link))
}

pub const THEORY_CSV_HEADER: &str = "u,mean_epc,var_limit_total,var_limit_density,model,N,params";

pub fn write_theory_csv(mut w: impl Write, curve: &TheoryCurve) -> Result<()> {
    writeln!(w, "{THEORY_CSV_HEADER}")?;
    let (model, params) = model_columns(&curve.model);
    for i in 0..curve.levels.len() {
        writeln!(
            w,
            "{},{},{},{},{model},{},{params}",
            fmt_f64(curve.levels[i]),
            fmt_f64(curve.mean_epc[i]),
            fmt_f64(curve.var_limit[i]),
            fmt_f64(curve.var_density[i]),
            fmt_f64(curve.half_width),
        )?;
    }
    Ok(())
}
