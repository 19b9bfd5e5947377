//! Second-chaos statistics of the EPC and of the field, their correlation, and
//! quadratures of the radial integrals that control their variances.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::{cov_field, deriv_cov, DerivCovKind};
use crate::error::{domain, Error, Result};
use crate::field::{replicate_rng, sample_ensemble, sample_lattice, Derivs, GridSpec, WaveEnsemble};
use crate::par::map_indexed;
use crate::quad::GaussLegendre;
use crate::specfun::bessel_j_upto4;
use crate::theory::{chaos_coeffs, upsilon, variance_constant_over_pi};

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const SQRT_8_3: f64 = 1.632_993_161_855_452; // √(8/3)

/// Unit-variance derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedDerivs {
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub y4: f64,
    pub y5: f64,
    /// Combination of `y3`, `y5` uncorrelated with `y5`.
    pub z: f64,
}

impl From<Derivs> for NormalizedDerivs {
    fn from(d: Derivs) -> Self {
        let y3 = SQRT_8_3 * d.d11;
        let y5 = SQRT_8_3 * d.d22;
        let r8 = 8f64.sqrt();
        Self {
            y1: std::f64::consts::SQRT_2 * d.d1,
            y2: std::f64::consts::SQRT_2 * d.d2,
            y3,
            y4: r8 * d.d12,
            y5,
            z: 3.0 / (2.0 * std::f64::consts::SQRT_2) * y3 - y5 / (2.0 * std::f64::consts::SQRT_2),
        }
    }
}

fn h2(x: f64) -> f64 {
    x * x - 1.0
}

/// `|H₂(f) − (⅓H₂(Z) + ⅔H₂(Y₅) + (2√2/3) Z Y₅)|` at one point.
pub fn h2_decomposition_residual(d: &Derivs) -> f64 {
    let n = NormalizedDerivs::from(*d);
    let rhs = h2(n.z) / 3.0 + 2.0 * h2(n.y5) / 3.0 + 2.0 * std::f64::consts::SQRT_2 / 3.0 * n.z * n.y5;
    (h2(d.f) - rhs).abs()
}

/// The integrand of `D2` at one point, level `u`.
fn d2_density(c: &crate::theory::ChaosCoeffs, n: &NormalizedDerivs) -> f64 {
    0.5 * c.c2 * h2(n.y2) + 0.5 * c.c5 * h2(n.y5) + 0.5 * c.cz * h2(n.z) + c.cz5 * n.z * n.y5
}

/// How the window integrals of `D2` and `S` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum ChaosQuadrature {
    /// Midpoint rule on the pixel centres, `points_per_unit` per unit length.
    Midpoint { points_per_unit: u32 },
    /// Exact integration of the wave-pair products.
    Exact,
}

fn midpoint_spec(half_width: f64, points_per_unit: u32) -> Result<GridSpec> {
    if points_per_unit < 4 {
        return Err(Error::Precondition(format!(
            "chaos quadrature needs at least 4 points per unit, got {points_per_unit}"
        )));
    }
    GridSpec::new(half_width, points_per_unit)
}

/// Midpoint-rule `(D2, S)` from one derivative sampling of the window.
pub fn second_chaos_pair_midpoint(
    e: &WaveEnsemble,
    half_width: f64,
    u: f64,
    points_per_unit: u32,
) -> Result<(f64, f64)> {
    let spec = midpoint_spec(half_width, points_per_unit)?;
    let (values, planes) = sample_lattice(e, &spec.coords(), true);
    let planes = planes.expect("derivatives requested");
    let c = chaos_coeffs(u);
    let p = spec.side();
    let cell = spec.pixel_size() * spec.pixel_size();
    let (mut d2, mut s) = (0.0, 0.0);
    for i in 0..p {
        let (mut rd, mut rs) = (0.0, 0.0);
        for j in i * p..(i + 1) * p {
            let d = Derivs {
                f: values[j],
                d1: planes.d1[j],
                d2: planes.d2[j],
                d11: planes.d11[j],
                d12: planes.d12[j],
                d22: planes.d22[j],
            };
            rd += d2_density(&c, &NormalizedDerivs::from(d));
            rs += h2(values[j]);
        }
        d2 += rd;
        s += rs;
    }
    Ok((d2 * cell, s * cell))
}

/// `D2 = ∫_{[-N,N]²} ½c₂H₂(Y₂) + ½c₅H₂(Y₅) + ½c_zH₂(Z) + c_{z5} Z Y₅` by the midpoint rule.
pub fn second_chaos_d2(e: &WaveEnsemble, half_width: f64, u: f64, points_per_unit: u32) -> Result<f64> {
    Ok(second_chaos_pair_midpoint(e, half_width, u, points_per_unit)?.0)
}

/// `S = ∫_{[-N,N]²} (f² − 1)` by the midpoint rule.
pub fn second_chaos_s(e: &WaveEnsemble, half_width: f64, points_per_unit: u32) -> Result<f64> {
    let spec = midpoint_spec(half_width, points_per_unit)?;
    let (values, _) = sample_lattice(e, &spec.coords(), false);
    let p = spec.side();
    let s: f64 = values.chunks(p).map(|row| row.iter().map(|&v| h2(v)).sum::<f64>()).sum();
    Ok(s * spec.pixel_size() * spec.pixel_size())
}

/// `∫_{-N}^{N} cos(q t) dt`.
fn window_cos(q: f64, half_width: f64) -> f64 {
    let x = q * half_width;
    if x.abs() < 1e-4 {
        2.0 * half_width * (1.0 - x * x / 6.0)
    } else {
        2.0 * x.sin() / q
    }
}

/// Exact `(D2, S)`: every integrand is a quadratic form in the waves, and
/// `∫_{[-N,N]²} cos(⟨q, x⟩ + ψ) dx = cos ψ · s(q₁) s(q₂)` with `s(q) = 2 sin(qN)/q`.
pub fn second_chaos_pair_exact(e: &WaveEnsemble, half_width: f64, u: f64) -> Result<(f64, f64)> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return domain(format!("window half-width must be finite and positive, got {half_width}"));
    }
    let (k1, k2) = e.wavevectors();
    let phases = e.phases();
    let m = e.wave_count();
    // per-wave coefficients: cosine part of Z and Y5, sine part of Y2
    let az: Vec<f64> = (0..m).map(|j| -SQRT_3 * k1[j] * k1[j] + k2[j] * k2[j] / SQRT_3).collect();
    let a5: Vec<f64> = (0..m).map(|j| -SQRT_8_3 * k2[j] * k2[j]).collect();
    let b2: Vec<f64> = (0..m).map(|j| -std::f64::consts::SQRT_2 * k2[j]).collect();
    let (cph, sph): (Vec<f64>, Vec<f64>) = phases.iter().map(|p| (p.cos(), p.sin())).unzip();

    let [mut ff, mut zz, mut y55, mut z5, mut y22] = [0.0f64; 5];
    for j in 0..m {
        let mut acc = [0.0f64; 5];
        for l in j..m {
            let minus = (cph[j] * cph[l] + sph[j] * sph[l])
                * window_cos(k1[j] - k1[l], half_width)
                * window_cos(k2[j] - k2[l], half_width);
            let plus = (cph[j] * cph[l] - sph[j] * sph[l])
                * window_cos(k1[j] + k1[l], half_width)
                * window_cos(k2[j] + k2[l], half_width);
            let w = if l == j { 1.0 } else { 2.0 };
            let even = w * (minus + plus);
            let odd = w * (minus - plus);
            acc[0] += even;
            acc[1] += az[l] * even;
            acc[2] += a5[l] * even;
            // Z·Y5 is not symmetric in (j, l); symmetrize the pair weight
            let zy = if l == j { az[j] * a5[j] } else { 0.5 * (az[j] * a5[l] + az[l] * a5[j]) };
            acc[3] += zy * even;
            acc[4] += b2[l] * odd;
        }
        ff += acc[0];
        zz += az[j] * acc[1];
        y55 += a5[j] * acc[2];
        z5 += acc[3];
        y22 += b2[j] * acc[4];
    }
    let scale = 0.5 * e.amplitude() * e.amplitude();
    let area = 4.0 * half_width * half_width;
    let c = chaos_coeffs(u);
    let d2 = 0.5 * c.c2 * (scale * y22 - area)
        + 0.5 * c.c5 * (scale * y55 - area)
        + 0.5 * c.cz * (scale * zz - area)
        + c.cz5 * scale * z5;
    Ok((d2, scale * ff - area))
}

/// Monte Carlo set-up for the `(D2, S)` correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    pub half_width: f64,
    pub level: f64,
    pub replicates: u64,
    pub waves: usize,
    pub master_seed: u64,
    pub quadrature: ChaosQuadrature,
}

pub const MIN_CORRELATION_REPLICATES: u64 = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    /// `None` when either statistic has no variance, or the level makes the
    /// asymptotic covariance vanish.
    pub corr: Option<f64>,
    /// Delta-method standard error `(1 − r²)/√(n − 3)`.
    pub std_error: Option<f64>,
    pub degenerate: bool,
    pub d2: Vec<f64>,
    pub s: Vec<f64>,
}

/// `(D2, S)` for one replicate of `cfg`.
pub fn chaos_replicate(cfg: &CorrelationConfig, replicate: u64) -> Result<(f64, f64)> {
    let mut rng = replicate_rng(cfg.master_seed, replicate);
    let e = sample_ensemble(cfg.waves, &mut rng)?;
    match cfg.quadrature {
        ChaosQuadrature::Exact => second_chaos_pair_exact(&e, cfg.half_width, cfg.level),
        ChaosQuadrature::Midpoint { points_per_unit } => {
            second_chaos_pair_midpoint(&e, cfg.half_width, cfg.level, points_per_unit)
        }
    }
}

/// `(D2, S)` for replicates `0..n`, in replicate order.
pub fn chaos_samples(cfg: &CorrelationConfig, n: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let pairs = map_indexed(n, |r| chaos_replicate(cfg, r));
    let mut d2 = Vec::with_capacity(pairs.len());
    let mut s = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (a, b) = p?;
        d2.push(a);
        s.push(b);
    }
    Ok((d2, s))
}

/// Sample correlation of `D2` and `S` over `cfg.replicates` independent ensembles.
pub fn empirical_correlation_d2_s(cfg: &CorrelationConfig) -> Result<CorrelationReport> {
    if cfg.replicates < MIN_CORRELATION_REPLICATES {
        return Err(Error::Precondition(format!(
            "correlation needs at least {MIN_CORRELATION_REPLICATES} replicates, got {}",
            cfg.replicates
        )));
    }
    let (d2, s) = chaos_samples(cfg, cfg.replicates)?;
    let r = sample_correlation(&d2, &s);
    let flat = upsilon(cfg.level) <= 1e-12 * upsilon(2.0);
    let degenerate = flat || r.is_none();
    let n = d2.len() as f64;
    let corr = if degenerate { None } else { r };
    Ok(CorrelationReport {
        corr,
        std_error: corr.map(|c| (1.0 - c * c) / (n - 3.0).sqrt()),
        degenerate,
        d2,
        s,
    })
}

/// Pearson correlation; `None` if either sample is constant.
pub fn sample_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Radial integrands for the window double integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadialIntegrand {
    One,
    /// `J_0(r)²`
    FieldSq,
    /// `g_i(r)²`
    DerivSq(DerivCovKind),
}

impl RadialIntegrand {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            RadialIntegrand::One => 1.0,
            RadialIntegrand::FieldSq => cov_field(r).powi(2),
            RadialIntegrand::DerivSq(k) => deriv_cov(k, r).powi(2),
        }
    }
}

impl fmt::Display for RadialIntegrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialIntegrand::One => f.write_str("one"),
            RadialIntegrand::FieldSq => f.write_str("j0sq"),
            RadialIntegrand::DerivSq(k) => write!(f, "{k}sq"),
        }
    }
}

impl FromStr for RadialIntegrand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "one" | "1" => Ok(RadialIntegrand::One),
            "j0sq" => Ok(RadialIntegrand::FieldSq),
            _ => s
                .strip_suffix("sq")
                .and_then(|k| k.parse().ok())
                .map(RadialIntegrand::DerivSq)
                .ok_or_else(|| Error::Domain(format!("unknown radial integrand {s:?}"))),
        }
    }
}

const PANEL: f64 = FRAC_PI_4;
const RULE_LOW: usize = 16;
const RULE_HIGH: usize = 24;
const RADIAL_REL_TOL: f64 = 1e-9;

/// `∫_{[-2N,2N]²} (2N − |z₁|)(2N − |z₂|) h(|z|) dz`, i.e. `∫∫_{[-N,N]²×[-N,N]²} h(|x − y|)`.
///
/// Reduced to one radial integral `4∫ h(r) r W(r) dr`, where `W` is the angular
/// integral of the weight over the quarter disc clipped to `[0, 2N]²`. Panels
/// spanning at most π/4 in `r` are integrated by two Gauss–Legendre rules; their disagreement is
/// the reported error.
pub fn window_weighted_integral(h: RadialIntegrand, half_width: f64) -> Result<f64> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return domain(format!("window half-width must be finite and positive, got {half_width}"));
    }
    let a = 2.0 * half_width;
    let inner = move |r: f64| a * a * FRAC_PI_2 - 2.0 * a * r + 0.5 * r * r;
    let antiderivative =
        move |r: f64, t: f64| a * a * t - a * r * t.sin() + a * r * t.cos() + 0.5 * r * r * t.sin().powi(2);
    // beyond r = a the admissible angles are [δ, π/2 − δ] with cos δ = a/r; in δ
    // the outer integrand is analytic at both ends, unlike in r
    let outer = move |d: f64| {
        let r = a / d.cos();
        let dr = r * d.tan();
        h.eval(r) * r * (antiderivative(r, FRAC_PI_2 - d) - antiderivative(r, d)) * dr
    };
    let run = |rule: &GaussLegendre| {
        rule.integrate_panels(|r| h.eval(r) * r * inner(r), 0.0, a, PANEL)
            + rule.integrate_panels(outer, 0.0, FRAC_PI_4, PANEL / (a * std::f64::consts::SQRT_2))
    };
    let lo = run(&GaussLegendre::new(RULE_LOW));
    let hi = run(&GaussLegendre::new(RULE_HIGH));
    let err = (hi - lo).abs();
    let wanted = RADIAL_REL_TOL * hi.abs();
    if err > wanted {
        return Err(Error::Convergence { what: "window radial integral", achieved: err, wanted });
    }
    Ok(4.0 * hi)
}

/// The integrands whose window integrals dominate the second-chaos variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dominant {
    G2sq,
    G4sq,
    G7sq,
}

impl Dominant {
    pub const ALL: [Dominant; 3] = [Dominant::G2sq, Dominant::G4sq, Dominant::G7sq];

    pub fn integrand(self) -> RadialIntegrand {
        RadialIntegrand::DerivSq(match self {
            Dominant::G2sq => DerivCovKind::G2,
            Dominant::G4sq => DerivCovKind::G4,
            Dominant::G7sq => DerivCovKind::G7,
        })
    }
}

impl fmt::Display for Dominant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.integrand().fmt(f)
    }
}

/// `∫_{[-2N,2N]²}(2N − |x₁|)(2N − |x₂|) g²(|x|) dx` for `g ∈ {g₂, g₄, g₇}`.
pub fn dominant_integral(half_width: f64, which: Dominant) -> Result<f64> {
    if half_width < 1.0 {
        return Err(Error::Precondition(format!("dominant integral needs N ≥ 1, got {half_width}")));
    }
    window_weighted_integral(which.integrand(), half_width)
}

/// Large-window approximation `4 (2N)³ C*/π` of [`dominant_integral`].
pub fn dominant_asymptote(half_width: f64) -> f64 {
    4.0 * (2.0 * half_width).powi(3) * variance_constant_over_pi()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Both sides of `∫∫ h(|x − y|) dx dy ≤ 8N²π ∫_0^{2√2N} h(r) r dr` for nonnegative `h`.
pub fn radial_bound_check(h: RadialIntegrand, half_width: f64) -> Result<RadialBound> {
    let lhs = window_weighted_integral(h, half_width)?;
    let rule = GaussLegendre::new(RULE_HIGH);
    let top = 2.0 * std::f64::consts::SQRT_2 * half_width;
    let radial = rule.integrate_panels(|r| h.eval(r) * r, 0.0, top, PANEL);
    let rhs = 8.0 * half_width * half_width * PI * radial;
    Ok(RadialBound { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-6) })
}

/// `∫_0^R r^p g(r) dr`.
pub fn radial_moment(kind: DerivCovKind, power: i32, upper: f64) -> f64 {
    GaussLegendre::new(RULE_LOW).integrate_panels(|r| r.powi(power) * deriv_cov(kind, r), 0.0, upper, PANEL)
}

/// `max |∫_0^R r^p g(r) dr|` over `R` in the last period `[upper − 2π, upper]`.
///
/// The moments oscillate through zero, so growth rates are read off this envelope.
pub fn radial_moment_envelope(kind: DerivCovKind, power: i32, upper: f64) -> f64 {
    const STEPS: usize = 64;
    let start = (upper - TAU).max(0.0);
    let rule = GaussLegendre::new(8);
    let mut acc = radial_moment(kind, power, start);
    let mut best = acc.abs();
    let step = (upper - start) / STEPS as f64;
    for i in 0..STEPS {
        let lo = start + i as f64 * step;
        acc += rule.integrate(|r| r.powi(power) * deriv_cov(kind, r), lo, lo + step);
        best = best.max(acc.abs());
    }
    best
}

/// Growth exponent allowed for `∫_0^{2√2N} r^p g dr`, `p ∈ {1, 2, 3}`.
pub fn claimed_exponent(power: i32) -> f64 {
    power as f64 - 0.5
}

pub const SLOPE_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentGrowth {
    pub kind: String,
    pub power: i32,
    pub envelopes: Vec<f64>,
    pub slope: f64,
    pub claimed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SublinearityReport {
    pub half_widths: Vec<f64>,
    pub growth: Vec<MomentGrowth>,
    /// Max over `N` of `|∫_0^R r g₂ − (J₀(R) + R J₁(R) − 1)|`, `R = 2√2N`.
    pub closed_form_error: f64,
    pub pass: bool,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fits the growth of the `r`-, `r²`- and `r³`-weighted integrals of every `g_i`
/// up to `2√2N` and checks the `r g₂` closed form.
pub fn sublinearity_checks(half_widths: &[f64]) -> Result<SublinearityReport> {
    if half_widths.len() < 2 {
        return Err(Error::Precondition("slope fit needs at least two window sizes".into()));
    }
    if half_widths.windows(2).any(|w| !(w[1] > w[0])) || !(half_widths[0] > 0.0) {
        return Err(Error::Precondition("window sizes must be positive and increasing".into()));
    }
    let uppers: Vec<f64> = half_widths.iter().map(|n| 2.0 * std::f64::consts::SQRT_2 * n).collect();
    let mut growth = Vec::new();
    for power in 1..=3 {
        for kind in DerivCovKind::ALL {
            let envelopes: Vec<f64> = uppers.iter().map(|&r| radial_moment_envelope(kind, power, r)).collect();
            let slope = loglog_slope(half_widths, &envelopes);
            let claimed = claimed_exponent(power);
            growth.push(MomentGrowth {
                kind: kind.name().to_string(),
                power,
                envelopes,
                slope,
                claimed,
                pass: slope <= claimed + SLOPE_TOLERANCE,
            });
        }
    }
    let closed_form_error = uppers
        .iter()
        .map(|&r| {
            let [j0, j1, ..] = bessel_j_upto4(r);
            (radial_moment(DerivCovKind::G2, 1, r) - (j0 + r * j1 - 1.0)).abs()
        })
        .fold(0.0, f64::max);
    let pass = growth.iter().all(|g| g.pass) && closed_form_error <= 1e-8;
    Ok(SublinearityReport { half_widths: half_widths.to_vec(), growth, closed_form_error, pass })
}
