//! Special functions: Bessel `J_0..J_4`, modified Bessel `K_0`, `K_1`, the lower
//! incomplete gamma function, the standard normal law and Hermite polynomials.
//!
//! Hermite polynomials follow the probabilists' convention,
//! `He_q(x) = (-1)^q φ(x)^{-1} d^q φ/dx^q`, so `He_2(x) = x² - 1`. The
//! physicists' `H_q` would silently rescale every chaos coefficient.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{domain, Result};

/// Euler–Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Above this radius `J_0`, `J_1` come from Hankel's expansion and higher orders
/// from upward recurrence (stable because `m < r`).
pub const BESSEL_ASYMPTOTIC_SWITCH: f64 = 25.0;

/// Below this radius the power series converges without visible cancellation.
const BESSEL_SERIES_MAX: f64 = 4.0;

/// Highest Bessel order used anywhere in the crate.
pub const BESSEL_MAX_ORDER: usize = 4;

/// Bessel function of the first kind `J_order(r)` for `order <= 4`, `r >= 0`.
pub fn bessel_j(order: u32, r: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return domain(format!("bessel_j needs finite r >= 0, got {r}"));
    }
    if order as usize > BESSEL_MAX_ORDER {
        return domain(format!("bessel_j supports orders 0..=4, got {order}"));
    }
    Ok(bessel_j_upto4(r)[order as usize])
}

/// `[J_0(r), J_1(r), J_2(r), J_3(r), J_4(r)]` for finite `r >= 0`.
///
/// Power series for small `r`, Miller's normalized backward recurrence up to
/// [`BESSEL_ASYMPTOTIC_SWITCH`], Hankel's expansion plus upward recurrence above.
pub fn bessel_j_upto4(r: f64) -> [f64; 5] {
    debug_assert!(r >= 0.0 && r.is_finite());
    if r == 0.0 {
        return [1.0, 0.0, 0.0, 0.0, 0.0];
    }
    if r <= BESSEL_SERIES_MAX {
        let mut out = [0.0; 5];
        for (m, slot) in out.iter_mut().enumerate() {
            *slot = bessel_j_series(m as u32, r);
        }
        return out;
    }
    if r < BESSEL_ASYMPTOTIC_SWITCH {
        return bessel_j_miller(r);
    }
    let mut out = [0.0; 5];
    out[0] = bessel_j_hankel(0, r);
    out[1] = bessel_j_hankel(1, r);
    for m in 1..BESSEL_MAX_ORDER {
        out[m + 1] = (2.0 * m as f64 / r) * out[m] - out[m - 1];
    }
    out
}

fn bessel_j_series(m: u32, r: f64) -> f64 {
    let half = 0.5 * r;
    let q = -half * half;
    let mut term = 1.0;
    for k in 1..=m {
        term *= half / k as f64;
    }
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + m as f64));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum
}

fn bessel_j_miller(r: f64) -> [f64; 5] {
    let mut start = (r + 25.0 + (50.0 * r).sqrt()) as usize;
    start += start % 2;
    let mut out = [0.0; 5];
    let mut above = 0.0;
    let mut current = 1e-30;
    // sum of J_0 + 2 Σ J_2k, which equals one for the true sequence
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        let below = (2.0 * k as f64 / r) * current - above;
        above = current;
        current = below;
        let idx = k - 1;
        if idx <= BESSEL_MAX_ORDER {
            out[idx] = current;
        }
        if idx > 0 && idx % 2 == 0 {
            norm += 2.0 * current;
        }
        if current.abs() > 1e250 {
            current *= 1e-250;
            above *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    norm += current;
    out.map(|v| v / norm)
}

fn bessel_j_hankel(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term: f64 = 1.0;
    let mut k = 1u32;
    loop {
        let odd = (2 * k - 1) as f64;
        let next = term * (mu - odd * odd) / (8.0 * k as f64 * x);
        if next.abs() > term.abs() || next.abs() < 1e-18 {
            break;
        }
        term = next;
        // P takes even terms with alternating sign, Q the odd ones
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        k += 1;
    }
    let shift = (0.5 * order as f64 + 0.25) * PI;
    let (sx, cx) = x.sin_cos();
    let (ss, cs) = shift.sin_cos();
    let cos_chi = cx * cs + sx * ss;
    let sin_chi = sx * cs - cx * ss;
    (2.0 / (PI * x)).sqrt() * (p * cos_chi - q * sin_chi)
}

/// Modified Bessel function of the second kind `K_order(x)`, `order ∈ {0, 1}`.
pub fn bessel_k(order: u32, x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return domain(format!("bessel_k needs finite x > 0, got {x}"));
    }
    let (k0, k1) = bessel_k01(x);
    match order {
        0 => Ok(k0),
        1 => Ok(k1),
        _ => domain(format!("bessel_k supports orders 0 and 1, got {order}")),
    }
}

/// `(K_0(x), K_1(x))` for `x > 0`: series for `x <= 2`, Temme's continued fraction above.
pub fn bessel_k01(x: f64) -> (f64, f64) {
    if x <= 2.0 {
        bessel_k01_series(x)
    } else {
        bessel_k01_temme(x)
    }
}

fn bessel_k01_series(x: f64) -> (f64, f64) {
    let y = 0.25 * x * x;
    let log_half = (0.5 * x).ln();
    // k = 0 terms
    let mut t0 = 1.0; // y^k / (k!)^2
    let mut t1 = 1.0; // y^k / (k! (k+1)!)
    let mut harmonic = 0.0; // H_k
    let mut i0 = t0;
    let mut i1_over = t1;
    let mut k0_sum = 0.0;
    let mut k1_sum = (2.0 * -EULER_GAMMA + 1.0) * t1;
    let mut k = 1.0;
    loop {
        t0 *= y / (k * k);
        t1 *= y / (k * (k + 1.0));
        harmonic += 1.0 / k;
        i0 += t0;
        i1_over += t1;
        k0_sum += t0 * harmonic;
        // psi(k+1) + psi(k+2) = -2γ + 2 H_k + 1/(k+1)
        k1_sum += (-2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (k + 1.0)) * t1;
        if t0 < 1e-18 * i0 && t1 < 1e-18 * i1_over {
            break;
        }
        k += 1.0;
    }
    let i1 = 0.5 * x * i1_over;
    let k0 = -(log_half + EULER_GAMMA) * i0 + k0_sum;
    let k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_sum;
    (k0, k1)
}

fn bessel_k01_temme(x: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - a1 * h) / x;
    (k0, k1)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(a)` for `a > 0` (Lanczos approximation, about 15 digits).
pub fn ln_gamma(a: f64) -> f64 {
    if a < 0.5 {
        // reflection keeps the Lanczos sum in its accurate range
        return (PI / (PI * a).sin()).ln() - ln_gamma(1.0 - a);
    }
    let z = a - 1.0;
    let mut sum = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + sum.ln()
}

/// `Γ(a)` for `a > 0`.
pub fn gamma(a: f64) -> f64 {
    ln_gamma(a).exp()
}

/// Regularized incomplete gamma pair `(P(a, x), Q(a, x))`.
fn regularized_gamma(a: f64, x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 1.0);
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let p = gamma_series(a, x) * log_prefactor.exp();
        (p, 1.0 - p)
    } else {
        let q = gamma_continued_fraction(a, x) * log_prefactor.exp();
        (1.0 - q, q)
    }
}

/// `Σ_n x^n / (a (a+1) ... (a+n))`.
fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..10_000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum
}

/// Modified Lentz evaluation of the continued fraction for `Γ(a, x) e^x x^{-a}`.
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-17 {
            break;
        }
    }
    h
}

/// Lower incomplete gamma `γ(a, x) = ∫_0^x t^{a-1} e^{-t} dt`.
pub fn lower_incomplete_gamma(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return domain(format!("lower_incomplete_gamma needs a > 0, got {a}"));
    }
    if !(x >= 0.0) {
        return domain(format!("lower_incomplete_gamma needs x >= 0, got {x}"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(gamma(a));
    }
    if x < a + 1.0 {
        Ok(gamma_series(a, x) * (-x + a * x.ln()).exp())
    } else {
        let upper = gamma_continued_fraction(a, x) * (-x + a * x.ln()).exp();
        Ok(gamma(a) - upper)
    }
}

/// Standard normal density `φ(u)`.
#[inline]
pub fn std_normal_pdf(u: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal distribution function `Φ(u)`.
pub fn std_normal_cdf(u: f64) -> f64 {
    if u.is_nan() {
        return f64::NAN;
    }
    // Φ(-|u|) = erfc(|u|/√2)/2 = Q(1/2, u²/2)/2
    let (_, q) = regularized_gamma(0.5, 0.5 * u * u);
    let lower = 0.5 * q;
    if u < 0.0 {
        lower
    } else {
        1.0 - lower
    }
}

/// Standard normal survival function `Φ̄(u) = 1 - Φ(u)`, accurate in the upper tail.
pub fn std_normal_sf(u: f64) -> f64 {
    std_normal_cdf(-u)
}

/// A probabilists' Hermite polynomial `He_degree`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitePoly {
    pub degree: u32,
}

impl HermitePoly {
    pub fn new(degree: u32) -> Self {
        Self { degree }
    }

    pub fn eval(&self, x: f64) -> f64 {
        hermite_eval(self.degree, x)
    }
}

/// `He_n(x)` by the three-term recurrence `He_{n+1} = x He_n - n He_{n-1}`.
pub fn hermite_eval(degree: u32, x: f64) -> f64 {
    match degree {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for n in 1..degree {
                let next = x * cur - n as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// `1/√2`, re-exported for callers normalizing derivatives.
pub const SQRT_HALF: f64 = FRAC_1_SQRT_2;
