//! Covariance `J_0(r)` of the Berry field and the derivative cross-covariances
//! `g_1..g_7` for the axis configuration `x = (0, 0)`, `y = (0, r)`.
//!
//! Other orientations follow by isotropy; a pair with an odd number of
//! `∂_2` factors changes sign when `x` and `y` are exchanged, which callers
//! must apply themselves.

use std::fmt;
use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::specfun::bessel_j_upto4;

/// Below this separation the closed forms are replaced by their Taylor series.
pub const R_TINY: f64 = 1e-4;

/// One of the seven non-trivial derivative cross-covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DerivCovKind {
    /// `E[∂_1 f(x) ∂_1 f(y)] = J_1(r)/r`
    G1,
    /// `E[∂_2 f(x) ∂_2 f(y)] = (J_0 - J_2)/2`
    G2,
    /// `E[∂_1 f(x) ∂_12 f(y)] = -J_2(r)/r`.
    ///
    /// In this orientation `E[∂_11 f(x) ∂_2 f(y)]` equals `-g_3`; the two
    /// pairs coincide only after exchanging `x` and `y` in one of them.
    G3,
    /// `E[∂_2 f(x) ∂_22 f(y)] = (J_3 - 3 J_1)/4`
    G4,
    /// `E[∂_11 f(x) ∂_11 f(y)] = 3 J_2(r)/r²`
    G5,
    /// `E[∂_12 f(x) ∂_12 f(y)] = E[∂_11 f(x) ∂_22 f(y)] = (J_0 - J_4)/8`
    G6,
    /// `E[∂_22 f(x) ∂_22 f(y)] = (3 - r²) J_2(r)/r²`
    G7,
}

impl DerivCovKind {
    pub const ALL: [DerivCovKind; 7] = [
        DerivCovKind::G1,
        DerivCovKind::G2,
        DerivCovKind::G3,
        DerivCovKind::G4,
        DerivCovKind::G5,
        DerivCovKind::G6,
        DerivCovKind::G7,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["g1", "g2", "g3", "g4", "g5", "g6", "g7"][self.index()]
    }

    /// Variances at a single point of the two derivatives paired by this kind.
    pub fn pointwise_variances(self) -> (f64, f64) {
        let v = DerivVariances::BERRY;
        match self {
            DerivCovKind::G1 | DerivCovKind::G2 => (v.var_di, v.var_di),
            DerivCovKind::G3 => (v.var_di, v.var_d12),
            DerivCovKind::G4 => (v.var_di, v.var_d22),
            DerivCovKind::G5 => (v.var_d11, v.var_d11),
            DerivCovKind::G6 => (v.var_d12, v.var_d12),
            DerivCovKind::G7 => (v.var_d22, v.var_d22),
        }
    }
}

impl fmt::Display for DerivCovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DerivCovKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DerivCovKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown covariance kind {s:?}")))
    }
}

/// Pointwise variances of the field derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivVariances {
    pub var_di: f64,
    pub var_d11: f64,
    pub var_d12: f64,
    pub var_d22: f64,
    /// Correlation of `∂_11 f` and `∂_22 f` at the same point.
    pub corr_y3y5: f64,
}

impl DerivVariances {
    pub const BERRY: DerivVariances = DerivVariances {
        var_di: 0.5,
        var_d11: 0.375,
        var_d12: 0.125,
        var_d22: 0.375,
        corr_y3y5: 1.0 / 3.0,
    };
}

/// Field covariance `J_0(r)`.
pub fn cov_field(r: f64) -> f64 {
    bessel_j_upto4(r.abs())[0]
}

/// `g_kind(r)` using the simplified closed form, or its Taylor series for `r <= R_TINY`.
pub fn deriv_cov(kind: DerivCovKind, r: f64) -> f64 {
    deriv_cov_all(r)[kind.index()]
}

/// All seven `g_i(r)` from a single Bessel evaluation, indexed by [`DerivCovKind::index`].
pub fn deriv_cov_all(r: f64) -> [f64; 7] {
    let r = r.abs();
    if r <= R_TINY {
        return taylor_all(r);
    }
    let [j0, j1, j2, j3, j4] = bessel_j_upto4(r);
    let r2 = r * r;
    [
        j1 / r,
        0.5 * (j0 - j2),
        -j2 / r,
        0.25 * (j3 - 3.0 * j1),
        3.0 * j2 / r2,
        0.125 * (j0 - j4),
        (3.0 - r2) * j2 / r2,
    ]
}

fn taylor_all(r: f64) -> [f64; 7] {
    let r2 = r * r;
    let r3 = r2 * r;
    let r4 = r2 * r2;
    let r5 = r4 * r;
    [
        0.5 - r2 / 16.0 + r4 / 384.0,
        0.5 - 3.0 * r2 / 16.0 + 5.0 * r4 / 384.0,
        -r / 8.0 + r3 / 96.0 - r5 / 3072.0,
        -3.0 * r / 8.0 + 5.0 * r3 / 96.0 - 7.0 * r5 / 3072.0,
        0.375 - r2 / 32.0 + r4 / 1024.0,
        0.125 - r2 / 32.0 + 5.0 * r4 / 3072.0,
        0.375 - 5.0 * r2 / 32.0 + 35.0 * r4 / 3072.0,
    ]
}

/// `g_kind(r)` from the unsimplified Bessel combinations, for cross-checking.
///
/// `g_1`, `g_2`, `g_4` have a single form, evaluated without the Taylor guard.
pub fn deriv_cov_altform(kind: DerivCovKind, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return domain(format!("alternative covariance forms need finite r > 0, got {r}"));
    }
    let [j0, j1, j2, j3, j4] = bessel_j_upto4(r);
    let r2 = r * r;
    let r3 = r2 * r;
    Ok(match kind {
        DerivCovKind::G1 => j1 / r,
        DerivCovKind::G2 => 0.5 * (j0 - j2),
        DerivCovKind::G3 => (j0 - j2) / (2.0 * r) - j1 / r2,
        DerivCovKind::G4 => 0.25 * (j3 - 3.0 * j1),
        DerivCovKind::G5 => 1.5 * (j2 - j0) / r2 + 3.0 * j1 / r3,
        DerivCovKind::G6 => (3.0 * j1 - j3) / (4.0 * r) + (j0 - j2) / r2 - 2.0 * j1 / r3,
        DerivCovKind::G7 => (3.0 * j0 - 4.0 * j2 + j4) / 8.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use DerivCovKind::*;

    #[test]
    fn field_covariance() {
        assert_eq!(cov_field(0.0), 1.0);
        assert!((cov_field(1.0) - 0.765_197_686_6).abs() < 1e-10);
    }

    #[test]
    fn documented_values() {
        assert_eq!(deriv_cov(G2, 0.0), 0.5);
        assert_eq!(deriv_cov(G5, 0.0), 0.375);
        assert_eq!(deriv_cov(G4, 0.0), 0.0);
        assert_eq!(deriv_cov(G3, 0.0), 0.0);
        // J_2(2) from its series: sum_k (-1)^k / (k! (k+2)!)
        let mut j2 = 0.0;
        let mut term = 0.5;
        for k in 0..30 {
            j2 += term;
            term *= -1.0 / ((k + 1) as f64 * (k + 3) as f64);
        }
        assert!((j2 - 0.352_834_028_6).abs() < 1e-10);
        assert!((deriv_cov(G7, 2.0) + j2 / 4.0).abs() < 1e-14);
    }

    #[test]
    fn altform_examples() {
        let [_, _, j2, _, _] = bessel_j_upto4(1.0);
        assert!((deriv_cov_altform(G3, 1.0).unwrap() + j2).abs() < 1e-14);
        assert!((j2 - 0.114_903_484_9).abs() < 1e-10);
        assert!((deriv_cov_altform(G7, 1.0).unwrap() - 2.0 * j2).abs() < 1e-14);
        assert!((deriv_cov_altform(G7, 1.0).unwrap() - 0.229_806_969_8).abs() < 1e-10);
        assert!(deriv_cov_altform(G6, 0.0).is_err());
    }

    #[test]
    fn forms_agree_on_grid() {
        for i in 0..1000 {
            let r = 0.01 + (50.0 - 0.01) * i as f64 / 999.0;
            for k in DerivCovKind::ALL {
                let a = deriv_cov(k, r);
                let b = deriv_cov_altform(k, r).unwrap();
                assert!((a - b).abs() <= 1e-10, "{k} at r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn limits_match_pointwise_variances() {
        let v = DerivVariances::BERRY;
        assert_eq!(deriv_cov(G1, 0.0), v.var_di);
        assert_eq!(deriv_cov(G7, 0.0), v.var_d22);
        assert_eq!(deriv_cov(G5, 0.0), v.var_d11);
        assert_eq!(deriv_cov(G6, 0.0), v.var_d12);
        // E[∂11 f ∂22 f] at one point is g6(0); normalized it is 1/3
        let corr = deriv_cov(G6, 0.0) / (v.var_d11 * v.var_d22).sqrt();
        assert!((corr - v.corr_y3y5).abs() < 1e-15);
    }

    #[test]
    fn continuity_at_taylor_switch() {
        let eps = 1e-6;
        for k in DerivCovKind::ALL {
            let above = deriv_cov(k, R_TINY * (1.0 + eps));
            let below = deriv_cov(k, R_TINY * (1.0 - eps));
            assert!((above - below).abs() <= 1e-9, "{k}");
        }
    }

    #[test]
    fn normalized_correlations_bounded() {
        for i in 0..2000 {
            let r = 0.025 * i as f64;
            for k in DerivCovKind::ALL {
                let (va, vb) = k.pointwise_variances();
                let c = deriv_cov(k, r) / (va * vb).sqrt();
                assert!(c.abs() <= 1.0 + 1e-12, "{k} at r={r}: {c}");
            }
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("g4".parse::<DerivCovKind>().unwrap(), G4);
        assert_eq!(G7.to_string(), "g7");
        assert!("g8".parse::<DerivCovKind>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn simplified_matches_alternative(r in 0.01f64..50.0) {
            for k in [G3, G5, G6, G7] {
                let d = deriv_cov(k, r) - deriv_cov_altform(k, r).unwrap();
                proptest::prop_assert!(d.abs() <= 1e-10);
            }
        }
    }
}
