//! Browser bindings: sample a field, threshold it, and compare its Euler
//! characteristic curve with the closed-form predictions.

use wasm_bindgen::prelude::*;

use berry_core::field::{replicate_rng, sample_ensemble, sample_grid, FieldSample, GridSpec, LambdaLaw, Link, MixtureSpec};
use berry_core::geometry::{euler_pixel_halved, excursion};
use berry_core::harness::parse_levels;
use berry_core::theory::theory_curve;

/// Largest side length the page will render; keeps one sample under ~2 MB.
const MAX_SIDE: usize = 512;

fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// One field sampled on a square pixel grid.
#[wasm_bindgen]
pub struct FieldView {
    sample: FieldSample,
    lo: f64,
    hi: f64,
}

#[wasm_bindgen]
impl FieldView {
    #[wasm_bindgen(constructor)]
    pub fn new(half_width: f64, ppu: u32, waves: u32, seed: u64) -> Result<FieldView, String> {
        let spec = GridSpec::new(half_width, ppu).map_err(js_err)?;
        if spec.side() > MAX_SIDE {
            return Err(format!("grid side {} exceeds {MAX_SIDE} pixels", spec.side()));
        }
        let mut rng = replicate_rng(seed, 0);
        let e = sample_ensemble(waves as usize, &mut rng).map_err(js_err)?;
        let sample = sample_grid(&e, spec, false).map_err(js_err)?;
        let (lo, hi) = sample
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        Ok(FieldView { sample, lo, hi })
    }

    pub fn side(&self) -> usize {
        self.sample.side()
    }

    pub fn half_width(&self) -> f64 {
        self.sample.spec.half_width
    }

    /// RGBA pixels, first row at the top (largest `x₂`). Points of
    /// `{f ≥ u}` are shaded warm by height, the rest cool.
    pub fn excursion_rgba(&self, level: f64) -> Vec<u8> {
        let p = self.side();
        let span = (self.hi - self.lo).max(f64::EPSILON);
        let mut out = vec![0u8; p * p * 4];
        for row in 0..p {
            let j = p - 1 - row;
            for i in 0..p {
                let v = self.sample.at(i, j);
                let t = ((v - self.lo) / span).clamp(0.0, 1.0);
                let px = if v >= level {
                    [200 + (55.0 * t) as u8, 80 + (150.0 * t) as u8, 40, 255]
                } else {
                    [30, 40 + (90.0 * t) as u8, 90 + (110.0 * t) as u8, 255]
                };
                let k = (row * p + i) * 4;
                out[k..k + 4].copy_from_slice(&px);
            }
        }
        out
    }

    /// Boundary-halved pixel Euler characteristic of `{f ≥ u}`.
    pub fn euler(&self, level: f64) -> f64 {
        euler_pixel_halved(&excursion(&self.sample, level))
    }

    pub fn euler_curve(&self, levels: &[f64]) -> Vec<f64> {
        levels.iter().map(|&u| self.euler(u)).collect()
    }

    pub fn area_fraction(&self, level: f64) -> f64 {
        excursion(&self.sample, level).area_fraction()
    }
}

/// Expands `lo:hi:step`, a comma list or a single value.
#[wasm_bindgen]
pub fn levels(spec: &str) -> Result<Vec<f64>, String> {
    parse_levels(spec).map_err(js_err)
}

/// Predicted mean and variance at each level, concatenated:
/// `[mean_0 … mean_{n-1}, var_0 … var_{n-1}]`, the variance being `(2N)³ V(u)`.
/// `model` is `gaussian`, `pareto:α`, `exp:θ` or `constant:λ`; `link` is
/// `scale` or `location`.
#[wasm_bindgen]
pub fn theory(levels: &[f64], half_width: f64, model: &str, link: &str) -> Result<Vec<f64>, String> {
    let law: LambdaLaw = model.parse().map_err(js_err)?;
    let link: Link = link.parse().map_err(js_err)?;
    let spec = MixtureSpec::new(link, law).map_err(js_err)?;
    let c = theory_curve(levels, half_width, &spec).map_err(js_err)?;
    Ok(c.mean_epc.into_iter().chain(c.var_limit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_has_one_pixel_per_cell() {
        let v = FieldView::new(5.0, 2, 64, 1).unwrap();
        assert_eq!(v.side(), 20);
        assert_eq!(v.excursion_rgba(0.0).len(), 20 * 20 * 4);
    }

    #[test]
    fn oversized_grid_rejected() {
        assert!(FieldView::new(200.0, 4, 16, 0).is_err());
    }

    #[test]
    fn theory_splits_mean_and_variance() {
        let u = [0.0, 1.0, 2.0];
        let out = theory(&u, 10.0, "gaussian", "scale").unwrap();
        assert_eq!(out.len(), 6);
        assert!(out[3].abs() < 1e-15 && out[4].abs() < 1e-15);
        assert!(theory(&u, 10.0, "pareto:0", "scale").is_err());
    }
}
