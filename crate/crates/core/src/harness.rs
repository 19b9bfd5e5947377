//! Monte Carlo experiments: EPC curves over independent replicates, compared
//! with the limit theory and tested for normality level by level.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{domain, Error, Result};
use crate::field::{
    effective_level, replicate_rng, sample_ensemble, sample_grid_with_budget, sample_lambda, GridSpec,
    MixtureSpec, DEFAULT_MEMORY_BUDGET, DEFAULT_WAVES,
};
use crate::geometry::{euler_pixel, euler_pixel_halved, excursion, find_critical_points, fmt_f64, EpcMethod};
use crate::par::map_indexed;
use crate::specfun::std_normal_cdf;
use crate::theory::{mean_epc, perturbed_mean_epc, perturbed_variance_limit, var_total};

/// Parses `lo:hi:step`, a comma-separated list, or a single level.
///
/// Ranges start at `lo` and include `hi` when `(hi − lo)/step` is an integer
/// within 1e-9; values are rounded to 12 decimals so that e.g. `-1:1:0.1`
/// contains an exact `0`.
pub fn parse_levels(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        let v: f64 = s.trim().parse().map_err(|_| Error::Domain(format!("bad level {s:?}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            domain(format!("level {s:?} is not finite"))
        }
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) {
                return domain(format!("level step must be positive, got {step}"));
            }
            if hi < lo {
                return domain(format!("level range {lo}:{hi} is decreasing"));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| round12(lo + i as f64 * step)).collect())
        }
        [single] => single.split(',').map(num).collect(),
        _ => domain(format!("level spec {spec:?} is neither lo:hi:step nor a list")),
    }
}

fn round12(v: f64) -> f64 {
    let r = (v * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalityKind {
    AndersonDarling,
    KolmogorovSmirnov,
}

impl FromStr for NormalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "anderson-darling" | "ad" => Ok(NormalityKind::AndersonDarling),
            "kolmogorov-smirnov" | "ks" => Ok(NormalityKind::KolmogorovSmirnov),
            _ => domain(format!("unknown normality test {s:?}")),
        }
    }
}

impl fmt::Display for NormalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalityKind::AndersonDarling => "anderson-darling",
            NormalityKind::KolmogorovSmirnov => "kolmogorov-smirnov",
        })
    }
}

pub const MIN_NORMALITY_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Normality {
    pub statistic: f64,
    /// `None` for a constant sample.
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

/// Goodness of fit to a normal law with estimated mean and variance.
///
/// Anderson–Darling uses `A*² = A²(1 + 0.75/n + 2.25/n²)` with the usual
/// piecewise p-value approximation; Kolmogorov–Smirnov uses the asymptotic
/// Kolmogorov distribution.
pub fn normality_test(samples: &[f64], kind: NormalityKind) -> Result<Normality> {
    let n = samples.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(Error::Precondition(format!(
            "normality test needs at least {MIN_NORMALITY_SAMPLES} samples, got {n}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return domain("normality test samples must be finite");
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Ok(Normality { statistic: f64::NAN, p_value: None, degenerate: true });
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let (statistic, p) = match kind {
        NormalityKind::AndersonDarling => {
            let mut s = 0.0;
            for i in 0..n {
                let lo = std_normal_cdf(z[i]).max(f64::MIN_POSITIVE).ln();
                let hi = std_normal_cdf(-z[n - 1 - i]).max(f64::MIN_POSITIVE).ln();
                s += (2 * i + 1) as f64 * (lo + hi);
            }
            let a2 = -nf - s / nf;
            let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
            (a, anderson_darling_p(a))
        }
        NormalityKind::KolmogorovSmirnov => {
            let mut d = 0.0f64;
            for (i, &v) in z.iter().enumerate() {
                let f = std_normal_cdf(v);
                d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
            }
            let lambda = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
            (d, kolmogorov_q(lambda))
        }
    };
    Ok(Normality { statistic, p_value: Some(p.clamp(0.0, 1.0)), degenerate: false })
}

fn anderson_darling_p(a: f64) -> f64 {
    if a < 0.2 {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    } else if a < 0.34 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else if a < 0.6 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a < 10.0 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else {
        3.7e-24
    }
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    2.0 * sum
}

fn default_waves() -> usize {
    DEFAULT_WAVES
}

fn default_method() -> EpcMethod {
    EpcMethod::Pixel
}

fn default_normality() -> NormalityKind {
    NormalityKind::AndersonDarling
}

fn default_scan() -> u32 {
    4
}

fn deserialize_levels<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Levels {
        Spec(String),
        List(Vec<f64>),
    }
    match Levels::deserialize(d)? {
        Levels::Spec(s) => parse_levels(&s).map_err(serde::de::Error::custom),
        Levels::List(v) => Ok(v),
    }
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MCConfig {
    pub replicates: u64,
    pub half_width: f64,
    pub pixels_per_unit: u32,
    #[serde(default = "default_waves")]
    pub waves: usize,
    /// `lo:hi:step`, a comma list, or an array of numbers.
    #[serde(deserialize_with = "deserialize_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_method")]
    pub method: EpcMethod,
    #[serde(default)]
    pub mixture: Option<MixtureSpec>,
    pub master_seed: u64,
    #[serde(default = "default_normality")]
    pub normality_test: NormalityKind,
    /// Scan cells per unit for the critical-point method.
    #[serde(default = "default_scan")]
    pub scan_resolution: u32,
    #[serde(default)]
    pub memory_budget_bytes: Option<u64>,
}

impl MCConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: MCConfig = toml::from_str(s).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return domain("replicates must be positive");
        }
        if self.waves == 0 {
            return domain("wave count must be positive");
        }
        if self.levels.is_empty() {
            return domain("at least one level is needed");
        }
        if let Some(u) = self.levels.iter().find(|u| !u.is_finite()) {
            return domain(format!("levels must be finite, got {u}"));
        }
        GridSpec::new(self.half_width, self.pixels_per_unit)?;
        if self.method == EpcMethod::Critical && self.scan_resolution == 0 {
            return domain("scan resolution must be positive");
        }
        if let Some(m) = &self.mixture {
            m.validate()?;
        }
        Ok(())
    }

    fn mixture_or_gaussian(&self) -> MixtureSpec {
        self.mixture.unwrap_or_else(MixtureSpec::gaussian)
    }
}

/// Within 0.05 of a zero of the limiting variance of the Gaussian model.
pub fn near_degenerate_level(u: f64) -> bool {
    [-1.0, 0.0, 1.0].iter().any(|c| (u - c).abs() <= 0.05 + 1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub level: f64,
    pub sample_mean: f64,
    pub sample_var: f64,
    pub std_error: f64,
    pub theory_mean: f64,
    pub theory_var_total: f64,
    /// `sample_var / theory_var_total`, absent at degenerate levels.
    pub var_ratio: Option<f64>,
    pub degenerate: bool,
    pub normality: Option<Normality>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCReport {
    pub version: String,
    pub config: MCConfig,
    pub completed_replicates: u64,
    /// Why the run stopped early, if it did; results cover the completed replicates.
    pub failure: Option<String>,
    pub warnings: Vec<String>,
    pub levels: Vec<LevelSummary>,
    /// `ec[r][k]`: EC of replicate `r` at level `k`.
    #[serde(skip)]
    pub ec: Vec<Vec<f64>>,
    /// Draw of `Λ` per replicate (1 without a mixture).
    #[serde(skip)]
    pub lambda: Vec<f64>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl MCReport {
    /// `(ec − theory_mean)/√theory_var_total`, `None` at degenerate levels.
    pub fn standardized(&self, replicate: usize, level: usize) -> Option<f64> {
        let s = &self.levels[level];
        (!s.degenerate).then(|| (self.ec[replicate][level] - s.theory_mean) / s.theory_var_total.sqrt())
    }

    /// Standardized by the sample moments instead of the theory.
    pub fn standardized_sample(&self, replicate: usize, level: usize) -> Option<f64> {
        let s = &self.levels[level];
        (s.sample_var > 0.0).then(|| (self.ec[replicate][level] - s.sample_mean) / s.sample_var.sqrt())
    }
}

/// EC values at every level of `cfg` for one replicate, and its `Λ`.
pub fn mc_replicate(cfg: &MCConfig, replicate: u64) -> Result<(Vec<f64>, f64)> {
    let mut rng = replicate_rng(cfg.master_seed, replicate);
    let e = sample_ensemble(cfg.waves, &mut rng)?;
    let mixture = cfg.mixture_or_gaussian();
    let lambda = if cfg.mixture.is_some() { sample_lambda(&mixture, &mut rng)? } else { 1.0 };
    let levels = cfg.levels.iter().map(|&u| effective_level(&mixture, u, lambda));
    let ec = match cfg.method {
        EpcMethod::Critical => {
            let set = find_critical_points(&e, cfg.half_width, cfg.scan_resolution)?;
            levels.map(|u| set.counts_above(u).euler() as f64).collect()
        }
        method => {
            let spec = GridSpec::new(cfg.half_width, cfg.pixels_per_unit)?;
            let budget = cfg.memory_budget_bytes.unwrap_or(DEFAULT_MEMORY_BUDGET);
            let sample = sample_grid_with_budget(&e, spec, false, budget)?;
            levels
                .map(|u| {
                    let img = excursion(&sample, u);
                    if method == EpcMethod::Pixel {
                        euler_pixel_halved(&img)
                    } else {
                        euler_pixel(&img) as f64
                    }
                })
                .collect()
        }
    };
    Ok((ec, lambda))
}

/// Runs every replicate of `cfg` (in parallel when enabled) and aggregates by
/// level in replicate order, so the report does not depend on the thread count.
pub fn run_mc(cfg: &MCConfig) -> Result<MCReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    if cfg.method == EpcMethod::Critical && cfg.half_width > 30.0 {
        warnings.push(format!(
            "critical-point method at N={} is costly; intended for small validation runs",
            cfg.half_width
        ));
    }
    if cfg.replicates < MIN_NORMALITY_SAMPLES as u64 {
        warnings.push(format!("fewer than {MIN_NORMALITY_SAMPLES} replicates: no normality test"));
    }
    let results = map_indexed(cfg.replicates, |r| mc_replicate(cfg, r));
    let mut ec = Vec::with_capacity(results.len());
    let mut lambda = Vec::with_capacity(results.len());
    let mut failure = None;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok((row, l)) => {
                ec.push(row);
                lambda.push(l);
            }
            Err(e) => {
                failure = Some(format!("replicate {r}: {e}"));
                break;
            }
        }
    }
    if ec.is_empty() {
        // nothing usable: surface the error itself
        return Err(match mc_replicate(cfg, 0) {
            Err(e) => e,
            Ok(_) => Error::Precondition(failure.unwrap_or_default()),
        });
    }
    let levels = summarize(cfg, &ec)?;
    Ok(MCReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        completed_replicates: ec.len() as u64,
        failure,
        warnings,
        levels,
        ec,
        lambda,
        runtime: start.elapsed(),
    })
}

fn summarize(cfg: &MCConfig, ec: &[Vec<f64>]) -> Result<Vec<LevelSummary>> {
    let n = ec.len() as f64;
    let mixture = cfg.mixture_or_gaussian();
    let volume = (2.0 * cfg.half_width).powi(3);
    cfg.levels
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let column: Vec<f64> = ec.iter().map(|row| row[k]).collect();
            let sample_mean = column.iter().sum::<f64>() / n;
            let sample_var = if ec.len() > 1 {
                column.iter().map(|x| (x - sample_mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let (theory_mean, theory_var_total, degenerate) = match &cfg.mixture {
                None => (mean_epc(u, cfg.half_width), var_total(u, cfg.half_width), near_degenerate_level(u)),
                Some(m) => {
                    let pv = perturbed_variance_limit(u, m)?;
                    (perturbed_mean_epc(u, cfg.half_width, &mixture)?, volume * pv.value, pv.degenerate)
                }
            };
            let degenerate = degenerate || !(theory_var_total > 0.0);
            let normality = if column.len() >= MIN_NORMALITY_SAMPLES {
                let standardized: Vec<f64> = if degenerate {
                    column.clone()
                } else {
                    column.iter().map(|x| (x - theory_mean) / theory_var_total.sqrt()).collect()
                };
                Some(normality_test(&standardized, cfg.normality_test)?)
            } else {
                None
            };
            Ok(LevelSummary {
                level: u,
                sample_mean,
                sample_var,
                std_error: (sample_var / n).sqrt(),
                theory_mean,
                theory_var_total,
                var_ratio: (!degenerate).then(|| sample_var / theory_var_total),
                degenerate,
                normality,
            })
        })
        .collect()
}

fn metadata_line(report: &MCReport) -> Result<String> {
    Ok(format!(
        "# berry {} replicates={} config={}",
        report.version,
        report.completed_replicates,
        serde_json::to_string(&report.config)?
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub const RESULTS_CSV_HEADER: &str = "replicate,u,ec,standardized,standardized_sample,lambda";
pub const SUMMARY_CSV_HEADER: &str =
    "u,sample_mean,sample_var,std_error,theory_mean,theory_var_total,var_ratio,normality_stat,p_value,degenerate";

/// One row per (replicate, level), after a `#` metadata line.
pub fn write_results_csv(mut w: impl Write, report: &MCReport) -> Result<()> {
    writeln!(w, "{}", metadata_line(report)?)?;
    writeln!(w, "{RESULTS_CSV_HEADER}")?;
    for (r, row) in report.ec.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            writeln!(
                w,
                "{r},{},{},{},{},{}",
                fmt_f64(report.levels[k].level),
                fmt_f64(v),
                opt(report.standardized(r, k)),
                opt(report.standardized_sample(r, k)),
                fmt_f64(report.lambda[r]),
            )?;
        }
    }
    Ok(())
}

/// One row per level, after a `#` metadata line.
pub fn write_summary_csv(mut w: impl Write, report: &MCReport) -> Result<()> {
    writeln!(w, "{}", metadata_line(report)?)?;
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for s in &report.levels {
        let (stat, p) = match &s.normality {
            Some(n) if !n.degenerate => (Some(n.statistic), n.p_value),
            _ => (None, None),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(s.level),
            fmt_f64(s.sample_mean),
            fmt_f64(s.sample_var),
            fmt_f64(s.std_error),
            fmt_f64(s.theory_mean),
            fmt_f64(s.theory_var_total),
            opt(s.var_ratio),
            opt(stat),
            opt(p),
            s.degenerate,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportJson<'a> {
    #[serde(flatten)]
    report: &'a MCReport,
    normality_note: &'static str,
    checks: ReportChecks,
}

#[derive(Serialize)]
struct ReportChecks {
    levels: usize,
    degenerate_levels: Vec<f64>,
    /// Fraction of non-degenerate tested levels with p > 0.01.
    normal_fraction_at_1pct: Option<f64>,
}

/// Config echo plus per-level aggregates and summary checks.
pub fn write_report_json(mut w: impl Write, report: &MCReport) -> Result<()> {
    let tested: Vec<f64> = report
        .levels
        .iter()
        .filter(|s| !s.degenerate)
        .filter_map(|s| s.normality.and_then(|n| n.p_value))
        .collect();
    let json = ReportJson {
        report,
        normality_note: "Anderson-Darling (or Kolmogorov-Smirnov) with estimated mean and variance is used \
                         in place of Shapiro-Wilk",
        checks: ReportChecks {
            levels: report.levels.len(),
            degenerate_levels: report.levels.iter().filter(|s| s.degenerate).map(|s| s.level).collect(),
            normal_fraction_at_1pct: (!tested.is_empty())
                .then(|| tested.iter().filter(|&&p| p > 0.01).count() as f64 / tested.len() as f64),
        },
    };
    serde_json::to_writer_pretty(&mut w, &json)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub half_width: f64,
    pub level: f64,
    pub var_ratio: Option<f64>,
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub half_width: f64,
    /// Medians over non-degenerate levels with `1.5 ≤ |u| ≤ 3`.
    pub median_p_value: Option<f64>,
    pub median_var_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub summary: Vec<ConvergenceSummary>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Repeats `template` for each window half-width in `half_widths`.
pub fn convergence_study(half_widths: &[f64], template: &MCConfig) -> Result<ConvergenceTable> {
    if half_widths.is_empty() || half_widths.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("window sizes must be increasing".into()));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &n in half_widths {
        let cfg = MCConfig { half_width: n, ..template.clone() };
        let report = run_mc(&cfg)?;
        let mut ps = Vec::new();
        let mut ratios = Vec::new();
        for s in &report.levels {
            let p = s.normality.and_then(|x| x.p_value);
            if !s.degenerate && (1.5..=3.0).contains(&s.level.abs()) {
                ps.extend(p);
                ratios.extend(s.var_ratio);
            }
            rows.push(ConvergenceRow {
                half_width: n,
                level: s.level,
                var_ratio: s.var_ratio,
                p_value: p,
                degenerate: s.degenerate,
            });
        }
        summary.push(ConvergenceSummary {
            half_width: n,
            median_p_value: median(ps),
            median_var_ratio: median(ratios),
        });
    }
    Ok(ConvergenceTable { rows, summary })
}
