//! Excursion sets and two Euler characteristic estimators: a cubical count on
//! the pixel grid and a Morse count of interior critical points.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::field::{sample_lattice, Derivs, FieldSample, GridSpec, SeedProvenance, WaveEnsemble};

/// Closed excursion `{f >= u}` on the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionImage {
    pub spec: GridSpec,
    pub mask: Vec<bool>,
    pub level: f64,
}

impl ExcursionImage {
    pub fn side(&self) -> usize {
        self.spec.side()
    }

    pub fn area_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&b| b).count() as f64 / self.mask.len() as f64
    }
}

pub fn excursion(sample: &FieldSample, u: f64) -> ExcursionImage {
    ExcursionImage {
        spec: sample.spec,
        mask: sample.values.iter().map(|&v| v >= u).collect(),
        level: u,
    }
}

/// Euler characteristic `V − E + F` of the union of closed true pixels.
pub fn euler_pixel(img: &ExcursionImage) -> i64 {
    euler_mask(&img.mask, img.side())
}

/// [`euler_pixel`] on a raw `p×p` row-major mask.
///
/// Every cell of the complex is shared out to the grid vertices it touches:
/// a vertex counts once, each incident edge one half, each incident pixel one
/// quarter. Summing the local 2×2 contributions (scaled by 4) gives `4χ`.
pub fn euler_mask(mask: &[bool], p: usize) -> i64 {
    assert_eq!(mask.len(), p * p, "mask is not {p}×{p}");
    let at = |i: isize, j: isize| -> i64 {
        if i < 0 || j < 0 || i >= p as isize || j >= p as isize {
            0
        } else {
            mask[i as usize * p + j as usize] as i64
        }
    };
    let mut four_chi = 0i64;
    for vi in 0..=p as isize {
        for vj in 0..=p as isize {
            let a = at(vi - 1, vj - 1);
            let b = at(vi - 1, vj);
            let c = at(vi, vj - 1);
            let d = at(vi, vj);
            let pixels = a + b + c + d;
            if pixels == 0 {
                continue;
            }
            let edges = (a | b) + (b | d) + (c | d) + (a | c);
            four_chi += 4 - 2 * edges + pixels;
        }
    }
    debug_assert_eq!(four_chi % 4, 0);
    four_chi / 4
}

/// Euler characteristic of the excursion restricted to the window boundary:
/// vertices minus edges of the outer ring that belong to true pixels.
pub fn euler_boundary(img: &ExcursionImage) -> i64 {
    let p = img.side();
    let m = &img.mask;
    if p == 0 {
        return 0;
    }
    // walk the 4p boundary edges; each belongs to one pixel
    let mut edge_on = Vec::with_capacity(4 * p);
    for j in 0..p {
        edge_on.push(m[j]);
    }
    for i in 0..p {
        edge_on.push(m[i * p + p - 1]);
    }
    for j in (0..p).rev() {
        edge_on.push(m[(p - 1) * p + j]);
    }
    for i in (0..p).rev() {
        edge_on.push(m[i * p]);
    }
    // the ring is a closed loop of 4p edges; vertex k sits between edges k-1 and k,
    // and is covered when either neighbour edge is, since corner pixels own both
    let n = edge_on.len();
    let edges = edge_on.iter().filter(|&&b| b).count() as i64;
    let vertices = (0..n).filter(|&k| edge_on[k] || edge_on[(k + n - 1) % n]).count() as i64;
    vertices - edges
}

/// `χ(A∩T) − χ(A∩∂T)/2`.
///
/// The raw count carries boundary terms of order `N`; halving the boundary's own
/// Euler characteristic cancels them in expectation, leaving the interior
/// Morse count plus a term bounded by one.
pub fn euler_pixel_halved(img: &ExcursionImage) -> f64 {
    euler_pixel(img) as f64 - 0.5 * euler_boundary(img) as f64
}

/// Morse type of a non-degenerate critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Maximum,
    Minimum,
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub x: [f64; 2],
    pub value: f64,
    pub kind: CriticalKind,
}

/// Something the critical-point search could not resolve.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    /// `|det ∇²f| <= 1e-9` at a stationary point; excluded from the counts.
    Degenerate { x: [f64; 2], value: f64 },
    /// Newton failed from the cell and from all four of its quarters.
    NonConvergent { cell: [f64; 2], grad_norm: f64 },
}

/// Counts of critical points above a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CriticalCounts {
    pub maxima: u64,
    pub minima: u64,
    pub saddles: u64,
    pub degenerate: u64,
}

impl CriticalCounts {
    pub fn euler(&self) -> i64 {
        self.maxima as i64 + self.minima as i64 - self.saddles as i64
    }
}

/// All critical points of a realization in the open window `(−N, N)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSet {
    pub half_width: f64,
    pub points: Vec<CriticalPoint>,
    pub diagnostics: Vec<Diagnostic>,
}

impl CriticalSet {
    /// Counts at level `u`: points with `f >= u` by type, plus degenerate ones above `u`.
    pub fn counts_above(&self, u: f64) -> CriticalCounts {
        let mut c = CriticalCounts::default();
        for p in self.points.iter().filter(|p| p.value >= u) {
            match p.kind {
                CriticalKind::Maximum => c.maxima += 1,
                CriticalKind::Minimum => c.minima += 1,
                CriticalKind::Saddle => c.saddles += 1,
            }
        }
        c.degenerate = self
            .diagnostics
            .iter()
            .filter(|d| matches!(d, Diagnostic::Degenerate { value, .. } if *value >= u))
            .count() as u64;
        c
    }
}

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;
pub const DEGENERATE_DET: f64 = 1e-9;
pub const DEDUP_TOL: f64 = 1e-6;

enum NewtonOutcome {
    Converged([f64; 2], Derivs),
    Degenerate([f64; 2], Derivs),
    Failed(f64),
}

fn newton(e: &WaveEnsemble, start: [f64; 2]) -> NewtonOutcome {
    let mut x = start;
    let mut d = e.eval_derivs(x);
    let mut g = d.grad_norm();
    for _ in 0..NEWTON_MAX_ITER {
        if g <= NEWTON_TOL {
            break;
        }
        let det = d.hessian_det();
        if det.abs() <= DEGENERATE_DET {
            if g <= 1e-6 {
                return NewtonOutcome::Degenerate(x, d);
            }
            return NewtonOutcome::Failed(g);
        }
        let sx = (d.d22 * d.d1 - d.d12 * d.d2) / det;
        let sy = (d.d11 * d.d2 - d.d12 * d.d1) / det;
        // damped step: halve until the gradient norm decreases
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let y = [x[0] - t * sx, x[1] - t * sy];
            let dy = e.eval_derivs(y);
            let gy = dy.grad_norm();
            if gy < g {
                x = y;
                d = dy;
                g = gy;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if g > NEWTON_TOL {
        return NewtonOutcome::Failed(g);
    }
    if d.hessian_det().abs() <= DEGENERATE_DET {
        NewtonOutcome::Degenerate(x, d)
    } else {
        NewtonOutcome::Converged(x, d)
    }
}

fn classify(d: &Derivs) -> CriticalKind {
    let det = d.hessian_det();
    if det < 0.0 {
        CriticalKind::Saddle
    } else if d.d11 + d.d22 < 0.0 {
        CriticalKind::Maximum
    } else {
        CriticalKind::Minimum
    }
}

fn sign_change(vals: [f64; 4]) -> bool {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    lo <= 0.0 && hi >= 0.0
}

/// Locates all critical points of `e` in `(−N, N)²`.
///
/// Cells of side `1/scan_resolution` are candidates when both gradient
/// components change sign over their corners, or when a Newton step from the
/// cell centre lands within one cell width of it. Candidates are refined by
/// damped Newton; failures are retried from the four quarter cells and then
/// reported, never dropped.
pub fn find_critical_points(e: &WaveEnsemble, half_width: f64, scan_resolution: u32) -> Result<CriticalSet> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return domain(format!("half width must be positive, got {half_width}"));
    }
    if scan_resolution == 0 {
        return domain("scan resolution must be positive");
    }
    let n = (2.0 * half_width * scan_resolution as f64).ceil() as usize;
    let h = 2.0 * half_width / n as f64;
    let corners: Vec<f64> = (0..=n).map(|i| -half_width + i as f64 * h).collect();
    let centres: Vec<f64> = (0..n).map(|i| -half_width + (i as f64 + 0.5) * h).collect();
    let (_, cd) = sample_lattice(e, &corners, true);
    let cd = cd.expect("derivatives requested");
    let (cv, md) = sample_lattice(e, &centres, true);
    let md = md.expect("derivatives requested");
    let nc = n + 1;

    let scan_cell = |i: usize, j: usize| -> (Vec<CriticalPoint>, Vec<Diagnostic>) {
        let idx = [i * nc + j, i * nc + j + 1, (i + 1) * nc + j, (i + 1) * nc + j + 1];
        let g1 = idx.map(|k| cd.d1[k]);
        let g2 = idx.map(|k| cd.d2[k]);
        let m = i * n + j;
        let centre = Derivs {
            f: cv[m],
            d1: md.d1[m],
            d2: md.d2[m],
            d11: md.d11[m],
            d12: md.d12[m],
            d22: md.d22[m],
        };
        let det = centre.hessian_det();
        let predicted = det.abs() > DEGENERATE_DET && {
            let sx = (centre.d22 * centre.d1 - centre.d12 * centre.d2) / det;
            let sy = (centre.d11 * centre.d2 - centre.d12 * centre.d1) / det;
            sx.abs() <= h && sy.abs() <= h
        };
        if !(predicted || (sign_change(g1) && sign_change(g2))) {
            return (Vec::new(), Vec::new());
        }
        let c = [centres[i], centres[j]];
        let mut points = Vec::new();
        let mut diags = Vec::new();
        let record = |out: NewtonOutcome, points: &mut Vec<CriticalPoint>, diags: &mut Vec<Diagnostic>| -> Option<f64> {
            match out {
                NewtonOutcome::Converged(x, d) => {
                    points.push(CriticalPoint { x, value: d.f, kind: classify(&d) });
                    None
                }
                NewtonOutcome::Degenerate(x, d) => {
                    diags.push(Diagnostic::Degenerate { x, value: d.f });
                    None
                }
                NewtonOutcome::Failed(g) => Some(g),
            }
        };
        if let Some(g) = record(newton(e, c), &mut points, &mut diags) {
            let q = 0.25 * h;
            let mut worst: Option<f64> = Some(g);
            let mut any = false;
            for (dx, dy) in [(-q, -q), (-q, q), (q, -q), (q, q)] {
                match record(newton(e, [c[0] + dx, c[1] + dy]), &mut points, &mut diags) {
                    None => any = true,
                    Some(g) => worst = Some(worst.map_or(g, |w: f64| w.min(g))),
                }
            }
            if !any {
                diags.push(Diagnostic::NonConvergent { cell: c, grad_norm: worst.unwrap_or(g) });
            }
        }
        (points, diags)
    };

    let rows: Vec<(Vec<CriticalPoint>, Vec<Diagnostic>)> = {
        let row = |i: usize| {
            let mut pts = Vec::new();
            let mut dg = Vec::new();
            for j in 0..n {
                let (p, d) = scan_cell(i, j);
                pts.extend(p);
                dg.extend(d);
            }
            (pts, dg)
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(row).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n).map(row).collect()
        }
    };
    let inside = |x: &[f64; 2]| x[0].abs() < half_width && x[1].abs() < half_width;
    let mut points = Vec::new();
    let mut diagnostics = Vec::new();
    for (p, d) in rows {
        points.extend(p.into_iter().filter(|p| inside(&p.x)));
        diagnostics.extend(d.into_iter().filter(|d| match d {
            Diagnostic::Degenerate { x, .. } => inside(x),
            Diagnostic::NonConvergent { .. } => true,
        }));
    }
    let points = dedup_points(points, |p| p.x);
    let (degenerate, failed): (Vec<_>, Vec<_>) = diagnostics
        .into_iter()
        .partition(|d| matches!(d, Diagnostic::Degenerate { .. }));
    let mut diagnostics = dedup_points(degenerate, |d| match d {
        Diagnostic::Degenerate { x, .. } => *x,
        Diagnostic::NonConvergent { cell, .. } => *cell,
    });
    diagnostics.extend(failed);
    Ok(CriticalSet { half_width, points, diagnostics })
}

/// Sorts by position and merges entries closer than [`DEDUP_TOL`] in both coordinates.
fn dedup_points<T>(mut items: Vec<T>, pos: impl Fn(&T) -> [f64; 2]) -> Vec<T> {
    items.sort_by(|a, b| {
        let (pa, pb) = (pos(a), pos(b));
        pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1]))
    });
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        let p = pos(&item);
        let dup = out.iter().rev().take_while(|q| p[0] - pos(q)[0] <= DEDUP_TOL).any(|q| {
            let q = pos(q);
            (p[1] - q[1]).abs() <= DEDUP_TOL
        });
        if !dup {
            out.push(item);
        }
    }
    out
}

/// Modified Euler characteristic by the Morse count of interior critical points.
pub fn euler_critical(
    e: &WaveEnsemble,
    half_width: f64,
    u: f64,
    scan_resolution: u32,
) -> Result<(i64, CriticalCounts, Vec<Diagnostic>)> {
    let set = find_critical_points(e, half_width, scan_resolution)?;
    let counts = set.counts_above(u);
    Ok((counts.euler(), counts, set.diagnostics))
}

/// Euler characteristic estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpcMethod {
    /// Pixel count with the window-boundary contribution halved out.
    #[serde(rename = "pixel")]
    Pixel,
    /// Raw `V − E + F` of the closed pixel union.
    #[serde(rename = "pixel-full")]
    PixelFull,
    /// Interior critical-point count.
    #[serde(rename = "critical")]
    Critical,
}

impl EpcMethod {
    pub fn name(self) -> &'static str {
        match self {
            EpcMethod::Pixel => "pixel",
            EpcMethod::PixelFull => "pixel-full",
            EpcMethod::Critical => "critical",
        }
    }
}

impl fmt::Display for EpcMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EpcMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(EpcMethod::Pixel),
            "pixel-full" => Ok(EpcMethod::PixelFull),
            "critical" => Ok(EpcMethod::Critical),
            _ => domain(format!("unknown method {s:?}, expected pixel, pixel-full or critical")),
        }
    }
}

/// Euler characteristic estimate at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct EpcReport {
    pub level: f64,
    pub method: EpcMethod,
    /// Integral except for [`EpcMethod::Pixel`], which may be a half-integer.
    pub ec: f64,
    /// Present for the critical-point method only.
    pub counts: Option<CriticalCounts>,
    pub half_width: f64,
    /// Pixels per unit, or scan cells per unit for the critical method.
    pub resolution: u32,
    pub seed: Option<SeedProvenance>,
}

/// Input for [`epc_curve`].
#[derive(Debug, Clone, Copy)]
pub enum EpcSource<'a> {
    Sample(&'a FieldSample),
    Ensemble {
        ensemble: &'a WaveEnsemble,
        half_width: f64,
        scan_resolution: u32,
        seed: Option<SeedProvenance>,
    },
}

/// One report per level; a pixel method thresholds the same sample at every level,
/// the critical method locates critical points once.
pub fn epc_curve(source: EpcSource<'_>, levels: &[f64], method: EpcMethod) -> Result<Vec<EpcReport>> {
    if let Some(u) = levels.iter().find(|u| !u.is_finite()) {
        return domain(format!("levels must be finite, got {u}"));
    }
    match (source, method) {
        (EpcSource::Sample(s), EpcMethod::Pixel | EpcMethod::PixelFull) => Ok(levels
            .iter()
            .map(|&u| {
                let img = excursion(s, u);
                let ec = match method {
                    EpcMethod::Pixel => euler_pixel_halved(&img),
                    _ => euler_pixel(&img) as f64,
                };
                EpcReport {
                    level: u,
                    method,
                    ec,
                    counts: None,
                    half_width: s.spec.half_width,
                    resolution: s.spec.pixels_per_unit,
                    seed: s.seed,
                }
            })
            .collect()),
        (EpcSource::Ensemble { ensemble, half_width, scan_resolution, seed }, EpcMethod::Critical) => {
            let set = find_critical_points(ensemble, half_width, scan_resolution)?;
            Ok(levels
                .iter()
                .map(|&u| {
                    let counts = set.counts_above(u);
                    EpcReport {
                        level: u,
                        method,
                        ec: counts.euler() as f64,
                        counts: Some(counts),
                        half_width,
                        resolution: scan_resolution,
                        seed,
                    }
                })
                .collect())
        }
        (EpcSource::Sample(_), EpcMethod::Critical) => Err(Error::Precondition(
            "the critical method needs the wave ensemble, not only a grid".into(),
        )),
        (EpcSource::Ensemble { .. }, _) => Err(Error::Precondition(
            "pixel methods need a sampled grid".into(),
        )),
    }
}

pub const EPC_CSV_HEADER: &str = "replicate,N,ppu,method,u,ec,n_max,n_min,n_saddle,n_degenerate,seed";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Exact text for an Euler characteristic: integer when integral, else one decimal.
pub fn fmt_ec(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Writes reports as CSV rows; counts are blank for pixel methods.
pub fn write_epc_csv(mut w: impl Write, reports: &[EpcReport], header: bool) -> Result<()> {
    if header {
        writeln!(w, "{EPC_CSV_HEADER}")?;
    }
    for r in reports {
        let (replicate, seed) = match r.seed {
            Some(s) => (s.replicate.to_string(), s.master_seed.to_string()),
            None => (String::new(), String::new()),
        };
        let counts = match r.counts {
            Some(c) => format!("{},{},{},{}", c.maxima, c.minima, c.saddles, c.degenerate),
            None => ",,,".to_string(),
        };
        writeln!(
            w,
            "{replicate},{},{},{},{},{},{counts},{seed}",
            fmt_f64(r.half_width),
            r.resolution,
            r.method,
            fmt_f64(r.level),
            fmt_ec(r.ec),
        )?;
    }
    Ok(())
}
