//! Berry random waves as finite superpositions of unit-wavenumber plane waves,
//! grid sampling, the BRW1 grid format and Gaussian scale/location mixtures.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Default number of plane waves per realization.
pub const DEFAULT_WAVES: usize = 256;

/// Default ceiling on the memory a single grid sample may allocate.
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

/// Deterministic RNG stream for one replicate: the master seed selects the key,
/// the replicate index the stream, so replicates never overlap.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

/// `f(x) = √(2/M) Σ_j cos(⟨k_j, x⟩ + φ_j)` with `|k_j| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveEnsemble {
    directions: Vec<f64>,
    phases: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    amplitude: f64,
}

/// Field value and its first and second derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivs {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

impl Derivs {
    pub fn grad_norm(&self) -> f64 {
        self.d1.hypot(self.d2)
    }

    pub fn hessian_det(&self) -> f64 {
        self.d11 * self.d22 - self.d12 * self.d12
    }
}

/// Draws `m` i.i.d. uniform directions, then `m` i.i.d. uniform phases.
pub fn sample_ensemble(m: usize, rng: &mut impl Rng) -> Result<WaveEnsemble> {
    if m == 0 {
        return domain("wave count must be positive");
    }
    let directions: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * TAU).collect();
    let phases: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * TAU).collect();
    WaveEnsemble::from_parts(directions, phases)
}

impl WaveEnsemble {
    pub fn from_parts(directions: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if directions.is_empty() {
            return domain("wave count must be positive");
        }
        if directions.len() != phases.len() {
            return domain(format!(
                "{} directions but {} phases",
                directions.len(),
                phases.len()
            ));
        }
        if directions.iter().chain(&phases).any(|v| !v.is_finite()) {
            return domain("directions and phases must be finite");
        }
        let (k1, k2) = directions.iter().map(|t| (t.cos(), t.sin())).unzip();
        let amplitude = (2.0 / directions.len() as f64).sqrt();
        Ok(Self { directions, phases, k1, k2, amplitude })
    }

    pub fn wave_count(&self) -> usize {
        self.directions.len()
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Unit wave vectors `(cos θ_j, sin θ_j)` as two component slices.
    pub fn wavevectors(&self) -> (&[f64], &[f64]) {
        (&self.k1, &self.k2)
    }

    pub fn eval_field(&self, x: [f64; 2]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.wave_count() {
            s += (self.k1[j] * x[0] + self.k2[j] * x[1] + self.phases[j]).cos();
        }
        self.amplitude * s
    }

    pub fn eval_derivs(&self, x: [f64; 2]) -> Derivs {
        let mut d = Derivs::default();
        for j in 0..self.wave_count() {
            let (a, b) = (self.k1[j], self.k2[j]);
            let (s, c) = (a * x[0] + b * x[1] + self.phases[j]).sin_cos();
            d.f += c;
            d.d1 -= a * s;
            d.d2 -= b * s;
            d.d11 -= a * a * c;
            d.d12 -= a * b * c;
            d.d22 -= b * b * c;
        }
        let amp = self.amplitude;
        Derivs {
            f: amp * d.f,
            d1: amp * d.d1,
            d2: amp * d.d2,
            d11: amp * d.d11,
            d12: amp * d.d12,
            d22: amp * d.d22,
        }
    }
}

/// The window `[-N, N]²` sampled at pixel centres, `pixels_per_unit` per unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub pixels_per_unit: u32,
}

impl GridSpec {
    /// Validates that `2·N·ppu` is an integer of at least 2.
    pub fn new(half_width: f64, pixels_per_unit: u32) -> Result<Self> {
        let spec = Self { half_width, pixels_per_unit };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return domain(format!("half width must be positive, got {}", self.half_width));
        }
        if self.pixels_per_unit == 0 {
            return domain("pixels per unit must be positive");
        }
        let p = 2.0 * self.half_width * self.pixels_per_unit as f64;
        if (p - p.round()).abs() > 1e-9 {
            return domain(format!("2·N·ppu = {p} is not an integer"));
        }
        if p.round() < 2.0 {
            return domain(format!("grid needs at least 2 pixels per side, got {p}"));
        }
        Ok(())
    }

    /// Pixels per side, `P = 2·N·ppu`.
    pub fn side(&self) -> usize {
        (2.0 * self.half_width * self.pixels_per_unit as f64).round() as usize
    }

    pub fn pixel_size(&self) -> f64 {
        1.0 / self.pixels_per_unit as f64
    }

    /// Coordinate of the `i`-th pixel centre along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) / self.pixels_per_unit as f64
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.side()).map(|i| self.coord(i)).collect()
    }

    /// Bytes a sample with or without derivative planes occupies.
    pub fn required_bytes(&self, with_derivs: bool) -> u64 {
        let p = self.side() as u64;
        let planes = if with_derivs { 6 } else { 1 };
        p * p * 8 * planes
    }
}

/// Where a sample's randomness came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub master_seed: u64,
    pub replicate: u64,
}

/// Derivative planes, each `P×P` row-major like the values.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivPlanes {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d11: Vec<f64>,
    pub d12: Vec<f64>,
    pub d22: Vec<f64>,
}

impl DerivPlanes {
    fn tagged(&self) -> [(&'static [u8; 4], &Vec<f64>); 5] {
        [
            (b"D1__", &self.d1),
            (b"D2__", &self.d2),
            (b"D11_", &self.d11),
            (b"D12_", &self.d12),
            (b"D22_", &self.d22),
        ]
    }
}

/// Field values at the pixel centres; `values[i·P + j] = f(coord(i), coord(j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub derivs: Option<DerivPlanes>,
    pub seed: Option<SeedProvenance>,
}

impl FieldSample {
    pub fn side(&self) -> usize {
        self.spec.side()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.side() + j]
    }
}

/// Per-wave factors of the separable evaluation
/// `cos(k_1 x_1 + φ + k_2 x_2) = cos A cos B − sin A sin B`.
struct WaveTables {
    ca: Vec<f64>,
    sa: Vec<f64>,
    cb: Vec<f64>,
    sb: Vec<f64>,
}

impl WaveTables {
    fn new(e: &WaveEnsemble, coords: &[f64]) -> Self {
        let p = coords.len();
        let m = e.wave_count();
        let mut t = WaveTables {
            ca: vec![0.0; m * p],
            sa: vec![0.0; m * p],
            cb: vec![0.0; m * p],
            sb: vec![0.0; m * p],
        };
        for w in 0..m {
            for (i, &x) in coords.iter().enumerate() {
                let (s, c) = (e.k1[w] * x + e.phases[w]).sin_cos();
                t.ca[w * p + i] = c;
                t.sa[w * p + i] = s;
                let (s, c) = (e.k2[w] * x).sin_cos();
                t.cb[w * p + i] = c;
                t.sb[w * p + i] = s;
            }
        }
        t
    }
}

/// Samples `e` on the pixel centres of `spec` under [`DEFAULT_MEMORY_BUDGET`].
pub fn sample_grid(e: &WaveEnsemble, spec: GridSpec, with_derivs: bool) -> Result<FieldSample> {
    sample_grid_with_budget(e, spec, with_derivs, DEFAULT_MEMORY_BUDGET)
}

/// Samples `e` on the pixel centres of `spec`.
///
/// Rows are independent and each row sums the waves in a fixed order, so the
/// output is bitwise identical however rows are distributed over threads.
pub fn sample_grid_with_budget(
    e: &WaveEnsemble,
    spec: GridSpec,
    with_derivs: bool,
    budget_bytes: u64,
) -> Result<FieldSample> {
    spec.validate()?;
    let p = spec.side();
    let table_bytes = (e.wave_count() * p * 4 * 8) as u64;
    let required_bytes = spec.required_bytes(with_derivs) + table_bytes;
    if required_bytes > budget_bytes {
        return Err(Error::Resource { required_bytes, budget_bytes });
    }
    let (values, derivs) = sample_lattice(e, &spec.coords(), with_derivs);
    Ok(FieldSample { spec, values, derivs, seed: None })
}

/// Evaluates `e` on the tensor lattice `coords × coords`, row-major with the
/// row index running over the first coordinate.
pub fn sample_lattice(
    e: &WaveEnsemble,
    coords: &[f64],
    with_derivs: bool,
) -> (Vec<f64>, Option<DerivPlanes>) {
    let p = coords.len();
    let tables = WaveTables::new(e, coords);
    let planes = if with_derivs { 6 } else { 1 };
    // one interleaved buffer per row keeps rows independent for parallel fill
    let mut buf = vec![0.0; planes * p * p];
    let fill = |i: usize, row: &mut [f64]| fill_row(e, &tables, p, i, with_derivs, row);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        buf.par_chunks_mut(planes * p).enumerate().for_each(|(i, row)| fill(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(planes * p).enumerate().for_each(|(i, row)| fill(i, row));
    }
    if !with_derivs {
        return (buf, None);
    }
    let plane = |k: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(p * p);
        for i in 0..p {
            out.extend_from_slice(&buf[(i * planes + k) * p..(i * planes + k + 1) * p]);
        }
        out
    };
    let derivs = DerivPlanes {
        d1: plane(1),
        d2: plane(2),
        d11: plane(3),
        d12: plane(4),
        d22: plane(5),
    };
    (plane(0), Some(derivs))
}

fn fill_row(e: &WaveEnsemble, t: &WaveTables, p: usize, i: usize, with_derivs: bool, row: &mut [f64]) {
    let amp = e.amplitude;
    for w in 0..e.wave_count() {
        let ca = t.ca[w * p + i];
        let sa = t.sa[w * p + i];
        let cb = &t.cb[w * p..(w + 1) * p];
        let sb = &t.sb[w * p..(w + 1) * p];
        let (vals, rest) = row.split_at_mut(p);
        for j in 0..p {
            vals[j] += ca * cb[j] - sa * sb[j];
        }
        if with_derivs {
            let (a, b) = (e.k1[w], e.k2[w]);
            let (d1, rest) = rest.split_at_mut(p);
            let (d2, rest) = rest.split_at_mut(p);
            let (d11, rest) = rest.split_at_mut(p);
            let (d12, d22) = rest.split_at_mut(p);
            for j in 0..p {
                let c = ca * cb[j] - sa * sb[j];
                let s = sa * cb[j] + ca * sb[j];
                d1[j] -= a * s;
                d2[j] -= b * s;
                d11[j] -= a * a * c;
                d12[j] -= a * b * c;
                d22[j] -= b * b * c;
            }
        }
    }
    for v in row.iter_mut() {
        *v *= amp;
    }
}

const MAGIC: &[u8; 4] = b"BRW1";

/// Writes a sample in the BRW1 layout (little endian throughout).
pub fn write_brw1(sample: &FieldSample, mut w: impl Write) -> Result<()> {
    let p = sample.side() as u32;
    let mut buf = Vec::with_capacity(24 + sample.values.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&p.to_le_bytes());
    buf.extend_from_slice(&p.to_le_bytes());
    buf.extend_from_slice(&sample.spec.half_width.to_le_bytes());
    buf.extend_from_slice(&sample.spec.pixels_per_unit.to_le_bytes());
    for v in &sample.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(d) = &sample.derivs {
        for (tag, plane) in d.tagged() {
            buf.extend_from_slice(tag);
            for v in plane {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a BRW1 grid. Derivative planes must be all present or all absent.
pub fn read_brw1(mut r: impl Read) -> Result<FieldSample> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("missing BRW1 magic".into()));
    }
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    if rows != cols {
        return Err(Error::Format(format!("non-square grid {rows}×{cols}")));
    }
    let half_width = cur.f64()?;
    let ppu = cur.u32()?;
    let spec = GridSpec::new(half_width, ppu)
        .map_err(|e| Error::Format(format!("invalid grid header: {e}")))?;
    if spec.side() != rows {
        return Err(Error::Format(format!(
            "header side {rows} disagrees with 2·N·ppu = {}",
            spec.side()
        )));
    }
    let n = rows * cols;
    let values = cur.plane(n)?;
    let mut planes: Vec<([u8; 4], Vec<f64>)> = Vec::new();
    while !cur.done() {
        let tag: [u8; 4] = cur.take(4)?.try_into().expect("four bytes");
        planes.push((tag, cur.plane(n)?));
    }
    let derivs = if planes.is_empty() {
        None
    } else {
        let mut find = |tag: &[u8; 4]| -> Result<Vec<f64>> {
            let idx = planes.iter().position(|(t, _)| t == tag).ok_or_else(|| {
                Error::Format(format!("missing plane {}", String::from_utf8_lossy(tag)))
            })?;
            Ok(planes.swap_remove(idx).1)
        };
        let d = DerivPlanes {
            d1: find(b"D1__")?,
            d2: find(b"D2__")?,
            d11: find(b"D11_")?,
            d12: find(b"D12_")?,
            d22: find(b"D22_")?,
        };
        if let Some((tag, _)) = planes.first() {
            return Err(Error::Format(format!(
                "unexpected plane {}",
                String::from_utf8_lossy(tag)
            )));
        }
        Some(d)
    };
    Ok(FieldSample { spec, values, derivs, seed: None })
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated BRW1 file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn plane(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("grid too large".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// How the shape variable enters the observed field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// `Λ·f`, observed excursion at `u` is the Gaussian one at `u/Λ`.
    Scale,
    /// `f + Λ`, observed excursion at `u` is the Gaussian one at `u − Λ`.
    Location,
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scale" => Ok(Link::Scale),
            "location" => Ok(Link::Location),
            _ => domain(format!("unknown link {s:?}, expected scale or location")),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Scale => "scale",
            Link::Location => "location",
        })
    }
}

/// Law of the shape variable `Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LambdaLaw {
    Constant(f64),
    /// `Λ²` Pareto type I on `(1, ∞)`: `P(Λ² > x) = x^{-α}`.
    ParetoSqrt { alpha: f64 },
    /// `Λ²` exponential with mean `θ`.
    ExpSqrt { theta: f64 },
}

impl LambdaLaw {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            LambdaLaw::Constant(v) => ("constant", v),
            LambdaLaw::ParetoSqrt { alpha } => ("pareto alpha", alpha),
            LambdaLaw::ExpSqrt { theta } => ("exp theta", theta),
        };
        if !v.is_finite() || (v <= 0.0 && !matches!(self, LambdaLaw::Constant(_))) {
            return domain(format!("{name} must be positive and finite, got {v}"));
        }
        Ok(())
    }

    /// `E[Λ²]`, infinite for Pareto with `α ≤ 1`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            LambdaLaw::Constant(v) => v * v,
            LambdaLaw::ParetoSqrt { alpha } if alpha > 1.0 => alpha / (alpha - 1.0),
            LambdaLaw::ParetoSqrt { .. } => f64::INFINITY,
            LambdaLaw::ExpSqrt { theta } => theta,
        }
    }
}

impl FromStr for LambdaLaw {
    type Err = Error;

    /// Accepts `gaussian` (Λ ≡ 1), `constant:λ`, `pareto:α`, `exp:θ`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let param = |what: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::Domain(format!("{what} needs a parameter")))?;
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad {what} parameter {a:?}")))
        };
        let law = match name.trim().to_ascii_lowercase().as_str() {
            "gaussian" if arg.is_none() => LambdaLaw::Constant(1.0),
            "constant" => LambdaLaw::Constant(param("constant")?),
            "pareto" => LambdaLaw::ParetoSqrt { alpha: param("pareto")? },
            "exp" => LambdaLaw::ExpSqrt { theta: param("exp")? },
            _ => return domain(format!("unknown model {s:?}")),
        };
        law.validate()?;
        Ok(law)
    }
}

impl fmt::Display for LambdaLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaLaw::Constant(v) => write!(f, "constant:{v}"),
            LambdaLaw::ParetoSqrt { alpha } => write!(f, "pareto:{alpha}"),
            LambdaLaw::ExpSqrt { theta } => write!(f, "exp:{theta}"),
        }
    }
}

impl TryFrom<String> for LambdaLaw {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LambdaLaw> for String {
    fn from(l: LambdaLaw) -> String {
        l.to_string()
    }
}

/// Perturbation model: link function plus the law of `Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub link: Link,
    pub lambda_law: LambdaLaw,
}

impl MixtureSpec {
    pub fn new(link: Link, lambda_law: LambdaLaw) -> Result<Self> {
        let m = Self { link, lambda_law };
        m.validate()?;
        Ok(m)
    }

    /// The unperturbed Gaussian model.
    pub fn gaussian() -> Self {
        Self { link: Link::Scale, lambda_law: LambdaLaw::Constant(1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda_law.validate()?;
        if let (Link::Scale, LambdaLaw::Constant(v)) = (self.link, self.lambda_law) {
            if v <= 0.0 {
                return domain("scale link needs a positive constant");
            }
        }
        Ok(())
    }

    /// True when `Λ ≡ 1` under the scale link or `Λ ≡ 0` under the location link.
    pub fn is_gaussian(&self) -> bool {
        matches!(
            (self.link, self.lambda_law),
            (Link::Scale, LambdaLaw::Constant(v)) if v == 1.0
        ) || matches!(
            (self.link, self.lambda_law),
            (Link::Location, LambdaLaw::Constant(v)) if v == 0.0
        )
    }
}

impl fmt::Display for MixtureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.link, self.lambda_law)
    }
}

/// One draw of `Λ`.
pub fn sample_lambda(m: &MixtureSpec, rng: &mut impl Rng) -> Result<f64> {
    m.validate()?;
    // U uniform on (0, 1]
    let mut u = || 1.0 - rng.random::<f64>();
    Ok(match m.lambda_law {
        LambdaLaw::Constant(v) => v,
        LambdaLaw::ParetoSqrt { alpha } => u().powf(-0.5 / alpha),
        LambdaLaw::ExpSqrt { theta } => (-theta * u().ln()).sqrt(),
    })
}

/// The Gaussian level `h(u, λ)` whose excursion equals the mixture's excursion at `u`.
pub fn effective_level(m: &MixtureSpec, u: f64, lambda: f64) -> f64 {
    match m.link {
        Link::Scale => u / lambda,
        Link::Location => u - lambda,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn ensemble(seed: u64, m: usize) -> WaveEnsemble {
        sample_ensemble(m, &mut replicate_rng(seed, 0)).unwrap()
    }

    #[test]
    fn single_wave_values() {
        let e = WaveEnsemble::from_parts(vec![0.0], vec![0.0]).unwrap();
        let d = e.eval_derivs([0.0, 0.0]);
        assert!((d.f - SQRT_2).abs() < 1e-15);
        assert!(d.d1.abs() < 1e-15);
        assert!((d.d11 + SQRT_2).abs() < 1e-15);
        assert_eq!(e.amplitude(), SQRT_2);
    }

    #[test]
    fn rejects_empty_or_mismatched() {
        assert!(sample_ensemble(0, &mut replicate_rng(1, 0)).is_err());
        assert!(WaveEnsemble::from_parts(vec![0.0, 1.0], vec![0.0]).is_err());
        assert!(WaveEnsemble::from_parts(vec![], vec![]).is_err());
    }

    #[test]
    fn ensemble_is_reproducible() {
        let a = ensemble(7, 256);
        let b = ensemble(7, 256);
        assert_eq!(a, b);
        let c = sample_ensemble(256, &mut replicate_rng(7, 1)).unwrap();
        assert_ne!(a, c);
        assert!(a.directions().iter().chain(a.phases()).all(|&v| (0.0..TAU).contains(&v)));
    }

    #[test]
    fn eigenfunction_identity_pointwise() {
        let e = ensemble(3, 64);
        let mut rng = replicate_rng(99, 0);
        for _ in 0..1000 {
            let x = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
            let d = e.eval_derivs(x);
            assert!((d.d11 + d.d22 + d.f).abs() < 1e-12);
            assert!((d.f - e.eval_field(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let e = ensemble(11, 32);
        let h = 1e-6;
        for x in [[0.3, -1.2], [5.0, 2.5], [-7.7, 0.1]] {
            let d = e.eval_derivs(x);
            let fd1 = (e.eval_field([x[0] + h, x[1]]) - e.eval_field([x[0] - h, x[1]])) / (2.0 * h);
            let fd2 = (e.eval_field([x[0], x[1] + h]) - e.eval_field([x[0], x[1] - h])) / (2.0 * h);
            assert!((fd1 - d.d1).abs() < 1e-6);
            assert!((fd2 - d.d2).abs() < 1e-6);
            let g = |y: [f64; 2]| e.eval_derivs(y);
            let fd12 = (g([x[0], x[1] + h]).d1 - g([x[0], x[1] - h]).d1) / (2.0 * h);
            assert!((fd12 - d.d12).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_side_and_centres() {
        let spec = GridSpec::new(70.0, 1).unwrap();
        assert_eq!(spec.side(), 140);
        assert_eq!(spec.coord(0), -69.5);
        assert!(GridSpec::new(0.25, 1).is_err());
        assert!(GridSpec::new(1.3, 1).is_err());
        assert!(GridSpec::new(2.5, 2).is_ok());
    }

    #[test]
    fn grid_matches_pointwise_evaluation() {
        let e = ensemble(5, 40);
        let spec = GridSpec::new(3.0, 2).unwrap();
        let s = sample_grid(&e, spec, true).unwrap();
        let d = s.derivs.as_ref().unwrap();
        let p = spec.side();
        for i in 0..p {
            for j in 0..p {
                let x = [spec.coord(i), spec.coord(j)];
                let want = e.eval_derivs(x);
                let k = i * p + j;
                assert!((s.values[k] - want.f).abs() < 1e-12);
                assert!((d.d1[k] - want.d1).abs() < 1e-12);
                assert!((d.d2[k] - want.d2).abs() < 1e-12);
                assert!((d.d12[k] - want.d12).abs() < 1e-12);
                assert!((d.d11[k] + d.d22[k] + s.values[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn grid_variance_near_one() {
        // a single realization fluctuates by several percent through near-parallel
        // wave pairs, so average the spatial variance over a few of them
        let spec = GridSpec::new(50.0, 4).unwrap();
        assert_eq!(spec.side(), 400);
        let reps = 6;
        let mut total = 0.0;
        for r in 0..reps {
            let e = sample_ensemble(256, &mut replicate_rng(2024, r)).unwrap();
            let s = sample_grid(&e, spec, false).unwrap();
            let n = s.values.len() as f64;
            let mean = s.values.iter().sum::<f64>() / n;
            total += s.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        }
        let var = total / reps as f64;
        assert!((var - 1.0).abs() < 0.1, "var = {var}");
    }

    #[test]
    fn grid_respects_budget() {
        let e = ensemble(1, 8);
        let spec = GridSpec::new(100.0, 8).unwrap();
        match sample_grid_with_budget(&e, spec, true, 1 << 20) {
            Err(Error::Resource { required_bytes, budget_bytes }) => {
                assert!(required_bytes > budget_bytes);
                assert!(required_bytes >= spec.required_bytes(true));
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn brw1_round_trip() {
        let e = ensemble(8, 16);
        for with_derivs in [false, true] {
            let s = sample_grid(&e, GridSpec::new(2.0, 3).unwrap(), with_derivs).unwrap();
            let mut bytes = Vec::new();
            write_brw1(&s, &mut bytes).unwrap();
            assert_eq!(&bytes[..4], b"BRW1");
            let p = s.side();
            let expect = 24 + p * p * 8 * if with_derivs { 6 } else { 1 } + if with_derivs { 20 } else { 0 };
            assert_eq!(bytes.len(), expect);
            let back = read_brw1(bytes.as_slice()).unwrap();
            assert_eq!(back, s);
            assert!(read_brw1(&bytes[..bytes.len() - 1]).is_err());
        }
        assert!(read_brw1(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn lambda_laws() {
        let mut rng = replicate_rng(31, 0);
        let c = MixtureSpec::new(Link::Scale, LambdaLaw::Constant(1.0)).unwrap();
        assert_eq!(sample_lambda(&c, &mut rng).unwrap(), 1.0);
        assert!(c.is_gaussian());
        let check = |law: LambdaLaw, want: f64| {
            let m = MixtureSpec::new(Link::Scale, law).unwrap();
            let mut rng = replicate_rng(77, 3);
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_lambda(&m, &mut rng).unwrap().powi(2)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - want).abs() < 3.0 * se + 1e-12, "{law}: {mean} vs {want} (se {se})");
        };
        // α = 4 has finite variance of Λ², so the standard error is meaningful
        check(LambdaLaw::ParetoSqrt { alpha: 4.0 }, 4.0 / 3.0);
        check(LambdaLaw::ExpSqrt { theta: 2.0 }, 2.0);
        check(LambdaLaw::ExpSqrt { theta: 0.5 }, 0.5);
        assert!(MixtureSpec::new(Link::Scale, LambdaLaw::ParetoSqrt { alpha: 0.0 }).is_err());
        assert!(MixtureSpec::new(Link::Scale, LambdaLaw::ExpSqrt { theta: -1.0 }).is_err());
    }

    #[test]
    fn levels() {
        let s = MixtureSpec::gaussian();
        assert_eq!(effective_level(&s, 2.0, 2.0), 1.0);
        let l = MixtureSpec::new(Link::Location, LambdaLaw::Constant(0.5)).unwrap();
        assert_eq!(effective_level(&l, 0.0, 0.5), -0.5);
        assert!(effective_level(&s, 2.0, 1e12).abs() < 1e-11);
    }

    #[test]
    fn parse_models() {
        assert_eq!("pareto:4".parse::<LambdaLaw>().unwrap(), LambdaLaw::ParetoSqrt { alpha: 4.0 });
        assert_eq!("gaussian".parse::<LambdaLaw>().unwrap(), LambdaLaw::Constant(1.0));
        assert!("pareto:0".parse::<LambdaLaw>().is_err());
        assert!("pareto".parse::<LambdaLaw>().is_err());
        assert!("beta:2".parse::<LambdaLaw>().is_err());
        let m = MixtureSpec::new(Link::Location, LambdaLaw::ExpSqrt { theta: 2.0 }).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"link":"location","lambda_law":"exp:2"}"#);
        assert_eq!(serde_json::from_str::<MixtureSpec>(&json).unwrap(), m);
    }

    proptest::proptest! {
        #[test]
        fn eigenfunction_identity_any_ensemble(seed in 0u64..1000, m in 1usize..40,
                                               x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let e = sample_ensemble(m, &mut replicate_rng(seed, 0)).unwrap();
            let d = e.eval_derivs([x, y]);
            proptest::prop_assert!((d.d11 + d.d22 + d.f).abs() < 1e-12);
        }
    }
}
