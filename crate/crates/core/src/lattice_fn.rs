//! Finitely supported functions on `Z^n` stored densely over a bounding box,
//! plus the discrete Fourier bridge to sampled periodic multipliers.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{Read, Write};

use num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::fft::fft_nd;
use crate::poly_map::PCube;
use crate::sum::{ComplexNeumaier, Neumaier};

/// A product of integer intervals `[lo_i, lo_i + shape_i)`, indexed row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<i64>,
    shape: Vec<usize>,
}

impl BoxDomain {
    pub fn new(lo: Vec<i64>, shape: Vec<usize>) -> Result<Self> {
        dim_check(lo.len(), shape.len())?;
        if lo.is_empty() {
            return Err(Error::InvalidArgument("zero-dimensional box".into()));
        }
        Ok(Self { lo, shape })
    }

    /// Inclusive bounds; an empty range on any axis yields an empty box.
    pub fn from_bounds(lo: &[i64], hi: &[i64]) -> Result<Self> {
        dim_check(lo.len(), hi.len())?;
        let shape = lo.iter().zip(hi).map(|(&a, &b)| (b - a + 1).max(0) as usize).collect();
        Self::new(lo.to_vec(), shape)
    }

    pub fn symmetric(n: usize, radius: i64) -> Self {
        Self { lo: vec![-radius; n], shape: vec![(2 * radius + 1) as usize; n] }
    }

    pub fn of_cube(q: &PCube) -> Self {
        Self { lo: q.lo().to_vec(), shape: q.len().iter().map(|&l| l as usize).collect() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn hi(&self) -> Vec<i64> {
        self.lo.iter().zip(&self.shape).map(|(&a, &s)| a + s as i64 - 1).collect()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = 0usize;
        for ((&v, &a), &s) in x.iter().zip(&self.lo).zip(&self.shape) {
            let off = v - a;
            if off < 0 || off as usize >= s {
                return None;
            }
            idx = idx * s + off as usize;
        }
        Some(idx)
    }

    pub fn point(&self, mut idx: usize) -> Vec<i64> {
        let mut p = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            p[k] = self.lo[k] + (idx % self.shape[k]) as i64;
            idx /= self.shape[k];
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        self.index_of(x).is_some()
    }

    pub fn contains_box(&self, other: &BoxDomain) -> bool {
        other.is_empty()
            || other.lo.iter().zip(other.hi()).enumerate().all(|(k, (&a, b))| {
                a >= self.lo[k] && b < self.lo[k] + self.shape[k] as i64
            })
    }

    pub fn hull(&self, other: &BoxDomain) -> BoxDomain {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        let lo: Vec<i64> = self.lo.iter().zip(&other.lo).map(|(a, b)| *a.min(b)).collect();
        let hi: Vec<i64> = self.hi().iter().zip(other.hi()).map(|(a, b)| *a.max(&b)).collect();
        BoxDomain::from_bounds(&lo, &hi).unwrap()
    }

    pub fn intersect(&self, other: &BoxDomain) -> BoxDomain {
        let lo: Vec<i64> = self.lo.iter().zip(&other.lo).map(|(a, b)| *a.max(b)).collect();
        let hi: Vec<i64> = self.hi().iter().zip(other.hi()).map(|(a, b)| *a.min(&b)).collect();
        BoxDomain::from_bounds(&lo, &hi).unwrap()
    }

    /// Minkowski sum with the box `[lo_ext, hi_ext]`.
    pub fn expand(&self, lo_ext: &[i64], hi_ext: &[i64]) -> BoxDomain {
        let lo: Vec<i64> = self.lo.iter().zip(lo_ext).map(|(a, b)| a + b).collect();
        let hi: Vec<i64> = self.hi().iter().zip(hi_ext).map(|(a, b)| a + b).collect();
        BoxDomain::from_bounds(&lo, &hi).unwrap()
    }

    pub fn translate(&self, v: &[i64]) -> BoxDomain {
        BoxDomain { lo: self.lo.iter().zip(v).map(|(a, b)| a + b).collect(), shape: self.shape.clone() }
    }
}

/// Complex values on a bounding box; zero everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFunction {
    domain: BoxDomain,
    values: Vec<Complex64>,
}

impl LatticeFunction {
    pub fn new(domain: BoxDomain, values: Vec<Complex64>) -> Result<Self> {
        dim_check(domain.len(), values.len())?;
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: BoxDomain) -> Self {
        let values = vec![Complex64::default(); domain.len()];
        Self { domain, values }
    }

    pub fn from_real(domain: BoxDomain, values: Vec<f64>) -> Result<Self> {
        Self::new(domain, values.into_iter().map(Complex64::from).collect())
    }

    pub fn from_fn(domain: BoxDomain, mut f: impl FnMut(&[i64]) -> Complex64) -> Self {
        let values = domain.points().map(|p| f(&p)).collect();
        Self { domain, values }
    }

    pub fn delta(x: &[i64]) -> Self {
        let domain = BoxDomain::new(x.to_vec(), vec![1; x.len()]).unwrap();
        Self { domain, values: vec![Complex64::new(1.0, 0.0)] }
    }

    pub fn indicator(domain: BoxDomain) -> Self {
        let values = vec![Complex64::new(1.0, 0.0); domain.len()];
        Self { domain, values }
    }

    pub fn indicator_cube(q: &PCube) -> Self {
        Self::indicator(BoxDomain::of_cube(q))
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, x: &[i64]) -> Complex64 {
        self.domain.index_of(x).map_or(Complex64::default(), |i| self.values[i])
    }

    pub fn set(&mut self, x: &[i64], v: Complex64) -> Result<()> {
        let i = self
            .domain
            .index_of(x)
            .ok_or_else(|| Error::InvalidArgument(format!("{x:?} outside the bounding box")))?;
        self.values[i] = v;
        Ok(())
    }

    /// Re-grid onto `domain`; values outside it are dropped.
    pub fn restrict(&self, domain: &BoxDomain) -> Self {
        let mut out = Self::zeros(domain.clone());
        let common = self.domain.intersect(domain);
        for p in common.points() {
            let v = self.get(&p);
            let i = domain.index_of(&p).unwrap();
            out.values[i] = v;
        }
        out
    }

    /// Like `restrict`, but refuses to drop nonzero values.
    pub fn embed(&self, domain: &BoxDomain) -> Result<Self> {
        if !domain.contains_box(&self.domain) {
            let lost = self
                .domain
                .points()
                .zip(&self.values)
                .any(|(p, v)| *v != Complex64::default() && !domain.contains(&p));
            if lost {
                return Err(Error::InvalidArgument("target box does not contain the support".into()));
            }
        }
        Ok(self.restrict(domain))
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self { domain: self.domain.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn abs(&self) -> Self {
        self.map(|v| Complex64::from(v.norm()))
    }

    /// `a f + b g` on the hull of both boxes.
    pub fn axpby(a: Complex64, f: &Self, b: Complex64, g: &Self) -> Result<Self> {
        dim_check(f.dim(), g.dim())?;
        let hull = f.domain.hull(&g.domain);
        let mut out = f.restrict(&hull).scale(a);
        let gg = g.restrict(&hull);
        for (o, v) in out.values.iter_mut().zip(&gg.values) {
            *o += b * v;
        }
        Ok(out)
    }

    pub fn translate(&self, v: &[i64]) -> Self {
        Self { domain: self.domain.translate(v), values: self.values.clone() }
    }

    /// Smallest box holding every nonzero value, or `None` for the zero function.
    pub fn support_box(&self) -> Option<BoxDomain> {
        let n = self.dim();
        let mut lo = vec![i64::MAX; n];
        let mut hi = vec![i64::MIN; n];
        let mut any = false;
        for (i, v) in self.values.iter().enumerate() {
            if *v != Complex64::default() {
                any = true;
                let p = self.domain.point(i);
                for k in 0..n {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        any.then(|| BoxDomain::from_bounds(&lo, &hi).unwrap())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm_slice(&self.values, p)
    }

    pub fn to_json(&self) -> LatticeFunctionJson {
        LatticeFunctionJson {
            lo: self.domain.lo.clone(),
            shape: self.domain.shape.clone(),
            re: self.values.iter().map(|v| v.re).collect(),
            im: self.values.iter().map(|v| v.im).collect(),
        }
    }

    pub fn from_json(j: LatticeFunctionJson) -> Result<Self> {
        if j.re.len() != j.im.len() {
            return Err(Error::Format("re and im arrays differ in length".into()));
        }
        let domain = BoxDomain::new(j.lo, j.shape)?;
        let values = j.re.into_iter().zip(j.im).map(|(a, b)| Complex64::new(a, b)).collect();
        Self::new(domain, values)
    }

    /// Dense binary layout: magic `RLFN`, format version, element width in
    /// bytes (8 for f32 pairs, 16 for f64 pairs), `n`, then per axis the
    /// lower corner (i64) and length (u64), then the values. Little-endian.
    pub fn write_binary(&self, w: &mut impl Write, precision: Precision) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(precision.width() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for (&lo, &len) in self.domain.lo.iter().zip(&self.domain.shape) {
            w.write_all(&lo.to_le_bytes())?;
            w.write_all(&(len as u64).to_le_bytes())?;
        }
        for v in &self.values {
            match precision {
                Precision::Single => {
                    w.write_all(&(v.re as f32).to_le_bytes())?;
                    w.write_all(&(v.im as f32).to_le_bytes())?;
                }
                Precision::Double => {
                    w.write_all(&v.re.to_le_bytes())?;
                    w.write_all(&v.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::Format(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut u4 = [0u8; 4];
        let mut u8b = [0u8; 8];
        r.read_exact(&mut u4).map_err(io)?;
        if u32::from_le_bytes(u4) != FORMAT_VERSION {
            return Err(Error::Format("unsupported version".into()));
        }
        r.read_exact(&mut u4).map_err(io)?;
        let precision = match u32::from_le_bytes(u4) {
            8 => Precision::Single,
            16 => Precision::Double,
            w => return Err(Error::Format(format!("unsupported element width {w}"))),
        };
        r.read_exact(&mut u4).map_err(io)?;
        let n = u32::from_le_bytes(u4) as usize;
        let mut lo = Vec::with_capacity(n);
        let mut shape = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u8b).map_err(io)?;
            lo.push(i64::from_le_bytes(u8b));
            r.read_exact(&mut u8b).map_err(io)?;
            shape.push(u64::from_le_bytes(u8b) as usize);
        }
        let domain = BoxDomain::new(lo, shape)?;
        let mut values = Vec::with_capacity(domain.len());
        for _ in 0..domain.len() {
            let v = match precision {
                Precision::Single => {
                    r.read_exact(&mut u4).map_err(io)?;
                    let re = f32::from_le_bytes(u4) as f64;
                    r.read_exact(&mut u4).map_err(io)?;
                    Complex64::new(re, f32::from_le_bytes(u4) as f64)
                }
                Precision::Double => {
                    r.read_exact(&mut u8b).map_err(io)?;
                    let re = f64::from_le_bytes(u8b);
                    r.read_exact(&mut u8b).map_err(io)?;
                    Complex64::new(re, f64::from_le_bytes(u8b))
                }
            };
            values.push(v);
        }
        Self::new(domain, values)
    }
}

const MAGIC: &[u8; 4] = b"RLFN";
const FORMAT_VERSION: u32 = 1;

/// Payload precision of the binary layout. `Single` is numpy's `complex64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::Single => 8,
            Precision::Double => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeFunctionJson {
    pub lo: Vec<i64>,
    pub shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

pub(crate) fn lp_norm_slice(values: &[Complex64], p: f64) -> f64 {
    assert!(p >= 1.0, "p must lie in [1, inf]");
    if p.is_infinite() {
        return values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    }
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut acc = Neumaier::default();
    for v in values {
        acc.add((v.norm() / scale).powf(p));
    }
    scale * acc.value().powf(1.0 / p)
}

/// `sum_x f(x) conj(g(x))`.
pub fn pair(f: &LatticeFunction, g: &LatticeFunction) -> Complex64 {
    if f.dim() != g.dim() {
        return Complex64::default();
    }
    let common = f.domain.intersect(&g.domain);
    if common.is_empty() {
        return Complex64::default();
    }
    let mut acc = ComplexNeumaier::default();
    for_each_row(&common, |start, len| {
        let i = f.domain.index_of(start).unwrap();
        let j = g.domain.index_of(start).unwrap();
        for k in 0..len {
            acc.add(f.values[i + k] * g.values[j + k].conj());
        }
    });
    acc.value()
}

/// Calls `visit(first_point, run_length)` for every maximal run along the last axis.
pub(crate) fn for_each_row(b: &BoxDomain, mut visit: impl FnMut(&[i64], usize)) {
    if b.is_empty() {
        return;
    }
    let n = b.dim();
    let last = b.shape()[n - 1];
    let rows = b.len() / last;
    let mut shape = b.shape().to_vec();
    shape[n - 1] = 1;
    let outer = BoxDomain::new(b.lo().to_vec(), shape).unwrap();
    for r in 0..rows {
        let start = outer.point(r);
        visit(&start, last);
    }
}

/// `<f>_{Q,r}`: the `r`-power mean of `|f|` over `Q` under counting measure.
/// `r = f64::INFINITY` gives the supremum.
pub fn local_average(f: &LatticeFunction, q: &PCube, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument("averaging exponent must lie in [1, inf]".into()));
    }
    dim_check(q.dim(), f.dim())?;
    let vol = q.volume();
    if vol == 0 {
        return Err(Error::InvalidArgument("empty cube".into()));
    }
    let common = f.domain.intersect(&BoxDomain::of_cube(q));
    let mut vals = Vec::with_capacity(common.len());
    for_each_row(&common, |start, len| {
        let i = f.domain.index_of(start).unwrap();
        vals.extend_from_slice(&f.values[i..i + len]);
    });
    if r.is_infinite() {
        return Ok(vals.iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    Ok(lp_norm_slice(&vals, r) / (vol as f64).powf(1.0 / r))
}

/// Trigonometric polynomial `sum_nu c_nu e(nu . xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPolynomial {
    dim: usize,
    terms: Vec<(Vec<i64>, Complex64)>,
}

impl TrigPolynomial {
    /// Merges repeated frequencies; exact zeros are kept out.
    pub fn new(dim: usize, terms: impl IntoIterator<Item = (Vec<i64>, Complex64)>) -> Result<Self> {
        let mut map: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for (nu, c) in terms {
            dim_check(dim, nu.len())?;
            *map.entry(nu).or_default() += c;
        }
        map.retain(|_, c| *c != Complex64::default());
        Ok(Self { dim, terms: map.into_iter().collect() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<i64>, Complex64)] {
        &self.terms
    }

    pub fn eval(&self, xi: &[f64]) -> Complex64 {
        let mut acc = ComplexNeumaier::default();
        for (nu, c) in &self.terms {
            let ph: f64 = nu.iter().zip(xi).map(|(&v, &x)| v as f64 * x).sum();
            acc.add(c * Complex64::from_polar(1.0, TAU * ph.rem_euclid(1.0)));
        }
        acc.value()
    }

    /// Exact evaluation at `k / N` with integer phase reduction.
    pub fn eval_grid(&self, k: &[usize], n: &[usize]) -> Complex64 {
        let mut acc = ComplexNeumaier::default();
        for (nu, c) in &self.terms {
            let mut ph = 0.0;
            for ((&v, &kk), &nn) in nu.iter().zip(k).zip(n) {
                let r = ((v as i128 * kk as i128).rem_euclid(nn as i128)) as f64 / nn as f64;
                ph += r;
            }
            acc.add(c * Complex64::from_polar(1.0, TAU * ph));
        }
        acc.value()
    }

    /// Per-axis `(min, max)` frequency.
    pub fn frequency_range(&self) -> Option<Vec<(i64, i64)>> {
        if self.terms.is_empty() {
            return None;
        }
        let mut r = vec![(i64::MAX, i64::MIN); self.dim];
        for (nu, _) in &self.terms {
            for (k, &v) in nu.iter().enumerate() {
                r[k].0 = r[k].0.min(v);
                r[k].1 = r[k].1.max(v);
            }
        }
        Some(r)
    }

    /// Whether every frequency lies in `(-N/2, N/2]` on each axis.
    pub fn fits_grid(&self, n: &[usize]) -> bool {
        self.terms.iter().all(|(nu, _)| {
            nu.iter().zip(n).all(|(&v, &nn)| 2 * v > -(nn as i64) && 2 * v <= nn as i64)
        })
    }
}

/// Samples of a 1-periodic function on the grid `{0, 1/N, ..., (N-1)/N}^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMultiplier {
    n: Vec<usize>,
    samples: Vec<Complex64>,
    exact: Option<TrigPolynomial>,
}

impl SampledMultiplier {
    pub fn new(n: Vec<usize>, samples: Vec<Complex64>, exact: Option<TrigPolynomial>) -> Result<Self> {
        dim_check(n.iter().product(), samples.len())?;
        if let Some(t) = &exact {
            dim_check(n.len(), t.dim())?;
        }
        Ok(Self { n, samples, exact })
    }

    /// Samples an exact trigonometric polynomial on the grid via FFT.
    pub fn from_trig(t: TrigPolynomial, n: Vec<usize>) -> Result<Self> {
        dim_check(n.len(), t.dim())?;
        let mut grid = vec![Complex64::default(); n.iter().product()];
        let strides = grid_strides(&n);
        for (nu, c) in t.terms() {
            let idx: usize = nu
                .iter()
                .zip(&n)
                .zip(&strides)
                .map(|((&v, &nn), &s)| (v.rem_euclid(nn as i64) as usize) * s)
                .sum();
            grid[idx] += c;
        }
        // sum_nu c_nu e(nu k / N) is an unnormalized inverse DFT of the histogram.
        fft_nd(&mut grid, &n, FftDirection::Inverse);
        Self::new(n, grid, Some(t))
    }

    pub fn from_fn(n: Vec<usize>, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let total: usize = n.iter().product();
        let samples = (0..total).map(|i| f(&grid_node(&n, i))).collect();
        Self { n, samples, exact: None }
    }

    pub fn resolution(&self) -> &[usize] {
        &self.n
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn exact(&self) -> Option<&TrigPolynomial> {
        self.exact.as_ref()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        grid_node(&self.n, idx)
    }

    /// Nearest-node lookup with periodic wrap.
    pub fn at(&self, xi: &[f64]) -> Complex64 {
        let strides = grid_strides(&self.n);
        let idx: usize = xi
            .iter()
            .zip(&self.n)
            .zip(&strides)
            .map(|((&x, &nn), &s)| (((x.rem_euclid(1.0) * nn as f64).round() as usize) % nn) * s)
            .sum();
        self.samples[idx]
    }

    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn map2(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::InvalidArgument("grid resolutions differ".into()));
        }
        let samples = self.samples.iter().zip(&other.samples).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { n: self.n.clone(), samples, exact: None })
    }

    /// Largest deviation between the samples and the exact metadata.
    pub fn metadata_deviation(&self) -> Option<f64> {
        let t = self.exact.as_ref()?;
        let scale = t.terms().iter().map(|(_, c)| c.norm()).sum::<f64>().max(f64::MIN_POSITIVE);
        let strides = grid_strides(&self.n);
        let worst = (0..self.samples.len())
            .map(|i| {
                let k: Vec<usize> = self.n.iter().zip(&strides).map(|(&nn, &s)| (i / s) % nn).collect();
                (t.eval_grid(&k, &self.n) - self.samples[i]).norm()
            })
            .fold(0.0, f64::max);
        Some(worst / scale)
    }
}

fn grid_strides(n: &[usize]) -> Vec<usize> {
    let mut s = vec![1; n.len()];
    for k in (0..n.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * n[k + 1];
    }
    s
}

fn grid_node(n: &[usize], mut idx: usize) -> Vec<f64> {
    let mut xi = vec![0.0; n.len()];
    for k in (0..n.len()).rev() {
        xi[k] = (idx % n[k]) as f64 / n[k] as f64;
        idx /= n[k];
    }
    xi
}

/// `f^(xi) = sum_x f(x) e(-xi . x)` on the `N`-grid.
pub fn dft(f: &LatticeFunction, n: &[usize]) -> Result<SampledMultiplier> {
    dim_check(f.dim(), n.len())?;
    if n.contains(&0) {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    let mut grid = vec![Complex64::default(); n.iter().product()];
    let strides = grid_strides(n);
    let mut terms = Vec::new();
    for (i, v) in f.values.iter().enumerate() {
        if *v == Complex64::default() {
            continue;
        }
        let x = f.domain.point(i);
        let idx: usize =
            x.iter().zip(n).zip(&strides).map(|((&xk, &nn), &s)| (xk.rem_euclid(nn as i64) as usize) * s).sum();
        grid[idx] += v;
        terms.push((x.iter().map(|v| -v).collect(), *v));
    }
    fft_nd(&mut grid, n, FftDirection::Forward);
    SampledMultiplier::new(n.to_vec(), grid, Some(TrigPolynomial::new(f.dim(), terms)?))
}

/// Frequencies that do not fit `(-N/2, N/2]` on some axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasWarning {
    pub axis: usize,
    pub frequency_range: (i64, i64),
    pub resolution: usize,
}

/// Grid-quadrature inverse transform on the box `domain`, read modulo `N`.
pub fn idft_onto(m: &SampledMultiplier, domain: &BoxDomain) -> Result<LatticeFunction> {
    dim_check(m.n.len(), domain.dim())?;
    let mut grid = m.samples.clone();
    fft_nd(&mut grid, &m.n, FftDirection::Inverse);
    let norm = 1.0 / m.samples.len() as f64;
    let strides = grid_strides(&m.n);
    let out = LatticeFunction::from_fn(domain.clone(), |x| {
        let idx: usize =
            x.iter().zip(&m.n).zip(&strides).map(|((&xk, &nn), &s)| (xk.rem_euclid(nn as i64) as usize) * s).sum();
        grid[idx] * norm
    });
    Ok(out)
}

/// Inverse transform on a box chosen from the exact metadata when present
/// (tight around the negated frequencies), else `[-floor(N/2), N - 1 - floor(N/2)]`.
pub fn idft(m: &SampledMultiplier) -> Result<(LatticeFunction, Option<AliasWarning>)> {
    let default_box = || {
        let lo: Vec<i64> = m.n.iter().map(|&nn| -((nn / 2) as i64)).collect();
        BoxDomain::new(lo, m.n.clone()).unwrap()
    };
    let mut warning = None;
    let domain = match m.exact.as_ref().and_then(TrigPolynomial::frequency_range) {
        Some(range) => {
            for (axis, (&(a, b), &nn)) in range.iter().zip(&m.n).enumerate() {
                if (b - a) as u128 >= nn as u128 && warning.is_none() {
                    warning = Some(AliasWarning { axis, frequency_range: (a, b), resolution: nn });
                }
            }
            if warning.is_none() {
                let lo: Vec<i64> = range.iter().map(|&(_, b)| -b).collect();
                let hi: Vec<i64> = range.iter().map(|&(a, _)| -a).collect();
                BoxDomain::from_bounds(&lo, &hi)?
            } else {
                default_box()
            }
        }
        None => default_box(),
    };
    Ok((idft_onto(m, &domain)?, warning))
}
