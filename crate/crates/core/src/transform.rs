//! Truncated discrete Radon transforms `sum_j sum_y f(x + P(y)) K_j(y)`, the
//! maximal operator over P-cubes, and empirical `l^r -> l^{s'}` norms.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{dim_check, Error, Result};
use crate::kernels::{norm, CZKernel, DyadicBump};
use crate::lattice_fn::{dft, idft_onto, lp_norm_slice, pair, BoxDomain, LatticeFunction, SampledMultiplier, TrigPolynomial};
use crate::poly_map::{odometer, PolynomialMap};
use crate::sum::ComplexNeumaier;

/// Largest annulus enumerated for a single scale.
pub const ANNULUS_BUDGET: u128 = 1 << 24;

/// Lattice points of one dyadic annulus with their shifts and weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleTable {
    pub j: i32,
    pub points: Vec<Vec<i64>>,
    pub shifts: Vec<Vec<i64>>,
    pub weights: Vec<f64>,
}

impl ScaleTable {
    /// All `y != 0` with `2^{j-1} <= |y| <= 2^{j+1}` and `K_j(y) != 0`.
    pub fn build(map: &PolynomialMap, kernel: &CZKernel, psi: &DyadicBump, j: i32) -> Result<Self> {
        if j < 0 {
            return Err(Error::InvalidArgument("scales below 0 vanish on the lattice".into()));
        }
        dim_check(map.dim_domain(), kernel.dim())?;
        let d = map.dim_domain();
        let reach = 1i64 << (j + 1);
        let needed = ((2 * reach + 1) as u128).pow(d as u32);
        if needed > ANNULUS_BUDGET {
            return Err(Error::BudgetExceeded { what: format!("annulus at scale {j}"), needed, budget: ANNULUS_BUDGET });
        }
        let mut table = ScaleTable { j, points: Vec::new(), shifts: Vec::new(), weights: Vec::new() };
        let mut y = vec![-reach; d];
        let mut yf = vec![0.0; d];
        loop {
            for (a, &b) in yf.iter_mut().zip(&y) {
                *a = b as f64;
            }
            if y.iter().any(|&v| v != 0) {
                let w = psi.at_scale(j, norm(&yf));
                if w != 0.0 {
                    let k = w * kernel.eval_unchecked(&yf);
                    if k != 0.0 {
                        table.shifts.push(map.evaluate(&y)?);
                        table.points.push(y.clone());
                        table.weights.push(k);
                    }
                }
            }
            if !odometer(&mut y, -reach, reach) {
                break;
            }
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn l1_mass(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// Largest `|P_i(y)|` per component.
    pub fn max_shift(&self) -> Vec<i64> {
        let n = self.shifts.first().map_or(0, Vec::len);
        (0..n).map(|i| self.shifts.iter().map(|s| s[i].abs()).max().unwrap_or(0)).collect()
    }
}

/// Convolution `(f * k)(x) = sum_u f(x - u) k(u)` with a finite list of taps.
#[derive(Debug, Clone, PartialEq)]
pub struct Convolution {
    dim: usize,
    taps: Vec<(Vec<i64>, Complex64)>,
}

impl Convolution {
    pub fn new(dim: usize, taps: impl IntoIterator<Item = (Vec<i64>, Complex64)>) -> Result<Self> {
        let mut merged: HashMap<Vec<i64>, Complex64> = HashMap::new();
        for (u, c) in taps {
            dim_check(dim, u.len())?;
            *merged.entry(u).or_default() += c;
        }
        let mut taps: Vec<_> = merged.into_iter().filter(|(_, c)| *c != Complex64::default()).collect();
        taps.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { dim, taps })
    }

    pub fn from_kernel(k: &LatticeFunction) -> Self {
        let taps = k
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != Complex64::default())
            .map(|(i, v)| (k.domain().point(i), *v));
        Self::new(k.dim(), taps).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn taps(&self) -> &[(Vec<i64>, Complex64)] {
        &self.taps
    }

    /// Per-axis `(min, max)` tap offset.
    pub fn extent(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        let first = self.taps.first()?;
        let mut lo = first.0.clone();
        let mut hi = first.0.clone();
        for (u, _) in &self.taps {
            for k in 0..self.dim {
                lo[k] = lo[k].min(u[k]);
                hi[k] = hi[k].max(u[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn kernel(&self) -> LatticeFunction {
        match self.extent() {
            None => LatticeFunction::zeros(BoxDomain::new(vec![0; self.dim], vec![1; self.dim]).unwrap()),
            Some((lo, hi)) => {
                let mut k = LatticeFunction::zeros(BoxDomain::from_bounds(&lo, &hi).unwrap());
                for (u, c) in &self.taps {
                    k.set(u, *c).unwrap();
                }
                k
            }
        }
    }

    /// The multiplier `sum_u k(u) e(-u . xi)` as an exact trig polynomial.
    pub fn multiplier(&self) -> TrigPolynomial {
        TrigPolynomial::new(self.dim, self.taps.iter().map(|(u, c)| (u.iter().map(|v| -v).collect(), *c))).unwrap()
    }

    fn output_box(&self, input: &BoxDomain) -> Option<BoxDomain> {
        let (lo, hi) = self.extent()?;
        Some(input.expand(&lo, &hi))
    }

    /// Direct scatter over the support of `f`.
    pub fn apply_direct(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        dim_check(self.dim, f.dim())?;
        let Some(out_box) = self.output_box(f.domain()) else {
            return Ok(LatticeFunction::zeros(f.domain().clone()));
        };
        let mut out = LatticeFunction::zeros(out_box.clone());
        let strides = strides_of(out_box.shape());
        let tap_offsets: Vec<(isize, Complex64)> = self
            .taps
            .iter()
            .map(|(u, c)| (u.iter().zip(&strides).map(|(&v, &s)| v as isize * s as isize).sum(), *c))
            .collect();
        let vals = out.values_mut();
        for (i, &v) in f.values().iter().enumerate() {
            if v == Complex64::default() {
                continue;
            }
            let z = f.domain().point(i);
            // Linear in the coordinates, so a signed per-axis offset is fine
            // even when `z` itself lies outside the output box.
            let base_lin: isize = z
                .iter()
                .zip(out_box.lo())
                .zip(&strides)
                .map(|((&a, &l), &s)| (a - l) as isize * s as isize)
                .sum();
            for &(off, c) in &tap_offsets {
                vals[(base_lin + off) as usize] += v * c;
            }
        }
        Ok(out)
    }

    /// FFT route: `F^{-1}[m . f^]` on a grid large enough to avoid wraparound.
    pub fn apply_fourier(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        dim_check(self.dim, f.dim())?;
        let Some(out_box) = self.output_box(f.domain()) else {
            return Ok(LatticeFunction::zeros(f.domain().clone()));
        };
        let n: Vec<usize> = out_box.shape().iter().map(|&s| crate::fft::smooth_size(s)).collect();
        let fh = dft(f, &n)?;
        let m = SampledMultiplier::from_trig(self.multiplier(), n)?;
        let prod = fh.map2(&m, |a, b| a * b)?;
        idft_onto(&prod, &out_box)
    }

    /// `<f * k, g>` without materializing `f * k`.
    pub fn pairing(&self, f: &LatticeFunction, g: &LatticeFunction) -> Complex64 {
        let mut acc = ComplexNeumaier::default();
        for (u, c) in &self.taps {
            // sum_z f(z) conj g(z + u)
            let shifted = g.translate(&u.iter().map(|v| -v).collect::<Vec<_>>());
            acc.add(*c * pair(f, &shifted));
        }
        acc.value()
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// An operator on finitely supported lattice functions.
pub trait Operator: Sync {
    fn apply(&self, f: &LatticeFunction) -> Result<LatticeFunction>;

    fn pairing(&self, f: &LatticeFunction, g: &LatticeFunction) -> Result<Complex64> {
        Ok(pair(&self.apply(f)?, g))
    }

    fn describe(&self) -> String;
}

impl Operator for Convolution {
    fn apply(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        self.apply_direct(f)
    }

    fn pairing(&self, f: &LatticeFunction, g: &LatticeFunction) -> Result<Complex64> {
        dim_check(self.dim, f.dim())?;
        Ok(Convolution::pairing(self, f, g))
    }

    fn describe(&self) -> String {
        format!("convolution with {} taps", self.taps.len())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityOp;

impl Operator for IdentityOp {
    fn apply(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        Ok(f.clone())
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOp;

impl Operator for ZeroOp {
    fn apply(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        Ok(LatticeFunction::zeros(f.domain().clone()))
    }

    fn describe(&self) -> String {
        "zero".into()
    }
}

/// `T f(x) = sum_{j_min <= j <= j_max} sum_y f(x + P(y)) K_j(y)`.
#[derive(Debug, Clone)]
pub struct TruncatedTransform {
    map: PolynomialMap,
    kernel: Option<CZKernel>,
    tables: Vec<ScaleTable>,
    conv: Convolution,
}

impl TruncatedTransform {
    pub fn new(map: PolynomialMap, kernel: CZKernel, psi: DyadicBump, j_min: i32, j_max: i32) -> Result<Self> {
        if j_min < 0 || j_max < j_min {
            return Err(Error::InvalidArgument(format!("bad scale range [{j_min}, {j_max}]")));
        }
        let tables =
            (j_min..=j_max).map(|j| ScaleTable::build(&map, &kernel, &psi, j)).collect::<Result<Vec<_>>>()?;
        Self::assemble(map, Some(kernel), tables)
    }

    /// Custom (for instance surrogate) weights per scale: `(j, [(y, weight)])`.
    pub fn from_tables(map: PolynomialMap, tables: Vec<(i32, Vec<(Vec<i64>, f64)>)>) -> Result<Self> {
        let tables = tables
            .into_iter()
            .map(|(j, entries)| {
                let mut t = ScaleTable { j, points: vec![], shifts: vec![], weights: vec![] };
                for (y, w) in entries {
                    dim_check(map.dim_domain(), y.len())?;
                    t.shifts.push(map.evaluate(&y)?);
                    t.points.push(y);
                    t.weights.push(w);
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(map, None, tables)
    }

    fn assemble(map: PolynomialMap, kernel: Option<CZKernel>, tables: Vec<ScaleTable>) -> Result<Self> {
        // f(x + P(y)) = f(x - u) with u = -P(y).
        let taps = tables.iter().flat_map(|t| {
            t.shifts.iter().zip(&t.weights).map(|(s, &w)| (s.iter().map(|v| -v).collect(), Complex64::from(w)))
        });
        let conv = Convolution::new(map.dim_range(), taps)?;
        Ok(Self { map, kernel, tables, conv })
    }

    pub fn map(&self) -> &PolynomialMap {
        &self.map
    }

    pub fn kernel_spec(&self) -> Option<&CZKernel> {
        self.kernel.as_ref()
    }

    pub fn tables(&self) -> &[ScaleTable] {
        &self.tables
    }

    pub fn convolution(&self) -> &Convolution {
        &self.conv
    }

    /// The convolution kernel `sum_{P(y) = -x} sum_j K_j(y)`.
    pub fn kernel(&self) -> LatticeFunction {
        self.conv.kernel()
    }

    /// `sum_j sum_y e(P(y) . xi) K_j(y)` as an exact trig polynomial.
    pub fn multiplier(&self) -> TrigPolynomial {
        self.conv.multiplier()
    }

    pub fn apply_fourier(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        self.conv.apply_fourier(f)
    }

    /// Sum of separate single-scale applications (for linearity checks).
    pub fn apply_per_scale(&self, f: &LatticeFunction) -> Result<Vec<LatticeFunction>> {
        self.tables
            .iter()
            .map(|t| Self::assemble(self.map.clone(), self.kernel, vec![t.clone()])?.apply(f))
            .collect()
    }
}

impl Operator for TruncatedTransform {
    fn apply(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        dim_check(self.map.dim_range(), f.dim())?;
        self.conv.apply_direct(f)
    }

    fn pairing(&self, f: &LatticeFunction, g: &LatticeFunction) -> Result<Complex64> {
        Operator::pairing(&self.conv, f, g)
    }

    fn describe(&self) -> String {
        let js: Vec<i32> = self.tables.iter().map(|t| t.j).collect();
        let k = self.kernel.map_or("custom weights".to_string(), |k| k.descriptor());
        format!("T_P for P = {}, K = {k}, scales {:?}", self.map, js)
    }
}

/// Uncentered maximal averages over translates of P-cubes with the given
/// dyadic sidelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximalOperator {
    degrees: Vec<u32>,
    sidelengths: Vec<f64>,
}

impl MaximalOperator {
    pub fn new(degrees: &[u32], sidelengths: &[f64]) -> Result<Self> {
        if sidelengths.is_empty() || sidelengths.iter().any(|&l| !(l >= 1.0)) {
            return Err(Error::InvalidArgument("sidelengths must be at least 1".into()));
        }
        Ok(Self { degrees: degrees.to_vec(), sidelengths: sidelengths.to_vec() })
    }

    /// Sidelengths `2^0, ..., 2^levels`.
    pub fn dyadic(degrees: &[u32], levels: u32) -> Self {
        Self::new(degrees, &(0..=levels).map(|m| (2f64).powi(m as i32)).collect::<Vec<_>>()).unwrap()
    }

    pub fn side_lengths(&self, ell: f64) -> Vec<usize> {
        self.degrees.iter().map(|&d| ell.powi(d as i32).round().max(1.0) as usize).collect()
    }
}

impl Operator for MaximalOperator {
    fn apply(&self, f: &LatticeFunction) -> Result<LatticeFunction> {
        maximal(&self.degrees, f, &self.sidelengths)
    }

    fn describe(&self) -> String {
        format!("maximal operator, degrees {:?}, sidelengths {:?}", self.degrees, self.sidelengths)
    }
}

/// `M f(x) = max_l max_{Q ∋ x} |Q|^{-1} sum_{Q} |f|`, boxes of sides `round(l^{D_i})`.
pub fn maximal(degrees: &[u32], f: &LatticeFunction, sidelengths: &[f64]) -> Result<LatticeFunction> {
    dim_check(degrees.len(), f.dim())?;
    let op = MaximalOperator::new(degrees, sidelengths)?;
    let n = f.dim();
    let all_sides: Vec<Vec<usize>> = sidelengths.iter().map(|&l| op.side_lengths(l)).collect();
    let reach: Vec<i64> = (0..n).map(|k| all_sides.iter().map(|s| s[k]).max().unwrap() as i64 - 1).collect();
    let out_box = f.domain().expand(&reach.iter().map(|r| -r).collect::<Vec<_>>(), &reach);
    let base = f.abs().restrict(&out_box);
    let mut best = vec![0.0f64; out_box.len()];
    for sides in &all_sides {
        let mut a: Vec<f64> = base.values().iter().map(|v| v.re).collect();
        for (axis, &len) in sides.iter().enumerate() {
            along_axis(&mut a, out_box.shape(), axis, |line| forward_window_sum(line, len));
        }
        let vol: f64 = sides.iter().map(|&s| s as f64).product();
        for (axis, &len) in sides.iter().enumerate() {
            along_axis(&mut a, out_box.shape(), axis, |line| backward_window_max(line, len));
        }
        for (b, v) in best.iter_mut().zip(&a) {
            *b = b.max(v / vol);
        }
    }
    LatticeFunction::from_real(out_box, best)
}

fn along_axis(a: &mut [f64], shape: &[usize], axis: usize, op: impl Fn(&[f64]) -> Vec<f64>) {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let block = len * stride;
    let mut line = vec![0.0; len];
    for chunk in a.chunks_mut(block) {
        for offset in 0..stride {
            for k in 0..len {
                line[k] = chunk[offset + k * stride];
            }
            let out = op(&line);
            for k in 0..len {
                chunk[offset + k * stride] = out[k];
            }
        }
    }
}

/// `w[b] = sum_{t < len} x[b + t]` with zero padding.
fn forward_window_sum(x: &[f64], len: usize) -> Vec<f64> {
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..x.len()).map(|b| (prefix[(b + len).min(x.len())] - prefix[b]).max(0.0)).collect()
}

/// `m[x] = max_{t < len} w[x - t]`, monotone deque.
fn backward_window_max(w: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    let mut dq: VecDeque<usize> = VecDeque::new();
    for x in 0..w.len() {
        while dq.back().is_some_and(|&i| w[i] <= w[x]) {
            dq.pop_back();
        }
        dq.push_back(x);
        while dq.front().is_some_and(|&i| i + len <= x) {
            dq.pop_front();
        }
        out[x] = w[*dq.front().unwrap()];
    }
    out
}

/// A linear map between the coefficient spaces of two boxes.
pub trait LinearOperator: Sync {
    fn domain(&self) -> &BoxDomain;
    fn codomain(&self) -> &BoxDomain;
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;
    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64>;
}

/// `1_{codomain} (k * (1_{domain} f))`.
#[derive(Debug, Clone)]
pub struct RestrictedConvolution {
    conv: Convolution,
    domain: BoxDomain,
    codomain: BoxDomain,
    offsets: Vec<(Vec<i64>, Complex64)>,
}

impl RestrictedConvolution {
    pub fn new(conv: Convolution, domain: BoxDomain, codomain: BoxDomain) -> Result<Self> {
        dim_check(conv.dim(), domain.dim())?;
        dim_check(conv.dim(), codomain.dim())?;
        let offsets = conv.taps().to_vec();
        Ok(Self { conv, domain, codomain, offsets })
    }

    /// Codomain = everything the domain can reach.
    pub fn full(conv: Convolution, domain: BoxDomain) -> Result<Self> {
        let codomain = conv.output_box(&domain).unwrap_or_else(|| domain.clone());
        Self::new(conv, domain, codomain)
    }

    pub fn convolution(&self) -> &Convolution {
        &self.conv
    }
}

impl LinearOperator for RestrictedConvolution {
    fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    fn codomain(&self) -> &BoxDomain {
        &self.codomain
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.codomain.len()];
        let mut p = vec![0i64; self.domain.dim()];
        for (i, &v) in x.iter().enumerate() {
            if v == Complex64::default() {
                continue;
            }
            let z = self.domain.point(i);
            for (u, c) in &self.offsets {
                for k in 0..p.len() {
                    p[k] = z[k] + u[k];
                }
                if let Some(o) = self.codomain.index_of(&p) {
                    out[o] += v * c;
                }
            }
        }
        out
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.domain.len()];
        let mut p = vec![0i64; self.domain.dim()];
        out.iter_mut().enumerate().for_each(|(i, o)| {
            let z = self.domain.point(i);
            let mut acc = Complex64::default();
            for (u, c) in &self.offsets {
                for k in 0..p.len() {
                    p[k] = z[k] + u[k];
                }
                if let Some(j) = self.codomain.index_of(&p) {
                    acc += c.conj() * y[j];
                }
            }
            *o = acc;
        });
        out
    }
}

/// Identity on a box.
#[derive(Debug, Clone)]
pub struct IdentityOn(pub BoxDomain);

impl LinearOperator for IdentityOn {
    fn domain(&self) -> &BoxDomain {
        &self.0
    }

    fn codomain(&self) -> &BoxDomain {
        &self.0
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.to_vec()
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        y.to_vec()
    }
}

/// Operator given by a pair of callbacks.
pub struct CallbackOperator<F, G> {
    pub domain: BoxDomain,
    pub codomain: BoxDomain,
    pub forward: F,
    pub adjoint: G,
}

impl<F, G> LinearOperator for CallbackOperator<F, G>
where
    F: Fn(&[Complex64]) -> Vec<Complex64> + Sync,
    G: Fn(&[Complex64]) -> Vec<Complex64> + Sync,
{
    fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    fn codomain(&self) -> &BoxDomain {
        &self.codomain
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (self.forward)(x)
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        (self.adjoint)(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormSearch {
    pub restarts: usize,
    pub iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for NormSearch {
    fn default() -> Self {
        Self { restarts: 8, iterations: 200, tolerance: 1e-12, seed: 0 }
    }
}

/// A certified lower bound for an operator norm with the pair attaining it.
#[derive(Debug, Clone, Serialize)]
pub struct NormEstimate {
    /// `||T f||_{s'} / ||f||_r` for the returned `f`; never exceeds the true norm.
    pub lower_bound: f64,
    #[serde(skip)]
    pub f: Vec<Complex64>,
    #[serde(skip)]
    pub g: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
}

fn conjugate_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// `v` with `||v||_{p'} = 1` and `sum h conj(v) = ||h||_p`.
fn norming_vector(h: &[Complex64], p: f64) -> Vec<Complex64> {
    let sgn = |z: Complex64| if z.norm() == 0.0 { Complex64::default() } else { z / z.norm() };
    let hn = lp_norm_slice(h, p);
    if hn == 0.0 {
        return vec![Complex64::default(); h.len()];
    }
    if p.is_infinite() {
        let (i, _) = h.iter().enumerate().fold((0, -1.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc });
        let mut v = vec![Complex64::default(); h.len()];
        v[i] = sgn(h[i]);
        return v;
    }
    if p == 1.0 {
        return h.iter().map(|&z| sgn(z)).collect();
    }
    h.iter().map(|&z| sgn(z) * (z.norm() / hn).powf(p - 1.0)).collect()
}

/// Alternating (power-method style) ascent for `||T||_{l^r -> l^{s'}}` with
/// seeded random restarts run in parallel.
pub fn estimate_operator_norm(op: &dyn LinearOperator, r: f64, s_prime: f64, search: NormSearch) -> Result<NormEstimate> {
    if !(r >= 1.0) || !(s_prime >= 1.0) {
        return Err(Error::InvalidArgument("exponents must lie in [1, inf]".into()));
    }
    let r_dual = conjugate_exponent(r);
    let n_in = op.domain().len();
    if n_in == 0 {
        return Err(Error::InvalidArgument("empty domain".into()));
    }
    let runs: Vec<NormEstimate> = (0..search.restarts.max(1))
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(search.seed.wrapping_mul(0x9E37_79B9).wrapping_add(k as u64));
            let init: Vec<Complex64> = if k == 0 {
                vec![Complex64::new(1.0, 0.0); n_in]
            } else {
                (0..n_in).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
            };
            let mut f: Vec<Complex64> = {
                let nf = lp_norm_slice(&init, r);
                init.iter().map(|z| z / nf).collect()
            };
            let mut value = lp_norm_slice(&op.apply(&f), s_prime);
            let mut g = vec![];
            let mut converged = false;
            let mut iterations = 0;
            for it in 0..search.iterations {
                iterations = it + 1;
                let h = op.apply(&f);
                g = norming_vector(&h, s_prime);
                let u = op.apply_adjoint(&g);
                let candidate = norming_vector(&u, r_dual);
                if candidate.iter().all(|z| *z == Complex64::default()) {
                    converged = true;
                    break;
                }
                let nf = lp_norm_slice(&candidate, r);
                let candidate: Vec<Complex64> = candidate.iter().map(|z| z / nf).collect();
                let v = lp_norm_slice(&op.apply(&candidate), s_prime);
                if v <= value * (1.0 + search.tolerance) {
                    if v > value {
                        f = candidate;
                        value = v;
                    }
                    converged = true;
                    break;
                }
                f = candidate;
                value = v;
            }
            NormEstimate { lower_bound: value, f, g, converged, iterations }
        })
        .collect();
    Ok(runs.into_iter().max_by(|a, b| a.lower_bound.total_cmp(&b.lower_bound)).unwrap())
}

/// The matrix of `op` (codomain x domain) by applying it to unit vectors.
pub fn dense_matrix(op: &dyn LinearOperator) -> DMatrix<Complex64> {
    let (rows, cols) = (op.codomain().len(), op.domain().len());
    let columns: Vec<Vec<Complex64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            let mut e = vec![Complex64::default(); cols];
            e[c] = Complex64::new(1.0, 0.0);
            op.apply(&e)
        })
        .collect();
    DMatrix::from_fn(rows, cols, |i, j| columns[j][i])
}

/// Largest singular value: dense SVD for small matrices, otherwise the top
/// eigenvalue of the Gram matrix `T*T`.
pub fn largest_singular_value(op: &dyn LinearOperator) -> f64 {
    let (rows, cols) = (op.codomain().len(), op.domain().len());
    if rows * cols <= 1 << 22 {
        let m = dense_matrix(op);
        return m.singular_values().iter().cloned().fold(0.0, f64::max);
    }
    let columns: Vec<Vec<Complex64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            let mut e = vec![Complex64::default(); cols];
            e[c] = Complex64::new(1.0, 0.0);
            op.apply_adjoint(&op.apply(&e))
        })
        .collect();
    let gram = DMatrix::from_fn(cols, cols, |i, j| columns[j][i]);
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}
