//! Circle-method decomposition of the multipliers
//! `m_j(xi) = sum_y e(P(y) . xi) K_j(y)`: Weyl sums, rational shells, major
//! arcs, the oscillatory integrals `Phi_j`, main terms `L` and the error `E_j`.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::Serialize;

use crate::error::{dim_check, Error, Result};
use crate::fft::{fft_nd, smooth_size};
use crate::kernels::{theta, CZKernel, DyadicBump};
use crate::lattice_fn::{idft_onto, BoxDomain, LatticeFunction, SampledMultiplier, TrigPolynomial};
use crate::poly_map::{odometer, rho_with, PolynomialMap};
use crate::stats;
use crate::sum::ComplexNeumaier;
use crate::transform::ScaleTable;

/// `e(x) = exp(2 pi i x)`.
#[inline]
pub fn e(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * x)
}

/// `a/q` in `[0,1)^n` with `gcd(a_1, ..., a_n, q) = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ReducedFraction {
    a: Vec<u64>,
    q: u64,
}

impl ReducedFraction {
    pub fn new(a: Vec<u64>, q: u64) -> Result<Self> {
        if q == 0 || a.is_empty() {
            return Err(Error::InvalidArgument("need q >= 1 and n >= 1".into()));
        }
        if a.iter().any(|&v| v >= q) {
            return Err(Error::InvalidArgument(format!("numerators must lie in [0, {q})")));
        }
        if a.iter().fold(q, |g, &v| g.gcd(&v)) != 1 {
            return Err(Error::InvalidArgument(format!("{a:?}/{q} is not reduced")));
        }
        Ok(Self { a, q })
    }

    pub fn zero(n: usize) -> Self {
        Self { a: vec![0; n], q: 1 }
    }

    pub fn a(&self) -> &[u64] {
        &self.a
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// The `k` with `2^{k-1} <= q < 2^k`.
    pub fn shell(&self) -> u32 {
        64 - self.q.leading_zeros()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.a.iter().map(|&v| v as f64 / self.q as f64).collect()
    }
}

impl std::fmt::Display for ReducedFraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.a.len() == 1 {
            write!(f, "{}/{}", self.a[0], self.q)
        } else {
            write!(f, "{:?}/{}", self.a, self.q)
        }
    }
}

/// All reduced `a/q` with `2^{k-1} <= q < min(2^k, q_cap + 1)`, `q` ascending
/// then `a` lexicographic.
pub fn enumerate_shell(n: usize, k: u32, q_cap: u64) -> impl Iterator<Item = ReducedFraction> {
    assert!(k >= 1 && n >= 1 && k < 63);
    let q_lo = 1u64 << (k - 1);
    let q_hi = ((1u64 << k) - 1).min(q_cap);
    (q_lo..=q_hi).flat_map(move |q| fractions_with_denominator(n, q))
}

pub fn fractions_with_denominator(n: usize, q: u64) -> impl Iterator<Item = ReducedFraction> {
    let total = (q as u128).pow(n as u32);
    (0..total).filter_map(move |mut lin| {
        let mut a = vec![0u64; n];
        for k in (0..n).rev() {
            a[k] = (lin % q as u128) as u64;
            lin /= q as u128;
        }
        (a.iter().fold(q, |g, &v| g.gcd(&v)) == 1).then_some(ReducedFraction { a, q })
    })
}

/// A point of `T^n` stored as an exact rational part plus a small real offset,
/// so phases `nu . xi mod 1` stay accurate for very large integer `nu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frequency {
    num: Vec<i64>,
    den: Vec<u64>,
    offset: Vec<f64>,
}

impl Frequency {
    pub fn real(xi: &[f64]) -> Self {
        Self { num: vec![0; xi.len()], den: vec![1; xi.len()], offset: xi.to_vec() }
    }

    pub fn rational(num: Vec<i64>, den: Vec<u64>) -> Result<Self> {
        dim_check(num.len(), den.len())?;
        if den.contains(&0) {
            return Err(Error::InvalidArgument("zero denominator".into()));
        }
        let n = num.len();
        Ok(Self { num, den, offset: vec![0.0; n] })
    }

    /// `a/q + offset`.
    pub fn near(af: &ReducedFraction, offset: &[f64]) -> Self {
        Self { num: af.a.iter().map(|&v| v as i64).collect(), den: vec![af.q; af.dim()], offset: offset.to_vec() }
    }

    pub fn shifted(&self, delta: &[f64]) -> Self {
        Self {
            num: self.num.clone(),
            den: self.den.clone(),
            offset: self.offset.iter().zip(delta).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.num.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.num[i] as f64 / self.den[i] as f64 + self.offset[i]).collect()
    }

    /// `nu . xi mod 1` in `[0, 1)`.
    pub fn phase(&self, nu: &[i64]) -> f64 {
        let mut rational = 0.0;
        let mut hi_sum = 0.0;
        let mut lo_sum = 0.0;
        for i in 0..nu.len() {
            if self.num[i] != 0 {
                let d = self.den[i] as i128;
                let r = (nu[i] as i128 % d) * (self.num[i] as i128 % d);
                rational += r.rem_euclid(d) as f64 / d as f64;
            }
            let off = self.offset[i];
            if off != 0.0 {
                // Exact product as hi + lo, then reduce hi mod 1 before adding lo.
                let p = nu[i] as f64;
                let hi = p * off;
                let lo = p.mul_add(off, -hi);
                hi_sum += hi.rem_euclid(1.0);
                lo_sum += lo;
            }
        }
        (rational + hi_sum + lo_sum).rem_euclid(1.0)
    }

    /// Periodic offset `xi - a/q` with each coordinate in `[-1/2, 1/2)`.
    pub fn offset_from(&self, af: &ReducedFraction) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let d = self.den[i] as i128;
                let q = af.q as i128;
                let num = (self.num[i] as i128 * q - af.a[i] as i128 * d).rem_euclid(d * q);
                let mut r = num as f64 / (d * q) as f64;
                if r >= 0.5 {
                    r -= 1.0;
                }
                wrap_half(r + self.offset[i])
            })
            .collect()
    }

    /// Coordinates reduced to `[0, 1)` as floats (for nearest-fraction search).
    fn fractional(&self) -> Vec<f64> {
        self.to_f64().iter().map(|x| x.rem_euclid(1.0)).collect()
    }
}

fn wrap_half(x: f64) -> f64 {
    let r = x - x.round();
    if r >= 0.5 {
        r - 1.0
    } else if r < -0.5 {
        r + 1.0
    } else {
        r
    }
}

/// `q^{-d} sum_{r in [q]^d} e(P(r) . a/q)`, phases reduced mod `q` in integers.
pub fn weyl_sum(map: &PolynomialMap, af: &ReducedFraction) -> Result<Complex64> {
    dim_check(map.dim_range(), af.dim())?;
    let q = af.q;
    let d = map.dim_domain();
    let total = (q as u128).pow(d as u32);
    if total > 1 << 36 {
        return Err(Error::BudgetExceeded { what: "weyl sum".into(), needed: total, budget: 1 << 36 });
    }
    let roots = unit_roots(q);
    let mut acc = ComplexNeumaier::default();
    let mut r = vec![0i64; d];
    loop {
        let vals = map.evaluate_mod(&r, q);
        let mut ph: u128 = 0;
        for (v, &a) in vals.iter().zip(&af.a) {
            ph = (ph + *v as u128 * a as u128) % q as u128;
        }
        acc.add(roots[ph as usize]);
        if !odometer(&mut r, 0, q as i64 - 1) {
            break;
        }
    }
    Ok(acc.value() / total as f64)
}

fn unit_roots(q: u64) -> Vec<Complex64> {
    (0..q).map(|m| e(m as f64 / q as f64)).collect()
}

/// Prime-power factorization by trial division.
pub fn factorize(mut q: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= q {
        if q.is_multiple_of(p) {
            let mut e = 0;
            while q.is_multiple_of(p) {
                q /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if q > 1 {
        out.push((q, 1));
    }
    out
}

fn mod_inverse(a: u64, m: u64) -> u64 {
    let ext = (a as i128).extended_gcd(&(m as i128));
    debug_assert_eq!(ext.gcd, 1);
    ext.x.rem_euclid(m as i128) as u64
}

/// The same sum through the Chinese remainder theorem:
/// `S(a/q) = prod_i S(b_i/q_i)` over the prime-power factors `q_i`, with
/// `b_i = a (q/q_i)^{-1} mod q_i`.
pub fn weyl_sum_crt(map: &PolynomialMap, af: &ReducedFraction) -> Result<Complex64> {
    let mut prod = Complex64::new(1.0, 0.0);
    for (p, k) in factorize(af.q) {
        let qi = p.pow(k);
        let rest = af.q / qi;
        let inv = mod_inverse(rest % qi, qi);
        let b: Vec<u64> = af.a.iter().map(|&a| ((a as u128 % qi as u128) * inv as u128 % qi as u128) as u64).collect();
        prod *= weyl_sum(map, &ReducedFraction::new(b, qi)?)?;
    }
    Ok(prod)
}

/// `S(a/q)` for every `a in [q]^n` at once: histogram of `P(r) mod q`
/// followed by an `n`-dimensional FFT. Indexed row-major by `a`.
pub fn weyl_sums_all(map: &PolynomialMap, q: u64) -> Result<Vec<Complex64>> {
    let n = map.dim_range();
    let d = map.dim_domain();
    let cells = (q as u128).pow(n as u32);
    let total = (q as u128).pow(d as u32);
    if cells > 1 << 26 || total > 1 << 36 {
        return Err(Error::BudgetExceeded { what: format!("all weyl sums mod {q}"), needed: cells.max(total), budget: 1 << 26 });
    }
    let mut hist = vec![Complex64::default(); cells as usize];
    let mut r = vec![0i64; d];
    loop {
        let vals = map.evaluate_mod(&r, q);
        let idx = vals.iter().fold(0usize, |acc, &v| acc * q as usize + v as usize);
        hist[idx] += 1.0;
        if !odometer(&mut r, 0, q as i64 - 1) {
            break;
        }
    }
    // sum_m H[m] e(a . m / q) is an unnormalized inverse DFT in m.
    fft_nd(&mut hist, &vec![q as usize; n], FftDirection::Inverse);
    let norm = 1.0 / total as f64;
    Ok(hist.into_iter().map(|v| v * norm).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeylRow {
    pub q: u64,
    pub max_abs: f64,
    pub argmax: ReducedFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeylFit {
    /// Least-squares slope of `log2 max|S|` against `log2 q`.
    pub slope: f64,
    pub intercept: f64,
    /// Rows with `max|S| < WEYL_ZERO` are kept in the table but not fitted.
    pub fitted_rows: usize,
    pub table: Vec<WeylRow>,
}

/// Threshold below which a complete sum is treated as exactly zero.
pub const WEYL_ZERO: f64 = 1e-12;

/// Per-`q` maxima of `|S(a/q)|` over reduced `a` for `q <= q_max`, with a
/// log-log least-squares slope. Requires condition (C).
pub fn weyl_decay_fit(map: &PolynomialMap, q_max: u64) -> Result<WeylFit> {
    if !map.check_condition_c().holds {
        return Err(Error::InvalidArgument(format!("{map} fails condition (C)")));
    }
    if q_max == 0 {
        return Err(Error::InvalidArgument("q_max must be positive".into()));
    }
    let n = map.dim_range();
    let table: Vec<WeylRow> = (1..=q_max)
        .into_par_iter()
        .map(|q| {
            let sums = weyl_sums_all(map, q)?;
            let mut best: Option<(f64, ReducedFraction)> = None;
            for af in fractions_with_denominator(n, q) {
                let idx = af.a.iter().fold(0usize, |acc, &v| acc * q as usize + v as usize);
                let m = sums[idx].norm();
                if best.as_ref().is_none_or(|(b, _)| m > *b) {
                    best = Some((m, af));
                }
            }
            let (max_abs, argmax) = best.expect("every q has a reduced fraction");
            Ok(WeylRow { q, max_abs, argmax })
        })
        .collect::<Result<Vec<_>>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = table
        .iter()
        .filter(|r| r.max_abs >= WEYL_ZERO)
        .map(|r| ((r.q as f64).log2(), r.max_abs.log2()))
        .unzip();
    let (slope, intercept) = stats::least_squares(&xs, &ys).unwrap_or((f64::NAN, f64::NAN));
    Ok(WeylFit { slope, intercept, fitted_rows: xs.len(), table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `delta < 1/100`, `delta' < delta/10`.
    #[serde(alias = "paper_regime")]
    Paper,
    /// Only `0 < delta' < delta < 1`; used so that higher shells switch on at desk-scale `j`.
    Exploratory,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Paper => "paper_regime",
            Regime::Exploratory => "exploratory",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArcParameters {
    delta: f64,
    delta_prime: f64,
    regime: Regime,
}

impl ArcParameters {
    pub fn new(delta: f64, delta_prime: f64, regime: Regime) -> Result<Self> {
        let ok = match regime {
            Regime::Paper => delta > 0.0 && delta < 0.01 && delta_prime > 0.0 && delta_prime < delta / 10.0,
            Regime::Exploratory => delta_prime > 0.0 && delta_prime < delta && delta < 1.0,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("delta={delta}, delta'={delta_prime} outside the {regime} window")));
        }
        Ok(Self { delta, delta_prime, regime })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// `epsilon = delta - delta'`.
    pub fn epsilon(&self) -> f64 {
        self.delta - self.delta_prime
    }

    /// Largest shell index `k` with `k <= j delta'` (0 when the sum is empty).
    pub fn max_shell(&self, j: i32) -> u32 {
        (j as f64 * self.delta_prime + 1e-12).floor().max(0.0) as u32
    }

    /// Arc half-widths `2^{-(D_i - 1) j - delta j}`.
    pub fn arc_widths(&self, degrees: &[u32], j: i32) -> Vec<f64> {
        degrees.iter().map(|&d| (2f64).powf(-((d as f64 - 1.0) * j as f64) - self.delta * j as f64)).collect()
    }
}

/// Componentwise mod-1 distance test against the anisotropic arc widths.
pub fn major_arc_contains(map: &PolynomialMap, params: &ArcParameters, j: i32, af: &ReducedFraction, xi: &Frequency) -> bool {
    let widths = params.arc_widths(map.degrees(), j);
    xi.offset_from(af).iter().zip(&widths).all(|(o, w)| o.abs() <= *w)
}

/// Cutoff `chi_k(eta) = Theta(2^{10k} |eta|)` on periodic offsets.
pub fn chi_k(k: u32, eta: &[f64]) -> f64 {
    let r = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
    theta((2f64).powi(10 * k as i32) * r)
}

/// Absolute error target for `Phi_j`.
pub const PHI_ABS_TOL: f64 = 1e-8;
/// Largest phase increment per quadrature cell, in radians.
pub const PHI_MAX_PHASE_STEP: f64 = 0.1;
/// Above this scale-normalized phase derivative `Phi_j` is treated as zero.
///
/// For the pinned bump the rescaled integral has dropped below 1e-14 of its
/// peak well before this point; see the `cutoff_is_safe` test.
pub const PHI_CUTOFF_LAMBDA: f64 = 1000.0;
/// Bound reported for values replaced by the cutoff.
pub const PHI_CUTOFF_ERROR: f64 = 1e-13;
/// Maximum quadrature nodes for one evaluation.
pub const PHI_NODE_BUDGET: u128 = 1 << 26;
const PHI_COARSE_LEVEL: i32 = 8;
const PHI_MAX_LEVELS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiValue {
    pub value: Complex64,
    /// `|I_h - I_{h/2}|`, or the cutoff bound.
    pub error: f64,
    pub nodes: usize,
    pub cutoff: bool,
}

struct PhiLevel {
    /// `P(t)` per node, flattened (`n` per node).
    pos: Vec<f64>,
    amp: Vec<f64>,
}

/// Trapezoid quadrature for `Phi_j(eta) = int e(P(t) . eta) K_j(t) dt` over
/// nested dyadic grids. Level `l` has step `2^{j - 8 - l}`; each level stores
/// only the nodes it adds, so refinement reuses every coarser sum.
pub struct PhiIntegrator {
    map: PolynomialMap,
    kernel: CZKernel,
    psi: DyadicBump,
    j: i32,
    levels: Vec<OnceLock<PhiLevel>>,
    coarse_points: Vec<Vec<f64>>,
}

impl PhiIntegrator {
    pub fn new(map: &PolynomialMap, kernel: &CZKernel, psi: &DyadicBump, j: i32) -> Result<Self> {
        if j < 1 {
            return Err(Error::InvalidArgument("Phi_j needs j >= 1".into()));
        }
        dim_check(map.dim_domain(), kernel.dim())?;
        if map.dim_domain() > 2 {
            return Err(Error::InvalidArgument("quadrature implemented for d <= 2".into()));
        }
        let mut me = Self {
            map: map.clone(),
            kernel: *kernel,
            psi: *psi,
            j,
            levels: (0..PHI_MAX_LEVELS).map(|_| OnceLock::new()).collect(),
            coarse_points: Vec::new(),
        };
        me.coarse_points = me.level_points(0);
        Ok(me)
    }

    pub fn j(&self) -> i32 {
        self.j
    }

    fn step(&self, level: usize) -> f64 {
        (2f64).powi(self.j - PHI_COARSE_LEVEL - level as i32)
    }

    fn nodes_through(&self, level: usize) -> u128 {
        // Bounding box side 2^{j+2} in units of the step.
        let per_axis = 1u128 << (PHI_COARSE_LEVEL as u32 + 2 + level as u32);
        per_axis.pow(self.map.dim_domain() as u32)
    }

    fn level_points(&self, level: usize) -> Vec<Vec<f64>> {
        let d = self.map.dim_domain();
        let h = self.step(level);
        let m = 1i64 << (PHI_COARSE_LEVEL as u32 + 1 + level as u32);
        let (lo, hi) = ((2f64).powi(self.j - 1), (2f64).powi(self.j + 1));
        let mut idx = vec![-m; d];
        let mut out = Vec::new();
        loop {
            let fresh = level == 0 || idx.iter().any(|v| v.rem_euclid(2) == 1);
            if fresh {
                let t: Vec<f64> = idx.iter().map(|&v| v as f64 * h).collect();
                let r = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > lo && r < hi {
                    out.push(t);
                }
            }
            if !odometer(&mut idx, -m, m) {
                break;
            }
        }
        out
    }

    fn level(&self, level: usize) -> &PhiLevel {
        self.levels[level].get_or_init(|| {
            let pts = if level == 0 { self.coarse_points.clone() } else { self.level_points(level) };
            let n = self.map.dim_range();
            let mut pos = Vec::with_capacity(pts.len() * n);
            let mut amp = Vec::with_capacity(pts.len());
            for t in &pts {
                let w = self.psi.at_scale(self.j, crate::kernels::norm(t));
                if w == 0.0 {
                    continue;
                }
                pos.extend(self.map.evaluate_real(t));
                amp.push(w * self.kernel.eval_unchecked(t));
            }
            PhiLevel { pos, amp }
        })
    }

    fn level_sum(&self, level: usize, eta: &[f64]) -> Complex64 {
        let lv = self.level(level);
        let n = eta.len();
        const CHUNK: usize = 1 << 14;
        let partials: Vec<Complex64> = lv
            .amp
            .par_chunks(CHUNK)
            .zip(lv.pos.par_chunks(CHUNK * n))
            .map(|(amp, pos)| {
                let mut acc = ComplexNeumaier::default();
                for (i, &a) in amp.iter().enumerate() {
                    let mut ph = 0.0;
                    for k in 0..n {
                        ph += pos[i * n + k] * eta[k];
                    }
                    acc.add(a * e(ph.rem_euclid(1.0)));
                }
                acc.value()
            })
            .collect();
        crate::sum::sum_complex(partials)
    }

    /// `sup |grad (P . eta)|` on the annulus, bounded term by term.
    fn gradient_bound(&self, eta: &[f64]) -> (f64, f64) {
        let r = (2f64).powi(self.j + 1);
        let mut g = 0.0;
        let mut hess = 0.0;
        for (alpha, c) in self.map.terms() {
            let w: f64 = c.iter().zip(eta).map(|(&ci, &x)| ci as f64 * x).sum::<f64>().abs();
            let deg = alpha.iter().sum::<u32>() as i32;
            g += w * deg as f64 * r.powi(deg - 1);
            if deg >= 2 {
                hess += w * (deg * (deg - 1)) as f64 * r.powi(deg - 2);
            }
        }
        (g, hess)
    }

    /// Lower bound for `2 pi 2^j min |grad (P . eta)|` over the annulus.
    fn nonstationarity(&self, eta: &[f64], hess: f64) -> f64 {
        let h = self.step(0);
        let slack = hess * h * (self.map.dim_domain() as f64).sqrt() / 2.0;
        let mut min_grad = f64::INFINITY;
        for t in &self.coarse_points {
            let g = self.map.phase_gradient(t, eta);
            min_grad = min_grad.min(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        TAU * (2f64).powi(self.j) * (min_grad - slack).max(0.0)
    }

    pub fn eval(&self, eta: &[f64]) -> Result<PhiValue> {
        dim_check(self.map.dim_range(), eta.len())?;
        let (g, hess) = self.gradient_bound(eta);
        if self.nonstationarity(eta, hess) >= PHI_CUTOFF_LAMBDA {
            return Ok(PhiValue { value: Complex64::default(), error: PHI_CUTOFF_ERROR, nodes: 0, cutoff: true });
        }
        let h0 = self.step(0);
        let h_req = if g > 0.0 { PHI_MAX_PHASE_STEP / (TAU * g) } else { h0 };
        let mut level = if h_req >= h0 { 0 } else { (h0 / h_req).log2().ceil() as usize };
        if level + 1 >= PHI_MAX_LEVELS || self.nodes_through(level + 1) > PHI_NODE_BUDGET {
            return Err(Error::BudgetExceeded {
                what: format!("Phi_{} quadrature at |eta| = {:e}", self.j, crate::kernels::norm(eta)),
                needed: self.nodes_through(level + 1),
                budget: PHI_NODE_BUDGET,
            });
        }
        let d = self.map.dim_domain() as i32;
        let mut s = ComplexNeumaier::default();
        for l in 0..=level {
            s.add(self.level_sum(l, eta));
        }
        let mut coarse = s.value() * self.step(level).powi(d);
        loop {
            s.add(self.level_sum(level + 1, eta));
            let fine = s.value() * self.step(level + 1).powi(d);
            let err = (fine - coarse).norm();
            level += 1;
            let exhausted = level + 1 >= PHI_MAX_LEVELS || self.nodes_through(level + 1) > PHI_NODE_BUDGET;
            if err <= PHI_ABS_TOL || exhausted {
                let nodes = (0..=level).map(|l| self.level(l).amp.len()).sum();
                return Ok(PhiValue { value: fine, error: err, nodes, cutoff: false });
            }
            coarse = fine;
        }
    }

    /// `int |K_j|`, a ceiling for `|Phi_j|`.
    pub fn l1_mass(&self) -> f64 {
        let d = self.map.dim_domain() as i32;
        let lv = self.level(0);
        lv.amp.iter().map(|a| a.abs()).sum::<f64>() * self.step(0).powi(d)
    }
}

/// `Phi_j(eta)` with a fresh integrator.
pub fn phi_j(map: &PolynomialMap, kernel: &CZKernel, psi: &DyadicBump, j: i32, eta: &[f64]) -> Result<PhiValue> {
    PhiIntegrator::new(map, kernel, psi, j)?.eval(eta)
}

/// Largest uniform multiplier grid.
pub const M_GRID_BUDGET: u128 = 1 << 26;

/// One dyadic piece `m_j` as an exact trigonometric polynomial.
pub struct MultiplierPiece {
    j: i32,
    table: ScaleTable,
}

impl MultiplierPiece {
    pub fn new(map: &PolynomialMap, kernel: &CZKernel, psi: &DyadicBump, j: i32) -> Result<Self> {
        if j < 1 {
            return Err(Error::InvalidArgument("m_j needs j >= 1".into()));
        }
        Ok(Self { j, table: ScaleTable::build(map, kernel, psi, j)? })
    }

    pub fn j(&self) -> i32 {
        self.j
    }

    pub fn table(&self) -> &ScaleTable {
        &self.table
    }

    pub fn trig(&self) -> TrigPolynomial {
        let n = self.table.shifts.first().map_or(1, Vec::len);
        TrigPolynomial::new(n, self.table.shifts.iter().cloned().zip(self.table.weights.iter().map(|&w| Complex64::from(w))))
            .unwrap()
    }

    /// Direct summation at one frequency.
    pub fn eval(&self, xi: &Frequency) -> Complex64 {
        let mut acc = ComplexNeumaier::default();
        for (s, &w) in self.table.shifts.iter().zip(&self.table.weights) {
            acc.add(w * e(xi.phase(s)));
        }
        acc.value()
    }

    /// Smallest smooth grid with `N_i > 2 max |P_i(y)|`.
    pub fn alias_free_resolution(&self) -> Vec<usize> {
        self.table.max_shift().iter().map(|&m| smooth_size(2 * m as usize + 1)).collect()
    }

    pub fn sampled(&self, n: Vec<usize>) -> Result<SampledMultiplier> {
        let total: u128 = n.iter().map(|&v| v as u128).product();
        if total > M_GRID_BUDGET {
            return Err(Error::BudgetExceeded {
                what: format!("m_{} grid for an annulus of {} points", self.j, self.table.len()),
                needed: total,
                budget: M_GRID_BUDGET,
            });
        }
        SampledMultiplier::from_trig(self.trig(), n)
    }
}

/// `m_j` sampled on an alias-free grid, with exact frequencies `{P(y)}` attached.
pub fn m_j(map: &PolynomialMap, kernel: &CZKernel, psi: &DyadicBump, j: i32) -> Result<SampledMultiplier> {
    let piece = MultiplierPiece::new(map, kernel, psi, j)?;
    let n = piece.alias_free_resolution();
    piece.sampled(n)
}

/// Where to evaluate multipliers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FrequencyGrid {
    /// `{k / N}` per axis.
    Uniform { n: Vec<usize> },
    /// `center + i * step`, `|i| <= radius`, per axis.
    Window { center: Frequency, step: Vec<f64>, radius: usize },
    /// Explicit probe points; no resolution guarantee.
    Points(Vec<Frequency>),
    Union(Vec<FrequencyGrid>),
}

impl FrequencyGrid {
    pub fn points(&self) -> Vec<Frequency> {
        match self {
            FrequencyGrid::Uniform { n } => {
                let total: usize = n.iter().product();
                (0..total)
                    .map(|mut idx| {
                        let mut num = vec![0i64; n.len()];
                        for k in (0..n.len()).rev() {
                            num[k] = (idx % n[k]) as i64;
                            idx /= n[k];
                        }
                        Frequency::rational(num, n.iter().map(|&v| v as u64).collect()).unwrap()
                    })
                    .collect()
            }
            FrequencyGrid::Window { center, step, radius } => {
                let r = *radius as i64;
                let mut idx = vec![-r; center.dim()];
                let mut out = Vec::new();
                loop {
                    let delta: Vec<f64> = idx.iter().zip(step).map(|(&i, &s)| i as f64 * s).collect();
                    out.push(center.shifted(&delta));
                    if !odometer(&mut idx, -r, r) {
                        break;
                    }
                }
                out
            }
            FrequencyGrid::Points(p) => p.clone(),
            FrequencyGrid::Union(parts) => parts.iter().flat_map(FrequencyGrid::points).collect(),
        }
    }

    /// Coarsest step among the components that have one.
    pub fn step(&self) -> Option<f64> {
        match self {
            FrequencyGrid::Uniform { n } => n.iter().map(|&v| 1.0 / v as f64).reduce(f64::max),
            FrequencyGrid::Window { step, .. } => step.iter().cloned().reduce(f64::max),
            FrequencyGrid::Points(_) => None,
            FrequencyGrid::Union(parts) => parts.iter().filter_map(FrequencyGrid::step).reduce(f64::max),
        }
    }

    /// Windows of `2 radius + 1` points per axis around every fraction, with
    /// step `width_i / per_width` where `width_i` is the arc half-width.
    pub fn around_arcs(fractions: &[ReducedFraction], widths: &[f64], per_width: usize, radius: usize) -> Self {
        let step: Vec<f64> = widths.iter().map(|w| w / per_width as f64).collect();
        FrequencyGrid::Union(
            fractions
                .iter()
                .map(|af| FrequencyGrid::Window { center: Frequency::near(af, &vec![0.0; af.dim()]), step: step.clone(), radius })
                .collect(),
        )
    }
}

/// Values of a multiplier at the points of a grid.
#[derive(Debug, Clone, Serialize)]
pub struct GridValues {
    #[serde(skip)]
    pub points: Vec<Frequency>,
    #[serde(skip)]
    pub values: Vec<Complex64>,
    pub sup: f64,
    pub argsup: Option<Vec<f64>>,
}

impl GridValues {
    fn new(points: Vec<Frequency>, values: Vec<Complex64>) -> Self {
        let mut sup = 0.0;
        let mut arg = None;
        for (p, v) in points.iter().zip(&values) {
            if v.norm() > sup || arg.is_none() {
                sup = v.norm().max(sup);
                arg = Some(p.to_f64());
            }
        }
        Self { points, values, sup, argsup: arg }
    }

    /// Back to a `SampledMultiplier` when the points form a uniform grid.
    pub fn to_sampled(&self, grid: &FrequencyGrid) -> Option<SampledMultiplier> {
        match grid {
            FrequencyGrid::Uniform { n } => SampledMultiplier::new(n.clone(), self.values.clone(), None).ok(),
            _ => None,
        }
    }
}

/// Which main term to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MainTermVariant {
    /// `L_{j,k}`.
    Ljk(u32),
    /// `L_j = sum_{1 <= k <= j delta'} L_{j,k}`.
    Lj,
    /// `L^{(k)} = sum_{k/delta' <= j <= j_max} L_{j,k}`.
    LkTail { k: u32, j_max: i32 },
}

/// Lazily built per-scale machinery for one `(P, K, psi, params)`.
pub struct Decomposition {
    map: PolynomialMap,
    kernel: CZKernel,
    psi: DyadicBump,
    params: ArcParameters,
    pieces: Mutex<HashMap<i32, Arc<MultiplierPiece>>>,
    integrators: Mutex<HashMap<i32, Arc<PhiIntegrator>>>,
    weyl: Mutex<HashMap<ReducedFraction, Complex64>>,
}

/// The single fraction whose cutoff is active at a frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveFraction {
    pub k: u32,
    pub fraction: ReducedFraction,
    pub offset: Vec<f64>,
    pub chi: f64,
}

impl Decomposition {
    pub fn new(map: PolynomialMap, kernel: CZKernel, psi: DyadicBump, params: ArcParameters) -> Result<Self> {
        dim_check(map.dim_domain(), kernel.dim())?;
        Ok(Self {
            map,
            kernel,
            psi,
            params,
            pieces: Mutex::new(HashMap::new()),
            integrators: Mutex::new(HashMap::new()),
            weyl: Mutex::new(HashMap::new()),
        })
    }

    pub fn map(&self) -> &PolynomialMap {
        &self.map
    }

    pub fn params(&self) -> &ArcParameters {
        &self.params
    }

    pub fn piece(&self, j: i32) -> Result<Arc<MultiplierPiece>> {
        if let Some(p) = self.pieces.lock().unwrap().get(&j) {
            return Ok(p.clone());
        }
        let p = Arc::new(MultiplierPiece::new(&self.map, &self.kernel, &self.psi, j)?);
        Ok(self.pieces.lock().unwrap().entry(j).or_insert(p).clone())
    }

    pub fn integrator(&self, j: i32) -> Result<Arc<PhiIntegrator>> {
        if let Some(p) = self.integrators.lock().unwrap().get(&j) {
            return Ok(p.clone());
        }
        let p = Arc::new(PhiIntegrator::new(&self.map, &self.kernel, &self.psi, j)?);
        Ok(self.integrators.lock().unwrap().entry(j).or_insert(p).clone())
    }

    pub fn weyl(&self, af: &ReducedFraction) -> Result<Complex64> {
        if let Some(v) = self.weyl.lock().unwrap().get(af) {
            return Ok(*v);
        }
        let v = weyl_sum(&self.map, af)?;
        self.weyl.lock().unwrap().insert(af.clone(), v);
        Ok(v)
    }

    pub fn m_at(&self, j: i32, xi: &Frequency) -> Result<Complex64> {
        Ok(self.piece(j)?.eval(xi))
    }

    pub fn phi(&self, j: i32, eta: &[f64]) -> Result<PhiValue> {
        self.integrator(j)?.eval(eta)
    }

    /// The fraction of shell `k` whose cutoff support contains `xi`, if any.
    /// Two active fractions would contradict disjointness and are reported.
    pub fn active_in_shell(&self, k: u32, xi: &Frequency) -> Result<Option<ActiveFraction>> {
        let n = self.map.dim_range();
        let frac = xi.fractional();
        let reach = 2.0 * (2f64).powi(-10 * k as i32);
        let mut found: Option<ActiveFraction> = None;
        for q in (1u64 << (k - 1))..(1u64 << k) {
            let a: Vec<u64> = frac.iter().map(|&x| ((x * q as f64).round() as u64) % q).collect();
            let Ok(af) = ReducedFraction::new(a, q) else { continue };
            let offset = xi.offset_from(&af);
            if offset.iter().map(|v| v * v).sum::<f64>().sqrt() >= reach {
                continue;
            }
            let chi = chi_k(k, &offset);
            if chi == 0.0 {
                continue;
            }
            if let Some(prev) = &found {
                return Err(Error::InvariantViolation(format!(
                    "fractions {} and {af} both active at {:?} in shell {k}",
                    prev.fraction,
                    xi.to_f64()
                )));
            }
            debug_assert_eq!(af.dim(), n);
            found = Some(ActiveFraction { k, fraction: af, offset, chi });
        }
        Ok(found)
    }

    /// `L_{j,k}(xi) = S(a/q) Phi_j(xi - a/q) chi_k(xi - a/q)` for the active `a/q`.
    pub fn l_jk_at(&self, j: i32, k: u32, xi: &Frequency) -> Result<(Complex64, f64)> {
        match self.active_in_shell(k, xi)? {
            None => Ok((Complex64::default(), 0.0)),
            Some(act) => {
                let s = self.weyl(&act.fraction)?;
                let phi = self.phi(j, &act.offset)?;
                Ok((s * phi.value * act.chi, phi.error))
            }
        }
    }

    pub fn l_j_at(&self, j: i32, xi: &Frequency) -> Result<(Complex64, f64)> {
        let mut total = Complex64::default();
        let mut err = 0.0;
        let mut active = 0;
        for k in 1..=self.params.max_shell(j) {
            let (v, e) = self.l_jk_at(j, k, xi)?;
            if v != Complex64::default() {
                active += 1;
            }
            total += v;
            err += e;
        }
        if active > 1 {
            return Err(Error::InvariantViolation(format!("{active} shells active at {:?}", xi.to_f64())));
        }
        Ok((total, err))
    }

    pub fn main_term_at(&self, variant: MainTermVariant, j: i32, xi: &Frequency) -> Result<(Complex64, f64)> {
        match variant {
            MainTermVariant::Ljk(k) => self.l_jk_at(j, k, xi),
            MainTermVariant::Lj => self.l_j_at(j, xi),
            MainTermVariant::LkTail { k, j_max } => {
                let j0 = (k as f64 / self.params.delta_prime - 1e-12).ceil().max(1.0) as i32;
                let mut total = Complex64::default();
                let mut err = 0.0;
                for jj in j0..=j_max {
                    let (v, e) = self.l_jk_at(jj, k, xi)?;
                    total += v;
                    err += e;
                }
                Ok((total, err))
            }
        }
    }

    pub fn main_term(&self, variant: MainTermVariant, j: i32, grid: &FrequencyGrid) -> Result<GridValues> {
        let pts = grid.points();
        let vals = pts.par_iter().map(|xi| self.main_term_at(variant, j, xi).map(|v| v.0)).collect::<Result<Vec<_>>>()?;
        Ok(GridValues::new(pts, vals))
    }

    /// Narrowest arc half-width at scale `j`.
    pub fn narrowest_arc(&self, j: i32) -> f64 {
        self.params.arc_widths(self.map.degrees(), j).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn error_e_j(&self, j: i32, grid: &FrequencyGrid) -> Result<ErrorReport> {
        let required = self.narrowest_arc(j) / 4.0;
        if let Some(step) = grid.step() {
            if step > required * (1.0 + 1e-12) {
                return Err(Error::UnderResolved { step, required });
            }
        }
        let pts = grid.points();
        let rows = pts
            .par_iter()
            .map(|xi| {
                let m = self.m_at(j, xi)?;
                let (l, err) = self.l_j_at(j, xi)?;
                Ok((m, l, err))
            })
            .collect::<Result<Vec<_>>>()?;
        let m: Vec<Complex64> = rows.iter().map(|r| r.0).collect();
        let l: Vec<Complex64> = rows.iter().map(|r| r.1).collect();
        let e_vals: Vec<Complex64> = rows.iter().map(|r| r.0 - r.1).collect();
        let quad_error = rows.iter().map(|r| r.2).fold(0.0, f64::max);
        let sup_m = m.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let sup_l = l.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let identity_defect = m.iter().zip(&l).zip(&e_vals).map(|((m, l), e)| (m - (l + e)).norm()).fold(0.0, f64::max);
        Ok(ErrorReport {
            j,
            e: GridValues::new(pts, e_vals),
            m,
            l,
            sup_m,
            sup_l,
            identity_defect,
            quadrature_error: quad_error,
            regime: self.params.regime,
        })
    }

    pub fn approximation_error(&self, j: i32, af: &ReducedFraction, samples: &[Frequency]) -> Result<ApproxReport> {
        let relaxed = (af.q as f64) > (2f64).powf(self.params.delta_prime * j as f64);
        if relaxed && self.params.regime == Regime::Paper {
            return Err(Error::InvalidArgument(format!("q = {} exceeds 2^(delta' j)", af.q)));
        }
        for xi in samples {
            if !major_arc_contains(&self.map, &self.params, j, af, xi) {
                return Err(Error::InvalidArgument(format!("{:?} lies outside the arc around {af}", xi.to_f64())));
            }
        }
        let s = self.weyl(af)?;
        let rows = samples
            .par_iter()
            .map(|xi| {
                let m = self.m_at(j, xi)?;
                let phi = self.phi(j, &xi.offset_from(af))?;
                Ok(((m - s * phi.value).norm(), (s * phi.value).norm(), phi.error))
            })
            .collect::<Result<Vec<_>>>()?;
        let (idx, max) = rows.iter().enumerate().fold((0, 0.0), |acc, (i, r)| if r.0 > acc.1 { (i, r.0) } else { acc });
        Ok(ApproxReport {
            j,
            max_deviation: max,
            argmax: samples.get(idx).map(Frequency::to_f64),
            max_main_term: rows.iter().map(|r| r.1).fold(0.0, f64::max),
            quadrature_error: rows.iter().map(|r| r.2).fold(0.0, f64::max),
            relaxed,
            regime: self.params.regime,
        })
    }

    pub fn off_arc_phi_bound_check(&self, j: i32, af: &ReducedFraction, samples: &[Frequency]) -> Result<OffArcReport> {
        for xi in samples {
            if major_arc_contains(&self.map, &self.params, j, af, xi) {
                return Err(Error::InvalidArgument(format!("{:?} lies on the arc around {af}", xi.to_f64())));
            }
        }
        let integ = self.integrator(j)?;
        let vals = samples.par_iter().map(|xi| integ.eval(&xi.offset_from(af))).collect::<Result<Vec<_>>>()?;
        let (idx, max) = vals.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.value.norm() > acc.1 { (i, v.value.norm()) } else { acc });
        let bound = (2f64).powf(-(1.0 - self.params.delta) * j as f64 / self.map.degree() as f64);
        Ok(OffArcReport {
            j,
            max_modulus: max,
            argmax: samples.get(idx).map(Frequency::to_f64),
            reference: bound,
            ratio: max / bound,
            ceiling: integ.l1_mass(),
        })
    }

    /// `K_j = F^{-1}[E_j]` on a uniform alias-free grid, refined `N -> 2N`
    /// until successive tails agree to 1%.
    pub fn minor_arc_kernel(&self, j: i32, n: Option<Vec<usize>>, max_refinements: usize) -> Result<MinorArcReport> {
        let piece = self.piece(j)?;
        let mut n = n.unwrap_or_else(|| piece.alias_free_resolution());
        let min_n = piece.alias_free_resolution();
        if n.iter().zip(&min_n).any(|(a, b)| a < b) {
            return Err(Error::InvalidArgument(format!("grid {n:?} aliases m_{j}; need at least {min_n:?}")));
        }
        let degrees = self.map.degrees().to_vec();
        let d_max = self.map.degree() as i32;
        let qstar = (2f64).powi((d_max + 1) * j);
        let mut previous: Option<f64> = None;
        let mut refinements = 0;
        loop {
            let grid = FrequencyGrid::Uniform { n: n.clone() };
            let m = piece.sampled(n.clone())?;
            let pts = grid.points();
            let l_vals = pts.par_iter().map(|xi| self.l_j_at(j, xi).map(|v| v.0)).collect::<Result<Vec<_>>>()?;
            let e_samples: Vec<Complex64> = m.samples().iter().zip(&l_vals).map(|(a, b)| a - b).collect();
            let e_mult = SampledMultiplier::new(n.clone(), e_samples, None)?;
            let lo: Vec<i64> = n.iter().map(|&v| -((v / 2) as i64)).collect();
            let domain = BoxDomain::new(lo, n.clone())?;
            let kernel = idft_onto(&e_mult, &domain)?;
            let tail = tail_outside(&kernel, &degrees, qstar);
            let converged = match previous {
                Some(p) => (tail - p).abs() <= 0.01 * p.max(tail) || (tail == 0.0 && p == 0.0),
                None => false,
            };
            if converged || refinements >= max_refinements {
                let sum = crate::sum::sum_complex(kernel.values().iter().copied());
                let e0 = e_mult.samples()[0];
                let profile = (0..=((d_max + 1) * j))
                    .map(|b| ((2f64).powi(b), tail_outside(&kernel, &degrees, (2f64).powi(b))))
                    .collect();
                return Ok(MinorArcReport {
                    j,
                    resolution: n,
                    refinements,
                    converged,
                    qstar_radius: qstar,
                    tail_l1: tail,
                    tail_profile: profile,
                    sup: kernel.max_abs(),
                    prediction: None,
                    zero_frequency_defect: (sum - e0).norm(),
                    kernel,
                });
            }
            previous = Some(tail);
            refinements += 1;
            n = n.iter().map(|&v| 2 * v).collect();
        }
    }
}

fn tail_outside(k: &LatticeFunction, degrees: &[u32], radius: f64) -> f64 {
    let mut acc = crate::sum::Neumaier::default();
    for (i, v) in k.values().iter().enumerate() {
        if *v == Complex64::default() {
            continue;
        }
        if rho_with(degrees, &k.domain().point(i)) > radius {
            acc.add(v.norm());
        }
    }
    acc.value()
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub j: i32,
    pub e: GridValues,
    #[serde(skip)]
    pub m: Vec<Complex64>,
    #[serde(skip)]
    pub l: Vec<Complex64>,
    pub sup_m: f64,
    pub sup_l: f64,
    /// `max |m - (L + E)|` over the grid.
    pub identity_defect: f64,
    pub quadrature_error: f64,
    pub regime: Regime,
}

impl ErrorReport {
    pub fn sup(&self) -> f64 {
        self.e.sup
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApproxReport {
    pub j: i32,
    pub max_deviation: f64,
    pub argmax: Option<Vec<f64>>,
    pub max_main_term: f64,
    pub quadrature_error: f64,
    /// `q > 2^{delta' j}` (only allowed in the exploratory regime).
    pub relaxed: bool,
    pub regime: Regime,
}

#[derive(Debug, Clone, Serialize)]
pub struct OffArcReport {
    pub j: i32,
    pub max_modulus: f64,
    pub argmax: Option<Vec<f64>>,
    /// `2^{-(1 - delta) j / D}`.
    pub reference: f64,
    pub ratio: f64,
    /// `int |K_j|`.
    pub ceiling: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinorArcReport {
    pub j: i32,
    pub resolution: Vec<usize>,
    pub refinements: usize,
    pub converged: bool,
    /// `Q_* = {rho(x) <= 2^{(D+1) j}}`.
    pub qstar_radius: f64,
    pub tail_l1: f64,
    /// `(radius, l1 mass outside {rho <= radius})` for dyadic radii.
    pub tail_profile: Vec<(f64, f64)>,
    pub sup: f64,
    pub prediction: Option<f64>,
    /// `|sum_x K_j(x) - E_j(0)|`.
    pub zero_frequency_defect: f64,
    #[serde(skip)]
    pub kernel: LatticeFunction,
}

/// Main term on a grid (`main_term_L`).
pub fn main_term_l(
    map: &PolynomialMap,
    kernel: &CZKernel,
    psi: &DyadicBump,
    params: &ArcParameters,
    j: i32,
    variant: MainTermVariant,
    grid: &FrequencyGrid,
) -> Result<GridValues> {
    Decomposition::new(map.clone(), *kernel, *psi, *params)?.main_term(variant, j, grid)
}

pub fn error_e_j(
    map: &PolynomialMap,
    kernel: &CZKernel,
    psi: &DyadicBump,
    params: &ArcParameters,
    j: i32,
    grid: &FrequencyGrid,
) -> Result<ErrorReport> {
    Decomposition::new(map.clone(), *kernel, *psi, *params)?.error_e_j(j, grid)
}

/// Where `eps'` came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum EpsProvenance {
    Supplied,
    EmpiricalFit { j_range: (i32, i32), slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionVerdict {
    #[serde(rename = "in_Omega_m")]
    pub in_omega_m: bool,
    pub major_condition_ok: bool,
    #[serde(rename = "N_P")]
    pub n_p: u64,
    /// `1/2 + eps' / (2 N_P)` as an exact fraction.
    pub boundary: String,
    pub eps_prime: String,
    pub provenance: EpsProvenance,
}

/// Parses `"3"`, `"0.503"`, `"400/201"` or `"inf"` exactly.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::InvalidArgument(format!("cannot parse `{s}` as a rational"));
    if let Some((a, b)) = s.split_once('/') {
        let a: BigInt = a.trim().parse().map_err(|_| bad())?;
        let b: BigInt = b.trim().parse().map_err(|_| bad())?;
        if b.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(a, b));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let num: BigInt = digits.parse().map_err(|_| bad())?;
    let den = BigInt::from(10u32).pow(frac.len() as u32);
    let v = BigRational::new(num, den);
    Ok(if neg { -v } else { v })
}

/// Reciprocal of an exponent in `[1, inf]`, given as text (`"inf"` allowed).
pub fn reciprocal_exponent(s: &str) -> Result<BigRational> {
    if matches!(s.trim(), "inf" | "infinity" | "∞") {
        return Ok(BigRational::zero());
    }
    let v = parse_rational(s)?;
    if v < BigRational::one() {
        return Err(Error::InvalidArgument(format!("exponent {s} is below 1")));
    }
    Ok(v.recip())
}

/// `N_P = (1 + deg P) * sum_i deg P_i`.
pub fn n_p(map: &PolynomialMap) -> u64 {
    (1 + map.degree() as u64) * map.degrees().iter().map(|&d| d as u64).sum::<u64>()
}

/// Membership in `Omega_m` (`max(1/r, 1/s) < 1/2 + eps'/(2 N_P)`) and the
/// major-arc condition `1/D_* > (n+1)/2 (|1/r - 1/2| + |1/s - 1/2|)`, in exact
/// rational arithmetic on the reciprocals `1/r`, `1/s`.
pub fn proven_region(
    map: &PolynomialMap,
    eps_prime: &BigRational,
    inv_r: &BigRational,
    inv_s: &BigRational,
    provenance: EpsProvenance,
) -> Result<RegionVerdict> {
    if !eps_prime.is_positive() {
        return Err(Error::InvalidArgument("eps' must be positive".into()));
    }
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let np = n_p(map);
    let boundary = &half + eps_prime / BigRational::from_integer(BigInt::from(2 * np));
    let worst = if inv_r > inv_s { inv_r } else { inv_s };
    let in_omega_m = *worst < boundary;
    let lhs = BigRational::new(BigInt::from(1), BigInt::from(map.d_star()));
    let n1 = BigRational::new(BigInt::from(map.dim_range() as u64 + 1), BigInt::from(2));
    let rhs = n1 * ((inv_r - &half).abs() + (inv_s - &half).abs());
    Ok(RegionVerdict {
        in_omega_m,
        major_condition_ok: lhs > rhs,
        n_p: np,
        boundary: boundary.to_string(),
        eps_prime: eps_prime.to_string(),
        provenance,
    })
}

/// Exact rational value of a finite float.
pub fn rational_from_f64(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::InvalidArgument(format!("{x} is not finite")))
}

pub fn rational_to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t3() -> PolynomialMap {
        PolynomialMap::monomial(3)
    }

    fn frac(a: u64, q: u64) -> ReducedFraction {
        ReducedFraction::new(vec![a], q).unwrap()
    }

    fn exploratory(delta: f64, dp: f64) -> ArcParameters {
        ArcParameters::new(delta, dp, Regime::Exploratory).unwrap()
    }

    fn brute_weyl(map: &PolynomialMap, af: &ReducedFraction) -> Complex64 {
        // Float phases straight from exact integer values; an independent route.
        let q = af.q as i64;
        let mut acc = Complex64::default();
        for r in 0..q {
            let v = map.evaluate(&[r]).unwrap();
            let ph: f64 = v.iter().zip(&af.a).map(|(&p, &a)| ((p as i128 * a as i128).rem_euclid(q as i128)) as f64).sum();
            acc += e(ph / q as f64);
        }
        acc / q as f64
    }

    #[test]
    fn weyl_examples() {
        for p in [t3(), PolynomialMap::curve(&[1, 2])] {
            let n = p.dim_range();
            assert!((weyl_sum(&p, &ReducedFraction::zero(n)).unwrap() - 1.0).norm() < 1e-15);
        }
        assert!(weyl_sum(&t3(), &frac(1, 3)).unwrap().norm() < 1e-15);
        let s = weyl_sum(&PolynomialMap::monomial(2), &frac(1, 5)).unwrap();
        assert!((s.norm() - 5f64.powf(-0.5)).abs() < 1e-14);
    }

    #[test]
    fn fast_weyl_routes_agree() {
        let maps = [t3(), PolynomialMap::monomial(2), PolynomialMap::curve(&[1, 2]), PolynomialMap::moment(3)];
        for p in &maps {
            for q in 1..40u64 {
                if p.dim_range() == 3 && q > 12 {
                    continue;
                }
                let all = weyl_sums_all(p, q).unwrap();
                for af in fractions_with_denominator(p.dim_range(), q) {
                    let idx = af.a.iter().fold(0usize, |acc, &v| acc * q as usize + v as usize);
                    let direct = weyl_sum(p, &af).unwrap();
                    assert!((all[idx] - direct).norm() < 1e-12, "{p} {af}");
                    if p.dim_range() == 1 {
                        assert!((brute_weyl(p, &af) - direct).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shell_enumeration() {
        let s1: Vec<_> = enumerate_shell(1, 1, 100).collect();
        assert_eq!(s1, vec![ReducedFraction::zero(1)]);
        let s2: Vec<String> = enumerate_shell(1, 2, 100).map(|f| f.to_string()).collect();
        assert_eq!(s2, vec!["1/2", "1/3", "2/3"]);
        let s2: Vec<_> = enumerate_shell(2, 2, 2).collect();
        assert_eq!(
            s2,
            vec![
                ReducedFraction::new(vec![0, 1], 2).unwrap(),
                ReducedFraction::new(vec![1, 0], 2).unwrap(),
                ReducedFraction::new(vec![1, 1], 2).unwrap()
            ]
        );
        for k in 1..=7 {
            let got: Vec<_> = enumerate_shell(1, k, 1000).collect();
            let brute: Vec<_> = ((1u64 << (k - 1))..(1 << k))
                .flat_map(|q| (0..q).filter(move |&a| a.gcd(&q) == 1).map(move |a| frac(a, q)))
                .collect();
            assert_eq!(got, brute);
            assert!(got.iter().all(|f| f.shell() == k));
        }
        assert!(ReducedFraction::new(vec![2, 4], 6).is_err());
        assert!(ReducedFraction::new(vec![2, 3], 6).is_ok());
    }

    #[test]
    fn weyl_fit_examples() {
        let fit = weyl_decay_fit(&PolynomialMap::monomial(2), 200).unwrap();
        for row in &fit.table {
            if row.q > 2 && factorize(row.q).len() == 1 && factorize(row.q)[0].1 == 1 {
                assert!((row.max_abs - (row.q as f64).powf(-0.5)).abs() < 1e-12, "q={}", row.q);
            }
        }
        assert!(fit.slope < -0.4 && fit.slope > -0.6, "{}", fit.slope);
        let fit = weyl_decay_fit(&PolynomialMap::curve(&[1, 2]), 200).unwrap();
        assert!(fit.slope <= -0.5 + 0.05, "{}", fit.slope);
        let bad = PolynomialMap::new(1, 1, [(vec![3], vec![2])]).unwrap();
        assert!(weyl_decay_fit(&bad, 10).is_err());
    }

    #[test]
    fn arc_membership_examples() {
        let p = exploratory(0.1, 0.01);
        let af = frac(1, 3);
        assert!(major_arc_contains(&t3(), &p, 10, &af, &Frequency::near(&af, &[0.0])));
        assert!(major_arc_contains(&t3(), &p, 10, &af, &Frequency::near(&af, &[(2f64).powi(-22)])));
        assert!(!major_arc_contains(&t3(), &p, 10, &af, &Frequency::near(&af, &[(2f64).powi(-19)])));
        // Distances are periodic.
        let z = ReducedFraction::zero(1);
        assert!(major_arc_contains(&t3(), &p, 10, &z, &Frequency::real(&[1.0 - (2f64).powi(-23)])));
    }

    #[test]
    fn frequency_phase_is_exact_for_huge_frequencies() {
        let xi = Frequency::near(&frac(1, 3), &[(2f64).powi(-40)]);
        let nu = 1i64 << 45;
        // nu/3 mod 1 = 2/3 (2^45 = 2 mod 3), nu * 2^-40 = 32.
        let got = xi.phase(&[nu]);
        assert!((got - 2.0 / 3.0).abs() < 1e-15, "{got}");
        let xi = Frequency::rational(vec![7], vec![1 << 20]).unwrap();
        assert!((xi.phase(&[(1 << 40) + 3]) - (21.0 / (1u64 << 20) as f64)).abs() < 1e-15);
    }

    #[test]
    fn crt_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let maps = [t3(), PolynomialMap::monomial(2), PolynomialMap::curve(&[1, 2])];
        for _ in 0..60 {
            let p = &maps[rng.gen_range(0..maps.len())];
            let q = rng.gen_range(1..3000u64);
            let af = loop {
                let a: Vec<u64> = (0..p.dim_range()).map(|_| rng.gen_range(0..q)).collect();
                if let Ok(f) = ReducedFraction::new(a, q) {
                    break f;
                }
            };
            let a = weyl_sum(p, &af).unwrap();
            let b = weyl_sum_crt(p, &af).unwrap();
            assert!((a - b).norm() < 1e-12, "{p} {af}");
        }
    }

    #[test]
    fn arcs_are_disjoint() {
        let p = exploratory(0.3, 0.25);
        for j in 6..=14 {
            let widths = p.arc_widths(&[3], j);
            let qmax = (2f64).powf(p.delta_prime() * j as f64).floor() as u64;
            let mut centers: Vec<f64> = (1..=qmax).flat_map(|q| fractions_with_denominator(1, q)).map(|f| f.to_f64()[0]).collect();
            centers.sort_by(f64::total_cmp);
            for w in centers.windows(2) {
                assert!(w[1] - w[0] > 2.0 * widths[0]);
            }
            assert!(1.0 + centers[0] - centers[centers.len() - 1] > 2.0 * widths[0]);
        }
    }

    #[test]
    fn phi_vanishes_for_odd_kernel_at_zero() {
        let v = phi_j(&t3(), &CZKernel::half_hilbert(), &DyadicBump, 6, &[0.0]).unwrap();
        assert!(v.value.norm() < 1e-12);
    }

    #[test]
    fn phi_refinement_oracle() {
        let eta = (2f64).powi(-18);
        let j = 6;
        let v = phi_j(&t3(), &CZKernel::half_hilbert(), &DyadicBump, j, &[eta]).unwrap();
        // Independent fine Riemann sum with plain float phases.
        let h = 1.0 / 4096.0;
        let mut acc = Complex64::default();
        let (lo, hi) = ((2f64).powi(j - 1), (2f64).powi(j + 1));
        let m = (hi / h) as i64;
        for i in -m..=m {
            let t = i as f64 * h;
            if t.abs() <= lo || t.abs() >= hi {
                continue;
            }
            let w = DyadicBump.at_scale(j, t.abs()) * 0.5 / t;
            acc += w * e(t * t * t * eta);
        }
        acc *= h;
        assert!((v.value - acc).norm() <= 1e-7, "{} vs {}", v.value, acc);
        let integ = PhiIntegrator::new(&t3(), &CZKernel::half_hilbert(), &DyadicBump, j).unwrap();
        assert!(v.value.norm() <= integ.l1_mass());
    }

    #[test]
    fn phi_depends_only_on_rescaled_frequency() {
        let k = CZKernel::half_hilbert();
        let a = phi_j(&t3(), &k, &DyadicBump, 4, &[3.0 * (2f64).powi(-12)]).unwrap();
        let b = phi_j(&t3(), &k, &DyadicBump, 7, &[3.0 * (2f64).powi(-21)]).unwrap();
        assert!((a.value - b.value).norm() < 1e-9);
    }

    #[test]
    fn cutoff_is_safe() {
        // Just below the cutoff the full quadrature is already negligible.
        let k = CZKernel::half_hilbert();
        let integ = PhiIntegrator::new(&t3(), &k, &DyadicBump, 3).unwrap();
        // lambda ~ 2 pi * 2^j * 3 (2^{j-1})^2 eta = 2 pi (3/4) x with x = 2^{3j} eta.
        let x_at_cut = PHI_CUTOFF_LAMBDA / (TAU * 0.75);
        for scale in [0.8, 0.9, 0.99] {
            let eta = scale * x_at_cut / 512.0;
            let v = integ.eval(&[eta]).unwrap();
            assert!(!v.cutoff);
            assert!(v.value.norm() < 1e-12, "x={} |Phi|={}", scale * x_at_cut, v.value.norm());
        }
        let v = integ.eval(&[1.2 * x_at_cut / 512.0]).unwrap();
        assert!(v.cutoff);
    }

    #[test]
    fn m_j_examples() {
        let m = m_j(&t3(), &CZKernel::half_hilbert(), &DyadicBump, 3).unwrap();
        assert!(m.samples()[0].norm() < 1e-14);
        assert!(m.metadata_deviation().unwrap() < 1e-12);
        let piece = MultiplierPiece::new(&t3(), &CZKernel::half_hilbert(), &DyadicBump, 3).unwrap();
        let mass = piece.table().l1_mass();
        assert!(m.sup_norm() <= mass * (1.0 + 1e-12));
        for xi in [0.1234, 0.77, 0.5] {
            let a = piece.eval(&Frequency::real(&[xi]));
            let b = piece.eval(&Frequency::real(&[xi + 1.0]));
            assert!((a - b).norm() < 1e-12);
        }
        // Samples agree with direct evaluation at exact rational nodes.
        let n = m.resolution()[0];
        for k in [0usize, 1, 17, n / 3, n - 1] {
            let direct = piece.eval(&Frequency::rational(vec![k as i64], vec![n as u64]).unwrap());
            assert!((direct - m.samples()[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn m_j_inverse_is_the_annulus_kernel() {
        let map = PolynomialMap::curve(&[1, 2]);
        let k = CZKernel::half_hilbert();
        let m = m_j(&map, &k, &DyadicBump, 3).unwrap();
        let (kern, warn) = crate::lattice_fn::idft(&m).unwrap();
        assert!(warn.is_none());
        let table = ScaleTable::build(&map, &k, &DyadicBump, 3).unwrap();
        let mut oracle: HashMap<Vec<i64>, f64> = HashMap::new();
        for (s, w) in table.shifts.iter().zip(&table.weights) {
            *oracle.entry(s.iter().map(|v| -v).collect()).or_default() += w;
        }
        for (i, v) in kern.values().iter().enumerate() {
            let x = kern.domain().point(i);
            let want = oracle.get(&x).copied().unwrap_or(0.0);
            assert!((v - want).norm() < 1e-12, "{x:?}");
        }
    }

    #[test]
    fn main_term_on_arc_is_single_product() {
        let params = exploratory(0.5, 0.35);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let j = 6;
        let af = frac(1, 3);
        let k = af.shell();
        assert!(k as f64 <= j as f64 * params.delta_prime());
        let w = params.arc_widths(&[3], j)[0];
        for off in [0.0, 0.3 * w, -0.9 * w] {
            let xi = Frequency::near(&af, &[off]);
            assert!(major_arc_contains(&t3(), &params, j, &af, &xi));
            let (l, _) = dec.l_jk_at(j, k, &xi).unwrap();
            let want = weyl_sum(&t3(), &af).unwrap() * dec.phi(j, &[off]).unwrap().value;
            assert!((l - want).norm() < 1e-15);
        }
    }

    #[test]
    fn shell_one_has_one_active_fraction() {
        let params = exploratory(0.5, 0.35);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let n = 1 << 12;
        for i in 0..n {
            let xi = Frequency::rational(vec![i], vec![n as u64]).unwrap();
            let act = dec.active_in_shell(1, &xi).unwrap();
            if let Some(a) = act {
                assert_eq!(a.fraction, ReducedFraction::zero(1));
            }
        }
    }

    #[test]
    fn empty_main_term_when_j_delta_prime_below_one() {
        let params = exploratory(0.3, 0.02);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let j = 6;
        let grid = FrequencyGrid::Window { center: Frequency::real(&[0.0]), step: vec![1e-6], radius: 20 };
        let l = dec.main_term(MainTermVariant::Lj, j, &grid).unwrap();
        assert!(l.values.iter().all(|v| *v == Complex64::default()));
        let rep = dec.error_e_j(j, &FrequencyGrid::Window {
            center: Frequency::real(&[0.0]),
            step: vec![dec.narrowest_arc(j) / 4.0],
            radius: 20,
        })
        .unwrap();
        for (e, p) in rep.e.values.iter().zip(&rep.e.points) {
            assert_eq!(*e, dec.m_at(j, p).unwrap());
        }
    }

    #[test]
    fn error_grid_must_resolve_arcs() {
        let params = exploratory(0.3, 0.02);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let grid = FrequencyGrid::Uniform { n: vec![1 << 10] };
        assert!(matches!(dec.error_e_j(6, &grid), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn e_j_identity_and_ceiling() {
        let params = exploratory(0.5, 0.35);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let j = 6;
        let fracs: Vec<_> = (1..=4).flat_map(|q| fractions_with_denominator(1, q)).collect();
        let widths = params.arc_widths(&[3], j);
        let grid = FrequencyGrid::around_arcs(&fracs, &widths, 4, 12);
        let rep = dec.error_e_j(j, &grid).unwrap();
        assert!(rep.identity_defect <= 1e-12);
        assert!(rep.sup() <= rep.sup_m + rep.sup_l + 1e-12);
        assert!(rep.sup_l > 0.0);
    }

    #[test]
    fn approximation_error_at_origin() {
        let params = exploratory(0.3, 0.02);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let z = ReducedFraction::zero(1);
        let rep = dec.approximation_error(6, &z, &[Frequency::real(&[0.0])]).unwrap();
        assert!(rep.max_deviation < 1e-8);
        let w = dec.narrowest_arc(8);
        let samples: Vec<Frequency> = (-8..=8).map(|i| Frequency::real(&[i as f64 * w / 8.0])).collect();
        let rep = dec.approximation_error(8, &z, &samples).unwrap();
        assert!(rep.max_main_term <= dec.integrator(8).unwrap().l1_mass() * (1.0 + 1e-9));
        assert!(dec.approximation_error(8, &z, &[Frequency::real(&[2.0 * w])]).is_err());
    }

    #[test]
    fn off_arc_check_rejects_on_arc_samples() {
        let params = exploratory(0.3, 0.02);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let z = ReducedFraction::zero(1);
        let w = dec.narrowest_arc(7);
        assert!(dec.off_arc_phi_bound_check(7, &z, &[Frequency::real(&[0.5 * w])]).is_err());
        let rep = dec.off_arc_phi_bound_check(7, &z, &[Frequency::real(&[1.01 * w])]).unwrap();
        assert!(rep.ratio.is_finite() && rep.max_modulus <= rep.ceiling);
    }

    #[test]
    fn minor_arc_kernel_matches_annulus_when_main_term_is_empty() {
        let params = exploratory(0.3, 0.02);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let rep = dec.minor_arc_kernel(3, None, 1).unwrap();
        let table = ScaleTable::build(&t3(), &CZKernel::half_hilbert(), &DyadicBump, 3).unwrap();
        for (y, w) in table.points.iter().zip(&table.weights) {
            let x = -y[0].pow(3);
            assert!((rep.kernel.get(&[x]) - w).norm() < 1e-12);
        }
        assert!(rep.zero_frequency_defect < 1e-8);
    }

    #[test]
    fn minor_arc_kernel_zero_frequency_with_main_term() {
        let params = exploratory(0.5, 0.35);
        let dec = Decomposition::new(t3(), CZKernel::half_hilbert(), DyadicBump, params).unwrap();
        let rep = dec.minor_arc_kernel(3, None, 2).unwrap();
        assert!(rep.zero_frequency_defect < 1e-8);
        assert!(rep.converged);
    }

    #[test]
    fn region_examples() {
        let p = t3();
        let half = parse_rational("1/2").unwrap();
        let v = proven_region(&p, &parse_rational("0.06").unwrap(), &half, &half, EpsProvenance::Supplied).unwrap();
        assert!(v.in_omega_m && v.major_condition_ok);
        assert_eq!(v.n_p, 12);
        assert_eq!(v.boundary, "201/400");
        let v = proven_region(&p, &parse_rational("0.06").unwrap(), &parse_rational("0.503").unwrap(), &half, EpsProvenance::Supplied)
            .unwrap();
        assert!(!v.in_omega_m);
        let b = parse_rational("201/400").unwrap();
        let v = proven_region(&p, &parse_rational("0.06").unwrap(), &b, &half, EpsProvenance::Supplied).unwrap();
        assert!(!v.in_omega_m);
        assert_eq!(reciprocal_exponent("2").unwrap(), half);
        assert_eq!(reciprocal_exponent("inf").unwrap(), BigRational::zero());
        assert!(reciprocal_exponent("0.5").is_err());
        assert!(parse_rational("1.2.3").is_err());
        assert!(proven_region(&p, &BigRational::zero(), &half, &half, EpsProvenance::Supplied).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weyl_modulus_at_most_one(q in 1u64..300, a in any::<u64>()) {
            for p in [t3(), PolynomialMap::monomial(4)] {
                let a = a % q;
                if let Ok(af) = ReducedFraction::new(vec![a], q) {
                    prop_assert!(weyl_sum(&p, &af).unwrap().norm() <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn offsets_round_trip(a in 1u64..96, off in -1e-3f64..1e-3) {
            let af = ReducedFraction::new(vec![a], 97).unwrap();
            let xi = Frequency::near(&af, &[off]);
            let back = xi.offset_from(&af);
            prop_assert!((back[0] - off).abs() < 1e-18);
            let other = ReducedFraction::new(vec![(a + 1) % 97], 97).unwrap();
            prop_assert!((xi.offset_from(&other)[0] - (off - 1.0 / 97.0)).abs() < 1e-15);
        }
    }
}
