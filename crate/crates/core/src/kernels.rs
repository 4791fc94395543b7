//! Calderón–Zygmund kernels, the dyadic bump `psi` and the pieces
//! `K_j = psi(2^{-j} .) K`.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::Neumaier;

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`, equal to
/// `phi(t) / (phi(t) + phi(1 - t))` with `phi(t) = exp(-1/t)` in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        // Same quotient, rewritten to avoid 0/0 near the endpoints.
        1.0 / (1.0 + (1.0 / t - 1.0 / (1.0 - t)).exp())
    }
}

/// Plateau profile: 1 on `|x| <= 1`, 0 on `|x| >= 2`. Also used as the
/// frequency cutoff on major arcs.
pub fn theta(radius: f64) -> f64 {
    smooth_step(2.0 - radius)
}

/// The fixed dyadic bump `psi(x) = theta(|x|) - theta(2|x|)`, supported in
/// `1/2 <= |x| <= 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicBump;

impl DyadicBump {
    pub fn radial(&self, r: f64) -> f64 {
        theta(r) - theta(2.0 * r)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.radial(norm(x))
    }

    /// `psi(2^{-j} |y|)`.
    pub fn at_scale(&self, j: i32, r: f64) -> f64 {
        self.radial(r * (2f64).powi(-j))
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelShape {
    /// `1/y` on `R`.
    OneOverY,
    /// `sign(y) / |y|^power` on `R`.
    SignOverAbsPow { power: f64 },
    /// `y_i / |y|^{d+1}` on `R^d`.
    Riesz { dim: usize, component: usize },
}

/// A kernel together with the scalar it has been multiplied by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CZKernel {
    shape: KernelShape,
    scale: f64,
}

impl CZKernel {
    pub fn new(shape: KernelShape, scale: f64) -> Result<Self> {
        match shape {
            KernelShape::SignOverAbsPow { power } if !(power >= 1.0) => {
                return Err(Error::InvalidArgument("power must be at least 1".into()))
            }
            KernelShape::Riesz { dim, component } if dim == 0 || component >= dim => {
                return Err(Error::InvalidArgument("riesz component out of range".into()))
            }
            _ => {}
        }
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::InvalidArgument("kernel scale must be finite and nonzero".into()));
        }
        Ok(Self { shape, scale })
    }

    pub fn one_over_y() -> Self {
        Self { shape: KernelShape::OneOverY, scale: 1.0 }
    }

    /// `1/(2y)`: the unit-normalized discrete half Hilbert kernel.
    pub fn half_hilbert() -> Self {
        Self { shape: KernelShape::OneOverY, scale: 0.5 }
    }

    pub fn riesz(dim: usize, component: usize) -> Result<Self> {
        Self::new(KernelShape::Riesz { dim, component }, 1.0)
    }

    /// Registry lookup: `one_over_y`, `sign_y_over_abs_pow` or
    /// `sign_y_over_abs_pow(p)`, `riesz_component(i)` (with `dim` from the map).
    pub fn from_name(name: &str, dim: usize) -> Result<Self> {
        let name = name.trim();
        let arg = |prefix: &str| -> Option<&str> {
            name.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')').map(str::trim)
        };
        let bad = || Error::InvalidArgument(format!("unknown kernel `{name}`"));
        if name == "one_over_y" {
            return Self::new(KernelShape::OneOverY, 1.0);
        }
        if name == "half_hilbert" {
            return Ok(Self::half_hilbert());
        }
        if name == "sign_y_over_abs_pow" {
            return Self::new(KernelShape::SignOverAbsPow { power: 1.0 }, 1.0);
        }
        if let Some(a) = arg("sign_y_over_abs_pow") {
            let power = a.parse().map_err(|_| bad())?;
            return Self::new(KernelShape::SignOverAbsPow { power }, 1.0);
        }
        if let Some(a) = arg("riesz_component") {
            let component = a.parse().map_err(|_| bad())?;
            return Self::riesz(dim, component);
        }
        Err(bad())
    }

    pub fn registry() -> &'static [&'static str] {
        &["one_over_y", "half_hilbert", "sign_y_over_abs_pow", "sign_y_over_abs_pow(p)", "riesz_component(i)"]
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        match self.shape {
            KernelShape::OneOverY | KernelShape::SignOverAbsPow { .. } => 1,
            KernelShape::Riesz { dim, .. } => dim,
        }
    }

    pub fn is_odd(&self) -> bool {
        true
    }

    pub fn descriptor(&self) -> String {
        self.to_string()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { shape: self.shape, scale: self.scale * factor }
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: y.len() });
        }
        if y.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("kernel is singular at the origin".into()));
        }
        Ok(self.eval_unchecked(y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, y: &[f64]) -> f64 {
        let v = match self.shape {
            KernelShape::OneOverY => 1.0 / y[0],
            KernelShape::SignOverAbsPow { power } => y[0].signum() / y[0].abs().powf(power),
            KernelShape::Riesz { dim, component } => y[component] / norm(y).powi(dim as i32 + 1),
        };
        self.scale * v
    }

    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.eval(y)?;
        let g = match self.shape {
            KernelShape::OneOverY => vec![-1.0 / (y[0] * y[0])],
            KernelShape::SignOverAbsPow { power } => vec![-power / y[0].abs().powf(power + 1.0)],
            KernelShape::Riesz { dim, component } => {
                let r = norm(y);
                let p = dim as f64 + 1.0;
                (0..dim)
                    .map(|k| {
                        let delta = if k == component { 1.0 } else { 0.0 };
                        delta / r.powf(p) - p * y[component] * y[k] / r.powf(p + 2.0)
                    })
                    .collect()
            }
        };
        Ok(g.into_iter().map(|v| v * self.scale).collect())
    }

    /// The kernel rescaled by the factor `verify_cz_bounds` asks for.
    pub fn normalized(&self, budget: usize) -> (Self, CzReport) {
        let report = verify_cz_bounds(self, budget);
        (self.scaled(report.normalization_factor), report)
    }
}

impl fmt::Display for CZKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.shape {
            KernelShape::OneOverY => "one_over_y".to_string(),
            KernelShape::SignOverAbsPow { power } => format!("sign_y_over_abs_pow({power})"),
            KernelShape::Riesz { dim, component } => format!("riesz_component({component}) on R^{dim}"),
        };
        if self.scale == 1.0 {
            write!(f, "{base}")
        } else {
            write!(f, "{}*{base}", self.scale)
        }
    }
}

/// `K_j(y) = psi(2^{-j} y) K(y)`; zero off the annulus `2^{j-1} <= |y| <= 2^{j+1}`.
pub fn kj_eval(kernel: &CZKernel, psi: &DyadicBump, j: i32, y: &[f64]) -> Result<f64> {
    let k = kernel.eval(y)?;
    let w = psi.at_scale(j, norm(y));
    Ok(if w == 0.0 { 0.0 } else { w * k })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzReport {
    /// `max |y|^d |K(y)| + |y|^{d+1} |grad K(y)|` over the samples.
    pub size_max: f64,
    pub size_argmax: Vec<f64>,
    /// `max |int_{1 <= |y| <= lambda} K|` over sampled `lambda`.
    pub cancellation_max: f64,
    pub cancellation_argmax: f64,
    /// `1 / max(size_max, cancellation_max)` when that exceeds one, else 1.
    pub normalization_factor: f64,
    pub samples: usize,
}

impl CzReport {
    pub fn passes(&self) -> bool {
        self.size_max <= 1.0 + 1e-12 && self.cancellation_max <= 1.0 + 1e-12
    }
}

const MAX_RADIUS: f64 = 1048576.0;

/// Samples the size/gradient bound and the truncated cancellation integrals.
///
/// Radii are log-spaced on `[1, 2^20]`; in two dimensions each radius is
/// paired with equally spaced angles.
pub fn verify_cz_bounds(kernel: &CZKernel, budget: usize) -> CzReport {
    let d = kernel.dim();
    let budget = budget.max(64);
    let (n_r, n_theta) = match d {
        1 => (budget / 2, 1),
        _ => {
            // Angles in multiples of 4 so both axes are sampled exactly.
            let a = ((budget as f64).sqrt() as usize).max(8);
            (a, 4 * a.div_ceil(4))
        }
    };
    let mut size_max = 0.0;
    let mut size_argmax = vec![0.0; d];
    let mut directions: Vec<Vec<f64>> = Vec::new();
    match d {
        1 => directions.extend([vec![1.0], vec![-1.0]]),
        2 => {
            for k in 0..n_theta {
                let a = TAU * k as f64 / n_theta as f64;
                directions.push(vec![a.cos(), a.sin()]);
            }
        }
        _ => {
            for k in 0..d {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; d];
                    e[k] = s;
                    directions.push(e);
                }
                let diag = vec![1.0 / (d as f64).sqrt(); d];
                directions.push(diag);
            }
        }
    }
    let ln_max = MAX_RADIUS.ln();
    for i in 0..n_r {
        let r = (ln_max * i as f64 / (n_r - 1) as f64).exp();
        for u in &directions {
            let y: Vec<f64> = u.iter().map(|v| v * r).collect();
            let k = kernel.eval_unchecked(&y);
            let g = norm(&kernel.gradient(&y).expect("nonzero sample"));
            let s = r.powi(d as i32) * k.abs() + r.powi(d as i32 + 1) * g;
            if s > size_max {
                size_max = s;
                size_argmax = y;
            }
        }
    }

    // Cancellation in logarithmic radius: int K = int_0^{ln lambda} A(e^u) e^{du} du,
    // A(r) the angular integral of K on the unit sphere scaled to radius r.
    let angular = |r: f64| -> f64 {
        match d {
            1 => kernel.eval_unchecked(&[r]) + kernel.eval_unchecked(&[-r]),
            2 => {
                let m = 4 * n_theta.max(16);
                let mut acc = Neumaier::default();
                for k in 0..m {
                    let a = TAU * k as f64 / m as f64;
                    acc.add(kernel.eval_unchecked(&[r * a.cos(), r * a.sin()]));
                }
                acc.value() * TAU / m as f64
            }
            _ => directions.iter().map(|u| {
                let y: Vec<f64> = u.iter().map(|v| v * r).collect();
                kernel.eval_unchecked(&y)
            }).sum::<f64>() / directions.len() as f64 * sphere_area(d),
        }
    };
    let steps = 2 * (n_r.max(32) / 2);
    let h = ln_max / steps as f64;
    let integrand = |u: f64| {
        let r = u.exp();
        angular(r) * r.powi(d as i32)
    };
    let mut cancellation_max = 0.0;
    let mut cancellation_argmax = 1.0;
    let mut acc = Neumaier::default();
    let mut prev = integrand(0.0);
    for s in 0..steps / 2 {
        let u0 = 2.0 * s as f64 * h;
        let mid = integrand(u0 + h);
        let end = integrand(u0 + 2.0 * h);
        acc.add(h / 3.0 * (prev + 4.0 * mid + end));
        prev = end;
        let val = acc.value().abs();
        if val > cancellation_max {
            cancellation_max = val;
            cancellation_argmax = (u0 + 2.0 * h).exp();
        }
    }

    let worst = size_max.max(cancellation_max);
    CzReport {
        size_max,
        size_argmax,
        cancellation_max,
        cancellation_argmax,
        normalization_factor: if worst > 1.0 { 1.0 / worst } else { 1.0 },
        samples: n_r * directions.len(),
    }
}

fn sphere_area(d: usize) -> f64 {
    // 2 pi^{d/2} / Gamma(d/2) via the recursion S_{d} = 2 pi S_{d-2} / (d - 2).
    match d {
        1 => 2.0,
        2 => TAU,
        _ => TAU * sphere_area(d - 2) / (d as f64 - 2.0),
    }
}

/// `int_{R^d} |K_j|` by quadrature in polar coordinates (`d <= 2`).
pub fn kj_l1_norm(kernel: &CZKernel, psi: &DyadicBump, j: i32) -> f64 {
    let d = kernel.dim();
    let (lo, hi) = ((2f64).powi(j - 1), (2f64).powi(j + 1));
    let n = 4000;
    let h = (hi.ln() - lo.ln()) / n as f64;
    let mut acc = Neumaier::default();
    for s in 0..=n {
        let u = lo.ln() + s as f64 * h;
        let r = u.exp();
        let w = if s == 0 || s == n { 0.5 } else { 1.0 };
        let ang = match d {
            1 => kernel.eval_unchecked(&[r]).abs() + kernel.eval_unchecked(&[-r]).abs(),
            _ => {
                let m = 256;
                (0..m)
                    .map(|k| {
                        let a = TAU * k as f64 / m as f64;
                        kernel.eval_unchecked(&[r * a.cos(), r * a.sin()]).abs()
                    })
                    .sum::<f64>()
                    * TAU
                    / m as f64
            }
        };
        acc.add(w * h * psi.radial(r / (2f64).powi(j)) * ang * r.powi(d as i32));
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bump_support_and_range() {
        let psi = DyadicBump;
        assert_eq!(psi.radial(0.5), 0.0);
        assert_eq!(psi.radial(2.0), 0.0);
        assert_eq!(psi.radial(0.3), 0.0);
        assert_eq!(psi.radial(5.0), 0.0);
        for k in 0..1000 {
            let r = 0.5 + 1.5 * k as f64 / 1000.0;
            let v = psi.radial(r);
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(psi.radial(1.0), 1.0);
    }

    #[test]
    fn partition_of_unity() {
        let psi = DyadicBump;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = (2f64).powf(rng.gen_range(-1.0..20.0));
            let s: f64 = (-3..=24).map(|j| psi.at_scale(j, x)).sum();
            assert!((s - 1.0).abs() <= 1e-10, "x={x} sum={s}");
        }
    }

    #[test]
    fn kj_examples() {
        let psi = DyadicBump;
        let k = CZKernel::one_over_y();
        assert_eq!(kj_eval(&k, &psi, 0, &[1.0]).unwrap(), psi.radial(1.0));
        let riesz = CZKernel::riesz(2, 0).unwrap();
        assert_eq!(kj_eval(&riesz, &psi, 5, &[600.0, 800.0]).unwrap(), 0.0);
        assert_eq!(kj_eval(&k, &psi, 5, &[1000.0]).unwrap(), 0.0);
        assert!(kj_eval(&k, &psi, 0, &[0.0]).is_err());
    }

    #[test]
    fn dyadic_pieces_telescope() {
        let psi = DyadicBump;
        let k = CZKernel::one_over_y();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let big_j = 14;
        for _ in 0..2000 {
            let y = rng.gen_range(1.0..(2f64).powi(big_j - 1)) * if rng.gen() { 1.0 } else { -1.0 };
            let s: f64 = (0..=big_j).map(|j| kj_eval(&k, &psi, j, &[y]).unwrap()).sum();
            assert!((s - 1.0 / y).abs() <= 1e-12 / y.abs());
        }
    }

    #[test]
    fn kj_support_on_lattice() {
        let psi = DyadicBump;
        let k = CZKernel::riesz(2, 1).unwrap();
        for j in 0..=8 {
            let reach = 1 << (j + 2);
            for a in -reach..=reach {
                for b in -reach..=reach {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let y = [a as f64, b as f64];
                    let r = norm(&y);
                    let v = kj_eval(&k, &psi, j, &y).unwrap();
                    if r < (2f64).powi(j - 1) || r > (2f64).powi(j + 1) {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn half_hilbert_is_exactly_normalized() {
        let rep = verify_cz_bounds(&CZKernel::half_hilbert(), 2000);
        assert!((rep.size_max - 1.0).abs() <= 1e-14);
        assert_eq!(rep.cancellation_max, 0.0);
        assert!(rep.passes());
    }

    #[test]
    fn one_over_y_needs_half() {
        let (k, rep) = CZKernel::one_over_y().normalized(2000);
        assert!((rep.size_max - 2.0).abs() <= 1e-14);
        assert!((rep.normalization_factor - 0.5).abs() <= 1e-14);
        assert!((k.scale() - 0.5).abs() <= 1e-14);
        assert!(k.descriptor().starts_with("0.5"));
    }

    #[test]
    fn small_riesz_passes() {
        // size + gradient peaks at 1 + 2 = 3 on the axis.
        let k = CZKernel::riesz(2, 0).unwrap().scaled(0.25);
        let rep = verify_cz_bounds(&k, 4000);
        assert!(rep.passes(), "{rep:?}");
        assert!((rep.size_max - 0.75).abs() < 1e-9);
        assert!(rep.cancellation_max < 1e-9);
        let (_, rep) = CZKernel::riesz(2, 1).unwrap().normalized(4000);
        assert!((rep.normalization_factor - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn registry_names() {
        assert_eq!(CZKernel::from_name("one_over_y", 1).unwrap(), CZKernel::one_over_y());
        assert_eq!(
            CZKernel::from_name("riesz_component(1)", 2).unwrap(),
            CZKernel::riesz(2, 1).unwrap()
        );
        assert!(CZKernel::from_name("riesz_component(2)", 2).is_err());
        assert!(CZKernel::from_name("sign_y_over_abs_pow(2)", 1).is_ok());
        assert!(CZKernel::from_name("nope", 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ks = [
            CZKernel::one_over_y(),
            CZKernel::new(KernelShape::SignOverAbsPow { power: 1.5 }, 1.0).unwrap(),
            CZKernel::riesz(2, 0).unwrap(),
            CZKernel::riesz(2, 1).unwrap(),
        ];
        for k in ks {
            for _ in 0..50 {
                let y: Vec<f64> = (0..k.dim()).map(|_| rng.gen_range(1.0..5.0) * if rng.gen() { 1.0 } else { -1.0 }).collect();
                let g = k.gradient(&y).unwrap();
                for i in 0..y.len() {
                    let h = 1e-6;
                    let (mut a, mut b) = (y.clone(), y.clone());
                    a[i] += h;
                    b[i] -= h;
                    let fd = (k.eval(&a).unwrap() - k.eval(&b).unwrap()) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-6, "{k} {y:?}");
                }
            }
        }
    }

    #[test]
    fn kj_mass_is_scale_invariant() {
        let psi = DyadicBump;
        for k in [CZKernel::half_hilbert(), CZKernel::riesz(2, 0).unwrap()] {
            let masses: Vec<f64> = (3..=12).map(|j| kj_l1_norm(&k, &psi, j)).collect();
            let (lo, hi) = masses.iter().fold((f64::MAX, 0.0f64), |(a, b), &m| (a.min(m), b.max(m)));
            assert!(hi / lo <= 4.0 && lo > 0.0, "{masses:?}");
        }
    }
}
