//! Integer polynomial mappings `P: Z^d -> Z^n` and the anisotropic geometry
//! they induce (the gauge `rho`, P-cubes, dilations).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// A polynomial mapping with integer coefficients and no constant term.
///
/// Terms are kept sorted lexicographically by multiindex, with duplicate
/// multiindices merged and zero coefficient vectors dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolyJson", into = "PolyJson")]
pub struct PolynomialMap {
    d: usize,
    n: usize,
    terms: Vec<(Vec<u32>, Vec<i64>)>,
    degrees: Vec<u32>,
    d_star: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyJson {
    d: usize,
    n: usize,
    coeffs: Vec<TermJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermJson {
    alpha: Vec<u32>,
    c: Vec<i64>,
}

impl TryFrom<PolyJson> for PolynomialMap {
    type Error = Error;
    fn try_from(raw: PolyJson) -> Result<Self> {
        PolynomialMap::new(raw.d, raw.n, raw.coeffs.into_iter().map(|t| (t.alpha, t.c)))
    }
}

impl From<PolynomialMap> for PolyJson {
    fn from(p: PolynomialMap) -> Self {
        PolyJson {
            d: p.d,
            n: p.n,
            coeffs: p.terms.into_iter().map(|(alpha, c)| TermJson { alpha, c }).collect(),
        }
    }
}

impl PolynomialMap {
    pub fn new<I>(d: usize, n: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, Vec<i64>)>,
    {
        if d == 0 || n == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let mut table: BTreeMap<Vec<u32>, Vec<i64>> = BTreeMap::new();
        for (alpha, c) in terms {
            dim_check(d, alpha.len())?;
            dim_check(n, c.len())?;
            if alpha.iter().all(|&a| a == 0) {
                if c.iter().any(|&v| v != 0) {
                    return Err(Error::InvalidArgument(
                        "constant term must vanish (P(0) = 0)".into(),
                    ));
                }
                continue;
            }
            let slot = table.entry(alpha).or_insert_with(|| vec![0; n]);
            for (s, v) in slot.iter_mut().zip(&c) {
                *s = s
                    .checked_add(*v)
                    .ok_or_else(|| Error::Overflow("merging coefficients".into()))?;
            }
        }
        table.retain(|_, c| c.iter().any(|&v| v != 0));

        let mut degrees = vec![0u32; n];
        let mut d_star = 0;
        for (alpha, c) in &table {
            let total: u32 = alpha.iter().sum();
            for (deg, &v) in degrees.iter_mut().zip(c) {
                if v != 0 {
                    *deg = (*deg).max(total);
                }
            }
            d_star = d_star.max(*alpha.iter().max().unwrap());
        }
        if let Some(i) = degrees.iter().position(|&g| g == 0) {
            return Err(Error::InvalidArgument(format!("component {i} is identically zero")));
        }
        Ok(Self { d, n, terms: table.into_iter().collect(), degrees, d_star })
    }

    /// `t -> t^k` on `Z`.
    pub fn monomial(k: u32) -> Self {
        Self::curve(&[k])
    }

    /// `t -> (t^{k_1}, ..., t^{k_n})` on `Z`.
    pub fn curve(ks: &[u32]) -> Self {
        let n = ks.len();
        let terms = ks.iter().enumerate().map(|(i, &k)| {
            let mut c = vec![0; n];
            c[i] = 1;
            (vec![k], c)
        });
        Self::new(1, n, terms).expect("monomial curve with positive exponents")
    }

    /// The moment curve `(t, t^2, ..., t^k)`.
    pub fn moment(k: u32) -> Self {
        Self::curve(&(1..=k).collect::<Vec<_>>())
    }

    /// Every monomial `t^alpha` with `1 <= |alpha| <= deg` on `Z^d`, one per
    /// component, ordered by total degree then lexicographically descending.
    pub fn universal(d: usize, deg: u32) -> Result<Self> {
        if d == 0 || deg == 0 {
            return Err(Error::InvalidArgument("need d >= 1 and degree >= 1".into()));
        }
        let mut alphas = Vec::new();
        for total in 1..=deg {
            let mut a = vec![0u32; d];
            collect_compositions(&mut a, 0, total, &mut alphas);
        }
        let n = alphas.len();
        Self::new(
            d,
            n,
            alphas.into_iter().enumerate().map(|(i, a)| {
                let mut c = vec![0; n];
                c[i] = 1;
                (a, c)
            }),
        )
    }

    pub fn dim_domain(&self) -> usize {
        self.d
    }

    pub fn dim_range(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[(Vec<u32>, Vec<i64>)] {
        &self.terms
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    /// `max_i D_i`, the total degree of `P`.
    pub fn degree(&self) -> u32 {
        *self.degrees.iter().max().unwrap()
    }

    /// Largest single-variable exponent among nonzero terms.
    pub fn d_star(&self) -> u32 {
        self.d_star
    }

    pub fn is_odd(&self) -> bool {
        self.terms.iter().all(|(a, _)| a.iter().sum::<u32>() % 2 == 1)
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        dim_check(self.d, other.d)?;
        dim_check(self.n, other.n)?;
        Self::new(self.d, self.n, self.terms.iter().chain(&other.terms).cloned())
    }

    /// Exact evaluation; overflow of `i64` anywhere along the way is an error.
    pub fn evaluate(&self, t: &[i64]) -> Result<Vec<i64>> {
        dim_check(self.d, t.len())?;
        let overflow = || Error::Overflow(format!("evaluating P at {t:?}"));
        let mut out = vec![0i128; self.n];
        for (alpha, c) in &self.terms {
            let mut mono: i128 = 1;
            for (&ti, &ai) in t.iter().zip(alpha) {
                let p = (ti as i128).checked_pow(ai).ok_or_else(overflow)?;
                mono = mono.checked_mul(p).ok_or_else(overflow)?;
            }
            for (o, &ci) in out.iter_mut().zip(c) {
                let term = mono.checked_mul(ci as i128).ok_or_else(overflow)?;
                *o = o.checked_add(term).ok_or_else(overflow)?;
            }
        }
        out.into_iter().map(|v| i64::try_from(v).map_err(|_| overflow())).collect()
    }

    pub fn evaluate_real(&self, t: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (alpha, c) in &self.terms {
            let mono: f64 = t.iter().zip(alpha).map(|(&x, &a)| x.powi(a as i32)).product();
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += ci as f64 * mono;
            }
        }
        out
    }

    /// Gradient in `t` of the scalar phase `P(t) . eta`.
    pub fn phase_gradient(&self, t: &[f64], eta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for (alpha, c) in &self.terms {
            let w: f64 = c.iter().zip(eta).map(|(&ci, &e)| ci as f64 * e).sum();
            if w == 0.0 {
                continue;
            }
            for k in 0..self.d {
                if alpha[k] == 0 {
                    continue;
                }
                let mut m = alpha[k] as f64 * w;
                for (l, (&x, &a)) in t.iter().zip(alpha).enumerate() {
                    let e = if l == k { a - 1 } else { a };
                    m *= x.powi(e as i32);
                }
                g[k] += m;
            }
        }
        g
    }

    /// `P(t) mod q`, componentwise in `[0, q)`, with no intermediate overflow.
    pub fn evaluate_mod(&self, t: &[i64], q: u64) -> Vec<u64> {
        assert!(q > 0);
        let q128 = q as u128;
        let red = |v: i64| (v as i128).rem_euclid(q as i128) as u128;
        let tr: Vec<u128> = t.iter().map(|&x| red(x)).collect();
        let mut out = vec![0u128; self.n];
        for (alpha, c) in &self.terms {
            let mut mono = 1u128 % q128;
            for (&x, &a) in tr.iter().zip(alpha) {
                for _ in 0..a {
                    mono = mono * x % q128;
                }
            }
            for (o, &ci) in out.iter_mut().zip(c) {
                *o = (*o + mono * red(ci)) % q128;
            }
        }
        out.into_iter().map(|v| v as u64).collect()
    }

    /// Condition (C): each component has a top-degree term whose coefficient
    /// vector is exactly the matching unit vector.
    pub fn check_condition_c(&self) -> ConditionC {
        let witnesses: Vec<Option<Vec<u32>>> = (0..self.n)
            .map(|i| {
                self.terms
                    .iter()
                    .find(|(alpha, c)| {
                        alpha.iter().sum::<u32>() == self.degrees[i]
                            && c.iter().enumerate().all(|(l, &v)| v == i64::from(l == i))
                    })
                    .map(|(alpha, _)| alpha.clone())
            })
            .collect();
        ConditionC { holds: witnesses.iter().all(Option::is_some), witnesses }
    }

    /// Searches a real grid for a violation of `|P(t)| >= |t|^beta` on the
    /// annulus `l0 <= |t| <= radius`.
    ///
    /// This can only ever falsify the coercivity condition: finding nothing is
    /// not a proof, since the condition quantifies over all large `|t|`.
    pub fn probe_condition_l(
        &self,
        beta: f64,
        l0: f64,
        radius: f64,
        grid_step: f64,
    ) -> Result<LVerdict> {
        if !(beta > 0.0) || !(l0 > 0.0) || !(grid_step > 0.0) {
            return Err(Error::InvalidArgument("beta, L0 and grid_step must be positive".into()));
        }
        if radius < l0 {
            return Err(Error::InvalidArgument("sampling radius must be at least L0".into()));
        }
        let m = (radius / grid_step).floor() as i64;
        let side = (2 * m + 1) as u128;
        let needed = side.pow(self.d as u32);
        const BUDGET: u128 = 1 << 32;
        if needed > BUDGET {
            return Err(Error::BudgetExceeded { what: "grid probe".into(), needed, budget: BUDGET });
        }
        let mut idx = vec![-m; self.d];
        let mut t = vec![0.0; self.d];
        let mut checked = 0u64;
        loop {
            for (x, &k) in t.iter_mut().zip(&idx) {
                *x = k as f64 * grid_step;
            }
            let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm >= l0 && norm <= radius {
                checked += 1;
                let p = self.evaluate_real(&t);
                let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                let bound = norm.powf(beta);
                if pn < bound {
                    return Ok(LVerdict::Counterexample { t, value: pn, bound, checked });
                }
            }
            if !odometer(&mut idx, -m, m) {
                break;
            }
        }
        Ok(LVerdict::NoCounterexampleFound { checked })
    }

    /// `rho(x) = max_i |x_i|^{1/D_i}`, exact when `|x_i|` is a perfect power.
    pub fn rho(&self, x: &[i64]) -> f64 {
        rho_with(&self.degrees, x)
    }
}

pub fn rho_with(degrees: &[u32], x: &[i64]) -> f64 {
    x.iter()
        .zip(degrees)
        .map(|(&v, &deg)| int_root(v.unsigned_abs(), deg))
        .fold(0.0, f64::max)
}

fn int_root(v: u64, deg: u32) -> f64 {
    if deg == 1 || v <= 1 {
        return v as f64;
    }
    let r = (v as f64).powf(1.0 / deg as f64);
    let k = r.round() as u64;
    if k.checked_pow(deg) == Some(v) {
        k as f64
    } else {
        r
    }
}

/// Row-major multi-index increment over `[lo, hi]^len`; false on wraparound.
pub(crate) fn odometer(idx: &mut [i64], lo: i64, hi: i64) -> bool {
    for k in (0..idx.len()).rev() {
        if idx[k] < hi {
            idx[k] += 1;
            return true;
        }
        idx[k] = lo;
    }
    false
}

impl fmt::Display for PolynomialMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let comps: Vec<String> = (0..self.n)
            .map(|i| {
                let parts: Vec<String> = self
                    .terms
                    .iter()
                    .filter(|(_, c)| c[i] != 0)
                    .map(|(alpha, c)| {
                        let mono: Vec<String> = alpha
                            .iter()
                            .enumerate()
                            .filter(|(_, &a)| a > 0)
                            .map(|(k, &a)| {
                                let var = if self.d == 1 { "t".to_string() } else { format!("t{}", k + 1) };
                                if a == 1 { var } else { format!("{var}^{a}") }
                            })
                            .collect();
                        let coef = match c[i] {
                            1 => String::new(),
                            -1 => "-".into(),
                            v => format!("{v}*"),
                        };
                        format!("{coef}{}", mono.join("*"))
                    })
                    .collect();
                parts.join(" + ")
            })
            .collect();
        if self.n == 1 {
            write!(f, "{}", comps[0])
        } else {
            write!(f, "({})", comps.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConditionC {
    pub holds: bool,
    /// Lexicographically smallest witness per component, if any.
    pub witnesses: Vec<Option<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LVerdict {
    NoCounterexampleFound { checked: u64 },
    Counterexample { t: Vec<f64>, value: f64, bound: f64, checked: u64 },
}

/// An axis-parallel box in `Z^n` carrying an anisotropic sidelength.
///
/// Stored as lower corner plus side cardinalities so that even-sized dyadic
/// children are representable; the center is `lo + (len - 1) / 2`
/// (floor division).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCube {
    lo: Vec<i64>,
    len: Vec<u64>,
    sidelength: f64,
    degrees: Vec<u32>,
}

impl PCube {
    /// Cube with side cardinalities `round(l^{D_i})` (at least 1) around `center`.
    pub fn centered(degrees: &[u32], center: &[i64], sidelength: f64) -> Result<Self> {
        dim_check(degrees.len(), center.len())?;
        if !(sidelength > 0.0) {
            return Err(Error::InvalidArgument("sidelength must be positive".into()));
        }
        let len: Vec<u64> = degrees
            .iter()
            .map(|&deg| sidelength.powi(deg as i32).round().max(1.0) as u64)
            .collect();
        let lo = center.iter().zip(&len).map(|(&c, &l)| c - ((l - 1) / 2) as i64).collect();
        Ok(Self { lo, len, sidelength, degrees: degrees.to_vec() })
    }

    pub fn from_corner(degrees: &[u32], lo: Vec<i64>, len: Vec<u64>, sidelength: f64) -> Result<Self> {
        dim_check(degrees.len(), lo.len())?;
        dim_check(degrees.len(), len.len())?;
        if len.contains(&0) {
            return Err(Error::InvalidArgument("empty cube".into()));
        }
        Ok(Self { lo, len, sidelength, degrees: degrees.to_vec() })
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn len(&self) -> &[u64] {
        &self.len
    }

    /// Inclusive upper corner.
    pub fn hi(&self) -> Vec<i64> {
        self.lo.iter().zip(&self.len).map(|(&a, &l)| a + l as i64 - 1).collect()
    }

    pub fn sidelength(&self) -> f64 {
        self.sidelength
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<i64> {
        self.lo.iter().zip(&self.len).map(|(&a, &l)| a + ((l - 1) / 2) as i64).collect()
    }

    pub fn half_extents(&self) -> Vec<u64> {
        self.len.iter().map(|&l| l / 2).collect()
    }

    pub fn volume(&self) -> u128 {
        self.len.iter().map(|&l| l as u128).product()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.lo).zip(&self.len).all(|((&v, &a), &l)| v >= a && v < a + l as i64)
    }

    /// The smallest P-cube with the same center and sidelength `2^nu l`.
    pub fn dilate(&self, nu: u32) -> Self {
        (0..nu).fold(self.clone(), |q, _| q.double())
    }

    fn double(&self) -> Self {
        let l2 = 2.0 * self.sidelength;
        let center = self.center();
        let len: Vec<u64> = self
            .degrees
            .iter()
            .zip(&self.len)
            .map(|(&deg, &old)| {
                let target = l2.powi(deg as i32);
                let c = (target * (1.0 - 1e-12)).ceil().max(1.0) as u64;
                c.max(old + 1)
            })
            .collect();
        let lo = center.iter().zip(&len).map(|(&c, &l)| c - ((l - 1) / 2) as i64).collect();
        Self { lo, len, sidelength: l2, degrees: self.degrees.clone() }
    }

    /// Every lattice point, row-major (last axis fastest).
    pub fn points(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        let total = self.volume() as usize;
        (0..total).map(move |mut lin| {
            let mut p = vec![0; self.dim()];
            for k in (0..self.dim()).rev() {
                let l = self.len[k] as usize;
                p[k] = self.lo[k] + (lin % l) as i64;
                lin /= l;
            }
            p
        })
    }
}

fn collect_compositions(a: &mut Vec<u32>, k: usize, left: u32, out: &mut Vec<Vec<u32>>) {
    if k + 1 == a.len() {
        a[k] = left;
        out.push(a.clone());
        return;
    }
    for v in (0..=left).rev() {
        a[k] = v;
        collect_compositions(a, k + 1, left - v, out);
    }
}

/// Built-in maps: `t^k` (k <= 5), `(t, t^k)`, moment curves and the
/// universal families for `d <= 2`, degree `<= 3`.
pub fn fixtures() -> Vec<(String, PolynomialMap)> {
    let mut out = Vec::new();
    for k in 1..=5 {
        out.push((format!("t{k}"), PolynomialMap::monomial(k)));
    }
    for k in 2..=5 {
        out.push((format!("curve_1_{k}"), PolynomialMap::curve(&[1, k])));
    }
    for k in 2..=4 {
        out.push((format!("moment_{k}"), PolynomialMap::moment(k)));
    }
    for d in 1..=2 {
        for deg in 1..=3 {
            out.push((format!("universal_d{d}_deg{deg}"), PolynomialMap::universal(d, deg).expect("small family")));
        }
    }
    out
}

/// Looks a fixture up by name.
pub fn fixture(name: &str) -> Result<PolynomialMap> {
    fixtures()
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown map `{name}`")))
}
