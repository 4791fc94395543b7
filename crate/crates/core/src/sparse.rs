//! Sparse collections of P-cubes, exact sparsity certification by max-flow,
//! a stopping-time constructor and empirical sparse-domination ratios.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::lattice_fn::{local_average, BoxDomain, LatticeFunction, SampledMultiplier};
use crate::poly_map::PCube;
use crate::stats::median;
use crate::transform::{estimate_operator_norm, maximal, Convolution, NormSearch, Operator, RestrictedConvolution};

/// Default sparsity parameter.
pub const DEFAULT_SIGMA: f64 = 0.5;
/// Pinned ceiling for `<M_P f, g> / Lambda_{1,1}` over the example batches.
pub const MAXIMAL_SPARSE_CONSTANT: f64 = 16.0;
/// Pinned ceiling for the finite-support ratio, per dimension: `4^n`.
pub const FINITE_SUPPORT_CONSTANT_BASE: f64 = 4.0;
/// Largest number of cube-point incidences handed to the exact solver.
pub const MAXFLOW_EDGE_BUDGET: u128 = 1 << 23;
/// Largest root cube for the stopping-time construction.
pub const ROOT_VOLUME_BUDGET: u128 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCollection {
    sigma: f64,
    cubes: Vec<PCube>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    witnesses: Option<Vec<Vec<Vec<i64>>>>,
}

impl SparseCollection {
    pub fn new(sigma: f64, cubes: Vec<PCube>) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::InvalidArgument(format!("sigma = {sigma} outside (0, 1]")));
        }
        if let Some(first) = cubes.first() {
            if cubes.iter().any(|c| c.degrees() != first.degrees()) {
                return Err(Error::InvalidArgument("cubes with different degree vectors".into()));
            }
        }
        Ok(Self { sigma, cubes, witnesses: None })
    }

    /// Attaches witnesses after checking containment, size and disjointness.
    pub fn with_witnesses(mut self, witnesses: Vec<Vec<Vec<i64>>>) -> Result<Self> {
        check_witnesses(&self.cubes, self.sigma, &witnesses)?;
        self.witnesses = Some(witnesses);
        Ok(self)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cubes(&self) -> &[PCube] {
        &self.cubes
    }

    pub fn witnesses(&self) -> Option<&[Vec<Vec<i64>>]> {
        self.witnesses.as_deref()
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn push(&mut self, q: PCube) {
        self.witnesses = None;
        self.cubes.push(q);
    }

    pub fn total_volume(&self) -> u128 {
        self.cubes.iter().map(PCube::volume).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("collections serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: SparseCollection = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        let base = SparseCollection::new(raw.sigma, raw.cubes)?;
        match raw.witnesses {
            Some(w) => base.with_witnesses(w),
            None => Ok(base),
        }
    }
}

fn demand(q: &PCube, sigma: f64) -> u64 {
    (sigma * q.volume() as f64 - 1e-9).ceil().max(0.0) as u64
}

fn check_witnesses(cubes: &[PCube], sigma: f64, witnesses: &[Vec<Vec<i64>>]) -> Result<()> {
    dim_check(cubes.len(), witnesses.len())?;
    let mut owner: HashMap<&[i64], usize> = HashMap::new();
    for (i, (q, e)) in cubes.iter().zip(witnesses).enumerate() {
        if (e.len() as u64) < demand(q, sigma) {
            return Err(Error::InvariantViolation(format!("witness {i} has {} < sigma |Q| points", e.len())));
        }
        for x in e {
            if !q.contains(x) {
                return Err(Error::InvariantViolation(format!("witness point {x:?} outside cube {i}")));
            }
            if let Some(prev) = owner.insert(x.as_slice(), i) {
                if prev != i {
                    return Err(Error::InvariantViolation(format!("point {x:?} shared by cubes {prev} and {i}")));
                }
                return Err(Error::InvariantViolation(format!("point {x:?} repeated in witness {i}")));
            }
        }
    }
    Ok(())
}

/// `sum_Q |Q| <f>_{Q,r} <g>_{Q,s}`; `r` or `s` infinite uses sup-averages.
pub fn sparse_form(s: &SparseCollection, f: &LatticeFunction, g: &LatticeFunction, r: f64, s_exp: f64) -> Result<f64> {
    let mut acc = crate::sum::Neumaier::default();
    for q in &s.cubes {
        let a = local_average(f, q, r)?;
        if a == 0.0 {
            continue;
        }
        let b = local_average(g, q, s_exp)?;
        acc.add(q.volume() as f64 * a * b);
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MaxFlow,
    /// Greedy assignment used when the instance exceeds the exact budget.
    Heuristic,
}

/// A family `T` of cubes with `sum_T ceil(sigma |Q|) > |union_T Q|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HallViolation {
    pub cubes: Vec<usize>,
    pub demand: u64,
    pub union_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SparsityVerdict {
    Certified {
        method: Method,
        #[serde(skip)]
        witnesses: Vec<Vec<Vec<i64>>>,
    },
    Refuted {
        certificate: HallViolation,
    },
    /// The greedy fallback failed; nothing is decided.
    Inconclusive,
}

impl SparsityVerdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, SparsityVerdict::Certified { .. })
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, SparsityVerdict::Certified { method: Method::Heuristic, .. } | SparsityVerdict::Inconclusive)
    }
}

struct FlowGraph {
    head: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<u64>,
    next: Vec<usize>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

const NIL: usize = usize::MAX;

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self { head: vec![NIL; n], to: Vec::new(), cap: Vec::new(), next: Vec::new(), level: vec![0; n], iter: vec![0; n] }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: u64) -> usize {
        let id = self.to.len();
        self.to.push(v);
        self.cap.push(c);
        self.next.push(self.head[u]);
        self.head[u] = id;
        self.to.push(u);
        self.cap.push(0);
        self.next.push(self.head[v]);
        self.head[v] = id + 1;
        id
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let mut e = self.head[u];
            while e != NIL {
                let v = self.to[e];
                if self.cap[e] > 0 && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
                e = self.next[e];
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: u64) -> u64 {
        if u == t {
            return pushed;
        }
        while self.iter[u] != NIL {
            let e = self.iter[u];
            let v = self.to[e];
            if self.cap[e] > 0 && self.level[v] == self.level[u] + 1 {
                let got = self.dfs(v, t, pushed.min(self.cap[e]));
                if got > 0 {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            self.iter[u] = self.next[e];
        }
        0
    }

    /// Dinic. The recursion depth is 3 on the bipartite graphs built here.
    fn max_flow(&mut self, s: usize, t: usize) -> u64 {
        let mut flow = 0;
        while self.bfs(s, t) {
            self.iter.clone_from(&self.head);
            loop {
                let f = self.dfs(s, t, u64::MAX);
                if f == 0 {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            let mut e = self.head[u];
            while e != NIL {
                let v = self.to[e];
                if self.cap[e] > 0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
                e = self.next[e];
            }
        }
        seen
    }
}

/// Decides whether pairwise disjoint `E_Q ⊂ Q` with `|E_Q| >= ceil(sigma |Q|)`
/// exist. Exact via integral max-flow within budget, greedy otherwise.
pub fn verify_sparsity(s: &SparseCollection, sigma: f64) -> Result<SparsityVerdict> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} outside (0, 1]")));
    }
    if s.total_volume() > MAXFLOW_EDGE_BUDGET {
        return Ok(greedy_witnesses(s, sigma));
    }
    let demands: Vec<u64> = s.cubes.iter().map(|q| demand(q, sigma)).collect();
    let need: u64 = demands.iter().sum();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut incidence: Vec<Vec<usize>> = Vec::with_capacity(s.len());
    for q in &s.cubes {
        let mut row = Vec::with_capacity(q.volume() as usize);
        for x in q.points() {
            let next = index.len();
            row.push(*index.entry(x).or_insert(next));
        }
        incidence.push(row);
    }
    let m = s.len();
    let p = index.len();
    let (src, sink) = (m + p, m + p + 1);
    let mut g = FlowGraph::new(m + p + 2);
    let mut cube_edges = Vec::with_capacity(m);
    for (i, row) in incidence.iter().enumerate() {
        g.add_edge(src, i, demands[i]);
        let edges: Vec<(usize, usize)> = row.iter().map(|&pt| (pt, g.add_edge(i, m + pt, 1))).collect();
        cube_edges.push(edges);
    }
    for pt in 0..p {
        g.add_edge(m + pt, sink, 1);
    }
    let flow = g.max_flow(src, sink);
    if flow == need {
        let mut points = vec![Vec::new(); p];
        for (x, &i) in &index {
            points[i] = x.clone();
        }
        let witnesses = cube_edges
            .iter()
            .map(|edges| edges.iter().filter(|(_, e)| g.cap[*e] == 0).map(|(pt, _)| points[*pt].clone()).collect())
            .collect();
        return Ok(SparsityVerdict::Certified { method: Method::MaxFlow, witnesses });
    }
    // Min cut: cubes reachable from the source form a Hall violator.
    let seen = g.reachable(src);
    let cubes: Vec<usize> = (0..m).filter(|&i| seen[i]).collect();
    let mut union = vec![false; p];
    for &i in &cubes {
        for &pt in &incidence[i] {
            union[pt] = true;
        }
    }
    let certificate = HallViolation {
        demand: cubes.iter().map(|&i| demands[i]).sum(),
        union_size: union.iter().filter(|&&u| u).count() as u64,
        cubes,
    };
    if certificate.demand <= certificate.union_size {
        return Err(Error::InvariantViolation("min cut did not yield a Hall violator".into()));
    }
    Ok(SparsityVerdict::Refuted { certificate })
}

fn greedy_witnesses(s: &SparseCollection, sigma: f64) -> SparsityVerdict {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by_key(|&i| s.cubes[i].volume());
    let mut used: std::collections::HashSet<Vec<i64>> = std::collections::HashSet::new();
    let mut witnesses = vec![Vec::new(); s.len()];
    for i in order {
        let q = &s.cubes[i];
        let want = demand(q, sigma) as usize;
        let mut e = Vec::with_capacity(want);
        for x in q.points() {
            if e.len() == want {
                break;
            }
            if !used.contains(&x) {
                e.push(x);
            }
        }
        if e.len() < want {
            return SparsityVerdict::Inconclusive;
        }
        used.extend(e.iter().cloned());
        witnesses[i] = e;
    }
    SparsityVerdict::Certified { method: Method::Heuristic, witnesses }
}

/// `n`-dimensional summed-area table over a box, with one row of zero padding.
struct Prefix {
    lo: Vec<i64>,
    dims: Vec<usize>,
    table: Vec<f64>,
    /// Inclusion-exclusion cancels large partial sums; anything below this
    /// is rounding noise.
    tol: f64,
}

/// Relative size of the inclusion-exclusion noise floor.
const PREFIX_REL_TOL: f64 = 1e-12;

impl Prefix {
    fn new(f: &LatticeFunction, root: &BoxDomain) -> Self {
        let dims: Vec<usize> = root.shape().iter().map(|&s| s + 1).collect();
        let total: usize = dims.iter().product();
        let mut table = vec![0.0; total];
        let common = f.domain().intersect(root);
        for i in 0..common.len() {
            let x = common.point(i);
            let v = f.get(&x).norm();
            if v != 0.0 {
                let mut lin = 0;
                for k in 0..x.len() {
                    lin = lin * dims[k] + (x[k] - root.lo()[k]) as usize + 1;
                }
                table[lin] = v;
            }
        }
        let mut stride = 1;
        for k in (0..dims.len()).rev() {
            let block = stride * dims[k];
            for start in (0..total).step_by(block) {
                for off in 0..stride {
                    for i in 1..dims[k] {
                        let a = start + off + i * stride;
                        table[a] += table[a - stride];
                    }
                }
            }
            stride = block;
        }
        let tol = PREFIX_REL_TOL * table[total - 1].abs();
        Self { lo: root.lo().to_vec(), dims, table, tol }
    }

    /// Sum over the box `[lo, lo + len)`.
    fn sum(&self, lo: &[i64], len: &[u64]) -> f64 {
        let n = lo.len();
        let mut total = 0.0;
        for mask in 0..(1u32 << n) {
            let mut lin = 0;
            let mut sign = 1.0;
            for k in 0..n {
                let base = (lo[k] - self.lo[k]) as usize;
                let idx = if mask & (1 << k) != 0 {
                    base + len[k] as usize
                } else {
                    sign = -sign;
                    base
                };
                lin = lin * self.dims[k] + idx;
            }
            total += sign * self.table[lin];
        }
        if total.abs() <= self.tol {
            0.0
        } else {
            total
        }
    }
}

/// Stopping-time threshold `C_0 = 2 / (1 - sigma)`; selected cubes then
/// cover at most `(1 - sigma) |Q|` of each stopping parent.
pub fn stopping_constant(sigma: f64) -> f64 {
    2.0 / (1.0 - sigma)
}

/// Calderón–Zygmund stopping time on the anisotropic dyadic grid.
///
/// The root has side cardinalities `2^{m D_i}` with `m` minimal so that it
/// covers `supp f ∪ supp g` shifted by `shift`; each cube splits every axis
/// into `2^{D_i}` equal parts. Inside a stopping cube `Q` the maximal
/// descendants with `<|f|> > C_0 <|f|>_Q` or `<|g|> > C_0 <|g|>_Q` are
/// selected and the procedure recurses into them.
pub fn build_sparse_collection(
    degrees: &[u32],
    f: &LatticeFunction,
    g: &LatticeFunction,
    sigma: f64,
    shift: &[u64],
) -> Result<SparseCollection> {
    let n = degrees.len();
    dim_check(n, f.dim())?;
    dim_check(n, g.dim())?;
    dim_check(n, shift.len())?;
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} outside (0, 1)")));
    }
    let support = match (f.support_box(), g.support_box()) {
        (Some(a), Some(b)) => a.hull(&b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return SparseCollection::new(sigma, Vec::new()),
    };
    let mut m = 0u32;
    while (0..n).any(|k| (1u128 << (m * degrees[k])) < support.shape()[k] as u128 + shift[k] as u128) {
        m += 1;
    }
    let len: Vec<u64> = degrees.iter().map(|&d| 1u64 << (m * d)).collect();
    let volume: u128 = len.iter().map(|&l| l as u128).product();
    if volume > ROOT_VOLUME_BUDGET {
        return Err(Error::BudgetExceeded { what: "stopping-time root cube".into(), needed: volume, budget: ROOT_VOLUME_BUDGET });
    }
    let lo: Vec<i64> = support.lo().iter().zip(shift).map(|(&a, &s)| a - s as i64).collect();
    let root_box = BoxDomain::new(lo.clone(), len.iter().map(|&l| l as usize).collect())?;
    let pf = Prefix::new(f, &root_box);
    let pg = Prefix::new(g, &root_box);
    let vol = |len: &[u64]| len.iter().map(|&l| l as f64).product::<f64>();
    let c0 = stopping_constant(sigma);
    // Selection needs a margin above the noise floor so that rounding can
    // never select a cube the exact averages would not.
    let exceeds = |p: &Prefix, lo: &[i64], len: &[u64], threshold: f64| p.sum(lo, len) > threshold * vol(len) + p.tol;

    let mut cubes = Vec::new();
    let mut stops = vec![(lo, m)];
    while let Some((qlo, qm)) = stops.pop() {
        let qlen: Vec<u64> = degrees.iter().map(|&d| 1u64 << (qm * d)).collect();
        cubes.push(PCube::from_corner(degrees, qlo.clone(), qlen.clone(), (2f64).powi(qm as i32))?);
        let tf = c0 * pf.sum(&qlo, &qlen) / vol(&qlen);
        let tg = c0 * pg.sum(&qlo, &qlen) / vol(&qlen);
        let mut pending = children(degrees, &qlo, qm);
        while let Some((clo, cm)) = pending.pop() {
            let clen: Vec<u64> = degrees.iter().map(|&d| 1u64 << (cm * d)).collect();
            if exceeds(&pf, &clo, &clen, tf) || exceeds(&pg, &clo, &clen, tg) {
                stops.push((clo, cm));
            } else {
                pending.extend(children(degrees, &clo, cm));
            }
        }
    }
    SparseCollection::new(sigma, cubes)
}

fn children(degrees: &[u32], lo: &[i64], m: u32) -> Vec<(Vec<i64>, u32)> {
    if m == 0 {
        return Vec::new();
    }
    let n = degrees.len();
    let step: Vec<i64> = degrees.iter().map(|&d| 1i64 << ((m - 1) * d)).collect();
    let counts: Vec<i64> = degrees.iter().map(|&d| 1i64 << d).collect();
    let mut idx = vec![0i64; n];
    let mut out = Vec::new();
    loop {
        out.push(((0..n).map(|k| lo[k] + idx[k] * step[k]).collect(), m - 1));
        let mut k = n;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SparseRatio {
    pub numerator: f64,
    pub denominator: f64,
    /// `None` when both sides vanish.
    pub ratio: Option<f64>,
    pub cubes: usize,
    pub certified: bool,
}

/// `|<T f, g>| / Lambda^S_{r,s}(f, g)` with `S` from the stopping time.
#[allow(clippy::too_many_arguments)]
pub fn sparse_ratio(
    op: &dyn Operator,
    degrees: &[u32],
    f: &LatticeFunction,
    g: &LatticeFunction,
    r: f64,
    s: f64,
    sigma: f64,
    shift: &[u64],
) -> Result<SparseRatio> {
    let numerator = op.pairing(f, g)?.norm();
    let coll = build_sparse_collection(degrees, f, g, sigma, shift)?;
    let denominator = sparse_form(&coll, f, g, r, s)?;
    let ratio = if denominator > 0.0 {
        Some(numerator / denominator)
    } else if numerator == 0.0 {
        None
    } else {
        return Err(Error::InvariantViolation(format!(
            "sparse form vanishes while |<Tf,g>| = {numerator:e}; the root does not see the data"
        )));
    };
    let certified = verify_sparsity(&coll, sigma)?.is_certified();
    Ok(SparseRatio { numerator, denominator, ratio, cubes: coll.len(), certified })
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub defined: usize,
    pub max: f64,
    pub median: f64,
    pub max_over_median: f64,
    pub all_certified: bool,
    pub ratios: Vec<Option<f64>>,
}

impl BatchSummary {
    pub fn from_ratios(rows: &[SparseRatio]) -> Self {
        let defined: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
        let max = defined.iter().cloned().fold(0.0, f64::max);
        let med = median(&defined).unwrap_or(f64::NAN);
        Self {
            trials: rows.len(),
            defined: defined.len(),
            max,
            median: med,
            max_over_median: if med > 0.0 { max / med } else { f64::NAN },
            all_certified: rows.iter().all(|r| r.certified),
            ratios: rows.iter().map(|r| r.ratio).collect(),
        }
    }
}

/// Parallel batch of `sparse_ratio` over `(f, g)` pairs.
#[allow(clippy::too_many_arguments)]
pub fn sparse_ratio_batch(
    op: &dyn Operator,
    degrees: &[u32],
    pairs: &[(LatticeFunction, LatticeFunction)],
    r: f64,
    s: f64,
    sigma: f64,
    shift: &[u64],
) -> Result<(Vec<SparseRatio>, BatchSummary)> {
    let rows = pairs.par_iter().map(|(f, g)| sparse_ratio(op, degrees, f, g, r, s, sigma, shift)).collect::<Result<Vec<_>>>()?;
    let summary = BatchSummary::from_ratios(&rows);
    Ok((rows, summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteSupportCheck {
    pub qstar_volume: u128,
    pub norm_lower_bound: f64,
    /// `|Q_*|^{1/r + 1/s - 1} ||T_K||`.
    pub rhs: f64,
    pub ratios: Vec<Option<f64>>,
    pub max_ratio: f64,
    pub constant: f64,
    pub within_constant: bool,
    pub all_certified: bool,
}

fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// Sparse ratio of `T_K f = f * K` against `|Q_*|^{1/r+1/s-1} ||T_K||_{r -> s'}`,
/// `K` supported on the cube `Q_*` centered at the origin.
///
/// The operator norm is a lower bound: norming iteration on a box three
/// times the size of `Q_*`, and for `r = s = 2` also the sup of `|K^|` on a
/// fine grid. Either way the reported ratios can only err upward.
pub fn check_prop_finite_support(
    kernel: &LatticeFunction,
    qstar: &PCube,
    r: f64,
    s: f64,
    pairs: &[(LatticeFunction, LatticeFunction)],
    sigma: f64,
    search: NormSearch,
) -> Result<FiniteSupportCheck> {
    let n = kernel.dim();
    dim_check(qstar.dim(), n)?;
    for i in 0..kernel.domain().len() {
        if kernel.values()[i] != Complex64::default() && !qstar.contains(&kernel.domain().point(i)) {
            return Err(Error::InvalidArgument("kernel is not supported on Q_*".into()));
        }
    }
    let conv = Convolution::from_kernel(kernel);
    let qbox = BoxDomain::of_cube(qstar);
    let ext: Vec<i64> = qbox.shape().iter().map(|&l| l as i64).collect();
    let domain = qbox.expand(&ext.iter().map(|v| -v).collect::<Vec<_>>(), &ext);
    let restricted = RestrictedConvolution::full(conv.clone(), domain)?;
    let mut norm = estimate_operator_norm(&restricted, r, conjugate(s), search)?.lower_bound;
    if r == 2.0 && s == 2.0 {
        let (lo, hi) = conv.extent().unwrap_or((vec![0; n], vec![0; n]));
        let grid: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| crate::fft::smooth_size((8 * (b - a + 1)) as usize)).collect();
        if grid.iter().map(|&v| v as u128).product::<u128>() <= 1 << 24 {
            let m = SampledMultiplier::from_trig(conv.multiplier(), grid)?;
            norm = norm.max(m.sup_norm());
        }
    }
    let vol = qstar.volume();
    let rhs = (vol as f64).powf(1.0 / r + 1.0 / s - 1.0) * norm;
    let degrees = qstar.degrees().to_vec();
    let shift = vec![0u64; n];
    let (rows, summary) = sparse_ratio_batch(&conv, &degrees, pairs, r, s, sigma, &shift)?;
    let ratios: Vec<Option<f64>> = rows.iter().map(|row| row.ratio.map(|v| v / rhs)).collect();
    let max_ratio = ratios.iter().flatten().cloned().fold(0.0, f64::max);
    let constant = FINITE_SUPPORT_CONSTANT_BASE.powi(n as i32);
    Ok(FiniteSupportCheck {
        qstar_volume: vol,
        norm_lower_bound: norm,
        rhs,
        ratios,
        max_ratio,
        constant,
        within_constant: max_ratio <= constant,
        all_certified: summary.all_certified,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MaximalCheck {
    pub summary: BatchSummary,
    pub constant: f64,
    pub within_constant: bool,
}

/// `<M_P |f|, |g|> / Lambda_{1,1}` over a batch.
pub fn check_maximal_sparse(
    degrees: &[u32],
    sidelengths: &[f64],
    pairs: &[(LatticeFunction, LatticeFunction)],
    sigma: f64,
) -> Result<MaximalCheck> {
    let n = degrees.len();
    let rows = pairs
        .par_iter()
        .map(|(f, g)| {
            let (fa, ga) = (f.abs(), g.abs());
            let mf = maximal(degrees, &fa, sidelengths)?;
            let numerator = crate::lattice_fn::pair(&mf, &ga).norm();
            let coll = build_sparse_collection(degrees, &fa, &ga, sigma, &vec![0; n])?;
            let denominator = sparse_form(&coll, &fa, &ga, 1.0, 1.0)?;
            let ratio = if denominator > 0.0 {
                Some(numerator / denominator)
            } else if numerator == 0.0 {
                None
            } else {
                return Err(Error::InvariantViolation("sparse form vanishes on nonzero data".into()));
            };
            let certified = verify_sparsity(&coll, sigma)?.is_certified();
            Ok(SparseRatio { numerator, denominator, ratio, cubes: coll.len(), certified })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = BatchSummary::from_ratios(&rows);
    let within = summary.max <= MAXIMAL_SPARSE_CONSTANT;
    Ok(MaximalCheck { summary, constant: MAXIMAL_SPARSE_CONSTANT, within_constant: within })
}

/// Every point of every cube, for brute-force checks.
pub fn cube_points(q: &PCube) -> Vec<Vec<i64>> {
    let hi: Vec<i64> = q.hi();
    let mut out = Vec::new();
    let mut x = q.lo().to_vec();
    if x.is_empty() {
        return out;
    }
    loop {
        out.push(x.clone());
        let mut k = x.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            x[k] += 1;
            if x[k] <= hi[k] {
                break;
            }
            x[k] = q.lo()[k];
        }
    }
}
