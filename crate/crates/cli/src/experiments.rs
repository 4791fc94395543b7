//! One runner per experiment kind. Each returns a table (without the
//! trailing `regime, params_hash` columns) and a kind-specific summary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radonlab_core::circle_method::{
    fractions_with_denominator, n_p, parse_rational, proven_region, rational_from_f64, reciprocal_exponent, weyl_decay_fit,
    weyl_sums_all, Decomposition, EpsProvenance, Frequency, FrequencyGrid, ReducedFraction,
};
use radonlab_core::kernels::{verify_cz_bounds, DyadicBump};
use radonlab_core::lattice_fn::{BoxDomain, LatticeFunction};
use radonlab_core::poly_map::{LVerdict, PCube};
use radonlab_core::sparse::{
    check_maximal_sparse, check_prop_finite_support, sparse_ratio, BatchSummary, SparseRatio, MAXIMAL_SPARSE_CONSTANT,
};
use radonlab_core::stats::{least_squares, median, theil_sen_bootstrap};
use radonlab_core::transform::{NormSearch, TruncatedTransform};
use radonlab_core::Error;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{exponent, parse_fraction, Kind, Resolved};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;
pub const CZ_SAMPLE_BUDGET: usize = 1 << 14;

pub struct Outcome {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
    pub warnings: Vec<String>,
    /// Some rows were dropped because a budget was exceeded.
    pub partial: bool,
}

impl Outcome {
    fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new(), summary: Value::Null, warnings: Vec::new(), partial: false }
    }

    /// Budget overruns drop the row and flag the run; anything else is fatal.
    fn absorb<T>(&mut self, label: String, r: Result<T, Error>) -> Result<Option<T>, Error> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(e @ (Error::BudgetExceeded { .. } | Error::UnderResolved { .. })) => {
                self.partial = true;
                self.warnings.push(format!("{label}: {e}"));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

pub fn run(res: &Resolved) -> Result<Outcome, Error> {
    match res.config.kind {
        Kind::WeylDecay => weyl_decay(res),
        Kind::MultiplierApprox => multiplier_approx(res),
        Kind::ErrorDecay => error_decay(res),
        Kind::SparseConstant => sparse_constant(res),
        Kind::MaximalCheck => maximal_check(res),
        Kind::FiniteSupportCheck => finite_support_check(res),
        Kind::Region => region(res),
        Kind::Admissibility => admissibility(res),
    }
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e16)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Theil–Sen slope of `log2 y` against `x` with a bootstrap band.
fn fit_json(x: &[f64], log_y: &[f64], seed: u64) -> Value {
    match theil_sen_bootstrap(x, log_y, BOOTSTRAP_RESAMPLES, BOOTSTRAP_LEVEL, seed) {
        Some(f) => json!({
            "slope": f.slope,
            "intercept": f.intercept,
            "ci_low": f.ci_low,
            "ci_high": f.ci_high,
            "level": BOOTSTRAP_LEVEL,
            "resamples": f.resamples,
            "method": "theil_sen",
        }),
        None => Value::Null,
    }
}

fn fitted(slope: f64, intercept: f64, x: f64) -> String {
    num((intercept + slope * x).exp2())
}

fn weyl_decay(res: &Resolved) -> Result<Outcome, Error> {
    let q_cap = res.config.q_cap.expect("validated");
    let fit = weyl_decay_fit(&res.map, q_cap)?;
    let mut out = Outcome::new(vec!["q", "value", "argmax", "fitted_model"]);
    for row in &fit.table {
        out.rows.push(vec![
            row.q.to_string(),
            num(row.max_abs),
            row.argmax.to_string(),
            fitted(fit.slope, fit.intercept, (row.q as f64).log2()),
        ]);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = fit
        .table
        .iter()
        .filter(|r| r.max_abs >= radonlab_core::circle_method::WEYL_ZERO)
        .map(|r| ((r.q as f64).log2(), r.max_abs.log2()))
        .unzip();
    out.summary = json!({
        "slope": fit.slope,
        "intercept": fit.intercept,
        "slope_method": "least_squares on log2 max|S| vs log2 q",
        "fitted_rows": fit.fitted_rows,
        "theil_sen": fit_json(&x, &y, res.config.seed),
    });
    Ok(out)
}

fn decay_summary(out: &mut Outcome, xs: &[f64], values: &[f64], seed: u64) -> Option<(f64, f64)> {
    let ly: Vec<f64> = values.iter().map(|v| v.max(f64::MIN_POSITIVE).log2()).collect();
    let fit = fit_json(xs, &ly, seed);
    let line = fit.get("slope").and_then(Value::as_f64).zip(fit.get("intercept").and_then(Value::as_f64));
    for (row, &x) in out.rows.iter_mut().zip(xs) {
        row.push(line.map_or_else(String::new, |(s, b)| fitted(s, b, x)));
    }
    out.summary = json!({
        "theil_sen": fit,
        "least_squares": least_squares(xs, &ly).map(|(s, b)| json!({"slope": s, "intercept": b})),
    });
    line
}

fn multiplier_approx(res: &Resolved) -> Result<Outcome, Error> {
    let c = &res.config;
    let af = parse_fraction(&c.fraction, res.map.dim_range()).map_err(Error::InvalidArgument)?;
    let dec = Decomposition::new(res.map.clone(), res.kernel, DyadicBump, res.params)?;
    let mut out = Outcome::new(vec!["j", "value", "max_main_term", "quadrature_error", "relaxed", "fitted_model"]);
    let mut xs = Vec::new();
    let mut vals = Vec::new();
    let s = c.grid.samples as i64;
    for j in c.j_min..=c.j_max {
        if res.regime == radonlab_core::circle_method::Regime::Paper && (af.q() as f64) > (c.delta_prime * j as f64).exp2() {
            out.warnings.push(format!("j = {j}: q = {} exceeds 2^(delta' j) in the paper regime; skipped", af.q()));
            continue;
        }
        let widths = res.params.arc_widths(res.map.degrees(), j);
        let n = res.map.dim_range();
        let mut samples = Vec::new();
        for (axis, w) in widths.iter().enumerate() {
            for i in -s..=s {
                if i == 0 && axis > 0 {
                    continue;
                }
                let mut off = vec![0.0; n];
                off[axis] = i as f64 * w / s as f64;
                samples.push(Frequency::near(&af, &off));
            }
        }
        let Some(rep) = out.absorb(format!("j = {j}"), dec.approximation_error(j, &af, &samples))? else {
            continue;
        };
        out.rows.push(vec![j.to_string(), num(rep.max_deviation), num(rep.max_main_term), num(rep.quadrature_error), rep.relaxed.to_string()]);
        xs.push(j as f64);
        vals.push(rep.max_deviation);
    }
    decay_summary(&mut out, &xs, &vals, c.seed);
    out.summary["fraction"] = json!(af.to_string());
    Ok(out)
}

/// Fraction of largest `|S(a/q)|` for each `q <= q_cap`.
fn probe_centers(res: &Resolved, q_cap: u64) -> Result<Vec<ReducedFraction>, Error> {
    let n = res.map.dim_range();
    (1..=q_cap)
        .map(|q| {
            let all = weyl_sums_all(&res.map, q)?;
            let index = |f: &ReducedFraction| f.a().iter().fold(0usize, |acc, &a| acc * q as usize + a as usize);
            Ok(fractions_with_denominator(n, q)
                .max_by(|a, b| all[index(a)].norm().total_cmp(&all[index(b)].norm()))
                .expect("every q has a reduced fraction"))
        })
        .collect()
}

fn error_decay(res: &Resolved) -> Result<Outcome, Error> {
    let c = &res.config;
    let q_cap = c.q_cap.unwrap_or(128);
    let centers = probe_centers(res, q_cap)?;
    let dec = Decomposition::new(res.map.clone(), res.kernel, DyadicBump, res.params)?;
    let n = res.map.dim_range();
    let d_max = res.map.degree() as i32;
    let mut out = Outcome::new(vec!["j", "value", "sup_m", "sup_l", "identity_defect", "fitted_model"]);
    let mut xs = Vec::new();
    let mut vals = Vec::new();
    for j in c.j_min..=c.j_max {
        let step = (dec.narrowest_arc(j) / 4.0).min((-(d_max * j) as f64).exp2() / 8.0);
        let grid = FrequencyGrid::Union(
            centers
                .iter()
                .map(|cf| FrequencyGrid::Window { center: Frequency::near(cf, &vec![0.0; n]), step: vec![step; n], radius: c.grid.window_radius })
                .collect(),
        );
        let Some(rep) = out.absorb(format!("j = {j}"), dec.error_e_j(j, &grid))? else {
            continue;
        };
        out.rows.push(vec![j.to_string(), num(rep.sup()), num(rep.sup_m), num(rep.sup_l), num(rep.identity_defect)]);
        xs.push(j as f64);
        vals.push(rep.sup());
    }
    let line = decay_summary(&mut out, &xs, &vals, c.seed);
    out.summary["probe_q_cap"] = json!(q_cap);
    out.summary["region"] = match line {
        Some((slope, _)) if slope < 0.0 => {
            let eps = rational_from_f64(-slope)?;
            let v = proven_region(
                &res.map,
                &eps,
                &reciprocal_exponent(&c.r.text())?,
                &reciprocal_exponent(&c.s.text())?,
                EpsProvenance::EmpiricalFit { j_range: (c.j_min, c.j_max), slope },
            )?;
            serde_json::to_value(v).expect("verdict serializes")
        }
        _ => {
            out.warnings.push("no decay observed; eps' not fed to the region".into());
            Value::Null
        }
    };
    Ok(out)
}

fn signs(rng: &mut ChaCha8Rng, dom: &BoxDomain) -> LatticeFunction {
    let v = (0..dom.len()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    LatticeFunction::from_real(dom.clone(), v).expect("sized to the domain")
}

/// Nonnegative data with a random density of nonzero entries.
fn sparse_data(rng: &mut ChaCha8Rng, dom: &BoxDomain) -> (LatticeFunction, LatticeFunction) {
    let density = rng.gen_range(0.01..0.5);
    let mut mk = || {
        let v = (0..dom.len()).map(|_| if rng.gen_bool(density) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
        LatticeFunction::from_real(dom.clone(), v).expect("sized to the domain")
    };
    let f = mk();
    (f, mk())
}

fn ratio_summary(out: &mut Outcome, ratios: &[SparseRatio]) {
    let s = BatchSummary::from_ratios(ratios);
    out.summary = json!({
        "trials": s.trials,
        "defined": s.defined,
        "max": s.max,
        "median": s.median,
        "max_over_median": s.max_over_median,
        "all_certified": s.all_certified,
    });
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

fn sparse_constant(res: &Resolved) -> Result<Outcome, Error> {
    let c = &res.config;
    let n = res.map.dim_range();
    let t = TruncatedTransform::new(res.map.clone(), res.kernel, DyadicBump, c.j_min, c.j_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let dom = BoxDomain::symmetric(n, c.domain_radius);
    let pairs: Vec<_> = (0..c.trials).map(|_| (signs(&mut rng, &dom), signs(&mut rng, &dom))).collect();
    let (r, s) = (exponent(&c.r).map_err(Error::InvalidArgument)?, exponent(&c.s).map_err(Error::InvalidArgument)?);
    let shift = c.shift.clone().unwrap_or_else(|| vec![0; n]);
    let results: Vec<_> = pairs.par_iter().map(|(f, g)| sparse_ratio(&t, res.map.degrees(), f, g, r, s, c.sigma, &shift)).collect();
    let mut out = Outcome::new(vec!["trial", "value", "numerator", "denominator", "cubes", "certified"]);
    let mut kept = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        if let Some(row) = out.absorb(format!("trial {i}"), r)? {
            out.rows.push(vec![i.to_string(), opt(row.ratio), num(row.numerator), num(row.denominator), row.cubes.to_string(), row.certified.to_string()]);
            kept.push(row);
        }
    }
    ratio_summary(&mut out, &kept);
    Ok(out)
}

fn maximal_check(res: &Resolved) -> Result<Outcome, Error> {
    let c = &res.config;
    let n = res.map.dim_range();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let dom = BoxDomain::symmetric(n, c.domain_radius);
    let pairs: Vec<_> = (0..c.trials).map(|_| sparse_data(&mut rng, &dom)).collect();
    let results: Vec<_> =
        pairs.par_iter().map(|p| check_maximal_sparse(res.map.degrees(), &c.sidelengths, std::slice::from_ref(p), c.sigma)).collect();
    let mut out = Outcome::new(vec!["trial", "value", "certified"]);
    let mut ratios = Vec::new();
    let mut certified = true;
    for (i, r) in results.into_iter().enumerate() {
        if let Some(m) = out.absorb(format!("trial {i}"), r)? {
            let ratio = m.summary.ratios[0];
            out.rows.push(vec![i.to_string(), opt(ratio), m.summary.all_certified.to_string()]);
            certified &= m.summary.all_certified;
            ratios.extend(ratio);
        }
    }
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let med = median(&ratios);
    out.summary = json!({
        "trials": c.trials,
        "defined": ratios.len(),
        "max": max,
        "median": med,
        "max_over_median": med.filter(|&m| m > 0.0).map(|m| max / m),
        "constant": MAXIMAL_SPARSE_CONSTANT,
        "within_constant": max <= MAXIMAL_SPARSE_CONSTANT,
        "all_certified": certified,
    });
    Ok(out)
}

fn finite_support_check(res: &Resolved) -> Result<Outcome, Error> {
    let c = &res.config;
    let n = res.map.dim_range();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let q = PCube::centered(res.map.degrees(), &vec![0; n], c.qstar_sidelength)?;
    let kv = (0..q.volume()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kernel = LatticeFunction::from_real(BoxDomain::of_cube(&q), kv)?;
    let dom = BoxDomain::symmetric(n, c.domain_radius);
    let pairs: Vec<_> = (0..c.trials).map(|_| sparse_data(&mut rng, &dom)).collect();
    let (r, s) = (exponent(&c.r).map_err(Error::InvalidArgument)?, exponent(&c.s).map_err(Error::InvalidArgument)?);
    let search = NormSearch { seed: c.seed, ..NormSearch::default() };
    let mut out = Outcome::new(vec!["trial", "value"]);
    let Some(chk) = out.absorb("finite-support check".into(), check_prop_finite_support(&kernel, &q, r, s, &pairs, c.sigma, search))? else {
        out.summary = json!({ "qstar_volume": q.volume() });
        return Ok(out);
    };
    for (i, ratio) in chk.ratios.iter().enumerate() {
        out.rows.push(vec![i.to_string(), opt(*ratio)]);
    }
    out.summary = json!({
        "qstar_volume": chk.qstar_volume,
        "norm_lower_bound": chk.norm_lower_bound,
        "rhs": chk.rhs,
        "max_ratio": chk.max_ratio,
        "constant": chk.constant,
        "within_constant": chk.within_constant,
        "all_certified": chk.all_certified,
    });
    Ok(out)
}

fn region(res: &Resolved) -> Result<Outcome, Error> {
    let c = &res.config;
    let eps = c.eps_prime.as_ref().expect("validated").text();
    let v = proven_region(
        &res.map,
        &parse_rational(&eps)?,
        &reciprocal_exponent(&c.r.text())?,
        &reciprocal_exponent(&c.s.text())?,
        EpsProvenance::Supplied,
    )?;
    let mut out = Outcome::new(vec!["eps_prime", "r", "s", "in_Omega_m", "major_condition_ok", "N_P", "boundary"]);
    out.rows.push(vec![
        v.eps_prime.clone(),
        c.r.text(),
        c.s.text(),
        v.in_omega_m.to_string(),
        v.major_condition_ok.to_string(),
        v.n_p.to_string(),
        v.boundary.clone(),
    ]);
    debug_assert_eq!(v.n_p, n_p(&res.map));
    out.summary = serde_json::to_value(v).expect("verdict serializes");
    Ok(out)
}

fn admissibility(res: &Resolved) -> Result<Outcome, Error> {
    let c = &res.config;
    let mut out = Outcome::new(vec!["check", "component", "holds", "detail"]);
    let cc = res.map.check_condition_c();
    for (i, w) in cc.witnesses.iter().enumerate() {
        let detail = w.as_ref().map_or_else(|| "no pure monomial of top degree".into(), |a| format!("witness {a:?}"));
        out.rows.push(vec!["C".into(), i.to_string(), w.is_some().to_string(), detail]);
    }
    let l = &c.l_probe;
    let lv = res.map.probe_condition_l(l.beta, l.l0, l.radius, l.grid_step);
    let l_holds = match out.absorb("condition L probe".into(), lv)? {
        Some(LVerdict::NoCounterexampleFound { checked }) => {
            out.rows.push(vec!["L".into(), String::new(), "true".into(), format!("no counterexample in {checked} samples")]);
            Some(true)
        }
        Some(LVerdict::Counterexample { t, value, bound, .. }) => {
            out.rows.push(vec!["L".into(), String::new(), "false".into(), format!("|P(t)| = {value} < {bound} at t = {t:?}")]);
            Some(false)
        }
        None => None,
    };
    let cz = verify_cz_bounds(&res.kernel, CZ_SAMPLE_BUDGET);
    out.rows.push(vec![
        "CZ".into(),
        String::new(),
        cz.passes().to_string(),
        format!("size {} cancellation {} over {} samples", cz.size_max, cz.cancellation_max, cz.samples),
    ]);
    out.rows.push(vec!["odd_kernel".into(), String::new(), res.kernel.is_odd().to_string(), res.kernel.descriptor()]);
    out.summary = json!({
        "condition_c": cc.holds,
        "condition_l_probe": l_holds,
        "condition_l_note": "a grid probe can only refute coercivity",
        "cz_bounds": cz.passes(),
        "cz_report": cz,
        "odd_kernel": res.kernel.is_odd(),
    });
    Ok(out)
}
