//! Experiment configuration: parsing, defaults, validation and the
//! canonical form that feeds `params_hash`.

use std::fmt;
use std::path::{Path, PathBuf};

use radonlab_core::circle_method::{parse_rational, reciprocal_exponent, ArcParameters, ReducedFraction, Regime};
use radonlab_core::kernels::CZKernel;
use radonlab_core::poly_map::{fixture, PolynomialMap};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MAX_Q_CAP: u64 = 100_000;
pub const MAX_J: i32 = 20;
pub const MAX_SPARSE_J: i32 = 12;
pub const MAX_TRIALS: usize = 10_000;
/// Largest lattice box (points) a randomized trial may allocate.
pub const MAX_DOMAIN_POINTS: u128 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    WeylDecay,
    MultiplierApprox,
    ErrorDecay,
    SparseConstant,
    MaximalCheck,
    FiniteSupportCheck,
    Region,
    Admissibility,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        write!(f, "{}", v.as_str().unwrap_or_default())
    }
}

/// A number or a string such as `"inf"`, `"0.06"` or `"400/201"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exact {
    Number(f64),
    Text(String),
}

impl Exact {
    /// Shortest round-trip decimal for numbers, so `0.06` means `6/100`.
    pub fn text(&self) -> String {
        match self {
            Exact::Number(x) => format!("{x}"),
            Exact::Text(s) => s.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Samples per arc half-width (multiplier-approx).
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Points on each side of a probe window centre (error-decay).
    #[serde(default = "default_window_radius")]
    pub window_radius: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { samples: default_samples(), window_radius: default_window_radius() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LProbeConfig {
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub l0: f64,
    #[serde(default = "default_l_radius")]
    pub radius: f64,
    #[serde(default = "default_l_step")]
    pub grid_step: f64,
}

impl Default for LProbeConfig {
    fn default() -> Self {
        Self { beta: 1.0, l0: 1.0, radius: default_l_radius(), grid_step: default_l_step() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default = "default_map")]
    pub map: String,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_delta_prime")]
    pub delta_prime: f64,
    /// Kept verbatim; it is copied into every output row.
    #[serde(default = "default_regime")]
    pub regime: String,
    #[serde(default = "default_j_min")]
    pub j_min: i32,
    #[serde(default = "default_j_max")]
    pub j_max: i32,
    /// Largest denominator (weyl-decay table, error-decay probe windows).
    #[serde(default)]
    pub q_cap: Option<u64>,
    /// Arc centre for multiplier-approx.
    #[serde(default = "default_fraction")]
    pub fraction: String,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eps_prime: Option<Exact>,
    #[serde(default = "default_exponent")]
    pub r: Exact,
    #[serde(default = "default_exponent")]
    pub s: Exact,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Random test functions live on `[-R, R]^n`.
    #[serde(default = "default_domain_radius")]
    pub domain_radius: i64,
    /// Stopping-time grid shift; zeros when omitted.
    #[serde(default)]
    pub shift: Option<Vec<u64>>,
    #[serde(default = "default_sidelengths")]
    pub sidelengths: Vec<f64>,
    #[serde(default = "default_qstar_sidelength")]
    pub qstar_sidelength: f64,
    #[serde(default)]
    pub l_probe: LProbeConfig,
    /// Output prefix: writes `<output>.csv` and `<output>.summary.json`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_samples() -> usize {
    32
}
fn default_window_radius() -> usize {
    32
}
fn one() -> f64 {
    1.0
}
fn default_l_radius() -> f64 {
    64.0
}
fn default_l_step() -> f64 {
    0.25
}
fn default_map() -> String {
    "t3".into()
}
fn default_kernel() -> String {
    "half_hilbert".into()
}
fn default_delta() -> f64 {
    0.5
}
fn default_delta_prime() -> f64 {
    0.3
}
fn default_regime() -> String {
    "exploratory".into()
}
fn default_j_min() -> i32 {
    6
}
fn default_j_max() -> i32 {
    14
}
fn default_fraction() -> String {
    "0/1".into()
}
fn default_trials() -> usize {
    100
}
fn default_exponent() -> Exact {
    Exact::Number(2.0)
}
fn default_sigma() -> f64 {
    0.5
}
fn default_domain_radius() -> i64 {
    512
}
fn default_sidelengths() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}
fn default_qstar_sidelength() -> f64 {
    9.0
}

/// One validation failure, located in the source text when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn field(field: &str, message: impl Into<String>) -> Self {
        Self { line: None, column: None, field: Some(field.into()), message: message.into() }
    }

    pub fn render(&self, path: &Path) -> String {
        let mut at = path.display().to_string();
        if let Some(l) = self.line {
            at.push_str(&format!(":{l}"));
            if let Some(c) = self.column {
                at.push_str(&format!(":{c}"));
            }
        }
        match &self.field {
            Some(f) => format!("{at}: field `{f}`: {}", self.message),
            None => format!("{at}: {}", self.message),
        }
    }
}

/// Everything a run needs, resolved from the config.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub map: PolynomialMap,
    pub kernel: CZKernel,
    pub params: ArcParameters,
    pub regime: Regime,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    serde_json::from_str(text).map_err(|e| {
        vec![Diagnostic { line: Some(e.line()), column: Some(e.column()), field: None, message: e.to_string() }]
    })
}

/// Checks parameter windows and budgets; diagnostics carry the line of the
/// offending key when it appears in `text`.
pub fn validate(config: ExperimentConfig, text: &str) -> Result<Resolved, Vec<Diagnostic>> {
    let mut errs = Vec::new();
    let c = &config;
    let map = fixture(&c.map).map_err(|e| errs.push(Diagnostic::field("map", e.to_string()))).ok();
    let regime: Option<Regime> = serde_json::from_value(Value::String(c.regime.clone()))
        .map_err(|_| errs.push(Diagnostic::field("regime", "expected `paper` or `exploratory`")))
        .ok();
    let params = regime.and_then(|r| {
        ArcParameters::new(c.delta, c.delta_prime, r).map_err(|e| errs.push(Diagnostic::field("delta", e.to_string()))).ok()
    });
    let kernel = map.as_ref().and_then(|m| {
        CZKernel::from_name(&c.kernel, m.dim_domain()).map_err(|e| errs.push(Diagnostic::field("kernel", e.to_string()))).ok()
    });
    let n = map.as_ref().map_or(1, PolynomialMap::dim_range);

    let needs_j = matches!(c.kind, Kind::MultiplierApprox | Kind::ErrorDecay | Kind::SparseConstant);
    if needs_j {
        let cap = if c.kind == Kind::SparseConstant { MAX_SPARSE_J } else { MAX_J };
        let floor = if c.kind == Kind::SparseConstant { 0 } else { 1 };
        if c.j_min < floor {
            errs.push(Diagnostic::field("j_min", format!("must be at least {floor}")));
        }
        if c.j_max < c.j_min {
            errs.push(Diagnostic::field("j_max", "must be at least j_min"));
        }
        if c.j_max > cap {
            errs.push(Diagnostic::field("j_max", format!("exceeds the budget of {cap}")));
        }
        if c.kind != Kind::SparseConstant && c.j_max - c.j_min < 1 {
            errs.push(Diagnostic::field("j_max", "a slope fit needs at least two scales"));
        }
    }
    match (c.kind, c.q_cap) {
        (Kind::WeylDecay, None) => errs.push(Diagnostic::field("q_cap", "required for weyl-decay")),
        (_, Some(0)) => errs.push(Diagnostic::field("q_cap", "must be at least 1")),
        (_, Some(q)) if q > MAX_Q_CAP => errs.push(Diagnostic::field("q_cap", format!("exceeds the budget of {MAX_Q_CAP}"))),
        _ => {}
    }
    if c.kind == Kind::WeylDecay && c.q_cap == Some(1) {
        errs.push(Diagnostic::field("q_cap", "a slope fit needs at least two denominators"));
    }
    if c.kind == Kind::MultiplierApprox {
        if let Err(e) = parse_fraction(&c.fraction, n) {
            errs.push(Diagnostic::field("fraction", e));
        }
        if c.grid.samples == 0 || c.grid.samples > 4096 {
            errs.push(Diagnostic::field("grid.samples", "must lie in 1..=4096"));
        }
    }
    if c.kind == Kind::ErrorDecay && (c.grid.window_radius == 0 || c.grid.window_radius > 4096) {
        errs.push(Diagnostic::field("grid.window_radius", "must lie in 1..=4096"));
    }
    let randomized = matches!(c.kind, Kind::SparseConstant | Kind::MaximalCheck | Kind::FiniteSupportCheck);
    if randomized {
        if c.trials == 0 || c.trials > MAX_TRIALS {
            errs.push(Diagnostic::field("trials", format!("must lie in 1..={MAX_TRIALS}")));
        }
        if !(c.sigma > 0.0 && c.sigma <= 1.0) {
            errs.push(Diagnostic::field("sigma", "must lie in (0, 1]"));
        }
        if c.domain_radius < 1 {
            errs.push(Diagnostic::field("domain_radius", "must be positive"));
        } else {
            let side = 2 * c.domain_radius as u128 + 1;
            if side.checked_pow(n as u32).is_none_or(|v| v > MAX_DOMAIN_POINTS) {
                errs.push(Diagnostic::field("domain_radius", format!("domain exceeds the budget of {MAX_DOMAIN_POINTS} points")));
            }
        }
        if let Some(s) = &c.shift {
            if s.len() != n {
                errs.push(Diagnostic::field("shift", format!("needs {n} entries")));
            }
        }
        for (name, e) in [("r", &c.r), ("s", &c.s)] {
            match exponent(e) {
                Ok(v) if v >= 1.0 && v.is_finite() => {}
                _ => errs.push(Diagnostic::field(name, "must be a finite exponent >= 1")),
            }
        }
    }
    if c.kind == Kind::MaximalCheck && (c.sidelengths.is_empty() || c.sidelengths.iter().any(|&l| !(l > 0.0))) {
        errs.push(Diagnostic::field("sidelengths", "needs at least one positive sidelength"));
    }
    if c.kind == Kind::FiniteSupportCheck && !(c.qstar_sidelength > 0.0 && c.qstar_sidelength <= 64.0) {
        errs.push(Diagnostic::field("qstar_sidelength", "must lie in (0, 64]"));
    }
    if c.kind == Kind::Region {
        match &c.eps_prime {
            None => errs.push(Diagnostic::field("eps_prime", "required for region")),
            Some(e) => match parse_rational(&e.text()) {
                Ok(v) if v > &v - &v => {}
                _ => errs.push(Diagnostic::field("eps_prime", "must be a positive rational")),
            },
        }
        for (name, e) in [("r", &c.r), ("s", &c.s)] {
            if reciprocal_exponent(&e.text()).is_err() {
                errs.push(Diagnostic::field(name, "must be an exponent in [1, inf]"));
            }
        }
    }
    if c.kind == Kind::Admissibility {
        let l = &c.l_probe;
        if !(l.beta > 0.0 && l.l0 > 0.0 && l.grid_step > 0.0 && l.radius >= l.l0) {
            errs.push(Diagnostic::field("l_probe", "needs positive beta, l0, grid_step and radius >= l0"));
        }
    }

    if errs.is_empty() {
        Ok(Resolved {
            map: map.expect("validated"),
            kernel: kernel.expect("validated"),
            params: params.expect("validated"),
            regime: regime.expect("validated"),
            config,
        })
    } else {
        for d in &mut errs {
            if let Some(f) = &d.field {
                let key = f.split('.').next_back().unwrap_or(f);
                d.line = locate(text, key);
            }
        }
        Err(errs)
    }
}

/// 1-based line of the first `"key"` in the document.
fn locate(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

pub fn exponent(e: &Exact) -> Result<f64, String> {
    match e {
        Exact::Number(x) => Ok(*x),
        Exact::Text(t) => {
            let inv = reciprocal_exponent(t).map_err(|e| e.to_string())?;
            Ok(1.0 / radonlab_core::circle_method::rational_to_f64(&inv))
        }
    }
}

pub fn parse_fraction(s: &str, n: usize) -> Result<ReducedFraction, String> {
    let (a, q) = s.split_once('/').ok_or_else(|| format!("expected `a/q` or `a1,a2/q`, got `{s}`"))?;
    let q: u64 = q.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
    let a: Vec<u64> = a.split(',').map(|x| x.trim().parse::<u64>()).collect::<Result<_, _>>().map_err(|_| format!("bad numerator in `{s}`"))?;
    let a = if a.len() == 1 && n > 1 && a[0] == 0 { vec![0; n] } else { a };
    if a.len() != n {
        return Err(format!("numerator needs {n} components"));
    }
    ReducedFraction::new(a, q).map_err(|e| e.to_string())
}

/// Sorted-key JSON of the config with defaults filled in and the output
/// path removed.
pub fn canonical_json(config: &ExperimentConfig) -> String {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Value::Object(m) = &mut v {
        m.remove("output");
    }
    sorted(&v).to_string()
}

fn sorted(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            Value::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

/// First 16 hex digits of SHA-256 over the canonical config.
pub fn params_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(canonical_json(config).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weyl(extra: &str) -> String {
        format!("{{\"kind\": \"weyl-decay\", \"map\": \"t3\"{extra}}}")
    }

    #[test]
    fn defaults_and_hash_ignore_key_order_and_output() {
        let a = parse(&weyl(", \"q_cap\": 50, \"seed\": 7")).unwrap();
        let b = parse("{\"seed\": 7, \"q_cap\": 50, \"output\": \"x/y\", \"map\": \"t3\", \"kind\": \"weyl-decay\"}").unwrap();
        assert_eq!(params_hash(&a), params_hash(&b));
        let c = parse(&weyl(", \"q_cap\": 51, \"seed\": 7")).unwrap();
        assert_ne!(params_hash(&a), params_hash(&c));
        assert_eq!(params_hash(&a).len(), 16);
    }

    #[test]
    fn q_cap_zero_is_located() {
        let text = "{\n  \"kind\": \"weyl-decay\",\n  \"q_cap\": 0\n}";
        let errs = validate(parse(text).unwrap(), text).err().unwrap();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field.as_deref(), Some("q_cap"));
        assert_eq!(errs[0].line, Some(3));
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let errs = parse("{\"kind\": \"region\",\n \"qcap\": 3}").err().unwrap();
        assert_eq!(errs[0].line, Some(2));
        assert!(errs[0].message.contains("qcap"));
    }

    #[test]
    fn exact_numbers_keep_their_decimal() {
        assert_eq!(Exact::Number(0.06).text(), "0.06");
        assert_eq!(exponent(&Exact::Text("inf".into())).unwrap(), f64::INFINITY);
        assert_eq!(exponent(&Exact::Text("3/2".into())).unwrap(), 1.5);
        assert!(parse_fraction("1/3", 1).is_ok());
        assert!(parse_fraction("2/4", 1).is_err());
        assert_eq!(parse_fraction("0/1", 3).unwrap().dim(), 3);
    }
}
