//! Scenario files: strict JSON, schema version 1.

use std::path::{Path, PathBuf};

use nonlocal_core::rearrange::Domain;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const SCHEMA_VERSION: u64 = 1;

pub const CHECK_NAMES: &[&str] = &[
    "check_comparison",
    "check_energy_comparison",
    "check_parabolic_comparison",
    "check_max_principle",
    "check_polya_szego",
    "check_riesz",
    "check_coarea",
    "check_level_set_inequality",
    "check_phi_monotonicity",
    "check_maxmin_lemma",
];

pub const KERNEL_KINDS: &[&str] = &["fractional", "sum_of_powers", "logarithmic", "exponential", "tabulated"];
pub const FIELD_KINDS: &[&str] = &["constant", "radial", "table"];
pub const RADIAL_FORMULAS: &[&str] = &["power", "gaussian", "bump"];
pub const TIME_KINDS: &[&str] = &["constant", "linear", "sine", "exponential"];
pub const MODULATIONS: &[&str] = &["none", "radial", "spatial"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid JSON: {source}")]
    Syntax {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid scenario ({} error(s)):\n  {}", .0.len(), .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn messages(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Normalization {
    Named(String),
    Value(f64),
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Named("unit".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "none_str")]
    pub modulation: String,
    /// Ellipticity ratio Λ of the modulation.
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub frequency: f64,
}

/// Multiplicative time profile `g(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeProfile {
    pub kind: String,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self.kind.as_str() {
            "linear" => 1.0 + self.rate * t,
            "sine" => 1.0 + self.amplitude * (self.frequency * t).sin(),
            "exponential" => (self.rate * t).exp(),
            _ => 1.0,
        }
    }
}

/// Spatial field: a constant, `offset + scale g(|x - center|)`, or a grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub kind: String,
    #[serde(default)]
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "two")]
    pub exponent: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeProfile>,
}

impl FieldSpec {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: "constant".into(),
            value,
            formula: None,
            scale: 1.0,
            offset: 0.0,
            exponent: 2.0,
            width: 1.0,
            center: None,
            path: None,
            time: None,
        }
    }

    /// Value at distance `r` from the centre, for the non-table kinds.
    pub fn radial_value(&self, r: f64) -> f64 {
        match self.kind.as_str() {
            "constant" => self.value,
            _ => {
                let g = match self.formula.as_deref() {
                    Some("power") => r.powf(self.exponent),
                    Some("gaussian") => (-(r / self.width).powi(2)).exp(),
                    Some("bump") => (1.0 - (r / self.width).powi(2)).max(0.0).powf(self.exponent),
                    _ => 0.0,
                };
                self.offset + self.scale * g
            }
        }
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        self.time.as_ref().map_or(1.0, |p| p.eval(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(rename = "final")]
    pub final_time: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "solver_tol")]
    pub solver: f64,
    #[serde(default = "kappa_tol")]
    pub kappa_tol: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solver: solver_tol(),
            kappa_tol: kappa_tol(),
            max_iter: max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u64,
    pub dimension: usize,
    pub domain: Domain,
    pub grid: GridSpec,
    pub kernel: KernelSpec,
    #[serde(default = "zero_field")]
    pub coefficient: FieldSpec,
    #[serde(default = "unit_field")]
    pub source: FieldSpec,
    #[serde(default = "zero_field")]
    pub initial: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpec>,
    /// Empty means the standard set for the chosen command.
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "memory_cap")]
    pub memory_cap_mb: u64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn none_str() -> String {
    "none".into()
}
fn solver_tol() -> f64 {
    1e-10
}
fn kappa_tol() -> f64 {
    0.05
}
fn max_iter() -> usize {
    20_000
}
fn zero_field() -> FieldSpec {
    FieldSpec::constant(0.0)
}
fn unit_field() -> FieldSpec {
    FieldSpec::constant(1.0)
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn memory_cap() -> u64 {
    1024
}

impl ScenarioConfig {
    /// Canonical JSON used for hashing; the output location is left out.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Reads, checks and resolves a scenario file. Relative paths inside the
/// file are taken relative to its directory.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_str(&text).map_err(|e| match e {
        ConfigError::Syntax { source, .. } => ConfigError::Syntax {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })?;
    cfg.resolve_paths(base);
    Ok(cfg)
}

/// Parses and validates a scenario document, reporting every problem found.
pub fn parse_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut value: Value = serde_json::from_str(text).map_err(|source| ConfigError::Syntax {
        path: PathBuf::from("<input>"),
        source,
    })?;
    let mut errs = Vec::new();
    let Some(obj) = value.as_object_mut() else {
        return Err(ConfigError::Invalid(vec!["scenario must be a JSON object".into()]));
    };
    // unknown keys are reported and dropped so the remaining checks still run
    check_structure(obj, &mut errs);
    match serde_json::from_value::<ScenarioConfig>(value) {
        Ok(cfg) => {
            if let Err(ConfigError::Invalid(more)) = cfg.validate() {
                errs.extend(more);
            }
            if errs.is_empty() {
                return Ok(cfg);
            }
        }
        Err(e) if errs.is_empty() => errs.push(e.to_string()),
        Err(_) => {}
    }
    Err(ConfigError::Invalid(errs))
}

impl ScenarioConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.kernel.table.as_mut() {
            fix(p);
        }
        for field in [&mut self.coefficient, &mut self.source, &mut self.initial] {
            if let Some(p) = field.path.as_mut() {
                fix(p);
            }
        }
        fix(&mut self.output);
    }

    /// Semantic checks on a structurally valid config; collects all errors.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut e = Vec::new();
        if self.schema != SCHEMA_VERSION {
            e.push(format!("schema: unsupported version {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if !(1..=2).contains(&self.dimension) {
            e.push(format!("dimension: must be 1 or 2, got {}", self.dimension));
        }
        let n = self.grid.n;
        if !(n.is_power_of_two() && (16..=1024).contains(&n)) {
            e.push(format!("grid.n: must be a power of two between 16 and 1024, got {n}"));
        }
        if !(self.grid.half_width > 0.0 && self.grid.half_width.is_finite()) {
            e.push(format!("grid.half_width: must be positive, got {}", self.grid.half_width));
        }
        self.validate_domain(&mut e);
        self.validate_kernel(&mut e);
        for (name, field) in [("coefficient", &self.coefficient), ("source", &self.source), ("initial", &self.initial)] {
            validate_field(name, field, self.dimension, &mut e);
        }
        if self.initial.time.is_some() {
            e.push("initial.time: the initial datum cannot depend on time".into());
        }
        if let Some(t) = &self.time {
            if !(t.final_time > 0.0 && t.final_time.is_finite()) {
                e.push(format!("time.final: must be positive, got {}", t.final_time));
            }
            if t.steps == 0 {
                e.push("time.steps: must be at least 1".into());
            }
        }
        for c in &self.checks {
            if !CHECK_NAMES.contains(&c.as_str()) {
                e.push(format!("checks: unknown check \"{c}\" (allowed: {})", CHECK_NAMES.join(", ")));
            }
        }
        if self.time.is_none() && self.checks.iter().any(|c| c == "check_parabolic_comparison") {
            e.push("checks: check_parabolic_comparison needs a time block".into());
        }
        let t = &self.tolerances;
        if !(t.solver > 0.0 && t.solver < 1.0) {
            e.push(format!("tolerances.solver: must lie in (0, 1), got {}", t.solver));
        }
        if !(t.kappa_tol >= 0.0 && t.kappa_tol.is_finite()) {
            e.push(format!("tolerances.kappa_tol: must be nonnegative, got {}", t.kappa_tol));
        }
        if t.max_iter == 0 {
            e.push("tolerances.max_iter: must be at least 1".into());
        }
        if self.memory_cap_mb == 0 {
            e.push("memory_cap_mb: must be positive".into());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(e))
        }
    }

    fn validate_domain(&self, e: &mut Vec<String>) {
        let dim = self.dimension;
        let interval_ok = |iv: &[f64; 2]| iv[0] < iv[1] && iv.iter().all(|x| x.is_finite());
        match &self.domain {
            Domain::Intervals { intervals } => {
                if dim != 1 {
                    e.push("domain: intervals describe a 1-D domain".into());
                }
                if intervals.is_empty() {
                    e.push("domain.intervals: must not be empty".into());
                }
                for (k, iv) in intervals.iter().enumerate() {
                    if !interval_ok(iv) {
                        e.push(format!("domain.intervals[{k}]: need a < b, got {iv:?}"));
                    }
                }
            }
            Domain::Boxes { boxes } => {
                if boxes.is_empty() {
                    e.push("domain.boxes: must not be empty".into());
                }
                for (k, b) in boxes.iter().enumerate() {
                    if b.len() != dim {
                        e.push(format!("domain.boxes[{k}]: expected {dim} side(s), got {}", b.len()));
                    }
                    if b.iter().any(|iv| !interval_ok(iv)) {
                        e.push(format!("domain.boxes[{k}]: each side needs a < b"));
                    }
                }
            }
            Domain::Ball { radius, center } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    e.push(format!("domain.radius: must be positive, got {radius}"));
                }
                if let Some(c) = center {
                    if c.len() != dim {
                        e.push(format!("domain.center: expected {dim} coordinate(s), got {}", c.len()));
                    }
                }
            }
        }
    }

    fn validate_kernel(&self, e: &mut Vec<String>) {
        let k = &self.kernel;
        let in_unit = |s: f64| s > 0.0 && s < 1.0;
        match k.kind.as_str() {
            "fractional" => match k.s {
                Some(s) if in_unit(s) => {}
                Some(s) => e.push(format!("kernel.s: must lie in (0, 1), got {s}")),
                None => e.push("kernel.s: required for kind \"fractional\"".into()),
            },
            "sum_of_powers" => match &k.s_list {
                Some(v) if !v.is_empty() && v.iter().all(|s| in_unit(*s)) => {}
                Some(v) => e.push(format!("kernel.s_list: needs one or more exponents in (0, 1), got {v:?}")),
                None => e.push("kernel.s_list: required for kind \"sum_of_powers\"".into()),
            },
            "logarithmic" => match k.epsilon {
                Some(x) if x > 0.0 && x.is_finite() => {}
                Some(x) => e.push(format!("kernel.epsilon: must be positive, got {x}")),
                None => e.push("kernel.epsilon: required for kind \"logarithmic\"".into()),
            },
            "exponential" => match k.rate {
                Some(x) if x > 0.0 && x.is_finite() => {}
                Some(x) => e.push(format!("kernel.rate: must be positive, got {x}")),
                None => e.push("kernel.rate: required for kind \"exponential\"".into()),
            },
            "tabulated" => match &k.table {
                Some(_) => {}
                None => e.push("kernel.table: required for kind \"tabulated\"".into()),
            },
            other => e.push(format!(
                "kernel.kind: unknown kind \"{other}\" (allowed: {})",
                KERNEL_KINDS.join(", ")
            )),
        }
        match &k.normalization {
            Normalization::Named(s) if s == "unit" => {}
            Normalization::Named(s) if s == "exact" => {
                if k.kind != "fractional" {
                    e.push("kernel.normalization: \"exact\" is only defined for kind \"fractional\"".into());
                }
            }
            Normalization::Named(s) => e.push(format!(
                "kernel.normalization: expected \"unit\", \"exact\" or a positive number, got \"{s}\""
            )),
            Normalization::Value(x) => {
                if !(*x > 0.0 && x.is_finite()) {
                    e.push(format!("kernel.normalization: must be positive, got {x}"));
                }
            }
        }
        if !MODULATIONS.contains(&k.modulation.as_str()) {
            e.push(format!(
                "kernel.modulation: unknown modulation \"{}\" (allowed: {})",
                k.modulation,
                MODULATIONS.join(", ")
            ));
        }
        if !(k.lambda >= 1.0 && k.lambda.is_finite()) {
            e.push(format!("kernel.lambda: must be at least 1, got {}", k.lambda));
        } else if k.lambda > 1.0 && k.modulation == "none" {
            e.push("kernel.lambda: a value above 1 needs modulation \"radial\" or \"spatial\"".into());
        }
        if !(k.frequency > 0.0 && k.frequency.is_finite()) {
            e.push(format!("kernel.frequency: must be positive, got {}", k.frequency));
        }
    }

    /// Checks to run; an empty list selects the standard set.
    pub fn selected_checks(&self) -> Vec<String> {
        if !self.checks.is_empty() {
            let mut out: Vec<String> = Vec::new();
            for c in &self.checks {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
            return out;
        }
        let mut out = vec!["check_comparison".to_string(), "check_energy_comparison".to_string()];
        if self.time.is_some() {
            out.push("check_parabolic_comparison".into());
        }
        out
    }
}

fn validate_field(name: &str, f: &FieldSpec, dim: usize, e: &mut Vec<String>) {
    match f.kind.as_str() {
        "constant" => {
            if !f.value.is_finite() {
                e.push(format!("{name}.value: must be finite"));
            }
        }
        "radial" => match f.formula.as_deref() {
            Some(x) if RADIAL_FORMULAS.contains(&x) => {
                if x != "power" && !(f.width > 0.0) {
                    e.push(format!("{name}.width: must be positive, got {}", f.width));
                }
                if x == "power" && f.exponent < 0.0 {
                    e.push(format!("{name}.exponent: must be nonnegative, got {}", f.exponent));
                }
            }
            Some(x) => e.push(format!(
                "{name}.formula: unknown formula \"{x}\" (allowed: {})",
                RADIAL_FORMULAS.join(", ")
            )),
            None => e.push(format!("{name}.formula: required for kind \"radial\"")),
        },
        "table" => {
            if f.path.is_none() {
                e.push(format!("{name}.path: required for kind \"table\""));
            }
        }
        other => e.push(format!(
            "{name}.kind: unknown kind \"{other}\" (allowed: {})",
            FIELD_KINDS.join(", ")
        )),
    }
    if let Some(c) = &f.center {
        if c.len() != dim {
            e.push(format!("{name}.center: expected {dim} coordinate(s), got {}", c.len()));
        }
    }
    if let Some(t) = &f.time {
        if !TIME_KINDS.contains(&t.kind.as_str()) {
            e.push(format!(
                "{name}.time.kind: unknown kind \"{}\" (allowed: {})",
                t.kind,
                TIME_KINDS.join(", ")
            ));
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "schema",
    "dimension",
    "domain",
    "grid",
    "kernel",
    "coefficient",
    "source",
    "initial",
    "time",
    "checks",
    "tolerances",
    "output",
    "seed",
    "memory_cap_mb",
];
const FIELD_KEYS: &[&str] = &[
    "kind", "value", "formula", "scale", "offset", "exponent", "width", "center", "path", "time",
];

/// Key-level checks: unknown keys, missing required keys, and per-section
/// type errors, all collected before typed deserialization.
fn check_structure(obj: &mut Map<String, Value>, e: &mut Vec<String>) {
    keys(obj, "", TOP_KEYS, &["schema", "dimension", "domain", "grid", "kernel"], e);
    if let Some(d) = section(obj, "domain", e) {
        let d = &mut *d;
        let allowed: &[&str] = match d.get("kind").and_then(Value::as_str) {
            Some("intervals") => &["kind", "intervals"],
            Some("boxes") => &["kind", "boxes"],
            Some("ball") => &["kind", "radius", "center"],
            Some(k) => {
                e.push(format!("domain.kind: unknown kind \"{k}\" (allowed: intervals, boxes, ball)"));
                &[]
            }
            None => {
                e.push("domain.kind: missing required key".into());
                &[]
            }
        };
        if !allowed.is_empty() {
            keys(d, "domain", allowed, &allowed[..allowed.len().min(2)], e);
            typed::<Domain>(d, "domain", e);
        }
    }
    if let Some(g) = section(obj, "grid", e) {
        keys(g, "grid", &["n", "half_width"], &["n"], e);
        typed::<GridSpec>(g, "grid", e);
    }
    if let Some(k) = section(obj, "kernel", e) {
        let allowed = [
            "kind",
            "s",
            "s_list",
            "epsilon",
            "rate",
            "table",
            "normalization",
            "modulation",
            "lambda",
            "frequency",
        ];
        keys(k, "kernel", &allowed, &["kind"], e);
        typed::<KernelSpec>(k, "kernel", e);
    }
    for name in ["coefficient", "source", "initial"] {
        if let Some(f) = section(obj, name, e) {
            keys(f, name, FIELD_KEYS, &["kind"], e);
            if let Some(t) = f.get_mut("time") {
                match t.as_object_mut() {
                    Some(t) => keys(t, &format!("{name}.time"), &["kind", "rate", "amplitude", "frequency"], &["kind"], e),
                    None => e.push(format!("{name}.time: expected an object")),
                }
            }
            typed::<FieldSpec>(f, name, e);
        }
    }
    if let Some(t) = section(obj, "time", e) {
        keys(t, "time", &["final", "steps"], &["final", "steps"], e);
        typed::<TimeSpec>(t, "time", e);
    }
    if let Some(t) = section(obj, "tolerances", e) {
        keys(t, "tolerances", &["solver", "kappa_tol", "max_iter"], &[], e);
        typed::<Tolerances>(t, "tolerances", e);
    }
    for (key, check) in [
        ("schema", Value::is_u64 as fn(&Value) -> bool),
        ("dimension", Value::is_u64),
        ("seed", Value::is_u64),
        ("memory_cap_mb", Value::is_u64),
        ("output", Value::is_string),
    ] {
        if let Some(v) = obj.get(key) {
            if !check(v) {
                e.push(format!("{key}: unexpected value {v}"));
            }
        }
    }
    if let Some(v) = obj.get("checks") {
        if !v.as_array().is_some_and(|a| a.iter().all(Value::is_string)) {
            e.push("checks: expected a list of check names".into());
        }
    }
}

fn keys(obj: &mut Map<String, Value>, path: &str, allowed: &[&str], required: &[&str], e: &mut Vec<String>) {
    let prefix = if path.is_empty() { String::new() } else { format!("{path}.") };
    obj.retain(|k, _| {
        let known = allowed.contains(&k.as_str());
        if !known {
            e.push(format!("{prefix}{k}: unknown key (allowed: {})", allowed.join(", ")));
        }
        known
    });
    for r in required {
        if !obj.contains_key(*r) {
            e.push(format!("{prefix}{r}: missing required key"));
        }
    }
}

fn section<'a>(obj: &'a mut Map<String, Value>, name: &str, e: &mut Vec<String>) -> Option<&'a mut Map<String, Value>> {
    let v = obj.get_mut(name)?;
    match v.as_object_mut() {
        Some(m) => Some(m),
        None => {
            e.push(format!("{name}: expected an object"));
            None
        }
    }
}

fn typed<T: serde::de::DeserializeOwned>(v: &Map<String, Value>, path: &str, e: &mut Vec<String>) {
    if let Err(err) = serde_json::from_value::<T>(Value::Object(v.clone())) {
        let msg = err.to_string();
        // unknown and missing keys are already reported by `keys`
        if !msg.starts_with("unknown field") && !msg.starts_with("missing field") {
            e.push(format!("{path}: {msg}"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "dimension": 1,
        "domain": {"kind": "intervals", "intervals": [[-1, -0.2], [0.2, 1]]},
        "grid": {"n": 64},
        "kernel": {"kind": "fractional", "s": 0.5}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_str(MINIMAL).unwrap();
        assert_eq!(cfg.tolerances.solver, 1e-10);
        assert_eq!(cfg.tolerances.kappa_tol, 0.05);
        assert_eq!(cfg.grid.half_width, 1.0);
        assert_eq!(cfg.source.radial_value(0.3), 1.0);
        assert_eq!(cfg.coefficient.radial_value(0.3), 0.0);
        assert_eq!(cfg.selected_checks(), vec!["check_comparison", "check_energy_comparison"]);
    }

    #[test]
    fn every_error_is_reported() {
        let text = MINIMAL
            .replace("\"n\": 64", "\"n\": 100")
            .replace("\"s\": 0.5", "\"s\": 0.5, \"colour\": 3")
            .replace("\"schema\": 1,", "\"schema\": 1, \"checks\": [\"check_nothing\"],");
        let errs = parse_str(&text).unwrap_err().messages();
        assert!(errs.iter().any(|m| m.starts_with("kernel.colour")), "{errs:?}");
        assert!(errs.iter().any(|m| m.starts_with("grid.n")), "{errs:?}");
        assert!(errs.iter().any(|m| m.contains("check_nothing")), "{errs:?}");
        assert_eq!(errs.len(), 3);
    }

    #[test]
    fn missing_keys_are_listed_together() {
        let errs = parse_str(r#"{"schema": 1, "grid": {}, "kernel": {"s": 0.5}}"#).unwrap_err().messages();
        for key in ["dimension", "domain", "grid.n", "kernel.kind"] {
            assert!(errs.iter().any(|m| m.starts_with(&format!("{key}: missing"))), "{key}: {errs:?}");
        }
    }

    #[test]
    fn unknown_kernel_kind_lists_alternatives() {
        let errs = parse_str(&MINIMAL.replace("\"fractional\"", "\"levy-flight\"")).unwrap_err().messages();
        assert_eq!(errs.len(), 1, "{errs:?}");
        for k in KERNEL_KINDS {
            assert!(errs[0].contains(k));
        }
    }

    #[test]
    fn radial_formulas() {
        let mut f = FieldSpec::constant(0.0);
        f.kind = "radial".into();
        f.formula = Some("power".into());
        f.offset = 1.0;
        assert_eq!(f.radial_value(0.5), 1.25);
        f.formula = Some("bump".into());
        f.exponent = 1.0;
        f.width = 2.0;
        assert_eq!(f.radial_value(1.0), 1.75);
        assert_eq!(f.radial_value(3.0), 1.0);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = parse_str(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
