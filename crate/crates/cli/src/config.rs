//! Run configuration: a TOML document with sections `[grid]`, `[coefficients]`, `[split]`,
//! `[solver]` and `[experiment]`.
//!
//! Validation collects every violation before reporting, so a config with three typos
//! produces three diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use kdv_gauge::coefficients::{
    CoefficientExpr, CoefficientSet, CoefficientStrings, SplitStrategy, DEFAULT_SOFTPLUS_KAPPA,
};
use kdv_gauge::experiments::ExperimentKind;
use kdv_gauge::solver::{EquationForm, StepSize};
use kdv_gauge::spectral::Grid;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// One schema or value problem, located by its dotted key path.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Syntax(String),
    Invalid(Vec<Violation>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Syntax(m) => write!(f, "config is not valid TOML: {m}"),
            ConfigError::Invalid(v) => {
                writeln!(f, "config has {} problem(s):", v.len())?;
                for x in v {
                    writeln!(f, "  {x}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

const GRID_KEYS: &[&str] = &["half_width", "points"];
const COEFFICIENT_KEYS: &[&str] = &["alpha", "beta", "gamma", "delta", "epsilon", "alpha0"];
const SPLIT_KEYS: &[&str] = &["strategy", "beta1", "beta2", "kappa"];
const SOLVER_KEYS: &[&str] =
    &["form", "dt", "t_final", "s", "dealias", "blowup_threshold", "monitor_stride", "initial"];

/// `[experiment]` keys and the kinds that read them; `None` means every kind.
const EXPERIMENT_KEYS: &[(&str, Option<&[ExperimentKind]>)] = {
    use ExperimentKind::*;
    &[
        ("kind", None),
        ("seed", None),
        ("kappa", Some(&[SolitonBenchmark, Continuity])),
        ("dt_sweep", Some(&[SolitonBenchmark])),
        ("dt_reference", Some(&[SolitonBenchmark])),
        ("n_values", Some(&[TransformConsistency, BonaSmith])),
        ("slices", Some(&[TransformConsistency, BonaSmith, Continuity])),
        ("pulse_amplitude", Some(&[TransformConsistency])),
        ("pulse_center", Some(&[TransformConsistency])),
        ("pulse_width", Some(&[TransformConsistency])),
        ("threshold", Some(&[TransformConsistency])),
        ("n_ref", Some(&[BonaSmith])),
        ("amplitude", Some(&[BonaSmith])),
        ("band_limit", Some(&[BonaSmith])),
        ("step_fraction", Some(&[BonaSmith])),
        ("beta", Some(&[Wavepacket])),
        ("radius", Some(&[Wavepacket])),
        ("smoothing", Some(&[Wavepacket])),
        ("xi_values", Some(&[Wavepacket])),
        ("envelope_width", Some(&[Wavepacket])),
        ("x_start", Some(&[Wavepacket])),
        ("x_end", Some(&[Wavepacket])),
        ("e", Some(&[Continuity])),
        ("sizes", Some(&[Continuity])),
        ("draws", Some(&[CommutatorSurvey])),
        ("levels", Some(&[CommutatorSurvey])),
        ("draws_per_level", Some(&[CommutatorSurvey])),
        ("resonance_triples", Some(&[CommutatorSurvey])),
    ]
};

/// Coercivity constant assumed when `coefficients.alpha0` is absent.
pub const DEFAULT_ALPHA0: f64 = 0.1;

const SECTIONS: &[&str] = &["grid", "coefficients", "split", "solver", "experiment"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridSection {
    pub half_width: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub form: EquationForm,
    pub dt: Option<StepSize>,
    pub t_final: Option<f64>,
    pub s: Option<f64>,
    pub dealias: Option<bool>,
    pub blowup_threshold: Option<f64>,
    pub monitor_stride: Option<usize>,
    pub initial: Option<String>,
}

/// Scalar or list value of an `[experiment]` option.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Number(f64),
    Integer(i64),
    List(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Hex SHA-256 of the config file bytes.
    pub config_hash: String,
    pub grid: GridSection,
    pub coefficients: CoefficientSet,
    pub coefficient_text: BTreeMap<String, String>,
    /// True when the file has a `[coefficients]` or `[split]` section.
    pub coefficients_given: bool,
    pub solver: SolverSection,
    /// `None` runs a plain solve of `solver.initial`.
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, Param>,
}

impl RunConfig {
    pub fn param_f64(&self, key: &str) -> Option<f64> {
        match self.params.get(key)? {
            Param::Number(v) => Some(*v),
            Param::Integer(v) => Some(*v as f64),
            Param::List(_) => None,
        }
    }

    pub fn param_usize(&self, key: &str) -> Option<usize> {
        match self.params.get(key)? {
            Param::Integer(v) => Some(*v as usize),
            _ => None,
        }
    }

    pub fn param_list(&self, key: &str) -> Option<Vec<f64>> {
        match self.params.get(key)? {
            Param::List(v) => Some(v.clone()),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind.map_or("solve", |k| k.name())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let bytes = std::fs::read(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let config_hash = hex::encode(Sha256::digest(text.as_bytes()));
    let doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut v = Vec::new();

    for (key, value) in &doc {
        if !SECTIONS.contains(&key.as_str()) {
            v.push(unknown(key, key, SECTIONS));
        } else if !value.is_table() {
            v.push(Violation { path: key.clone(), message: "expected a table section".into() });
        }
    }
    let empty = Table::new();
    let section = |name: &str| doc.get(name).and_then(Value::as_table).unwrap_or(&empty);

    let experiment = section("experiment");
    let kind = match experiment.get("kind") {
        None => None,
        Some(Value::String(s)) if s == "solve" => None,
        Some(Value::String(s)) => match ExperimentKind::from_name(s) {
            Some(k) => Some(k),
            None => {
                let mut names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                names.push("solve");
                let hint = suggest(s, &names).map(|h| format!(", did you mean \"{h}\"?")).unwrap_or_default();
                v.push(Violation {
                    path: "experiment.kind".into(),
                    message: format!("unknown experiment \"{s}\"{hint} (see list-experiments)"),
                });
                None
            }
        },
        Some(_) => {
            v.push(Violation { path: "experiment.kind".into(), message: "expected a string".into() });
            None
        }
    };

    check_keys("grid", section("grid"), GRID_KEYS, &mut v);
    check_keys("coefficients", section("coefficients"), COEFFICIENT_KEYS, &mut v);
    check_keys("split", section("split"), SPLIT_KEYS, &mut v);
    check_keys("solver", section("solver"), SOLVER_KEYS, &mut v);
    let all_experiment: Vec<&str> = EXPERIMENT_KEYS.iter().map(|(k, _)| *k).collect();
    for key in experiment.keys() {
        match EXPERIMENT_KEYS.iter().find(|(k, _)| k == key) {
            None => v.push(unknown(&format!("experiment.{key}"), key, &all_experiment)),
            Some((_, Some(kinds))) if kind.map_or(true, |k| !kinds.contains(&k)) => v.push(Violation {
                path: format!("experiment.{key}"),
                message: format!("not used by experiment \"{}\"", kind.map_or("solve", |k| k.name())),
            }),
            _ => {}
        }
    }

    // [grid]
    let mut r = Reader { table: section("grid"), section: "grid", v: &mut v };
    let grid = GridSection { half_width: r.positive("half_width"), points: r.count("points") };
    if let (Some(l), Some(n)) = (grid.half_width, grid.points) {
        if let Err(e) = Grid::new(l, n) {
            v.push(Violation { path: "grid".into(), message: e.to_string() });
        }
    }

    // [coefficients]
    let mut r = Reader { table: section("coefficients"), section: "coefficients", v: &mut v };
    let defaults = CoefficientStrings::default();
    let mut coefficient_text = BTreeMap::new();
    let mut exprs = BTreeMap::new();
    for (key, default) in [
        ("alpha", defaults.alpha),
        ("beta", defaults.beta),
        ("gamma", defaults.gamma),
        ("delta", defaults.delta),
        ("epsilon", defaults.epsilon),
    ] {
        let text = r.string(key).unwrap_or_else(|| default.to_string());
        if let Some(e) = r.expression(key, &text) {
            exprs.insert(key, e);
        }
        coefficient_text.insert(key.to_string(), text);
    }
    let alpha0 = r.number("alpha0").unwrap_or(DEFAULT_ALPHA0);
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        r.push("alpha0", format!("must lie in (0, 1], got {alpha0}"));
    }

    // [split]
    let mut r = Reader { table: section("split"), section: "split", v: &mut v };
    let strategy = r.string("strategy").unwrap_or_else(|| "none".into());
    let beta1 = r.string("beta1");
    let beta2 = r.string("beta2");
    let kappa = r.positive("kappa");
    let split = match strategy.as_str() {
        "none" => {
            for (key, set) in [("beta1", beta1.is_some()), ("beta2", beta2.is_some()), ("kappa", kappa.is_some())] {
                if set {
                    r.push(key, "only read with strategy \"user\" or \"softplus\"".into());
                }
            }
            Some(SplitStrategy::UserProvided { beta1: CoefficientExpr::constant(0.0), beta2: None })
        }
        "user" => {
            if kappa.is_some() {
                r.push("kappa", "only read with strategy \"softplus\"".into());
            }
            match beta1 {
                None => {
                    r.push("beta1", "required with strategy \"user\"".into());
                    None
                }
                Some(text) => {
                    coefficient_text.insert("beta1".into(), text.clone());
                    let b1 = r.expression("beta1", &text);
                    let b2 = beta2.and_then(|t| {
                        coefficient_text.insert("beta2".into(), t.clone());
                        r.expression("beta2", &t).map(Some)
                    });
                    b1.map(|beta1| SplitStrategy::UserProvided { beta1, beta2: b2.flatten() })
                }
            }
        }
        "softplus" => {
            for (key, set) in [("beta1", beta1.is_some()), ("beta2", beta2.is_some())] {
                if set {
                    r.push(key, "only read with strategy \"user\"".into());
                }
            }
            Some(SplitStrategy::Softplus { kappa: kappa.unwrap_or(DEFAULT_SOFTPLUS_KAPPA) })
        }
        other => {
            let hint = suggest(other, &["none", "user", "softplus"]).map(|h| format!(", did you mean \"{h}\"?")).unwrap_or_default();
            r.push("strategy", format!("unknown split strategy \"{other}\"{hint}"));
            None
        }
    };

    // [solver]
    let kind_ok = experiment_ok(&v);
    let mut r = Reader { table: section("solver"), section: "solver", v: &mut v };
    let form = match r.string("form").as_deref() {
        None | Some("original") => EquationForm::Original,
        Some("transformed") => EquationForm::Transformed,
        Some(other) => {
            r.push("form", format!("expected \"original\" or \"transformed\", got \"{other}\""));
            EquationForm::Original
        }
    };
    let dt = match r.table.get("dt") {
        None => None,
        Some(Value::String(s)) if s == "auto" => Some(StepSize::Auto),
        Some(_) => r.positive("dt").map(StepSize::Fixed),
    };
    let solver = SolverSection {
        form,
        dt,
        t_final: r.positive("t_final"),
        s: r.number("s"),
        dealias: r.boolean("dealias"),
        blowup_threshold: r.positive("blowup_threshold"),
        monitor_stride: r.count("monitor_stride"),
        initial: r.string("initial"),
    };
    if let Some(text) = &solver.initial {
        r.expression("initial", text);
    }
    if kind.is_none() && solver.initial.is_none() && kind_ok {
        r.push("initial", "required when no experiment kind is given".into());
    }

    // [experiment]
    let mut r = Reader { table: experiment, section: "experiment", v: &mut v };
    let seed = r.integer("seed").and_then(|s| {
        if s < 0 {
            r.push("seed", "must be nonnegative".into());
            None
        } else {
            Some(s as u64)
        }
    });
    let mut params = BTreeMap::new();
    for (key, value) in experiment {
        if key == "kind" || key == "seed" || !EXPERIMENT_KEYS.iter().any(|(k, _)| k == key) {
            continue;
        }
        match value {
            Value::Integer(i) => {
                params.insert(key.clone(), Param::Integer(*i));
            }
            Value::Float(f) => {
                params.insert(key.clone(), Param::Number(*f));
            }
            Value::Array(items) => {
                let nums: Option<Vec<f64>> = items
                    .iter()
                    .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                    .collect();
                match nums {
                    Some(n) if !n.is_empty() => {
                        params.insert(key.clone(), Param::List(n));
                    }
                    _ => r.push(key, "expected a non-empty list of numbers".into()),
                }
            }
            _ => r.push(key, "expected a number or a list of numbers".into()),
        }
    }

    let coefficients = match (split, v.is_empty()) {
        (Some(split), true) => {
            let set = CoefficientSet::new(
                exprs.remove("alpha").expect("parsed"),
                exprs.remove("beta").expect("parsed"),
                exprs.remove("gamma").expect("parsed"),
                exprs.remove("delta").expect("parsed"),
                exprs.remove("epsilon").expect("parsed"),
                &split,
                alpha0,
            );
            match set {
                Ok(s) => Some(s),
                Err(e) => {
                    v.push(Violation { path: "coefficients".into(), message: e.to_string() });
                    None
                }
            }
        }
        _ => None,
    };
    match coefficients {
        Some(coefficients) if v.is_empty() => Ok(RunConfig {
            config_hash,
            grid,
            coefficients,
            coefficient_text,
            coefficients_given: doc.contains_key("coefficients") || doc.contains_key("split"),
            solver,
            kind,
            seed,
            params,
        }),
        _ => Err(ConfigError::Invalid(v)),
    }
}

fn experiment_ok(v: &[Violation]) -> bool {
    !v.iter().any(|x| x.path == "experiment.kind")
}

fn check_keys(section: &str, table: &Table, known: &[&str], v: &mut Vec<Violation>) {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            v.push(unknown(&format!("{section}.{key}"), key, known));
        }
    }
}

fn unknown(path: &str, key: &str, known: &[&str]) -> Violation {
    let message = match suggest(key, known) {
        Some(s) => format!("unknown key \"{key}\", did you mean \"{s}\"?"),
        None => format!("unknown key \"{key}\" (expected one of: {})", known.join(", ")),
    };
    Violation { path: path.to_string(), message }
}

/// Closest candidate within edit distance 2, or by Jaro-Winkler similarity above 0.85.
fn suggest<'a>(key: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (*c, strsim::levenshtein(key, c), strsim::jaro_winkler(key, c)))
        .filter(|(_, d, j)| *d <= 2 || *j > 0.85)
        .min_by(|a, b| a.1.cmp(&b.1).then(b.2.total_cmp(&a.2)))
        .map(|(c, _, _)| c)
}

struct Reader<'a> {
    table: &'a Table,
    section: &'static str,
    v: &'a mut Vec<Violation>,
}

impl Reader<'_> {
    fn push(&mut self, key: &str, message: String) {
        self.v.push(Violation { path: format!("{}.{key}", self.section), message });
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        match self.table.get(key)? {
            Value::Float(f) if f.is_finite() => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.push(key, "expected a finite number".into());
                None
            }
        }
    }

    fn positive(&mut self, key: &str) -> Option<f64> {
        let x = self.number(key)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.push(key, format!("must be positive, got {x}"));
            None
        }
    }

    fn integer(&mut self, key: &str) -> Option<i64> {
        match self.table.get(key)? {
            Value::Integer(i) => Some(*i),
            _ => {
                self.push(key, "expected an integer".into());
                None
            }
        }
    }

    fn count(&mut self, key: &str) -> Option<usize> {
        let i = self.integer(key)?;
        if i > 0 {
            Some(i as usize)
        } else {
            self.push(key, format!("must be a positive integer, got {i}"));
            None
        }
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.table.get(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.push(key, "expected true or false".into());
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Integer(i) => Some(i.to_string()),
            Value::Float(f) => Some(f.to_string()),
            _ => {
                self.push(key, "expected a string".into());
                None
            }
        }
    }

    fn expression(&mut self, key: &str, text: &str) -> Option<CoefficientExpr> {
        match CoefficientExpr::parse(text) {
            Ok(e) => Some(e),
            Err(e) => {
                self.push(key, format!("{e} in \"{text}\""));
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggestions() {
        assert_eq!(suggest("alpa", COEFFICIENT_KEYS), Some("alpha"));
        assert_eq!(suggest("t_finl", SOLVER_KEYS), Some("t_final"));
        assert_eq!(suggest("zzzz", COEFFICIENT_KEYS), None);
    }

    #[test]
    fn minimal_config() {
        let c = parse_config_str("[coefficients]\nalpha = \"1\"\n[experiment]\nkind = \"soliton_benchmark\"\n").unwrap();
        assert_eq!(c.kind, Some(ExperimentKind::SolitonBenchmark));
        assert_eq!(c.config_hash.len(), 64);
    }

    #[test]
    fn numbers_accepted_as_expressions() {
        let c = parse_config_str("[coefficients]\nalpha = 2\nepsilon = -6.0\n[experiment]\nkind = \"continuity\"\n").unwrap();
        assert_eq!(c.coefficients.alpha.value(0.0, 1.0), 2.0);
        assert_eq!(c.coefficients.epsilon.value(0.0, 1.0), -6.0);
    }
}
