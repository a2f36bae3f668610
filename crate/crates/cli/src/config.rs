//! Run configuration: a strict TOML tree.
//!
//! ```toml
//! experiment = "flow"
//! seed = 7
//! output_dir = "out/flow"
//!
//! [parameters]
//! n_molecules = 4
//! period = 1.0
//! dt = 0.01
//! n_cycles = 3
//!
//! [parameters.field]
//! family = "tanh"
//! scale = 0.9
//! strength = 0.3
//! bias_strength = 0.5
//! seed = 3
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use randers_core::concentration::SamplerKind;
use randers_core::dynamics::{steps_per_period, Integrator};
use randers_core::gravity::CaseSpec;
use randers_core::lipschitz::BoxMetric;
use randers_core::observables::FieldSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Flow,
    Lipschitz,
    Concentration,
    Sphere,
    Wep,
    Gravity,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Flow => "flow",
            Experiment::Lipschitz => "lipschitz",
            Experiment::Concentration => "concentration",
            Experiment::Sphere => "sphere",
            Experiment::Wep => "wep",
            Experiment::Gravity => "gravity",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    parameters: toml::Table,
}

/// One failed check, addressed by its dotted path in the config tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn violation(path: &str, message: impl Into<String>) -> Violation {
    Violation { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub n_molecules: i64,
    pub period: f64,
    pub dt: f64,
    pub n_cycles: i64,
    #[serde(default = "one")]
    pub record_every: i64,
    #[serde(default = "rk4")]
    pub integrator: Integrator,
    #[serde(default)]
    pub raw_ode: bool,
    pub field: FieldSpec,
    #[serde(default = "unit")]
    pub initial_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzParams {
    pub n_molecules: i64,
    pub period: f64,
    pub dt: f64,
    pub n_cycles: i64,
    pub field: FieldSpec,
    #[serde(default = "unit")]
    pub initial_sigma: f64,
    #[serde(default = "default_pairs")]
    pub n_pairs: i64,
    #[serde(default = "default_dilation")]
    pub dilation: f64,
    #[serde(default = "default_global_scale")]
    pub global_scale: f64,
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default = "default_identity_samples")]
    pub identity_samples: i64,
    #[serde(default = "euclidean")]
    pub metric: BoxMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    Coordinate { index: usize },
    /// `(1/√d) Σ x_i`.
    ScaledSum,
    Norm,
}

impl ObservableSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ObservableSpec::Coordinate { index } => x[*index],
            ObservableSpec::ScaledSum => x.iter().sum::<f64>() / (x.len() as f64).sqrt(),
            ObservableSpec::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationParams {
    pub sampler: SamplerKind,
    pub observable: ObservableSpec,
    pub n_samples: i64,
    pub rho_grid: Vec<f64>,
    #[serde(default = "unit")]
    pub sigma_f: f64,
    #[serde(default = "unit")]
    pub rho_p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereParams {
    pub dimensions: Vec<i64>,
    pub n_samples: i64,
    /// Tail grid in units of `ρ_p = (N−1)^{-1/2}`.
    #[serde(default = "default_multipliers")]
    pub rho_multipliers: Vec<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilon_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WepParams {
    pub n_list: Vec<i64>,
    pub n_trials: i64,
    pub period: f64,
    pub dt: f64,
    pub n_cycles: i64,
    pub field: FieldSpec,
    #[serde(default)]
    pub preparation_mean: [f64; 8],
    #[serde(default = "unit")]
    pub preparation_sigma: f64,
    #[serde(default = "default_multipliers")]
    pub rho_grid: Vec<f64>,
    #[serde(default = "default_reference")]
    pub n_reference: i64,
    #[serde(default = "default_tail_points")]
    pub tail_points: i64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GravityParams {
    /// Omitted: the standard atomic-to-Planck sweep.
    #[serde(default)]
    pub cases: Option<Vec<CaseSpec>>,
}

fn one() -> i64 {
    1
}
fn unit() -> f64 {
    1.0
}
fn rk4() -> Integrator {
    Integrator::Rk4
}
fn euclidean() -> BoxMetric {
    BoxMetric::Euclidean
}
fn default_pairs() -> i64 {
    10_000
}
fn default_target() -> f64 {
    1.02
}
fn default_dilation() -> f64 {
    0.1
}
fn default_global_scale() -> f64 {
    4.0
}
fn default_identity_samples() -> i64 {
    100_000
}
fn default_reference() -> i64 {
    100_000
}
fn default_tail_points() -> i64 {
    1000
}
pub fn default_multipliers() -> Vec<f64> {
    (1..=16).map(|k| 0.25 * k as f64).collect()
}
fn default_epsilons() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Parameters {
    Flow(FlowParams),
    Lipschitz(LipschitzParams),
    Concentration(ConcentrationParams),
    Sphere(SphereParams),
    Wep(WepParams),
    Gravity(GravityParams),
}

/// A parsed configuration. Only [`validate`] guarantees it is runnable.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub parameters: Parameters,
    /// The file as read, for hashing.
    #[serde(skip)]
    pub source: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<Violation>> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| vec![schema_violation("", &e)])?;
        let table = toml::Value::Table(raw.parameters);
        fn params<T: for<'de> Deserialize<'de>>(v: toml::Value) -> Result<T, Vec<Violation>> {
            T::deserialize(v).map_err(|e| vec![schema_violation("parameters", &e)])
        }
        let parameters = match raw.experiment {
            Experiment::Flow => Parameters::Flow(params(table)?),
            Experiment::Lipschitz => Parameters::Lipschitz(params(table)?),
            Experiment::Concentration => Parameters::Concentration(params(table)?),
            Experiment::Sphere => Parameters::Sphere(params(table)?),
            Experiment::Wep => Parameters::Wep(params(table)?),
            Experiment::Gravity => Parameters::Gravity(params(table)?),
        };
        Ok(Self {
            experiment: raw.experiment,
            seed: raw.seed,
            output_dir: raw.output_dir,
            parameters,
            source: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
        Self::parse(&text).map_err(LoadError::Invalid)
    }
}

#[derive(Debug)]
pub enum LoadError {
    Io(PathBuf, std::io::Error),
    Invalid(Vec<Violation>),
}

fn schema_violation(prefix: &str, e: &dyn fmt::Display) -> Violation {
    let msg = e.to_string();
    let msg = msg.trim().replace('\n', " ");
    violation(if prefix.is_empty() { "<root>" } else { prefix }, format!("schema: {msg}"))
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn require(&mut self, ok: bool, path: &str, message: impl Into<String>) {
        if !ok {
            self.out.push(violation(path, message));
        }
    }

    fn molecules(&mut self, path: &str, n: i64) {
        self.require(n >= 2, path, format!("N = {n} is out of range (N >= 2)"));
    }

    fn positive(&mut self, path: &str, x: f64) {
        self.require(x > 0.0 && x.is_finite(), path, format!("{x} must be positive"));
    }

    fn at_least(&mut self, path: &str, x: i64, min: i64) {
        self.require(x >= min, path, format!("{x} is out of range (>= {min})"));
    }

    fn timing(&mut self, period: f64, dt: f64) {
        self.positive("parameters.period", period);
        self.positive("parameters.dt", dt);
        if period > 0.0 && dt > 0.0 && period.is_finite() && dt.is_finite() {
            self.require(
                steps_per_period(period, dt).is_ok(),
                "parameters.dt",
                format!("parameters.dt = {dt} does not divide parameters.period = {period}"),
            );
        }
    }

    fn field(&mut self, field: &FieldSpec) {
        let b = field.beta_bound();
        self.require(
            b < 1.0 && b.is_finite(),
            "parameters.field",
            format!("sup |beta| = {b} violates the Randers condition (< 1)"),
        );
    }

    fn grid(&mut self, path: &str, grid: &[f64]) {
        self.require(
            !grid.is_empty()
                && grid.iter().all(|r| *r > 0.0 && r.is_finite())
                && grid.windows(2).all(|w| w[0] < w[1]),
            path,
            "must be nonempty, positive and strictly ascending",
        );
    }
}

/// Range and consistency checks on a parsed config. `seed_override` stands in for a
/// missing `seed` key.
pub fn validate(config: &RunConfig, seed_override: Option<u64>) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    c.require(config.seed.or(seed_override).is_some(), "seed", "missing (set `seed` or pass --seed)");
    match &config.parameters {
        Parameters::Flow(p) => {
            c.molecules("parameters.n_molecules", p.n_molecules);
            c.timing(p.period, p.dt);
            c.at_least("parameters.n_cycles", p.n_cycles, 1);
            c.at_least("parameters.record_every", p.record_every, 1);
            c.positive("parameters.initial_sigma", p.initial_sigma);
            c.field(&p.field);
        }
        Parameters::Lipschitz(p) => {
            c.molecules("parameters.n_molecules", p.n_molecules);
            c.timing(p.period, p.dt);
            c.at_least("parameters.n_cycles", p.n_cycles, 1);
            c.positive("parameters.initial_sigma", p.initial_sigma);
            c.field(&p.field);
            c.at_least("parameters.n_pairs", p.n_pairs, 1);
            c.require(p.dilation >= 0.0 && p.dilation.is_finite(), "parameters.dilation", "must be >= 0");
            c.require(p.global_scale >= 1.0 && p.global_scale.is_finite(), "parameters.global_scale", "must be >= 1");
            c.positive("parameters.target", p.target);
            c.at_least("parameters.identity_samples", p.identity_samples, 1);
        }
        Parameters::Concentration(p) => {
            match &p.sampler {
                SamplerKind::Sphere { n } => c.molecules("parameters.sampler.n", *n as i64),
                SamplerKind::Gaussian { d, sigma } => {
                    c.at_least("parameters.sampler.d", *d as i64, 1);
                    c.positive("parameters.sampler.sigma", *sigma);
                }
                SamplerKind::ProductUniform { d, lower, upper } => {
                    c.at_least("parameters.sampler.d", *d as i64, 1);
                    c.require(lower < upper, "parameters.sampler", "lower must be < upper");
                }
            }
            if let ObservableSpec::Coordinate { index } = p.observable {
                let dim = match p.sampler {
                    SamplerKind::Sphere { n } => n + 1,
                    SamplerKind::Gaussian { d, .. } | SamplerKind::ProductUniform { d, .. } => d,
                };
                c.require(index < dim, "parameters.observable.index", format!("{index} >= dimension {dim}"));
            }
            c.at_least("parameters.n_samples", p.n_samples, 100);
            c.grid("parameters.rho_grid", &p.rho_grid);
            c.positive("parameters.sigma_f", p.sigma_f);
            c.positive("parameters.rho_p", p.rho_p);
        }
        Parameters::Sphere(p) => {
            c.require(!p.dimensions.is_empty(), "parameters.dimensions", "must be nonempty");
            for (i, n) in p.dimensions.iter().enumerate() {
                c.molecules(&format!("parameters.dimensions[{i}]"), *n);
            }
            c.at_least("parameters.n_samples", p.n_samples, 100);
            c.grid("parameters.rho_multipliers", &p.rho_multipliers);
            c.grid("parameters.epsilon_grid", &p.epsilon_grid);
        }
        Parameters::Wep(p) => {
            c.require(!p.n_list.is_empty(), "parameters.n_list", "must be nonempty");
            for (i, n) in p.n_list.iter().enumerate() {
                c.molecules(&format!("parameters.n_list[{i}]"), *n);
            }
            c.at_least("parameters.n_trials", p.n_trials, 2);
            c.timing(p.period, p.dt);
            c.at_least("parameters.n_cycles", p.n_cycles, 1);
            c.field(&p.field);
            c.positive("parameters.preparation_sigma", p.preparation_sigma);
            c.grid("parameters.rho_grid", &p.rho_grid);
            c.at_least("parameters.n_reference", p.n_reference, 2);
            c.at_least("parameters.tail_points", p.tail_points, 2);
        }
        Parameters::Gravity(p) => {
            for (i, case) in p.cases.iter().flatten().enumerate() {
                let path = format!("parameters.cases[{i}]");
                c.require(case.m >= 0.0 && case.big_m >= 0.0, &path, "masses must be >= 0");
                c.positive(&format!("{path}.r2"), case.r2);
                c.positive(&format!("{path}.lambda"), case.lambda);
                c.require(case.lambda != 1.0, &format!("{path}.lambda"), "lambda = 1 makes r1 = r2 (singular)");
            }
        }
    }
    c.out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOW: &str = r#"
experiment = "flow"
seed = 1

[parameters]
n_molecules = 2
period = 1.0
dt = 0.25
n_cycles = 1

[parameters.field]
family = "zero"
"#;

    #[test]
    fn minimal_flow_config_passes() {
        let cfg = RunConfig::parse(FLOW).unwrap();
        assert_eq!(cfg.experiment, Experiment::Flow);
        assert!(validate(&cfg, None).is_empty());
    }

    #[test]
    fn dt_not_dividing_period_names_both_fields() {
        let cfg = RunConfig::parse(&FLOW.replace("dt = 0.25", "dt = 0.3")).unwrap();
        let v = validate(&cfg, None);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "parameters.dt");
        assert!(v[0].message.contains("parameters.dt") && v[0].message.contains("parameters.period"));
    }

    #[test]
    fn negative_molecule_count_is_a_range_violation() {
        let cfg = RunConfig::parse(&FLOW.replace("n_molecules = 2", "n_molecules = -3")).unwrap();
        let v = validate(&cfg, None);
        assert_eq!(v[0].path, "parameters.n_molecules");
        assert!(v[0].message.contains("out of range"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse(&FLOW.replace("n_cycles = 1", "n_cycles = 1\nn_cylces = 2")).unwrap_err();
        assert!(err[0].message.contains("n_cylces"), "{:?}", err);
        assert!(RunConfig::parse(&format!("colour = 1\n{FLOW}")).is_err());
    }

    #[test]
    fn seed_must_be_present() {
        let cfg = RunConfig::parse(&FLOW.replace("seed = 1", "")).unwrap();
        assert_eq!(validate(&cfg, None)[0].path, "seed");
        assert!(validate(&cfg, Some(5)).is_empty());
    }
}
