//! JSON analysis configuration. The schema is described in
//! `docs/config.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dde_sim::{
    build_interconnection, DelaySystemSpec, HistoryFunction, HistorySegment, InputChannel, InputSignal, RhsContext,
    SimError, SimOptions, Subsystem, SubsystemRhs, DEFAULT_DIVERGENCE_THRESHOLD,
};
use crate::gain_algebra::{GridSpec, KFunction};
use crate::gain_graph::GainDigraph;

use super::expr::{parse_expr, Env, Expr, Scope};
use super::gain::parse_gain;
use super::ParseError;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Expr { context: String, source: ParseError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub name: String,
    /// Named delays, e.g. `{"Delta": 1.0}`.
    #[serde(default)]
    pub delays: BTreeMap<String, f64>,
    pub subsystems: Vec<SubsystemConfig>,
    #[serde(default)]
    pub gains: GainsConfig,
    /// One entry per subsystem; omitted means the zero history.
    #[serde(default)]
    pub history: Vec<HistoryConfig>,
    /// One entry per subsystem; omitted means no input.
    #[serde(default)]
    pub input: Vec<InputConfig>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    /// Disturbed auxiliary system used for the GAS check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auxiliary: Option<AuxiliaryConfig>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    #[serde(default = "one")]
    pub dim: usize,
    /// Input dimension.
    #[serde(default)]
    pub inputs: usize,
    /// One expression per state component.
    pub rhs: Vec<String>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    #[serde(default)]
    pub edges: Vec<EdgeGain>,
    #[serde(default)]
    pub sigma: Vec<NodeGain>,
    #[serde(default)]
    pub input: Vec<NodeGain>,
}

/// `γ_ij`: gain of subsystem `i` with respect to subsystem `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeGain {
    pub i: usize,
    pub j: usize,
    pub gain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeGain {
    pub i: usize,
    pub gain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HistoryConfig {
    Constant(Vec<f64>),
    /// Per component, polynomial coefficients in `t`, lowest order first.
    Polynomial(Vec<Vec<f64>>),
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
    /// Per component, an expression in `t`.
    Expr(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Zero,
    Constant(Vec<f64>),
    Piecewise { times: Vec<f64>, values: Vec<Vec<f64>> },
    Expr(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub step: f64,
    pub divergence_threshold: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { horizon: 20.0, step: 0.01, divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub grid: GridSpec,
    /// Tail threshold of the GAS check.
    pub eps: f64,
    pub tail_fraction: f64,
    /// Absolute slack of the AG check.
    pub ag_tolerance: f64,
    pub gs: bool,
    pub ag: bool,
    pub gas: bool,
    /// Extra random constant histories, drawn from `seed`, on which the GS
    /// check is repeated.
    pub random_histories: usize,
    /// Half-width of the box the random histories are drawn from.
    pub random_history_scale: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            grid: GridSpec::default(),
            eps: 1e-3,
            tail_fraction: 0.2,
            ag_tolerance: 1e-3,
            gs: true,
            ag: true,
            gas: true,
            random_histories: 0,
            random_history_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxiliaryConfig {
    pub rho: String,
    pub disturbance: Vec<InputConfig>,
}

/// Everything a run needs, validated.
#[derive(Debug, Clone)]
pub struct SystemBundle {
    pub config: SystemConfig,
    pub system: DelaySystemSpec,
    pub gains: GainDigraph,
    pub history: HistoryFunction,
    pub input: InputSignal,
    pub sim: SimOptions,
    pub checks: ChecksConfig,
    pub auxiliary: Option<(KFunction, InputSignal)>,
}

struct ExprRhs {
    exprs: Vec<Expr>,
}

struct CtxEnv<'a, 'b> {
    ctx: &'a RhsContext<'b>,
    u: &'a [f64],
}

impl Env for CtxEnv<'_, '_> {
    fn time(&self) -> f64 {
        self.ctx.t()
    }

    fn state(&self, sub: usize, comp: usize, delay: f64) -> f64 {
        if delay == 0.0 {
            self.ctx.state(sub)[comp]
        } else {
            self.ctx.delayed_component(sub, comp, delay)
        }
    }

    fn input(&self, comp: usize) -> f64 {
        self.u[comp]
    }
}

impl SubsystemRhs for ExprRhs {
    fn eval(&self, ctx: &RhsContext<'_>, u: &[f64], out: &mut [f64]) {
        let env = CtxEnv { ctx, u };
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(&env);
        }
    }
}

struct TimeEnv(f64);

impl Env for TimeEnv {
    fn time(&self) -> f64 {
        self.0
    }
    fn state(&self, _: usize, _: usize, _: f64) -> f64 {
        unreachable!("time-only expressions read no state")
    }
    fn input(&self, _: usize) -> f64 {
        unreachable!("time-only expressions read no input")
    }
}

type TimeFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

fn time_function(exprs: Vec<Expr>) -> TimeFn {
    Arc::new(move |t, out: &mut [f64]| {
        for (o, e) in out.iter_mut().zip(&exprs) {
            *o = e.eval(&TimeEnv(t));
        }
    })
}

fn expr_err(context: String) -> impl FnOnce(ParseError) -> ConfigError {
    move |source| ConfigError::Expr { context, source }
}

fn check_table(what: &str, times: &[f64], values: &[Vec<f64>], dim: usize) -> Result<(), ConfigError> {
    if times.is_empty() || times.len() != values.len() {
        return Err(invalid(format!("{what}: times and values must be non-empty and of equal length")));
    }
    if values.iter().any(|v| v.len() != dim) {
        return Err(invalid(format!("{what}: every value needs {dim} components")));
    }
    Ok(())
}

fn build_input(
    what: &str,
    cfg: &InputConfig,
    dim: usize,
    delays: &BTreeMap<String, f64>,
) -> Result<InputChannel, ConfigError> {
    let channel = match cfg {
        InputConfig::Zero => InputChannel::Zero,
        InputConfig::Constant(v) => {
            if v.len() != dim {
                return Err(invalid(format!("{what}: expected {dim} components, got {}", v.len())));
            }
            InputChannel::Constant(v.clone())
        }
        InputConfig::Piecewise { times, values } => {
            check_table(what, times, values, dim)?;
            InputChannel::Piecewise { times: times.clone(), values: values.clone() }
        }
        InputConfig::Expr(texts) => {
            if texts.len() != dim {
                return Err(invalid(format!("{what}: expected {dim} expressions, got {}", texts.len())));
            }
            let exprs = texts
                .iter()
                .enumerate()
                .map(|(c, text)| {
                    parse_expr(text, Scope::time_only(delays)).map_err(expr_err(format!("{what}[{}]", c + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            InputChannel::Function { dim, f: time_function(exprs) }
        }
    };
    Ok(channel)
}

fn parse_named_gain(context: String, text: &str) -> Result<KFunction, ConfigError> {
    parse_gain(text).map_err(expr_err(context))
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn gain_digraph(&self) -> Result<GainDigraph, ConfigError> {
        let mut edges = BTreeMap::new();
        for (n, e) in self.gains.edges.iter().enumerate() {
            let g = parse_named_gain(format!("gains.edges[{n}] (gamma_{}{})", e.i, e.j), &e.gain)?;
            if edges.insert((e.i, e.j), g).is_some() {
                return Err(invalid(format!("gain ({}, {}) declared twice", e.i, e.j)));
            }
        }
        let nodes = |list: &[NodeGain], what: &str| -> Result<BTreeMap<usize, KFunction>, ConfigError> {
            let mut out = BTreeMap::new();
            for (n, g) in list.iter().enumerate() {
                let f = parse_named_gain(format!("gains.{what}[{n}]"), &g.gain)?;
                if out.insert(g.i, f).is_some() {
                    return Err(invalid(format!("gains.{what}: subsystem {} declared twice", g.i)));
                }
            }
            Ok(out)
        };
        let input = nodes(&self.gains.input, "input")?;
        let sigma = nodes(&self.gains.sigma, "sigma")?;
        GainDigraph::new(self.subsystems.len(), edges, input, sigma).map_err(|e| invalid(format!("gains: {e}")))
    }

    pub fn build(&self) -> Result<SystemBundle, ConfigError> {
        let k = self.subsystems.len();
        if k == 0 {
            return Err(invalid("subsystems: at least one subsystem is required"));
        }
        for (name, d) in &self.delays {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(invalid(format!("delay {name} = {d} must be finite and >= 0")));
            }
        }
        let declared: Vec<f64> = self.delays.values().copied().collect();
        let dims: Vec<usize> = self.subsystems.iter().map(|s| s.dim).collect();

        let mut subsystems = Vec::with_capacity(k);
        for (idx, s) in self.subsystems.iter().enumerate() {
            let i = idx + 1;
            if s.dim == 0 {
                return Err(invalid(format!("subsystems[{i}]: dim must be >= 1")));
            }
            if s.rhs.len() != s.dim {
                return Err(invalid(format!(
                    "subsystems[{i}]: {} right-hand side expressions for dimension {}",
                    s.rhs.len(),
                    s.dim
                )));
            }
            let scope = Scope { own: i, dims: &dims, input_dim: s.inputs, delays: &self.delays };
            let exprs = s
                .rhs
                .iter()
                .enumerate()
                .map(|(c, text)| parse_expr(text, scope).map_err(expr_err(format!("subsystems[{i}].rhs[{}]", c + 1))))
                .collect::<Result<Vec<_>, _>>()?;
            let mut refs = BTreeSet::new();
            exprs.iter().for_each(|e| e.references(&mut refs));
            refs.remove(&i);
            subsystems.push(Subsystem {
                dim: s.dim,
                input_dim: s.inputs,
                delays: declared.clone(),
                references: refs.into_iter().collect(),
                rhs: Arc::new(ExprRhs { exprs }),
            });
        }
        let system = build_interconnection(subsystems)?;
        let gains = self.gain_digraph()?;

        let history = if self.history.is_empty() {
            HistoryFunction::constant(dims.iter().map(|&d| vec![0.0; d]).collect())
        } else {
            if self.history.len() != k {
                return Err(invalid(format!("history: {} entries for {k} subsystems", self.history.len())));
            }
            let segments = self
                .history
                .iter()
                .zip(&dims)
                .enumerate()
                .map(|(idx, (h, &dim))| self.history_segment(idx + 1, h, dim))
                .collect::<Result<Vec<_>, _>>()?;
            HistoryFunction::new(segments)
        };

        let input_dims: Vec<usize> = self.subsystems.iter().map(|s| s.inputs).collect();
        let input = self.input_signal("input", &self.input, &input_dims)?;

        let sim = SimOptions {
            horizon: self.simulation.horizon,
            step: self.simulation.step,
            divergence_threshold: self.simulation.divergence_threshold,
        };
        if !(sim.horizon.is_finite() && sim.horizon >= 0.0) {
            return Err(invalid(format!("simulation.horizon must be finite and >= 0, got {}", sim.horizon)));
        }
        if !(sim.step.is_finite() && sim.step > 0.0) {
            return Err(invalid(format!("simulation.step must be finite and > 0, got {}", sim.step)));
        }
        if sim.divergence_threshold.is_nan() || sim.divergence_threshold <= 0.0 {
            return Err(invalid("simulation.divergence_threshold must be > 0"));
        }

        let c = &self.checks;
        c.grid.validate().map_err(|e| invalid(format!("checks.grid: {e}")))?;
        if !(c.eps.is_finite() && c.eps > 0.0) {
            return Err(invalid(format!("checks.eps must be > 0, got {}", c.eps)));
        }
        if !(c.tail_fraction > 0.0 && c.tail_fraction < 1.0) {
            return Err(invalid(format!("checks.tail_fraction must lie in (0, 1), got {}", c.tail_fraction)));
        }
        if !(c.ag_tolerance.is_finite() && c.ag_tolerance >= 0.0) {
            return Err(invalid("checks.ag_tolerance must be finite and >= 0"));
        }
        if !(c.random_history_scale.is_finite() && c.random_history_scale >= 0.0) {
            return Err(invalid("checks.random_history_scale must be finite and >= 0"));
        }

        let auxiliary = match &self.auxiliary {
            None => None,
            Some(aux) => {
                let rho = parse_named_gain("auxiliary.rho".into(), &aux.rho)?;
                let d = self.input_signal("auxiliary.disturbance", &aux.disturbance, &input_dims)?;
                Some((rho, d))
            }
        };

        Ok(SystemBundle {
            config: self.clone(),
            system,
            gains,
            history,
            input,
            sim,
            checks: *c,
            auxiliary,
        })
    }

    fn history_segment(&self, i: usize, h: &HistoryConfig, dim: usize) -> Result<HistorySegment, ConfigError> {
        let what = format!("history[{i}]");
        let count = |n: usize| {
            if n == dim {
                Ok(())
            } else {
                Err(invalid(format!("{what}: expected {dim} components, got {n}")))
            }
        };
        Ok(match h {
            HistoryConfig::Constant(v) => {
                count(v.len())?;
                HistorySegment::Constant(v.clone())
            }
            HistoryConfig::Polynomial(c) => {
                count(c.len())?;
                HistorySegment::Polynomial(c.clone())
            }
            HistoryConfig::Table { times, values } => {
                check_table(&what, times, values, dim)?;
                HistorySegment::Table { times: times.clone(), values: values.clone() }
            }
            HistoryConfig::Expr(texts) => {
                count(texts.len())?;
                let exprs = texts
                    .iter()
                    .enumerate()
                    .map(|(c, text)| {
                        parse_expr(text, Scope::time_only(&self.delays)).map_err(expr_err(format!("{what}[{}]", c + 1)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                HistorySegment::Function { dim, f: time_function(exprs) }
            }
        })
    }

    fn input_signal(&self, what: &str, list: &[InputConfig], dims: &[usize]) -> Result<InputSignal, ConfigError> {
        if list.is_empty() {
            return Ok(InputSignal::zero(dims.len()));
        }
        if list.len() != dims.len() {
            return Err(invalid(format!("{what}: {} entries for {} subsystems", list.len(), dims.len())));
        }
        let channels = list
            .iter()
            .zip(dims)
            .enumerate()
            .map(|(idx, (cfg, &dim))| build_input(&format!("{what}[{}]", idx + 1), cfg, dim, &self.delays))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(InputSignal::new(channels))
    }
}

/// Parses and validates a JSON configuration.
pub fn parse_system(json: &str) -> Result<SystemBundle, ConfigError> {
    SystemConfig::from_json(json)?.build()
}

/// Reads and validates a configuration file.
pub fn load_system(path: &std::path::Path) -> Result<SystemBundle, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_system(&text)
}
