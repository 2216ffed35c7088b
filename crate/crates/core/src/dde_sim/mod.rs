//! Method-of-steps simulation of interconnected retarded delay equations.
//!
//! Each subsystem `i` evolves as `x_i'(t) = f_i(x_t, u_i(t))`, where the
//! right-hand side may read its own state and the states of other
//! subsystems at the current time or at declared discrete delays. The
//! interconnection is fixed as `v_j = x_j`, so "reading `v_j` at `t - θ`"
//! means reading subsystem `j`'s stored solution.
//!
//! Integration is classical RK4 with a fixed step `h` that divides every
//! positive delay. Delayed arguments of the intermediate stages come from a
//! cubic Hermite interpolant of already-completed steps, or from the history
//! function on `[-θ, 0]`.

mod integrate;
mod signals;
mod trajectory;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::gain_algebra::KFunction;

pub use integrate::{simulate, simulate_with, SimOptions, DEFAULT_DIVERGENCE_THRESHOLD};
pub use signals::{HistoryFunction, HistorySegment, InputChannel, InputSignal, SignalFn};
pub use trajectory::{BlowUp, Trajectory, TrajectoryMetadata};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("system needs at least one subsystem")]
    NoSubsystems,
    #[error("subsystem {subsystem}: {reason}")]
    Subsystem { subsystem: usize, reason: String },
    #[error("subsystem {from} references undeclared subsystem {to}")]
    DanglingReference { from: usize, to: usize },
    #[error("history of subsystem {subsystem}: {reason}")]
    History { subsystem: usize, reason: String },
    #[error("input of subsystem {subsystem}: {reason}")]
    Input { subsystem: usize, reason: String },
    #[error("step {step} must be finite and > 0")]
    BadStep { step: f64 },
    #[error("horizon {horizon} must be finite and >= 0")]
    BadHorizon { horizon: f64 },
    #[error("step {step} does not divide delay {delay} (ratio {ratio})")]
    Incommensurable { step: f64, delay: f64, ratio: f64 },
    #[error("non-finite right-hand side at t = {t}, state {state:?}")]
    NonFinite { t: f64, state: Vec<f64> },
}

pub(crate) fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Right-hand side of one subsystem.
pub trait SubsystemRhs: Send + Sync {
    /// Writes `x_i'(t)` into `out`, given the input value `u`.
    fn eval(&self, ctx: &RhsContext<'_>, u: &[f64], out: &mut [f64]);
}

/// View of the solution available to a right-hand side at a stage time.
pub struct RhsContext<'a> {
    t: f64,
    stage: &'a [f64],
    traj: &'a Trajectory,
}

impl<'a> RhsContext<'a> {
    pub(crate) fn new(t: f64, stage: &'a [f64], traj: &'a Trajectory) -> Self {
        RhsContext { t, stage, traj }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Current (stage) state of subsystem `j`, 1-based.
    pub fn state(&self, j: usize) -> &[f64] {
        let (off, dim) = self.traj.block(j);
        &self.stage[off..off + dim]
    }

    /// `x_j(t - delay)`.
    pub fn delayed(&self, j: usize, delay: f64) -> Vec<f64> {
        let (_, dim) = self.traj.block(j);
        let mut out = vec![0.0; dim];
        self.delayed_into(j, delay, &mut out);
        out
    }

    pub fn delayed_into(&self, j: usize, delay: f64, out: &mut [f64]) {
        if delay <= 0.0 {
            out.copy_from_slice(self.state(j));
            return;
        }
        let when = self.t - delay;
        let known = self.traj.end_time();
        if when <= known + 1e-9 * self.traj.step() {
            self.traj.eval_block_into(j, when.min(known), out);
        } else {
            // Only reachable for delays shorter than the step; blend the last
            // node with the stage value.
            let (off, dim) = self.traj.block(j);
            let last = self.traj.state(self.traj.len() - 1);
            let w = (when - known) / (self.t - known);
            for (c, o) in out.iter_mut().enumerate().take(dim) {
                *o = last[off + c] * (1.0 - w) + self.stage[off + c] * w;
            }
        }
    }

    /// Component `comp` (0-based) of `x_j(t - delay)`.
    pub fn delayed_component(&self, j: usize, comp: usize, delay: f64) -> f64 {
        let (_, dim) = self.traj.block(j);
        if dim <= 8 {
            let mut buf = [0.0; 8];
            self.delayed_into(j, delay, &mut buf[..dim]);
            buf[comp]
        } else {
            self.delayed(j, delay)[comp]
        }
    }

    /// `‖x_t‖ = sup |x(τ)|` over `τ ∈ [t - width, t]` (block-max norm),
    /// sampled at the step grid, the window start and the current stage.
    pub fn window_sup_norm(&self, width: f64) -> f64 {
        let mut best = self.traj.block_norm_of(self.stage);
        if width <= 0.0 {
            return best;
        }
        let h = self.traj.step();
        let start = self.t - width;
        best = best.max(self.traj.block_norm_at(start.min(self.traj.end_time())));
        let first = (start / h).ceil() as i64;
        let last = ((self.t / h).floor() as i64).min(self.traj.len() as i64 - 1);
        for n in first..=last {
            best = best.max(self.traj.block_norm_at(n as f64 * h));
        }
        best
    }
}

/// One subsystem of the interconnection.
#[derive(Clone)]
pub struct Subsystem {
    pub dim: usize,
    pub input_dim: usize,
    /// Delays the right-hand side reads (0 allowed).
    pub delays: Vec<f64>,
    /// Other subsystems (1-based) whose state the right-hand side reads.
    pub references: Vec<usize>,
    pub rhs: Arc<dyn SubsystemRhs>,
}

impl fmt::Debug for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subsystem")
            .field("dim", &self.dim)
            .field("input_dim", &self.input_dim)
            .field("delays", &self.delays)
            .field("references", &self.references)
            .finish_non_exhaustive()
    }
}

/// Closed interconnection with `v_i = x_i`.
#[derive(Debug, Clone)]
pub struct DelaySystemSpec {
    subsystems: Vec<Subsystem>,
    delays: Vec<f64>,
    theta: f64,
}

impl DelaySystemSpec {
    pub fn k(&self) -> usize {
        self.subsystems.len()
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn subsystem(&self, i: usize) -> &Subsystem {
        &self.subsystems[i - 1]
    }

    /// Distinct declared delays, ascending.
    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    /// Largest delay `θ`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.dim).collect()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.input_dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.dim).sum()
    }
}

/// Validates subsystems and closes the loop `v_i = x_i`.
pub fn build_interconnection(subsystems: Vec<Subsystem>) -> Result<DelaySystemSpec, SimError> {
    if subsystems.is_empty() {
        return Err(SimError::NoSubsystems);
    }
    let k = subsystems.len();
    let mut delays = Vec::new();
    for (idx, s) in subsystems.iter().enumerate() {
        let i = idx + 1;
        if s.dim == 0 {
            return Err(SimError::Subsystem { subsystem: i, reason: "state dimension must be >= 1".into() });
        }
        if let Some(&to) = s.references.iter().find(|&&j| j == 0 || j > k) {
            return Err(SimError::DanglingReference { from: i, to });
        }
        for &d in &s.delays {
            if !(d.is_finite() && d >= 0.0) {
                return Err(SimError::Subsystem { subsystem: i, reason: format!("invalid delay {d}") });
            }
            delays.push(d);
        }
    }
    delays.sort_by(f64::total_cmp);
    delays.dedup();
    let theta = delays.last().copied().unwrap_or(0.0);
    Ok(DelaySystemSpec { subsystems, delays, theta })
}

/// Disturbance with every component clamped to `[-1, 1]`, plus one warning
/// per channel that needed clamping. Closed-form channels are clamped when
/// evaluated.
pub fn clamp_disturbance(d: &InputSignal) -> (InputSignal, Vec<String>) {
    let mut warnings = Vec::new();
    let clamp_all = |v: &[f64]| v.iter().map(|x| x.clamp(-1.0, 1.0)).collect::<Vec<_>>();
    let channels = d
        .channels()
        .iter()
        .enumerate()
        .map(|(idx, c)| match c {
            InputChannel::Constant(v) => {
                if v.iter().any(|x| x.abs() > 1.0) {
                    warnings.push(format!("disturbance of subsystem {} clamped to [-1, 1]", idx + 1));
                }
                InputChannel::Constant(clamp_all(v))
            }
            InputChannel::Piecewise { times, values } => {
                if values.iter().flatten().any(|x| x.abs() > 1.0) {
                    warnings.push(format!("disturbance of subsystem {} clamped to [-1, 1]", idx + 1));
                }
                InputChannel::Piecewise { times: times.clone(), values: values.iter().map(|v| clamp_all(v)).collect() }
            }
            InputChannel::Function { dim, f } => {
                let f = f.clone();
                let index = idx + 1;
                let warned = Arc::new(AtomicBool::new(false));
                let clamped: SignalFn = Arc::new(move |t, out| {
                    f(t, out);
                    if out.iter().any(|x| x.abs() > 1.0) && !warned.swap(true, Ordering::Relaxed) {
                        log::warn!("disturbance of subsystem {index} clamped to [-1, 1] at t = {t}");
                    }
                    for x in out.iter_mut() {
                        *x = x.clamp(-1.0, 1.0);
                    }
                });
                InputChannel::Function { dim: *dim, f: clamped }
            }
            InputChannel::Zero => InputChannel::Zero,
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    (InputSignal::new(channels), warnings)
}

struct AuxiliaryRhs {
    inner: Arc<dyn SubsystemRhs>,
    index: usize,
    rho: KFunction,
    disturbance: InputSignal,
    theta: f64,
}

impl SubsystemRhs for AuxiliaryRhs {
    fn eval(&self, ctx: &RhsContext<'_>, _u: &[f64], out: &mut [f64]) {
        let scale = self.rho.eval(ctx.window_sup_norm(self.theta));
        let dim = self.disturbance.channels()[self.index - 1].dim().unwrap_or(0);
        let mut u = vec![0.0; dim];
        self.disturbance.eval_into(self.index, ctx.t(), &mut u);
        for x in &mut u {
            *x *= scale;
        }
        self.inner.eval(ctx, &u, out);
    }
}

/// The auxiliary system with input `u(t) = ρ(‖x_t‖) d(t)`, `|d| <= 1`.
///
/// The result has no external inputs; simulate it with
/// [`InputSignal::zero`].
pub fn build_auxiliary_system(
    sys: &DelaySystemSpec,
    rho: &KFunction,
    d: &InputSignal,
) -> Result<DelaySystemSpec, SimError> {
    d.validate(&sys.input_dims())?;
    let (disturbance, _) = clamp_disturbance(d);
    // A zero channel still has to feed a zero vector of the right length.
    let disturbance = InputSignal::new(
        disturbance
            .channels()
            .iter()
            .zip(sys.subsystems())
            .map(|(c, s)| match c {
                InputChannel::Zero => InputChannel::Constant(vec![0.0; s.input_dim]),
                other => other.clone(),
            })
            .collect(),
    );
    let subsystems = sys
        .subsystems()
        .iter()
        .enumerate()
        .map(|(idx, s)| Subsystem {
            dim: s.dim,
            input_dim: 0,
            delays: s.delays.iter().copied().chain([sys.theta()]).collect(),
            references: (1..=sys.k()).collect::<BTreeSet<_>>().into_iter().collect(),
            rhs: Arc::new(AuxiliaryRhs {
                inner: s.rhs.clone(),
                index: idx + 1,
                rho: rho.clone(),
                disturbance: disturbance.clone(),
                theta: sys.theta(),
            }),
        })
        .collect();
    build_interconnection(subsystems)
}
