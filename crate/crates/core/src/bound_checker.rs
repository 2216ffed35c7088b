//! Checks of the stability estimates (GS, AG, GAS) along simulated trajectories.
//!
//! Norms are Euclidean inside a subsystem and the maximum over subsystems
//! for the stacked state. Suprema are taken over the step grid plus the
//! interval endpoints; between nodes the Hermite interpolant may overshoot
//! the grid maximum by `O(h^4)`, which is ignored.
//!
//! The limit superior is estimated from a finite tail window. Every estimate
//! carries the tail suprema over the horizons `T/4`, `T/2` and `T` so that a
//! reader can see whether the tail has settled.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::dde_sim::{BlowUp, Trajectory};
use crate::gain_algebra::KFunction;
use crate::gain_graph::GainDigraph;
use crate::gain_reduction::{combined_initial_constant, ClosedLoopGains};

/// Relative slack used to call a sequence of tail suprema non-increasing.
pub const SETTLING_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("interval [{a}, {b}] is not inside the trajectory domain [{lo}, {hi}]")]
    OutsideDomain { a: f64, b: f64, lo: f64, hi: f64 },
    #[error("tail fraction must lie in (0, 1), got {0}")]
    TailFraction(f64),
    #[error("trajectory blew up at t = {time}")]
    BlownUp { time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Gs,
    Ag,
    Gas,
}

impl PropertyKind {
    pub fn label(self) -> &'static str {
        match self {
            PropertyKind::Gs => "GS",
            PropertyKind::Ag => "AG",
            PropertyKind::Gas => "GAS",
        }
    }
}

/// Which part of a check failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Pointwise,
    Tail,
    BlowUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    #[serde(rename = "violation")]
    pub kind: ViolationKind,
    pub t: f64,
    pub norm: f64,
    pub bound: f64,
    /// Offending subsystem; `None` for the stacked state.
    pub subsystem: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum BoundVerdict {
    Holds,
    Violated(Witness),
}

impl BoundVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, BoundVerdict::Holds)
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            BoundVerdict::Violated(w) => Some(w),
            BoundVerdict::Holds => None,
        }
    }
}

/// Tail-window estimate of `limsup |x(t)|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimsupEstimate {
    /// `None` for the stacked state.
    pub subsystem: Option<usize>,
    pub value: f64,
    /// Time at which the tail supremum is attained.
    pub at: f64,
    pub horizons: Vec<f64>,
    pub tail_sups: Vec<f64>,
    /// Tail suprema are non-increasing (up to [`SETTLING_TOLERANCE`]).
    pub settled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub horizon: f64,
    pub end_time: f64,
    pub tail_fraction: Option<f64>,
    pub tail_window: Option<(f64, f64)>,
    pub blow_up: Option<BlowUp>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: PropertyKind,
    #[serde(flatten)]
    pub verdict: BoundVerdict,
    /// Smallest `bound - |x|` over the checked grid (negative when violated).
    pub worst_margin: f64,
    pub worst_margin_time: f64,
    /// Per-subsystem bound constants (one entry for stacked-state checks).
    pub bounds: Vec<f64>,
    /// Initial constant `c` for GS checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_constant: Option<f64>,
    pub limsup: Vec<LimsupEstimate>,
    pub diagnostics: Diagnostics,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.verdict.holds()
    }
}

fn diagnostics(traj: &Trajectory, tail_fraction: Option<f64>) -> Diagnostics {
    let end = traj.end_time();
    Diagnostics {
        horizon: traj.horizon(),
        end_time: end,
        tail_fraction,
        tail_window: tail_fraction.map(|f| (end * (1.0 - f), end)),
        blow_up: traj.blow_up(),
        notes: Vec::new(),
    }
}

fn check_interval(traj: &Trajectory, a: f64, b: f64) -> Result<(), BoundError> {
    let (lo, hi) = (-traj.theta(), traj.end_time());
    let slack = 1e-9 * traj.step();
    if !(a <= b && a >= lo - slack && b <= hi + slack) {
        return Err(BoundError::OutsideDomain { a, b, lo, hi });
    }
    Ok(())
}

/// Max of `norm(t)` over grid times in `[a, b]` and both endpoints.
fn sup_over<F: Fn(f64) -> f64>(traj: &Trajectory, a: f64, b: f64, norm: F) -> (f64, f64) {
    let h = traj.step();
    let mut best = (norm(a), a);
    let end = norm(b);
    if end > best.0 {
        best = (end, b);
    }
    let first = (a / h).ceil() as i64;
    let last = (b / h).floor() as i64;
    for n in first..=last {
        let t = n as f64 * h;
        let v = norm(t);
        if v > best.0 {
            best = (v, t);
        }
    }
    best
}

fn clamp_to_domain(traj: &Trajectory, a: f64, b: f64) -> (f64, f64) {
    (a.max(-traj.theta()), b.min(traj.end_time()))
}

/// `sup |x(t)|` over `[a, b]` with the block-max norm.
pub fn sup_norm(traj: &Trajectory, a: f64, b: f64) -> Result<f64, BoundError> {
    check_interval(traj, a, b)?;
    let (a, b) = clamp_to_domain(traj, a, b);
    Ok(sup_over(traj, a, b, |t| traj.block_norm_at(t)).0)
}

/// `sup |x_i(t)|` over `[a, b]`.
pub fn subsystem_sup_norm(traj: &Trajectory, i: usize, a: f64, b: f64) -> Result<f64, BoundError> {
    check_interval(traj, a, b)?;
    let (a, b) = clamp_to_domain(traj, a, b);
    Ok(sup_over(traj, a, b, |t| traj.subsystem_norm_at(i, t)).0)
}

fn limsup_with<F: Fn(f64) -> f64>(
    traj: &Trajectory,
    subsystem: Option<usize>,
    tail_fraction: f64,
    norm: F,
) -> Result<LimsupEstimate, BoundError> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(BoundError::TailFraction(tail_fraction));
    }
    if let Some(b) = traj.blow_up() {
        return Err(BoundError::BlownUp { time: b.time });
    }
    let end = traj.end_time();
    let horizons = vec![end / 4.0, end / 2.0, end];
    let tails: Vec<(f64, f64)> = horizons.iter().map(|&hz| sup_over(traj, hz * (1.0 - tail_fraction), hz, &norm)).collect();
    let tail_sups: Vec<f64> = tails.iter().map(|t| t.0).collect();
    let settled = tail_sups.windows(2).all(|w| w[1] <= w[0] * (1.0 + SETTLING_TOLERANCE) + f64::MIN_POSITIVE);
    let (value, at) = tails[2];
    Ok(LimsupEstimate { subsystem, value, at, horizons, tail_sups, settled })
}

/// Tail estimate of `limsup |x(t)|` (block-max norm): the supremum over the
/// last `tail_fraction` of the simulated horizon.
pub fn limsup_estimate(traj: &Trajectory, tail_fraction: f64) -> Result<LimsupEstimate, BoundError> {
    limsup_with(traj, None, tail_fraction, |t| traj.block_norm_at(t))
}

pub fn subsystem_limsup_estimate(traj: &Trajectory, i: usize, tail_fraction: f64) -> Result<LimsupEstimate, BoundError> {
    limsup_with(traj, Some(i), tail_fraction, |t| traj.subsystem_norm_at(i, t))
}

fn blow_up_verdict(traj: &Trajectory, bound: f64, subsystem: Option<usize>) -> Option<BoundVerdict> {
    traj.blow_up().map(|b| {
        BoundVerdict::Violated(Witness { kind: ViolationKind::BlowUp, t: b.time, norm: b.norm, bound, subsystem })
    })
}

/// Checks `|x_i(t_n)| <= bounds[i-1]` at every node `t_n >= 0`. The witness
/// is the earliest violation.
pub fn check_pointwise(traj: &Trajectory, kind: PropertyKind, bounds: &[f64]) -> BoundReport {
    assert_eq!(bounds.len(), traj.k(), "one bound per subsystem");
    let mut worst = (f64::INFINITY, 0.0);
    let mut first: Option<Witness> = None;
    let last_valid = if traj.blow_up().is_some() { traj.len().saturating_sub(1) } else { traj.len() };
    for n in 0..last_valid {
        let t = traj.time(n);
        for (idx, &bound) in bounds.iter().enumerate() {
            let norm = traj.subsystem_norm(idx + 1, n);
            let margin = bound - norm;
            if margin < worst.0 {
                worst = (margin, t);
            }
            if norm > bound && first.is_none() {
                first = Some(Witness { kind: ViolationKind::Pointwise, t, norm, bound, subsystem: Some(idx + 1) });
            }
        }
    }
    let verdict = match first {
        Some(w) => BoundVerdict::Violated(w),
        None => blow_up_verdict(traj, bounds.iter().copied().fold(0.0, f64::max), None).unwrap_or(BoundVerdict::Holds),
    };
    if let (BoundVerdict::Violated(w), true) = (&verdict, worst.0.is_infinite()) {
        worst = (-f64::INFINITY, w.t);
    }
    BoundReport {
        kind,
        verdict,
        worst_margin: worst.0,
        worst_margin_time: worst.1,
        bounds: bounds.to_vec(),
        initial_constant: None,
        limsup: Vec::new(),
        diagnostics: diagnostics(traj, None),
    }
}

/// Per-subsystem history norms `‖ξ_i‖` on `[-θ, 0]`.
pub fn history_norms(traj: &Trajectory) -> Vec<f64> {
    (1..=traj.k()).map(|i| traj.history().sup_norm(i, traj.theta(), traj.step())).collect()
}

/// Uniform GS estimate `|x_i(t)| <= max{σ̃_i(c), γ̃_i^u(‖u‖)}` with `c` the
/// combined initial constant of the history.
pub fn check_gs(traj: &Trajectory, gains: &GainDigraph, closed: &ClosedLoopGains, u_norm: f64) -> BoundReport {
    let c = combined_initial_constant(gains, &history_norms(traj));
    let bounds: Vec<f64> = (1..=traj.k()).map(|i| closed.gs_bound(i, c, u_norm)).collect();
    let mut report = check_pointwise(traj, PropertyKind::Gs, &bounds);
    report.initial_constant = Some(c);
    report
}

/// AG estimate `limsup |x_i| <= γ̂_i^u(‖u‖)`, with an absolute tolerance for
/// the finite-horizon tail.
pub fn check_ag(
    traj: &Trajectory,
    closed: &ClosedLoopGains,
    u_norm: f64,
    tail_fraction: f64,
    abs_tol: f64,
) -> Result<BoundReport, BoundError> {
    let bounds: Vec<f64> = (1..=traj.k()).map(|i| closed.asymptotic_bound(i, u_norm)).collect();
    let mut diag = diagnostics(traj, Some(tail_fraction));
    if let Some(v) = blow_up_verdict(traj, bounds.iter().copied().fold(0.0, f64::max), None) {
        let w = *v.witness().unwrap();
        diag.notes.push("trajectory blew up; no limsup estimate".into());
        return Ok(BoundReport {
            kind: PropertyKind::Ag,
            verdict: v,
            worst_margin: -f64::INFINITY,
            worst_margin_time: w.t,
            bounds,
            initial_constant: None,
            limsup: Vec::new(),
            diagnostics: diag,
        });
    }
    let mut limsup = Vec::with_capacity(traj.k());
    let mut worst = (f64::INFINITY, 0.0);
    let mut verdict = BoundVerdict::Holds;
    for i in 1..=traj.k() {
        let est = subsystem_limsup_estimate(traj, i, tail_fraction)?;
        let bound = bounds[i - 1];
        let margin = bound - est.value;
        if margin < worst.0 {
            worst = (margin, est.at);
        }
        if est.value > bound + abs_tol && verdict.holds() {
            verdict = BoundVerdict::Violated(Witness {
                kind: ViolationKind::Tail,
                t: est.at,
                norm: est.value,
                bound,
                subsystem: Some(i),
            });
        }
        if !est.settled {
            diag.notes.push(format!("tail of subsystem {i} has not settled: {:?}", est.tail_sups));
        }
        limsup.push(est);
    }
    diag.notes.push(format!("absolute tolerance {abs_tol}"));
    Ok(BoundReport {
        kind: PropertyKind::Ag,
        verdict,
        worst_margin: worst.0,
        worst_margin_time: worst.1,
        bounds,
        initial_constant: None,
        limsup,
        diagnostics: diag,
    })
}

/// GAS estimate: `|x(t)| <= σ(‖ξ‖)` pointwise and tail supremum below `eps`.
pub fn check_gas(traj: &Trajectory, sigma: &KFunction, eps: f64, tail_fraction: f64) -> Result<BoundReport, BoundError> {
    let xi = history_norms(traj).into_iter().fold(0.0, f64::max);
    let bound = sigma.eval(xi);
    let mut diag = diagnostics(traj, Some(tail_fraction));
    let mut report = check_pointwise(traj, PropertyKind::Gas, &vec![bound; traj.k()]);
    report.bounds = vec![bound];
    if traj.blow_up().is_some() {
        diag.notes.push("trajectory blew up; no limsup estimate".into());
        report.diagnostics = diag;
        return Ok(report);
    }
    let est = limsup_estimate(traj, tail_fraction)?;
    if report.holds() && est.value >= eps {
        report.verdict = BoundVerdict::Violated(Witness {
            kind: ViolationKind::Tail,
            t: est.at,
            norm: est.value,
            bound: eps,
            subsystem: None,
        });
    }
    if !est.settled {
        diag.notes.push(format!("tail has not settled: {:?}", est.tail_sups));
    }
    diag.notes.push(format!("history norm {xi}, tail threshold {eps}"));
    report.limsup = vec![est];
    report.diagnostics = diag;
    Ok(report)
}

/// Splits `a + b` as `max{(1 + 1/ε) a, (1 + ε) b}`, which dominates the sum
/// for every `ε > 0`. Returns the two coefficients.
pub fn epsilon_split(a: f64, b: f64, eps: f64) -> (f64, f64) {
    assert!(eps > 0.0, "epsilon must be positive");
    ((1.0 + 1.0 / eps) * a, (1.0 + eps) * b)
}

/// Plain-text table with one row per report.
pub fn summary_table(rows: &[(String, &BoundReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:<5} {:<9} {:>14} {:>12}", "run", "check", "verdict", "worst margin", "at t");
    for (label, r) in rows {
        let verdict = match &r.verdict {
            BoundVerdict::Holds => "holds".to_string(),
            BoundVerdict::Violated(w) => format!("violated ({:?})", w.kind).to_lowercase(),
        };
        let _ = writeln!(
            out,
            "{:<24} {:<5} {:<9} {:>14.6e} {:>12.4}",
            label,
            r.kind.label(),
            verdict,
            r.worst_margin,
            r.worst_margin_time
        );
    }
    out
}
