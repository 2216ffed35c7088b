use std::fmt;
use std::sync::Arc;

use super::{euclidean, SimError};

/// Closed-form vector signal `t -> out`.
pub type SignalFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Initial history of one subsystem on `[-θ, 0]`.
#[derive(Clone)]
pub enum HistorySegment {
    Constant(Vec<f64>),
    /// Per component, coefficients `c_0 + c_1 t + c_2 t^2 + ...`.
    Polynomial(Vec<Vec<f64>>),
    /// Linear interpolation through `(times[k], values[k])`; `times` ascending.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
    Function { dim: usize, f: SignalFn },
}

impl fmt::Debug for HistorySegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistorySegment::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            HistorySegment::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            HistorySegment::Table { times, values } => {
                f.debug_struct("Table").field("times", times).field("values", values).finish()
            }
            HistorySegment::Function { dim, .. } => f.debug_struct("Function").field("dim", dim).finish(),
        }
    }
}

impl HistorySegment {
    pub fn dim(&self) -> usize {
        match self {
            HistorySegment::Constant(v) => v.len(),
            HistorySegment::Polynomial(c) => c.len(),
            HistorySegment::Table { values, .. } => values.first().map_or(0, Vec::len),
            HistorySegment::Function { dim, .. } => *dim,
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            HistorySegment::Constant(v) => out.copy_from_slice(v),
            HistorySegment::Polynomial(coeffs) => {
                for (o, c) in out.iter_mut().zip(coeffs) {
                    *o = c.iter().rev().fold(0.0, |acc, &a| acc * t + a);
                }
            }
            HistorySegment::Table { times, values } => {
                let pos = times.partition_point(|&x| x <= t);
                if pos == 0 {
                    out.copy_from_slice(&values[0]);
                } else if pos == times.len() {
                    out.copy_from_slice(&values[times.len() - 1]);
                } else {
                    let (t0, t1) = (times[pos - 1], times[pos]);
                    let w = (t - t0) / (t1 - t0);
                    for (k, o) in out.iter_mut().enumerate() {
                        *o = values[pos - 1][k] * (1.0 - w) + values[pos][k] * w;
                    }
                }
            }
            HistorySegment::Function { f, .. } => f(t, out),
        }
    }

    fn validate(&self, index: usize, dim: usize, theta: f64) -> Result<(), SimError> {
        let bad = |reason: String| SimError::History { subsystem: index, reason };
        if self.dim() != dim {
            return Err(bad(format!("dimension {} does not match state dimension {dim}", self.dim())));
        }
        match self {
            HistorySegment::Constant(v) if v.iter().any(|x| !x.is_finite()) => {
                Err(bad("non-finite constant".into()))
            }
            HistorySegment::Polynomial(c) if c.iter().flatten().any(|x| !x.is_finite()) => {
                Err(bad("non-finite coefficient".into()))
            }
            HistorySegment::Table { times, values } => {
                if times.len() != values.len() || times.is_empty() {
                    return Err(bad("table needs matching, non-empty time and value lists".into()));
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad("table times must be strictly increasing".into()));
                }
                if values.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
                    return Err(bad("table rows must be finite with one entry per component".into()));
                }
                let tol = 1e-12 * theta.max(1.0);
                if times[0] > -theta + tol || *times.last().unwrap() < -tol {
                    return Err(bad(format!("table must cover [-{theta}, 0]")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Initial data `ξ` for every subsystem.
#[derive(Debug, Clone)]
pub struct HistoryFunction {
    segments: Vec<HistorySegment>,
}

impl HistoryFunction {
    pub fn new(segments: Vec<HistorySegment>) -> Self {
        HistoryFunction { segments }
    }

    /// Constant history, one vector per subsystem.
    pub fn constant(values: Vec<Vec<f64>>) -> Self {
        HistoryFunction::new(values.into_iter().map(HistorySegment::Constant).collect())
    }

    pub fn segments(&self) -> &[HistorySegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Value of subsystem `i` (1-based) at `t <= 0`.
    pub fn eval_into(&self, i: usize, t: f64, out: &mut [f64]) {
        self.segments[i - 1].eval_into(t, out);
    }

    /// Sup of `|ξ_i(t)|` over `[-θ, 0]`, sampled on the grid `-θ + n h`, at
    /// `0`, and at table knots.
    pub fn sup_norm(&self, i: usize, theta: f64, h: f64) -> f64 {
        let seg = &self.segments[i - 1];
        let mut buf = vec![0.0; seg.dim()];
        let mut norm_at = |t: f64| {
            seg.eval_into(t, &mut buf);
            euclidean(&buf)
        };
        let mut best = norm_at(0.0);
        if let HistorySegment::Constant(_) = seg {
            return best;
        }
        let steps = if h > 0.0 { (theta / h).round() as usize } else { 0 };
        for n in 0..steps {
            best = best.max(norm_at(-theta + n as f64 * h));
        }
        best = best.max(norm_at(-theta));
        if let HistorySegment::Table { times, .. } = seg {
            for &t in times.iter().filter(|&&t| (-theta..=0.0).contains(&t)) {
                best = best.max(norm_at(t));
            }
        }
        best
    }

    pub(crate) fn validate(&self, dims: &[usize], theta: f64) -> Result<(), SimError> {
        if self.segments.len() != dims.len() {
            return Err(SimError::History {
                subsystem: 0,
                reason: format!("{} history segments for {} subsystems", self.segments.len(), dims.len()),
            });
        }
        for (index, (seg, &dim)) in self.segments.iter().zip(dims).enumerate() {
            seg.validate(index + 1, dim, theta)?;
        }
        Ok(())
    }
}

/// External input of one subsystem on `[0, T]`.
#[derive(Clone)]
pub enum InputChannel {
    Zero,
    Constant(Vec<f64>),
    /// `values[k]` holds on `[times[k], times[k+1])`; the last value holds
    /// afterwards and the first one before `times[0]`.
    Piecewise { times: Vec<f64>, values: Vec<Vec<f64>> },
    Function { dim: usize, f: SignalFn },
}

impl fmt::Debug for InputChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputChannel::Zero => write!(f, "Zero"),
            InputChannel::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            InputChannel::Piecewise { times, values } => {
                f.debug_struct("Piecewise").field("times", times).field("values", values).finish()
            }
            InputChannel::Function { dim, .. } => f.debug_struct("Function").field("dim", dim).finish(),
        }
    }
}

impl InputChannel {
    /// `None` for the zero channel, which adapts to any dimension.
    pub fn dim(&self) -> Option<usize> {
        match self {
            InputChannel::Zero => None,
            InputChannel::Constant(v) => Some(v.len()),
            InputChannel::Piecewise { values, .. } => values.first().map(Vec::len),
            InputChannel::Function { dim, .. } => Some(*dim),
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            InputChannel::Zero => out.fill(0.0),
            InputChannel::Constant(v) => out.copy_from_slice(v),
            InputChannel::Piecewise { times, values } => {
                let pos = times.partition_point(|&x| x <= t).saturating_sub(1);
                out.copy_from_slice(&values[pos]);
            }
            InputChannel::Function { f, .. } => f(t, out),
        }
    }

    /// Sup of `|u(t)|` on `[0, horizon]`. Closed-form channels are sampled
    /// at `h / 2` spacing.
    pub fn sup_norm(&self, horizon: f64, h: f64) -> f64 {
        match self {
            InputChannel::Zero => 0.0,
            InputChannel::Constant(v) => euclidean(v),
            InputChannel::Piecewise { times, values } => {
                let active = times.iter().zip(values).enumerate().filter(|(k, (&t, _))| {
                    let next = times.get(k + 1).copied().unwrap_or(f64::INFINITY);
                    let start = if *k == 0 { f64::NEG_INFINITY } else { t };
                    next > 0.0 && start <= horizon
                });
                active.map(|(_, (_, v))| euclidean(v)).fold(0.0, f64::max)
            }
            InputChannel::Function { dim, f } => {
                let mut buf = vec![0.0; *dim];
                let n = if h > 0.0 { (2.0 * horizon / h).ceil() as usize } else { 0 };
                (0..=n)
                    .map(|k| {
                        f((k as f64 * h / 2.0).min(horizon), &mut buf);
                        euclidean(&buf)
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    fn validate(&self, index: usize, dim: usize) -> Result<(), SimError> {
        let bad = |reason: String| SimError::Input { subsystem: index, reason };
        if let Some(d) = self.dim() {
            if d != dim {
                return Err(bad(format!("dimension {d} does not match input dimension {dim}")));
            }
        }
        match self {
            InputChannel::Constant(v) if v.iter().any(|x| !x.is_finite()) => {
                Err(bad("non-finite constant".into()))
            }
            InputChannel::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(bad("piecewise input needs matching, non-empty lists".into()));
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad("piecewise times must be strictly increasing".into()));
                }
                if values.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(bad("non-finite piecewise value".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// External inputs `u_i` of all subsystems.
#[derive(Debug, Clone)]
pub struct InputSignal {
    channels: Vec<InputChannel>,
}

impl InputSignal {
    pub fn new(channels: Vec<InputChannel>) -> Self {
        InputSignal { channels }
    }

    pub fn zero(k: usize) -> Self {
        InputSignal::new(vec![InputChannel::Zero; k])
    }

    pub fn channels(&self) -> &[InputChannel] {
        &self.channels
    }

    pub fn eval_into(&self, i: usize, t: f64, out: &mut [f64]) {
        self.channels[i - 1].eval_into(t, out);
    }

    /// `‖u‖` on `[0, horizon]`: the largest channel norm.
    pub fn sup_norm(&self, horizon: f64, h: f64) -> f64 {
        self.channels.iter().map(|c| c.sup_norm(horizon, h)).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.channels.iter().all(|c| matches!(c, InputChannel::Zero))
    }

    pub(crate) fn validate(&self, input_dims: &[usize]) -> Result<(), SimError> {
        if self.channels.len() != input_dims.len() {
            return Err(SimError::Input {
                subsystem: 0,
                reason: format!("{} input channels for {} subsystems", self.channels.len(), input_dims.len()),
            });
        }
        for (index, (c, &dim)) in self.channels.iter().zip(input_dims).enumerate() {
            c.validate(index + 1, dim)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_forms() {
        let mut out = [0.0];
        HistorySegment::Polynomial(vec![vec![1.0, 2.0, 3.0]]).eval_into(-1.0, &mut out);
        assert_eq!(out[0], 1.0 - 2.0 + 3.0);
        let table = HistorySegment::Table { times: vec![-1.0, 0.0], values: vec![vec![2.0], vec![4.0]] };
        table.eval_into(-0.25, &mut out);
        assert_eq!(out[0], 3.5);
        assert!(table.validate(1, 1, 1.0).is_ok());
        assert!(table.validate(1, 1, 2.0).is_err());
        assert!(table.validate(1, 2, 1.0).is_err());
    }

    #[test]
    fn history_sup_norm() {
        let hist = HistoryFunction::new(vec![
            HistorySegment::Constant(vec![3.0, 4.0]),
            HistorySegment::Polynomial(vec![vec![0.0, -2.0]]),
        ]);
        assert_eq!(hist.sup_norm(1, 1.0, 0.1), 5.0);
        assert!((hist.sup_norm(2, 1.0, 0.1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn piecewise_input() {
        let c = InputChannel::Piecewise { times: vec![0.0, 1.0, 5.0], values: vec![vec![1.0], vec![-3.0], vec![0.5]] };
        let mut out = [0.0];
        c.eval_into(0.5, &mut out);
        assert_eq!(out[0], 1.0);
        c.eval_into(1.0, &mut out);
        assert_eq!(out[0], -3.0);
        c.eval_into(10.0, &mut out);
        assert_eq!(out[0], 0.5);
        assert_eq!(c.sup_norm(0.9, 0.1), 1.0);
        assert_eq!(c.sup_norm(2.0, 0.1), 3.0);
        assert!(c.validate(1, 1).is_ok());
        assert!(c.validate(1, 2).is_err());
    }

    #[test]
    fn function_input_norm() {
        let f: SignalFn = Arc::new(|t, out| out[0] = t.sin());
        let c = InputChannel::Function { dim: 1, f };
        assert!((c.sup_norm(4.0, 0.01) - 1.0).abs() < 1e-4);
        assert_eq!(InputSignal::zero(3).sup_norm(10.0, 0.1), 0.0);
    }
}
