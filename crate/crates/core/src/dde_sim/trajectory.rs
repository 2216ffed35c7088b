use std::io::{self, Write};

use serde::Serialize;

use super::{euclidean, HistoryFunction};

/// Escape detected when the solution norm exceeded the divergence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowUp {
    pub time: f64,
    pub norm: f64,
}

/// Dense solution on `[-θ, t_N]`.
///
/// Nodes sit at `t_n = n h`. Between nodes the solution is the cubic Hermite
/// interpolant of the stored states and derivatives; before `0` it is the
/// history function.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub(crate) h: f64,
    pub(crate) horizon: f64,
    pub(crate) theta: f64,
    pub(crate) delays: Vec<f64>,
    pub(crate) dims: Vec<usize>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) total_dim: usize,
    pub(crate) history: HistoryFunction,
    pub(crate) states: Vec<f64>,
    pub(crate) derivs: Vec<f64>,
    pub(crate) blow_up: Option<BlowUp>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMetadata {
    pub step: f64,
    pub horizon: f64,
    pub end_time: f64,
    pub theta: f64,
    pub delays: Vec<f64>,
    pub dims: Vec<usize>,
    pub history_rows: usize,
    pub rows: usize,
    pub blow_up: Option<BlowUp>,
}

impl Trajectory {
    pub(crate) fn empty(h: f64, horizon: f64, theta: f64, delays: Vec<f64>, dims: Vec<usize>, history: HistoryFunction) -> Self {
        let offsets = dims
            .iter()
            .scan(0, |acc, &d| {
                let off = *acc;
                *acc += d;
                Some(off)
            })
            .collect();
        let total_dim = dims.iter().sum();
        Trajectory {
            h,
            horizon,
            theta,
            delays,
            dims,
            offsets,
            total_dim,
            history,
            states: Vec::new(),
            derivs: Vec::new(),
            blow_up: None,
        }
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn k(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn history(&self) -> &HistoryFunction {
        &self.history
    }

    pub fn blow_up(&self) -> Option<BlowUp> {
        self.blow_up
    }

    /// Number of nodes `t_0 = 0, ..., t_N`.
    pub fn len(&self) -> usize {
        self.states.len() / self.total_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.h
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.total_dim..(n + 1) * self.total_dim]
    }

    /// `x'(t_n)`; available once the step starting at `t_n` began.
    pub fn derivative(&self, n: usize) -> &[f64] {
        &self.derivs[n * self.total_dim..(n + 1) * self.total_dim]
    }

    /// `(offset, dim)` of subsystem `j` (1-based) in the stacked state.
    pub fn block(&self, j: usize) -> (usize, usize) {
        (self.offsets[j - 1], self.dims[j - 1])
    }

    /// Number of history grid rows strictly before `t = 0`.
    pub fn history_steps(&self) -> usize {
        (self.theta / self.h).round() as usize
    }

    /// Interpolated value of component range `[off, off + out.len())`.
    fn eval_range_into(&self, off: usize, t: f64, out: &mut [f64], history_block: Option<usize>) {
        if t <= 0.0 && (t < 0.0 || self.is_empty()) {
            match history_block {
                Some(j) => self.history.eval_into(j, t, out),
                None => {
                    for j in 1..=self.k() {
                        let (o, d) = self.block(j);
                        self.history.eval_into(j, t, &mut out[o..o + d]);
                    }
                }
            }
            return;
        }
        let last = self.len() - 1;
        let r = t / self.h;
        let mut n = r.floor() as usize;
        let mut w = r - n as f64;
        if n >= last {
            n = last.saturating_sub(1);
            w = if last == 0 { 0.0 } else { 1.0 };
        }
        let width = out.len();
        let have_slopes = (n + 2) * self.total_dim <= self.derivs.len();
        if w < 1e-9 || last == 0 {
            out.copy_from_slice(&self.state(n)[off..off + width]);
        } else if w > 1.0 - 1e-9 {
            out.copy_from_slice(&self.state(n + 1)[off..off + width]);
        } else if !have_slopes {
            let (y0, y1) = (&self.state(n)[off..], &self.state(n + 1)[off..]);
            for c in 0..width {
                out[c] = y0[c] * (1.0 - w) + y1[c] * w;
            }
        } else {
            self.hermite(n, w, off, out);
        }
    }

    /// Cubic Hermite interpolant on `[t_n, t_{n+1}]` at fraction `w`, for
    /// components starting at `off`. Exact at `w = 0` and `w = 1`.
    pub fn hermite(&self, n: usize, w: f64, off: usize, out: &mut [f64]) {
        let (y0, y1) = (&self.state(n)[off..], &self.state(n + 1)[off..]);
        let (f0, f1) = (&self.derivative(n)[off..], &self.derivative(n + 1)[off..]);
        let (w2, w3) = (w * w, w * w * w);
        let h00 = 2.0 * w3 - 3.0 * w2 + 1.0;
        let h10 = w3 - 2.0 * w2 + w;
        let h01 = -2.0 * w3 + 3.0 * w2;
        let h11 = w3 - w2;
        for (c, o) in out.iter_mut().enumerate() {
            *o = h00 * y0[c] + h10 * self.h * f0[c] + h01 * y1[c] + h11 * self.h * f1[c];
        }
    }

    /// Stacked state at any `t` in `[-θ, t_N]`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        self.eval_range_into(0, t, out, None);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.total_dim];
        self.eval_into(t, &mut out);
        out
    }

    /// State of subsystem `j` (1-based) at `t`.
    pub fn eval_block_into(&self, j: usize, t: f64, out: &mut [f64]) {
        let (off, _) = self.block(j);
        self.eval_range_into(off, t, out, Some(j));
    }

    /// `max_i |x_i|` for a stacked state.
    pub fn block_norm_of(&self, x: &[f64]) -> f64 {
        (1..=self.k())
            .map(|j| {
                let (o, d) = self.block(j);
                euclidean(&x[o..o + d])
            })
            .fold(0.0, f64::max)
    }

    pub fn block_norm_at(&self, t: f64) -> f64 {
        self.block_norm_of(&self.eval(t))
    }

    /// `|x_i(t)|` for subsystem `i`.
    pub fn subsystem_norm_at(&self, i: usize, t: f64) -> f64 {
        let (_, d) = self.block(i);
        let mut buf = vec![0.0; d];
        self.eval_block_into(i, t, &mut buf);
        euclidean(&buf)
    }

    /// `|x_i(t_n)|` at node `n`.
    pub fn subsystem_norm(&self, i: usize, n: usize) -> f64 {
        let (o, d) = self.block(i);
        euclidean(&self.state(n)[o..o + d])
    }

    /// Times of all exported rows: history grid, then nodes.
    pub fn row_times(&self) -> Vec<f64> {
        let m = self.history_steps() as i64;
        (-m..0)
            .map(|j| j as f64 * self.h)
            .chain((0..self.len()).map(|n| self.time(n)))
            .collect()
    }

    /// CSV with header `t,x_1,...,x_n`, one row per history grid point and
    /// per node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for c in 1..=self.total_dim {
            write!(w, ",x_{c}")?;
        }
        writeln!(w)?;
        let mut buf = vec![0.0; self.total_dim];
        let m = self.history_steps();
        for (row, t) in self.row_times().into_iter().enumerate() {
            let values: &[f64] = if row < m {
                self.eval_into(t, &mut buf);
                &buf
            } else {
                self.state(row - m)
            };
            write!(w, "{t}")?;
            for v in values {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn metadata(&self) -> TrajectoryMetadata {
        TrajectoryMetadata {
            step: self.h,
            horizon: self.horizon,
            end_time: self.end_time(),
            theta: self.theta,
            delays: self.delays.clone(),
            dims: self.dims.clone(),
            history_rows: self.history_steps(),
            rows: self.history_steps() + self.len(),
            blow_up: self.blow_up,
        }
    }
}
