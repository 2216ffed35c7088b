use super::{
    BlowUp, DelaySystemSpec, HistoryFunction, InputSignal, RhsContext, SimError, Trajectory,
};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub step: f64,
    pub divergence_threshold: f64,
}

impl SimOptions {
    pub fn new(horizon: f64, step: f64) -> Self {
        SimOptions { horizon, step, divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD }
    }
}

/// Fixed-step RK4 on `[0, T]`, where `T` is rounded up to a whole number of
/// steps.
pub fn simulate(
    sys: &DelaySystemSpec,
    hist: &HistoryFunction,
    u: &InputSignal,
    horizon: f64,
    step: f64,
) -> Result<Trajectory, SimError> {
    simulate_with(sys, hist, u, &SimOptions::new(horizon, step))
}

fn check_commensurate(step: f64, delays: &[f64]) -> Result<(), SimError> {
    for &delay in delays.iter().filter(|&&d| d > 0.0) {
        let ratio = delay / step;
        let whole = ratio.round();
        if whole < 1.0 || (ratio - whole).abs() > 1e-12 * ratio.max(1.0) {
            return Err(SimError::Incommensurable { step, delay, ratio });
        }
    }
    Ok(())
}

struct Stepper<'a> {
    sys: &'a DelaySystemSpec,
    input: &'a InputSignal,
    u_buf: Vec<Vec<f64>>,
}

impl Stepper<'_> {
    fn rhs(&mut self, traj: &Trajectory, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        let ctx = RhsContext::new(t, x, traj);
        for (idx, sub) in self.sys.subsystems().iter().enumerate() {
            let i = idx + 1;
            let (off, dim) = traj.block(i);
            let u = &mut self.u_buf[idx];
            if !u.is_empty() {
                self.input.eval_into(i, t, u);
            }
            sub.rhs.eval(&ctx, u, &mut out[off..off + dim]);
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SimError::NonFinite { t, state: x.to_vec() })
        }
    }
}

pub fn simulate_with(
    sys: &DelaySystemSpec,
    hist: &HistoryFunction,
    u: &InputSignal,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let h = opts.step;
    if !(h.is_finite() && h > 0.0) {
        return Err(SimError::BadStep { step: h });
    }
    if !(opts.horizon.is_finite() && opts.horizon >= 0.0) {
        return Err(SimError::BadHorizon { horizon: opts.horizon });
    }
    check_commensurate(h, sys.delays())?;
    hist.validate(&sys.dims(), sys.theta())?;
    u.validate(&sys.input_dims())?;

    let ratio = opts.horizon / h;
    let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };

    let mut traj = Trajectory::empty(h, opts.horizon, sys.theta(), sys.delays().to_vec(), sys.dims(), hist.clone());
    let n = traj.total_dim();
    let mut stepper = Stepper {
        sys,
        input: u,
        u_buf: sys.input_dims().into_iter().map(|d| vec![0.0; d]).collect(),
    };

    let mut x = vec![0.0; n];
    for j in 1..=sys.k() {
        let (off, dim) = traj.block(j);
        hist.eval_into(j, 0.0, &mut x[off..off + dim]);
    }
    traj.states.extend_from_slice(&x);

    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut y = vec![0.0; n];
    for step in 0..steps {
        let t = step as f64 * h;
        stepper.rhs(&traj, t, &x, &mut k1)?;
        traj.derivs.extend_from_slice(&k1);

        let stages = (|| -> Result<(), SimError> {
            for c in 0..n {
                y[c] = x[c] + 0.5 * h * k1[c];
            }
            stepper.rhs(&traj, t + 0.5 * h, &y, &mut k2)?;
            for c in 0..n {
                y[c] = x[c] + 0.5 * h * k2[c];
            }
            stepper.rhs(&traj, t + 0.5 * h, &y, &mut k3)?;
            for c in 0..n {
                y[c] = x[c] + h * k3[c];
            }
            stepper.rhs(&traj, t + h, &y, &mut k4)
        })();
        if let Err(err) = stages {
            // A stage that already left the divergence region is an escape,
            // not a defect of the right-hand side.
            if traj.block_norm_of(&y) > opts.divergence_threshold {
                traj.states.extend(y.iter().copied());
                traj.derivs.extend(std::iter::repeat_n(f64::NAN, n));
                traj.blow_up = Some(BlowUp { time: t + h, norm: traj.block_norm_of(&y) });
                return Ok(traj);
            }
            return Err(err);
        }

        for c in 0..n {
            x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(SimError::NonFinite { t: t + h, state: x.clone() });
        }
        traj.states.extend_from_slice(&x);
        let norm = traj.block_norm_of(&x);
        if norm > opts.divergence_threshold {
            // Secant slope stands in for the derivative at the escape node.
            let prev = traj.state(step).to_vec();
            traj.derivs.extend(x.iter().zip(&prev).map(|(a, b)| (a - b) / h));
            traj.blow_up = Some(BlowUp { time: t + h, norm });
            return Ok(traj);
        }
    }

    let t_end = steps as f64 * h;
    match stepper.rhs(&traj, t_end, &x, &mut k1) {
        Ok(()) => traj.derivs.extend_from_slice(&k1),
        Err(err) if steps == 0 => return Err(err),
        Err(_) => {
            let prev = traj.state(steps - 1).to_vec();
            traj.derivs.extend(x.iter().zip(&prev).map(|(a, b)| (a - b) / h));
        }
    }
    Ok(traj)
}
