//! Built-in three-subsystem example with a single delay `Δ`:
//!
//! ```text
//! x1' = -3 x1   + v2(t-Δ)^2 / (1 + v2(t-Δ)^2)
//! x2' = -3/2 x2 + v3(t-Δ)^3
//! x3' = -2 x3   + v1(t-Δ)^2
//! ```
//!
//! with `v_i = x_i`, GS gains `σ1 = 7s`, `σ2 = 4s`, `σ3 = 3s` and
//! interconnection gains `γ12 = s^2/(2(1+s^2))`, `γ23 = s^3`, `γ31 = s^2`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::dde_sim::{build_interconnection, DelaySystemSpec, RhsContext, Subsystem, SubsystemRhs};
use crate::gain_algebra::KFunction;
use crate::gain_graph::GainDigraph;

/// Bundled JSON configuration describing the same example.
pub const EXAMPLE_CONFIG: &str = include_str!("../configs/example_three_loop.json");

pub fn example_gains() -> GainDigraph {
    let edges = BTreeMap::from([
        ((1, 2), KFunction::saturating(0.5, 2.0).unwrap()),
        ((2, 3), KFunction::power(3.0).unwrap()),
        ((3, 1), KFunction::power(2.0).unwrap()),
    ]);
    let sigma = BTreeMap::from([
        (1, KFunction::linear(7.0).unwrap()),
        (2, KFunction::linear(4.0).unwrap()),
        (3, KFunction::linear(3.0).unwrap()),
    ]);
    GainDigraph::new(3, edges, BTreeMap::new(), sigma).expect("example gains are valid")
}

struct ExampleRhs {
    which: usize,
    delta: f64,
}

impl SubsystemRhs for ExampleRhs {
    fn eval(&self, ctx: &RhsContext<'_>, _u: &[f64], out: &mut [f64]) {
        let own = ctx.state(self.which)[0];
        out[0] = match self.which {
            1 => {
                let v2 = ctx.delayed(2, self.delta)[0];
                -3.0 * own + v2 * v2 / (1.0 + v2 * v2)
            }
            2 => {
                let v3 = ctx.delayed(3, self.delta)[0];
                -1.5 * own + v3 * v3 * v3
            }
            _ => {
                let v1 = ctx.delayed(1, self.delta)[0];
                -2.0 * own + v1 * v1
            }
        };
    }
}

/// The example system for a delay `delta > 0`.
pub fn example_system(delta: f64) -> DelaySystemSpec {
    assert!(delta > 0.0 && delta.is_finite(), "delay must be positive, got {delta}");
    let subsystem = |which: usize, source: usize| Subsystem {
        dim: 1,
        input_dim: 0,
        delays: vec![delta],
        references: vec![source],
        rhs: Arc::new(ExampleRhs { which, delta }),
    };
    build_interconnection(vec![subsystem(1, 2), subsystem(2, 3), subsystem(3, 1)])
        .expect("example interconnection is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde_sim::{simulate, HistoryFunction, InputSignal};

    #[test]
    fn spec_has_delay_theta() {
        let sys = example_system(1.0);
        assert_eq!(sys.k(), 3);
        assert_eq!(sys.theta(), 1.0);
        assert_eq!(sys.total_dim(), 3);
    }

    #[test]
    fn rhs_point_values() {
        // x3' at x3 = 0 with v1(t-Δ) = 2 is 4; x1' at zero state is 0.
        let sys = example_system(1.0);
        let hist = HistoryFunction::constant(vec![vec![2.0], vec![0.0], vec![0.0]]);
        let traj = simulate(&sys, &hist, &InputSignal::zero(3), 0.0, 0.5).unwrap();
        assert_eq!(traj.derivative(0)[2], 4.0);
        let zero = HistoryFunction::constant(vec![vec![0.0]; 3]);
        let traj = simulate(&sys, &zero, &InputSignal::zero(3), 0.0, 0.5).unwrap();
        assert_eq!(traj.derivative(0)[0], 0.0);
    }
}
