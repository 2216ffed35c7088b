//! Closed-loop gain construction by successive elimination.
//!
//! Starting from the max-form inequalities
//!
//! ```text
//! b_i <= max{ γ_ij(b_j) (j != i), γ_i^u(|u|), γ_i^c(c) }
//! ```
//!
//! a node `m` is eliminated by substituting its inequality into every other
//! one: `γ_ij <- max{γ_ij, γ_im ∘ γ_mj}` and likewise for the input channel.
//! Terms `γ_im ∘ γ_mi` acting on `b_i` itself are dropped, which is sound
//! because `γ_im ∘ γ_mi < id` is verified before the elimination. Once two
//! nodes remain, their pair of inequalities is solved directly and the
//! eliminated nodes are recovered by back-substitution in reverse order.
//!
//! The constant channel `γ_i^c` starts as the identity for every node. The
//! same reduction applied to it yields the functions `σ̃_i` of the uniform
//! bound `|x_i(t)| <= max{σ̃_i(c), γ̃_i^u(|u|)}`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::gain_algebra::{
    compose, less_than_identity, max_opt, pointwise_max, GridSpec, KFunction, Verdict,
};
use crate::gain_graph::{check_cyclic_small_gain, GainDigraph, GraphError, OverallVerdict, SmallGainReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error("cyclic small-gain condition not verified ({:?})", .0.overall)]
    SmallGainFailed(Box<SmallGainReport>),
    #[error("two-cycle ({i},{m}) does not satisfy γ_im ∘ γ_mi < id: {verdict:?}")]
    TwoCycleNotContracting { i: usize, m: usize, verdict: Verdict },
    #[error("node {0} is not part of the reduced system")]
    UnknownNode(usize),
    #[error("elimination order must list distinct nodes of 1..={k} and leave at most two")]
    BadOrder { k: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainSlot {
    Edge { i: usize, j: usize },
    Input { i: usize },
    Constant { i: usize },
}

/// What one elimination changed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationStep {
    pub node: usize,
    /// Slots that received a new `γ_im ∘ (·)` term.
    pub introduced: Vec<GainSlot>,
    /// Nodes `i` whose self-term `γ_im ∘ γ_mi` was discarded.
    pub dropped_self_terms: Vec<usize>,
}

/// Inequality of an eliminated node at the moment it was removed.
#[derive(Debug, Clone, PartialEq)]
struct EliminatedRow {
    node: usize,
    edges: BTreeMap<usize, KFunction>,
    input: Option<KFunction>,
    constant: Option<KFunction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    surviving: BTreeSet<usize>,
    edges: BTreeMap<(usize, usize), KFunction>,
    input_gains: BTreeMap<usize, KFunction>,
    constant_gains: BTreeMap<usize, KFunction>,
    rows: Vec<EliminatedRow>,
    trace: Vec<EliminationStep>,
}

fn compose_opt(outer: Option<&KFunction>, inner: Option<&KFunction>) -> Option<KFunction> {
    Some(compose(outer?, inner?))
}

impl ReducedSystem {
    pub fn from_digraph(g: &GainDigraph) -> Self {
        ReducedSystem {
            surviving: g.nodes().collect(),
            edges: g.edges().clone(),
            input_gains: g.input_gains().clone(),
            constant_gains: g.nodes().map(|i| (i, KFunction::identity())).collect(),
            rows: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn surviving(&self) -> &BTreeSet<usize> {
        &self.surviving
    }

    pub fn gain(&self, i: usize, j: usize) -> Option<&KFunction> {
        self.edges.get(&(i, j))
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), KFunction> {
        &self.edges
    }

    pub fn input_gain(&self, i: usize) -> Option<&KFunction> {
        self.input_gains.get(&i)
    }

    pub fn constant_gain(&self, i: usize) -> Option<&KFunction> {
        self.constant_gains.get(&i)
    }

    pub fn trace(&self) -> &[EliminationStep] {
        &self.trace
    }

    /// Verifies `γ_im ∘ γ_mi < id` for every surviving `i` linked to `m`
    /// both ways.
    fn check_two_cycles(&self, m: usize, grid: &GridSpec) -> Result<(), ReductionError> {
        for &i in self.surviving.iter().filter(|&&i| i != m) {
            if let (Some(im), Some(mi)) = (self.gain(i, m), self.gain(m, i)) {
                let verdict = less_than_identity(&compose(im, mi), grid);
                if !verdict.is_verified() {
                    return Err(ReductionError::TwoCycleNotContracting { i, m, verdict });
                }
            }
        }
        Ok(())
    }

    /// Removes node `m`, folding its inequality into the remaining ones.
    pub fn eliminate(&self, m: usize, grid: &GridSpec) -> Result<ReducedSystem, ReductionError> {
        if !self.surviving.contains(&m) {
            return Err(ReductionError::UnknownNode(m));
        }
        self.check_two_cycles(m, grid)?;

        let mut next = self.clone();
        next.surviving.remove(&m);
        let row = EliminatedRow {
            node: m,
            edges: self
                .edges
                .iter()
                .filter(|(&(i, _), _)| i == m)
                .map(|(&(_, j), g)| (j, g.clone()))
                .collect(),
            input: self.input_gain(m).cloned(),
            constant: self.constant_gain(m).cloned(),
        };
        next.edges.retain(|&(i, j), _| i != m && j != m);
        next.input_gains.remove(&m);
        next.constant_gains.remove(&m);

        let mut step = EliminationStep { node: m, introduced: Vec::new(), dropped_self_terms: Vec::new() };
        for &i in &next.surviving {
            let Some(im) = self.gain(i, m) else { continue };
            for &j in &next.surviving {
                let Some(mj) = row.edges.get(&j) else { continue };
                if i == j {
                    step.dropped_self_terms.push(i);
                    continue;
                }
                let term = compose(im, mj);
                let merged = match next.edges.get(&(i, j)) {
                    Some(existing) => pointwise_max(existing, &term),
                    None => term,
                };
                next.edges.insert((i, j), merged);
                step.introduced.push(GainSlot::Edge { i, j });
            }
            if let Some(mu) = &row.input {
                let merged = max_opt(next.input_gains.get(&i), Some(&compose(im, mu))).unwrap();
                next.input_gains.insert(i, merged);
                step.introduced.push(GainSlot::Input { i });
            }
            if let Some(mc) = &row.constant {
                let merged = max_opt(next.constant_gains.get(&i), Some(&compose(im, mc))).unwrap();
                next.constant_gains.insert(i, merged);
                step.introduced.push(GainSlot::Constant { i });
            }
        }
        next.rows.push(row);
        next.trace.push(step);
        Ok(next)
    }
}

/// Per-node closed-loop gains.
///
/// An absent gain means the corresponding bound is identically zero (for
/// instance a node with no input gain that no input reaches).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopGains {
    pub elimination_order: Vec<usize>,
    /// `γ̂_i^u`: `limsup |x_i| <= γ̂_i^u(|u|)`.
    pub asymptotic: BTreeMap<usize, Option<KFunction>>,
    /// `σ̃_i`: the initial-data part of the uniform bound.
    pub gs_sigma: BTreeMap<usize, KFunction>,
    /// `γ̃_i^u`: the input part of the uniform bound.
    pub gs_input: BTreeMap<usize, Option<KFunction>>,
    pub trace: Vec<EliminationStep>,
}

impl ClosedLoopGains {
    pub fn asymptotic_bound(&self, i: usize, u_norm: f64) -> f64 {
        self.asymptotic.get(&i).and_then(Option::as_ref).map_or(0.0, |g| g.eval(u_norm))
    }

    /// `max{σ̃_i(c), γ̃_i^u(|u|)}`.
    pub fn gs_bound(&self, i: usize, c: f64, u_norm: f64) -> f64 {
        let sigma = self.gs_sigma.get(&i).map_or(0.0, |g| g.eval(c));
        let input = self.gs_input.get(&i).and_then(Option::as_ref).map_or(0.0, |g| g.eval(u_norm));
        sigma.max(input)
    }

    /// A single class-K `σ` with `|x(t)| <= σ(‖ξ‖)` for unforced runs:
    /// `max_i σ̃_i ∘ C` where `C(r)` bounds the initial constant for
    /// histories of norm `r`.
    pub fn gas_sigma(&self, g: &GainDigraph) -> KFunction {
        let initial = initial_constant_gain(g);
        self.gs_sigma
            .values()
            .map(|s| compose(s, &initial))
            .reduce(|a, b| pointwise_max(&a, &b))
            .expect("at least one node")
    }
}

/// Generic closed-loop gains with the default order (highest index first).
pub fn closed_loop_input_gains(g: &GainDigraph, grid: &GridSpec) -> Result<ClosedLoopGains, ReductionError> {
    let order: Vec<usize> = (3..=g.k()).rev().collect();
    closed_loop_gains_with_order(g, grid, &order)
}

/// Eliminates the nodes in `order`, which must leave one or two nodes.
pub fn closed_loop_gains_with_order(
    g: &GainDigraph,
    grid: &GridSpec,
    order: &[usize],
) -> Result<ClosedLoopGains, ReductionError> {
    let k = g.k();
    let distinct: BTreeSet<_> = order.iter().copied().collect();
    if distinct.len() != order.len()
        || order.iter().any(|&m| m == 0 || m > k)
        || k - order.len() > 2
        || (k > 0 && order.len() >= k)
    {
        return Err(ReductionError::BadOrder { k });
    }

    let report = check_cyclic_small_gain(g, grid)?;
    if report.overall != OverallVerdict::Verified {
        return Err(ReductionError::SmallGainFailed(Box::new(report)));
    }

    let mut reduced = ReducedSystem::from_digraph(g);
    for &m in order {
        reduced = reduced.eliminate(m, grid)?;
    }

    let terminal: Vec<usize> = reduced.surviving.iter().copied().collect();
    let mut asymptotic: BTreeMap<usize, Option<KFunction>> = BTreeMap::new();
    let mut sigma: BTreeMap<usize, Option<KFunction>> = BTreeMap::new();
    match terminal[..] {
        [a] => {
            asymptotic.insert(a, reduced.input_gain(a).cloned());
            sigma.insert(a, reduced.constant_gain(a).cloned());
        }
        [a, b] => {
            if let (Some(ab), Some(ba)) = (reduced.gain(a, b), reduced.gain(b, a)) {
                let verdict = less_than_identity(&compose(ab, ba), grid);
                if !verdict.is_verified() {
                    return Err(ReductionError::TwoCycleNotContracting { i: a, m: b, verdict });
                }
            }
            // b_a <= max{γ̃_ab(b_b), γ̃_a}, b_b <= max{γ̃_ba(b_a), γ̃_b}:
            // γ̂_a = max{γ̃_ab ∘ γ̃_b, γ̃_a} and symmetrically for b.
            for (x, y) in [(a, b), (b, a)] {
                let xy = reduced.gain(x, y);
                asymptotic.insert(
                    x,
                    max_opt(compose_opt(xy, reduced.input_gain(y)).as_ref(), reduced.input_gain(x)),
                );
                sigma.insert(
                    x,
                    max_opt(compose_opt(xy, reduced.constant_gain(y)).as_ref(), reduced.constant_gain(x)),
                );
            }
        }
        _ => unreachable!("order validation leaves one or two nodes"),
    }

    for row in reduced.rows.iter().rev() {
        let mut input = row.input.clone();
        let mut constant = row.constant.clone();
        for (j, gain) in &row.edges {
            let via_input = compose_opt(Some(gain), asymptotic[j].as_ref());
            input = max_opt(via_input.as_ref(), input.as_ref());
            let via_constant = compose_opt(Some(gain), sigma[j].as_ref());
            constant = max_opt(via_constant.as_ref(), constant.as_ref());
        }
        asymptotic.insert(row.node, input);
        sigma.insert(row.node, constant);
    }

    let gs_sigma = sigma
        .into_iter()
        .map(|(i, s)| (i, s.expect("constant channel starts as the identity on every node")))
        .collect();
    Ok(ClosedLoopGains {
        elimination_order: order.to_vec(),
        gs_input: asymptotic.clone(),
        asymptotic,
        gs_sigma,
        trace: reduced.trace,
    })
}

/// `C(r) = max{σ_i(r), γ_ij(r)}` over all present gains; a node without a
/// GS gain contributes the identity.
fn initial_constant_gain(g: &GainDigraph) -> KFunction {
    g.nodes()
        .map(|i| g.gs_gain(i).cloned().unwrap_or_else(KFunction::identity))
        .chain(g.edges().values().cloned())
        .reduce(|a, b| pointwise_max(&a, &b))
        .expect("at least one node")
}

/// `c = max{σ_i(‖ξ_i‖), γ_ij(‖ξ_j‖)}` for per-node history norms
/// (`history_norms[i - 1]` belongs to node `i`). A node without a GS gain
/// contributes its history norm unchanged.
pub fn combined_initial_constant(g: &GainDigraph, history_norms: &[f64]) -> f64 {
    assert_eq!(history_norms.len(), g.k(), "one history norm per subsystem");
    let own = g.nodes().map(|i| {
        let r = history_norms[i - 1];
        g.gs_gain(i).map_or(r, |s| s.eval(r))
    });
    let cross = g.edges().iter().map(|(&(_, j), gain)| gain.eval(history_norms[j - 1]));
    own.chain(cross).fold(0.0, f64::max)
}
