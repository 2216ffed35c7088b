//! Gain digraphs and the cyclic small-gain test.
//!
//! Nodes are subsystems, numbered `1..=k`. The gain `γ_ij` of subsystem `i`
//! with respect to subsystem `j` is stored under the key `(i, j)`; in the
//! interconnection it is the edge `j → i`. A simple cycle `(i_1, ..., i_r)`
//! has composed gain `γ_{i1 i2} ∘ γ_{i2 i3} ∘ ... ∘ γ_{ir i1}`, so consecutive
//! cycle entries follow keys `(i_1, i_2)`, `(i_2, i_3)` and so on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gain_algebra::{compose_chain, less_than_identity, GridSpec, KFunction, Verdict};

pub const DEFAULT_CYCLE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("interconnection needs at least one subsystem")]
    Empty,
    #[error("self-loop gain ({0}, {0}) is not allowed")]
    SelfLoop(usize),
    #[error("subsystem index {index} out of range 1..={k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("more than {cap} simple cycles; aborting enumeration")]
    TooManyCycles { cap: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDigraph {
    k: usize,
    edges: BTreeMap<(usize, usize), KFunction>,
    input_gains: BTreeMap<usize, KFunction>,
    gs_gains: BTreeMap<usize, KFunction>,
}

impl GainDigraph {
    /// Validates and builds a digraph. Gain functions are class-K by
    /// construction of [`KFunction`]; only the index structure is checked.
    pub fn new(
        k: usize,
        edges: BTreeMap<(usize, usize), KFunction>,
        input_gains: BTreeMap<usize, KFunction>,
        gs_gains: BTreeMap<usize, KFunction>,
    ) -> Result<Self, GraphError> {
        if k == 0 {
            return Err(GraphError::Empty);
        }
        let check = |index: usize| {
            if (1..=k).contains(&index) {
                Ok(())
            } else {
                Err(GraphError::IndexOutOfRange { index, k })
            }
        };
        for &(i, j) in edges.keys() {
            check(i)?;
            check(j)?;
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
        }
        for &i in input_gains.keys().chain(gs_gains.keys()) {
            check(i)?;
        }
        Ok(GainDigraph { k, edges, input_gains, gs_gains })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> {
        1..=self.k
    }

    /// `γ_ij`, if subsystem `i` depends on subsystem `j`.
    pub fn gain(&self, i: usize, j: usize) -> Option<&KFunction> {
        self.edges.get(&(i, j))
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), KFunction> {
        &self.edges
    }

    pub fn input_gain(&self, i: usize) -> Option<&KFunction> {
        self.input_gains.get(&i)
    }

    pub fn input_gains(&self) -> &BTreeMap<usize, KFunction> {
        &self.input_gains
    }

    pub fn gs_gain(&self, i: usize) -> Option<&KFunction> {
        self.gs_gains.get(&i)
    }

    pub fn gs_gains(&self) -> &BTreeMap<usize, KFunction> {
        &self.gs_gains
    }

    /// A copy without the gain `γ_ij`.
    pub fn without_edge(&self, i: usize, j: usize) -> GainDigraph {
        let mut out = self.clone();
        out.edges.remove(&(i, j));
        out
    }

    /// A copy with every edge gain `γ` replaced by `map(γ)`.
    pub fn map_edges(&self, mut map: impl FnMut(&KFunction) -> KFunction) -> GainDigraph {
        let mut out = self.clone();
        for g in out.edges.values_mut() {
            *g = map(g);
        }
        out
    }

    /// Nodes `j` with a gain `γ_ij`, ascending.
    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((i, 0)..(i + 1, 0)).map(|(&(_, j), _)| j)
    }
}

/// A simple cycle in canonical rotation: the first entry is the smallest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cycle(Vec<usize>);

impl Cycle {
    /// Canonicalizes an arbitrary rotation. Returns `None` for fewer than two
    /// nodes or repeated nodes.
    pub fn new(nodes: Vec<usize>) -> Option<Self> {
        if nodes.len() < 2 {
            return None;
        }
        let distinct: BTreeSet<_> = nodes.iter().collect();
        if distinct.len() != nodes.len() {
            return None;
        }
        let start = nodes.iter().enumerate().min_by_key(|(_, &n)| n).map(|(i, _)| i)?;
        let mut nodes = nodes;
        nodes.rotate_left(start);
        Some(Cycle(nodes))
    }

    pub fn nodes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Key pairs `(i_1, i_2), (i_2, i_3), ..., (i_r, i_1)`.
    pub fn edge_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.0.len();
        (0..n).map(move |p| (self.0[p], self.0[(p + 1) % n]))
    }

    /// `γ_{i1 i2} ∘ ... ∘ γ_{ir i1}`; `None` if an edge is missing.
    pub fn composed_gain(&self, g: &GainDigraph) -> Option<KFunction> {
        let gains: Option<Vec<KFunction>> =
            self.edge_keys().map(|(i, j)| g.gain(i, j).cloned()).collect();
        compose_chain(&gains?)
    }
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (p, n) in self.0.iter().enumerate() {
            if p > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, ")")
    }
}

/// Ordering used for reports: shorter cycles first, then lexicographic.
fn report_order(a: &Cycle, b: &Cycle) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| a.0.cmp(&b.0))
}

pub fn enumerate_simple_cycles(g: &GainDigraph) -> Vec<Cycle> {
    enumerate_simple_cycles_capped(g, DEFAULT_CYCLE_CAP)
        .expect("cycle count exceeded the default cap; use enumerate_simple_cycles_capped")
}

/// Johnson-style enumeration: for each start node `s`, circuits through `s`
/// using only nodes `> s` are found by blocked backtracking. Every cycle is
/// therefore produced once, already in canonical rotation.
pub fn enumerate_simple_cycles_capped(g: &GainDigraph, cap: usize) -> Result<Vec<Cycle>, GraphError> {
    let k = g.k();
    let adj: Vec<Vec<usize>> = (0..=k)
        .map(|i| if i == 0 { Vec::new() } else { g.successors(i).collect() })
        .collect();

    let mut cycles = Vec::new();
    for start in 1..=k {
        let mut search = CircuitSearch {
            adj: &adj,
            start,
            blocked: vec![false; k + 1],
            block_map: vec![BTreeSet::new(); k + 1],
            stack: Vec::new(),
            out: &mut cycles,
            cap,
        };
        search.circuit(start)?;
    }
    cycles.sort_by(report_order);
    Ok(cycles)
}

struct CircuitSearch<'a> {
    adj: &'a [Vec<usize>],
    start: usize,
    blocked: Vec<bool>,
    block_map: Vec<BTreeSet<usize>>,
    stack: Vec<usize>,
    out: &'a mut Vec<Cycle>,
    cap: usize,
}

impl CircuitSearch<'_> {
    fn circuit(&mut self, v: usize) -> Result<bool, GraphError> {
        let mut found = false;
        self.stack.push(v);
        self.blocked[v] = true;
        for &w in &self.adj[v] {
            if w < self.start {
                continue;
            }
            if w == self.start {
                if self.stack.len() >= 2 {
                    if self.out.len() >= self.cap {
                        return Err(GraphError::TooManyCycles { cap: self.cap });
                    }
                    self.out.push(Cycle(self.stack.clone()));
                }
                found = true;
            } else if !self.blocked[w] && self.circuit(w)? {
                found = true;
            }
        }
        if found {
            self.unblock(v);
        } else {
            for &w in &self.adj[v] {
                if w > self.start {
                    self.block_map[w].insert(v);
                }
            }
        }
        self.stack.pop();
        Ok(found)
    }

    fn unblock(&mut self, v: usize) {
        self.blocked[v] = false;
        let waiting = std::mem::take(&mut self.block_map[v]);
        for w in waiting {
            if self.blocked[w] {
                self.unblock(w);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub cycle: Cycle,
    pub composed_gain: KFunction,
    pub verdict: Verdict,
    pub worst_margin: f64,
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallVerdict {
    Verified,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallGainReport {
    pub cycles: Vec<CycleReport>,
    pub overall: OverallVerdict,
}

impl SmallGainReport {
    pub fn first_violation(&self) -> Option<&CycleReport> {
        self.cycles.iter().find(|r| r.verdict.is_violated())
    }
}

pub fn check_cycle(g: &GainDigraph, cycle: &Cycle, grid: &GridSpec) -> Option<CycleReport> {
    let composed_gain = cycle.composed_gain(g)?;
    let verdict = less_than_identity(&composed_gain, grid);
    Some(CycleReport {
        cycle: cycle.clone(),
        worst_margin: verdict.margin(),
        witness: verdict.witness(),
        composed_gain,
        verdict,
    })
}

/// Checks `γ_{i1 i2} ∘ ... ∘ γ_{ir i1} < id` on every canonical cycle.
pub fn check_cyclic_small_gain(g: &GainDigraph, grid: &GridSpec) -> Result<SmallGainReport, GraphError> {
    let cycles = enumerate_simple_cycles_capped(g, DEFAULT_CYCLE_CAP)?;
    let reports: Vec<CycleReport> = cycles
        .iter()
        .map(|c| check_cycle(g, c, grid).expect("enumerated cycle uses existing edges"))
        .collect();
    let overall = if reports.iter().any(|r| r.verdict.is_violated()) {
        OverallVerdict::Violated
    } else if reports.iter().all(|r| r.verdict.is_verified()) {
        OverallVerdict::Verified
    } else {
        OverallVerdict::Inconclusive
    };
    Ok(SmallGainReport { cycles: reports, overall })
}
