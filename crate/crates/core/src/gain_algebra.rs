//! Class-K gain functions as closed expression trees.
//!
//! Every [`KFunction`] is built from four primitive families (identity,
//! linear, power, saturating rational) combined by composition and pointwise
//! maximum. Both combinators preserve the class-K property, so any tree built
//! through the checked constructors is continuous, zero at zero and strictly
//! increasing. Evaluation is exact in the sense that no approximation beyond
//! floating-point arithmetic is involved.
//!
//! The comparison `g < id` (that is `g(s) < s` for all `s > 0`) cannot be
//! decided by sampling. [`less_than_identity`] returns a three-valued
//! [`Verdict`] with an explicit margin and, on failure, a concrete witness.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GainError {
    #[error("linear gain coefficient must be finite and > 0, got {0}")]
    BadLinear(f64),
    #[error("power exponent must be finite and > 0, got {0}")]
    BadPower(f64),
    #[error("saturating gain needs finite c > 0 and q > 0, got c = {c}, q = {q}")]
    BadSaturating { c: f64, q: f64 },
}

/// Node of a gain expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum KNode {
    Identity,
    /// `a * s`
    Linear(f64),
    /// `s^p`
    Power(f64),
    /// `c * s^q / (1 + s^q)`; bounded by `c`, so class-K but not K-infinity.
    SaturatingRational { c: f64, q: f64 },
    /// `outer(inner(s))`
    Compose(KFunction, KFunction),
    Max(KFunction, KFunction),
}

/// A class-K function represented as an immutable, cheaply clonable tree.
#[derive(Clone, PartialEq)]
pub struct KFunction(Arc<KNode>);

impl KFunction {
    pub fn identity() -> Self {
        KFunction(Arc::new(KNode::Identity))
    }

    pub fn linear(a: f64) -> Result<Self, GainError> {
        if a.is_finite() && a > 0.0 {
            Ok(KFunction(Arc::new(KNode::Linear(a))))
        } else {
            Err(GainError::BadLinear(a))
        }
    }

    pub fn power(p: f64) -> Result<Self, GainError> {
        if p.is_finite() && p > 0.0 {
            Ok(KFunction(Arc::new(KNode::Power(p))))
        } else {
            Err(GainError::BadPower(p))
        }
    }

    pub fn saturating(c: f64, q: f64) -> Result<Self, GainError> {
        if c.is_finite() && c > 0.0 && q.is_finite() && q > 0.0 {
            Ok(KFunction(Arc::new(KNode::SaturatingRational { c, q })))
        } else {
            Err(GainError::BadSaturating { c, q })
        }
    }

    pub fn node(&self) -> &KNode {
        &self.0
    }

    /// Evaluates the function at `s >= 0`.
    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0 || s.is_nan(), "gain evaluated at negative argument {s}");
        if s == 0.0 {
            return 0.0;
        }
        match self.node() {
            KNode::Identity => s,
            KNode::Linear(a) => a * s,
            KNode::Power(p) => s.powf(*p),
            KNode::SaturatingRational { c, q } => {
                // c / (1 + s^-q) for large s avoids inf / inf.
                if s > 1.0 {
                    c / (1.0 + s.powf(-q))
                } else {
                    let sq = s.powf(*q);
                    c * sq / (1.0 + sq)
                }
            }
            KNode::Compose(outer, inner) => outer.eval(inner.eval(s)),
            KNode::Max(f, g) => f.eval(s).max(g.eval(s)),
        }
    }

    /// Number of nodes in the expanded tree.
    pub fn size(&self) -> usize {
        match self.node() {
            KNode::Compose(f, g) | KNode::Max(f, g) => 1 + f.size() + g.size(),
            _ => 1,
        }
    }

    /// Primitive leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<KFunction> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<KFunction>) {
        match self.node() {
            KNode::Compose(f, g) | KNode::Max(f, g) => {
                f.collect_leaves(out);
                g.collect_leaves(out);
            }
            _ => out.push(self.clone()),
        }
    }

    /// True when the function is unbounded (class K-infinity).
    pub fn is_unbounded(&self) -> bool {
        match self.node() {
            KNode::Identity | KNode::Linear(_) | KNode::Power(_) => true,
            KNode::SaturatingRational { .. } => false,
            KNode::Compose(outer, inner) => outer.is_unbounded() && inner.is_unbounded(),
            KNode::Max(f, g) => f.is_unbounded() || g.is_unbounded(),
        }
    }
}

impl fmt::Debug for KFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KFunction({self})")
    }
}

/// Prints the tree in the gain surface syntax accepted by
/// [`crate::specdsl::parse_gain`]; printing then parsing yields an equal tree.
impl fmt::Display for KFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            KNode::Identity => write!(f, "s"),
            KNode::Linear(a) => write!(f, "{a}*s"),
            KNode::Power(p) => write!(f, "s^{p}"),
            KNode::SaturatingRational { c, q } => write!(f, "{c}*s^{q}/(1+s^{q})"),
            KNode::Compose(outer, inner) => write!(f, "compose({outer}, {inner})"),
            KNode::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

impl Serialize for KFunction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KFunction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        crate::specdsl::parse_gain(&text).map_err(serde::de::Error::custom)
    }
}

/// `outer ∘ inner`.
pub fn compose(outer: &KFunction, inner: &KFunction) -> KFunction {
    KFunction(Arc::new(KNode::Compose(outer.clone(), inner.clone())))
}

/// Right-nested composition `fs[0] ∘ fs[1] ∘ ... ∘ fs[n-1]`.
pub fn compose_chain(fs: &[KFunction]) -> Option<KFunction> {
    let (last, rest) = fs.split_last()?;
    Some(rest.iter().rev().fold(last.clone(), |acc, f| compose(f, &acc)))
}

pub fn pointwise_max(f: &KFunction, g: &KFunction) -> KFunction {
    KFunction(Arc::new(KNode::Max(f.clone(), g.clone())))
}

/// Maximum with optional operands; an absent gain contributes nothing.
pub fn max_opt(f: Option<&KFunction>, g: Option<&KFunction>) -> Option<KFunction> {
    match (f, g) {
        (Some(f), Some(g)) => Some(pointwise_max(f, g)),
        (Some(f), None) | (None, Some(f)) => Some(f.clone()),
        (None, None) => None,
    }
}

/// Evaluates an optional gain, reading an absent gain as the zero bound.
pub fn eval_opt(g: Option<&KFunction>, s: f64) -> f64 {
    g.map_or(0.0, |g| g.eval(s))
}

/// Sampling domain for `g < id` checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub s_min: f64,
    pub s_max: f64,
    pub n_points: usize,
    pub refinement_depth: usize,
    /// Relative margin `(s - g(s)) / s` below which a verdict is inconclusive.
    pub margin: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            s_min: 1e-8,
            s_max: 1e8,
            n_points: 4096,
            refinement_depth: 8,
            margin: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid bounds must satisfy 0 < s_min < s_max, got [{0}, {1}]")]
    Bounds(f64, f64),
    #[error("grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("grid margin must be finite and >= 0, got {0}")]
    Margin(f64),
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.s_min > 0.0 && self.s_min < self.s_max && self.s_max.is_finite()) {
            return Err(GridError::Bounds(self.s_min, self.s_max));
        }
        if self.n_points < 2 {
            return Err(GridError::TooFewPoints(self.n_points));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(GridError::Margin(self.margin));
        }
        Ok(())
    }

    /// Log-spaced sample points, endpoints included.
    pub fn points(&self) -> Vec<f64> {
        log_space(self.s_min, self.s_max, self.n_points)
    }
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// `g(s) < s * (1 - margin)` at every sampled point.
    VerifiedOnGrid { min_margin: f64 },
    /// `g(s) >= s` at the witness.
    ViolatedAt { s: f64, value: f64 },
    /// `g(s) < s` everywhere sampled, but the relative margin dropped below
    /// the requested one at `s_worst`.
    Inconclusive { worst_margin: f64, s_worst: f64 },
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::VerifiedOnGrid { .. })
    }

    pub fn is_violated(&self) -> bool {
        matches!(self, Verdict::ViolatedAt { .. })
    }

    /// Smallest relative margin seen (negative when violated).
    pub fn margin(&self) -> f64 {
        match *self {
            Verdict::VerifiedOnGrid { min_margin } => min_margin,
            Verdict::ViolatedAt { s, value } => (s - value) / s,
            Verdict::Inconclusive { worst_margin, .. } => worst_margin,
        }
    }

    pub fn witness(&self) -> Option<f64> {
        match *self {
            Verdict::ViolatedAt { s, .. } => Some(s),
            Verdict::Inconclusive { s_worst, .. } => Some(s_worst),
            Verdict::VerifiedOnGrid { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    s: f64,
    value: f64,
    margin: f64,
}

impl Sample {
    fn at(g: &KFunction, s: f64) -> Self {
        let value = g.eval(s);
        let margin = if value.is_nan() { f64::NEG_INFINITY } else { (s - value) / s };
        Sample { s, value, margin }
    }

    /// Lower margin wins; ties go to the point closest to `s = 1`.
    fn worse_than(&self, other: &Sample) -> bool {
        self.margin < other.margin
            || (self.margin == other.margin && self.s.ln().abs() < other.s.ln().abs())
    }
}

/// Checks `g(s) < s` on a log grid, refined by bisection around the worst
/// sample.
///
/// The point `s = 1` is always sampled when it lies inside the grid, and
/// ties in the margin are broken toward it, so scale-free gains such as
/// `a*s` report their witness at `s = 1`.
pub fn less_than_identity(g: &KFunction, grid: &GridSpec) -> Verdict {
    let mut points = grid.points();
    if grid.s_min <= 1.0 && 1.0 <= grid.s_max {
        let pos = points.partition_point(|&s| s < 1.0);
        if points.get(pos) != Some(&1.0) {
            points.insert(pos, 1.0);
        }
    }

    let samples: Vec<Sample> = points.iter().map(|&s| Sample::at(g, s)).collect();
    let mut worst_idx = 0;
    for (i, sample) in samples.iter().enumerate() {
        if sample.worse_than(&samples[worst_idx]) {
            worst_idx = i;
        }
    }
    let mut worst = samples[worst_idx];

    // Shrinking log-space bracket around the worst grid sample.
    let ln_lo = samples[worst_idx.saturating_sub(1)].s.ln();
    let ln_hi = samples[(worst_idx + 1).min(samples.len() - 1)].s.ln();
    let mut center = worst.s.ln();
    let mut half_left = center - ln_lo;
    let mut half_right = ln_hi - center;
    for _ in 0..grid.refinement_depth {
        half_left /= 2.0;
        half_right /= 2.0;
        for cand in [center - half_left, center + half_right] {
            let sample = Sample::at(g, cand.exp());
            if sample.worse_than(&worst) {
                worst = sample;
            }
        }
        center = worst.s.ln();
    }

    if worst.margin <= 0.0 {
        Verdict::ViolatedAt { s: worst.s, value: worst.value }
    } else if worst.margin < grid.margin {
        Verdict::Inconclusive { worst_margin: worst.margin, s_worst: worst.s }
    } else {
        Verdict::VerifiedOnGrid { min_margin: worst.margin }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gamma12() -> KFunction {
        KFunction::saturating(0.5, 2.0).unwrap()
    }

    fn gamma23() -> KFunction {
        KFunction::power(3.0).unwrap()
    }

    fn gamma31() -> KFunction {
        KFunction::power(2.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(gamma31().eval(3.0), 9.0);
        assert_eq!(KFunction::identity().eval(7.5), 7.5);
        assert_eq!(gamma12().eval(1.0), 0.25);
    }

    #[test]
    fn constructors_reject_bad_parameters() {
        assert_eq!(KFunction::linear(0.0), Err(GainError::BadLinear(0.0)));
        assert!(KFunction::linear(-1.0).is_err());
        assert!(KFunction::linear(f64::NAN).is_err());
        assert!(KFunction::power(0.0).is_err());
        assert!(KFunction::saturating(1.0, 0.0).is_err());
        assert!(KFunction::saturating(0.0, 1.0).is_err());
    }

    #[test]
    fn composed_cycle_gain_matches_closed_form() {
        let g = compose(&gamma12(), &compose(&gamma23(), &gamma31()));
        for s in log_space(1e-3, 1e3, 31) {
            let expected = s.powi(12) / (2.0 * (1.0 + s.powi(12)));
            assert!((g.eval(s) - expected).abs() <= 1e-12 * expected, "s = {s}");
        }
    }

    #[test]
    fn compose_with_identity_and_powers() {
        let g = gamma12();
        let gi = compose(&g, &KFunction::identity());
        let p6 = compose(&KFunction::power(2.0).unwrap(), &KFunction::power(3.0).unwrap());
        for s in [0.1, 0.5, 1.0, 2.0, 10.0] {
            assert_eq!(gi.eval(s), g.eval(s));
            assert!((p6.eval(s) - s.powi(6)).abs() <= 1e-12 * s.powi(6));
        }
    }

    #[test]
    fn pointwise_max_examples() {
        let m = pointwise_max(&KFunction::linear(2.0).unwrap(), &KFunction::linear(3.0).unwrap());
        for s in [0.1, 1.0, 10.0] {
            assert_eq!(m.eval(s), 3.0 * s);
        }
        let m = pointwise_max(&KFunction::power(2.0).unwrap(), &KFunction::power(3.0).unwrap());
        assert_eq!(m.eval(0.5), 0.25);
        assert_eq!(m.eval(2.0), 8.0);
        assert_eq!(max_opt(Some(&gamma12()), None), Some(gamma12()));
        assert_eq!(max_opt(None, None), None);
    }

    #[test]
    fn chain_is_right_nested() {
        let chain = compose_chain(&[gamma12(), gamma23(), gamma31()]).unwrap();
        assert_eq!(chain, compose(&gamma12(), &compose(&gamma23(), &gamma31())));
        assert_eq!(compose_chain(&[]), None);
    }

    #[test]
    fn verdict_examples() {
        let grid = GridSpec::default();
        let cycle = compose(&gamma12(), &compose(&gamma23(), &gamma31()));
        assert!(less_than_identity(&cycle, &grid).is_verified());

        assert_eq!(
            less_than_identity(&KFunction::identity(), &grid),
            Verdict::ViolatedAt { s: 1.0, value: 1.0 }
        );
        assert_eq!(
            less_than_identity(&KFunction::linear(2.0).unwrap(), &grid),
            Verdict::ViolatedAt { s: 1.0, value: 2.0 }
        );
    }

    #[test]
    fn tangent_gain_is_inconclusive() {
        let g = KFunction::linear(1.0 - 1e-14).unwrap();
        match less_than_identity(&g, &GridSpec::default()) {
            Verdict::Inconclusive { worst_margin, .. } => {
                assert!(worst_margin > 0.0 && worst_margin < 1e-12)
            }
            other => panic!("expected inconclusive, got {other:?}"),
        }
    }

    #[test]
    fn refinement_finds_narrow_violation() {
        // max(s/2, 3*s^40) only crosses the identity above s ≈ 0.973.
        let g = pointwise_max(&KFunction::linear(0.5).unwrap(), &compose(
            &KFunction::linear(3.0).unwrap(),
            &KFunction::power(40.0).unwrap(),
        ));
        let grid = GridSpec { s_min: 0.1, s_max: 10.0, n_points: 3, ..GridSpec::default() };
        let v = less_than_identity(&g, &grid);
        let s = v.witness().unwrap();
        assert!(v.is_violated());
        assert!(g.eval(s) >= s);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::default().validate().is_ok());
        let bad = GridSpec { s_min: 2.0, s_max: 1.0, ..GridSpec::default() };
        assert_eq!(bad.validate(), Err(GridError::Bounds(2.0, 1.0)));
        let bad = GridSpec { n_points: 1, ..GridSpec::default() };
        assert_eq!(bad.validate(), Err(GridError::TooFewPoints(1)));
        let pts = GridSpec::default().points();
        assert_eq!(pts.len(), 4096);
        assert_eq!(pts[0], 1e-8);
        assert_eq!(pts[4095], 1e8);
    }

    #[test]
    fn unboundedness() {
        assert!(!gamma12().is_unbounded());
        assert!(gamma23().is_unbounded());
        assert!(pointwise_max(&gamma12(), &gamma23()).is_unbounded());
        assert!(!compose(&gamma12(), &gamma23()).is_unbounded());
    }

    pub(crate) fn arb_kfunction() -> impl Strategy<Value = KFunction> {
        let leaf = prop_oneof![
            Just(KFunction::identity()),
            (0.05f64..4.0).prop_map(|a| KFunction::linear(a).unwrap()),
            (0.25f64..3.0).prop_map(|p| KFunction::power(p).unwrap()),
            (0.1f64..4.0, 0.5f64..3.0).prop_map(|(c, q)| KFunction::saturating(c, q).unwrap()),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(f, g)| compose(&f, &g)),
                (inner.clone(), inner).prop_map(|(f, g)| pointwise_max(&f, &g)),
            ]
        })
    }

    proptest! {
        #[test]
        fn zero_maps_to_zero(g in arb_kfunction()) {
            prop_assert_eq!(g.eval(0.0), 0.0);
        }

        #[test]
        fn compose_evaluates_as_nesting(f in arb_kfunction(), g in arb_kfunction(), s in 1e-3f64..1e3) {
            prop_assert_eq!(compose(&f, &g).eval(s), f.eval(g.eval(s)));
        }

        #[test]
        fn max_evaluates_pointwise(f in arb_kfunction(), g in arb_kfunction(), s in 1e-3f64..1e3) {
            prop_assert_eq!(pointwise_max(&f, &g).eval(s), f.eval(s).max(g.eval(s)));
        }

        #[test]
        fn monotone_on_grid(g in arb_kfunction()) {
            // Strict where the values are distinguishable in floating point.
            let pts = log_space(0.05, 20.0, 200);
            for w in pts.windows(2) {
                let (a, b) = (g.eval(w[0]), g.eval(w[1]));
                prop_assert!(a <= b, "not monotone at {:?}: {} > {}", w, a, b);
                if a > 1e-150 && b.is_finite() && b < 0.9 * f64::MAX {
                    let saturated = (b - a).abs() <= 4.0 * f64::EPSILON * b;
                    prop_assert!(a < b || saturated);
                }
            }
        }

        #[test]
        fn violation_witness_transports_to_rotation(f in arb_kfunction(), g in arb_kfunction()) {
            let grid = GridSpec { n_points: 256, refinement_depth: 4, ..GridSpec::default() };
            if let Verdict::ViolatedAt { s, .. } = less_than_identity(&compose(&f, &g), &grid) {
                let t = g.eval(s);
                prop_assume!(t > 0.0 && t.is_finite());
                // g∘f at g(s*) is g(f(g(s*))) >= g(s*) by monotonicity of g.
                prop_assert!(compose(&g, &f).eval(t) >= t);
            }
        }
    }
}
