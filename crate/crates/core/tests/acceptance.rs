//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false`, so the lines are printed by a plain
//! `cargo test` without `--nocapture`. Exits non-zero if any criterion fails.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smallgain::bound_checker::{check_gas, check_gs, check_pointwise, epsilon_split, history_norms, PropertyKind};
use smallgain::dde_sim::{simulate_with, HistoryFunction, SimOptions, Trajectory};
use smallgain::fixtures::{example_gains, example_system};
use smallgain::gain_algebra::{compose, less_than_identity, log_space, GridSpec, KFunction, Verdict};
use smallgain::gain_graph::{enumerate_simple_cycles, GainDigraph};
use smallgain::gain_reduction::closed_loop_input_gains;
use smallgain::specdsl::parse_system;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lin(a: f64) -> KFunction {
    KFunction::linear(a).unwrap()
}

fn c1_composed_gain() -> Outcome {
    let g = example_gains();
    let composed = compose(g.gain(1, 2).unwrap(), &compose(g.gain(2, 3).unwrap(), g.gain(3, 1).unwrap()));
    let mut worst: f64 = 0.0;
    for s in log_space(1e-6, 1e6, 50) {
        let s12 = s.powi(12);
        let expected = s12 / (2.0 * (1.0 + s12));
        worst = worst.max(rel_err(composed.eval(s), expected));
    }
    ensure(worst <= 1e-12, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:e} over 50 points"))
}

fn c2_small_gain_verdict() -> Outcome {
    let g = example_gains();
    let composed = compose(g.gain(1, 2).unwrap(), &compose(g.gain(2, 3).unwrap(), g.gain(3, 1).unwrap()));
    let grid = GridSpec::default();
    let verdict = less_than_identity(&composed, &grid);
    let Verdict::VerifiedOnGrid { min_margin } = verdict else {
        return Err(format!("verdict {verdict:?}"));
    };
    // Independent pointwise check of s^12/2 < s + s^13 on the same grid.
    let bad = grid.points().into_iter().find(|&s| s.powi(12) / 2.0 >= s + s.powi(13));
    ensure(min_margin > 0.0 && bad.is_none(), || format!("margin {min_margin}, bad point {bad:?}"))?;
    Ok(format!("VerifiedOnGrid, min margin {min_margin:.6}"))
}

fn complete_digraph(n: usize) -> GainDigraph {
    let mut edges = BTreeMap::new();
    for i in 1..=n {
        for j in 1..=n {
            if i != j {
                edges.insert((i, j), lin(0.5));
            }
        }
    }
    GainDigraph::new(n, edges, BTreeMap::new(), BTreeMap::new()).unwrap()
}

/// All node sequences of length >= 2 without repeats that start at their
/// minimum, built by brute force over permutations.
fn brute_force_cycles(n: usize) -> BTreeSet<Vec<usize>> {
    fn extend(n: usize, path: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
        if path.len() >= 2 {
            out.insert(path.clone());
        }
        for v in 1..=n {
            if v > path[0] && !path.contains(&v) {
                path.push(v);
                extend(n, path, out);
                path.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    for start in 1..=n {
        extend(n, &mut vec![start], &mut out);
    }
    out
}

fn c3_cycle_enumeration() -> Outcome {
    let mut counts = Vec::new();
    for (n, expected) in [(3, 5), (4, 20), (5, 84)] {
        let found: Vec<Vec<usize>> = enumerate_simple_cycles(&complete_digraph(n)).iter().map(|c| c.nodes().to_vec()).collect();
        let set: BTreeSet<_> = found.iter().cloned().collect();
        ensure(set.len() == found.len(), || format!("n={n}: duplicate cycles"))?;
        let oracle = brute_force_cycles(n);
        ensure(set == oracle, || format!("n={n}: enumeration differs from brute force"))?;
        ensure(found.len() == expected, || format!("n={n}: {} cycles, expected {expected}", found.len()))?;
        counts.push(found.len());
    }
    Ok(format!("cycle counts {counts:?}"))
}

fn c4_elimination() -> Outcome {
    let sat = |c, q| KFunction::saturating(c, q).unwrap();
    let pw = |p| KFunction::power(p).unwrap();
    let edges: BTreeMap<(usize, usize), KFunction> = [
        ((1, 2), sat(0.8, 2.0)),
        ((2, 1), compose(&lin(0.6), &pw(1.0))),
        ((1, 3), lin(0.3)),
        ((3, 1), sat(1.5, 1.0)),
        ((2, 3), compose(&lin(0.5), &pw(2.0))),
        ((3, 2), compose(&lin(0.4), &sat(1.0, 2.0))),
    ]
    .into_iter()
    .collect();
    let inputs: BTreeMap<usize, KFunction> =
        [(1, lin(2.0)), (2, pw(0.5)), (3, compose(&lin(0.7), &pw(3.0)))].into_iter().collect();
    let g = GainDigraph::new(3, edges, inputs, BTreeMap::new()).unwrap();
    let closed = closed_loop_input_gains(&g, &GridSpec::default()).map_err(|e| e.to_string())?;

    // Hand-coded formulas of the three-node reduction.
    let e = |i, j, s| g.gain(i, j).unwrap().eval(s);
    let u = |i, s| g.input_gain(i).unwrap().eval(s);
    let t12 = |s| e(1, 2, s).max(e(1, 3, e(3, 2, s)));
    let t21 = |s| e(2, 1, s).max(e(2, 3, e(3, 1, s)));
    let t1u = |s| u(1, s).max(e(1, 3, u(3, s)));
    let t2u = |s| u(2, s).max(e(2, 3, u(3, s)));
    let h1 = |s| t12(t2u(s)).max(t1u(s));
    let h2 = |s| t21(t1u(s)).max(t2u(s));
    let h3 = |s| e(3, 1, h1(s)).max(e(3, 2, h2(s))).max(u(3, s));

    let mut worst: f64 = 0.0;
    for s in log_space(1e-3, 1e3, 20) {
        for (i, expected) in [(1, h1(s)), (2, h2(s)), (3, h3(s))] {
            worst = worst.max(rel_err(closed.asymptotic_bound(i, s), expected));
        }
    }
    ensure(worst <= 1e-12, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:e} over 20 points and 3 nodes"))
}

fn random_linear_digraph(rng: &mut ChaCha8Rng) -> (GainDigraph, Vec<Vec<f64>>, Vec<f64>) {
    loop {
        let k = rng.gen_range(2..=5);
        let mut a = vec![vec![0.0; k + 1]; k + 1];
        let mut edges = BTreeMap::new();
        for i in 1..=k {
            for j in 1..=k {
                if i != j && rng.gen_bool(0.6) {
                    a[i][j] = rng.gen_range(0.05..3.0);
                    edges.insert((i, j), lin(a[i][j]));
                }
            }
        }
        let mut c = vec![0.0; k + 1];
        let mut inputs = BTreeMap::new();
        for (i, ci) in c.iter_mut().enumerate().skip(1) {
            if rng.gen_bool(0.7) {
                *ci = rng.gen_range(0.1..2.0);
                inputs.insert(i, lin(*ci));
            }
        }
        let g = GainDigraph::new(k, edges, inputs, BTreeMap::new()).unwrap();
        let products_ok = enumerate_simple_cycles(&g).iter().all(|cy| {
            let n = cy.nodes();
            (0..n.len()).map(|r| a[n[r]][n[(r + 1) % n.len()]]).product::<f64>() < 0.9
        });
        if products_ok {
            return (g, a, c);
        }
    }
}

/// Least fixed point of `b_i = max{c_i s, max_j a_ij b_j}` by iteration.
fn max_linear_fixed_point(a: &[Vec<f64>], c: &[f64], s: f64) -> Vec<f64> {
    let k = c.len() - 1;
    let mut b: Vec<f64> = c.iter().map(|ci| ci * s).collect();
    for _ in 0..1000 {
        let next: Vec<f64> = (0..=k)
            .map(|i| (1..=k).fold(c[i] * s, |acc, j| acc.max(a[i][j] * b[j])))
            .collect();
        if next == b {
            break;
        }
        b = next;
    }
    b
}

fn c5_fixed_point_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = GridSpec::default();
    let mut min_slack = f64::INFINITY;
    for trial in 0..100 {
        let (g, a, c) = random_linear_digraph(&mut rng);
        let closed = closed_loop_input_gains(&g, &grid).map_err(|e| format!("trial {trial}: {e}"))?;
        for s in [0.1, 1.0, 10.0] {
            let fp = max_linear_fixed_point(&a, &c, s);
            for i in 1..=g.k() {
                let slack = closed.asymptotic_bound(i, s) - fp[i];
                // Relative rounding allowance only.
                let tol = 1e-12 * fp[i].abs();
                ensure(slack >= -tol, || format!("trial {trial}, node {i}, s={s}: slack {slack:e}"))?;
                min_slack = min_slack.min(slack);
            }
        }
    }
    Ok(format!("100 digraphs, min slack {min_slack:e}"))
}

fn c6_example_gas() -> Outcome {
    let sys = example_system(1.0);
    let history = HistoryFunction::constant(vec![vec![1.0]; 3]);
    let input = smallgain::dde_sim::InputSignal::zero(3);
    let coarse = simulate_with(&sys, &history, &input, &SimOptions::new(20.0, 1e-2)).map_err(|e| e.to_string())?;
    ensure(coarse.blow_up().is_none(), || "blow-up".into())?;
    let gains = example_gains();
    let closed = closed_loop_input_gains(&gains, &GridSpec::default()).map_err(|e| e.to_string())?;
    let gs = check_gs(&coarse, &gains, &closed, 0.0);
    ensure(gs.holds(), || format!("GS bound violated: {:?}", gs.verdict))?;
    let gas = check_gas(&coarse, &closed.gas_sigma(&gains), 1e-3, 0.2).map_err(|e| e.to_string())?;
    ensure(gas.holds(), || format!("GAS check failed: {:?}", gas.verdict))?;

    let fine = simulate_with(&sys, &history, &input, &SimOptions::new(20.0, 1e-4)).map_err(|e| e.to_string())?;
    let a = coarse.state(coarse.len() - 1);
    let b = fine.state(fine.len() - 1);
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(diff <= 1e-5, || format!("state at T differs from the fine oracle by {diff:e}"))?;
    // The end state has decayed to ~1e-12, so also compare the whole path.
    let path_diff = (0..coarse.len())
        .map(|n| coarse.state(n).iter().zip(fine.state(100 * n)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    ensure(path_diff <= 1e-5, || format!("path differs from the fine oracle by {path_diff:e}"))?;
    let tail = smallgain::bound_checker::sup_norm(&coarse, 16.0, 20.0).map_err(|e| e.to_string())?;
    Ok(format!("GS margin {:.4}, tail sup {tail:.3e}, |x_h(T) - x_fine(T)| = {diff:.2e}, path deviation {path_diff:.2e}", gs.worst_margin))
}

fn scalar_config(rhs: &str, input: &str, x0: f64, horizon: f64, step: f64) -> String {
    format!(
        r#"{{"subsystems": [{{"dim": 1, "inputs": 1, "rhs": ["{rhs}"]}}],
            "history": [{{"constant": [{x0}]}}],
            "input": [{input}],
            "simulation": {{"horizon": {horizon}, "step": {step}}}}}"#
    )
}

fn run_config(json: &str) -> Result<Trajectory, String> {
    let b = parse_system(json).map_err(|e| e.to_string())?;
    simulate_with(&b.system, &b.history, &b.input, &b.sim).map_err(|e| e.to_string())
}

fn c7_integrator_order() -> Outcome {
    let err_at_end = |t: &Trajectory| (t.state(t.len() - 1)[0] - (-3.0 * t.end_time()).exp()).abs();
    let mut errors = Vec::new();
    for h in [0.1, 0.05, 0.025, 0.0125] {
        errors.push(err_at_end(&run_config(&scalar_config("-3*x_1", "\"zero\"", 1.0, 1.0, h))?));
    }
    let factors: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    ensure(factors.iter().all(|f| (12.0..=20.0).contains(f)), || format!("factors {factors:?}"))?;
    let t = run_config(&scalar_config("-3*x_1", "\"zero\"", 1.0, 1.0, 1e-3))?;
    let err = err_at_end(&t);
    ensure(err < 1e-9, || format!("error at h=1e-3 is {err:e}"))?;
    let shown: Vec<String> = factors.iter().map(|f| format!("{f:.2}")).collect();
    Ok(format!("halving factors [{}], error at h=1e-3 {err:.2e}", shown.join(", ")))
}

fn c8_gs_fixture() -> Outcome {
    let t = run_config(&scalar_config("-3*x_1 + u_1", "{\"constant\": [0.3]}", 1.0, 10.0, 1e-2))?;
    let xi = history_norms(&t)[0];
    let w = 0.3;
    let bound = (7.0 * xi).max(0.5 * w);
    let report = check_pointwise(&t, PropertyKind::Gs, &[bound]);
    ensure(report.holds() && report.worst_margin > 0.0, || format!("{:?}", report.verdict))?;
    // |x(t)| <= |x0| + ‖w‖/3 <= max{(1+1/ε)|x0|, (1+ε)‖w‖/3}; at ε = 1/6
    // this is max{7|x0|, (7/18)‖w‖}, which the 1/2 relaxes.
    let (a, b) = epsilon_split(xi, w / 3.0, 1.0 / 6.0);
    ensure((a - 7.0 * xi).abs() < 1e-12 && b <= 0.5 * w, || format!("split ({a}, {b}) exceeds the constants"))?;
    let tight = check_pointwise(&t, PropertyKind::Gs, &[a.max(b)]);
    ensure(tight.holds(), || format!("split bound: {:?}", tight.verdict))?;
    Ok(format!("bound {bound}, worst margin {:.4}", report.worst_margin))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_smallgain")
}

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

fn c9_robustness_gate() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let status = Command::new(bin())
        .arg("analyze")
        .arg(configs_dir().join("violating_gain_1p5.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?
        .status;
    ensure(status.code() == Some(2), || format!("exit code {:?}", status.code()))?;
    let text = std::fs::read_to_string(dir.path().join("cycles.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let verdict = &v["cycles"][0]["verdict"];
    ensure(verdict["verdict"] == "violated_at", || format!("verdict {verdict}"))?;
    let s = verdict["s"].as_f64().unwrap_or(f64::NAN);
    let value = verdict["value"].as_f64().unwrap_or(f64::NAN);
    ensure(value > s && rel_err(value, 2.25 * s) < 1e-12, || format!("witness s*={s}, value={value}"))?;
    Ok(format!("exit 2, witness s* = {s:.6}, composed gain {value:.6} = 2.25 s*"))
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c10_determinism() -> Outcome {
    let mut trees = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::copy(configs_dir().join("example_three_loop.json"), dir.path().join("example.json"))
            .map_err(|e| e.to_string())?;
        let status = Command::new(bin())
            .current_dir(dir.path())
            .args(["verify", "example.json", "--out", "out", "--seed", "11"])
            .output()
            .map_err(|e| e.to_string())?
            .status;
        ensure(status.code() == Some(0), || format!("verify exit code {:?}", status.code()))?;
        trees.push(read_tree(&dir.path().join("out")));
    }
    ensure(!trees[0].is_empty(), || "no outputs".into())?;
    ensure(trees[0] == trees[1], || {
        let differing: Vec<_> = trees[0].keys().filter(|k| trees[1].get(*k) != trees[0].get(*k)).collect();
        format!("outputs differ: {differing:?}")
    })?;
    let bytes: usize = trees[0].values().map(Vec::len).sum();
    Ok(format!("{} files, {bytes} bytes identical", trees[0].len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "composed-gain identity", c1_composed_gain, Duration::from_secs(1)),
        (2, "small-gain verdict", c2_small_gain_verdict, Duration::from_secs(1)),
        (3, "cycle enumeration", c3_cycle_enumeration, Duration::from_secs(5)),
        (4, "elimination correctness", c4_elimination, Duration::MAX),
        (5, "fixed-point soundness", c5_fixed_point_soundness, Duration::from_secs(30)),
        (6, "example GAS", c6_example_gas, Duration::from_secs(10)),
        (7, "integrator order", c7_integrator_order, Duration::MAX),
        (8, "GS derivation fixture", c8_gs_fixture, Duration::MAX),
        (9, "robustness gate", c9_robustness_gate, Duration::MAX),
        (10, "determinism", c10_determinism, Duration::MAX),
    ];
    let mut failed = 0;
    for (n, name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} ({:.2?})", elapsed),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} ({:.2?})", elapsed);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
