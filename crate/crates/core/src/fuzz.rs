//! Seeded random instances and the invariant suite.
//!
//! Every instance is generated as a [`ScenarioFile`] and resolved through
//! the same path as user input, so a failing instance is its own repro.
//! Instances run in parallel; outcomes are reported in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{driver_library, Driver, LinearCoefficients};
use crate::drbsde::{
    identification_residual, solve_direct, solve_fixed_point, solve_picard_driver_process,
    verify_solution, FixedPointInit,
};
use crate::dynkin::{game_values, StoppingTime, ENUMERATION_NODE_CAP};
use crate::error::Result;
use crate::pricing::MarketParams;
use crate::process::{mokobodzki_construct, AdmissiblePair, LadlagProcess};
use crate::scenario::{BarrierSpec, DriverSpec, GameSpec, GridSpec, ScenarioFile, SlotTable, TreeSpec};
use crate::tree::{AdaptedProcess, ScenarioTree, Scheme};

/// Tolerance of the conformance checks.
pub const VERIFY_TOL: f64 = 1e-10;
/// Tolerance of the agreement between solvers.
pub const AGREEMENT_TOL: f64 = 1e-9;

/// Shape of the random barriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// No regularity at all.
    Irregular,
    /// `right = at` for both barriers.
    Continuous,
    /// `xi` right-usc and `zeta` right-lsc.
    RightRegular,
    /// Right-regular, and `xi` left-usc, `zeta` left-lsc along stopping times.
    LeftRegular,
    /// `xi` right-usc; `zeta` right-lsc and left-lsc along stopping times.
    PricingRegular,
}

pub const ALL_REGIMES: [Regime; 5] = [
    Regime::Irregular,
    Regime::Continuous,
    Regime::RightRegular,
    Regime::LeftRegular,
    Regime::PricingRegular,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Zero,
    Process,
    Linear,
    TwoRates,
    Repo,
    Perfect,
}

pub const ALL_DRIVERS: [DriverKind; 6] = [
    DriverKind::Zero,
    DriverKind::Process,
    DriverKind::Linear,
    DriverKind::TwoRates,
    DriverKind::Repo,
    DriverKind::Perfect,
];

/// Knobs of the instance generator.
#[derive(Debug, Clone)]
pub struct GenOptions {
    pub max_depth: usize,
    pub scheme: Scheme,
    /// Keep the tree within the enumeration cap.
    pub enumerable: bool,
    /// Largest grid step.
    pub max_dt: f64,
    /// Horizon, when fixed; otherwise steps are drawn in `[max_dt / 5, max_dt]`.
    pub horizon: Option<f64>,
    pub regimes: Vec<Regime>,
    pub drivers: Vec<DriverKind>,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            max_depth: 4,
            scheme: Scheme::Three,
            enumerable: false,
            max_dt: 0.25,
            horizon: None,
            regimes: ALL_REGIMES.to_vec(),
            drivers: ALL_DRIVERS.to_vec(),
        }
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.gen_range(0..items.len())]
}

/// Gap drawn as exactly 0 with probability 0.3, to produce contacts.
fn gap(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if rng.gen_bool(0.3) {
        0.0
    } else {
        rng.gen_range(0.0..max)
    }
}

pub fn random_tree_spec(rng: &mut ChaCha8Rng, opts: &GenOptions) -> TreeSpec {
    let mut depth = rng.gen_range(1..=opts.max_depth.max(1));
    let mut lambda = if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.2..2.0) };
    if opts.enumerable {
        match opts.scheme {
            Scheme::Three => {
                depth = depth.min(3);
                if depth == 3 {
                    lambda = 0.0;
                }
            }
            Scheme::Four => depth = 1,
        }
    }
    let grid = match opts.horizon {
        Some(h) => {
            let steps = ((h / opts.max_dt).ceil() as usize).max(depth);
            GridSpec::Uniform { horizon: h, steps }
        }
        None => {
            let mut times = vec![0.0];
            for _ in 0..depth {
                let dt = rng.gen_range(opts.max_dt / 5.0..=opts.max_dt);
                times.push(times.last().expect("non-empty") + dt);
            }
            GridSpec::Times(times)
        }
    };
    TreeSpec {
        grid,
        lambda,
        scheme: opts.scheme,
    }
}

/// Random admissible barriers of the given regime.
pub fn random_pair(rng: &mut ChaCha8Rng, tree: &ScenarioTree, regime: Regime) -> AdmissiblePair {
    let n = tree.len();
    let mut xi = LadlagProcess::zeros(tree);
    let mut zeta = LadlagProcess::zeros(tree);
    let top_down = matches!(regime, Regime::LeftRegular | Regime::PricingRegular);
    for node in 0..n {
        let terminal = tree.is_terminal(node);
        // Bounds from the parent's interval values for the left-regular regimes.
        let (lo, hi) = match (top_down, tree.parent(node)) {
            (true, Some(p)) => (xi.right[p], zeta.right[p]),
            _ => (-2.0, 2.0),
        };
        let (lo, hi) = if regime == Regime::PricingRegular {
            (hi - 3.0, hi)
        } else {
            (lo, hi)
        };
        if terminal {
            let v = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            xi.at[node] = v;
            zeta.at[node] = v;
            xi.right[node] = v;
            zeta.right[node] = v;
            continue;
        }
        match regime {
            Regime::Irregular => {
                xi.at[node] = rng.gen_range(-2.0..2.0);
                xi.right[node] = rng.gen_range(-2.0..2.0);
                zeta.at[node] = xi.at[node] + gap(rng, 2.0);
                zeta.right[node] = xi.right[node] + gap(rng, 2.0);
            }
            Regime::Continuous => {
                xi.at[node] = rng.gen_range(-2.0..2.0);
                zeta.at[node] = xi.at[node] + gap(rng, 2.0);
                xi.right[node] = xi.at[node];
                zeta.right[node] = zeta.at[node];
            }
            Regime::RightRegular => {
                xi.at[node] = rng.gen_range(-2.0..2.0);
                xi.right[node] = xi.at[node] - gap(rng, 1.5);
                zeta.at[node] = xi.at[node] + gap(rng, 2.0);
                zeta.right[node] = zeta.at[node] + gap(rng, 1.5);
            }
            Regime::LeftRegular | Regime::PricingRegular => {
                let a = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                let b = if hi > a { rng.gen_range(a..=hi) } else { a };
                let (xa, za) = if rng.gen_bool(0.5) { (a, b) } else { (a, a + (b - a) * 0.5) };
                xi.at[node] = xa;
                zeta.at[node] = za;
                xi.right[node] = xa - gap(rng, 1.0);
                zeta.right[node] = za + gap(rng, 1.0);
            }
        }
    }
    AdmissiblePair::new(tree, xi, zeta).expect("generated barriers are admissible")
}

fn random_market(rng: &mut ChaCha8Rng) -> MarketParams {
    let r = rng.gen_range(0.0..0.1);
    MarketParams {
        r,
        borrow_rate: r + rng.gen_range(0.0..0.2),
        mu: [rng.gen_range(-0.05..0.15), rng.gen_range(-0.05..0.15)],
        sigma: [rng.gen_range(0.2..0.5), rng.gen_range(-0.1..0.1)],
        beta: [rng.gen_range(-0.2..0.2), rng.gen_range(0.2..0.6)],
        repo_borrow: [rng.gen_range(0.0..0.05), rng.gen_range(0.0..0.05)],
        repo_lend: [rng.gen_range(-0.05..0.0), rng.gen_range(-0.05..0.0)],
        s0: [1.0, 100.0, 100.0],
    }
}

/// A library driver with `K <= 1`, a comparison certificate and monotone steps.
pub fn random_driver(rng: &mut ChaCha8Rng, tree: &ScenarioTree, kinds: &[DriverKind]) -> DriverSpec {
    for _ in 0..200 {
        let kind = pick(rng, kinds);
        let spec = match kind {
            DriverKind::Zero => DriverSpec {
                name: "zero".into(),
                params: serde_json::Value::Null,
            },
            DriverKind::Process => {
                let values: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                DriverSpec {
                    name: "process".into(),
                    params: serde_json::json!({ "values": values }),
                }
            }
            DriverKind::Linear => {
                let sl = tree.lambda().sqrt();
                let coef = LinearCoefficients {
                    y: rng.gen_range(-1.0..1.0),
                    z: rng.gen_range(-1.0..1.0),
                    k: if sl > 0.0 { rng.gen_range(-sl..sl) } else { 0.0 },
                    c: rng.gen_range(-1.0..1.0),
                };
                DriverSpec {
                    name: "linear".into(),
                    params: serde_json::to_value(coef).expect("serializes"),
                }
            }
            DriverKind::TwoRates | DriverKind::Repo | DriverKind::Perfect => {
                let name = match kind {
                    DriverKind::TwoRates => "two_rates",
                    DriverKind::Repo => "repo",
                    _ => "perfect",
                };
                DriverSpec {
                    name: name.into(),
                    params: serde_json::to_value(random_market(rng)).expect("serializes"),
                }
            }
        };
        if let Ok(f) = driver_library(&spec.name, &spec.params, tree) {
            if f.lipschitz() <= 1.0 && f.royer_bound().is_some() && f.is_discretely_monotone(tree) {
                return spec;
            }
        }
    }
    DriverSpec {
        name: "zero".into(),
        params: serde_json::Value::Null,
    }
}

/// A complete random scenario with table barriers.
pub fn random_scenario(rng: &mut ChaCha8Rng, opts: &GenOptions) -> ScenarioFile {
    let tree_spec = random_tree_spec(rng, opts);
    let mut s = ScenarioFile {
        tree: tree_spec,
        barriers: BarrierSpec::Tables {
            xi: SlotTable { at: vec![], right: None },
            zeta: SlotTable { at: vec![], right: None },
        },
        driver: DriverSpec {
            name: "zero".into(),
            params: serde_json::Value::Null,
        },
        market: None,
        game: GameSpec::default(),
        seed: None,
        outputs: None,
    };
    let tree = s.build_tree().expect("generated tree is valid");
    let regime = pick(rng, &opts.regimes);
    let pair = random_pair(rng, &tree, regime);
    s.barriers = BarrierSpec::Tables {
        xi: SlotTable::from_process(&pair.xi),
        zeta: SlotTable::from_process(&pair.zeta),
    };
    s.driver = random_driver(rng, &tree, &opts.drivers);
    s
}

/// Ordered pair for the comparison property: `xi2 <= xi1`, `zeta2 <= zeta1`
/// and `f2 = f1 - (nonnegative process)`.
pub fn comparison_pair(
    rng: &mut ChaCha8Rng,
    tree: &ScenarioTree,
    pair1: &AdmissiblePair,
    f1: &Driver,
) -> (AdmissiblePair, Driver) {
    let mut xi = pair1.xi.clone();
    for v in xi.at.iter_mut().chain(xi.right.iter_mut()) {
        *v -= gap(rng, 1.0);
    }
    let mut zeta = pair1.zeta.clone();
    for n in 0..tree.len() {
        zeta.at[n] = xi.at[n].max(zeta.at[n] - gap(rng, 1.0));
        zeta.right[n] = xi.right[n].max(zeta.right[n] - gap(rng, 1.0));
    }
    for n in tree.leaves() {
        xi.right[n] = xi.at[n];
        zeta.at[n] = xi.at[n];
        zeta.right[n] = xi.at[n];
    }
    let shift = AdaptedProcess {
        values: (0..tree.len()).map(|_| -gap(rng, 1.0)).collect(),
    };
    let pair2 = AdmissiblePair::new(tree, xi, zeta).expect("ordered pair is admissible");
    (pair2, f1.shifted(shift))
}

/// One named check of an instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Measured violation (0 when exact); NaN is reported as a failure.
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
            passed: value <= tol,
        }
    }

    fn flag(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 0.0 } else { 1.0 }, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceOutcome {
    pub index: usize,
    pub seed: u64,
    pub nodes: usize,
    pub depth: usize,
    pub driver: String,
    pub y0: Option<f64>,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub passed: bool,
}

/// Runs the invariant suite on one scenario.
pub fn check_scenario(s: &ScenarioFile) -> Result<(f64, Vec<Check>)> {
    let r = s.resolve()?;
    let (tree, pair, f) = (&r.tree, &r.pair, &r.driver);
    let mut checks = Vec::new();
    let sol = solve_direct(pair, f, tree)?;
    checks.push(Check::new(
        "verify_direct",
        verify_solution(&sol, pair, f, tree).max_violation(),
        VERIFY_TOL,
    ));
    let fp = solve_fixed_point(pair, f, tree, FixedPointInit::TerminalPropagated)?;
    checks.push(Check::new(
        "fixed_point_agreement",
        fp.solution.y.max_abs_diff(&sol.y),
        AGREEMENT_TOL,
    ));
    if f.is_process() {
        let proc = f.freeze(tree, &sol.y.right, &sol.z, &sol.k);
        let pic = solve_picard_driver_process(pair, &proc, tree)?;
        checks.push(Check::new(
            "picard_agreement",
            pic.solution.y.max_abs_diff(&sol.y),
            AGREEMENT_TOL,
        ));
        checks.push(Check::flag("picard_monotone", pic.monotone));
        checks.push(Check::new(
            "picard_identification",
            identification_residual(&pic, tree),
            AGREEMENT_TOL,
        ));
    }
    let moko = mokobodzki_construct(pair, tree)?;
    checks.push(Check::flag("mokobodzki", moko.satisfies(pair, tree, 1e-9)));
    if tree.len() <= ENUMERATION_NODE_CAP {
        let g = game_values(pair, f, tree, &StoppingTime::at_root(tree), true)?;
        let gap = (g.upper[0] - sol.y0()).abs().max((g.lower[0] - sol.y0()).abs());
        checks.push(Check::new("system_game_value", gap, VERIFY_TOL * (1.0 + sol.y0().abs())));
    }
    Ok((sol.y0(), checks))
}

fn outcome(index: usize, seed: u64, s: &ScenarioFile) -> InstanceOutcome {
    let tree = s.build_tree().ok();
    let (nodes, depth) = tree.as_ref().map_or((0, 0), |t| (t.len(), t.depth()));
    match check_scenario(s) {
        Ok((y0, checks)) => InstanceOutcome {
            index,
            seed,
            nodes,
            depth,
            driver: s.driver.name.clone(),
            y0: Some(y0),
            passed: checks.iter().all(|c| c.passed),
            checks,
            error: None,
        },
        Err(e) => InstanceOutcome {
            index,
            seed,
            nodes,
            depth,
            driver: s.driver.name.clone(),
            y0: None,
            checks: Vec::new(),
            error: Some(e.to_string()),
            passed: false,
        },
    }
}

fn scenario_fails(s: &ScenarioFile) -> bool {
    match check_scenario(s) {
        Ok((_, checks)) => checks.iter().any(|c| !c.passed),
        Err(_) => true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub n: usize,
    pub passed: usize,
    pub failed: usize,
    pub first_failure: Option<usize>,
    pub instances: Vec<InstanceOutcome>,
    /// Minimized copy of the first failing scenario.
    #[serde(skip)]
    pub repro: Option<ScenarioFile>,
}

/// Per-instance seeds drawn from the master seed.
pub fn instance_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// The fuzz instance for a given instance seed.
pub fn fuzz_scenario(instance_seed: u64) -> ScenarioFile {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    let opts = GenOptions {
        enumerable: rng.gen_bool(0.5),
        ..GenOptions::default()
    };
    let mut s = random_scenario(&mut rng, &opts);
    s.seed = Some(instance_seed);
    s
}

/// Generates `n` instances from `seed`, checks each, and minimizes the
/// first failure.
pub fn run_fuzz(seed: u64, n: usize) -> FuzzReport {
    let seeds = instance_seeds(seed, n);
    let instances: Vec<InstanceOutcome> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| outcome(i, s, &fuzz_scenario(s)))
        .collect();
    let first_failure = instances.iter().position(|o| !o.passed);
    let repro = first_failure.map(|i| minimize(&fuzz_scenario(seeds[i]), scenario_fails));
    let failed = instances.iter().filter(|o| !o.passed).count();
    FuzzReport {
        seed,
        n,
        passed: n - failed,
        failed,
        first_failure,
        instances,
        repro,
    }
}

/// The scenario cut at `depth` steps: deeper nodes are dropped and the new
/// terminal nodes get `zeta = xi = xi.at`.
fn truncate(s: &ScenarioFile, depth: usize) -> Option<ScenarioFile> {
    let tree = s.build_tree().ok()?;
    if depth == 0 || depth >= tree.depth() {
        return None;
    }
    let keep = tree.level_nodes(depth).end;
    let mut out = s.clone();
    out.tree.grid = GridSpec::Times(tree.grid().times()[..=depth].to_vec());
    if let BarrierSpec::Tables { xi, zeta } = &mut out.barriers {
        let cut = |t: &mut SlotTable| {
            t.at.truncate(keep);
            if let Some(r) = &mut t.right {
                r.truncate(keep);
            }
        };
        cut(xi);
        cut(zeta);
        for n in tree.level_nodes(depth) {
            let v = xi.at[n];
            zeta.at[n] = v;
            if let Some(r) = &mut xi.right {
                r[n] = v;
            }
            if let Some(r) = &mut zeta.right {
                r[n] = v;
            }
        }
    } else {
        return None;
    }
    if out.driver.name == "process" {
        if let Some(values) = out.driver.params.get_mut("values").and_then(|v| v.as_array_mut()) {
            values.truncate(keep);
        }
    }
    Some(out)
}

/// Shrinks a failing scenario while `fails` keeps holding: tree depth
/// first, then the interval slots of `xi` and `zeta` are made equal to the
/// instant slots.
pub fn minimize(s: &ScenarioFile, fails: impl Fn(&ScenarioFile) -> bool) -> ScenarioFile {
    let mut best = s.clone();
    loop {
        let depth = best.build_tree().map(|t| t.depth()).unwrap_or(0);
        let shorter = (1..depth).filter_map(|d| truncate(&best, d)).find(|c| fails(c));
        match shorter {
            Some(c) => best = c,
            None => break,
        }
    }
    for which in 0..2 {
        let mut cand = best.clone();
        if let BarrierSpec::Tables { xi, zeta } = &mut cand.barriers {
            let t = if which == 0 { xi } else { zeta };
            t.right = None;
        }
        if cand.resolve().is_ok() && fails(&cand) {
            best = cand;
        }
    }
    best
}
