//! Stopping times, stopping systems and brute-force E^f Dynkin games.
//!
//! A stopping time is a set of stopped nodes that is closed under taking
//! descendants and contains every terminal node; it stops at the first
//! stopped node of each path (its effective node). A stopping system adds a
//! flag per effective node: stop at the instant (`h = true`) or on the
//! interval just after it (`h = false`).
//!
//! Payoffs of a system pair follow effective times: at a node, stopping at
//! the instant comes before stopping just after it, which comes before any
//! later node; ties go to the maximizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{check_contraction, step_value, Driver};
use crate::drbsde::{solve_direct, DrbsdeSolution};
use crate::error::{Error, Result};
use crate::process::{regularity, AdmissiblePair};
use crate::tree::{NodeId, ScenarioTree};

/// Largest tree on which strategies are enumerated.
pub const ENUMERATION_NODE_CAP: usize = 20;
/// Relative tolerance of the saddle inequalities and value equalities.
pub const GAME_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoppingTime {
    stop: Vec<bool>,
}

impl StoppingTime {
    /// Canonical stopping time from any marking: descendants of marked nodes
    /// and terminal nodes are added.
    pub fn new(tree: &ScenarioTree, mut stop: Vec<bool>) -> Result<Self> {
        if stop.len() != tree.len() {
            return Err(Error::InvalidStopping(format!(
                "{} flags for a tree of {} nodes",
                stop.len(),
                tree.len()
            )));
        }
        for n in 1..tree.len() {
            let p = tree.parent(n).expect("non-root");
            stop[n] |= stop[p];
        }
        for n in tree.leaves() {
            stop[n] = true;
        }
        Ok(Self { stop })
    }

    pub fn at_root(tree: &ScenarioTree) -> Self {
        Self {
            stop: vec![true; tree.len()],
        }
    }

    pub fn terminal(tree: &ScenarioTree) -> Self {
        Self::at_level(tree, tree.depth())
    }

    /// The deterministic time `t_level` (clamped to the horizon).
    pub fn at_level(tree: &ScenarioTree, level: usize) -> Self {
        let level = level.min(tree.depth());
        Self {
            stop: (0..tree.len()).map(|n| tree.level(n) >= level).collect(),
        }
    }

    /// Stops at the given nodes (and at the horizon elsewhere).
    pub fn at_nodes(tree: &ScenarioTree, nodes: &[NodeId]) -> Result<Self> {
        let mut stop = vec![false; tree.len()];
        for &n in nodes {
            if n >= tree.len() {
                return Err(Error::InvalidStopping(format!("node {n} is not in the tree")));
            }
            stop[n] = true;
        }
        Self::new(tree, stop)
    }

    /// First node at or after `theta` satisfying `hit`, or the horizon.
    pub fn first_hit(tree: &ScenarioTree, theta: &StoppingTime, hit: impl Fn(NodeId) -> bool) -> Self {
        let mut stop = vec![false; tree.len()];
        for n in 0..tree.len() {
            let inherited = tree.parent(n).is_some_and(|p| stop[p]);
            stop[n] = inherited || tree.is_terminal(n) || (theta.stop[n] && hit(n));
        }
        Self { stop }
    }

    pub fn flags(&self) -> &[bool] {
        &self.stop
    }

    pub fn is_stopped(&self, n: NodeId) -> bool {
        self.stop[n]
    }

    /// `n` is the first stopped node of its path.
    pub fn is_effective(&self, tree: &ScenarioTree, n: NodeId) -> bool {
        self.stop[n] && tree.parent(n).is_none_or(|p| !self.stop[p])
    }

    pub fn effective_nodes(&self, tree: &ScenarioTree) -> Vec<NodeId> {
        (0..tree.len()).filter(|&n| self.is_effective(tree, n)).collect()
    }

    /// A node where `other` has stopped but `self` has not, i.e. a witness
    /// that `self <= other` fails.
    pub fn first_violation_le(&self, other: &StoppingTime) -> Option<NodeId> {
        (0..self.stop.len()).find(|&n| other.stop[n] && !self.stop[n])
    }

    /// `self <= other` pathwise.
    pub fn le(&self, other: &StoppingTime) -> bool {
        self.first_violation_le(other).is_none()
    }
}

/// A stopping time with the choice of stopping at or just after each effective node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoppingSystem {
    pub tau: StoppingTime,
    /// Meaningful at effective nodes of `tau`; `true` elsewhere.
    h: Vec<bool>,
}

impl StoppingSystem {
    pub fn new(tree: &ScenarioTree, tau: StoppingTime, mut h: Vec<bool>) -> Result<Self> {
        if h.len() != tree.len() {
            return Err(Error::InvalidStopping(format!(
                "{} flags for a tree of {} nodes",
                h.len(),
                tree.len()
            )));
        }
        for (n, flag) in h.iter_mut().enumerate() {
            if tree.is_terminal(n) && !*flag && tau.is_effective(tree, n) {
                return Err(Error::InvalidStopping(format!(
                    "cannot stop after the horizon at terminal node {n}"
                )));
            }
            if !tau.is_effective(tree, n) {
                *flag = true;
            }
        }
        Ok(Self { tau, h })
    }

    /// Stops at the instants of `tau` everywhere.
    pub fn from_time(tree: &ScenarioTree, tau: StoppingTime) -> Self {
        Self {
            tau,
            h: vec![true; tree.len()],
        }
    }

    /// Stop at the instant (in the set `H`) or just after it.
    pub fn stops_at_instant(&self, n: NodeId) -> bool {
        self.h[n]
    }

    pub fn flags(&self) -> &[bool] {
        &self.h
    }

    /// Effective nodes with their flag, for reports.
    pub fn describe(&self, tree: &ScenarioTree) -> Strategy {
        let nodes = self.tau.effective_nodes(tree);
        let after = nodes.iter().copied().filter(|&n| !self.h[n]).collect();
        Strategy { stop: nodes, after }
    }
}

/// Readable form of a strategy: effective nodes and those stopping just after.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Strategy {
    pub stop: Vec<NodeId>,
    pub after: Vec<NodeId>,
}

/// Payoff of a system pair at a node where the earlier of the two stops.
fn pair_payoff(
    pair: &AdmissiblePair,
    tree: &ScenarioTree,
    rho: &StoppingSystem,
    delta: &StoppingSystem,
    n: NodeId,
) -> f64 {
    let r = rho.tau.is_effective(tree, n);
    let d = delta.tau.is_effective(tree, n);
    match (r, d) {
        (true, true) => {
            if rho.h[n] {
                pair.xi.at[n]
            } else if delta.h[n] {
                pair.zeta.at[n]
            } else {
                pair.xi.right[n]
            }
        }
        (true, false) => {
            if rho.h[n] {
                pair.xi.at[n]
            } else {
                pair.xi.right[n]
            }
        }
        _ => {
            if delta.h[n] {
                pair.zeta.at[n]
            } else {
                pair.zeta.right[n]
            }
        }
    }
}

fn union_effective(tree: &ScenarioTree, a: &StoppingTime, b: &StoppingTime, n: NodeId) -> bool {
    let here = a.stop[n] || b.stop[n];
    here && tree.parent(n).is_none_or(|p| !(a.stop[p] || b.stop[p]))
}

/// `xi_tau 1{tau <= sigma} + zeta_sigma 1{sigma < tau}` at the effective
/// nodes of `tau ^ sigma`.
pub fn payoff_i(
    pair: &AdmissiblePair,
    tree: &ScenarioTree,
    tau: &StoppingTime,
    sigma: &StoppingTime,
) -> Vec<(NodeId, f64)> {
    let rho = StoppingSystem::from_time(tree, tau.clone());
    let delta = StoppingSystem::from_time(tree, sigma.clone());
    payoff_i_systems(pair, tree, &rho, &delta)
}

/// System payoff at the effective nodes of the earlier stop; stopping just
/// after a node pays the interval value of the barrier.
pub fn payoff_i_systems(
    pair: &AdmissiblePair,
    tree: &ScenarioTree,
    rho: &StoppingSystem,
    delta: &StoppingSystem,
) -> Vec<(NodeId, f64)> {
    (0..tree.len())
        .filter(|&n| union_effective(tree, &rho.tau, &delta.tau, n))
        .map(|n| (n, pair_payoff(pair, tree, rho, delta, n)))
        .collect()
}

/// Number of stopping times (or systems) of the subtree at `n`, by recursion.
pub fn count_strategies(tree: &ScenarioTree, n: NodeId, systems: bool) -> u128 {
    if tree.is_terminal(n) {
        return 1;
    }
    let prod: u128 = tree.children(n).map(|c| count_strategies(tree, c, systems)).product();
    prod + if systems { 2 } else { 1 }
}

/// Effective `(node, h)` choices of every strategy of the subtree at `n`.
fn enumerate_from(tree: &ScenarioTree, n: NodeId, systems: bool) -> Vec<Vec<(NodeId, bool)>> {
    let mut out = vec![vec![(n, true)]];
    if tree.is_terminal(n) {
        return out;
    }
    if systems {
        out.push(vec![(n, false)]);
    }
    let mut prod: Vec<Vec<(NodeId, bool)>> = vec![Vec::new()];
    for c in tree.children(n) {
        let sub = enumerate_from(tree, c, systems);
        prod = prod
            .iter()
            .flat_map(|head| {
                sub.iter().map(move |tail| {
                    let mut v = head.clone();
                    v.extend_from_slice(tail);
                    v
                })
            })
            .collect();
    }
    out.extend(prod);
    out
}

fn check_cap(tree: &ScenarioTree) -> Result<()> {
    if tree.len() > ENUMERATION_NODE_CAP {
        Err(Error::EnumerationTooLarge {
            nodes: tree.len(),
            cap: ENUMERATION_NODE_CAP,
        })
    } else {
        Ok(())
    }
}

/// Every stopping system of the tree (every stopping time when `systems` is
/// false, encoded with `h = true`).
pub fn enumerate_stopping(tree: &ScenarioTree, systems: bool) -> Result<Vec<StoppingSystem>> {
    check_cap(tree)?;
    let choices = enumerate_from(tree, tree.root(), systems);
    Ok(choices
        .into_iter()
        .map(|eff| {
            let mut stop = vec![false; tree.len()];
            let mut h = vec![true; tree.len()];
            for (node, flag) in eff {
                for range in tree.subtree_levels(node) {
                    stop[range].fill(true);
                }
                h[node] = flag;
            }
            StoppingSystem {
                tau: StoppingTime { stop },
                h,
            }
        })
        .collect())
}

/// Strategies not earlier than `theta`.
fn enumerate_after(tree: &ScenarioTree, theta: &StoppingTime, systems: bool) -> Result<Vec<StoppingSystem>> {
    Ok(enumerate_stopping(tree, systems)?
        .into_iter()
        .filter(|s| theta.le(&s.tau))
        .collect())
}

/// `E^f_{theta, rho ^ delta}[payoff]` at every node stopped by `theta`;
/// `buf` is scratch of tree length, values at the effective nodes of `theta`
/// are left in it.
fn evaluate_pair(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    theta: &StoppingTime,
    rho: &StoppingSystem,
    delta: &StoppingSystem,
    buf: &mut [f64],
) -> Result<()> {
    for n in (0..tree.len()).rev() {
        if !theta.stop[n] {
            continue;
        }
        if union_effective(tree, &rho.tau, &delta.tau, n) {
            buf[n] = pair_payoff(pair, tree, rho, delta, n);
        } else if !(rho.tau.stop[n] || delta.tau.stop[n]) {
            buf[n] = step_value(tree, n, buf, f)?;
        }
    }
    Ok(())
}

/// Criterion values at the effective nodes of `theta`, in their order.
fn criterion_at(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    theta_nodes: &[NodeId],
    theta: &StoppingTime,
    rho: &StoppingSystem,
    delta: &StoppingSystem,
    buf: &mut [f64],
) -> Result<Vec<f64>> {
    evaluate_pair(pair, f, tree, theta, rho, delta, buf)?;
    Ok(theta_nodes.iter().map(|&n| buf[n]).collect())
}

fn scale(pair: &AdmissiblePair) -> f64 {
    1.0 + pair.xi.sup_abs().max(pair.zeta.sup_abs())
}

/// Upper and lower values of the game at the effective nodes of `theta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameReport {
    pub systems: bool,
    pub theta_nodes: Vec<NodeId>,
    /// `ess inf_sigma ess sup_tau` per node of `theta_nodes`.
    pub upper: Vec<f64>,
    /// `ess sup_tau ess inf_sigma` per node of `theta_nodes`.
    pub lower: Vec<f64>,
    pub has_value: bool,
    pub maximizer_count: usize,
    pub minimizer_count: usize,
    /// Maximizer attaining the lower value at each node (index into `maximizers`).
    pub best_maximizer: Vec<usize>,
    /// Minimizer attaining the upper value at each node (index into `minimizers`).
    pub best_minimizer: Vec<usize>,
    pub best_maximizer_strategy: Vec<Strategy>,
    pub best_minimizer_strategy: Vec<Strategy>,
    #[serde(skip)]
    pub maximizers: Vec<StoppingSystem>,
    #[serde(skip)]
    pub minimizers: Vec<StoppingSystem>,
    /// `criterion[i][j][m]`: maximizer `i` against minimizer `j` at `theta_nodes[m]`.
    #[serde(skip)]
    pub criterion: Vec<Vec<Vec<f64>>>,
}

/// Brute-force values of the E^f Dynkin game over stopping times, or over
/// stopping systems when `systems` is set.
pub fn game_values(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    theta: &StoppingTime,
    systems: bool,
) -> Result<GameReport> {
    let pair = AdmissiblePair::new(tree, pair.xi.clone(), pair.zeta.clone())?;
    check_contraction(f, tree)?;
    let strategies = enumerate_after(tree, theta, systems)?;
    let theta_nodes = theta.effective_nodes(tree);
    let criterion: Vec<Vec<Vec<f64>>> = strategies
        .par_iter()
        .map(|rho| {
            let mut buf = vec![0.0; tree.len()];
            strategies
                .iter()
                .map(|delta| criterion_at(&pair, f, tree, &theta_nodes, theta, rho, delta, &mut buf))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let m = strategies.len();
    let mut upper = Vec::with_capacity(theta_nodes.len());
    let mut lower = Vec::with_capacity(theta_nodes.len());
    let (mut best_max, mut best_min) = (Vec::new(), Vec::new());
    for q in 0..theta_nodes.len() {
        let (mut lo, mut arg_lo) = (f64::NEG_INFINITY, 0);
        for (i, row) in criterion.iter().enumerate() {
            let worst = row.iter().map(|v| v[q]).fold(f64::INFINITY, f64::min);
            if worst > lo {
                lo = worst;
                arg_lo = i;
            }
        }
        let (mut up, mut arg_up) = (f64::INFINITY, 0);
        for j in 0..m {
            let best = criterion.iter().map(|row| row[j][q]).fold(f64::NEG_INFINITY, f64::max);
            if best < up {
                up = best;
                arg_up = j;
            }
        }
        upper.push(up);
        lower.push(lo);
        best_max.push(arg_lo);
        best_min.push(arg_up);
    }
    let tol = GAME_TOL * scale(&pair);
    let has_value = upper.iter().zip(&lower).all(|(u, l)| (u - l).abs() <= tol);
    Ok(GameReport {
        systems,
        best_maximizer_strategy: best_max.iter().map(|&i| strategies[i].describe(tree)).collect(),
        best_minimizer_strategy: best_min.iter().map(|&j| strategies[j].describe(tree)).collect(),
        theta_nodes,
        upper,
        lower,
        has_value,
        maximizer_count: m,
        minimizer_count: m,
        best_maximizer: best_max,
        best_minimizer: best_min,
        maximizers: strategies.clone(),
        minimizers: strategies,
        criterion,
    })
}

/// `L = exp((1 + 2K + K^2) T)`.
pub fn saddle_constant(f: &Driver, tree: &ScenarioTree) -> f64 {
    let k = f.lipschitz();
    ((1.0 + 2.0 * k + k * k) * tree.grid().horizon()).exp()
}

/// Largest violations of the two one-sided saddle inequalities
/// `J(tau, sigma_hat) - slack <= Y_theta <= J(tau_hat, sigma) + slack`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleCheck {
    /// `max_sigma (Y_theta - slack - J(tau_hat, sigma))^+`.
    pub maximizer_violation: f64,
    /// `max_tau (J(tau, sigma_hat) - Y_theta - slack)^+`.
    pub minimizer_violation: f64,
    pub opponents: usize,
    pub holds: bool,
}

/// Checks a candidate pair against every enumerated opponent.
#[allow(clippy::too_many_arguments)]
fn check_saddle(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    theta: &StoppingTime,
    y: &[f64],
    rho_hat: &StoppingSystem,
    delta_hat: &StoppingSystem,
    opponents: &[StoppingSystem],
    slack: f64,
) -> Result<SaddleCheck> {
    let theta_nodes = theta.effective_nodes(tree);
    let sides: Vec<(f64, f64)> = opponents
        .par_iter()
        .map(|o| {
            let mut buf = vec![0.0; tree.len()];
            let against_max =
                criterion_at(pair, f, tree, &theta_nodes, theta, rho_hat, o, &mut buf)?;
            let against_min =
                criterion_at(pair, f, tree, &theta_nodes, theta, o, delta_hat, &mut buf)?;
            let mut v = (0.0f64, 0.0f64);
            for (q, &n) in theta_nodes.iter().enumerate() {
                v.0 = v.0.max(y[n] - slack - against_max[q]);
                v.1 = v.1.max(against_min[q] - y[n] - slack);
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let maximizer_violation = sides.iter().map(|s| s.0).fold(0.0, f64::max);
    let minimizer_violation = sides.iter().map(|s| s.1).fold(0.0, f64::max);
    let tol = GAME_TOL * scale(pair);
    Ok(SaddleCheck {
        maximizer_violation,
        minimizer_violation,
        opponents: opponents.len(),
        holds: maximizer_violation <= tol && minimizer_violation <= tol,
    })
}

/// Checks `E^f_{theta, s}[Y_s] >= Y_theta` (or `<=` when `sub` is false) for
/// every enumerated stopping time `theta <= s <= bound`.
fn check_martingale_side(
    sol: &DrbsdeSolution,
    f: &Driver,
    tree: &ScenarioTree,
    theta: &StoppingTime,
    bound: &StoppingTime,
    sub: bool,
    tol: f64,
) -> Result<bool> {
    let times = enumerate_stopping(tree, false)?;
    let theta_nodes = theta.effective_nodes(tree);
    let mut buf = vec![0.0; tree.len()];
    for s in times.iter().filter(|s| theta.le(&s.tau) && s.tau.le(bound)) {
        for n in (0..tree.len()).rev() {
            if !theta.stop[n] {
                continue;
            }
            if s.tau.is_effective(tree, n) {
                buf[n] = sol.y.at[n];
            } else if !s.tau.stop[n] {
                buf[n] = step_value(tree, n, &buf, f)?;
            }
        }
        for &n in &theta_nodes {
            let d = buf[n] - sol.y.at[n];
            if (sub && d < -tol) || (!sub && d > tol) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonSaddleReport {
    pub epsilon: f64,
    pub l_constant: f64,
    pub tau: Strategy,
    pub sigma: Strategy,
    pub check: SaddleCheck,
    /// `Y` is an E^f-submartingale on `[theta, tau_eps]`.
    pub submartingale_up_to_tau: bool,
    /// `Y` is an E^f-supermartingale on `[theta, sigma_eps]`.
    pub supermartingale_up_to_sigma: bool,
    #[serde(skip)]
    pub tau_eps: StoppingTime,
    #[serde(skip)]
    pub sigma_eps: StoppingTime,
}

impl EpsilonSaddleReport {
    pub fn holds(&self) -> bool {
        self.check.holds && self.submartingale_up_to_tau && self.supermartingale_up_to_sigma
    }
}

/// `tau_eps` and `sigma_eps` for right-regular barriers, checked against
/// every enumerated opponent with slack `L eps`.
pub fn epsilon_saddle(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    theta: &StoppingTime,
    eps: f64,
) -> Result<EpsilonSaddleReport> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("epsilon must be positive".into()));
    }
    if !regularity(&pair.xi, tree).right_usc || !regularity(&pair.zeta, tree).right_lsc {
        return Err(Error::Regularity(
            "need xi right-usc and zeta right-lsc; use the stopping-system variant".into(),
        ));
    }
    let sol = solve_direct(pair, f, tree)?;
    let y = &sol.y;
    let tau = StoppingTime::first_hit(tree, theta, |n| y.at[n] <= pair.xi.at[n] + eps);
    let sigma = StoppingTime::first_hit(tree, theta, |n| y.at[n] >= pair.zeta.at[n] - eps);
    let l = saddle_constant(f, tree);
    let rho = StoppingSystem::from_time(tree, tau.clone());
    let delta = StoppingSystem::from_time(tree, sigma.clone());
    let opponents = enumerate_after(tree, theta, false)?;
    let check = check_saddle(pair, f, tree, theta, &y.at, &rho, &delta, &opponents, l * eps)?;
    let tol = GAME_TOL * scale(pair);
    Ok(EpsilonSaddleReport {
        epsilon: eps,
        l_constant: l,
        tau: rho.describe(tree),
        sigma: delta.describe(tree),
        check,
        submartingale_up_to_tau: check_martingale_side(&sol, f, tree, theta, &tau, true, tol)?,
        supermartingale_up_to_sigma: check_martingale_side(&sol, f, tree, theta, &sigma, false, tol)?,
        tau_eps: tau,
        sigma_eps: sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddlePointsReport {
    pub tau_star: Strategy,
    pub sigma_star: Strategy,
    pub tau_bar: Strategy,
    pub sigma_bar: Strategy,
    pub star: SaddleCheck,
    pub bar: SaddleCheck,
    /// `tau* <= tau_bar` and `sigma* <= sigma_bar`.
    pub ordered: bool,
    /// `Y = xi` at `tau*` and `Y = zeta` at `sigma*`.
    pub contact: bool,
    #[serde(skip)]
    pub times: [StoppingTime; 4],
}

impl SaddlePointsReport {
    pub fn holds(&self) -> bool {
        self.star.holds && self.bar.holds && self.ordered && self.contact
    }
}

/// Hitting-time and first-increase saddle points for barriers regular from
/// both sides, each checked exactly against every enumerated opponent.
pub fn saddle_points(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    theta: &StoppingTime,
) -> Result<SaddlePointsReport> {
    let rx = regularity(&pair.xi, tree);
    let rz = regularity(&pair.zeta, tree);
    if !(rx.right_usc && rx.left_usc_along_st && rz.right_lsc && rz.left_lsc_along_st) {
        return Err(Error::Regularity(
            "need xi left- and right-usc and zeta left- and right-lsc".into(),
        ));
    }
    let sol = solve_direct(pair, f, tree)?;
    let y = &sol.y;
    let first_child_inc = |inc: &[f64], n: NodeId| {
        !tree.is_terminal(n) && inc[tree.children(n).start] > 0.0
    };
    let tau_star = StoppingTime::first_hit(tree, theta, |n| y.at[n] <= pair.xi.at[n]);
    let sigma_star = StoppingTime::first_hit(tree, theta, |n| y.at[n] >= pair.zeta.at[n]);
    let tau_bar = StoppingTime::first_hit(tree, theta, |n| {
        sol.c_jump[n] > 0.0 || first_child_inc(&sol.a_inc, n)
    });
    let sigma_bar = StoppingTime::first_hit(tree, theta, |n| {
        sol.cp_jump[n] > 0.0 || first_child_inc(&sol.ap_inc, n)
    });
    let opponents = enumerate_after(tree, theta, false)?;
    let sys = |t: &StoppingTime| StoppingSystem::from_time(tree, t.clone());
    let star = check_saddle(pair, f, tree, theta, &y.at, &sys(&tau_star), &sys(&sigma_star), &opponents, 0.0)?;
    let bar = check_saddle(pair, f, tree, theta, &y.at, &sys(&tau_bar), &sys(&sigma_bar), &opponents, 0.0)?;
    let tol = GAME_TOL * scale(pair);
    let contact = tau_star
        .effective_nodes(tree)
        .iter()
        .all(|&n| (y.at[n] - pair.xi.at[n]).abs() <= tol)
        && sigma_star
            .effective_nodes(tree)
            .iter()
            .all(|&n| (y.at[n] - pair.zeta.at[n]).abs() <= tol);
    Ok(SaddlePointsReport {
        tau_star: sys(&tau_star).describe(tree),
        sigma_star: sys(&sigma_star).describe(tree),
        tau_bar: sys(&tau_bar).describe(tree),
        sigma_bar: sys(&sigma_bar).describe(tree),
        star,
        bar,
        ordered: tau_star.le(&tau_bar) && sigma_star.le(&sigma_bar),
        contact,
        times: [tau_star, sigma_star, tau_bar, sigma_bar],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSaddleReport {
    pub epsilon: f64,
    pub l_constant: f64,
    pub rho: Strategy,
    pub delta: Strategy,
    pub check: SaddleCheck,
    /// `Y_rho <= xi^u_rho + eps` and `Y_delta >= zeta^l_delta - eps` at the stops.
    pub barrier_bounds: bool,
    #[serde(skip)]
    pub rho_eps: StoppingSystem,
    #[serde(skip)]
    pub delta_eps: StoppingSystem,
}

impl SystemSaddleReport {
    pub fn holds(&self) -> bool {
        self.check.holds && self.barrier_bounds
    }
}

/// `rho_eps` and `delta_eps` for arbitrary barriers: stop at the first node
/// where `Y` comes within `eps` of the barrier at the instant or on the
/// interval after it, at the instant when possible.
pub fn system_epsilon_saddle(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    theta: &StoppingTime,
    eps: f64,
) -> Result<SystemSaddleReport> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("epsilon must be positive".into()));
    }
    check_cap(tree)?;
    let sol = solve_direct(pair, f, tree)?;
    let y = &sol.y;
    let (xi, zeta) = (&pair.xi, &pair.zeta);
    let at_lo = |n: NodeId| y.at[n] <= xi.at[n] + eps;
    let right_lo = |n: NodeId| y.right[n] <= xi.right[n] + eps;
    let at_hi = |n: NodeId| y.at[n] >= zeta.at[n] - eps;
    let right_hi = |n: NodeId| y.right[n] >= zeta.right[n] - eps;
    let tau = StoppingTime::first_hit(tree, theta, |n| at_lo(n) || right_lo(n));
    let sigma = StoppingTime::first_hit(tree, theta, |n| at_hi(n) || right_hi(n));
    let h: Vec<bool> = (0..tree.len()).map(at_lo).collect();
    let g: Vec<bool> = (0..tree.len()).map(at_hi).collect();
    let rho = StoppingSystem::new(tree, tau, h)?;
    let delta = StoppingSystem::new(tree, sigma, g)?;
    let l = saddle_constant(f, tree);
    let opponents = enumerate_after(tree, theta, true)?;
    let check = check_saddle(pair, f, tree, theta, &y.at, &rho, &delta, &opponents, l * eps)?;
    let tol = GAME_TOL * scale(pair);
    let lower_ok = rho.tau.effective_nodes(tree).into_iter().all(|n| {
        if rho.h[n] {
            y.at[n] <= xi.at[n] + eps + tol
        } else {
            y.right[n] <= xi.right[n] + eps + tol
        }
    });
    let upper_ok = delta.tau.effective_nodes(tree).into_iter().all(|n| {
        if delta.h[n] {
            y.at[n] >= zeta.at[n] - eps - tol
        } else {
            y.right[n] >= zeta.right[n] - eps - tol
        }
    });
    Ok(SystemSaddleReport {
        epsilon: eps,
        l_constant: l,
        rho: rho.describe(tree),
        delta: delta.describe(tree),
        check,
        barrier_bounds: lower_ok && upper_ok,
        rho_eps: rho,
        delta_eps: delta,
    })
}
