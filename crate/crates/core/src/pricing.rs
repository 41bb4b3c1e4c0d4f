//! Game-option pricing in a market with a bond, a diffusive asset and a
//! jump asset on the scenario tree.
//!
//! Asset `i` moves by `S (1 + mu_i dt + sigma_i dW + beta_i dN~)` on every
//! edge. The volatility matrix has rows `(sigma_i, beta_i)`, so a hedge
//! holding `phi_i` in asset `i` has `(Z, k) = phi' Sigma`.

use serde::{Deserialize, Serialize};

use crate::bsde::Driver;
use crate::drbsde::{solve_direct, DrbsdeSolution};
use crate::dynkin::StoppingTime;
use crate::error::{Error, Result};
use crate::process::{regularity, AdmissiblePair, LadlagProcess, Regularity};
use crate::tree::{AdaptedProcess, NodeId, ScenarioTree, Scheme};

/// Tolerance of the pathwise superhedge check.
pub const SUPERHEDGE_TOL: f64 = 1e-9;

/// Constant market coefficients. Missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    /// Lending (bond) rate `r`.
    pub r: f64,
    /// Borrowing rate `R`, used by the two-rates driver.
    pub borrow_rate: f64,
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub beta: [f64; 2],
    /// Repo rates `b_i` on long positions.
    pub repo_borrow: [f64; 2],
    /// Repo rates `l_i` on short positions.
    pub repo_lend: [f64; 2],
    /// Initial prices of the bond and the two assets.
    pub s0: [f64; 3],
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            r: 0.0,
            borrow_rate: 0.0,
            mu: [0.0, 0.0],
            sigma: [0.2, 0.0],
            beta: [0.0, 0.3],
            repo_borrow: [0.0, 0.0],
            repo_lend: [0.0, 0.0],
            s0: [1.0, 100.0, 100.0],
        }
    }
}

impl MarketParams {
    /// `Sigma^{-1}` for `Sigma = [[sigma_1, beta_1], [sigma_2, beta_2]]`.
    pub fn sigma_inverse(&self) -> Result<[[f64; 2]; 2]> {
        let [s1, s2] = self.sigma;
        let [b1, b2] = self.beta;
        let det = s1 * b2 - b1 * s2;
        let norm = s1.abs().max(s2.abs()).max(b1.abs()).max(b2.abs());
        if !det.is_finite() || det.abs() <= 1e-12 * (1.0 + norm * norm) {
            return Err(Error::SingularSigma(det));
        }
        Ok([[b2 / det, -b1 / det], [-s2 / det, s1 / det]])
    }

    /// Market prices of risk `Sigma^{-1}(mu - r 1)` for `(W, N~)`.
    pub fn risk_premia(&self) -> Result<[f64; 2]> {
        let inv = self.sigma_inverse()?;
        let v = [self.mu[0] - self.r, self.mu[1] - self.r];
        Ok([
            inv[0][0] * v[0] + inv[0][1] * v[1],
            inv[1][0] * v[0] + inv[1][1] * v[1],
        ])
    }
}

/// Market coefficients with the simulated price processes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketModel {
    pub params: MarketParams,
    pub sigma_inv: [[f64; 2]; 2],
    /// Bond, asset 1 and asset 2 prices per node.
    pub prices: [Vec<f64>; 3],
}

impl MarketModel {
    /// Holdings `phi' = (z, k) Sigma^{-1}`.
    pub fn portfolio(&self, z: f64, k: f64) -> [f64; 2] {
        let inv = &self.sigma_inv;
        [z * inv[0][0] + k * inv[1][0], z * inv[0][1] + k * inv[1][1]]
    }

    /// `(z, k) = phi' Sigma`.
    pub fn integrands(&self, phi: [f64; 2]) -> (f64, f64) {
        let p = &self.params;
        (
            phi[0] * p.sigma[0] + phi[1] * p.sigma[1],
            phi[0] * p.beta[0] + phi[1] * p.beta[1],
        )
    }
}

/// Validates the parameters and simulates the three prices forward.
pub fn build_market(params: &MarketParams, tree: &ScenarioTree) -> Result<MarketModel> {
    let p = params;
    let all = [p.r, p.borrow_rate]
        .into_iter()
        .chain(p.mu)
        .chain(p.sigma)
        .chain(p.beta)
        .chain(p.repo_borrow)
        .chain(p.repo_lend)
        .chain(p.s0);
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMarket("non-finite parameter".into()));
    }
    if p.beta.iter().any(|b| *b <= -1.0) {
        return Err(Error::InvalidMarket("jump loadings must exceed -1".into()));
    }
    if p.s0.iter().any(|s| *s <= 0.0) {
        return Err(Error::InvalidMarket("initial prices must be positive".into()));
    }
    let sigma_inv = p.sigma_inverse()?;
    let n = tree.len();
    let mut prices = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, s) in prices.iter_mut().enumerate() {
        s[0] = p.s0[i];
    }
    for c in 1..n {
        let parent = tree.parent(c).expect("non-root");
        let node = tree.node(c);
        let dt = tree.dt_after(parent);
        prices[0][c] = prices[0][parent] * (1.0 + p.r * dt);
        for i in 0..2 {
            let growth = 1.0 + p.mu[i] * dt + p.sigma[i] * node.dw + p.beta[i] * node.dn_comp;
            prices[i + 1][c] = prices[i + 1][parent] * growth;
            if prices[i + 1][c] <= 0.0 {
                return Err(Error::InvalidMarket(format!(
                    "asset {} price {} at node {c} is not positive",
                    i + 1,
                    prices[i + 1][c]
                )));
            }
        }
    }
    Ok(MarketModel {
        params: p.clone(),
        sigma_inv,
        prices,
    })
}

/// Wealth `X(child) = X - f(t, X, Z, k) dt + Z dW + k dN~` started from `x`.
pub fn wealth_forward(tree: &ScenarioTree, x: f64, z: &[f64], k: &[f64], f: &Driver) -> AdaptedProcess {
    let mut w = vec![0.0; tree.len()];
    w[0] = x;
    for c in 1..tree.len() {
        let p = tree.parent(c).expect("non-root");
        let node = tree.node(c);
        let drift = f.eval(p, tree.time(p), w[p], z[p], k[p]) * tree.dt_after(p);
        w[c] = w[p] - drift + z[p] * node.dw + k[p] * node.dn_comp;
    }
    AdaptedProcess { values: w }
}

/// Seller's hedge: initial wealth, holdings per node and cancellation time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgePlan {
    pub x: f64,
    pub phi: Vec<[f64; 2]>,
    pub sigma: StoppingTime,
}

impl HedgePlan {
    /// Same plan from a different initial wealth.
    pub fn with_wealth(&self, x: f64) -> Self {
        Self { x, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GamePrice {
    /// Seller's price `u0 = Y0`.
    pub u0: f64,
    pub xi_regularity: Regularity,
    pub zeta_regularity: Regularity,
    /// Hedges are only produced for barriers meeting the superhedging flags.
    pub hedge_star: Option<HedgePlan>,
    pub hedge_bar: Option<HedgePlan>,
    /// Four-branch trees carry an orthogonal martingale part no asset hedges.
    pub four_branch: bool,
    #[serde(skip)]
    pub solution: DrbsdeSolution,
}

/// Seller's price from the DRBSDE and, when the barriers allow it, the
/// hedges cancelling at the first contact with `zeta` (`sigma*`) and at the
/// first action of the upper reflection (`sigma_bar`).
pub fn price_game_option(
    pair: &AdmissiblePair,
    model: &MarketModel,
    f: &Driver,
    tree: &ScenarioTree,
) -> Result<GamePrice> {
    let sol = solve_direct(pair, f, tree)?;
    let rx = regularity(&pair.xi, tree);
    let rz = regularity(&pair.zeta, tree);
    let hedgeable = rx.right_usc && rz.right_lsc && rz.left_lsc_along_st;
    let phi: Vec<[f64; 2]> = (0..tree.len())
        .map(|n| model.portfolio(sol.z[n], sol.k[n]))
        .collect();
    let root = StoppingTime::at_root(tree);
    let plan = |sigma: StoppingTime| HedgePlan {
        x: sol.y0(),
        phi: phi.clone(),
        sigma,
    };
    let (hedge_star, hedge_bar) = if hedgeable {
        let y = &sol.y;
        let star = StoppingTime::first_hit(tree, &root, |n| y.at[n] >= pair.zeta.at[n]);
        let bar = StoppingTime::first_hit(tree, &root, |n| {
            sol.cp_jump[n] > 0.0
                || (!tree.is_terminal(n) && sol.ap_inc[tree.children(n).start] > 0.0)
        });
        (Some(plan(star)), Some(plan(bar)))
    } else {
        (None, None)
    };
    Ok(GamePrice {
        u0: sol.y0(),
        xi_regularity: rx,
        zeta_regularity: rz,
        hedge_star,
        hedge_bar,
        four_branch: tree.scheme() == Scheme::Four && tree.lambda() > 0.0,
        solution: sol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperhedgeReport {
    pub passes: bool,
    /// Smallest `X - barrier` over the checked nodes.
    pub min_margin: f64,
    /// Nodes where the wealth falls short.
    pub failures: Vec<NodeId>,
    #[serde(skip)]
    pub wealth: Vec<f64>,
}

/// Forward wealth of the plan checked pathwise: `X >= xi` up to the
/// cancellation time and `X >= zeta` at it.
pub fn superhedge_verify(
    plan: &HedgePlan,
    pair: &AdmissiblePair,
    model: &MarketModel,
    f: &Driver,
    tree: &ScenarioTree,
) -> Result<SuperhedgeReport> {
    if plan.phi.len() != tree.len() {
        return Err(Error::ProcessLength {
            expected: tree.len(),
            got: plan.phi.len(),
        });
    }
    let (z, k): (Vec<f64>, Vec<f64>) = plan.phi.iter().map(|p| model.integrands(*p)).unzip();
    let wealth = wealth_forward(tree, plan.x, &z, &k, f).values;
    let mut min_margin = f64::INFINITY;
    let mut failures = Vec::new();
    for n in 0..tree.len() {
        let before = tree.parent(n).is_none_or(|p| !plan.sigma.is_stopped(p));
        if !before {
            continue;
        }
        let barrier = if plan.sigma.is_effective(tree, n) {
            pair.zeta.at[n]
        } else {
            pair.xi.at[n]
        };
        let margin = wealth[n] - barrier;
        min_margin = min_margin.min(margin);
        if margin < -SUPERHEDGE_TOL {
            failures.push(n);
        }
    }
    Ok(SuperhedgeReport {
        passes: failures.is_empty(),
        min_margin,
        failures,
        wealth,
    })
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasketParams {
    /// Strike of `g(S1) = (S1 - strike)^+`.
    strike: f64,
    /// Level of asset 2 at which the exercise multiplier switches on.
    threshold: f64,
    /// Multiplier `delta` bounding `h`.
    delta: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct BarrierParams {
    strike: f64,
    /// Knock-out level `L` on the running minimum of asset 1.
    barrier: f64,
    /// Cancellation penalty.
    penalty: f64,
}

fn parse_builder<T: serde::de::DeserializeOwned>(name: &str, params: &serde_json::Value) -> Result<T> {
    serde_json::from_value(params.clone()).map_err(|e| Error::Scenario(format!("builder {name}: {e}")))
}

/// Barrier pairs from market prices.
///
/// * `basket`: `xi = g(S1) h(S2)` and `zeta = delta g(S1)` with
///   `g(s) = (s - strike)^+` and `h = delta 1{S2 >= threshold}`; the
///   interval slot uses the strict indicator, so `xi` is right-usc.
/// * `barrier_call`: `xi = (S1 - strike)^+ 1{min S1 >= barrier}` and
///   `zeta = xi + penalty`; again the interval slot uses `> barrier`.
///
/// Terminal values of `zeta` are set to those of `xi`.
pub fn payoff_builders(
    name: &str,
    params: &serde_json::Value,
    model: &MarketModel,
    tree: &ScenarioTree,
) -> Result<AdmissiblePair> {
    let n = tree.len();
    let s1 = &model.prices[1];
    let (xi_at, xi_right, zeta_at, zeta_right) = match name {
        "basket" => {
            let p: BasketParams = parse_builder(name, params)?;
            if !(p.delta >= 0.0) {
                return Err(Error::Scenario("basket: delta must be nonnegative".into()));
            }
            let s2 = &model.prices[2];
            let g = |i: usize| (s1[i] - p.strike).max(0.0);
            let h_at = |i: usize| if s2[i] >= p.threshold { p.delta } else { 0.0 };
            let h_right = |i: usize| if s2[i] > p.threshold { p.delta } else { 0.0 };
            let zeta: Vec<f64> = (0..n).map(|i| p.delta * g(i)).collect();
            (
                (0..n).map(|i| g(i) * h_at(i)).collect::<Vec<_>>(),
                (0..n).map(|i| g(i) * h_right(i)).collect::<Vec<_>>(),
                zeta.clone(),
                zeta,
            )
        }
        "barrier_call" => {
            let p: BarrierParams = parse_builder(name, params)?;
            if !(p.strike > p.barrier && p.barrier >= 0.0 && p.penalty >= 0.0) {
                return Err(Error::Scenario(
                    "barrier_call: need strike > barrier >= 0 and penalty >= 0".into(),
                ));
            }
            let mut running_min = vec![0.0f64; n];
            for i in 0..n {
                running_min[i] = match tree.parent(i) {
                    Some(q) => running_min[q].min(s1[i]),
                    None => s1[i],
                };
            }
            let call = |i: usize| (s1[i] - p.strike).max(0.0);
            let at: Vec<f64> = (0..n)
                .map(|i| if running_min[i] >= p.barrier { call(i) } else { 0.0 })
                .collect();
            let right: Vec<f64> = (0..n)
                .map(|i| if running_min[i] > p.barrier { call(i) } else { 0.0 })
                .collect();
            let zat = at.iter().map(|v| v + p.penalty).collect();
            let zright = right.iter().map(|v| v + p.penalty).collect();
            (at, right, zat, zright)
        }
        other => return Err(Error::UnknownBuilder(other.to_string())),
    };
    let xi = LadlagProcess::new(tree, xi_at, xi_right)?;
    let mut zeta = LadlagProcess::new(tree, zeta_at, zeta_right)?;
    for l in tree.leaves() {
        zeta.at[l] = xi.at[l];
        zeta.right[l] = xi.at[l];
    }
    AdmissiblePair::new(tree, xi, zeta)
}
