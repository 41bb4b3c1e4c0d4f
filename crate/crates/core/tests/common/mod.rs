//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use drbsde_core::pricing::MarketParams;
use drbsde_core::{AdmissiblePair, NodeId, ScenarioTree};

/// Child probabilities tilted so that `E_q[dW] = -theta_w dt` and
/// `E_q[dN~] = -theta_n dt`, found from the 2x2 Gram system of the edge data.
pub fn tilted_probs(tree: &ScenarioTree, node: NodeId, theta: [f64; 2]) -> Vec<f64> {
    let kids: Vec<_> = tree.children(node).map(|c| tree.node(c).clone()).collect();
    let dt = tree.dt_after(node);
    let mut g = [[0.0; 2]; 2];
    for e in &kids {
        let v = [e.dw, e.dn_comp];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] += e.prob * v[i] * v[j];
            }
        }
    }
    let target = [-theta[0] * dt, -theta[1] * dt];
    let (a, b) = if g[1][1] == 0.0 {
        (target[0] / g[0][0], 0.0)
    } else {
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        (
            (target[0] * g[1][1] - target[1] * g[0][1]) / det,
            (g[0][0] * target[1] - g[1][0] * target[0]) / det,
        )
    };
    kids.iter()
        .map(|e| e.prob * (1.0 + a * e.dw + b * e.dn_comp))
        .collect()
}

/// Classical Dynkin game value under the tilted measure with discounting:
/// `V = clamp(E_q[V(children)] / (1 + r dt), xi, zeta)`. Valid for
/// right-regular barriers.
pub fn tilted_dynkin(pair: &AdmissiblePair, m: &MarketParams, tree: &ScenarioTree) -> Vec<f64> {
    let det = m.sigma[0] * m.beta[1] - m.beta[0] * m.sigma[1];
    let inv = [
        [m.beta[1] / det, -m.beta[0] / det],
        [-m.sigma[1] / det, m.sigma[0] / det],
    ];
    let ex = [m.mu[0] - m.r, m.mu[1] - m.r];
    let theta = [
        inv[0][0] * ex[0] + inv[0][1] * ex[1],
        inv[1][0] * ex[0] + inv[1][1] * ex[1],
    ];
    let mut v = vec![0.0; tree.len()];
    for n in (0..tree.len()).rev() {
        if tree.is_terminal(n) {
            v[n] = pair.xi.at[n];
            continue;
        }
        let q = tilted_probs(tree, n, theta);
        let e: f64 = tree.children(n).zip(&q).map(|(c, p)| p * v[c]).sum();
        let cont = e / (1.0 + m.r * tree.dt_after(n));
        v[n] = cont.max(pair.xi.at[n]).min(pair.zeta.at[n]);
    }
    v
}

/// Number of stopping times (`extra = 1`) or stopping systems (`extra = 2`)
/// of a complete tree with the given branching per level, by recursion on levels.
pub fn count_by_levels(branching: &[usize], extra: u128) -> u128 {
    match branching.split_first() {
        None => 1,
        Some((b, rest)) => {
            let sub = count_by_levels(rest, extra);
            sub.pow(*b as u32) + extra
        }
    }
}

/// Snell envelope by brute force over stopping systems: the best of stopping
/// now at the instant, just after it, or continuing.
pub fn snell_by_systems(obstacle_at: &[f64], obstacle_right: &[f64], tree: &ScenarioTree) -> Vec<f64> {
    let mut v = vec![0.0; tree.len()];
    for n in (0..tree.len()).rev() {
        if tree.is_terminal(n) {
            v[n] = obstacle_at[n];
        } else {
            let cont: f64 = tree.children(n).map(|c| tree.node(c).prob * v[c]).sum();
            v[n] = obstacle_at[n].max(obstacle_right[n]).max(cont);
        }
    }
    v
}
