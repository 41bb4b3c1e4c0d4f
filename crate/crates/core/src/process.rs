//! Ladlag optional processes on a scenario tree.
//!
//! A process is piecewise constant between instants: `at[n]` is its value
//! at the instant of node `n` and `right[n]` the value on the open interval
//! that follows. All regularity of a barrier is carried by the disagreement
//! of these two slots, which makes every envelope exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

/// Relative slack used by the nodewise supermartingale test.
pub const SUPERMARTINGALE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadlagProcess {
    pub at: Vec<f64>,
    /// Interval value after each node; terminal entries mirror `at`.
    pub right: Vec<f64>,
}

impl LadlagProcess {
    pub fn new(tree: &ScenarioTree, at: Vec<f64>, mut right: Vec<f64>) -> Result<Self> {
        for len in [at.len(), right.len()] {
            if len != tree.len() {
                return Err(Error::ProcessLength {
                    expected: tree.len(),
                    got: len,
                });
            }
        }
        for n in tree.leaves() {
            right[n] = at[n];
        }
        Ok(Self { at, right })
    }

    /// Right-continuous encoding (`right = at`).
    pub fn continuous(tree: &ScenarioTree, at: Vec<f64>) -> Result<Self> {
        let right = at.clone();
        Self::new(tree, at, right)
    }

    pub fn constant(tree: &ScenarioTree, c: f64) -> Self {
        Self {
            at: vec![c; tree.len()],
            right: vec![c; tree.len()],
        }
    }

    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn len(&self) -> usize {
        self.at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.at.is_empty()
    }

    /// Sup-norm distance over both slots.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.at
            .iter()
            .zip(&other.at)
            .chain(self.right.iter().zip(&other.right))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_abs(&self) -> f64 {
        self.at
            .iter()
            .chain(&self.right)
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }

    /// Pointwise `self <= other + tol` on both slots.
    pub fn le(&self, other: &Self, tol: f64) -> bool {
        self.at.iter().zip(&other.at).all(|(a, b)| *a <= *b + tol)
            && self.right.iter().zip(&other.right).all(|(a, b)| *a <= *b + tol)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            at: self.at.iter().map(|v| f(*v)).collect(),
            right: self.right.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            at: self.at.iter().zip(&other.at).map(|(a, b)| f(*a, *b)).collect(),
            right: self
                .right
                .iter()
                .zip(&other.right)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

/// Value on the interval preceding `node`, i.e. the parent's interval value.
///
/// For step processes this is both the left upper and the left lower
/// semicontinuous envelope.
pub fn left_limit(phi: &LadlagProcess, tree: &ScenarioTree, node: NodeId) -> Result<f64> {
    match tree.parent(node) {
        Some(p) => Ok(phi.right[p]),
        None => Err(Error::RootHasNoLeftLimit(node)),
    }
}

/// Value on the interval following `node`; both right envelopes coincide with it.
pub fn right_envelope(phi: &LadlagProcess, tree: &ScenarioTree, node: NodeId) -> Result<f64> {
    if tree.is_terminal(node) {
        Err(Error::TerminalNode(node))
    } else {
        Ok(phi.right[node])
    }
}

/// Semicontinuity flags of a ladlag process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Regularity {
    pub right_usc: bool,
    pub right_lsc: bool,
    pub right_continuous: bool,
    pub left_usc_along_st: bool,
    pub left_lsc_along_st: bool,
}

pub fn regularity(phi: &LadlagProcess, tree: &ScenarioTree) -> Regularity {
    let mut r = Regularity {
        right_usc: true,
        right_lsc: true,
        right_continuous: true,
        left_usc_along_st: true,
        left_lsc_along_st: true,
    };
    for n in 0..tree.len() {
        if !tree.is_terminal(n) {
            let (a, b) = (phi.at[n], phi.right[n]);
            r.right_usc &= a >= b;
            r.right_lsc &= a <= b;
            r.right_continuous &= a == b;
        }
        if let Some(p) = tree.parent(n) {
            r.left_usc_along_st &= phi.at[n] >= phi.right[p];
            r.left_lsc_along_st &= phi.at[n] <= phi.right[p];
        }
    }
    r
}

/// Barriers `xi <= zeta` with equal terminal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissiblePair {
    pub xi: LadlagProcess,
    pub zeta: LadlagProcess,
}

impl AdmissiblePair {
    /// Validates the pair; interval values at terminal nodes are reset to `at`.
    pub fn new(tree: &ScenarioTree, xi: LadlagProcess, zeta: LadlagProcess) -> Result<Self> {
        let xi = LadlagProcess::new(tree, xi.at, xi.right)?;
        let zeta = LadlagProcess::new(tree, zeta.at, zeta.right)?;
        for n in 0..tree.len() {
            if xi.at[n] > zeta.at[n] || xi.right[n] > zeta.right[n] {
                return Err(Error::Inadmissible(format!("xi > zeta at node {n}")));
            }
            if !(xi.at[n].is_finite() && xi.right[n].is_finite())
                || !(zeta.at[n].is_finite() && zeta.right[n].is_finite())
            {
                return Err(Error::Inadmissible(format!("non-finite value at node {n}")));
            }
        }
        for n in tree.leaves() {
            if xi.at[n] != zeta.at[n] {
                return Err(Error::Inadmissible(format!(
                    "terminal values differ at node {n} ({} vs {})",
                    xi.at[n], zeta.at[n]
                )));
            }
        }
        Ok(Self { xi, zeta })
    }

    /// Terminal values `xi_T` in leaf order.
    pub fn terminal(&self, tree: &ScenarioTree) -> Vec<f64> {
        tree.leaves().map(|n| self.xi.at[n]).collect()
    }
}

/// Two nonnegative strong supermartingales bracketing the barriers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermartingalePair {
    pub h: LadlagProcess,
    pub hp: LadlagProcess,
}

impl SupermartingalePair {
    /// Nonnegativity, both supermartingale tests and `xi <= H - H' <= zeta` within `tol`.
    pub fn satisfies(&self, pair: &AdmissiblePair, tree: &ScenarioTree, tol: f64) -> bool {
        let nonneg = self
            .h
            .at
            .iter()
            .chain(&self.h.right)
            .chain(&self.hp.at)
            .chain(&self.hp.right)
            .all(|v| *v >= -tol);
        let diff = self.h.zip_with(&self.hp, |a, b| a - b);
        nonneg
            && is_strong_supermartingale(&self.h, tree)
            && is_strong_supermartingale(&self.hp, tree)
            && pair.xi.le(&diff, tol)
            && diff.le(&pair.zeta, tol)
    }
}

/// Splits the variation of `xi` into decreases and increases and builds
/// `H = E[xi_T^+ + future decreases]`, `H' = E[xi_T^- + future increases]`,
/// so that `H - H' = xi` and both are nonnegative strong supermartingales.
pub fn mokobodzki_construct(
    pair: &AdmissiblePair,
    tree: &ScenarioTree,
) -> Result<SupermartingalePair> {
    let pair = AdmissiblePair::new(tree, pair.xi.clone(), pair.zeta.clone())?;
    let xi = &pair.xi;
    let n = tree.len();
    let mut h = LadlagProcess::zeros(tree);
    let mut hp = LadlagProcess::zeros(tree);
    for node in tree.leaves() {
        h.at[node] = xi.at[node].max(0.0);
        hp.at[node] = (-xi.at[node]).max(0.0);
        h.right[node] = h.at[node];
        hp.right[node] = hp.at[node];
    }
    for node in (0..n).rev() {
        if tree.is_terminal(node) {
            continue;
        }
        let drift = xi.right[node] - tree.expect(node, &xi.at);
        let jump = xi.at[node] - xi.right[node];
        h.right[node] = tree.expect(node, &h.at) + drift.max(0.0);
        hp.right[node] = tree.expect(node, &hp.at) + (-drift).max(0.0);
        h.at[node] = h.right[node] + jump.max(0.0);
        hp.at[node] = hp.right[node] + (-jump).max(0.0);
    }
    Ok(SupermartingalePair { h, hp })
}

fn supermartingale_violation(phi: &LadlagProcess, tree: &ScenarioTree) -> Option<(NodeId, String)> {
    let tol = SUPERMARTINGALE_TOL * (1.0 + phi.sup_abs());
    for n in 0..tree.len() {
        if tree.is_terminal(n) {
            continue;
        }
        if phi.at[n] < phi.right[n] - tol {
            return Some((n, format!("at {} < right {}", phi.at[n], phi.right[n])));
        }
        let c = tree.expect(n, &phi.at);
        if phi.right[n] < c - tol {
            return Some((n, format!("right {} < E[children] {}", phi.right[n], c)));
        }
    }
    None
}

/// Nodewise characterization: `at >= right` and `right >= E[at(children)]`.
pub fn is_strong_supermartingale(phi: &LadlagProcess, tree: &ScenarioTree) -> bool {
    supermartingale_violation(phi, tree).is_none()
}

/// Like [`is_strong_supermartingale`] but reports the first failing node.
pub fn check_strong_supermartingale(phi: &LadlagProcess, tree: &ScenarioTree) -> Result<()> {
    match supermartingale_violation(phi, tree) {
        None => Ok(()),
        Some((node, reason)) => Err(Error::NotSupermartingale { node, reason }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, Scheme, TimeGrid};

    fn tree() -> ScenarioTree {
        build_tree(TimeGrid::uniform(1.0, 2).unwrap(), 0.5, Scheme::Three).unwrap()
    }

    #[test]
    fn limits_and_envelopes() {
        let t = tree();
        let mut p = LadlagProcess::constant(&t, 2.0);
        assert_eq!(left_limit(&p, &t, 1).unwrap(), 2.0);
        p.right[0] = 3.0;
        p.at[1] = 7.0;
        assert_eq!(left_limit(&p, &t, 1).unwrap(), 3.0);
        assert!(left_limit(&p, &t, 0).is_err());
        p.at[0] = 0.0;
        p.right[0] = 1.0;
        assert_eq!(right_envelope(&p, &t, 0).unwrap(), 1.0);
        assert!(right_envelope(&p, &t, t.leaves().start).is_err());
        let c = LadlagProcess::continuous(&t, (0..t.len()).map(|i| i as f64).collect()).unwrap();
        for n in 0..t.leaves().start {
            assert_eq!(right_envelope(&c, &t, n).unwrap(), c.at[n]);
        }
    }

    #[test]
    fn regularity_flags() {
        let t = tree();
        let c = LadlagProcess::constant(&t, 1.0);
        let r = regularity(&c, &t);
        assert!(r.right_usc && r.right_lsc && r.right_continuous);
        assert!(r.left_usc_along_st && r.left_lsc_along_st);
        let mut p = LadlagProcess::constant(&t, 0.0);
        p.at[1] = 1.0;
        let r = regularity(&p, &t);
        assert!(r.right_usc && !r.right_lsc && !r.right_continuous);
        let mut ind = LadlagProcess::constant(&t, 0.0);
        ind.at[0] = 0.5;
        let r = regularity(&ind, &t);
        assert!(r.right_usc && !r.right_continuous);
    }

    #[test]
    fn supermartingale_examples() {
        let t = tree();
        assert!(is_strong_supermartingale(&LadlagProcess::constant(&t, 3.0), &t));
        let mut p = LadlagProcess::constant(&t, 3.0);
        p.right[0] = 4.0;
        assert!(!is_strong_supermartingale(&p, &t));
        assert!(check_strong_supermartingale(&p, &t).is_err());
    }

    #[test]
    fn mokobodzki_on_zero_pair() {
        let t = tree();
        let pair = AdmissiblePair::new(&t, LadlagProcess::zeros(&t), LadlagProcess::zeros(&t)).unwrap();
        let sp = mokobodzki_construct(&pair, &t).unwrap();
        assert_eq!(sp.h, LadlagProcess::zeros(&t));
        assert_eq!(sp.hp, LadlagProcess::zeros(&t));
    }

    #[test]
    fn mokobodzki_on_supermartingale_barrier() {
        let t = tree();
        // Nonnegative supermartingale: decreasing in time, deterministic.
        let at: Vec<f64> = (0..t.len()).map(|n| 3.0 - t.level(n) as f64).collect();
        let xi = LadlagProcess::new(&t, at.clone(), at.iter().map(|v| v - 0.5).collect()).unwrap();
        let mut zeta = xi.map(|v| v + 1.0);
        for l in t.leaves() {
            zeta.at[l] = xi.at[l];
            zeta.right[l] = xi.at[l];
        }
        let pair = AdmissiblePair::new(&t, xi.clone(), zeta).unwrap();
        let sp = mokobodzki_construct(&pair, &t).unwrap();
        assert!(sp.h.max_abs_diff(&xi) < 1e-12);
        assert!(sp.hp.sup_abs() < 1e-12);
        assert!(sp.satisfies(&pair, &t, 1e-12));
    }

    #[test]
    fn admissibility_checks() {
        let t = tree();
        let xi = LadlagProcess::constant(&t, 1.0);
        assert!(AdmissiblePair::new(&t, xi.clone(), LadlagProcess::zeros(&t)).is_err());
        let mut zeta = LadlagProcess::constant(&t, 2.0);
        assert!(AdmissiblePair::new(&t, xi.clone(), zeta.clone()).is_err());
        for l in t.leaves() {
            zeta.at[l] = 1.0;
        }
        assert!(AdmissiblePair::new(&t, xi, zeta).is_ok());
    }
}
