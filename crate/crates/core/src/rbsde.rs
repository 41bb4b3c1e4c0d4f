//! The reflected BSDE with driver 0 below a ladlag obstacle (the Snell
//! envelope on the grid) and the Mertens decomposition of strong
//! supermartingales.
//!
//! Predictable increases `A` are charged at the instant that ends the
//! interval on which reflection happened, so every child of a node carries
//! the same `a_inc`. Right jumps `C` are charged at the instant itself.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::process::{check_strong_supermartingale, LadlagProcess};
use crate::tree::ScenarioTree;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefSolution {
    pub x: LadlagProcess,
    /// Increase of `A` charged over the interval ending at each node (0 at the root).
    pub a_inc: Vec<f64>,
    /// Right jump `X.at - X.right` at each node (0 at terminal nodes).
    pub c_jump: Vec<f64>,
    pub z: Vec<f64>,
    pub k: Vec<f64>,
    pub h_inc: Vec<f64>,
}

/// Backward recursion of the Snell envelope; writes `X` into `x`.
pub(crate) fn ref_values(xi: &LadlagProcess, tree: &ScenarioTree, x: &mut LadlagProcess) {
    for n in tree.leaves() {
        x.at[n] = xi.at[n];
        x.right[n] = xi.at[n];
    }
    for n in (0..tree.leaves().start).rev() {
        let c = tree.expect(n, &x.at);
        x.right[n] = xi.right[n].max(c);
        x.at[n] = xi.at[n].max(x.right[n]);
    }
}

fn check_len(tree: &ScenarioTree, p: &LadlagProcess) -> Result<()> {
    for len in [p.at.len(), p.right.len()] {
        if len != tree.len() {
            return Err(Error::ProcessLength {
                expected: tree.len(),
                got: len,
            });
        }
    }
    Ok(())
}

/// Smallest strong supermartingale dominating `xi`, with its decomposition.
pub fn ref_operator(xi: &LadlagProcess, tree: &ScenarioTree) -> Result<RefSolution> {
    check_len(tree, xi)?;
    let mut x = LadlagProcess::zeros(tree);
    ref_values(xi, tree, &mut x);
    let n = tree.len();
    let (mut a_inc, mut c_jump) = (vec![0.0; n], vec![0.0; n]);
    let (mut z, mut k, mut h_inc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for node in 0..tree.leaves().start {
        let c = tree.expect(node, &x.at);
        let inc = x.right[node] - c;
        for child in tree.children(node) {
            a_inc[child] = inc;
        }
        c_jump[node] = x.at[node] - x.right[node];
        let row = tree.decompose_process(node, &x.at);
        z[node] = row.z;
        k[node] = row.k;
        for (child, h) in tree.children(node).zip(row.h_inc) {
            h_inc[child] = h;
        }
    }
    Ok(RefSolution {
        x,
        a_inc,
        c_jump,
        z,
        k,
        h_inc,
    })
}

/// `X = M - A - C_-` for a strong supermartingale `X`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MertensDecomposition {
    /// `M` at each instant: `X.at + A (up to the instant) + C (strictly before)`.
    pub martingale: Vec<f64>,
    pub a_inc: Vec<f64>,
    pub c_jump: Vec<f64>,
}

pub fn mertens_decompose(x: &LadlagProcess, tree: &ScenarioTree) -> Result<MertensDecomposition> {
    check_len(tree, x)?;
    check_strong_supermartingale(x, tree)?;
    let n = tree.len();
    let (mut a_inc, mut c_jump, mut m) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for node in 0..tree.leaves().start {
        let inc = x.right[node] - tree.expect(node, &x.at);
        for child in tree.children(node) {
            a_inc[child] = inc;
        }
        c_jump[node] = x.at[node] - x.right[node];
    }
    // Running sums A(n) and C(before n) accumulate top-down.
    let mut acc = vec![0.0; n];
    m[0] = x.at[0];
    for node in 1..n {
        let p = tree.parent(node).expect("non-root");
        acc[node] = acc[p] + a_inc[node] + c_jump[p];
        m[node] = x.at[node] + acc[node];
    }
    Ok(MertensDecomposition {
        martingale: m,
        a_inc,
        c_jump,
    })
}

/// Checks `Ref(xi1) <= Ref(xi2)` for an ordered pair `xi1 <= xi2`.
pub fn ref_monotone_check(
    xi1: &LadlagProcess,
    xi2: &LadlagProcess,
    tree: &ScenarioTree,
) -> Result<bool> {
    check_len(tree, xi1)?;
    check_len(tree, xi2)?;
    if !xi1.le(xi2, 0.0) {
        return Err(Error::Precondition("obstacles are not ordered".into()));
    }
    let r1 = ref_operator(xi1, tree)?;
    let r2 = ref_operator(xi2, tree)?;
    Ok(r1.x.le(&r2.x, 0.0))
}

/// Checks that `Ref` commutes with the nondecreasing limit `seq -> limit`:
/// the images are nondecreasing and the last one is within `tol` of `Ref(limit)`.
pub fn ref_monotone_limit_check(
    seq: &[LadlagProcess],
    limit: &LadlagProcess,
    tree: &ScenarioTree,
    tol: f64,
) -> Result<bool> {
    if seq.is_empty() {
        return Err(Error::Precondition("empty sequence".into()));
    }
    let target = ref_operator(limit, tree)?.x;
    let mut prev: Option<LadlagProcess> = None;
    for xi in seq {
        if !xi.le(limit, 0.0) {
            return Err(Error::Precondition("sequence exceeds its limit".into()));
        }
        let r = ref_operator(xi, tree)?.x;
        if let Some(p) = &prev {
            if !p.le(&r, 0.0) {
                return Ok(false);
            }
        }
        prev = Some(r);
    }
    Ok(prev.expect("non-empty").max_abs_diff(&target) <= tol)
}
