//! Doubly reflected BSDEs: three independent solvers, the full conformance
//! check of a candidate solution, the comparison property and the a priori
//! estimate.
//!
//! On the interval after node `n` the solution holds the value `Y.right[n]`
//! and the driver is evaluated there, so one step reads
//! `Y.right = E[Y.at(children)] + f(t, Y.right, z, k) dt + dA - dA'` and
//! `Y.at = Y.right + dC - dC'`. The increments of `A`, `A'` sit on the
//! children (the instant ending the interval) and those of `C`, `C'` on the
//! node itself.

use serde::Serialize;

use crate::bsde::{bsde_solve, check_contraction, implicit_solve, Driver};
use crate::error::{Error, Result};
use crate::process::{AdmissiblePair, LadlagProcess};
use crate::rbsde::ref_values;
use crate::tree::{AdaptedProcess, NodeId, ScenarioTree, Scheme};

/// Relative sup-norm change at which the Picard iteration stops.
pub const PICARD_TOL: f64 = 1e-12;
/// Relative sup-norm change at which the outer fixed point stops.
pub const FIXED_POINT_TOL: f64 = 1e-11;
const PICARD_MAX_ITER: usize = 2_000_000;
const FIXED_POINT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrbsdeSolution {
    pub y: LadlagProcess,
    pub z: Vec<f64>,
    pub k: Vec<f64>,
    /// Orthogonal residual on the edge into each node (0 at the root).
    pub h_inc: Vec<f64>,
    /// Increase of `A` over the interval ending at each node (0 at the root).
    pub a_inc: Vec<f64>,
    pub ap_inc: Vec<f64>,
    /// Right jump bookkeeping at each node (0 at terminal nodes).
    pub c_jump: Vec<f64>,
    pub cp_jump: Vec<f64>,
}

impl DrbsdeSolution {
    pub fn y0(&self) -> f64 {
        self.y.at[0]
    }

    fn blank(tree: &ScenarioTree) -> Self {
        let n = tree.len();
        Self {
            y: LadlagProcess::zeros(tree),
            z: vec![0.0; n],
            k: vec![0.0; n],
            h_inc: vec![0.0; n],
            a_inc: vec![0.0; n],
            ap_inc: vec![0.0; n],
            c_jump: vec![0.0; n],
            cp_jump: vec![0.0; n],
        }
    }

    /// Fills `z`, `k` and `h_inc` from the decomposition of `y.at`.
    fn fill_martingale_part(&mut self, tree: &ScenarioTree) {
        let with_h = tree.scheme() == Scheme::Four && tree.lambda() > 0.0;
        for node in 0..tree.leaves().start {
            if with_h {
                let row = tree.decompose_process(node, &self.y.at);
                self.z[node] = row.z;
                self.k[node] = row.k;
                for (c, h) in tree.children(node).zip(row.h_inc) {
                    self.h_inc[c] = h;
                }
            } else {
                let p = tree.project(node, &self.y.at);
                self.z[node] = p.z;
                self.k[node] = p.k;
            }
        }
    }
}

fn revalidate(pair: &AdmissiblePair, tree: &ScenarioTree) -> Result<AdmissiblePair> {
    AdmissiblePair::new(tree, pair.xi.clone(), pair.zeta.clone())
}

/// Backward induction: `Y.right` solves the clamped implicit step and
/// `Y.at = (Y.right v xi.at) ^ zeta.at`.
pub fn solve_direct(pair: &AdmissiblePair, f: &Driver, tree: &ScenarioTree) -> Result<DrbsdeSolution> {
    let pair = revalidate(pair, tree)?;
    check_contraction(f, tree)?;
    let (xi, zeta) = (&pair.xi, &pair.zeta);
    let mut sol = DrbsdeSolution::blank(tree);
    for n in tree.leaves() {
        sol.y.at[n] = xi.at[n];
        sol.y.right[n] = xi.at[n];
    }
    for node in (0..tree.leaves().start).rev() {
        let p = tree.project(node, &sol.y.at);
        let (t, dt) = (tree.time(node), tree.dt_after(node));
        let (lo, hi) = (xi.right[node], zeta.right[node]);
        let yr = implicit_solve(p.mean, dt, lo, hi, |y| f.eval(node, t, y, p.z, p.k))?;
        let net = yr - p.mean - f.eval(node, t, yr, p.z, p.k) * dt;
        let (a, ap) = if yr == lo && net > 0.0 {
            (net, 0.0)
        } else if yr == hi && net < 0.0 {
            (0.0, -net)
        } else {
            (0.0, 0.0)
        };
        for c in tree.children(node) {
            sol.a_inc[c] = a;
            sol.ap_inc[c] = ap;
        }
        let ya = yr.max(xi.at[node]).min(zeta.at[node]);
        sol.y.right[node] = yr;
        sol.y.at[node] = ya;
        sol.c_jump[node] = (ya - yr).max(0.0);
        sol.cp_jump[node] = (yr - ya).max(0.0);
    }
    sol.fill_martingale_part(tree);
    Ok(sol)
}

/// Output of the coupled-reflection Picard scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardSolution {
    pub solution: DrbsdeSolution,
    /// Limit of the first Snell iterate.
    pub x: LadlagProcess,
    /// Limit of the second Snell iterate.
    pub xp: LadlagProcess,
    pub iterations: usize,
    /// Whether every iterate dominated its predecessor.
    pub monotone: bool,
}

/// `E[xi_T + sum of f dt over the remaining intervals | node]`.
fn conditional_target(pair: &AdmissiblePair, f_proc: &AdaptedProcess, tree: &ScenarioTree) -> Vec<f64> {
    let mut e = vec![0.0; tree.len()];
    for n in tree.leaves() {
        e[n] = pair.xi.at[n];
    }
    for n in (0..tree.leaves().start).rev() {
        e[n] = f_proc.values[n] * tree.dt_after(n) + tree.expect(n, &e);
    }
    e
}

/// Picard iteration on the coupled Snell envelopes for a driver process:
/// `X <- Ref[X' + xi~]`, `X' <- Ref[X - zeta~]` from zero, then
/// `Y = X - X' + E[xi_T + int f]`.
pub fn solve_picard_driver_process(
    pair: &AdmissiblePair,
    f_proc: &AdaptedProcess,
    tree: &ScenarioTree,
) -> Result<PicardSolution> {
    let pair = revalidate(pair, tree)?;
    if f_proc.values.len() != tree.len() {
        return Err(Error::ProcessLength {
            expected: tree.len(),
            got: f_proc.values.len(),
        });
    }
    let e = conditional_target(&pair, f_proc, tree);
    let shift = |p: &LadlagProcess| {
        let mut out = LadlagProcess {
            at: p.at.iter().zip(&e).map(|(a, b)| a - b).collect(),
            right: p.right.iter().zip(&e).map(|(a, b)| a - b).collect(),
        };
        for n in tree.leaves() {
            out.at[n] = 0.0;
            out.right[n] = 0.0;
        }
        out
    };
    let xi_t = shift(&pair.xi);
    let zeta_t = shift(&pair.zeta);
    let scale = 1.0 + xi_t.sup_abs().max(zeta_t.sup_abs());
    let tol = PICARD_TOL * scale;
    let mut x = LadlagProcess::zeros(tree);
    let mut xp = LadlagProcess::zeros(tree);
    let mut nx = x.clone();
    let mut nxp = x.clone();
    let mut obst = x.clone();
    let mut monotone = true;
    let mut iterations = 0;
    loop {
        if iterations >= PICARD_MAX_ITER {
            let change = nx.max_abs_diff(&x).max(nxp.max_abs_diff(&xp));
            return Err(Error::NotConverged {
                iterations,
                residual: change,
            });
        }
        iterations += 1;
        for n in 0..tree.len() {
            obst.at[n] = xp.at[n] + xi_t.at[n];
            obst.right[n] = xp.right[n] + xi_t.right[n];
        }
        ref_values(&obst, tree, &mut nx);
        for n in 0..tree.len() {
            obst.at[n] = x.at[n] - zeta_t.at[n];
            obst.right[n] = x.right[n] - zeta_t.right[n];
        }
        ref_values(&obst, tree, &mut nxp);
        let slack = 1e-14 * scale;
        monotone &= x.le(&nx, slack) && xp.le(&nxp, slack);
        let change = nx.max_abs_diff(&x).max(nxp.max_abs_diff(&xp));
        std::mem::swap(&mut x, &mut nx);
        std::mem::swap(&mut xp, &mut nxp);
        if change <= tol {
            break;
        }
    }
    let mut sol = DrbsdeSolution::blank(tree);
    for n in 0..tree.len() {
        sol.y.at[n] = x.at[n] - xp.at[n] + e[n];
        sol.y.right[n] = x.right[n] - xp.right[n] + e[n];
    }
    for n in tree.leaves() {
        sol.y.at[n] = pair.xi.at[n];
        sol.y.right[n] = pair.xi.at[n];
    }
    for node in 0..tree.leaves().start {
        let ax = x.right[node] - tree.expect(node, &x.at);
        let axp = xp.right[node] - tree.expect(node, &xp.at);
        let net = ax - axp;
        for c in tree.children(node) {
            sol.a_inc[c] = net.max(0.0);
            sol.ap_inc[c] = (-net).max(0.0);
        }
        let cnet = (x.at[node] - x.right[node]) - (xp.at[node] - xp.right[node]);
        sol.c_jump[node] = cnet.max(0.0);
        sol.cp_jump[node] = (-cnet).max(0.0);
    }
    sol.fill_martingale_part(tree);
    Ok(PicardSolution {
        solution: sol,
        x,
        xp,
        iterations,
        monotone,
    })
}

/// Starting point of the outer fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FixedPointInit {
    Zero,
    /// `E[xi_T | F_t]` with its martingale coefficients.
    TerminalPropagated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointSolution {
    pub solution: DrbsdeSolution,
    pub outer_iterations: usize,
}

/// Banach iteration: freeze `f(t, Y.right, Z, k)` into a driver process,
/// solve it by Picard, repeat until the sup-norm change is below tolerance.
pub fn solve_fixed_point(
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
    init: FixedPointInit,
) -> Result<FixedPointSolution> {
    let pair = revalidate(pair, tree)?;
    check_contraction(f, tree)?;
    let n = tree.len();
    let (mut y, mut z, mut k) = match init {
        FixedPointInit::Zero => (LadlagProcess::zeros(tree), vec![0.0; n], vec![0.0; n]),
        FixedPointInit::TerminalPropagated => {
            let b = bsde_solve(tree, &pair.terminal(tree), &Driver::zero())?;
            (b.x, b.z, b.k)
        }
    };
    let scale = 1.0 + pair.xi.sup_abs().max(pair.zeta.sup_abs());
    for it in 1..=FIXED_POINT_MAX_ITER {
        let f_proc = f.freeze(tree, &y.right, &z, &k);
        let pic = solve_picard_driver_process(&pair, &f_proc, tree)?;
        let change = pic.solution.y.max_abs_diff(&y);
        y = pic.solution.y.clone();
        z = pic.solution.z.clone();
        k = pic.solution.k.clone();
        if change <= FIXED_POINT_TOL * scale {
            return Ok(FixedPointSolution {
                solution: pic.solution,
                outer_iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: FIXED_POINT_MAX_ITER,
        residual: f64::NAN,
    })
}

/// Largest violation of each defining condition of a solution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Per-edge dynamics identity.
    pub dynamics: f64,
    pub terminal: f64,
    /// `xi <= Y <= zeta` on both slots.
    pub sandwich: f64,
    /// `A` increases only when the left limit of `Y` sits on that of `xi`.
    pub skorokhod_a: f64,
    pub skorokhod_ap: f64,
    /// `C` jumps only when `Y.at = xi.at`.
    pub skorokhod_c: f64,
    pub skorokhod_cp: f64,
    /// `dA _|_ dA'` and `dC _|_ dC'` nodewise.
    pub singularity: f64,
    /// `C = (Y.right - Y.at)^-`, `C' = (Y.right - Y.at)^+`.
    pub jump_identity: f64,
    /// `Y.at = (Y.right v xi.at) ^ zeta.at`.
    pub clamp_identity: f64,
    pub nonnegativity: f64,
    /// Siblings share the same `A`, `A'` increments.
    pub predictability: f64,
    /// `E[h] = E[h dW] = E[h dN~] = 0` at every node.
    pub orthogonality: f64,
}

impl VerificationReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.dynamics,
            self.terminal,
            self.sandwich,
            self.skorokhod_a,
            self.skorokhod_ap,
            self.skorokhod_c,
            self.skorokhod_cp,
            self.singularity,
            self.jump_identity,
            self.clamp_identity,
            self.nonnegativity,
            self.predictability,
            self.orthogonality,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

/// Checks every condition of a solution and reports the worst violations.
pub fn verify_solution(
    sol: &DrbsdeSolution,
    pair: &AdmissiblePair,
    f: &Driver,
    tree: &ScenarioTree,
) -> VerificationReport {
    let (xi, zeta, y) = (&pair.xi, &pair.zeta, &sol.y);
    let mut r = VerificationReport::default();
    let up = |acc: &mut f64, v: f64| {
        if v.is_nan() {
            *acc = f64::INFINITY;
        } else {
            *acc = acc.max(v);
        }
    };
    for n in tree.leaves() {
        up(&mut r.terminal, (y.at[n] - xi.at[n]).abs());
    }
    for n in 0..tree.len() {
        up(&mut r.sandwich, (xi.at[n] - y.at[n]).max(y.at[n] - zeta.at[n]));
        if !tree.is_terminal(n) {
            up(&mut r.sandwich, (xi.right[n] - y.right[n]).max(y.right[n] - zeta.right[n]));
        }
        for v in [sol.a_inc[n], sol.ap_inc[n], sol.c_jump[n], sol.cp_jump[n]] {
            up(&mut r.nonnegativity, -v);
        }
    }
    for node in 0..tree.leaves().start {
        let (t, dt) = (tree.time(node), tree.dt_after(node));
        let fv = f.eval(node, t, y.right[node], sol.z[node], sol.k[node]);
        let kids = tree.children(node);
        for c in kids.clone() {
            let e = tree.node(c);
            let rhs = y.at[c] + fv * dt - sol.z[node] * e.dw - sol.k[node] * e.dn_comp - sol.h_inc[c]
                + sol.a_inc[c]
                - sol.ap_inc[c]
                + sol.c_jump[node]
                - sol.cp_jump[node];
            up(&mut r.dynamics, (y.at[node] - rhs).abs());
            up(&mut r.predictability, (sol.a_inc[c] - sol.a_inc[kids.start]).abs());
            up(&mut r.predictability, (sol.ap_inc[c] - sol.ap_inc[kids.start]).abs());
            // The left limit of Y at the child is Y.right at the node.
            up(&mut r.skorokhod_a, sol.a_inc[c].min(y.right[node] - xi.right[node]));
            up(&mut r.skorokhod_ap, sol.ap_inc[c].min(zeta.right[node] - y.right[node]));
            up(&mut r.singularity, sol.a_inc[c].min(sol.ap_inc[c]));
        }
        up(&mut r.skorokhod_c, sol.c_jump[node].min(y.at[node] - xi.at[node]));
        up(&mut r.skorokhod_cp, sol.cp_jump[node].min(zeta.at[node] - y.at[node]));
        up(&mut r.singularity, sol.c_jump[node].min(sol.cp_jump[node]));
        let d = y.right[node] - y.at[node];
        up(&mut r.jump_identity, (sol.c_jump[node] - (-d).max(0.0)).abs());
        up(&mut r.jump_identity, (sol.cp_jump[node] - d.max(0.0)).abs());
        let clamp = y.right[node].max(xi.at[node]).min(zeta.at[node]);
        up(&mut r.clamp_identity, (y.at[node] - clamp).abs());
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for c in kids {
            let e = tree.node(c);
            m0 += e.prob * sol.h_inc[c];
            m1 += e.prob * sol.h_inc[c] * e.dw;
            m2 += e.prob * sol.h_inc[c] * e.dn_comp;
        }
        up(&mut r.orthogonality, m0.abs().max(m1.abs()).max(m2.abs()));
    }
    r
}

/// Comparison: with `xi2 <= xi1`, `zeta2 <= zeta1` and `f2 <= f1` along the
/// second solution, returns whether `Y2 <= Y1 + 1e-12` everywhere.
pub fn compare(
    sol1: &DrbsdeSolution,
    pair1: &AdmissiblePair,
    f1: &Driver,
    sol2: &DrbsdeSolution,
    pair2: &AdmissiblePair,
    f2: &Driver,
    tree: &ScenarioTree,
) -> Result<bool> {
    if f1.royer_bound().is_none() || f2.royer_bound().is_none() {
        return Err(Error::Precondition("both drivers need a comparison certificate".into()));
    }
    if !pair2.xi.le(&pair1.xi, 0.0) || !pair2.zeta.le(&pair1.zeta, 0.0) {
        return Err(Error::Precondition("barriers are not ordered".into()));
    }
    for n in 0..tree.leaves().start {
        let t = tree.time(n);
        let (y, z, k) = (sol2.y.right[n], sol2.z[n], sol2.k[n]);
        if f2.eval(n, t, y, z, k) > f1.eval(n, t, y, z, k) + 1e-12 {
            return Err(Error::Precondition(format!("f2 > f1 along the second solution at node {n}")));
        }
    }
    Ok(sol2.y.le(&sol1.y, 1e-12))
}

/// Parameters of the a priori estimate; `c` bounds the drivers' constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriParams {
    pub beta: f64,
    pub eta: f64,
    pub c: f64,
}

impl AprioriParams {
    /// `eta = 1/C^2`, `beta = 3/eta + 2C`.
    pub fn canonical(c: f64) -> Self {
        let eta = 1.0 / (c * c);
        Self {
            beta: 3.0 / eta + 2.0 * c,
            eta,
            c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    /// Nodes where the left side exceeds the right side beyond relative 1e-8.
    pub violations: Vec<NodeId>,
    /// Largest `lhs / rhs` over nodes with a positive right side.
    pub max_ratio: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Relative tolerance of the a priori estimate check.
pub const APRIORI_TOL: f64 = 1e-8;

/// Evaluates both sides of the a priori estimate at every node.
///
/// The conditional suprema run over the instants and the interval values
/// from the node to the horizon along each path; the driver term integrates
/// `exp(beta (s - t))` exactly over each interval.
#[allow(clippy::too_many_arguments)]
pub fn apriori_check(
    sol1: &DrbsdeSolution,
    pair1: &AdmissiblePair,
    f1: &Driver,
    sol2: &DrbsdeSolution,
    pair2: &AdmissiblePair,
    f2: &Driver,
    tree: &ScenarioTree,
    params: AprioriParams,
) -> Result<AprioriReport> {
    let AprioriParams { beta, eta, c } = params;
    if !(c > 0.0 && eta > 0.0 && beta > 0.0) {
        return Err(Error::Precondition("beta, eta and C must be positive".into()));
    }
    if beta < 3.0 / eta + 2.0 * c || eta > 1.0 / (c * c) {
        return Err(Error::Precondition(format!(
            "need beta >= 3/eta + 2C and eta <= 1/C^2 (beta {beta}, eta {eta}, C {c})"
        )));
    }
    let n = tree.len();
    let horizon = tree.grid().horizon();
    let sq = |a: &LadlagProcess, b: &LadlagProcess| -> Vec<f64> {
        (0..n)
            .map(|m| {
                let d_at = a.at[m] - b.at[m];
                let d_r = a.right[m] - b.right[m];
                (d_at * d_at).max(d_r * d_r)
            })
            .collect()
    };
    let dxi = sq(&pair1.xi, &pair2.xi);
    let dzeta = sq(&pair1.zeta, &pair2.zeta);
    // J(m) = sum over remaining intervals of int exp(beta s) ds * df^2, in expectation.
    let mut j = vec![0.0; n];
    for m in (0..tree.leaves().start).rev() {
        let t0 = tree.time(m);
        let t1 = t0 + tree.dt_after(m);
        let (y, z, k) = (sol2.y.right[m], sol2.z[m], sol2.k[m]);
        let df = f2.eval(m, t0, y, z, k) - f1.eval(m, t0, y, z, k);
        let w = ((beta * t1).exp() - (beta * t0).exp()) / beta;
        j[m] = w * df * df + tree.expect(m, &j);
    }
    let mut lhs = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut run_xi = vec![0.0; n];
    let mut run_zeta = vec![0.0; n];
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for theta in 0..n {
        let t = tree.time(theta);
        let levels = tree.subtree_levels(theta);
        run_xi[theta] = dxi[theta];
        run_zeta[theta] = dzeta[theta];
        for r in &levels[1..] {
            for m in r.clone() {
                let p = tree.parent(m).expect("non-root");
                run_xi[m] = run_xi[p].max(dxi[m]);
                run_zeta[m] = run_zeta[p].max(dzeta[m]);
            }
        }
        let leaves = levels.last().expect("non-empty").clone();
        let base = tree.node(theta).path_prob;
        let sup_term: f64 = leaves
            .map(|l| tree.node(l).path_prob / base * (run_xi[l] + run_zeta[l]))
            .sum();
        let d = sol1.y.at[theta] - sol2.y.at[theta];
        lhs[theta] = d * d;
        rhs[theta] = (beta * (horizon - t)).exp() * sup_term + eta * (-beta * t).exp() * j[theta];
        if lhs[theta] > rhs[theta] * (1.0 + APRIORI_TOL) + 1e-300 {
            violations.push(theta);
        }
        if rhs[theta] > 0.0 {
            max_ratio = max_ratio.max(lhs[theta] / rhs[theta]);
        }
    }
    Ok(AprioriReport {
        violations,
        max_ratio,
        lhs,
        rhs,
    })
}

/// Largest gap between the Picard limits and the conditional expectations of
/// the future increments of the solution's reflecting processes:
/// `X = E[sum A + sum C]`, `X' = E[sum A' + sum C']`.
pub fn identification_residual(pic: &PicardSolution, tree: &ScenarioTree) -> f64 {
    let sol = &pic.solution;
    let n = tree.len();
    let mut s = vec![0.0; n];
    let mut sp = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for node in (0..tree.leaves().start).rev() {
        let mut ea = 0.0;
        let mut eap = 0.0;
        for c in tree.children(node) {
            let p = tree.node(c).prob;
            ea += p * (sol.a_inc[c] + s[c]);
            eap += p * (sol.ap_inc[c] + sp[c]);
        }
        worst = worst
            .max((pic.x.right[node] - ea).abs())
            .max((pic.xp.right[node] - eap).abs());
        s[node] = sol.c_jump[node] + ea;
        sp[node] = sol.cp_jump[node] + eap;
        worst = worst
            .max((pic.x.at[node] - s[node]).abs())
            .max((pic.xp.at[node] - sp[node]).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, TimeGrid};

    fn gap_fixture() -> (ScenarioTree, AdmissiblePair) {
        let t = build_tree(TimeGrid::uniform(1.0, 1).unwrap(), 0.0, Scheme::Three).unwrap();
        let xi = LadlagProcess::new(&t, vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]).unwrap();
        let zeta = LadlagProcess::new(&t, vec![2.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]).unwrap();
        let pair = AdmissiblePair::new(&t, xi, zeta).unwrap();
        (t, pair)
    }

    #[test]
    fn gap_fixture_by_hand() {
        let (t, pair) = gap_fixture();
        let s = solve_direct(&pair, &Driver::zero(), &t).unwrap();
        assert_eq!(s.y.at, vec![1.0, 0.0, 0.0]);
        assert_eq!(s.y.right[0], 1.0);
        assert_eq!(s.a_inc, vec![0.0, 1.0, 1.0]);
        assert!(s.c_jump.iter().chain(&s.cp_jump).all(|v| *v == 0.0));
        assert!(verify_solution(&s, &pair, &Driver::zero(), &t).passes(0.0));
    }

    #[test]
    fn pinned_barriers() {
        let t = build_tree(TimeGrid::uniform(1.0, 2).unwrap(), 0.5, Scheme::Three).unwrap();
        let at: Vec<f64> = (0..t.len()).map(|n| (n as f64).sin()).collect();
        let right: Vec<f64> = (0..t.len()).map(|n| (n as f64).cos()).collect();
        let xi = LadlagProcess::new(&t, at, right).unwrap();
        let pair = AdmissiblePair::new(&t, xi.clone(), xi.clone()).unwrap();
        let s = solve_direct(&pair, &Driver::zero(), &t).unwrap();
        assert_eq!(s.y, pair.xi);
        let p = solve_picard_driver_process(&pair, &AdaptedProcess::constant(&t, 0.0), &t).unwrap();
        assert!(p.solution.y.max_abs_diff(&xi) < 1e-12);
    }

    #[test]
    fn corrupted_solutions_are_flagged() {
        let (t, pair) = gap_fixture();
        let s = solve_direct(&pair, &Driver::zero(), &t).unwrap();
        let mut bad = s.clone();
        bad.a_inc[1] += 0.1;
        assert!(verify_solution(&bad, &pair, &Driver::zero(), &t).dynamics > 0.05);
        let mut merged = s.clone();
        merged.a_inc[1] += 0.5;
        merged.a_inc[2] += 0.5;
        merged.ap_inc[1] += 0.5;
        merged.ap_inc[2] += 0.5;
        let r = verify_solution(&merged, &pair, &Driver::zero(), &t);
        assert!(r.singularity >= 0.5);
        assert!(r.dynamics < 1e-15);
    }

    #[test]
    fn apriori_parameter_constraints() {
        let (t, pair) = gap_fixture();
        let s = solve_direct(&pair, &Driver::zero(), &t).unwrap();
        let z = Driver::zero();
        let bad = AprioriParams { beta: 1.0, eta: 1.0, c: 1.0 };
        assert!(apriori_check(&s, &pair, &z, &s, &pair, &z, &t, bad).is_err());
        let ok = apriori_check(&s, &pair, &z, &s, &pair, &z, &t, AprioriParams::canonical(1.0)).unwrap();
        assert!(ok.violations.is_empty());
        assert!(ok.lhs.iter().all(|v| *v == 0.0));
    }
}
