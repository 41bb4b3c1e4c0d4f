//! Drivers and the conditional f-expectation.
//!
//! One backward step is implicit in `y` and explicit in `(z, k)`:
//! `y = E[y_next] + f(t, y, z, k) dt` with `(z, k)` read off the orthogonal
//! decomposition of `y_next`. The Lipschitz norm of a driver is
//! `|dy| + |dz| + sqrt(lambda) |dk|`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynkin::StoppingTime;
use crate::error::{Error, Result};
use crate::pricing::MarketParams;
use crate::process::LadlagProcess;
use crate::tree::{AdaptedProcess, NodeId, ScenarioTree};

/// Residual at which the implicit fixed point is accepted (relative to `1 + |y|`).
pub const STEP_TOL: f64 = 1e-13;
const STEP_MAX_ITER: usize = 100_000;

/// Signature of a driver: `(node, t, y, z, k) -> f`.
pub type DriverFn = dyn Fn(NodeId, f64, f64, f64, f64) -> f64 + Send + Sync;

/// Slopes `(df/dy, df/dz, df/dk)` of one linear piece of a piecewise-linear driver.
pub type Slopes = [f64; 3];

/// A Lipschitz driver with its constant and optional comparison certificate.
#[derive(Clone)]
pub struct Driver {
    name: String,
    lipschitz: f64,
    royer: Option<f64>,
    pieces: Vec<Slopes>,
    lambda: f64,
    eval: Arc<DriverFn>,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("royer", &self.royer)
            .field("pieces", &self.pieces)
            .finish()
    }
}

fn piece_lipschitz(s: &Slopes, lambda: f64) -> f64 {
    let k_part = if lambda > 0.0 { s[2].abs() / lambda.sqrt() } else { 0.0 };
    s[0].abs().max(s[1].abs()).max(k_part)
}

/// Certificate bound `sup |gamma| sqrt(lambda)` if every k-slope is at least `-lambda`.
fn piece_royer(pieces: &[Slopes], lambda: f64) -> Option<f64> {
    if lambda == 0.0 {
        return Some(0.0);
    }
    if pieces.iter().all(|s| s[2] >= -lambda) {
        Some(
            pieces
                .iter()
                .map(|s| s[2].abs() / lambda.sqrt())
                .fold(0.0, f64::max),
        )
    } else {
        None
    }
}

impl Driver {
    /// Piecewise-linear driver given its pieces; `K` and the certificate are exact.
    pub fn piecewise_linear(
        name: impl Into<String>,
        lambda: f64,
        pieces: Vec<Slopes>,
        eval: Arc<DriverFn>,
    ) -> Self {
        let lipschitz = pieces
            .iter()
            .map(|s| piece_lipschitz(s, lambda))
            .fold(0.0, f64::max);
        let royer = piece_royer(&pieces, lambda);
        Self {
            name: name.into(),
            lipschitz,
            royer,
            pieces,
            lambda,
            eval,
        }
    }

    pub fn zero() -> Self {
        Self::piecewise_linear("zero", 0.0, vec![[0.0; 3]], Arc::new(|_, _, _, _, _| 0.0))
    }

    /// Driver process: no dependence on `(y, z, k)`.
    pub fn process(values: AdaptedProcess) -> Self {
        let v = Arc::new(values.values);
        Self::piecewise_linear(
            "process",
            0.0,
            vec![[0.0; 3]],
            Arc::new(move |n, _, _, _, _| v[n]),
        )
    }

    /// `f = a_y y + a_z z + a_k k + c`.
    pub fn linear(lambda: f64, coef: LinearCoefficients) -> Self {
        let LinearCoefficients { y, z, k, c } = coef;
        Self::piecewise_linear(
            "linear",
            lambda,
            vec![[y, z, k]],
            Arc::new(move |_, _, yy, zz, kk| y * yy + z * zz + k * kk + c),
        )
    }

    /// User driver with a declared Lipschitz constant, checked on `probes`
    /// random points; the certificate, if declared, is checked as well.
    pub fn custom(
        name: impl Into<String>,
        lambda: f64,
        lipschitz: f64,
        royer: Option<f64>,
        eval: Arc<DriverFn>,
        tree: &ScenarioTree,
        probes: usize,
    ) -> Result<Self> {
        let d = Self {
            name: name.into(),
            lipschitz,
            royer,
            pieces: Vec::new(),
            lambda,
            eval,
        };
        d.validate_probes(tree, probes, 0x5eed)?;
        Ok(d)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Bound `C` on `|gamma| sqrt(lambda)` when a comparison certificate exists.
    pub fn royer_bound(&self) -> Option<f64> {
        self.royer
    }

    pub fn pieces(&self) -> &[Slopes] {
        &self.pieces
    }

    /// True when `f` does not depend on `(y, z, k)`.
    pub fn is_process(&self) -> bool {
        !self.pieces.is_empty() && self.pieces.iter().all(|s| *s == [0.0; 3])
    }

    #[inline]
    pub fn eval(&self, node: NodeId, t: f64, y: f64, z: f64, k: f64) -> f64 {
        (self.eval)(node, t, y, z, k)
    }

    /// Difference quotient `(f(k1) - f(k2)) / (lambda (k1 - k2))`, when certified.
    pub fn royer_gamma(&self, node: NodeId, t: f64, y: f64, z: f64, k1: f64, k2: f64) -> Option<f64> {
        self.royer?;
        if self.lambda == 0.0 || k1 == k2 {
            return Some(0.0);
        }
        Some((self.eval(node, t, y, z, k1) - self.eval(node, t, y, z, k2)) / (self.lambda * (k1 - k2)))
    }

    /// `f + shift(node)`; slopes, constant and certificate are unchanged.
    pub fn shifted(&self, shift: AdaptedProcess) -> Self {
        let inner = self.eval.clone();
        let s = Arc::new(shift.values);
        Self {
            name: format!("{}+shift", self.name),
            lipschitz: self.lipschitz,
            royer: self.royer,
            pieces: self.pieces.clone(),
            lambda: self.lambda,
            eval: Arc::new(move |n, t, y, z, k| inner(n, t, y, z, k) + s[n]),
        }
    }

    /// Freezes the driver along `(y, z, k)` into a driver process.
    pub fn freeze(&self, tree: &ScenarioTree, y: &[f64], z: &[f64], k: &[f64]) -> AdaptedProcess {
        let values = (0..tree.len())
            .map(|n| {
                if tree.is_terminal(n) {
                    0.0
                } else {
                    self.eval(n, tree.time(n), y[n], z[n], k[n])
                }
            })
            .collect();
        AdaptedProcess { values }
    }

    /// Whether the implicit step is monotone in the child values on `tree`:
    /// every linear piece must yield nonnegative branch weights. Unknown for
    /// custom drivers, which report `false`.
    pub fn is_discretely_monotone(&self, tree: &ScenarioTree) -> bool {
        if self.pieces.is_empty() {
            return false;
        }
        if self.lipschitz * tree.grid().max_dt() >= 1.0 {
            return false;
        }
        for level in 0..tree.depth() {
            let node = tree.level_nodes(level).start;
            let dt = tree.dt_after(node);
            let kids: Vec<&crate::tree::Node> = tree.children(node).map(|c| tree.node(c)).collect();
            let g11: f64 = kids.iter().map(|n| n.prob * n.dw * n.dw).sum();
            let g12: f64 = kids.iter().map(|n| n.prob * n.dw * n.dn_comp).sum();
            let g22: f64 = kids.iter().map(|n| n.prob * n.dn_comp * n.dn_comp).sum();
            let det = g11 * g22 - g12 * g12;
            for s in &self.pieces {
                for n in &kids {
                    let (gz, gk) = if g22 > 0.0 {
                        (
                            (g22 * n.dw - g12 * n.dn_comp) / det,
                            (g11 * n.dn_comp - g12 * n.dw) / det,
                        )
                    } else {
                        (n.dw / g11, 0.0)
                    };
                    if 1.0 + dt * (s[1] * gz + s[2] * gk) < 0.0 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Checks the Lipschitz bound (and the certificate, if any) on random probes.
    pub fn validate_probes(&self, tree: &ScenarioTree, probes: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sl = self.lambda.sqrt();
        for _ in 0..probes {
            let n = rng.gen_range(0..tree.len());
            let t = tree.time(n);
            let mut p = || rng.gen_range(-10.0..10.0);
            let (y1, z1, k1, y2, z2, k2) = (p(), p(), p(), p(), p(), p());
            let (k1, k2) = if self.lambda > 0.0 { (k1, k2) } else { (0.0, 0.0) };
            let lhs = (self.eval(n, t, y1, z1, k1) - self.eval(n, t, y2, z2, k2)).abs();
            let rhs = self.lipschitz * ((y1 - y2).abs() + (z1 - z2).abs() + sl * (k1 - k2).abs());
            if lhs > rhs * (1.0 + 1e-12) + 1e-12 {
                return Err(Error::DriverParams(format!(
                    "{}: Lipschitz bound {} violated at node {n}",
                    self.name, self.lipschitz
                )));
            }
            if self.royer.is_some() && self.lambda > 0.0 && k1 != k2 {
                let gamma = (self.eval(n, t, y1, z1, k1) - self.eval(n, t, y1, z1, k2))
                    / (self.lambda * (k1 - k2));
                if gamma < -1.0 - 1e-12 {
                    return Err(Error::DriverParams(format!(
                        "{}: comparison certificate fails (gamma = {gamma})",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Coefficients of the linear driver `y*Y + z*Z + k*K + c`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearCoefficients {
    pub y: f64,
    pub z: f64,
    pub k: f64,
    pub c: f64,
}

/// `(z, k) -> (phi_1, phi_2)` with `phi' = (z, k) Sigma^{-1}`.
fn portfolio(inv: &[[f64; 2]; 2], z: f64, k: f64) -> [f64; 2] {
    [z * inv[0][0] + k * inv[1][0], z * inv[0][1] + k * inv[1][1]]
}

/// Coefficients of `(z, k) Sigma^{-1} v` as a linear form in `(z, k)`.
fn form(inv: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        inv[0][0] * v[0] + inv[0][1] * v[1],
        inv[1][0] * v[0] + inv[1][1] * v[1],
    ]
}

/// Perfect market: `f = -r y - (z, k) Sigma^{-1} (mu - r 1)`.
pub fn perfect_driver(m: &MarketParams, lambda: f64) -> Result<Driver> {
    let inv = m.sigma_inverse()?;
    let r = m.r;
    let th = form(&inv, [m.mu[0] - r, m.mu[1] - r]);
    Ok(Driver::piecewise_linear(
        "perfect",
        lambda,
        vec![[-r, -th[0], -th[1]]],
        Arc::new(move |_, _, y, z, k| -r * y - th[0] * z - th[1] * k),
    ))
}

/// Borrowing rate `R` above the lending rate `r`:
/// `f = perfect + (R - r)(y - phi_1 - phi_2)^-`.
pub fn two_rates_driver(m: &MarketParams, lambda: f64) -> Result<Driver> {
    let inv = m.sigma_inverse()?;
    let (r, big_r) = (m.r, m.borrow_rate);
    if big_r < r {
        return Err(Error::DriverParams(format!("borrow rate {big_r} below lending rate {r}")));
    }
    let th = form(&inv, [m.mu[0] - r, m.mu[1] - r]);
    let w = form(&inv, [1.0, 1.0]);
    let s = big_r - r;
    let pieces = vec![
        [-r, -th[0], -th[1]],
        [-big_r, -th[0] + s * w[0], -th[1] + s * w[1]],
    ];
    Ok(Driver::piecewise_linear(
        "two_rates",
        lambda,
        pieces,
        Arc::new(move |_, _, y, z, k| {
            let cash = y - (w[0] * z + w[1] * k);
            -r * y - th[0] * z - th[1] * k + s * (-cash).max(0.0)
        }),
    ))
}

/// Repo market: `f = -r y - phi'(mu - r 1) - sum_i l_i (phi_i)^- + sum_i b_i (phi_i)^+`.
pub fn repo_driver(m: &MarketParams, lambda: f64) -> Result<Driver> {
    let inv = m.sigma_inverse()?;
    let r = m.r;
    let th = form(&inv, [m.mu[0] - r, m.mu[1] - r]);
    let (b, l) = (m.repo_borrow, m.repo_lend);
    let mut pieces = Vec::with_capacity(4);
    for c1 in [b[0], l[0]] {
        for c2 in [b[1], l[1]] {
            let g = form(&inv, [c1, c2]);
            pieces.push([-r, -th[0] + g[0], -th[1] + g[1]]);
        }
    }
    Ok(Driver::piecewise_linear(
        "repo",
        lambda,
        pieces,
        Arc::new(move |_, _, y, z, k| {
            let phi = portfolio(&inv, z, k);
            let mut f = -r * y - th[0] * z - th[1] * k;
            for i in 0..2 {
                f += -l[i] * (-phi[i]).max(0.0) + b[i] * phi[i].max(0.0);
            }
            f
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatParams {
    value: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessParams {
    values: Vec<f64>,
}

fn parse<T: serde::de::DeserializeOwned>(name: &str, params: &serde_json::Value) -> Result<T> {
    let v = if params.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        params.clone()
    };
    serde_json::from_value(v).map_err(|e| Error::DriverParams(format!("{name}: {e}")))
}

/// Library drivers by name: `zero`, `linear`, `flat`, `process`, `perfect`,
/// `two_rates`, `repo`. Market drivers take [`MarketParams`] as parameters.
pub fn driver_library(name: &str, params: &serde_json::Value, tree: &ScenarioTree) -> Result<Driver> {
    let lambda = tree.lambda();
    match name {
        "zero" => Ok(Driver::zero()),
        "linear" => Ok(Driver::linear(lambda, parse(name, params)?)),
        "flat" => {
            let p: FlatParams = parse(name, params)?;
            Ok(Driver::process(AdaptedProcess::constant(tree, p.value)))
        }
        "process" => {
            let p: ProcessParams = parse(name, params)?;
            Ok(Driver::process(AdaptedProcess::new(tree, p.values)?))
        }
        "perfect" => perfect_driver(&parse(name, params)?, lambda),
        "two_rates" => two_rates_driver(&parse(name, params)?, lambda),
        "repo" => repo_driver(&parse(name, params)?, lambda),
        other => Err(Error::UnknownDriver(other.to_string())),
    }
}

/// Result of one implicit backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub y: f64,
    pub z: f64,
    pub k: f64,
    pub h_inc: Vec<f64>,
}

/// Solves `y = clamp(c + g(y) dt, lo, hi)` by fixed-point iteration.
pub(crate) fn implicit_solve(
    c: f64,
    dt: f64,
    lo: f64,
    hi: f64,
    g: impl Fn(f64) -> f64,
) -> Result<f64> {
    let clamp = |v: f64| v.max(lo).min(hi);
    let mut y = clamp(c);
    for _ in 0..STEP_MAX_ITER {
        let next = clamp(c + g(y) * dt);
        let res = (next - y).abs();
        y = next;
        if res <= STEP_TOL * (1.0 + y.abs()) {
            return Ok(y);
        }
    }
    let res = (clamp(c + g(y) * dt) - y).abs();
    Err(Error::NotConverged {
        iterations: STEP_MAX_ITER,
        residual: res,
    })
}

pub(crate) fn check_contraction(f: &Driver, tree: &ScenarioTree) -> Result<()> {
    let kdt = f.lipschitz() * tree.grid().max_dt();
    if kdt >= 1.0 {
        Err(Error::NoContraction(kdt))
    } else {
        Ok(())
    }
}

/// One implicit step at `node` from the child values `y_next`.
pub fn bsde_step(tree: &ScenarioTree, node: NodeId, y_next: &[f64], f: &Driver) -> Result<Step> {
    let dt = tree.dt_after(node);
    if f.lipschitz() * dt >= 1.0 {
        return Err(Error::NoContraction(f.lipschitz() * dt));
    }
    let row = tree.decompose(node, y_next)?;
    let c = tree.expectation(node, y_next)?;
    let t = tree.time(node);
    let (z, k) = (row.z, row.k);
    let y = implicit_solve(c, dt, f64::NEG_INFINITY, f64::INFINITY, |y| f.eval(node, t, y, z, k))?;
    Ok(Step {
        y,
        z,
        k,
        h_inc: row.h_inc,
    })
}

/// Step value only, reading children from a full process; no allocation.
pub(crate) fn step_value(tree: &ScenarioTree, node: NodeId, values: &[f64], f: &Driver) -> Result<f64> {
    let p = tree.project(node, values);
    let t = tree.time(node);
    implicit_solve(p.mean, tree.dt_after(node), f64::NEG_INFINITY, f64::INFINITY, |y| {
        f.eval(node, t, y, p.z, p.k)
    })
}

/// Solution of a non-reflected BSDE; `x.at = x.right`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub x: LadlagProcess,
    pub z: Vec<f64>,
    pub k: Vec<f64>,
    /// Residual increment on the edge into each node (0 at the root).
    pub h_inc: Vec<f64>,
}

/// Backward recursion of [`bsde_step`]; `terminal` is given in leaf order.
pub fn bsde_solve(tree: &ScenarioTree, terminal: &[f64], f: &Driver) -> Result<BsdeSolution> {
    let leaves = tree.leaves();
    if terminal.len() != leaves.len() {
        return Err(Error::ProcessLength {
            expected: leaves.len(),
            got: terminal.len(),
        });
    }
    check_contraction(f, tree)?;
    let n = tree.len();
    let mut x = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut k = vec![0.0; n];
    let mut h = vec![0.0; n];
    for (l, v) in leaves.zip(terminal) {
        x[l] = *v;
    }
    for node in (0..tree.leaves().start).rev() {
        let kids = tree.children(node);
        let step = bsde_step(tree, node, &x[kids.clone()], f)?;
        x[node] = step.y;
        z[node] = step.z;
        k[node] = step.k;
        for (c, hv) in kids.zip(step.h_inc) {
            h[c] = hv;
        }
    }
    Ok(BsdeSolution {
        x: LadlagProcess {
            at: x.clone(),
            right: x,
        },
        z,
        k,
        h_inc: h,
    })
}

/// Per-node role in a backward solve between two stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Status {
    /// Before the start time or after the stop: not evaluated.
    Skip,
    /// Stopped here with the given terminal value.
    Stop(f64),
    /// Evaluated by one backward step.
    Continue,
}

/// Backward pass over nodes marked `Stop`/`Continue`; values land in `out`.
pub(crate) fn solve_stopped(
    tree: &ScenarioTree,
    status: &[Status],
    f: &Driver,
    out: &mut [f64],
) -> Result<()> {
    for node in (0..tree.len()).rev() {
        match status[node] {
            Status::Skip => {}
            Status::Stop(v) => out[node] = v,
            Status::Continue => out[node] = step_value(tree, node, out, f)?,
        }
    }
    Ok(())
}

/// `E^f_{theta, tau}[payoff]` at the effective nodes of `theta`, in node order.
/// `payoff` is a full per-node vector read at the effective nodes of `tau`.
pub fn f_expectation(
    tree: &ScenarioTree,
    theta: &StoppingTime,
    tau: &StoppingTime,
    payoff: &[f64],
    f: &Driver,
) -> Result<Vec<(NodeId, f64)>> {
    if payoff.len() != tree.len() {
        return Err(Error::ProcessLength {
            expected: tree.len(),
            got: payoff.len(),
        });
    }
    if let Some(n) = theta.first_violation_le(tau) {
        return Err(Error::NotOrdered(n));
    }
    check_contraction(f, tree)?;
    let status: Vec<Status> = (0..tree.len())
        .map(|n| {
            if !theta.is_stopped(n) {
                Status::Skip
            } else if tau.is_effective(tree, n) {
                Status::Stop(payoff[n])
            } else if tau.is_stopped(n) {
                Status::Skip
            } else {
                Status::Continue
            }
        })
        .collect();
    let mut out = vec![0.0; tree.len()];
    solve_stopped(tree, &status, f, &mut out)?;
    Ok(theta
        .effective_nodes(tree)
        .into_iter()
        .map(|n| (n, out[n]))
        .collect())
}
