//! Finite filtered scenario trees carrying a Brownian-like increment and a
//! single-mark Poisson jump per step.
//!
//! Nodes are stored in breadth-first order: level `i` occupies a contiguous
//! range of ids, and the children of a node are contiguous and listed in
//! scheme order. As a consequence the descendants of any node at a fixed
//! level also form a contiguous range.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node in breadth-first order; the root is `0`.
pub type NodeId = usize;

/// Strictly increasing instants `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least two instants".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidGrid(format!("t_0 = {} must be 0", times[0])));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::InvalidGrid(format!(
                    "instants must increase strictly (t_{} = {}, t_{} = {})",
                    i,
                    w[0],
                    i + 1,
                    w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// `steps` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs steps > 0 and horizon > 0 (got {steps}, {horizon})"
            )));
        }
        let mut times: Vec<f64> = (0..=steps)
            .map(|i| horizon * i as f64 / steps as f64)
            .collect();
        times[steps] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.steps()]
    }

    pub fn time(&self, level: usize) -> f64 {
        self.times[level]
    }

    /// Length of the step `[t_level, t_{level+1}]`.
    pub fn dt(&self, level: usize) -> f64 {
        self.times[level + 1] - self.times[level]
    }

    pub fn max_dt(&self) -> f64 {
        (0..self.steps()).map(|i| self.dt(i)).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::new(times)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.times
    }
}

/// Branching scheme of every non-terminal node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Children `(+a, 0)`, `(-a, 0)`, `(0, 1)`: the pair `(W, N)` is complete.
    Three,
    /// Children `(+sqrt dt, 0)`, `(-sqrt dt, 0)`, `(+sqrt dt, 1)`, `(-sqrt dt, 1)`:
    /// leaves room for an orthogonal martingale component.
    Four,
}

/// A node together with the data of the edge leading into it.
#[derive(Debug, Clone, Serialize)]
pub struct Node {
    pub level: usize,
    pub parent: Option<NodeId>,
    pub first_child: NodeId,
    pub child_count: usize,
    /// Conditional probability of the incoming edge (1 for the root).
    pub prob: f64,
    /// Brownian increment on the incoming edge.
    pub dw: f64,
    /// Jump count on the incoming edge.
    pub dn: u8,
    /// Compensated jump `dn - lambda*dt` on the incoming edge.
    pub dn_comp: f64,
    /// Unconditional probability of reaching the node.
    pub path_prob: f64,
}

/// The discrete probability space with its filtration.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    grid: TimeGrid,
    lambda: f64,
    scheme: Scheme,
    nodes: Vec<Node>,
    level_start: Vec<NodeId>,
}

/// One row of the orthogonal martingale decomposition at a node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionRow {
    pub z: f64,
    pub k: f64,
    /// Residual increment per child, in child order.
    pub h_inc: Vec<f64>,
    /// Set when the jump regressor vanishes (no jump branch) and `k` is forced to 0.
    pub degenerate: bool,
}

struct Branch {
    prob: f64,
    dw: f64,
    dn: u8,
}

fn branches(scheme: Scheme, lambda: f64, dt: f64) -> Vec<Branch> {
    let q = lambda * dt;
    let mut out = Vec::with_capacity(4);
    match scheme {
        Scheme::Three => {
            // Widened so that E[dW^2] = dt holds with the jump branch present.
            let a = (dt / (1.0 - q)).sqrt();
            let p = (1.0 - q) / 2.0;
            out.push(Branch { prob: p, dw: a, dn: 0 });
            out.push(Branch { prob: p, dw: -a, dn: 0 });
            if q > 0.0 {
                out.push(Branch { prob: q, dw: 0.0, dn: 1 });
            }
        }
        Scheme::Four => {
            let a = dt.sqrt();
            let p = (1.0 - q) / 2.0;
            out.push(Branch { prob: p, dw: a, dn: 0 });
            out.push(Branch { prob: p, dw: -a, dn: 0 });
            if q > 0.0 {
                out.push(Branch { prob: q / 2.0, dw: a, dn: 1 });
                out.push(Branch { prob: q / 2.0, dw: -a, dn: 1 });
            }
        }
    }
    out
}

/// Builds the full (non-recombining) tree on `grid`.
pub fn build_tree(grid: TimeGrid, lambda: f64, scheme: Scheme) -> Result<ScenarioTree> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidGrid(format!("intensity {lambda} must be finite and >= 0")));
    }
    for step in 0..grid.steps() {
        let value = lambda * grid.dt(step);
        if value >= 1.0 {
            return Err(Error::IntensityTooLarge { step, value });
        }
    }
    let mut nodes = vec![Node {
        level: 0,
        parent: None,
        first_child: 0,
        child_count: 0,
        prob: 1.0,
        dw: 0.0,
        dn: 0,
        dn_comp: 0.0,
        path_prob: 1.0,
    }];
    let mut level_start = vec![0, 1];
    for level in 0..grid.steps() {
        let dt = grid.dt(level);
        let bs = branches(scheme, lambda, dt);
        let range = level_start[level]..level_start[level + 1];
        for parent in range {
            let first = nodes.len();
            let parent_prob = nodes[parent].path_prob;
            for b in &bs {
                nodes.push(Node {
                    level: level + 1,
                    parent: Some(parent),
                    first_child: 0,
                    child_count: 0,
                    prob: b.prob,
                    dw: b.dw,
                    dn: b.dn,
                    dn_comp: b.dn as f64 - lambda * dt,
                    path_prob: parent_prob * b.prob,
                });
            }
            nodes[parent].first_child = first;
            nodes[parent].child_count = bs.len();
        }
        level_start.push(nodes.len());
    }
    for n in level_start[grid.steps()]..nodes.len() {
        nodes[n].first_child = nodes.len();
    }
    Ok(ScenarioTree {
        grid,
        lambda,
        scheme,
        nodes,
        level_start,
    })
}

impl ScenarioTree {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    /// Number of steps `N`; leaves sit at level `N`.
    pub fn depth(&self) -> usize {
        self.grid.steps()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn level(&self, id: NodeId) -> usize {
        self.nodes[id].level
    }

    pub fn time(&self, id: NodeId) -> f64 {
        self.grid.time(self.nodes[id].level)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: NodeId) -> Range<NodeId> {
        let n = &self.nodes[id];
        n.first_child..n.first_child + n.child_count
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.nodes[id].child_count == 0
    }

    /// Length of the interval following the node.
    pub fn dt_after(&self, id: NodeId) -> f64 {
        self.grid.dt(self.nodes[id].level)
    }

    pub fn level_nodes(&self, level: usize) -> Range<NodeId> {
        self.level_start[level]..self.level_start[level + 1]
    }

    pub fn leaves(&self) -> Range<NodeId> {
        self.level_nodes(self.depth())
    }

    /// Descendants of `id` (itself included) level by level.
    pub fn subtree_levels(&self, id: NodeId) -> Vec<Range<NodeId>> {
        let mut out = vec![id..id + 1];
        let mut cur = id..id + 1;
        while cur.start < cur.end && !self.is_terminal(cur.start) {
            let first = self.nodes[cur.start].first_child;
            let last = self.children(cur.end - 1).end;
            cur = first..last;
            out.push(cur.clone());
        }
        out
    }

    /// Ancestors of `id` from the root down to `id` itself.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Whether `a` is an ancestor of `b` or equal to it.
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        let la = self.level(a);
        let mut cur = b;
        while self.level(cur) > la {
            cur = self.nodes[cur].parent.expect("non-root has a parent");
        }
        cur == a
    }

    /// `E[X | node]` from the values of `X` at the children, in child order.
    pub fn expectation(&self, id: NodeId, child_values: &[f64]) -> Result<f64> {
        let children = self.children(id);
        if child_values.len() != children.len() {
            return Err(Error::ChildValues {
                node: id,
                expected: children.len(),
                got: child_values.len(),
            });
        }
        Ok(children
            .zip(child_values)
            .map(|(c, v)| self.nodes[c].prob * v)
            .sum())
    }

    /// `E[X | node]` for a process given on every node of the tree.
    pub fn expect(&self, id: NodeId, process: &[f64]) -> f64 {
        self.children(id)
            .map(|c| self.nodes[c].prob * process[c])
            .sum()
    }

    /// Least-squares projection of the child increments onto `span{dW, dN~}`.
    pub fn decompose(&self, id: NodeId, child_values: &[f64]) -> Result<DecompositionRow> {
        let children = self.children(id);
        if child_values.len() != children.len() {
            return Err(Error::ChildValues {
                node: id,
                expected: children.len(),
                got: child_values.len(),
            });
        }
        let first = children.start;
        let p = self.project_with(id, |c| child_values[c - first]);
        let regressors = if p.degenerate { 1 } else { 2 };
        let h_inc = if children.len() <= regressors + 1 {
            // The constants and the regressors already span every child vector.
            vec![0.0; children.len()]
        } else {
            children
                .zip(child_values)
                .map(|(c, v)| {
                    let n = &self.nodes[c];
                    v - p.mean - p.z * n.dw - p.k * n.dn_comp
                })
                .collect()
        };
        Ok(DecompositionRow {
            z: p.z,
            k: p.k,
            h_inc,
            degenerate: p.degenerate,
        })
    }

    /// Mean and `(z, k)` coefficients of a full process at the children of `id`,
    /// without materializing the residual.
    pub fn project(&self, id: NodeId, process: &[f64]) -> Projection {
        self.project_with(id, |c| process[c])
    }

    fn project_with(&self, id: NodeId, value: impl Fn(NodeId) -> f64) -> Projection {
        let children = self.children(id);
        let mut mean = 0.0;
        for c in children.clone() {
            mean += self.nodes[c].prob * value(c);
        }
        let (mut g11, mut g12, mut g22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for c in children {
            let n = &self.nodes[c];
            let dm = value(c) - mean;
            g11 += n.prob * n.dw * n.dw;
            g12 += n.prob * n.dw * n.dn_comp;
            g22 += n.prob * n.dn_comp * n.dn_comp;
            b1 += n.prob * dm * n.dw;
            b2 += n.prob * dm * n.dn_comp;
        }
        let degenerate = !(g22 > 0.0);
        let (z, k) = if degenerate {
            (b1 / g11, 0.0)
        } else {
            let det = g11 * g22 - g12 * g12;
            ((b1 * g22 - b2 * g12) / det, (g11 * b2 - g12 * b1) / det)
        };
        Projection {
            mean,
            z,
            k,
            degenerate,
        }
    }

    /// [`Self::decompose`] reading the child values out of a full process.
    pub fn decompose_process(&self, id: NodeId, process: &[f64]) -> DecompositionRow {
        let vals: Vec<f64> = self.children(id).map(|c| process[c]).collect();
        self.decompose(id, &vals).expect("child count matches")
    }

    pub fn dump(&self) -> TreeDump<'_> {
        TreeDump {
            grid: self.grid.times(),
            lambda: self.lambda,
            scheme: self.scheme,
            nodes: &self.nodes,
        }
    }
}

/// Conditional mean and martingale coefficients at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub mean: f64,
    pub z: f64,
    pub k: f64,
    pub degenerate: bool,
}

/// Serializable view of a tree for debugging output.
#[derive(Debug, Serialize)]
pub struct TreeDump<'a> {
    pub grid: &'a [f64],
    pub lambda: f64,
    pub scheme: Scheme,
    pub nodes: &'a [Node],
}

/// `E[X | node]`; see [`ScenarioTree::expectation`].
pub fn conditional_expectation(tree: &ScenarioTree, node: NodeId, x: &[f64]) -> Result<f64> {
    tree.expectation(node, x)
}

/// Orthogonal decomposition of `M_next - E[M_next | node]`; see [`ScenarioTree::decompose`].
pub fn martingale_decompose(
    tree: &ScenarioTree,
    node: NodeId,
    m_next: &[f64],
) -> Result<DecompositionRow> {
    tree.decompose(node, m_next)
}

/// Per-node carrier of an adapted (optional, sampled at instants) process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedProcess {
    pub values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn new(tree: &ScenarioTree, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.len() {
            return Err(Error::ProcessLength {
                expected: tree.len(),
                got: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn constant(tree: &ScenarioTree, c: f64) -> Self {
        Self {
            values: vec![c; tree.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(steps: usize, horizon: f64, lambda: f64, scheme: Scheme) -> ScenarioTree {
        build_tree(TimeGrid::uniform(horizon, steps).unwrap(), lambda, scheme).unwrap()
    }

    #[test]
    fn zero_intensity_prunes_jump_branch() {
        let t = tree(1, 1.0, 0.0, Scheme::Three);
        assert_eq!(t.children(0).len(), 2);
        assert_eq!(t.node(1).prob, 0.5);
        assert_eq!(t.node(2).prob, 0.5);
    }

    #[test]
    fn three_branch_probabilities() {
        let t = tree(1, 0.1, 1.0, Scheme::Three);
        let p: Vec<f64> = t.children(0).map(|c| t.node(c).prob).collect();
        assert_eq!(p.len(), 3);
        assert!((p[0] - 0.45).abs() < 1e-15);
        assert!((p[1] - 0.45).abs() < 1e-15);
        assert!((p[2] - 0.10).abs() < 1e-15);
    }

    #[test]
    fn four_branch_has_sixteen_leaves() {
        let t = tree(2, 1.0, 0.5, Scheme::Four);
        assert_eq!(t.leaves().len(), 16);
        let q = 0.5 * 0.5;
        let p: Vec<f64> = t.children(0).map(|c| t.node(c).prob).collect();
        assert_eq!(p, vec![(1.0 - q) / 2.0, (1.0 - q) / 2.0, q / 2.0, q / 2.0]);
        let total: f64 = t.leaves().map(|l| t.node(l).path_prob).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_large_intensity() {
        let g = TimeGrid::uniform(1.0, 1).unwrap();
        assert!(matches!(
            build_tree(g, 1.0, Scheme::Three),
            Err(Error::IntensityTooLarge { .. })
        ));
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.3, 1.0]).is_ok());
    }

    #[test]
    fn moment_matching() {
        for scheme in [Scheme::Three, Scheme::Four] {
            let t = tree(1, 0.1, 1.0, scheme);
            let dw: Vec<f64> = t.children(0).map(|c| t.node(c).dw).collect();
            let dw2: Vec<f64> = dw.iter().map(|x| x * x).collect();
            let dn: Vec<f64> = t.children(0).map(|c| t.node(c).dn as f64).collect();
            assert!(t.expectation(0, &dw).unwrap().abs() < 1e-15);
            assert!((t.expectation(0, &dw2).unwrap() - 0.1).abs() < 1e-15);
            assert!((t.expectation(0, &dn).unwrap() - 0.1).abs() < 1e-15);
            assert_eq!(t.expectation(0, &vec![5.0; dw.len()]).unwrap(), 5.0);
        }
    }

    #[test]
    fn missing_child_value_is_an_error() {
        let t = tree(1, 0.1, 1.0, Scheme::Three);
        assert!(t.expectation(0, &[1.0, 2.0]).is_err());
        assert!(t.decompose(0, &[1.0]).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let t = tree(1, 0.1, 1.0, Scheme::Three);
        let row = t.decompose(0, &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((row.z, row.k), (0.0, 0.0));
        assert!(row.h_inc.iter().all(|h| *h == 0.0));
        let dw: Vec<f64> = t.children(0).map(|c| 2.0 * t.node(c).dw).collect();
        let row = t.decompose(0, &dw).unwrap();
        assert!((row.z - 2.0).abs() < 1e-13);
        assert!(row.k.abs() < 1e-13);
    }

    #[test]
    fn degenerate_gram_without_jumps() {
        let t = tree(1, 1.0, 0.0, Scheme::Four);
        let row = t.decompose(0, &[1.0, -1.0]).unwrap();
        assert!(row.degenerate);
        assert_eq!(row.k, 0.0);
        assert!((row.z - 1.0).abs() < 1e-15);
    }

    #[test]
    fn four_branch_product_has_orthogonal_residual() {
        // Hand solution: E[dW * dW dN] = q dt, E[dN~ * dW dN] = 0 and the Gram
        // matrix is diag(dt, q(1-q)), so z = q and k = 0.
        let (dt, lambda) = (0.25, 1.0);
        let t = tree(1, dt, lambda, Scheme::Four);
        let q = lambda * dt;
        let vals: Vec<f64> = t
            .children(0)
            .map(|c| t.node(c).dw * t.node(c).dn as f64)
            .collect();
        let row = t.decompose(0, &vals).unwrap();
        assert!((row.z - q).abs() < 1e-14, "z = {}", row.z);
        assert!(row.k.abs() < 1e-14);
        assert!(row.h_inc.iter().any(|h| h.abs() > 1e-3));
        let p: Vec<f64> = t.children(0).map(|c| t.node(c).prob).collect();
        let e = |w: &dyn Fn(usize) -> f64| -> f64 {
            (0..4).map(|j| p[j] * row.h_inc[j] * w(j)).sum::<f64>()
        };
        let kids: Vec<usize> = t.children(0).collect();
        assert!(e(&|_| 1.0).abs() < 1e-15);
        assert!(e(&|j| t.node(kids[j]).dw).abs() < 1e-15);
        assert!(e(&|j| t.node(kids[j]).dn_comp).abs() < 1e-15);
    }

    #[test]
    fn subtree_levels_are_contiguous() {
        let t = tree(3, 1.0, 0.5, Scheme::Three);
        let levels = t.subtree_levels(2);
        assert_eq!(levels.len(), 3);
        for r in &levels[1..] {
            for n in r.clone() {
                assert!(t.is_ancestor_or_self(2, n));
            }
        }
        assert_eq!(levels[2].len(), 9);
    }
}
