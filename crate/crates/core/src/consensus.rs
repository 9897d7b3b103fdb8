//! Average consensus over values held in per-node coordinate frames.
//!
//! Each node `i` stores a value `x_i` expressed in its own frame; ordered
//! edge transforms `A_ij` map neighbour `j`'s value into frame `i` and
//! satisfy the cocycle property `A_ii = I`, `A_ij = A_ik A_kj`. The
//! forward-Euler discretization of
//!
//! ```text
//! ẋ_i = Σ_{j ∈ N_i} (A_ij x_j − x_i)
//! ```
//!
//! drives every node to `(1/n) Σ_j A_ij x_j(0)` — the average of all initial
//! values expressed in its own frame — while staying strictly one-hop: a
//! round reads only neighbour values.
//!
//! Rounds are synchronous and implemented as a pure `values → values` map,
//! so a single-threaded round-robin schedule and any parallel schedule that
//! respects the round barrier produce bit-identical results.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::se3::Wrench;

/// Undirected communication graph with per-ordered-pair linear transforms.
#[derive(Debug, Clone)]
pub struct RobotNetwork {
    n: usize,
    dim: usize,
    /// Neighbour lists, sorted; `transforms[(i, j)]` maps j-frame values into
    /// frame i for every ordered pair with `(i, j)` an edge.
    neighbors: Vec<Vec<usize>>,
    transforms: BTreeMap<(usize, usize), DMatrix<f64>>,
    max_degree: usize,
}

impl RobotNetwork {
    /// Builds a network from undirected edges and a transform factory giving
    /// `A_ij` for each ordered pair. Checks connectivity, `A_ij A_ji = I`,
    /// and the cocycle identity on every triangle present in the graph.
    pub fn new(
        n: usize,
        edges: &[(usize, usize)],
        dim: usize,
        mut transform: impl FnMut(usize, usize) -> DMatrix<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("empty network".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut transforms = BTreeMap::new();
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidConfig(format!(
                    "invalid edge ({a}, {b}) for {n} nodes"
                )));
            }
            if neighbors[a].contains(&b) {
                continue;
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
            for (i, j) in [(a, b), (b, a)] {
                let m = transform(i, j);
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(Error::Dimension {
                        context: "edge transform",
                        expected: format!("{dim}x{dim}"),
                        got: format!("{}x{}", m.nrows(), m.ncols()),
                    });
                }
                transforms.insert((i, j), m);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        // Connectivity.
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reachable = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    reachable += 1;
                    queue.push_back(v);
                }
            }
        }
        if reachable != n {
            return Err(Error::Disconnected {
                nodes: n,
                reachable,
            });
        }

        let net = RobotNetwork {
            n,
            dim,
            max_degree: neighbors.iter().map(Vec::len).max().unwrap_or(0),
            neighbors,
            transforms,
        };
        net.check_inverses(1e-10)?;
        net.check_triangles(1e-8)?;
        Ok(net)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn value_dim(&self) -> usize {
        self.dim
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn transform(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.transforms[&(i, j)]
    }

    fn check_inverses(&self, tol: f64) -> Result<()> {
        for (&(i, j), a_ij) in &self.transforms {
            if i > j {
                continue;
            }
            let a_ji = &self.transforms[&(j, i)];
            let dev = (a_ij * a_ji - DMatrix::identity(self.dim, self.dim)).amax();
            if dev > tol {
                return Err(Error::ConstraintViolation {
                    what: "edge transform round trip A_ij A_ji = I",
                    deviation: dev,
                    tol,
                });
            }
        }
        Ok(())
    }

    fn check_triangles(&self, tol: f64) -> Result<()> {
        for i in 0..self.n {
            for &j in &self.neighbors[i] {
                for &k in &self.neighbors[j] {
                    if k == i || !self.neighbors[i].contains(&k) {
                        continue;
                    }
                    let direct = &self.transforms[&(i, k)];
                    let composed = &self.transforms[&(i, j)] * &self.transforms[&(j, k)];
                    let dev = (direct - composed).amax();
                    if dev > tol {
                        return Err(Error::ConstraintViolation {
                            what: "cocycle A_ij A_jk = A_ik on a triangle",
                            deviation: dev,
                            tol,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Euler step size `1/(deg_max + 1)`, stable for the discretized dynamics.
    pub fn default_step(&self) -> f64 {
        1.0 / (self.max_degree as f64 + 1.0)
    }
}

/// One synchronous consensus round:
/// `x_i ← x_i + η Σ_{j∈N_i} (A_ij x_j − x_i)`.
pub fn consensus_step(net: &RobotNetwork, values: &[DVector<f64>], eta: f64) -> Vec<DVector<f64>> {
    let mut next = values.to_vec();
    for i in 0..net.node_count() {
        let mut update = DVector::zeros(net.value_dim());
        for &j in net.neighbors(i) {
            update += net.transform(i, j) * &values[j] - &values[i];
        }
        next[i] += update * eta;
    }
    next
}

/// Residual of the consensus dynamics: `max_i ‖Σ_{j∈N_i} (A_ij x_j − x_i)‖`.
pub fn consensus_residual(net: &RobotNetwork, values: &[DVector<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..net.node_count() {
        let mut update = DVector::zeros(net.value_dim());
        for &j in net.neighbors(i) {
            update += net.transform(i, j) * &values[j] - &values[i];
        }
        worst = worst.max(update.norm());
    }
    worst
}

#[derive(Debug, Clone)]
pub struct ConsensusRun {
    pub values: Vec<DVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// Dynamics residual after every completed round (index 0 is the initial
    /// residual).
    pub residual_history: Vec<f64>,
}

/// Iterates synchronous rounds until the dynamics residual drops below `tol`
/// or `max_iters` rounds have run. Non-convergence is reported in the result
/// (with estimated poses the cocycle holds only approximately, so a small
/// residual floor is expected and tolerated by callers).
pub fn run_consensus(
    net: &RobotNetwork,
    initial: &[DVector<f64>],
    tol: f64,
    max_iters: usize,
) -> Result<ConsensusRun> {
    if initial.len() != net.node_count() {
        return Err(Error::Dimension {
            context: "run_consensus values",
            expected: net.node_count().to_string(),
            got: initial.len().to_string(),
        });
    }
    for v in initial {
        if v.len() != net.value_dim() {
            return Err(Error::Dimension {
                context: "run_consensus value dim",
                expected: net.value_dim().to_string(),
                got: v.len().to_string(),
            });
        }
    }
    let eta = net.default_step();
    let mut values = initial.to_vec();
    let mut residual = consensus_residual(net, &values);
    let mut residual_history = vec![residual];
    let mut iterations = 0;
    while residual > tol && iterations < max_iters {
        values = consensus_step(net, &values, eta);
        iterations += 1;
        residual = consensus_residual(net, &values);
        residual_history.push(residual);
    }
    Ok(ConsensusRun {
        converged: residual <= tol,
        values,
        iterations,
        residual,
        residual_history,
    })
}

/// Recovers each node's total wrench `Σ_j Ad(g_ji)ᵀ w_j` from per-node local
/// wrenches: runs average consensus under the wrench transform family and
/// multiplies by the (globally known) node count.
pub fn total_wrench(
    net: &RobotNetwork,
    local: &[Wrench],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<Wrench>> {
    let initial: Vec<DVector<f64>> = local
        .iter()
        .map(|w| DVector::from_iterator(6, w.as_vector().iter().copied()))
        .collect();
    let run = run_consensus(net, &initial, tol, max_iters)?;
    let n = net.node_count() as f64;
    Ok(run
        .values
        .iter()
        .map(|v| {
            let mut w = nalgebra::Vector6::zeros();
            for k in 0..6 {
                w[k] = v[k] * n;
            }
            Wrench::from_vector(&w)
        })
        .collect())
}
