//! Finite scenario trees used as exact oracles.
//!
//! A [`Lattice`] is a tree whose nodes at level `j` are the atoms of the
//! information available at exercise date `j`. Every quantity here is
//! computed exactly (up to floating point), so the Monte Carlo modules can be
//! checked against it.

mod binomial;
mod discretize;
mod enumerate;
pub mod fixtures;
mod kernel;
mod minimax;
mod snell;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binomial::binomial_bermudan_value;
pub use discretize::{discretize_rule, dyadic_exercise_mask, robust_value_masked};
pub use enumerate::{
    count_stopping_times, enumerate_stopping_times, for_each_stopping_rule, DEFAULT_ENUMERATION_CAP,
};
pub use kernel::{
    kernel_distribution, kernel_objective, tail_integral_objective, EmpiricalDistribution,
    RandomizedKernel,
};
pub use minimax::{find_saddle, minimax_check, MinimaxConfig, MinimaxReport, Saddle};
pub use snell::{
    pathwise_dual_check, robust_value_lattice, shifted_rewards, snell_envelope,
    snell_envelope_masked, PathwiseDual, SnellResult,
};

/// Tolerance on per-node probability sums.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub probs: Vec<f64>,
    pub payoff: f64,
}

/// Node record of the JSON fixture format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub payoff: f64,
    #[serde(default)]
    pub children: Vec<usize>,
    #[serde(default)]
    pub probs: Vec<f64>,
}

/// JSON fixture: a list of nodes with node 0 as the root, plus optional
/// per-level times (defaults to `0, 1, ..., J`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeRecord {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    pub nodes: Vec<NodeRecord>,
}

/// Finite scenario tree with adapted payoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub name: String,
    nodes: Vec<Node>,
    levels: Vec<Vec<usize>>,
    times: Vec<f64>,
    reach: Vec<f64>,
}

impl Lattice {
    pub fn from_record(rec: &LatticeRecord) -> Result<Self> {
        let n = rec.nodes.len();
        if n == 0 {
            return Err(Error::MalformedLattice {
                node: 0,
                reason: "lattice has no nodes".into(),
            });
        }
        let mut nodes: Vec<Option<Node>> = vec![None; n];
        for r in &rec.nodes {
            let bad = |reason: String| Error::MalformedLattice { node: r.id, reason };
            if r.id >= n {
                return Err(bad(format!("id out of range (only {n} nodes)")));
            }
            if nodes[r.id].is_some() {
                return Err(bad("duplicate id".into()));
            }
            if !(r.payoff >= 0.0 && r.payoff.is_finite()) {
                return Err(bad(format!("payoff {} must be finite and non-negative", r.payoff)));
            }
            if r.children.len() != r.probs.len() {
                return Err(bad(format!(
                    "{} children but {} probabilities",
                    r.children.len(),
                    r.probs.len()
                )));
            }
            if r.probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
                return Err(bad(format!("probabilities {:?} must lie in (0, 1]", r.probs)));
            }
            if !r.children.is_empty() {
                let s: f64 = r.probs.iter().sum();
                if (s - 1.0).abs() > PROBABILITY_TOLERANCE {
                    return Err(bad(format!("probabilities sum to {s}, not 1")));
                }
            }
            nodes[r.id] = Some(Node {
                level: 0,
                parent: None,
                children: r.children.clone(),
                probs: r.probs.clone(),
                payoff: r.payoff,
            });
        }
        let mut nodes: Vec<Node> = nodes.into_iter().map(|n| n.expect("all ids present")).collect();
        for id in 0..n {
            for c in nodes[id].children.clone() {
                if c >= n || c == 0 {
                    return Err(Error::MalformedLattice {
                        node: id,
                        reason: format!("invalid child {c}"),
                    });
                }
                if nodes[c].parent.is_some() {
                    return Err(Error::MalformedLattice {
                        node: c,
                        reason: "node has more than one parent".into(),
                    });
                }
                nodes[c].parent = Some(id);
            }
        }
        // breadth-first levels from the root
        let mut levels = vec![vec![0usize]];
        let mut seen = 1;
        loop {
            let next: Vec<usize> = levels
                .last()
                .expect("non-empty")
                .iter()
                .flat_map(|&id| nodes[id].children.clone())
                .collect();
            if next.is_empty() {
                break;
            }
            for &id in &next {
                nodes[id].level = levels.len();
            }
            seen += next.len();
            levels.push(next);
        }
        if seen != n {
            let orphan = (1..n).find(|&i| nodes[i].parent.is_none()).unwrap_or(0);
            return Err(Error::MalformedLattice {
                node: orphan,
                reason: "node is not reachable from the root".into(),
            });
        }
        let depth = levels.len() - 1;
        for (id, node) in nodes.iter().enumerate() {
            if node.children.is_empty() && node.level != depth {
                return Err(Error::MalformedLattice {
                    node: id,
                    reason: format!("leaf at level {} but the tree has depth {depth}", node.level),
                });
            }
        }
        let times = match &rec.times {
            Some(t) => {
                if t.len() != depth + 1 || t.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::MalformedLattice {
                        node: 0,
                        reason: format!("need {} strictly increasing times", depth + 1),
                    });
                }
                t.clone()
            }
            None => (0..=depth).map(|j| j as f64).collect(),
        };
        let mut reach = vec![0.0; n];
        reach[0] = 1.0;
        for level in &levels {
            for &id in level {
                for (&c, &p) in nodes[id].children.iter().zip(&nodes[id].probs) {
                    reach[c] = reach[id] * p;
                }
            }
        }
        Ok(Lattice {
            name: rec.name.clone(),
            nodes,
            levels,
            times,
            reach,
        })
    }

    pub fn to_record(&self) -> LatticeRecord {
        LatticeRecord {
            name: self.name.clone(),
            times: Some(self.times.clone()),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeRecord {
                    id,
                    payoff: n.payoff,
                    children: n.children.clone(),
                    probs: n.probs.clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: LatticeRecord = serde_json::from_str(s)?;
        Lattice::from_record(&rec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Lattice::from_json(&text)
    }

    /// Non-recombining binomial tree: each node moves up by `up` with
    /// probability `q` and down by `1/up` otherwise. `payoff(s, t)` gives
    /// the (discounted) reward at spot `s` and time `t = level * dt`.
    pub fn binomial_tree<F: Fn(f64, f64) -> f64>(
        s0: f64,
        up: f64,
        q: f64,
        steps: usize,
        payoff: F,
        dt: f64,
    ) -> Result<Self> {
        if !(up > 1.0) || !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidInput(format!(
                "binomial tree needs up > 1 and 0 < q < 1 (got {up}, {q})"
            )));
        }
        let down = 1.0 / up;
        let mut spots = vec![s0];
        let mut recs = vec![NodeRecord {
            id: 0,
            payoff: payoff(s0, 0.0),
            children: vec![],
            probs: vec![],
        }];
        let mut frontier = vec![0usize];
        for level in 1..=steps {
            let t = level as f64 * dt;
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for &id in &frontier {
                for (mult, p) in [(up, q), (down, 1.0 - q)] {
                    let c = recs.len();
                    let s = spots[id] * mult;
                    spots.push(s);
                    recs.push(NodeRecord {
                        id: c,
                        payoff: payoff(s, t),
                        children: vec![],
                        probs: vec![],
                    });
                    recs[id].children.push(c);
                    recs[id].probs.push(p);
                    next.push(c);
                }
            }
            frontier = next;
        }
        Lattice::from_record(&LatticeRecord {
            name: format!("binomial-{steps}"),
            times: Some((0..=steps).map(|j| j as f64 * dt).collect()),
            nodes: recs,
        })
    }

    /// Binomial tree moment-matched to a one-asset GBM with drift `r - delta`.
    pub fn gbm_binomial<F: Fn(f64, f64) -> f64>(
        s0: f64,
        r: f64,
        delta: f64,
        sigma: f64,
        maturity: f64,
        steps: usize,
        payoff: F,
    ) -> Result<Self> {
        let dt = maturity / steps as f64;
        let up = (sigma * dt.sqrt()).exp();
        let q = (((r - delta) * dt).exp() - 1.0 / up) / (up - 1.0 / up);
        Lattice::binomial_tree(s0, up, q, steps, payoff, dt)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    /// Index of the last level, `J`.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, j: usize) -> &[usize] {
        &self.levels[j]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Probability of reaching each node.
    pub fn reach(&self) -> &[f64] {
        &self.reach
    }

    pub fn payoffs(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.payoff).collect()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Nodes ordered from the last level to the root.
    pub fn bottom_up(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().rev().flat_map(|l| l.iter().copied())
    }

    /// Nodes ordered from the root to the last level.
    pub fn top_down(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().flat_map(|l| l.iter().copied())
    }

    /// Root-to-leaf paths as node lists.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        self.levels
            .last()
            .expect("non-empty")
            .iter()
            .map(|&leaf| {
                let mut p = vec![leaf];
                let mut cur = leaf;
                while let Some(parent) = self.nodes[cur].parent {
                    p.push(parent);
                    cur = parent;
                }
                p.reverse();
                p
            })
            .collect()
    }
}

/// Deterministic stopping rule: the set of nodes where it stops. Leaves
/// always stop; decisions below a stopping node are irrelevant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingRule {
    stop: Vec<bool>,
    leaf: Vec<bool>,
}

impl StoppingRule {
    pub fn new(lattice: &Lattice, stop: Vec<bool>) -> Self {
        assert_eq!(stop.len(), lattice.len());
        let leaf = (0..lattice.len()).map(|i| lattice.is_leaf(i)).collect();
        StoppingRule { stop, leaf }
    }

    /// Rule that stops at every node of level `j` (or leaves if `j` is
    /// beyond the tree).
    pub fn at_level(lattice: &Lattice, j: usize) -> Self {
        let stop = (0..lattice.len()).map(|i| lattice.node(i).level == j).collect();
        StoppingRule::new(lattice, stop)
    }

    #[inline]
    pub fn stops(&self, id: usize) -> bool {
        self.stop[id] || self.leaf[id]
    }

    /// Nodes where the rule actually stops (first stopping node per path).
    pub fn stopping_nodes(&self, lattice: &Lattice) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if self.stops(id) {
                out.push(id);
            } else {
                stack.extend(lattice.node(id).children.iter().copied());
            }
        }
        out.sort_unstable();
        out
    }

    /// `E[z_tau]` by forward evaluation.
    pub fn expected_reward(&self, lattice: &Lattice, z: &[f64]) -> f64 {
        self.stopping_nodes(lattice)
            .iter()
            .map(|&id| lattice.reach()[id] * z[id])
            .sum()
    }

    /// Degenerate randomized kernel putting mass one on the stopping nodes.
    pub fn to_kernel(&self, lattice: &Lattice) -> RandomizedKernel {
        let mut mass = vec![0.0; lattice.len()];
        for id in self.stopping_nodes(lattice) {
            mass[id] = 1.0;
        }
        RandomizedKernel::new_unchecked(mass)
    }
}
