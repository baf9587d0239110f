//! Directed leader-follower communication graph.
//!
//! Node `0` is the reference model; followers are numbered `1..=N`. Entry
//! `a_ij = 1` means follower `i` receives information from node `j`.

use std::collections::BTreeSet;

use thiserror::Error;

/// Node id of the reference model.
pub const LEADER: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("cycle detected among followers {0:?}")]
    CycleDetected(Vec<usize>),
    #[error("follower {0} is not reachable from the leader")]
    UnreachableNode(usize),
    #[error("follower {0} has no in-neighbors")]
    IsolatedNode(usize),
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge [{0}, {1}] is malformed (the leader cannot receive)")]
    BadEdge(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    n_agents: usize,
    // Row i-1 holds a_i0..a_iN for follower i.
    adjacency: Vec<Vec<bool>>,
}

impl GraphTopology {
    /// Builds a graph from `[from, to]` pairs. Only structural checks are made
    /// here; call [`GraphTopology::validate`] for the leader-follower invariants.
    pub fn from_edges(n_agents: usize, edges: &[[usize; 2]]) -> Result<Self, TopologyError> {
        let mut adjacency = vec![vec![false; n_agents + 1]; n_agents];
        for &[from, to] in edges {
            if from > n_agents {
                return Err(TopologyError::UnknownAgent(from));
            }
            if to > n_agents {
                return Err(TopologyError::UnknownAgent(to));
            }
            if to == LEADER {
                return Err(TopologyError::BadEdge(from, to));
            }
            adjacency[to - 1][from] = true;
        }
        Ok(Self { n_agents, adjacency })
    }

    /// Predecessor-follower chain `0 -> 1 -> ... -> N`.
    pub fn chain(n_agents: usize) -> Self {
        let edges: Vec<[usize; 2]> = (1..=n_agents).map(|i| [i - 1, i]).collect();
        Self::from_edges(n_agents, &edges).expect("chain edges are in range")
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// `a_ij` for follower `i` and node `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == LEADER || i > self.n_agents || j > self.n_agents {
            return 0.0;
        }
        if self.adjacency[i - 1][j] {
            1.0
        } else {
            0.0
        }
    }

    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for i in 1..=self.n_agents {
            for j in self.in_neighbors_unchecked(i) {
                out.push([j, i]);
            }
        }
        out
    }

    fn check_agent(&self, i: usize) -> Result<(), TopologyError> {
        if i == LEADER || i > self.n_agents {
            Err(TopologyError::UnknownAgent(i))
        } else {
            Ok(())
        }
    }

    fn in_neighbors_unchecked(&self, i: usize) -> Vec<usize> {
        self.adjacency[i - 1]
            .iter()
            .enumerate()
            .filter_map(|(j, &a)| a.then_some(j))
            .collect()
    }

    /// All `j` with `a_ij = 1`, ascending, possibly including the leader.
    pub fn in_neighbors(&self, i: usize) -> Result<Vec<usize>, TopologyError> {
        self.check_agent(i)?;
        Ok(self.in_neighbors_unchecked(i))
    }

    /// In-neighbors of `i` excluding the leader.
    pub fn follower_neighbors(&self, i: usize) -> Result<Vec<usize>, TopologyError> {
        Ok(self
            .in_neighbors(i)?
            .into_iter()
            .filter(|&j| j != LEADER)
            .collect())
    }

    pub fn observes_leader(&self, i: usize) -> Result<bool, TopologyError> {
        self.check_agent(i)?;
        Ok(self.adjacency[i - 1][LEADER])
    }

    /// Normalization `1 / sum_j a_ij`.
    pub fn alpha(&self, i: usize) -> Result<f64, TopologyError> {
        let degree = self.in_neighbors(i)?.len();
        if degree == 0 {
            return Err(TopologyError::IsolatedNode(i));
        }
        Ok(1.0 / degree as f64)
    }

    /// Topological order of the followers (Kahn's algorithm with an ordered
    /// ready set, so ties go to the smallest id).
    pub fn evaluation_order(&self) -> Result<Vec<usize>, TopologyError> {
        let n = self.n_agents;
        let mut pending: Vec<usize> = (1..=n)
            .map(|i| {
                self.adjacency[i - 1]
                    .iter()
                    .skip(1)
                    .filter(|&&a| a)
                    .count()
            })
            .collect();
        let mut ready: BTreeSet<usize> = (1..=n).filter(|&i| pending[i - 1] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(j) = ready.pop_first() {
            order.push(j);
            for i in 1..=n {
                if self.adjacency[i - 1][j] {
                    pending[i - 1] -= 1;
                    if pending[i - 1] == 0 {
                        ready.insert(i);
                    }
                }
            }
        }
        if order.len() < n {
            return Err(TopologyError::CycleDetected(self.find_cycle()));
        }
        Ok(order)
    }

    // Walks backwards along in-edges among followers that are stuck in Kahn's
    // algorithm until a node repeats.
    fn find_cycle(&self) -> Vec<usize> {
        let n = self.n_agents;
        let mut indegree: Vec<usize> = (1..=n)
            .map(|i| self.adjacency[i - 1].iter().skip(1).filter(|&&a| a).count())
            .collect();
        let mut removed = vec![false; n + 1];
        let mut changed = true;
        while changed {
            changed = false;
            for j in 1..=n {
                if !removed[j] && indegree[j - 1] == 0 {
                    removed[j] = true;
                    changed = true;
                    for i in 1..=n {
                        if self.adjacency[i - 1][j] {
                            indegree[i - 1] -= 1;
                        }
                    }
                }
            }
        }
        let Some(start) = (1..=n).find(|&i| !removed[i]) else {
            return Vec::new();
        };
        let mut path = vec![start];
        let mut current = start;
        loop {
            let prev = (1..=n)
                .find(|&j| !removed[j] && self.adjacency[current - 1][j])
                .expect("every remaining node has a remaining in-neighbor");
            if let Some(pos) = path.iter().position(|&p| p == prev) {
                let mut cycle = path[pos..].to_vec();
                cycle.sort_unstable();
                return cycle;
            }
            path.push(prev);
            current = prev;
        }
    }

    /// Checks the leader-follower invariants: no self-loops, every follower
    /// has an in-neighbor, the follower subgraph is acyclic and every follower
    /// is reachable from the leader.
    pub fn validate(&self) -> Result<(), TopologyError> {
        for i in 1..=self.n_agents {
            if self.adjacency[i - 1][i] {
                return Err(TopologyError::SelfLoop(i));
            }
        }
        self.evaluation_order()?;
        for i in 1..=self.n_agents {
            if self.in_neighbors_unchecked(i).is_empty() {
                return Err(TopologyError::IsolatedNode(i));
            }
        }
        let mut reached = vec![false; self.n_agents + 1];
        reached[LEADER] = true;
        let mut stack = vec![LEADER];
        while let Some(j) = stack.pop() {
            for i in 1..=self.n_agents {
                if !reached[i] && self.adjacency[i - 1][j] {
                    reached[i] = true;
                    stack.push(i);
                }
            }
        }
        if let Some(i) = (1..=self.n_agents).find(|&i| !reached[i]) {
            return Err(TopologyError::UnreachableNode(i));
        }
        Ok(())
    }
}
