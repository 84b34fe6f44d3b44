//! BFS pseudo-tree over the constraint graph: parent/children relations,
//! levels and the height H that bounds anytime-update propagation delay.

use crate::model::{AgentId, DcopInstance};
use std::collections::VecDeque;
use thiserror::Error;

/// Spanning tree produced by BFS layering. `height` is the maximum level with
/// the root at level 0; all anytime windows and delay bounds use this H.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoTree {
    pub root: AgentId,
    pub parent: Vec<Option<AgentId>>,
    pub children: Vec<Vec<AgentId>>,
    pub level: Vec<u32>,
    /// Longest root-to-leaf path in edges (max level).
    pub height: u32,
    /// Per-agent height of the subtree rooted there (0 for leaves); drives
    /// the aggregation pipeline schedule.
    pub subtree_height: Vec<u32>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("root {0} is not a valid agent")]
    BadRoot(AgentId),
    #[error("agent {0} is unreachable from the root")]
    Unreachable(AgentId),
}

/// Builds the BFS tree from `root`. Each non-root agent's parent is its
/// lowest-id neighbor in the previous BFS layer, which makes construction
/// deterministic.
pub fn build_bfs_tree(instance: &DcopInstance, root: AgentId) -> Result<PseudoTree, TreeError> {
    let n = instance.agent_count();
    if root >= n {
        return Err(TreeError::BadRoot(root));
    }
    let mut level = vec![u32::MAX; n];
    level[root] = 0;
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for v in instance.neighbors(u) {
            if level[v] == u32::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    if let Some(a) = level.iter().position(|&l| l == u32::MAX) {
        return Err(TreeError::Unreachable(a));
    }

    let mut parent = vec![None; n];
    let mut children: Vec<Vec<AgentId>> = vec![Vec::new(); n];
    for a in 0..n {
        if a == root {
            continue;
        }
        // Neighbors iterate in ascending id order, so the first match is the
        // lowest-id neighbor one layer up.
        let p = instance
            .neighbors(a)
            .find(|&v| level[v] + 1 == level[a])
            .expect("BFS layering guarantees a previous-layer neighbor");
        parent[a] = Some(p);
        children[p].push(a);
    }
    for c in &mut children {
        c.sort_unstable();
    }

    let mut subtree_height = vec![0u32; n];
    for &a in order.iter().rev() {
        if let Some(p) = parent[a] {
            subtree_height[p] = subtree_height[p].max(subtree_height[a] + 1);
        }
    }

    let height = level.iter().copied().max().unwrap_or(0);
    Ok(PseudoTree {
        root,
        parent,
        children,
        level,
        height,
        subtree_height,
    })
}

/// Default root choice: maximum constraint-graph degree, lowest id on ties.
/// A high-degree root tends to minimize H.
pub fn default_root(instance: &DcopInstance) -> AgentId {
    (0..instance.agent_count())
        .max_by(|&a, &b| instance.degree(a).cmp(&instance.degree(b)).then(b.cmp(&a)))
        .expect("non-empty instance")
}

impl PseudoTree {
    pub fn height(&self) -> u32 {
        self.height
    }
}
