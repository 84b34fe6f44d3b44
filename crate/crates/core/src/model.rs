//! DCOP problem representation: agents, finite domains, binary cost tables and
//! an optional soft global cap constraint. All cost arithmetic is exact integer.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Index of an agent (one decision variable per agent).
pub type AgentId = usize;
/// A domain value, always `0..domain_size` for the owning agent.
pub type Value = usize;
/// Constraint cost / fitness unit.
pub type Cost = i64;

/// Soft all-different style constraint: every value may be taken by at most
/// `cap` agents; each agent over the cap adds `penalty` to the global cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalCap {
    pub cap: u32,
    pub penalty: Cost,
}

/// Binary cost table over an unordered agent pair, stored with `a < b` and
/// `costs[va * |D_b| + vb]` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTable {
    pub a: AgentId,
    pub b: AgentId,
    costs: Vec<Cost>,
    dom_b: usize,
}

impl CostTable {
    #[inline]
    pub fn cost(&self, va: Value, vb: Value) -> Cost {
        self.costs[va * self.dom_b + vb]
    }

    /// Cost lookup oriented from one endpoint: `own` is the value of `agent`,
    /// `other` the value of the opposite endpoint.
    #[inline]
    pub fn cost_from(&self, agent: AgentId, own: Value, other: Value) -> Cost {
        if agent == self.a {
            self.cost(own, other)
        } else {
            self.cost(other, own)
        }
    }
}

/// A validated, immutable DCOP instance. Construction goes through
/// [`DcopInstance::validate`]; afterwards the instance is safe to share
/// (`Arc`) across concurrently stepping agents.
#[derive(Debug, Clone, PartialEq)]
pub struct DcopInstance {
    domains: Vec<usize>,
    tables: Vec<CostTable>,
    /// Per-agent adjacency: `(neighbor, table index)`, sorted by neighbor id.
    adj: Vec<Vec<(AgentId, usize)>>,
    global_cap: Option<GlobalCap>,
    meta: Option<serde_json::Value>,
}

/// On-disk JSON form of an instance.
///
/// `domains` holds per-agent domain sizes (values are `0..size-1`), each
/// constraint table is row-major with rows indexed by `i`'s value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInstance {
    pub agents: usize,
    pub domains: Vec<usize>,
    pub constraints: Vec<RawConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_cap: Option<GlobalCap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawConstraint {
    pub i: AgentId,
    pub j: AgentId,
    pub table: Vec<Vec<Cost>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidateError {
    #[error("instance must have at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("domains array length {got} does not match agent count {agents}")]
    DomainCountMismatch { agents: usize, got: usize },
    #[error("agent {0} has an empty domain")]
    EmptyDomain(AgentId),
    #[error("constraint references unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("constraint on ({0}, {0}) must reference two distinct agents")]
    SelfLoop(AgentId),
    #[error("duplicate constraint table for pair ({0}, {1})")]
    DuplicatePair(AgentId, AgentId),
    #[error("table for pair ({i}, {j}) has shape {rows}x{cols}, expected {want_rows}x{want_cols}")]
    TableShape {
        i: AgentId,
        j: AgentId,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("negative cost {cost} in table for pair ({i}, {j})")]
    NegativeCost { i: AgentId, j: AgentId, cost: Cost },
    #[error("constraint graph is disconnected: agent {0} is unreachable")]
    Disconnected(AgentId),
    #[error("invalid global cap: penalty must be non-negative")]
    BadGlobalCap,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("search space of {size} assignments exceeds the bound {bound}")]
pub struct InstanceTooLarge {
    pub size: u128,
    pub bound: u128,
}

impl DcopInstance {
    /// Validates a raw description and builds the indexed instance.
    ///
    /// Checks: agent/domain counts, domain sizes >= 1, two distinct existing
    /// agents per table, at most one table per unordered pair, exact table
    /// shape, non-negative costs, and connectivity of the constraint graph.
    pub fn validate(raw: RawInstance) -> Result<Self, ValidateError> {
        let n = raw.agents;
        if n < 2 {
            return Err(ValidateError::TooFewAgents(n));
        }
        if raw.domains.len() != n {
            return Err(ValidateError::DomainCountMismatch {
                agents: n,
                got: raw.domains.len(),
            });
        }
        if let Some(a) = raw.domains.iter().position(|&d| d == 0) {
            return Err(ValidateError::EmptyDomain(a));
        }
        if let Some(cap) = raw.global_cap {
            if cap.penalty < 0 {
                return Err(ValidateError::BadGlobalCap);
            }
        }

        let mut tables = Vec::with_capacity(raw.constraints.len());
        let mut adj: Vec<Vec<(AgentId, usize)>> = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for c in &raw.constraints {
            for &e in [c.i, c.j].iter() {
                if e >= n {
                    return Err(ValidateError::UnknownAgent(e));
                }
            }
            if c.i == c.j {
                return Err(ValidateError::SelfLoop(c.i));
            }
            let (a, b) = if c.i < c.j { (c.i, c.j) } else { (c.j, c.i) };
            if !seen.insert((a, b)) {
                return Err(ValidateError::DuplicatePair(a, b));
            }
            let (da, db) = (raw.domains[c.i], raw.domains[c.j]);
            if c.table.len() != da || c.table.iter().any(|row| row.len() != db) {
                return Err(ValidateError::TableShape {
                    i: c.i,
                    j: c.j,
                    rows: c.table.len(),
                    cols: c.table.first().map_or(0, |r| r.len()),
                    want_rows: da,
                    want_cols: db,
                });
            }
            // Normalize orientation to a < b.
            let dom_b = raw.domains[b];
            let mut costs = vec![0; raw.domains[a] * dom_b];
            for (vi, row) in c.table.iter().enumerate() {
                for (vj, &cost) in row.iter().enumerate() {
                    if cost < 0 {
                        return Err(ValidateError::NegativeCost { i: c.i, j: c.j, cost });
                    }
                    let (va, vb) = if c.i < c.j { (vi, vj) } else { (vj, vi) };
                    costs[va * dom_b + vb] = cost;
                }
            }
            let idx = tables.len();
            tables.push(CostTable { a, b, costs, dom_b });
            adj[a].push((b, idx));
            adj[b].push((a, idx));
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|&(nbr, _)| nbr);
        }

        // Connectivity by BFS from agent 0.
        let mut reached = vec![false; n];
        reached[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adj[u] {
                if !reached[v] {
                    reached[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if let Some(a) = reached.iter().position(|&r| !r) {
            return Err(ValidateError::Disconnected(a));
        }

        Ok(DcopInstance {
            domains: raw.domains,
            tables,
            adj,
            global_cap: raw.global_cap,
            meta: raw.meta,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.domains.len()
    }

    pub fn domain_size(&self, agent: AgentId) -> usize {
        self.domains[agent]
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn edge_count(&self) -> usize {
        self.tables.len()
    }

    pub fn tables(&self) -> &[CostTable] {
        &self.tables
    }

    pub fn global_cap(&self) -> Option<GlobalCap> {
        self.global_cap
    }

    pub fn meta(&self) -> Option<&serde_json::Value> {
        self.meta.as_ref()
    }

    /// Constraint-graph neighbors of `agent`, ascending by id.
    pub fn neighbors(&self, agent: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.adj[agent].iter().map(|&(nbr, _)| nbr)
    }

    pub fn degree(&self, agent: AgentId) -> usize {
        self.adj[agent].len()
    }

    /// Aggregated cost of a complete assignment: every binary table counted
    /// exactly once, plus the global cap penalty when present.
    pub fn evaluate_global_cost(&self, values: &[Value]) -> Cost {
        debug_assert_eq!(values.len(), self.agent_count());
        let table_sum: Cost = self
            .tables
            .iter()
            .map(|t| t.cost(values[t.a], values[t.b]))
            .sum();
        table_sum + self.cap_penalty_of(values)
    }

    /// Penalty term of the global cap for a complete assignment (0 without a cap).
    pub fn cap_penalty_of(&self, values: &[Value]) -> Cost {
        match self.global_cap {
            None => 0,
            Some(cap) => {
                let hist = self.value_histogram(values);
                cap_penalty(&hist, cap)
            }
        }
    }

    /// Count of agents per value over a complete assignment.
    pub fn value_histogram(&self, values: &[Value]) -> Vec<u32> {
        let width = self.domains.iter().copied().max().unwrap_or(0);
        let mut hist = vec![0u32; width];
        for &v in values {
            hist[v] += 1;
        }
        hist
    }

    /// Sum of the agent's incident binary table entries under the given
    /// values. `neighbor_values` is positional, aligned with
    /// [`Self::neighbors`] order.
    pub fn local_cost(&self, agent: AgentId, value: Value, neighbor_values: &[Value]) -> Cost {
        debug_assert_eq!(neighbor_values.len(), self.adj[agent].len());
        self.adj[agent]
            .iter()
            .zip(neighbor_values)
            .map(|(&(_, t), &nv)| self.tables[t].cost_from(agent, value, nv))
            .sum()
    }

    /// `local_cost(new) - local_cost(old)`. When a global cap is active and
    /// the caller supplies the full value histogram (which must include the
    /// agent at `old_value`), the penalty delta of the change is included.
    pub fn delta_local_cost(
        &self,
        agent: AgentId,
        old_value: Value,
        new_value: Value,
        neighbor_values: &[Value],
        histogram: Option<&[u32]>,
    ) -> Cost {
        if old_value == new_value {
            return 0;
        }
        let table_delta = self.local_cost(agent, new_value, neighbor_values)
            - self.local_cost(agent, old_value, neighbor_values);
        let penalty_delta = match (self.global_cap, histogram) {
            (Some(cap), Some(hist)) => cap_move_penalty_delta(hist, cap, old_value, new_value),
            _ => 0,
        };
        table_delta + penalty_delta
    }

    /// Exact global minimum by exhaustive enumeration, ties broken by
    /// lexicographic assignment order. Rejects search spaces above `bound`
    /// (default [`BRUTE_FORCE_BOUND`] when `None`).
    pub fn brute_force_optimum(
        &self,
        bound: Option<u128>,
    ) -> Result<(Vec<Value>, Cost), InstanceTooLarge> {
        let bound = bound.unwrap_or(BRUTE_FORCE_BOUND);
        let mut size: u128 = 1;
        for &d in &self.domains {
            size = size.saturating_mul(d as u128);
            if size > bound {
                return Err(InstanceTooLarge { size, bound });
            }
        }
        let n = self.agent_count();
        let mut values = vec![0usize; n];
        let mut best = (values.clone(), self.evaluate_global_cost(&values));
        // Odometer with the last agent fastest: lexicographic ascending order,
        // so strict improvement keeps the lexicographically smallest optimum.
        loop {
            let mut pos = n;
            while pos > 0 {
                pos -= 1;
                values[pos] += 1;
                if values[pos] < self.domains[pos] {
                    break;
                }
                values[pos] = 0;
                if pos == 0 {
                    return Ok(best);
                }
            }
            let cost = self.evaluate_global_cost(&values);
            if cost < best.1 {
                best = (values.clone(), cost);
            }
        }
    }

    /// Local read-only view for one agent: incident tables only.
    pub fn agent_view(&self, agent: AgentId) -> AgentView {
        let neighbors: Vec<AgentId> = self.neighbors(agent).collect();
        let tables = self.adj[agent]
            .iter()
            .map(|&(nbr, t)| {
                let table = &self.tables[t];
                let nd = self.domains[nbr];
                let od = self.domains[agent];
                let mut costs = vec![0; od * nd];
                for own in 0..od {
                    for theirs in 0..nd {
                        costs[own * nd + theirs] = table.cost_from(agent, own, theirs);
                    }
                }
                costs
            })
            .collect();
        AgentView {
            agent,
            n_agents: self.agent_count(),
            domain_size: self.domains[agent],
            neighbors,
            neighbor_domains: self.adj[agent]
                .iter()
                .map(|&(nbr, _)| self.domains[nbr])
                .collect(),
            tables,
            global_cap: self.global_cap,
        }
    }

    pub fn to_raw(&self) -> RawInstance {
        RawInstance {
            agents: self.agent_count(),
            domains: self.domains.clone(),
            constraints: self
                .tables
                .iter()
                .map(|t| RawConstraint {
                    i: t.a,
                    j: t.b,
                    table: (0..self.domains[t.a])
                        .map(|va| (0..self.domains[t.b]).map(|vb| t.cost(va, vb)).collect())
                        .collect(),
                })
                .collect(),
            global_cap: self.global_cap,
            meta: self.meta.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("instance serialization")
    }

    pub fn from_json(s: &str) -> anyhow::Result<Self> {
        let raw: RawInstance = serde_json::from_str(s)?;
        Ok(Self::validate(raw)?)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Default cap on brute-force search-space size.
pub const BRUTE_FORCE_BOUND: u128 = 10_000_000;

/// Penalty of a value histogram under a cap constraint.
pub fn cap_penalty(histogram: &[u32], cap: GlobalCap) -> Cost {
    histogram
        .iter()
        .map(|&c| cap.penalty * Cost::from(c.saturating_sub(cap.cap)))
        .sum()
}

/// Penalty change when one agent moves from `old_value` to `new_value`,
/// given the histogram before the move (self counted at `old_value`).
pub fn cap_move_penalty_delta(
    histogram: &[u32],
    cap: GlobalCap,
    old_value: Value,
    new_value: Value,
) -> Cost {
    if old_value == new_value {
        return 0;
    }
    debug_assert!(histogram[old_value] > 0, "histogram must include the mover");
    let over = |c: u32| Cost::from(c.saturating_sub(cap.cap));
    let gain = over(histogram[new_value] + 1) - over(histogram[new_value]);
    let drop = over(histogram[old_value] - 1) - over(histogram[old_value]);
    cap.penalty * (gain + drop)
}

/// One agent's isolated view of the problem: own domain, neighbor list and
/// incident tables oriented as `costs[own * |D_nbr| + theirs]`. This is all
/// an agent state machine ever sees of the instance.
#[derive(Debug, Clone)]
pub struct AgentView {
    pub agent: AgentId,
    pub n_agents: usize,
    pub domain_size: usize,
    pub neighbors: Vec<AgentId>,
    pub neighbor_domains: Vec<usize>,
    tables: Vec<Vec<Cost>>,
    pub global_cap: Option<GlobalCap>,
}

impl AgentView {
    #[inline]
    pub fn edge_cost(&self, neighbor_idx: usize, own: Value, theirs: Value) -> Cost {
        self.tables[neighbor_idx][own * self.neighbor_domains[neighbor_idx] + theirs]
    }

    /// Sum of incident edge costs, `neighbor_values` positional over
    /// `self.neighbors`.
    pub fn local_cost(&self, own: Value, neighbor_values: &[Value]) -> Cost {
        debug_assert_eq!(neighbor_values.len(), self.neighbors.len());
        neighbor_values
            .iter()
            .enumerate()
            .map(|(j, &nv)| self.edge_cost(j, own, nv))
            .sum()
    }

    pub fn delta_local_cost(&self, old: Value, new: Value, neighbor_values: &[Value]) -> Cost {
        if old == new {
            0
        } else {
            self.local_cost(new, neighbor_values) - self.local_cost(old, neighbor_values)
        }
    }

    /// Value minimizing the local cost, lowest index on ties.
    pub fn best_response(&self, neighbor_values: &[Value]) -> Value {
        (0..self.domain_size)
            .min_by_key(|&v| self.local_cost(v, neighbor_values))
            .expect("non-empty domain")
    }

    pub fn neighbor_index(&self, neighbor: AgentId) -> Option<usize> {
        self.neighbors.binary_search(&neighbor).ok()
    }
}
