//! Shared fixtures for unit tests.

use crate::model::{DcopInstance, GlobalCap, RawConstraint, RawInstance, Value};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// The four-agent instance used by the worked examples: agents a1..a4 map to
/// ids 0..3, domain values {1,2} map to {0,1}.
pub(crate) fn fig1_raw() -> RawInstance {
    RawInstance {
        agents: 4,
        domains: vec![2, 2, 2, 2],
        constraints: vec![
            RawConstraint { i: 0, j: 1, table: vec![vec![7, 12], vec![3, 15]] },
            RawConstraint { i: 1, j: 2, table: vec![vec![2, 7], vec![11, 18]] },
            RawConstraint { i: 1, j: 3, table: vec![vec![8, 4], vec![15, 6]] },
            RawConstraint { i: 0, j: 2, table: vec![vec![9, 13], vec![12, 5]] },
        ],
        global_cap: None,
        meta: None,
    }
}

pub(crate) fn fig1() -> DcopInstance {
    DcopInstance::validate(fig1_raw()).unwrap()
}

pub(crate) fn fig1_capped(cap: u32, penalty: i64) -> DcopInstance {
    let mut raw = fig1_raw();
    raw.global_cap = Some(GlobalCap { cap, penalty });
    DcopInstance::validate(raw).unwrap()
}

/// Small connected random instance for property tests; densities and costs
/// chosen to keep brute force instant.
pub(crate) fn small_random_instance(
    seed: u64,
    max_agents: usize,
    max_domain: usize,
    with_cap: bool,
) -> DcopInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_agents.max(2));
    let domains: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_domain)).collect();
    let mut constraints = Vec::new();
    // Random spanning tree keeps the graph connected, then extra edges.
    for j in 1..n {
        let i = rng.random_range(0..j);
        constraints.push((i, j));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !constraints.contains(&(i, j)) && rng.random_bool(0.3) {
                constraints.push((i, j));
            }
        }
    }
    let constraints = constraints
        .into_iter()
        .map(|(i, j)| RawConstraint {
            i,
            j,
            table: (0..domains[i])
                .map(|_| (0..domains[j]).map(|_| rng.random_range(0..100)).collect())
                .collect(),
        })
        .collect();
    let global_cap = if with_cap && rng.random_bool(0.5) {
        Some(GlobalCap { cap: rng.random_range(1..=2), penalty: 500 })
    } else {
        None
    };
    DcopInstance::validate(RawInstance {
        agents: n,
        domains,
        constraints,
        global_cap,
        meta: None,
    })
    .unwrap()
}

pub(crate) fn random_assignment(inst: &DcopInstance, seed: u64) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..inst.agent_count())
        .map(|a| rng.random_range(0..inst.domain_size(a)))
        .collect()
}
