//! Progressive-edge-growth construction of sparse parity-check matrices.
//!
//! Columns are filled one by one. Each new edge runs a breadth-first search
//! over the current bipartite graph from the column being wired: checks the
//! search never reaches are preferred outright, otherwise the checks at
//! maximal distance, so every edge closes the longest cycle available. Ties
//! go to the check with the smallest current degree, then to a seeded random
//! pick, which keeps rows quasi-regular and construction deterministic.

use crate::rng::{SlotRng, StreamKind};
use crate::types::RngSeed;
use std::collections::VecDeque;

/// Builds an m x n parity-check matrix with uniform column degree
/// `col_degree`. Returns the rows (sorted column indices) and the number of
/// edges that had to close a 4-cycle because nothing longer was available
/// (zero for every shipped geometry).
pub fn build_parity_rows(
    n: usize,
    m: usize,
    col_degree: usize,
    seed: u64,
) -> (Vec<Vec<u32>>, usize) {
    assert!(m >= col_degree, "need at least {} checks", col_degree);
    let mut rng = SlotRng::for_index(RngSeed(seed), StreamKind::CodeConstruct, 0);
    let mut check_adj: Vec<Vec<u32>> = vec![Vec::new(); m];
    let mut var_adj: Vec<Vec<u32>> = vec![Vec::new(); n];

    // BFS scratch, stamped by generation to skip clearing
    let mut check_mark = vec![0u32; m];
    let mut var_mark = vec![0u32; n];
    let mut generation = 0u32;
    let mut queue: VecDeque<u32> = VecDeque::new();
    let mut frontier_checks: Vec<u32> = Vec::new();
    let mut forced_short_cycles = 0usize;

    for v in 0..n {
        for _edge in 0..col_degree {
            generation += 1;
            let candidates: Vec<u32> = if var_adj[v].is_empty() {
                (0..m as u32).collect()
            } else {
                // BFS from v; levels alternate variable / check. A check
                // first seen at distance d closes a (d + 1)-cycle if wired
                // to v, so unreached checks are ideal and the deepest level
                // is the best fallback.
                queue.clear();
                queue.push_back(v as u32);
                var_mark[v] = generation;
                let mut reached = 0usize;
                let mut last_checks: Vec<u32> = Vec::new();
                let mut last_distance = 0usize;
                let mut distance = 1usize;
                loop {
                    frontier_checks.clear();
                    // expand variables -> checks
                    while let Some(u) = queue.pop_front() {
                        for &c in &var_adj[u as usize] {
                            if check_mark[c as usize] != generation {
                                check_mark[c as usize] = generation;
                                frontier_checks.push(c);
                            }
                        }
                    }
                    if frontier_checks.is_empty() {
                        break;
                    }
                    reached += frontier_checks.len();
                    last_checks.clone_from(&frontier_checks);
                    last_distance = distance;
                    // expand checks -> variables
                    for &c in &frontier_checks {
                        for &u in &check_adj[c as usize] {
                            if var_mark[u as usize] != generation {
                                var_mark[u as usize] = generation;
                                queue.push_back(u);
                            }
                        }
                    }
                    if queue.is_empty() {
                        break;
                    }
                    distance += 2;
                }
                if reached < m {
                    // prefer checks the graph cannot reach at all
                    (0..m as u32).filter(|&c| check_mark[c as usize] != generation).collect()
                } else {
                    // distance 1 cannot happen here: it would mean v is
                    // already wired to every check, so no edge is missing
                    if last_distance == 3 {
                        forced_short_cycles += 1;
                    }
                    last_checks.sort_unstable();
                    last_checks
                }
            };

            let min_deg =
                candidates.iter().map(|&c| check_adj[c as usize].len()).min().expect("candidates");
            let lightest: Vec<u32> = candidates
                .iter()
                .copied()
                .filter(|&c| check_adj[c as usize].len() == min_deg)
                .collect();
            let pick = lightest[(rng.next_u64() % lightest.len() as u64) as usize];
            check_adj[pick as usize].push(v as u32);
            var_adj[v].push(pick);
        }
    }

    for row in &mut check_adj {
        row.sort_unstable();
    }
    (check_adj, forced_short_cycles)
}
