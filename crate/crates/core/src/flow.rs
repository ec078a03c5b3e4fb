//! Exact max-flow / min-cut over rational capacities (Edmonds-Karp).

use crate::rat::Rat;
use num_traits::{Signed, Zero};
use std::collections::VecDeque;

/// Directed capacitated graph over nodes `0..n`. Parallel edges are merged.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    pub n: usize,
    cap: Vec<Vec<Rat>>,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        FlowGraph { n, cap: vec![vec![Rat::zero(); n]; n] }
    }

    pub fn add_edge(&mut self, u: usize, v: usize, c: Rat) {
        assert!(!c.is_negative(), "negative capacity");
        assert!(u != v, "self loop");
        self.cap[u][v] += c;
    }

    pub fn capacity(&self, u: usize, v: usize) -> &Rat {
        &self.cap[u][v]
    }
}

#[derive(Debug, Clone)]
pub struct MaxFlowResult {
    pub value: Rat,
    /// flow[u][v], antisymmetric pairs already resolved (only forward positive).
    pub flow: Vec<Vec<Rat>>,
    /// Source-side node set of a minimum cut.
    pub cut: Vec<usize>,
}

/// Exact Edmonds-Karp. Panics if `source == sink`.
pub fn max_flow_min_cut(g: &FlowGraph, source: usize, sink: usize) -> MaxFlowResult {
    assert!(source != sink, "source equals sink");
    let n = g.n;
    let mut res = g.cap.clone(); // residual capacities
    let mut value = Rat::zero();
    loop {
        // BFS shortest augmenting path; neighbors scanned in index order for determinism
        let mut parent: Vec<Option<usize>> = vec![None; n];
        parent[source] = Some(source);
        let mut q = VecDeque::new();
        q.push_back(source);
        while let Some(u) = q.pop_front() {
            for v in 0..n {
                if parent[v].is_none() && res[u][v].is_positive() {
                    parent[v] = Some(u);
                    q.push_back(v);
                }
            }
        }
        if parent[sink].is_none() {
            break;
        }
        // bottleneck
        let mut bottleneck: Option<Rat> = None;
        let mut v = sink;
        while v != source {
            let u = parent[v].unwrap();
            let c = &res[u][v];
            bottleneck = Some(match bottleneck {
                None => c.clone(),
                Some(b) => {
                    if *c < b {
                        c.clone()
                    } else {
                        b
                    }
                }
            });
            v = u;
        }
        let b = bottleneck.unwrap();
        let mut v = sink;
        while v != source {
            let u = parent[v].unwrap();
            res[u][v] -= &b;
            res[v][u] += &b;
            v = u;
        }
        value += &b;
    }
    // min cut: residual-reachable set from source
    let mut seen = vec![false; n];
    seen[source] = true;
    let mut q = VecDeque::new();
    q.push_back(source);
    while let Some(u) = q.pop_front() {
        for v in 0..n {
            if !seen[v] && res[u][v].is_positive() {
                seen[v] = true;
                q.push_back(v);
            }
        }
    }
    let cut: Vec<usize> = (0..n).filter(|&v| seen[v]).collect();
    // recover net flow: cap - residual, clipped to forward direction
    let mut flow = vec![vec![Rat::zero(); n]; n];
    for u in 0..n {
        for v in 0..n {
            let f = &g.cap[u][v] - &res[u][v];
            if f.is_positive() {
                flow[u][v] = f;
            }
        }
    }
    MaxFlowResult { value, flow, cut }
}

/// Capacity of the cut (S, V\S) in g.
pub fn cut_capacity(g: &FlowGraph, s_side: &[bool]) -> Rat {
    let mut total = Rat::zero();
    for u in 0..g.n {
        for v in 0..g.n {
            if s_side[u] && !s_side[v] {
                total += &g.cap[u][v];
            }
        }
    }
    total
}
