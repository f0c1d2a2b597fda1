//! Balanced transport between two uniform discrete measures.
//!
//! The exact solver scales the marginals `1/m` and `1/n` to integers by
//! `L = lcm(m, n)` (row supply `L/m`, column demand `L/n`) and solves the
//! resulting transportation problem as a min-cost flow with successive
//! shortest paths. Integral marginals make every vertex of the transport
//! polytope integral, so the integer optimum is the LP optimum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// Fractional assignment between the elements of two layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols` masses.
    pub mass: Vec<f64>,
    /// Total transported cost `sum(mass * cost)`.
    pub cost: f64,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mass.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.get(i, j)).sum()).collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Copy)]
struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    /// Adds `u -> v` and its residual twin; returns the forward edge id.
    fn link(&mut self, u: usize, v: usize, cap: i64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to: v, cap, cost });
        self.edges.push(Edge { to: u, cap: 0, cost: -cost });
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }
}

#[derive(PartialEq)]
struct Visit(f64, usize);

impl Eq for Visit {}

impl Ord for Visit {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Visit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Push `demand` units from `source` to `sink` at minimum cost.
/// Costs must be non-negative so zero potentials start feasible.
fn min_cost_flow(graph: &mut FlowGraph, source: usize, sink: usize, demand: i64) {
    let n = graph.adj.len();
    let mut potential = vec![0.0_f64; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut remaining = demand;
    while remaining > 0 {
        dist.fill(f64::INFINITY);
        parent.fill(usize::MAX);
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Visit(0.0, source));
        while let Some(Visit(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &graph.adj[u] {
                let edge = graph.edges[e];
                if edge.cap <= 0 {
                    continue;
                }
                // rounding can push a reduced cost a hair below zero
                let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    parent[edge.to] = e;
                    heap.push(Visit(nd, edge.to));
                }
            }
        }
        assert!(dist[sink].is_finite(), "transportation problem is always feasible");
        for v in 0..n {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut push = remaining;
        let mut v = sink;
        while v != source {
            let e = parent[v];
            push = push.min(graph.edges[e].cap);
            v = graph.edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = parent[v];
            graph.edges[e].cap -= push;
            graph.edges[e ^ 1].cap += push;
            v = graph.edges[e ^ 1].to;
        }
        remaining -= push;
    }
}

/// Exact optimal plan for uniform marginals `1/rows`, `1/cols`.
///
/// `cost` is row-major `rows x cols` with non-negative entries.
pub fn solve_exact(cost: &[f64], rows: usize, cols: usize) -> TransportPlan {
    assert!(rows > 0 && cols > 0 && cost.len() == rows * cols);
    let total = rows / gcd(rows, cols) * cols;
    let (supply, demand) = ((total / rows) as i64, (total / cols) as i64);

    let source = rows + cols;
    let sink = source + 1;
    let mut graph = FlowGraph::new(rows + cols + 2);
    for i in 0..rows {
        graph.link(source, i, supply, 0.0);
    }
    for j in 0..cols {
        graph.link(rows + j, sink, demand, 0.0);
    }
    let mut arcs = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            arcs.push(graph.link(i, rows + j, total as i64, cost[i * cols + j]));
        }
    }
    min_cost_flow(&mut graph, source, sink, total as i64);

    let scale = total as f64;
    let mass: Vec<f64> = arcs.iter().map(|&e| graph.edges[e ^ 1].cap as f64 / scale).collect();
    let plan_cost = mass.iter().zip(cost).map(|(g, c)| g * c).sum();
    TransportPlan { rows, cols, mass, cost: plan_cost }
}

/// Entropic approximation (log-domain Sinkhorn iterations).
///
/// Column marginals are met exactly after each sweep; row marginals to
/// within `tolerance` once converged. The reported cost is the transport
/// cost of the entropic plan, which overestimates the exact optimum.
pub fn solve_sinkhorn(
    cost: &[f64],
    rows: usize,
    cols: usize,
    epsilon: f64,
    max_iter: usize,
    tolerance: f64,
) -> TransportPlan {
    assert!(rows > 0 && cols > 0 && cost.len() == rows * cols && epsilon > 0.0);
    let log_a = -(rows as f64).ln();
    let log_b = -(cols as f64).ln();
    let mut f = vec![0.0_f64; rows];
    let mut g = vec![0.0_f64; cols];

    let lse = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let vals: Vec<f64> = vals.collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    };

    for _ in 0..max_iter {
        for i in 0..rows {
            f[i] = epsilon * (log_a - lse(&mut (0..cols).map(|j| (g[j] - cost[i * cols + j]) / epsilon)));
        }
        for j in 0..cols {
            g[j] = epsilon * (log_b - lse(&mut (0..rows).map(|i| (f[i] - cost[i * cols + j]) / epsilon)));
        }
        let row_err = (0..rows)
            .map(|i| {
                let s: f64 = (0..cols).map(|j| ((f[i] + g[j] - cost[i * cols + j]) / epsilon).exp()).sum();
                (s - 1.0 / rows as f64).abs()
            })
            .fold(0.0, f64::max);
        if row_err < tolerance {
            break;
        }
    }
    let mass: Vec<f64> = (0..rows * cols)
        .map(|k| ((f[k / cols] + g[k % cols] - cost[k]) / epsilon).exp())
        .collect();
    let plan_cost = mass.iter().zip(cost).map(|(m, c)| m * c).sum();
    TransportPlan { rows, cols, mass, cost: plan_cost }
}
