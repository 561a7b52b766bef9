//! Exact solver for the balanced transportation problem on a dense bipartite
//! graph, via successive shortest paths with Dijkstra and node potentials.
//!
//! Marginals `1/na` and `1/nb` are scaled to integer supplies (`nb` units per
//! source, `na` units per sink, `na*nb` total), so flows are exact integers
//! and the returned plan is exactly feasible.

/// Optimal transportation plan with LP dual certificates.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    /// Optimal objective in probability-mass scale: `sum plan[i][j] * c[i][j]`.
    pub cost: f64,
    /// Row-major `na x nb` plan in probability masses (rows sum to `1/na`).
    pub plan: Vec<f64>,
    /// Row-major integer flows in the scaled problem (rows sum to `nb`).
    pub flows: Vec<i64>,
    pub na: usize,
    pub nb: usize,
    /// Duals `mu_i` for the supply rows: `mu_i + lambda_j <= c_ij` with
    /// equality on the support of the plan.
    pub supply_duals: Vec<f64>,
    /// Duals `lambda_j` for the demand rows.
    pub demand_duals: Vec<f64>,
}

impl TransportSolution {
    pub fn plan_at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.nb + j]
    }

    pub fn flow_at(&self, i: usize, j: usize) -> i64 {
        self.flows[i * self.nb + j]
    }

    /// Dual objective `(1/na) sum mu + (1/nb) sum lambda`; equals `cost` at
    /// optimality up to rounding.
    pub fn dual_objective(&self) -> f64 {
        self.supply_duals.iter().sum::<f64>() / self.na as f64
            + self.demand_duals.iter().sum::<f64>() / self.nb as f64
    }

    /// True when the nonzero entries form a monotone staircase: no pair of
    /// support cells `(i, j)`, `(i', j')` with `i < i'` and `j > j'`.
    pub fn is_comonotone(&self) -> bool {
        let mut support: Vec<(usize, usize)> = Vec::new();
        for i in 0..self.na {
            for j in 0..self.nb {
                if self.flow_at(i, j) > 0 {
                    support.push((i, j));
                }
            }
        }
        for (k, &(i, j)) in support.iter().enumerate() {
            for &(i2, j2) in &support[k + 1..] {
                if i2 > i && j2 < j {
                    return false;
                }
            }
        }
        true
    }
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
    flow: i64,
}

struct Graph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Graph { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost, flow: 0 });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0, cost: -cost, flow: 0 });
    }
}

/// Solves the scaled transportation problem for a row-major `na x nb`
/// nonnegative cost matrix.
pub fn solve_transport(cost: &[f64], na: usize, nb: usize) -> TransportSolution {
    assert_eq!(cost.len(), na * nb);
    let n = na + nb + 2;
    let source = na + nb;
    let sink = na + nb + 1;
    let mut g = Graph::new(n);

    // Edge ids are deterministic: source arcs, then the bipartite arcs in
    // row-major order, then sink arcs.
    for i in 0..na {
        g.add_edge(source, i, nb as i64, 0.0);
    }
    // Bipartite arcs carry no cap of their own (supply and demand arcs
    // already bound the flow); keeping them unsaturated preserves the
    // forward residual arc, which is what makes the final potentials a
    // feasible dual for the transportation LP.
    let inner_cap = (na * nb) as i64;
    let mut cell_edge = vec![0usize; na * nb];
    for i in 0..na {
        for j in 0..nb {
            cell_edge[i * nb + j] = g.edges.len();
            g.add_edge(i, na + j, inner_cap, cost[i * nb + j]);
        }
    }
    for j in 0..nb {
        g.add_edge(na + j, sink, na as i64, 0.0);
    }

    let mut potential = vec![0.0f64; n];
    let mut remaining = (na * nb) as i64;
    while remaining > 0 {
        // Dijkstra on reduced costs from the current potentials.
        let mut dist = vec![f64::INFINITY; n];
        let mut prev_edge = vec![usize::MAX; n];
        let mut done = vec![false; n];
        dist[source] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            for &eid in &g.adj[u] {
                let e = &g.edges[eid];
                if e.cap - e.flow <= 0 {
                    continue;
                }
                let rc = (e.cost + potential[u] - potential[e.to]).max(0.0);
                if dist[u] + rc < dist[e.to] - 1e-15 {
                    dist[e.to] = dist[u] + rc;
                    prev_edge[e.to] = eid;
                }
            }
        }
        assert!(dist[sink].is_finite(), "transportation problem must stay feasible");
        for v in 0..n {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        // Bottleneck along the shortest path.
        let mut push = remaining;
        let mut v = sink;
        while v != source {
            let e = &g.edges[prev_edge[v]];
            push = push.min(e.cap - e.flow);
            v = g.edges[prev_edge[v] ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let eid = prev_edge[v];
            g.edges[eid].flow += push;
            g.edges[eid ^ 1].flow -= push;
            v = g.edges[eid ^ 1].to;
        }
        remaining -= push;
    }

    let scale = (na * nb) as f64;
    let mut flows = vec![0i64; na * nb];
    let mut plan = vec![0.0f64; na * nb];
    let mut total = 0.0f64;
    for idx in 0..na * nb {
        let f = g.edges[cell_edge[idx]].flow;
        flows[idx] = f;
        plan[idx] = f as f64 / scale;
        total += plan[idx] * cost[idx];
    }
    // Duals from the final potentials: support arcs have zero reduced cost,
    // so c_ij = p(j) - p(i) there, and unsaturated forward arcs give
    // c_ij >= p(j) - p(i) everywhere.
    let supply_duals: Vec<f64> = (0..na).map(|i| -potential[i]).collect();
    let demand_duals: Vec<f64> = (0..nb).map(|j| potential[na + j]).collect();
    TransportSolution { cost: total, plan, flows, na, nb, supply_duals, demand_duals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_identity_pairing() {
        // |0-0|, |0-2|, |1-0|, |1-2| with q = 1.
        let cost = vec![0.0, 2.0, 1.0, 1.0];
        let sol = solve_transport(&cost, 2, 2);
        assert!((sol.cost - 0.5).abs() < 1e-12);
        assert_eq!(sol.flow_at(0, 0), 2);
        assert_eq!(sol.flow_at(1, 1), 2);
        assert!((sol.cost - sol.dual_objective()).abs() < 1e-9);
    }

    #[test]
    fn unbalanced_sizes_split_mass() {
        // {0, 10} vs {5}: both atoms ship to 5.
        let cost = vec![5.0, 5.0];
        let sol = solve_transport(&cost, 2, 1);
        assert!((sol.cost - 5.0).abs() < 1e-12);
        assert_eq!(sol.flow_at(0, 0), 1);
        assert_eq!(sol.flow_at(1, 0), 1);
    }

    #[test]
    fn dual_feasibility_holds() {
        let cost = vec![0.3, 1.7, 0.2, 0.9, 0.4, 1.1];
        let sol = solve_transport(&cost, 2, 3);
        for i in 0..2 {
            for j in 0..3 {
                let slack = cost[i * 3 + j] - sol.supply_duals[i] - sol.demand_duals[j];
                assert!(slack >= -1e-9, "dual infeasible at ({i},{j}): {slack}");
                if sol.flow_at(i, j) > 0 {
                    assert!(slack.abs() < 1e-9);
                }
            }
        }
    }
}
