//! Max-bottleneck (widest-path) routing on directed graphs.
//!
//! The problem is solved twice, deliberately: once by reducing the graph to a
//! tabular MDP (one state per node, one action per outgoing edge, reward =
//! edge rate, sink terminal) and running generalized value iteration with the
//! `min` backup, and once with a Dijkstra-style label-setting oracle
//! ([`widest_path_oracle`]). The two routes must agree on the bottleneck
//! value; the test suite also checks both against brute-force path
//! enumeration on random DAGs.
//!
//! # Text format
//!
//! ```text
//! # comment
//! source s sink t
//! d t 5
//! c t 3
//! ```
//!
//! One header line `source X sink Y`, then one `u v rate` line per edge.
//! Nodes are named by their first appearance; edge order is preserved and
//! fixes the column order of iteration-trace exports.

use rand::Rng;

use crate::config::{child_seed_idx, rng_from_seed};
use crate::dp::{solve_fixed_point, SolveOptions, SolveResult};
use crate::mdp::{greedy_policy, Kernel, TabularMdp};
use crate::op::GeneralizedOperator;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// A directed graph with a designated source and sink and rate-labelled
/// edges. Self-loops, parallel edges, and negative rates are rejected; the
/// sink must be reachable from the source.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    names: Vec<String>,
    source: usize,
    sink: usize,
    edges: Vec<Edge>,
    out: Vec<Vec<usize>>, // node -> edge ids in insertion order
}

impl FlowGraph {
    pub fn new(source: impl Into<String>, sink: impl Into<String>) -> Self {
        let mut g = FlowGraph {
            names: Vec::new(),
            source: 0,
            sink: 0,
            edges: Vec::new(),
            out: Vec::new(),
        };
        g.source = g.intern(&source.into());
        g.sink = g.intern(&sink.into());
        g
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return i;
        }
        self.names.push(name.to_string());
        self.out.push(Vec::new());
        self.names.len() - 1
    }

    /// Add a node without edges (useful in tests; such a node makes
    /// [`FlowGraph::as_mdp`] fail, as it can never reach the sink).
    pub fn add_node(&mut self, name: &str) -> usize {
        self.intern(name)
    }

    pub fn add_edge(&mut self, from: &str, to: &str, rate: f64) -> Result<()> {
        if from == to {
            return Err(Error::InvalidInput(format!("self-loop on `{from}`")));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "edge {from}->{to} has bad rate {rate}"
            )));
        }
        let (u, v) = (self.intern(from), self.intern(to));
        if self.edges.iter().any(|e| e.from == u && e.to == v) {
            return Err(Error::InvalidInput(format!("duplicate edge {from}->{to}")));
        }
        self.edges.push(Edge {
            from: u,
            to: v,
            rate,
        });
        self.out[u].push(self.edges.len() - 1);
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn node_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.out[node].iter().map(move |&i| (i, &self.edges[i]))
    }

    /// Reachability along edge direction from `from`.
    fn reachable_from(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_nodes()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for &ei in &self.out[u] {
                let v = self.edges[ei].to;
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Nodes that can reach `to`.
    fn coreachable(&self, to: usize) -> Vec<bool> {
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); self.n_nodes()];
        for e in &self.edges {
            incoming[e.to].push(e.from);
        }
        let mut seen = vec![false; self.n_nodes()];
        let mut stack = vec![to];
        seen[to] = true;
        while let Some(u) = stack.pop() {
            for &v in &incoming[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == self.sink {
            return Err(Error::InvalidInput("source equals sink".into()));
        }
        if !self.reachable_from(self.source)[self.sink] {
            return Err(Error::InvalidInput(
                "sink is not reachable from the source".into(),
            ));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut g: Option<FlowGraph> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tok: Vec<&str> = content.split_whitespace().collect();
            match g {
                None => {
                    if tok.len() != 4 || tok[0] != "source" || tok[2] != "sink" {
                        return Err(Error::Parse {
                            line,
                            msg: "expected header `source X sink Y`".into(),
                        });
                    }
                    g = Some(FlowGraph::new(tok[1], tok[3]));
                }
                Some(ref mut g) => {
                    if tok.len() != 3 {
                        return Err(Error::Parse {
                            line,
                            msg: format!("expected `u v rate`, got `{content}`"),
                        });
                    }
                    let rate: f64 = tok[2].parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad rate `{}`", tok[2]),
                    })?;
                    g.add_edge(tok[0], tok[1], rate).map_err(|e| Error::Parse {
                        line,
                        msg: e.to_string(),
                    })?;
                }
            }
        }
        let g = g.ok_or(Error::Parse {
            line: 0,
            msg: "missing header line".into(),
        })?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "source {} sink {}\n",
            self.names[self.source], self.names[self.sink]
        );
        for e in &self.edges {
            out.push_str(&format!(
                "{} {} {}\n",
                self.names[e.from], self.names[e.to], e.rate
            ));
        }
        out
    }

    /// Reduce to a tabular MDP: one state per node, the sink terminal, one
    /// action per outgoing edge (in insertion order), deterministic
    /// transition along the edge with the rate as reward.
    ///
    /// Fails if any node cannot reach the sink: such a node would be a
    /// non-terminal state from which no episode can end (isolated nodes are
    /// the simplest case).
    pub fn as_mdp(&self) -> Result<GraphMdp> {
        self.validate()?;
        let co = self.coreachable(self.sink);
        if let Some(bad) = (0..self.n_nodes()).find(|&v| !co[v]) {
            return Err(Error::InvalidInput(format!(
                "node `{}` cannot reach the sink",
                self.names[bad]
            )));
        }
        let n_actions = self.out.iter().map(Vec::len).max().unwrap_or(0);
        let mut mdp = TabularMdp::new(self.n_nodes(), n_actions);
        mdp.set_terminal(self.sink);
        let mut edge_sa = vec![(0usize, 0usize); self.edges.len()];
        for u in 0..self.n_nodes() {
            for (a, &ei) in self.out[u].iter().enumerate() {
                let e = self.edges[ei];
                mdp.set_kernel(u, a, Kernel::deterministic(e.to, e.rate));
                edge_sa[ei] = (u, a);
            }
        }
        let labels = self
            .edges
            .iter()
            .map(|e| format!("Q_{{{}->{}}}", self.names[e.from], self.names[e.to]))
            .collect();
        Ok(GraphMdp {
            mdp,
            edge_sa,
            labels,
        })
    }
}

/// The MDP reduction plus the edge-order bookkeeping used by trace exports.
#[derive(Debug, Clone)]
pub struct GraphMdp {
    pub mdp: TabularMdp,
    /// For each edge (in insertion order) its `(state, action)` pair.
    pub edge_sa: Vec<(usize, usize)>,
    /// `Q_{u->v}` labels aligned with `edge_sa`.
    pub labels: Vec<String>,
}

impl GraphMdp {
    /// Project a solver trace onto edge order: one row per sweep, one value
    /// per edge.
    pub fn trace_rows(&self, result: &SolveResult) -> Vec<Vec<f64>> {
        result
            .trace
            .iter()
            .map(|q| self.edge_sa.iter().map(|&(s, a)| q.get(s, a)).collect())
            .collect()
    }
}

/// A source-to-sink route and the smallest edge rate along it.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<usize>,
    pub bottleneck: f64,
}

impl Route {
    pub fn render(&self, g: &FlowGraph) -> String {
        self.nodes
            .iter()
            .map(|&n| g.name(n))
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

/// Solve the routing MDP with an arbitrary backup and follow its greedy
/// policy from source to sink.
pub fn solve_with(
    g: &FlowGraph,
    op: &GeneralizedOperator,
    gamma: f64,
    tol: f64,
) -> Result<(GraphMdp, SolveResult, Route)> {
    let gm = g.as_mdp()?;
    let result = solve_fixed_point(&gm.mdp, op, &SolveOptions::new(gamma).tol(tol))?;
    let policy = greedy_policy(&result.q);
    let mut nodes = vec![g.source()];
    let mut bottleneck = f64::INFINITY;
    let mut here = g.source();
    for _ in 0..g.n_nodes() {
        if here == g.sink() {
            return Ok((gm, result, Route { nodes, bottleneck }));
        }
        let a = policy.actions[here].expect("non-terminal node without action");
        let (_, edge) = g.out_edges(here).nth(a).unwrap();
        bottleneck = bottleneck.min(edge.rate);
        here = edge.to;
        nodes.push(here);
    }
    Err(Error::InvalidInput(
        "greedy route revisits nodes without reaching the sink".into(),
    ))
}

/// Max-bottleneck route via value iteration with the `min` backup.
pub fn solve_qmin(g: &FlowGraph, gamma: f64) -> Result<(GraphMdp, SolveResult, Route)> {
    solve_with(g, &GeneralizedOperator::min(), gamma, 0.0)
}

/// Label-setting widest-path search (Dijkstra with min-rate path widths and
/// a max-heap). Independent of the MDP machinery; used as an oracle.
pub fn widest_path_oracle(g: &FlowGraph) -> Result<Route> {
    g.validate()?;
    #[derive(PartialEq)]
    struct Item {
        width: f64,
        node: usize,
    }
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.width
                .total_cmp(&other.width)
                .then(other.node.cmp(&self.node))
        }
    }

    let n = g.n_nodes();
    let mut width = vec![f64::NEG_INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = std::collections::BinaryHeap::new();
    width[g.source()] = f64::INFINITY;
    heap.push(Item {
        width: f64::INFINITY,
        node: g.source(),
    });
    while let Some(Item { width: w, node: u }) = heap.pop() {
        if done[u] || w < width[u] {
            continue;
        }
        done[u] = true;
        if u == g.sink() {
            break;
        }
        for (ei, e) in g.out_edges(u) {
            let cand = w.min(e.rate);
            if cand > width[e.to] {
                width[e.to] = cand;
                pred[e.to] = Some(ei);
                heap.push(Item {
                    width: cand,
                    node: e.to,
                });
            }
        }
    }
    if width[g.sink()] == f64::NEG_INFINITY {
        return Err(Error::InvalidInput(
            "sink is not reachable from the source".into(),
        ));
    }
    let mut nodes = vec![g.sink()];
    let mut here = g.sink();
    while here != g.source() {
        let ei = pred[here].expect("predecessor chain broken");
        here = g.edges()[ei].from;
        nodes.push(here);
    }
    nodes.reverse();
    Ok(Route {
        nodes,
        bottleneck: width[g.sink()],
    })
}

/// Brute-force max-bottleneck over all simple source-to-sink paths. Errors
/// once more than `budget` paths have been completed.
pub fn exhaustive_bottleneck(g: &FlowGraph, budget: u64) -> Result<f64> {
    g.validate()?;
    let mut visited = vec![false; g.n_nodes()];
    let mut best = f64::NEG_INFINITY;
    let mut count = 0u64;
    fn dfs(
        g: &FlowGraph,
        u: usize,
        width: f64,
        visited: &mut [bool],
        best: &mut f64,
        count: &mut u64,
        budget: u64,
    ) -> Result<()> {
        if u == g.sink() {
            *count += 1;
            if *count > budget {
                return Err(Error::BudgetExceeded {
                    required: *count as u128,
                    budget: budget as u128,
                });
            }
            *best = best.max(width);
            return Ok(());
        }
        visited[u] = true;
        for (_, e) in g.out_edges(u) {
            if !visited[e.to] {
                dfs(g, e.to, width.min(e.rate), visited, best, count, budget)?;
            }
        }
        visited[u] = false;
        Ok(())
    }
    dfs(
        g,
        g.source(),
        f64::INFINITY,
        &mut visited,
        &mut best,
        &mut count,
        budget,
    )?;
    Ok(best)
}

/// The bundled six-node network behind the golden tests; edge order matches
/// the trace-column convention used in the docs.
pub fn reference_graph() -> FlowGraph {
    FlowGraph::parse(include_str!("../data/reference_graph.txt"))
        .expect("bundled reference graph must parse")
}

/// Random DAG with integer rates in `1..=20`, restricted to nodes that lie on
/// some source-to-sink path, so the MDP reduction is always well-formed.
/// Nodes are ordered and edges only go forward, so every route terminates.
pub fn random_dag(seed: u64, max_nodes: usize, density: f64) -> FlowGraph {
    assert!(max_nodes >= 2);
    for attempt in 0.. {
        let mut rng = rng_from_seed(child_seed_idx(seed, "dag-attempt", attempt));
        let n = rng.random_range(2..=max_nodes);
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < density {
                    edges.push((u, v, rng.random_range(1..=20) as f64));
                }
            }
        }
        // Keep only nodes on some source->sink path.
        let mut fwd = vec![false; n];
        fwd[0] = true;
        for &(u, v, _) in &edges {
            if fwd[u] {
                fwd[v] = true; // edges are sorted by construction order (u ascending)
            }
        }
        let mut back = vec![false; n];
        back[n - 1] = true;
        for &(u, v, _) in edges.iter().rev() {
            if back[v] {
                back[u] = true;
            }
        }
        if !(fwd[n - 1] && back[0]) {
            continue;
        }
        let mut g = FlowGraph::new("n0", format!("n{}", n - 1));
        for (u, v, rate) in edges {
            if fwd[u] && back[u] && fwd[v] && back[v] {
                g.add_edge(&format!("n{u}"), &format!("n{v}"), rate)
                    .unwrap();
            }
        }
        if g.validate().is_ok() {
            return g;
        }
    }
    unreachable!()
}
