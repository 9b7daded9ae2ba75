//! Directed communication graphs, their generators and the graph constants
//! entering the contraction analysis: the diameter `D(G)` and the maximal
//! edge-utility `K(G)`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("node {node} has no self-loop")]
    MissingSelfLoop { node: usize },
    #[error("node index {node} out of range for {m} nodes")]
    NodeIndex { node: usize, m: usize },
    #[error("invalid generator parameters: {0}")]
    Generator(String),
    #[error("cannot read edge list: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed edge list at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Directed graph on nodes `0..m`; an edge `(j, l)` means `l` receives from `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DirectedGraph {
    m: usize,
    adj: Vec<bool>,
}

impl DirectedGraph {
    /// Graph with self-loops at every node and no other edges.
    pub fn with_self_loops(m: usize) -> Self {
        let mut g = Self { m, adj: vec![false; m * m] };
        for i in 0..m {
            g.adj[i * m + i] = true;
        }
        g
    }

    /// Graph with the given edges plus a self-loop at every node.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut g = Self::with_self_loops(m);
        for (j, l) in edges {
            g.add_edge(j, l)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<(), GraphError> {
        for node in [from, to] {
            if node >= self.m {
                return Err(GraphError::NodeIndex { node, m: self.m });
            }
        }
        self.adj[from * self.m + to] = true;
        Ok(())
    }

    pub fn remove_edge(&mut self, from: usize, to: usize) {
        if from < self.m && to < self.m {
            self.adj[from * self.m + to] = false;
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.m
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adj[from * self.m + to]
    }

    /// Edges `(j, l)` with `j != l`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m).flat_map(move |j| (0..self.m).filter(move |&l| l != j && self.has_edge(j, l)).map(move |l| (j, l)))
    }

    pub fn num_edges(&self) -> usize {
        self.edges().count()
    }

    /// In-neighbours of `i` other than `i` itself.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(move |&j| j != i && self.has_edge(j, i))
    }

    pub fn out_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(move |&l| l != i && self.has_edge(i, l))
    }

    /// `d(i) = |N^in_i|`, not counting the self-loop.
    pub fn in_degree(&self, i: usize) -> usize {
        self.in_neighbors(i).count()
    }

    pub fn max_in_degree(&self) -> usize {
        (0..self.m).map(|i| self.in_degree(i)).max().unwrap_or(0)
    }

    pub fn check_self_loops(&self) -> Result<(), GraphError> {
        match (0..self.m).find(|&i| !self.has_edge(i, i)) {
            Some(node) => Err(GraphError::MissingSelfLoop { node }),
            None => Ok(()),
        }
    }

    /// Hop distances from `source`, ignoring self-loops.
    pub fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.m];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for v in self.out_neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// All-pairs hop distances; row `j` holds the distances from `j`.
    pub fn distances(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.m).map(|s| self.bfs(s)).collect()
    }

    /// Every node reaches every other node along a directed path.
    pub fn is_strongly_connected(&self) -> bool {
        if self.m == 0 {
            return false;
        }
        // one node reaching all and reached by all suffices
        let forward = self.bfs(0);
        if forward.iter().any(Option::is_none) {
            return false;
        }
        self.reversed().bfs(0).iter().all(Option::is_some)
    }

    pub fn reversed(&self) -> Self {
        let mut adj = vec![false; self.m * self.m];
        for j in 0..self.m {
            for l in 0..self.m {
                adj[l * self.m + j] = self.adj[j * self.m + l];
            }
        }
        Self { m: self.m, adj }
    }

    fn complete_distances(&self) -> Result<Vec<Vec<usize>>, GraphError> {
        self.distances()
            .into_iter()
            .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or(GraphError::NotStronglyConnected)
    }

    /// Longest shortest-path length over ordered pairs of distinct nodes.
    pub fn diameter(&self) -> Result<usize, GraphError> {
        let dist = self.complete_distances()?;
        Ok(dist.iter().flatten().copied().max().unwrap_or(0))
    }

    /// Maximal edge-utility `K(G)`: the largest number of paths of a
    /// shortest-path covering that traverse a single edge, maximised over
    /// coverings.
    ///
    /// The two maxima commute, and for a fixed edge the best covering routes
    /// every pair through it whenever some shortest path allows. Edge `(a, b)`
    /// lies on a shortest `j → l` path iff `d(j,a) + 1 + d(b,l) = d(j,l)`, so
    /// the value is exact in `O(m^2 |E|)`.
    pub fn max_edge_utility(&self) -> Result<usize, GraphError> {
        let dist = self.complete_distances()?;
        let m = self.m;
        let mut best = 0;
        for (a, b) in self.edges() {
            let mut uses = 0;
            for j in 0..m {
                for l in 0..m {
                    if j != l && dist[j][a] + 1 + dist[b][l] == dist[j][l] {
                        uses += 1;
                    }
                }
            }
            best = best.max(uses);
        }
        Ok(best)
    }

    pub fn metrics(&self) -> Result<GraphMetrics, GraphError> {
        Ok(GraphMetrics { diameter: self.diameter()?, max_edge_utility: self.max_edge_utility()?, exact: true })
    }

    /// Self-loops everywhere and strongly connected.
    pub fn validate(&self) -> Result<(), GraphError> {
        self.check_self_loops()?;
        if !self.is_strongly_connected() {
            return Err(GraphError::NotStronglyConnected);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub diameter: usize,
    pub max_edge_utility: usize,
    /// `max_edge_utility` is exact rather than a bound.
    pub exact: bool,
}

/// Directed cycle `0 → 1 → … → m-1 → 0`.
pub fn gen_cycle(m: usize) -> Result<DirectedGraph, GraphError> {
    if m < 2 {
        return Err(GraphError::Generator(format!("a cycle needs at least 2 nodes, got {m}")));
    }
    DirectedGraph::from_edges(m, (0..m).map(|i| (i, (i + 1) % m)))
}

/// Bidirected star with node 0 as the hub.
pub fn gen_star(m: usize) -> Result<DirectedGraph, GraphError> {
    if m < 2 {
        return Err(GraphError::Generator(format!("a star needs at least 2 nodes, got {m}")));
    }
    DirectedGraph::from_edges(m, (1..m).flat_map(|leaf| [(0, leaf), (leaf, 0)]))
}

pub fn gen_complete(m: usize) -> Result<DirectedGraph, GraphError> {
    DirectedGraph::from_edges(m, (0..m).flat_map(|j| (0..m).filter(move |&l| l != j).map(move |l| (j, l))))
}

fn check_degree(m: usize, out_degree: usize) -> Result<(), GraphError> {
    if m < 2 {
        return Err(GraphError::Generator(format!("need at least 2 nodes, got {m}")));
    }
    if out_degree == 0 || out_degree > m - 1 {
        return Err(GraphError::Generator(format!("out-degree must lie in 1..={} for {m} nodes, got {out_degree}", m - 1)));
    }
    Ok(())
}

/// Random digraph on a Hamiltonian cycle through a random node order.
///
/// Every node sends to its cycle successor plus extra distinct targets, for
/// `out_degree` out-neighbours in total when `exact`, or a uniform number in
/// `1..=out_degree` otherwise.
fn random_ring_graph(rng: &mut ChaCha8Rng, m: usize, out_degree: usize, exact: bool) -> DirectedGraph {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut g = DirectedGraph::with_self_loops(m);
    for w in 0..m {
        g.adj[order[w] * m + order[(w + 1) % m]] = true;
    }
    for u in 0..m {
        let target = if exact { out_degree } else { rng.gen_range(1..=out_degree) };
        let mut have = 1;
        while have < target {
            let v = rng.gen_range(0..m);
            if v != u && !g.has_edge(u, v) {
                g.adj[u * m + v] = true;
                have += 1;
            }
        }
    }
    g
}

/// Static random graph in which every node sends to exactly `out_degree` others.
pub fn gen_random(m: usize, out_degree: usize, seed: u64) -> Result<DirectedGraph, GraphError> {
    check_degree(m, out_degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_ring_graph(&mut rng, m, out_degree, true))
}

/// Sequence redrawing a random graph every round; each node sends to at most
/// `out_degree` others.
pub fn gen_time_varying(m: usize, out_degree: usize, seed: u64) -> Result<GraphSequence, GraphError> {
    GraphSequence::seeded_random(m, out_degree, seed, 1)
}

/// Time-indexed graphs `G_0, G_1, …`.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSequence {
    Static(DirectedGraph),
    /// `G_k = graphs[k mod len]`.
    Periodic(Vec<DirectedGraph>),
    /// A fresh random graph every `redraw_period` rounds, reproducible from `seed`.
    SeededRandom { m: usize, out_degree: usize, seed: u64, redraw_period: usize },
}

impl GraphSequence {
    pub fn seeded_random(m: usize, out_degree: usize, seed: u64, redraw_period: usize) -> Result<Self, GraphError> {
        check_degree(m, out_degree)?;
        if redraw_period == 0 {
            return Err(GraphError::Generator("redraw period must be at least 1".into()));
        }
        Ok(Self::SeededRandom { m, out_degree, seed, redraw_period })
    }

    pub fn periodic(graphs: Vec<DirectedGraph>) -> Result<Self, GraphError> {
        let Some(first) = graphs.first() else {
            return Err(GraphError::Generator("a periodic sequence needs at least one graph".into()));
        };
        let m = first.num_nodes();
        if let Some(g) = graphs.iter().find(|g| g.num_nodes() != m) {
            return Err(GraphError::Generator(format!("graphs have {m} and {} nodes", g.num_nodes())));
        }
        Ok(Self::Periodic(graphs))
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Self::Static(g) => g.num_nodes(),
            Self::Periodic(gs) => gs[0].num_nodes(),
            Self::SeededRandom { m, .. } => *m,
        }
    }

    /// Rounds over which the sequence may change (1 for static graphs).
    pub fn is_static(&self) -> bool {
        match self {
            Self::Static(_) => true,
            Self::Periodic(gs) => gs.iter().all(|g| g == &gs[0]),
            Self::SeededRandom { .. } => false,
        }
    }

    pub fn graph_at(&self, round: usize) -> DirectedGraph {
        match self {
            Self::Static(g) => g.clone(),
            Self::Periodic(gs) => gs[round % gs.len()].clone(),
            Self::SeededRandom { m, out_degree, seed, redraw_period } => {
                let epoch = (round / redraw_period) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(epoch + 1);
                random_ring_graph(&mut rng, *m, *out_degree, false)
            }
        }
    }

    /// `max_{i, k < rounds} d_k(i)`.
    pub fn max_in_degree(&self, rounds: usize) -> usize {
        match self {
            Self::Static(g) => g.max_in_degree(),
            Self::Periodic(gs) => gs.iter().take(rounds.max(1)).map(DirectedGraph::max_in_degree).max().unwrap_or(0),
            Self::SeededRandom { redraw_period, .. } => {
                let epochs = rounds.max(1).div_ceil(*redraw_period);
                (0..epochs).map(|e| self.graph_at(e * redraw_period).max_in_degree()).max().unwrap_or(0)
            }
        }
    }

    /// Checks self-loops and strong connectivity of `G_0 … G_{rounds-1}`.
    pub fn validate(&self, rounds: usize) -> Result<(), GraphError> {
        match self {
            Self::Static(g) => g.validate(),
            Self::Periodic(gs) => gs.iter().try_for_each(DirectedGraph::validate),
            Self::SeededRandom { redraw_period, .. } => {
                let epochs = rounds.max(1).div_ceil(*redraw_period);
                (0..epochs).try_for_each(|e| self.graph_at(e * redraw_period).validate())
            }
        }
    }

    /// Edge list of rounds `0..rounds`, one `k j l` triple per line.
    pub fn to_edge_list(&self, rounds: usize) -> String {
        let mut out = String::new();
        for k in 0..rounds {
            for (j, l) in self.graph_at(k).edges() {
                writeln!(out, "{k} {j} {l}").unwrap();
            }
        }
        out
    }
}

/// Parses `k j l` lines (0-based nodes) into a periodic sequence over the
/// listed rounds. Self-loops are implied; blank lines and `#` comments are
/// skipped.
pub fn read_edge_list(reader: impl BufRead) -> Result<GraphSequence, GraphError> {
    let mut rounds: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let mut max_node = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(GraphError::Parse { line: idx + 1, reason: format!("expected 3 fields, found {}", fields.len()) });
        }
        let mut nums = [0usize; 3];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| GraphError::Parse { line: idx + 1, reason: format!("`{field}` is not a non-negative integer") })?;
        }
        max_node = max_node.max(nums[1]).max(nums[2]);
        rounds.entry(nums[0]).or_default().push((nums[1], nums[2]));
    }
    let Some((&last, _)) = rounds.last_key_value() else {
        return Err(GraphError::Parse { line: 0, reason: "edge list is empty".into() });
    };
    if let Some(missing) = (0..=last).find(|k| !rounds.contains_key(k)) {
        return Err(GraphError::Parse { line: 0, reason: format!("round {missing} has no edges") });
    }
    let m = max_node + 1;
    let graphs = rounds
        .into_values()
        .map(|edges| DirectedGraph::from_edges(m, edges))
        .collect::<Result<Vec<_>, _>>()?;
    if graphs.len() == 1 {
        Ok(GraphSequence::Static(graphs.into_iter().next().unwrap()))
    } else {
        GraphSequence::periodic(graphs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_properties() {
        let g = gen_cycle(5).unwrap();
        assert_eq!(g.num_edges(), 5);
        assert!(g.is_strongly_connected());
        assert_eq!(g.diameter().unwrap(), 4);
        let mut broken = g.clone();
        broken.remove_edge(2, 3);
        assert!(!broken.is_strongly_connected());
        assert!(matches!(broken.diameter(), Err(GraphError::NotStronglyConnected)));
        assert!(matches!(broken.max_edge_utility(), Err(GraphError::NotStronglyConnected)));
    }

    #[test]
    fn cycle_edge_utility_counts_every_pair_through_an_edge() {
        // shortest paths on a cycle are unique; edge (0,1) carries one path of
        // each length 1..m-1 starting at each admissible source
        for m in 3..=8 {
            assert_eq!(gen_cycle(m).unwrap().max_edge_utility().unwrap(), m * (m - 1) / 2);
        }
    }

    #[test]
    fn star_and_complete() {
        let star = gen_star(6).unwrap();
        assert!(star.is_strongly_connected());
        assert_eq!(star.diameter().unwrap(), 2);
        assert_eq!(star.in_degree(0), 5);
        assert!(star.has_edge(0, 3) && star.has_edge(3, 0) && !star.has_edge(2, 3));
        let complete = gen_complete(4).unwrap();
        assert_eq!(complete.diameter().unwrap(), 1);
        assert_eq!(complete.max_edge_utility().unwrap(), 1);
    }

    #[test]
    fn bidirected_path() {
        let g = DirectedGraph::from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        assert_eq!(g.diameter().unwrap(), 2);
        assert_eq!(g.max_edge_utility().unwrap(), 2);
    }

    #[test]
    fn random_graph_degrees() {
        let g = gen_random(20, 4, 3).unwrap();
        g.validate().unwrap();
        assert!((0..20).all(|i| g.out_neighbors(i).count() == 4));
        assert_eq!(g, gen_random(20, 4, 3).unwrap());
        assert!(gen_random(5, 5, 0).is_err());
        assert!(gen_random(5, 0, 0).is_err());
    }

    #[test]
    fn time_varying_is_replayable_and_bounded() {
        let seq = gen_time_varying(12, 3, 9).unwrap();
        for k in 0..50 {
            let g = seq.graph_at(k);
            g.validate().unwrap();
            assert!((0..12).all(|i| (1..=3).contains(&g.out_neighbors(i).count())));
            assert_eq!(g, seq.graph_at(k));
        }
        assert_ne!(seq.graph_at(0), seq.graph_at(1));
        let slow = GraphSequence::seeded_random(12, 3, 9, 4).unwrap();
        assert_eq!(slow.graph_at(4), slow.graph_at(7));
    }

    #[test]
    fn edge_list_round_trip() {
        let seq = gen_time_varying(6, 2, 1).unwrap();
        let text = seq.to_edge_list(3);
        let parsed = read_edge_list(text.as_bytes()).unwrap();
        for k in 0..3 {
            assert_eq!(parsed.graph_at(k), seq.graph_at(k));
        }
        assert!(matches!(read_edge_list("0 1\n".as_bytes()), Err(GraphError::Parse { line: 1, .. })));
        assert!(matches!(read_edge_list("0 0 1\n2 1 0\n".as_bytes()), Err(GraphError::Parse { .. })));
    }
}
