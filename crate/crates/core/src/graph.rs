//! Undirected conditional-independence graphs and their clique structure.
//!
//! Nodes are 0-based inside the library. Edge-list files are 1-based; the
//! conversion happens in [`load_graph`] and [`Graph::to_edge_list`].

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{FggmError, Result};

/// Simple undirected graph on `q` nodes without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    q: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<bool>,
}

impl Graph {
    /// Graph on `q` nodes and no edges.
    pub fn empty(q: usize) -> Self {
        Graph {
            q,
            edges: BTreeSet::new(),
            adjacency: vec![false; q * q],
        }
    }

    pub fn complete(q: usize) -> Self {
        let mut g = Graph::empty(q);
        for i in 0..q {
            for j in (i + 1)..q {
                g.insert(i, j);
            }
        }
        g
    }

    /// Path 0 - 1 - ... - (q-1).
    pub fn chain(q: usize) -> Self {
        let mut g = Graph::empty(q);
        for i in 1..q {
            g.insert(i - 1, i);
        }
        g
    }

    /// Builds a graph from 0-based edge pairs. Duplicates and either
    /// orientation are accepted.
    pub fn from_edges<I>(q: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Graph::empty(q);
        for (i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// The 10-node graph used in the simulation study (13 edges).
    pub fn simulation_graph() -> Self {
        const EDGES: [(usize, usize); 13] = [
            (1, 2),
            (1, 3),
            (2, 3),
            (2, 4),
            (3, 4),
            (4, 5),
            (4, 6),
            (5, 6),
            (6, 7),
            (6, 8),
            (7, 8),
            (8, 9),
            (9, 10),
        ];
        Graph::from_edges(10, EDGES.iter().map(|&(i, j)| (i - 1, j - 1))).expect("static edge list is valid")
    }

    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.q || j >= self.q {
            return Err(FggmError::InvalidArgument(format!(
                "edge ({}, {}) out of range for {} nodes",
                i + 1,
                j + 1,
                self.q
            )));
        }
        if i == j {
            return Err(FggmError::InvalidArgument(format!("self-loop at node {}", i + 1)));
        }
        self.insert(i, j);
        Ok(())
    }

    fn insert(&mut self, i: usize, j: usize) {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges.insert((a, b));
        self.adjacency[a * self.q + b] = true;
        self.adjacency[b * self.q + a] = true;
    }

    pub fn node_count(&self) -> usize {
        self.q
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as canonical `(i, j)` pairs with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.q && j < self.q && self.adjacency[i * self.q + j]
    }

    /// `true` when `i == j` or the pair is an edge: the entries covariance
    /// selection keeps fixed.
    pub fn is_constrained(&self, i: usize, j: usize) -> bool {
        i == j || self.has_edge(i, j)
    }

    /// Unordered pairs `(i, j)`, `i < j`, that are not edges.
    pub fn non_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.q {
            for j in (i + 1)..self.q {
                if !self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.q).filter(move |&j| self.adjacency[i * self.q + j])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// `true` when every pair of distinct vertices in `set` is adjacent.
    pub fn is_complete_on(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(k, &a)| set[k + 1..].iter().all(|&b| self.has_edge(a, b)))
    }

    /// Relabels node `k` as `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.q {
            return Err(FggmError::DimensionMismatch(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.q
            )));
        }
        Graph::from_edges(self.q, self.edges().map(|(i, j)| (perm[i], perm[j])))
    }

    /// Edge-list document (1-based, one edge per line).
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{} {}", i + 1, j + 1);
        }
        s
    }
}

/// Parses an edge-list document with 1-based node indices.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn load_graph(text: &str, q: usize) -> Result<Graph> {
    let mut g = Graph::empty(q);
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(FggmError::Parse {
                line: line_no,
                message: format!("expected two node indices, found {:?}", line),
            });
        }
        let mut ends = [0usize; 2];
        for (slot, field) in ends.iter_mut().zip(&fields) {
            let v: usize = field.parse().map_err(|_| FggmError::Parse {
                line: line_no,
                message: format!("not a node index: {:?}", field),
            })?;
            if v == 0 || v > q {
                return Err(FggmError::Parse {
                    line: line_no,
                    message: format!("node {} out of range 1..={}", v, q),
                });
            }
            *slot = v - 1;
        }
        if ends[0] == ends[1] {
            return Err(FggmError::Parse {
                line: line_no,
                message: format!("self-loop at node {}", ends[0] + 1),
            });
        }
        g.insert(ends[0], ends[1]);
    }
    Ok(g)
}

/// Maximal cliques of a graph, each sorted ascending, listed in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueCover {
    pub cliques: Vec<Vec<usize>>,
}

impl CliqueCover {
    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.cliques.iter().map(|c| c.as_slice())
    }
}

/// Bron–Kerbosch enumeration with Tomita pivoting.
pub fn maximal_cliques(g: &Graph) -> CliqueCover {
    let mut cliques = Vec::new();
    let candidates: Vec<usize> = (0..g.node_count()).collect();
    let mut current = Vec::new();
    bron_kerbosch(g, &mut current, candidates, Vec::new(), &mut cliques);
    for c in &mut cliques {
        c.sort_unstable();
    }
    cliques.sort();
    CliqueCover { cliques }
}

fn bron_kerbosch(
    g: &Graph,
    current: &mut Vec<usize>,
    mut candidates: Vec<usize>,
    mut excluded: Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if candidates.is_empty() {
        if excluded.is_empty() {
            out.push(current.clone());
        }
        return;
    }
    // pivot maximizing |N(u) ∩ candidates| over candidates ∪ excluded
    let pivot = candidates
        .iter()
        .chain(excluded.iter())
        .copied()
        .max_by_key(|&u| {
            (
                candidates.iter().filter(|&&v| g.has_edge(u, v)).count(),
                std::cmp::Reverse(u),
            )
        })
        .expect("candidates is non-empty");
    let branch: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&v| !g.has_edge(pivot, v))
        .collect();
    for v in branch {
        let next_candidates: Vec<usize> = candidates.iter().copied().filter(|&w| g.has_edge(v, w)).collect();
        let next_excluded: Vec<usize> = excluded.iter().copied().filter(|&w| g.has_edge(v, w)).collect();
        current.push(v);
        bron_kerbosch(g, current, next_candidates, next_excluded, out);
        current.pop();
        candidates.retain(|&w| w != v);
        excluded.push(v);
    }
}

/// Visit order of maximum cardinality search, ties broken by smallest index.
pub fn maximum_cardinality_search(g: &Graph) -> Vec<usize> {
    let q = g.node_count();
    let mut weight = vec![0usize; q];
    let mut visited = vec![false; q];
    let mut order = Vec::with_capacity(q);
    for _ in 0..q {
        let v = (0..q)
            .filter(|&v| !visited[v])
            .max_by_key(|&v| (weight[v], std::cmp::Reverse(v)))
            .expect("unvisited vertex remains");
        visited[v] = true;
        order.push(v);
        for w in g.neighbors(v) {
            if !visited[w] {
                weight[w] += 1;
            }
        }
    }
    order
}

/// Chordality test: the reverse of a maximum cardinality search order is a
/// perfect elimination ordering iff the graph is chordal.
pub fn is_decomposable(g: &Graph) -> bool {
    let order = maximum_cardinality_search(g);
    let mut position = vec![0usize; g.node_count()];
    for (k, &v) in order.iter().enumerate() {
        position[v] = k;
    }
    order.iter().enumerate().all(|(k, &v)| {
        let earlier: Vec<usize> = g.neighbors(v).filter(|&w| position[w] < k).collect();
        g.is_complete_on(&earlier)
    })
}
