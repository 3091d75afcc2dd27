//! Undirected simple graphs, normalized adjacency, edge masking, and
//! node-pair sampling for training batches.
//!
//! Graphs are immutable after construction: node ids are dense integers in
//! `[0, n)`, adjacency lists are sorted and deduplicated, and self-loops are
//! dropped at build time. Directed input is symmetrized on load.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// Immutable undirected simple graph in adjacency-list form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<u32>>,
    m: usize,
}

impl Graph {
    /// Builds a graph from an edge list. Self-loops are dropped, duplicate
    /// and reversed edges merged, adjacency sorted.
    pub fn from_edge_list(edges: &[(usize, usize)], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("graph must have at least one node"));
        }
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (line, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(Error::Input {
                    line,
                    msg: format!("edge ({u}, {v}) out of range for n={n}"),
                });
            }
            if u == v {
                continue;
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        let mut m = 0;
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            m += list.len();
        }
        debug_assert!(m % 2 == 0);
        Ok(Graph { n, adj, m: m / 2 })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::from_edge_list(&[], n)
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                edges.push((u, v));
            }
        }
        Self::from_edge_list(&edges, n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges (each counted once).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.adj[u].binary_search(&(v as u32)).is_ok()
    }

    /// All edges as `(u, v)` with `u < v`, ascending lexicographic.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.m);
        for u in 0..self.n {
            for &v in &self.adj[u] {
                if (u as u32) < v {
                    out.push((u as u32, v));
                }
            }
        }
        out
    }

    /// Number of unordered non-adjacent node pairs.
    pub fn non_edge_count(&self) -> usize {
        self.n * (self.n - 1) / 2 - self.m
    }

    /// Connected components as lists of node ids.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut comp = vec![usize::MAX; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            comp[start] = id;
            let mut head = 0;
            while head < members.len() {
                let u = members[head];
                head += 1;
                for &v in &self.adj[u] {
                    let v = v as usize;
                    if comp[v] == usize::MAX {
                        comp[v] = id;
                        members.push(v);
                    }
                }
            }
            out.push(members);
        }
        out
    }

    /// Relabels nodes: node `v` becomes `perm[v]`. Test support for
    /// equivariance checks.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::contract("permutation length must equal node count"));
        }
        let edges: Vec<(usize, usize)> = self
            .edges()
            .iter()
            .map(|&(u, v)| (perm[u as usize], perm[v as usize]))
            .collect();
        Self::from_edge_list(&edges, self.n)
    }
}

/// Symmetrically normalized adjacency with self-loops, in CSR form.
///
/// Entry `(u, v)` is present iff `u == v` or `(u, v)` is an edge, with value
/// `1 / sqrt((deg(u)+1) * (deg(v)+1))`.
#[derive(Debug, Clone)]
pub struct NormAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl NormAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn row(&self, u: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[u];
        let hi = self.row_ptr[u + 1];
        (&self.col[lo..hi], &self.val[lo..hi])
    }

    /// `y = S x` for dense row-major `x` with `cols` columns, written into `y`.
    pub fn mul_dense(&self, x: &[f64], cols: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n * cols);
        debug_assert_eq!(y.len(), self.n * cols);
        y.fill(0.0);
        for u in 0..self.n {
            let (cs, vs) = self.row(u);
            let out = &mut y[u * cols..(u + 1) * cols];
            for (&c, &w) in cs.iter().zip(vs) {
                let src = &x[c as usize * cols..(c as usize + 1) * cols];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
}

/// Builds the normalized adjacency `D^{-1/2} (A + I) D^{-1/2}`.
///
/// Isolated nodes stay well-defined: their only entry is the self-loop with
/// value 1.
pub fn norm_adjacency(g: &Graph) -> NormAdjacency {
    let n = g.n();
    let inv_sqrt: Vec<f64> = (0..n).map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt()).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col = Vec::with_capacity(2 * g.m() + n);
    let mut val = Vec::with_capacity(2 * g.m() + n);
    row_ptr.push(0);
    for u in 0..n {
        let mut self_written = false;
        for &v in g.neighbors(u) {
            let vu = v as usize;
            if !self_written && vu > u {
                col.push(u as u32);
                val.push(inv_sqrt[u] * inv_sqrt[u]);
                self_written = true;
            }
            col.push(v);
            val.push(inv_sqrt[u] * inv_sqrt[vu]);
        }
        if !self_written {
            col.push(u as u32);
            val.push(inv_sqrt[u] * inv_sqrt[u]);
        }
        row_ptr.push(col.len());
    }
    NormAdjacency { n, row_ptr, col, val }
}

/// A graph with a fraction of edges removed, used as the denoising input.
#[derive(Debug)]
pub struct MaskedGraph<'a> {
    pub noised: Graph,
    /// Removed undirected edges, `(u, v)` with `u < v`, sorted ascending.
    pub removed: Vec<(u32, u32)>,
    pub original: &'a Graph,
}

/// Removes `round_ties_even(fraction * m)` distinct edges uniformly at
/// random. Deterministic under a fixed generator state.
pub fn mask_edges<'a, R: Rng>(g: &'a Graph, fraction: f64, rng: &mut R) -> Result<MaskedGraph<'a>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("mask fraction {fraction} outside [0, 1]")));
    }
    let k = (fraction * g.m() as f64).round_ties_even() as usize;
    let mut edges = g.edges();
    let len = edges.len();
    for i in 0..k.min(len) {
        let j = rng.random_range(i..len);
        edges.swap(i, j);
    }
    let mut removed: Vec<(u32, u32)> = edges[..k.min(len)].to_vec();
    removed.sort_unstable();
    let kept: Vec<(usize, usize)> =
        edges[k.min(len)..].iter().map(|&(u, v)| (u as usize, v as usize)).collect();
    let noised = Graph::from_edge_list(&kept, g.n())?;
    Ok(MaskedGraph { noised, removed, original: g })
}

/// Positive/negative node-pair sample for the reconstruction and ranking
/// losses. Positives come from removed edges, negatives from non-edges of the
/// original (pre-mask) graph.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub pos_pairs: Vec<(u32, u32)>,
    pub neg_pairs: Vec<(u32, u32)>,
}

impl PairBatch {
    pub fn all_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.pos_pairs.iter().chain(self.neg_pairs.iter()).copied()
    }

    /// Per-pair labels: 1 for positives, 0 for negatives, positives first.
    pub fn labels(&self) -> Vec<f64> {
        let mut out = vec![1.0; self.pos_pairs.len()];
        out.extend(std::iter::repeat(0.0).take(self.neg_pairs.len()));
        out
    }

    pub fn len(&self) -> usize {
        self.pos_pairs.len() + self.neg_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples `min(n_pos, |removed|)` positives without replacement and `n_neg`
/// negatives from non-edges of the original graph (clamped to the number of
/// distinct non-edges), with no repeats within the batch.
pub fn sample_pair_batch<R: Rng>(
    mg: &MaskedGraph<'_>,
    n_pos: usize,
    n_neg: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if mg.removed.is_empty() {
        return Err(Error::sampling("no removed edges to sample positives from"));
    }
    let g = mg.original;
    let non_edges = g.non_edge_count();
    if n_neg > 0 && non_edges == 0 {
        return Err(Error::sampling("graph is complete: no non-edges to sample negatives from"));
    }

    let mut pool = mg.removed.clone();
    let take = n_pos.min(pool.len());
    for i in 0..take {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let pos_pairs = pool[..take].to_vec();

    let want = n_neg.min(non_edges);
    let mut neg_pairs = Vec::with_capacity(want);
    if want * 2 >= non_edges {
        // Dense regime: enumerate all non-edges and take a shuffled prefix.
        let mut all = Vec::with_capacity(non_edges);
        for u in 0..g.n() {
            for v in (u + 1)..g.n() {
                if !g.has_edge(u, v) {
                    all.push((u as u32, v as u32));
                }
            }
        }
        for i in 0..want {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        neg_pairs.extend_from_slice(&all[..want]);
    } else {
        let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(want);
        while neg_pairs.len() < want {
            let a = rng.random_range(0..g.n());
            let b = rng.random_range(0..g.n());
            if a == b {
                continue;
            }
            let pair = (a.min(b) as u32, a.max(b) as u32);
            if g.has_edge(pair.0 as usize, pair.1 as usize) {
                continue;
            }
            if chosen.insert(pair) {
                neg_pairs.push(pair);
            }
        }
    }
    Ok(PairBatch { pos_pairs, neg_pairs })
}

/// Writes the graph text format: `n m` header, one `u v` line per edge with
/// `u < v` in ascending order, then an optional `#clusters` section with one
/// integer per node. ASCII, LF line endings.
pub fn write_graph<W: Write>(g: &Graph, clusters: Option<&[usize]>, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", g.n(), g.m())?;
    for (u, v) in g.edges() {
        writeln!(w, "{u} {v}")?;
    }
    if let Some(cl) = clusters {
        if cl.len() != g.n() {
            return Err(Error::contract("cluster list length must equal node count"));
        }
        writeln!(w, "#clusters")?;
        for c in cl {
            writeln!(w, "{c}")?;
        }
    }
    Ok(())
}

/// Reads the graph text format. Lines beginning with `%` are comments and may
/// appear anywhere.
pub fn read_graph<R: BufRead>(r: R) -> Result<(Graph, Option<Vec<usize>>)> {
    let mut lines = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with('%') {
            continue;
        }
        lines.push((idx + 1, line));
    }
    let mut it = lines.into_iter();
    let (line_no, header) = it
        .next()
        .ok_or(Error::Format { line: 1, msg: "empty graph file".into() })?;
    let mut parts = header.split_whitespace();
    let n: usize = parse_field(parts.next(), line_no, "node count")?;
    let m: usize = parse_field(parts.next(), line_no, "edge count")?;
    if n == 0 {
        return Err(Error::Format { line: line_no, msg: "node count must be >= 1".into() });
    }
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (line_no, line) = it.next().ok_or(Error::Format {
            line: line_no,
            msg: format!("expected {m} edge lines"),
        })?;
        let mut parts = line.split_whitespace();
        let u: usize = parse_field(parts.next(), line_no, "edge endpoint")?;
        let v: usize = parse_field(parts.next(), line_no, "edge endpoint")?;
        if u >= n || v >= n {
            return Err(Error::Format {
                line: line_no,
                msg: format!("edge ({u}, {v}) out of range for n={n}"),
            });
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edge_list(&edges, n)?;
    let mut clusters = None;
    if let Some((line_no, tag)) = it.next() {
        if tag.trim() != "#clusters" {
            return Err(Error::Format {
                line: line_no,
                msg: format!("expected `#clusters`, found `{tag}`"),
            });
        }
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let (line_no, line) = it.next().ok_or(Error::Format {
                line: line_no,
                msg: format!("expected {n} cluster lines"),
            })?;
            let c: usize = parse_field(Some(line.trim()), line_no, "cluster id")?;
            ids.push(c);
        }
        clusters = Some(ids);
    }
    Ok((graph, clusters))
}

fn parse_field<T: std::str::FromStr>(s: Option<&str>, line: usize, what: &str) -> Result<T> {
    s.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format { line, msg: format!("missing or invalid {what}") })
}
