//! Global centrality scores used as ranking targets: eigenvector,
//! betweenness, closeness, and subgraph centrality.
//!
//! Masked graphs routinely disconnect, so every score stays defined on
//! disconnected inputs: eigenvector centrality runs per connected component,
//! closeness gets a reachable-count correction, and edgeless components score
//! zero.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Which path computed subgraph centrality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubgraphMethod {
    /// Full symmetric eigendecomposition; chosen automatically for n <= 512.
    Eigen,
    /// Truncated series `diag(sum_{k=0..30} A^k / k!)` with sparse powers.
    Series,
}

/// Bundle of the four per-node centrality vectors for one graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralityScores {
    pub eigenvector: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub closeness: Vec<f64>,
    pub subgraph: Vec<f64>,
    pub eigen_tol: f64,
    pub subgraph_method: SubgraphMethod,
}

impl CentralityScores {
    pub fn n(&self) -> usize {
        self.eigenvector.len()
    }

    pub fn by_kind(&self, kind: CentralityKind) -> &[f64] {
        match kind {
            CentralityKind::Eigenvector => &self.eigenvector,
            CentralityKind::Betweenness => &self.betweenness,
            CentralityKind::Closeness => &self.closeness,
            CentralityKind::Subgraph => &self.subgraph,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CentralityKind {
    Eigenvector,
    Betweenness,
    Closeness,
    Subgraph,
}

impl CentralityKind {
    pub const ALL: [CentralityKind; 4] = [
        CentralityKind::Eigenvector,
        CentralityKind::Betweenness,
        CentralityKind::Closeness,
        CentralityKind::Subgraph,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CentralityKind::Eigenvector => "eigenvector",
            CentralityKind::Betweenness => "betweenness",
            CentralityKind::Closeness => "closeness",
            CentralityKind::Subgraph => "subgraph",
        }
    }
}

/// Principal-eigenvector centrality via power iteration, per connected
/// component, on `A + I` (shifting keeps the eigenvectors of `A` while making
/// the dominant eigenvalue strictly largest in magnitude, so bipartite
/// components converge). Components without edges score 0; the full vector is
/// scaled to unit Euclidean norm.
pub fn eigenvector_centrality(g: &Graph, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = g.n();
    let mut scores = vec![0.0; n];
    let mut any_edges = false;
    for comp in g.components() {
        let has_edge = comp.iter().any(|&v| g.degree(v) > 0);
        if !has_edge {
            continue;
        }
        any_edges = true;
        let size = comp.len();
        let mut index_of = std::collections::HashMap::with_capacity(size);
        for (i, &v) in comp.iter().enumerate() {
            index_of.insert(v, i);
        }
        let mut x = vec![1.0 / (size as f64).sqrt(); size];
        let mut converged = false;
        for _ in 0..max_iter {
            let mut y = x.clone();
            for (i, &v) in comp.iter().enumerate() {
                for &u in g.neighbors(v) {
                    y[i] += x[index_of[&(u as usize)]];
                }
            }
            let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            for a in &mut y {
                *a /= norm;
            }
            let diff = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            x = y;
            if diff < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical {
                msg: format!("eigenvector centrality did not converge within {max_iter} iterations"),
                iterations: Some(max_iter),
            });
        }
        for (i, &v) in comp.iter().enumerate() {
            scores[v] = x[i];
        }
    }
    if any_edges {
        let norm = scores.iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in &mut scores {
            *a /= norm;
        }
    }
    Ok(scores)
}

/// Betweenness centrality via Brandes' accumulation over unweighted shortest
/// paths, normalized by `1 / (n (n - 1))` over ordered pairs. Unreachable
/// pairs contribute 0.
pub fn betweenness(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let mut scores = vec![0.0; n];
    if n < 3 {
        return scores;
    }
    let mut stack: Vec<usize> = Vec::with_capacity(n);
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0f64; n];
    let mut queue = VecDeque::new();

    for s in 0..n {
        stack.clear();
        queue.clear();
        for v in 0..n {
            pred[v].clear();
            sigma[v] = 0.0;
            dist[v] = -1;
            delta[v] = 0.0;
        }
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in g.neighbors(v) {
                let w = w as usize;
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    pred[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &pred[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                scores[w] += delta[w];
            }
        }
    }
    // Each source run accumulates ordered-pair dependencies, so the sum
    // already covers ordered (u, w) pairs.
    let norm = 1.0 / (n as f64 * (n as f64 - 1.0));
    for s in &mut scores {
        *s *= norm;
    }
    scores
}

/// Closeness centrality `1 / sum_u d(u, v)` with unreachable nodes excluded
/// from the sum and the score scaled by `(reachable - 1) / (n - 1)`. Isolated
/// nodes score 0.
pub fn closeness(g: &Graph) -> Vec<f64> {
    let n = g.n();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mut scores = vec![0.0; n];
    let mut dist = vec![-1i64; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        dist.fill(-1);
        queue.clear();
        dist[s] = 0;
        queue.push_back(s);
        let mut sum = 0i64;
        let mut reachable = 1usize;
        while let Some(v) = queue.pop_front() {
            for &w in g.neighbors(v) {
                let w = w as usize;
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    sum += dist[w];
                    reachable += 1;
                    queue.push_back(w);
                }
            }
        }
        if sum > 0 {
            scores[s] = (1.0 / sum as f64) * ((reachable - 1) as f64 / (n - 1) as f64);
        }
    }
    scores
}

/// Dense symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching orthonormal eigenvectors as columns.
fn sym_eigen(n: usize, a: &mut [f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    debug_assert_eq!(a.len(), n * n);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if n <= 1 {
        return Ok((a.iter().step_by(n + 1).copied().collect(), v));
    }
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-12 {
            let vals = (0..n).map(|i| a[i * n + i]).collect();
            return Ok((vals, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numerical {
        msg: "Jacobi eigendecomposition did not converge".into(),
        iterations: Some(64),
    })
}

/// Subgraph centrality: the weighted sum of closed walks at each node,
/// `sum_j (v_j[w])^2 exp(lambda_j)`.
///
/// `Auto` picks the eigendecomposition for n <= 512 and the 30-term truncated
/// exponential series above that (accurate below 1e-9 truncation error while
/// the spectral radius stays under ~20, which also sidesteps the quartic cost
/// of the dense path on large graphs).
pub fn subgraph_centrality(g: &Graph, method: Option<SubgraphMethod>) -> Result<Vec<f64>> {
    let n = g.n();
    let method = method.unwrap_or(if n <= 512 { SubgraphMethod::Eigen } else { SubgraphMethod::Series });
    match method {
        SubgraphMethod::Eigen => {
            let mut a = vec![0.0; n * n];
            for u in 0..n {
                for &v in g.neighbors(u) {
                    a[u * n + v as usize] = 1.0;
                }
            }
            let (vals, vecs) = sym_eigen(n, &mut a)?;
            let exps: Vec<f64> = vals.iter().map(|l| l.exp()).collect();
            let mut out = vec![0.0; n];
            for w in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    let c = vecs[w * n + j];
                    acc += c * c * exps[j];
                }
                out[w] = acc;
            }
            Ok(out)
        }
        SubgraphMethod::Series => {
            const ORDER: usize = 30;
            // B_k = A^k / k!, accumulated column-block by column-block.
            let mut b = vec![0.0; n * n];
            for i in 0..n {
                b[i * n + i] = 1.0;
            }
            let mut out = vec![1.0; n]; // k = 0 term
            let mut next = vec![0.0; n * n];
            for k in 1..=ORDER {
                next.fill(0.0);
                for u in 0..n {
                    let dst = &mut next[u * n..(u + 1) * n];
                    for &v in g.neighbors(u) {
                        let src = &b[v as usize * n..(v as usize + 1) * n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                let inv_k = 1.0 / k as f64;
                for x in &mut next {
                    *x *= inv_k;
                }
                std::mem::swap(&mut b, &mut next);
                for w in 0..n {
                    out[w] += b[w * n + w];
                }
            }
            Ok(out)
        }
    }
}

/// Bundles all four centralities computed on the original (unmasked) graph.
pub fn centrality_targets(g: &Graph) -> Result<CentralityScores> {
    let eigen_tol = 1e-8;
    Ok(CentralityScores {
        eigenvector: eigenvector_centrality(g, eigen_tol, 10_000)?,
        betweenness: betweenness(g),
        closeness: closeness(g),
        subgraph: subgraph_centrality(g, None)?,
        eigen_tol,
        subgraph_method: if g.n() <= 512 { SubgraphMethod::Eigen } else { SubgraphMethod::Series },
    })
}

/// CSV dump: node id plus the four scores.
pub fn write_centrality_csv<W: Write>(scores: &CentralityScores, mut w: W) -> Result<()> {
    writeln!(w, "node,eigenvector,betweenness,closeness,subgraph")?;
    for v in 0..scores.n() {
        writeln!(
            w,
            "{},{},{},{},{}",
            v, scores.eigenvector[v], scores.betweenness[v], scores.closeness[v], scores.subgraph[v]
        )?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force reference implementations, independent of the fast paths.

    use crate::graph::Graph;

    /// Betweenness by explicit enumeration of all shortest paths.
    pub fn betweenness_enumeration(g: &Graph) -> Vec<f64> {
        let n = g.n();
        let mut scores = vec![0.0; n];
        if n < 3 {
            return scores;
        }
        for s in 0..n {
            for t in 0..n {
                if s == t {
                    continue;
                }
                let paths = all_shortest_paths(g, s, t);
                if paths.is_empty() {
                    continue;
                }
                let total = paths.len() as f64;
                let mut through = vec![0usize; n];
                for p in &paths {
                    for &v in &p[1..p.len() - 1] {
                        through[v] += 1;
                    }
                }
                for v in 0..n {
                    if v != s && v != t {
                        scores[v] += through[v] as f64 / total;
                    }
                }
            }
        }
        let norm = 1.0 / (n as f64 * (n as f64 - 1.0));
        for x in &mut scores {
            *x *= norm;
        }
        scores
    }

    fn all_shortest_paths(g: &Graph, s: usize, t: usize) -> Vec<Vec<usize>> {
        let n = g.n();
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &w in g.neighbors(v) {
                let w = w as usize;
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        if dist[t] == usize::MAX {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut path = vec![s];
        extend(g, &dist, t, &mut path, &mut out);
        out
    }

    fn extend(g: &Graph, dist: &[usize], t: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let v = *path.last().unwrap();
        if v == t {
            out.push(path.clone());
            return;
        }
        for &w in g.neighbors(v) {
            let w = w as usize;
            if dist[w] == dist[v] + 1 {
                path.push(w);
                extend(g, dist, t, path, out);
                path.pop();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if r.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edge_list(&edges, n).unwrap()
    }

    fn random_connected_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for v in 1..n {
            let u = r.random_range(0..v);
            edges.push((u, v));
        }
        for u in 0..n {
            for v in (u + 1)..n {
                if r.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edge_list(&edges, n).unwrap()
    }

    fn p3() -> Graph {
        Graph::from_edge_list(&[(0, 1), (1, 2)], 3).unwrap()
    }

    #[test]
    fn eigenvector_uniform_on_complete_and_cycle() {
        for g in [Graph::complete(5).unwrap(), {
            Graph::from_edge_list(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)], 5).unwrap()
        }] {
            let x = eigenvector_centrality(&g, 1e-10, 10_000).unwrap();
            let expect = 1.0 / (5.0f64).sqrt();
            for v in x {
                assert!((v - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn eigenvector_p3_center_ratio_sqrt2() {
        let x = eigenvector_centrality(&p3(), 1e-12, 10_000).unwrap();
        assert!((x[1] / x[0] - 2.0f64.sqrt()).abs() < 1e-7);
        assert!((x[0] - x[2]).abs() < 1e-9);
    }

    #[test]
    fn eigenvector_residual_small() {
        for seed in 0..20 {
            let g = random_connected_graph(16, 0.2, seed);
            let x = eigenvector_centrality(&g, 1e-10, 10_000).unwrap();
            let mut ax = vec![0.0; g.n()];
            for v in 0..g.n() {
                for &u in g.neighbors(v) {
                    ax[v] += x[u as usize];
                }
            }
            let lambda: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
            let resid: f64 =
                x.iter().zip(&ax).map(|(a, b)| (b - lambda * a).powi(2)).sum::<f64>().sqrt();
            assert!(resid < 1e-6, "seed {seed}: residual {resid}");
        }
    }

    #[test]
    fn eigenvector_bipartite_converges() {
        // Even cycle: the unshifted adjacency has +/- lambda extremes.
        let c6 = Graph::from_edge_list(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)], 6).unwrap();
        let x = eigenvector_centrality(&c6, 1e-10, 10_000).unwrap();
        for v in &x {
            assert!((v - x[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn eigenvector_disconnected_components_and_isolated() {
        let g = Graph::from_edge_list(&[(0, 1)], 3).unwrap();
        let x = eigenvector_centrality(&g, 1e-10, 10_000).unwrap();
        assert_eq!(x[2], 0.0);
        assert!((x.iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn betweenness_p3_center_one_third() {
        let b = betweenness(&p3());
        assert!((b[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(b[0], 0.0);
        assert_eq!(b[2], 0.0);
    }

    #[test]
    fn betweenness_complete_graph_all_zero() {
        assert_eq!(betweenness(&Graph::complete(4).unwrap()), vec![0.0; 4]);
    }

    #[test]
    fn betweenness_matches_path_enumeration() {
        for seed in 0..40 {
            let g = random_connected_graph(8, 0.25, seed);
            let fast = betweenness(&g);
            let slow = oracle::betweenness_enumeration(&g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn closeness_known_values() {
        let star = Graph::from_edge_list(&[(0, 1), (0, 2), (0, 3)], 4).unwrap();
        assert!((closeness(&star)[0] - 1.0 / 3.0).abs() < 1e-15);
        let k4 = Graph::complete(4).unwrap();
        for v in closeness(&k4) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let with_isolated = Graph::from_edge_list(&[(0, 1)], 3).unwrap();
        assert_eq!(closeness(&with_isolated)[2], 0.0);
    }

    #[test]
    fn subgraph_known_values() {
        let isolated = Graph::empty(1).unwrap();
        assert!((subgraph_centrality(&isolated, None).unwrap()[0] - 1.0).abs() < 1e-12);

        // K2 spectrum {1, -1} with equal weight: cosh(1).
        let k2 = Graph::from_edge_list(&[(0, 1)], 2).unwrap();
        let sc = subgraph_centrality(&k2, None).unwrap();
        for v in sc {
            assert!((v - 1.0f64.cosh()).abs() < 1e-9);
        }

        // K3 spectrum {2, -1, -1}: e^2 / 3 + 2 e^{-1} / 3.
        let k3 = Graph::complete(3).unwrap();
        let expect = (2.0f64.exp() + 2.0 * (-1.0f64).exp()) / 3.0;
        for v in subgraph_centrality(&k3, None).unwrap() {
            assert!((v - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn subgraph_eigen_and_series_agree() {
        for seed in 0..12 {
            let g = random_graph(40, 0.1, seed);
            let a = subgraph_centrality(&g, Some(SubgraphMethod::Eigen)).unwrap();
            let b = subgraph_centrality(&g, Some(SubgraphMethod::Series)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                let rel = (x - y).abs() / x.abs().max(1.0);
                assert!(rel < 1e-6, "seed {seed}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn targets_constant_on_k4_and_deterministic() {
        let k4 = Graph::complete(4).unwrap();
        let t = centrality_targets(&k4).unwrap();
        for kind in CentralityKind::ALL {
            let v = t.by_kind(kind);
            for x in v {
                assert!((x - v[0]).abs() < 1e-9, "{kind:?}");
            }
        }
        let t2 = centrality_targets(&k4).unwrap();
        assert_eq!(t.eigenvector, t2.eigenvector);
        assert_eq!(t.subgraph, t2.subgraph);
    }

    #[test]
    fn targets_rank_p3_center_highest() {
        let t = centrality_targets(&p3()).unwrap();
        for kind in [CentralityKind::Eigenvector, CentralityKind::Betweenness, CentralityKind::Closeness] {
            let v = t.by_kind(kind);
            assert!(v[1] > v[0], "{kind:?}");
            assert!(v[1] > v[2], "{kind:?}");
        }
    }

    #[test]
    fn centralities_are_permutation_equivariant() {
        let g = random_connected_graph(10, 0.3, 5);
        let perm: Vec<usize> = vec![3, 7, 0, 9, 4, 1, 8, 2, 6, 5];
        let gp = g.permuted(&perm).unwrap();
        let t = centrality_targets(&g).unwrap();
        let tp = centrality_targets(&gp).unwrap();
        for kind in CentralityKind::ALL {
            let a = t.by_kind(kind);
            let b = tp.by_kind(kind);
            for v in 0..g.n() {
                assert!((a[v] - b[perm[v]]).abs() < 1e-8, "{kind:?}");
            }
        }
    }

    #[test]
    fn csv_has_five_columns() {
        let t = centrality_targets(&p3()).unwrap();
        let mut buf = Vec::new();
        write_centrality_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        for line in &lines {
            assert_eq!(line.split(',').count(), 5);
        }
    }
}
