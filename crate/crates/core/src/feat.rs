//! The four local node features fed to the encoder: degree, core number,
//! collective influence, and local clustering coefficient.
//!
//! The first three are min-max normalized per graph; the clustering
//! coefficient is already in `[0, 1]` and passes through untouched.

use std::io::Write;

use crate::error::Result;
use crate::graph::Graph;

/// Per-node feature rows in the fixed order
/// `[degree, core_number, collective_influence, clustering_coeff]`,
/// kept in both raw and normalized form.
#[derive(Debug, Clone)]
pub struct LocalFeatures {
    pub raw: Vec<[f64; 4]>,
    pub normalized: Vec<[f64; 4]>,
    /// Per-graph `(min, max)` of the first three raw columns.
    pub min_max: [(f64, f64); 3],
}

impl LocalFeatures {
    pub fn n(&self) -> usize {
        self.raw.len()
    }

    /// Normalized rows flattened row-major, `n x 4`.
    pub fn matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.normalized.len() * 4);
        for row in &self.normalized {
            out.extend_from_slice(row);
        }
        out
    }
}

pub fn degrees(g: &Graph) -> Vec<usize> {
    (0..g.n()).map(|v| g.degree(v)).collect()
}

/// K-core decomposition by iterative min-degree peeling, O(|V| + |E|).
pub fn core_numbers(g: &Graph) -> Vec<usize> {
    let n = g.n();
    let mut deg: Vec<usize> = degrees(g);
    let max_deg = deg.iter().copied().max().unwrap_or(0);

    // Bucket sort nodes by degree.
    let mut bin = vec![0usize; max_deg + 2];
    for &d in &deg {
        bin[d] += 1;
    }
    let mut start = 0;
    for b in bin.iter_mut() {
        let count = *b;
        *b = start;
        start += count;
    }
    let mut pos = vec![0usize; n];
    let mut order = vec![0usize; n];
    for v in 0..n {
        pos[v] = bin[deg[v]];
        order[pos[v]] = v;
        bin[deg[v]] += 1;
    }
    for d in (1..bin.len()).rev() {
        bin[d] = bin[d - 1];
    }
    bin[0] = 0;

    let mut core = deg.clone();
    for i in 0..n {
        let v = order[i];
        core[v] = deg[v];
        for &u in g.neighbors(v) {
            let u = u as usize;
            if deg[u] > deg[v] {
                let du = deg[u];
                let pu = pos[u];
                let pw = bin[du];
                let w = order[pw];
                if u != w {
                    order.swap(pu, pw);
                    pos[u] = pw;
                    pos[w] = pu;
                }
                bin[du] += 1;
                deg[u] -= 1;
            }
        }
    }
    core
}

/// 1-hop collective influence: `(deg(v) - 1) * sum_{u in N(v)} (deg(u) - 1)`.
/// Zero for nodes of degree 0 or 1.
pub fn collective_influence(g: &Graph) -> Vec<f64> {
    let deg = degrees(g);
    (0..g.n())
        .map(|v| {
            if deg[v] == 0 {
                return 0.0;
            }
            let neighbor_sum: f64 =
                g.neighbors(v).iter().map(|&u| deg[u as usize] as f64 - 1.0).sum();
            (deg[v] as f64 - 1.0) * neighbor_sum
        })
        .collect()
}

/// Local clustering coefficient `2 * triangles(v) / (deg(v) * (deg(v) - 1))`,
/// zero for degree < 2.
pub fn clustering_coeffs(g: &Graph) -> Vec<f64> {
    (0..g.n())
        .map(|v| {
            let d = g.degree(v);
            if d < 2 {
                return 0.0;
            }
            let nbrs = g.neighbors(v);
            let mut tri = 0usize;
            for (i, &a) in nbrs.iter().enumerate() {
                for &b in &nbrs[i + 1..] {
                    if g.has_edge(a as usize, b as usize) {
                        tri += 1;
                    }
                }
            }
            2.0 * tri as f64 / (d as f64 * (d as f64 - 1.0))
        })
        .collect()
}

/// Assembles the n x 4 feature matrix, min-max normalizing the first three
/// columns per graph. A constant column maps to 0.
pub fn assemble_features(g: &Graph) -> LocalFeatures {
    let deg = degrees(g);
    let core = core_numbers(g);
    let ci = collective_influence(g);
    let cc = clustering_coeffs(g);

    let raw: Vec<[f64; 4]> =
        (0..g.n()).map(|v| [deg[v] as f64, core[v] as f64, ci[v], cc[v]]).collect();

    let mut min_max = [(f64::INFINITY, f64::NEG_INFINITY); 3];
    for row in &raw {
        for c in 0..3 {
            min_max[c].0 = min_max[c].0.min(row[c]);
            min_max[c].1 = min_max[c].1.max(row[c]);
        }
    }
    let normalized: Vec<[f64; 4]> = raw
        .iter()
        .map(|row| {
            let mut out = [0.0; 4];
            for c in 0..3 {
                let (lo, hi) = min_max[c];
                out[c] = if hi > lo { (row[c] - lo) / (hi - lo) } else { 0.0 };
            }
            out[3] = row[3];
            out
        })
        .collect();

    LocalFeatures { raw, normalized, min_max }
}

/// CSV dump: one row per node, 8 columns (4 raw then 4 normalized).
pub fn write_features_csv<W: Write>(f: &LocalFeatures, mut w: W) -> Result<()> {
    writeln!(
        w,
        "degree,core_number,collective_influence,clustering_coeff,\
         degree_norm,core_number_norm,collective_influence_norm,clustering_coeff_norm"
    )?;
    for (raw, norm) in f.raw.iter().zip(&f.normalized) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            raw[0], raw[1], raw[2], raw[3], norm[0], norm[1], norm[2], norm[3]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triangle_with_pendant() -> Graph {
        // Triangle 0-1-2 plus pendant node 3 attached to 0.
        Graph::from_edge_list(&[(0, 1), (1, 2), (0, 2), (0, 3)], 4).unwrap()
    }

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

    /// Core number by definition: the largest k such that some induced
    /// subgraph containing v has minimum degree >= k.
    fn brute_core_numbers(g: &Graph) -> Vec<usize> {
        let n = g.n();
        assert!(n <= 16);
        let mut best = vec![0usize; n];
        for mask in 1u32..(1 << n) {
            let members: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
            let mut min_deg = usize::MAX;
            for &v in &members {
                let d = g.neighbors(v).iter().filter(|&&u| mask >> u & 1 == 1).count();
                min_deg = min_deg.min(d);
            }
            for &v in &members {
                best[v] = best[v].max(min_deg);
            }
        }
        best
    }

    fn brute_clustering(g: &Graph) -> Vec<f64> {
        let n = g.n();
        let mut tri = vec![0usize; n];
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    if g.has_edge(a, b) && g.has_edge(b, c) && g.has_edge(a, c) {
                        tri[a] += 1;
                        tri[b] += 1;
                        tri[c] += 1;
                    }
                }
            }
        }
        (0..n)
            .map(|v| {
                let d = g.degree(v);
                if d < 2 {
                    0.0
                } else {
                    2.0 * tri[v] as f64 / (d as f64 * (d as f64 - 1.0))
                }
            })
            .collect()
    }

    #[test]
    fn degrees_star_empty_complete() {
        let star = Graph::from_edge_list(&[(0, 1), (0, 2), (0, 3)], 4).unwrap();
        assert_eq!(degrees(&star), vec![3, 1, 1, 1]);
        assert_eq!(degrees(&Graph::empty(3).unwrap()), vec![0, 0, 0]);
        assert_eq!(degrees(&Graph::complete(4).unwrap()), vec![3, 3, 3, 3]);
    }

    #[test]
    fn core_numbers_known_graphs() {
        assert_eq!(core_numbers(&Graph::complete(4).unwrap()), vec![3, 3, 3, 3]);
        let p3 = Graph::from_edge_list(&[(0, 1), (1, 2)], 3).unwrap();
        assert_eq!(core_numbers(&p3), vec![1, 1, 1]);
        assert_eq!(core_numbers(&triangle_with_pendant()), vec![2, 2, 2, 1]);
    }

    #[test]
    fn core_numbers_match_brute_force() {
        for seed in 0..60 {
            let g = random_graph(9, 0.35, seed);
            assert_eq!(core_numbers(&g), brute_core_numbers(&g), "seed {seed}");
        }
    }

    #[test]
    fn collective_influence_hand_values() {
        let g = triangle_with_pendant();
        let ci = collective_influence(&g);
        // Node 0: deg 3, neighbors have degrees 2, 2, 1.
        assert_eq!(ci[0], 4.0);
        // Node 1: deg 2, neighbors have degrees 3, 2.
        assert_eq!(ci[1], 3.0);
        // Pendant node 3 has degree 1.
        assert_eq!(ci[3], 0.0);
    }

    #[test]
    fn clustering_known_graphs() {
        let tri = Graph::complete(3).unwrap();
        assert_eq!(clustering_coeffs(&tri), vec![1.0, 1.0, 1.0]);
        let c4 = Graph::from_edge_list(&[(0, 1), (1, 2), (2, 3), (3, 0)], 4).unwrap();
        assert_eq!(clustering_coeffs(&c4), vec![0.0; 4]);
        let g = triangle_with_pendant();
        assert!((clustering_coeffs(&g)[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn clustering_matches_triangle_enumeration() {
        for seed in 0..40 {
            let g = random_graph(11, 0.3, seed);
            let fast = clustering_coeffs(&g);
            let slow = brute_clustering(&g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn assemble_regular_graph_zeroes_constant_columns() {
        let g = Graph::complete(5).unwrap();
        let f = assemble_features(&g);
        for row in &f.normalized {
            assert_eq!(row[0], 0.0);
            assert_eq!(row[1], 0.0);
        }
    }

    #[test]
    fn assemble_values_in_unit_interval() {
        for seed in 0..20 {
            let g = random_graph(20, 0.25, seed);
            let f = assemble_features(&g);
            for row in &f.normalized {
                for &x in row {
                    assert!((0.0..=1.0).contains(&x));
                }
            }
        }
    }

    #[test]
    fn assemble_degree_column_hand_values() {
        let f = assemble_features(&triangle_with_pendant());
        let col: Vec<f64> = f.normalized.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![1.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn features_are_permutation_equivariant() {
        let g = random_graph(12, 0.3, 77);
        let perm: Vec<usize> = vec![4, 9, 1, 0, 11, 3, 7, 2, 10, 5, 8, 6];
        let gp = g.permuted(&perm).unwrap();
        let f = assemble_features(&g);
        let fp = assemble_features(&gp);
        for v in 0..12 {
            assert_eq!(f.raw[v], fp.raw[perm[v]]);
            assert_eq!(f.normalized[v], fp.normalized[perm[v]]);
        }
    }

    #[test]
    fn csv_has_eight_columns_per_node() {
        let g = triangle_with_pendant();
        let mut buf = Vec::new();
        write_features_csv(&assemble_features(&g), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + g.n());
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 8);
        }
    }
}
