//! Degree-corrected block-model corpus generation.
//!
//! Each graph gets planted clusters, per-node degree weights drawn from a
//! truncated power law, and an edge probability `theta_u * theta_v * P[c_u][c_v]`
//! clipped to `[0, 1]`. Corpus generation is order-independent: every graph's
//! seed derives from the master seed and its index, so graphs can be produced
//! in parallel and the output bytes never change.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centrality::{centrality_targets, CentralityScores};
use crate::error::{Error, Result};
use crate::graph::{read_graph, write_graph, Graph};
use crate::seeds::derive_seed2;

/// Sampling ranges for generator parameters; all draws are uniform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRanges {
    pub n: (usize, usize),
    pub clusters: (usize, usize),
    pub p_div_q: (f64, f64),
    pub k: (f64, f64),
    pub gamma: (f64, f64),
    /// Target mean degree band used to pin the base inter-cluster probability.
    pub mean_degree: (f64, f64),
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            n: (100, 2000),
            clusters: (2, 10),
            p_div_q: (3.0, 6.0),
            k: (0.1, 2.0),
            gamma: (2.0, 10.0),
            mean_degree: (5.0, 50.0),
            theta_min: 0.2,
            theta_max: 5.0,
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        fn ordered<T: PartialOrd + std::fmt::Debug>(name: &str, r: (T, T)) -> Result<()> {
            if r.0 > r.1 {
                return Err(Error::config(format!("range {name} is inverted: {r:?}")));
            }
            Ok(())
        }
        ordered("n", self.n)?;
        ordered("clusters", self.clusters)?;
        ordered("p_div_q", self.p_div_q)?;
        ordered("k", self.k)?;
        ordered("gamma", self.gamma)?;
        ordered("mean_degree", self.mean_degree)?;
        if self.n.0 < 1 {
            return Err(Error::config("n range must start at 1 or above"));
        }
        if self.clusters.0 < 2 {
            return Err(Error::config("cluster count must be at least 2"));
        }
        if self.p_div_q.0 <= 1.0 {
            return Err(Error::config("p_div_q must exceed 1"));
        }
        if self.k.0 <= 0.0 {
            return Err(Error::config("k must be positive"));
        }
        if self.gamma.0 <= 1.0 {
            return Err(Error::config("gamma must exceed 1"));
        }
        if !(self.theta_min > 0.0 && self.theta_min < self.theta_max) {
            return Err(Error::config("theta bounds must satisfy 0 < theta_min < theta_max"));
        }
        Ok(())
    }
}

/// One fully resolved generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcbmParams {
    pub n: usize,
    pub clusters: usize,
    pub p_div_q: f64,
    pub k: f64,
    pub gamma: f64,
    pub q_base: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub mean_degree_target: f64,
    pub seed: u64,
}

impl DcbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(2 <= self.clusters && self.clusters <= self.n) {
            return Err(Error::config(format!(
                "cluster count {} must be in [2, n={}]",
                self.clusters, self.n
            )));
        }
        if self.p_div_q * self.q_base > 1.0 + 1e-12 {
            return Err(Error::config("p_div_q * q_base exceeds 1 after clipping"));
        }
        if self.theta_min >= self.theta_max {
            return Err(Error::config("theta_min must be below theta_max"));
        }
        Ok(())
    }
}

/// Statistical regime labels matching the four corpus quadrants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    DensePowerlaw,
    DenseUniform,
    SparsePowerlaw,
    SparseUniform,
}

impl Regime {
    pub const ALL: [Regime; 4] =
        [Regime::DensePowerlaw, Regime::DenseUniform, Regime::SparsePowerlaw, Regime::SparseUniform];

    pub fn label(self) -> &'static str {
        match self {
            Regime::DensePowerlaw => "dense_powerlaw",
            Regime::DenseUniform => "dense_uniform",
            Regime::SparsePowerlaw => "sparse_powerlaw",
            Regime::SparseUniform => "sparse_uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Regime> {
        Regime::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::config(format!("unknown regime `{s}`")))
    }

    pub fn index(self) -> usize {
        Regime::ALL.iter().position(|r| *r == self).unwrap()
    }

    /// Dense means realized mean degree >= 15; power-law means gamma <= 4.
    pub fn classify(mean_degree: f64, gamma: f64) -> Regime {
        match (mean_degree >= 15.0, gamma <= 4.0) {
            (true, true) => Regime::DensePowerlaw,
            (true, false) => Regime::DenseUniform,
            (false, true) => Regime::SparsePowerlaw,
            (false, false) => Regime::SparseUniform,
        }
    }
}

/// A generated graph together with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedGraph {
    pub graph: Graph,
    pub clusters: Vec<usize>,
    pub theta: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub regime: Regime,
    pub params: DcbmParams,
}

/// Mean of the truncated Pareto density `theta^-gamma` on `[a, b]`.
fn truncated_pareto_mean(gamma: f64, a: f64, b: f64) -> f64 {
    let numer = if (gamma - 2.0).abs() < 1e-12 {
        (b / a).ln()
    } else {
        (b.powf(2.0 - gamma) - a.powf(2.0 - gamma)) / (2.0 - gamma)
    };
    let denom = (b.powf(1.0 - gamma) - a.powf(1.0 - gamma)) / (1.0 - gamma);
    numer / denom
}

/// Inverse-CDF draw from the truncated Pareto on `[a, b]`.
fn sample_truncated_pareto<R: Rng>(gamma: f64, a: f64, b: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let e = 1.0 - gamma;
    (a.powf(e) + u * (b.powf(e) - a.powf(e))).powf(1.0 / e)
}

/// Draws one parameter set uniformly from the configured ranges. The base
/// inter-cluster probability is solved from a target mean degree so that edge
/// density stays in a workable band across the whole node-count range.
pub fn sample_dcbm_params<R: Rng>(ranges: &ParamRanges, rng: &mut R) -> Result<DcbmParams> {
    ranges.validate()?;
    let n = rng.random_range(ranges.n.0..=ranges.n.1);
    let clusters = rng.random_range(ranges.clusters.0..=ranges.clusters.1.min(n));
    let p_div_q = uniform_in(ranges.p_div_q, rng);
    let k = uniform_in(ranges.k, rng);
    let gamma = uniform_in(ranges.gamma, rng);
    let mean_degree_target = uniform_in(ranges.mean_degree, rng);

    let mut k = k;
    let mean_theta = k * truncated_pareto_mean(gamma, ranges.theta_min, ranges.theta_max);
    let kf = clusters as f64;
    let mix = p_div_q / kf + (kf - 1.0) / kf;
    let mut q_base = mean_degree_target / (n as f64 * mean_theta * mean_theta * mix);
    if p_div_q * q_base > 1.0 {
        // The in-cluster probability saturates at 1; push the excess into the
        // theta scale instead so the target mean degree is still met. Scaling
        // k leaves the power-law shape untouched.
        let clipped = 1.0 / p_div_q;
        k *= (q_base / clipped).sqrt();
        q_base = clipped;
    }

    Ok(DcbmParams {
        n,
        clusters,
        p_div_q,
        k,
        gamma,
        q_base,
        theta_min: ranges.theta_min,
        theta_max: ranges.theta_max,
        mean_degree_target,
        seed: 0,
    })
}

fn uniform_in<R: Rng>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + rng.random::<f64>() * (hi - lo)
    }
}

/// Samples an adjacency from explicit weights: each unordered pair `(u, v)`
/// becomes an edge with probability `clip(theta_u * theta_v * p[c_u][c_v], 0, 1)`.
/// Exposed so tests can drive single-block and degenerate configurations
/// directly.
pub fn sample_edges<R: Rng>(
    theta: &[f64],
    p: &[Vec<f64>],
    clusters: &[usize],
    rng: &mut R,
) -> Result<Graph> {
    let n = theta.len();
    if clusters.len() != n {
        return Err(Error::contract("theta and cluster assignments must have equal length"));
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let prob = (theta[u] * theta[v] * p[clusters[u]][clusters[v]]).clamp(0.0, 1.0);
            if rng.random::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edge_list(&edges, n)
}

/// Generates one graph: uniform cluster assignment, truncated power-law
/// degree weights scaled by `k`, Bernoulli edges. Deterministic for a fixed
/// generator state.
pub fn generate_dcbm<R: Rng>(params: &DcbmParams, rng: &mut R) -> Result<GeneratedGraph> {
    params.validate()?;
    let n = params.n;
    let kc = params.clusters;
    let clusters: Vec<usize> = (0..n).map(|_| rng.random_range(0..kc)).collect();
    let theta: Vec<f64> = (0..n)
        .map(|_| params.k * sample_truncated_pareto(params.gamma, params.theta_min, params.theta_max, rng))
        .collect();
    let p_in = params.p_div_q * params.q_base;
    let p: Vec<Vec<f64>> = (0..kc)
        .map(|a| (0..kc).map(|b| if a == b { p_in } else { params.q_base }).collect())
        .collect();
    let graph = sample_edges(&theta, &p, &clusters, rng)?;
    let mean_degree = 2.0 * graph.m() as f64 / n as f64;
    let regime = Regime::classify(mean_degree, params.gamma);
    Ok(GeneratedGraph { graph, clusters, theta, p, regime, params: params.clone() })
}

/// Per-graph record stored next to each graph file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub params: DcbmParams,
    pub theta: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub regime: String,
    pub centrality: CentralityScores,
}

/// Train/validation membership of one corpus entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    pub regime: Regime,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn train(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn val(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Val)
    }
}

/// Train/val split sizes: the first 900 graphs train when the corpus is large
/// enough, otherwise the same 900/1024 proportion rounded, always keeping at
/// least one graph per side for corpora of two or more.
pub fn split_counts(count: usize) -> (usize, usize) {
    if count == 0 {
        return (0, 0);
    }
    if count == 1 {
        return (1, 0);
    }
    let train = if count > 1024 {
        count - 124
    } else {
        ((count as f64 * 900.0 / 1024.0).round() as usize).clamp(1, count - 1)
    };
    (train, count - train)
}

fn graph_file(index: usize) -> String {
    format!("g{index:05}.graph")
}

fn sidecar_file(index: usize) -> String {
    format!("g{index:05}.json")
}

/// Generates `count` graphs with per-index derived seeds, writes each graph
/// (with its cluster section), a JSON sidecar carrying ground truth and
/// centrality targets, and a manifest listing path, split, and regime.
///
/// With `force_regimes`, index `i` is resampled until it lands in regime
/// `i % 4`, so `count = 4k` covers all four quadrants evenly.
pub fn generate_corpus(
    count: usize,
    ranges: &ParamRanges,
    master_seed: u64,
    out_dir: &Path,
    force_regimes: bool,
) -> Result<Manifest> {
    ranges.validate()?;
    fs::create_dir_all(out_dir)?;
    let (train_count, _) = split_counts(count);

    let results: Vec<Result<(usize, Regime)>> = (0..count)
        .into_par_iter()
        .map(|index| {
            let generated = generate_indexed(index, ranges, master_seed, force_regimes)?;
            let targets = centrality_targets(&generated.graph)?;

            let graph_path = out_dir.join(graph_file(index));
            let mut w = BufWriter::new(fs::File::create(&graph_path)?);
            write_graph(&generated.graph, Some(&generated.clusters), &mut w)?;

            let sidecar = Sidecar {
                params: generated.params.clone(),
                theta: generated.theta.clone(),
                p: generated.p.clone(),
                regime: generated.regime.label().to_string(),
                centrality: targets,
            };
            let sc = fs::File::create(out_dir.join(sidecar_file(index)))?;
            serde_json::to_writer(BufWriter::new(sc), &sidecar)
                .map_err(|e| Error::Format { line: 0, msg: e.to_string() })?;
            Ok((index, generated.regime))
        })
        .collect();

    let mut entries = Vec::with_capacity(count);
    for r in results {
        let (index, regime) = r?;
        entries.push(ManifestEntry {
            path: graph_file(index),
            split: if index < train_count { Split::Train } else { Split::Val },
            regime,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { entries };
    write_manifest(&manifest, &out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// One corpus entry; retries with a sub-derived seed until the realized
/// regime matches when forcing.
pub fn generate_indexed(
    index: usize,
    ranges: &ParamRanges,
    master_seed: u64,
    force_regimes: bool,
) -> Result<GeneratedGraph> {
    if !force_regimes {
        // Extreme corners (tiny k with a light tail) can yield graphs too
        // empty to mask or rank; resample those with a sub-derived seed.
        const MIN_EDGES: usize = 3;
        const MAX_ATTEMPTS: u64 = 64;
        for attempt in 0..MAX_ATTEMPTS {
            let seed = derive_seed2(master_seed, index as u64, attempt);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = sample_dcbm_params(ranges, &mut rng)?;
            params.seed = seed;
            let g = generate_dcbm(&params, &mut rng)?;
            if g.graph.m() >= MIN_EDGES {
                return Ok(g);
            }
        }
        return Err(Error::sampling(format!(
            "could not generate a usable graph at index {index} within {MAX_ATTEMPTS} attempts"
        )));
    }
    let want = Regime::ALL[index % 4];
    let dense = matches!(want, Regime::DensePowerlaw | Regime::DenseUniform);
    let mut constrained = ranges.clone();
    if dense {
        constrained.mean_degree = clamp_range(ranges.mean_degree, 18.0, f64::MAX);
        // The in-cluster probability saturates at 1, so high density is only
        // reachable with heavy theta mass, few clusters, and larger n; shrink
        // the sampling box toward that corner.
        let (klo, khi) = ranges.k;
        constrained.k = (klo.max(khi * 0.85), khi);
        let (nlo, nhi) = ranges.n;
        constrained.n = (nlo + (nhi - nlo) / 2, nhi);
        constrained.clusters = (ranges.clusters.0, ranges.clusters.1.min(4));
        constrained.p_div_q = clamp_range(ranges.p_div_q, 0.0, ranges.p_div_q.0 + 1.0);
    } else {
        constrained.mean_degree = clamp_range(ranges.mean_degree, 0.0, 11.0);
    }
    match want {
        Regime::DensePowerlaw | Regime::SparsePowerlaw => {
            constrained.gamma = clamp_range(ranges.gamma, 0.0, 4.0);
        }
        Regime::DenseUniform => {
            constrained.gamma = clamp_range(ranges.gamma, 4.2, 5.2);
        }
        Regime::SparseUniform => {
            constrained.gamma = clamp_range(ranges.gamma, 4.2, f64::MAX);
        }
    }
    const MAX_ATTEMPTS: u64 = 400;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = derive_seed2(master_seed, index as u64, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = sample_dcbm_params(&constrained, &mut rng)?;
        params.seed = seed;
        // The probability ceiling p_in <= 1 caps achievable density; skip
        // draws whose predicted mean degree cannot land in the wanted band
        // before paying for generation.
        let predicted = predicted_mean_degree(&params);
        if dense && predicted < 16.0 {
            continue;
        }
        if !dense && predicted > 12.5 {
            continue;
        }
        let g = generate_dcbm(&params, &mut rng)?;
        if g.regime == want {
            return Ok(g);
        }
    }
    Err(Error::sampling(format!(
        "could not realize regime {} at index {index} within {MAX_ATTEMPTS} attempts",
        want.label()
    )))
}

fn predicted_mean_degree(p: &DcbmParams) -> f64 {
    let mean_theta = p.k * truncated_pareto_mean(p.gamma, p.theta_min, p.theta_max);
    let kf = p.clusters as f64;
    let mix = p.p_div_q / kf + (kf - 1.0) / kf;
    p.n as f64 * mean_theta * mean_theta * mix * p.q_base
}

fn clamp_range(r: (f64, f64), lo: f64, hi: f64) -> (f64, f64) {
    let a = r.0.max(lo).min(hi);
    let b = r.1.min(hi).max(a);
    (a, b)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in &manifest.entries {
        writeln!(w, "{} {} {}", e.path, e.split.label(), e.regime.label())?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(p), Some(s), Some(r)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format { line: i + 1, msg: "expected `path split regime`".into() });
        };
        entries.push(ManifestEntry {
            path: p.to_string(),
            split: Split::parse(s)?,
            regime: Regime::parse(r)?,
        });
    }
    Ok(Manifest { entries })
}

/// A corpus graph loaded back into memory with its training targets.
#[derive(Debug, Clone)]
pub struct CorpusGraph {
    pub graph: Graph,
    pub clusters: Vec<usize>,
    pub targets: CentralityScores,
    pub regime: Regime,
}

/// Loads every manifest entry, returning `(train, val)` graph lists.
pub fn load_corpus(manifest_path: &Path) -> Result<(Vec<CorpusGraph>, Vec<CorpusGraph>)> {
    let dir = manifest_path.parent().map(PathBuf::from).unwrap_or_default();
    let manifest = read_manifest(manifest_path)?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for e in &manifest.entries {
        let graph_path = dir.join(&e.path);
        let (graph, clusters) = read_graph(BufReader::new(fs::File::open(&graph_path)?))?;
        let clusters = clusters.ok_or_else(|| {
            Error::config(format!("{} is missing its #clusters section", e.path))
        })?;
        let sidecar_path = graph_path.with_extension("json");
        let sidecar: Sidecar =
            serde_json::from_reader(BufReader::new(fs::File::open(&sidecar_path)?))
                .map_err(|err| Error::Format { line: 0, msg: err.to_string() })?;
        let cg = CorpusGraph { graph, clusters, targets: sidecar.centrality, regime: e.regime };
        match e.split {
            Split::Train => train.push(cg),
            Split::Val => val.push(cg),
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir()
            .join(format!("graphpre-synth-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn collapsed_ranges_give_exact_values() {
        // Configuration chosen so the probability ceiling does not bind and
        // no theta rescue kicks in.
        let ranges = ParamRanges {
            n: (400, 400),
            clusters: (2, 2),
            p_div_q: (4.0, 4.0),
            k: (1.0, 1.0),
            gamma: (3.0, 3.0),
            mean_degree: (10.0, 10.0),
            ..ParamRanges::default()
        };
        let p = sample_dcbm_params(&ranges, &mut rng(1)).unwrap();
        assert_eq!(p.n, 400);
        assert_eq!(p.clusters, 2);
        assert_eq!(p.p_div_q, 4.0);
        assert_eq!(p.k, 1.0);
        assert_eq!(p.gamma, 3.0);
        assert!(p.p_div_q * p.q_base <= 1.0 + 1e-12);
    }

    #[test]
    fn theta_rescue_preserves_target_density() {
        // A draw where the ceiling binds: the theta scale must rise so the
        // predicted mean degree still matches the target.
        let ranges = ParamRanges {
            n: (150, 150),
            clusters: (2, 2),
            p_div_q: (4.0, 4.0),
            k: (0.2, 0.2),
            gamma: (3.0, 3.0),
            mean_degree: (12.0, 12.0),
            ..ParamRanges::default()
        };
        let p = sample_dcbm_params(&ranges, &mut rng(2)).unwrap();
        assert!((p.p_div_q * p.q_base - 1.0).abs() < 1e-12, "ceiling should bind");
        assert!(p.k > 0.2, "theta scale should have been boosted");
        let mt = p.k * truncated_pareto_mean(p.gamma, p.theta_min, p.theta_max);
        let mix = p.p_div_q / 2.0 + 0.5;
        let predicted = p.n as f64 * mt * mt * mix * p.q_base;
        assert!((predicted - 12.0).abs() < 1e-9, "predicted mean degree {predicted}");
    }

    #[test]
    fn cluster_count_covers_full_range() {
        let ranges = ParamRanges::default();
        let mut seen = std::collections::HashSet::new();
        let mut r = rng(7);
        for _ in 0..1000 {
            let p = sample_dcbm_params(&ranges, &mut r).unwrap();
            seen.insert(p.clusters);
            assert!((2.0..=10.0).contains(&p.gamma));
        }
        for k in 2..=10 {
            assert!(seen.contains(&k), "cluster count {k} never drawn");
        }
    }

    #[test]
    fn inverted_range_is_rejected() {
        let ranges = ParamRanges { gamma: (10.0, 2.0), ..ParamRanges::default() };
        assert!(matches!(sample_dcbm_params(&ranges, &mut rng(0)), Err(Error::Config(_))));
    }

    #[test]
    fn single_block_uniform_theta_matches_bernoulli_mean() {
        // theta = 1, single cluster, p = 0.15: plain Bernoulli graph. The
        // pooled edge frequency over 500 draws must sit within 3 standard
        // errors of p.
        let n = 20;
        let p_edge = 0.15;
        let theta = vec![1.0; n];
        let p = vec![vec![p_edge]];
        let clusters = vec![0usize; n];
        let mut r = rng(11);
        let mut edges = 0usize;
        let samples = 500;
        for _ in 0..samples {
            edges += sample_edges(&theta, &p, &clusters, &mut r).unwrap().m();
        }
        let trials = (samples * n * (n - 1) / 2) as f64;
        let freq = edges as f64 / trials;
        let se = (p_edge * (1.0 - p_edge) / trials).sqrt();
        assert!(
            (freq - p_edge).abs() < 3.0 * se,
            "freq {freq} vs p {p_edge} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn zero_inter_cluster_probability_separates_clusters() {
        let n = 40;
        let theta = vec![1.0; n];
        let p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let clusters: Vec<usize> = (0..n).map(|v| v % 2).collect();
        let g = sample_edges(&theta, &p, &clusters, &mut rng(3)).unwrap();
        for (u, v) in g.edges() {
            assert_eq!(clusters[u as usize], clusters[v as usize]);
        }
    }

    #[test]
    fn zero_theta_yields_empty_graph() {
        let theta = vec![0.0; 10];
        let p = vec![vec![1.0]];
        let clusters = vec![0usize; 10];
        let g = sample_edges(&theta, &p, &clusters, &mut rng(5)).unwrap();
        assert_eq!(g.m(), 0);
    }

    #[test]
    fn split_counts_match_corpus_proportions() {
        assert_eq!(split_counts(1024), (900, 124));
        assert_eq!(split_counts(2048), (1924, 124));
        assert_eq!(split_counts(50), (44, 6));
        assert_eq!(split_counts(2), (1, 1));
        assert_eq!(split_counts(1), (1, 0));
    }

    #[test]
    fn higher_gamma_lowers_degree_variance() {
        let base = ParamRanges {
            n: (200, 200),
            clusters: (2, 2),
            p_div_q: (4.0, 4.0),
            k: (1.0, 1.0),
            mean_degree: (12.0, 12.0),
            ..ParamRanges::default()
        };
        let var_at = |gamma: f64, seed: u64| {
            let ranges = ParamRanges { gamma: (gamma, gamma), ..base.clone() };
            let mut acc = 0.0;
            let mut r = rng(seed);
            for _ in 0..50 {
                let mut params = sample_dcbm_params(&ranges, &mut r).unwrap();
                params.seed = 0;
                let g = generate_dcbm(&params, &mut r).unwrap();
                let degs: Vec<f64> = (0..g.graph.n()).map(|v| g.graph.degree(v) as f64).collect();
                let mean = degs.iter().sum::<f64>() / degs.len() as f64;
                acc += degs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / degs.len() as f64;
            }
            acc / 50.0
        };
        let heavy = var_at(2.0, 21);
        let uniform = var_at(10.0, 22);
        assert!(
            heavy > uniform,
            "variance should fall as gamma rises: gamma=2 gives {heavy}, gamma=10 gives {uniform}"
        );
    }

    #[test]
    fn corpus_is_byte_identical_across_runs() {
        let ranges = ParamRanges { n: (20, 40), mean_degree: (4.0, 8.0), ..ParamRanges::default() };
        let d1 = tmp_dir("det1");
        let d2 = tmp_dir("det2");
        generate_corpus(6, &ranges, 99, &d1, false).unwrap();
        generate_corpus(6, &ranges, 99, &d2, false).unwrap();
        for i in 0..6 {
            for name in [graph_file(i), sidecar_file(i)] {
                let a = fs::read(d1.join(&name)).unwrap();
                let b = fs::read(d2.join(&name)).unwrap();
                assert_eq!(a, b, "{name} differs between runs");
            }
        }
        assert_eq!(
            fs::read(d1.join("manifest.txt")).unwrap(),
            fs::read(d2.join("manifest.txt")).unwrap()
        );
        let _ = fs::remove_dir_all(&d1);
        let _ = fs::remove_dir_all(&d2);
    }

    #[test]
    fn forced_regimes_cover_all_four() {
        let ranges = ParamRanges { n: (60, 120), ..ParamRanges::default() };
        let dir = tmp_dir("regimes");
        let manifest = generate_corpus(4, &ranges, 42, &dir, true).unwrap();
        let regimes: std::collections::HashSet<Regime> =
            manifest.entries.iter().map(|e| e.regime).collect();
        assert_eq!(regimes.len(), 4);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn corpus_roundtrips_through_loader() {
        let ranges = ParamRanges { n: (15, 30), mean_degree: (4.0, 8.0), ..ParamRanges::default() };
        let dir = tmp_dir("load");
        let manifest = generate_corpus(5, &ranges, 17, &dir, false).unwrap();
        assert_eq!(manifest.train().count(), 4);
        assert_eq!(manifest.val().count(), 1);
        let (train, val) = load_corpus(&dir.join("manifest.txt")).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(val.len(), 1);
        for cg in train.iter().chain(&val) {
            assert_eq!(cg.clusters.len(), cg.graph.n());
            assert_eq!(cg.targets.n(), cg.graph.n());
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn pair_class_frequencies_match_probabilities() {
        // Blocked theta values produce a handful of distinct pair
        // probabilities; each class's empirical frequency over 500 samples
        // must sit within 3 binomial standard errors.
        let n = 24;
        let theta: Vec<f64> = (0..n).map(|v| [0.5, 0.9, 1.4][v % 3]).collect();
        let q = 0.12;
        let p = vec![vec![3.0 * q, q], vec![q, 3.0 * q]];
        let clusters: Vec<usize> = (0..n).map(|v| (v / 12) % 2).collect();
        let samples = 500;

        let mut counts: std::collections::HashMap<u64, (usize, usize)> = Default::default();
        let mut r = rng(33);
        for _ in 0..samples {
            let g = sample_edges(&theta, &p, &clusters, &mut r).unwrap();
            for u in 0..n {
                for v in (u + 1)..n {
                    let prob = (theta[u] * theta[v] * p[clusters[u]][clusters[v]]).clamp(0.0, 1.0);
                    let key = prob.to_bits();
                    let e = counts.entry(key).or_insert((0, 0));
                    e.1 += 1;
                    if g.has_edge(u, v) {
                        e.0 += 1;
                    }
                }
            }
        }
        assert!(counts.len() >= 8, "expected several distinct pair classes");
        for (&key, &(hits, trials)) in &counts {
            let prob = f64::from_bits(key);
            let freq = hits as f64 / trials as f64;
            let se = (prob * (1.0 - prob) / trials as f64).sqrt();
            assert!(
                (freq - prob).abs() <= 3.0 * se.max(1e-12),
                "class p={prob}: freq {freq} over {trials} trials"
            );
        }
    }
}
