//! The encoder and task decoders: feature embedding, stacked modified GCN
//! blocks, per-task layer mixing, pairwise NTN decoders, per-centrality
//! ranking MLPs, and the attention-based cluster aggregator.
//!
//! Every learnable array lives in a [`ParamStore`] under a unique name, so
//! the optimizer, the checkpoint format, and the freeze logic all address
//! parameters the same way.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::centrality::CentralityKind;
use crate::error::{Error, Result};
use crate::graph::NormAdjacency;
use crate::tensor::{NodeId, Tape, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// NTN output width (slice count of the bilinear tensor).
pub const NTN_SLICES: usize = 4;
/// Input feature count.
pub const FEATURE_DIM: usize = 4;

/// Activation used inside the GCN blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn label(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Activation> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden_dim: 64, layers: 3, activation: Activation::Relu }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 4 {
            return Err(Error::config("hidden_dim must be at least 4"));
        }
        if self.layers < 1 {
            return Err(Error::config("layers must be at least 1"));
        }
        Ok(())
    }

    /// Flat key/value echo for checkpoints and run configs.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("model.hidden_dim".to_string(), self.hidden_dim.to_string()),
            ("model.layers".to_string(), self.layers.to_string()),
            ("model.activation".to_string(), self.activation.label().to_string()),
        ])
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<ModelConfig> {
        let get = |k: &str| {
            map.get(k).ok_or_else(|| Error::config(format!("missing config key `{k}`")))
        };
        let cfg = ModelConfig {
            hidden_dim: get("model.hidden_dim")?
                .parse()
                .map_err(|_| Error::config("bad model.hidden_dim"))?,
            layers: get("model.layers")?.parse().map_err(|_| Error::config("bad model.layers"))?,
            activation: Activation::parse(get("model.activation")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields on which a checkpoint and a requested configuration differ.
    pub fn differing_fields(&self, other: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.hidden_dim != other.hidden_dim {
            out.push("model.hidden_dim".to_string());
        }
        if self.layers != other.layers {
            out.push("model.layers".to_string());
        }
        if self.activation != other.activation {
            out.push("model.activation".to_string());
        }
        out
    }
}

/// The three self-supervised tasks plus the downstream adaptation pathway;
/// each owns its own layer-mixing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Rec,
    Rank,
    Cluster,
    Down,
}

impl Task {
    pub const PRETRAIN: [Task; 3] = [Task::Rec, Task::Rank, Task::Cluster];

    pub fn name(self) -> &'static str {
        match self {
            Task::Rec => "rec",
            Task::Rank => "rank",
            Task::Cluster => "cluster",
            Task::Down => "down",
        }
    }
}

/// Named learnable arrays. BTreeMap keeps every traversal deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn from_map(map: BTreeMap<String, Tensor>) -> Self {
        ParamStore { map }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn map(&self) -> &BTreeMap<String, Tensor> {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Registers every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamNodes {
        let mut ids = BTreeMap::new();
        for (name, value) in &self.map {
            ids.insert(name.clone(), tape.leaf(value.clone()));
        }
        ParamNodes { ids }
    }

    /// Gradients for every registered parameter after a backward pass;
    /// parameters off the loss path get zeros.
    pub fn grads(&self, tape: &Tape, nodes: &ParamNodes) -> BTreeMap<String, Tensor> {
        nodes.ids.iter().map(|(name, &id)| (name.clone(), tape.grad(id))).collect()
    }
}

/// Tape handles for registered parameters.
pub struct ParamNodes {
    ids: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    /// Assembles handles from explicit `(name, id)` pairs, for callers that
    /// register leaves themselves (gradient checking, harnesses).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        ParamNodes { ids: pairs.into_iter().collect() }
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` not registered")))
    }
}

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
}

fn init_ntn<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) {
    // The bilinear form contracts d*d products per slice, so its effective
    // fan-in is d^2; slice-wise xavier would saturate the tanh at init.
    let bound = (6.0 / (d * d + d) as f64).sqrt();
    let data = (0..NTN_SLICES * d * d).map(|_| rng.random_range(-bound..bound)).collect();
    store.insert(format!("{prefix}.w"), Tensor::new(vec![NTN_SLICES, d, d], data));
    store.insert(format!("{prefix}.v"), xavier(NTN_SLICES, 2 * d, rng));
    store.insert(format!("{prefix}.b"), Tensor::vector(vec![0.0; NTN_SLICES]));
    store.insert(format!("{prefix}.head_w"), xavier(NTN_SLICES, 1, rng));
    store.insert(format!("{prefix}.head_b"), Tensor::vector(vec![0.0]));
}

fn init_mixing<R: Rng>(store: &mut ParamStore, task: Task, cfg: &ModelConfig, _rng: &mut R) {
    // psi starts at zero (uniform attention over layers); alpha starts at 1.
    store.insert(format!("mix.{}.psi", task.name()), Tensor::vector(vec![0.0; cfg.layers]));
    store.insert(format!("mix.{}.alpha", task.name()), Tensor::vector(vec![1.0; cfg.hidden_dim]));
}

fn init_gcn_block<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) {
    store.insert(format!("{prefix}.w1"), xavier(d, d, rng));
    store.insert(format!("{prefix}.w2"), xavier(d, d, rng));
    store.insert(format!("{prefix}.bn_gamma"), Tensor::vector(vec![1.0; d]));
    store.insert(format!("{prefix}.bn_kappa"), Tensor::vector(vec![0.0; d]));
}

/// Initializes every pre-training parameter: embedding, `L` GCN blocks,
/// per-task mixing, both NTN decoders, the four ranking heads, and the
/// cluster attention aggregator.
pub fn init_pretrain_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.hidden_dim;
    let mut store = ParamStore::new();
    store.insert("embed.e", xavier(FEATURE_DIM, d, &mut rng));
    for l in 0..cfg.layers {
        init_gcn_block(&mut store, &format!("gcn.{l}"), d, &mut rng);
    }
    for task in Task::PRETRAIN {
        init_mixing(&mut store, task, cfg, &mut rng);
    }
    init_ntn(&mut store, "ntn.rec", d, &mut rng);
    init_ntn(&mut store, "ntn.cluster", d, &mut rng);
    let hidden = d / 2;
    for kind in CentralityKind::ALL {
        let p = format!("rank.{}", kind.name());
        store.insert(format!("{p}.w1"), xavier(d, hidden, &mut rng));
        store.insert(format!("{p}.b1"), Tensor::vector(vec![0.0; hidden]));
        store.insert(format!("{p}.w2"), xavier(hidden, 1, &mut rng));
        store.insert(format!("{p}.b2"), Tensor::vector(vec![0.0]));
    }
    store.insert("cluster.attn.w", xavier(d, d, &mut rng));
    store.insert("cluster.attn.q", xavier(1, d, &mut rng));
    Ok(store)
}

/// Parameter names frozen below a fix-tune boundary `b`: nothing at 0, the
/// embedding at 1, the embedding plus the first `b - 1` GCN blocks above
/// that. Task mixing and decoder heads are never frozen.
pub fn frozen_below(boundary: usize, cfg: &ModelConfig) -> Result<BTreeSet<String>> {
    if boundary > cfg.layers + 1 {
        return Err(Error::config(format!(
            "boundary {boundary} out of range 0..={}",
            cfg.layers + 1
        )));
    }
    let mut out = BTreeSet::new();
    if boundary >= 1 {
        out.insert("embed.e".to_string());
    }
    for l in 0..boundary.saturating_sub(1) {
        for suffix in ["w1", "w2", "bn_gamma", "bn_kappa"] {
            out.insert(format!("gcn.{l}.{suffix}"));
        }
    }
    Ok(out)
}

/// `H0 = tanh(X E)` for the normalized n x 4 feature matrix.
pub fn embed_features(tape: &mut Tape, pn: &ParamNodes, x: &Tensor) -> Result<NodeId> {
    if x.shape().len() != 2 || x.shape()[1] != FEATURE_DIM {
        return Err(Error::shape("embed_features", format!("expected n x 4, got {:?}", x.shape())));
    }
    let x = tape.leaf(x.clone());
    let e = pn.id("embed.e")?;
    let xe = tape.matmul(x, e)?;
    Ok(tape.tanh(xe))
}

/// One modified GCN block:
/// `H' = act(Adj . batch_norm(act(H W1) W2))`.
pub fn gcn_block(
    tape: &mut Tape,
    pn: &ParamNodes,
    prefix: &str,
    activation: Activation,
    h: NodeId,
    adj: &Arc<NormAdjacency>,
) -> Result<NodeId> {
    let w1 = pn.id(&format!("{prefix}.w1"))?;
    let w2 = pn.id(&format!("{prefix}.w2"))?;
    let gamma = pn.id(&format!("{prefix}.bn_gamma"))?;
    let kappa = pn.id(&format!("{prefix}.bn_kappa"))?;
    let z1 = tape.matmul(h, w1)?;
    let a1 = activation.apply(tape, z1);
    let z2 = tape.matmul(a1, w2)?;
    let bn = tape.batch_norm(z2, gamma, kappa, BN_EPS)?;
    let agg = tape.spmm(adj, bn)?;
    Ok(activation.apply(tape, agg))
}

/// Runs the embedding plus all `L` blocks, returning every block output
/// `[H1 .. HL]` for task mixing.
pub fn encode(
    tape: &mut Tape,
    pn: &ParamNodes,
    cfg: &ModelConfig,
    features: &Tensor,
    adj: &Arc<NormAdjacency>,
) -> Result<Vec<NodeId>> {
    let mut h = embed_features(tape, pn, features)?;
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        h = gcn_block(tape, pn, &format!("gcn.{l}"), cfg.activation, h, adj)?;
        layers.push(h);
    }
    Ok(layers)
}

/// Task representation `F = alpha ⊙ sum_l beta_l H_l` with
/// `beta = softmax(psi)`.
pub fn mix_layers(
    tape: &mut Tape,
    pn: &ParamNodes,
    task: Task,
    layers: &[NodeId],
) -> Result<NodeId> {
    if layers.is_empty() {
        return Err(Error::contract("mix_layers needs at least one layer"));
    }
    let psi = pn.id(&format!("mix.{}.psi", task.name()))?;
    let alpha = pn.id(&format!("mix.{}.alpha", task.name()))?;
    let beta = tape.softmax(psi);
    let mut acc: Option<NodeId> = None;
    for (l, &h) in layers.iter().enumerate() {
        let b = tape.index_scalar(beta, l)?;
        let term = tape.scale_by_scalar(h, b)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    tape.mul_row_broadcast(acc.unwrap(), alpha)
}

/// Mixing weights `beta = softmax(psi)` straight from the store, for logging.
pub fn mixing_weights(store: &ParamStore, task: Task) -> Result<Vec<f64>> {
    let psi = store.get(&format!("mix.{}.psi", task.name()))?;
    let max = psi.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = psi.data().iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// NTN core on row-aligned pairs:
/// `tanh(u^T W^{[1:s]} v + V [u; v] + b)`, shape `B x 4`.
pub fn ntn_forward(
    tape: &mut Tape,
    pn: &ParamNodes,
    prefix: &str,
    u_rows: NodeId,
    v_rows: NodeId,
) -> Result<NodeId> {
    let w = pn.id(&format!("{prefix}.w"))?;
    let v_mat = pn.id(&format!("{prefix}.v"))?;
    let b = pn.id(&format!("{prefix}.b"))?;
    let bil = tape.bilinear(u_rows, v_rows, w)?;
    let cat = tape.concat_cols(u_rows, v_rows)?;
    let lin = tape.matmul_bt(cat, v_mat)?;
    let pre = tape.add(bil, lin)?;
    let pre = tape.add_row_broadcast(pre, b)?;
    Ok(tape.tanh(pre))
}

/// Scalar head over the NTN output, `B x 1` logits.
pub fn ntn_head(tape: &mut Tape, pn: &ParamNodes, prefix: &str, ntn_out: NodeId) -> Result<NodeId> {
    let hw = pn.id(&format!("{prefix}.head_w"))?;
    let hb = pn.id(&format!("{prefix}.head_b"))?;
    let z = tape.matmul(ntn_out, hw)?;
    tape.add_row_broadcast(z, hb)
}

/// Link logits for node pairs, symmetrized over pair order:
/// `z = (head(NTN(u, v)) + head(NTN(v, u))) / 2`.
pub fn pair_logits_symmetric(
    tape: &mut Tape,
    pn: &ParamNodes,
    prefix: &str,
    f: NodeId,
    pairs: &[(u32, u32)],
) -> Result<NodeId> {
    let us: Vec<usize> = pairs.iter().map(|&(u, _)| u as usize).collect();
    let vs: Vec<usize> = pairs.iter().map(|&(_, v)| v as usize).collect();
    let u_rows = tape.gather_rows(f, &us)?;
    let v_rows = tape.gather_rows(f, &vs)?;
    let uv = ntn_forward(tape, pn, prefix, u_rows, v_rows)?;
    let uv = ntn_head(tape, pn, prefix, uv)?;
    let vu = ntn_forward(tape, pn, prefix, v_rows, u_rows)?;
    let vu = ntn_head(tape, pn, prefix, vu)?;
    let sum = tape.add(uv, vu)?;
    Ok(tape.scale(sum, 0.5))
}

/// Per-centrality rank score MLP (`d -> d/2 -> 1`), applied to `B x d` rows.
pub fn rank_scores(
    tape: &mut Tape,
    pn: &ParamNodes,
    kind: CentralityKind,
    rows: NodeId,
) -> Result<NodeId> {
    let p = format!("rank.{}", kind.name());
    let w1 = pn.id(&format!("{p}.w1"))?;
    let b1 = pn.id(&format!("{p}.b1"))?;
    let w2 = pn.id(&format!("{p}.w2"))?;
    let b2 = pn.id(&format!("{p}.b2"))?;
    let z1 = tape.matmul(rows, w1)?;
    let z1 = tape.add_row_broadcast(z1, b1)?;
    let a1 = tape.relu(z1);
    let z2 = tape.matmul(a1, w2)?;
    tape.add_row_broadcast(z2, b2)
}

/// Attention-pooled cluster embedding over member rows:
/// weights `softmax(q . tanh(W_a x_v))`, output `1 x d`.
pub fn cluster_embed(tape: &mut Tape, pn: &ParamNodes, member_rows: NodeId) -> Result<NodeId> {
    let members = tape.value(member_rows).shape()[0];
    if members == 0 {
        return Err(Error::contract("cluster_embed requires at least one member"));
    }
    let w_a = pn.id("cluster.attn.w")?;
    let q = pn.id("cluster.attn.q")?;
    let proj = tape.matmul(member_rows, w_a)?;
    let proj = tape.tanh(proj);
    let qt = tape.reshape(q, vec![tape.value(q).numel(), 1])?;
    let scores = tape.matmul(proj, qt)?;
    let scores = tape.reshape(scores, vec![1, members])?;
    let weights = tape.softmax(scores);
    tape.matmul(weights, member_rows)
}

/// Similarity logits of each target node against every cluster embedding,
/// shape `N x K`, fed to a softmax cross-entropy over clusters.
///
/// The bilinear term against a fixed cluster embedding reduces to
/// `X (W_i e_c)`, so cost stays linear in targets instead of quadratic.
pub fn cluster_logits(
    tape: &mut Tape,
    pn: &ParamNodes,
    f_cluster: NodeId,
    target_nodes: &[usize],
    cluster_embeds: &[NodeId],
) -> Result<NodeId> {
    if target_nodes.is_empty() || cluster_embeds.is_empty() {
        return Err(Error::contract("cluster_logits requires targets and clusters"));
    }
    let d = tape.value(f_cluster).shape()[1];
    let rows = tape.gather_rows(f_cluster, target_nodes)?;
    let w = pn.id("ntn.cluster.w")?;
    let v_mat = pn.id("ntn.cluster.v")?;
    let b = pn.id("ntn.cluster.b")?;
    let v_left = tape.slice_cols(v_mat, 0, d)?;
    let v_right = tape.slice_cols(v_mat, d, d)?;
    // Node-side linear term, shared across clusters.
    let lin_left = tape.matmul_bt(rows, v_left)?;
    let mut w_slices = Vec::with_capacity(NTN_SLICES);
    for i in 0..NTN_SLICES {
        w_slices.push(tape.slice_tensor3(w, i)?);
    }

    let mut cols: Option<NodeId> = None;
    for &e_c in cluster_embeds {
        let e_t = tape.reshape(e_c, vec![d, 1])?;
        let mut bil: Option<NodeId> = None;
        for &w_i in &w_slices {
            let we = tape.matmul(w_i, e_t)?;
            let col = tape.matmul(rows, we)?;
            bil = Some(match bil {
                Some(acc) => tape.concat_cols(acc, col)?,
                None => col,
            });
        }
        let right = tape.matmul_bt(e_c, v_right)?;
        let pre = tape.add(bil.unwrap(), lin_left)?;
        let pre = tape.add_row_broadcast(pre, right)?;
        let pre = tape.add_row_broadcast(pre, b)?;
        let act = tape.tanh(pre);
        let logit = ntn_head(tape, pn, "ntn.cluster", act)?;
        cols = Some(match cols {
            Some(acc) => tape.concat_cols(acc, logit)?,
            None => logit,
        });
    }
    Ok(cols.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feat::assemble_features;
    use crate::graph::{norm_adjacency, Graph};
    use crate::tensor::grad_check;

    fn toy_graph() -> Graph {
        Graph::from_edge_list(
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 4), (2, 5), (5, 6), (6, 0)],
            7,
        )
        .unwrap()
    }

    fn features_tensor(g: &Graph) -> Tensor {
        let f = assemble_features(g);
        Tensor::matrix(g.n(), FEATURE_DIM, f.matrix())
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig { hidden_dim: 8, layers: 2, activation: Activation::Relu }
    }

    #[test]
    fn embed_zero_weights_give_zero_output() {
        let cfg = small_cfg();
        let mut store = init_pretrain_params(&cfg, 1).unwrap();
        store.insert("embed.e", Tensor::matrix(FEATURE_DIM, cfg.hidden_dim, vec![0.0; 4 * 8]));
        let g = toy_graph();
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let h0 = embed_features(&mut tape, &pn, &features_tensor(&g)).unwrap();
        assert!(tape.value(h0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_output_bounded_by_tanh() {
        let cfg = small_cfg();
        let store = init_pretrain_params(&cfg, 2).unwrap();
        let g = toy_graph();
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let h0 = embed_features(&mut tape, &pn, &features_tensor(&g)).unwrap();
        assert!(tape.value(h0).data().iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn encode_produces_one_output_per_layer() {
        let cfg = ModelConfig { layers: 1, ..small_cfg() };
        let store = init_pretrain_params(&cfg, 3).unwrap();
        let g = toy_graph();
        let adj = Arc::new(norm_adjacency(&g));
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let layers = encode(&mut tape, &pn, &cfg, &features_tensor(&g), &adj).unwrap();
        assert_eq!(layers.len(), 1);
        assert_eq!(tape.value(layers[0]).shape(), &[g.n(), cfg.hidden_dim]);
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let cfg = small_cfg();
        let store = init_pretrain_params(&cfg, 4).unwrap();
        let g = toy_graph();
        let perm = vec![3, 6, 0, 2, 5, 1, 4];
        let gp = g.permuted(&perm).unwrap();

        let run = |graph: &Graph| {
            let adj = Arc::new(norm_adjacency(graph));
            let mut tape = Tape::new();
            let pn = store.register(&mut tape);
            let layers = encode(&mut tape, &pn, &cfg, &features_tensor(graph), &adj).unwrap();
            let f = mix_layers(&mut tape, &pn, Task::Rec, &layers).unwrap();
            tape.value(f).data().to_vec()
        };
        let base = run(&g);
        let permuted = run(&gp);
        let d = cfg.hidden_dim;
        for v in 0..g.n() {
            for j in 0..d {
                let a = base[v * d + j];
                let b = permuted[perm[v] * d + j];
                assert!((a - b).abs() < 1e-9, "node {v} dim {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mixing_uniform_psi_gives_equal_weights() {
        let cfg = small_cfg();
        let store = init_pretrain_params(&cfg, 5).unwrap();
        let beta = mixing_weights(&store, Task::Rank).unwrap();
        assert_eq!(beta.len(), cfg.layers);
        for b in &beta {
            assert!((b - 1.0 / cfg.layers as f64).abs() < 1e-12);
        }
        assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixing_saturates_toward_dominant_layer() {
        let cfg = small_cfg();
        let mut store = init_pretrain_params(&cfg, 6).unwrap();
        store.insert("mix.rec.psi", Tensor::vector(vec![30.0, -30.0]));
        let g = toy_graph();
        let adj = Arc::new(norm_adjacency(&g));
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let layers = encode(&mut tape, &pn, &cfg, &features_tensor(&g), &adj).unwrap();
        let f = mix_layers(&mut tape, &pn, Task::Rec, &layers).unwrap();
        let h1 = tape.value(layers[0]).data().to_vec();
        let fv = tape.value(f).data().to_vec();
        for (a, b) in h1.iter().zip(&fv) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mixing_identity_with_single_layer_and_unit_alpha() {
        let cfg = ModelConfig { layers: 1, ..small_cfg() };
        let store = init_pretrain_params(&cfg, 7).unwrap();
        let g = toy_graph();
        let adj = Arc::new(norm_adjacency(&g));
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let layers = encode(&mut tape, &pn, &cfg, &features_tensor(&g), &adj).unwrap();
        let f = mix_layers(&mut tape, &pn, Task::Cluster, &layers).unwrap();
        assert_eq!(tape.value(f).data(), tape.value(layers[0]).data());
    }

    #[test]
    fn mixing_weights_shift_invariant() {
        let cfg = ModelConfig { layers: 3, ..small_cfg() };
        let mut store = init_pretrain_params(&cfg, 8).unwrap();
        store.insert("mix.rec.psi", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let a = mixing_weights(&store, Task::Rec).unwrap();
        store.insert("mix.rec.psi", Tensor::vector(vec![5.3, 3.8, 7.0]));
        let b = mixing_weights(&store, Task::Rec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ntn_zero_params_give_zero_output() {
        let cfg = small_cfg();
        let d = cfg.hidden_dim;
        let mut store = init_pretrain_params(&cfg, 9).unwrap();
        store.insert("ntn.rec.w", Tensor::new(vec![NTN_SLICES, d, d], vec![0.0; NTN_SLICES * d * d]));
        store.insert("ntn.rec.v", Tensor::matrix(NTN_SLICES, 2 * d, vec![0.0; NTN_SLICES * 2 * d]));
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let u = tape.leaf(Tensor::matrix(3, d, (0..3 * d).map(|i| i as f64 * 0.01).collect()));
        let v = tape.leaf(Tensor::matrix(3, d, (0..3 * d).map(|i| i as f64 * -0.02).collect()));
        let out = ntn_forward(&mut tape, &pn, "ntn.rec", u, v).unwrap();
        assert!(tape.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ntn_output_bounded_by_tanh() {
        let cfg = small_cfg();
        let d = cfg.hidden_dim;
        let store = init_pretrain_params(&cfg, 10).unwrap();
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let u = tape.leaf(Tensor::matrix(4, d, (0..4 * d).map(|i| (i as f64 * 0.37).sin()).collect()));
        let v = tape.leaf(Tensor::matrix(4, d, (0..4 * d).map(|i| (i as f64 * 0.53).cos()).collect()));
        let out = ntn_forward(&mut tape, &pn, "ntn.cluster", u, v).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, NTN_SLICES]);
        assert!(tape.value(out).data().iter().all(|&x| (-1.0..1.0).contains(&x)));
    }

    #[test]
    fn rank_zero_weights_scores_zero() {
        let cfg = small_cfg();
        let d = cfg.hidden_dim;
        let mut store = init_pretrain_params(&cfg, 11).unwrap();
        store.insert("rank.closeness.w1", Tensor::matrix(d, d / 2, vec![0.0; d * d / 2]));
        store.insert("rank.closeness.w2", Tensor::matrix(d / 2, 1, vec![0.0; d / 2]));
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let rows = tape.leaf(Tensor::matrix(5, d, (0..5 * d).map(|i| i as f64 * 0.1).collect()));
        let s = rank_scores(&mut tape, &pn, CentralityKind::Closeness, rows).unwrap();
        assert!(tape.value(s).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rank_heads_exist_for_all_four_centralities() {
        let store = init_pretrain_params(&small_cfg(), 12).unwrap();
        for kind in CentralityKind::ALL {
            assert!(store.contains(&format!("rank.{}.w1", kind.name())));
        }
    }

    #[test]
    fn cluster_embed_single_member_is_identity() {
        let cfg = small_cfg();
        let d = cfg.hidden_dim;
        let store = init_pretrain_params(&cfg, 13).unwrap();
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let row: Vec<f64> = (0..d).map(|i| (i as f64).sin()).collect();
        let members = tape.leaf(Tensor::matrix(1, d, row.clone()));
        let e = cluster_embed(&mut tape, &pn, members).unwrap();
        for (a, b) in tape.value(e).data().iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cluster_embed_identical_members_is_that_row() {
        let cfg = small_cfg();
        let d = cfg.hidden_dim;
        let store = init_pretrain_params(&cfg, 14).unwrap();
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let row: Vec<f64> = (0..d).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&row);
        }
        let members = tape.leaf(Tensor::matrix(5, d, data));
        let e = cluster_embed(&mut tape, &pn, members).unwrap();
        for (a, b) in tape.value(e).data().iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_sets_match_boundaries() {
        let cfg = ModelConfig { layers: 3, ..small_cfg() };
        assert!(frozen_below(0, &cfg).unwrap().is_empty());
        let b1 = frozen_below(1, &cfg).unwrap();
        assert_eq!(b1, BTreeSet::from(["embed.e".to_string()]));
        let b4 = frozen_below(4, &cfg).unwrap();
        assert_eq!(b4.len(), 1 + 3 * 4);
        assert!(frozen_below(5, &cfg).is_err());
    }

    #[test]
    fn full_composite_passes_grad_check() {
        // Encoder + mixing + one NTN pair head on a small graph, checked
        // against central differences across every parameter family.
        let cfg = small_cfg();
        let store = init_pretrain_params(&cfg, 15).unwrap();
        let g = toy_graph();
        let adj = Arc::new(norm_adjacency(&g));
        let feats = features_tensor(&g);
        let names: Vec<String> = store.map().keys().cloned().collect();
        let tensors: Vec<Tensor> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
        let pairs = [(0u32, 2u32), (1, 3), (4, 6)];
        let labels = [1.0, 0.0, 1.0];

        let err = grad_check(
            |tape, ids| {
                let pn = ParamNodes {
                    ids: names.iter().cloned().zip(ids.iter().copied()).collect(),
                };
                let layers = encode(tape, &pn, &cfg, &feats, &adj)?;
                let f_rec = mix_layers(tape, &pn, Task::Rec, &layers)?;
                let logits = pair_logits_symmetric(tape, &pn, "ntn.rec", f_rec, &pairs)?;
                tape.bce_with_logits_mean(logits, &labels)
            },
            &tensors,
            1e-5,
            4,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel error {err}");
    }
}
