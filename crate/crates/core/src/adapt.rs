//! Downstream adaptation behind a fix-tune boundary.
//!
//! A pre-trained checkpoint is loaded with boundary `b`: everything strictly
//! below `b` (the feature embedding first, then GCN blocks bottom-up) is
//! frozen; everything above is fine-tuned together with a fresh task head
//! and fresh layer-mixing parameters. Downstream tasks are synthetic
//! desk-scale analogs: node labels from planted clusters, link existence
//! from held-out edges, graph labels from generation regimes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feat::assemble_features;
use crate::graph::{norm_adjacency, Graph, NormAdjacency};
use crate::model::{
    encode, frozen_below, gcn_block, init_pretrain_params, mix_layers, ntn_forward, ModelConfig,
    ParamNodes, ParamStore, Task, FEATURE_DIM, NTN_SLICES,
};
use crate::seeds::{derive_seed, derive_seed2};
use crate::synth::{generate_indexed, ParamRanges, Regime};
use crate::tensor::{AdamState, NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Node,
    Link,
    Graph,
}

impl TaskKind {
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Node => "node",
            TaskKind::Link => "link",
            TaskKind::Graph => "graph",
        }
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        match s {
            "node" => Ok(TaskKind::Node),
            "link" => Ok(TaskKind::Link),
            "graph" => Ok(TaskKind::Graph),
            other => Err(Error::config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// Task payload: graphs, labels, and a disjoint train/test split.
#[derive(Debug, Clone)]
pub enum TaskData {
    Node { graph: Graph, labels: Vec<usize> },
    Link { graph: Graph, pairs: Vec<(u32, u32)>, labels: Vec<usize> },
    Graph { graphs: Vec<Graph>, labels: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct DownstreamTask {
    pub kind: TaskKind,
    pub num_classes: usize,
    pub data: TaskData,
    /// Indices into the labeled items (nodes, pairs, or graphs).
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl DownstreamTask {
    pub fn labels(&self) -> &[usize] {
        match &self.data {
            TaskData::Node { labels, .. } => labels,
            TaskData::Link { labels, .. } => labels,
            TaskData::Graph { labels, .. } => labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let labels = self.labels();
        let train: BTreeSet<usize> = self.train.iter().copied().collect();
        if self.test.iter().any(|i| train.contains(i)) {
            return Err(Error::contract("train and test splits overlap"));
        }
        if self.train.len() + self.test.len() != labels.len() {
            return Err(Error::contract("split does not cover every labeled item"));
        }
        if labels.iter().any(|&l| l >= self.num_classes) {
            return Err(Error::contract("label outside [0, num_classes)"));
        }
        Ok(())
    }
}

/// Stratified split: `rate` of each class (at least one item) goes to the
/// first returned list.
fn stratified_split<R: Rng>(
    labels: &[usize],
    rate: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (_, mut members) in by_class {
        // Classes with two or more items keep at least one on each side.
        let cap = if members.len() >= 2 { members.len() - 1 } else { members.len() };
        let take = ((rate * members.len() as f64).round() as usize).clamp(1, cap);
        for i in 0..take {
            let j = rng.random_range(i..members.len());
            members.swap(i, j);
        }
        first.extend_from_slice(&members[..take]);
        second.extend_from_slice(&members[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Node classification analog: one generated graph, cluster ids as labels,
/// 10% of nodes (stratified) for training.
pub fn make_node_task(ranges: &ParamRanges, seed: u64) -> Result<DownstreamTask> {
    let g = generate_indexed(0, ranges, seed, false)?;
    let num_classes = g.clusters.iter().copied().max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let (train, test) = stratified_split(&g.clusters, 0.1, &mut rng);
    let task = DownstreamTask {
        kind: TaskKind::Node,
        num_classes,
        data: TaskData::Node { graph: g.graph, labels: g.clusters },
        train,
        test,
    };
    task.validate()?;
    Ok(task)
}

/// Link classification analog: hold out 10% of edges as positives plus an
/// equal count of non-edges as negatives; the model sees the graph with the
/// held-out edges removed. Pairs split 80/20 stratified by label.
pub fn make_link_task(ranges: &ParamRanges, seed: u64) -> Result<DownstreamTask> {
    let g = generate_indexed(0, ranges, seed, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let masked = crate::graph::mask_edges(&g.graph, 0.1, &mut rng)?;
    if masked.removed.is_empty() {
        return Err(Error::sampling("generated graph has too few edges for a link task"));
    }
    let n_pos = masked.removed.len();
    let batch = crate::graph::sample_pair_batch(&masked, n_pos, n_pos, &mut rng)?;
    let mut pairs = batch.pos_pairs.clone();
    pairs.extend_from_slice(&batch.neg_pairs);
    let labels: Vec<usize> =
        batch.labels().iter().map(|&l| if l > 0.5 { 1 } else { 0 }).collect();
    let (train, test) = stratified_split(&labels, 0.8, &mut rng);
    let task = DownstreamTask {
        kind: TaskKind::Link,
        num_classes: 2,
        data: TaskData::Link { graph: masked.noised, pairs, labels },
        train,
        test,
    };
    task.validate()?;
    Ok(task)
}

/// Graph classification analog: `per_regime` graphs for each of the four
/// generation regimes, labeled by regime, split 90/10 stratified.
pub fn make_graph_task(ranges: &ParamRanges, per_regime: usize, seed: u64) -> Result<DownstreamTask> {
    let count = per_regime * Regime::ALL.len();
    let generated: Vec<Result<(Graph, usize)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let g = generate_indexed(i, ranges, seed, true)?;
            Ok((g.graph, g.regime.index()))
        })
        .collect();
    let mut graphs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for r in generated {
        let (g, l) = r?;
        graphs.push(g);
        labels.push(l);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let (train, test) = stratified_split(&labels, 0.9, &mut rng);
    let task = DownstreamTask {
        kind: TaskKind::Graph,
        num_classes: Regime::ALL.len(),
        data: TaskData::Graph { graphs, labels },
        train,
        test,
    };
    task.validate()?;
    Ok(task)
}

/// Synthetic downstream task with the standard sizes (200 graphs for the
/// graph-level task).
pub fn make_synthetic_task(kind: TaskKind, ranges: &ParamRanges, seed: u64) -> Result<DownstreamTask> {
    match kind {
        TaskKind::Node => make_node_task(ranges, seed),
        TaskKind::Link => make_link_task(ranges, seed),
        TaskKind::Graph => make_graph_task(ranges, 50, seed),
    }
}

/// Where the parameters above the boundary come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    /// Everything initialized from the checkpoint.
    Pretrained,
    /// Below the boundary from the checkpoint (frozen); above it random.
    RandomAbove,
}

impl InitMode {
    pub fn label(self) -> &'static str {
        match self {
            InitMode::Pretrained => "pretrained",
            InitMode::RandomAbove => "random",
        }
    }
}

/// A model prepared for fine-tuning: encoder weights (checkpoint or random),
/// fresh mixing and head parameters, and the frozen-name set.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    pub params: ParamStore,
    pub model_cfg: ModelConfig,
    pub frozen: BTreeSet<String>,
    pub boundary: usize,
    pub init: InitMode,
    pub task_kind: TaskKind,
    pub num_classes: usize,
}

fn require_encoder_shapes(params: &ParamStore, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.hidden_dim;
    let mut bad = Vec::new();
    let mut check = |name: &str, shape: &[usize]| match params.get(name) {
        Ok(t) if t.shape() == shape => {}
        _ => bad.push(name.to_string()),
    };
    check("embed.e", &[FEATURE_DIM, d]);
    for l in 0..cfg.layers {
        check(&format!("gcn.{l}.w1"), &[d, d]);
        check(&format!("gcn.{l}.w2"), &[d, d]);
        check(&format!("gcn.{l}.bn_gamma"), &[d]);
        check(&format!("gcn.{l}.bn_kappa"), &[d]);
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch { fields: bad })
    }
}

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
}

fn init_head(store: &mut ParamStore, kind: TaskKind, num_classes: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let d = cfg.hidden_dim;
    store.insert("mix.down.psi", Tensor::vector(vec![0.0; cfg.layers]));
    store.insert("mix.down.alpha", Tensor::vector(vec![1.0; d]));
    match kind {
        TaskKind::Node => {
            for l in 0..2 {
                let p = format!("head.node.gcn.{l}");
                store.insert(format!("{p}.w1"), xavier(d, d, rng));
                store.insert(format!("{p}.w2"), xavier(d, d, rng));
                store.insert(format!("{p}.bn_gamma"), Tensor::vector(vec![1.0; d]));
                store.insert(format!("{p}.bn_kappa"), Tensor::vector(vec![0.0; d]));
            }
            store.insert("head.node.out_w", xavier(d, num_classes, rng));
            store.insert("head.node.out_b", Tensor::vector(vec![0.0; num_classes]));
        }
        TaskKind::Link => {
            // Bilinear slices contract d*d products; see the encoder NTN init.
            let bound = (6.0 / (d * d + d) as f64).sqrt();
            store.insert(
                "head.link.ntn.w",
                Tensor::new(
                    vec![NTN_SLICES, d, d],
                    (0..NTN_SLICES * d * d).map(|_| rng.random_range(-bound..bound)).collect(),
                ),
            );
            store.insert("head.link.ntn.v", xavier(NTN_SLICES, 2 * d, rng));
            store.insert("head.link.ntn.b", Tensor::vector(vec![0.0; NTN_SLICES]));
            store.insert("head.link.out_w", xavier(NTN_SLICES, num_classes, rng));
            store.insert("head.link.out_b", Tensor::vector(vec![0.0; num_classes]));
        }
        TaskKind::Graph => {
            store.insert("head.graph.out_w", xavier(d, num_classes, rng));
            store.insert("head.graph.out_b", Tensor::vector(vec![0.0; num_classes]));
        }
    }
}

/// Builds an adaptable model from checkpoint parameters.
///
/// Components strictly below `boundary` are frozen: 0 freezes nothing, 1
/// freezes the embedding, `1 + l` freezes the embedding plus the first `l`
/// GCN blocks. Mixing and head parameters are always fresh and trainable.
/// With [`InitMode::RandomAbove`], encoder parameters above the boundary are
/// re-initialized randomly instead of loaded.
pub fn load_with_boundary(
    ckpt_params: &ParamStore,
    ckpt_cfg: &ModelConfig,
    expect_cfg: Option<&ModelConfig>,
    boundary: usize,
    init: InitMode,
    task: &DownstreamTask,
    seed: u64,
) -> Result<AdaptedModel> {
    if let Some(want) = expect_cfg {
        let fields = ckpt_cfg.differing_fields(want);
        if !fields.is_empty() {
            return Err(Error::ConfigMismatch { fields });
        }
    }
    require_encoder_shapes(ckpt_params, ckpt_cfg)?;
    let frozen = frozen_below(boundary, ckpt_cfg)?;

    let mut params = ParamStore::new();
    let encoder_names: Vec<String> = {
        let mut names = vec!["embed.e".to_string()];
        for l in 0..ckpt_cfg.layers {
            for suffix in ["w1", "w2", "bn_gamma", "bn_kappa"] {
                names.push(format!("gcn.{l}.{suffix}"));
            }
        }
        names
    };
    let random_source = match init {
        InitMode::Pretrained => None,
        InitMode::RandomAbove => {
            Some(init_pretrain_params(ckpt_cfg, derive_seed2(seed, 0, 7))?)
        }
    };
    for name in &encoder_names {
        let from_ckpt = frozen.contains(name) || random_source.is_none();
        let value = if from_ckpt {
            ckpt_params.get(name)?.clone()
        } else {
            random_source.as_ref().unwrap().get(name)?.clone()
        };
        params.insert(name.clone(), value);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed2(seed, 1, 11));
    init_head(&mut params, task.kind, task.num_classes, ckpt_cfg, &mut rng);

    Ok(AdaptedModel {
        params,
        model_cfg: ckpt_cfg.clone(),
        frozen,
        boundary,
        init,
        task_kind: task.kind,
        num_classes: task.num_classes,
    })
}

fn features_tensor(g: &Graph) -> Tensor {
    Tensor::matrix(g.n(), FEATURE_DIM, assemble_features(g).matrix())
}

fn mixed_representation(
    tape: &mut Tape,
    pn: &ParamNodes,
    cfg: &ModelConfig,
    feats: &Tensor,
    adj: &Arc<NormAdjacency>,
) -> Result<NodeId> {
    let layers = encode(tape, pn, cfg, feats, adj)?;
    mix_layers(tape, pn, Task::Down, &layers)
}

fn linear_head(
    tape: &mut Tape,
    pn: &ParamNodes,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = pn.id(&format!("{prefix}.out_w"))?;
    let b = pn.id(&format!("{prefix}.out_b"))?;
    let z = tape.matmul(x, w)?;
    tape.add_row_broadcast(z, b)
}

fn node_logits(
    tape: &mut Tape,
    pn: &ParamNodes,
    cfg: &ModelConfig,
    feats: &Tensor,
    adj: &Arc<NormAdjacency>,
) -> Result<NodeId> {
    let f = mixed_representation(tape, pn, cfg, feats, adj)?;
    let h = gcn_block(tape, pn, "head.node.gcn.0", cfg.activation, f, adj)?;
    let h = gcn_block(tape, pn, "head.node.gcn.1", cfg.activation, h, adj)?;
    linear_head(tape, pn, "head.node", h)
}

fn link_logits(
    tape: &mut Tape,
    pn: &ParamNodes,
    cfg: &ModelConfig,
    feats: &Tensor,
    adj: &Arc<NormAdjacency>,
    pairs: &[(u32, u32)],
) -> Result<NodeId> {
    let f = mixed_representation(tape, pn, cfg, feats, adj)?;
    let us: Vec<usize> = pairs.iter().map(|&(u, _)| u as usize).collect();
    let vs: Vec<usize> = pairs.iter().map(|&(_, v)| v as usize).collect();
    let u_rows = tape.gather_rows(f, &us)?;
    let v_rows = tape.gather_rows(f, &vs)?;
    let uv = ntn_forward(tape, pn, "head.link.ntn", u_rows, v_rows)?;
    let uv = linear_head(tape, pn, "head.link", uv)?;
    let vu = ntn_forward(tape, pn, "head.link.ntn", v_rows, u_rows)?;
    let vu = linear_head(tape, pn, "head.link", vu)?;
    let sum = tape.add(uv, vu)?;
    Ok(tape.scale(sum, 0.5))
}

fn graph_logits(
    tape: &mut Tape,
    pn: &ParamNodes,
    cfg: &ModelConfig,
    g: &Graph,
) -> Result<NodeId> {
    let adj = Arc::new(norm_adjacency(g));
    let f = mixed_representation(tape, pn, cfg, &features_tensor(g), &adj)?;
    let pooled = tape.row_mean(f)?;
    linear_head(tape, pn, "head.graph", pooled)
}

fn argmax_rows(values: &Tensor) -> Vec<usize> {
    let cols = values.shape()[1];
    values
        .data()
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

/// Micro-averaged F1 over globally aggregated counts:
/// `TP / (TP + (FP + FN) / 2)`. For single-label multiclass prediction this
/// equals accuracy.
pub fn micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::contract("micro_f1 needs equal-length, non-empty inputs"));
    }
    let classes = predictions.iter().chain(labels).copied().max().unwrap() + 1;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fnn = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnn[l] += 1;
        }
    }
    let tp: f64 = tp.iter().sum::<usize>() as f64;
    let fp: f64 = fp.iter().sum::<usize>() as f64;
    let fnn: f64 = fnn.iter().sum::<usize>() as f64;
    if tp + fp + fnn == 0.0 {
        return Ok(1.0);
    }
    Ok(tp / (tp + 0.5 * (fp + fnn)))
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub test_micro_f1: f64,
}

/// Predictions over a chosen index set.
fn predict(model: &AdaptedModel, task: &DownstreamTask, indices: &[usize]) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let pn = model.params.register(&mut tape);
    match &task.data {
        TaskData::Node { graph, .. } => {
            let adj = Arc::new(norm_adjacency(graph));
            let logits = node_logits(&mut tape, &pn, &model.model_cfg, &features_tensor(graph), &adj)?;
            let rows = tape.gather_rows(logits, indices)?;
            Ok(argmax_rows(tape.value(rows)))
        }
        TaskData::Link { graph, pairs, .. } => {
            let adj = Arc::new(norm_adjacency(graph));
            let selected: Vec<(u32, u32)> = indices.iter().map(|&i| pairs[i]).collect();
            let logits =
                link_logits(&mut tape, &pn, &model.model_cfg, &features_tensor(graph), &adj, &selected)?;
            Ok(argmax_rows(tape.value(logits)))
        }
        TaskData::Graph { graphs, .. } => {
            let mut out = Vec::with_capacity(indices.len());
            for &i in indices {
                let mut tape = Tape::new();
                let pn = model.params.register(&mut tape);
                let logits = graph_logits(&mut tape, &pn, &model.model_cfg, &graphs[i])?;
                out.push(argmax_rows(tape.value(logits))[0]);
            }
            Ok(out)
        }
    }
}

/// Test-split micro-F1 of the current parameters.
pub fn evaluate(model: &AdaptedModel, task: &DownstreamTask) -> Result<f64> {
    let preds = predict(model, task, &task.test)?;
    let labels: Vec<usize> = task.test.iter().map(|&i| task.labels()[i]).collect();
    micro_f1(&preds, &labels)
}

/// Supervised fine-tuning: full-batch softmax cross-entropy per epoch, Adam
/// on trainable parameters only. Frozen parameters are untouched, bit for
/// bit. Deterministic under its inputs.
pub fn finetune(
    model: &mut AdaptedModel,
    task: &DownstreamTask,
    epochs: usize,
    lr: f64,
) -> Result<FinetuneMetrics> {
    task.validate()?;
    let mut opt = AdamState::new(lr);
    let mut history = Vec::with_capacity(epochs);
    let train_labels: Vec<usize> = task.train.iter().map(|&i| task.labels()[i]).collect();

    for epoch in 0..epochs {
        let loss_value = match &task.data {
            TaskData::Node { graph, .. } => {
                let adj = Arc::new(norm_adjacency(graph));
                let feats = features_tensor(graph);
                let mut tape = Tape::new();
                let pn = model.params.register(&mut tape);
                let logits = node_logits(&mut tape, &pn, &model.model_cfg, &feats, &adj)?;
                let train_rows = tape.gather_rows(logits, &task.train)?;
                let loss = tape.softmax_ce_mean(train_rows, &train_labels)?;
                tape.backward(loss)?;
                let grads = model.params.grads(&tape, &pn);
                opt.apply(model.params.map_mut(), &grads, &model.frozen)?;
                tape.value(loss).item()
            }
            TaskData::Link { graph, pairs, .. } => {
                let adj = Arc::new(norm_adjacency(graph));
                let feats = features_tensor(graph);
                let selected: Vec<(u32, u32)> = task.train.iter().map(|&i| pairs[i]).collect();
                let mut tape = Tape::new();
                let pn = model.params.register(&mut tape);
                let logits =
                    link_logits(&mut tape, &pn, &model.model_cfg, &feats, &adj, &selected)?;
                let loss = tape.softmax_ce_mean(logits, &train_labels)?;
                tape.backward(loss)?;
                let grads = model.params.grads(&tape, &pn);
                opt.apply(model.params.map_mut(), &grads, &model.frozen)?;
                tape.value(loss).item()
            }
            TaskData::Graph { graphs, .. } => {
                let scale = 1.0 / task.train.len() as f64;
                let mut grad_acc: BTreeMap<String, Tensor> = model
                    .params
                    .map()
                    .iter()
                    .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                    .collect();
                let mut total = 0.0;
                for (&gi, &label) in task.train.iter().zip(&train_labels) {
                    let mut tape = Tape::new();
                    let pn = model.params.register(&mut tape);
                    let logits = graph_logits(&mut tape, &pn, &model.model_cfg, &graphs[gi])?;
                    let loss = tape.softmax_ce_mean(logits, &[label])?;
                    total += tape.value(loss).item() * scale;
                    tape.backward(loss)?;
                    for (name, g) in model.params.grads(&tape, &pn) {
                        let acc = grad_acc.get_mut(&name).unwrap();
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b * scale;
                        }
                    }
                }
                opt.apply(model.params.map_mut(), &grad_acc, &model.frozen)?;
                total
            }
        };
        if !loss_value.is_finite() {
            return Err(Error::numerical(format!("non-finite loss at epoch {epoch}")));
        }
        history.push(EpochMetrics { epoch, train_loss: loss_value });
    }
    let test_micro_f1 = evaluate(model, task)?;
    Ok(FinetuneMetrics { epochs: history, test_micro_f1 })
}

/// One boundary-sweep cell result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: String,
    pub boundary: usize,
    pub init_mode: String,
    pub seed: u64,
    pub micro_f1: f64,
    pub epochs: usize,
    pub wall_time_s: f64,
}

/// Aggregate of one `(boundary, init_mode)` cell over seeds.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub boundary: usize,
    pub init_mode: InitMode,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Fine-tunes every `(boundary, init mode, seed)` combination and reports
/// per-cell micro-F1. Cells are independent and run in parallel; results are
/// ordered deterministically.
pub fn boundary_sweep(
    ckpt_params: &ParamStore,
    ckpt_cfg: &ModelConfig,
    task: &DownstreamTask,
    boundaries: &[usize],
    seeds: &[u64],
    epochs: usize,
    lr: f64,
) -> Result<Vec<SweepRow>> {
    let mut cells = Vec::new();
    for &b in boundaries {
        for mode in [InitMode::Pretrained, InitMode::RandomAbove] {
            for &seed in seeds {
                cells.push((b, mode, seed));
            }
        }
    }
    let rows: Vec<Result<SweepRow>> = cells
        .into_par_iter()
        .map(|(boundary, mode, seed)| {
            let started = Instant::now();
            let mut model =
                load_with_boundary(ckpt_params, ckpt_cfg, None, boundary, mode, task, seed)?;
            let metrics = finetune(&mut model, task, epochs, lr)?;
            Ok(SweepRow {
                task: task.kind.label().to_string(),
                boundary,
                init_mode: mode.label().to_string(),
                seed,
                micro_f1: metrics.test_micro_f1,
                epochs,
                wall_time_s: started.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        out.push(r?);
    }
    out.sort_by(|a, b| {
        (a.boundary, &a.init_mode, a.seed).cmp(&(b.boundary, &b.init_mode, b.seed))
    });
    Ok(out)
}

/// Mean and sample standard deviation per `(boundary, init_mode)` cell.
pub fn aggregate_sweep(rows: &[SweepRow]) -> Vec<SweepCell> {
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.boundary, r.init_mode.clone())).or_default().push(r.micro_f1);
    }
    groups
        .into_iter()
        .map(|((boundary, mode), vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SweepCell {
                boundary,
                init_mode: if mode == "pretrained" { InitMode::Pretrained } else { InitMode::RandomAbove },
                mean,
                std: var.sqrt(),
                count: vals.len(),
            }
        })
        .collect()
}

/// CSV with one row per sweep cell run.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "task,boundary,init_mode,seed,micro_f1,epochs,wall_time")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.task, r.boundary, r.init_mode, r.seed, r.micro_f1, r.epochs, r.wall_time_s
        )?;
    }
    Ok(())
}
