//! Self-supervised pre-training: denoising link reconstruction, centrality
//! score ranking, and cluster preserving, summed and optimized with Adam
//! over batches of corpus graphs.
//!
//! Each step masks a fraction of every sampled graph's edges, feeds the
//! noised graph through the encoder, and supervises against ground truth
//! from the original graph: removed edges for reconstruction, sidecar
//! centralities for ranking, sidecar clusters for cluster preserving.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::centrality::CentralityKind;
use crate::error::{Error, Result};
use crate::feat::assemble_features;
use crate::graph::{mask_edges, norm_adjacency, sample_pair_batch, PairBatch};
use crate::metrics::MetricsRecord;
use crate::model::{
    cluster_embed, cluster_logits, encode, mix_layers, mixing_weights, pair_logits_symmetric,
    rank_scores, ModelConfig, ParamNodes, ParamStore, Task, FEATURE_DIM,
};
use crate::seeds::derive_seed2;
use crate::synth::CorpusGraph;
use crate::tensor::{AdamState, NodeId, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub mask_fraction: f64,
    pub graphs_per_step: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub val_every: usize,
    pub seed: u64,
    pub cluster_support_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_fraction: 0.2,
            graphs_per_step: 32,
            n_pos: 128,
            n_neg: 256,
            lr: 1e-3,
            max_steps: 1000,
            val_every: 50,
            seed: 0,
            cluster_support_fraction: 0.5,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return Err(Error::config(
                "mask_fraction must be in (0, 1]: link reconstruction needs removed edges",
            ));
        }
        if !(self.cluster_support_fraction > 0.0 && self.cluster_support_fraction <= 1.0) {
            return Err(Error::config("cluster_support_fraction must be in (0, 1]"));
        }
        if self.graphs_per_step == 0 || self.n_pos == 0 || self.n_neg == 0 || self.max_steps == 0 {
            return Err(Error::config("counts must be at least 1"));
        }
        if self.val_every == 0 {
            return Err(Error::config("val_every must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        Ok(())
    }
}

/// Non-fatal conditions hit while assembling a loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossFlags {
    /// Every sampled pair was tied on every centrality; ranking contributed 0.
    pub all_ranks_tied: bool,
    /// Some cluster's support pool was empty after excluding targets, so its
    /// own members were used.
    pub support_fallback: bool,
}

/// Reconstruction loss: mean stable BCE of symmetrized pair logits against
/// edge labels from the original graph.
pub fn loss_rec(
    tape: &mut Tape,
    pn: &ParamNodes,
    f_rec: NodeId,
    batch: &PairBatch,
) -> Result<NodeId> {
    let pairs: Vec<(u32, u32)> = batch.all_pairs().collect();
    let logits = pair_logits_symmetric(tape, pn, "ntn.rec", f_rec, &pairs)?;
    tape.bce_with_logits_mean(logits, &batch.labels())
}

/// Per-centrality ranking terms over a pair set: positions into the unique
/// node list plus binary order labels. Tied pairs are skipped; the tie test
/// uses a relative tolerance because iterative solvers leave last-ulp noise
/// on symmetric nodes.
pub fn rank_pair_terms(
    targets: &[f64],
    pairs: &[(u32, u32)],
    position: &BTreeMap<u32, usize>,
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut pu = Vec::new();
    let mut pv = Vec::new();
    let mut labels = Vec::new();
    for &(u, v) in pairs {
        let (su, sv) = (targets[u as usize], targets[v as usize]);
        if (su - sv).abs() <= 1e-9 * su.abs().max(sv.abs()).max(1e-12) {
            continue;
        }
        pu.push(position[&u]);
        pv.push(position[&v]);
        labels.push(if su > sv { 1.0 } else { 0.0 });
    }
    (pu, pv, labels)
}

/// Ranking loss: logistic pairwise comparison of predicted scores against
/// ground-truth centrality order, averaged over every contributing
/// (centrality, pair) term. `None` when every pair ties on every centrality.
pub fn loss_rank(
    tape: &mut Tape,
    pn: &ParamNodes,
    f_rank: NodeId,
    batch: &PairBatch,
    targets: &crate::centrality::CentralityScores,
) -> Result<Option<NodeId>> {
    let pairs: Vec<(u32, u32)> = batch.all_pairs().collect();
    let mut unique: Vec<u32> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
    unique.sort_unstable();
    unique.dedup();
    let position: BTreeMap<u32, usize> =
        unique.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let unique_idx: Vec<usize> = unique.iter().map(|&v| v as usize).collect();

    let rows = tape.gather_rows(f_rank, &unique_idx)?;
    let mut weighted: Option<NodeId> = None;
    let mut total_terms = 0usize;
    for kind in CentralityKind::ALL {
        let (pu, pv, labels) = rank_pair_terms(targets.by_kind(kind), &pairs, &position);
        if labels.is_empty() {
            continue;
        }
        let scores = rank_scores(tape, pn, kind, rows)?;
        let su = tape.gather_rows(scores, &pu)?;
        let sv = tape.gather_rows(scores, &pv)?;
        let diffs = tape.sub(su, sv)?;
        let bce = tape.bce_with_logits_mean(diffs, &labels)?;
        let contribution = tape.scale(bce, labels.len() as f64);
        total_terms += labels.len();
        weighted = Some(match weighted {
            Some(acc) => tape.add(acc, contribution)?,
            None => contribution,
        });
    }
    match weighted {
        Some(acc) => Ok(Some(tape.scale(acc, 1.0 / total_terms as f64))),
        None => Ok(None),
    }
}

/// Support sets per present cluster: a `fraction` sample of each cluster's
/// members, drawn from members that are not loss targets whenever that pool
/// is non-empty. Returns `(present cluster ids, supports, fallback_used)`.
pub fn sample_supports<R: Rng>(
    clusters: &[usize],
    targets: &BTreeSet<usize>,
    fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<Vec<usize>>, bool) {
    let k = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (v, &c) in clusters.iter().enumerate() {
        members[c].push(v);
    }
    let mut present = Vec::new();
    let mut supports = Vec::new();
    let mut fallback = false;
    for (c, mem) in members.iter().enumerate() {
        if mem.is_empty() {
            continue;
        }
        let want = ((fraction * mem.len() as f64).ceil() as usize).clamp(1, mem.len());
        let mut pool: Vec<usize> = mem.iter().copied().filter(|v| !targets.contains(v)).collect();
        if pool.len() < want {
            // Not enough non-target members: top the support up with target
            // members rather than shrinking it.
            let mut extra: Vec<usize> =
                mem.iter().copied().filter(|v| targets.contains(v)).collect();
            for i in 0..(want - pool.len()).min(extra.len()) {
                let j = rng.random_range(i..extra.len());
                extra.swap(i, j);
                pool.push(extra[i]);
            }
            fallback = true;
        }
        let take = want.min(pool.len());
        for i in 0..take {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut support: Vec<usize> = pool[..take].to_vec();
        support.sort_unstable();
        present.push(c);
        supports.push(support);
    }
    (present, supports, fallback)
}

/// Cluster-preserving loss: softmax over per-cluster NTN similarities,
/// cross-entropy against each target node's own cluster.
pub fn loss_cluster(
    tape: &mut Tape,
    pn: &ParamNodes,
    f_cluster: NodeId,
    target_nodes: &[usize],
    clusters: &[usize],
    present: &[usize],
    supports: &[Vec<usize>],
) -> Result<NodeId> {
    let mut embeds = Vec::with_capacity(present.len());
    for support in supports {
        let rows = tape.gather_rows(f_cluster, support)?;
        embeds.push(cluster_embed(tape, pn, rows)?);
    }
    let column: BTreeMap<usize, usize> =
        present.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let labels: Vec<usize> = target_nodes
        .iter()
        .map(|&v| {
            column.get(&clusters[v]).copied().ok_or_else(|| {
                Error::contract(format!("target node {v} belongs to an absent cluster"))
            })
        })
        .collect::<Result<_>>()?;
    let logits = cluster_logits(tape, pn, f_cluster, target_nodes, &embeds)?;
    tape.softmax_ce_mean(logits, &labels)
}

/// Forward pass of all three losses for one graph. Returns the scalar loss
/// node ids `(rec, rank, cluster)` plus flags; `rank` is `None` when every
/// pair tied.
pub fn graph_losses<R: Rng>(
    tape: &mut Tape,
    pn: &ParamNodes,
    model_cfg: &ModelConfig,
    cg: &CorpusGraph,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<(NodeId, Option<NodeId>, NodeId, LossFlags)> {
    let mg = mask_edges(&cg.graph, cfg.mask_fraction, rng)?;
    if mg.removed.is_empty() {
        return Err(Error::sampling(format!(
            "graph with m={} produced no masked edges at fraction {}",
            cg.graph.m(),
            cfg.mask_fraction
        )));
    }
    let feats = assemble_features(&mg.noised);
    let x = Tensor::matrix(cg.graph.n(), FEATURE_DIM, feats.matrix());
    let adj = Arc::new(norm_adjacency(&mg.noised));
    let layers = encode(tape, pn, model_cfg, &x, &adj)?;
    let f_rec = mix_layers(tape, pn, Task::Rec, &layers)?;
    let f_rank = mix_layers(tape, pn, Task::Rank, &layers)?;
    let f_cluster = mix_layers(tape, pn, Task::Cluster, &layers)?;

    let batch = sample_pair_batch(&mg, cfg.n_pos, cfg.n_neg, rng)?;
    let rec = loss_rec(tape, pn, f_rec, &batch)?;
    let rank = loss_rank(tape, pn, f_rank, &batch, &cg.targets)?;

    let mut target_nodes: Vec<usize> =
        batch.all_pairs().flat_map(|(u, v)| [u as usize, v as usize]).collect();
    target_nodes.sort_unstable();
    target_nodes.dedup();
    let target_set: BTreeSet<usize> = target_nodes.iter().copied().collect();
    let (present, supports, fallback) =
        sample_supports(&cg.clusters, &target_set, cfg.cluster_support_fraction, rng);
    let cluster =
        loss_cluster(tape, pn, f_cluster, &target_nodes, &cg.clusters, &present, &supports)?;

    let flags = LossFlags { all_ranks_tied: rank.is_none(), support_fallback: fallback };
    Ok((rec, rank, cluster, flags))
}

/// Mean per-graph losses of one batch, as plain numbers.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchLosses {
    pub rec: f64,
    pub rank: f64,
    pub cluster: f64,
}

impl BatchLosses {
    pub fn total(&self) -> f64 {
        self.rec + self.rank + self.cluster
    }
}

/// One training step over a batch of graphs. Per graph: forward on its own
/// tape, backward, and one Adam update on that graph's summed loss, in batch
/// order — the inner loop updates after every graph. Reported losses are the
/// batch means of the pre-update values.
pub fn pretrain_step(
    graphs: &[&CorpusGraph],
    store: &mut ParamStore,
    opt: &mut AdamState,
    model_cfg: &ModelConfig,
    cfg: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(BatchLosses, LossFlags)> {
    if graphs.is_empty() {
        return Err(Error::contract("pretrain_step needs at least one graph"));
    }
    let mut losses = BatchLosses::default();
    let mut flags = LossFlags::default();
    let scale = 1.0 / graphs.len() as f64;
    let frozen = BTreeSet::new();

    for cg in graphs {
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let (rec, rank, cluster, f) = graph_losses(&mut tape, &pn, model_cfg, cg, cfg, rng)?;
        let mut total = tape.add(rec, cluster)?;
        if let Some(rank) = rank {
            total = tape.add(total, rank)?;
        }
        let rec_v = tape.value(rec).item();
        let rank_v = rank.map(|r| tape.value(r).item()).unwrap_or(0.0);
        let cluster_v = tape.value(cluster).item();
        let total_v = tape.value(total).item();
        if !total_v.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite loss (rec={rec_v}, rank={rank_v}, cluster={cluster_v})"
            )));
        }
        losses.rec += rec_v * scale;
        losses.rank += rank_v * scale;
        losses.cluster += cluster_v * scale;
        flags.all_ranks_tied |= f.all_ranks_tied;
        flags.support_fallback |= f.support_fallback;

        tape.backward(total)?;
        let grads = store.grads(&tape, &pn);
        opt.apply(store.map_mut(), &grads, &frozen)?;
    }
    Ok((losses, flags))
}

/// Forward-only mean losses over a graph list with a fixed seed, so the
/// result is a deterministic function of the parameters. Used for
/// validation.
pub fn eval_losses(
    graphs: &[CorpusGraph],
    store: &ParamStore,
    model_cfg: &ModelConfig,
    cfg: &PretrainConfig,
    eval_seed: u64,
) -> Result<BatchLosses> {
    if graphs.is_empty() {
        return Err(Error::contract("validation split is empty"));
    }
    let mut losses = BatchLosses::default();
    let scale = 1.0 / graphs.len() as f64;
    for (i, cg) in graphs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed2(eval_seed, i as u64, 0));
        let mut tape = Tape::new();
        let pn = store.register(&mut tape);
        let (rec, rank, cluster, _) = graph_losses(&mut tape, &pn, model_cfg, cg, cfg, &mut rng)?;
        losses.rec += tape.value(rec).item() * scale;
        losses.rank += rank.map(|r| tape.value(r).item()).unwrap_or(0.0) * scale;
        losses.cluster += tape.value(cluster).item() * scale;
    }
    Ok(losses)
}

/// Outcome of a pre-training run: the lowest-validation-loss parameters and
/// the full metrics history.
pub struct PretrainOutcome {
    pub best_params: ParamStore,
    pub best_val_total: f64,
    pub final_params: ParamStore,
    pub records: Vec<MetricsRecord>,
}

/// The training loop: samples a batch of train graphs per step, updates
/// after every graph's summed loss, evaluates the full validation split
/// every `val_every` steps under a fixed masking seed, and keeps the best
/// checkpoint. `on_record` sees each metrics record as it is produced.
pub fn pretrain_run(
    train: &[CorpusGraph],
    val: &[CorpusGraph],
    model_cfg: &ModelConfig,
    cfg: &PretrainConfig,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    let mut store = init_params_for_run(model_cfg, cfg.seed)?;
    let mut opt = AdamState::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed2(cfg.seed, 0, 1));
    let val_seed = derive_seed2(cfg.seed, 0, 2);

    let eval = |store: &ParamStore| -> Result<f64> {
        let l = eval_losses(val, store, model_cfg, cfg, val_seed)?;
        Ok(l.total())
    };

    let mut best_val_total = eval(&store)?;
    let mut best_params = store.clone();
    let mut records = Vec::with_capacity(cfg.max_steps);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for step in 1..=cfg.max_steps {
        let started = Instant::now();
        let take = cfg.graphs_per_step.min(train.len());
        for i in 0..take {
            let j = rng.random_range(i..order.len());
            order.swap(i, j);
        }
        let batch: Vec<&CorpusGraph> = order[..take].iter().map(|&i| &train[i]).collect();

        let betas: BTreeMap<String, Vec<f64>> = Task::PRETRAIN
            .iter()
            .map(|t| Ok((t.name().to_string(), mixing_weights(&store, *t)?)))
            .collect::<Result<_>>()?;
        #[cfg(debug_assertions)]
        for beta in betas.values() {
            debug_assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let (losses, _flags) = pretrain_step(&batch, &mut store, &mut opt, model_cfg, cfg, &mut rng)
            .map_err(|e| Error::numerical(format!("step {step} aborted: {e}")))?;

        let val_total = if step % cfg.val_every == 0 || step == cfg.max_steps {
            let v = eval(&store)?;
            if v < best_val_total {
                best_val_total = v;
                best_params = store.clone();
            }
            Some(v)
        } else {
            None
        };

        let record = MetricsRecord {
            step: step as u64,
            l_rec: losses.rec,
            l_rank: losses.rank,
            l_cluster: losses.cluster,
            l_total: losses.total(),
            val_total,
            betas,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_record(&record)?;
        records.push(record);
    }

    Ok(PretrainOutcome { best_params, best_val_total, final_params: store, records })
}

fn init_params_for_run(model_cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    crate::model::init_pretrain_params(model_cfg, derive_seed2(seed, 0, 0))
}
