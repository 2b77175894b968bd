//! BPR training with Adam.
//!
//! Aggregation weights are frozen once per epoch from the epoch-start table and
//! treated as constants in the backward pass. With the weights fixed the
//! forward pass is a linear map `P` of the layer-0 table, so the gradient is
//! `P^T (dL / d final)` plus the L2 term on the rows touched by the batch.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::model::{
    aggregate, dot, dpaa_forward, init_embeddings, propagate_frozen, propagate_lightgcn, readout, EmbeddingTable,
    FrozenWeights, Mode, ModelConfig,
};
use crate::weights::{embedding_delta, inverse_interaction_weight, EpochStability, PretrainedIiwCache};

/// `(user, positive item, negative item)`; ids are user and item ids, not node rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2 coefficient on the batch's layer-0 rows.
    pub reg: f64,
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 2048,
            max_epochs: 1000,
            patience: 50,
            reg: 1e-4,
            eval_k: 20,
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.eval_k == 0 {
            return Err(Error::param("train", "batch_size, max_epochs, patience and eval_k must be >= 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::param("patience", "must not exceed max_epochs"));
        }
        if !(self.reg >= 0.0) {
            return Err(Error::param("reg", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
    /// Draws dropped because the user has interacted with every item.
    pub skipped: usize,
}

/// Edge-wise sampling: a uniform training edge, then a uniform negative by rejection.
pub fn sample_triplets<R: Rng + ?Sized>(graph: &InteractionGraph, batch_size: usize, rng: &mut R) -> TripletBatch {
    let mut out = TripletBatch::default();
    let edges = graph.edge_count();
    let n = graph.num_items();
    if edges == 0 {
        return out;
    }
    out.triplets.reserve(batch_size);
    for _ in 0..batch_size {
        let edge = graph.edge(rng.random_range(0..edges));
        let u = edge.user as usize;
        if graph.user_degree(u) >= n {
            out.skipped += 1;
            continue;
        }
        let neg = loop {
            let j = rng.random_range(0..n) as u32;
            if !graph.has_edge(u, j) {
                break j;
            }
        };
        out.triplets.push(Triplet {
            user: edge.user,
            pos: edge.item,
            neg,
        });
    }
    out
}

/// `-ln sigmoid(x)` without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        libm::log1p(libm::exp(-x))
    } else {
        -x + libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `sum -ln sigmoid(pos - neg) + reg * sum ||row||^2` over the given distinct rows.
pub fn bpr_loss(scores_pos: &[f64], scores_neg: &[f64], batch_rows: &[&[f64]], reg: f64) -> f64 {
    assert_eq!(scores_pos.len(), scores_neg.len(), "score vectors differ in length");
    let ranking: f64 = scores_pos
        .iter()
        .zip(scores_neg)
        .map(|(p, n)| neg_log_sigmoid(p - n))
        .sum();
    let norm: f64 = batch_rows.iter().map(|r| dot(r, r)).sum();
    ranking + reg * norm
}

/// Node rows touched by a batch, ascending and without repeats.
pub fn distinct_rows(triplets: &[Triplet], num_users: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = triplets
        .iter()
        .flat_map(|t| {
            [
                t.user as usize,
                num_users + t.pos as usize,
                num_users + t.neg as usize,
            ]
        })
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows
}

/// Loss and gradient for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: EmbeddingTable,
}

/// `dL / d final` for the ranking term, plus the ranking loss itself.
pub fn readout_gradient(final_emb: &EmbeddingTable, num_users: usize, triplets: &[Triplet]) -> (f64, EmbeddingTable) {
    let mut g = EmbeddingTable::zeros(final_emb.rows(), final_emb.dim());
    let mut loss = 0.0;
    let dim = final_emb.dim();
    let mut diff = vec![0.0; dim];
    for t in triplets {
        let (u, i, j) = (
            t.user as usize,
            num_users + t.pos as usize,
            num_users + t.neg as usize,
        );
        let eu = final_emb.row(u);
        let (ei, ej) = (final_emb.row(i), final_emb.row(j));
        for ((d, a), b) in diff.iter_mut().zip(ei).zip(ej) {
            *d = a - b;
        }
        let s = dot(eu, &diff);
        loss += neg_log_sigmoid(s);
        // d(-ln sigmoid(s)) / ds = -(1 - sigmoid(s))
        let c = -sigmoid(-s);
        let eu = eu.to_vec();
        for (x, d) in g.row_mut(u).iter_mut().zip(&diff) {
            *x += c * d;
        }
        for (x, e) in g.row_mut(i).iter_mut().zip(&eu) {
            *x += c * e;
        }
        for (x, e) in g.row_mut(j).iter_mut().zip(&eu) {
            *x -= c * e;
        }
    }
    (loss, g)
}

/// Transposed forward pass: maps `dL / d final` to `dL / d e^(0)`.
pub fn backpropagate(graph: &InteractionGraph, weights: &FrozenWeights, upstream: &EmbeddingTable) -> EmbeddingTable {
    let steps = weights.num_steps();
    let scale = 1.0 / (steps + 1) as f64;
    let mut through_layer = upstream.clone();
    through_layer.scale(scale);
    let mut residual = EmbeddingTable::zeros(upstream.rows(), upstream.dim());
    let mut hat_adj = EmbeddingTable::zeros(upstream.rows(), upstream.dim());
    for l in (0..steps).rev() {
        aggregate(graph, &through_layer, weights.step(l), &mut hat_adj);
        if weights.delta != 0.0 {
            residual.axpy(weights.delta, &hat_adj);
        }
        through_layer.as_mut_slice().copy_from_slice(upstream.as_slice());
        through_layer.scale(scale);
        through_layer.axpy(1.0, &hat_adj);
    }
    through_layer.axpy(1.0, &residual);
    through_layer
}

/// Gradient contribution routed through each readout term `e^(l)`, for a
/// fixed upstream gradient. The terms sum to [`backpropagate`]'s output.
pub fn layer_gradient_terms(
    graph: &InteractionGraph,
    weights: &FrozenWeights,
    upstream: &EmbeddingTable,
) -> Vec<EmbeddingTable> {
    let steps = weights.num_steps();
    let scale = 1.0 / (steps + 1) as f64;
    let mut terms = Vec::with_capacity(steps + 1);
    for target in 0..=steps {
        // Only e^(target) receives the upstream signal.
        let mut adj = upstream.clone();
        adj.scale(scale);
        let mut residual = EmbeddingTable::zeros(upstream.rows(), upstream.dim());
        let mut hat_adj = EmbeddingTable::zeros(upstream.rows(), upstream.dim());
        for l in (0..target).rev() {
            aggregate(graph, &adj, weights.step(l), &mut hat_adj);
            if weights.delta != 0.0 {
                residual.axpy(weights.delta, &hat_adj);
            }
            adj.as_mut_slice().copy_from_slice(hat_adj.as_slice());
        }
        adj.axpy(1.0, &residual);
        terms.push(adj);
    }
    terms
}

/// Loss and gradient of a batch with frozen aggregation weights.
pub fn backward(
    graph: &InteractionGraph,
    weights: &FrozenWeights,
    table: &EmbeddingTable,
    triplets: &[Triplet],
    reg: f64,
) -> BatchGradient {
    let stack = propagate_frozen(graph, table, weights);
    let final_emb = readout(&stack);
    let (mut loss, upstream) = readout_gradient(&final_emb, graph.num_users(), triplets);
    let mut grad = backpropagate(graph, weights, &upstream);
    if reg != 0.0 {
        for row in distinct_rows(triplets, graph.num_users()) {
            let src = table.row(row);
            loss += reg * dot(src, src);
            for (g, x) in grad.row_mut(row).iter_mut().zip(src) {
                *g += 2.0 * reg * x;
            }
        }
    }
    BatchGradient { loss, grad }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grad.len(), self.first.len());
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-triplet loss over the epoch's batches.
    pub loss: f64,
    pub delta_t: f64,
    /// `None` in LightGCN mode, which has no blend.
    pub beta_t: Option<f64>,
    pub val_metric: f64,
}

/// Mutable training state between epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub table: EmbeddingTable,
    pub optimizer: Adam,
    pub previous_table: Option<EmbeddingTable>,
    pub stability: EpochStability,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub best_table: EmbeddingTable,
    pub best_beta: f64,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(table: EmbeddingTable) -> Self {
        let len = table.as_slice().len();
        Self {
            epoch: 0,
            best_table: table.clone(),
            table,
            optimizer: Adam::new(len),
            previous_table: None,
            stability: EpochStability::first_epoch(),
            best_metric: f64::NEG_INFINITY,
            best_epoch: 0,
            best_beta: 1.0,
            epochs_since_improvement: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best_table: EmbeddingTable,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Blend coefficient in force at the best epoch; needed to reproduce its forward pass.
    pub best_beta: f64,
    pub log: Vec<EpochRecord>,
    /// Triplet draws dropped for users without negatives.
    pub skipped_draws: usize,
}

/// Forward pass used for inference and validation.
pub fn final_embeddings(
    graph: &InteractionGraph,
    model: &ModelConfig,
    cache: Option<&PretrainedIiwCache>,
    table: &EmbeddingTable,
    beta: f64,
) -> Result<EmbeddingTable> {
    let stack = match model.mode {
        Mode::LightGcn => propagate_lightgcn(graph, table, model.num_layers),
        Mode::Dpaa => {
            let cache = cache.ok_or(Error::Config("DPAA mode needs a pretrained IIW cache"))?;
            dpaa_forward(graph, table, &model.plan, cache, beta)?.0
        }
    };
    Ok(readout(&stack))
}

/// Trains to early stopping.
///
/// `validate` receives the final (read-out) embeddings after each epoch and
/// returns the metric to maximize. `on_epoch` sees every log row as it is produced.
pub fn fit(
    graph: &InteractionGraph,
    model: &ModelConfig,
    config: &TrainConfig,
    cache: Option<&PretrainedIiwCache>,
    mut validate: impl FnMut(&EmbeddingTable) -> f64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    config.validate()?;
    if model.mode == Mode::Dpaa {
        let cache = cache.ok_or(Error::Config("DPAA mode needs a pretrained IIW cache"))?;
        cache.check_covers(&model.plan, graph.edge_count())?;
    }
    let table = init_embeddings(graph.num_users(), graph.num_items(), model.dim, config.seed);
    let mut state = TrainState::new(table);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let batches = graph.edge_count().div_ceil(config.batch_size).max(1);
    let lightgcn_weights = FrozenWeights::lightgcn(graph, model.num_layers);
    let mut log = Vec::new();
    let mut skipped_draws = 0;

    while state.epoch < config.max_epochs {
        state.epoch += 1;
        let delta_t = match &state.previous_table {
            Some(prev) => embedding_delta(prev.as_slice(), state.table.as_slice(), model.dim)?,
            None => 0.0,
        };
        state.stability = if state.previous_table.is_some() {
            EpochStability::from_delta(delta_t, model.plan.c)?
        } else {
            EpochStability::first_epoch()
        };
        let beta = state.stability.beta_t;

        let weights = match model.mode {
            Mode::LightGcn => lightgcn_weights.clone(),
            Mode::Dpaa => {
                let cache = cache.expect("checked above");
                dpaa_forward(graph, &state.table, &model.plan, cache, beta)?.1
            }
        };
        state.previous_table = Some(state.table.clone());

        let mut loss_sum = 0.0;
        let mut triplet_count = 0usize;
        for _ in 0..batches {
            let batch = sample_triplets(graph, config.batch_size, &mut rng);
            skipped_draws += batch.skipped;
            if batch.triplets.is_empty() {
                continue;
            }
            let step = backward(graph, &weights, &state.table, &batch.triplets, config.reg);
            loss_sum += step.loss;
            triplet_count += batch.triplets.len();
            state
                .optimizer
                .step(state.table.as_mut_slice(), step.grad.as_slice(), config.learning_rate);
        }

        let final_emb = final_embeddings(graph, model, cache, &state.table, beta)?;
        let metric = validate(&final_emb);
        let record = EpochRecord {
            epoch: state.epoch,
            loss: if triplet_count > 0 {
                loss_sum / triplet_count as f64
            } else {
                0.0
            },
            delta_t,
            beta_t: (model.mode == Mode::Dpaa).then_some(beta),
            val_metric: metric,
        };
        on_epoch(&record);
        log.push(record);

        if metric > state.best_metric {
            state.best_metric = metric;
            state.best_epoch = state.epoch;
            state.best_table = state.table.clone();
            state.best_beta = beta;
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= config.patience {
                break;
            }
        }
    }

    Ok(FitResult {
        best_table: state.best_table,
        best_epoch: state.best_epoch,
        best_metric: state.best_metric,
        best_beta: state.best_beta,
        log,
        skipped_draws,
    })
}

/// Per-edge IIW of a trained LightGCN table at the given propagation steps.
pub fn pretrained_iiw(graph: &InteractionGraph, table: &EmbeddingTable, layers: &[usize]) -> Result<PretrainedIiwCache> {
    let depth = layers.iter().copied().max().unwrap_or(0);
    let stack = propagate_lightgcn(graph, table, depth);
    let m = graph.num_users();
    let mut values = Vec::with_capacity(layers.len() * graph.edge_count());
    for &l in layers {
        let layer = stack.layer(l);
        values.extend(
            graph
                .edges()
                .map(|e| inverse_interaction_weight(layer.row(e.user as usize), layer.row(m + e.item as usize))),
        );
    }
    PretrainedIiwCache::new(layers.to_vec(), graph.edge_count(), values)
}

/// Trains the unweighted baseline, then caches its per-edge IIW for the steps
/// `placement` needs.
pub fn pretrain_base(
    graph: &InteractionGraph,
    model: &ModelConfig,
    config: &TrainConfig,
    validate: impl FnMut(&EmbeddingTable) -> f64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(FitResult, PretrainedIiwCache)> {
    let base = ModelConfig {
        mode: Mode::LightGcn,
        ..model.clone()
    };
    let fitted = fit(graph, &base, config, None, validate, on_epoch)?;
    let layers = model.plan.placement.cached_layers(model.num_layers);
    let cache = pretrained_iiw(graph, &fitted.best_table, &layers)?;
    Ok((fitted, cache))
}
