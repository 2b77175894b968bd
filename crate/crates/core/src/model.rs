//! Embedding tables and forward propagation.
//!
//! Node rows are laid out users first (`[0, M)`) then items (`[M, M + N)`).
//! One propagation step maps layer `l` to layer `l + 1` through a per-edge
//! coefficient: `1 / sqrt(d_u d_i)` for LightGCN, multiplied by the debiasing
//! weight for DPAA. Neighbor sums always run in ascending neighbor order, so
//! results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::weights::{blend_iiw, inverse_interaction_weight, PretrainedIiwCache, WeightPlan};

/// Standard deviation of the Gaussian initializer.
pub const INIT_STD: f64 = 0.1;

/// Dense row-major `(rows x dim)` matrix of node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape {
                expected: rows * dim,
                actual: data.len(),
            });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn row_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &EmbeddingTable) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Layer-0 embeddings with i.i.d. `N(0, 0.1^2)` entries, fixed by `seed`.
pub fn init_embeddings(num_users: usize, num_items: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let rows = num_users + num_items;
    let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
    EmbeddingTable { rows, dim, data }
}

/// Layer outputs `e^(0) .. e^(L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<EmbeddingTable>,
}

impl LayerStack {
    pub fn new(layers: Vec<EmbeddingTable>) -> Self {
        assert!(!layers.is_empty(), "a layer stack holds at least layer 0");
        Self { layers }
    }

    /// Number of propagation steps `L` (the stack holds `L + 1` tables).
    pub fn num_steps(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, l: usize) -> &EmbeddingTable {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[EmbeddingTable] {
        &self.layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dpaa,
    LightGcn,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dpaa => "dpaa",
            Mode::LightGcn => "lightgcn",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpaa" => Ok(Mode::Dpaa),
            "lightgcn" => Ok(Mode::LightGcn),
            _ => Err(Error::param("mode", "expected `dpaa` or `lightgcn`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub mode: Mode,
    /// Ignored in LightGCN mode apart from `num_layers`.
    pub plan: WeightPlan,
}

impl ModelConfig {
    pub fn new(dim: usize, mode: Mode, plan: WeightPlan) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be >= 1"));
        }
        Ok(Self {
            dim,
            num_layers: plan.num_layers(),
            mode,
            plan,
        })
    }
}

/// `1 / sqrt(d_u d_i)` per edge.
pub fn symmetric_norms(graph: &InteractionGraph) -> Vec<f64> {
    let item_deg = graph.item_degrees();
    let mut norms = vec![0.0; graph.edge_count()];
    for u in 0..graph.num_users() {
        let du = graph.user_degree(u) as f64;
        for (e, &i) in graph.user_edge_range(u).zip(graph.user_items(u)) {
            norms[e] = 1.0 / libm::sqrt(du * item_deg[i as usize] as f64);
        }
    }
    norms
}

/// Aggregation coefficients frozen for one forward pass: per step, per edge,
/// the product of the debiasing weight and the symmetric degree factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWeights {
    /// Initial-residual strength applied to every step's input.
    pub delta: f64,
    coefficients: Vec<Vec<f64>>,
}

impl FrozenWeights {
    pub fn new(delta: f64, coefficients: Vec<Vec<f64>>) -> Self {
        Self { delta, coefficients }
    }

    /// Plain LightGCN: degree factor only, no residual.
    pub fn lightgcn(graph: &InteractionGraph, num_layers: usize) -> Self {
        let norms = symmetric_norms(graph);
        Self {
            delta: 0.0,
            coefficients: vec![norms; num_layers],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.coefficients.len()
    }

    pub fn step(&self, l: usize) -> &[f64] {
        &self.coefficients[l]
    }
}

/// One aggregation step: users gather from items, items gather from users.
///
/// The operator is symmetric, which the backward pass relies on.
pub fn aggregate(graph: &InteractionGraph, input: &EmbeddingTable, coeff: &[f64], out: &mut EmbeddingTable) {
    let m = graph.num_users();
    let dim = input.dim();
    out.data.iter_mut().for_each(|x| *x = 0.0);
    for u in 0..m {
        let dst = &mut out.data[u * dim..(u + 1) * dim];
        for (e, &i) in graph.user_edge_range(u).zip(graph.user_items(u)) {
            let c = coeff[e];
            let src = input.row(m + i as usize);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }
    for i in 0..graph.num_items() {
        let row = m + i;
        let dst = &mut out.data[row * dim..(row + 1) * dim];
        for (&u, &e) in graph.item_users(i).iter().zip(graph.item_edges(i)) {
            let c = coeff[e as usize];
            let src = input.row(u as usize);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }
}

/// `e^(l) + delta * e^(0)`
fn residual_input(layer: &EmbeddingTable, base: &EmbeddingTable, delta: f64) -> EmbeddingTable {
    let mut hat = layer.clone();
    if delta != 0.0 {
        hat.axpy(delta, base);
    }
    hat
}

/// Forward pass with fixed coefficients. Linear in `table`.
pub fn propagate_frozen(graph: &InteractionGraph, table: &EmbeddingTable, weights: &FrozenWeights) -> LayerStack {
    let mut layers = Vec::with_capacity(weights.num_steps() + 1);
    layers.push(table.clone());
    for l in 0..weights.num_steps() {
        let hat = residual_input(&layers[l], table, weights.delta);
        let mut next = EmbeddingTable::zeros(table.rows(), table.dim());
        aggregate(graph, &hat, weights.step(l), &mut next);
        layers.push(next);
    }
    LayerStack::new(layers)
}

pub fn propagate_lightgcn(graph: &InteractionGraph, table: &EmbeddingTable, num_layers: usize) -> LayerStack {
    propagate_frozen(graph, table, &FrozenWeights::lightgcn(graph, num_layers))
}

/// DPAA forward pass together with the coefficients it used.
///
/// At each step the residual input `e^(l) + delta * e^(0)` is formed first; the
/// current-model IIW is read off that input, blended with the pretrained value
/// through `beta`, turned into an aggregation weight by the plan, and scaled
/// by the degree factor.
pub fn dpaa_forward(
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    plan: &WeightPlan,
    cache: &PretrainedIiwCache,
    beta: f64,
) -> Result<(LayerStack, FrozenWeights)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param("beta", "must lie in [0, 1]"));
    }
    cache.check_covers(plan, graph.edge_count())?;
    let norms = symmetric_norms(graph);
    let m = graph.num_users();
    let mut layers = Vec::with_capacity(plan.num_layers() + 1);
    let mut coefficients = Vec::with_capacity(plan.num_layers());
    layers.push(table.clone());
    for l in 0..plan.num_layers() {
        let hat = residual_input(&layers[l], table, plan.delta);
        let coeff: Vec<f64> = if plan.placement.uses_iiw(l) {
            let pretrained = cache
                .layer(l)
                .ok_or(Error::Config("IIW cache is missing a layer required by gamma"))?;
            graph
                .edges()
                .enumerate()
                .map(|(e, edge)| {
                    let current = if beta < 1.0 {
                        inverse_interaction_weight(hat.row(edge.user as usize), hat.row(m + edge.item as usize))
                    } else {
                        0.0
                    };
                    let r = blend_iiw(pretrained[e], current, beta)?;
                    Ok(plan.combined_weight(l, r) * norms[e])
                })
                .collect::<Result<_>>()?
        } else {
            let w = plan.combined_weight(l, 1.0);
            norms.iter().map(|n| w * n).collect()
        };
        let mut next = EmbeddingTable::zeros(table.rows(), table.dim());
        aggregate(graph, &hat, &coeff, &mut next);
        layers.push(next);
        coefficients.push(coeff);
    }
    Ok((LayerStack::new(layers), FrozenWeights::new(plan.delta, coefficients)))
}

pub fn propagate_dpaa(
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    plan: &WeightPlan,
    cache: &PretrainedIiwCache,
    beta: f64,
) -> Result<LayerStack> {
    dpaa_forward(graph, table, plan, cache, beta).map(|(stack, _)| stack)
}

/// Mean over all `L + 1` layers.
pub fn readout(stack: &LayerStack) -> EmbeddingTable {
    let first = stack.layer(0);
    let mut out = EmbeddingTable::zeros(first.rows(), first.dim());
    for layer in stack.layers() {
        out.axpy(1.0, layer);
    }
    out.scale(1.0 / stack.layers().len() as f64);
    out
}

/// `e_u . e_i` on final embeddings; `item` is an item id, not a node row.
pub fn score(final_emb: &EmbeddingTable, num_users: usize, user: usize, item: usize) -> f64 {
    dot(final_emb.row(user), final_emb.row(num_users + item))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Interaction;
    use crate::weights::IiwPlacement;

    fn graph(pairs: &[(u32, u32)], m: usize, n: usize) -> InteractionGraph {
        let it: Vec<_> = pairs.iter().map(|&(u, i)| Interaction::new(u, i)).collect();
        InteractionGraph::build(&it, m, n).unwrap()
    }

    fn table(rows: usize, dim: usize, vals: &[f64]) -> EmbeddingTable {
        EmbeddingTable::from_vec(rows, dim, vals.to_vec()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let a = init_embeddings(3, 4, 8, 1);
        assert_eq!(a, init_embeddings(3, 4, 8, 1));
        assert_ne!(a, init_embeddings(3, 4, 8, 2));
        let empty_users = init_embeddings(0, 5, 4, 1);
        assert_eq!(empty_users.rows(), 5);

        // Row norms follow 0.1 * chi_256, whose mean is ~0.1 * 15.98.
        let t = init_embeddings(50, 50, 256, 9);
        let mean_norm: f64 =
            (0..t.rows()).map(|v| libm::sqrt(dot(t.row(v), t.row(v)))).sum::<f64>() / t.rows() as f64;
        assert!((mean_norm - 1.6).abs() < 0.16, "{mean_norm}");
    }

    #[test]
    fn single_edge_unit_normalization() {
        let g = graph(&[(0, 0)], 1, 1);
        let t = table(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = propagate_lightgcn(&g, &t, 1);
        assert_eq!(s.layer(1).row(0), t.row(1));
        assert_eq!(s.layer(1).row(1), t.row(0));
    }

    #[test]
    fn star_item_collects_both_users() {
        let g = graph(&[(0, 0), (1, 0)], 2, 1);
        let t = table(3, 2, &[1.0, 0.0, 0.0, 2.0, 5.0, 5.0]);
        let s = propagate_lightgcn(&g, &t, 1);
        let r2 = core::f64::consts::SQRT_2;
        let item = s.layer(1).row(2);
        assert!((item[0] - 1.0 / r2).abs() < 1e-15);
        assert!((item[1] - 2.0 / r2).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_is_zero_after_step() {
        let g = graph(&[(0, 0)], 2, 1);
        let t = init_embeddings(2, 1, 3, 4);
        let s = propagate_lightgcn(&g, &t, 2);
        for l in 1..=2 {
            assert!(s.layer(l).row(1).iter().all(|&x| x == 0.0));
        }
        let f = readout(&s);
        for (a, b) in f.row(1).iter().zip(t.row(1)) {
            assert!((a - b / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_weighted_message() {
        let g = graph(&[(0, 0)], 1, 1);
        let t = table(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let plan = WeightPlan::new(0.0, 0.0, IiwPlacement::FirstLayer, 0.0, 1).unwrap();
        let cache = PretrainedIiwCache::new(vec![0], 1, vec![0.5]).unwrap();
        let s = propagate_dpaa(&g, &t, &plan, &cache, 1.0).unwrap();
        assert_eq!(s.layer(1).row(0), &[1.5, 2.0]);
    }

    #[test]
    fn missing_cache_layer_is_config_error() {
        let g = graph(&[(0, 0)], 1, 1);
        let t = table(2, 1, &[1.0, 1.0]);
        let plan = WeightPlan::new(0.0, 0.0, IiwPlacement::AllLayers, 0.0, 2).unwrap();
        let cache = PretrainedIiwCache::new(vec![0], 1, vec![0.5]).unwrap();
        assert!(matches!(propagate_dpaa(&g, &t, &plan, &cache, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn readout_is_layer_mean() {
        let x = table(1, 2, &[1.0, -2.0]);
        let x3 = table(1, 2, &[3.0, -6.0]);
        let f = readout(&LayerStack::new(vec![x.clone(), x3]));
        assert_eq!(f.row(0), &[2.0, -4.0]);
        assert_eq!(readout(&LayerStack::new(vec![x.clone()])), x);
    }

    #[test]
    fn score_is_dot_product() {
        let t = table(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(score(&t, 1, 0, 0), 1.0);
        assert_eq!(score(&t, 1, 0, 1), 0.0);
    }
}
