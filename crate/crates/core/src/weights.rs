//! Edge and layer weights for debiased aggregation.
//!
//! Every user-item edge gets an inverse interaction weight (IIW): one minus the
//! cosine of the endpoint embeddings. Highly aligned pairs, which tend to be
//! popularity-driven, get small weights. The IIW used during training blends a
//! fixed estimate from a pretrained baseline with the current model's estimate,
//! shifting toward the current model as its embeddings stop moving. On top of
//! that each propagation step `l` is scaled by a layer weight `(l + 1)^eta`.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Where the inverse interaction weight is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IiwPlacement {
    /// IIW at every propagation step (`gamma = 0`).
    AllLayers,
    /// IIW at the first step only; deeper steps use the layer weight alone (`gamma = 1`).
    FirstLayer,
}

impl IiwPlacement {
    pub fn from_gamma(gamma: u8) -> Result<Self> {
        match gamma {
            0 => Ok(Self::AllLayers),
            1 => Ok(Self::FirstLayer),
            _ => Err(Error::param("gamma", "must be 0 or 1")),
        }
    }

    pub fn gamma(self) -> u8 {
        match self {
            Self::AllLayers => 0,
            Self::FirstLayer => 1,
        }
    }

    /// Propagation steps whose IIW must be cached from the pretrained model.
    pub fn cached_layers(self, num_layers: usize) -> Vec<usize> {
        match self {
            Self::AllLayers => (0..num_layers).collect(),
            Self::FirstLayer => alloc::vec![0],
        }
    }

    pub fn uses_iiw(self, layer: usize) -> bool {
        match self {
            Self::AllLayers => true,
            Self::FirstLayer => layer == 0,
        }
    }
}

/// Hyperparameters of the debiased propagation plus the resolved layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPlan {
    /// Stability sensitivity `C`; zero pins the blend to the pretrained IIW.
    pub c: f64,
    /// Layer-emphasis exponent.
    pub eta: f64,
    pub placement: IiwPlacement,
    /// Initial-residual strength.
    pub delta: f64,
    num_layers: usize,
    layer_weights: Vec<f64>,
}

impl WeightPlan {
    pub fn new(c: f64, eta: f64, placement: IiwPlacement, delta: f64, num_layers: usize) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::param("C", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::param("delta", "must lie in [0, 1]"));
        }
        let layer_weights = layer_weights(num_layers, eta)?;
        Ok(Self {
            c,
            eta,
            placement,
            delta,
            num_layers,
            layer_weights,
        })
    }

    /// Plan that reproduces plain LightGCN when every IIW is 1.
    pub fn neutral(num_layers: usize) -> Result<Self> {
        Self::new(0.0, 0.0, IiwPlacement::FirstLayer, 0.0, num_layers)
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// Normalized layer weights `lambda_0 .. lambda_{L-1}`.
    pub fn layer_weights(&self) -> &[f64] {
        &self.layer_weights
    }

    /// Replaces the layer weights. Used to ablate single layers in diagnostics.
    pub fn with_layer_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.num_layers {
            return Err(Error::Shape {
                expected: self.num_layers,
                actual: weights.len(),
            });
        }
        self.layer_weights = weights;
        Ok(self)
    }

    /// Aggregation weight for an edge at propagation step `layer` given its IIW.
    pub fn combined_weight(&self, layer: usize, iiw: f64) -> f64 {
        let lambda = self.layer_weights[layer];
        if self.placement.uses_iiw(layer) {
            lambda * iiw
        } else {
            lambda
        }
    }
}

/// `1 - cos(a, b)`. A zero-norm argument yields the neutral weight 1.
pub fn inverse_interaction_weight(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (libm::sqrt(na) * libm::sqrt(nb))
}

/// Blend coefficient `delta / (delta + C)`; 1 when `C = 0`.
pub fn stability_beta(delta_t: f64, c: f64) -> Result<f64> {
    if !(delta_t >= 0.0) {
        return Err(Error::param("delta_t", "must be >= 0"));
    }
    if !(c >= 0.0) {
        return Err(Error::param("C", "must be >= 0"));
    }
    if c == 0.0 {
        return Ok(1.0);
    }
    Ok(delta_t / (delta_t + c))
}

pub fn blend_iiw(pretrained: f64, current: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param("beta", "must lie in [0, 1]"));
    }
    Ok(beta * pretrained + (1.0 - beta) * current)
}

/// `(l + 1)^eta` for `l = 0..L`, rescaled to mean 1.
pub fn layer_weights(num_layers: usize, eta: f64) -> Result<Vec<f64>> {
    if num_layers == 0 {
        return Err(Error::param("num_layers", "must be >= 1"));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::param("eta", "must be finite and >= 0"));
    }
    let raw: Vec<f64> = (0..num_layers).map(|l| libm::pow((l + 1) as f64, eta)).collect();
    let mean = raw.iter().sum::<f64>() / num_layers as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Mean per-node L2 change between two row-major tables of width `dim`.
pub fn embedding_delta(prev: &[f64], curr: &[f64], dim: usize) -> Result<f64> {
    if prev.len() != curr.len() {
        return Err(Error::Shape {
            expected: prev.len(),
            actual: curr.len(),
        });
    }
    if dim == 0 || prev.len() % dim != 0 {
        return Err(Error::param("dim", "must divide the table length"));
    }
    let nodes = prev.len() / dim;
    if nodes == 0 {
        return Ok(0.0);
    }
    let total: f64 = prev
        .chunks_exact(dim)
        .zip(curr.chunks_exact(dim))
        .map(|(p, c)| {
            let sq: f64 = p.iter().zip(c).map(|(x, y)| (y - x) * (y - x)).sum();
            libm::sqrt(sq)
        })
        .sum();
    Ok(total / nodes as f64)
}

/// Per-epoch stability signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStability {
    pub delta_t: f64,
    pub beta_t: f64,
}

impl EpochStability {
    /// No previous epoch exists yet: the blend uses the pretrained IIW only.
    pub fn first_epoch() -> Self {
        Self {
            delta_t: 0.0,
            beta_t: 1.0,
        }
    }

    pub fn from_delta(delta_t: f64, c: f64) -> Result<Self> {
        Ok(Self {
            delta_t,
            beta_t: stability_beta(delta_t, c)?,
        })
    }
}

/// Closed-form drop in the popular-to-niche contribution ratio caused by IIW.
///
/// With contribution `I = d * ||e||` and IIW-weighted contribution
/// `d * rbar * ||e||`, returns `(1 - rbar_p / rbar_q) * I_p / I_q`, which is
/// positive whenever the popular item's mean IIW is smaller.
pub fn popularity_influence_reduction(
    d_p: f64,
    d_q: f64,
    norm_p: f64,
    norm_q: f64,
    rbar_p: f64,
    rbar_q: f64,
) -> Result<f64> {
    for (name, v) in [
        ("d_p", d_p),
        ("d_q", d_q),
        ("norm_p", norm_p),
        ("norm_q", norm_q),
        ("rbar_p", rbar_p),
        ("rbar_q", rbar_q),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::param(name, "must be finite and > 0"));
        }
    }
    if rbar_p >= rbar_q {
        return Err(Error::ReductionPrecondition);
    }
    Ok((1.0 - rbar_p / rbar_q) * (d_p * norm_p) / (d_q * norm_q))
}

/// Per-edge IIW of a pretrained model, one block per cached propagation step.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedIiwCache {
    layers: Vec<usize>,
    edge_count: usize,
    values: Vec<f64>,
}

impl PretrainedIiwCache {
    /// `values` is layer-major: block `k` holds the edges of `layers[k]`.
    pub fn new(layers: Vec<usize>, edge_count: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != layers.len() * edge_count {
            return Err(Error::Shape {
                expected: layers.len() * edge_count,
                actual: values.len(),
            });
        }
        Ok(Self {
            layers,
            edge_count,
            values,
        })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer(&self, layer: usize) -> Option<&[f64]> {
        let k = self.layers.iter().position(|&l| l == layer)?;
        Some(&self.values[k * self.edge_count..(k + 1) * self.edge_count])
    }

    /// Checks that every step needing IIW under `plan` is present.
    pub fn check_covers(&self, plan: &WeightPlan, edge_count: usize) -> Result<()> {
        if self.edge_count != edge_count {
            return Err(Error::Config("IIW cache edge count does not match the training graph"));
        }
        for l in plan.placement.cached_layers(plan.num_layers()) {
            if self.layer(l).is_none() {
                return Err(Error::Config("IIW cache is missing a layer required by gamma"));
            }
        }
        Ok(())
    }
}
