//! Experiment configuration: a TOML file with `[data]`, `[model]`, `[dpaa]`,
//! `[train]`, `[generate]`, `[pool]`, `[sweep]` and `[grid]` sections. Every
//! key is optional; command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dpaa_core::datagen::Budget;
use dpaa_core::model::{Mode, ModelConfig};
use dpaa_core::train::TrainConfig;
use dpaa_core::weights::{IiwPlacement, WeightPlan};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Restricts ranking to these items (one id per line).
    pub candidates: Option<PathBuf>,
    /// Defaults to the largest id seen plus one.
    pub num_users: Option<usize>,
    pub num_items: Option<usize>,
    /// Share of training interactions covered by the popular group.
    pub popular_share: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            valid: None,
            test: None,
            candidates: None,
            num_users: None,
            num_items: None,
            popular_share: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub layers: usize,
    pub mode: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            mode: "dpaa".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpaaSection {
    pub c: f64,
    pub eta: f64,
    pub delta: f64,
    pub gamma: u8,
}

impl Default for DpaaSection {
    fn default() -> Self {
        Self {
            c: 1e-4,
            eta: 2.0,
            delta: 0.2,
            gamma: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub reg: f64,
    pub k: usize,
    pub seed: u64,
    /// Runs with seeds `seed, seed + 1, ...`; reports are means.
    pub seeds: usize,
    /// Worker threads for grid and sweep cells; 0 means all cores.
    pub jobs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            reg: d.reg,
            k: d.eval_k,
            seed: d.seed,
            seeds: 1,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub severity: f64,
    pub seed: u64,
    /// Per-user budget as a share of the user's pool interactions.
    pub budget_fraction: f64,
    /// Fixed per-user budget; overrides `budget_fraction` when set.
    pub budget: Option<usize>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            severity: 0.0,
            seed: 0,
            budget_fraction: 0.5,
            budget: None,
        }
    }
}

impl GenerateSection {
    pub fn budget(&self) -> Budget {
        match self.budget {
            Some(n) => Budget::Fixed(n),
            None => Budget::PoolFraction(self.budget_fraction),
        }
    }
}

/// Unbiased pool for severity sweeps: a file, or a synthetic latent-factor pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    pub path: Option<PathBuf>,
    pub users: usize,
    pub items: usize,
    pub per_user: usize,
    pub latent_dim: usize,
    pub temperature: f64,
    /// Exponent of the shared item appeal skew.
    pub popularity: f64,
    pub seed: u64,
}

impl Default for PoolSection {
    fn default() -> Self {
        Self {
            path: None,
            users: 500,
            items: 800,
            per_user: 100,
            latent_dim: 16,
            temperature: 0.1,
            popularity: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub severities: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            severities: vec![0.0, 3.0, 6.0, 9.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub c: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            c: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            eta: vec![0.0, 1.0, 2.0, 3.0],
            delta: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl GridSection {
    /// Cells in lexicographic `(C, eta, delta)` order.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.c.len() * self.eta.len() * self.delta.len());
        for &c in &self.c {
            for &eta in &self.eta {
                for &delta in &self.delta {
                    out.push((c, eta, delta));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; `--out` overrides it.
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelSection,
    pub dpaa: DpaaSection,
    pub train: TrainSection,
    pub generate: GenerateSection,
    pub pool: PoolSection,
    pub sweep: SweepSection,
    pub grid: GridSection,
}

impl ExperimentConfig {
    /// Parses a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.train,
            &mut cfg.data.valid,
            &mut cfg.data.test,
            &mut cfg.data.candidates,
            &mut cfg.pool.path,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mode(&self) -> anyhow::Result<Mode> {
        self.model.mode.parse().map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn weight_plan(&self) -> anyhow::Result<WeightPlan> {
        let d = &self.dpaa;
        Ok(WeightPlan::new(
            d.c,
            d.eta,
            IiwPlacement::from_gamma(d.gamma)?,
            d.delta,
            self.model.layers,
        )?)
    }

    pub fn model_config(&self) -> anyhow::Result<ModelConfig> {
        Ok(ModelConfig::new(self.model.dim, self.mode()?, self.weight_plan()?)?)
    }

    pub fn train_config(&self, seed: u64) -> anyhow::Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience.min(t.max_epochs),
            reg: t.reg,
            eval_k: t.k,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `seed, seed + 1, ...` for `train.seeds` runs.
    pub fn seeds(&self) -> anyhow::Result<Vec<u64>> {
        if self.train.seeds == 0 {
            bail!("train.seeds must be >= 1");
        }
        Ok((0..self.train.seeds as u64).map(|i| self.train.seed + i).collect())
    }

    pub fn jobs(&self) -> usize {
        match self.train.jobs {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}
