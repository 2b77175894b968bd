//! Dataset loading and the pretrain / train / sweep / grid workflows.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dpaa_core::datagen::{generate_biased_training, latent_preference_pool, split_pool, SplitSpec};
use dpaa_core::eval::{evaluate, recall_only, EvalReport, GroupMetrics, RankingTask};
use dpaa_core::graph::popularity_split;
use dpaa_core::model::{EmbeddingTable, Mode, ModelConfig};
use dpaa_core::train::{final_embeddings, fit, pretrain_base, EpochRecord, FitResult, TrainConfig};
use dpaa_core::weights::{PretrainedIiwCache, WeightPlan};
use dpaa_core::{Interaction, InteractionGraph, PopularitySplit};

use crate::config::{DataConfig, ExperimentConfig, PoolSection};
use crate::formats::{read_candidates, read_interactions, Checkpoint};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Interaction>,
    pub valid: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub candidates: Option<Vec<u32>>,
}

impl Dataset {
    /// Shape defaults to the largest ids across all three splits plus one.
    pub fn new(
        train: Vec<Interaction>,
        valid: Vec<Interaction>,
        test: Vec<Interaction>,
        candidates: Option<Vec<u32>>,
        shape: (Option<usize>, Option<usize>),
    ) -> Self {
        let all = || train.iter().chain(&valid).chain(&test);
        let num_users = shape.0.unwrap_or_else(|| all().map(|it| it.user as usize + 1).max().unwrap_or(0));
        let num_items = shape.1.unwrap_or_else(|| {
            let seen = all().map(|it| it.item as usize + 1).max().unwrap_or(0);
            let cand = candidates.iter().flatten().map(|&i| i as usize + 1).max().unwrap_or(0);
            seen.max(cand)
        });
        Self {
            num_users,
            num_items,
            train,
            valid,
            test,
            candidates,
        }
    }

    pub fn load(cfg: &DataConfig) -> Result<Self> {
        let need = |p: &Option<std::path::PathBuf>, key: &str| -> Result<std::path::PathBuf> {
            p.clone().with_context(|| format!("data.{key} is not set"))
        };
        let train = read_interactions(&need(&cfg.train, "train")?)?;
        let valid = read_interactions(&need(&cfg.valid, "valid")?)?;
        // pretraining and grid search never look at the test split
        let test = match &cfg.test {
            Some(p) => read_interactions(p)?,
            None => Vec::new(),
        };
        let candidates = cfg.candidates.as_deref().map(read_candidates).transpose()?;
        Ok(Self::new(train, valid, test, candidates, (cfg.num_users, cfg.num_items)))
    }
}

/// A dataset with its training graph and ranking tasks built once.
pub struct Prepared {
    pub data: Dataset,
    pub graph: InteractionGraph,
    pub valid_task: RankingTask,
    pub test_task: RankingTask,
    pub split: PopularitySplit,
}

impl Prepared {
    pub fn new(data: Dataset, popular_share: f64) -> Result<Self> {
        let graph = InteractionGraph::build(&data.train, data.num_users, data.num_items)?;
        let task = |held: &[Interaction]| {
            RankingTask::new(data.num_users, data.num_items, held, &graph, data.candidates.clone())
        };
        let valid_task = task(&data.valid)?;
        let test_task = task(&data.test)?;
        let split = popularity_split(&graph, &data.train, popular_share)?;
        Ok(Self {
            data,
            graph,
            valid_task,
            test_task,
            split,
        })
    }

    fn validator(&self, k: usize) -> impl FnMut(&EmbeddingTable) -> f64 + '_ {
        move |emb| recall_only(emb, &self.valid_task, k)
    }

    pub fn pretrain(
        &self,
        model: &ModelConfig,
        train: &TrainConfig,
        on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<(FitResult, PretrainedIiwCache)> {
        Ok(pretrain_base(&self.graph, model, train, self.validator(train.eval_k), on_epoch)?)
    }

    pub fn train(
        &self,
        model: &ModelConfig,
        train: &TrainConfig,
        cache: Option<&PretrainedIiwCache>,
        on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<FitResult> {
        Ok(fit(&self.graph, model, train, cache, self.validator(train.eval_k), on_epoch)?)
    }

    /// Test-set report with the popular / niche breakdown.
    pub fn test_report(
        &self,
        model: &ModelConfig,
        cache: Option<&PretrainedIiwCache>,
        table: &EmbeddingTable,
        beta: f64,
        k: usize,
    ) -> Result<EvalReport> {
        let emb = final_embeddings(&self.graph, model, cache, table, beta)?;
        Ok(evaluate(&emb, &self.test_task, Some(&self.split), k))
    }
}

pub fn checkpoint_of(model: &ModelConfig, data: &Dataset, table: EmbeddingTable, beta: f64) -> Checkpoint {
    Checkpoint {
        num_users: data.num_users,
        num_items: data.num_items,
        dim: model.dim,
        num_layers: model.num_layers,
        mode: model.mode,
        c: model.plan.c,
        eta: model.plan.eta,
        delta: model.plan.delta,
        placement: model.plan.placement,
        beta,
        table,
    }
}

/// Rebuilds the model configuration stored in a checkpoint.
pub fn model_of(ckpt: &Checkpoint) -> Result<ModelConfig> {
    let plan = WeightPlan::new(ckpt.c, ckpt.eta, ckpt.placement, ckpt.delta, ckpt.num_layers)?;
    Ok(ModelConfig::new(ckpt.dim, ckpt.mode, plan)?)
}

/// Field-wise mean of several reports (users counts are averaged too).
pub fn mean_report(reports: &[EvalReport]) -> EvalReport {
    assert!(!reports.is_empty());
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> &GroupMetrics| GroupMetrics {
        recall: reports.iter().map(|r| f(r).recall).sum::<f64>() / n,
        ndcg: reports.iter().map(|r| f(r).ndcg).sum::<f64>() / n,
        hit_ratio: reports.iter().map(|r| f(r).hit_ratio).sum::<f64>() / n,
        num_users: (reports.iter().map(|r| f(r).num_users).sum::<usize>() as f64 / n).round() as usize,
    };
    EvalReport {
        k: reports[0].k,
        all: mean(&|r| &r.all),
        popular: mean(&|r| &r.popular),
        niche: mean(&|r| &r.niche),
        skipped_users: reports[0].skipped_users.clone(),
    }
}

/// Runs `work` over `cells` on up to `jobs` threads; results come back in cell order.
pub fn run_cells<T: Sync, R: Send>(cells: &[T], jobs: usize, work: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<R>>>> = cells.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            s.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= cells.len() {
                    break;
                }
                let out = work(&cells[idx]);
                *slots[idx].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every cell ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub c: f64,
    pub eta: f64,
    pub delta: f64,
    pub val_recall: f64,
    pub best_epoch: usize,
}

/// Exhaustive search; the winner is the first cell (in grid order) with the
/// highest mean validation recall.
pub fn run_grid(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    cache: &PretrainedIiwCache,
    seeds: &[u64],
) -> Result<(Vec<GridRow>, usize)> {
    let cells = cfg.grid.cells();
    if cells.is_empty() {
        bail!("grid is empty");
    }
    let base = cfg.model_config()?;
    let rows = run_cells(&cells, cfg.jobs(), |&(c, eta, delta)| {
        let plan = WeightPlan::new(c, eta, base.plan.placement, delta, base.num_layers)?;
        let model = ModelConfig::new(base.dim, Mode::Dpaa, plan)?;
        let mut total = 0.0;
        let mut best_epoch = 0;
        for &seed in seeds {
            let fitted = prep.train(&model, &cfg.train_config(seed)?, Some(cache), |_| {})?;
            total += fitted.best_metric;
            best_epoch = fitted.best_epoch;
        }
        Ok(GridRow {
            c,
            eta,
            delta,
            val_recall: total / seeds.len() as f64,
            best_epoch,
        })
    })?;
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.val_recall > rows[best].val_recall {
            best = i;
        }
    }
    Ok((rows, best))
}

pub fn load_or_synthesize_pool(pool: &PoolSection) -> Result<Vec<Interaction>> {
    match &pool.path {
        Some(p) => Ok(read_interactions(p)?),
        None => Ok(latent_preference_pool(
            pool.users,
            pool.items,
            pool.per_user,
            pool.latent_dim,
            pool.temperature,
            pool.popularity,
            pool.seed,
        )?),
    }
}

/// Biased train split plus the unbiased validation and test splits.
pub fn generate_dataset(
    pool: &[Interaction],
    severity: f64,
    seed: u64,
    budget: dpaa_core::datagen::Budget,
) -> Result<Dataset> {
    let split = split_pool(pool, &SplitSpec::standard(seed))?;
    let train = generate_biased_training(&split.pool, severity, seed, budget)?;
    let num_users = pool.iter().map(|it| it.user as usize + 1).max().unwrap_or(0);
    let num_items = pool.iter().map(|it| it.item as usize + 1).max().unwrap_or(0);
    Ok(Dataset::new(
        train,
        split.validation,
        split.test,
        None,
        (Some(num_users), Some(num_items)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub severity: f64,
    pub method: Mode,
    pub report: EvalReport,
}

/// For each severity and seed: generate, pretrain the baseline (its test
/// report is the LightGCN row), train DPAA on the cached weights, evaluate.
/// Rows are seed means, ordered by severity then method (dpaa, lightgcn).
pub fn run_sweep(pool: &[Interaction], cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let model = ModelConfig {
        mode: Mode::Dpaa,
        ..cfg.model_config()?
    };
    let base = ModelConfig {
        mode: Mode::LightGcn,
        ..model.clone()
    };
    let k = cfg.train.k;
    let cells: Vec<(f64, u64)> = cfg
        .sweep
        .severities
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results = run_cells(&cells, cfg.jobs(), |&(severity, seed)| {
        let data = generate_dataset(pool, severity, seed, cfg.generate.budget())?;
        let prep = Prepared::new(data, cfg.data.popular_share)?;
        let train = cfg.train_config(seed)?;
        let (baseline, cache) = prep.pretrain(&model, &train, |_| {})?;
        let lightgcn = prep.test_report(&base, None, &baseline.best_table, 1.0, k)?;
        let fitted = prep.train(&model, &train, Some(&cache), |_| {})?;
        let dpaa = prep.test_report(&model, Some(&cache), &fitted.best_table, fitted.best_beta, k)?;
        Ok((dpaa, lightgcn))
    })?;
    let mut rows = Vec::new();
    for (si, &severity) in cfg.sweep.severities.iter().enumerate() {
        let chunk = &results[si * seeds.len()..(si + 1) * seeds.len()];
        let dpaa: Vec<EvalReport> = chunk.iter().map(|r| r.0.clone()).collect();
        let lgcn: Vec<EvalReport> = chunk.iter().map(|r| r.1.clone()).collect();
        rows.push(SweepRow {
            severity,
            method: Mode::Dpaa,
            report: mean_report(&dpaa),
        });
        rows.push(SweepRow {
            severity,
            method: Mode::LightGcn,
            report: mean_report(&lgcn),
        });
    }
    Ok(rows)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))
}
