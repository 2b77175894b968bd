//! Command-line surface. Each subcommand resolves the config file plus flag
//! overrides, runs, and writes its outputs and a `manifest.toml` into the
//! output directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dpaa_core::model::Mode;
use dpaa_core::weights::PretrainedIiwCache;

use crate::config::ExperimentConfig;
use crate::experiment::{
    checkpoint_of, ensure_dir, generate_dataset, load_or_synthesize_pool, mean_report, model_of, run_grid, run_sweep,
    Dataset, Prepared,
};
use crate::formats::{export_cache_text, read_cache, read_checkpoint, write_cache, write_checkpoint, write_interactions};
use crate::report::{
    grid_csv, markdown_table, parse_report_csv, report_csv, rows_of, sweep_csv, training_log_csv, write_text,
};

#[derive(Debug, Parser)]
#[command(name = "dpaa", version, about = "Popularity-debiased graph collaborative filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the unweighted baseline and cache its per-edge IIW.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Also write the cache as `edge_index<TAB>layer<TAB>value` text.
        #[arg(long)]
        export_text: bool,
    },
    /// Train a model and report its test metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pretrained IIW cache (required in dpaa mode).
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Draw a popularity-biased training split from an unbiased pool.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        severity: Option<f64>,
        /// Per-user budget as a share of the user's pool interactions.
        #[arg(long)]
        budget_fraction: Option<f64>,
        /// Fixed per-user budget.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Generate, pretrain, train and evaluate across bias severities.
    SweepSeverity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        severities: Option<Vec<f64>>,
    },
    /// Exhaustive search over (C, eta, delta) by validation recall.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long = "grid-C", value_delimiter = ',')]
        grid_c: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        grid_eta: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        grid_delta: Option<Vec<f64>>,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Render report CSVs as one markdown table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config file plus flags that override its keys.
#[derive(Debug, Args, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, value_parser = ["dpaa", "lightgcn"])]
    pub mode: Option<String>,
    #[arg(long = "C")]
    pub c: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<u8>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub reg: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            train => data.train, valid => data.valid, test => data.test, candidates => data.candidates,
            dim => model.dim, layers => model.layers, mode => model.mode,
            c => dpaa.c, eta => dpaa.eta, delta => dpaa.delta, gamma => dpaa.gamma,
            lr => train.learning_rate, batch_size => train.batch_size, max_epochs => train.max_epochs,
            patience => train.patience, reg => train.reg, k => train.k, seed => train.seed,
            seeds => train.seeds, jobs => train.jobs,
        );
        let out = match (&self.out, &cfg.out_dir) {
            (Some(o), _) | (None, Some(o)) => o.clone(),
            (None, None) => bail!("no output directory: pass --out or set out_dir"),
        };
        cfg.out_dir = Some(out.clone());
        ensure_dir(&out)?;
        Ok((cfg, out))
    }
}

fn manifest(command: &str, cfg: &ExperimentConfig, extra: &[(&str, String)]) -> String {
    let mut out = format!("command = \"{command}\"\n");
    for (k, v) in extra {
        writeln!(out, "{k} = {v}").unwrap();
    }
    out.push('\n');
    out.push_str(&cfg.to_toml());
    out
}

fn seed_list(seeds: &[u64]) -> String {
    format!("{seeds:?}")
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing human-readable progress to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Pretrain { common, export_text } => cmd_pretrain(&common, export_text, stdout),
        Command::Train { common, cache } => cmd_train(&common, cache.as_deref(), stdout),
        Command::Generate {
            common,
            pool,
            severity,
            budget_fraction,
            budget,
        } => cmd_generate(&common, pool, severity, budget_fraction, budget, stdout),
        Command::SweepSeverity {
            common,
            pool,
            severities,
        } => cmd_sweep(&common, pool, severities, stdout),
        Command::Grid {
            common,
            cache,
            grid_c,
            grid_eta,
            grid_delta,
        } => cmd_grid(&common, &cache, grid_c, grid_eta, grid_delta, stdout),
        Command::Evaluate {
            common,
            checkpoint,
            cache,
        } => cmd_evaluate(&common, &checkpoint, cache.as_deref(), stdout),
        Command::Report { inputs, out } => cmd_report(&inputs, out.as_deref(), stdout),
    }
}

fn cmd_pretrain(common: &Common, export_text: bool, stdout: &mut dyn std::io::Write) -> Result<()> {
    let (cfg, out) = common.resolve()?;
    let prep = Prepared::new(Dataset::load(&cfg.data)?, cfg.data.popular_share)?;
    let model = cfg.model_config()?;
    let train = cfg.train_config(cfg.train.seed)?;
    let (fitted, cache) = prep.pretrain(&model, &train, |_| {})?;
    let base = dpaa_core::ModelConfig {
        mode: Mode::LightGcn,
        ..model
    };
    write_checkpoint(&out.join("base.ckpt"), &checkpoint_of(&base, &prep.data, fitted.best_table, 1.0))?;
    write_cache(&out.join("iiw_cache.bin"), &cache)?;
    if export_text {
        export_cache_text(&out.join("iiw_cache.tsv"), &cache)?;
    }
    write_text(&out.join("pretrain_log.csv"), &training_log_csv(&fitted.log))?;
    let layers = format!("{:?}", cache.layers());
    write_text(
        &out.join("manifest.toml"),
        &manifest(
            "pretrain",
            &cfg,
            &[("seeds", seed_list(&[cfg.train.seed])), ("cache_layers", layers.clone())],
        ),
    )?;
    writeln!(stdout, "best_epoch={}", fitted.best_epoch)?;
    writeln!(stdout, "val_recall@{}={:.6}", cfg.train.k, fitted.best_metric)?;
    writeln!(stdout, "cache_layers={layers}")?;
    Ok(())
}

fn cmd_train(common: &Common, cache_path: Option<&Path>, stdout: &mut dyn std::io::Write) -> Result<()> {
    let (cfg, out) = common.resolve()?;
    let prep = Prepared::new(Dataset::load(&cfg.data)?, cfg.data.popular_share)?;
    if prep.data.test.is_empty() {
        bail!("data.test is required for train");
    }
    let model = cfg.model_config()?;
    let cache = load_cache_for(model.mode, cache_path)?;
    let seeds = cfg.seeds()?;
    let mut reports = Vec::new();
    for &seed in &seeds {
        let dir = if seeds.len() == 1 {
            out.clone()
        } else {
            out.join(format!("seed-{seed}"))
        };
        ensure_dir(&dir)?;
        let fitted = prep.train(&model, &cfg.train_config(seed)?, cache.as_ref(), |_| {})?;
        let report = prep.test_report(&model, cache.as_ref(), &fitted.best_table, fitted.best_beta, cfg.train.k)?;
        write_text(&dir.join("train_log.csv"), &training_log_csv(&fitted.log))?;
        write_text(&dir.join("report.csv"), &report_csv(&report))?;
        let ckpt = checkpoint_of(&model, &prep.data, fitted.best_table, fitted.best_beta);
        write_checkpoint(&dir.join("model.ckpt"), &ckpt)?;
        writeln!(
            stdout,
            "seed={seed} best_epoch={} val_recall@{k}={:.6} test_recall@{k}={:.6}",
            fitted.best_epoch,
            fitted.best_metric,
            report.all.recall,
            k = cfg.train.k
        )?;
        reports.push(report);
    }
    let mean = mean_report(&reports);
    write_text(&out.join("report.csv"), &report_csv(&mean))?;
    write_text(&out.join("report.md"), &markdown_table(&[(cfg.model.mode.clone(), rows_of(&mean))]))?;
    write_text(&out.join("manifest.toml"), &manifest("train", &cfg, &[("seeds", seed_list(&seeds))]))?;
    writeln!(stdout, "test_recall@{}={:.6}", cfg.train.k, mean.all.recall)?;
    Ok(())
}

fn load_cache_for(mode: Mode, path: Option<&Path>) -> Result<Option<PretrainedIiwCache>> {
    match (mode, path) {
        (Mode::Dpaa, None) => bail!("dpaa mode needs --cache from `dpaa pretrain`"),
        (_, Some(p)) => Ok(Some(read_cache(p)?)),
        (Mode::LightGcn, None) => Ok(None),
    }
}

fn cmd_generate(
    common: &Common,
    pool: Option<PathBuf>,
    severity: Option<f64>,
    budget_fraction: Option<f64>,
    budget: Option<usize>,
    stdout: &mut dyn std::io::Write,
) -> Result<()> {
    let (mut cfg, out) = common.resolve()?;
    if let Some(p) = pool {
        cfg.pool.path = Some(p);
    }
    if let Some(s) = severity {
        cfg.generate.severity = s;
    }
    if let Some(f) = budget_fraction {
        cfg.generate.budget_fraction = f;
    }
    if budget.is_some() {
        cfg.generate.budget = budget;
    }
    cfg.generate.seed = common.seed.unwrap_or(cfg.generate.seed);
    let pool = load_or_synthesize_pool(&cfg.pool)?;
    let data = generate_dataset(&pool, cfg.generate.severity, cfg.generate.seed, cfg.generate.budget())?;
    write_interactions(&out.join("train.tsv"), &data.train)?;
    write_interactions(&out.join("valid.tsv"), &data.valid)?;
    write_interactions(&out.join("test.tsv"), &data.test)?;
    let counts = [
        ("severity", format!("{}", cfg.generate.severity)),
        ("seed", format!("{}", cfg.generate.seed)),
        ("pool_interactions", pool.len().to_string()),
        ("train_interactions", data.train.len().to_string()),
        ("valid_interactions", data.valid.len().to_string()),
        ("test_interactions", data.test.len().to_string()),
    ];
    write_text(&out.join("manifest.toml"), &manifest("generate", &cfg, &counts))?;
    for (k, v) in counts {
        writeln!(stdout, "{k}={v}")?;
    }
    Ok(())
}

fn cmd_sweep(
    common: &Common,
    pool: Option<PathBuf>,
    severities: Option<Vec<f64>>,
    stdout: &mut dyn std::io::Write,
) -> Result<()> {
    let (mut cfg, out) = common.resolve()?;
    if let Some(p) = pool {
        cfg.pool.path = Some(p);
    }
    if let Some(s) = severities {
        cfg.sweep.severities = s;
    }
    let seeds = cfg.seeds()?;
    let pool = load_or_synthesize_pool(&cfg.pool)?;
    let rows = run_sweep(&pool, &cfg, &seeds)?;
    let csv = sweep_csv(&rows, cfg.train.k);
    write_text(&out.join("sweep.csv"), &csv)?;
    write_text(&out.join("manifest.toml"), &manifest("sweep-severity", &cfg, &[("seeds", seed_list(&seeds))]))?;
    stdout.write_all(csv.as_bytes())?;
    Ok(())
}

fn cmd_grid(
    common: &Common,
    cache_path: &Path,
    grid_c: Option<Vec<f64>>,
    grid_eta: Option<Vec<f64>>,
    grid_delta: Option<Vec<f64>>,
    stdout: &mut dyn std::io::Write,
) -> Result<()> {
    let (mut cfg, out) = common.resolve()?;
    if let Some(v) = grid_c {
        cfg.grid.c = v;
    }
    if let Some(v) = grid_eta {
        cfg.grid.eta = v;
    }
    if let Some(v) = grid_delta {
        cfg.grid.delta = v;
    }
    let prep = Prepared::new(Dataset::load(&cfg.data)?, cfg.data.popular_share)?;
    let cache = read_cache(cache_path)?;
    let seeds = cfg.seeds()?;
    let (rows, best) = run_grid(&prep, &cfg, &cache, &seeds)?;
    write_text(&out.join("grid.csv"), &grid_csv(&rows))?;
    let b = &rows[best];
    let best_fields = [
        ("seeds", seed_list(&seeds)),
        ("best_c", format!("{}", b.c)),
        ("best_eta", format!("{}", b.eta)),
        ("best_delta", format!("{}", b.delta)),
    ];
    write_text(&out.join("manifest.toml"), &manifest("grid", &cfg, &best_fields))?;
    writeln!(
        stdout,
        "cells={} best_C={} best_eta={} best_delta={} val_recall@{}={:.6}",
        rows.len(),
        b.c,
        b.eta,
        b.delta,
        cfg.train.k,
        b.val_recall
    )?;
    Ok(())
}

fn cmd_evaluate(
    common: &Common,
    checkpoint: &Path,
    cache_path: Option<&Path>,
    stdout: &mut dyn std::io::Write,
) -> Result<()> {
    let (mut cfg, out) = common.resolve()?;
    let ckpt = read_checkpoint(checkpoint)?;
    cfg.data.num_users = Some(ckpt.num_users);
    cfg.data.num_items = Some(ckpt.num_items);
    let prep = Prepared::new(Dataset::load(&cfg.data)?, cfg.data.popular_share)?;
    if prep.data.test.is_empty() {
        bail!("data.test is required for evaluate");
    }
    let model = model_of(&ckpt)?;
    let cache = load_cache_for(model.mode, cache_path)?;
    let report = prep
        .test_report(&model, cache.as_ref(), &ckpt.table, ckpt.beta, cfg.train.k)
        .with_context(|| format!("{}", checkpoint.display()))?;
    write_text(&out.join("report.csv"), &report_csv(&report))?;
    write_text(&out.join("report.md"), &markdown_table(&[(model.mode.as_str().to_string(), rows_of(&report))]))?;
    write_text(
        &out.join("manifest.toml"),
        &manifest("evaluate", &cfg, &[("checkpoint", format!("{:?}", checkpoint.display().to_string()))]),
    )?;
    stdout.write_all(report_csv(&report).as_bytes())?;
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: Option<&Path>, stdout: &mut dyn std::io::Write) -> Result<()> {
    let blocks = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), parse_report_csv(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = markdown_table(&blocks);
    match out {
        Some(p) => write_text(p, &table),
        None => Ok(stdout.write_all(table.as_bytes())?),
    }
}
