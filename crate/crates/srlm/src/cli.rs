// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `srlm` command line.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric
//! failure (divergence), 4 corrupt model or checkpoint file.

use std::ffi::OsString;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;
use srlm_core::calibrator::{calibrate_resumable, CalibConfig, CalibOutcome, CalibProgress};
use srlm_core::corpus::{SplitConfig, BYTE_VOCAB, DEFAULT_MAX_LEN};
use srlm_core::hwcost::{
    self, back_derived_profile, block_op_counts, cost, improvement, scale_to_model, BlockShape,
    CostConfig, DensityProfile,
};
use srlm_core::metrics::{measure, SparsityReport};
use srlm_core::rwkv::{RwkvConfig, RwkvModel};
use srlm_core::threshold::Arch;
use srlm_core::train::{train_with_progress, Optimizer, TrainConfig, TrainModel};
use srlm_core::transformer::{TransformerConfig, TransformerModel};
use srlm_core::{Position, SparseLm, ThresholdAssignment};

use crate::corpus_io::{self, LoadOptions, Part};
use crate::cost_io;
use crate::error::{self, Error, Result};
use crate::exec::{resolve_threads, Pool};
use crate::manifest::{manifest_path, ManifestBuilder};
use crate::model_file::{self, Model};
use crate::reports;
use crate::thresholds::ThresholdFile;
use crate::with_model;

#[derive(Debug, Parser)]
#[command(name = "srlm", version, about = "Activation-sparse recurrent language models")]
pub struct Cli {
    /// Worker threads for calibration, evaluation and training batches
    /// [env: SRLM_THREADS]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a byte-level model from scratch
    Train(TrainArgs),
    /// Search per-site thresholds under a loss budget
    Calibrate(CalibrateArgs),
    /// Measure sparsity and loss
    Eval(EvalArgs),
    /// Event-driven energy and latency estimate
    Cost(CostArgs),
    /// Model file <-> raw tensor directory
    Convert(ConvertArgs),
    /// Summarize a model, thresholds or checkpoint file
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus file or directory
    #[arg(long)]
    pub corpus: PathBuf,
    /// Part of the seeded split to use
    #[arg(long, value_enum)]
    pub split: Option<Part>,
    #[arg(long, default_value_t = 16)]
    pub n_calib: usize,
    #[arg(long, default_value_t = 64)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Truncate documents to this many tokens
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Do not prepend BOS to byte documents
    #[arg(long)]
    pub no_bos: bool,
}

impl CorpusArgs {
    fn load(&self, default: Part, vocab_size: usize) -> Result<Vec<srlm_core::corpus::Document>> {
        let options = LoadOptions {
            bos: !self.no_bos,
            max_len: Some(self.max_len),
            vocab_size,
        };
        let split = SplitConfig {
            n_calib: self.n_calib,
            n_test: self.n_test,
            seed: self.split_seed,
        };
        corpus_io::load_part(&self.corpus, options, split, self.split.unwrap_or(default))
    }

    fn snapshot(&self, default: Part) -> serde_json::Value {
        json!({
            "corpus": self.corpus,
            "split": self.split.unwrap_or(default),
            "n_calib": self.n_calib,
            "n_test": self.n_test,
            "split_seed": self.split_seed,
            "max_len": self.max_len,
            "bos": !self.no_bos,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Rwkv,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ArchArg::Rwkv)]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Attention heads (transformer only)
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Learned positions (transformer only)
    #[arg(long, default_value_t = 512)]
    pub max_positions: usize,
    #[arg(long, default_value_t = BYTE_VOCAB)]
    pub vocab: usize,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// TOML file with training hyperparameters; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub min_lr_fraction: Option<f64>,
    /// Global gradient-norm clip; 0 disables
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Seed for window sampling and, unless --init-seed is given, weights
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Print the loss every N steps
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
    /// Model file to write
    #[arg(short, long)]
    pub output: PathBuf,
    /// Loss curve CSV [default: <output>.curve.csv]
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// `start:end:step` or a comma list
    #[arg(long, default_value = "10:90:10")]
    pub percentages: String,
    #[arg(long, default_value_t = 1.0005)]
    pub loss_inc: f64,
    /// Always search each site's ladder from the bottom
    #[arg(long)]
    pub no_heuristic: bool,
    /// Use only the first N calibration documents
    #[arg(long)]
    pub calib_docs: Option<usize>,
    /// Seed for activation subsampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reservoir size per site
    #[arg(long)]
    pub max_sample: Option<usize>,
    /// Thresholds file to write
    #[arg(short, long)]
    pub output: PathBuf,
    /// Calibration report [default: <output>.report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Checkpoint written after every site [default: <output>.ckpt.json]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many sites in this invocation (checkpoint kept)
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Thresholds file; omitted means natural sparsity only
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Loss the increase is measured against; with --thresholds and no
    /// value the λ = 0 loss is computed
    #[arg(long)]
    pub baseline_loss: Option<f64>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    /// Model width [default: 2560, or the width of --model]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Take the width from a model file
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Cost constants (TOML) [default: the seneca-default preset]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sparse density profile (TOML)
    #[arg(long, conflicts_with_all = ["report", "reference_sparse"])]
    pub density: Option<PathBuf>,
    /// Derive the sparse densities from an `eval --json` report
    #[arg(long, conflicts_with = "reference_sparse")]
    pub report: Option<PathBuf>,
    /// Use the densities back-derived from the published 3B sparse column
    #[arg(long)]
    pub reference_sparse: bool,
    /// Dense baseline profile (TOML) [default: density 1, CM_V at the fitted natural density]
    #[arg(long)]
    pub dense: Option<PathBuf>,
    /// Multiply by this many blocks
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Multiply by this many tokens
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    /// Model file or raw tensor directory
    #[arg(long)]
    pub input: PathBuf,
    /// Raw tensor directory or model file (the other format)
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    match cli.command {
        Command::Train(a) => cmd_train(&a, threads),
        Command::Calibrate(a) => cmd_calibrate(&a, threads),
        Command::Eval(a) => cmd_eval(&a, threads),
        Command::Cost(a) => cmd_cost(&a),
        Command::Convert(a) => cmd_convert(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    steps: Option<usize>,
    learning_rate: Option<f64>,
    seq_len: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    optimizer: Option<Optimizer>,
    warmup_steps: Option<usize>,
    min_lr_fraction: Option<f64>,
    grad_clip: Option<f64>,
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let file = match &a.config {
        Some(p) => toml::from_str::<TrainFile>(&error::read_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => TrainFile::default(),
    };
    let d = TrainConfig::default();
    let clip = a.clip.or(file.grad_clip);
    let c = TrainConfig {
        steps: a.steps.or(file.steps).unwrap_or(d.steps),
        learning_rate: a.lr.or(file.learning_rate).unwrap_or(d.learning_rate),
        seq_len: a.seq_len.or(file.seq_len).unwrap_or(d.seq_len),
        batch_size: a.batch.or(file.batch_size).unwrap_or(d.batch_size),
        seed: file.seed.unwrap_or(a.seed),
        optimizer: a
            .optimizer
            .map(|o| match o {
                OptimizerArg::Adam => Optimizer::Adam,
                OptimizerArg::Sgd => Optimizer::Sgd,
            })
            .or(file.optimizer)
            .unwrap_or(d.optimizer),
        warmup_steps: a.warmup.or(file.warmup_steps).unwrap_or(d.warmup_steps),
        min_lr_fraction: a.min_lr_fraction.or(file.min_lr_fraction).unwrap_or(d.min_lr_fraction),
        grad_clip: match clip {
            Some(c) if c == 0.0 => None,
            Some(c) => Some(c),
            None => d.grad_clip,
        },
    };
    c.validate()?;
    Ok(c)
}

fn cmd_train(a: &TrainArgs, threads: usize) -> Result<()> {
    let cfg = train_config(a)?;
    let init_seed = a.init_seed.unwrap_or(a.seed);
    let init = match a.arch {
        ArchArg::Rwkv => TrainModel::Rwkv(RwkvModel::random(
            RwkvConfig {
                vocab_size: a.vocab,
                n_blocks: a.blocks,
                d_model: a.dim,
            },
            init_seed,
        )?),
        ArchArg::Transformer => TrainModel::Transformer(TransformerModel::random(
            TransformerConfig {
                vocab_size: a.vocab,
                n_blocks: a.blocks,
                d_model: a.dim,
                n_heads: a.heads,
                max_positions: a.max_positions,
            },
            init_seed,
        )?),
    };
    let docs = a.corpus.load(Part::Train, a.vocab)?;
    let mut manifest = ManifestBuilder::start(
        "train",
        json!({
            "arch": format!("{:?}", a.arch).to_lowercase(),
            "blocks": a.blocks,
            "dim": a.dim,
            "heads": a.heads,
            "max_positions": a.max_positions,
            "vocab": a.vocab,
            "init_seed": init_seed,
            "train": cfg,
            "corpus": a.corpus.snapshot(Part::Train),
        }),
    );
    manifest.input(&a.corpus.corpus)?;
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    eprintln!(
        "training on {} documents, {} steps of {}x{} tokens",
        docs.len(),
        cfg.steps,
        cfg.batch_size,
        cfg.seq_len
    );
    let pool = Pool::new(threads)?;
    let log_every = a.log_every.max(1);
    let out = train_with_progress(init, &docs, &cfg, &pool, &mut |p| {
        if p.step % log_every == 0 || p.step + 1 == cfg.steps {
            eprintln!("step {:>6}  lr {:.2e}  loss {:.4}", p.step, p.learning_rate, p.loss);
        }
    })?;
    let final_loss = out.final_loss();
    let model = match out.model {
        TrainModel::Rwkv(m) => Model::Rwkv(m),
        TrainModel::Transformer(m) => Model::Transformer(m),
    };
    model.save(&a.output)?;
    let curve_path = a.curve.clone().unwrap_or_else(|| with_suffix(&a.output, ".curve.csv"));
    error::write(&curve_path, reports::curve_csv(&out.curve))?;
    manifest
        .finish(&[&a.output, &curve_path])
        .save(&manifest_path(&a.output))?;
    if let Some(l) = final_loss {
        println!("final training loss {l:.4}");
    }
    Ok(())
}

/// `start:end:step` or `a,b,c`.
pub fn parse_percentages(s: &str) -> Result<Vec<u8>> {
    let bad = || Error::Config(format!("--percentages {s:?}: expected start:end:step or a comma list"));
    let values: Vec<u8> = if s.contains(':') {
        let parts: Vec<u8> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, end, step] = parts[..] else { return Err(bad()) };
        if step == 0 || start > end {
            return Err(bad());
        }
        (start..=end).step_by(step as usize).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}

fn cmd_calibrate(a: &CalibrateArgs, threads: usize) -> Result<()> {
    let model = Model::load(&a.model)?;
    let defaults = CalibConfig::default();
    let config = CalibConfig {
        percentages: parse_percentages(&a.percentages)?,
        loss_inc: a.loss_inc,
        n_calib: a.calib_docs,
        seed: a.seed,
        heuristic: !a.no_heuristic,
        max_sample: a.max_sample.unwrap_or(defaults.max_sample),
    };
    config.validate()?;
    let docs = with_model!(&model, m => a.corpus.load(Part::Calibration, m.vocab_size()))?;
    let arch = model.arch();
    let sites = with_model!(&model, m => m.threshold_sites());

    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| with_suffix(&a.output, ".ckpt.json"));
    let progress = match &a.resume {
        Some(p) => {
            let file = ThresholdFile::load(p)?;
            file.progress_for(p, arch, &sites)?
        }
        None => CalibProgress::default(),
    };
    let mut manifest = ManifestBuilder::start(
        "calibrate",
        json!({
            "calibration": config,
            "corpus": a.corpus.snapshot(Part::Calibration),
            "resumed_from": a.resume,
        }),
    );
    manifest.input(&a.model)?;
    manifest.input(&a.corpus.corpus)?;
    if let Some(p) = &a.resume {
        manifest.input(p)?;
    }
    eprintln!(
        "calibrating {} sites on {} documents (starting at site {})",
        sites.len(),
        docs.len(),
        progress.next_site()
    );

    let pool = Pool::new(threads)?;
    let mut write_error: Option<Error> = None;
    let mut done_here = 0usize;
    let stop_after = a.stop_after;
    let mut on_site = |p: &CalibProgress| {
        let r = p.history.last().expect("called after a site");
        eprintln!(
            "site {:>3} {:<10} {:>3}%  λ {:.6}  evals {}",
            p.history.len() - 1,
            r.site.to_string(),
            r.chosen_percentage,
            r.lambda,
            r.candidates_evaluated
        );
        let saved = ThresholdFile::checkpoint(arch, &sites, p).and_then(|f| f.save(&checkpoint));
        if let Err(e) = saved {
            write_error = Some(e);
            return ControlFlow::Break(());
        }
        done_here += 1;
        match stop_after {
            Some(n) if done_here >= n => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    };
    let outcome = with_model!(&model, m => calibrate_resumable(m, &docs, &config, &pool, progress, &mut on_site))?;
    if let Some(e) = write_error {
        return Err(e);
    }
    match outcome {
        CalibOutcome::Stopped(p) => {
            println!(
                "stopped after site {} of {}; resume with --resume {}",
                p.next_site(),
                sites.len(),
                checkpoint.display()
            );
            Ok(())
        }
        CalibOutcome::Complete(assignment, report) => {
            report.verify()?;
            let mut file = ThresholdFile::new(arch, &sites, &assignment);
            file.meta.insert("loss_inc".into(), json!(config.loss_inc));
            file.meta.insert("percentages".into(), json!(config.percentages));
            file.meta.insert("heuristic".into(), json!(config.heuristic));
            file.meta.insert("seed".into(), json!(config.seed));
            file.meta.insert("loss_before".into(), json!(report.loss_before));
            file.meta.insert("loss_after".into(), json!(report.loss_after));
            file.save(&a.output)?;
            let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.output, ".report.json"));
            reports::write_json(&report_path, &report)?;
            manifest
                .finish(&[&a.output, &report_path, &checkpoint])
                .save(&manifest_path(&a.output))?;
            let accepted = report.sites.iter().filter(|s| s.accepted()).count();
            println!(
                "{accepted}/{} sites thresholded  loss {:.4} -> {:.4}  evaluations {} (ascending projection {}, worst case {})",
                report.sites.len(),
                report.loss_before,
                report.loss_after,
                report.candidate_evaluations,
                report.ascending_projection,
                report.worst_case_evaluations
            );
            Ok(())
        }
    }
}

fn load_assignment(path: &Path, model: &Model) -> Result<ThresholdAssignment> {
    let file = ThresholdFile::load(path)?;
    let sites = with_model!(model, m => m.threshold_sites());
    file.assignment_for(model.arch(), &sites)
}

fn cmd_eval(a: &EvalArgs, threads: usize) -> Result<()> {
    let model = Model::load(&a.model)?;
    let assignment = match &a.thresholds {
        Some(p) => load_assignment(p, &model)?,
        None => ThresholdAssignment::new(),
    };
    let docs = with_model!(&model, m => a.corpus.load(Part::Test, m.vocab_size()))?;
    let pool = Pool::new(threads)?;
    let mut manifest = ManifestBuilder::start(
        "eval",
        json!({
            "thresholds": a.thresholds,
            "baseline_loss": a.baseline_loss,
            "corpus": a.corpus.snapshot(Part::Test),
        }),
    );
    manifest.input(&a.model)?;
    manifest.input(&a.corpus.corpus)?;
    if let Some(p) = &a.thresholds {
        manifest.input(p)?;
    }
    let baseline = match (a.baseline_loss, &a.thresholds) {
        (Some(b), _) => Some(b),
        (None, Some(_)) => {
            let base = with_model!(&model, m => measure(m, &ThresholdAssignment::new(), &docs, None, &pool))?;
            println!("baseline  {}", reports::table_row(&base));
            Some(base.loss)
        }
        (None, None) => None,
    };
    let report = with_model!(&model, m => measure(m, &assignment, &docs, baseline, &pool))?;
    println!(
        "{}  {}",
        if a.thresholds.is_some() { "sparse   " } else { "baseline " },
        reports::table_row(&report)
    );
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(p) = &a.json {
        reports::write_json(p, &report)?;
        outputs.push(p);
    }
    if let Some(p) = &a.csv {
        error::write(p, reports::sparsity_csv(&report))?;
        outputs.push(p);
    }
    if let Some(first) = outputs.first() {
        manifest.finish(&outputs).save(&manifest_path(first))?;
    }
    Ok(())
}

/// Per-position densities from an RWKV sparsity report, averaged over blocks.
pub fn density_from_report(report: &SparsityReport) -> Result<DensityProfile> {
    let positions = Arch::Rwkv.measured_positions();
    let mut pairs = Vec::new();
    for &p in positions {
        let s = report
            .position_sparsity(p)
            .ok_or_else(|| Error::Config(format!("report has no {p} sites; cost needs an RWKV report")))?;
        pairs.push((p, s));
    }
    Ok(DensityProfile::from_sparsity(pairs))
}

/// The dense column of the fitted reference: every layer at density 1
/// except the naturally sparse Channel-Mix down-projection.
pub fn reference_dense_profile(shape: &BlockShape) -> DensityProfile {
    DensityProfile::uniform(shape, 1.0).with(Position::CmV, hwcost::SENECA_NATURAL_DENSITY)
}

fn cmd_cost(a: &CostArgs) -> Result<()> {
    let d = match (a.dim, &a.model) {
        (Some(d), _) => d,
        (None, Some(p)) => Model::load(p)?.d_model(),
        (None, None) => hwcost::reference::D_MODEL,
    };
    if d == 0 {
        return Err(Error::Config("--dim must be positive".into()));
    }
    let shape = BlockShape::rwkv(d);
    let config: CostConfig = match &a.config {
        Some(p) => cost_io::load_cost_config(p)?,
        None => cost_io::preset(cost_io::SENECA_PRESET)?,
    };
    let dense_profile = match &a.dense {
        Some(p) => cost_io::load_density(p)?,
        None => reference_dense_profile(&shape),
    };
    let sparse_profile = if let Some(p) = &a.density {
        cost_io::load_density(p)?
    } else if let Some(p) = &a.report {
        let report: SparsityReport = serde_json::from_str(&error::read_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        density_from_report(&report)?
    } else if a.reference_sparse {
        back_derived_profile(
            &shape,
            &hwcost::reference::DENSE,
            &hwcost::reference::SPARSE,
            hwcost::SENECA_NATURAL_DENSITY,
        )
    } else {
        return Err(Error::Config(
            "missing densities: pass --density, --report or --reference-sparse".into(),
        ));
    };
    let mut dense = cost(&block_op_counts(&shape, &dense_profile, &config)?, &config)?;
    let mut sparse = cost(&block_op_counts(&shape, &sparse_profile, &config)?, &config)?;
    if a.blocks.is_some() || a.tokens.is_some() {
        let (b, t) = (a.blocks.unwrap_or(1), a.tokens.unwrap_or(1));
        dense = scale_to_model(&dense, b, t)?;
        sparse = scale_to_model(&sparse, b, t)?;
    }
    let ratio = improvement(&dense, &sparse)?;
    print!("{}", cost_io::render(&dense, &sparse, &ratio));
    if let Some(p) = &a.json {
        reports::write_json(
            p,
            &json!({
                "d_model": d,
                "blocks": a.blocks.unwrap_or(1),
                "tokens": a.tokens.unwrap_or(1),
                "config": config,
                "dense_profile": dense_profile,
                "sparse_profile": sparse_profile,
                "dense": dense,
                "sparse": sparse,
                "improvement": ratio,
            }),
        )?;
    }
    Ok(())
}

fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    if a.input.is_dir() {
        let model = model_file::raw::import(&a.input)?;
        model.save(&a.output)?;
        println!("wrote model file {}", a.output.display());
    } else {
        let model = Model::load(&a.input)?;
        model_file::raw::export(&model, &a.output)?;
        println!("wrote {} tensors to {}", model.named_tensors().len(), a.output.display());
    }
    Ok(())
}

fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let bytes = error::read(&a.path)?;
    if bytes.starts_with(model_file::MAGIC) {
        let model = Model::from_bytes(&bytes).map_err(|m| Error::corrupt(&a.path, m))?;
        let h = model.header();
        println!("arch        {}", h.arch);
        println!("vocab_size  {}", h.vocab_size);
        println!("n_blocks    {}", h.n_blocks);
        println!("d_model     {}", h.d_model);
        if let (Some(heads), Some(pos)) = (h.n_heads, h.max_positions) {
            println!("n_heads     {heads}");
            println!("positions   {pos}");
        }
        println!("parameters  {}", model.parameter_count());
        let sites = with_model!(&model, m => m.threshold_sites());
        println!("sites       {}", sites.len());
        for t in &h.tensors {
            println!("  {:<32} {:?}", t.name, t.shape);
        }
        return Ok(());
    }
    let file = ThresholdFile::load(&a.path)?;
    println!("arch      {}", file.arch);
    println!("sites     {}", file.sites.len());
    if let Some(p) = &file.progress {
        println!("progress  next_site {}", p.next_site);
    }
    for s in &file.sites {
        let target = s.target_percentage.map_or("-".to_string(), |t| format!("{t}%"));
        println!("  {:>3} {:<7} λ {:<12} {target}", s.block, s.position.label(), s.lambda);
    }
    Ok(())
}
