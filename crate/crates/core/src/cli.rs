//! Command-line front end: `gen-data`, `pretrain`, `finetune`, `curve`,
//! `baseline` and `report`.
//!
//! Every command takes an optional TOML config (`--config`) whose sections
//! mirror [`RunConfig`]; individual flags override single keys. Each run
//! writes `config.resolved.toml` and `run.log` into its output directory.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint_for, save_checkpoint};
use crate::data::{check_homogeneous, generate_synthetic, load_dataset, save_dataset, zscore_all, SubjectSeries, SynthConfig};
use crate::error::{MimError, Result};
use crate::harness::baseline::{baseline_experiment, FeatureKind, LrConfig};
use crate::harness::cv::{compare, kfold_experiment, learning_curve, ExperimentConfig, InitRecipe};
use crate::harness::report::{curve_comparison_csv, curve_csv, merge_reports, summary_table, ExperimentReport};
use crate::harness::train::{pretrain, TrainConfig};
use crate::model::{MimModel, ModelConfig};
use crate::rng::derive_seed;

/// Everything a run can be configured with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
    pub baseline: LrConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub trials: usize,
    pub train_per_class: Option<usize>,
    pub max_folds: Option<usize>,
    pub curve_sizes: Vec<usize>,
    pub features: Vec<FeatureKind>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            trials: 10,
            train_per_class: None,
            max_folds: None,
            curve_sizes: vec![8, 16, 32, 64, 100],
            features: vec![FeatureKind::Fnc, FeatureKind::Raw],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| MimError::File {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| MimError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MimError::Config(e.to_string()))
    }

    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            train: self.train.clone(),
            trials: self.experiment.trials,
            train_per_class: self.experiment.train_per_class,
            max_folds: self.experiment.max_folds,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mim", version, about = "Contrastive pre-training and fine-tuning on region time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset (CSV per subject plus manifest).
    GenData(GenDataArgs),
    /// Self-supervised pre-training on an unlabeled dataset.
    Pretrain(PretrainArgs),
    /// Cross-validated fine-tuning from a checkpoint or from scratch.
    Finetune(FinetuneArgs),
    /// Training-size sweep, pre-trained against fresh initialization.
    Curve(CurveArgs),
    /// Logistic-regression baseline on FNC or raw features.
    Baseline(BaselineArgs),
    /// Merge report files into one summary table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub timepoints: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub block_strength: Option<f64>,
    #[arg(long)]
    pub subject_jitter: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Draw an unlabeled pre-training pool.
    #[arg(long)]
    pub unlabeled: bool,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Manifest of the unlabeled dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Default)]
pub struct FoldArgs {
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Run only the first N folds.
    #[arg(long)]
    pub max_folds: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Manifest of the labeled dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Pre-trained checkpoint; omit for fresh initialization.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[command(flatten)]
    pub folds: FoldArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training subjects per class, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[command(flatten)]
    pub folds: FoldArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// `fnc`, `raw` or both, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<FeatureKind>>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[command(flatten)]
    pub folds: FoldArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report files (`report.jsonl`) or run directories containing one.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Compare every report against the one with this name.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Write `summary.txt` and `report.jsonl` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl clap::ValueEnum for FeatureKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[FeatureKind::Fnc, FeatureKind::Raw]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            FeatureKind::Fnc => "fnc",
            FeatureKind::Raw => "raw",
        }))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs, pretraining: bool) {
    set(&mut cfg.train.learning_rate, a.lr);
    set(&mut cfg.train.max_epochs, a.epochs);
    set(&mut cfg.train.patience, a.patience);
    if pretraining {
        set(&mut cfg.train.pretrain_batch_size, a.batch_size);
    } else {
        set(&mut cfg.train.finetune_batch_size, a.batch_size);
    }
}

fn apply_folds(cfg: &mut RunConfig, a: &FoldArgs) {
    set(&mut cfg.train.folds.folds, a.folds);
    set(&mut cfg.train.folds.val_size, a.val_size);
    set(&mut cfg.train.folds.test_size, a.test_size);
    set(&mut cfg.experiment.trials, a.trials);
    if a.max_folds.is_some() {
        cfg.experiment.max_folds = a.max_folds;
    }
}

/// Tees log lines to stderr and `run.log`.
#[derive(Clone)]
struct Tee(Arc<Mutex<fs::File>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        self.0.lock().map_err(|_| io::Error::other("log file poisoned"))?.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stderr().flush()?;
        self.0.lock().map_err(|_| io::Error::other("log file poisoned"))?.flush()
    }
}

fn init_logging(out: Option<&Path>) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    b.format_timestamp(None);
    if let Some(dir) = out {
        if let Ok(f) = fs::File::create(dir.join("run.log")) {
            b.target(env_logger::Target::Pipe(Box::new(Tee(Arc::new(Mutex::new(f))))));
        }
    }
    // A second initialization (tests, repeated calls) keeps the first logger.
    let _ = b.try_init();
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn load_normalized(manifest: &Path) -> Result<Vec<SubjectSeries>> {
    let data = load_dataset(manifest)?;
    check_homogeneous(&data)?;
    zscore_all(&data)
}

fn model_config_for(cfg: &mut RunConfig, data: &[SubjectSeries]) -> Result<ModelConfig> {
    let (r, _) = check_homogeneous(data)?;
    if cfg.model.n_regions != r {
        log::info!("model n_regions set to {r} from the dataset");
        cfg.model.n_regions = r;
    }
    cfg.model.validate()?;
    Ok(cfg.model.clone())
}

fn write_reports(out: &Path, reports: &[ExperimentReport]) -> Result<()> {
    let mut jsonl = String::new();
    for r in reports {
        jsonl.push_str(&r.to_jsonl()?);
    }
    fs::write(out.join("report.jsonl"), jsonl)?;
    let table = summary_table(reports);
    fs::write(out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    let d = &mut cfg.data;
    set(&mut d.regions, a.regions);
    set(&mut d.timepoints, a.timepoints);
    set(&mut d.subjects, a.subjects);
    set(&mut d.rho, a.rho);
    set(&mut d.block_size, a.block_size);
    set(&mut d.block_strength, a.block_strength);
    set(&mut d.subject_jitter, a.subject_jitter);
    set(&mut d.noise_std, a.noise_std);
    if a.unlabeled {
        d.labeled = false;
    }
    cfg.data.validate()?;
    prepare_out(&a.common.out, &cfg)?;
    init_logging(Some(&a.common.out));
    let subjects = generate_synthetic(&cfg.data)?;
    let manifest = save_dataset(&subjects, &a.common.out)?;
    log::info!("wrote {} subjects, manifest {}", subjects.len(), manifest.display());
    Ok(())
}

pub fn cmd_pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_train(&mut cfg, &a.train, true);
    cfg.train.validate()?;
    let data = load_normalized(&a.data)?;
    let model_cfg = model_config_for(&mut cfg, &data)?;
    prepare_out(&a.common.out, &cfg)?;
    init_logging(Some(&a.common.out));
    let mut model = MimModel::init(&model_cfg, derive_seed(cfg.train.seed, "model"))?;
    let outcome = pretrain(&mut model, &data, &cfg.train)?;
    let mut csv = String::from("epoch,train_loss,train_mi,val_loss,val_mi\n");
    for e in &outcome.curve {
        csv.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            e.epoch, e.train_loss, e.train_mi, e.val_loss, e.val_mi
        ));
    }
    fs::write(a.common.out.join("loss_curve.csv"), csv)?;
    save_checkpoint(&model, &a.common.out.join("checkpoint.mim"))?;
    log::info!(
        "best epoch {} of {}; checkpoint {}",
        outcome.best_epoch,
        outcome.curve.len(),
        a.common.out.join("checkpoint.mim").display()
    );
    Ok(())
}

pub fn cmd_finetune(a: &FinetuneArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_train(&mut cfg, &a.train, false);
    apply_folds(&mut cfg, &a.folds);
    if a.train_per_class.is_some() {
        cfg.experiment.train_per_class = a.train_per_class;
    }
    cfg.train.validate()?;
    let data = load_normalized(&a.data)?;
    let model_cfg = model_config_for(&mut cfg, &data)?;
    let pretrained = match &a.checkpoint {
        Some(p) => Some(load_checkpoint_for(p, &model_cfg)?),
        None => None,
    };
    prepare_out(&a.common.out, &cfg)?;
    init_logging(Some(&a.common.out));
    let recipe = match &pretrained {
        Some(m) => InitRecipe::Pretrained(m),
        None => InitRecipe::Fresh(model_cfg),
    };
    let report = kfold_experiment(recipe.arm_name(), &data, &recipe, &cfg.experiment())?;
    write_reports(&a.common.out, &[report])
}

pub fn cmd_curve(a: &CurveArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_train(&mut cfg, &a.train, false);
    apply_folds(&mut cfg, &a.folds);
    if let Some(s) = &a.sizes {
        cfg.experiment.curve_sizes = s.clone();
    }
    cfg.train.validate()?;
    let data = load_normalized(&a.data)?;
    let model_cfg = model_config_for(&mut cfg, &data)?;
    let pretrained = load_checkpoint_for(&a.checkpoint, &model_cfg)?;
    prepare_out(&a.common.out, &cfg)?;
    init_logging(Some(&a.common.out));
    let (rows, mut reports) = learning_curve(&data, &pretrained, &cfg.experiment.curve_sizes, &cfg.experiment())?;
    for pair in reports.chunks_mut(2) {
        if let [p, f] = pair {
            p.comparison = compare(p, f).ok();
        }
    }
    let out = &a.common.out;
    fs::write(out.join("curve_pretrained.csv"), curve_csv(&rows.iter().map(|r| r.pretrained).collect::<Vec<_>>()))?;
    fs::write(out.join("curve_fresh.csv"), curve_csv(&rows.iter().map(|r| r.fresh).collect::<Vec<_>>()))?;
    fs::write(out.join("curve.csv"), curve_comparison_csv(&rows))?;
    write_reports(out, &reports)
}

pub fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_folds(&mut cfg, &a.folds);
    if let Some(f) = &a.features {
        cfg.experiment.features = f.clone();
    }
    if a.train_per_class.is_some() {
        cfg.experiment.train_per_class = a.train_per_class;
    }
    set(&mut cfg.baseline.l2, a.l2);
    let data = load_dataset(&a.data)?;
    check_homogeneous(&data)?;
    prepare_out(&a.common.out, &cfg)?;
    init_logging(Some(&a.common.out));
    let mut reports = Vec::new();
    for &kind in &cfg.experiment.features {
        reports.push(baseline_experiment(&data, kind, &cfg.experiment(), &cfg.baseline)?);
    }
    if reports.len() > 1 {
        let first = reports[0].clone();
        for r in reports.iter_mut().skip(1) {
            r.comparison = compare(r, &first).ok();
        }
    }
    write_reports(&a.common.out, &reports)
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let paths: Vec<PathBuf> = a
        .inputs
        .iter()
        .map(|p| if p.is_dir() { p.join("report.jsonl") } else { p.clone() })
        .collect();
    let mut reports = merge_reports(&paths)?;
    if let Some(name) = &a.baseline {
        let base = reports
            .iter()
            .find(|r| &r.name == name)
            .cloned()
            .ok_or_else(|| MimError::Config(format!("no report named {name:?}")))?;
        for r in reports.iter_mut().filter(|r| &r.name != name) {
            r.comparison = compare(r, &base).ok();
        }
    }
    match &a.out {
        Some(out) => {
            fs::create_dir_all(out)?;
            write_reports(out, &reports)
        }
        None => {
            print!("{}", summary_table(&reports));
            Ok(())
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Report(a) => {
            init_logging(None);
            cmd_report(a)
        }
    }
}

/// Parses `args`, runs the command and maps failures to a nonzero exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
