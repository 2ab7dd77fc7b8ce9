//! End-to-end experiments: method selection, config files, run manifests and the
//! commands behind the `rada` binary. Every command writes only below its output
//! directory, under fixed file names.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::DomainBatch;
use crate::datagen::{generate_pair, load_dataset, save_dataset, GenConfig, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, confusion, proxy_a_distance, structure_report, write_csv, write_matrix_csv,
    write_training_curves, PadReport,
};
use crate::linalg::Matrix;
use crate::structure::{
    precision_from_weights, precision_objective, precision_oracle_with, OracleSettings,
    StructureDirection,
};
use crate::trainer::{
    grad_check, jitter_biases, load_checkpoint, save_checkpoint, GradCheckReport, TrainConfig,
    TrainReport, Trainer,
};

pub const SOURCE_FILE: &str = "source.txt";
pub const TARGET_FILE: &str = "target.txt";
pub const PRECISION_FILE: &str = "ground_truth_precision.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Training variant compared in the ablation.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Label loss only.
    SourceOnly,
    /// One binary discriminator, every sample weighted 1.
    DannSingle,
    /// Class-weighted multi-branch discriminator without the structure term.
    MulticlassOnly,
    /// Full objective.
    #[default]
    Rada,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SourceOnly,
        Method::DannSingle,
        Method::MulticlassOnly,
        Method::Rada,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::DannSingle => "dann_single",
            Method::MulticlassOnly => "multiclass_only",
            Method::Rada => "rada",
        }
    }

    /// The training config this method actually runs with.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Method::SourceOnly => {
                cfg.lambda_adv = 0.0;
                cfg.lambda_r = 0.0;
                cfg.single_branch = false;
            }
            Method::DannSingle => {
                cfg.lambda_r = 0.0;
                cfg.single_branch = true;
            }
            Method::MulticlassOnly => {
                cfg.lambda_r = 0.0;
                cfg.single_branch = false;
            }
            Method::Rada => cfg.single_branch = false,
        }
        cfg
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::config(
                    "method",
                    format!("unknown method `{s}`; valid: {}", valid.join(", ")),
                )
            })
    }
}

/// One arm of the ablation: a method plus, for `rada`, a structure direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arm {
    pub method: Method,
    pub direction: StructureDirection,
}

impl Arm {
    pub const ABLATION: [Arm; 5] = [
        Arm::new(Method::SourceOnly, StructureDirection::DToY),
        Arm::new(Method::DannSingle, StructureDirection::DToY),
        Arm::new(Method::MulticlassOnly, StructureDirection::DToY),
        Arm::new(Method::Rada, StructureDirection::DToY),
        Arm::new(Method::Rada, StructureDirection::YToD),
    ];

    pub const fn new(method: Method, direction: StructureDirection) -> Self {
        Self { method, direction }
    }

    /// `rada_d2y`, `rada_y2d`, or the bare method name.
    pub fn label(&self) -> String {
        match self.method {
            Method::Rada => format!("rada_{}", self.direction),
            m => m.as_str().to_string(),
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = self.method.apply(base);
        cfg.direction = self.direction;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub method: Method,
    pub out: PathBuf,
    /// Where `train` and `eval` read datasets from; the output directory if unset.
    pub data_dir: Option<PathBuf>,
    /// Seeds of `ablate`.
    pub seeds: Vec<u64>,
    /// Cross-validation folds of the proxy A-distance.
    pub pad_folds: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            method: Method::Rada,
            out: PathBuf::from("out"),
            data_dir: None,
            seeds: vec![1, 2, 3, 4, 5],
            pad_folds: 5,
        }
    }
}

/// Complete experiment description, stored as TOML with `[data]`, `[train]` and
/// `[experiment]` sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: GenConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            Error::config(
                "config",
                e.message().to_string()
                    + &e.span()
                        .map_or(String::new(), |s| format!(" at byte {}", s.start)),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.method_config().validate()?;
        if self.experiment.pad_folds < 2 {
            return Err(Error::config("pad_folds", "must be at least 2"));
        }
        Ok(())
    }

    /// Uses `seed` for both the data draw and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn method_config(&self) -> TrainConfig {
        self.experiment.method.apply(&self.train)
    }

    pub fn data_dir(&self) -> &Path {
        self.experiment
            .data_dir
            .as_deref()
            .unwrap_or(&self.experiment.out)
    }
}

/// Record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub version: String,
    /// Filled in when the command completes.
    pub duration_secs: Option<f64>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, outputs: &[&str]) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            seed: config.train.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            duration_secs: None,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// `manifest.json` for `gen`, `<command>_manifest.json` otherwise, so
    /// commands sharing a directory keep separate records.
    pub fn file_name(command: &str) -> String {
        if command == "gen" {
            MANIFEST_FILE.to_string()
        } else {
            format!("{command}_{MANIFEST_FILE}")
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join(Self::file_name(&self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Writes the manifest, runs `body`, then records the duration and checks that
/// every listed output exists.
fn with_manifest<T>(
    command: &str,
    cfg: &ExperimentConfig,
    outputs: &[&str],
    body: impl FnOnce(&Path) -> Result<T>,
) -> Result<T> {
    let out = &cfg.experiment.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest::new(command, cfg, outputs);
    manifest.write(out)?;
    let start = Instant::now();
    let value = body(out)?;
    manifest.duration_secs = Some(start.elapsed().as_secs_f64());
    for f in outputs {
        let path = out.join(f);
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "listed output was not written",
                ),
            ));
        }
    }
    manifest.write(out)?;
    Ok(value)
}

pub const GEN_OUTPUTS: [&str; 3] = [SOURCE_FILE, TARGET_FILE, PRECISION_FILE];

/// Generates the source/target pair and the ground-truth precision matrix.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<()> {
    cfg.data.validate()?;
    with_manifest("gen", cfg, &GEN_OUTPUTS, |out| {
        let pair = generate_pair(&cfg.data)?;
        save_dataset(&pair.source, &out.join(SOURCE_FILE))?;
        save_dataset(&pair.target, &out.join(TARGET_FILE))?;
        write_matrix_csv(&out.join(PRECISION_FILE), &pair.ground_truth_precision)
    })
}

fn load_pair(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = cfg.data_dir();
    Ok((
        load_dataset(&dir.join(SOURCE_FILE))?,
        load_dataset(&dir.join(TARGET_FILE))?,
    ))
}

/// Scalar results of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub epochs: usize,
    pub source_acc: f64,
    pub target_acc: Option<f64>,
    pub kl_dy: Option<f64>,
    pub kl_yd: Option<f64>,
    pub lr_d2y: Option<f64>,
    pub lr_y2d: Option<f64>,
    pub pad: PadReport,
}

pub const TRAIN_OUTPUTS: [&str; 4] = [
    CHECKPOINT_FILE,
    "curves.csv",
    "summary.json",
    "confusion_target.csv",
];
pub const STRUCTURE_OUTPUTS: [&str; 3] = ["heatmap.csv", "omega_y.csv", "omega_d.csv"];

/// Trains the configured method, or continues `checkpoint.json` in the output
/// directory when `resume` is set, then writes all reports.
pub fn cmd_train(cfg: &ExperimentConfig, resume: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let (source, target) = load_pair(cfg)?;
    let train_cfg = cfg.method_config();
    let outputs = output_list(&train_cfg, &target);
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    let ckpt_path = cfg.experiment.out.join(CHECKPOINT_FILE);
    let resumed = if resume {
        Some(load_checkpoint(&ckpt_path)?)
    } else {
        None
    };
    with_manifest("train", cfg, &refs, |out| {
        let mut trainer = match resumed {
            Some(ckpt) => {
                let mut t = Trainer::from_checkpoint(ckpt, &source, &target)?;
                t.extend_to(train_cfg.epochs.max(t.epochs_completed()))?;
                t
            }
            None => {
                let model = train_cfg.init_model(source.feature_dim(), source.classes)?;
                Trainer::new(model, &source, &target, train_cfg.clone())?
            }
        };
        trainer.run()?;
        save_checkpoint(&trainer.checkpoint(), &out.join(CHECKPOINT_FILE))?;
        let folds = cfg.experiment.pad_folds;
        let (model, report) = trainer.into_parts();
        write_reports(
            out,
            cfg.experiment.method.as_str(),
            &train_cfg,
            &model,
            &report,
            &source,
            &target,
            folds,
        )
    })
}

fn output_list(train_cfg: &TrainConfig, target: &LabeledDataset) -> Vec<String> {
    let mut v: Vec<String> = TRAIN_OUTPUTS
        .iter()
        .filter(|f| target.labels.is_some() || !f.starts_with("confusion"))
        .map(|s| s.to_string())
        .collect();
    if !train_cfg.single_branch {
        v.extend(STRUCTURE_OUTPUTS.iter().map(|s| s.to_string()));
    }
    v
}

#[allow(clippy::too_many_arguments)]
fn write_reports(
    out: &Path,
    method: &str,
    train_cfg: &TrainConfig,
    model: &crate::adversarial::RadaModel,
    report: &TrainReport,
    source: &LabeledDataset,
    target: &LabeledDataset,
    folds: usize,
) -> Result<RunSummary> {
    write_training_curves(&out.join("curves.csv"), report)?;
    let summary = summarize(method, train_cfg, model, report, source, target, folds)?;
    if target.labels.is_some() {
        confusion(model, target)?.write_csv(&out.join("confusion_target.csv"))?;
    }
    if model.is_multi_branch() {
        let r = structure_report(model, train_cfg.eps0)?;
        write_matrix_csv(&out.join("heatmap.csv"), &r.combined_heatmap())?;
        write_matrix_csv(&out.join("omega_y.csv"), &r.omega_y)?;
        write_matrix_csv(&out.join("omega_d.csv"), &r.omega_d)?;
    }
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

fn summarize(
    method: &str,
    train_cfg: &TrainConfig,
    model: &crate::adversarial::RadaModel,
    report: &TrainReport,
    source: &LabeledDataset,
    target: &LabeledDataset,
    folds: usize,
) -> Result<RunSummary> {
    let structure = if model.is_multi_branch() {
        Some(structure_report(model, train_cfg.eps0)?)
    } else {
        None
    };
    let pad = proxy_a_distance(
        &model.features(&source.features)?,
        &model.features(&target.features)?,
        folds,
    )?;
    Ok(RunSummary {
        method: method.to_string(),
        seed: train_cfg.seed,
        epochs: report.epochs.len(),
        source_acc: accuracy(model, source)?,
        target_acc: match target.labels {
            Some(_) => Some(accuracy(model, target)?),
            None => None,
        },
        kl_dy: structure.as_ref().map(|r| r.kl_dy),
        kl_yd: structure.as_ref().map(|r| r.kl_yd),
        lr_d2y: structure.as_ref().map(|r| r.lr_d2y),
        lr_y2d: structure.as_ref().map(|r| r.lr_y2d),
        pad,
    })
}

pub const EVAL_OUTPUTS: [&str; 2] = ["eval_summary.json", "eval_confusion_source.csv"];

/// Re-evaluates the checkpoint in the output directory.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (source, target) = load_pair(cfg)?;
    let ckpt = load_checkpoint(&cfg.experiment.out.join(CHECKPOINT_FILE))?;
    let mut outputs: Vec<&str> = EVAL_OUTPUTS.to_vec();
    if target.labels.is_some() {
        outputs.push("eval_confusion_target.csv");
    }
    if ckpt.model.is_multi_branch() {
        outputs.push("eval_heatmap.csv");
    }
    with_manifest("eval", cfg, &outputs, |out| {
        let model = &ckpt.model;
        let s = summarize(
            &ckpt.config_label(),
            &ckpt.config,
            model,
            &ckpt.report,
            &source,
            &target,
            cfg.experiment.pad_folds,
        )?;
        confusion(model, &source)?.write_csv(&out.join("eval_confusion_source.csv"))?;
        if target.labels.is_some() {
            confusion(model, &target)?.write_csv(&out.join("eval_confusion_target.csv"))?;
        }
        if model.is_multi_branch() {
            let r = structure_report(model, ckpt.config.eps0)?;
            write_matrix_csv(&out.join("eval_heatmap.csv"), &r.combined_heatmap())?;
        }
        let path = out.join("eval_summary.json");
        let text = serde_json::to_string_pretty(&s).expect("summary serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
        Ok(s)
    })
}

impl crate::trainer::Checkpoint {
    fn config_label(&self) -> String {
        let c = &self.config;
        if c.single_branch {
            "dann_single".into()
        } else if c.lambda_adv == 0.0 && c.lambda_r == 0.0 {
            "source_only".into()
        } else if c.lambda_r == 0.0 {
            "multiclass_only".into()
        } else {
            format!("rada_{}", c.direction)
        }
    }
}

/// Result of one ablation run; failures are kept as messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub arm: Arm,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

/// Per-arm aggregates over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub runs: usize,
    pub failed: usize,
    pub acc_mean: f64,
    pub acc_sd: f64,
    pub kl_dy_mean: Option<f64>,
    pub kl_yd_mean: Option<f64>,
    pub pad_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// Sorted by arm, then seed.
    pub runs: Vec<AblationRun>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, arm: Arm) -> Option<&AblationRow> {
        let label = arm.label();
        self.rows.iter().find(|r| r.arm == label)
    }

    /// Successful runs of `arm`, in seed order.
    pub fn summaries(&self, arm: Arm) -> Vec<&RunSummary> {
        self.runs
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect()
    }
}

/// Trains one arm on the task drawn from `seed`.
pub fn run_arm(cfg: &ExperimentConfig, arm: Arm, seed: u64) -> Result<RunSummary> {
    let cfg = cfg.clone().with_seed(seed);
    let pair = generate_pair(&cfg.data)?;
    let train_cfg = arm.train_config(&cfg.train);
    let model = train_cfg.init_model(pair.source.feature_dim(), pair.source.classes)?;
    let mut t = Trainer::new(model, &pair.source, &pair.target, train_cfg.clone())?;
    t.run()?;
    let (model, report) = t.into_parts();
    summarize(
        &arm.label(),
        &train_cfg,
        &model,
        &report,
        &pair.source,
        &pair.target,
        cfg.experiment.pad_folds,
    )
}

/// Runs every arm on every seed in parallel. Results are collected in
/// (arm, seed) order regardless of scheduling.
pub fn ablate(cfg: &ExperimentConfig, arms: &[Arm], seeds: &[u64]) -> Result<AblationTable> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    let mut jobs: Vec<(Arm, u64)> = arms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    jobs.sort();
    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|&(arm, seed)| AblationRun {
            arm,
            seed,
            outcome: run_arm(cfg, arm, seed).map_err(|e| e.to_string()),
        })
        .collect();
    let mut order: Vec<Arm> = arms.to_vec();
    order.sort();
    order.dedup();
    let rows = order
        .iter()
        .map(|&arm| {
            let ok: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| r.arm == arm)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let total = runs.iter().filter(|r| r.arm == arm).count();
            let accs: Vec<f64> = ok
                .iter()
                .map(|s| s.target_acc.unwrap_or(f64::NAN))
                .collect();
            let (acc_mean, acc_sd) = mean_sd(&accs);
            let opt_mean = |f: fn(&RunSummary) -> Option<f64>| {
                let v: Option<Vec<f64>> = ok.iter().map(|s| f(s)).collect();
                v.filter(|v| !v.is_empty()).map(|v| mean_sd(&v).0)
            };
            let pads: Vec<f64> = ok.iter().map(|s| s.pad.d_a).collect();
            AblationRow {
                arm: arm.label(),
                runs: total,
                failed: total - ok.len(),
                acc_mean,
                acc_sd,
                kl_dy_mean: opt_mean(|s| s.kl_dy),
                kl_yd_mean: opt_mean(|s| s.kl_yd),
                pad_mean: mean_sd(&pads).0,
            }
        })
        .collect();
    Ok(AblationTable { runs, rows })
}

/// Mean and sample standard deviation (0 for fewer than two values, NaN if empty).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const ABLATE_OUTPUTS: [&str; 2] = ["ablation_summary.csv", "ablation_runs.csv"];

pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblationTable> {
    cfg.validate()?;
    if cfg.experiment.seeds.len() < 3 {
        return Err(Error::config("seeds", "ablation needs at least 3 seeds"));
    }
    with_manifest("ablate", cfg, &ABLATE_OUTPUTS, |out| {
        let table = ablate(cfg, &Arm::ABLATION, &cfg.experiment.seeds)?;
        write_ablation(out, &table)?;
        Ok(table)
    })
}

fn write_ablation(out: &Path, table: &AblationTable) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let header = [
        "method",
        "runs",
        "failed",
        "target_acc_mean",
        "target_acc_sd",
        "kl_dy_mean",
        "kl_yd_mean",
        "pad_mean",
    ]
    .map(String::from);
    let rows = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.arm.clone(),
                r.runs.to_string(),
                r.failed.to_string(),
                r.acc_mean.to_string(),
                r.acc_sd.to_string(),
                opt(r.kl_dy_mean),
                opt(r.kl_yd_mean),
                r.pad_mean.to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("ablation_summary.csv"), &header, rows)?;

    let header = [
        "method",
        "seed",
        "source_acc",
        "target_acc",
        "kl_dy",
        "kl_yd",
        "pad",
        "error",
    ]
    .map(String::from);
    let rows = table
        .runs
        .iter()
        .map(|r| match &r.outcome {
            Ok(s) => vec![
                r.arm.label(),
                r.seed.to_string(),
                s.source_acc.to_string(),
                opt(s.target_acc),
                opt(s.kl_dy),
                opt(s.kl_yd),
                s.pad.d_a.to_string(),
                String::new(),
            ],
            Err(e) => {
                let mut row = vec![r.arm.label(), r.seed.to_string()];
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(e.clone());
                row
            }
        })
        .collect();
    write_csv(&out.join("ablation_runs.csv"), &header, rows)
}

/// Largest gradient error tolerated by `grad-check`.
pub const GRAD_CHECK_TOL: f64 = 1e-4;
pub const GRAD_CHECK_H: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub direction: StructureDirection,
    pub lambda_adv: f64,
    pub report: GradCheckReport,
}

/// Gradient checks of the configured architecture on `batch` rows per domain of
/// the seed's task, for both directions and `λ_adv ∈ {0, 0.5, 1}`.
pub fn grad_check_suite(
    cfg: &ExperimentConfig,
    seed: u64,
    batch: usize,
) -> Result<Vec<GradCheckRow>> {
    let cfg = cfg.clone().with_seed(seed);
    let pair = generate_pair(&cfg.data)?;
    let train = Method::Rada.apply(&cfg.train);
    let mut model = train.init_model(pair.source.feature_dim(), pair.source.classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter_biases(&mut model, 0.3, &mut rng);
    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        (0..batch.min(n)).map(|_| rng.random_range(0..n)).collect()
    };
    let s_idx = pick(pair.source.len(), &mut rng);
    let t_idx = pick(pair.target.len(), &mut rng);
    let xs = pair.source.features.select_rows(&s_idx);
    let labels = pair.source.labels()?;
    let ys: Vec<usize> = s_idx.iter().map(|&i| labels[i]).collect();
    let xt = pair.target.features.select_rows(&t_idx);
    let b = DomainBatch {
        source_x: &xs,
        source_labels: &ys,
        target_x: &xt,
    };
    let mut rows = Vec::new();
    for direction in StructureDirection::ALL {
        for lambda_adv in [0.0, 0.5, 1.0] {
            let c = TrainConfig {
                direction,
                lambda_adv,
                ..train.clone()
            };
            rows.push(GradCheckRow {
                direction,
                lambda_adv,
                report: grad_check(&model, b, &c, GRAD_CHECK_H)?,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_grad_check(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<(u64, GradCheckRow)>> {
    cfg.validate()?;
    with_manifest("grad-check", cfg, &["grad_check.csv"], |out| {
        let per_seed: Vec<Vec<GradCheckRow>> = seeds
            .par_iter()
            .map(|&seed| grad_check_suite(cfg, seed, 6))
            .collect::<Result<_>>()?;
        let all: Vec<(u64, GradCheckRow)> = seeds
            .iter()
            .zip(per_seed)
            .flat_map(|(&seed, rows)| rows.into_iter().map(move |r| (seed, r)))
            .collect();
        let header = ["seed", "direction", "lambda_adv", "g_f", "g_y", "g_d"].map(String::from);
        let rows = all
            .iter()
            .map(|(seed, r)| {
                vec![
                    seed.to_string(),
                    r.direction.to_string(),
                    r.lambda_adv.to_string(),
                    r.report.g_f.to_string(),
                    r.report.g_y.to_string(),
                    r.report.g_d.to_string(),
                ]
            })
            .collect();
        write_csv(&out.join("grad_check.csv"), &header, rows)?;
        let worst = all.iter().map(|(_, r)| r.report.max()).fold(0.0, f64::max);
        if worst > GRAD_CHECK_TOL || all.iter().any(|(_, r)| r.report.max().is_nan()) {
            return Err(Error::Eval(format!(
                "worst relative gradient error {worst:e} exceeds {GRAD_CHECK_TOL:e}"
            )));
        }
        Ok(all)
    })
}

/// Closed form versus iterative oracle on one random weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub rows: usize,
    pub classes: usize,
    /// `‖Ω_closed − Ω_oracle‖_F / ‖Ω_oracle‖_F`.
    pub relative_frobenius: f64,
    pub objective_closed: f64,
    pub objective_oracle: f64,
    pub oracle_steps: usize,
}

pub const ORACLE_REL_TOL: f64 = 1e-4;
pub const ORACLE_OBJECTIVE_SLACK: f64 = 1e-6;

impl OracleComparison {
    pub fn passes(&self) -> bool {
        self.relative_frobenius <= ORACLE_REL_TOL
            && self.objective_closed <= self.objective_oracle + ORACLE_OBJECTIVE_SLACK
    }
}

/// Draws `count` standard-normal weight matrices with `K ∈ [3, 12]` and
/// `d ∈ [K+2, 64]` and compares both precision estimators on each.
pub fn oracle_check(seed: u64, count: usize) -> Result<Vec<OracleComparison>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Matrix> = (0..count)
        .map(|_| {
            let k = rng.random_range(3..=12);
            let d = rng.random_range(k + 2..=64);
            Matrix::from_fn(d, k, |_, _| rng.sample(rand_distr::StandardNormal))
        })
        .collect();
    draws
        .par_iter()
        .map(|w| {
            let closed = precision_from_weights(w, 1e-6)?;
            let (oracle, steps) = precision_oracle_with(w, OracleSettings::default())?;
            let diff = closed.omega.sub(&oracle.omega)?;
            Ok(OracleComparison {
                rows: w.rows(),
                classes: w.cols(),
                relative_frobenius: diff.frobenius_norm() / oracle.omega.frobenius_norm(),
                objective_closed: precision_objective(w, &closed.omega)?,
                objective_oracle: precision_objective(w, &oracle.omega)?,
                oracle_steps: steps,
            })
        })
        .collect()
}

pub fn cmd_oracle_check(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<OracleComparison>> {
    with_manifest("oracle-check", cfg, &["oracle_check.csv"], |out| {
        let all = oracle_check(seed, 20)?;
        let header = [
            "d",
            "k",
            "relative_frobenius",
            "objective_closed",
            "objective_oracle",
            "steps",
        ]
        .map(String::from);
        let rows = all
            .iter()
            .map(|c| {
                vec![
                    c.rows.to_string(),
                    c.classes.to_string(),
                    c.relative_frobenius.to_string(),
                    c.objective_closed.to_string(),
                    c.objective_oracle.to_string(),
                    c.oracle_steps.to_string(),
                ]
            })
            .collect();
        write_csv(&out.join("oracle_check.csv"), &header, rows)?;
        if let Some(bad) = all.iter().find(|c| !c.passes()) {
            return Err(Error::Eval(format!(
                "closed form disagrees with oracle: {bad:?}"
            )));
        }
        Ok(all)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip_and_unknown_lists_valid() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        let err = "dann".parse::<Method>().unwrap_err();
        let msg = err.to_string();
        assert!(err.is_config_error());
        for m in Method::ALL {
            assert!(msg.contains(m.as_str()), "{msg}");
        }
    }

    #[test]
    fn method_mapping() {
        let base = TrainConfig::default();
        let s = Method::SourceOnly.apply(&base);
        assert_eq!(
            (s.lambda_adv, s.lambda_r, s.single_branch),
            (0.0, 0.0, false)
        );
        let d = Method::DannSingle.apply(&base);
        assert_eq!((d.lambda_r, d.single_branch), (0.0, true));
        let m = Method::MulticlassOnly.apply(&base);
        assert_eq!((m.lambda_adv, m.lambda_r), (base.lambda_adv, 0.0));
        assert_eq!(Method::Rada.apply(&base), base);
        assert_eq!(
            Arm::ABLATION.map(|a| a.label()).join(","),
            "source_only,dann_single,multiclass_only,rada_d2y,rada_y2d"
        );
    }

    #[test]
    fn config_toml_round_trip_and_field_errors() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial = ExperimentConfig::from_toml("[data]\nclasses = 4\n").unwrap();
        assert_eq!(partial.data.classes, 4);
        assert_eq!(partial.train, TrainConfig::default());

        let err = ExperimentConfig::from_toml("[data]\nclasses = 1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "classes"));
        let err = ExperimentConfig::from_toml("[experiment]\nmethod = \"nope\"\n").unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("source_only"), "{err}");
        assert!(ExperimentConfig::from_toml("[train]\nbogus = 1\n").is_err());
    }

    #[test]
    fn mean_sd_cases() {
        assert_eq!(mean_sd(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_check_small_batch_passes() {
        for c in oracle_check(3, 3).unwrap() {
            assert!(c.passes(), "{c:?}");
        }
    }
}
