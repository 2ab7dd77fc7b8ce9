//! Deterministic minibatch SGD with momentum over the composite objective.
//!
//! Schedules are held constant within an epoch and driven by `p = epoch / epochs`.
//! Every epoch draws its shuffles from its own ChaCha stream derived from the
//! seed, so a run resumed from a checkpoint continues exactly as an uninterrupted
//! one would.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{
    evaluate_objective, lambda_adv_schedule, lr_schedule, total_objective, DomainBatch, GrlMode,
    ModelGradients, ModelShape, ObjectiveSettings, RadaModel,
};
use crate::autonet::{finite_diff_grad, Gradients, NetworkParams};
use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{accuracy, structure_report};
use crate::linalg::Matrix;
use crate::structure::StructureDirection;

pub const CHECKPOINT_FORMAT: &str = "rada-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Largest per-domain batch accepted by [`grad_check`].
pub const GRAD_CHECK_MAX_ROWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate of `G_f`.
    pub lr_backbone: f64,
    /// Base learning rate of `G_y` and `G_d`.
    pub lr_heads: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Multiplier on the scheduled adversarial weight; 0 disables the domain loss.
    pub lambda_adv: f64,
    pub lambda_r: f64,
    pub direction: StructureDirection,
    pub balanced_sampling: bool,
    pub detach_target_weights: bool,
    pub seed: u64,
    pub eps0: f64,
    pub feature_layers: Vec<usize>,
    pub label_hidden: Vec<usize>,
    pub disc_hidden: usize,
    /// One binary discriminator output instead of one per class.
    pub single_branch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr_backbone: 0.001,
            lr_heads: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            alpha: 10.0,
            beta: 0.75,
            lambda_adv: 1.0,
            lambda_r: 0.01,
            direction: StructureDirection::DToY,
            balanced_sampling: true,
            detach_target_weights: true,
            seed: 7,
            eps0: 1e-6,
            feature_layers: vec![32, 16],
            label_hidden: vec![32],
            disc_hidden: 32,
            single_branch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        let rates = [
            ("lr_backbone", self.lr_backbone),
            ("lr_heads", self.lr_heads),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_adv", self.lambda_adv),
            ("lambda_r", self.lambda_r),
            ("eps0", self.eps0),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    name,
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        if self.single_branch && self.lambda_r > 0.0 {
            return Err(Error::config(
                "lambda_r",
                "the structure regularizer needs the multi-branch discriminator",
            ));
        }
        if self.feature_layers.is_empty() || self.feature_layers.contains(&0) {
            return Err(Error::config(
                "feature_layers",
                "needs at least one positive width",
            ));
        }
        if self.label_hidden.contains(&0) {
            return Err(Error::config("label_hidden", "widths must be positive"));
        }
        if self.disc_hidden == 0 {
            return Err(Error::config("disc_hidden", "must be positive"));
        }
        Ok(())
    }

    pub fn model_shape(&self, input_dim: usize, classes: usize) -> ModelShape {
        ModelShape {
            input_dim,
            feature_layers: self.feature_layers.clone(),
            label_hidden: self.label_hidden.clone(),
            disc_hidden: self.disc_hidden,
            classes,
            disc_branches: if self.single_branch { 1 } else { classes },
        }
    }

    /// Fresh model drawn from the seed's initialization stream.
    pub fn init_model(&self, input_dim: usize, classes: usize) -> Result<RadaModel> {
        self.validate()?;
        RadaModel::init(
            &self.model_shape(input_dim, classes),
            &mut stream(self.seed, 0),
        )
    }

    /// Objective weights in force at progress `p`.
    pub fn settings_at(&self, p: f64) -> ObjectiveSettings {
        ObjectiveSettings {
            lambda_adv: self.lambda_adv * lambda_adv_schedule(p),
            lambda_r: self.lambda_r,
            direction: self.direction,
            detach_target_weights: self.detach_target_weights,
            eps0: self.eps0,
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub progress: f64,
    pub lambda_adv: f64,
    pub lr_backbone: f64,
    pub lr_heads: f64,
    /// Mean over the epoch's steps.
    pub label_loss: f64,
    /// Mean over the epoch's steps, before the `λ_adv` weight.
    pub domain_loss: f64,
    /// Regularizer in the configured direction at the end of the epoch.
    pub structure_loss: Option<f64>,
    pub kl_dy: Option<f64>,
    pub kl_yd: Option<f64>,
    pub source_acc: f64,
    pub target_acc: Option<f64>,
    /// Steps that needed shrinkage, plus one if the end-of-epoch diagnostics did.
    pub shrink_events: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Training state that can be advanced epoch by epoch and checkpointed.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    source: &'a LabeledDataset,
    target: &'a LabeledDataset,
    model: RadaModel,
    velocity: ModelGradients,
    report: TrainReport,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: RadaModel,
        source: &'a LabeledDataset,
        target: &'a LabeledDataset,
        cfg: TrainConfig,
    ) -> Result<Self> {
        let velocity = model.zero_gradients();
        Self::assemble(model, velocity, TrainReport::default(), source, target, cfg)
    }

    pub fn from_checkpoint(
        ckpt: Checkpoint,
        source: &'a LabeledDataset,
        target: &'a LabeledDataset,
    ) -> Result<Self> {
        check_velocity(&ckpt.model, &ckpt.velocity)?;
        Self::assemble(
            ckpt.model,
            ckpt.velocity,
            ckpt.report,
            source,
            target,
            ckpt.config,
        )
    }

    fn assemble(
        model: RadaModel,
        velocity: ModelGradients,
        report: TrainReport,
        source: &'a LabeledDataset,
        target: &'a LabeledDataset,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        source.labels()?;
        let f = model.g_f.input_width();
        if source.feature_dim() != f || target.feature_dim() != f {
            return Err(Error::dim(format!(
                "model expects {f} features, source has {}, target {}",
                source.feature_dim(),
                target.feature_dim()
            )));
        }
        if source.classes != model.classes() {
            return Err(Error::dim(format!(
                "source has {} classes, model {}",
                source.classes,
                model.classes()
            )));
        }
        if source.is_empty() || target.is_empty() {
            return Err(Error::Batch(
                "training needs non-empty source and target".into(),
            ));
        }
        if cfg.single_branch == model.is_multi_branch() {
            return Err(Error::config(
                "single_branch",
                "does not match the model's discriminator",
            ));
        }
        if report.epochs.len() > cfg.epochs {
            return Err(Error::config("epochs", "fewer than already completed"));
        }
        Ok(Self {
            cfg,
            source,
            target,
            model,
            velocity,
            report,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &RadaModel {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn epochs_completed(&self) -> usize {
        self.report.epochs.len()
    }

    pub fn is_done(&self) -> bool {
        self.epochs_completed() >= self.cfg.epochs
    }

    /// Raises the total epoch count. Progress of later epochs is measured
    /// against the new total.
    pub fn extend_to(&mut self, epochs: usize) -> Result<()> {
        if epochs < self.epochs_completed() {
            return Err(Error::config(
                "epochs",
                format!("{} epochs already completed", self.epochs_completed()),
            ));
        }
        self.cfg.epochs = epochs;
        Ok(())
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.epochs_completed();
        if epoch >= self.cfg.epochs {
            return Err(Error::config("epochs", "training already complete"));
        }
        let cfg = &self.cfg;
        let p = epoch as f64 / cfg.epochs as f64;
        let settings = cfg.settings_at(p);
        let lr_f = lr_schedule(cfg.lr_backbone, p, cfg.alpha, cfg.beta);
        let lr_h = lr_schedule(cfg.lr_heads, p, cfg.alpha, cfg.beta);

        let mut rng = stream(cfg.seed, 1 + epoch as u64);
        let labels = self.source.labels()?;
        let source_order = if cfg.balanced_sampling {
            balanced_order(labels, self.source.classes, &mut rng)
        } else {
            let mut o: Vec<usize> = (0..labels.len()).collect();
            o.shuffle(&mut rng);
            o
        };
        let mut target_order: Vec<usize> = (0..self.target.len()).collect();
        target_order.shuffle(&mut rng);

        let mut label_sum = 0.0;
        let mut domain_sum = 0.0;
        let mut shrink_events = 0;
        let mut steps = 0;
        let mut t_cursor = 0;
        for (step, chunk) in source_order.chunks(cfg.batch_size).enumerate() {
            let t_idx: Vec<usize> = (0..chunk.len())
                .map(|i| target_order[(t_cursor + i) % target_order.len()])
                .collect();
            t_cursor += chunk.len();
            let xs = self.source.features.select_rows(chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let xt = self.target.features.select_rows(&t_idx);
            let batch = DomainBatch {
                source_x: &xs,
                source_labels: &ys,
                target_x: &xt,
            };
            let obj = total_objective(&self.model, batch, &settings)?;
            let diverged = |what| Error::Divergence { epoch, step, what };
            if !obj.total.is_finite() {
                return Err(diverged("loss"));
            }
            let g = &obj.grads;
            if !(g.g_f.is_finite() && g.g_y.is_finite() && g.g_d.is_finite()) {
                return Err(diverged("gradient"));
            }
            let (m, wd) = (cfg.momentum, cfg.weight_decay);
            sgd_step(
                &mut self.model.g_f,
                &g.g_f,
                &mut self.velocity.g_f,
                lr_f,
                m,
                wd,
            );
            sgd_step(
                &mut self.model.g_y,
                &g.g_y,
                &mut self.velocity.g_y,
                lr_h,
                m,
                wd,
            );
            sgd_step(
                &mut self.model.g_d,
                &g.g_d,
                &mut self.velocity.g_d,
                lr_h,
                m,
                wd,
            );
            let finite = |n: &NetworkParams| n.layers().iter().all(Matrix::is_finite);
            if !(finite(&self.model.g_f) && finite(&self.model.g_y) && finite(&self.model.g_d)) {
                return Err(diverged("parameters"));
            }
            label_sum += obj.label_loss;
            domain_sum += obj.domain_loss;
            shrink_events += usize::from(obj.shrinkage_triggered);
            steps += 1;
        }

        let (structure_loss, kl_dy, kl_yd) = if self.model.is_multi_branch() {
            let r = structure_report(&self.model, cfg.eps0)?;
            shrink_events += usize::from(r.shrinkage_triggered());
            let l = match cfg.direction {
                StructureDirection::DToY => r.lr_d2y,
                StructureDirection::YToD => r.lr_y2d,
            };
            (Some(l), Some(r.kl_dy), Some(r.kl_yd))
        } else {
            (None, None, None)
        };
        let target_acc = match self.target.labels {
            Some(_) => Some(accuracy(&self.model, self.target)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            progress: p,
            lambda_adv: settings.lambda_adv,
            lr_backbone: lr_f,
            lr_heads: lr_h,
            label_loss: label_sum / steps as f64,
            domain_loss: domain_sum / steps as f64,
            structure_loss,
            kl_dy,
            kl_yd,
            source_acc: accuracy(&self.model, self.source)?,
            target_acc,
            shrink_events,
        };
        let diag_finite = [structure_loss, kl_dy, kl_yd]
            .iter()
            .flatten()
            .all(|v| v.is_finite());
        if !(record.label_loss.is_finite() && record.domain_loss.is_finite() && diag_finite) {
            return Err(Error::Divergence {
                epoch,
                step: steps,
                what: "epoch diagnostics",
            });
        }
        self.report.epochs.push(record);
        Ok(self.report.epochs.last().expect("just pushed"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            model: self.model.clone(),
            velocity: self.velocity.clone(),
            report: self.report.clone(),
        }
    }

    pub fn into_parts(self) -> (RadaModel, TrainReport) {
        (self.model, self.report)
    }
}

fn check_velocity(model: &RadaModel, v: &ModelGradients) -> Result<()> {
    let shapes = |g: &Gradients| g.layers.iter().map(Matrix::shape).collect::<Vec<_>>();
    let z = model.zero_gradients();
    if shapes(&z.g_f) != shapes(&v.g_f)
        || shapes(&z.g_y) != shapes(&v.g_y)
        || shapes(&z.g_d) != shapes(&v.g_d)
    {
        return Err(Error::dim("checkpoint velocity does not match the model"));
    }
    Ok(())
}

/// Trains `model` for `cfg.epochs` epochs.
pub fn fit(
    model: RadaModel,
    source: &LabeledDataset,
    target: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(RadaModel, TrainReport)> {
    let mut t = Trainer::new(model, source, target, cfg.clone())?;
    t.run()?;
    Ok(t.into_parts())
}

/// Heavy-ball update with L2 decay folded into the gradient:
/// `v ← m·v + (g + wd·θ)`, `θ ← θ − lr·v`.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((w, g), v) in params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(velocity.layers.iter_mut())
    {
        for ((wi, gi), vi) in w
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(v.as_mut_slice())
        {
            *vi = momentum * *vi + (gi + weight_decay * *wi);
            *wi -= lr * *vi;
        }
    }
}

/// Source indices for one epoch: classes visited round-robin, each class's
/// samples shuffled and reused cyclically. The epoch has as many draws as the
/// source set has rows.
pub fn balanced_order<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for c in &mut by_class {
        c.shuffle(rng);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| !by_class[c].is_empty()).collect();
    let mut cursor = vec![0usize; classes];
    (0..labels.len())
        .map(|i| {
            let c = present[i % present.len()];
            let pick = by_class[c][cursor[c] % by_class[c].len()];
            cursor[c] += 1;
            pick
        })
        .collect()
}

/// Worst relative gradient error per subnetwork.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub g_f: f64,
    pub g_y: f64,
    pub g_d: f64,
}

impl GradCheckReport {
    /// Largest of the three; NaN if any is NaN.
    pub fn max(&self) -> f64 {
        [self.g_f, self.g_y, self.g_d]
            .into_iter()
            .fold(0.0, |m: f64, v| {
                if v.is_nan() || m.is_nan() {
                    f64::NAN
                } else {
                    m.max(v)
                }
            })
    }
}

/// Compares the analytic gradient of the full objective (plain identity in place
/// of gradient reversal, `λ_adv = cfg.lambda_adv`, target class weights frozen)
/// with central differences.
pub fn grad_check(
    model: &RadaModel,
    batch: DomainBatch<'_>,
    cfg: &TrainConfig,
    h: f64,
) -> Result<GradCheckReport> {
    let (ms, mt) = (batch.source_x.rows(), batch.target_x.rows());
    if ms > GRAD_CHECK_MAX_ROWS || mt > GRAD_CHECK_MAX_ROWS {
        return Err(Error::Batch(format!(
            "gradient check takes at most {GRAD_CHECK_MAX_ROWS} rows per domain, got {ms} and {mt}"
        )));
    }
    let settings = ObjectiveSettings {
        lambda_adv: cfg.lambda_adv,
        lambda_r: cfg.lambda_r,
        direction: cfg.direction,
        detach_target_weights: true,
        eps0: cfg.eps0,
    };
    let frozen =
        evaluate_objective(model, batch, &settings, GrlMode::Identity, None)?.target_weights;
    let analytic =
        evaluate_objective(model, batch, &settings, GrlMode::Identity, Some(&frozen))?.grads;
    let loss = |m: &RadaModel| {
        evaluate_objective(m, batch, &settings, GrlMode::Identity, Some(&frozen))
            .map_or(f64::NAN, |o| o.total)
    };
    let fd_f = finite_diff_grad(
        |p| {
            loss(&RadaModel {
                g_f: p.clone(),
                ..model.clone()
            })
        },
        &model.g_f,
        h,
    );
    let fd_y = finite_diff_grad(
        |p| {
            loss(&RadaModel {
                g_y: p.clone(),
                ..model.clone()
            })
        },
        &model.g_y,
        h,
    );
    let fd_d = finite_diff_grad(
        |p| {
            loss(&RadaModel {
                g_d: p.clone(),
                ..model.clone()
            })
        },
        &model.g_d,
        h,
    );
    Ok(GradCheckReport {
        g_f: analytic.g_f.relative_error(&fd_f),
        g_y: analytic.g_y.relative_error(&fd_y),
        g_d: analytic.g_d.relative_error(&fd_d),
    })
}

/// Replaces every bias row with uniform draws from `(−scale, scale)`. Keeps
/// finite-difference probes away from ReLU kinks that all-zero bias rows create.
pub fn jitter_biases<R: Rng + ?Sized>(model: &mut RadaModel, scale: f64, rng: &mut R) {
    for net in [&mut model.g_f, &mut model.g_y, &mut model.g_d] {
        for w in net.layers_mut() {
            let last = w.rows() - 1;
            for v in w.row_mut(last) {
                *v = rng.random_range(-scale..scale);
            }
        }
    }
}

/// Complete training state: config, weights, momentum buffers and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub model: RadaModel,
    pub velocity: ModelGradients,
    pub report: TrainReport,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string(ckpt).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        record: 0,
        reason: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        record: 0,
        reason,
    };
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    ckpt.model.validate()?;
    check_velocity(&ckpt.model, &ckpt.velocity)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_pair, GenConfig, ShiftKind};
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn small_data(shift: ShiftKind, magnitude: f64) -> (LabeledDataset, LabeledDataset) {
        let g = generate_pair(&GenConfig {
            classes: 3,
            features: 6,
            per_class: 20,
            shift,
            shift_magnitude: magnitude,
            ..GenConfig::default()
        })
        .unwrap();
        (g.source, g.target)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 8,
            feature_layers: vec![8],
            label_hidden: vec![],
            disc_hidden: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (s, t) = small_data(ShiftKind::Both, 0.5);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let model = cfg.init_model(6, 3).unwrap();
        let (out, report) = fit(model.clone(), &s, &t, &cfg).unwrap();
        assert_eq!(out, model);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn same_seed_gives_identical_reports() {
        let (s, t) = small_data(ShiftKind::Both, 0.5);
        let cfg = small_cfg();
        let run = || fit(cfg.init_model(6, 3).unwrap(), &s, &t, &cfg).unwrap();
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(r1.epochs.len(), 4);
        for r in &r1.epochs {
            assert!(r.kl_dy.unwrap().is_finite() && r.target_acc.is_some());
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (s, t) = small_data(ShiftKind::Both, 0.5);
        let cfg = small_cfg();
        let (full_model, full_report) = fit(cfg.init_model(6, 3).unwrap(), &s, &t, &cfg).unwrap();

        let mut first = Trainer::new(cfg.init_model(6, 3).unwrap(), &s, &t, cfg.clone()).unwrap();
        first.run_epoch().unwrap();
        first.run_epoch().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&first.checkpoint(), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, first.checkpoint());
        let mut resumed = Trainer::from_checkpoint(loaded, &s, &t).unwrap();
        resumed.run().unwrap();
        let (m, r) = resumed.into_parts();
        assert_eq!(m, full_model);
        assert_eq!(r, full_report);
    }

    #[test]
    fn checkpoint_rejects_wrong_version_and_garbage() {
        let (s, t) = small_data(ShiftKind::Both, 0.5);
        let cfg = small_cfg();
        let trainer = Trainer::new(cfg.init_model(6, 3).unwrap(), &s, &t, cfg).unwrap();
        let mut ckpt = trainer.checkpoint();
        ckpt.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_checkpoint(&ckpt, &path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "{\"format\": 1").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn momentum_zero_is_plain_descent_and_decay_matches_penalty() {
        let cfg = small_cfg();
        let model = cfg.init_model(6, 3).unwrap();
        let mut rng = stream(3, 0);
        let g = Gradients {
            layers: model
                .g_f
                .layers()
                .iter()
                .map(|m| Matrix::from_fn(m.rows(), m.cols(), |_, _| rng.random_range(-1.0..1.0)))
                .collect(),
        };
        let (lr, wd) = (0.05, 0.0005);

        let mut plain = model.g_f.clone();
        sgd_step(&mut plain, &g, &mut model.g_f.zeros_like(), lr, 0.0, 0.0);
        for ((a, w), gi) in plain.layers().iter().zip(model.g_f.layers()).zip(&g.layers) {
            for ((x, w0), gv) in a.as_slice().iter().zip(w.as_slice()).zip(gi.as_slice()) {
                assert_eq!(*x, w0 - lr * gv);
            }
        }

        // gradient of (wd/2)·‖θ‖² is wd·θ
        let mut decayed = model.g_f.clone();
        sgd_step(&mut decayed, &g, &mut model.g_f.zeros_like(), lr, 0.0, wd);
        for ((a, w), gi) in decayed
            .layers()
            .iter()
            .zip(model.g_f.layers())
            .zip(&g.layers)
        {
            for ((x, w0), gv) in a.as_slice().iter().zip(w.as_slice()).zip(gi.as_slice()) {
                let expect = w0 - lr * (gv + wd * w0);
                assert!((x - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let cfg = small_cfg();
        let model = cfg.init_model(6, 3).unwrap();
        let g = model.g_y.zeros_like();
        let ones = Gradients {
            layers: g.layers.iter().map(|m| m.map(|_| 1.0)).collect(),
        };
        let mut p = model.g_y.clone();
        let mut v = model.g_y.zeros_like();
        sgd_step(&mut p, &ones, &mut v, 0.1, 0.9, 0.0);
        sgd_step(&mut p, &ones, &mut v, 0.1, 0.9, 0.0);
        // displacement after two steps: 0.1·(1 + 1.9)
        let d = model.g_y.layers()[0][(0, 0)] - p.layers()[0][(0, 0)];
        assert!((d - 0.29).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn balanced_order_counts_differ_by_at_most_one(
            counts in proptest::collection::vec(1usize..30, 2..6),
            seed in 0u64..1000,
        ) {
            let labels: Vec<usize> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
                .collect();
            let mut rng = stream(seed, 1);
            let order = balanced_order(&labels, counts.len(), &mut rng);
            prop_assert_eq!(order.len(), labels.len());
            let mut seen = vec![0usize; counts.len()];
            for &i in &order {
                seen[labels[i]] += 1;
            }
            let (lo, hi) = (seen.iter().min().unwrap(), seen.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }

        #[test]
        fn schedules_are_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (p, q) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(lr_schedule(0.01, q, 10.0, 0.75) <= lr_schedule(0.01, p, 10.0, 0.75));
            prop_assert!(lambda_adv_schedule(q) >= lambda_adv_schedule(p));
        }
    }

    #[test]
    fn grad_check_reduced_cases() {
        let (s, t) = small_data(ShiftKind::Both, 0.5);
        let base = small_cfg();
        let mut model = base.init_model(6, 3).unwrap();
        jitter_biases(&mut model, 0.3, &mut stream(11, 0));
        let xs = s.features.row_range(0, 6);
        let xt = t.features.row_range(0, 6);
        let ys = &s.labels().unwrap()[..6];
        let batch = DomainBatch {
            source_x: &xs,
            source_labels: ys,
            target_x: &xt,
        };
        let check = |lambda_adv, lambda_r| {
            let cfg = TrainConfig {
                lambda_adv,
                lambda_r,
                ..base.clone()
            };
            grad_check(&model, batch, &cfg, 1e-5).unwrap()
        };
        assert!(check(0.0, 0.0).max() <= 1e-5);
        let lr_only = check(0.0, 0.01);
        assert!(lr_only.g_y <= 1e-4 && lr_only.g_d <= 1e-4, "{lr_only:?}");
        assert!(check(1.0, 0.01).max() <= 1e-4);

        let big = s.features.row_range(0, 9);
        let labels = &s.labels().unwrap()[..9];
        let too_big = DomainBatch {
            source_x: &big,
            source_labels: labels,
            target_x: &xt,
        };
        assert!(matches!(
            grad_check(&model, too_big, &base, 1e-5),
            Err(Error::Batch(_))
        ));
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(
            matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "batch_size")
        );
        let bad = TrainConfig {
            lr_heads: -1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "lr_heads"));
        let bad = TrainConfig {
            single_branch: true,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn separable_source_is_learned() {
        let g = generate_pair(&GenConfig {
            shift_magnitude: 0.0,
            ..GenConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let model = cfg
            .init_model(g.source.feature_dim(), g.source.classes)
            .unwrap();
        let (_, report) = fit(model, &g.source, &g.target, &cfg).unwrap();
        let last = report.last().unwrap();
        assert!(
            last.source_acc >= 0.95,
            "source accuracy {}",
            last.source_acc
        );
    }
}
