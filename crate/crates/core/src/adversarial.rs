//! The three-part adversarial model and its composite training objective.
//!
//! `G_f` maps inputs to features, `G_y` predicts `K` class logits, and `G_d` is a
//! single discriminator whose output layer has one domain logit per class. A
//! sample's domain loss is the sum over branches of the branch BCE weighted by the
//! sample's class weights: one-hot labels for source samples, the (detached)
//! predicted class probabilities for target samples. A branch with zero weight
//! contributes neither loss nor gradient.
//!
//! Features reach `G_d` through a gradient reversal layer. The objective is
//!
//! ```text
//! J = mean_s CE(G_y(G_f(x)), y) + λ_R·L_R(W_y, W_d) + λ_adv·mean_{s∪t} Σ_k ỹ_k·BCE_k
//! ```
//!
//! `θ_y` and `θ_d` receive `∂J`. `θ_f` receives the cross-entropy gradient plus the
//! domain gradient negated by the reversal layer, which carries `λ_adv` once.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autonet::{
    backward, grl_backward, sigmoid_bce_loss, softmax_ce_loss, softmax_rows, Activation, Gradients,
    NetworkParams,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::structure::{structure_loss, StructureDirection};

/// Hidden layers of every subnetwork use this activation.
pub const HIDDEN_ACTIVATION: Activation = Activation::Relu;

/// Layer widths of a [`RadaModel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    /// Hidden widths of `G_f`; its last entry is the feature width.
    pub feature_layers: Vec<usize>,
    /// Hidden widths of `G_y` before the output layer.
    pub label_hidden: Vec<usize>,
    /// Width of the discriminator's shared hidden layer.
    pub disc_hidden: usize,
    pub classes: usize,
    /// Number of discriminator output branches: `classes`, or 1 for a plain
    /// binary discriminator.
    pub disc_branches: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.input_dim == 0 || self.feature_layers.is_empty() || self.feature_layers.contains(&0)
        {
            return Err(Error::config(
                "feature_layers",
                "widths must be positive and non-empty",
            ));
        }
        if self.label_hidden.contains(&0) || self.disc_hidden == 0 {
            return Err(Error::config("label_hidden", "widths must be positive"));
        }
        if self.disc_branches != 1 && self.disc_branches != self.classes {
            return Err(Error::config(
                "disc_branches",
                format!("must be 1 or {} (the class count)", self.classes),
            ));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.feature_layers.last().expect("validated")
    }
}

/// Feature extractor, label predictor and (multi-branch) domain discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadaModel {
    pub g_f: NetworkParams,
    pub g_y: NetworkParams,
    pub g_d: NetworkParams,
}

impl RadaModel {
    pub fn init<R: Rng + ?Sized>(shape: &ModelShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut f = vec![shape.input_dim];
        f.extend(&shape.feature_layers);
        let mut y = vec![shape.feature_dim()];
        y.extend(&shape.label_hidden);
        y.push(shape.classes);
        let d = [shape.feature_dim(), shape.disc_hidden, shape.disc_branches];
        let model = Self {
            g_f: NetworkParams::init(&f, rng)?,
            g_y: NetworkParams::init(&y, rng)?,
            g_d: NetworkParams::init(&d, rng)?,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks the wiring invariants between the three subnetworks.
    pub fn validate(&self) -> Result<()> {
        for (name, net) in [("g_f", &self.g_f), ("g_y", &self.g_y), ("g_d", &self.g_d)] {
            NetworkParams::new(net.layers().to_vec())
                .map_err(|e| Error::dim(format!("{name}: {e}")))?;
        }
        let feat = self.g_f.output_width();
        if self.g_y.input_width() != feat || self.g_d.input_width() != feat {
            return Err(Error::dim(format!(
                "feature width {feat} but G_y expects {} and G_d expects {}",
                self.g_y.input_width(),
                self.g_d.input_width()
            )));
        }
        let k = self.classes();
        if k < 2 {
            return Err(Error::dim("label predictor needs at least 2 classes"));
        }
        let b = self.g_d.output_width();
        if b != k && b != 1 {
            return Err(Error::dim(format!(
                "discriminator has {b} branches for {k} classes"
            )));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.g_y.output_width()
    }

    pub fn is_multi_branch(&self) -> bool {
        self.g_d.output_width() == self.classes()
    }

    /// Output-layer weights of the label predictor, `(N_{L−1}+1) × K`.
    pub fn label_output_weights(&self) -> &Matrix {
        self.g_y.last()
    }

    /// Output-layer weights of the discriminator.
    pub fn disc_output_weights(&self) -> &Matrix {
        self.g_d.last()
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.g_f.predict(x, HIDDEN_ACTIVATION)
    }

    /// Class logits of `G_y ∘ G_f`.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.g_y.predict(&self.features(x)?, HIDDEN_ACTIVATION)
    }

    pub fn zero_gradients(&self) -> ModelGradients {
        ModelGradients {
            g_f: self.g_f.zeros_like(),
            g_y: self.g_y.zeros_like(),
            g_d: self.g_d.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGradients {
    pub g_f: Gradients,
    pub g_y: Gradients,
    pub g_d: Gradients,
}

/// How a sample's class weights were produced; decides which validation applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Ground-truth one-hot vector.
    OneHot,
    /// Probability vector (entries in `[0,1]`, summing to 1).
    Soft,
}

pub const SOURCE_DOMAIN: f64 = 1.0;
pub const TARGET_DOMAIN: f64 = 0.0;

/// Per-sample domain labels and class weights for the multi-branch domain loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAssignment {
    pub domain_labels: Vec<f64>,
    pub weights: Matrix,
    pub kinds: Vec<WeightKind>,
}

impl BatchAssignment {
    /// One-hot weights from class labels.
    pub fn from_labels(labels: &[usize], classes: usize, domain: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Batch("no samples".into()));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label, classes });
        }
        Ok(Self {
            domain_labels: vec![domain; labels.len()],
            weights: Matrix::from_fn(labels.len(), classes, |i, k| {
                if labels[i] == k {
                    1.0
                } else {
                    0.0
                }
            }),
            kinds: vec![WeightKind::OneHot; labels.len()],
        })
    }

    /// Soft weights, typically predicted class probabilities.
    pub fn from_probabilities(probs: Matrix, domain: f64) -> Self {
        let n = probs.rows();
        Self {
            domain_labels: vec![domain; n],
            weights: probs,
            kinds: vec![WeightKind::Soft; n],
        }
    }

    /// Every sample weighs a single branch with 1 (plain binary discriminator).
    pub fn single_branch(samples: usize, domain: f64) -> Self {
        Self {
            domain_labels: vec![domain; samples],
            weights: Matrix::from_fn(samples, 1, |_, _| 1.0),
            kinds: vec![WeightKind::OneHot; samples],
        }
    }

    pub fn concat(mut self, other: BatchAssignment) -> Result<Self> {
        self.weights = self.weights.vstack(&other.weights)?;
        self.domain_labels.extend(other.domain_labels);
        self.kinds.extend(other.kinds);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.domain_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.rows() != self.len() || self.kinds.len() != self.len() {
            return Err(Error::dim("assignment fields disagree on sample count"));
        }
        for (m, kind) in self.kinds.iter().enumerate() {
            let row = self.weights.row(m);
            let d = self.domain_labels[m];
            if d != SOURCE_DOMAIN && d != TARGET_DOMAIN {
                return Err(Error::Assignment {
                    sample: m,
                    reason: format!("domain label {d} is not 0 or 1"),
                });
            }
            match kind {
                WeightKind::OneHot => {
                    let ones = row.iter().filter(|&&v| v == 1.0).count();
                    let zeros = row.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || ones + zeros != row.len() {
                        return Err(Error::Assignment {
                            sample: m,
                            reason: format!("expected a one-hot vector, got {row:?}"),
                        });
                    }
                }
                WeightKind::Soft => {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::Assignment {
                            sample: m,
                            reason: format!("weights must lie in [0,1] and sum to 1, sum is {sum}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

struct DomainLossParts {
    loss: f64,
    grad: Matrix,
    /// Unweighted branch BCE per (sample, branch).
    branch_losses: Matrix,
}

fn domain_loss_parts(branch_logits: &Matrix, a: &BatchAssignment) -> Result<DomainLossParts> {
    if a.is_empty() {
        return Err(Error::Batch("empty domain batch".into()));
    }
    if branch_logits.shape() != a.weights.shape() {
        return Err(Error::dim(format!(
            "branch logits {:?} vs weights {:?}",
            branch_logits.shape(),
            a.weights.shape()
        )));
    }
    a.validate()?;
    let (n, b) = branch_logits.shape();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, b);
    let mut branch_losses = Matrix::zeros(n, b);
    for m in 0..n {
        let d = a.domain_labels[m];
        for k in 0..b {
            let (l, dl) = sigmoid_bce_loss(branch_logits[(m, k)], d);
            branch_losses[(m, k)] = l;
            let w = a.weights[(m, k)];
            if w == 0.0 {
                continue;
            }
            loss += w * l;
            grad[(m, k)] = w * dl * inv_n;
        }
    }
    Ok(DomainLossParts {
        loss: loss * inv_n,
        grad,
        branch_losses,
    })
}

/// Batch-mean of `Σ_k ỹ_k · BCE(z_k, d)` and its gradient with respect to the
/// branch logits.
pub fn class_weighted_domain_loss(
    branch_logits: &Matrix,
    assignment: &BatchAssignment,
) -> Result<(f64, Matrix)> {
    let p = domain_loss_parts(branch_logits, assignment)?;
    Ok((p.loss, p.grad))
}

/// Weights of the three loss terms and related switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub lambda_adv: f64,
    pub lambda_r: f64,
    pub direction: StructureDirection,
    /// Treat target class weights as constants (no gradient through `ŷ`).
    pub detach_target_weights: bool,
    pub eps0: f64,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_r: 0.01,
            direction: StructureDirection::DToY,
            detach_target_weights: true,
            eps0: 1e-6,
        }
    }
}

/// Backward behaviour between `G_f` and `G_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrlMode {
    /// Gradient reversal: multiplies by `−λ_adv`.
    Reverse,
    /// Plain identity; the result is then the exact gradient of `J`.
    Identity,
}

/// Labeled source rows and unlabeled target rows evaluated together.
#[derive(Debug, Clone, Copy)]
pub struct DomainBatch<'a> {
    pub source_x: &'a Matrix,
    pub source_labels: &'a [usize],
    pub target_x: &'a Matrix,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub label_loss: f64,
    pub domain_loss: f64,
    /// `L_R`, evaluated only when `λ_R > 0` and the discriminator is multi-branch.
    pub structure_loss: Option<f64>,
    pub shrinkage_triggered: bool,
    /// Class weights used for the target rows.
    pub target_weights: Matrix,
    pub grads: ModelGradients,
}

/// Full objective and per-subnetwork update gradients (reversal layer active).
pub fn total_objective(
    model: &RadaModel,
    batch: DomainBatch<'_>,
    settings: &ObjectiveSettings,
) -> Result<Objective> {
    evaluate_objective(model, batch, settings, GrlMode::Reverse, None)
}

/// Objective evaluation with explicit reversal mode and, optionally, externally
/// frozen target class weights.
pub fn evaluate_objective(
    model: &RadaModel,
    batch: DomainBatch<'_>,
    s: &ObjectiveSettings,
    grl: GrlMode,
    frozen_target_weights: Option<&Matrix>,
) -> Result<Objective> {
    let ms = batch.source_x.rows();
    let mt = batch.target_x.rows();
    if ms == 0 || batch.source_labels.is_empty() {
        return Err(Error::Batch("empty source batch".into()));
    }
    if mt == 0 {
        return Err(Error::Batch("empty target batch".into()));
    }
    if batch.source_labels.len() != ms {
        return Err(Error::Batch(format!(
            "{ms} source rows but {} labels",
            batch.source_labels.len()
        )));
    }
    if s.lambda_adv < 0.0 || s.lambda_r < 0.0 {
        return Err(Error::config("lambda", "loss weights must be non-negative"));
    }
    let k = model.classes();
    let multi = model.is_multi_branch();
    let total_rows = ms + mt;

    let x_all = batch.source_x.vstack(batch.target_x)?;
    let f_trace = model.g_f.forward(&x_all, HIDDEN_ACTIVATION)?;
    let feats = &f_trace.output;
    let feats_s = feats.row_range(0, ms);
    let feats_t = feats.row_range(ms, total_rows);

    // label path, source only
    let y_trace_s = model.g_y.forward(&feats_s, HIDDEN_ACTIVATION)?;
    let (label_loss, dlogits_s) = softmax_ce_loss(&y_trace_s.output, batch.source_labels)?;
    let (mut g_y, dfeat_label) = backward(&y_trace_s, &dlogits_s)?;

    // target class weights
    let y_trace_t = model.g_y.forward(&feats_t, HIDDEN_ACTIVATION)?;
    let target_weights = match frozen_target_weights {
        Some(w) => {
            if w.shape() != (mt, k) {
                return Err(Error::dim(format!(
                    "frozen target weights {:?}, expected {:?}",
                    w.shape(),
                    (mt, k)
                )));
            }
            w.clone()
        }
        None => softmax_rows(&y_trace_t.output),
    };

    let assignment = if multi {
        BatchAssignment::from_labels(batch.source_labels, k, SOURCE_DOMAIN)?.concat(
            BatchAssignment::from_probabilities(target_weights.clone(), TARGET_DOMAIN),
        )?
    } else {
        BatchAssignment::single_branch(ms, SOURCE_DOMAIN)
            .concat(BatchAssignment::single_branch(mt, TARGET_DOMAIN))?
    };

    let d_trace = model.g_d.forward(feats, HIDDEN_ACTIVATION)?;
    let parts = domain_loss_parts(&d_trace.output, &assignment)?;
    let (g_d_dom, dfeat_dom) = backward(&d_trace, &parts.grad)?;
    let mut g_d = g_d_dom.scale(s.lambda_adv);

    let mut dfeat = Matrix::zeros(total_rows, feats.cols());
    for i in 0..ms {
        for (o, v) in dfeat.row_mut(i).iter_mut().zip(dfeat_label.row(i)) {
            *o += v;
        }
    }
    let dom_to_features = match grl {
        GrlMode::Reverse => grl_backward(&dfeat_dom, s.lambda_adv),
        GrlMode::Identity => dfeat_dom.scale(s.lambda_adv),
    };
    dfeat.axpy(1.0, &dom_to_features);

    // gradient through the target weights ŷ = softmax(G_y(G_f(x_t)))
    if multi && !s.detach_target_weights && frozen_target_weights.is_none() && s.lambda_adv != 0.0 {
        let inv_n = 1.0 / total_rows as f64;
        let mut dlogits_t = Matrix::zeros(mt, k);
        for m in 0..mt {
            let probs = target_weights.row(m);
            let dw: Vec<f64> = (0..k)
                .map(|c| s.lambda_adv * inv_n * parts.branch_losses[(ms + m, c)])
                .collect();
            let inner: f64 = probs.iter().zip(&dw).map(|(p, g)| p * g).sum();
            for c in 0..k {
                dlogits_t[(m, c)] = probs[c] * (dw[c] - inner);
            }
        }
        let (g_y_t, dfeat_t) = backward(&y_trace_t, &dlogits_t)?;
        g_y.axpy(1.0, &g_y_t);
        for m in 0..mt {
            for (o, v) in dfeat.row_mut(ms + m).iter_mut().zip(dfeat_t.row(m)) {
                *o += v;
            }
        }
    }

    let (g_f, _) = backward(&f_trace, &dfeat)?;

    let mut total = label_loss + s.lambda_adv * parts.loss;
    let mut structure = None;
    let mut shrinkage_triggered = false;
    if s.lambda_r > 0.0 {
        if !multi {
            return Err(Error::config(
                "lambda_r",
                "the structure regularizer needs a multi-branch discriminator",
            ));
        }
        let reg = structure_loss(
            model.label_output_weights(),
            model.disc_output_weights(),
            s.direction,
            s.eps0,
        )?;
        total += s.lambda_r * reg.value;
        g_y.layers
            .last_mut()
            .expect("non-empty")
            .axpy(s.lambda_r, &reg.grad_y);
        g_d.layers
            .last_mut()
            .expect("non-empty")
            .axpy(s.lambda_r, &reg.grad_d);
        shrinkage_triggered = reg.shrinkage_triggered();
        structure = Some(reg.value);
    }

    Ok(Objective {
        total,
        label_loss,
        domain_loss: parts.loss,
        structure_loss: structure,
        shrinkage_triggered,
        target_weights,
        grads: ModelGradients { g_f, g_y, g_d },
    })
}

/// Adversarial weight at training progress `p ∈ [0,1]`:
/// `(1 − e^{−10p}) / (1 + e^{−10p})`, rising from 0 towards 1.
pub fn lambda_adv_schedule(p: f64) -> f64 {
    let e = (-10.0 * p).exp();
    (1.0 - e) / (1.0 + e)
}

/// `lr0 / (1 + α·p)^β`.
pub fn lr_schedule(lr0: f64, p: f64, alpha: f64, beta: f64) -> f64 {
    lr0 / (1.0 + alpha * p).powf(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn toy_logits() -> Matrix {
        Matrix::from_rows(&[vec![logit(0.9), logit(0.6)]]).unwrap()
    }

    fn shape(k: usize, branches: usize) -> ModelShape {
        ModelShape {
            input_dim: 4,
            feature_layers: vec![6, 5],
            label_hidden: vec![6],
            disc_hidden: 7,
            classes: k,
            disc_branches: branches,
        }
    }

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    struct Fixture {
        model: RadaModel,
        xs: Matrix,
        ys: Vec<usize>,
        xt: Matrix,
    }

    fn fixture(seed: u64, branches_multi: bool) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3;
        let mut model =
            RadaModel::init(&shape(k, if branches_multi { k } else { 1 }), &mut rng).unwrap();
        // zero biases put dead feature rows exactly on a ReLU kink
        for net in [&mut model.g_f, &mut model.g_y, &mut model.g_d] {
            for layer in net.layers_mut() {
                let r = layer.rows() - 1;
                for j in 0..layer.cols() {
                    layer[(r, j)] = rng.random_range(-0.3..0.3);
                }
            }
        }
        let xs = gaussian(5, 4, &mut rng);
        let ys = (0..5).map(|_| rng.random_range(0..k)).collect();
        let xt = gaussian(4, 4, &mut rng);
        Fixture { model, xs, ys, xt }
    }

    #[test]
    fn domain_loss_examples() {
        let z = toy_logits();
        let a = BatchAssignment::from_labels(&[0], 2, SOURCE_DOMAIN).unwrap();
        let (l, _) = class_weighted_domain_loss(&z, &a).unwrap();
        assert!((l - (-(0.9f64).ln())).abs() < 1e-12);
        assert!((l - 0.105361).abs() < 1e-6);

        let a = BatchAssignment::from_labels(&[1], 2, SOURCE_DOMAIN).unwrap();
        let (l, _) = class_weighted_domain_loss(&z, &a).unwrap();
        assert!((l - 0.510826).abs() < 1e-6);

        let probs = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let a = BatchAssignment::from_probabilities(probs, TARGET_DOMAIN);
        let (l, _) = class_weighted_domain_loss(&z, &a).unwrap();
        assert!((l - (0.5 * -(0.1f64).ln() + 0.5 * -(0.4f64).ln())).abs() < 1e-12);
        assert!((l - 1.609438).abs() < 1e-6);
    }

    #[test]
    fn domain_loss_rejects_bad_weights() {
        let z = toy_logits();
        let mut a = BatchAssignment::from_labels(&[0], 2, SOURCE_DOMAIN).unwrap();
        a.weights[(0, 1)] = 1.0;
        assert!(matches!(
            class_weighted_domain_loss(&z, &a),
            Err(Error::Assignment { sample: 0, .. })
        ));
        let probs = Matrix::from_rows(&[vec![0.5, 0.6]]).unwrap();
        let a = BatchAssignment::from_probabilities(probs, TARGET_DOMAIN);
        assert!(matches!(
            class_weighted_domain_loss(&z, &a),
            Err(Error::Assignment { .. })
        ));
    }

    #[test]
    fn muted_branch_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = gaussian(4, 3, &mut rng);
        let probs = Matrix::from_rows(&[
            vec![0.2, 0.0, 0.8],
            vec![1.0, 0.0, 0.0],
            vec![0.3, 0.3, 0.4],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        let a = BatchAssignment::from_probabilities(probs.clone(), TARGET_DOMAIN);
        let (_, g) = class_weighted_domain_loss(&z, &a).unwrap();
        for m in 0..4 {
            for k in 0..3 {
                if probs[(m, k)] == 0.0 {
                    assert_eq!(g[(m, k)], 0.0);
                } else {
                    assert_ne!(g[(m, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn one_hot_through_soft_path_is_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = gaussian(3, 3, &mut rng);
        let hard = BatchAssignment::from_labels(&[2, 0, 1], 3, SOURCE_DOMAIN).unwrap();
        let soft = BatchAssignment::from_probabilities(hard.weights.clone(), SOURCE_DOMAIN);
        let (a, ga) = class_weighted_domain_loss(&z, &hard).unwrap();
        let (b, gb) = class_weighted_domain_loss(&z, &soft).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn concentrated_weights_reduce_to_single_branch_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = gaussian(6, 3, &mut rng);
        let a = BatchAssignment::from_labels(&[1, 1, 1], 3, SOURCE_DOMAIN)
            .unwrap()
            .concat(BatchAssignment::from_labels(&[1, 1, 1], 3, TARGET_DOMAIN).unwrap())
            .unwrap();
        let (l, _) = class_weighted_domain_loss(&z, &a).unwrap();
        let want: f64 = (0..6)
            .map(|m| sigmoid_bce_loss(z[(m, 1)], if m < 3 { 1.0 } else { 0.0 }).0)
            .sum::<f64>()
            / 6.0;
        assert!((l - want).abs() < 1e-15);
    }

    #[test]
    fn switched_off_objective_is_plain_cross_entropy() {
        let fx = fixture(6, true);
        let s = ObjectiveSettings {
            lambda_adv: 0.0,
            lambda_r: 0.0,
            ..Default::default()
        };
        let batch = DomainBatch {
            source_x: &fx.xs,
            source_labels: &fx.ys,
            target_x: &fx.xt,
        };
        let obj = total_objective(&fx.model, batch, &s).unwrap();
        let logits = fx.model.logits(&fx.xs).unwrap();
        let (ce, _) = softmax_ce_loss(&logits, &fx.ys).unwrap();
        assert_eq!(obj.total, ce);
        assert_eq!(obj.grads.g_d.max_abs(), 0.0);
    }

    #[test]
    fn grl_negates_identity_gradient_exactly() {
        let fx = fixture(7, true);
        let batch = DomainBatch {
            source_x: &fx.xs,
            source_labels: &fx.ys,
            target_x: &fx.xt,
        };
        for lambda_adv in [0.3, 1.0] {
            // isolate the domain path: no label loss contribution to θ_f
            let s = ObjectiveSettings {
                lambda_adv,
                lambda_r: 0.0,
                ..Default::default()
            };
            let base = ObjectiveSettings {
                lambda_adv: 0.0,
                ..s
            };
            let rev = evaluate_objective(&fx.model, batch, &s, GrlMode::Reverse, None).unwrap();
            let id = evaluate_objective(&fx.model, batch, &s, GrlMode::Identity, None).unwrap();
            let ce = evaluate_objective(&fx.model, batch, &base, GrlMode::Reverse, None).unwrap();
            let dom_rev = rev.grads.g_f.sub(&ce.grads.g_f);
            let dom_id = id.grads.g_f.sub(&ce.grads.g_f);
            let err = dom_rev.sub(&dom_id.scale(-1.0)).max_abs();
            assert!(err <= 1e-12 * dom_id.max_abs().max(1.0), "err {err:e}");
            assert_eq!(rev.grads.g_d, id.grads.g_d);
            assert_eq!(rev.grads.g_y, id.grads.g_y);
        }
    }

    fn fd_check(fx: &Fixture, s: ObjectiveSettings) -> [f64; 3] {
        let batch = DomainBatch {
            source_x: &fx.xs,
            source_labels: &fx.ys,
            target_x: &fx.xt,
        };
        let obj = evaluate_objective(&fx.model, batch, &s, GrlMode::Identity, None).unwrap();
        let frozen = if s.detach_target_weights {
            Some(obj.target_weights.clone())
        } else {
            None
        };
        let value = |m: &RadaModel| {
            evaluate_objective(m, batch, &s, GrlMode::Identity, frozen.as_ref())
                .unwrap()
                .total
        };
        let mut m = fx.model.clone();
        let fd_f = finite_diff_grad(
            |p| {
                m.g_f = p.clone();
                value(&m)
            },
            &fx.model.g_f,
            1e-5,
        );
        let mut m = fx.model.clone();
        let fd_y = finite_diff_grad(
            |p| {
                m.g_y = p.clone();
                value(&m)
            },
            &fx.model.g_y,
            1e-5,
        );
        let mut m = fx.model.clone();
        let fd_d = finite_diff_grad(
            |p| {
                m.g_d = p.clone();
                value(&m)
            },
            &fx.model.g_d,
            1e-5,
        );
        [
            obj.grads.g_f.relative_error(&fd_f),
            obj.grads.g_y.relative_error(&fd_y),
            obj.grads.g_d.relative_error(&fd_d),
        ]
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        for seed in 0..3 {
            let fx = fixture(20 + seed, true);
            for dir in StructureDirection::ALL {
                let s = ObjectiveSettings {
                    lambda_adv: 0.7,
                    lambda_r: 0.01,
                    direction: dir,
                    ..Default::default()
                };
                let errs = fd_check(&fx, s);
                assert!(
                    errs.iter().all(|&e| e <= 1e-4),
                    "seed {seed} {dir}: {errs:?}"
                );
            }
        }
    }

    #[test]
    fn undetached_target_weights_gradients_match_finite_differences() {
        let fx = fixture(40, true);
        let s = ObjectiveSettings {
            lambda_adv: 1.0,
            lambda_r: 0.01,
            detach_target_weights: false,
            ..Default::default()
        };
        let errs = fd_check(&fx, s);
        assert!(errs.iter().all(|&e| e <= 1e-4), "{errs:?}");
    }

    #[test]
    fn single_branch_discriminator_gradients() {
        let fx = fixture(41, false);
        let s = ObjectiveSettings {
            lambda_adv: 1.0,
            lambda_r: 0.0,
            ..Default::default()
        };
        let errs = fd_check(&fx, s);
        assert!(errs.iter().all(|&e| e <= 1e-4), "{errs:?}");
        let with_reg = ObjectiveSettings {
            lambda_r: 0.01,
            ..s
        };
        let batch = DomainBatch {
            source_x: &fx.xs,
            source_labels: &fx.ys,
            target_x: &fx.xt,
        };
        assert!(total_objective(&fx.model, batch, &with_reg).is_err());
    }

    #[test]
    fn empty_batches_are_rejected() {
        let fx = fixture(8, true);
        let empty = Matrix::zeros(0, 4);
        let s = ObjectiveSettings::default();
        let r = total_objective(
            &fx.model,
            DomainBatch {
                source_x: &fx.xs,
                source_labels: &fx.ys,
                target_x: &empty,
            },
            &s,
        );
        assert!(matches!(r, Err(Error::Batch(_))));
        let r = total_objective(
            &fx.model,
            DomainBatch {
                source_x: &empty,
                source_labels: &[],
                target_x: &fx.xt,
            },
            &s,
        );
        assert!(matches!(r, Err(Error::Batch(_))));
    }

    #[test]
    fn schedules() {
        assert_eq!(lambda_adv_schedule(0.0), 0.0);
        assert!((lambda_adv_schedule(1.0) - 0.999909).abs() < 1e-6);
        assert!((lambda_adv_schedule(0.1) - 0.462117).abs() < 1e-6);

        assert_eq!(lr_schedule(0.01, 0.0, 10.0, 0.75), 0.01);
        let r = lr_schedule(1.0, 1.0, 10.0, 0.75);
        assert!((r - 11f64.powf(-0.75)).abs() < 1e-15);
        assert!((r - 0.16556).abs() < 1e-5);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(lr_schedule(0.2, p, 0.0, 0.75), 0.2);
        }
    }

    #[test]
    fn shape_validation() {
        let mut s = shape(1, 1);
        assert!(s.validate().is_err());
        s = shape(3, 2);
        assert!(s.validate().is_err());
        assert!(shape(3, 3).validate().is_ok());
    }
}
