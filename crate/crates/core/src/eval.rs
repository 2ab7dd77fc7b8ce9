//! Accuracy, confusion counts, proxy A-distance and structure diagnostics, plus
//! the CSV exports built on them.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::RadaModel;
use crate::autonet::sigmoid;
use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::structure::{kl_precision, precision_from_weights, structure_loss, StructureDirection};
use crate::trainer::TrainReport;

/// Gradient steps of the PAD domain classifier.
pub const PAD_STEPS: usize = 200;
pub const PAD_LR: f64 = 0.1;
pub const PAD_L2: f64 = 1e-3;

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &RadaModel, x: &Matrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.logits(x)?))
}

/// Fraction of matching entries.
pub fn accuracy_of(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Eval(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Eval("empty dataset".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Classification accuracy of `G_y ∘ G_f` on a labeled dataset.
pub fn accuracy(model: &RadaModel, ds: &LabeledDataset) -> Result<f64> {
    let labels = ds.labels()?;
    accuracy_of(&predict(model, &ds.features)?, labels)
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        predictions: &[usize],
        labels: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Eval(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(Error::Label {
                    label: p.max(l),
                    classes,
                });
            }
            counts[l][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = (0..self.classes()).map(|c| format!("pred_{c}")).collect();
        let rows = self
            .counts
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect())
            .collect();
        write_csv(path, &header, rows)
    }
}

pub fn confusion(model: &RadaModel, ds: &LabeledDataset) -> Result<ConfusionMatrix> {
    let labels = ds.labels()?;
    ConfusionMatrix::from_predictions(&predict(model, &ds.features)?, labels, ds.classes)
}

/// Proxy A-distance from a domain classifier's held-out error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadReport {
    pub epsilon: f64,
    pub d_a: f64,
}

impl PadReport {
    /// Clamps `epsilon` to `[0, 0.5]` and applies `d_A = 2(1 − 2ε)`.
    pub fn from_error(epsilon: f64) -> Self {
        let epsilon = epsilon.clamp(0.0, 0.5);
        Self {
            epsilon,
            d_a: 2.0 * (1.0 - 2.0 * epsilon),
        }
    }
}

/// k-fold cross-validated linear logistic domain classifier. Sample `i` of the
/// stacked (source, target) rows lands in fold `i mod folds`; features are
/// standardized with training-fold statistics.
pub fn proxy_a_distance(source: &Matrix, target: &Matrix, folds: usize) -> Result<PadReport> {
    if source.cols() != target.cols() {
        return Err(Error::Eval(format!(
            "source has {} features, target {}",
            source.cols(),
            target.cols()
        )));
    }
    if folds < 2 {
        return Err(Error::Eval(format!("need at least 2 folds, got {folds}")));
    }
    let x = source.vstack(target)?;
    let n = x.rows();
    if n / folds < 2 {
        return Err(Error::Eval(format!(
            "{n} samples cannot fill {folds} folds with at least 2 each"
        )));
    }
    let y: Vec<f64> = (0..n)
        .map(|i| if i < source.rows() { 1.0 } else { 0.0 })
        .collect();

    let mut wrong = 0usize;
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
        let (mean, scale) = column_stats(&x, &train);
        let standardize = |rows: &[usize]| {
            Matrix::from_fn(rows.len(), x.cols(), |r, c| {
                (x[(rows[r], c)] - mean[c]) / scale[c]
            })
        };
        let x_train = standardize(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let (w, b) = fit_logistic(&x_train, &y_train);
        let x_test = standardize(&test);
        for (r, &i) in test.iter().enumerate() {
            let z: f64 = x_test
                .row(r)
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + b;
            let pred = if sigmoid(z) >= 0.5 { 1.0 } else { 0.0 };
            if pred != y[i] {
                wrong += 1;
            }
        }
    }
    Ok(PadReport::from_error(wrong as f64 / n as f64))
}

fn column_stats(x: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let f = x.cols();
    let mut mean = vec![0.0; f];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f];
    for &i in rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn fit_logistic(x: &Matrix, y: &[f64]) -> (Vec<f64>, f64) {
    let (n, f) = x.shape();
    let mut w = vec![0.0; f];
    let mut b = 0.0;
    for _ in 0..PAD_STEPS {
        let mut gw = vec![0.0; f];
        let mut gb = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let row = x.row(i);
            let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let r = sigmoid(z) - yi;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
            gb += r;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= PAD_LR * (g / n as f64 + PAD_L2 * *wj);
        }
        b -= PAD_LR * gb / n as f64;
    }
    (w, b)
}

/// Precision matrices, partial correlations and both divergence families
/// implied by a model's output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub omega_y: Matrix,
    pub omega_d: Matrix,
    pub rho_y: Matrix,
    pub rho_d: Matrix,
    /// `Tr(Ω_y⁻¹Ω_d) − logdet(Ω_y⁻¹Ω_d) − K`.
    pub kl_dy: f64,
    /// `Tr(Ω_d⁻¹Ω_y) − logdet(Ω_d⁻¹Ω_y) − K`.
    pub kl_yd: f64,
    /// Weight-space regularizer with the label predictor as primary.
    pub lr_d2y: f64,
    /// Weight-space regularizer with the discriminator as primary.
    pub lr_y2d: f64,
    pub shrink_y: f64,
    pub shrink_d: f64,
}

impl StructureReport {
    pub fn shrinkage_triggered(&self) -> bool {
        self.shrink_y > 0.0 || self.shrink_d > 0.0
    }

    /// Upper triangle from `ρ_y`, lower triangle from `ρ_d`, unit diagonal.
    pub fn combined_heatmap(&self) -> Matrix {
        combined_heatmap(&self.rho_y, &self.rho_d)
    }
}

pub fn combined_heatmap(upper: &Matrix, lower: &Matrix) -> Matrix {
    Matrix::from_fn(upper.rows(), upper.cols(), |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Less => upper[(i, j)],
        std::cmp::Ordering::Greater => lower[(i, j)],
        std::cmp::Ordering::Equal => 1.0,
    })
}

pub fn structure_report(model: &RadaModel, eps0: f64) -> Result<StructureReport> {
    if !model.is_multi_branch() {
        return Err(Error::Eval(
            "structure diagnostics need a multi-branch discriminator".into(),
        ));
    }
    let w_y = model.label_output_weights();
    let w_d = model.disc_output_weights();
    let py = precision_from_weights(w_y, eps0)?;
    let pd = precision_from_weights(w_d, eps0)?;
    let kl_dy = kl_precision(&py, &pd, StructureDirection::DToY)?;
    let kl_yd = kl_precision(&py, &pd, StructureDirection::YToD)?;
    let lr_d2y = structure_loss(w_y, w_d, StructureDirection::DToY, eps0)?.value;
    let lr_y2d = structure_loss(w_y, w_d, StructureDirection::YToD, eps0)?.value;
    Ok(StructureReport {
        rho_y: py.partial_correlations(),
        rho_d: pd.partial_correlations(),
        omega_y: py.omega,
        omega_d: pd.omega,
        kl_dy,
        kl_yd,
        lr_d2y,
        lr_y2d,
        shrink_y: py.shrink_used,
        shrink_d: pd.shrink_used,
    })
}

/// Writes a real matrix with a `c0..c{n-1}` header. Values use the shortest
/// representation that round-trips.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let header: Vec<String> = (0..m.cols()).map(|c| format!("c{c}")).collect();
    let rows = (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| v.to_string()).collect())
        .collect();
    write_csv(path, &header, rows)
}

/// One row per epoch. Undefined entries are left empty.
pub fn write_training_curves(path: &Path, report: &TrainReport) -> Result<()> {
    let header = [
        "epoch",
        "progress",
        "lambda_adv",
        "lr_backbone",
        "lr_heads",
        "label_loss",
        "domain_loss",
        "structure_loss",
        "kl_dy",
        "kl_yd",
        "source_acc",
        "target_acc",
        "shrink_events",
    ]
    .map(String::from);
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let rows = report
        .epochs
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.progress.to_string(),
                r.lambda_adv.to_string(),
                r.lr_backbone.to_string(),
                r.lr_heads.to_string(),
                r.label_loss.to_string(),
                r.domain_loss.to_string(),
                opt(r.structure_loss),
                opt(r.kl_dy),
                opt(r.kl_yd),
                r.source_acc.to_string(),
                opt(r.target_acc),
                r.shrink_events.to_string(),
            ]
        })
        .collect();
    write_csv(path, &header, rows)
}

pub(crate) fn write_csv(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut push = |rec: &[String]| {
        w.write_record(rec)
            .map_err(|e| Error::Eval(format!("csv encoding failed: {e}")))
    };
    push(header)?;
    for r in &rows {
        push(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Eval(format!("csv encoding failed: {e}")))?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
