//! Synthetic source/target classification tasks with shared class structure.
//!
//! A sparse ground-truth precision `Ω*` over the `K` classes is drawn first. Each
//! feature coordinate of the `K × F` class-mean matrix is an independent draw from
//! `N(0, s²·Ω*⁻¹)`, so classes that are conditionally dependent under `Ω*` get
//! similar means. Samples are class means plus isotropic Gaussian noise. The target
//! domain applies one rigid transform (rotation and/or translation) to every class,
//! which moves the data but leaves the inter-class geometry untouched.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inverse_pd, matmul, matmul_nt, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

/// Feature rows with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Option<Vec<usize>>,
        domain: Domain,
        classes: usize,
    ) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != features.rows() {
                return Err(Error::dim(format!(
                    "{} feature rows but {} labels",
                    features.rows(),
                    labels.len()
                )));
            }
            if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
                return Err(Error::Label { label, classes });
            }
        }
        Ok(Self {
            features,
            labels,
            domain,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Eval(format!("{} dataset carries no labels", self.domain)))
    }

    /// Same rows with labels withheld.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Per-class sample counts (requires labels).
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.classes];
        for &y in self.labels()? {
            counts[y] += 1;
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Rotation,
    Translation,
    #[default]
    Both,
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub classes: usize,
    pub features: usize,
    pub per_class: usize,
    pub seed: u64,
    pub shift: ShiftKind,
    /// Rotation angle in radians (applied in every coordinate plane) and, for
    /// translations, the offset length in units of the typical class-mean norm.
    pub shift_magnitude: f64,
    /// Standard deviation scale of the class means.
    pub mean_scale: f64,
    /// Standard deviation of the isotropic per-sample noise.
    pub noise: f64,
    /// Probability that a pair of classes is linked in `Ω*`.
    pub edge_prob: f64,
    /// Partial domain adaptation: target keeps only these classes.
    pub target_classes: Option<Vec<usize>>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            features: 16,
            per_class: 100,
            seed: 7,
            shift: ShiftKind::Both,
            shift_magnitude: 0.6,
            mean_scale: 1.0,
            noise: 0.6,
            edge_prob: 0.4,
            target_classes: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config(
                "classes",
                format!("must be >= 2, got {}", self.classes),
            ));
        }
        if self.features < 2 {
            return Err(Error::config(
                "features",
                format!("must be >= 2, got {}", self.features),
            ));
        }
        if self.per_class == 0 {
            return Err(Error::config("per_class", "must be >= 1"));
        }
        if !(self.shift_magnitude >= 0.0 && self.shift_magnitude.is_finite()) {
            return Err(Error::config("shift_magnitude", "must be finite and >= 0"));
        }
        if !(self.mean_scale > 0.0 && self.mean_scale.is_finite()) {
            return Err(Error::config("mean_scale", "must be finite and > 0"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::config("edge_prob", "must lie in [0, 1]"));
        }
        if let Some(subset) = &self.target_classes {
            if subset.is_empty() {
                return Err(Error::config("target_classes", "must not be empty"));
            }
            if let Some(c) = subset.iter().find(|&&c| c >= self.classes) {
                return Err(Error::config(
                    "target_classes",
                    format!("class {c} is out of range for {} classes", self.classes),
                ));
            }
            let mut sorted = subset.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != subset.len() {
                return Err(Error::config("target_classes", "contains duplicates"));
            }
        }
        Ok(())
    }
}

/// Output of [`generate_pair`].
#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub source: LabeledDataset,
    /// Target rows; labels are kept for evaluation only.
    pub target: LabeledDataset,
    pub ground_truth_precision: Matrix,
    /// `K × F` source class means.
    pub class_means: Matrix,
    /// Class means after the domain shift.
    pub target_class_means: Matrix,
}

const MAX_STRUCTURE_ATTEMPTS: usize = 10;

pub fn generate_pair(cfg: &GenConfig) -> Result<GeneratedPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, f) = (cfg.classes, cfg.features);

    let omega = (0..MAX_STRUCTURE_ATTEMPTS)
        .find_map(|_| {
            let candidate = sparse_precision(k, cfg.edge_prob, &mut rng);
            cholesky(&candidate).ok().map(|_| candidate)
        })
        .ok_or_else(|| {
            Error::Gen(format!(
                "no positive-definite structure after {MAX_STRUCTURE_ATTEMPTS} attempts"
            ))
        })?;

    // columns ~ N(0, s²Σ) with Σ = Ω*⁻¹ = L Lᵀ
    let sigma_factor = cholesky(&inverse_pd(&omega)?)?;
    let z = Matrix::from_fn(k, f, |_, _| rng.sample::<f64, _>(StandardNormal));
    let means = matmul(sigma_factor.lower(), &z)?.scale(cfg.mean_scale);

    let transform = RigidTransform::draw(cfg, &mut rng)?;
    let target_means = transform.apply(&means)?;

    let source = sample_domain(
        &means,
        &(0..k).collect::<Vec<_>>(),
        cfg,
        Domain::Source,
        None,
        &mut rng,
    )?;
    let target_set: Vec<usize> = match &cfg.target_classes {
        Some(subset) => {
            let mut s = subset.clone();
            s.sort_unstable();
            s
        }
        None => (0..k).collect(),
    };
    let target = sample_domain(
        &means,
        &target_set,
        cfg,
        Domain::Target,
        Some(&transform),
        &mut rng,
    )?;

    Ok(GeneratedPair {
        source,
        target,
        ground_truth_precision: omega,
        class_means: means,
        target_class_means: target_means,
    })
}

/// Random sparse symmetric matrix made PD by diagonal dominance.
fn sparse_precision<R: Rng>(k: usize, edge_prob: f64, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            if rng.random_bool(edge_prob) {
                let mag: f64 = rng.random_range(0.5..1.0);
                let v = if rng.random_bool(0.5) { mag } else { -mag };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    for i in 0..k {
        let off: f64 = (0..k).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        m[(i, i)] = off + 0.5;
    }
    m
}

/// `x ↦ R·x + t` applied row-wise.
#[derive(Debug, Clone)]
struct RigidTransform {
    rotation: Option<Matrix>,
    translation: Option<Vec<f64>>,
}

impl RigidTransform {
    fn draw<R: Rng>(cfg: &GenConfig, rng: &mut R) -> Result<Self> {
        let f = cfg.features;
        let basis = random_orthogonal(f, rng);
        let direction: Vec<f64> = {
            let v: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        if cfg.shift_magnitude == 0.0 {
            return Ok(Self {
                rotation: None,
                translation: None,
            });
        }
        let rotate = matches!(cfg.shift, ShiftKind::Rotation | ShiftKind::Both);
        let translate = matches!(cfg.shift, ShiftKind::Translation | ShiftKind::Both);
        let rotation = if rotate {
            let (c, s) = (cfg.shift_magnitude.cos(), cfg.shift_magnitude.sin());
            let mut block = Matrix::identity(f);
            for p in 0..f / 2 {
                let (a, b) = (2 * p, 2 * p + 1);
                block[(a, a)] = c;
                block[(a, b)] = -s;
                block[(b, a)] = s;
                block[(b, b)] = c;
            }
            Some(matmul_nt(&matmul(&basis, &block)?, &basis)?)
        } else {
            None
        };
        let translation = translate.then(|| {
            let len = cfg.shift_magnitude * cfg.mean_scale * (f as f64).sqrt();
            direction.iter().map(|d| d * len).collect()
        });
        Ok(Self {
            rotation,
            translation,
        })
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = match &self.rotation {
            // rows are points, so x·Rᵀ
            Some(r) => matmul_nt(x, r)?,
            None => x.clone(),
        };
        if let Some(t) = &self.translation {
            for i in 0..out.rows() {
                for (v, ti) in out.row_mut(i).iter_mut().zip(t) {
                    *v += ti;
                }
            }
        }
        Ok(out)
    }
}

/// Orthonormal basis by modified Gram–Schmidt on a Gaussian matrix.
fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Matrix {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let cj = cols[j].clone();
                for (a, b) in cols[i].iter_mut().zip(&cj) {
                    *a -= dot * b;
                }
            }
            let norm = cols[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[i].iter_mut().for_each(|a| *a /= norm);
        }
        if ok {
            return Matrix::from_fn(n, n, |r, c| cols[c][r]);
        }
    }
}

fn sample_domain<R: Rng>(
    means: &Matrix,
    classes: &[usize],
    cfg: &GenConfig,
    domain: Domain,
    transform: Option<&RigidTransform>,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let f = means.cols();
    let n = classes.len() * cfg.per_class;
    let mut labels = Vec::with_capacity(n);
    for &c in classes {
        labels.extend(std::iter::repeat_n(c, cfg.per_class));
    }
    labels.shuffle(rng);
    let mut x = Matrix::zeros(n, f);
    for (i, &c) in labels.iter().enumerate() {
        let mean = means.row(c);
        for (j, v) in x.row_mut(i).iter_mut().enumerate() {
            *v = mean[j] + cfg.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if let Some(t) = transform {
        x = t.apply(&x)?;
    }
    LabeledDataset::new(x, Some(labels), domain, cfg.classes)
}

/// Writes the plain-text dataset format: a header `K F M domain`, then one
/// `label f_1 … f_F` record per row (`-1` for a withheld label), floats with 17
/// significant digits.
pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "{} {} {} {}",
        ds.classes,
        ds.feature_dim(),
        ds.len(),
        ds.domain
    )
    .map_err(io)?;
    for i in 0..ds.len() {
        match &ds.labels {
            Some(l) => write!(w, "{}", l[i]).map_err(io)?,
            None => write!(w, "-1").map_err(io)?,
        }
        for v in ds.features.row(i) {
            write!(w, " {v:.16e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt_err = |record: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        record,
        reason,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| fmt_err(0, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(fmt_err(
            0,
            format!("header needs `K F M domain`, got `{header}`"),
        ));
    }
    let parse_count = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| fmt_err(0, format!("bad {what} `{s}` in header")))
    };
    let k = parse_count(fields[0], "class count")?;
    let f = parse_count(fields[1], "feature count")?;
    let m = parse_count(fields[2], "record count")?;
    let domain: Domain = fields[3].parse().map_err(|e| fmt_err(0, e))?;
    if k == 0 || f == 0 || m == 0 {
        return Err(fmt_err(0, "K, F and M must be positive".into()));
    }

    let mut data = Vec::with_capacity(m * f);
    let mut labels = Vec::with_capacity(m);
    let mut withheld = 0usize;
    let mut records = 0usize;
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        if records > m {
            return Err(fmt_err(
                records,
                format!("more than the {m} records declared in the header"),
            ));
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label: i64 = label_tok
            .parse()
            .map_err(|_| fmt_err(records, format!("bad label `{label_tok}`")))?;
        if label == -1 {
            withheld += 1;
        } else if label < 0 || label as usize >= k {
            return Err(fmt_err(
                records,
                format!("label {label} out of range for {k} classes"),
            ));
        } else {
            labels.push(label as usize);
        }
        let before = data.len();
        for tok in tokens {
            let v: f64 = tok
                .parse()
                .map_err(|_| fmt_err(records, format!("bad feature value `{tok}`")))?;
            if !v.is_finite() {
                return Err(fmt_err(records, format!("non-finite feature `{tok}`")));
            }
            data.push(v);
        }
        if data.len() - before != f {
            return Err(fmt_err(
                records,
                format!("expected {f} features, found {}", data.len() - before),
            ));
        }
    }
    if records != m {
        return Err(fmt_err(
            records,
            format!("header declares {m} records, file has {records}"),
        ));
    }
    let labels = match (withheld, labels.len()) {
        (0, _) => Some(labels),
        (_, 0) => None,
        _ => {
            return Err(fmt_err(
                records,
                "mix of withheld and present labels".into(),
            ))
        }
    };
    let features = Matrix::new(m, f, data).map_err(|e| fmt_err(0, e.to_string()))?;
    LabeledDataset::new(features, labels, domain, k)
}
