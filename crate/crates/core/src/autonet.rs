//! A small fully connected network with exact, layer-structured reverse mode.
//!
//! Every layer stores a unified weight matrix of shape `(inputs + 1) × outputs`:
//! the last row is the bias, and a constant `1` is appended to each layer input.
//! Hidden layers use the configured activation, the final layer emits raw logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative; the ReLU subgradient at 0 is 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Ordered layer weights with absorbed bias rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layers: Vec<Matrix>,
}

impl NetworkParams {
    /// Validates that consecutive layers chain: `layer[l].cols + 1 == layer[l+1].rows`.
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dim("network needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].cols() + 1 != pair[1].rows() {
                return Err(Error::dim(format!(
                    "layer {l} outputs {} units but layer {} expects {} inputs (+bias)",
                    pair[0].cols(),
                    l + 1,
                    pair[1].rows()
                )));
            }
        }
        if let Some(l) = layers.iter().position(|m| !m.is_finite()) {
            return Err(Error::dim(format!("layer {l} has non-finite weights")));
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights with zero bias rows. `widths` lists every layer width
    /// including input and output, e.g. `[16, 32, 6]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::dim(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Matrix::from_fn(fan_in + 1, fan_out, |i, _| {
                    if i == fan_in {
                        0.0
                    } else {
                        rng.random_range(-bound..bound)
                    }
                })
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn last(&self) -> &Matrix {
        self.layers.last().expect("non-empty")
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].rows() - 1
    }

    pub fn output_width(&self) -> usize {
        self.last().cols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    /// Forward pass; hidden layers use `activation`, the final layer is linear.
    pub fn forward(&self, x: &Matrix, activation: Activation) -> Result<ForwardTrace> {
        forward(self, x, activation)
    }

    /// Output only, no trace kept.
    pub fn predict(&self, x: &Matrix, activation: Activation) -> Result<Matrix> {
        Ok(forward(self, x, activation)?.output)
    }
}

/// Per-layer gradients, shaped exactly like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Matrix>,
}

impl Gradients {
    pub fn axpy(&mut self, s: f64, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.axpy(s, b);
        }
    }

    pub fn scale(&self, s: f64) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|m| m.scale(s)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.max_abs()))
    }

    pub fn sub(&self, other: &Gradients) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.sub(b).expect("gradient shapes match"))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    /// `‖self − reference‖∞ / max(1, ‖reference‖∞)`.
    pub fn relative_error(&self, reference: &Gradients) -> f64 {
        self.sub(reference).max_abs() / reference.max_abs().max(1.0)
    }
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer inputs with the appended bias coordinate, one per layer.
    pub inputs: Vec<Matrix>,
    /// Pre-activations, one per layer.
    pub pre_activations: Vec<Matrix>,
    pub output: Matrix,
    pub activation: Activation,
    weights: Vec<Matrix>,
}

pub fn forward(params: &NetworkParams, x: &Matrix, activation: Activation) -> Result<ForwardTrace> {
    if x.cols() != params.input_width() {
        return Err(Error::dim(format!(
            "network expects {} features, batch has {}",
            params.input_width(),
            x.cols()
        )));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut a = x.clone();
    for (l, w) in params.layers.iter().enumerate() {
        let a_aug = a.append_const_col(1.0);
        let z = matmul(&a_aug, w)?;
        a = if l + 1 < n_layers {
            z.map(|v| activation.apply(v))
        } else {
            z.clone()
        };
        inputs.push(a_aug);
        pre.push(z);
    }
    Ok(ForwardTrace {
        inputs,
        pre_activations: pre,
        output: a,
        activation,
        weights: params.layers.clone(),
    })
}

/// Reverse-mode pass. Returns parameter gradients and the gradient with respect to
/// the network input.
pub fn backward(trace: &ForwardTrace, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
    if upstream.shape() != trace.output.shape() {
        return Err(Error::dim(format!(
            "upstream {:?} does not match output {:?}",
            upstream.shape(),
            trace.output.shape()
        )));
    }
    let n_layers = trace.weights.len();
    let mut grads = vec![Matrix::zeros(1, 1); n_layers];
    let mut delta = upstream.clone();
    for l in (0..n_layers).rev() {
        if l + 1 < n_layers {
            let z = &trace.pre_activations[l];
            for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *d *= trace.activation.derivative(zv);
            }
        }
        grads[l] = matmul_tn(&trace.inputs[l], &delta)?;
        let w = &trace.weights[l];
        let back = matmul_nt(&delta, w)?;
        delta = back.take_cols(w.rows() - 1);
    }
    Ok((Gradients { layers: grads }, delta))
}

/// Batch-mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_ce_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::dim(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Batch("empty batch".into()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Label { label, classes: k });
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[(i, y)] -= 1.0;
    }
    Ok((loss * inv_n, grad.scale(inv_n)))
}

/// Row-wise max-shifted softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Stable binary cross-entropy on a logit: `log(1+e^{-|z|}) + max(z,0) − z·label`.
/// Returns the loss and its derivative with respect to `z`.
pub fn sigmoid_bce_loss(logit: f64, domain_label: f64) -> (f64, f64) {
    let loss = (-logit.abs()).exp().ln_1p() + logit.max(0.0) - logit * domain_label;
    (loss, sigmoid(logit) - domain_label)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Backward rule of the gradient reversal layer (its forward pass is the identity).
pub fn grl_backward(upstream: &Matrix, lambda_adv: f64) -> Matrix {
    upstream.scale(-lambda_adv)
}

/// Central finite differences of `loss_fn` with respect to every scalar parameter.
pub fn finite_diff_grad(
    mut loss_fn: impl FnMut(&NetworkParams) -> f64,
    params: &NetworkParams,
    h: f64,
) -> Gradients {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    for l in 0..params.layers.len() {
        for idx in 0..params.layers[l].as_slice().len() {
            let orig = params.layers[l].as_slice()[idx];
            probe.layers[l].as_mut_slice()[idx] = orig + h;
            let plus = loss_fn(&probe);
            probe.layers[l].as_mut_slice()[idx] = orig - h;
            let minus = loss_fn(&probe);
            probe.layers[l].as_mut_slice()[idx] = orig;
            grads.layers[l].as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Scalar-by-scalar evaluation of the same network, no matrix kernels involved.
    fn scalar_forward(params: &NetworkParams, x: &Matrix) -> Vec<Vec<f64>> {
        let n = params.layers().len();
        (0..x.rows())
            .map(|s| {
                let mut a: Vec<f64> = x.row(s).to_vec();
                for (l, w) in params.layers().iter().enumerate() {
                    let mut next = Vec::with_capacity(w.cols());
                    for j in 0..w.cols() {
                        let mut z = w[(w.rows() - 1, j)];
                        for (i, ai) in a.iter().enumerate() {
                            z += ai * w[(i, j)];
                        }
                        next.push(if l + 1 < n { z.max(0.0) } else { z });
                    }
                    a = next;
                }
                a
            })
            .collect()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut w = Matrix::zeros(4, 3);
        for i in 0..3 {
            w[(i, i)] = 1.0;
        }
        let net = NetworkParams::new(vec![w]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, -1.0]]).unwrap();
        assert_eq!(net.predict(&x, Activation::Relu).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = NetworkParams::new(vec![Matrix::zeros(4, 5), Matrix::zeros(6, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(7, 3, &mut rng);
        assert_eq!(net.predict(&x, Activation::Relu).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = NetworkParams::init(&[4, 6, 3], &mut rng).unwrap();
        let mut net = net;
        // non-zero biases exercise the bias row
        for l in net.layers_mut() {
            let r = l.rows() - 1;
            for j in 0..l.cols() {
                l[(r, j)] = rng.random_range(-0.5..0.5);
            }
        }
        let x = random(5, 4, &mut rng);
        let got = net.predict(&x, Activation::Relu).unwrap();
        let want = scalar_forward(&net, &x);
        for (i, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                assert!((got[(i, j)] - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_replayable() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = NetworkParams::init(&[3, 5, 2], &mut rng).unwrap();
        let x = random(4, 3, &mut rng);
        let a = net.forward(&x, Activation::Relu).unwrap();
        let b = net.forward(&x, Activation::Relu).unwrap();
        assert_eq!(a.output.as_slice(), b.output.as_slice());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = NetworkParams::init(&[3, 2], &mut rng).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(2, 4), Activation::Relu),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn params_must_chain() {
        assert!(NetworkParams::new(vec![Matrix::zeros(3, 4), Matrix::zeros(4, 2)]).is_err());
        assert!(NetworkParams::new(vec![Matrix::zeros(3, 4), Matrix::zeros(5, 2)]).is_ok());
    }

    #[test]
    fn ce_loss_examples() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (l, _) = softmax_ce_loss(&logits, &[0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let logits = Matrix::from_rows(&[vec![1000.0, -1000.0]]).unwrap();
        let (l, g) = softmax_ce_loss(&logits, &[0]).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.is_finite());

        assert!(matches!(
            softmax_ce_loss(&logits, &[2]),
            Err(Error::Label {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let logits = random(4, 5, &mut rng).scale(3.0);
        let labels = [0, 3, 4, 1];
        let (_, g) = softmax_ce_loss(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            for j in 0..5 {
                let mut p = logits.clone();
                p[(i, j)] += h;
                let mut m = logits.clone();
                m[(i, j)] -= h;
                let fd = (softmax_ce_loss(&p, &labels).unwrap().0
                    - softmax_ce_loss(&m, &labels).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bce_examples() {
        let (l, _) = sigmoid_bce_loss(0.0, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, d) = sigmoid_bce_loss(-1000.0, 0.0);
        assert!(l.abs() < 1e-300 && d.abs() < 1e-300);
        let (l, _) = sigmoid_bce_loss(1000.0, 0.0);
        assert!((l - 1000.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let z: f64 = rng.random_range(-6.0..6.0);
            for label in [0.0, 1.0] {
                let h = 1e-5;
                let fd = (sigmoid_bce_loss(z + h, label).0 - sigmoid_bce_loss(z - h, label).0)
                    / (2.0 * h);
                assert!((fd - sigmoid_bce_loss(z, label).1).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn grl_examples() {
        let g = Matrix::from_rows(&[vec![2.0, -4.0]]).unwrap();
        assert_eq!(grl_backward(&g, 1.0), g.scale(-1.0));
        assert_eq!(grl_backward(&g, 0.0).max_abs(), 0.0);
        assert_eq!(
            grl_backward(&g, 0.5),
            Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap()
        );
    }

    #[test]
    fn backward_linear_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let net = NetworkParams::init(&[3, 2], &mut rng).unwrap();
        let x = random(4, 3, &mut rng);
        let trace = net.forward(&x, Activation::Relu).unwrap();

        let (g, dx) = backward(&trace, &Matrix::zeros(4, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(dx.max_abs(), 0.0);

        let u = random(4, 2, &mut rng);
        let (g, _) = backward(&trace, &u).unwrap();
        let want = matmul(&x.append_const_col(1.0).transpose(), &u).unwrap();
        assert!(g.layers[0].sub(&want).unwrap().max_abs() < 1e-14);

        assert!(backward(&trace, &Matrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let net = NetworkParams::init(&[4, 7, 3], &mut rng).unwrap();
            let x = random(6, 4, &mut rng);
            let u = random(6, 3, &mut rng);
            // loss = Σ u ⊙ output, so upstream is u
            let loss = |p: &NetworkParams| -> f64 {
                let out = p.predict(&x, Activation::Relu).unwrap();
                out.as_slice()
                    .iter()
                    .zip(u.as_slice())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let trace = net.forward(&x, Activation::Relu).unwrap();
            let (g, dx) = backward(&trace, &u).unwrap();
            let fd = finite_diff_grad(loss, &net, 1e-5);
            assert!(g.relative_error(&fd) <= 1e-5, "seed {seed}");

            // input gradient via perturbing x
            let h = 1e-5;
            for i in 0..6 {
                for j in 0..4 {
                    let mut xp = x.clone();
                    xp[(i, j)] += h;
                    let mut xm = x.clone();
                    xm[(i, j)] -= h;
                    let f = |xx: &Matrix| -> f64 {
                        let out = net.predict(xx, Activation::Relu).unwrap();
                        out.as_slice()
                            .iter()
                            .zip(u.as_slice())
                            .map(|(a, b)| a * b)
                            .sum()
                    };
                    let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                    assert!((fd - dx[(i, j)]).abs() <= 1e-6 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn finite_diff_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = NetworkParams::init(&[2, 3, 2], &mut rng).unwrap();
        let g = finite_diff_grad(|_| 4.2, &net, 1e-5);
        assert_eq!(g.max_abs(), 0.0);

        let sq = |p: &NetworkParams| -> f64 {
            p.layers()
                .iter()
                .flat_map(|m| m.as_slice())
                .map(|v| v * v)
                .sum()
        };
        let g = finite_diff_grad(sq, &net, 1e-5);
        let want = Gradients {
            layers: net.layers().iter().map(|m| m.scale(2.0)).collect(),
        };
        assert!(g.sub(&want).max_abs() <= 1e-9);
    }
}
