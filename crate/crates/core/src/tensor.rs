//! Dense numerics for a one-hidden-layer rectifier network with a softmax head.
//!
//! Parameters live in one flat buffer laid out as
//! `[layer1_weights (din×h) | layer1_bias (h) | layer2_weights (h×C) | layer2_bias (C)]`,
//! all row-major. The trailing `h·C + C` entries form the last layer, which is the
//! gradient surface the weighting step works with.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// One labeled example: features, class id and an optional sensitive attribute id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub sensitive: Option<usize>,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize, sensitive: Option<usize>) -> Self {
        Self {
            features,
            label,
            sensitive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        let len = Self::param_count_for(input_dim, hidden_dim, num_classes);
        Self {
            input_dim,
            hidden_dim,
            num_classes,
            params: vec![0.0; len],
        }
    }

    /// He-normal weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let mut model = Self::zeros(input_dim, hidden_dim, num_classes);
        let n1 = Normal::new(0.0, (2.0 / input_dim.max(1) as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (2.0 / hidden_dim.max(1) as f64).sqrt()).unwrap();
        for w in model.layer1_weights_mut() {
            *w = n1.sample(rng);
        }
        for w in model.layer2_weights_mut() {
            *w = n2.sample(rng);
        }
        model
    }

    pub fn from_params(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::param_count_for(input_dim, hidden_dim, num_classes);
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            num_classes,
            params,
        })
    }

    fn param_count_for(din: usize, h: usize, c: usize) -> usize {
        din * h + h + h * c + c
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offset of the first last-layer parameter in the flat buffer.
    pub fn last_layer_offset(&self) -> usize {
        self.input_dim * self.hidden_dim + self.hidden_dim
    }

    pub fn last_layer_len(&self) -> usize {
        self.hidden_dim * self.num_classes + self.num_classes
    }

    pub fn layer1_weights(&self) -> &[f64] {
        &self.params[..self.input_dim * self.hidden_dim]
    }

    pub fn layer1_weights_mut(&mut self) -> &mut [f64] {
        let end = self.input_dim * self.hidden_dim;
        &mut self.params[..end]
    }

    pub fn layer1_bias(&self) -> &[f64] {
        let start = self.input_dim * self.hidden_dim;
        &self.params[start..start + self.hidden_dim]
    }

    pub fn layer1_bias_mut(&mut self) -> &mut [f64] {
        let start = self.input_dim * self.hidden_dim;
        &mut self.params[start..start + self.hidden_dim]
    }

    pub fn layer2_weights(&self) -> &[f64] {
        let start = self.last_layer_offset();
        &self.params[start..start + self.hidden_dim * self.num_classes]
    }

    pub fn layer2_weights_mut(&mut self) -> &mut [f64] {
        let start = self.last_layer_offset();
        let len = self.hidden_dim * self.num_classes;
        &mut self.params[start..start + len]
    }

    pub fn layer2_bias(&self) -> &[f64] {
        let start = self.last_layer_offset() + self.hidden_dim * self.num_classes;
        &self.params[start..]
    }

    pub fn layer2_bias_mut(&mut self) -> &mut [f64] {
        let start = self.last_layer_offset() + self.hidden_dim * self.num_classes;
        &mut self.params[start..]
    }

    /// The last-layer parameters (`layer2_weights ∥ layer2_bias`).
    pub fn last_layer(&self) -> &[f64] {
        &self.params[self.last_layer_offset()..]
    }

    pub fn last_layer_mut(&mut self) -> &mut [f64] {
        let start = self.last_layer_offset();
        &mut self.params[start..]
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "feature length {} does not match input dimension {}",
                features.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Pre-activation and rectified hidden units.
    fn hidden(&self, features: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden_dim;
        let w1 = self.layer1_weights();
        let mut pre = self.layer1_bias().to_vec();
        for (i, &x) in features.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w1[i * h..(i + 1) * h];
            for (p, &w) in pre.iter_mut().zip(row) {
                *p += x * w;
            }
        }
        let act = pre.iter().map(|&v| v.max(0.0)).collect();
        (pre, act)
    }

    fn logits_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        let c = self.num_classes;
        let w2 = self.layer2_weights();
        let mut logits = self.layer2_bias().to_vec();
        for (j, &a) in hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &w2[j * c..(j + 1) * c];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += a * w;
            }
        }
        logits
    }

    /// Rectified hidden representation of one input; the fixed features seen by the last layer.
    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        Ok(self.hidden(features).1)
    }

    pub fn forward_one(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let (_, act) = self.hidden(features);
        Ok(softmax(&self.logits_from_hidden(&act)))
    }

    /// Class probabilities for every row of `batch`.
    pub fn forward<F: AsRef<[f64]>>(&self, batch: &[F]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|x| self.forward_one(x.as_ref())).collect()
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let probs = self.forward_one(features)?;
        Ok(argmax(&probs))
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        self.check_input(&sample.features)?;
        if sample.label >= self.num_classes {
            return Err(Error::Dimension(format!(
                "label {} out of range for {} classes",
                sample.label, self.num_classes
            )));
        }
        Ok(())
    }

    /// Per-sample gradient of the cross-entropy w.r.t. the last layer only.
    pub fn sample_last_layer_grad(&self, sample: &Sample) -> Result<GradientVector> {
        self.check_sample(sample)?;
        let c = self.num_classes;
        let (_, act) = self.hidden(&sample.features);
        let mut delta = softmax(&self.logits_from_hidden(&act));
        delta[sample.label] -= 1.0;
        let mut values = Vec::with_capacity(self.last_layer_len());
        for &a in &act {
            values.extend(delta.iter().map(|&d| a * d));
        }
        debug_assert_eq!(values.len(), act.len() * c);
        values.extend_from_slice(&delta);
        Ok(GradientVector::raw(values))
    }

    /// Accumulates `scale · ∇θ ℓ(sample)` over all parameters into `out`.
    fn accumulate_full_grad(&self, sample: &Sample, scale: f64, out: &mut [f64]) {
        let (din, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        let (pre, act) = self.hidden(&sample.features);
        let mut delta = softmax(&self.logits_from_hidden(&act));
        delta[sample.label] -= 1.0;

        let off2 = self.last_layer_offset();
        let w2 = self.layer2_weights();
        let mut dhidden = vec![0.0; h];
        for j in 0..h {
            let row = &w2[j * c..(j + 1) * c];
            let mut back = 0.0;
            for k in 0..c {
                out[off2 + j * c + k] += scale * act[j] * delta[k];
                back += row[k] * delta[k];
            }
            dhidden[j] = if pre[j] > 0.0 { back } else { 0.0 };
        }
        let offb2 = off2 + h * c;
        for k in 0..c {
            out[offb2 + k] += scale * delta[k];
        }
        for (i, &x) in sample.features.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &mut out[i * h..(i + 1) * h];
            for (g, &d) in row.iter_mut().zip(&dhidden) {
                *g += scale * x * d;
            }
        }
        let offb1 = din * h;
        for j in 0..h {
            out[offb1 + j] += scale * dhidden[j];
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Mean cross-entropy together with the number of label probabilities that hit [`LOG_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    pub clamped: usize,
}

/// `−mean(log p[label])` in nats. Label probabilities below [`LOG_FLOOR`] are clamped and counted.
pub fn cross_entropy<P: AsRef<[f64]>>(probs: &[P], labels: &[usize]) -> Result<CrossEntropy> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} probability rows but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Empty("cross-entropy of an empty batch".into()));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (row, &label) in probs.iter().zip(labels) {
        let row = row.as_ref();
        let p = *row.get(label).ok_or_else(|| {
            Error::Dimension(format!(
                "label {label} out of range for {} classes",
                row.len()
            ))
        })?;
        let p = if p < LOG_FLOOR {
            clamped += 1;
            LOG_FLOOR
        } else {
            p
        };
        total -= p.ln();
    }
    if clamped > 0 {
        log::debug!("cross-entropy: clamped {clamped} label probabilities to {LOG_FLOOR:e}");
    }
    Ok(CrossEntropy {
        loss: total / probs.len() as f64,
        clamped,
    })
}

/// Mean cross-entropy of `model` on `samples`.
pub fn mean_loss(model: &MlpModel, samples: &[Sample]) -> Result<f64> {
    let probs = model.forward(&samples.iter().map(|s| &s.features[..]).collect::<Vec<_>>())?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(cross_entropy(&probs, &labels)?.loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    Raw,
    Unit,
}

/// Flat gradient over the last-layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub norm_kind: NormKind,
    /// Set when unit normalization was requested on an all-zero vector.
    pub degenerate: bool,
}

impl GradientVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            norm_kind: NormKind::Raw,
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// L2-normalized copy. A zero vector stays zero and is flagged as degenerate.
    pub fn to_unit(&self) -> Self {
        let norm = self.norm();
        if norm == 0.0 {
            return Self {
                values: self.values.clone(),
                norm_kind: NormKind::Unit,
                degenerate: true,
            };
        }
        Self {
            values: self.values.iter().map(|v| v / norm).collect(),
            norm_kind: NormKind::Unit,
            degenerate: false,
        }
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

/// Gradient of the mean cross-entropy over `batch` w.r.t. the last layer, earlier layers fixed.
pub fn last_layer_grad(model: &MlpModel, batch: &[Sample]) -> Result<GradientVector> {
    if batch.is_empty() {
        return Err(Error::Empty("last-layer gradient of an empty batch".into()));
    }
    let mut acc = vec![0.0; model.last_layer_len()];
    for sample in batch {
        let g = model.sample_last_layer_grad(sample)?;
        for (a, v) in acc.iter_mut().zip(&g.values) {
            *a += v;
        }
    }
    let n = batch.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(GradientVector::raw(acc))
}

/// `(1/denom) Σ weights[i] · ∇θ ℓ(samples[i])` over every model parameter.
pub fn weighted_full_grad(
    model: &MlpModel,
    samples: &[&Sample],
    weights: &[f64],
    denom: f64,
) -> Result<Vec<f64>> {
    if samples.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} samples but {} weights",
            samples.len(),
            weights.len()
        )));
    }
    if samples.is_empty() || denom <= 0.0 {
        return Err(Error::Empty(
            "weighted gradient needs samples and a positive normalizer".into(),
        ));
    }
    let mut out = vec![0.0; model.param_count()];
    for (sample, &w) in samples.iter().zip(weights) {
        model.check_sample(sample)?;
        if w != 0.0 {
            model.accumulate_full_grad(sample, w / denom, &mut out);
        }
    }
    Ok(out)
}

/// Unweighted mean full-model gradient.
pub fn mean_full_grad(model: &MlpModel, samples: &[&Sample]) -> Result<Vec<f64>> {
    let ones = vec![1.0; samples.len()];
    weighted_full_grad(model, samples, &ones, samples.len() as f64)
}

/// Heavy-ball SGD: `v ← μv + g; θ ← θ − ηv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, len: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn reset(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() || params.len() != self.velocity.len() {
            return Err(Error::Dimension(format!(
                "params {}, grad {}, velocity {}",
                params.len(),
                grad.len(),
                self.velocity.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} in SGD step",
                grad[i]
            )));
        }
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, din: usize, c: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let f = (0..din).map(|_| rng.random_range(-2.0..2.0)).collect();
                Sample::new(f, rng.random_range(0..c), None)
            })
            .collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = MlpModel::zeros(3, 4, 5);
        let probs = model.forward(&[vec![0.3, -1.0, 7.0]]).unwrap();
        for p in &probs[0] {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_class_net_is_certain() {
        let model = MlpModel::from_params(1, 1, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let probs = model.forward(&[vec![1.0]]).unwrap();
        assert_eq!(probs[0], vec![1.0]);
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = MlpModel::random(2, 4, 3, &mut rng);
        let ours = model.forward_one(&[1.0, 0.0]).unwrap();
        let reference = oracles::reference_probs(&model, &[1.0, 0.0]);
        for (a, b) in ours.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((ours.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(ours.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = MlpModel::zeros(2, 3, 2);
        assert!(matches!(
            model.forward(&[vec![1.0]]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy(&[vec![1.0, 0.0, 0.0]], &[0]).unwrap();
        assert!(ce.loss.abs() < 1e-12);

        let ce = cross_entropy(&[vec![0.25; 4]], &[3]).unwrap();
        assert!((ce.loss - 4f64.ln()).abs() < 1e-12);

        let ce = cross_entropy(&[vec![0.7, 0.3], vec![0.2, 0.8]], &[0, 1]).unwrap();
        assert!((ce.loss - 0.289_909_9).abs() < 1e-6);
        assert!((ce.loss - (-(0.7f64.ln()) - 0.8f64.ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let ce = cross_entropy(&[vec![1.0, 0.0]], &[1]).unwrap();
        assert_eq!(ce.clamped, 1);
        assert!((ce.loss - (-(LOG_FLOOR.ln()))).abs() < 1e-9);
    }

    #[test]
    fn confident_correct_predictions_have_tiny_gradient() {
        let mut model = MlpModel::zeros(2, 3, 3);
        model.layer2_bias_mut()[1] = 50.0;
        let batch = vec![
            Sample::new(vec![0.5, 1.0], 1, None),
            Sample::new(vec![-0.5, 2.0], 1, None),
        ];
        let g = last_layer_grad(&model, &batch).unwrap();
        assert!(g.values.iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn last_layer_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = MlpModel::random(3, 5, 4, &mut rng);
        let batch = random_batch(&mut rng, 6, 3, 4);
        let analytic = last_layer_grad(&model, &batch).unwrap();
        let numeric = oracles::finite_diff_grad(&model, &batch, 1e-4).unwrap();
        let err = oracles::relative_error(&analytic.values, &numeric.values);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_of_mean_is_mean_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = MlpModel::random(2, 4, 3, &mut rng);
        let batch = random_batch(&mut rng, 2, 2, 3);
        let both = last_layer_grad(&model, &batch).unwrap();
        let g1 = last_layer_grad(&model, &batch[..1]).unwrap();
        let g2 = last_layer_grad(&model, &batch[1..]).unwrap();
        for ((b, x), y) in both.values.iter().zip(&g1.values).zip(&g2.values) {
            assert!((b - (x + y) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn full_grad_tail_is_last_layer_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::random(3, 4, 3, &mut rng);
        let batch = random_batch(&mut rng, 5, 3, 3);
        let refs: Vec<&Sample> = batch.iter().collect();
        let full = mean_full_grad(&model, &refs).unwrap();
        let last = last_layer_grad(&model, &batch).unwrap();
        let tail = &full[model.last_layer_offset()..];
        for (a, b) in tail.iter().zip(&last.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn full_grad_matches_finite_differences_on_all_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = MlpModel::random(3, 4, 3, &mut rng);
        let batch = random_batch(&mut rng, 4, 3, 3);
        let refs: Vec<&Sample> = batch.iter().collect();
        let analytic = mean_full_grad(&model, &refs).unwrap();
        let numeric = oracles::finite_diff_full_grad(&model, &batch, 1e-5);
        let err = oracles::relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn sgd_examples() {
        let mut opt = SgdMomentum::new(0.1, 0.9, 1);
        let mut theta = [3.0];
        opt.step(&mut theta, &[0.0]).unwrap();
        assert_eq!(theta, [3.0]);

        let mut opt = SgdMomentum::new(0.1, 0.9, 1);
        let mut theta = [0.0];
        opt.step(&mut theta, &[1.0]).unwrap();
        assert!((theta[0] + 0.1).abs() < 1e-15);
        opt.step(&mut theta, &[1.0]).unwrap();
        assert!((theta[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut opt = SgdMomentum::new(0.1, 0.9, 2);
        let mut theta = [0.0, 0.0];
        let err = opt.step(&mut theta, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(theta, [0.0, 0.0]);
    }

    #[test]
    fn unit_gradient_of_zero_is_flagged() {
        let g = GradientVector::raw(vec![0.0; 4]).to_unit();
        assert!(g.degenerate);
        assert_eq!(g.norm(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unit_gradients_have_unit_norm(values in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let g = GradientVector::raw(values).to_unit();
            if !g.degenerate {
                prop_assert!((g.norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn mean_loss_is_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = MlpModel::random(3, 6, 4, &mut rng);
            let batch = random_batch(&mut rng, 9, 3, 4);
            let mut shuffled = batch.clone();
            shuffled.reverse();
            shuffled.swap(0, 4);
            let a = mean_loss(&model, &batch).unwrap();
            let b = mean_loss(&model, &shuffled).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn forward_rows_are_distributions(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = MlpModel::random(4, 5, 6, &mut rng);
            let batch = random_batch(&mut rng, 5, 4, 6);
            for row in model.forward(&batch.iter().map(|s| s.features.clone()).collect::<Vec<_>>()).unwrap() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }
}
