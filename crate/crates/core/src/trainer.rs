//! Small fully connected softmax classifier with hand-written backprop,
//! trained on half labelled in-distribution inputs and half synthesized
//! ambiguity inputs per batch.
//!
//! The hidden activation is ReLU (derivative taken as 0 at 0). The
//! suppression term is the cross-entropy from the softmax output to the
//! uniform distribution, `−(1/K) Σ_k log V_k`, which is smallest (`log K`)
//! when the output is uniform.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out x in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyClassifier {
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub layers: Vec<Layer>,
}

/// A labelled input set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::TrainingData(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub ood_weight: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.05,
            seed: 0,
            ood_weight: 1.0,
            hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("batch size must be even and >= 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.ood_weight >= 0.0 && self.ood_weight.is_finite()) {
            return Err(Error::Config(format!("ood weight must be >= 0, got {}", self.ood_weight)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce_loss: f64,
    pub sup_loss: f64,
    pub id_train_acc: f64,
    pub id_test_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub ce_loss: f64,
    pub sup_loss: f64,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy to the uniform distribution: `−(1/K) Σ log max(V_k, floor)`.
pub fn suppression_loss(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Loss("empty probability vector".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Loss(format!("invalid probability {p}")));
    }
    let k = probs.len() as f64;
    let mut total = 0.0;
    for &p in probs {
        let p = p.max(PROB_FLOOR);
        if p <= 0.0 {
            return Err(Error::Loss("zero probability after clamping".into()));
        }
        total += p.ln();
    }
    Ok(-total / k)
}

fn suppression_from_log_probs(logp: &[f64]) -> f64 {
    let floor = PROB_FLOOR.ln();
    -logp.iter().map(|l| l.max(floor)).sum::<f64>() / logp.len() as f64
}

/// Activations kept for the backward pass.
struct Trace {
    /// Input followed by each hidden layer's post-activation output.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl ToyClassifier {
    /// He-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, rng: &SeededRng) -> Result<Self> {
        if input_dim == 0 || classes < 2 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid architecture {input_dim} -> {hidden:?} -> {classes}"
            )));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        let mut g = rng.generator();
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: (0..w[0] * w[1]).map(|_| g.gen_range(-bound..bound)).collect(),
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: sizes,
            activation: "relu".into(),
            layers,
        })
    }

    /// All weights and biases zero; outputs are uniform.
    pub fn zeros(layer_sizes: Vec<usize>) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Self {
            layer_sizes,
            activation: "relu".into(),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty layer sizes")
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.layer_sizes.len() >= 2
            && self.activation == "relu"
            && self.layers.len() == self.layer_sizes.len() - 1
            && self.layer_sizes.windows(2).zip(&self.layers).all(|(w, l)| {
                l.weights.len() == w[0] * w[1] && l.biases.len() == w[1]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Config("model layers do not match layer sizes".into()))
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameter `k` in the order layer by layer, weights then biases.
    pub fn param(&self, k: usize) -> f64 {
        *self.param_ref(k)
    }

    pub fn set_param(&mut self, k: usize, v: f64) {
        *self.param_mut(k) = v;
    }

    fn param_ref(&self, mut k: usize) -> &f64 {
        for l in &self.layers {
            if k < l.weights.len() {
                return &l.weights[k];
            }
            k -= l.weights.len();
            if k < l.biases.len() {
                return &l.biases[k];
            }
            k -= l.biases.len();
        }
        panic!("parameter index out of range")
    }

    fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            if k < l.weights.len() {
                return &mut l.weights[k];
            }
            k -= l.weights.len();
            if k < l.biases.len() {
                return &mut l.biases[k];
            }
            k -= l.biases.len();
        }
        panic!("parameter index out of range")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingData("non-finite input".into()));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        let mut logits = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let input = acts.last().expect("input present");
            let fan_in = input.len();
            let out: Vec<f64> = layer
                .biases
                .iter()
                .enumerate()
                .map(|(o, b)| {
                    let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                    b + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            if li == last {
                logits = out;
            } else {
                acts.push(out.into_iter().map(|v| v.max(0.0)).collect());
            }
        }
        Trace { acts, logits }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).logits)
    }

    /// Softmax class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<(usize, f64)> {
        let p = self.forward(x)?;
        let (k, v) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        Ok((k, v))
    }

    pub fn accuracy(&self, data: &LabeledSet) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::TrainingData("accuracy of an empty set".into()));
        }
        let mut hits = 0usize;
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            hits += usize::from(self.predict(x)?.0 == y);
        }
        Ok(hits as f64 / data.len() as f64)
    }

    /// Adds `d_logits`' contribution for input `x` into `grad`.
    fn backward(&self, trace: &Trace, d_logits: &[f64], grad: &mut [Layer]) {
        let mut delta = d_logits.to_vec();
        for li in (0..self.layers.len()).rev() {
            let input = &trace.acts[li];
            let fan_in = input.len();
            let g = &mut grad[li];
            for (o, d) in delta.iter().enumerate() {
                g.biases[o] += d;
                for (gw, v) in g.weights[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if li == 0 {
                break;
            }
            let w = &self.layers[li].weights;
            let mut prev = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                for (p, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wv;
                }
            }
            // ReLU gate: the stored activation is positive exactly where the
            // pre-activation was.
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Mixed objective `mean CE(id) + ood_weight · mean suppression(otis)`
    /// and, when `grad` is given, its gradient.
    fn objective(
        &self,
        id_inputs: &[&[f64]],
        id_labels: &[usize],
        otis: &[&[f64]],
        ood_weight: f64,
        mut grad: Option<&mut [Layer]>,
    ) -> Result<StepLosses> {
        let k = self.classes();
        let mut ce = 0.0;
        for (x, &y) in id_inputs.iter().zip(id_labels) {
            self.check_input(x)?;
            if y >= k {
                return Err(Error::TrainingData(format!("label {y} out of range for {k} classes")));
            }
            let t = self.trace(x);
            let logp = log_softmax(&t.logits);
            ce -= logp[y].max(PROB_FLOOR.ln());
            if let Some(g) = grad.as_deref_mut() {
                let scale = 1.0 / id_inputs.len() as f64;
                let d: Vec<f64> = logp
                    .iter()
                    .enumerate()
                    .map(|(c, l)| (l.exp() - f64::from(u8::from(c == y))) * scale)
                    .collect();
                self.backward(&t, &d, g);
            }
        }
        let mut sup = 0.0;
        for x in otis {
            self.check_input(x)?;
            let t = self.trace(x);
            let logp = log_softmax(&t.logits);
            sup += suppression_from_log_probs(&logp);
            if let Some(g) = grad.as_deref_mut() {
                let scale = ood_weight / otis.len() as f64;
                let d: Vec<f64> = logp.iter().map(|l| (l.exp() - 1.0 / k as f64) * scale).collect();
                self.backward(&t, &d, g);
            }
        }
        let ce_loss = if id_inputs.is_empty() { 0.0 } else { ce / id_inputs.len() as f64 };
        let sup_loss = if otis.is_empty() { 0.0 } else { sup / otis.len() as f64 };
        Ok(StepLosses { ce_loss, sup_loss })
    }

    fn zero_grad(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect()
    }

    /// Value of the mixed objective, without gradients.
    pub fn mixed_loss(&self, id_batch: &LabeledSet, otis_batch: &[Vec<f64>], ood_weight: f64) -> Result<f64> {
        let (ids, otis) = borrow_rows(id_batch, otis_batch);
        let l = self.objective(&ids, &id_batch.labels, &otis, ood_weight, None)?;
        Ok(l.ce_loss + ood_weight * l.sup_loss)
    }

    /// Analytic gradient of [`Self::mixed_loss`], flattened in parameter order.
    pub fn mixed_gradient(&self, id_batch: &LabeledSet, otis_batch: &[Vec<f64>], ood_weight: f64) -> Result<Vec<f64>> {
        let (ids, otis) = borrow_rows(id_batch, otis_batch);
        let mut grad = self.zero_grad();
        self.objective(&ids, &id_batch.labels, &otis, ood_weight, Some(&mut grad))?;
        Ok(grad
            .into_iter()
            .flat_map(|l| l.weights.into_iter().chain(l.biases))
            .collect())
    }
}

fn borrow_rows<'a>(id_batch: &'a LabeledSet, otis: &'a [Vec<f64>]) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    (
        id_batch.inputs.iter().map(Vec::as_slice).collect(),
        otis.iter().map(Vec::as_slice).collect(),
    )
}

fn sgd_step(
    model: &mut ToyClassifier,
    ids: &[&[f64]],
    labels: &[usize],
    otis: &[&[f64]],
    config: &TrainConfig,
) -> Result<StepLosses> {
    let mut grad = model.zero_grad();
    let losses = model.objective(ids, labels, otis, config.ood_weight, Some(&mut grad))?;
    if !(losses.ce_loss.is_finite() && losses.sup_loss.is_finite()) {
        return Err(Error::TrainingData(format!(
            "non-finite loss (ce {}, sup {})",
            losses.ce_loss, losses.sup_loss
        )));
    }
    for (layer, g) in model.layers.iter_mut().zip(&grad) {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= config.learning_rate * gw;
        }
        for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= config.learning_rate * gb;
        }
    }
    Ok(losses)
}

/// One SGD step on `mean CE(id_batch) + ood_weight · mean suppression(otis_batch)`.
pub fn mixed_batch_step(
    model: &mut ToyClassifier,
    id_batch: &LabeledSet,
    otis_batch: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<StepLosses> {
    config.validate()?;
    if id_batch.is_empty() {
        return Err(Error::TrainingData("empty ID batch".into()));
    }
    let (ids, otis) = borrow_rows(id_batch, otis_batch);
    sgd_step(model, &ids, &id_batch.labels, &otis, config)
}

/// Trains for `config.epochs` epochs of shuffled batches, each half ID and
/// half OTIS (`batch_size / 2` of each; the OTIS pool is cycled). An empty
/// OTIS pool gives plain cross-entropy training on `batch_size / 2` ID
/// inputs per step.
pub fn train(
    model: &mut ToyClassifier,
    id_data: &LabeledSet,
    otis_data: &[Vec<f64>],
    test_data: Option<&LabeledSet>,
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    model.validate()?;
    if id_data.is_empty() {
        return Err(Error::TrainingData("empty ID training set".into()));
    }
    let root = SeededRng::new(config.seed).derive_label("train");
    let mut id_rng = root.derive_label("id-order").generator();
    let mut otis_rng = root.derive_label("otis-order").generator();
    let half = config.batch_size / 2;
    let mut id_order: Vec<usize> = (0..id_data.len()).collect();
    let mut otis_order: Vec<usize> = (0..otis_data.len()).collect();
    let mut otis_pos = otis_order.len();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        id_order.shuffle(&mut id_rng);
        let (mut ce_sum, mut sup_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in id_order.chunks(half) {
            let ids: Vec<&[f64]> = chunk.iter().map(|&k| id_data.inputs[k].as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&k| id_data.labels[k]).collect();
            let mut otis = Vec::with_capacity(chunk.len());
            if !otis_order.is_empty() {
                while otis.len() < chunk.len() {
                    if otis_pos == otis_order.len() {
                        otis_order.shuffle(&mut otis_rng);
                        otis_pos = 0;
                    }
                    otis.push(otis_data[otis_order[otis_pos]].as_slice());
                    otis_pos += 1;
                }
            }
            let l = sgd_step(model, &ids, &labels, &otis, config)
                .map_err(|e| Error::TrainingData(format!("epoch {epoch} batch {batches}: {e}")))?;
            ce_sum += l.ce_loss;
            sup_sum += l.sup_loss;
            batches += 1;
        }
        history.push(EpochStats {
            epoch,
            ce_loss: ce_sum / batches as f64,
            sup_loss: sup_sum / batches as f64,
            id_train_acc: model.accuracy(id_data)?,
            id_test_acc: test_data.map(|t| model.accuracy(t)).transpose()?,
        });
    }
    Ok(history)
}

/// `epoch,ce_loss,sup_loss,id_train_acc,id_test_acc` with an empty last
/// column when no test set was given.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,ce_loss,sup_loss,id_train_acc,id_test_acc\n");
    for h in history {
        let test = h.id_test_acc.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, h.ce_loss, h.sup_loss, h.id_train_acc, test
        ));
    }
    s
}
