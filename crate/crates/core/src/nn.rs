//! Small fully connected networks with hand-written backpropagation and an
//! Adam optimizer. Enough for the two forecasting heads and nothing more.

use crate::error::{Error, Result};
use crate::forecast::weibull::censored_weibull_nll_grad;
use crate::rng::SimRng;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Lower bound added to both Weibull parameters.
pub const PARAM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Head {
    /// Two softplus outputs: scale `λ = time_scale·(softplus + ε)` and shape
    /// `ρ = softplus + ε`.
    Survival { time_scale: f64 },
    /// One sigmoid output.
    Classifier,
    /// Identity outputs.
    Linear,
}

impl Head {
    fn outputs(&self, linear_outputs: usize) -> usize {
        match self {
            Head::Survival { .. } => 2,
            Head::Classifier => 1,
            Head::Linear => linear_outputs,
        }
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-feature standardization stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Column mean and population std; near-constant columns keep std 1.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let std = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, m)| {
                let v = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (mut col, (m, s)) in out.axis_iter_mut(Axis(1)).zip(self.mean.iter().zip(&self.std)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

/// Settings a forecaster was trained under, carried in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// `T_H`.
    pub history_len: usize,
    /// `T_F`; unused by the classifier.
    pub window: usize,
    pub alpha: f64,
    /// `T` of the training episodes.
    pub horizon: usize,
    /// Whether the last feature carries `t / T` or is zeroed.
    pub time_feature: bool,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta { history_len: 10, window: 30, alpha: 0.13, horizon: 255, time_feature: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub head: Head,
    pub normalizer: Normalizer,
    pub meta: ModelMeta,
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
    }
}

impl MlpModel {
    /// He-initialized network `input → hidden… → head`.
    pub fn new(input: usize, hidden: &[usize], head: Head, linear_outputs: usize, seed: u64) -> Self {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(head.outputs(linear_outputs));
        let layers = sizes
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
                Dense {
                    weight: Array2::from_shape_fn((w[1], w[0]), |_| normal.sample(&mut rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        MlpModel { layers, head, normalizer: Normalizer::identity(input), meta: ModelMeta::default() }
    }

    /// All-zero parameters.
    pub fn zeros(input: usize, hidden: &[usize], head: Head, linear_outputs: usize) -> Self {
        let mut m = MlpModel::new(input, hidden, head, linear_outputs, 0);
        for l in &mut m.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        Gradient { layers: self.layers.clone() }.flatten()
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = it.next().expect("parameter count"));
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got });
        }
        Ok(())
    }

    /// Pre-activation head outputs plus every layer's input, for backprop.
    fn forward_raw(&self, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut a = self.normalizer.apply(x);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(a);
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        (a, inputs)
    }

    fn activate(&self, z: ArrayView1<f64>) -> Vec<f64> {
        match self.head {
            Head::Survival { time_scale } => {
                vec![time_scale * (softplus(z[0]) + PARAM_FLOOR), softplus(z[1]) + PARAM_FLOOR]
            }
            Head::Classifier => vec![sigmoid(z[0])],
            Head::Linear => z.to_vec(),
        }
    }

    /// Head outputs for one feature vector: `[λ, ρ]`, `[p]` or the linear
    /// outputs.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features.len())?;
        let x = ArrayView2::from_shape((1, features.len()), features).expect("row vector");
        let (z, _) = self.forward_raw(x);
        Ok(self.activate(z.row(0)))
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Vec<Vec<f64>>> {
        self.check_dim(x.ncols())?;
        let (z, _) = self.forward_raw(x);
        Ok(z.axis_iter(Axis(0)).map(|r| self.activate(r)).collect())
    }

    /// Mean loss over a batch.
    pub fn loss(&self, batch: &Batch<'_>) -> Result<f64> {
        self.check_batch(batch)?;
        let (z, _) = self.forward_raw(batch.features);
        let mut total = 0.0;
        for (i, row) in z.axis_iter(Axis(0)).enumerate() {
            total += sample_loss(&self.head, row, &batch.targets, i)?.0;
        }
        Ok(total / batch.len() as f64)
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        self.check_dim(batch.features.ncols())?;
        if batch.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let ok = matches!(
            (&self.head, &batch.targets),
            (Head::Survival { .. }, Targets::Survival { .. })
                | (Head::Classifier, Targets::Binary(_))
                | (Head::Linear, Targets::Regression(_))
        );
        if !ok {
            return Err(Error::InvalidArgument(format!("targets do not match the {:?} head", self.head)));
        }
        Ok(())
    }

    /// Mean loss and its analytic gradient with respect to every parameter.
    pub fn gradient(&self, batch: &Batch<'_>) -> Result<(f64, Gradient)> {
        self.check_batch(batch)?;
        let n = batch.len() as f64;
        let (z, inputs) = self.forward_raw(batch.features);
        let mut delta = Array2::zeros(z.raw_dim());
        let mut total = 0.0;
        for (i, row) in z.axis_iter(Axis(0)).enumerate() {
            let (l, dz) = sample_loss(&self.head, row, &batch.targets, i)?;
            total += l;
            delta.row_mut(i).assign(&Array1::from(dz));
        }
        delta /= n;

        let mut grads = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &inputs[li];
            let gw = delta.t().dot(a_in);
            let gb = delta.sum_axis(Axis(0));
            if li > 0 {
                let mut back = delta.dot(&layer.weight);
                // `a_in` is the ReLU output of the previous layer.
                back.zip_mut_with(a_in, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Dense { weight: gw, bias: gb });
        }
        grads.reverse();
        Ok((total / n, Gradient { layers: grads }))
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &ModelFile::from(self))?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(r)?;
        file.try_into()
    }
}

/// Targets paired with a feature matrix; the variant selects the loss.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Censored Weibull negative log-likelihood.
    Survival { time: Vec<f64>, censored: Vec<bool> },
    /// Binary cross-entropy on the sigmoid output.
    Binary(Vec<bool>),
    /// Squared error summed over outputs.
    Regression(Array2<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Survival { time, .. } => time.len(),
            Targets::Binary(y) => y.len(),
            Targets::Regression(y) => y.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Survival { time, censored } => Targets::Survival {
                time: idx.iter().map(|&i| time[i]).collect(),
                censored: idx.iter().map(|&i| censored[i]).collect(),
            },
            Targets::Binary(y) => Targets::Binary(idx.iter().map(|&i| y[i]).collect()),
            Targets::Regression(y) => Targets::Regression(y.select(Axis(0), idx)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub features: ArrayView2<'a, f64>,
    pub targets: Targets,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss of sample `i` and its derivative with respect to the raw head outputs.
fn sample_loss(head: &Head, z: ArrayView1<f64>, targets: &Targets, i: usize) -> Result<(f64, Vec<f64>)> {
    let (loss, dz) = match (head, targets) {
        (Head::Survival { time_scale }, Targets::Survival { time, censored }) => {
            let lambda = time_scale * (softplus(z[0]) + PARAM_FLOOR);
            let rho = softplus(z[1]) + PARAM_FLOOR;
            let (l, dl, dr) = censored_weibull_nll_grad(lambda, rho, time[i], censored[i])?;
            (l, vec![dl * time_scale * sigmoid(z[0]), dr * sigmoid(z[1])])
        }
        (Head::Classifier, Targets::Binary(y)) => {
            let y = if y[i] { 1.0 } else { 0.0 };
            let z0 = z[0];
            (z0.max(0.0) - z0 * y + (-z0.abs()).exp().ln_1p(), vec![sigmoid(z0) - y])
        }
        (Head::Linear, Targets::Regression(y)) => {
            let diff: Vec<f64> = z.iter().zip(y.row(i)).map(|(a, b)| a - b).collect();
            (diff.iter().map(|d| d * d).sum(), diff.iter().map(|d| 2.0 * d).collect())
        }
        _ => unreachable!("checked by check_batch"),
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss of sample {i} is {loss}")));
    }
    Ok((loss, dz))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-3, epochs: 10, batch_size: 256, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Full-data mean loss before training and after each epoch.
    pub loss_curve: Vec<f64>,
    /// Epoch whose parameters were kept (0 = initial).
    pub best_epoch: usize,
}

/// Mini-batch Adam on the mean loss. The parameters with the lowest
/// full-data loss seen at an epoch boundary are kept, so the returned loss
/// never exceeds the initial one.
pub fn optimize(model: &mut MlpModel, data: &Batch<'_>, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let mut m: Vec<Dense> = model.layers.iter().map(zeros_like).collect();
    let mut v: Vec<Dense> = model.layers.iter().map(zeros_like).collect();
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut best = model.layers.clone();
    let mut best_loss = model.loss(data)?;
    let mut best_epoch = 0;
    let mut curve = vec![best_loss];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = data.features.select(Axis(0), chunk);
            let batch = Batch { features: x.view(), targets: data.targets.select(chunk) };
            let (_, grad) = model.gradient(&batch)?;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for ((layer, g), (mm, vv)) in model.layers.iter_mut().zip(&grad.layers).zip(m.iter_mut().zip(v.iter_mut())) {
                adam_update(layer.weight.iter_mut().zip(g.weight.iter()).zip(mm.weight.iter_mut().zip(vv.weight.iter_mut())), cfg, bc1, bc2);
                adam_update(layer.bias.iter_mut().zip(g.bias.iter()).zip(mm.bias.iter_mut().zip(vv.bias.iter_mut())), cfg, bc1, bc2);
            }
        }
        let loss = model.loss(data)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training diverged at epoch {epoch}")));
        }
        curve.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = model.layers.clone();
            best_epoch = epoch;
        }
    }
    model.layers = best;
    Ok(TrainReport { loss_curve: curve, best_epoch })
}

fn zeros_like(d: &Dense) -> Dense {
    Dense { weight: Array2::zeros(d.weight.raw_dim()), bias: Array1::zeros(d.bias.len()) }
}

fn adam_update<'a>(
    entries: impl Iterator<Item = ((&'a mut f64, &'a f64), (&'a mut f64, &'a mut f64))>,
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    for ((p, &g), (m, v)) in entries {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
    }
}

/// Fits a normalizer to `x` and stores it in the model.
pub fn fit_normalizer(model: &mut MlpModel, x: ArrayView2<f64>) {
    model.normalizer = Normalizer::fit(x);
}

const FORMAT: &str = "rit-mlp/1";

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    head: Head,
    hidden_activation: String,
    meta: ModelMeta,
    normalizer: Normalizer,
    layers: Vec<LayerFile>,
}

impl From<&MlpModel> for ModelFile {
    fn from(m: &MlpModel) -> Self {
        ModelFile {
            format: FORMAT.into(),
            head: m.head,
            hidden_activation: "relu".into(),
            meta: m.meta.clone(),
            normalizer: m.normalizer.clone(),
            layers: m
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for MlpModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format != FORMAT || f.hidden_activation != "relu" {
            return Err(Error::Schema(format!("unsupported model format {} / {}", f.format, f.hidden_activation)));
        }
        if f.layers.is_empty() {
            return Err(Error::Schema("model has no layers".into()));
        }
        let mut layers = Vec::with_capacity(f.layers.len());
        let mut prev = f.layers[0].cols;
        for l in f.layers {
            if l.cols != prev || l.bias.len() != l.rows {
                return Err(Error::Schema("layer shapes do not chain".into()));
            }
            prev = l.rows;
            let weight = Array2::from_shape_vec((l.rows, l.cols), l.weight)
                .map_err(|e| Error::Schema(format!("layer weights: {e}")))?;
            layers.push(Dense { weight, bias: Array1::from(l.bias) });
        }
        let input = layers[0].weight.ncols();
        if f.normalizer.mean.len() != input || f.normalizer.std.len() != input {
            return Err(Error::Schema("normalizer width does not match the input layer".into()));
        }
        let out = layers.last().unwrap().weight.nrows();
        if out != f.head.outputs(out) {
            return Err(Error::Schema(format!("{out} outputs do not fit the {:?} head", f.head)));
        }
        Ok(MlpModel { layers, head: f.head, normalizer: f.normalizer, meta: f.meta })
    }
}

/// View of the first `n` rows, for callers holding a larger buffer.
pub fn head_rows(x: &Array2<f64>, n: usize) -> ArrayView2<'_, f64> {
    x.slice(s![..n, ..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if den == 0.0 { 0.0 } else { num / den }
    }

    fn numeric_gradient(model: &MlpModel, batch: &Batch<'_>, h: f64) -> Vec<f64> {
        let p0 = model.params_flat();
        let mut probe = model.clone();
        let mut g = vec![0.0; p0.len()];
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] = p0[i] + h;
            probe.set_params_flat(&p);
            let plus = probe.loss(batch).unwrap();
            p[i] = p0[i] - h;
            probe.set_params_flat(&p);
            let minus = probe.loss(batch).unwrap();
            g[i] = (plus - minus) / (2.0 * h);
        }
        g
    }

    #[test]
    fn zero_model_outputs() {
        let surv = MlpModel::zeros(5, &[4, 4], Head::Survival { time_scale: 1.0 }, 0);
        let out = surv.forward(&[1.0, -2.0, 3.0, 0.5, 0.0]).unwrap();
        let expected = std::f64::consts::LN_2 + PARAM_FLOOR;
        assert!((out[0] - expected).abs() < 1e-15 && (out[1] - expected).abs() < 1e-15);

        let cls = MlpModel::zeros(5, &[4], Head::Classifier, 0);
        assert_eq!(cls.forward(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![0.5]);
        assert!(matches!(cls.forward(&[1.0]), Err(Error::Dimension { expected: 5, got: 1 })));
    }

    #[test]
    fn random_model_outputs_are_finite_and_positive() {
        let mut rng = SimRng::seed_from_u64(3);
        let m = MlpModel::new(6, &[16, 16], Head::Survival { time_scale: 100.0 }, 0, 9);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1e3..1e3)).collect();
            let out = m.forward(&x).unwrap();
            assert!(out.iter().all(|v| v.is_finite() && *v > 0.0), "{out:?}");
        }
    }

    #[test]
    fn single_parameter_quadratic() {
        // y = w·1, loss = (w - 3)², so dL/dw = 2(w - 3).
        let mut m = MlpModel::zeros(1, &[], Head::Linear, 1);
        m.layers[0].weight[[0, 0]] = 1.25;
        let x = Array2::from_elem((1, 1), 1.0);
        let batch = Batch { features: x.view(), targets: Targets::Regression(Array2::from_elem((1, 1), 3.0)) };
        let (_, g) = m.gradient(&batch).unwrap();
        assert!((g.layers[0].weight[[0, 0]] - 2.0 * (1.25 - 3.0)).abs() < 1e-15);
    }

    /// Zero biases can leave a unit exactly on the ReLU kink when every
    /// input to it is dead, where finite differences are one-sided.
    fn with_random_biases(mut m: MlpModel, rng: &mut SimRng) -> MlpModel {
        for l in &mut m.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        m
    }

    fn survival_batch(rng: &mut SimRng, n: usize, dim: usize) -> (Array2<f64>, Targets) {
        let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
        let time = (0..n).map(|_| rng.random_range(5.0..200.0)).collect();
        let censored = (0..n).map(|_| rng.random_bool(0.3)).collect();
        (x, Targets::Survival { time, censored })
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SimRng::seed_from_u64(17);
        for trial in 0..10 {
            let (x, targets) = survival_batch(&mut rng, 8, 5);
            let m = with_random_biases(MlpModel::new(5, &[6, 6], Head::Survival { time_scale: 100.0 }, 0, trial), &mut rng);
            let batch = Batch { features: x.view(), targets };
            let (_, g) = m.gradient(&batch).unwrap();
            assert!(rel_err(&g.flatten(), &numeric_gradient(&m, &batch, 1e-5)) < 1e-4);

            let y = (0..8).map(|_| rng.random_bool(0.5)).collect();
            let m = with_random_biases(MlpModel::new(5, &[7], Head::Classifier, 0, trial + 100), &mut rng);
            let batch = Batch { features: x.view(), targets: Targets::Binary(y) };
            let (_, g) = m.gradient(&batch).unwrap();
            assert!(rel_err(&g.flatten(), &numeric_gradient(&m, &batch, 1e-5)) < 1e-4);
        }
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let mut rng = SimRng::seed_from_u64(5);
        let (x, targets) = survival_batch(&mut rng, 6, 3);
        let m = MlpModel::new(3, &[5], Head::Survival { time_scale: 50.0 }, 0, 1);
        let (l1, g1) = m.gradient(&Batch { features: x.view(), targets: targets.clone() }).unwrap();
        let idx: Vec<usize> = (0..12).map(|i| i % 6).collect();
        let x2 = x.select(Axis(0), &idx);
        let (l2, g2) = m.gradient(&Batch { features: x2.view(), targets: targets.select(&idx) }).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(rel_err(&g1.flatten(), &g2.flatten()) < 1e-12);
    }

    #[test]
    fn mismatched_targets_rejected() {
        let m = MlpModel::new(2, &[3], Head::Classifier, 0, 1);
        let x = Array2::zeros((2, 2));
        let batch = Batch { features: x.view(), targets: Targets::Survival { time: vec![1.0; 2], censored: vec![false; 2] } };
        assert!(m.gradient(&batch).is_err());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let m = MlpModel::new(2, &[3], Head::Survival { time_scale: 1.0 }, 0, 1);
        let x = Array2::zeros((1, 2));
        let batch = Batch { features: x.view(), targets: Targets::Survival { time: vec![0.0], censored: vec![false] } };
        assert!(m.gradient(&batch).is_err());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut rng = SimRng::seed_from_u64(8);
        let (x, targets) = survival_batch(&mut rng, 64, 3);
        let mut m = MlpModel::new(3, &[8], Head::Survival { time_scale: 100.0 }, 0, 4);
        let before = m.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 16, ..TrainConfig::default() };
        optimize(&mut m, &Batch { features: x.view(), targets }, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn separable_classifier_reaches_full_accuracy() {
        let mut rng = SimRng::seed_from_u64(21);
        let n = 2000;
        // Label by the side of the line x0 + 0.5·x1 = 0.1, with a margin.
        let mut rows = vec![];
        let mut labels = vec![];
        while labels.len() < n {
            let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let s = a + 0.5 * b - 0.1;
            if s.abs() < 0.05 {
                continue;
            }
            rows.extend([a, b]);
            labels.push(s > 0.0);
        }
        let x = Array2::from_shape_vec((n, 2), rows).unwrap();
        let mut m = MlpModel::new(2, &[16], Head::Classifier, 0, 2);
        fit_normalizer(&mut m, x.view());
        let batch = Batch { features: x.view(), targets: Targets::Binary(labels.clone()) };
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 60, batch_size: 64, seed: 3, ..TrainConfig::default() };
        let report = optimize(&mut m, &batch, &cfg).unwrap();
        assert!(report.loss_curve.last().unwrap() <= &report.loss_curve[0]);
        let preds = m.forward_batch(x.view()).unwrap();
        let correct = preds.iter().zip(&labels).filter(|(p, y)| (p[0] > 0.5) == **y).count();
        assert!(correct as f64 / n as f64 >= 0.99, "accuracy {}", correct as f64 / n as f64);
    }

    #[test]
    fn recovers_weibull_parameters_from_constant_features() {
        let (lambda, rho) = (70.0f64, 3.0f64);
        let mut rng = SimRng::seed_from_u64(70);
        let n = 10_000;
        let time: Vec<f64> = (0..n).map(|_| lambda * (-(1.0f64 - rng.random::<f64>()).ln()).powf(1.0 / rho)).collect();
        let x = Array2::zeros((n, 1));
        let batch = Batch { features: x.view(), targets: Targets::Survival { time, censored: vec![false; n] } };
        let mut m = MlpModel::new(1, &[4], Head::Survival { time_scale: 100.0 }, 0, 1);
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 60, batch_size: 500, seed: 2, ..TrainConfig::default() };
        optimize(&mut m, &batch, &cfg).unwrap();
        let out = m.forward(&[0.0]).unwrap();
        assert!((out[0] / lambda - 1.0).abs() < 0.05, "lambda {}", out[0]);
        assert!((out[1] / rho - 1.0).abs() < 0.10, "rho {}", out[1]);
    }

    #[test]
    fn training_is_reproducible() {
        let mut rng = SimRng::seed_from_u64(8);
        let (x, targets) = survival_batch(&mut rng, 128, 3);
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 3, batch_size: 32, seed: 11, ..TrainConfig::default() };
        let run = || {
            let mut m = MlpModel::new(3, &[8], Head::Survival { time_scale: 100.0 }, 0, 4);
            optimize(&mut m, &Batch { features: x.view(), targets: targets.clone() }, &cfg).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = MlpModel::new(4, &[5, 3], Head::Survival { time_scale: 255.0 }, 0, 12);
        m.normalizer = Normalizer { mean: vec![0.1, 0.2, 0.3, 0.4], std: vec![1.0, 2.0, 3.0, 4.0] };
        m.meta.alpha = 0.13;
        let mut buf = vec![];
        m.write_json(&mut buf).unwrap();
        assert_eq!(MlpModel::read_json(buf.as_slice()).unwrap(), m);
    }
}
