//! Inverse regression model: 42 sensor readings -> 8 configuration scalars
//! (five group healths, load, load position, temperature).
//!
//! A single-hidden-layer network with hand-written backpropagation and plain
//! mini-batch gradient descent. Everything is seed-deterministic: identical
//! (dataset, hyperparameters, seed) reproduce bit-identical weights. Inputs
//! and labels are standardized per feature with parameters frozen at
//! pre-training; predictions are de-standardized and clamped into the
//! declared operating ranges.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::OperatingRanges;
use crate::seeds::{hex_digest, stream};
use crate::truss::{AssetConfiguration, SensorVector};
use crate::{GROUP_COUNT, SENSOR_COUNT};

/// Output dimension: five healths + load + position + temperature.
pub const CONFIG_DIM: usize = GROUP_COUNT + 3;

/// Checkpoint format version.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("dataset has {n} examples, need at least {min}")]
    DatasetTooSmall { n: usize, min: usize },
    #[error("label {index} invalid: {reason}")]
    InvalidLabel { index: usize, reason: String },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("input value at index {index} is not finite")]
    NonFiniteInput { index: usize },
    #[error("input has {got} values, expected {expected}")]
    WrongWidth { got: usize, expected: usize },
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse error at {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
}

/// Smooth activations only, so gradients are finite-difference checkable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub activation: Activation,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden: 64,
            learning_rate: 0.02,
            batch_size: 8,
            activation: Activation::Tanh,
        }
    }
}

/// Per-feature affine standardization; zero-variance features keep std 1 so
/// the transform stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut std = vec![0.0; dim];
        for row in rows {
            for ((s, &m), &x) in std.iter_mut().zip(&mean).zip(row) {
                *s += (x - m).powi(2);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            row.len(),
            row.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(&x, (&m, &s))| (x - m) / s),
        )
    }

    pub fn invert(&self, row: &DVector<f64>) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&z, (&m, &s))| z * s + m)
            .collect()
    }
}

/// Wall-clock and loss record of one training invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub wall_seconds: f64,
    /// Mean batch loss per epoch, standardized units; length equals epochs.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    x_std: Standardizer,
    y_std: Standardizer,
    hyper: Hyperparams,
    ranges: OperatingRanges,
    seed: u64,
}

fn config_to_vec(cfg: &AssetConfiguration) -> Vec<f64> {
    let mut v = Vec::with_capacity(CONFIG_DIM);
    v.extend_from_slice(&cfg.health);
    v.push(cfg.load_n);
    v.push(cfg.load_pos as f64);
    v.push(cfg.temp_c);
    v
}

fn vec_to_config(raw: &[f64], ranges: &OperatingRanges) -> AssetConfiguration {
    let mut health = [1.0; GROUP_COUNT];
    for (h, &x) in health.iter_mut().zip(raw) {
        *h = x.clamp(ranges.health_min, 1.0);
    }
    let load_n = raw[GROUP_COUNT].clamp(ranges.load_min_n, ranges.load_max_n);
    let load_pos = (raw[GROUP_COUNT + 1].round() as i64)
        .clamp(ranges.load_pos_min as i64, ranges.load_pos_max as i64) as usize;
    let temp_c = raw[GROUP_COUNT + 2].clamp(ranges.temp_min_c, ranges.temp_max_c);
    AssetConfiguration {
        health,
        load_n,
        load_pos,
        temp_c,
    }
}

fn validate_dataset(
    dataset: &[(SensorVector, AssetConfiguration)],
    min: usize,
) -> Result<(), RegressorError> {
    if dataset.len() < min {
        return Err(RegressorError::DatasetTooSmall {
            n: dataset.len(),
            min,
        });
    }
    for (index, (_, label)) in dataset.iter().enumerate() {
        for &h in &label.health {
            if !(h.is_finite() && h > 0.0 && h <= 1.0) {
                return Err(RegressorError::InvalidLabel {
                    index,
                    reason: format!("health {h} outside (0, 1]"),
                });
            }
        }
        if !(label.load_n.is_finite() && label.load_n >= 0.0) {
            return Err(RegressorError::InvalidLabel {
                index,
                reason: format!("load {} negative or non-finite", label.load_n),
            });
        }
        if !label.temp_c.is_finite() {
            return Err(RegressorError::InvalidLabel {
                index,
                reason: "temperature non-finite".to_string(),
            });
        }
    }
    Ok(())
}

struct Gradients {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

impl RegressionModel {
    fn forward(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut hidden = &self.w1 * x + &self.b1;
        for h in hidden.iter_mut() {
            *h = self.hyper.activation.apply(*h);
        }
        let out = &self.w2 * &hidden + &self.b2;
        (hidden, out)
    }

    /// Loss on a single standardized pair: mean squared error over outputs.
    fn loss_single(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let (_, out) = self.forward(x);
        (out - y).norm_squared() / CONFIG_DIM as f64
    }

    /// Analytic gradients for one standardized example.
    fn backward(&self, x: &DVector<f64>, y: &DVector<f64>) -> (f64, Gradients) {
        let (hidden, out) = self.forward(x);
        let diff = &out - y;
        let loss = diff.norm_squared() / CONFIG_DIM as f64;
        let d_out = diff * (2.0 / CONFIG_DIM as f64);
        let gw2 = &d_out * hidden.transpose();
        let gb2 = d_out.clone();
        let mut d_hidden = self.w2.transpose() * d_out;
        for (d, &a) in d_hidden.iter_mut().zip(hidden.iter()) {
            *d *= self.hyper.activation.derivative_from_output(a);
        }
        let gw1 = &d_hidden * x.transpose();
        let gb1 = d_hidden;
        (
            loss,
            Gradients {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
        )
    }

    /// Runs `epochs` of mini-batch SGD over the standardized dataset.
    /// Shuffle order and batch composition depend only on `seed`.
    fn train_epochs(
        &mut self,
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        epochs: usize,
        seed: u64,
    ) -> Result<TrainingRun, RegressorError> {
        let n = xs.len();
        let lr = self.hyper.learning_rate;
        let batch = self.hyper.batch_size.max(1);
        let mut loss_trace = Vec::with_capacity(epochs);
        let started = Instant::now();
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = stream(seed, "epoch", epoch as u64);
            // Fisher-Yates; explicit so the permutation is stable across
            // library versions.
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(batch) {
                let scale = 1.0 / chunk.len() as f64;
                let mut batch_loss = 0.0;
                let mut acc: Option<Gradients> = None;
                for &i in chunk {
                    let (loss, g) = self.backward(&xs[i], &ys[i]);
                    batch_loss += loss * scale;
                    acc = Some(match acc {
                        None => g,
                        Some(mut a) => {
                            a.w1 += g.w1;
                            a.b1 += g.b1;
                            a.w2 += g.w2;
                            a.b2 += g.b2;
                            a
                        }
                    });
                }
                let g = acc.expect("non-empty batch");
                self.w1 -= g.w1 * (lr * scale);
                self.b1 -= g.b1 * (lr * scale);
                self.w2 -= g.w2 * (lr * scale);
                self.b2 -= g.b2 * (lr * scale);
                epoch_loss += batch_loss;
                batches += 1;
            }
            let mean_loss = epoch_loss / batches as f64;
            if !mean_loss.is_finite() {
                return Err(RegressorError::Diverged { epoch });
            }
            loss_trace.push(mean_loss);
        }
        Ok(TrainingRun {
            epochs,
            learning_rate: lr,
            batch_size: batch,
            seed,
            wall_seconds: started.elapsed().as_secs_f64(),
            loss_trace,
        })
    }

    fn standardize_dataset(
        &self,
        dataset: &[(SensorVector, AssetConfiguration)],
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let xs = dataset
            .iter()
            .map(|(s, _)| self.x_std.apply(s.values()))
            .collect();
        let ys = dataset
            .iter()
            .map(|(_, c)| self.y_std.apply(&config_to_vec(c)))
            .collect();
        (xs, ys)
    }

    /// Mean standardized loss over a dataset; used by tests and reports.
    pub fn dataset_loss(&self, dataset: &[(SensorVector, AssetConfiguration)]) -> f64 {
        let (xs, ys) = self.standardize_dataset(dataset);
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| self.loss_single(x, y))
            .sum::<f64>()
            / xs.len() as f64
    }

    pub fn predict(&self, sensors: &SensorVector) -> AssetConfiguration {
        let x = self.x_std.apply(sensors.values());
        let (_, out) = self.forward(&x);
        let raw = self.y_std.invert(&out);
        vec_to_config(&raw, &self.ranges)
    }

    /// Prediction from a raw slice; rejects wrong width or non-finite input.
    pub fn predict_raw(&self, values: &[f64]) -> Result<AssetConfiguration, RegressorError> {
        if values.len() != SENSOR_COUNT {
            return Err(RegressorError::WrongWidth {
                got: values.len(),
                expected: SENSOR_COUNT,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(RegressorError::NonFiniteInput { index });
        }
        let x = self.x_std.apply(values);
        let (_, out) = self.forward(&x);
        let raw = self.y_std.invert(&out);
        Ok(vec_to_config(&raw, &self.ranges))
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn ranges(&self) -> &OperatingRanges {
        &self.ranges
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            schema_version: MODEL_SCHEMA_VERSION,
            hyper: self.hyper.clone(),
            ranges: self.ranges.clone(),
            seed: self.seed,
            x_std: self.x_std.clone(),
            y_std: self.y_std.clone(),
            w1: self.w1.as_slice().to_vec(),
            b1: self.b1.as_slice().to_vec(),
            w2: self.w2.as_slice().to_vec(),
            b2: self.b2.as_slice().to_vec(),
        }
    }

    /// SHA-256 of the serialized checkpoint; equal digests mean equal models.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        hex_digest(text.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), RegressorError> {
        let text =
            serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        fs::write(path, text).map_err(|source| RegressorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RegressorError> {
        let text = fs::read_to_string(path).map_err(|source| RegressorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let c: ModelCheckpoint = serde_json::from_str(&text).map_err(|source| {
            RegressorError::Parse {
                path: path.display().to_string(),
                source,
            }
        })?;
        if c.schema_version != MODEL_SCHEMA_VERSION {
            return Err(RegressorError::SchemaVersion {
                found: c.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let hidden = c.hyper.hidden;
        if c.w1.len() != hidden * SENSOR_COUNT
            || c.b1.len() != hidden
            || c.w2.len() != CONFIG_DIM * hidden
            || c.b2.len() != CONFIG_DIM
        {
            return Err(RegressorError::Shape(format!(
                "weight lengths {}/{}/{}/{} do not fit hidden width {hidden}",
                c.w1.len(),
                c.b1.len(),
                c.w2.len(),
                c.b2.len()
            )));
        }
        Ok(RegressionModel {
            w1: DMatrix::from_column_slice(hidden, SENSOR_COUNT, &c.w1),
            b1: DVector::from_column_slice(&c.b1),
            w2: DMatrix::from_column_slice(CONFIG_DIM, hidden, &c.w2),
            b2: DVector::from_column_slice(&c.b2),
            x_std: c.x_std,
            y_std: c.y_std,
            hyper: c.hyper,
            ranges: c.ranges,
            seed: c.seed,
        })
    }
}

/// Serialized checkpoint layout; matrices stored column-major.
#[derive(Debug, Serialize, Deserialize)]
struct ModelCheckpoint {
    schema_version: u32,
    hyper: Hyperparams,
    ranges: OperatingRanges,
    seed: u64,
    x_std: Standardizer,
    y_std: Standardizer,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Initializes a fresh model (uniform +-1/sqrt(fan_in) weights, zero biases)
/// and trains it for `epochs`. Standardization parameters are fit on this
/// dataset and frozen into the model.
pub fn pretrain(
    dataset: &[(SensorVector, AssetConfiguration)],
    hyper: &Hyperparams,
    ranges: &OperatingRanges,
    epochs: usize,
    seed: u64,
) -> Result<(RegressionModel, TrainingRun), RegressorError> {
    validate_dataset(dataset, 10)?;
    let x_rows: Vec<Vec<f64>> = dataset.iter().map(|(s, _)| s.values().to_vec()).collect();
    let y_rows: Vec<Vec<f64>> = dataset.iter().map(|(_, c)| config_to_vec(c)).collect();
    let x_std = Standardizer::fit(&x_rows);
    let y_std = Standardizer::fit(&y_rows);

    let mut rng = stream(seed, "init", 0);
    let hidden = hyper.hidden;
    let init = |rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let bound = 1.0 / (cols as f64).sqrt();
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
    };
    let w1 = init(hidden, SENSOR_COUNT, &mut rng);
    let w2 = init(CONFIG_DIM, hidden, &mut rng);

    let mut model = RegressionModel {
        w1,
        b1: DVector::zeros(hidden),
        w2,
        b2: DVector::zeros(CONFIG_DIM),
        x_std,
        y_std,
        hyper: hyper.clone(),
        ranges: ranges.clone(),
        seed,
    };
    let (xs, ys) = model.standardize_dataset(dataset);
    let run = model.train_epochs(&xs, &ys, epochs, seed)?;
    Ok((model, run))
}

/// Continues optimization from existing weights; standardization parameters
/// are reused, never refit. Zero epochs returns the model unchanged.
pub fn fine_tune(
    model: &RegressionModel,
    dataset: &[(SensorVector, AssetConfiguration)],
    epochs: usize,
    seed: u64,
) -> Result<(RegressionModel, TrainingRun), RegressorError> {
    validate_dataset(dataset, 1)?;
    let mut tuned = model.clone();
    let (xs, ys) = tuned.standardize_dataset(dataset);
    let run = tuned.train_epochs(&xs, &ys, epochs, seed)?;
    Ok((tuned, run))
}

/// Compares analytic gradients against central finite differences (step
/// 1e-5 on the standardized scale) over every weight and bias; returns the
/// maximum error relative to the largest analytic gradient entry. Scaling
/// by the vector norm rather than entry-by-entry keeps the scheme's
/// floating-point noise (roughly eps/2h of the loss) from dominating on
/// entries whose true gradient is near zero.
pub fn gradient_check(
    model: &RegressionModel,
    example: (&SensorVector, &AssetConfiguration),
) -> f64 {
    let x = model.x_std.apply(example.0.values());
    let y = model.y_std.apply(&config_to_vec(example.1));
    let (_, analytic) = model.backward(&x, &y);
    let h = 1.0e-5;
    let scale = analytic
        .w1
        .amax()
        .max(analytic.b1.amax())
        .max(analytic.w2.amax())
        .max(analytic.b2.amax())
        .max(1.0e-10);

    let mut worst: f64 = 0.0;
    let mut probe = |get: &dyn Fn(&RegressionModel) -> f64,
                     set: &dyn Fn(&mut RegressionModel, f64),
                     reference: f64| {
        let mut m = model.clone();
        let base = get(model);
        set(&mut m, base + h);
        let up = m.loss_single(&x, &y);
        set(&mut m, base - h);
        let down = m.loss_single(&x, &y);
        let numeric = (up - down) / (2.0 * h);
        let denom = reference.abs().max(numeric.abs()).max(scale);
        worst = worst.max((reference - numeric).abs() / denom);
    };

    let (h1, _) = (model.w1.nrows(), model.w1.ncols());
    for r in 0..h1 {
        for c in 0..model.w1.ncols() {
            probe(
                &|m| m.w1[(r, c)],
                &|m, v| m.w1[(r, c)] = v,
                analytic.w1[(r, c)],
            );
        }
        probe(&|m| m.b1[r], &|m, v| m.b1[r] = v, analytic.b1[r]);
    }
    for r in 0..model.w2.nrows() {
        for c in 0..model.w2.ncols() {
            probe(
                &|m| m.w2[(r, c)],
                &|m, v| m.w2[(r, c)] = v,
                analytic.w2[(r, c)],
            );
        }
        probe(&|m| m.b2[r], &|m, v| m.b2[r] = v, analytic.b2[r]);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StructureConfig;
    use crate::sampler::generate_design_records;
    use crate::truss::{SensorDomain, TrussModel};
    use approx::assert_abs_diff_eq;

    fn bridge_dataset(seed: u64, count: usize) -> Vec<(SensorVector, AssetConfiguration)> {
        let model = TrussModel::bridge(&StructureConfig::default()).unwrap();
        generate_design_records(&model, seed, count)
            .unwrap()
            .into_iter()
            .map(|r| {
                (
                    SensorVector::new(r.sensors, SensorDomain::Virtual).unwrap(),
                    r.config,
                )
            })
            .collect()
    }

    fn ranges() -> OperatingRanges {
        StructureConfig::default().ranges()
    }

    fn pretrain_10(
        hyper: &Hyperparams,
        dataset: &[(SensorVector, AssetConfiguration)],
    ) -> (RegressionModel, TrainingRun) {
        pretrain(dataset, hyper, &ranges(), 10, 7).unwrap()
    }

    #[test]
    fn single_point_is_memorized() {
        let mut dataset = bridge_dataset(1, 10);
        dataset.truncate(1);
        let repeated: Vec<_> = (0..10).map(|_| dataset[0].clone()).collect();
        let hyper = Hyperparams {
            learning_rate: 0.05,
            ..Hyperparams::default()
        };
        let (model, run) = pretrain(&repeated, &hyper, &ranges(), 300, 3).unwrap();
        assert!(run.loss_trace.last().unwrap() < &1.0e-6);
        assert!(model.dataset_loss(&repeated) < 1.0e-6);
    }

    #[test]
    fn constant_labels_converge_to_that_label() {
        let mut dataset = bridge_dataset(2, 200);
        let label = dataset[0].1.clone();
        for pair in dataset.iter_mut() {
            pair.1 = label.clone();
        }
        let hyper = Hyperparams {
            learning_rate: 0.1,
            ..Hyperparams::default()
        };
        let (model, _) = pretrain(&dataset, &hyper, &ranges(), 10, 7).unwrap();
        // Constant labels standardize to all-zero targets; after training
        // the de-standardized outputs must sit on the label.
        let predicted = model.predict(&dataset[5].0);
        for (p, t) in predicted.health.iter().zip(label.health.iter()) {
            assert_abs_diff_eq!(p, t, epsilon = 1.0e-3);
        }
        assert_abs_diff_eq!(
            predicted.load_n,
            label.load_n,
            epsilon = 1.0e-3 * label.load_n
        );
    }

    #[test]
    fn same_seed_reproduces_bit_identical_weights() {
        let dataset = bridge_dataset(3, 60);
        let (a, run_a) = pretrain(&dataset, &Hyperparams::default(), &ranges(), 5, 11).unwrap();
        let (b, run_b) = pretrain(&dataset, &Hyperparams::default(), &ranges(), 5, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(run_a.loss_trace, run_b.loss_trace);
        let (c, _) = pretrain(&dataset, &Hyperparams::default(), &ranges(), 5, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_reduces_loss_and_trace_has_one_entry_per_epoch() {
        let dataset = bridge_dataset(4, 200);
        let (_, run) = pretrain(&dataset, &Hyperparams::default(), &ranges(), 10, 5).unwrap();
        assert_eq!(run.loss_trace.len(), 10);
        assert!(run.loss_trace.last().unwrap() <= run.loss_trace.first().unwrap());
        assert!(run.wall_seconds >= 0.0);
    }

    #[test]
    fn tiny_dataset_is_rejected() {
        let dataset = bridge_dataset(5, 9);
        assert!(matches!(
            pretrain(&dataset, &Hyperparams::default(), &ranges(), 1, 1),
            Err(RegressorError::DatasetTooSmall { n: 9, min: 10 })
        ));
    }

    #[test]
    fn invalid_label_is_rejected_with_index() {
        let mut dataset = bridge_dataset(6, 12);
        dataset[7].1.health[0] = 1.5;
        match pretrain(&dataset, &Hyperparams::default(), &ranges(), 1, 1) {
            Err(RegressorError::InvalidLabel { index: 7, .. }) => {}
            other => panic!("expected invalid-label error, got {other:?}"),
        }
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let dataset = bridge_dataset(7, 50);
        let hyper = Hyperparams {
            learning_rate: 1.0e12,
            ..Hyperparams::default()
        };
        match pretrain(&dataset, &hyper, &ranges(), 5, 1) {
            Err(RegressorError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let dataset = bridge_dataset(8, 40);
        let (model, _) = pretrain_10(&Hyperparams::default(), &dataset);
        let (same, run) = fine_tune(&model, &dataset, 0, 99).unwrap();
        assert_eq!(model, same);
        assert!(run.loss_trace.is_empty());
    }

    #[test]
    fn fine_tune_on_the_training_set_does_not_regress() {
        let dataset = bridge_dataset(9, 120);
        let (model, _) = pretrain_10(&Hyperparams::default(), &dataset);
        let before = model.dataset_loss(&dataset);
        let (tuned, _) = fine_tune(&model, &dataset, 2, 4).unwrap();
        let after = tuned.dataset_loss(&dataset);
        assert!(after <= before * 1.01, "before {before}, after {after}");
    }

    #[test]
    fn fine_tune_reuses_frozen_standardization() {
        let dataset = bridge_dataset(10, 40);
        let (model, _) = pretrain_10(&Hyperparams::default(), &dataset);
        let (tuned, _) = fine_tune(&model, &dataset[..20], 3, 5).unwrap();
        assert_eq!(model.x_std, tuned.x_std);
        assert_eq!(model.y_std, tuned.y_std);
    }

    #[test]
    fn predictions_are_deterministic_and_clamped() {
        let dataset = bridge_dataset(11, 60);
        let (model, _) = pretrain_10(&Hyperparams::default(), &dataset);
        let a = model.predict(&dataset[0].0);
        let b = model.predict(&dataset[0].0);
        assert_eq!(a, b);
        let r = ranges();
        for &h in &a.health {
            assert!((r.health_min..=1.0).contains(&h));
        }
        assert!((r.load_min_n..=r.load_max_n).contains(&a.load_n));
        assert!((r.load_pos_min..=r.load_pos_max).contains(&a.load_pos));
        assert!((r.temp_min_c..=r.temp_max_c).contains(&a.temp_c));
    }

    #[test]
    fn raw_prediction_rejects_bad_input() {
        let dataset = bridge_dataset(12, 40);
        let (model, _) = pretrain_10(&Hyperparams::default(), &dataset);
        assert!(matches!(
            model.predict_raw(&[0.0; 41]),
            Err(RegressorError::WrongWidth { got: 41, .. })
        ));
        let mut values = vec![0.0; SENSOR_COUNT];
        values[3] = f64::INFINITY;
        assert!(matches!(
            model.predict_raw(&values),
            Err(RegressorError::NonFiniteInput { index: 3 })
        ));
    }

    #[test]
    fn standardize_round_trip_is_identity() {
        let dataset = bridge_dataset(13, 50);
        let rows: Vec<Vec<f64>> = dataset.iter().map(|(s, _)| s.values().to_vec()).collect();
        let std = Standardizer::fit(&rows);
        for row in rows.iter().take(10) {
            let back = std.invert(&std.apply(row));
            for (a, b) in row.iter().zip(&back) {
                assert_abs_diff_eq!(a, b, epsilon = 1.0e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_variance_feature_standardizes_safely() {
        let rows = vec![vec![1.0, 5.0], vec![1.0, 7.0], vec![1.0, 9.0]];
        let std = Standardizer::fit(&rows);
        assert_eq!(std.std[0], 1.0);
        let z = std.apply(&rows[0]);
        assert_eq!(z[0], 0.0);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradient_check_linear_model_is_numerically_exact() {
        let dataset = bridge_dataset(14, 30);
        let hyper = Hyperparams {
            activation: Activation::Identity,
            hidden: 16,
            ..Hyperparams::default()
        };
        let (model, _) = pretrain(&dataset, &hyper, &ranges(), 2, 6).unwrap();
        let err = gradient_check(&model, (&dataset[0].0, &dataset[0].1));
        // With an identity activation the loss is quadratic in each weight,
        // so the central difference has no truncation term; what remains is
        // cancellation noise of order eps*loss/(2h*grad) on the smallest
        // gradient entries.
        assert!(err < 1.0e-6, "max relative error {err}");
    }

    #[test]
    fn gradient_check_default_network() {
        let dataset = bridge_dataset(15, 30);
        let (model, _) = pretrain(&dataset, &Hyperparams::default(), &ranges(), 2, 8).unwrap();
        let err = gradient_check(&model, (&dataset[1].0, &dataset[1].1));
        assert!(err < 1.0e-5, "max relative error {err}");
    }

    #[test]
    fn gradient_check_zero_weight_network_is_finite() {
        let dataset = bridge_dataset(16, 30);
        let (mut model, _) = pretrain(&dataset, &Hyperparams::default(), &ranges(), 1, 9).unwrap();
        model.w1.fill(0.0);
        model.b1.fill(0.0);
        model.w2.fill(0.0);
        model.b2.fill(0.0);
        let err = gradient_check(&model, (&dataset[2].0, &dataset[2].1));
        assert!(err.is_finite());
        assert!(err < 1.0e-5, "max relative error {err}");
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dataset = bridge_dataset(17, 40);
        let (model, _) = pretrain_10(&Hyperparams::default(), &dataset);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = RegressionModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        let probe = &dataset[3].0;
        assert_eq!(model.predict(probe), loaded.predict(probe));
    }

    #[test]
    fn memorized_example_is_predicted_back() {
        let mut dataset = bridge_dataset(18, 10);
        dataset.truncate(1);
        let repeated: Vec<_> = (0..10).map(|_| dataset[0].clone()).collect();
        let hyper = Hyperparams {
            learning_rate: 0.05,
            ..Hyperparams::default()
        };
        let (model, _) = pretrain(&repeated, &hyper, &ranges(), 300, 3).unwrap();
        let predicted = model.predict(&dataset[0].0);
        let label = &dataset[0].1;
        for (p, t) in predicted.health.iter().zip(label.health.iter()) {
            assert!((p - t).abs() < 1.0e-2);
        }
        assert_eq!(predicted.load_pos, label.load_pos);
    }
}
