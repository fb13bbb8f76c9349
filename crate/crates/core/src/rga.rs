//! Reality-gap analysis: residuals of physical readings against virtual
//! sensors, robust per-sensor normal fitting of the gap, construction of the
//! sim-to-real fine-tuning dataset, and detachment of physical readings back
//! into the simulation domain.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regressor::RegressionModel;
use crate::repository::{RepositoryRecord, Z_975};
use crate::seeds::{hex_digest, stream};
use crate::truss::{AssetConfiguration, SensorDomain, SensorVector, TrussError, TrussModel};
use crate::SENSOR_COUNT;

/// Mass dropped from each residual tail before fitting ("95% confidence").
pub const TRIM_FRACTION: f64 = 0.025;

/// Minimum residuals per sensor so trimming leaves a usable sample.
pub const MIN_WINDOW: usize = 40;

#[derive(Debug, Error)]
pub enum RgaError {
    #[error("no instances in validation window")]
    EmptyWindow,
    #[error("insufficient validation data for sensor {sensor}: {n} residuals, need {need}")]
    InsufficientValidation {
        sensor: usize,
        n: usize,
        need: usize,
    },
    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: TrussError,
    },
    #[error("gap set has {got} sensors, expected {expected}")]
    WrongWidth { got: usize, expected: usize },
    #[error(transparent)]
    Truss(#[from] TrussError),
}

/// Per-sensor residual lists (physical minus virtual), one entry per
/// validation instance, instance order preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPool {
    per_sensor: Vec<Vec<f64>>,
}

impl ResidualPool {
    pub fn window(&self) -> usize {
        self.per_sensor[0].len()
    }

    pub fn sensor(&self, j: usize) -> &[f64] {
        &self.per_sensor[j]
    }
}

/// Estimated total-gap normal for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub mean_m: f64,
    pub std_m: f64,
    /// Residuals kept after trimming.
    pub kept: usize,
}

/// Estimated per-sensor gap distributions plus fit metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDistributionSet {
    pub sensors: Vec<GapEstimate>,
    pub window: usize,
    pub trim_fraction: f64,
}

impl GapDistributionSet {
    /// Zero-gap estimate (means and stds all zero); useful as a neutral
    /// element in tests and zero-injection runs.
    pub fn zero(window: usize) -> Self {
        GapDistributionSet {
            sensors: vec![
                GapEstimate {
                    mean_m: 0.0,
                    std_m: 0.0,
                    kept: window,
                };
                SENSOR_COUNT
            ],
            window,
            trim_fraction: TRIM_FRACTION,
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.mean_m).collect()
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("gap set serializes");
        hex_digest(canonical.as_bytes())
    }

    pub fn validate(&self) -> Result<(), RgaError> {
        if self.sensors.len() != SENSOR_COUNT {
            return Err(RgaError::WrongWidth {
                got: self.sensors.len(),
                expected: SENSOR_COUNT,
            });
        }
        Ok(())
    }
}

/// Residuals of each physical reading against the virtual reading simulated
/// at its (predicted) configuration.
pub fn compute_residuals(
    instances: &[(SensorVector, AssetConfiguration)],
    model: &TrussModel,
) -> Result<ResidualPool, RgaError> {
    if instances.is_empty() {
        return Err(RgaError::EmptyWindow);
    }
    let mut per_sensor = vec![Vec::with_capacity(instances.len()); SENSOR_COUNT];
    for (index, (physical, predicted)) in instances.iter().enumerate() {
        let virtual_readings = model
            .simulate(predicted)
            .map_err(|source| RgaError::Instance { index, source })?;
        for (j, (p, v)) in physical
            .values()
            .iter()
            .zip(virtual_readings.values())
            .enumerate()
        {
            per_sensor[j].push(p - v);
        }
    }
    Ok(ResidualPool { per_sensor })
}

/// Sorts a sample, drops `floor(TRIM_FRACTION * n)` from each tail, and
/// returns (mean, n-1 std, kept count) of the central mass.
pub fn trimmed_fit(values: &[f64]) -> (f64, f64, usize) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let drop = (TRIM_FRACTION * sorted.len() as f64).floor() as usize;
    let kept = &sorted[drop..sorted.len() - drop];
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt(), kept.len())
}

/// Ratio between the expected 2.5%/2.5%-trimmed std of a normal sample and
/// the true sigma: sqrt(1 - 2 z phi(z) / 0.95) with z the 97.5% quantile.
/// Dividing the trimmed std by this restores a consistent sigma estimate.
pub fn trim_consistency() -> f64 {
    let z = Z_975;
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (1.0 - 2.0 * z * phi / (1.0 - 2.0 * TRIM_FRACTION)).sqrt()
}

/// Fits one normal per sensor on the trimmed residuals. The trimmed std is
/// rescaled by [`trim_consistency`] so the estimate converges to the true
/// total-gap sigma rather than to 87% of it.
pub fn fit_gap_distributions(pool: &ResidualPool) -> Result<GapDistributionSet, RgaError> {
    let correction = trim_consistency();
    let mut sensors = Vec::with_capacity(SENSOR_COUNT);
    for j in 0..SENSOR_COUNT {
        let residuals = pool.sensor(j);
        if residuals.len() < MIN_WINDOW {
            return Err(RgaError::InsufficientValidation {
                sensor: j,
                n: residuals.len(),
                need: MIN_WINDOW,
            });
        }
        let (mean, raw_std, kept) = trimmed_fit(residuals);
        sensors.push(GapEstimate {
            mean_m: mean,
            std_m: raw_std / correction,
            kept,
        });
    }
    Ok(GapDistributionSet {
        sensors,
        window: pool.window(),
        trim_fraction: TRIM_FRACTION,
    })
}

/// Builds the sim-to-real fine-tuning dataset: each design record's sensors
/// plus one fresh draw per sensor from the estimated gap normal, labelled
/// with the record's configuration. Record `i` uses its own child stream of
/// `seed`, so the dataset is prefix-stable and reproducible.
pub fn build_finetune_dataset(
    records: &[&RepositoryRecord],
    gaps: &GapDistributionSet,
    seed: u64,
) -> Result<Vec<(SensorVector, AssetConfiguration)>, RgaError> {
    gaps.validate()?;
    let mut dataset = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let mut rng = stream(seed, "finetune", i as u64);
        let values: Vec<f64> = record
            .sensors
            .iter()
            .zip(&gaps.sensors)
            .map(|(&x, g)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + (g.mean_m + g.std_m * z)
            })
            .collect();
        let sensors =
            SensorVector::new(values, SensorDomain::Physical).map_err(TrussError::from)?;
        dataset.push((sensors, record.config.clone()));
    }
    Ok(dataset)
}

/// Real-to-sim detachment: predicts the configuration behind a physical
/// reading and removes the estimated gap mean from every sensor, yielding
/// the reading's simulation-domain approximation.
pub fn detach(
    physical: &SensorVector,
    gaps: &GapDistributionSet,
    model: &RegressionModel,
    truss: &TrussModel,
) -> Result<(SensorVector, AssetConfiguration), RgaError> {
    gaps.validate()?;
    let predicted = model.predict(physical);
    // The clamped prediction must be simulatable on this structure.
    truss.validate_configuration(&predicted)?;
    let values: Vec<f64> = physical
        .values()
        .iter()
        .zip(&gaps.sensors)
        .map(|(&p, g)| p - g.mean_m)
        .collect();
    let detached =
        SensorVector::new(values, SensorDomain::Detached).map_err(TrussError::from)?;
    Ok((detached, predicted))
}
