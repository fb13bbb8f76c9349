//! Synthetic "physical" world: virtual readings plus injected reality-gap
//! noise from three independent per-sensor normal factors (sensor drift,
//! environment, interaction). The injected parameters are the ground truth
//! that gap estimation is later judged against; estimation code never sees
//! the per-factor draws, only their sum inside a physical reading.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::{child_seed, hex_digest, stream};
use crate::truss::{AssetConfiguration, SensorDomain, SensorVector, TrussError, TrussModel};
use crate::SENSOR_COUNT;

/// Default injection magnitudes: a few percent of the ~0.01 m signal.
pub const DEFAULT_MEAN_RANGE_M: f64 = 5.0e-4;
pub const DEFAULT_STD_MIN_M: f64 = 1.0e-4;
pub const DEFAULT_STD_MAX_M: f64 = 5.0e-4;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("invalid gap spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Truss(#[from] TrussError),
    #[error("cannot read gap spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse gap spec {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One normal factor, N(mean, std^2), in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub mean_m: f64,
    pub std_m: f64,
}

impl FactorParams {
    pub const ZERO: FactorParams = FactorParams {
        mean_m: 0.0,
        std_m: 0.0,
    };
}

/// The three injected factors for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorGapSpec {
    pub drift: FactorParams,
    pub environment: FactorParams,
    pub interaction: FactorParams,
}

impl SensorGapSpec {
    pub const ZERO: SensorGapSpec = SensorGapSpec {
        drift: FactorParams::ZERO,
        environment: FactorParams::ZERO,
        interaction: FactorParams::ZERO,
    };

    fn factors(&self) -> [FactorParams; 3] {
        [self.drift, self.environment, self.interaction]
    }
}

/// Ground-truth injection parameters for all sensors plus the world seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapInjectionSpec {
    pub sensors: Vec<SensorGapSpec>,
    pub seed: u64,
}

impl GapInjectionSpec {
    /// Zero-gap world: physical readings equal virtual readings exactly.
    pub fn zero(seed: u64) -> Self {
        GapInjectionSpec {
            sensors: vec![SensorGapSpec::ZERO; SENSOR_COUNT],
            seed,
        }
    }

    /// Draws per-sensor factor parameters once from a meta stream: means
    /// uniform in +-[`DEFAULT_MEAN_RANGE_M`], stds uniform in
    /// [`DEFAULT_STD_MIN_M`, `DEFAULT_STD_MAX_M`]. The world seed is derived
    /// from the same meta seed and frozen into the spec.
    pub fn sample_default(meta_seed: u64) -> Self {
        let mut rng = stream(meta_seed, "gap-spec", 0);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| FactorParams {
            mean_m: rng.random_range(-DEFAULT_MEAN_RANGE_M..=DEFAULT_MEAN_RANGE_M),
            std_m: rng.random_range(DEFAULT_STD_MIN_M..=DEFAULT_STD_MAX_M),
        };
        let sensors = (0..SENSOR_COUNT)
            .map(|_| SensorGapSpec {
                drift: draw(&mut rng),
                environment: draw(&mut rng),
                interaction: draw(&mut rng),
            })
            .collect();
        GapInjectionSpec {
            sensors,
            seed: child_seed(meta_seed, "gap-world", 0),
        }
    }

    pub fn validate(&self) -> Result<(), GapError> {
        if self.sensors.len() != SENSOR_COUNT {
            return Err(GapError::InvalidSpec(format!(
                "{} sensor entries, expected {SENSOR_COUNT}",
                self.sensors.len()
            )));
        }
        for (i, sensor) in self.sensors.iter().enumerate() {
            for factor in sensor.factors() {
                if !(factor.mean_m.is_finite() && factor.std_m.is_finite() && factor.std_m >= 0.0)
                {
                    return Err(GapError::InvalidSpec(format!(
                        "sensor {i} has a non-finite mean or negative std"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Closed-form total gap per sensor: mean = sum of factor means,
    /// variance = sum of factor variances (independent normals).
    pub fn total_gap_distribution(&self) -> Vec<(f64, f64)> {
        self.sensors
            .iter()
            .map(|s| {
                let mean = s.drift.mean_m + s.environment.mean_m + s.interaction.mean_m;
                let var = s.drift.std_m.powi(2)
                    + s.environment.std_m.powi(2)
                    + s.interaction.std_m.powi(2);
                (mean, var)
            })
            .collect()
    }

    /// One fresh draw per factor per sensor; draw order is sensor-major,
    /// factors in (drift, environment, interaction) order.
    pub fn draw_factors<R: Rng>(&self, rng: &mut R) -> GapDraws {
        let mut draws = GapDraws {
            drift: Vec::with_capacity(SENSOR_COUNT),
            environment: Vec::with_capacity(SENSOR_COUNT),
            interaction: Vec::with_capacity(SENSOR_COUNT),
        };
        for sensor in &self.sensors {
            // mean + std*z keeps zero-std factors bit-exact.
            for (factor, out) in [
                (sensor.drift, &mut draws.drift),
                (sensor.environment, &mut draws.environment),
                (sensor.interaction, &mut draws.interaction),
            ] {
                let z: f64 = StandardNormal.sample(rng);
                out.push(factor.mean_m + factor.std_m * z);
            }
        }
        draws
    }

    pub fn save(&self, path: &Path) -> Result<(), GapError> {
        let text = serde_json::to_string_pretty(self).expect("gap spec serializes");
        fs::write(path, text).map_err(|source| GapError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GapError> {
        let text = fs::read_to_string(path).map_err(|source| GapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: GapInjectionSpec =
            serde_json::from_str(&text).map_err(|source| GapError::Json {
                path: path.display().to_string(),
                source,
            })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("gap spec serializes");
        hex_digest(canonical.as_bytes())
    }
}

/// Hidden per-factor draws behind one observation. Retained for test oracles
/// only; estimation code must consume nothing but the physical reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDraws {
    pub drift: Vec<f64>,
    pub environment: Vec<f64>,
    pub interaction: Vec<f64>,
}

impl GapDraws {
    pub fn total(&self, sensor: usize) -> f64 {
        self.drift[sensor] + self.environment[sensor] + self.interaction[sensor]
    }
}

/// One observation of the emulated physical asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldInstance {
    pub config: AssetConfiguration,
    pub physical: SensorVector,
    pub draws: GapDraws,
}

/// Observes the world once: physical = virtual(config) + drift + environment
/// + interaction, exactly. Advancing `rng` yields independent observations.
pub fn observe<R: Rng>(
    model: &TrussModel,
    config: &AssetConfiguration,
    spec: &GapInjectionSpec,
    rng: &mut R,
) -> Result<WorldInstance, GapError> {
    spec.validate()?;
    let virtual_readings = model.simulate(config)?;
    let draws = spec.draw_factors(rng);
    let values = virtual_readings
        .values()
        .iter()
        .enumerate()
        .map(|(j, &v)| v + draws.drift[j] + draws.environment[j] + draws.interaction[j])
        .collect();
    let physical = SensorVector::new(values, SensorDomain::Physical).map_err(TrussError::from)?;
    Ok(WorldInstance {
        config: config.clone(),
        physical,
        draws,
    })
}

/// Observation keyed by a stable instance index: the same (spec seed, index)
/// always yields the same draws, independent of observation order.
pub fn observe_indexed(
    model: &TrussModel,
    config: &AssetConfiguration,
    spec: &GapInjectionSpec,
    index: u64,
) -> Result<WorldInstance, GapError> {
    let mut rng = stream(spec.seed, "instance", index);
    observe(model, config, spec, &mut rng)
}
