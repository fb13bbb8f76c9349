//! Versioned structure configuration.
//!
//! All structural constants (geometry, member properties, thermal behaviour)
//! and the declared operating ranges live in one key/value text file so that
//! every run can be reproduced from the file plus a seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::hex_digest;

/// Schema version understood by this build.
pub const STRUCTURE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read structure config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse structure config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("structure config schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("invalid structure config: {0}")]
    Invalid(String),
}

/// Declared operating and sampling ranges for asset configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingRanges {
    /// Lowest health factor the sampler draws; validity still allows (0, 1].
    pub health_min: f64,
    pub load_min_n: f64,
    pub load_max_n: f64,
    /// Sampled load positions, inclusive, as bottom-node indices.
    pub load_pos_min: usize,
    pub load_pos_max: usize,
    pub temp_min_c: f64,
    pub temp_max_c: f64,
}

/// Parsed structure configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    pub schema_version: u32,

    // Geometry.
    pub bays: usize,
    pub bay_length_m: f64,
    pub height_m: f64,

    // Member properties per group.
    pub youngs_modulus_pa: f64,
    pub area_bottom_m2: f64,
    pub area_top_m2: f64,
    pub area_vertical_m2: f64,
    pub area_diagonal_m2: f64,

    // Thermal modulus scaling E * (1 - alpha * (T - T_ref)).
    pub thermal_alpha_per_c: f64,
    pub reference_temp_c: f64,

    /// Load used for calibration checks and as the sampler's upper band edge.
    pub reference_load_n: f64,

    pub health_min: f64,
    pub load_min_n: f64,
    pub load_max_n: f64,
    pub load_pos_min: usize,
    pub load_pos_max: usize,
    pub temp_min_c: f64,
    pub temp_max_c: f64,
}

impl StructureConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|err| match err {
            ConfigFileError::Parse { source, .. } => ConfigFileError::Parse {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let config: StructureConfig =
            toml::from_str(text).map_err(|source| ConfigFileError::Parse {
                path: String::from("<inline>"),
                source: Box::new(source),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        if self.schema_version != STRUCTURE_SCHEMA_VERSION {
            return Err(ConfigFileError::SchemaVersion {
                found: self.schema_version,
                expected: STRUCTURE_SCHEMA_VERSION,
            });
        }
        let positive = [
            ("bay_length_m", self.bay_length_m),
            ("height_m", self.height_m),
            ("youngs_modulus_pa", self.youngs_modulus_pa),
            ("area_bottom_m2", self.area_bottom_m2),
            ("area_top_m2", self.area_top_m2),
            ("area_vertical_m2", self.area_vertical_m2),
            ("area_diagonal_m2", self.area_diagonal_m2),
            ("reference_load_n", self.reference_load_n),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigFileError::Invalid(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if self.bays < 2 {
            return Err(ConfigFileError::Invalid(format!(
                "bays must be at least 2, got {}",
                self.bays
            )));
        }
        if !(self.health_min > 0.0 && self.health_min <= 1.0) {
            return Err(ConfigFileError::Invalid(format!(
                "health_min must lie in (0, 1], got {}",
                self.health_min
            )));
        }
        if !(self.load_min_n >= 0.0 && self.load_min_n < self.load_max_n) {
            return Err(ConfigFileError::Invalid(format!(
                "load band [{}, {}] is not a valid range",
                self.load_min_n, self.load_max_n
            )));
        }
        if self.load_pos_min < 1
            || self.load_pos_max >= self.bays
            || self.load_pos_min > self.load_pos_max
        {
            return Err(ConfigFileError::Invalid(format!(
                "load position band [{}, {}] must lie within interior bottom nodes 1..={}",
                self.load_pos_min,
                self.load_pos_max,
                self.bays - 1
            )));
        }
        if !(self.temp_min_c < self.temp_max_c) {
            return Err(ConfigFileError::Invalid(format!(
                "temperature range [{}, {}] is not a valid range",
                self.temp_min_c, self.temp_max_c
            )));
        }
        // Thermal softening must keep the modulus positive across the range.
        let worst = 1.0 - self.thermal_alpha_per_c * (self.temp_max_c - self.reference_temp_c);
        if worst <= 0.0 {
            return Err(ConfigFileError::Invalid(format!(
                "thermal scaling reaches non-positive modulus at {} degC",
                self.temp_max_c
            )));
        }
        Ok(())
    }

    pub fn ranges(&self) -> OperatingRanges {
        OperatingRanges {
            health_min: self.health_min,
            load_min_n: self.load_min_n,
            load_max_n: self.load_max_n,
            load_pos_min: self.load_pos_min,
            load_pos_max: self.load_pos_max,
            temp_min_c: self.temp_min_c,
            temp_max_c: self.temp_max_c,
        }
    }

    /// Fingerprint of the canonical serialized form, recorded in manifests.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex_digest(canonical.as_bytes())
    }
}

/// The versioned default bridge: 21 bays, 42 sensed free nodes.
pub const DEFAULT_STRUCTURE_TOML: &str = include_str!("../data/structure.toml");

impl Default for StructureConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_STRUCTURE_TOML).expect("bundled structure config is valid")
    }
}
