//! Seeded sampling of asset configurations over the declared operating
//! ranges, and bulk generation of design-phase simulation records.
//!
//! Draw shapes: health uniform per group, load position uniform over the
//! declared band, temperature uniform, load truncated-normal centred on the
//! band midpoint (±2.5 sigma band edges). The truncated-normal load keeps the
//! per-sensor reading marginals close to normal, which the repository's
//! confidence-interval novelty rule is calibrated against.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::OperatingRanges;
use crate::repository::{logical_timestamp, Provenance, RepositoryRecord};
use crate::seeds::{child_seed, stream};
use crate::truss::{AssetConfiguration, TrussError, TrussModel};
use crate::GROUP_COUNT;

/// Number of band standard deviations between the load-band midpoint and
/// either edge; draws outside the band are rejected and redrawn.
const LOAD_BAND_SIGMAS: f64 = 2.5;

#[derive(Debug, Clone)]
pub struct ConfigSampler {
    ranges: OperatingRanges,
}

impl ConfigSampler {
    pub fn new(ranges: OperatingRanges) -> Self {
        ConfigSampler { ranges }
    }

    pub fn ranges(&self) -> &OperatingRanges {
        &self.ranges
    }

    /// Draws one configuration. Draw order is fixed (health groups, load,
    /// position, temperature) so streams stay reproducible.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> AssetConfiguration {
        let r = &self.ranges;
        let mut health = [1.0; GROUP_COUNT];
        for h in health.iter_mut() {
            *h = rng.random_range(r.health_min..=1.0);
        }
        let mid = 0.5 * (r.load_min_n + r.load_max_n);
        let sigma = (r.load_max_n - r.load_min_n) / (2.0 * LOAD_BAND_SIGMAS);
        let load_n = loop {
            let z: f64 = StandardNormal.sample(rng);
            let candidate = mid + sigma * z;
            if candidate >= r.load_min_n && candidate <= r.load_max_n {
                break candidate;
            }
        };
        let load_pos = rng.random_range(r.load_pos_min..=r.load_pos_max);
        let temp_c = rng.random_range(r.temp_min_c..=r.temp_max_c);
        AssetConfiguration {
            health,
            load_n,
            load_pos,
            temp_c,
        }
    }

    /// `count` configurations on independent child streams of `seed`, so
    /// record `i` is reproducible without drawing records `0..i`.
    pub fn sample_many(&self, seed: u64, count: usize) -> Vec<AssetConfiguration> {
        (0..count)
            .map(|i| {
                let mut rng = stream(seed, "config", i as u64);
                self.sample(&mut rng)
            })
            .collect()
    }
}

/// Simulates `count` sampled configurations into design-sim repository
/// records. Record `i` carries the child seed that drew its configuration
/// and a logical timestamp, so regeneration is byte-identical.
pub fn generate_design_records(
    model: &TrussModel,
    seed: u64,
    count: usize,
) -> Result<Vec<RepositoryRecord>, TrussError> {
    let sampler = ConfigSampler::new(model.limits().clone());
    let configs = sampler.sample_many(seed, count);
    let readings = model.simulate_batch(&configs)?;
    Ok(configs
        .into_iter()
        .zip(readings)
        .enumerate()
        .map(|(i, (config, sensors))| RepositoryRecord {
            config,
            sensors: sensors.into_values(),
            prov: Provenance::DesignSim,
            tags: Vec::new(),
            ts: logical_timestamp(i as i64),
            seed: child_seed(seed, "config", i as u64),
        })
        .collect())
}
