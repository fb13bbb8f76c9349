//! Browser bindings for the truss twin. One `Workbench` instance holds the
//! structural model, a seeded gap world and an in-memory design repository;
//! its methods return JSON strings so the page renders with plain JS.
//!
//! Everything is deterministic in the constructor seed, mirroring the CLI:
//! the same seed shows the same world in the browser and in a run report.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dtgap_core::config::StructureConfig;
use dtgap_core::gap::observe_indexed;
use dtgap_core::rga::{compute_residuals, fit_gap_distributions};
use dtgap_core::sampler::{generate_design_records, ConfigSampler};
use dtgap_core::seeds::child_seed;
use dtgap_core::{
    AssetConfiguration, GapInjectionSpec, Repository, SensorVector, TrussModel, GROUP_COUNT,
};

/// Largest validation window the page may request; keeps a misclick from
/// freezing the tab.
const MAX_FIT_WINDOW: usize = 20_000;

#[derive(Serialize)]
struct MemberView {
    start: usize,
    end: usize,
    group: &'static str,
}

#[derive(Serialize)]
struct GeometryView {
    nodes: Vec<[f64; 2]>,
    members: Vec<MemberView>,
    sensors: Vec<usize>,
    bottoms: Vec<usize>,
    groups: Vec<&'static str>,
}

#[derive(Serialize)]
struct DeformationView {
    /// Per-node displacement in meters; the page applies exaggeration.
    displacements: Vec<[f64; 2]>,
    readings: Vec<f64>,
    max_abs_m: f64,
}

#[derive(Serialize)]
struct ObservationView {
    virtual_m: Vec<f64>,
    physical_m: Vec<f64>,
    novel: bool,
    flagged: Vec<usize>,
}

#[derive(Serialize)]
struct SensorFitView {
    sensor: usize,
    injected_mean: f64,
    injected_std: f64,
    estimated_mean: f64,
    estimated_std: f64,
}

#[derive(Serialize)]
struct GapFitView {
    window: usize,
    kept_per_sensor: usize,
    sensors: Vec<SensorFitView>,
    worst_mean_err_sigma: f64,
    worst_std_err_rel: f64,
}

#[wasm_bindgen]
pub struct Workbench {
    truss: TrussModel,
    spec: GapInjectionSpec,
    repo: Repository,
    seed: u64,
}

impl Workbench {
    /// Native-callable constructor; the bindgen constructor delegates here.
    pub fn build(seed: u32, design_records: usize) -> Result<Workbench, String> {
        let seed = seed as u64;
        let truss = TrussModel::bridge(&StructureConfig::default()).map_err(stringify)?;
        let spec = GapInjectionSpec::sample_default(child_seed(seed, "gap", 0));
        let mut repo = Repository::in_memory();
        let records = generate_design_records(&truss, child_seed(seed, "design", 0), design_records)
            .map_err(stringify)?;
        repo.ingest(records).map_err(stringify)?;
        Ok(Workbench {
            truss,
            spec,
            repo,
            seed,
        })
    }

    fn config_from(
        &self,
        health: &[f64],
        load_n: f64,
        load_pos: usize,
        temp_c: f64,
    ) -> Result<AssetConfiguration, String> {
        if health.len() != GROUP_COUNT {
            return Err(format!(
                "expected {GROUP_COUNT} member-group health values, got {}",
                health.len()
            ));
        }
        let mut config = AssetConfiguration::baseline(load_n, load_pos, temp_c);
        config.health.copy_from_slice(health);
        self.truss
            .validate_configuration(&config)
            .map_err(stringify)?;
        Ok(config)
    }

    pub fn geometry_json(&self) -> String {
        let view = GeometryView {
            nodes: self.truss.nodes().to_vec(),
            members: self
                .truss
                .members()
                .iter()
                .map(|m| MemberView {
                    start: m.start,
                    end: m.end,
                    group: m.group.label(),
                })
                .collect(),
            sensors: self.truss.sensor_nodes().to_vec(),
            bottoms: self.truss.bottom_nodes().to_vec(),
            groups: dtgap_core::truss::MemberGroup::ALL
                .iter()
                .map(|g| g.label())
                .collect(),
        };
        serde_json::to_string(&view).expect("geometry serializes")
    }

    pub fn deformed_json(
        &self,
        health: &[f64],
        load_n: f64,
        load_pos: usize,
        temp_c: f64,
    ) -> Result<String, String> {
        let config = self.config_from(health, load_n, load_pos, temp_c)?;
        let displacements = self.truss.node_displacements(&config).map_err(stringify)?;
        let readings = self.truss.simulate(&config).map_err(stringify)?;
        let max_abs_m = readings.max_abs();
        let view = DeformationView {
            displacements,
            readings: readings.into_values(),
            max_abs_m,
        };
        Ok(serde_json::to_string(&view).expect("deformation serializes"))
    }

    pub fn observe_json(
        &self,
        health: &[f64],
        load_n: f64,
        load_pos: usize,
        temp_c: f64,
        index: u32,
    ) -> Result<String, String> {
        let config = self.config_from(health, load_n, load_pos, temp_c)?;
        let virtual_reading = self.truss.simulate(&config).map_err(stringify)?;
        let instance =
            observe_indexed(&self.truss, &config, &self.spec, index as u64).map_err(stringify)?;
        let (novel, flagged) = self
            .repo
            .is_novel(instance.physical.values())
            .map_err(stringify)?;
        let view = ObservationView {
            virtual_m: virtual_reading.into_values(),
            physical_m: instance.physical.into_values(),
            novel,
            flagged,
        };
        Ok(serde_json::to_string(&view).expect("observation serializes"))
    }

    pub fn estimate_gaps_json(&self, window: usize) -> Result<String, String> {
        let window = window.min(MAX_FIT_WINDOW);
        let sampler = ConfigSampler::new(self.truss.limits().clone());
        let configs = sampler.sample_many(child_seed(self.seed, "fit", 0), window);
        let instances: Result<Vec<(SensorVector, AssetConfiguration)>, String> = configs
            .into_iter()
            .enumerate()
            .map(|(i, config)| {
                let instance = observe_indexed(&self.truss, &config, &self.spec, i as u64)
                    .map_err(stringify)?;
                Ok((instance.physical, config))
            })
            .collect();
        let pool = compute_residuals(&instances?, &self.truss).map_err(stringify)?;
        let fitted = fit_gap_distributions(&pool).map_err(stringify)?;
        let closed = self.spec.total_gap_distribution();

        let mut worst_mean = 0.0f64;
        let mut worst_std = 0.0f64;
        let sensors: Vec<SensorFitView> = fitted
            .sensors
            .iter()
            .zip(&closed)
            .enumerate()
            .map(|(sensor, (est, &(mean, variance)))| {
                let sigma = variance.sqrt();
                worst_mean = worst_mean.max((est.mean_m - mean).abs() / sigma);
                worst_std = worst_std.max((est.std_m - sigma).abs() / sigma);
                SensorFitView {
                    sensor,
                    injected_mean: mean,
                    injected_std: sigma,
                    estimated_mean: est.mean_m,
                    estimated_std: est.std_m,
                }
            })
            .collect();
        let view = GapFitView {
            window,
            kept_per_sensor: fitted.sensors.first().map_or(0, |s| s.kept),
            sensors,
            worst_mean_err_sigma: worst_mean,
            worst_std_err_rel: worst_std,
        };
        Ok(serde_json::to_string(&view).expect("gap fit serializes"))
    }
}

fn stringify(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn to_js(err: String) -> JsValue {
    JsValue::from_str(&err)
}

#[wasm_bindgen]
impl Workbench {
    /// `seed` fixes the gap world and the design repository;
    /// `design_records` sets how much history the novelty screen knows.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, design_records: usize) -> Result<Workbench, JsValue> {
        Workbench::build(seed, design_records).map_err(to_js)
    }

    /// Static bridge geometry for drawing.
    pub fn geometry(&self) -> String {
        self.geometry_json()
    }

    /// Displacements and sensor readings for one configuration.
    pub fn deformed(
        &self,
        health: &[f64],
        load_n: f64,
        load_pos: usize,
        temp_c: f64,
    ) -> Result<String, JsValue> {
        self.deformed_json(health, load_n, load_pos, temp_c)
            .map_err(to_js)
    }

    /// One gap-injected observation plus its novelty screening.
    pub fn observe(
        &self,
        health: &[f64],
        load_n: f64,
        load_pos: usize,
        temp_c: f64,
        index: u32,
    ) -> Result<String, JsValue> {
        self.observe_json(health, load_n, load_pos, temp_c, index)
            .map_err(to_js)
    }

    /// Trimmed-fit gap estimates on a seeded validation window, next to the
    /// injected closed form they should recover.
    pub fn estimate_gaps(&self, window: usize) -> Result<String, JsValue> {
        self.estimate_gaps_json(window).map_err(to_js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workbench() -> Workbench {
        Workbench::build(7, 300).expect("workbench builds")
    }

    #[test]
    fn geometry_lists_the_full_bridge() {
        let geometry: serde_json::Value =
            serde_json::from_str(&workbench().geometry_json()).unwrap();
        assert_eq!(geometry["nodes"].as_array().unwrap().len(), 44);
        assert_eq!(geometry["members"].as_array().unwrap().len(), 86);
        assert_eq!(geometry["sensors"].as_array().unwrap().len(), 42);
        assert_eq!(geometry["groups"].as_array().unwrap().len(), GROUP_COUNT);
    }

    #[test]
    fn unloaded_bridge_does_not_deform() {
        let bench = workbench();
        let json = bench
            .deformed_json(&[1.0; GROUP_COUNT], 0.0, 11, 20.0)
            .unwrap();
        let view: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(view["max_abs_m"], 0.0);
        for pair in view["displacements"].as_array().unwrap() {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 0.0);
        }
    }

    #[test]
    fn invalid_health_is_rejected_with_a_message() {
        let bench = workbench();
        let err = bench
            .deformed_json(&[1.0, 1.0, 1.0], 1.0e4, 11, 20.0)
            .unwrap_err();
        assert!(err.contains("health"), "unhelpful message: {err}");
        let err = bench
            .deformed_json(&[0.0; GROUP_COUNT], 1.0e4, 11, 20.0)
            .unwrap_err();
        assert!(!err.is_empty());
    }

    #[test]
    fn observations_are_deterministic_per_index() {
        let bench = workbench();
        let health = [0.9, 1.0, 0.8, 1.0, 0.95];
        let first = bench.observe_json(&health, 1.5e4, 10, 25.0, 3).unwrap();
        let again = bench.observe_json(&health, 1.5e4, 10, 25.0, 3).unwrap();
        assert_eq!(first, again);
        let other = bench.observe_json(&health, 1.5e4, 10, 25.0, 4).unwrap();
        assert_ne!(first, other);

        let view: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert_eq!(view["virtual_m"].as_array().unwrap().len(), 42);
        assert_eq!(view["physical_m"].as_array().unwrap().len(), 42);
    }

    #[test]
    fn estimated_gaps_track_the_injected_world() {
        let bench = workbench();
        let json = bench.estimate_gaps_json(800).unwrap();
        let view: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(view["sensors"].as_array().unwrap().len(), 42);
        assert_eq!(view["window"], 800);
        // Loose bounds: the page's default window is small by design.
        assert!(view["worst_mean_err_sigma"].as_f64().unwrap() < 0.2);
        assert!(view["worst_std_err_rel"].as_f64().unwrap() < 0.2);
    }
}
