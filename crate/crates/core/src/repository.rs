//! Historical repository: append-only store of (configuration, sensors)
//! records with provenance, plus per-sensor summary statistics used for
//! confidence-interval novelty detection.
//!
//! On-disk layout is a `records.jsonl` file (one record per line, schema
//! documented on [`RepositoryRecord`]) and a `manifest.json` sidecar that is
//! atomically replaced after every write. Opening verifies the manifest
//! against a full recompute from the records.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::truss::AssetConfiguration;
use crate::SENSOR_COUNT;

/// Standard-normal 97.5% quantile; |x - mean| > Z_975 * std flags a sensor.
pub const Z_975: f64 = 1.959963984540054;

/// Schema version stamped into manifests and checked on open.
pub const REPOSITORY_SCHEMA_VERSION: u32 = 1;

const RECORDS_FILE: &str = "records.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

/// Fixed origin for logical timestamps (2025-01-01T00:00:00Z). Records get
/// deterministic timestamps so regenerated repositories are byte-identical.
const LOGICAL_EPOCH: i64 = 1_735_689_600;

/// Deterministic insertion timestamp: the logical epoch plus `index` seconds.
pub fn logical_timestamp(index: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(LOGICAL_EPOCH + index, 0).unwrap()
}

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("repository io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {source}")]
    MalformedRecord {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("repository schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("insufficient repository statistics: {n} records, need at least 2")]
    InsufficientStats { n: usize },
    #[error("record is not novel; pass force to augment anyway")]
    NotNovel,
    #[error("manifest inconsistent with records: {0}")]
    Inconsistent(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("repository already exists at {0}")]
    AlreadyExists(String),
    #[error("reading has {got} sensors, expected {expected}")]
    WrongWidth { got: usize, expected: usize },
    #[error("malformed manifest: {0}")]
    MalformedManifest(serde_json::Error),
}

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "design-sim")]
    DesignSim,
    #[serde(rename = "deployment-detached")]
    DeploymentDetached,
}

/// One stored row. JSONL line schema:
/// `{"config":{"health":[5 floats],"load_n":f,"load_pos":int,"temp_c":f},
///   "sensors":[42 floats],"prov":"design-sim"|"deployment-detached",
///   "tags":[strings],"ts":iso8601,"seed":u64}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepositoryRecord {
    pub config: AssetConfiguration,
    pub sensors: Vec<f64>,
    pub prov: Provenance,
    pub tags: Vec<String>,
    pub ts: DateTime<Utc>,
    pub seed: u64,
}

impl RepositoryRecord {
    fn validate(&self) -> Result<(), RepositoryError> {
        if self.sensors.len() != SENSOR_COUNT {
            return Err(RepositoryError::InvalidRecord(format!(
                "{} sensors, expected {SENSOR_COUNT}",
                self.sensors.len()
            )));
        }
        if let Some(i) = self.sensors.iter().position(|v| !v.is_finite()) {
            return Err(RepositoryError::InvalidRecord(format!(
                "sensor {i} is not finite"
            )));
        }
        Ok(())
    }
}

/// Per-sensor summary over all records; std is the n-1 sample std, zero when
/// fewer than two records exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepositoryManifest {
    pub schema_version: u32,
    pub count: usize,
    /// Number of records folded into the stats; always equals `count` after
    /// a completed write.
    pub watermark: usize,
    pub sensors: Vec<SensorStat>,
}

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Filter for [`Repository::query`]; `None` fields match everything. Range
/// bounds are inclusive; the health range must hold for every group.
#[derive(Debug, Clone, Default)]
pub struct RecordFilter {
    pub provenance: Option<Provenance>,
    pub tag: Option<String>,
    pub health: Option<(f64, f64)>,
    pub load_n: Option<(f64, f64)>,
    pub load_pos: Option<(usize, usize)>,
    pub temp_c: Option<(f64, f64)>,
}

impl RecordFilter {
    pub fn all() -> Self {
        RecordFilter::default()
    }

    pub fn design_sim() -> Self {
        RecordFilter {
            provenance: Some(Provenance::DesignSim),
            ..RecordFilter::default()
        }
    }

    fn validate(&self) -> Result<(), RepositoryError> {
        for (name, range) in [
            ("health", self.health),
            ("load_n", self.load_n),
            ("temp_c", self.temp_c),
        ] {
            if let Some((lo, hi)) = range {
                if !(lo <= hi) {
                    return Err(RepositoryError::InvalidFilter(format!(
                        "{name} range [{lo}, {hi}] is empty"
                    )));
                }
            }
        }
        if let Some((lo, hi)) = self.load_pos {
            if lo > hi {
                return Err(RepositoryError::InvalidFilter(format!(
                    "load_pos range [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }

    fn matches(&self, record: &RepositoryRecord) -> bool {
        if let Some(p) = self.provenance {
            if record.prov != p {
                return false;
            }
        }
        if let Some(tag) = &self.tag {
            if !record.tags.iter().any(|t| t == tag) {
                return false;
            }
        }
        if let Some((lo, hi)) = self.health {
            if !record.config.health.iter().all(|&h| h >= lo && h <= hi) {
                return false;
            }
        }
        if let Some((lo, hi)) = self.load_n {
            if !(record.config.load_n >= lo && record.config.load_n <= hi) {
                return false;
            }
        }
        if let Some((lo, hi)) = self.load_pos {
            if !(record.config.load_pos >= lo && record.config.load_pos <= hi) {
                return false;
            }
        }
        if let Some((lo, hi)) = self.temp_c {
            if !(record.config.temp_c >= lo && record.config.temp_c <= hi) {
                return false;
            }
        }
        true
    }
}

/// In-memory record set plus running stats, optionally backed by a
/// directory. Records are never mutated or deleted once ingested.
#[derive(Debug, Clone)]
pub struct Repository {
    records: Vec<RepositoryRecord>,
    stats: Vec<Welford>,
    dir: Option<PathBuf>,
}

impl Repository {
    pub fn in_memory() -> Self {
        Repository {
            records: Vec::new(),
            stats: vec![Welford::default(); SENSOR_COUNT],
            dir: None,
        }
    }

    /// Creates a fresh directory-backed repository; refuses to clobber one
    /// that already has records.
    pub fn create(dir: &Path) -> Result<Self, RepositoryError> {
        let records_path = dir.join(RECORDS_FILE);
        if records_path.exists() {
            return Err(RepositoryError::AlreadyExists(dir.display().to_string()));
        }
        fs::create_dir_all(dir).map_err(|source| RepositoryError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut repo = Repository::in_memory();
        repo.dir = Some(dir.to_path_buf());
        fs::write(&records_path, b"").map_err(|source| RepositoryError::Io {
            path: records_path.display().to_string(),
            source,
        })?;
        repo.write_manifest()?;
        Ok(repo)
    }

    /// Opens an existing repository, replays every record into the running
    /// stats and verifies the stored manifest against the recompute.
    pub fn open(dir: &Path) -> Result<Self, RepositoryError> {
        let records_path = dir.join(RECORDS_FILE);
        let text = fs::read_to_string(&records_path).map_err(|source| RepositoryError::Io {
            path: records_path.display().to_string(),
            source,
        })?;
        let mut repo = Repository::in_memory();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: RepositoryRecord =
                serde_json::from_str(line).map_err(|source| RepositoryError::MalformedRecord {
                    line: i + 1,
                    source,
                })?;
            record.validate()?;
            repo.apply(&record);
            repo.records.push(record);
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest_text =
            fs::read_to_string(&manifest_path).map_err(|source| RepositoryError::Io {
                path: manifest_path.display().to_string(),
                source,
            })?;
        let stored: RepositoryManifest =
            serde_json::from_str(&manifest_text).map_err(RepositoryError::MalformedManifest)?;
        if stored.schema_version != REPOSITORY_SCHEMA_VERSION {
            return Err(RepositoryError::SchemaVersion {
                found: stored.schema_version,
                expected: REPOSITORY_SCHEMA_VERSION,
            });
        }
        let recomputed = repo.manifest();
        if stored.count != recomputed.count || stored.watermark != recomputed.watermark {
            return Err(RepositoryError::Inconsistent(format!(
                "stored count {} vs recomputed {}",
                stored.count, recomputed.count
            )));
        }
        for (j, (a, b)) in stored
            .sensors
            .iter()
            .zip(recomputed.sensors.iter())
            .enumerate()
        {
            if (a.mean - b.mean).abs() > 1.0e-12 || (a.std - b.std).abs() > 1.0e-12 || a.n != b.n
            {
                return Err(RepositoryError::Inconsistent(format!(
                    "sensor {j} stats diverge from recompute"
                )));
            }
        }
        repo.dir = Some(dir.to_path_buf());
        Ok(repo)
    }

    /// A private in-memory copy with the same records and stats; used for
    /// what-if augmentation without touching the backing store.
    pub fn detached_copy(&self) -> Repository {
        Repository {
            records: self.records.clone(),
            stats: self.stats.clone(),
            dir: None,
        }
    }

    /// Writes the full current state (records + manifest) under a new
    /// directory, e.g. to persist an augmented copy.
    pub fn save_as(&self, dir: &Path) -> Result<Repository, RepositoryError> {
        let mut copy = self.detached_copy();
        fs::create_dir_all(dir).map_err(|source| RepositoryError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let records_path = dir.join(RECORDS_FILE);
        let mut body = String::new();
        for record in &copy.records {
            body.push_str(&serde_json::to_string(record).expect("record serializes"));
            body.push('\n');
        }
        fs::write(&records_path, body).map_err(|source| RepositoryError::Io {
            path: records_path.display().to_string(),
            source,
        })?;
        copy.dir = Some(dir.to_path_buf());
        copy.write_manifest()?;
        Ok(copy)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn records(&self) -> &[RepositoryRecord] {
        &self.records
    }

    pub fn count(&self) -> usize {
        self.records.len()
    }

    fn apply(&mut self, record: &RepositoryRecord) {
        for (stat, &x) in self.stats.iter_mut().zip(&record.sensors) {
            stat.push(x);
        }
    }

    pub fn manifest(&self) -> RepositoryManifest {
        RepositoryManifest {
            schema_version: REPOSITORY_SCHEMA_VERSION,
            count: self.records.len(),
            watermark: self.records.len(),
            sensors: self
                .stats
                .iter()
                .map(|w| SensorStat {
                    mean: w.mean,
                    std: w.std(),
                    n: w.n,
                })
                .collect(),
        }
    }

    fn write_manifest(&self) -> Result<(), RepositoryError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let manifest = self.manifest();
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let target = dir.join(MANIFEST_FILE);
        fs::write(&tmp, text).map_err(|source| RepositoryError::Io {
            path: tmp.display().to_string(),
            source,
        })?;
        fs::rename(&tmp, &target).map_err(|source| RepositoryError::Io {
            path: target.display().to_string(),
            source,
        })
    }

    fn append_to_store(&self, records: &[RepositoryRecord]) -> Result<(), RepositoryError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(RECORDS_FILE);
        let mut file = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|source| RepositoryError::Io {
                path: path.display().to_string(),
                source,
            })?;
        let mut body = String::new();
        for record in records {
            body.push_str(&serde_json::to_string(record).expect("record serializes"));
            body.push('\n');
        }
        file.write_all(body.as_bytes())
            .map_err(|source| RepositoryError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn ingest(
        &mut self,
        records: Vec<RepositoryRecord>,
    ) -> Result<RepositoryManifest, RepositoryError> {
        self.ingest_with_options(records, false)
    }

    /// Appends records and updates stats incrementally. With `dedup` set,
    /// records exactly equal to an already-stored one are skipped, making
    /// re-ingestion idempotent.
    pub fn ingest_with_options(
        &mut self,
        records: Vec<RepositoryRecord>,
        dedup: bool,
    ) -> Result<RepositoryManifest, RepositoryError> {
        let mut accepted = Vec::with_capacity(records.len());
        for record in records {
            record.validate()?;
            if dedup && self.records.iter().chain(accepted.iter()).any(|r| *r == record) {
                continue;
            }
            accepted.push(record);
        }
        self.append_to_store(&accepted)?;
        for record in accepted {
            self.apply(&record);
            self.records.push(record);
        }
        self.write_manifest()?;
        Ok(self.manifest())
    }

    /// Records matching the filter, ordered by (timestamp, insertion index).
    pub fn query(
        &self,
        filter: &RecordFilter,
    ) -> Result<Vec<&RepositoryRecord>, RepositoryError> {
        filter.validate()?;
        let mut hits: Vec<(usize, &RepositoryRecord)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| filter.matches(r))
            .collect();
        hits.sort_by_key(|(i, r)| (r.ts, *i));
        Ok(hits.into_iter().map(|(_, r)| r).collect())
    }

    /// Per-sensor confidence-interval novelty: sensor j offends when
    /// |x_j - mean_j| > Z_975 * std_j; the reading is novel when any sensor
    /// offends.
    pub fn is_novel(&self, reading: &[f64]) -> Result<(bool, Vec<usize>), RepositoryError> {
        if reading.len() != SENSOR_COUNT {
            return Err(RepositoryError::WrongWidth {
                got: reading.len(),
                expected: SENSOR_COUNT,
            });
        }
        if self.records.len() < 2 {
            return Err(RepositoryError::InsufficientStats {
                n: self.records.len(),
            });
        }
        let mut offending = Vec::new();
        for (j, (stat, &x)) in self.stats.iter().zip(reading).enumerate() {
            if (x - stat.mean).abs() > Z_975 * stat.std() {
                offending.push(j);
            }
        }
        Ok((!offending.is_empty(), offending))
    }

    /// Ingests a detached reading as a new critical condition. Rejects
    /// non-novel records unless `force` is set; forced records are tagged so
    /// the override stays visible.
    pub fn augment(
        &mut self,
        mut record: RepositoryRecord,
        force: bool,
    ) -> Result<RepositoryManifest, RepositoryError> {
        record.validate()?;
        let (novel, _) = self.is_novel(&record.sensors)?;
        if !novel && !force {
            return Err(RepositoryError::NotNovel);
        }
        record.prov = Provenance::DeploymentDetached;
        if !record.tags.iter().any(|t| t == "novel-critical") {
            record.tags.push("novel-critical".to_string());
        }
        if !novel {
            record.tags.push("forced".to_string());
        }
        self.append_to_store(std::slice::from_ref(&record))?;
        self.apply(&record);
        self.records.push(record);
        self.write_manifest()?;
        Ok(self.manifest())
    }
}
