//! Planar truss finite-element model with health, thermal, and load effects.
//!
//! The bridge variant is a Pratt-style truss with 21 bays and an X-braced
//! centre bay, which keeps the geometry mirror-symmetric about midspan while
//! leaving exactly 42 nodes without supports. The vertical displacement of
//! each of those nodes is one sensor channel.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{OperatingRanges, StructureConfig};
use crate::{GROUP_COUNT, SENSOR_COUNT};

/// Member group labels; one health factor applies per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemberGroup {
    BottomChord,
    TopChord,
    Vertical,
    DiagonalLeft,
    DiagonalRight,
}

impl MemberGroup {
    pub const ALL: [MemberGroup; GROUP_COUNT] = [
        MemberGroup::BottomChord,
        MemberGroup::TopChord,
        MemberGroup::Vertical,
        MemberGroup::DiagonalLeft,
        MemberGroup::DiagonalRight,
    ];

    pub fn index(self) -> usize {
        match self {
            MemberGroup::BottomChord => 0,
            MemberGroup::TopChord => 1,
            MemberGroup::Vertical => 2,
            MemberGroup::DiagonalLeft => 3,
            MemberGroup::DiagonalRight => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MemberGroup::BottomChord => "bottom-chord",
            MemberGroup::TopChord => "top-chord",
            MemberGroup::Vertical => "vertical",
            MemberGroup::DiagonalLeft => "diagonal-left",
            MemberGroup::DiagonalRight => "diagonal-right",
        }
    }
}

/// A pin-jointed axial member between two node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub start: usize,
    pub end: usize,
    pub area_m2: f64,
    pub youngs_pa: f64,
    pub group: MemberGroup,
}

/// Nodal support; a pin fixes both axes, a roller only one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Support {
    pub node: usize,
    pub fix_x: bool,
    pub fix_y: bool,
}

/// One asset state: per-group health, point load, its position, temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetConfiguration {
    pub health: [f64; GROUP_COUNT],
    pub load_n: f64,
    pub load_pos: usize,
    pub temp_c: f64,
}

impl AssetConfiguration {
    /// Undamaged structure at the reference temperature.
    pub fn baseline(load_n: f64, load_pos: usize, temp_c: f64) -> Self {
        AssetConfiguration {
            health: [1.0; GROUP_COUNT],
            load_n,
            load_pos,
            temp_c,
        }
    }
}

/// Which side of the reality gap a reading vector belongs to. Detached
/// readings are physicals with the estimated gap mean removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorDomain {
    Virtual,
    Physical,
    Detached,
}

#[derive(Debug, Error)]
pub enum SensorVectorError {
    #[error("sensor vector has {got} values, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("sensor value at index {index} is not finite")]
    NonFinite { index: usize },
}

/// Fixed-width vector of vertical-displacement readings in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorVector {
    values: Vec<f64>,
    domain: SensorDomain,
}

impl SensorVector {
    pub fn new(values: Vec<f64>, domain: SensorDomain) -> Result<Self, SensorVectorError> {
        if values.len() != SENSOR_COUNT {
            return Err(SensorVectorError::WrongLength {
                got: values.len(),
                expected: SENSOR_COUNT,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SensorVectorError::NonFinite { index });
        }
        Ok(SensorVector { values, domain })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn domain(&self) -> SensorDomain {
        self.domain
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Error)]
pub enum TrussError {
    #[error("health factor for group {group} must lie in (0, 1], got {value}")]
    HealthOutOfRange { group: usize, value: f64 },
    #[error("load must be finite and non-negative, got {value}")]
    NegativeLoad { value: f64 },
    #[error("load position {position} is not an unsupported bottom node (bottom nodes: {bottom_count})")]
    InvalidLoadPosition { position: usize, bottom_count: usize },
    #[error("temperature {value} degC outside declared operating range [{min}, {max}]")]
    TemperatureOutOfRange { value: f64, min: f64, max: f64 },
    #[error("unstable structure: reduced stiffness matrix is rank-deficient by {deficiency} of {dofs} free DOFs")]
    Unstable { deficiency: usize, dofs: usize },
    #[error("configuration {index} in batch: {source}")]
    BatchEntry {
        index: usize,
        #[source]
        source: Box<TrussError>,
    },
    #[error("model exposes {got} sensed nodes, expected {expected}")]
    SensorCount { got: usize, expected: usize },
    #[error("invalid model geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Sensor(#[from] SensorVectorError),
}

/// The assembled structural model; geometry is immutable after construction.
#[derive(Debug, Clone)]
pub struct TrussModel {
    nodes: Vec<[f64; 2]>,
    members: Vec<Member>,
    supports: Vec<Support>,
    bottom_nodes: Vec<usize>,
    sensor_nodes: Vec<usize>,
    thermal_alpha_per_c: f64,
    reference_temp_c: f64,
    limits: OperatingRanges,
}

impl TrussModel {
    /// Generic constructor for arbitrary pin-jointed assemblies.
    ///
    /// `bottom_nodes` lists the nodes addressable by `load_pos`; sensed nodes
    /// may be empty for test rigs that read raw displacements instead.
    ///
    /// # Errors
    /// Returns [`TrussError::Geometry`] for out-of-range node indices,
    /// zero-length members, or non-positive member properties.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nodes: Vec<[f64; 2]>,
        members: Vec<Member>,
        supports: Vec<Support>,
        bottom_nodes: Vec<usize>,
        sensor_nodes: Vec<usize>,
        thermal_alpha_per_c: f64,
        reference_temp_c: f64,
        limits: OperatingRanges,
    ) -> Result<Self, TrussError> {
        if nodes.len() < 2 {
            return Err(TrussError::Geometry("need at least two nodes".into()));
        }
        for (i, member) in members.iter().enumerate() {
            if member.start >= nodes.len() || member.end >= nodes.len() {
                return Err(TrussError::Geometry(format!(
                    "member {i} references a node outside 0..{}",
                    nodes.len()
                )));
            }
            if member.start == member.end {
                return Err(TrussError::Geometry(format!(
                    "member {i} connects node {} to itself",
                    member.start
                )));
            }
            let [x1, y1] = nodes[member.start];
            let [x2, y2] = nodes[member.end];
            if ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt() <= 0.0 {
                return Err(TrussError::Geometry(format!("member {i} has zero length")));
            }
            if !(member.area_m2 > 0.0 && member.youngs_pa > 0.0) {
                return Err(TrussError::Geometry(format!(
                    "member {i} has non-positive area or modulus"
                )));
            }
        }
        for support in &supports {
            if support.node >= nodes.len() {
                return Err(TrussError::Geometry(format!(
                    "support references node {} outside 0..{}",
                    support.node,
                    nodes.len()
                )));
            }
        }
        for &node in bottom_nodes.iter().chain(sensor_nodes.iter()) {
            if node >= nodes.len() {
                return Err(TrussError::Geometry(format!(
                    "node list references node {node} outside 0..{}",
                    nodes.len()
                )));
            }
        }
        Ok(TrussModel {
            nodes,
            members,
            supports,
            bottom_nodes,
            sensor_nodes,
            thermal_alpha_per_c,
            reference_temp_c,
            limits,
        })
    }

    /// Builds the 21-bay bridge from a structure configuration.
    ///
    /// Node layout: bottom nodes `0..=bays`, top nodes `bays+1..=2*bays+1`.
    /// A pin at the bottom-left and a roller at the bottom-right leave 42
    /// nodes unsupported; those are the sensed nodes, in node order.
    pub fn bridge(config: &StructureConfig) -> Result<Self, TrussError> {
        config
            .validate()
            .map_err(|e| TrussError::Geometry(e.to_string()))?;
        let bays = config.bays;
        let n_bottom = bays + 1;
        let top_base = n_bottom;
        let mut nodes = Vec::with_capacity(2 * n_bottom);
        for i in 0..n_bottom {
            nodes.push([i as f64 * config.bay_length_m, 0.0]);
        }
        for i in 0..n_bottom {
            nodes.push([i as f64 * config.bay_length_m, config.height_m]);
        }

        let e = config.youngs_modulus_pa;
        let mut members = Vec::new();
        for i in 0..bays {
            members.push(Member {
                start: i,
                end: i + 1,
                area_m2: config.area_bottom_m2,
                youngs_pa: e,
                group: MemberGroup::BottomChord,
            });
        }
        for i in 0..bays {
            members.push(Member {
                start: top_base + i,
                end: top_base + i + 1,
                area_m2: config.area_top_m2,
                youngs_pa: e,
                group: MemberGroup::TopChord,
            });
        }
        for i in 0..n_bottom {
            members.push(Member {
                start: i,
                end: top_base + i,
                area_m2: config.area_vertical_m2,
                youngs_pa: e,
                group: MemberGroup::Vertical,
            });
        }
        // Diagonals fall toward midspan on both halves; the centre bay gets
        // both orientations so the member set is mirror-symmetric.
        let centre = bays / 2;
        for i in 0..=centre {
            members.push(Member {
                start: top_base + i,
                end: i + 1,
                area_m2: config.area_diagonal_m2,
                youngs_pa: e,
                group: MemberGroup::DiagonalLeft,
            });
        }
        for i in centre..bays {
            members.push(Member {
                start: i,
                end: top_base + i + 1,
                area_m2: config.area_diagonal_m2,
                youngs_pa: e,
                group: MemberGroup::DiagonalRight,
            });
        }

        let supports = vec![
            Support {
                node: 0,
                fix_x: true,
                fix_y: true,
            },
            Support {
                node: bays,
                fix_x: false,
                fix_y: true,
            },
        ];
        let supported: Vec<usize> = supports.iter().map(|s| s.node).collect();
        let sensor_nodes: Vec<usize> = (0..nodes.len())
            .filter(|n| !supported.contains(n))
            .collect();
        if sensor_nodes.len() != SENSOR_COUNT {
            return Err(TrussError::SensorCount {
                got: sensor_nodes.len(),
                expected: SENSOR_COUNT,
            });
        }

        TrussModel::new(
            nodes,
            members,
            supports,
            (0..n_bottom).collect(),
            sensor_nodes,
            config.thermal_alpha_per_c,
            config.reference_temp_c,
            config.ranges(),
        )
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn sensor_nodes(&self) -> &[usize] {
        &self.sensor_nodes
    }

    pub fn bottom_nodes(&self) -> &[usize] {
        &self.bottom_nodes
    }

    pub fn limits(&self) -> &OperatingRanges {
        &self.limits
    }

    /// Fixed-axis flags per node, `[fix_x, fix_y]`.
    fn fixed_flags(&self) -> Vec<[bool; 2]> {
        let mut flags = vec![[false, false]; self.nodes.len()];
        for support in &self.supports {
            flags[support.node][0] |= support.fix_x;
            flags[support.node][1] |= support.fix_y;
        }
        flags
    }

    /// Maps global DOF index (2*node + axis) to free-DOF column, fixed DOFs
    /// map to `None`. Second value is the free-DOF count.
    fn dof_map(&self) -> (Vec<Option<usize>>, usize) {
        let flags = self.fixed_flags();
        let mut map = vec![None; 2 * self.nodes.len()];
        let mut next = 0;
        for (node, flag) in flags.iter().enumerate() {
            for axis in 0..2 {
                if !flag[axis] {
                    map[2 * node + axis] = Some(next);
                    next += 1;
                }
            }
        }
        (map, next)
    }

    pub fn n_free_dofs(&self) -> usize {
        self.dof_map().1
    }

    pub fn validate_configuration(&self, cfg: &AssetConfiguration) -> Result<(), TrussError> {
        for (group, &value) in cfg.health.iter().enumerate() {
            if !(value.is_finite() && value > 0.0 && value <= 1.0) {
                return Err(TrussError::HealthOutOfRange { group, value });
            }
        }
        if !(cfg.load_n.is_finite() && cfg.load_n >= 0.0) {
            return Err(TrussError::NegativeLoad { value: cfg.load_n });
        }
        let valid_position = self
            .bottom_nodes
            .get(cfg.load_pos)
            .map(|&node| !self.fixed_flags()[node][1])
            .unwrap_or(false);
        if !valid_position {
            return Err(TrussError::InvalidLoadPosition {
                position: cfg.load_pos,
                bottom_count: self.bottom_nodes.len(),
            });
        }
        if !(cfg.temp_c.is_finite()
            && cfg.temp_c >= self.limits.temp_min_c
            && cfg.temp_c <= self.limits.temp_max_c)
        {
            return Err(TrussError::TemperatureOutOfRange {
                value: cfg.temp_c,
                min: self.limits.temp_min_c,
                max: self.limits.temp_max_c,
            });
        }
        Ok(())
    }

    /// Reduced stiffness matrix over free DOFs.
    ///
    /// Member axial stiffness is `health * E * (1 - alpha*(T - T_ref)) * A / L`.
    ///
    /// # Errors
    /// Rejects invalid configurations; singularity is only detected when the
    /// matrix is factorized in [`TrussModel::solve_displacements`].
    pub fn assemble_stiffness(&self, cfg: &AssetConfiguration) -> Result<DMatrix<f64>, TrussError> {
        self.validate_configuration(cfg)?;
        let (map, n_free) = self.dof_map();
        let thermal = 1.0 - self.thermal_alpha_per_c * (cfg.temp_c - self.reference_temp_c);
        let mut k = DMatrix::<f64>::zeros(n_free, n_free);
        for member in &self.members {
            let [x1, y1] = self.nodes[member.start];
            let [x2, y2] = self.nodes[member.end];
            let (dx, dy) = (x2 - x1, y2 - y1);
            let length = (dx * dx + dy * dy).sqrt();
            let (c, s) = (dx / length, dy / length);
            let health = cfg.health[member.group.index()];
            let axial = health * member.youngs_pa * thermal * member.area_m2 / length;
            // Axial strain direction in global DOFs: u_axial = b . u.
            let b = [-c, -s, c, s];
            let dofs = [
                2 * member.start,
                2 * member.start + 1,
                2 * member.end,
                2 * member.end + 1,
            ];
            for (i, &dof_i) in dofs.iter().enumerate() {
                let Some(row) = map[dof_i] else { continue };
                for (j, &dof_j) in dofs.iter().enumerate() {
                    let Some(col) = map[dof_j] else { continue };
                    // Grouping keeps (i, j) and (j, i) bitwise identical.
                    k[(row, col)] += axial * (b[i] * b[j]);
                }
            }
        }
        Ok(k)
    }

    /// Full free-DOF displacement vector under the configured point load.
    ///
    /// # Errors
    /// [`TrussError::Unstable`] names the rank deficiency when the reduced
    /// matrix is not positive definite.
    pub fn solve_displacements(&self, cfg: &AssetConfiguration) -> Result<DVector<f64>, TrussError> {
        let k = self.assemble_stiffness(cfg)?;
        let (map, n_free) = self.dof_map();
        let mut rhs = DVector::<f64>::zeros(n_free);
        let loaded_node = self.bottom_nodes[cfg.load_pos];
        let y_dof = map[2 * loaded_node + 1].expect("validated load position has a free vertical DOF");
        rhs[y_dof] = -cfg.load_n;
        let dofs = k.nrows();
        match Cholesky::new(k.clone()) {
            Some(factor) => Ok(factor.solve(&rhs)),
            None => {
                let eigen = SymmetricEigen::new(k);
                let scale = eigen
                    .eigenvalues
                    .iter()
                    .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
                let tol = scale * 1e-12;
                let deficiency = eigen
                    .eigenvalues
                    .iter()
                    .filter(|&&v| v <= tol)
                    .count()
                    .max(1);
                Err(TrussError::Unstable { deficiency, dofs })
            }
        }
    }

    /// Vertical displacement at every node, zeros at fixed axes. Used for
    /// drawing deformed shapes.
    pub fn node_displacements(&self, cfg: &AssetConfiguration) -> Result<Vec<[f64; 2]>, TrussError> {
        let u = self.solve_displacements(cfg)?;
        let (map, _) = self.dof_map();
        let mut out = vec![[0.0, 0.0]; self.nodes.len()];
        for (node, entry) in out.iter_mut().enumerate() {
            for axis in 0..2 {
                if let Some(idx) = map[2 * node + axis] {
                    entry[axis] = u[idx];
                }
            }
        }
        Ok(out)
    }

    /// Virtual sensor readings: vertical displacement of each sensed node.
    ///
    /// # Errors
    /// Besides solve errors, fails when the model does not expose exactly
    /// [`SENSOR_COUNT`] sensed nodes.
    pub fn simulate(&self, cfg: &AssetConfiguration) -> Result<SensorVector, TrussError> {
        if self.sensor_nodes.len() != SENSOR_COUNT {
            return Err(TrussError::SensorCount {
                got: self.sensor_nodes.len(),
                expected: SENSOR_COUNT,
            });
        }
        let u = self.solve_displacements(cfg)?;
        let (map, _) = self.dof_map();
        let mut values = Vec::with_capacity(SENSOR_COUNT);
        for &node in &self.sensor_nodes {
            let idx = map[2 * node + 1].ok_or(TrussError::Geometry(format!(
                "sensed node {node} has a fixed vertical DOF"
            )))?;
            values.push(u[idx]);
        }
        Ok(SensorVector::new(values, SensorDomain::Virtual)?)
    }

    /// Simulates each configuration in order; fails fast with the offending
    /// index on the first error.
    pub fn simulate_batch(
        &self,
        configs: &[AssetConfiguration],
    ) -> Result<Vec<SensorVector>, TrussError> {
        configs
            .iter()
            .enumerate()
            .map(|(index, cfg)| {
                self.simulate(cfg).map_err(|source| TrussError::BatchEntry {
                    index,
                    source: Box::new(source),
                })
            })
            .collect()
    }

    /// For each sensor, the sensor index of its mirror image about midspan.
    /// `None` when the geometry is not mirror-symmetric.
    pub fn mirror_sensor_map(&self) -> Option<Vec<usize>> {
        let span = self
            .nodes
            .iter()
            .fold(0.0_f64, |acc, &[x, _]| acc.max(x));
        let mut map = Vec::with_capacity(self.sensor_nodes.len());
        for &node in &self.sensor_nodes {
            let [x, y] = self.nodes[node];
            let target = [span - x, y];
            let mirrored = self.nodes.iter().position(|&[nx, ny]| {
                (nx - target[0]).abs() < 1e-9 && (ny - target[1]).abs() < 1e-9
            })?;
            let sensor = self.sensor_nodes.iter().position(|&s| s == mirrored)?;
            map.push(sensor);
        }
        Some(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn rig_limits() -> OperatingRanges {
        OperatingRanges {
            health_min: 0.5,
            load_min_n: 0.0,
            load_max_n: 1.0e6,
            load_pos_min: 0,
            load_pos_max: 0,
            temp_min_c: -40.0,
            temp_max_c: 80.0,
        }
    }

    /// One vertical bar hanging from a pin; the lower node is held laterally
    /// so the only free DOF at the tip is axial.
    fn vertical_bar(length: f64, area: f64, youngs: f64) -> TrussModel {
        TrussModel::new(
            vec![[0.0, length], [0.0, 0.0]],
            vec![Member {
                start: 0,
                end: 1,
                area_m2: area,
                youngs_pa: youngs,
                group: MemberGroup::Vertical,
            }],
            vec![
                Support {
                    node: 0,
                    fix_x: true,
                    fix_y: true,
                },
                Support {
                    node: 1,
                    fix_x: true,
                    fix_y: false,
                },
            ],
            vec![1],
            vec![],
            0.0,
            20.0,
            rig_limits(),
        )
        .unwrap()
    }

    fn bridge() -> TrussModel {
        TrussModel::bridge(&StructureConfig::default()).unwrap()
    }

    #[test]
    fn single_bar_reduced_stiffness_is_axial_stiffness() {
        let model = vertical_bar(1.0, 1.0, 1.0);
        let cfg = AssetConfiguration::baseline(0.0, 0, 20.0);
        let k = model.assemble_stiffness(&cfg).unwrap();
        assert_eq!(k.nrows(), 1);
        assert_abs_diff_eq!(k[(0, 0)], 1.0, epsilon = 1e-15);

        let mut damaged = cfg;
        damaged.health[MemberGroup::Vertical.index()] = 0.5;
        let k = model.assemble_stiffness(&damaged).unwrap();
        assert_abs_diff_eq!(k[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_bar_tip_deflection_matches_closed_form() {
        let (length, area, youngs, force, health) = (2.5, 3.0e-4, 7.0e10, 1.0e4, 0.8);
        let model = vertical_bar(length, area, youngs);
        let mut cfg = AssetConfiguration::baseline(force, 0, 20.0);
        cfg.health[MemberGroup::Vertical.index()] = health;
        let u = model.solve_displacements(&cfg).unwrap();
        let expected = -force * length / (youngs * area * health);
        assert_relative_eq!(u[0], expected, max_relative = 1e-10);
    }

    #[test]
    fn thermal_softening_scales_stiffness() {
        let model = TrussModel::new(
            vec![[0.0, 1.0], [0.0, 0.0]],
            vec![Member {
                start: 0,
                end: 1,
                area_m2: 1.0,
                youngs_pa: 1.0,
                group: MemberGroup::Vertical,
            }],
            vec![
                Support {
                    node: 0,
                    fix_x: true,
                    fix_y: true,
                },
                Support {
                    node: 1,
                    fix_x: true,
                    fix_y: false,
                },
            ],
            vec![1],
            vec![],
            1.0e-4,
            20.0,
            rig_limits(),
        )
        .unwrap();
        let cfg = AssetConfiguration::baseline(0.0, 0, 45.0);
        let k = model.assemble_stiffness(&cfg).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0 - 1.0e-4 * 25.0, max_relative = 1e-12);
    }

    #[test]
    fn bridge_has_expected_size() {
        let model = bridge();
        assert_eq!(model.nodes().len(), 44);
        assert_eq!(model.members().len(), 86);
        assert_eq!(model.sensor_nodes().len(), SENSOR_COUNT);
        assert_eq!(model.n_free_dofs(), 85);
        // Sensed nodes in node order: bottom 1..=20, then all top nodes.
        assert_eq!(model.sensor_nodes()[0], 1);
        assert_eq!(model.sensor_nodes()[19], 20);
        assert_eq!(model.sensor_nodes()[20], 22);
        assert_eq!(model.sensor_nodes()[41], 43);
    }

    #[test]
    fn bridge_stiffness_is_exactly_symmetric() {
        let model = bridge();
        let cfg = AssetConfiguration {
            health: [0.9, 1.0, 0.7, 0.8, 0.6],
            load_n: 1.2e4,
            load_pos: 9,
            temp_c: 31.0,
        };
        let k = model.assemble_stiffness(&cfg).unwrap();
        for i in 0..k.nrows() {
            for j in 0..i {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
    }

    #[test]
    fn bridge_stiffness_is_positive_definite() {
        // Independent oracle: dense symmetric eigensolver, not the Cholesky
        // path the solver itself uses.
        let model = bridge();
        let cfg = AssetConfiguration {
            health: [0.5, 0.5, 0.5, 0.5, 0.5],
            load_n: 1.0e4,
            load_pos: 10,
            temp_c: 45.0,
        };
        let k = model.assemble_stiffness(&cfg).unwrap();
        let eigen = SymmetricEigen::new(k);
        let min = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.0, "minimum eigenvalue {min} must be positive");
    }

    #[test]
    fn zero_load_gives_zero_readings() {
        let model = bridge();
        let cfg = AssetConfiguration::baseline(0.0, 10, 20.0);
        let readings = model.simulate(&cfg).unwrap();
        assert!(readings.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn readings_scale_linearly_with_load() {
        let model = bridge();
        let base = AssetConfiguration::baseline(8.0e3, 11, 25.0);
        let mut doubled = base.clone();
        doubled.load_n *= 2.0;
        let r1 = model.simulate(&base).unwrap();
        let r2 = model.simulate(&doubled).unwrap();
        for (a, b) in r1.values().iter().zip(r2.values()) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn mirrored_load_gives_mirrored_readings() {
        let model = bridge();
        let mirror = model.mirror_sensor_map().expect("bridge is symmetric");
        let left = AssetConfiguration::baseline(1.6e4, 10, 35.0);
        let right = AssetConfiguration::baseline(1.6e4, 11, 35.0);
        let rl = model.simulate(&left).unwrap();
        let rr = model.simulate(&right).unwrap();
        for (i, &m) in mirror.iter().enumerate() {
            assert_relative_eq!(rl.values()[i], rr.values()[m], max_relative = 1e-9);
        }
    }

    #[test]
    fn downward_load_deflects_every_sensed_node_downward() {
        let model = bridge();
        for pos in 1..=20 {
            let cfg = AssetConfiguration::baseline(1.6e4, pos, 20.0);
            let readings = model.simulate(&cfg).unwrap();
            // Bottom-node sensors all move down; top nodes can move up
            // slightly near supports, so only the loaded node is checked
            // strictly.
            let loaded_sensor = pos - 1;
            assert!(readings.values()[loaded_sensor] < 0.0);
        }
    }

    #[test]
    fn softer_bottom_chord_deflects_more_at_loaded_node() {
        let model = bridge();
        let healthy = AssetConfiguration::baseline(1.6e4, 10, 20.0);
        let mut damaged = healthy.clone();
        damaged.health[MemberGroup::BottomChord.index()] = 0.5;
        let r_h = model.simulate(&healthy).unwrap();
        let r_d = model.simulate(&damaged).unwrap();
        assert!(r_d.values()[9].abs() > r_h.values()[9].abs());
    }

    #[test]
    fn invalid_configurations_are_rejected_with_specific_errors() {
        let model = bridge();
        let base = AssetConfiguration::baseline(1.0e4, 10, 20.0);

        let mut bad = base.clone();
        bad.health[2] = 0.0;
        assert!(matches!(
            model.simulate(&bad),
            Err(TrussError::HealthOutOfRange { group: 2, .. })
        ));

        let mut bad = base.clone();
        bad.health[4] = 1.2;
        assert!(matches!(
            model.simulate(&bad),
            Err(TrussError::HealthOutOfRange { group: 4, .. })
        ));

        let mut bad = base.clone();
        bad.load_n = -1.0;
        assert!(matches!(
            model.simulate(&bad),
            Err(TrussError::NegativeLoad { .. })
        ));

        for position in [0usize, 21, 22, 400] {
            let mut bad = base.clone();
            bad.load_pos = position;
            assert!(matches!(
                model.simulate(&bad),
                Err(TrussError::InvalidLoadPosition { .. })
            ));
        }

        let mut bad = base.clone();
        bad.temp_c = -40.0;
        assert!(matches!(
            model.simulate(&bad),
            Err(TrussError::TemperatureOutOfRange { .. })
        ));
    }

    #[test]
    fn batch_failure_reports_offending_index() {
        let model = bridge();
        let good = AssetConfiguration::baseline(1.0e4, 10, 20.0);
        let mut bad = good.clone();
        bad.load_pos = 0;
        let err = model
            .simulate_batch(&[good.clone(), good, bad])
            .unwrap_err();
        match err {
            TrussError::BatchEntry { index, .. } => assert_eq!(index, 2),
            other => panic!("expected batch error, got {other}"),
        }
    }

    #[test]
    fn mechanism_is_reported_as_unstable_with_deficiency() {
        // Two collinear horizontal bars: the middle node has no vertical
        // stiffness, a one-DOF mechanism.
        let model = TrussModel::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![
                Member {
                    start: 0,
                    end: 1,
                    area_m2: 1.0,
                    youngs_pa: 1.0,
                    group: MemberGroup::BottomChord,
                },
                Member {
                    start: 1,
                    end: 2,
                    area_m2: 1.0,
                    youngs_pa: 1.0,
                    group: MemberGroup::BottomChord,
                },
            ],
            vec![
                Support {
                    node: 0,
                    fix_x: true,
                    fix_y: true,
                },
                Support {
                    node: 2,
                    fix_x: false,
                    fix_y: true,
                },
            ],
            vec![0, 1, 2],
            vec![],
            0.0,
            20.0,
            rig_limits(),
        )
        .unwrap();
        let cfg = AssetConfiguration::baseline(1.0, 1, 20.0);
        match model.solve_displacements(&cfg) {
            Err(TrussError::Unstable { deficiency, dofs }) => {
                assert_eq!(deficiency, 1);
                assert_eq!(dofs, 3);
            }
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn sensor_vector_enforces_width_and_finiteness() {
        let err = SensorVector::new(vec![0.0; 41], SensorDomain::Virtual).unwrap_err();
        assert!(matches!(
            err,
            SensorVectorError::WrongLength { got: 41, .. }
        ));
        let mut values = vec![0.0; SENSOR_COUNT];
        values[7] = f64::NAN;
        let err = SensorVector::new(values, SensorDomain::Physical).unwrap_err();
        assert!(matches!(err, SensorVectorError::NonFinite { index: 7 }));
    }

    #[test]
    fn reference_load_midspan_deflection_is_plausible_for_a_42m_span() {
        let model = bridge();
        let cfg = AssetConfiguration::baseline(1.6e4, 10, 20.0);
        let readings = model.simulate(&cfg).unwrap();
        let max = readings.max_abs();
        assert!(
            max > 1.0e-4 && max < 1.2e-2,
            "peak deflection {max} m outside plausible band"
        );
    }

    #[test]
    fn worst_case_deflection_stays_under_legend_cap() {
        // Half health everywhere, max load, hottest day: still below 12 mm.
        let model = bridge();
        let cfg = AssetConfiguration {
            health: [0.5; GROUP_COUNT],
            load_n: 1.6e4,
            load_pos: 10,
            temp_c: 45.0,
        };
        let readings = model.simulate(&cfg).unwrap();
        assert!(readings.max_abs() <= 1.2e-2, "max {}", readings.max_abs());
    }
}
