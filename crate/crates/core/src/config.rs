//! Simulation configuration as sectioned TOML. Every section is optional and
//! falls back to its defaults; [`SimulationConfig::to_toml`] writes the fully
//! resolved form so that a run can be repeated from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{HysteresisSchedule, LlgParams, Macrospin, RelaxParams, StepperParams};
use crate::femops::{Anisotropy, Material, MaterialTable};
use crate::field::{AppliedFieldSpec, FieldOptions};
use crate::math::Vec3;
use crate::mesh::{Mesh, PeriodicSpec};
use crate::meshgen;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot serialise config: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Relax,
    Dynamics,
    Hysteresis,
    Fieldcheck,
    PgfSelftest,
    OracleCheck,
}

impl std::str::FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "relax" => Mode::Relax,
            "dynamics" => Mode::Dynamics,
            "hysteresis" => Mode::Hysteresis,
            "fieldcheck" => Mode::Fieldcheck,
            "pgf-selftest" => Mode::PgfSelftest,
            "oracle-check" => Mode::OracleCheck,
            other => return Err(ConfigError::Invalid(format!("unknown mode `{other}`"))),
        })
    }
}

/// Built-in mesh generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum MeshGenerator {
    Box {
        cells: [usize; 3],
        size: Vec3,
        #[serde(default)]
        origin: Vec3,
    },
    Ball {
        n: usize,
        radius: f64,
        #[serde(default)]
        center: Vec3,
    },
    Cylinder {
        n: usize,
        n_axis: usize,
        radius: f64,
        height: f64,
        axis: usize,
    },
    Parallelogram {
        cells: [usize; 3],
        period: f64,
        height: f64,
        thickness: f64,
        offset: f64,
    },
}

impl MeshGenerator {
    pub fn build(&self) -> Mesh {
        match *self {
            MeshGenerator::Box {
                cells,
                size,
                origin,
            } => meshgen::box_mesh(cells, size, origin),
            MeshGenerator::Ball { n, radius, center } => meshgen::ball_mesh(n, radius, center),
            MeshGenerator::Cylinder {
                n,
                n_axis,
                radius,
                height,
                axis,
            } => meshgen::cylinder_mesh(n, n_axis, radius, height, axis),
            MeshGenerator::Parallelogram {
                cells,
                period,
                height,
                thickness,
                offset,
            } => meshgen::parallelogram_mesh(cells, period, height, thickness, offset),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Mesh file, relative paths resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<MeshGenerator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Uniform {
        direction: Vec3,
    },
    /// Independent random directions, drawn from the run seed.
    Random,
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Uniform {
            direction: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSection {
    /// End time, s.
    pub t_end: f64,
    /// Sampling interval of the time series, s.
    pub sample_every: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            t_end: 1e-9,
            sample_every: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Random points in the periodic cell used when no mesh is given.
    pub points: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { points: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Operators to write as `row col weight` triplets.
    pub dump_operator: Vec<OperatorDump>,
    /// Legacy-VTK file for the final M and field terms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_fields: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            dump_operator: Vec::new(),
            dump_fields: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDump {
    /// `laplace`, `charge_x`, `grad_y`, `projection`, `correction`, ...
    pub kind: String,
    pub path: PathBuf,
}

/// Periodicity as written in the config; converted to [`PeriodicSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicSection {
    pub periodic: [bool; 3],
    pub periods: Vec3,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_tolerance: Option<f64>,
}

impl Default for PeriodicSection {
    fn default() -> Self {
        PeriodicSection {
            periodic: [false; 3],
            periods: [0.0; 3],
            match_tolerance: None,
        }
    }
}

impl PeriodicSection {
    pub fn spec(&self) -> PeriodicSpec {
        let s = PeriodicSpec::new(self.periodic, self.periods);
        match self.match_tolerance {
            Some(t) => s.with_tolerance(t),
            None => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Worker threads; 1 runs the sequential code paths.
    pub threads: usize,
    pub mesh: MeshSection,
    pub periodic: PeriodicSection,
    /// Materials keyed by region tag (as a string, e.g. `[materials.0]`).
    pub materials: MaterialTable,
    /// Replaces the mesh with a single macrospin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macrospin: Option<Macrospin>,
    pub applied: Vec<AppliedFieldSpec>,
    pub initial: InitialState,
    pub field: FieldOptions,
    pub llg: LlgParams,
    pub stepper: StepperParams,
    pub relax: RelaxParams,
    pub dynamics: DynamicsSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hysteresis: Option<HysteresisSchedule>,
    pub oracle: OracleSection,
    pub output: OutputSection,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            mode: Mode::default(),
            seed: 1,
            threads: 1,
            mesh: MeshSection::default(),
            periodic: PeriodicSection::default(),
            materials: MaterialTable::single(Material {
                ms: 800.0,
                a_ex: 1.3e-6,
                anisotropy: Anisotropy::None,
                alpha: 0.02,
            }),
            macrospin: None,
            applied: Vec::new(),
            initial: InitialState::default(),
            field: FieldOptions::default(),
            llg: LlgParams::default(),
            stepper: StepperParams::default(),
            relax: RelaxParams::default(),
            dynamics: DynamicsSection::default(),
            hysteresis: None,
            oracle: OracleSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl SimulationConfig {
    /// Parses TOML text; `origin` names the source in error messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })
    }

    /// Reads a config file and resolves a relative mesh path against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        if let (Some(p), Some(dir)) = (cfg.mesh.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    /// Checks that the fields the selected mode needs are present and sane.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        self.periodic
            .spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.materials
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.llg
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for a in &self.applied {
            a.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let has_mesh = self.mesh.path.is_some() || self.mesh.generate.is_some();
        if self.mesh.path.is_some() && self.mesh.generate.is_some() {
            return bad("[mesh] takes either `path` or `generate`, not both".into());
        }
        match self.mode {
            Mode::Relax | Mode::Dynamics | Mode::Fieldcheck => {
                if !has_mesh && (self.macrospin.is_none() || self.mode == Mode::Fieldcheck) {
                    return bad(format!("mode {:?} needs a [mesh] section", self.mode));
                }
            }
            Mode::Hysteresis => {
                let Some(h) = &self.hysteresis else {
                    return bad("mode hysteresis needs a [hysteresis] section".into());
                };
                h.validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if !has_mesh && self.macrospin.is_none() {
                    return bad("mode hysteresis needs a [mesh] or [macrospin] section".into());
                }
            }
            Mode::OracleCheck => {
                if !has_mesh && !self.periodic.periodic.iter().any(|&p| p) {
                    return bad(
                        "oracle-check without a mesh samples the periodic cell; set [periodic]"
                            .into(),
                    );
                }
                if !has_mesh && self.oracle.points < 2 {
                    return bad("oracle.points must be at least 2".into());
                }
            }
            Mode::PgfSelftest => {}
        }
        for d in &self.output.dump_operator {
            d.kind
                .parse::<crate::sparse::OperatorKind>()
                .map_err(ConfigError::Invalid)?;
        }
        if let InitialState::Uniform { direction } = self.initial {
            if crate::math::norm(direction) == 0.0 {
                return bad("initial direction must be non-zero".into());
            }
        }
        if self.mode == Mode::Dynamics
            && !(self.dynamics.t_end > 0.0 && self.dynamics.sample_every > 0.0)
        {
            return bad("dynamics needs t_end > 0 and sample_every > 0".into());
        }
        Ok(())
    }

    /// Loads or generates the mesh, without periodic preparation.
    pub fn build_mesh(&self) -> Result<Option<Mesh>, crate::Error> {
        if let Some(p) = &self.mesh.path {
            return Ok(Some(Mesh::load(p)?));
        }
        Ok(self.mesh.generate.as_ref().map(MeshGenerator::build))
    }
}
