//! TOML scenario files.
//!
//! Units: lengths in m, angles in rad, times in s, velocities in m/s,
//! fault frequencies in Hz. Robot indices in the file are 1-based.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fov::{FovParams, Pose};
use crate::graph::Topology;
use crate::resilience::{FaultSchedule, HinfGains, PlanarSignal};
use crate::sim::{Leader, LeaderProfile, Mode, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    pub topology: TopologySection,
    pub initial: InitialSection,
    #[serde(default)]
    pub fov: FovSection,
    #[serde(default)]
    pub gains: GainsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderSection>,
    #[serde(default)]
    pub observer: HinfGains,
    #[serde(default)]
    pub faults: FaultsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_mode() -> Mode {
    Mode::Adaptive
}

fn default_dt() -> f64 {
    0.01
}

fn default_log_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub n: usize,
    /// `[tail, head]` pairs, 1-based.
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// `[x, y, theta]` per robot.
    pub poses: Vec<[f64; 3]>,
}

/// Shared FOV parameters plus partial per-robot overrides keyed by 1-based index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FovSection {
    pub apex_offset: f64,
    pub half_angle: f64,
    pub range: f64,
    pub goal_point: [f64; 2],
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub barrier_margin: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub robot: BTreeMap<String, FovOverride>,
}

impl Default for FovSection {
    fn default() -> Self {
        Self::new(FovParams::default(), BTreeMap::new())
    }
}

impl FovSection {
    pub fn new(global: FovParams, robot: BTreeMap<String, FovOverride>) -> Self {
        Self {
            apex_offset: global.apex_offset,
            half_angle: global.half_angle,
            range: global.range,
            goal_point: global.goal_point,
            sigma_x: global.sigma_x,
            sigma_y: global.sigma_y,
            barrier_margin: global.barrier_margin,
            robot,
        }
    }

    pub fn global(&self) -> FovParams {
        FovParams {
            apex_offset: self.apex_offset,
            half_angle: self.half_angle,
            range: self.range,
            goal_point: self.goal_point,
            sigma_x: self.sigma_x,
            sigma_y: self.sigma_y,
            barrier_margin: self.barrier_margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FovOverride {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apex_offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_point: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier_margin: Option<f64>,
}

impl FovOverride {
    fn full(p: &FovParams) -> Self {
        Self {
            apex_offset: Some(p.apex_offset),
            half_angle: Some(p.half_angle),
            range: Some(p.range),
            goal_point: Some(p.goal_point),
            sigma_x: Some(p.sigma_x),
            sigma_y: Some(p.sigma_y),
            barrier_margin: Some(p.barrier_margin),
        }
    }

    fn apply(&self, base: &FovParams) -> FovParams {
        FovParams {
            apex_offset: self.apex_offset.unwrap_or(base.apex_offset),
            half_angle: self.half_angle.unwrap_or(base.half_angle),
            range: self.range.unwrap_or(base.range),
            goal_point: self.goal_point.unwrap_or(base.goal_point),
            sigma_x: self.sigma_x.unwrap_or(base.sigma_x),
            sigma_y: self.sigma_y.unwrap_or(base.sigma_y),
            barrier_margin: self.barrier_margin.unwrap_or(base.barrier_margin),
        }
    }
}

/// A scalar for every edge or one value per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainInit {
    Uniform(f64),
    PerEdge(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsSection {
    pub init: GainInit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    pub freeze: bool,
    pub eps_alpha: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        Self {
            init: GainInit::Uniform(1.0),
            floor: None,
            freeze: false,
            eps_alpha: crate::adaptive::EPS_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSection {
    /// 1-based.
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, rename = "override")]
    pub override_control: bool,
}

/// Fault expressions keyed by 1-based robot index; omitted robots are fault free.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultsSection {
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub sensor: BTreeMap<String, PlanarSignal>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub actuator: BTreeMap<String, PlanarSignal>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<PathBuf>,
}

fn robot_key(field: &str, key: &str, n: usize) -> Result<usize> {
    match key.trim().parse::<usize>() {
        Ok(i) if (1..=n).contains(&i) => Ok(i - 1),
        _ => Err(Error::invalid(
            field,
            format!("robot key {key:?} is not an index in 1..={n}"),
        )),
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides::<&str>(text, &[])
    }

    /// Parse after applying `key.path=value` overrides. Values are read as
    /// TOML and fall back to bare strings.
    pub fn parse_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o.as_ref())?;
        }
        let cfg: ConfigFile = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if cfg.version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", cfg.version),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Build and validate the scenario.
    pub fn scenario(&self) -> Result<Scenario> {
        let n = self.topology.n;
        let topology = Topology::from_one_based(n, &self.topology.edges)?;
        if self.initial.poses.len() != n {
            return Err(Error::invalid(
                "initial.poses",
                format!("expected {n} poses, got {}", self.initial.poses.len()),
            ));
        }
        let poses = self
            .initial
            .poses
            .iter()
            .map(|&[x, y, th]| Pose::new(x, y, th))
            .collect();

        let global = self.fov.global();
        let mut fov = vec![global; n];
        for (key, o) in &self.fov.robot {
            fov[robot_key("fov.robot", key, n)?] = o.apply(&global);
        }

        let m = topology.edge_count();
        let gain_init = match &self.gains.init {
            GainInit::Uniform(k) => vec![*k; m],
            GainInit::PerEdge(v) if v.len() == m => v.clone(),
            GainInit::PerEdge(v) => {
                return Err(Error::invalid(
                    "gains.init",
                    format!("expected {m} gains, got {}", v.len()),
                ))
            }
        };

        let mut faults = FaultSchedule::none(n);
        for (key, s) in &self.faults.sensor {
            faults.sensor[robot_key("faults.sensor", key, n)?] = s.clone();
        }
        for (key, s) in &self.faults.actuator {
            faults.actuator[robot_key("faults.actuator", key, n)?] = s.clone();
        }

        let leader = self.leader.as_ref().map(|l| l.to_leader(n)).transpose()?;

        let mut sc = Scenario::new(topology, poses);
        sc.fov = fov;
        sc.gain_init = gain_init;
        sc.gain_floor = self.gains.floor;
        sc.freeze_gains = self.gains.freeze;
        sc.eps_alpha = self.gains.eps_alpha;
        sc.faults = faults;
        sc.observer = self.observer.clone();
        sc.leader = leader;
        sc.dt = self.dt;
        sc.horizon = self.horizon;
        sc.log_every = self.log_every;
        sc.mode = self.mode;
        sc.validate()?;
        Ok(sc)
    }

    /// The file describing `sc`; robot 1's FOV becomes the shared block.
    pub fn from_scenario(sc: &Scenario, output: OutputSection) -> Self {
        let n = sc.n();
        let global = sc.fov.first().copied().unwrap_or_default();
        let robot = sc
            .fov
            .iter()
            .enumerate()
            .filter(|(_, f)| **f != global)
            .map(|(i, f)| ((i + 1).to_string(), FovOverride::full(f)))
            .collect();
        let init = match sc.gain_init.split_first() {
            Some((k0, rest)) if rest.iter().any(|k| k.to_bits() != k0.to_bits()) => {
                GainInit::PerEdge(sc.gain_init.clone())
            }
            Some((k0, _)) => GainInit::Uniform(*k0),
            None => GainInit::Uniform(1.0),
        };
        let faults_of = |chan: &[PlanarSignal]| {
            chan.iter()
                .enumerate()
                .filter(|(_, s)| !s.is_zero())
                .map(|(i, s)| ((i + 1).to_string(), s.clone()))
                .collect()
        };
        Self {
            version: SCHEMA_VERSION,
            mode: sc.mode,
            dt: sc.dt,
            horizon: sc.horizon,
            log_every: sc.log_every,
            topology: TopologySection {
                n,
                edges: sc.topology.to_one_based(),
            },
            initial: InitialSection {
                poses: sc.initial_poses.iter().map(|p| [p.x, p.y, p.theta]).collect(),
            },
            fov: FovSection::new(global, robot),
            gains: GainsSection {
                init,
                floor: sc.gain_floor,
                freeze: sc.freeze_gains,
                eps_alpha: sc.eps_alpha,
            },
            leader: sc.leader.as_ref().map(LeaderSection::from_leader),
            observer: sc.observer.clone(),
            faults: FaultsSection {
                sensor: faults_of(&sc.faults.sensor),
                actuator: faults_of(&sc.faults.actuator),
            },
            output,
        }
    }
}

impl LeaderSection {
    fn to_leader(&self, n: usize) -> Result<Leader> {
        if self.index == 0 || self.index > n {
            return Err(Error::invalid(
                "leader.index",
                format!("{} is not a robot index in 1..={n}", self.index),
            ));
        }
        let profile = match (&self.velocity, &self.waypoints, self.speed) {
            (Some(v), None, None) => LeaderProfile::Constant(Vector2::from(*v)),
            (None, Some(w), Some(speed)) => LeaderProfile::Waypoints {
                points: w.iter().map(|p| Vector2::from(*p)).collect(),
                speed,
            },
            (None, None, None) => LeaderProfile::Constant(Vector2::zeros()),
            _ => {
                return Err(Error::invalid(
                    "leader",
                    "give either `velocity` or `waypoints` with `speed`",
                ))
            }
        };
        Ok(Leader {
            index: self.index - 1,
            profile,
            override_control: self.override_control,
        })
    }

    fn from_leader(l: &Leader) -> Self {
        let (velocity, waypoints, speed) = match &l.profile {
            LeaderProfile::Constant(v) => (Some([v.x, v.y]), None, None),
            LeaderProfile::Waypoints { points, speed } => (
                None,
                Some(points.iter().map(|p| [p.x, p.y]).collect()),
                Some(*speed),
            ),
        };
        Self {
            index: l.index + 1,
            velocity,
            waypoints,
            speed,
            override_control: l.override_control,
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = keys.split_last().expect("nonempty");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override {spec:?}: `{k}` is not a section"))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
