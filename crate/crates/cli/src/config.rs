//! Scenario files (TOML). Powers may be given in dBm or watts and gains in dB
//! or linear scale; everything is stored in SI units once loaded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uav_isac_core::scenario::{db_to_linear, dbm_to_watts, ScenarioError};
use uav_isac_core::{MissionPlan, Point, Rect, Scenario, SensingGrid, UavConfig, User};

/// The reference deployment shipped with the tool.
pub const REFERENCE_SCENARIO: &str = include_str!("../scenarios/reference.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
}

fn field(field: &str, reason: &str) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Default receiver noise for users that do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_area: Option<AreaFile>,
    pub uav: UavFile,
    pub sensing: SensingFile,
    pub users: Vec<UserFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mission: Option<MissionFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaFile {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavFile {
    pub num_antennas: usize,
    #[serde(default = "half")]
    pub antenna_spacing_ratio: f64,
    pub altitude_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_power_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_gain_linear: Option<f64>,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_threshold_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_threshold_w: Option<f64>,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFile {
    pub position: [f64; 2],
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionFile {
    pub num_slots: usize,
    pub slot_duration_s: f64,
    pub initial_position: [f64; 2],
    pub final_position: [f64; 2],
    pub max_speed_mps: f64,
}

fn point(p: [f64; 2]) -> Point {
    Point::new(p[0], p[1])
}

fn pair(p: Point) -> [f64; 2] {
    [p.x, p.y]
}

/// Exactly one of a logarithmic and a linear value, converted to linear.
fn either(
    name: &str,
    log_value: Option<f64>,
    linear: Option<f64>,
    to_linear: fn(f64) -> f64,
) -> Result<Option<f64>, ConfigError> {
    match (log_value, linear) {
        (Some(_), Some(_)) => Err(field(name, "give either the logarithmic or the linear value, not both")),
        (Some(v), None) if !v.is_finite() => Err(field(name, "must be finite")),
        (Some(v), None) => Ok(Some(to_linear(v))),
        (None, w) => Ok(w),
    }
}

impl ScenarioFile {
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let default_noise = either("noise_power", self.noise_power_dbm, self.noise_power_w, dbm_to_watts)?;
        let users = self
            .users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let name = format!("users[{k}].noise_power");
                let own = either(&name, u.noise_power_dbm, u.noise_power_w, dbm_to_watts)?;
                let noise_power = own
                    .or(default_noise)
                    .ok_or_else(|| field(&name, "missing, and no top-level noise_power_dbm or noise_power_w"))?;
                Ok(User {
                    position: point(u.position),
                    weight: u.weight,
                    noise_power,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let gain_threshold = either(
            "sensing.gain_threshold",
            self.sensing.gain_threshold_dbm,
            self.sensing.gain_threshold_w,
            dbm_to_watts,
        )?
        .ok_or_else(|| field("sensing.gain_threshold", "set gain_threshold_dbm or gain_threshold_w"))?;
        let u = &self.uav;
        let max_power = either("uav.max_power", u.max_power_dbm, u.max_power_w, dbm_to_watts)?
            .ok_or_else(|| field("uav.max_power", "set max_power_w or max_power_dbm"))?;
        let channel_gain_ref = either("uav.channel_gain", u.channel_gain_db, u.channel_gain_linear, db_to_linear)?
            .ok_or_else(|| field("uav.channel_gain", "set channel_gain_db or channel_gain_linear"))?;
        let scenario = Scenario {
            users,
            sensing: SensingGrid {
                points: self.sensing.points.iter().copied().map(point).collect(),
                gain_threshold,
            },
            uav: UavConfig {
                num_antennas: u.num_antennas,
                antenna_spacing_ratio: u.antenna_spacing_ratio,
                altitude: u.altitude_m,
                max_power,
                channel_gain_ref,
            },
            mission: self.mission.as_ref().map(|m| MissionPlan {
                num_slots: m.num_slots,
                slot_duration: m.slot_duration_s,
                initial_position: point(m.initial_position),
                final_position: point(m.final_position),
                max_speed: m.max_speed_mps,
            }),
            search_area: self
                .search_area
                .as_ref()
                .map_or_else(Rect::default, |a| Rect::new(point(a.min), point(a.max))),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// The scenario with every quantity in SI units.
    pub fn from_scenario(s: &Scenario) -> Self {
        ScenarioFile {
            noise_power_dbm: None,
            noise_power_w: None,
            search_area: Some(AreaFile {
                min: pair(s.search_area.min),
                max: pair(s.search_area.max),
            }),
            uav: UavFile {
                num_antennas: s.uav.num_antennas,
                antenna_spacing_ratio: s.uav.antenna_spacing_ratio,
                altitude_m: s.uav.altitude,
                max_power_w: Some(s.uav.max_power),
                max_power_dbm: None,
                channel_gain_db: None,
                channel_gain_linear: Some(s.uav.channel_gain_ref),
            },
            sensing: SensingFile {
                gain_threshold_dbm: None,
                gain_threshold_w: Some(s.sensing.gain_threshold),
                points: s.sensing.points.iter().copied().map(pair).collect(),
            },
            users: s
                .users
                .iter()
                .map(|u| UserFile {
                    position: pair(u.position),
                    weight: u.weight,
                    noise_power_dbm: None,
                    noise_power_w: Some(u.noise_power),
                })
                .collect(),
            mission: s.mission.as_ref().map(|m| MissionFile {
                num_slots: m.num_slots,
                slot_duration_s: m.slot_duration,
                initial_position: pair(m.initial_position),
                final_position: pair(m.final_position),
                max_speed_mps: m.max_speed,
            }),
        }
    }
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        origin: origin.into(),
        message: e.to_string(),
    })?;
    file.to_scenario()
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string())
}
