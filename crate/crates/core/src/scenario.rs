//! World description: users, sensing locations, UAV radio and flight
//! parameters. All quantities are SI (W, m, s) and linear power ratios.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Sub};

use crate::math;

/// Horizontal ground-plane coordinates in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sqr(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        math::hypot(self.x, self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Point `t` of the way from `self` to `other`.
    pub fn lerp(self, other: Point, t: f64) -> Point {
        self + (other - self) * t
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub const fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Point, margin: f64) -> bool {
        p.x >= self.min.x - margin
            && p.x <= self.max.x + margin
            && p.y >= self.min.y - margin
            && p.y <= self.max.y + margin
    }

    /// Grid nodes `min + (i, j) * resolution` that fall inside the rectangle,
    /// ordered by x, then y.
    pub fn grid(&self, resolution: f64) -> Vec<Point> {
        let steps = |lo: f64, hi: f64| {
            // Tolerate rounding so that an exact multiple includes the far edge.
            math::floor((hi - lo) / resolution + 1e-9) as usize + 1
        };
        let nx = steps(self.min.x, self.max.x);
        let ny = steps(self.min.y, self.max.y);
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push(Point::new(
                    self.min.x + i as f64 * resolution,
                    self.min.y + j as f64 * resolution,
                ));
            }
        }
        out
    }
}

impl Default for Rect {
    /// The 1 km x 1 km square anchored at the origin.
    fn default() -> Self {
        Rect::new(Point::new(0.0, 0.0), Point::new(1000.0, 1000.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub position: Point,
    /// Rate weight `alpha_k`.
    pub weight: f64,
    /// Receiver noise power `sigma_k^2` in watts.
    pub noise_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingGrid {
    pub points: Vec<Point>,
    /// Beampattern gain threshold `Gamma` in watts (at unit distance).
    pub gain_threshold: f64,
}

impl SensingGrid {
    pub fn centroid(&self) -> Point {
        let n = self.points.len().max(1) as f64;
        let s = self.points.iter().fold(Point::default(), |a, &p| a + p);
        s * (1.0 / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavConfig {
    pub num_antennas: usize,
    /// Element spacing over wavelength, `d / lambda`.
    pub antenna_spacing_ratio: f64,
    /// Flight altitude `H` in metres.
    pub altitude: f64,
    /// Transmit power budget `P_max` in watts.
    pub max_power: f64,
    /// Channel power gain at 1 m, `beta` (linear).
    pub channel_gain_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionPlan {
    pub num_slots: usize,
    /// Slot length in seconds.
    pub slot_duration: f64,
    pub initial_position: Point,
    pub final_position: Point,
    /// Maximum horizontal speed in m/s.
    pub max_speed: f64,
}

impl MissionPlan {
    /// Largest displacement between consecutive slots, `V_max`.
    pub fn max_displacement(&self) -> f64 {
        self.max_speed * self.slot_duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub users: Vec<User>,
    pub sensing: SensingGrid,
    pub uav: UavConfig,
    pub mission: Option<MissionPlan>,
    pub search_area: Rect,
}

/// An invariant violation, naming the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ScenarioError {
    pub field: String,
    pub reason: String,
}

impl ScenarioError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

fn require(ok: bool, field: &str, reason: &str) -> Result<(), ScenarioError> {
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::new(field, reason))
    }
}

impl Scenario {
    /// Checks every invariant. Points outside the search area only produce a
    /// warning.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        use alloc::format;

        require(!self.users.is_empty(), "users", "at least one user is required")?;
        for (k, u) in self.users.iter().enumerate() {
            require(
                u.position.is_finite(),
                &format!("users[{k}].position"),
                "must be finite",
            )?;
            require(
                u.weight >= 0.0 && u.weight.is_finite(),
                &format!("users[{k}].weight"),
                "must be finite and >= 0",
            )?;
            require(
                u.noise_power > 0.0 && u.noise_power.is_finite(),
                &format!("users[{k}].noise_power"),
                "must be finite and > 0",
            )?;
        }
        require(
            !self.sensing.points.is_empty(),
            "sensing.points",
            "at least one sensing point is required",
        )?;
        for (j, p) in self.sensing.points.iter().enumerate() {
            require(p.is_finite(), &format!("sensing.points[{j}]"), "must be finite")?;
        }
        require(
            self.sensing.gain_threshold >= 0.0 && self.sensing.gain_threshold.is_finite(),
            "sensing.gain_threshold",
            "must be finite and >= 0",
        )?;

        let uav = &self.uav;
        require(uav.num_antennas >= 1, "uav.num_antennas", "must be >= 1")?;
        require(
            uav.antenna_spacing_ratio > 0.0 && uav.antenna_spacing_ratio.is_finite(),
            "uav.antenna_spacing_ratio",
            "must be > 0",
        )?;
        require(
            uav.altitude > 0.0 && uav.altitude.is_finite(),
            "uav.altitude",
            "must be > 0",
        )?;
        require(
            uav.max_power > 0.0 && uav.max_power.is_finite(),
            "uav.max_power",
            "must be > 0",
        )?;
        require(
            uav.channel_gain_ref > 0.0 && uav.channel_gain_ref.is_finite(),
            "uav.channel_gain_ref",
            "must be > 0",
        )?;

        if let Some(m) = &self.mission {
            require(m.num_slots >= 2, "mission.num_slots", "must be >= 2")?;
            require(
                m.slot_duration > 0.0 && m.slot_duration.is_finite(),
                "mission.slot_duration",
                "must be > 0",
            )?;
            require(
                m.max_speed > 0.0 && m.max_speed.is_finite(),
                "mission.max_speed",
                "must be > 0",
            )?;
            require(
                m.initial_position.is_finite(),
                "mission.initial_position",
                "must be finite",
            )?;
            require(
                m.final_position.is_finite(),
                "mission.final_position",
                "must be finite",
            )?;
        }

        let area = &self.search_area;
        require(
            area.min.is_finite() && area.max.is_finite(),
            "search_area",
            "must be finite",
        )?;
        require(
            area.min.x <= area.max.x && area.min.y <= area.max.y,
            "search_area",
            "min must not exceed max",
        )?;

        let margin = 1e-6 * (area.max - area.min).norm().max(1.0);
        for (k, u) in self.users.iter().enumerate() {
            if !area.contains(u.position, margin) {
                log::warn!("user {k} at {} lies outside the search area", u.position);
            }
        }
        for (j, p) in self.sensing.points.iter().enumerate() {
            if !area.contains(*p, margin) {
                log::warn!("sensing point {j} at {p} lies outside the search area");
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.uav.num_antennas
    }

    pub fn with_gain_threshold(&self, gamma_w: f64) -> Scenario {
        let mut s = self.clone();
        s.sensing.gain_threshold = gamma_w;
        s
    }

    pub fn with_antennas(&self, m: usize) -> Scenario {
        let mut s = self.clone();
        s.uav.num_antennas = m;
        s
    }
}

/// `10^((p - 30) / 10)`
pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    math::powf(10.0, (p_dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(p_w: f64) -> f64 {
    10.0 * math::log10(p_w) + 30.0
}

/// `10^(g / 10)`
pub fn db_to_linear(g_db: f64) -> f64 {
    math::powf(10.0, g_db / 10.0)
}

pub fn linear_to_db(g: f64) -> f64 {
    10.0 * math::log10(g)
}
