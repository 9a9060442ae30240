//! The reference deployment used throughout the experiments: a 1 km square
//! with eight users in two mirrored clusters and a 3 x 6 sensing grid.

use alloc::vec::Vec;

use crate::scenario::{
    db_to_linear, dbm_to_watts, MissionPlan, Point, Rect, Scenario, SensingGrid, UavConfig, User,
};

pub const USER_POSITIONS: [(f64, f64); 8] = [
    (100.0, 100.0),
    (250.0, 100.0),
    (100.0, 250.0),
    (250.0, 250.0),
    (750.0, 100.0),
    (900.0, 100.0),
    (750.0, 250.0),
    (900.0, 250.0),
];

pub const NOISE_DBM: f64 = -110.0;
pub const CHANNEL_GAIN_DB: f64 = -60.0;
pub const GAIN_THRESHOLD_DBM: f64 = -43.0;

/// Sensing locations: x in 375..=625 step 50, y in 650..=750 step 50.
pub fn sensing_points() -> Vec<Point> {
    let mut pts = Vec::with_capacity(18);
    for i in 0..6 {
        for j in 0..3 {
            pts.push(Point::new(375.0 + 50.0 * i as f64, 650.0 + 50.0 * j as f64));
        }
    }
    pts
}

pub fn reference_uav() -> UavConfig {
    UavConfig {
        num_antennas: 12,
        antenna_spacing_ratio: 0.5,
        altitude: 100.0,
        max_power: 0.5,
        channel_gain_ref: db_to_linear(CHANNEL_GAIN_DB),
    }
}

pub fn reference_mission() -> MissionPlan {
    MissionPlan {
        num_slots: 12,
        slot_duration: 5.0,
        initial_position: Point::new(0.0, 400.0),
        final_position: Point::new(1000.0, 400.0),
        max_speed: 30.0,
    }
}

pub fn reference_scenario() -> Scenario {
    let noise = dbm_to_watts(NOISE_DBM);
    Scenario {
        users: USER_POSITIONS
            .iter()
            .map(|&(x, y)| User {
                position: Point::new(x, y),
                weight: 1.0,
                noise_power: noise,
            })
            .collect(),
        sensing: SensingGrid {
            points: sensing_points(),
            gain_threshold: dbm_to_watts(GAIN_THRESHOLD_DBM),
        },
        uav: reference_uav(),
        mission: Some(reference_mission()),
        search_area: Rect::default(),
    }
}
