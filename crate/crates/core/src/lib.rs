//! Joint UAV maneuver and transmit beamforming design for integrated sensing
//! and communication (ISAC).
//!
//! A UAV with an `M`-element vertical uniform linear array serves `K` ground
//! users while illuminating `J` sensing locations. The crate covers:
//!
//! * the line-of-sight channel and beampattern model ([`channel`]),
//! * a log-barrier interior-point solver for the small semidefinite and
//!   vector programs that appear along the way ([`solver`]),
//! * sensing feasibility over a location grid and flight reachability
//!   ([`feasibility`]),
//! * hovering-UAV deployment plus beamforming ([`static_design`]),
//! * trajectory plus per-slot beamforming for a moving UAV
//!   ([`mobile_design`]).
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. Wall-clock timing is only reported with `std`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod channel;
pub mod feasibility;
pub(crate) mod math;
pub mod mobile_design;
pub mod numerics;
mod par;
pub mod presets;
pub mod scenario;
pub mod solver;
pub mod static_design;

pub use channel::{BeamformerSet, RateReport};
pub use numerics::{Complex, ComplexVector, HermitianMatrix};
pub use scenario::{MissionPlan, Point, Rect, Scenario, SensingGrid, UavConfig, User};
