use super::*;
use crate::presets;
use crate::scenario::{dbm_to_watts, Rect, SensingGrid, User};
use alloc::vec;
use alloc::vec::Vec;
use proptest::prelude::*;

fn single_point(m: usize, gamma: f64) -> Scenario {
    Scenario {
        users: vec![User {
            position: Point::new(0.0, 0.0),
            weight: 1.0,
            noise_power: 1e-14,
        }],
        sensing: SensingGrid {
            points: vec![Point::new(500.0, 500.0)],
            gain_threshold: gamma,
        },
        uav: crate::UavConfig {
            num_antennas: m,
            ..presets::reference_uav()
        },
        mission: None,
        search_area: Rect::default(),
    }
}

fn mission(from: Point, to: Point, slots: usize, step: f64) -> MissionPlan {
    MissionPlan {
        num_slots: slots,
        slot_duration: 1.0,
        initial_position: from,
        final_position: to,
        max_speed: step,
    }
}

fn set_of(points: Vec<Point>) -> FeasibleSet {
    FeasibleSet {
        grid_resolution: 10.0,
        feasible: vec![true; points.len()],
        nodes: points.clone(),
        locations: points,
        component: Vec::new(),
    }
}

/// Union-find over the same edge list, as an independent component oracle.
fn union_find_component(graph: &ReachabilityGraph) -> Vec<bool> {
    let n = graph.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, j, _) in graph.edges() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
        }
    }
    let root = find(&mut parent, graph.start);
    (0..n).map(|i| find(&mut parent, i) == root).collect()
}

#[test]
fn zero_threshold_is_feasible_everywhere() {
    let s = presets::reference_scenario().with_gain_threshold(0.0);
    let fs = scan_feasible_set(&s, 100.0).unwrap();
    assert_eq!(fs.nodes.len(), 121);
    assert!(fs.is_full());
    assert_eq!(fs.locations.len(), 121);
}

#[test]
fn single_point_breakpoint_is_p_m_over_h_squared() {
    for m in [2, 4, 12] {
        let s = single_point(m, 0.0);
        let q = Point::new(500.0, 500.0);
        let h = s.uav.altitude;
        let breakpoint = s.uav.max_power * m as f64 / (h * h);
        assert!(check_location_feasible(q, &s.with_gain_threshold(0.98 * breakpoint)), "M={m}");
        assert!(!check_location_feasible(q, &s.with_gain_threshold(1.02 * breakpoint)), "M={m}");
    }
}

#[test]
fn returned_covariance_meets_every_constraint() {
    let s = presets::reference_scenario().with_gain_threshold(dbm_to_watts(-25.0));
    let q = Point::new(500.0, 700.0);
    let r = sensing_covariance(q, &s).expect("centre of the sensing area is feasible");
    assert!(r.trace() <= s.uav.max_power * (1.0 + 1e-9));
    assert!(r.min_eigenvalue().unwrap() >= -1e-12);
    for &m in &s.sensing.points {
        let a = steering_vector(q, m, &s.uav);
        let gain = r.quadratic_form(a.as_slice()).unwrap();
        assert!(gain >= slant_distance_sqr(q, m, s.uav.altitude) * s.sensing.gain_threshold);
    }
}

#[test]
fn huge_threshold_is_infeasible_everywhere() {
    let s = presets::reference_scenario().with_gain_threshold(1e6);
    let fs = scan_feasible_set(&s, 250.0).unwrap();
    assert!(fs.locations.is_empty());
    assert!(fs.feasible.iter().all(|&f| !f));
}

#[test]
fn feasible_set_shrinks_as_threshold_grows() {
    let base = presets::reference_scenario();
    let mut prev: Option<Vec<bool>> = None;
    let mut counts = Vec::new();
    for dbm in [-40.0, -30.0, -25.0, -20.0, -15.0] {
        let fs = scan_feasible_set(&base.with_gain_threshold(dbm_to_watts(dbm)), 100.0).unwrap();
        if let Some(p) = &prev {
            for (a, b) in p.iter().zip(&fs.feasible) {
                assert!(*a || !*b, "node became feasible at a higher threshold");
            }
        }
        counts.push(fs.locations.len());
        prev = Some(fs.feasible);
    }
    // The sweep crosses from full to partial coverage.
    assert_eq!(counts[0], 121);
    assert!(counts.iter().any(|&c| c > 0 && c < 121), "{counts:?}");
}

#[test]
fn partial_set_is_concentrated_near_the_sensing_area() {
    let s = presets::reference_scenario().with_gain_threshold(dbm_to_watts(-18.0));
    let fs = scan_feasible_set(&s, 100.0).unwrap();
    assert!(!fs.locations.is_empty() && !fs.is_full());
    let c = s.sensing.centroid();
    let mean = |pts: &[Point]| pts.iter().map(|p| p.distance(c)).sum::<f64>() / pts.len() as f64;
    assert!(mean(&fs.locations) < mean(&fs.nodes));
}

#[test]
fn straight_corridor_is_feasible() {
    let s = presets::reference_scenario().with_gain_threshold(0.0);
    let m = mission(Point::new(0.0, 0.0), Point::new(100.0, 0.0), 11, 12.0);
    let mut fs = set_of((0..=10).map(|i| Point::new(10.0 * i as f64, 0.0)).collect());
    let r = build_reachability(&mut fs, &m, &s);
    assert_eq!(r.verdict, Verdict::Feasible);
    assert!((r.shortest_length.unwrap() - 100.0).abs() < 1e-9);
    let w = r.witness.unwrap();
    assert_eq!(w.first(), Some(&m.initial_position));
    assert_eq!(w.last(), Some(&m.final_position));
    assert_eq!(fs.component.len(), 11);
}

#[test]
fn disconnected_clusters_are_infeasible() {
    let s = presets::reference_scenario().with_gain_threshold(0.0);
    let m = mission(Point::new(0.0, 0.0), Point::new(100.0, 0.0), 50, 15.0);
    let mut pts: Vec<Point> = (0..4).map(|i| Point::new(10.0 * i as f64, 0.0)).collect();
    pts.extend((0..4).map(|i| Point::new(70.0 + 10.0 * i as f64, 0.0)));
    let mut fs = set_of(pts);
    let r = build_reachability(&mut fs, &m, &s);
    assert_eq!(r.verdict, Verdict::Disconnected);
    assert!(r.witness.is_none());
    assert!(fs.component.iter().all(|p| p.x <= 30.0));
}

/// L-shaped corridor: 0,0 -> 0,200 -> 200,200, while the straight distance
/// between the ends is only 283.
fn l_corridor() -> Vec<Point> {
    let mut pts: Vec<Point> = (0..=20).map(|i| Point::new(0.0, 10.0 * i as f64)).collect();
    pts.extend((1..=20).map(|i| Point::new(10.0 * i as f64, 200.0)));
    pts
}

#[test]
fn long_corridor_exceeds_budget() {
    let s = presets::reference_scenario().with_gain_threshold(0.0);
    let from = Point::new(0.0, 0.0);
    let to = Point::new(200.0, 200.0);
    // Budget 10 * 30 = 300 < corridor length (about 383 after corner cutting).
    let m = mission(from, to, 11, 30.0);
    let mut fs = set_of(l_corridor());
    let r = build_reachability(&mut fs, &m, &s);
    assert_eq!(r.verdict, Verdict::OverBudget);
    let len = r.shortest_length.unwrap();
    assert!(len > r.budget && len < 400.0, "{len}");

    // Enough slots make the same corridor feasible.
    let m = mission(from, to, 15, 30.0);
    let mut fs = set_of(l_corridor());
    let r = build_reachability(&mut fs, &m, &s);
    assert_eq!(r.verdict, Verdict::Feasible);
    let w = r.witness.unwrap();
    let total: f64 = w.windows(2).map(|p| p[0].distance(p[1])).sum();
    assert!(total <= r.budget + 1e-9);
    for e in w.windows(2) {
        assert!(e[0].distance(e[1]) <= 30.0 + 1e-9);
    }
}

#[test]
fn dfs_matches_union_find() {
    let s = presets::reference_scenario().with_gain_threshold(dbm_to_watts(-18.0));
    let fs = scan_feasible_set(&s, 50.0).unwrap();
    for step in [40.0, 50.0, 75.0, 150.0] {
        let m = mission(Point::new(0.0, 400.0), Point::new(1000.0, 400.0), 12, step);
        let g = ReachabilityGraph::build(&fs.locations, m.initial_position, m.final_position, step);
        assert_eq!(g.component(), union_find_component(&g), "step {step}");
    }
}

#[test]
fn endpoint_failure_is_reported() {
    let s = single_point(4, 1.0);
    let m = mission(Point::new(0.0, 0.0), Point::new(10.0, 0.0), 3, 10.0);
    let mut fs = set_of(Vec::new());
    let r = build_reachability(&mut fs, &m, &s);
    assert_eq!(r.verdict, Verdict::EndpointInfeasible);
}

#[test]
fn trajectory_from_straight_path() {
    let m = mission(Point::new(0.0, 0.0), Point::new(40.0, 0.0), 5, 10.0);
    let path: Vec<Point> = (0..5).map(|i| Point::new(10.0 * i as f64, 0.0)).collect();
    let t = initial_trajectory_from_path(&path, &m, Point::new(500.0, 500.0)).unwrap();
    assert_eq!(t.positions, path);
    assert!(t.satisfies(&m, 1e-9));
}

#[test]
fn short_path_dwells_nearest_the_anchor() {
    let m = mission(Point::new(0.0, 0.0), Point::new(30.0, 0.0), 8, 10.0);
    let path: Vec<Point> = (0..4).map(|i| Point::new(10.0 * i as f64, 0.0)).collect();
    let anchor = Point::new(12.0, 50.0);
    let t = initial_trajectory_from_path(&path, &m, anchor).unwrap();
    assert!(t.satisfies(&m, 1e-9));
    let dwell = t.positions.iter().filter(|&&p| p == Point::new(10.0, 0.0)).count();
    assert_eq!(dwell, 1 + 8 - 4);
}

#[test]
fn two_slots_fly_directly() {
    let m = mission(Point::new(0.0, 0.0), Point::new(5.0, 0.0), 2, 10.0);
    let path = [m.initial_position, m.final_position];
    let t = initial_trajectory_from_path(&path, &m, Point::default()).unwrap();
    assert_eq!(t.positions, path);
}

#[test]
fn overlong_path_is_rejected() {
    let m = mission(Point::new(0.0, 0.0), Point::new(30.0, 0.0), 3, 10.0);
    let path: Vec<Point> = (0..4).map(|i| Point::new(10.0 * i as f64, 0.0)).collect();
    assert!(matches!(
        initial_trajectory_from_path(&path, &m, Point::default()),
        Err(FeasibilityError::PathTooLong { .. })
    ));
    let bad = [Point::new(0.0, 0.0), Point::new(30.0, 0.0)];
    assert!(matches!(
        initial_trajectory_from_path(&bad, &m, Point::default()),
        Err(FeasibilityError::EdgeTooLong { .. })
    ));
}

#[test]
fn reference_mission_is_feasible_with_a_valid_start() {
    let s = presets::reference_scenario();
    let (fs, reach, traj) = mission_feasibility(&s, 100.0).unwrap();
    assert!(fs.is_full());
    assert!(reach.is_feasible());
    let t = traj.unwrap();
    let m = s.mission.as_ref().unwrap();
    assert!(t.satisfies(m, 1e-9));
}

#[test]
fn bad_resolution_is_rejected() {
    let s = presets::reference_scenario();
    assert!(matches!(scan_feasible_set(&s, 0.0), Err(FeasibilityError::BadResolution(_))));
    assert!(matches!(scan_feasible_set(&s, f64::NAN), Err(FeasibilityError::BadResolution(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dfs_and_union_find_agree_on_random_sets(
        pts in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64), 0..40),
        step in 5.0..60.0f64,
    ) {
        let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
        let g = ReachabilityGraph::build(&pts, Point::new(0.0, 0.0), Point::new(200.0, 200.0), step);
        prop_assert_eq!(g.component(), union_find_component(&g));
    }

    #[test]
    fn witness_paths_respect_the_limits(
        pts in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 0..60),
        step in 10.0..50.0f64,
        slots in 2usize..20,
    ) {
        let s = presets::reference_scenario().with_gain_threshold(0.0);
        let m = mission(Point::new(0.0, 0.0), Point::new(100.0, 100.0), slots, step);
        let mut fs = set_of(pts.into_iter().map(|(x, y)| Point::new(x, y)).collect());
        let r = build_reachability(&mut fs, &m, &s);
        if let Some(w) = &r.witness {
            let total: f64 = w.windows(2).map(|p| p[0].distance(p[1])).sum();
            prop_assert!(total <= r.budget + 1e-9);
            for e in w.windows(2) {
                prop_assert!(e[0].distance(e[1]) <= step + 1e-9);
            }
            let t = initial_trajectory_from_path(w, &m, Point::new(50.0, 50.0)).unwrap();
            prop_assert!(t.satisfies(&m, 1e-9));
        }
        // More slots never break feasibility.
        if r.is_feasible() {
            let m2 = mission(m.initial_position, m.final_position, slots + 3, step);
            prop_assert!(build_reachability(&mut fs, &m2, &s).is_feasible());
        }
    }
}

