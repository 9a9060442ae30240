use super::*;
use crate::channel::trace_gain_expansion;
use crate::numerics::Complex;
use crate::presets;
use crate::scenario::{dbm_to_watts, Rect, SensingGrid, User};
use crate::static_design::max_min_sensing_at;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 0.01;

fn mission(n: usize, from: Point, to: Point, speed: f64) -> MissionPlan {
    MissionPlan {
        num_slots: n,
        slot_duration: 1.0,
        initial_position: from,
        final_position: to,
        max_speed: speed,
    }
}

fn scenario(users: &[Point], sensing: &[Point], gamma: f64, m: usize) -> Scenario {
    Scenario {
        users: users
            .iter()
            .map(|&position| User {
                position,
                weight: 1.0,
                noise_power: dbm_to_watts(-110.0),
            })
            .collect(),
        sensing: SensingGrid {
            points: sensing.to_vec(),
            gain_threshold: gamma,
        },
        uav: UavConfig {
            num_antennas: m,
            ..presets::reference_uav()
        },
        mission: None,
        search_area: Rect::default(),
    }
}

fn random_beams(rng: &mut ChaCha8Rng, k: usize, m: usize, power: f64) -> BeamformerSet {
    let mut v = || -> ComplexVector {
        ComplexVector::from_fn(m, |_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    };
    let beams: Vec<ComplexVector> = (0..k).map(|_| v()).collect();
    let r = v();
    let mut cov = HermitianMatrix::outer(&r);
    let extra = v();
    cov.add_outer(0.5, &extra);
    let mut set = BeamformerSet {
        info_beams: beams,
        sensing_cov: cov,
    };
    let s = power / set.total_power();
    set.info_beams = set.info_beams.iter().map(|w| w.scaled(s.sqrt())).collect();
    set.sensing_cov = set.sensing_cov.scaled(s);
    set
}

fn random_point(rng: &mut ChaCha8Rng) -> Point {
    Point::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0))
}

fn central_difference(f: impl Fn(Point) -> f64, q: Point) -> Point {
    let dx = (f(q + Point::new(FD_STEP, 0.0)) - f(q - Point::new(FD_STEP, 0.0))) / (2.0 * FD_STEP);
    let dy = (f(q + Point::new(0.0, FD_STEP)) - f(q - Point::new(0.0, FD_STEP))) / (2.0 * FD_STEP);
    Point::new(dx, dy)
}

fn assert_gradient(got: Point, want: Point, context: &str) {
    let scale = want.norm().max(got.norm());
    assert!(
        (got - want).norm() <= 1e-4 * scale + 1e-12,
        "{context}: {got} vs finite difference {want}"
    );
}

#[test]
fn gain_value_matches_expansion_and_quadratic_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &m in &[2, 8, 12] {
        let s = scenario(&[Point::new(0.0, 0.0)], &[], 0.0, m);
        for _ in 0..20 {
            let b = random_beams(&mut rng, 2, m, 0.5);
            let g = b.covariance();
            let (q, p) = (random_point(&mut rng), random_point(&mut rng));
            let (value, _) = gain_with_gradient(&g, q, p, &s.uav);
            let dist = slant_distance_sqr(q, p, s.uav.altitude).sqrt();
            let expansion = trace_gain_expansion(&g, dist, &s.uav);
            let direct = beampattern_gain(q, p, &b, &s.uav);
            assert!((value - expansion).abs() <= 1e-9 * expansion.abs().max(1e-12));
            assert!((value - direct).abs() <= 1e-9 * direct.abs().max(1e-12));
        }
    }
}

#[test]
fn rate_linearization_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &m in &[2, 8, 12] {
        for _ in 0..100 {
            let users = [random_point(&mut rng), random_point(&mut rng), random_point(&mut rng)];
            let s = scenario(&users, &[], 0.0, m);
            let b = random_beams(&mut rng, 3, m, 0.5);
            let q = random_point(&mut rng);
            let lin = linearize_rate(q, &b, &s);
            let exact = sinr_and_rates(q, &b, &s);
            for (k, l) in lin.iter().enumerate() {
                let r = exact.per_user_rate[k];
                assert!((l.value - r).abs() <= 1e-9 * r.max(1e-9), "value {} vs {r}", l.value);
                let fd = central_difference(|p| sinr_and_rates(p, &b, &s).per_user_rate[k], q);
                assert_gradient(l.gradient, fd, "rate");
            }
        }
    }
}

#[test]
fn sensing_linearization_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &m in &[2, 8, 12] {
        let s = scenario(&[], &[], 0.0, m);
        for _ in 0..100 {
            let b = random_beams(&mut rng, 2, m, 0.5);
            let (q, target) = (random_point(&mut rng), random_point(&mut rng));
            let lin = linearize_sensing(q, &b, target, &s.uav);
            assert!((lin.value - beampattern_gain(q, target, &b, &s.uav)).abs() <= 1e-9 * lin.value.max(1e-12));
            let fd = central_difference(|p| beampattern_gain(p, target, &b, &s.uav), q);
            assert_gradient(lin.gradient, fd, "sensing");
        }
    }
}

#[test]
fn diagonal_covariance_has_flat_gain() {
    let s = scenario(&[], &[], 0.0, 6);
    let g = HermitianMatrix::from_diagonal(&[0.1, 0.2, 0.05, 0.0, 0.3, 0.1]);
    let (value, grad) = gain_with_gradient(&g, Point::new(120.0, 40.0), Point::new(700.0, 300.0), &s.uav);
    assert!((value - g.trace()).abs() < 1e-15);
    assert_eq!(grad, Point::default());
}

#[test]
fn diagonal_beams_leave_only_path_loss_in_the_rate_gradient() {
    // Isotropic signalling: the rate depends on q only through d^2.
    let u = Point::new(300.0, 200.0);
    let s = scenario(&[u, Point::new(900.0, 900.0)], &[], 0.0, 4);
    let mut b = BeamformerSet::zeros(2, 4);
    b.info_beams[0] = ComplexVector::new(vec![Complex::new(0.3, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0)]);
    b.sensing_cov = HermitianMatrix::scaled_identity(4, 0.05);
    let q = Point::new(450.0, 260.0);
    let lin = linearize_rate(q, &b, &s);
    let uav = &s.uav;
    let noise = s.users[0].noise_power / uav.channel_gain_ref;
    let (p0, r) = (0.09, 0.2);
    let d2 = slant_distance_sqr(q, u, uav.altitude);
    let e = p0 + r + noise * d2;
    let f = r + noise * d2;
    let want = (q - u) * (2.0 * noise * core::f64::consts::LOG2_E * (1.0 / e - 1.0 / f));
    assert_gradient(lin[0].gradient, want, "isotropic");
}

fn straight(from: Point, to: Point, n: usize) -> Trajectory {
    Trajectory::new((0..n).map(|i| from.lerp(to, i as f64 / (n - 1) as f64)).collect())
}

#[test]
fn zero_radius_and_zero_gradients_keep_the_trajectory() {
    let s = scenario(&[Point::new(500.0, 500.0)], &[], 0.0, 4);
    let local = straight(Point::new(0.0, 0.0), Point::new(400.0, 0.0), 5);
    let beams: Vec<BeamformerSet> = (0..5).map(|_| BeamformerSet::zeros(1, 4)).collect();
    let coeffs = linearization_coefficients(&local, &beams, &s);
    let opts = SolverOptions::default();
    assert_eq!(solve_p8l(&local, &coeffs, 50.0, &s, 200.0, &opts).unwrap(), local);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let beams: Vec<BeamformerSet> = (0..5).map(|_| random_beams(&mut rng, 1, 4, 0.5)).collect();
    let coeffs = linearization_coefficients(&local, &beams, &s);
    assert_eq!(solve_p8l(&local, &coeffs, 0.0, &s, 200.0, &opts).unwrap(), local);
}

#[test]
fn large_radius_moves_free_slots_towards_the_user() {
    let u = Point::new(300.0, 250.0);
    let s = scenario(&[u], &[], 0.0, 4);
    let home = Point::new(0.0, 0.0);
    let local = Trajectory::new(vec![home; 6]);
    let b = BeamformerSet {
        info_beams: vec![ComplexVector::new(vec![Complex::new(0.35, 0.0); 4])],
        sensing_cov: HermitianMatrix::zeros(4),
    };
    let beams = vec![b; 6];
    let coeffs = linearization_coefficients(&local, &beams, &s);
    let step = 100.0;
    let out = solve_p8l(&local, &coeffs, 1e4, &s, step, &SolverOptions::default()).unwrap();
    assert!(out.max_step() <= step * (1.0 + 1e-9));
    assert_eq!(out.positions[0], home);
    assert_eq!(out.positions[5], home);
    for n in 1..5 {
        let g = coeffs.rates[n][0].gradient;
        let moved = out.positions[n] - home;
        assert!(moved.norm() > 1.0, "slot {n} did not move");
        // The linear objective pushes every slot along its gradient.
        assert!(moved.dot(g) / (moved.norm() * g.norm()) > 0.999, "slot {n}: {moved} vs {g}");
    }
    // Slots farthest from the pinned endpoints go farthest.
    let r: Vec<f64> = out.positions.iter().map(|p| p.distance(home)).collect();
    assert!((r[1] - step).abs() < 1e-3 && (r[2] - 2.0 * step).abs() < 1e-3);
    assert!((r[3] - 2.0 * step).abs() < 1e-3 && (r[4] - step).abs() < 1e-3);
}

#[test]
fn trust_region_improves_a_single_user_trajectory() {
    let u = Point::new(500.0, 300.0);
    let mut s = scenario(&[u], &[], 0.0, 4);
    let plan = mission(6, Point::new(0.0, 0.0), Point::new(1000.0, 0.0), 300.0);
    s.mission = Some(plan.clone());
    let traj = sf_trajectory(&plan).unwrap();
    let opts = StaticOptions::default();
    let beams = solve_p6(&traj, &s, None, &opts).unwrap();
    let before = average_rate(&traj, &beams, &s);
    let trc = TrustRegionConfig::for_mission(&plan);
    let rep = optimize_trajectory(&traj, &beams, &trc, &s, plan.max_displacement(), &opts.solver);
    assert!(rep.accepted >= 1);
    assert!(rep.objective > before + 1e-3, "{} vs {before}", rep.objective);
    assert!((rep.objective - average_rate(&rep.trajectory, &beams, &s)).abs() < 1e-12);
    assert!(rep.trajectory.satisfies(&plan, LENGTH_SLACK));
    assert!(rep.final_radius < trc.radius_floor);
}

#[test]
fn rejected_steps_halve_the_radius_down_to_the_floor() {
    let traj = straight(Point::new(0.0, 0.0), Point::new(10.0, 0.0), 3);
    let trc = TrustRegionConfig {
        initial_radius: 150.0,
        radius_floor: 0.1,
        outer_tolerance: 1e-3,
        max_outer: 30,
        max_steps: 1000,
    };
    let mut solves = 0;
    let rep = trust_region_loop(
        &traj,
        1.0,
        &trc,
        |t, _| {
            solves += 1;
            Ok(t.clone())
        },
        |_| Some(0.5),
    );
    let expected = (150.0f64 / 0.1).log2().ceil() as usize;
    assert_eq!(solves, expected);
    assert_eq!(rep.rejected, expected);
    assert_eq!(rep.accepted, 0);
    assert_eq!(rep.trajectory, traj);
}

#[test]
fn straight_flight_is_uniform() {
    let plan = mission(7, Point::new(0.0, 100.0), Point::new(600.0, 900.0), 200.0);
    let t = sf_trajectory(&plan).unwrap();
    assert_eq!(t.len(), 7);
    let step = 1000.0 / 6.0;
    for w in t.positions.windows(2) {
        assert!((w[0].distance(w[1]) - step).abs() < 1e-9);
    }
    assert!(t.satisfies(&plan, LENGTH_SLACK));
    let same = mission(4, Point::new(5.0, 5.0), Point::new(5.0, 5.0), 1.0);
    assert_eq!(sf_trajectory(&same).unwrap().positions, vec![Point::new(5.0, 5.0); 4]);
    let short = mission(3, Point::new(0.0, 0.0), Point::new(100.0, 0.0), 40.0);
    assert!(matches!(sf_trajectory(&short), Err(DesignError::OverBudget { .. })));
}

#[test]
fn fly_hover_fly_legs_and_dwell() {
    // 0 -> hover is 250 m (3 moves at 100 m), hover -> end is 150 m (2 moves).
    let plan = mission(10, Point::new(0.0, 0.0), Point::new(400.0, 0.0), 100.0);
    let hover = Point::new(250.0, 0.0);
    let t = fhf_trajectory(&plan, hover).unwrap();
    assert_eq!(t.len(), 10);
    let dwell = t.positions.iter().filter(|&&p| p == hover).count();
    assert_eq!(dwell, 10 - 3 - 2);
    let xs: Vec<f64> = t.positions.iter().map(|p| p.x).collect();
    assert_eq!(xs, vec![0.0, 100.0, 200.0, 250.0, 250.0, 250.0, 250.0, 250.0, 350.0, 400.0]);
    assert!(t.satisfies(&plan, LENGTH_SLACK));
    let tight = mission(5, Point::new(0.0, 0.0), Point::new(400.0, 0.0), 100.0);
    assert!(matches!(fhf_trajectory(&tight, hover), Err(DesignError::OverBudget { .. })));
}

#[test]
fn identical_slots_get_identical_beams() {
    let s = scenario(&[Point::new(200.0, 200.0), Point::new(700.0, 300.0)], &[Point::new(500.0, 700.0)], dbm_to_watts(-50.0), 4);
    let traj = Trajectory::new(vec![Point::new(400.0, 400.0); 3]);
    let beams = solve_p6(&traj, &s, None, &StaticOptions::default()).unwrap();
    assert_eq!(beams[0], beams[1]);
    assert_eq!(beams[1], beams[2]);
}

#[test]
fn single_user_slots_reach_the_matched_filter_rate() {
    let u = Point::new(300.0, 300.0);
    let s = scenario(&[u], &[], 0.0, 4);
    let traj = straight(Point::new(0.0, 0.0), Point::new(800.0, 500.0), 4);
    let beams = solve_p6(&traj, &s, None, &StaticOptions::default()).unwrap();
    let uav = &s.uav;
    for (&q, b) in traj.positions.iter().zip(&beams) {
        let d2 = slant_distance_sqr(q, u, uav.altitude);
        let mrt = (1.0 + uav.max_power * 4.0 * uav.channel_gain_ref / (d2 * s.users[0].noise_power)).log2();
        let got = sinr_and_rates(q, b, &s).weighted_sum;
        assert!((got - mrt).abs() < 1e-3, "{got} vs {mrt}");
    }
}

#[test]
fn infeasible_slot_is_named() {
    let s = scenario(&[Point::new(0.0, 0.0)], &[Point::new(500.0, 700.0)], 0.0, 4);
    let breakpoint = s.uav.max_power * 4.0 / (s.uav.altitude * s.uav.altitude);
    let s = s.with_gain_threshold(0.9 * breakpoint);
    // Only the slot right above the sensing point can meet the threshold.
    let traj = Trajectory::new(vec![Point::new(500.0, 700.0), Point::new(500.0, 700.0), Point::new(0.0, 0.0)]);
    match solve_p6(&traj, &s, None, &StaticOptions::default()) {
        Err(DesignError::Slot { slot, source }) => {
            assert_eq!(slot, 2);
            assert!(matches!(*source, DesignError::Infeasible(_)));
        }
        other => panic!("expected a slot error, got {other:?}"),
    }
}

fn small_mobile(gamma: f64, n: usize) -> Scenario {
    let users = [Point::new(150.0, 150.0), Point::new(850.0, 200.0)];
    let sensing = [
        Point::new(450.0, 650.0),
        Point::new(550.0, 650.0),
        Point::new(450.0, 750.0),
        Point::new(550.0, 750.0),
    ];
    let mut s = scenario(&users, &sensing, gamma, 4);
    s.mission = Some(MissionPlan {
        num_slots: n,
        slot_duration: 5.0,
        initial_position: Point::new(0.0, 400.0),
        final_position: Point::new(1000.0, 400.0),
        max_speed: 40.0,
    });
    s
}

fn fast_options(s: &Scenario) -> MobileOptions {
    let mut o = MobileOptions::for_mission(s.mission.as_ref().unwrap());
    o.witness_resolution = 100.0;
    o
}

#[test]
fn pinned_endpoints_reduce_to_beamforming() {
    let s = small_mobile(dbm_to_watts(-45.0), 2);
    let mut s = s;
    if let Some(m) = s.mission.as_mut() {
        m.max_speed = 1000.0;
    }
    let opts = fast_options(&s);
    let traj = sf_trajectory(s.mission.as_ref().unwrap()).unwrap();
    let sol = solve_p2(&s, Some(&traj), &opts).unwrap();
    let direct = solve_on_trajectory(&s, &traj, &opts.beamforming).unwrap();
    assert_eq!(sol.trajectory, traj);
    assert!((sol.objective - direct.objective).abs() < 1e-9);
}

#[test]
fn alternating_design_is_monotone_and_feasible() {
    let s = small_mobile(dbm_to_watts(-45.0), 8);
    let mut opts = fast_options(&s);
    // Fixed beams make the rate sharply curved in position, so the outer
    // loop creeps; a coarse threshold keeps the fixture short.
    opts.trust.outer_tolerance = 1e-2;
    let sol = solve_p2(&s, None, &opts).unwrap();
    for w in sol.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{:?}", sol.trace);
    }
    assert!(sol.converged, "{:?}", sol.trace);
    assert!(sol.trace.len() <= opts.trust.max_outer + 1);
    let mission = s.mission.as_ref().unwrap();
    assert!(sol.trajectory.satisfies(mission, LENGTH_SLACK));
    assert!(meets_sensing(&sol.trajectory, &sol.beams, &s));
    assert!((sol.objective - average_rate(&sol.trajectory, &sol.beams, &s)).abs() < 1e-12);
    for b in &sol.beams {
        assert!(b.total_power() <= s.uav.max_power * (1.0 + 1e-6));
    }
    // Dropping the sensing requirement cannot hurt when started from the
    // same trajectory.
    let free = s.with_gain_threshold(0.0);
    let comm = solve_p2(&free, Some(&sol.trajectory), &opts).unwrap();
    assert!(comm.objective >= sol.objective - 1e-6);
}

#[test]
fn sensing_only_with_pinned_slots_matches_the_static_design() {
    let mut s = small_mobile(0.0, 2);
    if let Some(m) = s.mission.as_mut() {
        m.max_speed = 1000.0;
    }
    let opts = fast_options(&s);
    let sol = solve_p10(&s, None, &opts).unwrap();
    let mut want = 0.0;
    for &q in &sol.trajectory.positions {
        want += max_min_sensing_at(q, &s, &opts.beamforming.solver).unwrap().0;
    }
    want /= 2.0;
    assert!((sol.objective - want).abs() <= 1e-6 * want, "{} vs {want}", sol.objective);
}

#[test]
fn sensing_only_flies_towards_the_sensing_area() {
    let s = small_mobile(0.0, 8);
    let opts = fast_options(&s);
    let sol = solve_p10(&s, None, &opts).unwrap();
    for w in sol.trace.windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 1e-9), "{:?}", sol.trace);
    }
    let centre = s.sensing.centroid();
    let sf = sf_trajectory(s.mission.as_ref().unwrap()).unwrap();
    let mean = |t: &Trajectory| {
        let n = t.len();
        t.positions[1..n - 1].iter().map(|p| p.distance(centre)).sum::<f64>() / (n - 2) as f64
    };
    assert!(mean(&sol.trajectory) < mean(&sf) - 10.0, "{} vs {}", mean(&sol.trajectory), mean(&sf));
    assert!(sol.trajectory.satisfies(s.mission.as_ref().unwrap(), LENGTH_SLACK));
}

#[test]
fn sensing_only_without_power_is_zero() {
    let mut s = small_mobile(0.0, 6);
    s.uav.max_power = 0.0;
    let opts = fast_options(&s);
    let sol = solve_p10(&s, None, &opts).unwrap();
    assert_eq!(sol.objective, 0.0);
    assert!(sol.trajectory.satisfies(s.mission.as_ref().unwrap(), LENGTH_SLACK));
}
