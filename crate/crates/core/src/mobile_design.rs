//! Trajectory plus per-slot beamforming for a moving UAV.
//!
//! Beamforming and trajectory are optimized alternately. With the trajectory
//! fixed every slot is a hovering problem. With the beams fixed the rates and
//! the sensing gains are linearized in the slot positions and a trust-region
//! step is taken; a step is kept only if the exact objective improves.

use alloc::vec;
use alloc::vec::Vec;

use crate::channel::{beampattern_gain, sinr_and_rates, slant_distance_sqr, BeamformerSet};
use crate::feasibility::{mission_feasibility, LENGTH_SLACK};
use crate::math;
use crate::numerics::{ComplexVector, HermitianMatrix};
use crate::scenario::{MissionPlan, Point, Scenario, UavConfig};
use crate::solver::{AffineExpr, ConvexProblem, Point as SolverPoint, SolverOptions};
use crate::static_design::{
    max_min_sensing_at, solve_accepting_limit, solve_fixed_location, DesignError, StaticOptions,
};

/// Tolerance (W) on the exact sensing constraints of an accepted trajectory.
pub const SENSING_SLACK: f64 = 1e-7;

/// Horizontal UAV position in each time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Point>,
}

impl Trajectory {
    pub fn new(positions: Vec<Point>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn path_length(&self) -> f64 {
        self.positions.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn max_step(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| w[0].distance(w[1]))
            .fold(0.0, f64::max)
    }

    /// Slot count, endpoints and per-slot displacement against `mission`.
    pub fn satisfies(&self, mission: &MissionPlan, slack: f64) -> bool {
        self.len() == mission.num_slots
            && self.positions.first() == Some(&mission.initial_position)
            && self.positions.last() == Some(&mission.final_position)
            && self.max_step() <= mission.max_displacement() + slack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionConfig {
    /// Starting radius (m).
    pub initial_radius: f64,
    /// The trajectory loop ends once the radius drops below this (m).
    pub radius_floor: f64,
    /// Outer loop stops when the objective improves by less than this.
    pub outer_tolerance: f64,
    pub max_outer: usize,
    /// Cap on subproblem solves in one trajectory optimization.
    pub max_steps: usize,
}

impl TrustRegionConfig {
    pub fn for_mission(mission: &MissionPlan) -> Self {
        Self {
            initial_radius: mission.max_displacement(),
            radius_floor: 0.1,
            outer_tolerance: 1e-3,
            max_outer: 30,
            max_steps: 200,
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        let ok = self.initial_radius > 0.0
            && self.radius_floor > 0.0
            && self.radius_floor < self.initial_radius
            && self.outer_tolerance > 0.0
            && self.max_outer > 0
            && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(DesignError::Invalid(
                "trust region needs 0 < floor < initial radius and positive tolerances".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobileOptions {
    pub beamforming: StaticOptions,
    pub trust: TrustRegionConfig,
    /// Grid used to find a flyable starting path when none is given (m).
    pub witness_resolution: f64,
}

impl MobileOptions {
    pub fn for_mission(mission: &MissionPlan) -> Self {
        Self {
            beamforming: StaticOptions::default(),
            trust: TrustRegionConfig::for_mission(mission),
            witness_resolution: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobileSolution {
    pub trajectory: Trajectory,
    pub beams: Vec<BeamformerSet>,
    /// Average over slots of the weighted sum rate (bps/Hz). For the
    /// sensing-only design, the average max-min gain `a^H R a / d^2` (W).
    pub objective: f64,
    /// Objective after each outer iteration, starting with the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl MobileSolution {
    /// Weighted sum rate in every slot.
    pub fn slot_rates(&self, scenario: &Scenario) -> Vec<f64> {
        self.trajectory
            .positions
            .iter()
            .zip(&self.beams)
            .map(|(&q, b)| sinr_and_rates(q, b, scenario).weighted_sum)
            .collect()
    }
}

/// Average weighted sum rate of `beams` flown along `traj`.
pub fn average_rate(traj: &Trajectory, beams: &[BeamformerSet], scenario: &Scenario) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    let total: f64 = traj
        .positions
        .iter()
        .zip(beams)
        .map(|(&q, b)| sinr_and_rates(q, b, scenario).weighted_sum)
        .sum();
    total / traj.len() as f64
}

/// Every slot meets `a^H G a >= Gamma d^2` within [`SENSING_SLACK`].
pub fn meets_sensing(traj: &Trajectory, beams: &[BeamformerSet], scenario: &Scenario) -> bool {
    let gamma = scenario.sensing.gain_threshold;
    if gamma <= 0.0 {
        return true;
    }
    let uav = &scenario.uav;
    traj.positions.iter().zip(beams).all(|(&q, b)| {
        scenario.sensing.points.iter().all(|&m| {
            beampattern_gain(q, m, b, uav) >= gamma * slant_distance_sqr(q, m, uav.altitude) - SENSING_SLACK
        })
    })
}

/// Value of `a^H X a` towards `p` from `q` and its gradient in `q`.
pub fn gain_with_gradient(x: &HermitianMatrix, q: Point, p: Point, uav: &UavConfig) -> (f64, Point) {
    let n = x.dim();
    let rel = q - p;
    let dist = math::sqrt(slant_distance_sqr(q, p, uav.altitude));
    let phi = math::TAU * uav.antenna_spacing_ratio;
    let base = phi * uav.altitude / dist;
    let mut value: f64 = x.diagonal().iter().sum();
    let mut slope = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            let z = x.get(a, b);
            let mag = z.norm();
            if mag == 0.0 {
                continue;
            }
            let lag = (b - a) as f64;
            let ang = z.arg() + base * lag;
            value += 2.0 * mag * math::cos(ang);
            slope += 2.0 * mag * math::sin(ang) * phi * lag;
        }
    }
    let k = slope * uav.altitude / (dist * dist * dist);
    (value, rel * k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub value: f64,
    pub gradient: Point,
}

/// First-order models of every rate and sensing gain around a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationCoefficients {
    /// `[slot][user]` rate in bps/Hz and its gradient per metre.
    pub rates: Vec<Vec<Linearization>>,
    /// `[slot][sensing point]` gain `a^H G a` (W) and its gradient.
    pub sensing: Vec<Vec<Linearization>>,
}

/// Rate of every user at `q` as `log2(e_k) - log2(f_k)` with
/// `e_k = a^H G a + sigma_k^2 d_k^2 / beta` and `f_k = e_k - |a^H w_k|^2`,
/// and its gradient.
pub fn linearize_rate(q: Point, beams: &BeamformerSet, scenario: &Scenario) -> Vec<Linearization> {
    let uav = &scenario.uav;
    let g = beams.covariance();
    scenario
        .users
        .iter()
        .zip(&beams.info_beams)
        .map(|(user, w)| {
            let u = user.position;
            let noise = user.noise_power / uav.channel_gain_ref;
            let (eta_g, grad_g) = gain_with_gradient(&g, q, u, uav);
            let (eta_k, grad_k) = gain_with_gradient(&HermitianMatrix::outer(w), q, u, uav);
            let e = eta_g + noise * slant_distance_sqr(q, u, uav.altitude);
            let f = e - eta_k;
            let grad_e = grad_g + (q - u) * (2.0 * noise);
            let grad_f = grad_e - grad_k;
            let log2e = math::LOG2_E;
            Linearization {
                value: math::log2(e) - math::log2(f),
                gradient: grad_e * (log2e / e) - grad_f * (log2e / f),
            }
        })
        .collect()
}

/// Gain `a^H G a` towards `m` and its gradient in `q`.
pub fn linearize_sensing(q: Point, beams: &BeamformerSet, m: Point, uav: &UavConfig) -> Linearization {
    let (value, gradient) = gain_with_gradient(&beams.covariance(), q, m, uav);
    Linearization { value, gradient }
}

pub fn linearization_coefficients(
    traj: &Trajectory,
    beams: &[BeamformerSet],
    scenario: &Scenario,
) -> LinearizationCoefficients {
    let sensing_on = scenario.sensing.gain_threshold > 0.0;
    let mut rates = Vec::with_capacity(traj.len());
    let mut sensing = Vec::with_capacity(traj.len());
    for (&q, b) in traj.positions.iter().zip(beams) {
        rates.push(linearize_rate(q, b, scenario));
        sensing.push(if sensing_on {
            let g = b.covariance();
            scenario
                .sensing
                .points
                .iter()
                .map(|&m| {
                    let (value, gradient) = gain_with_gradient(&g, q, m, &scenario.uav);
                    Linearization { value, gradient }
                })
                .collect()
        } else {
            Vec::new()
        });
    }
    LinearizationCoefficients { rates, sensing }
}

/// Trust-region subproblem skeleton. Slot positions are
/// `q[n] = local[n] + radius * z[n]` with `|z[n]| <= 1`; endpoints are fixed.
struct StepProgram {
    p: ConvexProblem,
    /// Solver index of `z[n].x` for free slots.
    index: Vec<Option<usize>>,
    radius: f64,
}

impl StepProgram {
    fn new(local: &Trajectory, radius: f64, max_step: f64) -> Self {
        let n = local.len();
        let mut p = ConvexProblem::new();
        let free = n.saturating_sub(2);
        let z = p.add_vector("z", 2 * free);
        let index: Vec<Option<usize>> = (0..n)
            .map(|i| (i > 0 && i + 1 < n).then(|| z.at(2 * (i - 1))))
            .collect();
        for &ix in index.iter().flatten() {
            p.add_norm_le(&[ix, ix + 1], &[0.0, 0.0], 1.0);
        }
        let pos = &local.positions;
        for i in 0..n.saturating_sub(1) {
            let (a, b) = (index[i], index[i + 1]);
            if a.is_none() && b.is_none() {
                continue;
            }
            let delta = pos[i + 1] - pos[i];
            let s = radius / max_step;
            let row = |c: usize, off: f64| {
                let mut r = Vec::new();
                if let Some(ix) = b {
                    r.push((ix + c, s));
                }
                if let Some(ix) = a {
                    r.push((ix + c, -s));
                }
                (r, off / max_step)
            };
            p.add_quadratic_le(vec![row(0, delta.x), row(1, delta.y)], AffineExpr::constant(-1.0));
        }
        p.set_feasible_start(SolverPoint {
            psd: Vec::new(),
            vec: vec![0.0; p.num_scalars()],
        });
        Self { p, index, radius }
    }

    /// `radius * g . z[n]` for a gradient `g` at slot `n`.
    fn displacement(&self, slot: usize, g: Point, expr: AffineExpr) -> AffineExpr {
        match self.index[slot] {
            Some(ix) => expr.var(ix, self.radius * g.x).var(ix + 1, self.radius * g.y),
            None => expr,
        }
    }

    /// `value + grad . (q - local) >= Gamma (H^2 + |q - m|^2)`, divided by
    /// `Gamma d^2` at the local point.
    fn add_linearized_sensing(&mut self, slot: usize, local: Point, m: Point, lin: Linearization, gamma: f64, h: f64) {
        let rel = local - m;
        let d2 = rel.norm_sqr() + h * h;
        let d = math::sqrt(d2);
        let scale = 1.0 / (gamma * d2);
        let lin_expr = AffineExpr::constant(h * h / d2 - lin.value * scale);
        let lin_expr = self.displacement(slot, lin.gradient * -scale, lin_expr);
        let rows = match self.index[slot] {
            Some(ix) => vec![
                (vec![(ix, self.radius / d)], rel.x / d),
                (vec![(ix + 1, self.radius / d)], rel.y / d),
            ],
            None => return,
        };
        self.p.add_quadratic_le(rows, lin_expr);
    }

    fn solve(&self, local: &Trajectory, opts: &SolverOptions) -> Result<Trajectory, DesignError> {
        let out = solve_accepting_limit(&self.p, opts).map_err(|source| DesignError::Solver {
            location: local.positions.get(1).copied().unwrap_or_default(),
            source,
        })?;
        let positions = local
            .positions
            .iter()
            .zip(&self.index)
            .map(|(&q, ix)| match ix {
                Some(i) => q + Point::new(out.solution.vec[*i], out.solution.vec[i + 1]) * self.radius,
                None => q,
            })
            .collect();
        Ok(Trajectory::new(positions))
    }
}

fn has_free_slots(local: &Trajectory) -> bool {
    local.len() > 2
}

/// Convex trajectory step: maximize the linearized weighted sum rate under
/// the linearized sensing constraints, the speed limit and the trust region.
pub fn solve_p8l(
    local: &Trajectory,
    coeffs: &LinearizationCoefficients,
    radius: f64,
    scenario: &Scenario,
    max_step: f64,
    opts: &SolverOptions,
) -> Result<Trajectory, DesignError> {
    if radius <= 0.0 || !has_free_slots(local) {
        return Ok(local.clone());
    }
    let mut prog = StepProgram::new(local, radius, max_step);
    let n = local.len();
    let weights: Vec<f64> = scenario.users.iter().map(|u| u.weight).collect();
    let mut objective = AffineExpr::new();
    let mut push = false;
    for slot in 1..n - 1 {
        let g = coeffs.rates[slot]
            .iter()
            .zip(&weights)
            .fold(Point::default(), |acc, (l, &w)| acc + l.gradient * w);
        if g.norm() > 0.0 {
            push = true;
        }
        objective = prog.displacement(slot, g, objective);
    }
    if !push {
        return Ok(local.clone());
    }
    // Normalize so the barrier's absolute gap tolerance is meaningful.
    let scale = objective.vec.iter().fold(0.0f64, |m, (_, a)| m.max(a.abs()));
    for (_, a) in objective.vec.iter_mut() {
        *a /= scale;
    }
    prog.p.maximize_linear(objective);
    let gamma = scenario.sensing.gain_threshold;
    if gamma > 0.0 {
        for slot in 1..n - 1 {
            for (&m, lin) in scenario.sensing.points.iter().zip(&coeffs.sensing[slot]) {
                prog.add_linearized_sensing(slot, local.positions[slot], m, *lin, gamma, scenario.uav.altitude);
            }
        }
    }
    prog.solve(local, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionReport {
    pub trajectory: Trajectory,
    pub objective: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub final_radius: f64,
}

/// Shared trust-region loop. `step` proposes a trajectory for a local point
/// and radius; `score` is the exact objective, `None` when the candidate
/// breaks a constraint.
fn trust_region_loop(
    start: &Trajectory,
    start_score: f64,
    trc: &TrustRegionConfig,
    mut step: impl FnMut(&Trajectory, f64) -> Result<Trajectory, DesignError>,
    mut score: impl FnMut(&Trajectory) -> Option<f64>,
) -> TrustRegionReport {
    let mut current = start.clone();
    let mut best = start_score;
    let mut radius = trc.initial_radius;
    let (mut accepted, mut rejected) = (0, 0);
    while radius >= trc.radius_floor && accepted + rejected < trc.max_steps {
        let candidate = match step(&current, radius) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("trajectory step failed at radius {radius}: {e}");
                None
            }
        };
        match candidate.and_then(|c| score(&c).map(|v| (c, v))) {
            Some((c, v)) if v > best => {
                current = c;
                best = v;
                accepted += 1;
            }
            _ => {
                radius *= 0.5;
                rejected += 1;
            }
        }
    }
    TrustRegionReport {
        trajectory: current,
        objective: best,
        accepted,
        rejected,
        final_radius: radius,
    }
}

/// Trajectory update with beams held fixed. The returned objective never
/// falls below the input's.
pub fn optimize_trajectory(
    traj: &Trajectory,
    beams: &[BeamformerSet],
    trc: &TrustRegionConfig,
    scenario: &Scenario,
    max_step: f64,
    opts: &SolverOptions,
) -> TrustRegionReport {
    let start = average_rate(traj, beams, scenario);
    trust_region_loop(
        traj,
        start,
        trc,
        |local, radius| {
            let coeffs = linearization_coefficients(local, beams, scenario);
            solve_p8l(local, &coeffs, radius, scenario, max_step, opts)
        },
        |cand| meets_sensing(cand, beams, scenario).then(|| average_rate(cand, beams, scenario)),
    )
}

fn feasible_beams(q: Point, beams: &BeamformerSet, scenario: &Scenario) -> bool {
    beams.total_power() <= scenario.uav.max_power * (1.0 + 1e-9)
        && meets_sensing(&Trajectory::new(vec![q]), core::slice::from_ref(beams), scenario)
}

/// Per-slot beamforming. Slots sharing a position are solved once. With
/// `init`, previous beams that are still feasible act as warm starts and are
/// never beaten by a worse result.
pub fn solve_p6(
    traj: &Trajectory,
    scenario: &Scenario,
    init: Option<&[BeamformerSet]>,
    opts: &StaticOptions,
) -> Result<Vec<BeamformerSet>, DesignError> {
    let mut groups: Vec<(Point, Vec<usize>)> = Vec::new();
    for (n, &q) in traj.positions.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == q) {
            Some(g) => g.1.push(n),
            None => groups.push((q, vec![n])),
        }
    }
    let results = crate::par::map(&groups, |(q, slots)| {
        let q = *q;
        let warm = init.and_then(|b| {
            slots
                .iter()
                .filter_map(|&n| b.get(n))
                .filter(|b| feasible_beams(q, b, scenario))
                .map(|b| (sinr_and_rates(q, b, scenario).weighted_sum, b))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, b)| b)
        });
        solve_fixed_location(q, scenario, warm, opts)
            .map(|sol| sol.beams)
            .map_err(|e| DesignError::Slot {
                slot: slots[0],
                source: alloc::boxed::Box::new(e),
            })
    });
    let mut out: Vec<Option<BeamformerSet>> = vec![None; traj.len()];
    for ((_, slots), r) in groups.iter().zip(results) {
        let beams = r?;
        for &n in slots {
            out[n] = Some(beams.clone());
        }
    }
    Ok(out.into_iter().map(|b| b.expect("every slot belongs to a group")).collect())
}

fn check_trajectory(traj: &Trajectory, mission: &MissionPlan) -> Result<(), DesignError> {
    if traj.satisfies(mission, LENGTH_SLACK) {
        Ok(())
    } else {
        Err(DesignError::Invalid(
            "trajectory does not match the mission slots, endpoints or speed limit".into(),
        ))
    }
}

fn mission_of(scenario: &Scenario) -> Result<&MissionPlan, DesignError> {
    scenario
        .mission
        .as_ref()
        .ok_or(DesignError::Feasibility(crate::feasibility::FeasibilityError::NoMission))
}

/// Flyable starting trajectory from the reachability analysis.
pub fn witness_trajectory(scenario: &Scenario, resolution: f64) -> Result<Trajectory, DesignError> {
    let (_, reach, traj) = mission_feasibility(scenario, resolution)?;
    traj.ok_or(DesignError::MissionInfeasible(reach.verdict))
}

/// Alternating beamforming / trajectory optimization from `init` (or from the
/// reachability witness).
pub fn solve_p2(
    scenario: &Scenario,
    init: Option<&Trajectory>,
    opts: &MobileOptions,
) -> Result<MobileSolution, DesignError> {
    let traj = match init {
        Some(t) => t.clone(),
        None => witness_trajectory(scenario, opts.witness_resolution)?,
    };
    solve_p2_from(scenario, &traj, None, opts)
}

/// [`solve_p2`] from a trajectory and, optionally, beams for its slots.
pub fn solve_p2_from(
    scenario: &Scenario,
    init: &Trajectory,
    init_beams: Option<&[BeamformerSet]>,
    opts: &MobileOptions,
) -> Result<MobileSolution, DesignError> {
    let mission = mission_of(scenario)?;
    opts.trust.validate()?;
    let mut traj = init.clone();
    check_trajectory(&traj, mission)?;
    let max_step = mission.max_displacement();
    let mut beams = solve_p6(&traj, scenario, init_beams, &opts.beamforming)?;
    let mut objective = average_rate(&traj, &beams, scenario);
    let mut trace = vec![objective];
    let mut converged = false;
    for outer in 0..opts.trust.max_outer {
        if outer > 0 {
            beams = solve_p6(&traj, scenario, Some(&beams), &opts.beamforming)?;
        }
        let step = optimize_trajectory(&traj, &beams, &opts.trust, scenario, max_step, &opts.beamforming.solver);
        traj = step.trajectory;
        let next = step.objective;
        log::debug!(
            "outer {outer}: objective {next:.6} ({} accepted, {} rejected)",
            step.accepted,
            step.rejected
        );
        trace.push(next);
        let gain = next - objective;
        objective = next;
        if gain < opts.trust.outer_tolerance {
            converged = true;
            break;
        }
    }
    Ok(MobileSolution {
        trajectory: traj,
        beams,
        objective,
        trace,
        converged,
    })
}

/// Mobile designs compared at one sensing threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MobileComparison {
    pub isac: MobileSolution,
    pub straight: MobileSolution,
    pub fly_hover_fly: MobileSolution,
    /// The same scenario without sensing constraints.
    pub comm_only: MobileSolution,
}

/// Runs the benchmarks and the joint design. The joint design starts from
/// both benchmark designs and from the reachability witness and keeps the
/// best; the communication-only design starts from the joint result.
pub fn compare_designs(
    scenario: &Scenario,
    hover: Point,
    opts: &MobileOptions,
) -> Result<MobileComparison, DesignError> {
    let mission = mission_of(scenario)?;
    let straight = solve_on_trajectory(scenario, &sf_trajectory(mission)?, &opts.beamforming)?;
    let fly_hover_fly = solve_on_trajectory(scenario, &fhf_trajectory(mission, hover)?, &opts.beamforming)?;
    let isac = best_joint(scenario, &[&fly_hover_fly, &straight], opts)?;
    let free = scenario.with_gain_threshold(0.0);
    let comm_only = solve_p2_from(&free, &isac.trajectory, Some(&isac.beams), opts)?;
    Ok(MobileComparison {
        isac,
        straight,
        fly_hover_fly,
        comm_only,
    })
}

/// Joint design started from every benchmark that can be flown (fly-hover-fly
/// needs `hover`) and from the reachability witness; the best result wins.
pub fn solve_joint(
    scenario: &Scenario,
    hover: Option<Point>,
    opts: &MobileOptions,
) -> Result<MobileSolution, DesignError> {
    let mission = mission_of(scenario)?;
    let mut trajectories = Vec::new();
    if let Some(h) = hover {
        trajectories.push(fhf_trajectory(mission, h));
    }
    trajectories.push(sf_trajectory(mission));
    let mut starts = Vec::new();
    for t in trajectories {
        match t.and_then(|t| solve_on_trajectory(scenario, &t, &opts.beamforming)) {
            Ok(s) => starts.push(s),
            Err(e) => log::debug!("benchmark start unavailable: {e}"),
        }
    }
    let refs: Vec<&MobileSolution> = starts.iter().collect();
    best_joint(scenario, &refs, opts)
}

fn best_joint(
    scenario: &Scenario,
    starts: &[&MobileSolution],
    opts: &MobileOptions,
) -> Result<MobileSolution, DesignError> {
    let mut best: Option<MobileSolution> = None;
    let mut failure = None;
    let runs = starts
        .iter()
        .map(|s| solve_p2_from(scenario, &s.trajectory, Some(&s.beams), opts))
        .chain(core::iter::once_with(|| solve_p2(scenario, None, opts)));
    for r in runs {
        match r {
            Ok(s) => {
                if best.as_ref().map_or(true, |b| s.objective > b.objective) {
                    best = Some(s);
                }
            }
            Err(e) => {
                log::warn!("joint design start discarded: {e}");
                failure = Some(e);
            }
        }
    }
    best.ok_or_else(|| failure.unwrap_or_else(|| DesignError::Invalid("no start produced a joint design".into())))
}

/// Beamforming only, on a fixed trajectory (the SF and FHF benchmarks).
pub fn solve_on_trajectory(
    scenario: &Scenario,
    traj: &Trajectory,
    opts: &StaticOptions,
) -> Result<MobileSolution, DesignError> {
    let beams = solve_p6(traj, scenario, None, opts)?;
    let objective = average_rate(traj, &beams, scenario);
    Ok(MobileSolution {
        trajectory: traj.clone(),
        beams,
        objective,
        trace: vec![objective],
        converged: true,
    })
}

/// Straight line at constant speed.
pub fn sf_trajectory(mission: &MissionPlan) -> Result<Trajectory, DesignError> {
    let (a, b) = (mission.initial_position, mission.final_position);
    let n = mission.num_slots;
    let moves = n.saturating_sub(1);
    let required = a.distance(b);
    let available = mission.max_displacement() * moves as f64;
    if n == 0 || required > available + LENGTH_SLACK {
        return Err(DesignError::OverBudget { required, available });
    }
    let positions = (0..n)
        .map(|i| match i {
            0 => a,
            i if i == moves => b,
            i => a.lerp(b, i as f64 / moves as f64),
        })
        .collect();
    Ok(Trajectory::new(positions))
}

/// Moves needed to cover `dist` at full speed.
fn legs(dist: f64, max_step: f64) -> usize {
    let r = dist / max_step;
    let k = math::ceil(r - 1e-9);
    if k < 0.0 {
        0
    } else {
        k as usize
    }
}

fn leg(from: Point, to: Point, moves: usize, max_step: f64, out: &mut Vec<Point>) {
    let dist = from.distance(to);
    for k in 1..moves {
        out.push(from.lerp(to, k as f64 * max_step / dist));
    }
    if moves > 0 {
        out.push(to);
    }
}

/// Full speed to `hover`, dwell there, full speed to the final position.
pub fn fhf_trajectory(mission: &MissionPlan, hover: Point) -> Result<Trajectory, DesignError> {
    let v = mission.max_displacement();
    let (a, b) = (mission.initial_position, mission.final_position);
    let (n1, n2) = (legs(a.distance(hover), v), legs(hover.distance(b), v));
    let n = mission.num_slots;
    if n == 0 || 1 + n1 + n2 > n {
        // Each leg takes whole full-speed moves.
        return Err(DesignError::OverBudget {
            required: (n1 + n2) as f64 * v,
            available: v * n.saturating_sub(1) as f64,
        });
    }
    let mut positions = Vec::with_capacity(n);
    positions.push(a);
    leg(a, hover, n1, v, &mut positions);
    let dwell = n - 1 - n1 - n2;
    positions.extend(core::iter::repeat(hover).take(dwell));
    leg(hover, b, n2, v, &mut positions);
    Ok(Trajectory::new(positions))
}

/// Smallest `a^H R a / d^2` over the sensing points.
pub fn min_normalized_gain(q: Point, beams: &BeamformerSet, scenario: &Scenario) -> f64 {
    let uav = &scenario.uav;
    scenario
        .sensing
        .points
        .iter()
        .map(|&m| beampattern_gain(q, m, beams, uav) / slant_distance_sqr(q, m, uav.altitude))
        .fold(f64::INFINITY, f64::min)
}

fn average_min_gain(traj: &Trajectory, beams: &[BeamformerSet], scenario: &Scenario) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    traj.positions
        .iter()
        .zip(beams)
        .map(|(&q, b)| min_normalized_gain(q, b, scenario))
        .sum::<f64>()
        / traj.len() as f64
}

/// Sensing-only trajectory step: maximize `sum_n t[n]` with every
/// linearized `rho_j = a^H R a / d^2` at least `t[n]`.
fn sensing_step(
    local: &Trajectory,
    beams: &[BeamformerSet],
    radius: f64,
    scenario: &Scenario,
    max_step: f64,
    opts: &SolverOptions,
) -> Result<Trajectory, DesignError> {
    if radius <= 0.0 || !has_free_slots(local) {
        return Ok(local.clone());
    }
    let uav = &scenario.uav;
    let mut prog = StepProgram::new(local, radius, max_step);
    let n = local.len();
    let tvars = prog.p.add_vector("t", n - 2);
    let mut rho_now = Vec::with_capacity(n - 2);
    for slot in 1..n - 1 {
        rho_now.push(min_normalized_gain(local.positions[slot], &beams[slot], scenario));
    }
    let unit = rho_now.iter().sum::<f64>() / rho_now.len() as f64;
    if !(unit > 0.0) {
        return Ok(local.clone());
    }
    let mut objective = AffineExpr::new();
    let mut start = vec![0.0; prog.p.num_scalars()];
    for slot in 1..n - 1 {
        let q = local.positions[slot];
        let g = beams[slot].covariance();
        let t = tvars.at(slot - 1);
        objective = objective.var(t, 1.0);
        // Strictly below every row at z = 0.
        start[t] = (rho_now[slot - 1] / unit) * (1.0 - 1e-3) - 1e-3;
        for &m in &scenario.sensing.points {
            let (gain, grad) = gain_with_gradient(&g, q, m, uav);
            let d2 = slant_distance_sqr(q, m, uav.altitude);
            let rho = gain / d2;
            let grad_rho = (grad - (q - m) * (2.0 * rho)) * (1.0 / d2);
            let row = AffineExpr::constant(rho / unit).var(t, -1.0);
            prog.p.add_ge_zero(prog.displacement(slot, grad_rho * (1.0 / unit), row));
        }
    }
    prog.p.maximize_linear(objective);
    prog.p.set_feasible_start(SolverPoint {
        psd: Vec::new(),
        vec: start,
    });
    prog.solve(local, opts)
}

/// Alternating max-min sensing design over the trajectory. Starts from the
/// straight flight unless `init` is given; information beams stay zero.
pub fn solve_p10(
    scenario: &Scenario,
    init: Option<&Trajectory>,
    opts: &MobileOptions,
) -> Result<MobileSolution, DesignError> {
    let mission = mission_of(scenario)?;
    opts.trust.validate()?;
    let mut traj = match init {
        Some(t) => t.clone(),
        None => sf_trajectory(mission)?,
    };
    check_trajectory(&traj, mission)?;
    let max_step = mission.max_displacement();
    let solver = &opts.beamforming.solver;
    let k_users = scenario.users.len();
    let m = scenario.uav.num_antennas;
    let sense = |traj: &Trajectory, prev: Option<&[BeamformerSet]>| -> Result<Vec<BeamformerSet>, DesignError> {
        let slots: Vec<(usize, Point)> = traj.positions.iter().copied().enumerate().collect();
        crate::par::map(&slots, |&(n, q)| {
            let (_, cov) = max_min_sensing_at(q, scenario, solver).map_err(|e| DesignError::Slot {
                slot: n,
                source: alloc::boxed::Box::new(e),
            })?;
            let fresh = BeamformerSet {
                info_beams: (0..k_users).map(|_| ComplexVector::zeros(m)).collect(),
                sensing_cov: cov,
            };
            Ok(match prev.and_then(|p| p.get(n)) {
                Some(old) if min_normalized_gain(q, old, scenario) > min_normalized_gain(q, &fresh, scenario) => {
                    old.clone()
                }
                _ => fresh,
            })
        })
        .into_iter()
        .collect()
    };
    let mut beams = sense(&traj, None)?;
    let mut objective = average_min_gain(&traj, &beams, scenario);
    let mut trace = vec![objective];
    let mut converged = false;
    for outer in 0..opts.trust.max_outer {
        if outer > 0 {
            beams = sense(&traj, Some(&beams))?;
        }
        let step = trust_region_loop(
            &traj,
            average_min_gain(&traj, &beams, scenario),
            &opts.trust,
            |local, radius| sensing_step(local, &beams, radius, scenario, max_step, solver),
            |cand| Some(average_min_gain(cand, &beams, scenario)),
        );
        traj = step.trajectory;
        let next = step.objective;
        trace.push(next);
        let gain = next - objective;
        objective = next;
        // Gains are in watts; the stopping rule is relative.
        if gain <= opts.trust.outer_tolerance * objective.abs() {
            converged = true;
            break;
        }
    }
    Ok(MobileSolution {
        trajectory: traj,
        beams,
        objective,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests;
