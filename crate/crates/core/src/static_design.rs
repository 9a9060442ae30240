//! Hovering UAV: beamforming at a fixed location by successive convex
//! approximation over a semidefinite relaxation, rank-one reconstruction of
//! the relaxed solution, and grid search over the deployment location.
//!
//! Rates are written as a difference of concave functions,
//! `log2(sum_i h^H W_i h + h^H R h + s^2) - log2(sum_{i != k} h^H W_i h + h^H R h + s^2)`,
//! and the subtracted term is linearized at the current point. Matrix
//! variables inside the solver are in units of `P_max`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::channel::{
    beampattern_gain, channel_vector, distinct_range_points, sinr_and_rates, slant_distance_sqr, steering_vector, BeamformerSet, RateReport,
};
use crate::feasibility::{sensing_covariance_with, FeasibilityError, Verdict};
use crate::math;
use crate::numerics::{ComplexVector, HermitianMatrix};
use crate::scenario::{Point, Scenario};
use crate::solver::{
    self, AffineExpr, ConvexProblem, PsdCoef, PsdVar, SolveReport, SolverError, SolverOptions,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum DesignError {
    #[error("sensing constraints cannot be met at {0}")]
    Infeasible(Point),
    #[error("no grid location satisfies the sensing constraints")]
    NoFeasibleLocation,
    #[error("solver failed at {location}: {source}")]
    Solver {
        location: Point,
        #[source]
        source: SolverError,
    },
    #[error("relaxed beam of user {user} has no component along its channel")]
    DegenerateDirection { user: usize },
    #[error("slot {slot}: {source}")]
    Slot {
        slot: usize,
        #[source]
        source: Box<DesignError>,
    },
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error("mission is not flyable: {0:?}")]
    MissionInfeasible(Verdict),
    #[error("trajectory needs {required} m of flight but the mission allows {available} m")]
    OverBudget { required: f64, available: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticOptions {
    pub solver: SolverOptions,
    /// Stop once the weighted sum rate improves by less than this (bps/Hz).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StaticOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            tolerance: 1e-4,
            max_iterations: 50,
        }
    }
}

/// Information covariances `W_k` and the sensing covariance `R_s`, in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub info: Vec<HermitianMatrix>,
    pub sensing: HermitianMatrix,
}

impl CovarianceSet {
    pub fn zeros(num_users: usize, num_antennas: usize) -> Self {
        Self {
            info: (0..num_users).map(|_| HermitianMatrix::zeros(num_antennas)).collect(),
            sensing: HermitianMatrix::zeros(num_antennas),
        }
    }

    pub fn from_beams(beams: &BeamformerSet) -> Self {
        Self {
            info: beams.info_beams.iter().map(|w| HermitianMatrix::outer(w)).collect(),
            sensing: beams.sensing_cov.clone(),
        }
    }

    /// `sum_k W_k + R_s`
    pub fn total(&self) -> HermitianMatrix {
        let mut g = self.sensing.clone();
        for w in &self.info {
            g += w;
        }
        g
    }

    pub fn total_power(&self) -> f64 {
        self.info.iter().map(HermitianMatrix::trace).sum::<f64>() + self.sensing.trace()
    }
}

/// First-order expansion of the subtracted log term of every user:
/// `a_k = log2(den_k)` and `B_k = log2(e) h_k h_k^H / den_k` with
/// `den_k = sum_{i != k} h^H W_i h + h^H R h + sigma_k^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<HermitianMatrix>,
    /// `den_k`
    pub denominators: Vec<f64>,
}

fn channels(q: Point, scenario: &Scenario) -> Vec<ComplexVector> {
    scenario
        .users
        .iter()
        .map(|u| channel_vector(q, u.position, &scenario.uav))
        .collect()
}

/// `sum_{i != k} h^H W_i h + h^H R h + sigma_k^2` for every user.
fn interference_plus_noise(local: &CovarianceSet, hs: &[ComplexVector], scenario: &Scenario) -> Vec<f64> {
    hs.iter()
        .enumerate()
        .map(|(k, h)| {
            let mut s = local.sensing.quadratic_form_unchecked(h) + scenario.users[k].noise_power;
            for (i, w) in local.info.iter().enumerate() {
                if i != k {
                    s += w.quadratic_form_unchecked(h);
                }
            }
            s
        })
        .collect()
}

pub fn sca_coefficients(local: &CovarianceSet, q: Point, scenario: &Scenario) -> ScaCoefficients {
    let hs = channels(q, scenario);
    let den = interference_plus_noise(local, &hs, scenario);
    ScaCoefficients {
        a: den.iter().map(|&d| math::log2(d)).collect(),
        b: hs
            .iter()
            .zip(&den)
            .map(|(h, d)| HermitianMatrix::outer(h).scaled(math::LOG2_E / d))
            .collect(),
        denominators: den,
    }
}

/// Per-user rates of the relaxed problem,
/// `log2(sum_i h^H W_i h + h^H R h + s^2) - log2(den_k)`.
pub fn relaxed_rates(x: &CovarianceSet, q: Point, scenario: &Scenario) -> Vec<f64> {
    let hs = channels(q, scenario);
    let den = interference_plus_noise(x, &hs, scenario);
    hs.iter()
        .enumerate()
        .map(|(k, h)| {
            let own = x.info[k].quadratic_form_unchecked(h);
            math::log2(den[k] + own) - math::log2(den[k])
        })
        .collect()
}

/// Concave lower bounds of the relaxed rates at `x`, tight at `local`.
pub fn sca_lower_bound(
    x: &CovarianceSet,
    local: &CovarianceSet,
    coeffs: &ScaCoefficients,
    q: Point,
    scenario: &Scenario,
) -> Vec<f64> {
    let hs = channels(q, scenario);
    let den = interference_plus_noise(x, &hs, scenario);
    hs.iter()
        .enumerate()
        .map(|(k, h)| {
            let total = den[k] + x.info[k].quadratic_form_unchecked(h);
            let mut lin = coeffs.b[k].inner(&(&x.sensing - &local.sensing));
            for (i, (w, w0)) in x.info.iter().zip(&local.info).enumerate() {
                if i != k {
                    lin += coeffs.b[k].inner(&(w - w0));
                }
            }
            math::log2(total) - coeffs.a[k] - lin
        })
        .collect()
}

pub fn weighted(values: &[f64], scenario: &Scenario) -> f64 {
    values
        .iter()
        .zip(&scenario.users)
        .map(|(v, u)| u.weight * v)
        .sum()
}

#[derive(Debug, Clone)]
pub struct SdrSolution {
    pub point: CovarianceSet,
    /// Weighted sum of the SCA lower bounds at `point`.
    pub bound: f64,
    pub report: SolveReport,
}

pub(crate) fn solve_accepting_limit(
    p: &ConvexProblem,
    opts: &SolverOptions,
) -> Result<solver::Solved, SolverError> {
    match solver::solve(p, opts) {
        Err(SolverError::IterationLimit { report, solution }) if report.kkt_residual < 1e-4 => {
            log::warn!(
                "solver stopped at its iteration cap with gap {:e}; using the last iterate",
                report.kkt_residual
            );
            Ok(solver::Solved {
                solution: *solution,
                report,
            })
        }
        other => other,
    }
}

/// Sensing rows `sum_i a^H W_i a + a^H R a >= d^2 Gamma`, scaled to O(1).
fn add_sensing_rows(
    p: &mut ConvexProblem,
    blocks: &[PsdVar],
    q: Point,
    scenario: &Scenario,
) {
    let uav = &scenario.uav;
    let gamma = scenario.sensing.gain_threshold;
    for m in distinct_range_points(q, &scenario.sensing.points, uav.altitude) {
        let need = slant_distance_sqr(q, m, uav.altitude) * gamma / uav.max_power;
        let a = steering_vector(q, m, uav);
        let mut e = AffineExpr::constant(-1.0);
        for &b in blocks {
            e.add_psd(b, PsdCoef::Outer(1.0 / need, a.clone()));
        }
        p.add_ge_zero(e);
    }
}

fn add_power_row(p: &mut ConvexProblem, blocks: &[PsdVar]) {
    let mut e = AffineExpr::constant(-1.0);
    for &b in blocks {
        e.add_psd(b, PsdCoef::Identity(1.0));
    }
    p.add_le_zero(e);
}

/// The convex subproblem: maximize the weighted SCA lower bound over PSD
/// `W_k`, `R_s` under the power budget and (when `Gamma > 0`) the sensing
/// constraints. With `Gamma = 0` the sensing covariance is fixed at zero.
pub fn solve_sdr_subproblem(
    coeffs: &ScaCoefficients,
    local: &CovarianceSet,
    q: Point,
    scenario: &Scenario,
    opts: &SolverOptions,
) -> Result<SdrSolution, DesignError> {
    let uav = &scenario.uav;
    let k_users = scenario.users.len();
    let m = uav.num_antennas;
    let pmax = uav.max_power;
    let sensing_on = scenario.sensing.gain_threshold > 0.0;
    if pmax <= 0.0 {
        let point = CovarianceSet::zeros(k_users, m);
        let bound = weighted(&sca_lower_bound(&point, local, coeffs, q, scenario), scenario);
        return Ok(SdrSolution {
            point,
            bound,
            report: SolveReport {
                status: solver::SolveStatus::Optimal,
                objective: 0.0,
                iterations: 0,
                outer_iterations: 0,
                kkt_residual: 0.0,
                wall_time: 0.0,
                objective_trace: Vec::new(),
            },
        });
    }

    let hs = channels(q, scenario);
    let mut p = ConvexProblem::new();
    let w: Vec<PsdVar> = (0..k_users).map(|k| p.add_psd(format!("W{k}"), m)).collect();
    let r = sensing_on.then(|| p.add_psd("R", m));
    let mut blocks = w.clone();
    blocks.extend(r);

    for (k, (h, user)) in hs.iter().zip(&scenario.users).enumerate() {
        if user.weight == 0.0 {
            continue;
        }
        let hn = h.norm_sqr();
        let dir = h.scaled(1.0 / math::sqrt(hn));
        // log2(sigma^2 + P sum h^H X h) = log2(sigma^2) + log2(1 + ...)
        let gain = pmax * hn / user.noise_power;
        let mut arg = AffineExpr::constant(1.0);
        for &b in &blocks {
            arg.add_psd(b, PsdCoef::Outer(gain, dir.clone()));
        }
        p.maximize_log(user.weight * math::LOG2_E, arg);
        // - alpha_k tr(B_k X) over the interfering blocks.
        let slope = -user.weight * math::LOG2_E * pmax * hn / coeffs.denominators[k];
        let mut lin = AffineExpr::new();
        for (i, &b) in blocks.iter().enumerate() {
            if i != k {
                lin.add_psd(b, PsdCoef::Outer(slope, dir.clone()));
            }
        }
        p.maximize_linear(lin);
    }
    add_power_row(&mut p, &blocks);
    if sensing_on {
        add_sensing_rows(&mut p, &blocks, q, scenario);
    }

    let out = solve_accepting_limit(&p, opts).map_err(|e| match e {
        SolverError::Infeasible { .. } => DesignError::Infeasible(q),
        source => DesignError::Solver { location: q, source },
    })?;
    let point = CovarianceSet {
        info: w.iter().map(|&b| out.solution.psd(b).scaled(pmax)).collect(),
        sensing: match r {
            Some(b) => out.solution.psd(b).scaled(pmax),
            None => HermitianMatrix::zeros(m),
        },
    };
    let bound = weighted(&sca_lower_bound(&point, local, coeffs, q, scenario), scenario);
    Ok(SdrSolution {
        point,
        bound,
        report: out.report,
    })
}

/// Rank-one beams with the same own-signal powers and the same total
/// covariance: `w_k = W_k h_k / sqrt(h_k^H W_k h_k)` and
/// `R = sum_k W_k + R_s - sum_k w_k w_k^H`.
pub fn rank_one_reconstruct(
    dots: &CovarianceSet,
    q: Point,
    scenario: &Scenario,
) -> Result<BeamformerSet, DesignError> {
    let m = scenario.uav.num_antennas;
    let pmax = scenario.uav.max_power;
    let hs = channels(q, scenario);
    let mut beams = Vec::with_capacity(dots.info.len());
    let mut sensing = dots.total();
    for (k, (wk, h)) in dots.info.iter().zip(&hs).enumerate() {
        let tr = wk.trace();
        if tr < 1e-10 * pmax {
            beams.push(ComplexVector::zeros(m));
            continue;
        }
        let own = wk.quadratic_form_unchecked(h);
        if !(own >= 1e-14 * tr * h.norm_sqr()) {
            return Err(DesignError::DegenerateDirection { user: k });
        }
        let v = wk.apply(h).map_err(|e| DesignError::Invalid(format!("{e}")))?;
        let w = v.scaled(1.0 / math::sqrt(own));
        sensing.add_outer(-1.0, &w);
        beams.push(w);
    }
    Ok(BeamformerSet {
        info_beams: beams,
        sensing_cov: sensing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaStep {
    /// Weighted SCA lower bound reached by the subproblem.
    pub bound: f64,
    /// Weighted sum rate of the reconstructed beams.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticSolution {
    pub location: Point,
    pub beams: BeamformerSet,
    /// Weighted sum rate (bps/Hz), or the max-min sensing gain for the
    /// sensing-only design.
    pub objective: f64,
    pub rates: RateReport,
    pub trace: Vec<ScaStep>,
}

fn check_init(init: &BeamformerSet, scenario: &Scenario) -> Result<(), DesignError> {
    let m = scenario.uav.num_antennas;
    if init.info_beams.len() != scenario.users.len()
        || init.sensing_cov.dim() != m
        || init.info_beams.iter().any(|w| w.len() != m)
    {
        return Err(DesignError::Invalid(format!(
            "initial beams must have {} users and {m} antennas",
            scenario.users.len()
        )));
    }
    Ok(())
}

/// Scaled matched filters carrying half the budget, plus half the budget on
/// a sensing-feasible covariance.
fn default_start(q: Point, scenario: &Scenario, feasible_cov: Option<&HermitianMatrix>) -> CovarianceSet {
    let uav = &scenario.uav;
    let k_users = scenario.users.len();
    let pmax = uav.max_power;
    let hs = channels(q, scenario);
    let info_share = if feasible_cov.is_some() { 0.5 } else { 1.0 };
    let info = hs
        .iter()
        .map(|h| HermitianMatrix::outer(h).scaled(info_share * pmax / (k_users as f64 * h.norm_sqr())))
        .collect();
    let sensing = match feasible_cov {
        Some(r) if r.trace() > 0.0 => r.scaled(0.5 * pmax / r.trace()),
        _ => HermitianMatrix::zeros(uav.num_antennas),
    };
    CovarianceSet { info, sensing }
}

fn starts_feasible(q: Point, beams: &BeamformerSet, scenario: &Scenario) -> bool {
    let uav = &scenario.uav;
    let gamma = scenario.sensing.gain_threshold;
    beams.total_power() <= uav.max_power * (1.0 + 1e-9)
        && (gamma <= 0.0
            || scenario.sensing.points.iter().all(|&m| {
                beampattern_gain(q, m, beams, uav) >= gamma * slant_distance_sqr(q, m, uav.altitude)
            }))
}

/// SCA at a fixed location until the weighted sum rate stalls.
pub fn solve_fixed_location(
    q: Point,
    scenario: &Scenario,
    init: Option<&BeamformerSet>,
    opts: &StaticOptions,
) -> Result<StaticSolution, DesignError> {
    let sensing_on = scenario.sensing.gain_threshold > 0.0;
    let feasible_cov = if sensing_on {
        Some(sensing_covariance_with(q, scenario, &opts.solver).ok_or(DesignError::Infeasible(q))?)
    } else {
        None
    };
    let mut local = match init {
        Some(b) => {
            check_init(b, scenario)?;
            let mut c = CovarianceSet::from_beams(b);
            if !sensing_on {
                c.sensing = HermitianMatrix::zeros(scenario.uav.num_antennas);
            }
            c
        }
        None => default_start(q, scenario, feasible_cov.as_ref()),
    };

    let mut trace = Vec::new();
    // A feasible starting point is itself a candidate, so a warm start never
    // loses ground.
    let mut best: Option<(BeamformerSet, f64)> = init
        .filter(|b| starts_feasible(q, b, scenario))
        .map(|b| (b.clone(), sinr_and_rates(q, b, scenario).weighted_sum));
    for _ in 0..opts.max_iterations.max(1) {
        let coeffs = sca_coefficients(&local, q, scenario);
        let sdr = solve_sdr_subproblem(&coeffs, &local, q, scenario, &opts.solver)?;
        let beams = rank_one_reconstruct(&sdr.point, q, scenario)?;
        let objective = sinr_and_rates(q, &beams, scenario).weighted_sum;
        trace.push(ScaStep {
            bound: sdr.bound,
            objective,
        });
        local = CovarianceSet::from_beams(&beams);
        let prev = best.as_ref().map(|b| b.1);
        if prev.map_or(true, |p| objective >= p) {
            best = Some((beams, objective));
        }
        if let Some(p) = prev {
            if objective - p < opts.tolerance {
                break;
            }
        }
    }
    let (beams, objective) = best.expect("at least one iteration runs");
    Ok(StaticSolution {
        location: q,
        rates: sinr_and_rates(q, &beams, scenario),
        beams,
        objective,
        trace,
    })
}

/// Objective of every grid node (`None` where sensing is infeasible) and the
/// best solution.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub nodes: Vec<(Point, Option<f64>)>,
    /// Beams found at each node, aligned with `nodes`.
    pub beams: Vec<Option<BeamformerSet>>,
    pub best: StaticSolution,
}

/// Relative gap under which two grid objectives count as tied.
pub const TIE_TOLERANCE: f64 = 1e-6;

fn pick_best(results: Vec<(Point, Option<StaticSolution>)>) -> Option<GridSearch> {
    let top = results
        .iter()
        .filter_map(|(_, s)| s.as_ref().map(|s| s.objective))
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let cut = top - TIE_TOLERANCE * top.abs();
    let mut nodes = Vec::with_capacity(results.len());
    let mut beams = Vec::with_capacity(results.len());
    let mut best: Option<StaticSolution> = None;
    for (p, s) in results {
        nodes.push((p, s.as_ref().map(|s| s.objective)));
        beams.push(s.as_ref().map(|s| s.beams.clone()));
        let Some(s) = s else { continue };
        if s.objective < cut {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => (p.x, p.y) < (b.location.x, b.location.y),
        };
        if better {
            best = Some(s);
        }
    }
    best.map(|best| GridSearch { nodes, beams, best })
}

/// Two-dimensional location search: SCA at every sensing-feasible node, best
/// weighted sum rate wins. Near-ties go to the lexicographically smallest
/// `(x, y)`.
pub fn solve_p1(
    scenario: &Scenario,
    resolution: f64,
    opts: &StaticOptions,
) -> Result<GridSearch, DesignError> {
    solve_p1_from(scenario, resolution, opts, None)
}

/// [`solve_p1`] with per-node warm starts taken from an earlier search over
/// the same grid (for instance at a stricter sensing threshold).
pub fn solve_p1_from(
    scenario: &Scenario,
    resolution: f64,
    opts: &StaticOptions,
    warm: Option<&GridSearch>,
) -> Result<GridSearch, DesignError> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(FeasibilityError::BadResolution(resolution).into());
    }
    let nodes = scenario.search_area.grid(resolution);
    let starts: Vec<(Point, Option<&BeamformerSet>)> = nodes
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let w = warm
                .filter(|w| w.nodes.get(i).map(|n| n.0) == Some(q))
                .and_then(|w| w.beams[i].as_ref());
            (q, w)
        })
        .collect();
    let results = crate::par::map(&starts, |&(q, init)| {
        let s = match solve_fixed_location(q, scenario, init, opts) {
            Ok(s) => Some(s),
            Err(DesignError::Infeasible(_)) => None,
            Err(e) => {
                log::warn!("skipping grid node {q}: {e}");
                None
            }
        };
        (q, s)
    });
    pick_best(results).ok_or(DesignError::NoFeasibleLocation)
}

/// Max-min sensing at `q`: the largest `t` with `a_j^H R a_j >= t d_j^2` for
/// every sensing point under the power budget. Returns `(t, R)`.
pub fn max_min_sensing_at(
    q: Point,
    scenario: &Scenario,
    opts: &SolverOptions,
) -> Result<(f64, HermitianMatrix), DesignError> {
    let uav = &scenario.uav;
    let m = uav.num_antennas;
    let pmax = uav.max_power;
    if pmax <= 0.0 {
        return Ok((0.0, HermitianMatrix::zeros(m)));
    }
    let points = distinct_range_points(q, &scenario.sensing.points, uav.altitude);
    let d2: Vec<f64> = points.iter().map(|&p| slant_distance_sqr(q, p, uav.altitude)).collect();
    // `P M / min d^2` bounds `t`; the solver works with t / t_ref.
    let t_ref = pmax * m as f64 / d2.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p = ConvexProblem::new();
    let r = p.add_psd("R", m);
    let tau = p.add_vector("t", 1).at(0);
    p.maximize_linear(AffineExpr::new().var(tau, 1.0));
    add_power_row(&mut p, &[r]);
    for (&mj, &d) in points.iter().zip(&d2) {
        let a = steering_vector(q, mj, uav);
        p.add_ge_zero(
            AffineExpr::new()
                .psd(r, PsdCoef::Outer(pmax / (d * t_ref), a))
                .var(tau, -1.0),
        );
    }
    p.add_ge_zero(AffineExpr::new().var(tau, 1.0));
    let out = solve_accepting_limit(&p, opts).map_err(|source| DesignError::Solver { location: q, source })?;
    let cov = out.solution.psd(r).scaled(pmax);
    // Report the gain actually reached by the returned covariance.
    let t = points
        .iter()
        .zip(&d2)
        .map(|(&mj, &d)| cov.quadratic_form_unchecked(&steering_vector(q, mj, uav)) / d)
        .fold(f64::INFINITY, f64::min);
    Ok((t.max(0.0), cov))
}

/// Sensing-only deployment: grid search of [`max_min_sensing_at`]. Information
/// beams are zero.
pub fn solve_p9(
    scenario: &Scenario,
    resolution: f64,
    opts: &SolverOptions,
) -> Result<GridSearch, DesignError> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(FeasibilityError::BadResolution(resolution).into());
    }
    let nodes = scenario.search_area.grid(resolution);
    let k_users = scenario.users.len();
    let m = scenario.uav.num_antennas;
    let results = crate::par::map(&nodes, |&q| match max_min_sensing_at(q, scenario, opts) {
        Ok((t, cov)) => {
            let beams = BeamformerSet {
                info_beams: (0..k_users).map(|_| ComplexVector::zeros(m)).collect(),
                sensing_cov: cov,
            };
            let rates = sinr_and_rates(q, &beams, scenario);
            (
                q,
                Some(StaticSolution {
                    location: q,
                    beams,
                    objective: t,
                    rates,
                    trace: Vec::new(),
                }),
            )
        }
        Err(e) => {
            log::warn!("skipping grid node {q}: {e}");
            (q, None)
        }
    });
    pick_best(results).ok_or(DesignError::NoFeasibleLocation)
}
