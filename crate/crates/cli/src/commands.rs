use std::collections::HashSet;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use uav_isac_core::scenario::watts_to_dbm;
use uav_isac_core::channel::sinr_and_rates;
use uav_isac_core::feasibility::{mission_feasibility, scan_feasible_set, Verdict};
use uav_isac_core::mobile_design::{
    compare_designs, fhf_trajectory, min_normalized_gain, sf_trajectory, solve_joint, solve_on_trajectory,
    solve_p10, MobileOptions, MobileSolution,
};
use uav_isac_core::static_design::{
    solve_p1, solve_p1_from, solve_p9, DesignError, GridSearch, StaticOptions,
};
use uav_isac_core::{Point, Scenario};

use crate::config::{load_scenario, parse_scenario, ScenarioFile, REFERENCE_SCENARIO};
use crate::output::{map_rows, sca_trace, BeamsOut, OutputDir, PointRow, RatesOut, StaticOut};
use crate::{parse_threshold, Axis, Benchmark, Common, Design, FeasibilityArgs, MobileArgs, StaticArgs, SweepArgs, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Infeasible,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Infeasible => 2,
        }
    }
}

fn is_infeasible(e: &DesignError) -> bool {
    match e {
        DesignError::Infeasible(_)
        | DesignError::NoFeasibleLocation
        | DesignError::MissionInfeasible(_)
        | DesignError::OverBudget { .. } => true,
        DesignError::Slot { source, .. } => is_infeasible(source),
        _ => false,
    }
}

impl Common {
    /// The scenario with the command-line overrides applied.
    fn load(&self) -> Result<Scenario> {
        let mut s = match &self.scenario {
            Some(p) => load_scenario(p)?,
            None => parse_scenario(REFERENCE_SCENARIO, "built-in reference scenario")?,
        };
        if let Some(g) = self.gamma_dbm {
            s.sensing.gain_threshold = g.watts();
        }
        if let Some(m) = self.antennas {
            s.uav.num_antennas = m;
        }
        s.validate().context("scenario after command-line overrides")?;
        Ok(s)
    }
}

/// Runs `body` against a fresh output directory and always writes the
/// manifest, including for failed runs.
fn run_in(
    common: &Common,
    command: &str,
    config: serde_json::Value,
    body: impl FnOnce(&mut OutputDir) -> Result<Status>,
) -> Result<Status> {
    let mut out = OutputDir::create(&common.out, common.force)?;
    let result = body(&mut out);
    let code = match &result {
        Ok(s) => s.code(),
        Err(_) => 1,
    };
    out.finish(command, config, code)?;
    result
}

fn write_infeasible(out: &mut OutputDir, reason: &str) -> Result<Status> {
    log::info!("infeasible: {reason}");
    out.write_json("infeasible.json", &json!({ "reason": reason }))?;
    Ok(Status::Infeasible)
}

#[derive(Serialize, Default)]
struct GridRow {
    x: f64,
    y: f64,
    feasible: bool,
    reachable: bool,
}

#[derive(Serialize, Default)]
struct XY {
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct FeasibilityOut {
    verdict: String,
    resolution: f64,
    nodes: usize,
    feasible: usize,
    reachable: usize,
    shortest_length: Option<f64>,
    budget: Option<f64>,
    witness: Option<Vec<[f64; 2]>>,
    initial_trajectory: Option<Vec<[f64; 2]>>,
}

fn pairs(points: &[Point]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

fn key(p: Point) -> (u64, u64) {
    (p.x.to_bits(), p.y.to_bits())
}

pub fn feasibility(a: &FeasibilityArgs) -> Result<Status> {
    let scenario = a.common.load()?;
    let config = json!({
        "scenario": ScenarioFile::from_scenario(&scenario),
        "resolution": a.resolution,
    });
    run_in(&a.common, "feasibility", config, |out| {
        let (fs, summary, trajectory) = if scenario.mission.is_some() {
            let (fs, reach, traj) = mission_feasibility(&scenario, a.resolution)?;
            let verdict = format!("{:?}", reach.verdict);
            let feasible = reach.verdict == Verdict::Feasible;
            let summary = (verdict, feasible, reach.shortest_length, Some(reach.budget), reach.witness.clone());
            (fs, summary, traj)
        } else {
            let fs = scan_feasible_set(&scenario, a.resolution)?;
            let feasible = !fs.locations.is_empty();
            let verdict = if feasible { "Feasible" } else { "NoFeasibleLocation" };
            (fs, (verdict.to_string(), feasible, None, None, None), None)
        };
        let (verdict, feasible, shortest_length, budget, witness) = summary;
        let reachable: HashSet<(u64, u64)> = fs.component.iter().copied().map(key).collect();
        out.write_csv(
            "grid.csv",
            fs.nodes.iter().zip(&fs.feasible).map(|(p, &f)| GridRow {
                x: p.x,
                y: p.y,
                feasible: f,
                reachable: reachable.contains(&key(*p)),
            }),
        )?;
        out.write_csv("feasible_set.csv", fs.locations.iter().map(|p| XY { x: p.x, y: p.y }))?;
        out.write_json(
            "feasibility.json",
            &FeasibilityOut {
                verdict,
                resolution: a.resolution,
                nodes: fs.nodes.len(),
                feasible: fs.locations.len(),
                reachable: fs.component.len(),
                shortest_length,
                budget,
                witness: witness.as_deref().map(pairs),
                initial_trajectory: trajectory.as_ref().map(|t| pairs(&t.positions)),
            },
        )?;
        if let Some(t) = &trajectory {
            write_trajectory(out, "trajectory.csv", &t.positions)?;
        }
        Ok(if feasible { Status::Success } else { Status::Infeasible })
    })
}

fn write_trajectory(out: &mut OutputDir, name: &str, positions: &[Point]) -> Result<()> {
    out.write_csv(
        name,
        positions.iter().enumerate().map(|(i, p)| PointRow { n: i + 1, x: p.x, y: p.y }),
    )
}

fn static_options(common: &Common) -> StaticOptions {
    let mut o = StaticOptions::default();
    if let Some(t) = common.tol {
        o.tolerance = t;
    }
    o
}

#[derive(Serialize, Default)]
struct GridObjectiveRow {
    x: f64,
    y: f64,
    objective: Option<f64>,
}

pub fn solve_static(a: &StaticArgs) -> Result<Status> {
    let scenario = a.common.load()?;
    let opts = static_options(&a.common);
    if matches!(a.benchmark, Benchmark::Sf | Benchmark::Fhf) {
        bail!("benchmark {:?} needs a moving UAV; use solve-mobile", a.benchmark);
    }
    let config = json!({
        "scenario": ScenarioFile::from_scenario(&scenario),
        "benchmark": a.benchmark,
        "resolution": a.resolution,
        "map_resolution": a.map_resolution,
        "tolerance": opts.tolerance,
    });
    run_in(&a.common, "solve-static", config, |out| {
        let (design, name) = match a.benchmark {
            Benchmark::CommOnly => (scenario.with_gain_threshold(0.0), "comm-only"),
            Benchmark::SensingOnly => (scenario.clone(), "sensing-only"),
            _ => (scenario.clone(), "isac"),
        };
        let result = match a.benchmark {
            Benchmark::SensingOnly => solve_p9(&design, a.resolution, &opts.solver),
            _ => solve_p1(&design, a.resolution, &opts),
        };
        let grid = match result {
            Ok(g) => g,
            Err(e) if is_infeasible(&e) => return write_infeasible(out, &e.to_string()),
            Err(e) => return Err(e.into()),
        };
        let best = &grid.best;
        out.write_json("static_solution.json", &StaticOut::new(name, best))?;
        out.write_csv(
            "grid_objective.csv",
            grid.nodes.iter().map(|(p, v)| GridObjectiveRow {
                x: p.x,
                y: p.y,
                objective: *v,
            }),
        )?;
        out.write_csv("rate_trace.csv", sca_trace(best))?;
        out.write_csv(
            "beampattern_map.csv",
            map_rows(best.location, &best.beams, &best.rates, &design, &design.search_area, a.map_resolution),
        )?;
        Ok(Status::Success)
    })
}

fn mobile_options(a: &MobileArgs, scenario: &Scenario) -> Result<MobileOptions> {
    let mission = scenario.mission.as_ref().context("solve-mobile needs a [mission] section in the scenario")?;
    let mut o = MobileOptions::for_mission(mission);
    o.witness_resolution = a.witness_resolution;
    if let Some(t) = a.common.tol {
        o.trust.outer_tolerance = t;
    }
    if let Some(r) = a.initial_radius {
        o.trust.initial_radius = r;
    }
    if let Some(r) = a.radius_floor {
        o.trust.radius_floor = r;
    }
    if let Some(n) = a.max_outer {
        o.trust.max_outer = n;
    }
    o.trust.validate()?;
    Ok(o)
}

#[derive(Serialize)]
struct SlotOut {
    n: usize,
    position: [f64; 2],
    rates: RatesOut,
    min_normalized_gain: f64,
    beams: BeamsOut,
}

#[derive(Serialize)]
struct MobileOut {
    benchmark: Benchmark,
    objective_kind: &'static str,
    objective: f64,
    converged: bool,
    hover: Option<[f64; 2]>,
    trajectory: Vec<[f64; 2]>,
    trace: Vec<f64>,
    slots: Vec<SlotOut>,
}

#[derive(Serialize, Default)]
struct RateTraceRow {
    outer_iteration: usize,
    avg_sum_rate: f64,
}

#[derive(Serialize, Default)]
struct GainTraceRow {
    outer_iteration: usize,
    min_normalized_gain: f64,
}

#[derive(Serialize, Default)]
struct SlotRateRow {
    n: usize,
    user: usize,
    rate: f64,
}

pub fn solve_mobile(a: &MobileArgs) -> Result<Status> {
    let scenario = a.common.load()?;
    let opts = mobile_options(a, &scenario)?;
    let slots = scenario.mission.as_ref().map_or(0, |m| m.num_slots);
    if let Some(&bad) = a.maps.iter().find(|&&n| n == 0 || n > slots) {
        bail!("--maps slot {bad} is outside 1..={slots}");
    }
    let needs_hover = matches!(a.benchmark, Benchmark::Isac | Benchmark::Fhf | Benchmark::CommOnly);
    let config = json!({
        "scenario": ScenarioFile::from_scenario(&scenario),
        "benchmark": a.benchmark,
        "hover": a.hover.map(|p| [p.x, p.y]),
        "resolution": a.resolution,
        "witness_resolution": opts.witness_resolution,
        "trust_region": {
            "initial_radius": opts.trust.initial_radius,
            "radius_floor": opts.trust.radius_floor,
            "outer_tolerance": opts.trust.outer_tolerance,
            "max_outer": opts.trust.max_outer,
            "max_steps": opts.trust.max_steps,
        },
        "static_tolerance": opts.beamforming.tolerance,
        "maps": a.maps,
        "map_resolution": a.map_resolution,
    });
    run_in(&a.common, "solve-mobile", config, |out| {
        let hover = match (needs_hover, a.hover) {
            (false, _) => None,
            (true, Some(h)) => Some(h),
            (true, None) => match solve_p1(&scenario, a.resolution, &opts.beamforming) {
                Ok(g) => Some(g.best.location),
                Err(e) if is_infeasible(&e) => return write_infeasible(out, &e.to_string()),
                Err(e) => return Err(e.into()),
            },
        };
        let mission = scenario.mission.as_ref().expect("checked by mobile_options");
        let result = match a.benchmark {
            Benchmark::Isac => solve_joint(&scenario, hover, &opts),
            Benchmark::Sf => sf_trajectory(mission).and_then(|t| solve_on_trajectory(&scenario, &t, &opts.beamforming)),
            Benchmark::Fhf => fhf_trajectory(mission, hover.expect("hover resolved"))
                .and_then(|t| solve_on_trajectory(&scenario, &t, &opts.beamforming)),
            Benchmark::CommOnly => compare_designs(&scenario, hover.expect("hover resolved"), &opts).map(|c| c.comm_only),
            Benchmark::SensingOnly => solve_p10(&scenario, None, &opts),
        };
        let sol = match result {
            Ok(s) => s,
            Err(e) if is_infeasible(&e) => return write_infeasible(out, &e.to_string()),
            Err(e) => return Err(e.into()),
        };
        let rated = if a.benchmark == Benchmark::CommOnly {
            scenario.with_gain_threshold(0.0)
        } else {
            scenario.clone()
        };
        write_mobile(out, a, &rated, &sol, hover)?;
        Ok(Status::Success)
    })
}

fn write_mobile(out: &mut OutputDir, a: &MobileArgs, scenario: &Scenario, sol: &MobileSolution, hover: Option<Point>) -> Result<()> {
    let sensing_only = a.benchmark == Benchmark::SensingOnly;
    let slots: Vec<SlotOut> = sol
        .trajectory
        .positions
        .iter()
        .zip(&sol.beams)
        .enumerate()
        .map(|(i, (&q, b))| SlotOut {
            n: i + 1,
            position: [q.x, q.y],
            rates: RatesOut::new(&sinr_and_rates(q, b, scenario)),
            min_normalized_gain: min_normalized_gain(q, b, scenario),
            beams: BeamsOut::new(b),
        })
        .collect();
    let rows: Vec<SlotRateRow> = slots
        .iter()
        .flat_map(|slot| {
            slot.rates
                .per_user_rate
                .iter()
                .enumerate()
                .map(|(k, &rate)| SlotRateRow { n: slot.n, user: k, rate })
        })
        .collect();
    out.write_json(
        "mobile_solution.json",
        &MobileOut {
            benchmark: a.benchmark,
            objective_kind: if sensing_only { "min_normalized_gain" } else { "avg_sum_rate" },
            objective: sol.objective,
            converged: sol.converged,
            hover: hover.map(|p| [p.x, p.y]),
            trajectory: pairs(&sol.trajectory.positions),
            trace: sol.trace.clone(),
            slots,
        },
    )?;
    write_trajectory(out, "trajectory.csv", &sol.trajectory.positions)?;
    if sensing_only {
        out.write_csv(
            "rate_trace.csv",
            sol.trace.iter().enumerate().map(|(i, &v)| GainTraceRow {
                outer_iteration: i,
                min_normalized_gain: v,
            }),
        )?;
    } else {
        out.write_csv(
            "rate_trace.csv",
            sol.trace.iter().enumerate().map(|(i, &v)| RateTraceRow {
                outer_iteration: i,
                avg_sum_rate: v,
            }),
        )?;
    }
    out.write_csv("slot_rates.csv", rows)?;
    let mut maps = a.maps.clone();
    maps.sort_unstable();
    maps.dedup();
    for n in maps {
        let q = sol.trajectory.positions[n - 1];
        let b = &sol.beams[n - 1];
        let rates = sinr_and_rates(q, b, scenario);
        out.write_csv(
            &format!("beampattern_slot_{n}.csv"),
            map_rows(q, b, &rates, scenario, &scenario.search_area, a.map_resolution),
        )?;
    }
    Ok(())
}

#[derive(Serialize, Default)]
struct SweepRow {
    gamma_dbm: Option<f64>,
    gamma_w: f64,
    antennas: usize,
    feasible: bool,
    static_rate: Option<f64>,
    x: Option<f64>,
    y: Option<f64>,
    centroid_distance: Option<f64>,
    isac: Option<f64>,
    fly_hover_fly: Option<f64>,
    straight: Option<f64>,
    comm_only: Option<f64>,
}

pub const DEFAULT_GAMMA_SWEEP: &str = "off,-70,-60,-50,-43,-37";

fn sweep_points(a: &SweepArgs, base_threshold: Threshold) -> Result<Vec<(Threshold, Option<usize>)>> {
    match a.axis {
        Axis::Gamma => {
            if a.common.gamma_dbm.is_some() {
                bail!("--gamma-dbm conflicts with a threshold sweep");
            }
            let text = a.values.as_deref().unwrap_or(DEFAULT_GAMMA_SWEEP);
            let list = text
                .split(',')
                .map(|v| parse_threshold(v).map_err(anyhow::Error::msg))
                .collect::<Result<Vec<_>>>()?;
            Ok(list.into_iter().map(|g| (g, None)).collect())
        }
        Axis::Antennas => {
            if a.common.antennas.is_some() {
                bail!("--antennas conflicts with an antenna sweep");
            }
            let text = a.values.as_deref().context("--values is required for an antenna sweep")?;
            let list = text
                .split(',')
                .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad antenna count `{v}`")))
                .collect::<Result<Vec<_>>>()?;
            Ok(list.into_iter().map(|m| (base_threshold, Some(m))).collect())
        }
    }
}

pub fn sweep(a: &SweepArgs) -> Result<Status> {
    let base = a.common.load()?;
    let g = base.sensing.gain_threshold;
    let points = sweep_points(a, Threshold((g > 0.0).then(|| watts_to_dbm(g))))?;
    if points.is_empty() {
        bail!("the sweep has no points");
    }
    let static_opts = static_options(&a.common);
    let mobile_opts = match (a.design, &base.mission) {
        (Design::Mobile, None) => bail!("a mobile sweep needs a [mission] section in the scenario"),
        (Design::Mobile, Some(m)) => {
            let mut o = MobileOptions::for_mission(m);
            if let Some(t) = a.common.tol {
                o.trust.outer_tolerance = t;
            }
            Some(o)
        }
        (Design::Static, _) => None,
    };
    let scenarios: Vec<Scenario> = points
        .iter()
        .map(|&(g, m)| {
            let mut s = base.clone();
            if a.axis == Axis::Gamma {
                s.sensing.gain_threshold = g.watts();
            }
            if let Some(m) = m {
                s.uav.num_antennas = m;
            }
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let config = json!({
        "scenario": ScenarioFile::from_scenario(&base),
        "axis": a.axis,
        "values": points.iter().map(|(g, m)| match a.axis {
            Axis::Gamma => json!(g.0),
            Axis::Antennas => json!(m),
        }).collect::<Vec<_>>(),
        "design": a.design,
        "resolution": a.resolution,
        "tolerance": static_opts.tolerance,
        "outer_tolerance": mobile_opts.as_ref().map(|o| o.trust.outer_tolerance),
    });
    run_in(&a.common, "sweep", config, |out| {
        // Threshold sweeps run from the strictest threshold down, each grid
        // search starting from the beams of the previous one.
        let mut order: Vec<usize> = (0..scenarios.len()).collect();
        if a.axis == Axis::Gamma {
            order.sort_by(|&i, &j| scenarios[j].sensing.gain_threshold.total_cmp(&scenarios[i].sensing.gain_threshold));
        }
        let centroid = base.sensing.centroid();
        let mut rows: Vec<Option<SweepRow>> = (0..scenarios.len()).map(|_| None).collect();
        let mut warm: Option<GridSearch> = None;
        let mut any_infeasible = false;
        for i in order {
            let s = &scenarios[i];
            let (g, _) = points[i];
            log::info!("sweep point {}: threshold {g}, {} antennas", i + 1, s.uav.num_antennas);
            let mut row = SweepRow {
                gamma_dbm: g.0,
                gamma_w: s.sensing.gain_threshold,
                antennas: s.uav.num_antennas,
                feasible: false,
                static_rate: None,
                x: None,
                y: None,
                centroid_distance: None,
                isac: None,
                fly_hover_fly: None,
                straight: None,
                comm_only: None,
            };
            let start = if a.axis == Axis::Gamma { warm.as_ref() } else { None };
            match solve_p1_from(s, a.resolution, &static_opts, start) {
                Ok(grid) => {
                    let best = &grid.best;
                    row.feasible = true;
                    row.static_rate = Some(best.objective);
                    row.x = Some(best.location.x);
                    row.y = Some(best.location.y);
                    row.centroid_distance = Some(best.location.distance(centroid));
                    if let Some(o) = &mobile_opts {
                        match compare_designs(s, best.location, o) {
                            Ok(c) => {
                                row.isac = Some(c.isac.objective);
                                row.fly_hover_fly = Some(c.fly_hover_fly.objective);
                                row.straight = Some(c.straight.objective);
                                row.comm_only = Some(c.comm_only.objective);
                            }
                            Err(e) if is_infeasible(&e) => {
                                log::warn!("mobile designs infeasible at threshold {g}: {e}");
                                row.feasible = false;
                            }
                            Err(e) => return Err(e).with_context(|| format!("mobile designs at threshold {g}")),
                        }
                    }
                    warm = Some(grid);
                }
                Err(e) if is_infeasible(&e) => log::warn!("no feasible location at threshold {g}: {e}"),
                Err(e) => return Err(e).with_context(|| format!("static design at threshold {g}")),
            }
            any_infeasible |= !row.feasible;
            rows[i] = Some(row);
        }
        out.write_csv("sweep.csv", rows.into_iter().flatten())?;
        Ok(if any_infeasible { Status::Infeasible } else { Status::Success })
    })
}
