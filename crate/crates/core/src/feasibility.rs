//! Sensing feasibility over a location grid and flight reachability between
//! the mission endpoints.
//!
//! A location `q` is sensing-feasible when some covariance `R ⪰ 0` with
//! `tr R <= P_max` reaches `a_j^H R a_j >= d_j^2 Gamma` at every sensing
//! point. Feasible grid nodes within one slot's flight of each other are
//! joined; the mission is feasible when the final position is reachable from
//! the initial one within the displacement budget.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::channel::{distinct_range_points, slant_distance_sqr, steering_vector};
use crate::mobile_design::Trajectory;
use crate::numerics::HermitianMatrix;
use crate::scenario::{MissionPlan, Point, Scenario};
use crate::solver::{self, AffineExpr, ConvexProblem, PsdCoef, SolverError, SolverOptions};

/// Slack used when comparing edge lengths against `V_max`.
pub const LENGTH_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeasibilityError {
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("scenario has no mission plan")]
    NoMission,
    #[error("path of {hops} hops does not fit into {slots} slots")]
    PathTooLong { hops: usize, slots: usize },
    #[error("path edge {index} has length {length} > {limit}")]
    EdgeTooLong { index: usize, length: f64, limit: f64 },
    #[error("path must start at the initial and end at the final position")]
    WrongEndpoints,
}

/// Sensing-feasible grid nodes and, once reachability has run, the part
/// reachable from the initial position.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    pub grid_resolution: f64,
    /// Every node that was checked, in grid order.
    pub nodes: Vec<Point>,
    pub feasible: Vec<bool>,
    pub locations: Vec<Point>,
    pub component: Vec<Point>,
}

impl FeasibleSet {
    pub fn is_full(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }
}

/// Sensing program at `q`: find `R` with `tr R <= P` and all gains met.
/// Rows are divided by their threshold so they are O(1).
fn sensing_program(q: Point, scenario: &Scenario) -> ConvexProblem {
    let uav = &scenario.uav;
    let gamma = scenario.sensing.gain_threshold;
    let mut p = ConvexProblem::new();
    let r = p.add_psd("R", uav.num_antennas);
    p.add_le_zero(AffineExpr::constant(-1.0).psd(r, PsdCoef::Identity(1.0)));
    for m in distinct_range_points(q, &scenario.sensing.points, uav.altitude) {
        let need = slant_distance_sqr(q, m, uav.altitude) * gamma / uav.max_power;
        let a = steering_vector(q, m, uav);
        p.add_ge_zero(AffineExpr::constant(-1.0).psd(r, PsdCoef::Outer(1.0 / need, a)));
    }
    p
}

/// A covariance meeting every sensing constraint at `q`, or `None` when the
/// constraints cannot be met. The isotropic covariance `P/M I` is returned
/// whenever it suffices.
pub fn sensing_covariance(q: Point, scenario: &Scenario) -> Option<HermitianMatrix> {
    sensing_covariance_with(q, scenario, &SolverOptions::default())
}

pub fn sensing_covariance_with(
    q: Point,
    scenario: &Scenario,
    opts: &SolverOptions,
) -> Option<HermitianMatrix> {
    let uav = &scenario.uav;
    let m = uav.num_antennas;
    let gamma = scenario.sensing.gain_threshold;
    let worst = scenario
        .sensing
        .points
        .iter()
        .map(|&p| slant_distance_sqr(q, p, uav.altitude) * gamma)
        .fold(0.0, f64::max);
    // `P/M I` gives gain `P` in every direction.
    if worst < uav.max_power {
        return Some(HermitianMatrix::scaled_identity(m, uav.max_power / m as f64));
    }
    if uav.max_power <= 0.0 {
        return None;
    }
    let p = sensing_program(q, scenario);
    match solver::phase1_feasible_point(&p, opts) {
        Ok(pt) => Some(pt.psd[0].scaled(uav.max_power)),
        Err(SolverError::Infeasible { .. }) => None,
        Err(e) => {
            log::warn!("sensing check at {q} was indeterminate ({e}); treating as infeasible");
            None
        }
    }
}

pub fn check_location_feasible(q: Point, scenario: &Scenario) -> bool {
    sensing_covariance(q, scenario).is_some()
}

/// Checks every node of the search-area grid. Nodes are independent and run
/// in parallel with the `parallel` feature.
pub fn scan_feasible_set(
    scenario: &Scenario,
    resolution: f64,
) -> Result<FeasibleSet, FeasibilityError> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(FeasibilityError::BadResolution(resolution));
    }
    let nodes = scenario.search_area.grid(resolution);
    let feasible = crate::par::map(&nodes, |&q| check_location_feasible(q, scenario));
    let locations = nodes
        .iter()
        .zip(&feasible)
        .filter(|(_, &f)| f)
        .map(|(&p, _)| p)
        .collect();
    Ok(FeasibleSet {
        grid_resolution: resolution,
        nodes,
        feasible,
        locations,
        component: Vec::new(),
    })
}

/// Undirected graph on feasible locations plus both endpoints; an edge joins
/// nodes at most `V_max` apart and carries their distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityGraph {
    pub nodes: Vec<Point>,
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub start: usize,
    pub goal: usize,
}

impl ReachabilityGraph {
    pub fn build(locations: &[Point], from: Point, to: Point, max_step: f64) -> Self {
        let mut nodes = Vec::with_capacity(locations.len() + 2);
        nodes.push(from);
        nodes.push(to);
        nodes.extend(locations.iter().copied().filter(|&p| p != from && p != to));
        let n = nodes.len();
        let limit = max_step + LENGTH_SLACK;
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                let d = nodes[i].distance(nodes[j]);
                if d <= limit {
                    adjacency[i].push((j, d));
                    adjacency[j].push((i, d));
                }
            }
        }
        Self {
            nodes,
            adjacency,
            start: 0,
            goal: if from == to { 0 } else { 1 },
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| adj.iter().filter(move |(j, _)| *j > i).map(move |&(j, d)| (i, j, d)))
    }

    /// Depth-first search from `start`; `true` marks reachable nodes.
    pub fn component(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.start];
        seen[self.start] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Dijkstra from `start` to `goal`: total length and node sequence.
    pub fn shortest_path(&self) -> Option<(f64, Vec<usize>)> {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[self.start] = 0.0;
        heap.push(Entry(0.0, self.start));
        while let Some(Entry(d, i)) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            if i == self.goal {
                break;
            }
            for &(j, w) in &self.adjacency[i] {
                let nd = d + w;
                if nd < dist[j] {
                    dist[j] = nd;
                    prev[j] = i;
                    heap.push(Entry(nd, j));
                }
            }
        }
        if !dist[self.goal].is_finite() {
            return None;
        }
        let mut path = vec![self.goal];
        let mut i = self.goal;
        while i != self.start {
            i = prev[i];
            path.push(i);
        }
        path.reverse();
        Some((dist[self.goal], path))
    }
}

/// Min-heap entry ordered by distance, then index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Feasible,
    /// Sensing fails at the initial or final position.
    EndpointInfeasible,
    /// The final position is outside the component of the initial one.
    Disconnected,
    /// Connected, but the shortest path exceeds the displacement budget or
    /// needs more hops than there are slots.
    OverBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reachability {
    pub graph: ReachabilityGraph,
    pub reachable: Vec<bool>,
    pub verdict: Verdict,
    pub shortest_length: Option<f64>,
    /// Displacement budget `V_max (N - 1)`.
    pub budget: f64,
    /// Positions from the initial to the final location, consecutive ones at
    /// most `V_max` apart, with as few hops as the shortest path allows.
    pub witness: Option<Vec<Point>>,
}

impl Reachability {
    pub fn is_feasible(&self) -> bool {
        self.verdict == Verdict::Feasible
    }
}

/// Builds the reachability graph over `fs.locations`, fills `fs.component`
/// and decides whether the mission can be flown while sensing in every slot.
pub fn build_reachability(
    fs: &mut FeasibleSet,
    mission: &MissionPlan,
    scenario: &Scenario,
) -> Reachability {
    let from = mission.initial_position;
    let to = mission.final_position;
    let step = mission.max_displacement();
    let graph = ReachabilityGraph::build(&fs.locations, from, to, step);
    let reachable = graph.component();
    fs.component = graph
        .nodes
        .iter()
        .zip(&reachable)
        .filter(|(_, &r)| r)
        .map(|(&p, _)| p)
        .collect();
    let budget = step * (mission.num_slots.saturating_sub(1)) as f64;

    let endpoints_ok =
        check_location_feasible(from, scenario) && check_location_feasible(to, scenario);
    let mut out = Reachability {
        graph,
        reachable,
        verdict: Verdict::EndpointInfeasible,
        shortest_length: None,
        budget,
        witness: None,
    };
    if !endpoints_ok {
        return out;
    }
    if !out.reachable[out.graph.goal] {
        out.verdict = Verdict::Disconnected;
        return out;
    }
    let (length, ids) = out.graph.shortest_path().expect("goal is in the component");
    out.shortest_length = Some(length);
    if length > budget + LENGTH_SLACK {
        out.verdict = Verdict::OverBudget;
        return out;
    }
    let path: Vec<Point> = ids.iter().map(|&i| out.graph.nodes[i]).collect();
    let witness = compress_path(&path, step);
    // Short hops can leave a path within the length budget that still
    // needs more slots than the mission has.
    if witness.len() > mission.num_slots.max(2) {
        out.verdict = Verdict::OverBudget;
        return out;
    }
    out.witness = Some(witness);
    out.verdict = Verdict::Feasible;
    out
}

/// Drops intermediate nodes while every jump stays within `max_step`.
/// Greedy farthest-jump keeps the hop count minimal for the node order.
pub fn compress_path(path: &[Point], max_step: f64) -> Vec<Point> {
    let Some(&first) = path.first() else {
        return Vec::new();
    };
    let limit = max_step + LENGTH_SLACK;
    let mut out = vec![first];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = i + 1;
        while j + 1 < path.len() && path[i].distance(path[j + 1]) <= limit {
            j += 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

/// Pads `path` to `N` slots. Extra slots dwell at the path node nearest
/// `anchor` (normally the sensing-area centroid).
pub fn initial_trajectory_from_path(
    path: &[Point],
    mission: &MissionPlan,
    anchor: Point,
) -> Result<Trajectory, FeasibilityError> {
    let n = mission.num_slots;
    let limit = mission.max_displacement() + LENGTH_SLACK;
    if path.first() != Some(&mission.initial_position)
        || path.last() != Some(&mission.final_position)
    {
        return Err(FeasibilityError::WrongEndpoints);
    }
    for (index, w) in path.windows(2).enumerate() {
        let length = w[0].distance(w[1]);
        if length > limit {
            return Err(FeasibilityError::EdgeTooLong {
                index,
                length,
                limit,
            });
        }
    }
    // A path that starts and ends at the same point may be a single node.
    let path: Vec<Point> = if path.len() == 1 { vec![path[0], path[0]] } else { path.to_vec() };
    if path.len() > n {
        return Err(FeasibilityError::PathTooLong {
            hops: path.len() - 1,
            slots: n,
        });
    }
    let dwell = n - path.len();
    let hover = path
        .iter()
        .enumerate()
        .min_by(|a, b| {
            a.1.distance(anchor)
                .total_cmp(&b.1.distance(anchor))
                .then(a.0.cmp(&b.0))
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut positions = Vec::with_capacity(n);
    for (i, &p) in path.iter().enumerate() {
        positions.push(p);
        if i == hover {
            positions.extend(core::iter::repeat(p).take(dwell));
        }
    }
    Ok(Trajectory::new(positions))
}

/// Full pipeline: grid scan, reachability and, when feasible, an initial
/// trajectory.
pub fn mission_feasibility(
    scenario: &Scenario,
    resolution: f64,
) -> Result<(FeasibleSet, Reachability, Option<Trajectory>), FeasibilityError> {
    let mission = scenario.mission.as_ref().ok_or(FeasibilityError::NoMission)?;
    let mut fs = scan_feasible_set(scenario, resolution)?;
    let reach = build_reachability(&mut fs, mission, scenario);
    let traj = match &reach.witness {
        Some(w) => Some(initial_trajectory_from_path(w, mission, scenario.sensing.centroid())?),
        None => None,
    };
    Ok((fs, reach, traj))
}

#[cfg(test)]
mod tests;
