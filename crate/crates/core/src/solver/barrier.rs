//! Log-barrier interior-point method with damped Newton centering.
//!
//! The barrier function for parameter `t` is
//!
//! ```text
//! F(x) = -t * objective(x) - sum ln(-f_i(x)) - sum ln(-q_i(x)) - sum ln det X_b
//! ```
//!
//! Its Hessian is block diagonal (the `ln det` parts plus a dense block for
//! the vector variables) plus a sum of rank-one terms, one per log term and
//! per affine inequality. Rank-one terms that touch PSD blocks are kept in
//! factored form and the PSD part of the Newton step is eliminated through
//! the closed-form inverse `E -> X E X` of the `ln det` Hessian, leaving a
//! small dense system in the vector variables, the rank-one multipliers and
//! the equality multipliers.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::problem::{AffineExpr, ConvexProblem, LogTerm, Point, PsdCoef, PsdVar, Solution};
use crate::math;
use crate::numerics::{CMat, Complex, HermitianMatrix, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Target for the duality-gap surrogate `degree / t`.
    pub tol: f64,
    pub initial_mu: f64,
    pub mu_shrink: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub regularization: f64,
    pub max_regularization: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            initial_mu: 1.0,
            mu_shrink: 0.2,
            max_outer: 50,
            max_inner: 100,
            armijo: 0.01,
            backtrack: 0.5,
            regularization: 1e-10,
            max_regularization: 1e-4,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    /// Newton steps, including phase I.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Duality-gap surrogate at termination.
    pub kkt_residual: f64,
    /// Seconds; zero without the `std` feature.
    pub wall_time: f64,
    /// Objective at the end of each centering step.
    pub objective_trace: Vec<f64>,
}

impl SolveReport {
    fn empty(status: SolveStatus) -> Self {
        Self {
            status,
            objective: f64::NAN,
            iterations: 0,
            outer_iterations: 0,
            kkt_residual: f64::INFINITY,
            wall_time: 0.0,
            objective_trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub solution: Solution,
    pub report: SolveReport,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolverError {
    #[error("problem is infeasible")]
    Infeasible { report: SolveReport },
    #[error("iteration limit reached (gap {:e})", report.kkt_residual)]
    IterationLimit {
        report: SolveReport,
        solution: Box<Solution>,
    },
    #[error("numerical failure: {reason}")]
    NumericalFailure {
        report: SolveReport,
        reason: &'static str,
    },
    #[error("malformed problem: {0}")]
    Malformed(String),
}

impl SolverError {
    pub fn report(&self) -> Option<&SolveReport> {
        match self {
            SolverError::Infeasible { report }
            | SolverError::IterationLimit { report, .. }
            | SolverError::NumericalFailure { report, .. } => Some(report),
            SolverError::Malformed(_) => None,
        }
    }

    pub fn status(&self) -> Option<SolveStatus> {
        self.report().map(|r| r.status)
    }
}

struct Clock {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(feature = "std")]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(not(feature = "std"))]
        {
            0.0
        }
    }
}

/// Maximizes `p` to the duality-gap tolerance in `opts`.
pub fn solve(p: &ConvexProblem, opts: &SolverOptions) -> Result<Solved, SolverError> {
    p.validate().map_err(SolverError::Malformed)?;
    let merged = without_repeated_rows(p);
    let p = merged.as_ref().unwrap_or(p);
    if !(opts.tol > 0.0) {
        return Err(SolverError::Malformed("tolerance must be positive".into()));
    }
    let clock = Clock::start();
    let mut phase1_iters = 0;
    let start = match p.feasible_start.as_ref().filter(|s| strictly_feasible(p, s)) {
        Some(s) => State::from_point(s),
        None => {
            let (pt, iters) = phase1(p, opts, &clock)?;
            phase1_iters = iters;
            State::from_point(&pt)
        }
    };
    let engine = Engine::new(p, opts);
    let mut out = engine.run(start, &mut |_, _| Hook::Continue);
    out.report.iterations += phase1_iters;
    out.report.wall_time = clock.elapsed();
    let solution = out.state.to_point();
    out.report.objective = p.objective_value(&solution);
    match out.report.status {
        SolveStatus::Optimal => Ok(Solved {
            solution,
            report: out.report,
        }),
        SolveStatus::IterationLimit => Err(SolverError::IterationLimit {
            report: out.report,
            solution: Box::new(solution),
        }),
        SolveStatus::NumericalFailure | SolveStatus::Infeasible => {
            Err(SolverError::NumericalFailure {
                report: out.report,
                reason: out.reason.unwrap_or("Newton system could not be solved"),
            })
        }
    }
}

/// Finds a strictly feasible point of `p` or certifies infeasibility.
pub fn phase1_feasible_point(p: &ConvexProblem, opts: &SolverOptions) -> Result<Point, SolverError> {
    p.validate().map_err(SolverError::Malformed)?;
    let merged = without_repeated_rows(p);
    let p = merged.as_ref().unwrap_or(p);
    if let Some(s) = p.feasible_start.as_ref().filter(|s| strictly_feasible(p, s)) {
        return Ok(s.clone());
    }
    phase1(p, opts, &Clock::start()).map(|(pt, _)| pt)
}

/// Identical rows make the Newton system singular once they are active, so
/// log terms with the same argument are merged (weights add) and repeated
/// constraints are dropped. `None` when there is nothing to merge.
fn without_repeated_rows(p: &ConvexProblem) -> Option<ConvexProblem> {
    let mut log_terms: Vec<LogTerm> = Vec::with_capacity(p.log_terms.len());
    for term in &p.log_terms {
        match log_terms.iter_mut().find(|t| t.arg == term.arg) {
            Some(t) => t.weight += term.weight,
            None => log_terms.push(term.clone()),
        }
    }
    let distinct = |rows: &[AffineExpr]| {
        let mut out: Vec<AffineExpr> = Vec::with_capacity(rows.len());
        for r in rows {
            if !out.contains(r) {
                out.push(r.clone());
            }
        }
        out
    };
    let inequalities = distinct(&p.inequalities);
    let equalities = distinct(&p.equalities);
    if log_terms.len() == p.log_terms.len()
        && inequalities.len() == p.inequalities.len()
        && equalities.len() == p.equalities.len()
    {
        return None;
    }
    Some(ConvexProblem {
        log_terms,
        inequalities,
        equalities,
        ..p.clone()
    })
}

fn equality_tolerance(e: &AffineExpr) -> f64 {
    1e-9 * (1.0 + e.constant.abs())
}

fn strictly_feasible(p: &ConvexProblem, x: &Point) -> bool {
    x.psd.iter().all(|b| CMat::from_hermitian(b).cholesky().is_some())
        && p.log_terms.iter().all(|t| t.arg.eval(x) > 0.0)
        && p.inequalities.iter().all(|e| e.eval(x) < 0.0)
        && p.quadratics.iter().all(|q| q.eval(&x.vec) < 0.0)
        && p.equalities.iter().all(|e| e.eval(x).abs() <= equality_tolerance(e))
}

const PHASE1_BOX: f64 = 1e4;

/// Phase I: maximize `-s` subject to every inequality relaxed by `s`, with
/// PSD blocks kept as the barrier domain. Stops as soon as `s < 0` with the
/// equalities satisfied.
fn phase1(
    p: &ConvexProblem,
    opts: &SolverOptions,
    clock: &Clock,
) -> Result<(Point, usize), SolverError> {
    let mut aux = ConvexProblem::new();
    for (name, d) in &p.psd_vars {
        aux.add_psd(name.clone(), *d);
    }
    for (name, v) in &p.vec_vars {
        aux.add_vector(name.clone(), v.len());
    }
    let s_var = aux.add_vector("phase1_slack", 1);
    let s = s_var.at(0);
    aux.maximize_linear(AffineExpr::new().var(s, -1.0));
    for t in &p.log_terms {
        aux.add_le_zero(t.arg.negated().var(s, -1.0));
    }
    for e in &p.inequalities {
        aux.add_le_zero(e.clone().var(s, -1.0));
    }
    for q in &p.quadratics {
        let mut lin = q.lin.clone();
        lin.add_var(s, -1.0);
        aux.add_quadratic_le(q.rows.clone(), lin);
    }
    // Keeps the slack bounded below so its Newton block stays nonsingular.
    aux.add_le_zero(AffineExpr::constant(-1.0).var(s, -1.0));
    aux.equalities = p.equalities.clone();

    let mut start = match &p.feasible_start {
        Some(x) => x.clone(),
        None => Point {
            psd: p
                .psd_vars
                .iter()
                .map(|(_, d)| HermitianMatrix::identity(*d))
                .collect(),
            vec: vec![0.0; p.num_scalars],
        },
    };
    for (b, (_, d)) in start.psd.iter_mut().zip(&p.psd_vars) {
        if CMat::from_hermitian(b).cholesky().is_none() {
            *b = HermitianMatrix::identity(*d);
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for t in &p.log_terms {
        worst = worst.max(-t.arg.eval(&start));
    }
    for e in &p.inequalities {
        worst = worst.max(e.eval(&start));
    }
    for q in &p.quadratics {
        worst = worst.max(q.eval(&start.vec));
    }
    if worst == f64::NEG_INFINITY {
        worst = 0.0;
    }
    let s0 = worst.max(-0.5) + 1.0 + 0.1 * worst.abs();
    start.vec.push(s0);

    // A loose box keeps the auxiliary barrier bounded when some variable
    // can drift forever without touching the slack.
    let radius = PHASE1_BOX * (1.0 + start.vec[..p.num_scalars].iter().fold(0.0f64, |m, v| m.max(v.abs())));
    if p.num_scalars > 0 {
        let rows = (0..p.num_scalars)
            .map(|i| (vec![(i, 1.0 / radius)], -start.vec[i] / radius))
            .collect();
        aux.add_quadratic_le(rows, AffineExpr::constant(-1.0));
    }
    for (b, (x0, (_, d))) in start.psd.iter().zip(&p.psd_vars).enumerate() {
        let cap = PHASE1_BOX * (*d as f64 + x0.trace());
        aux.add_le_zero(AffineExpr::constant(-cap).psd(PsdVar(b), PsdCoef::Identity(1.0)));
    }

    let degree = aux.barrier_degree() as f64;
    // Start where t * s is comparable to the barrier degree.
    let opts = &SolverOptions {
        initial_mu: opts.initial_mu.max(s0 / degree),
        ..opts.clone()
    };
    let engine = Engine::new(&aux, opts);
    let equalities = &p.equalities;
    let mut verdict_infeasible = false;
    let mut hook = |st: &State, t: Option<f64>| -> Hook {
        let sv = st.vec[s];
        match t {
            None => {
                if sv < 0.0 && equalities_hold(equalities, st) {
                    Hook::Stop
                } else {
                    Hook::Continue
                }
            }
            Some(t) => {
                // Centred point: the phase-I optimum is at least s - degree / t.
                if sv - degree / t > 0.0 {
                    verdict_infeasible = true;
                    Hook::Stop
                } else {
                    Hook::Continue
                }
            }
        }
    };
    let out = engine.run(State::from_point(&start), &mut hook);
    let mut report = out.report;
    report.wall_time = clock.elapsed();
    let sv = out.state.vec[s];
    if out.stopped_by_hook && !verdict_infeasible {
        let mut pt = out.state.to_point();
        pt.vec.truncate(p.num_scalars);
        return Ok((pt, report.iterations));
    }
    if verdict_infeasible || (report.status == SolveStatus::Optimal && sv >= -opts.tol) {
        report.status = SolveStatus::Infeasible;
        report.objective = sv;
        return Err(SolverError::Infeasible { report });
    }
    match report.status {
        SolveStatus::IterationLimit => {
            let mut pt = out.state.to_point();
            pt.vec.truncate(p.num_scalars);
            Err(SolverError::IterationLimit {
                report,
                solution: Box::new(pt),
            })
        }
        _ => Err(SolverError::NumericalFailure {
            report,
            reason: out.reason.unwrap_or("phase I did not reach a feasible point"),
        }),
    }
}

fn equalities_hold(eqs: &[AffineExpr], st: &State) -> bool {
    eqs.iter()
        .all(|e| expr_value(e, &st.blocks, &st.vec).abs() <= equality_tolerance(e))
}

enum Hook {
    Continue,
    Stop,
}

/// Gap below which a breakdown of the Newton system is reported as optimal.
const ACCEPT_GAP: f64 = 1e-5;

#[derive(Clone)]
struct State {
    blocks: Vec<CMat>,
    vec: Vec<f64>,
}

impl State {
    fn from_point(p: &Point) -> Self {
        Self {
            blocks: p.psd.iter().map(CMat::from_hermitian).collect(),
            vec: p.vec.clone(),
        }
    }

    fn to_point(&self) -> Point {
        Point {
            psd: self.blocks.iter().map(CMat::to_hermitian).collect(),
            vec: self.vec.clone(),
        }
    }
}

fn coef_value(c: &PsdCoef, x: &CMat) -> f64 {
    match c {
        PsdCoef::Identity(s) => s * x.trace_re(),
        PsdCoef::Outer(s, v) => s * x.quad_re(v),
        PsdCoef::Dense(d) => x.inner_hermitian(d),
    }
}

fn expr_value(e: &AffineExpr, blocks: &[CMat], v: &[f64]) -> f64 {
    let mut acc = e.constant;
    for (b, c) in &e.psd {
        acc += coef_value(c, &blocks[*b]);
    }
    for &(i, a) in &e.vec {
        acc += a * v[i];
    }
    acc
}

/// `expr(x + d) - expr(x)`
fn expr_dir(e: &AffineExpr, dblocks: &[CMat], dv: &[f64]) -> f64 {
    expr_value(e, dblocks, dv) - e.constant
}

fn add_coef(m: &mut CMat, s: f64, c: &PsdCoef) {
    match c {
        PsdCoef::Identity(a) => m.add_scaled_identity(s * a),
        PsdCoef::Outer(a, v) => m.add_scaled_outer(s * a, v),
        PsdCoef::Dense(d) => m.add_scaled_hermitian(s, d),
    }
}

/// `X C X` in a form that makes inner products with other coefficients cheap.
enum Sandwich {
    Outer { xv: Vec<Complex> },
    Identity,
    Dense { xdx: CMat },
}

#[derive(Clone, Copy)]
enum RowSource {
    Log(usize),
    Ineq(usize),
    Eq(usize),
}

struct Engine<'p> {
    p: &'p ConvexProblem,
    opts: &'p SolverOptions,
    nv: usize,
    degree: f64,
    rows: Vec<RowSource>,
    /// Per PSD block: (row, coefficient) pairs touching it.
    block_rows: Vec<Vec<(usize, &'p PsdCoef)>>,
}

struct Outcome {
    state: State,
    report: SolveReport,
    stopped_by_hook: bool,
    reason: Option<&'static str>,
}

/// Values of every nonlinear ingredient at the current point.
struct Eval {
    chol_logdet: Vec<f64>,
    xinv: Vec<CMat>,
    obj: f64,
    logs: Vec<f64>,
    ineqs: Vec<f64>,
    quads: Vec<f64>,
    eq_residual: Vec<f64>,
}

struct Direction {
    dblocks: Vec<CMat>,
    dv: Vec<f64>,
    /// `grad F . d`
    slope: f64,
}

enum StepError {
    Singular,
    NotInDomain,
}

impl<'p> Engine<'p> {
    fn new(p: &'p ConvexProblem, opts: &'p SolverOptions) -> Self {
        let mut rows = Vec::new();
        for (i, t) in p.log_terms.iter().enumerate() {
            if t.arg.has_psd_terms() {
                rows.push(RowSource::Log(i));
            }
        }
        for (i, e) in p.inequalities.iter().enumerate() {
            if e.has_psd_terms() {
                rows.push(RowSource::Ineq(i));
            }
        }
        for i in 0..p.equalities.len() {
            rows.push(RowSource::Eq(i));
        }
        let mut block_rows: Vec<Vec<(usize, &PsdCoef)>> = vec![Vec::new(); p.psd_vars.len()];
        for (r, src) in rows.iter().enumerate() {
            for (b, c) in &Self::row_expr_of(p, *src).psd {
                block_rows[*b].push((r, c));
            }
        }
        Self {
            p,
            opts,
            nv: p.num_scalars,
            degree: p.barrier_degree() as f64,
            rows,
            block_rows,
        }
    }

    fn row_expr_of(p: &ConvexProblem, src: RowSource) -> &AffineExpr {
        match src {
            RowSource::Log(i) => &p.log_terms[i].arg,
            RowSource::Ineq(i) => &p.inequalities[i],
            RowSource::Eq(i) => &p.equalities[i],
        }
    }

    fn row_expr(&self, r: usize) -> &'p AffineExpr {
        Self::row_expr_of(self.p, self.rows[r])
    }

    fn evaluate(&self, st: &State) -> Option<Eval> {
        let p = self.p;
        let mut chol_logdet = Vec::with_capacity(st.blocks.len());
        let mut xinv = Vec::with_capacity(st.blocks.len());
        for x in &st.blocks {
            let l = x.cholesky()?;
            chol_logdet.push(CMat::log_det_from_cholesky(&l));
            xinv.push(CMat::inverse_from_cholesky(&l));
        }
        let logs: Vec<f64> = p
            .log_terms
            .iter()
            .map(|t| expr_value(&t.arg, &st.blocks, &st.vec))
            .collect();
        let ineqs: Vec<f64> = p
            .inequalities
            .iter()
            .map(|e| expr_value(e, &st.blocks, &st.vec))
            .collect();
        let quads: Vec<f64> = p.quadratics.iter().map(|q| q.eval(&st.vec)).collect();
        if logs.iter().any(|&g| !(g > 0.0))
            || ineqs.iter().any(|&f| !(f < 0.0))
            || quads.iter().any(|&q| !(q < 0.0))
        {
            return None;
        }
        Some(Eval {
            chol_logdet,
            xinv,
            obj: expr_value(&p.objective, &st.blocks, &st.vec),
            logs,
            ineqs,
            quads,
            eq_residual: p
                .equalities
                .iter()
                .map(|e| expr_value(e, &st.blocks, &st.vec))
                .collect(),
        })
    }

    fn barrier_value(&self, ev: &Eval, t: f64) -> f64 {
        let p = self.p;
        let mut f = -t * ev.obj;
        for (term, g) in p.log_terms.iter().zip(&ev.logs) {
            f -= t * term.weight * math::ln(*g);
        }
        for v in &ev.ineqs {
            f -= math::ln(-v);
        }
        for v in &ev.quads {
            f -= math::ln(-v);
        }
        for l in &ev.chol_logdet {
            f -= l;
        }
        f
    }

    fn quad_gradient(&self, qi: usize, x: &[f64]) -> Vec<(usize, f64)> {
        let q = &self.p.quadratics[qi];
        let mut g: Vec<(usize, f64)> = q.lin.vec.clone();
        for (row, b) in &q.rows {
            let r = row.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + b;
            g.extend(row.iter().map(|&(i, a)| (i, 2.0 * r * a)));
        }
        g
    }

    fn direction(
        &self,
        st: &State,
        ev: &Eval,
        t: f64,
        reg: f64,
    ) -> Result<Direction, StepError> {
        let p = self.p;
        let nb = st.blocks.len();
        let nv = self.nv;

        // Gradient of the smooth part: dense per block, plus the vector part.
        let mut dgrad: Vec<CMat> = st.blocks.iter().map(|x| CMat::zeros(x.dim())).collect();
        let mut gv = vec![0.0; nv];
        let mut hv = RealMatrix::zeros(nv, nv);
        let add_expr_grad = |dgrad: &mut Vec<CMat>, gv: &mut [f64], e: &AffineExpr, s: f64| {
            for (b, c) in &e.psd {
                add_coef(&mut dgrad[*b], s, c);
            }
            for &(i, a) in &e.vec {
                gv[i] += s * a;
            }
        };
        add_expr_grad(&mut dgrad, &mut gv, &p.objective, -t);
        for (term, g) in p.log_terms.iter().zip(&ev.logs) {
            add_expr_grad(&mut dgrad, &mut gv, &term.arg, -t * term.weight / g);
            if !term.arg.has_psd_terms() {
                let s = t * term.weight / (g * g);
                add_rank_one(&mut hv, &term.arg.vec, s);
            }
        }
        for (e, f) in p.inequalities.iter().zip(&ev.ineqs) {
            add_expr_grad(&mut dgrad, &mut gv, e, -1.0 / f);
            if !e.has_psd_terms() {
                add_rank_one(&mut hv, &e.vec, 1.0 / (f * f));
            }
        }
        for (qi, (q, qv)) in p.quadratics.iter().zip(&ev.quads).enumerate() {
            let g = self.quad_gradient(qi, &st.vec);
            for &(i, a) in &g {
                gv[i] += a / -qv;
            }
            add_rank_one(&mut hv, &g, 1.0 / (qv * qv));
            for (row, _) in &q.rows {
                add_rank_one(&mut hv, row, 2.0 / -qv);
            }
        }

        // Row scales: u_r = scale_r * grad(row expr).
        let ny = self.rows.len();
        let scales: Vec<f64> = self
            .rows
            .iter()
            .map(|src| match *src {
                RowSource::Log(i) => math::sqrt(t * p.log_terms[i].weight) / ev.logs[i],
                RowSource::Ineq(i) => 1.0 / -ev.ineqs[i],
                RowSource::Eq(_) => 1.0,
            })
            .collect();

        // P_b = X G_b X = X D_b X - X, and X C X for every row coefficient.
        let mut pb = Vec::with_capacity(nb);
        let mut sandwiches: Vec<Vec<Sandwich>> = Vec::with_capacity(nb);
        let mut xsq: Vec<Option<CMat>> = Vec::with_capacity(nb);
        for (b, x) in st.blocks.iter().enumerate() {
            let mut m = x.sandwich(&dgrad[b]);
            m.add_scaled(-1.0, x);
            pb.push(m);
            let mut sw = Vec::with_capacity(self.block_rows[b].len());
            let mut need_sq = false;
            for (_, c) in &self.block_rows[b] {
                sw.push(match c {
                    PsdCoef::Outer(_, v) => Sandwich::Outer { xv: x.mul_vec(v) },
                    PsdCoef::Identity(_) => {
                        need_sq = true;
                        Sandwich::Identity
                    }
                    PsdCoef::Dense(d) => Sandwich::Dense {
                        xdx: x.sandwich(&CMat::from_hermitian(d)),
                    },
                });
            }
            sandwiches.push(sw);
            xsq.push(if need_sq { Some(x.matmul(x)) } else { None });
        }

        // Reduced system in (dv, y).
        let n = nv + ny;
        let mut k = RealMatrix::zeros(n, n);
        let mut rhs = vec![0.0; n];
        for i in 0..nv {
            for j in 0..nv {
                k[(i, j)] = hv[(i, j)];
            }
            rhs[i] = -gv[i];
        }
        for (r, &sc) in scales.iter().enumerate() {
            for &(i, a) in &self.row_expr(r).vec {
                k[(i, nv + r)] += sc * a;
                k[(nv + r, i)] += sc * a;
            }
            if !matches!(self.rows[r], RowSource::Eq(_)) {
                k[(nv + r, nv + r)] -= 1.0;
            }
        }
        for b in 0..nb {
            let x = &st.blocks[b];
            let entries = &self.block_rows[b];
            for (ei, &(ri, ci)) in entries.iter().enumerate() {
                rhs[nv + ri] += scales[ri] * coef_value(ci, &pb[b]);
                for (ej, &(rj, cj)) in entries.iter().enumerate().skip(ei) {
                    let v = scales[ri]
                        * scales[rj]
                        * sandwich_inner(ci, &sandwiches[b][ei], cj, &sandwiches[b][ej], x);
                    k[(nv + ri, nv + rj)] -= v;
                    if ei != ej {
                        k[(nv + rj, nv + ri)] -= v;
                    }
                }
            }
        }
        for (r, src) in self.rows.iter().enumerate() {
            if let RowSource::Eq(i) = *src {
                rhs[nv + r] -= ev.eq_residual[i];
            }
        }
        // Primal regularization leaves A dx = -r exact; the multiplier block
        // is only perturbed once plain regularization has failed. Active rows
        // that are dependent on the range of a low-rank block need this too.
        let hscale = (0..nv).fold(1e-300f64, |m, i| m.max(k[(i, i)].abs()));
        for i in 0..nv {
            k[(i, i)] += reg * hscale;
        }
        if reg > self.opts.regularization {
            let yscale = (nv..n).fold(1e-300f64, |m, i| m.max(k[(i, i)].abs()));
            for r in 0..ny {
                k[(nv + r, nv + r)] -= reg * yscale;
            }
        }
        // Symmetric diagonal equilibration: active rows carry entries many
        // orders above inactive ones near the optimum.
        let eq: Vec<f64> = (0..n)
            .map(|i| {
                let d = (0..n).fold(0.0f64, |m, j| m.max(k[(i, j)].abs()));
                if d > 0.0 && d.is_finite() { 1.0 / math::sqrt(d) } else { 1.0 }
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] *= eq[i] * eq[j];
            }
        }
        let mut sol: Vec<f64> = rhs.iter().zip(&eq).map(|(r, e)| r * e).collect();
        k.solve_in_place(&mut sol).map_err(|_| StepError::Singular)?;
        for (v, e) in sol.iter_mut().zip(&eq) {
            *v *= e;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(StepError::Singular);
        }
        let dv = sol[..nv].to_vec();
        let y = &sol[nv..];

        // dX_b = -(P_b + sum_r y_r s_r X C_r X)
        let mut dblocks = Vec::with_capacity(nb);
        let mut slope = 0.0;
        for b in 0..nb {
            let mut d = pb[b].clone();
            for (e, &(r, c)) in self.block_rows[b].iter().enumerate() {
                let w = y[r] * scales[r];
                if w == 0.0 {
                    continue;
                }
                match (&sandwiches[b][e], c) {
                    (Sandwich::Outer { xv }, PsdCoef::Outer(s, _)) => d.add_scaled_outer(w * s, xv),
                    (Sandwich::Identity, PsdCoef::Identity(s)) => {
                        d.add_scaled(w * s, xsq[b].as_ref().expect("square computed"))
                    }
                    (Sandwich::Dense { xdx }, _) => d.add_scaled(w, xdx),
                    _ => unreachable!("sandwich kind follows coefficient kind"),
                }
            }
            d.scale(-1.0);
            // Rounding in the products leaves an anti-Hermitian part that the
            // -X term would otherwise amplify from step to step.
            d.hermitize();
            // <G_b, dX_b> with G_b = D_b - X^{-1}
            slope += dgrad[b].trace_product_re(&d) - ev.xinv[b].trace_product_re(&d);
            dblocks.push(d);
        }
        slope += gv.iter().zip(&dv).map(|(g, d)| g * d).sum::<f64>();
        if !slope.is_finite() {
            return Err(StepError::NotInDomain);
        }
        Ok(Direction {
            dblocks,
            dv,
            slope,
        })
    }

    fn run(&self, mut st: State, hook: &mut dyn FnMut(&State, Option<f64>) -> Hook) -> Outcome {
        let opts = self.opts;
        let mut t = 1.0 / opts.initial_mu;
        let mut report = SolveReport::empty(SolveStatus::IterationLimit);
        let finish = |st: State, mut report: SolveReport, status, reason, hooked, t: f64| {
            report.status = status;
            report.kkt_residual = self.degree / t;
            Outcome {
                state: st,
                report,
                stopped_by_hook: hooked,
                reason,
            }
        };

        let Some(mut ev) = self.evaluate(&st) else {
            return finish(
                st,
                report,
                SolveStatus::NumericalFailure,
                Some("start point outside the barrier domain"),
                false,
                t,
            );
        };

        // Last centred iterate and its gap, used when the Newton system breaks
        // down from conditioning after the gap is already negligible.
        let mut fallback: Option<(State, f64)> = None;
        for outer in 0..opts.max_outer {
            report.outer_iterations = outer + 1;
            let mut centred = false;
            for _ in 0..opts.max_inner {
                let eq_ok = ev
                    .eq_residual
                    .iter()
                    .zip(&self.p.equalities)
                    .all(|(r, e)| r.abs() <= equality_tolerance(e));
                let mut reg = opts.regularization;
                let dir = loop {
                    match self.direction(&st, &ev, t, reg) {
                        Ok(d) => break Some(d),
                        Err(_) if reg * 10.0 <= opts.max_regularization * (1.0 + 1e-12) => {
                            reg *= 10.0;
                        }
                        Err(_) => break None,
                    }
                };
                let Some(dir) = dir else {
                    if let Some(done) = Self::accept_fallback(&mut fallback, &report) {
                        return done;
                    }
                    return finish(
                        st,
                        report,
                        SolveStatus::NumericalFailure,
                        Some("Newton system is singular beyond regularization"),
                        false,
                        t,
                    );
                };
                let decrement = -dir.slope;
                if eq_ok && decrement * 0.5 <= 1e-10 {
                    centred = true;
                    break;
                }
                match self.line_search(&st, &ev, &dir, t, !eq_ok) {
                    Some((next, next_ev)) => {
                        st = next;
                        ev = next_ev;
                        report.iterations += 1;
                    }
                    None => {
                        if eq_ok && decrement < 1e-5 * (1.0 + self.degree) {
                            // Rounding limits further progress; the point is centred.
                            centred = true;
                            break;
                        }
                        if let Some(done) = Self::accept_fallback(&mut fallback, &report) {
                            return done;
                        }
                        return finish(
                            st,
                            report,
                            SolveStatus::NumericalFailure,
                            Some("line search failed"),
                            false,
                            t,
                        );
                    }
                }
                if let Hook::Stop = hook(&st, None) {
                    return finish(st, report, SolveStatus::Optimal, None, true, t);
                }
            }
            let obj = ev.obj
                + self
                    .p
                    .log_terms
                    .iter()
                    .zip(&ev.logs)
                    .map(|(term, g)| term.weight * math::ln(*g))
                    .sum::<f64>();
            report.objective_trace.push(obj);
            report.objective = obj;
            if !centred {
                log::debug!("centering hit the inner iteration cap at t = {t:e}");
            }
            // Duality-gap certificates only hold at centred points.
            if centred {
                if let Hook::Stop = hook(&st, Some(t)) {
                    return finish(st, report, SolveStatus::Optimal, None, true, t);
                }
            }
            if self.degree / t < opts.tol {
                return finish(st, report, SolveStatus::Optimal, None, false, t);
            }
            fallback = centred.then(|| (st.clone(), self.degree / t));
            t /= opts.mu_shrink;
        }
        finish(st, report, SolveStatus::IterationLimit, None, false, t)
    }

    /// The last centred iterate, when the Newton step breaks down from
    /// conditioning. Optimal if its gap is negligible, otherwise reported as
    /// an early stop with the gap so callers can decide.
    fn accept_fallback(fallback: &mut Option<(State, f64)>, report: &SolveReport) -> Option<Outcome> {
        let (prev, gap) = fallback.take()?;
        log::debug!("Newton step broke down at gap {gap:e}; keeping centred point");
        let status = if gap < ACCEPT_GAP {
            SolveStatus::Optimal
        } else {
            SolveStatus::IterationLimit
        };
        Some(Outcome {
            state: prev,
            report: SolveReport {
                status,
                kkt_residual: gap,
                ..report.clone()
            },
            stopped_by_hook: false,
            reason: None,
        })
    }

    fn line_search(
        &self,
        st: &State,
        ev: &Eval,
        dir: &Direction,
        t: f64,
        equality_phase: bool,
    ) -> Option<(State, Eval)> {
        let p = self.p;
        let d_obj = expr_dir(&p.objective, &dir.dblocks, &dir.dv);
        let d_logs: Vec<f64> = p
            .log_terms
            .iter()
            .map(|term| expr_dir(&term.arg, &dir.dblocks, &dir.dv))
            .collect();
        let d_ineqs: Vec<f64> = p
            .inequalities
            .iter()
            .map(|e| expr_dir(e, &dir.dblocks, &dir.dv))
            .collect();
        let d_quads: Vec<(f64, f64)> = (0..p.quadratics.len())
            .map(|qi| {
                let g = self.quad_gradient(qi, &st.vec);
                let d1: f64 = g.iter().map(|&(i, a)| a * dir.dv[i]).sum();
                let d2: f64 = p.quadratics[qi]
                    .rows
                    .iter()
                    .map(|(row, _)| {
                        let r: f64 = row.iter().map(|&(i, a)| a * dir.dv[i]).sum();
                        r * r
                    })
                    .sum();
                (d1, d2)
            })
            .collect();
        let f0 = self.barrier_value(ev, t);

        let mut alpha = 1.0;
        while alpha > 1e-14 {
            let scalars_ok = ev.logs.iter().zip(&d_logs).all(|(g, d)| g + alpha * d > 0.0)
                && ev.ineqs.iter().zip(&d_ineqs).all(|(f, d)| f + alpha * d < 0.0)
                && ev
                    .quads
                    .iter()
                    .zip(&d_quads)
                    .all(|(q, (d1, d2))| q + alpha * d1 + alpha * alpha * d2 < 0.0);
            if scalars_ok {
                let mut logdets = Vec::with_capacity(st.blocks.len());
                let mut ok = true;
                for (x, d) in st.blocks.iter().zip(&dir.dblocks) {
                    let mut trial = x.clone();
                    trial.add_scaled(alpha, d);
                    match trial.cholesky() {
                        Some(l) => logdets.push(CMat::log_det_from_cholesky(&l)),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    let mut f = -t * (ev.obj + alpha * d_obj);
                    for ((term, g), d) in p.log_terms.iter().zip(&ev.logs).zip(&d_logs) {
                        f -= t * term.weight * math::ln(g + alpha * d);
                    }
                    for (v, d) in ev.ineqs.iter().zip(&d_ineqs) {
                        f -= math::ln(-(v + alpha * d));
                    }
                    for (q, (d1, d2)) in ev.quads.iter().zip(&d_quads) {
                        f -= math::ln(-(q + alpha * d1 + alpha * alpha * d2));
                    }
                    for l in &logdets {
                        f -= l;
                    }
                    if f.is_finite()
                        && (equality_phase || f <= f0 + self.opts.armijo * alpha * dir.slope)
                    {
                        let next = State {
                            blocks: st
                                .blocks
                                .iter()
                                .zip(&dir.dblocks)
                                .map(|(x, d)| {
                                    let mut y = x.clone();
                                    y.add_scaled(alpha, d);
                                    y
                                })
                                .collect(),
                            vec: st.vec.iter().zip(&dir.dv).map(|(x, d)| x + alpha * d).collect(),
                        };
                        if let Some(next_ev) = self.evaluate(&next) {
                            return Some((next, next_ev));
                        }
                    }
                }
            }
            alpha *= self.opts.backtrack;
        }
        None
    }
}

fn add_rank_one(h: &mut RealMatrix, a: &[(usize, f64)], s: f64) {
    for &(i, ai) in a {
        for &(j, aj) in a {
            h[(i, j)] += s * ai * aj;
        }
    }
}

/// `<C_i, X C_j X>` for coefficients on the same block.
fn sandwich_inner(
    ci: &PsdCoef,
    si: &Sandwich,
    cj: &PsdCoef,
    sj: &Sandwich,
    x: &CMat,
) -> f64 {
    match (ci, si, cj, sj) {
        (PsdCoef::Outer(a, vi), _, PsdCoef::Outer(b, _), Sandwich::Outer { xv }) => {
            let z: Complex = vi.iter().zip(xv).map(|(p, q)| p.conj() * q).sum();
            a * b * z.norm_sqr()
        }
        (PsdCoef::Outer(a, _), Sandwich::Outer { xv }, PsdCoef::Identity(b), _)
        | (PsdCoef::Identity(b), _, PsdCoef::Outer(a, _), Sandwich::Outer { xv }) => {
            a * b * xv.iter().map(|z| z.norm_sqr()).sum::<f64>()
        }
        (PsdCoef::Outer(a, v), _, PsdCoef::Dense(_), Sandwich::Dense { xdx })
        | (PsdCoef::Dense(_), Sandwich::Dense { xdx }, PsdCoef::Outer(a, v), _) => a * xdx.quad_re(v),
        (PsdCoef::Identity(a), _, PsdCoef::Identity(b), _) => a * b * x.frobenius_sqr(),
        (PsdCoef::Identity(a), _, PsdCoef::Dense(_), Sandwich::Dense { xdx })
        | (PsdCoef::Dense(_), Sandwich::Dense { xdx }, PsdCoef::Identity(a), _) => a * xdx.trace_re(),
        (PsdCoef::Dense(d), _, PsdCoef::Dense(_), Sandwich::Dense { xdx }) => xdx.inner_hermitian(d),
        _ => unreachable!("sandwich kind follows coefficient kind"),
    }
}
