use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::numerics::{Complex, ComplexVector, HermitianMatrix};

/// Handle to a Hermitian PSD matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PsdVar(pub(crate) usize);

impl PsdVar {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a block of real scalar variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VecVar {
    pub(crate) offset: usize,
    pub(crate) len: usize,
}

impl VecVar {
    /// Global scalar index of entry `i`.
    pub fn at(self, i: usize) -> usize {
        assert!(i < self.len, "index {i} out of range for vector of length {}", self.len);
        self.offset + i
    }

    pub fn len(self) -> usize {
        self.len
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }
}

/// Coefficient `C` of a PSD variable `X` in a real affine functional; the
/// contribution is `tr(C X)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PsdCoef {
    /// `s * I`, i.e. `s * tr(X)`.
    Identity(f64),
    /// `s * v v^H`, i.e. `s * v^H X v`.
    Outer(f64, ComplexVector),
    Dense(HermitianMatrix),
}

impl PsdCoef {
    pub fn eval(&self, x: &HermitianMatrix) -> f64 {
        match self {
            PsdCoef::Identity(s) => s * x.trace(),
            PsdCoef::Outer(s, v) => s * x.quadratic_form_unchecked(v),
            PsdCoef::Dense(d) => d.inner(x),
        }
    }

    pub fn to_hermitian(&self, dim: usize) -> HermitianMatrix {
        match self {
            PsdCoef::Identity(s) => HermitianMatrix::scaled_identity(dim, *s),
            PsdCoef::Outer(s, v) => HermitianMatrix::outer(v).scaled(*s),
            PsdCoef::Dense(d) => d.clone(),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            PsdCoef::Identity(_) => None,
            PsdCoef::Outer(_, v) => Some(v.len()),
            PsdCoef::Dense(d) => Some(d.dim()),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            PsdCoef::Identity(s) => s.is_finite(),
            PsdCoef::Outer(s, v) => s.is_finite() && v.is_finite(),
            PsdCoef::Dense(d) => d.is_finite(),
        }
    }
}

/// `sum tr(C_b X_b) + sum a_i x_i + c`
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    pub(crate) psd: Vec<(usize, PsdCoef)>,
    pub(crate) vec: Vec<(usize, f64)>,
    pub(crate) constant: f64,
}

impl AffineExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    pub fn psd(mut self, var: PsdVar, coef: PsdCoef) -> Self {
        self.add_psd(var, coef);
        self
    }

    pub fn var(mut self, index: usize, coef: f64) -> Self {
        self.add_var(index, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_psd(&mut self, var: PsdVar, coef: PsdCoef) {
        self.psd.push((var.0, coef));
    }

    pub fn add_var(&mut self, index: usize, coef: f64) {
        if coef != 0.0 {
            self.vec.push((index, coef));
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn negated(&self) -> Self {
        Self {
            psd: self
                .psd
                .iter()
                .map(|(b, c)| {
                    let c = match c {
                        PsdCoef::Identity(s) => PsdCoef::Identity(-s),
                        PsdCoef::Outer(s, v) => PsdCoef::Outer(-s, v.clone()),
                        PsdCoef::Dense(d) => PsdCoef::Dense(d.scaled(-1.0)),
                    };
                    (*b, c)
                })
                .collect(),
            vec: self.vec.iter().map(|&(i, a)| (i, -a)).collect(),
            constant: -self.constant,
        }
    }

    pub fn has_psd_terms(&self) -> bool {
        !self.psd.is_empty()
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let mut acc = self.constant;
        for (b, c) in &self.psd {
            acc += c.eval(&x.psd[*b]);
        }
        for &(i, a) in &self.vec {
            acc += a * x.vec[i];
        }
        acc
    }
}

/// `sum_r (a_r . x + b_r)^2 + lin(x) <= 0` over vector variables only.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint {
    pub(crate) rows: Vec<(Vec<(usize, f64)>, f64)>,
    pub(crate) lin: AffineExpr,
}

impl QuadraticConstraint {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.lin.constant;
        for &(i, a) in &self.lin.vec {
            acc += a * x[i];
        }
        for (row, b) in &self.rows {
            let r = row.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + b;
            acc += r * r;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LogTerm {
    pub weight: f64,
    pub arg: AffineExpr,
}

/// A point in the variable space of a [`ConvexProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub psd: Vec<HermitianMatrix>,
    pub vec: Vec<f64>,
}

/// Values of the variables at the solution.
pub type Solution = Point;

impl Point {
    pub fn psd(&self, var: PsdVar) -> &HermitianMatrix {
        &self.psd[var.0]
    }

    pub fn vector(&self, var: VecVar) -> &[f64] {
        &self.vec[var.offset..var.offset + var.len]
    }

    pub fn scalar(&self, index: usize) -> f64 {
        self.vec[index]
    }
}

/// Maximize `linear(x) + sum_i w_i ln(g_i(x))` over Hermitian PSD matrices
/// and real vectors, subject to affine equalities and inequalities and convex
/// quadratic inequalities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexProblem {
    pub(crate) psd_vars: Vec<(String, usize)>,
    pub(crate) vec_vars: Vec<(String, VecVar)>,
    pub(crate) num_scalars: usize,
    pub(crate) objective: AffineExpr,
    pub(crate) log_terms: Vec<LogTerm>,
    pub(crate) equalities: Vec<AffineExpr>,
    /// `f(x) <= 0`
    pub(crate) inequalities: Vec<AffineExpr>,
    pub(crate) quadratics: Vec<QuadraticConstraint>,
    pub(crate) feasible_start: Option<Point>,
}

impl ConvexProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_psd(&mut self, name: impl Into<String>, dim: usize) -> PsdVar {
        self.psd_vars.push((name.into(), dim));
        PsdVar(self.psd_vars.len() - 1)
    }

    pub fn add_vector(&mut self, name: impl Into<String>, len: usize) -> VecVar {
        let v = VecVar {
            offset: self.num_scalars,
            len,
        };
        self.num_scalars += len;
        self.vec_vars.push((name.into(), v));
        v
    }

    pub fn psd_dim(&self, var: PsdVar) -> usize {
        self.psd_vars[var.0].1
    }

    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    /// Adds `expr` to the maximized objective.
    pub fn maximize_linear(&mut self, expr: AffineExpr) {
        let obj = &mut self.objective;
        obj.psd.extend(expr.psd);
        obj.vec.extend(expr.vec);
        obj.constant += expr.constant;
    }

    /// Adds `weight * ln(arg)` to the maximized objective.
    pub fn maximize_log(&mut self, weight: f64, arg: AffineExpr) {
        self.log_terms.push(LogTerm { weight, arg });
    }

    /// `expr == 0`
    pub fn add_equality(&mut self, expr: AffineExpr) {
        self.equalities.push(expr);
    }

    /// `expr <= 0`
    pub fn add_le_zero(&mut self, expr: AffineExpr) {
        self.inequalities.push(expr);
    }

    /// `expr >= 0`
    pub fn add_ge_zero(&mut self, expr: AffineExpr) {
        self.inequalities.push(expr.negated());
    }

    /// `sum_r (a_r . x + b_r)^2 + lin(x) <= 0`. `lin` may only involve vector
    /// variables.
    pub fn add_quadratic_le(&mut self, rows: Vec<(Vec<(usize, f64)>, f64)>, lin: AffineExpr) {
        self.quadratics.push(QuadraticConstraint { rows, lin });
    }

    /// `|| x - center || <= radius` for the listed scalar variables. A zero
    /// radius pins the variables to `center`.
    pub fn add_norm_le(&mut self, vars: &[usize], center: &[f64], radius: f64) {
        assert_eq!(vars.len(), center.len());
        if radius <= 0.0 {
            for (&i, &c) in vars.iter().zip(center) {
                self.add_equality(AffineExpr::constant(-c).var(i, 1.0));
            }
            return;
        }
        // Divided through by radius^2 to keep the constraint O(1).
        let rows = vars
            .iter()
            .zip(center)
            .map(|(&i, &c)| (alloc::vec![(i, 1.0 / radius)], -c / radius))
            .collect();
        self.add_quadratic_le(rows, AffineExpr::constant(-1.0));
    }

    pub fn set_feasible_start(&mut self, start: Point) {
        self.feasible_start = Some(start);
    }

    /// Scalar inequality count plus total PSD dimension: the barrier's
    /// duality-gap multiplier.
    pub fn barrier_degree(&self) -> usize {
        self.inequalities.len()
            + self.quadratics.len()
            + self.psd_vars.iter().map(|(_, d)| d).sum::<usize>()
    }

    pub fn objective_value(&self, x: &Point) -> f64 {
        self.objective.eval(x)
            + self
                .log_terms
                .iter()
                .map(|t| t.weight * crate::math::ln(t.arg.eval(x)))
                .sum::<f64>()
    }

    /// Largest violation over all constraints (0 when feasible), with PSD
    /// blocks measured by their negative eigenvalue part.
    pub fn max_violation(&self, x: &Point) -> f64 {
        let mut v = 0.0f64;
        for e in &self.equalities {
            v = v.max(e.eval(x).abs());
        }
        for e in &self.inequalities {
            v = v.max(e.eval(x));
        }
        for q in &self.quadratics {
            v = v.max(q.eval(&x.vec));
        }
        for p in &x.psd {
            if let Ok(l) = p.min_eigenvalue() {
                v = v.max(-l);
            }
        }
        v
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        use alloc::format;
        let check = |e: &AffineExpr, what: &str| -> Result<(), String> {
            if !e.constant.is_finite() {
                return Err(format!("{what}: non-finite constant"));
            }
            for (b, c) in &e.psd {
                let Some((_, dim)) = self.psd_vars.get(*b) else {
                    return Err(format!("{what}: unknown PSD variable {b}"));
                };
                if let Some(d) = c.dim() {
                    if d != *dim {
                        return Err(format!(
                            "{what}: coefficient of dimension {d} for PSD variable of dimension {dim}"
                        ));
                    }
                }
                if !c.is_finite() {
                    return Err(format!("{what}: non-finite PSD coefficient"));
                }
            }
            for &(i, a) in &e.vec {
                if i >= self.num_scalars {
                    return Err(format!("{what}: scalar index {i} out of range"));
                }
                if !a.is_finite() {
                    return Err(format!("{what}: non-finite coefficient"));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (i, t) in self.log_terms.iter().enumerate() {
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(format!("log term {i}: weight must be positive"));
            }
            check(&t.arg, "log term")?;
        }
        for e in &self.equalities {
            check(e, "equality")?;
        }
        for e in &self.inequalities {
            check(e, "inequality")?;
        }
        for q in &self.quadratics {
            if q.lin.has_psd_terms() {
                return Err("quadratic constraint: PSD terms are not supported".into());
            }
            check(&q.lin, "quadratic constraint")?;
            for (row, b) in &q.rows {
                if !b.is_finite() || row.iter().any(|&(i, a)| i >= self.num_scalars || !a.is_finite())
                {
                    return Err("quadratic constraint: bad row".into());
                }
            }
        }
        if let Some(s) = &self.feasible_start {
            if s.psd.len() != self.psd_vars.len() || s.vec.len() != self.num_scalars {
                return Err("feasible start has the wrong shape".into());
            }
            for (x, (_, d)) in s.psd.iter().zip(&self.psd_vars) {
                if x.dim() != *d {
                    return Err("feasible start has the wrong PSD dimension".into());
                }
            }
        }
        Ok(())
    }
}

fn fmt_complex(f: &mut fmt::Formatter<'_>, z: Complex) -> fmt::Result {
    write!(f, "{:e}{:+e}i", z.re, z.im)
}

fn fmt_expr(f: &mut fmt::Formatter<'_>, e: &AffineExpr) -> fmt::Result {
    write!(f, "  const {:e}", e.constant)?;
    for &(i, a) in &e.vec {
        write!(f, "\n  x{i} {a:e}")?;
    }
    for (b, c) in &e.psd {
        match c {
            PsdCoef::Identity(s) => write!(f, "\n  X{b} identity {s:e}")?,
            PsdCoef::Outer(s, v) => {
                write!(f, "\n  X{b} outer {s:e}")?;
                for z in v.iter() {
                    f.write_str(" ")?;
                    fmt_complex(f, *z)?;
                }
            }
            PsdCoef::Dense(d) => {
                write!(f, "\n  X{b} dense")?;
                for p in 0..d.dim() {
                    for q in p..d.dim() {
                        f.write_str(" ")?;
                        fmt_complex(f, d.get(p, q))?;
                    }
                }
            }
        }
    }
    writeln!(f)
}

/// Plain-text dump used to capture problems as fixtures.
impl fmt::Display for ConvexProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, d)) in self.psd_vars.iter().enumerate() {
            writeln!(f, "psd X{i} {name} {d}")?;
        }
        for (name, v) in &self.vec_vars {
            writeln!(f, "vec x{}..x{} {name}", v.offset, v.offset + v.len)?;
        }
        writeln!(f, "maximize linear")?;
        fmt_expr(f, &self.objective)?;
        for t in &self.log_terms {
            writeln!(f, "maximize log {:e}", t.weight)?;
            fmt_expr(f, &t.arg)?;
        }
        for e in &self.equalities {
            writeln!(f, "eq")?;
            fmt_expr(f, e)?;
        }
        for e in &self.inequalities {
            writeln!(f, "le")?;
            fmt_expr(f, e)?;
        }
        for q in &self.quadratics {
            writeln!(f, "quad")?;
            for (row, b) in &q.rows {
                write!(f, "  row {b:e}")?;
                for &(i, a) in row {
                    write!(f, " x{i}:{a:e}")?;
                }
                writeln!(f)?;
            }
            fmt_expr(f, &q.lin)?;
        }
        Ok(())
    }
}
