//! A minimal sparse conic program (linear equalities, linear inequalities and
//! second-order cones) with a pluggable solver and CBF export.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("solver setup failed: {0}")]
    SolverFailure(String),
}

/// Affine expression `Σ coef·x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(v: usize) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn add_term(&mut self, v: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn with_term(mut self, v: usize, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Soc {
    t: LinExpr,
    xs: Vec<LinExpr>,
}

/// `minimize cᵀx + c0` subject to affine equalities `e(x) = 0`, inequalities
/// `e(x) ≤ 0` and cones `‖xs(x)‖ ≤ t(x)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    n_vars: usize,
    objective: LinExpr,
    eqs: Vec<LinExpr>,
    les: Vec<LinExpr>,
    socs: Vec<Soc>,
}

/// Dimensions of an assembled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramSize {
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_le: usize,
    pub n_soc: usize,
    pub soc_rows: usize,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.n_vars += 1;
        self.n_vars - 1
    }

    /// `n` consecutive variables; returns the first index.
    pub fn add_vars(&mut self, n: usize) -> usize {
        self.n_vars += n;
        self.n_vars - n
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn size(&self) -> ProgramSize {
        ProgramSize {
            n_vars: self.n_vars,
            n_eq: self.eqs.len(),
            n_le: self.les.len(),
            n_soc: self.socs.len(),
            soc_rows: self.socs.iter().map(|s| s.xs.len() + 1).sum(),
        }
    }

    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    /// `e(x) = 0`
    pub fn add_eq(&mut self, e: LinExpr) {
        self.eqs.push(e);
    }

    /// `e(x) ≤ 0`
    pub fn add_le(&mut self, e: LinExpr) {
        self.les.push(e);
    }

    /// `lo ≤ x[v] ≤ hi`; infinite bounds are skipped.
    pub fn add_bounds(&mut self, v: usize, lo: f64, hi: f64) {
        if lo.is_finite() {
            let mut e = LinExpr::constant(lo);
            e.add_term(v, -1.0);
            self.les.push(e);
        }
        if hi.is_finite() {
            let mut e = LinExpr::constant(-hi);
            e.add_term(v, 1.0);
            self.les.push(e);
        }
    }

    /// `‖xs(x)‖₂ ≤ t(x)`. An empty `xs` degenerates to `t(x) ≥ 0`.
    pub fn add_soc(&mut self, t: LinExpr, xs: Vec<LinExpr>) {
        if xs.is_empty() {
            self.les.push(t.scaled(-1.0));
        } else {
            self.socs.push(Soc { t, xs });
        }
    }

    /// Largest constraint violation at `x` (cone violations measured as
    /// `‖xs‖ − t`).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.eqs.iter().map(|e| e.eval(x).abs());
        let le = self.les.iter().map(|e| e.eval(x).max(0.0));
        let soc = self.socs.iter().map(|s| {
            let norm = s.xs.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            (norm - s.t.eval(x)).max(0.0)
        });
        eq.chain(le).chain(soc).fold(0.0, f64::max)
    }

    /// Standard form `A x + s = b`, `s ∈ K` with cone rows ordered as zero,
    /// nonnegative, then one block per second-order cone.
    pub fn standard_form(&self) -> StandardForm {
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        // b − A x = -e(x) for equalities and inequalities: s = −e(x) ≥ 0
        for e in self.eqs.iter().chain(&self.les) {
            rows.push((e.terms.clone(), -e.constant));
        }
        // s = (t(x), xs(x))
        for s in &self.socs {
            for e in std::iter::once(&s.t).chain(&s.xs) {
                rows.push((e.terms.iter().map(|&(v, c)| (v, -c)).collect(), e.constant));
            }
        }
        let mut cones = Vec::new();
        if !self.eqs.is_empty() {
            cones.push(ConeBlock::Zero(self.eqs.len()));
        }
        if !self.les.is_empty() {
            cones.push(ConeBlock::Nonneg(self.les.len()));
        }
        cones.extend(self.socs.iter().map(|s| ConeBlock::Soc(s.xs.len() + 1)));
        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(rows.len());
        for (i, (terms, rhs)) in rows.into_iter().enumerate() {
            for (j, v) in terms {
                ai.push(i);
                aj.push(j);
                av.push(v);
            }
            b.push(rhs);
        }
        let mut q = vec![0.0; self.n_vars];
        for &(v, c) in &self.objective.terms {
            q[v] += c;
        }
        StandardForm {
            n: self.n_vars,
            m: b.len(),
            a_rows: ai,
            a_cols: aj,
            a_vals: av,
            b,
            q,
            q0: self.objective.constant,
            cones,
        }
    }

    /// Conic Benchmark Format (CBF v3) text of the program, constraints
    /// written as `A'x + b' ∈ K` with `A' = −A`.
    pub fn to_cbf(&self) -> String {
        self.standard_form().to_cbf()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeBlock {
    Zero(usize),
    Nonneg(usize),
    Soc(usize),
}

/// Triplet form `minimize qᵀx + q0` s.t. `A x + s = b`, `s ∈ K`.
/// Duplicate triplets are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm {
    pub n: usize,
    pub m: usize,
    pub a_rows: Vec<usize>,
    pub a_cols: Vec<usize>,
    pub a_vals: Vec<f64>,
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    pub q0: f64,
    pub cones: Vec<ConeBlock>,
}

impl StandardForm {
    fn csc(&self) -> CscMatrix<f64> {
        // combine duplicates before handing to the solver
        let mut trip: Vec<(usize, usize, f64)> = self
            .a_rows
            .iter()
            .zip(&self.a_cols)
            .zip(&self.a_vals)
            .map(|((&i, &j), &v)| (j, i, v))
            .collect();
        trip.sort_by_key(|t| (t.0, t.1));
        let mut colptr = vec![0usize; self.n + 1];
        let mut rowval = Vec::with_capacity(trip.len());
        let mut nzval: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last = None;
        for (j, i, v) in trip {
            if last == Some((j, i)) {
                *nzval.last_mut().unwrap() += v;
                continue;
            }
            last = Some((j, i));
            colptr[j + 1] += 1;
            rowval.push(i);
            nzval.push(v);
        }
        for j in 0..self.n {
            colptr[j + 1] += colptr[j];
        }
        CscMatrix::new(self.m, self.n, colptr, rowval, nzval)
    }

    pub fn to_cbf(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n{} 1\nF {}\n", self.n, self.n);
        let _ = writeln!(s, "CON\n{} {}", self.m, self.cones.len());
        for c in &self.cones {
            let _ = match c {
                ConeBlock::Zero(k) => writeln!(s, "L= {k}"),
                ConeBlock::Nonneg(k) => writeln!(s, "L+ {k}"),
                ConeBlock::Soc(k) => writeln!(s, "Q {k}"),
            };
        }
        let obj: Vec<(usize, f64)> = self.q.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        let _ = writeln!(s, "\nOBJACOORD\n{}", obj.len());
        for (j, v) in obj {
            let _ = writeln!(s, "{j} {v:?}");
        }
        if self.q0 != 0.0 {
            let _ = writeln!(s, "\nOBJBCOORD\n{:?}", self.q0);
        }
        let nz: Vec<usize> = (0..self.a_vals.len()).filter(|&k| self.a_vals[k] != 0.0).collect();
        let _ = writeln!(s, "\nACOORD\n{}", nz.len());
        for k in nz {
            let _ = writeln!(s, "{} {} {:?}", self.a_rows[k], self.a_cols[k], -self.a_vals[k]);
        }
        let bnz: Vec<(usize, f64)> = self.b.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        let _ = writeln!(s, "\nBCOORD\n{}", bnz.len());
        for (i, v) in bnz {
            let _ = writeln!(s, "{i} {v:?}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Relative residuals as reported by the solver.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
    pub log: String,
}

pub trait ConicSolver: Sync {
    fn name(&self) -> &str;
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, SolverError>;
}

/// Interior-point backend using Clarabel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClarabelSolver {
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for ClarabelSolver {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

impl ConicSolver for ClarabelSolver {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, SolverError> {
        let sf = program.standard_form();
        let a = sf.csc();
        let p = CscMatrix::zeros((sf.n, sf.n));
        let cones: Vec<SupportedConeT<f64>> = sf
            .cones
            .iter()
            .map(|c| match *c {
                ConeBlock::Zero(k) => SupportedConeT::ZeroConeT(k),
                ConeBlock::Nonneg(k) => SupportedConeT::NonnegativeConeT(k),
                ConeBlock::Soc(k) => SupportedConeT::SecondOrderConeT(k),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .tol_feas(self.tol)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .build()
            .map_err(|e| SolverError::SolverFailure(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &sf.q, &a, &sf.b, &cones, settings)
            .map_err(|e| SolverError::SolverFailure(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalTrouble,
        };
        Ok(ConicSolution {
            status,
            x: sol.x.clone(),
            objective: sol.obj_val + sf.q0,
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
            iterations: sol.iterations,
            log: format!(
                "clarabel: {:?} after {} iterations, r_prim {:.3e}, r_dual {:.3e}",
                sol.status, sol.iterations, sol.r_prim, sol.r_dual
            ),
        })
    }
}
