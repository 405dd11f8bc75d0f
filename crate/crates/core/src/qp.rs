//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A x  = b
//!                 lb <= C x <= ub
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The Hessian is
//! factored once; every active-set change only touches a small Schur system in
//! the transformed constraint space, which keeps the per-pivot cost at
//! `O(n * |W| + |W|^3)`.
//!
//! Bounds with magnitude `>= INFINITY_BOUND` are treated as absent. Rows with
//! `lb == ub` are handled as equalities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Bound magnitudes at or above this value are infinite.
pub const INFINITY_BOUND: f64 = 1e19;

const REGULARIZATION: f64 = 1e-10;
const UNBOUNDED_NORM: f64 = 1e8;
/// Largest violation of a dependent constraint still treated as satisfied.
const REDUNDANT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("row {0} has lower bound above upper bound")]
    CrossedBounds(usize),
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Lower,
    Upper,
}

/// One active inequality: row of `C` and which side of it binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActiveBound {
    pub row: usize,
    pub side: Side,
}

/// Warm-start information: a guess of the active inequality set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub active: Vec<ActiveBound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Result<Self, QpError> {
        let n = gradient.len();
        let p = Self {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, QpError> {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self.validate()?;
        Ok(self)
    }

    pub fn with_inequalities(
        mut self,
        c: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, QpError> {
        self.ineq_matrix = c;
        self.lower = lower;
        self.upper = upper;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.gradient.len();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::Dimension(format!(
                "hessian is {:?}, gradient has {n} entries",
                self.hessian.shape()
            )));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(QpError::Dimension("equality block".into()));
        }
        let m = self.ineq_matrix.nrows();
        if self.ineq_matrix.ncols() != n || self.lower.len() != m || self.upper.len() != m {
            return Err(QpError::Dimension("inequality block".into()));
        }
        if self.hessian.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("hessian"));
        }
        if self.gradient.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("gradient"));
        }
        if self.eq_matrix.iter().chain(self.eq_rhs.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("equalities"));
        }
        if self.ineq_matrix.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("inequality matrix"));
        }
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                asym = asym.max((self.hessian[(i, j)] - self.hessian[(j, i)]).abs());
            }
        }
        if asym > 1e-12 {
            return Err(QpError::Asymmetric(asym));
        }
        for i in 0..m {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(QpError::CrossedBounds(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers `lambda` with `H x + g = A' lambda + C' mu`.
    pub eq_multipliers: DVector<f64>,
    /// Signed multipliers `mu`: positive on an active lower bound, negative on
    /// an active upper bound, zero otherwise.
    pub ineq_multipliers: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// Active inequality rows at exit, usable as the next warm start.
    pub active_set: Vec<ActiveBound>,
    /// Number of active-set changes performed.
    pub pivots: usize,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            active: self.active_set.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_pivots: usize,
    /// KKT tolerance certifying an `Optimal` return.
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_pivots: 500,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Equality { row: usize, from_ineq: bool },
    Inequality(ActiveBound),
}

/// Constraint in the canonical form `normal' x >= rhs` (or `=` for equalities).
#[derive(Debug, Clone)]
struct Constraint {
    normal: DVector<f64>,
    rhs: f64,
    kind: Kind,
    /// `L^{-1} normal`, computed on first use.
    transformed: Option<DVector<f64>>,
}

/// Reusable solver. Holds no state between solves besides its settings; one
/// instance per thread.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&mut self, p: &QpProblem, warm: Option<&WarmStart>) -> QpSolution {
        Run::new(p, self.settings).solve(warm)
    }
}

/// Solve with default settings.
pub fn solve_qp(p: &QpProblem, warm: Option<&WarmStart>) -> QpSolution {
    QpSolver::default().solve(p, warm)
}

fn is_infinite(v: f64) -> bool {
    v.abs() >= INFINITY_BOUND
}

struct Run<'a> {
    p: &'a QpProblem,
    settings: QpSettings,
    chol: Cholesky<f64, Dyn>,
    regularized: bool,
    cons: Vec<Constraint>,
    n_eq: usize,
    /// Working set: indices into `cons`, with their multipliers.
    working: Vec<usize>,
    mult: Vec<f64>,
    /// Transformed normals of the working set and their Gram matrix.
    cols: Vec<DVector<f64>>,
    gram: DMatrix<f64>,
    x: DVector<f64>,
    pivots: usize,
}

enum StepOutcome {
    Added,
    /// Dependent on the working set and violated only by rounding.
    Redundant,
    Infeasible,
    MaxIter,
}

impl<'a> Run<'a> {
    fn new(p: &'a QpProblem, settings: QpSettings) -> Self {
        let n = p.dim();
        let (chol, regularized) = match Cholesky::new(p.hessian.clone()) {
            Some(c) => (c, false),
            None => {
                let reg = &p.hessian + DMatrix::identity(n, n) * REGULARIZATION;
                let c = Cholesky::new(reg).unwrap_or_else(|| {
                    // Indefinite input: fall back to a heavier shift so the
                    // run still terminates; the KKT check reports the damage.
                    let shift = p.hessian.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
                    Cholesky::new(&p.hessian + DMatrix::identity(n, n) * shift)
                        .expect("shifted hessian is positive definite")
                });
                (c, true)
            }
        };

        let mut cons = Vec::new();
        for r in 0..p.eq_matrix.nrows() {
            cons.push(Constraint {
                normal: p.eq_matrix.row(r).transpose(),
                rhs: p.eq_rhs[r],
                kind: Kind::Equality {
                    row: r,
                    from_ineq: false,
                },
                transformed: None,
            });
        }
        for r in 0..p.ineq_matrix.nrows() {
            let (lo, hi) = (p.lower[r], p.upper[r]);
            if !is_infinite(lo) && !is_infinite(hi) && (hi - lo).abs() <= 1e-14 * (1.0 + lo.abs())
            {
                cons.push(Constraint {
                    normal: p.ineq_matrix.row(r).transpose(),
                    rhs: 0.5 * (lo + hi),
                    kind: Kind::Equality {
                        row: r,
                        from_ineq: true,
                    },
                    transformed: None,
                });
            }
        }
        let n_eq = cons.len();
        for r in 0..p.ineq_matrix.nrows() {
            let (lo, hi) = (p.lower[r], p.upper[r]);
            if !is_infinite(lo) && !is_infinite(hi) && (hi - lo).abs() <= 1e-14 * (1.0 + lo.abs())
            {
                continue;
            }
            let row = p.ineq_matrix.row(r).transpose();
            if !is_infinite(lo) {
                cons.push(Constraint {
                    normal: row.clone(),
                    rhs: lo,
                    kind: Kind::Inequality(ActiveBound {
                        row: r,
                        side: Side::Lower,
                    }),
                    transformed: None,
                });
            }
            if !is_infinite(hi) {
                cons.push(Constraint {
                    normal: -row,
                    rhs: -hi,
                    kind: Kind::Inequality(ActiveBound {
                        row: r,
                        side: Side::Upper,
                    }),
                    transformed: None,
                });
            }
        }

        Self {
            p,
            settings,
            chol,
            regularized,
            cons,
            n_eq,
            working: Vec::new(),
            mult: Vec::new(),
            cols: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            x: DVector::zeros(n),
            pivots: 0,
        }
    }

    fn l_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("cholesky factor has a positive diagonal")
    }

    fn lt_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .tr_solve_lower_triangular(v)
            .expect("cholesky factor has a positive diagonal")
    }

    fn transformed(&mut self, j: usize) -> DVector<f64> {
        if self.cons[j].transformed.is_none() {
            let t = self.l_solve(&self.cons[j].normal);
            self.cons[j].transformed = Some(t);
        }
        self.cons[j].transformed.clone().unwrap()
    }

    fn slack(&self, j: usize) -> f64 {
        self.cons[j].normal.dot(&self.x) - self.cons[j].rhs
    }

    fn is_equality(&self, j: usize) -> bool {
        j < self.n_eq
    }

    /// Append constraint `j` to the working set with multiplier `m`.
    fn push_working(&mut self, j: usize, m: f64) {
        let t = self.transformed(j);
        let k = self.cols.len();
        let mut g = DMatrix::zeros(k + 1, k + 1);
        g.view_mut((0, 0), (k, k)).copy_from(&self.gram);
        for (i, c) in self.cols.iter().enumerate() {
            let v = c.dot(&t);
            g[(i, k)] = v;
            g[(k, i)] = v;
        }
        g[(k, k)] = t.norm_squared();
        self.gram = g;
        self.cols.push(t);
        self.working.push(j);
        self.mult.push(m);
    }

    /// Rebuild the cached columns after the working set was replaced.
    fn reset_working(&mut self, working: Vec<usize>, mult: Vec<f64>) {
        self.working.clear();
        self.mult.clear();
        self.cols.clear();
        self.gram = DMatrix::zeros(0, 0);
        for (j, m) in working.into_iter().zip(mult) {
            self.push_working(j, m);
        }
    }

    /// Solve the symmetric Schur system `G y = r`; `None` when singular.
    fn schur_solve(g: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
        if g.nrows() == 0 {
            return Some(DVector::zeros(0));
        }
        if let Some(c) = Cholesky::new(g.clone()) {
            let diag_min = (0..g.nrows())
                .map(|i| c.l_dirty()[(i, i)])
                .fold(f64::INFINITY, f64::min);
            let diag_max = (0..g.nrows())
                .map(|i| c.l_dirty()[(i, i)])
                .fold(0.0f64, f64::max);
            if diag_min > 1e-9 * diag_max.max(1e-300) {
                return Some(c.solve(r));
            }
        }
        None
    }

    /// Primal direction `z` and multiplier direction `d` for raising the
    /// multiplier of constraint `p` by one unit.
    fn direction(&mut self, p: usize) -> Option<(DVector<f64>, DVector<f64>, f64)> {
        let w = self.transformed(p);
        let rhs = DVector::from_iterator(self.cols.len(), self.cols.iter().map(|c| -c.dot(&w)));
        let d = Self::schur_solve(&self.gram, &rhs)?;
        let mut zt = w;
        for (c, dk) in self.cols.iter().zip(d.iter()) {
            zt.axpy(*dk, c, 1.0);
        }
        let curvature = zt.dot(&zt);
        let z = self.lt_solve(&zt);
        Some((z, d, curvature))
    }

    /// Recompute `x` and the multipliers directly for the current working set
    /// from the full KKT system, which avoids the conditioning loss of the
    /// range-space update when the Hessian needed regularization.
    fn polish(&mut self) -> bool {
        let n = self.p.dim();
        let m = self.working.len();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p.hessian);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&self.p.gradient));
        for (k, &j) in self.working.iter().enumerate() {
            let c = &self.cons[j];
            for i in 0..n {
                kkt[(i, n + k)] = -c.normal[i];
                kkt[(n + k, i)] = c.normal[i];
            }
            rhs[n + k] = c.rhs;
        }
        let mut lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs);
        if sol.is_none() && self.regularized {
            for i in 0..n {
                kkt[(i, i)] += REGULARIZATION;
            }
            lu = kkt.clone().lu();
            sol = lu.solve(&rhs);
        }
        let Some(mut sol) = sol else {
            return false;
        };
        // One step of iterative refinement.
        if let Some(corr) = lu.solve(&(&rhs - &kkt * &sol)) {
            sol += corr;
        }
        if !sol.iter().all(|v| v.is_finite()) {
            return false;
        }
        self.x = sol.rows(0, n).into_owned();
        self.mult = sol.rows(n, m).iter().copied().collect();
        true
    }

    fn drop_at(&mut self, pos: usize) {
        self.working.remove(pos);
        self.mult.remove(pos);
        self.cols.remove(pos);
        self.gram = self.gram.clone().remove_row(pos).remove_column(pos);
        self.pivots += 1;
    }

    /// Add constraint `p`, dropping blocking inequalities on the way.
    fn add_constraint(&mut self, p: usize) -> StepOutcome {
        let equality = self.is_equality(p);
        if equality && self.slack(p) > 0.0 {
            let c = &mut self.cons[p];
            c.normal = -c.normal.clone();
            c.rhs = -c.rhs;
            c.transformed = None;
        }
        let tol = self.feas_tol(p);
        let mut lambda_p = 0.0;
        loop {
            if self.pivots >= self.settings.max_pivots {
                return StepOutcome::MaxIter;
            }
            let s = self.slack(p);
            if equality && s.abs() <= tol && lambda_p == 0.0 {
                // Already satisfied: enter with a zero multiplier.
                self.push_working(p, 0.0);
                return StepOutcome::Added;
            }
            let Some((z, d, curvature)) = self.direction(p) else {
                return StepOutcome::Infeasible;
            };

            // Blocking inequality multiplier, lowest working index on ties.
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (k, (&j, &dk)) in self.working.iter().zip(d.iter()).enumerate() {
                if self.is_equality(j) || dk >= 0.0 {
                    continue;
                }
                let tk = -self.mult[k] / dk;
                if tk < t1 {
                    t1 = tk;
                    block = Some(k);
                }
            }

            let dependent = curvature <= 1e-14 * self.cons[p].normal.norm_squared().max(1e-300);
            let t2 = if dependent {
                f64::INFINITY
            } else {
                -s / curvature
            };
            if dependent && block.is_none() {
                if s.abs() <= REDUNDANT_TOL * (1.0 + self.cons[p].rhs.abs()) {
                    return StepOutcome::Redundant;
                }
                return StepOutcome::Infeasible;
            }
            let t = t1.min(t2).max(0.0);
            if t.is_finite() {
                if !dependent {
                    self.x += &z * t;
                }
                for (mk, dk) in self.mult.iter_mut().zip(d.iter()) {
                    *mk += t * dk;
                }
                lambda_p += t;
            }
            if t2 <= t1 {
                self.push_working(p, lambda_p);
                self.pivots += 1;
                return StepOutcome::Added;
            }
            let k = block.expect("finite partial step has a blocking constraint");
            self.drop_at(k);
        }
    }

    fn feas_tol(&self, j: usize) -> f64 {
        1e-12 * (1.0 + self.cons[j].rhs.abs())
    }

    /// Install a guessed working set in one direct solve, then shed any
    /// constraints whose multipliers come out negative.
    fn install_warm(&mut self, warm: &WarmStart) -> bool {
        let mut extra: Vec<usize> = Vec::new();
        for ab in &warm.active {
            if let Some(j) = (self.n_eq..self.cons.len())
                .find(|&j| matches!(self.cons[j].kind, Kind::Inequality(k) if k == *ab))
            {
                if !extra.contains(&j) {
                    extra.push(j);
                }
            }
        }
        if extra.is_empty() {
            return true;
        }
        let saved_w = self.working.clone();
        let saved_m = self.mult.clone();
        let saved_x = self.x.clone();
        let mut added = false;
        for j in extra {
            // Skip guesses that depend on rows already in the working set.
            let independent = self.direction(j).is_some_and(|(_, _, curvature)| {
                curvature > 1e-10 * self.cons[j].normal.norm_squared().max(1e-300)
            });
            if independent {
                self.push_working(j, 0.0);
                added = true;
            }
        }
        if !added {
            return true;
        }
        if !self.polish() {
            self.reset_working(saved_w, saved_m);
            self.x = saved_x;
            return false;
        }
        loop {
            let mut worst = None;
            let mut worst_val = -1e-12;
            for (k, &j) in self.working.iter().enumerate() {
                if !self.is_equality(j) && self.mult[k] < worst_val {
                    worst_val = self.mult[k];
                    worst = Some(k);
                }
            }
            match worst {
                None => return true,
                Some(k) => {
                    self.drop_at(k);
                    if !self.polish() {
                        return false;
                    }
                }
            }
        }
    }

    fn solve(mut self, warm: Option<&WarmStart>) -> QpSolution {
        // Unconstrained minimizer.
        let gt = self.l_solve(&self.p.gradient);
        self.x = -self.lt_solve(&gt);

        for j in 0..self.n_eq {
            match self.add_constraint(j) {
                StepOutcome::Added | StepOutcome::Redundant => {}
                StepOutcome::Infeasible => return self.finish(QpStatus::Infeasible),
                StepOutcome::MaxIter => return self.finish(QpStatus::MaxIter),
            }
        }

        if let Some(w) = warm {
            let base_w = self.working.clone();
            let base_m = self.mult.clone();
            let base_x = self.x.clone();
            let base_pivots = self.pivots;
            if !self.install_warm(w) {
                self.reset_working(base_w, base_m);
                self.x = base_x;
                self.pivots = base_pivots;
            }
        }

        let mut redundant = vec![false; self.cons.len()];
        loop {
            let mut pick = None;
            let mut most = 0.0;
            #[allow(clippy::needless_range_loop)]
            for j in self.n_eq..self.cons.len() {
                if redundant[j] || self.working.contains(&j) {
                    continue;
                }
                let s = self.slack(j);
                if s < -self.feas_tol(j) && s < most {
                    most = s;
                    pick = Some(j);
                }
            }
            let Some(p) = pick else { break };
            match self.add_constraint(p) {
                StepOutcome::Added => redundant.iter_mut().for_each(|r| *r = false),
                StepOutcome::Redundant => redundant[p] = true,
                StepOutcome::Infeasible => return self.finish(QpStatus::Infeasible),
                StepOutcome::MaxIter => return self.finish(QpStatus::MaxIter),
            }
        }

        self.polish();
        let status = if self.regularized && self.x.amax() > UNBOUNDED_NORM {
            QpStatus::Unbounded
        } else {
            QpStatus::Optimal
        };
        self.finish(status)
    }

    fn finish(self, status: QpStatus) -> QpSolution {
        let p = self.p;
        let mut eq_mult = DVector::zeros(p.eq_matrix.nrows());
        let mut ineq_mult = DVector::zeros(p.ineq_matrix.nrows());
        let mut active = Vec::new();
        for (&j, &m) in self.working.iter().zip(self.mult.iter()) {
            let c = &self.cons[j];
            match c.kind {
                Kind::Equality { row, from_ineq } => {
                    // The sign flip used while adding is encoded in the normal.
                    let orig = if from_ineq {
                        p.ineq_matrix.row(row).transpose()
                    } else {
                        p.eq_matrix.row(row).transpose()
                    };
                    let sign = if c.normal.dot(&orig) >= 0.0 { 1.0 } else { -1.0 };
                    if from_ineq {
                        ineq_mult[row] = sign * m;
                    } else {
                        eq_mult[row] = sign * m;
                    }
                }
                Kind::Inequality(ab) => {
                    ineq_mult[ab.row] = match ab.side {
                        Side::Lower => m,
                        Side::Upper => -m,
                    };
                    active.push(ab);
                }
            }
        }
        active.sort();
        let kkt = kkt_residual(p, &self.x, &eq_mult, &ineq_mult);
        let status = match status {
            QpStatus::Optimal if kkt > self.settings.tolerance => QpStatus::MaxIter,
            s => s,
        };
        QpSolution {
            x: self.x,
            eq_multipliers: eq_mult,
            ineq_multipliers: ineq_mult,
            status,
            kkt_residual: kkt,
            active_set: active,
            pivots: self.pivots,
        }
    }
}

/// Largest violation among stationarity, primal feasibility, dual feasibility
/// and complementary slackness. Stationarity is scaled by the gradient size.
pub fn kkt_residual(
    p: &QpProblem,
    x: &DVector<f64>,
    eq_mult: &DVector<f64>,
    ineq_mult: &DVector<f64>,
) -> f64 {
    let grad = &p.hessian * x + &p.gradient;
    let stat = &grad - p.eq_matrix.transpose() * eq_mult - p.ineq_matrix.transpose() * ineq_mult;
    let scale = 1.0 + p.gradient.amax() + (&p.hessian * x).amax();
    let mut res = stat.amax() / scale;
    if p.eq_matrix.nrows() > 0 {
        res = res.max((&p.eq_matrix * x - &p.eq_rhs).amax());
    }
    let cx = &p.ineq_matrix * x;
    for i in 0..cx.len() {
        let (lo, hi, mu) = (p.lower[i], p.upper[i], ineq_mult[i]);
        if !is_infinite(lo) {
            res = res.max(lo - cx[i]);
        }
        if !is_infinite(hi) {
            res = res.max(cx[i] - hi);
        }
        if mu > 0.0 {
            if is_infinite(lo) {
                res = res.max(mu);
            } else {
                res = res.max((mu * (cx[i] - lo)).abs());
            }
        } else if mu < 0.0 {
            if is_infinite(hi) {
                res = res.max(-mu);
            } else {
                res = res.max((mu * (hi - cx[i])).abs());
            }
        }
    }
    res
}
