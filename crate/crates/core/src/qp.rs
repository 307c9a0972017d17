//! Dense convex QP solver.
//!
//! Solves `min ½ xᵀHx + gᵀx  s.t.  A_eq x = b_eq,  A_in x ≤ b_in` with `H ≻ 0`.
//! Equalities are eliminated through an orthonormal null-space basis; inequalities are
//! handled by a dual active-set method that starts from the unconstrained minimizer and
//! adds the most violated row each iteration, dropping rows whose multipliers would
//! turn negative. Linearly dependent equality rows are detected and ignored.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        QpProblem {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        let dims = [
            ("qp hessian rows", self.h.nrows()),
            ("qp hessian cols", self.h.ncols()),
            ("qp equality cols", self.a_eq.ncols()),
            ("qp inequality cols", self.a_in.ncols()),
        ];
        for (context, actual) in dims {
            if actual != n {
                return Err(Error::Dimension { context, expected: n, actual });
            }
        }
        if self.b_eq.len() != self.a_eq.nrows() {
            return Err(Error::Dimension { context: "qp equality rhs", expected: self.a_eq.nrows(), actual: self.b_eq.len() });
        }
        if self.b_in.len() != self.a_in.nrows() {
            return Err(Error::Dimension { context: "qp inequality rhs", expected: self.a_in.nrows(), actual: self.b_in.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative threshold below which an equality row counts as dependent.
    pub rank_tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings { tolerance: DEFAULT_TOLERANCE, max_iterations: 1000, rank_tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl QpStatus {
    pub fn code(self) -> u8 {
        match self {
            QpStatus::Optimal => 0,
            QpStatus::MaxIterations => 1,
            QpStatus::Infeasible => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// `‖A_eq x − b_eq‖∞`.
    pub eq_residual: f64,
    /// `max(A_in x − b_in, 0)`.
    pub ineq_violation: f64,
    /// `‖Hx + g + A_eqᵀμ + A_inᵀν‖∞`, scaled by `max(1, ‖Hx‖∞, ‖g‖∞)`.
    pub stationarity: f64,
    /// Inequality rows held with equality, ascending.
    pub active_set: Vec<usize>,
    pub eq_multipliers: DVector<f64>,
    /// Nonnegative, zero off the active set.
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
    pub status: QpStatus,
    /// Row that could not be satisfied when the problem is infeasible.
    pub most_violated: Option<usize>,
    /// Equality rows dropped as linearly dependent on earlier rows.
    pub redundant_equalities: Vec<usize>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Null-space parameterization `x = x_p + Z y` of the independent equality rows.
struct Reduction {
    independent: Vec<usize>,
    redundant: Vec<usize>,
    q1: DMatrix<f64>,
    r1: DMatrix<f64>,
    x_p: DVector<f64>,
    z: DMatrix<f64>,
}

fn reduce(a: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> Reduction {
    let n = a.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut independent = Vec::new();
    let mut redundant = Vec::new();
    for i in 0..a.nrows() {
        let row = a.row(i).transpose();
        let scale = row.norm();
        let mut v = row.clone();
        for _ in 0..2 {
            for e in &basis {
                let c = e.dot(&v);
                v.axpy(-c, e, 1.0);
            }
        }
        let norm = v.norm();
        if scale > 0.0 && norm > rank_tol * scale && basis.len() < n {
            basis.push(v / norm);
            independent.push(i);
        } else {
            redundant.push(i);
        }
    }
    let r = independent.len();
    if r == 0 {
        return Reduction {
            independent,
            redundant,
            q1: DMatrix::zeros(n, 0),
            r1: DMatrix::zeros(0, 0),
            x_p: DVector::zeros(n),
            z: DMatrix::identity(n, n),
        };
    }
    let mut padded = DMatrix::zeros(n, n);
    for (k, &i) in independent.iter().enumerate() {
        padded.column_mut(k).copy_from(&a.row(i).transpose());
    }
    let qr = padded.qr();
    let q = qr.q();
    let r_full = qr.r();
    let q1 = q.columns(0, r).into_owned();
    let r1 = r_full.view((0, 0), (r, r)).into_owned();
    let b_r = DVector::from_iterator(r, independent.iter().map(|&i| b[i]));
    let w = r1
        .transpose()
        .solve_lower_triangular(&b_r)
        .unwrap_or_else(|| DVector::zeros(r));
    let x_p = &q1 * w;
    let z = q.columns(r, n - r).into_owned();
    Reduction { independent, redundant, q1, r1, x_p, z }
}

/// Solve `[H Nᵀ; N 0] [y; u] = [rhs_y; rhs_u]` where `N` stacks the active rows of `g_in`.
fn kkt_solve(
    h: &DMatrix<f64>,
    g_in: &DMatrix<f64>,
    active: &[usize],
    rhs_y: &DVector<f64>,
    rhs_u: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = h.nrows();
    let k = active.len();
    if d + k == 0 {
        return Some((DVector::zeros(0), DVector::zeros(0)));
    }
    let mut kkt = DMatrix::zeros(d + k, d + k);
    kkt.view_mut((0, 0), (d, d)).copy_from(h);
    for (c, &j) in active.iter().enumerate() {
        let row = g_in.row(j);
        kkt.view_mut((d + c, 0), (1, d)).copy_from(&row);
        kkt.view_mut((0, d + c), (d, 1)).copy_from(&row.transpose());
    }
    let mut rhs = DVector::zeros(d + k);
    rhs.rows_mut(0, d).copy_from(rhs_y);
    rhs.rows_mut(d, k).copy_from(rhs_u);
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, d).into_owned(), sol.rows(d, k).into_owned()))
}

/// Dual active-set iteration state in reduced coordinates.
struct Dual<'a> {
    h: &'a DMatrix<f64>,
    g: &'a DVector<f64>,
    a: &'a DMatrix<f64>,
    e: &'a DVector<f64>,
    y: DVector<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
}

impl Dual<'_> {
    fn violation(&self, j: usize) -> f64 {
        (self.a.row(j) * &self.y)[0] - self.e[j]
    }

    /// Exact minimizer and multipliers with the active rows held as equalities.
    fn polish(&mut self) -> bool {
        let e_a = DVector::from_iterator(self.active.len(), self.active.iter().map(|&j| self.e[j]));
        match kkt_solve(self.h, self.a, &self.active, &(-self.g), &e_a) {
            Some((y, u)) => {
                self.y = y;
                self.u = u.iter().copied().collect();
                true
            }
            None => false,
        }
    }

    fn drop_at(&mut self, k: usize) {
        self.active.remove(k);
        self.u.remove(k);
    }
}

/// Solve with default settings.
pub fn solve(problem: &QpProblem, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
    solve_with(problem, warm_start, &QpSettings::default())
}

pub fn solve_with(problem: &QpProblem, warm_start: Option<&DVector<f64>>, settings: &QpSettings) -> Result<QpSolution> {
    problem.check()?;
    let n = problem.dim();
    let tol = settings.tolerance;
    let red = reduce(&problem.a_eq, &problem.b_eq, settings.rank_tolerance);
    let z = &red.z;
    let hr = z.transpose() * &problem.h * z;
    let hr = (&hr + hr.transpose()) * 0.5;
    let gr = z.transpose() * (&problem.h * &red.x_p + &problem.g);
    let ar = &problem.a_in * z;
    let er = &problem.b_in - &problem.a_in * &red.x_p;
    let d = hr.ncols();
    let m_in = problem.a_in.nrows();
    let inner_tol = 0.1 * tol;

    let y0 = if d > 0 {
        hr.clone().cholesky().map(|c| c.solve(&(-&gr)))
    } else {
        Some(DVector::zeros(0))
    };
    let Some(y0) = y0 else {
        return Err(Error::Unsupported("qp hessian is not positive definite on the equality null space".into()));
    };
    let mut dual = Dual { h: &hr, g: &gr, a: &ar, e: &er, y: y0, active: Vec::new(), u: Vec::new() };

    if let Some(x0) = warm_start {
        if x0.len() == n && m_in > 0 && d > 0 {
            warm_active_set(&mut dual, problem, x0, settings);
        }
    }

    let mut iterations = 0;
    let mut status = QpStatus::Optimal;
    let mut most_violated = None;
    let mut polished = false;
    'outer: loop {
        if iterations >= settings.max_iterations {
            status = QpStatus::MaxIterations;
            break;
        }
        // Most violated inactive row, normalized by its length.
        let mut p = None;
        let mut worst = inner_tol;
        for j in 0..m_in {
            if dual.active.contains(&j) {
                continue;
            }
            let v = dual.violation(j) / ar.row(j).norm().max(1.0);
            if v > worst {
                worst = v;
                p = Some(j);
            }
        }
        let Some(p) = p else {
            if polished {
                break;
            }
            polished = true;
            let saved = (dual.y.clone(), dual.u.clone());
            if !dual.polish() || dual.u.iter().any(|&u| u < -tol) {
                dual.y = saved.0;
                dual.u = saved.1;
                break;
            }
            continue;
        };
        polished = false;
        iterations += 1;
        if d == 0 {
            status = QpStatus::Infeasible;
            most_violated = Some(p);
            break;
        }
        let np = ar.row(p).transpose();
        let mut u_p = 0.0;
        loop {
            let zero_u = DVector::zeros(dual.active.len());
            let Some((zdir, r)) = kkt_solve(&hr, &ar, &dual.active, &(-&np), &zero_u) else {
                status = QpStatus::Infeasible;
                most_violated = Some(p);
                break 'outer;
            };
            // Largest multiplier step keeping the active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk < 0.0 {
                    let t = -dual.u[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let slope = np.dot(&zdir);
            let scale = np.norm_squared().max(1e-300);
            let t2 = if zdir.amax() > 1e-14 * (1.0 + dual.y.amax()) && slope < -1e-14 * scale {
                -dual.violation(p) / slope
            } else {
                f64::INFINITY
            };
            if !t1.is_finite() && !t2.is_finite() {
                status = QpStatus::Infeasible;
                most_violated = Some(p);
                break 'outer;
            }
            let t = t1.min(t2).max(0.0);
            if t2.is_finite() {
                dual.y.axpy(t, &zdir, 1.0);
            }
            for (k, rk) in r.iter().enumerate() {
                dual.u[k] = (dual.u[k] + t * rk).max(0.0);
            }
            u_p += t;
            if t2 <= t1 {
                dual.active.push(p);
                dual.u.push(u_p);
                break;
            }
            let k = drop.expect("finite partial step names a row");
            dual.drop_at(k);
            iterations += 1;
            if iterations >= settings.max_iterations {
                status = QpStatus::MaxIterations;
                break 'outer;
            }
        }
    }

    let x = &red.x_p + z * &dual.y;
    let mut nu = DVector::zeros(m_in);
    for (k, &j) in dual.active.iter().enumerate() {
        nu[j] = dual.u[k].max(0.0);
    }
    let grad = &problem.h * &x + &problem.g;
    let resid = &grad + problem.a_in.transpose() * &nu;
    let mut mu = DVector::zeros(problem.a_eq.nrows());
    if !red.independent.is_empty() {
        let w = red.q1.transpose() * (-&resid);
        if let Some(mr) = red.r1.solve_upper_triangular(&w) {
            for (k, &i) in red.independent.iter().enumerate() {
                mu[i] = mr[k];
            }
        }
    }
    let station = (&resid + problem.a_eq.transpose() * &mu).amax();
    let station_scale = 1f64.max((&problem.h * &x).amax()).max(problem.g.amax());
    let eq_residual = if problem.a_eq.nrows() > 0 { (&problem.a_eq * &x - &problem.b_eq).amax() } else { 0.0 };
    let ineq_violation = if m_in > 0 { (&problem.a_in * &x - &problem.b_in).max().max(0.0) } else { 0.0 };
    let stationarity = station / station_scale;
    let eq_scale = 1f64.max(problem.b_eq.amax());
    if status == QpStatus::Optimal && (eq_residual > tol * eq_scale || ineq_violation > tol || stationarity > tol) {
        if eq_residual > tol * eq_scale {
            status = QpStatus::Infeasible;
        } else if ineq_violation > tol {
            status = QpStatus::Infeasible;
            most_violated = (0..m_in).max_by(|&a, &b| {
                let va = (problem.a_in.row(a) * &x)[0] - problem.b_in[a];
                let vb = (problem.a_in.row(b) * &x)[0] - problem.b_in[b];
                va.total_cmp(&vb)
            });
        } else {
            status = QpStatus::MaxIterations;
        }
    }
    let mut active_set = dual.active.clone();
    active_set.sort_unstable();
    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        eq_residual,
        ineq_violation,
        stationarity,
        active_set,
        eq_multipliers: mu,
        ineq_multipliers: nu,
        iterations,
        status,
        most_violated,
        redundant_equalities: red.redundant,
    })
}

/// Seed the active set with rows tight at `x0`, then drop rows with negative multipliers
/// until the seed is dual feasible.
fn warm_active_set(dual: &mut Dual, problem: &QpProblem, x0: &DVector<f64>, settings: &QpSettings) {
    let d = dual.h.nrows();
    let slack = &problem.b_in - &problem.a_in * x0;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut seed = Vec::new();
    for j in 0..slack.len() {
        let scale = 1f64.max(problem.b_in[j].abs());
        if slack[j].abs() > 1e-6 * scale || seed.len() >= d {
            continue;
        }
        let row = dual.a.row(j).transpose();
        let norm0 = row.norm();
        let mut v = row;
        for _ in 0..2 {
            for e in &basis {
                let c = e.dot(&v);
                v.axpy(-c, e, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 > 0.0 && norm > settings.rank_tolerance * norm0 {
            basis.push(v / norm);
            seed.push(j);
        }
    }
    dual.active = seed;
    dual.u = vec![0.0; dual.active.len()];
    while !dual.active.is_empty() {
        if !dual.polish() {
            dual.active.clear();
            dual.u.clear();
            break;
        }
        let (k, &umin) = dual
            .u
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty active set");
        if umin >= 0.0 {
            return;
        }
        dual.drop_at(k);
    }
    if let Some(c) = dual.h.clone().cholesky() {
        dual.y = c.solve(&(-dual.g));
    }
}
