//! Dense convex quadratic programming with primal and dual recovery.
//!
//! Problems are held in the form
//!
//! ```text
//!     minimize     1/2 x' Q x + c' x
//!     subject to   A x  = b      (y, free)
//!                  G x <= h      (z >= 0)
//! ```
//!
//! and solved with a Mehrotra predictor-corrector interior point method. The
//! Lagrangian convention is `L = f(x) + y'(Ax - b) + z'(Gx - h)`, so that
//! stationarity reads `Qx + c + A'y + G'z = 0`.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Q is not symmetric: |Q[{row},{col}] - Q[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
}

/// A convex QP with labelled variables and constraint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    q: DMatrix<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    var_labels: Vec<String>,
    eq_labels: Vec<String>,
    ineq_labels: Vec<String>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl QuadraticProgram {
    /// Builds a program with generated labels (`x0`, `eq0`, `in0`, ...).
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self, QpError> {
        let var_labels = (0..c.len()).map(|i| format!("x{i}")).collect();
        let eq_labels = (0..b.len()).map(|i| format!("eq{i}")).collect();
        let ineq_labels = (0..h.len()).map(|i| format!("in{i}")).collect();
        Self::with_labels(q, c, a, b, g, h, var_labels, eq_labels, ineq_labels)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_labels(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
        var_labels: Vec<String>,
        eq_labels: Vec<String>,
        ineq_labels: Vec<String>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(QpError::Dimension(format!("Q is {}x{}, expected {n}x{n}", q.nrows(), q.ncols())));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(QpError::Dimension(format!(
                "A is {}x{} with |b| = {}, expected ?x{n}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if g.ncols() != n || g.nrows() != h.len() {
            return Err(QpError::Dimension(format!(
                "G is {}x{} with |h| = {}, expected ?x{n}",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        if var_labels.len() != n || eq_labels.len() != b.len() || ineq_labels.len() != h.len() {
            return Err(QpError::Dimension("label count does not match dimensions".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (q[(i, j)] - q[(j, i)]).abs();
                if gap > SYMMETRY_TOL {
                    return Err(QpError::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        let mut seen = HashSet::new();
        for label in var_labels.iter().chain(&eq_labels).chain(&ineq_labels) {
            if !seen.insert(label.as_str()) {
                return Err(QpError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self { q, c, a, b, g, h, var_labels, eq_labels, ineq_labels })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn var_labels(&self) -> &[String] {
        &self.var_labels
    }

    pub fn eq_labels(&self) -> &[String] {
        &self.eq_labels
    }

    pub fn ineq_labels(&self) -> &[String] {
        &self.ineq_labels
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// Wolfe dual objective at a point satisfying stationarity.
    pub fn dual_objective(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        -0.5 * x.dot(&(&self.q * x)) - self.b.dot(y) - self.h.dot(z)
    }

    /// Renders the program as labelled coordinate triples, one block per matrix.
    pub fn to_debug_text(&self) -> String {
        let mut out = String::new();
        let _ =
            writeln!(out, "%%QuadraticProgram n={} meq={} mineq={}", self.num_vars(), self.num_eq(), self.num_ineq());
        for (i, l) in self.var_labels.iter().enumerate() {
            let _ = writeln!(out, "var {i} {l}");
        }
        for (i, l) in self.eq_labels.iter().enumerate() {
            let _ = writeln!(out, "eq {i} {l}");
        }
        for (i, l) in self.ineq_labels.iter().enumerate() {
            let _ = writeln!(out, "ineq {i} {l}");
        }
        let mut block = |name: &str, m: &DMatrix<f64>, upper_only: bool| {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if upper_only && c < r {
                        continue;
                    }
                    let v = m[(r, c)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{name} {} {} {:e}", r + 1, c + 1, v);
                    }
                }
            }
        };
        block("Q", &self.q, true);
        block("A", &self.a, false);
        block("G", &self.g, false);
        for (name, v) in [("c", &self.c), ("b", &self.b), ("h", &self.h)] {
            for (i, x) in v.iter().enumerate() {
                if *x != 0.0 {
                    let _ = writeln!(out, "{name} {} {:e}", i + 1, x);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Max-norm residuals of the KKT system.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktResiduals {
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub dual_stationarity: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_eq.max(self.primal_ineq).max(self.dual_stationarity).max(self.complementarity)
    }
}

/// A Farkas ray `(y, z >= 0)` with `A'y + G'z = 0` and `b'y + h'z < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarkasCertificate {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

impl FarkasCertificate {
    /// Returns `(|A'y + G'z|_inf, b'y + h'z)` for the normalised ray.
    pub fn check(&self, qp: &QuadraticProgram) -> (f64, f64) {
        let r = qp.a.tr_mul(&self.y) + qp.g.tr_mul(&self.z);
        (r.amax(), qp.b.dot(&self.y) + qp.h.dot(&self.z))
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub residuals: KktResiduals,
    pub objective: f64,
    pub iterations: usize,
    pub certificate: Option<FarkasCertificate>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

/// KKT residuals of `qp` at an arbitrary primal-dual point.
pub fn kkt_residuals(qp: &QuadraticProgram, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> KktResiduals {
    let stat = &qp.q * x + &qp.c + qp.a.tr_mul(y) + qp.g.tr_mul(z);
    let eq = &qp.a * x - &qp.b;
    let slack = &qp.h - &qp.g * x;
    let primal_ineq = slack.iter().fold(0.0_f64, |m, s| m.max(-s));
    let mut complementarity = 0.0_f64;
    for (zi, si) in z.iter().zip(slack.iter()) {
        // a negative multiplier is a complementarity failure in its own right
        complementarity = complementarity.max((zi * si).abs()).max(-zi);
    }
    KktResiduals {
        primal_eq: if eq.is_empty() { 0.0 } else { eq.amax() },
        primal_ineq,
        dual_stationarity: if stat.is_empty() { 0.0 } else { stat.amax() },
        complementarity,
    }
}

pub fn solve(qp: &QuadraticProgram, settings: &SolverSettings) -> QpSolution {
    solve_with_hint(qp, settings, None)
}

/// Solves `qp`, optionally starting the primal iterate at `x0`.
pub fn solve_with_hint(qp: &QuadraticProgram, settings: &SolverSettings, x0: Option<&DVector<f64>>) -> QpSolution {
    let run = interior_point(qp, settings, x0);
    if run.status == QpStatus::Optimal {
        return run;
    }
    // The main run failed: decide between infeasible, unbounded and a genuine
    // iteration limit with a least-squares feasibility problem.
    match phase_one(qp, settings) {
        Some(cert) => QpSolution { status: QpStatus::Infeasible, certificate: Some(cert), ..run },
        None if run.status == QpStatus::Unbounded => run,
        None => QpSolution { status: QpStatus::IterationLimit, ..run },
    }
}

struct Scaled {
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    eq_scale: DVector<f64>,
    ineq_scale: DVector<f64>,
}

fn row_scale(m: &DMatrix<f64>, rhs: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut ms = m.clone();
    let mut rs = rhs.clone();
    let mut scale = DVector::from_element(m.nrows(), 1.0);
    for r in 0..m.nrows() {
        let norm = m.row(r).amax();
        if norm > 0.0 {
            let d = 1.0 / norm;
            scale[r] = d;
            ms.row_mut(r).scale_mut(d);
            rs[r] *= d;
        }
    }
    (ms, rs, scale)
}

fn scale_problem(qp: &QuadraticProgram) -> Scaled {
    let (a, b, eq_scale) = row_scale(&qp.a, &qp.b);
    let (g, h, ineq_scale) = row_scale(&qp.g, &qp.h);
    Scaled { a, b, g, h, eq_scale, ineq_scale }
}

/// `(merit, x, y, z, residuals)` of the best iterate seen.
type BestIterate = (f64, DVector<f64>, DVector<f64>, DVector<f64>, KktResiduals);

/// Newton direction `(dx, dy, dz, ds)`.
type Direction = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0_f64;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

const DIVERGENCE: f64 = 1e13;

fn interior_point(qp: &QuadraticProgram, settings: &SolverSettings, x0: Option<&DVector<f64>>) -> QpSolution {
    let n = qp.num_vars();
    let me = qp.num_eq();
    let mi = qp.num_ineq();
    let sc = scale_problem(qp);

    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut y = DVector::zeros(me);
    let gx = &sc.g * &x;
    let mut s = DVector::from_fn(mi, |i, _| (sc.h[i] - gx[i]).max(1.0));
    let mut z = DVector::from_element(mi, 1.0);

    let unscale = |y: &DVector<f64>, z: &DVector<f64>| (y.component_mul(&sc.eq_scale), z.component_mul(&sc.ineq_scale));

    let mut best: Option<BestIterate> = None;
    let mut status = QpStatus::IterationLimit;
    let mut iterations = 0;
    let reg_p = 1e-11;
    let reg_d = 1e-11;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let (yu, zu) = unscale(&y, &z);
        let res = kkt_residuals(qp, &x, &yu, &zu);
        let merit = res.max();
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone(), yu.clone(), zu.clone(), res));
        }
        if merit <= settings.tol {
            status = QpStatus::Optimal;
            break;
        }
        if iter == settings.max_iter {
            break;
        }
        if !x.iter().chain(y.iter()).chain(z.iter()).all(|v| v.is_finite()) {
            break;
        }
        if x.amax() > DIVERGENCE {
            status = QpStatus::Unbounded;
            break;
        }
        if mi > 0 && z.amax() > DIVERGENCE || me > 0 && y.amax() > DIVERGENCE {
            status = QpStatus::Infeasible;
            break;
        }

        let rd = &qp.q * &x + &qp.c + sc.a.tr_mul(&y) + sc.g.tr_mul(&z);
        let rp = &sc.a * &x - &sc.b;
        let ri = &sc.g * &x + &s - &sc.h;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        // augmented KKT matrix [[Q, A', G'], [A, 0, 0], [G, 0, -S/Z]]; unlike
        // the reduced normal form it stays well scaled as slacks collapse
        let dim = n + me + mi;
        let mut k0 = DMatrix::zeros(dim, dim);
        k0.view_mut((0, 0), (n, n)).copy_from(&qp.q);
        if me > 0 {
            k0.view_mut((0, n), (n, me)).copy_from(&sc.a.transpose());
            k0.view_mut((n, 0), (me, n)).copy_from(&sc.a);
        }
        if mi > 0 {
            k0.view_mut((0, n + me), (n, mi)).copy_from(&sc.g.transpose());
            k0.view_mut((n + me, 0), (mi, n)).copy_from(&sc.g);
            for r in 0..mi {
                k0[(n + me + r, n + me + r)] = -s[r] / z[r];
            }
        }
        // escalate the regularization until the factorization is usable
        let mut factor = None;
        for attempt in 0..8 {
            let bump = 100f64.powi(attempt);
            let mut kreg = k0.clone();
            for i in 0..n {
                kreg[(i, i)] += reg_p * bump;
            }
            for i in n..dim {
                kreg[(i, i)] -= reg_d * bump;
            }
            let lu = kreg.lu();
            if lu.is_invertible() {
                factor = Some(lu);
                break;
            }
        }
        let Some(lu) = factor else { break };

        let solve_dir = |rc: &DVector<f64>| -> Option<Direction> {
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&rd));
            if me > 0 {
                rhs.rows_mut(n, me).copy_from(&(-&rp));
            }
            if mi > 0 {
                rhs.rows_mut(n + me, mi).copy_from(&(-&ri - rc.component_div(&z)));
            }
            let mut sol = lu.solve(&rhs)?;
            // refinement against the unregularised matrix
            for _ in 0..2 {
                let resid = &rhs - &k0 * &sol;
                let fix = lu.solve(&resid)?;
                sol += fix;
            }
            if !sol.iter().all(|v| v.is_finite()) {
                return None;
            }
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let dz = sol.rows(n + me, mi).into_owned();
            let ds = if mi > 0 { -&ri - &sc.g * &dx } else { DVector::zeros(0) };
            Some((dx, dy, dz, ds))
        };

        // predictor
        let rc_aff = -s.component_mul(&z);
        let Some((dx_a, dy_a, dz_a, ds_a)) = solve_dir(&rc_aff) else { break };
        let (dx, dy, dz, ds) = if mi > 0 {
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = (&s + alpha_aff * &ds_a).dot(&(&z + alpha_aff * &dz_a)) / mi as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc = -s.component_mul(&z) - ds_a.component_mul(&dz_a) + DVector::from_element(mi, sigma * mu);
            match solve_dir(&rc) {
                Some(d) => d,
                None => break,
            }
        } else {
            (dx_a, dy_a, dz_a, ds_a)
        };

        let alpha = if mi > 0 { (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0) } else { 1.0 };
        x += alpha * dx;
        y += alpha * dy;
        if mi > 0 {
            s += alpha * ds;
            z += alpha * dz;
            for v in s.iter_mut().chain(z.iter_mut()) {
                *v = v.max(1e-300);
            }
        }
    }

    let (_, bx, by, bz, res) = best.expect("at least one iterate is evaluated");
    let objective = qp.objective(&bx);
    QpSolution { status, x: bx, y: by, z: bz, residuals: res, objective, iterations, certificate: None }
}

/// Least-squares feasibility problem
/// `min 1/2|Ax - b|^2 + 1/2|u|^2  s.t.  Gx - u <= h, u >= 0`.
/// Returns a normalised Farkas certificate when the optimum is positive.
fn phase_one(qp: &QuadraticProgram, settings: &SolverSettings) -> Option<FarkasCertificate> {
    let n = qp.num_vars();
    let me = qp.num_eq();
    let mi = qp.num_ineq();
    if me == 0 && mi == 0 {
        return None;
    }
    let sc = scale_problem(qp);
    let nv = n + mi;
    let mut q = DMatrix::zeros(nv, nv);
    let ata = sc.a.tr_mul(&sc.a);
    q.view_mut((0, 0), (n, n)).copy_from(&ata);
    for i in 0..n {
        q[(i, i)] += 1e-10;
    }
    for i in 0..mi {
        q[(n + i, n + i)] = 1.0;
    }
    let mut c = DVector::zeros(nv);
    if me > 0 {
        c.rows_mut(0, n).copy_from(&(-sc.a.tr_mul(&sc.b)));
    }
    let mut g = DMatrix::zeros(2 * mi, nv);
    let mut h = DVector::zeros(2 * mi);
    for r in 0..mi {
        for col in 0..n {
            g[(r, col)] = sc.g[(r, col)];
        }
        g[(r, n + r)] = -1.0;
        h[r] = sc.h[r];
        g[(mi + r, n + r)] = -1.0;
    }
    let aux = QuadraticProgram::new(q, c, DMatrix::zeros(0, nv), DVector::zeros(0), g, h).ok()?;
    let inner = SolverSettings { tol: settings.tol.min(1e-9), max_iter: settings.max_iter.max(100) };
    let sol = interior_point(&aux, &inner, None);
    let xs = sol.x.rows(0, n).into_owned();
    let u = sol.x.rows(n, mi).into_owned().map(|v| v.max(0.0));
    let y_s = &sc.a * &xs - &sc.b;
    let gap = y_s.amax().max(if mi > 0 { u.amax() } else { 0.0 });
    if gap <= settings.tol.sqrt() * 1e-1 {
        return None;
    }
    // back to the unscaled rows
    let y = y_s.component_mul(&sc.eq_scale);
    let z = u.component_mul(&sc.ineq_scale);
    let norm = y.amax().max(if mi > 0 { z.amax() } else { 0.0 });
    let cert = FarkasCertificate { y: y / norm, z: z / norm };
    // only a genuine ray proves infeasibility; an unconverged auxiliary solve does not.
    // The regularization on x leaves a stationarity error proportional to |x|, so
    // it is judged against the strength of the certificate.
    let (stat, value) = cert.check(qp);
    (value < -1e-9 && stat <= 1e-6f64.max(1e-4 * value.abs())).then_some(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn bound_constraint_multiplier() {
        // min x^2 s.t. -x <= -1
        let qp = QuadraticProgram::new(
            dmatrix![2.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            dmatrix![-1.0],
            dvector![-1.0],
        )
        .unwrap();
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!((sol.z[0] - 2.0).abs() < 1e-6);
        assert!(sol.residuals.max() <= 1e-8);
    }

    #[test]
    fn equality_multiplier_by_symmetry() {
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            dvector![0.0, 0.0],
            dmatrix![1.0, 1.0],
            dvector![2.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9 && (sol.x[1] - 1.0).abs() < 1e-9);
        // stationarity x + y = 0 under this sign convention
        assert!((sol.y[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn inactive_equality() {
        let qp = QuadraticProgram::new(
            dmatrix![2.0],
            dvector![0.0],
            dmatrix![1.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.x[0].abs() < 1e-12 && sol.y[0].abs() < 1e-12);
    }

    #[test]
    fn residuals_at_zero_point() {
        let qp = QuadraticProgram::new(
            dmatrix![2.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            dmatrix![-1.0],
            dvector![-1.0],
        )
        .unwrap();
        let r = kkt_residuals(&qp, &dvector![0.0], &DVector::zeros(0), &dvector![0.0]);
        assert_eq!(r.primal_ineq, 1.0);
    }

    #[test]
    fn stationarity_grows_linearly_off_optimum() {
        // min 1/2(x1^2 + x2^2) s.t. x1 + x2 = 2; (1, -1) keeps feasibility
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            dvector![0.0, 0.0],
            dmatrix![1.0, 1.0],
            dvector![2.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&qp, &settings());
        let dir = dvector![1.0, -1.0];
        let mut ratios = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let xp = &sol.x + eps * &dir;
            let r = kkt_residuals(&qp, &xp, &sol.y, &sol.z);
            assert!(r.primal_eq < 1e-12);
            ratios.push(r.dual_stationarity / eps);
        }
        for w in ratios.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-6, "{ratios:?}");
        }
        assert!((ratios[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_problem_has_certificate() {
        // x <= -1 and -x <= -1
        let qp = QuadraticProgram::new(
            dmatrix![1.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            dmatrix![1.0; -1.0],
            dvector![-1.0, -1.0],
        )
        .unwrap();
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Infeasible);
        let cert = sol.certificate.as_ref().unwrap();
        let (stat, value) = cert.check(&qp);
        assert!(stat < 1e-6, "{stat}");
        assert!(value < -1e-3);
        assert!(cert.z.iter().all(|z| *z >= 0.0));
    }

    #[test]
    fn unbounded_problem_detected() {
        // min -x, no constraints on growth
        let qp = QuadraticProgram::new(
            dmatrix![0.0],
            dvector![-1.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            dmatrix![-1.0],
            dvector![0.0],
        )
        .unwrap();
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Unbounded);
    }

    #[test]
    fn rejects_bad_shapes_and_asymmetry() {
        let err = QuadraticProgram::new(
            dmatrix![1.0, 0.5; 0.0, 1.0],
            dvector![0.0, 0.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::NotSymmetric { .. }));
        let err = QuadraticProgram::new(
            dmatrix![1.0],
            dvector![0.0, 0.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::Dimension(_)));
    }

    #[test]
    fn debug_text_lists_labels() {
        let qp = QuadraticProgram::with_labels(
            dmatrix![2.0],
            dvector![1.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            dmatrix![-1.0],
            dvector![-1.0],
            vec!["dp".into()],
            vec![],
            vec!["floor".into()],
        )
        .unwrap();
        let text = qp.to_debug_text();
        assert!(text.contains("var 0 dp"));
        assert!(text.contains("ineq 0 floor"));
        assert!(text.contains("G 1 1 -1e0"));
    }
}
