//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use flexmarket::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

// ---------------------------------------------------------------------------
// standard normal quantile by quadrature and bisection

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson integral of the density from -12 to `z`.
pub fn simpson_cdf(z: f64) -> f64 {
    let lo = -12.0;
    let n = 20_000;
    let h = (z - lo) / n as f64;
    let mut acc = normal_pdf(lo) + normal_pdf(z);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * normal_pdf(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Inverts [`simpson_cdf`] by bisection on [-10, 10].
pub fn bisection_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if simpson_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// random strictly convex QPs and the active-set enumeration oracle

/// Raw data of a random QP: `Q = M M^T + I/2`, constraints built around a
/// known feasible point so every instance is feasible.
#[derive(Debug, Clone)]
pub struct RandomQp {
    pub n: usize,
    pub me: usize,
    pub mi: usize,
    pub m: Vec<f64>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub g: Vec<f64>,
    pub x0: Vec<f64>,
    pub slack: Vec<f64>,
}

impl RandomQp {
    pub fn program(&self) -> QuadraticProgram {
        let n = self.n;
        let m = DMatrix::from_row_slice(n, n, &self.m);
        let q = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
        let q = (&q + q.transpose()) * 0.5;
        let a = DMatrix::from_row_slice(self.me, n, &self.a);
        let g = DMatrix::from_row_slice(self.mi, n, &self.g);
        let x0 = DVector::from_vec(self.x0.clone());
        let b = &a * &x0;
        let h = &g * &x0 + DVector::from_vec(self.slack.clone());
        QuadraticProgram::new(q, DVector::from_vec(self.c.clone()), a, b, g, h).expect("well-formed random QP")
    }
}

pub fn random_qp() -> impl Strategy<Value = RandomQp> {
    (1usize..=6, 0usize..=3)
        .prop_flat_map(|(n, mi)| (Just(n), 0..n.min(3), Just(mi)))
        .prop_flat_map(|(n, me, mi)| {
            let v = |len: usize, r: f64| prop::collection::vec(-r..r, len);
            (
                Just((n, me, mi)),
                v(n * n, 1.0),
                v(n, 3.0),
                v(me * n, 1.0),
                v(mi * n, 1.0),
                v(n, 1.0),
                prop::collection::vec(0.0..1.0f64, mi),
            )
        })
        .prop_map(|((n, me, mi), m, c, a, g, x0, slack)| RandomQp { n, me, mi, m, c, a, g, x0, slack })
}

/// `count` instances from a fixed seed.
pub fn random_qps(count: usize) -> Vec<RandomQp> {
    let mut runner = TestRunner::deterministic();
    let strategy = random_qp();
    (0..count).map(|_| strategy.new_tree(&mut runner).expect("strategy generates").current()).collect()
}

pub struct OracleSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub active: Vec<usize>,
}

/// Tries every subset of the inequalities as the active set, solves the
/// resulting equality-constrained KKT system, and keeps the cheapest point
/// that is primal feasible with nonnegative multipliers.
pub fn active_set_oracle(qp: &QuadraticProgram) -> Option<OracleSolution> {
    let (n, me, mi) = (qp.num_vars(), qp.num_eq(), qp.num_ineq());
    let mut best: Option<(f64, OracleSolution)> = None;
    for mask in 0u32..(1 << mi) {
        let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let k = n + me + active.len();
        let mut kkt = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        kkt.view_mut((0, 0), (n, n)).copy_from(qp.q());
        for i in 0..me {
            for j in 0..n {
                kkt[(n + i, j)] = qp.a()[(i, j)];
                kkt[(j, n + i)] = qp.a()[(i, j)];
            }
            rhs[n + i] = qp.b()[i];
        }
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + r, j)] = qp.g()[(i, j)];
                kkt[(j, n + me + r)] = qp.g()[(i, j)];
            }
            rhs[n + me + r] = qp.h()[i];
        }
        for j in 0..n {
            rhs[j] = -qp.c()[j];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let slack = qp.h() - qp.g() * &x;
        if slack.iter().any(|s| *s < -1e-9) {
            continue;
        }
        let mut z = DVector::zeros(mi);
        for (r, &i) in active.iter().enumerate() {
            z[i] = sol[n + me + r];
        }
        if z.iter().any(|v| *v < -1e-9) {
            continue;
        }
        let y = sol.rows(n, me).into_owned();
        let obj = qp.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-12) {
            best = Some((obj, OracleSolution { x, y, z, active }));
        }
    }
    best.map(|(_, s)| s)
}
