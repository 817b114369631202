//! The single-operator benchmark: every area, tie and chance constraint
//! cleared in one program, plus the checks that compare the decentralized
//! limit against it.
//!
//! Each physical tie carries one flow variable per orientation. The two are
//! linked only through the angle definitions, so their anti-symmetry follows
//! from the shared angles rather than being imposed.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{verify_nash, CouplingState};
use crate::grid::Network;
use crate::market::{
    AreaDecision, AreaDuals, ChanceConstrainedClearing, ClearOptions, ClearingConfig, ClearingEngine, MarketError,
    TermsOfTrade, TieTerms,
};
use crate::qp::{self, KktResiduals, QpStatus, QuadraticProgram};
use crate::stochastic;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchmarkError {
    #[error("the centralized clearing problem is infeasible")]
    Infeasible,
    #[error("the centralized clearing problem is unbounded")]
    Unbounded,
    #[error("the centralized clearing did not converge (KKT residual {0:e})")]
    NotConverged(f64),
    #[error("{0}")]
    Model(String),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Capacity multipliers of one tie orientation: lower and upper bound on
/// `T_da + dT` in that orientation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TieCapacityDuals {
    pub kappa: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralSolution {
    pub decisions: BTreeMap<String, AreaDecision>,
    pub duals: BTreeMap<String, AreaDuals>,
    /// Per area, per incident tie, in that area's orientation.
    pub tie_duals: BTreeMap<String, BTreeMap<String, TieCapacityDuals>>,
    /// Total generation cost, USD.
    pub objective: f64,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    /// The assembled joint program, for residual checks at other points.
    pub program: QuadraticProgram,
}

impl CentralSolution {
    /// `T_da + dT` of `tie_id` in `area_id`'s orientation.
    pub fn flow(&self, net: &Network, area_id: &str, tie_id: &str) -> Option<f64> {
        let v = net.tie_view(area_id, tie_id)?;
        Some(v.t_da() + self.decisions.get(area_id)?.delta_t.get(tie_id)?)
    }
}

fn dt_label(area: &str, tie: &str) -> String {
    format!("dT[{area}:{tie}]")
}

fn tie_row_label(area: &str, tie: &str) -> String {
    format!("tie[{area}:{tie}]")
}

/// Sparse row accumulated before the dense program is formed.
struct Row {
    label: String,
    coefs: Vec<(usize, f64)>,
    rhs: f64,
}

#[derive(Default)]
struct Builder {
    vars: Vec<String>,
    index: HashMap<String, usize>,
    q: Vec<f64>,
    c: Vec<f64>,
    eq: Vec<Row>,
    ineq: Vec<Row>,
}

impl Builder {
    fn var(&mut self, label: String, q: f64, c: f64) {
        self.index.insert(label.clone(), self.vars.len());
        self.vars.push(label);
        self.q.push(q);
        self.c.push(c);
    }

    fn at(&self, label: &str) -> usize {
        self.index[label]
    }

    fn finish(self) -> Result<QuadraticProgram, BenchmarkError> {
        let n = self.vars.len();
        let q = DMatrix::from_diagonal(&DVector::from_vec(self.q));
        let c = DVector::from_vec(self.c);
        let dense = |rows: &[Row]| {
            let mut m = DMatrix::zeros(rows.len(), n);
            let mut r = DVector::zeros(rows.len());
            for (i, row) in rows.iter().enumerate() {
                for &(j, v) in &row.coefs {
                    m[(i, j)] += v;
                }
                r[i] = row.rhs;
            }
            (m, r)
        };
        let (a, b) = dense(&self.eq);
        let (g, h) = dense(&self.ineq);
        let eq_labels = self.eq.into_iter().map(|r| r.label).collect();
        let ineq_labels = self.ineq.into_iter().map(|r| r.label).collect();
        QuadraticProgram::with_labels(q, c, a, b, g, h, self.vars, eq_labels, ineq_labels)
            .map_err(|e| BenchmarkError::Model(e.to_string()))
    }
}

/// Assembles the joint clearing program over all areas.
pub fn assemble_centralized(net: &Network, config: &ClearingConfig) -> Result<QuadraticProgram, BenchmarkError> {
    let mut bld = Builder::default();
    for area in net.areas() {
        for gid in &area.generators {
            let g = net.generator(gid).expect("area generator exists");
            bld.var(format!("dP[{gid}]"), g.cost_quadratic, g.marginal_cost(g.p_da));
        }
        for b in &area.buses {
            bld.var(format!("theta[{b}]"), config.theta_reg, 0.0);
        }
    }
    for t in net.tie_lines() {
        bld.var(dt_label(&t.from_area, &t.id), config.flow_reg, 0.0);
        bld.var(dt_label(&t.to_area, &t.id), config.flow_reg, 0.0);
    }

    for area in net.areas() {
        let req = stochastic::area_requirement(net, &area.id).map_err(|e| BenchmarkError::Model(e.to_string()))?;
        let views = net.incident_ties(&area.id);
        let mut nodal: BTreeMap<&str, Row> = area
            .buses
            .iter()
            .map(|b| {
                let bus = net.bus(b).expect("area bus exists");
                let row =
                    Row { label: format!("nodal[{b}]"), coefs: Vec::new(), rhs: -stochastic::nodal_requirement(bus) };
                (b.as_str(), row)
            })
            .collect();
        let mut aggregate = Row { label: format!("aggregate[{}]", area.id), coefs: Vec::new(), rhs: -req.requirement };
        let mut boxes = Vec::new();
        let mut ramps = Vec::new();
        for gid in &area.generators {
            let g = net.generator(gid).expect("area generator exists");
            let x = bld.at(&format!("dP[{gid}]"));
            let row = nodal.get_mut(g.bus.as_str()).expect("generator bus in area");
            row.coefs.push((x, -1.0));
            row.rhs += g.p_da;
            aggregate.coefs.push((x, -1.0));
            aggregate.rhs += g.p_da;
            boxes.push(Row { label: format!("pmin[{gid}]"), coefs: vec![(x, -1.0)], rhs: g.p_da - g.p_min });
            boxes.push(Row { label: format!("pmax[{gid}]"), coefs: vec![(x, 1.0)], rhs: g.p_max - g.p_da });
            ramps.push(Row { label: format!("ramp_down[{gid}]"), coefs: vec![(x, -1.0)], rhs: -g.ramp_down });
            ramps.push(Row { label: format!("ramp_up[{gid}]"), coefs: vec![(x, 1.0)], rhs: g.ramp_up });
        }
        let mut line_rows = Vec::new();
        for lid in &area.lines {
            let l = net.line(lid).expect("area line exists");
            let k = 1.0 / l.reactance;
            let (tf, tt) = (bld.at(&format!("theta[{}]", l.from_bus)), bld.at(&format!("theta[{}]", l.to_bus)));
            let from = nodal.get_mut(l.from_bus.as_str()).expect("line bus in area");
            from.coefs.extend([(tf, k), (tt, -k)]);
            let to = nodal.get_mut(l.to_bus.as_str()).expect("line bus in area");
            to.coefs.extend([(tt, k), (tf, -k)]);
            line_rows.push(Row {
                label: format!("line_lower[{lid}]"),
                coefs: vec![(tf, -k), (tt, k)],
                rhs: l.capacity,
            });
            line_rows.push(Row {
                label: format!("line_upper[{lid}]"),
                coefs: vec![(tf, k), (tt, -k)],
                rhs: l.capacity,
            });
        }
        for v in &views {
            let x = bld.at(&dt_label(&area.id, &v.tie.id));
            let row = nodal.get_mut(v.own_bus).expect("tie bus in area");
            row.coefs.push((x, 1.0));
            row.rhs -= v.t_da();
            aggregate.coefs.push((x, 1.0));
            aggregate.rhs -= v.t_da();

            let label = tie_row_label(&area.id, &v.tie.id);
            if v.tie.is_open() {
                bld.eq.push(Row { label, coefs: vec![(x, 1.0)], rhs: 0.0 });
            } else {
                let k = 1.0 / v.tie.reactance;
                let own = bld.at(&format!("theta[{}]", v.own_bus));
                let other = bld.at(&format!("theta[{}]", v.other_bus));
                bld.eq.push(Row { label, coefs: vec![(x, 1.0), (own, -k), (other, k)], rhs: -v.t_da() });
            }
        }
        bld.ineq.extend(area.buses.iter().map(|b| nodal.remove(b.as_str()).expect("row per bus")));
        bld.ineq.extend(boxes);
        bld.ineq.extend(ramps);
        bld.ineq.extend(line_rows);
        bld.ineq.push(aggregate);
    }

    // capacity once per physical tie, on the `from` orientation; the `to`
    // orientation's bounds are the same two half-spaces
    for t in net.tie_lines().iter().filter(|t| !t.is_open()) {
        let x = bld.at(&dt_label(&t.from_area, &t.id));
        bld.ineq.push(Row { label: format!("cap_lower[{}]", t.id), coefs: vec![(x, -1.0)], rhs: t.capacity + t.t_da });
        bld.ineq.push(Row { label: format!("cap_upper[{}]", t.id), coefs: vec![(x, 1.0)], rhs: t.capacity - t.t_da });
    }
    let slack = net.slack();
    let x = bld.at(&format!("theta[{}]", slack.bus));
    bld.eq.push(Row { label: format!("slack[{}]", slack.bus), coefs: vec![(x, 1.0)], rhs: 0.0 });

    bld.finish()
}

/// Accepts iteration-limited solves whose residual is still small.
const ACCEPTABLE_RESIDUAL: f64 = 1e-6;

/// Clears every area jointly with full information.
pub fn solve_centralized(net: &Network, config: &ClearingConfig) -> Result<CentralSolution, BenchmarkError> {
    let program = assemble_centralized(net, config)?;
    let sol = qp::solve(&program, &config.solver);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(BenchmarkError::Infeasible),
        QpStatus::Unbounded => return Err(BenchmarkError::Unbounded),
        QpStatus::IterationLimit => {
            if sol.residuals.max() > ACCEPTABLE_RESIDUAL {
                return Err(BenchmarkError::NotConverged(sol.residuals.max()));
            }
            log::warn!("centralized clearing stopped at the iteration limit (residual {:e})", sol.residuals.max());
        }
    }

    let vars = label_index(program.var_labels());
    let eqs = label_index(program.eq_labels());
    let ineqs = label_index(program.ineq_labels());
    let (x, y, z) = (&sol.x, &sol.y, &sol.z);
    let mut decisions = BTreeMap::new();
    let mut duals = BTreeMap::new();
    let mut tie_duals = BTreeMap::new();
    for area in net.areas() {
        let mut d = AreaDecision::default();
        let mut u = AreaDuals::default();
        for gid in &area.generators {
            d.delta_p.insert(gid.clone(), x[vars[&format!("dP[{gid}]")]]);
            u.nu.insert(gid.clone(), z[ineqs[&format!("pmin[{gid}]")]]);
            u.lambda.insert(gid.clone(), z[ineqs[&format!("pmax[{gid}]")]]);
            u.psi.insert(gid.clone(), z[ineqs[&format!("ramp_down[{gid}]")]]);
            u.varphi.insert(gid.clone(), z[ineqs[&format!("ramp_up[{gid}]")]]);
        }
        for b in &area.buses {
            d.theta.insert(b.clone(), x[vars[&format!("theta[{b}]")]]);
            u.alpha.insert(b.clone(), z[ineqs[&format!("nodal[{b}]")]]);
        }
        for lid in &area.lines {
            u.kappa.insert(lid.clone(), z[ineqs[&format!("line_lower[{lid}]")]]);
            u.eta.insert(lid.clone(), z[ineqs[&format!("line_upper[{lid}]")]]);
        }
        u.gamma = z[ineqs[&format!("aggregate[{}]", area.id)]];
        let mut caps = BTreeMap::new();
        for v in net.incident_ties(&area.id) {
            d.delta_t.insert(v.tie.id.clone(), x[vars[&dt_label(&area.id, &v.tie.id)]]);
            u.xi.insert(v.tie.id.clone(), y[eqs[&tie_row_label(&area.id, &v.tie.id)]]);
            let from = if v.tie.is_open() {
                TieCapacityDuals::default()
            } else {
                TieCapacityDuals {
                    kappa: z[ineqs[&format!("cap_lower[{}]", v.tie.id)]],
                    eta: z[ineqs[&format!("cap_upper[{}]", v.tie.id)]],
                }
            };
            // the lower bound of one orientation is the upper bound of the other
            let own = if v.is_from_side() { from } else { TieCapacityDuals { kappa: from.eta, eta: from.kappa } };
            caps.insert(v.tie.id.clone(), own);
        }
        decisions.insert(area.id.clone(), d);
        duals.insert(area.id.clone(), u);
        tie_duals.insert(area.id.clone(), caps);
    }
    let objective = generation_cost(net, decisions.values());
    Ok(CentralSolution {
        decisions,
        duals,
        tie_duals,
        objective,
        status: sol.status,
        residuals: sol.residuals,
        program,
    })
}

fn label_index(labels: &[String]) -> HashMap<String, usize> {
    labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect()
}

fn generation_cost<'a>(net: &Network, decisions: impl IntoIterator<Item = &'a AreaDecision>) -> f64 {
    decisions
        .into_iter()
        .flat_map(|d| d.delta_p.iter())
        .map(|(g, dp)| {
            let gen = net.generator(g).expect("decision generator exists");
            gen.cost(gen.p_da + dp)
        })
        .sum()
}

/// `sign` with `sign(0) = 0`.
fn sign0(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum()
    }
}

/// The terms of trade under which every area, clearing on its own,
/// reproduces the joint optimum.
pub fn optimal_terms_of_trade(net: &Network, sol: &CentralSolution) -> BTreeMap<String, TermsOfTrade> {
    net.areas()
        .iter()
        .map(|area| {
            let ties = net
                .incident_ties(&area.id)
                .iter()
                .map(|v| {
                    let dt = sol.decisions[&area.id].delta_t[&v.tie.id];
                    let cap = sol.tie_duals[&area.id][&v.tie.id];
                    let other = &sol.duals[v.other_area];
                    let terms = TieTerms {
                        neighbor_delta: other.gamma + other.alpha[v.other_bus],
                        neighbor_angle: sol.decisions[v.other_area].theta[v.other_bus],
                        capacity_price: 2.0 * (cap.eta - cap.kappa) * sign0(dt),
                    };
                    (v.tie.id.clone(), terms)
                })
                .collect();
            (area.id.clone(), TermsOfTrade { ties })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// Max-norm distance between each area's own clearing and its part of the joint optimum.
    pub deviations: BTreeMap<String, f64>,
    pub max_deviation: f64,
    pub tol: f64,
    pub passes: bool,
}

pub const FIXED_POINT_TOL: f64 = 1e-4;

/// Clears every area under `terms` and compares with the joint optimum.
pub fn verify_fixed_point(
    net: &Network,
    terms: &BTreeMap<String, TermsOfTrade>,
    sol: &CentralSolution,
    config: &ClearingConfig,
) -> Result<FixedPointReport, MarketError> {
    let engine = ChanceConstrainedClearing { config: *config };
    let mut deviations = BTreeMap::new();
    for area in net.areas() {
        let area_terms = terms.get(&area.id).ok_or_else(|| MarketError::UnknownArea(area.id.clone()))?;
        let r = engine.clear_area(net, &area.id, area_terms, &ClearOptions::default())?;
        deviations.insert(area.id.clone(), r.decision.max_deviation(&sol.decisions[&area.id]));
    }
    let max_deviation = deviations.values().copied().fold(0.0, f64::max);
    Ok(FixedPointReport { deviations, max_deviation, tol: FIXED_POINT_TOL, passes: max_deviation <= FIXED_POINT_TOL })
}

/// Worst violation of each constraint family of the joint problem at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResiduals {
    pub nodal: f64,
    pub generator_bounds: f64,
    pub ramp_bounds: f64,
    pub line_bounds: f64,
    pub aggregate: f64,
    pub tie_definition: f64,
    pub anti_symmetry: f64,
    pub tie_capacity: f64,
    pub slack: f64,
}

impl FeasibilityResiduals {
    pub fn max(&self) -> f64 {
        [
            self.nodal,
            self.generator_bounds,
            self.ramp_bounds,
            self.line_bounds,
            self.aggregate,
            self.tie_definition,
            self.anti_symmetry,
            self.tie_capacity,
            self.slack,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub residuals: FeasibilityResiduals,
    /// `capacity - |T_da + dT|` per tie (negative when exceeded).
    pub capacity_margin: BTreeMap<String, f64>,
    pub tol: f64,
    pub feasible: bool,
}

pub const FEASIBILITY_TOL: f64 = 1e-3;

/// Stacks the areas' last clearings into one point of the joint problem.
fn limit_point(net: &Network, state: &CouplingState, program: &QuadraticProgram) -> Option<DVector<f64>> {
    let vars = label_index(program.var_labels());
    let mut x = DVector::zeros(program.num_vars());
    for area in net.areas() {
        let d = &state.last.get(&area.id)?.decision;
        for (g, v) in &d.delta_p {
            x[vars[&format!("dP[{g}]")]] = *v;
        }
        for (b, v) in &d.theta {
            x[vars[&format!("theta[{b}]")]] = *v;
        }
        for (t, v) in &d.delta_t {
            x[vars[&dt_label(&area.id, t)]] = *v;
        }
    }
    Some(x)
}

/// Evaluates the joint problem's constraints at the areas' last clearings.
/// A state without clearings is reported infeasible with infinite residuals.
pub fn check_limit_feasibility(state: &CouplingState, net: &Network) -> Result<FeasibilityReport, BenchmarkError> {
    let program = assemble_centralized(net, &ClearingConfig::default())?;
    let Some(x) = limit_point(net, state, &program) else {
        let inf = f64::INFINITY;
        let residuals = FeasibilityResiduals {
            nodal: inf,
            generator_bounds: inf,
            ramp_bounds: inf,
            line_bounds: inf,
            aggregate: inf,
            tie_definition: inf,
            anti_symmetry: inf,
            tie_capacity: inf,
            slack: inf,
        };
        return Ok(FeasibilityReport {
            residuals,
            capacity_margin: BTreeMap::new(),
            tol: FEASIBILITY_TOL,
            feasible: false,
        });
    };

    let mut res = FeasibilityResiduals::default();
    let gx = program.g() * &x - program.h();
    for (label, v) in program.ineq_labels().iter().zip(gx.iter()) {
        let v = v.max(0.0);
        let slot = match label.split('[').next().unwrap_or_default() {
            "nodal" => &mut res.nodal,
            "pmin" | "pmax" => &mut res.generator_bounds,
            "ramp_down" | "ramp_up" => &mut res.ramp_bounds,
            "line_lower" | "line_upper" => &mut res.line_bounds,
            "aggregate" => &mut res.aggregate,
            _ => &mut res.tie_capacity,
        };
        *slot = slot.max(v);
    }
    let ax = program.a() * &x - program.b();
    for (label, v) in program.eq_labels().iter().zip(ax.iter()) {
        let slot = if label.starts_with("slack") { &mut res.slack } else { &mut res.tie_definition };
        *slot = slot.max(v.abs());
    }
    let mut capacity_margin = BTreeMap::new();
    for t in net.tie_lines() {
        let from = t.t_da + state.last[&t.from_area].decision.delta_t[&t.id];
        let to = -t.t_da + state.last[&t.to_area].decision.delta_t[&t.id];
        res.anti_symmetry = res.anti_symmetry.max((from + to).abs());
        if !t.is_open() {
            // the `to` orientation's capacity is checked separately from the row set
            res.tie_capacity = res.tie_capacity.max(to.abs() - t.capacity);
            capacity_margin.insert(t.id.clone(), t.capacity - from.abs().max(to.abs()));
        }
    }
    Ok(FeasibilityReport {
        feasible: res.max() <= FEASIBILITY_TOL,
        residuals: res,
        capacity_margin,
        tol: FEASIBILITY_TOL,
    })
}

/// A centralized primal-dual candidate built from the decentralized limit.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCandidate {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    /// Constructed capacity multipliers on the `from` orientation.
    pub tie_duals: BTreeMap<String, TieCapacityDuals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub residuals: KktResiduals,
    pub tie_duals: BTreeMap<String, TieCapacityDuals>,
    pub limit_cost: f64,
    pub central_cost: f64,
    pub objective_gap: f64,
    pub tol: f64,
    pub tol_objective: f64,
    pub passes: bool,
}

pub const KKT_TOL: f64 = 1e-3;
pub const OBJECTIVE_TOL: f64 = 1e-3;

/// Capacity multipliers recovered from a limiting capacity price: the
/// half-price goes to the bound the flow pushes against.
pub fn capacity_duals_from_price(mu: f64, delta_t: f64) -> TieCapacityDuals {
    let v = 0.5 * mu * sign0(delta_t);
    TieCapacityDuals { kappa: (-v).max(0.0), eta: v.max(0.0) }
}

/// Builds the centralized primal-dual candidate from the limit state.
///
/// Area duals carry over unchanged. Tie-definition multipliers are shifted
/// by the neighbour's willingness to pay (and, on the `to` orientation,
/// which has no capacity rows of its own, by the signed half capacity price)
/// so that each flow's stationarity is preserved.
pub fn kkt_candidate(state: &CouplingState, net: &Network, program: &QuadraticProgram) -> Option<KktCandidate> {
    let x = limit_point(net, state, program)?;
    let eqs = label_index(program.eq_labels());
    let ineqs = label_index(program.ineq_labels());
    let mut y = DVector::zeros(program.num_eq());
    let mut z = DVector::zeros(program.num_ineq());
    let mut tie_duals = BTreeMap::new();
    for area in net.areas() {
        let r = state.last.get(&area.id)?;
        let u = &r.duals;
        for (b, v) in &u.alpha {
            z[ineqs[&format!("nodal[{b}]")]] = *v;
        }
        for g in u.nu.keys() {
            z[ineqs[&format!("pmin[{g}]")]] = u.nu[g];
            z[ineqs[&format!("pmax[{g}]")]] = u.lambda[g];
            z[ineqs[&format!("ramp_down[{g}]")]] = u.psi[g];
            z[ineqs[&format!("ramp_up[{g}]")]] = u.varphi[g];
        }
        for l in u.kappa.keys() {
            z[ineqs[&format!("line_lower[{l}]")]] = u.kappa[l];
            z[ineqs[&format!("line_upper[{l}]")]] = u.eta[l];
        }
        z[ineqs[&format!("aggregate[{}]", area.id)]] = u.gamma;
        if let Some(row) = eqs.get(&format!("slack[{}]", net.slack().bus)) {
            if net.slack().area == area.id {
                // the area hosting the slack carries its multiplier as the
                // row after its tie rows
                let slack_y = slack_multiplier(net, state, &area.id)?;
                y[*row] = slack_y;
            }
        }
        for v in net.incident_ties(&area.id) {
            let neighbor = state.areas[v.other_area].ties[&v.tie.id].delta;
            let mu = state.mu[&v.tie.id];
            let dt = r.decision.delta_t[&v.tie.id];
            let shift = if v.is_from_side() || v.tie.is_open() { 0.0 } else { 0.5 * mu * sign0(dt) };
            y[eqs[&tie_row_label(&area.id, &v.tie.id)]] = u.xi[&v.tie.id] - neighbor + shift;
            if v.is_from_side() && !v.tie.is_open() {
                let d = capacity_duals_from_price(mu, dt);
                z[ineqs[&format!("cap_lower[{}]", v.tie.id)]] = d.kappa;
                z[ineqs[&format!("cap_upper[{}]", v.tie.id)]] = d.eta;
                tie_duals.insert(v.tie.id.clone(), d);
            }
        }
    }
    Some(KktCandidate { x, y, z, tie_duals })
}

/// The slack-row multiplier of the area hosting the slack, recovered from
/// that bus's angle stationarity in the area's own program.
fn slack_multiplier(net: &Network, state: &CouplingState, area_id: &str) -> Option<f64> {
    let engine_terms = state.terms_for(net, area_id);
    let req = stochastic::area_requirement(net, area_id).ok()?;
    let config = ClearingConfig::default();
    let (program, map) =
        crate::market::assemble(net, area_id, &engine_terms, &req, &config, &ClearOptions::default()).ok()?;
    let r = state.last.get(area_id)?;
    let row = map.eq_slack()?;
    // x, y, z of the area program at the stored clearing
    let mut x = DVector::zeros(program.num_vars());
    let mut y = DVector::zeros(program.num_eq());
    let mut z = DVector::zeros(program.num_ineq());
    for (gi, g) in map.generators.iter().enumerate() {
        x[map.dp(gi)] = r.decision.delta_p[g];
        z[map.row_gen_lower(gi)] = r.duals.nu[g];
        z[map.row_gen_upper(gi)] = r.duals.lambda[g];
        z[map.row_ramp_lower(gi)] = r.duals.psi[g];
        z[map.row_ramp_upper(gi)] = r.duals.varphi[g];
    }
    for (ti, t) in map.ties.iter().enumerate() {
        let (p, m) = AreaDecision::split(r.decision.delta_t[t]);
        x[map.dt_plus(ti)] = p;
        x[map.dt_minus(ti)] = m;
        y[map.eq_tie(ti)] = r.duals.xi[t];
    }
    for (bi, b) in map.buses.iter().enumerate() {
        x[map.theta(bi)] = r.decision.theta[b];
        z[map.row_nodal(bi)] = r.duals.alpha[b];
    }
    for (li, l) in map.lines.iter().enumerate() {
        z[map.row_line_lower(li)] = r.duals.kappa[l];
        z[map.row_line_upper(li)] = r.duals.eta[l];
    }
    z[map.row_aggregate()] = r.duals.gamma;
    // with the slack multiplier at zero, the stationarity residual of the
    // slack angle is exactly minus that multiplier
    let grad = program.q() * &x + program.c() + program.a().tr_mul(&y) + program.g().tr_mul(&z);
    let col = map.theta(map.bus_pos[&net.slack().bus]);
    debug_assert_eq!(program.a()[(row, col)], 1.0);
    Some(-grad[col])
}

/// Checks that the decentralized limit, completed with capacity multipliers
/// recovered from the limiting prices, solves the joint problem.
pub fn verify_kkt_equivalence(
    state: &CouplingState,
    net: &Network,
    central: &CentralSolution,
    tol: f64,
    tol_objective: f64,
) -> Result<KktReport, BenchmarkError> {
    let cand = kkt_candidate(state, net, &central.program)
        .ok_or_else(|| BenchmarkError::Model("state carries no clearing results".into()))?;
    let residuals = qp::kkt_residuals(&central.program, &cand.x, &cand.y, &cand.z);
    let limit_cost = generation_cost(net, state.last.values().map(|r| &r.decision));
    let objective_gap = (limit_cost - central.objective).abs() / (1.0 + central.objective.abs());
    Ok(KktReport {
        passes: residuals.max() <= tol && objective_gap <= tol_objective,
        residuals,
        tie_duals: cand.tie_duals,
        limit_cost,
        central_cost: central.objective,
        objective_gap,
        tol,
        tol_objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyGap {
    /// `(cost at limit - V*) / (1 + |V*|)`.
    pub objective_gap: f64,
    /// Max-norm difference of tie flows over both orientations, MW.
    pub flow_deviation: f64,
}

/// Compares per-area decisions against the joint optimum.
pub fn efficiency_gap<'a>(
    net: &Network,
    limit: impl IntoIterator<Item = (&'a String, &'a AreaDecision)>,
    central: &CentralSolution,
) -> EfficiencyGap {
    let mut cost = 0.0;
    let mut flow_deviation: f64 = 0.0;
    for (area, d) in limit {
        cost += generation_cost(net, [d]);
        for (t, dt) in &d.delta_t {
            let c = central.decisions.get(area).and_then(|c| c.delta_t.get(t)).copied().unwrap_or(f64::NAN);
            flow_deviation = flow_deviation.max((dt - c).abs());
        }
    }
    EfficiencyGap { objective_gap: (cost - central.objective) / (1.0 + central.objective.abs()), flow_deviation }
}

/// Decentralized-versus-centralized comparison written by the `compare` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub objective_gap: f64,
    pub flow_deviation: f64,
    pub kkt_residuals: KktResiduals,
    pub feasibility_residuals: FeasibilityResiduals,
    pub nash_gaps: BTreeMap<String, f64>,
}

/// Runs every limit check against a solved benchmark.
pub fn compare(
    state: &CouplingState,
    net: &Network,
    central: &CentralSolution,
    config: &ClearingConfig,
) -> Result<ComparisonReport, BenchmarkError> {
    let gap = efficiency_gap(net, state.last.iter().map(|(a, r)| (a, &r.decision)), central);
    let kkt = verify_kkt_equivalence(state, net, central, KKT_TOL, OBJECTIVE_TOL)?;
    let feas = check_limit_feasibility(state, net)?;
    let nash = verify_nash(state, net, config, 1e-4)?;
    Ok(ComparisonReport {
        objective_gap: gap.objective_gap,
        flow_deviation: gap.flow_deviation,
        kkt_residuals: kkt.residuals,
        feasibility_residuals: feas.residuals,
        nash_gaps: nash.areas.into_iter().map(|a| (a.area, a.gap)).collect(),
    })
}
