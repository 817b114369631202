//! Round-based coupling of independently cleared areas.
//!
//! Every round each area broadcasts, per incident tie, its flow adjustment,
//! its voltage angle at its end of the tie and its willingness to pay. Each
//! area then clears against its neighbours' previous broadcasts, blends the
//! fresh values into its state with a diminishing step `rho_k`, and the tie
//! capacity prices move on a faster, constant-step time scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Network;
use crate::market::{
    ChanceConstrainedClearing, ClearOptions, ClearingConfig, ClearingEngine, ClearingResult, MarketError, TermsOfTrade,
    TieTerms,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("invalid mechanism configuration: {0}")]
    Config(String),
    #[error("round {round}: {source}")]
    Area { round: usize, source: MarketError },
    #[error("shape mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("trace has {0} records, at least 2 are needed")]
    ShortTrace(usize),
    #[error(transparent)]
    Wire(#[from] WireError),
}

impl CouplingError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, CouplingError::Area { source, .. } if source.is_infeasible())
    }
}

// ---------------------------------------------------------------------------
// step sizes and updates

/// `rho_k = rho0 / (k + k0)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub rho0: f64,
    pub k0: f64,
    pub p: f64,
}

impl Default for RhoSchedule {
    fn default() -> Self {
        Self { rho0: 1.0, k0: 0.0, p: 0.51 }
    }
}

pub fn step_rho(k: usize, schedule: &RhoSchedule) -> f64 {
    schedule.rho0 / (k as f64 + schedule.k0).powf(schedule.p)
}

/// Componentwise `(1 - rho) prev + rho fresh`.
pub fn inertial_update(prev: &[f64], fresh: &[f64], rho: f64) -> Result<Vec<f64>, CouplingError> {
    if prev.len() != fresh.len() {
        return Err(CouplingError::Shape(prev.len(), fresh.len()));
    }
    Ok(prev.iter().zip(fresh).map(|(p, f)| (1.0 - rho) * p + rho * f).collect())
}

/// Projected step on a tie's capacity price.
pub fn update_capacity_price(mu_prev: f64, dt_a: f64, dt_b: f64, t_da: f64, capacity: f64, beta: f64) -> f64 {
    (mu_prev + beta * ((dt_a.abs() + dt_b.abs()) / 2.0 + t_da.abs() - capacity)).max(0.0)
}

/// `mu * ((|dT_a| + |dT_b|)/2 + |T_da| - T_max)`, zero at a complementary limit.
pub fn capacity_slackness(mu: f64, dt_a: f64, dt_b: f64, t_da: f64, capacity: f64) -> f64 {
    mu * ((dt_a.abs() + dt_b.abs()) / 2.0 + t_da.abs() - capacity)
}

// ---------------------------------------------------------------------------
// configuration and state

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub max_rounds: usize,
    pub rho: RhoSchedule,
    pub beta: f64,
    /// Rounds stop once `|x^k - x^(k-1)|_inf` stays below this for
    /// `stable_rounds` consecutive rounds.
    pub tol: f64,
    pub stable_rounds: usize,
    pub clearing: ClearingConfig,
    /// Clear areas concurrently within a round.
    pub parallel: bool,
    /// Start from one clearing round against zero terms.
    pub warm_start: bool,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5000,
            rho: RhoSchedule::default(),
            beta: 0.1,
            tol: 1e-6,
            stable_rounds: 5,
            clearing: ClearingConfig::default(),
            parallel: true,
            warm_start: false,
        }
    }
}

impl MechanismConfig {
    pub fn check(&self) -> Result<(), CouplingError> {
        let r = &self.rho;
        if !(r.p > 0.5 && r.p <= 1.0) {
            return Err(CouplingError::Config(format!("rho exponent must lie in (0.5, 1], got {}", r.p)));
        }
        if !(r.rho0 > 0.0) || !(r.k0 >= 0.0) || r.rho0 > (1.0 + r.k0).powf(r.p) {
            return Err(CouplingError::Config(format!(
                "rho schedule must satisfy 0 < rho_k <= 1 for k >= 1 (rho0 = {}, k0 = {})",
                r.rho0, r.k0
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(CouplingError::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.tol > 0.0) {
            return Err(CouplingError::Config("convergence tolerance must be > 0".into()));
        }
        if self.max_rounds == 0 || self.stable_rounds == 0 {
            return Err(CouplingError::Config("max_rounds and stable_rounds must be positive".into()));
        }
        Ok(())
    }
}

/// What an area broadcasts about one tie.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TieBroadcast {
    /// Flow adjustment in the area's own orientation, MW.
    pub delta_t: f64,
    /// Angle at the area's end of the tie, rad.
    pub theta: f64,
    /// Willingness to pay, USD/MWh.
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AreaState {
    pub ties: BTreeMap<String, TieBroadcast>,
}

impl AreaState {
    /// Flattened `(dT, theta, delta)` per tie in id order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.ties.values().flat_map(|t| [t.delta_t, t.theta, t.delta]).collect()
    }

    fn with_values(&self, v: &[f64]) -> Self {
        Self {
            ties: self
                .ties
                .keys()
                .zip(v.chunks(3))
                .map(|(id, c)| (id.clone(), TieBroadcast { delta_t: c[0], theta: c[1], delta: c[2] }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingState {
    pub k: usize,
    pub areas: BTreeMap<String, AreaState>,
    pub mu: BTreeMap<String, f64>,
    pub rho: RhoSchedule,
    pub beta: f64,
    /// Last clearing of every area.
    pub last: BTreeMap<String, ClearingResult>,
    pub converged: bool,
}

impl CouplingState {
    /// `x = 0`, `mu = 0`.
    pub fn initial(net: &Network, config: &MechanismConfig) -> Self {
        let areas = net
            .areas()
            .iter()
            .map(|a| {
                let ties = a.ties.iter().map(|t| (t.clone(), TieBroadcast::default())).collect();
                (a.id.clone(), AreaState { ties })
            })
            .collect();
        Self {
            k: 0,
            areas,
            mu: net.tie_lines().iter().map(|t| (t.id.clone(), 0.0)).collect(),
            rho: config.rho,
            beta: config.beta,
            last: BTreeMap::new(),
            converged: false,
        }
    }

    /// Terms `area_id` faces given its neighbours' current broadcasts.
    pub fn terms_for(&self, net: &Network, area_id: &str) -> TermsOfTrade {
        let ties = net
            .incident_ties(area_id)
            .iter()
            .map(|v| {
                let other = &self.areas[v.other_area].ties[&v.tie.id];
                let terms = TieTerms {
                    neighbor_delta: other.delta,
                    neighbor_angle: other.theta,
                    capacity_price: self.mu[&v.tie.id],
                };
                (v.tie.id.clone(), terms)
            })
            .collect();
        TermsOfTrade { ties }
    }

    /// Max-norm distance between the broadcast variables of two states.
    pub fn distance(&self, other: &CouplingState) -> f64 {
        self.areas
            .iter()
            .flat_map(|(id, a)| {
                let b = other.areas[id].to_vec();
                a.to_vec().into_iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Shifts `area_id`'s flow on `tie_id` by `mw`, moving its boundary angle
    /// so that the flow definition still holds.
    pub fn perturb_tie_flow(&mut self, net: &Network, area_id: &str, tie_id: &str, mw: f64) {
        let x = net.tie(tie_id).map_or(0.0, |t| t.reactance);
        if let Some(t) = self.areas.get_mut(area_id).and_then(|a| a.ties.get_mut(tie_id)) {
            t.delta_t += mw;
            t.theta += x * mw;
        }
    }
}

// ---------------------------------------------------------------------------
// exchange messages

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("frame shorter than its 4-byte length prefix")]
    Truncated,
    #[error("length prefix says {declared} bytes but {actual} follow")]
    Length { declared: usize, actual: usize },
    #[error("malformed message payload: {0}")]
    Malformed(String),
    #[error("stale message: expected round {expected}, got {got}")]
    Stale { expected: u64, got: u64 },
    #[error("cannot encode non-finite value in field `{0}`")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieMessage {
    pub id: String,
    pub delta_t_mw: f64,
    pub theta_rad: f64,
    pub delta_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeMessage {
    pub sender: String,
    pub round: u64,
    pub ties: Vec<TieMessage>,
}

impl ExchangeMessage {
    pub fn from_state(sender: &str, round: u64, state: &AreaState) -> Self {
        Self {
            sender: sender.to_string(),
            round,
            ties: state
                .ties
                .iter()
                .map(|(id, t)| TieMessage {
                    id: id.clone(),
                    delta_t_mw: t.delta_t,
                    theta_rad: t.theta,
                    delta_price: t.delta,
                })
                .collect(),
        }
    }

    pub fn to_area_state(&self) -> AreaState {
        AreaState {
            ties: self
                .ties
                .iter()
                .map(|t| {
                    let b = TieBroadcast { delta_t: t.delta_t_mw, theta: t.theta_rad, delta: t.delta_price };
                    (t.id.clone(), b)
                })
                .collect(),
        }
    }
}

fn push_number(out: &mut String, field: &'static str, v: f64) -> Result<(), WireError> {
    if !v.is_finite() {
        return Err(WireError::NonFinite(field));
    }
    // 17 significant digits reproduce every double exactly
    let _ = write!(out, "{v:.16e}");
    Ok(())
}

/// Frames a message as a 4-byte big-endian length followed by a JSON body
/// with a fixed key order.
pub fn encode_message(msg: &ExchangeMessage) -> Result<Vec<u8>, WireError> {
    let quote = |s: &str| serde_json::to_string(s).expect("strings always serialize");
    let mut body = String::new();
    let _ = write!(body, "{{\"sender\":{},\"round\":{},\"ties\":[", quote(&msg.sender), msg.round);
    for (i, t) in msg.ties.iter().enumerate() {
        if i > 0 {
            body.push(',');
        }
        let _ = write!(body, "{{\"id\":{},\"delta_t_mw\":", quote(&t.id));
        push_number(&mut body, "delta_t_mw", t.delta_t_mw)?;
        body.push_str(",\"theta_rad\":");
        push_number(&mut body, "theta_rad", t.theta_rad)?;
        body.push_str(",\"delta_price\":");
        push_number(&mut body, "delta_price", t.delta_price)?;
        body.push('}');
    }
    body.push_str("]}");
    let len = u32::try_from(body.len()).map_err(|_| WireError::Malformed("message too large".into()))?;
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(body.as_bytes());
    Ok(frame)
}

/// Decodes a frame; with `expected_round` set, older or newer rounds are rejected.
pub fn decode_message(frame: &[u8], expected_round: Option<u64>) -> Result<ExchangeMessage, WireError> {
    let (head, body) = frame.split_at_checked(4).ok_or(WireError::Truncated)?;
    let declared = u32::from_be_bytes(head.try_into().expect("4-byte prefix")) as usize;
    if declared != body.len() {
        return Err(WireError::Length { declared, actual: body.len() });
    }
    let msg: ExchangeMessage = serde_json::from_slice(body).map_err(|e| WireError::Malformed(e.to_string()))?;
    if let Some(expected) = expected_round {
        if msg.round != expected {
            return Err(WireError::Stale { expected, got: msg.round });
        }
    }
    Ok(msg)
}

// ---------------------------------------------------------------------------
// trace

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieTrace {
    pub id: String,
    /// `T_da + dT` seen by the `from` area.
    pub flow_from: f64,
    /// `T_da + dT` seen by the `to` area (its own orientation).
    pub flow_to: f64,
    pub mu: f64,
    pub delta_from: f64,
    pub delta_to: f64,
    pub slackness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaTrace {
    pub id: String,
    pub gamma: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub ties: Vec<TieTrace>,
    pub areas: Vec<AreaTrace>,
    pub step_norm: f64,
    pub consensus_residual: f64,
    pub capacity_slackness: f64,
}

fn trace_record(net: &Network, state: &CouplingState, step_norm: f64) -> TraceRecord {
    let ties: Vec<TieTrace> = net
        .sorted_tie_ids()
        .into_iter()
        .map(|id| {
            let t = net.tie(&id).expect("sorted tie exists");
            let from = state.areas[&t.from_area].ties[&id];
            let to = state.areas[&t.to_area].ties[&id];
            let mu = state.mu[&id];
            TieTrace {
                flow_from: t.t_da + from.delta_t,
                flow_to: -t.t_da + to.delta_t,
                mu,
                delta_from: from.delta,
                delta_to: to.delta,
                slackness: capacity_slackness(mu, from.delta_t, to.delta_t, t.t_da, t.capacity),
                id,
            }
        })
        .collect();
    let areas = net
        .sorted_area_ids()
        .into_iter()
        .map(|id| {
            let last = state.last.get(&id);
            AreaTrace { gamma: last.map_or(0.0, |r| r.duals.gamma), objective: last.map_or(0.0, |r| r.objective), id }
        })
        .collect();
    TraceRecord {
        k: state.k,
        consensus_residual: ties.iter().map(|t| (t.flow_from + t.flow_to).abs()).fold(0.0, f64::max),
        capacity_slackness: ties.iter().map(|t| t.slackness.abs()).fold(0.0, f64::max),
        ties,
        areas,
        step_norm,
    }
}

/// Writes the trace as CSV with a stable column order.
pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = trace.first() else {
        return w.flush().map_err(Into::into);
    };
    let mut header = vec!["k".to_string()];
    for t in &first.ties {
        for col in ["flow_from", "flow_to", "mu", "delta_from", "delta_to"] {
            header.push(format!("{}.{col}", t.id));
        }
    }
    for a in &first.areas {
        header.push(format!("{}.gamma", a.id));
        header.push(format!("{}.objective", a.id));
    }
    header.extend(["step_norm", "consensus_residual", "capacity_slackness"].map(String::from));
    w.write_record(&header)?;
    for r in trace {
        let mut row = vec![r.k.to_string()];
        for t in &r.ties {
            row.extend([t.flow_from, t.flow_to, t.mu, t.delta_from, t.delta_to].map(|v| v.to_string()));
        }
        for a in &r.areas {
            row.push(a.gamma.to_string());
            row.push(a.objective.to_string());
        }
        row.extend([r.step_norm, r.consensus_residual, r.capacity_slackness].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_csv_string(trace: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

// ---------------------------------------------------------------------------
// mechanism

fn clear_all(
    net: &Network,
    engine: &dyn ClearingEngine,
    terms: &BTreeMap<String, TermsOfTrade>,
    parallel: bool,
    round: usize,
) -> Result<BTreeMap<String, ClearingResult>, CouplingError> {
    let clear_one = |(id, t): (&String, &TermsOfTrade)| {
        engine
            .clear_area(net, id, t, &ClearOptions::default())
            .map(|r| (id.clone(), r))
            .map_err(|source| CouplingError::Area { round, source })
    };
    // results are collected in key order either way, so the reduction is deterministic
    if parallel {
        terms.par_iter().map(clear_one).collect()
    } else {
        terms.iter().map(clear_one).collect()
    }
}

fn fresh_broadcast(net: &Network, r: &ClearingResult) -> AreaState {
    let ties = net
        .incident_ties(&r.area_id)
        .iter()
        .map(|v| {
            let id = &v.tie.id;
            let b = TieBroadcast {
                delta_t: r.decision.delta_t[id],
                theta: r.decision.theta[v.own_bus],
                delta: r.willingness_to_pay[id],
            };
            (id.clone(), b)
        })
        .collect();
    AreaState { ties }
}

/// Passes every area's broadcast through the wire format, as a networked
/// deployment would, and returns what the receivers see.
fn exchange(state: &CouplingState) -> Result<BTreeMap<String, AreaState>, CouplingError> {
    let round = state.k as u64;
    state
        .areas
        .iter()
        .map(|(id, a)| {
            let frame = encode_message(&ExchangeMessage::from_state(id, round, a))?;
            let msg = decode_message(&frame, Some(round))?;
            Ok((msg.sender.clone(), msg.to_area_state()))
        })
        .collect()
}

/// Mechanism driver holding the clearing engine.
pub struct Mechanism<'a> {
    pub net: &'a Network,
    pub config: MechanismConfig,
    engine: Box<dyn ClearingEngine + 'a>,
}

impl<'a> Mechanism<'a> {
    pub fn new(net: &'a Network, config: MechanismConfig) -> Result<Self, CouplingError> {
        config.check()?;
        let engine = Box::new(ChanceConstrainedClearing { config: config.clearing });
        Ok(Self { net, config, engine })
    }

    pub fn with_engine(
        net: &'a Network,
        config: MechanismConfig,
        engine: Box<dyn ClearingEngine + 'a>,
    ) -> Result<Self, CouplingError> {
        config.check()?;
        Ok(Self { net, config, engine })
    }

    pub fn initial_state(&self) -> Result<CouplingState, CouplingError> {
        let mut state = CouplingState::initial(self.net, &self.config);
        if self.config.warm_start {
            let terms = self.net.areas().iter().map(|a| (a.id.clone(), TermsOfTrade::zero(self.net, &a.id))).collect();
            let results = clear_all(self.net, self.engine.as_ref(), &terms, self.config.parallel, 0)?;
            for (id, r) in &results {
                state.areas.insert(id.clone(), fresh_broadcast(self.net, r));
            }
            state.last = results;
        }
        Ok(state)
    }

    /// Executes one round and returns its trace record.
    pub fn step(&self, state: &mut CouplingState) -> Result<TraceRecord, CouplingError> {
        let net = self.net;
        let received = CouplingState { areas: exchange(state)?, ..state.clone() };
        state.k += 1;
        let k = state.k;
        let terms: BTreeMap<String, TermsOfTrade> =
            net.areas().iter().map(|a| (a.id.clone(), received.terms_for(net, &a.id))).collect();
        let results = clear_all(net, self.engine.as_ref(), &terms, self.config.parallel, k)?;

        let rho = step_rho(k, &self.config.rho);
        let prev = state.clone();
        for (id, r) in &results {
            let area = &state.areas[id];
            let fresh = fresh_broadcast(net, r).to_vec();
            let next = inertial_update(&area.to_vec(), &fresh, rho)?;
            let updated = area.with_values(&next);
            state.areas.insert(id.clone(), updated);
        }
        for t in net.tie_lines() {
            let mu = if t.is_open() {
                0.0
            } else {
                let a = state.areas[&t.from_area].ties[&t.id].delta_t;
                let b = state.areas[&t.to_area].ties[&t.id].delta_t;
                update_capacity_price(state.mu[&t.id], a, b, t.t_da, t.capacity, self.config.beta)
            };
            state.mu.insert(t.id.clone(), mu);
        }
        state.last = results;
        Ok(trace_record(net, state, state.distance(&prev)))
    }

    /// Runs rounds until convergence or the round limit.
    pub fn run(&self) -> Result<(CouplingState, Vec<TraceRecord>), CouplingError> {
        let mut state = self.initial_state()?;
        let mut trace = Vec::new();
        let mut stable = 0;
        while state.k < self.config.max_rounds {
            let rec = self.step(&mut state)?;
            stable = if rec.step_norm < self.config.tol { stable + 1 } else { 0 };
            log::debug!(
                "round {}: step {:e}, consensus {:e}, slackness {:e}",
                rec.k,
                rec.step_norm,
                rec.consensus_residual,
                rec.capacity_slackness
            );
            trace.push(rec);
            if stable >= self.config.stable_rounds {
                state.converged = true;
                break;
            }
        }
        log::info!("mechanism stopped after {} rounds (converged: {})", state.k, state.converged);
        Ok((state, trace))
    }
}

/// Runs the mechanism with the chance-constrained clearing.
pub fn run(net: &Network, config: &MechanismConfig) -> Result<(CouplingState, Vec<TraceRecord>), CouplingError> {
    Mechanism::new(net, *config)?.run()
}

// ---------------------------------------------------------------------------
// diagnostics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMetrics {
    pub rounds: usize,
    pub step_norm: f64,
    pub consensus_residual: BTreeMap<String, f64>,
    pub capacity_slackness: BTreeMap<String, f64>,
    pub max_consensus_residual: f64,
    pub max_capacity_slackness: f64,
}

pub fn convergence_metrics(trace: &[TraceRecord]) -> Result<ConvergenceMetrics, CouplingError> {
    if trace.len() < 2 {
        return Err(CouplingError::ShortTrace(trace.len()));
    }
    let last = trace.last().expect("non-empty");
    Ok(ConvergenceMetrics {
        rounds: last.k,
        step_norm: last.step_norm,
        consensus_residual: last.ties.iter().map(|t| (t.id.clone(), (t.flow_from + t.flow_to).abs())).collect(),
        capacity_slackness: last.ties.iter().map(|t| (t.id.clone(), t.slackness)).collect(),
        max_consensus_residual: last.consensus_residual,
        max_capacity_slackness: last.capacity_slackness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaNashGap {
    pub area: String,
    /// Objective with the area's boundary angles held at the state.
    pub limit_objective: f64,
    /// Objective of the unrestricted best response.
    pub best_response_objective: f64,
    pub gap: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub areas: Vec<AreaNashGap>,
    pub is_equilibrium: bool,
}

/// Checks that no area can improve its objective by deviating alone while
/// its neighbours' broadcasts and the capacity prices stay frozen. An area
/// passes when its gap is at most `tol * (1 + |V_a|)`.
pub fn verify_nash(
    state: &CouplingState,
    net: &Network,
    config: &ClearingConfig,
    tol: f64,
) -> Result<NashReport, MarketError> {
    let engine = ChanceConstrainedClearing { config: *config };
    let mut areas = Vec::new();
    for id in net.sorted_area_ids() {
        let terms = state.terms_for(net, &id);
        let best = engine.clear_area(net, &id, &terms, &ClearOptions::default())?;
        let fixed_angles = net
            .incident_ties(&id)
            .iter()
            .filter(|v| !v.tie.is_open())
            .map(|v| (v.own_bus.to_string(), state.areas[&id].ties[&v.tie.id].theta))
            .collect::<BTreeMap<_, _>>();
        let limit = match engine.clear_area(net, &id, &terms, &ClearOptions { fixed_angles, ..Default::default() }) {
            Ok(r) => r.objective,
            Err(e) if e.is_infeasible() => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let gap = limit - best.objective;
        areas.push(AreaNashGap {
            passes: gap <= tol * (1.0 + best.objective.abs()),
            area: id,
            limit_objective: limit,
            best_response_objective: best.objective,
            gap,
        });
    }
    Ok(NashReport { is_equilibrium: areas.iter().all(|a| a.passes), areas })
}
