//! Multi-area network data: case files, structural validation and scenario
//! modifiers.
//!
//! Every tie-line is stored once with a canonical `from -> to` direction. The
//! `from_area` sees the flow as written, the `to_area` sees the reverse
//! orientation (flow and day-ahead schedule negated); [`TieView`] hands each
//! area its own orientation.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("malformed case document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("case failed validation:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("scenario references unknown tie-line `{0}`")]
    UnknownTie(String),
    #[error("invalid scenario modifier: {0}")]
    Scenario(String),
    #[error("unknown bundled case `{0}` (available: toy2, toy2-congested, tri3)")]
    UnknownCase(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  {}: {}", v.path, v.message)).collect::<Vec<_>>().join("\n")
}

/// One violated invariant, addressed by a JSON-style path into the case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub area_id: String,
    pub mean_net_demand: f64,
    pub demand_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: String,
    pub cost_quadratic: f64,
    pub cost_linear: f64,
    pub cost_constant: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Lower bound on the intraday adjustment (usually negative).
    pub ramp_down: f64,
    /// Upper bound on the intraday adjustment.
    pub ramp_up: f64,
    pub p_da: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        0.5 * self.cost_quadratic * p * p + self.cost_linear * p + self.cost_constant
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        self.cost_quadratic * p + self.cost_linear
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalLine {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub reactance: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieLine {
    pub id: String,
    pub from_area: String,
    pub from_bus: String,
    pub to_area: String,
    pub to_bus: String,
    pub reactance: f64,
    pub capacity: f64,
    /// Day-ahead scheduled flow, signed from -> to.
    pub t_da: f64,
}

impl TieLine {
    /// A tie without transfer capacity is treated as open: no flow and no
    /// angle coupling across it.
    pub fn is_open(&self) -> bool {
        self.capacity <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub id: String,
    pub buses: Vec<String>,
    pub generators: Vec<String>,
    pub lines: Vec<String>,
    pub ties: Vec<String>,
    pub confidence_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slack {
    pub area: String,
    pub bus: String,
}

/// A tie-line as seen from one of its endpoint areas.
#[derive(Debug, Clone, PartialEq)]
pub struct TieView<'a> {
    pub tie: &'a TieLine,
    pub own_bus: &'a str,
    pub other_area: &'a str,
    pub other_bus: &'a str,
    /// +1 for the `from` side, -1 for the `to` side.
    pub sign: f64,
}

impl TieView<'_> {
    /// Day-ahead flow in this area's orientation (positive = export).
    pub fn t_da(&self) -> f64 {
        self.sign * self.tie.t_da
    }

    pub fn is_from_side(&self) -> bool {
        self.sign > 0.0
    }
}

/// Immutable multi-area network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    areas: Vec<Area>,
    buses: Vec<Bus>,
    generators: Vec<Generator>,
    lines: Vec<InternalLine>,
    tie_lines: Vec<TieLine>,
    slack: Slack,
    area_index: HashMap<String, usize>,
    bus_index: HashMap<String, usize>,
    gen_index: HashMap<String, usize>,
    line_index: HashMap<String, usize>,
    tie_index: HashMap<String, usize>,
}

// ---------------------------------------------------------------------------
// case file document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub areas: Vec<AreaRecord>,
    pub buses: Vec<BusRecord>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub lines: Vec<InternalLine>,
    #[serde(default)]
    pub tie_lines: Vec<TieLine>,
    pub demand: DemandRecord,
    pub confidence: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<Slack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaRecord {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    pub area: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandRecord {
    /// Coefficient of variation applied to buses without an explicit `std`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<f64>,
    pub buses: Vec<BusDemand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDemand {
    pub bus: String,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

fn index_of<T>(items: &[T], key: impl Fn(&T) -> &str) -> HashMap<String, usize> {
    let mut map = HashMap::new();
    for (i, item) in items.iter().enumerate() {
        map.entry(key(item).to_string()).or_insert(i);
    }
    map
}

impl Network {
    /// Builds a network from a parsed case without validating it.
    ///
    /// Dangling references are kept as-is so that [`validate`] can report
    /// them; use [`load_case`] for the checked path.
    pub fn from_case(case: CaseFile) -> Self {
        let mut demand: HashMap<&str, &BusDemand> = HashMap::new();
        for d in &case.demand.buses {
            demand.entry(d.bus.as_str()).or_insert(d);
        }
        let buses: Vec<Bus> = case
            .buses
            .iter()
            .map(|b| {
                let (mean, std) = match demand.get(b.id.as_str()) {
                    Some(d) => (d.mean, d.std.unwrap_or(case.demand.cov.unwrap_or(0.0) * d.mean)),
                    None => (0.0, 0.0),
                };
                Bus { id: b.id.clone(), area_id: b.area.clone(), mean_net_demand: mean, demand_std: std }
            })
            .collect();

        let bus_area: HashMap<&str, &str> = buses.iter().map(|b| (b.id.as_str(), b.area_id.as_str())).collect();
        let areas: Vec<Area> = case
            .areas
            .iter()
            .map(|a| {
                let id = a.id.as_str();
                let in_area = |bus: &str| bus_area.get(bus).is_some_and(|x| *x == id);
                Area {
                    id: a.id.clone(),
                    buses: buses.iter().filter(|b| b.area_id == id).map(|b| b.id.clone()).collect(),
                    generators: case.generators.iter().filter(|g| in_area(&g.bus)).map(|g| g.id.clone()).collect(),
                    lines: case
                        .lines
                        .iter()
                        .filter(|l| in_area(&l.from_bus) || in_area(&l.to_bus))
                        .map(|l| l.id.clone())
                        .collect(),
                    ties: case
                        .tie_lines
                        .iter()
                        .filter(|t| t.from_area == id || t.to_area == id)
                        .map(|t| t.id.clone())
                        .collect(),
                    confidence_tail: case.confidence.get(id).copied().unwrap_or(f64::NAN),
                }
            })
            .collect();

        let slack = case.slack.clone().unwrap_or_else(|| {
            let area = areas.first().map(|a| a.id.clone()).unwrap_or_default();
            let bus = areas.first().and_then(|a| a.buses.first().cloned()).unwrap_or_default();
            Slack { area, bus }
        });

        Self::assemble(areas, buses, case.generators, case.lines, case.tie_lines, slack)
    }

    fn assemble(
        areas: Vec<Area>,
        buses: Vec<Bus>,
        generators: Vec<Generator>,
        lines: Vec<InternalLine>,
        tie_lines: Vec<TieLine>,
        slack: Slack,
    ) -> Self {
        Self {
            area_index: index_of(&areas, |a| &a.id),
            bus_index: index_of(&buses, |b| &b.id),
            gen_index: index_of(&generators, |g| &g.id),
            line_index: index_of(&lines, |l| &l.id),
            tie_index: index_of(&tie_lines, |t| &t.id),
            areas,
            buses,
            generators,
            lines,
            tie_lines,
            slack,
        }
    }

    /// The case document that reproduces this network exactly.
    pub fn to_case(&self) -> CaseFile {
        CaseFile {
            areas: self.areas.iter().map(|a| AreaRecord { id: a.id.clone() }).collect(),
            buses: self.buses.iter().map(|b| BusRecord { id: b.id.clone(), area: b.area_id.clone() }).collect(),
            generators: self.generators.clone(),
            lines: self.lines.clone(),
            tie_lines: self.tie_lines.clone(),
            demand: DemandRecord {
                cov: None,
                buses: self
                    .buses
                    .iter()
                    .map(|b| BusDemand { bus: b.id.clone(), mean: b.mean_net_demand, std: Some(b.demand_std) })
                    .collect(),
            },
            confidence: self.areas.iter().map(|a| (a.id.clone(), a.confidence_tail)).collect(),
            slack: Some(self.slack.clone()),
        }
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn lines(&self) -> &[InternalLine] {
        &self.lines
    }

    pub fn tie_lines(&self) -> &[TieLine] {
        &self.tie_lines
    }

    pub fn slack(&self) -> &Slack {
        &self.slack
    }

    pub fn area(&self, id: &str) -> Option<&Area> {
        self.area_index.get(id).map(|i| &self.areas[*i])
    }

    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.bus_index.get(id).map(|i| &self.buses[*i])
    }

    pub fn generator(&self, id: &str) -> Option<&Generator> {
        self.gen_index.get(id).map(|i| &self.generators[*i])
    }

    pub fn line(&self, id: &str) -> Option<&InternalLine> {
        self.line_index.get(id).map(|i| &self.lines[*i])
    }

    pub fn tie(&self, id: &str) -> Option<&TieLine> {
        self.tie_index.get(id).map(|i| &self.tie_lines[*i])
    }

    /// Area ids in sorted order, the canonical iteration order for reports.
    pub fn sorted_area_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.areas.iter().map(|a| a.id.clone()).collect();
        ids.sort();
        ids
    }

    /// Tie-line ids in sorted order.
    pub fn sorted_tie_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.tie_lines.iter().map(|t| t.id.clone()).collect();
        ids.sort();
        ids
    }

    /// `area_id`'s view of a tie-line, or `None` if the area is not an endpoint.
    pub fn tie_view<'a>(&'a self, area_id: &str, tie_id: &str) -> Option<TieView<'a>> {
        let tie = self.tie(tie_id)?;
        if tie.from_area == area_id {
            Some(TieView { tie, own_bus: &tie.from_bus, other_area: &tie.to_area, other_bus: &tie.to_bus, sign: 1.0 })
        } else if tie.to_area == area_id {
            Some(TieView {
                tie,
                own_bus: &tie.to_bus,
                other_area: &tie.from_area,
                other_bus: &tie.from_bus,
                sign: -1.0,
            })
        } else {
            None
        }
    }

    /// Views of every tie incident to `area_id`, in the area's stored order.
    pub fn incident_ties<'a>(&'a self, area_id: &str) -> Vec<TieView<'a>> {
        self.area(area_id)
            .map(|a| a.ties.iter().filter_map(|t| self.tie_view(area_id, t)).collect())
            .unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// loading and saving

/// Parses and validates a case document.
pub fn load_case(text: &str) -> Result<Network, GridError> {
    let case: CaseFile = serde_json::from_str(text)?;
    let net = Network::from_case(case);
    let violations = validate(&net);
    if violations.is_empty() {
        Ok(net)
    } else {
        Err(GridError::Invalid(violations))
    }
}

/// Serializes a network so that [`load_case`] reproduces it field for field.
pub fn save_case(net: &Network) -> String {
    serde_json::to_string_pretty(&net.to_case()).expect("case documents always serialize")
}

pub const BUNDLED_CASES: [&str; 3] = ["toy2", "toy2-congested", "tri3"];

pub fn bundled_case_text(name: &str) -> Option<&'static str> {
    match name {
        "toy2" => Some(include_str!("../cases/toy2.json")),
        "toy2-congested" => Some(include_str!("../cases/toy2-congested.json")),
        "tri3" => Some(include_str!("../cases/tri3.json")),
        _ => None,
    }
}

pub fn bundled_case(name: &str) -> Result<Network, GridError> {
    load_case(bundled_case_text(name).ok_or_else(|| GridError::UnknownCase(name.to_string()))?)
}

/// Loads a bundled case by name, or otherwise reads the given path.
pub fn resolve_case(source: &str) -> Result<Network, GridError> {
    if let Some(text) = bundled_case_text(source) {
        return load_case(text);
    }
    let text = std::fs::read_to_string(source)
        .map_err(|source_err| GridError::Io { path: source.to_string(), source: source_err })?;
    load_case(&text)
}

// ---------------------------------------------------------------------------
// validation

/// Structural invariants only; see [`validate`] for the full check.
pub fn structural_violations(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut dup = |kind: &str, ids: Vec<&str>| {
        let mut seen = BTreeSet::new();
        for (i, id) in ids.into_iter().enumerate() {
            if !seen.insert(id) {
                out.push(Violation::new(format!("{kind}[{i}].id"), format!("duplicate id `{id}`")));
            }
        }
    };
    dup("areas", net.areas.iter().map(|a| a.id.as_str()).collect());
    dup("buses", net.buses.iter().map(|b| b.id.as_str()).collect());
    dup("generators", net.generators.iter().map(|g| g.id.as_str()).collect());
    dup("lines", net.lines.iter().map(|l| l.id.as_str()).collect());
    dup("tie_lines", net.tie_lines.iter().map(|t| t.id.as_str()).collect());

    if net.areas.is_empty() {
        out.push(Violation::new("areas", "network has no areas"));
    }

    for (i, b) in net.buses.iter().enumerate() {
        if net.area(&b.area_id).is_none() {
            out.push(Violation::new(format!("buses[{i}].area"), format!("unknown area `{}`", b.area_id)));
        }
        if !(b.demand_std >= 0.0) {
            out.push(Violation::new(
                format!("demand.buses[{}]", b.id),
                format!("demand std must be >= 0, got {}", b.demand_std),
            ));
        }
        if !b.mean_net_demand.is_finite() {
            out.push(Violation::new(format!("demand.buses[{}]", b.id), "mean demand must be finite"));
        }
    }

    for (i, g) in net.generators.iter().enumerate() {
        let path = format!("generators[{i}]");
        if net.bus(&g.bus).is_none() {
            out.push(Violation::new(format!("{path}.bus"), format!("unknown bus `{}`", g.bus)));
        }
        if !(g.cost_quadratic > 0.0) {
            out.push(Violation::new(format!("{path}.cost_quadratic"), "cost must be strictly convex (> 0)"));
        }
        if !(g.p_min <= g.p_da && g.p_da <= g.p_max) {
            out.push(Violation::new(
                format!("{path}.p_da"),
                format!("need p_min <= p_da <= p_max, got {} <= {} <= {}", g.p_min, g.p_da, g.p_max),
            ));
        }
        if !(g.ramp_down <= g.ramp_up) {
            out.push(Violation::new(format!("{path}.ramp_down"), "ramp_down must not exceed ramp_up"));
        }
    }

    for (i, l) in net.lines.iter().enumerate() {
        let path = format!("lines[{i}]");
        let from = net.bus(&l.from_bus);
        let to = net.bus(&l.to_bus);
        if from.is_none() {
            out.push(Violation::new(format!("{path}.from_bus"), format!("unknown bus `{}`", l.from_bus)));
        }
        if to.is_none() {
            out.push(Violation::new(format!("{path}.to_bus"), format!("unknown bus `{}`", l.to_bus)));
        }
        if let (Some(f), Some(t)) = (from, to) {
            if f.area_id != t.area_id {
                out.push(Violation::new(path.clone(), "internal line joins buses of different areas"));
            }
            if f.id == t.id {
                out.push(Violation::new(path.clone(), "internal line is a self-loop"));
            }
        }
        if !(l.reactance > 0.0) {
            out.push(Violation::new(format!("{path}.reactance"), "reactance must be > 0"));
        }
        if !(l.capacity > 0.0) {
            out.push(Violation::new(format!("{path}.capacity"), "capacity must be > 0"));
        }
    }

    for (i, t) in net.tie_lines.iter().enumerate() {
        let path = format!("tie_lines[{i}]");
        if t.from_area == t.to_area {
            out.push(Violation::new(
                path.clone(),
                format!("tie-line `{}` connects area `{}` to itself", t.id, t.from_area),
            ));
        }
        for (end, area, bus) in [("from", &t.from_area, &t.from_bus), ("to", &t.to_area, &t.to_bus)] {
            if net.area(area).is_none() {
                out.push(Violation::new(format!("{path}.{end}_area"), format!("unknown area `{area}`")));
            }
            match net.bus(bus) {
                None => out.push(Violation::new(format!("{path}.{end}_bus"), format!("unknown bus `{bus}`"))),
                Some(b) if &b.area_id != area => out
                    .push(Violation::new(format!("{path}.{end}_bus"), format!("bus `{bus}` is not in area `{area}`"))),
                _ => {}
            }
        }
        if !(t.reactance > 0.0) {
            out.push(Violation::new(
                format!("{path}.reactance"),
                format!("tie-line `{}` reactance must be > 0, got {}", t.id, t.reactance),
            ));
        }
        if !(t.capacity >= 0.0) {
            out.push(Violation::new(format!("{path}.capacity"), format!("tie-line `{}` capacity must be >= 0", t.id)));
        }
        if !(t.t_da.abs() <= t.capacity) {
            out.push(Violation::new(
                format!("{path}.t_da"),
                format!("tie-line `{}` schedule |{}| exceeds capacity {}", t.id, t.t_da, t.capacity),
            ));
        }
    }

    for a in &net.areas {
        let path = format!("areas[{}]", a.id);
        if !(a.confidence_tail > 0.0 && a.confidence_tail < 1.0) {
            out.push(Violation::new(
                format!("confidence.{}", a.id),
                format!("confidence tail must lie in (0, 1), got {}", a.confidence_tail),
            ));
        }
        if a.buses.is_empty() {
            out.push(Violation::new(path.clone(), "area has no buses"));
        }
        if a.generators.is_empty() {
            out.push(Violation::new(path.clone(), "area has no generators"));
        }
        if !internally_connected(net, a) {
            log::warn!("area `{}` has a disconnected internal graph", a.id);
        }
    }

    match net.bus(&net.slack.bus) {
        None => out.push(Violation::new("slack.bus", format!("unknown bus `{}`", net.slack.bus))),
        Some(b) if b.area_id != net.slack.area => {
            out.push(Violation::new("slack", format!("bus `{}` is not in area `{}`", b.id, net.slack.area)))
        }
        _ => {}
    }

    out
}

fn internally_connected(net: &Network, area: &Area) -> bool {
    let Some(start) = area.buses.first() else { return true };
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for l in area.lines.iter().filter_map(|l| net.line(l)) {
        adj.entry(&l.from_bus).or_default().push(&l.to_bus);
        adj.entry(&l.to_bus).or_default().push(&l.from_bus);
    }
    let mut seen = BTreeSet::from([start.as_str()]);
    let mut queue = VecDeque::from([start.as_str()]);
    while let Some(b) = queue.pop_front() {
        for n in adj.get(b).into_iter().flatten() {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == area.buses.len()
}

/// All violated invariants, including the per-area autarky probe: each area
/// must be able to clear on its own with its tie flows held at the day-ahead
/// schedule.
pub fn validate(net: &Network) -> Vec<Violation> {
    let mut out = structural_violations(net);
    if out.is_empty() {
        out.extend(crate::market::autarky_violations(net));
    }
    out
}

// ---------------------------------------------------------------------------
// scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioModifiers {
    pub generator_capacity_scale: f64,
    pub ramp_scale: f64,
    pub tie_capacity_overrides: BTreeMap<String, f64>,
    pub demand_cov_override: Option<f64>,
}

impl Default for ScenarioModifiers {
    fn default() -> Self {
        Self {
            generator_capacity_scale: 1.0,
            ramp_scale: 1.0,
            tie_capacity_overrides: BTreeMap::new(),
            demand_cov_override: None,
        }
    }
}

/// `(flag, description)` for every supported `key=value` modifier.
pub const SCENARIO_FLAGS: [(&str, &str); 4] = [
    ("generator_capacity_scale=<f>", "multiply every generator p_max by <f> (cost curves extrapolated)"),
    ("ramp_scale=<f>", "multiply every generator ramp bound by <f>"),
    ("tie_capacity.<tie-id>=<mw>", "override the capacity of one tie-line"),
    ("demand_cov=<f>", "recompute every bus demand std as <f> x mean"),
];

impl ScenarioModifiers {
    /// Applies one `key=value` modifier.
    pub fn set(&mut self, spec: &str) -> Result<(), GridError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| GridError::Scenario(format!("`{spec}` is not of the form key=value")))?;
        let num: f64 =
            value.trim().parse().map_err(|_| GridError::Scenario(format!("`{value}` is not a number in `{spec}`")))?;
        match key.trim() {
            "generator_capacity_scale" | "capacity_scale" => self.generator_capacity_scale = num,
            "ramp_scale" => self.ramp_scale = num,
            "demand_cov" => self.demand_cov_override = Some(num),
            k => match k.strip_prefix("tie_capacity.") {
                Some(id) if !id.is_empty() => {
                    self.tie_capacity_overrides.insert(id.to_string(), num);
                }
                _ => return Err(GridError::Scenario(format!("unknown modifier `{k}`"))),
            },
        }
        self.check()
    }

    pub fn parse_all<S: AsRef<str>>(specs: &[S]) -> Result<Self, GridError> {
        let mut mods = Self::default();
        for s in specs {
            mods.set(s.as_ref())?;
        }
        Ok(mods)
    }

    fn check(&self) -> Result<(), GridError> {
        let bad = |name: &str, v: f64| GridError::Scenario(format!("{name} must be > 0, got {v}"));
        if !(self.generator_capacity_scale > 0.0) {
            return Err(bad("generator_capacity_scale", self.generator_capacity_scale));
        }
        if !(self.ramp_scale > 0.0) {
            return Err(bad("ramp_scale", self.ramp_scale));
        }
        for (id, cap) in &self.tie_capacity_overrides {
            if !(*cap >= 0.0) {
                return Err(GridError::Scenario(format!("tie_capacity.{id} must be >= 0, got {cap}")));
            }
        }
        if let Some(cov) = self.demand_cov_override {
            if !(cov >= 0.0) {
                return Err(GridError::Scenario(format!("demand_cov must be >= 0, got {cov}")));
            }
        }
        Ok(())
    }
}

/// A new network with the modifiers applied; `net` itself is untouched.
pub fn apply_scenario(net: &Network, mods: &ScenarioModifiers) -> Result<Network, GridError> {
    mods.check()?;
    for id in mods.tie_capacity_overrides.keys() {
        if net.tie(id).is_none() {
            return Err(GridError::UnknownTie(id.clone()));
        }
    }
    let generators = net
        .generators
        .iter()
        .map(|g| Generator {
            p_max: g.p_max * mods.generator_capacity_scale,
            ramp_down: g.ramp_down * mods.ramp_scale,
            ramp_up: g.ramp_up * mods.ramp_scale,
            ..g.clone()
        })
        .collect();
    let tie_lines = net
        .tie_lines
        .iter()
        .map(|t| TieLine {
            capacity: mods.tie_capacity_overrides.get(&t.id).copied().unwrap_or(t.capacity),
            ..t.clone()
        })
        .collect();
    let buses = net
        .buses
        .iter()
        .map(|b| Bus {
            demand_std: mods.demand_cov_override.map_or(b.demand_std, |cov| cov * b.mean_net_demand),
            ..b.clone()
        })
        .collect();
    Ok(Network::assemble(net.areas.clone(), buses, generators, net.lines.clone(), tie_lines, net.slack.clone()))
}
