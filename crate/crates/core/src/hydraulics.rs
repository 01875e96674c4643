//! Quasi-static hydraulic simulator.
//!
//! Every timestep is an independent steady-state solve on the DAG: lateral
//! inflows accumulate downstream in topological order, outflow splits across
//! multiple children by Hazen-Williams conveyance, and leaks are extractions at
//! a junction. Depth follows a per-node rating curve `h = a·Q^0.6`; the
//! pressure channel is the hydraulic grade, built from outfall elevations
//! upward by adding Hazen-Williams losses along each conduit.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, NetworkError};

/// Default sampling interval: ten minutes.
pub const DEFAULT_DT_SECONDS: f64 = 600.0;

const HW_FACTOR: f64 = 10.67;
const HW_FLOW_EXPONENT: f64 = 1.852;
const HW_DIAMETER_EXPONENT: f64 = 2.63;
const RATING_EXPONENT: f64 = 0.6;

#[derive(Debug, Error)]
pub enum HydraulicsError {
    #[error("nonpositive {0} in head-loss evaluation")]
    Geometry(&'static str),
    #[error("negative flow {0} in head-loss evaluation")]
    NegativeFlow(f64),
    #[error("dry pipe at `{node}`: leak {leak} exceeds available inflow {available}")]
    DryPipe {
        node: String,
        leak: f64,
        available: f64,
    },
    #[error("expected {expected} per-node values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("negative demand {value} at `{node}`")]
    NegativeDemand { node: String, value: f64 },
    #[error("invalid leak scenario: {0}")]
    Scenario(String),
    #[error("simulation needs at least one step")]
    NoSteps,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// State channel of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Flow,
    Depth,
    Pressure,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Flow, Channel::Depth, Channel::Pressure];

    pub fn index(self) -> usize {
        match self {
            Channel::Flow => 0,
            Channel::Depth => 1,
            Channel::Pressure => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Flow => "flow",
            Channel::Depth => "depth",
            Channel::Pressure => "pressure",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flow" => Ok(Channel::Flow),
            "depth" => Ok(Channel::Depth),
            "pressure" => Ok(Channel::Pressure),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

/// `(flow m³/s, depth m, pressure-head m)` at one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub flow: f64,
    pub depth: f64,
    pub pressure: f64,
}

impl NodeState {
    pub fn new(flow: f64, depth: f64, pressure: f64) -> Self {
        Self {
            flow,
            depth,
            pressure,
        }
    }

    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Flow => self.flow,
            Channel::Depth => self.depth,
            Channel::Pressure => self.pressure,
        }
    }

    pub fn set(&mut self, channel: Channel, value: f64) {
        match channel {
            Channel::Flow => self.flow = value,
            Channel::Depth => self.depth = value,
            Channel::Pressure => self.pressure = value,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.flow, self.depth, self.pressure]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Full-network snapshot; `states[i]` belongs to node index `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: usize,
    pub states: Vec<NodeState>,
}

impl StateFrame {
    pub fn zeros(t: usize, nodes: usize) -> Self {
        Self {
            t,
            states: vec![NodeState::default(); nodes],
        }
    }

    pub fn channel(&self, channel: Channel) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(move |s| s.get(channel))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dt: f64,
    pub frames: Vec<StateFrame>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Hazen-Williams friction loss `10.67·L·(Q / (C·D^2.63))^1.852` in metres.
pub fn hazen_williams_headloss(q: f64, length: f64, c: f64, d: f64) -> Result<f64, HydraulicsError> {
    if !(length > 0.0) {
        return Err(HydraulicsError::Geometry("length"));
    }
    if !(c > 0.0) {
        return Err(HydraulicsError::Geometry("roughness coefficient"));
    }
    if !(d > 0.0) {
        return Err(HydraulicsError::Geometry("diameter"));
    }
    if q < 0.0 {
        return Err(HydraulicsError::NegativeFlow(q));
    }
    Ok(hw_signed(q, length, c, d))
}

/// Sign-preserving Hazen-Williams loss for already validated geometry.
pub(crate) fn hw_signed(q: f64, length: f64, c: f64, d: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    let k = HW_FACTOR * length / (c * d.powf(HW_DIAMETER_EXPONENT)).powf(HW_FLOW_EXPONENT);
    k * q.signum() * q.abs().powf(HW_FLOW_EXPONENT)
}

/// Coefficient `k` with `h_f = k·|Q|^1.852` for a conduit.
pub(crate) fn hw_resistance(length: f64, c: f64, d: f64) -> f64 {
    HW_FACTOR * length / (c * d.powf(HW_DIAMETER_EXPONENT)).powf(HW_FLOW_EXPONENT)
}

pub(crate) const HW_EXPONENT: f64 = HW_FLOW_EXPONENT;

/// Rating-curve coefficient `a` in `h = a·Q^0.6` for a pipe of diameter `d`.
pub fn rating_coefficient(d: f64) -> f64 {
    0.5 / d.powf(RATING_EXPONENT)
}

pub fn rating_depth(q: f64, d: f64) -> f64 {
    rating_coefficient(d) * q.max(0.0).powf(RATING_EXPONENT)
}

/// Diameter that sets a node's rating curve: widest outgoing conduit, or the
/// widest incoming one at an outfall.
pub fn node_rating_diameter(net: &Network, node: usize) -> f64 {
    let edges = if net.is_outfall(node) {
        net.in_conduits(node)
    } else {
        net.out_conduits(node)
    };
    edges
        .iter()
        .map(|&c| net.conduit(c).diameter)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
        .unwrap_or(1.0)
}

/// Steady solution: node frame plus the flow carried by every conduit.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub frame: StateFrame,
    pub conduit_flows: Vec<f64>,
}

/// Solves one timestep. `demands[i]` is lateral inflow and `leaks[i]` an
/// extraction at node `i`; a node's flow is what leaves it.
pub fn solve_steady_state(
    net: &Network,
    demands: &[f64],
    leaks: &[f64],
) -> Result<SteadyState, HydraulicsError> {
    let n = net.node_count();
    for v in [demands.len(), leaks.len()] {
        if v != n {
            return Err(HydraulicsError::Length {
                expected: n,
                got: v,
            });
        }
    }
    for (i, &d) in demands.iter().enumerate() {
        if !(d >= 0.0) {
            return Err(HydraulicsError::NegativeDemand {
                node: net.node(i).id.clone(),
                value: d,
            });
        }
    }

    let mut flow = vec![0.0; n];
    let mut conduit_flows = vec![0.0; net.conduit_count()];
    let mut incoming: Vec<usize> = Vec::new();
    for &v in net.topological_order() {
        // Inflows are summed in conduit-id order, so splitting a conduit
        // does not change the rounding of any leak-free sum.
        incoming.clear();
        incoming.extend_from_slice(net.in_conduits(v));
        incoming.sort_by(|&a, &b| net.conduit(a).id.cmp(&net.conduit(b).id));
        let available = incoming.iter().fold(demands[v], |acc, &c| acc + conduit_flows[c]);
        let leak = leaks[v];
        if leak > available {
            return Err(HydraulicsError::DryPipe {
                node: net.node(v).id.clone(),
                leak,
                available,
            });
        }
        flow[v] = available - leak;
        for (c, share) in net.outflow_shares(v) {
            let q = share * flow[v];
            conduit_flows[c] = q;
        }
    }

    let mut grade = vec![f64::NEG_INFINITY; n];
    for &v in net.topological_order().iter().rev() {
        if net.is_outfall(v) {
            grade[v] = net.node(v).elevation;
            continue;
        }
        for &c in net.out_conduits(v) {
            let spec = net.conduit(c);
            let to = net.ends(c).1;
            let h = grade[to]
                + hw_signed(conduit_flows[c], spec.length, spec.hw_coefficient, spec.diameter);
            grade[v] = grade[v].max(h);
        }
    }

    let states = (0..n)
        .map(|v| {
            let d = node_rating_diameter(net, v);
            NodeState::new(flow[v], rating_depth(flow[v], d), grade[v])
        })
        .collect();

    Ok(SteadyState {
        frame: StateFrame { t: 0, states },
        conduit_flows,
    })
}

/// Mass imbalance `inflow + demand − leak − outflow` at every node, where an
/// outfall's discharge counts as outflow.
pub fn junction_residuals(
    net: &Network,
    state: &SteadyState,
    demands: &[f64],
    leaks: &[f64],
) -> Vec<f64> {
    (0..net.node_count())
        .map(|v| {
            let inflow: f64 = net
                .in_conduits(v)
                .iter()
                .map(|&c| state.conduit_flows[c])
                .sum();
            let mut outflow: f64 = net
                .out_conduits(v)
                .iter()
                .map(|&c| state.conduit_flows[c])
                .sum();
            if net.is_outfall(v) {
                outflow += state.frame.states[v].flow;
            }
            inflow + demands[v] - leaks[v] - outflow
        })
        .collect()
}

/// Diurnal lateral-inflow generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPattern {
    pub base: f64,
    pub diurnal_amplitude: f64,
    /// Cycle length in timesteps.
    pub period: usize,
    /// Noise standard deviation as a fraction of `base`.
    pub noise_std: f64,
    pub seed: u64,
}

impl DemandPattern {
    /// Noise-free demand at step `t`.
    pub fn expected(&self, t: usize) -> f64 {
        let phase = 2.0 * PI * (t % self.period.max(1)) as f64 / self.period.max(1) as f64;
        (self.base * (1.0 + self.diurnal_amplitude * phase.sin())).max(0.0)
    }

    /// Demand for steps `offset..offset + steps`, clamped at zero.
    pub fn generate(&self, offset: usize, steps: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (offset..offset + steps)
            .map(|t| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let phase =
                    2.0 * PI * (t % self.period.max(1)) as f64 / self.period.max(1) as f64;
                let mean = self.base * (1.0 + self.diurnal_amplitude * phase.sin());
                (mean + self.base * self.noise_std * z).max(0.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeakKind {
    #[serde(rename = "constant_lt5")]
    ConstantLt5,
    #[serde(rename = "constant_5_15")]
    Constant5to15,
    #[serde(rename = "constant_15_25")]
    Constant15to25,
    #[serde(rename = "constant_gt25")]
    ConstantGt25,
    #[serde(rename = "dynamic_ramp")]
    DynamicRamp,
}

impl LeakKind {
    pub const ALL: [LeakKind; 5] = [
        LeakKind::ConstantLt5,
        LeakKind::Constant5to15,
        LeakKind::Constant15to25,
        LeakKind::ConstantGt25,
        LeakKind::DynamicRamp,
    ];

    /// Allowed `[lo, hi)` magnitude band; the open ends are `0` and `+inf`
    /// for the extreme constant kinds.
    pub fn band(self) -> (f64, f64) {
        match self {
            LeakKind::ConstantLt5 => (0.0, 0.05),
            LeakKind::Constant5to15 => (0.05, 0.15),
            LeakKind::Constant15to25 => (0.15, 0.25),
            LeakKind::ConstantGt25 => (0.25, f64::INFINITY),
            LeakKind::DynamicRamp => (0.0, 0.35),
        }
    }

    pub fn is_constant(self) -> bool {
        self != LeakKind::DynamicRamp
    }

    pub fn label(self) -> &'static str {
        match self {
            LeakKind::ConstantLt5 => "constant_lt5",
            LeakKind::Constant5to15 => "constant_5_15",
            LeakKind::Constant15to25 => "constant_15_25",
            LeakKind::ConstantGt25 => "constant_gt25",
            LeakKind::DynamicRamp => "dynamic_ramp",
        }
    }
}

impl std::fmt::Display for LeakKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start_fraction: f64,
    pub end_fraction: f64,
    pub ramp_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakScenario {
    pub conduit_id: String,
    pub kind: LeakKind,
    pub magnitude_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp: Option<Ramp>,
    pub start_step: usize,
}

impl LeakScenario {
    pub fn constant(conduit_id: &str, kind: LeakKind, fraction: f64, start_step: usize) -> Self {
        Self {
            conduit_id: conduit_id.to_string(),
            kind,
            magnitude_fraction: fraction,
            ramp: None,
            start_step,
        }
    }

    pub fn ramp(conduit_id: &str, ramp: Ramp, start_step: usize) -> Self {
        Self {
            conduit_id: conduit_id.to_string(),
            kind: LeakKind::DynamicRamp,
            magnitude_fraction: ramp.end_fraction,
            ramp: Some(ramp),
            start_step,
        }
    }

    pub fn validate(&self) -> Result<(), HydraulicsError> {
        let bad = |msg: String| Err(HydraulicsError::Scenario(msg));
        let f = self.magnitude_fraction;
        if !f.is_finite() || f < 0.0 {
            return bad(format!("magnitude {f} must be finite and nonnegative"));
        }
        let (lo, hi) = self.kind.band();
        match self.kind {
            LeakKind::DynamicRamp => {
                let Some(r) = self.ramp else {
                    return bad("dynamic_ramp needs a ramp".into());
                };
                if !(0.005..=0.01).contains(&r.start_fraction) {
                    return bad(format!("ramp start {} outside [0.005, 0.01]", r.start_fraction));
                }
                if r.end_fraction > hi || r.end_fraction < r.start_fraction {
                    return bad(format!(
                        "ramp end {} must lie in [start, 0.35]",
                        r.end_fraction
                    ));
                }
                if r.ramp_steps == 0 {
                    return bad("ramp_steps must be positive".into());
                }
            }
            _ => {
                if f < lo || f >= hi {
                    return bad(format!("magnitude {f} outside {} band", self.kind));
                }
                if self.ramp.is_some() {
                    return bad("constant leaks take no ramp".into());
                }
            }
        }
        Ok(())
    }

    /// Leak fraction of the upstream node's flow active at step `t`.
    pub fn fraction_at(&self, t: usize) -> f64 {
        if t < self.start_step {
            return 0.0;
        }
        match (self.kind, self.ramp) {
            (LeakKind::DynamicRamp, Some(r)) => {
                let k = (t - self.start_step) as f64;
                let progress = (k / r.ramp_steps.max(1) as f64).min(1.0);
                r.start_fraction + (r.end_fraction - r.start_fraction) * progress
            }
            _ => self.magnitude_fraction,
        }
    }
}

/// Extraction rate (m³/s) at step `t` given the flow at the leaking
/// conduit's upstream node.
pub fn leak_flow(scenario: &LeakScenario, upstream_flow: f64, t: usize) -> f64 {
    scenario.fraction_at(t) * upstream_flow
}

/// Everything one simulation solved, on the network actually used (the
/// leak conduit split at a midpoint junction when a scenario is present).
#[derive(Debug, Clone)]
pub struct DetailedRun {
    pub network: Network,
    /// Node index of the leak junction in `network`.
    pub leak_node: Option<usize>,
    pub demands: Vec<Vec<f64>>,
    pub leaks: Vec<Vec<f64>>,
    pub states: Vec<SteadyState>,
}

impl DetailedRun {
    /// Frames restricted to the original nodes.
    pub fn to_timeseries(&self, original_nodes: usize) -> TimeSeries {
        TimeSeries {
            dt: DEFAULT_DT_SECONDS,
            frames: self
                .states
                .iter()
                .map(|s| StateFrame {
                    t: s.frame.t,
                    states: s.frame.states[..original_nodes].to_vec(),
                })
                .collect(),
        }
    }
}

/// Simulates `steps` timesteps, optionally with a leak.
pub fn simulate(
    net: &Network,
    patterns: &[DemandPattern],
    steps: usize,
    scenario: Option<&LeakScenario>,
) -> Result<TimeSeries, HydraulicsError> {
    let run = simulate_detailed(net, patterns, 0, steps, scenario)?;
    Ok(run.to_timeseries(net.node_count()))
}

/// Like [`simulate`], but with the demand clock starting at `offset` and the
/// full per-step solutions retained.
pub fn simulate_detailed(
    net: &Network,
    patterns: &[DemandPattern],
    offset: usize,
    steps: usize,
    scenario: Option<&LeakScenario>,
) -> Result<DetailedRun, HydraulicsError> {
    if steps == 0 {
        return Err(HydraulicsError::NoSteps);
    }
    if patterns.len() != net.node_count() {
        return Err(HydraulicsError::Length {
            expected: net.node_count(),
            got: patterns.len(),
        });
    }
    let series: Vec<Vec<f64>> = patterns.iter().map(|p| p.generate(offset, steps)).collect();

    let (work, leak_node, upstream) = match scenario {
        Some(s) => {
            s.validate()?;
            let k = net.conduit_idx(&s.conduit_id)?;
            let (split, mid) = net.split_conduit(&s.conduit_id)?;
            (split, Some(mid), Some(net.ends(k).0))
        }
        None => (net.clone(), None, None),
    };

    let n = work.node_count();
    let mut demands = Vec::with_capacity(steps);
    let mut leaks = Vec::with_capacity(steps);
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut d: Vec<f64> = series.iter().map(|s| s[t]).collect();
        d.resize(n, 0.0);
        let mut l = vec![0.0; n];
        if let (Some(s), Some(mid), Some(u)) = (scenario, leak_node, upstream) {
            if s.fraction_at(t) > 0.0 {
                // The upstream node sits above the leak, so a leak-free solve
                // gives its flow exactly.
                let dry = solve_steady_state(&work, &d, &l)?;
                l[mid] = leak_flow(s, dry.frame.states[u].flow, t);
            }
        }
        let mut state = solve_steady_state(&work, &d, &l)?;
        state.frame.t = t;
        demands.push(d);
        leaks.push(l);
        states.push(state);
    }
    Ok(DetailedRun {
        network: work,
        leak_node,
        demands,
        leaks,
        states,
    })
}
