//! Online mixture-of-experts forecaster.
//!
//! Each expert maps recent history to a prediction of the next frame. The
//! gate keeps an exponentially smoothed loss `L_m` per expert and weights the
//! experts by `softmax(−λ·L)`. Experts that fail on a given step are dropped
//! for that step and the remaining weights renormalised.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::{Channel, NodeState, StateFrame, TimeSeries};
use crate::network::Network;

/// Default input window length.
pub const DEFAULT_INPUT_WINDOW: usize = 12;
/// Default diurnal period in 10-minute steps.
pub const DEFAULT_PERIOD: usize = 144;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("history has {got} frames, need {needed}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("no experts configured")]
    NoExperts,
    #[error("negative loss {0}")]
    NegativeLoss(f64),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("every expert failed for this step")]
    AllExpertsFailed,
    #[error("unknown expert `{0}`")]
    UnknownExpert(String),
    #[error("training series too short: {0}")]
    Training(String),
    #[error("invalid gate config: {0}")]
    Config(String),
}

/// A next-step forecaster. `history` holds past frames oldest first; the
/// last element is the most recent observation.
pub trait Expert: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&mut self, _training: &TimeSeries, _net: &Network) -> Result<(), ForecastError> {
        Ok(())
    }

    fn predict(&self, history: &[StateFrame], net: &Network) -> Result<StateFrame, ForecastError>;
}

fn last_frame(history: &[StateFrame]) -> Result<&StateFrame, ForecastError> {
    history.last().ok_or(ForecastError::InsufficientHistory { needed: 1, got: 0 })
}

/// Repeats the most recent frame.
#[derive(Debug, Default, Clone)]
pub struct Persistence;

impl Expert for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn predict(&self, history: &[StateFrame], _net: &Network) -> Result<StateFrame, ForecastError> {
        let last = last_frame(history)?;
        Ok(StateFrame {
            t: last.t + 1,
            states: last.states.clone(),
        })
    }
}

/// Repeats the frame one diurnal period before the step being predicted.
#[derive(Debug, Clone)]
pub struct SeasonalNaive {
    pub period: usize,
}

impl Expert for SeasonalNaive {
    fn name(&self) -> &str {
        "seasonal_naive"
    }

    fn predict(&self, history: &[StateFrame], _net: &Network) -> Result<StateFrame, ForecastError> {
        if self.period == 0 || history.len() < self.period {
            return Err(ForecastError::InsufficientHistory {
                needed: self.period.max(1),
                got: history.len(),
            });
        }
        let last = last_frame(history)?;
        Ok(StateFrame {
            t: last.t + 1,
            states: history[history.len() - self.period].states.clone(),
        })
    }
}

/// Mean of each node's last value and its undirected neighbours' last values.
#[derive(Debug, Default, Clone)]
pub struct GraphSmoothedPersistence;

impl Expert for GraphSmoothedPersistence {
    fn name(&self) -> &str {
        "graph_smoothed"
    }

    fn predict(&self, history: &[StateFrame], net: &Network) -> Result<StateFrame, ForecastError> {
        let last = last_frame(history)?;
        if last.states.len() != net.node_count() {
            return Err(ForecastError::Length {
                expected: net.node_count(),
                got: last.states.len(),
            });
        }
        let states = (0..net.node_count())
            .map(|v| {
                let nbrs = net.neighbors(v);
                let mut acc = last.states[v].to_array();
                for &m in &nbrs {
                    let s = last.states[m].to_array();
                    for ch in 0..3 {
                        acc[ch] += s[ch];
                    }
                }
                let k = (nbrs.len() + 1) as f64;
                NodeState::from_array(acc.map(|a| a / k))
            })
            .collect();
        Ok(StateFrame {
            t: last.t + 1,
            states,
        })
    }
}

/// Per-node, per-channel autoregression with intercept, fitted by least
/// squares on centred training data.
#[derive(Debug, Clone)]
pub struct LinearAutoregression {
    order: usize,
    /// `[node][channel]` → (mean, intercept, lag coefficients).
    models: Vec<[(f64, f64, Vec<f64>); 3]>,
}

impl LinearAutoregression {
    pub fn new(order: usize) -> Self {
        Self {
            order: order.max(1),
            models: Vec::new(),
        }
    }

    pub fn coefficients(&self, node: usize, channel: Channel) -> Option<(f64, &[f64])> {
        self.models
            .get(node)
            .map(|m| (m[channel.index()].1, m[channel.index()].2.as_slice()))
    }
}

impl Default for LinearAutoregression {
    fn default() -> Self {
        Self::new(3)
    }
}

fn fit_ar(series: &[f64], order: usize) -> (f64, f64, Vec<f64>) {
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let rows = series.len() - order;
    let x = DMatrix::from_fn(rows, order + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            series[r + order - c] - mean
        }
    });
    let y = DVector::from_fn(rows, |r, _| series[r + order] - mean);
    let svd = x.svd(true, true);
    match svd.solve(&y, 1e-12) {
        Ok(beta) => (mean, beta[0], beta.iter().skip(1).copied().collect()),
        Err(_) => (mean, 0.0, vec![0.0; order]),
    }
}

impl Expert for LinearAutoregression {
    fn name(&self) -> &str {
        "linear_ar3"
    }

    fn fit(&mut self, training: &TimeSeries, net: &Network) -> Result<(), ForecastError> {
        if training.len() <= self.order + 1 {
            return Err(ForecastError::Training(format!(
                "{} frames for order {}",
                training.len(),
                self.order
            )));
        }
        self.models = (0..net.node_count())
            .map(|v| {
                Channel::ALL.map(|ch| {
                    let s: Vec<f64> = training.frames.iter().map(|f| f.states[v].get(ch)).collect();
                    fit_ar(&s, self.order)
                })
            })
            .collect();
        Ok(())
    }

    fn predict(&self, history: &[StateFrame], net: &Network) -> Result<StateFrame, ForecastError> {
        if history.len() < self.order {
            return Err(ForecastError::InsufficientHistory {
                needed: self.order,
                got: history.len(),
            });
        }
        if self.models.len() != net.node_count() {
            return Err(ForecastError::Training("autoregression not fitted".into()));
        }
        let h = history.len();
        let states = (0..net.node_count())
            .map(|v| {
                let mut s = NodeState::default();
                for ch in Channel::ALL {
                    let (mean, c0, lags) = &self.models[v][ch.index()];
                    let pred = lags.iter().enumerate().fold(*c0, |acc, (k, a)| {
                        acc + a * (history[h - 1 - k].states[v].get(ch) - mean)
                    });
                    s.set(ch, pred + mean);
                }
                s
            })
            .collect();
        Ok(StateFrame {
            t: history[h - 1].t + 1,
            states,
        })
    }
}

/// Builds a shipped expert by registry name.
pub fn expert_by_name(name: &str, period: usize) -> Result<Box<dyn Expert>, ForecastError> {
    match name {
        "persistence" => Ok(Box::new(Persistence)),
        "seasonal_naive" => Ok(Box::new(SeasonalNaive { period })),
        "linear_ar3" => Ok(Box::new(LinearAutoregression::new(3))),
        "graph_smoothed" => Ok(Box::new(GraphSmoothedPersistence)),
        other => Err(ForecastError::UnknownExpert(other.to_string())),
    }
}

pub const DEFAULT_EXPERTS: [&str; 4] = ["persistence", "seasonal_naive", "linear_ar3", "graph_smoothed"];

/// `softmax(−λ·L)`.
pub fn gate_weights(losses: &[f64], lambda_gate: f64) -> Result<Vec<f64>, ForecastError> {
    if losses.is_empty() {
        return Err(ForecastError::NoExperts);
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = losses.iter().map(|l| (-lambda_gate * (l - lo)).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub lambda: f64,
    pub beta: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            beta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub smoothed_loss: Vec<f64>,
    pub lambda_gate: f64,
    pub ema_beta: f64,
    pub weights: Vec<f64>,
}

impl GateState {
    /// Cold start: zero smoothed loss, uniform weights.
    pub fn new(experts: usize, cfg: &GateConfig) -> Result<Self, ForecastError> {
        if !(cfg.lambda >= 0.0) {
            return Err(ForecastError::Config("lambda must be nonnegative".into()));
        }
        if !(cfg.beta > 0.0 && cfg.beta <= 1.0) {
            return Err(ForecastError::Config("beta must lie in (0, 1]".into()));
        }
        let smoothed_loss = vec![0.0; experts];
        let weights = gate_weights(&smoothed_loss, cfg.lambda)?;
        Ok(Self {
            smoothed_loss,
            lambda_gate: cfg.lambda,
            ema_beta: cfg.beta,
            weights,
        })
    }

    /// EMA update `L ← (1−β)L + β·loss` for every expert.
    pub fn update(&mut self, losses: &[f64]) -> Result<(), ForecastError> {
        let partial: Vec<Option<f64>> = losses.iter().copied().map(Some).collect();
        self.update_partial(&partial)
    }

    /// As [`GateState::update`], leaving experts with `None` untouched.
    pub fn update_partial(&mut self, losses: &[Option<f64>]) -> Result<(), ForecastError> {
        if losses.len() != self.smoothed_loss.len() {
            return Err(ForecastError::Length {
                expected: self.smoothed_loss.len(),
                got: losses.len(),
            });
        }
        if let Some(bad) = losses.iter().flatten().find(|l| !(**l >= 0.0)) {
            return Err(ForecastError::NegativeLoss(*bad));
        }
        let b = self.ema_beta;
        for (l, new) in self.smoothed_loss.iter_mut().zip(losses) {
            if let Some(x) = new {
                *l = (1.0 - b) * *l + b * x;
            }
        }
        self.weights = gate_weights(&self.smoothed_loss, self.lambda_gate)?;
        Ok(())
    }
}

/// Pure form of [`GateState::update`].
pub fn update_gate(state: &GateState, losses: &[f64]) -> Result<GateState, ForecastError> {
    let mut next = state.clone();
    next.update(losses)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastFrame {
    pub combined: StateFrame,
    /// `None` for experts excluded this step.
    pub expert_predictions: Vec<Option<StateFrame>>,
    /// Weights actually applied, renormalised over the available experts.
    pub weights: Vec<f64>,
    pub excluded: Vec<String>,
}

pub struct Ensemble {
    experts: Vec<Box<dyn Expert>>,
    gate: GateState,
    input_window: usize,
    /// Per node and channel, the training-split spread used to standardise
    /// errors.
    scales: Vec<[f64; 3]>,
}

impl Ensemble {
    pub fn new(experts: Vec<Box<dyn Expert>>, gate: &GateConfig) -> Result<Self, ForecastError> {
        if experts.is_empty() {
            return Err(ForecastError::NoExperts);
        }
        let gate = GateState::new(experts.len(), gate)?;
        Ok(Self {
            experts,
            gate,
            input_window: DEFAULT_INPUT_WINDOW,
            scales: Vec::new(),
        })
    }

    /// The four shipped baseline experts.
    pub fn with_default_experts(gate: &GateConfig, period: usize) -> Result<Self, ForecastError> {
        let experts = DEFAULT_EXPERTS
            .iter()
            .map(|n| expert_by_name(n, period))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(experts, gate)
    }

    pub fn input_window(mut self, t_in: usize) -> Self {
        self.input_window = t_in.max(1);
        self
    }

    pub fn gate(&self) -> &GateState {
        &self.gate
    }

    pub fn expert_names(&self) -> Vec<String> {
        self.experts.iter().map(|e| e.name().to_string()).collect()
    }

    /// Fits every expert on the training series and records per-node
    /// error scales (standard deviation of one-step changes).
    pub fn fit(&mut self, training: &TimeSeries, net: &Network) -> Result<(), ForecastError> {
        for e in &mut self.experts {
            e.fit(training, net)?;
        }
        self.scales = (0..net.node_count())
            .map(|v| {
                Channel::ALL.map(|ch| {
                    let diffs: Vec<f64> = training
                        .frames
                        .windows(2)
                        .map(|w| w[1].states[v].get(ch) - w[0].states[v].get(ch))
                        .collect();
                    if diffs.len() < 2 {
                        return 1.0;
                    }
                    let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
                    let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>()
                        / diffs.len() as f64)
                        .sqrt();
                    if sd > 1e-12 {
                        sd
                    } else {
                        1.0
                    }
                })
            })
            .collect();
        Ok(())
    }

    /// Combined next-step forecast from `history` (at least the input
    /// window; longer history lets seasonal experts look further back).
    pub fn predict(&self, history: &[StateFrame], net: &Network) -> Result<ForecastFrame, ForecastError> {
        if history.len() < self.input_window {
            return Err(ForecastError::InsufficientHistory {
                needed: self.input_window,
                got: history.len(),
            });
        }
        let mut preds = Vec::with_capacity(self.experts.len());
        let mut excluded = Vec::new();
        for e in &self.experts {
            match e.predict(history, net) {
                Ok(p) if p.states.len() == net.node_count() => preds.push(Some(p)),
                Ok(_) => {
                    log::debug!("expert {} returned a malformed frame", e.name());
                    excluded.push(e.name().to_string());
                    preds.push(None);
                }
                Err(err) => {
                    log::debug!("expert {} excluded: {err}", e.name());
                    excluded.push(e.name().to_string());
                    preds.push(None);
                }
            }
        }
        let mass: f64 = preds
            .iter()
            .zip(&self.gate.weights)
            .filter(|(p, _)| p.is_some())
            .map(|(_, w)| w)
            .sum();
        if preds.iter().all(Option::is_none) || !(mass > 0.0) {
            return Err(ForecastError::AllExpertsFailed);
        }
        let weights: Vec<f64> = preds
            .iter()
            .zip(&self.gate.weights)
            .map(|(p, w)| if p.is_some() { w / mass } else { 0.0 })
            .collect();
        let combined = combine(&preds, &weights, net.node_count());
        Ok(ForecastFrame {
            combined: StateFrame {
                t: history[history.len() - 1].t + 1,
                states: combined,
            },
            expert_predictions: preds,
            weights,
            excluded,
        })
    }

    /// Standardised mean absolute error of one prediction.
    pub fn step_loss(&self, predicted: &StateFrame, actual: &StateFrame) -> f64 {
        let n = actual.states.len();
        let mut total = 0.0;
        for v in 0..n {
            let scale = self.scales.get(v).copied().unwrap_or([1.0; 3]);
            for ch in Channel::ALL {
                total += (predicted.states[v].get(ch) - actual.states[v].get(ch)).abs()
                    / scale[ch.index()];
            }
        }
        total / (3 * n.max(1)) as f64
    }

    /// Feeds the realised frame back to the gate unless `paused`.
    pub fn observe(
        &mut self,
        forecast: &ForecastFrame,
        actual: &StateFrame,
        paused: bool,
    ) -> Result<(), ForecastError> {
        if paused {
            return Ok(());
        }
        let losses: Vec<Option<f64>> = forecast
            .expert_predictions
            .iter()
            .map(|p| p.as_ref().map(|p| self.step_loss(p, actual)))
            .collect();
        self.gate.update_partial(&losses)
    }

    /// Recursive multi-step forecast: each predicted frame is appended to
    /// the history before predicting the next.
    pub fn predict_horizon(
        &self,
        history: &[StateFrame],
        net: &Network,
        horizon: usize,
    ) -> Result<Vec<StateFrame>, ForecastError> {
        let mut h = history.to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let f = self.predict(&h, net)?;
            h.push(f.combined.clone());
            out.push(f.combined);
        }
        Ok(out)
    }
}

/// Channel-wise weighted sum of the available predictions.
pub fn combine(preds: &[Option<StateFrame>], weights: &[f64], nodes: usize) -> Vec<NodeState> {
    (0..nodes)
        .map(|v| {
            let mut acc = [0.0; 3];
            for (p, w) in preds.iter().zip(weights) {
                if let Some(p) = p {
                    let s = p.states[v].to_array();
                    for ch in 0..3 {
                        acc[ch] += w * s[ch];
                    }
                }
            }
            NodeState::from_array(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ConduitSpec, NodeSpec};

    fn two_nodes() -> Network {
        Network::new(
            vec![
                NodeSpec {
                    id: "A".into(),
                    elevation: 2.0,
                    base_demand: 0.1,
                    risk: 0.0,
                    is_outfall: false,
                },
                NodeSpec {
                    id: "B".into(),
                    elevation: 1.0,
                    base_demand: 0.0,
                    risk: 0.0,
                    is_outfall: true,
                },
            ],
            vec![ConduitSpec {
                id: "AB".into(),
                from_node: "A".into(),
                to_node: "B".into(),
                length: 10.0,
                diameter: 0.3,
                hw_coefficient: 120.0,
            }],
        )
        .unwrap()
    }

    fn constant_frame(t: usize, value: f64) -> StateFrame {
        StateFrame {
            t,
            states: vec![NodeState::new(value, value, value); 2],
        }
    }

    struct Fixed(&'static str, f64);

    impl Expert for Fixed {
        fn name(&self) -> &str {
            self.0
        }

        fn predict(&self, h: &[StateFrame], _net: &Network) -> Result<StateFrame, ForecastError> {
            Ok(constant_frame(h.last().unwrap().t + 1, self.1))
        }
    }

    struct Broken;

    impl Expert for Broken {
        fn name(&self) -> &str {
            "broken"
        }

        fn predict(&self, _h: &[StateFrame], _net: &Network) -> Result<StateFrame, ForecastError> {
            Err(ForecastError::Training("nope".into()))
        }
    }

    #[test]
    fn softmax_reference_values() {
        let w = gate_weights(&[0.3, 0.3, 0.3], 5.0).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = gate_weights(&[0.1, 7.0], 0.0).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = gate_weights(&[0.1, 0.2], 10.0).unwrap();
        assert!((w[0] - 0.7311).abs() < 1e-4 && (w[1] - 0.2689).abs() < 1e-4);
        assert!(matches!(gate_weights(&[], 1.0), Err(ForecastError::NoExperts)));
    }

    #[test]
    fn ema_update_arithmetic() {
        let mut g = GateState::new(1, &GateConfig { lambda: 5.0, beta: 0.2 }).unwrap();
        g.smoothed_loss = vec![0.5];
        let g2 = update_gate(&g, &[1.0]).unwrap();
        assert!((g2.smoothed_loss[0] - 0.6).abs() < 1e-15);

        let mut g = GateState::new(2, &GateConfig { lambda: 5.0, beta: 1.0 }).unwrap();
        g.update(&[0.7, 0.2]).unwrap();
        assert_eq!(g.smoothed_loss, vec![0.7, 0.2]);
        assert!(matches!(g.update(&[-1.0, 0.0]), Err(ForecastError::NegativeLoss(_))));

        let mut g = GateState::new(1, &GateConfig::default()).unwrap();
        for _ in 0..500 {
            g.update(&[0.25]).unwrap();
        }
        assert!((g.smoothed_loss[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_expert_passthrough() {
        let net = two_nodes();
        let ens = Ensemble::new(vec![Box::new(Fixed("a", 2.5))], &GateConfig::default())
            .unwrap()
            .input_window(1);
        let f = ens.predict(&[constant_frame(0, 0.0)], &net).unwrap();
        assert_eq!(f.combined.states, vec![NodeState::new(2.5, 2.5, 2.5); 2]);
    }

    #[test]
    fn weighted_combination() {
        let preds = vec![Some(constant_frame(1, 1.0)), Some(constant_frame(1, 3.0))];
        let c = combine(&preds, &[0.75, 0.25], 2);
        assert!(c.iter().all(|s| s.to_array() == [1.5; 3]));
    }

    #[test]
    fn failing_expert_is_excluded() {
        let net = two_nodes();
        let ens = Ensemble::new(
            vec![Box::new(Broken), Box::new(Fixed("one", 1.0))],
            &GateConfig::default(),
        )
        .unwrap()
        .input_window(1);
        let f = ens.predict(&[constant_frame(0, 0.0)], &net).unwrap();
        assert_eq!(f.excluded, vec!["broken"]);
        assert_eq!(f.weights, vec![0.0, 1.0]);
        assert_eq!(f.combined.states[0].flow, 1.0);
    }

    #[test]
    fn constant_history_baselines_agree() {
        let net = two_nodes();
        let history: Vec<StateFrame> = (0..20).map(|t| constant_frame(t, 4.0)).collect();
        let experts: Vec<Box<dyn Expert>> =
            vec![Box::new(Persistence), Box::new(SeasonalNaive { period: 6 })];
        let ens = Ensemble::new(experts, &GateConfig::default()).unwrap();
        let f = ens.predict(&history, &net).unwrap();
        assert!(f.combined.states.iter().all(|s| (s.flow - 4.0).abs() < 1e-15));
    }

    #[test]
    fn insufficient_history() {
        let net = two_nodes();
        let ens = Ensemble::with_default_experts(&GateConfig::default(), 144).unwrap();
        let short: Vec<StateFrame> = (0..5).map(|t| constant_frame(t, 1.0)).collect();
        assert!(matches!(
            ens.predict(&short, &net),
            Err(ForecastError::InsufficientHistory { needed: 12, got: 5 })
        ));
    }

    #[test]
    fn ar_recovers_linear_recurrence() {
        let net = two_nodes();
        // x_t = 1.5 x_{t-1} − 0.7 x_{t-2} + noise-free forcing.
        let mut xs = vec![1.0, 2.0];
        for t in 2..400 {
            let forcing = (t as f64 * 0.3).sin();
            xs.push(1.5 * xs[t - 1] - 0.7 * xs[t - 2] + forcing);
        }
        let training = TimeSeries {
            dt: 600.0,
            frames: xs
                .iter()
                .enumerate()
                .map(|(t, &x)| StateFrame {
                    t,
                    states: vec![NodeState::new(x, 1.0, 1.0); 2],
                })
                .collect(),
        };
        let mut ar = LinearAutoregression::new(3);
        ar.fit(&training, &net).unwrap();
        let p = ar.predict(&training.frames[..300], &net).unwrap();
        // Forcing is not explained by three lags, so only check it is close.
        assert!((p.states[0].flow - xs[300]).abs() < 1.0);
        let (_, lags) = ar.coefficients(0, Channel::Flow).unwrap();
        assert_eq!(lags.len(), 3);
    }
}
