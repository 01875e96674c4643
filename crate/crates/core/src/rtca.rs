//! Streaming dual-threshold anomaly detection.
//!
//! Each node keeps an EMA model of its relative forecast error. A step is a
//! dual exceedance when both the instantaneous error and the windowed mean
//! error exceed their thresholds; `persist` consecutive dual exceedances
//! confirm an anomaly. Threshold adaptation is frozen while exceeding.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::{Channel, StateFrame};

#[derive(Debug, Error)]
pub enum RtcaError {
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("timestep {got} is not after {last}")]
    NonMonotonic { last: usize, got: usize },
    #[error("cumulative error of an empty window")]
    EmptyWindow,
    #[error("frame has {got} nodes, detector has {expected}")]
    FrameSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtcaConfig {
    /// Cumulative error window length.
    pub window: usize,
    /// Consecutive dual exceedances needed to confirm.
    pub persist: usize,
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub epsilon: f64,
    pub warmup_steps: usize,
    pub channel: Channel,
}

impl Default for RtcaConfig {
    fn default() -> Self {
        Self {
            window: 12,
            persist: 3,
            alpha: 0.02,
            k1: 2.5,
            k2: 3.0,
            epsilon: 1e-6,
            warmup_steps: 288,
            channel: Channel::Flow,
        }
    }
}

impl RtcaConfig {
    pub fn validate(&self) -> Result<(), RtcaError> {
        if self.window == 0 {
            return Err(RtcaError::Config("window must be at least 1".into()));
        }
        if self.persist == 0 {
            return Err(RtcaError::Config("persist must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RtcaError::Config("alpha must lie in (0, 1)".into()));
        }
        if !(self.k1 > 0.0 && self.k2 >= self.k1) {
            return Err(RtcaError::Config("need k2 >= k1 > 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(RtcaError::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Warmup,
    Normal,
    Suspect,
    Confirmed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Warmup => "warmup",
            Status::Normal => "normal",
            Status::Suspect => "suspect",
            Status::Confirmed => "confirmed",
        }
    }

    pub fn is_alert(self) -> bool {
        matches!(self, Status::Suspect | Status::Confirmed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub node: String,
    pub detected_at: usize,
    pub confidence: f64,
    pub e_rt: f64,
    pub e_c: f64,
}

/// `|y − ŷ| / (ŷ + ε)`.
pub fn rt_error(y: f64, y_hat: f64, epsilon: f64) -> f64 {
    (y - y_hat).abs() / (y_hat + epsilon)
}

/// Mean of the values in the window, summed oldest first.
pub fn cum_error<'a, I>(window: I) -> Result<f64, RtcaError>
where
    I: IntoIterator<Item = &'a f64>,
{
    let (sum, n) = window.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(RtcaError::EmptyWindow);
    }
    Ok(sum / n as f64)
}

/// Confidence of a confirmation: maps the cumulative exceedance, in units of
/// the error spread, onto [0, 1].
pub fn confidence(e_c: f64, tau_c: f64, sigma: f64, epsilon: f64) -> f64 {
    (1.0 - (-(e_c - tau_c) / (sigma + epsilon)).exp()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub mu: f64,
    pub sigma2: f64,
    pub error_window: VecDeque<f64>,
    pub persist_count: usize,
    pub status: Status,
    pub frozen: bool,
    pub last_t: Option<usize>,
}

impl Default for DetectorState {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma2: 0.0,
            error_window: VecDeque::new(),
            persist_count: 0,
            status: Status::Warmup,
            frozen: false,
            last_t: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub e_rt: f64,
    pub e_c: f64,
    /// Thresholds the step was compared against.
    pub tau_rt: f64,
    pub tau_c: f64,
    pub status: Status,
    pub event: Option<AnomalyEvent>,
}

impl DetectorState {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `(τ_RT, τ_C)` for the current model of normal.
    pub fn thresholds(&self, cfg: &RtcaConfig) -> (f64, f64) {
        let s = self.sigma();
        (self.mu + cfg.k1 * s, self.mu + cfg.k2 * s)
    }

    /// EMA update of mean and variance; a no-op while frozen.
    pub fn update_thresholds(&mut self, e_rt: f64, cfg: &RtcaConfig) {
        if self.frozen {
            return;
        }
        let a = cfg.alpha;
        self.mu = (1.0 - a) * self.mu + a * e_rt;
        self.sigma2 = (1.0 - a) * self.sigma2 + a * (e_rt - self.mu).powi(2);
    }

    /// Advances the detector by one observation.
    pub fn step(
        &mut self,
        node: &str,
        y: f64,
        y_hat: f64,
        cfg: &RtcaConfig,
        t: usize,
    ) -> Result<StepOutput, RtcaError> {
        if let Some(last) = self.last_t {
            if t <= last {
                return Err(RtcaError::NonMonotonic { last, got: t });
            }
        }
        self.last_t = Some(t);

        let e_rt = rt_error(y, y_hat, cfg.epsilon);
        self.error_window.push_back(e_rt);
        while self.error_window.len() > cfg.window {
            self.error_window.pop_front();
        }
        let e_c = cum_error(&self.error_window)?;
        let (tau_rt, tau_c) = self.thresholds(cfg);

        let mut event = None;
        if t <= cfg.warmup_steps {
            self.update_thresholds(e_rt, cfg);
            self.status = Status::Warmup;
        } else if e_rt > tau_rt && e_c > tau_c {
            self.persist_count = (self.persist_count + 1).min(cfg.persist);
            self.frozen = true;
            if self.persist_count == cfg.persist {
                if self.status != Status::Confirmed {
                    event = Some(AnomalyEvent {
                        node: node.to_string(),
                        detected_at: t,
                        confidence: confidence(e_c, tau_c, self.sigma(), cfg.epsilon),
                        e_rt,
                        e_c,
                    });
                }
                self.status = Status::Confirmed;
            } else {
                self.status = Status::Suspect;
            }
        } else {
            self.persist_count = 0;
            self.frozen = false;
            self.update_thresholds(e_rt, cfg);
            self.status = Status::Normal;
        }
        Ok(StepOutput {
            e_rt,
            e_c,
            tau_rt,
            tau_c,
            status: self.status,
            event,
        })
    }
}

/// One detector per node, all monitoring the same channel.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: RtcaConfig,
    ids: Vec<String>,
    states: Vec<DetectorState>,
}

impl Detector {
    pub fn new(ids: Vec<String>, cfg: RtcaConfig) -> Result<Self, RtcaError> {
        cfg.validate()?;
        let states = vec![DetectorState::default(); ids.len()];
        Ok(Self { cfg, ids, states })
    }

    pub fn config(&self) -> &RtcaConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[DetectorState] {
        &self.states
    }

    pub fn node_ids(&self) -> &[String] {
        &self.ids
    }

    /// True if any node is currently suspected or confirmed.
    pub fn any_alert(&self) -> bool {
        self.states.iter().any(|s| s.status.is_alert())
    }

    pub fn step_frame(
        &mut self,
        observed: &StateFrame,
        predicted: &StateFrame,
    ) -> Result<Vec<StepOutput>, RtcaError> {
        let n = self.ids.len();
        for f in [observed, predicted] {
            if f.states.len() != n {
                return Err(RtcaError::FrameSize {
                    expected: n,
                    got: f.states.len(),
                });
            }
        }
        let ch = self.cfg.channel;
        (0..n)
            .map(|v| {
                self.states[v].step(
                    &self.ids[v],
                    observed.states[v].get(ch),
                    predicted.states[v].get(ch).max(0.0),
                    &self.cfg,
                    observed.t,
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(warmup: usize) -> RtcaConfig {
        RtcaConfig {
            warmup_steps: warmup,
            ..Default::default()
        }
    }

    #[test]
    fn rt_error_values() {
        assert_eq!(rt_error(3.0, 3.0, 1e-6), 0.0);
        assert_eq!(rt_error(0.0, 0.0, 1e-6), 0.0);
        assert!((rt_error(1.2, 1.0, 1e-6) - 0.2).abs() < 1e-6);
    }

    #[test]
    fn cum_error_values() {
        assert!((cum_error(&[0.1, 0.2, 0.3]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(cum_error(&[0.7]).unwrap(), 0.7);
        assert!(matches!(cum_error(&[]), Err(RtcaError::EmptyWindow)));
    }

    #[test]
    fn threshold_update_arithmetic() {
        let c = RtcaConfig {
            alpha: 0.5,
            ..Default::default()
        };
        let mut s = DetectorState::default();
        s.update_thresholds(1.0, &c);
        assert_eq!(s.mu, 0.5);
        assert_eq!(s.sigma2, 0.125);

        let before = DetectorState {
            frozen: true,
            ..s.clone()
        };
        let mut after = before.clone();
        after.update_thresholds(9.0, &c);
        assert_eq!(after, before);
    }

    #[test]
    fn constant_input_fixed_point() {
        let c = cfg(0);
        let mut s = DetectorState::default();
        for _ in 0..5000 {
            s.update_thresholds(0.3, &c);
        }
        assert!((s.mu - 0.3).abs() < 1e-12);
        assert!(s.sigma() < 1e-9);
    }

    #[test]
    fn single_spike_is_not_confirmed() {
        let c = cfg(10);
        let mut s = DetectorState::default();
        let y = |t: usize| if t.is_multiple_of(2) { 1.01 } else { 0.99 };
        for t in 0..=100 {
            s.step("n", y(t), 1.0, &c, t).unwrap();
        }
        let o = s.step("n", 50.0, 1.0, &c, 101).unwrap();
        assert_eq!(o.status, Status::Suspect);
        let o = s.step("n", y(102), 1.0, &c, 102).unwrap();
        assert_eq!(o.status, Status::Normal);
        assert_eq!(s.persist_count, 0);
        assert!(o.event.is_none());
    }

    #[test]
    fn level_shift_confirms_at_third_exceedance() {
        let c = cfg(20);
        let mut s = DetectorState::default();
        for t in 0..=60 {
            let y = if t % 2 == 0 { 1.01 } else { 0.99 };
            s.step("J7", y, 1.0, &c, t).unwrap();
        }
        let (tau_rt, _) = s.thresholds(&c);
        let shifted = 1.0 + 10.0 * tau_rt;
        let mut events = Vec::new();
        let mut statuses = Vec::new();
        for t in 61..70 {
            let o = s.step("J7", shifted, 1.0, &c, t).unwrap();
            statuses.push(o.status);
            events.extend(o.event);
        }
        assert_eq!(&statuses[..3], &[Status::Suspect, Status::Suspect, Status::Confirmed]);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].detected_at, 63);
        assert!(events[0].confidence > 0.0 && events[0].confidence <= 1.0);
    }

    #[test]
    fn warmup_only_adapts() {
        let c = cfg(50);
        let mut s = DetectorState::default();
        for t in 0..=50 {
            let o = s.step("n", 100.0 * (t % 3) as f64, 1.0, &c, t).unwrap();
            assert_eq!(o.status, Status::Warmup);
        }
        assert!(s.mu > 0.0);
    }

    #[test]
    fn non_monotonic_time_rejected() {
        let mut s = DetectorState::default();
        s.step("n", 1.0, 1.0, &cfg(0), 5).unwrap();
        assert!(matches!(
            s.step("n", 1.0, 1.0, &cfg(0), 5),
            Err(RtcaError::NonMonotonic { last: 5, got: 5 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(RtcaConfig::default().validate().is_ok());
        let bad = RtcaConfig {
            k1: 3.0,
            k2: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
