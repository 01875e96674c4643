//! Scenario generation, end-to-end pipeline runs and evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::{augment_series, AugmentationConfig, AugmentationError};
use crate::forecasting::{expert_by_name, Ensemble, ForecastError, GateConfig, DEFAULT_EXPERTS};
use crate::hydraulics::{
    simulate, simulate_detailed, DemandPattern, HydraulicsError, LeakKind, LeakScenario, Ramp,
    StateFrame, TimeSeries,
};
use crate::localization::{co_anomalous, localize, LocalizationError};
use crate::network::{Network, NetworkError};
use crate::placement::{score_nodes, select_sensors, PlacementConfig, PlacementError};
use crate::reporting::ReportConfig;
use crate::rtca::{AnomalyEvent, Detector, RtcaConfig, RtcaError};

/// The bundled 23-node, 22-conduit sewer network.
pub const BUNDLED_NETWORK: &str = include_str!("../data/campus23.json");

pub fn bundled_network() -> Network {
    Network::from_json(BUNDLED_NETWORK).expect("bundled network is valid")
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("no cases to evaluate")]
    NoCases,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Hydraulics(#[from] HydraulicsError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Augmentation(#[from] AugmentationError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Rtca(#[from] RtcaError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Every node is measured.
    #[default]
    Full,
    /// Only placed sensors are measured; the rest is augmented.
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    pub diurnal_amplitude: f64,
    pub period: usize,
    pub noise_std: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            diurnal_amplitude: 0.3,
            period: 144,
            noise_std: 5e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub experts: Vec<String>,
    pub input_window: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            experts: DEFAULT_EXPERTS.iter().map(|s| s.to_string()).collect(),
            input_window: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub start_step: usize,
    /// Restrict to these kinds; empty means all five.
    pub kinds: Vec<LeakKind>,
    /// Restrict to these conduits; empty means all.
    pub conduits: Vec<String>,
    /// Smallest magnitude drawn for the below-5% kind.
    pub small_leak_floor: f64,
    /// Largest magnitude drawn for the above-25% kind.
    pub large_leak_ceiling: f64,
    pub ramp_end_range: (f64, f64),
    pub ramp_steps: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            start_step: 432,
            kinds: Vec::new(),
            conduits: Vec::new(),
            small_leak_floor: 0.02,
            large_leak_ceiling: 0.35,
            ramp_end_range: (0.25, 0.35),
            ramp_steps: 36,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Network JSON file; the bundled network when absent.
    pub network: Option<PathBuf>,
    pub seed: u64,
    pub steps: usize,
    pub observation: ObservationMode,
    /// Leak-free weeks run alongside the leak cases.
    pub controls: usize,
    pub demand: DemandConfig,
    pub forecast: ForecastConfig,
    pub gate: GateConfig,
    pub rtca: RtcaConfig,
    pub augmentation: AugmentationConfig,
    pub placement: PlacementConfig,
    pub scenarios: ScenarioConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            network: None,
            seed: 42,
            steps: 1008,
            observation: ObservationMode::Full,
            controls: 10,
            demand: DemandConfig::default(),
            forecast: ForecastConfig::default(),
            gate: GateConfig {
                lambda: 20.0,
                ..GateConfig::default()
            },
            rtca: RtcaConfig::default(),
            augmentation: AugmentationConfig {
                lambda_smooth: 1e-6,
                max_iters: 400,
                tol: 1e-16,
                rel_tol: 1e-8,
                ..AugmentationConfig::default()
            },
            placement: PlacementConfig::default(),
            scenarios: ScenarioConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(source: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(source)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative network paths are resolved against the config's folder.
        if let (Some(net), Some(dir)) = (&cfg.network, path.parent()) {
            if net.is_relative() {
                cfg.network = Some(dir.join(net));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.rtca.validate()?;
        self.augmentation.validate()?;
        if self.steps < self.rtca.warmup_steps + self.rtca.persist {
            return Err(HarnessError::Config(format!(
                "steps ({}) must be at least warmup_steps + persist ({})",
                self.steps,
                self.rtca.warmup_steps + self.rtca.persist
            )));
        }
        if self.forecast.experts.is_empty() {
            return Err(HarnessError::Config("at least one expert is required".into()));
        }
        for e in &self.forecast.experts {
            expert_by_name(e, self.demand.period)?;
        }
        let d = &self.demand;
        if !(0.0..1.0).contains(&d.diurnal_amplitude) || !(d.noise_std >= 0.0) || d.period == 0 {
            return Err(HarnessError::Config("invalid demand pattern".into()));
        }
        let s = &self.scenarios;
        if !(0.0..0.05).contains(&s.small_leak_floor)
            || !(s.large_leak_ceiling >= 0.25)
            || !(s.ramp_end_range.0 <= s.ramp_end_range.1 && s.ramp_end_range.1 <= 0.35)
            || s.ramp_steps == 0
        {
            return Err(HarnessError::Config("invalid scenario sampling ranges".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network, HarnessError> {
        match &self.network {
            None => Ok(bundled_network()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| HarnessError::Io {
                    path: p.clone(),
                    source,
                })?;
                Ok(Network::from_json(&text)?)
            }
        }
    }
}

/// SplitMix64 finaliser, used to derive independent child seeds.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const CONTROL_STREAM: u64 = 0xC04E_7A01;

/// One scenario per conduit and leak kind, conduits in file order.
/// Magnitudes are drawn uniformly from each kind's band.
pub fn generate_scenarios(net: &Network, cfg: &ScenarioConfig, seed: u64) -> Vec<LeakScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(net.conduit_count() * LeakKind::ALL.len());
    for c in net.conduits() {
        for kind in LeakKind::ALL {
            // Draw even for filtered-out cases so filters do not shift the
            // magnitudes of the remaining ones.
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let lerp = |lo: f64, hi: f64, u: f64| lo + (hi - lo) * u;
            let scenario = match kind {
                LeakKind::ConstantLt5 => {
                    LeakScenario::constant(&c.id, kind, lerp(cfg.small_leak_floor, 0.05, a), cfg.start_step)
                }
                LeakKind::Constant5to15 => LeakScenario::constant(&c.id, kind, lerp(0.05, 0.15, a), cfg.start_step),
                LeakKind::Constant15to25 => LeakScenario::constant(&c.id, kind, lerp(0.15, 0.25, a), cfg.start_step),
                LeakKind::ConstantGt25 => {
                    LeakScenario::constant(&c.id, kind, lerp(0.25, cfg.large_leak_ceiling, a), cfg.start_step)
                }
                LeakKind::DynamicRamp => LeakScenario::ramp(
                    &c.id,
                    Ramp {
                        start_fraction: lerp(0.005, 0.01, a),
                        end_fraction: lerp(cfg.ramp_end_range.0, cfg.ramp_end_range.1, b),
                        ramp_steps: cfg.ramp_steps,
                    },
                    cfg.start_step,
                ),
            };
            let keep_kind = cfg.kinds.is_empty() || cfg.kinds.contains(&kind);
            let keep_conduit = cfg.conduits.is_empty() || cfg.conduits.contains(&c.id);
            if keep_kind && keep_conduit {
                out.push(scenario);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationHit {
    Exact,
    Adjacent,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    /// `None` for leak-free controls.
    pub scenario: Option<LeakScenario>,
    pub seed: u64,
    pub detected: bool,
    /// Steps from leak start to the first confirmation; −1 if undetected.
    pub detection_delay: i64,
    pub within_10: bool,
    pub localization_hit: LocalizationHit,
    pub localized_conduit: Option<String>,
    pub false_alarms_pre_leak: usize,
    pub events: Vec<AnomalyEvent>,
    pub error: Option<String>,
}

impl CaseResult {
    fn failed(case_id: String, scenario: Option<LeakScenario>, seed: u64, err: &HarnessError) -> Self {
        Self {
            case_id,
            scenario,
            seed,
            detected: false,
            detection_delay: -1,
            within_10: false,
            localization_hit: LocalizationHit::Miss,
            localized_conduit: None,
            false_alarms_pre_leak: 0,
            events: Vec::new(),
            error: Some(err.to_string()),
        }
    }

    pub fn kind(&self) -> Option<LeakKind> {
        self.scenario.as_ref().map(|s| s.kind)
    }
}

/// Everything a pipeline run produced, for callers that want more than the
/// case summary.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub sensors: Vec<usize>,
    pub truth: TimeSeries,
    pub observed: TimeSeries,
    pub predicted: TimeSeries,
    pub events: Vec<AnomalyEvent>,
}

/// Per-node demand patterns. Stream 0 is the training week, stream 1 the
/// evaluation week.
pub fn demand_patterns(net: &Network, cfg: &DemandConfig, seed: u64, stream: u64) -> Vec<DemandPattern> {
    net.nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| DemandPattern {
            base: n.base_demand,
            diurnal_amplitude: cfg.diurnal_amplitude,
            period: cfg.period,
            noise_std: cfg.noise_std,
            seed: derive_seed(seed, 2 * i as u64 + stream),
        })
        .collect()
}

fn observe_sparse(
    net: &Network,
    truth: &TimeSeries,
    sensors: &[usize],
    patterns: &[DemandPattern],
    offset: usize,
    cfg: &AugmentationConfig,
) -> Result<TimeSeries, HarnessError> {
    let demands: Vec<Vec<f64>> = (0..truth.len())
        .map(|t| patterns.iter().map(|p| p.expected(offset + t)).collect())
        .collect();
    Ok(augment_series(net, truth, sensors, &demands, cfg)?.0)
}

/// Simulates a training week and an evaluation week (with the leak, if any),
/// then forecasts and runs the detector over the evaluation week.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    net: &Network,
    scenario: Option<&LeakScenario>,
    seed: u64,
) -> Result<PipelineRun, HarnessError> {
    let steps = cfg.steps;
    let train_patterns = demand_patterns(net, &cfg.demand, seed, 0);
    let eval_patterns = demand_patterns(net, &cfg.demand, seed, 1);
    let train_truth = simulate(net, &train_patterns, steps, None)?;
    let eval_truth = simulate_detailed(net, &eval_patterns, steps, steps, scenario)?.to_timeseries(net.node_count());

    let (sensors, train_obs, eval_obs) = match cfg.observation {
        ObservationMode::Full => ((0..net.node_count()).collect(), train_truth.clone(), eval_truth.clone()),
        ObservationMode::Sparse => {
            let scores = score_nodes(net, &train_truth, &cfg.placement)?;
            let selection = select_sensors(&scores, net, &cfg.placement);
            let sensors: Vec<usize> = selection
                .selected
                .iter()
                .map(|id| net.node_idx(id))
                .collect::<Result<_, _>>()?;
            let aug = cfg.augmentation.clone().with_scales_from(&train_truth);
            let train_obs = observe_sparse(net, &train_truth, &sensors, &train_patterns, 0, &aug)?;
            let eval_obs = observe_sparse(net, &eval_truth, &sensors, &eval_patterns, steps, &aug)?;
            (sensors, train_obs, eval_obs)
        }
    };

    let mut ensemble = prepare_ensemble(cfg, net, &train_obs)?;
    let mut history = joined_history(&train_obs, &eval_obs);

    let ids: Vec<String> = net.nodes().iter().map(|n| n.id.clone()).collect();
    let mut detector = Detector::new(ids, cfg.rtca.clone())?;
    let mut events = Vec::new();
    let mut predicted = Vec::with_capacity(steps);
    for t in 0..steps {
        let forecast = ensemble.predict(&history[..steps + t], net)?;
        let actual = &eval_obs.frames[t];
        let mut combined = forecast.combined.clone();
        combined.t = t;
        for (v, out) in detector.step_frame(actual, &combined)?.into_iter().enumerate() {
            // Alerting nodes feed the forecast back into the history so the
            // experts keep predicting normal behaviour instead of tracking
            // the anomaly.
            if out.status.is_alert() {
                history[steps + t].states[v] = forecast.combined.states[v];
            }
            events.extend(out.event);
        }
        ensemble.observe(&forecast, &history[steps + t], detector.any_alert())?;
        predicted.push(combined);
    }

    Ok(PipelineRun {
        sensors,
        truth: eval_truth,
        observed: eval_obs,
        predicted: TimeSeries {
            dt: train_truth.dt,
            frames: predicted,
        },
        events,
    })
}

/// Builds the configured experts, fits them on `training` and warms the gate
/// on the second half of it.
pub fn prepare_ensemble(cfg: &ExperimentConfig, net: &Network, training: &TimeSeries) -> Result<Ensemble, HarnessError> {
    let experts = cfg
        .forecast
        .experts
        .iter()
        .map(|n| expert_by_name(n, cfg.demand.period))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ensemble = Ensemble::new(experts, &cfg.gate)?.input_window(cfg.forecast.input_window);
    ensemble.fit(training, net)?;
    for t in (training.len() / 2).max(cfg.forecast.input_window)..training.len() {
        let f = ensemble.predict(&training.frames[..t], net)?;
        ensemble.observe(&f, &training.frames[t], false)?;
    }
    Ok(ensemble)
}

/// One continuous history; evaluation frames are renumbered after the
/// training series so experts see a monotone clock.
fn joined_history(training: &TimeSeries, evaluation: &TimeSeries) -> Vec<StateFrame> {
    let n = training.len();
    let mut history = training.frames.clone();
    history.extend(evaluation.frames.iter().enumerate().map(|(i, f)| StateFrame {
        t: n + i,
        states: f.states.clone(),
    }));
    history
}

/// One-step-ahead forecasts for every frame of `evaluation`, with the gate
/// updated online and no anomaly masking. Returned frames carry the
/// evaluation steps.
pub fn forecast_series(
    cfg: &ExperimentConfig,
    net: &Network,
    training: &TimeSeries,
    evaluation: &TimeSeries,
) -> Result<Vec<StateFrame>, HarnessError> {
    let mut ensemble = prepare_ensemble(cfg, net, training)?;
    let history = joined_history(training, evaluation);
    let n = training.len();
    let mut out = Vec::with_capacity(evaluation.len());
    for (i, actual) in evaluation.frames.iter().enumerate() {
        let forecast = ensemble.predict(&history[..n + i], net)?;
        ensemble.observe(&forecast, &history[n + i], false)?;
        let mut frame = forecast.combined;
        frame.t = actual.t;
        out.push(frame);
    }
    Ok(out)
}

fn score_localization(net: &Network, leak: &str, found: &str) -> LocalizationHit {
    if leak == found {
        return LocalizationHit::Exact;
    }
    let (Ok(a), Ok(b)) = (net.conduit_idx(leak), net.conduit_idx(found)) else {
        return LocalizationHit::Miss;
    };
    let (a0, a1) = net.ends(a);
    let (b0, b1) = net.ends(b);
    if a0 == b0 || a0 == b1 || a1 == b0 || a1 == b1 {
        LocalizationHit::Adjacent
    } else {
        LocalizationHit::Miss
    }
}

fn case_id(scenario: Option<&LeakScenario>, seed: u64) -> String {
    match scenario {
        Some(s) => format!("{}:{}", s.conduit_id, s.kind),
        None => format!("control:{seed:016x}"),
    }
}

/// Runs one case. Module errors are recorded in the result rather than
/// returned.
pub fn run_case(cfg: &ExperimentConfig, net: &Network, scenario: Option<&LeakScenario>, seed: u64) -> CaseResult {
    let id = case_id(scenario, seed);
    match try_run_case(cfg, net, scenario, seed) {
        Ok(mut r) => {
            r.case_id = id;
            r
        }
        Err(e) => {
            log::warn!("case {id} failed: {e}");
            CaseResult::failed(id, scenario.cloned(), seed, &e)
        }
    }
}

fn try_run_case(
    cfg: &ExperimentConfig,
    net: &Network,
    scenario: Option<&LeakScenario>,
    seed: u64,
) -> Result<CaseResult, HarnessError> {
    let run = run_pipeline(cfg, net, scenario, seed)?;
    let start = scenario.map(|s| s.start_step);
    let (before, after): (Vec<AnomalyEvent>, Vec<AnomalyEvent>) = run
        .events
        .iter()
        .cloned()
        .partition(|e| start.is_none_or(|s| e.detected_at < s));

    let mut result = CaseResult {
        case_id: String::new(),
        scenario: scenario.cloned(),
        seed,
        detected: false,
        detection_delay: -1,
        within_10: false,
        localization_hit: LocalizationHit::Miss,
        localized_conduit: None,
        false_alarms_pre_leak: before.len(),
        events: run.events.clone(),
        error: None,
    };
    if let (Some(s), Some(first)) = (scenario, after.iter().map(|e| e.detected_at).min()) {
        let delay = (first - s.start_step) as i64;
        result.detected = true;
        result.detection_delay = delay;
        result.within_10 = delay <= 10;
        let set: Vec<String> = co_anomalous(&after, cfg.rtca.persist).into_iter().collect();
        let loc = localize(net, &set)?;
        if let Some(best) = loc.best() {
            result.localization_hit = score_localization(net, &s.conduit_id, &best.conduit);
            result.localized_conduit = Some(best.conduit.clone());
        }
    }
    Ok(result)
}

/// A case to run: a leak scenario or a leak-free control, with its seed.
#[derive(Debug, Clone)]
pub struct CaseSpec {
    pub scenario: Option<LeakScenario>,
    pub seed: u64,
}

/// Leak cases for every generated scenario plus `cfg.controls` controls,
/// each with a seed derived from the root seed.
pub fn plan_cases(cfg: &ExperimentConfig, net: &Network) -> Vec<CaseSpec> {
    let scenarios = generate_scenarios(net, &cfg.scenarios, cfg.seed);
    let mut cases: Vec<CaseSpec> = scenarios
        .into_iter()
        .map(|s| {
            let c = net.conduit_idx(&s.conduit_id).unwrap_or(0) as u64;
            let k = LeakKind::ALL.iter().position(|k| *k == s.kind).unwrap_or(0) as u64;
            CaseSpec {
                seed: derive_seed(cfg.seed, c * LeakKind::ALL.len() as u64 + k),
                scenario: Some(s),
            }
        })
        .collect();
    cases.extend((0..cfg.controls).map(|i| CaseSpec {
        scenario: None,
        seed: control_seed(cfg.seed, i),
    }));
    cases
}

pub fn control_seed(root: u64, index: usize) -> u64 {
    derive_seed(root ^ CONTROL_STREAM, index as u64)
}

/// Runs cases in parallel; results keep the input order.
pub fn run_batch(cfg: &ExperimentConfig, net: &Network, cases: &[CaseSpec]) -> Vec<CaseResult> {
    cases
        .par_iter()
        .map(|c| run_case(cfg, net, c.scenario.as_ref(), c.seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub cases: usize,
    pub detected: usize,
    pub detection_rate: f64,
    /// Mean delay over detected cases; `None` if nothing was detected.
    pub mean_delay: Option<f64>,
    /// Share of detected cases confirmed within 10 steps.
    pub within_10_rate: f64,
    /// Share of detected cases whose top segment is exact or adjacent.
    pub localization_accuracy: f64,
    pub exact_localizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_kind: BTreeMap<String, KindSummary>,
    pub overall: KindSummary,
    pub control_cases: usize,
    /// Confirmed events in leak-free controls.
    pub false_alarms: usize,
    /// Confirmed events before leak onset in leak cases.
    pub false_alarms_pre_leak: usize,
    pub failed_cases: usize,
}

fn summarize<'a>(cases: impl Iterator<Item = &'a CaseResult>) -> KindSummary {
    let mut n = 0;
    let mut detected = 0;
    let mut delay_sum = 0i64;
    let mut within = 0;
    let mut located = 0;
    let mut exact = 0;
    for c in cases {
        n += 1;
        if c.detected {
            detected += 1;
            delay_sum += c.detection_delay;
            within += usize::from(c.within_10);
            match c.localization_hit {
                LocalizationHit::Exact => {
                    located += 1;
                    exact += 1;
                }
                LocalizationHit::Adjacent => located += 1,
                LocalizationHit::Miss => {}
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    KindSummary {
        cases: n,
        detected,
        detection_rate: ratio(detected, n),
        mean_delay: (detected > 0).then(|| delay_sum as f64 / detected as f64),
        within_10_rate: ratio(within, detected),
        localization_accuracy: ratio(located, detected),
        exact_localizations: exact,
    }
}

/// Aggregates case results. Depends only on the multiset of cases.
pub fn evaluate(cases: &[CaseResult]) -> Result<EvaluationReport, HarnessError> {
    if cases.is_empty() {
        return Err(HarnessError::NoCases);
    }
    let leak: Vec<&CaseResult> = cases.iter().filter(|c| c.scenario.is_some()).collect();
    let kinds: BTreeSet<LeakKind> = leak.iter().filter_map(|c| c.kind()).collect();
    let per_kind = kinds
        .into_iter()
        .map(|k| {
            (
                k.label().to_string(),
                summarize(leak.iter().copied().filter(|c| c.kind() == Some(k))),
            )
        })
        .collect();
    let controls: Vec<&CaseResult> = cases.iter().filter(|c| c.scenario.is_none()).collect();
    Ok(EvaluationReport {
        per_kind,
        overall: summarize(leak.iter().copied()),
        control_cases: controls.len(),
        false_alarms: controls.iter().map(|c| c.events.len()).sum(),
        false_alarms_pre_leak: leak.iter().map(|c| c.false_alarms_pre_leak).sum(),
        failed_cases: cases.iter().filter(|c| c.error.is_some()).count(),
    })
}

/// Plans, runs and evaluates the full batch.
pub fn run_evaluation(cfg: &ExperimentConfig) -> Result<(Vec<CaseResult>, EvaluationReport), HarnessError> {
    cfg.validate()?;
    let net = cfg.network()?;
    let cases = run_batch(cfg, &net, &plan_cases(cfg, &net));
    let report = evaluate(&cases)?;
    Ok((cases, report))
}
