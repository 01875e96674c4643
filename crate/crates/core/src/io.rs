//! CSV and JSON formats used by the command-line tool.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::{AugmentedFrame, Provenance};
use crate::harness::CaseResult;
use crate::hydraulics::{Channel, NodeState, StateFrame, TimeSeries, DEFAULT_DT_SECONDS};
use crate::network::{Network, NetworkError};
use crate::rtca::StepOutput;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("step {step} has {got} of {expected} nodes")]
    IncompleteStep { step: usize, expected: usize, got: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRow {
    step: usize,
    node_id: String,
    flow_m3s: f64,
    depth_m: f64,
    pressure_m: f64,
}

#[derive(Debug, Serialize)]
struct AugmentedRow<'a> {
    step: usize,
    node_id: &'a str,
    flow_m3s: f64,
    depth_m: f64,
    pressure_m: f64,
    provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRow {
    step: usize,
    node_id: String,
    channel: Channel,
    predicted: f64,
    actual: f64,
}

#[derive(Debug, Serialize)]
struct StatusRow<'a> {
    step: usize,
    node_id: &'a str,
    e_rt: f64,
    e_c: f64,
    tau_rt: f64,
    tau_c: f64,
    status: &'static str,
}

#[derive(Debug, Serialize)]
struct CaseRow<'a> {
    case_id: &'a str,
    conduit: &'a str,
    kind: &'a str,
    magnitude_fraction: Option<f64>,
    start_step: Option<usize>,
    seed: u64,
    detected: bool,
    detection_delay: i64,
    within_10: bool,
    localization_hit: String,
    localized_conduit: &'a str,
    events: usize,
    false_alarms_pre_leak: usize,
    error: &'a str,
}

pub fn write_timeseries_csv<W: Write>(out: W, net: &Network, series: &TimeSeries) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for f in &series.frames {
        for (v, s) in f.states.iter().enumerate() {
            w.serialize(StateRow {
                step: f.t,
                node_id: net.node(v).id.clone(),
                flow_m3s: s.flow,
                depth_m: s.depth,
                pressure_m: s.pressure,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-step node readings, keyed by step then node index. Nodes may be any
/// subset of the network.
pub fn read_readings_csv<R: Read>(input: R, net: &Network) -> Result<BTreeMap<usize, BTreeMap<usize, NodeState>>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: BTreeMap<usize, BTreeMap<usize, NodeState>> = BTreeMap::new();
    for (i, row) in r.deserialize::<StateRow>().enumerate() {
        let row = row?;
        let v = net.node_idx(&row.node_id)?;
        let state = NodeState::new(row.flow_m3s, row.depth_m, row.pressure_m);
        if out.entry(row.step).or_default().insert(v, state).is_some() {
            return Err(IoError::Format {
                line: i + 2,
                msg: format!("duplicate reading for {} at step {}", row.node_id, row.step),
            });
        }
    }
    Ok(out)
}

/// A full series; every step must cover every node.
pub fn read_timeseries_csv<R: Read>(input: R, net: &Network) -> Result<TimeSeries, IoError> {
    let readings = read_readings_csv(input, net)?;
    let n = net.node_count();
    let frames = readings
        .into_iter()
        .map(|(t, nodes)| {
            if nodes.len() != n {
                return Err(IoError::IncompleteStep {
                    step: t,
                    expected: n,
                    got: nodes.len(),
                });
            }
            Ok(StateFrame {
                t,
                states: nodes.into_values().collect(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(TimeSeries {
        dt: DEFAULT_DT_SECONDS,
        frames,
    })
}

pub fn write_augmented_csv<W: Write>(out: W, net: &Network, frames: &[AugmentedFrame]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for a in frames {
        for (v, s) in a.frame.states.iter().enumerate() {
            w.serialize(AugmentedRow {
                step: a.frame.t,
                node_id: &net.node(v).id,
                flow_m3s: s.flow,
                depth_m: s.depth,
                pressure_m: s.pressure,
                provenance: a.provenance[v],
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per step, node and channel. `actual` is paired with `predicted`
/// by position.
pub fn write_predictions_csv<W: Write>(
    out: W,
    net: &Network,
    predicted: &[StateFrame],
    actual: &[StateFrame],
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for (p, a) in predicted.iter().zip(actual) {
        for v in 0..p.states.len() {
            for ch in Channel::ALL {
                w.serialize(PredictionRow {
                    step: p.t,
                    node_id: net.node(v).id.clone(),
                    channel: ch,
                    predicted: p.states[v].get(ch),
                    actual: a.states[v].get(ch),
                })?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Predicted frames for `channel`; other channels are left at zero. Every
/// step must cover every node.
pub fn read_predictions_csv<R: Read>(input: R, net: &Network, channel: Channel) -> Result<Vec<StateFrame>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let mut steps: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in r.deserialize::<PredictionRow>() {
        let row = row?;
        if row.channel == channel {
            let v = net.node_idx(&row.node_id)?;
            steps.entry(row.step).or_default().insert(v, row.predicted);
        }
    }
    let n = net.node_count();
    steps
        .into_iter()
        .map(|(t, values)| {
            if values.len() != n {
                return Err(IoError::IncompleteStep {
                    step: t,
                    expected: n,
                    got: values.len(),
                });
            }
            let mut frame = StateFrame::zeros(t, n);
            for (v, x) in values {
                frame.states[v].set(channel, x);
            }
            Ok(frame)
        })
        .collect()
}

/// Detector outputs, `steps[i]` holding one output per node for step `t[i]`.
pub fn write_status_csv<W: Write>(out: W, net: &Network, steps: &[(usize, Vec<StepOutput>)]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for (t, outputs) in steps {
        for (v, o) in outputs.iter().enumerate() {
            w.serialize(StatusRow {
                step: *t,
                node_id: &net.node(v).id,
                e_rt: o.e_rt,
                e_c: o.e_c,
                tau_rt: o.tau_rt,
                tau_c: o.tau_c,
                status: o.status.name(),
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per case; the event list is reduced to a count.
pub fn write_cases_csv<W: Write>(out: W, cases: &[CaseResult]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for c in cases {
        let s = c.scenario.as_ref();
        w.serialize(CaseRow {
            case_id: &c.case_id,
            conduit: s.map_or("", |s| s.conduit_id.as_str()),
            kind: s.map_or("control", |s| s.kind.label()),
            magnitude_fraction: s.map(|s| s.magnitude_fraction),
            start_step: s.map(|s| s.start_step),
            seed: c.seed,
            detected: c.detected,
            detection_delay: c.detection_delay,
            within_10: c.within_10,
            localization_hit: serde_json::to_value(c.localization_hit)?
                .as_str()
                .unwrap_or_default()
                .to_string(),
            localized_conduit: c.localized_conduit.as_deref().unwrap_or(""),
            events: c.events.len(),
            false_alarms_pre_leak: c.false_alarms_pre_leak,
            error: c.error.as_deref().unwrap_or(""),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
