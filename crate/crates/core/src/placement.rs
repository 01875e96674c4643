//! Sensor placement: weighted node scoring and greedy budgeted selection with
//! a minimum pairwise hop spacing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::TimeSeries;
use crate::network::{betweenness, Network};

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("baseline series is empty")]
    EmptyBaseline,
    #[error("baseline frame has {got} nodes, network has {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("invalid placement config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
    pub d_min: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
            k: 6,
            d_min: 2,
        }
    }
}

impl PlacementConfig {
    /// Default weights with a budget of a quarter of the nodes, rounded up.
    pub fn for_network(net: &Network) -> Self {
        Self {
            k: (net.node_count() as f64 * 0.25).ceil() as usize,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(PlacementError::Config("weights must be nonnegative".into()));
        }
        if !(w.iter().sum::<f64>() > 0.0) {
            return Err(PlacementError::Config("weights must not all be zero".into()));
        }
        if self.k == 0 {
            return Err(PlacementError::Config("sensor budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub node: String,
    pub centrality: f64,
    /// Mean flow times pressure-head range over the baseline.
    pub hydraulic: f64,
    pub risk: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSelection {
    pub selected: Vec<String>,
    /// How many sensors of the budget could not be placed.
    pub shortfall: usize,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// Weighted sum of min-max normalized components.
pub fn combine_scores(
    ids: &[String],
    centrality: &[f64],
    hydraulic: &[f64],
    risk: &[f64],
    cfg: &PlacementConfig,
) -> Vec<NodeScore> {
    let (c, h, r) = (min_max(centrality), min_max(hydraulic), min_max(risk));
    ids.iter()
        .enumerate()
        .map(|(i, id)| NodeScore {
            node: id.clone(),
            centrality: centrality[i],
            hydraulic: hydraulic[i],
            risk: risk[i],
            total: cfg.alpha * c[i] + cfg.beta * h[i] + cfg.gamma * r[i],
        })
        .collect()
}

pub fn score_nodes(
    net: &Network,
    baseline: &TimeSeries,
    cfg: &PlacementConfig,
) -> Result<Vec<NodeScore>, PlacementError> {
    cfg.validate()?;
    if baseline.is_empty() {
        return Err(PlacementError::EmptyBaseline);
    }
    let n = net.node_count();
    if let Some(f) = baseline.frames.iter().find(|f| f.states.len() != n) {
        return Err(PlacementError::FrameSize {
            expected: n,
            got: f.states.len(),
        });
    }
    let len = baseline.len() as f64;
    let hydraulic: Vec<f64> = (0..n)
        .map(|v| {
            let mean_q = baseline.frames.iter().map(|f| f.states[v].flow).sum::<f64>() / len;
            let (lo, hi) = baseline.frames.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), f| (lo.min(f.states[v].pressure), hi.max(f.states[v].pressure)),
            );
            mean_q * (hi - lo)
        })
        .collect();
    let ids: Vec<String> = net.nodes().iter().map(|n| n.id.clone()).collect();
    let risk: Vec<f64> = net.nodes().iter().map(|n| n.risk).collect();
    Ok(combine_scores(&ids, &betweenness(net), &hydraulic, &risk, cfg))
}

/// Greedy selection: highest total first (ties by node id), skipping nodes
/// closer than `d_min` hops to anything already chosen.
pub fn select_sensors(scores: &[NodeScore], net: &Network, cfg: &PlacementConfig) -> SensorSelection {
    let k = cfg.k.min(net.node_count());
    let mut order: Vec<&NodeScore> = scores.iter().collect();
    order.sort_by(|a, b| b.total.total_cmp(&a.total).then_with(|| a.node.cmp(&b.node)));

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut dist_rows: Vec<Vec<Option<usize>>> = Vec::with_capacity(k);
    for s in order {
        if chosen.len() == k {
            break;
        }
        let Ok(v) = net.node_idx(&s.node) else { continue };
        let feasible = dist_rows
            .iter()
            .all(|row| row[v].is_none_or(|d| d >= cfg.d_min));
        if feasible {
            chosen.push(v);
            dist_rows.push(net.hop_distances_from(v));
        }
    }
    SensorSelection {
        selected: chosen.iter().map(|&v| net.node(v).id.clone()).collect(),
        shortfall: cfg.k - chosen.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydraulics::{NodeState, StateFrame};
    use crate::network::{ConduitSpec, NodeSpec};

    fn path(n: usize, risks: &[f64]) -> Network {
        let nodes = (0..n)
            .map(|i| NodeSpec {
                id: format!("N{i}"),
                elevation: (n - i) as f64,
                base_demand: 0.01,
                risk: risks.get(i).copied().unwrap_or(0.0),
                is_outfall: false,
            })
            .collect();
        let conduits = (1..n)
            .map(|i| ConduitSpec {
                id: format!("P{i}"),
                from_node: format!("N{}", i - 1),
                to_node: format!("N{i}"),
                length: 50.0,
                diameter: 0.3,
                hw_coefficient: 120.0,
            })
            .collect();
        Network::new(nodes, conduits).unwrap()
    }

    fn flat_baseline(n: usize) -> TimeSeries {
        TimeSeries {
            dt: 600.0,
            frames: vec![StateFrame {
                t: 0,
                states: vec![NodeState::default(); n],
            }],
        }
    }

    #[test]
    fn degenerate_weights_follow_single_component() {
        let net = path(5, &[0.9, 0.1, 0.5, 0.3, 0.7]);
        let base = flat_baseline(5);
        let only_c = PlacementConfig {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            k: 1,
            d_min: 0,
        };
        let scores = score_nodes(&net, &base, &only_c).unwrap();
        // Path betweenness peaks in the middle.
        assert_eq!(select_sensors(&scores, &net, &only_c).selected, vec!["N2"]);

        let only_r = PlacementConfig {
            alpha: 0.0,
            gamma: 1.0,
            ..only_c
        };
        let scores = score_nodes(&net, &base, &only_r).unwrap();
        assert_eq!(select_sensors(&scores, &net, &only_r).selected, vec!["N0"]);
    }

    #[test]
    fn unconstrained_selects_everything() {
        let net = path(4, &[]);
        let cfg = PlacementConfig {
            k: 4,
            d_min: 0,
            ..Default::default()
        };
        let scores = score_nodes(&net, &flat_baseline(4), &cfg).unwrap();
        let sel = select_sensors(&scores, &net, &cfg);
        assert_eq!(sel.selected.len(), 4);
        assert_eq!(sel.shortfall, 0);
    }

    #[test]
    fn ties_break_by_id() {
        let net = path(3, &[]);
        let cfg = PlacementConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            k: 1,
            d_min: 0,
        };
        let scores = score_nodes(&net, &flat_baseline(3), &cfg).unwrap();
        assert_eq!(select_sensors(&scores, &net, &cfg).selected, vec!["N0"]);
    }

    #[test]
    fn shortfall_reported() {
        let net = path(3, &[]);
        let cfg = PlacementConfig {
            k: 3,
            d_min: 5,
            ..Default::default()
        };
        let scores = score_nodes(&net, &flat_baseline(3), &cfg).unwrap();
        let sel = select_sensors(&scores, &net, &cfg);
        assert_eq!(sel.selected.len(), 1);
        assert_eq!(sel.shortfall, 2);
    }

    #[test]
    fn empty_baseline_rejected() {
        let net = path(2, &[]);
        let empty = TimeSeries {
            dt: 600.0,
            frames: vec![],
        };
        assert!(matches!(
            score_nodes(&net, &empty, &PlacementConfig::default()),
            Err(PlacementError::EmptyBaseline)
        ));
    }
}
