//! Upstream-minimal source identification over the confirmed anomaly set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, NetworkError};
use crate::rtca::AnomalyEvent;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("flow vector has {got} entries, network has {expected} nodes")]
    Flows { expected: usize, got: usize },
}

/// One implicated conduit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub conduit: String,
    pub source: String,
    /// Normal node feeding the source through this conduit; `None` when the
    /// source has no upstream and the conduit is its outgoing one.
    pub upstream: Option<String>,
    /// Flow used for ranking.
    pub flow: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub sources: Vec<String>,
    /// Conduit ids in rank order.
    pub segments: Vec<String>,
    pub ranked_candidates: Vec<Candidate>,
    pub anomaly_set_snapshot: Vec<String>,
}

impl LocalizationResult {
    pub fn best(&self) -> Option<&Candidate> {
        self.ranked_candidates.first()
    }
}

/// Nodes whose first confirmation falls within `grace` steps of the earliest
/// confirmation.
pub fn co_anomalous(events: &[AnomalyEvent], grace: usize) -> BTreeSet<String> {
    let Some(t0) = events.iter().map(|e| e.detected_at).min() else {
        return BTreeSet::new();
    };
    events
        .iter()
        .filter(|e| e.detected_at <= t0 + grace)
        .map(|e| e.node.clone())
        .collect()
}

/// Localizes using nominal network flows for ranking.
pub fn localize<S: AsRef<str>>(net: &Network, anomalous: &[S]) -> Result<LocalizationResult, LocalizationError> {
    localize_with_flows(net, anomalous, &net.nominal_flows())
}

/// Sources are anomalous nodes with no anomalous strict upstream node. Each
/// source implicates every conduit from a parent into it, ranked by parent
/// flow (descending, ties by conduit id).
pub fn localize_with_flows<S: AsRef<str>>(
    net: &Network,
    anomalous: &[S],
    flows: &[f64],
) -> Result<LocalizationResult, LocalizationError> {
    if flows.len() != net.node_count() {
        return Err(LocalizationError::Flows {
            expected: net.node_count(),
            got: flows.len(),
        });
    }
    let set: BTreeSet<usize> = anomalous
        .iter()
        .map(|id| net.node_idx(id.as_ref()))
        .collect::<Result<_, _>>()?;
    if set.is_empty() {
        return Ok(LocalizationResult::default());
    }

    let anomalous_upstream = |v: usize| net.upstream_indices(v).intersection(&set).count();
    let mut sources: Vec<usize> = set.iter().copied().filter(|&v| anomalous_upstream(v) == 0).collect();
    if sources.is_empty() {
        // Unreachable on a DAG; kept as the relaxed argmin rule.
        let best = set.iter().map(|&v| anomalous_upstream(v)).min().unwrap_or(0);
        sources = set.iter().copied().filter(|&v| anomalous_upstream(v) == best).collect();
    }

    let mut candidates = Vec::new();
    for &s in &sources {
        let source = net.node(s).id.clone();
        let incoming = net.in_conduits(s);
        if incoming.is_empty() {
            for &c in net.out_conduits(s) {
                candidates.push(Candidate {
                    conduit: net.conduit(c).id.clone(),
                    source: source.clone(),
                    upstream: None,
                    flow: flows[s],
                });
            }
        } else {
            for &c in incoming {
                let p = net.ends(c).0;
                candidates.push(Candidate {
                    conduit: net.conduit(c).id.clone(),
                    source: source.clone(),
                    upstream: Some(net.node(p).id.clone()),
                    flow: flows[p],
                });
            }
        }
    }
    candidates.sort_by(|a, b| b.flow.total_cmp(&a.flow).then_with(|| a.conduit.cmp(&b.conduit)));

    let mut source_ids: Vec<String> = sources.iter().map(|&v| net.node(v).id.clone()).collect();
    source_ids.sort();
    let mut snapshot: Vec<String> = set.iter().map(|&v| net.node(v).id.clone()).collect();
    snapshot.sort();
    Ok(LocalizationResult {
        sources: source_ids,
        segments: candidates.iter().map(|c| c.conduit.clone()).collect(),
        ranked_candidates: candidates,
        anomaly_set_snapshot: snapshot,
    })
}
