//! Severity classification, maintenance prioritisation and deterministic
//! report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::localization::LocalizationResult;
use crate::network::{betweenness, Network, NetworkError};
use crate::rtca::AnomalyEvent;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("template is missing placeholder {{{{{0}}}}}")]
    MalformedTemplate(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("text generation failed: {0}")]
    Generator(String),
}

pub const SECTIONS: [&str; 4] = ["executive_summary", "technical_details", "resources", "safety_notes"];

pub const DEFAULT_TEMPLATE: &str = "\
MAINTENANCE REPORT
==================

Summary
-------
{{executive_summary}}

Technical details
-----------------
{{technical_details}}

Resources
---------
{{resources}}

Safety
------
{{safety_notes}}
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Minor,
    Major,
    Critical,
}

impl Severity {
    pub fn name(self) -> &'static str {
        match self {
            Severity::Minor => "minor",
            Severity::Major => "major",
            Severity::Critical => "critical",
        }
    }
}

pub fn classify_severity(confidence: f64, e_rt: f64) -> Severity {
    if confidence > 0.9 && e_rt > 0.3 {
        Severity::Critical
    } else if confidence > 0.7 && e_rt > 0.15 {
        Severity::Major
    } else {
        Severity::Minor
    }
}

pub fn priority(confidence: f64, centrality: f64, impact: f64) -> f64 {
    confidence * centrality * impact
}

/// Fraction of the network strictly downstream of `node`.
pub fn impact(net: &Network, node: usize) -> f64 {
    net.downstream_indices(node).len() as f64 / net.node_count() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceItem {
    pub node: String,
    pub severity: Severity,
    pub confidence: f64,
    pub priority: f64,
    pub impact: f64,
    pub centrality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub executive_summary: String,
    pub technical_details: String,
    pub resources: String,
    pub safety_notes: String,
    pub items: Vec<MaintenanceItem>,
    /// SHA-256 over the events, localization, network and template.
    pub inputs_digest: String,
    /// The template with every section filled in.
    pub text: String,
}

/// External text-generation endpoint. Unused unless the caller opts in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub endpoint: Option<String>,
    pub model: String,
    /// Template file; the built-in template when absent.
    pub template: Option<std::path::PathBuf>,
}

/// Text-in, text-out rewriting of a drafted section.
pub trait TextGenerator {
    fn generate(&self, section: &str, draft: &str) -> Result<String, ReportError>;
}

/// Returns drafts unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct Passthrough;

impl TextGenerator for Passthrough {
    fn generate(&self, _section: &str, draft: &str) -> Result<String, ReportError> {
        Ok(draft.to_string())
    }
}

#[cfg(feature = "remote-text")]
pub use remote::HttpTextGenerator;

#[cfg(feature = "remote-text")]
mod remote {
    use super::{ReportError, TextGenerator};

    /// Posts `{"model", "section", "prompt"}` to an endpoint and reads back
    /// `{"text"}`.
    #[derive(Debug, Clone)]
    pub struct HttpTextGenerator {
        pub url: String,
        pub model: String,
    }

    impl TextGenerator for HttpTextGenerator {
        fn generate(&self, section: &str, draft: &str) -> Result<String, ReportError> {
            let body = serde_json::json!({
                "model": self.model,
                "section": section,
                "prompt": draft,
            });
            let mut resp = ureq::post(&self.url)
                .send_json(&body)
                .map_err(|e| ReportError::Generator(e.to_string()))?;
            let value: serde_json::Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| ReportError::Generator(e.to_string()))?;
            value
                .get("text")
                .and_then(|t| t.as_str())
                .map(str::to_string)
                .ok_or_else(|| ReportError::Generator("response has no `text` field".into()))
        }
    }
}

pub fn validate_template(template: &str) -> Result<(), ReportError> {
    for s in SECTIONS {
        if !template.contains(&format!("{{{{{s}}}}}")) {
            return Err(ReportError::MalformedTemplate(s.to_string()));
        }
    }
    Ok(())
}

/// Ranked maintenance items, one per event node (earliest event wins).
pub fn maintenance_items(events: &[AnomalyEvent], net: &Network) -> Result<Vec<MaintenanceItem>, ReportError> {
    let cb = betweenness(net);
    let mut items: Vec<MaintenanceItem> = Vec::new();
    let mut sorted: Vec<&AnomalyEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.detected_at.cmp(&b.detected_at).then_with(|| a.node.cmp(&b.node)));
    for e in sorted {
        if items.iter().any(|i| i.node == e.node) {
            continue;
        }
        let v = net.node_idx(&e.node)?;
        let imp = impact(net, v);
        items.push(MaintenanceItem {
            node: e.node.clone(),
            severity: classify_severity(e.confidence, e.e_rt),
            confidence: e.confidence,
            priority: priority(e.confidence, cb[v], imp),
            impact: imp,
            centrality: cb[v],
        });
    }
    items.sort_by(|a, b| {
        b.priority
            .total_cmp(&a.priority)
            .then_with(|| b.severity.cmp(&a.severity))
            .then_with(|| a.node.cmp(&b.node))
    });
    Ok(items)
}

pub fn render_report(
    events: &[AnomalyEvent],
    localization: &LocalizationResult,
    net: &Network,
    template: &str,
) -> Result<Report, ReportError> {
    render_report_with(events, localization, net, template, &Passthrough)
}

pub fn render_report_with(
    events: &[AnomalyEvent],
    localization: &LocalizationResult,
    net: &Network,
    template: &str,
    generator: &dyn TextGenerator,
) -> Result<Report, ReportError> {
    validate_template(template)?;
    let items = maintenance_items(events, net)?;

    let executive_summary = generator.generate("executive_summary", &summary(events, localization, &items))?;
    let technical_details = generator.generate("technical_details", &details(events, localization, &items))?;
    let resources = generator.generate("resources", &resources(&items))?;
    let safety_notes = generator.generate("safety_notes", &safety(&items))?;

    let mut text = template.to_string();
    for (key, body) in [
        ("executive_summary", &executive_summary),
        ("technical_details", &technical_details),
        ("resources", &resources),
        ("safety_notes", &safety_notes),
    ] {
        text = text.replace(&format!("{{{{{key}}}}}"), body);
    }

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(events).unwrap_or_default());
    hasher.update(serde_json::to_vec(localization).unwrap_or_default());
    hasher.update(net.to_json().as_bytes());
    hasher.update(template.as_bytes());
    let inputs_digest = hex::encode(hasher.finalize());

    Ok(Report {
        executive_summary,
        technical_details,
        resources,
        safety_notes,
        items,
        inputs_digest,
        text,
    })
}

fn summary(events: &[AnomalyEvent], loc: &LocalizationResult, items: &[MaintenanceItem]) -> String {
    let Some(top) = items.first() else {
        return "No anomalies detected in the monitored period.".to_string();
    };
    let mut s = format!(
        "{} anomaly event(s) confirmed at {} node(s). Highest priority: node {} ({}, priority {:.4}).",
        events.len(),
        items.len(),
        top.node,
        top.severity.name(),
        top.priority
    );
    if let Some(c) = loc.best() {
        let _ = write!(s, " Most likely leak segment: conduit {} upstream of {}.", c.conduit, c.source);
    }
    s
}

fn details(events: &[AnomalyEvent], loc: &LocalizationResult, items: &[MaintenanceItem]) -> String {
    if events.is_empty() {
        return "No detector confirmed an anomaly.".to_string();
    }
    let mut s = String::from("node | detected_at | confidence | e_rt | e_c\n");
    let mut sorted: Vec<&AnomalyEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.detected_at.cmp(&b.detected_at).then_with(|| a.node.cmp(&b.node)));
    for e in sorted {
        let _ = writeln!(
            s,
            "{} | {} | {:.4} | {:.4} | {:.4}",
            e.node, e.detected_at, e.confidence, e.e_rt, e.e_c
        );
    }
    s.push_str("\nPriority ranking:\n");
    for (i, it) in items.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}. {} severity={} priority={:.6} centrality={:.2} impact={:.4}",
            i + 1,
            it.node,
            it.severity.name(),
            it.priority,
            it.centrality,
            it.impact
        );
    }
    if !loc.sources.is_empty() {
        let _ = writeln!(s, "\nSource nodes: {}", loc.sources.join(", "));
        let _ = write!(s, "Candidate segments: {}", loc.segments.join(", "));
    }
    s.trim_end().to_string()
}

fn resources(items: &[MaintenanceItem]) -> String {
    match items.iter().map(|i| i.severity).max() {
        None => "No crew dispatch required.".to_string(),
        Some(Severity::Critical) => {
            "Dispatch an inspection crew with CCTV pipe camera and bypass pumping equipment.".to_string()
        }
        Some(Severity::Major) => "Schedule a CCTV inspection of the candidate segments within 24 hours.".to_string(),
        Some(Severity::Minor) => "Add the candidate segments to the next routine inspection round.".to_string(),
    }
}

fn safety(items: &[MaintenanceItem]) -> String {
    if items.is_empty() {
        "No additional precautions.".to_string()
    } else {
        "Follow confined-space entry procedures; test the atmosphere before entering manholes \
         and keep traffic control in place around open access points."
            .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ConduitSpec, NodeSpec};

    fn net() -> Network {
        let nodes = ["J1", "J7", "J9", "OUT"]
            .iter()
            .map(|id| NodeSpec {
                id: id.to_string(),
                elevation: 1.0,
                base_demand: 0.01,
                risk: 0.0,
                is_outfall: false,
            })
            .collect();
        let conduits = [("C1", "J1", "J7"), ("C2", "J7", "J9"), ("C3", "J9", "OUT")]
            .iter()
            .map(|(id, a, b)| ConduitSpec {
                id: id.to_string(),
                from_node: a.to_string(),
                to_node: b.to_string(),
                length: 10.0,
                diameter: 0.3,
                hw_coefficient: 120.0,
            })
            .collect();
        Network::new(nodes, conduits).unwrap()
    }

    fn event(node: &str, conf: f64, e_rt: f64) -> AnomalyEvent {
        AnomalyEvent {
            node: node.into(),
            detected_at: 500,
            confidence: conf,
            e_rt,
            e_c: e_rt,
        }
    }

    #[test]
    fn severity_branches() {
        assert_eq!(classify_severity(0.95, 0.35), Severity::Critical);
        assert_eq!(classify_severity(0.75, 0.20), Severity::Major);
        assert_eq!(classify_severity(0.95, 0.10), Severity::Minor);
    }

    #[test]
    fn priority_products() {
        assert_eq!(priority(0.0, 3.0, 1.0), 0.0);
        assert_eq!(priority(1.0, 1.0, 1.0), 1.0);
        assert!((priority(0.8, 2.0, 0.5) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_report() {
        let r = render_report(&[], &LocalizationResult::default(), &net(), DEFAULT_TEMPLATE).unwrap();
        assert!(r.items.is_empty());
        assert!(r.executive_summary.contains("No anomalies"));
        assert!(!r.text.contains("{{"));
    }

    #[test]
    fn items_sorted_and_deterministic() {
        let events = vec![event("J9", 0.5, 0.2), event("J7", 0.95, 0.4)];
        let a = render_report(&events, &LocalizationResult::default(), &net(), DEFAULT_TEMPLATE).unwrap();
        let b = render_report(&events, &LocalizationResult::default(), &net(), DEFAULT_TEMPLATE).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.items[0].node, "J7");
        assert_eq!(a.items[0].severity, Severity::Critical);
        assert!(a.items[0].priority >= a.items[1].priority);
    }

    #[test]
    fn malformed_template() {
        let err = render_report(&[], &LocalizationResult::default(), &net(), "{{executive_summary}}").unwrap_err();
        assert!(matches!(err, ReportError::MalformedTemplate(s) if s == "technical_details"));
    }
}
