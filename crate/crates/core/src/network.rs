//! Directed pipeline graph: junction nodes, conduits and the topology queries
//! every other stage relies on (upstream sets, topological order, betweenness,
//! undirected hop distance).
//!
//! Flow direction is fixed by the conduit orientation in the input document.
//! The graph must be acyclic, free of self-loops and parallel conduits, and
//! must drain to at least one outfall (a node with no outgoing conduit).

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("empty network")]
    Empty,
    #[error("empty id")]
    EmptyId,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("duplicate conduit id `{0}`")]
    DuplicateConduit(String),
    #[error("conduit `{conduit}` references unknown node `{node}`")]
    DanglingEndpoint { conduit: String, node: String },
    #[error("self-loop on conduit `{0}`")]
    SelfLoop(String),
    #[error("parallel conduits between `{0}` and `{1}`")]
    ParallelConduit(String, String),
    #[error("cycle detected through node `{0}`")]
    Cycle(String),
    #[error("nonpositive {field} on `{id}`: {value}")]
    NonPositive {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("invalid {field} on node `{id}`: {value}")]
    OutOfRange {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("node `{0}` is flagged as outfall but has outgoing conduits")]
    OutfallWithOutflow(String),
    #[error("no outfall node")]
    NoOutfall,
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("unknown conduit id `{0}`")]
    UnknownConduit(String),
}

/// Junction or outfall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    #[serde(rename = "elevation_m")]
    pub elevation: f64,
    /// Lateral inflow entering the network at this node (m³/s).
    #[serde(rename = "base_demand_m3s")]
    pub base_demand: f64,
    #[serde(default)]
    pub risk: f64,
    #[serde(default)]
    pub is_outfall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConduitSpec {
    pub id: String,
    #[serde(rename = "from")]
    pub from_node: String,
    #[serde(rename = "to")]
    pub to_node: String,
    #[serde(rename = "length_m")]
    pub length: f64,
    #[serde(rename = "diameter_m")]
    pub diameter: f64,
    #[serde(rename = "hazen_williams_c")]
    pub hw_coefficient: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDocument {
    nodes: Vec<NodeSpec>,
    conduits: Vec<ConduitSpec>,
}

/// Validated, immutable pipeline network. Nodes and conduits keep their file
/// order; internal indices are positions in those lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<NodeSpec>,
    conduits: Vec<ConduitSpec>,
    node_index: HashMap<String, usize>,
    conduit_index: HashMap<String, usize>,
    /// Conduit endpoints as node indices.
    ends: Vec<(usize, usize)>,
    /// Outgoing conduit indices per node.
    out_edges: Vec<Vec<usize>>,
    /// Incoming conduit indices per node.
    in_edges: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl Network {
    /// Parses and validates a network JSON document.
    pub fn from_json(source: &str) -> Result<Self, NetworkError> {
        let doc: NetworkDocument = serde_json::from_str(source)?;
        Self::new(doc.nodes, doc.conduits)
    }

    pub fn new(nodes: Vec<NodeSpec>, conduits: Vec<ConduitSpec>) -> Result<Self, NetworkError> {
        if nodes.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.id.is_empty() {
                return Err(NetworkError::EmptyId);
            }
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateNode(n.id.clone()));
            }
            if !(n.base_demand >= 0.0) || !n.base_demand.is_finite() {
                return Err(NetworkError::OutOfRange {
                    id: n.id.clone(),
                    field: "base_demand_m3s",
                    value: n.base_demand,
                });
            }
            if !(0.0..=1.0).contains(&n.risk) {
                return Err(NetworkError::OutOfRange {
                    id: n.id.clone(),
                    field: "risk",
                    value: n.risk,
                });
            }
            if !n.elevation.is_finite() {
                return Err(NetworkError::OutOfRange {
                    id: n.id.clone(),
                    field: "elevation_m",
                    value: n.elevation,
                });
            }
        }

        let mut conduit_index = HashMap::with_capacity(conduits.len());
        let mut ends = Vec::with_capacity(conduits.len());
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut in_edges = vec![Vec::new(); nodes.len()];
        let mut pairs = BTreeSet::new();
        for (k, c) in conduits.iter().enumerate() {
            if c.id.is_empty() {
                return Err(NetworkError::EmptyId);
            }
            if conduit_index.insert(c.id.clone(), k).is_some() {
                return Err(NetworkError::DuplicateConduit(c.id.clone()));
            }
            let lookup = |node: &str| {
                node_index
                    .get(node)
                    .copied()
                    .ok_or_else(|| NetworkError::DanglingEndpoint {
                        conduit: c.id.clone(),
                        node: node.to_string(),
                    })
            };
            let from = lookup(&c.from_node)?;
            let to = lookup(&c.to_node)?;
            if from == to {
                return Err(NetworkError::SelfLoop(c.id.clone()));
            }
            for (field, value) in [
                ("length_m", c.length),
                ("diameter_m", c.diameter),
                ("hazen_williams_c", c.hw_coefficient),
            ] {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(NetworkError::NonPositive {
                        id: c.id.clone(),
                        field,
                        value,
                    });
                }
            }
            let key = (from.min(to), from.max(to));
            if !pairs.insert(key) {
                return Err(NetworkError::ParallelConduit(
                    nodes[key.0].id.clone(),
                    nodes[key.1].id.clone(),
                ));
            }
            ends.push((from, to));
            out_edges[from].push(k);
            in_edges[to].push(k);
        }

        for (i, n) in nodes.iter().enumerate() {
            if n.is_outfall && !out_edges[i].is_empty() {
                return Err(NetworkError::OutfallWithOutflow(n.id.clone()));
            }
        }
        if out_edges.iter().all(|e| !e.is_empty()) {
            return Err(NetworkError::NoOutfall);
        }

        let topo = topological_order(&nodes, &ends, &in_edges, &out_edges)?;

        Ok(Self {
            nodes,
            conduits,
            node_index,
            conduit_index,
            ends,
            out_edges,
            in_edges,
            topo,
        })
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkDocument {
            nodes: self.nodes.clone(),
            conduits: self.conduits.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn conduits(&self) -> &[ConduitSpec] {
        &self.conduits
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn conduit_count(&self) -> usize {
        self.conduits.len()
    }

    pub fn node(&self, idx: usize) -> &NodeSpec {
        &self.nodes[idx]
    }

    pub fn conduit(&self, idx: usize) -> &ConduitSpec {
        &self.conduits[idx]
    }

    pub fn node_idx(&self, id: &str) -> Result<usize, NetworkError> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownNode(id.to_string()))
    }

    pub fn conduit_idx(&self, id: &str) -> Result<usize, NetworkError> {
        self.conduit_index
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownConduit(id.to_string()))
    }

    /// `(from, to)` node indices of a conduit.
    pub fn ends(&self, conduit: usize) -> (usize, usize) {
        self.ends[conduit]
    }

    pub fn out_conduits(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    pub fn in_conduits(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn is_outfall(&self, node: usize) -> bool {
        self.out_edges[node].is_empty()
    }

    pub fn parents(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.in_edges[node].iter().map(move |&c| self.ends[c].0)
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges[node].iter().map(move |&c| self.ends[c].1)
    }

    /// Undirected neighbours, sorted and deduplicated.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.parents(node).chain(self.children(node)).collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    /// Nodes in an order where every conduit points forward.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Indices of every node with a directed path to `node`, excluding `node`.
    pub fn upstream_indices(&self, node: usize) -> BTreeSet<usize> {
        self.reach(node, |n| self.parents(n).collect())
    }

    /// Indices of every node reachable from `node`, excluding `node`.
    pub fn downstream_indices(&self, node: usize) -> BTreeSet<usize> {
        self.reach(node, |n| self.children(n).collect())
    }

    fn reach<F>(&self, start: usize, next: F) -> BTreeSet<usize>
    where
        F: Fn(usize) -> Vec<usize>,
    {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for m in next(n) {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        seen
    }

    pub fn upstream_set(&self, id: &str) -> Result<BTreeSet<String>, NetworkError> {
        let v = self.node_idx(id)?;
        Ok(self
            .upstream_indices(v)
            .into_iter()
            .map(|i| self.nodes[i].id.clone())
            .collect())
    }

    /// Undirected shortest hop count, `None` when the nodes are disconnected.
    pub fn hop_distance(&self, u: &str, v: &str) -> Result<Option<usize>, NetworkError> {
        let (u, v) = (self.node_idx(u)?, self.node_idx(v)?);
        Ok(self.hop_distances_from(u)[v])
    }

    /// Undirected BFS distances from `source` to every node.
    pub fn hop_distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n].unwrap();
            for m in self.neighbors(n) {
                if dist[m].is_none() {
                    dist[m] = Some(d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    /// Steady flow leaving each node when every node contributes exactly its
    /// base demand and outflow splits by conduit conveyance.
    pub fn nominal_flows(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.nodes.len()];
        let mut inflow: Vec<f64> = self.nodes.iter().map(|n| n.base_demand).collect();
        for &v in &self.topo {
            q[v] = inflow[v];
            for (c, share) in self.outflow_shares(v) {
                inflow[self.ends[c].1] += share * q[v];
            }
        }
        q
    }

    /// Fraction of a node's outflow carried by each outgoing conduit,
    /// proportional to Hazen-Williams conveyance `C·D^2.63 / L^0.54`.
    pub fn outflow_shares(&self, node: usize) -> Vec<(usize, f64)> {
        let out = &self.out_edges[node];
        match out.len() {
            0 => Vec::new(),
            1 => vec![(out[0], 1.0)],
            _ => {
                let k: Vec<f64> = out
                    .iter()
                    .map(|&c| {
                        let s = &self.conduits[c];
                        s.hw_coefficient * s.diameter.powf(2.63) / s.length.powf(0.54)
                    })
                    .collect();
                let total: f64 = k.iter().sum();
                out.iter().zip(k).map(|(&c, ki)| (c, ki / total)).collect()
            }
        }
    }

    /// Returns a copy of the network with `conduit` split at its midpoint by a
    /// new junction. The two halves are `<id>#a` and `<id>#b`, the junction
    /// is `<id>#mid` at mean elevation with zero demand. The junction is
    /// appended, so original node indices are unchanged.
    pub fn split_conduit(&self, conduit: &str) -> Result<(Network, usize), NetworkError> {
        let k = self.conduit_idx(conduit)?;
        let c = &self.conduits[k];
        let (from, to) = self.ends[k];
        let mid_id = format!("{}#mid", c.id);
        let mid = NodeSpec {
            id: mid_id.clone(),
            elevation: 0.5 * (self.nodes[from].elevation + self.nodes[to].elevation),
            base_demand: 0.0,
            risk: 0.0,
            is_outfall: false,
        };
        let mut nodes = self.nodes.clone();
        nodes.push(mid);
        let mut conduits = self.conduits.clone();
        let half = |suffix: &str, a: &str, b: &str| ConduitSpec {
            id: format!("{}#{suffix}", c.id),
            from_node: a.to_string(),
            to_node: b.to_string(),
            length: 0.5 * c.length,
            diameter: c.diameter,
            hw_coefficient: c.hw_coefficient,
        };
        let first = half("a", &c.from_node, &mid_id);
        let second = half("b", &mid_id, &c.to_node);
        conduits[k] = first;
        conduits.push(second);
        let split = Network::new(nodes, conduits)?;
        let mid_idx = split.node_count() - 1;
        Ok((split, mid_idx))
    }
}

fn topological_order(
    nodes: &[NodeSpec],
    ends: &[(usize, usize)],
    in_edges: &[Vec<usize>],
    out_edges: &[Vec<usize>],
) -> Result<Vec<usize>, NetworkError> {
    // Kahn's algorithm with a FIFO seeded in file order keeps the order stable.
    let mut indeg: Vec<usize> = in_edges.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(n) = queue.pop_front() {
        order.push(n);
        for &c in &out_edges[n] {
            let m = ends[c].1;
            indeg[m] -= 1;
            if indeg[m] == 0 {
                queue.push_back(m);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).find(|&i| indeg[i] > 0).unwrap();
        return Err(NetworkError::Cycle(nodes[stuck].id.clone()));
    }
    Ok(order)
}

/// Directed shortest-path betweenness with unit edge weights, counting each
/// ordered `(s, t)` pair once (no normalization).
pub fn betweenness(net: &Network) -> Vec<f64> {
    let n = net.node_count();
    let mut cb = vec![0.0; n];
    let mut sigma = vec![0.0_f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut delta = vec![0.0; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        sigma.iter_mut().for_each(|x| *x = 0.0);
        dist.iter_mut().for_each(|x| *x = usize::MAX);
        delta.iter_mut().for_each(|x| *x = 0.0);
        preds.iter_mut().for_each(Vec::clear);
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut stack = Vec::with_capacity(n);
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for w in net.children(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    cb
}

/// Betweenness keyed by node id.
pub fn betweenness_map(net: &Network) -> Vec<(String, f64)> {
    net.nodes()
        .iter()
        .map(|n| n.id.clone())
        .zip(betweenness(net))
        .collect()
}
