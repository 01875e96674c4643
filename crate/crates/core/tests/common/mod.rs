//! Independent oracles and fixture generators shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use aquasentinel::forecasting::{Expert, ForecastError};
use aquasentinel::hydraulics::{Channel, NodeState, StateFrame};
use aquasentinel::network::{ConduitSpec, Network, NodeSpec};
use aquasentinel::rtca::{DetectorState, RtcaConfig, Status};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn node(id: &str, demand: f64, risk: f64) -> NodeSpec {
    NodeSpec {
        id: id.to_string(),
        elevation: 10.0,
        base_demand: demand,
        risk,
        is_outfall: false,
    }
}

pub fn conduit(id: &str, from: &str, to: &str, length: f64, diameter: f64, c: f64) -> ConduitSpec {
    ConduitSpec {
        id: id.to_string(),
        from_node: from.to_string(),
        to_node: to.to_string(),
        length,
        diameter,
        hw_coefficient: c,
    }
}

/// Random DAG on `n` nodes: a hidden random topological order, each forward
/// pair joined with probability `p`. Node ids are `V0..`, file order is
/// unrelated to the topological order.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, p: f64) -> Network {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let nodes = (0..n)
        .map(|i| node(&format!("V{i}"), rng.random_range(0.001..0.05), rng.random_range(0.0..1.0)))
        .collect();
    let mut conduits = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                let (a, b) = (order[i], order[j]);
                conduits.push(conduit(
                    &format!("E{a}_{b}"),
                    &format!("V{a}"),
                    &format!("V{b}"),
                    rng.random_range(20.0..200.0),
                    rng.random_range(0.15..0.6),
                    rng.random_range(90.0..140.0),
                ));
            }
        }
    }
    Network::new(nodes, conduits).expect("random DAG is valid")
}

/// Random in-tree (every node but the root drains to exactly one node).
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> Network {
    // Node i > 0 drains into a random node with a larger index; the last node
    // is the outfall.
    let nodes: Vec<NodeSpec> = (0..n)
        .map(|i| NodeSpec {
            id: format!("T{i}"),
            elevation: 50.0 - i as f64,
            base_demand: rng.random_range(0.002..0.02),
            risk: 0.0,
            is_outfall: i == n - 1,
        })
        .collect();
    let conduits = (0..n - 1)
        .map(|i| {
            let to = rng.random_range(i + 1..n);
            conduit(
                &format!("P{i}"),
                &format!("T{i}"),
                &format!("T{to}"),
                rng.random_range(30.0..150.0),
                rng.random_range(0.2..0.5),
                rng.random_range(100.0..140.0),
            )
        })
        .collect();
    Network::new(nodes, conduits).expect("random tree is valid")
}

/// Successor lists built straight from the conduit list.
pub fn adjacency(net: &Network) -> Vec<Vec<usize>> {
    let idx = |id: &str| net.nodes().iter().position(|n| n.id == id).unwrap();
    let mut adj = vec![Vec::new(); net.node_count()];
    for c in net.conduits() {
        adj[idx(&c.from_node)].push(idx(&c.to_node));
    }
    adj
}

fn all_paths(adj: &[Vec<usize>], s: usize, t: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if s == t {
        out.push(path.clone());
        return;
    }
    for &m in &adj[s] {
        path.push(m);
        all_paths(adj, m, t, path, out);
        path.pop();
    }
}

/// Unnormalized directed betweenness by enumerating every path between every
/// ordered pair and keeping the shortest ones.
pub fn brute_betweenness(net: &Network) -> Vec<f64> {
    let adj = adjacency(net);
    let n = net.node_count();
    let mut cb = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let mut paths = Vec::new();
            all_paths(&adj, s, t, &mut vec![s], &mut paths);
            let Some(best) = paths.iter().map(Vec::len).min() else {
                continue;
            };
            let shortest: Vec<&Vec<usize>> = paths.iter().filter(|p| p.len() == best).collect();
            for v in 0..n {
                if v == s || v == t {
                    continue;
                }
                let through = shortest.iter().filter(|p| p.contains(&v)).count();
                cb[v] += through as f64 / shortest.len() as f64;
            }
        }
    }
    cb
}

/// Nodes with a path to `v`, by DFS on reversed edges.
pub fn brute_upstream(net: &Network, v: usize) -> BTreeSet<usize> {
    let adj = adjacency(net);
    let mut rev = vec![Vec::new(); net.node_count()];
    for (a, succ) in adj.iter().enumerate() {
        for &b in succ {
            rev[b].push(a);
        }
    }
    let mut seen = BTreeSet::new();
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        for &p in &rev[x] {
            if seen.insert(p) {
                stack.push(p);
            }
        }
    }
    seen
}

/// Anomalous nodes none of whose upstream nodes are anomalous.
pub fn brute_sources(net: &Network, anomalous: &BTreeSet<usize>) -> BTreeSet<String> {
    anomalous
        .iter()
        .filter(|&&v| brute_upstream(net, v).is_disjoint(anomalous))
        .map(|&v| net.node(v).id.clone())
        .collect()
}

/// `exp(−λ·L_i) / Σ_j exp(−λ·L_j)` evaluated literally.
pub fn direct_softmax(losses: &[f64], lambda: f64) -> Vec<f64> {
    let e: Vec<f64> = losses.iter().map(|l| (-lambda * l).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub e_rt: f64,
    pub e_c: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub status: Status,
}

/// Recomputes the detector trace from scratch at every step: the error
/// window is re-sliced and the mean/variance model is replayed from zero over
/// every step that adapted so far.
pub fn rtca_batch(y: &[f64], y_hat: &[f64], t0: usize, cfg: &RtcaConfig) -> Vec<TraceRow> {
    let e: Vec<f64> = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).abs() / (b + cfg.epsilon))
        .collect();
    let model = |adapted: &[usize]| {
        let (mut mu, mut s2) = (0.0_f64, 0.0_f64);
        for &i in adapted {
            mu = (1.0 - cfg.alpha) * mu + cfg.alpha * e[i];
            s2 = (1.0 - cfg.alpha) * s2 + cfg.alpha * (e[i] - mu).powi(2);
        }
        (mu, s2)
    };

    let mut adapted: Vec<usize> = Vec::new();
    let mut run = 0usize;
    let mut rows = Vec::with_capacity(e.len());
    for i in 0..e.len() {
        let lo = (i + 1).saturating_sub(cfg.window);
        let e_c = e[lo..=i].iter().fold(0.0, |s, v| s + v) / (i + 1 - lo) as f64;
        let (mu, s2) = model(&adapted);
        let sigma = s2.sqrt();
        let (tau_rt, tau_c) = (mu + cfg.k1 * sigma, mu + cfg.k2 * sigma);
        let t = t0 + i;
        let status = if t <= cfg.warmup_steps {
            adapted.push(i);
            Status::Warmup
        } else if e[i] > tau_rt && e_c > tau_c {
            run += 1;
            if run >= cfg.persist {
                Status::Confirmed
            } else {
                Status::Suspect
            }
        } else {
            run = 0;
            adapted.push(i);
            Status::Normal
        };
        let (mu, sigma2) = model(&adapted);
        rows.push(TraceRow {
            e_rt: e[i],
            e_c,
            mu,
            sigma2,
            status,
        });
    }
    rows
}

pub fn random_rtca_config<R: Rng>(rng: &mut R) -> RtcaConfig {
    let k1 = rng.random_range(0.5..3.0);
    RtcaConfig {
        window: rng.random_range(1..=24),
        persist: rng.random_range(1..=6),
        alpha: rng.random_range(0.005..0.5),
        k1,
        k2: k1 + rng.random_range(0.0..2.0),
        epsilon: 1e-6,
        warmup_steps: rng.random_range(0..600),
        channel: Channel::Flow,
    }
}

/// Forecasts around 1 with small relative noise, plus bursts of large error
/// of random length so the detector visits every state.
pub fn random_error_signal<R: Rng>(rng: &mut R, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::with_capacity(steps);
    let mut y_hat = Vec::with_capacity(steps);
    let mut burst = 0usize;
    for _ in 0..steps {
        let p = rng.random_range(0.5..1.5);
        if burst == 0 && rng.random_bool(0.01) {
            burst = rng.random_range(1..12);
        }
        let rel = if burst > 0 {
            burst -= 1;
            rng.random_range(0.2..1.0)
        } else {
            rng.random_range(-0.02..0.02)
        };
        y_hat.push(p);
        y.push(p * (1.0 + rel));
    }
    (y, y_hat)
}

pub fn rtca_streaming(y: &[f64], y_hat: &[f64], t0: usize, cfg: &RtcaConfig) -> Vec<TraceRow> {
    let mut state = DetectorState::default();
    y.iter()
        .zip(y_hat)
        .enumerate()
        .map(|(i, (&a, &b))| {
            let out = state.step("n", a, b, cfg, t0 + i).unwrap();
            TraceRow {
                e_rt: out.e_rt,
                e_c: out.e_c,
                mu: state.mu,
                sigma2: state.sigma2,
                status: out.status,
            }
        })
        .collect()
}

/// Looks up the true next frame, optionally corrupted by multiplicative noise.
pub struct Oracle {
    pub name: &'static str,
    pub truth: Arc<Vec<StateFrame>>,
    pub noise: f64,
    pub seed: u64,
}

impl Expert for Oracle {
    fn name(&self) -> &str {
        self.name
    }

    fn predict(&self, history: &[StateFrame], _net: &Network) -> Result<StateFrame, ForecastError> {
        let t = history.last().unwrap().t + 1;
        let mut frame = self.truth[t].clone();
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ t as u64);
            for s in &mut frame.states {
                let a = s.to_array().map(|x| x * (1.0 + self.noise * rng.random_range(-1.0..1.0)));
                *s = NodeState::from_array(a);
            }
        }
        Ok(frame)
    }
}

pub fn base_demands(net: &Network) -> Vec<f64> {
    net.nodes().iter().map(|n| n.base_demand).collect()
}

/// Readings at a random subset of nodes, always including the last node so
/// every pressure is anchored.
pub fn sparse_readings<R: Rng>(rng: &mut R, truth: &[NodeState], share: f64) -> BTreeMap<usize, NodeState> {
    let n = truth.len();
    let k = ((n as f64 * share).round() as usize).clamp(1, n - 1);
    let mut picked: Vec<usize> = sample(rng, n - 1, k - 1).into_vec();
    picked.push(n - 1);
    picked.into_iter().map(|v| (v, truth[v])).collect()
}

/// `10.67·L·(Q/(C·D^2.63))^1.852` in one expression.
pub fn direct_headloss(q: f64, l: f64, c: f64, d: f64) -> f64 {
    10.67 * l * (q / (c * d.powf(2.63))).powf(1.852)
}

/// Central-difference gradient of `f` with a per-coordinate step.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1e-3);
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}
