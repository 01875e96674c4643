//! Physics-constrained state estimation at unmonitored nodes ("virtual
//! sensors").
//!
//! The estimate minimises
//!
//! ```text
//! J(X) = Σ_v r_v² + Σ_c m_c² + λ · Σ_c Σ_ch ((x_to,ch − x_from,ch) / s_ch)²
//! r_v  = Σ_{c ∈ in(v)} share_c · q_from(c) + D_v − q_v
//! m_c  = p_from − p_to − hf(share_c · q_from)
//! ```
//!
//! over the states of unmonitored nodes, with measured nodes held fixed. The
//! minimiser is a limited-memory quasi-Newton descent with Armijo
//! backtracking; every accepted iterate strictly lowers `J`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::{hw_resistance, Channel, NodeState, StateFrame, TimeSeries, HW_EXPONENT};
use crate::network::Network;

#[derive(Debug, Error)]
pub enum AugmentationError {
    #[error("reading for node index {0} outside the network")]
    UnknownNode(usize),
    #[error("expected {expected} demands, got {got}")]
    Demands { expected: usize, got: usize },
    #[error("frame has {got} nodes, network has {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("invalid augmentation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub lambda_smooth: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Stop once an iteration lowers the objective by less than this
    /// fraction of its value. Machine epsilon is used when smaller.
    pub rel_tol: f64,
    /// Initial trial step; `0` picks `1/‖∇J‖` automatically.
    pub step_size: f64,
    /// Per-channel scale `(flow, depth, pressure)` for the smoothness term.
    pub channel_scale: [f64; 3],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            lambda_smooth: 0.1,
            max_iters: 5000,
            tol: 1e-10,
            rel_tol: 0.0,
            step_size: 0.0,
            channel_scale: [1.0; 3],
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), AugmentationError> {
        if !(self.tol > 0.0) {
            return Err(AugmentationError::Config("tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(AugmentationError::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(AugmentationError::Config("rel_tol must be nonnegative".into()));
        }
        if !(self.lambda_smooth >= 0.0) {
            return Err(AugmentationError::Config("lambda_smooth must be nonnegative".into()));
        }
        if self.channel_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(AugmentationError::Config("channel scales must be positive".into()));
        }
        Ok(())
    }

    /// Sets the smoothness scales to each channel's standard deviation over
    /// all nodes and frames of `baseline`.
    pub fn with_scales_from(mut self, baseline: &TimeSeries) -> Self {
        for ch in Channel::ALL {
            let values: Vec<f64> = baseline.frames.iter().flat_map(|f| f.channel(ch)).collect();
            if values.len() > 1 {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let var =
                    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
                if var > 0.0 {
                    self.channel_scale[ch.index()] = var.sqrt();
                }
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Measured,
    Inferred,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFrame {
    pub frame: StateFrame,
    /// Final objective value `‖F(X)‖² + λ‖∇X‖²`.
    pub residual: f64,
    pub provenance: Vec<Provenance>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the initial point followed by every accepted iterate.
    pub objective_trace: Vec<f64>,
}

/// Mass-balance plus head-loss residual `‖F(X)‖²` of a full frame.
pub fn physics_residual(net: &Network, frame: &StateFrame, demands: &[f64]) -> f64 {
    let problem = Problem::build(net, &BTreeMap::new(), demands, 0.0, [1.0; 3]);
    let x: Vec<f64> = frame.states.iter().flat_map(|s| s.to_array()).collect();
    problem.physics(&x)
}

/// Squared edge-difference term `‖∇X‖²` with per-channel scaling.
pub fn smoothness(net: &Network, frame: &StateFrame, channel_scale: [f64; 3]) -> f64 {
    let problem = Problem::build(net, &BTreeMap::new(), &vec![0.0; net.node_count()], 1.0, channel_scale);
    let x: Vec<f64> = frame.states.iter().flat_map(|s| s.to_array()).collect();
    problem.smooth(&x)
}

struct Edge {
    from: usize,
    to: usize,
    share: f64,
    resistance: f64,
}

/// Objective over the full state vector `x[3·v + ch]`, with gradient masking
/// for the measured nodes.
pub struct Problem {
    n: usize,
    edges: Vec<Edge>,
    /// Conduits entering each node.
    incoming: Vec<Vec<usize>>,
    demands: Vec<f64>,
    lambda: f64,
    inv_scale2: [f64; 3],
    free: Vec<bool>,
    base: Vec<f64>,
}

impl Problem {
    fn build(
        net: &Network,
        readings: &BTreeMap<usize, NodeState>,
        demands: &[f64],
        lambda: f64,
        scale: [f64; 3],
    ) -> Self {
        let n = net.node_count();
        let mut edges = Vec::with_capacity(net.conduit_count());
        let mut incoming = vec![Vec::new(); n];
        for v in 0..n {
            for (c, share) in net.outflow_shares(v) {
                let spec = net.conduit(c);
                let to = net.ends(c).1;
                incoming[to].push(edges.len());
                edges.push(Edge {
                    from: v,
                    to,
                    share,
                    resistance: hw_resistance(spec.length, spec.hw_coefficient, spec.diameter),
                });
            }
        }
        let mut free = vec![true; 3 * n];
        let mut base = vec![0.0; 3 * n];
        for (&v, s) in readings {
            base[3 * v..3 * v + 3].copy_from_slice(&s.to_array());
            free[3 * v..3 * v + 3].iter_mut().for_each(|f| *f = false);
        }
        Self {
            n,
            edges,
            incoming,
            demands: demands.to_vec(),
            lambda,
            inv_scale2: scale.map(|s| 1.0 / (s * s)),
            free,
            base,
        }
    }

    /// Problem for `net` with the given readings fixed.
    pub fn new(
        net: &Network,
        readings: &BTreeMap<usize, NodeState>,
        demands: &[f64],
        cfg: &AugmentationConfig,
    ) -> Result<Self, AugmentationError> {
        cfg.validate()?;
        check_inputs(net, readings, demands)?;
        Ok(Self::build(net, readings, demands, cfg.lambda_smooth, cfg.channel_scale))
    }

    pub fn dim(&self) -> usize {
        3 * self.n
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free[i]
    }

    fn imbalance(&self, x: &[f64], v: usize) -> f64 {
        let inflow: f64 = self.incoming[v]
            .iter()
            .map(|&e| self.edges[e].share * x[3 * self.edges[e].from])
            .sum();
        inflow + self.demands[v] - x[3 * v]
    }

    fn mismatch(&self, x: &[f64], e: &Edge) -> f64 {
        let q = e.share * x[3 * e.from];
        x[3 * e.from + 2] - x[3 * e.to + 2] - e.resistance * q.signum() * q.abs().powf(HW_EXPONENT)
    }

    fn physics(&self, x: &[f64]) -> f64 {
        let mass: f64 = (0..self.n).map(|v| self.imbalance(x, v).powi(2)).sum();
        let energy: f64 = self.edges.iter().map(|e| self.mismatch(x, e).powi(2)).sum();
        mass + energy
    }

    fn smooth(&self, x: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                (0..3)
                    .map(|ch| (x[3 * e.to + ch] - x[3 * e.from + ch]).powi(2) * self.inv_scale2[ch])
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut j = self.physics(x);
        if self.lambda > 0.0 {
            j += self.lambda * self.smooth(x);
        }
        j
    }

    /// Full gradient with respect to every state entry (measured entries
    /// included; the optimiser masks them).
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; 3 * self.n];
        for v in 0..self.n {
            let r = self.imbalance(x, v);
            g[3 * v] -= 2.0 * r;
            for &ei in &self.incoming[v] {
                let e = &self.edges[ei];
                g[3 * e.from] += 2.0 * r * e.share;
            }
        }
        for e in &self.edges {
            let m = self.mismatch(x, e);
            let q = e.share * x[3 * e.from];
            let dhf = e.resistance * HW_EXPONENT * q.abs().powf(HW_EXPONENT - 1.0) * e.share;
            g[3 * e.from] -= 2.0 * m * dhf;
            g[3 * e.from + 2] += 2.0 * m;
            g[3 * e.to + 2] -= 2.0 * m;
            if self.lambda > 0.0 {
                for ch in 0..3 {
                    let d = 2.0 * self.lambda * self.inv_scale2[ch] * (x[3 * e.to + ch] - x[3 * e.from + ch]);
                    g[3 * e.to + ch] += d;
                    g[3 * e.from + ch] -= d;
                }
            }
        }
        g
    }

    /// Inverse of the Gauss-Newton diagonal, used to precondition the
    /// search direction (flows, depths and heads live on very different
    /// scales).
    fn inverse_curvature(&self, x: &[f64]) -> Vec<f64> {
        let mut d = vec![2.0; 3 * self.n];
        for v in 0..self.n {
            d[3 * v + 1] = 0.0;
            d[3 * v + 2] = 0.0;
        }
        for e in &self.edges {
            let q = e.share * x[3 * e.from];
            let dhf = e.resistance * HW_EXPONENT * q.abs().powf(HW_EXPONENT - 1.0) * e.share;
            d[3 * e.from] += 2.0 * (e.share * e.share + dhf * dhf);
            d[3 * e.from + 2] += 2.0;
            d[3 * e.to + 2] += 2.0;
            for ch in 0..3 {
                let c = 2.0 * self.lambda * self.inv_scale2[ch];
                d[3 * e.from + ch] += c;
                d[3 * e.to + ch] += c;
            }
        }
        d.into_iter()
            .enumerate()
            .map(|(i, di)| if self.free[i] && di > 0.0 { 1.0 / di } else { 0.0 })
            .collect()
    }

    fn masked_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.gradient(x);
        for (gi, &f) in g.iter_mut().zip(&self.free) {
            if !f {
                *gi = 0.0;
            }
        }
        g
    }

    /// Initial point: measured values where known, else the per-channel mean
    /// of the measurements.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut mean = [0.0; 3];
        let mut count = 0usize;
        for v in 0..self.n {
            if !self.free[3 * v] {
                count += 1;
                for ch in 0..3 {
                    mean[ch] += self.base[3 * v + ch];
                }
            }
        }
        if count > 0 {
            mean.iter_mut().for_each(|m| *m /= count as f64);
        }
        (0..3 * self.n)
            .map(|i| if self.free[i] { mean[i % 3] } else { self.base[i] })
            .collect()
    }

    /// Measured values where known, else the guess.
    pub fn point_from(&self, guess: &StateFrame) -> Vec<f64> {
        (0..3 * self.n)
            .map(|i| {
                if self.free[i] {
                    guess.states[i / 3].to_array()[i % 3]
                } else {
                    self.base[i]
                }
            })
            .collect()
    }
}

fn check_inputs(
    net: &Network,
    readings: &BTreeMap<usize, NodeState>,
    demands: &[f64],
) -> Result<(), AugmentationError> {
    if demands.len() != net.node_count() {
        return Err(AugmentationError::Demands {
            expected: net.node_count(),
            got: demands.len(),
        });
    }
    if let Some((&v, _)) = readings.range(net.node_count()..).next() {
        return Err(AugmentationError::UnknownNode(v));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const HISTORY: usize = 8;
const ARMIJO: f64 = 1e-4;

/// Estimates the full frame from sparse readings.
pub fn augment(
    net: &Network,
    readings: &BTreeMap<usize, NodeState>,
    demands: &[f64],
    cfg: &AugmentationConfig,
) -> Result<AugmentedFrame, AugmentationError> {
    augment_from(net, readings, demands, cfg, None)
}

/// As [`augment`], starting the free values from `guess` (typically the
/// previous frame's estimate) instead of the measurement means.
pub fn augment_from(
    net: &Network,
    readings: &BTreeMap<usize, NodeState>,
    demands: &[f64],
    cfg: &AugmentationConfig,
    guess: Option<&StateFrame>,
) -> Result<AugmentedFrame, AugmentationError> {
    let problem = Problem::new(net, readings, demands, cfg)?;
    let mut x = match guess {
        Some(g) if g.states.len() == net.node_count() => problem.point_from(g),
        Some(g) => {
            return Err(AugmentationError::FrameSize {
                expected: net.node_count(),
                got: g.states.len(),
            })
        }
        None => problem.initial_point(),
    };
    let mut f = problem.objective(&x);
    let mut trace = vec![f];
    let mut converged = f <= cfg.tol;
    let mut iterations = 0;
    let free_count = problem.free.iter().filter(|&&b| b).count();
    if free_count == 0 {
        converged = true;
    }

    let mut g = problem.masked_gradient(&x);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
    while !converged && iterations < cfg.max_iters {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm == 0.0 {
            converged = true;
            break;
        }

        let hinv = problem.inverse_curvature(&x);
        let mut dir = two_loop(&g, &memory, &hinv);
        let mut slope = dot(&g, &dir);
        let mut step = if memory.is_empty() && cfg.step_size > 0.0 {
            cfg.step_size
        } else {
            1.0
        };
        if !(slope < 0.0) {
            memory.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
            step = if cfg.step_size > 0.0 { cfg.step_size } else { 1.0 / gnorm };
        }

        let mut accepted = None;
        while step > 1e-30 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let ft = problem.objective(&trial);
            if ft.is_finite() && ft <= f + ARMIJO * step * slope && ft < f {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if memory.is_empty() {
                // No descent possible along the steepest direction: a
                // numerical minimum.
                converged = true;
                break;
            }
            memory.clear();
            continue;
        };

        iterations += 1;
        let g_new = problem.masked_gradient(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if memory.len() == HISTORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if f <= cfg.tol || decrease <= cfg.rel_tol.max(f64::EPSILON) * f.abs() {
            converged = true;
        }
    }

    let states = (0..net.node_count())
        .map(|v| NodeState::new(x[3 * v], x[3 * v + 1], x[3 * v + 2]))
        .collect();
    let mut states: Vec<NodeState> = states;
    // Measured entries are copied back verbatim.
    for (&v, s) in readings {
        states[v] = *s;
    }
    let provenance = (0..net.node_count())
        .map(|v| {
            if readings.contains_key(&v) {
                Provenance::Measured
            } else {
                Provenance::Inferred
            }
        })
        .collect();
    if !converged {
        log::warn!("augmentation stopped at max_iters={} with objective {f:e}", cfg.max_iters);
    }
    Ok(AugmentedFrame {
        frame: StateFrame { t: 0, states },
        residual: f,
        provenance,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// L-BFGS two-loop recursion returning the search direction `−H·g`.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, hinv: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    q.iter_mut().zip(hinv).for_each(|(qi, h)| *qi *= h);
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Augments every frame of a series from the readings at `sensors`, using
/// per-step demand estimates.
pub fn augment_series(
    net: &Network,
    observed: &TimeSeries,
    sensors: &[usize],
    demands: &[Vec<f64>],
    cfg: &AugmentationConfig,
) -> Result<(TimeSeries, Vec<AugmentedFrame>), AugmentationError> {
    if demands.len() != observed.len() {
        return Err(AugmentationError::Demands {
            expected: observed.len(),
            got: demands.len(),
        });
    }
    let mut frames = Vec::with_capacity(observed.len());
    let mut details = Vec::with_capacity(observed.len());
    for (i, f) in observed.frames.iter().enumerate() {
        if f.states.len() != net.node_count() {
            return Err(AugmentationError::FrameSize {
                expected: net.node_count(),
                got: f.states.len(),
            });
        }
        let readings: BTreeMap<usize, NodeState> =
            sensors.iter().map(|&v| (v, f.states[v])).collect();
        let mut a = augment_from(net, &readings, &demands[i], cfg, frames.last())?;
        a.frame.t = f.t;
        frames.push(a.frame.clone());
        details.push(a);
    }
    Ok((
        TimeSeries {
            dt: observed.dt,
            frames,
        },
        details,
    ))
}
