//! The oscillator grid: neighbourhood coupling, synchronous RK4 stepping and
//! the simulate-until-locked driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};
use crate::frequency::{crossing_detector, estimate_frequency, FrequencyMap, NodeStatus};
use crate::image::GrayImage;
use crate::models::{ModelConfig, ModelKind};

/// How nodes near the image border, which have truncated neighbourhoods,
/// weight their coupling sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Plain sum over the in-bounds neighbours.
    Truncate,
    /// Sum scaled by `full / present` neighbour counts, so every node sees
    /// the same total weight. Interior nodes are unaffected.
    Rescale,
}

impl std::str::FromStr for Boundary {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truncate" => Ok(Boundary::Truncate),
            "rescale" => Ok(Boundary::Rescale),
            other => Err(ConfigError::invalid("boundary", format!("unknown boundary handling `{other}`"))),
        }
    }
}

/// Chebyshev-radius neighbourhood coupling with a single coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub radius: usize,
    pub coefficient: f64,
    /// Count the node's own output in its coupling sum.
    pub include_self: bool,
    pub boundary: Boundary,
}

impl CouplingSpec {
    /// Radius-1 (eight-neighbour) coupling with boundary rescaling.
    pub fn nearest(coefficient: f64) -> Self {
        Self { radius: 1, coefficient, include_self: false, boundary: Boundary::Rescale }
    }

    /// Radius-1 coupling with a plain truncated sum at the border.
    pub fn nearest_truncated(coefficient: f64) -> Self {
        Self { boundary: Boundary::Truncate, ..Self::nearest(coefficient) }
    }

    fn full_count(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side - usize::from(!self.include_self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.radius < 1 {
            return Err(ConfigError::invalid("coupling.radius", "must be >= 1"));
        }
        if !(self.coefficient.is_finite() && self.coefficient >= 0.0) {
            return Err(ConfigError::invalid("coupling.coefficient", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Integration and frequency-readout settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// RK4 step (AU).
    pub dt: f64,
    /// Simulation horizon (AU).
    pub total_time: f64,
    /// Leading fraction of the run ignored by frequency estimation.
    pub transient_fraction: f64,
    /// Length of the sliding convergence window (AU).
    pub window: f64,
    /// Max per-node frequency change between consecutive windows (AU⁻¹).
    pub convergence_tol: f64,
    pub seed: u64,
    /// Perturb initial states (required to break symmetry).
    pub initial_jitter: bool,
    /// Draw a per-node `rho` offset uniformly from `[-rho, rho]` (neural only).
    pub rho_jitter: bool,
    /// End the run at the first converged checkpoint instead of `total_time`.
    pub stop_on_convergence: bool,
    /// Grids with at least this many nodes evaluate each RK4 stage in
    /// parallel.
    pub parallel_min_nodes: usize,
    /// Record the full network state every this many steps (debug only).
    pub trace_stride: Option<usize>,
}

impl SimConfig {
    /// Defaults sized to roughly 40 periods of the slowest expected
    /// oscillation and at least 500 steps per fastest period.
    pub fn for_model(kind: ModelKind) -> Self {
        let (dt, total_time, window) = match kind {
            ModelKind::Neural => (0.02, 600.0, 75.0),
            ModelKind::Bz => (0.002, 100.0, 15.0),
            ModelKind::Mems => (0.002, 40.0, 6.0),
        };
        Self {
            dt,
            total_time,
            transient_fraction: 0.25,
            window,
            convergence_tol: 1e-3,
            seed: 0,
            initial_jitter: true,
            rho_jitter: false,
            stop_on_convergence: false,
            parallel_min_nodes: 4096,
            trace_stride: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ConfigError::invalid("dt", "must be finite and > 0"));
        }
        if !(self.window.is_finite() && self.window > self.dt) {
            return Err(ConfigError::invalid("window", "must exceed dt"));
        }
        if !(self.total_time.is_finite() && self.total_time > self.window) {
            return Err(ConfigError::invalid("total_time", "must exceed window"));
        }
        if !(0.0..1.0).contains(&self.transient_fraction) {
            return Err(ConfigError::invalid("transient_fraction", "must lie in [0, 1)"));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return Err(ConfigError::invalid("convergence_tol", "must be > 0"));
        }
        if self.trace_stride == Some(0) {
            return Err(ConfigError::invalid("trace_stride", "must be >= 1"));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }

    fn steps_per_window(&self) -> usize {
        ((self.window / self.dt).round() as usize).max(1)
    }
}

/// All in-bounds coordinates `(row, col)` within Chebyshev distance
/// `spec.radius` of `pos`, in row-major order.
pub fn neighborhood(pos: (usize, usize), dims: (usize, usize), spec: &CouplingSpec) -> Vec<(usize, usize)> {
    let (row, col) = pos;
    let (width, height) = dims;
    let r = spec.radius;
    let mut out = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    for k in row.saturating_sub(r)..=(row + r).min(height - 1) {
        for l in col.saturating_sub(r)..=(col + r).min(width - 1) {
            if (k, l) != pos || spec.include_self {
                out.push((k, l));
            }
        }
    }
    out
}

/// `c` times the summed outputs of the neighbourhood of `node`, rescaled at
/// the border when `spec.boundary` is [`Boundary::Rescale`].
///
/// `outputs` is row-major with `dims = (width, height)`; for scalar models
/// the second component of each output is zero.
#[inline]
pub fn coupling_term(
    node: (usize, usize),
    outputs: &[[f64; 2]],
    dims: (usize, usize),
    spec: &CouplingSpec,
) -> [f64; 2] {
    if spec.coefficient == 0.0 {
        return [0.0; 2];
    }
    let (row, col) = node;
    let (width, height) = dims;
    let r = spec.radius;
    let (c0, c1) = (col.saturating_sub(r), (col + r).min(width - 1));
    let (r0, r1) = (row.saturating_sub(r), (row + r).min(height - 1));
    let mut sum = [0.0; 2];
    for k in r0..=r1 {
        let line = &outputs[k * width..(k + 1) * width];
        for (l, o) in line.iter().enumerate().take(c1 + 1).skip(c0) {
            if k == row && l == col && !spec.include_self {
                continue;
            }
            sum[0] += o[0];
            sum[1] += o[1];
        }
    }
    let mut weight = spec.coefficient;
    if spec.boundary == Boundary::Rescale {
        let present = (r1 - r0 + 1) * (c1 - c0 + 1) - usize::from(!spec.include_self);
        let full = spec.full_count();
        if present != full {
            weight *= full as f64 / present as f64;
        }
    }
    [weight * sum[0], weight * sum[1]]
}

/// Affine map of every pixel intensity onto the model's control parameter.
pub fn map_intensity(image: &GrayImage, model: &ModelConfig) -> Vec<f64> {
    image.pixels().iter().map(|&v| model.control_for_intensity(v)).collect()
}

/// Half-width (radians) of the initial MEMS phase spread.
pub const MEMS_PHASE_JITTER: f64 = 0.1;

/// Initial states per node, drawn in row-major order from the seed.
pub fn initial_states(model: &ModelConfig, nodes: usize, cfg: &SimConfig) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..nodes)
        .map(|_| match model.kind() {
            ModelKind::Neural | ModelKind::Bz => {
                let jitter = if cfg.initial_jitter { rng.gen_range(-0.01..=0.01) } else { 0.0 };
                [jitter, 0.0]
            }
            ModelKind::Mems => {
                let phase: f64 = if cfg.initial_jitter { rng.gen_range(-MEMS_PHASE_JITTER..=MEMS_PHASE_JITTER) } else { 0.0 };
                [0.1 * phase.cos(), 0.1 * phase.sin()]
            }
        })
        .collect()
}

fn rho_offsets(model: &ModelConfig, nodes: usize, cfg: &SimConfig) -> Vec<f64> {
    match model {
        ModelConfig::Neural(p) if cfg.rho_jitter && p.rho != 0.0 => {
            // Separate stream from the initial-state jitter.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_eed0_f4a0);
            let bound = p.rho.abs();
            (0..nodes).map(|_| rng.gen_range(-bound..=bound)).collect()
        }
        _ => vec![0.0; nodes],
    }
}

/// One classical RK4 step of a small autonomous system.
#[inline]
pub fn rk4_step_fn<const N: usize>(y: [f64; N], dt: f64, f: impl Fn([f64; N]) -> [f64; N]) -> [f64; N] {
    let axpy = |a: [f64; N], h: f64, k: [f64; N]| std::array::from_fn(|i| a[i] + h * k[i]);
    let k1 = f(y);
    let k2 = f(axpy(y, 0.5 * dt, k1));
    let k3 = f(axpy(y, 0.5 * dt, k2));
    let k4 = f(axpy(y, dt, k3));
    std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Snapshot of the whole grid at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    model: ModelConfig,
    width: usize,
    height: usize,
    control: Vec<f64>,
    rho_offset: Vec<f64>,
    states: Vec<[f64; 2]>,
    time: f64,
}

impl NetworkState {
    pub fn from_image(image: &GrayImage, model: ModelConfig, cfg: &SimConfig) -> Result<Self, ConfigError> {
        model.validate()?;
        cfg.validate()?;
        let n = image.pixels().len();
        Ok(Self {
            control: map_intensity(image, &model),
            rho_offset: rho_offsets(&model, n, cfg),
            states: initial_states(&model, n, cfg),
            width: image.width(),
            height: image.height(),
            model,
            time: 0.0,
        })
    }

    /// Network with explicit per-node control parameters and states.
    pub fn from_parts(
        model: ModelConfig,
        width: usize,
        height: usize,
        control: Vec<f64>,
        states: Vec<[f64; 2]>,
    ) -> Result<Self, ConfigError> {
        model.validate()?;
        let n = width * height;
        if n == 0 || control.len() != n || states.len() != n {
            return Err(ConfigError::invalid("network", "grid sizes do not match"));
        }
        Ok(Self { model, width, height, rho_offset: vec![0.0; n], control, states, time: 0.0 })
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn control(&self) -> &[f64] {
        &self.control
    }

    pub fn states(&self) -> &[[f64; 2]] {
        &self.states
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Advances every node by one synchronous RK4 step. Coupling inside each
    /// stage is computed from that stage's intermediate states.
    pub fn rk4_step(&mut self, dt: f64, spec: &CouplingSpec) -> Result<(), SimError> {
        let mut ws = Workspace::new(self.states.len());
        self.step_with(&mut ws, dt, spec, usize::MAX)
    }

    fn step_with(&mut self, ws: &mut Workspace, dt: f64, spec: &CouplingSpec, par_min: usize) -> Result<(), SimError> {
        let parallel = self.states.len() >= par_min;
        let n = self.states.len();
        let Workspace { k1, k2, k3, k4, stage, outputs } = ws;

        self.eval(&self.states, outputs, k1, spec, parallel);
        for i in 0..n {
            stage[i] = add_scaled(self.states[i], 0.5 * dt, k1[i]);
        }
        self.eval(stage, outputs, k2, spec, parallel);
        for i in 0..n {
            stage[i] = add_scaled(self.states[i], 0.5 * dt, k2[i]);
        }
        self.eval(stage, outputs, k3, spec, parallel);
        for i in 0..n {
            stage[i] = add_scaled(self.states[i], dt, k3[i]);
        }
        self.eval(stage, outputs, k4, spec, parallel);

        let mut blowup = None;
        for i in 0..n {
            let y = self.states[i];
            let next: [f64; 2] =
                std::array::from_fn(|d| y[d] + dt / 6.0 * (k1[i][d] + 2.0 * k2[i][d] + 2.0 * k3[i][d] + k4[i][d]));
            if blowup.is_none() && !(next[0].is_finite() && next[1].is_finite()) {
                blowup = Some(i);
            }
            self.states[i] = next;
        }
        self.time += dt;
        match blowup {
            Some(i) => Err(SimError::NumericalBlowup { row: i / self.width, col: i % self.width, time: self.time }),
            None => Ok(()),
        }
    }

    fn eval(
        &self,
        states: &[[f64; 2]],
        outputs: &mut [[f64; 2]],
        out: &mut [[f64; 2]],
        spec: &CouplingSpec,
        parallel: bool,
    ) {
        let complex = self.model.complex_coupling();
        for (o, s) in outputs.iter_mut().zip(states) {
            *o = if complex { *s } else { [s[0], 0.0] };
        }
        let dims = (self.width, self.height);
        let width = self.width;
        let outputs = &*outputs;
        let row_job = |(row, chunk): (usize, &mut [[f64; 2]])| {
            for (col, d) in chunk.iter_mut().enumerate() {
                let i = row * width + col;
                let s = coupling_term((row, col), outputs, dims, spec);
                *d = self.model.derivative(states[i], self.control[i], self.rho_offset[i], s);
            }
        };
        if parallel {
            out.par_chunks_mut(width).enumerate().for_each(row_job);
        } else {
            out.chunks_mut(width).enumerate().for_each(row_job);
        }
    }
}

#[inline]
fn add_scaled(y: [f64; 2], h: f64, k: [f64; 2]) -> [f64; 2] {
    [y[0] + h * k[0], y[1] + h * k[1]]
}

struct Workspace {
    k1: Vec<[f64; 2]>,
    k2: Vec<[f64; 2]>,
    k3: Vec<[f64; 2]>,
    k4: Vec<[f64; 2]>,
    stage: Vec<[f64; 2]>,
    outputs: Vec<[f64; 2]>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let v = vec![[0.0; 2]; n];
        Self { k1: v.clone(), k2: v.clone(), k3: v.clone(), k4: v.clone(), stage: v.clone(), outputs: v }
    }
}

/// Full-network state captured during a traced run.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFrame {
    pub time: f64,
    pub states: Vec<[f64; 2]>,
}

/// Result of [`simulate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimOutcome {
    /// Frequencies estimated over the post-transient part of the run.
    pub map: FrequencyMap,
    /// Whether the last two window estimates agreed to `convergence_tol`.
    pub converged: bool,
    /// Max per-node change between the last two window estimates.
    pub last_change: Option<f64>,
    pub end_time: f64,
    pub trace: Vec<TraceFrame>,
}

/// Integrates the network built from `image` and reads out per-node
/// frequencies.
///
/// Every `cfg.window` AU after the transient, frequencies are estimated over
/// the trailing window and compared with the previous estimate; the run is
/// converged when the largest change among nodes that are `Ok` in both
/// estimates is at most `cfg.convergence_tol` (a node switching between
/// oscillating and silent counts as unconverged). The returned map covers
/// `[transient_fraction * end_time, end_time]`.
pub fn simulate(
    image: &GrayImage,
    model: ModelConfig,
    spec: &CouplingSpec,
    cfg: &SimConfig,
) -> Result<SimOutcome, SimError> {
    spec.validate()?;
    let mut net = NetworkState::from_image(image, model, cfg)?;
    run_network(&mut net, spec, cfg)
}

/// [`simulate`] on an already constructed network.
pub fn run_network(net: &mut NetworkState, spec: &CouplingSpec, cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    spec.validate()?;
    cfg.validate()?;
    let n = net.states.len();
    let level = net.model.event_level();
    let total_steps = cfg.steps();
    let per_window = cfg.steps_per_window();
    let transient_time = cfg.transient_fraction * cfg.total_time;
    let mut ws = Workspace::new(n);
    let mut events: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut previous: Option<Vec<(f64, NodeStatus)>> = None;
    let mut last_change = None;
    let mut trace = Vec::new();
    let mut prev_lead: Vec<f64> = net.states.iter().map(|s| s[0]).collect();
    let mut step = 0usize;

    while step < total_steps {
        let t_prev = step as f64 * cfg.dt;
        net.step_with(&mut ws, cfg.dt, spec, cfg.parallel_min_nodes)?;
        step += 1;
        let t_next = step as f64 * cfg.dt;
        net.time = t_next;
        for (i, s) in net.states.iter().enumerate() {
            if let Some(t) = crossing_detector(level, prev_lead[i], s[0], t_prev, t_next) {
                events[i].push(t);
            }
            prev_lead[i] = s[0];
        }
        if let Some(stride) = cfg.trace_stride {
            if step % stride == 0 {
                trace.push(TraceFrame { time: t_next, states: net.states.clone() });
            }
        }
        if step % per_window == 0 && t_next - cfg.window >= transient_time - 1e-9 {
            let window = (t_next - cfg.window, t_next);
            let current: Vec<(f64, NodeStatus)> = events.iter().map(|e| estimate_frequency(e, window)).collect();
            if let Some(prev) = &previous {
                let change = max_change(prev, &current);
                last_change = Some(change);
                if cfg.stop_on_convergence && change <= cfg.convergence_tol {
                    break;
                }
            }
            previous = Some(current);
        }
    }

    let end_time = step as f64 * cfg.dt;
    let window = (cfg.transient_fraction * end_time, end_time);
    let (freqs, flags) = events.iter().map(|e| estimate_frequency(e, window)).unzip();
    let map = FrequencyMap::new(net.width, net.height, freqs, flags)?;
    let converged = last_change.is_some_and(|c| c <= cfg.convergence_tol);
    Ok(SimOutcome { map, converged, last_change, end_time, trace })
}

fn max_change(prev: &[(f64, NodeStatus)], current: &[(f64, NodeStatus)]) -> f64 {
    let mut change: f64 = 0.0;
    for (&(fp, sp), &(fc, sc)) in prev.iter().zip(current) {
        match (sp, sc) {
            (NodeStatus::Ok, NodeStatus::Ok) => change = change.max((fp - fc).abs()),
            (NodeStatus::NonOscillating, NodeStatus::Ok) | (NodeStatus::Ok, NodeStatus::NonOscillating) => {
                return f64::INFINITY
            }
            _ => {}
        }
    }
    change
}

/// Result of [`simulate_oscillator`].
#[derive(Clone, Debug, PartialEq)]
pub struct SingleOutcome {
    pub freq: f64,
    pub status: NodeStatus,
    pub events: Vec<f64>,
    pub final_state: [f64; 2],
}

/// Integrates one uncoupled oscillator with an explicit control value (which
/// may lie outside the model's intensity mapping, e.g. a negative stimulus).
pub fn simulate_oscillator(
    model: &ModelConfig,
    control: f64,
    initial: [f64; 2],
    cfg: &SimConfig,
) -> Result<SingleOutcome, SimError> {
    model.validate()?;
    cfg.validate()?;
    let level = model.event_level();
    let mut state = initial;
    let mut events = Vec::new();
    let steps = cfg.steps();
    for step in 0..steps {
        let next = rk4_step_fn(state, cfg.dt, |s| model.derivative(s, control, 0.0, [0.0; 2]));
        if !(next[0].is_finite() && next[1].is_finite()) {
            return Err(SimError::NumericalBlowup { row: 0, col: 0, time: (step + 1) as f64 * cfg.dt });
        }
        if let Some(t) = crossing_detector(level, state[0], next[0], step as f64 * cfg.dt, (step + 1) as f64 * cfg.dt) {
            events.push(t);
        }
        state = next;
    }
    let end = steps as f64 * cfg.dt;
    let (freq, status) = estimate_frequency(&events, (cfg.transient_fraction * end, end));
    Ok(SingleOutcome { freq, status, events, final_state: state })
}
