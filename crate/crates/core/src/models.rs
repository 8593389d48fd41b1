//! Oscillator models: neural relaxation (LEGION-style), Belousov-Zhabotinsky
//! and MEMS harmonic.
//!
//! Every model is two-dimensional. The derivative functions are pure and
//! stateless; time stepping lives in [`crate::network`].

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Parameters of the neural relaxation oscillator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralParams {
    pub rho: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Stimulus `I` assigned to intensity 0.
    pub stimulus_lo: f64,
    /// Stimulus `I` assigned to intensity 1.
    pub stimulus_hi: f64,
}

impl NeuralParams {
    /// Parameter set used for the segmentation experiments.
    pub const fn experiment() -> Self {
        Self { rho: 0.02, epsilon: 0.15, gamma: 10.0, beta: 0.1, stimulus_lo: 2.0, stimulus_hi: 4.0 }
    }

    /// Parameter set of the nullcline illustrations (active at `I = 1`,
    /// inactive at `I = -1`).
    pub const fn illustration() -> Self {
        Self { rho: 0.02, epsilon: 0.1, gamma: 4.0, beta: 0.1, stimulus_lo: -1.0, stimulus_hi: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_finite("neural", &[self.rho, self.epsilon, self.gamma, self.beta, self.stimulus_lo, self.stimulus_hi])?;
        if self.epsilon <= 0.0 {
            return Err(ConfigError::invalid("neural.epsilon", "must be > 0"));
        }
        if self.beta <= 0.0 {
            return Err(ConfigError::invalid("neural.beta", "must be > 0"));
        }
        if self.stimulus_lo >= self.stimulus_hi {
            return Err(ConfigError::invalid("neural.stimulus_lo", "must be < stimulus_hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeuralState {
    /// Excitatory variable.
    pub x: f64,
    /// Inhibitory variable.
    pub y: f64,
}

/// Right-hand side of the neural oscillator.
///
/// `dx = 3x - x^3 - y + 2 + rho + I + S`, `dy = eps * (gamma * (1 + tanh(x / beta)) - y)`.
#[inline]
pub fn neural_derivative(state: NeuralState, p: &NeuralParams, stimulus: f64, coupling: f64) -> (f64, f64) {
    let NeuralState { x, y } = state;
    let dx = 3.0 * x - x * x * x - y + 2.0 + p.rho + stimulus + coupling;
    let dy = p.epsilon * (p.gamma * (1.0 + (x / p.beta).tanh()) - y);
    (dx, dy)
}

/// Parameters of the Belousov-Zhabotinsky (Oregonator-style) oscillator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BzParams {
    pub beta1: f64,
    pub beta2: f64,
    /// Mode-control offset: 0.5 oscillates, 0.1 is excitable.
    pub theta: f64,
    /// Time constant assigned to intensity 0.
    pub tau_lo: f64,
    /// Time constant assigned to intensity 1.
    pub tau_hi: f64,
}

impl BzParams {
    pub const fn experiment() -> Self {
        Self { beta1: 5.0, beta2: 10.0, theta: 0.5, tau_lo: 0.01, tau_hi: 0.11 }
    }

    /// Alternative time-constant mapping `0.1 ..= 1.1` used in the coupling
    /// sweep experiments.
    pub const fn sweep_range() -> Self {
        Self { tau_lo: 0.1, tau_hi: 1.1, ..Self::experiment() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_finite("bz", &[self.beta1, self.beta2, self.theta, self.tau_lo, self.tau_hi])?;
        if self.beta1 <= 0.0 || self.beta2 <= 0.0 {
            return Err(ConfigError::invalid("bz.beta", "beta1 and beta2 must be > 0"));
        }
        if self.tau_lo <= 0.0 {
            return Err(ConfigError::invalid("bz.tau_lo", "must be > 0"));
        }
        if self.tau_lo >= self.tau_hi {
            return Err(ConfigError::invalid("bz.tau_lo", "must be < tau_hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BzState {
    /// Activator concentration.
    pub x1: f64,
    /// Inhibitor concentration.
    pub x2: f64,
}

/// Sigmoid `f(x, beta) = (1 + tanh(beta * x)) / 2`.
#[inline]
pub fn bz_sigmoid(x: f64, beta: f64) -> f64 {
    0.5 * (1.0 + (beta * x).tanh())
}

/// Right-hand side of the BZ oscillator. The coupling enters outside the
/// `1 / tau` factor.
#[inline]
pub fn bz_derivative(state: BzState, p: &BzParams, tau: f64, coupling: f64) -> (f64, f64) {
    let BzState { x1, x2 } = state;
    let dx1 = (-x1 + bz_sigmoid(x1 - x2, p.beta1)) / tau + coupling;
    let dx2 = -x2 + bz_sigmoid(x1 - p.theta, p.beta2);
    (dx1, dx2)
}

/// Parameters of the MEMS resonator normal form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemsParams {
    pub damping_c: f64,
    pub nonlinear_d: f64,
    /// Natural angular frequency assigned to intensity 0 (rad / AU).
    pub omega_lo: f64,
    /// Natural angular frequency assigned to intensity 1 (rad / AU).
    pub omega_hi: f64,
}

impl MemsParams {
    pub const fn experiment() -> Self {
        use std::f64::consts::PI;
        Self { damping_c: 1.0, nonlinear_d: -1.0, omega_lo: 2.0 * PI, omega_hi: 2.2 * PI }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_finite("mems", &[self.damping_c, self.nonlinear_d, self.omega_lo, self.omega_hi])?;
        if self.damping_c > 0.0 && self.nonlinear_d >= 0.0 {
            return Err(ConfigError::invalid("mems.nonlinear_d", "must be < 0 when damping_c > 0"));
        }
        if self.omega_lo >= self.omega_hi {
            return Err(ConfigError::invalid("mems.omega_lo", "must be < omega_hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemsState {
    pub z_re: f64,
    pub z_im: f64,
}

/// Right-hand side of `dz/dt = (c + i omega) z + d z |z|^2 + S` split into
/// real and imaginary parts. `coupling` is the complex `S` as `(re, im)`.
#[inline]
pub fn mems_derivative(state: MemsState, p: &MemsParams, omega: f64, coupling: (f64, f64)) -> (f64, f64) {
    let MemsState { z_re: a, z_im: b } = state;
    let r2 = a * a + b * b;
    let dre = p.damping_c * a - omega * b + p.nonlinear_d * a * r2 + coupling.0;
    let dim = omega * a + p.damping_c * b + p.nonlinear_d * b * r2 + coupling.1;
    (dre, dim)
}

/// Which of the three oscillator families a network is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Neural,
    Bz,
    Mems,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Neural, ModelKind::Bz, ModelKind::Mems];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Neural => "neural",
            ModelKind::Bz => "bz",
            ModelKind::Mems => "mems",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "neural" => Ok(ModelKind::Neural),
            "bz" => Ok(ModelKind::Bz),
            "mems" => Ok(ModelKind::Mems),
            other => Err(ConfigError::invalid("model", format!("unknown model `{other}`"))),
        }
    }
}

/// A model together with its parameters.
///
/// Internally every model state is packed as `[f64; 2]`: `(x, y)` for neural,
/// `(x1, x2)` for BZ, `(Re z, Im z)` for MEMS. The first component is always
/// the variable that is broadcast to neighbours and watched for crossings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelConfig {
    Neural(NeuralParams),
    Bz(BzParams),
    Mems(MemsParams),
}

impl ModelConfig {
    pub fn experiment(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Neural => ModelConfig::Neural(NeuralParams::experiment()),
            ModelKind::Bz => ModelConfig::Bz(BzParams::experiment()),
            ModelKind::Mems => ModelConfig::Mems(MemsParams::experiment()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Neural(_) => ModelKind::Neural,
            ModelConfig::Bz(_) => ModelKind::Bz,
            ModelConfig::Mems(_) => ModelKind::Mems,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            ModelConfig::Neural(p) => p.validate(),
            ModelConfig::Bz(p) => p.validate(),
            ModelConfig::Mems(p) => p.validate(),
        }
    }

    /// Bounds of the frequency-control parameter (`I`, `tau` or `omega`).
    pub fn control_range(&self) -> (f64, f64) {
        match self {
            ModelConfig::Neural(p) => (p.stimulus_lo, p.stimulus_hi),
            ModelConfig::Bz(p) => (p.tau_lo, p.tau_hi),
            ModelConfig::Mems(p) => (p.omega_lo, p.omega_hi),
        }
    }

    /// Affine map of an intensity in `[0, 1]` onto the control range.
    #[inline]
    pub fn control_for_intensity(&self, intensity: f64) -> f64 {
        let (lo, hi) = self.control_range();
        lo + (hi - lo) * intensity
    }

    /// Level whose upward crossing of the first state component marks one
    /// oscillation cycle.
    pub fn event_level(&self) -> f64 {
        match self {
            ModelConfig::Bz(_) => 0.5,
            ModelConfig::Neural(_) | ModelConfig::Mems(_) => 0.0,
        }
    }

    /// Whether the coupling signal is complex (both state components are
    /// broadcast) or scalar (first component only).
    #[inline]
    pub fn complex_coupling(&self) -> bool {
        matches!(self, ModelConfig::Mems(_))
    }

    /// Packed derivative. `rho_offset` only affects the neural model.
    #[inline]
    pub fn derivative(&self, state: [f64; 2], control: f64, rho_offset: f64, coupling: [f64; 2]) -> [f64; 2] {
        match self {
            ModelConfig::Neural(p) => {
                let s = NeuralState { x: state[0], y: state[1] };
                let (dx, dy) = if rho_offset == 0.0 {
                    neural_derivative(s, p, control, coupling[0])
                } else {
                    let q = NeuralParams { rho: p.rho + rho_offset, ..*p };
                    neural_derivative(s, &q, control, coupling[0])
                };
                [dx, dy]
            }
            ModelConfig::Bz(p) => {
                let (a, b) = bz_derivative(BzState { x1: state[0], x2: state[1] }, p, control, coupling[0]);
                [a, b]
            }
            ModelConfig::Mems(p) => {
                let (a, b) =
                    mems_derivative(MemsState { z_re: state[0], z_im: state[1] }, p, control, (coupling[0], coupling[1]));
                [a, b]
            }
        }
    }
}

/// Simulates the uncoupled neural oscillator from a perturbed start and
/// reports whether it settles onto a fixed point instead of oscillating.
///
/// Used to check the inactive mode (`I < 0`). The oscillator is integrated
/// with RK4 (`dt = 0.01`) for 400 AU; it is considered stable when the state
/// speed over the final 50 AU stays below `1e-6`.
pub fn fixed_point_check_inactive(p: &NeuralParams, stimulus: f64) -> bool {
    let model = ModelConfig::Neural(*p);
    let dt = 0.01;
    let steps = 40_000;
    let tail = 5_000;
    let mut state = [0.5, 0.5];
    let mut max_speed: f64 = 0.0;
    for step in 0..steps {
        state = crate::network::rk4_step_fn(state, dt, |s| model.derivative(s, stimulus, 0.0, [0.0; 2]));
        if !(state[0].is_finite() && state[1].is_finite()) {
            return false;
        }
        if step >= steps - tail {
            let d = model.derivative(state, stimulus, 0.0, [0.0; 2]);
            max_speed = max_speed.max(d[0].hypot(d[1]));
        }
    }
    max_speed < 1e-6
}

fn check_finite(model: &str, values: &[f64]) -> Result<(), ConfigError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ConfigError::invalid(model, "parameters must be finite"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn fig1() -> NeuralParams {
        NeuralParams::illustration()
    }

    #[test]
    fn neural_dx_at_origin() {
        let (dx, _) = neural_derivative(NeuralState::default(), &NeuralParams::experiment(), 2.0, 0.0);
        assert!((dx - 4.02).abs() < 1e-12);
    }

    #[test]
    fn neural_dy_vanishes_on_sigmoid() {
        let p = fig1();
        let (_, dy) = neural_derivative(NeuralState { x: 0.0, y: p.gamma }, &p, 1.0, 0.0);
        assert_eq!(dy, 0.0);
        let (_, dy) = neural_derivative(NeuralState::default(), &p, 1.0, 0.0);
        assert!((dy - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(bz_sigmoid(0.0, 5.0), 0.5);
        assert_eq!(bz_sigmoid(1e6, 0.3), 1.0);
        let expected = (1.0 + (-5.0f64).tanh()) / 2.0;
        assert!((bz_sigmoid(-0.5, 10.0) - expected).abs() < 1e-18);
        assert!((expected - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn bz_examples() {
        let p = BzParams { tau_lo: 0.06, ..BzParams::experiment() };
        let (dx1, dx2) = bz_derivative(BzState::default(), &p, 0.06, 0.0);
        assert!((dx1 - 0.5 / 0.06).abs() < 1e-12);
        assert!((dx2 - 4.54e-5).abs() < 1e-7);
        let x1 = 0.73;
        let on_nullcline = BzState { x1, x2: bz_sigmoid(x1 - p.theta, p.beta2) };
        assert_eq!(bz_derivative(on_nullcline, &p, 0.06, 0.0).1, 0.0);
    }

    #[test]
    fn mems_examples() {
        let p = MemsParams::experiment();
        assert_eq!(mems_derivative(MemsState::default(), &p, 2.0 * PI, (0.0, 0.0)), (0.0, 0.0));
        let (re, im) = mems_derivative(MemsState { z_re: 1.0, z_im: 0.0 }, &p, 2.0 * PI, (0.0, 0.0));
        assert_eq!(re, 0.0);
        assert!((im - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn inactive_mode_is_stable() {
        assert!(fixed_point_check_inactive(&fig1(), -1.0));
        assert!(!fixed_point_check_inactive(&fig1(), 1.0));
        assert!(fixed_point_check_inactive(&fig1(), -10.0));
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(NeuralParams { epsilon: 0.0, ..NeuralParams::experiment() }.validate().is_err());
        assert!(NeuralParams { stimulus_lo: 5.0, ..NeuralParams::experiment() }.validate().is_err());
        assert!(BzParams { tau_lo: 0.0, ..BzParams::experiment() }.validate().is_err());
        assert!(BzParams { beta2: -1.0, ..BzParams::experiment() }.validate().is_err());
        assert!(MemsParams { nonlinear_d: 1.0, ..MemsParams::experiment() }.validate().is_err());
        assert!(MemsParams { damping_c: f64::NAN, ..MemsParams::experiment() }.validate().is_err());
        for kind in ModelKind::ALL {
            ModelConfig::experiment(kind).validate().unwrap();
        }
    }

    // Independent transcription of the right-hand sides, written with
    // powi/exp instead of the production expressions.
    fn neural_oracle(x: f64, y: f64, p: &NeuralParams, i: f64, s: f64) -> (f64, f64) {
        let th = |u: f64| (u.exp() - (-u).exp()) / (u.exp() + (-u).exp());
        (
            3.0 * x - x.powi(3) - y + 2.0 + p.rho + i + s,
            p.epsilon * (p.gamma * (1.0 + th(x / p.beta)) - y),
        )
    }

    fn bz_oracle(x1: f64, x2: f64, p: &BzParams, tau: f64, s: f64) -> (f64, f64) {
        let f = |u: f64, b: f64| 1.0 / (1.0 + (-2.0 * b * u).exp());
        ((f(x1 - x2, p.beta1) - x1) / tau + s, f(x1 - p.theta, p.beta2) - x2)
    }

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn neural_matches_oracle(x in -2.5f64..2.5, y in -1.0f64..25.0, i in -2.0f64..4.0, s in -1.0f64..1.0) {
            let p = NeuralParams::experiment();
            let got = neural_derivative(NeuralState { x, y }, &p, i, s);
            let want = neural_oracle(x, y, &p, i, s);
            prop_assert!(rel_close(got.0, want.0), "{got:?} vs {want:?}");
            prop_assert!(rel_close(got.1, want.1), "{got:?} vs {want:?}");
        }

        #[test]
        fn bz_matches_oracle(x1 in -0.5f64..1.5, x2 in -0.5f64..1.5, tau in 0.01f64..1.1, s in -1.0f64..1.0) {
            let p = BzParams::experiment();
            let got = bz_derivative(BzState { x1, x2 }, &p, tau, s);
            let want = bz_oracle(x1, x2, &p, tau, s);
            prop_assert!(rel_close(got.0, want.0), "{got:?} vs {want:?}");
            prop_assert!(rel_close(got.1, want.1), "{got:?} vs {want:?}");
        }

        #[test]
        fn sigmoid_bounded_and_monotone(x in -50.0f64..50.0, dx in 1e-3f64..1.0, beta in 0.01f64..5.0) {
            let a = bz_sigmoid(x, beta);
            let b = bz_sigmoid(x + dx, beta);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a);
            if (beta * (x + dx)).abs() < 10.0 {
                prop_assert!(b > a);
            }
        }

        #[test]
        fn mems_amplitude_attracts_to_unit_circle(re in -3.0f64..3.0, im in -3.0f64..3.0, omega in 6.0f64..7.0) {
            let r2 = re * re + im * im;
            prop_assume!(r2 > 1e-6 && (r2 - 1.0).abs() > 1e-9);
            let p = MemsParams::experiment();
            let (dre, dim) = mems_derivative(MemsState { z_re: re, z_im: im }, &p, omega, (0.0, 0.0));
            let radial = 2.0 * (re * dre + im * dim);
            prop_assert_eq!(radial.signum(), (1.0 - r2).signum());
        }

        #[test]
        fn derivatives_are_pure(a in -2.0f64..2.0, b in -2.0f64..2.0, ctrl in 0.01f64..4.0, s in -0.5f64..0.5) {
            for kind in ModelKind::ALL {
                let m = ModelConfig::experiment(kind);
                let first = m.derivative([a, b], ctrl, 0.0, [s, s]);
                let second = m.derivative([a, b], ctrl, 0.0, [s, s]);
                prop_assert_eq!(first[0].to_bits(), second[0].to_bits());
                prop_assert_eq!(first[1].to_bits(), second[1].to_bits());
            }
        }
    }
}
