//! The three incentive-seeking controllers.
//!
//! All of them estimate the gradient of the steady-state cost by multiplying
//! the measured cost φ against the demodulation vector M(μ) and differ in
//! how they turn that estimate into motion of the nominal incentive û:
//!
//! * GISC: gradient flow, û̇ = −k·φ·M(μ).
//! * HMISC: momentum dynamics with a restarting timer. û chases the
//!   companion p with damping 2/τ while p integrates the gradient with gain
//!   2kτ; when the timer reaches T it resets to T0 and p is reset according
//!   to the policy σ (σ=0 restarts momentum at the current incentive, σ=1
//!   keeps it).
//! * FxISC: a low-pass filter ξ tracks the gradient estimate and û moves
//!   along a mixed sub-/super-linear feedback of ξ, giving convergence in a
//!   time bounded independently of the initial condition.

use serde::{Deserialize, Serialize};

use crate::dither::{demodulation_gain, oscillator_rhs, DitherConfig, DitherState};
use crate::error::{Error, Result};

/// Norm floor below which the FxISC direction field is defined to be zero,
/// preventing |ξ|^{-α} from blowing up at machine-zero filter states.
pub const XI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub k: f64,
    pub alpha: f64,
    pub sigma: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub eps_f: f64,
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::config(format!("gain k must be positive, got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.sigma == 0.0 || self.sigma == 1.0) {
            return Err(Error::config(format!("sigma must be 0 or 1, got {}", self.sigma)));
        }
        if !(self.t0 > 0.0 && self.t0 < self.t) {
            return Err(Error::config(format!(
                "timer bounds must satisfy 0 < T0 < T, got T0={}, T={}",
                self.t0, self.t
            )));
        }
        if !(self.eps_f > 0.0 && self.eps_f.is_finite()) {
            return Err(Error::config(format!("eps_f must be positive, got {}", self.eps_f)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GiscState {
    pub u_hat: Vec<f64>,
    pub mu: DitherState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmiscState {
    pub u_hat: Vec<f64>,
    pub p: Vec<f64>,
    pub tau: f64,
    pub mu: DitherState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FxiscState {
    pub u_hat: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu: DitherState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GiscDeriv {
    pub u_hat: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmiscDeriv {
    pub u_hat: Vec<f64>,
    pub p: Vec<f64>,
    pub tau: f64,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FxiscDeriv {
    pub u_hat: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
}

pub(crate) fn gisc_update(phi_meas: f64, k: f64, demod: &[f64], out: &mut [f64]) {
    for (o, m) in out.iter_mut().zip(demod) {
        *o = -k * phi_meas * m;
    }
}

/// û̇ = −k·φ·M(μ), μ̇ = (1/ε_p)Rμ.
pub fn gisc_rhs(
    state: &GiscState,
    phi_meas: f64,
    gains: &ControllerGains,
    dither: &DitherConfig,
) -> Result<GiscDeriv> {
    let demod = demodulation_gain(&state.mu.mu, dither)?;
    let mut u_hat = vec![0.0; state.u_hat.len()];
    gisc_update(phi_meas, gains.k, &demod, &mut u_hat);
    let mut mu = vec![0.0; state.mu.mu.len()];
    oscillator_rhs(&state.mu.mu, dither, &mut mu);
    Ok(GiscDeriv { u_hat, mu })
}

pub(crate) fn hmisc_update(
    u_hat: &[f64],
    p: &[f64],
    tau: f64,
    phi_meas: f64,
    k: f64,
    demod: &[f64],
    du_hat: &mut [f64],
    dp: &mut [f64],
) {
    for i in 0..u_hat.len() {
        du_hat[i] = (2.0 / tau) * (p[i] - u_hat[i]);
        dp[i] = -2.0 * k * tau * phi_meas * demod[i];
    }
}

/// û̇ = (2/τ)(p − û), ṗ = −2kτ·φ·M(μ), τ̇ = 1/2, μ̇ = (1/ε_p)Rμ.
/// Only valid on the flow set τ ∈ [T0, T].
pub fn hmisc_flow(
    state: &HmiscState,
    phi_meas: f64,
    gains: &ControllerGains,
    dither: &DitherConfig,
) -> Result<HmiscDeriv> {
    if !(state.tau >= gains.t0 && state.tau <= gains.t) {
        return Err(Error::domain(
            "hmisc_flow",
            format!("tau={} outside flow set [{}, {}]", state.tau, gains.t0, gains.t),
        ));
    }
    let demod = demodulation_gain(&state.mu.mu, dither)?;
    let m = state.u_hat.len();
    let mut u_hat = vec![0.0; m];
    let mut p = vec![0.0; m];
    hmisc_update(&state.u_hat, &state.p, state.tau, phi_meas, gains.k, &demod, &mut u_hat, &mut p);
    let mut mu = vec![0.0; state.mu.mu.len()];
    oscillator_rhs(&state.mu.mu, dither, &mut mu);
    Ok(HmiscDeriv { u_hat, p, tau: 0.5, mu })
}

/// Timer reset: û⁺ = û, p⁺ = σp + (1−σ)û, τ⁺ = T0, μ⁺ = μ.
/// Only valid on the jump set τ = T.
pub fn hmisc_jump(state: &HmiscState, gains: &ControllerGains) -> Result<HmiscState> {
    let tol = 1e-9 * gains.t.abs().max(1.0);
    if (state.tau - gains.t).abs() > tol {
        return Err(Error::domain(
            "hmisc_jump",
            format!("tau={} is not at the jump boundary T={}", state.tau, gains.t),
        ));
    }
    let p = state
        .p
        .iter()
        .zip(&state.u_hat)
        .map(|(pi, ui)| gains.sigma * pi + (1.0 - gains.sigma) * ui)
        .collect();
    Ok(HmiscState {
        u_hat: state.u_hat.clone(),
        p,
        tau: gains.t0,
        mu: state.mu.clone(),
    })
}

pub(crate) fn fxisc_direction(xi: &[f64], k: f64, alpha: f64, out: &mut [f64]) {
    let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= XI_FLOOR {
        out.fill(0.0);
        return;
    }
    let scale = norm.powf(-alpha) + norm.powf(alpha);
    for (o, x) in out.iter_mut().zip(xi) {
        *o = -k * scale * x;
    }
}

pub(crate) fn fxisc_filter(xi: &[f64], phi_meas: f64, eps_f: f64, demod: &[f64], out: &mut [f64]) {
    for i in 0..xi.len() {
        out[i] = (-xi[i] + phi_meas * demod[i]) / eps_f;
    }
}

/// û̇ = −k(ξ/|ξ|^α + ξ·|ξ|^α) with Euclidean |ξ| (zero below the floor),
/// ξ̇ = (1/ε_f)(−ξ + φ·M(μ)), μ̇ = (1/ε_p)Rμ.
pub fn fxisc_rhs(
    state: &FxiscState,
    phi_meas: f64,
    gains: &ControllerGains,
    dither: &DitherConfig,
) -> Result<FxiscDeriv> {
    let demod = demodulation_gain(&state.mu.mu, dither)?;
    let m = state.u_hat.len();
    let mut u_hat = vec![0.0; m];
    fxisc_direction(&state.xi, gains.k, gains.alpha, &mut u_hat);
    let mut xi = vec![0.0; m];
    fxisc_filter(&state.xi, phi_meas, gains.eps_f, &demod, &mut xi);
    let mut mu = vec![0.0; state.mu.mu.len()];
    oscillator_rhs(&state.mu.mu, dither, &mut mu);
    Ok(FxiscDeriv { u_hat, xi, mu })
}

/// Fixed-time convergence bound T* = π/(2·k·α·κ) of the FxISC gradient flow
/// on a κ-strongly-convex cost.
pub fn fixed_time_bound(k: f64, alpha: f64, kappa: f64) -> Result<f64> {
    for (name, v) in [("k", k), ("alpha", alpha), ("kappa", kappa)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::config(format!("{name} must be positive, got {v}")));
        }
    }
    if alpha >= 1.0 {
        return Err(Error::config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(std::f64::consts::PI / (2.0 * k * alpha * kappa))
}
