//! Socio-technical highway segment model.
//!
//! One tolled express lane alongside a general-purpose lane. Drivers choose
//! the express lane according to a logistic comparison of perceived costs
//! (travel time plus toll), which sets the inflow q_EL; the lane's average
//! density ρ then evolves by flow conservation with the equilibrium velocity
//! profile v̄(ρ). Two variants:
//!
//! * static drivers: q_EL is an instantaneous logistic function of (ρ, u),
//!   leaving ρ as the only plant state;
//! * dynamic drivers: q_EL has its own relaxation dynamics driven by the
//!   marginal cost of choosing the express lane, giving state θ = (q_EL, ρ).
//!
//! All rates are per simulation time unit; `eps0` rescales the whole plant
//! relative to the controller timescales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All plant constants. Speeds in mph, densities in veh/mi, demand in veh/hr.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HighwayParams {
    pub v_free: f64,
    pub v_jam: f64,
    pub rho_jam: f64,
    pub rho_crit: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "Q")]
    pub q_demand: f64,
    pub a: f64,
    pub b: f64,
    pub gamma_el: f64,
    pub gamma_gp: f64,
    pub delta: f64,
    pub a_tilde: f64,
    pub k_m: f64,
    pub k_rho: f64,
    pub eps0: f64,
}

impl HighwayParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_free > self.v_jam && self.v_jam > 0.0) {
            return Err(Error::config(format!(
                "require v_free > v_jam > 0, got v_free={}, v_jam={}",
                self.v_free, self.v_jam
            )));
        }
        if !(self.rho_jam > self.rho_crit && self.rho_crit > 0.0) {
            return Err(Error::config(format!(
                "require rho_jam > rho_crit > 0, got rho_jam={}, rho_crit={}",
                self.rho_jam, self.rho_crit
            )));
        }
        for (name, v) in [
            ("L", self.l),
            ("Q", self.q_demand),
            ("eps0", self.eps0),
            ("k_m", self.k_m),
            ("k_rho", self.k_rho),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.delta < 1.0 {
            return Err(Error::config(format!("delta must be >= 1, got {}", self.delta)));
        }
        for (name, v) in [("a", self.a), ("b", self.b), ("a_tilde", self.a_tilde)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Plant state θ. `q_el` is present only in the dynamic-driver variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub rho: f64,
    pub q_el: Option<f64>,
}

impl PlantState {
    pub fn static_driver(rho: f64) -> Self {
        PlantState { rho, q_el: None }
    }

    pub fn dynamic_driver(q_el: f64, rho: f64) -> Self {
        PlantState { rho, q_el: Some(q_el) }
    }
}

/// Equilibrium velocity v̄(ρ): a mollified decreasing sigmoid from v_free
/// down to v_jam, centered between the critical and jam densities.
pub fn mean_velocity(rho: f64, p: &HighwayParams) -> f64 {
    let slope = 4.0 / (p.rho_jam - p.rho_crit);
    let center = 0.5 * (p.rho_jam + p.rho_crit);
    (p.v_free - p.v_jam) / (1.0 + (slope * (rho - center)).exp()) + p.v_jam
}

/// Static-driver inflow: demand Q split by a logistic of the marginal cost
/// c_EL - c_GP, with c_EL = a·L/v̄ + b·u + γ_EL and c_GP = a·(L/v̄)·δ + γ_GP.
pub fn static_inflow(rho: f64, u: f64, p: &HighwayParams) -> f64 {
    let travel_time = p.l / mean_velocity(rho, p);
    let margin = p.a * travel_time * (1.0 - p.delta) + p.b * u + p.gamma_el - p.gamma_gp;
    p.q_demand / (1.0 + margin.exp())
}

/// Density rate for the static-driver variant (before the 1/ε₀ timescale).
/// Shares one velocity evaluation between the inflow and outflow terms; this
/// sits inside every RK4 stage of the static closed loop.
pub fn density_rhs(rho: f64, u: f64, p: &HighwayParams) -> f64 {
    let v = mean_velocity(rho, p);
    let margin = p.a * (p.l / v) * (1.0 - p.delta) + p.b * u + p.gamma_el - p.gamma_gp;
    let q = p.q_demand / (1.0 + margin.exp());
    (p.k_rho / p.l) * (q - v * rho)
}

/// Interior driver-response field: the negative marginal cost of choosing
/// the express lane. Callers are responsible for the [0, Q] box.
fn behavior_field(q_el: f64, u: f64, p: &HighwayParams) -> f64 {
    -((q_el - 0.5 * p.q_demand) + p.a_tilde * u)
}

// RK4 stage evaluations can poke slightly past the [0, Q] box before the
// post-step projection snaps the state back; tolerate excursions up to this
// fraction of Q and treat them with boundary semantics.
const Q_BOX_SLACK: f64 = 0.01;

/// Dynamic-driver inflow rate, projected so the box q_EL ∈ [0, Q] is forward
/// invariant: the field is zeroed when it points out of the box at either
/// boundary.
pub fn behavior_rhs(q_el: f64, u: f64, p: &HighwayParams) -> Result<f64> {
    let slack = Q_BOX_SLACK * p.q_demand;
    if !(q_el >= -slack && q_el <= p.q_demand + slack) {
        return Err(Error::domain(
            "behavior_rhs",
            format!("q_EL={} outside [0, {}]", q_el, p.q_demand),
        ));
    }
    Ok(behavior_rhs_projected(q_el, u, p))
}

/// Infallible core used by the closed-loop flow map, where the projection
/// step maintains the box between steps.
pub(crate) fn behavior_rhs_projected(q_el: f64, u: f64, p: &HighwayParams) -> f64 {
    let qc = q_el.clamp(0.0, p.q_demand);
    let psi = behavior_field(qc, u, p);
    if (q_el <= 0.0 && psi < 0.0) || (q_el >= p.q_demand && psi > 0.0) {
        0.0
    } else {
        psi
    }
}

/// Full dynamic-variant rate: θ̇ = ( (k_m/ε₀)·Ψ, (k_ρ/(L·ε₀))·(q_EL − v̄ρ) ).
pub fn full_rhs(theta: &PlantState, u: f64, p: &HighwayParams) -> Result<[f64; 2]> {
    let q_el = theta.q_el.ok_or_else(|| {
        Error::domain("full_rhs", "dynamic variant requires a q_EL state")
    })?;
    let dq = p.k_m * behavior_rhs(q_el, u, p)? / p.eps0;
    let drho = (p.k_rho / (p.l * p.eps0)) * (q_el - mean_velocity(theta.rho, p) * theta.rho);
    Ok([dq, drho])
}
