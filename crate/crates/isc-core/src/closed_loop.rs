//! Interconnection of a highway plant with an incentive-seeking controller.
//!
//! The composed object is an ordinary [`HybridSystemSpec`] over the stacked
//! state (plant, û, controller internals, μ). The plant receives the dithered
//! incentive u = û + ε_a·𝔻μ and the controller receives the measured cost
//! φ = (ρ − ρ_ref)² at the current (dithered) operating point. Only the
//! HMISC loop has a nonempty jump set, the timer boundary τ = T.

use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::performance_index;
use crate::controllers::{ControllerGains, XI_FLOOR};
use crate::dither::{oscillator_rhs_with_rates, renormalize_pairs, DitherConfig};
use crate::error::{Error, Result};
use crate::hybrid::{FlowMap, HybridSystemSpec, HybridTime, JumpMap, Projection, SetPredicate};
use crate::plant::{behavior_rhs_projected, density_rhs, mean_velocity, HighwayParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Gisc,
    Hmisc,
    Fxisc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] =
        [ControllerKind::Gisc, ControllerKind::Hmisc, ControllerKind::Fxisc];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Gisc => "gisc",
            ControllerKind::Hmisc => "hmisc",
            ControllerKind::Fxisc => "fxisc",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gisc" => Ok(ControllerKind::Gisc),
            "hmisc" => Ok(ControllerKind::Hmisc),
            "fxisc" => Ok(ControllerKind::Fxisc),
            other => Err(Error::config(format!(
                "unknown controller {other:?} (expected gisc, hmisc or fxisc)"
            ))),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantVariant {
    Static,
    Dynamic,
}

impl FromStr for PlantVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(PlantVariant::Static),
            "dynamic" => Ok(PlantVariant::Dynamic),
            other => Err(Error::config(format!(
                "unknown plant variant {other:?} (expected static or dynamic)"
            ))),
        }
    }
}

impl std::fmt::Display for PlantVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlantVariant::Static => "static",
            PlantVariant::Dynamic => "dynamic",
        })
    }
}

/// Index map of the stacked closed-loop state vector.
///
/// Order: [q_EL] (dynamic plant only), ρ, û, controller internals
/// (HMISC: p then τ; FxISC: ξ), then the m dither pairs μ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub controller: ControllerKind,
    pub plant: PlantVariant,
    pub m: usize,
}

impl StateLayout {
    pub fn new(controller: ControllerKind, plant: PlantVariant, m: usize) -> Self {
        StateLayout { controller, plant, m }
    }

    pub fn plant_dim(&self) -> usize {
        match self.plant {
            PlantVariant::Static => 1,
            PlantVariant::Dynamic => 2,
        }
    }

    pub fn state_dim(&self) -> usize {
        let ctrl = match self.controller {
            ControllerKind::Gisc => self.m,
            ControllerKind::Hmisc => 2 * self.m + 1,
            ControllerKind::Fxisc => 2 * self.m,
        };
        self.plant_dim() + ctrl + 2 * self.m
    }

    pub fn q_el(&self) -> Option<usize> {
        match self.plant {
            PlantVariant::Static => None,
            PlantVariant::Dynamic => Some(0),
        }
    }

    pub fn rho(&self) -> usize {
        self.plant_dim() - 1
    }

    pub fn u_hat(&self) -> Range<usize> {
        let base = self.plant_dim();
        base..base + self.m
    }

    pub fn p(&self) -> Option<Range<usize>> {
        match self.controller {
            ControllerKind::Hmisc => {
                let base = self.plant_dim() + self.m;
                Some(base..base + self.m)
            }
            _ => None,
        }
    }

    pub fn tau(&self) -> Option<usize> {
        match self.controller {
            ControllerKind::Hmisc => Some(self.plant_dim() + 2 * self.m),
            _ => None,
        }
    }

    pub fn xi(&self) -> Option<Range<usize>> {
        match self.controller {
            ControllerKind::Fxisc => {
                let base = self.plant_dim() + self.m;
                Some(base..base + self.m)
            }
            _ => None,
        }
    }

    pub fn mu(&self) -> Range<usize> {
        let end = self.state_dim();
        end - 2 * self.m..end
    }

    fn indexed(&self, stem: &str, i: usize) -> String {
        if self.m == 1 {
            stem.to_string()
        } else {
            format!("{stem}{}", i + 1)
        }
    }

    pub fn state_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.state_dim());
        if self.q_el().is_some() {
            names.push("q_el".to_string());
        }
        names.push("rho".to_string());
        for i in 0..self.m {
            names.push(self.indexed("u_hat", i));
        }
        match self.controller {
            ControllerKind::Gisc => {}
            ControllerKind::Hmisc => {
                for i in 0..self.m {
                    names.push(self.indexed("p", i));
                }
                names.push("tau".to_string());
            }
            ControllerKind::Fxisc => {
                for i in 0..self.m {
                    names.push(self.indexed("xi", i));
                }
            }
        }
        for i in 0..2 * self.m {
            names.push(format!("mu{}", i + 1));
        }
        names
    }

    /// Header of an exported trace: hybrid time, the state columns with the
    /// realized input u spliced in after û, and the measured cost last.
    pub fn trace_columns(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string(), "j".to_string()];
        let names = self.state_names();
        let u_hat_end = self.u_hat().end;
        for (idx, name) in names.into_iter().enumerate() {
            cols.push(name);
            if idx + 1 == u_hat_end {
                for i in 0..self.m {
                    cols.push(self.indexed("u", i));
                }
            }
        }
        cols.push("phi".to_string());
        cols
    }

    /// Realized plant input u = û + ε_a·𝔻μ.
    pub fn input(&self, x: &[f64], eps_a: f64) -> Vec<f64> {
        let mu = self.mu().start;
        self.u_hat()
            .enumerate()
            .map(|(i, ui)| x[ui] + eps_a * x[mu + 2 * i])
            .collect()
    }

    /// One exported trace row matching [`trace_columns`](Self::trace_columns).
    pub fn trace_row(&self, ht: &HybridTime, x: &[f64], eps_a: f64, rho_ref: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.state_dim() + self.m + 3);
        row.push(ht.t);
        row.push(ht.j as f64);
        let u_hat_end = self.u_hat().end;
        for (idx, v) in x.iter().enumerate() {
            row.push(*v);
            if idx + 1 == u_hat_end {
                row.extend(self.input(x, eps_a));
            }
        }
        row.push(performance_index(x[self.rho()], rho_ref));
        row
    }
}

/// Initial condition of the composed loop in physical coordinates. Fields
/// left `None` take the controller-at-rest defaults: p = û, τ = T0, ξ = 0,
/// μ = the standard phase (1, 0) per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopInit {
    pub rho: f64,
    pub q_el: Option<f64>,
    pub u_hat: Vec<f64>,
    pub p: Option<Vec<f64>>,
    pub tau: Option<f64>,
    pub xi: Option<Vec<f64>>,
}

impl LoopInit {
    pub fn new(rho: f64, u_hat: Vec<f64>) -> Self {
        LoopInit { rho, q_el: None, u_hat, p: None, tau: None, xi: None }
    }

    pub fn with_q_el(mut self, q_el: f64) -> Self {
        self.q_el = Some(q_el);
        self
    }
}

impl StateLayout {
    /// Packs a [`LoopInit`] into the stacked state vector.
    pub fn pack(&self, init: &LoopInit, gains: &ControllerGains) -> Result<Vec<f64>> {
        if init.u_hat.len() != self.m {
            return Err(Error::config(format!(
                "û has dimension {}, layout expects {}",
                init.u_hat.len(),
                self.m
            )));
        }
        let mut x = vec![0.0; self.state_dim()];
        if let Some(qi) = self.q_el() {
            x[qi] = init.q_el.ok_or_else(|| {
                Error::config("dynamic plant variant requires an initial q_el")
            })?;
        } else if init.q_el.is_some() {
            return Err(Error::config("static plant variant takes no q_el state"));
        }
        x[self.rho()] = init.rho;
        x[self.u_hat()].copy_from_slice(&init.u_hat);
        if let Some(pr) = self.p() {
            match &init.p {
                Some(p) if p.len() == self.m => x[pr].copy_from_slice(p),
                Some(p) => {
                    return Err(Error::config(format!(
                        "p has dimension {}, layout expects {}",
                        p.len(),
                        self.m
                    )))
                }
                None => x[pr].copy_from_slice(&init.u_hat),
            }
        }
        if let Some(ti) = self.tau() {
            let tau = init.tau.unwrap_or(gains.t0);
            if !(tau >= gains.t0 && tau <= gains.t) {
                return Err(Error::config(format!(
                    "initial tau={} outside [{}, {}]",
                    tau, gains.t0, gains.t
                )));
            }
            x[ti] = tau;
        }
        if let Some(xr) = self.xi() {
            if let Some(xi) = &init.xi {
                if xi.len() != self.m {
                    return Err(Error::config(format!(
                        "xi has dimension {}, layout expects {}",
                        xi.len(),
                        self.m
                    )));
                }
                x[xr].copy_from_slice(xi);
            }
        }
        let mu = self.mu().start;
        for i in 0..self.m {
            x[mu + 2 * i] = 1.0;
        }
        Ok(x)
    }
}

/// Assembles the hybrid closed loop. The plant is single-input, so the
/// dither dimension m must be 1.
pub fn compose_closed_loop(
    controller: ControllerKind,
    plant: PlantVariant,
    gains: &ControllerGains,
    dither: &DitherConfig,
    params: &HighwayParams,
    rho_ref: f64,
) -> Result<HybridSystemSpec> {
    gains.validate()?;
    dither.validate()?;
    params.validate()?;
    if dither.m() != 1 {
        return Err(Error::config(format!(
            "dither drives {} inputs but the highway plant takes 1",
            dither.m()
        )));
    }
    if !rho_ref.is_finite() {
        return Err(Error::config(format!("rho_ref must be finite, got {rho_ref}")));
    }

    let layout = StateLayout::new(controller, plant, 1);
    let dim = layout.state_dim();
    let rates = dither.angular_rates();
    let eps_a = dither.eps_a;
    let p = *params;
    let g = *gains;

    let rho_i = layout.rho();
    let q_i = layout.q_el();
    let uh_i = layout.u_hat().start;
    let mu_r = layout.mu();
    let mu_i = mu_r.start;

    // Scalar specialization of the controller fields; the struct-level rhs
    // functions stay the reference implementation and the two are pinned
    // together by the composition tests.
    let flow_map: FlowMap = {
        let mu_r = mu_r.clone();
        match controller {
            ControllerKind::Gisc => Box::new(move |x: &[f64], dx: &mut [f64]| {
                let rho = x[rho_i];
                let u = x[uh_i] + eps_a * x[mu_i];
                let phi = performance_index(rho, rho_ref);
                let demod = (2.0 / eps_a) * x[mu_i];
                plant_flow(x, dx, rho, u, q_i, rho_i, &p);
                dx[uh_i] = -g.k * phi * demod;
                oscillator_rhs_with_rates(&x[mu_r.clone()], &rates, &mut dx[mu_r.clone()]);
            }),
            ControllerKind::Hmisc => {
                let p_i = layout.p().unwrap().start;
                let tau_i = layout.tau().unwrap();
                Box::new(move |x: &[f64], dx: &mut [f64]| {
                    let rho = x[rho_i];
                    let u = x[uh_i] + eps_a * x[mu_i];
                    let phi = performance_index(rho, rho_ref);
                    let demod = (2.0 / eps_a) * x[mu_i];
                    plant_flow(x, dx, rho, u, q_i, rho_i, &p);
                    let tau = x[tau_i];
                    dx[uh_i] = (2.0 / tau) * (x[p_i] - x[uh_i]);
                    dx[p_i] = -2.0 * g.k * tau * phi * demod;
                    dx[tau_i] = 0.5;
                    oscillator_rhs_with_rates(&x[mu_r.clone()], &rates, &mut dx[mu_r.clone()]);
                })
            }
            ControllerKind::Fxisc => {
                let xi_i = layout.xi().unwrap().start;
                Box::new(move |x: &[f64], dx: &mut [f64]| {
                    let rho = x[rho_i];
                    let u = x[uh_i] + eps_a * x[mu_i];
                    let phi = performance_index(rho, rho_ref);
                    let demod = (2.0 / eps_a) * x[mu_i];
                    plant_flow(x, dx, rho, u, q_i, rho_i, &p);
                    let xi = x[xi_i];
                    let norm = xi.abs();
                    dx[uh_i] = if norm <= XI_FLOOR {
                        0.0
                    } else {
                        -g.k * (norm.powf(-g.alpha) + norm.powf(g.alpha)) * xi
                    };
                    dx[xi_i] = (-xi + phi * demod) / g.eps_f;
                    oscillator_rhs_with_rates(&x[mu_r.clone()], &rates, &mut dx[mu_r.clone()]);
                })
            }
        }
    };

    let boundary_tol = 1e-9 * g.t.abs().max(1.0);
    let (flow_set, jump_set, jump_map, time_to_jump): (
        SetPredicate,
        SetPredicate,
        JumpMap,
        Option<crate::hybrid::BoundaryHint>,
    ) = match controller {
        ControllerKind::Hmisc => {
            let tau_i = layout.tau().unwrap();
            let p_i = layout.p().unwrap().start;
            let t_hi = g.t;
            let t_lo = g.t0;
            let sigma = g.sigma;
            (
                Box::new(move |x: &[f64]| x[tau_i] <= t_hi + boundary_tol),
                Box::new(move |x: &[f64]| x[tau_i] >= t_hi - boundary_tol),
                Box::new(move |x: &[f64], out: &mut [f64]| {
                    out.copy_from_slice(x);
                    out[p_i] = sigma * x[p_i] + (1.0 - sigma) * x[uh_i];
                    out[tau_i] = t_lo;
                }),
                // Timer rate 1/2: flow time to the boundary is 2(T - tau).
                Some(Box::new(move |x: &[f64]| Some(2.0 * (t_hi - x[tau_i])))),
            )
        }
        _ => (
            Box::new(|_: &[f64]| true),
            Box::new(|_: &[f64]| false),
            Box::new(|x: &[f64], out: &mut [f64]| out.copy_from_slice(x)),
            None,
        ),
    };

    // RK4 lets the dither amplitude drift at O(h^5) per step and the driver
    // response poke out of [0, Q] inside a step; both are snapped back here.
    let projection: Projection = {
        let mu_r = layout.mu();
        let q_demand = p.q_demand;
        Box::new(move |x: &mut [f64]| {
            renormalize_pairs(&mut x[mu_r.clone()]);
            if let Some(qi) = q_i {
                x[qi] = x[qi].clamp(0.0, q_demand);
            }
        })
    };

    Ok(HybridSystemSpec {
        state_dim: dim,
        flow_map,
        jump_map,
        flow_set,
        jump_set,
        time_to_jump,
        projection: Some(projection),
    })
}

fn plant_flow(
    x: &[f64],
    dx: &mut [f64],
    rho: f64,
    u: f64,
    q_i: Option<usize>,
    rho_i: usize,
    p: &HighwayParams,
) {
    match q_i {
        None => {
            dx[rho_i] = density_rhs(rho, u, p) / p.eps0;
        }
        Some(qi) => {
            let q_el = x[qi];
            dx[qi] = p.k_m * behavior_rhs_projected(q_el, u, p) / p.eps0;
            dx[rho_i] = (p.k_rho / (p.l * p.eps0)) * (q_el - mean_velocity(rho, p) * rho);
        }
    }
}

/// Default integrator step for a composed loop: 1/50 of the fastest dither
/// period ε_p/ω_max. Presets override this when a plant pole is the binding
/// stability constraint instead.
pub fn default_step(dither: &DitherConfig) -> f64 {
    let omega_max = dither
        .omega
        .iter()
        .map(|w| w.as_f64())
        .fold(0.0_f64, f64::max);
    if omega_max > 0.0 {
        dither.eps_p / (50.0 * omega_max)
    } else {
        dither.eps_p / 50.0
    }
}
