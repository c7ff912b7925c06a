//! Ensemble runs, error metrics, and the robustness sweep.
//!
//! An ensemble integrates the same closed loop from seeded random initial
//! densities and reduces the trajectories to MSE(t) on a shared uniform
//! grid, so metrics never depend on where the integrator happened to place
//! its samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{
    compose_closed_loop, ControllerKind, LoopInit, PlantVariant, StateLayout,
};
use crate::controllers::ControllerGains;
use crate::dither::DitherConfig;
use crate::error::{Error, Result};
use crate::hybrid::{
    simulate, HybridSystemSpec, HybridTime, HybridTrace, IntegratorConfig, TerminalReason,
};
use crate::plant::HighwayParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub controller: ControllerKind,
    pub variant: PlantVariant,
    pub n_traj: usize,
    pub rho0_range: (f64, f64),
    /// Density box the initial range must live in.
    pub rho_box: (f64, f64),
    pub u0: f64,
    pub q_el0: Option<f64>,
    /// Horizon in minutes, the unit the whole loop runs in.
    pub t_final: f64,
    pub seed: u64,
    pub h: f64,
    pub record_stride: usize,
    /// Resolution of the shared metric grid.
    pub sample_dt: f64,
    pub rho_ref: f64,
    pub gains: ControllerGains,
    pub dither: DitherConfig,
    pub params: HighwayParams,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::config("ensemble needs n_traj >= 1"));
        }
        let (lo, hi) = self.rho0_range;
        if !(lo <= hi) {
            return Err(Error::config(format!("empty initial density range [{lo}, {hi}]")));
        }
        if lo < self.rho_box.0 || hi > self.rho_box.1 {
            return Err(Error::config(format!(
                "initial density range [{lo}, {hi}] leaves the admissible box [{}, {}]",
                self.rho_box.0, self.rho_box.1
            )));
        }
        if self.variant == PlantVariant::Dynamic && self.q_el0.is_none() {
            return Err(Error::config("dynamic plant variant requires q_el0"));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::config(format!("horizon must be positive, got {}", self.t_final)));
        }
        if !(self.h > 0.0) {
            return Err(Error::config(format!("step must be positive, got {}", self.h)));
        }
        if !(self.sample_dt > 0.0) {
            return Err(Error::config(format!(
                "metric grid resolution must be positive, got {}",
                self.sample_dt
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(self.controller, self.variant, self.dither.m())
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub traces: Vec<HybridTrace>,
    /// (t, MSE(t)) on the shared uniform grid covering [0, t_final].
    pub mse_curve: Vec<(f64, f64)>,
    pub tmse: f64,
    pub metadata: EnsembleConfig,
}

/// Initial densities drawn once, in trajectory order, from a ChaCha stream.
/// Pre-generating them keeps ensembles reproducible however the trajectory
/// work is scheduled afterwards.
pub fn sample_initial_densities(range: (f64, f64), n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| range.0 + rng.gen::<f64>() * (range.1 - range.0))
        .collect()
}

pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let spec = compose_closed_loop(
        config.controller,
        config.variant,
        &config.gains,
        &config.dither,
        &config.params,
        config.rho_ref,
    )?;
    let layout = config.layout();
    let rho0 = sample_initial_densities(config.rho0_range, config.n_traj, config.seed);

    let integ = IntegratorConfig {
        h: config.h,
        t_max: config.t_final,
        j_max: u32::MAX,
        record_stride: config.record_stride,
    };

    let runs: Vec<Result<HybridTrace>> = rho0
        .par_iter()
        .map(|&rho| {
            let mut init = LoopInit::new(rho, vec![config.u0]);
            init.q_el = config.q_el0;
            let x0 = layout.pack(&init, &config.gains)?;
            let trace = simulate(&spec, &x0, &integ)?;
            if trace.terminal_reason != TerminalReason::Horizon {
                let at = trace
                    .final_state()
                    .map(|(ht, _)| *ht)
                    .unwrap_or(HybridTime { t: 0.0, j: 0 });
                return Err(Error::Numeric {
                    t: at.t,
                    j: at.j,
                    what: format!("integration stopped early ({:?})", trace.terminal_reason),
                });
            }
            Ok(trace)
        })
        .collect();

    let mut traces = Vec::with_capacity(config.n_traj);
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(trace) => traces.push(trace),
            // A diverged integration keeps its numeric class (and hybrid
            // time) so callers can tell it apart from a bad configuration.
            Err(Error::Numeric { t, j, what }) => {
                return Err(Error::Numeric { t, j, what: format!("trajectory {i}: {what}") })
            }
            Err(e) => return Err(Error::config(format!("trajectory {i} failed: {e}"))),
        }
    }

    let mse_curve = mse_on_grid(&traces, layout.rho(), config.rho_ref, config.t_final, config.sample_dt)?;
    let tmse = tmse(&mse_curve, config.t_final)?;
    Ok(EnsembleResult { traces, mse_curve, tmse, metadata: config.clone() })
}

/// Mean squared density deviation from ρ_ref at time `t`, interpolating
/// linearly between recorded samples.
pub fn mse(traces: &[HybridTrace], rho_index: usize, rho_ref: f64, t: f64) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::domain("mse", "no trajectories"));
    }
    let mut acc = 0.0;
    for (i, trace) in traces.iter().enumerate() {
        let horizon = trace
            .final_state()
            .map(|(ht, _)| ht.t)
            .unwrap_or(f64::NEG_INFINITY);
        if t < -1e-9 || t > horizon + 1e-9 {
            return Err(Error::domain(
                "mse",
                format!("t={t} outside trajectory {i}'s horizon [0, {horizon}]"),
            ));
        }
        let state = trace.state_at(t).ok_or_else(|| {
            Error::domain("mse", format!("trajectory {i} has no samples"))
        })?;
        let d = state[rho_index] - rho_ref;
        acc += d * d;
    }
    Ok(acc / traces.len() as f64)
}

fn mse_on_grid(
    traces: &[HybridTrace],
    rho_index: usize,
    rho_ref: f64,
    t_final: f64,
    sample_dt: f64,
) -> Result<Vec<(f64, f64)>> {
    let n = (t_final / sample_dt).round() as usize;
    let mut curve = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = (k as f64 * sample_dt).min(t_final);
        curve.push((t, mse(traces, rho_index, rho_ref, t)?));
    }
    if curve.last().map(|(t, _)| *t) != Some(t_final) {
        curve.push((t_final, mse(traces, rho_index, rho_ref, t_final)?));
    }
    Ok(curve)
}

/// Time-averaged MSE: trapezoidal integral of the curve over [0, t_f],
/// divided by t_f.
pub fn tmse(mse_curve: &[(f64, f64)], t_f: f64) -> Result<f64> {
    if !(t_f > 0.0) {
        return Err(Error::domain("tmse", format!("horizon must be positive, got {t_f}")));
    }
    let last = mse_curve
        .last()
        .ok_or_else(|| Error::domain("tmse", "empty curve"))?;
    if last.0 < t_f - 1e-9 {
        return Err(Error::domain(
            "tmse",
            format!("curve ends at t={}, short of the horizon {t_f}", last.0),
        ));
    }
    let mut integral = 0.0;
    for w in mse_curve.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if t0 >= t_f {
            break;
        }
        if t1 <= t_f {
            integral += 0.5 * (v0 + v1) * (t1 - t0);
        } else {
            // Cut the final segment at the horizon.
            let w1 = (t_f - t0) / (t1 - t0);
            let v_cut = v0 + w1 * (v1 - v0);
            integral += 0.5 * (v0 + v_cut) * (t_f - t0);
        }
    }
    Ok(integral / t_f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma_el: f64,
    pub tmse_gisc: f64,
    pub tmse_hmisc: f64,
    pub tmse_fxisc: f64,
}

/// Robustness sweep over the express-lane bias constant: `n_values` values
/// uniform within ±`spread` of the nominal γ_EL, each run with the same
/// `n_seeds` initial conditions for all three controllers.
pub fn gamma_sweep(
    config: &EnsembleConfig,
    n_values: usize,
    n_seeds: usize,
    spread: f64,
) -> Result<Vec<SweepRow>> {
    if n_values == 0 || n_seeds == 0 {
        return Err(Error::config("sweep needs n_values >= 1 and n_seeds >= 1"));
    }
    if !(0.0..1.0).contains(&spread) {
        return Err(Error::config(format!("spread must lie in [0, 1), got {spread}")));
    }
    let nominal = config.params.gamma_el;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gammas: Vec<f64> = (0..n_values)
        .map(|_| nominal * (1.0 + spread * (2.0 * rng.gen::<f64>() - 1.0)))
        .collect();

    let mut rows = Vec::with_capacity(n_values);
    for &gamma_el in &gammas {
        let mut tmses = [0.0; 3];
        for (slot, controller) in ControllerKind::ALL.into_iter().enumerate() {
            let mut run = config.clone();
            run.controller = controller;
            run.n_traj = n_seeds;
            run.params.gamma_el = gamma_el;
            let result = run_ensemble(&run).map_err(|e| {
                Error::config(format!("sweep at gamma_el={gamma_el:.6}: {e}"))
            })?;
            tmses[slot] = result.tmse;
        }
        rows.push(SweepRow {
            gamma_el,
            tmse_gisc: tmses[0],
            tmse_hmisc: tmses[1],
            tmse_fxisc: tmses[2],
        });
    }
    Ok(rows)
}

/// Time for a reduced seeking flow to enter the ball |û − u*| ≤ radius on
/// the quadratic benchmark cost (u − u*)², whose gradient feeds the
/// controller directly (the plant and filter layers collapsed). `None` when
/// the cap is hit first.
pub fn quadratic_time_to_ball(
    kind: ControllerKind,
    gains: &ControllerGains,
    u_star: f64,
    u0: f64,
    radius: f64,
    h: f64,
    t_cap: f64,
) -> Result<Option<f64>> {
    gains.validate()?;
    if !(radius > 0.0) {
        return Err(Error::config(format!("radius must be positive, got {radius}")));
    }
    let k = gains.k;
    let alpha = gains.alpha;
    let flow: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync> = match kind {
        ControllerKind::Gisc => Box::new(move |x: &[f64], dx: &mut [f64]| {
            dx[0] = -k * 2.0 * (x[0] - u_star);
        }),
        ControllerKind::Fxisc => Box::new(move |x: &[f64], dx: &mut [f64]| {
            let grad = 2.0 * (x[0] - u_star);
            let norm = grad.abs();
            dx[0] = if norm <= crate::controllers::XI_FLOOR {
                0.0
            } else {
                -k * (norm.powf(-alpha) + norm.powf(alpha)) * grad
            };
        }),
        ControllerKind::Hmisc => {
            return Err(Error::config(
                "quadratic benchmark covers the flow-only controllers (gisc, fxisc)",
            ))
        }
    };
    if (u0 - u_star).abs() <= radius {
        return Ok(Some(0.0));
    }
    let mut spec = HybridSystemSpec::continuous(1, flow);
    spec.flow_set = Box::new(move |x: &[f64]| (x[0] - u_star).abs() > radius);
    let integ = IntegratorConfig { h, t_max: t_cap, j_max: 0, record_stride: usize::MAX };
    let trace = simulate(&spec, &[u0], &integ)?;
    match trace.terminal_reason {
        TerminalReason::LeftDomain => Ok(trace.final_state().map(|(ht, _)| ht.t)),
        _ => Ok(None),
    }
}
