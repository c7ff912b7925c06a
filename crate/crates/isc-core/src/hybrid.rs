//! Generic hybrid dynamical systems and a fixed-step integrator.
//!
//! A hybrid system couples a continuous flow `ẋ = F(x)` on the flow set C
//! with a discrete jump `x⁺ = G(x)` on the jump set D. Solutions are indexed
//! by hybrid time (t, j): continuous time plus a jump counter. The integrator
//! is classical RK4 with two hooks that keep it exact for the systems built
//! here: an optional time-to-boundary hint so steps land exactly on
//! deterministic jump boundaries (timer events), and an optional post-step
//! projection for states with conserved structure (oscillator norms, box
//! constraints).
//!
//! Jumps have priority when a state lies in C ∩ D, which makes traces
//! deterministic.

use crate::error::{Error, Result};

/// Continuous time plus jump counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridTime {
    pub t: f64,
    pub j: u32,
}

pub type FlowMap = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type JumpMap = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type SetPredicate = Box<dyn Fn(&[f64]) -> bool + Send + Sync>;
pub type BoundaryHint = Box<dyn Fn(&[f64]) -> Option<f64> + Send + Sync>;
pub type Projection = Box<dyn Fn(&mut [f64]) + Send + Sync>;

/// The data (C, F, D, G) of a hybrid system over R^state_dim.
pub struct HybridSystemSpec {
    pub state_dim: usize,
    pub flow_map: FlowMap,
    pub jump_map: JumpMap,
    pub flow_set: SetPredicate,
    pub jump_set: SetPredicate,
    /// Exact flow time until the jump-set boundary, when the system knows it
    /// (e.g. a constant-rate timer). Returning `None` means no clamping.
    pub time_to_jump: Option<BoundaryHint>,
    /// Applied after every accepted flow step.
    pub projection: Option<Projection>,
}

impl HybridSystemSpec {
    /// Purely continuous system: D = ∅.
    pub fn continuous(state_dim: usize, flow_map: FlowMap) -> Self {
        HybridSystemSpec {
            state_dim,
            flow_map,
            jump_map: Box::new(|x, out| out.copy_from_slice(x)),
            flow_set: Box::new(|_| true),
            jump_set: Box::new(|_| false),
            time_to_jump: None,
            projection: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    /// Flow step size.
    pub h: f64,
    /// Continuous-time horizon.
    pub t_max: f64,
    /// Maximum number of jumps before termination.
    pub j_max: u32,
    /// Keep every n-th flow sample (jumps and endpoints are always kept).
    pub record_stride: usize,
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config(format!("step size h must be positive, got {}", self.h)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::config(format!("horizon t_max must be positive, got {}", self.t_max)));
        }
        if self.record_stride == 0 {
            return Err(Error::config("record_stride must be at least 1"));
        }
        Ok(())
    }
}

/// Why a simulation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalReason {
    Horizon,
    JumpBudget,
    LeftDomain,
}

/// A recorded hybrid solution.
#[derive(Debug, Clone)]
pub struct HybridTrace {
    pub samples: Vec<(HybridTime, Vec<f64>)>,
    pub terminal_reason: TerminalReason,
}

impl HybridTrace {
    pub fn final_state(&self) -> Option<&(HybridTime, Vec<f64>)> {
        self.samples.last()
    }

    pub fn jump_count(&self) -> u32 {
        self.samples.last().map(|(ht, _)| ht.j).unwrap_or(0)
    }

    /// Linear interpolation of the state at continuous time `t`.
    ///
    /// At a jump time the post-jump sample wins, matching how a caller reads
    /// "the state at time t" off a plotted trajectory.
    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        if self.samples.is_empty() {
            return None;
        }
        let first = &self.samples[0];
        if t <= first.0.t {
            return Some(first.1.clone());
        }
        let last = self.samples.last().unwrap();
        if t >= last.0.t {
            return Some(last.1.clone());
        }
        // partition_point: first sample with sample.t > t
        let hi = self.samples.partition_point(|(ht, _)| ht.t <= t);
        let (ht0, x0) = &self.samples[hi - 1];
        let (ht1, x1) = &self.samples[hi];
        let dt = ht1.t - ht0.t;
        if dt <= 0.0 {
            return Some(x1.clone());
        }
        let w = (t - ht0.t) / dt;
        Some(
            x0.iter()
                .zip(x1.iter())
                .map(|(a, b)| a + w * (b - a))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Flowed,
    Jumped,
    LeftDomain,
}

fn check_finite(deriv: &[f64], t: f64, j: u32) -> Result<()> {
    for (i, d) in deriv.iter().enumerate() {
        if !d.is_finite() {
            return Err(Error::Numeric {
                t,
                j,
                what: format!("non-finite derivative in component {i} ({d})"),
            });
        }
    }
    Ok(())
}

/// One classical 4th-order Runge-Kutta advance of `state` by `h`.
pub fn flow_step(state: &[f64], h: f64, flow_map: &FlowMap) -> Result<Vec<f64>> {
    let mut ws = RkWorkspace::new(state.len());
    let mut out = state.to_vec();
    rk4_into(state, h, flow_map, &mut ws, &mut out, 0.0, 0)?;
    Ok(out)
}

/// Scratch buffers reused across steps so the hot loop does not allocate.
struct RkWorkspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl RkWorkspace {
    fn new(dim: usize) -> Self {
        RkWorkspace {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }
}

fn rk4_into(
    state: &[f64],
    h: f64,
    flow_map: &FlowMap,
    ws: &mut RkWorkspace,
    out: &mut [f64],
    t: f64,
    j: u32,
) -> Result<()> {
    let n = state.len();
    flow_map(state, &mut ws.k1);
    check_finite(&ws.k1, t, j)?;
    for i in 0..n {
        ws.stage[i] = state[i] + 0.5 * h * ws.k1[i];
    }
    flow_map(&ws.stage, &mut ws.k2);
    check_finite(&ws.k2, t, j)?;
    for i in 0..n {
        ws.stage[i] = state[i] + 0.5 * h * ws.k2[i];
    }
    flow_map(&ws.stage, &mut ws.k3);
    check_finite(&ws.k3, t, j)?;
    for i in 0..n {
        ws.stage[i] = state[i] + h * ws.k3[i];
    }
    flow_map(&ws.stage, &mut ws.k4);
    check_finite(&ws.k4, t, j)?;
    for i in 0..n {
        out[i] = state[i] + (h / 6.0) * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
    Ok(())
}

/// Advance one hybrid step: jump if the state is in D, otherwise flow.
///
/// The flow step is truncated by `time_to_jump` so deterministic boundaries
/// (timers) are hit exactly, and by the remaining horizon `t_max - t`.
pub fn hybrid_step(
    state: &mut Vec<f64>,
    time: &mut HybridTime,
    spec: &HybridSystemSpec,
    config: &IntegratorConfig,
) -> Result<StepEvent> {
    let mut ws = RkWorkspace::new(spec.state_dim);
    hybrid_step_inner(state, time, spec, config, &mut ws)
}

fn hybrid_step_inner(
    state: &mut Vec<f64>,
    time: &mut HybridTime,
    spec: &HybridSystemSpec,
    config: &IntegratorConfig,
    ws: &mut RkWorkspace,
) -> Result<StepEvent> {
    if (spec.jump_set)(state) {
        let mut next = vec![0.0; spec.state_dim];
        (spec.jump_map)(state, &mut next);
        *state = next;
        time.j += 1;
        return Ok(StepEvent::Jumped);
    }
    if !(spec.flow_set)(state) {
        return Ok(StepEvent::LeftDomain);
    }
    let remaining = config.t_max - time.t;
    // Horizon roundoff can leave a vanishing sliver; absorb it. Checked
    // before the boundary hint so a timer sitting under the jump threshold
    // cannot be mistaken for the end of the horizon.
    if remaining < 1e-15 * config.h.max(1.0) {
        time.t = config.t_max;
        return Ok(StepEvent::Flowed);
    }
    let mut h = config.h.min(remaining);
    if let Some(hint) = &spec.time_to_jump {
        if let Some(tb) = hint(state) {
            if tb.is_finite() && tb > 0.0 {
                h = h.min(tb);
            }
        }
    }
    let mut out = vec![0.0; spec.state_dim];
    rk4_into(state, h, &spec.flow_map, ws, &mut out, time.t, time.j)?;
    if let Some(proj) = &spec.projection {
        proj(&mut out);
    }
    *state = out;
    time.t += h;
    Ok(StepEvent::Flowed)
}

/// Integrate from `x0` until the horizon, the jump budget, or a domain exit.
pub fn simulate(spec: &HybridSystemSpec, x0: &[f64], config: &IntegratorConfig) -> Result<HybridTrace> {
    config.validate()?;
    if x0.len() != spec.state_dim {
        return Err(Error::config(format!(
            "initial state has dimension {}, spec expects {}",
            x0.len(),
            spec.state_dim
        )));
    }
    let mut samples: Vec<(HybridTime, Vec<f64>)> = Vec::new();
    if !(spec.flow_set)(x0) && !(spec.jump_set)(x0) {
        return Ok(HybridTrace { samples, terminal_reason: TerminalReason::LeftDomain });
    }

    let mut state = x0.to_vec();
    let mut time = HybridTime { t: 0.0, j: 0 };
    let mut ws = RkWorkspace::new(spec.state_dim);
    let mut steps_since_record = 0usize;
    samples.push((time, state.clone()));

    let terminal = loop {
        if time.t >= config.t_max {
            break TerminalReason::Horizon;
        }
        let about_to_jump = (spec.jump_set)(&state);
        if about_to_jump && time.j >= config.j_max {
            break TerminalReason::JumpBudget;
        }
        if about_to_jump && steps_since_record != 0 {
            // Keep the pre-jump sample so recorded traces show each jump as
            // a (t, j) -> (t, j+1) pair with the state right before reset.
            samples.push((time, state.clone()));
            steps_since_record = 0;
        }
        match hybrid_step_inner(&mut state, &mut time, spec, config, &mut ws)? {
            StepEvent::Jumped => {
                samples.push((time, state.clone()));
                steps_since_record = 0;
            }
            StepEvent::Flowed => {
                steps_since_record += 1;
                if steps_since_record >= config.record_stride {
                    samples.push((time, state.clone()));
                    steps_since_record = 0;
                }
            }
            StepEvent::LeftDomain => break TerminalReason::LeftDomain,
        }
    };
    if steps_since_record != 0 {
        samples.push((time, state.clone()));
    }
    Ok(HybridTrace { samples, terminal_reason: terminal })
}
