//! Simulation and analysis library for model-free incentive seeking on a
//! tolled express lane.
//!
//! The pieces, bottom to top:
//!
//! * [`hybrid`]: fixed-step RK4 integrator for hybrid systems (flow and jump
//!   sets, hybrid time, jump-priority semantics);
//! * [`plant`]: the highway segment with logistic driver response, in a
//!   static and a dynamic variant;
//! * [`dither`]: exploration oscillators with exact-rational frequency
//!   checks, modulation and demodulation maps;
//! * [`controllers`]: three model-free seeking laws over the demodulated
//!   cost: a gradient law, a hybrid momentum law with periodic restarts, and
//!   a fixed-time law;
//! * [`closed_loop`]: the plant/controller interconnection as one hybrid
//!   system over a stacked state vector;
//! * [`analysis`]: steady-state response maps, reduced cost, convexity and
//!   viability diagnostics;
//! * [`experiments`]: seeded ensembles, MSE metrics, and the robustness
//!   sweep over the express-lane bias;
//! * [`config`] and [`io`]: presets, overrides, manifests, and deterministic
//!   artifact writers.

pub mod analysis;
pub mod closed_loop;
pub mod config;
pub mod controllers;
pub mod dither;
pub mod error;
pub mod experiments;
pub mod hybrid;
pub mod io;
pub mod plant;

pub use closed_loop::{compose_closed_loop, ControllerKind, PlantVariant, StateLayout};
pub use config::{load_preset, RunConfig, RunManifest};
pub use error::{Error, Result};
pub use hybrid::{simulate, HybridSystemSpec, HybridTime, HybridTrace, IntegratorConfig};
