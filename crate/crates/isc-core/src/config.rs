//! Run configuration: named presets, TOML parsing, dotted-path overrides,
//! and the manifest that makes a run reproducible from its artifacts alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{MapConfig, ThetaBox};
use crate::closed_loop::{default_step, ControllerKind, PlantVariant};
use crate::controllers::ControllerGains;
use crate::dither::DitherConfig;
use crate::error::{Error, Result};
use crate::experiments::EnsembleConfig;
use crate::io::config_hash;
use crate::plant::HighwayParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    /// Integration step. Omitted means the dither default ε_p/(50·max ω).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub t_final: f64,
    /// Flow steps between recorded samples.
    pub record_stride: usize,
    /// Resolution of the shared metric grid.
    pub sample_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSettings {
    pub n_traj: usize,
    pub rho0_range: (f64, f64),
    pub u0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_el0: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub n_values: usize,
    pub n_seeds: usize,
    /// Relative half-width of the γ_EL perturbation, in [0, 1).
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    pub u_box: (f64, f64),
    pub n_grid: usize,
    pub rho_box: (f64, f64),
    pub theta_box: ThetaBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantVariant,
    pub rho_ref: f64,
    pub params: HighwayParams,
    pub gains: ControllerGains,
    pub dither: DitherConfig,
    pub sim: SimSettings,
    pub ensemble: EnsembleSettings,
    pub sweep: SweepSettings,
    pub analysis: AnalysisSettings,
    /// Free-form numeric annotations carried through to the manifest.
    #[serde(default)]
    pub metadata: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gains.validate()?;
        self.dither.validate()?;
        if let Some(h) = self.sim.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config(format!("sim.h must be positive, got {h}")));
            }
        }
        if !(self.sim.t_final > 0.0) {
            return Err(Error::config(format!(
                "sim.t_final must be positive, got {}",
                self.sim.t_final
            )));
        }
        if self.sim.record_stride == 0 {
            return Err(Error::config("sim.record_stride must be at least 1"));
        }
        if !(self.sim.sample_dt > 0.0) {
            return Err(Error::config(format!(
                "sim.sample_dt must be positive, got {}",
                self.sim.sample_dt
            )));
        }
        if !(0.0..1.0).contains(&self.sweep.spread) {
            return Err(Error::config(format!(
                "sweep.spread must lie in [0, 1), got {}",
                self.sweep.spread
            )));
        }
        self.map_config().validate()?;
        // Ensemble plausibility is fully checked by EnsembleConfig; building
        // one per controller here keeps a bad preset from failing late.
        self.ensemble_config(ControllerKind::Gisc).validate()?;
        Ok(())
    }

    /// Integration step, resolved against the dither default.
    pub fn step(&self) -> f64 {
        self.sim.h.unwrap_or_else(|| default_step(&self.dither))
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            variant: self.plant,
            u_box: self.analysis.u_box,
            n_grid: self.analysis.n_grid,
            rho_box: self.analysis.rho_box,
            theta_box: self.analysis.theta_box,
            rho_ref: self.rho_ref,
        }
    }

    /// Admissible density interval for the active plant variant.
    pub fn rho_box(&self) -> (f64, f64) {
        match self.plant {
            PlantVariant::Static => self.analysis.rho_box,
            PlantVariant::Dynamic => self.analysis.theta_box.rho,
        }
    }

    pub fn ensemble_config(&self, controller: ControllerKind) -> EnsembleConfig {
        EnsembleConfig {
            controller,
            variant: self.plant,
            n_traj: self.ensemble.n_traj,
            rho0_range: self.ensemble.rho0_range,
            rho_box: self.rho_box(),
            u0: self.ensemble.u0,
            q_el0: self.ensemble.q_el0,
            t_final: self.sim.t_final,
            seed: self.ensemble.seed,
            h: self.step(),
            record_stride: self.sim.record_stride,
            sample_dt: self.sim.sample_dt,
            rho_ref: self.rho_ref,
            gains: self.gains.clone(),
            dither: self.dither.clone(),
            params: self.params,
        }
    }

    /// SHA-256 of the canonical JSON form; invariant under key order.
    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

pub const PRESET_NAMES: [&str; 2] = ["mnpass_static", "mnpass_dynamic"];

pub fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "mnpass_static" => Ok(include_str!("../presets/mnpass_static.toml")),
        "mnpass_dynamic" => Ok(include_str!("../presets/mnpass_dynamic.toml")),
        other => Err(Error::config(format!(
            "unknown preset '{other}'; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Parse configuration text and apply `key.path=value` overrides in order.
pub fn load_config_text(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value: toml::Value = toml::from_str(text)
        .map_err(|e| Error::config(format!("configuration is not valid TOML: {e}")))?;
    for (path, raw) in overrides {
        apply_override(&mut value, path, raw)?;
    }
    let config: RunConfig = value
        .try_into()
        .map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Load a named preset and apply `key.path=value` overrides in order.
pub fn load_preset(name: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    load_config_text(preset_text(name)?, overrides)
}

/// Split a `key.path=value` argument.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config(format!("override '{arg}' must look like key.path=value"))),
    }
}

/// Parse an override value with TOML scalar syntax; anything that does not
/// parse (say a bare frequency like 3/2) is kept as a string.
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("x = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut table) => table.remove("x").expect("key just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set one dotted path inside a parsed TOML document. Intermediate tables
/// must already exist; the final key may be new (it still has to survive the
/// typed parse, which rejects unknown fields).
pub fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override path '{path}'")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        node = node
            .get_mut(*part)
            .ok_or_else(|| Error::config(format!("unknown config table '{part}' in '{path}'")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("'{path}' does not address a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
    Ok(())
}

/// Everything needed to rerun a command: the resolved configuration, its
/// hash, and where the artifacts went. Written before any computation runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub preset: String,
    pub overrides: Vec<String>,
    pub controller: Option<String>,
    pub config_sha256: String,
    pub artifacts: Vec<String>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(
        tool: impl Into<String>,
        command: impl Into<String>,
        preset: impl Into<String>,
        overrides: Vec<String>,
        controller: Option<ControllerKind>,
        config: RunConfig,
    ) -> Result<Self> {
        let config_sha256 = config.hash()?;
        Ok(RunManifest {
            tool: tool.into(),
            command: command.into(),
            preset: preset.into(),
            overrides,
            controller: controller.map(|c| c.as_str().to_string()),
            config_sha256,
            artifacts: Vec::new(),
            config,
        })
    }
}
