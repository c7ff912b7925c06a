//! Artifact writers. All floating-point output goes through one formatter
//! (9 significant digits, scientific) so identical runs produce identical
//! bytes, which the determinism checks rely on.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::ResponseMap;
use crate::closed_loop::StateLayout;
use crate::error::{Error, Result};
use crate::experiments::SweepRow;
use crate::hybrid::HybridTrace;
use crate::plant::{full_rhs, HighwayParams, PlantState};

pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Canonical JSON of any serializable value: object keys sorted (the
/// serde_json map is ordered), floats in shortest round-trip form.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| Error::config(format!("config not serializable: {e}")))?;
    serde_json::to_string(&v).map_err(|e| Error::config(format!("config not serializable: {e}")))
}

/// SHA-256 hex digest of the canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = canonical_json(value)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("not serializable: {e}")))?;
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Trace CSV: `t,j,<states with u spliced in>,phi`, one row per recorded
/// sample. The jump counter is the only integer column.
pub fn write_trace_csv(
    path: &Path,
    layout: &StateLayout,
    trace: &HybridTrace,
    eps_a: f64,
    rho_ref: f64,
) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", layout.trace_columns().join(","))?;
    for (ht, state) in &trace.samples {
        let row = layout.trace_row(ht, state, eps_a, rho_ref);
        let mut line = String::with_capacity(row.len() * 18);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            if i == 1 {
                line.push_str(&format!("{}", ht.j));
            } else {
                line.push_str(&fmt_float(*v));
            }
        }
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn write_mse_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "t,mse")?;
    for (t, v) in curve {
        writeln!(file, "{},{}", fmt_float(*t), fmt_float(*v))?;
    }
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "gamma_el,tmse_gisc,tmse_hmisc,tmse_fxisc")?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{}",
            fmt_float(r.gamma_el),
            fmt_float(r.tmse_gisc),
            fmt_float(r.tmse_hmisc),
            fmt_float(r.tmse_fxisc)
        )?;
    }
    Ok(())
}

/// Response map CSV: `u,<equilibrium components>,phi_tilde,unique`.
/// Poisoned grid points carry NaN and unique=0.
pub fn write_response_map_csv(path: &Path, map: &ResponseMap, dynamic: bool) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    if dynamic {
        writeln!(file, "u,ell_q_el,ell_rho,phi_tilde,unique")?;
    } else {
        writeln!(file, "u,ell_rho,phi_tilde,unique")?;
    }
    for i in 0..map.u_grid.len() {
        let (q, rho) = match &map.ell_values[i] {
            Some(PlantState { rho, q_el }) => (q_el.unwrap_or(f64::NAN), *rho),
            None => (f64::NAN, f64::NAN),
        };
        let unique = u8::from(map.unique_equilibrium[i]);
        if dynamic {
            writeln!(
                file,
                "{},{},{},{},{}",
                fmt_float(map.u_grid[i]),
                fmt_float(q),
                fmt_float(rho),
                fmt_float(map.phi_tilde[i]),
                unique
            )?;
        } else {
            writeln!(
                file,
                "{},{},{},{}",
                fmt_float(map.u_grid[i]),
                fmt_float(rho),
                fmt_float(map.phi_tilde[i]),
                unique
            )?;
        }
    }
    Ok(())
}

/// Phase-plane sample of the dynamic plant field at a frozen incentive:
/// `q_el,rho,dq_el,drho` over an n×n grid of the state box.
pub fn write_phase_plane_csv(
    path: &Path,
    params: &HighwayParams,
    u: f64,
    q_box: (f64, f64),
    rho_box: (f64, f64),
    n: usize,
) -> Result<()> {
    if n < 2 {
        return Err(Error::config("phase plane grid needs n >= 2"));
    }
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "q_el,rho,dq_el,drho")?;
    for iq in 0..n {
        let q = q_box.0 + (q_box.1 - q_box.0) * iq as f64 / (n - 1) as f64;
        for ir in 0..n {
            let rho = rho_box.0 + (rho_box.1 - rho_box.0) * ir as f64 / (n - 1) as f64;
            let rate = full_rhs(&PlantState { rho, q_el: Some(q) }, u, params)?;
            writeln!(
                file,
                "{},{},{},{}",
                fmt_float(q),
                fmt_float(rho),
                fmt_float(rate[0]),
                fmt_float(rate[1])
            )?;
        }
    }
    Ok(())
}
