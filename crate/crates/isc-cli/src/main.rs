//! Command-line driver around isc-core: presets and overrides in, CSV and
//! JSON artifacts out. Every run leaves a `config.toml` with the fully
//! resolved configuration and a `manifest.json` naming the artifacts, both
//! written before any computation starts, so a run can be replayed with
//! `--preset <out>/config.toml`.
//!
//! Exit codes: 0 success, 1 negative analysis verdict, 2 configuration or
//! io problem, 3 numeric failure during integration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isc_core::analysis::{build_response_map, viability_report};
use isc_core::closed_loop::LoopInit;
use isc_core::config::{load_config_text, parse_override, PRESET_NAMES};
use isc_core::experiments::{gamma_sweep, run_ensemble, sample_initial_densities};
use isc_core::hybrid::{HybridTime, TerminalReason};
use isc_core::io::{
    write_json, write_mse_csv, write_phase_plane_csv, write_response_map_csv, write_sweep_csv,
    write_trace_csv,
};
use isc_core::{
    compose_closed_loop, load_preset, simulate, ControllerKind, Error, IntegratorConfig,
    PlantVariant, RunConfig, RunManifest,
};

type Result<T> = isc_core::Result<T>;

#[derive(Parser)]
#[command(
    name = "isc",
    version,
    about = "Model-free incentive seeking for a tolled express lane"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one closed-loop trajectory and write its trace
    Simulate(SimulateArgs),
    /// Run a seeded ensemble of trajectories for one controller
    Ensemble(EnsembleArgs),
    /// Compare the three controllers across express-lane bias perturbations
    Sweep(SweepArgs),
    /// Tabulate the steady-state response and check the standing assumptions
    Viability(ViabilityArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Preset name (mnpass_static, mnpass_dynamic) or path of a config file
    #[arg(long, default_value = "mnpass_static")]
    preset: String,
    /// Override one config field, dotted.path=TOML-value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory the artifacts go to
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the ensemble seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensembles and map builds (defaults to all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Seeking law: gisc, hmisc or fxisc
    #[arg(long, default_value = "gisc")]
    controller: String,
}

#[derive(Args)]
struct EnsembleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Seeking law: gisc, hmisc or fxisc
    #[arg(long, default_value = "gisc")]
    controller: String,
    /// Trajectory count, replacing the preset's
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ViabilityArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Io(_) => 2,
                Error::Numeric { .. } | Error::Domain { .. } | Error::Equilibrium { .. } => 3,
            })
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Viability(args) => cmd_viability(args),
    }
}

fn parse_controller(name: &str) -> Result<ControllerKind> {
    match name {
        "gisc" => Ok(ControllerKind::Gisc),
        "hmisc" => Ok(ControllerKind::Hmisc),
        "fxisc" => Ok(ControllerKind::Fxisc),
        other => Err(Error::config(format!(
            "unknown controller '{other}'; expected one of gisc, hmisc, fxisc"
        ))),
    }
}

/// Resolve the configuration from the preset (shipped name or file path)
/// plus all overrides. `extra` carries flag shorthands like --seed and --n,
/// already spelled as dotted overrides so the manifest records them the same
/// way as --set arguments.
fn resolve(common: &CommonArgs, extra: &[String]) -> Result<(RunConfig, Vec<String>)> {
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    }
    let mut raw: Vec<String> = common.set.clone();
    if let Some(seed) = common.seed {
        raw.push(format!("ensemble.seed={seed}"));
    }
    raw.extend_from_slice(extra);
    let pairs = raw
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;

    let config = if PRESET_NAMES.contains(&common.preset.as_str()) {
        load_preset(&common.preset, &pairs)?
    } else {
        let path = Path::new(&common.preset);
        if !path.is_file() {
            return Err(Error::config(format!(
                "unknown preset '{}'; shipped presets: {} (a config file path also works)",
                common.preset,
                PRESET_NAMES.join(", ")
            )));
        }
        load_config_text(&std::fs::read_to_string(path)?, &pairs)?
    };
    Ok((config, raw))
}

/// Write `config.toml` and `manifest.json` into the output directory. Runs
/// only after this succeeds, so a crash mid-computation still leaves enough
/// on disk to reproduce the attempt.
fn write_run_records(
    out: &Path,
    command: &str,
    preset: &str,
    overrides: Vec<String>,
    controller: Option<ControllerKind>,
    config: &RunConfig,
    artifacts: Vec<String>,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let text = toml::to_string_pretty(config)
        .map_err(|e| Error::config(format!("serializing the resolved config: {e}")))?;
    std::fs::write(out.join("config.toml"), text)?;
    let mut manifest = RunManifest::new(
        format!("isc {}", env!("CARGO_PKG_VERSION")),
        command,
        preset,
        overrides,
        controller,
        config.clone(),
    )?;
    manifest.artifacts = artifacts;
    write_json(&out.join("manifest.json"), &manifest)
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let kind = parse_controller(&args.controller)?;
    let (config, overrides) = resolve(&args.common, &[])?;
    let ecfg = config.ensemble_config(kind);
    let trace_name = format!("trace_{}.csv", kind.as_str());
    write_run_records(
        &args.common.out,
        "simulate",
        &args.common.preset,
        overrides,
        Some(kind),
        &config,
        vec![trace_name.clone()],
    )?;

    let spec = compose_closed_loop(
        kind,
        config.plant,
        &config.gains,
        &config.dither,
        &config.params,
        config.rho_ref,
    )?;
    let layout = ecfg.layout();
    // Trajectory zero of the seeded ensemble, so a single run and an
    // ensemble member line up exactly.
    let rho0 = sample_initial_densities(ecfg.rho0_range, 1, ecfg.seed)[0];
    let mut init = LoopInit::new(rho0, vec![ecfg.u0]);
    init.q_el = ecfg.q_el0;
    let x0 = layout.pack(&init, &config.gains)?;
    let integ = IntegratorConfig {
        h: ecfg.h,
        t_max: ecfg.t_final,
        j_max: u32::MAX,
        record_stride: ecfg.record_stride,
    };
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
    write_trace_csv(
        &args.common.out.join(&trace_name),
        &layout,
        &trace,
        config.dither.eps_a,
        config.rho_ref,
    )?;
    let (ht, x) = trace.final_state().expect("completed trace has samples");
    println!(
        "{trace_name}: {} samples, rho {:.3} and u_hat {:.3} at t={:.1} (j={})",
        trace.samples.len(),
        x[layout.rho()],
        x[layout.u_hat().start],
        ht.t,
        ht.j
    );
    Ok(0)
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<u8> {
    let kind = parse_controller(&args.controller)?;
    let extra: Vec<String> = args
        .n
        .map(|n| format!("ensemble.n_traj={n}"))
        .into_iter()
        .collect();
    let (config, overrides) = resolve(&args.common, &extra)?;
    let ecfg = config.ensemble_config(kind);
    let c = kind.as_str();
    let mut artifacts: Vec<String> = (0..ecfg.n_traj)
        .map(|i| format!("trace_{c}_{i:03}.csv"))
        .collect();
    artifacts.push(format!("mse_{c}.csv"));
    artifacts.push(format!("summary_{c}.json"));
    write_run_records(
        &args.common.out,
        "ensemble",
        &args.common.preset,
        overrides,
        Some(kind),
        &config,
        artifacts,
    )?;

    let result = run_ensemble(&ecfg)?;
    let layout = ecfg.layout();
    for (i, trace) in result.traces.iter().enumerate() {
        write_trace_csv(
            &args.common.out.join(format!("trace_{c}_{i:03}.csv")),
            &layout,
            trace,
            config.dither.eps_a,
            config.rho_ref,
        )?;
    }
    write_mse_csv(&args.common.out.join(format!("mse_{c}.csv")), &result.mse_curve)?;
    let final_mse = result.mse_curve.last().map(|(_, v)| *v).unwrap_or(f64::NAN);
    let summary = serde_json::json!({
        "controller": c,
        "n_traj": ecfg.n_traj,
        "seed": ecfg.seed,
        "t_final": ecfg.t_final,
        "tmse": result.tmse,
        "final_mse": final_mse,
    });
    write_json(&args.common.out.join(format!("summary_{c}.json")), &summary)?;
    println!(
        "{c}: {} trajectories to t={}, tmse {:.4}, final mse {:.4}",
        ecfg.n_traj, ecfg.t_final, result.tmse, final_mse
    );
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let (config, overrides) = resolve(&args.common, &[])?;
    write_run_records(
        &args.common.out,
        "sweep",
        &args.common.preset,
        overrides,
        None,
        &config,
        vec!["sweep.csv".to_string()],
    )?;

    let rows = gamma_sweep(
        &config.ensemble_config(ControllerKind::Gisc),
        config.sweep.n_values,
        config.sweep.n_seeds,
        config.sweep.spread,
    )?;
    write_sweep_csv(&args.common.out.join("sweep.csv"), &rows)?;
    let wins = rows
        .iter()
        .filter(|r| r.tmse_hmisc < r.tmse_gisc && r.tmse_fxisc < r.tmse_gisc)
        .count();
    println!(
        "sweep: {} bias values, momentum and fixed-time beat gradient on {wins}",
        rows.len()
    );
    Ok(0)
}

fn phase_plane_name(u: f64) -> String {
    format!("phase_plane_u{}.csv", u as i64)
}

fn cmd_viability(args: ViabilityArgs) -> Result<u8> {
    let (config, overrides) = resolve(&args.common, &[])?;
    let dynamic = config.plant == PlantVariant::Dynamic;
    const PHASE_PLANE_US: [f64; 3] = [-40.0, 0.0, 40.0];
    let mut artifacts = vec!["response_map.csv".to_string(), "viability.json".to_string()];
    if dynamic {
        artifacts.extend(PHASE_PLANE_US.map(phase_plane_name));
    }
    write_run_records(
        &args.common.out,
        "viability",
        &args.common.preset,
        overrides,
        None,
        &config,
        artifacts,
    )?;

    let mcfg = config.map_config();
    let map = build_response_map(&config.params, &mcfg)?;
    let report = viability_report(&map, &config.params, &mcfg);
    write_response_map_csv(&args.common.out.join("response_map.csv"), &map, dynamic)?;
    write_json(&args.common.out.join("viability.json"), &report)?;
    if dynamic {
        let tb = &config.analysis.theta_box;
        for u in PHASE_PLANE_US {
            write_phase_plane_csv(
                &args.common.out.join(phase_plane_name(u)),
                &config.params,
                u,
                tb.q_el,
                tb.rho,
                41,
            )?;
        }
    }

    for (name, verdict) in [
        ("unique stable equilibrium", &report.a1_unique_stable),
        ("convex reduced cost", &report.a2_convex),
        ("strong convexity", &report.a3_strong_convexity),
    ] {
        println!(
            "{name}: {} ({})",
            if verdict.holds { "holds" } else { "fails" },
            verdict.detail
        );
    }
    println!(
        "u_star {:.6}, phi_star {:.4e}, kappa_est {:.4}",
        report.u_star, report.phi_star, report.kappa_est
    );
    Ok(if report.all_hold() { 0 } else { 1 })
}
