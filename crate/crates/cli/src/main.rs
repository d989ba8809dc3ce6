//! `sbd`: command-line front end for the stochastic Becker-Döring toolkit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use becker_doring::experiments::{
    emit_results, fmt_f64, limit_activity, load_config, run_experiment, CsvTable, ExperimentConfig,
    ExperimentKind,
};
use becker_doring::kinetics::{equilibrium_profile, KernelSpec, RateKernel};
use becker_doring::ode::{integrate, DbdState, IntegratorConfig};
use becker_doring::ssa::{uniform_grid, Observe, Simulator};
use becker_doring::stationary::{nonequilibrium_potential, stationary_table};
use becker_doring::{rng, Configuration, Error, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "sbd",
    version,
    about = "Stochastic and deterministic Becker-Döring dynamics"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file for single runs, output directory for experiments.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Critical activity, critical mass and the equilibrium profile at rho.
    Equilibrium {
        #[command(flatten)]
        model: ModelArgs,
        /// Largest cluster size in the profile.
        #[arg(long, default_value_t = 64)]
        imax: usize,
    },
    /// Exact jump-process trajectories (long CSV: replica, t, i, c_i).
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        /// Initial state literal such as `1:8,2:1`; monomers by default.
        #[arg(long)]
        initial: Option<String>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Truncated Becker-Döring equations from monomeric data (long CSV: t, i, c_i).
    Ode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        truncation: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        rtol: Option<f64>,
        #[arg(long)]
        atol: Option<f64>,
    },
    /// Exact stationary law by enumeration (CSV: state, log_weight, probability, potential).
    Stationary {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: usize,
        /// Reference activity; defaults to the limit activity at rho.
        #[arg(long)]
        z: Option<f64>,
    },
    /// Law-of-large-numbers convergence study.
    Lln,
    /// Non-equilibrium potential convergence study.
    Potential,
    /// Superlinear moment bound study.
    Moment,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Kernel literal: `constant:a=1,b=1`, `linear_coag:slope=1,b=2`,
    /// `power_db:q=4`, `tabulated:a=2;3,b=5;7`.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 configuration, 3 numerical failure, 4 enumeration cap exceeded.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::StateSpaceTooLarge { .. } => 4,
        Error::Config { .. }
        | Error::InvalidArgument(_)
        | Error::InvalidKernel(_)
        | Error::InvalidThresholds(_)
        | Error::InvalidState(_)
        | Error::Io { .. } => 2,
        _ => 3,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref().map(load_config).transpose()?;
    match &cli.command {
        Command::Equilibrium { model, imax } => equilibrium(cli, config.as_ref(), model, *imax),
        Command::Simulate {
            model,
            n,
            initial,
            replicas,
            horizon,
            grid_points,
        } => {
            let (kernel, rho) = resolve_model(config.as_ref(), model)?;
            let n = n
                .or_else(|| config.as_ref().and_then(|c| c.n_grid.first().copied()))
                .ok_or_else(|| Error::InvalidArgument("--n is required without --config".into()))?;
            let cfg0 = match initial {
                Some(lit) => Configuration::parse(lit, n, rho)?,
                None => Configuration::from_monomers(n, rho)?,
            };
            let replicas = replicas.or(config.as_ref().map(|c| c.replicas)).unwrap_or(1);
            let horizon = horizon.or(config.as_ref().map(|c| c.horizon)).unwrap_or(5.0);
            let points = grid_points
                .or(config.as_ref().map(|c| c.grid_points))
                .unwrap_or(101);
            let seed = cli.seed.or(config.as_ref().and_then(|c| c.seed)).unwrap_or(1);
            simulate(cli, &kernel, &cfg0, replicas, horizon, points, seed)
        }
        Command::Ode {
            model,
            truncation,
            horizon,
            grid_points,
            rtol,
            atol,
        } => {
            let (kernel, rho) = resolve_model(config.as_ref(), model)?;
            let truncation = truncation.or(config.as_ref().map(|c| c.truncation)).unwrap_or(64);
            let horizon = horizon.or(config.as_ref().map(|c| c.horizon)).unwrap_or(10.0);
            let points = grid_points
                .or(config.as_ref().map(|c| c.grid_points))
                .unwrap_or(101);
            let mut icfg = IntegratorConfig::with_truncation(truncation);
            icfg.grid = uniform_grid(horizon, points);
            if let Some(r) = rtol {
                icfg.rtol = *r;
            }
            if let Some(a) = atol {
                icfg.atol = *a;
            }
            ode(cli, &kernel, rho, horizon, &icfg)
        }
        Command::Stationary { model, n, z } => {
            let (kernel, rho) = resolve_model(config.as_ref(), model)?;
            stationary(cli, &kernel, rho, *n, *z)
        }
        Command::Lln => experiment(cli, config, ExperimentKind::Lln),
        Command::Potential => experiment(cli, config, ExperimentKind::Potential),
        Command::Moment => experiment(cli, config, ExperimentKind::Moment),
    }
}

/// Command-line values win over the config file.
fn resolve_model(config: Option<&ExperimentConfig>, model: &ModelArgs) -> Result<(RateKernel, f64)> {
    let kernel = match (&model.kernel, config) {
        (Some(lit), _) => lit.parse::<KernelSpec>()?.build()?,
        (None, Some(c)) => c.kernel()?,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "--kernel is required without --config".into(),
            ))
        }
    };
    let rho = model
        .rho
        .or(config.map(|c| c.rho))
        .ok_or_else(|| Error::InvalidArgument("--rho is required without --config".into()))?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
    }
    Ok((kernel, rho))
}

fn required_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--out is required".into()))
}

/// Writes `summary` to `<out stem>.json` and echoes it on stdout.
fn write_summary(out: Option<&Path>, summary: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).expect("json values serialize") + "\n";
    if let Some(out) = out {
        let path = out.with_extension("json");
        fs::write(&path, &text).map_err(|e| Error::Io { path, source: e })?;
    }
    std::io::stdout().write_all(text.as_bytes()).ok();
    Ok(())
}

fn write_table(path: &Path, table: &CsvTable) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    table.write(path)
}

fn equilibrium(cli: &Cli, config: Option<&ExperimentConfig>, model: &ModelArgs, imax: usize) -> Result<()> {
    let (kernel, rho) = resolve_model(config, model)?;
    let limit = limit_activity(&kernel, rho)?;
    let profile = equilibrium_profile(&kernel, limit.z, imax)?;
    if let Some(out) = cli.out.as_deref() {
        let mut table = CsvTable::new("equilibrium", &["i", "c_i"]);
        for (k, c) in profile.coefficients.iter().enumerate() {
            table.push([(k + 1).to_string(), fmt_f64(*c)]);
        }
        write_table(out, &table)?;
    }
    write_summary(
        cli.out.as_deref(),
        &json!({
            "kernel": kernel.to_string(),
            "rho": rho,
            "z_s": limit.z_s,
            "rho_s": limit.rho_s,
            "regime": limit.criticality.as_str(),
            "z": limit.z,
            "imax": imax,
            "profile_mass": profile.mass,
            "profile_mass_tail_bound": profile.mass_tail_bound,
        }),
    )
}

fn simulate(
    cli: &Cli,
    kernel: &RateKernel,
    cfg0: &Configuration,
    replicas: usize,
    horizon: f64,
    points: usize,
    seed: u64,
) -> Result<()> {
    let out = required_out(cli)?;
    if replicas == 0 || replicas > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "replicas must be in 1..2^32, got {replicas}"
        )));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be >= 0, got {horizon}"
        )));
    }
    let grid = uniform_grid(horizon, points);
    let start = std::time::Instant::now();
    let observe = Observe::default();
    let runs: Vec<_> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let mut sim = Simulator::new(cfg0, kernel, rng::stream(seed, 0, r as u32));
            let mut samples = Vec::with_capacity(grid.len());
            for &t in &grid {
                sim.advance_to(t)?;
                let mut s = sim.sample(&observe);
                s.t = t;
                samples.push(s);
            }
            Ok((samples, sim.jumps()))
        })
        .collect::<Result<_>>()?;
    let mut table = CsvTable::new("simulate", &["replica", "t", "i", "c_i"]);
    let mut jump_count = 0u64;
    for (r, (samples, jumps)) in runs.iter().enumerate() {
        jump_count += jumps;
        for s in samples {
            // sparse: zero concentrations are omitted
            for (k, c) in s.concentrations.iter().enumerate().filter(|(_, c)| **c > 0.0) {
                table.push([r.to_string(), fmt_f64(s.t), (k + 1).to_string(), fmt_f64(*c)]);
            }
        }
    }
    write_table(out, &table)?;
    write_summary(
        Some(out),
        &json!({
            "n": cfg0.n(),
            "rho": cfg0.rho(),
            "kernel": kernel.to_string(),
            "seed": seed,
            "replicas": replicas,
            "jump_count": jump_count,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn ode(cli: &Cli, kernel: &RateKernel, rho: f64, horizon: f64, icfg: &IntegratorConfig) -> Result<()> {
    let out = required_out(cli)?;
    let sol = integrate(&DbdState::monomeric(rho, icfg.truncation), kernel, horizon, icfg)?;
    let mut table = CsvTable::new("ode", &["t", "i", "c_i"]);
    for (t, c) in sol.times.iter().zip(&sol.states) {
        for (k, v) in c.iter().enumerate() {
            table.push([fmt_f64(*t), (k + 1).to_string(), fmt_f64(*v)]);
        }
    }
    write_table(out, &table)?;
    let st = &sol.stats;
    write_summary(
        Some(out),
        &json!({
            "kernel": kernel.to_string(),
            "rho": rho,
            "truncation": sol.truncation,
            "horizon": horizon,
            "initial_mass": sol.initial_mass,
            "max_mass_drift": sol.max_mass_drift,
            "relative_mass_drift": sol.relative_mass_drift(),
            "steps": {
                "accepted": st.accepted,
                "rejected": st.rejected,
                "rhs_evals": st.rhs_evals,
                "min_step": st.min_step,
                "max_step": st.max_step,
                "clipped": st.clipped,
            },
        }),
    )
}

fn stationary(cli: &Cli, kernel: &RateKernel, rho: f64, n: usize, z: Option<f64>) -> Result<()> {
    let out = required_out(cli)?;
    let z = match z {
        Some(z) => z,
        None => limit_activity(kernel, rho)?.z,
    };
    let table = stationary_table(n, rho, kernel, z)?;
    let mut csv = CsvTable::new("stationary", &["state", "log_weight", "probability", "potential"]);
    for (k, state) in table.states.iter().enumerate() {
        csv.push([
            state.to_string(),
            fmt_f64(table.log_weights[k]),
            fmt_f64(table.probabilities[k]),
            fmt_f64(nonequilibrium_potential(state, &table)?),
        ]);
    }
    write_table(out, &csv)?;
    write_summary(
        Some(out),
        &json!({
            "log_Bn": table.log_b,
            "z": z,
            "n": n,
            "rho": rho,
            "kernel": kernel.to_string(),
            "p_n": table.len(),
        }),
    )
}

fn experiment(cli: &Cli, config: Option<ExperimentConfig>, kind: ExperimentKind) -> Result<()> {
    let mut cfg =
        config.ok_or_else(|| Error::InvalidArgument(format!("`{}` needs --config", kind.as_str())))?;
    if cfg.kind != kind {
        return Err(Error::Config {
            field: "kind".into(),
            message: format!(
                "config declares `{}` but the `{}` command was run",
                cfg.kind.as_str(),
                kind.as_str()
            ),
        });
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("results/{}", kind.as_str())));
    let mut output = run_experiment(&cfg)?;
    if cli.seed.is_some() {
        output.manifest.seed_source = "cli".into();
    }
    let written = emit_results(&dir, &output)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}
