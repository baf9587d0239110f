//! `platoon`: run, check and sweep platoon scenarios.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use platoon_core::export::format_sig;
use platoon_core::sim::oracle_gains;
use platoon_core::{
    emit_plots, export_csv, feedback_matching, load_config, sync_metrics, ultimate_bound, ConfigError, PresetId,
    ScenarioConfig, SimError, Simulator,
};
use rayon::prelude::*;

const OUT_DIR_ENV: &str = "PLATOON_OUT_DIR";

#[derive(Parser)]
#[command(name = "platoon", version, about = "Adaptive leader-follower platoon simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trace CSV and plots.
    Run {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (falls back to $PLATOON_OUT_DIR, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario and list every violation.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// Print ideal matching gains, the Lyapunov matrix and the ultimate bound.
    ReportMatching {
        #[command(flatten)]
        source: Source,
    },
    /// Run one preset over a range of seeds in parallel.
    Sweep {
        #[arg(long)]
        preset: PresetId,
        /// Inclusive range such as `0..9`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: (u64, u64),
        #[command(flatten)]
        overrides: Overrides,
        /// Also write each seed's trace under `<out>/seed-<k>/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled scenario id.
    #[arg(long)]
    preset: Option<PresetId>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated horizon in seconds.
    #[arg(long)]
    t_end: Option<f64>,
}

impl Overrides {
    fn apply(&self, mut cfg: ScenarioConfig) -> Result<ScenarioConfig> {
        if let Some(seed) = self.seed {
            cfg.controller.seed = seed;
        }
        if let Some(t_end) = self.t_end {
            if !(t_end > cfg.integration.dt) {
                bail!("--t-end must exceed dt = {}", cfg.integration.dt);
            }
            cfg.integration.t_end = t_end;
        }
        Ok(cfg)
    }
}

fn parse_seeds(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a..b, got '{s}'"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start '{a}': {e}"))?;
    let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|e| format!("bad end '{b}': {e}"))?;
    if b < a {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok((a, b))
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure {
            code: 1,
            message: format!("{e:#}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn diverged(e: &SimError) -> bool {
    matches!(e, SimError::Divergence { .. })
}

fn load(source: &Source) -> Result<ScenarioConfig, ConfigError> {
    match (&source.config, source.preset) {
        (Some(path), _) => load_config(path),
        (None, Some(p)) => Ok(p.config()),
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_outputs(trace: &platoon_core::SimulationTrace, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join("trace.csv");
    export_csv(trace, &csv).with_context(|| format!("writing {}", csv.display()))?;
    let mut files = vec![csv];
    files.extend(emit_plots(trace, dir).with_context(|| format!("writing plots to {}", dir.display()))?);
    Ok(files)
}

fn cmd_run(source: Source, overrides: Overrides, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = overrides.apply(load(&source)?)?;
    let dir = out_dir(out);
    let sim = Simulator::new(cfg.clone()).map_err(|e| anyhow::Error::new(e).context("setting up"))?;
    let (trace, err) = sim.run_partial();
    if !trace.is_empty() {
        for f in write_outputs(&trace, &dir)? {
            println!("wrote {}", f.display());
        }
    }
    if let Some(e) = err {
        return Err(Failure {
            code: if diverged(&e) { 2 } else { 1 },
            message: format!("{}: {e}", cfg.name),
        });
    }
    let m = sync_metrics(&trace, cfg.diagnostics.tolerance);
    println!(
        "{}: {} samples, max final error {}, max peak error {}, settled {}",
        cfg.name,
        trace.len(),
        format_sig(m.max_final_error()),
        format_sig(m.max_peak_error()),
        m.settling_time().map_or("never".into(), |t| format!("at {t} s")),
    );
    Ok(())
}

fn cmd_validate(source: Source) -> Result<(), Failure> {
    let cfg = load(&source)?;
    println!(
        "ok: {} ({} followers, {} edges)",
        cfg.name,
        cfg.n_agents(),
        cfg.topology.edges().len()
    );
    Ok(())
}

fn vector(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| format_sig(x)).collect();
    format!("[{}]", items.join(", "))
}

fn matching_report(cfg: &ScenarioConfig) -> Result<String> {
    let sim = Simulator::new(cfg.clone())?;
    let cert = sim.certificate();
    let oracle = oracle_gains(cfg)?;
    let eps0 = cfg.diagnostics.eps0;
    let mut s = String::new();
    writeln!(s, "scenario {}", cfg.name)?;
    writeln!(s, "P (Q = {:?}):", cfg.controller.q)?;
    for row in cert.p.row_iter() {
        let row: Vec<f64> = row.iter().copied().collect();
        writeln!(s, "  {}", vector(&row))?;
    }
    writeln!(s, "residual {}", format_sig(cert.residual(&cfg.reference.a)))?;
    writeln!(s, "feedback gains:")?;
    for (k, agent) in cfg.agents.iter().enumerate() {
        let i = k + 1;
        let g = feedback_matching(&cfg.reference, &agent.plant)?;
        writeln!(
            s,
            "  agent {i}: k*_m{i} = {}, k*_r{i} = {}, residual {}",
            vector(g.k_m_star.as_slice()),
            format_sig(g.k_r_star),
            format_sig(g.residual)
        )?;
    }
    writeln!(s, "coupling gains:")?;
    for (k, o) in oracle.iter().enumerate() {
        let i = k + 1;
        for (j, km, kr) in &o.neighbors {
            writeln!(s, "  {i} <- {j}: k*_m{i}{j} = {}, k*_r{i}{j} = {}", vector(km), format_sig(*kr))?;
        }
    }
    writeln!(s, "ultimate bound (eps0 = {}):", format_sig(eps0))?;
    for (k, agent) in cfg.agents.iter().enumerate() {
        writeln!(
            s,
            "  agent {}: {}",
            k + 1,
            format_sig(ultimate_bound(cert, &agent.plant.b, eps0))
        )?;
    }
    Ok(s)
}

fn cmd_report(source: Source) -> Result<(), Failure> {
    let cfg = load(&source)?;
    print!("{}", matching_report(&cfg)?);
    Ok(())
}

struct SeedResult {
    seed: u64,
    outcome: Result<platoon_core::SyncMetrics, String>,
    diverged: bool,
}

fn cmd_sweep(preset: PresetId, (a, b): (u64, u64), overrides: Overrides, out: Option<PathBuf>) -> Result<(), Failure> {
    let base = overrides.apply(preset.config())?;
    let results: Vec<SeedResult> = (a..=b)
        .into_par_iter()
        .map(|seed| {
            let cfg = base.clone().with_seed(seed);
            let tol = cfg.diagnostics.tolerance;
            let (trace, err) = match Simulator::new(cfg) {
                Ok(sim) => sim.run_partial(),
                Err(e) => {
                    return SeedResult {
                        seed,
                        outcome: Err(e.to_string()),
                        diverged: false,
                    }
                }
            };
            if let Some(dir) = &out {
                if !trace.is_empty() {
                    if let Err(e) = write_outputs(&trace, &dir.join(format!("seed-{seed}"))) {
                        return SeedResult {
                            seed,
                            outcome: Err(format!("{e:#}")),
                            diverged: false,
                        };
                    }
                }
            }
            match err {
                None => SeedResult {
                    seed,
                    outcome: Ok(sync_metrics(&trace, tol)),
                    diverged: false,
                },
                Some(e) => SeedResult {
                    seed,
                    diverged: diverged(&e),
                    outcome: Err(e.to_string()),
                },
            }
        })
        .collect();

    println!("{:>6}  {:>14}  {:>14}  {:>10}  status", "seed", "final error", "peak error", "settled");
    for r in &results {
        match &r.outcome {
            Ok(m) => println!(
                "{:>6}  {:>14}  {:>14}  {:>10}  ok",
                r.seed,
                format_sig(m.max_final_error()),
                format_sig(m.max_peak_error()),
                m.settling_time().map_or("never".into(), |t| format!("{t:.3}")),
            ),
            Err(e) => println!("{:>6}  {:>14}  {:>14}  {:>10}  {e}", r.seed, "-", "-", "-"),
        }
    }
    let ok = results.iter().filter(|r| r.outcome.is_ok()).count();
    println!("{ok}/{} seeds completed", results.len());
    if results.iter().any(|r| r.diverged) {
        return Err(Failure {
            code: 2,
            message: format!("{} of {} seeds diverged", results.iter().filter(|r| r.diverged).count(), results.len()),
        });
    }
    if ok < results.len() {
        return Err(Failure {
            code: 1,
            message: format!("{} seeds failed", results.len() - ok),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { source, overrides, out } => cmd_run(source, overrides, out),
        Command::Validate { source } => cmd_validate(source),
        Command::ReportMatching { source } => cmd_report(source),
        Command::Sweep {
            preset,
            seeds,
            overrides,
            out,
        } => cmd_sweep(preset, seeds, overrides, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
