//! `gfra`: run the Monte-Carlo experiments from the command line.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the run
//! itself fails.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gfra_core::harness::{
    self, emit, oracle_check, ptc_search, run_experiment, ConfigFile, OracleCheckSpec, OutputFormat,
};
use gfra_core::{Scenario, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(
    name = "gfra",
    version,
    about = "Grant-free random access: activity detection and channel estimation"
)]
struct Cli {
    /// Worker threads for trial-level parallelism (0 = one per core).
    #[arg(long, global = true, env = "GFRA_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a parameter sweep and write the aggregated results.
    Run(RunArgs),
    /// Search the minimal pilot length for successful recovery.
    Ptc(PtcArgs),
    /// Compare BR-MP-EM against the exhaustive oracle on a small system.
    OracleCheck(OracleArgs),
    /// Generate one scenario and dump it as JSON.
    Scenario(ScenarioArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of fig3, fig4, fig5, fig6, fig6-delta, fig7.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the trial count per sweep value.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Debug)]
struct PtcArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=12))]
    k: u64,
    #[arg(long)]
    l: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0.2)]
    p_a: f64,
    #[arg(long, default_value_t = 30.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let threads = cli.threads;
    match harness::with_threads(threads, move || dispatch(cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Ptc(a) => ptc(a),
        Command::OracleCheck(a) => oracle(a),
        Command::Scenario(a) => scenario(a),
    }
}

fn load(config: Option<&Path>) -> anyhow::Result<ConfigFile> {
    Ok(match config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    })
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    if a.config.is_none() && a.preset.is_none() {
        bail!("run needs --config or --preset");
    }
    let file = load(a.config.as_deref())?;
    let mut spec = file.experiment(a.preset.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    spec.validate()?;
    let out = a
        .out
        .or(file.output.clone())
        .context("no output path: give --out or `output` in the config")?;
    let format = match (&a.format, file.format) {
        (Some(f), _) => f.parse()?,
        (None, Some(f)) => f,
        (None, None) if out.extension().is_some_and(|e| e == "json") => OutputFormat::Json,
        (None, None) => OutputFormat::Csv,
    };
    log::info!(
        "{}: {} values of {} x {} trials, estimators {:?}",
        spec.name,
        spec.values.len(),
        spec.axis,
        spec.trials,
        spec.estimators
    );
    let table = run_experiment(&spec)?;
    emit(&table, format, &out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("{}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).with_context(|| format!("{}", path.display()))?;
    w.flush().with_context(|| format!("{}", path.display()))?;
    Ok(())
}

fn ptc(a: PtcArgs) -> anyhow::Result<()> {
    let file = load(a.config.as_deref())?;
    let mut spec = file.ptc()?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    spec.validate()?;
    let points = ptc_search(&spec)?;
    for p in &points {
        match p.min_l {
            Some(l) => println!(
                "p_a {}: minimal L {} (L/K {})",
                p.p_a,
                l,
                l as f64 / spec.base.k as f64
            ),
            None => println!("p_a {}: unattained up to L = {}", p.p_a, spec.l_max),
        }
    }
    write_json(&points, &a.out)
}

fn oracle(a: OracleArgs) -> anyhow::Result<()> {
    let mut spec = OracleCheckSpec::new(a.k as usize, a.l, a.trials);
    spec.base.p_a = a.p_a;
    spec.base.snr_db = a.snr_db;
    spec.seed = a.seed;
    let r = oracle_check(&spec)?;
    println!("trials: {}", r.trials);
    println!("agreement rate: {}", r.agreement_rate);
    println!("mean nmse brmpem: {:e}", r.brmpem_nmse_mean);
    println!("mean nmse oracle: {:e}", r.oracle_nmse_mean);
    println!(
        "mean nmse gap: {:.3} dB (ratio {:.4})",
        r.nmse_gap_db, r.nmse_ratio
    );
    if let Some(out) = a.out {
        write_json(&r, &out)?;
    }
    Ok(())
}

fn scenario(a: ScenarioArgs) -> anyhow::Result<()> {
    let file = load(a.config.as_deref())?;
    let mut cfg = ScenarioConfig::default();
    file.apply_scenario(&mut cfg)?;
    cfg.seed = a.seed;
    let sc = Scenario::generate(&cfg)?;
    std::fs::write(&a.out, sc.to_json()).with_context(|| format!("{}", a.out.display()))?;
    eprintln!(
        "wrote {} ({} of {} devices active)",
        a.out.display(),
        sc.realization.active_count(),
        cfg.k
    );
    Ok(())
}
