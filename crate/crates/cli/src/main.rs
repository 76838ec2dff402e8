//! Command-line front end: run the verdict grid, a single attack, the
//! overhead models, or an honest handshake trace, and write the report
//! files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};

use authsim_core::adversary::AttackKind;
use authsim_core::harness::report::{
    emit_reports, write_overheads_csv, write_overheads_json, write_trace_log, ReportPaths,
};
use authsim_core::harness::{honest_run, honest_sweep, run_matrix, MatrixRun, ScenarioConfig};
use authsim_core::overhead::overhead_report;
use authsim_core::protocol::ProtocolId;

#[derive(Parser)]
#[command(
    name = "authsim",
    version,
    about = "Simulate IEEE 802.16 authorization handshakes under attack and model their overheads"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (JSON). Flags override file values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report files (default: scenario `out_dir`, else `out`).
    #[arg(long = "out-dir", value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Restrict to one protocol: pkmv1, pkmv2, tsa, ha, isnap.
    #[arg(long)]
    protocol: Option<String>,
    /// Restrict to one attack: water_torture, dos, message_replay,
    /// identity_theft, impersonation, interleaving, suppress_replay.
    #[arg(long)]
    attack: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the attack-by-protocol verdict grid and emit all reports.
    Matrix {
        #[command(flatten)]
        common: Common,
        /// Exit nonzero unless the grid matches the reference verdicts.
        #[arg(long)]
        check: bool,
    },
    /// Run one attack (all protocols unless --protocol narrows it).
    Attack {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the storage, validation and transmission overhead report.
    Overhead {
        #[command(flatten)]
        common: Common,
    },
    /// Trace one honest authorization handshake per selected protocol.
    Trace {
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(common: &Common, cfg: &ScenarioConfig) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn scenario(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &common.protocol {
        let p = ProtocolId::parse(p).ok_or_else(|| anyhow!("unknown protocol '{p}'"))?;
        cfg.protocols = Some(vec![p]);
    }
    if let Some(a) = &common.attack {
        let a = AttackKind::parse(a).ok_or_else(|| anyhow!("unknown attack '{a}'"))?;
        cfg.attacks = Some(vec![a]);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Honest-run traces for every protocol in scope, labeled for the log.
fn honest_traces(cfg: &ScenarioConfig) -> Result<Vec<(String, String)>> {
    cfg.protocols()
        .into_iter()
        .map(|p| {
            let w = honest_run(cfg, p)?;
            Ok((format!("honest/{p}"), w.trace().render()))
        })
        .collect()
}

fn attack_traces(run: &MatrixRun) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    for (attack, protocol, worlds) in &run.worlds {
        for (i, w) in worlds.iter().enumerate() {
            let suffix = if worlds.len() > 1 {
                format!("/world{i}")
            } else {
                String::new()
            };
            blocks.push((format!("{attack}/{protocol}{suffix}"), w.trace().render()));
        }
    }
    blocks
}

fn cmd_matrix(common: &Common, check: bool) -> Result<ExitCode> {
    let cfg = scenario(common)?;
    let run = run_matrix(&cfg)?;
    let overheads = overhead_report(
        &cfg.storage_params(),
        &cfg.compute_params(),
        &cfg.size_model,
    );
    let traces = honest_traces(&cfg)?;
    let dir = out_dir(common, &cfg);
    let paths = ReportPaths::in_dir(&dir);
    emit_reports(&run.matrix, &overheads, &traces, &paths)?;

    print!("{}", run.matrix);
    println!();
    for cell in run.matrix.mismatches() {
        println!(
            "deviation: {}/{} expected {}, got {}",
            cell.attack,
            cell.protocol,
            cell.expected.label(),
            cell.outcome.verdict
        );
    }
    println!("reports written to {}", dir.display());
    if check {
        if run.matrix.conforms() {
            println!("check: grid matches the reference verdicts");
        } else {
            println!("check: {} cell(s) deviate", run.matrix.mismatches().len());
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack(common: &Common) -> Result<ExitCode> {
    if common.attack.is_none() {
        bail!("attack requires --attack (or use `matrix` for the full grid)");
    }
    let cfg = scenario(common)?;
    let run = run_matrix(&cfg)?;
    let overheads = overhead_report(
        &cfg.storage_params(),
        &cfg.compute_params(),
        &cfg.size_model,
    );
    let dir = out_dir(common, &cfg);
    let paths = ReportPaths::in_dir(&dir);
    emit_reports(&run.matrix, &overheads, &attack_traces(&run), &paths)?;

    for cell in &run.matrix.cells {
        println!(
            "{}/{}: {}",
            cell.attack, cell.protocol, cell.outcome.verdict
        );
        for (name, value) in &cell.outcome.metrics {
            println!("  {name} = {value}");
        }
    }
    println!("reports written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_overhead(common: &Common) -> Result<ExitCode> {
    let cfg = scenario(common)?;
    let report = overhead_report(
        &cfg.storage_params(),
        &cfg.compute_params(),
        &cfg.size_model,
    );
    let paths = ReportPaths::in_dir(&out_dir(common, &cfg));
    write_overheads_json(&paths.overheads_json, &report)?;
    write_overheads_csv(&paths.overheads_csv, &report)?;

    println!(
        "table storage: {} bytes/node, {} bytes across a fleet of {}",
        report.chi_bytes, report.fleet_bytes, report.storage.fleet
    );
    println!(
        "validation: {} flops per incoming stamp ({:e} s at {:e} cycles/s)",
        report.validation.flops_linear, report.validation.seconds_linear, report.compute.sigma
    );
    for (p, bytes) in &report.transmission.handshake_bytes {
        println!("handshake {p}: {bytes} bytes");
    }
    for v in &report.transmission.orderings {
        println!(
            "ordering {}: {}",
            v.claim,
            if v.holds { "holds" } else { "violated" }
        );
    }
    println!(
        "reports written to {} and {}",
        paths.overheads_json.display(),
        paths.overheads_csv.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_trace(common: &Common) -> Result<ExitCode> {
    let cfg = scenario(common)?;
    let traces = honest_traces(&cfg)?;
    let paths = ReportPaths::in_dir(&out_dir(common, &cfg));
    write_trace_log(&paths.trace_log, &traces)?;
    for (label, body) in &traces {
        println!("==== {label} ====");
        print!("{body}");
    }
    for p in cfg.protocols() {
        let (ok, total) = honest_sweep(&cfg, p)?;
        println!("sweep {p}: {ok}/{total} seeded honest runs authorized");
        if ok != total {
            bail!("{p}: {} of {total} honest runs failed", total - ok);
        }
    }
    println!("trace written to {}", paths.trace_log.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Matrix { common, check } => cmd_matrix(common, *check),
        Cmd::Attack { common } => cmd_attack(common),
        Cmd::Overhead { common } => cmd_overhead(common),
        Cmd::Trace { common } => cmd_trace(common),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
