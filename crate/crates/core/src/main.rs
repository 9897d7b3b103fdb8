//! Command-line driver for the cooperative-manipulation identification
//! experiments: runs the pose phase, the dynamic-parameter phase, or the
//! adaptive load-change scenario, and writes CSV metric traces.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coop_ident::driver::{
    emit_csv, run_full, run_phase1, run_phase2, Phase2Options, PoseSource, RunOptions,
};
use coop_ident::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "coop-ident",
    about = "Decentralized identification of rigid-body parameters in multi-robot manipulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; defaults to the built-in five-robot ring.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV traces.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the true relative poses in phase 2 instead of the phase-1
    /// estimates.
    #[arg(long)]
    true_poses: bool,
    /// Ablation: every robot uses only its own wrench (no consensus).
    #[arg(long)]
    no_consensus: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Relative-pose identification only.
    Phase1(Common),
    /// Pose phase plus dynamic-parameter identification (no load change).
    Phase2(Common),
    /// Full experiment with the sudden load change.
    Adaptive(Common),
    /// Everything: phase 1 and phase 2 as configured (including any events).
    All(Common),
    /// Print the default scenario (or the adaptive variant) as JSON.
    PrintConfig {
        #[arg(long)]
        adaptive: bool,
    },
}

fn load_config(
    common: &Common,
    default: fn() -> ScenarioConfig,
) -> coop_ident::Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| coop_ident::Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            ScenarioConfig::from_json(&text)?
        }
        None => default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out(common: &Common) -> coop_ident::Result<()> {
    std::fs::create_dir_all(&common.out).map_err(|source| coop_ident::Error::Io {
        path: common.out.display().to_string(),
        source,
    })
}

fn run(cli: Cli) -> coop_ident::Result<()> {
    match cli.command {
        Command::Phase1(common) => {
            let cfg = load_config(&common, ScenarioConfig::default)?;
            ensure_out(&common)?;
            let result = run_phase1(&cfg)?;
            emit_csv(&result.metrics, &common.out.join("phase1.csv"))?;
            if let Some((rot, trans)) = result.mean_errors_at(cfg.phase1_duration) {
                println!(
                    "phase1: mean rotation error {rot:.4} rad, mean translation error {trans:.4} m at t = {:.1} s",
                    cfg.phase1_duration
                );
            }
        }
        Command::Phase2(common) => {
            let mut cfg = load_config(&common, ScenarioConfig::default)?;
            cfg.change_events.clear();
            ensure_out(&common)?;
            let phase1 = run_phase1(&cfg)?;
            emit_csv(&phase1.metrics, &common.out.join("phase1.csv"))?;
            let source = if common.true_poses {
                PoseSource::True
            } else {
                PoseSource::Estimated(&phase1)
            };
            let phase2 = run_phase2(
                &cfg,
                source,
                Phase2Options {
                    wrench_consensus: !common.no_consensus,
                },
            )?;
            emit_csv(&phase2.metrics, &common.out.join("phase2.csv"))?;
            report_phase2(&phase2, cfg.end_time());
        }
        Command::Adaptive(common) => {
            let cfg = load_config(&common, ScenarioConfig::default_adaptive)?;
            ensure_out(&common)?;
            let result = run_full(
                &cfg,
                RunOptions {
                    use_true_poses: common.true_poses,
                    no_wrench_consensus: common.no_consensus,
                },
            )?;
            emit_csv(&result.phase1.metrics, &common.out.join("phase1.csv"))?;
            emit_csv(&result.phase2.metrics, &common.out.join("adaptive.csv"))?;
            report_phase2(&result.phase2, cfg.end_time());
        }
        Command::All(common) => {
            let cfg = load_config(&common, ScenarioConfig::default_adaptive)?;
            ensure_out(&common)?;
            let result = run_full(
                &cfg,
                RunOptions {
                    use_true_poses: common.true_poses,
                    no_wrench_consensus: common.no_consensus,
                },
            )?;
            emit_csv(&result.phase1.metrics, &common.out.join("phase1.csv"))?;
            emit_csv(&result.phase2.metrics, &common.out.join("phase2.csv"))?;
            if let Some((rot, trans)) = result.phase1.mean_errors_at(cfg.phase1_duration) {
                println!(
                    "phase1: mean rotation error {rot:.4} rad, mean translation error {trans:.4} m"
                );
            }
            report_phase2(&result.phase2, cfg.end_time());
        }
        Command::PrintConfig { adaptive } => {
            let cfg = if adaptive {
                ScenarioConfig::default_adaptive()
            } else {
                ScenarioConfig::default()
            };
            println!("{}", cfg.to_json()?);
        }
    }
    Ok(())
}

fn report_phase2(result: &coop_ident::driver::Phase2Result, end: f64) {
    if let Some(p) = result.mean_errors_at(end) {
        println!(
            "phase2 at t = {end:.1} s: inertia MAE {:.4} kg·m², mass-center error {:.4} m, mean mass {:.4} kg",
            p.inertia_mae, p.pc_err, p.mass_mean
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{{\"error\": \"{}\"}}", err.to_string().replace('"', "'"));
            ExitCode::FAILURE
        }
    }
}
