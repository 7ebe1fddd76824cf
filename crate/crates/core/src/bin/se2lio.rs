use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use se2lio::eval::{associate, evaluate, render_metrics, umeyama_alignment, write_xy_csv};
use se2lio::pipeline::{run, write_outputs, Mode, PipelineConfig};
use se2lio::selftest::{run_all, SelftestConfig};
use se2lio::sim::{simulate, write_dataset, SimConfig};
use se2lio::{io, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

/// Name of the pipeline config written next to a simulated dataset.
const SIM_PIPELINE_CONFIG: &str = "pipeline.toml";
const SIM_CONFIG_ECHO: &str = "simulation.toml";

#[derive(Parser)]
#[command(name = "se2lio", version, about = "SE(2)-constrained LiDAR-inertial odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run odometry over a dataset described by a pipeline config.
    Run(RunArgs),
    /// Generate a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Compare an estimated trajectory with ground truth.
    Evaluate(EvaluateArgs),
    /// Run the Jacobian and covariance oracles.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (TOML); defaults describe a noiseless 100-frame
    /// loop through the box room.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mode written into the generated pipeline config.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "sim")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Directory for metrics.txt, metrics.kv and xy.csv.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Rigidly align the estimate to the ground truth first.
    #[arg(long)]
    align: bool,
    /// Largest timestamp difference for pairing poses, s.
    #[arg(long, default_value_t = 0.02)]
    max_dt: f64,
    #[arg(long, default_value = "estimate")]
    label: String,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Randomized instances per Jacobian suite.
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    /// Monte Carlo samples per covariance oracle.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        error!("{e}");
        return ExitCode::from(EXIT_BAD_INPUT);
    }
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(EXIT_BAD_INPUT)
        }
    }
}

/// Caps the worker pool at `SE2LIO_THREADS` when set.
fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("SE2LIO_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("SE2LIO_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn cmd_run(a: RunArgs) -> Result<u8, Error> {
    let mut config = PipelineConfig::load(&a.config)?;
    if let Some(mode) = a.mode {
        config.mode = mode;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let out = run(&config)?;
    write_outputs(&a.output, &config, &out)?;
    info!(
        "{} frames in {} mode, median {:.1} ms/frame, {} not converged; results in {}",
        out.frames.len(),
        out.mode,
        out.median_wall_ms(),
        out.non_converged(),
        a.output.display()
    );
    if out.is_degenerate() {
        warn!(
            "degenerate run: {} of {} frames did not converge",
            out.non_converged(),
            out.frames.len()
        );
        return Ok(EXIT_DEGENERATE);
    }
    Ok(0)
}

fn read_sim_config(path: &Path) -> Result<SimConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}

fn cmd_simulate(a: SimulateArgs) -> Result<u8, Error> {
    let mut sim = match &a.config {
        Some(p) => read_sim_config(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = a.seed {
        sim.trajectory.seed = seed;
    }
    let data = simulate(&sim)?;
    write_dataset(&a.output, &data)?;

    let mut pipeline = PipelineConfig {
        mode: a.mode.unwrap_or_default(),
        seed: sim.trajectory.seed,
        ..PipelineConfig::default()
    };
    pipeline.imu.gravity = sim.imu_noise.gravity;
    pipeline.input.sweep_period = sim.trajectory.period();
    let write = |name: &str, text: String| {
        let path = a.output.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    };
    write(SIM_PIPELINE_CONFIG, pipeline.to_toml())?;
    write(
        SIM_CONFIG_ECHO,
        toml::to_string(&sim).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    info!(
        "wrote {} frames and {} imu samples to {}; run with --config {}",
        data.times.len(),
        data.imu.len(),
        a.output.display(),
        a.output.join(SIM_PIPELINE_CONFIG).display()
    );
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<u8, Error> {
    let est = io::read_trajectory(&a.estimate)?;
    let gt = io::read_trajectory(&a.ground_truth)?;
    let mut assoc = associate(&est, &gt, a.max_dt)?;
    if a.align {
        let pairs: Vec<_> = assoc.pairs.iter().map(|(_, e, g)| (*e, *g)).collect();
        let t = umeyama_alignment(&pairs);
        for (_, e, _) in assoc.pairs.iter_mut() {
            *e = &t * &*e;
        }
    }
    let metrics = evaluate(&assoc);
    let (table, kv) = render_metrics(&a.label, &metrics, assoc.unmatched);
    print!("{table}");
    if assoc.unmatched > 0 {
        warn!("{} estimated poses had no ground truth within {} s", assoc.unmatched, a.max_dt);
    }
    if let Some(dir) = &a.output {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (name, text) in [("metrics.txt", &table), ("metrics.kv", &kv)] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
        }
        write_xy_csv(&dir.join("xy.csv"), &assoc)?;
    }
    Ok(0)
}

fn cmd_selftest(a: SelftestArgs) -> Result<u8, Error> {
    let cfg = SelftestConfig {
        jacobian_instances: a.instances,
        imu_mc_samples: a.samples,
        lidar_mc_samples: a.samples,
        seed: a.seed,
        ..SelftestConfig::default()
    };
    let reports = run_all(&cfg);
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
}

