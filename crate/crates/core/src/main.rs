use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use stgpod::bench::{
    emit_table, run_experiment, run_space_time, write_table, ExperimentConfig, ExperimentKind, MeasurementChoice,
    ProblemSetup, TableFormat,
};
use stgpod::io::{write_matrix_csv, write_singular_values_csv, write_trajectory_csv};

/// Space-time Galerkin POD suboptimal control of the 1D Burgers equation.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Which sweep to run; overrides the config file.
    #[arg(long, value_enum)]
    experiment: Option<ExperimentKind>,
    /// TOML file with experiment parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output table path; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
    /// Seed for randomized diagnostics; the pipeline itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions of each reduced solve; the best walltime is reported.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    measurements: Option<MeasurementChoice>,
    /// Directory for trajectory, measurement and singular value CSV dumps.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> stgpod::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = cli.experiment {
        cfg.experiment = e;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.reps {
        cfg.reps = r;
    }
    if let Some(m) = cli.measurements {
        cfg.measurements = m;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dump(cfg: &ExperimentConfig, dir: &std::path::Path) -> stgpod::Result<()> {
    std::fs::create_dir_all(dir)?;
    let setup = ProblemSetup::new(cfg, cfg.nu)?;
    write_trajectory_csv(&setup.uncontrolled, &dir.join("state_uncontrolled.csv"))?;
    write_trajectory_csv(&setup.adjoint, &dir.join("adjoint.csv"))?;
    write_matrix_csv(setup.state_measurement.coefficients(), &dir.join("X_state.csv"))?;
    write_matrix_csv(setup.adjoint_measurement.coefficients(), &dir.join("X_adjoint.csv"))?;
    let dims = [cfg.qhat, cfg.shat, cfg.phat, cfg.rhat];
    let (sb, _) = setup.bases(cfg.measurements, dims)?;
    write_singular_values_csv(&sb.space.singular_values, &dir.join("sigma_space.csv"))?;
    write_singular_values_csv(&sb.time.singular_values, &dir.join("sigma_time.csv"))?;
    if cfg.experiment == ExperimentKind::Single {
        let run = run_space_time(&setup, cfg.measurements, dims, cfg.alpha, 1)?;
        write_trajectory_csv(&run.closed_loop, &dir.join("state_controlled.csv"))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> stgpod::Result<bool> {
    let cfg = load_config(cli)?;
    if let Some(dir) = &cli.dump {
        dump(&cfg, dir)?;
    }
    let rows = run_experiment(&cfg)?;
    match &cfg.out {
        Some(path) => emit_table(&rows, cli.format, path)?,
        None => write_table(&rows, cli.format, &mut std::io::stdout().lock())?,
    }
    Ok(rows.iter().all(|r| r.solved()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
