use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mema_toa::harness::{crlb_rows, run_monte_carlo, ExperimentConfig, Method};
use mema_toa::scenario::Scenario;
use mema_toa::Error;

#[derive(Parser)]
#[command(
    name = "mema",
    version,
    about = "Multi-epoch multi-antenna TOA positioning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write CSV + summary JSON.
    Run(Overrides),
    /// Print the Cramér-Rao bounds of an experiment.
    Crlb(Overrides),
    /// Scenario file utilities.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Parse and check a scenario file.
    Validate { file: PathBuf },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "sigma-p")]
    sigma_p: Option<f64>,
    #[arg(long = "sigma-psi")]
    sigma_psi: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    /// An explicit noise flag replaces the matching sweep list.
    fn apply(&self) -> mema_toa::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(k) = self.epochs {
            cfg.epochs = k;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = Some(v);
            cfg.sweep.sigma.clear();
        }
        if let Some(v) = self.sigma_p {
            cfg.sigma_p = Some(v);
            cfg.sweep.sigma_p.clear();
        }
        if let Some(v) = self.sigma_psi {
            cfg.sigma_psi = Some(v);
            cfg.sweep.sigma_psi.clear();
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn run(o: &Overrides) -> mema_toa::Result<()> {
    let cfg = o.apply()?;
    let scenario = cfg.load_scenario()?;
    let res = run_monte_carlo(&cfg, &scenario)?;
    let (csv, json) = res.persist(cfg.out.clone().unwrap_or_else(|| "results".into()))?;
    println!("sigma  sigma_p  sigma_psi  rmse_pos  crlb_pos  rmse_yaw  crlb_yaw  within_0.3m  >1m  converged");
    for g in res.summary.iter().filter(|g| g.epoch.is_none()) {
        println!(
            "{:.3}  {:.3}  {:.3}  {:.4}  {}  {:.4}  {}  {:.3}  {:.3}  {:.3}",
            g.sigma,
            g.sigma_p,
            g.sigma_psi,
            g.rmse_position,
            opt(g.crlb_position),
            g.rmse_yaw,
            opt(g.crlb_yaw),
            g.within_0_3m,
            g.ambiguity_fraction,
            g.convergence_fraction
        );
    }
    println!("records: {}", csv.display());
    println!("summary: {}", json.display());
    println!("wall time: {:.1} s", res.total_wall_time_s);
    Ok(())
}

fn crlb(o: &Overrides) -> mema_toa::Result<()> {
    let cfg = o.apply()?;
    let scenario = cfg.load_scenario()?;
    cfg.validate(&scenario)?;
    let rows: Vec<_> = cfg
        .noise_points(&scenario)
        .iter()
        .flat_map(|n| crlb_rows(&scenario, cfg.method, cfg.epochs, n))
        .collect();
    println!("estimator  sigma  sigma_p  sigma_psi  epoch  sqrt_pos  sqrt_yaw");
    for r in &rows {
        println!(
            "{}  {:.3}  {:.3}  {:.3}  {}  {:.5}  {:.5}",
            r.estimator,
            r.sigma,
            r.sigma_p,
            r.sigma_psi,
            r.epoch,
            r.position_var.sqrt(),
            r.yaw_var.sqrt()
        );
    }
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}_crlb.csv", cfg.file_stem()));
        let mut w = csv::Writer::from_path(&path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        println!("bounds: {}", path.display());
    }
    Ok(())
}

fn validate(file: &PathBuf) -> mema_toa::Result<()> {
    let s = Scenario::load(file)?;
    s.validate()?;
    println!(
        "{}: {} anchors, {} antennas, {} epochs",
        s.name,
        s.num_anchors(),
        s.num_antennas(),
        s.num_epochs()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(o) => run(o),
        Command::Crlb(o) => crlb(o),
        Command::Scenario {
            command: ScenarioCommand::Validate { file },
        } => validate(file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidScenario(_) | Error::Json(_) | Error::Io(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
