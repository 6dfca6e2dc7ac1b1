//! Command-line front end: campaigns, figure sweeps, the oracle suite and LP dumps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cellfree_core::experiment::campaign::{drop_inputs, protocol_label};
use cellfree_core::experiment::output::{write_csv, CsvRow, Manifest};
use cellfree_core::experiment::{
    experiment_convergence, experiment_outage, experiment_rsi_sweep, run_campaign, validate_closed_forms, Scenario,
};
use cellfree_core::optimizer::{build_lp, ones_filters, Problem, Protocol};
use cellfree_core::Error;

#[derive(Parser, Debug)]
#[command(name = "cellfree", version, about = "Wireless-powered cell-free network simulations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (TOML); the built-in baseline when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    drops: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Proposed scheme and every configured baseline on each drop.
    Run,
    /// Objective trace per harvesting efficiency.
    Convergence,
    /// Battery fraction and SE versus residual SI.
    RsiSweep,
    /// Outage versus rate requirement.
    Outage,
    /// Closed forms against Monte-Carlo; exits 2 when the gate fails.
    Validate {
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Writes the first-iteration LP of one drop as text.
    LpDump {
        #[arg(long, default_value_t = 0)]
        drop: usize,
        /// Harvest window of the time-switching baseline; proposed scheme when omitted.
        #[arg(long)]
        tau_d: Option<usize>,
    },
}

enum Failure {
    Config(Error),
    Gate(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e)
    }
}

fn load_scenario(c: &Common) -> Result<Scenario, Error> {
    let mut s = match &c.config {
        Some(p) => Scenario::load(p)?,
        None => Scenario::reference_baseline(),
    };
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    if let Some(d) = c.drops {
        s.drops = d;
    }
    s.validate()?;
    Ok(s)
}

fn finish(cmd: &str, s: &Scenario, workers: usize, out: &Path, files: Vec<(String, Vec<CsvRow>)>) -> Result<(), Error> {
    let mut names = Vec::new();
    for (name, rows) in files {
        write_csv(&out.join(&name), &rows)?;
        log::info!("wrote {} rows to {}", rows.len(), out.join(&name).display());
        names.push(name);
    }
    Manifest::new(cmd, s, workers, names).write(&out.join(format!("{cmd}.manifest.json")))
}

fn execute(cli: &Cli, workers: usize) -> Result<(), Failure> {
    let s = load_scenario(&cli.common)?;
    let out = &cli.common.out;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    match &cli.command {
        Command::Run => {
            let r = run_campaign(&s)?;
            for a in &r.aggregates {
                println!(
                    "{}: outage {:.3}, battery energy {:.4e}, SE {:.3}, battery fraction {:.3}",
                    a.algorithm, a.outage_rate, a.mean_objective, a.mean_se, a.mean_battery_fraction
                );
            }
            finish("run", &s, workers, out, vec![("campaign.csv".into(), r.to_rows())])?;
        }
        Command::Convergence => {
            let r = experiment_convergence(&s, &s.sweeps.mu_list)?;
            finish("convergence", &s, workers, out, vec![("convergence.csv".into(), r.to_rows())])?;
        }
        Command::RsiSweep => {
            let r = experiment_rsi_sweep(&s, &s.sweeps.rsi_grid_db)?;
            let (below, above) = r.crossover_bracket();
            println!("proposed battery fraction at or below {}: up to {below:?} dB, above from {above:?} dB", r.ts_label());
            finish("rsi-sweep", &s, workers, out, vec![("rsi_sweep.csv".into(), r.to_rows())])?;
        }
        Command::Outage => {
            let r = experiment_outage(&s, &s.sweeps.rate_grid, &s.baseline_or_default().tau_d_grid)?;
            finish("outage", &s, workers, out, vec![("outage.csv".into(), r.to_rows())])?;
        }
        Command::Validate { samples } => {
            let r = validate_closed_forms(&s, *samples)?;
            let path = out.join("validation.json");
            std::fs::write(&path, r.to_json() + "\n").map_err(Error::from)?;
            Manifest::new("validate", &s, workers, vec!["validation.json".into()])
                .write(&out.join("validate.manifest.json"))?;
            println!(
                "{} quantities, max |z| {:.3}, {:.2}% within 3; literal pilot factor max |z| {:.3e}",
                r.summary.count,
                r.summary.max_abs_z,
                100.0 * r.summary.fraction_within_3,
                r.tau_literal_summary.max_abs_z
            );
            println!(
                "harvested energy: Monte-Carlo mean at or above the closed form in {}/{} cases",
                r.energy_mc_at_or_above, r.energy_entries
            );
            if !r.passes() {
                return Err(Failure::Gate(format!("{:?}", r.summary)));
            }
        }
        Command::LpDump { drop, tau_d } => {
            let protocol = match tau_d {
                Some(t) => Protocol::TimeSwitching { tau_d: *t },
                None => Protocol::Proposed,
            };
            let problem = Problem::new(&s.system_params(), &drop_inputs(&s, *drop)?, protocol)?;
            let alpha = ones_filters(problem.num_aps(), problem.num_users());
            let lp = build_lp(&problem, &alpha, s.optimizer.sinr_margin)?;
            let name = format!("lp_drop{drop}_{}.txt", protocol_label(protocol).replace(['(', ')', '='], "_"));
            std::fs::write(out.join(&name), lp.to_text()).map_err(Error::from)?;
            println!("wrote {}", out.join(name).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let workers = cli
        .common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start {workers} workers: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| execute(&cli, workers)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Gate(msg)) => {
            eprintln!("validation gate failed: {msg}");
            ExitCode::from(2)
        }
    }
}
