use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use horizon_core::config::Config;
use horizon_core::experiments::{self, Experiment, Outcome};
use horizon_core::report::{Table, Timing};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Seeded numerical experiments for horizontal-like maps.
#[derive(Parser, Debug)]
#[command(name = "horizon", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the named experiment: `horizon run dashboard henon.cfg`.
    Run {
        experiment: String,
        #[arg(value_name = "CONFIG")]
        config_path: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Certify horizontal-like structure and main degrees.
    CheckStructure(Opts),
    /// Evaluate the Green functions and their invariance.
    Green(Opts),
    /// Iterate pulled-back potentials and track pairings with test forms.
    CurrentConverge(Opts),
    /// Build the grid equilibrium measure and probe invariance and support.
    Measure(Opts),
    /// Lyapunov exponents along forward and inverse orbits.
    Lyapunov(Opts),
    /// Entropy from separated sets and Bowen balls.
    Entropy(Opts),
    /// Decay of correlations.
    Mixing(Opts),
    /// Volume growth of disc families.
    Degrees(Opts),
    /// Certificate, degrees, exponents and mixing in one report.
    Dashboard(Opts),
}

#[derive(Args, Debug, Clone, Default)]
struct Opts {
    /// Experiment configuration (INI).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; defaults to $HORIZON_OUT, then `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides `[run] workers`.
    #[arg(long)]
    workers: Option<usize>,
}

fn resolve(cmd: Cmd) -> Result<(Experiment, Opts)> {
    Ok(match cmd {
        Cmd::Run { experiment, config_path, mut opts } => {
            if let Some(c) = config_path {
                if opts.config.replace(c).is_some() {
                    bail!("config given both positionally and with --config");
                }
            }
            (experiment.parse()?, opts)
        }
        Cmd::CheckStructure(o) => (Experiment::CheckStructure, o),
        Cmd::Green(o) => (Experiment::Green, o),
        Cmd::CurrentConverge(o) => (Experiment::CurrentConverge, o),
        Cmd::Measure(o) => (Experiment::Measure, o),
        Cmd::Lyapunov(o) => (Experiment::Lyapunov, o),
        Cmd::Entropy(o) => (Experiment::Entropy, o),
        Cmd::Mixing(o) => (Experiment::Mixing, o),
        Cmd::Degrees(o) => (Experiment::Degrees, o),
        Cmd::Dashboard(o) => (Experiment::Dashboard, o),
    })
}

fn write_table(path: &Path, t: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&t.headers)?;
    for row in &t.rows {
        w.write_record(row.iter().map(|c| c.render()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_outcome(dir: &Path, out: &Outcome) -> Result<()> {
    fs::write(dir.join("report.json"), out.report.to_json() + "\n")?;
    for (stem, t) in &out.tables {
        write_table(&dir.join(format!("{stem}.csv")), t)?;
    }
    for (stem, svg) in &out.plots {
        fs::write(dir.join(format!("{stem}.svg")), svg)?;
    }
    for (name, bytes) in &out.files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Writes into a hidden staging directory and renames it into place, so a
/// failed run leaves nothing behind.
fn publish(root: &Path, name: &str, out: &Outcome) -> Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let staging = root.join(format!(".{name}.partial-{}", std::process::id()));
    fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
    if let Err(e) = write_outcome(&staging, out) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    let mut target = root.join(name);
    let mut suffix = 1;
    while target.exists() {
        target = root.join(format!("{name}-{suffix}"));
        suffix += 1;
    }
    if let Err(e) = fs::rename(&staging, &target) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e.into());
    }
    Ok(target)
}

fn execute(cli: Cli) -> Result<bool> {
    let (exp, opts) = resolve(cli.cmd)?;
    let path = opts.config.context("a configuration file is required (--config PATH)")?;
    let mut cfg = Config::load(&path)?;
    if let Some(seed) = opts.seed {
        cfg.set("run", "seed", &seed.to_string());
    }
    let workers = match opts.workers {
        Some(w) => Some(w),
        None => cfg.get::<usize>("run", "workers")?,
    };
    if let Some(w) = workers {
        if w == 0 {
            bail!("worker count must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("configuring the worker pool")?;
    }
    let root = opts
        .out
        .or_else(|| std::env::var_os("HORIZON_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));

    let started = chrono::Utc::now();
    let clock = Instant::now();
    let mut outcome = experiments::run(exp, &cfg)?;
    outcome.report.timing = Some(Timing { started: started.to_rfc3339(), wall_seconds: clock.elapsed().as_secs_f64() });

    let name = format!("{exp}-{}", started.format("%Y%m%dT%H%M%S%.3fZ"));
    let dir = publish(&root, &name, &outcome)?;
    let unreliable = outcome.report.is_unreliable();
    println!("{}", dir.display());
    if unreliable {
        for why in &outcome.report.unreliable {
            eprintln!("unreliable: {why}");
        }
    }
    Ok(unreliable)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
