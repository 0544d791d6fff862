use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use edgemig::agents::PolicyKind;
use edgemig::allocator::{
    kkt_residual, objective, optimal_allocation, optimal_value, oracle_allocation,
    AllocationRequest,
};
use edgemig::delay::{
    access_delay, backhaul_delay, computation_delay, mb_to_bits, migration_delay, snr,
    DelayParams, ServiceProfile, TaskSpec,
};
use edgemig::harness::{
    emit_plot_data, load_trace_file, read_metrics_csv, run_experiment, sweep_compare,
    ExperimentConfig, MobilitySource,
};
use edgemig::rng::rng_from_seed;
use edgemig::traces::{write_slot_csv, MobilityModel};
use edgemig::{Error, Result};

#[derive(Parser)]
#[command(name = "edgemig", version, about = "Service migration and resource allocation simulator for vehicular edge computing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and evaluate it on held-out episodes.
    Train(RunArgs),
    /// Evaluate a policy, or a trained checkpoint, on held-out episodes.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Agent checkpoint written by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the policy and every `compare` policy, then build comparison tables.
    Sweep(RunArgs),
    /// Convert a raw GPS trace (optionally .gz) into a slot CSV.
    TraceConvert {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run quick built-in consistency checks.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Mobility from a trace file.
    #[arg(long, conflicts_with = "synthetic")]
    trace: Option<PathBuf>,
    /// Synthetic mobility model: random_waypoint or linear.
    #[arg(long)]
    synthetic: Option<MobilityModel>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::from_toml_str("scenario = \"default\"\n")?,
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(p) = self.policy {
            cfg.policy = p;
        }
        if let Some(t) = &self.trace {
            cfg.mobility.source = MobilitySource::Trace;
            cfg.mobility.trace_path = Some(t.clone());
        }
        if let Some(m) = self.synthetic {
            cfg.mobility.source = MobilitySource::Synthetic;
            cfg.mobility.model = m;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.scenario));
        cfg.validate()?;
        Ok((cfg, out))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(args) => {
            let (cfg, out) = args.resolve()?;
            if !cfg.policy.is_learning() {
                return Err(Error::InvalidArgument(format!(
                    "{} is not a learning policy, use `eval`",
                    cfg.policy
                )));
            }
            run_one(&cfg, &out)
        }
        Command::Eval { run, checkpoint } => {
            let (mut cfg, out) = run.resolve()?;
            if checkpoint.is_some() {
                cfg.eval.checkpoint = checkpoint;
            }
            run_one(&cfg, &out)
        }
        Command::Sweep(args) => {
            let (cfg, out) = args.resolve()?;
            sweep(&cfg, &out)
        }
        Command::TraceConvert { config, trace, out } => {
            let cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::from_toml_str("scenario = \"trace\"\n")?,
            };
            let traces = load_trace_file(&trace, &cfg.env, &cfg)?;
            let keep = &traces[..cfg.env.n_vehicles.min(traces.len())];
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_slot_csv(keep, BufWriter::new(File::create(&out)?))?;
            println!("wrote {} vehicles to {}", keep.len(), out.display());
            Ok(())
        }
        Command::Selftest => selftest(),
    }
}

fn run_one(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let summary = run_experiment(cfg, out)?;
    for r in &summary.rows {
        println!(
            "{} value={} seed={} total={:.4} s mt={:.4} ht={:.4} ct={:.4} migrations={:.2}",
            r.policy, r.sweep_value, r.seed, r.total_delay_s, r.mt_s, r.ht_s, r.ct_s, r.migration_frequency
        );
    }
    println!("metrics: {}", summary.metrics_path.display());
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut policies = vec![cfg.policy];
    for &p in &cfg.compare {
        if !policies.contains(&p) {
            policies.push(p);
        }
    }
    let mut runs = Vec::new();
    let mut dirs = Vec::new();
    for &p in &policies {
        let dir = out.join(p.as_str());
        let summary = run_experiment(&cfg.with_policy(p), &dir)?;
        println!("{p}: {}", summary.metrics_path.display());
        runs.push(read_metrics_csv(&summary.metrics_path)?);
        dirs.push(dir);
    }
    for metric in ["total_delay_s", "migration_frequency"] {
        let table = sweep_compare(&runs, metric)?;
        let path = out.join(format!("comparison_{metric}.csv"));
        table.write_csv(BufWriter::new(File::create(&path)?))?;
        println!("comparison: {}", path.display());
    }
    for p in emit_plot_data(&dirs, &out.join("plots"))? {
        println!("plot data: {}", p.display());
    }
    Ok(())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn selftest() -> Result<()> {
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    let p = DelayParams::default();
    let task = TaskSpec::new(8e6, 600.0, 0.5)?;
    let service = ServiceProfile {
        service_bits: mb_to_bits(50.0),
    };
    check("migration delay", rel(migration_delay(&service, 2, &p), 3.8) < 1e-9);
    check("snr", rel(snr(&task, 100.0, &p)?, 5000.0) < 1e-9);
    check(
        "access delay",
        rel(access_delay(&task, 2e6, 5000.0)?, 0.325_520_809_764_133_3) < 1e-9,
    );
    check("backhaul delay", rel(backhaul_delay(&task, 3, &p), 0.916) < 1e-9);
    check("computation delay", rel(computation_delay(4.8e9, 0.25, &p)?, 0.32) < 1e-9);

    let mut rng = rng_from_seed(7);
    let (mut beats_oracle, mut closed_form, mut kkt) = (true, true, true);
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let req = AllocationRequest::new((0..n).map(|_| rng.random_range(1e8..1e10)).collect())?;
        let opt = optimal_allocation(&req)?;
        let grid = oracle_allocation(&req, 2000)?;
        let f = p.server_capacity;
        let v = objective(&req, &opt, f)?;
        beats_oracle &= v <= objective(&req, &grid, f)?;
        closed_form &= rel(v, optimal_value(&req, f)) < 1e-12;
        kkt &= kkt_residual(&req, &opt)? < 1e-9;
    }
    check("allocation not worse than grid oracle", beats_oracle);
    check("allocation matches closed-form value", closed_form);
    check("allocation KKT residual", kkt);

    let cfg = ExperimentConfig::from_toml_str(
        "scenario = \"selftest\"\npolicy = \"nm\"\nseeds = [0]\n[env]\nrows = 2\ncols = 2\nregion_side = 2000.0\nn_vehicles = 5\nhorizon = 10\n[eval]\nepisodes = 2\n",
    )?;
    let dir = std::env::temp_dir().join(format!("edgemig-selftest-{}", std::process::id()));
    let summary = run_experiment(&cfg, &dir)?;
    let _ = fs::remove_dir_all(&dir);
    check(
        "never-migrate run has no migrations",
        summary.rows.len() == 1 && summary.rows[0].migration_frequency == 0.0,
    );

    if failures > 0 {
        return Err(Error::Internal(format!("{failures} self-test check(s) failed")));
    }
    println!("all checks passed");
    Ok(())
}
