//! Command-line front end: generate benchmark instances, draw offline
//! datasets, solve them, and audit the resulting reports against exact
//! ground truth.
//!
//! Exit codes: 0 on success, 2 when a solver or generator precondition
//! fails (and on usage errors), 1 on plain I/O failures.

mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cmdp_lab::dataset::{sample_async, sample_sync};
use cmdp_lab::instances::{build_hard_cmdp, build_slater_instance, random_cmdp, HardInstance,
    HardInstanceParams};
use cmdp_lab::model::Policy;
use cmdp_lab::report::{diagnose, SolveReport};
use cmdp_lab::rng::{stream, StreamId};
use cmdp_lab::NumericConfig;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use config::{RunFlags, SourceMode};
use run::{lab, read_model, read_mu, read_policy, write_json};

#[derive(Parser)]
#[command(
    name = "cmdp-lab",
    version,
    about = "Offline constrained-MDP optimization workbench"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a benchmark model (plus ground-truth sidecar where closed
    /// forms exist)
    #[command(subcommand)]
    Gen(GenCmd),
    /// Draw an offline dataset from a model
    Sample(SampleArgs),
    /// Solve an instance, writing report JSON and a convergence-curve CSV
    Run(RunArgs),
    /// Recompute a report's numbers from stored artifacts and flag drift
    Diagnose(DiagnoseArgs),
    /// Fan the same experiment across a seed range under a worker pool
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenCommon {
    /// Output directory for model.json (and sidecar.json).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum GenCmd {
    /// Constrained bandit-chain family with closed-form optimum
    Hard {
        /// State budget (>= 4).
        #[arg(long = "S")]
        s: usize,
        /// Action budget (>= 3).
        #[arg(long = "A")]
        a: usize,
        /// Constraint budget (>= 8).
        #[arg(long = "I")]
        i: usize,
        /// Deviation level of the paired reference distribution (>= 2).
        #[arg(long = "C")]
        c: f64,
        #[arg(long)]
        gamma: f64,
        /// Constrained-arm coin bias, in (0, 1/2].
        #[arg(long, default_value_t = 0.5)]
        varpi_c: f64,
        /// Unconstrained-arm coin bias, in (0, 1/2].
        #[arg(long, default_value_t = 0.5)]
        varpi_u: f64,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Single-constraint family with no safety slack
    Slater {
        /// Number of coin states (>= 4).
        #[arg(long = "S")]
        s: usize,
        /// Action budget (>= 3; the model itself uses two arms per state).
        #[arg(long = "A")]
        a: usize,
        /// Deviation level of the paired reference distribution (>= 2).
        #[arg(long = "C")]
        c: f64,
        #[arg(long)]
        gamma: f64,
        /// Coin bias, in (0, 1/2].
        #[arg(long, default_value_t = 0.5)]
        varpi: f64,
        /// Safe-arm indicator per coin state, e.g. "1,0,1"; random when
        /// absent.
        #[arg(long, value_delimiter = ',')]
        theta: Option<Vec<u8>>,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Random well-conditioned model with a guaranteed safety margin
    Random {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        constraints: usize,
        #[arg(long)]
        gamma: f64,
        /// Required safety margin, in (0,1).
        #[arg(long, default_value_t = 0.1)]
        slater_target: f64,
        #[command(flatten)]
        common: GenCommon,
    },
}

/// Ground truth written next to a generated model.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    mu: Vec<f64>,
    optimal_policy: Policy,
    optimal_value: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// sync: independent tuples; async: one behavior-policy trajectory.
    #[arg(long, value_enum, default_value_t = SourceMode::Sync)]
    mode: SourceMode,
    /// Number of tuples.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference distribution JSON for sync mode; uniform when absent.
    #[arg(long)]
    mu: Option<PathBuf>,
    /// Behavior policy JSON for async mode; uniform when absent.
    #[arg(long)]
    behavior_policy: Option<PathBuf>,
    /// Transitions discarded before the first async tuple.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Output dataset file.
    #[arg(long, default_value = "data.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    /// True reference distribution; required to reweight the stored iterate.
    #[arg(long)]
    mu: Option<PathBuf>,
    /// report.json produced by `run`.
    #[arg(long)]
    report: PathBuf,
    /// Where to write the recomputed numbers (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: RunFlags,
    /// Seed range `a..b` (end exclusive) or a single seed.
    #[arg(long)]
    seeds: String,
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}

/// Solver/generator precondition failures exit 2; plain I/O exits 1.
fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<cmdp_lab::Error>() {
        Some(cmdp_lab::Error::Io(_))
        | Some(cmdp_lab::Error::Json(_))
        | Some(cmdp_lab::Error::Csv(_)) => 1,
        Some(_) => 2,
        None => {
            // CLI-level validation is a usage problem, not an I/O one.
            if err.downcast_ref::<std::io::Error>().is_some()
                || err.downcast_ref::<serde_json::Error>().is_some()
            {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(gen) => cmd_gen(gen),
        Cmd::Sample(args) => cmd_sample(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Diagnose(args) => cmd_diagnose(args),
        Cmd::Sweep(args) => cmd_sweep(args),
    }
}

fn write_instance(out: &Path, inst: &HardInstance) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let model_path = out.join("model.json");
    fs::write(&model_path, inst.model.to_json())?;
    let sidecar = Sidecar {
        mu: inst.mu.clone(),
        optimal_policy: inst.optimal_policy.clone(),
        optimal_value: inst.optimal_value,
    };
    write_json(&out.join("sidecar.json"), &sidecar)?;
    println!(
        "wrote {} and {}",
        model_path.display(),
        out.join("sidecar.json").display()
    );
    Ok(())
}

fn cmd_gen(gen: GenCmd) -> Result<()> {
    let tol = NumericConfig::DEFAULT;
    match gen {
        GenCmd::Hard {
            s,
            a,
            i,
            c,
            gamma,
            varpi_c,
            varpi_u,
            common,
        } => {
            let params =
                HardInstanceParams::random(s, a, i, c, gamma, varpi_c, varpi_u, common.seed);
            let inst = lab(build_hard_cmdp(&params, &tol))?;
            write_instance(&common.out, &inst)
        }
        GenCmd::Slater {
            s,
            a,
            c,
            gamma,
            varpi,
            theta,
            common,
        } => {
            let theta = theta.unwrap_or_else(|| {
                let mut rng = stream(common.seed, StreamId::Instance);
                (0..s).map(|_| rng.gen::<bool>() as u8).collect()
            });
            let inst = lab(build_slater_instance(s, a, c, gamma, &theta, varpi, &tol))?;
            write_instance(&common.out, &inst)
        }
        GenCmd::Random {
            states,
            actions,
            constraints,
            gamma,
            slater_target,
            common,
        } => {
            let model = lab(random_cmdp(
                states,
                actions,
                constraints,
                gamma,
                slater_target,
                common.seed,
                &tol,
            ))?;
            fs::create_dir_all(&common.out)
                .with_context(|| format!("creating {}", common.out.display()))?;
            let path = common.out.join("model.json");
            fs::write(&path, model.to_json())?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let dims = model.dims();
    let data = match args.mode {
        SourceMode::Sync => {
            let mu = match &args.mu {
                Some(p) => read_mu(p)?,
                None => vec![1.0 / dims.num_pairs() as f64; dims.num_pairs()],
            };
            lab(sample_sync(&model, &mu, args.n, args.seed))?
        }
        SourceMode::Async => {
            let pi_b = match &args.behavior_policy {
                Some(p) => read_policy(p)?,
                None => Policy::uniform(dims.num_states, dims.num_actions),
            };
            lab(sample_async(&model, &pi_b, args.n, args.seed, args.burn_in))?
        }
    };
    lab(data.write_file(&args.out))?;
    println!("wrote {} ({} tuples)", args.out.display(), data.tuples.len());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.flags.resolve()?;
    let out = cfg.out.clone().expect("resolved config has an output dir");
    let loaded = run::load(cfg)?;
    let seed = loaded.cfg.seed.expect("resolved config has a seed");
    let summary = run::execute(&loaded, seed, &out)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    println!(
        "report at {} (reward_gap {}, violation {}, consumed {})",
        out.join("report.json").display(),
        opt(summary.reward_gap),
        opt(summary.violation),
        summary.consumed
    );
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let mu_path = args.mu.as_ref().ok_or_else(|| {
        anyhow!("diagnostics need simulator ground truth: provide a reference distribution (--mu)")
    })?;
    let mu = read_mu(mu_path)?;
    let text = fs::read_to_string(&args.report)
        .with_context(|| format!("reading report {}", args.report.display()))?;
    let report: SolveReport = serde_json::from_str(&text)?;
    let tol = NumericConfig::DEFAULT;
    let diag = lab(diagnose(&report, &model, &mu, &tol))?;
    for m in &diag.mismatches {
        eprintln!("warning: stored/recomputed disagreement: {m}");
    }
    match &args.out {
        Some(path) => {
            write_json(path, &diag)?;
            println!(
                "diagnostics at {} ({} disagreement(s))",
                path.display(),
                diag.mismatches.len()
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&diag)?),
    }
    Ok(())
}

fn parse_seeds(text: &str) -> Result<std::ops::Range<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim().parse().context("seed range end")?;
        if a >= b {
            bail!("seed range {text} is empty (end is exclusive)");
        }
        Ok(a..b)
    } else {
        let k: u64 = text.trim().parse().context("seed")?;
        Ok(k..k + 1)
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let seeds = parse_seeds(&args.seeds)?;
    let cfg = args.flags.resolve()?;
    let out = cfg.out.clone().expect("resolved config has an output dir");
    let loaded = run::load(cfg)?;
    run::sweep(&loaded, seeds, &out)
}
