//! Shared execution core for `run` and `sweep`: load artifacts once, then
//! solve per seed into an isolated output directory.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cmdp_lab::adaptive::{adaptive_dpdl, AdaptiveOptions, ExitReason};
use cmdp_lab::dataset::{AsyncSampler, DatasetMode, OfflineDataset, SampleSource, SyncSampler};
use cmdp_lab::dpdl::{default_schedule_with_budget, run_dpdl, DpdlConfig};
use cmdp_lab::report::{fill_diagnostics, SolveReport};
use cmdp_lab::{CmdpModel, Error, Policy};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{ExperimentConfig, RunMode, SourceMode};

/// Library errors keep their type so the exit code can distinguish solver
/// precondition failures from plain I/O, while gaining a module prefix.
pub fn module_of(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) | Error::InvalidArgument(_) | Error::SingularSystem(_) => "cmdp-core",
        Error::LpInternal(_) | Error::NoSafePolicy => "lp-oracle",
        Error::InsufficientData { .. }
        | Error::StreamExhausted { .. }
        | Error::ChainNotErgodic(_)
        | Error::MixingCapExceeded { .. } => "dataset",
        Error::Config(_) | Error::KktNoCase => "dpdl",
        Error::RoundCapExceeded { .. } => "verify-adaptive",
        Error::Instance(_) => "instances",
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => "io",
    }
}

/// Wrap a library result with its owning module's name.
pub fn lab<T>(r: cmdp_lab::Result<T>) -> Result<T> {
    r.map_err(|e| {
        let module = module_of(&e);
        anyhow::Error::new(e).context(module)
    })
}

pub fn read_model(path: &Path) -> Result<CmdpModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    lab(CmdpModel::from_json(&text)).with_context(|| format!("loading {}", path.display()))
}

/// Reference distribution file: either a bare JSON array or any object with
/// a `mu` array field (such as a generator sidecar).
pub fn read_mu(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading reference distribution {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)?;
    let array = match &value {
        Value::Array(_) => &value,
        Value::Object(map) => map
            .get("mu")
            .ok_or_else(|| anyhow!("{}: no `mu` field in object", path.display()))?,
        _ => bail!("{}: expected a JSON array or an object with `mu`", path.display()),
    };
    Ok(serde_json::from_value(array.clone())?)
}

pub fn read_policy(path: &Path) -> Result<Policy> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading policy {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Everything loaded once and shared read-only across a sweep's workers.
pub struct LoadedRun {
    pub cfg: ExperimentConfig,
    pub model: CmdpModel,
    pub mu: Option<Vec<f64>>,
    pub behavior: Option<Policy>,
    pub dataset: Option<OfflineDataset>,
}

pub fn load(cfg: ExperimentConfig) -> Result<LoadedRun> {
    let model = read_model(cfg.model.as_ref().expect("resolved config has a model"))?;
    let mu = cfg.mu.as_ref().map(|p| read_mu(p)).transpose()?;
    let behavior = cfg.behavior_policy.as_ref().map(|p| read_policy(p)).transpose()?;
    let dataset = match &cfg.dataset {
        Some(path) => {
            let data = lab(OfflineDataset::read_file(path))?;
            let dims = model.dims();
            let h = &data.header;
            if h.num_states != dims.num_states
                || h.num_actions != dims.num_actions
                || h.num_constraints != dims.num_constraints
                || (h.gamma - dims.discount).abs() > 1e-12
            {
                bail!(
                    "dataset {} was drawn from a different model shape",
                    path.display()
                );
            }
            // With a stored dataset, a mode request must match its header.
            if let Some(requested) = cfg.dataset_mode {
                let requested = match requested {
                    SourceMode::Sync => DatasetMode::Synchronous,
                    SourceMode::Async => DatasetMode::Asynchronous,
                };
                if h.mode != requested {
                    bail!(
                        "dataset {} is {:?} but the config asks for {:?}",
                        path.display(),
                        h.mode,
                        requested
                    );
                }
            }
            Some(data)
        }
        None => None,
    };
    Ok(LoadedRun {
        cfg,
        model,
        mu,
        behavior,
        dataset,
    })
}

/// One run's aggregate numbers, as written to a sweep's summary table.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reward_gap: Option<f64>,
    pub violation: Option<f64>,
    pub gap_estimate: Option<f64>,
    pub consumed: usize,
    pub wall_ms: f64,
    /// Adaptive mode: rounds executed and final deviation level.
    pub rounds: Option<usize>,
    pub psi_final: Option<f64>,
}

fn dpdl_config(run: &LoadedRun, seed: u64) -> Result<DpdlConfig> {
    let cfg = &run.cfg;
    let dims = run.model.dims();
    let mut solver = lab(default_schedule_with_budget(
        cfg.epsilon.unwrap(),
        cfg.delta.unwrap(),
        cfg.psi.unwrap(),
        cfg.phi.unwrap(),
        &dims,
        cfg.budget.unwrap(),
    ))?;
    if let Some(t) = cfg.iterations {
        solver.iterations = t;
    }
    if let Some(n) = cfg.estimation_samples {
        solver.estimation_samples = n;
    }
    if let Some(v) = cfg.varsigma {
        solver.varsigma = v;
    }
    solver.eta_cap_relax = cfg.eta_cap_relax.unwrap();
    let cap = solver.eta_cap_relax * solver.eta_cap(dims.discount);
    solver.eta = (1.0 / (solver.iterations as f64).sqrt()).min(cap);
    solver.checkpoints = cfg.checkpoints.unwrap();
    solver.seed = seed;
    lab(solver.validate(dims.discount))?;
    Ok(solver)
}

fn adaptive_options(run: &LoadedRun, seed: u64) -> AdaptiveOptions {
    let cfg = &run.cfg;
    let mut opts = AdaptiveOptions::new(seed);
    opts.round_cap = cfg.round_cap.unwrap();
    opts.budget = cfg.budget.unwrap();
    opts.eta_cap_relax = cfg.eta_cap_relax.unwrap();
    opts.checkpoints = cfg.checkpoints.unwrap();
    opts.iterations = cfg.iterations;
    opts.estimation_samples = cfg.estimation_samples;
    opts.varsigma = cfg.varsigma;
    opts.n_v = cfg.n_v;
    opts
}

/// Solve once with the given seed, writing `config.json`, `report.json`,
/// `curve.csv` (and `trace.json` in adaptive mode) under `out`.
pub fn execute(run: &LoadedRun, seed: u64, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut echoed = run.cfg.clone();
    echoed.seed = Some(seed);
    echoed.out = Some(out.to_path_buf());
    write_json(&out.join("config.json"), &echoed)?;

    let tol = cmdp_lab::NumericConfig::DEFAULT;
    let dims = run.model.dims();
    let uniform_mu;
    let uniform_pi;
    let mut source: Box<dyn SampleSource + '_> = match &run.dataset {
        Some(data) => Box::new(data.cursor()),
        None => match run.cfg.dataset_mode.expect("resolved when sampling fresh") {
            SourceMode::Sync => {
                let mu = match &run.mu {
                    Some(m) => m.as_slice(),
                    None => {
                        uniform_mu = vec![1.0 / dims.num_pairs() as f64; dims.num_pairs()];
                        &uniform_mu
                    }
                };
                Box::new(lab(SyncSampler::new(&run.model, mu, seed))?)
            }
            SourceMode::Async => {
                let pi_b = match &run.behavior {
                    Some(p) => p,
                    None => {
                        uniform_pi = Policy::uniform(dims.num_states, dims.num_actions);
                        &uniform_pi
                    }
                };
                Box::new(lab(AsyncSampler::new(
                    &run.model,
                    pi_b,
                    seed,
                    run.cfg.burn_in.unwrap(),
                ))?)
            }
        },
    };

    let mut rounds = None;
    let mut psi_final = None;
    let mut report: SolveReport = match run.cfg.mode.unwrap() {
        RunMode::Dpdl => {
            let solver = dpdl_config(run, seed)?;
            lab(run_dpdl(
                &dims,
                source.as_mut(),
                &solver,
                run.model.rho0(),
                &tol,
            ))?
        }
        RunMode::Adaptive => {
            let opts = adaptive_options(run, seed);
            let result = adaptive_dpdl(
                &dims,
                source.as_mut(),
                run.cfg.epsilon.unwrap(),
                run.cfg.delta.unwrap(),
                run.cfg.phi.unwrap(),
                run.cfg.psi_init.unwrap(),
                run.model.rho0(),
                &opts,
                &tol,
            );
            match result {
                Ok(outcome) => {
                    rounds = Some(outcome.trace.rounds.len());
                    psi_final = outcome.trace.rounds.last().map(|r| r.psi);
                    write_json(&out.join("trace.json"), &outcome.trace)?;
                    if let ExitReason::Converged { round } = outcome.trace.exit {
                        eprintln!("adaptive: certified at round {round}");
                    }
                    outcome.report
                }
                Err(failure) => {
                    // The partial trace is an output in its own right.
                    write_json(&out.join("trace.json"), &failure.trace)?;
                    let module = module_of(&failure.error);
                    return Err(anyhow::Error::new(failure.error)
                        .context(format!("{module}: adaptive run aborted, partial trace kept")));
                }
            }
        }
    };

    let want_diag = run.cfg.diagnose.unwrap_or(run.mu.is_some());
    if want_diag {
        let mu = run.mu.as_ref().ok_or_else(|| {
            anyhow!("diagnostics need simulator ground truth: provide a reference distribution (--mu)")
        })?;
        let diag = lab(fill_diagnostics(&mut report, &run.model, mu, &tol))?;
        for m in &diag.mismatches {
            eprintln!("warning: stored/recomputed disagreement: {m}");
        }
    }

    write_json(&out.join("report.json"), &report)?;
    let mut curve = Vec::new();
    lab(report.write_curve_csv(&mut curve))?;
    fs::write(out.join("curve.csv"), curve)?;

    Ok(RunSummary {
        reward_gap: report.reward_gap,
        violation: report.violation,
        gap_estimate: report.gap_estimate,
        consumed: report.consumed,
        wall_ms: report.wall_ms,
        rounds,
        psi_final,
    })
}

/// Worker-pool size: `CMDP_LAB_THREADS` caps it, availability bounds it.
fn pool_size(jobs: usize) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("CMDP_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(available);
    cap.min(available).min(jobs.max(1))
}

/// Fan one experiment across a seed range; each seed solves in its own
/// subdirectory, then the summary table is aggregated single-threaded.
pub fn sweep(run: &LoadedRun, seeds: std::ops::Range<u64>, out: &Path) -> Result<()> {
    if seeds.is_empty() {
        bail!("empty seed range");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let jobs: Vec<u64> = seeds.collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_size(jobs.len()))
        .build()
        .context("building worker pool")?;
    let results: Vec<(u64, Result<RunSummary>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&k| (k, execute(run, k, &out.join(format!("seed-{k}")))))
            .collect()
    });

    let mut table = Vec::new();
    writeln!(
        table,
        "seed,status,reward_gap,violation,gap_estimate,consumed,wall_ms,rounds,psi_final"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut ok = 0usize;
    let mut safe = 0usize;
    let mut gaps = Vec::new();
    let mut first_err: Option<anyhow::Error> = None;
    for (seed, result) in results {
        match result {
            Ok(s) => {
                ok += 1;
                if s.violation == Some(0.0) {
                    safe += 1;
                }
                if let Some(g) = s.reward_gap {
                    gaps.push(g);
                }
                writeln!(
                    table,
                    "{},ok,{},{},{},{},{},{},{}",
                    seed,
                    opt(s.reward_gap),
                    opt(s.violation),
                    opt(s.gap_estimate),
                    s.consumed,
                    s.wall_ms,
                    s.rounds.map(|r| r.to_string()).unwrap_or_default(),
                    opt(s.psi_final)
                )?;
            }
            Err(e) => {
                let msg = format!("{e:#}").replace('"', "\"\"");
                writeln!(table, "{seed},\"error: {msg}\",,,,,,,")?;
                if first_err.is_none() {
                    first_err = Some(e.context(format!("seed {seed}")));
                }
            }
        }
    }
    fs::write(out.join("summary.csv"), table)?;
    let mean_gap = if gaps.is_empty() {
        f64::NAN
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    println!(
        "sweep: {ok}/{} runs succeeded, {safe} with zero violation, mean reward gap {mean_gap:.6}; \
         summary at {}",
        jobs.len(),
        out.join("summary.csv").display()
    );
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
