//! Doubling driver: solve-and-certify rounds with geometrically increasing
//! ratio budgets.
//!
//! Round `K` runs the primal-dual solver at `psi_K = psi_init * 2^(K-1)` on
//! fresh tuples, certifies its averaged iterate on a further fresh slice,
//! and stops once two consecutive rounds certify with the second improving
//! on the first by at most `500 epsilon`. The per-round accuracy is
//! `epsilon = epsilon'/15` and the per-round confidence `6 delta/(pi^2 K^2)`,
//! which sums below `delta` over all rounds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::SampleSource;
use crate::dpdl::{default_schedule_with_budget, run_dpdl, DpdlConfig, DEFAULT_CHECKPOINTS};
use crate::error::{Error, Result};
use crate::model::{ModelDims, Policy};
use crate::report::SolveReport;
use crate::tol::NumericConfig;
use crate::verify::{required_n_v, verify, VerifyParams, VerifyReport};

pub const DEFAULT_ROUND_CAP: usize = 60;
pub const DEFAULT_EXIT_IMPROVEMENT: f64 = 500.0;

/// Per-round accuracy target `epsilon'/15`.
pub fn round_epsilon(epsilon_prime: f64) -> f64 {
    epsilon_prime / 15.0
}

/// Per-round confidence share `6 delta / (pi^2 K^2)`; the shares sum to
/// `delta` over `K = 1, 2, ...`.
pub fn round_delta(delta: f64, round: usize) -> f64 {
    let k = round as f64;
    6.0 * delta / (std::f64::consts::PI.powi(2) * k * k)
}

#[derive(Debug, Clone)]
pub struct AdaptiveOptions {
    pub seed: u64,
    /// Hard bound on the number of doubling rounds.
    pub round_cap: usize,
    /// Coefficient on the per-round `epsilon` in the improvement exit test.
    pub exit_improvement: f64,
    /// Certification threshold coefficients, as in [`VerifyParams`].
    pub flow_multiplier: f64,
    pub utility_multiplier: f64,
    /// Budget multiplier on each round's minimal cap-satisfying `T`.
    pub budget: f64,
    pub eta_cap_relax: f64,
    pub checkpoints: usize,
    /// Desk-scale overrides; `None` keeps the theoretical schedule.
    pub iterations: Option<usize>,
    pub estimation_samples: Option<usize>,
    pub varsigma: Option<f64>,
    pub n_v: Option<usize>,
}

impl AdaptiveOptions {
    pub fn new(seed: u64) -> Self {
        AdaptiveOptions {
            seed,
            round_cap: DEFAULT_ROUND_CAP,
            exit_improvement: DEFAULT_EXIT_IMPROVEMENT,
            flow_multiplier: 1.5,
            utility_multiplier: 3.0,
            budget: 1.0,
            eta_cap_relax: 1.0,
            checkpoints: DEFAULT_CHECKPOINTS,
            iterations: None,
            estimation_samples: None,
            varsigma: None,
            n_v: None,
        }
    }
}

/// One solve-and-certify round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRound {
    pub round: usize,
    pub psi: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub passed: bool,
    /// Certified return estimate; present only when the round certified.
    pub j_hat: Option<f64>,
    pub verify: VerifyReport,
    /// Tuples consumed by this round (reference batch + iterations +
    /// certification slice).
    pub tuples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExitReason {
    Converged { round: usize },
    RoundCapExceeded { cap: usize },
    Aborted { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveTrace {
    pub rounds: Vec<AdaptiveRound>,
    pub exit: ExitReason,
    /// Policy of the exit round; present only on convergence.
    pub final_policy: Option<Policy>,
}

/// Successful run: the converged round's full solve report plus the trace.
#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub trace: AdaptiveTrace,
    pub report: SolveReport,
}

/// Failed run, still carrying whatever rounds completed.
#[derive(Debug)]
pub struct AdaptiveFailure {
    pub error: Error,
    pub trace: AdaptiveTrace,
}

impl fmt::Display for AdaptiveFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "adaptive run failed after {} completed round(s): {}",
            self.trace.rounds.len(),
            self.error
        )
    }
}

impl std::error::Error for AdaptiveFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type AdaptiveResult = std::result::Result<AdaptiveOutcome, Box<AdaptiveFailure>>;

/// Round schedule: the theoretical one at (`epsilon`, `delta_k`, `psi_k`),
/// with any desk-scale overrides applied and the stepsize re-solved for the
/// final iteration count.
fn round_config(
    epsilon: f64,
    delta_k: f64,
    psi_k: f64,
    phi: f64,
    dims: &ModelDims,
    options: &AdaptiveOptions,
    round: usize,
) -> Result<DpdlConfig> {
    let mut cfg = default_schedule_with_budget(epsilon, delta_k, psi_k, phi, dims, options.budget)?;
    if let Some(v) = options.varsigma {
        cfg.varsigma = v;
    }
    if let Some(n) = options.estimation_samples {
        cfg.estimation_samples = n;
    }
    if let Some(t) = options.iterations {
        cfg.iterations = t;
    }
    cfg.eta_cap_relax = options.eta_cap_relax;
    // 1/sqrt(T), clamped so overridden rounds still satisfy the (possibly
    // relaxed) stepsize cap.
    let cap = options.eta_cap_relax * cfg.eta_cap(dims.discount);
    cfg.eta = (1.0 / (cfg.iterations as f64).sqrt()).min(cap);
    cfg.checkpoints = options.checkpoints;
    // Distinct solver streams per round, spread out so adjacent base seeds
    // cannot collide across rounds.
    cfg.seed = options.seed ^ ((round as u64) << 32);
    cfg.validate(dims.discount)?;
    Ok(cfg)
}

/// Run the doubling driver against a single fresh-tuple source.
///
/// `epsilon_prime` is the overall accuracy target; each round runs at
/// `epsilon'/15`. The source must serve every round's reference batch,
/// iterations, and certification slice; a shared cursor guarantees the
/// slices are disjoint.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_dpdl<S: SampleSource + ?Sized>(
    dims: &ModelDims,
    source: &mut S,
    epsilon_prime: f64,
    delta: f64,
    phi: f64,
    psi_init: f64,
    rho0: &[f64],
    options: &AdaptiveOptions,
    tol: &NumericConfig,
) -> AdaptiveResult {
    let mut trace = AdaptiveTrace {
        rounds: Vec::new(),
        exit: ExitReason::Aborted {
            message: "driver never ran".into(),
        },
        final_policy: None,
    };
    let fail = |mut trace: AdaptiveTrace, error: Error| -> AdaptiveResult {
        trace.exit = match &error {
            Error::RoundCapExceeded { cap } => ExitReason::RoundCapExceeded { cap: *cap },
            other => ExitReason::Aborted {
                message: other.to_string(),
            },
        };
        Err(Box::new(AdaptiveFailure { error, trace }))
    };

    if psi_init < 1.0 || !psi_init.is_finite() {
        return fail(
            trace,
            Error::Config(format!("psi_init must be finite and >= 1, got {psi_init}")),
        );
    }
    if options.round_cap == 0 {
        return fail(trace, Error::Config("round_cap must be >= 1".into()));
    }
    let epsilon = round_epsilon(epsilon_prime);

    let mut psi_k = psi_init;
    let mut prev_j: Option<f64> = None;
    for round in 1..=options.round_cap {
        let delta_k = round_delta(delta, round);
        let cfg = match round_config(epsilon, delta_k, psi_k, phi, dims, options, round) {
            Ok(c) => c,
            Err(e) => return fail(trace, e),
        };
        let report = match run_dpdl(dims, source, &cfg, rho0, tol) {
            Ok(r) => r,
            Err(e) => return fail(trace, e),
        };

        let n_v = options
            .n_v
            .unwrap_or_else(|| required_n_v(dims, psi_k, phi, epsilon, delta_k));
        let mut params = VerifyParams::new(epsilon, cfg.kappa, phi);
        params.flow_multiplier = options.flow_multiplier;
        params.utility_multiplier = options.utility_multiplier;
        let vreport = match verify(
            &report.x_bar,
            &report.mu_hat,
            dims,
            source,
            n_v,
            &params,
            rho0,
            tol,
        ) {
            Ok(v) => v,
            Err(e) => return fail(trace, e),
        };

        let j_k = vreport.passed.then_some(vreport.j_hat);
        trace.rounds.push(AdaptiveRound {
            round,
            psi: psi_k,
            epsilon,
            delta: delta_k,
            passed: vreport.passed,
            j_hat: j_k,
            verify: vreport,
            tuples_used: report.consumed + n_v,
        });

        // Exit once two consecutive rounds certify and the improvement has
        // flattened; the comparison is only meaningful when both certified.
        if let (Some(jk), Some(jp)) = (j_k, prev_j) {
            if jk - jp <= options.exit_improvement * epsilon {
                trace.exit = ExitReason::Converged { round };
                trace.final_policy = Some(report.policy.clone());
                return Ok(AdaptiveOutcome { trace, report });
            }
        }
        prev_j = j_k;
        psi_k *= 2.0;
    }
    let cap = options.round_cap;
    fail(trace, Error::RoundCapExceeded { cap })
}
