//! Deviation-controlled primal-dual learning: the stochastic saddle-point
//! solver that turns an offline dataset into a policy.
//!
//! Submodules: [`gradient`] builds the three stochastic estimators,
//! [`xprox`] solves the constrained KL-prox subproblem for the primal
//! variable, and [`runner`] drives the full iteration loop.

pub mod gradient;
pub mod runner;
pub mod xprox;

pub use runner::run_dpdl;

use serde::{Deserialize, Serialize};

use crate::dataset::SampleSource;
use crate::error::{Error, Result};
use crate::model::ModelDims;

/// Radii and caps of the three feasible sets.
///
/// The dual value ball is `||V||_inf <= R_V`, the multiplier set is
/// `{lambda >= 0, ||lambda||_1 <= R_Lambda}`, and the primal set X caps the
/// importance ratios `x/mu_hat` per coordinate and in aggregate plus the
/// total mass of `x`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeasibleRegions {
    pub psi: f64,
    pub r_v: f64,
    pub r_lambda: f64,
    /// Cap on each `x(s,a)/mu_hat(s,a)`: `psi/(1-gamma)`.
    pub x_cap_per_coord: f64,
    /// Cap on `sum x/mu_hat`: `N psi/(1-gamma)`.
    pub x_cap_aggregate: f64,
    /// Cap on `sum x`: `4/(1-gamma)`.
    pub x_cap_mass: f64,
}

impl FeasibleRegions {
    pub fn new(psi: f64, phi: f64, dims: &ModelDims) -> Result<Self> {
        if psi < 1.0 {
            return Err(Error::InvalidArgument(format!("psi must be >= 1, got {psi}")));
        }
        if phi <= 0.0 {
            return Err(Error::InvalidArgument(format!("phi must be > 0, got {phi}")));
        }
        let one_minus_gamma = 1.0 - dims.discount;
        let big_n = dims.effective_sparsity() as f64;
        Ok(FeasibleRegions {
            psi,
            r_v: 8.0 * (1.0 + 2.0 / phi) / one_minus_gamma,
            r_lambda: 8.0 / phi,
            x_cap_per_coord: psi / one_minus_gamma,
            x_cap_aggregate: big_n * psi / one_minus_gamma,
            x_cap_mass: 4.0 / one_minus_gamma,
        })
    }
}

/// Full parameterization of one DPDL run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpdlConfig {
    /// Iteration count T.
    pub iterations: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub psi: f64,
    pub phi: f64,
    /// Conservative constraint shift.
    pub kappa: f64,
    /// Stepsize, constant across iterations.
    pub eta: f64,
    pub alpha_v: f64,
    pub alpha_lambda: f64,
    pub alpha_x: f64,
    /// Reference-estimation batch N_e.
    pub estimation_samples: usize,
    /// Floor applied to empirical frequencies.
    pub varsigma: f64,
    pub seed: u64,
    /// Multiplier on the stepsize cap. 1 enforces the theoretical bound
    /// `eta <= (1/2) min(alpha_lambda/M_lambda, alpha_x/M_x)`; larger values
    /// admit deliberately aggressive desk-scale schedules.
    pub eta_cap_relax: f64,
    /// Number of checkpoint rows recorded along the run.
    pub checkpoints: usize,
}

impl DpdlConfig {
    /// Stepsize cap `(1/2) min(alpha_lambda/M_lambda, alpha_x/M_x)` with
    /// `M_lambda = 2 psi/(1-gamma)` and `M_x = 64/(phi (1-gamma) varsigma)`.
    pub fn eta_cap(&self, gamma: f64) -> f64 {
        let one_minus_gamma = 1.0 - gamma;
        let m_lambda = 2.0 * self.psi / one_minus_gamma;
        let m_x = 64.0 / (self.phi * one_minus_gamma * self.varsigma);
        0.5 * (self.alpha_lambda / m_lambda).min(self.alpha_x / m_x)
    }

    pub fn validate(&self, gamma: f64) -> Result<()> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("discount {gamma} outside [0, 1)")));
        }
        let positive = [
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("phi", self.phi),
            ("eta", self.eta),
            ("alpha_v", self.alpha_v),
            ("alpha_lambda", self.alpha_lambda),
            ("alpha_x", self.alpha_x),
            ("varsigma", self.varsigma),
            ("eta_cap_relax", self.eta_cap_relax),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.delta >= 1.0 {
            return Err(Error::Config(format!("delta must be < 1, got {}", self.delta)));
        }
        if self.psi < 1.0 {
            return Err(Error::Config(format!("psi must be >= 1, got {}", self.psi)));
        }
        if self.kappa < 0.0 {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.estimation_samples == 0 {
            return Err(Error::Config("estimation_samples must be >= 1".into()));
        }
        if self.checkpoints == 0 {
            return Err(Error::Config("checkpoints must be >= 1".into()));
        }
        let cap = self.eta_cap_relax * self.eta_cap(gamma);
        if self.eta > cap * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "eta = {:.6e} exceeds the stepsize cap {:.6e} \
                 (= eta_cap_relax * (1/2) min(alpha_lambda/M_lambda, alpha_x/M_x)); \
                 raise T, raise varsigma, or relax the cap explicitly",
                self.eta, cap
            )));
        }
        Ok(())
    }
}

/// Largest admissible accuracy target: `epsilon <= 1/(10(1-gamma))`.
pub fn epsilon_limit(gamma: f64) -> f64 {
    1.0 / (10.0 * (1.0 - gamma))
}

pub const DEFAULT_BUDGET_MULTIPLIER: f64 = 1.0;
pub const DEFAULT_CHECKPOINTS: usize = 100;

/// Fill a [`DpdlConfig`] from the theoretical schedule:
/// `kappa = 5 phi epsilon`, `alpha_lambda = (1/(1-gamma)) sqrt(psi/log I)`,
/// `alpha_V = phi sqrt(psi/|S|)`, `alpha_x = (1/(phi(1-gamma))) sqrt(N psi/log psi)`,
/// `varsigma = phi (1-gamma)^2 eps_e/(2 N psi)` and
/// `N_e = ceil(512 N psi/(phi^2 (1-gamma)^4 eps_e^2) * log(6|S||A|/delta))`
/// with `eps_e = epsilon/100`; `log I` is read as `log(max(I,2))` and
/// `log psi` as `log(max(psi, e))`.
///
/// `T` defaults to the smallest count satisfying the stepsize cap, times
/// [`DEFAULT_BUDGET_MULTIPLIER`]; `eta = 1/sqrt(T)`.
pub fn default_schedule(
    epsilon: f64,
    delta: f64,
    psi: f64,
    phi: f64,
    dims: &ModelDims,
) -> Result<DpdlConfig> {
    default_schedule_with_budget(epsilon, delta, psi, phi, dims, DEFAULT_BUDGET_MULTIPLIER)
}

/// [`default_schedule`] with an explicit budget multiplier on the minimal
/// cap-satisfying `T`.
pub fn default_schedule_with_budget(
    epsilon: f64,
    delta: f64,
    psi: f64,
    phi: f64,
    dims: &ModelDims,
    budget: f64,
) -> Result<DpdlConfig> {
    let gamma = dims.discount;
    let limit = epsilon_limit(gamma);
    if !(epsilon > 0.0 && epsilon <= limit) {
        return Err(Error::Config(format!(
            "epsilon = {epsilon} outside (0, 1/(10(1-gamma))] = (0, {limit}]"
        )));
    }
    if psi < 1.0 || phi <= 0.0 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "require psi >= 1, phi > 0, delta in (0,1); got psi={psi}, phi={phi}, delta={delta}"
        )));
    }
    if budget < 1.0 {
        return Err(Error::Config(format!("budget multiplier must be >= 1, got {budget}")));
    }
    let one_minus_gamma = 1.0 - gamma;
    let big_n = dims.effective_sparsity() as f64;
    let num_pairs = dims.num_pairs() as f64;
    let log_i = (dims.num_constraints.max(2) as f64).ln();
    let log_psi = psi.max(std::f64::consts::E).ln();

    let eps_e = epsilon / 100.0;
    let varsigma = phi * one_minus_gamma.powi(2) * eps_e / (2.0 * big_n * psi);
    let n_e = (512.0 * big_n * psi / (phi.powi(2) * one_minus_gamma.powi(4) * eps_e.powi(2))
        * (6.0 * num_pairs / delta).ln())
    .ceil();

    let mut config = DpdlConfig {
        iterations: 0,
        epsilon,
        delta,
        psi,
        phi,
        kappa: 5.0 * phi * epsilon,
        eta: 0.0,
        alpha_v: phi * (psi / dims.num_states as f64).sqrt(),
        alpha_lambda: (psi / log_i).sqrt() / one_minus_gamma,
        alpha_x: (big_n * psi / log_psi).sqrt() / (phi * one_minus_gamma),
        estimation_samples: saturating_usize(n_e),
        varsigma,
        seed: 0,
        eta_cap_relax: 1.0,
        checkpoints: DEFAULT_CHECKPOINTS,
    };
    let cap = config.eta_cap(gamma);
    let t_min = (1.0 / cap.powi(2)).ceil().max(1.0);
    config.iterations = saturating_usize(budget * t_min);
    config.eta = 1.0 / (config.iterations as f64).sqrt();
    config.validate(gamma)?;
    Ok(config)
}

/// Iteration-count heuristic `T = ceil(N psi log(psi |S||A| max(I,1)/delta)
/// / (phi^2 (1-gamma)^4 epsilon^2))`, the theoretical rate with its unknown
/// leading constant set to one. Advisory only; the schedule itself sizes `T`
/// from the stepsize cap.
pub fn heuristic_iterations(
    epsilon: f64,
    delta: f64,
    psi: f64,
    phi: f64,
    dims: &ModelDims,
) -> usize {
    let one_minus_gamma = 1.0 - dims.discount;
    let big_n = dims.effective_sparsity() as f64;
    let iota = (psi * dims.num_pairs() as f64 * dims.num_constraints.max(1) as f64 / delta).ln();
    saturating_usize(
        (big_n * psi * iota / (phi.powi(2) * one_minus_gamma.powi(4) * epsilon.powi(2))).ceil(),
    )
}

pub(crate) fn saturating_usize(v: f64) -> usize {
    if v >= usize::MAX as f64 {
        usize::MAX
    } else {
        v.max(0.0) as usize
    }
}

/// Floored empirical reference distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceEstimate {
    /// `mu_hat(s,a) = max(counts(s,a)/n_e, varsigma)`.
    pub mu_hat: Vec<f64>,
    pub counts: Vec<u64>,
    pub varsigma: f64,
    pub n_e: usize,
}

/// Count the first `n_e` tuples of `source` into an empirical distribution,
/// floored at `varsigma`. The consumed tuples are gone from the source, so
/// downstream phases automatically draw fresh samples.
pub fn estimate_reference<S: SampleSource + ?Sized>(
    source: &mut S,
    dims: &ModelDims,
    n_e: usize,
    varsigma: f64,
) -> Result<ReferenceEstimate> {
    if n_e == 0 {
        return Err(Error::InvalidArgument("estimation batch must be >= 1".into()));
    }
    if !(varsigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "varsigma must be > 0, got {varsigma}"
        )));
    }
    if let Some(rem) = source.remaining() {
        if rem < n_e {
            return Err(Error::InsufficientData {
                required: n_e,
                available: rem,
            });
        }
    }
    let mut counts = vec![0u64; dims.num_pairs()];
    for _ in 0..n_e {
        let tuple = source.next_tuple()?;
        counts[dims.pair_index(tuple.s, tuple.a)] += 1;
    }
    let mu_hat = counts
        .iter()
        .map(|&c| (c as f64 / n_e as f64).max(varsigma))
        .collect();
    Ok(ReferenceEstimate {
        mu_hat,
        counts,
        varsigma,
        n_e,
    })
}

/// Compensated accumulator for the running iterate averages; plain summation
/// would drift over 10^7 additions.
#[derive(Debug, Clone)]
pub(crate) struct KahanVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanVec {
    pub(crate) fn zeros(n: usize) -> Self {
        KahanVec {
            sum: vec![0.0; n],
            comp: vec![0.0; n],
        }
    }

    pub(crate) fn add(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.sum.len());
        for (i, &v) in values.iter().enumerate() {
            let y = v - self.comp[i];
            let t = self.sum[i] + y;
            self.comp[i] = (t - self.sum[i]) - y;
            self.sum[i] = t;
        }
    }

    pub(crate) fn mean(&self, count: usize) -> Vec<f64> {
        let c = count.max(1) as f64;
        self.sum.iter().map(|&s| s / c).collect()
    }
}

/// Live iterates plus running averages of one solver run.
#[derive(Debug, Clone)]
pub struct DpdlState {
    /// Value iterate, `||v||_inf <= R_V`.
    pub v: Vec<f64>,
    /// Multiplier iterate in log scale; kept in logs so long one-sided
    /// gradient streaks cannot underflow a coordinate to literal zero.
    pub lambda_log: Vec<f64>,
    /// `exp(lambda_log)`, refreshed after every multiplier update.
    pub lambda: Vec<f64>,
    /// Primal iterate, strictly positive, inside X.
    pub x: Vec<f64>,
    /// Completed iterations.
    pub t: usize,
    v_avg: KahanVec,
    lambda_avg: KahanVec,
    x_avg: KahanVec,
}

impl DpdlState {
    /// Initial point: `V = 0`, `lambda = 1/(phi I)`, and
    /// `x = (N/(|S||A|)) mu_hat/(1-gamma)`, which sits inside X for any
    /// floored reference estimate.
    pub fn init(dims: &ModelDims, mu_hat: &[f64], phi: f64) -> Result<Self> {
        if mu_hat.len() != dims.num_pairs() {
            return Err(Error::Dimension("mu_hat does not match model dims".into()));
        }
        let i = dims.num_constraints;
        let lambda0 = if i == 0 { 0.0 } else { 1.0 / (phi * i as f64) };
        let scale = dims.effective_sparsity() as f64
            / (dims.num_pairs() as f64 * (1.0 - dims.discount));
        Ok(DpdlState {
            v: vec![0.0; dims.num_states],
            lambda_log: vec![lambda0.ln(); i],
            lambda: vec![lambda0; i],
            x: mu_hat.iter().map(|&m| scale * m).collect(),
            t: 0,
            v_avg: KahanVec::zeros(dims.num_states),
            lambda_avg: KahanVec::zeros(i),
            x_avg: KahanVec::zeros(dims.num_pairs()),
        })
    }

    /// Fold the current iterates into the running averages.
    pub fn accumulate(&mut self) {
        self.v_avg.add(&self.v);
        self.lambda_avg.add(&self.lambda);
        self.x_avg.add(&self.x);
        self.t += 1;
    }

    /// Averages over the iterates accumulated so far; the initial point when
    /// nothing was accumulated (T = 0).
    pub fn averages(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        if self.t == 0 {
            return (self.v.clone(), self.lambda.clone(), self.x.clone());
        }
        (
            self.v_avg.mean(self.t),
            self.lambda_avg.mean(self.t),
            self.x_avg.mean(self.t),
        )
    }

    /// Assert membership of all three iterates in their feasible sets.
    pub fn check_membership(
        &self,
        regions: &FeasibleRegions,
        mu_hat: &[f64],
        slack: f64,
    ) -> Result<()> {
        let fail = |what: String| Err(Error::InvalidArgument(format!("state left its set: {what}")));
        for &v in &self.v {
            if v.abs() > regions.r_v + slack {
                return fail(format!("|V| = {} > R_V = {}", v.abs(), regions.r_v));
            }
        }
        let l1: f64 = self.lambda.iter().sum();
        if l1 > regions.r_lambda + slack {
            return fail(format!("||lambda||_1 = {l1} > {}", regions.r_lambda));
        }
        if self.lambda.iter().any(|&l| l < 0.0) {
            return fail("negative multiplier".into());
        }
        let mut mass = 0.0;
        let mut ratio = 0.0;
        for (i, &xi) in self.x.iter().enumerate() {
            if !(xi > 0.0) {
                return fail(format!("x[{i}] = {xi} not strictly positive"));
            }
            if xi / mu_hat[i] > regions.x_cap_per_coord + slack {
                return fail(format!(
                    "x[{i}]/mu_hat = {} > {}",
                    xi / mu_hat[i],
                    regions.x_cap_per_coord
                ));
            }
            mass += xi;
            ratio += xi / mu_hat[i];
        }
        if mass > regions.x_cap_mass + slack {
            return fail(format!("sum x = {mass} > {}", regions.x_cap_mass));
        }
        if ratio > regions.x_cap_aggregate + slack {
            return fail(format!("sum x/mu_hat = {ratio} > {}", regions.x_cap_aggregate));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sample_sync, SampleSource};
    use crate::model::CmdpModel;
    use crate::tol::NumericConfig;

    fn dims() -> ModelDims {
        ModelDims {
            num_states: 6,
            num_actions: 3,
            num_constraints: 2,
            discount: 0.9,
        }
    }

    #[test]
    fn schedule_matches_hand_formulas() {
        let d = dims();
        let (eps, delta, psi, phi) = (0.01, 0.05, 2.0, 0.5);
        let cfg = default_schedule(eps, delta, psi, phi, &d).unwrap();
        assert!((cfg.kappa - 5.0 * 0.5 * 0.01).abs() < 1e-15);
        assert!((cfg.alpha_v - 0.5 * (2.0f64 / 6.0).sqrt()).abs() < 1e-15);
        assert!((cfg.alpha_lambda - 10.0 * (2.0f64 / 2.0f64.ln()).sqrt()).abs() < 1e-12);
        // N = min(6+2, 18) = 8; log psi = log(max(2, e)) = 1.
        let ax = (8.0f64 * 2.0 / 1.0).sqrt() / (0.5 * 0.1);
        assert!((cfg.alpha_x - ax).abs() < 1e-12, "{} vs {ax}", cfg.alpha_x);
        let eps_e = eps / 100.0;
        let omg = 1.0 - d.discount;
        let vs = 0.5 * omg.powi(2) * eps_e / (2.0 * 8.0 * 2.0);
        assert!((cfg.varsigma - vs).abs() < 1e-18);
        let ne = (512.0 * 8.0 * 2.0 / (0.25 * omg.powi(4) * eps_e.powi(2))
            * (6.0 * 18.0 / delta).ln())
        .ceil();
        // Compared with slack of one count plus a relative hair: powi is not
        // guaranteed correctly rounded, so recomputation can land one ulp
        // (and hence one ceil step) away.
        let got = cfg.estimation_samples as f64;
        assert!((got - ne).abs() <= 1.0 + 1e-9 * ne, "{got} vs {ne}");
        assert!((cfg.eta - 1.0 / (cfg.iterations as f64).sqrt()).abs() < 1e-15);
        cfg.validate(d.discount).unwrap();
    }

    #[test]
    fn schedule_iterations_sit_exactly_at_the_cap() {
        let d = dims();
        let cfg = default_schedule(0.01, 0.05, 2.0, 0.5, &d).unwrap();
        let cap = cfg.eta_cap(d.discount);
        assert!(cfg.eta <= cap * (1.0 + 1e-12));
        // T is the smallest count whose 1/sqrt(T) stepsize obeys the cap.
        let t_min = (1.0 / cap.powi(2)).ceil();
        assert_eq!(cfg.iterations as f64, t_min);
        // A noticeably smaller budget would break the cap.
        assert!(1.0 / (0.99 * t_min).sqrt() > cap);
    }

    #[test]
    fn schedule_rejects_out_of_range_epsilon() {
        let d = dims();
        let limit = epsilon_limit(d.discount);
        let err = default_schedule(limit * 1.01, 0.05, 2.0, 0.5, &d).unwrap_err();
        assert!(err.to_string().contains("1/(10(1-gamma))"), "{err}");
        assert!(default_schedule(limit, 0.05, 2.0, 0.5, &d).is_ok());
    }

    #[test]
    fn budget_multiplier_scales_iterations() {
        // Mild discount keeps the minimal T far from usize saturation.
        let d = ModelDims {
            num_states: 2,
            num_actions: 2,
            num_constraints: 1,
            discount: 0.5,
        };
        let base = default_schedule(0.1, 0.05, 2.0, 0.5, &d).unwrap();
        let scaled = default_schedule_with_budget(0.1, 0.05, 2.0, 0.5, &d, 9.0).unwrap();
        let ratio = scaled.iterations as f64 / base.iterations as f64;
        assert!((ratio - 9.0).abs() < 0.01, "ratio = {ratio}");
        assert!(heuristic_iterations(0.1, 0.05, 2.0, 0.5, &d) > 0);
    }

    #[test]
    fn validate_rejects_eta_above_cap_unless_relaxed() {
        let d = dims();
        let mut cfg = default_schedule(0.01, 0.05, 2.0, 0.5, &d).unwrap();
        cfg.eta *= 4.0;
        assert!(cfg.validate(d.discount).is_err());
        cfg.eta_cap_relax = 4.0;
        cfg.validate(d.discount).unwrap();
    }

    fn small_model() -> CmdpModel {
        let transition = vec![
            0.8, 0.2, // (s0, a0)
            0.2, 0.8, // (s0, a1)
            0.5, 0.5, // (s1, a0)
            1.0, 0.0, // (s1, a1)
        ];
        CmdpModel::new(
            2,
            2,
            0.5,
            transition,
            vec![1.0, 0.0, 0.5, 0.0],
            vec![0.1, -0.2, 0.3, 0.0],
            vec![0.5, 0.5],
            &NumericConfig::DEFAULT,
        )
        .unwrap()
    }

    #[test]
    fn reference_estimate_counts_and_floor() {
        let model = small_model();
        let data = sample_sync(&model, &[0.0, 1.0, 0.0, 0.0], 50, 3).unwrap();
        let mut cursor = data.cursor();
        let est = estimate_reference(&mut cursor, &model.dims(), 50, 0.01).unwrap();
        assert_eq!(est.counts, vec![0, 50, 0, 0]);
        assert_eq!(est.mu_hat[1], 1.0);
        for i in [0, 2, 3] {
            assert_eq!(est.mu_hat[i], 0.01, "floor active at unseen pair {i}");
        }
        assert_eq!(cursor.consumed(), 50, "estimation must use up its tuples");
    }

    #[test]
    fn reference_estimate_sum_bounds() {
        let model = small_model();
        let data = sample_sync(&model, &[0.4, 0.3, 0.2, 0.1], 1000, 9).unwrap();
        let varsigma = 0.05;
        let est =
            estimate_reference(&mut data.cursor(), &model.dims(), 1000, varsigma).unwrap();
        let raw: f64 = est
            .counts
            .iter()
            .map(|&c| c as f64 / est.n_e as f64)
            .sum();
        assert!((raw - 1.0).abs() < 1e-12);
        let total: f64 = est.mu_hat.iter().sum();
        assert!(total <= 1.0 + 4.0 * varsigma + 1e-12);
        for (i, &m) in est.mu_hat.iter().enumerate() {
            let freq = est.counts[i] as f64 / est.n_e as f64;
            assert_eq!(m, freq.max(varsigma));
        }
    }

    #[test]
    fn reference_estimate_requires_enough_tuples() {
        let model = small_model();
        let data = sample_sync(&model, &[0.25; 4], 10, 1).unwrap();
        match estimate_reference(&mut data.cursor(), &model.dims(), 11, 0.01) {
            Err(Error::InsufficientData { required, available }) => {
                assert_eq!((required, available), (11, 10));
            }
            other => panic!("expected InsufficientData, got {other:?}"),
        }
    }

    #[test]
    fn initial_state_sits_inside_all_regions() {
        let d = dims();
        let phi = 0.4;
        let regions = FeasibleRegions::new(1.0, phi, &d).unwrap();
        // Adversarial floored reference: a few heavy pairs, the rest floored.
        let mut mu_hat = vec![0.01; d.num_pairs()];
        mu_hat[0] = 0.5;
        mu_hat[5] = 0.45;
        let state = DpdlState::init(&d, &mu_hat, phi).unwrap();
        state.check_membership(&regions, &mu_hat, 1e-9).unwrap();
        assert_eq!(state.lambda, vec![1.0 / (phi * 2.0); 2]);
        assert!(state.lambda_log.iter().all(|l| l.is_finite()));
        let scale = 8.0 / (18.0 * 0.1);
        for (i, &xi) in state.x.iter().enumerate() {
            assert!((xi - scale * mu_hat[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn averages_return_initial_point_at_t_zero_and_true_mean_after() {
        let d = dims();
        let mu_hat = vec![1.0 / d.num_pairs() as f64; d.num_pairs()];
        let mut state = DpdlState::init(&d, &mu_hat, 0.4).unwrap();
        let (v0, l0, x0) = state.averages();
        assert_eq!(v0, state.v);
        assert_eq!(l0, state.lambda);
        assert_eq!(x0, state.x);

        state.accumulate();
        let first_x = state.x.clone();
        state.x.iter_mut().for_each(|v| *v *= 3.0);
        state.accumulate();
        let (_, _, x_bar) = state.averages();
        for (i, &xb) in x_bar.iter().enumerate() {
            assert!((xb - 2.0 * first_x[i]).abs() < 1e-15);
        }
        assert_eq!(state.t, 2);
    }

    #[test]
    fn kahan_average_survives_many_tiny_increments() {
        let mut acc = KahanVec::zeros(1);
        let n = 10_000_000usize;
        for _ in 0..n {
            acc.add(&[0.1]);
        }
        let mean = acc.mean(n)[0];
        assert!((mean - 0.1).abs() < 1e-15, "mean = {mean}");
    }

    #[test]
    fn membership_check_catches_escapes() {
        let d = dims();
        let mu_hat = vec![1.0 / d.num_pairs() as f64; d.num_pairs()];
        let regions = FeasibleRegions::new(1.0, 0.4, &d).unwrap();
        let base = DpdlState::init(&d, &mu_hat, 0.4).unwrap();

        let mut s = base.clone();
        s.v[0] = regions.r_v + 1.0;
        assert!(s.check_membership(&regions, &mu_hat, 1e-9).is_err());

        let mut s = base.clone();
        s.x[0] = 0.0;
        assert!(s.check_membership(&regions, &mu_hat, 1e-9).is_err());

        let mut s = base.clone();
        s.x[0] = mu_hat[0] * regions.x_cap_per_coord * 1.01;
        assert!(s.check_membership(&regions, &mu_hat, 1e-9).is_err());

        let mut s = base;
        s.lambda[0] = regions.r_lambda + 1.0;
        assert!(s.check_membership(&regions, &mu_hat, 1e-9).is_err());
    }
}
