//! Exact ground-truth oracles for the occupancy LP and derived quantities.
//!
//! Everything here is simulator-side: the optimal reward and occupancy, the
//! concentrability coefficient of a reference distribution, the Slater
//! margin, and the deviation-restricted saddle value used as the duality-gap
//! yardstick. All queries reduce to small dense LPs solved by [`simplex`].

pub mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{l1_norm, CmdpModel, FlowMatrix, OccupancyMeasure};
use crate::tol::NumericConfig;

pub use simplex::{LinearProgram, LpResult, Sense};

/// Exact reference quantities for a model and a reference distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub opt_reward: f64,
    pub opt_occupancy: OccupancyMeasure,
    /// Minimum deviation bound over optimal policies; `+inf` when no optimal
    /// policy is covered by the reference distribution.
    #[serde(with = "float_maybe_inf")]
    pub concentrability: f64,
    pub slater_margin: f64,
    /// `N = min(|S| + I, |S||A|)`.
    pub effective_sparsity: usize,
}

/// Optimal value and a basic optimal occupancy of the safe-policy LP.
#[derive(Debug, Clone)]
pub struct CmdpSolution {
    pub opt_reward: f64,
    pub opt_occupancy: OccupancyMeasure,
}

/// Solve `max <r, nu>` over flow-feasible occupancies with `<u_i, nu> >= 0`.
///
/// Errors with [`Error::NoSafePolicy`] when the constraint set is empty.
pub fn solve_cmdp(model: &CmdpModel, tol: &NumericConfig) -> Result<CmdpSolution> {
    let dims = model.dims();
    let n = dims.num_pairs();
    let fm = FlowMatrix::of_model(model);

    let mut lp = LinearProgram::new(n);
    lp.set_objective(true, model.reward().to_vec())?;
    for s in 0..dims.num_states {
        let coeffs: Vec<f64> = (0..n).map(|i| fm.get(i, s)).collect();
        lp.add_row(coeffs, Sense::Eq, model.rho0()[s])?;
    }
    for i in 0..dims.num_constraints {
        lp.add_row(model.utility(i).to_vec(), Sense::Ge, 0.0)?;
    }

    match simplex::solve_lp(&lp, tol)? {
        LpResult::Optimal { value, primal } => {
            let nu = OccupancyMeasure::new(
                dims.num_states,
                dims.num_actions,
                primal.iter().map(|v| v.max(0.0)).collect(),
            )?;
            Ok(CmdpSolution {
                opt_reward: value,
                opt_occupancy: nu,
            })
        }
        LpResult::Infeasible => Err(Error::NoSafePolicy),
        LpResult::Unbounded => Err(Error::LpInternal(
            "occupancy polytope is bounded; unbounded status is impossible".into(),
        )),
    }
}

/// Concentrability coefficient of `mu`: the smallest `t` such that some
/// optimal occupancy `nu` satisfies `(1-gamma) nu <= t mu` per coordinate and
/// `sum (1-gamma) nu / mu <= N t`, with `nu` forced to zero off the support
/// of `mu`. Returns `+inf` when no optimal policy is covered.
pub fn concentrability(model: &CmdpModel, mu: &[f64], tol: &NumericConfig) -> Result<f64> {
    let opt = solve_cmdp(model, tol)?;
    concentrability_with(model, mu, opt.opt_reward, tol)
}

/// Same as [`concentrability`] with the optimal reward already known.
pub fn concentrability_with(
    model: &CmdpModel,
    mu: &[f64],
    opt_reward: f64,
    tol: &NumericConfig,
) -> Result<f64> {
    let dims = model.dims();
    let n = dims.num_pairs();
    validate_distribution(mu, n, tol)?;
    let fm = FlowMatrix::of_model(model);
    let one_minus_gamma = 1.0 - dims.discount;
    let big_n = dims.effective_sparsity() as f64;

    // Variables: nu (n entries) then t.
    let mut lp = LinearProgram::new(n + 1);
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    lp.set_objective(false, obj)?;
    for s in 0..dims.num_states {
        let mut coeffs = vec![0.0; n + 1];
        for (i, c) in coeffs.iter_mut().take(n).enumerate() {
            *c = fm.get(i, s);
        }
        lp.add_row(coeffs, Sense::Eq, model.rho0()[s])?;
    }
    for i in 0..dims.num_constraints {
        let mut coeffs = vec![0.0; n + 1];
        coeffs[..n].copy_from_slice(model.utility(i));
        lp.add_row(coeffs, Sense::Ge, 0.0)?;
    }
    // Optimal face, relaxed by the feasibility tolerance to absorb simplex noise.
    let mut coeffs = vec![0.0; n + 1];
    coeffs[..n].copy_from_slice(model.reward());
    lp.add_row(coeffs, Sense::Ge, opt_reward - tol.lp_feasibility)?;

    let mut aggregate = vec![0.0; n + 1];
    for i in 0..n {
        if mu[i] > 0.0 {
            lp.add_sparse_row(
                &[(i, one_minus_gamma), (n, -mu[i])],
                Sense::Le,
                0.0,
            )?;
            aggregate[i] = one_minus_gamma / mu[i];
        } else {
            lp.set_upper(i, 0.0);
        }
    }
    aggregate[n] = -big_n;
    lp.add_row(aggregate, Sense::Le, 0.0)?;

    match simplex::solve_lp(&lp, tol)? {
        LpResult::Optimal { value, .. } => Ok(value),
        LpResult::Infeasible => Ok(f64::INFINITY),
        LpResult::Unbounded => Err(Error::LpInternal(
            "concentrability objective is bounded below by one".into(),
        )),
    }
}

/// Slater margin `phi = (1-gamma) max_nu min_i <u_i, nu>` over flow-feasible
/// occupancies; `1` by convention when there are no constraints.
pub fn slater_margin(model: &CmdpModel, tol: &NumericConfig) -> Result<f64> {
    if model.num_constraints() == 0 {
        return Ok(1.0);
    }
    slater_lp(model, None, tol)
}

/// Slater margin restricted to occupancies within deviation bound `psi` of
/// `mu`. Exposed for diagnostics; the pipeline feeds the global margin to
/// every downstream formula.
pub fn slater_margin_restricted(
    model: &CmdpModel,
    mu: &[f64],
    psi: f64,
    tol: &NumericConfig,
) -> Result<f64> {
    if model.num_constraints() == 0 {
        return Ok(1.0);
    }
    validate_distribution(mu, model.dims().num_pairs(), tol)?;
    slater_lp(model, Some((mu, psi)), tol)
}

fn slater_lp(model: &CmdpModel, restrict: Option<(&[f64], f64)>, tol: &NumericConfig) -> Result<f64> {
    let dims = model.dims();
    let n = dims.num_pairs();
    let fm = FlowMatrix::of_model(model);
    let one_minus_gamma = 1.0 - dims.discount;

    // Variables: nu (n entries) then the epigraph margin m (free).
    let mut lp = LinearProgram::new(n + 1);
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    lp.set_objective(true, obj)?;
    lp.set_free(n);
    for s in 0..dims.num_states {
        let mut coeffs = vec![0.0; n + 1];
        for (i, c) in coeffs.iter_mut().take(n).enumerate() {
            *c = fm.get(i, s);
        }
        lp.add_row(coeffs, Sense::Eq, model.rho0()[s])?;
    }
    for i in 0..dims.num_constraints {
        let mut coeffs = vec![0.0; n + 1];
        coeffs[..n].copy_from_slice(model.utility(i));
        coeffs[n] = -1.0;
        lp.add_row(coeffs, Sense::Ge, 0.0)?;
    }
    if let Some((mu, psi)) = restrict {
        let big_n = dims.effective_sparsity() as f64;
        let mut aggregate = vec![0.0; n + 1];
        for i in 0..n {
            if mu[i] > 0.0 {
                lp.set_upper(i, psi * mu[i] / one_minus_gamma);
                aggregate[i] = one_minus_gamma / mu[i];
            } else {
                lp.set_upper(i, 0.0);
            }
        }
        lp.add_row(aggregate, Sense::Le, big_n * psi)?;
    }

    match simplex::solve_lp(&lp, tol)? {
        LpResult::Optimal { value, .. } => Ok(one_minus_gamma * value),
        LpResult::Infeasible => Err(Error::LpInternal(
            "flow polytope is nonempty; infeasible status is impossible".into(),
        )),
        LpResult::Unbounded => Err(Error::LpInternal(
            "slater margin is bounded by the utility range".into(),
        )),
    }
}

/// Penalty radii of the reweighted saddle problem.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyRadii {
    pub r_v: f64,
    pub r_lambda: f64,
}

impl PenaltyRadii {
    pub fn new(phi: f64, gamma: f64) -> Self {
        PenaltyRadii {
            r_v: 8.0 * (1.0 + 2.0 / phi) / (1.0 - gamma),
            r_lambda: 8.0 / phi,
        }
    }
}

/// Restricted saddle value `j(psi) = max_x J_kappa(x)` over the deviation-
/// controlled set `X`, computed by an epigraph LP over the l1 flow penalty
/// and the negative-part max penalty.
///
/// `mu` is the true reference distribution (forms `W = diag(mu / mu_hat)`),
/// `mu_hat` the floored estimate defining `X`.
pub fn restricted_value(
    model: &CmdpModel,
    mu: &[f64],
    mu_hat: &[f64],
    psi: f64,
    kappa: f64,
    phi: f64,
    tol: &NumericConfig,
) -> Result<f64> {
    let dims = model.dims();
    let n = dims.num_pairs();
    validate_distribution(mu, n, tol)?;
    if mu_hat.len() != n {
        return Err(Error::Dimension("mu_hat does not match model".into()));
    }
    if mu_hat.iter().any(|&m| m <= 0.0) {
        return Err(Error::InvalidArgument("mu_hat must be strictly positive".into()));
    }
    if psi < 1.0 {
        return Err(Error::InvalidArgument(format!("psi must be >= 1, got {psi}")));
    }
    if kappa < 0.0 {
        return Err(Error::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
    }

    let fm = FlowMatrix::of_model(model);
    let gamma = dims.discount;
    let one_minus_gamma = 1.0 - gamma;
    let radii = PenaltyRadii::new(phi, gamma);
    let w: Vec<f64> = (0..n).map(|i| mu[i] / mu_hat[i]).collect();
    let num_i = dims.num_constraints;
    let ns = dims.num_states;

    // Variables: x (n), e (ns, l1 epigraph), m (1, only when constraints exist).
    let nv = n + ns + usize::from(num_i > 0);
    let mut lp = LinearProgram::new(nv);
    let mut obj = vec![0.0; nv];
    for i in 0..n {
        obj[i] = w[i] * model.reward()[i];
    }
    for s in 0..ns {
        obj[n + s] = -radii.r_v;
    }
    if num_i > 0 {
        obj[nv - 1] = -radii.r_lambda;
    }
    lp.set_objective(true, obj)?;

    for s in 0..ns {
        let mut plus = vec![0.0; nv];
        let mut minus = vec![0.0; nv];
        for i in 0..n {
            let c = w[i] * fm.get(i, s);
            plus[i] = c;
            minus[i] = -c;
        }
        plus[n + s] = -1.0;
        minus[n + s] = -1.0;
        lp.add_row(plus, Sense::Le, model.rho0()[s])?;
        lp.add_row(minus, Sense::Le, -model.rho0()[s])?;
    }
    for k in 0..num_i {
        let mut coeffs = vec![0.0; nv];
        let u = model.utility(k);
        for i in 0..n {
            coeffs[i] = -w[i] * (u[i] - one_minus_gamma * kappa);
        }
        coeffs[nv - 1] = -1.0;
        lp.add_row(coeffs, Sense::Le, 0.0)?;
    }
    // Deviation caps on x.
    let big_n = dims.effective_sparsity() as f64;
    let mut ratio_row = vec![0.0; nv];
    let mut mass_row = vec![0.0; nv];
    for i in 0..n {
        lp.set_upper(i, psi * mu_hat[i] / one_minus_gamma);
        ratio_row[i] = 1.0 / mu_hat[i];
        mass_row[i] = 1.0;
    }
    lp.add_row(ratio_row, Sense::Le, big_n * psi / one_minus_gamma)?;
    lp.add_row(mass_row, Sense::Le, 4.0 / one_minus_gamma)?;

    match simplex::solve_lp(&lp, tol)? {
        LpResult::Optimal { value, .. } => Ok(value),
        LpResult::Infeasible => Err(Error::LpInternal(
            "x = 0 is always feasible; infeasible status is impossible".into(),
        )),
        LpResult::Unbounded => Err(Error::LpInternal(
            "the deviation set is bounded; unbounded status is impossible".into(),
        )),
    }
}

/// Closed-form `J_kappa(x) = <r, Wx> - R_V ||A^T Wx - rho0||_1
/// - R_Lambda ||[U_kappa W x]_-||_inf` for a concrete `x`.
pub fn j_kappa(
    model: &CmdpModel,
    mu: &[f64],
    mu_hat: &[f64],
    kappa: f64,
    phi: f64,
    x: &[f64],
) -> Result<f64> {
    let dims = model.dims();
    let n = dims.num_pairs();
    if mu.len() != n || mu_hat.len() != n || x.len() != n {
        return Err(Error::Dimension("mu, mu_hat, x must match the model".into()));
    }
    let one_minus_gamma = 1.0 - dims.discount;
    let radii = PenaltyRadii::new(phi, dims.discount);
    let wx: Vec<f64> = (0..n).map(|i| mu[i] / mu_hat[i] * x[i]).collect();

    let reward: f64 = wx.iter().zip(model.reward()).map(|(v, r)| v * r).sum();
    let fm = FlowMatrix::of_model(model);
    let mut flow = fm.transpose_apply(&wx);
    for s in 0..dims.num_states {
        flow[s] -= model.rho0()[s];
    }
    let mut worst_neg = 0.0f64;
    for k in 0..dims.num_constraints {
        let u = model.utility(k);
        let val: f64 = wx
            .iter()
            .zip(u)
            .map(|(v, ui)| v * (ui - one_minus_gamma * kappa))
            .sum();
        worst_neg = worst_neg.max(-val);
    }
    Ok(reward - radii.r_v * l1_norm(&flow) - radii.r_lambda * worst_neg)
}

/// Compute every ground-truth field for `model` against reference `mu`.
pub fn ground_truth(model: &CmdpModel, mu: &[f64], tol: &NumericConfig) -> Result<GroundTruth> {
    let opt = solve_cmdp(model, tol)?;
    let conc = concentrability_with(model, mu, opt.opt_reward, tol)?;
    let slater = slater_margin(model, tol)?;
    Ok(GroundTruth {
        opt_reward: opt.opt_reward,
        opt_occupancy: opt.opt_occupancy,
        concentrability: conc,
        slater_margin: slater,
        effective_sparsity: model.dims().effective_sparsity(),
    })
}

pub(crate) fn validate_distribution(mu: &[f64], n: usize, tol: &NumericConfig) -> Result<()> {
    if mu.len() != n {
        return Err(Error::Dimension(format!(
            "distribution has {} entries, expected {n}",
            mu.len()
        )));
    }
    if mu.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidArgument("distribution entries must be >= 0".into()));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > tol.stochastic_row.max(1e-9) {
        return Err(Error::InvalidArgument(format!("distribution sums to {sum}")));
    }
    Ok(())
}

/// Serialize possibly-infinite floats as `null`.
mod float_maybe_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
