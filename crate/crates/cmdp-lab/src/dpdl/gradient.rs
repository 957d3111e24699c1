//! Stochastic gradient estimators for the reweighted Lagrangian, plus their
//! closed-form expectations for diagnostics and unbiasedness testing.
//!
//! At a sample `(s0, s, a, s', r, u)` with ratio `x(s,a)/mu_hat(s,a)`:
//! `g_V = 1_{s0} + ratio (gamma 1_{s'} - 1_s)`,
//! `g_lambda = ratio * u^kappa`,
//! `g_x = (r - V(s) + gamma V(s') + <u^kappa, lambda>)/mu_hat(s,a)` at the
//! sampled pair only, where `u^kappa_i = u_i - (1-gamma) kappa`.

use crate::dataset::SampleTuple;
use crate::error::{Error, Result};
use crate::model::{CmdpModel, FlowMatrix, ModelDims};

/// The three estimators in index form; everything the update rules need
/// without materializing dense vectors.
#[derive(Debug, Clone)]
pub struct SparseGradients {
    pub s0: usize,
    pub s: usize,
    pub s_next: usize,
    /// Importance ratio `x(s,a)/mu_hat(s,a)`.
    pub ratio: f64,
    /// Shifted utilities `u^kappa` at the sampled pair.
    pub u_kappa: Vec<f64>,
    /// Coordinate of the single nonzero of `g_x` and its value.
    pub x_index: usize,
    pub x_value: f64,
}

impl SparseGradients {
    /// `g_V` component at state `s`: sums the up-to-three one-hot terms.
    pub fn g_v_at(&self, s: usize, gamma: f64) -> f64 {
        let mut g = 0.0;
        if s == self.s0 {
            g += 1.0;
        }
        if s == self.s_next {
            g += gamma * self.ratio;
        }
        if s == self.s {
            g -= self.ratio;
        }
        g
    }

    /// `g_lambda` component for constraint `i`.
    pub fn g_lambda_at(&self, i: usize) -> f64 {
        self.ratio * self.u_kappa[i]
    }
}

/// Build the estimators at the current iterate. The sample must carry its
/// initial-state draw (asynchronous sources leave it to the caller to fill).
pub fn sparse_gradients(
    v: &[f64],
    lambda: &[f64],
    x: &[f64],
    sample: &SampleTuple,
    mu_hat: &[f64],
    kappa: f64,
    dims: &ModelDims,
) -> Result<SparseGradients> {
    let s0 = sample
        .s0
        .ok_or_else(|| Error::InvalidArgument("sample lacks an initial-state draw".into()))?;
    let gamma = dims.discount;
    let pair = dims.pair_index(sample.s, sample.a);
    let ratio = x[pair] / mu_hat[pair];
    let u_kappa: Vec<f64> = sample
        .u
        .iter()
        .map(|&u| u - (1.0 - gamma) * kappa)
        .collect();
    let dual_term: f64 = u_kappa.iter().zip(lambda).map(|(u, l)| u * l).sum();
    let x_value =
        (sample.r - v[sample.s] + gamma * v[sample.s_next] + dual_term) / mu_hat[pair];
    Ok(SparseGradients {
        s0,
        s: sample.s,
        s_next: sample.s_next,
        ratio,
        u_kappa,
        x_index: pair,
        x_value,
    })
}

/// Dense view of the estimators, mirroring the mathematical definitions.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub g_v: Vec<f64>,
    pub g_lambda: Vec<f64>,
    /// `(coordinate, value)` of the one-hot `g_x`.
    pub g_x: (usize, f64),
}

/// Dense estimators at one sample; thin adapter over [`sparse_gradients`].
pub fn gradient_estimators(
    v: &[f64],
    lambda: &[f64],
    x: &[f64],
    sample: &SampleTuple,
    mu_hat: &[f64],
    kappa: f64,
    dims: &ModelDims,
) -> Result<Gradients> {
    let sg = sparse_gradients(v, lambda, x, sample, mu_hat, kappa, dims)?;
    let gamma = dims.discount;
    let mut g_v = vec![0.0; dims.num_states];
    g_v[sg.s0] += 1.0;
    g_v[sg.s_next] += gamma * sg.ratio;
    g_v[sg.s] -= sg.ratio;
    let g_lambda = (0..dims.num_constraints).map(|i| sg.g_lambda_at(i)).collect();
    Ok(Gradients {
        g_v,
        g_lambda,
        g_x: (sg.x_index, sg.x_value),
    })
}

/// Pathwise magnitude bounds: `(||g_V||, ||g_lambda||_inf, |g_x|)` are capped
/// by `(1 + 2 psi/(1-gamma), 2 psi/(1-gamma), 64/(phi (1-gamma) varsigma))`
/// whenever the iterates sit in their feasible sets.
pub fn magnitude_bounds(psi: f64, phi: f64, varsigma: f64, gamma: f64) -> (f64, f64, f64) {
    let one_minus_gamma = 1.0 - gamma;
    (
        1.0 + 2.0 * psi / one_minus_gamma,
        2.0 * psi / one_minus_gamma,
        64.0 / (phi * one_minus_gamma * varsigma),
    )
}

/// `E[g_V] = rho0 - A^T W x` with `W = diag(mu/mu_hat)`.
pub fn closed_form_grad_v(model: &CmdpModel, mu: &[f64], mu_hat: &[f64], x: &[f64]) -> Vec<f64> {
    let n = model.dims().num_pairs();
    let wx: Vec<f64> = (0..n).map(|i| mu[i] / mu_hat[i] * x[i]).collect();
    let fm = FlowMatrix::of_model(model);
    let atwx = fm.transpose_apply(&wx);
    model
        .rho0()
        .iter()
        .zip(&atwx)
        .map(|(r, f)| r - f)
        .collect()
}

/// `E[g_lambda] = U_kappa W x`.
pub fn closed_form_grad_lambda(
    model: &CmdpModel,
    mu: &[f64],
    mu_hat: &[f64],
    x: &[f64],
    kappa: f64,
) -> Vec<f64> {
    let dims = model.dims();
    let n = dims.num_pairs();
    let shift = (1.0 - dims.discount) * kappa;
    (0..dims.num_constraints)
        .map(|k| {
            let u = model.utility(k);
            (0..n)
                .map(|i| mu[i] / mu_hat[i] * x[i] * (u[i] - shift))
                .sum()
        })
        .collect()
}

/// `E[g_x] = w .* (r - A V + U_kappa^T lambda)` with `w = mu/mu_hat`.
pub fn closed_form_grad_x(
    model: &CmdpModel,
    mu: &[f64],
    mu_hat: &[f64],
    v: &[f64],
    lambda: &[f64],
    kappa: f64,
) -> Vec<f64> {
    let dims = model.dims();
    let n = dims.num_pairs();
    let shift = (1.0 - dims.discount) * kappa;
    let fm = FlowMatrix::of_model(model);
    (0..n)
        .map(|i| {
            let av: f64 = fm.row(i).iter().zip(v).map(|(a, vs)| a * vs).sum();
            let dual: f64 = (0..dims.num_constraints)
                .map(|k| lambda[k] * (model.utility(k)[i] - shift))
                .sum();
            mu[i] / mu_hat[i] * (model.reward()[i] - av + dual)
        })
        .collect()
}
