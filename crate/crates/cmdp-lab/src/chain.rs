//! Markov-chain diagnostics for behavior policies: stationary distribution,
//! ergodicity checks, and exact mixing-time computation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CmdpModel, Policy};
use crate::tol::NumericConfig;

/// Default cap on the number of matrix powers examined by [`mixing_time`].
pub const DEFAULT_MIXING_CAP: usize = 100_000;

/// First time the worst-case distance to stationarity drops to 1/4, plus the
/// distance curve itself.
#[derive(Debug, Clone)]
pub struct MixingCurve {
    pub t_mix: usize,
    /// `curve[t-1] = E(t) = sup_s d_TV(P^t(s, .), stationary)` for
    /// `t = 1 ..= 4 * t_mix`.
    pub curve: Vec<f64>,
}

/// State transition matrix under a policy: `row s` is the distribution of
/// the next state from `s`.
pub(crate) fn transition_matrix(model: &CmdpModel, pi: &Policy) -> DMatrix<f64> {
    let ns = model.num_states();
    let na = model.num_actions();
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (s2, pr) in model.p_row(s, a).iter().enumerate() {
                p[(s, s2)] += w * pr;
            }
        }
    }
    p
}

/// Verify the state chain under `pi_b` is irreducible and aperiodic.
pub fn ensure_ergodic(model: &CmdpModel, pi_b: &Policy) -> Result<()> {
    let p = transition_matrix(model, pi_b);
    ensure_irreducible(&p)?;
    let period = chain_period(&p);
    if period != 1 {
        return Err(Error::ChainNotErgodic(format!(
            "state chain is periodic with period {period}"
        )));
    }
    Ok(())
}

fn support_successors(p: &DMatrix<f64>, s: usize) -> impl Iterator<Item = usize> + '_ {
    let n = p.nrows();
    (0..n).filter(move |&s2| p[(s, s2)] > 0.0)
}

fn reachable(p: &DMatrix<f64>, reversed: bool) -> Vec<bool> {
    let n = p.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(s) = stack.pop() {
        for s2 in 0..n {
            let edge = if reversed { p[(s2, s)] > 0.0 } else { p[(s, s2)] > 0.0 };
            if edge && !seen[s2] {
                seen[s2] = true;
                stack.push(s2);
            }
        }
    }
    seen
}

fn ensure_irreducible(p: &DMatrix<f64>) -> Result<()> {
    let fwd = reachable(p, false);
    let bwd = reachable(p, true);
    for s in 0..p.nrows() {
        if !fwd[s] || !bwd[s] {
            return Err(Error::ChainNotErgodic(format!(
                "state chain is reducible: state {s} is not in the communicating class of state 0"
            )));
        }
    }
    Ok(())
}

/// Period of an irreducible chain: gcd of `level(u) + 1 - level(v)` over all
/// support edges, with levels from a breadth-first search.
fn chain_period(p: &DMatrix<f64>) -> u64 {
    let n = p.nrows();
    let mut level = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    level[0] = 0;
    while let Some(s) = queue.pop_front() {
        for s2 in support_successors(p, s) {
            if level[s2] == usize::MAX {
                level[s2] = level[s] + 1;
                queue.push_back(s2);
            }
        }
    }
    let mut g: u64 = 0;
    for s in 0..n {
        for s2 in support_successors(p, s) {
            let diff = (level[s] as i64 + 1 - level[s2] as i64).unsigned_abs();
            g = gcd(g, diff);
        }
    }
    g
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Stationary distribution of the state chain under `pi_b`.
///
/// Requires irreducibility (unique stationary distribution); periodicity is
/// fine here, only the samplers and [`mixing_time`] need aperiodicity.
pub(crate) fn state_stationary(
    model: &CmdpModel,
    pi_b: &Policy,
    tol: &NumericConfig,
) -> Result<Vec<f64>> {
    let p = transition_matrix(model, pi_b);
    ensure_irreducible(&p)?;
    let n = p.nrows();

    // Solve d^T P = d^T with the normalization sum(d) = 1 replacing the last
    // (redundant) balance equation.
    let mut a = p.transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let d = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("stationary balance system is singular".into()))?;

    let mut out: Vec<f64> = d.iter().map(|&v| v.max(0.0)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    // Residual audit: ||d^T P - d^T||_1 must be at solver precision.
    let mut residual = 0.0;
    for s2 in 0..n {
        let mut flow = 0.0;
        for s in 0..n {
            flow += out[s] * p[(s, s2)];
        }
        residual += (flow - out[s2]).abs();
    }
    if residual > tol.stationary {
        return Err(Error::SingularSystem(format!(
            "stationary distribution residual {residual:.3e} exceeds {:.3e}",
            tol.stationary
        )));
    }
    Ok(out)
}

/// Stationary distribution over state-action pairs:
/// `mu(s,a) = d(s) * pi_b(a|s)` with `d` the state stationary distribution.
pub fn stationary_distribution(
    model: &CmdpModel,
    pi_b: &Policy,
    tol: &NumericConfig,
) -> Result<Vec<f64>> {
    if pi_b.num_states() != model.num_states() || pi_b.num_actions() != model.num_actions() {
        return Err(Error::Dimension("policy does not match model".into()));
    }
    let d = state_stationary(model, pi_b, tol)?;
    let na = model.num_actions();
    let mut mu = vec![0.0; model.num_states() * na];
    for (s, &ds) in d.iter().enumerate() {
        for a in 0..na {
            mu[s * na + a] = ds * pi_b.prob(s, a);
        }
    }
    Ok(mu)
}

/// Exact mixing time of the state chain under `pi_b`:
/// `t_mix = min { t : E(t) <= 1/4 }` with
/// `E(t) = sup_s d_TV(P^t(s, .), stationary)`, computed by repeated matrix
/// powers. Returns the curve out to `4 * t_mix`.
pub fn mixing_time(model: &CmdpModel, pi_b: &Policy, tol: &NumericConfig) -> Result<MixingCurve> {
    mixing_time_with_cap(model, pi_b, DEFAULT_MIXING_CAP, tol)
}

/// [`mixing_time`] with an explicit cap on the number of matrix powers.
pub fn mixing_time_with_cap(
    model: &CmdpModel,
    pi_b: &Policy,
    cap: usize,
    tol: &NumericConfig,
) -> Result<MixingCurve> {
    ensure_ergodic(model, pi_b)?;
    let d = state_stationary(model, pi_b, tol)?;
    let p = transition_matrix(model, pi_b);
    let n = p.nrows();

    let worst_tv = |m: &DMatrix<f64>| -> f64 {
        (0..n)
            .map(|s| 0.5 * (0..n).map(|s2| (m[(s, s2)] - d[s2]).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };

    let mut power = p.clone();
    let mut curve = Vec::new();
    let mut t_mix = None;
    let mut t = 1usize;
    loop {
        let e = worst_tv(&power);
        curve.push(e);
        if t_mix.is_none() && e <= 0.25 {
            t_mix = Some(t);
        }
        if let Some(tm) = t_mix {
            if t >= 4 * tm {
                return Ok(MixingCurve { t_mix: tm, curve });
            }
        }
        if t >= cap && t_mix.is_none() {
            return Err(Error::MixingCapExceeded { cap });
        }
        power = &power * &p;
        t += 1;
    }
}
