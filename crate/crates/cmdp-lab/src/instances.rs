//! Benchmark CMDP families with closed-form optima, plus a random
//! well-conditioned generator.
//!
//! The two structured families are built from 4-state blocks
//! `{s_0, s_1, s_+, s_-}` chained as `s_0 -> s_1 -> s_{+/-} -> s_0`, where
//! the only meaningful choice happens at `s_1` and biases the coin between
//! the rewarding state `s_+` and the penalizing state `s_-`. A null state
//! absorbs leftover reference mass so the deviation bound of the paired
//! reference distribution stays exactly at the requested level.

use crate::error::{Error, Result};
use crate::lp::slater_margin;
use crate::model::{CmdpModel, Policy};
use crate::rng::{stream, StreamId};
use crate::tol::NumericConfig;
use rand::Rng;

/// Shared chain constants: `p` keeps mass circulating at `s_0`, `q` makes
/// the `s_{+/-}` sojourn geometric, and `v0, v1, v` are the resulting
/// per-unit-initial-mass visitation weights of `s_0`, `s_1` and
/// `{s_+, s_-}` combined.
#[derive(Debug, Clone, Copy)]
pub struct BlockConstants {
    pub p: f64,
    pub q: f64,
    pub v0: f64,
    pub v1: f64,
    pub v: f64,
}

impl BlockConstants {
    pub fn new(gamma: f64) -> Self {
        BlockConstants {
            p: 1.0 / (2.0 - gamma),
            q: 2.0 - 1.0 / gamma,
            v0: 2.0 / (2.0 + gamma),
            v1: 2.0 * gamma / ((2.0 + gamma) * (2.0 - gamma)),
            v: gamma * gamma / ((2.0 + gamma) * (2.0 - gamma)),
        }
    }
}

/// Parameters of the constrained-bandit-chain family.
///
/// `s, a, i` are budget caps (the built model satisfies
/// `|S| = 4(S_c + S_u) + 1`, `|A| = 2K + 1`, `I = 2 K S_c`), `c >= 2` is the
/// target deviation level of the paired reference distribution, and the
/// sign vectors select which arm of each biased coin is favorable.
#[derive(Debug, Clone)]
pub struct HardInstanceParams {
    pub s: usize,
    pub a: usize,
    pub i: usize,
    pub c: f64,
    pub gamma: f64,
    /// Signs in `{-1, +1}`, length `S_c * K`, entry `(j, i)` at `j * K + i`.
    pub theta_c: Vec<i8>,
    /// Signs in `{-1, +1}`, length `S_u`.
    pub theta_u: Vec<i8>,
    pub varpi_c: f64,
    pub varpi_u: f64,
}

impl HardInstanceParams {
    /// `(K, S_c, S_u)`: arm pairs per constrained state, constrained block
    /// count, unconstrained block count.
    pub fn block_counts(&self) -> (usize, usize, usize) {
        block_counts(self.s, self.a, self.i)
    }

    /// Fill the sign vectors from the instance RNG stream.
    pub fn random(
        s: usize,
        a: usize,
        i: usize,
        c: f64,
        gamma: f64,
        varpi_c: f64,
        varpi_u: f64,
        seed: u64,
    ) -> Self {
        let (k, s_c, s_u) = block_counts(s, a, i);
        let mut rng = stream(seed, StreamId::Instance);
        let mut sign = |n: usize| -> Vec<i8> {
            (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()
        };
        HardInstanceParams {
            s,
            a,
            i,
            c,
            gamma,
            theta_c: sign(s_c * k),
            theta_u: sign(s_u),
            varpi_c,
            varpi_u,
        }
    }
}

fn block_counts(s: usize, a: usize, i: usize) -> (usize, usize, usize) {
    let k = (i / 2).min(a.saturating_sub(1) / 2);
    if k == 0 {
        return (0, 0, 0);
    }
    let s_c = (i / (2 * k)).min(s);
    let s_u = if s_c + 3 < s { s - s_c } else { 0 };
    (k, s_c, s_u)
}

/// A generated benchmark model with its paired reference distribution and
/// closed-form optimum.
#[derive(Debug, Clone)]
pub struct HardInstance {
    pub model: CmdpModel,
    /// Reference distribution over state-action pairs; zero off the support
    /// the construction sampled from.
    pub mu: Vec<f64>,
    pub optimal_policy: Policy,
    pub optimal_value: f64,
}

/// Per-block state indices in the flattened model.
#[derive(Debug, Clone, Copy)]
struct BlockStates {
    s0: usize,
    s1: usize,
    sp: usize,
    sm: usize,
}

fn block_states(j: usize) -> BlockStates {
    BlockStates {
        s0: 4 * j,
        s1: 4 * j + 1,
        sp: 4 * j + 2,
        sm: 4 * j + 3,
    }
}

fn check_common(gamma: f64, c: f64, varpi: f64) -> Result<()> {
    if !(0.5..1.0).contains(&gamma) {
        return Err(Error::Instance(format!(
            "discount must lie in [1/2, 1), got {gamma}"
        )));
    }
    if !(c >= 2.0 && c.is_finite()) {
        return Err(Error::Instance(format!(
            "deviation level c must be >= 2 so the null state keeps positive mass, got {c}"
        )));
    }
    if !(varpi > 0.0 && varpi <= 0.5) {
        return Err(Error::Instance(format!(
            "coin bias varpi must lie in (0, 1/2], got {varpi}"
        )));
    }
    Ok(())
}

/// Build the constrained family: `S_c` blocks whose `s_1` state offers `K`
/// arm pairs `(a_i, b_i)` plus a fair arm `e`, under `2K` constraints per
/// block encoding `pi(a_i|s_1) <= pi(b_i|s_1) <= 1/(4K)`, and `S_u`
/// unconstrained blocks with a single biased arm. The paired `mu` spreads
/// mass so that no optimal-policy occupancy ratio exceeds `c/(1-gamma)`.
pub fn build_hard_cmdp(params: &HardInstanceParams, tol: &NumericConfig) -> Result<HardInstance> {
    let (k, s_c, s_u) = params.block_counts();
    if params.s < 4 || params.a < 3 || params.i < 8 {
        return Err(Error::Instance(format!(
            "constrained family needs s >= 4, a >= 3, i >= 8; got ({}, {}, {})",
            params.s, params.a, params.i
        )));
    }
    check_common(params.gamma, params.c, params.varpi_c)?;
    check_common(params.gamma, params.c, params.varpi_u)?;
    if params.theta_c.len() != s_c * k {
        return Err(Error::Instance(format!(
            "theta_c has {} entries, need S_c * K = {}",
            params.theta_c.len(),
            s_c * k
        )));
    }
    if params.theta_u.len() != s_u {
        return Err(Error::Instance(format!(
            "theta_u has {} entries, need S_u = {}",
            params.theta_u.len(),
            s_u
        )));
    }
    for &t in params.theta_c.iter().chain(&params.theta_u) {
        if t != 1 && t != -1 {
            return Err(Error::Instance(format!("sign entries must be +/-1, got {t}")));
        }
    }

    let gamma = params.gamma;
    let bc = BlockConstants::new(gamma);
    let blocks = s_c + s_u;
    let num_states = 4 * blocks + 1;
    let num_actions = 2 * k + 1;
    let null = 4 * blocks;
    let n_pairs = num_states * num_actions;
    let i_total = 2 * k * s_c;
    // Initial mass per block: split between the two groups when both exist.
    let rho_c = if s_u > 0 { 0.5 / s_c as f64 } else { 1.0 / s_c as f64 };
    let rho_u = if s_u > 0 { 0.5 / s_u as f64 } else { 0.0 };
    let rho_blk = |j: usize| if j < s_c { rho_c } else { rho_u };

    let mut transition = vec![0.0; n_pairs * num_states];
    let mut set = |s: usize, a: usize, s2: usize, v: f64| {
        transition[(s * num_actions + a) * num_states + s2] = v;
    };
    for j in 0..blocks {
        let st = block_states(j);
        for a in 0..num_actions {
            set(st.s0, a, st.s0, bc.p);
            set(st.s0, a, st.s1, 1.0 - bc.p);
            set(st.sp, a, st.sp, bc.q);
            set(st.sp, a, st.s0, 1.0 - bc.q);
            set(st.sm, a, st.sm, bc.q);
            set(st.sm, a, st.s0, 1.0 - bc.q);
            set(null, a, null, 1.0);
        }
        if j < s_c {
            for i in 0..k {
                let theta = params.theta_c[j * k + i] as f64;
                set(st.s1, 2 * i, st.sp, (1.0 + params.varpi_c * theta) / 2.0);
                set(st.s1, 2 * i, st.sm, (1.0 - params.varpi_c * theta) / 2.0);
                set(st.s1, 2 * i + 1, st.sp, (1.0 - params.varpi_c / 2.0) / 2.0);
                set(st.s1, 2 * i + 1, st.sm, (1.0 + params.varpi_c / 2.0) / 2.0);
            }
            set(st.s1, 2 * k, st.sp, 0.5);
            set(st.s1, 2 * k, st.sm, 0.5);
        } else {
            let theta = params.theta_u[j - s_c] as f64;
            set(st.s1, 0, st.sp, (1.0 + params.varpi_u * theta) / 2.0);
            set(st.s1, 0, st.sm, (1.0 - params.varpi_u * theta) / 2.0);
            for a in 1..num_actions {
                set(st.s1, a, st.sp, 0.5);
                set(st.s1, a, st.sm, 0.5);
            }
        }
    }

    let mut reward = vec![0.0; n_pairs];
    for j in 0..blocks {
        let st = block_states(j);
        for a in 0..num_actions {
            reward[st.sp * num_actions + a] = 1.0;
            reward[st.sm * num_actions + a] = -1.0;
        }
    }

    // Constraint pair (2c, 2c+1) for arm pair i of block j, c = j*K + i:
    // the first utility encodes pi(a_i) <= pi(b_i), the second (uniformly
    // shifted so its threshold becomes zero) encodes pi(b_i) <= 1/(4K).
    let mut utilities = vec![0.0; i_total * n_pairs];
    for j in 0..s_c {
        let st = block_states(j);
        let shift = (1.0 - gamma) * rho_c * bc.v1 / (4.0 * k as f64);
        for i in 0..k {
            let base_u = 2 * (j * k + i) * n_pairs;
            utilities[base_u + st.s1 * num_actions + 2 * i] = -1.0;
            utilities[base_u + st.s1 * num_actions + 2 * i + 1] = 1.0;
            let base_t = base_u + n_pairs;
            for e in utilities[base_t..base_t + n_pairs].iter_mut() {
                *e = shift;
            }
            utilities[base_t + st.s1 * num_actions + 2 * i + 1] = -1.0 + shift;
        }
    }

    let mut rho0 = vec![0.0; num_states];
    for j in 0..blocks {
        rho0[block_states(j).s0] = rho_blk(j);
    }

    let mut mu = vec![0.0; n_pairs];
    for j in 0..blocks {
        let st = block_states(j);
        let rho = rho_blk(j);
        mu[st.s0 * num_actions] = bc.v0 * rho / params.c;
        mu[st.sp * num_actions] = 0.75 * bc.v * rho / params.c;
        mu[st.sm * num_actions] = 0.5 * bc.v * rho / params.c;
        let s1_base = st.s1 * num_actions;
        if j < s_c {
            let arm = rho * bc.v1 * (1.0 - gamma) / (4.0 * k as f64 * params.c);
            for i in 0..2 * k {
                mu[s1_base + i] = arm;
            }
            mu[s1_base + 2 * k] = bc.v1 * (1.0 - gamma) * rho / params.c;
        } else {
            mu[s1_base] = rho * bc.v1 * (1.0 - gamma) / params.c;
            mu[s1_base + 1] = bc.v1 * (1.0 - gamma) * rho / params.c;
        }
    }
    let assigned: f64 = mu.iter().sum();
    mu[null * num_actions] = 1.0 - assigned;

    let mut probs = vec![0.0; n_pairs];
    for j in 0..blocks {
        let st = block_states(j);
        for s in [st.s0, st.sp, st.sm] {
            probs[s * num_actions] = 1.0;
        }
        let s1_base = st.s1 * num_actions;
        if j < s_c {
            let mut rest = 1.0;
            for i in 0..k {
                let share = if params.theta_c[j * k + i] == 1 {
                    1.0 / (4.0 * k as f64)
                } else {
                    0.0
                };
                probs[s1_base + 2 * i] = share;
                probs[s1_base + 2 * i + 1] = share;
                rest -= 2.0 * share;
            }
            probs[s1_base + 2 * k] = rest;
        } else if params.theta_u[j - s_c] == 1 {
            probs[s1_base] = 1.0;
        } else {
            probs[s1_base + 1] = 1.0;
        }
    }
    probs[null * num_actions] = 1.0;

    let mut optimal_value = 0.0;
    let weight = bc.v / (1.0 - gamma);
    for j in 0..s_c {
        for i in 0..k {
            if params.theta_c[j * k + i] == 1 {
                optimal_value += weight * params.varpi_c * rho_c / (8.0 * k as f64);
            }
        }
    }
    for &t in &params.theta_u {
        if t == 1 {
            optimal_value += weight * params.varpi_u * rho_u;
        }
    }

    let model = CmdpModel::new(
        num_states,
        num_actions,
        gamma,
        transition,
        reward,
        utilities,
        rho0,
        tol,
    )?;
    let optimal_policy = Policy::new(num_states, num_actions, probs, tol)?;
    Ok(HardInstance {
        model,
        mu,
        optimal_policy,
        optimal_value,
    })
}

/// Build the single-constraint family with no reward and no safety slack:
/// one hub chain feeding `s_count` coin states whose two arms bias the
/// utility coin in opposite directions, so exactly one arm per state is
/// safe and the unique safe policy reads off `theta`.
pub fn build_slater_instance(
    s_count: usize,
    a: usize,
    c: f64,
    gamma: f64,
    theta: &[u8],
    varpi: f64,
    tol: &NumericConfig,
) -> Result<HardInstance> {
    if s_count < 4 || a < 3 {
        return Err(Error::Instance(format!(
            "coin-state family needs s >= 4 and a >= 3; got ({s_count}, {a})"
        )));
    }
    check_common(gamma, c, varpi)?;
    if theta.len() != s_count {
        return Err(Error::Instance(format!(
            "theta has {} entries, need {s_count}",
            theta.len()
        )));
    }
    if theta.iter().any(|&t| t > 1) {
        return Err(Error::Instance("theta entries must be 0 or 1".into()));
    }

    let bc = BlockConstants::new(gamma);
    // Layout: s_0, s_+, s_-, then the coin states, then the null state.
    let (s0, sp, sm) = (0usize, 1usize, 2usize);
    let coin = |j: usize| 3 + j;
    let null = 3 + s_count;
    let num_states = s_count + 4;
    let num_actions = 2;
    let n_pairs = num_states * num_actions;

    let mut transition = vec![0.0; n_pairs * num_states];
    let mut set = |s: usize, a: usize, s2: usize, v: f64| {
        transition[(s * num_actions + a) * num_states + s2] = v;
    };
    for act in 0..num_actions {
        set(s0, act, s0, bc.p);
        for j in 0..s_count {
            set(s0, act, coin(j), (1.0 - bc.p) / s_count as f64);
        }
        set(sp, act, sp, bc.q);
        set(sp, act, s0, 1.0 - bc.q);
        set(sm, act, sm, bc.q);
        set(sm, act, s0, 1.0 - bc.q);
        set(null, act, null, 1.0);
    }
    for (j, &tj) in theta.iter().enumerate() {
        let t = tj as f64;
        set(coin(j), 0, sp, (1.0 - varpi * t) / 2.0);
        set(coin(j), 0, sm, (1.0 + varpi * t) / 2.0);
        set(coin(j), 1, sp, (1.0 - varpi * (1.0 - t)) / 2.0);
        set(coin(j), 1, sm, (1.0 + varpi * (1.0 - t)) / 2.0);
    }

    let reward = vec![0.0; n_pairs];
    let mut utility = vec![0.0; n_pairs];
    for act in 0..num_actions {
        utility[sp * num_actions + act] = 1.0;
        utility[sm * num_actions + act] = -1.0;
    }

    let mut rho0 = vec![0.0; num_states];
    rho0[s0] = 1.0;

    let mut mu = vec![0.0; n_pairs];
    mu[s0 * num_actions] = bc.v0 / c;
    mu[sp * num_actions] = bc.v / c;
    mu[sm * num_actions] = bc.v / c;
    for j in 0..s_count {
        let m = bc.v1 * (1.0 - gamma) / (s_count as f64 * c);
        mu[coin(j) * num_actions] = m;
        mu[coin(j) * num_actions + 1] = m;
    }
    let assigned: f64 = mu.iter().sum();
    mu[null * num_actions] = 1.0 - assigned;

    let mut probs = vec![0.0; n_pairs];
    for s in [s0, sp, sm, null] {
        probs[s * num_actions] = 1.0;
    }
    for j in 0..s_count {
        probs[coin(j) * num_actions] = 1.0 - theta[j] as f64;
        probs[coin(j) * num_actions + 1] = theta[j] as f64;
    }

    let model = CmdpModel::new(
        num_states,
        num_actions,
        gamma,
        transition,
        reward,
        utility,
        rho0,
        tol,
    )?;
    let optimal_policy = Policy::new(num_states, num_actions, probs, tol)?;
    Ok(HardInstance {
        model,
        mu,
        optimal_policy,
        optimal_value: 0.0,
    })
}

/// Closed-form constraint value of the coin-state family:
/// `-(v varpi / (S (1-gamma))) * sum_j |pi(b|s^j) - theta_j|`.
pub fn slater_constraint_value(
    s_count: usize,
    gamma: f64,
    varpi: f64,
    theta: &[u8],
    pi_b: &[f64],
) -> f64 {
    let bc = BlockConstants::new(gamma);
    let dist: f64 = theta
        .iter()
        .zip(pi_b)
        .map(|(&t, &p)| (p - t as f64).abs())
        .sum();
    -bc.v * varpi * dist / (s_count as f64 * (1.0 - gamma))
}

/// Random well-conditioned CMDP: Dirichlet(1) transition rows and initial
/// distribution, uniform rewards, and utilities resampled (then uniformly
/// raised) until the safety margin reaches `slater_target`.
pub fn random_cmdp(
    s: usize,
    a: usize,
    i: usize,
    gamma: f64,
    slater_target: f64,
    seed: u64,
    tol: &NumericConfig,
) -> Result<CmdpModel> {
    if s == 0 || a == 0 {
        return Err(Error::Instance("need at least one state and action".into()));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::Instance(format!("discount must lie in (0,1), got {gamma}")));
    }
    if !(0.0 < slater_target && slater_target < 1.0) {
        return Err(Error::Instance(format!(
            "slater_target must lie in (0,1), got {slater_target}"
        )));
    }
    let mut rng = stream(seed, StreamId::Instance);
    let n_pairs = s * a;
    let dirichlet = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    };

    let mut transition = Vec::with_capacity(n_pairs * s);
    for _ in 0..n_pairs {
        transition.extend(dirichlet(&mut rng, s));
    }
    let rho0 = dirichlet(&mut rng, s);
    let reward: Vec<f64> = (0..n_pairs).map(|_| rng.gen_range(-1.0..1.0)).collect();

    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let mut utilities: Vec<f64> =
            (0..i * n_pairs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = CmdpModel::new(
            s,
            a,
            gamma,
            transition.clone(),
            reward.clone(),
            utilities.clone(),
            rho0.clone(),
            tol,
        )?;
        let margin = slater_margin(&model, tol)?;
        if margin >= slater_target {
            return Ok(model);
        }
        // An additive lift of every utility raises the margin one-for-one;
        // apply the exact deficit when it keeps entries within range.
        let lift = slater_target - margin + 1e-9;
        let max_entry = utilities.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if i == 0 || max_entry + lift > 1.0 {
            continue;
        }
        for e in utilities.iter_mut() {
            *e += lift;
        }
        let model = CmdpModel::new(
            s,
            a,
            gamma,
            transition.clone(),
            reward.clone(),
            utilities,
            rho0.clone(),
            tol,
        )?;
        let margin = slater_margin(&model, tol)?;
        if margin >= slater_target {
            return Ok(model);
        }
    }
    Err(Error::Instance(format!(
        "no utility draw reached safety margin {slater_target} in {ATTEMPTS} attempts; \
         relax slater_target"
    )))
}
