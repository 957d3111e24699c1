//! The solver loop: interleaved value, multiplier, and primal updates driven
//! by one pass over an offline sample stream.
//!
//! Update directions: V and lambda descend the reweighted Lagrangian, x
//! ascends it. Each block moves with effective stepsize `eta/alpha_block`,
//! which the configured stepsize cap keeps small enough that every
//! multiplicative factor stays bounded per step.

use std::time::Instant;

use crate::dataset::SampleSource;
use crate::dpdl::gradient::{magnitude_bounds, sparse_gradients, SparseGradients};
use crate::dpdl::xprox::XUpdater;
use crate::dpdl::{estimate_reference, DpdlConfig, DpdlState, FeasibleRegions};
use crate::error::{Error, Result};
use crate::lp::validate_distribution;
use crate::model::{policy_of_occupancy, ModelDims, OccupancyMeasure};
use crate::report::{Checkpoint, SolveReport};
use crate::rng::{sample_index, stream, StreamId};
use crate::tol::NumericConfig;

/// Projected subgradient step on the value block:
/// `V' = clamp(V - (eta/alpha_v) g_V, [-r_v, r_v])` coordinatewise. Clamping
/// is the exact l-inf ball projection.
pub fn update_v(v: &[f64], g_v: &[f64], eta: f64, alpha_v: f64, r_v: f64) -> Vec<f64> {
    let scale = eta / alpha_v;
    v.iter()
        .zip(g_v)
        .map(|(&vi, &gi)| (vi - scale * gi).clamp(-r_v, r_v))
        .collect()
}

/// Entropic step on the multiplier block: multiplicative update
/// `lambda_i exp(-(eta/alpha_lambda) g_i)`, then a single rescale onto the
/// l1 cap when exceeded. This is the exact KL prox onto
/// `{lambda >= 0, ||lambda||_1 <= r_lambda}`; in particular a zero gradient
/// returns `lambda` unchanged, bit for bit.
pub fn update_lambda(
    lambda: &[f64],
    g_lambda: &[f64],
    eta: f64,
    alpha_lambda: f64,
    r_lambda: f64,
) -> Vec<f64> {
    let scale = eta / alpha_lambda;
    let mut next: Vec<f64> = lambda
        .iter()
        .zip(g_lambda)
        .map(|(&li, &gi)| li * (-scale * gi).exp())
        .collect();
    let sum: f64 = next.iter().sum();
    if sum > r_lambda {
        let shrink = r_lambda / sum;
        for l in &mut next {
            *l *= shrink;
        }
    }
    next
}

/// The multiplier update in log scale: the same multiplicative step and cap
/// rescale as [`update_lambda`], applied to `log lambda`. The solver keeps
/// multipliers in logs because a long one-sided gradient streak can push a
/// coordinate below the smallest positive float; a literal zero never
/// recovers under multiplicative updates, while its log representation does.
fn update_lambda_log(lambda_log: &mut [f64], g: impl Fn(usize) -> f64, scale: f64, r_lambda: f64) {
    if lambda_log.is_empty() {
        return;
    }
    for (i, l) in lambda_log.iter_mut().enumerate() {
        *l -= scale * g(i);
    }
    let lse = log_sum_exp(lambda_log);
    let cap = r_lambda.ln();
    if lse > cap {
        let shift = lse - cap;
        for l in lambda_log.iter_mut() {
            *l -= shift;
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Value coordinates a sparse gradient can touch, deduplicated so a repeated
/// state is stepped once with its summed one-hot value.
fn touched_states(sg: &SparseGradients) -> [Option<usize>; 3] {
    let mut out = [Some(sg.s0), None, None];
    if sg.s != sg.s0 {
        out[1] = Some(sg.s);
    }
    if sg.s_next != sg.s0 && sg.s_next != sg.s {
        out[2] = Some(sg.s_next);
    }
    out
}

/// Full solver run: estimate the reference from the head of the stream, then
/// iterate the three-block update for `config.iterations` steps, averaging
/// as it goes. Consumes exactly `estimation_samples + iterations` tuples.
///
/// `rho0` is the known initial distribution; it is only drawn from when a
/// tuple does not carry its own initial-state sample (asynchronous sources).
pub fn run_dpdl<S: SampleSource + ?Sized>(
    dims: &ModelDims,
    source: &mut S,
    config: &DpdlConfig,
    rho0: &[f64],
    tol: &NumericConfig,
) -> Result<SolveReport> {
    config.validate(dims.discount)?;
    validate_distribution(rho0, dims.num_states, tol)?;
    let regions = FeasibleRegions::new(config.psi, config.phi, dims)?;
    let total = config.estimation_samples.saturating_add(config.iterations);
    if let Some(rem) = source.remaining() {
        if rem < total {
            return Err(Error::InsufficientData {
                required: total,
                available: rem,
            });
        }
    }

    let start = Instant::now();
    let reference = estimate_reference(source, dims, config.estimation_samples, config.varsigma)?;
    let mu_hat = reference.mu_hat;
    let mut state = DpdlState::init(dims, &mu_hat, config.phi)?;
    let mut x_updater = XUpdater::new(&regions, &mu_hat, &state.x);
    let mut rho0_rng = stream(config.seed, StreamId::Solver);

    let scale_v = config.eta / config.alpha_v;
    let scale_lambda = config.eta / config.alpha_lambda;
    let scale_x = config.eta / config.alpha_x;

    let t_total = config.iterations;
    let mut next_checkpoint = 0usize;
    let checkpoint_at = |k: usize| -> usize {
        // floor(k T / checkpoints); strictly increasing when T >= checkpoints,
        // so `--checkpoints c` yields exactly c distinct rows ending at T.
        ((k as u128 * t_total as u128) / config.checkpoints as u128) as usize
    };
    while next_checkpoint < config.checkpoints && checkpoint_at(next_checkpoint + 1) == 0 {
        next_checkpoint += 1;
    }
    let mut curve: Vec<Checkpoint> = Vec::new();

    for t in 1..=t_total {
        let mut tuple = source.next_tuple()?;
        if tuple.s0.is_none() {
            tuple.s0 = Some(sample_index(&mut rho0_rng, rho0));
        }
        let sg = sparse_gradients(
            &state.v,
            &state.lambda,
            &state.x,
            &tuple,
            &mu_hat,
            config.kappa,
            dims,
        )?;
        debug_assert!(
            {
                let (_, _, bx) =
                    magnitude_bounds(config.psi, config.phi, config.varsigma, dims.discount);
                // The pathwise bound is derived under (1-gamma) kappa <= 1;
                // deliberately exotic configs fall outside of it.
                sg.x_value.abs() <= bx * (1.0 + 1e-12)
                    || (1.0 - dims.discount) * config.kappa > 1.0
            },
            "estimator escaped its magnitude bound: g_x = {}",
            sg.x_value
        );

        // The averages run over x^1..x^T, so fold in before stepping.
        state.accumulate();

        for slot in touched_states(&sg) {
            if let Some(s) = slot {
                let g = sg.g_v_at(s, dims.discount);
                state.v[s] = (state.v[s] - scale_v * g).clamp(-regions.r_v, regions.r_v);
            }
        }
        update_lambda_log(
            &mut state.lambda_log,
            |i| sg.g_lambda_at(i),
            scale_lambda,
            regions.r_lambda,
        );
        for (l, &ll) in state.lambda.iter_mut().zip(state.lambda_log.iter()) {
            *l = ll.exp();
        }
        x_updater.step(&mut state.x, sg.x_index, -scale_x * sg.x_value, tol)?;

        if next_checkpoint < config.checkpoints && t == checkpoint_at(next_checkpoint + 1) {
            // Several nominal checkpoints can land on one step when
            // T < checkpoints; consume them all, record one row.
            while next_checkpoint < config.checkpoints && checkpoint_at(next_checkpoint + 1) == t {
                next_checkpoint += 1;
            }
            state.check_membership(&regions, &mu_hat, tol.feasibility_slack)?;
            let (_, _, x_bar) = state.averages();
            curve.push(Checkpoint {
                t,
                eta: config.eta,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                x_bar,
                gap_estimate: None,
                reward_gap: None,
                violation: None,
            });
        }
    }

    let (v_bar, lambda_bar, x_bar) = state.averages();
    let nu = OccupancyMeasure::new(dims.num_states, dims.num_actions, x_bar.clone())?;
    let policy = policy_of_occupancy(&nu, tol)?;
    Ok(SolveReport {
        dims: *dims,
        config: config.clone(),
        mu_hat,
        v_bar,
        lambda_bar,
        x_bar,
        policy,
        consumed: total,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        curve,
        gap_estimate: None,
        reward_gap: None,
        violation: None,
        j_star: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sample_async, sample_sync};
    use crate::model::{CmdpModel, Policy};
    use crate::rng::{stream, StreamId};
    use rand::Rng;

    const TOL: &NumericConfig = &NumericConfig::DEFAULT;

    fn model() -> CmdpModel {
        let transition = vec![
            0.8, 0.2, // (s0, a0)
            0.2, 0.8, // (s0, a1)
            0.5, 0.5, // (s1, a0)
            0.6, 0.4, // (s1, a1)
        ];
        CmdpModel::new(
            2,
            2,
            0.5,
            transition,
            vec![1.0, 0.0, 0.5, 0.25],
            vec![0.2, -0.1, 0.3, 0.1],
            vec![0.7, 0.3],
            TOL,
        )
        .unwrap()
    }

    fn small_config(iterations: usize, seed: u64) -> DpdlConfig {
        let mut c = DpdlConfig {
            iterations,
            epsilon: 0.05,
            delta: 0.1,
            psi: 2.0,
            phi: 0.5,
            kappa: 0.05,
            eta: 0.0,
            alpha_v: 1.0,
            alpha_lambda: 1.0,
            alpha_x: 1.0,
            estimation_samples: 200,
            varsigma: 0.02,
            seed,
            eta_cap_relax: 1.0,
            checkpoints: 5,
        };
        c.eta = 0.5 * c.eta_cap(0.5);
        c
    }

    #[test]
    fn value_step_scales_and_clamps() {
        let v = vec![0.0, 0.9, -0.95];
        let g = vec![2.0, -4.0, 1.0];
        let next = update_v(&v, &g, 0.1, 2.0, 1.0);
        assert_eq!(next, vec![-0.1, 1.0, -1.0]);
    }

    #[test]
    fn multiplier_step_with_zero_gradient_is_identity() {
        let lambda = vec![0.3, 0.7, 1e-12];
        let next = update_lambda(&lambda, &[0.0; 3], 0.05, 2.0, 5.0);
        assert_eq!(next, lambda);
    }

    #[test]
    fn multiplier_step_matches_grid_search_of_the_prox_objective() {
        // KL prox onto the capped positive l1 ball, validated against a grid
        // minimization of <scale g, y> + KL(y || lambda) over the cap region.
        let lambda = vec![0.8, 0.4];
        let g = vec![-3.0, 1.5];
        let (eta, alpha, r) = (0.2, 0.5, 1.5);
        let next = update_lambda(&lambda, &g, eta, alpha, r);
        let sum: f64 = next.iter().sum();
        assert!(sum <= r + 1e-12);

        let scale = eta / alpha;
        let objective = |y: &[f64]| -> f64 {
            let mut f = 0.0;
            for i in 0..2 {
                f += scale * g[i] * y[i];
                f += y[i] * (y[i] / lambda[i]).ln() - y[i] + lambda[i];
            }
            f
        };
        let f_star = objective(&next);
        let steps = 400;
        for i in 1..steps {
            for j in 1..steps {
                let y = [
                    r * i as f64 / steps as f64,
                    r * j as f64 / steps as f64,
                ];
                if y[0] + y[1] > r {
                    continue;
                }
                assert!(
                    objective(&y) >= f_star - 1e-6,
                    "grid point {y:?} beats the prox output {next:?}"
                );
            }
        }
    }

    #[test]
    fn log_space_multiplier_agrees_with_linear_scale() {
        let mut rng = stream(99, StreamId::Oracle);
        let mut lambda = vec![0.5, 0.25, 0.1];
        let mut lambda_log: Vec<f64> = lambda.iter().map(|&l: &f64| l.ln()).collect();
        let (scale, r) = (0.08, 2.0);
        for _ in 0..1_000 {
            let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            lambda = update_lambda(&lambda, &g, scale, 1.0, r);
            update_lambda_log(&mut lambda_log, |i| g[i], scale, r);
            for i in 0..3 {
                let from_log = lambda_log[i].exp();
                assert!(
                    (lambda[i] - from_log).abs() <= 1e-9 * (1.0 + lambda[i]),
                    "{} vs {}",
                    lambda[i],
                    from_log
                );
            }
        }
    }

    #[test]
    fn log_scale_preserves_history_that_linear_scale_floors_away() {
        // 2*10^5 descent steps push the true multiplier to e^{-2000}. Floats
        // bottom out near the smallest subnormal, so the linear
        // representation forgets how far down it went and a matching ascent
        // overshoots all the way to the cap. The log representation returns
        // exactly to the starting point.
        let mut lambda = vec![1.0];
        let mut lambda_log = vec![0.0];
        for _ in 0..200_000 {
            lambda = update_lambda(&lambda, &[1.0], 0.01, 1.0, 10.0);
            update_lambda_log(&mut lambda_log, |_| 1.0, 0.01, 10.0);
        }
        assert!(lambda[0] > 0.0 && lambda[0] < 1e-320, "{}", lambda[0]);
        assert!(lambda_log[0] < -1990.0);
        for _ in 0..200_000 {
            lambda = update_lambda(&lambda, &[-1.0], 0.01, 1.0, 10.0);
            update_lambda_log(&mut lambda_log, |_| -1.0, 0.01, 10.0);
        }
        assert!((lambda_log[0].exp() - 1.0).abs() < 1e-6, "{}", lambda_log[0]);
        assert!(lambda[0] > 9.0, "floored linear scale should overshoot");
    }

    #[test]
    fn zero_iterations_returns_the_reference_proportional_policy() {
        let m = model();
        let dims = m.dims();
        let mu = vec![0.4, 0.1, 0.3, 0.2];
        let mut config = small_config(0, 7);
        config.eta = 1e-6;
        let data = sample_sync(&m, &mu, config.estimation_samples, 7).unwrap();
        let mut cursor = data.cursor();
        let report = run_dpdl(&dims, &mut cursor, &config, m.rho0(), TOL).unwrap();
        assert_eq!(report.consumed, config.estimation_samples);
        assert!(report.curve.is_empty());
        // x^1 is proportional to mu_hat, so the policy row-normalizes it.
        let expect = |s: usize, a: usize| {
            let row: f64 = (0..2).map(|b| report.mu_hat[s * 2 + b]).sum();
            report.mu_hat[s * 2 + a] / row
        };
        for s in 0..2 {
            for a in 0..2 {
                assert!((report.policy.prob(s, a) - expect(s, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reports_are_identical_across_reruns() {
        let m = model();
        let dims = m.dims();
        let mu = vec![0.4, 0.1, 0.3, 0.2];
        let config = small_config(800, 21);
        let data = sample_sync(&m, &mu, 200 + 800, 21).unwrap();
        let a = run_dpdl(&dims, &mut data.cursor(), &config, m.rho0(), TOL).unwrap();
        let b = run_dpdl(&dims, &mut data.cursor(), &config, m.rho0(), TOL).unwrap();
        assert_eq!(a.timeless(), b.timeless());
        assert_eq!(a.curve.len(), config.checkpoints);
        assert_eq!(a.curve.last().unwrap().t, config.iterations);
        let ts: Vec<usize> = a.curve.iter().map(|c| c.t).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]), "{ts:?}");
    }

    #[test]
    fn insufficient_dataset_is_rejected_up_front() {
        let m = model();
        let dims = m.dims();
        let mu = vec![0.25; 4];
        let config = small_config(100, 3);
        let data = sample_sync(&m, &mu, 250, 3).unwrap();
        let err = run_dpdl(&dims, &mut data.cursor(), &config, m.rho0(), TOL).unwrap_err();
        match err {
            Error::InsufficientData { required, available } => {
                assert_eq!(required, 300);
                assert_eq!(available, 250);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn async_stream_draws_initial_states_internally_and_stays_deterministic() {
        let m = model();
        let dims = m.dims();
        let behavior = Policy::uniform(2, 2);
        let config = small_config(600, 5);
        let data = sample_async(&m, &behavior, 200 + 600, 5, 40).unwrap();
        assert!(data.tuples.iter().all(|t| t.s0.is_none()));
        let a = run_dpdl(&dims, &mut data.cursor(), &config, m.rho0(), TOL).unwrap();
        let b = run_dpdl(&dims, &mut data.cursor(), &config, m.rho0(), TOL).unwrap();
        assert_eq!(a.timeless(), b.timeless());
        assert_eq!(a.consumed, 800);
    }

    #[test]
    fn iterates_and_averages_stay_feasible_over_a_real_run() {
        let m = model();
        let dims = m.dims();
        let mu = vec![0.35, 0.15, 0.25, 0.25];
        let config = small_config(5_000, 11);
        let data = sample_sync(&m, &mu, 200 + 5_000, 11).unwrap();
        let report = run_dpdl(&dims, &mut data.cursor(), &config, m.rho0(), TOL).unwrap();
        let regions = FeasibleRegions::new(config.psi, config.phi, &dims).unwrap();
        // The average of feasible iterates is feasible (the sets are convex).
        assert!(report.v_bar.iter().all(|v| v.abs() <= regions.r_v + 1e-9));
        let l1: f64 = report.lambda_bar.iter().sum();
        assert!(l1 <= regions.r_lambda + 1e-9);
        let mass: f64 = report.x_bar.iter().sum();
        assert!(mass <= regions.x_cap_mass + 1e-9);
        for (i, &x) in report.x_bar.iter().enumerate() {
            assert!(x > 0.0);
            assert!(x / report.mu_hat[i] <= regions.x_cap_per_coord + 1e-9);
        }
        // Curve snapshots expose the running average, most recent last.
        assert_eq!(report.curve.last().unwrap().x_bar, report.x_bar);
    }
}
