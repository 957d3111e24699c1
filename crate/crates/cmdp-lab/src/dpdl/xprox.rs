//! Constrained KL-prox step for the primal variable.
//!
//! Each x-update solves
//! `min_y <g, y> + KL(y || y0)` subject to `0 < y_i <= a_i`,
//! `sum_i y_i <= B1`, `sum_i c_i y_i <= B2`, with unnormalized relative
//! entropy as the prox term. The minimizer has the closed form
//! `y_i(alpha, beta) = min(y0_i exp(-g_i - alpha - c_i beta), a_i)` with
//! multipliers `alpha, beta >= 0` on the two coupled caps; exactly one of
//! the four sign patterns `(alpha, beta) in {(0,0), (+,0), (0,+), (+,+)}`
//! validates. The coupled multipliers come from monotone 1-D root finds
//! (nested for the both-active case).

use crate::dpdl::FeasibleRegions;
use crate::error::{Error, Result};
use crate::tol::NumericConfig;

/// Cap data of the deviation set in subproblem form:
/// `a_i = psi mu_hat_i/(1-gamma)`, `c_i = 1/mu_hat_i`, `B1 = 4/(1-gamma)`,
/// `B2 = N psi/(1-gamma)`.
#[derive(Debug, Clone)]
pub struct XConstraints {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub b1: f64,
    pub b2: f64,
}

impl XConstraints {
    pub fn of_regions(regions: &FeasibleRegions, mu_hat: &[f64]) -> Self {
        XConstraints {
            a: mu_hat.iter().map(|&m| regions.x_cap_per_coord * m).collect(),
            c: mu_hat.iter().map(|&m| 1.0 / m).collect(),
            b1: regions.x_cap_mass,
            b2: regions.x_cap_aggregate,
        }
    }
}

/// Which multiplier sign pattern solved the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktCase {
    /// Both coupled caps slack: `alpha = beta = 0`.
    Interior,
    /// Mass cap `sum y = B1` active: `alpha > 0`.
    MassActive,
    /// Ratio cap `sum c y = B2` active: `beta > 0`.
    RatioActive,
    /// Both caps active.
    BothActive,
}

#[derive(Debug, Clone)]
pub struct ProxSolution {
    pub y: Vec<f64>,
    pub case: KktCase,
    pub alpha: f64,
    pub beta: f64,
}

/// Smallest value the iterate is allowed to reach; multiplicative updates
/// keep y mathematically positive, this floor only absorbs exp underflow.
const POSITIVITY_FLOOR: f64 = 1e-300;

fn fill_y(y0: &[f64], g: &[f64], k: &XConstraints, alpha: f64, beta: f64, out: &mut [f64]) {
    for i in 0..y0.len() {
        let raw = y0[i] * (-g[i] - alpha - k.c[i] * beta).exp();
        out[i] = raw.min(k.a[i]).max(POSITIVITY_FLOOR);
    }
}

fn sums_at(y0: &[f64], g: &[f64], k: &XConstraints, alpha: f64, beta: f64) -> (f64, f64) {
    let mut mass = 0.0;
    let mut ratio = 0.0;
    for i in 0..y0.len() {
        let yi = (y0[i] * (-g[i] - alpha - k.c[i] * beta).exp()).min(k.a[i]);
        mass += yi;
        ratio += k.c[i] * yi;
    }
    (mass, ratio)
}

const BISECT_CAP: usize = 200;

/// Root of a continuous function with `f(0) > 0` that eventually goes
/// nonpositive: grow the bracket geometrically, then bisect until the value
/// tolerance or the iteration cap is met.
fn bisect_decreasing<F: FnMut(f64) -> f64>(mut f: F, value_tol: f64) -> Result<f64> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut grow = 0;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > BISECT_CAP {
            return Err(Error::KktNoCase);
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECT_CAP {
        mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() <= value_tol {
            return Ok(mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Exact KL-prox onto the capped set. `y0` must be strictly positive.
pub fn kl_prox(
    y0: &[f64],
    g: &[f64],
    k: &XConstraints,
    tol: &NumericConfig,
) -> Result<ProxSolution> {
    let n = y0.len();
    if g.len() != n || k.a.len() != n || k.c.len() != n {
        return Err(Error::Dimension("prox inputs disagree on length".into()));
    }
    if y0.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("prox base point must be strictly positive".into()));
    }
    let mut y = vec![0.0; n];

    // Case 1: both coupled caps slack at the uncoupled minimizer.
    let (mass, ratio) = sums_at(y0, g, k, 0.0, 0.0);
    if mass <= k.b1 && ratio <= k.b2 {
        fill_y(y0, g, k, 0.0, 0.0, &mut y);
        return finish(y, y0, g, k, KktCase::Interior, 0.0, 0.0, tol);
    }

    // Case 2: mass cap active alone.
    if mass > k.b1 {
        let alpha = bisect_decreasing(|a| sums_at(y0, g, k, a, 0.0).0 - k.b1, tol.bisection)?;
        let (_, r) = sums_at(y0, g, k, alpha, 0.0);
        if r <= k.b2 + tol.feasibility_slack {
            fill_y(y0, g, k, alpha, 0.0, &mut y);
            return finish(y, y0, g, k, KktCase::MassActive, alpha, 0.0, tol);
        }
    }

    // Case 3: ratio cap active alone.
    if ratio > k.b2 {
        let beta = bisect_decreasing(|b| sums_at(y0, g, k, 0.0, b).1 - k.b2, tol.bisection)?;
        let (m, _) = sums_at(y0, g, k, 0.0, beta);
        if m <= k.b1 + tol.feasibility_slack {
            fill_y(y0, g, k, 0.0, beta, &mut y);
            return finish(y, y0, g, k, KktCase::RatioActive, 0.0, beta, tol);
        }
    }

    // Case 4: both active. For each beta, alpha(beta) restores the mass cap
    // (zero when already slack); the outer root drives the ratio cap.
    let inner_tol = tol.bisection * 0.01;
    let alpha_of = |beta: f64| -> Result<f64> {
        if sums_at(y0, g, k, 0.0, beta).0 <= k.b1 {
            return Ok(0.0);
        }
        bisect_decreasing(|a| sums_at(y0, g, k, a, beta).0 - k.b1, inner_tol)
    };
    let mut outer_err = None;
    let beta = bisect_decreasing(
        |b| match alpha_of(b) {
            Ok(a) => sums_at(y0, g, k, a, b).1 - k.b2,
            Err(e) => {
                outer_err = Some(e);
                0.0
            }
        },
        tol.bisection,
    )?;
    if let Some(e) = outer_err {
        return Err(e);
    }
    let alpha = alpha_of(beta)?;
    fill_y(y0, g, k, alpha, beta, &mut y);
    finish(y, y0, g, k, KktCase::BothActive, alpha, beta, tol)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    y: Vec<f64>,
    y0: &[f64],
    g: &[f64],
    k: &XConstraints,
    case: KktCase,
    alpha: f64,
    beta: f64,
    tol: &NumericConfig,
) -> Result<ProxSolution> {
    let residual = kkt_residual(&y, y0, g, k, alpha, beta);
    if residual > tol.kkt {
        return Err(Error::KktNoCase);
    }
    Ok(ProxSolution { y, case, alpha, beta })
}

/// KKT residual of a candidate solution with multipliers `(alpha, beta)`:
/// the largest violation among primal feasibility, dual feasibility,
/// complementary slackness, and the capped-exponential stationarity form.
pub fn kkt_residual(
    y: &[f64],
    y0: &[f64],
    g: &[f64],
    k: &XConstraints,
    alpha: f64,
    beta: f64,
) -> f64 {
    let mut res = (-alpha).max(-beta).max(0.0);
    let mut mass = 0.0;
    let mut ratio = 0.0;
    for i in 0..y.len() {
        mass += y[i];
        ratio += k.c[i] * y[i];
        let stationary = (y0[i] * (-g[i] - alpha - k.c[i] * beta).exp())
            .min(k.a[i])
            .max(POSITIVITY_FLOOR);
        res = res.max((y[i] - stationary).abs());
        res = res.max(y[i] - k.a[i]);
    }
    res = res.max(mass - k.b1).max(ratio - k.b2);
    res = res.max((alpha * (mass - k.b1)).abs());
    res = res.max((beta * (ratio - k.b2)).abs());
    res
}

/// One-hot public form of the x-update: applies exponent
/// `g = -(eta/alpha_x) g_x` at `g_index` and solves the prox step.
#[allow(clippy::too_many_arguments)]
pub fn update_x(
    x: &[f64],
    g_index: usize,
    g_value: f64,
    eta: f64,
    alpha_x: f64,
    regions: &FeasibleRegions,
    mu_hat: &[f64],
    tol: &NumericConfig,
) -> Result<ProxSolution> {
    let k = XConstraints::of_regions(regions, mu_hat);
    let mut g = vec![0.0; x.len()];
    g[g_index] = -(eta / alpha_x) * g_value;
    kl_prox(x, &g, &k, tol)
}

/// How often the incremental aggregates are recomputed from scratch; keeps
/// float drift orders of magnitude under the feasibility slack.
const REFRESH_PERIOD: usize = 1024;

/// Stateful x-updater for the solver loop: exploits one-hot gradients with
/// cached mass/ratio aggregates so the common slack-cap case costs O(1).
pub struct XUpdater {
    k: XConstraints,
    sum_mass: f64,
    sum_ratio: f64,
    scratch_g: Vec<f64>,
    steps: usize,
}

impl XUpdater {
    pub fn new(regions: &FeasibleRegions, mu_hat: &[f64], x: &[f64]) -> Self {
        let k = XConstraints::of_regions(regions, mu_hat);
        let (sum_mass, sum_ratio) = exact_sums(&k, x);
        XUpdater {
            k,
            sum_mass,
            sum_ratio,
            scratch_g: vec![0.0; x.len()],
            steps: 0,
        }
    }

    pub fn constraints(&self) -> &XConstraints {
        &self.k
    }

    /// Apply one prox step with exponent `exponent` at coordinate `index`
    /// (i.e. `g_index = exponent`, all other entries zero), updating `x` in
    /// place.
    pub fn step(
        &mut self,
        x: &mut [f64],
        index: usize,
        exponent: f64,
        tol: &NumericConfig,
    ) -> Result<KktCase> {
        self.steps += 1;
        let candidate = (x[index] * (-exponent).exp())
            .min(self.k.a[index])
            .max(POSITIVITY_FLOOR);
        let new_mass = self.sum_mass + (candidate - x[index]);
        let new_ratio = self.sum_ratio + self.k.c[index] * (candidate - x[index]);
        if new_mass <= self.k.b1 && new_ratio <= self.k.b2 {
            x[index] = candidate;
            self.sum_mass = new_mass;
            self.sum_ratio = new_ratio;
            if self.steps % REFRESH_PERIOD == 0 {
                let (m, r) = exact_sums(&self.k, x);
                self.sum_mass = m;
                self.sum_ratio = r;
            }
            return Ok(KktCase::Interior);
        }

        self.scratch_g[index] = exponent;
        let solved = kl_prox(x, &self.scratch_g, &self.k, tol);
        self.scratch_g[index] = 0.0;
        let solution = solved?;
        x.copy_from_slice(&solution.y);
        let (m, r) = exact_sums(&self.k, x);
        self.sum_mass = m;
        self.sum_ratio = r;
        Ok(solution.case)
    }
}

fn exact_sums(k: &XConstraints, x: &[f64]) -> (f64, f64) {
    let mut mass = 0.0;
    let mut ratio = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        mass += xi;
        ratio += k.c[i] * xi;
    }
    (mass, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: &NumericConfig = &NumericConfig::DEFAULT;

    fn caps(a: &[f64], c: &[f64], b1: f64, b2: f64) -> XConstraints {
        XConstraints {
            a: a.to_vec(),
            c: c.to_vec(),
            b1,
            b2,
        }
    }

    #[test]
    fn zero_gradient_with_slack_caps_is_identity() {
        let y0 = vec![0.5, 0.25, 0.125];
        let k = caps(&[1.0; 3], &[1.0; 3], 10.0, 10.0);
        let sol = kl_prox(&y0, &[0.0; 3], &k, TOL).unwrap();
        assert_eq!(sol.case, KktCase::Interior);
        assert_eq!(sol.y, y0, "identity must be exact, not approximate");
    }

    #[test]
    fn one_hot_step_with_slack_caps_moves_one_coordinate() {
        let y0 = vec![0.5, 0.25];
        let k = caps(&[0.6, 10.0], &[1.0; 2], 100.0, 100.0);
        // Negative exponent grows the coordinate until its per-coordinate cap.
        let sol = kl_prox(&y0, &[-2.0, 0.0], &k, TOL).unwrap();
        assert_eq!(sol.case, KktCase::Interior);
        assert_eq!(sol.y[0], 0.6, "capped at a_0");
        assert_eq!(sol.y[1], 0.25);

        let sol = kl_prox(&y0, &[0.1, 0.0], &k, TOL).unwrap();
        assert!((sol.y[0] - 0.5 * (-0.1f64).exp()).abs() < 1e-15);
        assert_eq!(sol.y[1], 0.25);
    }

    #[test]
    fn mass_cap_solves_to_known_point() {
        // Both coordinates want e^2; the mass cap 3 forces y = (1.5, 1.5).
        let y0 = vec![1.0, 1.0];
        let k = caps(&[10.0, 10.0], &[1.0, 1.0], 3.0, 1e6);
        let sol = kl_prox(&y0, &[-2.0, -2.0], &k, TOL).unwrap();
        assert_eq!(sol.case, KktCase::MassActive);
        assert!((sol.y[0] - 1.5).abs() < 1e-9, "{:?}", sol.y);
        assert!((sol.y[1] - 1.5).abs() < 1e-9);
        assert!((sol.alpha - (2.0 - 1.5f64.ln())).abs() < 1e-9);
        assert!(kkt_residual(&sol.y, &y0, &[-2.0, -2.0], &k, sol.alpha, sol.beta) <= 1e-8);
    }

    #[test]
    fn mass_cap_with_a_binding_coordinate_cap() {
        let y0 = vec![1.0, 1.0];
        let k = caps(&[1.2, 10.0], &[1.0, 1.0], 3.0, 1e6);
        let sol = kl_prox(&y0, &[-2.0, -2.0], &k, TOL).unwrap();
        assert_eq!(sol.case, KktCase::MassActive);
        assert!((sol.y[0] - 1.2).abs() < 1e-9);
        assert!((sol.y[1] - 1.8).abs() < 1e-9);
    }

    #[test]
    fn ratio_cap_solves_and_reports_case() {
        let y0 = vec![1.0, 1.0];
        let k = caps(&[10.0, 10.0], &[1.0, 4.0], 1e6, 5.0);
        let g = [-2.0, -2.0];
        let sol = kl_prox(&y0, &g, &k, TOL).unwrap();
        assert_eq!(sol.case, KktCase::RatioActive);
        let ratio = sol.y[0] + 4.0 * sol.y[1];
        assert!((ratio - 5.0).abs() < 1e-9, "ratio = {ratio}");
        assert!(sol.beta > 0.0 && sol.alpha == 0.0);
        assert!(kkt_residual(&sol.y, &y0, &g, &k, sol.alpha, sol.beta) <= 1e-8);
    }

    #[test]
    fn both_caps_active_reach_the_hand_solved_vertex() {
        // With y = exp(2 - alpha - c_i beta), binding sum y = 3 and
        // y_1 + 4 y_2 = 5 gives y = (7/3, 2/3).
        let y0 = vec![1.0, 1.0];
        let k = caps(&[10.0, 10.0], &[1.0, 4.0], 3.0, 5.0);
        let g = [-2.0, -2.0];
        let sol = kl_prox(&y0, &g, &k, TOL).unwrap();
        assert_eq!(sol.case, KktCase::BothActive);
        assert!((sol.y[0] - 7.0 / 3.0).abs() < 1e-8, "{:?}", sol.y);
        assert!((sol.y[1] - 2.0 / 3.0).abs() < 1e-8);
        assert!((sol.beta - (3.5f64.ln() / 3.0)).abs() < 1e-8);
        assert!(sol.alpha > 0.0);
        assert!(kkt_residual(&sol.y, &y0, &g, &k, sol.alpha, sol.beta) <= 1e-8);
    }

    #[test]
    fn underflowing_exponent_keeps_strict_positivity() {
        let y0 = vec![1e-3, 0.5];
        let k = caps(&[1.0; 2], &[1.0; 2], 10.0, 10.0);
        let sol = kl_prox(&y0, &[800.0, 0.0], &k, TOL).unwrap();
        assert!(sol.y[0] > 0.0);
        assert_eq!(sol.y[1], 0.5);
    }

    #[test]
    fn residual_flags_bogus_multipliers() {
        let y0 = vec![1.0, 1.0];
        let k = caps(&[10.0, 10.0], &[1.0, 1.0], 100.0, 100.0);
        let sol = kl_prox(&y0, &[0.5, 0.5], &k, TOL).unwrap();
        // Claiming alpha > 0 while the mass cap is slack must blow the
        // complementarity term.
        let res = kkt_residual(&sol.y, &y0, &[0.5, 0.5], &k, 1.0, 0.0);
        assert!(res > 1.0);
    }

    #[test]
    fn updater_fast_path_matches_full_solver() {
        let dims = crate::model::ModelDims {
            num_states: 2,
            num_actions: 2,
            num_constraints: 1,
            discount: 0.5,
        };
        let regions = FeasibleRegions::new(2.0, 0.5, &dims).unwrap();
        let mu_hat = vec![0.4, 0.3, 0.2, 0.1];
        let x0 = vec![0.5, 0.5, 0.25, 0.125];
        let mut x_inc = x0.clone();
        let mut updater = XUpdater::new(&regions, &mu_hat, &x_inc);
        let mut x_ref = x0;

        // Deterministic exponent pattern alternating growth and decay,
        // strong enough to hit the coupled caps sometimes.
        let mut cases = std::collections::HashSet::new();
        for step in 0..400 {
            let idx = step % 4;
            let exponent = match step % 5 {
                0 => -1.2,
                1 => 0.4,
                2 => -0.9,
                3 => 0.05,
                _ => -2.0,
            };
            let case = updater.step(&mut x_inc, idx, exponent, TOL).unwrap();
            cases.insert(format!("{case:?}"));

            let mut g = vec![0.0; 4];
            g[idx] = exponent;
            let k = XConstraints::of_regions(&regions, &mu_hat);
            let sol = kl_prox(&x_ref, &g, &k, TOL).unwrap();
            x_ref = sol.y;
            for i in 0..4 {
                assert!(
                    (x_inc[i] - x_ref[i]).abs() <= 1e-9 * (1.0 + x_ref[i]),
                    "step {step} coord {i}: {} vs {}",
                    x_inc[i],
                    x_ref[i]
                );
            }
        }
        assert!(cases.len() >= 2, "expected the caps to activate: {cases:?}");
        // Invariants after the walk: inside X with strict positivity.
        let k = updater.constraints();
        let (mass, ratio) = super::exact_sums(k, &x_inc);
        assert!(mass <= k.b1 + 1e-9 && ratio <= k.b2 + 1e-9);
        assert!(x_inc.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn public_update_x_equals_core_solver() {
        let dims = crate::model::ModelDims {
            num_states: 2,
            num_actions: 2,
            num_constraints: 1,
            discount: 0.5,
        };
        let regions = FeasibleRegions::new(1.5, 0.4, &dims).unwrap();
        let mu_hat = vec![0.3, 0.3, 0.2, 0.2];
        let x = vec![0.4, 0.3, 0.2, 0.1];
        let (eta, alpha_x, g_val) = (0.05, 2.0, -8.0);
        let sol = update_x(&x, 2, g_val, eta, alpha_x, &regions, &mu_hat, TOL).unwrap();
        let mut g = vec![0.0; 4];
        g[2] = -(eta / alpha_x) * g_val;
        let k = XConstraints::of_regions(&regions, &mu_hat);
        let direct = kl_prox(&x, &g, &k, TOL).unwrap();
        assert_eq!(sol.y, direct.y);
    }
}
