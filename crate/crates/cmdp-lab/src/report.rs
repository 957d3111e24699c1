//! Solver output artifacts: the solve report, its checkpoint curve, and the
//! simulator-side diagnostics that recompute every derived number from the
//! stored iterates.
//!
//! The solver itself only ever fills the sample-path fields; the oracle
//! columns (duality gap, reward gap, violation) stay `None` until
//! [`fill_diagnostics`] is run with the true model and reference
//! distribution. That split keeps the learner honest: nothing the solver
//! writes can depend on simulator-side ground truth.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dpdl::DpdlConfig;
use crate::error::Result;
use crate::lp::{j_kappa, restricted_value, solve_cmdp};
use crate::model::{evaluate, CmdpModel, ModelDims, OccupancyMeasure, Policy};
use crate::tol::NumericConfig;

/// One row of the convergence curve. `x_bar` is the running average of the
/// primal iterate at this step, which is what makes the oracle columns
/// recomputable offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub eta: f64,
    pub wall_ms: f64,
    pub x_bar: Vec<f64>,
    pub gap_estimate: Option<f64>,
    pub reward_gap: Option<f64>,
    pub violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub dims: ModelDims,
    /// Effective configuration, echoed verbatim for reproducibility.
    pub config: DpdlConfig,
    pub mu_hat: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub x_bar: Vec<f64>,
    /// Row-normalization of `x_bar`.
    pub policy: Policy,
    /// Tuples drawn from the dataset: estimation batch plus one per step.
    pub consumed: usize,
    pub wall_ms: f64,
    pub curve: Vec<Checkpoint>,
    /// `j(psi) - J_kappa(x_bar)`; needs the true reference distribution.
    pub gap_estimate: Option<f64>,
    /// `J(pi*) - J(pi_bar)` against the exact optimum.
    pub reward_gap: Option<f64>,
    /// Total positive constraint violation of the output policy.
    pub violation: Option<f64>,
    pub j_star: Option<f64>,
}

impl SolveReport {
    /// Copy with every wall-clock field zeroed. Reproducibility is asserted
    /// on this view; timing is the one legitimately nondeterministic output.
    pub fn timeless(&self) -> SolveReport {
        let mut r = self.clone();
        r.wall_ms = 0.0;
        for c in &mut r.curve {
            c.wall_ms = 0.0;
        }
        r
    }

    /// Plot-ready curve CSV: `t, gap_estimate, reward_gap, violation, eta,
    /// wall_ms`, one row per checkpoint, empty cells for unfilled oracle
    /// columns.
    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,gap_estimate,reward_gap,violation,eta,wall_ms")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for c in &self.curve {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.t,
                opt(c.gap_estimate),
                opt(c.reward_gap),
                opt(c.violation),
                c.eta,
                c.wall_ms
            )?;
        }
        Ok(())
    }
}

/// Recomputed report numbers plus any disagreements with already-stored
/// values beyond `MISMATCH_TOL`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub j_star: f64,
    pub gap_estimate: f64,
    pub reward_gap: f64,
    pub violation: f64,
    pub curve_gap: Vec<f64>,
    pub curve_reward_gap: Vec<f64>,
    pub curve_violation: Vec<f64>,
    pub mismatches: Vec<String>,
}

/// Reported numbers must agree with their recomputation within this.
pub const MISMATCH_TOL: f64 = 1e-6;

/// Duality gaps are maxima over a set containing the evaluated point, so
/// they can only go below zero by LP tolerance.
pub const GAP_NEGATIVITY_TOL: f64 = 1e-7;

fn policy_numbers(
    model: &CmdpModel,
    policy: &Policy,
    j_star: f64,
) -> Result<(f64, f64)> {
    let (j, ju) = evaluate(model, policy)?;
    let violation = ju.iter().map(|v| (-v).max(0.0)).sum();
    Ok((j_star - j, violation))
}

/// Recompute every derived number in `report` from the stored iterates, the
/// true model, and the true reference distribution `mu` (needed to form the
/// reweighting `W`). Flags, but does not fail on, disagreements with stored
/// values; the caller decides whether a flag is fatal.
pub fn diagnose(
    report: &SolveReport,
    model: &CmdpModel,
    mu: &[f64],
    tol: &NumericConfig,
) -> Result<Diagnostics> {
    let cfg = &report.config;
    let opt = solve_cmdp(model, tol)?;
    let j_star = opt.opt_reward;

    let j_psi = restricted_value(model, mu, &report.mu_hat, cfg.psi, cfg.kappa, cfg.phi, tol)?;
    let gap_estimate =
        j_psi - j_kappa(model, mu, &report.mu_hat, cfg.kappa, cfg.phi, &report.x_bar)?;
    let (reward_gap, violation) = policy_numbers(model, &report.policy, j_star)?;

    let mut mismatches = Vec::new();
    let mut check = |name: &str, stored: Option<f64>, fresh: f64| {
        if let Some(s) = stored {
            if (s - fresh).abs() > MISMATCH_TOL {
                mismatches.push(format!("{name}: stored {s} vs recomputed {fresh}"));
            }
        }
    };
    check("gap_estimate", report.gap_estimate, gap_estimate);
    check("reward_gap", report.reward_gap, reward_gap);
    check("violation", report.violation, violation);
    check("j_star", report.j_star, j_star);
    if gap_estimate < -GAP_NEGATIVITY_TOL {
        mismatches.push(format!(
            "gap_estimate = {gap_estimate} below -{GAP_NEGATIVITY_TOL}: restricted maximum \
             undercuts its own feasible point"
        ));
    }

    let dims = model.dims();
    let mut curve_gap = Vec::with_capacity(report.curve.len());
    let mut curve_reward_gap = Vec::with_capacity(report.curve.len());
    let mut curve_violation = Vec::with_capacity(report.curve.len());
    for (idx, c) in report.curve.iter().enumerate() {
        let g = j_psi - j_kappa(model, mu, &report.mu_hat, cfg.kappa, cfg.phi, &c.x_bar)?;
        let nu = OccupancyMeasure::new(dims.num_states, dims.num_actions, c.x_bar.clone())?;
        let pi = crate::model::policy_of_occupancy(&nu, tol)?;
        let (rg, vi) = policy_numbers(model, &pi, j_star)?;
        let mut check_c = |name: &str, stored: Option<f64>, fresh: f64| {
            if let Some(s) = stored {
                if (s - fresh).abs() > MISMATCH_TOL {
                    mismatches
                        .push(format!("curve[{idx}].{name}: stored {s} vs recomputed {fresh}"));
                }
            }
        };
        check_c("gap_estimate", c.gap_estimate, g);
        check_c("reward_gap", c.reward_gap, rg);
        check_c("violation", c.violation, vi);
        curve_gap.push(g);
        curve_reward_gap.push(rg);
        curve_violation.push(vi);
    }

    Ok(Diagnostics {
        j_star,
        gap_estimate,
        reward_gap,
        violation,
        curve_gap,
        curve_reward_gap,
        curve_violation,
        mismatches,
    })
}

/// Run [`diagnose`] and write the recomputed numbers into the report's
/// summary and curve columns.
pub fn fill_diagnostics(
    report: &mut SolveReport,
    model: &CmdpModel,
    mu: &[f64],
    tol: &NumericConfig,
) -> Result<Diagnostics> {
    let d = diagnose(report, model, mu, tol)?;
    report.j_star = Some(d.j_star);
    report.gap_estimate = Some(d.gap_estimate);
    report.reward_gap = Some(d.reward_gap);
    report.violation = Some(d.violation);
    for (i, c) in report.curve.iter_mut().enumerate() {
        c.gap_estimate = Some(d.curve_gap[i]);
        c.reward_gap = Some(d.curve_reward_gap[i]);
        c.violation = Some(d.curve_violation[i]);
    }
    Ok(d)
}

/// Reward gap and violation of an arbitrary policy against the exact
/// optimum; the single-policy core of the diagnostics, reused by sweeps.
pub fn policy_gap(model: &CmdpModel, policy: &Policy, tol: &NumericConfig) -> Result<(f64, f64)> {
    let opt = solve_cmdp(model, tol)?;
    policy_numbers(model, policy, opt.opt_reward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpdl::DpdlConfig;

    const TOL: &NumericConfig = &NumericConfig::DEFAULT;

    fn config() -> DpdlConfig {
        DpdlConfig {
            iterations: 10,
            epsilon: 0.05,
            delta: 0.1,
            psi: 2.0,
            phi: 0.5,
            kappa: 0.0,
            eta: 1e-6,
            alpha_v: 1.0,
            alpha_lambda: 1.0,
            alpha_x: 1.0,
            estimation_samples: 10,
            varsigma: 0.01,
            seed: 0,
            eta_cap_relax: 1.0,
            checkpoints: 2,
        }
    }

    fn model() -> CmdpModel {
        let transition = vec![
            1.0, 0.0, // (s0, a0) stay
            0.0, 1.0, // (s0, a1) go
            0.0, 1.0, // (s1, a0) stay
            1.0, 0.0, // (s1, a1) back
        ];
        CmdpModel::new(
            2,
            2,
            0.5,
            transition,
            vec![0.0, 1.0, 0.2, 0.0],
            vec![],
            vec![1.0, 0.0],
            TOL,
        )
        .unwrap()
    }

    fn report(model: &CmdpModel) -> SolveReport {
        let dims = model.dims();
        let x_bar = vec![0.4, 0.6, 0.8, 0.2];
        let nu = OccupancyMeasure::new(2, 2, x_bar.clone()).unwrap();
        let policy = crate::model::policy_of_occupancy(&nu, TOL).unwrap();
        SolveReport {
            dims,
            config: config(),
            mu_hat: vec![0.25; 4],
            v_bar: vec![0.0; 2],
            lambda_bar: vec![],
            x_bar,
            policy,
            consumed: 20,
            wall_ms: 12.5,
            curve: vec![
                Checkpoint {
                    t: 5,
                    eta: 1e-6,
                    wall_ms: 5.0,
                    x_bar: vec![0.25; 4],
                    gap_estimate: None,
                    reward_gap: None,
                    violation: None,
                },
                Checkpoint {
                    t: 10,
                    eta: 1e-6,
                    wall_ms: 11.0,
                    x_bar: vec![0.4, 0.6, 0.8, 0.2],
                    gap_estimate: None,
                    reward_gap: None,
                    violation: None,
                },
            ],
            gap_estimate: None,
            reward_gap: None,
            violation: None,
            j_star: None,
        }
    }

    #[test]
    fn csv_has_header_plus_one_row_per_checkpoint() {
        let m = model();
        let r = report(&m);
        let mut buf = Vec::new();
        r.write_curve_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,gap_estimate,reward_gap,violation,eta,wall_ms");
        // Unfilled oracle columns are empty cells, not zeros.
        assert!(lines[1].starts_with("5,,,,"));
    }

    #[test]
    fn fill_populates_every_oracle_column_and_diagnose_agrees() {
        let m = model();
        let mu = vec![0.25; 4];
        let mut r = report(&m);
        let d = fill_diagnostics(&mut r, &m, &mu, TOL).unwrap();
        assert!(d.mismatches.is_empty(), "{:?}", d.mismatches);
        assert!(r.gap_estimate.is_some() && r.curve[0].gap_estimate.is_some());
        assert!(d.gap_estimate >= -GAP_NEGATIVITY_TOL);
        // A second diagnose on the filled report must find zero disagreement.
        let d2 = diagnose(&r, &m, &mu, TOL).unwrap();
        assert!(d2.mismatches.is_empty(), "{:?}", d2.mismatches);
    }

    #[test]
    fn diagnose_flags_a_corrupted_report() {
        let m = model();
        let mu = vec![0.25; 4];
        let mut r = report(&m);
        fill_diagnostics(&mut r, &m, &mu, TOL).unwrap();
        r.reward_gap = Some(r.reward_gap.unwrap() + 1e-3);
        let d = diagnose(&r, &m, &mu, TOL).unwrap();
        assert!(d.mismatches.iter().any(|s| s.starts_with("reward_gap")));
    }

    #[test]
    fn timeless_strips_only_clocks() {
        let m = model();
        let r = report(&m);
        let t = r.timeless();
        assert_eq!(t.wall_ms, 0.0);
        assert!(t.curve.iter().all(|c| c.wall_ms == 0.0));
        assert_eq!(t.x_bar, r.x_bar);
        assert_eq!(t.curve[1].x_bar, r.curve[1].x_bar);
    }
}
