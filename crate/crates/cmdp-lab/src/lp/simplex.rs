//! Dense revised simplex with Bland's rule.
//!
//! Small-scale, deterministic, double precision. The solver canonicalizes to
//! standard form (all variables nonnegative, equality rows, rhs >= 0), runs a
//! two-phase revised simplex with an explicitly maintained basis inverse, and
//! re-verifies every Optimal answer against primal feasibility, dual
//! feasibility, and complementary slackness before returning it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tol::NumericConfig;

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// Lower bound of a variable: zero or free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerBound {
    Zero,
    NegInfinity,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Canonical LP container used by every oracle query.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    maximize: bool,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    lower: Vec<LowerBound>,
    /// `f64::INFINITY` when absent; finite uppers require a zero lower bound.
    upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal { value: f64, primal: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpResult {
    pub fn optimal(&self) -> Option<(f64, &[f64])> {
        match self {
            LpResult::Optimal { value, primal } => Some((*value, primal)),
            _ => None,
        }
    }
}

impl LinearProgram {
    /// A minimization problem over `num_vars` variables with zero objective,
    /// lower bounds 0, and no upper bounds.
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            maximize: false,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            lower: vec![LowerBound::Zero; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn set_objective(&mut self, maximize: bool, coeffs: Vec<f64>) -> Result<()> {
        if coeffs.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "objective has {} coefficients, expected {}",
                coeffs.len(),
                self.num_vars
            )));
        }
        self.maximize = maximize;
        self.objective = coeffs;
        Ok(())
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> Result<()> {
        if coeffs.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "constraint has {} coefficients, expected {}",
                coeffs.len(),
                self.num_vars
            )));
        }
        if !rhs.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite constraint entry".into()));
        }
        self.constraints.push(Constraint { coeffs, sense, rhs });
        Ok(())
    }

    pub fn add_sparse_row(&mut self, entries: &[(usize, f64)], sense: Sense, rhs: f64) -> Result<()> {
        let mut coeffs = vec![0.0; self.num_vars];
        for &(j, c) in entries {
            if j >= self.num_vars {
                return Err(Error::Dimension(format!("variable index {j} out of range")));
            }
            coeffs[j] += c;
        }
        self.add_row(coeffs, sense, rhs)
    }

    /// Make variable `j` free (lower bound -infinity).
    pub fn set_free(&mut self, j: usize) {
        self.lower[j] = LowerBound::NegInfinity;
    }

    /// Give variable `j` a finite upper bound (requires zero lower bound).
    pub fn set_upper(&mut self, j: usize, upper: f64) {
        self.upper[j] = upper;
    }
}

/// Solve the LP.
///
/// Statuses are `Optimal`, `Infeasible`, or `Unbounded`. An `Optimal` answer
/// has already passed the independent feasibility, dual-feasibility, and
/// complementary-slackness checks; a failed check surfaces as
/// `Error::LpInternal` instead of a wrong answer.
pub fn solve_lp(lp: &LinearProgram, tol: &NumericConfig) -> Result<LpResult> {
    for (j, (&lo, &up)) in lp.lower.iter().zip(&lp.upper).enumerate() {
        if up.is_finite() && lo == LowerBound::NegInfinity {
            return Err(Error::InvalidArgument(format!(
                "variable {j}: finite upper bound requires zero lower bound"
            )));
        }
        if up.is_finite() && up < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "variable {j}: negative upper bound {up}"
            )));
        }
    }

    let mut canon = Canonical::build(lp);
    match canon.two_phase(tol)? {
        CanonOutcome::Infeasible => Ok(LpResult::Infeasible),
        CanonOutcome::Unbounded => Ok(LpResult::Unbounded),
        CanonOutcome::Optimal => {
            let primal = canon.extract_primal(lp);
            let value = lp
                .objective
                .iter()
                .zip(&primal)
                .map(|(c, x)| c * x)
                .sum::<f64>();
            verify_optimal(lp, &canon, &primal, tol)?;
            Ok(LpResult::Optimal { value, primal })
        }
    }
}

enum CanonOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Standard-form problem: min c z, A z = b, z >= 0, b >= 0.
struct Canonical {
    m: usize,
    /// Column-major constraint matrix, one dense column per variable.
    cols: Vec<Vec<f64>>,
    b: Vec<f64>,
    /// Phase-2 objective.
    c: Vec<f64>,
    /// Phase-2 sign: +1 if the original problem minimizes, -1 if it maximizes.
    obj_sign: f64,
    /// Column classes: index of first slack and first artificial column.
    first_artificial: usize,
    /// For each original variable: its positive column and optional negative column.
    var_cols: Vec<(usize, Option<usize>)>,
    basis: Vec<usize>,
    b_inv: DMatrix<f64>,
    xb: Vec<f64>,
    is_basic: Vec<bool>,
}

impl Canonical {
    fn build(lp: &LinearProgram) -> Canonical {
        // Rows: original constraints plus one `x_j <= u` row per finite upper bound.
        let mut rows: Vec<(Vec<(usize, f64)>, Sense, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                let sparse: Vec<(usize, f64)> = c
                    .coeffs
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect();
                (sparse, c.sense, c.rhs)
            })
            .collect();
        for (j, &u) in lp.upper.iter().enumerate() {
            if u.is_finite() {
                rows.push((vec![(j, 1.0)], Sense::Le, u));
            }
        }
        let m = rows.len();

        // Structural columns; free variables split into a difference of two.
        let mut var_cols = Vec::with_capacity(lp.num_vars);
        let mut num_structural = 0usize;
        for &lo in &lp.lower {
            match lo {
                LowerBound::Zero => {
                    var_cols.push((num_structural, None));
                    num_structural += 1;
                }
                LowerBound::NegInfinity => {
                    var_cols.push((num_structural, Some(num_structural + 1)));
                    num_structural += 2;
                }
            }
        }

        let obj_sign = if lp.maximize { -1.0 } else { 1.0 };
        let mut cols: Vec<Vec<f64>> = vec![vec![0.0; m]; num_structural];
        let mut c = vec![0.0; num_structural];
        for (j, &(pos, neg)) in var_cols.iter().enumerate() {
            c[pos] = obj_sign * lp.objective[j];
            if let Some(neg) = neg {
                c[neg] = -obj_sign * lp.objective[j];
            }
        }

        // Normalize rhs signs, then write structural coefficients.
        let mut b = vec![0.0; m];
        let mut senses = vec![Sense::Eq; m];
        for (i, (sparse, sense, rhs)) in rows.iter().enumerate() {
            let flip = *rhs < 0.0;
            let sign = if flip { -1.0 } else { 1.0 };
            b[i] = sign * rhs;
            senses[i] = match (sense, flip) {
                (Sense::Le, false) | (Sense::Ge, true) => Sense::Le,
                (Sense::Ge, false) | (Sense::Le, true) => Sense::Ge,
                (Sense::Eq, _) => Sense::Eq,
            };
            for &(j, v) in sparse {
                let (pos, neg) = var_cols[j];
                cols[pos][i] += sign * v;
                if let Some(neg) = neg {
                    cols[neg][i] -= sign * v;
                }
            }
        }

        // Slack / surplus columns; Le slacks double as initial basis columns.
        let mut basis = vec![usize::MAX; m];
        for (i, sense) in senses.iter().enumerate() {
            match sense {
                Sense::Le => {
                    let mut col = vec![0.0; m];
                    col[i] = 1.0;
                    cols.push(col);
                    c.push(0.0);
                    basis[i] = cols.len() - 1;
                }
                Sense::Ge => {
                    let mut col = vec![0.0; m];
                    col[i] = -1.0;
                    cols.push(col);
                    c.push(0.0);
                }
                Sense::Eq => {}
            }
        }

        // Artificial columns complete the identity basis.
        let first_artificial = cols.len();
        for (i, slot) in basis.iter_mut().enumerate() {
            if *slot == usize::MAX {
                let mut col = vec![0.0; m];
                col[i] = 1.0;
                cols.push(col);
                c.push(0.0);
                *slot = cols.len() - 1;
            }
        }

        let mut is_basic = vec![false; cols.len()];
        for &j in &basis {
            is_basic[j] = true;
        }
        let xb = b.clone();
        Canonical {
            m,
            cols,
            b,
            c,
            obj_sign,
            first_artificial,
            var_cols,
            basis,
            b_inv: DMatrix::identity(m, m),
            xb,
            is_basic,
        }
    }

    fn two_phase(&mut self, tol: &NumericConfig) -> Result<CanonOutcome> {
        let n = self.cols.len();
        if self.first_artificial < n {
            // Phase 1: minimize the sum of artificial levels.
            let mut c1 = vec![0.0; n];
            for cj in c1.iter_mut().skip(self.first_artificial) {
                *cj = 1.0;
            }
            match self.optimize(&c1, self.first_artificial, tol)? {
                CanonOutcome::Unbounded => {
                    return Err(Error::LpInternal(
                        "phase-1 objective is bounded below by zero".into(),
                    ))
                }
                CanonOutcome::Infeasible => unreachable!("optimize never reports infeasible"),
                CanonOutcome::Optimal => {}
            }
            let art_level: f64 = self
                .basis
                .iter()
                .zip(&self.xb)
                .filter(|(j, _)| **j >= self.first_artificial)
                .map(|(_, x)| x.max(0.0))
                .sum();
            if art_level > tol.lp_feasibility {
                return Ok(CanonOutcome::Infeasible);
            }
            self.expel_artificials(tol)?;
        }
        let c2 = self.c.clone();
        self.optimize(&c2, self.first_artificial, tol)
    }

    /// Pivot remaining zero-level artificial variables out of the basis;
    /// delete rows proven redundant.
    fn expel_artificials(&mut self, tol: &NumericConfig) -> Result<()> {
        let mut dead_rows = Vec::new();
        for r in 0..self.m {
            if self.basis[r] < self.first_artificial {
                continue;
            }
            let mut replaced = false;
            for j in 0..self.first_artificial {
                if self.is_basic[j] {
                    continue;
                }
                // (B^-1 A_j)[r]
                let d_r: f64 = (0..self.m)
                    .map(|k| self.b_inv[(r, k)] * self.cols[j][k])
                    .sum();
                if d_r.abs() > 1e-7 {
                    let d = self.direction(j);
                    self.pivot(j, r, &d, 0.0);
                    replaced = true;
                    break;
                }
            }
            if !replaced {
                dead_rows.push(r);
            }
        }
        if !dead_rows.is_empty() {
            self.delete_rows(&dead_rows, tol)?;
        }
        Ok(())
    }

    /// Physically remove redundant rows (and all artificial columns), then
    /// refactorize the basis from scratch.
    fn delete_rows(&mut self, dead: &[usize], tol: &NumericConfig) -> Result<()> {
        let keep: Vec<usize> = (0..self.m).filter(|r| !dead.contains(r)).collect();
        let remap = |v: &[f64]| -> Vec<f64> { keep.iter().map(|&r| v[r]).collect() };
        self.b = remap(&self.b);
        for col in &mut self.cols {
            *col = remap(col);
        }
        self.cols.truncate(self.first_artificial);
        self.c.truncate(self.first_artificial);
        self.m = keep.len();
        self.basis = self
            .basis
            .iter()
            .enumerate()
            .filter(|(r, _)| !dead.contains(r))
            .map(|(_, &j)| j)
            .collect();
        self.is_basic = vec![false; self.cols.len()];
        for &j in &self.basis {
            debug_assert!(j < self.first_artificial, "artificial survived row deletion");
            self.is_basic[j] = true;
        }
        self.refactorize(tol)
    }

    fn refactorize(&mut self, _tol: &NumericConfig) -> Result<()> {
        let mut bm = DMatrix::<f64>::zeros(self.m, self.m);
        for (k, &j) in self.basis.iter().enumerate() {
            for r in 0..self.m {
                bm[(r, k)] = self.cols[j][r];
            }
        }
        self.b_inv = bm
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::LpInternal("singular basis during refactorization".into()))?;
        let xb = &self.b_inv * DVector::from_column_slice(&self.b);
        self.xb = xb.iter().copied().collect();
        Ok(())
    }

    fn direction(&self, j: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.m];
        let col = &self.cols[j];
        for r in 0..self.m {
            let mut acc = 0.0;
            for k in 0..self.m {
                acc += self.b_inv[(r, k)] * col[k];
            }
            d[r] = acc;
        }
        d
    }

    fn pivot(&mut self, enter: usize, row: usize, d: &[f64], theta: f64) {
        let leave = self.basis[row];
        self.is_basic[leave] = false;
        self.is_basic[enter] = true;
        self.basis[row] = enter;
        let piv = d[row];
        // Row `row` of B^-1 is scaled by 1/piv; other rows eliminate d.
        for k in 0..self.m {
            self.b_inv[(row, k)] /= piv;
        }
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let f = d[r];
            if f == 0.0 {
                continue;
            }
            for k in 0..self.m {
                let v = self.b_inv[(row, k)] * f;
                self.b_inv[(r, k)] -= v;
            }
        }
        for r in 0..self.m {
            if r == row {
                continue;
            }
            self.xb[r] -= theta * d[r];
            if self.xb[r] < 0.0 && self.xb[r] > -1e-11 {
                self.xb[r] = 0.0;
            }
        }
        self.xb[row] = theta;
    }

    /// Bland-rule simplex over columns `< ban_from` not marked banned.
    ///
    /// Never reports Infeasible; the caller interprets phase-1 objective.
    fn optimize(&mut self, c: &[f64], ban_from: usize, tol: &NumericConfig) -> Result<CanonOutcome> {
        // Phase 1 must consider artificial columns (they carry the objective);
        // phase 2 bans them from entering. Banned = artificial and nonbasic.
        let phase1 = c.iter().skip(self.first_artificial).any(|&v| v != 0.0);
        let n = self.cols.len();
        let max_iters = 20_000 + 50 * (n + self.m);
        let mut since_refactor = 0usize;

        for _ in 0..max_iters {
            // y = (B^-1)^T c_B
            let mut y = vec![0.0; self.m];
            for (k, &j) in self.basis.iter().enumerate() {
                let cb = c[j];
                if cb == 0.0 {
                    continue;
                }
                for r in 0..self.m {
                    y[r] += self.b_inv[(k, r)] * cb;
                }
            }

            // Bland: smallest-index nonbasic column with negative reduced cost.
            let mut enter = None;
            for j in 0..n {
                if self.is_basic[j] || (!phase1 && j >= ban_from) {
                    continue;
                }
                let col = &self.cols[j];
                let mut rc = c[j];
                for r in 0..self.m {
                    rc -= y[r] * col[r];
                }
                if rc < -1e-9 {
                    enter = Some(j);
                    break;
                }
            }
            let Some(enter) = enter else {
                return Ok(CanonOutcome::Optimal);
            };

            let d = self.direction(enter);
            // Ratio test with Bland tie-breaking on the leaving variable index.
            let mut theta = f64::INFINITY;
            let mut row = None;
            for r in 0..self.m {
                if d[r] > 1e-9 {
                    let ratio = (self.xb[r].max(0.0)) / d[r];
                    let better = match row {
                        None => true,
                        Some(cur) => {
                            ratio < theta - 1e-12
                                || (ratio <= theta + 1e-12 && self.basis[r] < self.basis[cur])
                        }
                    };
                    if better {
                        theta = ratio.max(0.0);
                        row = Some(r);
                    }
                }
            }
            let Some(row) = row else {
                return Ok(CanonOutcome::Unbounded);
            };

            self.pivot(enter, row, &d, theta);
            since_refactor += 1;
            if since_refactor >= 64 {
                self.refactorize(tol)?;
                since_refactor = 0;
            }
        }
        Err(Error::LpInternal(format!(
            "pivot limit {max_iters} exhausted (anti-cycling should prevent this)"
        )))
    }

    fn extract_primal(&self, lp: &LinearProgram) -> Vec<f64> {
        let mut z = vec![0.0; self.cols.len()];
        for (k, &j) in self.basis.iter().enumerate() {
            z[j] = self.xb[k].max(0.0);
        }
        lp.lower
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let (pos, neg) = self.var_cols[j];
                z[pos] - neg.map_or(0.0, |nc| z[nc])
            })
            .collect()
    }
}

/// Independent optimality audit: primal feasibility on the original rows and
/// bounds, dual feasibility and complementary slackness in canonical space,
/// and the primal-dual objective gap.
fn verify_optimal(
    lp: &LinearProgram,
    canon: &Canonical,
    primal: &[f64],
    tol: &NumericConfig,
) -> Result<()> {
    let t = tol.lp_optimality;
    for (i, con) in lp.constraints.iter().enumerate() {
        let lhs: f64 = con.coeffs.iter().zip(primal).map(|(c, x)| c * x).sum();
        let slack = lhs - con.rhs;
        let scale = 1.0 + con.rhs.abs();
        let ok = match con.sense {
            Sense::Le => slack <= t * scale,
            Sense::Ge => slack >= -t * scale,
            Sense::Eq => slack.abs() <= t * scale,
        };
        if !ok {
            return Err(Error::LpInternal(format!(
                "primal infeasibility {slack:.3e} on row {i}"
            )));
        }
    }
    for (j, &x) in primal.iter().enumerate() {
        if lp.lower[j] == LowerBound::Zero && x < -t {
            return Err(Error::LpInternal(format!("variable {j} below zero: {x:.3e}")));
        }
        if x > lp.upper[j] + t * (1.0 + lp.upper[j].abs()) {
            return Err(Error::LpInternal(format!(
                "variable {j} above its bound: {x:.3e} > {}",
                lp.upper[j]
            )));
        }
    }

    // Dual feasibility + complementary slackness + zero duality gap, all in
    // canonical space (min c z, A z = b, z >= 0).
    let mut y = vec![0.0; canon.m];
    for (k, &j) in canon.basis.iter().enumerate() {
        let cb = canon.c[j];
        if cb == 0.0 {
            continue;
        }
        for r in 0..canon.m {
            y[r] += canon.b_inv[(k, r)] * cb;
        }
    }
    let mut z = vec![0.0; canon.cols.len()];
    for (k, &j) in canon.basis.iter().enumerate() {
        z[j] = canon.xb[k].max(0.0);
    }
    let cscale = 1.0 + canon.c.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for j in 0..canon.first_artificial {
        let col = &canon.cols[j];
        let mut rc = canon.c[j];
        for r in 0..canon.m {
            rc -= y[r] * col[r];
        }
        if rc < -t * cscale {
            return Err(Error::LpInternal(format!(
                "dual infeasibility: reduced cost {rc:.3e} on column {j}"
            )));
        }
        if z[j] > t && rc.abs() > t * cscale * (1.0 + z[j]) {
            return Err(Error::LpInternal(format!(
                "complementary slackness violated on column {j}: z = {:.3e}, rc = {rc:.3e}",
                z[j]
            )));
        }
    }
    let primal_obj: f64 = canon.c.iter().zip(&z).map(|(c, x)| c * x).sum();
    let dual_obj: f64 = y.iter().zip(&canon.b).map(|(y, b)| y * b).sum();
    if (primal_obj - dual_obj).abs() > t * (1.0 + primal_obj.abs()) {
        return Err(Error::LpInternal(format!(
            "duality gap {:.3e}",
            primal_obj - dual_obj
        )));
    }
    let _ = canon.obj_sign;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: &NumericConfig = &NumericConfig::DEFAULT;

    #[test]
    fn one_var_box() {
        let mut lp = LinearProgram::new(1);
        lp.set_objective(true, vec![1.0]).unwrap();
        lp.add_row(vec![1.0], Sense::Le, 3.0).unwrap();
        let (value, primal) = solve_lp(&lp, TOL).unwrap().optimal().map(|(v, p)| (v, p.to_vec())).unwrap();
        assert!((value - 3.0).abs() < 1e-9);
        assert!((primal[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_pair_of_bounds() {
        let mut lp = LinearProgram::new(1);
        lp.set_objective(true, vec![1.0]).unwrap();
        lp.add_row(vec![1.0], Sense::Ge, 1.0).unwrap();
        lp.add_row(vec![1.0], Sense::Le, 0.0).unwrap();
        assert_eq!(solve_lp(&lp, TOL).unwrap(), LpResult::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LinearProgram::new(1);
        lp.set_objective(true, vec![1.0]).unwrap();
        lp.add_row(vec![1.0], Sense::Ge, 1.0).unwrap();
        assert_eq!(solve_lp(&lp, TOL).unwrap(), LpResult::Unbounded);
    }

    #[test]
    fn classic_two_var() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18.
        let mut lp = LinearProgram::new(2);
        lp.set_objective(true, vec![3.0, 5.0]).unwrap();
        lp.add_row(vec![1.0, 0.0], Sense::Le, 4.0).unwrap();
        lp.add_row(vec![0.0, 2.0], Sense::Le, 12.0).unwrap();
        lp.add_row(vec![3.0, 2.0], Sense::Le, 18.0).unwrap();
        let (value, primal) = match solve_lp(&lp, TOL).unwrap() {
            LpResult::Optimal { value, primal } => (value, primal),
            other => panic!("{other:?}"),
        };
        assert!((value - 36.0).abs() < 1e-9);
        assert!((primal[0] - 2.0).abs() < 1e-9);
        assert!((primal[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_free_variable() {
        // min x + y st x - y = 1, x + y >= 3, y free.
        let mut lp = LinearProgram::new(2);
        lp.set_objective(false, vec![1.0, 1.0]).unwrap();
        lp.set_free(1);
        lp.add_row(vec![1.0, -1.0], Sense::Eq, 1.0).unwrap();
        lp.add_row(vec![1.0, 1.0], Sense::Ge, 3.0).unwrap();
        let (value, primal) = match solve_lp(&lp, TOL).unwrap() {
            LpResult::Optimal { value, primal } => (value, primal),
            other => panic!("{other:?}"),
        };
        assert!((value - 3.0).abs() < 1e-9, "value {value}");
        assert!((primal[0] - 2.0).abs() < 1e-9);
        assert!((primal[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upper_bounds_via_container() {
        // max x + y st x + y <= 10, x <= 2, y <= 3 (bounds, not rows).
        let mut lp = LinearProgram::new(2);
        lp.set_objective(true, vec![1.0, 1.0]).unwrap();
        lp.set_upper(0, 2.0);
        lp.set_upper(1, 3.0);
        lp.add_row(vec![1.0, 1.0], Sense::Le, 10.0).unwrap();
        let (value, _) = solve_lp(&lp, TOL).unwrap().optimal().map(|(v, p)| (v, p.to_vec())).unwrap();
        assert!((value - 5.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_redundant_rows() {
        // Two copies of the same equality force a redundant row in phase 1.
        let mut lp = LinearProgram::new(2);
        lp.set_objective(true, vec![1.0, 2.0]).unwrap();
        lp.add_row(vec![1.0, 1.0], Sense::Eq, 1.0).unwrap();
        lp.add_row(vec![1.0, 1.0], Sense::Eq, 1.0).unwrap();
        let (value, primal) = match solve_lp(&lp, TOL).unwrap() {
            LpResult::Optimal { value, primal } => (value, primal),
            other => panic!("{other:?}"),
        };
        assert!((value - 2.0).abs() < 1e-9);
        assert!((primal[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_normalization() {
        // min x st -x <= -2  (i.e. x >= 2).
        let mut lp = LinearProgram::new(1);
        lp.set_objective(false, vec![1.0]).unwrap();
        lp.add_row(vec![-1.0], Sense::Le, -2.0).unwrap();
        let (value, _) = solve_lp(&lp, TOL).unwrap().optimal().map(|(v, p)| (v, p.to_vec())).unwrap();
        assert!((value - 2.0).abs() < 1e-9);
    }
}
