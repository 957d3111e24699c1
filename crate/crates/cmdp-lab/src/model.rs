//! Tabular constrained MDP representation and exact policy/occupancy algebra.
//!
//! A model is `(S, A, P, r, u, gamma, rho0)` with `I` utility rows. All
//! quantities are dense: transition `P(s'|s,a)` is stored row-major over
//! `(s, a, s')`, rewards and utilities over `(s, a)`. Occupancy measures are
//! unnormalized discounted visit counts with total mass `1/(1-gamma)`.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tol::NumericConfig;

/// Shape of a model: everything a learner is allowed to know about it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_constraints: usize,
    pub discount: f64,
}

impl ModelDims {
    /// Number of state-action pairs.
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// Effective sparsity bound `N = min(|S| + I, |S||A|)` on the support of
    /// an optimal basic occupancy.
    pub fn effective_sparsity(&self) -> usize {
        (self.num_states + self.num_constraints).min(self.num_pairs())
    }

    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }
}

/// Tabular CMDP. Immutable after construction; construction validates all
/// stochasticity and range invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct CmdpModel {
    dims: ModelDims,
    /// `P(s'|s,a)`, index `(s*A + a)*S + s'`.
    transition: Vec<f64>,
    /// `r(s,a)`, index `s*A + a`.
    reward: Vec<f64>,
    /// `u_i(s,a)`, index `i*S*A + s*A + a` (one contiguous matrix per constraint).
    utilities: Vec<f64>,
    /// Initial state distribution `rho0(s)`.
    rho0: Vec<f64>,
}

impl CmdpModel {
    /// Build and validate a model.
    ///
    /// `transition` is `(s,a,s')` row-major, `reward` is `(s,a)` row-major,
    /// `utilities` holds `I` row-major `(s,a)` matrices back to back.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        utilities: Vec<f64>,
        rho0: Vec<f64>,
        tol: &NumericConfig,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidArgument(
                "num_states and num_actions must be positive".into(),
            ));
        }
        if !(0.0 < discount && discount < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "discount must lie in (0,1), got {discount}"
            )));
        }
        let pairs = num_states * num_actions;
        if transition.len() != pairs * num_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                pairs * num_states
            )));
        }
        if reward.len() != pairs {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {pairs}",
                reward.len()
            )));
        }
        if utilities.len() % pairs != 0 {
            return Err(Error::Dimension(format!(
                "utilities length {} is not a multiple of |S||A| = {pairs}",
                utilities.len()
            )));
        }
        let num_constraints = utilities.len() / pairs;
        if rho0.len() != num_states {
            return Err(Error::Dimension(format!(
                "rho0 has {} entries, expected {num_states}",
                rho0.len()
            )));
        }

        for (sa, row) in transition.chunks(num_states).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if p < 0.0 || !p.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "transition row {sa} has entry {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > tol.stochastic_row {
                return Err(Error::InvalidArgument(format!(
                    "transition row {sa} sums to {sum}"
                )));
            }
        }
        let mut rho_sum = 0.0;
        for &p in &rho0 {
            if p < 0.0 || !p.is_finite() {
                return Err(Error::InvalidArgument(format!("rho0 has entry {p}")));
            }
            rho_sum += p;
        }
        if (rho_sum - 1.0).abs() > tol.stochastic_row {
            return Err(Error::InvalidArgument(format!("rho0 sums to {rho_sum}")));
        }
        for &r in &reward {
            if !(-1.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!(
                    "reward entry {r} outside [-1,1]"
                )));
            }
        }
        for &u in &utilities {
            if !(-1.0..=1.0).contains(&u) {
                return Err(Error::InvalidArgument(format!(
                    "utility entry {u} outside [-1,1]"
                )));
            }
        }

        Ok(CmdpModel {
            dims: ModelDims {
                num_states,
                num_actions,
                num_constraints,
                discount,
            },
            transition,
            reward,
            utilities,
            rho0,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }
    pub fn num_states(&self) -> usize {
        self.dims.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.dims.num_actions
    }
    pub fn num_constraints(&self) -> usize {
        self.dims.num_constraints
    }
    pub fn discount(&self) -> f64 {
        self.dims.discount
    }
    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }
    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    /// `P(s'|s,a)`.
    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.dims.num_actions + a) * self.dims.num_states + s_next]
    }

    /// Transition row for `(s,a)`.
    pub fn p_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.dims.num_states;
        let base = (s * self.dims.num_actions + a) * n;
        &self.transition[base..base + n]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.dims.num_actions + a]
    }

    /// Utility matrix `u_i` as a flat `(s,a)` row-major slice.
    pub fn utility(&self, i: usize) -> &[f64] {
        let pairs = self.dims.num_pairs();
        &self.utilities[i * pairs..(i + 1) * pairs]
    }

    pub fn u(&self, i: usize, s: usize, a: usize) -> f64 {
        self.utility(i)[s * self.dims.num_actions + a]
    }
}

/// Stochastic policy `pi(a|s)`, rows over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    /// Row-major `(s,a)`.
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
        tol: &NumericConfig,
    ) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if p < 0.0 || !p.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "policy row {s} has entry {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > tol.stochastic_row {
                return Err(Error::InvalidArgument(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Policy {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Deterministic policy taking `actions[s]` at state `s`.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Policy {
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }
}

/// Unnormalized occupancy measure `nu(s,a)` (discounted visit counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    num_states: usize,
    num_actions: usize,
    /// Row-major `(s,a)`.
    values: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn new(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "occupancy has {} entries, expected {}",
                values.len(),
                num_states * num_actions
            )));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "occupancy entries must be finite and nonnegative, got {v}"
            )));
        }
        Ok(OccupancyMeasure {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    /// Total mass `sum nu(s,a)`; equals `1/(1-gamma)` for exact occupancies.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// State marginal `nu(s) = sum_a nu(s,a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.values
            .chunks(self.num_actions)
            .map(|row| row.iter().sum())
            .collect()
    }
}

/// Flow matrix `A[(s,a), s'] = 1{s'=s} - gamma P(s'|s,a)`; the transposed
/// action `A^T nu` is the state in-flow balance of the occupancy LP.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    num_pairs: usize,
    num_states: usize,
    /// Row-major `((s,a), s')`.
    entries: Vec<f64>,
}

impl FlowMatrix {
    pub fn of_model(model: &CmdpModel) -> Self {
        let dims = model.dims();
        let (ns, na) = (dims.num_states, dims.num_actions);
        let mut entries = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let base = (s * na + a) * ns;
                for s2 in 0..ns {
                    let ind = if s2 == s { 1.0 } else { 0.0 };
                    entries[base + s2] = ind - dims.discount * model.p(s, a, s2);
                }
            }
        }
        FlowMatrix {
            num_pairs: ns * na,
            num_states: ns,
            entries,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Row for pair index `sa = s*A + a`.
    pub fn row(&self, sa: usize) -> &[f64] {
        &self.entries[sa * self.num_states..(sa + 1) * self.num_states]
    }

    pub fn get(&self, sa: usize, s_next: usize) -> f64 {
        self.entries[sa * self.num_states + s_next]
    }

    /// `A^T x` for a pair-indexed vector `x`.
    pub fn transpose_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        for sa in 0..self.num_pairs {
            let xv = x[sa];
            if xv == 0.0 {
                continue;
            }
            let row = self.row(sa);
            for (s2, &a) in row.iter().enumerate() {
                out[s2] += a * xv;
            }
        }
        out
    }
}

/// Exact occupancy measure of `pi`: solves `(I - gamma P_pi^T) nu_s = rho0`
/// and spreads the state marginal over actions by `pi`.
pub fn occupancy_of_policy(model: &CmdpModel, pi: &Policy) -> Result<OccupancyMeasure> {
    let dims = model.dims();
    if pi.num_states() != dims.num_states || pi.num_actions() != dims.num_actions {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, model is {}x{}",
            pi.num_states(),
            pi.num_actions(),
            dims.num_states,
            dims.num_actions
        )));
    }
    let ns = dims.num_states;
    let gamma = dims.discount;

    // m[s2][s] = 1{s2==s} - gamma * P_pi(s2 | s)
    let mut m = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for a in 0..dims.num_actions {
            let pa = pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let row = model.p_row(s, a);
            for s2 in 0..ns {
                m[(s2, s)] -= gamma * pa * row[s2];
            }
        }
    }
    let b = DVector::from_column_slice(model.rho0());
    let lu = m.lu();
    let nu_s = lu
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("occupancy flow system".into()))?;

    let mut values = vec![0.0; dims.num_pairs()];
    for s in 0..ns {
        // The solve can produce harmless -1e-17 noise on unreachable states.
        let mass = nu_s[s];
        if mass < -1e-12 {
            return Err(Error::SingularSystem(format!(
                "negative occupancy {mass} at state {s}"
            )));
        }
        let mass = mass.max(0.0);
        for a in 0..dims.num_actions {
            values[s * dims.num_actions + a] = pi.prob(s, a) * mass;
        }
    }
    OccupancyMeasure::new(ns, dims.num_actions, values)
}

/// Row-normalize an occupancy into a policy. Zero-mass states (row sum below
/// `tol.zero_row`) become uniform rows, keeping the map total.
pub fn policy_of_occupancy(nu: &OccupancyMeasure, tol: &NumericConfig) -> Result<Policy> {
    let (ns, na) = (nu.num_states(), nu.num_actions());
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        let row_sum: f64 = (0..na).map(|a| nu.get(s, a)).sum();
        if row_sum <= tol.zero_row {
            for a in 0..na {
                probs[s * na + a] = 1.0 / na as f64;
            }
        } else {
            for a in 0..na {
                probs[s * na + a] = nu.get(s, a) / row_sum;
            }
        }
    }
    Policy::new(ns, na, probs, tol)
}

/// Discounted reward and utility values of `pi`: `J = <nu, r>`, `J_i = <nu, u_i>`.
pub fn evaluate(model: &CmdpModel, pi: &Policy) -> Result<(f64, Vec<f64>)> {
    let nu = occupancy_of_policy(model, pi)?;
    let j = dot(nu.values(), model.reward());
    let ju = (0..model.num_constraints())
        .map(|i| dot(nu.values(), model.utility(i)))
        .collect();
    Ok((j, ju))
}

/// Flow residual `A^T nu - rho0` as a vector over states.
pub fn flow_residual(model: &CmdpModel, nu: &OccupancyMeasure) -> Result<Vec<f64>> {
    let dims = model.dims();
    if nu.num_states() != dims.num_states || nu.num_actions() != dims.num_actions {
        return Err(Error::Dimension("occupancy does not match model".into()));
    }
    let mut res: Vec<f64> = nu.state_marginal();
    for s in 0..dims.num_states {
        for a in 0..dims.num_actions {
            let v = nu.get(s, a);
            if v == 0.0 {
                continue;
            }
            let row = model.p_row(s, a);
            for s2 in 0..dims.num_states {
                res[s2] -= dims.discount * row[s2] * v;
            }
        }
    }
    for s in 0..dims.num_states {
        res[s] -= model.rho0()[s];
    }
    Ok(res)
}

/// Total constraint violation `sum_i max(-J_i^u(pi), 0)`; zero iff `pi` is safe.
pub fn violation(model: &CmdpModel, pi: &Policy) -> Result<f64> {
    let (_, ju) = evaluate(model, pi)?;
    Ok(ju.iter().map(|j| (-j).max(0.0)).sum())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

// --- JSON document mapping -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    gamma: f64,
    rho0: Vec<f64>,
    reward: Vec<Vec<f64>>,
    utilities: Vec<Vec<Vec<f64>>>,
    transition: Vec<Vec<Vec<f64>>>,
}

impl CmdpModel {
    fn to_doc(&self) -> ModelDoc {
        let (ns, na) = (self.dims.num_states, self.dims.num_actions);
        ModelDoc {
            gamma: self.dims.discount,
            rho0: self.rho0.clone(),
            reward: (0..ns)
                .map(|s| (0..na).map(|a| self.r(s, a)).collect())
                .collect(),
            utilities: (0..self.dims.num_constraints)
                .map(|i| {
                    (0..ns)
                        .map(|s| (0..na).map(|a| self.u(i, s, a)).collect())
                        .collect()
                })
                .collect(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.p_row(s, a).to_vec()).collect())
                .collect(),
        }
    }

    fn from_doc(doc: ModelDoc, tol: &NumericConfig) -> Result<Self> {
        let ns = doc.rho0.len();
        let na = doc.reward.first().map_or(0, Vec::len);
        let flatten2 = |m: &[Vec<f64>], what: &str| -> Result<Vec<f64>> {
            if m.len() != ns {
                return Err(Error::Dimension(format!("{what} has {} rows, expected {ns}", m.len())));
            }
            let mut out = Vec::with_capacity(ns * na);
            for row in m {
                if row.len() != na {
                    return Err(Error::Dimension(format!(
                        "{what} row has {} entries, expected {na}",
                        row.len()
                    )));
                }
                out.extend_from_slice(row);
            }
            Ok(out)
        };
        let reward = flatten2(&doc.reward, "reward")?;
        let mut utilities = Vec::with_capacity(doc.utilities.len() * ns * na);
        for (i, mat) in doc.utilities.iter().enumerate() {
            utilities.extend(flatten2(mat, &format!("utilities[{i}]"))?);
        }
        let mut transition = Vec::with_capacity(ns * na * ns);
        for (s, per_action) in doc.transition.iter().enumerate() {
            if per_action.len() != na {
                return Err(Error::Dimension(format!(
                    "transition[{s}] has {} actions, expected {na}",
                    per_action.len()
                )));
            }
            for row in per_action {
                if row.len() != ns {
                    return Err(Error::Dimension(format!(
                        "transition[{s}] row has {} entries, expected {ns}",
                        row.len()
                    )));
                }
                transition.extend_from_slice(row);
            }
        }
        if doc.transition.len() != ns {
            return Err(Error::Dimension(format!(
                "transition has {} states, expected {ns}",
                doc.transition.len()
            )));
        }
        CmdpModel::new(ns, na, doc.gamma, transition, reward, utilities, doc.rho0, tol)
    }

    /// Serialize to the canonical JSON document (pretty-printed).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("model serialization cannot fail")
    }

    /// Parse and validate a model from its JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        Self::from_doc(doc, &NumericConfig::DEFAULT)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Serialize for CmdpModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CmdpModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = ModelDoc::deserialize(deserializer)?;
        CmdpModel::from_doc(doc, &NumericConfig::DEFAULT).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: &NumericConfig = &NumericConfig::DEFAULT;

    /// Single self-looping state, two actions, gamma = 0.5.
    fn one_state_model() -> CmdpModel {
        CmdpModel::new(
            1,
            2,
            0.5,
            vec![1.0, 1.0],
            vec![0.3, -0.2],
            vec![],
            vec![1.0],
            TOL,
        )
        .unwrap()
    }

    /// Two-state chain: action 0 stays, action 1 jumps to the other state.
    fn two_state_model(gamma: f64) -> CmdpModel {
        let transition = vec![
            1.0, 0.0, // (s0, stay)
            0.0, 1.0, // (s0, jump)
            0.0, 1.0, // (s1, stay)
            1.0, 0.0, // (s1, jump)
        ];
        let reward = vec![1.0, 0.0, -1.0, 0.5];
        let utilities = vec![0.5, -0.5, 1.0, 0.0];
        CmdpModel::new(2, 2, gamma, transition, reward, utilities, vec![1.0, 0.0], TOL).unwrap()
    }

    #[test]
    fn uniform_policy_on_self_loop_splits_mass() {
        let model = one_state_model();
        let nu = occupancy_of_policy(&model, &Policy::uniform(1, 2)).unwrap();
        // Total mass 1/(1-gamma) = 2, split evenly by symmetry.
        assert!((nu.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((nu.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((nu.mass() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_evaluates_to_discounted_mass() {
        let model = CmdpModel::new(
            2,
            2,
            0.9,
            vec![0.5, 0.5, 0.2, 0.8, 1.0, 0.0, 0.3, 0.7],
            vec![1.0; 4],
            vec![],
            vec![0.6, 0.4],
            TOL,
        )
        .unwrap();
        for pi in [
            Policy::uniform(2, 2),
            Policy::deterministic(2, 2, &[1, 0]),
        ] {
            let (j, _) = evaluate(&model, &pi).unwrap();
            assert!((j - 10.0).abs() < 1e-9, "J = {j}");
        }
    }

    #[test]
    fn zero_reward_evaluates_to_zero() {
        let model = CmdpModel::new(
            1,
            1,
            0.9,
            vec![1.0],
            vec![0.0],
            vec![],
            vec![1.0],
            TOL,
        )
        .unwrap();
        let (j, _) = evaluate(&model, &Policy::uniform(1, 1)).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn flow_residual_of_exact_occupancy_is_small() {
        let model = two_state_model(0.9);
        let pi = Policy::uniform(2, 2);
        let nu = occupancy_of_policy(&model, &pi).unwrap();
        let res = flow_residual(&model, &nu).unwrap();
        assert!(l1_norm(&res) <= 1e-9, "residual {res:?}");
        assert!((nu.mass() - 10.0).abs() <= 1e-9);
    }

    #[test]
    fn flow_residual_of_zero_occupancy_is_minus_rho0() {
        let model = two_state_model(0.5);
        let zero = OccupancyMeasure::new(2, 2, vec![0.0; 4]).unwrap();
        let res = flow_residual(&model, &zero).unwrap();
        assert_eq!(res, vec![-1.0, 0.0]);
    }

    #[test]
    fn flow_residual_is_linear_in_nu() {
        let model = two_state_model(0.8);
        let pi = Policy::deterministic(2, 2, &[0, 1]);
        let nu = occupancy_of_policy(&model, &pi).unwrap();
        let doubled =
            OccupancyMeasure::new(2, 2, nu.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        // A^T (2 nu) - rho0 = 2(A^T nu - rho0) + rho0 = rho0 up to solve noise.
        let res = flow_residual(&model, &doubled).unwrap();
        for (s, r) in res.iter().enumerate() {
            assert!((r - model.rho0()[s]).abs() < 1e-8, "state {s}: {r}");
        }
    }

    #[test]
    fn policy_of_occupancy_proportional_and_degenerate_rows() {
        let nu = OccupancyMeasure::new(2, 2, vec![2.0, 2.0, 0.0, 0.0]).unwrap();
        let pi = policy_of_occupancy(&nu, TOL).unwrap();
        assert_eq!(pi.row(0), &[0.5, 0.5]);
        assert_eq!(pi.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn occupancy_rejects_negative_entries() {
        assert!(OccupancyMeasure::new(1, 2, vec![0.1, -0.1]).is_err());
    }

    #[test]
    fn round_trip_policy_on_supported_states() {
        let model = two_state_model(0.9);
        let pi = Policy::new(2, 2, vec![0.3, 0.7, 0.9, 0.1], TOL).unwrap();
        let nu = occupancy_of_policy(&model, &pi).unwrap();
        let back = policy_of_occupancy(&nu, TOL).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!((back.prob(s, a) - pi.prob(s, a)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn violation_sums_negative_parts() {
        let model = two_state_model(0.5);
        // Deterministic "stay at s0": J_u = <nu, u> with nu at (s0, stay) = 2.
        let pi = Policy::deterministic(2, 2, &[0, 0]);
        let (_, ju) = evaluate(&model, &pi).unwrap();
        let v = violation(&model, &pi).unwrap();
        let expected: f64 = ju.iter().map(|j| (-j).max(0.0)).sum();
        assert_eq!(v, expected);
        assert!(v >= 0.0);
    }

    #[test]
    fn flow_matrix_rows_sum_to_one_minus_gamma() {
        let model = two_state_model(0.9);
        let fm = FlowMatrix::of_model(&model);
        for sa in 0..fm.num_pairs() {
            let sum: f64 = fm.row(sa).iter().sum();
            assert!((sum - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_matrix_transpose_apply_matches_residual() {
        let model = two_state_model(0.7);
        let pi = Policy::uniform(2, 2);
        let nu = occupancy_of_policy(&model, &pi).unwrap();
        let fm = FlowMatrix::of_model(&model);
        let atn = fm.transpose_apply(nu.values());
        let res = flow_residual(&model, &nu).unwrap();
        for s in 0..2 {
            assert!((atn[s] - model.rho0()[s] - res[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let model = two_state_model(0.9);
        let text = model.to_json();
        let back = CmdpModel::from_json(&text).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn json_load_validates() {
        let model = two_state_model(0.9);
        let mut doc: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        doc["transition"][0][0][0] = serde_json::json!(0.9);
        assert!(CmdpModel::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn model_validation_rejects_bad_inputs() {
        // Non-stochastic transition row.
        assert!(CmdpModel::new(1, 1, 0.5, vec![0.9], vec![0.0], vec![], vec![1.0], TOL).is_err());
        // Reward out of range.
        assert!(CmdpModel::new(1, 1, 0.5, vec![1.0], vec![1.5], vec![], vec![1.0], TOL).is_err());
        // rho0 not a distribution.
        assert!(CmdpModel::new(1, 1, 0.5, vec![1.0], vec![0.0], vec![], vec![0.5], TOL).is_err());
        // Discount outside (0,1).
        assert!(CmdpModel::new(1, 1, 1.0, vec![1.0], vec![0.0], vec![], vec![1.0], TOL).is_err());
    }

    #[test]
    fn evaluate_matches_independent_recomputation() {
        let model = two_state_model(0.9);
        let pi = Policy::new(2, 2, vec![0.25, 0.75, 0.6, 0.4], TOL).unwrap();
        let (j, ju) = evaluate(&model, &pi).unwrap();
        let nu = occupancy_of_policy(&model, &pi).unwrap();
        let j2: f64 = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| nu.get(s, a) * model.r(s, a))
            .sum();
        assert!((j - j2).abs() < 1e-10);
        let ju2: f64 = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| nu.get(s, a) * model.u(0, s, a))
            .sum();
        assert!((ju[0] - ju2).abs() < 1e-10);
    }
}
