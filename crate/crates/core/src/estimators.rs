//! Value estimators for a target regime from logged trajectories.
//!
//! Every estimator reports `V̂ = Σ_t V̂_t`, where `V̂_t` estimates the mean
//! reward at step `t` under the target, as a weighted average `E_n[W_{1:t} R_t]`
//! of logged rewards (averages are under the dataset's measure, `1/n` per
//! trajectory unless frequencies are attached):
//!
//! * `ipw`: `W_{1:t} = Π_{s≤t} π_s/π⁰_s`.
//! * `ipw_T`: the full-horizon product `W_{1:T}` on every step.
//! * `nipw` / `nipw_T`: the same products normalized to mean one, falling back
//!   to uniform weights when every raw weight vanishes.
//! * `balanced`: `W_{1:t} = Π_{s≤t} W*_s` with `W*_s` the optimal balancing
//!   weights of step `s`. Never reads the logging policy.
//! * `balanced_dr`: balanced weights applied to outcome-model residuals.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balance::{check_feasible, solve_balance, BalanceProblem, BalanceSolution, ZERO_WEIGHT};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::trajectories::{checked_distribution, Dataset, History, Policy};

/// Logging masses at or below this make a density ratio undefined.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Raw weights at or below this are treated as zero by the normalized
/// estimators.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "ipw")]
    Ipw,
    #[serde(rename = "ipw_T")]
    IpwT,
    #[serde(rename = "nipw")]
    Nipw,
    #[serde(rename = "nipw_T")]
    NipwT,
    #[serde(rename = "balanced")]
    Balanced,
    #[serde(rename = "balanced_dr")]
    BalancedDr,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ipw => "ipw",
            Self::IpwT => "ipw_T",
            Self::Nipw => "nipw",
            Self::NipwT => "nipw_T",
            Self::Balanced => "balanced",
            Self::BalancedDr => "balanced_dr",
        }
    }

    pub fn is_balanced(self) -> bool {
        matches!(self, Self::Balanced | Self::BalancedDr)
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ipw" => Self::Ipw,
            "ipw_T" | "ipw_t" => Self::IpwT,
            "nipw" => Self::Nipw,
            "nipw_T" | "nipw_t" => Self::NipwT,
            "balanced" => Self::Balanced,
            "balanced_dr" => Self::BalancedDr,
            other => return Err(Error::invalid(format!("unknown estimator `{other}`"))),
        })
    }
}

fn default_lambda() -> f64 {
    1.0
}

fn default_ridge() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    /// Report label; derived from kind and kernel when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub kind: EstimatorKind,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Ridge penalty of the default outcome model (`balanced_dr` only).
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            name: None,
            kind,
            kernel: None,
            lambda: 1.0,
            ridge: 1e-3,
        }
    }

    pub fn balanced(kernel: KernelSpec, lambda: f64) -> Self {
        Self {
            kernel: Some(kernel),
            lambda,
            ..Self::new(EstimatorKind::Balanced)
        }
    }

    pub fn balanced_dr(kernel: KernelSpec, lambda: f64) -> Self {
        Self {
            kernel: Some(kernel),
            lambda,
            ..Self::new(EstimatorKind::BalancedDr)
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        match (self.kind, &self.kernel) {
            (EstimatorKind::Balanced, Some(k)) => format!("bal_{}", k.family),
            (EstimatorKind::BalancedDr, Some(k)) => format!("bal_dr_{}", k.family),
            (kind, _) => kind.as_str().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_balanced() {
            let kernel = self
                .kernel
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("estimator `{}` needs a kernel", self.label())))?;
            kernel.validate()?;
            if !(self.lambda > 0.0 && self.lambda.is_finite()) {
                return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
            }
        }
        Ok(())
    }
}

/// Standard Table-style estimator set for the sequential reference problem.
pub fn default_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::new(EstimatorKind::IpwT),
        EstimatorSpec::new(EstimatorKind::Ipw),
        EstimatorSpec::new(EstimatorKind::NipwT),
        EstimatorSpec::new(EstimatorKind::Nipw),
        EstimatorSpec::balanced(KernelSpec::dtr(KernelFamily::Gaussian), 1.0),
        EstimatorSpec::balanced(KernelSpec::dtr(KernelFamily::Matern52), 1.0),
    ]
}

/// Summary of the weights applied to the rewards of one step.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub zero_fraction: f64,
    pub max_weight: f64,
    /// Kish effective sample size `(Σw)²/Σw²`; zero when all weights vanish.
    pub ess: f64,
    /// The normalized estimator fell back to uniform weights.
    pub degenerate: bool,
    /// The step's balancing solution, for balanced estimators.
    pub balance: Option<BalanceSolution>,
}

impl StepDiagnostics {
    fn of(weights: &[f64], degenerate: bool) -> Self {
        let n = weights.len() as f64;
        let sum: f64 = weights.iter().sum();
        let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
        Self {
            zero_fraction: weights.iter().filter(|&&w| w < ZERO_WEIGHT).count() as f64 / n,
            max_weight: weights.iter().copied().fold(0.0, f64::max),
            ess: if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 },
            degenerate,
            balance: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub value: f64,
    pub per_step_values: Vec<f64>,
    pub per_step: Vec<StepDiagnostics>,
}

impl EvalResult {
    fn from_steps(per_step_values: Vec<f64>, per_step: Vec<StepDiagnostics>) -> Self {
        Self {
            value: per_step_values.iter().sum(),
            per_step_values,
            per_step,
        }
    }

    /// Like `from_steps`, but the total is `E_n[Σ_t W_t R_t]` accumulated per
    /// trajectory, so unit weights give exactly the mean total reward.
    fn weighted(dataset: &Dataset, applied: &[&[f64]], per_step: Vec<StepDiagnostics>) -> Self {
        let per_step_values = applied
            .iter()
            .enumerate()
            .map(|(t, w)| weighted_reward(dataset, w, t))
            .collect();
        let value = dataset.average(
            dataset
                .trajectories()
                .iter()
                .enumerate()
                .map(|(i, tr)| tr.rewards.iter().zip(applied).map(|(r, w)| w[i] * r).sum::<f64>()),
        );
        Self {
            value,
            per_step_values,
            per_step,
        }
    }

    /// Any step fell back to uniform weights.
    pub fn degenerate(&self) -> bool {
        self.per_step.iter().any(|d| d.degenerate)
    }

    /// Diagnostics of the weights used at the final step.
    pub fn final_step(&self) -> &StepDiagnostics {
        self.per_step.last().expect("at least one step")
    }
}

/// `π_t(A_t|H_t) / π⁰_t(A_t|H_t)` for every trajectory at `step`.
pub fn density_ratios<L, P>(dataset: &Dataset, logging: &L, target: &P, step: usize) -> Result<Vec<f64>>
where
    L: Policy + ?Sized,
    P: Policy + ?Sized,
{
    if step >= dataset.horizon() {
        return Err(Error::invalid(format!("step {step} outside horizon {}", dataset.horizon())));
    }
    dataset
        .trajectories()
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let h = dataset.history(i, step);
            let a = tr.actions[step];
            let behaviour = checked_distribution(logging, &h)?[a];
            if behaviour <= POSITIVITY_FLOOR {
                return Err(Error::PositivityViolation {
                    trajectory: i,
                    step,
                    mass: behaviour,
                });
            }
            Ok(checked_distribution(target, &h)?[a] / behaviour)
        })
        .collect()
}

/// Cumulative products `W_{1:t}` for every step.
fn cumulative_ratios<L, P>(dataset: &Dataset, logging: &L, target: &P) -> Result<Vec<Vec<f64>>>
where
    L: Policy + ?Sized,
    P: Policy + ?Sized,
{
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(dataset.horizon());
    for t in 0..dataset.horizon() {
        let ratios = density_ratios(dataset, logging, target, t)?;
        let cum = match out.last() {
            Some(prev) => prev.iter().zip(&ratios).map(|(a, b)| a * b).collect(),
            None => ratios,
        };
        out.push(cum);
    }
    Ok(out)
}

fn weighted_reward(dataset: &Dataset, weights: &[f64], step: usize) -> f64 {
    dataset.average(
        dataset
            .trajectories()
            .iter()
            .zip(weights)
            .map(|(tr, w)| w * tr.rewards[step]),
    )
}

/// Mean-one normalization under the dataset measure; uniform fallback when
/// every raw weight vanishes.
fn normalize(dataset: &Dataset, raw: &[f64]) -> (Vec<f64>, bool) {
    if raw.iter().all(|&w| w <= DEGENERATE_FLOOR) {
        return (vec![1.0; raw.len()], true);
    }
    let mean = dataset.average(raw.iter().copied());
    (raw.iter().map(|w| w / mean).collect(), false)
}

pub fn ipw_value<L, P>(dataset: &Dataset, logging: &L, target: &P) -> Result<EvalResult>
where
    L: Policy + ?Sized,
    P: Policy + ?Sized,
{
    let cum = cumulative_ratios(dataset, logging, target)?;
    let diags = cum.iter().map(|w| StepDiagnostics::of(w, false)).collect();
    let applied: Vec<&[f64]> = cum.iter().map(Vec::as_slice).collect();
    Ok(EvalResult::weighted(dataset, &applied, diags))
}

pub fn ipw_t_value<L, P>(dataset: &Dataset, logging: &L, target: &P) -> Result<EvalResult>
where
    L: Policy + ?Sized,
    P: Policy + ?Sized,
{
    let cum = cumulative_ratios(dataset, logging, target)?;
    let full = cum.last().expect("horizon >= 1");
    let diags = (0..dataset.horizon()).map(|_| StepDiagnostics::of(full, false)).collect();
    Ok(EvalResult::weighted(dataset, &vec![full.as_slice(); dataset.horizon()], diags))
}

/// Self-normalized IPW. With `full_horizon` the single product `W_{1:T}` is
/// normalized once and applied to every step; otherwise `W_{1:t}` is
/// normalized separately at each step.
pub fn nipw_value<L, P>(dataset: &Dataset, logging: &L, target: &P, full_horizon: bool) -> Result<EvalResult>
where
    L: Policy + ?Sized,
    P: Policy + ?Sized,
{
    let cum = cumulative_ratios(dataset, logging, target)?;
    let horizon = dataset.horizon();
    let normalized: Vec<(Vec<f64>, bool)> = if full_horizon {
        vec![normalize(dataset, cum.last().expect("horizon >= 1"))]
    } else {
        cum.iter().map(|raw| normalize(dataset, raw)).collect()
    };
    let at = |t: usize| &normalized[if full_horizon { 0 } else { t }];
    let diags = (0..horizon).map(|t| StepDiagnostics::of(&at(t).0, at(t).1)).collect();
    let applied: Vec<&[f64]> = (0..horizon).map(|t| at(t).0.as_slice()).collect();
    Ok(EvalResult::weighted(dataset, &applied, diags))
}

/// Per-step optimal balancing weights `W*_1..W*_T`.
pub fn balanced_weights<P: Policy + ?Sized>(
    dataset: &Dataset,
    target: &P,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<Vec<BalanceSolution>> {
    if dataset.frequencies().is_some() {
        return Err(Error::invalid(
            "balanced weights are defined for empirical samples, not weighted populations",
        ));
    }
    (0..dataset.horizon())
        .map(|t| {
            let problem = BalanceProblem::from_step(dataset, t, target, *kernel, lambda)?;
            let sol = solve_balance(&problem)?;
            check_feasible(&sol.weights)?;
            Ok(sol)
        })
        .collect()
}

pub fn balanced_value<P: Policy + ?Sized>(
    dataset: &Dataset,
    target: &P,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<EvalResult> {
    let solutions = balanced_weights(dataset, target, kernel, lambda)?;
    Ok(balanced_from_solutions(dataset, solutions))
}

fn balanced_from_solutions(dataset: &Dataset, solutions: Vec<BalanceSolution>) -> EvalResult {
    let mut cum: Vec<Vec<f64>> = Vec::with_capacity(solutions.len());
    for sol in &solutions {
        let next = match cum.last() {
            Some(prev) => prev.iter().zip(&sol.weights).map(|(a, b)| a * b).collect(),
            None => sol.weights.clone(),
        };
        cum.push(next);
    }
    let diags = cum
        .iter()
        .zip(solutions)
        .map(|(w, sol)| StepDiagnostics {
            balance: Some(sol),
            ..StepDiagnostics::of(w, false)
        })
        .collect();
    let applied: Vec<&[f64]> = cum.iter().map(Vec::as_slice).collect();
    EvalResult::weighted(dataset, &applied, diags)
}

/// A regression of future rewards on the history, used to augment weighted
/// estimators.
pub trait OutcomeModel: Send + Sync {
    /// Predicted reward at step `reward_step` for a unit that takes `action`
    /// at `history.step()` and follows the target afterwards.
    fn predict(&self, reward_step: usize, history: &History<'_>, action: usize) -> f64;

    fn is_fitted(&self) -> bool {
        true
    }
}

/// Predicts zero everywhere; augmentation with it changes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOutcomeModel;

impl OutcomeModel for ZeroOutcomeModel {
    fn predict(&self, _: usize, _: &History<'_>, _: usize) -> f64 {
        0.0
    }
}

/// Per-step ridge regressions fitted by backward induction under the target:
/// the step-`t` reward is regressed on `(x_t, one-hot a_t, a_t ⊗ x_t)`, and
/// for earlier steps `s` the target-policy average of the step-`s+1`
/// prediction is regressed on the same features of step `s`.
#[derive(Debug, Clone)]
pub struct RidgeOutcomeModel {
    ridge: f64,
    /// `coefficients[t][s]` predicts reward `t` from step-`s` features.
    coefficients: Option<Vec<Vec<Vec<f64>>>>,
}

impl RidgeOutcomeModel {
    pub fn new(ridge: f64) -> Self {
        Self {
            ridge,
            coefficients: None,
        }
    }

    fn features(history: &History<'_>, action: usize) -> Vec<f64> {
        let x = history.current();
        let block = x.len() + 1;
        let mut f = vec![0.0; history.action_count() * block];
        f[action * block] = 1.0;
        f[action * block + 1..(action + 1) * block].copy_from_slice(x);
        f
    }

    pub fn fit<P: Policy + ?Sized>(&mut self, dataset: &Dataset, target: &P) -> Result<()> {
        if !(self.ridge > 0.0) {
            return Err(Error::invalid("ridge penalty must be positive"));
        }
        let horizon = dataset.horizon();
        let n = dataset.len();
        let mut coefficients: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon];
        for t in 0..horizon {
            let mut per_step = vec![Vec::new(); t + 1];
            let mut response: Vec<f64> = dataset.trajectories().iter().map(|tr| tr.rewards[t]).collect();
            for s in (0..=t).rev() {
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|i| Self::features(&dataset.history(i, s), dataset.trajectories()[i].actions[s]))
                    .collect();
                let beta = self.ridge_solve(dataset, &rows, &response)?;
                per_step[s] = beta;
                if s > 0 {
                    // Pseudo-outcome for step s-1: the step-s prediction
                    // averaged over the target's actions.
                    response = (0..n)
                        .map(|i| {
                            let h = dataset.history(i, s);
                            let dist = checked_distribution(target, &h)?;
                            Ok(dist
                                .iter()
                                .enumerate()
                                .map(|(a, p)| p * dot(&per_step[s], &Self::features(&h, a)))
                                .sum())
                        })
                        .collect::<Result<_>>()?;
                }
            }
            coefficients[t] = per_step;
        }
        self.coefficients = Some(coefficients);
        Ok(())
    }

    fn ridge_solve(&self, dataset: &Dataset, rows: &[Vec<f64>], response: &[f64]) -> Result<Vec<f64>> {
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut gram = DMatrix::<f64>::identity(p, p) * self.ridge;
        let mut rhs = DVector::<f64>::zeros(p);
        for (i, (row, y)) in rows.iter().zip(response).enumerate() {
            let m = dataset.mass(i) * n;
            for a in 0..p {
                if row[a] == 0.0 {
                    continue;
                }
                rhs[a] += m * row[a] * y;
                for b in 0..p {
                    gram[(a, b)] += m * row[a] * row[b];
                }
            }
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::Numeric {
            message: "ridge normal equations are not positive definite".into(),
            min_eigenvalue: f64::NAN,
        })?;
        Ok(chol.solve(&rhs).iter().copied().collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl OutcomeModel for RidgeOutcomeModel {
    fn predict(&self, reward_step: usize, history: &History<'_>, action: usize) -> f64 {
        let coefs = self.coefficients.as_ref().expect("predict on an unfitted model");
        dot(&coefs[reward_step][history.step()], &Self::features(history, action))
    }

    fn is_fitted(&self) -> bool {
        self.coefficients.is_some()
    }
}

/// Weighted estimator augmented with an outcome model.
///
/// With `μ̂_{t,s}` the model's prediction of reward `t` from step `s`:
///
/// ```text
/// V̂_t = E_n[ Σ_a π_1(a|H_1) μ̂_{t,1}(H_1, a) ]
///     + Σ_{s≤t} E_n[ W_{1:s} (Y_{t,s+1} − μ̂_{t,s}(H_s, A_s)) ]
/// Y_{t,s+1} = Σ_a π_{s+1}(a|H_{s+1}) μ̂_{t,s+1}(H_{s+1}, a)  (s < t),   Y_{t,t+1} = R_t
/// ```
///
/// `weights_per_step[s]` holds the per-step weights `W_s`; their running
/// product is `W_{1:s}`. A zero model gives back `E_n[W_{1:t} R_t]`; an exact
/// model gives the true value at population scale for any weights that are
/// functions of the observed history.
pub fn augmented_value<P, M>(
    dataset: &Dataset,
    target: &P,
    weights_per_step: &[Vec<f64>],
    model: &M,
) -> Result<EvalResult>
where
    P: Policy + ?Sized,
    M: OutcomeModel + ?Sized,
{
    if !model.is_fitted() {
        return Err(Error::InvalidState("outcome model has not been fitted".into()));
    }
    let horizon = dataset.horizon();
    let n = dataset.len();
    if weights_per_step.len() != horizon || weights_per_step.iter().any(|w| w.len() != n) {
        return Err(Error::invalid("need one weight vector of length n per step"));
    }
    let mut cumulative: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    for w in weights_per_step {
        let next = match cumulative.last() {
            Some(prev) => prev.iter().zip(w).map(|(a, b)| a * b).collect(),
            None => w.clone(),
        };
        cumulative.push(next);
    }

    // Target-averaged predictions: plug[i][s] for reward t.
    let mut values = Vec::with_capacity(horizon);
    let mut diags = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut plug = vec![vec![0.0; t + 1]; n];
        let mut fitted = vec![vec![0.0; t + 1]; n];
        for i in 0..n {
            let tr = &dataset.trajectories()[i];
            for s in 0..=t {
                let h = dataset.history(i, s);
                let dist = checked_distribution(target, &h)?;
                plug[i][s] = dist
                    .iter()
                    .enumerate()
                    .map(|(a, p)| if *p == 0.0 { 0.0 } else { p * model.predict(t, &h, a) })
                    .sum();
                fitted[i][s] = model.predict(t, &h, tr.actions[s]);
            }
        }
        let mut v = dataset.average(plug.iter().map(|row| row[0]));
        for s in 0..=t {
            let residual = dataset.average((0..n).map(|i| {
                let next = if s < t {
                    plug[i][s + 1]
                } else {
                    dataset.trajectories()[i].rewards[t]
                };
                cumulative[s][i] * (next - fitted[i][s])
            }));
            v += residual;
        }
        values.push(v);
        diags.push(StepDiagnostics::of(&cumulative[t], false));
    }
    Ok(EvalResult::from_steps(values, diags))
}

/// Runs one estimator. `logging` is only consulted by the IPW family.
pub fn evaluate<L, P>(spec: &EstimatorSpec, dataset: &Dataset, logging: &L, target: &P) -> Result<EvalResult>
where
    L: Policy + ?Sized,
    P: Policy + ?Sized,
{
    spec.validate()?;
    match spec.kind {
        EstimatorKind::Ipw => ipw_value(dataset, logging, target),
        EstimatorKind::IpwT => ipw_t_value(dataset, logging, target),
        EstimatorKind::Nipw => nipw_value(dataset, logging, target, false),
        EstimatorKind::NipwT => nipw_value(dataset, logging, target, true),
        EstimatorKind::Balanced => {
            balanced_value(dataset, target, spec.kernel.as_ref().expect("validated"), spec.lambda)
        }
        EstimatorKind::BalancedDr => {
            let kernel = spec.kernel.as_ref().expect("validated");
            let solutions = balanced_weights(dataset, target, kernel, spec.lambda)?;
            let weights: Vec<Vec<f64>> = solutions.iter().map(|s| s.weights.clone()).collect();
            let mut model = RidgeOutcomeModel::new(spec.ridge);
            model.fit(dataset, target)?;
            let mut result = augmented_value(dataset, target, &weights, &model)?;
            for (d, sol) in result.per_step.iter_mut().zip(solutions) {
                d.balance = Some(sol);
            }
            Ok(result)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectories::{ConstantPolicy, FnPolicy, Trajectory, UniformPolicy};

    fn two_step(actions: Vec<Vec<usize>>, rewards: Vec<Vec<f64>>) -> Dataset {
        let trajectories = actions
            .into_iter()
            .zip(rewards)
            .enumerate()
            .map(|(i, (a, r))| Trajectory::new(vec![vec![i as f64 * 0.1]; 2], a, r))
            .collect();
        Dataset::new(trajectories, 2, vec![vec![-1, 1]; 2], 1).unwrap()
    }

    #[test]
    fn identical_policies_give_unit_ratios() {
        let ds = two_step(vec![vec![0, 1], vec![1, 1]], vec![vec![1.0, 2.0], vec![3.0, -1.0]]);
        for t in 0..2 {
            assert_eq!(density_ratios(&ds, &UniformPolicy, &UniformPolicy, t).unwrap(), vec![1.0, 1.0]);
        }
        let mean = ds.mean_total_reward();
        assert_eq!(ipw_value(&ds, &UniformPolicy, &UniformPolicy).unwrap().value, mean);
        assert_eq!(ipw_t_value(&ds, &UniformPolicy, &UniformPolicy).unwrap().value, mean);
        let nipw = nipw_value(&ds, &UniformPolicy, &UniformPolicy, false).unwrap();
        assert_eq!(nipw.value, mean);
        assert!(!nipw.degenerate());
    }

    #[test]
    fn disagreeing_deterministic_target_gives_zero_ratio() {
        let ds = two_step(vec![vec![0, 1]], vec![vec![1.0, 2.0]]);
        assert_eq!(density_ratios(&ds, &UniformPolicy, &ConstantPolicy(1), 0).unwrap(), vec![0.0]);
        assert_eq!(density_ratios(&ds, &UniformPolicy, &ConstantPolicy(1), 1).unwrap(), vec![2.0]);
    }

    #[test]
    fn full_horizon_weight_of_agreeing_trajectory() {
        let ds = two_step(vec![vec![1, 1]], vec![vec![1.5, 2.0]]);
        let r = ipw_t_value(&ds, &UniformPolicy, &ConstantPolicy(1)).unwrap();
        assert_eq!(r.value, 4.0 * 3.5);
        assert_eq!(r.final_step().max_weight, 4.0);
    }

    #[test]
    fn positivity_violation_names_unit() {
        let ds = two_step(vec![vec![1, 1], vec![1, 0]], vec![vec![0.0; 2]; 2]);
        match density_ratios(&ds, &ConstantPolicy(1), &UniformPolicy, 1) {
            Err(Error::PositivityViolation { trajectory, step, .. }) => assert_eq!((trajectory, step), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nipw_falls_back_to_uniform() {
        let ds = two_step(vec![vec![0, 0], vec![0, 1]], vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let r = nipw_value(&ds, &UniformPolicy, &ConstantPolicy(1), false).unwrap();
        assert!(r.degenerate());
        assert_eq!(r.per_step_values, vec![2.0, 3.0]);
        let full = nipw_value(&ds, &UniformPolicy, &ConstantPolicy(1), true).unwrap();
        assert!(full.degenerate());
        assert_eq!(full.value, ds.mean_total_reward());
    }

    #[test]
    fn values_are_sums_of_steps() {
        let ds = two_step(
            vec![vec![0, 1], vec![1, 1], vec![1, 0]],
            vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.25]],
        );
        let target = FnPolicy(|h: &History<'_>| usize::from(h.current()[0] > 0.05));
        for spec in default_estimators() {
            let r = evaluate(&spec, &ds, &UniformPolicy, &target).unwrap();
            let total: f64 = r.per_step_values.iter().sum();
            assert!((r.value - total).abs() <= 1e-10, "{}", spec.label());
        }
    }

    #[test]
    fn balanced_needs_a_kernel() {
        let spec = EstimatorSpec::new(EstimatorKind::Balanced);
        assert!(spec.validate().is_err());
        let mut bad = EstimatorSpec::balanced(KernelSpec::dtr(KernelFamily::Gaussian), 1.0);
        bad.lambda = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_model_reduces_to_weighted_estimator() {
        let ds = two_step(
            vec![vec![0, 1], vec![1, 1], vec![1, 0]],
            vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.25]],
        );
        let target = ConstantPolicy(1);
        let sols = balanced_weights(&ds, &target, &KernelSpec::dtr(KernelFamily::Gaussian), 1.0).unwrap();
        let weights: Vec<Vec<f64>> = sols.iter().map(|s| s.weights.clone()).collect();
        let plain = balanced_value(&ds, &target, &KernelSpec::dtr(KernelFamily::Gaussian), 1.0).unwrap();
        let aug = augmented_value(&ds, &target, &weights, &ZeroOutcomeModel).unwrap();
        assert_eq!(plain.per_step_values, aug.per_step_values);
        assert_eq!(plain.value, aug.value);
    }

    #[test]
    fn unfitted_model_is_rejected() {
        let ds = two_step(vec![vec![0, 1]], vec![vec![1.0, 2.0]]);
        let model = RidgeOutcomeModel::new(1e-3);
        let w = vec![vec![1.0]; 2];
        assert!(matches!(
            augmented_value(&ds, &UniformPolicy, &w, &model),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn estimator_kind_names_round_trip() {
        for kind in [
            EstimatorKind::Ipw,
            EstimatorKind::IpwT,
            EstimatorKind::Nipw,
            EstimatorKind::NipwT,
            EstimatorKind::Balanced,
            EstimatorKind::BalancedDr,
        ] {
            assert_eq!(kind.as_str().parse::<EstimatorKind>().unwrap(), kind);
        }
    }
}
