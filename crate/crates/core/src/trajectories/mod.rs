//! Logged sequential-decision data and the policy abstraction.
//!
//! Actions are stored as small integer indices into a per-step action set of
//! domain labels (for example `[-1, 1]`). Policies see a [`History`] view of
//! one trajectory prefix and return a probability vector indexed the same way.
//!
//! Steps are zero-based in the API. The CSV format uses one-based `t`.

mod csv_io;

pub use csv_io::{parse_csv, read_csv, write_csv, write_csv_file, CsvOptions};

use std::fmt;

use crate::error::{Error, Result};

/// Masses returned by a policy must sum to one within this tolerance.
pub const MASS_SUM_TOL: f64 = 1e-12;

/// Default label for the action preceding the first step.
pub const DEFAULT_INITIAL_ACTION: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub covariates: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(covariates: Vec<Vec<f64>>, actions: Vec<usize>, rewards: Vec<f64>) -> Self {
        Self {
            covariates,
            actions,
            rewards,
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// A sample of trajectories sharing horizon, covariate dimension and action
/// sets.
///
/// By default every trajectory carries empirical mass `1/n`. A population
/// dataset (every possible trajectory together with its exact probability)
/// can be expressed through [`Dataset::with_frequencies`]; the IPW-family
/// estimators then average under that measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    horizon: usize,
    action_sets: Vec<Vec<i64>>,
    covariate_dim: usize,
    initial_action: i64,
    frequencies: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset and checks every invariant, failing with the full
    /// list of violations.
    pub fn new(
        trajectories: Vec<Trajectory>,
        horizon: usize,
        action_sets: Vec<Vec<i64>>,
        covariate_dim: usize,
    ) -> Result<Self> {
        let ds = Self::new_unchecked(trajectories, horizon, action_sets, covariate_dim);
        let report = validate_dataset(&ds);
        if report.is_ok() {
            Ok(ds)
        } else {
            Err(Error::InvalidArgument(report.to_string()))
        }
    }

    pub fn new_unchecked(
        trajectories: Vec<Trajectory>,
        horizon: usize,
        action_sets: Vec<Vec<i64>>,
        covariate_dim: usize,
    ) -> Self {
        Self {
            trajectories,
            horizon,
            action_sets,
            covariate_dim,
            initial_action: DEFAULT_INITIAL_ACTION,
            frequencies: None,
        }
    }

    pub fn with_initial_action(mut self, label: i64) -> Self {
        self.initial_action = label;
        self
    }

    /// Attaches a probability mass to each trajectory.
    pub fn with_frequencies(mut self, frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.len() != self.trajectories.len() {
            return Err(Error::invalid(format!(
                "{} frequencies for {} trajectories",
                frequencies.len(),
                self.trajectories.len()
            )));
        }
        if frequencies.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("frequencies must be finite and nonnegative"));
        }
        let total: f64 = frequencies.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("frequencies sum to {total}, not 1")));
        }
        self.frequencies = Some(frequencies);
        Ok(self)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_sets(&self) -> &[Vec<i64>] {
        &self.action_sets
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn initial_action(&self) -> i64 {
        self.initial_action
    }

    pub fn frequencies(&self) -> Option<&[f64]> {
        self.frequencies.as_deref()
    }

    /// Mass of trajectory `i` in the averaging measure.
    pub fn mass(&self, i: usize) -> f64 {
        match &self.frequencies {
            Some(p) => p[i],
            None => 1.0 / self.trajectories.len() as f64,
        }
    }

    /// Expectation of `values` under the dataset's averaging measure.
    pub fn average(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        match &self.frequencies {
            Some(p) => values.into_iter().zip(p).map(|(v, p)| v * p).sum(),
            None => {
                let n = self.trajectories.len() as f64;
                values.into_iter().sum::<f64>() / n
            }
        }
    }

    /// History of trajectory `i` up to and including the covariates of `step`.
    pub fn history(&self, i: usize, step: usize) -> History<'_> {
        let tr = &self.trajectories[i];
        History {
            step,
            covariates: &tr.covariates[..=step],
            actions: &tr.actions[..step],
            action_sets: &self.action_sets,
            initial_action: self.initial_action,
        }
    }

    /// Sample mean (under the dataset measure) of the cumulative reward.
    pub fn mean_total_reward(&self) -> f64 {
        self.average(self.trajectories.iter().map(Trajectory::total_reward))
    }
}

/// One offending field in a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub trajectory: Option<usize>,
    pub step: Option<usize>,
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.trajectory, self.step) {
            (Some(i), Some(t)) => write!(f, "trajectory {i}, step {t}, {}: {}", self.field, self.reason),
            (Some(i), None) => write!(f, "trajectory {i}, {}: {}", self.field, self.reason),
            _ => write!(f, "{}: {}", self.field, self.reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "dataset is valid");
        }
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

/// Checks every dataset and trajectory invariant without failing fast.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |trajectory, step, field, reason: String| {
        violations.push(Violation {
            trajectory,
            step,
            field,
            reason,
        })
    };

    if ds.trajectories.is_empty() {
        push(None, None, "trajectories", "dataset has no trajectories".into());
    }
    if ds.horizon == 0 {
        push(None, None, "horizon", "horizon must be at least 1".into());
    }
    if ds.action_sets.len() != ds.horizon {
        push(
            None,
            None,
            "action_sets",
            format!("{} action sets for horizon {}", ds.action_sets.len(), ds.horizon),
        );
    }
    for (t, set) in ds.action_sets.iter().enumerate() {
        if set.is_empty() {
            push(None, Some(t), "action_sets", "empty action set".into());
        }
        let mut sorted = set.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != set.len() {
            push(None, Some(t), "action_sets", "duplicate action labels".into());
        }
    }

    for (i, tr) in ds.trajectories.iter().enumerate() {
        let here = Some(i);
        if tr.covariates.len() != ds.horizon {
            push(
                here,
                None,
                "covariates",
                format!("{} covariate steps, horizon {}", tr.covariates.len(), ds.horizon),
            );
        }
        if tr.actions.len() != ds.horizon {
            push(
                here,
                None,
                "actions",
                format!("{} actions, horizon {}", tr.actions.len(), ds.horizon),
            );
        }
        if tr.rewards.len() != ds.horizon {
            push(
                here,
                None,
                "rewards",
                format!("{} rewards, horizon {}", tr.rewards.len(), ds.horizon),
            );
        }
        for (t, x) in tr.covariates.iter().enumerate() {
            if x.len() != ds.covariate_dim {
                push(
                    here,
                    Some(t),
                    "covariates",
                    format!("dimension {} instead of {}", x.len(), ds.covariate_dim),
                );
            }
            if x.iter().any(|v| !v.is_finite()) {
                push(here, Some(t), "covariates", "non-finite value".into());
            }
        }
        for (t, &a) in tr.actions.iter().enumerate() {
            let size = ds.action_sets.get(t).map_or(0, Vec::len);
            if a >= size {
                push(
                    here,
                    Some(t),
                    "actions",
                    format!("action index {a} outside the step's action set of size {size}"),
                );
            }
        }
        for (t, r) in tr.rewards.iter().enumerate() {
            if !r.is_finite() {
                push(here, Some(t), "rewards", "non-finite reward".into());
            }
        }
    }
    ValidationReport { violations }
}

/// A prefix of one trajectory: covariates `x_0..=x_step` and the actions
/// taken before `step`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    step: usize,
    covariates: &'a [Vec<f64>],
    actions: &'a [usize],
    action_sets: &'a [Vec<i64>],
    initial_action: i64,
}

impl<'a> History<'a> {
    pub fn new(
        step: usize,
        covariates: &'a [Vec<f64>],
        actions: &'a [usize],
        action_sets: &'a [Vec<i64>],
        initial_action: i64,
    ) -> Result<Self> {
        if step >= action_sets.len() {
            return Err(Error::invalid(format!(
                "step {step} outside horizon {}",
                action_sets.len()
            )));
        }
        if covariates.len() != step + 1 || actions.len() != step {
            return Err(Error::invalid(format!(
                "history at step {step} needs {} covariate rows and {step} actions, got {} and {}",
                step + 1,
                covariates.len(),
                actions.len()
            )));
        }
        if let Some((s, &a)) = actions
            .iter()
            .enumerate()
            .find(|(s, &a)| a >= action_sets[*s].len())
        {
            return Err(Error::invalid(format!("unknown action index {a} at step {s}")));
        }
        Ok(Self {
            step,
            covariates,
            actions,
            action_sets,
            initial_action,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn covariates(&self) -> &'a [Vec<f64>] {
        self.covariates
    }

    /// Covariates observed at the current step.
    pub fn current(&self) -> &'a [f64] {
        &self.covariates[self.step]
    }

    pub fn actions(&self) -> &'a [usize] {
        self.actions
    }

    pub fn action_count(&self) -> usize {
        self.action_sets[self.step].len()
    }

    /// Domain label of action index `a` at the current step.
    pub fn label(&self, a: usize) -> i64 {
        self.action_sets[self.step][a]
    }

    /// Label of the previous action, or the initial action at step 0.
    pub fn previous_label(&self) -> i64 {
        match self.step {
            0 => self.initial_action,
            s => self.action_sets[s - 1][self.actions[s - 1]],
        }
    }

    pub fn initial_action(&self) -> i64 {
        self.initial_action
    }

    /// The last `k` action labels before the current step, oldest first,
    /// padded on the left with the initial action. Fails if more than the
    /// one padding slot would be needed.
    pub fn trailing_labels(&self, k: usize) -> Result<Vec<i64>> {
        if k > self.step + 1 {
            return Err(Error::invalid(format!(
                "{k} prior action lags requested at step {} (at most {} available)",
                self.step,
                self.step + 1
            )));
        }
        let mut out = Vec::with_capacity(k);
        for s in (self.step + 1 - k)..=self.step {
            // position s in the padded sequence [A_0, a_0, .., a_{step-1}]
            out.push(match s {
                0 => self.initial_action,
                s => self.action_sets[s - 1][self.actions[s - 1]],
            });
        }
        Ok(out)
    }
}

/// A (possibly stochastic) decision rule over the step's action set.
pub trait Policy: Send + Sync {
    /// Probability of each action index at the history's step.
    fn distribution(&self, history: &History<'_>) -> Vec<f64>;

    fn is_deterministic(&self) -> bool {
        false
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn distribution(&self, history: &History<'_>) -> Vec<f64> {
        (**self).distribution(history)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn distribution(&self, history: &History<'_>) -> Vec<f64> {
        (**self).distribution(history)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Mass the policy assigns to action index `action` given `history`.
pub fn policy_mass<P: Policy + ?Sized>(policy: &P, history: &History<'_>, action: usize) -> Result<f64> {
    if action >= history.action_count() {
        return Err(Error::invalid(format!(
            "action index {action} outside the action set of size {} at step {}",
            history.action_count(),
            history.step()
        )));
    }
    let dist = checked_distribution(policy, history)?;
    Ok(dist[action])
}

/// Policy distribution with its shape and normalization verified.
pub fn checked_distribution<P: Policy + ?Sized>(policy: &P, history: &History<'_>) -> Result<Vec<f64>> {
    let dist = policy.distribution(history);
    if dist.len() != history.action_count() {
        return Err(Error::invalid(format!(
            "policy returned {} masses for {} actions",
            dist.len(),
            history.action_count()
        )));
    }
    if dist.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
        return Err(Error::invalid("policy mass outside [0, 1]"));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > MASS_SUM_TOL {
        return Err(Error::invalid(format!("policy masses sum to {total}")));
    }
    Ok(dist)
}

/// Equal mass on every action.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn distribution(&self, history: &History<'_>) -> Vec<f64> {
        let m = history.action_count();
        vec![1.0 / m as f64; m]
    }
}

/// Always picks the action with the given label; falls back to the first
/// action where the label is not available.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub i64);

impl Policy for ConstantPolicy {
    fn distribution(&self, history: &History<'_>) -> Vec<f64> {
        let m = history.action_count();
        let pick = (0..m).find(|&a| history.label(a) == self.0).unwrap_or(0);
        let mut out = vec![0.0; m];
        out[pick] = 1.0;
        out
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Deterministic rule given as a closure returning the chosen action index.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&History<'_>) -> usize + Send + Sync,
{
    fn distribution(&self, history: &History<'_>) -> Vec<f64> {
        let mut out = vec![0.0; history.action_count()];
        out[(self.0)(history)] = 1.0;
        out
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new_unchecked(
            vec![Trajectory::new(vec![vec![0.0, 1.0]], vec![1], vec![2.5])],
            1,
            vec![vec![-1, 1]],
            2,
        )
    }

    #[test]
    fn minimal_dataset_is_valid() {
        assert!(validate_dataset(&tiny()).is_ok());
        assert!(Dataset::new(tiny().trajectories.clone(), 1, vec![vec![-1, 1]], 2).is_ok());
    }

    #[test]
    fn length_mismatch_names_rewards() {
        let tr = Trajectory::new(vec![vec![0.0]; 3], vec![0, 0, 0], vec![1.0, 2.0]);
        let ds = Dataset::new_unchecked(vec![tr], 3, vec![vec![0, 1]; 3], 1);
        let report = validate_dataset(&ds);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].field, "rewards");
        assert_eq!(report.violations[0].trajectory, Some(0));
    }

    #[test]
    fn out_of_set_action_names_trajectory_and_step() {
        let good = Trajectory::new(vec![vec![0.0]; 2], vec![0, 1], vec![0.0; 2]);
        let bad = Trajectory::new(vec![vec![0.0]; 2], vec![0, 2], vec![0.0; 2]);
        let ds = Dataset::new_unchecked(vec![good, bad], 2, vec![vec![-1, 1]; 2], 1);
        let report = validate_dataset(&ds);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!((v.trajectory, v.step, v.field), (Some(1), Some(1), "actions"));
    }

    #[test]
    fn validation_is_idempotent() {
        let tr = Trajectory::new(vec![vec![f64::NAN]], vec![5], vec![]);
        let ds = Dataset::new_unchecked(vec![tr], 1, vec![vec![0]], 1);
        assert_eq!(validate_dataset(&ds), validate_dataset(&ds));
        assert!(!validate_dataset(&ds).is_ok());
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = Dataset::new_unchecked(vec![], 1, vec![vec![0]], 1);
        assert!(!validate_dataset(&ds).is_ok());
    }

    #[test]
    fn trailing_labels_pad_with_initial_action() {
        let tr = Trajectory::new(vec![vec![0.0]; 3], vec![0, 1, 0], vec![0.0; 3]);
        let ds = Dataset::new(vec![tr], 3, vec![vec![-1, 1]; 3], 1).unwrap();
        let h0 = ds.history(0, 0);
        assert_eq!(h0.previous_label(), 1);
        assert_eq!(h0.trailing_labels(1).unwrap(), vec![1]);
        assert!(h0.trailing_labels(2).is_err());
        let h2 = ds.history(0, 2);
        assert_eq!(h2.trailing_labels(2).unwrap(), vec![-1, 1]);
        assert_eq!(h2.previous_label(), 1);
        assert_eq!(ds.history(0, 1).previous_label(), -1);
    }

    #[test]
    fn policy_mass_checks_arguments() {
        let ds = tiny();
        let h = ds.history(0, 0);
        assert_eq!(policy_mass(&UniformPolicy, &h, 1).unwrap(), 0.5);
        assert!(policy_mass(&UniformPolicy, &h, 2).is_err());
        let p = ConstantPolicy(1);
        assert_eq!(policy_mass(&p, &h, 0).unwrap(), 0.0);
        assert_eq!(policy_mass(&p, &h, 1).unwrap(), 1.0);
    }

    #[test]
    fn history_rejects_bad_lengths() {
        let sets = vec![vec![-1, 1]; 2];
        let xs = vec![vec![0.0]; 2];
        assert!(History::new(2, &xs, &[0, 0], &sets, 1).is_err());
        assert!(History::new(1, &xs[..1], &[0], &sets, 1).is_err());
        assert!(History::new(1, &xs, &[3], &sets, 1).is_err());
        assert!(History::new(1, &xs, &[0], &sets, 1).is_ok());
    }

    #[test]
    fn frequencies_must_be_a_distribution() {
        assert!(tiny().with_frequencies(vec![0.5]).is_err());
        assert!(tiny().with_frequencies(vec![1.0]).is_ok());
    }
}
