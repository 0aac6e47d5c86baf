//! The reference sequential data-generating process, its rollout oracle, and
//! a two-step fixture small enough to enumerate exactly.
//!
//! Reference process, actions in `{−1, +1}` with `A_0 = +1`:
//!
//! ```text
//! X_1 ~ N(0, I_d)
//! P(A_t = +1 | H_t) = expit(κ (Σ_j X_{t,j}) A_{t−1})           logging
//! A_t = +1  iff  (Σ_j X_{t,j}) A_{t−1} < 0                      target
//! R_t = γ A_t + X_{t,k} + ε_t
//! X_{t+1,j} = A_t + X_{t,j} + ξ_{t,j}
//! ```
//!
//! with `κ = 2`, `γ = 5`, `k = 1`, `d = 2` and standard normal noise.
//!
//! Trajectory `i` draws from its own stream (see [`crate::seeding`]) in this
//! order: the `d` entries of `X_1`; then per step one uniform for the action,
//! `ε_t`, and, except after the last step, the `d` entries of `ξ_t`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::OutcomeModel;
use crate::seeding::{stream, DATASET_DOMAIN, ROLLOUT_DOMAIN};
use crate::trajectories::{Dataset, History, Policy, Trajectory};

/// Action labels of the reference process; index 0 is `−1`.
pub const ACTION_LABELS: [i64; 2] = [-1, 1];

pub const DEFAULT_ROLLOUTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub horizon: usize,
    pub n: usize,
    pub covariate_dim: usize,
    pub action_gain: f64,
    /// Zero-based index of the covariate entering the reward.
    pub reward_covariate: usize,
    pub logging_slope: f64,
    pub initial_action: i64,
    pub noise_sd: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            n: 800,
            covariate_dim: 2,
            action_gain: 5.0,
            reward_covariate: 0,
            logging_slope: 2.0,
            initial_action: 1,
            noise_sd: 1.0,
        }
    }
}

impl DgpConfig {
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.covariate_dim == 0 || self.reward_covariate >= self.covariate_dim {
            return bad(format!(
                "reward covariate {} outside covariate dimension {}",
                self.reward_covariate, self.covariate_dim
            ));
        }
        if !ACTION_LABELS.contains(&self.initial_action) {
            return bad(format!("initial action must be -1 or 1, got {}", self.initial_action));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite())
            || !self.action_gain.is_finite()
            || !self.logging_slope.is_finite()
        {
            return bad("noise scale, action gain and logging slope must be finite, noise nonnegative".into());
        }
        Ok(())
    }

    pub fn action_sets(&self) -> Vec<Vec<i64>> {
        vec![ACTION_LABELS.to_vec(); self.horizon]
    }
}

fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn signed_sum(h: &History<'_>) -> f64 {
    h.current().iter().sum::<f64>() * h.previous_label() as f64
}

/// Logistic logging policy of the reference process.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceLogging {
    pub slope: f64,
}

impl Default for ReferenceLogging {
    fn default() -> Self {
        Self { slope: 2.0 }
    }
}

impl Policy for ReferenceLogging {
    fn distribution(&self, h: &History<'_>) -> Vec<f64> {
        let z = self.slope * signed_sum(h);
        vec![expit(-z), expit(z)]
    }
}

/// Deterministic target regime of the reference process.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTarget;

impl Policy for ReferenceTarget {
    fn distribution(&self, h: &History<'_>) -> Vec<f64> {
        if signed_sum(h) < 0.0 {
            vec![0.0, 1.0]
        } else {
            vec![1.0, 0.0]
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn pick(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (a, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // Rounding left u above the total; take the last action with mass.
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_trajectory<P: Policy + ?Sized>(
    cfg: &DgpConfig,
    action_sets: &[Vec<i64>],
    policy: &P,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let t_max = cfg.horizon;
    let d = cfg.covariate_dim;
    let mut covariates: Vec<Vec<f64>> = Vec::with_capacity(t_max);
    let mut actions = Vec::with_capacity(t_max);
    let mut rewards = Vec::with_capacity(t_max);
    covariates.push((0..d).map(|_| normal(rng)).collect());
    for t in 0..t_max {
        let h = History::new(t, &covariates, &actions, action_sets, cfg.initial_action)?;
        let dist = policy.distribution(&h);
        let u: f64 = rng.gen();
        let a = pick(&dist, u);
        let label = ACTION_LABELS[a] as f64;
        let x = &covariates[t];
        rewards.push(cfg.action_gain * label + x[cfg.reward_covariate] + cfg.noise_sd * normal(rng));
        actions.push(a);
        if t + 1 < t_max {
            let next = x.iter().map(|v| label + v + cfg.noise_sd * normal(rng)).collect();
            covariates.push(next);
        }
    }
    Ok(Trajectory::new(covariates, actions, rewards))
}

/// `n` trajectories of the reference process under `policy`.
pub fn sample_dataset_with<P: Policy + ?Sized>(cfg: &DgpConfig, policy: &P, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let sets = cfg.action_sets();
    let trajectories = (0..cfg.n)
        .map(|i| draw_trajectory(cfg, &sets, policy, &mut stream(seed, &[DATASET_DOMAIN, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new_unchecked(trajectories, cfg.horizon, sets, cfg.covariate_dim)
        .with_initial_action(cfg.initial_action))
}

/// `n` trajectories of the reference process under its logging policy.
pub fn sample_dataset(cfg: &DgpConfig, seed: u64) -> Result<Dataset> {
    sample_dataset_with(
        cfg,
        &ReferenceLogging {
            slope: cfg.logging_slope,
        },
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub standard_error: f64,
    pub n_rollouts: usize,
}

const ROLLOUT_CHUNK: usize = 4096;

/// Monte Carlo value of the target regime: mean of `Σ_t R_t` over
/// `n_rollouts` trajectories rolled out under [`ReferenceTarget`].
pub fn true_value(cfg: &DgpConfig, n_rollouts: usize, seed: u64) -> Result<OracleValue> {
    rollout_value(cfg, &ReferenceTarget, n_rollouts, seed)
}

pub fn rollout_value<P: Policy + ?Sized>(
    cfg: &DgpConfig,
    policy: &P,
    n_rollouts: usize,
    seed: u64,
) -> Result<OracleValue> {
    cfg.validate()?;
    if n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts must be at least 1"));
    }
    let sets = cfg.action_sets();
    let chunks = n_rollouts.div_ceil(ROLLOUT_CHUNK);
    // (count, mean, sum of squared deviations) per chunk, merged in order.
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * ROLLOUT_CHUNK;
            let hi = (lo + ROLLOUT_CHUNK).min(n_rollouts);
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for k in lo..hi {
                let mut rng = stream(seed, &[ROLLOUT_DOMAIN, k as u64]);
                let v = draw_trajectory(cfg, &sets, policy, &mut rng)?.total_reward();
                let count = (k - lo + 1) as f64;
                let delta = v - mean;
                mean += delta / count;
                m2 += delta * (v - mean);
            }
            Ok(((hi - lo) as f64, mean, m2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut count, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in parts {
        let total = count + nb;
        let delta = mb - mean;
        mean += delta * nb / total;
        m2 += m2b + delta * delta * count * nb / total;
        count = total;
    }
    let sd = if n_rollouts > 1 {
        (m2 / (count - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(OracleValue {
        value: mean,
        standard_error: sd / count.sqrt(),
        n_rollouts,
    })
}

/// Action labels of the fixture.
pub const FIXTURE_LABELS: [i64; 2] = [0, 1];

/// A two-step policy over a binary covariate and binary actions, given by
/// tables indexed by the history.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePolicy {
    /// `first[x1]` is the step-1 action distribution.
    pub first: [[f64; 2]; 2],
    /// `second[x1][a1][x2]` is the step-2 action distribution.
    pub second: [[[[f64; 2]; 2]; 2]; 2],
}

fn bit(v: f64) -> usize {
    usize::from(v != 0.0)
}

impl TablePolicy {
    fn rows(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.first
            .iter()
            .chain(self.second.iter().flatten().flatten())
    }

    pub fn is_deterministic_table(&self) -> bool {
        self.rows().all(|r| r.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    fn at(&self, x1: usize, a1: Option<(usize, usize)>) -> [f64; 2] {
        match a1 {
            None => self.first[x1],
            Some((a1, x2)) => self.second[x1][a1][x2],
        }
    }
}

impl Policy for TablePolicy {
    fn distribution(&self, h: &History<'_>) -> Vec<f64> {
        let xs = h.covariates();
        match h.step() {
            0 => self.first[bit(xs[0][0])].to_vec(),
            1 => self.second[bit(xs[0][0])][h.actions()[0]][bit(xs[1][0])].to_vec(),
            // Only defined on two-step histories; an empty distribution is
            // rejected by every consumer.
            _ => Vec::new(),
        }
    }

    fn is_deterministic(&self) -> bool {
        self.is_deterministic_table()
    }
}

/// Two steps, one binary covariate per step, binary actions, deterministic
/// rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFixture {
    /// `P(X_1 = x)`.
    pub initial: [f64; 2],
    /// `transition[x1][a1]` is the distribution of `X_2`.
    pub transition: [[[f64; 2]; 2]; 2],
    /// `reward1[x1][a1]`.
    pub reward1: [[f64; 2]; 2],
    /// `reward2[x1][a1][x2][a2]`.
    pub reward2: [[[[f64; 2]; 2]; 2]; 2],
    pub logging: TablePolicy,
    pub target: TablePolicy,
}

/// One fixture trajectory with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumerated {
    pub trajectory: Trajectory,
    pub probability: f64,
}

impl ToyFixture {
    /// A fixture with no symmetries, a strictly positive logging policy and a
    /// deterministic target.
    pub fn example() -> Self {
        Self {
            initial: [0.35, 0.65],
            transition: [[[0.8, 0.2], [0.3, 0.7]], [[0.55, 0.45], [0.1, 0.9]]],
            reward1: [[1.0, -0.5], [2.0, 3.5]],
            reward2: [
                [[[0.5, 4.0], [-1.0, 2.5]], [[3.0, 0.0], [1.5, -2.0]]],
                [[[2.0, -0.5], [0.25, 6.0]], [[-3.0, 1.0], [4.5, 0.75]]],
            ],
            logging: TablePolicy {
                first: [[0.6, 0.4], [0.25, 0.75]],
                second: [
                    [[[0.5, 0.5], [0.7, 0.3]], [[0.2, 0.8], [0.45, 0.55]]],
                    [[[0.9, 0.1], [0.35, 0.65]], [[0.6, 0.4], [0.15, 0.85]]],
                ],
            },
            target: TablePolicy {
                first: [[0.0, 1.0], [1.0, 0.0]],
                second: [
                    [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]],
                    [[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]],
                ],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rows = std::iter::once(&self.initial)
            .chain(self.transition.iter().flatten())
            .chain(self.logging.rows())
            .chain(self.target.rows());
        for row in rows {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row[0] + row[1] - 1.0).abs() > 1e-14 {
                return Err(Error::invalid(format!("fixture table row {row:?} is not a distribution")));
            }
        }
        Ok(())
    }

    pub fn action_sets() -> Vec<Vec<i64>> {
        vec![FIXTURE_LABELS.to_vec(); 2]
    }

    /// All 16 trajectories with their probabilities under `policy`, in
    /// lexicographic order of `(x1, a1, x2, a2)`.
    pub fn enumerate(&self, policy: &TablePolicy) -> Vec<Enumerated> {
        let mut out = Vec::with_capacity(16);
        for x1 in 0..2 {
            for a1 in 0..2 {
                for x2 in 0..2 {
                    for a2 in 0..2 {
                        let probability = self.initial[x1]
                            * policy.at(x1, None)[a1]
                            * self.transition[x1][a1][x2]
                            * policy.at(x1, Some((a1, x2)))[a2];
                        let trajectory = Trajectory::new(
                            vec![vec![x1 as f64], vec![x2 as f64]],
                            vec![a1, a2],
                            vec![self.reward1[x1][a1], self.reward2[x1][a1][x2][a2]],
                        );
                        out.push(Enumerated {
                            trajectory,
                            probability,
                        });
                    }
                }
            }
        }
        out
    }

    /// The logging distribution as a dataset: every trajectory with positive
    /// probability, carrying that probability as its mass.
    pub fn population_dataset(&self) -> Result<Dataset> {
        self.validate()?;
        let (trajectories, masses): (Vec<_>, Vec<_>) = self
            .enumerate(&self.logging)
            .into_iter()
            .filter(|e| e.probability > 0.0)
            .map(|e| (e.trajectory, e.probability))
            .unzip();
        let total: f64 = masses.iter().sum();
        let masses = masses.into_iter().map(|p| p / total).collect();
        Dataset::new(trajectories, 2, Self::action_sets(), 1)?.with_frequencies(masses)
    }

    /// The exact outcome model of the target regime.
    pub fn outcome_model(&self) -> FixtureOutcomeModel<'_> {
        FixtureOutcomeModel { fixture: self }
    }
}

/// Exact value of `policy` on the fixture.
pub fn enumerate_fixture_value(fx: &ToyFixture, policy: &TablePolicy) -> f64 {
    fx.enumerate(policy)
        .iter()
        .map(|e| e.probability * e.trajectory.total_reward())
        .sum()
}

/// `E[R_t | H_s, A_s = a]` when the fixture's target is followed after `s`.
#[derive(Debug, Clone, Copy)]
pub struct FixtureOutcomeModel<'a> {
    fixture: &'a ToyFixture,
}

impl OutcomeModel for FixtureOutcomeModel<'_> {
    fn predict(&self, reward_step: usize, h: &History<'_>, action: usize) -> f64 {
        let fx = self.fixture;
        let xs = h.covariates();
        let x1 = bit(xs[0][0]);
        match (reward_step, h.step()) {
            (0, 0) => fx.reward1[x1][action],
            (1, 1) => fx.reward2[x1][h.actions()[0]][bit(xs[1][0])][action],
            (1, 0) => (0..2)
                .map(|x2| {
                    let pi = fx.target.second[x1][action][x2];
                    fx.transition[x1][action][x2]
                        * (0..2).map(|a2| pi[a2] * fx.reward2[x1][action][x2][a2]).sum::<f64>()
                })
                .sum(),
            _ => f64::NAN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectories::validate_dataset;

    fn normal_cdf(z: f64) -> f64 {
        0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
    }

    #[test]
    fn sampling_is_deterministic_per_unit() {
        let cfg = DgpConfig::default().with_n(12);
        let a = sample_dataset(&cfg, 9).unwrap();
        assert_eq!(a, sample_dataset(&cfg, 9).unwrap());
        assert_ne!(a, sample_dataset(&cfg, 10).unwrap());
        let small = sample_dataset(&cfg.clone().with_n(5), 9).unwrap();
        assert_eq!(&a.trajectories()[..5], small.trajectories());
        assert!(validate_dataset(&a).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(DgpConfig::default().with_horizon(0).validate().is_err());
        assert!(DgpConfig::default().with_n(0).validate().is_err());
        let cfg = DgpConfig {
            reward_covariate: 2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = DgpConfig {
            initial_action: 0,
            ..Default::default()
        };
        assert!(matches!(sample_dataset(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn transition_drift_follows_action() {
        let cfg = DgpConfig::default().with_horizon(2).with_n(40_000);
        let ds = sample_dataset(&cfg, 3).unwrap();
        for (label, want) in [(1usize, 1.0), (0, -1.0)] {
            let diffs: Vec<f64> = ds
                .trajectories()
                .iter()
                .filter(|tr| tr.actions[0] == label)
                .flat_map(|tr| (0..2).map(move |j| tr.covariates[1][j] - tr.covariates[0][j]))
                .collect();
            let m = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / m;
            let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
            assert!((mean - want).abs() < 3.0 * sd / m.sqrt(), "{mean} vs {want}");
        }
    }

    #[test]
    fn logging_is_a_fair_coin_at_the_boundary() {
        let cfg = DgpConfig::default().with_horizon(1).with_n(200_000);
        let ds = sample_dataset(&cfg, 4).unwrap();
        let near: Vec<f64> = ds
            .trajectories()
            .iter()
            .filter(|tr| tr.covariates[0].iter().sum::<f64>().abs() < 0.02)
            .map(|tr| tr.actions[0] as f64)
            .collect();
        let m = near.len() as f64;
        let freq = near.iter().sum::<f64>() / m;
        assert!((freq - 0.5).abs() < 3.0 * (0.25 / m).sqrt(), "{freq} over {m}");
    }

    #[test]
    fn marginal_moments() {
        let cfg = DgpConfig::default().with_n(20_000);
        let ds = sample_dataset(&cfg, 5).unwrap();
        let m = ds.len() as f64;
        let x11: Vec<f64> = ds.trajectories().iter().map(|tr| tr.covariates[0][0]).collect();
        let mean = x11.iter().sum::<f64>() / m;
        assert!(mean.abs() < 3.0 / m.sqrt());
        let resid: Vec<f64> = ds
            .trajectories()
            .iter()
            .flat_map(|tr| {
                (0..3).map(move |t| tr.rewards[t] - 5.0 * ACTION_LABELS[tr.actions[t]] as f64 - tr.covariates[t][0])
            })
            .collect();
        let k = resid.len() as f64;
        let var = resid.iter().map(|r| r * r).sum::<f64>() / k;
        // Var of a chi-square/k estimate is 2/k.
        assert!((var - 1.0).abs() < 3.0 * (2.0 / k).sqrt(), "{var}");
    }

    #[test]
    fn one_step_value_is_zero_by_symmetry() {
        // A_1 = −sign(X_11 + X_12) and E[X_11] = 0, so V = 5(½ − ½) + 0.
        let cfg = DgpConfig::default().with_horizon(1);
        let v = true_value(&cfg, 100_000, 1).unwrap();
        assert!(v.value.abs() < 3.0 * v.standard_error, "{v:?}");
    }

    #[test]
    fn two_step_value_matches_quadrature() {
        // With S = X_11 + X_12 ~ N(0, 2) and η ~ N(0, 2) the step-2 noise sum,
        // E[A_2] = 2p − 1 where p = P(S + η > 2 | S > 0), and V = 5 E[A_2].
        let sd = std::f64::consts::SQRT_2;
        let density = |s: f64| (-s * s / 4.0).exp() / (2.0 * std::f64::consts::PI.sqrt());
        let integrand = |s: f64| density(s) * (1.0 - normal_cdf((2.0 - s) / sd));
        let (a, b, m) = (0.0, 20.0, 20_000);
        let h = (b - a) / m as f64;
        let mut simpson = integrand(a) + integrand(b);
        for k in 1..m {
            simpson += if k % 2 == 1 { 4.0 } else { 2.0 } * integrand(a + k as f64 * h);
        }
        let p = 2.0 * simpson * h / 3.0;
        let exact = 5.0 * (2.0 * p - 1.0);

        let v = true_value(&DgpConfig::default().with_horizon(2), 200_000, 8).unwrap();
        assert!((v.value - exact).abs() < 3.0 * v.standard_error, "{v:?} vs {exact}");
    }

    #[test]
    fn rollout_value_is_reproducible_and_schedule_free() {
        let cfg = DgpConfig::default();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| true_value(&cfg, 20_000, 77).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_ne!(one.value, true_value(&cfg, 20_000, 78).unwrap().value);
        assert!(true_value(&cfg, 0, 1).is_err());
    }

    #[test]
    fn reference_policies_at_the_origin() {
        let xs = vec![vec![0.0, 0.0]];
        let sets = vec![ACTION_LABELS.to_vec()];
        let h = History::new(0, &xs, &[], &sets, 1).unwrap();
        assert_eq!(ReferenceLogging::default().distribution(&h), vec![0.5, 0.5]);
        assert_eq!(ReferenceTarget.distribution(&h), vec![1.0, 0.0]);
        let xs = vec![vec![-1.0, 0.5]];
        let h = History::new(0, &xs, &[], &sets, 1).unwrap();
        let p = ReferenceLogging::default().distribution(&h);
        assert!((p[1] - 1.0 / (1.0 + 1.0f64.exp())).abs() < 1e-15);
        assert_eq!(ReferenceTarget.distribution(&h), vec![0.0, 1.0]);
    }

    #[test]
    fn fixture_probabilities_sum_to_one() {
        let fx = ToyFixture::example();
        fx.validate().unwrap();
        for policy in [&fx.logging, &fx.target] {
            let total: f64 = fx.enumerate(policy).iter().map(|e| e.probability).sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn fixture_value_by_step_marginals() {
        let fx = ToyFixture::example();
        for policy in [&fx.logging, &fx.target] {
            let mut step1 = 0.0;
            for x1 in 0..2 {
                for a1 in 0..2 {
                    step1 += fx.initial[x1] * policy.first[x1][a1] * fx.reward1[x1][a1];
                }
            }
            let mut step2 = 0.0;
            for x2 in 0..2 {
                for a2 in 0..2 {
                    for x1 in 0..2 {
                        for a1 in 0..2 {
                            step2 += fx.initial[x1]
                                * policy.first[x1][a1]
                                * fx.transition[x1][a1][x2]
                                * policy.second[x1][a1][x2][a2]
                                * fx.reward2[x1][a1][x2][a2];
                        }
                    }
                }
            }
            assert!((enumerate_fixture_value(&fx, policy) - (step1 + step2)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rewards_give_zero_value() {
        let mut fx = ToyFixture::example();
        fx.reward1 = [[0.0; 2]; 2];
        fx.reward2 = [[[[0.0; 2]; 2]; 2]; 2];
        assert_eq!(enumerate_fixture_value(&fx, &fx.target), 0.0);
        assert_eq!(enumerate_fixture_value(&fx, &fx.logging), 0.0);
    }

    #[test]
    fn population_dataset_carries_logging_probabilities() {
        let fx = ToyFixture::example();
        let ds = fx.population_dataset().unwrap();
        assert_eq!(ds.len(), 16);
        assert!((ds.mean_total_reward() - enumerate_fixture_value(&fx, &fx.logging)).abs() < 1e-14);
        let mut bad = fx.clone();
        bad.initial = [0.5, 0.6];
        assert!(bad.population_dataset().is_err());
    }

    #[test]
    fn fixture_model_matches_enumeration() {
        let fx = ToyFixture::example();
        let model = fx.outcome_model();
        let xs = vec![vec![1.0]];
        let sets = ToyFixture::action_sets();
        let h = History::new(0, &xs, &[], &sets, 0).unwrap();
        let direct: f64 = (0..2)
            .flat_map(|x2| (0..2).map(move |a2| (x2, a2)))
            .map(|(x2, a2)| {
                fx.transition[1][0][x2] * fx.target.second[1][0][x2][a2] * fx.reward2[1][0][x2][a2]
            })
            .sum();
        assert!((model.predict(1, &h, 0) - direct).abs() < 1e-15);
        assert_eq!(model.predict(0, &h, 1), fx.reward1[1][1]);
    }
}
