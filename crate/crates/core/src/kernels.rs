//! Product kernels on (context, action) pairs and the Gram quantities that
//! make up the squared dual norm of the balance operator.
//!
//! A kernel point carries a real feature vector and a short tail of action
//! labels ending with the action being scored. Two points are compared by an
//! indicator that every tracked action agrees, times a stationary kernel on
//! the features.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectories::History;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Matern52,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "matern52" | "matern" => Ok(Self::Matern52),
            other => Err(Error::invalid(format!("unknown kernel family `{other}`"))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Matern52 => "matern52",
        })
    }
}

/// Which part of a history enters the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextExtractor {
    /// All covariates observed so far, concatenated. For a single decision
    /// this is just the covariate vector.
    FullCovariates,
    /// Only the current step's covariates; earlier history enters through the
    /// action tail alone.
    #[serde(rename = "last_step_covariates_with_action_delta")]
    LastStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default = "default_context")]
    pub context: ContextExtractor,
    /// Number of trailing actions (including the scored one) matched by the
    /// indicator factor.
    #[serde(default = "default_lags")]
    pub action_lags: usize,
}

fn default_length_scale() -> f64 {
    1.0
}

fn default_context() -> ContextExtractor {
    ContextExtractor::LastStep
}

fn default_lags() -> usize {
    2
}

impl KernelSpec {
    /// Single-decision kernel: `δ(a−a') k(x, x')`.
    pub fn itr(family: KernelFamily) -> Self {
        Self {
            family,
            length_scale: 1.0,
            context: ContextExtractor::FullCovariates,
            action_lags: 1,
        }
    }

    /// Sequential kernel: `δ(a_{t-1:t} − a'_{t-1:t}) k(x_t, x'_t)`.
    pub fn dtr(family: KernelFamily) -> Self {
        Self {
            family,
            length_scale: 1.0,
            context: ContextExtractor::LastStep,
            action_lags: 2,
        }
    }

    pub fn with_length_scale(mut self, length_scale: f64) -> Self {
        self.length_scale = length_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel length scale must be positive, got {}",
                self.length_scale
            )));
        }
        Ok(())
    }

    /// The stationary kernel on feature vectors.
    pub fn context_kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.radial(sq)
    }

    fn radial(&self, sq_dist: f64) -> f64 {
        let ell = self.length_scale;
        match self.family {
            KernelFamily::Gaussian => (-sq_dist / (ell * ell)).exp(),
            KernelFamily::Matern52 => {
                let u = 5f64.sqrt() * sq_dist.sqrt() / ell;
                (1.0 + u + u * u / 3.0) * (-u).exp()
            }
        }
    }

    /// Balancing context of a history: its features and the action tail that
    /// precedes the current decision.
    pub fn context_of(&self, history: &History<'_>) -> Result<BalanceContext> {
        let features = match self.context {
            ContextExtractor::FullCovariates => history.covariates().concat(),
            ContextExtractor::LastStep => history.current().to_vec(),
        };
        let prior_actions = history.trailing_labels(self.action_lags.saturating_sub(1))?;
        Ok(BalanceContext {
            features,
            prior_actions,
        })
    }

    /// Kernel point for taking action index `action` at the end of `history`.
    pub fn point(&self, history: &History<'_>, action: usize) -> Result<KernelPoint> {
        let ctx = self.context_of(history)?;
        Ok(ctx.point(self, history.label(action)))
    }
}

/// Features and preceding action labels of one unit at one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceContext {
    pub features: Vec<f64>,
    pub prior_actions: Vec<i64>,
}

impl BalanceContext {
    pub fn point(&self, spec: &KernelSpec, label: i64) -> KernelPoint {
        let mut actions = self.prior_actions.clone();
        if spec.action_lags > 0 {
            actions.push(label);
        }
        KernelPoint {
            features: self.features.clone(),
            actions,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelPoint {
    pub features: Vec<f64>,
    /// Trailing action labels, oldest first, ending with the scored action.
    pub actions: Vec<i64>,
}

pub fn eval_kernel(spec: &KernelSpec, p: &KernelPoint, q: &KernelPoint) -> Result<f64> {
    spec.validate()?;
    if p.features.len() != q.features.len() {
        return Err(Error::invalid(format!(
            "feature dimensions differ: {} vs {}",
            p.features.len(),
            q.features.len()
        )));
    }
    if p.actions.len() != spec.action_lags || q.actions.len() != spec.action_lags {
        return Err(Error::invalid(format!(
            "kernel tracks {} actions, points carry {} and {}",
            spec.action_lags,
            p.actions.len(),
            q.actions.len()
        )));
    }
    if p.actions != q.actions {
        return Ok(0.0);
    }
    Ok(spec.context_kernel(&p.features, &q.features))
}

/// Gram quantities of the squared dual norm
/// `‖B(·;W)‖² = (WᵀQW − 2cᵀW + d) / n²`.
#[derive(Debug, Clone)]
pub struct GramPair {
    /// `Q[i][j] = K((Z_i, A_i), (Z_j, A_j))`.
    pub gram: DMatrix<f64>,
    /// `c[i] = Σ_j Σ_a π(a|Z_j) K((Z_i, A_i), (Z_j, a))`, the row sums of the
    /// observed-versus-target cross matrix.
    pub cross: Vec<f64>,
    /// `d = Σ_{i,j} Σ_{a,a'} π(a|Z_i) π(a'|Z_j) K((Z_i, a), (Z_j, a'))`.
    pub target_term: f64,
}

/// Assembles the Gram quantities for one decision step.
///
/// `target[i]` is the target policy's distribution over `labels` at unit
/// `i`; `observed[i]` indexes `labels`.
pub fn build_gram_pair(
    spec: &KernelSpec,
    contexts: &[BalanceContext],
    observed: &[usize],
    target: &[Vec<f64>],
    labels: &[i64],
) -> Result<GramPair> {
    spec.validate()?;
    let n = contexts.len();
    if observed.len() != n || target.len() != n {
        return Err(Error::invalid(format!(
            "{} contexts, {} observed actions, {} target distributions",
            n,
            observed.len(),
            target.len()
        )));
    }
    let m = labels.len();
    let prior_len = spec.action_lags.saturating_sub(1);
    let dim = contexts.first().map_or(0, |c| c.features.len());
    for (i, c) in contexts.iter().enumerate() {
        if c.features.len() != dim || c.prior_actions.len() != prior_len {
            return Err(Error::invalid(format!("context {i} has inconsistent shape")));
        }
        if observed[i] >= m || target[i].len() != m {
            return Err(Error::invalid(format!("unit {i} does not match the action set")));
        }
    }

    let delta = spec.action_lags > 0;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut cross = vec![0.0; n];
    let mut target_term = 0.0;

    // Exact zeros of the action indicator are kept as exact zeros in Q; the
    // solver relies on that to find independent blocks.
    for i in 0..n {
        let ci = &contexts[i];
        let mut row_cross = 0.0;
        let mut row_target = 0.0;
        for j in 0..n {
            let cj = &contexts[j];
            if delta && ci.prior_actions != cj.prior_actions {
                continue;
            }
            let k = if i == j {
                spec.radial(0.0)
            } else {
                spec.context_kernel(&ci.features, &cj.features)
            };
            if delta {
                if observed[i] == observed[j] {
                    gram[(i, j)] = k;
                }
                row_cross += target[j][observed[i]] * k;
                let overlap: f64 = target[i].iter().zip(&target[j]).map(|(a, b)| a * b).sum();
                row_target += overlap * k;
            } else {
                gram[(i, j)] = k;
                row_cross += k;
                row_target += k;
            }
        }
        cross[i] = row_cross;
        target_term += row_target;
    }

    Ok(GramPair {
        gram,
        cross,
        target_term,
    })
}
