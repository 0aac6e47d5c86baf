//! Optimally balanced weights for one decision step.
//!
//! For units `i = 1..n` with balancing contexts `Z_i`, observed actions `A_i`
//! and target distributions `π(·|Z_i)`, the weights minimize
//!
//! ```text
//! ‖B(·;W)‖² + (λ/n²)‖W‖²   over  W ≥ 0, mean(W) = 1,
//! B(f;W) = (1/n) Σ_i Σ_a f(Z_i, a) (W_i δ(a − A_i) − π(a|Z_i)),
//! ```
//!
//! where the norm is the dual norm of the RKHS unit ball, so
//! `‖B(·;W)‖² = (WᵀQW − 2cᵀW + d)/n²` with `(Q, c, d)` from
//! [`build_gram_pair`].

use crate::error::{Error, Result};
use crate::kernels::{build_gram_pair, BalanceContext, GramPair, KernelSpec};
use crate::qp::{solve_qp, QpProblem, QpStatus, QpTolerances};
use crate::trajectories::{checked_distribution, Dataset, Policy};

/// Weights below this count as discarded data.
pub const ZERO_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BalanceProblem {
    pub contexts: Vec<BalanceContext>,
    pub observed: Vec<usize>,
    /// Target distribution over `labels` for each unit.
    pub target: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    pub kernel: KernelSpec,
    pub lambda: f64,
}

impl BalanceProblem {
    pub fn new(
        contexts: Vec<BalanceContext>,
        observed: Vec<usize>,
        target: Vec<Vec<f64>>,
        labels: Vec<i64>,
        kernel: KernelSpec,
        lambda: f64,
    ) -> Result<Self> {
        let p = Self {
            contexts,
            observed,
            target,
            labels,
            kernel,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    /// The balancing problem of decision `step`: every unit's history up to
    /// the step is the context, its action at the step is the treatment.
    pub fn from_step<P: Policy + ?Sized>(
        dataset: &Dataset,
        step: usize,
        target: &P,
        kernel: KernelSpec,
        lambda: f64,
    ) -> Result<Self> {
        if step >= dataset.horizon() {
            return Err(Error::invalid(format!(
                "step {step} outside horizon {}",
                dataset.horizon()
            )));
        }
        let n = dataset.len();
        let mut contexts = Vec::with_capacity(n);
        let mut observed = Vec::with_capacity(n);
        let mut masses = Vec::with_capacity(n);
        for (i, tr) in dataset.trajectories().iter().enumerate() {
            let h = dataset.history(i, step);
            contexts.push(kernel.context_of(&h)?);
            observed.push(tr.actions[step]);
            masses.push(checked_distribution(target, &h)?);
        }
        Self::new(
            contexts,
            observed,
            masses,
            dataset.action_sets()[step].clone(),
            kernel,
            lambda,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        let n = self.contexts.len();
        if n == 0 {
            return Err(Error::invalid("balance problem has no units"));
        }
        if self.observed.len() != n || self.target.len() != n {
            return Err(Error::invalid("contexts, actions and target distributions differ in length"));
        }
        self.kernel.validate()
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn gram(&self) -> Result<GramPair> {
        build_gram_pair(
            &self.kernel,
            &self.contexts,
            &self.observed,
            &self.target,
            &self.labels,
        )
    }
}

/// The balance objective in canonical QP form plus its constant.
#[derive(Debug, Clone)]
pub struct BalanceObjective {
    pub qp: QpProblem,
    /// `d / n²`, so that `½WᵀQW + qᵀW + constant` is the full objective.
    pub constant: f64,
    pub gram: GramPair,
    pub lambda: f64,
}

impl BalanceObjective {
    fn n(&self) -> f64 {
        self.gram.cross.len() as f64
    }

    /// `(WᵀQW − 2cᵀW + d)/n²`, clamped at zero.
    pub fn dual_norm_sq(&self, w: &[f64]) -> f64 {
        let g = &self.gram;
        let n = w.len();
        let mut quad = 0.0;
        for j in 0..n {
            if w[j] == 0.0 {
                continue;
            }
            let col = g.gram.column(j);
            quad += w[j] * col.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        let lin: f64 = g.cross.iter().zip(w).map(|(a, b)| a * b).sum();
        ((quad - 2.0 * lin + g.target_term) / (self.n() * self.n())).max(0.0)
    }

    pub fn regularizer(&self, w: &[f64]) -> f64 {
        self.lambda * w.iter().map(|v| v * v).sum::<f64>() / (self.n() * self.n())
    }

    /// Full objective at any `w`.
    pub fn value(&self, w: &[f64]) -> f64 {
        self.qp.objective(w) + self.constant
    }
}

pub fn build_balance_objective(p: &BalanceProblem) -> Result<BalanceObjective> {
    p.validate()?;
    let gram = p.gram()?;
    let n = p.len();
    let scale = 2.0 / (n as f64 * n as f64);
    let mut hessian = gram.gram.clone();
    for i in 0..n {
        hessian[(i, i)] += p.lambda;
    }
    hessian *= scale;
    let linear = gram.cross.iter().map(|c| -scale * c).collect();
    Ok(BalanceObjective {
        qp: QpProblem::new(hessian, linear, n as f64),
        constant: gram.target_term / (n as f64 * n as f64),
        gram,
        lambda: p.lambda,
    })
}

#[derive(Debug, Clone)]
pub struct BalanceSolution {
    pub weights: Vec<f64>,
    pub dual_norm_sq: f64,
    pub regularizer: f64,
    pub objective: f64,
    /// `n² / Σ w_i²`.
    pub ess: f64,
    pub zero_fraction: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

pub fn solve_balance(p: &BalanceProblem) -> Result<BalanceSolution> {
    solve_balance_with(p, QpTolerances::default())
}

pub fn solve_balance_with(p: &BalanceProblem, tolerances: QpTolerances) -> Result<BalanceSolution> {
    let mut objective = build_balance_objective(p)?;
    objective.qp.tolerances = tolerances;
    let sol = solve_qp(&objective.qp)?;
    let n = p.len();
    if sol.status != QpStatus::Converged {
        let diag = objective.qp.hessian.diagonal();
        return Err(Error::Numeric {
            message: format!(
                "balance QP stopped after {} iterations with KKT residual {:e} (n = {n}, lambda = {}, Hessian diagonal in [{:e}, {:e}])",
                sol.iterations,
                sol.kkt_residual,
                p.lambda,
                diag.min(),
                diag.max()
            ),
            min_eigenvalue: f64::NAN,
        });
    }
    let mut weights = sol.w;
    check_feasible(&weights)?;
    for w in &mut weights {
        *w = w.max(0.0);
    }
    Ok(summarize_solution(&objective, weights, sol.iterations, sol.kkt_residual))
}

fn summarize_solution(
    objective: &BalanceObjective,
    weights: Vec<f64>,
    iterations: usize,
    kkt_residual: f64,
) -> BalanceSolution {
    let n = weights.len() as f64;
    let dual_norm_sq = objective.dual_norm_sq(&weights);
    let regularizer = objective.regularizer(&weights);
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let zeros = weights.iter().filter(|&&w| w < ZERO_WEIGHT).count();
    BalanceSolution {
        dual_norm_sq,
        regularizer,
        objective: dual_norm_sq + regularizer,
        ess: n * n / sum_sq,
        zero_fraction: zeros as f64 / n,
        iterations,
        kkt_residual,
        weights,
    }
}

/// Nonnegativity within `1e-10` and mean one within `1e-8`.
pub fn check_feasible(w: &[f64]) -> Result<()> {
    let n = w.len() as f64;
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = w.iter().sum::<f64>() / n;
    if min < -1e-10 || (mean - 1.0).abs() > 1e-8 {
        return Err(Error::Numeric {
            message: format!("infeasible balancing weights: min {min:e}, mean {mean}"),
            min_eigenvalue: f64::NAN,
        });
    }
    Ok(())
}

/// Squared dual norm of the balance operator at weights `w`.
pub fn dual_norm_at(p: &BalanceProblem, w: &[f64]) -> Result<f64> {
    if w.len() != p.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} units",
            w.len(),
            p.len()
        )));
    }
    Ok(build_balance_objective(p)?.dual_norm_sq(w))
}

/// Single-decision balanced estimate `(1/n) Σ W*_i R_i`.
pub fn balanced_itr_value(p: &BalanceProblem, rewards: &[f64]) -> Result<(f64, BalanceSolution)> {
    if rewards.len() != p.len() {
        return Err(Error::invalid("one reward per unit required"));
    }
    let sol = solve_balance(p)?;
    let n = rewards.len() as f64;
    let value = sol.weights.iter().zip(rewards).map(|(w, r)| w * r).sum::<f64>() / n;
    Ok((value, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(x: f64) -> BalanceContext {
        BalanceContext {
            features: vec![x, -x],
            prior_actions: vec![],
        }
    }

    fn single(observed: usize) -> BalanceProblem {
        BalanceProblem::new(
            vec![ctx(0.3)],
            vec![observed],
            vec![vec![0.0, 1.0]],
            vec![-1, 1],
            KernelSpec::itr(KernelFamily::Gaussian),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_unit_agreeing() {
        let sol = solve_balance(&single(1)).unwrap();
        assert_eq!(sol.weights, vec![1.0]);
        assert_eq!(sol.dual_norm_sq, 0.0);
        assert_eq!(sol.regularizer, 1.0);
    }

    #[test]
    fn single_unit_disagreeing() {
        let sol = solve_balance(&single(0)).unwrap();
        assert_eq!(sol.weights, vec![1.0]);
        assert!((sol.dual_norm_sq - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let mut p = single(1);
        p.lambda = 0.0;
        assert!(solve_balance(&p).is_err());
        assert!(BalanceProblem::new(vec![], vec![], vec![], vec![-1, 1], KernelSpec::itr(KernelFamily::Gaussian), 1.0).is_err());
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, lambda: f64, stochastic: bool) -> BalanceProblem {
        let contexts = (0..n)
            .map(|_| BalanceContext {
                features: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                prior_actions: vec![],
            })
            .collect();
        let observed = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let target = (0..n)
            .map(|_| {
                let p: f64 = if stochastic { rng.gen() } else { f64::from(rng.gen_range(0..2u8)) };
                vec![1.0 - p, p]
            })
            .collect();
        BalanceProblem::new(
            contexts,
            observed,
            target,
            vec![-1, 1],
            KernelSpec::itr(KernelFamily::Gaussian),
            lambda,
        )
        .unwrap()
    }

    /// Quadratic, linear and constant terms straight from the kernel, one
    /// call per `(i, a, j, b)`.
    fn direct_terms(p: &BalanceProblem) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
        let n = p.len();
        let k = |i: usize, a: usize, j: usize, b: usize| {
            crate::kernels::eval_kernel(
                &p.kernel,
                &p.contexts[i].point(&p.kernel, p.labels[a]),
                &p.contexts[j].point(&p.kernel, p.labels[b]),
            )
            .unwrap()
        };
        let mut quad = vec![vec![0.0; n]; n];
        let mut lin = vec![0.0; n];
        let mut constant = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad[i][j] = k(i, p.observed[i], j, p.observed[j]);
                for a in 0..2 {
                    lin[i] += p.target[j][a] * k(i, p.observed[i], j, a);
                    for b in 0..2 {
                        constant += p.target[i][a] * p.target[j][b] * k(i, a, j, b);
                    }
                }
            }
        }
        (quad, lin, constant)
    }

    fn direct_objective(p: &BalanceProblem, terms: &(Vec<Vec<f64>>, Vec<f64>, f64), w: &[f64]) -> f64 {
        let (quad, lin, constant) = terms;
        let n = w.len();
        let mut total = *constant;
        for i in 0..n {
            total -= 2.0 * lin[i] * w[i];
            for j in 0..n {
                total += w[i] * w[j] * quad[i][j];
            }
        }
        let nn = (n * n) as f64;
        total / nn + p.lambda * w.iter().map(|v| v * v).sum::<f64>() / nn
    }

    #[test]
    fn objective_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 3, 0.7, true);
        let obj = build_balance_objective(&p).unwrap();
        let terms = direct_terms(&p);
        for w in [[1.0, 1.0, 1.0], [3.0, 0.0, 0.0], [0.2, 1.3, 1.5]] {
            assert!((obj.value(&w) - direct_objective(&p, &terms, &w)).abs() < 1e-13);
        }
    }

    #[test]
    fn three_unit_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let p = random_problem(&mut rng, 3, 1.0, false);
            let sol = solve_balance(&p).unwrap();
            let terms = direct_terms(&p);
            let steps = 3000;
            let mut best = f64::INFINITY;
            for a in 0..=steps {
                for b in 0..=(steps - a) {
                    let w = [
                        3.0 * a as f64 / steps as f64,
                        3.0 * b as f64 / steps as f64,
                        3.0 * (steps - a - b) as f64 / steps as f64,
                    ];
                    best = best.min(direct_objective(&p, &terms, &w));
                }
            }
            assert!(sol.objective <= best + 1e-12);
            assert!(best - sol.objective < 1e-5, "{best} vs {}", sol.objective);
        }
    }

    #[test]
    fn dual_norm_hand_instance() {
        // Distinct actions and far-apart contexts: only self terms survive, up to k.
        let p = BalanceProblem::new(
            vec![ctx(0.0), ctx(5.0)],
            vec![0, 1],
            vec![vec![0.25, 0.75], vec![1.0, 0.0]],
            vec![-1, 1],
            KernelSpec::itr(KernelFamily::Gaussian),
            1.0,
        )
        .unwrap();
        let gp = p.gram().unwrap();
        let k = (-50.0f64).exp(); // ‖(0,0) − (5,−5)‖² = 50
        let c = [0.25 + k, 0.75 * k];
        let d = 0.25f64.powi(2) + 0.75f64.powi(2) + 1.0 + 2.0 * 0.25 * k;
        assert!((gp.cross[0] - c[0]).abs() < 1e-15 && (gp.cross[1] - c[1]).abs() < 1e-15);
        assert!((gp.target_term - d).abs() < 1e-15);
        let w = [1.5, 0.5];
        let expected = (w[0] * w[0] + w[1] * w[1] - 2.0 * (c[0] * w[0] + c[1] * w[1]) + d) / 4.0;
        assert!((dual_norm_at(&p, &w).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn perfect_agreement_gives_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_problem(&mut rng, 40, 1.0, false);
        p.target = p.observed.iter().map(|&a| if a == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let sol = solve_balance(&p).unwrap();
        assert!(sol.weights.iter().all(|&w| w == 1.0));
        assert_eq!(sol.dual_norm_sq, 0.0);
        assert_eq!(dual_norm_at(&p, &sol.weights).unwrap(), 0.0);
    }

    #[test]
    fn larger_lambda_never_spreads_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let mut p = random_problem(&mut rng, 25, 0.1, false);
            let mut prev = f64::INFINITY;
            for lambda in [0.1, 0.5, 1.0, 3.0, 10.0] {
                p.lambda = lambda;
                let sol = solve_balance(&p).unwrap();
                let sq: f64 = sol.weights.iter().map(|w| w * w).sum();
                assert!(sq <= prev + 1e-8, "lambda {lambda}: {sq} > {prev}");
                prev = sq;
            }
        }
    }

    #[test]
    fn diagnostics_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_problem(&mut rng, 30, 1.0, true);
        let sol = solve_balance(&p).unwrap();
        check_feasible(&sol.weights).unwrap();
        assert!(sol.ess > 0.0 && sol.ess <= 30.0 + 1e-9);
        let obj = build_balance_objective(&p).unwrap();
        assert!((obj.value(&sol.weights) - sol.objective).abs() < 1e-12);
    }
}
