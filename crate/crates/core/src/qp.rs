//! Convex quadratic programs over a scaled simplex:
//!
//! ```text
//! minimize ½ wᵀQw + qᵀw   subject to  w ≥ 0,  Σ w_i = s
//! ```
//!
//! A primal-dual active-set phase swaps bounds in batches until the active set
//! settles, which usually takes a handful of face solves. If it cycles, the
//! solver falls back to alternating a projected-gradient step (which can change
//! many bounds at once) with an exact minimization over the current face, found by
//! a Cholesky solve of the free block and one scalar multiplier for the sum
//! constraint. Q is split into independent blocks (connected components of
//! its nonzero pattern) so a block-diagonal Q is factored block by block.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpTolerances {
    /// Projected-gradient stationarity target, relative to `1 + ‖q‖₂`.
    pub kkt_tol: f64,
    /// Iteration budget; `None` means `10 n`.
    pub max_iters: Option<usize>,
}

impl Default for QpTolerances {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iters: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub sum_target: f64,
    pub tolerances: QpTolerances,
    /// Optional starting point; projected onto the feasible set before use.
    pub warm_start: Option<Vec<f64>>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: Vec<f64>, sum_target: f64) -> Self {
        Self {
            hessian,
            linear,
            sum_target,
            tolerances: QpTolerances::default(),
            warm_start: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let h = &self.hessian;
        let n = w.len();
        let mut quad = 0.0;
        for j in 0..n {
            let col = h.column(j);
            let hw: f64 = col.iter().zip(w).map(|(a, b)| a * b).sum();
            quad += w[j] * hw;
        }
        0.5 * quad + self.linear.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

/// Symmetry tolerance on Q, absolute, scaled by `max(1, max|Q_ij|)`.
const SYMMETRY_TOL: f64 = 1e-10;

/// Face solves allowed to the active-set phase before projected gradient takes over.
const PDAS_MAX_STEPS: usize = 50;

struct Block {
    idx: Vec<usize>,
    h: DMatrix<f64>,
}

struct Engine<'a> {
    blocks: Vec<Block>,
    q: &'a [f64],
    s: f64,
    trace_scale: f64,
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    let n = p.dim();
    validate(p)?;
    let engine = Engine::new(p)?;
    let tol = p.tolerances.kkt_tol * (1.0 + norm(&p.linear));
    let max_iters = p.tolerances.max_iters.unwrap_or(10 * n).max(1);

    let mut w = match &p.warm_start {
        Some(start) if start.len() == n && start.iter().all(|v| v.is_finite()) => {
            project_simplex(start, p.sum_target)
        }
        _ => vec![p.sum_target / n as f64; n],
    };
    let mut iterations = 0;
    let mut on_face_optimum = false;
    let free: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
    let (z, steps, converged) = engine.active_set(free, PDAS_MAX_STEPS)?;
    iterations += steps;
    if let Some(z) = z {
        let z = if converged { z } else { project_simplex(&z, p.sum_target) };
        if engine.objective(&z) <= engine.objective(&w) {
            w = z;
            on_face_optimum = converged;
        }
    }

    let mut f = engine.objective(&w);
    let lipschitz = engine.lipschitz();
    let mut residual;
    loop {
        let g = engine.gradient(&w);
        residual = kkt_residual(&w, &g);
        if residual <= 1e-3 * tol || (on_face_optimum && residual <= tol) {
            break;
        }
        if iterations >= max_iters {
            break;
        }
        iterations += 1;

        // Projected gradient step with backtracking along the projection arc.
        let mut step = 1.0 / lipschitz;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let trial = project_simplex(&trial, p.sum_target);
            let ft = engine.objective(&trial);
            let decrease: f64 = g.iter().zip(trial.iter().zip(&w)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if ft <= f + 0.5 * decrease || decrease == 0.0 {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        if let Some((trial, ft)) = accepted {
            if ft <= f {
                w = trial;
                f = ft;
            }
        }

        // Exact minimization over the face the step landed on.
        on_face_optimum = false;
        let free: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
        if let Some(z) = engine.face_minimizer(&free)? {
            if z.iter().all(|&v| v >= 0.0) {
                let fz = engine.objective(&z);
                if fz <= f {
                    w = z;
                    f = fz;
                    on_face_optimum = true;
                }
            } else {
                let projected = project_simplex(&z, p.sum_target);
                let fp = engine.objective(&projected);
                // Feasible segment towards z up to the first bound it crosses.
                let mut beta = 1.0f64;
                for i in 0..n {
                    if free[i] && z[i] < 0.0 {
                        beta = beta.min(w[i] / (w[i] - z[i]));
                    }
                }
                let mut segment: Vec<f64> = w.iter().zip(&z).map(|(a, b)| a + beta * (b - a)).collect();
                for (i, v) in segment.iter_mut().enumerate() {
                    if !free[i] || *v < 0.0 || (z[i] < 0.0 && *v <= 1e-15 * p.sum_target) {
                        *v = v.max(0.0);
                    }
                }
                let fs = engine.objective(&segment);
                if fp <= fs && fp < f {
                    w = projected;
                    f = fp;
                } else if fs < f {
                    w = segment;
                    f = fs;
                }
            }
        }
    }

    let status = if residual <= tol {
        QpStatus::Converged
    } else {
        QpStatus::MaxIters
    };
    Ok(QpSolution {
        objective: p.objective(&w),
        w,
        kkt_residual: residual,
        iterations,
        status,
    })
}

fn validate(p: &QpProblem) -> Result<()> {
    let n = p.dim();
    if n == 0 {
        return Err(Error::invalid("empty quadratic program"));
    }
    if p.hessian.nrows() != n || p.hessian.ncols() != n {
        return Err(Error::invalid(format!(
            "Q is {}x{}, linear term has length {n}",
            p.hessian.nrows(),
            p.hessian.ncols()
        )));
    }
    if !(p.sum_target > 0.0 && p.sum_target.is_finite()) {
        return Err(Error::invalid(format!("sum target must be positive, got {}", p.sum_target)));
    }
    if p.linear.iter().chain(p.hessian.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite entry in Q or q"));
    }
    let scale = p.hessian.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (p.hessian[(i, j)] - p.hessian[(j, i)]).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!(
                    "Q is not symmetric: |Q[{i}][{j}] - Q[{j}][{i}]| = {gap:e}"
                )));
            }
        }
    }
    Ok(())
}

impl<'a> Engine<'a> {
    fn new(p: &'a QpProblem) -> Result<Self> {
        let n = p.dim();
        let h = &p.hessian;

        // Connected components of the nonzero pattern.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for j in 0..n {
            for i in (j + 1)..n {
                if h[(i, j)] != 0.0 || h[(j, i)] != 0.0 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut root_block = vec![usize::MAX; n];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            if root_block[r] == usize::MAX {
                root_block[r] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[root_block[r]].push(i);
        }

        let blocks: Vec<Block> = blocks
            .into_iter()
            .map(|idx| {
                let m = idx.len();
                let hb = DMatrix::from_fn(m, m, |r, c| 0.5 * (h[(idx[r], idx[c])] + h[(idx[c], idx[r])]));
                Block { idx, h: hb }
            })
            .collect();

        let trace_scale = (h.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
        let engine = Self {
            blocks,
            q: &p.linear,
            s: p.sum_target,
            trace_scale,
        };
        engine.check_curvature()?;
        Ok(engine)
    }

    /// Rejects Q with negative curvature beyond `1e-8 · trace(Q)/n`.
    fn check_curvature(&self) -> Result<()> {
        for b in &self.blocks {
            if Cholesky::new(b.h.clone()).is_some() {
                continue;
            }
            let min_eig = b.h.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-8 * self.trace_scale {
                return Err(Error::Numeric {
                    message: "Q is indefinite".into(),
                    min_eigenvalue: min_eig,
                });
            }
        }
        Ok(())
    }

    fn lipschitz(&self) -> f64 {
        let mut l = 0.0f64;
        for b in &self.blocks {
            for r in 0..b.h.nrows() {
                l = l.max(b.h.row(r).iter().map(|v| v.abs()).sum());
            }
        }
        l.max(f64::MIN_POSITIVE)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = self.q.to_vec();
        for b in &self.blocks {
            let m = b.idx.len();
            for c in 0..m {
                let wc = w[b.idx[c]];
                if wc == 0.0 {
                    continue;
                }
                let col = b.h.column(c);
                for r in 0..m {
                    g[b.idx[r]] += col[r] * wc;
                }
            }
        }
        g
    }

    fn objective(&self, w: &[f64]) -> f64 {
        let g = self.gradient(w);
        // ½wᵀHw + qᵀw = ½ wᵀ(Hw + q) + ½ qᵀw
        w.iter()
            .zip(g.iter().zip(self.q))
            .map(|(wi, (gi, qi))| 0.5 * wi * (gi + qi))
            .sum()
    }

    /// Primal-dual active-set iteration: solve on the current face, then free
    /// every bound whose multiplier has the wrong sign and fix every free
    /// coordinate that went negative. Returns the last face solution, the
    /// number of face solves and whether the active set settled.
    fn active_set(&self, mut free: Vec<bool>, max_steps: usize) -> Result<(Option<Vec<f64>>, usize, bool)> {
        let mut last = None;
        let mut seen: Vec<Vec<bool>> = Vec::new();
        for step in 1..=max_steps {
            let Some(z) = self.face_minimizer(&free)? else {
                return Ok((last, step, false));
            };
            let g = self.gradient(&z);
            let (sum, count) = free
                .iter()
                .zip(&g)
                .filter(|(f, _)| **f)
                .fold((0.0, 0usize), |(s, c), (_, gi)| (s + gi, c + 1));
            let nu = sum / count as f64;
            let next: Vec<bool> = (0..z.len())
                .map(|i| if free[i] { z[i] > 0.0 } else { g[i] - nu < 0.0 })
                .collect();
            last = Some(z);
            if next == free {
                return Ok((last, step, true));
            }
            if next.iter().all(|f| !f) || seen.contains(&next) {
                return Ok((last, step, false));
            }
            seen.push(std::mem::replace(&mut free, next));
        }
        Ok((last, max_steps, false))
    }

    /// Minimizer of the objective over `{w_i = 0 for non-free i, Σw = s}`,
    /// ignoring the remaining bounds. `None` when no variable is free.
    fn face_minimizer(&self, free: &[bool]) -> Result<Option<Vec<f64>>> {
        let n = free.len();
        // w_F = ν H⁻¹1 − H⁻¹q_F, with ν fixing the sum.
        let mut ones_sol = vec![0.0; n];
        let mut lin_sol = vec![0.0; n];
        let mut any = false;
        for b in &self.blocks {
            let f: Vec<usize> = (0..b.idx.len()).filter(|&k| free[b.idx[k]]).collect();
            if f.is_empty() {
                continue;
            }
            any = true;
            let m = f.len();
            let sub = DMatrix::from_fn(m, m, |r, c| b.h[(f[r], f[c])]);
            let chol = match Cholesky::new(sub.clone()) {
                Some(c) => c,
                None => {
                    let jitter = 1e-12 * self.trace_scale.max(sub.diagonal().amax());
                    let shifted = &sub + DMatrix::<f64>::identity(m, m) * jitter;
                    Cholesky::new(shifted).ok_or_else(|| Error::Numeric {
                        message: "free block of Q is not positive definite".into(),
                        min_eigenvalue: sub.clone().symmetric_eigenvalues().min(),
                    })?
                }
            };
            let ones = chol.solve(&DVector::from_element(m, 1.0));
            let lin = chol.solve(&DVector::from_fn(m, |r, _| -self.q[b.idx[f[r]]]));
            for r in 0..m {
                ones_sol[b.idx[f[r]]] = ones[r];
                lin_sol[b.idx[f[r]]] = lin[r];
            }
        }
        if !any {
            return Ok(None);
        }
        let su: f64 = ones_sol.iter().sum();
        let sv: f64 = lin_sol.iter().sum();
        if !(su > 0.0) {
            return Ok(None);
        }
        let nu = (self.s - sv) / su;
        Ok(Some(
            (0..n)
                .map(|i| if free[i] { nu * ones_sol[i] + lin_sol[i] } else { 0.0 })
                .collect(),
        ))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected-gradient norm on the active face. The sum multiplier is the
/// mean gradient over positive coordinates (or the smallest gradient when no
/// coordinate is positive).
pub fn kkt_residual(w: &[f64], g: &[f64]) -> f64 {
    let (sum, count) = w
        .iter()
        .zip(g)
        .filter(|(wi, _)| **wi > 0.0)
        .fold((0.0, 0usize), |(s, c), (_, gi)| (s + gi, c + 1));
    let nu = if count > 0 {
        sum / count as f64
    } else {
        g.iter().copied().fold(f64::INFINITY, f64::min)
    };
    w.iter()
        .zip(g)
        .map(|(&wi, &gi)| {
            let r = gi - nu;
            if wi > 0.0 {
                r * r
            } else {
                r.min(0.0).powi(2)
            }
        })
        .sum::<f64>()
        .sqrt()
}

/// Euclidean projection onto `{w ≥ 0, Σ w = s}`.
pub fn project_simplex(y: &[f64], s: f64) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - s) / (j + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}
