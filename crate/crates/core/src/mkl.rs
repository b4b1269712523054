//! Kernel-weight optimization for fixed labels.
//!
//! With the labels fixed, the weights `d` on the simplex minimize
//!
//! ```text
//! h(d) = sum_v [ 1/2 (d'p_v)^2 + 1/2 eps |d|^2 ] + theta * J(d)
//! ```
//!
//! where `p_v[m] = s_v' k_m s_v` are the per-kernel discrepancy projections
//! and `J(d)` is the SVM dual optimum under `K = sum_m d_m k_m`. Each inner
//! iteration solves the dual at the current `d`, forms the Newton direction
//! `(grad^2 h)^-1 grad h` (the gradient of `J` taken at the optimal
//! multipliers), removes its component along `1`, and backtracks on `h` over
//! simplex-projected trial points.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelBank, KernelWeights};
use crate::svm::{solve_dual_warm, DualConfig, DualSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MklConfig {
    pub dual: DualConfig,
    pub epsilon: f64,
    /// Stop once a step moves no weight by more than this.
    pub tol_d: f64,
    pub max_inner: usize,
    /// Backtracking gives up below this step size.
    pub min_step: f64,
}

impl Default for MklConfig {
    fn default() -> Self {
        MklConfig {
            dual: DualConfig {
                check_psd: false,
                ..DualConfig::default()
            },
            epsilon: 1e-4,
            tol_d: 1e-4,
            max_inner: 100,
            min_step: 1e-10,
        }
    }
}

/// Everything the inner loop holds fixed.
#[derive(Debug, Clone)]
pub struct InnerProblem<'a> {
    pub bank: &'a KernelBank,
    /// Class signs of the rows entering the SVM risk.
    pub signs: Vec<f64>,
    /// Contiguous block of bank rows entering the SVM risk.
    pub risk_rows: Range<usize>,
    /// One projection vector `p_v` (length M) per scaling vector.
    pub projections: Vec<Vec<f64>>,
}

impl<'a> InnerProblem<'a> {
    pub fn new(
        bank: &'a KernelBank,
        signs: Vec<f64>,
        risk_rows: Range<usize>,
        projections: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if risk_rows.end > bank.n_samples() || signs.len() != risk_rows.len() {
            return Err(Error::LengthMismatch {
                expected: risk_rows.len(),
                found: signs.len(),
            });
        }
        if let Some(p) = projections.iter().find(|p| p.len() != bank.len()) {
            return Err(Error::LengthMismatch {
                expected: bank.len(),
                found: p.len(),
            });
        }
        Ok(InnerProblem {
            bank,
            signs,
            risk_rows,
            projections,
        })
    }

    /// Dual solve at `d`, warm-started from `warm` when feasible.
    pub fn solve(
        &self,
        d: &KernelWeights,
        cfg: &DualConfig,
        warm: Option<&[f64]>,
    ) -> Result<DualSolution> {
        let k = self.bank.combine_block(d, self.risk_rows.clone())?;
        solve_dual_warm(&k, &self.signs, cfg, warm)
    }

    /// Adaptation and regularization part of `h`.
    pub fn smooth_part(&self, d: &[f64], epsilon: f64) -> f64 {
        let norm2: f64 = d.iter().map(|v| v * v).sum();
        self.projections
            .iter()
            .map(|p| {
                let dp: f64 = d.iter().zip(p).map(|(a, b)| a * b).sum();
                0.5 * dp * dp + 0.5 * epsilon * norm2
            })
            .sum()
    }

    /// `h(d)` given the dual solution at `d`.
    pub fn h_value(&self, d: &[f64], sol: &DualSolution, epsilon: f64) -> f64 {
        self.smooth_part(d, epsilon) + sol.objective
    }
}

/// Gradient and Hessian of `h` at `d`, the `J` part evaluated at the dual
/// solution `sol` (whose objective already carries theta).
pub fn grad_and_hessian(
    problem: &InnerProblem<'_>,
    d: &KernelWeights,
    sol: &DualSolution,
    theta: f64,
    epsilon: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = problem.bank.len();
    if d.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            found: d.len(),
        });
    }
    let beta = DVector::from_vec(sol.beta());
    let grad_j = svm_weight_gradient(problem, &beta, theta);
    let dv = DVector::from_column_slice(d.as_slice());
    let mut grad = DVector::from_vec(grad_j);
    let mut hess = DMatrix::zeros(m, m);
    for p in &problem.projections {
        let pv = DVector::from_column_slice(p);
        let outer = &pv * pv.transpose() + DMatrix::identity(m, m) * epsilon;
        grad += &outer * &dv;
        hess += outer;
    }
    Ok((grad, hess))
}

/// `-(theta/2) b' k_m b` for each base kernel, restricted to the risk rows.
pub fn svm_weight_gradient(
    problem: &InnerProblem<'_>,
    beta: &DVector<f64>,
    theta: f64,
) -> Vec<f64> {
    let r = problem.risk_rows.clone();
    let len = r.len();
    problem.bank.execution().map(problem.bank.len(), |m| {
        let k = problem.bank.matrix(m).view((r.start, r.start), (len, len));
        -0.5 * theta * beta.dot(&(k * beta))
    })
}

/// Euclidean projection onto `{x >= 0, sum x = 1}` by sort and threshold.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Outcome of one backtracking step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    /// Direction has no component tangent to the simplex.
    Stationary,
    /// No step size down to the minimum decreased `h`.
    Exhausted,
    Accepted {
        d: KernelWeights,
        h: f64,
        solution: DualSolution,
        eta: f64,
    },
}

/// One reduced-gradient step from `d` along `-direction`, backtracking on
/// `evaluate`, which maps a trial `d` to `(h, dual solution)`.
pub fn reduced_gradient_step<F>(
    d: &KernelWeights,
    h: f64,
    direction: &[f64],
    min_step: f64,
    mut evaluate: F,
) -> Result<StepOutcome>
where
    F: FnMut(&KernelWeights) -> Result<(f64, DualSolution)>,
{
    let mean = direction.iter().sum::<f64>() / direction.len() as f64;
    let reduced: Vec<f64> = direction.iter().map(|g| g - mean).collect();
    if reduced.iter().all(|&g| g == 0.0) {
        return Ok(StepOutcome::Stationary);
    }
    let mut eta = 1.0;
    while eta >= min_step {
        let raw: Vec<f64> = d
            .as_slice()
            .iter()
            .zip(&reduced)
            .map(|(x, g)| x - eta * g)
            .collect();
        let cand = project_simplex(&raw);
        let moved = cand.iter().zip(d.as_slice()).any(|(a, b)| a != b);
        if !moved {
            return Ok(StepOutcome::Stationary);
        }
        let cand = KernelWeights::new(cand)?;
        let (h_new, solution) = evaluate(&cand)?;
        if h_new < h {
            return Ok(StepOutcome::Accepted {
                d: cand,
                h: h_new,
                solution,
                eta,
            });
        }
        eta *= 0.5;
    }
    Ok(StepOutcome::Exhausted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerStep {
    pub d: Vec<f64>,
    pub h: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct InnerState {
    pub d: KernelWeights,
    pub alpha: DualSolution,
    pub h_value: f64,
    /// Accepted steps taken.
    pub iteration: usize,
    pub converged: bool,
    /// Starting point followed by every accepted iterate.
    pub history: Vec<InnerStep>,
}

/// Alternates dual solves and weight steps until the weights settle.
pub fn run_inner_loop(
    problem: &InnerProblem<'_>,
    d0: &KernelWeights,
    warm: Option<&[f64]>,
    cfg: &MklConfig,
) -> Result<InnerState> {
    let theta = cfg.dual.theta;
    let eps = cfg.epsilon;
    let mut d = d0.clone();
    let mut sol = problem.solve(&d, &cfg.dual, warm)?;
    let mut h = problem.h_value(d.as_slice(), &sol, eps);
    let mut history = vec![InnerStep {
        d: d.as_slice().to_vec(),
        h,
        eta: 0.0,
    }];
    let mut converged = false;
    let mut iteration = 0;

    while iteration < cfg.max_inner {
        let (grad, hess) = grad_and_hessian(problem, &d, &sol, theta, eps)?;
        let direction = hess
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("weight Hessian is not positive definite".into()))?
            .solve(&grad);
        let outcome = reduced_gradient_step(&d, h, direction.as_slice(), cfg.min_step, |cand| {
            let s = problem.solve(cand, &cfg.dual, Some(&sol.alpha))?;
            Ok((problem.h_value(cand.as_slice(), &s, eps), s))
        })?;
        match outcome {
            StepOutcome::Stationary | StepOutcome::Exhausted => {
                converged = true;
                break;
            }
            StepOutcome::Accepted {
                d: next,
                h: h_next,
                solution,
                eta,
            } => {
                let delta = next.max_abs_diff(&d);
                d = next;
                h = h_next;
                sol = solution;
                iteration += 1;
                history.push(InnerStep {
                    d: d.as_slice().to_vec(),
                    h,
                    eta,
                });
                if delta < cfg.tol_d {
                    converged = true;
                    break;
                }
            }
        }
    }
    Ok(InnerState {
        d,
        alpha: sol,
        h_value: h,
        iteration,
        converged,
        history,
    })
}
