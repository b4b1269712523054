//! SVM dual solver.
//!
//! Maximizes `theta * (1'a - 1/2 (a*s)' K (a*s))` subject to `0 <= a <= C`
//! and `a's = 0`, where `s = 2y - 1` are the class signs. Since `theta > 0`
//! only scales the objective, the maximizer is found with `theta = 1` and the
//! scale is reapplied to the reported value.
//!
//! The solver is SMO: every step moves one pair of multipliers along the
//! equality constraint, picking the maximal-violating `i` and the partner `j`
//! with the largest second-order gain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
const PSD_SHIFT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub c: f64,
    pub theta: f64,
    /// Largest tolerated KKT violation on the returned solution.
    pub kkt_tol: f64,
    /// Cap on pair updates.
    pub max_updates: usize,
    /// Reject kernels with an eigenvalue below `-1e-6`.
    pub check_psd: bool,
    /// Record the dual objective after every update.
    pub record_trace: bool,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig {
            c: 10.0,
            theta: 1.0,
            kkt_tol: 1e-6,
            max_updates: 1_000_000,
            check_psd: true,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual value, scaled by theta.
    pub objective: f64,
    pub signs: Vec<f64>,
    pub c: f64,
    pub kkt_violation: f64,
    /// Set when every multiplier is zero and the bias fell back to 0.
    pub no_support_vectors: bool,
    pub updates: usize,
    /// Dual objective (theta = 1) after each update, if recorded.
    pub trace: Vec<f64>,
}

impl DualSolution {
    /// `a_i s_i`.
    pub fn beta(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.signs)
            .map(|(a, s)| a * s)
            .collect()
    }

    /// Unscaled dual value `1'a - 1/2 b'Kb`.
    pub fn raw_objective(&self, theta: f64) -> f64 {
        self.objective / theta
    }
}

/// Validates `signs` as +-1 with both classes present.
fn check_signs(signs: &[f64]) -> Result<()> {
    if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
        return Err(Error::InvalidConfig("class signs must be +1 or -1".into()));
    }
    let pos = signs.iter().filter(|&&s| s > 0.0).count();
    if pos == 0 || pos == signs.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub fn solve_dual(k: &DMatrix<f64>, signs: &[f64], cfg: &DualConfig) -> Result<DualSolution> {
    solve_dual_warm(k, signs, cfg, None)
}

/// As [`solve_dual`], starting from `warm` when it is feasible for `signs`.
pub fn solve_dual_warm(
    k: &DMatrix<f64>,
    signs: &[f64],
    cfg: &DualConfig,
    warm: Option<&[f64]>,
) -> Result<DualSolution> {
    let n = signs.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimMismatch {
            expected: n,
            found: k.nrows(),
        });
    }
    check_signs(signs)?;
    if !(cfg.c >= 0.0 && cfg.c.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "C must be nonnegative, got {}",
            cfg.c
        )));
    }
    if !(cfg.theta > 0.0 && cfg.theta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "theta must be positive, got {}",
            cfg.theta
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteKernel);
    }
    let k = (k + k.transpose()) * 0.5;
    if cfg.check_psd {
        let shifted = &k + DMatrix::identity(n, n) * PSD_SHIFT;
        if shifted.cholesky().is_none() {
            return Err(Error::NotPsd { shift: PSD_SHIFT });
        }
    }

    let c = cfg.c;
    let mut alpha = match warm {
        Some(w) if is_feasible(w, signs, c) => w.to_vec(),
        _ => vec![0.0; n],
    };
    // gradient of 1/2 a'Qa - 1'a with Q_ij = s_i s_j K_ij
    let mut grad = vec![-1.0; n];
    for j in 0..n {
        if alpha[j] != 0.0 {
            let bj = alpha[j] * signs[j];
            for i in 0..n {
                grad[i] += signs[i] * k[(i, j)] * bj;
            }
        }
    }

    let mut trace = Vec::new();
    let mut updates = 0usize;
    let mut gap_tol = 0.5 * cfg.kkt_tol;
    let (bias, no_sv, violation) = loop {
        while let Some((i, j, gap)) = select_pair(&k, signs, &alpha, &grad, c) {
            if gap <= gap_tol {
                break;
            }
            if updates >= cfg.max_updates {
                return Err(Error::IterationCap {
                    iterations: updates,
                    violation: gap,
                });
            }
            update_pair(&k, signs, &mut alpha, &mut grad, c, i, j);
            updates += 1;
            if cfg.record_trace {
                trace.push(-objective_from_grad(&alpha, &grad));
            }
        }
        let (bias, no_sv) = bias_from_grad(signs, &alpha, &grad, c);
        let violation = kkt_violation(&k, signs, &alpha, bias, c);
        if violation <= cfg.kkt_tol || gap_tol < 1e-14 {
            break (bias, no_sv, violation);
        }
        gap_tol *= 0.1;
    };
    if no_sv {
        log::warn!("dual solution has no support vectors; bias set to 0");
    }

    let beta: Vec<f64> = alpha.iter().zip(signs).map(|(a, s)| a * s).collect();
    let objective = cfg.theta * dual_value(&k, &alpha, &beta);
    Ok(DualSolution {
        alpha,
        bias,
        objective,
        signs: signs.to_vec(),
        c,
        kkt_violation: violation,
        no_support_vectors: no_sv,
        updates,
        trace,
    })
}

fn is_feasible(alpha: &[f64], signs: &[f64], c: f64) -> bool {
    if alpha.len() != signs.len() || alpha.iter().any(|&a| !(0.0..=c).contains(&a)) {
        return false;
    }
    let eq: f64 = alpha.iter().zip(signs).map(|(a, s)| a * s).sum();
    eq.abs() <= 1e-10 * (1.0 + c * alpha.len() as f64)
}

/// `1'a - 1/2 b'Kb` with `b = a*s`.
pub fn dual_value(k: &DMatrix<f64>, alpha: &[f64], beta: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for j in 0..n {
        if beta[j] == 0.0 {
            continue;
        }
        let mut col = 0.0;
        for i in 0..n {
            col += k[(i, j)] * beta[i];
        }
        quad += beta[j] * col;
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Primal-form objective `1/2 a'Qa - 1'a = 1/2 a'(G - 1)`.
fn objective_from_grad(alpha: &[f64], grad: &[f64]) -> f64 {
    0.5 * alpha
        .iter()
        .zip(grad)
        .map(|(a, g)| a * (g - 1.0))
        .sum::<f64>()
}

fn in_up(s: f64, a: f64, c: f64) -> bool {
    (s > 0.0 && a < c) || (s < 0.0 && a > 0.0)
}

fn in_low(s: f64, a: f64, c: f64) -> bool {
    (s > 0.0 && a > 0.0) || (s < 0.0 && a < c)
}

/// Returns `(i, j, gap)` or `None` when no admissible pair exists.
fn select_pair(
    k: &DMatrix<f64>,
    signs: &[f64],
    alpha: &[f64],
    grad: &[f64],
    c: f64,
) -> Option<(usize, usize, f64)> {
    let n = signs.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut i_best = None;
    for t in 0..n {
        if in_up(signs[t], alpha[t], c) {
            let v = -signs[t] * grad[t];
            if v >= gmax {
                gmax = v;
                i_best = Some(t);
            }
        }
    }
    let i = i_best?;
    let mut gmax2 = f64::NEG_INFINITY;
    let mut j_best = None;
    let mut best_gain = f64::INFINITY;
    for t in 0..n {
        if !in_low(signs[t], alpha[t], c) {
            continue;
        }
        let v = signs[t] * grad[t];
        if v >= gmax2 {
            gmax2 = v;
        }
        let diff = gmax + v;
        if diff > 0.0 {
            let mut quad = k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)];
            if quad <= 0.0 {
                quad = TAU;
            }
            let gain = -diff * diff / quad;
            if gain <= best_gain {
                best_gain = gain;
                j_best = Some(t);
            }
        }
    }
    let gap = gmax + gmax2;
    match j_best {
        Some(j) => Some((i, j, gap)),
        None => Some((i, i, gap.min(0.0))),
    }
}

fn update_pair(
    k: &DMatrix<f64>,
    signs: &[f64],
    alpha: &mut [f64],
    grad: &mut [f64],
    c: f64,
    i: usize,
    j: usize,
) {
    let (old_i, old_j) = (alpha[i], alpha[j]);
    let mut quad = k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)];
    if quad <= 0.0 {
        quad = TAU;
    }
    if signs[i] != signs[j] {
        let delta = (-grad[i] - grad[j]) / quad;
        let diff = alpha[i] - alpha[j];
        alpha[i] += delta;
        alpha[j] += delta;
        if diff > 0.0 {
            if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = -diff;
        }
        if diff > 0.0 {
            if alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            }
        } else if alpha[j] > c {
            alpha[j] = c;
            alpha[i] = c + diff;
        }
    } else {
        let delta = (grad[i] - grad[j]) / quad;
        let sum = alpha[i] + alpha[j];
        alpha[i] -= delta;
        alpha[j] += delta;
        if sum > c {
            if alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            }
        } else if alpha[j] < 0.0 {
            alpha[j] = 0.0;
            alpha[i] = sum;
        }
        if sum > c {
            if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = sum;
        }
    }
    let di = (alpha[i] - old_i) * signs[i];
    let dj = (alpha[j] - old_j) * signs[j];
    for t in 0..signs.len() {
        grad[t] += signs[t] * (k[(t, i)] * di + k[(t, j)] * dj);
    }
}

/// Bias from the gradient: `s_i - f_i = -s_i G_i` for every sample.
fn bias_from_grad(signs: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> (f64, bool) {
    if alpha.iter().all(|&a| a == 0.0) {
        return (0.0, true);
    }
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    for t in 0..signs.len() {
        let v = -signs[t] * grad[t];
        let (s, a) = (signs[t], alpha[t]);
        if a > 0.0 && a < c {
            free_sum += v;
            free_n += 1;
        } else if (a <= 0.0 && s > 0.0) || (a >= c && s < 0.0) {
            lb = lb.max(v);
        } else {
            ub = ub.min(v);
        }
    }
    if free_n > 0 {
        return (free_sum / free_n as f64, false);
    }
    let b = match (lb.is_finite(), ub.is_finite()) {
        (true, true) => 0.5 * (lb + ub),
        (true, false) => lb,
        (false, true) => ub,
        (false, false) => 0.0,
    };
    (b, false)
}

/// Bias as the mean of `s_i - f(x_i)` over free support vectors, or the
/// midpoint of the feasible interval when every multiplier sits at a bound.
/// The flag is set when all multipliers are zero.
pub fn compute_bias(k: &DMatrix<f64>, signs: &[f64], alpha: &[f64], c: f64) -> (f64, bool) {
    let n = signs.len();
    let mut grad = vec![-1.0; n];
    for i in 0..n {
        let mut f = 0.0;
        for j in 0..n {
            f += alpha[j] * signs[j] * k[(j, i)];
        }
        grad[i] += signs[i] * f;
    }
    bias_from_grad(signs, alpha, &grad, c)
}

/// Largest violation of the complementary-slackness conditions on the
/// margins `s_i (f(x_i) + b)`.
pub fn kkt_violation(k: &DMatrix<f64>, signs: &[f64], alpha: &[f64], bias: f64, c: f64) -> f64 {
    let n = signs.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut f = 0.0;
        for j in 0..n {
            f += alpha[j] * signs[j] * k[(j, i)];
        }
        let margin = signs[i] * (f + bias);
        let v = if alpha[i] >= c {
            (margin - 1.0).max(0.0)
        } else if alpha[i] <= 0.0 {
            (1.0 - margin).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// `sum_i a_i s_i k(x_i, x) + b`.
pub fn decision_function(sol: &DualSolution, cross: &[f64]) -> Result<f64> {
    if cross.len() != sol.alpha.len() {
        return Err(Error::LengthMismatch {
            expected: sol.alpha.len(),
            found: cross.len(),
        });
    }
    Ok(decision_value(&sol.alpha, &sol.signs, sol.bias, cross))
}

pub(crate) fn decision_value(alpha: &[f64], signs: &[f64], bias: f64, cross: &[f64]) -> f64 {
    let mut score = 0.0;
    for ((a, s), kv) in alpha.iter().zip(signs).zip(cross) {
        if *a != 0.0 {
            score += a * s * kv;
        }
    }
    score + bias
}

/// Ties at exactly zero go to class 1.
pub fn predict_label(score: f64) -> u8 {
    u8::from(score >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_analytic() {
        let k = DMatrix::identity(2, 2);
        let sol = solve_dual(&k, &[1.0, -1.0], &DualConfig::default()).unwrap();
        assert!((sol.alpha[0] - 1.0).abs() < 1e-9 && (sol.alpha[1] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert!(sol.bias.abs() < 1e-12);
        let score = decision_function(&sol, &[1.0, 0.0]).unwrap();
        assert!((score - 1.0).abs() < 1e-9);
        assert_eq!(predict_label(score), 1);
        assert!(decision_function(&sol, &[1.0]).is_err());
    }

    #[test]
    fn single_class_rejected() {
        let k = DMatrix::identity(3, 3);
        assert!(matches!(
            solve_dual(&k, &[1.0, 1.0, 1.0], &DualConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn bad_inputs_rejected() {
        let mut k = DMatrix::identity(2, 2);
        k[(0, 1)] = f64::NAN;
        assert!(matches!(
            solve_dual(&k, &[1.0, -1.0], &DualConfig::default()),
            Err(Error::NonFiniteKernel)
        ));
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_dual(&k, &[1.0, -1.0], &DualConfig::default()),
            Err(Error::NotPsd { .. })
        ));
        let k = DMatrix::identity(3, 3);
        assert!(matches!(
            solve_dual(&k, &[1.0, -1.0], &DualConfig::default()),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn zero_c_gives_no_support_vectors() {
        let k = DMatrix::identity(2, 2);
        let cfg = DualConfig {
            c: 0.0,
            ..DualConfig::default()
        };
        let sol = solve_dual(&k, &[1.0, -1.0], &cfg).unwrap();
        assert_eq!(sol.alpha, vec![0.0, 0.0]);
        assert_eq!(sol.bias, 0.0);
        assert!(sol.no_support_vectors);
        let score = decision_function(&sol, &[0.3, 0.7]).unwrap();
        assert_eq!(score, 0.0);
        assert_eq!(predict_label(score), 1);
    }

    #[test]
    fn iteration_cap_reports_violation() {
        let k = DMatrix::identity(4, 4);
        let cfg = DualConfig {
            max_updates: 0,
            ..DualConfig::default()
        };
        match solve_dual(&k, &[1.0, -1.0, 1.0, -1.0], &cfg) {
            Err(Error::IterationCap {
                iterations: 0,
                violation,
            }) => assert!(violation > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rank_one_shift_leaves_alpha_unchanged() {
        let a = DMatrix::from_fn(6, 6, |i, j| (((i + 1) * (j + 2)) % 7) as f64 / 3.0 - 1.0);
        let k = &a * a.transpose() + DMatrix::identity(6, 6) * 0.1;
        let signs = [1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let cfg = DualConfig {
            kkt_tol: 1e-10,
            ..DualConfig::default()
        };
        let base = solve_dual(&k, &signs, &cfg).unwrap();
        // beta'(11')beta = (alpha's)^2 = 0 on the feasible set
        let shifted = k.add_scalar(2.5);
        let other = solve_dual(&shifted, &signs, &cfg).unwrap();
        for (x, y) in base.alpha.iter().zip(&other.alpha) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        assert!((base.objective - other.objective).abs() < 1e-8);
    }

    #[test]
    fn objective_trace_is_monotone() {
        let pts: Vec<f64> = (0..30).map(|i| ((i * 37) % 17) as f64 / 4.0).collect();
        let k = DMatrix::from_fn(30, 30, |i, j| (-(pts[i] - pts[j]).powi(2) * 0.3).exp());
        let signs: Vec<f64> = pts
            .iter()
            .map(|&p| if p > 2.0 { 1.0 } else { -1.0 })
            .collect();
        let cfg = DualConfig {
            record_trace: true,
            ..DualConfig::default()
        };
        let sol = solve_dual(&k, &signs, &cfg).unwrap();
        assert!(sol.trace.len() > 1);
        for w in sol.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(sol.kkt_violation <= 1e-6);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let pts: Vec<f64> = (0..20).map(|i| ((i * 13) % 11) as f64 / 3.0).collect();
        let k = DMatrix::from_fn(20, 20, |i, j| (-(pts[i] - pts[j]).abs()).exp());
        let signs: Vec<f64> = (0..20)
            .map(|i| if i % 3 == 0 { 1.0 } else { -1.0 })
            .collect();
        let cfg = DualConfig {
            kkt_tol: 1e-9,
            ..DualConfig::default()
        };
        let cold = solve_dual(&k, &signs, &cfg).unwrap();
        let k2 = &k * 0.9 + DMatrix::identity(20, 20) * 0.1;
        let warm = solve_dual_warm(&k2, &signs, &cfg, Some(&cold.alpha)).unwrap();
        let fresh = solve_dual(&k2, &signs, &cfg).unwrap();
        assert!((warm.objective - fresh.objective).abs() < 1e-7);
        // infeasible warm start is ignored
        let bad = vec![1.0; 20];
        let sol = solve_dual_warm(&k2, &signs, &cfg, Some(&bad)).unwrap();
        assert!((sol.objective - fresh.objective).abs() < 1e-7);
    }

    #[test]
    fn theta_scales_objective_only() {
        let k = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.2 });
        let signs = [1.0, 1.0, -1.0, -1.0, 1.0];
        let one = solve_dual(&k, &signs, &DualConfig::default()).unwrap();
        let ten = solve_dual(
            &k,
            &signs,
            &DualConfig {
                theta: 10.0,
                ..DualConfig::default()
            },
        )
        .unwrap();
        assert_eq!(one.alpha, ten.alpha);
        assert!((ten.objective - 10.0 * one.objective).abs() < 1e-9);
    }

    #[test]
    fn public_bias_matches_solver_bias() {
        let pts: Vec<f64> = (0..12).map(|i| i as f64 * 0.4).collect();
        let k = DMatrix::from_fn(12, 12, |i, j| (-(pts[i] - pts[j]).powi(2)).exp());
        let signs: Vec<f64> = pts
            .iter()
            .map(|&p| if p > 2.1 { 1.0 } else { -1.0 })
            .collect();
        let sol = solve_dual(&k, &signs, &DualConfig::default()).unwrap();
        let (b, flag) = compute_bias(&k, &signs, &sol.alpha, sol.c);
        assert!(!flag);
        assert!((b - sol.bias).abs() < 1e-9);
        let (b0, flag0) = compute_bias(&k, &signs, &[0.0; 12], 10.0);
        assert_eq!((b0, flag0), (0.0, true));
    }
}
