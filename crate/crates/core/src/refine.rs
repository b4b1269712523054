//! Latent source-label update with kernel weights and multipliers fixed.
//!
//! The source block of `y` is relaxed to `[0, 1]` and
//!
//! ```text
//! L(y) = s+(y)' K s+(y) + s-(y)' K s-(y)
//!      + theta * (1'a - 1/2 (a*(2y-1))' K (a*(2y-1)))
//!      + lambda * |y - y_ref|^2        (over the penalized coordinates)
//! ```
//!
//! is descended by projected gradient with backtracking, class counts held
//! fixed. The result is thresholded at 0.5 and kept only if it does not
//! raise `L` above the starting labels. The SVM term is concave in `y`, so
//! `L` is an indefinite quadratic and the descent finds a stationary point,
//! not a global minimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adaptation::{ClassCounts, LabelVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScope {
    /// Penalize deviation of the target block only.
    #[default]
    TargetOnly,
    /// Penalize the whole vector against `[y_t; 0]`, pulling source labels to 0.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub lambda: f64,
    pub scope: PenaltyScope,
    /// Keep the target block fixed at the true labels during descent.
    pub clamp_target: bool,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lambda: 1.0,
            scope: PenaltyScope::TargetOnly,
            clamp_target: true,
            grad_tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// Fixed data of one label update.
#[derive(Debug, Clone)]
pub struct RefinementProblem {
    pub k: DMatrix<f64>,
    pub alpha: Vec<f64>,
    /// True target labels followed by zeros.
    pub y_ref: Vec<f64>,
    pub counts: ClassCounts,
    pub n_target: usize,
    pub theta: f64,
    pub lambda: f64,
    pub scope: PenaltyScope,
}

impl RefinementProblem {
    pub fn new(
        k: DMatrix<f64>,
        alpha: Vec<f64>,
        target_labels: &[u8],
        counts: ClassCounts,
        theta: f64,
        cfg: &RefineConfig,
    ) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || alpha.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                found: alpha.len(),
            });
        }
        let nt = target_labels.len();
        if nt > n || counts.nt_pos + counts.nt_neg != nt || counts.ns_pos + counts.ns_neg != n - nt
        {
            return Err(Error::InvalidConfig(format!(
                "class counts {counts:?} do not fit {nt}+{} samples",
                n.saturating_sub(nt)
            )));
        }
        if counts.nt_pos == 0 || counts.nt_neg == 0 || counts.ns_pos == 0 || counts.ns_neg == 0 {
            return Err(Error::InvalidConfig(
                "class counts must all be at least 1".into(),
            ));
        }
        if cfg.lambda.is_nan() || cfg.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        let mut y_ref: Vec<f64> = target_labels.iter().map(|&l| f64::from(l)).collect();
        y_ref.resize(n, 0.0);
        Ok(RefinementProblem {
            k,
            alpha,
            y_ref,
            counts,
            n_target: nt,
            theta,
            lambda: cfg.lambda,
            scope: cfg.scope,
        })
    }

    fn n(&self) -> usize {
        self.alpha.len()
    }

    fn penalized(&self, i: usize) -> bool {
        match self.scope {
            PenaltyScope::TargetOnly => i < self.n_target,
            PenaltyScope::Full => true,
        }
    }

    fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let c = &self.counts;
        let n = self.n();
        let plus = (0..n)
            .map(|i| {
                if i < self.n_target {
                    1.0 / c.nt_pos as f64
                } else {
                    -1.0 / c.ns_pos as f64
                }
            })
            .collect();
        let minus = (0..n)
            .map(|i| {
                if i < self.n_target {
                    1.0 / c.nt_neg as f64
                } else {
                    -1.0 / c.ns_neg as f64
                }
            })
            .collect();
        (plus, minus)
    }

    /// Objective and gradient at the raw value vector `y`.
    fn eval(&self, y: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let n = self.n();
        let (wp, wm) = self.weights();
        let sp = DVector::from_fn(n, |i, _| wp[i] * y[i]);
        let sm = DVector::from_fn(n, |i, _| wm[i] * (1.0 - y[i]));
        let beta = DVector::from_fn(n, |i, _| self.alpha[i] * (2.0 * y[i] - 1.0));
        let ksp = &self.k * &sp;
        let ksm = &self.k * &sm;
        let kb = &self.k * &beta;
        let adapt = sp.dot(&ksp) + sm.dot(&ksm);
        let svm = self.theta * (self.alpha.iter().sum::<f64>() - 0.5 * beta.dot(&kb));
        let pen: f64 = (0..n)
            .filter(|&i| self.penalized(i))
            .map(|i| (y[i] - self.y_ref[i]).powi(2))
            .sum::<f64>()
            * self.lambda;
        let value = adapt + svm + pen;
        if !want_grad {
            return (value, Vec::new());
        }
        let grad = (0..n)
            .map(|i| {
                let mut g = 2.0 * wp[i] * ksp[i]
                    - 2.0 * wm[i] * ksm[i]
                    - 2.0 * self.theta * self.alpha[i] * kb[i];
                if self.penalized(i) {
                    g += 2.0 * self.lambda * (y[i] - self.y_ref[i]);
                }
                g
            })
            .collect();
        (value, grad)
    }
}

/// `L(y)` with the counts frozen in `prob`.
pub fn objective_l(y: &LabelVector, prob: &RefinementProblem) -> Result<f64> {
    if y.len() != prob.n() || y.n_target() != prob.n_target {
        return Err(Error::DimMismatch {
            expected: prob.n(),
            found: y.len(),
        });
    }
    Ok(prob.eval(y.values(), false).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub labels: LabelVector,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Objective of the relaxed stationary point before thresholding.
    pub relaxed_objective: f64,
    pub iterations: usize,
    /// False when thresholding was worse than the incumbent and it was kept.
    pub improved: bool,
}

pub fn refine_labels(
    prob: &RefinementProblem,
    y_init: &LabelVector,
    cfg: &RefineConfig,
) -> Result<Refinement> {
    let initial_objective = objective_l(y_init, prob)?;
    let n = prob.n();
    let nt = prob.n_target;
    let first_free = if cfg.clamp_target { nt } else { 0 };
    let mut y: Vec<f64> = y_init.values().to_vec();
    for (i, v) in y.iter_mut().enumerate().take(nt) {
        *v = prob.y_ref[i];
    }

    let (mut value, mut grad) = prob.eval(&y, true);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let pg = (first_free..n)
            .map(|i| projected_component(y[i], grad[i]).abs())
            .fold(0.0, f64::max);
        if pg < cfg.grad_tol {
            break;
        }
        let mut accepted = false;
        while step > 1e-14 {
            let mut trial = y.clone();
            for i in first_free..n {
                trial[i] = (y[i] - step * grad[i]).clamp(0.0, 1.0);
            }
            let (tv, tg) = prob.eval(&trial, true);
            let mut lin = 0.0;
            let mut dist2 = 0.0;
            for i in first_free..n {
                let dy = trial[i] - y[i];
                lin += grad[i] * dy;
                dist2 += dy * dy;
            }
            if tv <= value + lin + dist2 / (2.0 * step) && tv <= value {
                y = trial;
                value = tv;
                grad = tg;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        step = 1.0;
    }
    let relaxed_objective = value;

    let source: Vec<f64> = y[nt..].to_vec();
    let hard = y_init.with_source(&source)?.hardened();
    let final_candidate = objective_l(&hard, prob)?;
    let (labels, final_objective, improved) = if final_candidate <= initial_objective {
        (hard, final_candidate, true)
    } else {
        (y_init.clone(), initial_objective, false)
    };
    Ok(Refinement {
        labels,
        initial_objective,
        final_objective,
        relaxed_objective,
        iterations,
        improved,
    })
}

/// Gradient component that can move `v` inside `[0, 1]`.
fn projected_component(v: f64, g: f64) -> f64 {
    if (v <= 0.0 && g > 0.0) || (v >= 1.0 && g < 0.0) {
        0.0
    } else {
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{adaptation_term, class_counts, scaling_vectors};
    use crate::svm::dual_value;

    fn gram(points: &[[f64; 2]]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| {
            let d = (points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2);
            (-0.5 * d).exp()
        })
    }

    #[test]
    fn objective_at_current_labels_decomposes() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [0.1, 1.0], [2.2, 0.9], [1.0, 3.0]];
        let k = gram(&pts);
        let y = LabelVector::from_hard(&[0, 1], &[0, 1, 1]).unwrap();
        let counts = class_counts(&y).unwrap();
        let alpha = vec![0.5, 1.0, 0.25, 0.0, 0.75];
        let prob = RefinementProblem::new(
            k.clone(),
            alpha.clone(),
            &[0, 1],
            counts,
            1.0,
            &RefineConfig::default(),
        )
        .unwrap();
        let l = objective_l(&y, &prob).unwrap();
        let adapt = adaptation_term(&k, &scaling_vectors(&y, &counts).unwrap()).unwrap();
        let beta: Vec<f64> = alpha.iter().zip(y.signs()).map(|(a, s)| a * s).collect();
        let dual = dual_value(&k, &alpha, &beta);
        assert!((l - (adapt + dual)).abs() < 1e-12);
    }

    #[test]
    fn target_perturbation_costs_lambda_delta_squared() {
        let k = DMatrix::identity(4, 4);
        let counts = ClassCounts {
            nt_pos: 1,
            nt_neg: 1,
            ns_pos: 1,
            ns_neg: 1,
        };
        let cfg = RefineConfig {
            lambda: 3.0,
            ..RefineConfig::default()
        };
        let prob =
            RefinementProblem::new(k.clone(), vec![0.0; 4], &[1, 0], counts, 1.0, &cfg).unwrap();
        // zero out the adaptation contribution by using a zero kernel
        let prob = RefinementProblem {
            k: DMatrix::zeros(4, 4),
            ..prob
        };
        let y0 = LabelVector::from_values(vec![1.0, 0.0, 1.0, 0.0], 2);
        let y1 = LabelVector::from_values(vec![0.8, 0.0, 1.0, 0.0], 2);
        let diff = objective_l(&y1, &prob).unwrap() - objective_l(&y0, &prob).unwrap();
        assert!((diff - 3.0 * 0.04).abs() < 1e-12);
    }

    #[test]
    fn lambda_does_not_move_source_when_target_clamped() {
        let pts = [
            [0.0, 0.0],
            [2.0, 0.0],
            [0.3, 0.2],
            [1.8, 0.1],
            [0.9, 0.2],
            [2.4, 0.3],
        ];
        let k = gram(&pts);
        let y = LabelVector::from_hard(&[0, 1], &[1, 0, 1, 0]).unwrap();
        let counts = class_counts(&y).unwrap();
        let mut outs = Vec::new();
        for lambda in [0.1, 1.0, 10.0] {
            let cfg = RefineConfig {
                lambda,
                ..RefineConfig::default()
            };
            let prob = RefinementProblem::new(k.clone(), vec![0.0; 6], &[0, 1], counts, 1.0, &cfg)
                .unwrap();
            outs.push(refine_labels(&prob, &y, &cfg).unwrap().labels);
        }
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[1], outs[2]);
    }

    #[test]
    fn target_block_never_changes() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [0.3, 0.2], [1.8, 0.1]];
        let k = gram(&pts);
        let y = LabelVector::from_hard(&[0, 1], &[1, 0]).unwrap();
        let counts = class_counts(&y).unwrap();
        let cfg = RefineConfig {
            clamp_target: false,
            lambda: 0.0,
            ..RefineConfig::default()
        };
        let prob = RefinementProblem::new(k, vec![1.0, 1.0, 1.0, 1.0], &[0, 1], counts, 1.0, &cfg)
            .unwrap();
        let out = refine_labels(&prob, &y, &cfg).unwrap();
        assert_eq!(out.labels.target(), y.target());
        assert!(out.final_objective <= out.initial_objective + 1e-9);
    }

    #[test]
    fn full_scope_penalizes_source() {
        let k = DMatrix::zeros(4, 4);
        let counts = ClassCounts {
            nt_pos: 1,
            nt_neg: 1,
            ns_pos: 1,
            ns_neg: 1,
        };
        let cfg = RefineConfig {
            scope: PenaltyScope::Full,
            lambda: 2.0,
            ..RefineConfig::default()
        };
        let prob = RefinementProblem::new(k, vec![0.0; 4], &[1, 0], counts, 1.0, &cfg).unwrap();
        let y = LabelVector::from_values(vec![1.0, 0.0, 1.0, 1.0], 2);
        assert!((objective_l(&y, &prob).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_problem() {
        let counts = ClassCounts {
            nt_pos: 1,
            nt_neg: 1,
            ns_pos: 1,
            ns_neg: 1,
        };
        assert!(RefinementProblem::new(
            DMatrix::zeros(4, 4),
            vec![0.0; 3],
            &[1, 0],
            counts,
            1.0,
            &RefineConfig::default()
        )
        .is_err());
        let bad = ClassCounts {
            ns_pos: 0,
            ns_neg: 2,
            ..counts
        };
        assert!(RefinementProblem::new(
            DMatrix::zeros(4, 4),
            vec![0.0; 4],
            &[1, 0],
            bad,
            1.0,
            &RefineConfig::default()
        )
        .is_err());
    }
}
