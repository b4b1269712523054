#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gram matrix of `n` random 2-D points under a Gaussian kernel.
pub fn random_gaussian_gram(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let gamma = rng.random_range(0.2..2.0);
    DMatrix::from_fn(n, n, |i, j| {
        let d = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
        (-gamma * d).exp()
    })
}

/// `A A'` for a random `n x r` matrix `A`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let r = rng.random_range(1..=n.max(2));
    let a = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose()
}

/// Random 0/1 labels with at least one of each.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    assert!(n >= 2);
    loop {
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        if y.contains(&0) && y.contains(&1) {
            return y;
        }
    }
}

pub fn signs(labels: &[u8]) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// `1'a - 1/2 sum_ij a_i a_j s_i s_j K_ij`.
pub fn dual_objective(k: &DMatrix<f64>, s: &[f64], a: &[f64]) -> f64 {
    let n = a.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * s[i] * s[j] * k[(i, j)];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Maximum of the box- and equality-constrained dual by enumerating every
/// assignment of the variables to {lower bound, upper bound, free} and
/// solving the stationarity system of the free block.
pub fn brute_force_dual(k: &DMatrix<f64>, s: &[f64], c: f64) -> f64 {
    let n = s.len();
    let q = DMatrix::from_fn(n, n, |i, j| s[i] * s[j] * k[(i, j)]);
    let mut best = f64::NEG_INFINITY;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut x = code;
        for v in state.iter_mut() {
            *v = (x % 3) as u8;
            x /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state
            .iter()
            .map(|&st| if st == 1 { c } else { 0.0 })
            .collect();
        if !free.is_empty() {
            // [Q_FF s_F; s_F' 0] [a_F; nu] = [1 - Q_FB a_B; -s_B' a_B]
            let f = free.len();
            let mut m = DMatrix::zeros(f + 1, f + 1);
            let mut rhs = DVector::zeros(f + 1);
            for (r, &i) in free.iter().enumerate() {
                for (cidx, &j) in free.iter().enumerate() {
                    m[(r, cidx)] = q[(i, j)];
                }
                m[(r, f)] = s[i];
                m[(f, r)] = s[i];
                let mut b = 1.0;
                for j in 0..n {
                    if state[j] != 2 {
                        b -= q[(i, j)] * alpha[j];
                    }
                }
                rhs[r] = b;
            }
            rhs[f] = -(0..n)
                .filter(|&j| state[j] != 2)
                .map(|j| s[j] * alpha[j])
                .sum::<f64>();
            let svd = m.clone().svd(true, true);
            let Ok(sol) = svd.solve(&rhs, 1e-12) else {
                continue;
            };
            if (&m * &sol - &rhs).amax() > 1e-8 {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        if alpha.iter().any(|&a| a < -1e-9 || a > c + 1e-9) {
            continue;
        }
        let eq: f64 = alpha.iter().zip(s).map(|(a, s)| a * s).sum();
        if eq.abs() > 1e-8 {
            continue;
        }
        best = best.max(dual_objective(k, s, &alpha));
    }
    best
}

/// Largest complementary-slackness violation on the margins
/// `s_i (sum_j a_j s_j K_ji + b)`.
pub fn margin_kkt_violation(k: &DMatrix<f64>, s: &[f64], a: &[f64], b: f64, c: f64) -> f64 {
    let n = s.len();
    (0..n)
        .map(|i| {
            let f: f64 = (0..n).map(|j| a[j] * s[j] * k[(j, i)]).sum();
            let m = s[i] * (f + b);
            if a[i] <= 0.0 {
                (1.0 - m).max(0.0)
            } else if a[i] >= c {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn block_mean(k: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &i in rows {
        for &j in cols {
            sum += k[(i, j)];
        }
    }
    sum / (rows.len() * cols.len()) as f64
}

/// Sum over both classes of the squared distance between the target and
/// source class means in feature space, written with explicit kernel sums.
/// `labels` covers the target rows `0..nt` followed by the source rows.
pub fn conditional_mmd_direct(k: &DMatrix<f64>, labels: &[u8], nt: usize) -> f64 {
    let mut total = 0.0;
    for class in [1u8, 0u8] {
        let t: Vec<usize> = (0..nt).filter(|&i| labels[i] == class).collect();
        let s: Vec<usize> = (nt..labels.len()).filter(|&i| labels[i] == class).collect();
        total += block_mean(k, &t, &t) + block_mean(k, &s, &s) - 2.0 * block_mean(k, &t, &s);
    }
    total
}

/// Squared distance between the target and source means in feature space.
pub fn marginal_mmd_direct(k: &DMatrix<f64>, nt: usize) -> f64 {
    let t: Vec<usize> = (0..nt).collect();
    let s: Vec<usize> = (nt..k.nrows()).collect();
    block_mean(k, &t, &t) + block_mean(k, &s, &s) - 2.0 * block_mean(k, &t, &s)
}

/// Label-step objective evaluated from its definition, with class counts
/// supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn label_objective(
    k: &DMatrix<f64>,
    alpha: &[f64],
    y: &[f64],
    target_truth: &[u8],
    counts: [usize; 4],
    theta: f64,
    lambda: f64,
) -> f64 {
    let [nt_pos, nt_neg, ns_pos, ns_neg] = counts;
    let nt = target_truth.len();
    let n = y.len();
    let sp: Vec<f64> = (0..n)
        .map(|i| {
            if i < nt {
                y[i] / nt_pos as f64
            } else {
                -y[i] / ns_pos as f64
            }
        })
        .collect();
    let sm: Vec<f64> = (0..n)
        .map(|i| {
            if i < nt {
                (1.0 - y[i]) / nt_neg as f64
            } else {
                -(1.0 - y[i]) / ns_neg as f64
            }
        })
        .collect();
    let beta: Vec<f64> = (0..n).map(|i| alpha[i] * (2.0 * y[i] - 1.0)).collect();
    let mut adapt = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            adapt += k[(i, j)] * (sp[i] * sp[j] + sm[i] * sm[j]);
            quad += k[(i, j)] * beta[i] * beta[j];
        }
    }
    let pen: f64 = (0..nt)
        .map(|i| (y[i] - f64::from(target_truth[i])).powi(2))
        .sum();
    adapt + theta * (alpha.iter().sum::<f64>() - 0.5 * quad) + lambda * pen
}

/// Minimum of [`label_objective`] over every hard source labeling.
pub fn enumerate_label_minimum(
    k: &DMatrix<f64>,
    alpha: &[f64],
    target_truth: &[u8],
    ns: usize,
    counts: [usize; 4],
    theta: f64,
    lambda: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << ns) {
        let mut y: Vec<f64> = target_truth.iter().map(|&l| f64::from(l)).collect();
        y.extend((0..ns).map(|b| f64::from((mask >> b) & 1)));
        best = best.min(label_objective(
            k,
            alpha,
            &y,
            target_truth,
            counts,
            theta,
            lambda,
        ));
    }
    best
}

/// Euclidean projection onto the probability simplex by bisection on the
/// threshold.
pub fn simplex_projection_bisect(v: &[f64]) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|x| (x - t).max(0.0)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).max(0.0)).collect()
}

pub fn smallest_eigenvalue(k: &DMatrix<f64>) -> f64 {
    let sym = (k + k.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
