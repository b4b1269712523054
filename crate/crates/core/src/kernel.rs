//! Base kernels, the bank of Gram matrices over the stacked sample set, and
//! their convex combination.
//!
//! Four radial kinds are supported, each a function of the squared distance
//! and a width `gamma = 1.2^sigma / feature_dim`. All four equal 1 at zero
//! distance, so every Gram matrix in a bank has a unit diagonal.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Stacked;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Above this many stacked samples the dense bank gets large enough to warn about.
pub const DENSE_SAMPLE_WARN: usize = 2000;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Laplacian,
    InvSquareDist,
    InvDist,
}

impl KernelKind {
    /// Canonical order used when building banks and sweeping kernel counts.
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Gaussian,
        KernelKind::Laplacian,
        KernelKind::InvSquareDist,
        KernelKind::InvDist,
    ];

    pub fn default_sigmas(self) -> Vec<f64> {
        match self {
            KernelKind::Gaussian => vec![2.0, 2.5, 3.0, 3.5],
            _ => vec![3.0, 3.5, 4.0, 4.5],
        }
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn eval_sq(self, gamma: f64, sq_dist: f64) -> f64 {
        match self {
            KernelKind::Gaussian => (-gamma * sq_dist).exp(),
            KernelKind::Laplacian => (-(gamma * sq_dist).sqrt()).exp(),
            KernelKind::InvSquareDist => 1.0 / (gamma * sq_dist + 1.0),
            KernelKind::InvDist => 1.0 / ((gamma * sq_dist).sqrt() + 1.0),
        }
    }
}

pub fn base_kernel_value(kind: KernelKind, gamma: f64, xi: &[f64], xj: &[f64]) -> f64 {
    kind.eval_sq(gamma, sq_dist(xi, xj))
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindGrid {
    pub kind: KernelKind,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub grids: Vec<KindGrid>,
    pub feature_dim: usize,
}

/// One member of the bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseKernel {
    pub kind: KernelKind,
    pub sigma: f64,
    pub gamma: f64,
}

impl BaseKernel {
    #[inline]
    pub fn eval(&self, xi: &[f64], xj: &[f64]) -> f64 {
        base_kernel_value(self.kind, self.gamma, xi, xj)
    }
}

impl KernelConfig {
    /// All four kinds with their default width grids (16 kernels).
    pub fn default_for_dim(feature_dim: usize) -> Self {
        Self::with_kinds(&KernelKind::ALL, feature_dim)
    }

    pub fn with_kinds(kinds: &[KernelKind], feature_dim: usize) -> Self {
        KernelConfig {
            grids: kinds
                .iter()
                .map(|&kind| KindGrid {
                    kind,
                    sigmas: kind.default_sigmas(),
                })
                .collect(),
            feature_dim,
        }
    }

    /// First `count / 4` kinds in canonical order; count must be 4, 8, 12 or 16.
    pub fn with_count(count: usize, feature_dim: usize) -> Result<Self> {
        if !matches!(count, 4 | 8 | 12 | 16) {
            return Err(Error::InvalidKernelCount(count));
        }
        Ok(Self::with_kinds(&KernelKind::ALL[..count / 4], feature_dim))
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.is_empty() {
            return Err(Error::InvalidConfig(
                "kernel config selects no kernels".into(),
            ));
        }
        if self
            .grids
            .iter()
            .flat_map(|g| &g.sigmas)
            .any(|s| !s.is_finite())
        {
            return Err(Error::InvalidConfig("sigma values must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grids.iter().map(|g| g.sigmas.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Kind-major, sigma ascending.
    pub fn base_kernels(&self) -> Vec<BaseKernel> {
        let dim = self.feature_dim as f64;
        self.grids
            .iter()
            .flat_map(|g| {
                let mut sigmas = g.sigmas.clone();
                sigmas.sort_by(f64::total_cmp);
                sigmas.into_iter().map(move |sigma| BaseKernel {
                    kind: g.kind,
                    sigma,
                    gamma: 1.2f64.powf(sigma) / dim,
                })
            })
            .collect()
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelWeights(Vec<f64>);

impl KernelWeights {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::InvalidConfig(
                "kernel weights cannot be empty".into(),
            ));
        }
        if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "kernel weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidConfig(format!(
                "kernel weights sum to {sum}, not 1"
            )));
        }
        Ok(KernelWeights(d))
    }

    pub fn uniform(m: usize) -> Self {
        KernelWeights(vec![1.0 / m as f64; m])
    }

    pub fn basis(m: usize, k: usize) -> Self {
        let mut d = vec![0.0; m];
        d[k] = 1.0;
        KernelWeights(d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs_diff(&self, other: &KernelWeights) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct KernelBank {
    matrices: Vec<DMatrix<f64>>,
    bases: Vec<BaseKernel>,
    config: KernelConfig,
    pub target: Range<usize>,
    pub source: Range<usize>,
    exec: Execution,
}

/// Computes one Gram matrix per base kernel over the stacked rows.
pub fn build_bank(data: &Stacked, config: &KernelConfig, exec: Execution) -> Result<KernelBank> {
    config.validate()?;
    if config.feature_dim != data.dim() {
        return Err(Error::DimMismatch {
            expected: config.feature_dim,
            found: data.dim(),
        });
    }
    let n = data.len();
    if n > DENSE_SAMPLE_WARN {
        log::warn!(
            "{n} samples: dense kernel bank will hold {} matrices of {n}x{n}",
            config.len()
        );
    }
    let rows = data.rows();
    let sq = DMatrix::from_fn(n, n, |i, j| sq_dist(&rows[i], &rows[j]));
    let bases = config.base_kernels();
    let matrices = exec.map(bases.len(), |m| {
        let base = bases[m];
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            k[(j, j)] = 1.0;
            for i in 0..j {
                let v = base.kind.eval_sq(base.gamma, sq[(i, j)]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    });
    Ok(KernelBank {
        matrices,
        bases,
        config: config.clone(),
        target: data.target.clone(),
        source: data.source.clone(),
        exec,
    })
}

impl KernelBank {
    /// Wraps precomputed Gram matrices, mainly for tests and custom kernels.
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>, n_target: usize) -> Result<Self> {
        let n = matrices
            .first()
            .map(|m| m.nrows())
            .ok_or(Error::EmptyDataset)?;
        if let Some(bad) = matrices.iter().find(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::DimMismatch {
                expected: n,
                found: bad.nrows(),
            });
        }
        if n_target > n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: n_target,
            });
        }
        let bases = vec![
            BaseKernel {
                kind: KernelKind::Gaussian,
                sigma: f64::NAN,
                gamma: f64::NAN,
            };
            matrices.len()
        ];
        Ok(KernelBank {
            matrices,
            bases,
            config: KernelConfig {
                grids: Vec::new(),
                feature_dim: 0,
            },
            target: 0..n_target,
            source: n_target..n,
            exec: Execution::Sequential,
        })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn matrix(&self, m: usize) -> &DMatrix<f64> {
        &self.matrices[m]
    }

    pub fn bases(&self) -> &[BaseKernel] {
        &self.bases
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    /// `sum_m d_m k_m` over the full sample set.
    pub fn combine(&self, d: &KernelWeights) -> Result<DMatrix<f64>> {
        let n = self.n_samples();
        self.combine_block(d, 0..n)
    }

    /// Combined Gram restricted to the contiguous row/column block `rows`.
    pub fn combine_block(&self, d: &KernelWeights, rows: Range<usize>) -> Result<DMatrix<f64>> {
        if d.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: d.len(),
            });
        }
        let w = d.as_slice();
        let size = rows.len();
        let offset = rows.start;
        let cols = self.exec.map(size, |j| {
            let mut col = vec![0.0; size];
            for (m, k) in self.matrices.iter().enumerate() {
                if w[m] == 0.0 {
                    continue;
                }
                for (i, c) in col.iter_mut().enumerate() {
                    *c += w[m] * k[(offset + i, offset + j)];
                }
            }
            col
        });
        Ok(DMatrix::from_fn(size, size, |i, j| cols[j][i]))
    }
}

/// Combined kernel values between `test` and each training row, using the
/// same widths as the bank they came from.
pub fn cross_kernel(
    bases: &[BaseKernel],
    training_rows: &[Vec<f64>],
    test: &[f64],
    d: &KernelWeights,
) -> Result<Vec<f64>> {
    if training_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if d.len() != bases.len() {
        return Err(Error::LengthMismatch {
            expected: bases.len(),
            found: d.len(),
        });
    }
    let w = d.as_slice();
    training_rows
        .iter()
        .map(|row| {
            if row.len() != test.len() {
                return Err(Error::DimMismatch {
                    expected: row.len(),
                    found: test.len(),
                });
            }
            let sq = sq_dist(row, test);
            let mut v = 0.0;
            for (m, base) in bases.iter().enumerate() {
                if w[m] != 0.0 {
                    v += w[m] * base.kind.eval_sq(base.gamma, sq);
                }
            }
            Ok(v)
        })
        .collect()
}

/// Smallest eigenvalue of the symmetric part of `k`.
pub fn smallest_eigenvalue(k: &DMatrix<f64>) -> f64 {
    let sym = (k + k.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_clouds, stack, Role, SynthSpec};
    use proptest::prelude::*;

    fn small_bank(n_each: usize) -> KernelBank {
        let t = generate_clouds(
            &SynthSpec::two_clouds([0.0, 0.0], [2.0, 1.0], 1.0, [n_each, n_each], 1),
            Role::Target,
        )
        .unwrap();
        let s = generate_clouds(
            &SynthSpec::two_clouds([1.0, 3.0], [3.0, 3.0], 1.0, [n_each, n_each], 2),
            Role::Source,
        )
        .unwrap();
        let st = stack(&t, &s).unwrap();
        build_bank(
            &st,
            &KernelConfig::default_for_dim(2),
            Execution::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn zero_distance_gives_one() {
        for kind in KernelKind::ALL {
            assert_eq!(base_kernel_value(kind, 0.7, &[1.0, 2.0], &[1.0, 2.0]), 1.0);
        }
    }

    #[test]
    fn hand_evaluated_values() {
        let g = base_kernel_value(KernelKind::Gaussian, 1.0, &[0.0, 0.0], &[1.0, 0.0]);
        assert!((g - 0.367_879_441_171_442_3).abs() < 1e-15);
        let v = base_kernel_value(
            KernelKind::InvSquareDist,
            1.0,
            &[0.0, 0.0, 0.0],
            &[1.0, 1.0, 1.0],
        );
        assert_eq!(v, 0.25);
        let l = base_kernel_value(KernelKind::Laplacian, 4.0, &[0.0], &[1.5]);
        assert!((l - (-3.0f64).exp()).abs() < 1e-15);
        let d = base_kernel_value(KernelKind::InvDist, 4.0, &[0.0], &[1.5]);
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn default_grid_widths() {
        let cfg = KernelConfig::default_for_dim(2);
        let bases = cfg.base_kernels();
        assert_eq!(bases.len(), 16);
        let expected = [2.0, 2.5, 3.0, 3.5].map(|s: f64| 1.2f64.powf(s) / 2.0);
        for (b, e) in bases[..4].iter().zip(expected) {
            assert_eq!(b.kind, KernelKind::Gaussian);
            assert_eq!(b.gamma, e);
        }
        assert_eq!(bases[4].kind, KernelKind::Laplacian);
        assert_eq!(bases[4].sigma, 3.0);
        assert_eq!(bases[15].kind, KernelKind::InvDist);
        assert_eq!(bases[15].sigma, 4.5);
    }

    #[test]
    fn kernel_counts() {
        let c4 = KernelConfig::with_count(4, 3).unwrap();
        assert_eq!(c4.len(), 4);
        assert!(c4
            .base_kernels()
            .iter()
            .all(|b| b.kind == KernelKind::Gaussian));
        assert_eq!(
            KernelConfig::with_count(16, 3).unwrap(),
            KernelConfig::default_for_dim(3)
        );
        assert!(matches!(
            KernelConfig::with_count(5, 3),
            Err(Error::InvalidKernelCount(5))
        ));
    }

    #[test]
    fn single_sample_bank() {
        let t =
            crate::dataset::Dataset::from_rows(vec![vec![0.3, 0.1]], Some(vec![1]), Role::Target)
                .unwrap();
        let st = crate::dataset::Stacked {
            features: t.features().clone(),
            target: 0..1,
            source: 1..1,
        };
        let bank = build_bank(
            &st,
            &KernelConfig::default_for_dim(2),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(bank.len(), 16);
        assert!(bank
            .matrices()
            .iter()
            .all(|k| k.shape() == (1, 1) && k[(0, 0)] == 1.0));
    }

    #[test]
    fn bank_invariants() {
        let bank = small_bank(15);
        for k in bank.matrices() {
            let n = k.nrows();
            for i in 0..n {
                assert!((k[(i, i)] - 1.0).abs() <= 1e-12);
                for j in 0..n {
                    assert!((k[(i, j)] - k[(j, i)]).abs() <= 1e-12);
                }
            }
            assert!(smallest_eigenvalue(k) >= -1e-8);
        }
    }

    #[test]
    fn parallel_bank_matches_sequential() {
        let t = generate_clouds(
            &SynthSpec::two_clouds([0.0, 0.0], [2.0, 1.0], 1.0, [10, 10], 1),
            Role::Target,
        )
        .unwrap();
        let s = generate_clouds(
            &SynthSpec::two_clouds([1.0, 3.0], [3.0, 3.0], 1.0, [10, 10], 2),
            Role::Source,
        )
        .unwrap();
        let st = stack(&t, &s).unwrap();
        let cfg = KernelConfig::default_for_dim(2);
        let a = build_bank(&st, &cfg, Execution::Sequential).unwrap();
        let b = build_bank(&st, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a.matrices(), b.matrices());
        let d = KernelWeights::uniform(16);
        assert_eq!(a.combine(&d).unwrap(), b.combine(&d).unwrap());
    }

    #[test]
    fn combine_basis_and_uniform() {
        let bank = small_bank(5);
        let k0 = bank.combine(&KernelWeights::basis(16, 0)).unwrap();
        assert_eq!(&k0, bank.matrix(0));
        let uni = bank.combine(&KernelWeights::uniform(16)).unwrap();
        let mean = bank
            .matrices()
            .iter()
            .fold(DMatrix::zeros(20, 20), |acc, k| acc + k)
            / 16.0;
        assert!((uni.clone() - mean).amax() < 1e-12);
        for i in 0..20 {
            assert!((uni[(i, i)] - 1.0).abs() < 1e-12);
        }
        assert!(bank.combine(&KernelWeights::uniform(3)).is_err());
    }

    #[test]
    fn combine_block_is_a_submatrix() {
        let bank = small_bank(5);
        let d = KernelWeights::uniform(16);
        let full = bank.combine(&d).unwrap();
        let block = bank.combine_block(&d, 3..8).unwrap();
        assert_eq!(block, full.view((3, 3), (5, 5)).into_owned());
    }

    #[test]
    fn cross_kernel_cases() {
        let bases = KernelConfig::with_count(4, 2).unwrap().base_kernels();
        let train = vec![vec![0.0, 0.0], vec![1.0, 2.0]];
        let d = KernelWeights::uniform(4);
        let v = cross_kernel(&bases, &train, &[1.0, 2.0], &d).unwrap();
        assert!((v[1] - 1.0).abs() < 1e-15);

        let unit = [BaseKernel {
            kind: KernelKind::Gaussian,
            sigma: 0.0,
            gamma: 1.0,
        }];
        let v = cross_kernel(
            &unit,
            &[vec![1.0, 0.0]],
            &[0.0, 0.0],
            &KernelWeights::basis(1, 0),
        )
        .unwrap();
        assert!((v[0] - (-1.0f64).exp()).abs() < 1e-15);

        assert!(matches!(
            cross_kernel(&bases, &[], &[0.0, 0.0], &d),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            cross_kernel(&bases, &train, &[0.0], &d),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn weights_validation() {
        assert!(KernelWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(KernelWeights::new(vec![0.6, 0.5]).is_err());
        assert!(KernelWeights::new(vec![1.5, -0.5]).is_err());
        assert!(KernelWeights::new(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn radial_kinds_decay_monotonically(r1 in 0.0f64..20.0, r2 in 0.0f64..20.0, gamma in 0.01f64..5.0) {
            prop_assume!((r1 - r2).abs() > 1e-6);
            let (near, far) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            for kind in [KernelKind::Gaussian, KernelKind::Laplacian] {
                let a = kind.eval_sq(gamma, near * near);
                let b = kind.eval_sq(gamma, far * far);
                // exp underflows to 0 far out; strictness only where representable
                prop_assert!(a > b || (a == 0.0 && b == 0.0));
            }
        }

        #[test]
        fn combine_is_linear(a in 0.0f64..1.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let bank = small_bank(4);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || {
                let raw: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                KernelWeights::new(raw.iter().map(|v| v / s).collect()).unwrap()
            };
            let d1 = draw();
            let d2 = draw();
            let mix: Vec<f64> = d1.as_slice().iter().zip(d2.as_slice()).map(|(x, y)| a * x + (1.0 - a) * y).collect();
            let lhs = bank.combine(&KernelWeights(mix)).unwrap();
            let rhs = bank.combine(&d1).unwrap() * a + bank.combine(&d2).unwrap() * (1.0 - a);
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }
    }
}
