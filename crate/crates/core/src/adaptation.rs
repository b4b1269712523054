//! Class-conditional maximum mean discrepancy between target and source
//! samples, written as quadratic forms in the kernel matrix.
//!
//! For labels `y` (target block fixed, source block latent) the scaling
//! vectors are
//!
//! ```text
//! s+_i =  y_i / Nt+        (target)      s-_i =  (1 - y_i) / Nt-   (target)
//! s+_i = -y_i / Ns+        (source)      s-_i = -(1 - y_i) / Ns-   (source)
//! ```
//!
//! and the discrepancy is `s+' K s+ + s-' K s-`, the sum of the squared RKHS
//! distances between the per-class target and source means.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelBank;

const HARDEN_THRESHOLD: f64 = 0.5;

/// Stacked label vector: a frozen {0,1} target block followed by a source
/// block in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    values: Vec<f64>,
    n_target: usize,
}

impl LabelVector {
    pub fn new(target: &[u8], source: Vec<f64>) -> Result<Self> {
        if let Some(&l) = target.iter().find(|&&l| l > 1) {
            return Err(Error::LabelOutOfRange {
                line: 0,
                value: l.to_string(),
            });
        }
        if let Some(v) = source.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "source label {v} outside [0, 1]"
            )));
        }
        let mut values: Vec<f64> = target.iter().map(|&l| f64::from(l)).collect();
        values.extend(source);
        Ok(LabelVector {
            values,
            n_target: target.len(),
        })
    }

    pub fn from_hard(target: &[u8], source: &[u8]) -> Result<Self> {
        Self::new(target, source.iter().map(|&l| f64::from(l)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_source(&self) -> usize {
        self.values.len() - self.n_target
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn target(&self) -> &[f64] {
        &self.values[..self.n_target]
    }

    pub fn source(&self) -> &[f64] {
        &self.values[self.n_target..]
    }

    pub fn is_target(&self, i: usize) -> bool {
        i < self.n_target
    }

    pub fn target_labels(&self) -> Vec<u8> {
        self.target()
            .iter()
            .map(|&v| u8::from(v >= HARDEN_THRESHOLD))
            .collect()
    }

    pub fn source_labels(&self) -> Vec<u8> {
        self.source()
            .iter()
            .map(|&v| u8::from(v >= HARDEN_THRESHOLD))
            .collect()
    }

    /// Replaces the source block, keeping the target block untouched.
    /// Values are clamped into [0, 1].
    pub fn with_source(&self, source: &[f64]) -> Result<Self> {
        if source.len() != self.n_source() {
            return Err(Error::LengthMismatch {
                expected: self.n_source(),
                found: source.len(),
            });
        }
        let mut values = self.values.clone();
        for (dst, &v) in values[self.n_target..].iter_mut().zip(source) {
            *dst = v.clamp(0.0, 1.0);
        }
        Ok(LabelVector {
            values,
            n_target: self.n_target,
        })
    }

    /// Unchecked: the caller keeps every entry in [0, 1].
    #[cfg(test)]
    pub(crate) fn from_values(values: Vec<f64>, n_target: usize) -> Self {
        LabelVector { values, n_target }
    }

    /// Source block thresholded at 0.5.
    pub fn hardened(&self) -> Self {
        let mut values = self.values.clone();
        for v in &mut values[self.n_target..] {
            *v = if *v >= HARDEN_THRESHOLD { 1.0 } else { 0.0 };
        }
        LabelVector {
            values,
            n_target: self.n_target,
        }
    }

    /// Hardened labels with an empty source class filled by reassigning the
    /// single most extreme source entry: the highest soft label becomes
    /// positive if no source entry is, the lowest becomes negative if no
    /// source entry is. Ties go to the lowest index.
    pub fn hardened_repaired(&self) -> Result<Self> {
        let nt = self.n_target;
        let ns = self.n_source();
        if nt == 0 || ns == 0 {
            return Err(Error::EmptyDataset);
        }
        let target_pos = self
            .target()
            .iter()
            .filter(|&&v| v >= HARDEN_THRESHOLD)
            .count();
        if target_pos == 0 {
            return Err(Error::NoPositiveTargets);
        }
        if target_pos == nt {
            return Err(Error::NoNegativeTargets);
        }
        if ns < 2 {
            return Err(Error::InsufficientSource);
        }
        let mut hard = self.hardened();
        let soft = self.source();
        let pos = hard.source().iter().filter(|&&v| v == 1.0).count();
        if pos == 0 {
            let k = argbest(soft, |a, b| a > b);
            hard.values[nt + k] = 1.0;
        } else if pos == ns {
            let k = argbest(soft, |a, b| a < b);
            hard.values[nt + k] = 0.0;
        }
        Ok(hard)
    }

    /// `2y - 1`, used as the SVM class signs.
    pub fn signs(&self) -> Vec<f64> {
        self.values.iter().map(|&v| 2.0 * v - 1.0).collect()
    }

    /// Source labels that differ between `self` and `other` after hardening.
    pub fn flips(&self, other: &LabelVector) -> usize {
        self.source_labels()
            .iter()
            .zip(other.source_labels())
            .filter(|(a, b)| **a != *b)
            .count()
    }
}

fn argbest(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub nt_pos: usize,
    pub nt_neg: usize,
    pub ns_pos: usize,
    pub ns_neg: usize,
}

impl ClassCounts {
    fn all_positive(&self) -> bool {
        self.nt_pos > 0 && self.nt_neg > 0 && self.ns_pos > 0 && self.ns_neg > 0
    }
}

/// Per-class counts of the hardened, repaired labels.
pub fn class_counts(y: &LabelVector) -> Result<ClassCounts> {
    let hard = y.hardened_repaired()?;
    let count = |block: &[f64]| block.iter().filter(|&&v| v == 1.0).count();
    let nt_pos = count(hard.target());
    let ns_pos = count(hard.source());
    Ok(ClassCounts {
        nt_pos,
        nt_neg: hard.n_target() - nt_pos,
        ns_pos,
        ns_neg: hard.n_source() - ns_pos,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationVectors {
    pub s_plus: DVector<f64>,
    pub s_minus: DVector<f64>,
}

impl AdaptationVectors {
    pub fn as_list(&self) -> Vec<DVector<f64>> {
        vec![self.s_plus.clone(), self.s_minus.clone()]
    }
}

/// Scaling vectors for possibly soft labels with fixed class counts.
pub fn scaling_vectors(y: &LabelVector, counts: &ClassCounts) -> Result<AdaptationVectors> {
    if !counts.all_positive() {
        return Err(Error::InvalidConfig(format!(
            "class counts must all be at least 1, got {counts:?}"
        )));
    }
    let (tp, tn) = (counts.nt_pos as f64, counts.nt_neg as f64);
    let (sp, sn) = (counts.ns_pos as f64, counts.ns_neg as f64);
    let n = y.len();
    let vals = y.values();
    let s_plus = DVector::from_fn(n, |i, _| {
        if y.is_target(i) {
            vals[i] / tp
        } else {
            -vals[i] / sp
        }
    });
    let s_minus = DVector::from_fn(n, |i, _| {
        if y.is_target(i) {
            (1.0 - vals[i]) / tn
        } else {
            -(1.0 - vals[i]) / sn
        }
    });
    Ok(AdaptationVectors { s_plus, s_minus })
}

/// Label-free scaling vector: `1/Nt` on target rows, `-1/Ns` on source rows.
pub fn marginal_scaling_vector(n_target: usize, n_source: usize) -> Result<DVector<f64>> {
    if n_target == 0 || n_source == 0 {
        return Err(Error::EmptyDataset);
    }
    let (a, b) = (1.0 / n_target as f64, -1.0 / n_source as f64);
    Ok(DVector::from_fn(n_target + n_source, |i, _| {
        if i < n_target {
            a
        } else {
            b
        }
    }))
}

/// `s' K s`.
pub fn quad_form(k: &DMatrix<f64>, s: &DVector<f64>) -> Result<f64> {
    if k.nrows() != s.len() || k.ncols() != s.len() {
        return Err(Error::DimMismatch {
            expected: k.nrows(),
            found: s.len(),
        });
    }
    Ok(s.dot(&(k * s)))
}

/// Class-conditional discrepancy `s+' K s+ + s-' K s-`.
pub fn adaptation_term(k: &DMatrix<f64>, v: &AdaptationVectors) -> Result<f64> {
    Ok(quad_form(k, &v.s_plus)? + quad_form(k, &v.s_minus)?)
}

/// `p_m = s' k_m s` for each base kernel and each scaling vector.
pub fn projections(bank: &KernelBank, vectors: &[DVector<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = bank.n_samples();
    if let Some(bad) = vectors.iter().find(|s| s.len() != n) {
        return Err(Error::DimMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let per_kernel = bank.execution().map(bank.len(), |m| {
        let k = bank.matrix(m);
        vectors
            .iter()
            .map(|s| s.dot(&(k * s)))
            .collect::<Vec<f64>>()
    });
    Ok((0..vectors.len())
        .map(|v| per_kernel.iter().map(|row| row[v]).collect())
        .collect())
}

/// `(p+, p-)` for the class-conditional vectors.
pub fn kernel_projections(
    bank: &KernelBank,
    v: &AdaptationVectors,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = projections(bank, &v.as_list())?;
    let minus = p.pop().expect("two vectors");
    let plus = p.pop().expect("two vectors");
    Ok((plus, minus))
}
