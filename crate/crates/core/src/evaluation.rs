//! Classification metrics and repeated-trial experiment harnesses on
//! synthetic two-cloud scenarios.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_clouds, Dataset, Role, SynthSpec};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::trainer::{train, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_labels(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch {
                expected: truth.len(),
                found: predicted.len(),
            });
        }
        let mut c = ConfusionCounts::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fn_ += 1,
                (_, 1) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub gmean: f64,
    pub tpr: f64,
    pub tnr: f64,
    /// Set when the evaluated set had no positives and `tpr` was forced to 0.
    pub tpr_undefined: bool,
    /// Set when the evaluated set had no negatives and `tnr` was forced to 0.
    pub tnr_undefined: bool,
}

/// Accuracy, true positive/negative rates and their geometric mean.
pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let rate = |hit: usize, miss: usize| {
        if hit + miss == 0 {
            (0.0, true)
        } else {
            (hit as f64 / (hit + miss) as f64, false)
        }
    };
    let (tpr, tpr_undefined) = rate(c.tp, c.fn_);
    let (tnr, tnr_undefined) = rate(c.tn, c.fp);
    Ok(Metrics {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        gmean: (tpr * tnr).sqrt(),
        tpr,
        tnr,
        tpr_undefined,
        tnr_undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub metric: String,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single trial).
    pub std: f64,
    pub fingerprint: String,
}

impl TrialReport {
    pub fn new(
        metric: &str,
        variant: Variant,
        seeds: Vec<u64>,
        values: Vec<f64>,
        fingerprint: String,
    ) -> Self {
        let (mean, std) = mean_std(&values);
        TrialReport {
            metric: metric.to_string(),
            variant,
            seeds,
            values,
            mean,
            std,
            fingerprint,
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Two-cloud target/source/test geometry. Cloud 0 is the negative class,
/// cloud 1 the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub target_means: [[f64; 2]; 2],
    pub source_means: [[f64; 2]; 2],
    pub target_sigma: f64,
    pub source_sigma: f64,
    /// `[negatives, positives]` per split.
    pub target_counts: [usize; 2],
    pub source_counts: [usize; 2],
    pub test_counts: [usize; 2],
    /// Most labeled positives a curve may request.
    pub positive_pool: usize,
}

impl Scenario {
    /// Few labeled target points per class, a large unlabeled source whose
    /// class clouds are displaced from the target's, and a test set drawn
    /// from the target distribution.
    pub fn figure2() -> Self {
        Scenario {
            name: "figure2".into(),
            target_means: [[0.0, 0.0], [2.0, 0.0]],
            source_means: [[0.0, 1.5], [2.0, 1.5]],
            target_sigma: 0.8,
            source_sigma: 0.8,
            target_counts: [5, 5],
            source_counts: [200, 200],
            test_counts: [50, 50],
            positive_pool: 14,
        }
    }

    /// Imbalanced variant for true-positive-rate curves: ten labeled
    /// negatives, a configurable number of labeled positives.
    pub fn positives_curve() -> Self {
        Scenario {
            name: "positives".into(),
            target_counts: [10, 1],
            source_counts: [60, 60],
            ..Scenario::figure2()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "figure2" => Ok(Scenario::figure2()),
            "positives" => Ok(Scenario::positives_curve()),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other:?}"))),
        }
    }

    /// Target, source and test sets for one trial seed.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        let spec = |means: &[[f64; 2]; 2], sigma: f64, counts: [usize; 2], stream: u64| SynthSpec {
            means: means.iter().map(|m| m.to_vec()).collect(),
            sigmas: vec![sigma, sigma],
            counts: counts.to_vec(),
            seed: seed.wrapping_mul(4).wrapping_add(stream),
        };
        let target = generate_clouds(
            &spec(&self.target_means, self.target_sigma, self.target_counts, 0),
            Role::Target,
        )?;
        let source = generate_clouds(
            &spec(&self.source_means, self.source_sigma, self.source_counts, 1),
            Role::Source,
        )?;
        let test = generate_clouds(
            &spec(&self.target_means, self.target_sigma, self.test_counts, 2),
            Role::Test,
        )?;
        Ok((target, source, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn new(scenario: Scenario, train: TrainConfig) -> Self {
        ExperimentSpec { scenario, train }
    }

    /// Stable hash of everything except the trial seed.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        format!("{:016x}", h.finish())
    }

    /// Generates data for `seed`, trains, and scores the test split.
    pub fn run_one(&self, seed: u64) -> Result<Metrics> {
        let (target, source, test) = self.scenario.generate(seed)?;
        let source = self.train.variant.uses_source().then_some(&source);
        let model = train(&target, source, &self.train)?;
        let pred = model.predict(&test)?;
        let truth = test.labels().ok_or(Error::MissingLabelColumn)?;
        metrics(&ConfusionCounts::from_labels(truth, &pred.labels)?)
    }
}

/// Per-trial metrics of one variant, seeds `base..base+n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metrics>,
    pub fingerprint: String,
}

impl TrialOutcome {
    pub fn report(&self, metric: &str) -> Result<TrialReport> {
        let pick: fn(&Metrics) -> f64 = match metric {
            "accuracy" => |m| m.accuracy,
            "gmean" => |m| m.gmean,
            "tpr" => |m| m.tpr,
            "tnr" => |m| m.tnr,
            other => return Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        };
        Ok(TrialReport::new(
            metric,
            self.variant,
            self.seeds.clone(),
            self.metrics.iter().map(pick).collect(),
            self.fingerprint.clone(),
        ))
    }
}

/// Runs `n_trials` independent trials; a failure names its seed.
pub fn run_trials(
    spec: &ExperimentSpec,
    n_trials: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<TrialOutcome> {
    let seeds: Vec<u64> = (0..n_trials as u64).map(|i| base_seed + i).collect();
    let results = exec.map(seeds.len(), |i| {
        spec.run_one(seeds[i]).map_err(|e| Error::Trial {
            seed: seeds[i],
            source: Box::new(e),
        })
    });
    let metrics = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TrialOutcome {
        variant: spec.train.variant,
        seeds,
        metrics,
        fingerprint: spec.fingerprint(),
    })
}

/// The same seeds for every variant, so results can be compared pairwise.
pub fn paired_trials(
    scenario: &Scenario,
    base: &TrainConfig,
    variants: &[Variant],
    n_trials: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<Vec<TrialOutcome>> {
    variants
        .iter()
        .map(|&variant| {
            let spec = ExperimentSpec::new(
                scenario.clone(),
                TrainConfig {
                    variant,
                    ..base.clone()
                },
            );
            run_trials(&spec, n_trials, base_seed, exec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_pos: usize,
    pub report: TrialReport,
}

/// Mean true positive rate as the number of labeled positives varies.
pub fn tpr_curve(
    spec: &ExperimentSpec,
    positives: &[usize],
    n_trials: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<Vec<CurvePoint>> {
    for &n_pos in positives {
        if n_pos == 0 || n_pos > spec.scenario.positive_pool {
            return Err(Error::InsufficientPositives {
                requested: n_pos,
                available: spec.scenario.positive_pool,
            });
        }
    }
    positives
        .iter()
        .map(|&n_pos| {
            let mut scenario = spec.scenario.clone();
            scenario.target_counts[1] = n_pos;
            let point = ExperimentSpec::new(scenario, spec.train.clone());
            let outcome = run_trials(&point, n_trials, base_seed, exec)?;
            Ok(CurvePoint {
                n_pos,
                report: outcome.report("tpr")?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kernel_count: usize,
    pub accuracy: TrialReport,
    pub gmean: TrialReport,
}

/// Accuracy and geometric mean as the bank grows 4 -> 8 -> 12 -> 16 kernels.
pub fn kernel_sweep(
    spec: &ExperimentSpec,
    counts: &[usize],
    n_trials: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<Vec<SweepPoint>> {
    if let Some(&bad) = counts.iter().find(|&&c| !matches!(c, 4 | 8 | 12 | 16)) {
        return Err(Error::InvalidKernelCount(bad));
    }
    counts
        .iter()
        .map(|&kernel_count| {
            let point = ExperimentSpec::new(
                spec.scenario.clone(),
                TrainConfig {
                    kernel_count,
                    ..spec.train.clone()
                },
            );
            let outcome = run_trials(&point, n_trials, base_seed, exec)?;
            Ok(SweepPoint {
                kernel_count,
                accuracy: outcome.report("accuracy")?,
                gmean: outcome.report("gmean")?,
            })
        })
        .collect()
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Plain-text summary table, one row per report.
pub fn summary_table(reports: &[TrialReport]) -> String {
    let mut out = format!(
        "{:<10} {:<10} {:>8} {:>8} {:>6}\n",
        "variant", "metric", "mean", "std", "n"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:<10} {:>8.4} {:>8.4} {:>6}\n",
            r.variant.name(),
            r.metric,
            r.mean,
            r.std,
            r.values.len()
        ));
    }
    out
}
