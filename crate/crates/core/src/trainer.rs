//! End-to-end training, the method variants, and the model file.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    class_counts, marginal_scaling_vector, projections, scaling_vectors, LabelVector,
};
use crate::dataset::{stack, Dataset, Stacked, Standardizer};
use crate::error::{Error, Result};
use crate::kernel::{build_bank, cross_kernel, KernelBank, KernelConfig, KernelWeights};
use crate::mkl::{run_inner_loop, InnerProblem, InnerStep, MklConfig};
use crate::par::Execution;
use crate::refine::{refine_labels, PenaltyScope, RefineConfig, RefinementProblem};
use crate::svm::{decision_value, predict_label, solve_dual, DualConfig, DualSolution};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Full alternation: kernel weights, multipliers and source labels.
    #[serde(rename = "stsvm")]
    Stsvm,
    /// One weight/multiplier pass on the initial source labels, no label updates.
    #[serde(rename = "stsvm-i")]
    StsvmI,
    /// Label-free marginal discrepancy with a target-only SVM risk.
    #[serde(rename = "dtsvm")]
    DtsvmLike,
    /// Uniform kernel weights, target data only.
    #[serde(rename = "svm")]
    SvmBaseline,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Stsvm => "stsvm",
            Variant::StsvmI => "stsvm-i",
            Variant::DtsvmLike => "dtsvm",
            Variant::SvmBaseline => "svm",
        }
    }

    pub fn uses_source(self) -> bool {
        self != Variant::SvmBaseline
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stsvm" => Ok(Variant::Stsvm),
            "stsvm-i" | "stsvm_i" => Ok(Variant::StsvmI),
            "dtsvm" => Ok(Variant::DtsvmLike),
            "svm" => Ok(Variant::SvmBaseline),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub c: f64,
    pub theta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    /// 4, 8, 12 or 16 base kernels.
    pub kernel_count: usize,
    pub tol_d: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub variant: Variant,
    pub seed: u64,
    pub penalty_scope: PenaltyScope,
    pub clamp_target: bool,
    /// Run the label update after each weight pass (STSVM only).
    pub refine: bool,
    /// Standardize features using statistics of the training rows.
    pub standardize: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 10.0,
            theta: 1.0,
            epsilon: 1e-4,
            lambda: 1.0,
            kernel_count: 16,
            tol_d: 1e-4,
            max_inner: 100,
            max_outer: 20,
            variant: Variant::Stsvm,
            seed: 0,
            penalty_scope: PenaltyScope::TargetOnly,
            clamp_target: true,
            refine: true,
            standardize: false,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn with_variant(variant: Variant) -> Self {
        TrainConfig {
            variant,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("C", self.c)?;
        positive("theta", self.theta)?;
        positive("epsilon", self.epsilon)?;
        positive("tol_d", self.tol_d)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !matches!(self.kernel_count, 4 | 8 | 12 | 16) {
            return Err(Error::InvalidKernelCount(self.kernel_count));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidConfig("max_outer must be at least 1".into()));
        }
        Ok(())
    }

    fn dual(&self) -> DualConfig {
        DualConfig {
            c: self.c,
            theta: self.theta,
            check_psd: false,
            ..DualConfig::default()
        }
    }

    fn mkl(&self) -> MklConfig {
        MklConfig {
            dual: self.dual(),
            epsilon: self.epsilon,
            tol_d: self.tol_d,
            max_inner: self.max_inner,
            ..MklConfig::default()
        }
    }

    fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            lambda: self.lambda,
            scope: self.penalty_scope,
            clamp_target: self.clamp_target,
            ..RefineConfig::default()
        }
    }
}

/// One pass of the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// `h` at the end of the weight pass.
    pub h_value: f64,
    /// `L` after the label update, with the counts used during it.
    pub l_value: Option<f64>,
    /// `L` of the labels entering the update.
    pub l_before: Option<f64>,
    pub delta_d: f64,
    pub flipped: usize,
    pub inner_converged: bool,
    pub inner: Vec<InnerStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub variant: Variant,
    pub config: TrainConfig,
    pub kernel: KernelConfig,
    pub weights: KernelWeights,
    pub standardizer: Option<Standardizer>,
    /// Rows entering the SVM expansion (after standardization).
    pub support_rows: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub signs: Vec<f64>,
    pub bias: f64,
    /// Final stacked labels; the source block is empty for the baseline.
    pub labels: LabelVector,
    pub converged: bool,
    pub log: Vec<OuterRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ModelArtifact =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        if model.alpha.len() != model.support_rows.len() || model.signs.len() != model.alpha.len() {
            return Err(Error::Serialization("inconsistent support set".into()));
        }
        if model.weights.len() != model.kernel.len() {
            return Err(Error::Serialization(
                "kernel weights do not match kernel config".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn feature_dim(&self) -> usize {
        self.kernel.feature_dim
    }

    /// Scores every row of `data` and thresholds at zero.
    pub fn predict(&self, data: &Dataset) -> Result<Prediction> {
        if data.is_empty() {
            return Ok(Prediction {
                labels: Vec::new(),
                scores: Vec::new(),
            });
        }
        if data.dim() != self.feature_dim() {
            return Err(Error::DimMismatch {
                expected: self.feature_dim(),
                found: data.dim(),
            });
        }
        let bases = self.kernel.base_kernels();
        let rows = data.rows();
        let scores = self
            .config
            .execution
            .map(rows.len(), |i| {
                let x = match &self.standardizer {
                    Some(st) => st.apply_row(&rows[i]),
                    None => rows[i].clone(),
                };
                let cross = cross_kernel(&bases, &self.support_rows, &x, &self.weights)?;
                Ok(decision_value(&self.alpha, &self.signs, self.bias, &cross))
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let labels = scores.iter().map(|&s| predict_label(s)).collect();
        Ok(Prediction { labels, scores })
    }
}

fn check_target(target: &Dataset) -> Result<Vec<u8>> {
    let labels = target.labels().ok_or(Error::MissingLabelColumn)?.to_vec();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(labels)
}

fn signs_of(labels: &[u8]) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Uniform-weight SVM on the target block of `bank`, then its predictions
/// on the source block.
fn initial_labels_from_bank(
    bank: &KernelBank,
    target_labels: &[u8],
    cfg: &TrainConfig,
) -> Result<LabelVector> {
    let d = KernelWeights::uniform(bank.len());
    let k = bank.combine(&d)?;
    let nt = bank.target.len();
    let k_tt = k.view((0, 0), (nt, nt)).into_owned();
    let signs = signs_of(target_labels);
    let sol = solve_dual(&k_tt, &signs, &cfg.dual())?;
    let source: Vec<f64> = bank
        .source
        .clone()
        .map(|j| {
            let cross: Vec<f64> = (0..nt).map(|i| k[(i, j)]).collect();
            f64::from(predict_label(decision_value(
                &sol.alpha, &sol.signs, sol.bias, &cross,
            )))
        })
        .collect();
    LabelVector::new(target_labels, source)
}

/// Target labels followed by the source predictions of a uniform-weight SVM
/// trained on the target data alone.
pub fn init_labels(target: &Dataset, source: &Dataset, cfg: &TrainConfig) -> Result<LabelVector> {
    cfg.validate()?;
    let labels = check_target(target)?;
    let (stacked, _) = prepare(target, source, cfg)?;
    let kc = KernelConfig::with_count(cfg.kernel_count, stacked.dim())?;
    let bank = build_bank(&stacked, &kc, cfg.execution)?;
    initial_labels_from_bank(&bank, &labels, cfg)
}

fn prepare(
    target: &Dataset,
    source: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Stacked, Option<Standardizer>)> {
    let mut stacked = stack(target, source)?;
    let standardizer = cfg
        .standardize
        .then(|| Standardizer::fit(&stacked.features));
    if let Some(st) = &standardizer {
        stacked.features = st.apply(&stacked.features);
    }
    Ok((stacked, standardizer))
}

/// Trains the configured variant. `source` may be `None` only for the SVM
/// baseline, which ignores it either way.
pub fn train(
    target: &Dataset,
    source: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<ModelArtifact> {
    cfg.validate()?;
    let target_labels = check_target(target)?;
    match cfg.variant {
        Variant::SvmBaseline => train_baseline(target, &target_labels, cfg),
        variant => {
            let source = source.ok_or_else(|| {
                Error::InvalidConfig(format!("variant {} needs source data", variant.name()))
            })?;
            let (stacked, standardizer) = prepare(target, source, cfg)?;
            let kc = KernelConfig::with_count(cfg.kernel_count, stacked.dim())?;
            let bank = build_bank(&stacked, &kc, cfg.execution)?;
            let y0 = initial_labels_from_bank(&bank, &target_labels, cfg)?.hardened_repaired()?;
            match variant {
                Variant::DtsvmLike => {
                    train_marginal(&bank, &stacked, y0, &target_labels, standardizer, cfg)
                }
                _ => train_self_taught(&bank, &stacked, y0, &target_labels, standardizer, cfg),
            }
        }
    }
}

fn train_baseline(target: &Dataset, labels: &[u8], cfg: &TrainConfig) -> Result<ModelArtifact> {
    let standardizer = cfg
        .standardize
        .then(|| Standardizer::fit(target.features()));
    let features = match &standardizer {
        Some(st) => st.apply(target.features()),
        None => target.features().clone(),
    };
    let n = features.nrows();
    let stacked = Stacked {
        features,
        target: 0..n,
        source: n..n,
    };
    let kc = KernelConfig::with_count(cfg.kernel_count, stacked.dim())?;
    let bank = build_bank(&stacked, &kc, cfg.execution)?;
    let d = KernelWeights::uniform(bank.len());
    let k = bank.combine(&d)?;
    let sol = solve_dual(&k, &signs_of(labels), &cfg.dual())?;
    Ok(artifact(
        cfg,
        kc,
        d,
        standardizer,
        stacked.rows(),
        sol,
        LabelVector::new(labels, Vec::new())?,
        true,
        Vec::new(),
    ))
}

fn train_marginal(
    bank: &KernelBank,
    stacked: &Stacked,
    y0: LabelVector,
    target_labels: &[u8],
    standardizer: Option<Standardizer>,
    cfg: &TrainConfig,
) -> Result<ModelArtifact> {
    let s = marginal_scaling_vector(stacked.n_target(), stacked.n_source())?;
    let p = projections(bank, &[s])?;
    let problem = InnerProblem::new(bank, signs_of(target_labels), stacked.target.clone(), p)?;
    let d0 = KernelWeights::uniform(bank.len());
    let state = run_inner_loop(&problem, &d0, None, &cfg.mkl())?;
    let record = OuterRecord {
        iteration: 0,
        h_value: state.h_value,
        l_value: None,
        l_before: None,
        delta_d: state.d.max_abs_diff(&d0),
        flipped: 0,
        inner_converged: state.converged,
        inner: state.history.clone(),
    };
    let rows = stacked.rows()[stacked.target.clone()].to_vec();
    Ok(artifact(
        cfg,
        bank.config().clone(),
        state.d,
        standardizer,
        rows,
        state.alpha,
        y0,
        state.converged,
        vec![record],
    ))
}

fn train_self_taught(
    bank: &KernelBank,
    stacked: &Stacked,
    y0: LabelVector,
    target_labels: &[u8],
    standardizer: Option<Standardizer>,
    cfg: &TrainConfig,
) -> Result<ModelArtifact> {
    let (max_outer, refine) = match cfg.variant {
        Variant::StsvmI => (1, false),
        _ => (cfg.max_outer, cfg.refine),
    };
    let mkl = cfg.mkl();
    let rcfg = cfg.refine_config();
    let n = stacked.len();
    let mut y = y0;
    let mut d = KernelWeights::uniform(bank.len());
    let mut warm: Option<Vec<f64>> = None;
    let mut log = Vec::new();
    let mut converged = false;
    let mut last: Option<DualSolution> = None;

    for iteration in 0..max_outer {
        let counts = class_counts(&y)?;
        let v = scaling_vectors(&y, &counts)?;
        let p = projections(bank, &v.as_list())?;
        let problem = InnerProblem::new(bank, y.signs(), 0..n, p)?;
        let state = run_inner_loop(&problem, &d, warm.as_deref(), &mkl)?;
        let delta_d = state.d.max_abs_diff(&d);

        let (next_y, l_before, l_value) = if refine {
            let k: DMatrix<f64> = bank.combine(&state.d)?;
            let prob = RefinementProblem::new(
                k,
                state.alpha.alpha.clone(),
                target_labels,
                counts,
                cfg.theta,
                &rcfg,
            )?;
            let r = refine_labels(&prob, &y, &rcfg)?;
            (
                r.labels.hardened_repaired()?,
                Some(r.initial_objective),
                Some(r.final_objective),
            )
        } else {
            (y.clone(), None, None)
        };
        let flipped = y.flips(&next_y);
        log::debug!(
            "outer {iteration}: h={} delta_d={delta_d:.3e} flipped={flipped}",
            state.h_value
        );
        log.push(OuterRecord {
            iteration,
            h_value: state.h_value,
            l_value,
            l_before,
            delta_d,
            flipped,
            inner_converged: state.converged,
            inner: state.history,
        });
        d = state.d;
        warm = Some(state.alpha.alpha.clone());
        last = Some(state.alpha);
        y = next_y;
        if delta_d < cfg.tol_d && flipped == 0 {
            converged = true;
            break;
        }
    }
    if cfg.variant == Variant::StsvmI {
        converged = log.last().is_some_and(|r| r.inner_converged);
    }
    let sol = last.expect("at least one outer iteration");
    Ok(artifact(
        cfg,
        bank.config().clone(),
        d,
        standardizer,
        stacked.rows(),
        sol,
        y,
        converged,
        log,
    ))
}

#[allow(clippy::too_many_arguments)]
fn artifact(
    cfg: &TrainConfig,
    kernel: KernelConfig,
    weights: KernelWeights,
    standardizer: Option<Standardizer>,
    support_rows: Vec<Vec<f64>>,
    sol: DualSolution,
    labels: LabelVector,
    converged: bool,
    log: Vec<OuterRecord>,
) -> ModelArtifact {
    ModelArtifact {
        format_version: MODEL_FORMAT_VERSION,
        variant: cfg.variant,
        config: cfg.clone(),
        kernel,
        weights,
        standardizer,
        support_rows,
        alpha: sol.alpha,
        signs: sol.signs,
        bias: sol.bias,
        labels,
        converged,
        log,
    }
}
