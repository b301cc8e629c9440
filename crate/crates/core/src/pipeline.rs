//! Training strategies, evaluation metrics and sweeps.
//!
//! Four strategies are compared on a labeled source fleet and a partially
//! labeled target fleet:
//!
//! * `SourceOnly`: cross-entropy on the augmented source set.
//! * `FineTune`: `SourceOnly`, then further cross-entropy training of all
//!   layers on the labeled target-train split.
//! * `Mc`: joint training on source and target-train with the combined
//!   classification + MMD/CORAL objective and uniform weights.
//! * `Mcw`: `Mc` with the weight matrix built from per-feature K-S
//!   statistics between the source and target-train features.

use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::augment::{balance_augment, AugmentationParams, LabeledImageSet};
use crate::error::{Error, Result};
use crate::losses::{KernelConfig, LossWeights};
use crate::model::{
    init_params, loss_and_gradients, predict, sgd_step, AlignmentSubstrate, CnnConfig, DomainLossConfig, ModelParams,
    MomentumState, TrainingBatch,
};
use crate::preprocess::{
    compute_hybrid_ratios, gaf_encode, FaultLabel, FeatureScaler, FeatureVector, GafImage, GasSample, NUM_CLASSES,
};
use crate::seed::{derive_seed, mix_seed, rng_from_seed};
use crate::stats::{build_weight_matrix, ks_feature_vector, KsVector, WeightMatrix, DEFAULT_BINS, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    SourceOnly,
    FineTune,
    Mc,
    Mcw,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::SourceOnly, Strategy::FineTune, Strategy::Mc, Strategy::Mcw];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SourceOnly => "source-only",
            Strategy::FineTune => "finetune",
            Strategy::Mc => "mc",
            Strategy::Mcw => "mcw",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "source-only" | "sourceonly" => Ok(Strategy::SourceOnly),
            "finetune" | "fine-tune" => Ok(Strategy::FineTune),
            "mc" => Ok(Strategy::Mc),
            "mcw" => Ok(Strategy::Mcw),
            other => Err(Error::invalid(format!(
                "unknown strategy `{other}` (source-only|finetune|mc|mcw)"
            ))),
        }
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs of the target-only phase of fine-tuning.
    pub finetune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            epochs: 100,
            finetune_epochs: 100,
        }
    }
}

/// Every knob of an experiment, with defaults materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source_path: Option<PathBuf>,
    pub target_path: Option<PathBuf>,
    pub target_fraction: f64,
    pub loss_weights: LossWeights,
    pub epsilon: f64,
    pub augmentation: AugmentationParams,
    /// Per-class count after augmentation; `None` balances to the largest class.
    pub per_class_target: Option<usize>,
    pub model: CnnConfig,
    pub train: TrainConfig,
    pub kernel: KernelConfig,
    pub substrate: AlignmentSubstrate,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub akld_bins: usize,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source_path: None,
            target_path: None,
            target_fraction: 0.7,
            loss_weights: LossWeights::default(),
            epsilon: DEFAULT_EPSILON,
            augmentation: AugmentationParams::default(),
            per_class_target: None,
            model: CnnConfig::default(),
            train: TrainConfig::default(),
            kernel: KernelConfig::MedianHeuristic,
            substrate: AlignmentSubstrate::Conv1Mean,
            strategy: Strategy::Mcw,
            seeds: vec![0, 1, 2, 3, 4],
            akld_bins: DEFAULT_BINS,
            histogram_bins: DEFAULT_BINS,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return fail(format!(
                "target_fraction must be in (0, 1), got {}",
                self.target_fraction
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.per_class_target == Some(0) {
            return fail("per_class_target must be positive".into());
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", t.learning_rate));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", t.momentum));
        }
        if t.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.akld_bins < 2 || self.histogram_bins < 2 {
            return fail("bin counts must be >= 2".into());
        }
        for k in self.augmentation.kinds() {
            k.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn domain_loss(&self, weights: WeightMatrix) -> DomainLossConfig {
        DomainLossConfig {
            weights,
            loss_weights: self.loss_weights,
            kernel: self.kernel,
            substrate: self.substrate,
        }
    }
}

/// Stratified split of a labeled set into train and test indices.
///
/// Each class with `n_c` samples contributes `ceil(fraction * n_c)` samples to
/// train after a seeded shuffle; classes absent from the set are skipped.
pub fn split_target(labels: &[FaultLabel], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in FaultLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has a single sample; cannot stratify"
            )));
        }
        idx.shuffle(&mut rng_from_seed(mix_seed(seed, &[class.index() as u64])));
        let k = (fraction * idx.len() as f64).ceil() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per-class recall and F1 with the confusion matrix they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub class_counts: [usize; NUM_CLASSES],
    /// Per-class accuracy (recall) in percent.
    pub class_accuracy: [f64; NUM_CLASSES],
    pub class_f1: [f64; NUM_CLASSES],
    /// Unweighted mean over classes present in the test set.
    pub macro_accuracy: f64,
    pub macro_f1: f64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Result<Self> {
        let class_counts: [usize; NUM_CLASSES] = std::array::from_fn(|c| confusion[c].iter().sum());
        if class_counts.iter().sum::<usize>() == 0 {
            return Err(Error::EmptyInput("evaluation set"));
        }
        let predicted: [usize; NUM_CLASSES] = std::array::from_fn(|c| confusion.iter().map(|row| row[c]).sum());
        let mut class_accuracy = [0.0; NUM_CLASSES];
        let mut class_f1 = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c] as f64;
            let recall = if class_counts[c] > 0 {
                tp / class_counts[c] as f64
            } else {
                0.0
            };
            let precision = if predicted[c] > 0 {
                tp / predicted[c] as f64
            } else {
                0.0
            };
            class_accuracy[c] = 100.0 * recall;
            class_f1[c] = if precision + recall > 0.0 {
                100.0 * 2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
        }
        let present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| class_counts[c] > 0).collect();
        let mean = |v: &[f64; NUM_CLASSES]| present.iter().map(|&c| v[c]).sum::<f64>() / present.len() as f64;
        Ok(MetricsReport {
            confusion,
            class_counts,
            macro_accuracy: mean(&class_accuracy),
            macro_f1: mean(&class_f1),
            class_accuracy,
            class_f1,
        })
    }

    pub fn from_predictions(truth: &[FaultLabel], predicted: &[FaultLabel]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                found: predicted.len(),
            });
        }
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }

    /// Key-value text: optional `meta` pairs, totals, per-class lines and a
    /// 5×5 confusion block. Floats are written in shortest round-trip form.
    pub fn to_text(&self, meta: &[(&str, String)]) -> String {
        let mut out = String::from("# dga-adapt metrics v1\n");
        for (k, v) in meta {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "test_samples={}", self.total());
        let _ = writeln!(out, "macro_accuracy={}", self.macro_accuracy);
        let _ = writeln!(out, "macro_f1={}", self.macro_f1);
        for label in FaultLabel::ALL {
            let c = label.index();
            let _ = writeln!(out, "class.{label}.count={}", self.class_counts[c]);
            let _ = writeln!(out, "class.{label}.accuracy={}", self.class_accuracy[c]);
            let _ = writeln!(out, "class.{label}.f1={}", self.class_f1[c]);
        }
        out.push_str("[confusion]\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses [`MetricsReport::to_text`] output. Derived values are recomputed
    /// from the confusion block and checked against the stored ones.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut stored_macro = None;
        for line in lines.by_ref() {
            if line == "[confusion]" {
                break;
            }
            if let Some(v) = line.strip_prefix("macro_accuracy=") {
                stored_macro = v.parse::<f64>().ok();
            }
        }
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (r, row) in confusion.iter_mut().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| Error::invalid("metrics file: truncated confusion block"))?;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != NUM_CLASSES {
                return Err(Error::invalid(format!(
                    "metrics file: confusion row {r} has {} cells",
                    cells.len()
                )));
            }
            for (slot, cell) in row.iter_mut().zip(cells) {
                *slot = cell
                    .parse()
                    .map_err(|_| Error::invalid(format!("metrics file: bad confusion cell `{cell}`")))?;
            }
        }
        let report = Self::from_confusion(confusion)?;
        if let Some(m) = stored_macro {
            if (m - report.macro_accuracy).abs() > 1e-9 {
                return Err(Error::invalid(
                    "metrics file: macro_accuracy disagrees with confusion block",
                ));
            }
        }
        Ok(report)
    }
}

pub fn evaluate(params: &ModelParams, images: &[GafImage], labels: &[FaultLabel]) -> Result<MetricsReport> {
    if images.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let predicted = predict(params, images)?;
    MetricsReport::from_predictions(labels, &predicted)
}

/// A fleet's samples after feature extraction and GAF encoding.
#[derive(Debug, Clone)]
pub struct EncodedDomain {
    pub features: Vec<FeatureVector>,
    pub images: Vec<GafImage>,
    pub labels: Vec<FaultLabel>,
}

impl EncodedDomain {
    pub fn encode(samples: &[GasSample], scaler: &FeatureScaler) -> Result<Self> {
        let mut out = EncodedDomain {
            features: Vec::with_capacity(samples.len()),
            images: Vec::with_capacity(samples.len()),
            labels: Vec::with_capacity(samples.len()),
        };
        for (i, s) in samples.iter().enumerate() {
            let label = s
                .label
                .ok_or_else(|| Error::invalid(format!("sample {i} has no fault label")))?;
            let f = compute_hybrid_ratios(s)?;
            out.images.push(gaf_encode(&scaler.scale(&f)));
            out.features.push(f);
            out.labels.push(label);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> EncodedDomain {
        EncodedDomain {
            features: idx.iter().map(|&i| self.features[i]).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Preprocessed source and target fleets; the scaler is fitted on the source.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    scaler: FeatureScaler,
    source: EncodedDomain,
    target: EncodedDomain,
}

/// Target-train and target-test partitions for one seed.
#[derive(Debug, Clone)]
pub struct TargetSplit {
    pub train: EncodedDomain,
    pub test: EncodedDomain,
}

/// A trained model plus the adaptation artifacts that produced it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub strategy: Strategy,
    pub seed: u64,
    pub params: ModelParams,
    pub ks: Option<KsVector>,
    pub weights: Option<WeightMatrix>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: TrainedModel,
    pub metrics: MetricsReport,
}

/// Called after every epoch with `(epoch, params)`.
pub type EpochObserver<'a> = &'a mut dyn FnMut(usize, &ModelParams);

impl Experiment {
    pub fn new(config: ExperimentConfig, source: &[GasSample], target: &[GasSample]) -> Result<Self> {
        config.validate()?;
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptyInput("source and target datasets"));
        }
        let source_features = source.iter().map(compute_hybrid_ratios).collect::<Result<Vec<_>>>()?;
        let scaler = FeatureScaler::fit(&source_features)?;
        let source = EncodedDomain::encode(source, &scaler)?;
        let target = EncodedDomain::encode(target, &scaler)?;
        Ok(Experiment {
            config,
            scaler,
            source,
            target,
        })
    }

    /// Loads both fleets from the CSV paths named in the config.
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        let path = |p: &Option<PathBuf>, which: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("{which} dataset path is not set")))
        };
        let source = crate::io::load_dataset(path(&config.source_path, "source")?)?;
        let target = crate::io::load_dataset(path(&config.target_path, "target")?)?;
        Self::new(config, &source, &target)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Same data, different settings. Preprocessing does not depend on any
    /// setting a sweep varies.
    pub fn with_config(&self, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Experiment { config, ..self.clone() })
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn source(&self) -> &EncodedDomain {
        &self.source
    }

    pub fn target(&self) -> &EncodedDomain {
        &self.target
    }

    pub fn split(&self, seed: u64) -> Result<TargetSplit> {
        let (train, test) = split_target(
            &self.target.labels,
            self.config.target_fraction,
            derive_seed(seed, "split"),
        )?;
        Ok(TargetSplit {
            train: self.target.subset(&train),
            test: self.target.subset(&test),
        })
    }

    pub fn augmented_source(&self, seed: u64) -> Result<LabeledImageSet> {
        let set = LabeledImageSet::from_originals(
            self.source
                .images
                .iter()
                .cloned()
                .zip(self.source.labels.iter().copied()),
        )?;
        let max_count = set.class_counts().into_iter().max().unwrap_or(0);
        let target = self.config.per_class_target.unwrap_or(max_count);
        balance_augment(&set, target, &self.config.augmentation, derive_seed(seed, "augment"))
    }

    /// K-S statistics between source and target-train features and the
    /// weight matrix derived from them.
    pub fn feature_weights(&self, split: &TargetSplit) -> Result<(KsVector, WeightMatrix)> {
        let ks = ks_feature_vector(&self.source.features, &split.train.features)?;
        let w = build_weight_matrix(&ks, self.config.epsilon)?;
        Ok((ks, w))
    }

    fn initial_params(&self, seed: u64) -> Result<ModelParams> {
        init_params(&self.config.model, derive_seed(seed, "init"))
    }

    /// Cross-entropy training of `params` on a labeled image set.
    fn fit_classifier(
        &self,
        mut params: ModelParams,
        images: &[GafImage],
        labels: &[FaultLabel],
        epochs: usize,
        stream: u64,
        mut observer: Option<EpochObserver<'_>>,
    ) -> Result<ModelParams> {
        if images.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let t = &self.config.train;
        let domain = self.config.domain_loss(WeightMatrix::uniform());
        let mut state = MomentumState::new(&params);
        let mut order: Vec<usize> = (0..images.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut rng_from_seed(mix_seed(stream, &[0, epoch as u64])));
            for (step, chunk) in order.chunks(t.batch_size).enumerate() {
                let imgs: Vec<GafImage> = chunk.iter().map(|&i| images[i].clone()).collect();
                let labs: Vec<FaultLabel> = chunk.iter().map(|&i| labels[i]).collect();
                let batch = TrainingBatch {
                    source: &imgs,
                    source_labels: &labs,
                    target: &[],
                    target_labels: None,
                };
                let dropout = mix_seed(stream, &[1, epoch as u64, step as u64]);
                let (_, grads) = loss_and_gradients(&params, &batch, &domain, Some(dropout))?;
                sgd_step(&mut params, &grads, t.learning_rate, &mut state, t.momentum)?;
            }
            if let Some(obs) = observer.as_mut() {
                obs(epoch, &params);
            }
        }
        Ok(params)
    }

    /// The source-only model for `seed`. Independent of the target split, so
    /// it can be reused as the starting point of fine-tuning.
    pub fn train_source_only(&self, seed: u64) -> Result<ModelParams> {
        let set = self.augmented_source(seed)?;
        let images: Vec<GafImage> = set.items().iter().map(|it| it.image.clone()).collect();
        let labels: Vec<FaultLabel> = set.items().iter().map(|it| it.label).collect();
        self.fit_classifier(
            self.initial_params(seed)?,
            &images,
            &labels,
            self.config.train.epochs,
            derive_seed(seed, "source-only"),
            None,
        )
    }

    pub fn fine_tune(&self, base: ModelParams, split: &TargetSplit, seed: u64) -> Result<ModelParams> {
        if split.train.is_empty() {
            return Err(Error::EmptyInput("target-train split"));
        }
        self.fit_classifier(
            base,
            &split.train.images,
            &split.train.labels,
            self.config.train.finetune_epochs,
            derive_seed(seed, "finetune"),
            None,
        )
    }

    /// Joint training with the combined objective under `weights`.
    ///
    /// Each step pairs one source batch with one target-train batch. The
    /// source order is reshuffled every epoch; target batches are drawn from
    /// a shuffled queue that is refilled whenever it runs dry.
    pub fn train_joint(
        &self,
        split: &TargetSplit,
        weights: WeightMatrix,
        seed: u64,
        mut observer: Option<EpochObserver<'_>>,
    ) -> Result<ModelParams> {
        if split.train.is_empty() {
            return Err(Error::EmptyInput("target-train split"));
        }
        let t = &self.config.train;
        let set = self.augmented_source(seed)?;
        let domain = self.config.domain_loss(weights);
        let mut params = self.initial_params(seed)?;
        let mut state = MomentumState::new(&params);
        let stream = derive_seed(seed, "joint");
        let target_batch = t.batch_size.min(split.train.len());

        let mut source_order: Vec<usize> = (0..set.len()).collect();
        let mut queue: Vec<usize> = Vec::new();
        let mut refills = 0u64;
        for epoch in 0..t.epochs {
            source_order.shuffle(&mut rng_from_seed(mix_seed(stream, &[0, epoch as u64])));
            for (step, chunk) in source_order.chunks(t.batch_size).enumerate() {
                let src: Vec<GafImage> = chunk.iter().map(|&i| set.items()[i].image.clone()).collect();
                let src_labels: Vec<FaultLabel> = chunk.iter().map(|&i| set.items()[i].label).collect();
                let mut tgt_idx = Vec::with_capacity(target_batch);
                while tgt_idx.len() < target_batch {
                    if queue.is_empty() {
                        queue = (0..split.train.len()).collect();
                        queue.shuffle(&mut rng_from_seed(mix_seed(stream, &[2, refills])));
                        refills += 1;
                    }
                    tgt_idx.push(queue.pop().expect("refilled"));
                }
                let tgt: Vec<GafImage> = tgt_idx.iter().map(|&i| split.train.images[i].clone()).collect();
                let tgt_labels: Vec<FaultLabel> = tgt_idx.iter().map(|&i| split.train.labels[i]).collect();
                let batch = TrainingBatch {
                    source: &src,
                    source_labels: &src_labels,
                    target: &tgt,
                    target_labels: Some(&tgt_labels),
                };
                let dropout = mix_seed(stream, &[1, epoch as u64, step as u64]);
                let (_, grads) = loss_and_gradients(&params, &batch, &domain, Some(dropout))?;
                sgd_step(&mut params, &grads, t.learning_rate, &mut state, t.momentum)?;
            }
            if let Some(obs) = observer.as_mut() {
                obs(epoch, &params);
            }
        }
        Ok(params)
    }

    /// Trains one strategy for one seed. `source_only` may carry a model
    /// already produced by [`Experiment::train_source_only`] for this seed.
    pub fn train_strategy(
        &self,
        strategy: Strategy,
        seed: u64,
        split: &TargetSplit,
        source_only: Option<&ModelParams>,
    ) -> Result<TrainedModel> {
        let base = |exp: &Self| match source_only {
            Some(p) => Ok(p.clone()),
            None => exp.train_source_only(seed),
        };
        let (params, ks, weights) = match strategy {
            Strategy::SourceOnly => (base(self)?, None, None),
            Strategy::FineTune => (self.fine_tune(base(self)?, split, seed)?, None, None),
            Strategy::Mc => {
                let w = WeightMatrix::uniform();
                (self.train_joint(split, w.clone(), seed, None)?, None, Some(w))
            }
            Strategy::Mcw => {
                let (ks, w) = self.feature_weights(split)?;
                (self.train_joint(split, w.clone(), seed, None)?, Some(ks), Some(w))
            }
        };
        Ok(TrainedModel {
            strategy,
            seed,
            params,
            ks,
            weights,
        })
    }

    /// Trains and evaluates on the target-test split.
    pub fn run(&self, strategy: Strategy, seed: u64) -> Result<RunOutcome> {
        let outcomes = self.run_strategies(&[strategy], seed, None)?;
        Ok(outcomes.into_iter().next().expect("one strategy"))
    }

    /// Runs several strategies for one seed, training the source-only model
    /// at most once.
    pub fn run_strategies(
        &self,
        strategies: &[Strategy],
        seed: u64,
        source_only: Option<&ModelParams>,
    ) -> Result<Vec<RunOutcome>> {
        let split = self.split(seed)?;
        if split.test.is_empty() {
            return Err(Error::EmptyInput("target-test split"));
        }
        let needs_base = strategies
            .iter()
            .any(|s| matches!(s, Strategy::SourceOnly | Strategy::FineTune));
        let owned;
        let base = match (source_only, needs_base) {
            (Some(p), _) => Some(p),
            (None, true) => {
                owned = self.train_source_only(seed)?;
                Some(&owned)
            }
            (None, false) => None,
        };
        strategies
            .iter()
            .map(|&s| {
                let model = self.train_strategy(s, seed, &split, base)?;
                let metrics = evaluate(&model.params, &split.test.images, &split.test.labels)?;
                Ok(RunOutcome { model, metrics })
            })
            .collect()
    }
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    TargetFraction(Vec<f64>),
    AlphaBeta(Vec<(f64, f64)>),
}

impl SweepAxis {
    fn len(&self) -> usize {
        match self {
            SweepAxis::TargetFraction(v) => v.len(),
            SweepAxis::AlphaBeta(v) => v.len(),
        }
    }

    fn label(&self, i: usize) -> String {
        match self {
            SweepAxis::TargetFraction(v) => format!("{}", v[i]),
            SweepAxis::AlphaBeta(v) => format!("{}/{}", v[i].0, v[i].1),
        }
    }

    fn apply(&self, i: usize, config: &mut ExperimentConfig) -> Result<()> {
        match self {
            SweepAxis::TargetFraction(v) => config.target_fraction = v[i],
            SweepAxis::AlphaBeta(v) => config.loss_weights = LossWeights::new(v[i].0, v[i].1)?,
        }
        Ok(())
    }

    /// Whether the source-only model is the same at every axis point.
    fn source_only_invariant(&self) -> bool {
        true
    }
}

/// Aggregate over seeds for one (axis point, strategy).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub strategy: Strategy,
    pub seed_count: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// One trained-and-evaluated run inside a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub axis: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

pub const SWEEP_CSV_HEADER: &str = "axis,strategy,seed_count,mean_acc,std_acc,mean_f1,std_f1";

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SweepReport {
    pub fn row(&self, axis: &str, strategy: Strategy) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.axis == axis && r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.axis, r.strategy, r.seed_count, r.mean_acc, r.std_acc, r.mean_f1, r.std_f1
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(SWEEP_CSV_HEADER) {
            return Err(Error::invalid("sweep CSV header mismatch"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |col: &str| Error::Parse {
                row: i + 2,
                column: col.into(),
                message: format!("cannot parse `{line}`"),
            };
            if f.len() != 7 {
                return Err(bad("*"));
            }
            let num = |k: usize, col: &str| f[k].parse::<f64>().map_err(|_| bad(col));
            rows.push(SweepRow {
                axis: f[0].to_string(),
                strategy: f[1].parse()?,
                seed_count: f[2].parse().map_err(|_| bad("seed_count"))?,
                mean_acc: num(3, "mean_acc")?,
                std_acc: num(4, "std_acc")?,
                mean_f1: num(5, "mean_f1")?,
                std_f1: num(6, "std_f1")?,
            });
        }
        Ok(SweepReport { rows, runs: Vec::new() })
    }
}

/// Trains and evaluates every (axis point, strategy, seed) combination.
pub fn run_sweep(experiment: &Experiment, axis: &SweepAxis, strategies: &[Strategy]) -> Result<SweepReport> {
    if axis.len() == 0 {
        return Err(Error::EmptyInput("sweep axis"));
    }
    if strategies.is_empty() {
        return Err(Error::EmptyInput("sweep strategies"));
    }
    let seeds = experiment.config().seeds.clone();
    let points: Vec<Experiment> = (0..axis.len())
        .map(|i| {
            let mut cfg = experiment.config().clone();
            axis.apply(i, &mut cfg)?;
            experiment.with_config(cfg)
        })
        .collect::<Result<_>>()?;
    let needs_base = strategies
        .iter()
        .any(|s| matches!(s, Strategy::SourceOnly | Strategy::FineTune));

    let mut runs = Vec::new();
    for &seed in &seeds {
        let base = if needs_base && axis.source_only_invariant() {
            Some(experiment.train_source_only(seed)?)
        } else {
            None
        };
        for (i, point) in points.iter().enumerate() {
            for outcome in point.run_strategies(strategies, seed, base.as_ref())? {
                runs.push(SweepRun {
                    axis: axis.label(i),
                    strategy: outcome.model.strategy,
                    seed,
                    metrics: outcome.metrics,
                });
            }
        }
    }

    let mut rows = Vec::new();
    for i in 0..axis.len() {
        let label = axis.label(i);
        for &strategy in strategies {
            let sel: Vec<&SweepRun> = runs
                .iter()
                .filter(|r| r.axis == label && r.strategy == strategy)
                .collect();
            let accs: Vec<f64> = sel.iter().map(|r| r.metrics.macro_accuracy).collect();
            let f1s: Vec<f64> = sel.iter().map(|r| r.metrics.macro_f1).collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            let (mean_f1, std_f1) = mean_std(&f1s);
            rows.push(SweepRow {
                axis: label.clone(),
                strategy,
                seed_count: sel.len(),
                mean_acc,
                std_acc,
                mean_f1,
                std_f1,
            });
        }
    }
    Ok(SweepReport { rows, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: [usize; NUM_CLASSES]) -> Vec<FaultLabel> {
        FaultLabel::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&l, n)| std::iter::repeat_n(l, n))
            .collect()
    }

    #[test]
    fn split_counts_and_partition() {
        let l = labels([10; NUM_CLASSES]);
        let (train, test) = split_target(&l, 0.5, 3).unwrap();
        assert_eq!(train.len(), 25);
        assert_eq!(test.len(), 25);
        for c in FaultLabel::ALL {
            assert_eq!(train.iter().filter(|&&i| l[i] == c).count(), 5);
        }
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_target(&l, 0.5, 3).unwrap(), (train, test));
    }

    #[test]
    fn split_rounds_up_and_validates() {
        let l = labels([3, 3, 3, 3, 3]);
        let (train, _) = split_target(&l, 0.3, 0).unwrap();
        assert_eq!(train.len(), 5);
        assert!(split_target(&labels([1, 3, 3, 3, 3]), 0.5, 0).is_err());
        assert!(split_target(&l, 1.0, 0).is_err());
        assert!(split_target(&l, 0.0, 0).is_err());
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let truth = labels([4; NUM_CLASSES]);
        let perfect = MetricsReport::from_predictions(&truth, &truth).unwrap();
        assert_eq!(perfect.macro_accuracy, 100.0);
        assert_eq!(perfect.macro_f1, 100.0);
        assert!(perfect.class_f1.iter().all(|&f| f == 100.0));

        let constant = vec![FaultLabel::D2; truth.len()];
        let m = MetricsReport::from_predictions(&truth, &constant).unwrap();
        assert!((m.macro_accuracy - 20.0).abs() < 1e-12);
        // precision 1/5, recall 1 for D2; F1 = 1/3
        assert!((m.class_f1[2] - 100.0 / 3.0).abs() < 1e-12);
        assert!(MetricsReport::from_predictions(&[], &[]).is_err());
    }

    #[test]
    fn metrics_text_round_trip() {
        let truth = labels([3, 2, 4, 1, 5]);
        let mut pred = truth.clone();
        pred[0] = FaultLabel::T3;
        pred[7] = FaultLabel::D1;
        let m = MetricsReport::from_predictions(&truth, &pred).unwrap();
        let text = m.to_text(&[("strategy", "mcw".into())]);
        assert!(text.contains("strategy=mcw"));
        assert_eq!(MetricsReport::from_text(&text).unwrap(), m);
        let mean = m.class_accuracy.iter().sum::<f64>() / 5.0;
        assert!((mean - m.macro_accuracy).abs() < 1e-9);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("dann".parse::<Strategy>().is_err());
    }
}
