//! End-to-end model learning: features, original pairs, pseudo positives,
//! weighted over-sampling, then the boosted trees.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::augmentation::{augment, AugmentationConfig};
use crate::error::{Error, Result};
use crate::event_store::{Cohort, Day, StudentRecord};
use crate::features::{FeatureConfig, FeatureSubset, FeatureVector, Featurizer, TeacherHistoryIndex};
use crate::labeling::{attach_features, build_original_pairs, LabeledPair, TrainingPair};
use crate::trainer::{
    fit_gbdt, fit_logistic_baseline, oversample, Dataset, GbdtConfig, GbdtModel, LogisticModel,
    SamplerConfig, Scorer,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Gbdt(GbdtConfig),
    Logistic { epochs: usize, step: f64 },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Gbdt(GbdtConfig::default())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub subset: FeatureSubset,
    pub augmentation: AugmentationConfig,
    pub sampler: SamplerConfig,
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Gbdt(GbdtModel),
    Logistic(LogisticModel),
}

impl Scorer for Model {
    fn score(&self, fv: &FeatureVector) -> Result<f64> {
        match self {
            Model::Gbdt(m) => m.score(fv),
            Model::Logistic(m) => m.score(fv),
        }
    }

    fn feature_names(&self) -> &[String] {
        match self {
            Model::Gbdt(m) => &m.feature_names,
            Model::Logistic(m) => &m.feature_names,
        }
    }
}

/// Counts describing one training run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub students: usize,
    pub original_positive: usize,
    pub original_negative: usize,
    pub pseudo_positive: usize,
    pub positive_draws: usize,
    pub rows: usize,
    pub width: usize,
}

pub const PIPELINE_FORMAT_VERSION: u32 = 1;

/// A fitted featurizer and model; serializes to `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub featurizer: Featurizer,
    pub model: Model,
}

impl TrainedPipeline {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: TrainedPipeline =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("bad model json: {e}")))?;
        if p.format_version != PIPELINE_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model file version {}",
                p.format_version
            )));
        }
        let featurizer = p.featurizer.finish();
        if let Model::Gbdt(m) = &p.model {
            m.validate()?;
        }
        if featurizer.names().as_ref() != p.model.feature_names() {
            return Err(Error::Model("model columns do not match its featurizer".into()));
        }
        Ok(TrainedPipeline { featurizer, ..p })
    }

    /// Dropout probability of `student` as of `day`.
    pub fn score(&self, student: &StudentRecord, day: Day, hist: &TeacherHistoryIndex) -> Result<f64> {
        let fv = self.featurizer.assemble(student, day, hist)?;
        self.model.score(&fv)
    }
}

fn attach(
    cohort: &Cohort,
    pairs: Vec<LabeledPair>,
    featurizer: &Featurizer,
    hist: &TeacherHistoryIndex,
) -> Result<Vec<TrainingPair>> {
    let build = |p: LabeledPair| {
        let rec = cohort.get(&p.student_id).expect("pair from this cohort");
        attach_features(rec, p, featurizer, hist)
    };
    #[cfg(feature = "parallel")]
    return pairs.into_par_iter().map(build).collect();
    #[cfg(not(feature = "parallel"))]
    return pairs.into_iter().map(build).collect();
}

/// Original positives, original negatives and pseudo positives of
/// `cohort`, with features attached.
pub struct PairSets {
    pub positives: Vec<TrainingPair>,
    pub negatives: Vec<TrainingPair>,
    pub pseudo: Vec<TrainingPair>,
}

pub fn pair_sets(
    cohort: &Cohort,
    featurizer: &Featurizer,
    hist: &TeacherHistoryIndex,
    cfg: &AugmentationConfig,
) -> Result<PairSets> {
    let (p, n) = build_original_pairs(cohort)?;
    let positives = attach(cohort, p, featurizer, hist)?;
    let negatives = attach(cohort, n, featurizer, hist)?;
    let pseudo = augment(cohort, cfg, featurizer, hist)?;
    Ok(PairSets {
        positives,
        negatives,
        pseudo,
    })
}

/// Builds the over-sampled training set for `cohort`.
pub fn training_set(
    cohort: &Cohort,
    featurizer: &Featurizer,
    hist: &TeacherHistoryIndex,
    cfg: &PipelineConfig,
) -> Result<(Vec<TrainingPair>, TrainSummary)> {
    let sets = pair_sets(cohort, featurizer, hist, &cfg.augmentation)?;
    let rows = oversample(&sets.positives, &sets.pseudo, &sets.negatives, &cfg.sampler)?;
    let summary = TrainSummary {
        students: cohort.len(),
        original_positive: sets.positives.len(),
        original_negative: sets.negatives.len(),
        pseudo_positive: sets.pseudo.len(),
        positive_draws: rows.len() - sets.negatives.len(),
        rows: rows.len(),
        width: featurizer.width(),
    };
    Ok((rows, summary))
}

/// Runs the full learning procedure on `cohort`.
///
/// `hist` may cover more students than `cohort` (it is only queried
/// strictly before each pair's day).
pub fn train(
    cohort: &Cohort,
    hist: &TeacherHistoryIndex,
    cfg: &PipelineConfig,
) -> Result<(TrainedPipeline, TrainSummary)> {
    if cohort.is_empty() {
        return Err(Error::EmptyInput("training cohort is empty".into()));
    }
    let featurizer = Featurizer::fit(cohort, cfg.features.clone(), cfg.subset)?;
    if featurizer.width() == 0 {
        return Err(Error::Config(format!(
            "feature subset {} yields no columns for this schema",
            cfg.subset
        )));
    }
    let (rows, summary) = training_set(cohort, &featurizer, hist, cfg)?;
    let data = Dataset::from_pairs(&rows)?;
    let model = match &cfg.model {
        ModelSpec::Gbdt(g) => Model::Gbdt(fit_gbdt(&data, g)?),
        ModelSpec::Logistic { epochs, step } => Model::Logistic(fit_logistic_baseline(&data, *epochs, *step)?),
    };
    let pipeline = TrainedPipeline {
        format_version: PIPELINE_FORMAT_VERSION,
        config: cfg.clone(),
        featurizer,
        model,
    };
    Ok((pipeline, summary))
}
