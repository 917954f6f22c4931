//! Multi-step-ahead evaluation: AUC per horizon, top-fraction flagging
//! recall, and ablation sweeps.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::augmentation::{Lookback, Weighting};
use crate::error::{Error, Result};
use crate::event_store::{Cohort, Day, FinalStatus, StudentRecord};
use crate::features::{FeatureSubset, TeacherHistoryIndex};
use crate::labeling::horizon_label;
use crate::pipeline::{train, PipelineConfig, TrainSummary, TrainedPipeline};

/// Area under the ROC curve via the Mann-Whitney rank sum, with tied
/// scores sharing their average rank.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Data("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum keeps tie averages integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank_x2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum_x2 += avg_rank_x2 * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    let u_x2 = rank_sum_x2 - np * (np + 1);
    Ok(u_x2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// ROC curve points `(fpr, tpr)` from the strictest threshold down.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    auc(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        let last_of_tie = k + 1 == order.len() || scores[order[k + 1]] != scores[i];
        if last_of_tie {
            points.push((fp / n_neg, tp / n_pos));
        }
    }
    Ok(points)
}

/// Which days of a test student are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryPoints {
    /// Every calendar day from the first observation up to the day before
    /// resolution.
    #[default]
    EveryDay,
    /// Only days carrying an observation, excluding the final one.
    ObservationDays,
}

/// Query days of a resolved student; empty for ongoing students.
pub fn query_days(student: &StudentRecord, mode: QueryPoints) -> Vec<Day> {
    if !student.final_status.is_resolved() {
        return Vec::new();
    }
    let end = student.last_day();
    match mode {
        QueryPoints::EveryDay => (student.first_day()..end).collect(),
        QueryPoints::ObservationDays => student
            .observations
            .iter()
            .map(|o| o.day)
            .filter(|&d| d < end)
            .collect(),
    }
}

/// Per-student scores on every query day.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<StudentScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentScores {
    pub student_id: String,
    pub days: Vec<Day>,
    pub scores: Vec<f64>,
}

impl StudentScores {
    fn at(&self, day: Day) -> Option<f64> {
        self.days.binary_search(&day).ok().map(|i| self.scores[i])
    }
}

/// Scores every [`QueryPoints::EveryDay`] query of every resolved student.
pub fn score_cohort<F>(cohort: &Cohort, scorer: F) -> Result<ScoreTable>
where
    F: Fn(&StudentRecord, Day) -> Result<f64> + Sync,
{
    let students: Vec<&StudentRecord> = cohort.students().collect();
    let one = |rec: &&StudentRecord| -> Result<StudentScores> {
        let days = query_days(rec, QueryPoints::EveryDay);
        let scores = days.iter().map(|&d| scorer(rec, d)).collect::<Result<Vec<_>>>()?;
        Ok(StudentScores {
            student_id: rec.student_id.clone(),
            days,
            scores,
        })
    };
    #[cfg(feature = "parallel")]
    let rows = students.par_iter().map(one).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let rows = students.iter().map(one).collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub deltas: Vec<u32>,
    pub query_points: QueryPoints,
    pub recall_fractions: Vec<f64>,
    pub recall_deltas: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            deltas: (1..=14).collect(),
            query_points: QueryPoints::EveryDay,
            recall_fractions: vec![0.3],
            recall_deltas: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCell {
    pub delta: u32,
    /// `None` when the horizon's ground truth has a single class.
    pub auc: Option<f64>,
    pub queries: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCell {
    pub fraction: f64,
    pub delta: u32,
    /// Detected over all dropouts, summed across days.
    pub pooled: Option<f64>,
    /// Mean of per-day recall over days with at least one dropout.
    pub daily_mean: Option<f64>,
    pub days: usize,
    pub dropouts: usize,
    pub detected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub query_points: QueryPoints,
    pub horizons: Vec<HorizonCell>,
    pub recall: Vec<RecallCell>,
}

impl EvalReport {
    pub fn auc_at(&self, delta: u32) -> Option<f64> {
        self.horizons.iter().find(|c| c.delta == delta).and_then(|c| c.auc)
    }

    pub fn mean_auc(&self) -> Option<f64> {
        let v: Vec<f64> = self.horizons.iter().filter_map(|c| c.auc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn pooled_recall(&self, fraction: f64, delta: u32) -> Option<f64> {
        self.recall
            .iter()
            .find(|c| c.fraction == fraction && c.delta == delta)
            .and_then(|c| c.pooled)
    }
}

/// AUC at each horizon over the table's query points.
pub fn horizon_cells(cohort: &Cohort, table: &ScoreTable, cfg: &EvalConfig) -> Result<Vec<HorizonCell>> {
    let mut queries: Vec<(&StudentRecord, Day, f64)> = Vec::new();
    for row in &table.rows {
        let rec = cohort
            .get(&row.student_id)
            .ok_or_else(|| Error::Data(format!("unknown student {}", row.student_id)))?;
        for day in query_days(rec, cfg.query_points) {
            let score = row
                .at(day)
                .ok_or_else(|| Error::Data(format!("no score for {} at day {day}", rec.student_id)))?;
            queries.push((rec, day, score));
        }
    }
    let scores: Vec<f64> = queries.iter().map(|q| q.2).collect();
    cfg.deltas
        .iter()
        .map(|&delta| {
            let labels = queries
                .iter()
                .map(|(rec, day, _)| horizon_label(rec, *day, delta))
                .collect::<Result<Vec<u8>>>()?;
            let positives = labels.iter().filter(|&&y| y == 1).count();
            let auc = match auc(&scores, &labels) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(HorizonCell {
                delta,
                auc,
                queries: queries.len(),
                positives,
            })
        })
        .collect()
}

/// Flags the top `ceil(fraction * n)` students by score (ties by id) and
/// returns the share of `dropouts` among them.
pub fn recall_at_fraction(scores: &[(String, f64)], dropouts: &BTreeSet<String>, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    if dropouts.is_empty() {
        return Err(Error::UndefinedMetric("recall needs at least one dropout".into()));
    }
    let flagged = flag_top(scores, fraction);
    let hit = flagged.iter().filter(|id| dropouts.contains(**id)).count();
    Ok(hit as f64 / dropouts.len() as f64)
}

/// Number of students flagged out of `n` at `fraction`.
pub fn flag_count(n: usize, fraction: f64) -> usize {
    // guard against 0.3 * 10 = 3.0000000000000004
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Ids of the top-scoring students.
pub fn flag_top(scores: &[(String, f64)], fraction: f64) -> Vec<&str> {
    let mut ranked: Vec<&(String, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let k = flag_count(ranked.len(), fraction).min(ranked.len());
    ranked[..k].iter().map(|(id, _)| id.as_str()).collect()
}

/// Simulates daily flagging: every day, all students still active are
/// ranked and the top fraction flagged; a dropout within `(day, day + delta]`
/// counts as detected if flagged that day.
pub fn daily_flagging(cohort: &Cohort, table: &ScoreTable, fraction: f64, delta: u32) -> Result<RecallCell> {
    let mut by_day: BTreeMap<Day, Vec<(String, f64)>> = BTreeMap::new();
    for row in &table.rows {
        for (&d, &s) in row.days.iter().zip(&row.scores) {
            by_day.entry(d).or_default().push((row.student_id.clone(), s));
        }
    }
    let mut dropouts_total = 0;
    let mut detected_total = 0;
    let mut daily = Vec::new();
    for (&day, active) in &by_day {
        let dropouts: BTreeSet<String> = active
            .iter()
            .filter(|(id, _)| {
                cohort
                    .get(id)
                    .and_then(|r| r.dropout_day())
                    .is_some_and(|d| d > day && d <= day + delta as Day)
            })
            .map(|(id, _)| id.clone())
            .collect();
        if dropouts.is_empty() {
            continue;
        }
        let r = recall_at_fraction(active, &dropouts, fraction)?;
        dropouts_total += dropouts.len();
        detected_total += (r * dropouts.len() as f64).round() as usize;
        daily.push(r);
    }
    Ok(RecallCell {
        fraction,
        delta,
        pooled: (dropouts_total > 0).then(|| detected_total as f64 / dropouts_total as f64),
        daily_mean: (!daily.is_empty()).then(|| daily.iter().sum::<f64>() / daily.len() as f64),
        days: daily.len(),
        dropouts: dropouts_total,
        detected: detected_total,
    })
}

/// Scores `test` with `scorer` and assembles the full report.
pub fn evaluate_with<F>(test: &Cohort, scorer: F, cfg: &EvalConfig, fingerprint: String) -> Result<EvalReport>
where
    F: Fn(&StudentRecord, Day) -> Result<f64> + Sync,
{
    if cfg.deltas.iter().any(|&d| d == 0) {
        return Err(Error::Config("horizons must be positive".into()));
    }
    let table = score_cohort(test, scorer)?;
    let horizons = horizon_cells(test, &table, cfg)?;
    let mut recall = Vec::new();
    for &fraction in &cfg.recall_fractions {
        for &delta in &cfg.recall_deltas {
            recall.push(daily_flagging(test, &table, fraction, delta)?);
        }
    }
    Ok(EvalReport {
        fingerprint,
        query_points: cfg.query_points,
        horizons,
        recall,
    })
}

/// Evaluates a trained pipeline on a held-out cohort.
pub fn evaluate_horizons(
    pipeline: &TrainedPipeline,
    test: &Cohort,
    hist: &TeacherHistoryIndex,
    cfg: &EvalConfig,
    fingerprint: String,
) -> Result<EvalReport> {
    evaluate_with(test, |rec, day| pipeline.score(rec, day, hist), cfg, fingerprint)
}

/// Seeded student-level split into `(train_ids, test_ids)`, both sorted.
pub fn split_by_student(cohort: &Cohort, train_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1]")));
    }
    let mut ids: Vec<String> = cohort.ids().map(str::to_string).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ids.len() as f64) * train_fraction).round() as usize;
    let mut test = ids.split_off(n_train.min(ids.len()));
    ids.sort();
    test.sort();
    Ok((ids, test))
}

/// Stable content hash used to tag reports and artifacts.
pub fn fingerprint(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One cell of an ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arm {
    pub lookback: Lookback,
    pub weighting: Weighting,
    pub subset: FeatureSubset,
}

impl Arm {
    pub fn label(&self) -> String {
        match self.lookback {
            Lookback::None => format!("lookback=none features={}", self.subset),
            Lookback::Days(d) => format!("lookback={d} weighting={} features={}", self.weighting, self.subset),
        }
    }

    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        cfg.augmentation.lookback = self.lookback;
        cfg.augmentation.weighting = self.weighting;
        cfg.subset = self.subset;
        cfg
    }
}

/// Cartesian grid; the disabled-lookback arm appears once per subset.
pub fn grid(lookbacks: &[Lookback], weightings: &[Weighting], subsets: &[FeatureSubset]) -> Vec<Arm> {
    let mut arms = Vec::new();
    for &subset in subsets {
        for &lookback in lookbacks {
            for &weighting in weightings {
                let arm = Arm {
                    lookback,
                    weighting: if lookback == Lookback::None { weightings[0] } else { weighting },
                    subset,
                };
                if !arms.contains(&arm) {
                    arms.push(arm);
                }
            }
        }
    }
    arms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub summary: TrainSummary,
    pub report: EvalReport,
}

/// Trains and evaluates every arm on one seeded split of `cohort`.
///
/// All arms share the split and the over-sampler seed.
pub fn run_arms(
    cohort: &Cohort,
    arms: &[Arm],
    seed: u64,
    base: &PipelineConfig,
    train_fraction: f64,
    eval: &EvalConfig,
) -> Result<Vec<ArmRun>> {
    let (train_ids, test_ids) = split_by_student(cohort, train_fraction, seed)?;
    let train_cohort = cohort.subset(train_ids.iter().map(String::as_str));
    let test_cohort = cohort.subset(test_ids.iter().map(String::as_str));
    let hist = TeacherHistoryIndex::build(cohort);
    let run_one = |arm: &Arm| -> Result<ArmRun> {
        let mut cfg = arm.apply(base);
        cfg.sampler.seed = seed;
        let (pipeline, summary) = train(&train_cohort, &hist, &cfg)?;
        let tag = serde_json::to_vec(&(&cfg, seed, &test_ids)).expect("config serializes");
        let report = evaluate_horizons(&pipeline, &test_cohort, &hist, eval, fingerprint(&tag))?;
        Ok(ArmRun {
            arm: *arm,
            seed,
            summary,
            report,
        })
    };
    #[cfg(feature = "parallel")]
    return arms.par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    return arms.iter().map(run_one).collect();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: PipelineConfig,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub arm: Arm,
    pub delta: u32,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
    /// Seeds with a defined AUC at this horizon.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub runs: Vec<ArmRun>,
}

impl SweepReport {
    pub fn cell(&self, arm: &Arm, delta: u32) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.arm == *arm && c.delta == delta)
    }
}

/// Mean and sample standard deviation of AUC per arm and horizon.
pub fn summarize(runs: Vec<ArmRun>, arms: &[Arm], deltas: &[u32]) -> SweepReport {
    let mut cells = Vec::new();
    for arm in arms {
        for &delta in deltas {
            let v: Vec<f64> = runs
                .iter()
                .filter(|r| r.arm == *arm)
                .filter_map(|r| r.report.auc_at(delta))
                .collect();
            let mean = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let std = mean.filter(|_| v.len() > 1).map(|m| {
                (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            });
            cells.push(SweepCell {
                arm: *arm,
                delta,
                mean_auc: mean,
                std_auc: std.or(mean.map(|_| 0.0)),
                seeds: v.len(),
            });
        }
    }
    SweepReport { cells, runs }
}

pub fn run_sweep(cohort: &Cohort, cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    if cfg.arms.is_empty() {
        return Err(Error::Config("sweep needs at least one arm".into()));
    }
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        runs.extend(run_arms(cohort, &cfg.arms, seed, &cfg.base, cfg.train_fraction, &cfg.eval)?);
    }
    Ok(summarize(runs, &cfg.arms, &cfg.eval.deltas))
}

/// Students still active (resolved, between first observation and resolution) on `day`.
pub fn active_on(cohort: &Cohort, day: Day) -> impl Iterator<Item = &StudentRecord> {
    cohort.students().filter(move |r| {
        r.final_status != FinalStatus::Ongoing && r.first_day() <= day && day < r.last_day()
    })
}
