//! Feature assembly for `<student, day>` pairs.
//!
//! Three blocks are concatenated, each optional under a [`FeatureSubset`]:
//!
//! * `in_*`: aggregates of PCA-projected in-class vectors seen so far,
//! * `out_*`: aggregates of out-of-class vectors seen so far,
//! * `time_*` / `teacher_*`: lookback-window activity statistics and the
//!   current teacher's history.
//!
//! Only observations with `day <= at_day` are read, and the dropout event
//! itself is never read, so a vector never depends on the future.

mod history;
mod pca;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use history::{TeacherHistoryIndex, TeacherStats};
pub use pca::{fit_pca, PcaComponents, PcaModel};

use crate::error::{Error, Result};
use crate::event_store::{Cohort, Day, EventKind, Observation, Schema, StudentRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Sum,
    Last,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub lookback_days: Vec<u32>,
    pub pca_components: PcaComponents,
    pub aggregators: Vec<Aggregator>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            lookback_days: vec![7, 14, 21, 30],
            pca_components: PcaComponents::Fraction(0.9),
            aggregators: vec![Aggregator::Mean, Aggregator::Last, Aggregator::Count],
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback_days.is_empty() || self.lookback_days[0] == 0 {
            return Err(Error::Config("lookback lengths must be positive and non-empty".into()));
        }
        if self.lookback_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("lookback lengths must be strictly increasing".into()));
        }
        if self.aggregators.is_empty() {
            return Err(Error::Config("at least one aggregator is required".into()));
        }
        self.pca_components.validate()
    }
}

/// Which feature blocks enter the vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub in_class: bool,
    pub out_class: bool,
    pub time: bool,
}

impl FeatureSubset {
    pub const ALL: FeatureSubset = FeatureSubset {
        in_class: true,
        out_class: true,
        time: true,
    };

    /// The seven non-empty block combinations, in ablation-table order.
    pub fn ablation_arms() -> Vec<FeatureSubset> {
        ["in", "out", "time", "in+time", "out+time", "in+out", "in+out+time"]
            .iter()
            .map(|s| s.parse().expect("static subset names parse"))
            .collect()
    }
}

impl Default for FeatureSubset {
    fn default() -> Self {
        FeatureSubset::ALL
    }
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.in_class {
            parts.push("In");
        }
        if self.out_class {
            parts.push("Out");
        }
        if self.time {
            parts.push("Time");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for FeatureSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut subset = FeatureSubset {
            in_class: false,
            out_class: false,
            time: false,
        };
        for part in s.split(['+', ',']) {
            match part.trim().to_ascii_lowercase().as_str() {
                "in" => subset.in_class = true,
                "out" => subset.out_class = true,
                "time" => subset.time = true,
                "all" => subset = FeatureSubset::ALL,
                other => return Err(Error::Config(format!("unknown feature block '{other}'"))),
            }
        }
        if !(subset.in_class || subset.out_class || subset.time) {
            return Err(Error::Config("empty feature subset".into()));
        }
        Ok(subset)
    }
}

/// Dense feature values with their column names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub names: Arc<[String]>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Everything needed to turn `<student, day>` into a [`FeatureVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeatureConfig,
    pub subset: FeatureSubset,
    pub pca: Option<PcaModel>,
    pub outclass_columns: Vec<String>,
    #[serde(skip)]
    names: Option<Arc<[String]>>,
}

impl Featurizer {
    /// Fits the in-class PCA on every class session of `cohort`.
    pub fn fit(cohort: &Cohort, config: FeatureConfig, subset: FeatureSubset) -> Result<Self> {
        config.validate()?;
        let pca = if subset.in_class && cohort.schema.inclass_width() > 0 {
            let rows: Vec<Vec<f64>> = cohort
                .students()
                .flat_map(|s| s.observations.iter().filter_map(|o| o.inclass.clone()))
                .collect();
            Some(fit_pca(&rows, config.pca_components)?)
        } else {
            None
        };
        Ok(Featurizer::from_parts(config, subset, pca, &cohort.schema))
    }

    pub fn from_parts(
        config: FeatureConfig,
        subset: FeatureSubset,
        pca: Option<PcaModel>,
        schema: &Schema,
    ) -> Self {
        let mut f = Featurizer {
            config,
            subset,
            pca,
            outclass_columns: schema.outclass_columns.clone(),
            names: None,
        };
        f.names = Some(f.build_names().into());
        f
    }

    /// Restores the cached column names after deserialization.
    pub fn finish(mut self) -> Self {
        self.names = Some(self.build_names().into());
        self
    }

    pub fn names(&self) -> Arc<[String]> {
        match &self.names {
            Some(n) => n.clone(),
            None => self.build_names().into(),
        }
    }

    pub fn width(&self) -> usize {
        self.names().len()
    }

    fn has_in_block(&self) -> bool {
        self.subset.in_class && self.pca.is_some()
    }

    fn build_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if let Some(pca) = self.pca.as_ref().filter(|_| self.has_in_block()) {
            let cols: Vec<String> = (0..pca.n_components()).map(|k| format!("pc{k}")).collect();
            block_names(&mut names, "in", &cols, &self.config.aggregators);
        }
        if self.subset.out_class && !self.outclass_columns.is_empty() {
            block_names(&mut names, "out", &self.outclass_columns, &self.config.aggregators);
        }
        if self.subset.time {
            for l in &self.config.lookback_days {
                for stat in WINDOW_STATS {
                    names.push(format!("time_w{l}_{stat}"));
                }
            }
            for n in [
                "time_classes_total",
                "time_days_since_last_class",
                "time_days_since_last_event",
                "time_tenure_days",
                "teacher_courses",
                "teacher_students",
                "teacher_dropout_rate",
            ] {
                names.push(n.to_string());
            }
        }
        names
    }

    /// Feature vector for `student` as of the end of `at_day`.
    pub fn assemble(
        &self,
        student: &StudentRecord,
        at_day: Day,
        hist: &TeacherHistoryIndex,
    ) -> Result<FeatureVector> {
        self.assemble_with(student, at_day, hist, true)
    }

    /// Feature vector at `at_day` from observations strictly before it:
    /// the state just before anything on `at_day` happened.
    pub fn assemble_before(
        &self,
        student: &StudentRecord,
        at_day: Day,
        hist: &TeacherHistoryIndex,
    ) -> Result<FeatureVector> {
        self.assemble_with(student, at_day, hist, false)
    }

    /// As [`Featurizer::assemble`], but a day before the student's first
    /// observation yields the nothing-observed-yet vector (zero counts,
    /// zero tenure, teacher prior) instead of an error. Pseudo-positive
    /// days of a dropout whose only event is the dropout can fall there.
    pub fn assemble_pseudo(
        &self,
        student: &StudentRecord,
        at_day: Day,
        hist: &TeacherHistoryIndex,
    ) -> Result<FeatureVector> {
        if !student.is_empty() && at_day < student.first_day() {
            return self.assemble_from(&[], at_day, at_day, hist);
        }
        self.assemble(student, at_day, hist)
    }

    fn assemble_with(
        &self,
        student: &StudentRecord,
        at_day: Day,
        hist: &TeacherHistoryIndex,
        same_day: bool,
    ) -> Result<FeatureVector> {
        if student.is_empty() || at_day < student.first_day() {
            return Err(Error::OutOfRange {
                day: at_day,
                message: format!("before first observation of student {}", student.student_id),
            });
        }
        let until = if same_day { at_day } else { at_day - 1 };
        let seen: Vec<&Observation> = student
            .observations_until(until)
            .iter()
            .filter(|o| o.kind != EventKind::DropoutEvent)
            .collect();
        self.assemble_from(&seen, at_day, student.first_day(), hist)
    }

    fn assemble_from(
        &self,
        seen: &[&Observation],
        at_day: Day,
        first_day: Day,
        hist: &TeacherHistoryIndex,
    ) -> Result<FeatureVector> {
        let names = self.names();
        let mut values = Vec::with_capacity(names.len());

        if let Some(pca) = self.pca.as_ref().filter(|_| self.has_in_block()) {
            let projected: Vec<Vec<f64>> = seen
                .iter()
                .filter_map(|o| o.inclass.as_deref())
                .map(|v| pca.project(v))
                .collect();
            aggregate_block(&mut values, &projected, pca.n_components(), &self.config.aggregators);
        }
        if self.subset.out_class && !self.outclass_columns.is_empty() {
            let rows: Vec<Vec<f64>> = seen.iter().filter_map(|o| o.outclass.clone()).collect();
            aggregate_block(&mut values, &rows, self.outclass_columns.len(), &self.config.aggregators);
        }
        if self.subset.time {
            for &l in &self.config.lookback_days {
                window_stats(&mut values, seen, at_day, l as Day);
            }
            let classes: Vec<Day> = seen
                .iter()
                .filter(|o| o.kind == EventKind::ClassSession)
                .map(|o| o.day)
                .collect();
            values.push(classes.len() as f64);
            values.push(classes.last().map_or(0.0, |d| (at_day - d) as f64));
            values.push(seen.last().map_or(0.0, |o| (at_day - o.day) as f64));
            values.push((at_day - first_day) as f64);
            let teacher = seen.iter().rev().find_map(|o| o.teacher.as_deref());
            let stats = hist.query(teacher, at_day);
            values.push(stats.courses as f64);
            values.push(stats.students as f64);
            values.push(stats.dropout_rate);
        }

        debug_assert_eq!(values.len(), names.len());
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature {}", names[i])));
        }
        Ok(FeatureVector { values, names })
    }
}

const WINDOW_STATS: [&str; 8] = [
    "classes",
    "follow_ups",
    "reschedules",
    "purchases",
    "follow_ups_pos",
    "follow_ups_neg",
    "class_gap_mean",
    "class_gap_count",
];

fn block_names(names: &mut Vec<String>, prefix: &str, cols: &[String], aggs: &[Aggregator]) {
    for agg in aggs {
        match agg {
            Aggregator::Count => names.push(format!("{prefix}_count")),
            Aggregator::Mean => names.extend(cols.iter().map(|c| format!("{prefix}_{c}_mean"))),
            Aggregator::Sum => names.extend(cols.iter().map(|c| format!("{prefix}_{c}_sum"))),
            Aggregator::Last => names.extend(cols.iter().map(|c| format!("{prefix}_{c}_last"))),
        }
    }
}

/// Appends the aggregates of `rows`; empty input yields zeros.
fn aggregate_block(values: &mut Vec<f64>, rows: &[Vec<f64>], width: usize, aggs: &[Aggregator]) {
    let n = rows.len();
    let mut sums = vec![0.0; width];
    for r in rows {
        for (s, x) in sums.iter_mut().zip(r) {
            *s += x;
        }
    }
    for agg in aggs {
        match agg {
            Aggregator::Count => values.push(n as f64),
            Aggregator::Sum => values.extend_from_slice(&sums),
            Aggregator::Mean => {
                values.extend(sums.iter().map(|s| if n == 0 { 0.0 } else { s / n as f64 }))
            }
            Aggregator::Last => match rows.last() {
                Some(r) => values.extend_from_slice(r),
                None => values.extend(std::iter::repeat_n(0.0, width)),
            },
        }
    }
}

/// Activity statistics over the window `(at_day - len, at_day]`.
fn window_stats(values: &mut Vec<f64>, seen: &[&Observation], at_day: Day, len: Day) {
    let start = at_day - len;
    let in_window = seen.iter().filter(|o| o.day > start);
    let mut counts = [0usize; 6];
    let mut class_days = Vec::new();
    for o in in_window {
        match o.kind {
            EventKind::ClassSession => {
                counts[0] += 1;
                class_days.push(o.day);
            }
            EventKind::FollowUp => {
                counts[1] += 1;
                match o.polarity {
                    Some(p) if p > 0 => counts[4] += 1,
                    Some(p) if p < 0 => counts[5] += 1,
                    _ => {}
                }
            }
            EventKind::Reschedule => counts[2] += 1,
            EventKind::PurchaseEvent => counts[3] += 1,
            EventKind::DropoutEvent => {}
        }
    }
    values.extend(counts.iter().map(|&c| c as f64));
    let gaps = class_days.len().saturating_sub(1);
    let gap_mean = if gaps == 0 {
        0.0
    } else {
        (class_days[gaps] - class_days[0]) as f64 / gaps as f64
    };
    values.push(gap_mean);
    values.push(gaps as f64);
}
