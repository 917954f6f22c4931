//! Original positive/negative pair sets and multi-step-ahead ground truth.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::{Cohort, Day, FinalStatus, StudentRecord};
use crate::features::{FeatureVector, Featurizer, TeacherHistoryIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OriginalPositive,
    OriginalNegative,
    PseudoPositive,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::OriginalPositive => "original_positive",
            Provenance::OriginalNegative => "original_negative",
            Provenance::PseudoPositive => "pseudo_positive",
        })
    }
}

/// A `<student, day>` pair before features are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub student_id: String,
    pub day: Day,
    pub label: u8,
    pub weight: f64,
    pub provenance: Provenance,
}

/// A labeled, weighted pair with its assembled features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub student_id: String,
    pub day: Day,
    pub features: FeatureVector,
    pub label: u8,
    pub weight: f64,
    pub provenance: Provenance,
}

impl TrainingPair {
    pub fn from_pair(pair: LabeledPair, features: FeatureVector) -> Self {
        TrainingPair {
            student_id: pair.student_id,
            day: pair.day,
            features,
            label: pair.label,
            weight: pair.weight,
            provenance: pair.provenance,
        }
    }
}

/// Assembles the features of `pair`.
///
/// A negative pair sees only the history strictly before its own
/// observation, exactly as a positive pair never sees its dropout event.
/// Otherwise every negative would carry a same-day event that no positive
/// can have.
pub fn attach_features(
    student: &StudentRecord,
    pair: LabeledPair,
    featurizer: &Featurizer,
    hist: &TeacherHistoryIndex,
) -> Result<TrainingPair> {
    let fv = match pair.provenance {
        Provenance::OriginalNegative => featurizer.assemble_before(student, pair.day, hist)?,
        Provenance::PseudoPositive => featurizer.assemble_pseudo(student, pair.day, hist)?,
        Provenance::OriginalPositive => featurizer.assemble(student, pair.day, hist)?,
    };
    Ok(TrainingPair::from_pair(pair, fv))
}

/// Splits every observation of resolved students into the positive set
/// (the dropout observation of each dropout student) and the negative set
/// (everything else).
pub fn build_original_pairs(cohort: &Cohort) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>)> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut resolved = 0;
    for rec in cohort.students() {
        if !rec.final_status.is_resolved() {
            continue;
        }
        resolved += 1;
        let last = rec.observations.len() - 1;
        for (i, obs) in rec.observations.iter().enumerate() {
            let positive = rec.final_status == FinalStatus::Dropout && i == last;
            let pair = LabeledPair {
                student_id: rec.student_id.clone(),
                day: obs.day,
                label: positive as u8,
                weight: 1.0,
                provenance: if positive {
                    Provenance::OriginalPositive
                } else {
                    Provenance::OriginalNegative
                },
            };
            if positive {
                positives.push(pair);
            } else {
                negatives.push(pair);
            }
        }
    }
    if resolved == 0 {
        return Err(Error::EmptyInput("no resolved students".into()));
    }
    Ok((positives, negatives))
}

/// 1 iff the student drops out within `(day, day + delta]`.
pub fn horizon_label(student: &StudentRecord, day: Day, delta: u32) -> Result<u8> {
    if delta == 0 {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    match student.final_status {
        FinalStatus::Ongoing => Err(Error::Unresolved(student.student_id.clone())),
        FinalStatus::Completion => Ok(0),
        FinalStatus::Dropout => {
            let d = student.last_day();
            Ok((d > day && d <= day + delta as Day) as u8)
        }
    }
}

/// Ground truth for one `(student, day, horizon)` query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonLabel {
    pub student_id: String,
    pub day: Day,
    pub horizon_days: u32,
    pub label: u8,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::{EventKind, Observation, Schema};

    fn schema() -> Schema {
        Schema::default()
    }

    fn rec(id: &str, days: &[Day], dropout: bool) -> StudentRecord {
        let mut obs: Vec<Observation> = days
            .iter()
            .map(|&d| Observation::new(d, EventKind::FollowUp))
            .collect();
        if dropout {
            obs.last_mut().unwrap().kind = EventKind::DropoutEvent;
        }
        StudentRecord::new(id, obs, None, &schema()).unwrap()
    }

    #[test]
    fn dropout_student_split() {
        let c = Cohort::new(schema(), vec![rec("a", &[3, 10, 17], true)]).unwrap();
        let (p, n) = build_original_pairs(&c).unwrap();
        assert_eq!(p.iter().map(|x| x.day).collect::<Vec<_>>(), vec![17]);
        assert_eq!(n.iter().map(|x| x.day).collect::<Vec<_>>(), vec![3, 10]);
        assert!(p.iter().chain(&n).all(|x| x.weight == 1.0));
    }

    #[test]
    fn completion_student_all_negative() {
        let c = Cohort::new(schema(), vec![rec("a", &[1, 2, 3, 4], false)]).unwrap();
        let (p, n) = build_original_pairs(&c).unwrap();
        assert!(p.is_empty());
        assert_eq!(n.len(), 4);
    }

    #[test]
    fn fixture_counts() {
        let c = Cohort::new(
            schema(),
            vec![
                rec("d1", &[1, 2], true),
                rec("d2", &[1, 2, 3, 4, 5], true),
                rec("d3", &[1, 2, 3], true),
                rec("c1", &[1, 2, 3, 4], false),
                rec("c2", &[5, 6, 7, 8], false),
            ],
        )
        .unwrap();
        let (p, n) = build_original_pairs(&c).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(n.len(), 15);
    }

    #[test]
    fn only_ongoing_is_empty_input() {
        let obs = vec![Observation::new(1, EventKind::FollowUp)];
        let r = StudentRecord::new("o", obs, Some(FinalStatus::Ongoing), &schema()).unwrap();
        let c = Cohort::new(schema(), vec![r.clone()]).unwrap();
        assert!(matches!(build_original_pairs(&c), Err(Error::EmptyInput(_))));
        assert!(matches!(horizon_label(&r, 1, 3), Err(Error::Unresolved(_))));
    }

    #[test]
    fn horizon_examples() {
        let d = rec("d", &[10, 50, 100], true);
        assert_eq!(horizon_label(&d, 95, 7).unwrap(), 1);
        assert_eq!(horizon_label(&d, 90, 7).unwrap(), 0);
        assert_eq!(horizon_label(&d, 93, 7).unwrap(), 1);
        assert_eq!(horizon_label(&d, 99, 1).unwrap(), 1);
        let c = rec("c", &[10, 50, 100], false);
        for day in [10, 50, 99] {
            for delta in [1, 7, 14] {
                assert_eq!(horizon_label(&c, day, delta).unwrap(), 0);
            }
        }
    }
}
