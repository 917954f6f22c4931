//! Time-aware pseudo-positive generation.
//!
//! For a dropout student with dropout day `t_n` and previous observation
//! `t_{n-1}`, every integer day `d` with `max(t_{n-1}, t_n - L) < d < t_n`
//! becomes an extra positive pair whose features are the student's state
//! at `d`, weighted by `G((t_n - d) / L)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::{Cohort, Day, FinalStatus, StudentRecord};
use crate::features::{Featurizer, TeacherHistoryIndex};
use crate::labeling::{attach_features, LabeledPair, Provenance, TrainingPair};

/// Decay from normalized time-to-dropout `u` in `[0, 1]` to a confidence weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `1 - u`
    Linear,
    /// `(1 - u)^2`
    Convex,
    /// `1 - u^2`
    Concave,
}

impl Weighting {
    pub const ALL: [Weighting; 3] = [Weighting::Linear, Weighting::Convex, Weighting::Concave];

    pub fn evaluate(self, u: f64) -> f64 {
        match self {
            Weighting::Linear => 1.0 - u,
            Weighting::Convex => (1.0 - u) * (1.0 - u),
            Weighting::Concave => 1.0 - u * u,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Linear => "linear",
            Weighting::Convex => "convex",
            Weighting::Concave => "concave",
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Weighting::Linear),
            "convex" => Ok(Weighting::Convex),
            "concave" => Ok(Weighting::Concave),
            other => Err(Error::Config(format!("unknown weighting '{other}'"))),
        }
    }
}

/// Length of the augmentation window, or no augmentation at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lookback {
    None,
    Days(u32),
}

impl Lookback {
    pub fn days(self) -> Option<u32> {
        match self {
            Lookback::None => None,
            Lookback::Days(d) => Some(d),
        }
    }
}

impl fmt::Display for Lookback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lookback::None => f.write_str("none"),
            Lookback::Days(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for Lookback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Lookback::None);
        }
        match s.parse::<u32>() {
            Ok(d) if d >= 1 => Ok(Lookback::Days(d)),
            _ => Err(Error::Config(format!("lookback must be 'none' or a positive integer, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub lookback: Lookback,
    pub weighting: Weighting,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            lookback: Lookback::Days(7),
            weighting: Weighting::Convex,
        }
    }
}

/// Integer days strictly inside the student's pseudo-positive window.
///
/// A dropout student with a single observation has no previous
/// observation; the window is then clipped at day 0.
pub fn pseudo_days(student: &StudentRecord, lookback: u32) -> Result<Vec<Day>> {
    if student.final_status != FinalStatus::Dropout {
        return Err(Error::Misuse(format!(
            "pseudo days requested for non-dropout student {}",
            student.student_id
        )));
    }
    if lookback == 0 {
        return Err(Error::Config("lookback must be >= 1".into()));
    }
    let t_n = student.last_day();
    let prev = student.penultimate_day().unwrap_or(0);
    let lower = prev.max(t_n - lookback as Day);
    Ok(((lower + 1)..t_n).collect())
}

/// Confidence weight of a pseudo pair at `day` for dropout day `t_n`.
pub fn weight_of(day: Day, t_n: Day, lookback: u32, g: Weighting) -> Result<f64> {
    if lookback == 0 {
        return Err(Error::Domain("lookback must be >= 1".into()));
    }
    let span = t_n - day;
    if span <= 0 || span > lookback as Day {
        return Err(Error::Domain(format!(
            "day {day} is outside the lookback window of dropout day {t_n} (length {lookback})"
        )));
    }
    Ok(g.evaluate(span as f64 / lookback as f64))
}

/// Pseudo-positive pairs (without features) for every dropout student.
pub fn pseudo_pairs(cohort: &Cohort, cfg: &AugmentationConfig) -> Result<Vec<LabeledPair>> {
    let Some(lookback) = cfg.lookback.days() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for rec in cohort.students().filter(|r| r.final_status == FinalStatus::Dropout) {
        let t_n = rec.last_day();
        for day in pseudo_days(rec, lookback)? {
            out.push(LabeledPair {
                student_id: rec.student_id.clone(),
                day,
                label: 1,
                weight: weight_of(day, t_n, lookback, cfg.weighting)?,
                provenance: Provenance::PseudoPositive,
            });
        }
    }
    Ok(out)
}

/// The augmented positive set with assembled features.
pub fn augment(
    cohort: &Cohort,
    cfg: &AugmentationConfig,
    featurizer: &Featurizer,
    hist: &TeacherHistoryIndex,
) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::new();
    for p in pseudo_pairs(cohort, cfg)? {
        let rec = cohort.get(&p.student_id).expect("pair from this cohort");
        out.push(attach_features(rec, p, featurizer, hist)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::{EventKind, Observation, Schema};

    fn dropout(prev: Day, t_n: Day) -> StudentRecord {
        StudentRecord::new(
            "s",
            vec![
                Observation::new(prev, EventKind::FollowUp),
                Observation::new(t_n, EventKind::DropoutEvent),
            ],
            None,
            &Schema::default(),
        )
        .unwrap()
    }

    #[test]
    fn window_examples() {
        assert_eq!(pseudo_days(&dropout(80, 100), 7).unwrap(), (94..=99).collect::<Vec<_>>());
        assert_eq!(pseudo_days(&dropout(98, 100), 7).unwrap(), vec![99]);
        assert!(pseudo_days(&dropout(99, 100), 7).unwrap().is_empty());
        assert!(pseudo_days(&dropout(99, 100), 30).unwrap().is_empty());
        assert_eq!(pseudo_days(&dropout(80, 100), 3).unwrap(), vec![98, 99]);
    }

    #[test]
    fn single_observation_clips_at_zero() {
        let s = StudentRecord::new(
            "s",
            vec![Observation::new(4, EventKind::DropoutEvent)],
            None,
            &Schema::default(),
        )
        .unwrap();
        assert_eq!(pseudo_days(&s, 7).unwrap(), vec![1, 2, 3]);
        assert_eq!(pseudo_days(&s, 2).unwrap(), vec![3]);
    }

    #[test]
    fn non_dropout_is_misuse() {
        let s = StudentRecord::new(
            "s",
            vec![Observation::new(4, EventKind::FollowUp)],
            None,
            &Schema::default(),
        )
        .unwrap();
        assert!(matches!(pseudo_days(&s, 7), Err(Error::Misuse(_))));
    }

    #[test]
    fn weight_examples() {
        let w = weight_of(99, 100, 7, Weighting::Linear).unwrap();
        assert!((w - 6.0 / 7.0).abs() < 1e-15);
        assert!((w - 0.857143).abs() < 1e-6);
        let w = weight_of(94, 100, 7, Weighting::Convex).unwrap();
        assert!((w - 0.020408).abs() < 1e-6);
        let w = weight_of(94, 100, 7, Weighting::Concave).unwrap();
        assert!((w - 0.265306).abs() < 1e-6);
        assert!(weight_of(100, 100, 7, Weighting::Linear).is_err());
        assert!(weight_of(92, 100, 7, Weighting::Linear).is_err());
        assert_eq!(weight_of(93, 100, 7, Weighting::Linear).unwrap(), 0.0);
    }

    #[test]
    fn shape_endpoints_and_order() {
        for g in Weighting::ALL {
            assert_eq!(g.evaluate(0.0), 1.0);
            assert_eq!(g.evaluate(1.0), 0.0);
        }
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let (cvx, lin, ccv) = (
                Weighting::Convex.evaluate(u),
                Weighting::Linear.evaluate(u),
                Weighting::Concave.evaluate(u),
            );
            assert!(cvx <= lin && lin <= ccv);
        }
    }

    #[test]
    fn parse_flags() {
        assert_eq!("none".parse::<Lookback>().unwrap(), Lookback::None);
        assert_eq!("14".parse::<Lookback>().unwrap(), Lookback::Days(14));
        assert!("0".parse::<Lookback>().is_err());
        assert_eq!("Convex".parse::<Weighting>().unwrap(), Weighting::Convex);
        assert!("cubic".parse::<Weighting>().is_err());
    }

    #[test]
    fn disabled_lookback_yields_nothing() {
        let c = Cohort::new(Schema::default(), vec![dropout(80, 100)]).unwrap();
        let cfg = AugmentationConfig {
            lookback: Lookback::None,
            weighting: Weighting::Convex,
        };
        assert!(pseudo_pairs(&c, &cfg).unwrap().is_empty());
        let cfg = AugmentationConfig::default();
        assert_eq!(pseudo_pairs(&c, &cfg).unwrap().len(), 6);
    }
}
