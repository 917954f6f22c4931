//! Event-log ingestion and the canonical in-memory cohort.
//!
//! The on-disk format is one JSON object per line:
//!
//! ```text
//! {"student": "s1", "day": 3, "kind": "class_session", "teacher": "t1", "inclass": [0.1, 0.4]}
//! {"student": "s1", "day": 10, "kind": "dropout_event"}
//! ```
//!
//! Two optional fields extend the basic record: `polarity` (a signed
//! sentiment tag on `follow_up` events) and `status` (`"completion"` or
//! `"ongoing"`, marking how a student without a dropout event resolved).
//! Students without a dropout event and without a status tag are treated
//! as completions.
//!
//! Column widths of the numeric vectors are fixed by a companion
//! `schema.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer day index relative to the cohort epoch.
pub type Day = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ClassSession,
    FollowUp,
    Reschedule,
    PurchaseEvent,
    DropoutEvent,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ClassSession => "class_session",
            EventKind::FollowUp => "follow_up",
            EventKind::Reschedule => "reschedule",
            EventKind::PurchaseEvent => "purchase_event",
            EventKind::DropoutEvent => "dropout_event",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Dropout,
    Completion,
    Ongoing,
}

impl FinalStatus {
    pub fn is_resolved(self) -> bool {
        !matches!(self, FinalStatus::Ongoing)
    }
}

/// Column layout of the numeric per-observation vectors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub inclass_columns: Vec<String>,
    pub outclass_columns: Vec<String>,
    /// Calendar date (ISO 8601) that day index 0 denotes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<String>,
}

impl Schema {
    pub fn inclass_width(&self) -> usize {
        self.inclass_columns.len()
    }

    pub fn outclass_width(&self) -> usize {
        self.outclass_columns.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One timestamped raw observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub day: Day,
    pub kind: EventKind,
    pub inclass: Option<Vec<f64>>,
    pub outclass: Option<Vec<f64>>,
    pub teacher: Option<String>,
    pub polarity: Option<i8>,
}

impl Observation {
    pub fn new(day: Day, kind: EventKind) -> Self {
        Observation {
            day,
            kind,
            inclass: None,
            outclass: None,
            teacher: None,
            polarity: None,
        }
    }
}

/// A student's ordered observation sequence plus terminal status.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentRecord {
    pub student_id: String,
    pub observations: Vec<Observation>,
    pub final_status: FinalStatus,
    pub teacher_id: String,
}

impl StudentRecord {
    /// Number of observation-time pairs.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_day(&self) -> Day {
        self.observations[0].day
    }

    pub fn last_day(&self) -> Day {
        self.observations[self.observations.len() - 1].day
    }

    /// Day of the dropout event, if the student dropped out.
    pub fn dropout_day(&self) -> Option<Day> {
        (self.final_status == FinalStatus::Dropout).then(|| self.last_day())
    }

    /// Day of the observation before the last one.
    pub fn penultimate_day(&self) -> Option<Day> {
        let n = self.observations.len();
        (n >= 2).then(|| self.observations[n - 2].day)
    }

    /// Observations with `day <= at_day`.
    pub fn observations_until(&self, at_day: Day) -> &[Observation] {
        let end = self.observations.partition_point(|o| o.day <= at_day);
        &self.observations[..end]
    }

    /// Builds a record from observations in any order, enforcing all
    /// per-student invariants against `schema`.
    pub fn new(
        student_id: impl Into<String>,
        mut observations: Vec<Observation>,
        status_hint: Option<FinalStatus>,
        schema: &Schema,
    ) -> Result<Self> {
        let student_id = student_id.into();
        if observations.is_empty() {
            return Err(Error::validation(&student_id, "no observations"));
        }
        observations.sort_by_key(|o| o.day);
        for pair in observations.windows(2) {
            if pair[0].day == pair[1].day {
                return Err(Error::validation(
                    &student_id,
                    format!("duplicate observation day {}", pair[0].day),
                ));
            }
        }
        for obs in &observations {
            if obs.day <= 0 {
                return Err(Error::validation(
                    &student_id,
                    format!("observation day {} is not positive", obs.day),
                ));
            }
            check_vectors(&student_id, obs, schema)?;
        }
        let dropouts = observations
            .iter()
            .filter(|o| o.kind == EventKind::DropoutEvent)
            .count();
        let has_dropout = match dropouts {
            0 => false,
            1 => {
                if observations.last().map(|o| o.kind) != Some(EventKind::DropoutEvent) {
                    return Err(Error::validation(
                        &student_id,
                        "dropout_event is not the last observation",
                    ));
                }
                true
            }
            n => {
                return Err(Error::validation(
                    &student_id,
                    format!("{n} dropout events, expected at most one"),
                ))
            }
        };
        let final_status = match (has_dropout, status_hint) {
            (true, None | Some(FinalStatus::Dropout)) => FinalStatus::Dropout,
            (true, Some(other)) => {
                return Err(Error::validation(
                    &student_id,
                    format!("status {other:?} conflicts with dropout_event"),
                ))
            }
            (false, Some(FinalStatus::Dropout)) => {
                return Err(Error::validation(
                    &student_id,
                    "status dropout without a dropout_event",
                ))
            }
            (false, Some(status)) => status,
            (false, None) => FinalStatus::Completion,
        };
        let teacher_id = observations
            .iter()
            .find_map(|o| o.teacher.clone())
            .unwrap_or_default();
        Ok(StudentRecord {
            student_id,
            observations,
            final_status,
            teacher_id,
        })
    }
}

fn check_vectors(student: &str, obs: &Observation, schema: &Schema) -> Result<()> {
    let is_class = obs.kind == EventKind::ClassSession;
    match (&obs.inclass, is_class) {
        (Some(v), true) => {
            if v.len() != schema.inclass_width() {
                return Err(Error::Schema(format!(
                    "student {student} day {}: inclass width {} != schema width {}",
                    obs.day,
                    v.len(),
                    schema.inclass_width()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(student, format!("non-finite inclass value at day {}", obs.day)));
            }
        }
        (None, true) => {
            return Err(Error::validation(
                student,
                format!("class_session at day {} without inclass values", obs.day),
            ))
        }
        (Some(_), false) => {
            return Err(Error::validation(
                student,
                format!("{} at day {} carries inclass values", obs.kind, obs.day),
            ))
        }
        (None, false) => {}
    }
    if let Some(v) = &obs.outclass {
        if v.len() != schema.outclass_width() {
            return Err(Error::Schema(format!(
                "student {student} day {}: outclass width {} != schema width {}",
                obs.day,
                v.len(),
                schema.outclass_width()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(student, format!("non-finite outclass value at day {}", obs.day)));
        }
    }
    Ok(())
}

/// All students of one data set, keyed and ordered by student id.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schema: Schema,
    students: BTreeMap<String, StudentRecord>,
}

impl Cohort {
    pub fn new(schema: Schema, records: impl IntoIterator<Item = StudentRecord>) -> Result<Self> {
        let mut students = BTreeMap::new();
        for rec in records {
            if rec.is_empty() {
                return Err(Error::validation(&rec.student_id, "no observations"));
            }
            let id = rec.student_id.clone();
            if students.insert(id.clone(), rec).is_some() {
                return Err(Error::validation(&id, "duplicate student id"));
            }
        }
        Ok(Cohort { schema, students })
    }

    pub fn empty(schema: Schema) -> Self {
        Cohort {
            schema,
            students: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&StudentRecord> {
        self.students.get(id)
    }

    /// Students in id order.
    pub fn students(&self) -> impl ExactSizeIterator<Item = &StudentRecord> {
        self.students.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.students.keys().map(String::as_str)
    }

    /// Restriction to the given ids; unknown ids are ignored.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Cohort {
        let students = ids
            .into_iter()
            .filter_map(|id| self.students.get(id).map(|r| (id.to_string(), r.clone())))
            .collect();
        Cohort {
            schema: self.schema.clone(),
            students,
        }
    }

    pub fn total_pairs(&self) -> usize {
        self.students.values().map(StudentRecord::len).sum()
    }

    /// Serializes the cohort in the line-delimited event format.
    pub fn write_events<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in self.students.values() {
            let last = rec.observations.len() - 1;
            for (i, obs) in rec.observations.iter().enumerate() {
                let status = match rec.final_status {
                    FinalStatus::Ongoing if i == last => Some(FinalStatus::Ongoing),
                    _ => None,
                };
                let raw = RawEvent {
                    student: rec.student_id.clone(),
                    day: obs.day,
                    kind: obs.kind,
                    teacher: obs.teacher.clone(),
                    inclass: obs.inclass.clone(),
                    outclass: obs.outclass.clone(),
                    polarity: obs.polarity,
                    status,
                };
                serde_json::to_writer(&mut out, &raw)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, events_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<()> {
        let events_path = events_path.as_ref();
        let file = std::fs::File::create(events_path).map_err(|e| Error::io(events_path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_events(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(events_path, e))?;
        self.schema.save(schema_path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    student: String,
    day: Day,
    kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    teacher: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inclass: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outclass: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarity: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    status: Option<FinalStatus>,
}

/// Parses line-delimited events from any reader.
pub fn read_events<R: BufRead>(reader: R, schema: Schema) -> Result<Cohort> {
    let mut grouped: BTreeMap<String, (Vec<Observation>, Option<FinalStatus>)> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let entry = grouped.entry(raw.student).or_default();
        if let Some(status) = raw.status {
            match entry.1 {
                Some(prev) if prev != status => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("conflicting status {status:?} (earlier {prev:?})"),
                    })
                }
                _ => entry.1 = Some(status),
            }
        }
        entry.0.push(Observation {
            day: raw.day,
            kind: raw.kind,
            inclass: raw.inclass,
            outclass: raw.outclass,
            teacher: raw.teacher,
            polarity: raw.polarity,
        });
    }
    let records = grouped
        .into_iter()
        .map(|(id, (obs, status))| StudentRecord::new(id, obs, status, &schema))
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(schema, records)
}

/// Loads and validates an events file against a schema file.
pub fn ingest(events_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<Cohort> {
    let schema = Schema::load(schema_path)?;
    let events_path = events_path.as_ref();
    let file = std::fs::File::open(events_path).map_err(|e| Error::io(events_path, e))?;
    read_events(BufReader::new(file), schema)
}

/// Dataset descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub students: usize,
    pub dropouts: usize,
    pub completions: usize,
    pub ongoing: usize,
    pub dropout_rate: f64,
    /// Mean of `last_day - first_day` over students.
    pub mean_span_days: f64,
    /// Total number of observation-time pairs.
    pub total_pairs: usize,
}

pub fn cohort_stats(cohort: &Cohort) -> Result<CohortSummary> {
    if cohort.is_empty() {
        return Err(Error::EmptyInput("cohort has no students".into()));
    }
    let mut dropouts = 0;
    let mut completions = 0;
    let mut ongoing = 0;
    let mut span_sum = 0.0;
    for rec in cohort.students() {
        match rec.final_status {
            FinalStatus::Dropout => dropouts += 1,
            FinalStatus::Completion => completions += 1,
            FinalStatus::Ongoing => ongoing += 1,
        }
        span_sum += (rec.last_day() - rec.first_day()) as f64;
    }
    let n = cohort.len();
    Ok(CohortSummary {
        students: n,
        dropouts,
        completions,
        ongoing,
        dropout_rate: dropouts as f64 / n as f64,
        mean_span_days: span_sum / n as f64,
        total_pairs: cohort.total_pairs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema {
            inclass_columns: vec!["a".into(), "b".into()],
            outclass_columns: vec!["c".into()],
            epoch: None,
        }
    }

    fn parse(text: &str) -> Result<Cohort> {
        read_events(text.as_bytes(), schema())
    }

    #[test]
    fn empty_file_gives_empty_cohort() {
        let c = parse("").unwrap();
        assert!(c.is_empty());
        assert!(matches!(cohort_stats(&c), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn class_then_dropout() {
        let c = parse(
            r#"{"student":"s1","day":3,"kind":"class_session","teacher":"t1","inclass":[0.1,0.2]}
{"student":"s1","day":10,"kind":"dropout_event"}
"#,
        )
        .unwrap();
        let rec = c.get("s1").unwrap();
        assert_eq!(rec.len(), 2);
        assert_eq!(rec.final_status, FinalStatus::Dropout);
        assert_eq!(rec.teacher_id, "t1");
        assert_eq!(rec.dropout_day(), Some(10));
    }

    #[test]
    fn dropout_before_class_is_rejected() {
        let err = parse(
            r#"{"student":"s9","day":5,"kind":"dropout_event"}
{"student":"s9","day":8,"kind":"class_session","inclass":[0.0,0.0]}
"#,
        )
        .unwrap_err();
        match err {
            Error::Validation { student, .. } => assert_eq!(student, "s9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse(
            r#"{"student":"s1","day":3,"kind":"follow_up"}
{"student":"s1","day":
"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = parse(r#"{"student":"s1","day":3,"kind":"lecture"}"#).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_day_is_rejected() {
        let err = parse(
            r#"{"student":"s1","day":4,"kind":"follow_up"}
{"student":"s1","day":2,"kind":"reschedule"}
{"student":"s1","day":4,"kind":"reschedule"}
"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn out_of_order_days_are_sorted() {
        let c = parse(
            r#"{"student":"s1","day":9,"kind":"follow_up"}
{"student":"s1","day":2,"kind":"reschedule"}
"#,
        )
        .unwrap();
        let days: Vec<_> = c.get("s1").unwrap().observations.iter().map(|o| o.day).collect();
        assert_eq!(days, vec![2, 9]);
    }

    #[test]
    fn width_mismatch_is_schema_error() {
        let err = parse(r#"{"student":"s1","day":3,"kind":"class_session","inclass":[0.1]}"#).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let err = parse(r#"{"student":"s1","day":3,"kind":"follow_up","outclass":[0.1,0.2]}"#).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn inclass_only_on_class_sessions() {
        assert!(parse(r#"{"student":"s1","day":3,"kind":"class_session"}"#).is_err());
        assert!(parse(r#"{"student":"s1","day":3,"kind":"follow_up","inclass":[1,2]}"#).is_err());
    }

    #[test]
    fn day_zero_is_rejected() {
        assert!(parse(r#"{"student":"s1","day":0,"kind":"follow_up"}"#).is_err());
    }

    #[test]
    fn status_tags() {
        let c = parse(
            r#"{"student":"a","day":1,"kind":"follow_up","status":"ongoing"}
{"student":"b","day":1,"kind":"follow_up"}
"#,
        )
        .unwrap();
        assert_eq!(c.get("a").unwrap().final_status, FinalStatus::Ongoing);
        assert_eq!(c.get("b").unwrap().final_status, FinalStatus::Completion);
        assert!(parse(
            r#"{"student":"a","day":1,"kind":"follow_up","status":"ongoing"}
{"student":"a","day":2,"kind":"dropout_event"}
"#
        )
        .is_err());
    }

    #[test]
    fn single_completion_student_has_zero_rate() {
        let c = parse(r#"{"student":"a","day":1,"kind":"follow_up"}"#).unwrap();
        let s = cohort_stats(&c).unwrap();
        assert_eq!(s.dropout_rate, 0.0);
        assert_eq!(s.total_pairs, 1);
    }
}
