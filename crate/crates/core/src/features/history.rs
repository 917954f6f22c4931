//! Per-teacher historical performance, queried strictly before a day.

use std::collections::{BTreeMap, HashMap};

use crate::event_store::{Cohort, Day, EventKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherStats {
    /// Class sessions taught before the query day.
    pub courses: usize,
    /// Distinct students taught before the query day.
    pub students: usize,
    /// Fraction of those students who dropped out before the query day,
    /// or the platform-wide rate before that day when the teacher has no
    /// students yet.
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, Default)]
struct TeacherTimeline {
    session_days: Vec<Day>,
    first_session_days: Vec<Day>,
    dropout_days: Vec<Day>,
}

/// Immutable index answering `(teacher, day)` history queries.
#[derive(Debug, Clone)]
pub struct TeacherHistoryIndex {
    teachers: HashMap<String, TeacherTimeline>,
    /// Every student's first observation day, sorted.
    first_days: Vec<Day>,
    /// Every dropout day, sorted.
    dropout_days: Vec<Day>,
}

impl TeacherHistoryIndex {
    pub fn build(cohort: &Cohort) -> Self {
        let mut teachers: HashMap<String, TeacherTimeline> = HashMap::new();
        let mut first_days = Vec::with_capacity(cohort.len());
        let mut dropout_days = Vec::new();
        for rec in cohort.students() {
            first_days.push(rec.first_day());
            dropout_days.extend(rec.dropout_day());
            let mut first_by_teacher: BTreeMap<&str, Day> = BTreeMap::new();
            for obs in &rec.observations {
                if obs.kind != EventKind::ClassSession {
                    continue;
                }
                if let Some(t) = obs.teacher.as_deref() {
                    teachers.entry(t.to_string()).or_default().session_days.push(obs.day);
                    first_by_teacher.entry(t).or_insert(obs.day);
                }
            }
            for (t, first) in first_by_teacher {
                let tl = teachers.get_mut(t).expect("teacher inserted above");
                tl.first_session_days.push(first);
                if let Some(d) = rec.dropout_day() {
                    tl.dropout_days.push(d);
                }
            }
        }
        for tl in teachers.values_mut() {
            tl.session_days.sort_unstable();
            tl.first_session_days.sort_unstable();
            tl.dropout_days.sort_unstable();
        }
        first_days.sort_unstable();
        dropout_days.sort_unstable();
        TeacherHistoryIndex {
            teachers,
            first_days,
            dropout_days,
        }
    }

    /// Dropouts before `day` over students seen before `day`, across all
    /// teachers; 0 before anyone is seen.
    pub fn global_prior(&self, day: Day) -> f64 {
        let seen = self.first_days.partition_point(|&d| d < day);
        let dropped = self.dropout_days.partition_point(|&d| d < day);
        if seen == 0 {
            0.0
        } else {
            dropped as f64 / seen as f64
        }
    }

    /// History of `teacher` using only events strictly before `day`.
    pub fn query(&self, teacher: Option<&str>, day: Day) -> TeacherStats {
        let Some(tl) = teacher.and_then(|t| self.teachers.get(t)) else {
            return TeacherStats {
                courses: 0,
                students: 0,
                dropout_rate: self.global_prior(day),
            };
        };
        let before = |v: &[Day]| v.partition_point(|&d| d < day);
        let courses = before(&tl.session_days);
        let students = before(&tl.first_session_days);
        // dropout day always follows the student's first session
        let dropped = before(&tl.dropout_days);
        let dropout_rate = if students == 0 {
            self.global_prior(day)
        } else {
            dropped as f64 / students as f64
        };
        TeacherStats {
            courses,
            students,
            dropout_rate,
        }
    }
}
