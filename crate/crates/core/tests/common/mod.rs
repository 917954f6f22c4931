#![allow(dead_code)]

use atrisk::{Cohort, EventKind, FinalStatus, Observation, Schema, StudentRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn schema() -> Schema {
    Schema {
        inclass_columns: vec!["attention".into(), "speech".into(), "smile".into()],
        outclass_columns: vec!["satisfaction".into(), "price".into()],
        epoch: None,
    }
}

/// Random but valid cohort: a purchase, then classes, follow-ups and
/// reschedules on distinct days, ending in dropout, completion or ongoing.
pub fn random_cohort(seed: u64, n: usize, max_obs: usize) -> Cohort {
    let schema = schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<StudentRecord> = (0..n)
        .map(|i| random_student(&mut rng, &format!("s{i:03}"), max_obs, &schema))
        .collect();
    Cohort::new(schema, records).unwrap()
}

pub fn random_student(rng: &mut ChaCha8Rng, id: &str, max_obs: usize, schema: &Schema) -> StudentRecord {
    let teacher = format!("t{}", rng.random_range(0..4));
    let n_obs = rng.random_range(2..=max_obs.max(2));
    let mut day = rng.random_range(1..20);
    let mut obs = Vec::with_capacity(n_obs);
    let mut purchase = Observation::new(day, EventKind::PurchaseEvent);
    purchase.teacher = Some(teacher.clone());
    purchase.outclass = Some((0..schema.outclass_width()).map(|_| rng.random_range(-2.0..2.0)).collect());
    obs.push(purchase);
    let status = match rng.random_range(0..10) {
        0..=3 => FinalStatus::Dropout,
        4..=8 => FinalStatus::Completion,
        _ => FinalStatus::Ongoing,
    };
    let body = if status == FinalStatus::Dropout { n_obs - 1 } else { n_obs };
    for _ in 1..body {
        day += rng.random_range(1..9);
        let o = match rng.random_range(0..6) {
            0 => {
                let mut o = Observation::new(day, EventKind::FollowUp);
                o.polarity = Some(if rng.random_bool(0.5) { 1 } else { -1 });
                o
            }
            1 => Observation::new(day, EventKind::Reschedule),
            _ => {
                let mut o = Observation::new(day, EventKind::ClassSession);
                o.teacher = Some(teacher.clone());
                o.inclass = Some((0..schema.inclass_width()).map(|_| rng.random_range(-3.0..3.0)).collect());
                o
            }
        };
        obs.push(o);
    }
    if status == FinalStatus::Dropout {
        day += rng.random_range(1..15);
        obs.push(Observation::new(day, EventKind::DropoutEvent));
    }
    let hint = (status == FinalStatus::Ongoing).then_some(FinalStatus::Ongoing);
    StudentRecord::new(id, obs, hint, schema).unwrap()
}
