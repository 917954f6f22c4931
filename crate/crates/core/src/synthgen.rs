//! Discrete-time hazard simulator for synthetic student cohorts.
//!
//! Each student has a class affinity `a` (drives in-class readings) and a
//! service affinity `b` (drives out-of-class readings). Classes, lapses and
//! follow-ups are drawn first; dropout is then decided day by day from a
//! logistic hazard on days since the last attended class. Trajectories and
//! hazard uniforms are fixed before the intercept is calibrated, so the
//! realized dropout rate is monotone in the intercept.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_store::{Cohort, Day, EventKind, FinalStatus, Observation, Schema, StudentRecord};
use crate::trainer::sigmoid;

pub const INCLASS_COLUMNS: [&str; 6] = [
    "attention",
    "speech_ratio",
    "interaction",
    "smile",
    "answer_accuracy",
    "volume",
];
pub const OUTCLASS_COLUMNS: [&str; 3] = ["satisfaction", "responsiveness", "price_sensitivity"];

const INCLASS_LOADINGS: [f64; 6] = [1.0, 0.8, 0.9, 0.6, 0.7, 0.3];
const LATEST_START: Day = 180;
const RECENCY_CAP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_students: usize,
    pub target_dropout_rate: f64,
    pub mean_span_days: f64,
    /// Inclusive range of days between scheduled classes.
    pub class_gap_days: (u32, u32),
    /// Hazard slope on days since the last attended class.
    pub recency_slope: f64,
    /// Hazard relief per unit of latent engagement.
    pub engagement_slope: f64,
    /// Hazard relief per positive follow-up in the past week.
    pub follow_up_relief: f64,
    /// Hazard relief per unit of teacher quality.
    pub teacher_effect: f64,
    /// Standard deviation of a per-student hazard offset no feature sees.
    pub frailty_sd: f64,
    /// Stationary standard deviation of the daily engagement drift.
    pub drift_sd: f64,
    /// Day-to-day autocorrelation of the engagement drift.
    pub drift_persistence: f64,
    pub n_teachers: usize,
    pub calibration_tolerance: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_students: 500,
            target_dropout_rate: 0.1616,
            mean_span_days: 86.0,
            class_gap_days: (3, 7),
            recency_slope: 0.25,
            engagement_slope: 0.8,
            follow_up_relief: 0.5,
            teacher_effect: 0.3,
            frailty_sd: 1.0,
            drift_sd: 1.0,
            drift_persistence: 0.8,
            n_teachers: 20,
            calibration_tolerance: 0.03,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_students == 0 {
            return bad("n_students must be positive".into());
        }
        if !(self.target_dropout_rate > 0.0 && self.target_dropout_rate < 1.0) {
            return bad(format!("target dropout rate {} outside (0, 1)", self.target_dropout_rate));
        }
        if !(self.mean_span_days >= 10.0 && self.mean_span_days.is_finite()) {
            return bad(format!("mean span {} must be at least 10 days", self.mean_span_days));
        }
        let (lo, hi) = self.class_gap_days;
        if lo == 0 || lo > hi {
            return bad(format!("class gap range {lo}..={hi} is invalid"));
        }
        if self.n_teachers == 0 {
            return bad("n_teachers must be positive".into());
        }
        if !(self.drift_persistence >= 0.0 && self.drift_persistence < 1.0) {
            return bad(format!("drift persistence {} outside [0, 1)", self.drift_persistence));
        }
        if !(self.drift_sd >= 0.0 && self.frailty_sd >= 0.0) {
            return bad("drift and frailty deviations must be non-negative".into());
        }
        if !(self.calibration_tolerance > 0.0) {
            return bad("calibration tolerance must be positive".into());
        }
        for (name, v) in [
            ("recency_slope", self.recency_slope),
            ("engagement_slope", self.engagement_slope),
            ("follow_up_relief", self.follow_up_relief),
            ("teacher_effect", self.teacher_effect),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    pub fn schema() -> Schema {
        Schema {
            inclass_columns: INCLASS_COLUMNS.iter().map(|s| s.to_string()).collect(),
            outclass_columns: OUTCLASS_COLUMNS.iter().map(|s| s.to_string()).collect(),
            epoch: None,
        }
    }
}

/// Latent variables and hazard trace of one simulated student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub student_id: String,
    pub class_affinity: f64,
    pub service_affinity: f64,
    pub engagement: f64,
    pub teacher: String,
    pub teacher_quality: f64,
    pub start_day: Day,
    pub planned_end_day: Day,
    pub dropout_day: Option<Day>,
    /// Day of the first hazard entry.
    pub hazard_start_day: Day,
    /// Daily dropout hazard up to the outcome.
    pub hazard: Vec<f64>,
    /// Days since the last attended class, aligned with `hazard`.
    pub days_since_class: Vec<f64>,
    /// Engagement level plus drift, aligned with `hazard`.
    pub engagement_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub cohort: Cohort,
    pub truth: Vec<TruthRecord>,
    pub alpha: f64,
    pub realized_dropout_rate: f64,
}

impl SimOutput {
    pub fn write_truth<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.truth {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Trajectory {
    a: f64,
    b: f64,
    e: f64,
    teacher: usize,
    start: Day,
    end: Day,
    observations: Vec<Observation>,
    /// Hazard margin without the intercept for days `start + 1 .. end`.
    margin: Vec<f64>,
    days_since_class: Vec<f64>,
    engagement: Vec<f64>,
    uniforms: Vec<f64>,
}

impl Trajectory {
    /// Index of the dropout day into `margin`, if any.
    fn outcome(&self, alpha: f64) -> Option<usize> {
        self.margin
            .iter()
            .zip(&self.uniforms)
            .position(|(m, u)| *u < sigmoid(alpha + m))
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn polarity(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

fn outclass_reading(rng: &mut ChaCha8Rng, b: f64) -> Vec<f64> {
    vec![
        b + 0.7 * normal(rng),
        0.7 * b + 0.8 * normal(rng),
        -0.5 * b + 0.9 * normal(rng),
    ]
}

fn simulate_student(cfg: &SimConfig, index: usize, teacher_quality: &[f64]) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let a = normal(&mut rng);
    let b = normal(&mut rng);
    let e = (a + b) / std::f64::consts::SQRT_2;
    let frailty = cfg.frailty_sd * normal(&mut rng);
    let teacher = rng.random_range(0..cfg.n_teachers);
    let teacher_name = format!("t{teacher:02}");
    let start: Day = rng.random_range(1..=LATEST_START);
    let span = (cfg.mean_span_days * rng.random_range(0.6..1.4)).round().max(10.0) as Day;
    let end = start + span;
    let (gap_lo, gap_hi) = cfg.class_gap_days;

    // engagement on each day from start to end
    let rho = cfg.drift_persistence;
    let innovation = cfg.drift_sd * (1.0 - rho * rho).sqrt();
    let mut drift = cfg.drift_sd * normal(&mut rng);
    let mut engagement = Vec::with_capacity((span + 1) as usize);
    for _ in 0..=span {
        engagement.push(e + drift);
        drift = rho * drift + innovation * normal(&mut rng);
    }
    let e_at = |day: Day| engagement[(day - start) as usize];

    let mut observations = Vec::new();
    let mut purchase = Observation::new(start, EventKind::PurchaseEvent);
    purchase.outclass = Some(outclass_reading(&mut rng, b));
    purchase.teacher = Some(teacher_name.clone());
    observations.push(purchase);

    let mut next_class = start + rng.random_range(gap_lo..=gap_hi) as Day;
    let mut lapse_until: Day = 0;
    let mut attended_yesterday = false;
    for day in start + 1..=end {
        let e_now = e_at(day);
        let shift = e_now - e;
        let in_lapse = day < lapse_until;
        if !in_lapse && rng.random::<f64>() < sigmoid(-4.0 - 0.8 * e_now) {
            lapse_until = day + rng.random_range(7..=21);
        }
        let in_lapse = day < lapse_until;
        let mut attended_today = false;
        if day == end || day == next_class {
            if day == end || (!in_lapse && rng.random::<f64>() < sigmoid(2.0 + e_now)) {
                let mut obs = Observation::new(day, EventKind::ClassSession);
                obs.inclass = Some(
                    INCLASS_LOADINGS
                        .iter()
                        .map(|l| l * (a + shift) + 0.8 * normal(&mut rng))
                        .collect(),
                );
                obs.teacher = Some(teacher_name.clone());
                observations.push(obs);
                attended_today = true;
            } else if rng.random::<f64>() < if in_lapse { 0.3 } else { 0.5 } {
                observations.push(Observation::new(day, EventKind::Reschedule));
            }
            next_class = day + rng.random_range(gap_lo..=gap_hi) as Day;
        } else {
            let p = if attended_yesterday {
                0.25
            } else if in_lapse {
                0.08
            } else {
                0.02
            };
            if rng.random::<f64>() < p {
                let mut reading = outclass_reading(&mut rng, b);
                reading[0] += 0.5 * shift;
                let mut obs = Observation::new(day, EventKind::FollowUp);
                let lean = if in_lapse { -0.5 } else { 0.0 };
                obs.polarity = Some(polarity(reading[0] + lean));
                obs.outclass = Some(reading);
                observations.push(obs);
            }
        }
        attended_yesterday = attended_today;
    }

    // hazard covariates use only events strictly before the day
    let q = teacher_quality[teacher];
    let mut margin = Vec::new();
    let mut days_since_class = Vec::new();
    let mut engagement_trace = Vec::new();
    let mut uniforms = Vec::new();
    let mut last_class = start;
    let mut cursor = 0;
    let mut positive_days: Vec<Day> = Vec::new();
    for day in start + 1..end {
        while cursor < observations.len() && observations[cursor].day < day {
            let o = &observations[cursor];
            if o.kind == EventKind::ClassSession {
                last_class = o.day;
            }
            if o.polarity == Some(1) {
                positive_days.push(o.day);
            }
            cursor += 1;
        }
        let dsl = (day - last_class) as f64;
        let recent = positive_days.iter().filter(|&&d| d >= day - 7).count() as f64;
        margin.push(
            cfg.recency_slope * dsl.min(RECENCY_CAP)
                - cfg.engagement_slope * e_at(day)
                - cfg.follow_up_relief * recent
                - cfg.teacher_effect * q
                + frailty,
        );
        days_since_class.push(dsl);
        engagement_trace.push(e_at(day));
        uniforms.push(rng.random::<f64>());
    }

    Trajectory {
        a,
        b,
        e,
        teacher,
        start,
        end,
        observations,
        margin,
        days_since_class,
        engagement: engagement_trace,
        uniforms,
    }
}

fn realized_rate(trajectories: &[Trajectory], alpha: f64) -> f64 {
    let dropped = trajectories.iter().filter(|t| t.outcome(alpha).is_some()).count();
    dropped as f64 / trajectories.len() as f64
}

/// Finds the hazard intercept whose realized rate is closest to the target.
fn calibrate(trajectories: &[Trajectory], cfg: &SimConfig) -> Result<(f64, f64)> {
    let target = cfg.target_dropout_rate;
    let (mut lo, mut hi) = (-40.0, 10.0);
    let (r_lo, r_hi) = (realized_rate(trajectories, lo), realized_rate(trajectories, hi));
    if r_lo > target + cfg.calibration_tolerance || r_hi < target - cfg.calibration_tolerance {
        return Err(Error::Calibration(format!(
            "target rate {target} unreachable: intercept range [{lo}, {hi}] yields rates [{r_lo:.4}, {r_hi:.4}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if realized_rate(trajectories, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (r_lo, r_hi) = (realized_rate(trajectories, lo), realized_rate(trajectories, hi));
    let (alpha, rate) = if (r_lo - target).abs() <= (r_hi - target).abs() {
        (lo, r_lo)
    } else {
        (hi, r_hi)
    };
    if (rate - target).abs() > cfg.calibration_tolerance {
        return Err(Error::Calibration(format!(
            "closest achievable rate {rate:.4} at intercept {alpha:.4} misses target {target} by more than {}",
            cfg.calibration_tolerance
        )));
    }
    Ok((alpha, rate))
}

/// Simulates a cohort with the intercept calibrated to the target rate.
pub fn generate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut teacher_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    teacher_rng.set_stream(u64::MAX);
    let quality: Vec<f64> = (0..cfg.n_teachers)
        .map(|_| 0.5 * normal(&mut teacher_rng))
        .collect();

    let one = |i: usize| simulate_student(cfg, i, &quality);
    #[cfg(feature = "parallel")]
    let trajectories: Vec<Trajectory> = (0..cfg.n_students).into_par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let trajectories: Vec<Trajectory> = (0..cfg.n_students).map(one).collect();

    let (alpha, rate) = calibrate(&trajectories, cfg)?;
    let schema = SimConfig::schema();
    let width = (cfg.n_students.max(1) - 1).to_string().len().max(4);
    let mut records = Vec::with_capacity(trajectories.len());
    let mut truth = Vec::with_capacity(trajectories.len());
    for (i, t) in trajectories.into_iter().enumerate() {
        let id = format!("s{i:0width$}");
        let outcome = t.outcome(alpha);
        let (observations, status, dropout_day, n_hazard) = match outcome {
            Some(k) => {
                let day = t.start + 1 + k as Day;
                let mut obs: Vec<Observation> =
                    t.observations.into_iter().take_while(|o| o.day < day).collect();
                obs.push(Observation::new(day, EventKind::DropoutEvent));
                (obs, FinalStatus::Dropout, Some(day), k + 1)
            }
            None => (t.observations, FinalStatus::Completion, None, t.margin.len()),
        };
        let record = StudentRecord::new(id.clone(), observations, Some(status), &schema)?;
        records.push(record);
        truth.push(TruthRecord {
            student_id: id,
            class_affinity: t.a,
            service_affinity: t.b,
            engagement: t.e,
            teacher: format!("t{:02}", t.teacher),
            teacher_quality: quality[t.teacher],
            start_day: t.start,
            planned_end_day: t.end,
            dropout_day,
            hazard_start_day: t.start + 1,
            hazard: t.margin[..n_hazard].iter().map(|m| sigmoid(alpha + m)).collect(),
            days_since_class: t.days_since_class[..n_hazard].to_vec(),
            engagement_trace: t.engagement[..n_hazard].to_vec(),
        });
    }
    Ok(SimOutput {
        cohort: Cohort::new(schema, records)?,
        truth,
        alpha,
        realized_dropout_rate: rate,
    })
}
