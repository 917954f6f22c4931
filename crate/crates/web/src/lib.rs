//! wasm-bindgen exports for the demo page in `www/`.
//!
//! Every export returns a JSON string; the page parses it and draws.

use atrisk::augmentation::{pseudo_days, weight_of, Lookback, Weighting};
use atrisk::event_store::{Day, EventKind, Observation, Schema, StudentRecord};
use atrisk::evaluation::{run_arms, Arm, EvalConfig};
use atrisk::features::FeatureSubset;
use atrisk::pipeline::PipelineConfig;
use atrisk::synthgen::{generate, SimConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn to_js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// `{u: [...], linear: [...], convex: [...], concave: [...]}` on `samples`
/// evenly spaced points of [0, 1].
pub fn curves(samples: usize) -> serde_json::Value {
    let n = samples.max(2);
    let u: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut out = json!({ "u": u });
    for g in Weighting::ALL {
        out[g.as_str()] = json!(u.iter().map(|&x| g.evaluate(x)).collect::<Vec<_>>());
    }
    out
}

#[wasm_bindgen]
pub fn weighting_curves(samples: usize) -> String {
    curves(samples).to_string()
}

/// Pseudo positives for one dropout student whose observation days are
/// `days` (comma or space separated, last one is the dropout).
pub fn explore(days: &str, lookback: u32, weighting: &str) -> atrisk::Result<serde_json::Value> {
    let weighting: Weighting = weighting.parse()?;
    let mut parsed = Vec::new();
    for tok in days.split([',', ' ']).filter(|t| !t.trim().is_empty()) {
        let d: Day = tok
            .trim()
            .parse()
            .map_err(|_| atrisk::Error::Config(format!("not a day: '{tok}'")))?;
        parsed.push(d);
    }
    parsed.sort_unstable();
    let Some(&t_n) = parsed.last() else {
        return Err(atrisk::Error::Config("enter at least the dropout day".into()));
    };
    let n = parsed.len();
    let obs = parsed
        .iter()
        .enumerate()
        .map(|(i, &d)| Observation::new(d, if i + 1 == n { EventKind::DropoutEvent } else { EventKind::FollowUp }))
        .collect();
    let rec = StudentRecord::new("demo", obs, None, &Schema::default())?;
    let pairs: Vec<_> = pseudo_days(&rec, lookback)?
        .into_iter()
        .map(|d| Ok(json!({ "day": d, "weight": weight_of(d, t_n, lookback, weighting)? })))
        .collect::<atrisk::Result<_>>()?;
    Ok(json!({
        "observations": parsed,
        "dropout_day": t_n,
        "previous_day": rec.penultimate_day(),
        "pseudo": pairs,
    }))
}

#[wasm_bindgen]
pub fn pseudo_pairs(days: &str, lookback: u32, weighting: &str) -> Result<String, JsError> {
    explore(days, lookback, weighting).map(|v| v.to_string()).map_err(to_js)
}

/// Simulates `students`, trains with no augmentation and with the given
/// lookback/weighting on one split, and reports AUC by horizon for both.
pub fn simulate_and_train(students: usize, seed: u64, lookback: u32, weighting: &str) -> atrisk::Result<serde_json::Value> {
    let weighting: Weighting = weighting.parse()?;
    let sim = generate(&SimConfig {
        n_students: students,
        seed,
        ..SimConfig::default()
    })?;
    let all = FeatureSubset {
        in_class: true,
        out_class: true,
        time: true,
    };
    let arms = [
        Arm {
            lookback: Lookback::None,
            weighting,
            subset: all,
        },
        Arm {
            lookback: Lookback::Days(lookback),
            weighting,
            subset: all,
        },
    ];
    let runs = run_arms(&sim.cohort, &arms, seed, &PipelineConfig::default(), 0.8, &EvalConfig::default())?;
    let series: Vec<_> = runs
        .iter()
        .map(|r| {
            json!({
                "arm": r.arm.label(),
                "deltas": r.report.horizons.iter().map(|c| c.delta).collect::<Vec<_>>(),
                "auc": r.report.horizons.iter().map(|c| c.auc).collect::<Vec<_>>(),
                "mean_auc": r.report.mean_auc(),
            })
        })
        .collect();
    Ok(json!({
        "students": students,
        "dropout_rate": sim.realized_dropout_rate,
        "runs": series,
    }))
}

#[wasm_bindgen]
pub fn horizon_auc(students: usize, seed: u64, lookback: u32, weighting: &str) -> Result<String, JsError> {
    simulate_and_train(students, seed, lookback, weighting)
        .map(|v| v.to_string())
        .map_err(to_js)
}
