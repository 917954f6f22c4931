use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use atrisk::augmentation::{AugmentationConfig, Lookback};
use atrisk::evaluation::{
    evaluate_horizons, fingerprint, flag_count, grid, run_sweep, split_by_student, EvalConfig, EvalReport,
    SweepConfig, SweepReport,
};
use atrisk::event_store::{cohort_stats, ingest};
use atrisk::features::{FeatureSubset, Featurizer, TeacherHistoryIndex};
use atrisk::labeling::TrainingPair;
use atrisk::pipeline::{pair_sets, train, ModelSpec, PipelineConfig, TrainedPipeline};
use atrisk::synthgen::{generate, SimConfig};
use atrisk::trainer::GbdtConfig;
use atrisk::{Cohort, Error, FinalStatus, Result};
use serde_json::json;

use crate::output::{csv_field, Artifact, RunManifest, Staged};
use crate::{ArmArgs, Command, EvalArgs, InputArgs, ModelKind};

pub fn run(command: Command, argv: &[String]) -> Result<Vec<PathBuf>> {
    match command {
        Command::Simulate(a) => simulate(a, argv),
        Command::Featurize(a) => featurize(a, argv),
        Command::Train(a) => train_cmd(a, argv),
        Command::Predict(a) => predict(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Sweep(a) => sweep(a, argv),
    }
}

fn manifest(subcommand: &'static str, argv: &[String], seed: Option<u64>) -> RunManifest {
    RunManifest {
        tool: "atrisk",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        argv: argv.to_vec(),
        seed,
        config: serde_json::Value::Null,
        inputs: Vec::new(),
        outputs: Vec::new(),
        summary: serde_json::Value::Null,
    }
}

fn load(input: &InputArgs) -> Result<(Cohort, Vec<Artifact>)> {
    let cohort = ingest(&input.events, &input.schema)?;
    if cohort.is_empty() {
        return Err(Error::EmptyInput(format!("{} holds no events", input.events.display())));
    }
    let inputs = vec![Artifact::of_file(&input.events)?, Artifact::of_file(&input.schema)?];
    Ok((cohort, inputs))
}

fn load_model(path: &Path) -> Result<(TrainedPipeline, Artifact)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok((TrainedPipeline::from_json(&text)?, Artifact::of_file(path)?))
}

fn check_schema(pipeline: &TrainedPipeline, cohort: &Cohort) -> Result<()> {
    let f = &pipeline.featurizer;
    let in_ok = f
        .pca
        .as_ref()
        .is_none_or(|p| p.mean.len() == cohort.schema.inclass_width());
    let out_ok = !f.subset.out_class || f.outclass_columns == cohort.schema.outclass_columns;
    if in_ok && out_ok {
        Ok(())
    } else {
        Err(Error::Schema("event schema does not match the one the model was trained on".into()))
    }
}

fn augmentation(arm: &ArmArgs) -> AugmentationConfig {
    AugmentationConfig {
        lookback: arm.lookback,
        weighting: arm.weighting,
    }
}

fn eval_config(e: &EvalArgs) -> Result<EvalConfig> {
    if !(e.recall_fraction > 0.0 && e.recall_fraction <= 1.0) {
        return Err(Error::Config(format!("recall fraction {} outside (0, 1]", e.recall_fraction)));
    }
    Ok(EvalConfig {
        deltas: e.deltas.0.clone(),
        query_points: e.query_points.into(),
        recall_fractions: vec![e.recall_fraction],
        recall_deltas: e.recall_deltas.0.clone(),
    })
}

fn simulate(a: crate::SimulateArgs, argv: &[String]) -> Result<Vec<PathBuf>> {
    let cfg = SimConfig {
        n_students: a.students,
        target_dropout_rate: a.dropout_rate,
        mean_span_days: a.mean_span,
        seed: a.seed,
        ..SimConfig::default()
    };
    let sim = generate(&cfg)?;
    let mut staged = Staged::new(&a.out_dir);
    let mut events = Vec::new();
    sim.cohort.write_events(&mut events).expect("in-memory write");
    let mut truth = Vec::new();
    sim.write_truth(&mut truth).expect("in-memory write");
    staged.add("events.jsonl", events);
    staged.add_json("schema.json", &sim.cohort.schema);
    staged.add("truth.jsonl", truth);

    let mut m = manifest("simulate", argv, Some(a.seed));
    m.config = json!(cfg);
    m.summary = json!({
        "cohort": cohort_stats(&sim.cohort)?,
        "hazard_intercept": sim.alpha,
    });
    staged.commit(m)
}

fn pairs_csv(rows: &[&TrainingPair]) -> Vec<u8> {
    let mut out = String::from("student_id,day,label,weight,provenance\n");
    for p in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&p.student_id),
            p.day,
            p.label,
            p.weight,
            p.provenance
        );
    }
    out.into_bytes()
}

fn features_csv(names: &[String], rows: &[&TrainingPair]) -> Vec<u8> {
    let mut out = String::from("student_id,day");
    for n in names {
        out.push(',');
        out.push_str(&csv_field(n));
    }
    out.push('\n');
    for p in rows {
        let _ = write!(out, "{},{}", csv_field(&p.student_id), p.day);
        for v in &p.features.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn featurize(a: crate::FeaturizeArgs, argv: &[String]) -> Result<Vec<PathBuf>> {
    let (cohort, inputs) = load(&a.input)?;
    let cfg = PipelineConfig {
        subset: a.arm.features,
        augmentation: augmentation(&a.arm),
        ..PipelineConfig::default()
    };
    let featurizer = Featurizer::fit(&cohort, cfg.features.clone(), cfg.subset)?;
    let hist = TeacherHistoryIndex::build(&cohort);
    let sets = pair_sets(&cohort, &featurizer, &hist, &cfg.augmentation)?;
    let mut rows: Vec<&TrainingPair> = sets
        .positives
        .iter()
        .chain(&sets.negatives)
        .chain(&sets.pseudo)
        .collect();
    rows.sort_by(|x, y| (&x.student_id, x.day, x.provenance).cmp(&(&y.student_id, y.day, y.provenance)));

    let mut staged = Staged::new(&a.out_dir);
    staged.add("features.csv", features_csv(&featurizer.names(), &rows));
    staged.add("pairs.csv", pairs_csv(&rows));
    let mut m = manifest("featurize", argv, None);
    m.config = json!(cfg);
    m.inputs = inputs;
    m.summary = json!({
        "original_positive": sets.positives.len(),
        "original_negative": sets.negatives.len(),
        "pseudo_positive": sets.pseudo.len(),
        "width": featurizer.width(),
    });
    staged.commit(m)
}

fn train_cmd(a: crate::TrainArgs, argv: &[String]) -> Result<Vec<PathBuf>> {
    let model = match a.model {
        ModelKind::Gbdt => {
            let g = GbdtConfig {
                n_trees: a.trees,
                max_depth: a.max_depth,
                learning_rate: a.learning_rate,
                min_child_weight: a.min_child_weight,
                l2_leaf_reg: a.l2_leaf_reg,
            };
            g.validate()?;
            ModelSpec::Gbdt(g)
        }
        ModelKind::Logistic => ModelSpec::Logistic {
            epochs: 300,
            step: 0.5,
        },
    };
    let mut cfg = PipelineConfig {
        subset: a.arm.features,
        augmentation: augmentation(&a.arm),
        model,
        ..PipelineConfig::default()
    };
    cfg.sampler.seed = a.seed;
    let (cohort, inputs) = load(&a.input)?;
    let (train_ids, test_ids) = split_by_student(&cohort, a.train_fraction, a.seed)?;
    let train_cohort = cohort.subset(train_ids.iter().map(String::as_str));
    let hist = TeacherHistoryIndex::build(&cohort);
    let (pipeline, summary) = train(&train_cohort, &hist, &cfg)?;

    let mut staged = Staged::new(&a.out_dir);
    staged.add("model.json", pipeline.to_json().into_bytes());
    let mut m = manifest("train", argv, Some(a.seed));
    m.config = json!({ "pipeline": cfg, "train_fraction": a.train_fraction });
    m.inputs = inputs;
    m.summary = json!({
        "training": summary,
        "train_ids": train_ids,
        "test_ids": test_ids,
    });
    staged.commit(m)
}

fn predict(a: crate::PredictArgs, argv: &[String]) -> Result<Vec<PathBuf>> {
    if !(a.top_fraction > 0.0 && a.top_fraction <= 1.0) {
        return Err(Error::Config(format!("top fraction {} outside (0, 1]", a.top_fraction)));
    }
    let (pipeline, model_artifact) = load_model(&a.model)?;
    let (cohort, mut inputs) = load(&a.input)?;
    inputs.push(model_artifact);
    check_schema(&pipeline, &cohort)?;
    let hist = TeacherHistoryIndex::build(&cohort);

    let targets: Vec<(&str, i64)> = cohort
        .students()
        .filter_map(|r| match a.day {
            Some(d) => {
                let active = r.first_day() <= d
                    && (r.final_status == FinalStatus::Ongoing || d < r.last_day());
                active.then_some((r.student_id.as_str(), d))
            }
            None => (r.final_status == FinalStatus::Ongoing).then_some((r.student_id.as_str(), r.last_day())),
        })
        .collect();
    if targets.is_empty() {
        return Err(Error::EmptyInput(match a.day {
            Some(d) => format!("no student is active on day {d}"),
            None => "no ongoing students; pass --day to score students active on a given day".into(),
        }));
    }
    let mut scored = Vec::with_capacity(targets.len());
    for (id, day) in targets {
        let rec = cohort.get(id).expect("id from this cohort");
        scored.push((id, day, pipeline.score(rec, day, &hist)?));
    }
    scored.sort_by(|x, y| y.2.total_cmp(&x.2).then_with(|| x.0.cmp(y.0)));
    let k = flag_count(scored.len(), a.top_fraction);

    let mut csv = String::from("rank,student_id,day,probability,flagged\n");
    for (i, (id, day, p)) in scored.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{day},{p},{}", i + 1, csv_field(id), u8::from(i < k));
    }
    let mut staged = Staged::new(&a.out_dir);
    staged.add("predictions.csv", csv.into_bytes());
    let mut m = manifest("predict", argv, None);
    m.config = json!({ "day": a.day, "top_fraction": a.top_fraction });
    m.inputs = inputs;
    m.summary = json!({ "scored": scored.len(), "flagged": k });
    staged.commit(m)
}

fn test_ids_from(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    v["summary"]["test_ids"]
        .as_array()
        .and_then(|ids| ids.iter().map(|x| x.as_str().map(str::to_string)).collect())
        .ok_or_else(|| Error::Data(format!("{} has no test_ids; is it a train manifest?", path.display())))
}

fn eval_csv(report: &EvalReport) -> Vec<u8> {
    let mut out = String::from("delta,auc,queries,positives\n");
    for c in &report.horizons {
        let auc = c.auc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{auc},{},{}", c.delta, c.queries, c.positives);
    }
    out.into_bytes()
}

fn evaluate(a: crate::EvaluateArgs, argv: &[String]) -> Result<Vec<PathBuf>> {
    let eval = eval_config(&a.eval)?;
    let (pipeline, model_artifact) = load_model(&a.model)?;
    let (cohort, mut inputs) = load(&a.input)?;
    check_schema(&pipeline, &cohort)?;
    let test_cohort = match &a.split {
        Some(path) => {
            let ids = test_ids_from(path)?;
            inputs.push(Artifact::of_file(path)?);
            let missing: Vec<&String> = ids.iter().filter(|id| cohort.get(id).is_none()).collect();
            if !missing.is_empty() {
                return Err(Error::Data(format!(
                    "{} held-out students are not in the event log (first: {})",
                    missing.len(),
                    missing[0]
                )));
            }
            cohort.subset(ids.iter().map(String::as_str))
        }
        None => cohort.clone(),
    };
    let tag = json!({
        "model": model_artifact.sha256,
        "students": test_cohort.ids().collect::<Vec<_>>(),
        "eval": eval,
    });
    inputs.push(model_artifact);
    let hist = TeacherHistoryIndex::build(&cohort);
    let report = evaluate_horizons(&pipeline, &test_cohort, &hist, &eval, fingerprint(tag.to_string().as_bytes()))?;
    if report.horizons.iter().all(|c| c.auc.is_none()) {
        return Err(Error::UndefinedMetric(
            "no horizon has both classes among the evaluated students".into(),
        ));
    }

    let mut staged = Staged::new(&a.out_dir);
    staged.add_json("report.json", &report);
    staged.add("report.csv", eval_csv(&report));
    let mut m = manifest("evaluate", argv, None);
    m.config = json!(eval);
    m.inputs = inputs;
    m.summary = json!({
        "students": test_cohort.len(),
        "mean_auc": report.mean_auc(),
    });
    staged.commit(m)
}

fn parse_subsets(s: &str) -> Result<Vec<FeatureSubset>> {
    if s.trim().eq_ignore_ascii_case("ablation") {
        return Ok(FeatureSubset::ablation_arms());
    }
    let mut out: Vec<FeatureSubset> = Vec::new();
    for part in s.split(',') {
        let subset: FeatureSubset = part.parse()?;
        if !out.contains(&subset) {
            out.push(subset);
        }
    }
    Ok(out)
}

fn sweep_csv(report: &SweepReport) -> Vec<u8> {
    let mut out = String::from("lookback,weighting,features,delta,mean_auc,std_auc,seeds\n");
    for c in &report.cells {
        let weighting = match c.arm.lookback {
            Lookback::None => String::new(),
            Lookback::Days(_) => c.arm.weighting.to_string(),
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{weighting},{},{},{},{},{}",
            c.arm.lookback,
            c.arm.subset,
            c.delta,
            opt(c.mean_auc),
            opt(c.std_auc),
            c.seeds
        );
    }
    out.into_bytes()
}

fn sweep(a: crate::SweepArgs, argv: &[String]) -> Result<Vec<PathBuf>> {
    let eval = eval_config(&a.eval)?;
    let subsets = parse_subsets(&a.features)?;
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    if (1..a.lookback.len()).any(|i| a.lookback[..i].contains(&a.lookback[i])) {
        return Err(Error::Config("repeated --lookback value".into()));
    }
    let (cohort, inputs) = load(&a.input)?;
    let cfg = SweepConfig {
        base: PipelineConfig::default(),
        arms: grid(&a.lookback, &a.weighting, &subsets),
        seeds: (a.seed..a.seed + a.seeds).collect(),
        train_fraction: a.train_fraction,
        eval,
    };
    let report = run_sweep(&cohort, &cfg)?;

    let mut staged = Staged::new(&a.out_dir);
    staged.add_json("report.json", &report);
    staged.add("report.csv", sweep_csv(&report));
    let mut m = manifest("sweep", argv, Some(a.seed));
    m.config = json!(cfg);
    m.inputs = inputs;
    m.summary = json!({ "arms": cfg.arms.len(), "runs": report.runs.len() });
    staged.commit(m)
}
