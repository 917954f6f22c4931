mod common;

use atrisk::augmentation::{AugmentationConfig, Lookback, Weighting};
use atrisk::evaluation::{evaluate_horizons, split_by_student, EvalConfig};
use atrisk::features::TeacherHistoryIndex;
use atrisk::pipeline::{train, Model, PipelineConfig, TrainedPipeline};
use atrisk::synthgen::{generate, SimConfig};
use atrisk::trainer::{fit_gbdt, Dataset, GbdtConfig, Node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_sim(seed: u64) -> atrisk::synthgen::SimOutput {
    generate(&SimConfig {
        n_students: 120,
        seed,
        ..SimConfig::default()
    })
    .unwrap()
}

#[test]
fn duplicated_data_gives_the_same_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..3).map(|_| rng.random_range(0..6) as f64).collect())
        .collect();
    let labels: Vec<f64> = rows.iter().map(|r| ((r[0] + r[1] > 5.0) as u8) as f64).collect();
    let cfg = GbdtConfig {
        n_trees: 8,
        max_depth: 3,
        learning_rate: 0.3,
        min_child_weight: 0.0,
        l2_leaf_reg: 0.0,
    };
    let once = fit_gbdt(&Dataset::from_rows(&rows, labels.clone(), vec![1.0; 80], None).unwrap(), &cfg).unwrap();
    let rows2: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
    let labels2: Vec<f64> = labels.iter().chain(&labels).copied().collect();
    let twice = fit_gbdt(&Dataset::from_rows(&rows2, labels2, vec![1.0; 160], None).unwrap(), &cfg).unwrap();

    assert!((once.base_score - twice.base_score).abs() <= 1e-12);
    assert_eq!(once.trees.len(), twice.trees.len());
    for (a, b) in once.trees.iter().zip(&twice.trees) {
        assert_eq!(a.nodes.len(), b.nodes.len());
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            match (x, y) {
                (
                    Node::Split { feature: f1, threshold: t1, left: l1, right: r1 },
                    Node::Split { feature: f2, threshold: t2, left: l2, right: r2 },
                ) => assert_eq!((f1, t1, l1, r1), (f2, t2, l2, r2)),
                (Node::Leaf { value: v1 }, Node::Leaf { value: v2 }) => assert!((v1 - v2).abs() <= 1e-12),
                _ => panic!("tree shapes differ"),
            }
        }
    }
}

#[test]
fn trained_pipeline_survives_json() {
    let sim = small_sim(2);
    let hist = TeacherHistoryIndex::build(&sim.cohort);
    let (p, summary) = train(&sim.cohort, &hist, &PipelineConfig::default()).unwrap();
    assert!(summary.pseudo_positive > 0);
    assert_eq!(summary.rows, summary.original_negative + summary.positive_draws);
    let back = TrainedPipeline::from_json(&p.to_json()).unwrap();
    assert_eq!(back.to_json(), p.to_json());
    for s in sim.cohort.students().take(20) {
        for day in s.first_day()..s.last_day() {
            let a = p.score(s, day, &hist).unwrap();
            let b = back.score(s, day, &hist).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            assert!(a > 0.0 && a < 1.0);
        }
    }
}

#[test]
fn no_lookback_means_no_pseudo_pairs() {
    let sim = small_sim(3);
    let hist = TeacherHistoryIndex::build(&sim.cohort);
    let cfg = PipelineConfig {
        augmentation: AugmentationConfig {
            lookback: Lookback::None,
            weighting: Weighting::Convex,
        },
        ..PipelineConfig::default()
    };
    let (_, summary) = train(&sim.cohort, &hist, &cfg).unwrap();
    assert_eq!(summary.pseudo_positive, 0);
    assert!(summary.original_positive > 0);
}

#[test]
fn mismatched_model_file_is_rejected() {
    let sim = small_sim(4);
    let hist = TeacherHistoryIndex::build(&sim.cohort);
    let (p, _) = train(&sim.cohort, &hist, &PipelineConfig::default()).unwrap();
    let mut broken = p.clone();
    if let Model::Gbdt(m) = &mut broken.model {
        m.feature_names.pop();
    }
    assert!(TrainedPipeline::from_json(&broken.to_json()).is_err());
    let text = p.to_json().replace("\"format_version\": 1", "\"format_version\": 99");
    assert!(TrainedPipeline::from_json(&text).is_err());
}

#[test]
fn held_out_students_get_a_full_report() {
    let sim = small_sim(6);
    let hist = TeacherHistoryIndex::build(&sim.cohort);
    let (train_ids, test_ids) = split_by_student(&sim.cohort, 0.7, 6).unwrap();
    let tr = sim.cohort.subset(train_ids.iter().map(String::as_str));
    let te = sim.cohort.subset(test_ids.iter().map(String::as_str));
    let (p, _) = train(&tr, &hist, &PipelineConfig::default()).unwrap();
    let report = evaluate_horizons(&p, &te, &hist, &EvalConfig::default(), "x".into()).unwrap();
    assert_eq!(report.horizons.len(), 14);
    for cell in &report.horizons {
        assert!(cell.queries > 0);
        if let Some(a) = cell.auc {
            assert!((0.0..=1.0).contains(&a));
        }
    }
    let r = report.pooled_recall(0.3, 1).unwrap();
    assert!((0.0..=1.0).contains(&r));
}
