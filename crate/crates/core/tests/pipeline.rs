use std::fs;

use rfprove::bench::{run_ablation_suite, AblationCase};
use rfprove::nn::{load_network, Labeler};
use rfprove::synthetic::{generate_synthetic, SyntheticSpec};
use rfprove::verifier::{run, DeltaMode, Evidence, Mode, VerificationReport};
use rfprove::{AxisBox, MarginLabeler, OutputProperty, VerificationTask};

const DIAGONAL_NET: &str = r#"{
  "input_dim": 2,
  "layers": [
    {"weights": [[1.0, -1.0], [-1.0, 1.0]], "bias": [0.0, 0.0], "activation": "relu"},
    {"weights": [[1.0, 0.0], [0.0, 1.0]], "bias": [0.0, 0.0], "activation": "linear"}
  ]
}"#;

fn diagonal_task() -> VerificationTask {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    fs::write(&path, DIAGONAL_NET).unwrap();
    let net = load_network(&path).unwrap();
    let property = OutputProperty::dominates(2, 0, &[1]).unwrap();
    let labeler = MarginLabeler::new(net, property).unwrap();
    let region = AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let mut task = VerificationTask::new(labeler, region);
    task.m = 5000;
    task.k = 4000;
    task.forest.n_trees = 60;
    task
}

#[test]
fn loaded_network_end_to_end() {
    let task = diagonal_task();
    assert!(task.labeler.label(&[0.5, -0.5]).unwrap());
    assert!(!task.labeler.label(&[-0.5, 0.5]).unwrap());

    let report = run(&task, 21).unwrap();
    assert!(report.coverage_met, "{:?}", report.warnings);
    assert!(report.coverage_estimate >= 0.75);
    assert!(report.error_estimate <= 0.01);
    assert_eq!(report.coverage_trace.len(), report.trees_used);
    for b in &report.boxes {
        assert!(task.region.contains_box(b).unwrap());
        // corners sit on the 1/32 grid of [-1, 1]
        for v in b.lower().iter().chain(b.upper()) {
            let k = (v + 1.0) / 2.0 * 32.0;
            assert_eq!(k.fract(), 0.0);
        }
    }
    let c = &report.certificate;
    assert_eq!(c.n_per_box, 1379);
    assert!(c.confidence_per_box >= 0.999);
    assert!(!c.budget_exhausted);
    assert!(c.union_volume_fraction > 0.3);
}

#[test]
fn report_round_trips_through_json_and_csv() {
    let report = run(&diagonal_task(), 3).unwrap();
    let back: VerificationReport = serde_json::from_str(&report.to_json_string()).unwrap();
    assert_eq!(back, report);
    let mut out = Vec::new();
    report.write_boxes_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "lower_0,lower_1,upper_0,upper_1");
    assert_eq!(lines.count(), report.boxes.len());
}

#[test]
fn seeds_change_results_and_reruns_do_not() {
    let task = diagonal_task();
    let a = run(&task, 1).unwrap();
    let b = run(&task, 1).unwrap();
    let c = run(&task, 2).unwrap();
    assert_eq!(a.canonical_json(), b.canonical_json());
    assert_ne!(a.canonical_json(), c.canonical_json());
}

#[test]
fn bonferroni_mode_resamples_more() {
    let mut task = diagonal_task();
    task.m = 1000;
    let per_box = run(&task, 4).unwrap();
    task.options.delta_mode = DeltaMode::Bonferroni;
    let joint = run(&task, 4).unwrap();
    assert!(joint.certificate.n_per_box > per_box.certificate.n_per_box);
    assert!(joint.certificate.delta_per_box < per_box.certificate.delta_per_box);
    let resampled = joint.acceptances.iter().filter(|a| a.evidence == Evidence::Resampled);
    for a in resampled {
        assert_eq!(a.resamples, joint.certificate.n_per_box);
    }
}

#[test]
fn unreachable_target_reports_a_warning() {
    let mut task = diagonal_task();
    task.forest.n_trees = 3;
    task.params.coverage_target = 1.0;
    let r = run(&task, 9).unwrap();
    assert!(!r.coverage_met);
    assert_eq!(r.trees_used, 3);
    assert!(r.warnings.iter().any(|w| w.contains("not reached")));
}

#[test]
fn ablation_suite_on_noisy_box() {
    let synth = generate_synthetic(&SyntheticSpec::noisy_box2d(), 1).unwrap();
    let mut task = synth.task;
    task.m = 2000;
    task.params.purity = 0.9;
    task.params.delta = 0.05;
    let cases = [AblationCase {
        name: "noisy_box".into(),
        task,
        truth: Some(synth.truth),
    }];
    let table = run_ablation_suite(&cases, &[0, 1, 2], &[Mode::Verify, Mode::NoFilter, Mode::SingleTree]).unwrap();
    assert_eq!(table.rows.len(), 9);
    let filtered = table.mean_for("noisy_box", Mode::Verify).unwrap();
    let unfiltered = table.mean_for("noisy_box", Mode::NoFilter).unwrap();
    assert_eq!(filtered.runs, 3);
    assert!(filtered.error <= unfiltered.error);
    assert!(filtered.coverage > 0.7);
}
