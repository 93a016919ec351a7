//! Acceptance criteria 1–8. Each test writes one PASS/FAIL line straight to
//! stderr (bypassing output capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use objdisc_core::selfcheck::{self, SuiteResult};
use objdisc_core::toy::{run_toy_experiment, TrainConfig};

const SEED: u64 = 0;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const PCA_BUDGET: Duration = Duration::from_secs(10);
const WEAK_LABEL_BUDGET: Duration = Duration::from_secs(10);
const TOY_BUDGET: Duration = Duration::from_secs(600);
const TOY_HELDOUT: usize = 64;
const TOY_MIN_IOU: f64 = 0.70;
const TOY_MIN_GAIN: f64 = 0.15;

fn report(criterion: u32, passed: bool, line: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] criterion {criterion}: {status} {line}");
}

fn check_suite(criterion: u32, result: SuiteResult, budget: Option<Duration>) {
    let in_time = budget.is_none_or(|b| result.elapsed < b);
    let mut line = format!("{} ({:.2}s): {}", result.name, result.elapsed.as_secs_f64(), result.detail);
    if let Some(b) = budget {
        line.push_str(&format!(" [budget {}s]", b.as_secs()));
    }
    let passed = result.passed && in_time;
    report(criterion, passed, &line);
    assert!(result.passed, "{line}");
    assert!(in_time, "over budget: {line}");
}

#[test]
fn criterion_1_gradient_fidelity() {
    check_suite(1, selfcheck::gradient_suite(SEED), Some(GRADIENT_BUDGET));
}

#[test]
fn criterion_2_pca_oracle() {
    check_suite(2, selfcheck::pca_suite(SEED), Some(PCA_BUDGET));
}

#[test]
fn criterion_3_weak_label_oracle() {
    check_suite(3, selfcheck::weak_label_suite(SEED), Some(WEAK_LABEL_BUDGET));
}

#[test]
fn criterion_4_bounding_boxes() {
    check_suite(4, selfcheck::boxes_suite(SEED), None);
}

#[test]
fn criterion_5_metrics() {
    check_suite(5, selfcheck::metrics_suite(SEED), None);
}

#[test]
fn criterion_6_toy_experiment() {
    let cfg = TrainConfig::default();
    let start = Instant::now();
    let outcome = run_toy_experiment(&cfg, TOY_HELDOUT);
    let elapsed = start.elapsed();
    let r = match outcome {
        Ok(r) => r,
        Err(e) => {
            report(6, false, &format!("training failed: {e}"));
            panic!("training failed: {e}");
        }
    };
    let (first, last) = r.trace_ends(5);
    let checks = [
        r.trained_iou >= TOY_MIN_IOU,
        r.trained_iou >= r.baseline_iou + TOY_MIN_GAIN,
        last < first,
        elapsed < TOY_BUDGET,
    ];
    let line = format!(
        "end-to-end toy ({:.1}s): held-out IoU {:.4} (need ≥ {TOY_MIN_IOU}), baseline {:.4} (need gain ≥ {TOY_MIN_GAIN}), \
         loss first-5 mean {first:.4} → last-5 mean {last:.4} [budget {}s]",
        elapsed.as_secs_f64(),
        r.trained_iou,
        r.baseline_iou,
        TOY_BUDGET.as_secs()
    );
    let passed = checks.iter().all(|&c| c);
    report(6, passed, &line);
    assert!(passed, "{line}");
}

#[test]
fn criterion_7_video_fusion() {
    check_suite(7, selfcheck::video_suite(SEED), None);
}

#[test]
fn criterion_8_formats() {
    check_suite(8, selfcheck::formats_suite(SEED), None);
}
