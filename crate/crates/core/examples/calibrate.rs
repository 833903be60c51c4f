//! Prints the headline calibration statistics of the shipped default config:
//! per-classifier accuracy, per-system failure rates and the severity curve.
//!
//! Optional arguments override the severity slopes:
//! `cargo run --release --example calibrate -- <slip_per_level> <degradation_per_level>`

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wps_core::env::PickingEnv;
use wps_core::metrics::{histogram, ols_fit, summarize};
use wps_core::qlearning::train;
use wps_core::sim::measure_run;
use wps_core::ExperimentConfig;

/// (system, classifier, severity)
type GroupKey = (String, String, u8);
/// (accuracy, failure rate, score, drawn accuracy)
type RunStats = (f64, f64, f64, f64);

fn main() {
    let mut cfg = ExperimentConfig::default_config();
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if let [slip, degradation] = args[..] {
        cfg.severity_coefficients.slip_per_level = slip;
        cfg.severity_coefficients.degradation_per_level = degradation;
    }

    let started = Instant::now();
    let mut env = PickingEnv::new(cfg.warehouse.clone(), cfg.training.clone()).unwrap();
    let (q, _) = train(&mut env, &cfg.qlearning, &mut ChaCha8Rng::seed_from_u64(cfg.base_seed)).unwrap();

    let mut groups: BTreeMap<GroupKey, Vec<RunStats>> = BTreeMap::new();
    let mut points = Vec::new();
    for spec in cfg.run_plan() {
        let m = measure_run(&spec.sim, &&q).unwrap();
        groups
            .entry((spec.system.clone(), spec.classifier.clone(), spec.severity))
            .or_default()
            .push((
                m.accuracy_pct,
                m.failure_rate_pct,
                m.performance_score,
                m.realized_accuracy,
            ));
        if spec.system == "proposed" && spec.run_id >= 500 {
            points.push((f64::from(spec.severity), m.performance_score));
        }
    }
    println!("elapsed {:?}", started.elapsed());

    for ((system, classifier, severity), rows) in &groups {
        let acc = summarize(&rows.iter().map(|r| r.0).collect::<Vec<_>>()).unwrap();
        let fr: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let frs = summarize(&fr).unwrap();
        let score = summarize(&rows.iter().map(|r| r.2).collect::<Vec<_>>()).unwrap();
        let hist = histogram(&fr, 0.0, 3.5, 0.5).unwrap();
        let drawn = summarize(&rows.iter().map(|r| r.3).collect::<Vec<_>>()).unwrap();
        println!(
            "  drawn accuracy mean {:.3} min {:.2} max {:.2}",
            drawn.mean, drawn.min, drawn.max
        );
        println!(
            "{system:>12} {classifier:>11} sev {severity:>2} n {:>3} | acc {:.2} sd {:.2} | fail {:.3} sd {:.3} {:?} | score {:.3} sd {:.3}",
            acc.n, acc.mean, acc.sd, frs.mean, frs.sd, hist.counts, score.mean, score.sd
        );
    }
    let fit = ols_fit(&points).unwrap();
    println!(
        "severity fit: slope {:.4} at1 {:.4} at10 {:.4} r2 {:.3}",
        fit.slope,
        fit.predict(1.0),
        fit.predict(10.0),
        fit.r_squared
    );
}
