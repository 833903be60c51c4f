//! Groups run records into the layouts of the reference tables and feeds
//! the comparison layer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::{
    compare_to_reference, fraction_below, histogram, ols_fit, sign_test_p, summarize, ComparisonRow, Histogram,
    ReferenceAggregates, RegressionFit, RunRecord, SummaryStats,
};

pub const HIST_LO: f64 = 0.0;
pub const HIST_HI: f64 = 3.5;
pub const HIST_BIN_WIDTH: f64 = 0.5;

/// Which system and classifier labels play which part in the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisRoles {
    /// Fault-free system whose runs measure classifier accuracy.
    pub accuracy_system: String,
    pub proposed: String,
    pub baseline: String,
    /// Classifier used for the reliability and severity comparisons.
    pub classifier: String,
}

impl Default for AnalysisRoles {
    fn default() -> Self {
        Self {
            accuracy_system: "vision-bench".into(),
            proposed: "proposed".into(),
            baseline: "industry".into(),
            classifier: "CNN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub system: String,
    pub classifier: String,
    pub severity: u8,
    pub n: usize,
    pub accuracy_pct: SummaryStats,
    pub failure_rate_pct: SummaryStats,
    pub performance_score: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub classifier: String,
    pub accuracy_pct: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub proposed: Option<SummaryStats>,
    pub baseline: Option<SummaryStats>,
    /// Fraction of (proposed, baseline) run pairs where proposed is lower.
    pub disjoint_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityRow {
    pub severity: u8,
    pub performance_score: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureHistograms {
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
    pub proposed: Option<Histogram>,
    pub baseline: Option<Histogram>,
    pub proposed_modal_bin: Option<[f64; 2]>,
    pub baseline_modal_bin: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    /// Fit over every (severity, score) run.
    pub run_level: Option<RegressionFit>,
    /// Fit over per-level mean scores.
    pub level_means: Option<RegressionFit>,
}

/// Replicates at consecutive severity levels paired by replicate index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub pairs: u64,
    pub decreasing: u64,
    pub increasing: u64,
    pub ties: u64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_runs: usize,
    pub roles: AnalysisRoles,
    pub groups: Vec<GroupSummary>,
    pub table1: Vec<AccuracyRow>,
    pub table2: ReliabilityTable,
    pub table3: Vec<SeverityRow>,
    pub table4: FailureHistograms,
    pub table5: RegressionTable,
    pub sign_test: SignTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub summary: Summary,
    pub comparison: Vec<ComparisonRow>,
}

fn stats(values: &[f64]) -> Option<SummaryStats> {
    summarize(values).ok()
}

fn classifier_rank(name: &str) -> (usize, &str) {
    let pos = ["CNN", "RNN", "Traditional"].iter().position(|c| *c == name);
    (pos.unwrap_or(usize::MAX), name)
}

fn modal_range(h: &Option<Histogram>) -> Option<[f64; 2]> {
    let h = h.as_ref()?;
    let (lo, hi) = h.bin_range(h.modal_bin()?);
    Some([lo, hi])
}

pub fn analyze(records: &[RunRecord], roles: &AnalysisRoles) -> Analysis {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.run_id);

    let mut grouped: BTreeMap<(String, String, u8), Vec<&RunRecord>> = BTreeMap::new();
    for r in &sorted {
        grouped
            .entry((r.system.clone(), r.classifier.clone(), r.severity))
            .or_default()
            .push(r);
    }
    let column = |rows: &[&RunRecord], f: fn(&RunRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();

    let groups: Vec<GroupSummary> = grouped
        .iter()
        .map(|((system, classifier, severity), rows)| GroupSummary {
            system: system.clone(),
            classifier: classifier.clone(),
            severity: *severity,
            n: rows.len(),
            accuracy_pct: summarize(&column(rows, |r| r.accuracy_pct)).expect("non-empty group"),
            failure_rate_pct: summarize(&column(rows, |r| r.failure_rate_pct)).expect("non-empty group"),
            performance_score: summarize(&column(rows, |r| r.performance_score)).expect("non-empty group"),
        })
        .collect();

    let mut table1: Vec<AccuracyRow> = grouped
        .iter()
        .filter(|((system, _, severity), _)| *system == roles.accuracy_system && *severity == 1)
        .map(|((_, classifier, _), rows)| AccuracyRow {
            classifier: classifier.clone(),
            accuracy_pct: summarize(&column(rows, |r| r.accuracy_pct)).expect("non-empty group"),
        })
        .collect();
    table1.sort_by(|a, b| classifier_rank(&a.classifier).cmp(&classifier_rank(&b.classifier)));

    let failure_rates = |system: &str| -> Vec<f64> {
        grouped
            .get(&(system.to_string(), roles.classifier.clone(), 1))
            .map(|rows| column(rows, |r| r.failure_rate_pct))
            .unwrap_or_default()
    };
    let proposed_fr = failure_rates(&roles.proposed);
    let baseline_fr = failure_rates(&roles.baseline);
    let table2 = ReliabilityTable {
        proposed: stats(&proposed_fr),
        baseline: stats(&baseline_fr),
        disjoint_fraction: fraction_below(&proposed_fr, &baseline_fr),
    };

    let hist = |samples: &[f64]| {
        (!samples.is_empty()).then(|| histogram(samples, HIST_LO, HIST_HI, HIST_BIN_WIDTH).expect("fixed bins"))
    };
    let proposed_hist = hist(&proposed_fr);
    let baseline_hist = hist(&baseline_fr);
    let table4 = FailureHistograms {
        lo: HIST_LO,
        hi: HIST_HI,
        bin_width: HIST_BIN_WIDTH,
        proposed_modal_bin: modal_range(&proposed_hist),
        baseline_modal_bin: modal_range(&baseline_hist),
        proposed: proposed_hist,
        baseline: baseline_hist,
    };

    let by_level: BTreeMap<u8, Vec<f64>> = grouped
        .iter()
        .filter(|((system, classifier, _), _)| *system == roles.proposed && *classifier == roles.classifier)
        .map(|((_, _, severity), rows)| (*severity, column(rows, |r| r.performance_score)))
        .collect();
    let table3: Vec<SeverityRow> = by_level
        .iter()
        .map(|(&severity, scores)| SeverityRow {
            severity,
            performance_score: summarize(scores).expect("non-empty group"),
        })
        .collect();

    let points: Vec<(f64, f64)> = by_level
        .iter()
        .flat_map(|(&k, scores)| scores.iter().map(move |&s| (f64::from(k), s)))
        .collect();
    let means: Vec<(f64, f64)> = table3
        .iter()
        .map(|row| (f64::from(row.severity), row.performance_score.mean))
        .collect();
    let table5 = RegressionTable {
        run_level: ols_fit(&points).ok(),
        level_means: ols_fit(&means).ok(),
    };

    let mut sign = SignTest {
        pairs: 0,
        decreasing: 0,
        increasing: 0,
        ties: 0,
        p_value: None,
    };
    let levels: Vec<&Vec<f64>> = by_level.values().collect();
    for w in levels.windows(2) {
        for (a, b) in w[0].iter().zip(w[1]) {
            sign.pairs += 1;
            match a.partial_cmp(b) {
                Some(std::cmp::Ordering::Greater) => sign.decreasing += 1,
                Some(std::cmp::Ordering::Less) => sign.increasing += 1,
                _ => sign.ties += 1,
            }
        }
    }
    if sign.pairs > 0 {
        sign.p_value = Some(sign_test_p(sign.decreasing, sign.increasing));
    }

    let aggregates = ReferenceAggregates {
        accuracy_means: table1
            .iter()
            .map(|row| (row.classifier.clone(), Some(row.accuracy_pct.mean)))
            .collect(),
        proposed_failure_mean: table2.proposed.map(|s| s.mean),
        baseline_failure_mean: table2.baseline.map(|s| s.mean),
        disjoint_fraction: table2.disjoint_fraction,
        proposed_modal_lo: table4.proposed_modal_bin.map(|b| b[0]),
        baseline_modal_lo: table4.baseline_modal_bin.map(|b| b[0]),
        regression: table5.run_level,
        sign_test_p: sign.p_value,
    };

    Analysis {
        summary: Summary {
            n_runs: records.len(),
            roles: roles.clone(),
            groups,
            table1,
            table2,
            table3,
            table4,
            table5,
            sign_test: sign,
        },
        comparison: compare_to_reference(&aggregates),
    }
}
