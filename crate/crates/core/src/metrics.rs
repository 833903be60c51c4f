//! Statistics over run records: summaries, fixed-width histograms, ordinary
//! least squares, a sign test, and the claim-checking comparison table.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    Empty,
    #[error("histogram requires lo < hi, got [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("bin width must be positive, got {0}")]
    BadWidth(f64),
    #[error("bin width {width} does not divide [{lo}, {hi}]")]
    WidthMismatch { lo: f64, hi: f64, width: f64 },
    #[error("regression needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("regression needs at least 2 distinct x values")]
    DegenerateX,
    #[error("constant y with non-zero residual")]
    UndefinedRSquared,
}

/// One replicate's condition labels and measured metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub system: String,
    pub classifier: String,
    pub severity: u8,
    pub seed: u64,
    pub accuracy_pct: f64,
    pub failure_rate_pct: f64,
    pub performance_score: f64,
    pub steps: u64,
    pub orders_completed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample sd (n - 1 denominator); 0 when `n == 1`.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// False when `n < 2` and `sd` carries no information.
    pub sd_defined: bool,
}

pub fn summarize(samples: &[f64]) -> Result<SummaryStats, MetricsError> {
    let n = samples.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    let sd = if n >= 2 {
        let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(SummaryStats {
        n,
        // summation error can push the mean a hair outside [min, max]
        mean: mean.clamp(min, max),
        sd,
        min,
        max,
        sd_defined: n >= 2,
    })
}

/// Left-closed, right-open bins; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples outside `[lo, hi]` (including NaN).
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Index of the fullest bin; ties resolve to the lowest bin.
    pub fn modal_bin(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        if max == 0 {
            return None;
        }
        self.counts.iter().position(|&c| c == max)
    }

    pub fn bin_range(&self, i: usize) -> (f64, f64) {
        (self.bin_edges[i], self.bin_edges[i + 1])
    }
}

pub fn histogram(samples: &[f64], lo: f64, hi: f64, bin_width: f64) -> Result<Histogram, MetricsError> {
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(MetricsError::BadWidth(bin_width));
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(MetricsError::BadRange { lo, hi });
    }
    let bins_f = (hi - lo) / bin_width;
    let bins = bins_f.round();
    if (bins_f - bins).abs() * bin_width > 1e-9 || bins < 1.0 {
        return Err(MetricsError::WidthMismatch {
            lo,
            hi,
            width: bin_width,
        });
    }
    let bins = bins as usize;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * bin_width).collect();
    let mut counts = vec![0u64; bins];
    let mut overflow = 0;
    for &x in samples {
        if !(x >= lo && x <= hi) {
            overflow += 1;
            continue;
        }
        let mut i = (((x - lo) / bin_width).floor() as usize).min(bins - 1);
        // guard against rounding at interior edges
        if x < bin_edges[i] {
            i -= 1;
        } else if i + 1 < bins && x >= bin_edges[i + 1] {
            i += 1;
        }
        counts[i] += 1;
    }
    Ok(Histogram {
        bin_edges,
        counts,
        overflow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn ols_fit(points: &[(f64, f64)]) -> Result<RegressionFit, MetricsError> {
    let n = points.len();
    if n < 2 {
        return Err(MetricsError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateX);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        // constant y: the fit is exact up to rounding
        if ss_res <= 1e-18 * nf * (1.0 + my * my) {
            1.0
        } else {
            return Err(MetricsError::UndefinedRSquared);
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

/// One-sided exact sign test: P(X >= successes) for X ~ Binomial(n, 1/2),
/// n = successes + failures (ties excluded by the caller).
pub fn sign_test_p(successes: u64, failures: u64) -> f64 {
    let n = successes + failures;
    if n == 0 {
        return 1.0;
    }
    let ln_choose =
        |k: u64| libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0);
    let ln_half_n = n as f64 * 0.5f64.ln();
    let p: f64 = (successes..=n).map(|k| (ln_choose(k) + ln_half_n).exp()).sum();
    p.min(1.0)
}

/// Fraction of (a, b) pairs with a < b, over all cross pairs.
pub fn fraction_below(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let below = a.iter().map(|x| b.iter().filter(|y| x < y).count()).sum::<usize>();
    Some(below as f64 / (a.len() * b.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tolerance {
    /// |measured - reference| <= value
    Absolute { value: f64 },
    /// |measured - reference| <= frac * |reference|
    Relative { frac: f64 },
    /// lo <= measured <= hi
    Range { lo: f64, hi: f64 },
    /// measured < bound
    Below { bound: f64 },
    /// measured >= bound
    AtLeast { bound: f64 },
    /// measured == reference
    Exact,
}

impl Tolerance {
    pub fn accepts(&self, reference: f64, measured: f64) -> bool {
        if !measured.is_finite() {
            return false;
        }
        match *self {
            Tolerance::Absolute { value } => (measured - reference).abs() <= value,
            Tolerance::Relative { frac } => (measured - reference).abs() <= frac * reference.abs(),
            Tolerance::Range { lo, hi } => (lo..=hi).contains(&measured),
            Tolerance::Below { bound } => measured < bound,
            Tolerance::AtLeast { bound } => measured >= bound,
            Tolerance::Exact => measured == reference,
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Tolerance::Absolute { value } => write!(f, "+/-{value}"),
            Tolerance::Relative { frac } => write!(f, "+/-{}%", frac * 100.0),
            Tolerance::Range { lo, hi } => write!(f, "[{lo}; {hi}]"),
            Tolerance::Below { bound } => write!(f, "< {bound}"),
            Tolerance::AtLeast { bound } => write!(f, ">= {bound}"),
            Tolerance::Exact => write!(f, "exact"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub criterion: String,
    pub metric: String,
    pub reference_value: f64,
    /// `None` when the runs needed for this metric are missing.
    pub measured_value: Option<f64>,
    pub tolerance: Tolerance,
    pub pass: bool,
}

impl ComparisonRow {
    fn new(criterion: &str, metric: &str, reference_value: f64, measured: Option<f64>, tolerance: Tolerance) -> Self {
        let pass = measured.is_some_and(|m| tolerance.accepts(reference_value, m));
        Self {
            criterion: criterion.to_string(),
            metric: metric.to_string(),
            reference_value,
            measured_value: measured,
            tolerance,
            pass,
        }
    }
}

pub const CRITERION_TABLE1: &str = "table1_calibration";
pub const CRITERION_TABLE2: &str = "table2_calibration";
pub const CRITERION_TABLE4: &str = "table4_modal_bins";
pub const CRITERION_REGRESSION: &str = "table3_5_regression";

/// Endpoints of the target severity trend.
pub const SEVERITY_LO: (f64, f64) = (1.0, 9.5);
pub const SEVERITY_HI: (f64, f64) = (10.0, 4.5);

pub fn reference_slope() -> f64 {
    (SEVERITY_HI.1 - SEVERITY_LO.1) / (SEVERITY_HI.0 - SEVERITY_LO.0)
}

/// Aggregates the comparison needs; absent pieces fail their rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceAggregates {
    /// Mean accuracy per classifier (CNN, RNN, Traditional).
    pub accuracy_means: Vec<(String, Option<f64>)>,
    pub proposed_failure_mean: Option<f64>,
    pub baseline_failure_mean: Option<f64>,
    pub disjoint_fraction: Option<f64>,
    pub proposed_modal_lo: Option<f64>,
    pub baseline_modal_lo: Option<f64>,
    pub regression: Option<RegressionFit>,
    pub sign_test_p: Option<f64>,
}

/// One row per checked metric, grouped by criterion.
pub fn compare_to_reference(agg: &ReferenceAggregates) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for (name, reference) in [("CNN", 95.0), ("RNN", 90.0), ("Traditional", 75.0)] {
        let measured = agg.accuracy_means.iter().find(|(n, _)| n == name).and_then(|(_, m)| *m);
        rows.push(ComparisonRow::new(
            CRITERION_TABLE1,
            &format!("mean_accuracy_pct[{name}]"),
            reference,
            measured,
            Tolerance::Absolute { value: 1.0 },
        ));
    }
    rows.push(ComparisonRow::new(
        CRITERION_TABLE2,
        "mean_failure_rate_pct[proposed]",
        0.5,
        agg.proposed_failure_mean,
        Tolerance::Range { lo: 0.4, hi: 0.6 },
    ));
    rows.push(ComparisonRow::new(
        CRITERION_TABLE2,
        "mean_failure_rate_pct[industry]",
        2.5,
        agg.baseline_failure_mean,
        Tolerance::Range { lo: 2.2, hi: 2.8 },
    ));
    rows.push(ComparisonRow::new(
        CRITERION_TABLE2,
        "disjoint_pair_fraction",
        0.95,
        agg.disjoint_fraction,
        Tolerance::AtLeast { bound: 0.95 },
    ));
    rows.push(ComparisonRow::new(
        CRITERION_TABLE4,
        "modal_bin_lo[proposed]",
        0.0,
        agg.proposed_modal_lo,
        Tolerance::Exact,
    ));
    rows.push(ComparisonRow::new(
        CRITERION_TABLE4,
        "modal_bin_lo[industry]",
        2.5,
        agg.baseline_modal_lo,
        Tolerance::Exact,
    ));
    let fit = agg.regression;
    rows.push(ComparisonRow::new(
        CRITERION_REGRESSION,
        "slope",
        reference_slope(),
        fit.map(|f| f.slope),
        Tolerance::Relative { frac: 0.15 },
    ));
    rows.push(ComparisonRow::new(
        CRITERION_REGRESSION,
        "fitted_score[severity=1]",
        SEVERITY_LO.1,
        fit.map(|f| f.predict(SEVERITY_LO.0)),
        Tolerance::Absolute { value: 0.6 },
    ));
    rows.push(ComparisonRow::new(
        CRITERION_REGRESSION,
        "fitted_score[severity=10]",
        SEVERITY_HI.1,
        fit.map(|f| f.predict(SEVERITY_HI.0)),
        Tolerance::Absolute { value: 1.0 },
    ));
    rows.push(ComparisonRow::new(
        CRITERION_REGRESSION,
        "monotone_sign_test_p",
        0.01,
        agg.sign_test_p,
        Tolerance::Below { bound: 0.01 },
    ));
    rows
}
