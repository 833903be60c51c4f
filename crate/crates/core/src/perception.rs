//! Stochastic stand-ins for the vision models. Each run draws one realized
//! accuracy from a truncated normal, and every pick attempt is then a
//! Bernoulli identification against a uniform decoy set.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("unknown classifier `{0}` (expected CNN, RNN or Traditional)")]
    UnknownClassifier(String),
    #[error("invalid classifier spec {name}: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("decoy list is empty")]
    NoDecoys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierName {
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "RNN")]
    Rnn,
    Traditional,
}

impl ClassifierName {
    pub const ALL: [ClassifierName; 3] = [ClassifierName::Cnn, ClassifierName::Rnn, ClassifierName::Traditional];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierName::Cnn => "CNN",
            ClassifierName::Rnn => "RNN",
            ClassifierName::Traditional => "Traditional",
        }
    }
}

impl fmt::Display for ClassifierName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierName {
    type Err = PerceptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| PerceptionError::UnknownClassifier(s.to_string()))
    }
}

/// Accuracy distribution of one classifier, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub name: String,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub min_acc: f64,
    pub max_acc: f64,
}

pub fn builtin_spec(name: ClassifierName) -> ClassifierSpec {
    let (mean_acc, sd_acc, min_acc, max_acc) = match name {
        ClassifierName::Cnn => (95.0, 3.0, 88.0, 100.0),
        ClassifierName::Rnn => (90.0, 5.0, 80.0, 97.0),
        ClassifierName::Traditional => (75.0, 7.0, 60.0, 85.0),
    };
    ClassifierSpec {
        name: name.as_str().to_string(),
        mean_acc,
        sd_acc,
        min_acc,
        max_acc,
    }
}

pub fn builtin_spec_by_name(name: &str) -> Result<ClassifierSpec, PerceptionError> {
    Ok(builtin_spec(name.parse()?))
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let ordered = 0.0 <= self.min_acc
            && self.min_acc <= self.mean_acc
            && self.mean_acc <= self.max_acc
            && self.max_acc <= 100.0;
        let reason = if !ordered {
            "require 0 <= min <= mean <= max <= 100"
        } else if (self.sd_acc.is_nan() || self.sd_acc <= 0.0) && self.min_acc != self.max_acc {
            "sd must be positive"
        } else {
            return Ok(());
        };
        Err(PerceptionError::InvalidSpec {
            name: self.name.clone(),
            reason: reason.to_string(),
        })
    }

    /// Location of the untruncated normal whose truncation to
    /// `[min_acc, max_acc]` has mean exactly `mean_acc`.
    ///
    /// Truncating N(mean, sd) directly would bias the realized mean toward
    /// the wider tail (about -0.8 points for the Traditional row).
    pub fn calibrated_location(&self) -> f64 {
        if self.min_acc == self.max_acc || self.mean_acc <= self.min_acc || self.mean_acc >= self.max_acc {
            return self.mean_acc;
        }
        // The truncated mean is strictly increasing in the location.
        let width = self.max_acc - self.min_acc;
        let (mut lo, mut hi) = (self.min_acc - 4.0 * width, self.max_acc + 4.0 * width);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if truncated_normal_mean(mid, self.sd_acc, self.min_acc, self.max_acc) < self.mean_acc {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Mean of N(mu, sd) truncated to [lo, hi].
pub fn truncated_normal_mean(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let mass = std_normal_cdf(b) - std_normal_cdf(a);
    if mass <= 1e-300 {
        // Entire mass beyond one bound.
        return if mu < lo { lo } else { hi };
    }
    mu + sd * (std_normal_pdf(a) - std_normal_pdf(b)) / mass
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierInstance {
    pub spec: ClassifierSpec,
    /// Realized accuracy for this run, as a probability.
    pub run_accuracy: f64,
}

/// Draws a run accuracy by rejection sampling inside `[min_acc, max_acc]`.
pub fn instantiate<R: Rng + ?Sized>(spec: &ClassifierSpec, rng: &mut R) -> ClassifierInstance {
    let pct = if spec.min_acc == spec.max_acc {
        spec.min_acc
    } else {
        let normal = Normal::new(spec.calibrated_location(), spec.sd_acc).expect("validated sd");
        loop {
            let x = normal.sample(rng);
            if (spec.min_acc..=spec.max_acc).contains(&x) {
                break x;
            }
        }
    };
    ClassifierInstance {
        spec: spec.clone(),
        run_accuracy: pct / 100.0,
    }
}

impl ClassifierInstance {
    pub fn perfect() -> Self {
        Self {
            spec: ClassifierSpec {
                name: "perfect".into(),
                mean_acc: 100.0,
                sd_acc: 0.0,
                min_acc: 100.0,
                max_acc: 100.0,
            },
            run_accuracy: 1.0,
        }
    }

    pub fn classify<'a, T: PartialEq, R: Rng + ?Sized>(
        &self,
        true_item: &'a T,
        decoys: &'a [T],
        rng: &mut R,
    ) -> Result<&'a T, PerceptionError> {
        classify_with(self.run_accuracy, true_item, decoys, rng)
    }
}

/// Returns `true_item` with probability `accuracy`, otherwise a uniform
/// decoy.
pub fn classify_with<'a, T, R: Rng + ?Sized>(
    accuracy: f64,
    true_item: &'a T,
    decoys: &'a [T],
    rng: &mut R,
) -> Result<&'a T, PerceptionError> {
    if decoys.is_empty() {
        return Err(PerceptionError::NoDecoys);
    }
    if rng.random::<f64>() < accuracy {
        Ok(true_item)
    } else {
        Ok(&decoys[rng.random_range(0..decoys.len())])
    }
}
