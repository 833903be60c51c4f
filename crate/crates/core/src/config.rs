//! Experiment configuration: a single JSON document describing the layout,
//! training, the systems under test and the run sweeps.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::TrainingSetup;
use crate::perception::{builtin_spec_by_name, ClassifierSpec};
use crate::qlearning::QParams;
use crate::sim::{FaultModel, SeverityCoefficients, SimConfig};
use crate::warehouse::{GridPos, Layout};

pub const DEFAULT_CONFIG_JSON: &str = include_str!("../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassifierChoice {
    Builtin(String),
    Custom(ClassifierSpec),
}

impl ClassifierChoice {
    pub fn label(&self) -> &str {
        match self {
            ClassifierChoice::Builtin(name) => name,
            ClassifierChoice::Custom(spec) => &spec.name,
        }
    }

    pub fn spec(&self) -> Result<ClassifierSpec, String> {
        match self {
            ClassifierChoice::Builtin(name) => builtin_spec_by_name(name).map_err(|e| e.to_string()),
            ClassifierChoice::Custom(spec) => {
                spec.validate().map_err(|e| e.to_string())?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub label: String,
    pub fault: FaultModel,
}

/// One block of the run plan: the product classifiers x systems x
/// severities x replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    #[serde(default)]
    pub name: String,
    /// Classifier labels; empty means all configured classifiers.
    #[serde(default)]
    pub classifiers: Vec<String>,
    /// System labels; empty means all configured systems.
    #[serde(default)]
    pub systems: Vec<String>,
    pub severities: Vec<u8>,
    pub replicates: u32,
}

/// Which slice of the Q-table `qsurface_<action>.csv` exports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSlice {
    pub carrying: bool,
    /// Defaults to the first shelf in row-major order.
    #[serde(default)]
    pub target: Option<GridPos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub warehouse: Layout,
    pub qlearning: QParams,
    #[serde(default)]
    pub training: TrainingSetup,
    pub classifiers: Vec<ClassifierChoice>,
    pub systems: Vec<SystemSpec>,
    /// Flat form: one sweep over every classifier and system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severities: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<Vec<Sweep>>,
    #[serde(default)]
    pub severity_coefficients: SeverityCoefficients,
    /// Expected orders per 100 ticks.
    pub order_arrival_rate: f64,
    pub max_steps: u64,
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub surface: Option<SurfaceSlice>,
}

/// One scheduled run. The seed is always `base_seed + run_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: u64,
    pub sweep: String,
    pub system: String,
    pub classifier: String,
    pub severity: u8,
    pub seed: u64,
    pub sim: SimConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| format!("config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_config() -> Self {
        Self::from_json(DEFAULT_CONFIG_JSON).expect("shipped default config is valid")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.warehouse
            .build()
            .map_err(|e| format!("config field `warehouse`: {e}"))?;
        if self.warehouse.stock.is_empty() {
            return Err("config field `warehouse.stock`: at least one SKU required".into());
        }
        self.qlearning
            .validate()
            .map_err(|e| format!("config field `qlearning`: {e}"))?;
        self.severity_coefficients
            .validate()
            .map_err(|e| format!("config field `severity_coefficients`: {e}"))?;
        if !(self.order_arrival_rate >= 0.0 && self.order_arrival_rate.is_finite()) {
            return Err("config field `order_arrival_rate`: must be finite and >= 0".into());
        }
        if self.max_steps == 0 {
            return Err("config field `max_steps`: must be >= 1".into());
        }

        let mut labels = BTreeSet::new();
        for c in &self.classifiers {
            c.spec().map_err(|e| format!("config field `classifiers`: {e}"))?;
            if !labels.insert(c.label().to_string()) {
                return Err(format!("config field `classifiers`: duplicate label `{}`", c.label()));
            }
        }
        let mut labels = BTreeSet::new();
        for s in &self.systems {
            s.fault
                .validate()
                .map_err(|e| format!("config field `systems` ({}): {e}", s.label))?;
            if s.label.is_empty() || s.label.contains([',', '"', '\n']) {
                return Err(format!("config field `systems`: bad label `{}`", s.label));
            }
            if !labels.insert(s.label.clone()) {
                return Err(format!("config field `systems`: duplicate label `{}`", s.label));
            }
        }
        if self.classifiers.is_empty() {
            return Err("config field `classifiers`: must not be empty".into());
        }
        if self.systems.is_empty() {
            return Err("config field `systems`: must not be empty".into());
        }

        match (&self.sweeps, &self.severities, self.replicates) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => {
                return Err("config field `sweeps`: cannot be combined with `severities`/`replicates`".into())
            }
            (None, _, _) => {
                return Err("config field `sweeps`: missing (or give both `severities` and `replicates`)".into())
            }
        }
        for sweep in self.sweeps() {
            if sweep.replicates == 0 {
                return Err("config field `replicates`: must be >= 1".into());
            }
            if sweep.severities.is_empty() {
                return Err("config field `severities`: must not be empty".into());
            }
            if let Some(bad) = sweep.severities.iter().find(|l| !(1..=10).contains(*l)) {
                return Err(format!("config field `severities`: level {bad} outside 1..=10"));
            }
            for c in &sweep.classifiers {
                if !self.classifiers.iter().any(|k| k.label() == c) {
                    return Err(format!("config field `sweeps.classifiers`: unknown classifier `{c}`"));
                }
            }
            for s in &sweep.systems {
                if !self.systems.iter().any(|k| &k.label == s) {
                    return Err(format!("config field `sweeps.systems`: unknown system `{s}`"));
                }
            }
        }
        if let Some(SurfaceSlice { target: Some(t), .. }) = self.surface {
            if !self.warehouse.is_shelf(t) {
                return Err(format!("config field `surface.target`: {t} is not a shelf"));
            }
        }
        Ok(())
    }

    pub fn sweeps(&self) -> Vec<Sweep> {
        match (&self.sweeps, &self.severities, self.replicates) {
            (Some(s), _, _) => s.clone(),
            (None, Some(levels), Some(replicates)) => vec![Sweep {
                name: "main".into(),
                classifiers: Vec::new(),
                systems: Vec::new(),
                severities: levels.clone(),
                replicates,
            }],
            _ => Vec::new(),
        }
    }

    /// Keeps only the named sweep. Useful for focused experiments.
    pub fn only_sweep(&self, name: &str) -> Option<Self> {
        let sweep = self.sweeps().into_iter().find(|s| s.name == name)?;
        Some(Self {
            sweeps: Some(vec![sweep]),
            severities: None,
            replicates: None,
            ..self.clone()
        })
    }

    pub fn surface_slice(&self) -> (bool, Option<GridPos>) {
        let slice = self.surface.unwrap_or(SurfaceSlice {
            carrying: false,
            target: None,
        });
        let target = slice.target.or_else(|| {
            let mut shelves = self.warehouse.shelves.clone();
            shelves.sort_by_key(|p| (p.y, p.x));
            shelves.first().copied()
        });
        (slice.carrying, target)
    }

    /// Every run in schedule order: sweeps, then classifiers, systems,
    /// severities and replicates.
    pub fn run_plan(&self) -> Vec<RunSpec> {
        let mut plan = Vec::new();
        for sweep in self.sweeps() {
            let classifiers: Vec<&ClassifierChoice> = self
                .classifiers
                .iter()
                .filter(|c| sweep.classifiers.is_empty() || sweep.classifiers.iter().any(|n| n == c.label()))
                .collect();
            let systems: Vec<&SystemSpec> = self
                .systems
                .iter()
                .filter(|s| sweep.systems.is_empty() || sweep.systems.contains(&s.label))
                .collect();
            for classifier in &classifiers {
                let spec = classifier.spec().expect("validated classifier");
                for system in &systems {
                    for &severity in &sweep.severities {
                        for _ in 0..sweep.replicates {
                            let run_id = plan.len() as u64;
                            let seed = self.base_seed.wrapping_add(run_id);
                            plan.push(RunSpec {
                                run_id,
                                sweep: sweep.name.clone(),
                                system: system.label.clone(),
                                classifier: classifier.label().to_string(),
                                severity,
                                seed,
                                sim: SimConfig {
                                    layout: self.warehouse.clone(),
                                    order_arrival_rate: self.order_arrival_rate,
                                    classifier: spec.clone(),
                                    severity,
                                    severity_coefficients: self.severity_coefficients,
                                    fault: system.fault,
                                    seed,
                                    max_steps: self.max_steps,
                                },
                            });
                        }
                    }
                }
            }
        }
        plan
    }
}
