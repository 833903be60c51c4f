//! Seeded picking episodes: order arrivals, wheel slip, degraded perception
//! and hardware faults layered over the deterministic warehouse kernel.
//!
//! Every source of randomness has its own ChaCha stream derived from the run
//! seed, so a severity-1 replay of the same seed sees the same orders, the
//! same classifier draw and the same per-run fault probability.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{reward, REWARD_FAILED, REWARD_STEP};
use crate::perception::{classify_with, instantiate, ClassifierInstance, ClassifierSpec, PerceptionError};
use crate::qlearning::{QTable, Transition};
use crate::warehouse::{Action, Layout, Order, Sku, StateId, StepOutcome, WarehouseError, WarehouseState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Warehouse(#[from] WarehouseError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("severity level {0} outside 1..=10")]
    SeverityOutOfRange(u8),
    #[error("invalid simulation setting `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("run recorded zero pick attempts")]
    NoPickAttempts,
    #[error("severity-1 baseline completed no orders")]
    NoBaselineCompletions,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Per-level slopes of the two severity channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityCoefficients {
    pub slip_per_level: f64,
    pub degradation_per_level: f64,
}

impl Default for SeverityCoefficients {
    fn default() -> Self {
        Self {
            slip_per_level: 0.02,
            degradation_per_level: 0.03,
        }
    }
}

impl SeverityCoefficients {
    pub fn validate(&self) -> Result<(), SimError> {
        // level 10 must still leave a usable robot
        if !(self.slip_per_level > 0.0 && 9.0 * self.slip_per_level < 1.0) {
            return Err(invalid("slip_per_level", "must lie in (0, 1/9)"));
        }
        if !(self.degradation_per_level > 0.0 && 9.0 * self.degradation_per_level < 1.0) {
            return Err(invalid("degradation_per_level", "must lie in (0, 1/9)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityModel {
    pub level: u8,
    /// Probability that a Move is replaced by a no-op.
    pub slip_prob: f64,
    /// Multiplier on the run's classifier accuracy.
    pub sensor_degradation: f64,
}

pub fn severity_model(level: u8) -> Result<SeverityModel, SimError> {
    severity_model_with(level, SeverityCoefficients::default())
}

pub fn severity_model_with(level: u8, coeffs: SeverityCoefficients) -> Result<SeverityModel, SimError> {
    if !(1..=10).contains(&level) {
        return Err(SimError::SeverityOutOfRange(level));
    }
    let k = f64::from(level - 1);
    Ok(SeverityModel {
        level,
        slip_prob: coeffs.slip_per_level * k,
        sensor_degradation: 1.0 - coeffs.degradation_per_level * k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    /// Chance that an otherwise successful pick is voided.
    pub per_pick_fault_prob: f64,
    /// Log-scale sd of the per-run multiplier on the fault probability.
    pub run_noise_sd: f64,
    /// Percent band the per-run probability is rejection-sampled into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_prob_band_pct: Option<[f64; 2]>,
}

impl FaultModel {
    pub const NONE: FaultModel = FaultModel {
        per_pick_fault_prob: 0.0,
        run_noise_sd: 0.0,
        run_prob_band_pct: None,
    };

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.per_pick_fault_prob) {
            return Err(invalid("per_pick_fault_prob", "must lie in [0, 1]"));
        }
        if !(self.run_noise_sd >= 0.0 && self.run_noise_sd.is_finite()) {
            return Err(invalid("run_noise_sd", "must be finite and >= 0"));
        }
        if let Some([lo, hi]) = self.run_prob_band_pct {
            let p = 100.0 * self.per_pick_fault_prob;
            if !(0.0 <= lo && lo <= p && p <= hi && hi <= 100.0) {
                return Err(invalid(
                    "run_prob_band_pct",
                    "band must satisfy 0 <= lo <= 100*per_pick_fault_prob <= hi <= 100",
                ));
            }
        }
        Ok(())
    }

    /// Per-run fault probability: `p * exp(sd*z - sd^2/2)`, redrawn until it
    /// falls inside the band (and inside [0, 1]).
    pub fn draw_run_prob<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = self.per_pick_fault_prob;
        if self.run_noise_sd == 0.0 || p == 0.0 {
            return p;
        }
        let (lo, hi) = self
            .run_prob_band_pct
            .map_or((0.0, 1.0), |[lo, hi]| (lo / 100.0, hi / 100.0));
        let sd = self.run_noise_sd;
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let v = p * (sd * z - 0.5 * sd * sd).exp();
            if v >= lo && v <= hi && v <= 1.0 {
                return v;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub steps: u64,
    pub picks_attempted: u64,
    pub picks_succeeded: u64,
    pub faults: u64,
    pub orders_completed: u64,
    pub slips: u64,
    pub total_reward: f64,
    pub transitions: Option<Vec<Transition>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub layout: Layout,
    /// Expected orders per 100 ticks.
    pub order_arrival_rate: f64,
    pub classifier: ClassifierSpec,
    pub severity: u8,
    #[serde(default)]
    pub severity_coefficients: SeverityCoefficients,
    pub fault: FaultModel,
    pub seed: u64,
    pub max_steps: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.order_arrival_rate >= 0.0 && self.order_arrival_rate.is_finite()) {
            return Err(invalid("order_arrival_rate", "must be finite and >= 0"));
        }
        severity_model_with(self.severity, self.severity_coefficients)?;
        self.severity_coefficients.validate()?;
        self.fault.validate()?;
        self.classifier.validate()?;
        Ok(())
    }

    pub fn severity_model(&self) -> SeverityModel {
        severity_model_with(self.severity, self.severity_coefficients).expect("validated severity")
    }
}

/// Independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Classifier = 1,
    FaultLevel = 2,
    Orders = 3,
    Slip = 4,
    Identify = 5,
    FaultDraw = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Poisson arrivals with intensity `rate / 100` per tick over `[0, horizon)`;
/// each order is one unit of a uniformly chosen SKU.
pub fn generate_orders<R: Rng + ?Sized>(rate: f64, horizon: u64, catalog: &[Sku], rng: &mut R) -> Vec<Order> {
    if rate <= 0.0 || catalog.is_empty() || horizon == 0 {
        return Vec::new();
    }
    let gap = Exp::new(rate / 100.0).expect("positive rate");
    let mut orders = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= horizon as f64 {
            break;
        }
        let sku = catalog[rng.random_range(0..catalog.len())].clone();
        orders.push(Order::single(orders.len() as u64, sku, t as u64));
    }
    orders
}

pub trait Policy {
    fn act(&mut self, s: StateId) -> Action;
}

impl Policy for QTable {
    fn act(&mut self, s: StateId) -> Action {
        self.greedy(s)
    }
}

impl Policy for &QTable {
    fn act(&mut self, s: StateId) -> Action {
        self.greedy(s)
    }
}

/// Adapts a closure into a [`Policy`].
#[derive(Clone)]
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(StateId) -> Action> Policy for FnPolicy<F> {
    fn act(&mut self, s: StateId) -> Action {
        (self.0)(s)
    }
}

/// An episode in progress. [`run_episode`] drives it to completion; tests
/// step it manually to observe every tick.
#[derive(Debug, Clone)]
pub struct Simulation {
    state: WarehouseState,
    pending: std::vec::IntoIter<Order>,
    next_order: Option<Order>,
    severity: SeverityModel,
    classifier: ClassifierInstance,
    run_fault_prob: f64,
    /// Every other catalog SKU, per SKU.
    decoys: BTreeMap<Sku, Vec<Sku>>,
    slip_rng: ChaCha8Rng,
    identify_rng: ChaCha8Rng,
    fault_rng: ChaCha8Rng,
    max_steps: u64,
    log: EpisodeLog,
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let state = config.layout.build()?;
        let catalog = config.layout.catalog();
        let classifier = instantiate(&config.classifier, &mut stream_rng(config.seed, Stream::Classifier));
        let run_fault_prob = config
            .fault
            .draw_run_prob(&mut stream_rng(config.seed, Stream::FaultLevel));
        let orders = generate_orders(
            config.order_arrival_rate,
            config.max_steps,
            &catalog,
            &mut stream_rng(config.seed, Stream::Orders),
        );
        let decoys = catalog
            .iter()
            .map(|sku| (sku.clone(), catalog.iter().filter(|c| *c != sku).cloned().collect()))
            .collect();
        let mut pending = orders.into_iter();
        let next_order = pending.next();
        Ok(Self {
            state,
            pending,
            next_order,
            severity: config.severity_model(),
            classifier,
            run_fault_prob,
            decoys,
            slip_rng: stream_rng(config.seed, Stream::Slip),
            identify_rng: stream_rng(config.seed, Stream::Identify),
            fault_rng: stream_rng(config.seed, Stream::FaultDraw),
            max_steps: config.max_steps,
            log: EpisodeLog::default(),
        })
    }

    /// Keep every transition in the log.
    pub fn record_transitions(&mut self) {
        self.log.transitions.get_or_insert_with(Vec::new);
    }

    pub fn state(&self) -> &WarehouseState {
        &self.state
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn classifier(&self) -> &ClassifierInstance {
        &self.classifier
    }

    pub fn run_fault_prob(&self) -> f64 {
        self.run_fault_prob
    }

    pub fn effective_accuracy(&self) -> f64 {
        self.classifier.run_accuracy * self.severity.sensor_degradation
    }

    pub fn is_done(&self) -> bool {
        self.log.steps >= self.max_steps
    }

    fn admit_arrivals(&mut self) {
        while let Some(order) = self.next_order.take() {
            if order.arrival_tick > self.state.tick {
                self.next_order = Some(order);
                break;
            }
            self.state.push_order(order).expect("generated orders are valid");
            self.next_order = self.pending.next();
        }
    }

    /// Advances one tick. Returns `None` once `max_steps` ticks have run.
    pub fn step<P: Policy + ?Sized>(&mut self, policy: &mut P) -> Option<StepOutcome> {
        if self.is_done() {
            return None;
        }
        self.admit_arrivals();
        let s = self.state.state_id();
        let action = policy.act(s);

        let (outcome, r) = if action.is_move() && self.slip_rng.random::<f64>() < self.severity.slip_prob {
            self.state.idle();
            self.log.slips += 1;
            (StepOutcome::Blocked, REWARD_STEP)
        } else if action == Action::Pick {
            self.attempt_pick()
        } else {
            let o = self.state.step(action);
            (o, reward(o))
        };

        self.log.orders_completed = self.state.orders_completed();
        self.log.steps += 1;
        self.log.total_reward += r;
        if let Some(ts) = self.log.transitions.as_mut() {
            ts.push(Transition {
                s,
                a: action,
                r,
                s_next: self.state.state_id(),
                terminal: false,
            });
        }
        Some(outcome)
    }

    fn attempt_pick(&mut self) -> (StepOutcome, f64) {
        let Some((_, sku)) = self.state.pick_ready() else {
            let o = self.state.step(Action::Pick);
            return (o, reward(o));
        };
        self.log.picks_attempted += 1;

        let decoys = &self.decoys[&sku];
        // a single-SKU catalog leaves nothing to confuse
        let identified = decoys.is_empty() || {
            let accuracy = self.classifier.run_accuracy * self.severity.sensor_degradation;
            let seen = classify_with(accuracy, &sku, decoys, &mut self.identify_rng).expect("non-empty decoys");
            *seen == sku
        };
        if !identified {
            self.state.idle();
            return (StepOutcome::PickFailed, REWARD_FAILED);
        }
        if self.fault_rng.random::<f64>() < self.run_fault_prob {
            self.log.faults += 1;
            self.state.idle();
            return (StepOutcome::PickFailed, REWARD_FAILED);
        }
        let o = self.state.step(Action::Pick);
        debug_assert_eq!(o, StepOutcome::Picked);
        self.log.picks_succeeded += 1;
        (o, reward(o))
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }
}

pub fn run_episode<P: Policy + ?Sized>(config: &SimConfig, policy: &mut P) -> Result<EpisodeLog, SimError> {
    let mut sim = Simulation::new(config)?;
    while sim.step(policy).is_some() {}
    Ok(sim.into_log())
}

/// Run-level metrics of one seeded replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeasurement {
    pub accuracy_pct: f64,
    pub failure_rate_pct: f64,
    pub performance_score: f64,
    pub steps: u64,
    pub orders_completed: u64,
    pub baseline_completions: u64,
    /// Classifier accuracy drawn for this run, before severity degradation.
    pub realized_accuracy: f64,
    pub run_fault_prob: f64,
}

/// Runs `config`, plus a severity-1 replay of the same seed when needed,
/// and reduces both to run-level metrics.
///
/// `performance_score = 10 * completions / severity-1 completions`, so a
/// severity-1 run always scores exactly 10.
pub fn measure_run<P: Policy + Clone>(config: &SimConfig, policy: &P) -> Result<RunMeasurement, SimError> {
    let mut sim = Simulation::new(config)?;
    let realized_accuracy = sim.classifier().run_accuracy;
    let run_fault_prob = sim.run_fault_prob();
    let mut p = policy.clone();
    while sim.step(&mut p).is_some() {}
    let log = sim.into_log();

    let baseline_completions = if config.severity == 1 {
        log.orders_completed
    } else {
        let baseline = SimConfig {
            severity: 1,
            ..config.clone()
        };
        run_episode(&baseline, &mut policy.clone())?.orders_completed
    };

    if log.picks_attempted == 0 {
        return Err(SimError::NoPickAttempts);
    }
    if baseline_completions == 0 {
        return Err(SimError::NoBaselineCompletions);
    }
    let attempted = log.picks_attempted as f64;
    Ok(RunMeasurement {
        accuracy_pct: 100.0 * log.picks_succeeded as f64 / attempted,
        failure_rate_pct: 100.0 * log.faults as f64 / attempted,
        performance_score: 10.0 * log.orders_completed as f64 / baseline_completions as f64,
        steps: log.steps,
        orders_completed: log.orders_completed,
        baseline_completions,
        realized_accuracy,
        run_fault_prob,
    })
}
