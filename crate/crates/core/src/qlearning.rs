//! Tabular Q-learning: the temporal-difference update, epsilon-greedy
//! selection, the episodic training loop and convergence diagnostics.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::warehouse::{Action, GridPos, StateId};

#[derive(Debug, Error, PartialEq)]
pub enum QError {
    #[error("reward must be finite, got {0}")]
    NonFiniteReward(f64),
    #[error("invalid q-learning parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("unknown action name `{0}`")]
    UnknownAction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: u32,
    pub episodes: u32,
    pub max_steps_per_episode: u32,
}

impl QParams {
    pub fn validate(&self) -> Result<(), QError> {
        let bad = |field, reason: &str| {
            Err(QError::InvalidParam {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", "must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) {
            return bad("epsilon_start", "must lie in [0, 1]");
        }
        if !(0.0..=self.epsilon_start).contains(&self.epsilon_end) {
            return bad("epsilon_end", "must lie in [0, epsilon_start]");
        }
        if self.epsilon_decay_episodes == 0 {
            return bad("epsilon_decay_episodes", "must be positive");
        }
        if self.episodes == 0 {
            return bad("episodes", "must be positive");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then flat.
    pub fn epsilon_at(&self, episode: u32) -> f64 {
        let frac = (f64::from(episode) / f64::from(self.epsilon_decay_episodes)).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Q-values keyed by state, one slot per action. Unseen entries read as 0.0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    rows: HashMap<StateId, [f64; Action::COUNT]>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, s: StateId, a: Action) -> f64 {
        self.rows.get(&s).map_or(0.0, |row| row[a.index()])
    }

    pub fn row(&self, s: StateId) -> [f64; Action::COUNT] {
        self.rows.get(&s).copied().unwrap_or([0.0; Action::COUNT])
    }

    pub fn set(&mut self, s: StateId, a: Action, value: f64) {
        self.rows.entry(s).or_insert([0.0; Action::COUNT])[a.index()] = value;
    }

    pub fn max_value(&self, s: StateId) -> f64 {
        self.row(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax over actions; ties go to the earliest action in enum order.
    pub fn greedy(&self, s: StateId) -> Action {
        let row = self.row(s);
        let mut best = 0;
        for i in 1..Action::COUNT {
            if row[i] > row[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    pub fn states(&self) -> impl Iterator<Item = &StateId> {
        self.rows.keys()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stored entries sorted by (state, action).
    pub fn entries(&self) -> Vec<(StateId, Action, f64)> {
        let sorted: BTreeMap<_, _> = self.rows.iter().collect();
        sorted
            .into_iter()
            .flat_map(|(s, row)| Action::ALL.into_iter().map(move |a| (*s, a, row[a.index()])))
            .collect()
    }

    pub fn to_records(&self) -> Vec<QRecord> {
        self.entries()
            .into_iter()
            .map(|(s, a, value)| QRecord {
                state: StateRecord::from(s),
                action: a.name().to_string(),
                value,
            })
            .collect()
    }

    pub fn from_records(records: &[QRecord]) -> Result<Self, QError> {
        let mut table = QTable::new();
        for r in records {
            let a = Action::parse(&r.action).ok_or_else(|| QError::UnknownAction(r.action.clone()))?;
            table.set(r.state.to_state_id(), a, r.value);
        }
        Ok(table)
    }
}

/// Checkpoint row: `{state: {x, y, carrying, tx, ty}, action, value}`.
/// A target of `(-1, -1)` encodes "no target shelf".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRecord {
    pub state: StateRecord,
    pub action: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub x: usize,
    pub y: usize,
    pub carrying: bool,
    pub tx: i64,
    pub ty: i64,
}

impl From<StateId> for StateRecord {
    fn from(s: StateId) -> Self {
        let (tx, ty) = match s.target_shelf {
            Some(p) => (p.x as i64, p.y as i64),
            None => (-1, -1),
        };
        Self {
            x: s.robot_pos.x,
            y: s.robot_pos.y,
            carrying: s.carrying,
            tx,
            ty,
        }
    }
}

impl StateRecord {
    pub fn to_state_id(self) -> StateId {
        let target_shelf = if self.tx < 0 || self.ty < 0 {
            None
        } else {
            Some(GridPos::new(self.tx as usize, self.ty as usize))
        };
        StateId {
            robot_pos: GridPos::new(self.x, self.y),
            carrying: self.carrying,
            target_shelf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: StateId,
    pub a: Action,
    pub r: f64,
    pub s_next: StateId,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub per_episode_return: Vec<f64>,
    pub per_episode_steps: Vec<u32>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.per_episode_return.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_episode_return.is_empty()
    }
}

/// One temporal-difference step toward `r + gamma * max_a' Q(s', a')`.
/// Terminal transitions drop the bootstrap term. Returns the new value.
pub fn q_update(q: &mut QTable, t: &Transition, alpha: f64, gamma: f64) -> Result<f64, QError> {
    if !t.r.is_finite() {
        return Err(QError::NonFiniteReward(t.r));
    }
    let old = q.get(t.s, t.a);
    let target = td_target(q, t, gamma);
    let new = old + alpha * (target - old);
    q.set(t.s, t.a, new);
    Ok(new)
}

pub fn td_target(q: &QTable, t: &Transition, gamma: f64) -> f64 {
    if t.terminal {
        t.r
    } else {
        t.r + gamma * q.max_value(t.s_next)
    }
}

pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: StateId, epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Action::ALL[rng.random_range(0..Action::COUNT)]
    } else {
        q.greedy(s)
    }
}

/// An episodic environment driven by [`train`].
pub trait Environment {
    type Error;

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StateId, Self::Error>;

    fn step<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<Transition, Self::Error>;
}

pub fn train<E, R>(env: &mut E, params: &QParams, rng: &mut R) -> Result<(QTable, LearningCurve), E::Error>
where
    E: Environment,
    R: Rng + ?Sized,
{
    let mut q = QTable::new();
    let mut curve = LearningCurve::default();
    for episode in 0..params.episodes {
        let epsilon = params.epsilon_at(episode);
        let mut s = env.reset(rng)?;
        let mut ret = 0.0;
        let mut steps = 0;
        while steps < params.max_steps_per_episode {
            let a = select_action(&q, s, epsilon, rng);
            let t = env.step(a, rng)?;
            // Rewards come from the simulator's fixed table, always finite.
            q_update(&mut q, &t, params.alpha, params.gamma).expect("finite reward");
            ret += t.r;
            steps += 1;
            if t.terminal {
                break;
            }
            s = t.s_next;
        }
        curve.per_episode_return.push(ret);
        curve.per_episode_steps.push(steps);
    }
    Ok((q, curve))
}

/// Deterministic successor of one state-action pair. `next = None` marks a
/// terminal transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelStep {
    pub reward: f64,
    pub next: Option<StateId>,
}

/// Complete enumeration of a deterministic MDP over [`StateId`]s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularModel {
    pub gamma: f64,
    pub steps: BTreeMap<(StateId, Action), ModelStep>,
}

impl TabularModel {
    fn backup(&self, q: &QTable, step: &ModelStep) -> f64 {
        match step.next {
            Some(next) => step.reward + self.gamma * q.max_value(next),
            None => step.reward,
        }
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        let mut last = None;
        self.steps.keys().filter_map(move |(s, _)| {
            if last == Some(*s) {
                None
            } else {
                last = Some(*s);
                Some(*s)
            }
        })
    }
}

/// Max over enumerated pairs of |Q(s,a) - (r + gamma * max_a' Q(s',a'))|.
pub fn bellman_residual(q: &QTable, model: &TabularModel) -> f64 {
    model
        .steps
        .iter()
        .map(|(&(s, a), step)| (q.get(s, a) - model.backup(q, step)).abs())
        .fold(0.0, f64::max)
}

/// Synchronous value iteration on Q until the largest change is below `tol`.
pub fn value_iteration(model: &TabularModel, tol: f64, max_sweeps: usize) -> QTable {
    let mut q = QTable::new();
    for _ in 0..max_sweeps {
        let mut next = QTable::new();
        let mut delta: f64 = 0.0;
        for (&(s, a), step) in &model.steps {
            let v = model.backup(&q, step);
            delta = delta.max((v - q.get(s, a)).abs());
            next.set(s, a, v);
        }
        q = next;
        if delta < tol {
            break;
        }
    }
    q
}

/// Largest |a(s,a) - b(s,a)| over the model's pairs.
pub fn max_q_gap(a: &QTable, b: &QTable, model: &TabularModel) -> f64 {
    model
        .steps
        .keys()
        .map(|&(s, act)| (a.get(s, act) - b.get(s, act)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub x: usize,
    pub y: usize,
    pub q: f64,
}

/// Q-values over every grid cell for one (carrying, target, action) slice,
/// row-major.
pub fn export_q_surface(
    q: &QTable,
    width: usize,
    height: usize,
    carrying: bool,
    target_shelf: Option<GridPos>,
    action: Action,
) -> Vec<SurfacePoint> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let s = StateId {
                robot_pos: GridPos::new(x, y),
                carrying,
                target_shelf,
            };
            out.push(SurfacePoint {
                x,
                y,
                q: q.get(s, action),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sid(x: usize, y: usize) -> StateId {
        StateId {
            robot_pos: GridPos::new(x, y),
            carrying: false,
            target_shelf: Some(GridPos::new(1, 1)),
        }
    }

    #[test]
    fn update_matches_hand_arithmetic() {
        let mut q = QTable::new();
        let s_next = sid(1, 0);
        q.set(s_next, Action::Pick, 2.0);
        let t = Transition {
            s: sid(0, 0),
            a: Action::MoveE,
            r: 1.0,
            s_next,
            terminal: false,
        };
        let v = q_update(&mut q, &t, 0.5, 0.9).unwrap();
        assert!((v - 1.4).abs() < 1e-12);
        assert_eq!(q.get(sid(0, 0), Action::MoveE), v);
    }

    #[test]
    fn terminal_update_drops_bootstrap() {
        let mut q = QTable::new();
        q.set(sid(0, 0), Action::Deliver, 5.0);
        q.set(sid(2, 2), Action::MoveN, 100.0);
        let t = Transition {
            s: sid(0, 0),
            a: Action::Deliver,
            r: 0.0,
            s_next: sid(2, 2),
            terminal: true,
        };
        assert_eq!(q_update(&mut q, &t, 1.0, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let mut q = QTable::new();
        q.set(sid(1, 0), Action::MoveS, 3.0);
        q.set(sid(0, 0), Action::MoveE, 1.0 + 0.9 * 3.0);
        let t = Transition {
            s: sid(0, 0),
            a: Action::MoveE,
            r: 1.0,
            s_next: sid(1, 0),
            terminal: false,
        };
        let before = q.get(t.s, t.a);
        assert_eq!(q_update(&mut q, &t, 0.3, 0.9).unwrap(), before);
    }

    #[test]
    fn rejects_non_finite_reward() {
        let mut q = QTable::new();
        let t = Transition {
            s: sid(0, 0),
            a: Action::Pick,
            r: f64::NAN,
            s_next: sid(0, 0),
            terminal: false,
        };
        assert!(matches!(
            q_update(&mut q, &t, 0.5, 0.9),
            Err(QError::NonFiniteReward(_))
        ));
        assert!(q.is_empty());
    }

    #[test]
    fn greedy_selection_and_tie_break() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = QTable::new();
        assert_eq!(select_action(&q, sid(0, 0), 0.0, &mut rng), Action::MoveN);
        q.set(sid(0, 0), Action::MoveE, 2.0);
        assert_eq!(select_action(&q, sid(0, 0), 0.0, &mut rng), Action::MoveE);
    }

    #[test]
    fn uniform_exploration_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = QTable::new();
        let mut counts = [0usize; Action::COUNT];
        for _ in 0..60_000 {
            counts[select_action(&q, sid(0, 0), 1.0, &mut rng).index()] += 1;
        }
        // 3 sigma of Binomial(60000, 1/6)
        let band = 3.0 * (60_000.0f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() <= band, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let p = QParams {
            alpha: 0.1,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 300,
            episodes: 500,
            max_steps_per_episode: 50,
        };
        assert_eq!(p.epsilon_at(0), 1.0);
        assert!((p.epsilon_at(150) - 0.525).abs() < 1e-12);
        assert!((p.epsilon_at(300) - 0.05).abs() < 1e-12);
        assert!((p.epsilon_at(499) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn params_validation_names_field() {
        let mut p = QParams {
            alpha: 0.0,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 300,
            episodes: 500,
            max_steps_per_episode: 50,
        };
        assert!(p.validate().unwrap_err().to_string().contains("alpha"));
        p.alpha = 0.1;
        p.gamma = 1.0;
        assert!(p.validate().unwrap_err().to_string().contains("gamma"));
        p.gamma = 0.9;
        p.epsilon_end = 1.5;
        assert!(p.validate().unwrap_err().to_string().contains("epsilon_end"));
    }

    #[test]
    fn residual_of_zero_table_is_max_abs_reward() {
        let mut model = TabularModel {
            gamma: 0.9,
            ..Default::default()
        };
        model.steps.insert(
            (sid(0, 0), Action::MoveE),
            ModelStep {
                reward: -0.1,
                next: Some(sid(1, 0)),
            },
        );
        model.steps.insert(
            (sid(1, 0), Action::Deliver),
            ModelStep {
                reward: 10.0,
                next: None,
            },
        );
        model.steps.insert(
            (sid(1, 0), Action::Pick),
            ModelStep {
                reward: -5.0,
                next: Some(sid(1, 0)),
            },
        );
        assert_eq!(bellman_residual(&QTable::new(), &model), 10.0);
        let fixed = value_iteration(&model, 1e-12, 10_000);
        assert!(bellman_residual(&fixed, &model) < 1e-9);
        assert_eq!(model.states().count(), 2);
    }

    #[test]
    fn untrained_surface_is_flat_zero() {
        let s = export_q_surface(&QTable::new(), 3, 2, false, None, Action::Pick);
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|p| p.q == 0.0));
        assert_eq!((s[1].x, s[1].y), (1, 0));
    }

    #[test]
    fn records_round_trip() {
        let mut q = QTable::new();
        q.set(sid(2, 1), Action::Deliver, -0.123456789);
        q.set(
            StateId {
                robot_pos: GridPos::new(0, 0),
                carrying: true,
                target_shelf: None,
            },
            Action::MoveN,
            7.5,
        );
        let back = QTable::from_records(&q.to_records()).unwrap();
        assert_eq!(back, q);
    }
}
