//! The picking MDP used for training: rewards, an episodic environment over
//! a [`Layout`], and the exact single-order model used as a convergence
//! reference.

use std::convert::Infallible;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::qlearning::{Environment, ModelStep, TabularModel, Transition};
use crate::warehouse::{Action, GridPos, Layout, Order, Sku, StateId, StepOutcome, WarehouseError, WarehouseState};

pub const REWARD_DELIVERED: f64 = 10.0;
pub const REWARD_PICKED: f64 = 2.0;
pub const REWARD_FAILED: f64 = -5.0;
pub const REWARD_STEP: f64 = -0.1;

pub fn reward(outcome: StepOutcome) -> f64 {
    match outcome {
        StepOutcome::Delivered => REWARD_DELIVERED,
        StepOutcome::Picked => REWARD_PICKED,
        StepOutcome::PickFailed | StepOutcome::DeliverFailed => REWARD_FAILED,
        StepOutcome::Moved | StepOutcome::Blocked => REWARD_STEP,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetup {
    /// Single-line orders queued at the start of each episode.
    pub orders_per_episode: u32,
    /// Start each episode from a uniformly drawn floor cell instead of the
    /// dropoff.
    pub random_start: bool,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        Self {
            orders_per_episode: 1,
            random_start: true,
        }
    }
}

/// Episodes end (terminal) once every queued order is delivered. Perception
/// and faults are off: the agent learns the ideal warehouse.
#[derive(Debug, Clone)]
pub struct PickingEnv {
    layout: Layout,
    setup: TrainingSetup,
    pristine: WarehouseState,
    floor: Vec<GridPos>,
    catalog: Vec<Sku>,
    state: WarehouseState,
}

impl PickingEnv {
    pub fn new(layout: Layout, setup: TrainingSetup) -> Result<Self, WarehouseError> {
        let pristine = layout.build()?;
        let floor = layout.floor_cells();
        let catalog = layout.catalog();
        Ok(Self {
            state: pristine.clone(),
            layout,
            setup,
            pristine,
            floor,
            catalog,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn state(&self) -> &WarehouseState {
        &self.state
    }
}

impl Environment for PickingEnv {
    type Error = Infallible;

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StateId, Infallible> {
        self.state = self.pristine.clone();
        if !self.catalog.is_empty() {
            for id in 0..self.setup.orders_per_episode {
                let sku = self.catalog[rng.random_range(0..self.catalog.len())].clone();
                self.state
                    .push_order(Order::single(u64::from(id), sku, 0))
                    .expect("single-line order is valid");
            }
        }
        if self.setup.random_start {
            let pos = self.floor[rng.random_range(0..self.floor.len())];
            self.state.place_robot(pos).expect("floor cell");
        }
        Ok(self.state.state_id())
    }

    fn step<R: Rng + ?Sized>(&mut self, action: Action, _rng: &mut R) -> Result<Transition, Infallible> {
        let s = self.state.state_id();
        let outcome = self.state.step(action);
        Ok(Transition {
            s,
            a: action,
            r: reward(outcome),
            s_next: self.state.state_id(),
            terminal: self.state.open_orders.is_empty(),
        })
    }
}

/// Exact model of the single-order world: every floor cell, every stocked
/// shelf as the target, carrying or not.
pub fn single_order_model(layout: &Layout, gamma: f64) -> Result<TabularModel, WarehouseError> {
    let base = layout.build()?;
    let mut model = TabularModel {
        gamma,
        ..Default::default()
    };
    for shelf in base.shelves().to_vec() {
        let Some((sku, _)) = layout.stock.iter().find(|(_, e)| e.shelf == shelf && e.qty > 0) else {
            continue;
        };
        for pos in layout.floor_cells() {
            for carrying in [false, true] {
                let mut w = base.clone();
                w.push_order(Order::single(0, sku.clone(), 0))?;
                if carrying {
                    let access = adjacent_floor(layout, shelf).ok_or(WarehouseError::OutOfBounds {
                        what: "shelf without floor access",
                        pos: shelf,
                        width: layout.width,
                        height: layout.height,
                    })?;
                    w.place_robot(access)?;
                    let out = w.step(Action::Pick);
                    debug_assert_eq!(out, StepOutcome::Picked);
                }
                w.place_robot(pos)?;
                let s = w.state_id();
                for a in Action::ALL {
                    if model.steps.contains_key(&(s, a)) {
                        continue;
                    }
                    let mut next = w.clone();
                    let outcome = next.step(a);
                    let step = ModelStep {
                        reward: reward(outcome),
                        next: if next.open_orders.is_empty() {
                            None
                        } else {
                            Some(next.state_id())
                        },
                    };
                    model.steps.insert((s, a), step);
                }
            }
        }
    }
    Ok(model)
}

fn adjacent_floor(layout: &Layout, shelf: GridPos) -> Option<GridPos> {
    layout.floor_cells().into_iter().find(|p| p.is_adjacent(shelf))
}
