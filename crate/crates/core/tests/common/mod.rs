//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use wps_core::env::TrainingSetup;
use wps_core::qlearning::QParams;
use wps_core::warehouse::{transition, Action, GridPos, Layout, Sku, StockEntry, WarehouseState};

/// 3x3 grid, dropoff (0,0), one shelf directly east of it.
pub fn three_by_three() -> Layout {
    Layout {
        width: 3,
        height: 3,
        shelves: vec![GridPos::new(1, 0)],
        dropoff: GridPos::new(0, 0),
        stock: [(
            Sku::new("A"),
            StockEntry {
                shelf: GridPos::new(1, 0),
                qty: 5,
            },
        )]
        .into(),
    }
}

pub fn single_order_setup() -> TrainingSetup {
    TrainingSetup {
        orders_per_episode: 1,
        random_start: true,
    }
}

/// Training schedule used for the small-world convergence checks.
pub fn small_world_params() -> QParams {
    QParams {
        alpha: 0.5,
        gamma: 0.95,
        epsilon_start: 1.0,
        epsilon_end: 0.2,
        epsilon_decay_episodes: 2000,
        episodes: 5000,
        max_steps_per_episode: 100,
    }
}

fn bfs_key(w: &WarehouseState) -> (GridPos, bool, u64, u64) {
    (
        w.robot_pos,
        w.carrying.is_some(),
        w.orders_completed(),
        w.total_shelf_stock(),
    )
}

/// Fewest ticks until one more order completes, by breadth-first search
/// over the raw transition function.
pub fn bfs_steps_to_complete(start: &WarehouseState) -> Option<u32> {
    let goal = start.orders_completed() + 1;
    let mut seen = HashSet::from([bfs_key(start)]);
    let mut queue = VecDeque::from([(start.clone(), 0u32)]);
    while let Some((w, d)) = queue.pop_front() {
        for a in Action::ALL {
            let (next, _) = transition(&w, a);
            if next.orders_completed() >= goal {
                return Some(d + 1);
            }
            if seen.insert(bfs_key(&next)) {
                queue.push_back((next, d + 1));
            }
        }
    }
    None
}

pub fn sse(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    points.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum()
}

fn ternary_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// Least-squares line found by direct search on the squared error, without
/// the normal equations. The slope is bracketed by the steepest pairwise
/// slope (the OLS slope is a weighted average of those), the intercept by
/// the resulting range of `y - m x`.
pub fn brute_force_line(points: &[(f64, f64)]) -> (f64, f64) {
    let mut max_slope: f64 = 1.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            if p.0 != q.0 {
                max_slope = max_slope.max(((q.1 - p.1) / (q.0 - p.0)).abs());
            }
        }
    }
    let max_x = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let max_y = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let b_range = max_y + max_slope * max_x + 1.0;
    let best_b = |m: f64| ternary_min(-b_range, b_range, |b| sse(points, m, b));
    let m = ternary_min(-max_slope, max_slope, |m| sse(points, m, best_b(m)));
    (m, best_b(m))
}

/// Reward per outcome, restated independently of the library table.
pub fn oracle_reward(outcome: wps_core::warehouse::StepOutcome) -> f64 {
    use wps_core::warehouse::StepOutcome::*;
    match outcome {
        Delivered => 10.0,
        Picked => 2.0,
        PickFailed | DeliverFailed => -5.0,
        Moved | Blocked => -0.1,
    }
}

pub type OracleModel = std::collections::HashMap<(wps_core::StateId, Action), (f64, Option<wps_core::StateId>)>;

/// Single-order MDP of `layout` discovered by search from every floor cell
/// with one queued order for `sku`.
pub fn oracle_model(layout: &Layout, sku: &str) -> OracleModel {
    let mut model = OracleModel::new();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    for pos in layout.floor_cells() {
        let mut w = layout.build().unwrap();
        w.push_order(wps_core::warehouse::Order::single(0, Sku::new(sku), 0))
            .unwrap();
        w.place_robot(pos).unwrap();
        queue.push_back(w);
    }
    while let Some(w) = queue.pop_front() {
        if !seen.insert(bfs_key(&w)) {
            continue;
        }
        for a in Action::ALL {
            let (next, outcome) = transition(&w, a);
            let done = next.open_orders.is_empty();
            model.insert(
                (w.state_id(), a),
                (oracle_reward(outcome), (!done).then(|| next.state_id())),
            );
            if !done {
                queue.push_back(next);
            }
        }
    }
    model
}

/// Q* of an oracle model by Gauss-Seidel sweeps until the change is below
/// `tol`.
pub fn oracle_q_star(
    model: &OracleModel,
    gamma: f64,
    tol: f64,
) -> std::collections::HashMap<(wps_core::StateId, Action), f64> {
    let mut q: std::collections::HashMap<_, f64> = model.keys().map(|k| (*k, 0.0)).collect();
    let mut keys: Vec<_> = model.keys().copied().collect();
    keys.sort();
    loop {
        let mut delta: f64 = 0.0;
        for k in &keys {
            let (r, next) = model[k];
            let v = r + next.map_or(0.0, |s| {
                gamma
                    * Action::ALL
                        .iter()
                        .map(|a| q[&(s, *a)])
                        .fold(f64::NEG_INFINITY, f64::max)
            });
            delta = delta.max((v - q[k]).abs());
            q.insert(*k, v);
        }
        if delta < tol {
            return q;
        }
    }
}
