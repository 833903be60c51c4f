//! Browser demo for the warehouse picking simulator.
//!
//! Each export takes plain numbers, runs a small seeded computation with
//! `wps-core` and returns a JSON string for the page to draw. The same
//! computations are available natively through the `*_view` functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;
use wps_core::bench::train_policy;
use wps_core::env::{single_order_model, PickingEnv, TrainingSetup};
use wps_core::metrics::{
    histogram, ols_fit, summarize, Histogram, RegressionFit, SummaryStats, SEVERITY_HI, SEVERITY_LO,
};
use wps_core::perception::{builtin_spec_by_name, instantiate, ClassifierSpec};
use wps_core::qlearning::{bellman_residual, train, QParams, QTable};
use wps_core::sim::{measure_run, stream_rng, SeverityCoefficients, Stream};
use wps_core::warehouse::{Action, GridPos, Layout, Order, Sku, StateId, StockEntry, WarehouseState};
use wps_core::ExperimentConfig;

pub const MAX_GRID: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceView {
    pub width: usize,
    pub height: usize,
    pub shelf: GridPos,
    pub dropoff: GridPos,
    pub action: String,
    pub carrying: bool,
    pub episodes: u32,
    /// Row-major Q-values; `None` on the shelf cell.
    pub values: Vec<Option<f64>>,
    /// Greedy action per cell, row-major; `None` on the shelf cell.
    pub greedy: Vec<Option<String>>,
    /// Robot positions of a greedy rollout from the dropoff until the order
    /// is delivered.
    pub path: Vec<GridPos>,
    pub delivered: bool,
    pub bellman_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeverityPoint {
    pub severity: u8,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeverityView {
    pub replicates: u32,
    pub max_steps: u64,
    pub coefficients: SeverityCoefficients,
    pub points: Vec<SeverityPoint>,
    pub level_means: Vec<(u8, f64)>,
    pub fit: RegressionFit,
    pub target: [(f64, f64); 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyView {
    pub spec: ClassifierSpec,
    pub summary: SummaryStats,
    pub histogram: Histogram,
}

fn small_layout(width: usize, height: usize, shelf: GridPos) -> Result<Layout, String> {
    if !(2..=MAX_GRID).contains(&width) || !(2..=MAX_GRID).contains(&height) {
        return Err(format!("grid must be between 2x2 and {MAX_GRID}x{MAX_GRID}"));
    }
    let dropoff = GridPos::new(0, 0);
    if shelf == dropoff {
        return Err("the shelf cannot sit on the dropoff".into());
    }
    let layout = Layout {
        width,
        height,
        shelves: vec![shelf],
        dropoff,
        stock: [(
            Sku::new("A"),
            StockEntry {
                shelf,
                qty: u32::MAX / 2,
            },
        )]
        .into(),
    };
    layout.build().map_err(|e| e.to_string())?;
    Ok(layout)
}

fn one_order_world(layout: &Layout) -> WarehouseState {
    let mut w = layout.build().expect("validated layout");
    w.push_order(Order::single(0, Sku::new("A"), 0)).expect("stocked sku");
    w
}

/// State of the robot standing on `pos`, taken from the real dynamics.
fn state_at(layout: &Layout, pos: GridPos, carrying: bool) -> Option<StateId> {
    let mut w = one_order_world(layout);
    if carrying {
        let beside = layout
            .floor_cells()
            .into_iter()
            .find(|c| c.is_adjacent(layout.shelves[0]))?;
        w.place_robot(beside).ok()?;
        w.step(Action::Pick);
    }
    w.place_robot(pos).ok()?;
    Some(w.state_id())
}

fn greedy_path(layout: &Layout, q: &QTable) -> (Vec<GridPos>, bool) {
    let mut w = one_order_world(layout);
    let mut path = vec![w.robot_pos];
    let limit = 4 * layout.width * layout.height;
    while w.orders_completed() == 0 && path.len() <= limit {
        w.step(q.greedy(w.state_id()));
        path.push(w.robot_pos);
    }
    (path, w.orders_completed() > 0)
}

/// Trains on a one-shelf grid and slices the Q-table for one action.
#[allow(clippy::too_many_arguments)]
pub fn surface_view(
    width: usize,
    height: usize,
    shelf_x: usize,
    shelf_y: usize,
    action: &str,
    carrying: bool,
    episodes: u32,
    seed: u32,
) -> Result<SurfaceView, String> {
    let shelf = GridPos::new(shelf_x, shelf_y);
    let layout = small_layout(width, height, shelf)?;
    let action = Action::parse(action).ok_or_else(|| format!("unknown action `{action}`"))?;
    if !(1..=20_000).contains(&episodes) {
        return Err("episodes must be between 1 and 20000".into());
    }
    let params = QParams {
        alpha: 0.5,
        gamma: 0.95,
        epsilon_start: 1.0,
        epsilon_end: 0.2,
        epsilon_decay_episodes: (episodes * 2 / 5).max(1),
        episodes,
        max_steps_per_episode: (8 * width * height) as u32,
    };
    let setup = TrainingSetup {
        orders_per_episode: 1,
        random_start: true,
    };
    let mut env = PickingEnv::new(layout.clone(), setup).map_err(|e| e.to_string())?;
    let Ok((q, _)) = train(&mut env, &params, &mut ChaCha8Rng::seed_from_u64(seed.into()));
    let model = single_order_model(&layout, params.gamma).map_err(|e| e.to_string())?;

    let mut values = Vec::with_capacity(width * height);
    let mut greedy = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            match state_at(&layout, GridPos::new(x, y), carrying) {
                Some(s) => {
                    values.push(Some(q.get(s, action)));
                    greedy.push(Some(q.greedy(s).name().to_string()));
                }
                None => {
                    values.push(None);
                    greedy.push(None);
                }
            }
        }
    }
    let (path, delivered) = greedy_path(&layout, &q);
    Ok(SurfaceView {
        width,
        height,
        shelf,
        dropoff: layout.dropoff,
        action: action.name().to_string(),
        carrying,
        episodes,
        values,
        greedy,
        path,
        delivered,
        bellman_residual: bellman_residual(&q, &model),
    })
}

/// Scores the proposed system at every severity level on the default
/// warehouse and fits a line through the run-level scores.
pub fn severity_view(
    replicates: u32,
    max_steps: u64,
    slip_per_level: f64,
    degradation_per_level: f64,
    seed: u32,
) -> Result<SeverityView, String> {
    if !(1..=50).contains(&replicates) {
        return Err("replicates must be between 1 and 50".into());
    }
    if !(100..=40_000).contains(&max_steps) {
        return Err("max_steps must be between 100 and 40000".into());
    }
    let coefficients = SeverityCoefficients {
        slip_per_level,
        degradation_per_level,
    };
    coefficients.validate().map_err(|e| e.to_string())?;

    let mut cfg = ExperimentConfig::default_config();
    cfg.base_seed = seed.into();
    cfg.max_steps = max_steps;
    cfg.severity_coefficients = coefficients;
    let mut sweep = cfg
        .only_sweep("severity")
        .ok_or("default config has no severity sweep")?;
    sweep.sweeps = Some(
        sweep
            .sweeps()
            .into_iter()
            .map(|mut s| {
                s.replicates = replicates;
                s
            })
            .collect(),
    );
    let (q, _) = train_policy(&cfg).map_err(|e| e.to_string())?;

    let mut points = Vec::new();
    for spec in sweep.run_plan() {
        let m = measure_run(&spec.sim, &&q).map_err(|e| e.to_string())?;
        points.push(SeverityPoint {
            severity: spec.severity,
            score: m.performance_score,
        });
    }
    let mut level_means = Vec::new();
    for level in 1..=10u8 {
        let scores: Vec<f64> = points.iter().filter(|p| p.severity == level).map(|p| p.score).collect();
        if let Ok(s) = summarize(&scores) {
            level_means.push((level, s.mean));
        }
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (f64::from(p.severity), p.score)).collect();
    let fit = ols_fit(&xy).map_err(|e| e.to_string())?;
    Ok(SeverityView {
        replicates,
        max_steps,
        coefficients,
        points,
        level_means,
        fit,
        target: [SEVERITY_LO, SEVERITY_HI],
    })
}

/// Draws per-run accuracies for a built-in classifier and bins them in
/// one-point bins across its support.
pub fn accuracy_view(classifier: &str, runs: u32, seed: u32) -> Result<AccuracyView, String> {
    let spec = builtin_spec_by_name(classifier).map_err(|e| e.to_string())?;
    if !(1..=100_000).contains(&runs) {
        return Err("runs must be between 1 and 100000".into());
    }
    let draws: Vec<f64> = (0..u64::from(runs))
        .map(|i| 100.0 * instantiate(&spec, &mut stream_rng(u64::from(seed) + i, Stream::Classifier)).run_accuracy)
        .collect();
    let summary = summarize(&draws).map_err(|e| e.to_string())?;
    let histogram = histogram(&draws, spec.min_acc.floor(), spec.max_acc.ceil(), 1.0).map_err(|e| e.to_string())?;
    Ok(AccuracyView {
        spec,
        summary,
        histogram,
    })
}

fn to_json<T: Serialize>(view: Result<T, String>) -> Result<String, JsError> {
    let view = view.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn q_surface(
    width: usize,
    height: usize,
    shelf_x: usize,
    shelf_y: usize,
    action: &str,
    carrying: bool,
    episodes: u32,
    seed: u32,
) -> Result<String, JsError> {
    to_json(surface_view(
        width, height, shelf_x, shelf_y, action, carrying, episodes, seed,
    ))
}

#[wasm_bindgen]
pub fn severity_curve(
    replicates: u32,
    max_steps: u32,
    slip_per_level: f64,
    degradation_per_level: f64,
    seed: u32,
) -> Result<String, JsError> {
    to_json(severity_view(
        replicates,
        max_steps.into(),
        slip_per_level,
        degradation_per_level,
        seed,
    ))
}

#[wasm_bindgen]
pub fn accuracy_histogram(classifier: &str, runs: u32, seed: u32) -> Result<String, JsError> {
    to_json(accuracy_view(classifier, runs, seed))
}
