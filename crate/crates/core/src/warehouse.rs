//! Warehouse world: grid, shelves, orders, a single robot and the
//! deterministic state-transition kernel.
//!
//! The kernel is total. Illegal actions never error; they produce a failure
//! [`StepOutcome`] and still advance the clock by one tick.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub x: usize,
    pub y: usize,
}

impl GridPos {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Manhattan distance of exactly one.
    pub fn is_adjacent(self, other: GridPos) -> bool {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y) == 1
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sku(pub String);

impl Sku {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }
}

impl fmt::Display for Sku {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type Inventory = BTreeMap<Sku, u32>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Cell {
    Aisle,
    Shelf(Inventory),
    DropOff,
}

impl Cell {
    pub fn is_shelf(&self) -> bool {
        matches!(self, Cell::Shelf(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderLine {
    pub sku: Sku,
    pub qty: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Order {
    pub id: u64,
    pub lines: Vec<OrderLine>,
    pub arrival_tick: u64,
}

impl Order {
    pub fn single(id: u64, sku: Sku, arrival_tick: u64) -> Self {
        Self {
            id,
            lines: vec![OrderLine { sku, qty: 1 }],
            arrival_tick,
        }
    }

    fn validate(&self) -> Result<(), WarehouseError> {
        if self.lines.is_empty() {
            return Err(WarehouseError::EmptyOrder(self.id));
        }
        if self.lines.iter().any(|l| l.qty == 0) {
            return Err(WarehouseError::ZeroQuantity(self.id));
        }
        Ok(())
    }
}

/// The fixed action set. Declaration order is the greedy tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    MoveN,
    MoveE,
    MoveS,
    MoveW,
    Pick,
    Deliver,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; Action::COUNT] = [
        Action::MoveN,
        Action::MoveE,
        Action::MoveS,
        Action::MoveW,
        Action::Pick,
        Action::Deliver,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn is_move(self) -> bool {
        matches!(self, Action::MoveN | Action::MoveE | Action::MoveS | Action::MoveW)
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveN => "MoveN",
            Action::MoveE => "MoveE",
            Action::MoveS => "MoveS",
            Action::MoveW => "MoveW",
            Action::Pick => "Pick",
            Action::Deliver => "Deliver",
        }
    }

    pub fn parse(name: &str) -> Option<Action> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepOutcome {
    Moved,
    Blocked,
    Picked,
    PickFailed,
    Delivered,
    DeliverFailed,
}

/// Tabular discretization of a warehouse state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId {
    pub robot_pos: GridPos,
    pub carrying: bool,
    /// `None` is the sentinel: nothing left to pick for the head order.
    pub target_shelf: Option<GridPos>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WarehouseError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("{what} position {pos} is outside the {width}x{height} grid")]
    OutOfBounds {
        what: &'static str,
        pos: GridPos,
        width: usize,
        height: usize,
    },
    #[error("dropoff {0} coincides with a shelf")]
    DropoffOnShelf(GridPos),
    #[error("stock for sku {sku} assigned to {pos}, which is not a shelf")]
    StockOnNonShelf { sku: Sku, pos: GridPos },
    #[error("shelf {0} listed more than once")]
    DuplicateShelf(GridPos),
    #[error("order {0} has no lines")]
    EmptyOrder(u64),
    #[error("order {0} has a line with zero quantity")]
    ZeroQuantity(u64),
}

/// Static description of a warehouse, as loaded from an experiment config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub shelves: Vec<GridPos>,
    pub dropoff: GridPos,
    /// SKU name to the shelf holding it and the starting quantity.
    pub stock: BTreeMap<Sku, StockEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StockEntry {
    pub shelf: GridPos,
    pub qty: u32,
}

impl Layout {
    pub fn build(&self) -> Result<WarehouseState, WarehouseError> {
        build_warehouse(self.width, self.height, &self.shelves, self.dropoff, &self.stock)
    }

    pub fn catalog(&self) -> Vec<Sku> {
        self.stock.keys().cloned().collect()
    }

    pub fn in_bounds(&self, p: GridPos) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn is_shelf(&self, p: GridPos) -> bool {
        self.shelves.contains(&p)
    }

    /// Cells a robot may occupy, row-major.
    pub fn floor_cells(&self) -> Vec<GridPos> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| GridPos::new(x, y)))
            .filter(|p| !self.is_shelf(*p))
            .collect()
    }

    /// Size of the StateId space: |cells| x 2 x (|shelves| + 1).
    pub fn state_space_size(&self) -> usize {
        self.width * self.height * 2 * (self.shelves.len() + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WarehouseState {
    width: usize,
    height: usize,
    grid: Vec<Cell>,
    /// Shelf positions in row-major order; target lookup scans this list.
    shelves: Vec<GridPos>,
    dropoff: GridPos,
    pub robot_pos: GridPos,
    pub carrying: Option<Sku>,
    pub open_orders: VecDeque<Order>,
    /// Units delivered so far against each line of the head order.
    head_filled: Vec<u32>,
    pub tick: u64,
    delivered_items: u64,
    orders_completed: u64,
}

pub fn build_warehouse(
    width: usize,
    height: usize,
    shelf_positions: &[GridPos],
    dropoff: GridPos,
    initial_stock: &BTreeMap<Sku, StockEntry>,
) -> Result<WarehouseState, WarehouseError> {
    if width == 0 || height == 0 {
        return Err(WarehouseError::EmptyGrid { width, height });
    }
    let check = |what: &'static str, pos: GridPos| {
        if pos.x < width && pos.y < height {
            Ok(())
        } else {
            Err(WarehouseError::OutOfBounds {
                what,
                pos,
                width,
                height,
            })
        }
    };

    let mut grid = vec![Cell::Aisle; width * height];
    for &pos in shelf_positions {
        check("shelf", pos)?;
        let cell = &mut grid[pos.y * width + pos.x];
        if cell.is_shelf() {
            return Err(WarehouseError::DuplicateShelf(pos));
        }
        *cell = Cell::Shelf(Inventory::new());
    }
    check("dropoff", dropoff)?;
    if grid[dropoff.y * width + dropoff.x].is_shelf() {
        return Err(WarehouseError::DropoffOnShelf(dropoff));
    }
    grid[dropoff.y * width + dropoff.x] = Cell::DropOff;

    for (sku, entry) in initial_stock {
        check("stock", entry.shelf)?;
        match &mut grid[entry.shelf.y * width + entry.shelf.x] {
            Cell::Shelf(inv) => {
                *inv.entry(sku.clone()).or_insert(0) += entry.qty;
            }
            _ => {
                return Err(WarehouseError::StockOnNonShelf {
                    sku: sku.clone(),
                    pos: entry.shelf,
                })
            }
        }
    }

    let mut shelves = shelf_positions.to_vec();
    shelves.sort_by_key(|p| (p.y, p.x));

    Ok(WarehouseState {
        width,
        height,
        grid,
        shelves,
        dropoff,
        robot_pos: dropoff,
        carrying: None,
        open_orders: VecDeque::new(),
        head_filled: Vec::new(),
        tick: 0,
        delivered_items: 0,
        orders_completed: 0,
    })
}

impl WarehouseState {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dropoff(&self) -> GridPos {
        self.dropoff
    }

    pub fn shelves(&self) -> &[GridPos] {
        &self.shelves
    }

    pub fn cell(&self, pos: GridPos) -> Option<&Cell> {
        if pos.x < self.width && pos.y < self.height {
            Some(&self.grid[pos.y * self.width + pos.x])
        } else {
            None
        }
    }

    pub fn shelf_stock(&self, pos: GridPos, sku: &Sku) -> u32 {
        match self.cell(pos) {
            Some(Cell::Shelf(inv)) => inv.get(sku).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn total_shelf_stock(&self) -> u64 {
        self.grid
            .iter()
            .map(|c| match c {
                Cell::Shelf(inv) => inv.values().map(|&q| u64::from(q)).sum(),
                _ => 0,
            })
            .sum()
    }

    pub fn delivered_items(&self) -> u64 {
        self.delivered_items
    }

    pub fn orders_completed(&self) -> u64 {
        self.orders_completed
    }

    /// Shelf stock + carried + delivered. Constant over an episode.
    pub fn conserved_total(&self) -> u64 {
        self.total_shelf_stock() + u64::from(self.carrying.is_some()) + self.delivered_items
    }

    /// Relocates the robot. Fails if `pos` is out of bounds or a shelf.
    pub fn place_robot(&mut self, pos: GridPos) -> Result<(), WarehouseError> {
        match self.cell(pos) {
            None => Err(WarehouseError::OutOfBounds {
                what: "robot",
                pos,
                width: self.width,
                height: self.height,
            }),
            Some(Cell::Shelf(_)) => Err(WarehouseError::OutOfBounds {
                what: "robot (shelf cell)",
                pos,
                width: self.width,
                height: self.height,
            }),
            Some(_) => {
                self.robot_pos = pos;
                Ok(())
            }
        }
    }

    pub fn push_order(&mut self, order: Order) -> Result<(), WarehouseError> {
        order.validate()?;
        if self.open_orders.is_empty() {
            self.head_filled = vec![0; order.lines.len()];
        }
        self.open_orders.push_back(order);
        Ok(())
    }

    /// SKU the robot should pick next for the head order, accounting for
    /// an item already in hand.
    pub fn next_needed_sku(&self) -> Option<&Sku> {
        let head = self.open_orders.front()?;
        let mut in_hand = self.carrying.as_ref();
        for (line, &filled) in head.lines.iter().zip(&self.head_filled) {
            let mut remaining = line.qty - filled;
            if in_hand == Some(&line.sku) && remaining > 0 {
                remaining -= 1;
                in_hand = None;
            }
            if remaining > 0 {
                return Some(&line.sku);
            }
        }
        None
    }

    /// First shelf in row-major order holding the next needed SKU.
    pub fn target_shelf(&self) -> Option<GridPos> {
        let sku = self.next_needed_sku()?;
        self.shelves.iter().copied().find(|&p| self.shelf_stock(p, sku) > 0)
    }

    pub fn state_id(&self) -> StateId {
        StateId {
            robot_pos: self.robot_pos,
            carrying: self.carrying.is_some(),
            target_shelf: self.target_shelf(),
        }
    }

    /// Whether `Pick` would succeed right now, returning the shelf and SKU.
    pub fn pick_ready(&self) -> Option<(GridPos, Sku)> {
        if self.carrying.is_some() {
            return None;
        }
        let shelf = self.target_shelf()?;
        if !self.robot_pos.is_adjacent(shelf) {
            return None;
        }
        let sku = self.next_needed_sku()?.clone();
        Some((shelf, sku))
    }

    /// Advances the clock without changing anything else.
    pub fn idle(&mut self) {
        self.tick += 1;
    }

    /// In-place form of [`transition`].
    pub fn step(&mut self, action: Action) -> StepOutcome {
        self.tick += 1;
        match action {
            Action::MoveN | Action::MoveE | Action::MoveS | Action::MoveW => {
                let GridPos { x, y } = self.robot_pos;
                let dest = match action {
                    Action::MoveN => y.checked_sub(1).map(|y| GridPos::new(x, y)),
                    Action::MoveS => Some(GridPos::new(x, y + 1)),
                    Action::MoveE => Some(GridPos::new(x + 1, y)),
                    _ => x.checked_sub(1).map(|x| GridPos::new(x, y)),
                };
                match dest.and_then(|d| self.cell(d).map(|c| (d, c))) {
                    Some((d, cell)) if !cell.is_shelf() => {
                        self.robot_pos = d;
                        StepOutcome::Moved
                    }
                    _ => StepOutcome::Blocked,
                }
            }
            Action::Pick => match self.pick_ready() {
                Some((shelf, sku)) => {
                    if let Cell::Shelf(inv) = &mut self.grid[shelf.y * self.width + shelf.x] {
                        if let Some(q) = inv.get_mut(&sku) {
                            *q -= 1;
                            if *q == 0 {
                                inv.remove(&sku);
                            }
                        }
                    }
                    self.carrying = Some(sku);
                    StepOutcome::Picked
                }
                None => StepOutcome::PickFailed,
            },
            Action::Deliver => {
                if self.robot_pos != self.dropoff {
                    return StepOutcome::DeliverFailed;
                }
                let Some(sku) = self.carrying.take() else {
                    return StepOutcome::DeliverFailed;
                };
                self.delivered_items += 1;
                self.credit_head(&sku);
                StepOutcome::Delivered
            }
        }
    }

    fn credit_head(&mut self, sku: &Sku) {
        let Some(head) = self.open_orders.front() else {
            return;
        };
        if let Some(i) = head
            .lines
            .iter()
            .zip(&self.head_filled)
            .position(|(l, &f)| &l.sku == sku && f < l.qty)
        {
            self.head_filled[i] += 1;
        }
        let done = head.lines.iter().zip(&self.head_filled).all(|(l, &f)| f >= l.qty);
        if done {
            self.open_orders.pop_front();
            self.orders_completed += 1;
            self.head_filled = self
                .open_orders
                .front()
                .map(|o| vec![0; o.lines.len()])
                .unwrap_or_default();
        }
    }
}

/// Pure transition: returns the successor state and the step outcome.
pub fn transition(state: &WarehouseState, action: Action) -> (WarehouseState, StepOutcome) {
    let mut next = state.clone();
    let outcome = next.step(action);
    (next, outcome)
}

pub fn state_id(state: &WarehouseState) -> StateId {
    state.state_id()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stock(entries: &[(&str, GridPos, u32)]) -> BTreeMap<Sku, StockEntry> {
        entries
            .iter()
            .map(|&(s, shelf, qty)| (Sku::new(s), StockEntry { shelf, qty }))
            .collect()
    }

    fn tiny() -> WarehouseState {
        let mut w = build_warehouse(
            3,
            3,
            &[GridPos::new(1, 0)],
            GridPos::new(0, 0),
            &stock(&[("A", GridPos::new(1, 0), 5)]),
        )
        .unwrap();
        w.push_order(Order::single(0, Sku::new("A"), 0)).unwrap();
        w
    }

    #[test]
    fn builds_with_interior_shelf() {
        let w = build_warehouse(
            3,
            3,
            &[GridPos::new(2, 1)],
            GridPos::new(0, 0),
            &stock(&[("A", GridPos::new(2, 1), 5)]),
        )
        .unwrap();
        assert_eq!(w.tick, 0);
        assert_eq!(w.robot_pos, GridPos::new(0, 0));
        assert!(w.carrying.is_none());
        assert!(w.open_orders.is_empty());
        assert_eq!(w.conserved_total(), 5);
    }

    #[test]
    fn rejects_dropoff_on_shelf() {
        let err = build_warehouse(1, 1, &[GridPos::new(0, 0)], GridPos::new(0, 0), &BTreeMap::new()).unwrap_err();
        assert_eq!(err, WarehouseError::DropoffOnShelf(GridPos::new(0, 0)));
    }

    #[test]
    fn rejects_out_of_bounds_and_stock_off_shelf() {
        let err = build_warehouse(2, 2, &[GridPos::new(5, 0)], GridPos::new(0, 0), &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, WarehouseError::OutOfBounds { what: "shelf", .. }));

        let err = build_warehouse(
            2,
            2,
            &[GridPos::new(1, 1)],
            GridPos::new(0, 0),
            &stock(&[("A", GridPos::new(1, 0), 1)]),
        )
        .unwrap_err();
        assert!(matches!(err, WarehouseError::StockOnNonShelf { .. }));
        assert!(err.to_string().contains("not a shelf"));
    }

    #[test]
    fn move_west_from_corner_is_blocked() {
        let w = tiny();
        let (next, outcome) = transition(&w, Action::MoveW);
        assert_eq!(outcome, StepOutcome::Blocked);
        assert_eq!(next.robot_pos, w.robot_pos);
        assert_eq!(next.tick, 1);
    }

    #[test]
    fn moving_into_shelf_is_blocked() {
        let w = tiny();
        let (next, outcome) = transition(&w, Action::MoveE);
        assert_eq!(outcome, StepOutcome::Blocked);
        assert_eq!(next.robot_pos, GridPos::new(0, 0));
    }

    #[test]
    fn pick_takes_one_unit() {
        let w = tiny();
        let (next, outcome) = transition(&w, Action::Pick);
        assert_eq!(outcome, StepOutcome::Picked);
        assert_eq!(next.carrying, Some(Sku::new("A")));
        assert_eq!(next.shelf_stock(GridPos::new(1, 0), &Sku::new("A")), 4);
        assert_eq!(next.conserved_total(), 5);
    }

    #[test]
    fn pick_then_deliver_completes_order() {
        let w = tiny();
        let (w, _) = transition(&w, Action::Pick);
        let (w, outcome) = transition(&w, Action::Deliver);
        assert_eq!(outcome, StepOutcome::Delivered);
        assert_eq!(w.tick, 2);
        assert!(w.open_orders.is_empty());
        assert_eq!(w.orders_completed(), 1);
        assert_eq!(w.conserved_total(), 5);
    }

    #[test]
    fn illegal_pick_and_deliver_fail() {
        let mut w = tiny();
        w.place_robot(GridPos::new(0, 2)).unwrap();
        assert_eq!(w.step(Action::Pick), StepOutcome::PickFailed);
        assert_eq!(w.step(Action::Deliver), StepOutcome::DeliverFailed);
        assert_eq!(w.tick, 2);
    }

    #[test]
    fn state_id_ignores_tick_and_uses_sentinel() {
        let w = build_warehouse(
            3,
            3,
            &[GridPos::new(1, 0)],
            GridPos::new(0, 0),
            &stock(&[("A", GridPos::new(1, 0), 5)]),
        )
        .unwrap();
        assert_eq!(w.state_id().target_shelf, None);

        let a = tiny();
        let mut b = tiny();
        b.tick = 99;
        assert_eq!(state_id(&a), state_id(&b));
        assert_eq!(a.state_id().target_shelf, Some(GridPos::new(1, 0)));
    }

    #[test]
    fn multi_line_order_keeps_target_while_carrying() {
        let mut w = build_warehouse(
            4,
            3,
            &[GridPos::new(1, 1), GridPos::new(3, 1)],
            GridPos::new(0, 0),
            &stock(&[("A", GridPos::new(1, 1), 3), ("B", GridPos::new(3, 1), 3)]),
        )
        .unwrap();
        w.push_order(Order {
            id: 7,
            lines: vec![
                OrderLine {
                    sku: Sku::new("A"),
                    qty: 1,
                },
                OrderLine {
                    sku: Sku::new("B"),
                    qty: 1,
                },
            ],
            arrival_tick: 0,
        })
        .unwrap();
        w.place_robot(GridPos::new(1, 0)).unwrap();
        assert_eq!(w.step(Action::Pick), StepOutcome::Picked);
        assert_eq!(w.state_id().target_shelf, Some(GridPos::new(3, 1)));
        w.place_robot(GridPos::new(0, 0)).unwrap();
        assert_eq!(w.step(Action::Deliver), StepOutcome::Delivered);
        assert_eq!(w.orders_completed(), 0);
        assert_eq!(w.next_needed_sku(), Some(&Sku::new("B")));
    }

    #[test]
    fn rejects_empty_orders() {
        let mut w = tiny();
        let err = w
            .push_order(Order {
                id: 3,
                lines: vec![],
                arrival_tick: 0,
            })
            .unwrap_err();
        assert_eq!(err, WarehouseError::EmptyOrder(3));
    }

    #[test]
    fn action_names_round_trip() {
        for a in Action::ALL {
            assert_eq!(Action::parse(a.name()), Some(a));
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
    }
}
