//! Two-agent cooperative kitchen gridworld.
//!
//! Agent 0 is the teammate, agent 1 the controlled agent. Both act
//! simultaneously; the transition is deterministic and the team shares one
//! reward signal. Wall cells double as counters: an agent facing a wall can
//! put down what it holds, or pick up what is lying there.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `(row, col)` grid coordinate.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tile {
    Wall,
    Floor,
    OnionPile,
    PlatePile,
    Pot,
    ServeWindow,
}

impl Tile {
    /// Map character -> tile. Agent markers `1` and `2` stand on floor.
    ///
    /// | char | tile        |
    /// |------|-------------|
    /// | `W`  | Wall        |
    /// | ` `  | Floor       |
    /// | `O`  | OnionPile   |
    /// | `D`  | PlatePile   |
    /// | `P`  | Pot         |
    /// | `X`  | ServeWindow |
    pub fn from_char(c: char) -> Option<Tile> {
        Some(match c {
            'W' => Tile::Wall,
            ' ' | '1' | '2' => Tile::Floor,
            'O' => Tile::OnionPile,
            'D' => Tile::PlatePile,
            'P' => Tile::Pot,
            'X' => Tile::ServeWindow,
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            Tile::Wall => 'W',
            Tile::Floor => ' ',
            Tile::OnionPile => 'O',
            Tile::PlatePile => 'D',
            Tile::Pot => 'P',
            Tile::ServeWindow => 'X',
        }
    }

    pub fn station(self) -> Option<Station> {
        match self {
            Tile::OnionPile => Some(Station::OnionPile),
            Tile::PlatePile => Some(Station::PlatePile),
            Tile::Pot => Some(Station::Pot),
            Tile::ServeWindow => Some(Station::ServeWindow),
            Tile::Wall | Tile::Floor => None,
        }
    }
}

/// Interactive station kinds, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Station {
    OnionPile,
    Pot,
    PlatePile,
    ServeWindow,
}

impl Station {
    pub const ALL: [Station; 4] = [
        Station::OnionPile,
        Station::Pot,
        Station::PlatePile,
        Station::ServeWindow,
    ];

    pub fn tile(self) -> Tile {
        match self {
            Station::OnionPile => Tile::OnionPile,
            Station::Pot => Tile::Pot,
            Station::PlatePile => Tile::PlatePile,
            Station::ServeWindow => Tile::ServeWindow,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Station::OnionPile => "OnionPile",
            Station::Pot => "Pot",
            Station::PlatePile => "PlatePile",
            Station::ServeWindow => "ServeWindow",
        }
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    /// Tie-break order used everywhere a direction has to be chosen.
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::South => (1, 0),
            Direction::East => (0, 1),
            Direction::West => (0, -1),
        }
    }

    pub fn action(self) -> Action {
        match self {
            Direction::North => Action::North,
            Direction::South => Action::South,
            Direction::East => Action::East,
            Direction::West => Action::West,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    North,
    South,
    East,
    West,
    Stay,
    Interact,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::North,
        Action::South,
        Action::East,
        Action::West,
        Action::Stay,
        Action::Interact,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::North => Some(Direction::North),
            Action::South => Some(Direction::South),
            Action::East => Some(Direction::East),
            Action::West => Some(Direction::West),
            Action::Stay | Action::Interact => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::North => "North",
            Action::South => "South",
            Action::East => "East",
            Action::West => "West",
            Action::Stay => "Stay",
            Action::Interact => "Interact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeldItem {
    Nothing,
    Onion,
    Plate,
    Soup,
}

impl HeldItem {
    pub const ALL: [HeldItem; 4] = [
        HeldItem::Nothing,
        HeldItem::Onion,
        HeldItem::Plate,
        HeldItem::Soup,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HeldItem::Nothing => "Nothing",
            HeldItem::Onion => "Onion",
            HeldItem::Plate => "Plate",
            HeldItem::Soup => "Soup",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("layout is empty")]
    Empty,
    #[error("row {row} has width {width}, expected {expected}")]
    NonRectangular {
        row: usize,
        width: usize,
        expected: usize,
    },
    #[error("unknown character {ch:?} at ({row}, {col})")]
    UnknownChar { ch: char, row: usize, col: usize },
    #[error("layout has no {0} station")]
    MissingStation(Station),
    #[error("expected exactly one '1' and one '2' agent marker, found {0} markers")]
    WrongAgentCount(usize),
    #[error("boundary cell ({row}, {col}) is walkable floor")]
    OpenBoundary { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub grid: Vec<Vec<Tile>>,
    pub start_positions: [Cell; 2],
}

impl Layout {
    /// Parse an ASCII map. `1` marks the teammate start, `2` the controlled
    /// agent start. Trailing blank lines are ignored.
    pub fn parse(name: &str, text: &str) -> Result<Layout, LayoutError> {
        let mut lines: Vec<&str> = text.lines().collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        if lines.is_empty() {
            return Err(LayoutError::Empty);
        }
        let width = lines[0].chars().count();
        if width == 0 {
            return Err(LayoutError::Empty);
        }
        let height = lines.len();
        let mut grid = Vec::with_capacity(height);
        let mut markers: [Vec<Cell>; 2] = [Vec::new(), Vec::new()];
        for (row, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != width {
                return Err(LayoutError::NonRectangular {
                    row,
                    width: chars.len(),
                    expected: width,
                });
            }
            let mut tiles = Vec::with_capacity(width);
            for (col, &ch) in chars.iter().enumerate() {
                let tile = Tile::from_char(ch).ok_or(LayoutError::UnknownChar { ch, row, col })?;
                match ch {
                    '1' => markers[0].push((row, col)),
                    '2' => markers[1].push((row, col)),
                    _ => {}
                }
                tiles.push(tile);
            }
            grid.push(tiles);
        }
        let marker_count = markers[0].len() + markers[1].len();
        if markers[0].len() != 1 || markers[1].len() != 1 {
            return Err(LayoutError::WrongAgentCount(marker_count));
        }
        for station in Station::ALL {
            if !grid.iter().flatten().any(|&t| t == station.tile()) {
                return Err(LayoutError::MissingStation(station));
            }
        }
        for (row, tiles) in grid.iter().enumerate() {
            for (col, &tile) in tiles.iter().enumerate() {
                let edge = row == 0 || col == 0 || row + 1 == height || col + 1 == width;
                if edge && tile == Tile::Floor {
                    return Err(LayoutError::OpenBoundary { row, col });
                }
            }
        }
        Ok(Layout {
            name: name.to_string(),
            width,
            height,
            grid,
            start_positions: [markers[0][0], markers[1][0]],
        })
    }

    pub fn tile(&self, cell: Cell) -> Tile {
        self.grid[cell.0][cell.1]
    }

    /// Neighbour of `cell` in direction `dir`, if inside the grid.
    pub fn neighbor(&self, cell: Cell, dir: Direction) -> Option<Cell> {
        let (dr, dc) = dir.delta();
        let r = cell.0.checked_add_signed(dr)?;
        let c = cell.1.checked_add_signed(dc)?;
        (r < self.height && c < self.width).then_some((r, c))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| (r, c)))
    }

    pub fn station_cells(&self, station: Station) -> Vec<Cell> {
        self.cells()
            .filter(|&c| self.tile(c) == station.tile())
            .collect()
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        for (row, tiles) in self.grid.iter().enumerate() {
            for (col, tile) in tiles.iter().enumerate() {
                let ch = if self.start_positions[0] == (row, col) {
                    '1'
                } else if self.start_positions[1] == (row, col) {
                    '2'
                } else {
                    tile.to_char()
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

pub const CRAMPED_ROOM: &str = include_str!("../data/layouts/cramped_room.layout");
pub const ASYMMETRIC_ADVANTAGE: &str = include_str!("../data/layouts/asymmetric_advantage.layout");
pub const COORDINATION_RING: &str = include_str!("../data/layouts/coordination_ring.layout");

/// Names of the layouts compiled into the crate.
pub const SHIPPED_LAYOUTS: [&str; 3] =
    ["cramped_room", "asymmetric_advantage", "coordination_ring"];

/// Look up one of the compiled-in layouts by name.
pub fn shipped_layout(name: &str) -> Option<Arc<Layout>> {
    let text = match name {
        "cramped_room" => CRAMPED_ROOM,
        "asymmetric_advantage" => ASYMMETRIC_ADVANTAGE,
        "coordination_ring" => COORDINATION_RING,
        _ => return None,
    };
    Some(Arc::new(
        Layout::parse(name, text).expect("shipped layouts are valid"),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub horizon: u32,
    pub reward_per_delivery: f64,
    pub cook_time: u32,
    pub gamma: f64,
    /// Steps within which a counter item picked up by the other agent
    /// counts as a handoff.
    pub handoff_window: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 400,
            reward_per_delivery: 20.0,
            cook_time: 20,
            gamma: 1.0,
            handoff_window: 10,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode is over: t = {t}, horizon = {horizon}")]
    EpisodeOver { t: u32, horizon: u32 },
    #[error("invalid env config: {0}")]
    InvalidConfig(String),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon < 1 {
            return Err(EnvError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.reward_per_delivery.is_nan() || self.reward_per_delivery <= 0.0 {
            return Err(EnvError::InvalidConfig(
                "reward_per_delivery must be > 0".into(),
            ));
        }
        if self.cook_time < 1 {
            return Err(EnvError::InvalidConfig("cook_time must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(EnvError::InvalidConfig("gamma must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Cell,
    pub facing: Direction,
    pub held: HeldItem,
}

impl AgentState {
    /// Cell the agent is facing, if inside the grid.
    pub fn facing_cell(&self, layout: &Layout) -> Option<Cell> {
        layout.neighbor(self.position, self.facing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PotState {
    pub onion_count: u8,
    pub cook_timer: u32,
    pub ready: bool,
}

impl PotState {
    pub fn is_cooking(&self) -> bool {
        self.cook_timer > 0
    }

    /// Can take another onion.
    pub fn accepts_onion(&self) -> bool {
        self.onion_count < 3 && !self.is_cooking() && !self.ready
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pot {
    pub cell: Cell,
    pub state: PotState,
}

/// Item lying on a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterItem {
    pub cell: Cell,
    pub item: HeldItem,
    pub placed_by: usize,
    pub placed_at: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub layout: Arc<Layout>,
    pub agents: [AgentState; 2],
    /// Sorted by cell.
    pub pots: Vec<Pot>,
    /// Sorted by cell.
    pub counters: Vec<CounterItem>,
    pub t: u32,
    pub seed: u64,
}

impl GridState {
    pub fn pot(&self, cell: Cell) -> Option<&PotState> {
        self.pots.iter().find(|p| p.cell == cell).map(|p| &p.state)
    }

    fn pot_mut(&mut self, cell: Cell) -> Option<&mut PotState> {
        self.pots
            .iter_mut()
            .find(|p| p.cell == cell)
            .map(|p| &mut p.state)
    }

    pub fn counter_item(&self, cell: Cell) -> Option<&CounterItem> {
        self.counters.iter().find(|c| c.cell == cell)
    }

    /// ASCII dump with agents drawn as `1`/`2` and pot fill levels as digits
    /// on a second line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in 0..self.layout.height {
            for c in 0..self.layout.width {
                let ch = if self.agents[0].position == (r, c) {
                    '1'
                } else if self.agents[1].position == (r, c) {
                    '2'
                } else if self.counter_item((r, c)).is_some() {
                    '*'
                } else {
                    self.layout.tile((r, c)).to_char()
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "t={} held=[{}, {}] pots=[",
            self.t,
            self.agents[0].held.name(),
            self.agents[1].held.name()
        ));
        let pots: Vec<String> = self
            .pots
            .iter()
            .map(|p| {
                format!(
                    "{}/{}{}",
                    p.state.onion_count,
                    p.state.cook_timer,
                    if p.state.ready { "!" } else { "" }
                )
            })
            .collect();
        out.push_str(&pots.join(", "));
        out.push_str("]\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepEvents {
    pub delivered: bool,
    pub pot_interaction: bool,
    pub plate_pickup: bool,
    pub onion_pickup: bool,
    pub blocked: bool,
    pub handoff: bool,
}

impl StepEvents {
    pub fn any(&self) -> bool {
        self.delivered
            || self.pot_interaction
            || self.plate_pickup
            || self.onion_pickup
            || self.blocked
            || self.handoff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: GridState,
    pub reward: f64,
    pub events: [StepEvents; 2],
}

/// Start state: agents at their start cells facing north, empty hands,
/// empty pots. `seed` is recorded for provenance only; dynamics are
/// deterministic.
pub fn reset(layout: Arc<Layout>, _cfg: &EnvConfig, seed: u64) -> GridState {
    let agent = |i: usize| AgentState {
        position: layout.start_positions[i],
        facing: Direction::North,
        held: HeldItem::Nothing,
    };
    let pots = layout
        .station_cells(Station::Pot)
        .into_iter()
        .map(|cell| Pot {
            cell,
            state: PotState::default(),
        })
        .collect();
    GridState {
        agents: [agent(0), agent(1)],
        pots,
        counters: Vec::new(),
        t: 0,
        seed,
        layout,
    }
}

pub fn step(
    state: &GridState,
    actions: [Action; 2],
    cfg: &EnvConfig,
) -> Result<StepOutcome, EnvError> {
    if state.t >= cfg.horizon {
        return Err(EnvError::EpisodeOver {
            t: state.t,
            horizon: cfg.horizon,
        });
    }
    let layout = Arc::clone(&state.layout);
    let mut next = state.clone();
    let mut events = [StepEvents::default(); 2];
    let mut reward = 0.0;

    for pot in &mut next.pots {
        if pot.state.cook_timer > 0 {
            pot.state.cook_timer -= 1;
            if pot.state.cook_timer == 0 {
                pot.state.ready = true;
            }
        }
    }

    resolve_movement(&layout, &mut next, actions, &mut events);

    for (i, a) in actions.into_iter().enumerate() {
        if a == Action::Interact {
            reward += interact(&layout, &mut next, i, cfg, &mut events);
        }
    }

    next.t += 1;
    Ok(StepOutcome {
        state: next,
        reward,
        events,
    })
}

fn resolve_movement(
    layout: &Layout,
    next: &mut GridState,
    actions: [Action; 2],
    events: &mut [StepEvents; 2],
) {
    let current = [next.agents[0].position, next.agents[1].position];
    let mut target = current;
    let mut moving = [false; 2];
    for i in 0..2 {
        let Some(dir) = actions[i].direction() else {
            continue;
        };
        next.agents[i].facing = dir;
        match layout.neighbor(current[i], dir) {
            Some(cell) if layout.tile(cell) == Tile::Floor => {
                target[i] = cell;
                moving[i] = true;
            }
            Some(cell) if layout.tile(cell) == Tile::Wall => events[i].blocked = true,
            // Stations: the move only turns the agent to face them.
            Some(_) => {}
            None => events[i].blocked = true,
        }
    }
    let same_cell = target[0] == target[1];
    let swap = moving[0] && moving[1] && target[0] == current[1] && target[1] == current[0];
    if same_cell || swap {
        for i in 0..2 {
            if moving[i] {
                events[i].blocked = true;
            }
        }
        // A stationary agent keeps its cell; only the movers are bounced.
        return;
    }
    for i in 0..2 {
        if moving[i] {
            next.agents[i].position = target[i];
        }
    }
}

fn interact(
    layout: &Layout,
    next: &mut GridState,
    i: usize,
    cfg: &EnvConfig,
    events: &mut [StepEvents; 2],
) -> f64 {
    let agent = next.agents[i];
    let Some(cell) = agent.facing_cell(layout) else {
        return 0.0;
    };
    let mut reward = 0.0;
    match layout.tile(cell) {
        Tile::OnionPile if agent.held == HeldItem::Nothing => {
            next.agents[i].held = HeldItem::Onion;
            events[i].onion_pickup = true;
        }
        Tile::PlatePile if agent.held == HeldItem::Nothing => {
            next.agents[i].held = HeldItem::Plate;
            events[i].plate_pickup = true;
        }
        Tile::Pot => {
            let pot = next.pot_mut(cell).expect("pot tile has pot state");
            match agent.held {
                HeldItem::Onion if pot.accepts_onion() => {
                    pot.onion_count += 1;
                    if pot.onion_count == 3 {
                        pot.cook_timer = cfg.cook_time;
                    }
                    next.agents[i].held = HeldItem::Nothing;
                    events[i].pot_interaction = true;
                }
                HeldItem::Plate if pot.ready => {
                    *pot = PotState::default();
                    next.agents[i].held = HeldItem::Soup;
                    events[i].pot_interaction = true;
                }
                _ => {}
            }
        }
        Tile::ServeWindow if agent.held == HeldItem::Soup => {
            next.agents[i].held = HeldItem::Nothing;
            events[i].delivered = true;
            reward = cfg.reward_per_delivery;
        }
        Tile::Wall => counter_interact(next, i, cell, cfg, events),
        _ => {}
    }
    reward
}

fn counter_interact(
    next: &mut GridState,
    i: usize,
    cell: Cell,
    cfg: &EnvConfig,
    events: &mut [StepEvents; 2],
) {
    let held = next.agents[i].held;
    let slot = next.counters.iter().position(|c| c.cell == cell);
    match (held, slot) {
        (HeldItem::Nothing, Some(idx)) => {
            let item = next.counters.remove(idx);
            next.agents[i].held = item.item;
            if item.placed_by != i && next.t - item.placed_at <= cfg.handoff_window {
                events[0].handoff = true;
                events[1].handoff = true;
            }
        }
        (HeldItem::Nothing, None) | (_, Some(_)) => {}
        (item, None) => {
            next.agents[i].held = HeldItem::Nothing;
            next.counters.push(CounterItem {
                cell,
                item,
                placed_by: i,
                placed_at: next.t,
            });
            next.counters.sort_by_key(|c| c.cell);
        }
    }
}

/// What an agent sees. Observations carry the full state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub observer: usize,
    pub state: GridState,
}

impl Observation {
    pub fn me(&self) -> &AgentState {
        &self.state.agents[self.observer]
    }

    pub fn other(&self) -> &AgentState {
        &self.state.agents[1 - self.observer]
    }
}

pub fn observe(state: &GridState, agent: usize) -> Observation {
    assert!(agent < 2, "agent index must be 0 or 1");
    Observation {
        observer: agent,
        state: state.clone(),
    }
}
