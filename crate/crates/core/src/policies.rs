//! Scripted teammates and their best responses.
//!
//! Every policy works in terms of subtasks (fetch an onion, fill a pot, ...)
//! and navigates with [`shortest_path_step`]. Teammates sample subtasks
//! from a weighted [`PolicyProfile`]; best responses pick them by a fixed
//! priority list that complements the predicted teammate type.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Cell, Direction, GridState, HeldItem, Observation, Station, Tile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeammateType {
    Default,
    PotFocused,
    PlateFocused,
    ServeFocused,
    Mixed,
}

/// Number of teammate types.
pub const NUM_TYPES: usize = 5;

impl TeammateType {
    pub const ALL: [TeammateType; NUM_TYPES] = [
        TeammateType::Default,
        TeammateType::PotFocused,
        TeammateType::PlateFocused,
        TeammateType::ServeFocused,
        TeammateType::Mixed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<TeammateType> {
        Self::ALL.get(i).copied()
    }

    /// Canonical label used in prompts, logs and files.
    pub fn as_str(self) -> &'static str {
        match self {
            TeammateType::Default => "default",
            TeammateType::PotFocused => "pot_focused",
            TeammateType::PlateFocused => "plate_focused",
            TeammateType::ServeFocused => "serve_focused",
            TeammateType::Mixed => "mixed",
        }
    }

    /// One-sentence behavioural gloss shown in the rubric.
    pub fn gloss(self) -> &'static str {
        match self {
            TeammateType::Default => {
                "works on every stage of soup preparation without a strong preference"
            }
            TeammateType::PotFocused => "prioritizes placing onions in the pot",
            TeammateType::PlateFocused => {
                "prioritizes picking up plates and stays close to the plate pile"
            }
            TeammateType::ServeFocused => {
                "prioritizes plating finished soup and delivering it to the serving window"
            }
            TeammateType::Mixed => {
                "rotates its focus across all subtasks with moderate proficiency in each"
            }
        }
    }
}

impl fmt::Display for TeammateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownType(pub String);

impl fmt::Display for UnknownType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown teammate type {:?}", self.0)
    }
}

impl std::error::Error for UnknownType {}

impl FromStr for TeammateType {
    type Err = UnknownType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TeammateType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownType(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtask {
    FetchOnion,
    FillPot,
    FetchPlate,
    PlateSoup,
    Deliver,
    Idle,
}

impl Subtask {
    pub const ALL: [Subtask; 6] = [
        Subtask::FetchOnion,
        Subtask::FillPot,
        Subtask::FetchPlate,
        Subtask::PlateSoup,
        Subtask::Deliver,
        Subtask::Idle,
    ];
}

/// Subtask preferences of one teammate type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProfile {
    pub weights: BTreeMap<Subtask, f64>,
    /// Steps a sampled subtask is kept before re-sampling.
    pub commitment: u32,
    /// Station the agent hangs around when idle.
    pub home: Station,
    /// When set, the focus subtask rotates through [`Subtask::ALL`] every
    /// `period` steps and its weight is multiplied by `cycle_boost`.
    #[serde(default)]
    pub cycle_period: Option<u32>,
    #[serde(default = "one")]
    pub cycle_boost: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileError(pub String);

impl fmt::Display for ProfileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid policy profile: {}", self.0)
    }
}

impl std::error::Error for ProfileError {}

impl PolicyProfile {
    fn new(weights: [f64; 6], commitment: u32, home: Station) -> PolicyProfile {
        PolicyProfile {
            weights: Subtask::ALL.into_iter().zip(weights).collect(),
            commitment,
            home,
            cycle_period: None,
            cycle_boost: 1.0,
        }
    }

    pub fn weight(&self, s: Subtask) -> f64 {
        self.weights.get(&s).copied().unwrap_or(0.0)
    }

    /// Weights rescaled to sum to one.
    pub fn normalized(&self) -> BTreeMap<Subtask, f64> {
        let total: f64 = Subtask::ALL.iter().map(|&s| self.weight(s)).sum();
        Subtask::ALL
            .iter()
            .map(|&s| (s, self.weight(s) / total))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.commitment < 1 {
            return Err(ProfileError("commitment must be >= 1".into()));
        }
        if self.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ProfileError(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if self.weights.values().sum::<f64>() <= 0.0 {
            return Err(ProfileError("weights must not all be zero".into()));
        }
        if self.cycle_period == Some(0) || self.cycle_boost.is_nan() || self.cycle_boost <= 0.0 {
            return Err(ProfileError(
                "cycle period and boost must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Effective weight of `s` at step `t`, including the rotating focus.
    fn weight_at(&self, s: Subtask, t: u32) -> f64 {
        let w = self.weight(s);
        match self.cycle_period {
            Some(period) => {
                let focus = Subtask::ALL[(t / period) as usize % Subtask::ALL.len()];
                if focus == s {
                    w * self.cycle_boost
                } else {
                    w
                }
            }
            None => w,
        }
    }

    fn home_at(&self, t: u32) -> Station {
        match self.cycle_period {
            Some(period) => {
                let focus = Subtask::ALL[(t / period) as usize % Subtask::ALL.len()];
                focus_station(focus).unwrap_or(self.home)
            }
            None => self.home,
        }
    }
}

fn focus_station(s: Subtask) -> Option<Station> {
    match s {
        Subtask::FetchOnion => Some(Station::OnionPile),
        Subtask::FillPot | Subtask::PlateSoup => Some(Station::Pot),
        Subtask::FetchPlate => Some(Station::PlatePile),
        Subtask::Deliver => Some(Station::ServeWindow),
        Subtask::Idle => None,
    }
}

/// Calibration constants for the scripted teammates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub profiles: BTreeMap<TeammateType, PolicyProfile>,
    /// Probability that a waiting teammate takes a random step instead.
    pub idle_jitter: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        use Station::*;
        use TeammateType::*;
        // Column order: FetchOnion, FillPot, FetchPlate, PlateSoup, Deliver, Idle.
        let mut mixed = PolicyProfile::new([0.1; 6], 4, Pot);
        mixed.cycle_period = Some(30);
        mixed.cycle_boost = 5.0;
        let profiles = BTreeMap::from([
            (
                Default,
                PolicyProfile::new([0.2, 0.2, 0.2, 0.2, 0.2, 0.0], 4, Pot),
            ),
            (
                PotFocused,
                PolicyProfile::new([0.45, 0.45, 0.03, 0.03, 0.02, 0.02], 6, Pot),
            ),
            (
                PlateFocused,
                PolicyProfile::new([0.03, 0.03, 0.55, 0.1, 0.04, 0.25], 6, PlatePile),
            ),
            (
                ServeFocused,
                PolicyProfile::new([0.03, 0.03, 0.04, 0.4, 0.45, 0.05], 6, ServeWindow),
            ),
            (Mixed, mixed),
        ]);
        PolicyConfig {
            profiles,
            idle_jitter: 0.2,
        }
    }
}

impl PolicyConfig {
    pub fn profile(&self, ty: TeammateType) -> &PolicyProfile {
        &self.profiles[&ty]
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for ty in TeammateType::ALL {
            self.profiles
                .get(&ty)
                .ok_or_else(|| ProfileError(format!("missing profile for {ty}")))?
                .validate()?;
        }
        if !(0.0..=1.0).contains(&self.idle_jitter) {
            return Err(ProfileError("idle_jitter must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One BFS step toward the nearest floor cell adjacent to a goal cell.
///
/// The other agent is an obstacle. When already adjacent, returns
/// `Interact` if facing a goal cell and otherwise the direction that turns
/// toward one. Returns `Stay` if no goal is reachable. All ties resolve in
/// North, South, East, West order.
pub fn shortest_path_step(state: &GridState, agent: usize, goal: impl Fn(Cell) -> bool) -> Action {
    let layout = &state.layout;
    let me = state.agents[agent];
    let blocked = state.agents[1 - agent].position;
    let is_goal_neighbor = |cell: Cell| -> Option<Direction> {
        Direction::ALL
            .into_iter()
            .find(|&d| layout.neighbor(cell, d).is_some_and(&goal))
    };

    if let Some(facing) = me.facing_cell(layout) {
        if goal(facing) {
            return Action::Interact;
        }
    }
    if let Some(dir) = is_goal_neighbor(me.position) {
        return dir.action();
    }

    // Distances from the set of stand cells, computed backwards.
    let walkable = |c: Cell| layout.tile(c) == Tile::Floor && c != blocked;
    let mut dist = vec![vec![u32::MAX; layout.width]; layout.height];
    let mut queue = VecDeque::new();
    for cell in layout.cells() {
        if walkable(cell) && is_goal_neighbor(cell).is_some() {
            dist[cell.0][cell.1] = 0;
            queue.push_back(cell);
        }
    }
    while let Some(cell) = queue.pop_front() {
        let d = dist[cell.0][cell.1];
        for dir in Direction::ALL {
            if let Some(n) = layout.neighbor(cell, dir) {
                if walkable(n) && dist[n.0][n.1] == u32::MAX {
                    dist[n.0][n.1] = d + 1;
                    queue.push_back(n);
                }
            }
        }
    }
    let here = me.position;
    let best = Direction::ALL
        .into_iter()
        .filter_map(|dir| {
            let n = layout.neighbor(here, dir)?;
            (walkable(n) && dist[n.0][n.1] != u32::MAX).then_some((dist[n.0][n.1], dir))
        })
        .min_by_key(|&(d, dir)| (d, Direction::ALL.iter().position(|&x| x == dir)));
    match best {
        Some((_, dir)) => dir.action(),
        None => Action::Stay,
    }
}

fn station_goal(state: &GridState, station: Station) -> impl Fn(Cell) -> bool + '_ {
    move |c: Cell| state.layout.tile(c) == station.tile()
}

fn pot_goal<'a>(
    state: &'a GridState,
    pred: impl Fn(&crate::env::PotState) -> bool + 'a,
) -> impl Fn(Cell) -> bool + 'a {
    move |c: Cell| state.pot(c).is_some_and(&pred)
}

/// Facts about the kitchen a policy conditions on.
struct Kitchen {
    any_accepting: bool,
    any_started: bool,
    any_cooking_or_ready: bool,
    any_ready: bool,
    onions_needed: u32,
}

impl Kitchen {
    fn read(obs: &Observation) -> Kitchen {
        let pots = &obs.state.pots;
        let missing: u32 = pots
            .iter()
            .filter(|p| p.state.accepts_onion())
            .map(|p| 3 - p.state.onion_count as u32)
            .sum();
        let in_flight = obs
            .state
            .agents
            .iter()
            .filter(|a| a.held == HeldItem::Onion)
            .count() as u32;
        Kitchen {
            any_accepting: pots.iter().any(|p| p.state.accepts_onion()),
            any_started: pots
                .iter()
                .any(|p| p.state.onion_count > 0 || p.state.ready),
            any_cooking_or_ready: pots.iter().any(|p| p.state.is_cooking() || p.state.ready),
            any_ready: pots.iter().any(|p| p.state.ready),
            onions_needed: missing.saturating_sub(in_flight),
        }
    }
}

fn feasible(sub: Subtask, held: HeldItem, k: &Kitchen, other_held: HeldItem) -> bool {
    use HeldItem::*;
    match sub {
        Subtask::FetchOnion | Subtask::FetchPlate => held == Nothing,
        Subtask::FillPot => matches!(held, Nothing | Onion) && k.any_accepting,
        Subtask::PlateSoup => matches!(held, Nothing | Plate) && k.any_started,
        Subtask::Deliver => {
            held == Soup || (held == Nothing && (k.any_cooking_or_ready || other_held == Soup))
        }
        Subtask::Idle => true,
    }
}

/// Action that advances `sub`. Waiting happens near `home`, or anywhere
/// out of the way when `home` is `None`.
fn pursue(sub: Subtask, obs: &Observation, home: Option<Station>) -> Action {
    let state = &obs.state;
    let i = obs.observer;
    let held = obs.me().held;
    let wait = |a: Action| {
        if a == Action::Interact {
            Action::Stay
        } else {
            a
        }
    };
    let useless = match held {
        HeldItem::Onion => !state.pots.iter().any(|p| p.state.accepts_onion()),
        HeldItem::Plate => !state
            .pots
            .iter()
            .any(|p| p.state.onion_count > 0 || p.state.ready),
        _ => false,
    };
    if useless {
        // Nothing to use it for yet: put it down on a free counter.
        return shortest_path_step(state, i, |c| {
            state.layout.tile(c) == Tile::Wall && state.counter_item(c).is_none()
        });
    }
    match (sub, held) {
        (Subtask::FetchOnion, _) | (Subtask::FillPot, HeldItem::Nothing) => {
            shortest_path_step(state, i, |c| {
                state.layout.tile(c) == Tile::OnionPile
                    || state
                        .counter_item(c)
                        .is_some_and(|it| it.item == HeldItem::Onion)
            })
        }
        (Subtask::FillPot, HeldItem::Onion) => {
            shortest_path_step(state, i, pot_goal(state, |p| p.accepts_onion()))
        }
        (Subtask::FetchPlate, _) | (Subtask::PlateSoup, HeldItem::Nothing) => {
            shortest_path_step(state, i, station_goal(state, Station::PlatePile))
        }
        (Subtask::PlateSoup, HeldItem::Plate) => {
            if state.pots.iter().any(|p| p.state.ready) {
                shortest_path_step(state, i, pot_goal(state, |p| p.ready))
            } else if state.pots.iter().any(|p| p.state.is_cooking()) {
                wait(shortest_path_step(
                    state,
                    i,
                    pot_goal(state, |p| p.is_cooking()),
                ))
            } else {
                park(obs, home)
            }
        }
        (Subtask::Deliver, HeldItem::Soup) => {
            shortest_path_step(state, i, station_goal(state, Station::ServeWindow))
        }
        (Subtask::Deliver, _) => park(obs, Some(Station::ServeWindow)),
        _ => park(obs, home),
    }
}

/// Backward BFS distances to `sources` over free floor.
fn floor_distances(state: &GridState, sources: &[Cell], blocked: Cell) -> Vec<Vec<u32>> {
    let layout = &state.layout;
    let walkable = |c: Cell| layout.tile(c) == Tile::Floor && c != blocked;
    let mut dist = vec![vec![u32::MAX; layout.width]; layout.height];
    let mut queue = VecDeque::new();
    for &c in sources {
        if walkable(c) && dist[c.0][c.1] == u32::MAX {
            dist[c.0][c.1] = 0;
            queue.push_back(c);
        }
    }
    while let Some(cell) = queue.pop_front() {
        let d = dist[cell.0][cell.1];
        for dir in Direction::ALL {
            if let Some(n) = layout.neighbor(cell, dir) {
                if walkable(n) && dist[n.0][n.1] == u32::MAX {
                    dist[n.0][n.1] = d + 1;
                    queue.push_back(n);
                }
            }
        }
    }
    dist
}

/// Number of stations a cell gives access to.
fn access_count(state: &GridState, cell: Cell) -> usize {
    Direction::ALL
        .into_iter()
        .filter_map(|d| state.layout.neighbor(cell, d))
        .filter(|&n| state.layout.tile(n).station().is_some())
        .count()
}

/// Step toward a waiting spot: the reachable floor cell (near `home` when
/// possible) that gives access to the fewest stations, nearest first.
fn park(obs: &Observation, home: Option<Station>) -> Action {
    let state = &obs.state;
    let layout = &state.layout;
    let me = obs.me().position;
    let other = obs.other().position;
    let from_me = floor_distances(state, &[me], other);
    let near_home = |c: Cell| {
        home.is_none_or(|h| {
            layout.cells().any(|s| {
                layout.tile(s) == h.tile() && s.0.abs_diff(c.0) <= 1 && s.1.abs_diff(c.1) <= 1
            })
        })
    };
    let reachable: Vec<Cell> = layout
        .cells()
        .filter(|&c| from_me[c.0][c.1] != u32::MAX)
        .collect();
    let pool: Vec<Cell> = if reachable.iter().any(|&c| near_home(c)) {
        reachable.into_iter().filter(|&c| near_home(c)).collect()
    } else {
        reachable
    };
    let Some(target) = pool
        .into_iter()
        .min_by_key(|&c| (access_count(state, c), from_me[c.0][c.1], c))
    else {
        return Action::Stay;
    };
    if target == me {
        return Action::Stay;
    }
    let to_target = floor_distances(state, &[target], other);
    Direction::ALL
        .into_iter()
        .filter_map(|d| {
            let n = layout.neighbor(me, d)?;
            let dn = to_target[n.0][n.1];
            (dn != u32::MAX).then_some((dn, d))
        })
        .min_by_key(|&(dn, d)| (dn, Direction::ALL.iter().position(|&x| x == d)))
        .map_or(Action::Stay, |(_, d)| d.action())
}

/// Scripted teammate of a fixed type. Holds the commitment counter; all
/// randomness comes from the caller's generator.
#[derive(Debug, Clone)]
pub struct TeammatePolicy {
    ty: TeammateType,
    profile: PolicyProfile,
    jitter: f64,
    current: Option<Subtask>,
    remaining: u32,
}

impl TeammatePolicy {
    pub fn new(ty: TeammateType, cfg: &PolicyConfig) -> TeammatePolicy {
        TeammatePolicy {
            ty,
            profile: cfg.profile(ty).clone(),
            jitter: cfg.idle_jitter,
            current: None,
            remaining: 0,
        }
    }

    pub fn teammate_type(&self) -> TeammateType {
        self.ty
    }

    pub fn current_subtask(&self) -> Option<Subtask> {
        self.current
    }

    pub fn act<R: Rng + ?Sized>(&mut self, obs: &Observation, rng: &mut R) -> Action {
        let k = Kitchen::read(obs);
        let held = obs.me().held;
        let other = obs.other().held;
        let t = obs.state.t;
        let keep = self.remaining > 0 && self.current.is_some_and(|s| feasible(s, held, &k, other));
        if !keep {
            let choices: Vec<(Subtask, f64)> = Subtask::ALL
                .into_iter()
                .filter(|&s| feasible(s, held, &k, other))
                .map(|s| (s, self.profile.weight_at(s, t)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = choices.iter().map(|c| c.1).sum();
            let mut draw = rng.gen::<f64>() * total;
            let mut chosen = Subtask::Idle;
            for (s, w) in choices {
                chosen = s;
                if draw < w {
                    break;
                }
                draw -= w;
            }
            self.current = Some(chosen);
            self.remaining = self.profile.commitment;
        }
        self.remaining -= 1;
        let sub = self.current.unwrap_or(Subtask::Idle);
        let action = pursue(sub, obs, Some(self.profile.home_at(t)));
        if action != Action::Stay {
            action
        } else if rng.gen::<f64>() < self.jitter {
            Direction::ALL[rng.gen_range(0..4)].action()
        } else {
            Action::Stay
        }
    }
}

/// Controller styles the best responses are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrStyle {
    /// Plates as soon as a pot cooks, onions otherwise.
    PlateFirst,
    /// Plates and serves only; leaves the pots to the teammate.
    PlateOnly,
    /// Keeps the pots full; plates once soup is ready.
    OnionFirst,
    /// Keeps the pots full; plates as soon as a pot cooks.
    OnionFirstEarlyPlate,
    /// Cooks and serves on its own, ignoring plates the teammate carries.
    SelfReliant,
    /// Only fetches onions and fills pots.
    OnionOnly,
}

impl BrStyle {
    pub const ALL: [BrStyle; 6] = [
        BrStyle::PlateFirst,
        BrStyle::PlateOnly,
        BrStyle::OnionFirst,
        BrStyle::OnionFirstEarlyPlate,
        BrStyle::SelfReliant,
        BrStyle::OnionOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BrStyle::PlateFirst => "plate_first",
            BrStyle::PlateOnly => "plate_only",
            BrStyle::OnionFirst => "onion_first",
            BrStyle::OnionFirstEarlyPlate => "onion_first_early_plate",
            BrStyle::SelfReliant => "self_reliant",
            BrStyle::OnionOnly => "onion_only",
        }
    }

    /// Style that complements `ty` by construction.
    pub fn complement(ty: TeammateType) -> BrStyle {
        match ty {
            TeammateType::Default | TeammateType::Mixed => BrStyle::PlateFirst,
            TeammateType::PotFocused => BrStyle::PlateOnly,
            TeammateType::PlateFocused => BrStyle::OnionFirst,
            TeammateType::ServeFocused => BrStyle::OnionFirstEarlyPlate,
        }
    }
}

/// A style played for the first `steps` steps of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opening {
    pub style: BrStyle,
    pub steps: u32,
}

/// How the best response to one type plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrChoice {
    pub style: BrStyle,
    #[serde(default)]
    pub opening: Option<Opening>,
}

impl BrChoice {
    pub fn stationary(style: BrStyle) -> BrChoice {
        BrChoice {
            style,
            opening: None,
        }
    }
}

/// Which choice answers each teammate type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrLibrary {
    pub choices: BTreeMap<TeammateType, BrChoice>,
}

impl Default for BrLibrary {
    fn default() -> Self {
        BrLibrary {
            choices: TeammateType::ALL
                .into_iter()
                .map(|t| (t, BrChoice::stationary(BrStyle::complement(t))))
                .collect(),
        }
    }
}

impl BrLibrary {
    pub fn choice(&self, ty: TeammateType) -> BrChoice {
        self.choices
            .get(&ty)
            .copied()
            .unwrap_or_else(|| BrChoice::stationary(BrStyle::complement(ty)))
    }

    pub fn style(&self, ty: TeammateType) -> BrStyle {
        self.choice(ty).style
    }

    pub fn respond(&self, ty: TeammateType) -> BestResponse {
        BestResponse::new(ty, self.choice(ty))
    }
}

/// Subtask a controller of `style` works on in this state.
pub fn best_response_subtask(style: BrStyle, obs: &Observation) -> Subtask {
    let k = Kitchen::read(obs);
    let other = obs.other().held;
    let plate_covered = matches!(other, HeldItem::Plate | HeldItem::Soup);
    match obs.me().held {
        HeldItem::Soup => Subtask::Deliver,
        HeldItem::Plate => Subtask::PlateSoup,
        HeldItem::Onion if k.any_accepting => Subtask::FillPot,
        HeldItem::Onion => Subtask::Idle,
        HeldItem::Nothing => match style {
            BrStyle::PlateOnly => {
                if plate_covered && !k.any_ready {
                    Subtask::Idle
                } else {
                    Subtask::FetchPlate
                }
            }
            BrStyle::OnionFirst => {
                if k.onions_needed > 0 {
                    Subtask::FetchOnion
                } else if k.any_ready && !plate_covered {
                    Subtask::FetchPlate
                } else {
                    Subtask::Idle
                }
            }
            BrStyle::OnionFirstEarlyPlate => {
                if k.onions_needed > 0 {
                    Subtask::FetchOnion
                } else if k.any_cooking_or_ready && !plate_covered {
                    Subtask::FetchPlate
                } else {
                    Subtask::Idle
                }
            }
            BrStyle::SelfReliant => {
                if k.any_ready {
                    Subtask::FetchPlate
                } else if k.onions_needed > 0 {
                    Subtask::FetchOnion
                } else if k.any_cooking_or_ready {
                    Subtask::FetchPlate
                } else {
                    Subtask::Idle
                }
            }
            BrStyle::OnionOnly => {
                if k.onions_needed > 0 {
                    Subtask::FetchOnion
                } else {
                    Subtask::Idle
                }
            }
            BrStyle::PlateFirst => {
                if k.any_cooking_or_ready && !plate_covered {
                    Subtask::FetchPlate
                } else if k.onions_needed > 0 {
                    Subtask::FetchOnion
                } else {
                    Subtask::Idle
                }
            }
        },
    }
}

/// Deterministic controller action for `style`.
pub fn best_response_act(style: BrStyle, obs: &Observation) -> Action {
    let sub = best_response_subtask(style, obs);
    let action = pursue(sub, obs, None);
    // A cell the teammate could also step into is only entered on even
    // steps, so two agents heading for it cannot collide forever.
    if let Some(dir) = action.direction() {
        let state = &obs.state;
        let other = obs.other().position;
        if let Some(n) = state.layout.neighbor(obs.me().position, dir) {
            let contested = state.layout.tile(n) == Tile::Floor
                && n.0.abs_diff(other.0) + n.1.abs_diff(other.1) == 1;
            if contested && state.t % 2 == 1 {
                return Action::Stay;
            }
        }
    }
    action
}

/// Controlled-agent policy: the best response to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BestResponse {
    pub target: TeammateType,
    pub style: BrStyle,
    pub opening: Option<Opening>,
}

impl BestResponse {
    pub fn new(target: TeammateType, choice: BrChoice) -> BestResponse {
        BestResponse {
            target,
            style: choice.style,
            opening: choice.opening,
        }
    }

    /// Style in effect at step `t`.
    pub fn style_at(&self, t: u32) -> BrStyle {
        match self.opening {
            Some(o) if t < o.steps => o.style,
            _ => self.style,
        }
    }

    pub fn act(&self, obs: &Observation) -> Action {
        best_response_act(self.style_at(obs.state.t), obs)
    }
}
