//! Deterministic sparse-reward grid worlds.
//!
//! Two layouts ship with the crate: a nine-room maze with a single rewarded
//! goal cell and a four-room key/door world with hazards. Both are fully
//! deterministic; the only randomness is the optional respawn curriculum,
//! which draws the start cell from a seed-derived stream.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng as _, RngCore, SeedableRng};

use crate::rng::{derive_seed, stream, Rng};
use crate::{ActionId, Error, Result};

/// Number of raw frames kept in an [`ObservationStack`].
pub const STACK: usize = 4;

/// Upper bound on keys plus doors; the inventory is a `u64` bitset.
pub const MAX_ITEMS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Floor,
    Start,
    Goal,
    Key,
    Door,
    Hazard,
}

impl Cell {
    pub fn from_char(c: char) -> Option<Cell> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Floor,
            'S' => Cell::Start,
            'G' => Cell::Goal,
            'K' => Cell::Key,
            'D' => Cell::Door,
            'H' => Cell::Hazard,
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => '.',
            Cell::Start => 'S',
            Cell::Goal => 'G',
            Cell::Key => 'K',
            Cell::Door => 'D',
            Cell::Hazard => 'H',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn left(self) -> Heading {
        Heading::ALL[(self.index() + 3) % 4]
    }

    pub fn right(self) -> Heading {
        Heading::ALL[(self.index() + 1) % 4]
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Heading::N => (-1, 0),
            Heading::E => (0, 1),
            Heading::S => (1, 0),
            Heading::W => (0, -1),
        }
    }

    pub fn from_char(c: char) -> Option<Heading> {
        Some(match c {
            'N' => Heading::N,
            'E' => Heading::E,
            'S' => Heading::S,
            'W' => Heading::W,
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            Heading::N => 'N',
            Heading::E => 'E',
            Heading::S => 'S',
            Heading::W => 'W',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    Forward,
    TurnLeft,
    TurnRight,
    /// Move two cells along the heading, passing over the middle cell.
    Jump,
    Wait,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Forward => "forward",
            ActionKind::TurnLeft => "turn-left",
            ActionKind::TurnRight => "turn-right",
            ActionKind::Jump => "jump",
            ActionKind::Wait => "wait",
        }
    }

    pub fn from_name(name: &str) -> Option<ActionKind> {
        Some(match name {
            "forward" => ActionKind::Forward,
            "turn-left" => ActionKind::TurnLeft,
            "turn-right" => ActionKind::TurnRight,
            "jump" => ActionKind::Jump,
            "wait" => ActionKind::Wait,
            _ => return None,
        })
    }
}

pub const MAZE_ACTIONS: [ActionKind; 3] = [ActionKind::Forward, ActionKind::TurnLeft, ActionKind::TurnRight];
pub const MONTEZUMA_ACTIONS: [ActionKind; 5] = [
    ActionKind::Forward,
    ActionKind::TurnLeft,
    ActionKind::TurnRight,
    ActionKind::Jump,
    ActionKind::Wait,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Position { row, col }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Rewards for the events a grid can produce. Hazards always pay zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTable {
    pub goal: f64,
    pub key: f64,
    pub door: f64,
}

impl Default for RewardTable {
    fn default() -> Self {
        RewardTable { goal: 1.0, key: 0.0, door: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ItemKind {
    Key,
    Door,
}

/// A collectible key or an openable door. Keys take the low inventory bits
/// in row-major order, doors follow; the i-th door opens with the i-th key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Item {
    pub position: Position,
    pub kind: ItemKind,
    pub bit: u32,
    pub requires: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Cause {
    #[default]
    None,
    Goal,
    Death,
    Timeout,
}

impl Cause {
    pub fn name(self) -> &'static str {
        match self {
            Cause::None => "none",
            Cause::Goal => "goal",
            Cause::Death => "death",
            Cause::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnvState {
    pub position: Position,
    pub heading: Heading,
    pub inventory: u64,
    pub step_count: u32,
    pub alive: bool,
    pub done: bool,
}

/// Summary of the breadth-first reachability proof run at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Reachability {
    pub states_explored: usize,
    pub goal_steps: u32,
    pub best_reward: f64,
    pub items_reached: u64,
    pub spawn_cells: usize,
}

/// Static description of a grid environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub env_id: String,
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    pub actions: Vec<ActionKind>,
    pub step_limit: u32,
    pub rewards: RewardTable,
    pub start_heading: Heading,
    pub respawn_curriculum: bool,
    start: Position,
    items: Vec<Item>,
    item_index: Vec<Option<u8>>,
    spawn_cells: Vec<Position>,
    reach: Reachability,
}

impl EnvSpec {
    /// Builds and validates a spec. Fails on malformed grids and on layouts
    /// where the goal or any key/door cannot be reached within the limit.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        env_id: &str,
        grid: &[&str],
        actions: Vec<ActionKind>,
        step_limit: u32,
        rewards: RewardTable,
        start_heading: Heading,
        respawn_curriculum: bool,
    ) -> Result<EnvSpec> {
        let invalid = |msg: String| Error::InvalidSpec(msg);
        if env_id.is_empty() || env_id.chars().any(|c| c.is_whitespace() || c == '=') {
            return Err(invalid("env_id must be a non-empty token".into()));
        }
        let rows = grid.len();
        if rows == 0 {
            return Err(invalid("empty grid".into()));
        }
        let cols = grid[0].chars().count();
        if cols == 0 {
            return Err(invalid("empty grid row".into()));
        }
        let mut cells = Vec::with_capacity(rows * cols);
        for (r, line) in grid.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(invalid(alloc::format!("row {r} has width {} instead of {cols}", line.chars().count())));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::from_char(ch).ok_or_else(|| invalid(alloc::format!("unknown cell {ch:?} at ({r}, {c})")))?;
                cells.push(cell);
            }
        }
        if actions.is_empty() {
            return Err(invalid("empty action set".into()));
        }
        if step_limit == 0 {
            return Err(invalid("step_limit must be positive".into()));
        }
        for v in [rewards.goal, rewards.key, rewards.door] {
            if !v.is_finite() {
                return Err(invalid("non-finite reward".into()));
            }
        }

        let starts: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == Cell::Start).collect();
        if starts.len() != 1 {
            return Err(invalid(alloc::format!("expected exactly one start cell, found {}", starts.len())));
        }
        let start = Position::new(starts[0] / cols, starts[0] % cols);
        if !cells.contains(&Cell::Goal) {
            return Err(invalid("no goal cell".into()));
        }

        let keys: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == Cell::Key).collect();
        let doors: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == Cell::Door).collect();
        if keys.len() + doors.len() > MAX_ITEMS {
            return Err(invalid("too many keys and doors".into()));
        }
        if doors.len() > keys.len() {
            return Err(invalid("every door needs a key".into()));
        }
        let mut items = Vec::new();
        let mut item_index = vec![None; cells.len()];
        for (i, &k) in keys.iter().enumerate() {
            item_index[k] = Some(items.len() as u8);
            items.push(Item { position: Position::new(k / cols, k % cols), kind: ItemKind::Key, bit: i as u32, requires: None });
        }
        for (i, &d) in doors.iter().enumerate() {
            item_index[d] = Some(items.len() as u8);
            items.push(Item {
                position: Position::new(d / cols, d % cols),
                kind: ItemKind::Door,
                bit: (keys.len() + i) as u32,
                requires: Some(i as u32),
            });
        }

        let mut spec = EnvSpec {
            env_id: env_id.to_string(),
            rows,
            cols,
            cells,
            actions,
            step_limit,
            rewards,
            start_heading,
            respawn_curriculum,
            start,
            items,
            item_index,
            spawn_cells: Vec::new(),
            reach: Reachability { states_explored: 0, goal_steps: 0, best_reward: 0.0, items_reached: 0, spawn_cells: 0 },
        };
        spec.spawn_cells = spec.flood_fill_spawn_cells();
        spec.reach = spec.prove_reachability()?;
        Ok(spec)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start(&self) -> Position {
        self.start
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn cell(&self, p: Position) -> Cell {
        self.cells[p.row * self.cols + p.col]
    }

    /// Grid rows as text, one character per cell.
    pub fn grid_lines(&self) -> Vec<String> {
        self.cells.chunks(self.cols).map(|row| row.iter().map(|c| c.to_char()).collect()).collect()
    }

    pub fn reachability(&self) -> &Reachability {
        &self.reach
    }

    /// Floor cells reachable from the start without crossing hazards,
    /// doors or the goal. The respawn curriculum draws from these.
    pub fn spawn_cells(&self) -> &[Position] {
        &self.spawn_cells
    }

    /// Copy of this spec with the respawn curriculum switched.
    pub fn with_curriculum(&self, on: bool) -> EnvSpec {
        let mut s = self.clone();
        s.respawn_curriculum = on;
        s
    }

    pub fn frame_dim(&self) -> usize {
        self.rows * self.cols + 4 + self.items.len() + 1
    }

    pub fn obs_dim(&self) -> usize {
        STACK * self.frame_dim()
    }

    /// Sum of every event reward an episode can collect.
    pub fn inventory_reward(&self, inventory: u64) -> f64 {
        self.items
            .iter()
            .filter(|it| inventory & (1 << it.bit) != 0)
            .map(|it| match it.kind {
                ItemKind::Key => self.rewards.key,
                ItemKind::Door => self.rewards.door,
            })
            .sum()
    }

    pub fn all_items_mask(&self) -> u64 {
        if self.items.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.items.len()) - 1
        }
    }

    pub fn start_state(&self) -> EnvState {
        self.state_at(self.start, self.start_heading)
    }

    pub fn state_at(&self, position: Position, heading: Heading) -> EnvState {
        EnvState { position, heading, inventory: 0, step_count: 0, alive: true, done: false }
    }

    fn offset(&self, p: Position, heading: Heading, dist: isize) -> Option<Position> {
        let (dr, dc) = heading.delta();
        let r = p.row as isize + dr * dist;
        let c = p.col as isize + dc * dist;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            None
        } else {
            Some(Position::new(r as usize, c as usize))
        }
    }

    fn passable(&self, p: Position, inventory: u64) -> bool {
        match self.cell(p) {
            Cell::Wall => false,
            Cell::Door => {
                let item = self.items[self.item_index[p.row * self.cols + p.col].unwrap() as usize];
                inventory & (1 << item.bit) != 0 || item.requires.is_some_and(|k| inventory & (1 << k) != 0)
            }
            _ => true,
        }
    }

    fn enter(&self, state: &mut EnvState) -> (f64, Cause) {
        let p = state.position;
        match self.cell(p) {
            Cell::Goal => (self.rewards.goal, Cause::Goal),
            Cell::Hazard => {
                state.alive = false;
                (0.0, Cause::Death)
            }
            Cell::Key | Cell::Door => {
                let item = self.items[self.item_index[p.row * self.cols + p.col].unwrap() as usize];
                let bit = 1u64 << item.bit;
                if state.inventory & bit != 0 {
                    return (0.0, Cause::None);
                }
                state.inventory |= bit;
                let r = match item.kind {
                    ItemKind::Key => self.rewards.key,
                    ItemKind::Door => self.rewards.door,
                };
                (r, Cause::None)
            }
            _ => (0.0, Cause::None),
        }
    }

    /// Dynamics without the step counter: new state, reward and terminal cause.
    pub fn transition(&self, state: &EnvState, action: ActionId) -> Result<(EnvState, f64, Cause)> {
        let kind = *self
            .actions
            .get(action)
            .ok_or(Error::ActionOutOfRange { action, count: self.actions.len() })?;
        let mut next = *state;
        let (reward, cause) = match kind {
            ActionKind::TurnLeft => {
                next.heading = state.heading.left();
                (0.0, Cause::None)
            }
            ActionKind::TurnRight => {
                next.heading = state.heading.right();
                (0.0, Cause::None)
            }
            ActionKind::Wait => (0.0, Cause::None),
            ActionKind::Forward => match self.offset(state.position, state.heading, 1) {
                Some(t) if self.passable(t, state.inventory) => {
                    next.position = t;
                    self.enter(&mut next)
                }
                _ => (0.0, Cause::None),
            },
            ActionKind::Jump => {
                let mid = self.offset(state.position, state.heading, 1);
                let land = self.offset(state.position, state.heading, 2);
                match (mid, land) {
                    (Some(m), Some(l)) if self.passable(m, state.inventory) && self.passable(l, state.inventory) => {
                        next.position = l;
                        self.enter(&mut next)
                    }
                    _ => (0.0, Cause::None),
                }
            }
        };
        if cause != Cause::None {
            next.done = true;
        }
        Ok((next, reward, cause))
    }

    /// Episode start. With the respawn curriculum on, the start cell is drawn
    /// uniformly from [`EnvSpec::spawn_cells`] using `seed`.
    pub fn reset(&self, seed: u64) -> (EnvState, ObservationStack) {
        let state = if self.respawn_curriculum {
            let mut rng = Rng::seed_from_u64(seed);
            let p = self.spawn_cells[rng.random_range(0..self.spawn_cells.len())];
            self.state_at(p, self.start_heading)
        } else {
            self.start_state()
        };
        let obs = ObservationStack::padded(self.frame(&state));
        (state, obs)
    }

    /// Advances one step. Stepping a finished episode is an error.
    pub fn step(&self, state: &EnvState, action: ActionId) -> Result<(EnvState, StepOutcome)> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        let (mut next, reward, mut cause) = self.transition(state, action)?;
        next.step_count += 1;
        if cause == Cause::None && next.step_count >= self.step_limit {
            cause = Cause::Timeout;
            next.done = true;
        }
        Ok((next, StepOutcome { reward, done: next.done, cause }))
    }

    /// Raw single frame: one-hot agent cell, one-hot heading, inventory bits
    /// and the step counter normalized by the step limit.
    pub fn frame(&self, state: &EnvState) -> Vec<f64> {
        let mut f = vec![0.0; self.frame_dim()];
        self.write_frame(state, &mut f);
        f
    }

    pub fn write_frame(&self, state: &EnvState, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let cells = self.rows * self.cols;
        out[state.position.row * self.cols + state.position.col] = 1.0;
        out[cells + state.heading.index()] = 1.0;
        for i in 0..self.items.len() {
            if state.inventory & (1 << i) != 0 {
                out[cells + 4 + i] = 1.0;
            }
        }
        out[cells + 4 + self.items.len()] = state.step_count as f64 / self.step_limit as f64;
    }

    /// Appends the frame of `state` to `previous`, dropping the oldest.
    pub fn observe(&self, state: &EnvState, previous: &ObservationStack) -> ObservationStack {
        let mut next = previous.clone();
        next.push(&self.frame(state));
        next
    }

    fn flood_fill_spawn_cells(&self) -> Vec<Position> {
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::new();
        let mut out = Vec::new();
        seen[self.start.row * self.cols + self.start.col] = true;
        queue.push_back(self.start);
        while let Some(p) = queue.pop_front() {
            if matches!(self.cell(p), Cell::Floor | Cell::Start) {
                out.push(p);
            }
            for h in Heading::ALL {
                if let Some(n) = self.offset(p, h, 1) {
                    let i = n.row * self.cols + n.col;
                    if !seen[i] && matches!(self.cell(n), Cell::Floor | Cell::Start | Cell::Key) {
                        seen[i] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        out.sort();
        out
    }

    fn prove_reachability(&self) -> Result<Reachability> {
        let start = self.start_state();
        let tree = search::breadth_first(self, &start, self.step_limit)?;
        let mut items_reached = 0u64;
        for node in &tree.nodes {
            items_reached |= node.state.inventory;
        }
        let best = tree.best().ok_or_else(|| Error::InvalidSpec("goal unreachable within the step limit".into()))?;
        let best_node = &tree.nodes[best];
        if best_node.cause != Cause::Goal {
            return Err(Error::InvalidSpec("goal unreachable within the step limit".into()));
        }
        if items_reached != self.all_items_mask() {
            return Err(Error::InvalidSpec(alloc::format!(
                "unreachable items: mask {:#x} of {:#x}",
                items_reached,
                self.all_items_mask()
            )));
        }
        Ok(Reachability {
            states_explored: tree.nodes.len(),
            goal_steps: best_node.depth,
            best_reward: best_node.reward,
            items_reached,
            spawn_cells: self.spawn_cells.len(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub cause: Cause,
}

/// The last [`STACK`] raw frames, oldest first, concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationStack {
    frame_dim: usize,
    data: Vec<f64>,
}

impl ObservationStack {
    /// Stack with every slot holding `frame`.
    pub fn padded(frame: Vec<f64>) -> Self {
        let frame_dim = frame.len();
        let mut data = Vec::with_capacity(STACK * frame_dim);
        for _ in 0..STACK {
            data.extend_from_slice(&frame);
        }
        ObservationStack { frame_dim, data }
    }

    pub fn push(&mut self, frame: &[f64]) {
        assert_eq!(frame.len(), self.frame_dim, "frame width");
        self.data.copy_within(self.frame_dim.., 0);
        let n = self.data.len();
        self.data[n - self.frame_dim..].copy_from_slice(frame);
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        &self.data[i * self.frame_dim..(i + 1) * self.frame_dim]
    }

    pub fn newest(&self) -> &[f64] {
        self.slot(STACK - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: ObservationStack,
    pub reward: f64,
    pub done: bool,
    pub cause: Cause,
    /// Undiscounted return of the episode that just ended, when `done`.
    pub episode_return: Option<f64>,
}

/// One running episode of a spec with its own reset stream.
#[derive(Clone, Debug)]
pub struct Env {
    spec: Arc<EnvSpec>,
    state: EnvState,
    obs: ObservationStack,
    rng: Rng,
    episode_return: f64,
}

impl Env {
    pub fn new(spec: Arc<EnvSpec>, seed: u64) -> Env {
        let mut rng = Rng::seed_from_u64(seed);
        let (state, obs) = spec.reset(rng.next_u64());
        Env { spec, state, obs, rng, episode_return: 0.0 }
    }

    /// Starts from an explicit state instead of a reset draw.
    pub fn from_state(spec: Arc<EnvSpec>, state: EnvState, seed: u64) -> Env {
        let obs = ObservationStack::padded(spec.frame(&state));
        Env { spec, state, obs, rng: Rng::seed_from_u64(seed), episode_return: 0.0 }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observation(&self) -> &ObservationStack {
        &self.obs
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepResult> {
        let (next, out) = self.spec.step(&self.state, action)?;
        self.obs.push(&self.spec.frame(&next));
        self.state = next;
        self.episode_return += out.reward;
        Ok(StepResult {
            observation: self.obs.clone(),
            reward: out.reward,
            done: out.done,
            cause: out.cause,
            episode_return: out.done.then_some(self.episode_return),
        })
    }

    pub fn reset(&mut self) {
        let (state, obs) = self.spec.reset(self.rng.next_u64());
        self.state = state;
        self.obs = obs;
        self.episode_return = 0.0;
    }
}

/// N independent environments stepped in lockstep with auto-reset.
#[derive(Clone, Debug)]
pub struct VecEnv {
    envs: Vec<Env>,
}

impl VecEnv {
    pub fn new(spec: Arc<EnvSpec>, n: usize, seed: u64) -> VecEnv {
        let envs = (0..n).map(|i| Env::new(spec.clone(), derive_seed(seed, stream::ENV, i as u64))).collect();
        VecEnv { envs }
    }

    pub fn from_envs(envs: Vec<Env>) -> VecEnv {
        VecEnv { envs }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    /// Steps every environment in index order. Results carry the post-step
    /// (possibly terminal) observation; finished episodes are reset before
    /// returning, so [`Env::observation`] is already the next start.
    pub fn step(&mut self, actions: &[ActionId]) -> Result<Vec<StepResult>> {
        if actions.len() != self.envs.len() {
            return Err(Error::LengthMismatch(actions.len(), self.envs.len()));
        }
        let mut out = Vec::with_capacity(actions.len());
        for (env, &a) in self.envs.iter_mut().zip(actions) {
            let r = env.step(a)?;
            if r.done {
                env.reset();
            }
            out.push(r);
        }
        Ok(out)
    }
}

/// Breadth-first search over (position, heading, inventory).
pub mod search {
    use super::*;

    #[derive(Clone, Debug)]
    pub struct Node {
        pub state: EnvState,
        pub parent: Option<usize>,
        pub action: ActionId,
        pub depth: u32,
        /// Reward accumulated from the search root.
        pub reward: f64,
        pub cause: Cause,
    }

    #[derive(Clone, Debug)]
    pub struct Tree {
        pub nodes: Vec<Node>,
    }

    type Key = (Position, Heading, u64);

    /// Expands every state reachable from `root` in at most `max_depth`
    /// steps. Terminal states are recorded but not expanded.
    pub fn breadth_first(spec: &EnvSpec, root: &EnvState, max_depth: u32) -> Result<Tree> {
        let mut canon = *root;
        canon.step_count = 0;
        let mut nodes = vec![Node { state: canon, parent: None, action: 0, depth: 0, reward: 0.0, cause: Cause::None }];
        let mut seen: BTreeMap<Key, usize> = BTreeMap::new();
        seen.insert((canon.position, canon.heading, canon.inventory), 0);
        let mut head = 0;
        while head < nodes.len() {
            let cur = nodes[head].clone();
            head += 1;
            if cur.cause != Cause::None || cur.depth >= max_depth {
                continue;
            }
            for a in 0..spec.actions.len() {
                let (next, r, cause) = spec.transition(&cur.state, a)?;
                let key = (next.position, next.heading, next.inventory);
                if seen.contains_key(&key) {
                    continue;
                }
                seen.insert(key, nodes.len());
                nodes.push(Node { state: next, parent: Some(head - 1), action: a, depth: cur.depth + 1, reward: cur.reward + r, cause });
            }
        }
        Ok(Tree { nodes })
    }

    impl Tree {
        /// Highest-reward node; ties prefer goal terminals, then fewer steps.
        pub fn best(&self) -> Option<usize> {
            let mut best: Option<usize> = None;
            for (i, n) in self.nodes.iter().enumerate() {
                if n.cause == Cause::Death {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let m = &self.nodes[b];
                        n.reward > m.reward
                            || (n.reward == m.reward && n.cause == Cause::Goal && m.cause != Cause::Goal)
                    }
                };
                if better {
                    best = Some(i);
                }
            }
            best
        }

        pub fn actions_to(&self, mut i: usize) -> Vec<ActionId> {
            let mut out = Vec::new();
            while let Some(p) = self.nodes[i].parent {
                out.push(self.nodes[i].action);
                i = p;
            }
            out.reverse();
            out
        }
    }
}

/// Built-in layouts.
pub mod layouts {
    use super::*;

    pub const SPARSE_MAZE_ID: &str = "sparse-maze";
    pub const MINI_MONTEZUMA_ID: &str = "mini-montezuma";
    pub const TINY_MAZE_ID: &str = "tiny-maze";

    /// Nine 6x6 rooms on a 22x22 grid joined by single-cell gaps; the goal
    /// sits in the room diagonally opposite the start, six doorways away.
    pub const SPARSE_MAZE: [&str; 22] = [
        "######################",
        "#......#......#......#",
        "#.S....#......#......#",
        "#......#.............#",
        "#......#......#......#",
        "#.............#......#",
        "#......#......#......#",
        "##########.#######.###",
        "#......#......#......#",
        "#......#......#......#",
        "#......#......#......#",
        "#......#......#......#",
        "#.............#......#",
        "#......#......#......#",
        "##.###################",
        "#......#......#......#",
        "#......#.............#",
        "#......#......#......#",
        "#.............#......#",
        "#......#......#....G.#",
        "#......#......#......#",
        "######################",
    ];

    /// Four rooms on a 13x26 grid. The key sits behind a hazard trench that
    /// must be jumped; the door leads into the goal room.
    pub const MINI_MONTEZUMA: [&str; 13] = [
        "##########################",
        "#............#...........#",
        "#............#...HH......#",
        "#.....S..................#",
        "#............#..HHHH.....#",
        "#.H.H........#.......H...#",
        "###.################D#####",
        "#......H.....#...........#",
        "#......H..H..#...........#",
        "#......H..KH.#...........#",
        "#......H..H..#........G..#",
        "#......H.....#...........#",
        "##########################",
    ];

    pub const TINY_MAZE: [&str; 5] = ["#####", "#S..#", "#.#.#", "#..G#", "#####"];

    pub fn sparse_maze() -> EnvSpec {
        EnvSpec::new(SPARSE_MAZE_ID, &SPARSE_MAZE, MAZE_ACTIONS.to_vec(), 300, RewardTable::default(), Heading::E, false)
            .expect("built-in layout is valid")
    }

    pub fn mini_montezuma() -> EnvSpec {
        EnvSpec::new(
            MINI_MONTEZUMA_ID,
            &MINI_MONTEZUMA,
            MONTEZUMA_ACTIONS.to_vec(),
            500,
            RewardTable { goal: 0.0, key: 100.0, door: 300.0 },
            Heading::W,
            false,
        )
        .expect("built-in layout is valid")
    }

    pub fn tiny_maze() -> EnvSpec {
        EnvSpec::new(TINY_MAZE_ID, &TINY_MAZE, MAZE_ACTIONS.to_vec(), 20, RewardTable::default(), Heading::E, false)
            .expect("built-in layout is valid")
    }

    pub fn by_id(id: &str) -> Option<EnvSpec> {
        match id {
            SPARSE_MAZE_ID => Some(sparse_maze()),
            MINI_MONTEZUMA_ID => Some(mini_montezuma()),
            TINY_MAZE_ID => Some(tiny_maze()),
            _ => None,
        }
    }
}
