//! Grid navigation with up to five obstacles and sparse terminal rewards.
//!
//! Rewards per step: `-0.01`, plus `+1` on entering the goal (success) or
//! `-1` on entering an obstacle (failure). A move that would leave the grid
//! is a no-op that still pays the step cost.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    EnvDescriptor, EnvError, EnvId, Environment, Observation, RewardBounds, StepResult,
    TerminalKind,
};

pub const DEFAULT_GRID_SIZE: usize = 5;
pub const MAX_OBSTACLES: u32 = 5;
pub const DEFAULT_MAX_EPISODE_STEPS: u32 = 100;
pub const STEP_PENALTY: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;
pub const OBSTACLE_REWARD: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn index(self, size: usize) -> usize {
        self.y * size + self.x
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
    ];

    pub fn from_index(action: usize) -> Option<Self> {
        Self::ALL.get(action).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Destination cell, or `None` when the move would leave the grid.
    pub fn apply(self, cell: Cell, size: usize) -> Option<Cell> {
        let Cell { x, y } = cell;
        match self {
            GridAction::Up if y + 1 < size => Some(Cell::new(x, y + 1)),
            GridAction::Down if y > 0 => Some(Cell::new(x, y - 1)),
            GridAction::Left if x > 0 => Some(Cell::new(x - 1, y)),
            GridAction::Right if x + 1 < size => Some(Cell::new(x + 1, y)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub size: usize,
    pub agent: Cell,
    pub goal: Cell,
    pub obstacles: Vec<Cell>,
}

impl GridLayout {
    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.obstacles.contains(&cell)
    }

    /// Whether the goal can be reached without entering an obstacle.
    /// Unreachable layouts are kept (they simply time out); this is for
    /// diagnostics only.
    pub fn goal_reachable(&self) -> bool {
        let mut seen = vec![false; self.size * self.size];
        let mut queue = VecDeque::from([self.agent]);
        seen[self.agent.index(self.size)] = true;
        while let Some(cell) = queue.pop_front() {
            if cell == self.goal {
                return true;
            }
            for action in GridAction::ALL {
                if let Some(next) = action.apply(cell, self.size) {
                    let idx = next.index(self.size);
                    if !seen[idx] && !self.is_obstacle(next) {
                        seen[idx] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        false
    }
}

/// Uniform distinct placement of agent, goal and `level` obstacles on the
/// default 5×5 grid.
pub fn spawn_layout(seed: u64, level: u32) -> Result<GridLayout, EnvError> {
    spawn_layout_sized(DEFAULT_GRID_SIZE, seed, level)
}

pub fn spawn_layout_sized(size: usize, seed: u64, level: u32) -> Result<GridLayout, EnvError> {
    if level > MAX_OBSTACLES {
        return Err(EnvError::OutOfRange { level, max: MAX_OBSTACLES });
    }
    let needed = 2 + level as usize;
    if size * size < needed {
        return Err(EnvError::InvalidConfig(format!(
            "{size}x{size} grid cannot hold {needed} objects"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<Cell> = (0..size * size)
        .map(|i| Cell::new(i % size, i / size))
        .collect();
    let (picked, _) = cells.partial_shuffle(&mut rng, needed);
    Ok(GridLayout {
        size,
        agent: picked[0],
        goal: picked[1],
        obstacles: picked[2..].to_vec(),
    })
}

/// Three stacked one-hot planes (agent, goal, obstacles), row-major with
/// index `y * size + x`.
pub fn encode_grid_obs(layout: &GridLayout) -> Observation {
    let plane = layout.size * layout.size;
    let mut values = vec![0.0; 3 * plane];
    values[layout.agent.index(layout.size)] = 1.0;
    values[plane + layout.goal.index(layout.size)] = 1.0;
    for obstacle in &layout.obstacles {
        values[2 * plane + obstacle.index(layout.size)] = 1.0;
    }
    Observation::new(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub layout: GridLayout,
    pub steps_taken: u32,
    pub done: bool,
}

impl GridState {
    pub fn new(layout: GridLayout) -> Self {
        Self { layout, steps_taken: 0, done: false }
    }
}

pub fn grid_step(
    state: &mut GridState,
    action: GridAction,
    max_episode_steps: u32,
) -> Result<StepResult, EnvError> {
    if state.done {
        return Err(EnvError::SteppedAfterTerminal);
    }
    let layout = &mut state.layout;
    if let Some(next) = action.apply(layout.agent, layout.size) {
        layout.agent = next;
    }
    state.steps_taken += 1;

    let mut reward = STEP_PENALTY;
    let kind = if layout.agent == layout.goal {
        reward += GOAL_REWARD;
        TerminalKind::Success
    } else if layout.is_obstacle(layout.agent) {
        reward += OBSTACLE_REWARD;
        TerminalKind::Failure
    } else if state.steps_taken >= max_episode_steps {
        TerminalKind::Timeout
    } else {
        TerminalKind::None
    };
    state.done = kind.is_terminal();
    Ok(StepResult { observation: encode_grid_obs(layout), reward, kind })
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    size: usize,
    max_episode_steps: u32,
    pending_level: u32,
    level: u32,
    state: Option<GridState>,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self::with_config(DEFAULT_GRID_SIZE, DEFAULT_MAX_EPISODE_STEPS)
            .expect("default grid config is valid")
    }
}

impl GridWorld {
    pub fn with_config(size: usize, max_episode_steps: u32) -> Result<Self, EnvError> {
        if size * size < 2 + MAX_OBSTACLES as usize || max_episode_steps == 0 {
            return Err(EnvError::InvalidConfig(format!(
                "grid size {size}, step cap {max_episode_steps}"
            )));
        }
        Ok(Self { size, max_episode_steps, pending_level: 0, level: 0, state: None })
    }

    pub fn state(&self) -> Option<&GridState> {
        self.state.as_ref()
    }
}

impl Environment for GridWorld {
    fn descriptor(&self) -> EnvDescriptor {
        EnvDescriptor {
            env_id: EnvId::GridWorld,
            obs_dim: 3 * self.size * self.size,
            action_count: GridAction::ALL.len(),
            max_level: MAX_OBSTACLES,
            max_episode_steps: self.max_episode_steps,
        }
    }

    fn reward_bounds(&self) -> RewardBounds {
        RewardBounds {
            min: STEP_PENALTY + OBSTACLE_REWARD,
            max: STEP_PENALTY + GOAL_REWARD,
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.level = self.pending_level;
        let layout = spawn_layout_sized(self.size, seed, self.level)
            .expect("pending level validated by set_difficulty");
        let obs = encode_grid_obs(&layout);
        self.state = Some(GridState::new(layout));
        obs
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let state = self.state.as_mut().ok_or(EnvError::EpisodeNotStarted)?;
        let action = GridAction::from_index(action).ok_or(EnvError::InvalidAction {
            action,
            count: GridAction::ALL.len(),
        })?;
        grid_step(state, action, self.max_episode_steps)
    }

    fn set_difficulty(&mut self, level: u32) -> Result<(), EnvError> {
        if level > MAX_OBSTACLES {
            return Err(EnvError::OutOfRange { level, max: MAX_OBSTACLES });
        }
        self.pending_level = level;
        Ok(())
    }

    fn level(&self) -> u32 {
        self.level
    }

    fn pending_level(&self) -> u32 {
        self.pending_level
    }

    fn observe(&self) -> Observation {
        match &self.state {
            Some(state) => encode_grid_obs(&state.layout),
            None => Observation::new(vec![0.0; 3 * self.size * self.size]),
        }
    }
}
