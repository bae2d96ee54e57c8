//! One-dimensional wall-jumping corridor.
//!
//! The agent starts at cell 0 and must reach a goal cell in `17..=19`, past a
//! wall at cell 12. Walls up to [`JUMP_CAPABILITY`] can be jumped from cell 11
//! directly. Higher walls require pushing the block against the wall,
//! mounting it, and jumping from the block for an extra [`BLOCK_BOOST`].
//! Jumping on the ground with the block directly ahead vaults over it.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    EnvDescriptor, EnvError, EnvId, Environment, Observation, RewardBounds, StepResult,
    TerminalKind,
};

pub const JUMP_CAPABILITY: f64 = 6.5;
pub const BLOCK_BOOST: f64 = 2.0;
pub const CORRIDOR_LENGTH: usize = 20;
pub const WALL_CELL: usize = 12;
pub const GOAL_START: usize = 17;
pub const MAX_EPISODE_STEPS: u32 = 200;
pub const STEP_PENALTY: f64 = -0.0005;
pub const SUCCESS_REWARD: f64 = 1.0;
pub const TIMEOUT_REWARD: f64 = -1.0;
pub const MAX_LEVEL: u32 = 16;
pub const HEIGHT_PER_LEVEL: f64 = 0.5;
pub const MAX_HEIGHT: f64 = 8.0;
pub const BLOCK_SPAWN: std::ops::RangeInclusive<usize> = 3..=10;

const LAST_CELL: usize = CORRIDOR_LENGTH - 1;
const JUMP_FROM: usize = WALL_CELL - 1;
const JUMP_TO: usize = WALL_CELL + 1;

pub fn wall_height(level: u32) -> f64 {
    HEIGHT_PER_LEVEL * f64::from(level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WjAction {
    Left,
    Right,
    Jump,
}

impl WjAction {
    pub const ALL: [WjAction; 3] = [WjAction::Left, WjAction::Right, WjAction::Jump];

    pub fn from_index(action: usize) -> Option<Self> {
        Self::ALL.get(action).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// What a single action did to the agent/block configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    Move,
    Push,
    Mount,
    Dismount,
    Vault,
    WallJump,
    Blocked,
}

impl Transition {
    pub fn uses_block(self) -> bool {
        matches!(self, Transition::Push | Transition::Mount)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WallJumperState {
    pub agent_cell: usize,
    pub block_cell: usize,
    pub on_block: bool,
    pub level: u32,
    pub steps_taken: u32,
}

impl WallJumperState {
    pub fn wall_height(&self) -> f64 {
        wall_height(self.level)
    }

    pub fn observation(&self) -> Observation {
        let span = LAST_CELL as f64;
        let nearest_goal = self.agent_cell.max(GOAL_START);
        Observation::new(vec![
            self.agent_cell as f64 / span,
            if self.on_block { 1.0 } else { 0.0 },
            self.block_cell as f64 / span,
            WALL_CELL as f64 / span,
            self.wall_height() / MAX_HEIGHT,
            nearest_goal as f64 / span,
        ])
    }

    pub fn in_goal(&self) -> bool {
        self.agent_cell >= GOAL_START
    }

    /// Applies the movement rules only; rewards and step counting live in
    /// [`wj_step`].
    pub fn transition(&mut self, action: WjAction) -> Transition {
        match action {
            WjAction::Left => self.walk(-1),
            WjAction::Right => self.walk(1),
            WjAction::Jump => self.jump(),
        }
    }

    fn walk(&mut self, dir: isize) -> Transition {
        let Some(target) = offset(self.agent_cell, dir) else {
            return Transition::Blocked;
        };
        if target == WALL_CELL {
            return Transition::Blocked;
        }
        if self.on_block {
            self.agent_cell = target;
            self.on_block = false;
            return Transition::Dismount;
        }
        if target == self.block_cell {
            match offset(self.block_cell, dir) {
                Some(dest) if dest != WALL_CELL => {
                    self.block_cell = dest;
                    self.agent_cell = target;
                    Transition::Push
                }
                _ => {
                    self.agent_cell = target;
                    self.on_block = true;
                    Transition::Mount
                }
            }
        } else {
            self.agent_cell = target;
            Transition::Move
        }
    }

    fn jump(&mut self) -> Transition {
        if self.agent_cell == JUMP_FROM {
            let boost = if self.on_block && self.block_cell == JUMP_FROM {
                BLOCK_BOOST
            } else {
                0.0
            };
            if self.wall_height() <= JUMP_CAPABILITY + boost {
                self.agent_cell = JUMP_TO;
                self.on_block = false;
                return Transition::WallJump;
            }
            return Transition::Blocked;
        }
        let vault_to = self.agent_cell + 2;
        if !self.on_block
            && self.block_cell == self.agent_cell + 1
            && vault_to <= LAST_CELL
            && vault_to != WALL_CELL
        {
            self.agent_cell = vault_to;
            return Transition::Vault;
        }
        Transition::Blocked
    }
}

fn offset(cell: usize, dir: isize) -> Option<usize> {
    cell.checked_add_signed(dir).filter(|c| *c <= LAST_CELL)
}

pub fn wj_spawn(seed: u64, level: u32) -> Result<WallJumperState, EnvError> {
    if level > MAX_LEVEL {
        return Err(EnvError::OutOfRange { level, max: MAX_LEVEL });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(WallJumperState {
        agent_cell: 0,
        block_cell: rng.random_range(BLOCK_SPAWN),
        on_block: false,
        level,
        steps_taken: 0,
    })
}

/// Advances one tick. The caller is responsible for not stepping finished
/// episodes (see [`WallJumper`]).
pub fn wj_step(state: &mut WallJumperState, action: WjAction) -> StepResult {
    state.transition(action);
    state.steps_taken += 1;
    let mut reward = STEP_PENALTY;
    let kind = if state.in_goal() {
        reward += SUCCESS_REWARD;
        TerminalKind::Success
    } else if state.steps_taken >= MAX_EPISODE_STEPS {
        reward += TIMEOUT_REWARD;
        TerminalKind::Timeout
    } else {
        TerminalKind::None
    };
    StepResult { observation: state.observation(), reward, kind }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub actions: Vec<WjAction>,
    pub transitions: Vec<Transition>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn uses_block(&self) -> bool {
        self.transitions.iter().any(|t| t.uses_block())
    }

    pub fn contains(&self, transition: Transition) -> bool {
        self.transitions.contains(&transition)
    }
}

/// Breadth-first search over (agent, block, on_block) for a shortest plan
/// reaching a goal cell. With `allow_block = false`, pushes and mounts are
/// pruned.
pub fn wj_shortest_plan(start: &WallJumperState, allow_block: bool) -> Option<Plan> {
    let key = |s: &WallJumperState| {
        (s.agent_cell * CORRIDOR_LENGTH + s.block_cell) * 2 + usize::from(s.on_block)
    };
    let mut parent: Vec<Option<(usize, WjAction, Transition)>> =
        vec![None; CORRIDOR_LENGTH * CORRIDOR_LENGTH * 2];
    let mut seen = vec![false; parent.len()];
    let mut root = *start;
    root.steps_taken = 0;
    seen[key(&root)] = true;
    let mut queue = VecDeque::from([root]);

    while let Some(state) = queue.pop_front() {
        if state.in_goal() {
            let mut actions = Vec::new();
            let mut transitions = Vec::new();
            let mut k = key(&state);
            while let Some((prev, action, transition)) = parent[k] {
                actions.push(action);
                transitions.push(transition);
                k = prev;
            }
            actions.reverse();
            transitions.reverse();
            return Some(Plan { actions, transitions });
        }
        for action in WjAction::ALL {
            let mut next = state;
            let transition = next.transition(action);
            if !allow_block && transition.uses_block() {
                continue;
            }
            let k = key(&next);
            if !seen[k] {
                seen[k] = true;
                parent[k] = Some((key(&state), action, transition));
                queue.push_back(next);
            }
        }
    }
    None
}

/// Shortest successful plan from `state`, preferring a block-free plan when
/// one of equal length exists. Ignores the step cap.
pub fn wj_solve_oracle(state: &WallJumperState) -> Option<Plan> {
    let any = wj_shortest_plan(state, true)?;
    match wj_shortest_plan(state, false) {
        Some(free) if free.len() == any.len() => Some(free),
        _ => Some(any),
    }
}

#[derive(Debug, Clone)]
pub struct WallJumper {
    pending_level: u32,
    state: Option<WallJumperState>,
    done: bool,
}

impl Default for WallJumper {
    fn default() -> Self {
        Self::new()
    }
}

impl WallJumper {
    pub fn new() -> Self {
        Self { pending_level: 0, state: None, done: false }
    }

    pub fn state(&self) -> Option<&WallJumperState> {
        self.state.as_ref()
    }
}

impl Environment for WallJumper {
    fn descriptor(&self) -> EnvDescriptor {
        EnvDescriptor {
            env_id: EnvId::WallJumper,
            obs_dim: 6,
            action_count: WjAction::ALL.len(),
            max_level: MAX_LEVEL,
            max_episode_steps: MAX_EPISODE_STEPS,
        }
    }

    fn reward_bounds(&self) -> RewardBounds {
        RewardBounds {
            min: STEP_PENALTY + TIMEOUT_REWARD,
            max: STEP_PENALTY + SUCCESS_REWARD,
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let state = wj_spawn(seed, self.pending_level).expect("pending level validated");
        let obs = state.observation();
        self.state = Some(state);
        self.done = false;
        obs
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let state = self.state.as_mut().ok_or(EnvError::EpisodeNotStarted)?;
        if self.done {
            return Err(EnvError::SteppedAfterTerminal);
        }
        let action = WjAction::from_index(action).ok_or(EnvError::InvalidAction {
            action,
            count: WjAction::ALL.len(),
        })?;
        let result = wj_step(state, action);
        self.done = result.terminal();
        Ok(result)
    }

    fn set_difficulty(&mut self, level: u32) -> Result<(), EnvError> {
        if level > MAX_LEVEL {
            return Err(EnvError::OutOfRange { level, max: MAX_LEVEL });
        }
        self.pending_level = level;
        Ok(())
    }

    fn level(&self) -> u32 {
        self.state.map_or(self.pending_level, |s| s.level)
    }

    fn pending_level(&self) -> u32 {
        self.pending_level
    }

    fn observe(&self) -> Observation {
        match &self.state {
            Some(state) => state.observation(),
            None => Observation::new(vec![0.0; 6]),
        }
    }
}
