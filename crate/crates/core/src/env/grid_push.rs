use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, Randomization, StepInfo, StepResult};
use crate::error::{Error, Result};

pub type Cell = (usize, usize);

/// Sokoban-style pushing on a square grid.
///
/// Actions are `0 = right (+x)`, `1 = left`, `2 = down (+y)`, `3 = up`.
/// Walking into the object pushes it one cell if the cell behind it is on the
/// grid; otherwise nothing moves. Observations are the one-hot cells of the
/// agent, the object and the goal, concatenated.
#[derive(Clone, Debug)]
pub struct GridPush {
    spec: EnvSpec,
    size: usize,
    agent_start: Cell,
    object_start: Cell,
    goal_start: Cell,
    agent: Cell,
    object: Cell,
    goal: Cell,
    t: usize,
}

impl GridPush {
    pub fn new(size: usize, horizon: usize) -> Self {
        assert!(size >= 3 && horizon >= 1);
        let mid = size / 2;
        let spec = EnvSpec {
            id: "grid-push".into(),
            obs_dim: 3 * size * size,
            action_space: ActionSpace::Discrete { n: 4 },
            horizon,
            goal_radius: None,
            randomization: Randomization {
                object: true,
                ..Randomization::default()
            },
        };
        Self {
            spec,
            size,
            agent_start: (0, 0),
            object_start: (1, 1),
            goal_start: (mid, mid),
            agent: (0, 0),
            object: (1, 1),
            goal: (mid, mid),
            t: 0,
        }
    }

    pub fn set_randomization(&mut self, r: Randomization) {
        self.spec.randomization = r;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn object(&self) -> Cell {
        self.object
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    /// Cells from which the object can still be pushed anywhere: the
    /// interior of the grid.
    pub fn interior(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for y in 1..self.size - 1 {
            for x in 1..self.size - 1 {
                cells.push((x, y));
            }
        }
        cells
    }

    /// Places the entities directly and restarts the clock.
    pub fn set_state(&mut self, agent: Cell, object: Cell, goal: Cell) {
        assert_ne!(agent, object, "agent and object cannot share a cell");
        self.agent = agent;
        self.object = object;
        self.goal = goal;
        self.t = 0;
    }

    /// Dense index of the (agent, object) configuration for a fixed goal.
    pub fn state_index(&self) -> usize {
        let n = self.size * self.size;
        (self.agent.1 * self.size + self.agent.0) * n + self.object.1 * self.size + self.object.0
    }

    /// Successor configuration of `(agent, object)` under `action`.
    pub fn transition(&self, agent: Cell, object: Cell, action: usize) -> (Cell, Cell) {
        let Some(next) = self.offset(agent, action) else {
            return (agent, object);
        };
        if next != object {
            return (next, object);
        }
        match self.offset(object, action) {
            Some(pushed) => (next, pushed),
            None => (agent, object),
        }
    }

    fn offset(&self, (x, y): Cell, action: usize) -> Option<Cell> {
        let last = self.size - 1;
        match action {
            0 if x < last => Some((x + 1, y)),
            1 if x > 0 => Some((x - 1, y)),
            2 if y < last => Some((x, y + 1)),
            3 if y > 0 => Some((x, y - 1)),
            _ => None,
        }
    }

    fn manhattan(a: Cell, b: Cell) -> f64 {
        (a.0.abs_diff(b.0) + a.1.abs_diff(b.1)) as f64
    }

    fn info(&self) -> StepInfo {
        let scale = 2.0 * (self.size - 1) as f64;
        StepInfo {
            object_goal_dist: Self::manhattan(self.object, self.goal) / scale,
            agent_object_dist: Self::manhattan(self.agent, self.object) / scale,
            control_cost: 0.0,
        }
    }

    fn pick(rng: &mut ChaCha8Rng, cells: &[Cell]) -> Cell {
        cells[rng.random_range(0..cells.len())]
    }
}

impl Environment for GridPush {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_seeded(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.spec.randomization;
        let interior = self.interior();
        self.goal = if r.goal {
            let legal: Vec<Cell> = interior
                .iter()
                .copied()
                .filter(|&c| r.object || c != self.object_start)
                .collect();
            Self::pick(&mut rng, &legal)
        } else {
            self.goal_start
        };
        self.agent = self.agent_start;
        self.object = if r.object {
            let legal: Vec<Cell> = interior
                .iter()
                .copied()
                .filter(|&c| c != self.goal && c != self.agent)
                .collect();
            Self::pick(&mut rng, &legal)
        } else {
            self.object_start
        };
        if r.agent {
            let all: Vec<Cell> = (0..self.size * self.size)
                .map(|i| (i % self.size, i / self.size))
                .filter(|&c| c != self.object)
                .collect();
            self.agent = Self::pick(&mut rng, &all);
        }
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.t >= self.spec.horizon {
            return Err(Error::protocol("step called after the episode finished"));
        }
        let Action::Discrete(a) = *action else {
            return Err(Error::protocol("grid-push takes discrete actions"));
        };
        if a >= 4 {
            return Err(Error::protocol(format!("grid-push action {a} out of range")));
        }
        (self.agent, self.object) = self.transition(self.agent, self.object, a);
        self.t += 1;
        let achieved = self.task_achieved();
        Ok(StepResult {
            next_obs: self.observe(),
            task_reward: if achieved { 1.0 } else { 0.0 },
            achieved,
            done: self.t == self.spec.horizon,
            info: self.info(),
        })
    }

    fn task_achieved(&self) -> bool {
        self.object == self.goal
    }

    fn observe(&self) -> Vec<f64> {
        let n = self.size * self.size;
        let mut obs = vec![0.0; 3 * n];
        for (k, (x, y)) in [self.agent, self.object, self.goal].into_iter().enumerate() {
            obs[k * n + y * self.size + x] = 1.0;
        }
        obs
    }

    fn elapsed(&self) -> usize {
        self.t
    }
}
