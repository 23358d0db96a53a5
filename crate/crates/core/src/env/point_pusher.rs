use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, Randomization, StepInfo, StepResult};
use crate::error::{Error, Result};

pub const ARENA: f64 = 1.0;
pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.8;
pub const ACCEL: f64 = 2.0;
pub const CONTACT: f64 = 0.16;
pub const GOAL_RADIUS: f64 = 0.15;
pub const AGENT_START: [f64; 2] = [-0.6, 0.0];
pub const OBJECT_START: [f64; 2] = [0.0, 0.0];
pub const GOAL_START: [f64; 2] = [0.6, 0.0];
/// Square the object (or goal) is drawn from when randomized.
pub const OBJECT_REGION: (f64, f64) = (-0.3, 0.3);
pub const GOAL_REGION: (f64, f64) = (0.3, 0.8);

/// Kinematic 2-D pushing.
///
/// Per step: `v ← DAMPING·v + ACCEL·DT·clip(a)`, `p ← p + DT·v` (clamped to
/// the arena, zeroing velocity into walls). If the agent then lies within
/// `CONTACT` of the object, the object is displaced radially to distance
/// `CONTACT`. Observation: agent xy, agent velocity, object xy, goal xy.
#[derive(Clone, Debug)]
pub struct PointPusher {
    spec: EnvSpec,
    agent: [f64; 2],
    vel: [f64; 2],
    object: [f64; 2],
    goal: [f64; 2],
    t: usize,
}

impl PointPusher {
    pub fn new(horizon: usize) -> Self {
        assert!(horizon >= 1);
        let spec = EnvSpec {
            id: "point-pusher".into(),
            obs_dim: 8,
            action_space: ActionSpace::Continuous {
                low: vec![-1.0; 2],
                high: vec![1.0; 2],
            },
            horizon,
            goal_radius: Some(GOAL_RADIUS),
            randomization: Randomization {
                object: true,
                ..Randomization::default()
            },
        };
        Self {
            spec,
            agent: AGENT_START,
            vel: [0.0; 2],
            object: OBJECT_START,
            goal: GOAL_START,
            t: 0,
        }
    }

    pub fn set_randomization(&mut self, r: Randomization) {
        self.spec.randomization = r;
    }

    pub fn agent(&self) -> [f64; 2] {
        self.agent
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn object(&self) -> [f64; 2] {
        self.object
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn set_state(&mut self, agent: [f64; 2], vel: [f64; 2], object: [f64; 2], goal: [f64; 2]) {
        self.agent = agent;
        self.vel = vel;
        self.object = object;
        self.goal = goal;
        self.t = 0;
    }

    fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> [f64; 2] {
        [rng.random_range(lo..hi), rng.random_range(lo..hi)]
    }

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        (a[0] - b[0]).hypot(a[1] - b[1])
    }
}

impl Environment for PointPusher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_seeded(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.spec.randomization;
        self.object = if r.object {
            Self::uniform(&mut rng, OBJECT_REGION)
        } else {
            OBJECT_START
        };
        self.goal = if r.goal {
            Self::uniform(&mut rng, GOAL_REGION)
        } else {
            GOAL_START
        };
        self.agent = AGENT_START;
        if r.agent {
            loop {
                let a = Self::uniform(&mut rng, (-0.9, 0.9));
                if Self::dist(a, self.object) > CONTACT {
                    self.agent = a;
                    break;
                }
            }
        }
        self.vel = [0.0; 2];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.t >= self.spec.horizon {
            return Err(Error::protocol("step called after the episode finished"));
        }
        let Action::Continuous(a) = action else {
            return Err(Error::protocol("point-pusher takes continuous actions"));
        };
        if a.len() != 2 {
            return Err(Error::Dimension {
                what: "point-pusher action",
                expected: 2,
                got: a.len(),
            });
        }
        let force = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        for i in 0..2 {
            self.vel[i] = DAMPING * self.vel[i] + ACCEL * DT * force[i];
            let p = self.agent[i] + DT * self.vel[i];
            if p.abs() > ARENA {
                self.agent[i] = p.clamp(-ARENA, ARENA);
                self.vel[i] = 0.0;
            } else {
                self.agent[i] = p;
            }
        }
        let d = Self::dist(self.agent, self.object);
        if d < CONTACT && d > 0.0 {
            for i in 0..2 {
                let n = (self.object[i] - self.agent[i]) / d;
                self.object[i] = (self.agent[i] + CONTACT * n).clamp(-ARENA, ARENA);
            }
        }
        self.t += 1;
        let achieved = self.task_achieved();
        Ok(StepResult {
            next_obs: self.observe(),
            task_reward: if achieved { 1.0 } else { 0.0 },
            achieved,
            done: self.t == self.spec.horizon,
            info: StepInfo {
                object_goal_dist: Self::dist(self.object, self.goal),
                agent_object_dist: Self::dist(self.agent, self.object),
                control_cost: force[0] * force[0] + force[1] * force[1],
            },
        })
    }

    fn task_achieved(&self) -> bool {
        Self::dist(self.object, self.goal) <= GOAL_RADIUS
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(8);
        for v in [self.agent, self.vel, self.object, self.goal] {
            obs.extend_from_slice(&v);
        }
        obs
    }

    fn elapsed(&self) -> usize {
        self.t
    }
}
