//! Two-dimensional navigation task with a rectangular no-go region.
//!
//! The agent starts in the lower-left corner of the unit square and must
//! reach the upper-right corner. The straight line between them crosses the
//! obstacle, so a distance-driven agent that ignores the constraint cuts
//! through it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub goal_bonus: f64,
    pub step_size: f64,
    pub max_steps: usize,
    pub world_min: [f64; 2],
    pub world_max: [f64; 2],
    /// Obstacle `lo.x < x < hi.x`, `lo.y < y <= hi.y`.
    pub obstacle_lo: [f64; 2],
    pub obstacle_hi: [f64; 2],
    pub gamma: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            start: [0.1, 0.1],
            goal: [0.9, 0.9],
            goal_radius: 0.05,
            goal_bonus: 10.0,
            step_size: 0.05,
            max_steps: 200,
            world_min: [0.0, 0.0],
            world_max: [1.0, 1.0],
            obstacle_lo: [0.1, 0.3],
            obstacle_hi: [0.7, 1.0],
            gamma: 0.99,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("nav: {msg}")));
        let finite = self
            .start
            .iter()
            .chain(&self.goal)
            .chain(&self.world_min)
            .chain(&self.world_max)
            .chain(&self.obstacle_lo)
            .chain(&self.obstacle_hi)
            .chain([&self.goal_radius, &self.goal_bonus, &self.step_size, &self.gamma])
            .all(|v| v.is_finite());
        if !finite {
            return bad("all values must be finite");
        }
        if !(self.step_size > 0.0) || !(self.goal_radius >= 0.0) {
            return bad("step_size must be positive and goal_radius non-negative");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if (0..2).any(|i| !(self.world_min[i] < self.world_max[i])) {
            return bad("world box is empty");
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.in_world(p) {
                return Err(Error::Config(format!("nav: {name} lies outside the world")));
            }
            if self.in_obstacle(p) {
                return Err(Error::Config(format!("nav: {name} lies inside the obstacle")));
            }
        }
        Ok(())
    }

    pub fn in_world(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| self.world_min[i] <= p[i] && p[i] <= self.world_max[i])
    }

    pub fn in_obstacle(&self, p: [f64; 2]) -> bool {
        self.obstacle_lo[0] < p[0]
            && p[0] < self.obstacle_hi[0]
            && self.obstacle_lo[1] < p[1]
            && p[1] <= self.obstacle_hi[1]
    }

    pub fn goal_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.goal[0]).hypot(p[1] - self.goal[1])
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(self.world_min[0], self.world_max[0]),
            p[1].clamp(self.world_min[1], self.world_max[1]),
        ]
    }
}

/// The eight compass moves, counter-clockwise from east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    E,
    NE,
    N,
    NW,
    W,
    SW,
    S,
    SE,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::E,
        Action::NE,
        Action::N,
        Action::NW,
        Action::W,
        Action::SW,
        Action::S,
        Action::SE,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// Unit direction vector.
    pub fn direction(self) -> [f64; 2] {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Action::E => [1.0, 0.0],
            Action::NE => [d, d],
            Action::N => [0.0, 1.0],
            Action::NW => [-d, d],
            Action::W => [-1.0, 0.0],
            Action::SW => [-d, -d],
            Action::S => [0.0, -1.0],
            Action::SE => [d, -d],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub position: [f64; 2],
    pub steps_taken: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: NavState,
    pub reward: f64,
    pub gt_cost: u8,
    pub done: bool,
    pub reached_goal: bool,
}

#[derive(Debug, Clone)]
pub struct NavEnv {
    config: NavConfig,
}

impl NavEnv {
    pub fn new(config: NavConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &NavConfig {
        &self.config
    }

    /// The initial state is fixed, so the seed has no effect.
    pub fn reset(&self, _seed: u64) -> NavState {
        NavState {
            position: self.config.start,
            steps_taken: 0,
            done: false,
        }
    }

    pub fn step(&self, state: &NavState, action: Action) -> Result<Transition> {
        let c = &self.config;
        if state.done || state.steps_taken >= c.max_steps {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let d = action.direction();
        let position = c.clamp([
            state.position[0] + c.step_size * d[0],
            state.position[1] + c.step_size * d[1],
        ]);
        let dist = c.goal_distance(position);
        let reached_goal = dist <= c.goal_radius;
        let steps_taken = state.steps_taken + 1;
        let done = reached_goal || steps_taken >= c.max_steps;
        let reward = -dist + if reached_goal { c.goal_bonus } else { 0.0 };
        Ok(Transition {
            state: NavState {
                position,
                steps_taken,
                done,
            },
            reward,
            gt_cost: c.in_obstacle(position) as u8,
            done,
            reached_goal,
        })
    }
}

/// Safe corridors the expert stays in: east along the bottom, then north
/// along the right side.
pub const EXPERT_BOXES: [([f64; 2], [f64; 2]); 2] = [([0.1, 0.1], [0.7, 0.3]), ([0.7, 0.1], [0.9, 0.9])];

/// Centre line of the expert's route.
const EXPERT_WAYPOINTS: [[f64; 2]; 5] = [[0.1, 0.1], [0.2, 0.2], [0.8, 0.2], [0.8, 0.8], [0.9, 0.9]];

/// Scripted expert demonstrations.
///
/// Each trajectory starts at the start state and walks the waypoint route
/// at `step_size` per step, with a random phase so trajectories do not share
/// positions along the route. Intermediate positions are displaced
/// perpendicular to the route by Gaussian noise of standard deviation
/// `sigma`, redrawn until the point lies in an expert box (clipped into the
/// nearest box if that keeps failing). The last state is the first route
/// point within the goal radius. Actions are the displacement to the next
/// state; the last state gets a zero action.
pub fn generate_expert(config: &NavConfig, n: usize, sigma: f64, seed: u64) -> Result<Vec<Trajectory>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Domain("need at least one expert trajectory".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma checked above");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let phase = if sigma > 0.0 { rng.random::<f64>() } else { 0.0 };
        let mut states: Vec<Vec<f64>> = vec![config.start.to_vec()];
        let mut s = (phase.max(1e-9)) * config.step_size;
        loop {
            let (p, normal) = route_at(s);
            if config.goal_distance(p) <= config.goal_radius {
                states.push(p.to_vec());
                break;
            }
            states.push(displace(p, normal, &noise, &mut rng).to_vec());
            s += config.step_size;
        }
        let mut actions: Vec<Vec<f64>> = states
            .windows(2)
            .map(|w| vec![w[1][0] - w[0][0], w[1][1] - w[0][1]])
            .collect();
        actions.push(vec![0.0, 0.0]);
        out.push(Trajectory::new(states, actions)?);
    }
    Ok(out)
}

fn displace(p: [f64; 2], normal: [f64; 2], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> [f64; 2] {
    const ATTEMPTS: usize = 100;
    let mut q = p;
    for _ in 0..ATTEMPTS {
        let off = noise.sample(rng);
        q = [p[0] + off * normal[0], p[1] + off * normal[1]];
        if in_expert_boxes(q) {
            return q;
        }
    }
    clip_to_expert_boxes(q)
}

/// Point at arc length `s` along the route with its segment's unit normal;
/// past the end, the route's last point.
fn route_at(s: f64) -> ([f64; 2], [f64; 2]) {
    let mut rest = s;
    for w in EXPERT_WAYPOINTS.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        if rest <= len {
            return ([a[0] + rest * dir[0], a[1] + rest * dir[1]], [-dir[1], dir[0]]);
        }
        rest -= len;
    }
    (EXPERT_WAYPOINTS[EXPERT_WAYPOINTS.len() - 1], [0.0, 0.0])
}

pub fn in_expert_boxes(p: [f64; 2]) -> bool {
    EXPERT_BOXES
        .iter()
        .any(|(lo, hi)| (0..2).all(|i| lo[i] <= p[i] && p[i] <= hi[i]))
}

/// Nearest point of the union of the expert boxes.
pub fn clip_to_expert_boxes(p: [f64; 2]) -> [f64; 2] {
    EXPERT_BOXES
        .iter()
        .map(|(lo, hi)| [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])])
        .min_by(|a, b| {
            let da = (a[0] - p[0]).hypot(a[1] - p[1]);
            let db = (b[0] - p[0]).hypot(b[1] - p[1]);
            da.total_cmp(&db)
        })
        .expect("two boxes")
}
