//! Toy point-mass control tasks sharing one 10-dimensional state space and
//! one 2-dimensional action space.
//!
//! State layout: `[agent_pos(2), agent_vel(2), object_a(2), object_b(2), goal(2)]`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{StateBounds, SwitchPair};
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 10;
pub const ACTION_DIM: usize = 2;

pub const POS_LIMIT: f64 = 1.5;
pub const VEL_LIMIT: f64 = 1.0;
pub const DT: f64 = 0.1;
pub const SUCCESS_RADIUS: f64 = 0.1;
pub const CONTACT_RADIUS: f64 = 0.15;
pub const RESET_JITTER: f64 = 0.05;
pub const DEFAULT_EPISODE_STEPS: usize = 50;

const OBJECT_A: Range<usize> = 4..6;
const OBJECT_B: Range<usize> = 6..8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardVariant {
    ReachGoal,
    PushObjectA,
    PushObjectB,
}

impl RewardVariant {
    fn is_push(self) -> bool {
        !matches!(self, RewardVariant::ReachGoal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// 1-based position in the sequence.
    pub task_id: usize,
    pub goal: [f64; 2],
    pub object_a_init: [f64; 2],
    pub object_b_init: [f64; 2],
    pub dynamics_gain: f64,
    pub reward_variant: RewardVariant,
    pub max_episode_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub agent_pos: [f64; 2],
    pub agent_vel: [f64; 2],
    pub object_a_pos: [f64; 2],
    pub object_b_pos: [f64; 2],
    pub goal_pos: [f64; 2],
    pub step_count: usize,
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        for block in [
            self.agent_pos,
            self.agent_vel,
            self.object_a_pos,
            self.object_b_pos,
            self.goal_pos,
        ] {
            v.extend_from_slice(&block);
        }
        v
    }
}

/// One environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only when the episode terminated by success; step-limit
    /// truncation does not cut bootstrapping.
    pub done: bool,
}

/// Per-dimension bounds of the shared state space.
pub fn state_bounds() -> StateBounds {
    let mut low = vec![-POS_LIMIT; STATE_DIM];
    let mut high = vec![POS_LIMIT; STATE_DIM];
    for i in 2..4 {
        low[i] = -VEL_LIMIT;
        high[i] = VEL_LIMIT;
    }
    StateBounds::new(low, high).expect("static bounds are ordered")
}

/// The object blocks may be exchanged without changing state semantics.
pub fn switchable_pairs() -> Vec<SwitchPair> {
    vec![SwitchPair {
        a: OBJECT_A,
        b: OBJECT_B,
    }]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clip2(v: [f64; 2], limit: f64) -> [f64; 2] {
    [v[0].clamp(-limit, limit), v[1].clamp(-limit, limit)]
}

fn target_position(task: &TaskSpec, state: &EnvState) -> [f64; 2] {
    match task.reward_variant {
        RewardVariant::ReachGoal => state.agent_pos,
        RewardVariant::PushObjectA => state.object_a_pos,
        RewardVariant::PushObjectB => state.object_b_pos,
    }
}

pub fn reset(task: &TaskSpec, seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = [
        rng.random_range(-RESET_JITTER..=RESET_JITTER),
        rng.random_range(-RESET_JITTER..=RESET_JITTER),
    ];
    EnvState {
        agent_pos: jitter,
        agent_vel: [0.0, 0.0],
        object_a_pos: task.object_a_init,
        object_b_pos: task.object_b_init,
        goal_pos: task.goal,
        step_count: 0,
    }
}

/// Distance of the task's target entity to the goal.
pub fn goal_distance(task: &TaskSpec, state: &EnvState) -> f64 {
    dist(target_position(task, state), state.goal_pos)
}

pub fn success(task: &TaskSpec, state: &EnvState) -> bool {
    goal_distance(task, state) < SUCCESS_RADIUS
}

/// Dense negative distance plus a unit bonus inside the success radius.
pub fn reward(task: &TaskSpec, state: &EnvState) -> f64 {
    let d = goal_distance(task, state);
    -d + if d < SUCCESS_RADIUS { 1.0 } else { 0.0 }
}

/// Advances the point mass one step. Returns the next state, the reward and
/// whether the episode ended (success or step limit).
pub fn step(task: &TaskSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64, bool)> {
    if action.len() != ACTION_DIM {
        return Err(Error::Shape(format!(
            "action has {} components, expected {ACTION_DIM}",
            action.len()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric("non-finite action".into()));
    }
    let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
    let gain = DT * task.dynamics_gain;
    let vel = clip2(
        [
            state.agent_vel[0] + gain * a[0],
            state.agent_vel[1] + gain * a[1],
        ],
        VEL_LIMIT,
    );
    let pos = clip2(
        [
            state.agent_pos[0] + DT * vel[0],
            state.agent_pos[1] + DT * vel[1],
        ],
        POS_LIMIT,
    );
    let moved = [pos[0] - state.agent_pos[0], pos[1] - state.agent_pos[1]];

    let mut next = state.clone();
    if task.reward_variant.is_push() {
        for obj in [&mut next.object_a_pos, &mut next.object_b_pos] {
            if dist(*obj, state.agent_pos) < CONTACT_RADIUS {
                *obj = clip2([obj[0] + moved[0], obj[1] + moved[1]], POS_LIMIT);
            }
        }
    }
    next.agent_pos = pos;
    next.agent_vel = vel;
    next.step_count += 1;

    let r = reward(task, &next);
    let done = success(task, &next) || next.step_count >= task.max_episode_steps;
    Ok((next, r, done))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceName {
    TW4,
    TW10,
}

impl SequenceName {
    pub fn len(self) -> usize {
        match self {
            SequenceName::TW4 => 4,
            SequenceName::TW10 => 10,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

impl FromStr for SequenceName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TW4" => Ok(SequenceName::TW4),
            "TW10" => Ok(SequenceName::TW10),
            other => Err(Error::Config(format!("unknown task sequence {other:?}"))),
        }
    }
}

impl fmt::Display for SequenceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceName::TW4 => f.write_str("TW4"),
            SequenceName::TW10 => f.write_str("TW10"),
        }
    }
}

fn polar<R: Rng>(rng: &mut R, r_lo: f64, r_hi: f64) -> [f64; 2] {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let r = rng.random_range(r_lo..r_hi);
    [r * angle.cos(), r * angle.sin()]
}

fn clip_unit(v: [f64; 2]) -> [f64; 2] {
    clip2(v, 1.0)
}

/// Builds a task sequence. Reward variants cycle reach, push-a, push-b so
/// adjacent tasks always differ. Pushed objects start in contact with the
/// agent's spawn point; the other object sits farther out as a distractor.
pub fn make_sequence(name: SequenceName, seed: u64) -> Vec<TaskSpec> {
    const CYCLE: [RewardVariant; 3] = [
        RewardVariant::ReachGoal,
        RewardVariant::PushObjectA,
        RewardVariant::PushObjectB,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..name.len())
        .map(|i| {
            let variant = CYCLE[i % CYCLE.len()];
            let gain = rng.random_range(0.75..1.5);
            let near = polar(&mut rng, 0.0, 0.07);
            let far = polar(&mut rng, 0.5, 0.9);
            let (a, b) = match variant {
                RewardVariant::ReachGoal => (far, polar(&mut rng, 0.5, 0.9)),
                RewardVariant::PushObjectA => (near, far),
                RewardVariant::PushObjectB => (far, near),
            };
            let goal = match variant {
                RewardVariant::ReachGoal => polar(&mut rng, 0.4, 0.8),
                _ => {
                    let off = polar(&mut rng, 0.4, 0.7);
                    clip_unit([near[0] + off[0], near[1] + off[1]])
                }
            };
            TaskSpec {
                task_id: i + 1,
                goal,
                object_a_init: clip_unit(a),
                object_b_init: clip_unit(b),
                dynamics_gain: gain,
                reward_variant: variant,
                max_episode_steps: DEFAULT_EPISODE_STEPS,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reach_task() -> TaskSpec {
        TaskSpec {
            task_id: 1,
            goal: [0.5, -0.25],
            object_a_init: [0.8, 0.8],
            object_b_init: [-0.8, 0.8],
            dynamics_gain: 1.0,
            reward_variant: RewardVariant::ReachGoal,
            max_episode_steps: 50,
        }
    }

    #[test]
    fn reset_is_deterministic_and_jitter_bounded() {
        let t = reach_task();
        assert_eq!(reset(&t, 7), reset(&t, 7));
        for seed in 0..200 {
            let s = reset(&t, seed);
            assert!(s.agent_pos.iter().all(|p| p.abs() <= RESET_JITTER));
            assert_eq!(s.object_a_pos, t.object_a_init);
            assert_eq!(s.goal_pos, t.goal);
        }
        assert_ne!(reset(&t, 1).agent_pos, reset(&t, 2).agent_pos);
    }

    #[test]
    fn zero_action_is_fixed_point() {
        let t = reach_task();
        let s = reset(&t, 3);
        let (n, r, done) = step(&t, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(n.agent_pos, s.agent_pos);
        assert_eq!(r, -dist(s.agent_pos, t.goal));
        assert!(!done);
    }

    #[test]
    fn success_at_goal_pays_one() {
        let t = reach_task();
        let mut s = reset(&t, 0);
        s.agent_pos = t.goal;
        assert!(success(&t, &s));
        let (n, r, done) = step(&t, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(n.agent_pos, t.goal);
        assert_eq!(r, 1.0);
        assert!(done);
    }

    #[test]
    fn success_threshold_is_strict() {
        let t = TaskSpec {
            goal: [0.0, 0.0],
            ..reach_task()
        };
        let mut s = reset(&t, 0);
        s.agent_pos = [0.2, 0.0];
        assert!(!success(&t, &s));
        s.agent_pos = [SUCCESS_RADIUS, 0.0];
        assert_eq!(goal_distance(&t, &s), SUCCESS_RADIUS);
        assert!(!success(&t, &s));
        s.agent_pos = [0.0, 0.0];
        assert!(success(&t, &s));
    }

    #[test]
    fn rejects_bad_actions() {
        let t = reach_task();
        let s = reset(&t, 0);
        assert!(matches!(step(&t, &s, &[f64::NAN, 0.0]), Err(Error::Numeric(_))));
        assert!(step(&t, &s, &[0.0]).is_err());
    }

    #[test]
    fn step_limit_ends_episode() {
        let t = TaskSpec {
            max_episode_steps: 3,
            ..reach_task()
        };
        let mut s = reset(&t, 0);
        let mut done = false;
        for _ in 0..3 {
            let (n, _, d) = step(&t, &s, &[0.0, 0.0]).unwrap();
            s = n;
            done = d;
        }
        assert!(done);
    }

    #[test]
    fn push_carries_object_in_contact() {
        let t = TaskSpec {
            reward_variant: RewardVariant::PushObjectA,
            object_a_init: [0.05, 0.0],
            ..reach_task()
        };
        let mut s = reset(&t, 0);
        s.agent_pos = [0.0, 0.0];
        let (n, _, _) = step(&t, &s, &[1.0, 0.0]).unwrap();
        let moved = n.agent_pos[0] - s.agent_pos[0];
        assert!(moved > 0.0);
        assert!((n.object_a_pos[0] - (0.05 + moved)).abs() < 1e-15);
        assert_eq!(n.object_b_pos, t.object_b_init);
    }

    #[test]
    fn sequences() {
        assert_eq!(make_sequence(SequenceName::TW4, 0).len(), 4);
        assert_eq!(make_sequence(SequenceName::TW10, 0).len(), 10);
        assert_eq!(
            make_sequence(SequenceName::TW10, 5),
            make_sequence(SequenceName::TW10, 5)
        );
        assert!("MW4".parse::<SequenceName>().is_err());
        let seq = make_sequence(SequenceName::TW10, 1);
        for w in seq.windows(2) {
            assert_ne!(w[0].reward_variant, w[1].reward_variant);
        }
        let bounds = state_bounds();
        for t in &seq {
            for v in t.goal.iter().chain(&t.object_a_init).chain(&t.object_b_init) {
                assert!(v.abs() <= 1.0);
            }
            let s = reset(t, 0);
            assert!(bounds.contains(&s.observation()));
        }
    }
}
