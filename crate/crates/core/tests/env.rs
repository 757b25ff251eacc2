use crl_core::env::{
    self, make_sequence, reset, step, success, EnvState, RewardVariant, SequenceName, TaskSpec,
    POS_LIMIT, STATE_DIM, VEL_LIMIT,
};
use proptest::prelude::*;

fn reach_task(gain: f64) -> TaskSpec {
    TaskSpec {
        task_id: 1,
        goal: [0.8, 0.0],
        object_a_init: [0.5, 0.5],
        object_b_init: [-0.5, 0.5],
        dynamics_gain: gain,
        reward_variant: RewardVariant::ReachGoal,
        max_episode_steps: 50,
    }
}

#[test]
fn five_step_rollout_matches_hand_recurrence() {
    let task = reach_task(1.2);
    let mut s = reset(&task, 11);
    // straight-line recurrence: v_k = v_{k-1} + 0.1 g, x_k = x_{k-1} + 0.1 v_k
    let (mut x, mut y) = (s.agent_pos[0], s.agent_pos[1]);
    let mut v = 0.0;
    for k in 1..=5 {
        let (next, r, done) = step(&task, &s, &[1.0, 0.0]).unwrap();
        v += 0.1 * 1.2;
        x += 0.1 * v;
        assert!((next.agent_pos[0] - x).abs() < 1e-15, "step {k}");
        assert_eq!(next.agent_pos[1], y);
        assert!((next.agent_vel[0] - v).abs() < 1e-15);
        assert_eq!(next.agent_vel[1], 0.0);
        let d = ((x - 0.8).powi(2) + y.powi(2)).sqrt();
        assert!((r - (-d + if d < 0.1 { 1.0 } else { 0.0 })).abs() < 1e-15);
        assert!(!done);
        assert_eq!(next.step_count, k);
        s = next;
    }
    // closed form after 5 steps: x_5 = x_0 + 0.01 g (1 + 2 + 3 + 4 + 5)
    let x5 = reset(&task, 11).agent_pos[0] + 0.01 * 1.2 * 15.0;
    assert!((s.agent_pos[0] - x5).abs() < 1e-14);
    y = s.agent_pos[1];
    assert_eq!(y, reset(&task, 11).agent_pos[1]);
}

#[test]
fn velocity_and_position_clip() {
    let task = reach_task(1.5);
    let mut s = reset(&task, 0);
    for _ in 0..49 {
        let (n, _, done) = step(&task, &s, &[5.0, -5.0]).unwrap();
        assert!(n.agent_vel.iter().all(|v| v.abs() <= VEL_LIMIT));
        assert!(n.agent_pos.iter().all(|p| p.abs() <= POS_LIMIT));
        if done {
            break;
        }
        s = n;
    }
    assert_eq!(s.agent_vel, [VEL_LIMIT, -VEL_LIMIT]);
}

#[test]
fn different_seeds_move_the_agent() {
    let task = reach_task(1.0);
    assert_ne!(reset(&task, 1).agent_pos, reset(&task, 2).agent_pos);
    assert_eq!(reset(&task, 3), reset(&task, 3));
}

#[test]
fn success_ends_the_episode() {
    let task = reach_task(1.0);
    let s = EnvState {
        agent_pos: [0.75, 0.0],
        agent_vel: [0.0, 0.0],
        object_a_pos: task.object_a_init,
        object_b_pos: task.object_b_init,
        goal_pos: task.goal,
        step_count: 0,
    };
    let (n, r, done) = step(&task, &s, &[0.0, 0.0]).unwrap();
    assert!(success(&task, &n));
    assert!(done);
    assert!((r - (1.0 - 0.05)).abs() < 1e-12);
}

#[test]
fn sequences_share_spaces_and_alternate_variants() {
    for name in [SequenceName::TW4, SequenceName::TW10] {
        let tasks = make_sequence(name, 3);
        assert_eq!(tasks.len(), name.len());
        assert_eq!(tasks, make_sequence(name, 3));
        for w in tasks.windows(2) {
            assert_ne!(w[0].reward_variant, w[1].reward_variant);
        }
        for (i, t) in tasks.iter().enumerate() {
            assert_eq!(t.task_id, i + 1);
            for p in [t.goal, t.object_a_init, t.object_b_init] {
                assert!(p.iter().all(|c| c.abs() <= 1.0));
            }
            assert_eq!(reset(t, 0).observation().len(), STATE_DIM);
        }
    }
    assert!("TW7".parse::<SequenceName>().is_err());
}

proptest! {
    #[test]
    fn rewards_stay_bounded(seed in 0u64..1000, task_seed in 0u64..20, actions in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60)) {
        let tasks = make_sequence(SequenceName::TW4, task_seed);
        let task = &tasks[(seed % 4) as usize];
        let diag = (2.0 * (2.0 * POS_LIMIT).powi(2)).sqrt();
        let mut s = reset(task, seed);
        for (ax, ay) in actions {
            let (n, r, done) = step(task, &s, &[ax, ay]).unwrap();
            prop_assert!(r.is_finite() && r >= -diag && r <= 1.0);
            prop_assert!(env::state_bounds().contains(&n.observation()));
            if done { break; }
            s = n;
        }
    }

    #[test]
    fn step_is_deterministic(seed in 0u64..1000, ax in -2.0f64..2.0, ay in -2.0f64..2.0) {
        let task = &make_sequence(SequenceName::TW4, 0)[1];
        let s = reset(task, seed);
        prop_assert_eq!(step(task, &s, &[ax, ay]).unwrap(), step(task, &s, &[ax, ay]).unwrap());
    }
}
