use std::time::{Duration, Instant};

use metalearn::env::{
    collect_episodes, rollout, EnvError, EnvResult, MetaEnv, Particles2D, Particles2DTask, Step, VectorEnv,
};
use metalearn::seed::{hash64, rng};
use rand::Rng;

fn goal(x: f64, y: f64) -> Particles2DTask {
    Particles2DTask { goal: [x, y] }
}

fn greedy(g: [f64; 2]) -> impl FnMut(&[f64]) -> Vec<f64> {
    move |p: &[f64]| vec![(g[0] - p[0]).clamp(-0.1, 0.1), (g[1] - p[1]).clamp(-0.1, 0.1)]
}

#[test]
fn greedy_policy_reaches_corner_in_ten_steps() {
    let mut env = Particles2D::new(0);
    env.set_task(goal(1.0, 1.0));
    let t = rollout(&mut env, greedy([1.0, 1.0]), 200).unwrap();
    let expected = ((2f64.sqrt() - 0.01) / (0.1 * 2f64.sqrt())).ceil() as usize;
    assert_eq!(t.len(), expected);
    assert!(*t.dones.last().unwrap());
}

#[test]
fn zero_policy_holds_still_for_a_full_episode() {
    let mut env = Particles2D::new(0);
    env.set_task(goal(1.0, 1.0));
    let t = rollout(&mut env, |_| vec![0.0, 0.0], 500).unwrap();
    assert_eq!(t.len(), 100);
    assert!(t.rewards.windows(2).all(|w| w[0] == w[1]));
    assert!(t.observations.iter().all(|o| o == &vec![0.0, 0.0]));
}

#[test]
fn rewards_stay_in_bounds() {
    let mut r = rng(5);
    let mut env = Particles2D::new(5);
    for task in env.sample_tasks(50) {
        env.set_task(task);
        let t = rollout(&mut env, |_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)], 100).unwrap();
        assert!(t.rewards.iter().all(|&x| (-2.0 * 2f64.sqrt()..=0.0).contains(&x)));
    }
}

#[test]
fn set_task_keeps_state_until_reset() {
    let mut env = Particles2D::new(0);
    env.set_task(goal(1.0, 0.0));
    env.reset().unwrap();
    env.step(&[0.1, 0.0]).unwrap();
    env.set_task(goal(-1.0, 0.0));
    assert_eq!(env.position(), [0.1, 0.0]);
    let s = env.step(&[0.0, 0.0]).unwrap();
    assert!((s.reward + 1.1).abs() < 1e-12);
    env.reset().unwrap();
    assert_eq!(env.position(), [0.0, 0.0]);
}

#[test]
fn task_sampling_is_seeded() {
    let a = Particles2D::new(3).sample_tasks(20);
    let b = Particles2D::new(3).sample_tasks(20);
    assert_eq!(a.len(), 20);
    assert_eq!(a, b);
    assert_ne!(a, Particles2D::new(4).sample_tasks(20));
}

#[test]
fn goals_are_uniform_on_the_square() {
    let tasks = Particles2D::new(11).sample_tasks(10_000);
    let mut cells = [0usize; 16];
    for t in &tasks {
        assert!(t.goal.iter().all(|g| (-1.0..=1.0).contains(g)));
        let ix = (((t.goal[0] + 1.0) / 0.5) as usize).min(3);
        let iy = (((t.goal[1] + 1.0) / 0.5) as usize).min(3);
        cells[ix * 4 + iy] += 1;
    }
    let expected = 10_000.0 / 16.0;
    let chi2: f64 = cells.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of χ² with 15 degrees of freedom
    assert!(chi2 < 30.578, "chi2 = {chi2}");
}

fn policy_for(w: usize) -> impl FnMut(&[f64]) -> Vec<f64> {
    let mut r = rng(1000 + w as u64);
    move |_| vec![r.gen_range(-0.2..0.2), r.gen_range(-0.2..0.2)]
}

#[test]
fn vector_trajectories_equal_serial_ones() {
    for n in [1usize, 4, 16] {
        let base = 77;
        let venv = VectorEnv::new(Particles2D::new, n, base).unwrap();
        let tasks = venv.sample_tasks(n).unwrap();
        venv.set_tasks(&tasks).unwrap();
        let mut policies: Vec<_> = (0..n).map(policy_for).collect();
        let trajs = collect_episodes(&venv, |w, obs| policies[w](obs), 100).unwrap();
        let first_tasks = Particles2D::new(hash64(base, 0)).sample_tasks(n);
        assert_eq!(tasks, first_tasks);
        for (w, traj) in trajs.iter().enumerate() {
            let mut env = Particles2D::new(hash64(base, w as u64));
            env.set_task(tasks[w]);
            let serial = rollout(&mut env, policy_for(w), 100).unwrap();
            assert_eq!(traj, &serial, "n = {n}, worker {w}");
            let bits = |t: &metalearn::env::Trajectory| t.rewards.iter().map(|r| r.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(traj), bits(&serial));
        }
        let total: f64 = trajs.iter().map(|t| t.total_reward()).sum();
        let replay: f64 = (0..n)
            .map(|w| {
                let mut env = Particles2D::new(hash64(base, w as u64));
                env.set_task(tasks[w]);
                rollout(&mut env, policy_for(w), 100).unwrap().total_reward()
            })
            .sum();
        assert_eq!(total.to_bits(), replay.to_bits());
    }
}

#[test]
fn broadcast_reaches_every_worker() {
    let venv = VectorEnv::new(Particles2D::new, 16, 1).unwrap();
    let tasks = venv.sample_tasks(20).unwrap();
    assert_eq!(tasks.len(), 20);
    venv.set_task(&tasks[0]).unwrap();
    let seen = venv.tasks().unwrap();
    assert_eq!(seen.len(), 16);
    assert!(seen.iter().all(|t| *t == Some(tasks[0])));
    let obs = venv.reset_all().unwrap();
    let steps = venv.step_all(&vec![vec![0.05, 0.0]; 16]).unwrap();
    assert_eq!((obs.len(), steps.len()), (16, 16));
}

#[test]
fn workers_step_in_parallel() {
    let delay = Duration::from_millis(50);
    let venv = VectorEnv::new(move |s| Particles2D::new(s).with_step_delay(delay), 16, 0).unwrap();
    venv.set_task(&goal(0.9, 0.9)).unwrap();
    venv.reset_all().unwrap();
    let mut times: Vec<Duration> = (0..5)
        .map(|_| {
            let t0 = Instant::now();
            venv.step_all(&vec![vec![0.01, 0.0]; 16]).unwrap();
            t0.elapsed()
        })
        .collect();
    times.sort();
    assert!(times[2] < 2 * delay, "median step_all took {:?}", times[2]);
}

#[derive(Clone)]
struct Fragile {
    fail_on: Option<usize>,
    steps: usize,
}

impl MetaEnv for Fragile {
    type Task = u8;

    fn sample_tasks(&mut self, n: usize) -> Vec<u8> {
        vec![0; n]
    }

    fn set_task(&mut self, _: u8) {}

    fn task(&self) -> Option<u8> {
        Some(0)
    }

    fn reset(&mut self) -> EnvResult<Vec<f64>> {
        self.steps = 0;
        Ok(vec![0.0])
    }

    fn step(&mut self, _: &[f64]) -> EnvResult<Step> {
        self.steps += 1;
        if Some(self.steps) == self.fail_on {
            panic!("simulated crash");
        }
        Ok(Step {
            obs: vec![self.steps as f64],
            reward: 0.0,
            done: false,
            info: Default::default(),
        })
    }
}

#[test]
fn worker_failure_is_reported_not_hung() {
    let mut index = 0;
    let venv = VectorEnv::new(
        |_| {
            index += 1;
            Fragile {
                fail_on: (index == 3).then_some(2),
                steps: 0,
            }
        },
        4,
        0,
    )
    .unwrap();
    venv.reset_all().unwrap();
    venv.step_all(&vec![vec![0.0]; 4]).unwrap();
    match venv.step_all(&vec![vec![0.0]; 4]) {
        Err(EnvError::Worker { index, msg }) => {
            assert_eq!(index, 2);
            assert!(msg.contains("simulated crash"));
        }
        other => panic!("expected a worker error, got {other:?}"),
    }
    // the dead worker keeps reporting instead of blocking
    assert!(matches!(venv.reset_all(), Err(EnvError::Worker { index: 2, .. })));
}
