//! Task-parameterized environments and a threaded vectorized wrapper.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed::{hash64, rng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("no task has been set")]
    NoTask,
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode finished; reset first")]
    EpisodeDone,
    #[error("expected an action of dimension {expected}, got {got}")]
    ActionDim { expected: usize, got: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("worker {index} failed: {msg}")]
    Worker { index: usize, msg: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type EnvResult<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

/// An environment exposing a task distribution on top of reset/step.
pub trait MetaEnv: Send {
    type Task: Clone + Debug + PartialEq + Send + 'static;

    fn sample_tasks(&mut self, n: usize) -> Vec<Self::Task>;
    /// Replaces the active task. Does not reset the state.
    fn set_task(&mut self, task: Self::Task);
    fn task(&self) -> Option<Self::Task>;
    fn reset(&mut self) -> EnvResult<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> EnvResult<Step>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particles2DTask {
    pub goal: [f64; 2],
}

/// Point-mass navigation in the plane.
///
/// The particle starts at the origin, moves by the action clamped to
/// `[-0.1, 0.1]` per axis, and stays inside `[-1, 1]²`. Reward is the
/// negative distance to the goal; the episode ends within 0.01 of the goal
/// or after 100 steps.
#[derive(Debug, Clone)]
pub struct Particles2D {
    rng: ChaCha8Rng,
    goal_x: (f64, f64),
    goal_y: (f64, f64),
    task: Option<Particles2DTask>,
    pos: [f64; 2],
    steps: usize,
    state: EpisodeState,
    delay: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EpisodeState {
    Idle,
    Running,
    Done,
}

impl Particles2D {
    pub const MAX_ACTION: f64 = 0.1;
    pub const GOAL_RADIUS: f64 = 0.01;
    pub const HORIZON: usize = 100;
    pub const BOUND: f64 = 1.0;

    pub fn new(seed: u64) -> Self {
        Particles2D {
            rng: rng(seed),
            goal_x: (-1.0, 1.0),
            goal_y: (-1.0, 1.0),
            task: None,
            pos: [0.0; 2],
            steps: 0,
            state: EpisodeState::Idle,
            delay: None,
        }
    }

    /// Restricts sampled goals to a sub-rectangle of `[-1, 1]²`.
    pub fn with_goal_range(mut self, x: (f64, f64), y: (f64, f64)) -> Result<Self, EnvError> {
        for (lo, hi) in [x, y] {
            if !(-Self::BOUND <= lo && lo < hi && hi <= Self::BOUND) {
                return Err(EnvError::Invalid(format!("goal range [{lo}, {hi}] not inside [-1, 1]")));
            }
        }
        self.goal_x = x;
        self.goal_y = y;
        Ok(self)
    }

    /// Sleeps this long inside every step. Only useful for timing tests.
    pub fn with_step_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn distance(&self, goal: [f64; 2]) -> f64 {
        (self.pos[0] - goal[0]).hypot(self.pos[1] - goal[1])
    }
}

impl MetaEnv for Particles2D {
    type Task = Particles2DTask;

    fn sample_tasks(&mut self, n: usize) -> Vec<Particles2DTask> {
        (0..n)
            .map(|_| Particles2DTask {
                goal: [
                    self.rng.gen_range(self.goal_x.0..self.goal_x.1),
                    self.rng.gen_range(self.goal_y.0..self.goal_y.1),
                ],
            })
            .collect()
    }

    fn set_task(&mut self, task: Particles2DTask) {
        self.task = Some(task);
    }

    fn task(&self) -> Option<Particles2DTask> {
        self.task
    }

    fn reset(&mut self) -> EnvResult<Vec<f64>> {
        if self.task.is_none() {
            return Err(EnvError::NoTask);
        }
        self.pos = [0.0; 2];
        self.steps = 0;
        self.state = EpisodeState::Running;
        Ok(self.pos.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> EnvResult<Step> {
        let goal = self.task.ok_or(EnvError::NoTask)?.goal;
        match self.state {
            EpisodeState::Idle => return Err(EnvError::NotReset),
            EpisodeState::Done => return Err(EnvError::EpisodeDone),
            EpisodeState::Running => {}
        }
        if action.len() != 2 {
            return Err(EnvError::ActionDim {
                expected: 2,
                got: action.len(),
            });
        }
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        for (p, a) in self.pos.iter_mut().zip(action) {
            let a = if a.is_nan() {
                0.0
            } else {
                a.clamp(-Self::MAX_ACTION, Self::MAX_ACTION)
            };
            *p = (*p + a).clamp(-Self::BOUND, Self::BOUND);
        }
        self.steps += 1;
        let dist = self.distance(goal);
        let done = dist < Self::GOAL_RADIUS || self.steps >= Self::HORIZON;
        if done {
            self.state = EpisodeState::Done;
        }
        let mut info = BTreeMap::new();
        info.insert("distance".to_string(), dist);
        Ok(Step {
            obs: self.pos.to_vec(),
            reward: -dist,
            done,
            info,
        })
    }
}

enum Command<T> {
    SampleTasks(usize),
    SetTask(T),
    GetTask,
    Reset,
    Step(Vec<f64>),
}

enum Reply<T> {
    Tasks(Vec<T>),
    Task(Option<T>),
    Unit,
    Obs(Vec<f64>),
    Step(Step),
}

struct Worker<T> {
    tx: Sender<Command<T>>,
    rx: Receiver<EnvResult<Reply<T>>>,
    handle: Option<JoinHandle<()>>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

fn serve<E: MetaEnv>(mut env: E, index: usize, rx: Receiver<Command<E::Task>>, tx: Sender<EnvResult<Reply<E::Task>>>) {
    let mut done = false;
    while let Ok(cmd) = rx.recv() {
        let outcome = catch_unwind(AssertUnwindSafe(|| match cmd {
            Command::SampleTasks(n) => Ok(Reply::Tasks(env.sample_tasks(n))),
            Command::SetTask(t) => {
                env.set_task(t);
                Ok(Reply::Unit)
            }
            Command::GetTask => Ok(Reply::Task(env.task())),
            Command::Reset => {
                done = false;
                env.reset().map(Reply::Obs)
            }
            Command::Step(action) => {
                if done {
                    done = false;
                    let obs = env.reset()?;
                    let mut info = BTreeMap::new();
                    info.insert("auto_reset".to_string(), 1.0);
                    return Ok(Reply::Step(Step {
                        obs,
                        reward: 0.0,
                        done: false,
                        info,
                    }));
                }
                let step = env.step(&action)?;
                done = step.done;
                Ok(Reply::Step(step))
            }
        }));
        let (reply, fatal) = match outcome {
            Ok(r) => (r, false),
            Err(p) => (
                Err(EnvError::Worker {
                    index,
                    msg: panic_message(p),
                }),
                true,
            ),
        };
        if tx.send(reply).is_err() || fatal {
            return;
        }
    }
}

/// `n` copies of an environment, each owned by its own thread and stepped
/// in lockstep. Results always come back in worker order.
///
/// An environment that reports `done` is reset by its next `step_all`; that
/// step returns the fresh observation with zero reward and
/// `info["auto_reset"] = 1`, ignoring the action.
pub struct VectorEnv<E: MetaEnv> {
    workers: Vec<Worker<E::Task>>,
}

impl<E: MetaEnv + 'static> VectorEnv<E> {
    /// Worker `w` runs `make_env(hash64(base_seed, w))`.
    pub fn new<F>(mut make_env: F, n: usize, base_seed: u64) -> EnvResult<Self>
    where
        F: FnMut(u64) -> E,
    {
        if n == 0 {
            return Err(EnvError::Invalid("a vector env needs at least one worker".into()));
        }
        let mut workers = Vec::with_capacity(n);
        for index in 0..n {
            let env = make_env(hash64(base_seed, index as u64));
            let (cmd_tx, cmd_rx) = channel();
            let (res_tx, res_rx) = channel();
            let handle = std::thread::Builder::new()
                .name(format!("env-worker-{index}"))
                .spawn(move || serve(env, index, cmd_rx, res_tx))
                .map_err(|e| EnvError::Worker {
                    index,
                    msg: e.to_string(),
                })?;
            workers.push(Worker {
                tx: cmd_tx,
                rx: res_rx,
                handle: Some(handle),
            });
        }
        Ok(VectorEnv { workers })
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    fn dead(index: usize) -> EnvError {
        EnvError::Worker {
            index,
            msg: "worker is no longer running".into(),
        }
    }

    /// Sends one command per selected worker, then gathers all replies.
    fn exchange(&self, commands: Vec<Option<Command<E::Task>>>) -> Vec<Option<EnvResult<Reply<E::Task>>>> {
        let sent: Vec<Option<bool>> = commands
            .into_iter()
            .zip(&self.workers)
            .map(|(cmd, w)| cmd.map(|c| w.tx.send(c).is_ok()))
            .collect();
        sent.into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.map(|ok| {
                    if !ok {
                        return Err(Self::dead(i));
                    }
                    self.workers[i].rx.recv().unwrap_or_else(|_| Err(Self::dead(i)))
                })
            })
            .collect()
    }

    fn broadcast(&self, make: impl Fn() -> Command<E::Task>) -> EnvResult<Vec<Reply<E::Task>>> {
        self.exchange((0..self.workers.len()).map(|_| Some(make())).collect())
            .into_iter()
            .map(|r| r.expect("every worker was addressed"))
            .collect()
    }

    /// Draws tasks from worker 0's distribution.
    pub fn sample_tasks(&self, n: usize) -> EnvResult<Vec<E::Task>> {
        let mut cmds: Vec<Option<Command<E::Task>>> = (0..self.workers.len()).map(|_| None).collect();
        cmds[0] = Some(Command::SampleTasks(n));
        match self.exchange(cmds).swap_remove(0) {
            Some(Ok(Reply::Tasks(t))) => Ok(t),
            Some(Err(e)) => Err(e),
            _ => unreachable!("protocol mismatch"),
        }
    }

    /// Assigns the same task to every worker.
    pub fn set_task(&self, task: &E::Task) -> EnvResult<()> {
        self.broadcast(|| Command::SetTask(task.clone())).map(|_| ())
    }

    /// Assigns one task per worker.
    pub fn set_tasks(&self, tasks: &[E::Task]) -> EnvResult<()> {
        self.check_count(tasks.len())?;
        let cmds = tasks.iter().map(|t| Some(Command::SetTask(t.clone()))).collect();
        for r in self.exchange(cmds) {
            r.expect("every worker was addressed")?;
        }
        Ok(())
    }

    pub fn tasks(&self) -> EnvResult<Vec<Option<E::Task>>> {
        self.broadcast(|| Command::GetTask)?
            .into_iter()
            .map(|r| match r {
                Reply::Task(t) => Ok(t),
                _ => unreachable!("protocol mismatch"),
            })
            .collect()
    }

    pub fn reset_all(&self) -> EnvResult<Vec<Vec<f64>>> {
        self.broadcast(|| Command::Reset)?
            .into_iter()
            .map(|r| match r {
                Reply::Obs(o) => Ok(o),
                _ => unreachable!("protocol mismatch"),
            })
            .collect()
    }

    fn check_count(&self, got: usize) -> EnvResult<()> {
        if got != self.workers.len() {
            return Err(EnvError::ActionCount {
                expected: self.workers.len(),
                got,
            });
        }
        Ok(())
    }

    /// Steps every worker concurrently with its own action.
    pub fn step_all(&self, actions: &[Vec<f64>]) -> EnvResult<Vec<Step>> {
        self.check_count(actions.len())?;
        self.step_some(actions.iter().cloned().map(Some).collect())
            .map(|steps| steps.into_iter().map(|s| s.expect("every worker stepped")).collect())
    }

    /// Steps only the workers with `Some` action.
    pub fn step_some(&self, actions: Vec<Option<Vec<f64>>>) -> EnvResult<Vec<Option<Step>>> {
        self.check_count(actions.len())?;
        let cmds = actions.into_iter().map(|a| a.map(Command::Step)).collect();
        self.exchange(cmds)
            .into_iter()
            .map(|r| match r {
                None => Ok(None),
                Some(Ok(Reply::Step(s))) => Ok(Some(s)),
                Some(Err(e)) => Err(e),
                Some(Ok(_)) => unreachable!("protocol mismatch"),
            })
            .collect()
    }
}

impl<E: MetaEnv> Drop for VectorEnv<E> {
    fn drop(&mut self) {
        for w in &mut self.workers {
            // closing the command channel ends the worker loop
            let (dead_tx, _) = channel();
            drop(std::mem::replace(&mut w.tx, dead_tx));
            if let Some(h) = w.handle.take() {
                let _ = h.join();
            }
        }
    }
}

/// One worker's episode: `observations[t]` is what the policy saw before
/// taking `actions[t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Resets every worker and rolls out up to `horizon` steps, stopping each
/// worker at its first `done`.
pub fn collect_episodes<E, P>(venv: &VectorEnv<E>, mut policy: P, horizon: usize) -> EnvResult<Vec<Trajectory>>
where
    E: MetaEnv + 'static,
    P: FnMut(usize, &[f64]) -> Vec<f64>,
{
    if horizon == 0 {
        return Err(EnvError::Invalid("horizon must be at least 1".into()));
    }
    let mut obs = venv.reset_all()?;
    let n = venv.num_workers();
    let mut trajs = vec![Trajectory::default(); n];
    let mut live = vec![true; n];
    for _ in 0..horizon {
        if !live.iter().any(|&l| l) {
            break;
        }
        let actions: Vec<Option<Vec<f64>>> = (0..n).map(|w| live[w].then(|| policy(w, &obs[w]))).collect();
        let steps = venv.step_some(actions.clone())?;
        for (w, (step, action)) in steps.into_iter().zip(actions).enumerate() {
            let (Some(step), Some(action)) = (step, action) else {
                continue;
            };
            let t = &mut trajs[w];
            t.observations.push(std::mem::replace(&mut obs[w], step.obs));
            t.actions.push(action);
            t.rewards.push(step.reward);
            t.dones.push(step.done);
            live[w] = !step.done;
        }
    }
    Ok(trajs)
}

/// Serial counterpart of [`collect_episodes`] for a single environment.
pub fn rollout<E: MetaEnv>(
    env: &mut E,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
    horizon: usize,
) -> EnvResult<Trajectory> {
    let mut obs = env.reset()?;
    let mut t = Trajectory::default();
    for _ in 0..horizon {
        let action = policy(&obs);
        let step = env.step(&action)?;
        t.observations.push(std::mem::replace(&mut obs, step.obs));
        t.actions.push(action);
        t.rewards.push(step.reward);
        t.dones.push(step.done);
        if step.done {
            break;
        }
    }
    Ok(t)
}
