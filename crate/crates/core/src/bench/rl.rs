//! Policy-gradient adaptation on `particles2d`.
//!
//! The policy is a Gaussian with a learned mean `μ(s)` and a fixed standard
//! deviation. Adaptation and evaluation losses are the REINFORCE surrogate
//! `mean_t( ‖a_t − μ(s_t)‖² / 2σ² · Â_t )`, where `Â` are standardized
//! discounted returns-to-go. Rollouts use a detached copy of the policy, so
//! only the log-probabilities of the collected actions carry gradients.

use metalearn_autograd::Tensor;
use rand_distr::{Distribution, Normal};

use crate::algorithms::AdaptationTask;
use crate::env::{rollout, MetaEnv, Particles2D, Particles2DTask, Trajectory};
use crate::error::Result;
use crate::nn::Module;
use crate::seed::{hash64, rng};

pub const POLICY_STD: f64 = 0.1;
pub const DISCOUNT: f64 = 0.99;
const QUERY_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTask {
    pub goal: [f64; 2],
    pub support_episodes: usize,
    pub query_episodes: usize,
    pub seed: u64,
}

fn frozen(model: &Module) -> Result<Module> {
    let mut copy = model.clone();
    copy.set_parameters(model.parameters().iter().map(Tensor::detach).collect())?;
    Ok(copy)
}

fn returns_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + DISCOUNT * acc;
        *o = acc;
    }
    out
}

impl ParticleTask {
    pub fn new(goal: [f64; 2], support_episodes: usize, query_episodes: usize, seed: u64) -> Self {
        ParticleTask {
            goal,
            support_episodes,
            query_episodes,
            seed,
        }
    }

    /// `episodes` noisy rollouts of the policy, reproducible from `seed`.
    pub fn collect(&self, model: &Module, episodes: usize, seed: u64) -> Result<Vec<Trajectory>> {
        let policy = frozen(model)?;
        let noise = Normal::new(0.0, POLICY_STD).expect("positive std");
        let mut r = rng(seed);
        let mut env = Particles2D::new(seed);
        env.set_task(Particles2DTask { goal: self.goal });
        let mut out = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut failure = None;
            let traj = rollout(
                &mut env,
                |obs| {
                    let mean = Tensor::new(obs.to_vec(), &[1, 2])
                        .map_err(Into::into)
                        .and_then(|x| policy.forward(&x));
                    match mean {
                        Ok(m) => m.data().iter().map(|mu| mu + noise.sample(&mut r)).collect(),
                        Err(e) => {
                            failure.get_or_insert(e);
                            vec![0.0, 0.0]
                        }
                    }
                },
                Particles2D::HORIZON,
            )?;
            if let Some(e) = failure {
                return Err(e);
            }
            out.push(traj);
        }
        Ok(out)
    }

    /// REINFORCE surrogate of `trajs` under `model`.
    pub fn surrogate(model: &Module, trajs: &[Trajectory]) -> Result<Tensor> {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut adv = Vec::new();
        for t in trajs {
            obs.extend(t.observations.iter().flatten());
            actions.extend(t.actions.iter().flatten());
            adv.extend(returns_to_go(&t.rewards));
        }
        let n = adv.len();
        let mean = adv.iter().sum::<f64>() / n as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let adv: Vec<f64> = adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

        let mu = model.forward(&Tensor::new(obs, &[n, 2])?)?;
        let diff = Tensor::new(actions, &[n, 2])?.sub(&mu)?;
        let nll = diff
            .square()
            .matmul(&Tensor::ones(&[2, 1])?)?
            .scale(0.5 / (POLICY_STD * POLICY_STD));
        Ok(nll.mul(&Tensor::new(adv, &[n, 1])?)?.mean())
    }

    fn mean_return(trajs: &[Trajectory]) -> f64 {
        trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64
    }
}

impl AdaptationTask for ParticleTask {
    fn support_loss(&self, model: &Module, step: usize) -> Result<Tensor> {
        let trajs = self.collect(model, self.support_episodes, hash64(self.seed, step as u64))?;
        Self::surrogate(model, &trajs)
    }

    /// Surrogate loss and mean undiscounted return of fresh rollouts.
    fn query_loss(&self, model: &Module) -> Result<(Tensor, f64)> {
        let trajs = self.collect(model, self.query_episodes, hash64(self.seed, QUERY_STREAM))?;
        Ok((Self::surrogate(model, &trajs)?, Self::mean_return(&trajs)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp, Activation};
    use metalearn_autograd::grad;

    #[test]
    fn discounted_returns() {
        let g = returns_to_go(&[1.0, 1.0, 1.0]);
        assert!((g[2] - 1.0).abs() < 1e-15);
        assert!((g[0] - (1.0 + 0.99 + 0.99 * 0.99)).abs() < 1e-12);
    }

    #[test]
    fn rollouts_are_reproducible_and_differentiable() {
        let model = mlp(&[2, 8, 2], Activation::Tanh, &mut rng(0)).unwrap();
        let task = ParticleTask::new([0.5, -0.5], 2, 2, 9);
        let a = task.collect(&model, 2, 1).unwrap();
        let b = task.collect(&model, 2, 1).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|t| t.len() == Particles2D::HORIZON || *t.dones.last().unwrap()));
        let loss = task.support_loss(&model, 0).unwrap();
        let g = grad(&loss, &model.parameters(), false).unwrap();
        assert!(g.iter().any(|g| g.data().iter().any(|v| *v != 0.0)));
    }
}
