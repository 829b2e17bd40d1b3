//! Offline and online training loops.
//!
//! Offline training never touches an environment: K iterations of G
//! gradient steps, each sampling a uniform batch from the static dataset,
//! applying the scope's conservative critic loss, then the policy
//! improvement loss, then Polyak target updates. Periodic evaluation is the
//! caller's business via an optional hook. Online training alternates
//! episode collection into the replay buffer with the same machinery minus
//! the conservative penalty.

use rand::Rng;

use crate::dataset::{Dataset, TransitionRecord};
use crate::env::{EnvState, NetConfig};
use crate::error::{Error, Result};
use crate::nn::{adam_step, polyak_blend, AdamState};
use crate::seeding::{derive_rng, derive_seed};

use super::act::{act, ActMode};
use super::config::{Algo, TrainerConfig};
use super::losses::{cql_critic_loss, dqn_loss, sac_improve_loss};
use super::losses::{ctde_eval_loss, sac_eval_loss_centralized, sac_eval_loss_independent};
use super::nets::AgentNets;
use super::replay::ReplayBuffer;

/// Evaluation snapshot appended to the learning curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub rsum: f64,
    pub rperc5: f64,
    pub rscore: f64,
}

/// Called at the evaluation cadence with (iteration, current nets).
pub type EvalHook<'a> = dyn FnMut(usize, &AgentNets) -> Result<EvalPoint> + 'a;

/// One learning-curve row; losses are means over the iteration's steps.
#[derive(Debug, Clone)]
pub struct CurveRow {
    pub iteration: usize,
    pub eval: Option<EvalPoint>,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub cql_penalty_mean: f64,
}

impl CurveRow {
    pub const CSV_HEADER: &'static str =
        "iteration,eval_Rsum,eval_Rperc5,eval_Rscore,critic_loss,policy_loss,cql_penalty_mean";

    pub fn to_csv_line(&self) -> String {
        let (rsum, rperc5, rscore) = match &self.eval {
            Some(e) => (
                format!("{}", e.rsum),
                format!("{}", e.rperc5),
                format!("{}", e.rscore),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        format!(
            "{},{rsum},{rperc5},{rscore},{},{},{}",
            self.iteration, self.critic_loss, self.policy_loss, self.cql_penalty_mean
        )
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub nets: AgentNets,
    pub curves: Vec<CurveRow>,
    /// Replay buffer contents after online training; empty for offline runs.
    pub buffer: ReplayBuffer,
}

struct Optimizers {
    critic: Vec<AdamState>,
    policy: Vec<AdamState>,
}

impl Optimizers {
    fn new(nets: &AgentNets, cfg: &TrainerConfig) -> Optimizers {
        Optimizers {
            critic: nets
                .bundles
                .iter()
                .map(|b| AdamState::new(&b.critic, cfg.critic_lr))
                .collect(),
            policy: nets
                .bundles
                .iter()
                .map(|b| AdamState::new(&b.policy, cfg.actor_lr))
                .collect(),
        }
    }
}

/// The automatic reward scale puts discounted returns near unit magnitude.
fn auto_reward_scale(records: &[TransitionRecord], discount: f64) -> f64 {
    let mean_abs = records.iter().map(|r| r.reward.abs()).sum::<f64>() / records.len() as f64;
    if mean_abs > 0.0 {
        (1.0 - discount) / mean_abs
    } else {
        1.0
    }
}

fn resolve_reward_scale(cfg: &TrainerConfig, records: &[TransitionRecord]) -> f64 {
    if cfg.reward_scale == 0.0 {
        auto_reward_scale(records, cfg.discount)
    } else {
        cfg.reward_scale
    }
}

/// Owned batch copy with rewards scaled for the losses.
fn scale_batch(batch: &[&TransitionRecord], scale: f64) -> Vec<TransitionRecord> {
    batch
        .iter()
        .map(|r| TransitionRecord {
            reward: r.reward * scale,
            ..(*r).clone()
        })
        .collect()
}

fn with_step(err: Error, step: usize) -> Error {
    match err {
        Error::NonFinite { context, .. } => Error::NonFinite { context, step },
        other => other,
    }
}

/// One gradient step on a batch: critic update, then policy update, then
/// target blending. DQN skips the policy. `cql_alpha` switches the critic
/// objective between the conservative and plain variants.
fn gradient_step(
    cfg: &TrainerConfig,
    nets: &mut AgentNets,
    opt: &mut Optimizers,
    raw_batch: &[&TransitionRecord],
    reward_scale: f64,
    step: usize,
) -> Result<(f64, f64, f64)> {
    let scaled = scale_batch(raw_batch, reward_scale);
    let batch: Vec<&TransitionRecord> = scaled.iter().collect();
    let batch = batch.as_slice();
    let cql_alpha = cfg.algo.is_offline().then_some(cfg.cql_alpha);
    let critic = match (cfg.algo, cql_alpha) {
        (Algo::DqnC, _) => dqn_loss(batch, nets, cfg.discount),
        (_, Some(alpha)) => {
            cql_critic_loss(batch, nets, cfg.discount, cfg.entropy_coeff, alpha)
        }
        (Algo::SacC, None) => {
            sac_eval_loss_centralized(batch, nets, cfg.discount, cfg.entropy_coeff)
        }
        (Algo::SacI, None) => {
            sac_eval_loss_independent(batch, nets, cfg.discount, cfg.entropy_coeff)
        }
        (Algo::SacCtde, None) => ctde_eval_loss(batch, nets, cfg.discount, cfg.entropy_coeff),
        (algo, None) => {
            return Err(Error::Config(format!(
                "{algo} is offline-only; no online critic loss"
            )))
        }
    }
    .map_err(|e| with_step(e, step))?;
    for (bundle, (grads, state)) in nets
        .bundles
        .iter_mut()
        .zip(critic.grads.iter().zip(&mut opt.critic))
    {
        adam_step(&mut bundle.critic, grads, state).map_err(|e| with_step(e, step))?;
    }

    let policy_loss = if cfg.algo == Algo::DqnC {
        0.0
    } else {
        let policy = sac_improve_loss(batch, nets, cfg.entropy_coeff)
            .map_err(|e| with_step(e, step))?;
        for (bundle, (grads, state)) in nets
            .bundles
            .iter_mut()
            .zip(policy.grads.iter().zip(&mut opt.policy))
        {
            adam_step(&mut bundle.policy, grads, state).map_err(|e| with_step(e, step))?;
        }
        policy.loss
    };

    for bundle in &mut nets.bundles {
        polyak_blend(&mut bundle.target_critic, &bundle.critic, cfg.polyak_tau);
    }
    Ok((critic.loss, policy_loss, critic.penalty_mean))
}

/// Trains purely from the static dataset; no environment interaction
/// happens here. Returns the nets and per-iteration learning curves.
pub fn train_offline(
    cfg: &TrainerConfig,
    dataset: &Dataset,
    mut eval_hook: Option<&mut EvalHook>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if !cfg.algo.is_offline() {
        return Err(Error::Config(format!(
            "algo {} is online; use train_online",
            cfg.algo
        )));
    }
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let net_cfg = dataset.net_config()?;
    let mut nets = AgentNets::new(
        cfg.algo,
        net_cfg.num_aps,
        net_cfg.obs_dim(),
        net_cfg.actions_per_agent(),
        &cfg.hidden_dims(),
        cfg.seed,
    );
    let mut opt = Optimizers::new(&nets, cfg);
    let reward_scale = resolve_reward_scale(cfg, &dataset.records);
    let mut rng = derive_rng(cfg.seed, "offline-batch");
    let mut curves = Vec::with_capacity(cfg.iterations);
    let mut step = 0;
    for iteration in 1..=cfg.iterations {
        let mut sums = (0.0, 0.0, 0.0);
        for _ in 0..cfg.grad_steps_per_iter {
            step += 1;
            let amount = cfg.batch_size.min(dataset.records.len());
            let batch: Vec<&TransitionRecord> =
                rand::seq::index::sample(&mut rng, dataset.records.len(), amount)
                    .iter()
                    .map(|i| &dataset.records[i])
                    .collect();
            let (c, p, pen) = gradient_step(cfg, &mut nets, &mut opt, &batch, reward_scale, step)?;
            sums.0 += c;
            sums.1 += p;
            sums.2 += pen;
        }
        let steps = cfg.grad_steps_per_iter.max(1) as f64;
        let eval = match (&mut eval_hook, cfg.eval_cadence) {
            (Some(hook), cadence) if cadence > 0 && iteration % cadence == 0 => {
                Some(hook(iteration, &nets)?)
            }
            _ => None,
        };
        curves.push(CurveRow {
            iteration,
            eval,
            critic_loss: sums.0 / steps,
            policy_loss: sums.1 / steps,
            cql_penalty_mean: sums.2 / steps,
        });
    }
    Ok(TrainOutput {
        nets,
        curves,
        buffer: ReplayBuffer::new(cfg.replay_capacity),
    })
}

/// Online training: `iterations` episodes of interaction feeding the replay
/// buffer, with `grad_steps_per_iter` gradient steps after each episode.
/// The buffer rides along in the output and can be exported as a dataset.
pub fn train_online(
    cfg: &TrainerConfig,
    net_cfg: &NetConfig,
    mut eval_hook: Option<&mut EvalHook>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    net_cfg.validate()?;
    if cfg.algo.is_offline() {
        return Err(Error::Config(format!(
            "algo {} is offline; use train_offline",
            cfg.algo
        )));
    }
    let mut nets = AgentNets::new(
        cfg.algo,
        net_cfg.num_aps,
        net_cfg.obs_dim(),
        net_cfg.actions_per_agent(),
        &cfg.hidden_dims(),
        cfg.seed,
    );
    let mut opt = Optimizers::new(&nets, cfg);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut batch_rng = derive_rng(cfg.seed, "online-batch");
    let mut curves = Vec::with_capacity(cfg.iterations);
    let mut step = 0;
    // Fixed on the first gradient step from the buffer contents so later
    // batches see a stable scale.
    let mut reward_scale: Option<f64> = None;

    for episode in 0..cfg.iterations {
        let env_seed = derive_seed(cfg.seed, &format!("online-env/{episode}"));
        let mut act_rng = derive_rng(cfg.seed, &format!("online-act/{episode}"));
        let mut env = EnvState::reset(net_cfg, env_seed)?;
        let epsilon = {
            // Linear decay across the first `epsilon_decay_fraction` of
            // episodes; only DQN consumes it.
            let horizon = (cfg.iterations as f64 * cfg.epsilon_decay_fraction).max(1.0);
            let progress = (episode as f64 / horizon).min(1.0);
            cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * progress
        };
        let mut obs = env.observe();
        for t in 0..net_cfg.episode_len {
            let action = if cfg.algo == Algo::DqnC && act_rng.random::<f64>() < epsilon {
                nets.codec
                    .decode(act_rng.random_range(0..nets.codec.num_joint()))
            } else {
                act(cfg.algo, &nets, &obs, ActMode::Sample, &mut act_rng)?
            };
            let out = env.step(&action)?;
            buffer.push(TransitionRecord {
                episode_id: episode as u64,
                t,
                obs,
                joint_action: action,
                reward: out.reward,
                next_obs: out.observations.clone(),
                done: out.done,
                behavior_tag: cfg.algo.name().to_string(),
            });
            obs = out.observations;
        }

        let mut sums = (0.0, 0.0, 0.0);
        let mut trained_steps = 0;
        for _ in 0..cfg.grad_steps_per_iter {
            if buffer.len() < cfg.batch_size {
                break;
            }
            step += 1;
            trained_steps += 1;
            let scale =
                *reward_scale.get_or_insert_with(|| resolve_reward_scale(cfg, buffer.records()));
            let batch = buffer.sample(&mut batch_rng, cfg.batch_size);
            let (c, p, pen) = gradient_step(cfg, &mut nets, &mut opt, &batch, scale, step)?;
            sums.0 += c;
            sums.1 += p;
            sums.2 += pen;
        }
        let denom = trained_steps.max(1) as f64;
        let iteration = episode + 1;
        let eval = match (&mut eval_hook, cfg.eval_cadence) {
            (Some(hook), cadence) if cadence > 0 && iteration % cadence == 0 => {
                Some(hook(iteration, &nets)?)
            }
            _ => None,
        };
        curves.push(CurveRow {
            iteration,
            eval,
            critic_loss: sums.0 / denom,
            policy_loss: sums.1 / denom,
            cql_penalty_mean: sums.2 / denom,
        });
    }
    Ok(TrainOutput {
        nets,
        curves,
        buffer,
    })
}
