//! Action selection from trained networks, and the scheduler wrapper that
//! lets a model drive episodes like any baseline policy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::baselines::Scheduler;
use crate::env::{EnvState, NetConfig};
use crate::error::{Error, Result};
use crate::nn::softmax;

use super::config::{Algo, Scope};
use super::nets::{load_model, AgentNets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    /// Draw from the policy distribution.
    Sample,
    /// Deterministic execution rule: policy argmax for SAC scopes, joint
    /// critic argmax for centralized DQN, per-agent critic argmax for CTDE.
    Greedy,
}

/// Argmax with ties resolved to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Joint action for the given per-agent observations.
pub fn act(
    algo: Algo,
    nets: &AgentNets,
    observations: &[Vec<f64>],
    mode: ActMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if observations.len() != nets.num_agents() {
        return Err(Error::DimensionMismatch {
            context: "act observations",
            expected: nets.num_agents(),
            got: observations.len(),
        });
    }
    match nets.scope {
        Scope::Centralized => {
            let state: Vec<f64> = observations.iter().flatten().copied().collect();
            let bundle = &nets.bundles[0];
            let joint = match (algo, mode) {
                // DQN's implicit policy is one-hot at the critic argmax, so
                // sampling and greedy coincide.
                (Algo::DqnC, _) => argmax(&bundle.critic.forward(&state)?),
                (_, ActMode::Greedy) => argmax(&bundle.policy.forward(&state)?),
                (_, ActMode::Sample) => {
                    let probs = softmax(&bundle.policy.forward(&state)?)?;
                    sample_index(&probs, rng)
                }
            };
            Ok(nets.codec.decode(joint))
        }
        Scope::Independent => observations
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let policy = &nets.bundles[i].policy;
                Ok(match mode {
                    ActMode::Greedy => argmax(&policy.forward(obs)?),
                    ActMode::Sample => {
                        let probs = softmax(&policy.forward(obs)?)?;
                        sample_index(&probs, rng)
                    }
                })
            })
            .collect(),
        Scope::Ctde => observations
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let bundle = &nets.bundles[i];
                Ok(match mode {
                    // Decentralized execution reads the decomposed critic.
                    ActMode::Greedy => argmax(&bundle.critic.forward(obs)?),
                    ActMode::Sample => {
                        let probs = softmax(&bundle.policy.forward(obs)?)?;
                        sample_index(&probs, rng)
                    }
                })
            })
            .collect(),
    }
}

/// A trained model acting as an episode scheduler.
#[derive(Clone)]
pub struct ModelScheduler {
    algo: Algo,
    nets: AgentNets,
    mode: ActMode,
    label: String,
}

impl ModelScheduler {
    pub fn new(algo: Algo, nets: AgentNets, mode: ActMode, label: impl Into<String>) -> Self {
        ModelScheduler {
            algo,
            nets,
            mode,
            label: label.into(),
        }
    }

    /// Loads a model file and checks it was trained for `cfg`.
    pub fn from_file(path: &Path, cfg: &NetConfig, mode: ActMode) -> Result<ModelScheduler> {
        let (algo, nets, hash) = load_model(path)?;
        if hash != cfg.hash() {
            return Err(Error::IncompatibleConfig(format!(
                "model was trained for config {hash}, current config is {}",
                cfg.hash()
            )));
        }
        if nets.num_agents() != cfg.num_aps
            || nets.num_actions() != cfg.actions_per_agent()
            || nets.obs_dim() != cfg.obs_dim()
        {
            return Err(Error::IncompatibleConfig(
                "model dimensions do not match the network config".into(),
            ));
        }
        Ok(ModelScheduler::new(
            algo,
            nets,
            mode,
            format!("model:{}", path.display()),
        ))
    }

    pub fn algo(&self) -> Algo {
        self.algo
    }
}

impl Scheduler for ModelScheduler {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn begin_episode(&mut self, _env: &EnvState) {}

    fn select(&mut self, env: &EnvState, rng: &mut ChaCha8Rng) -> Vec<usize> {
        act(self.algo, &self.nets, &env.observe(), self.mode, rng)
            .expect("model/config compatibility was checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseNet;
    use crate::seeding::derive_rng;

    fn constant_net(input: usize, bias: &[f64]) -> DenseNet {
        let mut net = DenseNet::zeros(&[input, bias.len()]);
        for (i, &b) in bias.iter().enumerate() {
            net.set_param(input * bias.len() + i, b);
        }
        net
    }

    #[test]
    fn one_hot_policy_sample_equals_greedy() {
        let mut nets = AgentNets::new(Algo::SacI, 2, 2, 3, &[4], 0);
        nets.bundles[0].policy = constant_net(2, &[0.0, 50.0, 0.0]);
        nets.bundles[1].policy = constant_net(2, &[0.0, 0.0, 50.0]);
        let obs = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let mut rng = derive_rng(0, "act");
        for _ in 0..20 {
            let sampled = act(Algo::SacI, &nets, &obs, ActMode::Sample, &mut rng).unwrap();
            let greedy = act(Algo::SacI, &nets, &obs, ActMode::Greedy, &mut rng).unwrap();
            assert_eq!(sampled, greedy);
            assert_eq!(sampled, vec![1, 2]);
        }
    }

    #[test]
    fn centralized_joint_decode() {
        // Joint index 7 at I=4, N=3 decodes to (3, 1, 0, 0).
        let mut nets = AgentNets::new(Algo::DqnC, 4, 6, 4, &[4], 1);
        let mut bias = vec![0.0; 256];
        bias[7] = 10.0;
        nets.bundles[0].critic = constant_net(24, &bias);
        let obs = vec![vec![0.0; 6]; 4];
        let mut rng = derive_rng(1, "act-central");
        let action = act(Algo::DqnC, &nets, &obs, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(action, vec![3, 1, 0, 0]);
    }

    #[test]
    fn greedy_invariant_under_positive_rescaling() {
        let mut nets = AgentNets::new(Algo::CqlCtde, 2, 2, 4, &[4], 2);
        nets.bundles[0].critic = constant_net(2, &[0.3, -0.1, 0.9, 0.2]);
        nets.bundles[1].critic = constant_net(2, &[-0.5, -0.2, -0.8, -0.4]);
        let obs = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let mut rng = derive_rng(2, "act-scale");
        let before = act(Algo::CqlCtde, &nets, &obs, ActMode::Greedy, &mut rng).unwrap();
        for bundle in &mut nets.bundles {
            for idx in 0..bundle.critic.param_count() {
                let v = bundle.critic.get_param(idx);
                bundle.critic.set_param(idx, 3.5 * v);
            }
        }
        let after = act(Algo::CqlCtde, &nets, &obs, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn sampling_follows_the_distribution() {
        let mut nets = AgentNets::new(Algo::SacI, 1, 2, 2, &[4], 3);
        // softmax(0, ln 3) = (0.25, 0.75).
        nets.bundles[0].policy = constant_net(2, &[0.0, 3f64.ln()]);
        let obs = vec![vec![0.0, 0.0]];
        let mut rng = derive_rng(3, "act-sample");
        let draws = 40_000;
        let mut ones = 0;
        for _ in 0..draws {
            if act(Algo::SacI, &nets, &obs, ActMode::Sample, &mut rng).unwrap()[0] == 1 {
                ones += 1;
            }
        }
        let freq = ones as f64 / draws as f64;
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");
    }
}
