//! Network containers per training scope, and model-file serialization.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseNet, NetDocument};
use crate::seeding::derive_rng;

use super::codec::JointActionCodec;
use super::config::{Algo, Scope};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Critic, its Polyak target, and the policy head for one learner.
#[derive(Debug, Clone)]
pub struct NetBundle {
    pub critic: DenseNet,
    pub target_critic: DenseNet,
    pub policy: DenseNet,
}

/// All networks of one agent system. Centralized scope holds a single
/// bundle over the concatenated state and joint-action output; independent
/// and CTDE scopes hold one bundle per agent over local observations.
#[derive(Debug, Clone)]
pub struct AgentNets {
    pub scope: Scope,
    pub codec: JointActionCodec,
    pub bundles: Vec<NetBundle>,
}

impl AgentNets {
    /// Builds freshly initialized networks for `algo` at the given sizes.
    /// `obs_dim` is one agent's observation length (2N), `num_actions` is
    /// N+1 including the silent action.
    pub fn new(
        algo: Algo,
        num_agents: usize,
        obs_dim: usize,
        num_actions: usize,
        hidden: &[usize],
        seed: u64,
    ) -> AgentNets {
        let scope = algo.scope();
        let codec = JointActionCodec::new(num_agents, num_actions);
        let make = |input: usize, output: usize, label: &str| -> DenseNet {
            let mut dims = vec![input];
            dims.extend_from_slice(hidden);
            dims.push(output);
            DenseNet::new(&dims, &mut derive_rng(seed, label))
        };
        let bundles = match scope {
            Scope::Centralized => {
                let input = obs_dim * num_agents;
                let output = codec.num_joint();
                let critic = make(input, output, "init/critic/0");
                vec![NetBundle {
                    target_critic: critic.clone(),
                    policy: make(input, output, "init/policy/0"),
                    critic,
                }]
            }
            Scope::Independent | Scope::Ctde => (0..num_agents)
                .map(|i| {
                    let critic = make(obs_dim, num_actions, &format!("init/critic/{i}"));
                    NetBundle {
                        target_critic: critic.clone(),
                        policy: make(obs_dim, num_actions, &format!("init/policy/{i}")),
                        critic,
                    }
                })
                .collect(),
        };
        AgentNets {
            scope,
            codec,
            bundles,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.codec.num_agents()
    }

    pub fn num_actions(&self) -> usize {
        self.codec.per_agent_actions()
    }

    /// Per-agent observation length the nets expect.
    pub fn obs_dim(&self) -> usize {
        match self.scope {
            Scope::Centralized => self.bundles[0].critic.input_dim() / self.num_agents(),
            _ => self.bundles[0].critic.input_dim(),
        }
    }
}

/// Self-describing trained-model file: algo and sizes, the environment
/// config hash, and every critic/policy network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub algo: String,
    pub num_agents: usize,
    pub per_agent_actions: usize,
    pub net_config_hash: String,
    pub critics: Vec<NetDocument>,
    pub policies: Vec<NetDocument>,
}

pub fn save_model(path: &Path, algo: Algo, nets: &AgentNets, config_hash: &str) -> Result<()> {
    let doc = ModelDocument {
        format_version: MODEL_FORMAT_VERSION,
        algo: algo.name().to_string(),
        num_agents: nets.num_agents(),
        per_agent_actions: nets.num_actions(),
        net_config_hash: config_hash.to_string(),
        critics: nets
            .bundles
            .iter()
            .map(|b| b.critic.to_document(config_hash))
            .collect(),
        policies: nets
            .bundles
            .iter()
            .map(|b| b.policy.to_document(config_hash))
            .collect(),
    };
    let mut file = std::fs::File::create(path)?;
    let json = serde_json::to_string(&doc).map_err(|e| Error::Format(e.to_string()))?;
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Algo, AgentNets, String)> {
    let text = std::fs::read_to_string(path)?;
    let doc: ModelDocument =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("model file: {e}")))?;
    if doc.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format_version {}",
            doc.format_version
        )));
    }
    let algo: Algo = doc.algo.parse()?;
    let expected_bundles = match algo.scope() {
        Scope::Centralized => 1,
        _ => doc.num_agents,
    };
    if doc.critics.len() != expected_bundles || doc.policies.len() != expected_bundles {
        return Err(Error::Format(format!(
            "expected {expected_bundles} critic/policy pairs, found {}/{}",
            doc.critics.len(),
            doc.policies.len()
        )));
    }
    let mut bundles = Vec::with_capacity(expected_bundles);
    for (c, p) in doc.critics.iter().zip(&doc.policies) {
        let critic = DenseNet::from_document(c)?;
        bundles.push(NetBundle {
            target_critic: critic.clone(),
            critic,
            policy: DenseNet::from_document(p)?,
        });
    }
    let nets = AgentNets {
        scope: algo.scope(),
        codec: JointActionCodec::new(doc.num_agents, doc.per_agent_actions),
        bundles,
    };
    Ok((algo, nets, doc.net_config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centralized_and_per_agent_shapes() {
        let nets = AgentNets::new(Algo::CqlC, 4, 6, 4, &[16], 0);
        assert_eq!(nets.bundles.len(), 1);
        assert_eq!(nets.bundles[0].critic.input_dim(), 24);
        assert_eq!(nets.bundles[0].critic.output_dim(), 256);
        assert_eq!(nets.obs_dim(), 6);

        let nets = AgentNets::new(Algo::CqlCtde, 4, 6, 4, &[16], 0);
        assert_eq!(nets.bundles.len(), 4);
        assert_eq!(nets.bundles[0].critic.input_dim(), 6);
        assert_eq!(nets.bundles[0].critic.output_dim(), 4);
        // Targets start as exact copies of the critics.
        assert_eq!(nets.bundles[2].critic, nets.bundles[2].target_critic);
        // Distinct agents draw distinct initializations.
        assert_ne!(nets.bundles[0].critic, nets.bundles[1].critic);
    }

    #[test]
    fn model_round_trip_is_exact() {
        let nets = AgentNets::new(Algo::CqlCtde, 2, 4, 3, &[8, 8], 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.net");
        save_model(&path, Algo::CqlCtde, &nets, "deadbeef").unwrap();
        let (algo, restored, hash) = load_model(&path).unwrap();
        assert_eq!(algo, Algo::CqlCtde);
        assert_eq!(hash, "deadbeef");
        for (a, b) in nets.bundles.iter().zip(&restored.bundles) {
            assert_eq!(a.critic, b.critic);
            assert_eq!(a.policy, b.policy);
        }
    }
}
