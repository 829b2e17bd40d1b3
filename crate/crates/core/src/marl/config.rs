//! Algorithm tags and training hyperparameters.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

/// Training paradigm: one joint learner, independent per-agent learners, or
/// centralized training with decentralized execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Centralized,
    Independent,
    Ctde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    /// Online centralized discrete SAC.
    SacC,
    /// Online centralized DQN.
    DqnC,
    /// Online independent discrete SAC.
    SacI,
    /// Online CTDE discrete SAC.
    SacCtde,
    /// Offline centralized CQL on the SAC architecture.
    CqlC,
    /// Offline independent CQL.
    CqlI,
    /// Offline CTDE CQL.
    CqlCtde,
}

impl Algo {
    pub fn scope(&self) -> Scope {
        match self {
            Algo::SacC | Algo::DqnC | Algo::CqlC => Scope::Centralized,
            Algo::SacI | Algo::CqlI => Scope::Independent,
            Algo::SacCtde | Algo::CqlCtde => Scope::Ctde,
        }
    }

    pub fn is_offline(&self) -> bool {
        matches!(self, Algo::CqlC | Algo::CqlI | Algo::CqlCtde)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algo::SacC => "sac-c",
            Algo::DqnC => "dqn-c",
            Algo::SacI => "sac-i",
            Algo::SacCtde => "sac-ctde",
            Algo::CqlC => "cql-c",
            Algo::CqlI => "cql-i",
            Algo::CqlCtde => "cql-ctde",
        }
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Algo> {
        match s {
            "sac-c" => Ok(Algo::SacC),
            "dqn-c" => Ok(Algo::DqnC),
            "sac-i" => Ok(Algo::SacI),
            "sac-ctde" => Ok(Algo::SacCtde),
            "cql-c" => Ok(Algo::CqlC),
            "cql-i" => Ok(Algo::CqlI),
            "cql-ctde" => Ok(Algo::CqlCtde),
            other => Err(Error::Config(format!("unknown algo '{other}'"))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Every training hyperparameter, serializable into run manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub algo: Algo,
    /// Discount factor beta.
    pub discount: f64,
    /// Conservative penalty constant alpha.
    pub cql_alpha: f64,
    /// Weight on the entropy term in the soft losses.
    pub entropy_coeff: f64,
    /// Training iterations K (offline) or episodes (online).
    pub iterations: usize,
    /// Gradient steps G per iteration/episode.
    pub grad_steps_per_iter: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub polyak_tau: f64,
    /// Reward multiplier inside the losses. Datasets store raw rewards;
    /// scaling them is a trainer concern. 0 selects the automatic scale
    /// (1 - discount) / mean|r|, which puts discounted returns near unit
    /// magnitude so the TD residual and the conservative penalty pull with
    /// comparable strength.
    pub reward_scale: f64,
    /// DQN exploration schedule: linear from start to end over the first
    /// `epsilon_decay_fraction` of episodes.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    /// Evaluate every this many iterations; 0 disables periodic evaluation.
    pub eval_cadence: usize,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    pub hidden_layers: usize,
    pub hidden_neurons: usize,
    pub seed: u64,
}

impl TrainerConfig {
    /// Table-style defaults; offline algorithms run K=200 x G=100, online
    /// ones one gradient step per environment step.
    pub fn new(algo: Algo) -> TrainerConfig {
        let offline = algo.is_offline();
        TrainerConfig {
            algo,
            discount: 0.99,
            cql_alpha: 1.0,
            entropy_coeff: 1.0,
            iterations: 200,
            grad_steps_per_iter: if offline { 100 } else { 200 },
            batch_size: 64,
            actor_lr: 1e-5,
            critic_lr: 1e-4,
            polyak_tau: 0.005,
            reward_scale: 0.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            eval_cadence: 0,
            eval_episodes: 20,
            replay_capacity: 100_000,
            hidden_layers: 2,
            hidden_neurons: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!(
                "discount must be in (0, 1), got {}",
                self.discount
            )));
        }
        if self.cql_alpha < 0.0 {
            return Err(Error::Config("cql_alpha must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.polyak_tau >= 0.0 && self.polyak_tau <= 1.0) {
            return Err(Error::Config("polyak_tau must be in [0, 1]".into()));
        }
        if !(self.reward_scale >= 0.0) {
            return Err(Error::Config("reward_scale must be >= 0 (0 = auto)".into()));
        }
        if self.hidden_layers == 0 || self.hidden_neurons == 0 {
            return Err(Error::Config("hidden layout must be non-trivial".into()));
        }
        Ok(())
    }

    /// Hidden layout as a dim list.
    pub fn hidden_dims(&self) -> Vec<usize> {
        vec![self.hidden_neurons; self.hidden_layers]
    }

    pub fn apply_kv(&mut self, map: &mut BTreeMap<String, String>) -> Result<()> {
        let mut algo = self.algo.name().to_string();
        kv::take(map, "algo", &mut algo)?;
        self.algo = algo.parse()?;
        kv::take(map, "discount", &mut self.discount)?;
        kv::take(map, "cql_alpha", &mut self.cql_alpha)?;
        kv::take(map, "entropy_coeff", &mut self.entropy_coeff)?;
        kv::take(map, "iterations", &mut self.iterations)?;
        kv::take(map, "grad_steps_per_iter", &mut self.grad_steps_per_iter)?;
        kv::take(map, "batch_size", &mut self.batch_size)?;
        kv::take(map, "actor_lr", &mut self.actor_lr)?;
        kv::take(map, "critic_lr", &mut self.critic_lr)?;
        kv::take(map, "polyak_tau", &mut self.polyak_tau)?;
        kv::take(map, "reward_scale", &mut self.reward_scale)?;
        kv::take(map, "epsilon_start", &mut self.epsilon_start)?;
        kv::take(map, "epsilon_end", &mut self.epsilon_end)?;
        kv::take(map, "epsilon_decay_fraction", &mut self.epsilon_decay_fraction)?;
        kv::take(map, "eval_cadence", &mut self.eval_cadence)?;
        kv::take(map, "eval_episodes", &mut self.eval_episodes)?;
        kv::take(map, "replay_capacity", &mut self.replay_capacity)?;
        kv::take(map, "hidden_layers", &mut self.hidden_layers)?;
        kv::take(map, "hidden_neurons", &mut self.hidden_neurons)?;
        kv::take(map, "seed", &mut self.seed)?;
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        kv::render(&[
            ("algo", self.algo.name().to_string()),
            ("discount", format!("{}", self.discount)),
            ("cql_alpha", format!("{}", self.cql_alpha)),
            ("entropy_coeff", format!("{}", self.entropy_coeff)),
            ("iterations", format!("{}", self.iterations)),
            ("grad_steps_per_iter", format!("{}", self.grad_steps_per_iter)),
            ("batch_size", format!("{}", self.batch_size)),
            ("actor_lr", format!("{}", self.actor_lr)),
            ("critic_lr", format!("{}", self.critic_lr)),
            ("polyak_tau", format!("{}", self.polyak_tau)),
            ("reward_scale", format!("{}", self.reward_scale)),
            ("epsilon_start", format!("{}", self.epsilon_start)),
            ("epsilon_end", format!("{}", self.epsilon_end)),
            (
                "epsilon_decay_fraction",
                format!("{}", self.epsilon_decay_fraction),
            ),
            ("eval_cadence", format!("{}", self.eval_cadence)),
            ("eval_episodes", format!("{}", self.eval_episodes)),
            ("replay_capacity", format!("{}", self.replay_capacity)),
            ("hidden_layers", format!("{}", self.hidden_layers)),
            ("hidden_neurons", format!("{}", self.hidden_neurons)),
            ("seed", format!("{}", self.seed)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_parsing_round_trips() {
        for name in ["sac-c", "dqn-c", "sac-i", "sac-ctde", "cql-c", "cql-i", "cql-ctde"] {
            let algo: Algo = name.parse().unwrap();
            assert_eq!(algo.name(), name);
        }
        assert!("bcq".parse::<Algo>().is_err());
    }

    #[test]
    fn trainer_config_kv_round_trip() {
        let mut cfg = TrainerConfig::new(Algo::CqlCtde);
        cfg.iterations = 37;
        cfg.actor_lr = 3e-6;
        let mut map = kv::parse(&cfg.to_kv()).unwrap();
        let mut restored = TrainerConfig::new(Algo::SacC);
        restored.apply_kv(&mut map).unwrap();
        kv::reject_unknown(&map).unwrap();
        assert_eq!(cfg, restored);
    }

    #[test]
    fn defaults_match_reference_table() {
        let cfg = TrainerConfig::new(Algo::CqlCtde);
        assert_eq!(cfg.discount, 0.99);
        assert_eq!(cfg.cql_alpha, 1.0);
        assert_eq!(cfg.actor_lr, 1e-5);
        assert_eq!(cfg.critic_lr, 1e-4);
        assert_eq!(cfg.replay_capacity, 100_000);
        assert_eq!(cfg.hidden_layers, 2);
        assert_eq!(cfg.hidden_neurons, 256);
        cfg.validate().unwrap();
    }
}
