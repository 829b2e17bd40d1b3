//! Behavioral scheduling policies: random-walk, greedy, round-robin TDM,
//! and ITLinQ. These serve both as evaluation benchmarks and as the
//! behavioral policies that generate offline datasets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::EnvState;
use crate::error::{Error, Result};
use crate::kv;

/// Anything that can drive an episode: a baseline or a trained model.
pub trait Scheduler {
    fn name(&self) -> String;
    /// Called once per episode before the first decision.
    fn begin_episode(&mut self, env: &EnvState);
    /// Joint action for the current step; every index is in 0..=top_n.
    fn select(&mut self, env: &EnvState, rng: &mut ChaCha8Rng) -> Vec<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Uniformly random among the occupied ranking slots.
    Rw,
    /// Highest probe SINR among the occupied ranking slots.
    Greedy,
    /// Round-robin over all associated UEs, not just the ranked ones.
    Tdm,
    /// Interference-tolerance check down the PF ranking.
    Itlinq,
}

impl BaselineKind {
    pub fn parse(name: &str) -> Result<BaselineKind> {
        match name {
            "rw" => Ok(BaselineKind::Rw),
            "greedy" => Ok(BaselineKind::Greedy),
            "tdm" => Ok(BaselineKind::Tdm),
            "itlinq" => Ok(BaselineKind::Itlinq),
            other => Err(Error::UnknownPolicy(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Rw => "rw",
            BaselineKind::Greedy => "greedy",
            BaselineKind::Tdm => "tdm",
            BaselineKind::Itlinq => "itlinq",
        }
    }
}

/// ITLinQ constants: an AP serves the first ranked UE whose received
/// interference stays below M * SNR^eta * noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItlinqParams {
    /// Tolerance constant M, in dB.
    pub tolerance_db: f64,
    /// SNR exponent, in [0, 1].
    pub exponent: f64,
}

impl Default for ItlinqParams {
    fn default() -> Self {
        ItlinqParams {
            tolerance_db: 25.0,
            exponent: 0.5,
        }
    }
}

impl ItlinqParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.exponent) {
            return Err(Error::Config(format!(
                "itlinq_eta must be in [0, 1], got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, map: &mut std::collections::BTreeMap<String, String>) -> Result<()> {
        kv::take(map, "itlinq_m_db", &mut self.tolerance_db)?;
        kv::take(map, "itlinq_eta", &mut self.exponent)?;
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        kv::render(&[
            ("itlinq_m_db", format!("{}", self.tolerance_db)),
            ("itlinq_eta", format!("{}", self.exponent)),
        ])
    }
}

/// A baseline policy instance. TDM keeps a per-AP round-robin cursor that
/// persists across steps and resets at `begin_episode`.
#[derive(Debug, Clone)]
pub struct Baseline {
    kind: BaselineKind,
    itlinq: ItlinqParams,
    /// Per AP: associated UEs sorted by index, fixed for the episode.
    assoc_lists: Vec<Vec<usize>>,
    /// Per AP: cursor into `assoc_lists`.
    tdm_cursors: Vec<usize>,
}

impl Baseline {
    pub fn new(kind: BaselineKind) -> Baseline {
        Baseline {
            kind,
            itlinq: ItlinqParams::default(),
            assoc_lists: Vec::new(),
            tdm_cursors: Vec::new(),
        }
    }

    pub fn with_itlinq_params(kind: BaselineKind, params: ItlinqParams) -> Result<Baseline> {
        params.validate()?;
        Ok(Baseline {
            itlinq: params,
            ..Baseline::new(kind)
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    fn rw_action(&self, env: &EnvState, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let silent = env.cfg().top_n;
        env.rankings()
            .iter()
            .map(|slots| {
                if slots.is_empty() {
                    silent
                } else {
                    rng.random_range(0..slots.len())
                }
            })
            .collect()
    }

    fn greedy_action(&self, env: &EnvState) -> Vec<usize> {
        let silent = env.cfg().top_n;
        env.rankings()
            .iter()
            .map(|slots| {
                if slots.is_empty() {
                    return silent;
                }
                let mut best = 0;
                for (k, &ue) in slots.iter().enumerate() {
                    if env.probe_sinr()[ue] > env.probe_sinr()[slots[best]] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    fn tdm_action(&mut self, env: &EnvState) -> Vec<usize> {
        let silent = env.cfg().top_n;
        let mut actions = Vec::with_capacity(env.cfg().num_aps);
        for i in 0..env.cfg().num_aps {
            let list = &self.assoc_lists[i];
            if list.is_empty() {
                actions.push(silent);
                continue;
            }
            let target = list[self.tdm_cursors[i]];
            // The rotation advances every step. When the cursor UE is not in
            // the current top-N its turn is spent silent; the missed turn
            // raises that UE's PF weight, which lifts it into the ranking for
            // its next turn. Holding the cursor instead can deadlock a whole
            // cell: a silent AP starves all its UEs uniformly, so their
            // relative ranking never changes.
            match env.rankings()[i].iter().position(|&ue| ue == target) {
                Some(slot) => actions.push(slot),
                None => actions.push(silent),
            }
            self.tdm_cursors[i] = (self.tdm_cursors[i] + 1) % list.len();
        }
        actions
    }

    fn itlinq_action(&self, env: &EnvState) -> Vec<usize> {
        let cfg = env.cfg();
        let silent = cfg.top_n;
        let p = cfg.tx_power_lin();
        let noise = cfg.noise_power_lin();
        let m_lin = 10f64.powf(self.itlinq.tolerance_db / 10.0);
        let mut transmitting: Vec<usize> = Vec::new();
        let mut actions = Vec::with_capacity(cfg.num_aps);
        // APs decide in fixed index order; earlier transmitters define the
        // interference later APs must tolerate.
        for i in 0..cfg.num_aps {
            let mut choice = silent;
            for (slot, &ue) in env.rankings()[i].iter().enumerate() {
                let interference: f64 = transmitting
                    .iter()
                    .map(|&other| env.gains()[[other, ue]] * p)
                    .sum();
                let snr = env.gains()[[i, ue]] * p / noise;
                let threshold = m_lin * snr.powf(self.itlinq.exponent) * noise;
                if interference <= threshold {
                    choice = slot;
                    break;
                }
            }
            if choice != silent {
                transmitting.push(i);
            }
            actions.push(choice);
        }
        actions
    }
}

impl Scheduler for Baseline {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn begin_episode(&mut self, env: &EnvState) {
        let num_aps = env.cfg().num_aps;
        self.assoc_lists = vec![Vec::new(); num_aps];
        for (ue, &ap) in env.topology().association.iter().enumerate() {
            self.assoc_lists[ap].push(ue);
        }
        self.tdm_cursors = vec![0; num_aps];
    }

    fn select(&mut self, env: &EnvState, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.kind {
            BaselineKind::Rw => self.rw_action(env, rng),
            BaselineKind::Greedy => self.greedy_action(env),
            BaselineKind::Tdm => self.tdm_action(env),
            BaselineKind::Itlinq => self.itlinq_action(env),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::NetConfig;
    use crate::seeding::derive_rng;
    use ndarray::Array2;

    fn env_with(cfg: &NetConfig, seed: u64) -> EnvState {
        EnvState::reset(cfg, seed).unwrap()
    }

    #[test]
    fn rw_singleton_support() {
        let cfg = NetConfig {
            num_aps: 1,
            num_ues: 1,
            ..NetConfig::default()
        };
        let env = env_with(&cfg, 1);
        let mut policy = Baseline::new(BaselineKind::Rw);
        policy.begin_episode(&env);
        let mut rng = derive_rng(0, "rw");
        for _ in 0..50 {
            assert_eq!(policy.select(&env, &mut rng), vec![0]);
        }
    }

    #[test]
    fn rw_uniform_over_slots() {
        let cfg = NetConfig {
            num_aps: 1,
            num_ues: 3,
            top_n: 3,
            ..NetConfig::default()
        };
        let env = env_with(&cfg, 2);
        assert_eq!(env.rankings()[0].len(), 3);
        let mut policy = Baseline::new(BaselineKind::Rw);
        policy.begin_episode(&env);
        let mut rng = derive_rng(1, "rw-uniform");
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[policy.select(&env, &mut rng)[0]] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn rw_silent_without_ues() {
        let cfg = NetConfig {
            num_aps: 3,
            num_ues: 1,
            ..NetConfig::default()
        };
        let env = env_with(&cfg, 3);
        let lonely = (0..3).find(|&i| env.rankings()[i].is_empty()).unwrap();
        let mut policy = Baseline::new(BaselineKind::Rw);
        policy.begin_episode(&env);
        let mut rng = derive_rng(2, "rw-silent");
        assert_eq!(policy.select(&env, &mut rng)[lonely], cfg.top_n);
    }

    /// Synthetic single-AP state with chosen probe SINRs in ranking order.
    fn env_with_probes(probes: &[f64]) -> EnvState {
        let cfg = NetConfig {
            num_aps: 1,
            num_ues: probes.len().max(1),
            top_n: probes.len().max(1),
            ..NetConfig::default()
        };
        let mut env = env_with(&cfg, 4);
        env.probe_sinr.copy_from_slice(probes);
        env.rankings[0] = (0..probes.len()).collect();
        env
    }

    #[test]
    fn greedy_picks_max_probe_sinr() {
        let env = env_with_probes(&[3.0, 1.0, 2.0]);
        let mut policy = Baseline::new(BaselineKind::Greedy);
        policy.begin_episode(&env);
        let mut rng = derive_rng(3, "greedy");
        assert_eq!(policy.select(&env, &mut rng), vec![0]);
    }

    #[test]
    fn greedy_tie_goes_to_lower_slot() {
        let env = env_with_probes(&[2.0, 2.0, 1.0]);
        let mut policy = Baseline::new(BaselineKind::Greedy);
        policy.begin_episode(&env);
        let mut rng = derive_rng(4, "greedy-tie");
        assert_eq!(policy.select(&env, &mut rng), vec![0]);
    }

    #[test]
    fn greedy_silent_on_empty_ranking() {
        let cfg = NetConfig {
            num_aps: 2,
            num_ues: 1,
            ..NetConfig::default()
        };
        let env = env_with(&cfg, 5);
        let lonely = (0..2).find(|&i| env.rankings()[i].is_empty()).unwrap();
        let mut policy = Baseline::new(BaselineKind::Greedy);
        policy.begin_episode(&env);
        let mut rng = derive_rng(5, "greedy-empty");
        assert_eq!(policy.select(&env, &mut rng)[lonely], cfg.top_n);
    }

    #[test]
    fn tdm_cycles_in_ue_order() {
        // One AP owning all three UEs with N = 3: the full rotation is
        // expressible every step.
        let cfg = NetConfig {
            num_aps: 1,
            num_ues: 3,
            top_n: 3,
            ..NetConfig::default()
        };
        let mut env = env_with(&cfg, 6);
        let mut policy = Baseline::new(BaselineKind::Tdm);
        policy.begin_episode(&env);
        let mut rng = derive_rng(6, "tdm");
        let mut served = Vec::new();
        for _ in 0..6 {
            let action = policy.select(&env, &mut rng);
            let out = env.evaluate_actions(&action).unwrap();
            served.push(out.served[0].unwrap());
            env.step(&action).unwrap();
        }
        assert_eq!(served, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn tdm_singleton_every_step() {
        let cfg = NetConfig {
            num_aps: 1,
            num_ues: 1,
            ..NetConfig::default()
        };
        let mut env = env_with(&cfg, 7);
        let mut policy = Baseline::new(BaselineKind::Tdm);
        policy.begin_episode(&env);
        let mut rng = derive_rng(7, "tdm-one");
        for _ in 0..5 {
            let action = policy.select(&env, &mut rng);
            assert_eq!(env.evaluate_actions(&action).unwrap().served[0], Some(0));
            env.step(&action).unwrap();
        }
    }

    #[test]
    fn tdm_cursor_persists_and_resets() {
        let cfg = NetConfig {
            num_aps: 1,
            num_ues: 3,
            top_n: 3,
            ..NetConfig::default()
        };
        let mut env = env_with(&cfg, 8);
        let mut policy = Baseline::new(BaselineKind::Tdm);
        policy.begin_episode(&env);
        let mut rng = derive_rng(8, "tdm-cursor");
        let a0 = policy.select(&env, &mut rng);
        env.step(&a0).unwrap();
        assert_eq!(policy.tdm_cursors[0], 1);
        let env2 = env_with(&cfg, 9);
        policy.begin_episode(&env2);
        assert_eq!(policy.tdm_cursors[0], 0);
    }

    #[test]
    fn tdm_serve_counts_differ_by_at_most_one() {
        // With top_n >= the per-AP UE count every turn is expressible as a
        // slot, so the rotation is strict and the counts provably balance.
        let cfg = NetConfig {
            num_aps: 3,
            num_ues: 9,
            top_n: 9,
            ..NetConfig::default()
        };
        let mut env = env_with(&cfg, 10);
        let mut policy = Baseline::new(BaselineKind::Tdm);
        policy.begin_episode(&env);
        let mut rng = derive_rng(9, "tdm-fair");
        let mut counts = vec![0usize; cfg.num_ues];
        for _ in 0..cfg.episode_len {
            let action = policy.select(&env, &mut rng);
            let out = env.evaluate_actions(&action).unwrap();
            for served in out.served.iter().flatten() {
                counts[*served] += 1;
            }
            env.step(&action).unwrap();
        }
        for i in 0..cfg.num_aps {
            let per_ap: Vec<usize> = env
                .topology()
                .association
                .iter()
                .enumerate()
                .filter(|(_, &ap)| ap == i)
                .map(|(ue, _)| counts[ue])
                .collect();
            if per_ap.len() > 1 {
                let max = per_ap.iter().max().unwrap();
                let min = per_ap.iter().min().unwrap();
                assert!(max - min <= 1, "AP {i}: counts {per_ap:?}");
            }
        }
    }

    #[test]
    fn itlinq_single_ap_serves_top_pf() {
        let cfg = NetConfig {
            num_aps: 1,
            num_ues: 4,
            ..NetConfig::default()
        };
        let env = env_with(&cfg, 11);
        let mut policy = Baseline::new(BaselineKind::Itlinq);
        policy.begin_episode(&env);
        let mut rng = derive_rng(10, "itlinq");
        // No interferers: the tolerance check passes at slot 0.
        assert_eq!(policy.select(&env, &mut rng)[0], 0);
    }

    #[test]
    fn itlinq_huge_tolerance_degenerates_to_top_pf() {
        let cfg = NetConfig::default();
        let env = env_with(&cfg, 12);
        let params = ItlinqParams {
            tolerance_db: 500.0,
            exponent: 0.5,
        };
        let mut policy = Baseline::with_itlinq_params(BaselineKind::Itlinq, params).unwrap();
        policy.begin_episode(&env);
        let mut rng = derive_rng(11, "itlinq-huge");
        let actions = policy.select(&env, &mut rng);
        for (i, &a) in actions.iter().enumerate() {
            let expected = if env.rankings()[i].is_empty() {
                cfg.top_n
            } else {
                0
            };
            assert_eq!(a, expected);
        }
    }

    #[test]
    fn itlinq_zero_tolerance_leaves_at_most_one_transmitter() {
        let cfg = NetConfig::default();
        let env = env_with(&cfg, 13);
        let params = ItlinqParams {
            tolerance_db: f64::NEG_INFINITY, // M = 0 in linear terms
            exponent: 0.5,
        };
        let mut policy = Baseline::with_itlinq_params(BaselineKind::Itlinq, params).unwrap();
        policy.begin_episode(&env);
        let mut rng = derive_rng(12, "itlinq-zero");
        let actions = policy.select(&env, &mut rng);
        let transmitters = actions.iter().filter(|&&a| a != cfg.top_n).count();
        assert!(transmitters <= 1, "actions {actions:?}");
    }

    #[test]
    fn itlinq_threshold_inequality_by_hand() {
        let cfg = NetConfig {
            num_aps: 2,
            num_ues: 2,
            top_n: 1,
            ..NetConfig::default()
        };
        let mut env = env_with(&cfg, 14);
        env.topology.association = vec![0, 1];
        // Strong cross-link from AP 0 to UE 1.
        env.gains = Array2::from_shape_vec((2, 2), vec![1e-5, 8e-6, 1e-9, 1e-6]).unwrap();
        let p = cfg.tx_power_lin();
        let noise = cfg.noise_power_lin();
        for j in 0..2 {
            let i = env.topology.association[j];
            env.probe_sinr[j] = env.gains[[i, j]] * p / noise;
        }
        env.recompute_rankings();

        let params = ItlinqParams {
            tolerance_db: 25.0,
            exponent: 0.5,
        };
        // Hand evaluation: AP 0 transmits (no prior interference). AP 1's
        // only candidate is UE 1 with interference 8e-6 * p from AP 0.
        let interference = 8e-6 * p;
        let snr = 1e-6 * p / noise;
        let threshold = 10f64.powf(25.0 / 10.0) * snr.powf(0.5) * noise;
        let expect_silent = interference > threshold;

        let mut policy = Baseline::with_itlinq_params(BaselineKind::Itlinq, params).unwrap();
        policy.begin_episode(&env);
        let mut rng = derive_rng(13, "itlinq-hand");
        let actions = policy.select(&env, &mut rng);
        assert_eq!(actions[0], 0);
        assert_eq!(actions[1] == cfg.top_n, expect_silent);

        // Flip the regime: with a weak cross-link AP 1 transmits.
        env.gains[[0, 1]] = 1e-12;
        let interference = 1e-12 * p;
        assert!(interference <= threshold);
        let actions = policy.select(&env, &mut rng);
        assert_eq!(actions[1], 0);
    }

    #[test]
    fn all_baselines_emit_valid_indices() {
        let cfg = NetConfig::default();
        for kind in [
            BaselineKind::Rw,
            BaselineKind::Greedy,
            BaselineKind::Tdm,
            BaselineKind::Itlinq,
        ] {
            let mut env = env_with(&cfg, 15);
            let mut policy = Baseline::new(kind);
            policy.begin_episode(&env);
            let mut rng = derive_rng(14, kind.name());
            for _ in 0..50 {
                let actions = policy.select(&env, &mut rng);
                assert!(actions.iter().all(|&a| a <= cfg.top_n));
                env.step(&actions).unwrap();
            }
        }
    }
}
