//! Downlink network simulator.
//!
//! An episode places `I` access points and `J` mobile users uniformly in an
//! `L x L` area, associates each user to its strongest AP for the whole
//! episode, and then steps `T` times. Each step every AP either serves one
//! user from its proportional-fairness top-N ranking or stays silent; rates
//! follow from the SINR under the joint choice, and the PF weights and
//! rankings are updated before users move and fading is redrawn.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::error::{Error, Result};
use crate::kv;

/// Rejection-sampling budget per placed entity.
const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Offset added inside the observation logs to keep log10 finite.
pub const OBS_LOG_EPS: f64 = 1e-9;
/// Observations are clipped to [-OBS_CLIP, OBS_CLIP]; the lower bound doubles
/// as the padding value for empty ranking slots.
pub const OBS_CLIP: f64 = 10.0;

/// Environment parameters. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Side of the square area, meters (L).
    pub area_side_m: f64,
    /// Number of access points (I).
    pub num_aps: usize,
    /// Number of user terminals (J).
    pub num_ues: usize,
    /// Ranking depth; the per-agent action space is top_n + 1 (N).
    pub top_n: usize,
    /// Minimum AP-AP spacing, meters (d0).
    pub min_ap_dist_m: f64,
    /// Minimum AP-UE spacing at placement, meters (d1).
    pub min_ap_ue_dist_m: f64,
    /// UE speed, meters per 1-second step.
    pub ue_speed_mps: f64,
    /// Transmit power, dBm.
    pub tx_power_dbm: f64,
    /// Noise power, dBm.
    pub noise_power_dbm: f64,
    /// Log-normal shadowing standard deviation, dB.
    pub shadowing_std_db: f64,
    /// Constant offset in the path-loss model, dB.
    pub pl_offset_db: f64,
    /// Steps per episode (T).
    pub episode_len: usize,
    /// PF running-average coefficient (eta).
    pub pf_smoothing: f64,
    /// Exponent on the PF weight inside the reward (lambda).
    pub fairness_exponent: f64,
    /// Floor on the long-term rate inside w = 1/max(C~, floor).
    pub rate_floor: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            area_side_m: 100.0,
            num_aps: 4,
            num_ues: 20,
            top_n: 3,
            min_ap_dist_m: 10.0,
            min_ap_ue_dist_m: 1.0,
            ue_speed_mps: 1.0,
            tx_power_dbm: 10.0,
            noise_power_dbm: -104.0,
            shadowing_std_db: 7.0,
            pl_offset_db: 10.0,
            episode_len: 200,
            pf_smoothing: 0.1,
            fairness_exponent: 0.8,
            rate_floor: 1e-3,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if !(self.area_side_m > 0.0) {
            return err(format!("area_side_m must be > 0, got {}", self.area_side_m));
        }
        if self.num_aps == 0 || self.num_ues == 0 {
            return err("num_aps and num_ues must be >= 1".into());
        }
        if self.top_n == 0 {
            return err("top_n must be >= 1".into());
        }
        if !(self.min_ap_dist_m > 0.0) || !(self.min_ap_ue_dist_m > 0.0) {
            return err("minimum distances must be > 0".into());
        }
        // Geometric packability of the spacing constraints is validated
        // dynamically by the rejection-sampling attempt cap, not here.
        if !(self.ue_speed_mps >= 0.0) {
            return err("ue_speed_mps must be >= 0".into());
        }
        if self.episode_len == 0 {
            return err("episode_len must be >= 1".into());
        }
        if !(self.pf_smoothing > 0.0 && self.pf_smoothing <= 1.0) {
            return err(format!(
                "pf_smoothing must be in (0, 1], got {}",
                self.pf_smoothing
            ));
        }
        if !(0.0..=1.0).contains(&self.fairness_exponent) {
            return err(format!(
                "fairness_exponent must be in [0, 1], got {}",
                self.fairness_exponent
            ));
        }
        if !(self.rate_floor > 0.0) {
            return err("rate_floor must be > 0".into());
        }
        if !(self.shadowing_std_db >= 0.0) {
            return err("shadowing_std_db must be >= 0".into());
        }
        Ok(())
    }

    /// Transmit power in linear milliwatts.
    pub fn tx_power_lin(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0)
    }

    /// Noise power in linear milliwatts.
    pub fn noise_power_lin(&self) -> f64 {
        10f64.powf(self.noise_power_dbm / 10.0)
    }

    /// Per-agent observation length (top_n SINR/weight pairs).
    pub fn obs_dim(&self) -> usize {
        2 * self.top_n
    }

    /// Actions per agent including the silent action.
    pub fn actions_per_agent(&self) -> usize {
        self.top_n + 1
    }

    /// Applies recognized keys from a parsed key=value map, consuming them.
    pub fn apply_kv(&mut self, map: &mut std::collections::BTreeMap<String, String>) -> Result<()> {
        kv::take(map, "area_side_m", &mut self.area_side_m)?;
        kv::take(map, "num_aps", &mut self.num_aps)?;
        kv::take(map, "num_ues", &mut self.num_ues)?;
        kv::take(map, "top_n", &mut self.top_n)?;
        kv::take(map, "min_ap_dist_m", &mut self.min_ap_dist_m)?;
        kv::take(map, "min_ap_ue_dist_m", &mut self.min_ap_ue_dist_m)?;
        kv::take(map, "ue_speed_mps", &mut self.ue_speed_mps)?;
        kv::take(map, "tx_power_dbm", &mut self.tx_power_dbm)?;
        kv::take(map, "noise_power_dbm", &mut self.noise_power_dbm)?;
        kv::take(map, "shadowing_std_db", &mut self.shadowing_std_db)?;
        kv::take(map, "pl_offset_db", &mut self.pl_offset_db)?;
        kv::take(map, "episode_len", &mut self.episode_len)?;
        kv::take(map, "pf_smoothing", &mut self.pf_smoothing)?;
        kv::take(map, "fairness_exponent", &mut self.fairness_exponent)?;
        kv::take(map, "rate_floor", &mut self.rate_floor)?;
        Ok(())
    }

    /// Canonical key=value rendering (field order, shortest float repr).
    pub fn to_kv(&self) -> String {
        kv::render(&[
            ("area_side_m", format!("{}", self.area_side_m)),
            ("num_aps", format!("{}", self.num_aps)),
            ("num_ues", format!("{}", self.num_ues)),
            ("top_n", format!("{}", self.top_n)),
            ("min_ap_dist_m", format!("{}", self.min_ap_dist_m)),
            ("min_ap_ue_dist_m", format!("{}", self.min_ap_ue_dist_m)),
            ("ue_speed_mps", format!("{}", self.ue_speed_mps)),
            ("tx_power_dbm", format!("{}", self.tx_power_dbm)),
            ("noise_power_dbm", format!("{}", self.noise_power_dbm)),
            ("shadowing_std_db", format!("{}", self.shadowing_std_db)),
            ("pl_offset_db", format!("{}", self.pl_offset_db)),
            ("episode_len", format!("{}", self.episode_len)),
            ("pf_smoothing", format!("{}", self.pf_smoothing)),
            ("fairness_exponent", format!("{}", self.fairness_exponent)),
            ("rate_floor", format!("{}", self.rate_floor)),
        ])
    }

    /// Parses a full key=value document, starting from defaults.
    pub fn from_kv_text(text: &str) -> Result<NetConfig> {
        let mut map = kv::parse(text)?;
        let mut cfg = NetConfig::default();
        cfg.apply_kv(&mut map)?;
        kv::reject_unknown(&map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical rendering; identifies compatible datasets
    /// and models.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_kv().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// 3GPP-style indoor path loss: 15.3 + 37.6 log10(d) + offset, in dB.
pub fn path_loss_db(d_m: f64, pl_offset_db: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs a positive distance, got {d_m}"
        )));
    }
    Ok(15.3 + 37.6 * d_m.log10() + pl_offset_db)
}

/// Static episode geometry.
#[derive(Debug, Clone)]
pub struct Topology {
    pub ap_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    /// UE index -> serving AP index, fixed for the episode.
    pub association: Vec<usize>,
    /// Per-link shadowing in dB, `[I, J]`, fixed for the episode.
    pub shadowing_db: Array2<f64>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Uniform placement under the d0/d1 constraints, per-episode shadowing, and
/// max-RSRP association (path loss + shadowing; fading averages out of RSRP).
pub fn sample_topology(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Result<Topology> {
    cfg.validate()?;
    let side = cfg.area_side_m;
    let mut ap_positions: Vec<[f64; 2]> = Vec::with_capacity(cfg.num_aps);
    for _ in 0..cfg.num_aps {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cand = [rng.random_range(0.0..side), rng.random_range(0.0..side)];
            if ap_positions
                .iter()
                .all(|&p| dist(p, cand) >= cfg.min_ap_dist_m)
            {
                ap_positions.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementInfeasible {
                entity: "access point",
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    let mut ue_positions: Vec<[f64; 2]> = Vec::with_capacity(cfg.num_ues);
    for _ in 0..cfg.num_ues {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cand = [rng.random_range(0.0..side), rng.random_range(0.0..side)];
            if ap_positions
                .iter()
                .all(|&p| dist(p, cand) >= cfg.min_ap_ue_dist_m)
            {
                ue_positions.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementInfeasible {
                entity: "user terminal",
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    let normal = Normal::new(0.0, cfg.shadowing_std_db).expect("validated std");
    let shadowing_db =
        Array2::from_shape_fn((cfg.num_aps, cfg.num_ues), |_| normal.sample(rng));

    let mut association = Vec::with_capacity(cfg.num_ues);
    for j in 0..cfg.num_ues {
        let mut best = 0;
        let mut best_rsrp = f64::NEG_INFINITY;
        for i in 0..cfg.num_aps {
            let d = dist(ap_positions[i], ue_positions[j]).max(cfg.min_ap_ue_dist_m);
            let pl = path_loss_db(d, cfg.pl_offset_db)?;
            let rsrp = cfg.tx_power_dbm - pl - shadowing_db[[i, j]];
            if rsrp > best_rsrp {
                best_rsrp = rsrp;
                best = i;
            }
        }
        association.push(best);
    }

    Ok(Topology {
        ap_positions,
        ue_positions,
        association,
        shadowing_db,
    })
}

/// Everything produced by one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Instantaneous rate per UE, bits/s/Hz; zero for unserved UEs.
    pub per_ue_rate: Vec<f64>,
    /// Linear SINR per UE; zero for unserved UEs.
    pub per_ue_sinr: Vec<f64>,
    /// Sum of w_j^lambda * C_j under the weights in force before the update.
    pub reward: f64,
    /// Next per-agent observations (the state agents act on next step).
    pub observations: Vec<Vec<f64>>,
    pub done: bool,
}

/// Rates/SINRs for a joint action, without mutating the environment.
#[derive(Debug, Clone)]
pub struct RateOutcome {
    pub per_ue_rate: Vec<f64>,
    pub per_ue_sinr: Vec<f64>,
    pub reward: f64,
    /// Per AP, the UE actually served (silent and coerced-silent are None).
    pub served: Vec<Option<usize>>,
}

/// Full mutable world state for one episode.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub(crate) cfg: NetConfig,
    pub(crate) topology: Topology,
    pub(crate) t: usize,
    /// Linear channel power gains `|h|^2`, `[I, J]`, redrawn every step.
    pub(crate) gains: Array2<f64>,
    /// Single-transmitter probe SINR per UE under the current gains.
    pub(crate) probe_sinr: Vec<f64>,
    /// Long-term average rate C~; meaningful once `lt_initialized`.
    pub(crate) long_term_rate: Vec<f64>,
    pub(crate) lt_initialized: bool,
    /// PF weights w = 1 / max(C~, rate_floor); all ones before the first step.
    pub(crate) pf_weight: Vec<f64>,
    /// Per AP, up to top_n associated UEs in descending PF order.
    pub(crate) rankings: Vec<Vec<usize>>,
    pub(crate) rng: ChaCha8Rng,
}

impl EnvState {
    /// Fresh episode: new topology, uniform PF weights, fading and rankings
    /// ready for the first decision.
    pub fn reset(cfg: &NetConfig, seed: u64) -> Result<EnvState> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topology = sample_topology(cfg, &mut rng)?;
        let mut state = EnvState {
            cfg: cfg.clone(),
            topology,
            t: 0,
            gains: Array2::zeros((cfg.num_aps, cfg.num_ues)),
            probe_sinr: vec![0.0; cfg.num_ues],
            long_term_rate: vec![0.0; cfg.num_ues],
            lt_initialized: false,
            pf_weight: vec![1.0; cfg.num_ues],
            rankings: vec![Vec::new(); cfg.num_aps],
            rng,
        };
        state.refresh_channels();
        state.recompute_rankings();
        Ok(state)
    }

    pub fn cfg(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.episode_len
    }

    /// Current linear gain matrix `[I, J]`.
    pub fn gains(&self) -> &Array2<f64> {
        &self.gains
    }

    /// Current single-transmitter probe SINR per UE.
    pub fn probe_sinr(&self) -> &[f64] {
        &self.probe_sinr
    }

    pub fn pf_weight(&self) -> &[f64] {
        &self.pf_weight
    }

    pub fn rankings(&self) -> &[Vec<usize>] {
        &self.rankings
    }

    /// Deterministic channel core: linear attenuation from path loss at the
    /// live distance plus the episode's shadowing. Distances are clamped to
    /// the minimum placement spacing so a wandering UE cannot blow up the
    /// path-loss model.
    fn attenuation_lin(&self, i: usize, j: usize) -> f64 {
        let d = dist(self.topology.ap_positions[i], self.topology.ue_positions[j])
            .max(self.cfg.min_ap_ue_dist_m);
        let pl = 15.3 + 37.6 * d.log10() + self.cfg.pl_offset_db;
        10f64.powf(-(pl + self.topology.shadowing_db[[i, j]]) / 10.0)
    }

    /// Redraws fading for the current positions and refreshes probe SINRs.
    fn refresh_channels(&mut self) {
        let p = self.cfg.tx_power_lin();
        let noise = self.cfg.noise_power_lin();
        for i in 0..self.cfg.num_aps {
            for j in 0..self.cfg.num_ues {
                let fading: f64 = Exp1.sample(&mut self.rng);
                self.gains[[i, j]] = self.attenuation_lin(i, j) * fading;
            }
        }
        for j in 0..self.cfg.num_ues {
            let i = self.topology.association[j];
            self.probe_sinr[j] = self.gains[[i, j]] * p / noise;
        }
    }

    /// Rebuilds each AP's top-N list by descending PF ratio
    /// w_j * log2(1 + probe_sinr_j); ties resolve to the lower UE index.
    pub(crate) fn recompute_rankings(&mut self) {
        for i in 0..self.cfg.num_aps {
            let mut candidates: Vec<usize> = (0..self.cfg.num_ues)
                .filter(|&j| self.topology.association[j] == i)
                .collect();
            candidates.sort_by(|&a, &b| {
                let score_a = self.pf_weight[a] * (1.0 + self.probe_sinr[a]).log2();
                let score_b = self.pf_weight[b] * (1.0 + self.probe_sinr[b]).log2();
                score_b
                    .partial_cmp(&score_a)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            candidates.truncate(self.cfg.top_n);
            self.rankings[i] = candidates;
        }
    }

    /// Rates, SINRs, and reward for a joint action under the current gains
    /// and weights. Does not mutate the state.
    ///
    /// Action index k < top_n picks ranking slot k; top_n is silent; an index
    /// at an empty slot is coerced to silent.
    pub fn evaluate_actions(&self, joint_action: &[usize]) -> Result<RateOutcome> {
        let n_ap = self.cfg.num_aps;
        if joint_action.len() != n_ap {
            return Err(Error::DimensionMismatch {
                context: "joint action",
                expected: n_ap,
                got: joint_action.len(),
            });
        }
        let silent = self.cfg.top_n;
        let mut served: Vec<Option<usize>> = vec![None; n_ap];
        for (i, &a) in joint_action.iter().enumerate() {
            if a > silent {
                return Err(Error::InvalidAction {
                    agent: i,
                    action: a,
                    max: silent,
                });
            }
            if a < silent {
                if let Some(&ue) = self.rankings[i].get(a) {
                    served[i] = Some(ue);
                }
            }
        }

        let p = self.cfg.tx_power_lin();
        let noise = self.cfg.noise_power_lin();
        let mut per_ue_rate = vec![0.0; self.cfg.num_ues];
        let mut per_ue_sinr = vec![0.0; self.cfg.num_ues];
        for (i, &target) in served.iter().enumerate() {
            let Some(j) = target else { continue };
            let signal = self.gains[[i, j]] * p;
            let mut interference = 0.0;
            for (other, &other_target) in served.iter().enumerate() {
                if other != i && other_target.is_some() {
                    interference += self.gains[[other, j]] * p;
                }
            }
            let sinr = signal / (interference + noise);
            per_ue_sinr[j] = sinr;
            per_ue_rate[j] = (1.0 + sinr).log2();
        }

        let lambda = self.cfg.fairness_exponent;
        let reward = per_ue_rate
            .iter()
            .enumerate()
            .map(|(j, &c)| self.pf_weight[j].powf(lambda) * c)
            .sum();

        Ok(RateOutcome {
            per_ue_rate,
            per_ue_sinr,
            reward,
            served,
        })
    }

    /// PF recursion: C~ <- eta*C + (1-eta)*C~ (seeded with C on the first
    /// step), w <- 1/max(C~, floor), then re-rank.
    pub fn update_pf_state(&mut self, per_ue_rate: &[f64]) {
        let eta = self.cfg.pf_smoothing;
        if self.lt_initialized {
            for (lt, &c) in self.long_term_rate.iter_mut().zip(per_ue_rate) {
                *lt = eta * c + (1.0 - eta) * *lt;
            }
        } else {
            self.long_term_rate.copy_from_slice(per_ue_rate);
            self.lt_initialized = true;
        }
        for (w, &lt) in self.pf_weight.iter_mut().zip(&self.long_term_rate) {
            *w = 1.0 / lt.max(self.cfg.rate_floor);
        }
        self.recompute_rankings();
    }

    /// Moves every UE one step along an independent uniform heading,
    /// reflecting off the area borders. APs stay put; association is fixed.
    pub fn advance_mobility(&mut self) {
        let v = self.cfg.ue_speed_mps;
        let side = self.cfg.area_side_m;
        for pos in &mut self.topology.ue_positions {
            let heading: f64 = self.rng.random_range(0.0..std::f64::consts::TAU);
            let mut x = pos[0] + v * heading.cos();
            let mut y = pos[1] + v * heading.sin();
            while !(0.0..=side).contains(&x) {
                x = if x < 0.0 { -x } else { 2.0 * side - x };
            }
            while !(0.0..=side).contains(&y) {
                y = if y < 0.0 { -y } else { 2.0 * side - y };
            }
            *pos = [x, y];
        }
    }

    /// Per-agent observation: the ranked UEs' (log10 probe SINR, log10 PF
    /// weight) pairs, clipped to [-10, 10]; empty slots carry the clip floor.
    pub fn observe(&self) -> Vec<Vec<f64>> {
        let clip = |v: f64| (v + OBS_LOG_EPS).log10().clamp(-OBS_CLIP, OBS_CLIP);
        (0..self.cfg.num_aps)
            .map(|i| {
                let mut obs = Vec::with_capacity(self.cfg.obs_dim());
                for slot in 0..self.cfg.top_n {
                    match self.rankings[i].get(slot) {
                        Some(&j) => {
                            obs.push(clip(self.probe_sinr[j]));
                            obs.push(clip(self.pf_weight[j]));
                        }
                        None => {
                            obs.push(-OBS_CLIP);
                            obs.push(-OBS_CLIP);
                        }
                    }
                }
                obs
            })
            .collect()
    }

    /// Concatenation of all agent observations, length 2 * top_n * num_aps.
    pub fn global_state(&self) -> Vec<f64> {
        self.observe().into_iter().flatten().collect()
    }

    /// One full step: rates and reward for the joint action, PF update,
    /// mobility, fresh fading, and the observations for the next decision.
    pub fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::Domain("episode already exhausted".into()));
        }
        let outcome = self.evaluate_actions(joint_action)?;
        self.update_pf_state(&outcome.per_ue_rate);
        self.advance_mobility();
        self.t += 1;
        self.refresh_channels();
        self.recompute_rankings();
        Ok(StepOutcome {
            per_ue_rate: outcome.per_ue_rate,
            per_ue_sinr: outcome.per_ue_sinr,
            reward: outcome.reward,
            observations: self.observe(),
            done: self.is_done(),
        })
    }
}
