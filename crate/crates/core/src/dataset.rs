//! Offline-dataset lifecycle: collection from a behavioral policy,
//! line-delimited persistence, mixing, and subsampling.
//!
//! A dataset file is one JSON header line (the metadata) followed by one
//! JSON transition per line. JSON floats round-trip exactly, so write ->
//! load reproduces every record bit for bit.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::Scheduler;
use crate::env::{EnvState, NetConfig};
use crate::error::{Error, Result};
use crate::seeding::{derive_rng, derive_seed};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One environment transition; the unit of the offline dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode_id: u64,
    pub t: usize,
    /// Per-agent observations, `[I][2N]`, stored post-normalization.
    pub obs: Vec<Vec<f64>>,
    /// Per-agent action indices in 0..=N.
    pub joint_action: Vec<usize>,
    pub reward: f64,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
    /// Name of the policy that generated this record.
    pub behavior_tag: String,
}

/// Header line of a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    /// Hash of the generating NetConfig; gates dataset compatibility.
    pub config_hash: String,
    /// Full NetConfig snapshot as key=value pairs.
    pub net_config: BTreeMap<String, String>,
    /// Behavioral policy description.
    pub behavior: String,
    pub record_count: usize,
    pub creation_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<TransitionRecord>,
}

impl Dataset {
    /// Wraps already-collected records (e.g. an exported replay buffer).
    pub fn from_records(
        cfg: &NetConfig,
        behavior: impl Into<String>,
        creation_seed: u64,
        records: Vec<TransitionRecord>,
    ) -> Result<Dataset> {
        Ok(Dataset {
            meta: DatasetMeta {
                format_version: DATASET_FORMAT_VERSION,
                config_hash: cfg.hash(),
                net_config: crate::kv::parse(&cfg.to_kv())?,
                behavior: behavior.into(),
                record_count: records.len(),
                creation_seed,
            },
            records,
        })
    }

    /// Reconstructs the generating NetConfig from the header snapshot.
    pub fn net_config(&self) -> Result<NetConfig> {
        let mut map = self.meta.net_config.clone();
        let mut cfg = NetConfig::default();
        cfg.apply_kv(&mut map)?;
        crate::kv::reject_unknown(&map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let mut meta = self.meta.clone();
        meta.record_count = self.records.len();
        serde_json::to_writer(&mut w, &meta).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
        for record in &self.records {
            serde_json::to_writer(&mut w, record).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let meta: DatasetMeta =
            serde_json::from_str(&header).map_err(|e| Error::Format(format!("header: {e}")))?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format_version {}",
                meta.format_version
            )));
        }
        let mut records = Vec::with_capacity(meta.record_count);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let record: TransitionRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("record {n}: {e}")))?;
            records.push(record);
        }
        if records.len() != meta.record_count {
            return Err(Error::Format(format!(
                "header claims {} records, file holds {}",
                meta.record_count,
                records.len()
            )));
        }
        Ok(Dataset { meta, records })
    }
}

/// Runs full episodes under `policy` and records every transition.
/// Deterministic in `(cfg, policy, episodes, seed)`.
pub fn collect<S: Scheduler>(
    cfg: &NetConfig,
    policy: &mut S,
    episodes: usize,
    seed: u64,
) -> Result<Dataset> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(episodes * cfg.episode_len);
    let tag = policy.name();
    for ep in 0..episodes {
        let env_seed = derive_seed(seed, &format!("collect-env/{ep}"));
        let mut policy_rng = derive_rng(seed, &format!("collect-policy/{ep}"));
        let mut env = EnvState::reset(cfg, env_seed)?;
        policy.begin_episode(&env);
        let mut obs = env.observe();
        for t in 0..cfg.episode_len {
            let action = policy.select(&env, &mut policy_rng);
            let out = env.step(&action)?;
            records.push(TransitionRecord {
                episode_id: ep as u64,
                t,
                obs,
                joint_action: action,
                reward: out.reward,
                next_obs: out.observations.clone(),
                done: out.done,
                behavior_tag: tag.clone(),
            });
            obs = out.observations;
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            config_hash: cfg.hash(),
            net_config: crate::kv::parse(&cfg.to_kv())?,
            behavior: tag,
            record_count: records.len(),
            creation_seed: seed,
        },
        records,
    })
}

fn check_compatible(sources: &[&Dataset]) -> Result<()> {
    let first = &sources[0].meta;
    for ds in &sources[1..] {
        if ds.meta.config_hash != first.config_hash {
            return Err(Error::IncompatibleConfig(format!(
                "config hash {} vs {}",
                first.config_hash, ds.meta.config_hash
            )));
        }
    }
    // Belt and suspenders: the hash covers N and I, but verify the record
    // shapes line up anyway.
    let shape = |ds: &Dataset| {
        ds.records
            .first()
            .map(|r| (r.obs.len(), r.obs.first().map_or(0, |o| o.len())))
    };
    let first_shape = shape(sources[0]);
    for ds in &sources[1..] {
        if shape(ds) != first_shape {
            return Err(Error::IncompatibleConfig(
                "record shapes differ between sources".into(),
            ));
        }
    }
    Ok(())
}

/// Largest-remainder apportionment of `size` across `proportions`.
fn apportion(size: usize, proportions: &[f64]) -> Vec<usize> {
    let ideal: Vec<f64> = proportions.iter().map(|p| p * size as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut remainder = size - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if remainder == 0 {
            break;
        }
        counts[i] += 1;
        remainder -= 1;
    }
    counts
}

/// Samples `size` records without replacement across sources in the given
/// proportions (which must sum to one), then shuffles deterministically.
/// Without an explicit size, takes the largest feasible one. Provenance tags
/// ride along on the records.
pub fn mix(
    sources: &[&Dataset],
    proportions: &[f64],
    size: Option<usize>,
    seed: u64,
) -> Result<Dataset> {
    if sources.is_empty() {
        return Err(Error::EmptyInput("mix: sources"));
    }
    if proportions.len() != sources.len() {
        return Err(Error::DimensionMismatch {
            context: "mix proportions",
            expected: sources.len(),
            got: proportions.len(),
        });
    }
    if proportions.iter().any(|&p| p < 0.0) {
        return Err(Error::Config("mix proportions must be >= 0".into()));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::ProportionSum(total));
    }
    check_compatible(sources)?;

    let size = size.unwrap_or_else(|| {
        sources
            .iter()
            .zip(proportions)
            .filter(|(_, &p)| p > 0.0)
            .map(|(ds, &p)| (ds.records.len() as f64 / p).floor() as usize)
            .min()
            .unwrap_or(0)
    });
    let counts = apportion(size, proportions);
    for (ds, &want) in sources.iter().zip(&counts) {
        if want > ds.records.len() {
            return Err(Error::SizeExceedsSource {
                requested: want,
                available: ds.records.len(),
            });
        }
    }

    let mut rng = derive_rng(seed, "mix");
    let mut records = Vec::with_capacity(size);
    for (ds, &want) in sources.iter().zip(&counts) {
        let picked = rand::seq::index::sample(&mut rng, ds.records.len(), want);
        records.extend(picked.iter().map(|i| ds.records[i].clone()));
    }
    records.shuffle(&mut rng);

    let behavior = sources
        .iter()
        .zip(proportions)
        .map(|(ds, p)| format!("{}:{}", ds.meta.behavior, p))
        .collect::<Vec<_>>()
        .join("+");
    Ok(Dataset {
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            config_hash: sources[0].meta.config_hash.clone(),
            net_config: sources[0].meta.net_config.clone(),
            behavior: format!("mix({behavior})"),
            record_count: records.len(),
            creation_seed: seed,
        },
        records,
    })
}

/// Uniform subsample without replacement.
pub fn subsample(source: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    if size > source.records.len() {
        return Err(Error::SizeExceedsSource {
            requested: size,
            available: source.records.len(),
        });
    }
    let mut rng = derive_rng(seed, "subsample");
    let picked = rand::seq::index::sample(&mut rng, source.records.len(), size);
    let records: Vec<TransitionRecord> =
        picked.iter().map(|i| source.records[i].clone()).collect();
    Ok(Dataset {
        meta: DatasetMeta {
            record_count: records.len(),
            creation_seed: seed,
            behavior: format!("subsample({})", source.meta.behavior),
            ..source.meta.clone()
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{Baseline, BaselineKind};
    use std::collections::HashMap;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            num_aps: 2,
            num_ues: 4,
            episode_len: 20,
            ..NetConfig::default()
        }
    }

    fn collect_tiny(episodes: usize, seed: u64) -> Dataset {
        let cfg = tiny_cfg();
        let mut policy = Baseline::new(BaselineKind::Rw);
        collect(&cfg, &mut policy, episodes, seed).unwrap()
    }

    #[test]
    fn collect_counts_records_per_episode() {
        let ds = collect_tiny(1, 0);
        assert_eq!(ds.records.len(), 20);
        let ds = collect_tiny(3, 0);
        assert_eq!(ds.records.len(), 60);
        assert_eq!(ds.meta.record_count, 60);
    }

    #[test]
    fn collect_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ds");
        let p2 = dir.path().join("b.ds");
        collect_tiny(2, 5).save(&p1).unwrap();
        collect_tiny(2, 5).save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let p3 = dir.path().join("c.ds");
        collect_tiny(2, 6).save(&p3).unwrap();
        assert_ne!(std::fs::read(&p1).unwrap(), std::fs::read(&p3).unwrap());
    }

    #[test]
    fn episode_integrity() {
        let ds = collect_tiny(3, 1);
        let mut by_episode: HashMap<u64, Vec<&TransitionRecord>> = HashMap::new();
        for r in &ds.records {
            by_episode.entry(r.episode_id).or_default().push(r);
        }
        for (_, records) in by_episode {
            for (t, r) in records.iter().enumerate() {
                assert_eq!(r.t, t);
                assert_eq!(r.done, t == 19);
                if t + 1 < records.len() {
                    assert_eq!(r.next_obs, records[t + 1].obs);
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let ds = collect_tiny(2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.ds");
        ds.save(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(ds.records, loaded.records);
        assert_eq!(ds.meta.config_hash, loaded.meta.config_hash);
        assert_eq!(ds.net_config().unwrap(), tiny_cfg());
    }

    #[test]
    fn mix_all_from_first() {
        let a = collect_tiny(2, 3);
        let b = collect_tiny(2, 4);
        let mixed = mix(&[&a, &b], &[1.0, 0.0], None, 0).unwrap();
        assert_eq!(mixed.records.len(), a.records.len());
        // Every record came from `a` (same behavior tag and membership).
        for r in &mixed.records {
            assert!(a.records.contains(r));
        }
    }

    #[test]
    fn mix_half_and_half_preserves_tags() {
        let cfg = tiny_cfg();
        let mut rw = Baseline::new(BaselineKind::Rw);
        let mut greedy = Baseline::new(BaselineKind::Greedy);
        let a = collect(&cfg, &mut rw, 4, 0).unwrap(); // 80 records
        let b = collect(&cfg, &mut greedy, 4, 0).unwrap();
        let mixed = mix(&[&a, &b], &[0.5, 0.5], Some(80), 9).unwrap();
        assert_eq!(mixed.records.len(), 80);
        let rw_count = mixed
            .records
            .iter()
            .filter(|r| r.behavior_tag == "rw")
            .count();
        let greedy_count = mixed
            .records
            .iter()
            .filter(|r| r.behavior_tag == "greedy")
            .count();
        assert_eq!(rw_count, 40);
        assert_eq!(greedy_count, 40);
    }

    #[test]
    fn mix_rejects_incompatible_and_bad_proportions() {
        let a = collect_tiny(1, 0);
        let other_cfg = NetConfig {
            top_n: 2,
            ..tiny_cfg()
        };
        let mut policy = Baseline::new(BaselineKind::Rw);
        let b = collect(&other_cfg, &mut policy, 1, 0).unwrap();
        assert!(matches!(
            mix(&[&a, &b], &[0.5, 0.5], None, 0),
            Err(Error::IncompatibleConfig(_))
        ));
        let c = collect_tiny(1, 1);
        assert!(matches!(
            mix(&[&a, &c], &[0.5, 0.6], None, 0),
            Err(Error::ProportionSum(_))
        ));
    }

    #[test]
    fn subsample_full_size_is_permutation() {
        let ds = collect_tiny(2, 7);
        let sub = subsample(&ds, ds.records.len(), 1).unwrap();
        assert_eq!(sub.records.len(), ds.records.len());
        let mut original = ds.records.clone();
        let mut sampled = sub.records.clone();
        let key = |r: &TransitionRecord| (r.episode_id, r.t);
        original.sort_by_key(key);
        sampled.sort_by_key(key);
        assert_eq!(original, sampled);
    }

    #[test]
    fn subsample_large_source_yields_unique_records() {
        // Fabricated tiny records stand in for a 320k-point collection.
        let total = 320_000;
        let records: Vec<TransitionRecord> = (0..total)
            .map(|n| TransitionRecord {
                episode_id: (n / 200) as u64,
                t: n % 200,
                obs: vec![vec![n as f64]],
                joint_action: vec![0],
                reward: 0.0,
                next_obs: vec![vec![(n + 1) as f64]],
                done: n % 200 == 199,
                behavior_tag: "synthetic".into(),
            })
            .collect();
        let ds = Dataset {
            meta: DatasetMeta {
                format_version: DATASET_FORMAT_VERSION,
                config_hash: "synthetic".into(),
                net_config: BTreeMap::new(),
                behavior: "synthetic".into(),
                record_count: total,
                creation_seed: 0,
            },
            records,
        };
        let sub = subsample(&ds, 20_000, 3).unwrap();
        assert_eq!(sub.records.len(), 20_000);
        let mut seen: Vec<f64> = sub.records.iter().map(|r| r.obs[0][0]).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 20_000, "subsample repeated a record");

        let other = subsample(&ds, 20_000, 4).unwrap();
        assert_ne!(
            sub.records[..50].to_vec(),
            other.records[..50].to_vec(),
            "different seeds should pick different subsets"
        );

        assert!(matches!(
            subsample(&ds, total + 1, 0),
            Err(Error::SizeExceedsSource { .. })
        ));
    }

    #[test]
    fn float_round_trip_through_json_lines() {
        // Awkward values survive the text encoding bit for bit.
        let values = [
            0.1,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1e300,
            -2.2250738585072014e-308,
            123456.789012345678,
        ];
        for &v in &values {
            let json = serde_json::to_string(&v).unwrap();
            let back: f64 = serde_json::from_str(&json).unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "value {v}");
        }
    }
}
