//! Rate metrics and the evaluation harness: per-user average rates, sum
//! rate, the 5-percentile tail rate, and their weighted combination.

use crate::baselines::Scheduler;
use crate::env::{EnvState, NetConfig};
use crate::error::{Error, Result};
use crate::seeding::{derive_rng, derive_seed};

/// Minimum pooled sample count for a meaningful 5th percentile.
pub const PERCENTILE_MIN_SAMPLES: usize = 20;

/// Per-user average rate over an episode: C~_j = (1/T) sum_t C_j(t).
/// `episode_rates` is T rows of J entries.
pub fn avg_user_rates(episode_rates: &[Vec<f64>]) -> Result<Vec<f64>> {
    if episode_rates.is_empty() {
        return Err(Error::EmptyInput("avg_user_rates"));
    }
    let num_users = episode_rates[0].len();
    let mut sums = vec![0.0; num_users];
    for row in episode_rates {
        if row.len() != num_users {
            return Err(Error::DimensionMismatch {
                context: "avg_user_rates row",
                expected: num_users,
                got: row.len(),
            });
        }
        for (s, &r) in sums.iter_mut().zip(row) {
            *s += r;
        }
    }
    let steps = episode_rates.len() as f64;
    for s in &mut sums {
        *s /= steps;
    }
    Ok(sums)
}

/// Sum rate over users.
pub fn sum_rate(avg_rates: &[f64]) -> Result<f64> {
    if avg_rates.is_empty() {
        return Err(Error::EmptyInput("sum_rate"));
    }
    Ok(avg_rates.iter().sum())
}

/// Lower empirical 5th percentile: the largest C such that at least 95% of
/// the pooled values are >= C. Sorted ascending, that is the value at
/// zero-based index floor(0.05 * (n - 1)).
pub fn percentile5(pooled: &[f64]) -> Result<f64> {
    if pooled.len() < PERCENTILE_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            min: PERCENTILE_MIN_SAMPLES,
            got: pooled.len(),
        });
    }
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = (0.05 * (sorted.len() as f64 - 1.0)).floor() as usize;
    Ok(sorted[idx])
}

/// Weighted score mu1 * Rsum + mu2 * Rperc5.
pub fn rscore(rsum: f64, rperc5: f64, mu1: f64, mu2: f64) -> f64 {
    mu1 * rsum + mu2 * rperc5
}

/// Evaluation knobs. `mu1` defaults to 1/J so the sum-rate term sits on a
/// per-user scale comparable with the tail term.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mu1: Option<f64>,
    pub mu2: f64,
    /// Worker threads for fanning out episodes; 1 = sequential.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mu1: None,
            mu2: 3.0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub episode: usize,
    pub rsum: f64,
    pub user_avg_rates: Vec<f64>,
}

/// Aggregated evaluation result.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub episodes: usize,
    /// Mean over episodes of each user's average rate.
    pub mean_user_rates: Vec<f64>,
    pub rsum_mean: f64,
    pub rsum_std: f64,
    /// 5th percentile of user averages pooled across episodes and users.
    pub rperc5: f64,
    pub rscore: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub rows: Vec<EpisodeRow>,
}

/// Runs one seeded evaluation episode and returns the per-user averages.
fn run_episode<S: Scheduler>(
    policy: &mut S,
    cfg: &NetConfig,
    seed: u64,
    episode: usize,
) -> Result<Vec<f64>> {
    let env_seed = derive_seed(seed, &format!("eval-env/{episode}"));
    let mut policy_rng = derive_rng(seed, &format!("eval-policy/{episode}"));
    let mut env = EnvState::reset(cfg, env_seed)?;
    policy.begin_episode(&env);
    let mut rates = Vec::with_capacity(cfg.episode_len);
    for _ in 0..cfg.episode_len {
        let action = policy.select(&env, &mut policy_rng);
        let out = env.step(&action)?;
        rates.push(out.per_ue_rate);
    }
    avg_user_rates(&rates)
}

/// Evaluates a policy over seeded episodes. Every policy evaluated with the
/// same `seed` sees the identical topology/fading sequence, so comparisons
/// share their randomness. Episodes are independent and may fan out across
/// `opts.workers` threads; results merge deterministically by index.
pub fn evaluate<S: Scheduler + Clone + Send>(
    policy: &S,
    cfg: &NetConfig,
    episodes: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::EmptyInput("evaluate: episodes"));
    }
    cfg.validate()?;
    let workers = opts.workers.clamp(1, episodes);
    let mut per_episode: Vec<Option<Vec<f64>>> = vec![None; episodes];

    if workers == 1 {
        let mut local = policy.clone();
        for (ep, slot) in per_episode.iter_mut().enumerate() {
            *slot = Some(run_episode(&mut local, cfg, seed, ep)?);
        }
    } else {
        let results: Vec<Result<(usize, Vec<f64>)>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..workers {
                let policy = policy.clone();
                let cfg = cfg.clone();
                handles.push(scope.spawn(move || {
                    let mut local = policy;
                    let mut out = Vec::new();
                    let mut ep = w;
                    while ep < episodes {
                        match run_episode(&mut local, &cfg, seed, ep) {
                            Ok(rates) => out.push(Ok((ep, rates))),
                            Err(e) => {
                                out.push(Err(e));
                                break;
                            }
                        }
                        ep += workers;
                    }
                    out
                }));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        for r in results {
            let (ep, rates) = r?;
            per_episode[ep] = Some(rates);
        }
    }

    let mu1 = opts.mu1.unwrap_or(1.0 / cfg.num_ues as f64);
    let mut rows = Vec::with_capacity(episodes);
    let mut pooled = Vec::with_capacity(episodes * cfg.num_ues);
    let mut mean_user_rates = vec![0.0; cfg.num_ues];
    for (ep, rates) in per_episode.into_iter().enumerate() {
        let user_avg_rates = rates.expect("episode result missing");
        pooled.extend_from_slice(&user_avg_rates);
        for (m, &r) in mean_user_rates.iter_mut().zip(&user_avg_rates) {
            *m += r / episodes as f64;
        }
        rows.push(EpisodeRow {
            episode: ep,
            rsum: sum_rate(&user_avg_rates)?,
            user_avg_rates,
        });
    }

    let rsum_mean = rows.iter().map(|r| r.rsum).sum::<f64>() / episodes as f64;
    let rsum_std = if episodes > 1 {
        (rows
            .iter()
            .map(|r| (r.rsum - rsum_mean).powi(2))
            .sum::<f64>()
            / (episodes - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let rperc5 = percentile5(&pooled)?;

    Ok(EvalSummary {
        episodes,
        mean_user_rates,
        rsum_mean,
        rsum_std,
        rperc5,
        rscore: rscore(rsum_mean, rperc5, mu1, opts.mu2),
        mu1,
        mu2: opts.mu2,
        rows,
    })
}

impl EvalSummary {
    /// Per-episode CSV with running tail statistics. The running percentile
    /// column stays empty until enough values are pooled.
    pub fn to_csv(&self, run_id: &str) -> String {
        let mut out = String::from("run_id,episode,Rsum,Rperc5_running,Rscore_running\n");
        let mut pooled: Vec<f64> = Vec::new();
        let mut rsum_acc = 0.0;
        for row in &self.rows {
            pooled.extend_from_slice(&row.user_avg_rates);
            rsum_acc += row.rsum;
            let rsum_mean = rsum_acc / (row.episode + 1) as f64;
            let (p5, score) = match percentile5(&pooled) {
                Ok(p5) => (
                    format!("{p5}"),
                    format!("{}", rscore(rsum_mean, p5, self.mu1, self.mu2)),
                ),
                Err(_) => (String::new(), String::new()),
            };
            out.push_str(&format!("{run_id},{},{},{p5},{score}\n", row.episode, row.rsum));
        }
        out
    }
}
