//! Command implementations. Each command resolves its inputs into a request
//! struct, executes, writes outputs, and drops a manifest next to the
//! primary output; `rerun` rebuilds a request from a manifest and replays it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rrm_core::baselines::{Baseline, BaselineKind, ItlinqParams, Scheduler};
use rrm_core::dataset::{self, Dataset};
use rrm_core::env::{EnvState, NetConfig};
use rrm_core::error::{Error, Result};
use rrm_core::kv;
use rrm_core::marl::{
    save_model, train_offline, train_online, ActMode, AgentNets, Algo, CurveRow, EvalPoint,
    ModelScheduler, TrainerConfig,
};
use rrm_core::metrics::{evaluate, EvalOptions, EvalSummary};
use rrm_core::seeding::derive_seed;

use crate::manifest::{file_sha256, manifest_path, DatasetRef, RunManifest, MANIFEST_FORMAT_VERSION};

/// Either kind of episode driver.
#[derive(Clone)]
pub enum AnyScheduler {
    Baseline(Baseline),
    Model(Box<ModelScheduler>),
}

impl Scheduler for AnyScheduler {
    fn name(&self) -> String {
        match self {
            AnyScheduler::Baseline(b) => b.name(),
            AnyScheduler::Model(m) => m.name(),
        }
    }

    fn begin_episode(&mut self, env: &EnvState) {
        match self {
            AnyScheduler::Baseline(b) => b.begin_episode(env),
            AnyScheduler::Model(m) => m.begin_episode(env),
        }
    }

    fn select(&mut self, env: &EnvState, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
        match self {
            AnyScheduler::Baseline(b) => b.select(env, rng),
            AnyScheduler::Model(m) => m.select(env, rng),
        }
    }
}

/// Parses the config file plus `--set key=value` overrides into one map.
pub fn load_config_map(config: Option<&Path>, sets: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = match config {
        Some(path) => kv::parse(&std::fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    for pair in sets {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects KEY=VALUE, got '{pair}'"
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Consumes environment and policy keys from the map.
pub fn resolve_env(map: &mut BTreeMap<String, String>) -> Result<(NetConfig, ItlinqParams)> {
    let mut net = NetConfig::default();
    net.apply_kv(map)?;
    net.validate()?;
    let mut itlinq = ItlinqParams::default();
    itlinq.apply_kv(map)?;
    itlinq.validate()?;
    Ok((net, itlinq))
}

/// Consumes trainer keys; `algo` (from the flag) wins over a config key.
pub fn resolve_trainer(map: &mut BTreeMap<String, String>, algo: Algo) -> Result<TrainerConfig> {
    let mut trainer = TrainerConfig::new(algo);
    trainer.apply_kv(map)?;
    trainer.algo = algo;
    trainer.validate()?;
    Ok(trainer)
}

fn itlinq_kv_map(itlinq: &ItlinqParams) -> BTreeMap<String, String> {
    kv::parse(&itlinq.to_kv()).expect("itlinq kv rendering is well-formed")
}

fn net_kv_map(net: &NetConfig) -> BTreeMap<String, String> {
    kv::parse(&net.to_kv()).expect("net kv rendering is well-formed")
}

/// Builds a policy from its spec: a baseline name or `model:<path>`.
/// Model policies are checked against the environment config.
pub fn make_policy(
    spec: &str,
    net: &NetConfig,
    itlinq: ItlinqParams,
    mode: ActMode,
    model_refs: &mut Vec<DatasetRef>,
) -> Result<AnyScheduler> {
    if let Some(path) = spec.strip_prefix("model:") {
        let path = PathBuf::from(path);
        let scheduler = ModelScheduler::from_file(&path, net, mode)?;
        model_refs.push(DatasetRef {
            sha256: file_sha256(&path)?,
            path,
        });
        return Ok(AnyScheduler::Model(Box::new(scheduler)));
    }
    let kind = BaselineKind::parse(spec)?;
    Ok(AnyScheduler::Baseline(Baseline::with_itlinq_params(
        kind, itlinq,
    )?))
}

/// Worker threads for episode fan-out: hardware parallelism capped by the
/// RRM_THREADS environment variable and the episode count.
pub fn workers_for(episodes: usize) -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("RRM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(hw);
    hw.min(cap).max(1).min(episodes.max(1))
}

fn base_manifest(verb: &str, argv: &[String], seed: u64, net: &NetConfig, itlinq: &ItlinqParams) -> RunManifest {
    RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        verb: verb.to_string(),
        command_line: argv.to_vec(),
        seed,
        net_config: net_kv_map(net),
        itlinq: itlinq_kv_map(itlinq),
        trainer_config: None,
        policies: Vec::new(),
        episodes: None,
        window: None,
        datasets: Vec::new(),
        proportions: None,
        size: None,
        models: Vec::new(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_utc: chrono::Utc::now().to_rfc3339(),
        outputs: BTreeMap::new(),
    }
}

fn dataset_ref(path: &Path) -> Result<DatasetRef> {
    Ok(DatasetRef {
        sha256: file_sha256(path)?,
        path: path.to_path_buf(),
    })
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

pub struct CollectRequest {
    pub net: NetConfig,
    pub itlinq: ItlinqParams,
    pub policy: String,
    pub episodes: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_collect(req: &CollectRequest, argv: &[String]) -> Result<()> {
    let mut model_refs = Vec::new();
    let mut policy = make_policy(
        &req.policy,
        &req.net,
        req.itlinq,
        ActMode::Sample,
        &mut model_refs,
    )?;
    let ds = dataset::collect(&req.net, &mut policy, req.episodes, req.seed)?;
    if req.episodes == 0 {
        eprintln!("warning: 0 episodes requested; writing an empty dataset");
    }
    ds.save(&req.out)?;
    let mean_reward = if ds.records.is_empty() {
        0.0
    } else {
        ds.records.iter().map(|r| r.reward).sum::<f64>() / ds.records.len() as f64
    };
    println!(
        "collected {} records ({} episodes) with policy {}; mean reward {mean_reward:.4}",
        ds.records.len(),
        req.episodes,
        policy.name()
    );

    let mut manifest = base_manifest("collect", argv, req.seed, &req.net, &req.itlinq);
    manifest.policies = vec![req.policy.clone()];
    manifest.episodes = Some(req.episodes);
    manifest.models = model_refs;
    manifest.outputs.insert("dataset".into(), req.out.clone());
    manifest.save(&manifest_path(&req.out))
}

// ---------------------------------------------------------------------------
// mix / subsample
// ---------------------------------------------------------------------------

pub struct MixRequest {
    pub datasets: Vec<PathBuf>,
    pub proportions: Vec<f64>,
    pub size: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_mix(req: &MixRequest, argv: &[String]) -> Result<()> {
    let sources: Vec<Dataset> = req
        .datasets
        .iter()
        .map(|p| Dataset::load(p))
        .collect::<Result<_>>()?;
    let refs: Vec<&Dataset> = sources.iter().collect();
    let mixed = dataset::mix(&refs, &req.proportions, req.size, req.seed)?;
    mixed.save(&req.out)?;
    println!(
        "mixed {} records from {} sources -> {}",
        mixed.records.len(),
        sources.len(),
        req.out.display()
    );

    let net = mixed.net_config()?;
    let mut manifest = base_manifest("mix", argv, req.seed, &net, &ItlinqParams::default());
    manifest.datasets = req
        .datasets
        .iter()
        .map(|p| dataset_ref(p))
        .collect::<Result<_>>()?;
    manifest.proportions = Some(req.proportions.clone());
    manifest.size = req.size;
    manifest.outputs.insert("dataset".into(), req.out.clone());
    manifest.save(&manifest_path(&req.out))
}

pub struct SubsampleRequest {
    pub dataset: PathBuf,
    pub size: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_subsample(req: &SubsampleRequest, argv: &[String]) -> Result<()> {
    let source = Dataset::load(&req.dataset)?;
    let sub = dataset::subsample(&source, req.size, req.seed)?;
    sub.save(&req.out)?;
    println!(
        "subsampled {} of {} records -> {}",
        sub.records.len(),
        source.records.len(),
        req.out.display()
    );

    let net = sub.net_config()?;
    let mut manifest = base_manifest("subsample", argv, req.seed, &net, &ItlinqParams::default());
    manifest.datasets = vec![dataset_ref(&req.dataset)?];
    manifest.size = Some(req.size);
    manifest.outputs.insert("dataset".into(), req.out.clone());
    manifest.save(&manifest_path(&req.out))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub struct TrainRequest {
    pub net: NetConfig,
    pub itlinq: ItlinqParams,
    pub trainer: TrainerConfig,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub csv: Option<PathBuf>,
    pub window: Option<usize>,
}

/// Trailing moving average over the eval columns, raw rows otherwise.
fn smooth_eval_columns(rows: &mut [CurveRow], window: usize) {
    if window <= 1 {
        return;
    }
    let mut history: Vec<EvalPoint> = Vec::new();
    for row in rows.iter_mut() {
        if let Some(point) = row.eval {
            history.push(point);
            let start = history.len().saturating_sub(window);
            let slice = &history[start..];
            let n = slice.len() as f64;
            row.eval = Some(EvalPoint {
                rsum: slice.iter().map(|p| p.rsum).sum::<f64>() / n,
                rperc5: slice.iter().map(|p| p.rperc5).sum::<f64>() / n,
                rscore: slice.iter().map(|p| p.rscore).sum::<f64>() / n,
            });
        }
    }
}

pub fn run_train(req: &TrainRequest, argv: &[String]) -> Result<()> {
    let algo = req.trainer.algo;
    let (net, dataset, dataset_refs) = match (&req.dataset, algo.is_offline()) {
        (Some(path), _) => {
            let ds = Dataset::load(path)?;
            let ds_net = ds.net_config()?;
            // An explicitly supplied env config must agree with the dataset.
            if req.net != NetConfig::default() && req.net.hash() != ds_net.hash() {
                return Err(Error::IncompatibleConfig(
                    "supplied network config differs from the dataset's".into(),
                ));
            }
            (ds_net, Some(ds), vec![dataset_ref(path)?])
        }
        (None, true) => unreachable!("offline without dataset is rejected at the flag layer"),
        (None, false) => (req.net.clone(), None, Vec::new()),
    };

    let trainer = &req.trainer;
    let eval_seed = derive_seed(trainer.seed, "train-eval");
    let eval_opts = EvalOptions {
        workers: workers_for(trainer.eval_episodes),
        ..EvalOptions::default()
    };
    let hook_net = net.clone();
    let mut hook = move |_iteration: usize, nets: &AgentNets| -> Result<EvalPoint> {
        let scheduler = AnyScheduler::Model(Box::new(ModelScheduler::new(
            algo,
            nets.clone(),
            ActMode::Greedy,
            "train-eval",
        )));
        let summary = evaluate(
            &scheduler,
            &hook_net,
            trainer.eval_episodes.max(1),
            eval_seed,
            &eval_opts,
        )?;
        Ok(EvalPoint {
            rsum: summary.rsum_mean,
            rperc5: summary.rperc5,
            rscore: summary.rscore,
        })
    };

    let mut output = match &dataset {
        Some(ds) => train_offline(trainer, ds, Some(&mut hook))?,
        None => train_online(trainer, &net, Some(&mut hook))?,
    };

    save_model(&req.out, algo, &output.nets, &net.hash())?;
    if let Some(csv_path) = &req.csv {
        if let Some(window) = req.window {
            smooth_eval_columns(&mut output.curves, window);
        }
        let mut text = String::from(CurveRow::CSV_HEADER);
        text.push('\n');
        for row in &output.curves {
            text.push_str(&row.to_csv_line());
            text.push('\n');
        }
        std::fs::write(csv_path, text)?;
    }
    if let Some(last) = output.curves.last() {
        println!(
            "trained {} for {} iterations x {} steps: critic loss {:.6}, policy loss {:.6}",
            algo, trainer.iterations, trainer.grad_steps_per_iter, last.critic_loss, last.policy_loss
        );
    } else {
        println!("trained {algo} for 0 iterations (initialized networks only)");
    }
    println!("model -> {}", req.out.display());

    let mut manifest = base_manifest("train", argv, trainer.seed, &net, &req.itlinq);
    manifest.trainer_config = Some(kv::parse(&trainer.to_kv())?);
    manifest.datasets = dataset_refs;
    manifest.window = req.window;
    manifest.outputs.insert("model".into(), req.out.clone());
    if let Some(csv) = &req.csv {
        manifest.outputs.insert("curves".into(), csv.clone());
    }
    manifest.save(&manifest_path(&req.out))
}

// ---------------------------------------------------------------------------
// eval / compare
// ---------------------------------------------------------------------------

pub struct EvalRequest {
    pub net: NetConfig,
    pub itlinq: ItlinqParams,
    pub policy: String,
    pub episodes: usize,
    pub seed: u64,
    pub csv: PathBuf,
    pub summary_out: Option<PathBuf>,
}

#[derive(serde::Serialize)]
struct SummaryDocument<'a> {
    policy: &'a str,
    episodes: usize,
    seed: u64,
    rsum_mean: f64,
    rsum_std: f64,
    rperc5: f64,
    rscore: f64,
    mu1: f64,
    mu2: f64,
}

fn summary_json(policy: &str, seed: u64, summary: &EvalSummary) -> Result<String> {
    serde_json::to_string_pretty(&SummaryDocument {
        policy,
        episodes: summary.episodes,
        seed,
        rsum_mean: summary.rsum_mean,
        rsum_std: summary.rsum_std,
        rperc5: summary.rperc5,
        rscore: summary.rscore,
        mu1: summary.mu1,
        mu2: summary.mu2,
    })
    .map_err(|e| Error::Format(e.to_string()))
}

pub fn run_eval(req: &EvalRequest, argv: &[String]) -> Result<()> {
    let mut model_refs = Vec::new();
    let policy = make_policy(
        &req.policy,
        &req.net,
        req.itlinq,
        ActMode::Greedy,
        &mut model_refs,
    )?;
    let opts = EvalOptions {
        workers: workers_for(req.episodes),
        ..EvalOptions::default()
    };
    let summary = evaluate(&policy, &req.net, req.episodes, req.seed, &opts)?;
    let run_id = format!("{}-s{}", req.policy, req.seed);
    std::fs::write(&req.csv, summary.to_csv(&run_id))?;
    if let Some(out) = &req.summary_out {
        std::fs::write(out, summary_json(&req.policy, req.seed, &summary)? + "\n")?;
    }
    println!(
        "{}: Rsum {:.4} +/- {:.4}, Rperc5 {:.4}, Rscore {:.4} ({} episodes)",
        req.policy, summary.rsum_mean, summary.rsum_std, summary.rperc5, summary.rscore, req.episodes
    );

    let mut manifest = base_manifest("eval", argv, req.seed, &req.net, &req.itlinq);
    manifest.policies = vec![req.policy.clone()];
    manifest.episodes = Some(req.episodes);
    manifest.models = model_refs;
    manifest.outputs.insert("csv".into(), req.csv.clone());
    if let Some(out) = &req.summary_out {
        manifest.outputs.insert("summary".into(), out.clone());
    }
    manifest.save(&manifest_path(&req.csv))
}

pub struct CompareRequest {
    pub net: NetConfig,
    pub itlinq: ItlinqParams,
    pub policies: Vec<String>,
    pub episodes: usize,
    pub seed: u64,
    pub csv: PathBuf,
}

pub fn run_compare(req: &CompareRequest, argv: &[String]) -> Result<()> {
    let mut model_refs = Vec::new();
    let mut rows = String::from("policy,episodes,Rsum_mean,Rsum_std,Rperc5,Rscore\n");
    println!(
        "{:<24} {:>10} {:>10} {:>10} {:>10}",
        "policy", "Rsum", "Rsum_std", "Rperc5", "Rscore"
    );
    for spec in &req.policies {
        let policy = make_policy(spec, &req.net, req.itlinq, ActMode::Greedy, &mut model_refs)?;
        let opts = EvalOptions {
            workers: workers_for(req.episodes),
            ..EvalOptions::default()
        };
        // Same master seed for every policy: identical topology sequences.
        let summary = evaluate(&policy, &req.net, req.episodes, req.seed, &opts)?;
        rows.push_str(&format!(
            "{spec},{},{},{},{},{}\n",
            req.episodes, summary.rsum_mean, summary.rsum_std, summary.rperc5, summary.rscore
        ));
        println!(
            "{spec:<24} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            summary.rsum_mean, summary.rsum_std, summary.rperc5, summary.rscore
        );
    }
    std::fs::write(&req.csv, rows)?;

    let mut manifest = base_manifest("compare", argv, req.seed, &req.net, &req.itlinq);
    manifest.policies = req.policies.clone();
    manifest.episodes = Some(req.episodes);
    manifest.models = model_refs;
    manifest.outputs.insert("csv".into(), req.csv.clone());
    manifest.save(&manifest_path(&req.csv))
}

// ---------------------------------------------------------------------------
// rerun
// ---------------------------------------------------------------------------

fn net_from_map(map: &BTreeMap<String, String>) -> Result<NetConfig> {
    let mut map = map.clone();
    let mut net = NetConfig::default();
    net.apply_kv(&mut map)?;
    kv::reject_unknown(&map)?;
    net.validate()?;
    Ok(net)
}

fn itlinq_from_map(map: &BTreeMap<String, String>) -> Result<ItlinqParams> {
    let mut map = map.clone();
    let mut itlinq = ItlinqParams::default();
    itlinq.apply_kv(&mut map)?;
    kv::reject_unknown(&map)?;
    itlinq.validate()?;
    Ok(itlinq)
}

fn verify_inputs(manifest: &RunManifest) -> Result<()> {
    for input in manifest.datasets.iter().chain(&manifest.models) {
        let actual = file_sha256(&input.path)?;
        if actual != input.sha256 {
            return Err(Error::IncompatibleConfig(format!(
                "input {} changed since the manifest was written (sha256 {actual} != {})",
                input.path.display(),
                input.sha256
            )));
        }
    }
    Ok(())
}

fn remap_output(out_dir: &Path, original: &Path) -> PathBuf {
    out_dir.join(original.file_name().unwrap_or(original.as_os_str()))
}

/// Replays a recorded command with outputs redirected into `out_dir`.
/// Inputs are hash-verified first; the replay writes its own manifest.
pub fn run_rerun(manifest_file: &Path, out_dir: &Path, argv: &[String]) -> Result<()> {
    let manifest = RunManifest::load(manifest_file)?;
    verify_inputs(&manifest)?;
    std::fs::create_dir_all(out_dir)?;
    let net = net_from_map(&manifest.net_config)?;
    let itlinq = itlinq_from_map(&manifest.itlinq)?;
    let output = |kind: &str| -> Result<PathBuf> {
        manifest
            .outputs
            .get(kind)
            .map(|p| remap_output(out_dir, p))
            .ok_or_else(|| Error::Format(format!("manifest lacks '{kind}' output")))
    };
    match manifest.verb.as_str() {
        "collect" => run_collect(
            &CollectRequest {
                net,
                itlinq,
                policy: manifest.policies[0].clone(),
                episodes: manifest.episodes.unwrap_or(0),
                seed: manifest.seed,
                out: output("dataset")?,
            },
            argv,
        ),
        "mix" => run_mix(
            &MixRequest {
                datasets: manifest.datasets.iter().map(|d| d.path.clone()).collect(),
                proportions: manifest.proportions.clone().unwrap_or_default(),
                size: manifest.size,
                seed: manifest.seed,
                out: output("dataset")?,
            },
            argv,
        ),
        "subsample" => run_subsample(
            &SubsampleRequest {
                dataset: manifest.datasets[0].path.clone(),
                size: manifest.size.unwrap_or(0),
                seed: manifest.seed,
                out: output("dataset")?,
            },
            argv,
        ),
        "train" => {
            let trainer_map = manifest
                .trainer_config
                .clone()
                .ok_or_else(|| Error::Format("train manifest lacks trainer_config".into()))?;
            let mut map = trainer_map;
            let mut trainer = TrainerConfig::new(Algo::CqlCtde);
            trainer.apply_kv(&mut map)?;
            kv::reject_unknown(&map)?;
            run_train(
                &TrainRequest {
                    net,
                    itlinq,
                    trainer,
                    dataset: manifest.datasets.first().map(|d| d.path.clone()),
                    out: output("model")?,
                    csv: manifest
                        .outputs
                        .get("curves")
                        .map(|p| remap_output(out_dir, p)),
                    window: manifest.window,
                },
                argv,
            )
        }
        "eval" => run_eval(
            &EvalRequest {
                net,
                itlinq,
                policy: manifest.policies[0].clone(),
                episodes: manifest.episodes.unwrap_or(1),
                seed: manifest.seed,
                csv: output("csv")?,
                summary_out: manifest
                    .outputs
                    .get("summary")
                    .map(|p| remap_output(out_dir, p)),
            },
            argv,
        ),
        "compare" => run_compare(
            &CompareRequest {
                net,
                itlinq,
                policies: manifest.policies.clone(),
                episodes: manifest.episodes.unwrap_or(1),
                seed: manifest.seed,
                csv: output("csv")?,
            },
            argv,
        ),
        other => Err(Error::Format(format!("manifest has unknown verb '{other}'"))),
    }
}
