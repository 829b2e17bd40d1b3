//! Shared fixtures for the benchmark targets.

use rrm_core::baselines::{Baseline, BaselineKind};
use rrm_core::dataset::{collect, Dataset};
use rrm_core::env::NetConfig;

/// Default-config dataset used by the training benchmarks.
pub fn bench_dataset(episodes: usize) -> Dataset {
    let cfg = NetConfig::default();
    let mut policy = Baseline::new(BaselineKind::Itlinq);
    collect(&cfg, &mut policy, episodes, 0).expect("bench dataset collection")
}
