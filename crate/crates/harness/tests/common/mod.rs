#![allow(dead_code)]

use std::path::Path;

use harness::metrics::{read_metrics, MetricsRow, MetricsSink};
use harness::{TrainOptions, Trainer};
use swipt_core::SystemConfig;

/// Small networks so a few dozen episodes train in seconds.
pub const TINY: &str = r#"
[training]
seed = 7
episodes = 50
det_dim = 8
stoch_dim = 4
hidden_dim = 16
gate_hidden_dim = 8
batch_size = 4
horizon = 5
imagination_starts = 8
checkpoint_every = 10
gate_warmup_episodes = 4
gate_update_every = 2
"#;

pub fn tiny_config() -> SystemConfig {
    SystemConfig::from_toml_str_with_env(TINY, &Default::default()).unwrap()
}

/// Trains into `dir` and returns the trainer and the rows written.
pub fn train_into(config: &SystemConfig, dir: &Path) -> (Trainer, Vec<MetricsRow>) {
    let mut t = Trainer::new(config).unwrap();
    let path = dir.join("metrics.csv");
    let sink = MetricsSink::open(&path, false).unwrap();
    t.run(
        &TrainOptions {
            out_dir: dir.to_path_buf(),
            slot_rows: false,
        },
        &sink,
    )
    .unwrap();
    sink.close().unwrap();
    (t, read_metrics(&path).unwrap())
}
