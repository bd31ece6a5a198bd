//! Metrics rows and the CSV writer.
//!
//! Slot rows carry per-agent lists joined with `;`. Episode rows hold means
//! over the episode's slots plus the learner losses of the updates that
//! followed the episode.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use dwm::coord::{GateRecord, SlotExecution};
use serde::{Deserialize, Serialize};
use swipt_core::SystemConfig;

use crate::HarnessError;

pub const KIND_SLOT: &str = "slot";
pub const KIND_EPISODE: &str = "episode";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsRow {
    pub kind: String,
    pub episode: u64,
    /// Slot index for slot rows; empty on episode rows.
    pub slot: Option<usize>,
    pub sum_rate: f64,
    /// 0/1 on slot rows, fraction of violating slots on episode rows.
    pub violation_any: f64,
    pub viol_fue_qos: f64,
    pub viol_fue_eh: f64,
    pub viol_sue_qos: f64,
    pub mean_harvested_mw: f64,
    pub mean_reward: f64,
    /// Fraction of gate decisions that offloaded; empty when no gate ran.
    pub offload_rate: Option<f64>,
    pub rates: String,
    pub harvested_mw: String,
    pub rewards: String,
    /// Per-agent gate decision, `1`/`0`, or `-` when the gate was closed.
    pub offload: String,
    pub gate_interference: String,
    pub gate_recon: String,
    /// Realized minus counterfactual reward per offloading agent, `-` otherwise.
    pub delta: String,
    pub wm_pred: Option<f64>,
    pub wm_dyn: Option<f64>,
    pub wm_rep: Option<f64>,
    pub wm_total: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub imagined_reward: Option<f64>,
    pub gate_policy_loss: Option<f64>,
    pub gate_value_loss: Option<f64>,
}

/// Column order of `metrics.csv`.
pub const COLUMNS: [&str; 27] = [
    "kind",
    "episode",
    "slot",
    "sum_rate",
    "violation_any",
    "viol_fue_qos",
    "viol_fue_eh",
    "viol_sue_qos",
    "mean_harvested_mw",
    "mean_reward",
    "offload_rate",
    "rates",
    "harvested_mw",
    "rewards",
    "offload",
    "gate_interference",
    "gate_recon",
    "delta",
    "wm_pred",
    "wm_dyn",
    "wm_rep",
    "wm_total",
    "actor_loss",
    "critic_loss",
    "imagined_reward",
    "gate_policy_loss",
    "gate_value_loss",
];

fn join(values: impl IntoIterator<Item = String>) -> String {
    values.into_iter().collect::<Vec<_>>().join(";")
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Learner statistics attached to an episode row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LearnerStats {
    pub wm_pred: f64,
    pub wm_dyn: f64,
    pub wm_rep: f64,
    pub wm_total: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub imagined_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
}

pub fn slot_row(episode: u64, exec: &SlotExecution, config: &SystemConfig) -> MetricsRow {
    let report = &exec.report;
    let out = &report.outcome;
    let q = &config.qos;
    let k = report.agents.len();
    let rewards: Vec<f64> = report.agents.iter().map(|a| a.reward).collect();

    let mut offload = vec!["-".to_string(); k];
    let mut gi = vec!["-".to_string(); k];
    let mut gr = vec!["-".to_string(); k];
    let mut delta = vec!["-".to_string(); k];
    for r in &exec.records {
        offload[r.agent] = if r.offload { "1" } else { "0" }.to_string();
        gi[r.agent] = r.input.interference_feat.to_string();
        gr[r.agent] = r.input.recon_feat.to_string();
        if let Some(d) = r.improvement {
            delta[r.agent] = d.to_string();
        }
    }
    let offload_rate = if exec.records.is_empty() {
        None
    } else {
        Some(exec.records.iter().filter(|r| r.offload).count() as f64 / exec.records.len() as f64)
    };

    MetricsRow {
        kind: KIND_SLOT.to_string(),
        episode,
        slot: Some(report.slot),
        sum_rate: out.fue_sum_rate(),
        violation_any: flag(report.violation_any),
        viol_fue_qos: flag(out.fue_rates.iter().any(|&r| r < q.xi_fue)),
        viol_fue_eh: flag(out.harvested.iter().any(|&e| e < q.phi_fue_mw)),
        viol_sue_qos: flag(out.sue_rates.iter().any(|&r| r < q.xi_sue)),
        mean_harvested_mw: mean(&out.harvested),
        mean_reward: mean(&rewards),
        offload_rate,
        rates: join(out.fue_rates.iter().map(f64::to_string)),
        harvested_mw: join(out.harvested.iter().map(f64::to_string)),
        rewards: join(rewards.iter().map(f64::to_string)),
        offload: offload.join(";"),
        gate_interference: gi.join(";"),
        gate_recon: gr.join(";"),
        delta: delta.join(";"),
        ..Default::default()
    }
}

/// Means of the slot rows of one episode.
pub fn episode_row(episode: u64, slots: &[MetricsRow], records: &[GateRecord]) -> MetricsRow {
    let col = |f: fn(&MetricsRow) -> f64| mean(&slots.iter().map(f).collect::<Vec<_>>());
    let offload_rate = if records.is_empty() {
        None
    } else {
        Some(records.iter().filter(|r| r.offload).count() as f64 / records.len() as f64)
    };
    let per_agent = |f: fn(&MetricsRow) -> &String| {
        let lists: Vec<Vec<f64>> = slots
            .iter()
            .map(|s| f(s).split(';').map(|x| x.parse().unwrap_or(0.0)).collect())
            .collect();
        let k = lists.first().map_or(0, Vec::len);
        join((0..k).map(|i| mean(&lists.iter().map(|l| l[i]).collect::<Vec<_>>()).to_string()))
    };
    MetricsRow {
        kind: KIND_EPISODE.to_string(),
        episode,
        slot: None,
        sum_rate: col(|r| r.sum_rate),
        violation_any: col(|r| r.violation_any),
        viol_fue_qos: col(|r| r.viol_fue_qos),
        viol_fue_eh: col(|r| r.viol_fue_eh),
        viol_sue_qos: col(|r| r.viol_sue_qos),
        mean_harvested_mw: col(|r| r.mean_harvested_mw),
        mean_reward: col(|r| r.mean_reward),
        offload_rate,
        rates: per_agent(|r| &r.rates),
        harvested_mw: per_agent(|r| &r.harvested_mw),
        rewards: per_agent(|r| &r.rewards),
        ..Default::default()
    }
}

impl MetricsRow {
    pub fn with_learner(mut self, s: Option<LearnerStats>) -> Self {
        if let Some(s) = s {
            self.wm_pred = Some(s.wm_pred);
            self.wm_dyn = Some(s.wm_dyn);
            self.wm_rep = Some(s.wm_rep);
            self.wm_total = Some(s.wm_total);
            self.actor_loss = Some(s.actor_loss);
            self.critic_loss = Some(s.critic_loss);
            self.imagined_reward = Some(s.imagined_reward);
        }
        self
    }

    pub fn with_gate(mut self, s: Option<GateStats>) -> Self {
        if let Some(s) = s {
            self.gate_policy_loss = Some(s.policy_loss);
            self.gate_value_loss = Some(s.value_loss);
        }
        self
    }
}

/// CSV writer on its own thread, fed through a bounded queue.
pub struct MetricsSink {
    tx: Option<SyncSender<MetricsRow>>,
    handle: Option<JoinHandle<Result<(), HarnessError>>>,
}

impl MetricsSink {
    /// Creates (or, with `append`, extends) the CSV at `path`.
    pub fn open(path: &Path, append: bool) -> Result<Self, HarnessError> {
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        let write_header = !(append && exists);
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        if write_header {
            writer.write_record(COLUMNS)?;
        }
        let (tx, rx) = sync_channel::<MetricsRow>(1024);
        let handle = std::thread::spawn(move || -> Result<(), HarnessError> {
            for row in rx {
                writer.serialize(row)?;
            }
            writer.flush()?;
            Ok(())
        });
        Ok(Self {
            tx: Some(tx),
            handle: Some(handle),
        })
    }

    pub fn send(&self, row: MetricsRow) -> Result<(), HarnessError> {
        self.tx
            .as_ref()
            .expect("sink open")
            .send(row)
            .map_err(|_| HarnessError::Metrics("metrics writer stopped".into()))
    }

    /// Flushes and joins the writer thread.
    pub fn close(mut self) -> Result<(), HarnessError> {
        self.finish()
    }

    fn finish(&mut self) -> Result<(), HarnessError> {
        drop(self.tx.take());
        match self.handle.take() {
            Some(h) => h
                .join()
                .map_err(|_| HarnessError::Metrics("metrics writer panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for MetricsSink {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

/// Reads every row of a metrics file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
