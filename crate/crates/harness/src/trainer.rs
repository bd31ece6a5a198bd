//! The training loop: collect an episode with the gate-assisted protocol,
//! then update every agent's world model, actor-critic and (periodically)
//! gate. Every random draw comes from a stream keyed by agent, purpose and
//! episode, so a run resumed from a checkpoint continues bit-for-bit.

use std::path::{Path, PathBuf};

use diffnn::checkpoint::{Block, Checkpoint};
use diffnn::params::{Adam, ParamStore};
use dwm::agent::ActMode;
use dwm::coord::{execute_slot, AgentStreams, ExecConfig, GateInput, GateMode, GateRecord};
use dwm::team::{ac_config, gate_train_config, wm_loss_config, DwmAgent};
use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use serde::Serialize;
use swipt_core::env::HetNetEnv;
use swipt_core::rng::{Purpose, RngStream, StreamId};
use swipt_core::SystemConfig;

use crate::metrics::{episode_row, slot_row, GateStats, LearnerStats, MetricsRow, MetricsSink};
use crate::replay::{EpisodeBuilder, EpisodeSequence, ReplayBuffer};
use crate::HarnessError;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Rows and learner output of one training episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub episode: u64,
    pub slots: Vec<MetricsRow>,
    pub summary: MetricsRow,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: SystemConfig,
    pub agents: Vec<DwmAgent>,
    pub replay: Vec<ReplayBuffer>,
    /// Gate records gathered since the last gate update.
    pub pending_gate: Vec<Vec<GateRecord>>,
    pub next_episode: u64,
}

fn check_finite(what: &str, values: &[f64]) -> Result<(), HarnessError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HarnessError::Numerical(format!("non-finite {what} loss")))
    }
}

impl Trainer {
    pub fn new(config: &SystemConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let t = &config.training;
        let k = config.num_fues();
        Ok(Self {
            config: config.clone(),
            agents: (0..k).map(|i| DwmAgent::new(config, i)).collect(),
            replay: (0..k).map(|_| ReplayBuffer::new(t.replay_capacity, t.episode_len)).collect(),
            pending_gate: vec![Vec::new(); k],
            next_episode: 0,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    /// Changes the total episode count, e.g. to extend a resumed run.
    pub fn set_episodes(&mut self, episodes: usize) {
        self.config.training.episodes = episodes;
    }

    /// Closed in pure mode and during warm-up, sampled afterwards.
    pub fn gate_mode_for(&self, episode: u64) -> GateMode {
        let t = &self.config.training;
        if t.pure_dwm || episode < t.gate_warmup_episodes as u64 {
            GateMode::Closed
        } else {
            GateMode::Sample
        }
    }

    /// Collects one episode and runs the learner updates that follow it.
    pub fn run_episode(&mut self) -> Result<EpisodeOutput, HarnessError> {
        let e = self.next_episode;
        let seed = self.config.training.seed;
        let mut env = HetNetEnv::new(&self.config, seed);
        env.reset(e);
        for a in &mut self.agents {
            a.reset_belief();
        }
        let mut streams: Vec<AgentStreams> = (0..self.agents.len() as u64)
            .map(|a| AgentStreams {
                policy: RngStream::new(seed, StreamId::new(a, Purpose::Policy, e)),
                gate: RngStream::new(seed, StreamId::new(a, Purpose::Gate, e)),
            })
            .collect();
        let gate_mode = self.gate_mode_for(e);
        let exec = ExecConfig {
            act_mode: ActMode::Sample,
            gate_mode,
            refine_coefficient: self.config.training.refine_coefficient,
        };

        let mut builders: Vec<EpisodeBuilder> =
            env.observations().iter().map(|o| EpisodeBuilder::new(o.to_vec())).collect();
        let mut slots = Vec::with_capacity(self.config.training.episode_len);
        let mut episode_records = Vec::new();
        loop {
            let out = execute_slot(&mut self.agents, &mut env, &exec, &mut streams)?;
            for (k, b) in builders.iter_mut().enumerate() {
                let r = &out.report.agents[k];
                b.push(out.actions[k].0.clone(), r.reward, r.observation.to_vec());
            }
            slots.push(slot_row(e, &out, &self.config));
            for rec in &out.records {
                self.pending_gate[rec.agent].push(rec.clone());
            }
            episode_records.extend(out.records);
            if out.report.done() {
                break;
            }
        }
        for (buf, b) in self.replay.iter_mut().zip(builders) {
            buf.push(b.finish());
        }

        let learner = self.update_learners(e)?;
        let gate = self.maybe_update_gates(e, gate_mode)?;
        let summary = episode_row(e, &slots, &episode_records)
            .with_learner(Some(learner))
            .with_gate(gate);
        self.next_episode += 1;
        Ok(EpisodeOutput {
            episode: e,
            slots,
            summary,
        })
    }

    fn update_learners(&mut self, e: u64) -> Result<LearnerStats, HarnessError> {
        let config = &self.config;
        let results: Vec<Result<LearnerStats, HarnessError>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .agents
                .iter_mut()
                .zip(&self.replay)
                .map(|(agent, replay)| s.spawn(move || update_agent(agent, replay, config, e)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("learner thread panicked"))
                .collect()
        });
        let mut total = LearnerStats::default();
        let n = results.len() as f64;
        for r in results {
            let s = r?;
            total.wm_pred += s.wm_pred / n;
            total.wm_dyn += s.wm_dyn / n;
            total.wm_rep += s.wm_rep / n;
            total.wm_total += s.wm_total / n;
            total.actor_loss += s.actor_loss / n;
            total.critic_loss += s.critic_loss / n;
            total.imagined_reward += s.imagined_reward / n;
        }
        Ok(total)
    }

    fn maybe_update_gates(&mut self, e: u64, mode: GateMode) -> Result<Option<GateStats>, HarnessError> {
        let t = &self.config.training;
        if mode == GateMode::Closed || (e + 1) % t.gate_update_every as u64 != 0 {
            return Ok(None);
        }
        let cfg = gate_train_config(&self.config);
        let mut stats = GateStats::default();
        let n = self.agents.len() as f64;
        for (agent, records) in self.agents.iter_mut().zip(&mut self.pending_gate) {
            let s = agent.gate.train(records, &cfg)?;
            check_finite("gate", &[s.policy_loss, s.value_loss])?;
            stats.policy_loss += s.policy_loss / n;
            stats.value_loss += s.value_loss / n;
            records.clear();
        }
        Ok(Some(stats))
    }

    /// Runs episodes until the configured count, streaming metrics and
    /// saving a checkpoint every `checkpoint_every` episodes. A numerical
    /// failure returns early and leaves the last saved checkpoint intact.
    pub fn run(&mut self, opts: &TrainOptions, sink: &MetricsSink) -> Result<TrainReport, HarnessError> {
        let total = self.config.training.episodes as u64;
        let every = self.config.training.checkpoint_every.max(1) as u64;
        let ckpt = opts.out_dir.join(CHECKPOINT_FILE);
        let mut rewards = Vec::new();
        let started = self.next_episode;
        while self.next_episode < total {
            let out = self.run_episode()?;
            rewards.push(out.summary.mean_reward);
            if opts.slot_rows {
                for row in out.slots {
                    sink.send(row)?;
                }
            }
            sink.send(out.summary)?;
            if self.next_episode % every == 0 || self.next_episode == total {
                self.save(&ckpt)?;
            }
        }
        let tail = &rewards[rewards.len().saturating_sub(200)..];
        Ok(TrainReport {
            episodes_run: self.next_episode - started,
            next_episode: self.next_episode,
            final_mean_reward: if tail.is_empty() {
                0.0
            } else {
                tail.iter().sum::<f64>() / tail.len() as f64
            },
            pure_dwm: self.config.training.pure_dwm,
            config_hash: self.config.hash_hex(),
            checkpoint: ckpt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.config.hash());
        c.insert("meta.config", Block::bytes(self.config.to_toml_string().into_bytes()));
        c.insert("meta.next_episode", Block::u64s(vec![self.next_episode]));
        c.insert("meta.num_agents", Block::u64s(vec![self.agents.len() as u64]));
        for (k, agent) in self.agents.iter().enumerate() {
            let p = format!("agent{k}.");
            let a = format!("agent{k}");
            c.insert_params(&a, &agent.wm.params);
            c.insert_params(&a, &agent.ac.actor.params);
            c.insert_params(&a, &agent.ac.critic.params);
            c.insert_params(&a, &agent.gate.params);
            insert_adam(&mut c, &format!("{p}opt.wm."), &agent.wm.params, &agent.wm_opt);
            insert_adam(&mut c, &format!("{p}opt.actor."), &agent.ac.actor.params, &agent.ac.actor_opt);
            insert_adam(&mut c, &format!("{p}opt.critic."), &agent.ac.critic.params, &agent.ac.critic_opt);
            insert_adam(&mut c, &format!("{p}opt.gate."), &agent.gate.params, &agent.gate.opt);
            insert_replay(&mut c, &format!("{p}replay."), &self.replay[k]);
            c.insert(format!("{p}gate_records"), Block::matrix(&records_matrix(&self.pending_gate[k])));
        }
        c
    }

    /// Restores a trainer, including optimizer state, replay contents and
    /// pending gate records.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, HarnessError> {
        let config = checkpoint_config(ckpt)?;
        let mut t = Self::new(&config)?;
        let next = ckpt.get("meta.next_episode")?.as_u64()?;
        t.next_episode = next.first().copied().unwrap_or(0);
        let n = ckpt.get("meta.num_agents")?.as_u64()?.first().copied().unwrap_or(0) as usize;
        if n != t.agents.len() {
            return Err(HarnessError::Checkpoint(format!(
                "checkpoint has {n} agents, config has {}",
                t.agents.len()
            )));
        }
        for k in 0..n {
            let p = format!("agent{k}.");
            let a = format!("agent{k}");
            let agent = &mut t.agents[k];
            ckpt.load_params(&a, &mut agent.wm.params)?;
            ckpt.load_params(&a, &mut agent.ac.actor.params)?;
            ckpt.load_params(&a, &mut agent.ac.critic.params)?;
            ckpt.load_params(&a, &mut agent.gate.params)?;
            load_adam(ckpt, &format!("{p}opt.wm."), &agent.wm.params, &mut agent.wm_opt)?;
            load_adam(ckpt, &format!("{p}opt.actor."), &agent.ac.actor.params, &mut agent.ac.actor_opt)?;
            load_adam(ckpt, &format!("{p}opt.critic."), &agent.ac.critic.params, &mut agent.ac.critic_opt)?;
            load_adam(ckpt, &format!("{p}opt.gate."), &agent.gate.params, &mut agent.gate.opt)?;
            t.replay[k] = load_replay(ckpt, &format!("{p}replay."), &config)?;
            t.pending_gate[k] = records_from_matrix(k, &ckpt.get(&format!("{p}gate_records"))?.to_matrix()?);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// One world-model step and one actor-critic step per configured update.
fn update_agent(
    agent: &mut DwmAgent,
    replay: &ReplayBuffer,
    config: &SystemConfig,
    e: u64,
) -> Result<LearnerStats, HarnessError> {
    let t = &config.training;
    let k = agent.index as u64;
    let mut replay_rng = RngStream::new(t.seed, StreamId::new(k, Purpose::Replay, e));
    let mut img_rng = RngStream::new(t.seed, StreamId::new(k, Purpose::Imagination, e));
    let wm_cfg = wm_loss_config(config);
    let ac_cfg = ac_config(config);
    let mut stats = LearnerStats::default();

    let mut starts = None;
    for _ in 0..t.wm_updates_per_episode {
        let batch = replay.sample(t.batch_size, &mut replay_rng);
        let out = agent
            .wm
            .train_step(&mut agent.wm_opt, &batch, &wm_cfg, t.max_grad_norm, &mut img_rng)?;
        let l = out.loss;
        check_finite("world-model", &[l.pred, l.dyn_, l.rep, l.total])?;
        stats.wm_pred = l.pred;
        stats.wm_dyn = l.dyn_;
        stats.wm_rep = l.rep;
        stats.wm_total = l.total;
        starts = Some(out.starts);
    }
    let Some((d, z)) = starts else {
        return Ok(stats);
    };
    let (d, z) = subsample_starts(d, z, t.imagination_starts, &mut img_rng);
    for _ in 0..t.ac_updates_per_episode {
        let out = agent.ac.train_step(&agent.wm, (&d, &z), &ac_cfg, &mut img_rng)?;
        check_finite("actor-critic", &[out.actor_loss, out.critic_loss])?;
        stats.actor_loss = out.actor_loss;
        stats.critic_loss = out.critic_loss;
        stats.imagined_reward = out.mean_imagined_reward;
    }
    Ok(stats)
}

/// Keeps `n` rows chosen without replacement; `0` keeps all of them.
fn subsample_starts(d: Array2<f64>, z: Array2<f64>, n: usize, rng: &mut RngStream) -> (Array2<f64>, Array2<f64>) {
    if n == 0 || n >= d.nrows() {
        return (d, z);
    }
    let mut idx = sample(rng, d.nrows(), n).into_vec();
    idx.sort_unstable();
    (d.select(Axis(0), &idx), z.select(Axis(0), &idx))
}

/// Reads the embedded config and checks it against the header hash.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<SystemConfig, HarnessError> {
    let bytes = ckpt.get("meta.config")?.as_bytes()?;
    let text = std::str::from_utf8(bytes).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
    let config = SystemConfig::from_toml_str_with_env(text, &Default::default())?;
    if config.hash() != ckpt.config_hash {
        return Err(HarnessError::Checkpoint("embedded config does not match the header hash".into()));
    }
    Ok(config)
}

fn insert_adam(c: &mut Checkpoint, prefix: &str, store: &ParamStore, opt: &Adam) {
    for id in store.ids() {
        let name = store.name(id);
        c.insert(format!("{prefix}m.{name}"), Block::matrix(&opt.m[id.index()]));
        c.insert(format!("{prefix}v.{name}"), Block::matrix(&opt.v[id.index()]));
    }
    c.insert(format!("{prefix}t"), Block::u64s(vec![opt.t]));
    c.insert(format!("{prefix}lr"), Block::vector(vec![opt.lr]));
}

fn load_adam(c: &Checkpoint, prefix: &str, store: &ParamStore, opt: &mut Adam) -> Result<(), HarnessError> {
    for id in store.ids() {
        let name = store.name(id);
        let m = c.get(&format!("{prefix}m.{name}"))?.to_matrix()?;
        let v = c.get(&format!("{prefix}v.{name}"))?.to_matrix()?;
        if m.dim() != store.get(id).dim() || v.dim() != store.get(id).dim() {
            return Err(HarnessError::Checkpoint(format!("optimizer state shape mismatch for {name}")));
        }
        opt.m[id.index()] = m;
        opt.v[id.index()] = v;
    }
    opt.t = c.get(&format!("{prefix}t"))?.as_u64()?.first().copied().unwrap_or(0);
    opt.lr = c.get(&format!("{prefix}lr"))?.as_f64()?.first().copied().unwrap_or(opt.lr);
    Ok(())
}

fn insert_replay(c: &mut Checkpoint, prefix: &str, replay: &ReplayBuffer) {
    let eps: Vec<&EpisodeSequence> = replay.episodes().collect();
    c.insert(format!("{prefix}count"), Block::u64s(vec![eps.len() as u64]));
    if eps.is_empty() {
        return;
    }
    let obs: Vec<_> = eps.iter().map(|e| e.obs.view()).collect();
    let act: Vec<_> = eps.iter().map(|e| e.actions.view()).collect();
    let rew: Vec<f64> = eps.iter().flat_map(|e| e.rewards.iter().copied()).collect();
    c.insert(format!("{prefix}obs"), Block::matrix(&ndarray::concatenate(Axis(0), &obs).expect("obs")));
    c.insert(format!("{prefix}actions"), Block::matrix(&ndarray::concatenate(Axis(0), &act).expect("actions")));
    c.insert(format!("{prefix}rewards"), Block::vector(rew));
}

fn load_replay(c: &Checkpoint, prefix: &str, config: &SystemConfig) -> Result<ReplayBuffer, HarnessError> {
    let t = config.training.episode_len;
    let mut buf = ReplayBuffer::new(config.training.replay_capacity, t);
    let n = c.get(&format!("{prefix}count"))?.as_u64()?.first().copied().unwrap_or(0) as usize;
    if n == 0 {
        return Ok(buf);
    }
    let obs = c.get(&format!("{prefix}obs"))?.to_matrix()?;
    let act = c.get(&format!("{prefix}actions"))?.to_matrix()?;
    let rew = c.get(&format!("{prefix}rewards"))?.as_f64()?;
    if obs.nrows() != n * (t + 1) || act.nrows() != n * t || rew.len() != n * t {
        return Err(HarnessError::Checkpoint("replay block sizes are inconsistent".into()));
    }
    for i in 0..n {
        let ok = buf.push(EpisodeSequence {
            obs: obs.slice(ndarray::s![i * (t + 1)..(i + 1) * (t + 1), ..]).to_owned(),
            actions: act.slice(ndarray::s![i * t..(i + 1) * t, ..]).to_owned(),
            rewards: rew[i * t..(i + 1) * t].to_vec(),
        });
        if !ok {
            return Err(HarnessError::Checkpoint("replay episode has the wrong length".into()));
        }
    }
    Ok(buf)
}

const RECORD_COLS: usize = 8;

fn opt_to_f64(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn f64_to_opt(v: f64) -> Option<f64> {
    if v.is_nan() {
        None
    } else {
        Some(v)
    }
}

fn records_matrix(records: &[GateRecord]) -> Array2<f64> {
    let mut m = Array2::zeros((records.len(), RECORD_COLS));
    for (i, r) in records.iter().enumerate() {
        let row = [
            r.input.interference_feat,
            r.input.recon_feat,
            if r.offload { 1.0 } else { 0.0 },
            opt_to_f64(r.realized_reward),
            opt_to_f64(r.counterfactual),
            opt_to_f64(r.improvement),
            r.log_prob,
            r.value_est,
        ];
        for (j, v) in row.into_iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

fn records_from_matrix(agent: usize, m: &Array2<f64>) -> Vec<GateRecord> {
    m.rows()
        .into_iter()
        .filter(|r| r.len() == RECORD_COLS)
        .map(|r| GateRecord {
            agent,
            input: GateInput {
                interference_feat: r[0],
                recon_feat: r[1],
            },
            offload: r[2] != 0.0,
            realized_reward: f64_to_opt(r[3]),
            counterfactual: f64_to_opt(r[4]),
            improvement: f64_to_opt(r[5]),
            log_prob: r[6],
            value_est: r[7],
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// Also emit one row per slot, not just per episode.
    pub slot_rows: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub episodes_run: u64,
    pub next_episode: u64,
    /// Mean per-agent reward over the last 200 episodes of this run.
    pub final_mean_reward: f64,
    pub pure_dwm: bool,
    pub config_hash: String,
    pub checkpoint: PathBuf,
}
