//! Offloading gate, edge-side latent decorrelation and the three-phase
//! slot execution protocol.

use diffnn::layers::Mlp;
use diffnn::params::{clip_global_norm, Adam, Bound, ParamStore};
use diffnn::{DiffError, Tape, Var};
use ndarray::{Array2, Axis};
use rand::Rng;
use swipt_core::env::{log_feature, EnvError, HetNetEnv, RawAction, SlotReport};
use swipt_core::rng::RngStream;
use thiserror::Error;

use crate::agent::ActMode;
use crate::team::DwmAgent;
use crate::worldmodel::LatentState;

/// Affine standardization of log10 reconstruction error.
pub const RECON_LOG_CENTER: f64 = 0.0;
pub const RECON_LOG_SCALE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("gate record for agent {agent} lacks {what}")]
    MissingBranch { agent: usize, what: &'static str },
    #[error("latent dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Uncertainty indicators fed to the gate, already standardized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateInput {
    pub interference_feat: f64,
    pub recon_feat: f64,
}

impl GateInput {
    pub fn new(interference_feat: f64, recon_error: f64) -> Self {
        Self {
            interference_feat,
            recon_feat: log_feature(recon_error, RECON_LOG_CENTER, RECON_LOG_SCALE),
        }
    }

    pub fn row(&self) -> [f64; 2] {
        [self.interference_feat, self.recon_feat]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    /// Never offload and never evaluate the gate.
    Closed,
    /// Offload iff the offload probability exceeds 0.5.
    Threshold,
    /// Bernoulli draw from the offload probability.
    Sample,
    /// Always offload.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub offload: bool,
    pub prob: f64,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub agent: usize,
    pub input: GateInput,
    pub offload: bool,
    /// Environment reward of the executed action, filled after the step.
    pub realized_reward: Option<f64>,
    /// Predicted reward of the local action; present iff offloaded.
    pub counterfactual: Option<f64>,
    /// `realized - counterfactual`; logged only.
    pub improvement: Option<f64>,
    pub log_prob: f64,
    pub value_est: f64,
}

/// `r_local` when kept local, `r_dec - c` when offloaded.
pub fn gate_reward(record: &GateRecord, cost: f64) -> Result<f64, CoordError> {
    let r = record.realized_reward.ok_or(CoordError::MissingBranch {
        agent: record.agent,
        what: "realized reward",
    })?;
    if record.offload {
        Ok(r - cost)
    } else {
        Ok(r)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateTrainConfig {
    pub epochs: usize,
    pub clip: f64,
    pub cost: f64,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GateTrainStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_advantage: f64,
}

/// Binary offload policy with a separate value head.
#[derive(Debug, Clone)]
pub struct GatePolicy {
    pub params: ParamStore,
    actor: Mlp,
    critic: Mlp,
    pub opt: Adam,
}

impl GatePolicy {
    pub fn new(hidden: usize, lr: f64, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let actor = Mlp::new(&mut params, "gate.actor", &[2, hidden, hidden, 1], rng);
        let critic = Mlp::new(&mut params, "gate.critic", &[2, hidden, hidden, 1], rng);
        let opt = Adam::new(&params, lr);
        Self {
            params,
            actor,
            critic,
            opt,
        }
    }

    /// Offload logit and value estimate for each input row.
    pub fn evaluate(&self, inputs: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let l = self.actor.forward(&mut tape, &p, x);
        let v = self.critic.forward(&mut tape, &p, x);
        (tape.value(l).clone(), tape.value(v).clone())
    }

    pub fn decide(&self, u: &GateInput, mode: GateMode, rng: &mut impl Rng) -> GateDecision {
        let x = Array2::from_shape_vec((1, 2), u.row().to_vec()).expect("1x2");
        let (l, v) = self.evaluate(&x);
        decision_from_logit(l[[0, 0]], v[[0, 0]], mode, rng)
    }

    /// Clipped surrogate plus half the value MSE. Returns the policy loss,
    /// the value loss and their combination.
    pub fn loss(&self, tape: &mut Tape, p: &Bound, batch: &GateBatch, clip: f64) -> (Var, Var, Var) {
        let xv = tape.constant(batch.inputs.clone());
        let logit = self.actor.forward(tape, p, xv);
        // log p(D=1) = -softplus(-l), log p(D=0) = -softplus(l)
        let nl = tape.neg(logit);
        let sp_neg = tape.softplus(nl);
        let sp_pos = tape.softplus(logit);
        let dv = tape.constant(batch.offload.clone());
        let ndv = tape.constant(batch.offload.mapv(|v| 1.0 - v));
        let a1 = tape.mul(sp_neg, dv);
        let a0 = tape.mul(sp_pos, ndv);
        let nlp = tape.add(a1, a0);
        let lp = tape.neg(nlp);
        let old = tape.constant(batch.old_log_prob.clone());
        let diff = tape.sub(lp, old);
        let ratio = tape.exp(diff);
        let av = tape.constant(batch.advantage.clone());
        let s1 = tape.mul(ratio, av);
        let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
        let s2 = tape.mul(clipped, av);
        let surr = tape.min(s1, s2);
        let surr = tape.mean_all(surr);
        let pol = tape.neg(surr);

        let v = self.critic.forward(tape, p, xv);
        let rv = tape.constant(batch.returns.clone());
        let e = tape.sub(v, rv);
        let e = tape.square(e);
        let vl = tape.mean_all(e);
        let half_vl = tape.scale(vl, 0.5);
        let loss = tape.add(pol, half_vl);
        (pol, vl, loss)
    }

    /// Clipped-surrogate update over `records`, each reused for `epochs`
    /// full-batch passes.
    pub fn train(&mut self, records: &[GateRecord], cfg: &GateTrainConfig) -> Result<GateTrainStats, CoordError> {
        if records.is_empty() {
            return Ok(GateTrainStats::default());
        }
        let batch = GateBatch::from_records(records, cfg.cost)?;
        let mut stats = GateTrainStats {
            mean_advantage: batch.advantage.mean().unwrap_or(0.0),
            ..Default::default()
        };
        for _ in 0..cfg.epochs {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, true);
            let (pol, vl, loss) = self.loss(&mut tape, &p, &batch, cfg.clip);
            let grads = tape.backward(loss)?;
            let mut g = self.params.collect_grads(&p, &grads);
            clip_global_norm(&mut g, cfg.max_grad_norm);
            self.opt.step(&mut self.params, &g);
            stats.policy_loss = tape.scalar_value(pol);
            stats.value_loss = tape.scalar_value(vl);
        }
        Ok(stats)
    }
}

/// Column-stacked gate records, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBatch {
    pub inputs: Array2<f64>,
    /// 1 for offload, 0 for local.
    pub offload: Array2<f64>,
    pub old_log_prob: Array2<f64>,
    pub returns: Array2<f64>,
    pub advantage: Array2<f64>,
}

impl GateBatch {
    pub fn from_records(records: &[GateRecord], cost: f64) -> Result<Self, CoordError> {
        let n = records.len();
        let mut b = Self {
            inputs: Array2::zeros((n, 2)),
            offload: Array2::zeros((n, 1)),
            old_log_prob: Array2::zeros((n, 1)),
            returns: Array2::zeros((n, 1)),
            advantage: Array2::zeros((n, 1)),
        };
        for (i, r) in records.iter().enumerate() {
            let row = r.input.row();
            b.inputs[[i, 0]] = row[0];
            b.inputs[[i, 1]] = row[1];
            b.offload[[i, 0]] = if r.offload { 1.0 } else { 0.0 };
            b.old_log_prob[[i, 0]] = r.log_prob;
            let g = gate_reward(r, cost)?;
            b.returns[[i, 0]] = g;
            b.advantage[[i, 0]] = g - r.value_est;
        }
        Ok(b)
    }
}

/// Turns a logit into a decision; ties at probability 0.5 stay local.
pub fn decision_from_logit(logit: f64, value: f64, mode: GateMode, rng: &mut impl Rng) -> GateDecision {
    let prob = 1.0 / (1.0 + (-logit).exp());
    let offload = match mode {
        GateMode::Closed => false,
        GateMode::Open => true,
        GateMode::Threshold => logit > 0.0,
        GateMode::Sample => rng.gen::<f64>() < prob,
    };
    let log_prob = if offload { log_sigmoid(logit) } else { log_sigmoid(-logit) };
    GateDecision {
        offload,
        prob,
        log_prob,
        value,
    }
}

/// Removes the shared component from offloaded latents (one row each).
///
/// With at least two rows each row becomes `z - coef * mean`. For
/// `coef == 1` the last row is set to minus the ordered sum of the others,
/// so the rows sum to exactly zero in floating point. A single row is
/// returned unchanged.
pub fn decorrelate(latents: &Array2<f64>, coef: f64) -> Array2<f64> {
    let n = latents.nrows();
    if n < 2 {
        return latents.clone();
    }
    let mean = latents.mean_axis(Axis(0)).expect("nonempty");
    let mut out = latents.clone();
    for mut row in out.rows_mut() {
        row.zip_mut_with(&mean, |x, &m| *x -= coef * m);
    }
    if coef == 1.0 {
        let cols = out.ncols();
        for j in 0..cols {
            let mut s = 0.0;
            for i in 0..n - 1 {
                s += out[[i, j]];
            }
            out[[n - 1, j]] = -s;
        }
    }
    out
}

/// Latents sent to the edge in one slot and what came back.
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadBatch {
    pub agent_ids: Vec<usize>,
    pub latents: Array2<f64>,
    pub refined: Array2<f64>,
}

/// Predicted reward of the locally chosen action at the original latent:
/// the reward head one transition ahead, at the prior mean.
pub fn counterfactual_local(agent: &DwmAgent, latent: &LatentState, local_action: &Array2<f64>) -> f64 {
    agent.wm.one_step_reward(&latent.d, &latent.z, local_action)[[0, 0]]
}

/// Per-agent random streams used during execution.
#[derive(Debug)]
pub struct AgentStreams {
    pub policy: RngStream,
    pub gate: RngStream,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecConfig {
    pub act_mode: ActMode,
    pub gate_mode: GateMode,
    pub refine_coefficient: f64,
}

#[derive(Debug, Clone)]
pub struct SlotExecution {
    pub report: SlotReport,
    pub actions: Vec<RawAction>,
    pub records: Vec<GateRecord>,
    pub batch: Option<OffloadBatch>,
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row")
}

fn belief_update(agent: &DwmAgent, obs: &[f64], mode: ActMode, rng: &mut RngStream) -> Result<LatentState, CoordError> {
    let noise = match mode {
        ActMode::Sample => Some(crate::worldmodel::standard_normal(1, agent.wm.dims.stoch, rng)),
        ActMode::Mean => None,
    };
    Ok(agent.wm.observe(&agent.belief.latent, &agent.belief.prev_action, &row(obs), noise)?)
}

/// Decentralized execution with no gate and no edge: every agent updates
/// its belief and acts on its own latent.
pub fn execute_local(
    agents: &mut [DwmAgent],
    env: &mut HetNetEnv,
    mode: ActMode,
    streams: &mut [AgentStreams],
) -> Result<(SlotReport, Vec<RawAction>), CoordError> {
    let obs: Vec<Vec<f64>> = env.observations().iter().map(|o| o.to_vec()).collect();
    let mut actions = Vec::with_capacity(agents.len());
    let mut latents = Vec::with_capacity(agents.len());
    for (k, agent) in agents.iter().enumerate() {
        let lat = belief_update(agent, &obs[k], mode, &mut streams[k].policy)?;
        let a = agent.ac.actor.act(&lat.d, &lat.z, mode, &mut streams[k].policy)?;
        actions.push(a);
        latents.push(lat);
    }
    let raw: Vec<RawAction> = actions.iter().map(|a| RawAction(a.iter().copied().collect())).collect();
    let report = env.step(&raw)?;
    for ((agent, lat), a) in agents.iter_mut().zip(latents).zip(actions) {
        agent.belief.latent = lat;
        agent.belief.prev_action = a;
    }
    Ok((report, raw))
}

/// One slot of gate-assisted execution:
/// 1. each agent updates its belief and decides whether to offload;
/// 2. the edge decorrelates the offloaded latents;
/// 3. each agent acts on its refined or local latent, then the
///    environment advances.
pub fn execute_slot(
    agents: &mut [DwmAgent],
    env: &mut HetNetEnv,
    cfg: &ExecConfig,
    streams: &mut [AgentStreams],
) -> Result<SlotExecution, CoordError> {
    let k_agents = agents.len();
    let observations = env.observations().to_vec();

    // Phase 1
    let mut latents = Vec::with_capacity(k_agents);
    let mut records = Vec::new();
    let mut offload = vec![false; k_agents];
    for (k, agent) in agents.iter().enumerate() {
        let o = observations[k].to_vec();
        let lat = belief_update(agent, &o, cfg.act_mode, &mut streams[k].policy)?;
        if cfg.gate_mode != GateMode::Closed {
            let recon = agent.wm.reconstruction_error(&row(&o), &lat.d, &lat.z);
            let u = GateInput::new(observations[k].interference_feat, recon);
            let dec = agent.gate.decide(&u, cfg.gate_mode, &mut streams[k].gate);
            offload[k] = dec.offload;
            records.push(GateRecord {
                agent: k,
                input: u,
                offload: dec.offload,
                realized_reward: None,
                counterfactual: None,
                improvement: None,
                log_prob: dec.log_prob,
                value_est: dec.value,
            });
        }
        latents.push(lat);
    }

    // Phase 2
    let ids: Vec<usize> = (0..k_agents).filter(|&k| offload[k]).collect();
    let batch = if ids.is_empty() {
        None
    } else {
        let stoch = latents[0].z.ncols();
        let mut z = Array2::zeros((ids.len(), stoch));
        for (i, &k) in ids.iter().enumerate() {
            if latents[k].z.ncols() != stoch {
                return Err(CoordError::Dimension(format!("agent {k} has {} stochastic dims", latents[k].z.ncols())));
            }
            z.row_mut(i).assign(&latents[k].z.row(0));
        }
        let refined = decorrelate(&z, cfg.refine_coefficient);
        Some(OffloadBatch {
            agent_ids: ids.clone(),
            latents: z,
            refined,
        })
    };

    // Phase 3
    let mut actions = Vec::with_capacity(k_agents);
    for (k, agent) in agents.iter().enumerate() {
        let lat = &latents[k];
        let z_in = match &batch {
            Some(b) if offload[k] => {
                let i = b.agent_ids.iter().position(|&x| x == k).expect("offloaded agent in batch");
                b.refined.row(i).insert_axis(Axis(0)).to_owned()
            }
            _ => lat.z.clone(),
        };
        actions.push(agent.ac.actor.act(&lat.d, &z_in, cfg.act_mode, &mut streams[k].policy)?);
    }
    let raw: Vec<RawAction> = actions.iter().map(|a| RawAction(a.iter().copied().collect())).collect();
    let report = env.step(&raw)?;

    for rec in records.iter_mut() {
        let k = rec.agent;
        let r = report.agents[k].reward;
        rec.realized_reward = Some(r);
        if rec.offload {
            let lat = &latents[k];
            let local = agents[k].ac.actor.act(&lat.d, &lat.z, ActMode::Mean, &mut streams[k].gate)?;
            let cf = counterfactual_local(&agents[k], lat, &local);
            rec.counterfactual = Some(cf);
            rec.improvement = Some(r - cf);
        }
    }
    for ((agent, lat), a) in agents.iter_mut().zip(latents).zip(actions) {
        agent.belief.latent = lat;
        agent.belief.prev_action = a;
    }
    Ok(SlotExecution {
        report,
        actions: raw,
        records,
        batch,
    })
}
