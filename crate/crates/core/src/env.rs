//! Multi-agent episodic environment.
//!
//! Each FBS-FUE pair is one agent. An episode lasts `episode_len` slots; in
//! every slot all agents submit a raw action, the joint action is evaluated
//! on the current channels, and the channels then advance one Gauss-Markov
//! step before the next observations are formed.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelModel, NetworkState};
use crate::params::SystemConfig;
use crate::phy::{evaluate_slot, JointAction, SlotOutcome};

/// Floor applied before taking log10 of a power feature, mW.
pub const LOG_FLOOR_MW: f64 = 1e-12;
/// Affine standardization of log10 interference (mW): `(x - center) / scale`.
pub const INTERFERENCE_LOG_CENTER: f64 = -3.5;
pub const INTERFERENCE_LOG_SCALE: f64 = 1.0;
/// Affine standardization of log10 harvested power (mW).
pub const ENERGY_LOG_CENTER: f64 = -1.0;
pub const ENERGY_LOG_SCALE: f64 = 1.5;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action for agent {agent} has length {got}, expected {expected}")]
    ActionLength {
        agent: usize,
        expected: usize,
        got: usize,
    },
    #[error("action for agent {agent} is not finite")]
    NonFinite { agent: usize },
    #[error("episode already finished; call reset")]
    Finished,
    #[error("trace write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace encode failed: {0}")]
    Encode(#[from] serde_json::Error),
}

pub fn log_feature(x_mw: f64, center: f64, scale: f64) -> f64 {
    (x_mw.max(LOG_FLOOR_MW).log10() - center) / scale
}

/// Locally measurable quantities of one FUE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    /// Real parts then imaginary parts of the small-scale FBS->FUE channel.
    pub channel_feat: Vec<f64>,
    /// Standardized log10 of the last measured I_co + I_sat.
    pub interference_feat: f64,
    /// Last measured I_co + I_sat in mW.
    pub interference_mw: f64,
    /// Standardized log10 of the previous slot's harvested power.
    pub energy_feat: f64,
    pub prev_rate: f64,
    /// FUE-QoS, FUE-EH, attributed SUE-QoS violations of the previous slot.
    pub flags: [bool; 3],
}

impl AgentObservation {
    pub fn dim(fbs_antennas: usize) -> usize {
        2 * fbs_antennas + 6
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.channel_feat.len() + 6);
        v.extend_from_slice(&self.channel_feat);
        v.push(self.interference_feat);
        v.push(self.energy_feat);
        v.push(self.prev_rate);
        v.extend(self.flags.iter().map(|&f| if f { 1.0 } else { 0.0 }));
        v
    }

    /// Complex channel reconstructed from the feature block.
    pub fn channel(&self) -> Vec<Complex64> {
        let n = self.channel_feat.len() / 2;
        (0..n)
            .map(|i| Complex64::new(self.channel_feat[i], self.channel_feat[n + i]))
            .collect()
    }
}

/// Unprocessed policy output: beam real parts, beam imaginary parts, PS logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction(pub Vec<f64>);

impl RawAction {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }
}

/// Per-agent result of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub reward: f64,
    pub observation: AgentObservation,
    pub flags: [bool; 3],
    pub done: bool,
}

/// Everything produced by one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    /// Index of the slot that was evaluated, starting at 0.
    pub slot: usize,
    pub agents: Vec<StepResult>,
    pub outcome: SlotOutcome,
    pub action: JointAction,
    /// Any of the SUE-QoS, FUE-QoS or FUE-EH constraints failed for any user.
    pub violation_any: bool,
}

impl SlotReport {
    pub fn done(&self) -> bool {
        self.agents.first().map_or(true, |a| a.done)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a raw action to a beamformer with `||w||^2 = P_max` and a PS ratio
/// in `[0, 1]`. An all-zero beam part yields a silent (zero) beamformer.
pub fn postprocess_action(raw: &RawAction, config: &SystemConfig) -> (Vec<Complex64>, f64) {
    let nf = config.fbs_antennas();
    let a = &raw.0;
    let beam = &a[..2 * nf];
    let norm = beam.iter().map(|x| x * x).sum::<f64>().sqrt();
    let w = if norm == 0.0 {
        vec![Complex64::new(0.0, 0.0); nf]
    } else {
        let s = config.p_max_mw().sqrt() / norm;
        (0..nf)
            .map(|i| Complex64::new(beam[i] * s, beam[nf + i] * s))
            .collect()
    };
    (w, sigmoid(a[2 * nf]))
}

/// Inverse of [`postprocess_action`] for a beam that already meets the
/// power budget: `[Re w, Im w, logit(alpha)]`.
pub fn raw_from_physical(w: &[Complex64], alpha: f64) -> RawAction {
    let mut v: Vec<f64> = w.iter().map(|x| x.re).collect();
    v.extend(w.iter().map(|x| x.im));
    let a = alpha.clamp(1e-12, 1.0 - 1e-12);
    v.push((a / (1.0 - a)).ln());
    RawAction(v)
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Scalar reward of agent k: weighted rate minus constraint penalties.
pub fn compute_reward(outcome: &SlotOutcome, k: usize, config: &SystemConfig) -> f64 {
    let r = &config.reward;
    let q = &config.qos;
    let rate = outcome.fue_rates[k];
    let sue_penalty: f64 = (0..outcome.sue_rates.len())
        .map(|m| relu(q.xi_sue - outcome.sue_rates[m]) * outcome.attribution_weight(k, m))
        .sum();
    let penalty = r.lambda1 * relu(q.xi_fue - rate)
        + r.lambda2 * relu(q.phi_fue_mw - outcome.harvested[k])
        + r.lambda3 * sue_penalty;
    r.omega * rate - penalty
}

/// `[R_k < xi_FUE, E_k < Phi_FUE, exists m: R_m < xi_SUE and I_{k,m} > 0]`.
pub fn violation_flags(outcome: &SlotOutcome, k: usize, config: &SystemConfig) -> [bool; 3] {
    let q = &config.qos;
    [
        outcome.fue_rates[k] < q.xi_fue,
        outcome.harvested[k] < q.phi_fue_mw,
        (0..outcome.sue_rates.len())
            .any(|m| outcome.sue_rates[m] < q.xi_sue && outcome.attribution[k][m] > 0.0),
    ]
}

/// True if any SUE-QoS, FUE-QoS or FUE-EH constraint fails for any user.
pub fn any_violation(outcome: &SlotOutcome, config: &SystemConfig) -> bool {
    let q = &config.qos;
    outcome.sue_rates.iter().any(|&r| r < q.xi_sue)
        || outcome.fue_rates.iter().any(|&r| r < q.xi_fue)
        || outcome.harvested.iter().any(|&e| e < q.phi_fue_mw)
}

/// The HetNet episodic environment.
#[derive(Debug)]
pub struct HetNetEnv {
    config: SystemConfig,
    seed: u64,
    channel: ChannelModel,
    slot: usize,
    observations: Vec<AgentObservation>,
    steps_taken: u64,
}

impl HetNetEnv {
    /// Creates the environment positioned at the start of episode 0.
    pub fn new(config: &SystemConfig, seed: u64) -> Self {
        let channel = ChannelModel::new(config, seed, 0);
        let mut env = Self {
            config: config.clone(),
            seed,
            channel,
            slot: 0,
            observations: Vec::new(),
            steps_taken: 0,
        };
        env.observations = env.initial_observations();
        env
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn num_agents(&self) -> usize {
        self.config.num_fues()
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    /// Total number of `step` calls over the environment's lifetime.
    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn channel_mut(&mut self) -> &mut ChannelModel {
        &mut self.channel
    }

    pub fn network_state(&self) -> NetworkState {
        self.channel.network_state()
    }

    pub fn observations(&self) -> &[AgentObservation] {
        &self.observations
    }

    /// Starts `episode`: fresh geometry and fading drawn from its streams.
    pub fn reset(&mut self, episode: u64) -> Vec<AgentObservation> {
        self.channel = ChannelModel::new(&self.config, self.seed, episode);
        self.slot = 0;
        self.observations = self.initial_observations();
        self.observations.clone()
    }

    fn initial_observations(&self) -> Vec<AgentObservation> {
        let net = self.channel.network_state();
        // before any FBS transmission only the satellite interferes
        let silent = JointAction::zeros(self.config.num_fues(), self.config.fbs_antennas());
        let outcome = evaluate_slot(&net, &silent, &self.config);
        (0..self.config.num_fues())
            .map(|k| {
                let i = outcome.fue_interference_total(k);
                AgentObservation {
                    channel_feat: channel_features(&net.fue_fading[k]),
                    interference_feat: log_feature(i, INTERFERENCE_LOG_CENTER, INTERFERENCE_LOG_SCALE),
                    interference_mw: i,
                    energy_feat: 0.0,
                    prev_rate: 0.0,
                    flags: [false; 3],
                }
            })
            .collect()
    }

    /// Post-processes raw actions and advances one slot.
    pub fn step(&mut self, actions: &[RawAction]) -> Result<SlotReport, EnvError> {
        let k = self.config.num_fues();
        if actions.len() != k {
            return Err(EnvError::ActionCount {
                expected: k,
                got: actions.len(),
            });
        }
        let dim = self.config.action_dim();
        let mut joint = JointAction {
            beamformers: Vec::with_capacity(k),
            ps_ratios: Vec::with_capacity(k),
        };
        for (agent, a) in actions.iter().enumerate() {
            if a.0.len() != dim {
                return Err(EnvError::ActionLength {
                    agent,
                    expected: dim,
                    got: a.0.len(),
                });
            }
            if a.0.iter().any(|x| !x.is_finite()) {
                return Err(EnvError::NonFinite { agent });
            }
            let (w, alpha) = postprocess_action(a, &self.config);
            joint.beamformers.push(w);
            joint.ps_ratios.push(alpha);
        }
        self.step_physical(joint)
    }

    /// Advances one slot with already-physical controls.
    pub fn step_physical(&mut self, joint: JointAction) -> Result<SlotReport, EnvError> {
        if self.slot >= self.config.training.episode_len {
            return Err(EnvError::Finished);
        }
        let net = self.channel.network_state();
        let outcome = evaluate_slot(&net, &joint, &self.config);
        let violation_any = any_violation(&outcome, &self.config);
        let slot = self.slot;
        self.slot += 1;
        self.steps_taken += 1;
        let done = self.slot >= self.config.training.episode_len;

        self.channel.advance();
        let next = self.channel.network_state();

        let agents: Vec<StepResult> = (0..self.config.num_fues())
            .map(|k| {
                let flags = violation_flags(&outcome, k, &self.config);
                let i = outcome.fue_interference_total(k);
                let observation = AgentObservation {
                    channel_feat: channel_features(&next.fue_fading[k]),
                    interference_feat: log_feature(i, INTERFERENCE_LOG_CENTER, INTERFERENCE_LOG_SCALE),
                    interference_mw: i,
                    energy_feat: log_feature(outcome.harvested[k], ENERGY_LOG_CENTER, ENERGY_LOG_SCALE),
                    prev_rate: outcome.fue_rates[k],
                    flags,
                };
                StepResult {
                    reward: compute_reward(&outcome, k, &self.config),
                    observation,
                    flags,
                    done,
                }
            })
            .collect();
        self.observations = agents.iter().map(|a| a.observation.clone()).collect();
        Ok(SlotReport {
            slot,
            agents,
            outcome,
            action: joint,
            violation_any,
        })
    }
}

fn channel_features(g: &[Complex64]) -> Vec<f64> {
    g.iter().map(|x| x.re).chain(g.iter().map(|x| x.im)).collect()
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTraceRecord {
    pub episode: u64,
    pub slot: usize,
    pub actions: Vec<Vec<f64>>,
    pub ps_ratios: Vec<f64>,
    pub fue_rates: Vec<f64>,
    pub sue_rates: Vec<f64>,
    pub harvested: Vec<f64>,
    pub eh_input: Vec<f64>,
    pub fue_interference_co: Vec<f64>,
    pub fue_interference_sat: Vec<f64>,
    pub sue_interference_ter: Vec<f64>,
    pub rewards: Vec<f64>,
    pub flags: Vec<[bool; 3]>,
    pub violation_any: bool,
}

impl EpisodeTraceRecord {
    pub fn new(episode: u64, actions: &[RawAction], report: &SlotReport) -> Self {
        let o = &report.outcome;
        Self {
            episode,
            slot: report.slot,
            actions: actions.iter().map(|a| a.0.clone()).collect(),
            ps_ratios: report.action.ps_ratios.clone(),
            fue_rates: o.fue_rates.clone(),
            sue_rates: o.sue_rates.clone(),
            harvested: o.harvested.clone(),
            eh_input: o.eh_input.clone(),
            fue_interference_co: o.fue_interference_co.clone(),
            fue_interference_sat: o.fue_interference_sat.clone(),
            sue_interference_ter: o.sue_interference_ter.clone(),
            rewards: report.agents.iter().map(|a| a.reward).collect(),
            flags: report.agents.iter().map(|a| a.flags).collect(),
            violation_any: report.violation_any,
        }
    }

    pub fn write_line<W: Write>(&self, out: &mut W) -> Result<(), EnvError> {
        serde_json::to_writer(&mut *out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}
