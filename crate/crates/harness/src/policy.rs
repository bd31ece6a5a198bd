//! Joint policies behind one trait, selectable by name.

use std::collections::BTreeMap;

use dwm::agent::ActMode;
use dwm::coord::{execute_slot, AgentStreams, ExecConfig, GateMode, SlotExecution};
use dwm::team::DwmAgent;
use swipt_core::baselines::{egt_raw_action, random_policy};
use swipt_core::env::{HetNetEnv, RawAction};
use swipt_core::rng::{Purpose, RngStream, StreamId};
use swipt_core::SystemConfig;

use crate::HarnessError;

/// Drives every agent of the environment for one slot at a time.
pub trait JointPolicy {
    fn name(&self) -> &str;

    /// Called after the environment was reset for `episode`.
    fn begin_episode(&mut self, episode: u64);

    /// Chooses all actions for the current slot and steps `env`.
    fn step(&mut self, env: &mut HetNetEnv) -> Result<SlotExecution, HarnessError>;
}

fn plain(env: &mut HetNetEnv, actions: Vec<RawAction>) -> Result<SlotExecution, HarnessError> {
    let report = env.step(&actions)?;
    Ok(SlotExecution {
        report,
        actions,
        records: Vec::new(),
        batch: None,
    })
}

/// Uniform actions in `[-1, 1]`.
pub struct RandomPolicy {
    seed: u64,
    streams: Vec<RngStream>,
    dim: usize,
}

impl RandomPolicy {
    pub fn new(config: &SystemConfig, seed: u64) -> Self {
        let mut p = Self {
            seed,
            streams: Vec::new(),
            dim: config.action_dim(),
        };
        p.streams = p.make_streams(config.num_fues(), 0);
        p
    }

    fn make_streams(&self, k: usize, episode: u64) -> Vec<RngStream> {
        (0..k as u64)
            .map(|a| RngStream::new(self.seed, StreamId::new(a, Purpose::Baseline, episode)))
            .collect()
    }
}

impl JointPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn begin_episode(&mut self, episode: u64) {
        self.streams = self.make_streams(self.streams.len(), episode);
    }

    fn step(&mut self, env: &mut HetNetEnv) -> Result<SlotExecution, HarnessError> {
        let dim = self.dim;
        let actions = self.streams.iter_mut().map(|s| random_policy(dim, s)).collect();
        plain(env, actions)
    }
}

/// Equal-gain transmission with a fixed power-splitting ratio.
pub struct EgtPolicy {
    alpha: f64,
}

impl EgtPolicy {
    pub fn new(alpha: f64) -> Self {
        Self { alpha }
    }
}

impl JointPolicy for EgtPolicy {
    fn name(&self) -> &str {
        "egt"
    }

    fn begin_episode(&mut self, _episode: u64) {}

    fn step(&mut self, env: &mut HetNetEnv) -> Result<SlotExecution, HarnessError> {
        let p_max = env.config().p_max_mw();
        let net = env.network_state();
        let actions = net
            .fbs_to_fue
            .iter()
            .map(|h| egt_raw_action(&h.gains, p_max, self.alpha))
            .collect();
        plain(env, actions)
    }
}

/// All-zero raw actions: silent transmitters, alpha = 0.5.
pub struct ZeroPolicy {
    dim: usize,
}

impl JointPolicy for ZeroPolicy {
    fn name(&self) -> &str {
        "zero"
    }

    fn begin_episode(&mut self, _episode: u64) {}

    fn step(&mut self, env: &mut HetNetEnv) -> Result<SlotExecution, HarnessError> {
        let actions = vec![RawAction::zeros(self.dim); env.num_agents()];
        plain(env, actions)
    }
}

/// Trained world-model agents. With more environment users than trained
/// agents, user `k` runs a copy of agent `k mod n`.
pub struct DwmPolicy {
    name: &'static str,
    agents: Vec<DwmAgent>,
    exec: ExecConfig,
    seed: u64,
    streams: Vec<AgentStreams>,
}

impl DwmPolicy {
    pub fn new(
        name: &'static str,
        trained: &[DwmAgent],
        num_users: usize,
        exec: ExecConfig,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        if trained.is_empty() {
            return Err(HarnessError::Validation(format!("policy `{name}` needs trained agents")));
        }
        let agents = (0..num_users)
            .map(|k| {
                let mut a = trained[k % trained.len()].clone();
                a.index = k;
                a.reset_belief();
                a
            })
            .collect();
        let mut p = Self {
            name,
            agents,
            exec,
            seed,
            streams: Vec::new(),
        };
        p.streams = p.make_streams(0);
        Ok(p)
    }

    fn make_streams(&self, episode: u64) -> Vec<AgentStreams> {
        (0..self.agents.len() as u64)
            .map(|a| AgentStreams {
                policy: RngStream::new(self.seed, StreamId::new(a, Purpose::Evaluation, episode)),
                gate: RngStream::new(self.seed, StreamId::new(a, Purpose::Gate, episode)),
            })
            .collect()
    }
}

impl JointPolicy for DwmPolicy {
    fn name(&self) -> &str {
        self.name
    }

    fn begin_episode(&mut self, episode: u64) {
        for a in &mut self.agents {
            a.reset_belief();
        }
        self.streams = self.make_streams(episode);
    }

    fn step(&mut self, env: &mut HetNetEnv) -> Result<SlotExecution, HarnessError> {
        Ok(execute_slot(&mut self.agents, env, &self.exec, &mut self.streams)?)
    }
}

/// Inputs available to policy factories.
pub struct PolicyContext<'a> {
    pub config: &'a SystemConfig,
    pub seed: u64,
    /// Trained agents, when a checkpoint was supplied.
    pub agents: Option<&'a [DwmAgent]>,
}

type Factory = Box<dyn Fn(&PolicyContext) -> Result<Box<dyn JointPolicy>, HarnessError> + Send + Sync>;

pub struct PolicyRegistry {
    factories: BTreeMap<String, Factory>,
}

fn trained<'a>(ctx: &PolicyContext<'a>, name: &str) -> Result<&'a [DwmAgent], HarnessError> {
    ctx.agents
        .ok_or_else(|| HarnessError::Validation(format!("policy `{name}` requires --ckpt")))
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `random`, `egt`, `zero`, `dwm` (gates closed) and `dwm-ro`
    /// (threshold gates with edge refinement).
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("random", |ctx| Ok(Box::new(RandomPolicy::new(ctx.config, ctx.seed))));
        r.register("egt", |ctx| Ok(Box::new(EgtPolicy::new(ctx.config.training.egt_alpha))));
        r.register("zero", |ctx| {
            Ok(Box::new(ZeroPolicy {
                dim: ctx.config.action_dim(),
            }))
        });
        r.register("dwm", |ctx| {
            let exec = ExecConfig {
                act_mode: ActMode::Mean,
                gate_mode: GateMode::Closed,
                refine_coefficient: ctx.config.training.refine_coefficient,
            };
            let agents = trained(ctx, "dwm")?;
            Ok(Box::new(DwmPolicy::new("dwm", agents, ctx.config.num_fues(), exec, ctx.seed)?))
        });
        r.register("dwm-ro", |ctx| {
            let exec = ExecConfig {
                act_mode: ActMode::Mean,
                gate_mode: GateMode::Threshold,
                refine_coefficient: ctx.config.training.refine_coefficient,
            };
            let agents = trained(ctx, "dwm-ro")?;
            Ok(Box::new(DwmPolicy::new("dwm-ro", agents, ctx.config.num_fues(), exec, ctx.seed)?))
        });
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        factory: impl Fn(&PolicyContext) -> Result<Box<dyn JointPolicy>, HarnessError> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, ctx: &PolicyContext) -> Result<Box<dyn JointPolicy>, HarnessError> {
        let f = self.factories.get(name).ok_or_else(|| {
            HarnessError::Validation(format!("unknown policy `{name}`; known: {}", self.names().join(", ")))
        })?;
        f(ctx)
    }
}
