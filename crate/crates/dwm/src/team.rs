//! Per-agent bundle of world model, actor-critic, gate and running belief.

use diffnn::params::Adam;
use ndarray::Array2;
use swipt_core::rng::{Purpose, RngStream, StreamId};
use swipt_core::SystemConfig;

use crate::agent::{AcConfig, ActorCritic};
use crate::coord::{GatePolicy, GateTrainConfig};
use crate::worldmodel::{LatentState, ModelDims, WmLossConfig, WorldModel};

/// Running belief carried across the slots of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub latent: LatentState,
    pub prev_action: Array2<f64>,
}

impl Belief {
    pub fn initial(dims: &ModelDims) -> Self {
        Self {
            latent: LatentState::zeros(1, dims),
            prev_action: Array2::zeros((1, dims.action)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DwmAgent {
    pub index: usize,
    pub wm: WorldModel,
    pub wm_opt: Adam,
    pub ac: ActorCritic,
    pub gate: GatePolicy,
    pub belief: Belief,
}

pub fn model_dims(config: &SystemConfig) -> ModelDims {
    let t = &config.training;
    ModelDims {
        obs: config.obs_dim(),
        action: config.action_dim(),
        det: t.det_dim,
        stoch: t.stoch_dim,
        hidden: t.hidden_dim,
    }
}

pub fn wm_loss_config(config: &SystemConfig) -> WmLossConfig {
    let t = &config.training;
    WmLossConfig {
        free_bits: t.free_bits,
        beta_dyn: t.beta_dyn,
        beta_rep: t.beta_rep,
        reward_weight: t.reward_loss_weight,
    }
}

pub fn ac_config(config: &SystemConfig) -> AcConfig {
    let t = &config.training;
    AcConfig {
        horizon: t.horizon,
        gamma: t.gamma,
        lambda: t.lambda_return,
        entropy_coef: t.entropy_coef,
        max_grad_norm: t.max_grad_norm,
    }
}

pub fn gate_train_config(config: &SystemConfig) -> GateTrainConfig {
    let t = &config.training;
    GateTrainConfig {
        epochs: t.gate_epochs,
        clip: t.gate_clip,
        cost: config.reward.gate_cost,
        max_grad_norm: t.max_grad_norm,
    }
}

impl DwmAgent {
    /// Fresh agent; initial weights come from the agent's init stream.
    pub fn new(config: &SystemConfig, index: usize) -> Self {
        let t = &config.training;
        let dims = model_dims(config);
        let mut rng = RngStream::new(t.seed, StreamId::new(index as u64, Purpose::Init, 0));
        let wm = WorldModel::new(dims, &mut rng);
        let wm_opt = Adam::new(&wm.params, t.wm_lr);
        let ac = ActorCritic::new(&dims, t.action_bound, t.actor_lr, t.critic_lr, &mut rng);
        let gate = GatePolicy::new(t.gate_hidden_dim, t.gate_lr, &mut rng);
        Self {
            index,
            wm,
            wm_opt,
            ac,
            gate,
            belief: Belief::initial(&dims),
        }
    }

    pub fn reset_belief(&mut self) {
        self.belief = Belief::initial(&self.wm.dims);
    }
}
