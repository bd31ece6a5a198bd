//! Actor-critic trained purely on imagined latent trajectories.

use diffnn::dist::DiagonalGaussian;
use diffnn::layers::Mlp;
use diffnn::params::{clip_global_norm, global_norm, Adam, Bound, ParamStore};
use diffnn::{DiffError, Tape, Var};
use ndarray::Array2;
use rand::Rng;

use crate::worldmodel::{standard_normal, ModelDims, WorldModel};

/// Latent dynamics that imagination may query. Implementors expose no
/// environment handle, so rollouts cannot touch the real system.
pub trait LatentDynamics {
    fn dims(&self) -> ModelDims;

    fn params(&self) -> &ParamStore;

    /// One imagined step from `(d, z)` under action `a`. The next stochastic
    /// state is `prior_mean + prior_std * eps`, or the prior mean when `eps`
    /// is `None`. Returns `(d', z', r_hat)` with `r_hat` as `n x 1`.
    fn imagine_step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        d: Var,
        z: Var,
        a: Var,
        eps: Option<Array2<f64>>,
    ) -> (Var, Var, Var);
}

impl LatentDynamics for WorldModel {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn imagine_step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        d: Var,
        z: Var,
        a: Var,
        eps: Option<Array2<f64>>,
    ) -> (Var, Var, Var) {
        let d1 = self.transition(tape, p, d, z, a);
        let prior = self.predict_prior(tape, p, d1);
        let z1 = match eps {
            Some(e) => prior.rsample(tape, e),
            None => prior.mean,
        };
        let r = self.decode_reward(tape, p, d1, z1);
        (d1, z1, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mean,
}

/// Gaussian policy over `(d, z)` with a soft-bounded mean.
#[derive(Debug, Clone)]
pub struct Actor {
    pub params: ParamStore,
    net: Mlp,
    pub action_dim: usize,
    pub bound: f64,
}

impl Actor {
    pub fn new(dims: &ModelDims, bound: f64, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let h = dims.hidden;
        let net = Mlp::new(&mut params, "actor", &[dims.det + dims.stoch, h, h, 2 * dims.action], rng);
        Self {
            params,
            net,
            action_dim: dims.action,
            bound,
        }
    }

    pub fn dist(&self, tape: &mut Tape, p: &Bound, d: Var, z: Var) -> DiagonalGaussian {
        let x = tape.concat_cols(&[d, z]);
        let h = self.net.forward(tape, p, x);
        let mut g = DiagonalGaussian::from_head(tape, h);
        // bound * tanh(mean / bound)
        let m = tape.scale(g.mean, 1.0 / self.bound);
        let m = tape.tanh(m);
        g.mean = tape.scale(m, self.bound);
        g
    }

    /// Action for each row of `(d, z)`.
    pub fn act(&self, d: &Array2<f64>, z: &Array2<f64>, mode: ActMode, rng: &mut impl Rng) -> Result<Array2<f64>, DiffError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let dv = tape.constant(d.clone());
        let zv = tape.constant(z.clone());
        let g = self.dist(&mut tape, &p, dv, zv);
        let a = match mode {
            ActMode::Mean => g.mean,
            ActMode::Sample => g.rsample(&mut tape, standard_normal(d.nrows(), self.action_dim, rng)),
        };
        tape.check_finite()?;
        Ok(tape.value(a).clone())
    }

    /// Mean and log-std of the policy at `(d, z)`.
    pub fn stats(&self, d: &Array2<f64>, z: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let dv = tape.constant(d.clone());
        let zv = tape.constant(z.clone());
        let g = self.dist(&mut tape, &p, dv, zv);
        (tape.value(g.mean).clone(), tape.value(g.log_std).clone())
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub params: ParamStore,
    net: Mlp,
}

impl Critic {
    pub fn new(dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let h = dims.hidden;
        let net = Mlp::new(&mut params, "critic", &[dims.det + dims.stoch, h, h, 1], rng);
        Self { params, net }
    }

    pub fn value(&self, tape: &mut Tape, p: &Bound, d: Var, z: Var) -> Var {
        let x = tape.concat_cols(&[d, z]);
        self.net.forward(tape, p, x)
    }
}

/// Tape handles of an imagined rollout; `dets`/`stochs` have `H + 1` entries.
#[derive(Debug, Clone)]
pub struct ImaginedTrajectory {
    pub dets: Vec<Var>,
    pub stochs: Vec<Var>,
    pub actions: Vec<Var>,
    pub rewards: Vec<Var>,
    pub entropies: Vec<Var>,
}

impl ImaginedTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Rolls the policy forward `horizon` steps inside `model`. In
/// [`ActMode::Mean`] both the actions and the next latents are means, so
/// the rollout is deterministic.
#[allow(clippy::too_many_arguments)]
pub fn imagine<M: LatentDynamics + ?Sized>(
    tape: &mut Tape,
    model: &M,
    mp: &Bound,
    actor: &Actor,
    ap: &Bound,
    start: (&Array2<f64>, &Array2<f64>),
    horizon: usize,
    mode: ActMode,
    rng: &mut impl Rng,
) -> ImaginedTrajectory {
    let n = start.0.nrows();
    let dims = model.dims();
    let mut d = tape.constant(start.0.clone());
    let mut z = tape.constant(start.1.clone());
    let mut traj = ImaginedTrajectory {
        dets: vec![d],
        stochs: vec![z],
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        entropies: Vec::with_capacity(horizon),
    };
    for _ in 0..horizon {
        let pi = actor.dist(tape, ap, d, z);
        let a = match mode {
            ActMode::Sample => pi.rsample(tape, standard_normal(n, dims.action, rng)),
            ActMode::Mean => pi.mean,
        };
        traj.entropies.push(pi.entropy(tape));
        let eps = match mode {
            ActMode::Sample => Some(standard_normal(n, dims.stoch, rng)),
            ActMode::Mean => None,
        };
        let (d1, z1, r) = model.imagine_step(tape, mp, d, z, a, eps);
        traj.actions.push(a);
        traj.rewards.push(r);
        traj.dets.push(d1);
        traj.stochs.push(z1);
        d = d1;
        z = z1;
    }
    traj
}

/// `R_i = r_i + gamma * ((1 - lambda) V_{i+1} + lambda R_{i+1})`, `R_H = V_H`.
pub fn lambda_returns(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let h = rewards.len();
    assert_eq!(values.len(), h + 1, "values must have one more entry than rewards");
    let mut out = vec![0.0; h];
    let mut next = values[h];
    for i in (0..h).rev() {
        next = rewards[i] + gamma * ((1.0 - lambda) * values[i + 1] + lambda * next);
        out[i] = next;
    }
    out
}

/// Column-wise [`lambda_returns`] over `n x 1` arrays.
pub fn lambda_returns_batch(rewards: &[Array2<f64>], values: &[Array2<f64>], gamma: f64, lambda: f64) -> Vec<Array2<f64>> {
    let h = rewards.len();
    assert_eq!(values.len(), h + 1, "values must have one more entry than rewards");
    let mut out = vec![Array2::zeros(values[0].dim()); h];
    let mut next = values[h].clone();
    for i in (0..h).rev() {
        next = &rewards[i] + &((&values[i + 1] * (1.0 - lambda) + &next * lambda) * gamma);
        out[i] = next.clone();
    }
    out
}

/// `-mean over rows of sum_i r_hat_i`, minus an optional entropy bonus.
pub fn actor_loss(tape: &mut Tape, traj: &ImaginedTrajectory, entropy_coef: f64) -> Var {
    let mut total = traj.rewards[0];
    for r in &traj.rewards[1..] {
        total = tape.add(total, *r);
    }
    let m = tape.mean_all(total);
    let mut loss = tape.neg(m);
    if entropy_coef != 0.0 {
        let e = tape.concat_cols(&traj.entropies);
        let e = tape.mean_all(e);
        let e = tape.scale(e, -entropy_coef);
        loss = tape.add(loss, e);
    }
    loss
}

/// Mean squared error between `values` and constant `targets`.
pub fn critic_loss(tape: &mut Tape, values: &[Var], targets: &[Array2<f64>]) -> Var {
    assert_eq!(values.len(), targets.len(), "critic_loss: length mismatch");
    let mut errs = Vec::with_capacity(values.len());
    for (v, t) in values.iter().zip(targets) {
        let tv = tape.constant(t.clone());
        let e = tape.sub(*v, tv);
        errs.push(tape.square(e));
    }
    let all = tape.concat_cols(&errs);
    tape.mean_all(all)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcStepOutput {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_imagined_reward: f64,
    pub actor_grad_norm: f64,
    /// Norm of the gradient that reached the world model; zero by construction.
    pub model_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl ActorCritic {
    pub fn new(dims: &ModelDims, bound: f64, actor_lr: f64, critic_lr: f64, rng: &mut impl Rng) -> Self {
        let actor = Actor::new(dims, bound, rng);
        let critic = Critic::new(dims, rng);
        let actor_opt = Adam::new(&actor.params, actor_lr);
        let critic_opt = Adam::new(&critic.params, critic_lr);
        Self {
            actor,
            critic,
            actor_opt,
            critic_opt,
        }
    }

    /// One actor step and one critic step on rollouts from `starts`.
    pub fn train_step<M: LatentDynamics + ?Sized>(
        &mut self,
        model: &M,
        starts: (&Array2<f64>, &Array2<f64>),
        cfg: &AcConfig,
        rng: &mut impl Rng,
    ) -> Result<AcStepOutput, DiffError> {
        let mut tape = Tape::new();
        let mp = model.params().bind(&mut tape, false);
        let ap = self.actor.params.bind(&mut tape, true);
        let traj = imagine(&mut tape, model, &mp, &self.actor, &ap, starts, cfg.horizon, ActMode::Sample, rng);
        let loss = actor_loss(&mut tape, &traj, cfg.entropy_coef);
        let grads = tape.backward(loss)?;
        let model_grad_norm = global_norm(&model.params().collect_grads(&mp, &grads));
        let mut g = self.actor.params.collect_grads(&ap, &grads);
        let actor_grad_norm = clip_global_norm(&mut g, cfg.max_grad_norm);
        self.actor_opt.step(&mut self.actor.params, &g);

        let rewards: Vec<Array2<f64>> = traj.rewards.iter().map(|r| tape.value(*r).clone()).collect();
        let mean_imagined_reward =
            rewards.iter().map(|r| r.mean().unwrap_or(0.0)).sum::<f64>() / rewards.len().max(1) as f64;

        let mut ct = Tape::new();
        let cp = self.critic.params.bind(&mut ct, true);
        let mut values = Vec::with_capacity(traj.dets.len());
        for (d, z) in traj.dets.iter().zip(&traj.stochs) {
            let dv = ct.constant(tape.value(*d).clone());
            let zv = ct.constant(tape.value(*z).clone());
            values.push(self.critic.value(&mut ct, &cp, dv, zv));
        }
        let value_arrays: Vec<Array2<f64>> = values.iter().map(|v| ct.value(*v).clone()).collect();
        let targets = lambda_returns_batch(&rewards, &value_arrays, cfg.gamma, cfg.lambda);
        let closs = critic_loss(&mut ct, &values[..cfg.horizon], &targets);
        let cgrads = ct.backward(closs)?;
        let mut g = self.critic.params.collect_grads(&cp, &cgrads);
        clip_global_norm(&mut g, cfg.max_grad_norm);
        self.critic_opt.step(&mut self.critic.params, &g);

        Ok(AcStepOutput {
            actor_loss: tape.scalar_value(loss),
            critic_loss: ct.scalar_value(closs),
            mean_imagined_reward,
            actor_grad_norm,
            model_grad_norm,
        })
    }
}
