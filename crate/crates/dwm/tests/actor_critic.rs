use diffnn::gradcheck::param_error;
use diffnn::params::Adam;
use diffnn::{Bound, ParamStore, Tape, Var};
use dwm::agent::{
    actor_loss, critic_loss, imagine, lambda_returns, AcConfig, ActMode, Actor, ActorCritic, Critic, LatentDynamics,
};
use dwm::worldmodel::{standard_normal, ModelDims, SequenceBatch, WmLossConfig, WorldModel};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn tiny() -> ModelDims {
    ModelDims {
        obs: 4,
        action: 5,
        det: 5,
        stoch: 3,
        hidden: 8,
    }
}

/// Closed form: weighted mix of n-step returns plus the tail term.
fn lambda_oracle(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let h = r.len();
    let n_step = |i: usize, n: usize| {
        let mut g = 0.0;
        for j in 0..n {
            g += gamma.powi(j as i32) * r[i + j];
        }
        g + gamma.powi(n as i32) * v[i + n]
    };
    (0..h)
        .map(|i| {
            let m = h - i;
            let mut out = 0.0;
            for n in 1..m {
                out += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(i, n);
            }
            out + lambda.powi(m as i32 - 1) * n_step(i, m)
        })
        .collect()
}

proptest! {
    #[test]
    fn lambda_returns_match_closed_form(
        r in prop::collection::vec(-5.0f64..5.0, 1..12),
        extra in prop::collection::vec(-5.0f64..5.0, 13),
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let v = &extra[..r.len() + 1];
        let got = lambda_returns(&r, v, gamma, lambda);
        let want = lambda_oracle(&r, v, gamma, lambda);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn horizon_one_lengths() {
    let mut rng = StdRng::seed_from_u64(0);
    let wm = WorldModel::new(tiny(), &mut rng);
    let actor = Actor::new(&tiny(), 4.0, &mut rng);
    let mut t = Tape::new();
    let mp = wm.params.bind(&mut t, false);
    let ap = actor.params.bind(&mut t, false);
    let (d, z) = (standard_normal(3, 5, &mut rng), standard_normal(3, 3, &mut rng));
    let tr = imagine(&mut t, &wm, &mp, &actor, &ap, (&d, &z), 1, ActMode::Sample, &mut rng);
    assert_eq!(tr.dets.len(), 2);
    assert_eq!(tr.stochs.len(), 2);
    assert_eq!(tr.actions.len(), 1);
    assert_eq!(tr.rewards.len(), 1);
    assert_eq!(t.shape(tr.rewards[0]), (3, 1));
    assert_eq!(t.shape(tr.actions[0]), (3, 5));
}

#[test]
fn mean_mode_rollout_is_reproducible() {
    let mut rng = StdRng::seed_from_u64(1);
    let wm = WorldModel::new(tiny(), &mut rng);
    let actor = Actor::new(&tiny(), 4.0, &mut rng);
    let (d, z) = (standard_normal(2, 5, &mut rng), standard_normal(2, 3, &mut rng));
    let run = |seed: u64| {
        let mut t = Tape::new();
        let mp = wm.params.bind(&mut t, false);
        let ap = actor.params.bind(&mut t, false);
        let tr = imagine(&mut t, &wm, &mp, &actor, &ap, (&d, &z), 5, ActMode::Mean, &mut StdRng::seed_from_u64(seed));
        tr.rewards.iter().map(|r| t.value(*r).clone()).collect::<Vec<_>>()
    };
    assert_eq!(run(10), run(20));
}

#[test]
fn actor_loss_gradient_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(2);
    let wm = WorldModel::new(tiny(), &mut rng);
    let actor = Actor::new(&tiny(), 4.0, &mut rng);
    let (d, z) = (standard_normal(3, 5, &mut rng), standard_normal(3, 3, &mut rng));
    let eval = |params: &ParamStore, train: bool| {
        let mut a = actor.clone();
        a.params = params.clone();
        let mut t = Tape::new();
        let mp = wm.params.bind(&mut t, false);
        let ap = a.params.bind(&mut t, train);
        let tr = imagine(&mut t, &wm, &mp, &a, &ap, (&d, &z), 3, ActMode::Sample, &mut StdRng::seed_from_u64(7));
        let l = actor_loss(&mut t, &tr, 0.01);
        (t, ap, l)
    };
    let (t, ap, l) = eval(&actor.params, true);
    let g = t.backward(l).unwrap();
    let grads = actor.params.collect_grads(&ap, &g);
    check_fd(&actor.params, &grads, |p| {
        let (t, _, l) = eval(p, false);
        t.scalar_value(l)
    });
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(3);
    let critic = Critic::new(&tiny(), &mut rng);
    let ds: Vec<Array2<f64>> = (0..4).map(|_| standard_normal(3, 5, &mut rng)).collect();
    let zs: Vec<Array2<f64>> = (0..4).map(|_| standard_normal(3, 3, &mut rng)).collect();
    let targets: Vec<Array2<f64>> = (0..4).map(|_| standard_normal(3, 1, &mut rng)).collect();
    let eval = |params: &ParamStore, train: bool| {
        let mut c = critic.clone();
        c.params = params.clone();
        let mut t = Tape::new();
        let p = c.params.bind(&mut t, train);
        let values: Vec<Var> = ds
            .iter()
            .zip(&zs)
            .map(|(d, z)| {
                let dv = t.constant(d.clone());
                let zv = t.constant(z.clone());
                c.value(&mut t, &p, dv, zv)
            })
            .collect();
        let l = critic_loss(&mut t, &values, &targets);
        (t, p, l)
    };
    let (t, p, l) = eval(&critic.params, true);
    let g = t.backward(l).unwrap();
    let grads = critic.params.collect_grads(&p, &g);
    check_fd(&critic.params, &grads, |ps| {
        let (t, _, l) = eval(ps, false);
        t.scalar_value(l)
    });
}

fn check_fd(store: &ParamStore, grads: &[Array2<f64>], f: impl Fn(&ParamStore) -> f64) {
    let worst = param_error(store, grads, Some(6), f);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

/// Stationary latent with reward `-(a - 3)^2` on the first action component.
struct Bandit {
    params: ParamStore,
    dims: ModelDims,
}

impl LatentDynamics for Bandit {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn imagine_step(&self, tape: &mut Tape, _p: &Bound, d: Var, z: Var, a: Var, _eps: Option<Array2<f64>>) -> (Var, Var, Var) {
        let shifted = tape.add_scalar(a, -3.0);
        let sq = tape.square(shifted);
        let r = tape.neg(sq);
        (d, z, r)
    }
}

#[test]
fn bandit_actor_converges_to_optimum() {
    let dims = ModelDims { obs: 1, action: 1, det: 2, stoch: 2, hidden: 16 };
    let model = Bandit { params: ParamStore::new(), dims };
    let mut rng = StdRng::seed_from_u64(4);
    let mut ac = ActorCritic::new(&dims, 4.0, 1e-3, 1e-3, &mut rng);
    let cfg = AcConfig { horizon: 1, gamma: 0.99, lambda: 0.95, entropy_coef: 0.0, max_grad_norm: 100.0 };
    let d = Array2::zeros((16, 2));
    let z = Array2::zeros((16, 2));
    let mut losses = Vec::new();
    for _ in 0..2000 {
        let out = ac.train_step(&model, (&d, &z), &cfg, &mut rng).unwrap();
        assert_eq!(out.model_grad_norm, 0.0);
        losses.push(out.actor_loss);
    }
    let (mean, _) = ac.actor.stats(&Array2::zeros((1, 2)), &Array2::zeros((1, 2)));
    assert!((mean[[0, 0]] - 3.0).abs() < 0.1, "mean {}", mean[[0, 0]]);
    let windows: Vec<f64> = losses.chunks(500).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in windows.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{windows:?}");
    }
}

#[test]
fn actor_critic_step_leaves_environment_untouched() {
    let config = swipt_core::SystemConfig::default();
    let mut env = swipt_core::env::HetNetEnv::new(&config, 0);
    env.reset(0);
    let k = env.num_agents();
    let n = config.action_dim();
    env.step(&vec![swipt_core::env::RawAction::zeros(n); k]).unwrap();
    let before = env.steps_taken();
    let dims = dwm::team::model_dims(&config);
    let mut rng = StdRng::seed_from_u64(5);
    let wm = WorldModel::new(dims, &mut rng);
    let mut ac = ActorCritic::new(&dims, 4.0, 1e-3, 1e-3, &mut rng);
    let cfg = dwm::team::ac_config(&config);
    let d = Array2::zeros((2, dims.det));
    let z = Array2::zeros((2, dims.stoch));
    let out = ac.train_step(&wm, (&d, &z), &cfg, &mut rng).unwrap();
    assert_eq!(out.model_grad_norm, 0.0);
    assert_eq!(env.steps_taken(), before);
}

// Linear toy system: s' = 0.7 s + 0.3 a, r = s + 0.5 a, observation [s, 1].
fn toy_step(s: f64, a: f64) -> (f64, f64) {
    (0.7 * s + 0.3 * a, s + 0.5 * a)
}

fn toy_batch(b: usize, steps: usize, rng: &mut StdRng) -> SequenceBatch {
    let mut obs = vec![Array2::zeros((b, 2)); steps];
    let mut actions = vec![Array2::zeros((b, 1)); steps - 1];
    let mut rewards = vec![Array2::zeros((b, 1)); steps - 1];
    for i in 0..b {
        let mut s = rng.gen_range(-1.0..1.0);
        for t in 0..steps {
            obs[t][[i, 0]] = s;
            obs[t][[i, 1]] = 1.0;
            if t + 1 < steps {
                let a = rng.gen_range(-1.0..1.0);
                let (s1, r) = toy_step(s, a);
                actions[t][[i, 0]] = a;
                rewards[t][[i, 0]] = r;
                s = s1;
            }
        }
    }
    SequenceBatch { obs, actions, rewards }
}

#[test]
fn imagined_rewards_track_toy_system() {
    let dims = ModelDims { obs: 2, action: 1, det: 16, stoch: 4, hidden: 32 };
    let mut rng = StdRng::seed_from_u64(6);
    let mut wm = WorldModel::new(dims, &mut rng);
    let mut opt = Adam::new(&wm.params, 1e-3);
    for _ in 0..6000 {
        let b = toy_batch(16, 11, &mut rng);
        wm.train_step(&mut opt, &b, &WmLossConfig::default(), 100.0, &mut rng).unwrap();
    }
    // large weights so the policy uses the whole trained action range
    let mut actor = Actor::new(&dims, 1.0, &mut rng);
    for id in actor.params.ids().collect::<Vec<_>>() {
        actor.params.get_mut(id).mapv_inplace(|x| x * 5.0);
    }

    let mut abs_err = 0.0;
    let mut abs_ref = 0.0;
    for _ in 0..64 {
        let seq = toy_batch(1, 4, &mut rng);
        let mut lat = dwm::LatentState::zeros(1, &dims);
        let mut a = Array2::zeros((1, 1));
        for t in 0..4 {
            lat = wm.observe(&lat, &a, &seq.obs[t], None).unwrap();
            if t < 3 {
                a = seq.actions[t].clone();
            }
        }
        let mut tape = Tape::new();
        let mp = wm.params.bind(&mut tape, false);
        let ap = actor.params.bind(&mut tape, false);
        let tr = imagine(&mut tape, &wm, &mp, &actor, &ap, (&lat.d, &lat.mean), 5, ActMode::Mean, &mut rng);
        let mut s = seq.obs[3][[0, 0]];
        for i in 0..5 {
            let act = tape.value(tr.actions[i])[[0, 0]];
            let (s1, r) = toy_step(s, act);
            s = s1;
            abs_err += (tape.value(tr.rewards[i])[[0, 0]] - r).abs();
            abs_ref += r.abs();
        }
    }
    let rel = abs_err / abs_ref;
    assert!(rel < 0.1, "relative imagined reward error {rel}");
}

#[test]
fn mean_action_is_bounded() {
    let mut rng = StdRng::seed_from_u64(8);
    let mut actor = Actor::new(&tiny(), 4.0, &mut rng);
    for id in actor.params.ids().collect::<Vec<_>>() {
        actor.params.get_mut(id).mapv_inplace(|x| x * 50.0);
    }
    let d = standard_normal(64, 5, &mut rng) * 10.0;
    let z = standard_normal(64, 3, &mut rng) * 10.0;
    let (m, ls) = actor.stats(&d, &z);
    assert!(m.iter().all(|x| x.abs() <= 4.0));
    assert!(ls.iter().all(|x| (-5.0..=2.0).contains(x)));
    let a = actor.act(&d, &z, ActMode::Sample, &mut rng).unwrap();
    assert_eq!(a.len_of(Axis(1)), tiny().action);
}
