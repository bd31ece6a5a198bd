use dwm::agent::ActMode;
use dwm::coord::{
    counterfactual_local, decision_from_logit, decorrelate, execute_local, execute_slot, AgentStreams, ExecConfig,
    GateInput, GateMode, GatePolicy, GateRecord, GateTrainConfig,
};
use dwm::team::DwmAgent;
use ndarray::Array2;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use swipt_core::env::HetNetEnv;
use swipt_core::rng::{Purpose, RngStream, StreamId};
use swipt_core::SystemConfig;

fn small_config() -> SystemConfig {
    let mut c = SystemConfig::default();
    c.training.det_dim = 16;
    c.training.stoch_dim = 4;
    c.training.hidden_dim = 16;
    c.training.gate_hidden_dim = 8;
    c
}

fn streams(seed: u64, k: usize, episode: u64) -> Vec<AgentStreams> {
    (0..k as u64)
        .map(|a| AgentStreams {
            policy: RngStream::new(seed, StreamId::new(a, Purpose::Policy, episode)),
            gate: RngStream::new(seed, StreamId::new(a, Purpose::Gate, episode)),
        })
        .collect()
}

fn latents_strategy() -> impl Strategy<Value = Array2<f64>> {
    (1usize..9, 1usize..7).prop_flat_map(|(n, d)| {
        prop::collection::vec(-1e3f64..1e3, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn refined_latents_sum_to_zero(z in latents_strategy()) {
        let r = decorrelate(&z, 1.0);
        prop_assert_eq!(r.dim(), z.dim());
        if z.nrows() >= 2 {
            for col in r.columns() {
                prop_assert_eq!(col.iter().sum::<f64>(), 0.0);
            }
        } else {
            prop_assert_eq!(&r, &z);
        }
    }

    #[test]
    fn decorrelation_is_idempotent(z in latents_strategy()) {
        let once = decorrelate(&z, 1.0);
        let twice = decorrelate(&once, 1.0);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

proptest! {
    #[test]
    fn pair_is_exactly_antisymmetric(v in prop::collection::vec(-1e3f64..1e3, 2..16)) {
        let d = v.len() / 2;
        let z = Array2::from_shape_vec((2, d), v[..2 * d].to_vec()).unwrap();
        let r = decorrelate(&z, 1.0);
        for j in 0..d {
            prop_assert_eq!(r[[1, j]], -r[[0, j]]);
        }
    }
}

#[test]
fn closed_gates_reproduce_local_execution_bitwise() {
    let config = small_config();
    let k = config.num_fues();
    let mut a: Vec<DwmAgent> = (0..k).map(|i| DwmAgent::new(&config, i)).collect();
    let mut b = a.clone();
    let mut env_a = HetNetEnv::new(&config, 3);
    let mut env_b = HetNetEnv::new(&config, 3);
    for episode in 0..2 {
        env_a.reset(episode);
        env_b.reset(episode);
        a.iter_mut().for_each(DwmAgent::reset_belief);
        b.iter_mut().for_each(DwmAgent::reset_belief);
        let mut sa = streams(11, k, episode);
        let mut sb = streams(11, k, episode);
        let cfg = ExecConfig {
            act_mode: ActMode::Sample,
            gate_mode: GateMode::Closed,
            refine_coefficient: 1.0,
        };
        loop {
            let (report, actions) = execute_local(&mut a, &mut env_a, ActMode::Sample, &mut sa).unwrap();
            let slot = execute_slot(&mut b, &mut env_b, &cfg, &mut sb).unwrap();
            assert_eq!(actions, slot.actions);
            assert_eq!(report, slot.report);
            assert!(slot.records.is_empty());
            assert!(slot.batch.is_none());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.belief, y.belief);
            }
            if report.done() {
                break;
            }
        }
    }
}

#[test]
fn open_gates_with_identical_latents_act_on_zero() {
    let config = small_config();
    let k = config.num_fues();
    let mut agents: Vec<DwmAgent> = (0..k).map(|i| DwmAgent::new(&config, i)).collect();
    // zero encoder output: every agent's posterior mean is the same
    for agent in agents.iter_mut() {
        for name in agent.wm.encoder_param_names() {
            let id = agent.wm.params.find(&name).unwrap();
            agent.wm.params.get_mut(id).fill(0.0);
        }
    }
    let mut env = HetNetEnv::new(&config, 4);
    env.reset(0);
    let cfg = ExecConfig {
        act_mode: ActMode::Mean,
        gate_mode: GateMode::Open,
        refine_coefficient: 1.0,
    };
    let mut s = streams(5, k, 0);
    let slot = execute_slot(&mut agents, &mut env, &cfg, &mut s).unwrap();
    let batch = slot.batch.unwrap();
    assert_eq!(batch.agent_ids, (0..k).collect::<Vec<_>>());
    assert!(batch.refined.iter().all(|&x| x == 0.0));
    for (i, agent) in agents.iter().enumerate() {
        let zero = Array2::zeros((1, agent.wm.dims.stoch));
        let want = agent
            .ac
            .actor
            .act(&agent.belief.latent.d, &zero, ActMode::Mean, &mut StdRng::seed_from_u64(0))
            .unwrap();
        assert_eq!(slot.actions[i].0, want.iter().copied().collect::<Vec<_>>());
    }
}

#[test]
fn two_offloaders_receive_negated_latents() {
    let mut config = small_config();
    config.network.num_fues = 2;
    let mut agents: Vec<DwmAgent> = (0..2).map(|i| DwmAgent::new(&config, i)).collect();
    let mut env = HetNetEnv::new(&config, 6);
    env.reset(0);
    let cfg = ExecConfig {
        act_mode: ActMode::Sample,
        gate_mode: GateMode::Open,
        refine_coefficient: 1.0,
    };
    let mut s = streams(6, 2, 0);
    for _ in 0..5 {
        let slot = execute_slot(&mut agents, &mut env, &cfg, &mut s).unwrap();
        let b = slot.batch.unwrap();
        for j in 0..b.refined.ncols() {
            assert_eq!(b.refined[[1, j]], -b.refined[[0, j]]);
        }
        assert_eq!(slot.records.len(), 2);
        for r in &slot.records {
            let cf = r.counterfactual.unwrap();
            assert_eq!(r.improvement.unwrap(), r.realized_reward.unwrap() - cf);
        }
    }
}

#[test]
fn counterfactual_matches_reward_head_and_is_deterministic() {
    let config = small_config();
    let agent = DwmAgent::new(&config, 0);
    let mut rng = StdRng::seed_from_u64(7);
    let dims = agent.wm.dims;
    let lat = dwm::LatentState {
        d: dwm::worldmodel::standard_normal(1, dims.det, &mut rng),
        z: dwm::worldmodel::standard_normal(1, dims.stoch, &mut rng),
        mean: Array2::zeros((1, dims.stoch)),
        log_std: Array2::zeros((1, dims.stoch)),
    };
    let a = dwm::worldmodel::standard_normal(1, dims.action, &mut rng);
    let cf = counterfactual_local(&agent, &lat, &a);
    assert_eq!(cf, counterfactual_local(&agent, &lat, &a));
    let (d1, _, r) = {
        let mut tape = diffnn::Tape::new();
        let p = agent.wm.params.bind(&mut tape, false);
        let d = tape.constant(lat.d.clone());
        let z = tape.constant(lat.z.clone());
        let av = tape.constant(a.clone());
        let out = dwm::agent::LatentDynamics::imagine_step(&agent.wm, &mut tape, &p, d, z, av, None);
        (tape.value(out.0).clone(), tape.value(out.1).clone(), tape.value(out.2)[[0, 0]])
    };
    assert_eq!(d1.ncols(), dims.det);
    assert_eq!(cf, r);
}

#[test]
fn tie_stays_local_in_threshold_mode() {
    let mut rng = StdRng::seed_from_u64(0);
    assert!(!decision_from_logit(0.0, 0.0, GateMode::Threshold, &mut rng).offload);
    assert!(decision_from_logit(1e-12, 0.0, GateMode::Threshold, &mut rng).offload);
}

/// Synthetic bandit: offloading adds `benefit` to the reward, the gate pays
/// `cost`. Returns the offload rate of the trained gate in threshold mode.
fn train_gate_bandit(benefit: f64, cost: f64, seed: u64) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut gate = GatePolicy::new(16, 3e-3, &mut rng);
    let cfg = GateTrainConfig {
        epochs: 4,
        clip: 0.2,
        cost,
        max_grad_norm: 100.0,
    };
    let sample_input = |rng: &mut StdRng| GateInput {
        interference_feat: rng.gen_range(-2.0..2.0),
        recon_feat: rng.gen_range(-2.0..2.0),
    };
    for _ in 0..300 {
        let mut records = Vec::with_capacity(64);
        for i in 0..64 {
            let u = sample_input(&mut rng);
            let dec = gate.decide(&u, GateMode::Sample, &mut rng);
            let base = rng.gen_range(-0.5..0.5);
            let r = if dec.offload { base + benefit } else { base };
            records.push(GateRecord {
                agent: i,
                input: u,
                offload: dec.offload,
                realized_reward: Some(r),
                counterfactual: None,
                improvement: None,
                log_prob: dec.log_prob,
                value_est: dec.value,
            });
        }
        gate.train(&records, &cfg).unwrap();
    }
    let n = 2000;
    let offloads = (0..n)
        .filter(|_| {
            let u = sample_input(&mut rng);
            gate.decide(&u, GateMode::Threshold, &mut rng).offload
        })
        .count();
    offloads as f64 / n as f64
}

#[test]
fn gate_learns_to_offload_when_worth_it() {
    let rate = train_gate_bandit(1.0, 0.2, 1);
    assert!(rate > 0.95, "offload rate {rate}");
}

#[test]
fn gate_stays_local_when_cost_dominates() {
    let rate = train_gate_bandit(1.0, 10.0, 2);
    assert!(rate < 0.02, "offload rate {rate}");
}

#[test]
fn gate_stays_local_when_offloading_hurts() {
    let rate = train_gate_bandit(-0.5, 0.05, 3);
    assert!(rate < 0.05, "offload rate {rate}");
}
