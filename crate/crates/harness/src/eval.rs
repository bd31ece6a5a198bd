//! Evaluation of joint policies and sweeps over the number of FUEs.

use dwm::team::DwmAgent;
use serde::Serialize;
use swipt_core::env::HetNetEnv;
use swipt_core::SystemConfig;

use crate::policy::{JointPolicy, PolicyContext, PolicyRegistry};
use crate::HarnessError;

/// Evaluation episodes are numbered from here so they never coincide with
/// training episodes of the same seed.
pub const EVAL_EPISODE_BASE: u64 = 1 << 32;

/// Mean and standard error across episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, stderr: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub policy: String,
    pub num_fues: usize,
    pub episodes: usize,
    /// FUE sum-rate, bps/Hz.
    pub sum_rate: Stat,
    /// Fraction of slots where any constraint fails for any user.
    pub violation_rate: Stat,
    /// Harvested power per FUE, mW.
    pub harvested_mw: Stat,
    /// Mean per-agent reward.
    pub reward: Stat,
    /// Fraction of gate decisions that offloaded, when a gate ran.
    pub offload_rate: Option<Stat>,
}

/// Runs `episodes` evaluation episodes. Statistics are per-episode means,
/// so standard errors treat episodes as the independent unit.
pub fn evaluate_policy(
    policy: &mut dyn JointPolicy,
    config: &SystemConfig,
    seed: u64,
    episodes: usize,
) -> Result<EvalSummary, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Validation("episodes must be positive".into()));
    }
    let mut env = HetNetEnv::new(config, seed);
    let mut rate = Vec::with_capacity(episodes);
    let mut viol = Vec::with_capacity(episodes);
    let mut harvest = Vec::with_capacity(episodes);
    let mut reward = Vec::with_capacity(episodes);
    let mut offload = Vec::new();
    for i in 0..episodes as u64 {
        let episode = EVAL_EPISODE_BASE + i;
        env.reset(episode);
        policy.begin_episode(episode);
        let (mut r, mut v, mut h, mut w) = (0.0, 0.0, 0.0, 0.0);
        let (mut decisions, mut offloads) = (0usize, 0usize);
        let mut slots = 0.0;
        loop {
            let out = policy.step(&mut env)?;
            let rep = &out.report;
            let k = rep.agents.len() as f64;
            r += rep.outcome.fue_sum_rate();
            v += if rep.violation_any { 1.0 } else { 0.0 };
            h += rep.outcome.harvested.iter().sum::<f64>() / k;
            w += rep.agents.iter().map(|a| a.reward).sum::<f64>() / k;
            decisions += out.records.len();
            offloads += out.records.iter().filter(|x| x.offload).count();
            slots += 1.0;
            if rep.done() {
                break;
            }
        }
        rate.push(r / slots);
        viol.push(v / slots);
        harvest.push(h / slots);
        reward.push(w / slots);
        if decisions > 0 {
            offload.push(offloads as f64 / decisions as f64);
        }
    }
    Ok(EvalSummary {
        policy: policy.name().to_string(),
        num_fues: config.num_fues(),
        episodes,
        sum_rate: Stat::of(&rate),
        violation_rate: Stat::of(&viol),
        harvested_mw: Stat::of(&harvest),
        reward: Stat::of(&reward),
        offload_rate: if offload.is_empty() { None } else { Some(Stat::of(&offload)) },
    })
}

/// Builds `name` from the registry and evaluates it.
pub fn evaluate_named(
    registry: &PolicyRegistry,
    name: &str,
    config: &SystemConfig,
    agents: Option<&[DwmAgent]>,
    seed: u64,
    episodes: usize,
) -> Result<EvalSummary, HarnessError> {
    let ctx = PolicyContext { config, seed, agents };
    let mut p = registry.build(name, &ctx)?;
    evaluate_policy(p.as_mut(), config, seed, episodes)
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
}

impl SweepRow {
    fn from_summary(s: &EvalSummary) -> Vec<SweepRow> {
        let row = |metric: &str, st: Stat| SweepRow {
            k: s.num_fues,
            policy: s.policy.clone(),
            metric: metric.to_string(),
            mean: st.mean,
            stderr: st.stderr,
        };
        vec![
            row("spectral_efficiency", s.sum_rate),
            row("violation_rate", s.violation_rate),
            row("harvested_mw", s.harvested_mw),
        ]
    }
}

/// Evaluates each policy at each K. Trained agents, when given, are
/// cycled over the users of larger networks.
pub fn sweep(
    registry: &PolicyRegistry,
    base: &SystemConfig,
    k_values: &[usize],
    policies: &[&str],
    agents: Option<&[DwmAgent]>,
    seed: u64,
    episodes: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    if k_values.is_empty() {
        return Err(HarnessError::Validation("sweep needs at least one K".into()));
    }
    let mut rows = Vec::new();
    for &k in k_values {
        let config = base.with_num_fues(k)?;
        for name in policies {
            let s = evaluate_named(registry, name, &config, agents, seed, episodes)?;
            rows.extend(SweepRow::from_summary(&s));
        }
    }
    Ok(rows)
}
