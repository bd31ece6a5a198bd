//! Received powers, interference, SINR, rates and harvested energy.
//!
//! All powers are linear mW. Every function here is pure.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::NetworkState;
use crate::params::SystemConfig;

/// FBS beamformers and PS ratios for every FUE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    /// w_k, sqrt(mW) units.
    pub beamformers: Vec<Vec<Complex64>>,
    /// alpha_k in [0, 1].
    pub ps_ratios: Vec<f64>,
}

impl JointAction {
    pub fn zeros(num_fues: usize, fbs_antennas: usize) -> Self {
        Self {
            beamformers: vec![vec![Complex64::new(0.0, 0.0); fbs_antennas]; num_fues],
            ps_ratios: vec![0.0; num_fues],
        }
    }

    /// Checks the per-beam power budget and the PS range.
    pub fn is_feasible(&self, p_max_mw: f64) -> bool {
        self.beamformers
            .iter()
            .all(|w| w.iter().map(|x| x.norm_sqr()).sum::<f64>() <= p_max_mw + 1e-9)
            && self.ps_ratios.iter().all(|a| (0.0..=1.0).contains(a))
    }
}

/// Every per-slot quantity derived from a network state and a joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub sue_sinr: Vec<f64>,
    pub sue_rates: Vec<f64>,
    pub fue_sinr: Vec<f64>,
    pub fue_rates: Vec<f64>,
    /// |h_k^H w_k|^2
    pub fue_signal: Vec<f64>,
    pub fue_interference_co: Vec<f64>,
    pub fue_interference_sat: Vec<f64>,
    pub sue_signal: Vec<f64>,
    pub sue_interference_sat: Vec<f64>,
    pub sue_interference_ter: Vec<f64>,
    /// I_{k,m}, indexed `[k][m]`.
    pub attribution: Vec<Vec<f64>>,
    pub eh_input: Vec<f64>,
    pub harvested: Vec<f64>,
}

impl SlotOutcome {
    /// Share w_{k,m} of SUE m's terrestrial interference caused by beam k;
    /// zero when the SUE sees no terrestrial interference.
    pub fn attribution_weight(&self, k: usize, m: usize) -> f64 {
        let total = self.sue_interference_ter[m];
        if total > 0.0 {
            self.attribution[k][m] / total
        } else {
            0.0
        }
    }

    pub fn fue_sum_rate(&self) -> f64 {
        self.fue_rates.iter().sum()
    }

    pub fn fue_interference_total(&self, k: usize) -> f64 {
        self.fue_interference_co[k] + self.fue_interference_sat[k]
    }
}

/// `|a^H b|^2`
pub fn inner_power(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
        .norm_sqr()
}

pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

fn sue_terms(net: &NetworkState, act: &JointAction, m: usize) -> (f64, f64, f64) {
    let h = &net.sat_to_sue[m].gains;
    let signal = inner_power(h, &net.sat_beams[m]);
    // beam m' arrives through SUE m's own channel
    let i_sat = net
        .sat_beams
        .iter()
        .enumerate()
        .filter(|&(mp, _)| mp != m)
        .map(|(_, v)| inner_power(h, v))
        .sum();
    let i_ter = act
        .beamformers
        .iter()
        .enumerate()
        .map(|(k, w)| inner_power(&net.fbs_to_sue[m][k].gains, w))
        .sum();
    (signal, i_sat, i_ter)
}

fn fue_terms(net: &NetworkState, act: &JointAction, k: usize) -> (f64, f64, f64) {
    let h = &net.fbs_to_fue[k].gains;
    let signal = inner_power(h, &act.beamformers[k]);
    let i_co = act
        .beamformers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, w)| inner_power(h, w))
        .sum();
    let g = &net.sat_to_fue[k].gains;
    let i_sat = net.sat_beams.iter().map(|v| inner_power(g, v)).sum();
    (signal, i_co, i_sat)
}

/// SINR at SUE m.
pub fn sue_sinr(net: &NetworkState, act: &JointAction, m: usize, config: &SystemConfig) -> f64 {
    let (s, i_sat, i_ter) = sue_terms(net, act, m);
    s / (i_sat + i_ter + config.sigma_a_mw())
}

/// Effective information-decoding SINR at FUE k under power splitting.
pub fn fue_sinr(net: &NetworkState, act: &JointAction, k: usize, config: &SystemConfig) -> f64 {
    let (s, i_co, i_sat) = fue_terms(net, act, k);
    let a = act.ps_ratios[k];
    a * s / (a * (i_co + i_sat) + config.sigma_b_mw())
}

/// RF power routed to the harvester at FUE k.
pub fn eh_input_power(net: &NetworkState, act: &JointAction, k: usize) -> f64 {
    let (s, i_co, i_sat) = fue_terms(net, act, k);
    (1.0 - act.ps_ratios[k]) * (s + i_co + i_sat)
}

/// Logistic nonlinear harvester, clamped to `[0, E_max]`.
pub fn harvested_power(p_eh_mw: f64, config: &SystemConfig) -> f64 {
    let e_max = config.eh.e_max_mw;
    let mu = config.eh.mu;
    let nu = config.eh.nu_mw;
    let omega = 1.0 / (1.0 + (mu * nu).exp());
    let logistic = e_max / (1.0 + (-mu * (p_eh_mw - nu)).exp());
    let e = (logistic - e_max * omega) / (1.0 - omega);
    e.clamp(0.0, e_max)
}

/// Evaluates one slot.
pub fn evaluate_slot(net: &NetworkState, act: &JointAction, config: &SystemConfig) -> SlotOutcome {
    let m_count = net.num_sues();
    let k_count = net.num_fues();
    let sigma_a = config.sigma_a_mw();
    let sigma_b = config.sigma_b_mw();

    let mut attribution = vec![vec![0.0; m_count]; k_count];
    let mut sue_signal = Vec::with_capacity(m_count);
    let mut sue_interference_sat = Vec::with_capacity(m_count);
    let mut sue_interference_ter = Vec::with_capacity(m_count);
    let mut sue_sinr = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let (s, i_sat, _) = sue_terms(net, act, m);
        let mut i_ter = 0.0;
        for (k, w) in act.beamformers.iter().enumerate() {
            let ikm = inner_power(&net.fbs_to_sue[m][k].gains, w);
            attribution[k][m] = ikm;
            i_ter += ikm;
        }
        sue_signal.push(s);
        sue_interference_sat.push(i_sat);
        sue_interference_ter.push(i_ter);
        sue_sinr.push(s / (i_sat + i_ter + sigma_a));
    }

    let mut fue_signal = Vec::with_capacity(k_count);
    let mut fue_interference_co = Vec::with_capacity(k_count);
    let mut fue_interference_sat = Vec::with_capacity(k_count);
    let mut fue_sinr = Vec::with_capacity(k_count);
    let mut eh_input = Vec::with_capacity(k_count);
    let mut harvested = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let (s, i_co, i_sat) = fue_terms(net, act, k);
        let a = act.ps_ratios[k];
        fue_signal.push(s);
        fue_interference_co.push(i_co);
        fue_interference_sat.push(i_sat);
        fue_sinr.push(a * s / (a * (i_co + i_sat) + sigma_b));
        let p = (1.0 - a) * (s + i_co + i_sat);
        eh_input.push(p);
        harvested.push(harvested_power(p, config));
    }

    SlotOutcome {
        sue_rates: sue_sinr.iter().map(|&g| rate(g)).collect(),
        fue_rates: fue_sinr.iter().map(|&g| rate(g)).collect(),
        sue_sinr,
        fue_sinr,
        fue_signal,
        fue_interference_co,
        fue_interference_sat,
        sue_signal,
        sue_interference_sat,
        sue_interference_ter,
        attribution,
        eh_input,
        harvested,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::rng::{Purpose, RngStream, StreamId};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_action(config: &SystemConfig, rng: &mut RngStream) -> JointAction {
        let p = config.p_max_mw();
        let nf = config.fbs_antennas();
        JointAction {
            beamformers: (0..config.num_fues())
                .map(|_| {
                    let v: Vec<Complex64> = (0..nf).map(|_| rng.complex_normal()).collect();
                    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                    v.iter().map(|x| x * (p.sqrt() / n)).collect()
                })
                .collect(),
            ps_ratios: (0..config.num_fues()).map(|_| rng.uniform()).collect(),
        }
    }

    #[test]
    fn eh_examples() {
        let cfg = SystemConfig::default();
        assert_eq!(harvested_power(0.0, &cfg), 0.0);
        assert!((harvested_power(1e6, &cfg) - 24.0).abs() < 1e-9);
        let omega = 1.0 / (1.0 + 3.6f64.exp());
        let oracle = (12.0 - 24.0 * omega) / (1.0 - omega);
        assert!((oracle - 11.672).abs() < 1e-3);
        assert!((harvested_power(0.024, &cfg) - oracle).abs() < 1e-9);
    }

    #[test]
    fn eh_monotone_bounded() {
        let cfg = SystemConfig::default();
        let mut prev = 0.0;
        for i in 0..10_000 {
            let p = i as f64 * 1e-5;
            let e = harvested_power(p, &cfg);
            assert!(e >= prev && (0.0..=24.0).contains(&e));
            prev = e;
        }
    }

    #[test]
    fn sinr_unit_case() {
        let cfg = SystemConfig::default();
        let mut net = ChannelModel::new(&cfg, 0, 0).network_state();
        // only beam 0 on, desired power exactly sigma_a^2
        let sigma = cfg.sigma_a_mw();
        for v in net.sat_beams.iter_mut().skip(1) {
            v.iter_mut().for_each(|x| *x = c(0.0, 0.0));
        }
        net.sat_to_sue[0].gains = vec![c(0.0, 0.0); 8];
        net.sat_to_sue[0].gains[0] = c(1.0, 0.0);
        net.sat_beams[0] = vec![c(0.0, 0.0); 8];
        net.sat_beams[0][0] = c(sigma.sqrt(), 0.0);
        let act = JointAction::zeros(2, 6);
        let g = sue_sinr(&net, &act, 0, &cfg);
        assert!((g - 1.0).abs() < 1e-12);
        assert!((rate(g) - 1.0).abs() < 1e-12);
        let out = evaluate_slot(&net, &act, &cfg);
        assert!(out.sue_interference_ter.iter().all(|&i| i == 0.0));
    }

    #[test]
    fn fue_sinr_examples() {
        let cfg = SystemConfig::default();
        let mut net = ChannelModel::new(&cfg, 0, 0).network_state();
        // kill satellite interference into FUE 0 and the other beam
        net.sat_to_fue[0].gains = vec![c(0.0, 0.0); 8];
        net.fbs_to_fue[0].gains = vec![c(0.0, 0.0); 6];
        net.fbs_to_fue[0].gains[0] = c(1.0, 0.0);
        let mut act = JointAction::zeros(2, 6);
        act.beamformers[0][0] = c(10.0, 0.0);
        act.ps_ratios[0] = 1.0;
        let g = fue_sinr(&net, &act, 0, &cfg);
        let expected = 100.0 / 10f64.powf(-7.5);
        assert!((g - expected).abs() / expected < 1e-12);
        assert!((g - 3.1623e9).abs() / 3.1623e9 < 1e-4);
        assert!((rate(g) - 31.56).abs() < 0.01);

        act.ps_ratios[0] = 0.0;
        assert_eq!(fue_sinr(&net, &act, 0, &cfg), 0.0);
        assert_eq!(rate(0.0), 0.0);
    }

    #[test]
    fn fue_sinr_monotone_in_alpha() {
        let cfg = SystemConfig::default();
        let net = ChannelModel::new(&cfg, 4, 1).network_state();
        let mut r = RngStream::new(1, StreamId::new(0, Purpose::Test, 0));
        let mut act = random_action(&cfg, &mut r);
        let mut prev = -1.0;
        for i in 0..=100 {
            act.ps_ratios[0] = i as f64 / 100.0;
            let g = fue_sinr(&net, &act, 0, &cfg);
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn eh_input_limits() {
        let cfg = SystemConfig::default();
        let net = ChannelModel::new(&cfg, 4, 1).network_state();
        let mut r = RngStream::new(1, StreamId::new(0, Purpose::Test, 1));
        let mut act = random_action(&cfg, &mut r);
        act.ps_ratios[1] = 1.0;
        assert_eq!(eh_input_power(&net, &act, 1), 0.0);
        act.ps_ratios[1] = 0.0;
        let (s, i, j) = fue_terms(&net, &act, 1);
        assert_eq!(eh_input_power(&net, &act, 1), s + i + j);
    }

    #[test]
    fn attribution_weights() {
        let cfg = SystemConfig::default();
        let net = ChannelModel::new(&cfg, 4, 1).network_state();
        let mut out = evaluate_slot(&net, &JointAction::zeros(2, 6), &cfg);
        out.attribution[0][1] = 1.0;
        out.attribution[1][1] = 3.0;
        out.sue_interference_ter[1] = 4.0;
        assert_eq!(out.attribution_weight(0, 1), 0.25);
        assert_eq!(out.attribution_weight(1, 1), 0.75);
        // no terrestrial interference -> zero weight
        assert_eq!(out.attribution_weight(0, 0), 0.0);
    }

    #[test]
    fn zero_action_outcome() {
        let cfg = SystemConfig::default();
        let net = ChannelModel::new(&cfg, 9, 3).network_state();
        let out = evaluate_slot(&net, &JointAction::zeros(2, 6), &cfg);
        assert!(out.fue_rates.iter().all(|&r| r == 0.0));
        for k in 0..2 {
            // alpha = 0: everything goes to the harvester, only satellite power arrives
            assert_eq!(out.eh_input[k], out.fue_interference_sat[k]);
            assert_eq!(out.harvested[k], harvested_power(out.fue_interference_sat[k], &cfg));
        }
    }

    #[test]
    fn phase_invariance() {
        let cfg = SystemConfig::default();
        let net = ChannelModel::new(&cfg, 2, 5).network_state();
        let mut r = RngStream::new(3, StreamId::new(0, Purpose::Test, 2));
        for _ in 0..20 {
            let act = random_action(&cfg, &mut r);
            let base = evaluate_slot(&net, &act, &cfg);
            let mut rotated = act.clone();
            for w in rotated.beamformers.iter_mut() {
                let ph = Complex64::from_polar(1.0, r.uniform_range(0.0, 6.28));
                w.iter_mut().for_each(|x| *x *= ph);
            }
            let rot = evaluate_slot(&net, &rotated, &cfg);
            let close = |a: &[f64], b: &[f64]| {
                a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300))
            };
            assert!(close(&base.fue_rates, &rot.fue_rates));
            assert!(close(&base.sue_rates, &rot.sue_rates));
            assert!(close(&base.harvested, &rot.harvested));
            assert!(close(&base.sue_interference_ter, &rot.sue_interference_ter));
            for k in 0..2 {
                assert!(close(&base.attribution[k], &rot.attribution[k]));
            }
        }
    }

    #[test]
    fn attribution_sums_to_terrestrial_interference() {
        let cfg = SystemConfig::default();
        let net = ChannelModel::new(&cfg, 2, 6).network_state();
        let mut r = RngStream::new(3, StreamId::new(0, Purpose::Test, 3));
        for _ in 0..50 {
            let out = evaluate_slot(&net, &random_action(&cfg, &mut r), &cfg);
            for m in 0..3 {
                let s: f64 = (0..2).map(|k| out.attribution[k][m]).sum();
                assert_eq!(s, out.sue_interference_ter[m]);
                let w: f64 = (0..2).map(|k| out.attribution_weight(k, m)).sum();
                assert!((w - 1.0).abs() < 1e-12);
            }
            for (&g, &rt) in out.fue_sinr.iter().zip(&out.fue_rates) {
                assert!(rt >= 0.0 && ((rt == 0.0) == (g == 0.0)));
            }
        }
    }
}
