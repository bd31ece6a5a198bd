//! Non-learning reference policies.

use num_complex::Complex64;

use crate::env::{raw_from_physical, RawAction};
use crate::rng::RngStream;

/// Uniform action in `[-1, 1]^dim`.
pub fn random_policy(dim: usize, rng: &mut RngStream) -> RawAction {
    RawAction((0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

/// Equal-gain transmission: every antenna at `sqrt(P_max / N_F)` with the
/// phase of the matching channel entry, so all terms of `h^H w` add
/// coherently. A zero channel gives a zero beam.
pub fn egt_beamformer(h: &[Complex64], p_max_mw: f64) -> Vec<Complex64> {
    if h.iter().all(|x| x.norm() == 0.0) {
        return vec![Complex64::new(0.0, 0.0); h.len()];
    }
    let amp = (p_max_mw / h.len() as f64).sqrt();
    h.iter()
        .map(|x| {
            let phase = if x.norm() == 0.0 { 0.0 } else { x.arg() };
            Complex64::from_polar(amp, phase)
        })
        .collect()
}

/// EGT beam and fixed PS ratio for one agent.
pub fn egt_policy(h: &[Complex64], p_max_mw: f64, alpha: f64) -> (Vec<Complex64>, f64) {
    (egt_beamformer(h, p_max_mw), alpha)
}

/// EGT expressed as a raw action.
pub fn egt_raw_action(h: &[Complex64], p_max_mw: f64, alpha: f64) -> RawAction {
    raw_from_physical(&egt_beamformer(h, p_max_mw), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::inner_power;
    use crate::rng::{Purpose, StreamId};

    fn rng(i: u64) -> RngStream {
        RngStream::new(8, StreamId::new(i, Purpose::Baseline, 0))
    }

    #[test]
    fn random_policy_shape_and_mean() {
        let mut r = rng(0);
        let a = random_policy(13, &mut r);
        assert_eq!(a.0.len(), 13);
        assert!(a.0.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(random_policy(13, &mut rng(1)), random_policy(13, &mut rng(1)));
        let n = 100_000;
        let mut sums = [0.0; 13];
        for _ in 0..n {
            for (s, x) in sums.iter_mut().zip(random_policy(13, &mut r).0) {
                *s += x;
            }
        }
        assert!(sums.iter().all(|s| (s / n as f64).abs() < 0.01));
    }

    #[test]
    fn egt_power_and_phase() {
        let mut r = rng(2);
        let h: Vec<Complex64> = (0..6).map(|_| r.complex_normal()).collect();
        let w = egt_beamformer(&h, 100.0);
        let p: f64 = w.iter().map(|x| x.norm_sqr()).sum();
        assert!((p - 100.0).abs() < 1e-9);
        let amp = (100.0f64 / 6.0).sqrt();
        assert!(w.iter().all(|x| (x.norm() - amp).abs() < 1e-12));

        let real: Vec<Complex64> = (1..=6).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let w = egt_beamformer(&real, 100.0);
        assert!(w.iter().all(|x| x.re > 0.0 && x.im.abs() < 1e-12));

        let zero = vec![Complex64::new(0.0, 0.0); 6];
        assert!(egt_beamformer(&zero, 100.0).iter().all(|x| x.norm() == 0.0));
        let (_, a) = egt_policy(&real, 100.0, 0.5);
        assert_eq!(a, 0.5);
    }

    #[test]
    fn egt_dominates_random_desired_power() {
        let mut r = rng(3);
        let trials = 10_000;
        let (mut egt, mut rand) = (0.0, 0.0);
        for _ in 0..trials {
            let h: Vec<Complex64> = (0..6).map(|_| r.complex_normal()).collect();
            egt += inner_power(&h, &egt_beamformer(&h, 100.0));
            let raw = random_policy(13, &mut r);
            let norm = raw.0[..12].iter().map(|x| x * x).sum::<f64>().sqrt();
            let w: Vec<Complex64> = (0..6)
                .map(|i| Complex64::new(raw.0[i], raw.0[6 + i]) * (10.0 / norm))
                .collect();
            rand += inner_power(&h, &w);
        }
        assert!(egt / trials as f64 >= rand / trials as f64);
    }
}
