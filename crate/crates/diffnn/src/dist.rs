//! Diagonal Gaussian distributions on the tape.

use ndarray::Array2;

use crate::tape::{Tape, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Maps an unbounded value smoothly into `(LOG_STD_MIN, LOG_STD_MAX)`.
pub fn soft_clamp_log_std(tape: &mut Tape, raw: Var) -> Var {
    let mid = 0.5 * (LOG_STD_MIN + LOG_STD_MAX);
    let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    let x = tape.scale(raw, 1.0 / half);
    let x = tape.tanh(x);
    let x = tape.scale(x, half);
    tape.add_scalar(x, mid)
}

pub fn soft_clamp_log_std_value(raw: f64) -> f64 {
    let mid = 0.5 * (LOG_STD_MIN + LOG_STD_MAX);
    let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    mid + half * (raw / half).tanh()
}

/// Batch of diagonal Gaussians; `mean` and `log_std` are `n x d`.
#[derive(Debug, Clone, Copy)]
pub struct DiagonalGaussian {
    pub mean: Var,
    pub log_std: Var,
}

impl DiagonalGaussian {
    /// Splits an `n x 2d` head output into mean and clamped log-std.
    pub fn from_head(tape: &mut Tape, head: Var) -> Self {
        let w = tape.shape(head).1;
        assert!(w % 2 == 0, "gaussian head width must be even");
        let d = w / 2;
        let mean = tape.slice_cols(head, 0, d);
        let raw = tape.slice_cols(head, d, w);
        let log_std = soft_clamp_log_std(tape, raw);
        Self { mean, log_std }
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.shape(self.mean).1
    }

    pub fn std(&self, tape: &mut Tape) -> Var {
        tape.exp(self.log_std)
    }

    /// Reparameterized sample `mean + std * eps` with `eps` supplied.
    pub fn rsample(&self, tape: &mut Tape, eps: Array2<f64>) -> Var {
        assert_eq!(eps.dim(), tape.shape(self.mean), "rsample: noise shape");
        let e = tape.constant(eps);
        let s = tape.exp(self.log_std);
        let n = tape.mul(s, e);
        tape.add(self.mean, n)
    }

    pub fn detach(&self, tape: &mut Tape) -> Self {
        Self {
            mean: tape.detach(self.mean),
            log_std: tape.detach(self.log_std),
        }
    }

    /// Per-row log density at `x`, as an `n x 1` column.
    pub fn log_prob(&self, tape: &mut Tape, x: Var) -> Var {
        let d = tape.shape(self.mean).1 as f64;
        let diff = tape.sub(x, self.mean);
        let neg2 = tape.scale(self.log_std, -2.0);
        let inv_var = tape.exp(neg2);
        let sq = tape.square(diff);
        let z = tape.mul(sq, inv_var);
        let z = tape.scale(z, -0.5);
        let nl = tape.sub(z, self.log_std);
        let s = tape.sum_cols(nl);
        tape.add_scalar(s, -0.5 * d * (2.0 * std::f64::consts::PI).ln())
    }

    /// Per-row differential entropy, `n x 1`.
    pub fn entropy(&self, tape: &mut Tape) -> Var {
        let d = tape.shape(self.mean).1 as f64;
        let s = tape.sum_cols(self.log_std);
        tape.add_scalar(s, 0.5 * d * (1.0 + (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Closed-form `KL(q || p)` per row, summed over dimensions (`n x 1`).
pub fn kl_diag_gauss(tape: &mut Tape, q: &DiagonalGaussian, p: &DiagonalGaussian) -> Var {
    // log sp - log sq + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2
    let log_ratio = tape.sub(p.log_std, q.log_std);
    let d2 = tape.scale(log_ratio, -2.0);
    let var_ratio = tape.exp(d2);
    let dm = tape.sub(q.mean, p.mean);
    let dm2 = tape.square(dm);
    let neg2 = tape.scale(p.log_std, -2.0);
    let inv_vp = tape.exp(neg2);
    let mahal = tape.mul(dm2, inv_vp);
    let quad = tape.add(var_ratio, mahal);
    let quad = tape.scale(quad, 0.5);
    let k = tape.add(log_ratio, quad);
    let k = tape.add_scalar(k, -0.5);
    tape.sum_cols(k)
}

/// Scalar KL for plain vectors; used for checks and diagnostics.
pub fn kl_diag_gauss_values(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> f64 {
    (0..mq.len())
        .map(|i| {
            let vq = (2.0 * lq[i]).exp();
            let vp = (2.0 * lp[i]).exp();
            lp[i] - lq[i] + (vq + (mq[i] - mp[i]).powi(2)) / (2.0 * vp) - 0.5
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gauss(t: &mut Tape, m: Array2<f64>, l: Array2<f64>) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: t.constant(m),
            log_std: t.constant(l),
        }
    }

    #[test]
    fn kl_examples() {
        let mut t = Tape::new();
        let q = gauss(&mut t, array![[1.0]], array![[0.0]]);
        let p = gauss(&mut t, array![[0.0]], array![[0.0]]);
        let k = kl_diag_gauss(&mut t, &q, &p);
        assert!((t.scalar_value(k) - 0.5).abs() < 1e-15);
        let k0 = kl_diag_gauss(&mut t, &q, &q);
        assert_eq!(t.scalar_value(k0), 0.0);
    }

    #[test]
    fn clamp_range() {
        for raw in [-1e6, -10.0, 0.0, 3.0, 1e6] {
            let v = soft_clamp_log_std_value(raw);
            assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        }
        let mut t = Tape::new();
        let h = t.constant(array![[0.0, 0.0]]);
        let g = DiagonalGaussian::from_head(&mut t, h);
        assert!((t.scalar_value(g.log_std) - (-1.5)).abs() < 1e-15);
    }

    #[test]
    fn log_prob_standard_normal_at_zero() {
        let mut t = Tape::new();
        let g = gauss(&mut t, array![[0.0, 0.0]], array![[0.0, 0.0]]);
        let x = t.constant(array![[0.0, 0.0]]);
        let lp = g.log_prob(&mut t, x);
        assert!((t.scalar_value(lp) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }
}
