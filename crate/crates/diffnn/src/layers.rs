//! Dense layers, MLPs and a gated recurrent cell.

use ndarray::Array2;
use rand::Rng;

use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Glorot-uniform matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot(input, output, rng));
        let b = store.add(format!("{name}.b"), Array2::zeros((1, output)));
        Self { w, b, input, output }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        assert_eq!(tape.shape(x).1, self.input, "linear: input width");
        let y = tape.matmul(x, p[self.w]);
        tape.add_row(y, p[self.b])
    }
}

/// SiLU hidden layers followed by a linear head.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let n = self.layers.len();
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, p, h);
            if i + 1 < n {
                h = tape.silu(h);
            }
        }
        h
    }
}

/// `r, u = sigmoid([x, h] W_g + b_g)`, `n = tanh(x W_n + b_n + r * (h U_n + b_hn))`,
/// `h' = (1 - u) * h + u * n`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_gates: ParamId,
    pub b_gates: ParamId,
    pub w_cand: ParamId,
    pub b_cand: ParamId,
    pub u_cand: ParamId,
    pub b_hcand: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_gates: store.add(format!("{name}.w_gates"), glorot(input + hidden, 2 * hidden, rng)),
            b_gates: store.add(format!("{name}.b_gates"), Array2::zeros((1, 2 * hidden))),
            w_cand: store.add(format!("{name}.w_cand"), glorot(input, hidden, rng)),
            b_cand: store.add(format!("{name}.b_cand"), Array2::zeros((1, hidden))),
            u_cand: store.add(format!("{name}.u_cand"), glorot(hidden, hidden, rng)),
            b_hcand: store.add(format!("{name}.b_hcand"), Array2::zeros((1, hidden))),
            input,
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Var {
        assert_eq!(tape.shape(x).1, self.input, "gru: input width");
        assert_eq!(tape.shape(h).1, self.hidden, "gru: hidden width");
        let xh = tape.concat_cols(&[x, h]);
        let g = tape.matmul(xh, p[self.w_gates]);
        let g = tape.add_row(g, p[self.b_gates]);
        let g = tape.sigmoid(g);
        let r = tape.slice_cols(g, 0, self.hidden);
        let u = tape.slice_cols(g, self.hidden, 2 * self.hidden);

        let hc = tape.matmul(h, p[self.u_cand]);
        let hc = tape.add_row(hc, p[self.b_hcand]);
        let rh = tape.mul(r, hc);
        let xc = tape.matmul(x, p[self.w_cand]);
        let xc = tape.add_row(xc, p[self.b_cand]);
        let n = tape.add(xc, rh);
        let n = tape.tanh(n);

        // h + u * (n - h)
        let diff = tape.sub(n, h);
        let step = tape.mul(u, diff);
        tape.add(h, step)
    }
}
