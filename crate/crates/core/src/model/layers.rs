//! Network building blocks with hand-derived backward passes.
//!
//! Everything computes in f64. Each forward returns a cache holding exactly
//! the intermediate values its backward needs; backward passes accumulate
//! parameter gradients in place (callers zero them between batches) and
//! return the gradient with respect to the block's input.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fully connected layer, y = W x + b.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub w: Array2<f64>, // out x in
    pub b: Array1<f64>,
}

impl Linear {
    /// Uniform init in [-scale/sqrt(in), scale/sqrt(in)], zero bias.
    pub fn init(out_dim: usize, in_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let r = scale / (in_dim as f64).sqrt();
        Linear {
            w: Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-r..=r)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    /// Accumulates dW and db, returns dx.
    pub fn backward(&self, x: &Array1<f64>, dy: &Array1<f64>, grad: &mut Linear) -> Array1<f64> {
        for (i, &d) in dy.iter().enumerate() {
            grad.w.row_mut(i).scaled_add(d, x);
        }
        grad.b += dy;
        self.w.t().dot(dy)
    }
}

/// Stack of fully connected layers.
///
/// A ReLU follows every layer except, optionally, the last: stream encoder
/// MLPs activate every layer, the fusion head leaves its final logits linear.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

pub(crate) struct MlpCache {
    /// Input to each layer, then the final output.
    xs: Vec<Array1<f64>>,
}

impl Mlp {
    pub fn init(
        in_dim: usize,
        sizes: &[usize],
        relu_last: bool,
        final_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut prev = in_dim;
        for (li, &size) in sizes.iter().enumerate() {
            let scale = if li + 1 == sizes.len() { final_scale } else { 1.0 };
            layers.push(Linear::init(size, prev, scale, rng));
            prev = size;
        }
        Mlp { layers, relu_last }
    }

    pub fn zeros_like(other: &Mlp) -> Self {
        Mlp {
            layers: other
                .layers
                .iter()
                .map(|l| Linear::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
            relu_last: other.relu_last,
        }
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        self.layers.last().map_or(in_dim, |l| l.w.nrows())
    }

    pub fn forward(&self, x: &Array1<f64>, cache: &mut MlpCache) -> Array1<f64> {
        cache.xs.clear();
        let mut cur = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            cache.xs.push(cur.clone());
            let mut y = layer.forward(&cur);
            if self.relu_last || li + 1 < self.layers.len() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            cur = y;
        }
        cache.xs.push(cur.clone());
        cur
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array1<f64>, grad: &mut Mlp) -> Array1<f64> {
        let mut d = dy.clone();
        for li in (0..self.layers.len()).rev() {
            if self.relu_last || li + 1 < self.layers.len() {
                // ReLU mask from the post-activation output of layer li.
                let y = &cache.xs[li + 1];
                for (dv, &yv) in d.iter_mut().zip(y.iter()) {
                    if yv <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            d = self.layers[li].backward(&cache.xs[li], &d, &mut grad.layers[li]);
        }
        d
    }
}

impl MlpCache {
    pub fn new() -> Self {
        MlpCache { xs: Vec::new() }
    }

    /// Output of the last forward pass. With no layers this is the input
    /// itself, matching the identity the empty stack computes.
    pub fn output(&self) -> &Array1<f64> {
        self.xs.last().expect("forward before output")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction of an LSTM. Gate layout in the stacked weight rows is
/// [input, forget, cell, output], each `hidden` rows.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmDir {
    pub w_x: Array2<f64>, // 4H x in
    pub w_h: Array2<f64>, // 4H x H
    pub b: Array1<f64>,   // 4H
}

pub(crate) struct LstmStep {
    x: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    tanh_c: Array1<f64>,
}

impl LstmDir {
    pub fn init(hidden: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut out = LstmDir {
            w_x: Linear::init(4 * hidden, in_dim, 1.0, rng).w,
            w_h: Linear::init(4 * hidden, hidden, 1.0, rng).w,
            b: Array1::zeros(4 * hidden),
        };
        // Positive forget-gate bias keeps early training from flushing state.
        out.b.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        out
    }

    pub fn zeros(hidden: usize, in_dim: usize) -> Self {
        LstmDir {
            w_x: Array2::zeros((4 * hidden, in_dim)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    /// Runs the direction over `steps` input rows; returns the final hidden
    /// state and fills `cache` with one entry per step.
    pub fn forward<'a, I>(&self, steps: I, cache: &mut Vec<LstmStep>) -> Array1<f64>
    where
        I: Iterator<Item = ndarray::ArrayView1<'a, f64>>,
    {
        let hidden = self.hidden();
        cache.clear();
        let mut h = Array1::zeros(hidden);
        let mut c: Array1<f64> = Array1::zeros(hidden);
        for x_view in steps {
            let x = x_view.to_owned();
            let z = self.w_x.dot(&x) + self.w_h.dot(&h) + &self.b;
            let mut i = Array1::zeros(hidden);
            let mut f = Array1::zeros(hidden);
            let mut g = Array1::zeros(hidden);
            let mut o = Array1::zeros(hidden);
            for k in 0..hidden {
                i[k] = sigmoid(z[k]);
                f[k] = sigmoid(z[hidden + k]);
                g[k] = z[2 * hidden + k].tanh();
                o[k] = sigmoid(z[3 * hidden + k]);
            }
            let c_next = &f * &c + &i * &g;
            let tanh_c = c_next.mapv(f64::tanh);
            let h_next = &o * &tanh_c;
            cache.push(LstmStep {
                x,
                h_prev: h,
                c_prev: c,
                i,
                f,
                g,
                o,
                tanh_c,
            });
            h = h_next;
            c = c_next;
        }
        h
    }

    /// Backward through the whole unrolled direction given the gradient of
    /// the final hidden state. Accumulates parameter gradients, returns
    /// per-step input gradients (in step order).
    pub fn backward(
        &self,
        cache: &[LstmStep],
        dh_last: &Array1<f64>,
        grad: &mut LstmDir,
    ) -> Vec<Array1<f64>> {
        let hidden = self.hidden();
        let mut dh = dh_last.clone();
        let mut dc: Array1<f64> = Array1::zeros(hidden);
        let mut dxs = vec![Array1::zeros(0); cache.len()];
        for (t, step) in cache.iter().enumerate().rev() {
            let do_ = &dh * &step.tanh_c;
            let dc_total = &dc + &(&dh * &step.o * step.tanh_c.mapv(|v| 1.0 - v * v));
            let di = &dc_total * &step.g;
            let dg = &dc_total * &step.i;
            let df = &dc_total * &step.c_prev;
            let dc_prev = &dc_total * &step.f;

            let mut dz = Array1::zeros(4 * hidden);
            for k in 0..hidden {
                dz[k] = di[k] * step.i[k] * (1.0 - step.i[k]);
                dz[hidden + k] = df[k] * step.f[k] * (1.0 - step.f[k]);
                dz[2 * hidden + k] = dg[k] * (1.0 - step.g[k] * step.g[k]);
                dz[3 * hidden + k] = do_[k] * step.o[k] * (1.0 - step.o[k]);
            }
            for (r, &d) in dz.iter().enumerate() {
                grad.w_x.row_mut(r).scaled_add(d, &step.x);
                grad.w_h.row_mut(r).scaled_add(d, &step.h_prev);
            }
            grad.b += &dz;
            dxs[t] = self.w_x.t().dot(&dz);
            dh = self.w_h.t().dot(&dz);
            dc = dc_prev;
        }
        dxs
    }
}

/// Bidirectional LSTM; the sequence representation is the concatenation of
/// the two final hidden states (forward direction read last-to-first for the
/// backward pass), width 2H.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BiLstm {
    pub fwd: LstmDir,
    pub bwd: LstmDir,
}

pub(crate) struct BiLstmCache {
    fwd: Vec<LstmStep>,
    bwd: Vec<LstmStep>,
}

impl BiLstmCache {
    pub fn new() -> Self {
        BiLstmCache {
            fwd: Vec::new(),
            bwd: Vec::new(),
        }
    }
}

impl BiLstm {
    pub fn init(hidden: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstm {
            fwd: LstmDir::init(hidden, in_dim, rng),
            bwd: LstmDir::init(hidden, in_dim, rng),
        }
    }

    pub fn zeros_like(other: &BiLstm) -> Self {
        BiLstm {
            fwd: LstmDir::zeros(other.fwd.hidden(), other.fwd.w_x.ncols()),
            bwd: LstmDir::zeros(other.bwd.hidden(), other.bwd.w_x.ncols()),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }

    pub fn forward(&self, input: &Array2<f64>, cache: &mut BiLstmCache) -> Array1<f64> {
        let h_fwd = self.fwd.forward(input.rows().into_iter(), &mut cache.fwd);
        let h_bwd = self.bwd.forward(input.rows().into_iter().rev(), &mut cache.bwd);
        ndarray::concatenate![ndarray::Axis(0), h_fwd, h_bwd]
    }

    /// Returns the gradient with respect to the input matrix.
    pub fn backward(
        &self,
        cache: &BiLstmCache,
        dout: &Array1<f64>,
        grad: &mut BiLstm,
    ) -> Array2<f64> {
        let hf = self.fwd.hidden();
        let dh_fwd = dout.slice(ndarray::s![..hf]).to_owned();
        let dh_bwd = dout.slice(ndarray::s![hf..]).to_owned();
        let dx_fwd = self.fwd.backward(&cache.fwd, &dh_fwd, &mut grad.fwd);
        let dx_bwd = self.bwd.backward(&cache.bwd, &dh_bwd, &mut grad.bwd);
        let steps = dx_fwd.len();
        let in_dim = self.fwd.w_x.ncols();
        let mut dx = Array2::zeros((steps, in_dim));
        for (t, d) in dx_fwd.into_iter().enumerate() {
            dx.row_mut(t).assign(&d);
        }
        // Backward direction step t consumed input row steps-1-t.
        for (t, d) in dx_bwd.into_iter().enumerate() {
            dx.row_mut(steps - 1 - t).scaled_add(1.0, &d);
        }
        dx
    }
}

/// Token embedding table.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Embedding {
    pub table: Array2<f64>, // rows x dim
}

impl Embedding {
    pub fn init(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding {
            table: Array2::from_shape_fn((rows, dim), |_| rng.random_range(-0.5..=0.5)),
        }
    }

    pub fn zeros_like(other: &Embedding) -> Self {
        Embedding {
            table: Array2::zeros(other.table.dim()),
        }
    }

    pub fn forward(&self, id: usize) -> ndarray::ArrayView1<'_, f64> {
        self.table.row(id)
    }

    pub fn backward(&self, id: usize, dy: &ndarray::ArrayView1<'_, f64>, grad: &mut Embedding) {
        grad.table.row_mut(id).scaled_add(1.0, dy);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Central finite difference of a scalar function of one tensor entry.
    fn finite_diff(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / denom;
        assert!(
            rel < 1e-4,
            "{what}: analytic {analytic} vs numeric {numeric} (rel {rel})"
        );
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut r = rng(1);
        let layer = Linear::init(3, 4, 1.0, &mut r);
        let x = Array1::from_shape_fn(4, |_| r.random_range(-1.0..=1.0));
        // Scalar objective: sum of squared outputs.
        let objective = |l: &Linear, x: &Array1<f64>| l.forward(x).mapv(|v| v * v).sum();
        let y = layer.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let mut grad = Linear::zeros(3, 4);
        let dx = layer.backward(&x, &dy, &mut grad);

        for i in 0..3 {
            for j in 0..4 {
                let mut pert = layer.clone();
                let numeric = finite_diff(
                    |v| {
                        pert.w[[i, j]] = v;
                        objective(&pert, &x)
                    },
                    layer.w[[i, j]],
                );
                assert_close(grad.w[[i, j]], numeric, "dW");
            }
            let mut pert = layer.clone();
            let numeric = finite_diff(
                |v| {
                    pert.b[i] = v;
                    objective(&pert, &x)
                },
                layer.b[i],
            );
            assert_close(grad.b[i], numeric, "db");
        }
        for j in 0..4 {
            let mut xp = x.clone();
            let numeric = finite_diff(
                |v| {
                    xp[j] = v;
                    objective(&layer, &xp)
                },
                x[j],
            );
            assert_close(dx[j], numeric, "dx");
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut r = rng(2);
        let mlp = Mlp::init(5, &[4, 3], true, 1.0, &mut r);
        let x = Array1::from_shape_fn(5, |_| r.random_range(-1.0..=1.0));
        let objective = |m: &Mlp, x: &Array1<f64>| {
            let mut c = MlpCache::new();
            m.forward(x, &mut c).sum()
        };
        let mut cache = MlpCache::new();
        let y = mlp.forward(&x, &mut cache);
        let dy = Array1::ones(y.len());
        let mut grad = Mlp::zeros_like(&mlp);
        let dx = mlp.backward(&cache, &dy, &mut grad);

        for li in 0..mlp.layers.len() {
            let (rows, cols) = mlp.layers[li].w.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut pert = mlp.clone();
                    let numeric = finite_diff(
                        |v| {
                            pert.layers[li].w[[i, j]] = v;
                            objective(&pert, &x)
                        },
                        mlp.layers[li].w[[i, j]],
                    );
                    assert_close(grad.layers[li].w[[i, j]], numeric, "mlp dW");
                }
            }
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            let numeric = finite_diff(
                |v| {
                    xp[j] = v;
                    objective(&mlp, &xp)
                },
                x[j],
            );
            assert_close(dx[j], numeric, "mlp dx");
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut r = rng(3);
        let lstm = LstmDir::init(3, 2, &mut r);
        let input = Array2::from_shape_fn((4, 2), |_| r.random_range(-1.0..=1.0));
        let objective = |l: &LstmDir, input: &Array2<f64>| {
            let mut cache = Vec::new();
            l.forward(input.rows().into_iter(), &mut cache).sum()
        };
        let mut cache = Vec::new();
        let h = lstm.forward(input.rows().into_iter(), &mut cache);
        let dh = Array1::ones(h.len());
        let mut grad = LstmDir::zeros(3, 2);
        let dxs = lstm.backward(&cache, &dh, &mut grad);

        for (name, param, g) in [
            ("w_x", &lstm.w_x, &grad.w_x),
            ("w_h", &lstm.w_h, &grad.w_h),
        ] {
            let (rows, cols) = param.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut pert = lstm.clone();
                    let numeric = finite_diff(
                        |v| {
                            match name {
                                "w_x" => pert.w_x[[i, j]] = v,
                                _ => pert.w_h[[i, j]] = v,
                            }
                            objective(&pert, &input)
                        },
                        param[[i, j]],
                    );
                    assert_close(g[[i, j]], numeric, name);
                }
            }
        }
        for i in 0..lstm.b.len() {
            let mut pert = lstm.clone();
            let numeric = finite_diff(
                |v| {
                    pert.b[i] = v;
                    objective(&pert, &input)
                },
                lstm.b[i],
            );
            assert_close(grad.b[i], numeric, "lstm db");
        }
        for t in 0..input.nrows() {
            for j in 0..input.ncols() {
                let mut ip = input.clone();
                let numeric = finite_diff(
                    |v| {
                        ip[[t, j]] = v;
                        objective(&lstm, &ip)
                    },
                    input[[t, j]],
                );
                assert_close(dxs[t][j], numeric, "lstm dx");
            }
        }
    }

    #[test]
    fn bilstm_input_gradient_matches_finite_differences() {
        let mut r = rng(4);
        let net = BiLstm::init(2, 3, &mut r);
        let input = Array2::from_shape_fn((3, 3), |_| r.random_range(-1.0..=1.0));
        let objective = |n: &BiLstm, input: &Array2<f64>| {
            let mut cache = BiLstmCache::new();
            n.forward(input, &mut cache).mapv(|v| v * v).sum()
        };
        let mut cache = BiLstmCache::new();
        let out = net.forward(&input, &mut cache);
        assert_eq!(out.len(), 4);
        let dout = out.mapv(|v| 2.0 * v);
        let mut grad = BiLstm::zeros_like(&net);
        let dx = net.backward(&cache, &dout, &mut grad);
        for t in 0..3 {
            for j in 0..3 {
                let mut ip = input.clone();
                let numeric = finite_diff(
                    |v| {
                        ip[[t, j]] = v;
                        objective(&net, &ip)
                    },
                    input[[t, j]],
                );
                assert_close(dx[[t, j]], numeric, "bilstm dx");
            }
        }
    }

    #[test]
    fn lstm_single_step_works() {
        let mut r = rng(5);
        let lstm = LstmDir::init(4, 3, &mut r);
        let input = Array2::from_shape_fn((1, 3), |_| r.random_range(-1.0..=1.0));
        let mut cache = Vec::new();
        let h = lstm.forward(input.rows().into_iter(), &mut cache);
        assert_eq!(h.len(), 4);
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forget_bias_is_one_at_init() {
        let mut r = rng(6);
        let lstm = LstmDir::init(3, 2, &mut r);
        assert_eq!(lstm.b.slice(ndarray::s![3..6]).sum(), 3.0);
        assert_eq!(lstm.b.slice(ndarray::s![..3]).sum(), 0.0);
    }

    #[test]
    fn bilstm_is_order_sensitive() {
        let mut r = rng(7);
        let net = BiLstm::init(3, 2, &mut r);
        let input = Array2::from_shape_fn((4, 2), |_| r.random_range(-1.0..=1.0));
        let mut reversed = input.clone();
        for (i, row) in input.rows().into_iter().enumerate() {
            reversed.row_mut(3 - i).assign(&row);
        }
        let mut c1 = BiLstmCache::new();
        let mut c2 = BiLstmCache::new();
        let a = net.forward(&input, &mut c1);
        let b = net.forward(&reversed, &mut c2);
        assert!((&a - &b).mapv(f64::abs).sum() > 1e-6);
    }

    #[test]
    fn embedding_backward_hits_only_the_used_row() {
        let mut r = rng(8);
        let emb = Embedding::init(5, 3, &mut r);
        let mut grad = Embedding::zeros_like(&emb);
        let dy = Array1::from_vec(vec![1.0, 2.0, 3.0]);
        emb.backward(2, &dy.view(), &mut grad);
        assert_eq!(grad.table.row(2).to_owned(), dy);
        assert_eq!(grad.table.sum(), 6.0);
    }
}
