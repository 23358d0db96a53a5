//! Reverse-mode differentiation over a small, fixed set of batched operations.
//!
//! Every node holds a row-major matrix. Parameters enter the tape as a single
//! flat leaf; affine layers and slices address it by offset, so one backward
//! pass yields the gradient of the whole flat parameter vector.

use crate::error::{check_finite, Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn column(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self::new(rows, 1, data)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AffineLayout {
    pub w_off: usize,
    pub b_off: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, p: Var, layout: AffineLayout },
    Slice { p: Var, off: usize },
    Tanh(Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Min(Var, Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    LogSigmoid(Var),
    GaussianLogProb {
        mean: Var,
        log_std: Var,
        actions: Vec<f64>,
    },
    GaussianEntropy(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Numerically stable `log(1 / (1 + exp(-x)))`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = x · W + b` for `n` rows, reading `W` (fan_in × fan_out, row-major)
/// and `b` from `params` at the layout offsets.
pub(crate) fn affine_forward(x: &[f64], params: &[f64], layout: AffineLayout, out: &mut [f64]) {
    let AffineLayout {
        w_off,
        b_off,
        fan_in,
        fan_out,
    } = layout;
    let n = x.len() / fan_in;
    let w = &params[w_off..w_off + fan_in * fan_out];
    let b = &params[b_off..b_off + fan_out];
    for r in 0..n {
        let row = &mut out[r * fan_out..(r + 1) * fan_out];
        row.copy_from_slice(b);
        for (i, &xi) in x[r * fan_in..(r + 1) * fan_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wr = &w[i * fan_out..(i + 1) * fan_out];
            for (o, &wij) in row.iter_mut().zip(wr) {
                *o += xi * wij;
            }
        }
    }
}

pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.data.len(), 1, "expected a scalar node");
        t.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, values: &[f64]) -> Var {
        self.push(Tensor::new(1, values.len(), values.to_vec()), Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub(crate) fn affine(&mut self, x: Var, p: Var, layout: AffineLayout) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols, layout.fan_in, "affine input width");
        let n = xv.rows;
        let mut out = vec![0.0; n * layout.fan_out];
        affine_forward(&xv.data, &self.value(p).data, layout, &mut out);
        let rg = self.rg(x) || self.rg(p);
        self.push(
            Tensor::new(n, layout.fan_out, out),
            Op::Affine { x, p, layout },
            rg,
        )
    }

    /// Reads `rows × cols` consecutive entries of `p` starting at `off`.
    pub fn slice(&mut self, p: Var, off: usize, rows: usize, cols: usize) -> Var {
        let data = self.value(p).data[off..off + rows * cols].to_vec();
        let rg = self.rg(p);
        self.push(Tensor::new(rows, cols, data), Op::Slice { p, off }, rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let value = Tensor::new(av.rows, av.cols, av.data.iter().map(|&x| f(x)).collect());
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "elementwise shapes");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.rows, av.cols, data);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.data.iter().sum::<f64>() / av.data.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data.chunks(av.cols).map(|r| r.iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::column(data), Op::RowSum(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut data = vec![0.0; av.data.len()];
        for (row, out) in av.data.chunks(av.cols).zip(data.chunks_mut(av.cols)) {
            log_softmax_row(row, out);
        }
        let value = Tensor::new(av.rows, av.cols, data);
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Picks `a[r, idx[r]]` for every row.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, idx.len(), "gather index count");
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| av.data[r * av.cols + c])
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::column(data), Op::Gather(a, idx), rg)
    }

    /// Per-row diagonal Gaussian log-density of constant `actions` (n × d)
    /// under `mean` (n × d) and a shared `log_std` (1 × d).
    pub fn gaussian_log_prob(&mut self, mean: Var, log_std: Var, actions: Vec<f64>) -> Var {
        let (mv, sv) = (self.value(mean), self.value(log_std));
        let d = mv.cols;
        assert_eq!(sv.data.len(), d, "log_std width");
        assert_eq!(actions.len(), mv.data.len(), "action shape");
        let data = mv
            .data
            .chunks(d)
            .zip(actions.chunks(d))
            .map(|(mu, a)| gaussian_log_density(mu, &sv.data, a))
            .collect();
        let rg = self.rg(mean) || self.rg(log_std);
        self.push(
            Tensor::column(data),
            Op::GaussianLogProb {
                mean,
                log_std,
                actions,
            },
            rg,
        )
    }

    pub fn gaussian_entropy(&mut self, log_std: Var) -> Var {
        let h = gaussian_entropy(&self.value(log_std).data);
        let rg = self.rg(log_std);
        self.push(Tensor::scalar(h), Op::GaussianEntropy(log_std), rg)
    }

    /// Gradient of scalar `root` with respect to the leaf `wrt`.
    pub fn gradient(&self, root: Var, wrt: Var) -> Vec<f64> {
        assert_eq!(self.value(root).data.len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if id == wrt.0 {
                return g;
            }
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        vec![0.0; self.value(wrt).data.len()]
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.data.len()]);
            f(slot);
        };
        let out = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, p, layout } => {
                let AffineLayout {
                    w_off,
                    b_off,
                    fan_in,
                    fan_out,
                } = *layout;
                let xv = &self.value(*x).data;
                let pv = &self.value(*p).data;
                let n = xv.len() / fan_in;
                acc(*p, &mut |gp| {
                    for r in 0..n {
                        let gr = &g[r * fan_out..(r + 1) * fan_out];
                        for (gb, &gi) in gp[b_off..b_off + fan_out].iter_mut().zip(gr) {
                            *gb += gi;
                        }
                        for i in 0..fan_in {
                            let xi = xv[r * fan_in + i];
                            if xi == 0.0 {
                                continue;
                            }
                            let gw = &mut gp[w_off + i * fan_out..w_off + (i + 1) * fan_out];
                            for (gwij, &gi) in gw.iter_mut().zip(gr) {
                                *gwij += xi * gi;
                            }
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for r in 0..n {
                        let gr = &g[r * fan_out..(r + 1) * fan_out];
                        for i in 0..fan_in {
                            let w = &pv[w_off + i * fan_out..w_off + (i + 1) * fan_out];
                            gx[r * fan_in + i] += w.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
            }
            Op::Slice { p, off } => acc(*p, &mut |gp| {
                for (d, &gi) in gp[*off..*off + g.len()].iter_mut().zip(g) {
                    *d += gi;
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gi * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => acc(*a, &mut |ga| {
                for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    if y > 0.0 {
                        *d += gi;
                    }
                }
            }),
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (d, &gi) in gb.iter_mut().zip(g) {
                        *d -= gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &mut |ga| {
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (d, &gi) in ga.iter_mut().zip(g) {
                    *d += c * gi;
                }
            }),
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gi * y;
                }
            }),
            Op::Log(a) => {
                let av = &self.value(*a).data;
                acc(*a, &mut |ga| {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        *d += gi / x;
                    }
                });
            }
            Op::Min(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &mut |ga| {
                    for (k, d) in ga.iter_mut().enumerate() {
                        if av[k] <= bv[k] {
                            *d += g[k];
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for (k, d) in gb.iter_mut().enumerate() {
                        if av[k] > bv[k] {
                            *d += g[k];
                        }
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = &self.value(*a).data;
                acc(*a, &mut |ga| {
                    for (k, d) in ga.iter_mut().enumerate() {
                        if av[k] >= *lo && av[k] <= *hi {
                            *d += g[k];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean(a) => acc(*a, &mut |ga| {
                let s = g[0] / ga.len() as f64;
                for d in ga.iter_mut() {
                    *d += s;
                }
            }),
            Op::RowSum(a) => {
                let cols = self.value(*a).cols;
                acc(*a, &mut |ga| {
                    for (k, d) in ga.iter_mut().enumerate() {
                        *d += g[k / cols];
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let cols = node.value.cols;
                acc(*a, &mut |ga| {
                    for ((gr, y), d) in g.chunks(cols).zip(out.chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let total: f64 = gr.iter().sum();
                        for k in 0..cols {
                            d[k] += gr[k] - y[k].exp() * total;
                        }
                    }
                });
            }
            Op::Gather(a, idx) => {
                let cols = self.value(*a).cols;
                acc(*a, &mut |ga| {
                    for (r, &c) in idx.iter().enumerate() {
                        ga[r * cols + c] += g[r];
                    }
                });
            }
            Op::LogSigmoid(a) => {
                let av = &self.value(*a).data;
                acc(*a, &mut |ga| {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        *d += gi * sigmoid(-x);
                    }
                });
            }
            Op::GaussianLogProb {
                mean,
                log_std,
                actions,
            } => {
                let mv = &self.value(*mean).data;
                let sv = &self.value(*log_std).data;
                let d = sv.len();
                let inv_var: Vec<f64> = sv.iter().map(|s| (-2.0 * s).exp()).collect();
                acc(*mean, &mut |gm| {
                    for k in 0..mv.len() {
                        gm[k] += g[k / d] * (actions[k] - mv[k]) * inv_var[k % d];
                    }
                });
                acc(*log_std, &mut |gs| {
                    for k in 0..mv.len() {
                        let z2 = (actions[k] - mv[k]).powi(2) * inv_var[k % d];
                        gs[k % d] += g[k / d] * (z2 - 1.0);
                    }
                });
            }
            Op::GaussianEntropy(a) => acc(*a, &mut |ga| {
                for v in ga.iter_mut() {
                    *v += g[0];
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn gaussian_log_density(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) * (-s).exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

pub(crate) fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 + HALF_LN_2PI).sum()
}

/// Evaluates `loss` on a tape seeded with `params` as one flat leaf and
/// returns its value together with the gradient with respect to `params`.
pub fn value_and_grad<F>(params: &[f64], loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p = tape.param(params);
    let root = loss(&mut tape, p)?;
    let value = tape.scalar_value(root);
    if !value.is_finite() {
        return Err(Error::Numeric {
            what: "loss".into(),
            index: 0,
            value,
        });
    }
    let grad = tape.gradient(root, p);
    check_finite("gradient", &grad)?;
    Ok((value, grad))
}
