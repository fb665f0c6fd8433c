use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Real, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Input,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Transpose(Var),
    Reshape(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Dropout { x: Var, mask: Vec<F> },
    AvgPoolRows { x: Var, win: usize, stride: usize },
    MeanRows(Var),
    Conv1d { x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize },
    CrossEntropy { logits: Var, label: usize },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Gradients of a scalar loss with respect to the parameters used in a graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients<F> {
    by_param: BTreeMap<ParamId, Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[F])> {
        self.by_param.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

/// Tape of operations in creation (= topological) order.
///
/// A graph is single-use: build it with a forward pass, call
/// [`Graph::backward`] once, then drop it.
#[derive(Debug, Clone, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor<F>) -> Result<Var, TensorError> {
        self.push(value, Op::Input, "input")
    }

    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Result<Var, TensorError> {
        self.push(store.get(id).clone(), Op::Param(id), "param")
    }

    /// `x · wᵀ + b` for `x: n×a`, `w: o×a`, `b: o`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (n, a) = self.value(x).dims2();
        let (o, a2) = self.value(w).dims2();
        if a != a2 || self.value(w).shape().len() != 2 {
            return Err(mismatch("affine", format!("x is {n}×{a}, w is {o}×{a2}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(mismatch("affine", format!("bias has {} values, expected {o}", self.value(b).len())));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![F::zero(); n * o];
        for i in 0..n {
            let xr = &xv[i * a..(i + 1) * a];
            for j in 0..o {
                let wr = &wv[j * a..(j + 1) * a];
                let mut acc = bv.map_or(F::zero(), |b| b[j]);
                for (p, q) in xr.iter().zip(wr) {
                    acc = acc + *p * *q;
                }
                out[i * o + j] = acc;
            }
        }
        self.push(Tensor::new(vec![n, o], out)?, Op::Affine { x, w, b }, "affine")
    }

    /// `a · b` for `a: m×n`, `b: n×p`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).dims2();
        let (n2, p) = self.value(b).dims2();
        if n != n2 {
            return Err(mismatch("matmul", format!("{m}×{n} · {n2}×{p}")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![F::zero(); m * p];
        for i in 0..m {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..n {
                let s = av[i * n + k];
                for (o, q) in orow.iter_mut().zip(&bv[k * p..(k + 1) * p]) {
                    *o = *o + s * *q;
                }
            }
        }
        self.push(Tensor::new(vec![m, p], out)?, Op::MatMul { a, b }, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.value(x).dims2();
        let out = transpose_data(self.value(x).data(), r, c);
        self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let data = self.value(x).data().to_vec();
        let t = Tensor::new(shape, data).map_err(|_| mismatch("reshape", format!("from {:?}", self.value(x).shape())))?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.map(x, |v| v.tanh());
        self.push(t, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.map(x, |v| v.max(F::zero()));
        self.push(t, Op::Relu(x), "relu")
    }

    fn map(&self, x: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let v = self.value(x);
        Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&e| f(e)).collect(),
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.value(x).dims2();
        let shape = self.value(x).shape().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            softmax_in_place(row);
        }
        self.push(Tensor::new(shape, out)?, Op::SoftmaxRows(x), "softmax_rows")
    }

    /// Inverted dropout: survivors scaled by `1/(1-p)`; identity when not training.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::BadDropout(p));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = F::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() >= p { keep_scale } else { F::zero() })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, Op::Dropout { x, mask }, "dropout")
    }

    /// Averages groups of rows (time steps): `T×d → T'×d`, trailing rows dropped.
    pub fn avgpool_time(&mut self, x: Var, win: usize, stride: usize) -> Result<Var, TensorError> {
        let (t, d) = self.value(x).dims2();
        if win == 0 || stride == 0 || t < win {
            return Err(mismatch("avgpool_time", format!("{t} rows with window {win}, stride {stride}")));
        }
        let t_out = (t - win) / stride + 1;
        let xv = self.value(x).data();
        let scale = F::one() / F::from_usize(win).unwrap();
        let mut out = vec![F::zero(); t_out * d];
        for o in 0..t_out {
            let orow = &mut out[o * d..(o + 1) * d];
            for r in o * stride..o * stride + win {
                for (acc, v) in orow.iter_mut().zip(&xv[r * d..(r + 1) * d]) {
                    *acc = *acc + *v;
                }
            }
            orow.iter_mut().for_each(|v| *v = *v * scale);
        }
        self.push(Tensor::new(vec![t_out, d], out)?, Op::AvgPoolRows { x, win, stride }, "avgpool_time")
    }

    /// Column means: `T×d → 1×d`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (t, d) = self.value(x).dims2();
        if t == 0 {
            return Err(mismatch("mean_rows", "no rows".into()));
        }
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); d];
        for row in xv.chunks_exact(d) {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc = *acc + *v;
            }
        }
        let n = F::from_usize(t).unwrap();
        out.iter_mut().for_each(|v| *v = *v / n);
        self.push(Tensor::new(vec![1, d], out)?, Op::MeanRows(x), "mean_rows")
    }

    /// 1-D convolution along the last axis: `x: C_in×L`, `k: C_out×C_in×K`.
    pub fn conv1d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (c_in, len) = self.value(x).dims2();
        let kshape = self.value(k).shape().to_vec();
        let [c_out, kc_in, width] = kshape[..] else {
            return Err(mismatch("conv1d", format!("kernel shape {kshape:?} is not 3-D")));
        };
        if kc_in != c_in || stride == 0 {
            return Err(mismatch("conv1d", format!("input has {c_in} channels, kernel expects {kc_in}")));
        }
        if len + 2 * pad < width {
            return Err(mismatch("conv1d", format!("length {len} too short for kernel {width}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(mismatch("conv1d", "bias length".into()));
            }
        }
        let l_out = (len + 2 * pad - width) / stride + 1;
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let mut out = vec![F::zero(); c_out * l_out];
        for o in 0..c_out {
            let orow = &mut out[o * l_out..(o + 1) * l_out];
            if let Some(b) = b {
                let bias = self.value(b).data()[o];
                orow.iter_mut().for_each(|v| *v = bias);
            }
            for c in 0..c_in {
                let xrow = &xv[c * len..(c + 1) * len];
                for j in 0..width {
                    let w = kv[(o * c_in + c) * width + j];
                    for (t, acc) in orow.iter_mut().enumerate() {
                        let pos = (t * stride + j) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            *acc = *acc + w * xrow[pos as usize];
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![c_out, l_out], out)?,
            Op::Conv1d { x, k, b, stride, pad },
            "conv1d",
        )
    }

    /// `logsumexp(z) - z[label]` over a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(mismatch("cross_entropy", format!("label {label} with {} logits", z.len())));
        }
        let max = z.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        let loss = lse - z[label];
        self.push(Tensor::vector(vec![loss]), Op::CrossEntropy { logits, label }, "cross_entropy")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::vector(vec![s]), Op::Sum(x), "sum")
    }

    /// Propagates `d loss / d node` back to every parameter node.
    ///
    /// Errors on a second call: gradients are never silently accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>, TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::GraphNotBuilt);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = out
                        .by_param
                        .entry(*id)
                        .or_insert_with(|| vec![F::zero(); g.len()]);
                    add_into(slot, &g);
                }
                Op::Affine { x, w, b } => {
                    let (n, a) = self.value(*x).dims2();
                    let (o, _) = self.value(*w).dims2();
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let mut dx = vec![F::zero(); n * a];
                    let mut dw = vec![F::zero(); o * a];
                    for i in 0..n {
                        let xr = &xv[i * a..(i + 1) * a];
                        let dxr = &mut dx[i * a..(i + 1) * a];
                        for j in 0..o {
                            let gij = g[i * o + j];
                            if gij == F::zero() {
                                continue;
                            }
                            let wr = &wv[j * a..(j + 1) * a];
                            for (d, q) in dxr.iter_mut().zip(wr) {
                                *d = *d + gij * *q;
                            }
                            for (d, p) in dw[j * a..(j + 1) * a].iter_mut().zip(xr) {
                                *d = *d + gij * *p;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let mut db = vec![F::zero(); o];
                        for row in g.chunks_exact(o) {
                            add_into(&mut db, row);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::MatMul { a, b } => {
                    let (m, n) = self.value(*a).dims2();
                    let (_, p) = self.value(*b).dims2();
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let mut da = vec![F::zero(); m * n];
                    let mut db = vec![F::zero(); n * p];
                    for i in 0..m {
                        let grow = &g[i * p..(i + 1) * p];
                        for k in 0..n {
                            let brow = &bv[k * p..(k + 1) * p];
                            da[i * n + k] = grow.iter().zip(brow).map(|(x, y)| *x * *y).sum();
                            let s = av[i * n + k];
                            for (d, gv) in db[k * p..(k + 1) * p].iter_mut().zip(grow) {
                                *d = *d + s * *gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(x) => {
                    let (r, c) = self.value(*x).dims2();
                    // g is c×r
                    accumulate(&mut grads, *x, transpose_data(&g, c, r));
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g),
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let dx = g.iter().zip(y).map(|(gv, yv)| *gv * (F::one() - *yv * *yv)).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let xin = self.value(*x).data();
                    let dx = g
                        .iter()
                        .zip(xin)
                        .map(|(gv, xv)| if *xv > F::zero() { *gv } else { F::zero() })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let (_, c) = node.value.dims2();
                    let y = node.value.data();
                    let mut dx = vec![F::zero(); y.len()];
                    for ((dr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let dot: F = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                        for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = *yv * (*gv - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(a, m)| *a * *m).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::AvgPoolRows { x, win, stride } => {
                    let (t, d) = self.value(*x).dims2();
                    let scale = F::one() / F::from_usize(*win).unwrap();
                    let mut dx = vec![F::zero(); t * d];
                    for (o, grow) in g.chunks_exact(d).enumerate() {
                        for r in o * stride..o * stride + win {
                            for (dv, gv) in dx[r * d..(r + 1) * d].iter_mut().zip(grow) {
                                *dv = *dv + *gv * scale;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanRows(x) => {
                    let (t, d) = self.value(*x).dims2();
                    let n = F::from_usize(t).unwrap();
                    let mut dx = Vec::with_capacity(t * d);
                    for _ in 0..t {
                        dx.extend(g.iter().map(|v| *v / n));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Conv1d { x, k, b, stride, pad } => {
                    let (c_in, len) = self.value(*x).dims2();
                    let kshape = self.value(*k).shape();
                    let (c_out, width) = (kshape[0], kshape[2]);
                    let l_out = node.value.dims2().1;
                    let xv = self.value(*x).data();
                    let kv = self.value(*k).data();
                    let mut dx = vec![F::zero(); c_in * len];
                    let mut dk = vec![F::zero(); kv.len()];
                    for o in 0..c_out {
                        let grow = &g[o * l_out..(o + 1) * l_out];
                        for c in 0..c_in {
                            let xrow = &xv[c * len..(c + 1) * len];
                            let dxrow = &mut dx[c * len..(c + 1) * len];
                            for j in 0..width {
                                let kidx = (o * c_in + c) * width + j;
                                let w = kv[kidx];
                                let mut acc = F::zero();
                                for (t, gv) in grow.iter().enumerate() {
                                    let pos = (t * stride + j) as isize - *pad as isize;
                                    if pos >= 0 && (pos as usize) < len {
                                        acc = acc + *gv * xrow[pos as usize];
                                        dxrow[pos as usize] = dxrow[pos as usize] + *gv * w;
                                    }
                                }
                                dk[kidx] = dk[kidx] + acc;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let db = g.chunks_exact(l_out).map(|r| r.iter().copied().sum()).collect();
                        accumulate(&mut grads, *b, db);
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                }
                Op::CrossEntropy { logits, label } => {
                    let z = self.value(*logits).data().to_vec();
                    let mut p = z;
                    softmax_in_place(&mut p);
                    p[*label] = p[*label] - F::one();
                    let dz = p.into_iter().map(|v| v * g[0]).collect();
                    accumulate(&mut grads, *logits, dz);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
            }
        }
        Ok(out)
    }
}

fn add_into<F: Real>(acc: &mut [F], g: &[F]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a = *a + *v;
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, g: Vec<F>) {
    match &mut grads[v.0] {
        Some(existing) => add_into(existing, &g),
        slot @ None => *slot = Some(g),
    }
}

fn transpose_data<F: Copy>(data: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(data.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(data[r * cols + c]);
        }
    }
    out
}

pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / total);
}
