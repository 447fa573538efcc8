use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Array, Gradients, ParamId, ParamStore, TensorError};

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const ELU_ALPHA: f64 = 1.0;
const NONE: usize = usize::MAX;

/// Pointwise nonlinearity applied by [`Tape::dense`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Elu,
    Selu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    ELU_ALPHA * z.exp_m1()
                }
            }
            Activation::Selu => {
                if z > 0.0 {
                    SELU_LAMBDA * z
                } else {
                    SELU_LAMBDA * SELU_ALPHA * z.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output. Every supported
    /// activation is monotone with `f(z) > 0 <=> z > 0`, so the sign of the
    /// output selects the branch.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + ELU_ALPHA
                }
            }
            Activation::Selu => {
                if y > 0.0 {
                    SELU_LAMBDA
                } else {
                    y + SELU_LAMBDA * SELU_ALPHA
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            "selu" => Ok(Activation::Selu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Weights of one GRU direction. Gate blocks are stacked `[update; reset; candidate]`:
/// `input` is `3H x F`, `recurrent` is `3H x H`, `bias` is `3H`.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

/// Weights of the additive pairwise attention.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub query: Var,
    pub key: Var,
    pub bias: Var,
    pub score: Var,
}

enum Slot {
    Owned(Array),
    Param(ParamId),
}

struct GruCache {
    hidden: usize,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

enum Op {
    Leaf,
    Embedding {
        table: ParamId,
        ids: Vec<usize>,
    },
    Conv1d {
        x: Var,
        filters: Var,
        bias: Var,
    },
    /// Output element `i` copies input element `src[i]` (`NONE` = constant zero).
    Select {
        x: Var,
        src: Vec<usize>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
        act: Activation,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        scale: Vec<f64>,
    },
    BiGru {
        x: Var,
        fwd: GruWeights,
        bwd: GruWeights,
        caches: Box<[GruCache; 2]>,
    },
    Attention {
        x: Var,
        w: AttentionWeights,
        hidden: Vec<f64>,
        weights: Array,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MeanRows {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        p: Var,
        gold: usize,
    },
    Sum {
        x: Var,
    },
    Mean {
        xs: Vec<Var>,
    },
}

struct Node {
    slot: Slot,
    op: Op,
}

/// Records differentiable operations in execution order so that
/// [`Tape::backward`] can replay them in reverse.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

fn check_finite(op: &'static str, a: &Array) -> Result<(), TensorError> {
    if a.all_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}

fn shape_err<T>(msg: String) -> Result<T, TensorError> {
    Err(TensorError::Shape(msg))
}

/// Splits `[B, L, C]` (or `[L, C]`, read as `B = 1`) into `(B, L, C, batched)`.
fn seq_dims(shape: &[usize], op: &str) -> Result<(usize, usize, usize, bool), TensorError> {
    match *shape {
        [l, c] => Ok((1, l, c, false)),
        [b, l, c] => Ok((b, l, c, true)),
        _ => shape_err(format!("{op} expects [L, C] or [B, L, C], got {shape:?}")),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        match &self.nodes[v.0].slot {
            Slot::Owned(a) => a,
            Slot::Param(id) => self.params.value(*id),
        }
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node {
            slot: Slot::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            slot: Slot::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Row gather from an embedding table. `ids` has shape `shape` (any rank);
    /// the output appends the embedding dimension.
    pub fn embedding(
        &mut self,
        ids: &[usize],
        shape: &[usize],
        table: ParamId,
    ) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != ids.len() {
            return shape_err(format!("{} ids do not fill shape {shape:?}", ids.len()));
        }
        let t = self.params.value(table);
        if t.ndim() != 2 {
            return shape_err(format!("embedding table must be 2-D, got {:?}", t.shape()));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::Index { index: id, bound: vocab });
            }
            data.extend_from_slice(t.row(id));
        }
        let mut out_shape = shape.to_vec();
        out_shape.push(dim);
        let out = Array::new(out_shape, data)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Valid (unpadded) 1-D convolution with stride 1.
    /// `x`: `[L, D]` or `[B, L, D]`; `filters`: `[K, w, D]`; `bias`: `[K]`.
    pub fn conv1d(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let fv = self.value(filters);
        let bv = self.value(bias);
        let (batch, len, dim, batched) = seq_dims(xv.shape(), "conv1d")?;
        let (k, w) = match *fv.shape() {
            [k, w, d] if d == dim => (k, w),
            _ => {
                return shape_err(format!(
                    "conv1d filters {:?} incompatible with input {:?}",
                    fv.shape(),
                    xv.shape()
                ))
            }
        };
        if bv.shape() != [k] {
            return shape_err(format!("conv1d bias {:?}, expected [{k}]", bv.shape()));
        }
        if len < w {
            return shape_err(format!("conv1d input length {len} shorter than filter width {w}"));
        }
        let out_len = len - w + 1;
        let span = w * dim;
        let (xd, fd, bd) = (xv.data(), fv.data(), bv.data());
        let mut out = Vec::with_capacity(batch * out_len * k);
        for b in 0..batch {
            for t in 0..out_len {
                let start = (b * len + t) * dim;
                let window = &xd[start..start + span];
                for kk in 0..k {
                    let filt = &fd[kk * span..(kk + 1) * span];
                    let mut acc = bd[kk];
                    for (a, f) in window.iter().zip(filt) {
                        acc += a * f;
                    }
                    out.push(acc);
                }
            }
        }
        let shape = if batched {
            vec![batch, out_len, k]
        } else {
            vec![out_len, k]
        };
        let out = Array::new(shape, out)?;
        check_finite("conv1d", &out)?;
        Ok(self.push(out, Op::Conv1d { x, filters, bias }))
    }

    /// Windowed max over the sequence axis; the last window may be short.
    /// `lens` gives the number of valid leading positions per batch row;
    /// invalid positions never win, and windows with no valid position output
    /// zero. Returns the pooled value and the valid window count per row.
    /// Ties route the gradient to the first maximal position.
    pub fn maxpool1d(
        &mut self,
        x: Var,
        pool: usize,
        lens: Option<&[usize]>,
    ) -> Result<(Var, Vec<usize>), TensorError> {
        if pool == 0 {
            return shape_err("pool size must be >= 1".into());
        }
        let xv = self.value(x);
        let (batch, len, ch, batched) = seq_dims(xv.shape(), "maxpool1d")?;
        if len == 0 {
            return shape_err("maxpool1d needs at least one position".into());
        }
        let lens = resolve_lens(lens, batch, len)?;
        let out_len = len.div_ceil(pool);
        let xd = xv.data();
        let mut out = Vec::with_capacity(batch * out_len * ch);
        let mut src = Vec::with_capacity(batch * out_len * ch);
        for (b, &valid) in lens.iter().enumerate() {
            for j in 0..out_len {
                let lo = j * pool;
                let hi = ((j + 1) * pool).min(valid);
                for c in 0..ch {
                    let mut best = NONE;
                    let mut best_val = f64::NEG_INFINITY;
                    for t in lo..hi {
                        let idx = (b * len + t) * ch + c;
                        if xd[idx] > best_val {
                            best_val = xd[idx];
                            best = idx;
                        }
                    }
                    if best == NONE {
                        out.push(0.0);
                    } else {
                        out.push(best_val);
                    }
                    src.push(best);
                }
            }
        }
        let new_lens = lens.iter().map(|&v| v.div_ceil(pool)).collect();
        let shape = if batched {
            vec![batch, out_len, ch]
        } else {
            vec![out_len, ch]
        };
        let out = Array::new(shape, out)?;
        Ok((self.push(out, Op::Select { x, src }), new_lens))
    }

    /// Columnwise max over the sequence axis: `[L, C] -> [C]`,
    /// `[B, L, C] -> [B, C]`. Rows with no valid position yield zeros.
    pub fn global_maxpool(&mut self, x: Var, lens: Option<&[usize]>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (batch, len, ch, batched) = seq_dims(xv.shape(), "global_maxpool")?;
        let lens = resolve_lens(lens, batch, len)?;
        let xd = xv.data();
        let mut out = Vec::with_capacity(batch * ch);
        let mut src = Vec::with_capacity(batch * ch);
        for (b, &valid) in lens.iter().enumerate() {
            for c in 0..ch {
                let mut best = NONE;
                let mut best_val = f64::NEG_INFINITY;
                for t in 0..valid {
                    let idx = (b * len + t) * ch + c;
                    if xd[idx] > best_val {
                        best_val = xd[idx];
                        best = idx;
                    }
                }
                out.push(if best == NONE { 0.0 } else { best_val });
                src.push(best);
            }
        }
        let shape = if batched { vec![batch, ch] } else { vec![ch] };
        let out = Array::new(shape, out)?;
        Ok(self.push(out, Op::Select { x, src }))
    }

    /// `act(W x + b)` for `x` of shape `[D_in]` or `[R, D_in]` (rowwise).
    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let (rows, din, batched) = match *xv.shape() {
            [d] => (1, d, false),
            [r, d] => (r, d, true),
            _ => return shape_err(format!("dense input must be 1-D or 2-D, got {:?}", xv.shape())),
        };
        let dout = match *wv.shape() {
            [o, i] if i == din => o,
            _ => {
                return shape_err(format!(
                    "dense weight {:?} incompatible with input {:?}",
                    wv.shape(),
                    xv.shape()
                ))
            }
        };
        if bv.shape() != [dout] {
            return shape_err(format!("dense bias {:?}, expected [{dout}]", bv.shape()));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = Vec::with_capacity(rows * dout);
        for r in 0..rows {
            let xr = &xd[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &wd[o * din..(o + 1) * din];
                let mut z = bd[o];
                for (a, c) in xr.iter().zip(wr) {
                    z += a * c;
                }
                out.push(act.apply(z));
            }
        }
        let shape = if batched { vec![rows, dout] } else { vec![dout] };
        let out = Array::new(shape, out)?;
        check_finite("dense", &out)?;
        Ok(self.push(out, Op::Dense { x, w, b, act }))
    }

    /// Rowwise concatenation of two 2-D arrays with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let bv = self.value(b);
        let (ra, ca, rb, cb) = match (av.shape(), bv.shape()) {
            ([ra, ca], [rb, cb]) => (*ra, *ca, *rb, *cb),
            (sa, sb) => return shape_err(format!("concat expects 2-D inputs, got {sa:?} and {sb:?}")),
        };
        if ra != rb {
            return shape_err(format!("concat row mismatch: {ra} vs {rb}"));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Array::new(vec![ra, ca + cb], data)?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    /// Inverted dropout. Identity (no node recorded) at inference or rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Usage(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let scale: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&scale).map(|(a, s)| a * s).collect();
        let out = Array::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, scale }))
    }

    /// Bidirectional GRU over `x: [N, F]`; output `[N, 2H]` holds the forward
    /// state at `t` followed by the backward state at `t`. Initial states are zero.
    pub fn bigru(&mut self, x: Var, fwd: GruWeights, bwd: GruWeights) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (n, f) = match *xv.shape() {
            [n, f] if n >= 1 => (n, f),
            _ => return shape_err(format!("bigru expects [N >= 1, F], got {:?}", xv.shape())),
        };
        let h = self.gru_hidden(fwd, f)?;
        if self.gru_hidden(bwd, f)? != h {
            return shape_err("bigru directions disagree on hidden size".into());
        }
        let forward_order: Vec<usize> = (0..n).collect();
        let backward_order: Vec<usize> = (0..n).rev().collect();
        let cf = self.gru_forward(xv.data(), n, f, h, fwd, &forward_order);
        let cb = self.gru_forward(xv.data(), n, f, h, bwd, &backward_order);
        let mut data = Vec::with_capacity(n * 2 * h);
        for t in 0..n {
            data.extend(gru_state(&cf, t));
            data.extend(gru_state(&cb, t));
        }
        let out = Array::new(vec![n, 2 * h], data)?;
        check_finite("bigru", &out)?;
        Ok(self.push(
            out,
            Op::BiGru {
                x,
                fwd,
                bwd,
                caches: Box::new([cf, cb]),
            },
        ))
    }

    fn gru_hidden(&self, w: GruWeights, f: usize) -> Result<usize, TensorError> {
        let wi = self.value(w.input).shape();
        let wr = self.value(w.recurrent).shape();
        let wb = self.value(w.bias).shape();
        match (wi, wr, wb) {
            ([h3, fi], [h3r, h], [h3b]) if *fi == f && h3 == h3r && h3 == h3b && *h3 == 3 * h && *h > 0 => {
                Ok(*h)
            }
            _ => shape_err(format!(
                "gru weights {wi:?}/{wr:?}/{wb:?} inconsistent with input width {f}"
            )),
        }
    }

    fn gru_forward(
        &self,
        x: &[f64],
        n: usize,
        f: usize,
        h: usize,
        w: GruWeights,
        order: &[usize],
    ) -> GruCache {
        let wi = self.value(w.input).data();
        let wr = self.value(w.recurrent).data();
        let wb = self.value(w.bias).data();
        let mut cache = GruCache {
            hidden: h,
            h_prev: vec![0.0; n * h],
            z: vec![0.0; n * h],
            r: vec![0.0; n * h],
            cand: vec![0.0; n * h],
        };
        let mut state = vec![0.0; h];
        let mut ax = vec![0.0; 3 * h];
        let mut rh = vec![0.0; h];
        for &t in order {
            let xt = &x[t * f..(t + 1) * f];
            for (row, out) in ax.iter_mut().enumerate() {
                let wrow = &wi[row * f..(row + 1) * f];
                *out = wb[row] + wrow.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>();
            }
            let base = t * h;
            for j in 0..h {
                let uz: f64 = wr[j * h..(j + 1) * h].iter().zip(&state).map(|(a, b)| a * b).sum();
                let ur: f64 = wr[(h + j) * h..(h + j + 1) * h]
                    .iter()
                    .zip(&state)
                    .map(|(a, b)| a * b)
                    .sum();
                cache.z[base + j] = sigmoid(ax[j] + uz);
                cache.r[base + j] = sigmoid(ax[h + j] + ur);
            }
            for j in 0..h {
                rh[j] = cache.r[base + j] * state[j];
            }
            for j in 0..h {
                let uh: f64 = wr[(2 * h + j) * h..(2 * h + j + 1) * h]
                    .iter()
                    .zip(&rh)
                    .map(|(a, b)| a * b)
                    .sum();
                cache.cand[base + j] = (ax[2 * h + j] + uh).tanh();
            }
            cache.h_prev[base..base + h].copy_from_slice(&state);
            for (j, s) in state.iter_mut().enumerate() {
                let z = cache.z[base + j];
                *s = (1.0 - z) * *s + z * cache.cand[base + j];
            }
        }
        cache
    }

    /// Additive pairwise self-attention over the rows of `x: [N, d]`:
    /// `score[t, s] = v . tanh(Wq x_t + Wk x_s + b)`, weights are the rowwise
    /// softmax of the scores, and row `t` of the output is
    /// `sum_s weights[t, s] * x_s`. Returns the context rows and the `N x N`
    /// row-stochastic weight matrix.
    pub fn attention(&mut self, x: Var, w: AttentionWeights) -> Result<(Var, Array), TensorError> {
        let xv = self.value(x);
        let (n, d) = match *xv.shape() {
            [n, d] if n >= 1 => (n, d),
            _ => return shape_err(format!("attention expects [N >= 1, d], got {:?}", xv.shape())),
        };
        let qv = self.value(w.query);
        let kv = self.value(w.key);
        let bv = self.value(w.bias);
        let sv = self.value(w.score);
        let a = match (qv.shape(), kv.shape(), bv.shape(), sv.shape()) {
            ([a, dq], [ak, dk], [ab], [asv]) if *dq == d && *dk == d && a == ak && a == ab && a == asv => *a,
            _ => {
                return shape_err(format!(
                    "attention weights {:?}/{:?}/{:?}/{:?} inconsistent with input {:?}",
                    qv.shape(),
                    kv.shape(),
                    bv.shape(),
                    sv.shape(),
                    xv.shape()
                ))
            }
        };
        let xd = xv.data();
        let project = |m: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n * a];
            for t in 0..n {
                for k in 0..a {
                    out[t * a + k] = m[k * d..(k + 1) * d]
                        .iter()
                        .zip(&xd[t * d..(t + 1) * d])
                        .map(|(p, q)| p * q)
                        .sum();
                }
            }
            out
        };
        let pq = project(qv.data());
        let pk = project(kv.data());
        let (bd, sd) = (bv.data(), sv.data());
        let mut hidden = vec![0.0; n * n * a];
        let mut weights = vec![0.0; n * n];
        for t in 0..n {
            for s in 0..n {
                let mut score = 0.0;
                for k in 0..a {
                    let e = (pq[t * a + k] + pk[s * a + k] + bd[k]).tanh();
                    hidden[(t * n + s) * a + k] = e;
                    score += sd[k] * e;
                }
                weights[t * n + s] = score;
            }
            softmax_in_place(&mut weights[t * n..(t + 1) * n]);
        }
        let mut out = vec![0.0; n * d];
        for t in 0..n {
            for s in 0..n {
                let wts = weights[t * n + s];
                for j in 0..d {
                    out[t * d + j] += wts * xd[s * d + j];
                }
            }
        }
        let out = Array::new(vec![n, d], out)?;
        let weights = Array::new(vec![n, n], weights)?;
        check_finite("attention", &out)?;
        let var = self.push(
            out,
            Op::Attention {
                x,
                w,
                hidden,
                weights: weights.clone(),
            },
        );
        Ok((var, weights))
    }

    /// Elementwise product of equally shaped arrays.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return shape_err(format!("mul shape mismatch {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Array::new(av.shape().to_vec(), data)?;
        check_finite("mul", &out)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    /// Arithmetic mean over the rows of a 2-D array: `[R, C] -> [C]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = match *xv.shape() {
            [r, c] if r >= 1 => (r, c),
            _ => return shape_err(format!("mean_rows expects [R >= 1, C], got {:?}", xv.shape())),
        };
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (acc, v) in data.iter_mut().zip(xv.row(i)) {
                *acc += v;
            }
        }
        data.iter_mut().for_each(|v| *v /= r as f64);
        let out = Array::vector(data);
        Ok(self.push(out, Op::MeanRows { x }))
    }

    /// Max-subtracted softmax over a 1-D array of length >= 2.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.ndim() != 1 || xv.len() < 2 {
            return shape_err(format!("softmax expects [C >= 2], got {:?}", xv.shape()));
        }
        let out = Array::vector(softmax(xv.data()));
        check_finite("softmax", &out)?;
        Ok(self.push(out, Op::Softmax { x }))
    }

    /// `-ln p[gold]` for a probability vector.
    pub fn cross_entropy(&mut self, p: Var, gold: usize) -> Result<Var, TensorError> {
        let pv = self.value(p);
        if pv.ndim() != 1 {
            return shape_err(format!("cross_entropy expects a 1-D distribution, got {:?}", pv.shape()));
        }
        if gold >= pv.len() {
            return Err(TensorError::Index {
                index: gold,
                bound: pv.len(),
            });
        }
        let out = Array::scalar(-pv.data()[gold].ln());
        check_finite("cross_entropy", &out)?;
        Ok(self.push(out, Op::CrossEntropy { p, gold }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array::scalar(s), Op::Sum { x })
    }

    /// Mean of scalar values.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::Usage("mean of no values".into()));
        }
        let mut total = 0.0;
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return shape_err(format!("mean expects scalars, got {:?}", v.shape()));
            }
            total += v.data()[0];
        }
        let out = Array::scalar(total / xs.len() as f64);
        Ok(self.push(out, Op::Mean { xs: xs.to_vec() }))
    }

    /// Reverse-mode pass from a scalar `loss`. Allowed once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::Usage("backward already ran on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(self.value(loss).shape(), 1.0));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        i: usize,
        g: Array,
        grads: &mut [Option<Array>],
        out: &mut Gradients,
    ) -> Result<(), TensorError> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {
                if let Slot::Param(id) = node.slot {
                    out.add_dense(id, g);
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.params.value(*table).cols();
                for (k, &id) in ids.iter().enumerate() {
                    out.add_row(*table, id, &gd[k * dim..(k + 1) * dim]);
                }
            }
            Op::Conv1d { x, filters, bias } => {
                let xv = self.value(*x);
                let fv = self.value(*filters);
                let (batch, len, dim, _) = seq_dims(xv.shape(), "conv1d")?;
                let (k, w) = (fv.shape()[0], fv.shape()[1]);
                let out_len = len - w + 1;
                let span = w * dim;
                let (xd, fd) = (xv.data(), fv.data());
                let mut dx = vec![0.0; xd.len()];
                let mut df = vec![0.0; fd.len()];
                let mut db = vec![0.0; k];
                for b in 0..batch {
                    for t in 0..out_len {
                        let start = (b * len + t) * dim;
                        for kk in 0..k {
                            let go = gd[(b * out_len + t) * k + kk];
                            if go == 0.0 {
                                continue;
                            }
                            db[kk] += go;
                            let filt = &fd[kk * span..(kk + 1) * span];
                            let dfk = &mut df[kk * span..(kk + 1) * span];
                            for ((dfv, xv), (dxv, fv)) in dfk
                                .iter_mut()
                                .zip(&xd[start..start + span])
                                .zip(dx[start..start + span].iter_mut().zip(filt))
                            {
                                *dfv += go * xv;
                                *dxv += go * fv;
                            }
                        }
                    }
                }
                accumulate(grads, *x, Array::new(xv.shape().to_vec(), dx)?);
                accumulate(grads, *filters, Array::new(fv.shape().to_vec(), df)?);
                accumulate(grads, *bias, Array::vector(db));
            }
            Op::Select { x, src } => {
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.len()];
                for (&s, &go) in src.iter().zip(gd) {
                    if s != NONE {
                        dx[s] += go;
                    }
                }
                accumulate(grads, *x, Array::new(xv.shape().to_vec(), dx)?);
            }
            Op::Dense { x, w, b, act } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let y = self.value(Var(i)).data();
                let din = xv.cols();
                let dout = wv.shape()[0];
                let rows = xv.len() / din.max(1);
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; dout];
                for r in 0..rows {
                    let xr = &xd[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let dz = gd[r * dout + o] * act.derivative_from_output(y[r * dout + o]);
                        if dz == 0.0 {
                            continue;
                        }
                        db[o] += dz;
                        let wr = &wd[o * din..(o + 1) * din];
                        for j in 0..din {
                            dw[o * din + j] += dz * xr[j];
                            dx[r * din + j] += dz * wr[j];
                        }
                    }
                }
                accumulate(grads, *x, Array::new(xv.shape().to_vec(), dx)?);
                accumulate(grads, *w, Array::new(wv.shape().to_vec(), dw)?);
                accumulate(grads, *b, Array::vector(db));
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                let mut da = Vec::with_capacity(rows * ca);
                let mut dbv = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = g.row(r);
                    da.extend_from_slice(&row[..ca]);
                    dbv.extend_from_slice(&row[ca..]);
                }
                accumulate(grads, *a, Array::new(vec![rows, ca], da)?);
                accumulate(grads, *b, Array::new(vec![rows, cb], dbv)?);
            }
            Op::Dropout { x, scale } => {
                let data = gd.iter().zip(scale).map(|(a, s)| a * s).collect();
                accumulate(grads, *x, Array::new(g.shape().to_vec(), data)?);
            }
            Op::BiGru { x, fwd, bwd, caches } => {
                let xv = self.value(*x);
                let (n, f) = (xv.shape()[0], xv.shape()[1]);
                let h = caches[0].hidden;
                let mut dx = vec![0.0; n * f];
                let forward_order: Vec<usize> = (0..n).collect();
                let backward_order: Vec<usize> = (0..n).rev().collect();
                for (dir, (weights, order)) in [(*fwd, &forward_order), (*bwd, &backward_order)]
                    .into_iter()
                    .enumerate()
                {
                    let dout: Vec<f64> = (0..n)
                        .flat_map(|t| g.row(t)[dir * h..(dir + 1) * h].to_vec())
                        .collect();
                    let (dwi, dwr, dwb) =
                        self.gru_backward(xv.data(), f, weights, &caches[dir], order, &dout, &mut dx);
                    accumulate(grads, weights.input, dwi);
                    accumulate(grads, weights.recurrent, dwr);
                    accumulate(grads, weights.bias, dwb);
                }
                accumulate(grads, *x, Array::new(vec![n, f], dx)?);
            }
            Op::Attention {
                x,
                w,
                hidden,
                weights,
            } => self.attention_backward(*x, *w, hidden, weights, &g, grads)?,
            Op::Mul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = gd.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = gd.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, Array::new(av.shape().to_vec(), da)?);
                accumulate(grads, *b, Array::new(bv.shape().to_vec(), db)?);
            }
            Op::MeanRows { x } => {
                let xv = self.value(*x);
                let r = xv.shape()[0];
                let mut dx = Vec::with_capacity(xv.len());
                for _ in 0..r {
                    dx.extend(gd.iter().map(|v| v / r as f64));
                }
                accumulate(grads, *x, Array::new(xv.shape().to_vec(), dx)?);
            }
            Op::Softmax { x } => {
                let p = self.value(Var(i)).data();
                let dot: f64 = gd.iter().zip(p).map(|(a, b)| a * b).sum();
                let dx = p.iter().zip(gd).map(|(pi, gi)| pi * (gi - dot)).collect();
                accumulate(grads, *x, Array::vector(dx));
            }
            Op::CrossEntropy { p, gold } => {
                let pv = self.value(*p);
                let mut dp = vec![0.0; pv.len()];
                dp[*gold] = -gd[0] / pv.data()[*gold];
                accumulate(grads, *p, Array::new(pv.shape().to_vec(), dp)?);
            }
            Op::Sum { x } => {
                let xv = self.value(*x);
                accumulate(grads, *x, Array::filled(xv.shape(), gd[0]));
            }
            Op::Mean { xs } => {
                let share = gd[0] / xs.len() as f64;
                for &x in xs {
                    accumulate(grads, x, Array::scalar(share));
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        x: &[f64],
        f: usize,
        w: GruWeights,
        cache: &GruCache,
        order: &[usize],
        dout: &[f64],
        dx: &mut [f64],
    ) -> (Array, Array, Array) {
        let h = cache.hidden;
        let wi = self.value(w.input);
        let wr = self.value(w.recurrent);
        let (wid, wrd) = (wi.data(), wr.data());
        let mut dwi = vec![0.0; wid.len()];
        let mut dwr = vec![0.0; wrd.len()];
        let mut dwb = vec![0.0; 3 * h];
        let mut carry = vec![0.0; h];
        let mut da = vec![0.0; 3 * h];
        let mut rh = vec![0.0; h];
        let mut drh = vec![0.0; h];
        let mut dhp = vec![0.0; h];
        for &t in order.iter().rev() {
            let base = t * h;
            let hp = &cache.h_prev[base..base + h];
            let z = &cache.z[base..base + h];
            let r = &cache.r[base..base + h];
            let cand = &cache.cand[base..base + h];
            for j in 0..h {
                let dh = dout[base + j] + carry[j];
                let dz = dh * (cand[j] - hp[j]);
                let dcand = dh * z[j];
                dhp[j] = dh * (1.0 - z[j]);
                da[j] = dz * z[j] * (1.0 - z[j]);
                da[2 * h + j] = dcand * (1.0 - cand[j] * cand[j]);
                rh[j] = r[j] * hp[j];
            }
            // d(r o h_prev) = U_h^T da_h
            drh.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..h {
                let dah = da[2 * h + j];
                let urow = &wrd[(2 * h + j) * h..(2 * h + j + 1) * h];
                for (m, u) in urow.iter().enumerate() {
                    drh[m] += u * dah;
                }
                for m in 0..h {
                    dwr[(2 * h + j) * h + m] += dah * rh[m];
                }
            }
            for j in 0..h {
                let dr = drh[j] * hp[j];
                dhp[j] += drh[j] * r[j];
                da[h + j] = dr * r[j] * (1.0 - r[j]);
            }
            for gate in 0..2 {
                for j in 0..h {
                    let d = da[gate * h + j];
                    let row = (gate * h + j) * h;
                    for m in 0..h {
                        dwr[row + m] += d * hp[m];
                        dhp[m] += wrd[row + m] * d;
                    }
                }
            }
            let xt = &x[t * f..(t + 1) * f];
            let dxt = &mut dx[t * f..(t + 1) * f];
            for row in 0..3 * h {
                let d = da[row];
                dwb[row] += d;
                for k in 0..f {
                    dwi[row * f + k] += d * xt[k];
                    dxt[k] += wid[row * f + k] * d;
                }
            }
            carry.copy_from_slice(&dhp);
        }
        (
            Array::new(wi.shape().to_vec(), dwi).expect("shape"),
            Array::new(wr.shape().to_vec(), dwr).expect("shape"),
            Array::vector(dwb),
        )
    }

    fn attention_backward(
        &self,
        x: Var,
        w: AttentionWeights,
        hidden: &[f64],
        weights: &Array,
        g: &Array,
        grads: &mut [Option<Array>],
    ) -> Result<(), TensorError> {
        let xv = self.value(x);
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let qv = self.value(w.query);
        let kv = self.value(w.key);
        let sv = self.value(w.score);
        let a = sv.len();
        let (xd, qd, kd, sd, wd, gd) = (xv.data(), qv.data(), kv.data(), sv.data(), weights.data(), g.data());
        let mut dx = vec![0.0; n * d];
        let mut dscore = vec![0.0; n * n];
        for t in 0..n {
            let gt = &gd[t * d..(t + 1) * d];
            let mut dw_row = vec![0.0; n];
            for s in 0..n {
                let xs = &xd[s * d..(s + 1) * d];
                dw_row[s] = gt.iter().zip(xs).map(|(p, q)| p * q).sum();
                let wts = wd[t * n + s];
                for j in 0..d {
                    dx[s * d + j] += wts * gt[j];
                }
            }
            let dot: f64 = (0..n).map(|s| wd[t * n + s] * dw_row[s]).sum();
            for s in 0..n {
                dscore[t * n + s] = wd[t * n + s] * (dw_row[s] - dot);
            }
        }
        let mut dv = vec![0.0; a];
        let mut db = vec![0.0; a];
        let mut dpq = vec![0.0; n * a];
        let mut dpk = vec![0.0; n * a];
        for t in 0..n {
            for s in 0..n {
                let ds = dscore[t * n + s];
                for k in 0..a {
                    let e = hidden[(t * n + s) * a + k];
                    dv[k] += ds * e;
                    let dpre = ds * sd[k] * (1.0 - e * e);
                    dpq[t * a + k] += dpre;
                    dpk[s * a + k] += dpre;
                    db[k] += dpre;
                }
            }
        }
        let mut dq = vec![0.0; a * d];
        let mut dk = vec![0.0; a * d];
        for t in 0..n {
            let xt = &xd[t * d..(t + 1) * d];
            for k in 0..a {
                let (gq, gk) = (dpq[t * a + k], dpk[t * a + k]);
                for j in 0..d {
                    dq[k * d + j] += gq * xt[j];
                    dk[k * d + j] += gk * xt[j];
                    dx[t * d + j] += qd[k * d + j] * gq + kd[k * d + j] * gk;
                }
            }
        }
        accumulate(grads, x, Array::new(vec![n, d], dx)?);
        accumulate(grads, w.query, Array::new(vec![a, d], dq)?);
        accumulate(grads, w.key, Array::new(vec![a, d], dk)?);
        accumulate(grads, w.bias, Array::vector(db));
        accumulate(grads, w.score, Array::vector(dv));
        Ok(())
    }
}

fn gru_state(cache: &GruCache, t: usize) -> impl Iterator<Item = f64> + '_ {
    let h = cache.hidden;
    let base = t * h;
    (0..h).map(move |j| {
        let z = cache.z[base + j];
        (1.0 - z) * cache.h_prev[base + j] + z * cache.cand[base + j]
    })
}

fn resolve_lens(lens: Option<&[usize]>, batch: usize, len: usize) -> Result<Vec<usize>, TensorError> {
    match lens {
        None => Ok(vec![len; batch]),
        Some(l) if l.len() == batch && l.iter().all(|&v| v <= len) => Ok(l.to_vec()),
        Some(l) => shape_err(format!("{} valid lengths for batch {batch} of length {len}", l.len())),
    }
}

fn accumulate(grads: &mut [Option<Array>], v: Var, g: Array) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    x.iter_mut().for_each(|v| *v /= total);
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}
