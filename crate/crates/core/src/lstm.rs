//! Single-layer LSTM with a per-frame intensity head and a class head.
//!
//! Per frame `t` with input `x_t`:
//!
//! ```text
//! z   = W_x x_t + W_h h_{t-1} + b          (4H, gate order i, f, g, o)
//! i,f,o = sigmoid(z_i, z_f, z_o)   g = tanh(z_g)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! intensity_t = sigmoid(w_int . h_t + b_int)
//! logits_t    = W_cls h_t + b_cls
//! ```
//!
//! The sequence prediction is `softmax(logits)` at the last frame. All
//! parameters live in one flat buffer; [`Layout`] gives the block offsets.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{self, argmax, matvec_t_acc, outer_acc, sigmoid, softmax};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

/// Names of the parameter blocks in storage order.
pub const BLOCK_NAMES: [&str; 7] = ["w_x", "w_h", "b", "w_int", "b_int", "w_cls", "b_cls"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    dims: LstmDims,
}

impl Layout {
    pub fn new(dims: LstmDims) -> Self {
        Self { dims }
    }

    /// `(rows, cols)` of every block, in [`BLOCK_NAMES`] order.
    pub fn shapes(&self) -> [(usize, usize); 7] {
        let LstmDims {
            input_dim: d,
            hidden_dim: h,
            num_classes: n,
        } = self.dims;
        [
            (4 * h, d),
            (4 * h, h),
            (4 * h, 1),
            (1, h),
            (1, 1),
            (n, h),
            (n, 1),
        ]
    }

    pub fn ranges(&self) -> [Range<usize>; 7] {
        let mut start = 0;
        self.shapes().map(|(r, c)| {
            let range = start..start + r * c;
            start = range.end;
            range
        })
    }

    pub fn len(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Borrowed view of the parameter blocks.
pub struct Blocks<'a> {
    pub w_x: &'a [f64],
    pub w_h: &'a [f64],
    pub b: &'a [f64],
    pub w_int: &'a [f64],
    pub b_int: f64,
    pub w_cls: &'a [f64],
    pub b_cls: &'a [f64],
}

pub struct BlocksMut<'a> {
    pub w_x: &'a mut [f64],
    pub w_h: &'a mut [f64],
    pub b: &'a mut [f64],
    pub w_int: &'a mut [f64],
    pub b_int: &'a mut f64,
    pub w_cls: &'a mut [f64],
    pub b_cls: &'a mut [f64],
}

fn split_blocks<'a>(layout: &Layout, data: &'a [f64]) -> Blocks<'a> {
    let [rx, rh, rb, ri, rbi, rc, rbc] = layout.ranges();
    Blocks {
        w_x: &data[rx],
        w_h: &data[rh],
        b: &data[rb],
        w_int: &data[ri],
        b_int: data[rbi.start],
        w_cls: &data[rc],
        b_cls: &data[rbc],
    }
}

fn split_blocks_mut<'a>(layout: &Layout, data: &'a mut [f64]) -> BlocksMut<'a> {
    let [rx, rh, rb, ri, _, rc, _] = layout.ranges();
    let (w_x, rest) = data.split_at_mut(rx.len());
    let (w_h, rest) = rest.split_at_mut(rh.len());
    let (b, rest) = rest.split_at_mut(rb.len());
    let (w_int, rest) = rest.split_at_mut(ri.len());
    let (b_int, rest) = rest.split_at_mut(1);
    let (w_cls, b_cls) = rest.split_at_mut(rc.len());
    BlocksMut {
        w_x,
        w_h,
        b,
        w_int,
        b_int: &mut b_int[0],
        w_cls,
        b_cls,
    }
}

/// Flat parameter buffer with a fixed block layout. Used both for the
/// learnable parameters and for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuffer {
    dims: LstmDims,
    data: Vec<f64>,
}

pub type LstmParameters = ParamBuffer;
pub type ParamGrads = ParamBuffer;

impl ParamBuffer {
    pub fn zeros(dims: LstmDims) -> Self {
        Self {
            dims,
            data: vec![0.0; Layout::new(dims).len()],
        }
    }

    pub fn from_flat(dims: LstmDims, data: Vec<f64>) -> Result<Self> {
        check_dim("parameter buffer", Layout::new(dims).len(), data.len())?;
        Ok(Self { dims, data })
    }

    /// Uniform weights in `[-1/sqrt(H), 1/sqrt(H)]`, forget-gate bias 1,
    /// all other biases 0. Draws happen in block storage order.
    pub fn init(dims: LstmDims, seed: u64) -> Result<Self> {
        if dims.input_dim == 0 || dims.hidden_dim == 0 || dims.num_classes == 0 {
            return Err(Error::config(
                "dims",
                "all network dimensions must be positive",
            ));
        }
        let mut p = Self::zeros(dims);
        let bound = 1.0 / (dims.hidden_dim as f64).sqrt();
        let mut rng = Rng::new(seed);
        let h = dims.hidden_dim;
        let layout = p.layout();
        let blocks = split_blocks_mut(&layout, &mut p.data);
        for w in blocks.w_x.iter_mut().chain(blocks.w_h.iter_mut()) {
            *w = rng.uniform_in(-bound, bound);
        }
        blocks.b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        for w in blocks.w_int.iter_mut().chain(blocks.w_cls.iter_mut()) {
            *w = rng.uniform_in(-bound, bound);
        }
        Ok(p)
    }

    pub fn dims(&self) -> LstmDims {
        self.dims
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn blocks(&self) -> Blocks<'_> {
        split_blocks(&self.layout(), &self.data)
    }

    pub fn blocks_mut(&mut self) -> BlocksMut<'_> {
        let layout = self.layout();
        split_blocks_mut(&layout, &mut self.data)
    }

    /// Contiguous block by name.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let idx = BLOCK_NAMES.iter().position(|n| *n == name)?;
        Some(&self.data[self.layout().ranges()[idx].clone()])
    }

    pub fn is_finite(&self) -> bool {
        math::all_finite(&self.data)
    }

    pub fn norm(&self) -> f64 {
        math::norm2(&self.data)
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &ParamBuffer, k: f64) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Recurrent state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Everything one frame needs for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`, each of length H.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub intensity: f64,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub steps: Vec<StepCache>,
    /// Softmax of the last frame's logits.
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].h
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.intensity).collect()
    }

    /// Class predicted from the prefix ending at each frame.
    pub fn prefix_predictions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| argmax(&s.logits)).collect()
    }
}

/// One recurrent step; advances `state` and returns the step cache.
pub fn step(params: &LstmParameters, state: &mut LstmState, x: &[f64]) -> Result<StepCache> {
    let dims = params.dims();
    check_dim("input frame", dims.input_dim, x.len())?;
    let h = dims.hidden_dim;
    let bl = params.blocks();
    let mut z = math::matvec(bl.w_x, 4 * h, dims.input_dim, x);
    let zh = math::matvec(bl.w_h, 4 * h, h, &state.h);
    for ((zi, zhi), bi) in z.iter_mut().zip(&zh).zip(bl.b) {
        *zi += zhi + bi;
    }
    let mut gates = z;
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if (2 * h..3 * h).contains(&k) {
            g.tanh()
        } else {
            sigmoid(*g)
        };
    }
    let (gi, rest) = gates.split_at(h);
    let (gf, rest) = rest.split_at(h);
    let (gg, go) = rest.split_at(h);
    let c: Vec<f64> = (0..h).map(|j| gf[j] * state.c[j] + gi[j] * gg[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let hidden: Vec<f64> = (0..h).map(|j| go[j] * tanh_c[j]).collect();
    let intensity = sigmoid(math::dot(bl.w_int, &hidden) + bl.b_int);
    let mut logits = math::matvec(bl.w_cls, dims.num_classes, h, &hidden);
    for (l, b) in logits.iter_mut().zip(bl.b_cls) {
        *l += b;
    }
    let cache = StepCache {
        h_prev: std::mem::replace(&mut state.h, hidden.clone()),
        c_prev: std::mem::replace(&mut state.c, c.clone()),
        gates,
        c,
        tanh_c,
        h: hidden,
        intensity,
        logits,
    };
    Ok(cache)
}

pub fn forward(params: &LstmParameters, frames: &[Vec<f64>]) -> Result<ForwardTrace> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("forward pass over an empty sequence"));
    }
    let mut state = LstmState::zeros(params.dims().hidden_dim);
    let steps = frames
        .iter()
        .map(|x| step(params, &mut state, x))
        .collect::<Result<Vec<_>>>()?;
    let probs = softmax(&steps[steps.len() - 1].logits)?;
    Ok(ForwardTrace { steps, probs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialPrediction {
    pub class_id: usize,
    pub probs: Vec<f64>,
    pub intensity: f64,
}

/// Prediction from a prefix of frames; ties go to the lowest class index.
pub fn predict_partial(params: &LstmParameters, prefix: &[Vec<f64>]) -> Result<PartialPrediction> {
    let trace = forward(params, prefix)?;
    let last = &trace.steps[trace.len() - 1];
    Ok(PartialPrediction {
        class_id: argmax(&last.logits),
        intensity: last.intensity,
        probs: trace.probs,
    })
}

/// Frame-by-frame predictor that keeps the recurrent state between calls.
pub struct StreamingPredictor<'a> {
    params: &'a LstmParameters,
    state: LstmState,
}

impl<'a> StreamingPredictor<'a> {
    pub fn new(params: &'a LstmParameters) -> Self {
        Self {
            params,
            state: LstmState::zeros(params.dims().hidden_dim),
        }
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<PartialPrediction> {
        let cache = step(self.params, &mut self.state, frame)?;
        Ok(PartialPrediction {
            class_id: argmax(&cache.logits),
            probs: softmax(&cache.logits)?,
            intensity: cache.intensity,
        })
    }

    pub fn state(&self) -> &LstmState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = LstmState::zeros(self.params.dims().hidden_dim);
    }
}

/// Loss gradients injected at each frame: w.r.t. the class logits, the
/// intensity output (after its sigmoid) and the hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub logits: Vec<Vec<f64>>,
    pub intensity: Vec<f64>,
    pub hidden: Vec<Vec<f64>>,
}

impl Upstream {
    pub fn zeros(frames: usize, dims: LstmDims) -> Self {
        Self {
            logits: vec![vec![0.0; dims.num_classes]; frames],
            intensity: vec![0.0; frames],
            hidden: vec![vec![0.0; dims.hidden_dim]; frames],
        }
    }

    /// Element-wise sum; both sides must cover the same frames.
    pub fn add(&mut self, other: &Upstream) {
        for (a, b) in self.logits.iter_mut().zip(&other.logits) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.intensity
            .iter_mut()
            .zip(&other.intensity)
            .for_each(|(x, y)| *x += y);
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.logits.iter_mut().flatten().for_each(|v| *v *= k);
        self.intensity.iter_mut().for_each(|v| *v *= k);
        self.hidden.iter_mut().flatten().for_each(|v| *v *= k);
    }
}

/// Backpropagation through time. Adds the parameter gradients of the loss
/// described by `upstream` into `grads`.
pub fn backward_into(
    params: &LstmParameters,
    frames: &[Vec<f64>],
    trace: &ForwardTrace,
    upstream: &Upstream,
    grads: &mut ParamGrads,
) -> Result<()> {
    let dims = params.dims();
    let n = trace.len();
    check_dim("backward frames", n, frames.len())?;
    check_dim("upstream logits", n, upstream.logits.len())?;
    check_dim("upstream intensity", n, upstream.intensity.len())?;
    check_dim("upstream hidden", n, upstream.hidden.len())?;
    check_dim("gradient buffer", params.len(), grads.len())?;
    let h = dims.hidden_dim;
    let d = dims.input_dim;
    let nc = dims.num_classes;
    let p = params.blocks();
    let g = grads.blocks_mut();

    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..n).rev() {
        let s = &trace.steps[t];
        check_dim("upstream logits", nc, upstream.logits[t].len())?;
        check_dim("upstream hidden", h, upstream.hidden[t].len())?;
        let mut dh = dh_next.clone();
        dh.iter_mut()
            .zip(&upstream.hidden[t])
            .for_each(|(a, b)| *a += b);

        let dlogits = &upstream.logits[t];
        outer_acc(g.w_cls, dlogits, &s.h);
        g.b_cls.iter_mut().zip(dlogits).for_each(|(a, b)| *a += b);
        matvec_t_acc(p.w_cls, nc, h, dlogits, &mut dh);

        let da = upstream.intensity[t] * s.intensity * (1.0 - s.intensity);
        if da != 0.0 {
            g.w_int
                .iter_mut()
                .zip(&s.h)
                .for_each(|(a, hv)| *a += da * hv);
            *g.b_int += da;
            dh.iter_mut().zip(p.w_int).for_each(|(a, w)| *a += da * w);
        }

        let (gi, rest) = s.gates.split_at(h);
        let (gf, rest) = rest.split_at(h);
        let (gg, go) = rest.split_at(h);
        for j in 0..h {
            let d_o = dh[j] * s.tanh_c[j];
            let dc = dh[j] * go[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]) + dc_next[j];
            let d_i = dc * gg[j];
            let d_f = dc * s.c_prev[j];
            let d_g = dc * gi[j];
            dc_next[j] = dc * gf[j];
            dz[j] = d_i * gi[j] * (1.0 - gi[j]);
            dz[h + j] = d_f * gf[j] * (1.0 - gf[j]);
            dz[2 * h + j] = d_g * (1.0 - gg[j] * gg[j]);
            dz[3 * h + j] = d_o * go[j] * (1.0 - go[j]);
        }
        outer_acc(g.w_x, &dz, &frames[t]);
        debug_assert_eq!(frames[t].len(), d);
        outer_acc(g.w_h, &dz, &s.h_prev);
        g.b.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(p.w_h, 4 * h, h, &dz, &mut dh_next);
    }
    Ok(())
}

pub fn backward(
    params: &LstmParameters,
    frames: &[Vec<f64>],
    trace: &ForwardTrace,
    upstream: &Upstream,
) -> Result<ParamGrads> {
    let mut grads = ParamGrads::zeros(params.dims());
    backward_into(params, frames, trace, upstream, &mut grads)?;
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "onfly-lstm-checkpoint/1";

/// On-disk model. Blocks are stored in [`BLOCK_NAMES`] order, each row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dims: LstmDims,
    pub init_seed: u64,
    pub epochs_completed: usize,
    pub blocks: Vec<NamedBlock>,
    /// Momentum buffer, present only when training used momentum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec<NamedBlock>>,
}

fn to_blocks(buf: &ParamBuffer) -> Vec<NamedBlock> {
    let layout = buf.layout();
    BLOCK_NAMES
        .iter()
        .zip(layout.shapes())
        .zip(layout.ranges())
        .map(|((name, (rows, cols)), range)| NamedBlock {
            name: name.to_string(),
            rows,
            cols,
            values: buf.as_slice()[range].to_vec(),
        })
        .collect()
}

fn from_blocks(dims: LstmDims, blocks: &[NamedBlock]) -> Result<ParamBuffer> {
    let layout = Layout::new(dims);
    check_dim("checkpoint block count", BLOCK_NAMES.len(), blocks.len())?;
    let mut data = Vec::with_capacity(layout.len());
    for ((block, expected), (rows, cols)) in blocks.iter().zip(BLOCK_NAMES).zip(layout.shapes()) {
        if block.name != expected {
            return Err(Error::Degenerate(format!(
                "checkpoint block `{}` found where `{expected}` was expected",
                block.name
            )));
        }
        check_dim("checkpoint block rows", rows, block.rows)?;
        check_dim("checkpoint block cols", cols, block.cols)?;
        check_dim("checkpoint block values", rows * cols, block.values.len())?;
        data.extend_from_slice(&block.values);
    }
    let buf = ParamBuffer::from_flat(dims, data)?;
    if !buf.is_finite() {
        return Err(Error::NonFinite(
            "checkpoint contains non-finite weights".into(),
        ));
    }
    Ok(buf)
}

impl Checkpoint {
    pub fn new(
        params: &LstmParameters,
        init_seed: u64,
        epochs_completed: usize,
        velocity: Option<&ParamBuffer>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            dims: params.dims(),
            init_seed,
            epochs_completed,
            blocks: to_blocks(params),
            velocity: velocity.map(to_blocks),
        }
    }

    pub fn params(&self) -> Result<LstmParameters> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Degenerate(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        from_blocks(self.dims, &self.blocks)
    }

    pub fn velocity(&self) -> Result<Option<ParamBuffer>> {
        self.velocity
            .as_deref()
            .map(|b| from_blocks(self.dims, b))
            .transpose()
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
