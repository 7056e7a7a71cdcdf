//! A small 3D convolutional network with exact hand-written gradients, and
//! the Adam training loop used for both pipeline stages.
//!
//! Architecture: a chain of 3×3×3 same-padded convolutions, each followed by
//! ReLU, then a 1×1×1 projection to the output channels and a sigmoid. The
//! input is a single-channel volume.
//!
//! Parameters flatten in a fixed order: for every conv layer its weights
//! (indexed `((out * in_ch + in) * 27 + tap)`, `tap = (dz+1)*9 + (dy+1)*3 + (dx+1)`)
//! followed by its biases; then the head weights (`out * in_ch + in`) and
//! head biases.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heatmap;
use crate::math;
use crate::rng::Stream;
use crate::segmentation;
use crate::volume::{Volume, Volume3D, VolumeKind};

const TAPS: usize = 27;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<ConvLayer>,
    pub head: Head,
}

/// Layer widths and output channel count.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub out_channels: usize,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, out_channels: usize) -> Self {
        Architecture { widths, out_channels }
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { widths: vec![8, 8], out_channels: 1 }
    }
}

impl ConvNet {
    /// All parameters zero.
    pub fn zeros(arch: &Architecture) -> Self {
        let mut in_ch = 1;
        let mut layers = Vec::with_capacity(arch.widths.len());
        for &w in &arch.widths {
            layers.push(ConvLayer { in_ch, out_ch: w, weights: vec![0.0; w * in_ch * TAPS], bias: vec![0.0; w] });
            in_ch = w;
        }
        let out = arch.out_channels;
        ConvNet { layers, head: Head { in_ch, out_ch: out, weights: vec![0.0; out * in_ch], bias: vec![0.0; out] } }
    }

    /// He-normal conv weights, unit-fan-in normal head weights, zero conv
    /// biases and `head_bias` on every output.
    pub fn init(arch: &Architecture, seed: u64, head_bias: f64) -> Self {
        let mut net = Self::zeros(arch);
        let mut rng = Stream::new(seed, 0);
        for layer in net.layers.iter_mut() {
            let std = math::sqrt(2.0 / (layer.in_ch * TAPS) as f64);
            layer.weights.iter_mut().for_each(|w| *w = std * rng.normal());
        }
        let std = math::sqrt(1.0 / net.head.in_ch as f64);
        net.head.weights.iter_mut().for_each(|w| *w = std * rng.normal());
        net.head.bias.iter_mut().for_each(|b| *b = head_bias);
        net
    }

    pub fn architecture(&self) -> Architecture {
        Architecture { widths: self.layers.iter().map(|l| l.out_ch).collect(), out_channels: self.head.out_ch }
    }

    pub fn out_channels(&self) -> usize {
        self.head.out_ch
    }

    pub fn validate(&self) -> Result<()> {
        let mut in_ch = 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_ch != in_ch || l.out_ch == 0 {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} input channels, previous stage gives {in_ch}",
                    l.in_ch
                )));
            }
            if l.weights.len() != l.out_ch * l.in_ch * TAPS || l.bias.len() != l.out_ch {
                return Err(Error::invalid(format!("layer {i} parameter buffers have the wrong length")));
            }
            in_ch = l.out_ch;
        }
        let h = &self.head;
        if h.in_ch != in_ch || h.out_ch == 0 || h.weights.len() != h.out_ch * h.in_ch || h.bias.len() != h.out_ch {
            return Err(Error::invalid(format!(
                "head expects {} input channels, previous stage gives {in_ch}",
                h.in_ch
            )));
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>()
            + self.head.weights.len()
            + self.head.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(&self.head.weights);
        out.extend_from_slice(&self.head.bias);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut rest = flat;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for l in self.layers.iter_mut() {
            take(&mut l.weights);
            take(&mut l.bias);
        }
        take(&mut self.head.weights);
        take(&mut self.head.bias);
        Ok(())
    }

    /// Per-channel sigmoid outputs, same spatial dims as `input`.
    pub fn forward(&self, input: &Volume3D) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_trace(input)?.outputs)
    }

    /// [`ConvNet::forward`] wrapped as volumes of the given kind.
    pub fn forward_volumes(&self, input: &Volume3D, kind: VolumeKind) -> Result<Vec<Volume3D>> {
        self.forward(input)?
            .into_iter()
            .map(|c| Volume::new(*input.grid(), kind, c))
            .collect()
    }

    /// Which hidden units are active (post-ReLU > 0), concatenated over
    /// layers. Finite-difference checks use it to detect steps that cross a
    /// ReLU kink.
    pub fn activation_pattern(&self, input: &Volume3D) -> Result<Vec<bool>> {
        let t = self.forward_trace(input)?;
        Ok(t.acts.iter().flatten().map(|&a| a > 0.0).collect())
    }

    fn forward_trace(&self, input: &Volume3D) -> Result<Trace> {
        self.validate()?;
        let dims = input.dims();
        let n = input.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let src: &[f64] = acts.last().map_or(input.data(), |a| a.as_slice());
            let mut out = vec![0.0; layer.out_ch * n];
            // Row at a time, so the source rows stay in cache across channels.
            for_each_row(dims, |row, y, z| {
                for o in 0..layer.out_ch {
                    let dst = &mut out[o * n + row..][..dims[0]];
                    dst.fill(layer.bias[o]);
                    for c in 0..layer.in_ch {
                        let s = &src[c * n..(c + 1) * n];
                        let w = &layer.weights[(o * layer.in_ch + c) * TAPS..][..TAPS];
                        for (tap, &wt) in w.iter().enumerate() {
                            if let Some((x0, x1, srow)) = tap_row(dims, y, z, tap_offset(tap)) {
                                dst[x0..x1].iter_mut().zip(&s[srow..]).for_each(|(a, b)| *a += wt * b);
                            }
                        }
                    }
                    dst.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            });
            acts.push(out);
        }
        let feat: &[f64] = acts.last().map_or(input.data(), |a| a.as_slice());
        let h = &self.head;
        let mut outputs = Vec::with_capacity(h.out_ch);
        for o in 0..h.out_ch {
            let mut z = vec![h.bias[o]; n];
            for c in 0..h.in_ch {
                let w = h.weights[o * h.in_ch + c];
                z.iter_mut().zip(&feat[c * n..(c + 1) * n]).for_each(|(z, f)| *z += w * f);
            }
            z.iter_mut().for_each(|v| *v = math::sigmoid(*v));
            outputs.push(z);
        }
        Ok(Trace { acts, outputs })
    }

    /// Gradient of `sum_c sum_v upstream[c][v] * output[c][v]` with respect to
    /// every parameter, in flat parameter order.
    pub fn backward(&self, input: &Volume3D, upstream: &[Vec<f64>]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(input)?;
        self.backward_from(input, &trace, upstream)
    }

    fn backward_from(&self, input: &Volume3D, trace: &Trace, upstream: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = input.len();
        let dims = input.dims();
        if upstream.len() != self.head.out_ch || upstream.iter().any(|u| u.len() != n) {
            return Err(Error::invalid("upstream gradient shape does not match the network output"));
        }
        let h = &self.head;
        let feat: &[f64] = trace.acts.last().map_or(input.data(), |a| a.as_slice());

        let mut head_w = vec![0.0; h.weights.len()];
        let mut head_b = vec![0.0; h.out_ch];
        let mut d_feat = vec![0.0; h.in_ch * n];
        for o in 0..h.out_ch {
            let dz: Vec<f64> = upstream[o].iter().zip(&trace.outputs[o]).map(|(u, y)| u * y * (1.0 - y)).collect();
            head_b[o] = dz.iter().sum();
            for c in 0..h.in_ch {
                let f = &feat[c * n..(c + 1) * n];
                head_w[o * h.in_ch + c] = dz.iter().zip(f).map(|(d, f)| d * f).sum();
                let w = h.weights[o * h.in_ch + c];
                d_feat[c * n..(c + 1) * n].iter_mut().zip(&dz).for_each(|(g, d)| *g += w * d);
            }
        }

        let mut layer_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut d_out = d_feat;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let act = &trace.acts[li];
            d_out.iter_mut().zip(act).for_each(|(g, a)| {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            });
            let src: &[f64] = if li == 0 { input.data() } else { &trace.acts[li - 1] };
            let mut gw = vec![0.0; layer.weights.len()];
            let mut gb = vec![0.0; layer.out_ch];
            let mut d_in = if li > 0 { vec![0.0; layer.in_ch * n] } else { Vec::new() };
            for (o, b) in gb.iter_mut().enumerate() {
                *b = d_out[o * n..(o + 1) * n].iter().sum();
            }
            for_each_row(dims, |row, y, z| {
                for o in 0..layer.out_ch {
                    let g = &d_out[o * n + row..][..dims[0]];
                    for c in 0..layer.in_ch {
                        let base = (o * layer.in_ch + c) * TAPS;
                        for tap in 0..TAPS {
                            let Some((x0, x1, srow)) = tap_row(dims, y, z, tap_offset(tap)) else { continue };
                            let s = &src[c * n + srow..][..x1 - x0];
                            gw[base + tap] += dot(&g[x0..x1], s);
                            if li > 0 {
                                let w = layer.weights[base + tap];
                                d_in[c * n + srow..][..x1 - x0].iter_mut().zip(&g[x0..x1]).for_each(|(a, b)| *a += w * b);
                            }
                        }
                    }
                }
            });
            layer_grads.push((gw, gb));
            d_out = d_in;
        }

        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in layer_grads.into_iter().rev() {
            flat.extend(gw);
            flat.extend(gb);
        }
        flat.extend(head_w);
        flat.extend(head_b);
        Ok(flat)
    }
}

struct Trace {
    acts: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

#[inline]
fn tap_offset(tap: usize) -> [isize; 3] {
    [(tap % 3) as isize - 1, ((tap / 3) % 3) as isize - 1, (tap / 9) as isize - 1]
}

/// Valid output range along one axis for a shift `d`: `[lo, hi)` such that
/// `x + d` stays inside `[0, n)`.
#[inline]
fn range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Calls `f(row_start, y, z)` for every x-row, z-major.
#[inline]
fn for_each_row(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            f(dims[0] * (y + dims[1] * z), y, z);
        }
    }
}

/// For output row `(y, z)` and shift `off`: the output x-range `[x0, x1)`
/// and the linear index of source voxel `(x0 + off_x, y + off_y, z + off_z)`.
/// `None` when the shifted row lies outside the volume.
#[inline]
fn tap_row(dims: [usize; 3], y: usize, z: usize, off: [isize; 3]) -> Option<(usize, usize, usize)> {
    let sy = y as isize + off[1];
    let sz = z as isize + off[2];
    if sy < 0 || sz < 0 || sy >= dims[1] as isize || sz >= dims[2] as isize {
        return None;
    }
    let (x0, x1) = range(dims[0], off[0]);
    if x0 >= x1 {
        return None;
    }
    let sx = (x0 as isize + off[0]) as usize;
    Some((x0, x1, sx + dims[0] * (sy as usize + dims[1] * sz as usize)))
}

/// Dot product with four partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, params: AdamParams) -> Self {
        Adam { params, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        let AdamParams { beta1, beta2, epsilon } = self.params;
        self.t += 1;
        let c1 = 1.0 - libm::pow(beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(beta2, self.t as f64);
        for i in 0..theta.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
        }
    }
}

/// Objective attached to the network head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// Mean squared error against heatmaps.
    L2,
    /// Cross-entropy + Dice per channel against binary masks, summed over channels.
    CeDice,
}

/// Stop when the mean loss of the last `window` steps improves on the mean
/// of the `window` steps before it by less than `min_rel_improvement`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Plateau {
    pub window: usize,
    pub min_rel_improvement: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau { window: 20, min_rel_improvement: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// The rate is multiplied by `decay_rate` every `decay_every` steps.
    pub decay_rate: f64,
    pub decay_every: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub plateau: Option<Plateau>,
    pub adam: AdamParams,
}

impl TrainConfig {
    /// Localization regression defaults (initial rate 1e-3).
    pub fn localizer() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            decay_rate: 0.9,
            decay_every: 50,
            max_steps: 200,
            batch_size: 1,
            seed: 0,
            plateau: Some(Plateau::default()),
            adam: AdamParams::default(),
        }
    }

    /// Organ segmentation defaults (initial rate 1e-5). At this rate the loss
    /// moves slowly enough that the plateau rule fires early, so it is off.
    pub fn segmenter() -> Self {
        TrainConfig { learning_rate: 1e-5, plateau: None, ..Self::localizer() }
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let decays = if self.decay_every == 0 { 0 } else { step / self.decay_every };
        self.learning_rate * libm::pow(self.decay_rate, decays as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::invalid("decay rate must lie in (0, 1]"));
        }
        if self.batch_size != 1 {
            return Err(Error::invalid("only mini-batches of size 1 are supported"));
        }
        if let Some(p) = &self.plateau {
            if p.window == 0 {
                return Err(Error::invalid("plateau window must be positive"));
            }
        }
        Ok(())
    }
}

/// One training example: a single-channel input and one target buffer per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Volume3D,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss of each step, measured before that step's update.
    pub trace: Vec<TraceEntry>,
    pub stopped_on_plateau: bool,
}

/// Loss and output gradient for one sample.
pub fn loss_and_grad(kind: LossKind, outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    match kind {
        LossKind::L2 => heatmap::l2_loss_and_grad(targets, outputs),
        LossKind::CeDice => {
            let mut total = 0.0;
            let grads = outputs
                .iter()
                .zip(targets)
                .map(|(p, g)| {
                    total += segmentation::ce_dice_raw(p, g);
                    segmentation::ce_dice_grad_raw(p, g)
                })
                .collect();
            (total, grads)
        }
    }
}

fn check_samples(net: &ConvNet, data: &[Sample], kind: LossKind) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for (i, s) in data.iter().enumerate() {
        if s.targets.len() != net.out_channels() || s.targets.iter().any(|t| t.len() != s.input.len()) {
            return Err(Error::invalid(format!("sample {i} targets do not match the network output shape")));
        }
        let ok = match kind {
            LossKind::L2 => s.targets.iter().flatten().all(|v| v.is_finite()),
            LossKind::CeDice => s.targets.iter().flatten().all(|&v| v == 0.0 || v == 1.0),
        };
        if !ok {
            return Err(Error::invalid(format!("sample {i} targets are incompatible with {kind:?}")));
        }
    }
    Ok(())
}

/// Train `net` in place with Adam, one sample per step. Samples are visited
/// in epochs, each a Fisher-Yates shuffle drawn from `Stream::new(seed, 0)`.
pub fn train(net: &mut ConvNet, data: &[Sample], kind: LossKind, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    net.validate()?;
    check_samples(net, data, kind)?;

    let mut rng = Stream::new(cfg.seed, 0);
    let mut order: Vec<usize> = Vec::new();
    let mut theta = net.params();
    let mut adam = Adam::new(theta.len(), cfg.adam);
    let mut trace = Vec::with_capacity(cfg.max_steps);
    let mut stopped_on_plateau = false;

    for step in 0..cfg.max_steps {
        if order.is_empty() {
            order = (0..data.len()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.below(i + 1));
            }
            order.reverse();
        }
        let sample = &data[order.pop().expect("refilled above")];
        let t = net.forward_trace(&sample.input)?;
        let (loss, upstream) = loss_and_grad(kind, &t.outputs, &sample.targets);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        let lr = cfg.learning_rate_at(step);
        trace.push(TraceEntry { step, lr, loss });

        let grad = net.backward_from(&sample.input, &t, &upstream)?;
        adam.step(&mut theta, &grad, lr);
        if theta.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss: f64::NAN });
        }
        net.set_params(&theta)?;

        if let Some(p) = cfg.plateau {
            if plateaued(&trace, p) {
                stopped_on_plateau = true;
                break;
            }
        }
    }
    Ok(TrainReport { trace, stopped_on_plateau })
}

fn plateaued(trace: &[TraceEntry], p: Plateau) -> bool {
    let w = p.window;
    if trace.len() < 2 * w {
        return false;
    }
    let mean = |s: &[TraceEntry]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
    let n = trace.len();
    let prev = mean(&trace[n - 2 * w..n - w]);
    let last = mean(&trace[n - w..]);
    (prev - last) < p.min_rel_improvement * prev.abs().max(f64::MIN_POSITIVE)
}
