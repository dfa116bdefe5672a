//! A tiny factorized spatial/temporal v-prediction network with hand-written
//! backpropagation.
//!
//! Per sample, with `u = [x_t | cond | mask]` per pixel:
//!
//! ```text
//! h = φ(t) ⊙ (W_in·x_t + W_cond·[cond, mask] + b_in) + handle_bias      (per frame, per pixel)
//! g = TemporalConv3(h) + b_conv                                          (across frames, zero padded)
//! o = g + W_proj·Attention_frames(W_q g, W_k g, W_v g) + b_proj          (per pixel, across frames)
//! y = W_out·o + b_out                                                    (per frame, per pixel)
//! ```
//!
//! `φ(t) = 1 + film_s·s[t] + film_n·n[t]`. The spatial parameters
//! (`W_in`, `b_in`, FiLM gains, handle biases, `W_out`, `b_out`) are frozen.
//! The trainable set is the zero-initialized conditioning-channel kernel
//! `W_cond`, the temporal convolution (identity kernel at init) and the
//! temporal attention block (output projection zeroed at init), so a fresh
//! net computes exactly its spatial-only map.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::conditioning::{make_image_conditioning, ConditioningPack};
use crate::error::{Error, Result};
use crate::latent::{LatentVideo, Shape};
use crate::rng;
use crate::schedule::{convert_scalar, express_scalar, NoiseSchedule, PredictionKind};

use super::{check_request, CondHandle, Denoiser, DenoiserRequest};

const TAPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Latent channels `C`.
    pub channels: usize,
    /// Hidden width of the temporal layers.
    pub hidden: usize,
    /// Seed for the frozen "pretrained" spatial weights and attention q/k/v.
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { channels: 2, hidden: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SpatialParams {
    w_in: Vec<f64>,   // hidden x C
    b_in: Vec<f64>,   // hidden
    film_s: Vec<f64>, // hidden
    film_n: Vec<f64>, // hidden
    handle: Vec<f64>, // 4 x hidden
    w_out: Vec<f64>,  // C x hidden
    b_out: Vec<f64>,  // C
}

#[derive(Debug, Clone, PartialEq)]
struct TrainableParams {
    w_cond: Vec<f64>,    // hidden x (C + 1)
    conv: Vec<f64>,      // hidden x hidden x 3
    conv_bias: Vec<f64>, // hidden
    attn_q: Vec<f64>,    // hidden x hidden
    attn_k: Vec<f64>,
    attn_v: Vec<f64>,
    attn_proj: Vec<f64>,      // hidden x hidden
    attn_proj_bias: Vec<f64>, // hidden
}

/// Gradients of the trainable parameters, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGrads(TrainableParams);

impl ToyGrads {
    /// `(name, values)` per trainable tensor, in [`ToyFactorizedNet::trainable_mut`] order.
    pub fn named(&self) -> Vec<(&'static str, &[f64])> {
        self.0.named()
    }
}

impl TrainableParams {
    fn zeros(c: usize, d: usize) -> Self {
        Self {
            w_cond: vec![0.0; d * (c + 1)],
            conv: vec![0.0; d * d * TAPS],
            conv_bias: vec![0.0; d],
            attn_q: vec![0.0; d * d],
            attn_k: vec![0.0; d * d],
            attn_v: vec![0.0; d * d],
            attn_proj: vec![0.0; d * d],
            attn_proj_bias: vec![0.0; d],
        }
    }

    fn named(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("cond_in", &self.w_cond),
            ("temporal_conv", &self.conv),
            ("temporal_conv_bias", &self.conv_bias),
            ("temporal_attn_q", &self.attn_q),
            ("temporal_attn_k", &self.attn_k),
            ("temporal_attn_v", &self.attn_v),
            ("temporal_attn_proj", &self.attn_proj),
            ("temporal_attn_proj_bias", &self.attn_proj_bias),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("cond_in", &mut self.w_cond),
            ("temporal_conv", &mut self.conv),
            ("temporal_conv_bias", &mut self.conv_bias),
            ("temporal_attn_q", &mut self.attn_q),
            ("temporal_attn_k", &mut self.attn_k),
            ("temporal_attn_v", &mut self.attn_v),
            ("temporal_attn_proj", &mut self.attn_proj),
            ("temporal_attn_proj_bias", &mut self.attn_proj_bias),
        ]
    }
}

impl SpatialParams {
    fn named(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("spatial_in", &self.w_in),
            ("spatial_in_bias", &self.b_in),
            ("spatial_film_signal", &self.film_s),
            ("spatial_film_noise", &self.film_n),
            ("spatial_handle_bias", &self.handle),
            ("spatial_out", &self.w_out),
            ("spatial_out_bias", &self.b_out),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("spatial_in", &mut self.w_in),
            ("spatial_in_bias", &mut self.b_in),
            ("spatial_film_signal", &mut self.film_s),
            ("spatial_film_noise", &mut self.film_n),
            ("spatial_handle_bias", &mut self.handle),
            ("spatial_out", &mut self.w_out),
            ("spatial_out_bias", &mut self.b_out),
        ]
    }
}

/// Factorized toy denoiser predicting `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFactorizedNet {
    config: ToyConfig,
    spatial: SpatialParams,
    trainable: TrainableParams,
    steps: u64,
}

/// One noised training input with its `v` target.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub x_t: LatentVideo,
    pub pack: ConditioningPack,
    pub t: usize,
    pub cond: CondHandle,
    pub target_v: LatentVideo,
}

/// Intermediate activations for one sample, laid out `[frame][hidden][pixel]`.
struct Activations {
    h: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    y: Vec<f64>,
}

struct Dims {
    frames: usize,
    c: usize,
    d: usize,
    plane: usize,
}

impl Dims {
    fn hid(&self, f: usize, d: usize, p: usize) -> usize {
        (f * self.d + d) * self.plane + p
    }
    fn lat(&self, f: usize, c: usize, p: usize) -> usize {
        (f * self.c + c) * self.plane + p
    }
    fn cond(&self, f: usize, k: usize, p: usize) -> usize {
        (f * (self.c + 1) + k) * self.plane + p
    }
}

impl ToyFactorizedNet {
    /// Fresh net: seeded frozen spatial weights, identity temporal layers.
    pub fn new(config: ToyConfig) -> Result<Self> {
        let (c, d) = (config.channels, config.hidden);
        if c == 0 || d == 0 {
            return Err(Error::InvalidShape("toy net needs positive channels and hidden width".into()));
        }
        let mut r = rng::seeded(config.seed);
        let mut gauss =
            |len: usize, std: f64| -> Vec<f64> { (0..len).map(|_| std * rng::standard_normal(&mut r)).collect() };
        let spatial = SpatialParams {
            w_in: gauss(d * c, (1.0 / c as f64).sqrt()),
            b_in: gauss(d, 0.1),
            film_s: gauss(d, 0.5),
            film_n: gauss(d, 0.5),
            handle: gauss(4 * d, 0.1),
            w_out: gauss(c * d, (1.0 / d as f64).sqrt()),
            b_out: gauss(c, 0.1),
        };
        let mut trainable = TrainableParams::zeros(c, d);
        let qkv_std = (1.0 / d as f64).sqrt();
        trainable.attn_q = gauss(d * d, qkv_std);
        trainable.attn_k = gauss(d * d, qkv_std);
        trainable.attn_v = gauss(d * d, qkv_std);
        for i in 0..d {
            trainable.conv[(i * d + i) * TAPS + 1] = 1.0;
        }
        Ok(Self { config, spatial, trainable, steps: 0 })
    }

    pub fn config(&self) -> ToyConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Frozen spatial tensors by name.
    pub fn spatial_params(&self) -> Vec<(&'static str, &[f64])> {
        self.spatial.named().into_iter().map(|(n, v)| (n, v.as_slice())).collect()
    }

    /// Trainable tensors by name.
    pub fn trainable_params(&self) -> Vec<(&'static str, &[f64])> {
        self.trainable.named()
    }

    /// Mutable access to trainable tensors, for perturbation and experiments.
    pub fn trainable_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        self.trainable.named_mut().into_iter().map(|(n, v)| (n, v.as_mut_slice())).collect()
    }

    /// Bitwise equality of every parameter.
    pub fn params_bit_identical(&self, other: &ToyFactorizedNet) -> bool {
        let bits = |xs: &[f64]| xs.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let a = self.spatial_params().into_iter().chain(self.trainable_params());
        let b = other.spatial_params().into_iter().chain(other.trainable_params());
        a.zip(b).all(|((_, x), (_, y))| bits(x) == bits(y))
    }

    pub fn spatial_bit_identical(&self, other: &ToyFactorizedNet) -> bool {
        let bits = |xs: &[f64]| xs.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        self.spatial_params().into_iter().zip(other.spatial_params()).all(|((_, x), (_, y))| bits(x) == bits(y))
    }

    fn dims(&self, shape: Shape) -> Result<Dims> {
        if shape.channels != self.config.channels {
            return Err(Error::ShapeMismatch {
                expected: shape.with_channels(self.config.channels).as_array(),
                got: shape.as_array(),
            });
        }
        Ok(Dims { frames: shape.frames, c: shape.channels, d: self.config.hidden, plane: shape.plane() })
    }

    /// The frozen per-frame spatial stage, before the output projection.
    fn spatial_hidden(
        &self,
        dims: &Dims,
        x_t: &[f64],
        cond_in: &[f64],
        s: f64,
        n: f64,
        handle: CondHandle,
    ) -> Vec<f64> {
        let sp = &self.spatial;
        let tr = &self.trainable;
        let (c, d) = (dims.c, dims.d);
        let mut h = vec![0.0; dims.frames * d * dims.plane];
        for f in 0..dims.frames {
            for k in 0..d {
                let film = 1.0 + sp.film_s[k] * s + sp.film_n[k] * n;
                let hb = sp.handle[handle.index() * d + k];
                for p in 0..dims.plane {
                    let mut pre = sp.b_in[k];
                    for ch in 0..c {
                        pre += sp.w_in[k * c + ch] * x_t[dims.lat(f, ch, p)];
                    }
                    for j in 0..=c {
                        pre += tr.w_cond[k * (c + 1) + j] * cond_in[dims.cond(f, j, p)];
                    }
                    h[dims.hid(f, k, p)] = film * pre + hb;
                }
            }
        }
        h
    }

    fn project_out(&self, dims: &Dims, o: &[f64]) -> Vec<f64> {
        let sp = &self.spatial;
        let (c, d) = (dims.c, dims.d);
        let mut y = vec![0.0; dims.frames * c * dims.plane];
        for f in 0..dims.frames {
            for ch in 0..c {
                for p in 0..dims.plane {
                    let mut acc = sp.b_out[ch];
                    for k in 0..d {
                        acc += sp.w_out[ch * d + k] * o[dims.hid(f, k, p)];
                    }
                    y[dims.lat(f, ch, p)] = acc;
                }
            }
        }
        y
    }

    fn temporal_conv(&self, dims: &Dims, h: &[f64]) -> Vec<f64> {
        let tr = &self.trainable;
        let d = dims.d;
        let mut g = vec![0.0; h.len()];
        for f in 0..dims.frames {
            for k in 0..d {
                for p in 0..dims.plane {
                    let mut acc = tr.conv_bias[k];
                    for j in 0..TAPS {
                        let Some(src) = (f + j).checked_sub(1).filter(|&s| s < dims.frames) else {
                            continue;
                        };
                        for k2 in 0..d {
                            acc += tr.conv[(k * d + k2) * TAPS + j] * h[dims.hid(src, k2, p)];
                        }
                    }
                    g[dims.hid(f, k, p)] = acc;
                }
            }
        }
        g
    }

    /// Per-pixel attention over frames; returns `(q, k, v, A, a)` for pixel `p`.
    fn attend(&self, dims: &Dims, g: &[f64], p: usize) -> AttnCache {
        let tr = &self.trainable;
        let (t, d) = (dims.frames, dims.d);
        let gv: Vec<f64> =
            (0..t).flat_map(|f| (0..d).map(move |k| (f, k))).map(|(f, k)| g[dims.hid(f, k, p)]).collect();
        let matvec = |w: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; t * d];
            for f in 0..t {
                for e in 0..d {
                    out[f * d + e] = (0..d).map(|k| w[e * d + k] * gv[f * d + k]).sum();
                }
            }
            out
        };
        let (q, k, v) = (matvec(&tr.attn_q), matvec(&tr.attn_k), matvec(&tr.attn_v));
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = vec![0.0; t * t];
        for f in 0..t {
            let row = &mut attn[f * t..(f + 1) * t];
            for (f2, r) in row.iter_mut().enumerate() {
                *r = scale * (0..d).map(|e| q[f * d + e] * k[f2 * d + e]).sum::<f64>();
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                total += *r;
            }
            for r in row.iter_mut() {
                *r /= total;
            }
        }
        let mut a = vec![0.0; t * d];
        for f in 0..t {
            for e in 0..d {
                a[f * d + e] = (0..t).map(|f2| attn[f * t + f2] * v[f2 * d + e]).sum();
            }
        }
        AttnCache { gv, q, k, v, attn, a }
    }

    fn forward_acts(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule) -> Result<(Dims, Activations)> {
        check_request(req)?;
        let dims = self.dims(req.x_t.shape())?;
        let (s, n) = sched.coefs(req.t)?;
        let cond_in = cond_channels(req.pack)?;
        let h = self.spatial_hidden(&dims, req.x_t.data(), &cond_in, s, n, req.cond);
        let g = self.temporal_conv(&dims, &h);
        let tr = &self.trainable;
        let d = dims.d;
        let mut o = g.clone();
        for p in 0..dims.plane {
            let cache = self.attend(&dims, &g, p);
            for f in 0..dims.frames {
                for k in 0..d {
                    let mut acc = tr.attn_proj_bias[k];
                    for e in 0..d {
                        acc += tr.attn_proj[k * d + e] * cache.a[f * d + e];
                    }
                    o[dims.hid(f, k, p)] += acc;
                }
            }
        }
        let y = self.project_out(&dims, &o);
        Ok((dims, Activations { h, g, o, y }))
    }

    /// Predicted `v` for the request.
    pub fn forward(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule) -> Result<LatentVideo> {
        let (_, acts) = self.forward_acts(req, sched)?;
        LatentVideo::from_vec(req.x_t.shape(), acts.y)
    }

    /// The same net with temporal layers skipped: the per-frame spatial map only.
    pub fn spatial_only(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule) -> Result<LatentVideo> {
        check_request(req)?;
        let dims = self.dims(req.x_t.shape())?;
        let (s, n) = sched.coefs(req.t)?;
        let cond_in = cond_channels(req.pack)?;
        let h = self.spatial_hidden(&dims, req.x_t.data(), &cond_in, s, n, req.cond);
        LatentVideo::from_vec(req.x_t.shape(), self.project_out(&dims, &h))
    }

    /// Mean squared error of the `v` prediction over all examples and its
    /// gradient with respect to the trainable parameters.
    pub fn loss_and_grads(&self, examples: &[TrainingExample], sched: &NoiseSchedule) -> Result<(f64, ToyGrads)> {
        if examples.is_empty() {
            return Err(Error::InvalidShape("empty training batch".into()));
        }
        let count: usize = examples.iter().map(|e| e.target_v.data().len()).sum();
        let mut grads = TrainableParams::zeros(self.config.channels, self.config.hidden);
        let mut loss = 0.0;
        for ex in examples {
            ex.x_t.ensure_same_shape(&ex.target_v)?;
            let req = DenoiserRequest::new(&ex.x_t, &ex.pack, ex.t, ex.cond)?;
            let (dims, acts) = self.forward_acts(&req, sched)?;
            let mut dy = vec![0.0; acts.y.len()];
            for ((dyi, &yi), &vi) in dy.iter_mut().zip(&acts.y).zip(ex.target_v.data()) {
                let r = yi - vi;
                loss += r * r;
                *dyi = 2.0 * r / count as f64;
            }
            let (s, n) = sched.coefs(ex.t)?;
            let cond_in = cond_channels(&ex.pack)?;
            self.backward(&dims, &acts, &dy, &cond_in, s, n, &mut grads);
        }
        let loss = loss / count as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok((loss, ToyGrads(grads)))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        dims: &Dims,
        acts: &Activations,
        dy: &[f64],
        cond_in: &[f64],
        s: f64,
        n: f64,
        grads: &mut TrainableParams,
    ) {
        let sp = &self.spatial;
        let tr = &self.trainable;
        let (t, c, d) = (dims.frames, dims.c, dims.d);

        // output projection (frozen): do = W_outᵀ dy
        let mut d_o = vec![0.0; acts.o.len()];
        for f in 0..t {
            for k in 0..d {
                for p in 0..dims.plane {
                    d_o[dims.hid(f, k, p)] = (0..c).map(|ch| sp.w_out[ch * d + k] * dy[dims.lat(f, ch, p)]).sum();
                }
            }
        }

        // temporal attention, residual
        let mut d_g = d_o.clone();
        let scale = 1.0 / (d as f64).sqrt();
        for p in 0..dims.plane {
            let cache = self.attend(dims, &acts.g, p);
            let dov: Vec<f64> =
                (0..t).flat_map(|f| (0..d).map(move |k| (f, k))).map(|(f, k)| d_o[dims.hid(f, k, p)]).collect();
            let mut da = vec![0.0; t * d];
            for f in 0..t {
                for k in 0..d {
                    let go = dov[f * d + k];
                    grads.attn_proj_bias[k] += go;
                    for e in 0..d {
                        grads.attn_proj[k * d + e] += go * cache.a[f * d + e];
                        da[f * d + e] += tr.attn_proj[k * d + e] * go;
                    }
                }
            }
            let mut dv = vec![0.0; t * d];
            let mut ds = vec![0.0; t * t];
            for f in 0..t {
                let mut d_attn = vec![0.0; t];
                for f2 in 0..t {
                    d_attn[f2] = (0..d).map(|e| da[f * d + e] * cache.v[f2 * d + e]).sum();
                    for e in 0..d {
                        dv[f2 * d + e] += cache.attn[f * t + f2] * da[f * d + e];
                    }
                }
                let dot: f64 = (0..t).map(|j| cache.attn[f * t + j] * d_attn[j]).sum();
                for f2 in 0..t {
                    ds[f * t + f2] = cache.attn[f * t + f2] * (d_attn[f2] - dot);
                }
            }
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            for f in 0..t {
                for f2 in 0..t {
                    let w = scale * ds[f * t + f2];
                    for e in 0..d {
                        dq[f * d + e] += w * cache.k[f2 * d + e];
                        dk[f2 * d + e] += w * cache.q[f * d + e];
                    }
                }
            }
            for f in 0..t {
                for e in 0..d {
                    for k in 0..d {
                        let gk = cache.gv[f * d + k];
                        grads.attn_q[e * d + k] += dq[f * d + e] * gk;
                        grads.attn_k[e * d + k] += dk[f * d + e] * gk;
                        grads.attn_v[e * d + k] += dv[f * d + e] * gk;
                        d_g[dims.hid(f, k, p)] += tr.attn_q[e * d + k] * dq[f * d + e]
                            + tr.attn_k[e * d + k] * dk[f * d + e]
                            + tr.attn_v[e * d + k] * dv[f * d + e];
                    }
                }
            }
        }

        // temporal convolution
        let mut d_h = vec![0.0; acts.h.len()];
        for f in 0..t {
            for k in 0..d {
                for p in 0..dims.plane {
                    let gg = d_g[dims.hid(f, k, p)];
                    grads.conv_bias[k] += gg;
                    for j in 0..TAPS {
                        let Some(src) = (f + j).checked_sub(1).filter(|&s| s < t) else {
                            continue;
                        };
                        for k2 in 0..d {
                            let w = (k * d + k2) * TAPS + j;
                            grads.conv[w] += gg * acts.h[dims.hid(src, k2, p)];
                            d_h[dims.hid(src, k2, p)] += tr.conv[w] * gg;
                        }
                    }
                }
            }
        }

        // conditioning-channel kernel inside the FiLM-scaled spatial input
        for f in 0..t {
            for k in 0..d {
                let film = 1.0 + sp.film_s[k] * s + sp.film_n[k] * n;
                for p in 0..dims.plane {
                    let dpre = film * d_h[dims.hid(f, k, p)];
                    for j in 0..=c {
                        grads.w_cond[k * (c + 1) + j] += dpre * cond_in[dims.cond(f, j, p)];
                    }
                }
            }
        }
    }

    /// Applies `param -= lr * grad` to every trainable tensor.
    pub fn apply_grads(&mut self, grads: &ToyGrads, lr: f64) {
        if lr == 0.0 {
            return;
        }
        for ((_, p), (_, g)) in self.trainable.named_mut().into_iter().zip(grads.0.named()) {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
    }

    /// Writes a checkpoint: JSON header line, then every tensor as little-endian `f32`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        for (name, values, frozen) in self.all_tensors() {
            tensors.push(TensorHeader { name: name.to_string(), len: values.len(), frozen });
            for v in values {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            format: "toy-factorized-net".into(),
            channels: self.config.channels,
            hidden: self.config.hidden,
            seed: self.config.seed,
            steps: self.steps,
            spatial_frozen: true,
            dtype: "f32".into(),
            endian: "little".into(),
            tensors,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let header: CheckpointHeader = serde_json::from_slice(&line)?;
        if header.format != "toy-factorized-net" || header.dtype != "f32" || header.endian != "little" {
            return Err(Error::Format("not a toy-factorized-net f32 little-endian checkpoint".into()));
        }
        let config = ToyConfig { channels: header.channels, hidden: header.hidden, seed: header.seed };
        let mut net = Self::new(config)?;
        net.steps = header.steps;
        let mut slots: Vec<(&'static str, &mut Vec<f64>, bool)> = net
            .spatial
            .named_mut()
            .into_iter()
            .map(|(n, v)| (n, v, true))
            .chain(net.trainable.named_mut().into_iter().map(|(n, v)| (n, v, false)))
            .collect();
        if slots.len() != header.tensors.len() {
            return Err(Error::Format("checkpoint tensor count mismatch".into()));
        }
        for ((name, slot, frozen), th) in slots.iter_mut().zip(&header.tensors) {
            if *name != th.name || slot.len() != th.len || *frozen != th.frozen {
                return Err(Error::Format(format!("unexpected tensor {} in checkpoint", th.name)));
            }
            let mut raw = vec![0u8; th.len * 4];
            r.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
            for (dst, b) in slot.iter_mut().zip(raw.chunks_exact(4)) {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                if !v.is_finite() {
                    return Err(Error::Format(format!("non-finite value in {}", th.name)));
                }
                *dst = v;
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    fn all_tensors(&self) -> Vec<(&'static str, &[f64], bool)> {
        self.spatial_params()
            .into_iter()
            .map(|(n, v)| (n, v, true))
            .chain(self.trainable_params().into_iter().map(|(n, v)| (n, v, false)))
            .collect()
    }

    /// Draws `t`, `ε` and the first-frame conditioning for each clean video.
    pub fn prepare_batch(batch: &[LatentVideo], sched: &NoiseSchedule, rng_seed: u64) -> Result<Vec<TrainingExample>> {
        use rand::Rng as _;
        batch
            .iter()
            .enumerate()
            .map(|(i, x0)| {
                let mut r = rng::substream(rng_seed, i as u64);
                let t = r.random_range(1..=sched.num_steps());
                let (s, n) = sched.coefs(t)?;
                let eps = rng::normal_vec(&mut r, x0.data().len());
                let x_t: Vec<f64> = x0.data().iter().zip(&eps).map(|(x, e)| s * x + n * e).collect();
                let v: Vec<f64> = x0.data().iter().zip(&eps).map(|(x, e)| s * e - n * x).collect();
                let first = x0.frames(0..1)?;
                Ok(TrainingExample {
                    x_t: LatentVideo::from_vec(x0.shape(), x_t)?,
                    pack: make_image_conditioning(&first, x0.shape().frames)?,
                    t,
                    cond: CondHandle::Full,
                    target_v: LatentVideo::from_vec(x0.shape(), v)?,
                })
            })
            .collect()
    }
}

struct AttnCache {
    gv: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    a: Vec<f64>,
}

/// `[cond | mask]` channels of a pack, `C + 1` per frame.
fn cond_channels(pack: &ConditioningPack) -> Result<Vec<f64>> {
    Ok(LatentVideo::concat_channels(&[pack.cond_latent(), pack.frame_mask()])?.into_data())
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    len: usize,
    frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    channels: usize,
    hidden: usize,
    seed: u64,
    steps: u64,
    spatial_frozen: bool,
    dtype: String,
    endian: String,
    tensors: Vec<TensorHeader>,
}

impl Denoiser for ToyFactorizedNet {
    fn denoise(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule, kind: PredictionKind) -> Result<LatentVideo> {
        let v = self.forward(req, sched)?;
        if kind == PredictionKind::V {
            return Ok(v);
        }
        let (s, n) = sched.coefs(req.t)?;
        let data = req
            .x_t
            .data()
            .iter()
            .zip(v.data())
            .map(|(&x, &vv)| {
                let r = convert_scalar(s, n, x, vv, PredictionKind::V, req.t)?;
                Ok(express_scalar(s, n, r.x0, r.eps, kind))
            })
            .collect::<Result<Vec<f64>>>()?;
        LatentVideo::from_vec(req.x_t.shape(), data)
    }
}

/// Predicted `v` for a request.
pub fn toy_forward(net: &ToyFactorizedNet, req: &DenoiserRequest<'_>, sched: &NoiseSchedule) -> Result<LatentVideo> {
    net.forward(req, sched)
}

/// One SGD step on the trainable parameters. Returns the updated net and the
/// loss measured before the update.
pub fn toy_train_step(
    net: &ToyFactorizedNet,
    batch: &[LatentVideo],
    sched: &NoiseSchedule,
    rng_seed: u64,
    lr: f64,
) -> Result<(ToyFactorizedNet, f64)> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidShape(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    let examples = ToyFactorizedNet::prepare_batch(batch, sched, rng_seed)?;
    let (loss, grads) = net.loss_and_grads(&examples, sched)?;
    let mut next = net.clone();
    next.apply_grads(&grads, lr);
    next.steps += 1;
    Ok((next, loss))
}

/// Linear-Gaussian synthetic clips: a per-pixel latent shared by all frames plus
/// small per-frame jitter around a per-channel mean.
pub fn synthetic_static_videos(shape: Shape, count: usize, seed: u64) -> Vec<LatentVideo> {
    (0..count)
        .map(|i| {
            let mut r = rng::substream(seed, i as u64);
            let base = rng::normal_vec(&mut r, shape.frame_len());
            let jitter = rng::normal_vec(&mut r, shape.len());
            LatentVideo::from_fn(shape, |f, c, y, x| {
                let mean = if c % 2 == 0 { 0.5 } else { -0.5 };
                let idx = (c * shape.height + y) * shape.width + x;
                let flat = ((f * shape.channels + c) * shape.height + y) * shape.width + x;
                mean + base[idx] + 0.1 * jitter[flat]
            })
        })
        .collect()
}
