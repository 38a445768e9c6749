//! A small fully convolutional keypoint / visibility predictor with a
//! hand-written backward pass, plus an Adam optimizer and checkpoint files.
//!
//! ```text
//! image S×S×3 ─ conv5×5 (8) ─ ReLU ─ avgpool 2×2 ─ conv5×5 (16) ─ ReLU ─┬─ 1×1 (C) ─ spatial softmax → heatmap
//!                                                                       └─ 1×1 (C) ─ logistic        → visibility
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{Grid, GridError};
use crate::heatmap::Heatmap;
use crate::visibility::VisibilityMap;

pub const CHECKPOINT_VERSION: u8 = 1;

const KERNEL: usize = 5;
const PAD: usize = KERNEL / 2;
pub const STAGE1_PLANES: usize = 8;
pub const STAGE2_PLANES: usize = 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// Input resolution and keypoint channel count. Output grids are half the
/// input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorConfig {
    pub input_size: usize,
    pub channels: usize,
}

impl PredictorConfig {
    pub fn new(channels: usize) -> Self {
        Self { input_size: 64, channels }
    }

    pub fn output_size(&self) -> usize {
        self.input_size / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

// Tensor order inside `PredictorWeights::tensors`.
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const KP_W: usize = 4;
const KP_B: usize = 5;
const VIS_W: usize = 6;
const VIS_B: usize = 7;

/// Parameters of both heads and the shared trunk. Tensors are kept in a
/// fixed order so optimizers and checkpoints can treat them as a flat list.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    pub config: PredictorConfig,
    pub tensors: Vec<Tensor>,
}

impl PredictorWeights {
    fn shapes(config: PredictorConfig) -> Vec<Vec<usize>> {
        let c = config.channels;
        vec![
            vec![STAGE1_PLANES, 3, KERNEL, KERNEL],
            vec![STAGE1_PLANES],
            vec![STAGE2_PLANES, STAGE1_PLANES, KERNEL, KERNEL],
            vec![STAGE2_PLANES],
            vec![c, STAGE2_PLANES],
            vec![c],
            vec![c, STAGE2_PLANES],
            vec![c],
        ]
    }

    pub fn zeros(config: PredictorConfig) -> Self {
        Self { config, tensors: Self::shapes(config).iter().map(|s| Tensor::zeros(s)).collect() }
    }

    /// Seeded uniform initialization in `[-0.05, 0.05]`.
    pub fn init(config: PredictorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(config);
        for t in &mut w.tensors {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.05..=0.05));
        }
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn scaled_add(&mut self, other: &PredictorWeights, alpha: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += alpha * y);
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_tensors(&mut w, &self.tensors)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, config: PredictorConfig) -> Result<Self, ModelError> {
        let tensors = read_tensors(BufReader::new(File::open(path)?))?;
        let expected = Self::shapes(config);
        if tensors.len() != expected.len() || tensors.iter().zip(&expected).any(|(t, s)| &t.shape != s) {
            return Err(ModelError::Checkpoint("tensor shapes do not match the predictor configuration".into()));
        }
        Ok(Self { config, tensors })
    }
}

/// Checkpoint layout: version byte, `u32` tensor count, then per tensor a
/// `u32` rank, `u32` dims, and little-endian `f64` values.
pub fn write_tensors<W: Write>(mut w: W, tensors: &[Tensor]) -> Result<(), ModelError> {
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<Tensor>, ModelError> {
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {}", version[0])));
    }
    let mut u32_buf = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<usize, ModelError> {
        r.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf) as usize)
    };
    let count = next_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rank = next_u32(&mut r)?;
        if rank > 8 {
            return Err(ModelError::Checkpoint(format!("tensor rank {rank} too large")));
        }
        let shape = (0..rank).map(|_| next_u32(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.push(Tensor { shape, data });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(tensors)
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    input: Vec<f64>,
    stage1: Vec<f64>,
    pooled: Vec<f64>,
    stage2: Vec<f64>,
    heatmap: Vec<f64>,
    visibility: Vec<f64>,
}

/// Output of [`forward`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub heatmap: Heatmap,
    pub visibility: VisibilityMap,
    pub cache: ActivationCache,
}

// `out[o] += Σ_i w[o,i] ⋆ input[i]` with zero padding, same spatial size.
fn conv_forward(input: &[f64], in_planes: usize, size: usize, weight: &[f64], bias: &[f64], out_planes: usize) -> Vec<f64> {
    let plane = size * size;
    let mut out = vec![0.0; out_planes * plane];
    for o in 0..out_planes {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for i in 0..in_planes {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let w = weight[((o * in_planes + i) * KERNEL + ky) * KERNEL + kx];
                    let (y0, y1) = valid_range(ky, size);
                    let (x0, x1) = valid_range(kx, size);
                    for y in y0..y1 {
                        let sy = y + ky - PAD;
                        let d = &mut dst[y * size + x0..y * size + x1];
                        let s = &src[sy * size + x0 + kx - PAD..sy * size + x1 + kx - PAD];
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += w * b;
                        }
                    }
                }
            }
        }
    }
    out
}

// Output rows/cols whose tap `k` lands inside the input.
fn valid_range(k: usize, size: usize) -> (usize, usize) {
    let lo = PAD.saturating_sub(k);
    let hi = (size + PAD).saturating_sub(k).min(size);
    (lo, hi)
}

// Accumulates weight/bias gradients and (optionally) the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_planes: usize,
    size: usize,
    weight: &[f64],
    grad_out: &[f64],
    out_planes: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let plane = size * size;
    for o in 0..out_planes {
        let g = &grad_out[o * plane..(o + 1) * plane];
        grad_bias[o] += g.iter().sum::<f64>();
        for i in 0..in_planes {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((o * in_planes + i) * KERNEL + ky) * KERNEL + kx;
                    let (y0, y1) = valid_range(ky, size);
                    let (x0, x1) = valid_range(kx, size);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - PAD;
                        let gr = &g[y * size + x0..y * size + x1];
                        let s = &src[sy * size + x0 + kx - PAD..sy * size + x1 + kx - PAD];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_weight[widx] += acc;
                    if let Some(gi) = grad_input.as_deref_mut() {
                        let w = weight[widx];
                        let gi = &mut gi[i * plane..(i + 1) * plane];
                        for y in y0..y1 {
                            let sy = y + ky - PAD;
                            let gr = &g[y * size + x0..y * size + x1];
                            let d = &mut gi[sy * size + x0 + kx - PAD..sy * size + x1 + kx - PAD];
                            for (a, b) in d.iter_mut().zip(gr) {
                                *a += w * b;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs the predictor on a planar `S×S×3` image.
pub fn forward(weights: &PredictorWeights, image: &Grid) -> Result<Prediction, ModelError> {
    let cfg = weights.config;
    let size = cfg.input_size;
    if image.width != size || image.height != size || image.channels != 3 {
        return Err(GridError::ShapeMismatch(format!(
            "predictor expects {size}x{size}x3, got {}x{}x{}",
            image.width, image.height, image.channels
        ))
        .into());
    }
    let t = &weights.tensors;
    let mut stage1 = conv_forward(&image.data, 3, size, &t[CONV1_W].data, &t[CONV1_B].data, STAGE1_PLANES);
    stage1.iter_mut().for_each(|v| *v = v.max(0.0));

    let half = cfg.output_size();
    let plane = half * half;
    let mut pooled = vec![0.0; STAGE1_PLANES * plane];
    for p in 0..STAGE1_PLANES {
        let src = &stage1[p * size * size..(p + 1) * size * size];
        for y in 0..half {
            for x in 0..half {
                let (a, b) = (2 * y * size + 2 * x, (2 * y + 1) * size + 2 * x);
                pooled[p * plane + y * half + x] = 0.25 * (src[a] + src[a + 1] + src[b] + src[b + 1]);
            }
        }
    }

    let mut stage2 = conv_forward(&pooled, STAGE1_PLANES, half, &t[CONV2_W].data, &t[CONV2_B].data, STAGE2_PLANES);
    stage2.iter_mut().for_each(|v| *v = v.max(0.0));

    let c = cfg.channels;
    let head = |w: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; c * plane];
        for k in 0..c {
            let dst = &mut out[k * plane..(k + 1) * plane];
            dst.fill(b[k]);
            for f in 0..STAGE2_PLANES {
                let wf = w[k * STAGE2_PLANES + f];
                for (a, s) in dst.iter_mut().zip(&stage2[f * plane..(f + 1) * plane]) {
                    *a += wf * s;
                }
            }
        }
        out
    };
    let mut heat = head(&t[KP_W].data, &t[KP_B].data);
    for k in 0..c {
        let logits = &mut heat[k * plane..(k + 1) * plane];
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logits.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = logits.iter().sum();
        logits.iter_mut().for_each(|v| *v /= s);
    }
    let mut vis = head(&t[VIS_W].data, &t[VIS_B].data);
    vis.iter_mut().for_each(|v| *v = sigmoid(*v));

    let heatmap = Heatmap::new(Grid::from_vec(half, half, c, heat.clone())?)?;
    let visibility = VisibilityMap::new(Grid::from_vec(half, half, c, vis.clone())?)?;
    let cache = ActivationCache { input: image.data.clone(), stage1, pooled, stage2, heatmap: heat, visibility: vis };
    Ok(Prediction { heatmap, visibility, cache })
}

/// Reverse-mode gradient of `⟨grad_heatmap, P⟩ + ⟨grad_visibility, V⟩` with
/// respect to every weight.
pub fn backward(
    weights: &PredictorWeights,
    cache: &ActivationCache,
    grad_heatmap: &Grid,
    grad_visibility: &Grid,
) -> PredictorWeights {
    let cfg = weights.config;
    let (size, half, c) = (cfg.input_size, cfg.output_size(), cfg.channels);
    let plane = half * half;
    let t = &weights.tensors;
    let mut grads = PredictorWeights::zeros(cfg);

    // softmax and logistic heads back to logits
    let mut d_heat = vec![0.0; c * plane];
    let mut d_vis = vec![0.0; c * plane];
    for k in 0..c {
        let p = &cache.heatmap[k * plane..(k + 1) * plane];
        let g = grad_heatmap.channel(k);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (x, d) in d_heat[k * plane..(k + 1) * plane].iter_mut().enumerate() {
            *d = p[x] * (g[x] - dot);
        }
        let v = &cache.visibility[k * plane..(k + 1) * plane];
        let gv = grad_visibility.channel(k);
        for (x, d) in d_vis[k * plane..(k + 1) * plane].iter_mut().enumerate() {
            *d = gv[x] * v[x] * (1.0 - v[x]);
        }
    }

    let mut d_stage2 = vec![0.0; STAGE2_PLANES * plane];
    for (dz, w_idx, b_idx) in [(&d_heat, KP_W, KP_B), (&d_vis, VIS_W, VIS_B)] {
        for k in 0..c {
            let dzk = &dz[k * plane..(k + 1) * plane];
            grads.tensors[b_idx].data[k] += dzk.iter().sum::<f64>();
            for f in 0..STAGE2_PLANES {
                let s = &cache.stage2[f * plane..(f + 1) * plane];
                grads.tensors[w_idx].data[k * STAGE2_PLANES + f] += dzk.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                let wf = t[w_idx].data[k * STAGE2_PLANES + f];
                for (d, g) in d_stage2[f * plane..(f + 1) * plane].iter_mut().zip(dzk) {
                    *d += wf * g;
                }
            }
        }
    }
    d_stage2.iter_mut().zip(&cache.stage2).for_each(|(d, a)| {
        if *a <= 0.0 {
            *d = 0.0
        }
    });

    let mut d_pooled = vec![0.0; STAGE1_PLANES * plane];
    {
        let (head, tail) = grads.tensors.split_at_mut(CONV2_B);
        conv_backward(
            &cache.pooled,
            STAGE1_PLANES,
            half,
            &t[CONV2_W].data,
            &d_stage2,
            STAGE2_PLANES,
            &mut head[CONV2_W].data,
            &mut tail[0].data,
            Some(&mut d_pooled),
        );
    }

    let mut d_stage1 = vec![0.0; STAGE1_PLANES * size * size];
    for p in 0..STAGE1_PLANES {
        for y in 0..half {
            for x in 0..half {
                let g = 0.25 * d_pooled[p * plane + y * half + x];
                let base = p * size * size;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    d_stage1[base + (2 * y + dy) * size + 2 * x + dx] = g;
                }
            }
        }
    }
    d_stage1.iter_mut().zip(&cache.stage1).for_each(|(d, a)| {
        if *a <= 0.0 {
            *d = 0.0
        }
    });
    let (head, tail) = grads.tensors.split_at_mut(CONV1_B);
    conv_backward(
        &cache.input,
        3,
        size,
        &t[CONV1_W].data,
        &d_stage1,
        STAGE1_PLANES,
        &mut head[CONV1_W].data,
        &mut tail[0].data,
        None,
    );
    grads
}

/// Adam hyper-parameters and moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(weights: &PredictorWeights, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = weights.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Stores moments, step, and hyper-parameters in the checkpoint format.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut tensors = vec![Tensor {
            shape: vec![5],
            data: vec![self.step as f64, self.learning_rate, self.beta1, self.beta2, self.epsilon],
        }];
        tensors.extend(self.first_moment.iter().cloned());
        tensors.extend(self.second_moment.iter().cloned());
        let mut w = BufWriter::new(File::create(path)?);
        write_tensors(&mut w, &tensors)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut tensors = read_tensors(BufReader::new(File::open(path)?))?;
        if tensors.is_empty() || tensors[0].data.len() != 5 || (tensors.len() - 1) % 2 != 0 {
            return Err(ModelError::Checkpoint("bad optimizer state layout".into()));
        }
        let meta = tensors.remove(0).data;
        let half = tensors.len() / 2;
        let second_moment = tensors.split_off(half);
        Ok(Self {
            first_moment: tensors,
            second_moment,
            step: meta[0] as u64,
            learning_rate: meta[1],
            beta1: meta[2],
            beta2: meta[3],
            epsilon: meta[4],
        })
    }
}

/// One bias-corrected Adam update.
pub fn step(state: &mut OptimizerState, weights: &mut PredictorWeights, grads: &PredictorWeights) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (k, w) in weights.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[k].data;
        let m = &mut state.first_moment[k].data;
        let v = &mut state.second_moment[k].data;
        for idx in 0..w.data.len() {
            m[idx] = state.beta1 * m[idx] + (1.0 - state.beta1) * g[idx];
            v[idx] = state.beta2 * v[idx] + (1.0 - state.beta2) * g[idx] * g[idx];
            let m_hat = m[idx] / bc1;
            let v_hat = v[idx] / bc2;
            w.data[idx] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
}
