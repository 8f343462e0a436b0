//! Minimal dense/convolutional network engine with analytic backprop:
//! 3x3 same-padding conv blocks with 2x2 max-pooling, fully connected
//! layers with optional noisy weights, and a dueling value/advantage head.
//! Everything is 64-bit and deterministic given the noise draw.

mod checkpoint;
mod network;

pub use network::{forward, forward_batch, loss_and_gradients, ForwardCache};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::nav_map::NUM_ACTIONS;

/// Architecture of the Q-network. The output dimension is always 8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    /// Filters per conv block; each block is conv3x3 (same pad) + ReLU + 2x2 max-pool.
    pub conv_filters: Vec<usize>,
    /// Fully connected widths after flattening.
    pub fc_widths: Vec<usize>,
    /// Hidden width of the value and advantage heads.
    pub head_width: usize,
    pub noisy: bool,
}

impl NetworkConfig {
    /// The full-scale architecture: 64/32/16 filters, three 256-wide fc
    /// layers, 64-neuron heads.
    pub fn full_scale(in_height: usize, in_width: usize, noisy: bool) -> Self {
        Self {
            in_channels: 3,
            in_height,
            in_width,
            conv_filters: vec![64, 32, 16],
            fc_widths: vec![256, 256, 256],
            head_width: 64,
            noisy,
        }
    }

    /// Reduced widths for desk-scale training runs.
    pub fn desk_scale(in_height: usize, in_width: usize, noisy: bool) -> Self {
        Self {
            in_channels: 3,
            in_height,
            in_width,
            conv_filters: vec![8, 8],
            fc_widths: vec![64],
            head_width: 32,
            noisy,
        }
    }
}

/// Location of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct TensorSpec {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub w: TensorSpec,
    pub b: TensorSpec,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Spatial size of this block's input.
    pub in_h: usize,
    pub in_w: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearSpec {
    pub w: TensorSpec,
    pub b: TensorSpec,
    /// Noise-scale tensors; present iff the network is noisy.
    pub wn: Option<TensorSpec>,
    pub bn: Option<TensorSpec>,
    /// Offsets of this layer's draws inside a NoiseDraw vector.
    pub eps_w_offset: usize,
    pub eps_b_offset: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Flat-vector layout of all parameters, derived from a NetworkConfig.
#[derive(Debug, Clone)]
pub struct Layout {
    pub convs: Vec<ConvSpec>,
    pub fcs: Vec<LinearSpec>,
    pub value_hidden: LinearSpec,
    pub value_out: LinearSpec,
    pub adv_hidden: LinearSpec,
    pub adv_out: LinearSpec,
    /// Flattened conv-tower output dimension.
    pub flat_dim: usize,
    pub param_len: usize,
    pub noise_len: usize,
}

impl Layout {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let mut offset = 0usize;
        let mut noise_offset = 0usize;
        let mut tensor = |rows: usize, cols: usize| -> TensorSpec {
            let t = TensorSpec { offset, rows, cols };
            offset += rows * cols;
            t
        };

        let mut convs = Vec::new();
        let (mut h, mut w) = (cfg.in_height, cfg.in_width);
        let mut ch = cfg.in_channels;
        for &f in &cfg.conv_filters {
            let wspec = tensor(f, ch * 9);
            let bspec = tensor(f, 1);
            convs.push(ConvSpec {
                w: wspec,
                b: bspec,
                in_ch: ch,
                out_ch: f,
                in_h: h,
                in_w: w,
            });
            ch = f;
            h /= 2;
            w /= 2;
        }
        assert!(h >= 1 && w >= 1, "input raster too small for the conv tower");
        let flat_dim = ch * h * w;

        let mut linear = |in_dim: usize, out_dim: usize| -> LinearSpec {
            let wspec = tensor(out_dim, in_dim);
            let bspec = tensor(out_dim, 1);
            let (wn, bn, ew, eb) = if cfg.noisy {
                let wn = tensor(out_dim, in_dim);
                let bn = tensor(out_dim, 1);
                let ew = noise_offset;
                noise_offset += out_dim * in_dim;
                let eb = noise_offset;
                noise_offset += out_dim;
                (Some(wn), Some(bn), ew, eb)
            } else {
                (None, None, usize::MAX, usize::MAX)
            };
            LinearSpec {
                w: wspec,
                b: bspec,
                wn,
                bn,
                eps_w_offset: ew,
                eps_b_offset: eb,
                in_dim,
                out_dim,
            }
        };

        let mut fcs = Vec::new();
        let mut dim = flat_dim;
        for &width in &cfg.fc_widths {
            fcs.push(linear(dim, width));
            dim = width;
        }
        let value_hidden = linear(dim, cfg.head_width);
        let value_out = linear(cfg.head_width, 1);
        let adv_hidden = linear(dim, cfg.head_width);
        let adv_out = linear(cfg.head_width, NUM_ACTIONS);

        Layout {
            convs,
            fcs,
            value_hidden,
            value_out,
            adv_hidden,
            adv_out,
            flat_dim,
            param_len: offset,
            noise_len: noise_offset,
        }
    }

    pub fn linears(&self) -> Vec<&LinearSpec> {
        let mut all: Vec<&LinearSpec> = self.fcs.iter().collect();
        all.push(&self.value_hidden);
        all.push(&self.value_out);
        all.push(&self.adv_hidden);
        all.push(&self.adv_out);
        all
    }
}

/// Initial scale of the trainable noise parameters.
const NOISE_SCALE_INIT: f64 = 0.017;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// All trainable parameters plus Adam state, stored as one flat vector.
#[derive(Debug, Clone)]
pub struct QNetworkParams {
    pub config: NetworkConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
}

impl QNetworkParams {
    /// Weights and biases uniform in ±1/sqrt(fan_in); noise scales constant.
    pub fn init(config: NetworkConfig, seed: u64) -> Self {
        let layout = Layout::new(&config);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut data = vec![0.0; layout.param_len];

        for conv in &layout.convs {
            let bound = 1.0 / ((conv.in_ch * 9) as f64).sqrt();
            for v in &mut data[conv.w.range()] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut data[conv.b.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        for lin in layout.linears() {
            let bound = 1.0 / (lin.in_dim as f64).sqrt();
            for v in &mut data[lin.w.range()] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut data[lin.b.range()] {
                *v = rng.random_range(-bound..bound);
            }
            if let Some(wn) = lin.wn {
                data[wn.range()].fill(NOISE_SCALE_INIT);
            }
            if let Some(bn) = lin.bn {
                data[bn.range()].fill(NOISE_SCALE_INIT);
            }
        }

        let n = layout.param_len;
        Self {
            config,
            layout,
            data,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }
}

/// Per-noisy-layer standard normal draws, regenerated on demand.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub data: Vec<f64>,
}

impl NoiseDraw {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            data: vec![0.0; layout.noise_len],
        }
    }

    pub fn sample(layout: &Layout, rng: &mut ChaCha12Rng) -> Self {
        let data = (0..layout.noise_len)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { data }
    }
}

/// Dueling head combination: Q_a = V + A_a - mean(A).
pub fn dueling_combine(v: f64, a: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let mean = a.iter().sum::<f64>() / NUM_ACTIONS as f64;
    let mut q = [0.0; NUM_ACTIONS];
    for i in 0..NUM_ACTIONS {
        q[i] = v + a[i] - mean;
    }
    q
}

/// Standard Adam update; increments the step counter.
pub fn adam_step(params: &mut QNetworkParams, grads: &[f64], learning_rate: f64) {
    assert_eq!(grads.len(), params.data.len());
    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.data.len() {
        let g = grads[i];
        params.adam_m[i] = ADAM_BETA1 * params.adam_m[i] + (1.0 - ADAM_BETA1) * g;
        params.adam_v[i] = ADAM_BETA2 * params.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = params.adam_m[i] / bc1;
        let v_hat = params.adam_v[i] / bc2;
        params.data[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Soft target update: target <- (1 - varpi) target + varpi online.
pub fn soft_update(target: &mut QNetworkParams, online: &QNetworkParams, varpi: f64) {
    assert_eq!(target.data.len(), online.data.len());
    for (t, o) in target.data.iter_mut().zip(online.data.iter()) {
        *t = (1.0 - varpi) * *t + varpi * *o;
    }
}

pub use checkpoint::{load_checkpoint, save_checkpoint};
