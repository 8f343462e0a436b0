//! Batched forward pass and analytic backpropagation for the dueling noisy
//! conv network. Activations are stored as (channels, N*H*W) matrices;
//! convolutions run as im2col matrix products.

use ndarray::{Array2, Axis};

use crate::env::StateImage;
use crate::nav_map::NUM_ACTIONS;

use super::{ConvSpec, LinearSpec, NoiseDraw, QNetworkParams};

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// Per conv stage: im2col matrix (in_ch*9, N*H*W).
    conv_cols: Vec<Array2<f64>>,
    /// Per conv stage: pre-ReLU output (out_ch, N*H*W).
    conv_pre: Vec<Array2<f64>>,
    /// Per conv stage: argmax input index for every pooled output element,
    /// laid out [out_ch][N*Hp*Wp].
    pool_argmax: Vec<Vec<usize>>,
    /// Inputs and pre-activations of every linear layer, in forward order
    /// fcs.., value_hidden, value_out, adv_hidden, adv_out.
    lin_inputs: Vec<Array2<f64>>,
    lin_pre: Vec<Array2<f64>>,
    batch: usize,
}

fn effective_weight(params: &QNetworkParams, spec: &LinearSpec, noise: &NoiseDraw) -> Array2<f64> {
    let w = &params.data[spec.w.range()];
    let mut eff = Array2::from_shape_vec((spec.out_dim, spec.in_dim), w.to_vec()).unwrap();
    if let Some(wn) = spec.wn {
        let scales = &params.data[wn.range()];
        let eps = &noise.data[spec.eps_w_offset..spec.eps_w_offset + wn.len()];
        for (i, v) in eff.iter_mut().enumerate() {
            *v += scales[i] * eps[i];
        }
    }
    eff
}

fn effective_bias(params: &QNetworkParams, spec: &LinearSpec, noise: &NoiseDraw) -> Vec<f64> {
    let mut b = params.data[spec.b.range()].to_vec();
    if let Some(bn) = spec.bn {
        let scales = &params.data[bn.range()];
        let eps = &noise.data[spec.eps_b_offset..spec.eps_b_offset + bn.len()];
        for (i, v) in b.iter_mut().enumerate() {
            *v += scales[i] * eps[i];
        }
    }
    b
}

/// im2col for a 3x3 same-padding convolution over a batch stored as
/// (channels, N*H*W).
fn im2col(act: &Array2<f64>, n: usize, h: usize, w: usize) -> Array2<f64> {
    let ch = act.nrows();
    let plane = h * w;
    let mut cols = Array2::<f64>::zeros((ch * 9, n * plane));
    for c in 0..ch {
        let row = act.row(c);
        for ky in 0..3usize {
            for kx in 0..3usize {
                let out_row = c * 9 + ky * 3 + kx;
                let mut dst = cols.row_mut(out_row);
                for img in 0..n {
                    let base = img * plane;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dst[base + y * w + x] = row[base + sy * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of im2col: scatters column gradients back onto the input layout.
fn col2im(dcols: &Array2<f64>, ch: usize, n: usize, h: usize, w: usize) -> Array2<f64> {
    let plane = h * w;
    let mut dact = Array2::<f64>::zeros((ch, n * plane));
    for c in 0..ch {
        let mut drow = dact.row_mut(c);
        for ky in 0..3usize {
            for kx in 0..3usize {
                let src = dcols.row(c * 9 + ky * 3 + kx);
                for img in 0..n {
                    let base = img * plane;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            drow[base + sy * w + sx as usize] += src[base + y * w + x];
                        }
                    }
                }
            }
        }
    }
    dact
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// 2x2 max-pool with floor semantics; returns pooled output and argmax map.
fn maxpool(
    act: &Array2<f64>,
    n: usize,
    h: usize,
    w: usize,
) -> (Array2<f64>, Vec<usize>, usize, usize) {
    let (hp, wp) = (h / 2, w / 2);
    let ch = act.nrows();
    let out_plane = hp * wp;
    let mut out = Array2::<f64>::zeros((ch, n * out_plane));
    let mut argmax = vec![0usize; ch * n * out_plane];
    for c in 0..ch {
        let src = act.row(c);
        let mut dst = out.row_mut(c);
        for img in 0..n {
            let in_base = img * h * w;
            let out_base = img * out_plane;
            for py in 0..hp {
                for px in 0..wp {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = in_base + (2 * py + dy) * w + 2 * px + dx;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = out_base + py * wp + px;
                    dst[o] = best;
                    argmax[c * (n * out_plane) + o] = best_idx;
                }
            }
        }
    }
    (out, argmax, hp, wp)
}

fn linear_forward(
    params: &QNetworkParams,
    spec: &LinearSpec,
    noise: &NoiseDraw,
    x: &Array2<f64>,
) -> Array2<f64> {
    let w_eff = effective_weight(params, spec, noise);
    let b_eff = effective_bias(params, spec, noise);
    let mut y = w_eff.dot(x);
    for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(b_eff) {
        row.mapv_inplace(|v| v + b);
    }
    y
}

fn batch_input(states: &[&StateImage], params: &QNetworkParams) -> Array2<f64> {
    let cfg = &params.config;
    let n = states.len();
    let plane = cfg.in_height * cfg.in_width;
    let mut act = Array2::<f64>::zeros((cfg.in_channels, n * plane));
    for (img, state) in states.iter().enumerate() {
        assert_eq!(state.height, cfg.in_height, "state height mismatch");
        assert_eq!(state.width, cfg.in_width, "state width mismatch");
        for c in 0..cfg.in_channels {
            let mut row = act.row_mut(c);
            row.as_slice_mut().unwrap()[img * plane..(img + 1) * plane]
                .copy_from_slice(&state.channels[c]);
        }
    }
    act
}

fn forward_internal(
    params: &QNetworkParams,
    states: &[&StateImage],
    noise: &NoiseDraw,
    want_cache: bool,
) -> (Array2<f64>, Option<ForwardCache>) {
    assert_eq!(noise.data.len(), params.layout.noise_len, "noise draw size");
    let layout = &params.layout;
    let n = states.len();
    let mut act = batch_input(states, params);
    let (mut h, mut w) = (params.config.in_height, params.config.in_width);

    let mut conv_cols = Vec::new();
    let mut conv_pre = Vec::new();
    let mut pool_argmax = Vec::new();

    for conv in &layout.convs {
        let cols = im2col(&act, n, h, w);
        let wmat = Array2::from_shape_vec(
            (conv.w.rows, conv.w.cols),
            params.data[conv.w.range()].to_vec(),
        )
        .unwrap();
        let mut pre = wmat.dot(&cols);
        let bias = &params.data[conv.b.range()];
        for (mut row, &b) in pre.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let mut post = pre.clone();
        relu_inplace(&mut post);
        let (pooled, argmax, hp, wp) = maxpool(&post, n, h, w);
        if want_cache {
            conv_cols.push(cols);
            conv_pre.push(pre);
            pool_argmax.push(argmax);
        }
        act = pooled;
        h = hp;
        w = wp;
    }

    // Flatten (channel-major per sample) into (flat_dim, N).
    let ch = act.nrows();
    let plane = h * w;
    let mut flat = Array2::<f64>::zeros((layout.flat_dim, n));
    for c in 0..ch {
        let row = act.row(c);
        for img in 0..n {
            for p in 0..plane {
                flat[[c * plane + p, img]] = row[img * plane + p];
            }
        }
    }

    let mut lin_inputs = Vec::new();
    let mut lin_pre = Vec::new();
    let record =
        |x: &Array2<f64>, pre: &Array2<f64>, inputs: &mut Vec<Array2<f64>>, pres: &mut Vec<Array2<f64>>| {
            if want_cache {
                inputs.push(x.clone());
                pres.push(pre.clone());
            }
        };

    let mut hid = flat;
    for spec in &layout.fcs {
        let pre = linear_forward(params, spec, noise, &hid);
        record(&hid, &pre, &mut lin_inputs, &mut lin_pre);
        let mut post = pre;
        relu_inplace(&mut post);
        hid = post;
    }

    let v_pre = linear_forward(params, &layout.value_hidden, noise, &hid);
    record(&hid, &v_pre, &mut lin_inputs, &mut lin_pre);
    let mut v_hid = v_pre;
    relu_inplace(&mut v_hid);
    let v_out = linear_forward(params, &layout.value_out, noise, &v_hid);
    record(&v_hid, &v_out, &mut lin_inputs, &mut lin_pre);

    let a_pre = linear_forward(params, &layout.adv_hidden, noise, &hid);
    record(&hid, &a_pre, &mut lin_inputs, &mut lin_pre);
    let mut a_hid = a_pre;
    relu_inplace(&mut a_hid);
    let a_out = linear_forward(params, &layout.adv_out, noise, &a_hid);
    record(&a_hid, &a_out, &mut lin_inputs, &mut lin_pre);

    // Dueling combine per batch column.
    let mut q = Array2::<f64>::zeros((NUM_ACTIONS, n));
    for i in 0..n {
        let mean = (0..NUM_ACTIONS).map(|a| a_out[[a, i]]).sum::<f64>() / NUM_ACTIONS as f64;
        for a in 0..NUM_ACTIONS {
            q[[a, i]] = v_out[[0, i]] + a_out[[a, i]] - mean;
        }
    }

    let cache = want_cache.then(|| ForwardCache {
        conv_cols,
        conv_pre,
        pool_argmax,
        lin_inputs,
        lin_pre,
        batch: n,
    });
    (q, cache)
}

/// Q-values for a batch of states, one column per state.
pub fn forward_batch(
    params: &QNetworkParams,
    states: &[&StateImage],
    noise: &NoiseDraw,
) -> Array2<f64> {
    forward_internal(params, states, noise, false).0
}

/// Q-values for a single state.
pub fn forward(params: &QNetworkParams, state: &StateImage, noise: &NoiseDraw) -> [f64; NUM_ACTIONS] {
    let q = forward_batch(params, &[state], noise);
    let mut out = [0.0; NUM_ACTIONS];
    for a in 0..NUM_ACTIONS {
        out[a] = q[[a, 0]];
    }
    out
}

fn linear_backward(
    params: &QNetworkParams,
    spec: &LinearSpec,
    noise: &NoiseDraw,
    x: &Array2<f64>,
    delta: &Array2<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    let dw = delta.dot(&x.t());
    let db = delta.sum_axis(Axis(1));

    let gw = &mut grads[spec.w.range()];
    for (g, d) in gw.iter_mut().zip(dw.iter()) {
        *g += d;
    }
    if let Some(wn) = spec.wn {
        let eps = &noise.data[spec.eps_w_offset..spec.eps_w_offset + wn.len()];
        let gn = &mut grads[wn.range()];
        for ((g, d), e) in gn.iter_mut().zip(dw.iter()).zip(eps.iter()) {
            *g += d * e;
        }
    }
    let gb = &mut grads[spec.b.range()];
    for (g, d) in gb.iter_mut().zip(db.iter()) {
        *g += d;
    }
    if let Some(bn) = spec.bn {
        let eps = &noise.data[spec.eps_b_offset..spec.eps_b_offset + bn.len()];
        let gn = &mut grads[bn.range()];
        for ((g, d), e) in gn.iter_mut().zip(db.iter()).zip(eps.iter()) {
            *g += d * e;
        }
    }

    effective_weight(params, spec, noise).t().dot(delta)
}

fn relu_mask(delta: &mut Array2<f64>, pre: &Array2<f64>) {
    for (d, &p) in delta.iter_mut().zip(pre.iter()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
}

fn conv_backward(
    params: &QNetworkParams,
    conv: &ConvSpec,
    cols: &Array2<f64>,
    delta: &Array2<f64>,
    n: usize,
    grads: &mut [f64],
) -> Array2<f64> {
    let dw = delta.dot(&cols.t());
    let db = delta.sum_axis(Axis(1));
    let gw = &mut grads[conv.w.range()];
    for (g, d) in gw.iter_mut().zip(dw.iter()) {
        *g += d;
    }
    let gb = &mut grads[conv.b.range()];
    for (g, d) in gb.iter_mut().zip(db.iter()) {
        *g += d;
    }
    let wmat = Array2::from_shape_vec(
        (conv.w.rows, conv.w.cols),
        params.data[conv.w.range()].to_vec(),
    )
    .unwrap();
    let dcols = wmat.t().dot(delta);
    col2im(&dcols, conv.in_ch, n, conv.in_h, conv.in_w)
}

///// Importance-weighted TD loss and analytic gradients:
/// loss = mean_i w_i (Q(s_i, a_i) - y_i)^2. Noise draws stay fixed through
/// the backward pass; noise-scale parameters receive gradients too.
/// Also returns the raw TD errors Q(s_i, a_i) - y_i for priority updates.
pub fn loss_and_gradients(
    params: &QNetworkParams,
    states: &[&StateImage],
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
    noise: &NoiseDraw,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = states.len();
    assert!(n > 0 && actions.len() == n && targets.len() == n && weights.len() == n);
    let layout = &params.layout;
    let (q, cache) = forward_internal(params, states, noise, true);
    let cache = cache.unwrap();

    let mut loss = 0.0;
    let mut dq = Array2::<f64>::zeros((NUM_ACTIONS, n));
    let mut td = Vec::with_capacity(n);
    for i in 0..n {
        let err = q[[actions[i], i]] - targets[i];
        td.push(err);
        loss += weights[i] * err * err;
        dq[[actions[i], i]] = 2.0 * weights[i] * err / n as f64;
    }
    loss /= n as f64;

    let mut grads = vec![0.0; layout.param_len];

    // Dueling combine backward: dV = sum_a dQ_a; dA = dQ - mean_a(dQ).
    let mut dv = Array2::<f64>::zeros((1, n));
    let mut da = Array2::<f64>::zeros((NUM_ACTIONS, n));
    for i in 0..n {
        let col_sum: f64 = (0..NUM_ACTIONS).map(|a| dq[[a, i]]).sum();
        dv[[0, i]] = col_sum;
        for a in 0..NUM_ACTIONS {
            da[[a, i]] = dq[[a, i]] - col_sum / NUM_ACTIONS as f64;
        }
    }
    // Linear cache order: fcs.., value_hidden, value_out, adv_hidden, adv_out.
    let n_fc = layout.fcs.len();
    let (vh_i, vo_i, ah_i, ao_i) = (n_fc, n_fc + 1, n_fc + 2, n_fc + 3);

    // Advantage head.
    let mut d_a_hid = linear_backward(
        params,
        &layout.adv_out,
        noise,
        &cache.lin_inputs[ao_i],
        &da,
        &mut grads,
    );
    relu_mask(&mut d_a_hid, &cache.lin_pre[ah_i]);
    let d_hid_a = linear_backward(
        params,
        &layout.adv_hidden,
        noise,
        &cache.lin_inputs[ah_i],
        &d_a_hid,
        &mut grads,
    );

    // Value head.
    let mut d_v_hid = linear_backward(
        params,
        &layout.value_out,
        noise,
        &cache.lin_inputs[vo_i],
        &dv,
        &mut grads,
    );
    relu_mask(&mut d_v_hid, &cache.lin_pre[vh_i]);
    let d_hid_v = linear_backward(
        params,
        &layout.value_hidden,
        noise,
        &cache.lin_inputs[vh_i],
        &d_v_hid,
        &mut grads,
    );

    let mut delta = d_hid_a + d_hid_v;

    // Fully connected stack, reversed.
    for (idx, spec) in layout.fcs.iter().enumerate().rev() {
        relu_mask(&mut delta, &cache.lin_pre[idx]);
        delta = linear_backward(params, spec, noise, &cache.lin_inputs[idx], &delta, &mut grads);
    }

    // Unflatten into the last conv stage's pooled layout.
    let last = layout.convs.len();
    let (mut h, mut w) = (params.config.in_height, params.config.in_width);
    let mut dims = Vec::new(); // (h, w) input dims per stage
    for _ in 0..last {
        dims.push((h, w));
        h /= 2;
        w /= 2;
    }
    let (out_ch, out_plane) = if last > 0 {
        (layout.convs[last - 1].out_ch, h * w)
    } else {
        (params.config.in_channels, h * w)
    };
    let nb = cache.batch;
    let mut dact = Array2::<f64>::zeros((out_ch, nb * out_plane));
    for c in 0..out_ch {
        for img in 0..nb {
            for p in 0..out_plane {
                dact[[c, img * out_plane + p]] = delta[[c * out_plane + p, img]];
            }
        }
    }

    // Conv stages, reversed: un-pool, ReLU mask, conv backward.
    for (idx, conv) in layout.convs.iter().enumerate().rev() {
        let (ih, iw) = dims[idx];
        let pre = &cache.conv_pre[idx];
        let argmax = &cache.pool_argmax[idx];
        let pool_plane = (ih / 2) * (iw / 2);
        let mut dpre = Array2::<f64>::zeros((conv.out_ch, nb * ih * iw));
        for c in 0..conv.out_ch {
            for o in 0..nb * pool_plane {
                let src = argmax[c * (nb * pool_plane) + o];
                dpre[[c, src]] += dact[[c, o]];
            }
        }
        relu_mask(&mut dpre, pre);
        dact = conv_backward(params, conv, &cache.conv_cols[idx], &dpre, nb, &mut grads);
    }

    (loss, grads, td)
}
