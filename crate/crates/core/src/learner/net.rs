//! Forward and backward passes.
//!
//! Per-sample work (convolutions, pooling, normalisation) is spread over
//! samples; every cross-sample sum is formed from per-sample partials added
//! in sample order, so results do not depend on the thread count.

use super::model::{pooled, ConvSlot, ModelParams, ModelSpec};
use super::{LearnerError, Tensor};
use crate::exec::{for_each_chunk_mut, map_indexed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone)]
struct BlockCache {
    /// Output of the first convolution.
    mid: Vec<f64>,
    xhat: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Intermediate values needed by [`backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    mode: Mode,
    batch: usize,
    fingerprint: u64,
    /// `acts[0]` is the input, `acts[i+1]` the output of block `i`.
    acts: Vec<Vec<f64>>,
    blocks: Vec<BlockCache>,
    pool_idx: Vec<usize>,
    features: Vec<f64>,
    probs: Vec<f64>,
}

impl Cache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Batch mean and biased variance of each batch-norm layer.
    pub fn batch_stats(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.blocks.iter().map(|b| (b.mean.as_slice(), b.var.as_slice()))
    }
}

pub struct ForwardOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    pub cache: Cache,
}

fn fingerprint(params: &ModelParams, batch: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in params.theta.iter().chain(&params.running).chain(batch) {
        h = (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 29;
    }
    h
}

/// Row ranges `(dst_start, src_start, len)` of a 3×3 tap with offset `d`.
#[inline]
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi)
}

fn conv_sample(input: &[f64], h: usize, w: usize, slot: &ConvSlot, theta: &[f64], out: &mut [f64]) {
    let hw = h * w;
    let weights = &theta[slot.w..slot.w + 9 * slot.cin * slot.cout];
    for co in 0..slot.cout {
        let out_c = &mut out[co * hw..(co + 1) * hw];
        out_c.fill(theta[slot.b + co]);
        for ci in 0..slot.cin {
            let in_c = &input[ci * hw..(ci + 1) * hw];
            let wk = &weights[(co * slot.cin + ci) * 9..][..9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(w, dx);
                    let wv = wk[ky * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_c[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let dst = &mut out_c[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

fn conv_batch(input: &[f64], n: usize, h: usize, w: usize, slot: &ConvSlot, theta: &[f64]) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; n * slot.cout * hw];
    for_each_chunk_mut(&mut out, slot.cout * hw, |s, o| {
        conv_sample(&input[s * slot.cin * hw..(s + 1) * slot.cin * hw], h, w, slot, theta, o)
    });
    out
}

/// Gradient of a convolution's input for one sample.
fn conv_input_grad(dout: &[f64], h: usize, w: usize, slot: &ConvSlot, theta: &[f64], din: &mut [f64]) {
    let hw = h * w;
    let weights = &theta[slot.w..slot.w + 9 * slot.cin * slot.cout];
    din.fill(0.0);
    for ci in 0..slot.cin {
        let din_c = &mut din[ci * hw..(ci + 1) * hw];
        for co in 0..slot.cout {
            let dout_c = &dout[co * hw..(co + 1) * hw];
            let wk = &weights[(co * slot.cin + ci) * 9..][..9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(w, dx);
                    let wv = wk[ky * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut din_c[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let src = &dout_c[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Weight and bias gradients of a convolution, summed over the batch.
fn conv_param_grad(input: &[f64], dout: &[f64], n: usize, h: usize, w: usize, slot: &ConvSlot, grad: &mut [f64]) {
    let hw = h * w;
    let (cin, cout) = (slot.cin, slot.cout);
    let per_out = map_indexed(cout, |co| {
        let mut gw = vec![0.0; cin * 9];
        let mut gb = 0.0;
        for s in 0..n {
            let dout_c = &dout[(s * cout + co) * hw..][..hw];
            gb += dout_c.iter().sum::<f64>();
            for ci in 0..cin {
                let in_c = &input[(s * cin + ci) * hw..][..hw];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = tap_range(w, dx);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = &in_c[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                            let d = &dout_c[y * w + x0..y * w + x1];
                            acc += d.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gw[ci * 9 + ky * 3 + kx] += acc;
                    }
                }
            }
        }
        (gw, gb)
    });
    for (co, (gw, gb)) in per_out.into_iter().enumerate() {
        grad[slot.w + co * cin * 9..slot.w + (co + 1) * cin * 9].copy_from_slice(&gw);
        grad[slot.b + co] = gb;
    }
}

/// Per-channel sums over samples and positions of `f(sample, channel, slice)`.
fn channel_sums<F>(n: usize, ch: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let parts = map_indexed(n, |s| (0..ch).map(|c| f(s, c)).collect::<Vec<f64>>());
    let mut total = vec![0.0; ch];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn check_batch(spec: &ModelSpec, batch: &Tensor) -> Result<usize, LearnerError> {
    let i = spec.input;
    let sh = batch.shape();
    if sh.len() != 4 || sh[0] == 0 || sh[1..] != [i.channels, i.height, i.width] {
        return Err(LearnerError::Shape(format!(
            "batch shape {sh:?}, model expects [N, {}, {}, {}]",
            i.channels, i.height, i.width
        )));
    }
    Ok(sh[0])
}

pub fn forward(spec: &ModelSpec, params: &ModelParams, batch: &Tensor, mode: Mode) -> Result<ForwardOutput, LearnerError> {
    spec.validate()?;
    let layout = spec.layout();
    params.check(&layout)?;
    let n = check_batch(spec, batch)?;
    let (h, w) = (spec.input.height, spec.input.width);
    let hw = h * w;
    let theta = &params.theta;

    let mut acts = vec![batch.data().to_vec()];
    let mut blocks = Vec::with_capacity(3);
    for blk in 0..3 {
        let (c1, c2, bn) = (&layout.convs[2 * blk], &layout.convs[2 * blk + 1], layout.bns[blk]);
        let mid = conv_batch(&acts[blk], n, h, w, c1, theta);
        let mut xhat = conv_batch(&mid, n, h, w, c2, theta);
        let ch = bn.ch;
        let (mean, var) = match mode {
            Mode::Train => {
                let count = (n * hw) as f64;
                let sums = channel_sums(n, ch, |s, c| xhat[(s * ch + c) * hw..][..hw].iter().sum());
                let mean: Vec<f64> = sums.iter().map(|x| x / count).collect();
                let sq = channel_sums(n, ch, |s, c| {
                    xhat[(s * ch + c) * hw..][..hw].iter().map(|x| (x - mean[c]).powi(2)).sum()
                });
                (mean, sq.iter().map(|x| x / count).collect::<Vec<f64>>())
            }
            Mode::Eval => (
                params.running[bn.mean..bn.mean + ch].to_vec(),
                params.running[bn.var..bn.var + ch].to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + spec.bn_eps).sqrt()).collect();
        let mut out = vec![0.0; n * ch * hw];
        {
            let (gamma, beta) = (&theta[bn.gamma..bn.gamma + ch], &theta[bn.beta..bn.beta + ch]);
            for_each_chunk_mut(&mut xhat, ch * hw, |_, xs| {
                for c in 0..ch {
                    for x in &mut xs[c * hw..(c + 1) * hw] {
                        *x = (*x - mean[c]) * inv_std[c];
                    }
                }
            });
            let xhat = &xhat;
            for_each_chunk_mut(&mut out, ch * hw, |s, os| {
                for c in 0..ch {
                    let src = &xhat[(s * ch + c) * hw..][..hw];
                    for (o, x) in os[c * hw..(c + 1) * hw].iter_mut().zip(src) {
                        *o = (gamma[c] * x + beta[c]).max(0.0);
                    }
                }
            });
        }
        blocks.push(BlockCache { mid, xhat, mean, var, inv_std });
        acts.push(out);
    }

    let ch = layout.convs[5].cout;
    let (ph, pw) = (pooled(h), pooled(w));
    let feat = layout.features;
    let last = &acts[3];
    let pooled_parts = map_indexed(n, |s| {
        let mut vals = Vec::with_capacity(feat);
        let mut idx = Vec::with_capacity(feat);
        for c in 0..ch {
            for py in 0..ph {
                for px in 0..pw {
                    let (ys, ye) = (2 * py, (2 * py + 2).min(h));
                    let (xs, xe) = (2 * px, (2 * px + 2).min(w));
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for y in ys..ye {
                        for x in xs..xe {
                            let i = (s * ch + c) * hw + y * w + x;
                            if last[i] > best_v {
                                best_v = last[i];
                                best = i;
                            }
                        }
                    }
                    vals.push(best_v);
                    idx.push(best);
                }
            }
        }
        (vals, idx)
    });
    let mut features = Vec::with_capacity(n * feat);
    let mut pool_idx = Vec::with_capacity(n * feat);
    for (v, i) in pooled_parts {
        features.extend(v);
        pool_idx.extend(i);
    }

    let classes = spec.classes;
    let lin_w = &theta[layout.lin_w..layout.lin_b];
    let lin_b = &theta[layout.lin_b..layout.lin_b + classes];
    let mut logits = vec![0.0; n * classes];
    let mut probs = vec![0.0; n * classes];
    for s in 0..n {
        let f = &features[s * feat..(s + 1) * feat];
        let row = &mut logits[s * classes..(s + 1) * classes];
        for (c, z) in row.iter_mut().enumerate() {
            *z = lin_b[c] + lin_w[c * feat..(c + 1) * feat].iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p = &mut probs[s * classes..(s + 1) * classes];
        for (pi, z) in p.iter_mut().zip(row.iter()) {
            *pi = (z - max).exp();
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(LearnerError::NonFinite("logits"));
    }

    let cache = Cache {
        mode,
        batch: n,
        fingerprint: fingerprint(params, batch.data()),
        acts,
        blocks,
        pool_idx,
        features,
        probs: probs.clone(),
    };
    Ok(ForwardOutput {
        logits: Tensor::new(vec![n, classes], logits)?,
        probs: Tensor::new(vec![n, classes], probs)?,
        cache,
    })
}

fn check_labels(labels: &[usize], classes: usize) -> Result<(), LearnerError> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(LearnerError::Label { label, classes }),
        None => Ok(()),
    }
}

/// Mean cross-entropy of a batch of logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64, LearnerError> {
    let sh = logits.shape();
    if sh.len() != 2 || sh[0] != labels.len() || sh[0] == 0 {
        return Err(LearnerError::Shape(format!("logits {sh:?} vs {} labels", labels.len())));
    }
    check_labels(labels, sh[1])?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of the batch-mean cross-entropy with respect to `θ`.
pub fn backward(spec: &ModelSpec, params: &ModelParams, cache: &Cache, labels: &[usize]) -> Result<Vec<f64>, LearnerError> {
    let layout = spec.layout();
    params.check(&layout)?;
    let n = cache.batch;
    if labels.len() != n {
        return Err(LearnerError::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if fingerprint(params, &cache.acts[0]) != cache.fingerprint {
        return Err(LearnerError::StaleCache);
    }
    let classes = spec.classes;
    check_labels(labels, classes)?;
    let (h, w) = (spec.input.height, spec.input.width);
    let hw = h * w;
    let theta = &params.theta;
    let mut grad = vec![0.0; layout.total];

    let inv_n = 1.0 / n as f64;
    let mut dlogits = cache.probs.clone();
    for (s, &y) in labels.iter().enumerate() {
        dlogits[s * classes + y] -= 1.0;
    }
    dlogits.iter_mut().for_each(|x| *x *= inv_n);

    let feat = layout.features;
    for s in 0..n {
        let f = &cache.features[s * feat..(s + 1) * feat];
        for c in 0..classes {
            let d = dlogits[s * classes + c];
            grad[layout.lin_b + c] += d;
            let gw = &mut grad[layout.lin_w + c * feat..layout.lin_w + (c + 1) * feat];
            for (g, x) in gw.iter_mut().zip(f) {
                *g += d * x;
            }
        }
    }
    let lin_w = &theta[layout.lin_w..layout.lin_b];
    let ch_last = layout.convs[5].cout;
    let mut dact = vec![0.0; n * ch_last * hw];
    for s in 0..n {
        for j in 0..feat {
            let d: f64 = (0..classes).map(|c| lin_w[c * feat + j] * dlogits[s * classes + c]).sum();
            dact[cache.pool_idx[s * feat + j]] += d;
        }
    }

    for blk in (0..3).rev() {
        let (c1, c2, bn) = (&layout.convs[2 * blk], &layout.convs[2 * blk + 1], layout.bns[blk]);
        let bc = &cache.blocks[blk];
        let ch = bn.ch;
        let out = &cache.acts[blk + 1];
        for (d, o) in dact.iter_mut().zip(out) {
            if *o <= 0.0 {
                *d = 0.0;
            }
        }
        let dz = dact;
        let gamma = &theta[bn.gamma..bn.gamma + ch];
        let dgamma = channel_sums(n, ch, |s, c| {
            let o = (s * ch + c) * hw;
            dz[o..o + hw].iter().zip(&bc.xhat[o..o + hw]).map(|(a, b)| a * b).sum()
        });
        let dbeta = channel_sums(n, ch, |s, c| dz[(s * ch + c) * hw..][..hw].iter().sum());
        grad[bn.gamma..bn.gamma + ch].copy_from_slice(&dgamma);
        grad[bn.beta..bn.beta + ch].copy_from_slice(&dbeta);

        let mut da2 = vec![0.0; n * ch * hw];
        match cache.mode {
            Mode::Train => {
                let count = (n * hw) as f64;
                // dxhat = γ·dz, so its channel sums follow from dβ and dγ.
                let m1: Vec<f64> = (0..ch).map(|c| gamma[c] * dbeta[c] / count).collect();
                let m2: Vec<f64> = (0..ch).map(|c| gamma[c] * dgamma[c] / count).collect();
                for_each_chunk_mut(&mut da2, ch * hw, |s, d| {
                    for c in 0..ch {
                        let o = (s * ch + c) * hw;
                        for ((di, z), x) in d[c * hw..(c + 1) * hw].iter_mut().zip(&dz[o..o + hw]).zip(&bc.xhat[o..o + hw]) {
                            *di = bc.inv_std[c] * (gamma[c] * z - m1[c] - x * m2[c]);
                        }
                    }
                });
            }
            Mode::Eval => {
                for_each_chunk_mut(&mut da2, ch * hw, |s, d| {
                    for c in 0..ch {
                        let o = (s * ch + c) * hw;
                        for (di, z) in d[c * hw..(c + 1) * hw].iter_mut().zip(&dz[o..o + hw]) {
                            *di = bc.inv_std[c] * gamma[c] * z;
                        }
                    }
                });
            }
        }

        conv_param_grad(&bc.mid, &da2, n, h, w, c2, &mut grad);
        let mut da1 = vec![0.0; n * c2.cin * hw];
        for_each_chunk_mut(&mut da1, c2.cin * hw, |s, d| {
            conv_input_grad(&da2[s * c2.cout * hw..(s + 1) * c2.cout * hw], h, w, c2, theta, d)
        });
        conv_param_grad(&cache.acts[blk], &da1, n, h, w, c1, &mut grad);
        if blk > 0 {
            let mut dx = vec![0.0; n * c1.cin * hw];
            for_each_chunk_mut(&mut dx, c1.cin * hw, |s, d| {
                conv_input_grad(&da1[s * c1.cout * hw..(s + 1) * c1.cout * hw], h, w, c1, theta, d)
            });
            dact = dx;
        } else {
            dact = Vec::new();
        }
    }
    let _ = dact;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(LearnerError::NonFinite("gradient"));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::super::model::InputShape;
    use super::*;
    use rand::seq::index::sample;
    use rand::Rng;

    fn tiny(alpha: f64, c: usize, h: usize, w: usize, classes: usize) -> ModelSpec {
        ModelSpec::new(InputShape { channels: c, height: h, width: w }, classes, alpha).unwrap()
    }

    fn random_batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::substream(seed, "test-batch", 0);
        Tensor::new(vec![n, c, h, w], (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn loss_at(spec: &ModelSpec, p: &ModelParams, x: &Tensor, y: &[usize]) -> f64 {
        cross_entropy(&forward(spec, p, x, Mode::Train).unwrap().logits, y).unwrap()
    }

    /// Direct transcription of the network with nested loops and explicit
    /// zero padding, sharing no kernels with the implementation above.
    fn naive_forward_eval(spec: &ModelSpec, p: &ModelParams, x: &Tensor) -> Vec<Vec<f64>> {
        let l = spec.layout();
        let (h, w) = (spec.input.height, spec.input.width);
        let n = x.shape()[0];
        let t = &p.theta;
        let mut out = Vec::new();
        for s in 0..n {
            let mut cur: Vec<Vec<Vec<f64>>> = (0..spec.input.channels)
                .map(|c| (0..h).map(|y| (0..w).map(|xx| x.data()[((s * spec.input.channels + c) * h + y) * w + xx]).collect()).collect())
                .collect();
            for blk in 0..3 {
                for conv in &l.convs[2 * blk..2 * blk + 2] {
                    let mut next = vec![vec![vec![0.0; w]; h]; conv.cout];
                    for co in 0..conv.cout {
                        for y in 0..h {
                            for xx in 0..w {
                                let mut acc = t[conv.b + co];
                                for ci in 0..conv.cin {
                                    for ky in 0..3 {
                                        for kx in 0..3 {
                                            let (yy, xs) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                            let v = if yy < 0 || xs < 0 || yy >= h as isize || xs >= w as isize {
                                                0.0
                                            } else {
                                                cur[ci][yy as usize][xs as usize]
                                            };
                                            acc += t[conv.w + ((co * conv.cin + ci) * 3 + ky) * 3 + kx] * v;
                                        }
                                    }
                                }
                                next[co][y][xx] = acc;
                            }
                        }
                    }
                    cur = next;
                }
                let bn = l.bns[blk];
                for c in 0..bn.ch {
                    let (m, v) = (p.running[bn.mean + c], p.running[bn.var + c]);
                    for row in &mut cur[c] {
                        for e in row.iter_mut() {
                            let z = t[bn.gamma + c] * (*e - m) / (v + spec.bn_eps).sqrt() + t[bn.beta + c];
                            *e = if z > 0.0 { z } else { 0.0 };
                        }
                    }
                }
            }
            let (ph, pw) = spec.pooled_dims();
            let mut f = Vec::new();
            for plane in &cur {
                for py in 0..ph {
                    for px in 0..pw {
                        let mut m = f64::NEG_INFINITY;
                        for y in 2 * py..(2 * py + 2).min(h) {
                            for xx in 2 * px..(2 * px + 2).min(w) {
                                m = m.max(plane[y][xx]);
                            }
                        }
                        f.push(m);
                    }
                }
            }
            let logits: Vec<f64> = (0..spec.classes)
                .map(|c| t[l.lin_b + c] + (0..f.len()).map(|j| t[l.lin_w + c * f.len() + j] * f[j]).sum::<f64>())
                .collect();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            out.push(logits.iter().map(|v| v.exp() / z).collect());
        }
        out
    }

    #[test]
    fn matches_naive_implementation() {
        for (seed, (c, h, wd)) in [(2, 5, 7), (3, 1, 6), (1, 4, 1)].into_iter().enumerate() {
            let spec = tiny(0.05, c, h, wd, 4);
            let mut p = ModelParams::init(&spec, seed as u64);
            let mut rng = crate::rng::substream(seed as u64, "test-running", 0);
            for bn in spec.layout().bns {
                for i in 0..bn.ch {
                    p.running[bn.mean + i] = rng.random_range(-0.3..0.3);
                    p.running[bn.var + i] = rng.random_range(0.5..2.0);
                    p.theta[bn.beta + i] = rng.random_range(-0.2..0.5);
                }
            }
            let x = random_batch(3, c, h, wd, seed as u64);
            let fast = forward(&spec, &p, &x, Mode::Eval).unwrap();
            let slow = naive_forward_eval(&spec, &p, &x);
            for (s, row) in slow.iter().enumerate() {
                for (a, b) in fast.probs.row(s).iter().zip(row) {
                    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn probabilities_are_normalised() {
        let spec = tiny(0.05, 3, 4, 6, 5);
        let p = ModelParams::init(&spec, 1);
        let out = forward(&spec, &p, &random_batch(4, 3, 4, 6, 9), Mode::Train).unwrap();
        for s in 0..4 {
            let row = out.probs.row(s);
            assert!(row.iter().all(|&x| x > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_linear_layer_gives_uniform() {
        let spec = tiny(0.05, 2, 4, 4, 4);
        let mut p = ModelParams::init(&spec, 0);
        let l = spec.layout();
        p.theta[l.lin_w..].fill(0.0);
        let out = forward(&spec, &p, &random_batch(3, 2, 4, 4, 1), Mode::Eval).unwrap();
        assert!(out.probs.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn eval_rows_are_batch_independent() {
        let spec = tiny(0.05, 2, 4, 5, 3);
        let p = ModelParams::init(&spec, 5);
        let one = random_batch(1, 2, 4, 5, 3);
        let eight = Tensor::new(vec![8, 2, 4, 5], one.data().repeat(8)).unwrap();
        let a = forward(&spec, &p, &one, Mode::Eval).unwrap();
        let b = forward(&spec, &p, &eight, Mode::Eval).unwrap();
        for s in 0..8 {
            assert_eq!(b.probs.row(s), a.probs.row(0));
        }
        let mixed = random_batch(5, 2, 4, 5, 8);
        let mut data = mixed.data().to_vec();
        data[80..120].copy_from_slice(one.data());
        let c = forward(&spec, &p, &Tensor::new(vec![5, 2, 4, 5], data).unwrap(), Mode::Eval).unwrap();
        assert_eq!(c.probs.row(2), a.probs.row(0));
    }

    #[test]
    fn final_bias_gradient_closed_form() {
        let spec = tiny(0.05, 2, 3, 3, 3);
        let mut p = ModelParams::init(&spec, 0);
        p.theta.fill(0.0);
        let x = Tensor::zeros(vec![4, 2, 3, 3]);
        let labels = [0, 2, 2, 1];
        let out = forward(&spec, &p, &x, Mode::Train).unwrap();
        let g = backward(&spec, &p, &out.cache, &labels).unwrap();
        let l = spec.layout();
        for c in 0..3 {
            let expect: f64 = labels.iter().map(|&y| 1.0 / 3.0 - if y == c { 1.0 } else { 0.0 }).sum::<f64>() / 4.0;
            assert!((g[l.lin_b + c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_differences() {
        let spec = tiny(0.06, 2, 4, 5, 3);
        let mut p = ModelParams::init(&spec, 11);
        let l = spec.layout();
        let mut rng = crate::rng::substream(11, "fd", 0);
        for bn in &l.bns {
            for i in 0..bn.ch {
                p.theta[bn.beta + i] = rng.random_range(-0.2..0.4);
                p.theta[bn.gamma + i] = rng.random_range(0.5..1.5);
            }
        }
        let x = random_batch(3, 2, 4, 5, 4);
        let y = [0, 2, 1];
        let out = forward(&spec, &p, &x, Mode::Train).unwrap();
        let g = backward(&spec, &p, &out.cache, &y).unwrap();
        let hstep = 1e-5;
        let coords = sample(&mut rng, l.total, 400.min(l.total));
        for i in coords {
            let mut plus = p.clone();
            plus.theta[i] += hstep;
            let mut minus = p.clone();
            minus.theta[i] -= hstep;
            let fd = (loss_at(&spec, &plus, &x, &y) - loss_at(&spec, &minus, &x, &y)) / (2.0 * hstep);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "coordinate {i}: analytic {} vs numeric {fd}", g[i]);
        }
    }

    #[test]
    fn eval_mode_gradient() {
        let spec = tiny(0.05, 2, 3, 4, 3);
        let p = ModelParams::init(&spec, 2);
        let x = random_batch(2, 2, 3, 4, 6);
        let y = [1, 2];
        let out = forward(&spec, &p, &x, Mode::Eval).unwrap();
        let g = backward(&spec, &p, &out.cache, &y).unwrap();
        let eval_loss = |q: &ModelParams| cross_entropy(&forward(&spec, q, &x, Mode::Eval).unwrap().logits, &y).unwrap();
        for i in (0..g.len()).step_by(7) {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.theta[i] += 1e-5;
            b.theta[i] -= 1e-5;
            let fd = (eval_loss(&a) - eval_loss(&b)) / 2e-5;
            assert!((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn rejects_mismatches() {
        let spec = tiny(0.05, 2, 3, 4, 3);
        let p = ModelParams::init(&spec, 2);
        assert!(forward(&spec, &p, &random_batch(2, 3, 3, 4, 0), Mode::Eval).is_err());
        let x = random_batch(2, 2, 3, 4, 0);
        let out = forward(&spec, &p, &x, Mode::Train).unwrap();
        assert!(matches!(backward(&spec, &p, &out.cache, &[0, 3]), Err(LearnerError::Label { .. })));
        assert!(backward(&spec, &p, &out.cache, &[0]).is_err());
        let mut q = p.clone();
        q.theta[0] += 1.0;
        assert!(matches!(backward(&spec, &q, &out.cache, &[0, 1]), Err(LearnerError::StaleCache)));
    }
}

#[cfg(test)]
mod props {
    use super::super::model::InputShape;
    use super::*;
    use proptest::prelude::*;

    fn spec(c: usize, h: usize, w: usize, classes: usize) -> ModelSpec {
        ModelSpec::new(InputShape { channels: c, height: h, width: w }, classes, 0.05).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn softmax_rows_are_distributions(
            dims in (1usize..3, 1usize..6, 1usize..6, 2usize..5, 1usize..5),
            scale in 0.1f64..50.0,
            seed in any::<u64>(),
            train in any::<bool>(),
        ) {
            let (c, h, w, classes, n) = dims;
            let spec = spec(c, h, w, classes);
            let p = ModelParams::init(&spec, seed);
            let mut rng = crate::rng::substream(seed, "prop-batch", 0);
            let data: Vec<f64> = (0..n * c * h * w).map(|_| scale * rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let x = Tensor::new(vec![n, c, h, w], data).unwrap();
            let mode = if train { Mode::Train } else { Mode::Eval };
            let out = forward(&spec, &p, &x, mode).unwrap();
            for r in 0..n {
                let row = out.probs.row(r);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&q| q > 0.0));
            }
        }

        #[test]
        fn eval_sample_alone_equals_in_batch(
            n in 2usize..7,
            pos in 0usize..7,
            seed in any::<u64>(),
        ) {
            let pos = pos % n;
            let spec = spec(2, 3, 4, 3);
            let p = ModelParams::init(&spec, seed);
            let mut rng = crate::rng::substream(seed, "prop-batch", 1);
            let data: Vec<f64> = (0..n * 24).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            let batch = Tensor::new(vec![n, 2, 3, 4], data.clone()).unwrap();
            let alone = Tensor::new(vec![1, 2, 3, 4], data[pos * 24..(pos + 1) * 24].to_vec()).unwrap();
            let a = forward(&spec, &p, &batch, Mode::Eval).unwrap();
            let b = forward(&spec, &p, &alone, Mode::Eval).unwrap();
            prop_assert_eq!(a.probs.row(pos), b.probs.row(0));
        }
    }
}
