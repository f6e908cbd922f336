//! Temporal grouped stem: one 3x3 convolution per acquisition date lifting
//! `channels` bands to `features` maps, a batch normalization whose statistics
//! are shared by every date group, then GELU.

use rand::Rng;

use crate::activation::{gelu, gelu_grad};
use crate::error::{ensure_finite, CoreError, Result};
use crate::linalg::{gemm, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemDims {
    pub time_steps: usize,
    pub channels: usize,
    pub features: usize,
    pub height: usize,
    pub width: usize,
}

impl StemDims {
    fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn taps(&self) -> usize {
        self.channels * 9
    }

    pub fn input_len(&self) -> usize {
        self.time_steps * self.channels * self.pixels()
    }

    pub fn output_len(&self) -> usize {
        self.time_steps * self.features * self.pixels()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemParams<S> {
    /// `time_steps x features x channels x 3 x 3`, one kernel bank per date.
    pub weight: Tensor<S>,
    /// `time_steps x features`.
    pub bias: Tensor<S>,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

/// Running normalization statistics used outside training.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<S> {
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
}

impl<S: Scalar> BnStats<S> {
    pub fn new(features: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[features]),
            var: Tensor::filled(&[features], S::one()),
        }
    }

    /// Exponential moving update with the batch statistics of one training step.
    pub fn update(&mut self, batch: &BatchStats<S>) {
        let m = S::from_f64(BN_MOMENTUM);
        let keep = S::one() - m;
        let count = S::from_usize(batch.count);
        let unbias = if batch.count > 1 {
            count / (count - S::one())
        } else {
            S::one()
        };
        for f in 0..self.mean.len() {
            self.mean.data[f] = keep * self.mean.data[f] + m * batch.mean[f];
            self.var.data[f] = keep * self.var.data[f] + m * batch.var[f] * unbias;
        }
    }
}

/// Per-feature mean and biased variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub count: usize,
}

/// Which statistics the normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of the current batch.
    Batch,
    /// Stored running statistics.
    Running,
}

impl<S: Scalar> StemParams<S> {
    pub fn zeros(dims: StemDims) -> Self {
        Self {
            weight: Tensor::zeros(&[dims.time_steps, dims.features, dims.channels, 3, 3]),
            bias: Tensor::zeros(&[dims.time_steps, dims.features]),
            gamma: Tensor::zeros(&[dims.features]),
            beta: Tensor::zeros(&[dims.features]),
        }
    }

    pub fn init<R: Rng>(dims: StemDims, rng: &mut R) -> Self {
        let bound = 1.0 / (dims.taps() as f64).sqrt();
        let mut p = Self::zeros(dims);
        for v in p.weight.data.iter_mut().chain(p.bias.data.iter_mut()) {
            *v = S::from_f64(rng.gen_range(-bound..=bound));
        }
        p.gamma.data.fill(S::one());
        p
    }

    pub fn dims(&self, height: usize, width: usize) -> StemDims {
        StemDims {
            time_steps: self.weight.shape[0],
            features: self.weight.shape[1],
            channels: self.weight.shape[2],
            height,
            width,
        }
    }
}

/// 3x3 patches of one date group: `(channels*9) x pixels`, zero padded.
fn im2col<S: Scalar>(group: &[S], dims: StemDims, cols: &mut [S]) {
    let (h, w) = (dims.height, dims.width);
    let hw = h * w;
    for c in 0..dims.channels {
        let plane = &group[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        row[y * w + x] = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            S::zero()
                        } else {
                            plane[sy as usize * w + sx as usize]
                        };
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
pub struct StemCache<S> {
    batch: usize,
    input: Vec<S>,
    conv: Vec<S>,
    mean: Vec<S>,
    inv_std: Vec<S>,
}

/// Raw grouped convolution, `batch x (T*F) x H x W`.
fn grouped_conv<S: Scalar>(params: &StemParams<S>, input: &[S], batch: usize, dims: StemDims) -> Vec<S> {
    let hw = dims.pixels();
    let taps = dims.taps();
    let (t_n, f_n, c_n) = (dims.time_steps, dims.features, dims.channels);
    let mut out = vec![S::zero(); batch * dims.output_len()];
    let mut cols = vec![S::zero(); taps * hw];
    for b in 0..batch {
        for t in 0..t_n {
            let group = &input[(b * t_n + t) * c_n * hw..(b * t_n + t + 1) * c_n * hw];
            im2col(group, dims, &mut cols);
            let dst = &mut out[(b * t_n + t) * f_n * hw..(b * t_n + t + 1) * f_n * hw];
            for f in 0..f_n {
                dst[f * hw..(f + 1) * hw].fill(params.bias.data[t * f_n + f]);
            }
            let wt = &params.weight.data[t * f_n * taps..(t + 1) * f_n * taps];
            gemm(f_n, taps, hw, S::one(), wt, Op::N, &cols, Op::N, S::one(), dst);
        }
    }
    out
}

/// Stem forward on `batch` samples laid out `batch x (T*C) x H x W`.
/// In [`NormMode::Batch`] the batch statistics are returned so the caller
/// can fold them into the running statistics; nothing is mutated here.
pub fn stem_forward<S: Scalar>(
    params: &StemParams<S>,
    stats: &BnStats<S>,
    input: &[S],
    batch: usize,
    dims: StemDims,
    mode: NormMode,
    keep: bool,
) -> (Vec<S>, Option<StemCache<S>>, Option<BatchStats<S>>) {
    let hw = dims.pixels();
    let (t_n, f_n) = (dims.time_steps, dims.features);
    let conv = grouped_conv(params, input, batch, dims);
    let eps = S::from_f64(BN_EPS);
    let (mean, var, batch_stats) = match mode {
        NormMode::Batch => {
            let count = batch * t_n * hw;
            let mut mean = vec![S::zero(); f_n];
            let mut var = vec![S::zero(); f_n];
            for (g, plane) in conv.chunks_exact(hw).enumerate() {
                let f = g % f_n;
                mean[f] += plane.iter().copied().sum::<S>();
            }
            let inv_count = S::one() / S::from_usize(count);
            for m in mean.iter_mut() {
                *m *= inv_count;
            }
            for (g, plane) in conv.chunks_exact(hw).enumerate() {
                let f = g % f_n;
                var[f] += plane.iter().map(|&v| (v - mean[f]) * (v - mean[f])).sum::<S>();
            }
            for v in var.iter_mut() {
                *v *= inv_count;
            }
            let bs = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count,
            };
            (mean, var, Some(bs))
        }
        NormMode::Running => (stats.mean.data.clone(), stats.var.data.clone(), None),
    };
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut out = vec![S::zero(); conv.len()];
    for (g, (src, dst)) in conv.chunks_exact(hw).zip(out.chunks_exact_mut(hw)).enumerate() {
        let f = g % f_n;
        let (gam, bet) = (params.gamma.data[f], params.beta.data[f]);
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = gelu(gam * (v - mean[f]) * inv_std[f] + bet);
        }
    }
    let cache = keep.then(|| StemCache {
        batch,
        input: input.to_vec(),
        conv,
        mean,
        inv_std,
    });
    (out, cache, batch_stats)
}

/// Reverse pass for a forward run in [`NormMode::Batch`].
pub fn stem_backward<S: Scalar>(
    params: &StemParams<S>,
    cache: &StemCache<S>,
    d_out: &[S],
    dims: StemDims,
    grads: &mut StemParams<S>,
) {
    let hw = dims.pixels();
    let taps = dims.taps();
    let (t_n, f_n, c_n) = (dims.time_steps, dims.features, dims.channels);
    let batch = cache.batch;
    // d(normalized), plus reductions for the BN input gradient
    let mut d_hat = vec![S::zero(); d_out.len()];
    let mut sum_dhat = vec![S::zero(); f_n];
    let mut sum_dhat_xhat = vec![S::zero(); f_n];
    for (g, ((src, dy), dh)) in cache
        .conv
        .chunks_exact(hw)
        .zip(d_out.chunks_exact(hw))
        .zip(d_hat.chunks_exact_mut(hw))
        .enumerate()
    {
        let f = g % f_n;
        let (gam, bet) = (params.gamma.data[f], params.beta.data[f]);
        for ((&v, &g_out), slot) in src.iter().zip(dy).zip(dh.iter_mut()) {
            let xhat = (v - cache.mean[f]) * cache.inv_std[f];
            let pre = gam * xhat + bet;
            let d_pre = g_out * gelu_grad(pre);
            grads.gamma.data[f] += d_pre * xhat;
            grads.beta.data[f] += d_pre;
            let dxh = d_pre * gam;
            *slot = dxh;
            sum_dhat[f] += dxh;
            sum_dhat_xhat[f] += dxh * xhat;
        }
    }
    let count = S::from_usize(batch * t_n * hw);
    let mut d_conv = d_hat;
    for (g, (src, dc)) in cache.conv.chunks_exact(hw).zip(d_conv.chunks_exact_mut(hw)).enumerate() {
        let f = g % f_n;
        let scale = cache.inv_std[f] / count;
        for (&v, slot) in src.iter().zip(dc.iter_mut()) {
            let xhat = (v - cache.mean[f]) * cache.inv_std[f];
            *slot = scale * (count * *slot - sum_dhat[f] - xhat * sum_dhat_xhat[f]);
        }
    }
    let mut cols = vec![S::zero(); taps * hw];
    for b in 0..batch {
        for t in 0..t_n {
            let group = &cache.input[(b * t_n + t) * c_n * hw..(b * t_n + t + 1) * c_n * hw];
            im2col(group, dims, &mut cols);
            let dc = &d_conv[(b * t_n + t) * f_n * hw..(b * t_n + t + 1) * f_n * hw];
            for f in 0..f_n {
                grads.bias.data[t * f_n + f] += dc[f * hw..(f + 1) * hw].iter().copied().sum::<S>();
            }
            let gw = &mut grads.weight.data[t * f_n * taps..(t + 1) * f_n * taps];
            gemm(f_n, hw, taps, S::one(), dc, Op::N, &cols, Op::T, S::one(), gw);
        }
    }
}

/// Checked stem entry point on a `batch x (T*C) x H x W` cube.
pub fn tgs_forward<S: Scalar>(
    cube: &[S],
    batch: usize,
    params: &StemParams<S>,
    stats: &BnStats<S>,
    dims: StemDims,
    mode: NormMode,
) -> Result<Vec<S>> {
    if params.weight.shape != [dims.time_steps, dims.features, dims.channels, 3, 3] {
        return Err(CoreError::Shape(format!(
            "stem weight {:?} does not match {dims:?}",
            params.weight.shape
        )));
    }
    if batch == 0 || cube.len() != batch * dims.input_len() {
        return Err(CoreError::Shape(format!(
            "stem expects {batch} x {} x {} x {} values, got {}",
            dims.time_steps * dims.channels,
            dims.height,
            dims.width,
            cube.len()
        )));
    }
    ensure_finite("stem input", cube)?;
    let (out, _, _) = stem_forward(params, stats, cube, batch, dims, mode, false);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(t: usize, c: usize, f: usize, h: usize, w: usize) -> StemDims {
        StemDims {
            time_steps: t,
            channels: c,
            features: f,
            height: h,
            width: w,
        }
    }

    #[test]
    fn output_has_eighteen_maps_per_date() {
        let d = dims(23, 6, 18, 13, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = StemParams::<f32>::init(d, &mut rng);
        let x = vec![0.5f32; 2 * d.input_len()];
        let y = tgs_forward(&x, 2, &p, &BnStats::new(18), d, NormMode::Batch).unwrap();
        assert_eq!(y.len(), 2 * 414 * 169);
    }

    #[test]
    fn zero_input_zero_bias_is_zero_in_running_mode() {
        let d = dims(3, 2, 4, 5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = StemParams::<f64>::init(d, &mut rng);
        p.bias.data.fill(0.0);
        let y = tgs_forward(&vec![0.0; d.input_len()], 1, &p, &BnStats::new(4), d, NormMode::Running).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    /// Direct convolution used as the reference for the impulse test.
    fn direct_conv(p: &StemParams<f64>, x: &[f64], d: StemDims) -> Vec<f64> {
        let (h, w) = (d.height as isize, d.width as isize);
        let mut out = vec![0.0; d.output_len()];
        for t in 0..d.time_steps {
            for f in 0..d.features {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = p.bias.data[t * d.features + f];
                        for c in 0..d.channels {
                            for ky in -1..=1isize {
                                for kx in -1..=1isize {
                                    let (sy, sx) = (y + ky, xx + kx);
                                    if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                        continue;
                                    }
                                    let wi = (((t * d.features + f) * d.channels + c) * 3 + (ky + 1) as usize) * 3
                                        + (kx + 1) as usize;
                                    acc += p.weight.data[wi]
                                        * x[((t * d.channels + c) * d.height + sy as usize) * d.width + sx as usize];
                                }
                            }
                        }
                        out[((t * d.features + f) * d.height + y as usize) * d.width + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn impulse_stays_in_its_group_and_neighborhood() {
        let d = dims(3, 2, 4, 5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = StemParams::<f64>::init(d, &mut rng);
        p.bias.data.fill(0.0);
        let mut x = vec![0.0; d.input_len()];
        let (t0, c0) = (1, 1);
        x[(t0 * 2 + c0) * 25 + 12] = 1.0;
        let y = tgs_forward(&x, 1, &p, &BnStats::new(4), d, NormMode::Running).unwrap();
        let reference = direct_conv(&p, &x, d);
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for t in 0..3 {
            for f in 0..4 {
                for py in 0..5usize {
                    for px in 0..5usize {
                        let i = ((t * 4 + f) * 5 + py) * 5 + px;
                        let near = py.abs_diff(2) <= 1 && px.abs_diff(2) <= 1;
                        if t != t0 || !near {
                            assert_eq!(y[i], 0.0);
                        } else {
                            assert!((y[i] - gelu(reference[i] * scale)).abs() < 1e-14);
                        }
                    }
                }
            }
        }
        assert!(y.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn batch_mode_normalizes_each_feature_across_dates() {
        let d = dims(4, 2, 3, 5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = StemParams::<f64>::init(d, &mut rng);
        let x: Vec<f64> = (0..3 * d.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, _, stats) = stem_forward(&p, &BnStats::new(3), &x, 3, d, NormMode::Batch, false);
        let stats = stats.unwrap();
        assert_eq!(stats.count, 3 * 4 * 25);
        let conv = grouped_conv(&p, &x, 3, d);
        for f in 0..3 {
            let vals: Vec<f64> = conv.chunks(25).enumerate().filter(|(g, _)| g % 3 == f).flat_map(|(_, c)| c.to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - stats.mean[f]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d = dims(2, 2, 3, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = StemParams::<f64>::init(d, &mut rng);
        for v in p.gamma.data.iter_mut().chain(p.beta.data.iter_mut()) {
            *v += rng.gen_range(-0.3..0.3);
        }
        let x: Vec<f64> = (0..2 * d.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..2 * d.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let stats = BnStats::new(3);
        let loss = |p: &StemParams<f64>| -> f64 {
            let (y, _, _) = stem_forward(p, &stats, &x, 2, d, NormMode::Batch, false);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache, _) = stem_forward(&p, &stats, &x, 2, d, NormMode::Batch, true);
        let mut g = StemParams::zeros(d);
        stem_backward(&p, cache.as_ref().unwrap(), &w, d, &mut g);
        let h = 1e-6;
        let check = |get: &dyn Fn(&mut StemParams<f64>) -> &mut Vec<f64>, grad: &[f64]| {
            for i in 0..grad.len() {
                let mut a = p.clone();
                let mut b = p.clone();
                get(&mut a)[i] += h;
                get(&mut b)[i] -= h;
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "{i}: {fd} vs {}", grad[i]);
            }
        };
        check(&|p| &mut p.weight.data, &g.weight.data);
        check(&|p| &mut p.bias.data, &g.bias.data);
        check(&|p| &mut p.gamma.data, &g.gamma.data);
        check(&|p| &mut p.beta.data, &g.beta.data);
    }

    #[test]
    fn rejects_shape_mismatch_and_non_finite() {
        let d = dims(2, 2, 3, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = StemParams::<f64>::init(d, &mut rng);
        let s = BnStats::new(3);
        assert!(matches!(
            tgs_forward(&[0.0; 10], 1, &p, &s, d, NormMode::Batch),
            Err(CoreError::Shape(_))
        ));
        let mut x = vec![0.0; d.input_len()];
        x[3] = f64::NAN;
        assert!(matches!(
            tgs_forward(&x, 1, &p, &s, d, NormMode::Batch),
            Err(CoreError::NonFinite(_))
        ));
    }
}
