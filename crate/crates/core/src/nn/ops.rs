//! Layer kernels on [`Tensor`] batches.

use rayon::prelude::*;

use super::spec::ConvSpec;
use super::tensor::Tensor;

/// Column matrix `[C·kh·kw][H'·W']` of one sample, zero outside the input.
fn im2col(x: &[f64], h: usize, w: usize, s: &ConvSpec, ho: usize, wo: usize, cols: &mut [f64]) {
    let p = ho * wo;
    let (kh, kw) = (s.kernel_h, s.kernel_w);
    for c in 0..s.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((c * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto the input grid (adjoint of [`im2col`]).
fn col2im(cols: &[f64], h: usize, w: usize, s: &ConvSpec, ho: usize, wo: usize, dx: &mut [f64]) {
    let p = ho * wo;
    let (kh, kw) = (s.kernel_h, s.kernel_w);
    for c in 0..s.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((c * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(s: &ConvSpec) -> bool {
    s.kernel_h == 1 && s.kernel_w == 1 && s.stride == 1 && s.padding == 0
}

/// `C[m×n] = A[m×k]·B[k×n]` (+ `beta·C`), with explicit strides for transposed views.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m×k), `b` (k×n) and row-major `c` (m×n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of every sample with `kernel` (`[C'][C][kh][kw]`), no bias.
pub fn conv_forward(x: &Tensor, s: &ConvSpec, kernel: &[f64]) -> Tensor {
    let (ho, wo) = s.output_hw(x.h, x.w).expect("shape validated at build");
    let p = ho * wo;
    let k = s.in_channels * s.kernel_h * s.kernel_w;
    let mut out = Tensor::zeros(x.n, s.out_channels, ho, wo);
    let sl = x.sample_len();
    out.data
        .par_chunks_mut(s.out_channels * p)
        .zip(x.data.par_chunks(sl))
        .for_each(|(y, xs)| {
            if is_pointwise(s) {
                gemm(s.out_channels, k, p, kernel, k as isize, 1, xs, p as isize, 1, 0.0, y);
            } else {
                let mut cols = vec![0.0; k * p];
                im2col(xs, x.h, x.w, s, ho, wo, &mut cols);
                gemm(s.out_channels, k, p, kernel, k as isize, 1, &cols, p as isize, 1, 0.0, y);
            }
        });
    out
}

/// Returns `(dx, dkernel)` for upstream gradient `dy`.
///
/// Per-sample kernel gradients are summed in sample order, so the result does not depend on
/// the number of worker threads.
pub fn conv_backward(x: &Tensor, s: &ConvSpec, kernel: &[f64], dy: &Tensor, need_dx: bool) -> (Option<Tensor>, Vec<f64>) {
    let (ho, wo) = (dy.h, dy.w);
    let p = ho * wo;
    let k = s.in_channels * s.kernel_h * s.kernel_w;
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
    let sl = x.sample_len();
    let per_sample: Vec<Vec<f64>> = match dx.as_mut() {
        Some(dx) => dx
            .data
            .par_chunks_mut(sl)
            .zip(x.data.par_chunks(sl))
            .zip(dy.data.par_chunks(s.out_channels * p))
            .map(|((dxs, xs), dys)| conv_backward_sample(xs, x.h, x.w, s, kernel, dys, ho, wo, Some(dxs)))
            .collect(),
        None => x
            .data
            .par_chunks(sl)
            .zip(dy.data.par_chunks(s.out_channels * p))
            .map(|(xs, dys)| conv_backward_sample(xs, x.h, x.w, s, kernel, dys, ho, wo, None))
            .collect(),
    };
    let mut dk = vec![0.0; s.out_channels * k];
    for g in &per_sample {
        for (a, b) in dk.iter_mut().zip(g) {
            *a += b;
        }
    }
    (dx, dk)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_sample(
    xs: &[f64],
    h: usize,
    w: usize,
    s: &ConvSpec,
    kernel: &[f64],
    dys: &[f64],
    ho: usize,
    wo: usize,
    dxs: Option<&mut [f64]>,
) -> Vec<f64> {
    let p = ho * wo;
    let k = s.in_channels * s.kernel_h * s.kernel_w;
    let cout = s.out_channels;
    let mut dk = vec![0.0; cout * k];
    let pointwise = is_pointwise(s);
    let cols_buf;
    let cols: &[f64] = if pointwise {
        xs
    } else {
        let mut c = vec![0.0; k * p];
        im2col(xs, h, w, s, ho, wo, &mut c);
        cols_buf = c;
        &cols_buf
    };
    // dK = dY · colsᵀ
    gemm(cout, p, k, dys, p as isize, 1, cols, 1, p as isize, 0.0, &mut dk);
    if let Some(dxs) = dxs {
        // dcols = Kᵀ · dY
        if pointwise {
            gemm(k, cout, p, kernel, 1, k as isize, dys, p as isize, 1, 0.0, dxs);
        } else {
            let mut dcols = vec![0.0; k * p];
            gemm(k, cout, p, kernel, 1, k as isize, dys, p as isize, 1, 0.0, &mut dcols);
            col2im(&dcols, h, w, s, ho, wo, dxs);
        }
    }
    dk
}

/// `max(z, eps)` in place; returns the mask of entries strictly above `eps`.
pub fn relu_forward(z: &mut [f64], eps: f64) -> Vec<bool> {
    z.iter_mut()
        .map(|v| {
            let on = *v > eps;
            if !on {
                *v = eps;
            }
            on
        })
        .collect()
}

/// Zeros gradient entries where the activation was clamped (subgradient 0 at the kink).
pub fn relu_backward(dy: &mut [f64], mask: &[bool]) {
    for (d, &on) in dy.iter_mut().zip(mask) {
        if !on {
            *d = 0.0;
        }
    }
}

/// Saved batch-norm quantities for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-channel batch mean and biased variance over samples and positions.
pub fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let p = x.plane();
    let m = (x.n * p) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let mut s = 0.0;
        for i in 0..x.n {
            s += x.data[(i * x.c + c) * p..][..p].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0;
        for i in 0..x.n {
            q += x.data[(i * x.c + c) * p..][..p].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[c] = mu;
        var[c] = q / m;
    }
    (mean, var)
}

/// Train-mode batch norm in place. Returns the cache and the batch `(mean, biased var)`.
pub fn bn_train_forward(x: &mut Tensor, alpha: &[f64], beta: &[f64], eps: f64) -> (BnCache, Vec<f64>, Vec<f64>) {
    let (mean, var) = channel_stats(x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let p = x.plane();
    let mut xhat = vec![0.0; x.data.len()];
    for (idx, chunk) in x.data.chunks_exact_mut(p).enumerate() {
        let c = idx % alpha.len();
        let xh = &mut xhat[idx * p..(idx + 1) * p];
        for (v, h) in chunk.iter_mut().zip(xh.iter_mut()) {
            *h = (*v - mean[c]) * inv_std[c];
            *v = alpha[c] * *h + beta[c];
        }
    }
    (BnCache { xhat, inv_std }, mean, var)
}

/// Inference batch norm with frozen running statistics.
pub fn bn_infer_forward(x: &mut Tensor, alpha: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) {
    let p = x.plane();
    for (idx, chunk) in x.data.chunks_exact_mut(p).enumerate() {
        let c = idx % alpha.len();
        let scale = alpha[c] / (var[c] + eps).sqrt();
        for v in chunk.iter_mut() {
            *v = scale * (*v - mean[c]) + beta[c];
        }
    }
}

/// Backward of train-mode batch norm: overwrites `dy` with `dx`, returns `(dalpha, dbeta)`.
pub fn bn_backward(dy: &mut Tensor, cache: &BnCache, alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, c, p) = (dy.n, dy.c, dy.plane());
    let m = (n * p) as f64;
    let mut dalpha = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        for i in 0..n {
            let off = (i * c + ch) * p;
            let g = &dy.data[off..off + p];
            let xh = &cache.xhat[off..off + p];
            dbeta[ch] += g.iter().sum::<f64>();
            dalpha[ch] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    for (idx, chunk) in dy.data.chunks_exact_mut(p).enumerate() {
        let ch = idx % c;
        let xh = &cache.xhat[idx * p..(idx + 1) * p];
        let k = alpha[ch] * cache.inv_std[ch] / m;
        for (g, &x) in chunk.iter_mut().zip(xh) {
            *g = k * (m * *g - dbeta[ch] - x * dalpha[ch]);
        }
    }
    (dalpha, dbeta)
}

/// Cubic convolution kernel with `a = −0.5`.
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Dense `[out][in]` interpolation matrix for one axis: half-pixel centers, clamped edges.
pub fn resize_matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut r = vec![0.0; n_out * n_in];
    let scale = n_in as f64 / n_out as f64;
    for o in 0..n_out {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let base = src.floor();
        let t = src - base;
        for k in -1..=2isize {
            let idx = (base as isize + k).clamp(0, n_in as isize - 1) as usize;
            r[o * n_in + idx] += cubic_weight(t - k as f64);
        }
    }
    r
}

/// Separable bicubic resize: `Y = Rh · X · Rwᵀ` per channel.
pub fn resize_forward(x: &Tensor, th: usize, tw: usize) -> Tensor {
    let rh = resize_matrix(x.h, th);
    let rw = resize_matrix(x.w, tw);
    let mut out = Tensor::zeros(x.n, x.c, th, tw);
    let mut tmp = vec![0.0; x.h * tw];
    for (src, dst) in x.data.chunks_exact(x.plane()).zip(out.data.chunks_exact_mut(th * tw)) {
        // tmp = X · Rwᵀ  (h × tw)
        gemm(x.h, x.w, tw, src, x.w as isize, 1, &rw, 1, x.w as isize, 0.0, &mut tmp);
        gemm(th, x.h, tw, &rh, x.h as isize, 1, &tmp, tw as isize, 1, 0.0, dst);
    }
    out
}

/// Adjoint of [`resize_forward`]: `X̄ = Rhᵀ · Ȳ · Rw`.
pub fn resize_adjoint(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let rh = resize_matrix(h, dy.h);
    let rw = resize_matrix(w, dy.w);
    let mut out = Tensor::zeros(dy.n, dy.c, h, w);
    let mut tmp = vec![0.0; dy.h * w];
    for (src, dst) in dy.data.chunks_exact(dy.plane()).zip(out.data.chunks_exact_mut(h * w)) {
        // tmp = Ȳ · Rw  (th × w)
        gemm(dy.h, dy.w, w, src, dy.w as isize, 1, &rw, w as isize, 1, 0.0, &mut tmp);
        gemm(h, dy.h, w, &rh, 1, h as isize, &tmp, w as isize, 1, 0.0, dst);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_kernel_scales() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv_forward(&x, &ConvSpec::new(1, 1, 1), &[2.0]);
        assert_eq!(y.data, vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn strided_padded_conv_matches_direct_sum() {
        let s = ConvSpec::new(3, 2, 3).stride(2).padding(1);
        let x = Tensor::from_vec(1, 2, 5, 5, (0..50).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let k: Vec<f64> = (0..s.kernel_len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let y = conv_forward(&x, &s, &k);
        assert_eq!((y.h, y.w), (3, 3));
        for co in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = 0.0;
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (2 * oy + ky) as isize - 1;
                                let ix = (2 * ox + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    acc += k[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x.data[ci * 25 + iy as usize * 5 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data[co * 9 + oy * 3 + ox] - acc).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn cubic_kernel_partition_of_unity() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let s: f64 = (-1..=2).map(|k| cubic_weight(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bn_infer_is_affine() {
        let a = [1.5, -0.5];
        let b = [0.2, 0.1];
        let (m, v) = ([0.3, -1.0], [2.0, 0.5]);
        let x1 = Tensor::from_vec(1, 2, 1, 2, vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        let x2 = Tensor::from_vec(1, 2, 1, 2, vec![0.0, 5.0, -3.0, 4.0]).unwrap();
        let mut avg = x1.clone();
        avg.data.iter_mut().zip(&x2.data).for_each(|(p, q)| *p = 0.5 * (*p + q));
        let (mut y1, mut y2) = (x1.clone(), x2.clone());
        bn_infer_forward(&mut y1, &a, &b, &m, &v, 1e-5);
        bn_infer_forward(&mut y2, &a, &b, &m, &v, 1e-5);
        bn_infer_forward(&mut avg, &a, &b, &m, &v, 1e-5);
        for i in 0..4 {
            assert!((avg.data[i] - 0.5 * (y1.data[i] + y2.data[i])).abs() < 1e-14);
        }
    }
}
