//! Raw forward/backward kernels on contiguous NCHW buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{matmul_acc, Float};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn plane_out(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold `x` into a `[C*kh*kw, N*Ho*Wo]` patch matrix.
fn im2col<F: Float>(g: &ConvGeom, x: &[F]) -> Vec<F> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let np = g.n * p;
    let mut cols = vec![F::zero(); g.k() * np];
    for c in 0..g.c_in {
        for i in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(i, g.pad, g.stride, g.h, ho);
            for j in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(j, g.pad, g.stride, g.w, wo);
                let row = (c * g.kh + i) * g.kw + j;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[n * p..(n + 1) * p];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + i - g.pad;
                        let src = &plane[iy * g.w..][..g.w];
                        let d = &mut dst[oy * wo..(oy + 1) * wo];
                        let ix0 = ox_lo * g.stride + j - g.pad;
                        if g.stride == 1 {
                            d[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + ox_hi - ox_lo]);
                        } else {
                            for (slot, &v) in d[ox_lo..ox_hi].iter_mut().zip(src[ix0..].iter().step_by(g.stride)) {
                                *slot = v;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Output positions `[lo, hi)` whose tap at kernel offset `k` lands inside
/// an input axis of length `len`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Fold a patch-gradient matrix back onto the input, accumulating overlaps.
fn col2im<F: Float>(g: &ConvGeom, cols: &[F], dx: &mut [F]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let np = g.n * p;
    for c in 0..g.c_in {
        for i in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(i, g.pad, g.stride, g.h, ho);
            for j in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(j, g.pad, g.stride, g.w, wo);
                let row = (c * g.kh + i) * g.kw + j;
                let src_row = &cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &mut dx[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[n * p..(n + 1) * p];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + i - g.pad;
                        let dst = &mut plane[iy * g.w..][..g.w];
                        let s = &src[oy * wo + ox_lo..oy * wo + ox_hi];
                        let ix0 = ox_lo * g.stride + j - g.pad;
                        if g.stride == 1 {
                            for (d, &v) in dst[ix0..ix0 + s.len()].iter_mut().zip(s) {
                                *d = *d + v;
                            }
                        } else {
                            for (d, &v) in dst[ix0..].iter_mut().step_by(g.stride).zip(s) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Pointwise convs read the input directly as `[C, N*H*W]`.
fn channel_major<F: Float>(g: &ConvGeom, x: &[F]) -> Vec<F> {
    let p = g.h * g.w;
    let mut out = vec![F::zero(); g.c_in * g.n * p];
    for n in 0..g.n {
        for c in 0..g.c_in {
            out[(c * g.n + n) * p..][..p].copy_from_slice(&x[(n * g.c_in + c) * p..][..p]);
        }
    }
    out
}

fn patches<F: Float>(g: &ConvGeom, x: &[F]) -> Vec<F> {
    if g.is_pointwise() {
        channel_major(g, x)
    } else {
        im2col(g, x)
    }
}

pub fn conv2d_forward<F: Float>(g: &ConvGeom, x: &[F], weight: &[F], bias: Option<&[F]>) -> Vec<F> {
    conv2d_forward_keep(g, x, weight, bias, false).0
}

/// Forward pass that can hand back the patch matrix for reuse in
/// [`conv2d_backward`].
pub fn conv2d_forward_keep<F: Float>(
    g: &ConvGeom,
    x: &[F],
    weight: &[F],
    bias: Option<&[F]>,
    keep_patches: bool,
) -> (Vec<F>, Option<Vec<F>>) {
    let p = g.plane_out();
    let np = g.n * p;
    let cols = patches(g, x);
    let mut tmp = vec![F::zero(); g.c_out * np];
    matmul_acc(g.c_out, g.k(), np, weight, false, &cols, false, &mut tmp, F::zero());
    let mut out = vec![F::zero(); g.n * g.c_out * p];
    for co in 0..g.c_out {
        let b = bias.map_or(F::zero(), |b| b[co]);
        for n in 0..g.n {
            let src = &tmp[co * np + n * p..][..p];
            let dst = &mut out[(n * g.c_out + co) * p..][..p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    (out, keep_patches.then_some(cols))
}

pub struct ConvGrads<F> {
    pub dx: Option<Vec<F>>,
    pub dw: Option<Vec<F>>,
    pub db: Option<Vec<F>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<F: Float>(
    g: &ConvGeom,
    x: &[F],
    weight: &[F],
    dy: &[F],
    saved_patches: Option<&[F]>,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<F> {
    let p = g.plane_out();
    let np = g.n * p;
    let k = g.k();
    let mut dtmp = vec![F::zero(); g.c_out * np];
    for n in 0..g.n {
        for co in 0..g.c_out {
            dtmp[co * np + n * p..][..p].copy_from_slice(&dy[(n * g.c_out + co) * p..][..p]);
        }
    }
    let db = need_db
        .then(|| (0..g.c_out).map(|co| dtmp[co * np..(co + 1) * np].iter().fold(F::zero(), |a, &v| a + v)).collect());
    let dw = need_dw.then(|| {
        let fresh;
        let cols = match saved_patches {
            Some(c) => c,
            None => {
                fresh = patches(g, x);
                &fresh
            }
        };
        let mut dw = vec![F::zero(); g.c_out * k];
        matmul_acc(g.c_out, np, k, &dtmp, false, cols, true, &mut dw, F::zero());
        dw
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![F::zero(); k * np];
        matmul_acc(k, g.c_out, np, weight, true, &dtmp, false, &mut dcols, F::zero());
        let mut dx = vec![F::zero(); g.n * g.c_in * g.h * g.w];
        if g.is_pointwise() {
            let p_in = g.h * g.w;
            for n in 0..g.n {
                for c in 0..g.c_in {
                    dx[(n * g.c_in + c) * p_in..][..p_in].copy_from_slice(&dcols[(c * g.n + n) * p_in..][..p_in]);
                }
            }
        } else {
            col2im(g, &dcols, &mut dx);
        }
        dx
    });
    ConvGrads { dx, dw, db }
}

/// 2×2 stride-2 max pooling. Each index is the window offset `dy*2 + dx`
/// of the first maximum in row-major order.
pub fn maxpool2_forward<F: Float>(planes: usize, h: usize, w: usize, x: &[F]) -> (Vec<F>, Vec<u8>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![F::zero(); planes * ho * wo];
    let mut idx = vec![0u8; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = src[2 * oy * w + 2 * ox];
                let mut best_k = 0u8;
                for k in 1..4u8 {
                    let (dy, dx) = ((k / 2) as usize, (k % 2) as usize);
                    let v = src[(2 * oy + dy) * w + 2 * ox + dx];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                let o = (pl * ho + oy) * wo + ox;
                out[o] = best;
                idx[o] = best_k;
            }
        }
    }
    (out, idx)
}

/// Scatter each value to its recorded window offset; zero elsewhere.
/// `ho, wo` are the pooled (input) dims.
pub fn unpool2<F: Float>(planes: usize, ho: usize, wo: usize, y: &[F], idx: &[u8]) -> Vec<F> {
    let (h, w) = (ho * 2, wo * 2);
    let mut out = vec![F::zero(); planes * h * w];
    for pl in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = (pl * ho + oy) * wo + ox;
                let k = idx[o] as usize;
                out[pl * h * w + (2 * oy + k / 2) * w + 2 * ox + k % 2] = y[o];
            }
        }
    }
    out
}

/// Adjoint of [`unpool2`]: gather each window's recorded position.
pub fn gather2<F: Float>(planes: usize, ho: usize, wo: usize, d: &[F], idx: &[u8]) -> Vec<F> {
    let (h, w) = (ho * 2, wo * 2);
    let mut out = vec![F::zero(); planes * ho * wo];
    for pl in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = (pl * ho + oy) * wo + ox;
                let k = idx[o] as usize;
                out[o] = d[pl * h * w + (2 * oy + k / 2) * w + 2 * ox + k % 2];
            }
        }
    }
    out
}

pub fn upsample2<F: Float>(planes: usize, h: usize, w: usize, x: &[F]) -> Vec<F> {
    let (h2, w2) = (h * 2, w * 2);
    let mut out = vec![F::zero(); planes * h2 * w2];
    for pl in 0..planes {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(pl * h2 + y) * w2 + xx] = x[(pl * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Sum each 2×2 window, scaled. With `scale = 1` this is the adjoint of
/// [`upsample2`]; with `scale = 1/4` it is 2×2 average pooling.
pub fn sum_pool2<F: Float>(planes: usize, h: usize, w: usize, x: &[F], scale: F) -> Vec<F> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![F::zero(); planes * ho * wo];
    for pl in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let b = pl * h * w + 2 * oy * w + 2 * ox;
                out[(pl * ho + oy) * wo + ox] = (x[b] + x[b + 1] + x[b + w] + x[b + w + 1]) * scale;
            }
        }
    }
    out
}

/// Per-plane standardization with the variance biased estimator and `eps`
/// inside the square root. Returns `(x_hat, 1/sqrt(var+eps))`.
/// Per-plane standardization. With `eps_on_std` the divisor is `std + eps`, otherwise
/// `sqrt(var + eps)`. Returns the output plus, per plane, the reciprocal divisor and the
/// factor on the variance path of the backward pass.
pub fn instance_norm_forward<F: Float>(
    planes: usize,
    len: usize,
    x: &[F],
    eps: F,
    eps_on_std: bool,
) -> (Vec<F>, Vec<(F, F)>) {
    let mut out = vec![F::zero(); x.len()];
    let mut rstd = vec![(F::zero(), F::zero()); planes];
    let inv_len = F::one() / F::from_usize(len).unwrap();
    for pl in 0..planes {
        let src = &x[pl * len..][..len];
        let mean = src.iter().fold(F::zero(), |a, &v| a + v) * inv_len;
        let var = src.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_len;
        let r = if eps_on_std {
            let sd = var.sqrt();
            let r = F::one() / (sd + eps);
            rstd[pl] = (r, if sd > F::zero() { F::one() / sd } else { F::zero() });
            r
        } else {
            let r = F::one() / (var + eps).sqrt();
            rstd[pl] = (r, r);
            r
        };
        for (o, &v) in out[pl * len..][..len].iter_mut().zip(src) {
            *o = (v - mean) * r;
        }
    }
    (out, rstd)
}

pub fn instance_norm_backward<F: Float>(planes: usize, len: usize, x_hat: &[F], rstd: &[(F, F)], dy: &[F]) -> Vec<F> {
    let mut dx = vec![F::zero(); dy.len()];
    let inv_len = F::one() / F::from_usize(len).unwrap();
    for pl in 0..planes {
        let xh = &x_hat[pl * len..][..len];
        let g = &dy[pl * len..][..len];
        let mean_g = g.iter().fold(F::zero(), |a, &v| a + v) * inv_len;
        let mean_gx = g.iter().zip(xh).fold(F::zero(), |a, (&gv, &xv)| a + gv * xv) * inv_len;
        for ((d, &gv), &xv) in dx[pl * len..][..len].iter_mut().zip(g).zip(xh) {
            let (r, inv_sd) = rstd[pl];
            *d = r * (gv - mean_g) - xv * mean_gx * inv_sd;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn direct(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (ho, wo) = (g.out_h(), g.out_w());
        let mut y = vec![0.0; g.n * g.c_out * ho * wo];
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        for n in 0..g.n {
            for co in 0..g.c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let yi = ((n * g.c_out + co) * ho + oy) * wo + ox;
                        for c in 0..g.c_in {
                            for i in 0..g.kh {
                                for j in 0..g.kw {
                                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    let xi = ((n * g.c_in + c) * g.h + iy as usize) * g.w + ix as usize;
                                    let wi = ((co * g.c_in + c) * g.kh + i) * g.kw + j;
                                    y[yi] += w[wi] * x[xi];
                                    dx[xi] += w[wi] * dy[yi];
                                    dw[wi] += x[xi] * dy[yi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (y, dx, dw)
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let k = rng.gen_range(1..6);
            let g = ConvGeom {
                n: rng.gen_range(1..3),
                c_in: rng.gen_range(1..4),
                h: rng.gen_range(k..10),
                w: rng.gen_range(k..10),
                c_out: rng.gen_range(1..4),
                kh: k,
                kw: k,
                stride: rng.gen_range(1..3),
                pad: rng.gen_range(0..k),
            };
            let mut gen = |len: usize| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let x = gen(g.n * g.c_in * g.h * g.w);
            let w = gen(g.c_out * g.c_in * k * k);
            let dy = gen(g.n * g.c_out * g.out_h() * g.out_w());
            let (y0, dx0, dw0) = direct(&g, &x, &w, &dy);
            let y = conv2d_forward(&g, &x, &w, None);
            let grads = conv2d_backward(&g, &x, &w, &dy, None, true, true, false);
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-10);
            assert!(close(&y, &y0), "forward {g:?}");
            assert!(close(&grads.dx.unwrap(), &dx0), "dx {g:?}");
            assert!(close(&grads.dw.unwrap(), &dw0), "dw {g:?}");
        }
    }
}
