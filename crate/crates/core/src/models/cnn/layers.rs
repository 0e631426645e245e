//! Forward and backward passes for the handful of layer types the network
//! uses. Every backward returns freshly allocated gradients; the trainer owns
//! accumulation order so results stay bit-reproducible under parallelism.

use super::tensor::{t, Tensor};
use num_traits::Float;

/// 2-D convolution, stride 1, zero padding k/2 (so 3x3 keeps H and W, 1x1 is
/// a channel mix). Weight layout [out_c, in_c, k, k].
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Conv2d<T> {
    pub fn zeros(in_c: usize, out_c: usize, k: usize) -> Self {
        assert!(k == 1 || k == 3, "only 1x1 and 3x3 kernels are used");
        Conv2d {
            in_c,
            out_c,
            k,
            weight: vec![T::zero(); out_c * in_c * k * k],
            bias: vec![T::zero(); out_c],
        }
    }

    #[inline]
    fn widx(&self, oc: usize, ic: usize, kh: usize, kw: usize) -> usize {
        ((oc * self.in_c + ic) * self.k + kh) * self.k + kw
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.in_c, "conv input channels");
        let pad = self.k / 2;
        let mut out = Tensor::zeros([n, self.out_c, h, w]);
        for ni in 0..n {
            for oc in 0..self.out_c {
                for oh in 0..h {
                    for ow in 0..w {
                        let mut acc = self.bias[oc];
                        for ic in 0..self.in_c {
                            for kh in 0..self.k {
                                let ih = oh + kh;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                for kw in 0..self.k {
                                    let iw = ow + kw;
                                    if iw < pad || iw - pad >= w {
                                        continue;
                                    }
                                    acc = acc
                                        + self.weight[self.widx(oc, ic, kh, kw)]
                                            * x.at(ni, ic, ih - pad, iw - pad);
                                }
                            }
                        }
                        *out.at_mut(ni, oc, oh, ow) = acc;
                    }
                }
            }
        }
        out
    }

    /// Returns (dx, dweight, dbias).
    pub fn backward(&self, x: &Tensor<T>, dout: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let [n, _, h, w] = x.shape;
        let pad = self.k / 2;
        let mut dx = Tensor::zeros(x.shape);
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); self.bias.len()];
        for ni in 0..n {
            for oc in 0..self.out_c {
                for oh in 0..h {
                    for ow in 0..w {
                        let g = dout.at(ni, oc, oh, ow);
                        db[oc] = db[oc] + g;
                        for ic in 0..self.in_c {
                            for kh in 0..self.k {
                                let ih = oh + kh;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                for kw in 0..self.k {
                                    let iw = ow + kw;
                                    if iw < pad || iw - pad >= w {
                                        continue;
                                    }
                                    let xi = x.at(ni, ic, ih - pad, iw - pad);
                                    dw[self.widx(oc, ic, kh, kw)] =
                                        dw[self.widx(oc, ic, kh, kw)] + g * xi;
                                    let di = dx.idx(ni, ic, ih - pad, iw - pad);
                                    dx.data[di] =
                                        dx.data[di] + g * self.weight[self.widx(oc, ic, kh, kw)];
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }
}

/// Single-group normalization: each sample is normalized over all of C,H,W,
/// then scaled per channel. Statistics depend on one sample only, so batched
/// and per-sample execution agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<T> {
    pub c: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: f64,
}

pub struct NormCache<T> {
    pub xhat: Tensor<T>,
    /// 1/sqrt(var+eps) per sample
    pub inv_std: Vec<T>,
}

impl<T: Float> GroupNorm<T> {
    pub fn identity(c: usize) -> Self {
        GroupNorm {
            c,
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.c, "norm channels");
        let m = c * h * w;
        let minv = t::<T>(1.0 / m as f64);
        let mut out = Tensor::zeros(x.shape);
        let mut xhat = Tensor::zeros(x.shape);
        let mut inv_std = Vec::with_capacity(n);
        for ni in 0..n {
            let s = &x.data[ni * m..(ni + 1) * m];
            let mut mean = T::zero();
            for &v in s {
                mean = mean + v;
            }
            mean = mean * minv;
            let mut var = T::zero();
            for &v in s {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * minv;
            let inv = (var + t::<T>(self.eps)).sqrt().recip();
            inv_std.push(inv);
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        let xh = (x.at(ni, ci, hi, wi) - mean) * inv;
                        *xhat.at_mut(ni, ci, hi, wi) = xh;
                        *out.at_mut(ni, ci, hi, wi) = self.gamma[ci] * xh + self.beta[ci];
                    }
                }
            }
        }
        (out, NormCache { xhat, inv_std })
    }

    /// Returns (dx, dgamma, dbeta).
    pub fn backward(&self, cache: &NormCache<T>, dout: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let [n, c, h, w] = dout.shape;
        let m = c * h * w;
        let minv = t::<T>(1.0 / m as f64);
        let mut dx = Tensor::zeros(dout.shape);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ni in 0..n {
            // per-channel parameter gradients plus the two reductions that
            // appear in the normalization gradient
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        let g = dout.at(ni, ci, hi, wi);
                        let xh = cache.xhat.at(ni, ci, hi, wi);
                        dgamma[ci] = dgamma[ci] + g * xh;
                        dbeta[ci] = dbeta[ci] + g;
                        let dxh = g * self.gamma[ci];
                        sum_dxhat = sum_dxhat + dxh;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxh * xh;
                    }
                }
            }
            let m1 = sum_dxhat * minv;
            let m2 = sum_dxhat_xhat * minv;
            let inv = cache.inv_std[ni];
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        let dxh = dout.at(ni, ci, hi, wi) * self.gamma[ci];
                        let xh = cache.xhat.at(ni, ci, hi, wi);
                        *dx.at_mut(ni, ci, hi, wi) = inv * (dxh - m1 - xh * m2);
                    }
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

pub fn relu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(T::zero())).collect(),
    }
}

/// Gradient gate using the forward output as the mask.
pub fn relu_backward<T: Float>(dout: &Tensor<T>, out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(dout.shape, out.shape);
    Tensor {
        shape: dout.shape,
        data: dout
            .data
            .iter()
            .zip(&out.data)
            .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

pub struct PoolCache {
    pub in_shape: [usize; 4],
    /// flat input index of each output element's maximum
    pub argmax: Vec<usize>,
}

/// 2x2 max pool, stride 2; output sides never drop below 1. Odd trailing
/// rows/columns are discarded, matching floor(H/2) shapes.
pub fn maxpool2<T: Float>(x: &Tensor<T>) -> (Tensor<T>, PoolCache) {
    let [n, c, h, w] = x.shape;
    let ho = (h / 2).max(1);
    let wo = (w / 2).max(1);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = vec![0usize; n * c * ho * wo];
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let r1 = (oh * 2 + 2).min(h);
                    let c1 = (ow * 2 + 2).min(w);
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for hi in oh * 2..r1 {
                        for wi in ow * 2..c1 {
                            let v = x.at(ni, ci, hi, wi);
                            if v > best {
                                best = v;
                                best_i = x.idx(ni, ci, hi, wi);
                            }
                        }
                    }
                    let oi = out.idx(ni, ci, oh, ow);
                    out.data[oi] = best;
                    argmax[oi] = best_i;
                }
            }
        }
    }
    (
        out,
        PoolCache {
            in_shape: x.shape,
            argmax,
        },
    )
}

pub fn maxpool2_backward<T: Float>(cache: &PoolCache, dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(cache.in_shape);
    for (oi, &ii) in cache.argmax.iter().enumerate() {
        dx.data[ii] = dx.data[ii] + dout.data[oi];
    }
    dx
}

/// Global average pool to [N, C, 1, 1].
pub fn gap<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let minv = t::<T>(1.0 / (h * w) as f64);
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = T::zero();
            for hi in 0..h {
                for wi in 0..w {
                    acc = acc + x.at(ni, ci, hi, wi);
                }
            }
            *out.at_mut(ni, ci, 0, 0) = acc * minv;
        }
    }
    out
}

pub fn gap_backward<T: Float>(in_shape: [usize; 4], dout: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = in_shape;
    let minv = t::<T>(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(in_shape);
    for ni in 0..n {
        for ci in 0..c {
            let g = dout.at(ni, ci, 0, 0) * minv;
            for hi in 0..h {
                for wi in 0..w {
                    *dx.at_mut(ni, ci, hi, wi) = g;
                }
            }
        }
    }
    dx
}

/// Dense layer over [N, C, 1, 1] feature vectors. Weight layout [out, in].
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        assert_eq!((c, h, w), (self.in_dim, 1, 1), "linear input shape");
        let mut out = Tensor::zeros([n, self.out_dim, 1, 1]);
        for ni in 0..n {
            for o in 0..self.out_dim {
                let mut acc = self.bias[o];
                for i in 0..self.in_dim {
                    acc = acc + self.weight[o * self.in_dim + i] * x.at(ni, i, 0, 0);
                }
                *out.at_mut(ni, o, 0, 0) = acc;
            }
        }
        out
    }

    /// Returns (dx, dweight, dbias).
    pub fn backward(&self, x: &Tensor<T>, dout: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let [n, _, _, _] = x.shape;
        let mut dx = Tensor::zeros(x.shape);
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); self.bias.len()];
        for ni in 0..n {
            for o in 0..self.out_dim {
                let g = dout.at(ni, o, 0, 0);
                db[o] = db[o] + g;
                for i in 0..self.in_dim {
                    dw[o * self.in_dim + i] = dw[o * self.in_dim + i] + g * x.at(ni, i, 0, 0);
                    *dx.at_mut(ni, i, 0, 0) =
                        dx.at(ni, i, 0, 0) + g * self.weight[o * self.in_dim + i];
                }
            }
        }
        (dx, dw, db)
    }
}
