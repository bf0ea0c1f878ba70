//! 3x3 convolution, batch normalization and nearest-neighbour upsampling on
//! `[N, C, H, W]` tensors, with their backward passes.

use ndarray::{s, Array1, Array2, Array4, ArrayView3, Axis};

use crate::par;

pub const BN_EPS: f64 = 1e-5;

/// `[C_in * 9, H_out * W_out]` patch matrix for a zero-padded 3x3 kernel.
pub fn im2col(x: ArrayView3<f64>, stride: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = out_dims(h, w, stride);
    let mut col = Array2::<f64>::zeros((c * 9, ho * wo));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ci * 9 + ky * 3 + kx;
                let mut dst = col.row_mut(row);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * wo + ox] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub fn col2im(col: &Array2<f64>, c: usize, h: usize, w: usize, stride: usize) -> ndarray::Array3<f64> {
    let (ho, wo) = out_dims(h, w, stride);
    let mut x = ndarray::Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let src = col.row(ci * 9 + ky * 3 + kx);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
    x
}

pub fn out_dims(h: usize, w: usize, stride: usize) -> (usize, usize) {
    ((h - 1) / stride + 1, (w - 1) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[C_out, C_in * 9]`
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

pub struct ConvCache {
    cols: Vec<Array2<f64>>,
    in_dims: (usize, usize, usize),
}

impl Conv2d {
    pub fn forward(&self, x: &Array4<f64>, keep: bool) -> (Array4<f64>, Option<ConvCache>) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = out_dims(h, w, self.stride);
        let per_sample: Vec<(Array2<f64>, Array2<f64>)> = par::map_range(n, |i| {
            let col = im2col(x.index_axis(Axis(0), i), self.stride);
            let mut y = self.weight.dot(&col);
            if let Some(b) = &self.bias {
                for (mut row, &bv) in y.rows_mut().into_iter().zip(b) {
                    row += bv;
                }
            }
            (col, y)
        });
        let mut out = Array4::<f64>::zeros((n, self.out_channels, ho, wo));
        let mut cols = Vec::with_capacity(if keep { n } else { 0 });
        for (i, (col, y)) in per_sample.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(
                &y.into_shape_with_order((self.out_channels, ho, wo))
                    .expect("contiguous conv output"),
            );
            if keep {
                cols.push(col);
            }
        }
        let cache = keep.then_some(ConvCache {
            cols,
            in_dims: (c, h, w),
        });
        (out, cache)
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(
        &self,
        cache: &ConvCache,
        dy: &Array4<f64>,
        need_dx: bool,
    ) -> (Option<Array4<f64>>, Array2<f64>, Option<Array1<f64>>) {
        let (n, co, ho, wo) = dy.dim();
        let (c, h, w) = cache.in_dims;
        let per_sample: Vec<(Array2<f64>, Option<ndarray::Array3<f64>>)> = par::map_range(n, |i| {
            let g = dy
                .index_axis(Axis(0), i)
                .to_owned()
                .into_shape_with_order((co, ho * wo))
                .expect("contiguous gradient");
            let dw = g.dot(&cache.cols[i].t());
            let dx = need_dx.then(|| {
                let dcol = self.weight.t().dot(&g);
                col2im(&dcol, c, h, w, self.stride)
            });
            (dw, dx)
        });
        let mut dweight = Array2::<f64>::zeros(self.weight.dim());
        let mut dx = need_dx.then(|| Array4::<f64>::zeros((n, c, h, w)));
        for (i, (dw, dxi)) in per_sample.into_iter().enumerate() {
            dweight += &dw;
            if let (Some(dx), Some(dxi)) = (dx.as_mut(), dxi) {
                dx.index_axis_mut(Axis(0), i).assign(&dxi);
            }
        }
        let dbias = self
            .bias
            .as_ref()
            .map(|_| dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)));
        (dx, dweight, dbias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

pub struct BnCache {
    xhat: Array4<f64>,
    inv_std: Array1<f64>,
}

/// Per-channel batch mean and (biased) variance observed in a training pass.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn forward_train(&self, x: &Array4<f64>) -> (Array4<f64>, BnCache, BnBatchStats) {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        for ci in 0..c {
            let view = x.slice(s![.., ci, .., ..]);
            let mu = view.sum() / m;
            let v = view.iter().map(|&a| (a - mu) * (a - mu)).sum::<f64>() / m;
            mean[ci] = mu;
            var[ci] = v;
        }
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut xhat = x.clone();
        let mut y = Array4::<f64>::zeros(x.dim());
        for ci in 0..c {
            let mut xh = xhat.slice_mut(s![.., ci, .., ..]);
            xh.mapv_inplace(|a| (a - mean[ci]) * inv_std[ci]);
            y.slice_mut(s![.., ci, .., ..])
                .assign(&xh.mapv(|a| self.gamma[ci] * a + self.beta[ci]));
        }
        (y, BnCache { xhat, inv_std }, BnBatchStats { mean, var })
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut y = x.clone();
        for ci in 0..x.dim().1 {
            let scale = self.gamma[ci] / (self.running_var[ci] + BN_EPS).sqrt();
            let shift = self.beta[ci] - self.running_mean[ci] * scale;
            y.slice_mut(s![.., ci, .., ..])
                .mapv_inplace(|a| a * scale + shift);
        }
        y
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache, dy: &Array4<f64>) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
        let (n, c, h, w) = dy.dim();
        let m = (n * h * w) as f64;
        let mut dx = Array4::<f64>::zeros(dy.dim());
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        for ci in 0..c {
            let g = dy.slice(s![.., ci, .., ..]);
            let xh = cache.xhat.slice(s![.., ci, .., ..]);
            let sum_g = g.sum();
            let sum_gx = (&g * &xh).sum();
            dgamma[ci] = sum_gx;
            dbeta[ci] = sum_g;
            let k = self.gamma[ci] * cache.inv_std[ci] / m;
            let mut d = dx.slice_mut(s![.., ci, .., ..]);
            ndarray::Zip::from(&mut d)
                .and(&g)
                .and(&xh)
                .for_each(|d, &g, &xh| *d = k * (m * g - sum_g - xh * sum_gx));
        }
        (dx, dgamma, dbeta)
    }

    pub fn update_running(&mut self, stats: &BnBatchStats, momentum: f64) {
        self.running_mean = &self.running_mean * momentum + &stats.mean * (1.0 - momentum);
        self.running_var = &self.running_var * momentum + &stats.var * (1.0 - momentum);
    }
}

pub fn upsample2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(a, b, y, z)| x[[a, b, y / 2, z / 2]])
}

/// Adjoint of [`upsample2`].
pub fn upsample2_backward(dy: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = dy.dim();
    let mut dx = Array4::<f64>::zeros((n, c, h2 / 2, w2 / 2));
    for ((a, b, y, z), &g) in dy.indexed_iter() {
        dx[[a, b, y / 2, z / 2]] += g;
    }
    dx
}
