//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Convention: `forward` borrows the layer immutably (except batch-norm in
//! stat-updating mode) and returns `(output, cache)`; `backward` consumes
//! the cache, accumulates parameter gradients into the layer, and returns
//! the gradient with respect to the layer input. Gradients accumulate
//! across calls until `zero_grad`.

use ndarray::{Array1, Array2, Array4, ArrayD, Ix1, Ix2, Ix4};
use rand_chacha::ChaCha12Rng;

use super::init;
use super::{Buffer, HasParams, Param};

/// Batch-norm execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Batch statistics without touching running statistics. Used for
    /// momentum/previous extractors, which must stay bitwise frozen.
    TrainFrozenStats,
    /// Running statistics (inference).
    Eval,
}

impl Mode {
    fn uses_batch_stats(self) -> bool {
        matches!(self, Mode::Train | Mode::TrainFrozenStats)
    }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2-D convolution, square kernel, no bias (always followed by a norm or
/// used where bias is irrelevant). Weight stored as [c_out, c_in*k*k].
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCache {
    /// im2col matrix, [c_in*k*k, b*oh*ow].
    cols: Array2<f32>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        Conv2d {
            w: Param::new(format!("{name}.w"), init::he_normal(rng, &[c_out, fan_in], fan_in)),
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array4<f32>) -> Array2<f32> {
        let (b, c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let k = self.k;
        let n = b * oh * ow;
        let mut cols = Array2::<f32>::zeros((c * k * k, n));
        let xs = x.as_slice().expect("input must be standard layout");
        let cs = cols.as_slice_mut().unwrap();
        for ci in 0..c {
            for kh in 0..k {
                for kw in 0..k {
                    let j = (ci * k + kh) * k + kw;
                    let row = &mut cs[j * n..(j + 1) * n];
                    for bi in 0..b {
                        let x_plane = bi * c * h * w + ci * h * w;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + kh) as isize - self.pad as isize;
                            let out_row = (bi * oh + oy) * ow;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = x_plane + iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kw) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                row[out_row + ox] = xs[x_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(
        &self,
        dcols: &Array2<f32>,
        in_shape: (usize, usize, usize, usize),
        out_hw: (usize, usize),
    ) -> Array4<f32> {
        let (b, c, h, w) = in_shape;
        let (oh, ow) = out_hw;
        let k = self.k;
        let n = b * oh * ow;
        let mut dx = Array4::<f32>::zeros((b, c, h, w));
        let ds = dcols.as_slice().expect("dcols standard layout");
        let xs = dx.as_slice_mut().unwrap();
        for ci in 0..c {
            for kh in 0..k {
                for kw in 0..k {
                    let j = (ci * k + kh) * k + kw;
                    let row = &ds[j * n..(j + 1) * n];
                    for bi in 0..b {
                        let x_plane = bi * c * h * w + ci * h * w;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + kh) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let out_row = (bi * oh + oy) * ow;
                            let x_row = x_plane + iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kw) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                xs[x_row + ix as usize] += row[out_row + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, Conv2dCache) {
        let (b, _c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let wmat = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        // [c_out, k] x [k, n] -> [c_out, n]
        let y2 = wmat.dot(&cols);
        let y = y2
            .into_shape_with_order((self.c_out, b, oh, ow))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        (
            y,
            Conv2dCache {
                cols,
                in_shape: x.dim(),
                out_hw: (oh, ow),
            },
        )
    }

    /// Accumulates dW; returns dx.
    pub fn backward(&mut self, dy: &Array4<f32>, cache: &Conv2dCache) -> Array4<f32> {
        let (b, _, _, _) = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let n = b * oh * ow;
        let dy2 = dy
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_shape_with_order((self.c_out, n))
            .unwrap()
            .to_owned();
        // dW [c_out, k] = dy2 [c_out, n] . cols^T [n, k]
        let dw = dy2.dot(&cache.cols.t());
        self.w
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .zip_mut_with(&dw, |g, &v| *g += v);
        // dcols [k, n] = W^T [k, c_out] . dy2 [c_out, n]
        let wmat = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        let dcols = wmat.t().dot(&dy2);
        self.col2im(&dcols, cache.in_shape, cache.out_hw)
    }
}

impl HasParams for Conv2d {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.w);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.w);
    }
    fn collect_buffers<'a>(&'a self, _out: &mut Vec<&'a Buffer>) {}
    fn collect_buffers_mut<'a>(&'a mut self, _out: &mut Vec<&'a mut Buffer>) {}
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub c: usize,
    pub eps: f32,
    pub momentum: f32,
}

pub struct BatchNorm2dCache {
    xhat: Array4<f32>,
    invstd: Array1<f32>,
}

impl BatchNorm2d {
    pub fn new(name: &str, c: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), init::ones(&[c])),
            beta: Param::new(format!("{name}.beta"), init::zeros(&[c])),
            running_mean: Buffer::new(format!("{name}.running_mean"), init::zeros(&[c])),
            running_var: Buffer::new(format!("{name}.running_var"), init::ones(&[c])),
            c,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> (Array4<f32>, Option<BatchNorm2dCache>) {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.c);
        let n = (b * h * w) as f32;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();

        if mode.uses_batch_stats() {
            let mut mean = Array1::<f32>::zeros(c);
            let mut var = Array1::<f32>::zeros(c);
            for ci in 0..c {
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for bi in 0..b {
                    for v in x
                        .index_axis(ndarray::Axis(0), bi)
                        .index_axis(ndarray::Axis(0), ci)
                        .iter()
                    {
                        s += *v as f64;
                        s2 += (*v as f64) * (*v as f64);
                    }
                }
                let m = s / n as f64;
                mean[ci] = m as f32;
                var[ci] = (s2 / n as f64 - m * m).max(0.0) as f32;
            }
            let invstd = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
            let mut xhat = x.clone();
            for ci in 0..c {
                let m = mean[ci];
                let is = invstd[ci];
                for bi in 0..b {
                    let mut plane = xhat.index_axis_mut(ndarray::Axis(0), bi);
                    let mut plane = plane.index_axis_mut(ndarray::Axis(0), ci);
                    plane.mapv_inplace(|v| (v - m) * is);
                }
            }
            let mut y = xhat.clone();
            for ci in 0..c {
                let g = gamma[ci];
                let be = beta[ci];
                for bi in 0..b {
                    let mut plane = y.index_axis_mut(ndarray::Axis(0), bi);
                    let mut plane = plane.index_axis_mut(ndarray::Axis(0), ci);
                    plane.mapv_inplace(|v| v * g + be);
                }
            }
            if mode == Mode::Train {
                // Unbiased variance feeds the running estimate.
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let rm = self
                    .running_mean
                    .value
                    .view_mut()
                    .into_dimensionality::<Ix1>()
                    .unwrap();
                let rv = self
                    .running_var
                    .value
                    .view_mut()
                    .into_dimensionality::<Ix1>()
                    .unwrap();
                let mom = self.momentum;
                ndarray::Zip::from(rm).and(&mean).for_each(|r, &m| {
                    *r = (1.0 - mom) * *r + mom * m;
                });
                ndarray::Zip::from(rv).and(&var).for_each(|r, &v| {
                    *r = (1.0 - mom) * *r + mom * v * unbias;
                });
            }
            (y, Some(BatchNorm2dCache { xhat, invstd }))
        } else {
            let rm = self
                .running_mean
                .value
                .view()
                .into_dimensionality::<Ix1>()
                .unwrap();
            let rv = self
                .running_var
                .value
                .view()
                .into_dimensionality::<Ix1>()
                .unwrap();
            let mut y = x.clone();
            for ci in 0..c {
                let m = rm[ci];
                let is = 1.0 / (rv[ci] + self.eps).sqrt();
                let g = gamma[ci];
                let be = beta[ci];
                for bi in 0..b {
                    let mut plane = y.index_axis_mut(ndarray::Axis(0), bi);
                    let mut plane = plane.index_axis_mut(ndarray::Axis(0), ci);
                    plane.mapv_inplace(|v| (v - m) * is * g + be);
                }
            }
            (y, None)
        }
    }

    pub fn backward(&mut self, dy: &Array4<f32>, cache: &BatchNorm2dCache) -> Array4<f32> {
        let (b, c, h, w) = dy.dim();
        let n = (b * h * w) as f32;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut dgamma = Array1::<f32>::zeros(c);
        let mut dbeta = Array1::<f32>::zeros(c);
        let mut sum_dxhat = Array1::<f32>::zeros(c);
        let mut sum_dxhat_xhat = Array1::<f32>::zeros(c);
        for ci in 0..c {
            let mut dg = 0.0f64;
            let mut db = 0.0f64;
            let mut sd = 0.0f64;
            let mut sdx = 0.0f64;
            for bi in 0..b {
                let dyp = dy.index_axis(ndarray::Axis(0), bi);
                let dyp = dyp.index_axis(ndarray::Axis(0), ci);
                let xp = cache.xhat.index_axis(ndarray::Axis(0), bi);
                let xp = xp.index_axis(ndarray::Axis(0), ci);
                for (dv, xv) in dyp.iter().zip(xp.iter()) {
                    let dxhat = (*dv * gamma[ci]) as f64;
                    dg += (*dv as f64) * (*xv as f64);
                    db += *dv as f64;
                    sd += dxhat;
                    sdx += dxhat * (*xv as f64);
                }
            }
            dgamma[ci] = dg as f32;
            dbeta[ci] = db as f32;
            sum_dxhat[ci] = sd as f32;
            sum_dxhat_xhat[ci] = sdx as f32;
        }
        self.gamma
            .grad
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .zip_mut_with(&dgamma, |g, &v| *g += v);
        self.beta
            .grad
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .zip_mut_with(&dbeta, |g, &v| *g += v);

        let mut dx = Array4::<f32>::zeros((b, c, h, w));
        for ci in 0..c {
            let g = gamma[ci];
            let is = cache.invstd[ci];
            let sd = sum_dxhat[ci];
            let sdx = sum_dxhat_xhat[ci];
            for bi in 0..b {
                let dyp = dy.index_axis(ndarray::Axis(0), bi);
                let dyp = dyp.index_axis(ndarray::Axis(0), ci);
                let xp = cache.xhat.index_axis(ndarray::Axis(0), bi);
                let xp = xp.index_axis(ndarray::Axis(0), ci);
                let mut dxp = dx.index_axis_mut(ndarray::Axis(0), bi);
                let mut dxp = dxp.index_axis_mut(ndarray::Axis(0), ci);
                ndarray::Zip::from(&mut dxp)
                    .and(&dyp)
                    .and(&xp)
                    .for_each(|o, &dv, &xv| {
                        let dxhat = dv * g;
                        *o = (is / n) * (n * dxhat - sd - xv * sdx);
                    });
            }
        }
        dx
    }
}

impl HasParams for BatchNorm2d {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        out.push(&self.running_mean);
        out.push(&self.running_var);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }
}

// ---------------------------------------------------------------------------
// BatchNorm1d (feature vectors)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub f: usize,
    pub eps: f32,
    pub momentum: f32,
}

pub struct BatchNorm1dCache {
    xhat: Array2<f32>,
    invstd: Array1<f32>,
}

impl BatchNorm1d {
    pub fn new(name: &str, f: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(format!("{name}.gamma"), init::ones(&[f])),
            beta: Param::new(format!("{name}.beta"), init::zeros(&[f])),
            running_mean: Buffer::new(format!("{name}.running_mean"), init::zeros(&[f])),
            running_var: Buffer::new(format!("{name}.running_var"), init::ones(&[f])),
            f,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, mode: Mode) -> (Array2<f32>, Option<BatchNorm1dCache>) {
        let (b, f) = x.dim();
        assert_eq!(f, self.f);
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        if mode.uses_batch_stats() {
            let n = b as f32;
            let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
            let mut var = Array1::<f32>::zeros(f);
            for j in 0..f {
                let mut s2 = 0.0f64;
                for i in 0..b {
                    let d = (x[[i, j]] - mean[j]) as f64;
                    s2 += d * d;
                }
                var[j] = (s2 / n as f64) as f32;
            }
            let invstd = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
            let mut xhat = Array2::<f32>::zeros((b, f));
            for i in 0..b {
                for j in 0..f {
                    xhat[[i, j]] = (x[[i, j]] - mean[j]) * invstd[j];
                }
            }
            let mut y = Array2::<f32>::zeros((b, f));
            for i in 0..b {
                for j in 0..f {
                    y[[i, j]] = xhat[[i, j]] * gamma[j] + beta[j];
                }
            }
            if mode == Mode::Train {
                let unbias = if b > 1 { n / (n - 1.0) } else { 1.0 };
                let rm = self
                    .running_mean
                    .value
                    .view_mut()
                    .into_dimensionality::<Ix1>()
                    .unwrap();
                let rv = self
                    .running_var
                    .value
                    .view_mut()
                    .into_dimensionality::<Ix1>()
                    .unwrap();
                let mom = self.momentum;
                ndarray::Zip::from(rm).and(&mean).for_each(|r, &m| {
                    *r = (1.0 - mom) * *r + mom * m;
                });
                ndarray::Zip::from(rv).and(&var).for_each(|r, &v| {
                    *r = (1.0 - mom) * *r + mom * v * unbias;
                });
            }
            (y, Some(BatchNorm1dCache { xhat, invstd }))
        } else {
            let rm = self
                .running_mean
                .value
                .view()
                .into_dimensionality::<Ix1>()
                .unwrap();
            let rv = self
                .running_var
                .value
                .view()
                .into_dimensionality::<Ix1>()
                .unwrap();
            let mut y = Array2::<f32>::zeros((b, f));
            for i in 0..b {
                for j in 0..f {
                    y[[i, j]] =
                        (x[[i, j]] - rm[j]) / (rv[j] + self.eps).sqrt() * gamma[j] + beta[j];
                }
            }
            (y, None)
        }
    }

    pub fn backward(&mut self, dy: &Array2<f32>, cache: &BatchNorm1dCache) -> Array2<f32> {
        let (b, f) = dy.dim();
        let n = b as f32;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut dgamma = Array1::<f32>::zeros(f);
        let mut dbeta = Array1::<f32>::zeros(f);
        let mut sum_dxhat = Array1::<f32>::zeros(f);
        let mut sum_dxhat_xhat = Array1::<f32>::zeros(f);
        for j in 0..f {
            let mut dg = 0.0f64;
            let mut db = 0.0f64;
            let mut sd = 0.0f64;
            let mut sdx = 0.0f64;
            for i in 0..b {
                let dxhat = (dy[[i, j]] * gamma[j]) as f64;
                dg += (dy[[i, j]] as f64) * (cache.xhat[[i, j]] as f64);
                db += dy[[i, j]] as f64;
                sd += dxhat;
                sdx += dxhat * cache.xhat[[i, j]] as f64;
            }
            dgamma[j] = dg as f32;
            dbeta[j] = db as f32;
            sum_dxhat[j] = sd as f32;
            sum_dxhat_xhat[j] = sdx as f32;
        }
        self.gamma
            .grad
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .zip_mut_with(&dgamma, |g, &v| *g += v);
        self.beta
            .grad
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .zip_mut_with(&dbeta, |g, &v| *g += v);
        let mut dx = Array2::<f32>::zeros((b, f));
        for j in 0..f {
            let g = gamma[j];
            let is = cache.invstd[j];
            for i in 0..b {
                let dxhat = dy[[i, j]] * g;
                dx[[i, j]] =
                    (is / n) * (n * dxhat - sum_dxhat[j] - cache.xhat[[i, j]] * sum_dxhat_xhat[j]);
            }
        }
        dx
    }
}

impl HasParams for BatchNorm1d {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        out.push(&self.running_mean);
        out.push(&self.running_var);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    pub in_f: usize,
    pub out_f: usize,
}

pub struct LinearCache {
    x: Array2<f32>,
}

impl Linear {
    pub fn new(name: &str, in_f: usize, out_f: usize, rng: &mut ChaCha12Rng) -> Self {
        Linear {
            w: Param::new(format!("{name}.w"), init::he_normal(rng, &[out_f, in_f], in_f)),
            b: Param::new(format!("{name}.b"), init::zeros(&[out_f])),
            in_f,
            out_f,
        }
    }

    pub fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, LinearCache) {
        let w = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.b.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        for mut row in y.rows_mut() {
            row += &b;
        }
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&mut self, dy: &Array2<f32>, cache: &LinearCache) -> Array2<f32> {
        let dw = dy.t().dot(&cache.x);
        self.w
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .zip_mut_with(&dw, |g, &v| *g += v);
        let db = dy.sum_axis(ndarray::Axis(0));
        self.b
            .grad
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .zip_mut_with(&db, |g, &v| *g += v);
        let w = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        dy.dot(&w)
    }
}

impl HasParams for Linear {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.w);
        out.push(&self.b);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
    fn collect_buffers<'a>(&'a self, _out: &mut Vec<&'a Buffer>) {}
    fn collect_buffers_mut<'a>(&'a mut self, _out: &mut Vec<&'a mut Buffer>) {}
}

// ---------------------------------------------------------------------------
// Parameter-free pieces
// ---------------------------------------------------------------------------

/// ReLU over any dimensionality; caches the output mask implicitly via the
/// returned activation.
pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward<D: ndarray::Dimension>(
    dy: &ndarray::Array<f32, D>,
    y: &ndarray::Array<f32, D>,
) -> ndarray::Array<f32, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// 2x2 max pooling, stride 2.
pub struct MaxPool2Cache {
    argmax: Vec<u32>,
    in_shape: (usize, usize, usize, usize),
}

pub fn maxpool2(x: &Array4<f32>) -> (Array4<f32>, MaxPool2Cache) {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::<f32>::zeros((b, c, oh, ow));
    let mut argmax = vec![0u32; b * c * oh * ow];
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    for bi in 0..b {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            let oplane = (bi * c + ci) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (oy * 2 + dy) * w + ox * 2 + dx;
                            let v = xs[plane + idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    ys[oplane + oy * ow + ox] = best;
                    argmax[oplane + oy * ow + ox] = best_idx as u32;
                }
            }
        }
    }
    (
        y,
        MaxPool2Cache {
            argmax,
            in_shape: (b, c, h, w),
        },
    )
}

pub fn maxpool2_backward(dy: &Array4<f32>, cache: &MaxPool2Cache) -> Array4<f32> {
    let (b, c, h, w) = cache.in_shape;
    let (_, _, oh, ow) = dy.dim();
    let mut dx = Array4::<f32>::zeros((b, c, h, w));
    let ds = dy.as_slice().unwrap();
    let xs = dx.as_slice_mut().unwrap();
    for bi in 0..b {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            let oplane = (bi * c + ci) * oh * ow;
            for oi in 0..oh * ow {
                xs[plane + cache.argmax[oplane + oi] as usize] += ds[oplane + oi];
            }
        }
    }
    dx
}

/// Global average pool [b, c, h, w] -> [b, c].
pub fn global_avg_pool(x: &Array4<f32>) -> (Array2<f32>, (usize, usize)) {
    let (b, c, h, w) = x.dim();
    let mut y = Array2::<f32>::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            let view = x.index_axis(ndarray::Axis(0), bi);
            let view = view.index_axis(ndarray::Axis(0), ci);
            y[[bi, ci]] = view.sum() / (h * w) as f32;
        }
    }
    (y, (h, w))
}

pub fn global_avg_pool_backward(dy: &Array2<f32>, hw: (usize, usize)) -> Array4<f32> {
    let (b, c) = dy.dim();
    let (h, w) = hw;
    let scale = 1.0 / (h * w) as f32;
    let mut dx = Array4::<f32>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            let g = dy[[bi, ci]] * scale;
            let mut view = dx.index_axis_mut(ndarray::Axis(0), bi);
            let mut view = view.index_axis_mut(ndarray::Axis(0), ci);
            view.fill(g);
        }
    }
    dx
}

/// Flatten [b, c, h, w] -> [b, c*h*w].
pub fn flatten(x: &Array4<f32>) -> Array2<f32> {
    let (b, c, h, w) = x.dim();
    x.view()
        .into_shape_with_order((b, c * h * w))
        .unwrap()
        .to_owned()
}

pub fn unflatten(dy: &Array2<f32>, shape: (usize, usize, usize, usize)) -> Array4<f32> {
    dy.view().into_shape_with_order(shape).unwrap().to_owned()
}

/// Convert an owned dynamic-dim gradient seed to 2-D (head outputs).
pub fn to2(x: ArrayD<f32>) -> Array2<f32> {
    x.into_dimensionality::<Ix2>().unwrap()
}

/// Convert to 4-D (image tensors).
pub fn to4(x: ArrayD<f32>) -> Array4<f32> {
    x.into_dimensionality::<Ix4>().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use approx::assert_relative_eq;
    use ndarray::{Array2, Array4};

    fn finite_diff_input<F>(x: &Array4<f32>, f: &mut F, eps: f32) -> Array4<f32>
    where
        F: FnMut(&Array4<f32>) -> f32,
    {
        let mut g = Array4::<f32>::zeros(x.dim());
        let mut xp = x.clone();
        for idx in ndarray::indices(x.dim()) {
            let orig = xp[idx.clone()];
            xp[idx.clone()] = orig + eps;
            let fp = f(&xp);
            xp[idx.clone()] = orig - eps;
            let fm = f(&xp);
            xp[idx.clone()] = orig;
            g[idx] = (fp - fm) / (2.0 * eps);
        }
        g
    }

    /// Scalar probe: sum of elementwise product with fixed weights, so the
    /// output gradient seed is the weight tensor itself.
    fn probe4(y: &Array4<f32>, seed: &Array4<f32>) -> f32 {
        (y * seed).sum()
    }

    #[test]
    fn conv2d_matches_finite_differences() {
        let mut rng = seeding::rng_for(11, &[seeding::stream::INIT]);
        let conv = Conv2d::new("c", 2, 3, 3, 1, 1, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |(b, c, i, j)| {
            ((b + 1) as f32 * 0.3 - (c as f32) * 0.2 + (i * 5 + j) as f32 * 0.01).sin()
        });
        let seed = Array4::from_shape_fn((2, 3, 5, 5), |(b, c, i, j)| {
            ((b * 7 + c * 3 + i + j) as f32 * 0.17).cos()
        });
        let (y, cache) = conv.forward(&x);
        assert_eq!(y.dim(), (2, 3, 5, 5));
        let mut conv_mut = conv.clone();
        let dx = conv_mut.backward(&seed, &cache);
        let mut f = |xi: &Array4<f32>| {
            let (yo, _) = conv.forward(xi);
            probe4(&yo, &seed)
        };
        let dx_fd = finite_diff_input(&x, &mut f, 1e-2);
        for (a, b) in dx.iter().zip(dx_fd.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 2e-2, epsilon = 2e-3);
        }
        // weight gradient check on a few entries
        let w0 = conv.w.value.clone();
        for &(i, j) in &[(0usize, 0usize), (1, 5), (2, 17)] {
            let eps = 1e-2;
            let mut cp = conv.clone();
            cp.w.value[[i, j]] = w0[[i, j]] + eps;
            let (yp, _) = cp.forward(&x);
            cp.w.value[[i, j]] = w0[[i, j]] - eps;
            let (ym, _) = cp.forward(&x);
            let fd = (probe4(&yp, &seed) - probe4(&ym, &seed)) / (2.0 * eps);
            assert_relative_eq!(conv_mut.w.grad[[i, j]], fd, max_relative = 1e-2, epsilon = 1e-3);
        }
    }

    #[test]
    fn conv2d_stride2_shapes() {
        let mut rng = seeding::rng_for(3, &[seeding::stream::INIT]);
        let conv = Conv2d::new("c", 3, 8, 3, 2, 1, &mut rng);
        let x = Array4::<f32>::zeros((4, 3, 32, 32));
        let (y, _) = conv.forward(&x);
        assert_eq!(y.dim(), (4, 8, 16, 16));
    }

    #[test]
    fn batchnorm2d_normalizes_and_matches_fd() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let x = Array4::from_shape_fn((3, 2, 4, 4), |(b, c, i, j)| {
            (b as f32) * 1.5 + (c as f32) * 0.7 + ((i * 4 + j) as f32 * 0.31).sin()
        });
        let (y, cache) = bn.forward(&x, Mode::Train);
        // per-channel mean ~0, var ~1
        for ci in 0..2 {
            let mut s = 0.0;
            let mut s2 = 0.0;
            let mut n = 0.0;
            for bi in 0..3 {
                let v = y.index_axis(ndarray::Axis(0), bi);
                let v = v.index_axis(ndarray::Axis(0), ci);
                for e in v.iter() {
                    s += e;
                    s2 += e * e;
                    n += 1.0;
                }
            }
            assert_relative_eq!(s / n, 0.0, epsilon = 1e-4);
            assert_relative_eq!(s2 / n, 1.0, epsilon = 1e-2);
        }
        let seed = Array4::from_shape_fn((3, 2, 4, 4), |(b, c, i, j)| {
            ((b * 11 + c * 5 + i * 2 + j) as f32 * 0.23).cos()
        });
        let dx = bn.backward(&seed, cache.as_ref().unwrap());
        let mut fresh = BatchNorm2d::new("bn", 2);
        let mut f = |xi: &Array4<f32>| {
            let (yo, _) = fresh.forward(xi, Mode::TrainFrozenStats);
            probe4(&yo, &seed)
        };
        let dx_fd = finite_diff_input(&x, &mut f, 1e-3);
        for (a, b) in dx.iter().zip(dx_fd.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 2e-2, epsilon = 2e-3);
        }
    }

    #[test]
    fn frozen_stats_mode_leaves_running_stats() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let before_mean = bn.running_mean.value.clone();
        let before_var = bn.running_var.value.clone();
        let x = Array4::from_shape_fn((2, 2, 3, 3), |(b, c, i, j)| {
            (b + c + i + j) as f32 * 0.4 + 1.0
        });
        let _ = bn.forward(&x, Mode::TrainFrozenStats);
        assert_eq!(bn.running_mean.value, before_mean);
        assert_eq!(bn.running_var.value, before_var);
        let _ = bn.forward(&x, Mode::Train);
        assert_ne!(bn.running_mean.value, before_mean);
    }

    #[test]
    fn linear_matches_finite_differences() {
        let mut rng = seeding::rng_for(5, &[seeding::stream::INIT]);
        let lin = Linear::new("l", 4, 3, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 4 + j) as f32 * 0.37).sin());
        let seed = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f32 * 0.51).cos());
        let (_, cache) = lin.forward(&x);
        let mut lm = lin.clone();
        let dx = lm.backward(&seed, &cache);
        let eps = 1e-3;
        for i in 0..5 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += eps;
                let (yp, _) = lin.forward(&xp);
                xp[[i, j]] -= 2.0 * eps;
                let (ym, _) = lin.forward(&xp);
                let fd = ((&yp * &seed).sum() - (&ym * &seed).sum()) / (2.0 * eps);
                assert_relative_eq!(dx[[i, j]], fd, max_relative = 1e-2, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut x = Array4::<f32>::zeros((1, 1, 4, 4));
        x[[0, 0, 1, 1]] = 5.0;
        x[[0, 0, 2, 3]] = 7.0;
        let (y, cache) = maxpool2(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 7.0);
        let mut dy = Array4::<f32>::zeros((1, 1, 2, 2));
        dy[[0, 0, 0, 0]] = 1.0;
        dy[[0, 0, 1, 1]] = 2.0;
        let dx = maxpool2_backward(&dy, &cache);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 0, 2, 3]], 2.0);
        assert_eq!(dx.sum(), 3.0);
    }

    #[test]
    fn global_pool_roundtrip() {
        let x = Array4::from_shape_fn((2, 3, 4, 4), |(b, c, i, j)| (b + c + i + j) as f32);
        let (y, hw) = global_avg_pool(&x);
        assert_eq!(y.dim(), (2, 3));
        let dy = Array2::from_elem((2, 3), 16.0);
        let dx = global_avg_pool_backward(&dy, hw);
        assert_relative_eq!(dx[[0, 0, 0, 0]], 1.0);
    }
}
