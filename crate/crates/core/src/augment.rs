//! Stochastic two-view augmentation.
//!
//! The default policy is the usual SSL recipe: random resized crop,
//! horizontal flip, color jitter, random grayscale, and (at 224px only)
//! gaussian blur. Every transform carries its own probability so the
//! identity policy (all probabilities zero) returns the input unchanged.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CropCfg {
    pub p: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JitterCfg {
    pub p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlurCfg {
    pub p: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugmentPolicy {
    pub crop: CropCfg,
    pub hflip_p: f64,
    pub jitter: JitterCfg,
    pub grayscale_p: f64,
    pub blur: BlurCfg,
}

impl AugmentPolicy {
    /// Standard recipe for the given input resolution; blur only at 224.
    pub fn default_for_resolution(resolution: usize) -> Self {
        AugmentPolicy {
            crop: CropCfg {
                p: 1.0,
                scale_min: 0.2,
                scale_max: 1.0,
            },
            hflip_p: 0.5,
            jitter: JitterCfg {
                p: 0.8,
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
                hue: 0.1,
            },
            grayscale_p: 0.2,
            blur: BlurCfg {
                p: if resolution >= 224 { 0.5 } else { 0.0 },
                sigma_min: 0.1,
                sigma_max: 2.0,
            },
        }
    }

    /// All probabilities zero: augment_once is the identity.
    pub fn identity() -> Self {
        AugmentPolicy {
            crop: CropCfg {
                p: 0.0,
                scale_min: 1.0,
                scale_max: 1.0,
            },
            hflip_p: 0.0,
            jitter: JitterCfg {
                p: 0.0,
                brightness: 0.0,
                contrast: 0.0,
                saturation: 0.0,
                hue: 0.0,
            },
            grayscale_p: 0.0,
            blur: BlurCfg {
                p: 0.0,
                sigma_min: 0.1,
                sigma_max: 2.0,
            },
        }
    }
}

/// Two independently augmented views of one source sample.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub view1: Array3<f32>,
    pub view2: Array3<f32>,
}

pub fn augment_pair(img: &Array3<f32>, policy: &AugmentPolicy, rng: &mut ChaCha12Rng) -> ViewPair {
    ViewPair {
        view1: augment_once(img, policy, rng),
        view2: augment_once(img, policy, rng),
    }
}

pub fn augment_once(img: &Array3<f32>, policy: &AugmentPolicy, rng: &mut ChaCha12Rng) -> Array3<f32> {
    let mut out = img.clone();
    if rng.random::<f64>() < policy.crop.p {
        out = random_resized_crop(&out, policy.crop.scale_min, policy.crop.scale_max, rng);
    }
    if rng.random::<f64>() < policy.hflip_p {
        out = hflip(&out);
    }
    if rng.random::<f64>() < policy.jitter.p {
        out = color_jitter(&out, &policy.jitter, rng);
    }
    if rng.random::<f64>() < policy.grayscale_p {
        out = grayscale(&out);
    }
    if rng.random::<f64>() < policy.blur.p {
        let sigma = rng.random_range(policy.blur.sigma_min..=policy.blur.sigma_max);
        out = gaussian_blur(&out, sigma);
    }
    out
}

fn hflip(img: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| img[[ci, y, w - 1 - x]])
}

fn luma(img: &Array3<f32>, y: usize, x: usize) -> f32 {
    0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
}

fn grayscale(img: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = img.dim();
    let mut out = Array3::<f32>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let g = luma(img, y, x);
            for ci in 0..c {
                out[[ci, y, x]] = g;
            }
        }
    }
    out
}

fn color_jitter(img: &Array3<f32>, cfg: &JitterCfg, rng: &mut ChaCha12Rng) -> Array3<f32> {
    let mut out = img.clone();
    let (_, h, w) = img.dim();

    if cfg.brightness > 0.0 {
        let f = rng.random_range((1.0 - cfg.brightness).max(0.0)..=1.0 + cfg.brightness) as f32;
        out.mapv_inplace(|v| v * f);
    }
    if cfg.contrast > 0.0 {
        let f = rng.random_range((1.0 - cfg.contrast).max(0.0)..=1.0 + cfg.contrast) as f32;
        let mut mean = 0.0f32;
        for y in 0..h {
            for x in 0..w {
                mean += luma(&out, y, x);
            }
        }
        mean /= (h * w) as f32;
        out.mapv_inplace(|v| (v - mean) * f + mean);
    }
    if cfg.saturation > 0.0 {
        let f = rng.random_range((1.0 - cfg.saturation).max(0.0)..=1.0 + cfg.saturation) as f32;
        for y in 0..h {
            for x in 0..w {
                let g = luma(&out, y, x);
                for ci in 0..3 {
                    out[[ci, y, x]] = (out[[ci, y, x]] - g) * f + g;
                }
            }
        }
    }
    if cfg.hue > 0.0 {
        // Hue rotation in YIQ space.
        let shift = rng.random_range(-cfg.hue..=cfg.hue);
        let theta = (2.0 * std::f64::consts::PI * shift) as f32;
        let (s, c) = theta.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let r = out[[0, y, x]];
                let g = out[[1, y, x]];
                let b = out[[2, y, x]];
                let yy = 0.299 * r + 0.587 * g + 0.114 * b;
                let i = 0.596 * r - 0.274 * g - 0.322 * b;
                let q = 0.211 * r - 0.523 * g + 0.312 * b;
                let i2 = c * i - s * q;
                let q2 = s * i + c * q;
                out[[0, y, x]] = yy + 0.956 * i2 + 0.621 * q2;
                out[[1, y, x]] = yy - 0.272 * i2 - 0.647 * q2;
                out[[2, y, x]] = yy - 1.106 * i2 + 1.703 * q2;
            }
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    out
}

fn random_resized_crop(
    img: &Array3<f32>,
    scale_min: f64,
    scale_max: f64,
    rng: &mut ChaCha12Rng,
) -> Array3<f32> {
    let (_, h, w) = img.dim();
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target = area * rng.random_range(scale_min..=scale_max);
        let log_ratio = rng.random_range((0.75f64).ln()..=(4.0f64 / 3.0).ln());
        let ratio = log_ratio.exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let x0 = rng.random_range(0..=(w - cw));
            let y0 = rng.random_range(0..=(h - ch));
            return resize_bilinear_region(img, y0, x0, ch, cw, h, w);
        }
    }
    img.clone()
}

/// Bilinear resize of the region (y0, x0, ch, cw) to (out_h, out_w).
fn resize_bilinear_region(
    img: &Array3<f32>,
    y0: usize,
    x0: usize,
    ch: usize,
    cw: usize,
    out_h: usize,
    out_w: usize,
) -> Array3<f32> {
    let (c, _, _) = img.dim();
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    let sy = ch as f32 / out_h as f32;
    let sx = cw as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f32);
        let iy = fy.floor() as usize;
        let iy1 = (iy + 1).min(ch - 1);
        let wy = fy - iy as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f32);
            let ix = fx.floor() as usize;
            let ix1 = (ix + 1).min(cw - 1);
            let wx = fx - ix as f32;
            for ci in 0..c {
                let a = img[[ci, y0 + iy, x0 + ix]];
                let b = img[[ci, y0 + iy, x0 + ix1]];
                let d = img[[ci, y0 + iy1, x0 + ix]];
                let e = img[[ci, y0 + iy1, x0 + ix1]];
                out[[ci, oy, ox]] =
                    a * (1.0 - wy) * (1.0 - wx) + b * (1.0 - wy) * wx + d * wy * (1.0 - wx) + e * wy * wx;
            }
        }
    }
    out
}

/// Full-image bilinear resize (dataset ingestion).
pub fn resize_bilinear(img: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (_, h, w) = img.dim();
    resize_bilinear_region(img, 0, 0, h, w, out_h, out_w)
}

fn gaussian_blur(img: &Array3<f32>, sigma: f64) -> Array3<f32> {
    let (c, h, w) = img.dim();
    let radius = ((sigma * 3.0).ceil() as usize).max(1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let mut sum = 0.0f64;
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        let v = (-d * d / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    // separable: horizontal then vertical, clamped borders
    let mut tmp = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, kv) in kernel.iter().enumerate() {
                    let sxi = (x as isize + k as isize - radius as isize).clamp(0, w as isize - 1);
                    acc += kv * img[[ci, y, sxi as usize]] as f64;
                }
                tmp[[ci, y, x]] = acc as f32;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, kv) in kernel.iter().enumerate() {
                    let syi = (y as isize + k as isize - radius as isize).clamp(0, h as isize - 1);
                    acc += kv * tmp[[ci, syi as usize, x]] as f64;
                }
                out[[ci, y, x]] = acc as f32;
            }
        }
    }
    out
}
