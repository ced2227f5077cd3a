//! Image quality metrics, Otsu thresholding and maximum intensity projection.
//!
//! All functions take plain images or volumes (no batch or channel axes).

use serde::{Deserialize, Serialize};

use crate::error::{cfg_err, dim_err, Result};
use crate::tensor::{for_each_index, strides_of, Tensor};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimConfig {
    pub scales: usize,
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            scales: 5,
            weights: MS_SSIM_WEIGHTS.to_vec(),
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl MsSsimConfig {
    /// Single-scale configuration, equivalent to plain SSIM.
    pub fn single_scale() -> Self {
        MsSsimConfig {
            scales: 1,
            weights: vec![1.0],
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(cfg_err!("SSIM window must be odd, got {}", self.window));
        }
        if self.scales == 0 || self.weights.len() < self.scales {
            return Err(cfg_err!(
                "{} scales need as many weights, got {}",
                self.scales,
                self.weights.len()
            ));
        }
        if !(self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(cfg_err!("SSIM sigma and dynamic range must be positive"));
        }
        Ok(())
    }

    /// Scales that fit `extents` (the coarsest must still hold a window),
    /// with their renormalized weights.
    pub fn effective_weights(&self, extents: &[usize]) -> Vec<f64> {
        let smallest = extents.iter().copied().min().unwrap_or(0);
        let mut m = 0;
        while m < self.scales && smallest >> m >= self.window {
            m += 1;
        }
        let w = &self.weights[..m.max(1)];
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    fn gaussian(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - half).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    if !(peak > 0.0) {
        return Err(cfg_err!("PSNR peak must be positive, got {peak}"));
    }
    let mse = a.sub(b)?.data().iter().map(|d| d * d).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Valid-mode separable correlation with `kernel` along every axis.
fn filter_valid(data: &[f64], shape: &[usize], kernel: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut cur = data.to_vec();
    let mut shape = shape.to_vec();
    let k = kernel.len();
    for d in 0..shape.len() {
        let n = shape[d];
        let out_n = n + 1 - k;
        let inner: usize = shape[d + 1..].iter().product();
        let outer: usize = shape[..d].iter().product();
        let mut next = vec![0.0; outer * out_n * inner];
        for o in 0..outer {
            for i in 0..out_n {
                let dst = (o * out_n + i) * inner;
                for (t, &w) in kernel.iter().enumerate() {
                    let src = (o * n + i + t) * inner;
                    for j in 0..inner {
                        next[dst + j] += w * cur[src + j];
                    }
                }
            }
        }
        cur = next;
        shape[d] = out_n;
    }
    (cur, shape)
}

/// Mean luminance and contrast-structure terms over all valid windows.
fn ssim_terms(a: &Tensor, b: &Tensor, cfg: &MsSsimConfig) -> Result<(f64, f64)> {
    a.check_same_shape(b)?;
    if let Some(&e) = a.shape().iter().find(|&&e| e < cfg.window) {
        return Err(dim_err!(
            "image extent {e} is smaller than the {}-wide SSIM window",
            cfg.window
        ));
    }
    let g = cfg.gaussian();
    let shape = a.shape();
    let (mu_a, _) = filter_valid(a.data(), shape, &g);
    let (mu_b, _) = filter_valid(b.data(), shape, &g);
    let sq = |x: &Tensor, y: &Tensor| -> Vec<f64> { x.data().iter().zip(y.data()).map(|(u, v)| u * v).collect() };
    let (e_aa, _) = filter_valid(&sq(a, a), shape, &g);
    let (e_bb, _) = filter_valid(&sq(b, b), shape, &g);
    let (e_ab, _) = filter_valid(&sq(a, b), shape, &g);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let n = mu_a.len() as f64;
    let (mut full, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * cov + c2) / (va + vb + c2);
        full += l * c;
        cs += c;
    }
    Ok((full / n, cs / n))
}

pub fn ssim(a: &Tensor, b: &Tensor, cfg: &MsSsimConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(ssim_terms(a, b, cfg)?.0)
}

/// Averages `2^d` blocks; odd trailing cells are dropped.
pub fn downsample2(t: &Tensor) -> Result<Tensor> {
    let out: Vec<usize> = t.shape().iter().map(|&e| e / 2).collect();
    if out.contains(&0) {
        return Err(dim_err!("cannot halve extents {:?}", t.shape()));
    }
    let strides = t.strides();
    let corners = 1usize << t.ndim();
    let mut data = Vec::with_capacity(out.iter().product());
    for_each_index(&out, |idx, _| {
        let mut sum = 0.0;
        for c in 0..corners {
            let flat: usize = idx
                .iter()
                .enumerate()
                .map(|(d, &i)| (2 * i + ((c >> d) & 1)) * strides[d])
                .sum();
            sum += t.data()[flat];
        }
        data.push(sum / corners as f64);
    });
    Tensor::from_vec(&out, data)
}

/// Multi-scale SSIM: contrast-structure terms at every scale and luminance at
/// the coarsest, combined as a weighted geometric product. Scales that would
/// shrink below the window are dropped and the remaining weights
/// renormalized. Negative terms are clamped to zero before exponentiation.
pub fn ms_ssim(a: &Tensor, b: &Tensor, cfg: &MsSsimConfig) -> Result<f64> {
    cfg.validate()?;
    a.check_same_shape(b)?;
    let weights = cfg.effective_weights(a.shape());
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut score = 1.0;
    for (j, &w) in weights.iter().enumerate() {
        let (full, cs) = ssim_terms(&x, &y, cfg)?;
        if j + 1 == weights.len() {
            score *= full.max(0.0).powf(w);
        } else {
            score *= cs.max(0.0).powf(w);
            x = downsample2(&x)?;
            y = downsample2(&y)?;
        }
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Otsu {
    /// Values `>= threshold` are foreground.
    pub threshold: f64,
    /// Last histogram bin of the background class.
    pub bin: usize,
    pub between_variance: f64,
}

impl Otsu {
    pub fn mask(&self, image: &Tensor) -> Tensor {
        image.map(|v| (v >= self.threshold) as u8 as f64)
    }

    /// Foreground fraction of `image`.
    pub fn occupancy(&self, image: &Tensor) -> f64 {
        self.mask(image).mean()
    }
}

/// Histogram of `bins` equal-width bins over `[min, max]`.
pub fn histogram(image: &Tensor, bins: usize) -> (Vec<usize>, f64, f64) {
    let (lo, hi) = (image.min(), image.max());
    let width = (hi - lo) / bins as f64;
    let mut h = vec![0usize; bins];
    for &v in image.data() {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        h[k] += 1;
    }
    (h, lo, width)
}

/// Between-class variance `w0 w1 (m0 - m1)^2` of splitting after bin `t`,
/// using bin centers as class values.
pub fn between_class_variance(hist: &[usize], t: usize) -> f64 {
    let total: usize = hist.iter().sum();
    let (mut n0, mut s0) = (0usize, 0.0);
    let (mut n1, mut s1) = (0usize, 0.0);
    for (k, &c) in hist.iter().enumerate() {
        let center = k as f64 + 0.5;
        if k <= t {
            n0 += c;
            s0 += c as f64 * center;
        } else {
            n1 += c;
            s1 += c as f64 * center;
        }
    }
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let (w0, w1) = (n0 as f64 / total as f64, n1 as f64 / total as f64);
    let d = s0 / n0 as f64 - s1 / n1 as f64;
    w0 * w1 * d * d
}

pub fn otsu_threshold(image: &Tensor, bins: usize) -> Result<Otsu> {
    if bins < 2 {
        return Err(cfg_err!("Otsu needs at least two bins, got {bins}"));
    }
    if !(image.max() > image.min()) {
        return Err(cfg_err!("constant image has no separable classes"));
    }
    let (hist, lo, width) = histogram(image, bins);
    let mut best = (0, f64::NEG_INFINITY);
    for t in 0..bins - 1 {
        let v = between_class_variance(&hist, t);
        if v > best.1 {
            best = (t, v);
        }
    }
    Ok(Otsu {
        threshold: lo + (best.0 + 1) as f64 * width,
        bin: best.0,
        between_variance: best.1,
    })
}

/// Maximum intensity projection along `axis`.
pub fn mip(volume: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= volume.ndim() || volume.ndim() < 2 {
        return Err(dim_err!(
            "cannot project a {:?} volume along axis {axis}",
            volume.shape()
        ));
    }
    let shape = volume.shape();
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    let (n, s) = (shape[axis], strides_of(shape)[axis]);
    let outer: usize = shape[..axis].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for j in 0..s {
            let base = o * n * s + j;
            data.push((0..n).map(|k| volume.data()[base + k * s]).fold(f64::NEG_INFINITY, f64::max));
        }
    }
    Tensor::from_vec(&out_shape, data)
}

#[cfg(test)]
mod tests;
