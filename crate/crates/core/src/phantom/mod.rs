//! Procedural initial-pressure phantoms and rotation/crop augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{cfg_err, dim_err, Result};
use crate::tensor::{box_filter, for_each_index, Tensor};

/// Seed for the `index`-th draw of `purpose` under `global_seed`; stable
/// across platforms and independent of generation order.
pub fn derive_seed(global_seed: u64, purpose: &str, index: u64) -> u64 {
    // FNV-1a over the purpose tag, then a splitmix64 finalizer per field.
    let mut tag = 0xcbf2_9ce4_8422_2325u64;
    for b in purpose.bytes() {
        tag ^= b as u64;
        tag = tag.wrapping_mul(0x0100_0000_01b3);
    }
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    mix(mix(mix(global_seed) ^ tag) ^ index)
}

pub fn rng_for(global_seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global_seed, purpose, index))
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(cfg_err!("{name} range [{lo}, {hi}] is empty"));
    }
    Ok(())
}

fn check_extents(extents: &[usize]) -> Result<()> {
    if !(2..=3).contains(&extents.len()) || extents.contains(&0) {
        return Err(cfg_err!("phantom extents must be 2-D or 3-D and positive, got {extents:?}"));
    }
    Ok(())
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpherePhantomSpec {
    pub extents: Vec<usize>,
    pub count: (usize, usize),
    pub radius: (f64, f64),
    pub magnitude: (f64, f64),
    pub smoothing: usize,
}

impl SpherePhantomSpec {
    /// 25-50 spheres, radius 5-10 cells, magnitude 1-5, 5-wide smoothing.
    pub fn reference(extents: &[usize]) -> Self {
        SpherePhantomSpec {
            extents: extents.to_vec(),
            count: (25, 50),
            radius: (5.0, 10.0),
            magnitude: (1.0, 5.0),
            smoothing: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_extents(&self.extents)?;
        if self.count.0 > self.count.1 {
            return Err(cfg_err!("sphere count range {:?} is empty", self.count));
        }
        check_range("radius", self.radius)?;
        check_range("magnitude", self.magnitude)?;
        let half = *self.extents.iter().min().expect("checked") as f64 / 2.0;
        if !(self.radius.0 > 0.0 && self.radius.1 <= half) {
            return Err(cfg_err!(
                "radii {:?} must be positive and at most half the smallest extent",
                self.radius
            ));
        }
        if self.magnitude.0 <= 0.0 {
            return Err(cfg_err!("magnitudes must be positive"));
        }
        if self.smoothing % 2 == 0 {
            return Err(cfg_err!("smoothing width must be odd, got {}", self.smoothing));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sphere {
    pub center: Vec<f64>,
    pub radius: f64,
    pub magnitude: f64,
}

pub fn draw_spheres(spec: &SpherePhantomSpec, rng: &mut impl Rng) -> Result<Vec<Sphere>> {
    spec.validate()?;
    let n = rng.gen_range(spec.count.0..=spec.count.1);
    Ok((0..n)
        .map(|_| Sphere {
            center: spec.extents.iter().map(|&e| rng.gen_range(0.0..e as f64)).collect(),
            radius: uniform(rng, spec.radius),
            magnitude: uniform(rng, spec.magnitude),
        })
        .collect())
}

/// Filled spheres (discs in 2-D) combined by maximum.
pub fn rasterize_spheres(extents: &[usize], spheres: &[Sphere]) -> Tensor {
    let mut out = Tensor::zeros(extents);
    for s in spheres {
        let lo: Vec<usize> = s.center.iter().map(|&c| (c - s.radius).floor().max(0.0) as usize).collect();
        let hi: Vec<usize> = s
            .center
            .iter()
            .zip(extents)
            .map(|(&c, &e)| ((c + s.radius).ceil() as usize + 1).min(e))
            .collect();
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            continue;
        }
        let window: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        let r2 = s.radius * s.radius;
        for_each_index(&window, |w, _| {
            let idx: Vec<usize> = w.iter().zip(&lo).map(|(a, b)| a + b).collect();
            let d2: f64 = idx.iter().zip(&s.center).map(|(&i, &c)| (i as f64 - c).powi(2)).sum();
            if d2 <= r2 {
                let f = out.flat_index(&idx);
                let v = &mut out.data_mut()[f];
                *v = v.max(s.magnitude);
            }
        });
    }
    out
}

/// Divides by the maximum; all-zero input is returned unchanged.
pub fn normalize_max(t: Tensor) -> Tensor {
    let m = t.max();
    if m > 0.0 {
        t.map(|v| v / m)
    } else {
        t
    }
}

pub fn gen_spheres(spec: &SpherePhantomSpec, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spheres = draw_spheres(spec, &mut rng)?;
    let raw = rasterize_spheres(&spec.extents, &spheres);
    Ok(normalize_max(box_filter(&raw, spec.smoothing)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselPhantomSpec {
    pub extents: Vec<usize>,
    /// Root vessels per phantom.
    pub branches: (usize, usize),
    pub radius: (f64, f64),
    /// Walk steps per segment.
    pub length: (usize, usize),
    /// Cells advanced per walk step.
    pub step: f64,
    /// Standard deviation of the per-step heading change (radians).
    pub tortuosity: f64,
    /// Chance per step of spawning a thinner child branch.
    pub branch_probability: f64,
    pub max_depth: usize,
    pub magnitude: (f64, f64),
    pub smoothing: usize,
}

impl VesselPhantomSpec {
    pub fn default_for(extents: &[usize]) -> Self {
        VesselPhantomSpec {
            extents: extents.to_vec(),
            branches: (1, 2),
            radius: (1.0, 1.4),
            length: (15, 35),
            step: 1.0,
            tortuosity: 0.25,
            branch_probability: 0.03,
            max_depth: 2,
            magnitude: (0.5, 1.0),
            smoothing: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_extents(&self.extents)?;
        if self.branches.0 > self.branches.1 || self.length.0 > self.length.1 {
            return Err(cfg_err!("vessel branch or length range is empty"));
        }
        check_range("radius", self.radius)?;
        check_range("magnitude", self.magnitude)?;
        if self.radius.0 < 1.0 {
            return Err(cfg_err!("tube radius must be at least one cell, got {}", self.radius.0));
        }
        if !(self.step > 0.0 && self.tortuosity >= 0.0) || !(0.0..=1.0).contains(&self.branch_probability) {
            return Err(cfg_err!("vessel walk parameters out of range"));
        }
        if self.smoothing % 2 == 0 {
            return Err(cfg_err!("smoothing width must be odd, got {}", self.smoothing));
        }
        Ok(())
    }
}

fn random_direction(rng: &mut impl Rng, dims: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dims).map(|_| n.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn gen_vessels(spec: &VesselPhantomSpec, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = spec.extents.len();
    let turn = Normal::new(0.0, spec.tortuosity.max(1e-12)).expect("finite std");
    let mut balls = Vec::new();
    // (start, heading, radius, magnitude, depth)
    let mut pending = Vec::new();
    for _ in 0..rng.gen_range(spec.branches.0..=spec.branches.1) {
        let start: Vec<f64> = spec.extents.iter().map(|&e| rng.gen_range(0.2..0.8) * e as f64).collect();
        let dir = random_direction(&mut rng, dims);
        pending.push((start, dir, uniform(&mut rng, spec.radius), uniform(&mut rng, spec.magnitude), 0));
    }
    while let Some((mut pos, mut dir, radius, magnitude, depth)) = pending.pop() {
        let steps = rng.gen_range(spec.length.0..=spec.length.1);
        for _ in 0..steps {
            balls.push(Sphere {
                center: pos.clone(),
                radius,
                magnitude,
            });
            let kick: Vec<f64> = (0..dims).map(|_| turn.sample(&mut rng)).collect();
            let mut next: Vec<f64> = dir.iter().zip(&kick).map(|(d, k)| d + k).collect();
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            next.iter_mut().for_each(|x| *x /= norm);
            dir = next;
            pos.iter_mut().zip(&dir).for_each(|(p, d)| *p += spec.step * d);
            if pos.iter().zip(&spec.extents).any(|(&p, &e)| p < 0.0 || p >= e as f64) {
                break;
            }
            if depth < spec.max_depth && rng.gen_bool(spec.branch_probability) {
                let child = random_direction(&mut rng, dims);
                pending.push((pos.clone(), child, (radius * 0.75).max(1.0), magnitude, depth + 1));
            }
        }
    }
    let raw = rasterize_spheres(&spec.extents, &balls);
    Ok(normalize_max(box_filter(&raw, spec.smoothing)?))
}

/// Rotation matrix; in 3-D `angles[d]` turns the plane of the two axes other
/// than `d`, applied for d = 0, 1, 2 in order. Quarter turns are exact.
fn rotation(dims: usize, angles_deg: &[f64]) -> Vec<Vec<f64>> {
    let cos_sin = |deg: f64| {
        let q = deg / 90.0;
        if (q - q.round()).abs() < 1e-12 {
            match (q.round() as i64).rem_euclid(4) {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                2 => (-1.0, 0.0),
                _ => (0.0, -1.0),
            }
        } else {
            let r = deg.to_radians();
            (r.cos(), r.sin())
        }
    };
    let planar = |a: usize, b: usize, deg: f64| {
        let (c, s) = cos_sin(deg);
        let mut m = identity(dims);
        m[a][a] = c;
        m[a][b] = -s;
        m[b][a] = s;
        m[b][b] = c;
        m
    };
    if dims == 2 {
        return planar(0, 1, angles_deg[0]);
    }
    let mut r = identity(3);
    for (d, &deg) in angles_deg.iter().enumerate() {
        let (a, b) = match d {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        r = matmul(&planar(a, b, deg), &r);
    }
    r
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Rotates about the volume center with multilinear interpolation (reads
/// outside the volume are zero).
pub fn rotate(volume: &Tensor, angles_deg: &[f64]) -> Result<Tensor> {
    let dims = volume.ndim();
    let needed = if dims == 2 { 1 } else { 3 };
    if !(2..=3).contains(&dims) || angles_deg.len() != needed {
        return Err(dim_err!(
            "{dims}-D volume needs {needed} rotation angle(s), got {}",
            angles_deg.len()
        ));
    }
    let r = rotation(dims, angles_deg);
    let shape = volume.shape().to_vec();
    let center: Vec<f64> = shape.iter().map(|&e| (e as f64 - 1.0) / 2.0).collect();
    let mut data = Vec::with_capacity(volume.len());
    for_each_index(&shape, |idx, _| {
        // Source = R^T (x - c) + c.
        let src: Vec<f64> = (0..dims)
            .map(|i| {
                let s: f64 = (0..dims).map(|j| r[j][i] * (idx[j] as f64 - center[j])).sum::<f64>() + center[i];
                if (s - s.round()).abs() < 1e-9 {
                    s.round()
                } else {
                    s
                }
            })
            .collect();
        data.push(interpolate(volume, &src));
    });
    Ok(Tensor::from_vec(&shape, data)?.with_precision(volume.precision()))
}

fn interpolate(volume: &Tensor, at: &[f64]) -> f64 {
    let shape = volume.shape();
    let base: Vec<f64> = at.iter().map(|v| v.floor()).collect();
    let frac: Vec<f64> = at.iter().zip(&base).map(|(v, b)| v - b).collect();
    let mut acc = 0.0;
    for corner in 0..1usize << at.len() {
        let mut w = 1.0;
        let mut flat = 0usize;
        let mut inside = true;
        for d in 0..at.len() {
            let up = (corner >> d) & 1 == 1;
            let f = if up { frac[d] } else { 1.0 - frac[d] };
            if f == 0.0 {
                inside = false;
                break;
            }
            let i = base[d] as i64 + up as i64;
            if i < 0 || i >= shape[d] as i64 {
                inside = false;
                break;
            }
            w *= f;
            flat = flat * shape[d] + i as usize;
        }
        if inside {
            acc += w * volume.data()[flat];
        }
    }
    acc
}

/// Rotates, then crops `crop` extents at a seeded uniformly random offset.
pub fn augment_rotate_crop(volume: &Tensor, angles_deg: &[f64], crop: &[usize], seed: u64) -> Result<Tensor> {
    if crop.len() != volume.ndim() || crop.iter().zip(volume.shape()).any(|(&c, &e)| c > e || c == 0) {
        return Err(dim_err!("crop {crop:?} does not fit volume {:?}", volume.shape()));
    }
    let rotated = rotate(volume, angles_deg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: Vec<usize> = crop
        .iter()
        .zip(volume.shape())
        .map(|(&c, &e)| rng.gen_range(0..=e - c))
        .collect();
    rotated.crop(&offset, crop)
}

#[cfg(test)]
mod tests;
