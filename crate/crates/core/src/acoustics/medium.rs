use serde::{Deserialize, Serialize};

use crate::error::{cfg_err, dim_err, Result};
use crate::tensor::Tensor;

/// Sound speed (m/s) and density (kg/m^3) of one material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub sound_speed: f64,
    pub density: f64,
}

impl Material {
    pub const fn new(sound_speed: f64, density: f64) -> Self {
        Material {
            sound_speed,
            density,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.sound_speed > 0.0 && self.sound_speed.is_finite()) {
            return Err(cfg_err!("{what} sound speed must be positive, got {}", self.sound_speed));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(cfg_err!("{what} density must be positive, got {}", self.density));
        }
        Ok(())
    }
}

pub const WATER: Material = Material::new(1480.0, 1000.0);
pub const VESSEL: Material = Material::new(1570.0, 1060.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    pub(crate) extents: Vec<usize>,
    pub(crate) dx: f64,
    pub(crate) sound_speed: Tensor,
    pub(crate) density: Tensor,
    pub(crate) sponge_width: usize,
    pub(crate) sponge_strength: f64,
}

/// Piecewise-constant medium: `inclusion` where `mask` is nonzero,
/// `background` elsewhere. No sponge.
pub fn make_medium(
    extents: &[usize],
    dx: f64,
    background: Material,
    inclusion_mask: Option<&Tensor>,
    inclusion: Material,
) -> Result<Medium> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(cfg_err!("grid spacing must be positive, got {dx}"));
    }
    if extents.is_empty() || extents.len() > 3 || extents.contains(&0) {
        return Err(dim_err!("medium extents must be 1 to 3 positive sizes, got {extents:?}"));
    }
    background.validate("background")?;
    let pick = |m: Option<&Tensor>, f: fn(&Material) -> f64| -> Result<Tensor> {
        Ok(match m {
            None => Tensor::full(extents, f(&background)),
            Some(mask) => {
                if mask.shape() != extents {
                    return Err(dim_err!(
                        "inclusion mask {:?} does not match extents {extents:?}",
                        mask.shape()
                    ));
                }
                mask.map(|v| if v != 0.0 { f(&inclusion) } else { f(&background) })
            }
        })
    };
    if inclusion_mask.is_some() {
        inclusion.validate("inclusion")?;
    }
    Ok(Medium {
        extents: extents.to_vec(),
        dx,
        sound_speed: pick(inclusion_mask, |m| m.sound_speed)?,
        density: pick(inclusion_mask, |m| m.density)?,
        sponge_width: 0,
        sponge_strength: 0.0,
    })
}

impl Medium {
    pub fn homogeneous(extents: &[usize], dx: f64, material: Material) -> Result<Medium> {
        make_medium(extents, dx, material, None, material)
    }

    /// Arbitrary sound speed and density maps.
    pub fn from_maps(dx: f64, sound_speed: Tensor, density: Tensor) -> Result<Medium> {
        let mut m = Medium::homogeneous(sound_speed.shape(), dx, WATER)?;
        sound_speed.check_same_shape(&density)?;
        if sound_speed.data().iter().chain(density.data()).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(cfg_err!("sound speed and density must be positive everywhere"));
        }
        m.sound_speed = sound_speed;
        m.density = density;
        Ok(m)
    }

    /// Absorbing layer `width` cells deep; damping rate ramps quadratically
    /// from 0 to `strength` (1/s) at the outer edge.
    pub fn with_sponge(mut self, width: usize, strength: f64) -> Result<Medium> {
        let smallest = *self.extents.iter().min().expect("non-empty extents");
        if width > 0 && 2 * width >= smallest {
            return Err(cfg_err!(
                "sponge width {width} must be below half the smallest extent {smallest}"
            ));
        }
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(cfg_err!("sponge strength must be non-negative, got {strength}"));
        }
        self.sponge_width = width;
        self.sponge_strength = strength;
        Ok(self)
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn dims(&self) -> usize {
        self.extents.len()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn sound_speed(&self) -> &Tensor {
        &self.sound_speed
    }

    pub fn density(&self) -> &Tensor {
        &self.density
    }

    pub fn sponge_width(&self) -> usize {
        self.sponge_width
    }

    pub fn sponge_strength(&self) -> f64 {
        self.sponge_strength
    }

    /// Length of the grid diagonal in meters.
    pub fn diagonal(&self) -> f64 {
        self.extents
            .iter()
            .map(|&e| (e as f64 * self.dx).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Largest stable step scaled by `safety`: `safety dx / (max c sqrt(d))`.
pub fn cfl_dt(medium: &Medium, safety: f64) -> f64 {
    safety * medium.dx / (medium.sound_speed.max() * (medium.dims() as f64).sqrt())
}

/// Steps for a wavefront to cross the grid diagonal 1.2 times at the
/// slowest sound speed.
pub fn default_num_steps(medium: &Medium, dt: f64) -> usize {
    (1.2 * medium.diagonal() / (medium.sound_speed.min() * dt)).ceil() as usize
}
