//! Acoustic forward model, sensor sampling, measurement noise and
//! time-reversal reconstruction.
//!
//! The wave equation is integrated as a first-order velocity-pressure system
//! on a staggered grid with leapfrog time stepping. Walls are rigid; an
//! optional quadratic sponge absorbs outgoing waves.

mod medium;
mod sensors;
mod solver;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{cfg_err, dim_err, Error, Result};
use crate::tensor::{read_patn, write_patn, Tensor};

pub use medium::{cfl_dt, default_num_steps, make_medium, Material, Medium, VESSEL, WATER};
pub use sensors::{make_sensor_array, sensor_angles, Geometry, SensorArray, SensorLayout};
pub use solver::{Solver, Wavefield};

/// Recorded pressure, `(num_sensors, num_steps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    pub series: Tensor,
    pub dt: f64,
    pub dx: f64,
    pub layout: SensorLayout,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dt: f64,
    dx: f64,
    geometry: Geometry,
    n_angles: usize,
    n_z: usize,
    radius: f64,
    center: Vec<f64>,
    seed: Option<u64>,
}

impl SensorData {
    pub fn num_sensors(&self) -> usize {
        self.series.shape()[0]
    }

    pub fn num_steps(&self) -> usize {
        self.series.shape()[1]
    }

    /// Writes `<stem>.patn` and `<stem>.json`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_patn(&self.series, dir.join(format!("{stem}.patn")))?;
        let side = Sidecar {
            dt: self.dt,
            dx: self.dx,
            geometry: self.layout.geometry,
            n_angles: self.layout.n_angles,
            n_z: self.layout.n_z,
            radius: self.layout.radius,
            center: self.layout.center.clone(),
            seed: self.seed,
        };
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&side).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<SensorData> {
        let dir = dir.as_ref();
        let series = read_patn(dir.join(format!("{stem}.patn")))?;
        let path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if series.ndim() != 2 {
            return Err(Error::Format {
                path,
                reason: format!("sensor series must be 2-D, got {:?}", series.shape()),
            });
        }
        Ok(SensorData {
            series,
            dt: side.dt,
            dx: side.dx,
            layout: SensorLayout {
                geometry: side.geometry,
                n_angles: side.n_angles,
                n_z: side.n_z,
                radius: side.radius,
                center: side.center,
            },
            seed: side.seed,
        })
    }
}

fn flat_positions(sensors: &SensorArray, extents: &[usize]) -> Result<Vec<usize>> {
    let strides = crate::tensor::strides_of(extents);
    sensors
        .positions()
        .iter()
        .map(|p| {
            if p.len() != extents.len() || p.iter().zip(extents).any(|(&i, &e)| i >= e) {
                return Err(dim_err!("sensor {p:?} lies outside the grid {extents:?}"));
            }
            Ok(p.iter().zip(&strides).map(|(i, s)| i * s).sum())
        })
        .collect()
}

/// Records the pressure at every sensor for steps `0..num_steps`, step 0
/// being `p0` itself.
pub fn simulate_forward(
    p0: &Tensor,
    medium: &Medium,
    sensors: &SensorArray,
    num_steps: usize,
    dt: f64,
) -> Result<SensorData> {
    if num_steps == 0 {
        return Err(cfg_err!("simulation needs at least one step"));
    }
    if sensors.is_empty() {
        return Err(cfg_err!("sensor array is empty"));
    }
    let solver = Solver::new(medium, dt)?;
    let mut field = solver.initial_field(p0)?;
    let idx = flat_positions(sensors, medium.extents())?;
    let mut series = vec![0.0; idx.len() * num_steps];
    for n in 0..num_steps {
        if n > 0 {
            solver.step(&mut field);
        }
        for (s, &i) in idx.iter().enumerate() {
            series[s * num_steps + n] = field.p[i];
        }
    }
    let series = Tensor::from_vec(&[idx.len(), num_steps], series)?;
    if !series.is_finite() {
        return Err(cfg_err!("simulation diverged; reduce the time step"));
    }
    Ok(SensorData {
        series,
        dt,
        dx: medium.dx(),
        layout: sensors.layout().clone(),
        seed: None,
    })
}

/// Adds white Gaussian noise with `sigma = max|y| 10^(-psnr_db / 20)`.
pub fn add_noise_psnr(data: &SensorData, psnr_db: f64, seed: u64) -> Result<SensorData> {
    let peak = data.series.max_abs();
    if peak == 0.0 {
        return Err(cfg_err!("cannot set a noise level relative to all-zero data"));
    }
    if !psnr_db.is_finite() {
        return Err(cfg_err!("noise level must be finite, got {psnr_db} dB"));
    }
    let sigma = peak * 10f64.powf(-psnr_db / 20.0);
    let normal = Normal::new(0.0, sigma).map_err(|e| cfg_err!("noise: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    out.series
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += normal.sample(&mut rng));
    out.seed = Some(seed);
    Ok(out)
}

/// Re-runs the scheme from rest while pinning the pressure at every sensor to
/// its recording in reverse order; the final field is the image.
pub fn time_reversal(data: &SensorData, assumed: &Medium, sensors: &SensorArray) -> Result<Tensor> {
    if data.num_sensors() != sensors.len() {
        return Err(dim_err!(
            "{} recorded series for {} sensors",
            data.num_sensors(),
            sensors.len()
        ));
    }
    let solver = Solver::new(assumed, data.dt)?;
    let idx = flat_positions(sensors, assumed.extents())?;
    let n = data.num_steps();
    let y = data.series.data();
    let mut field = solver.zero_field();
    for m in 0..n {
        solver.step(&mut field);
        for (s, &i) in idx.iter().enumerate() {
            field.p[i] = y[s * n + (n - 1 - m)];
        }
    }
    Tensor::from_vec(assumed.extents(), field.p)
}
