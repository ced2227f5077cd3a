use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::{make_medium, make_sensor_array, Geometry, Material, Medium, SensorArray, VESSEL, WATER};
use crate::autodiff::DEFAULT_LEARNING_RATE;
use crate::error::{cfg_err, Error, Result};
use crate::network::NetworkConfig;
use crate::phantom::{gen_spheres, gen_vessels, SpherePhantomSpec, VesselPhantomSpec};
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomConfig {
    Spheres(SpherePhantomSpec),
    Vessels(VesselPhantomSpec),
}

impl PhantomConfig {
    pub fn extents(&self) -> &[usize] {
        match self {
            PhantomConfig::Spheres(s) => &s.extents,
            PhantomConfig::Vessels(v) => &v.extents,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Tensor> {
        match self {
            PhantomConfig::Spheres(s) => gen_spheres(s, seed),
            PhantomConfig::Vessels(v) => gen_vessels(v, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumConfig {
    pub background: Material,
    pub inclusion: Material,
    /// Phantom values above this are inclusion tissue in the true medium.
    pub inclusion_threshold: f64,
    /// Homogeneous medium assumed by the reconstruction.
    pub assumed: Material,
}

impl Default for MediumConfig {
    fn default() -> Self {
        MediumConfig {
            background: WATER,
            inclusion: VESSEL,
            inclusion_threshold: 0.05,
            assumed: WATER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub geometry: Geometry,
    /// Radius in cells about the phantom center.
    pub radius: f64,
    pub n_z: usize,
    /// Angle count for single-dataset commands.
    pub n_angles: usize,
    /// Angle counts swept by the study.
    pub sparsity_levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Grid spacing in meters.
    pub dx: f64,
    /// Fraction of the stable time step.
    pub safety: f64,
    /// Recorded steps; derived from the grid diagonal when absent.
    pub num_steps: Option<usize>,
    /// Absorbing layer added around the phantom, in cells.
    pub sponge_width: usize,
    /// Outer-edge damping per time step (dimensionless, rate times dt).
    pub sponge_damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
    /// Held-out MS-SSIM snapshot cadence in epochs.
    pub eval_every: Option<usize>,
    /// Test images used by each snapshot.
    pub eval_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub medium: MediumConfig,
    pub sensors: SensorConfig,
    /// Measurement noise; `None` for noise-free data.
    pub noise_psnr_db: Option<f64>,
    pub simulation: SimulationConfig,
    pub network: NetworkConfig,
    /// Baseline trained alongside `network` by the study.
    pub baseline: NetworkConfig,
    pub training: TrainingConfig,
    pub dataset: DatasetSizes,
    pub output_dir: PathBuf,
}

/// Spheres drawn for 64 x 64 desk images: the reference counts and radii
/// scaled to the smaller field.
pub fn desk_sphere_spec(extents: &[usize]) -> SpherePhantomSpec {
    SpherePhantomSpec {
        extents: extents.to_vec(),
        count: (5, 12),
        radius: (2.5, 5.0),
        magnitude: (1.0, 5.0),
        smoothing: 3,
    }
}

impl ExperimentConfig {
    /// 2-D 64 x 64 spheres, half-circle array at 8/16/32 angles, 200/100
    /// pairs, 100 epochs.
    pub fn desk_study() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 2020,
            phantom: PhantomConfig::Spheres(desk_sphere_spec(&[64, 64])),
            medium: MediumConfig::default(),
            sensors: SensorConfig {
                geometry: Geometry::Arc,
                radius: 31.0,
                n_z: 1,
                n_angles: 16,
                sparsity_levels: vec![8, 16, 32],
            },
            noise_psnr_db: Some(25.0),
            simulation: SimulationConfig {
                dx: 1e-4,
                safety: 0.3,
                num_steps: None,
                sponge_width: 12,
                sponge_damping: 0.25,
            },
            network: NetworkConfig::dd_unet(2, 16, 4, 3, 2),
            baseline: NetworkConfig::fd_unet(2, 16, 4, 3),
            training: TrainingConfig {
                learning_rate: DEFAULT_LEARNING_RATE,
                batch_size: 2,
                epochs: 100,
                seed: 7,
                checkpoint_every: None,
                eval_every: None,
                eval_samples: 8,
            },
            dataset: DatasetSizes { train: 200, test: 100 },
            output_dir: PathBuf::from("out"),
        }
    }

    /// A few-second configuration for smoke runs and tests.
    pub fn tiny(output_dir: impl Into<PathBuf>) -> Self {
        let mut cfg = Self::desk_study();
        cfg.phantom = PhantomConfig::Spheres(SpherePhantomSpec {
            count: (2, 4),
            radius: (2.0, 4.0),
            ..desk_sphere_spec(&[16, 16])
        });
        cfg.sensors.radius = 7.0;
        cfg.sensors.n_angles = 6;
        cfg.sensors.sparsity_levels = vec![6];
        cfg.simulation.sponge_width = 4;
        cfg.network = NetworkConfig::dd_unet(2, 8, 2, 2, 2);
        cfg.baseline = NetworkConfig::fd_unet(2, 8, 2, 2);
        cfg.training.epochs = 2;
        cfg.dataset = DatasetSizes { train: 4, test: 3 };
        cfg.output_dir = output_dir.into();
        cfg
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.training.batch_size == 0 {
            return Err(cfg_err!("batch_size must be at least 1"));
        }
        if self.dataset.train == 0 || self.dataset.test == 0 {
            return Err(cfg_err!("train and test sizes must be at least 1"));
        }
        if !(self.training.learning_rate > 0.0) {
            return Err(cfg_err!("learning_rate must be positive"));
        }
        if !(self.simulation.safety > 0.0 && self.simulation.safety <= 1.0) {
            return Err(cfg_err!("simulation safety must lie in (0, 1]"));
        }
        if self.sensors.sparsity_levels.is_empty() {
            return Err(cfg_err!("at least one sparsity level is required"));
        }
        let dims = self.phantom.extents().len();
        for net in [&self.network, &self.baseline] {
            net.validate()?;
            if net.spatial_dims != dims {
                return Err(cfg_err!(
                    "{:?} network is {}-D but phantoms are {dims}-D",
                    net.variant,
                    net.spatial_dims
                ));
            }
            if let Some(e) = self.phantom.extents().iter().find(|&&e| e % net.spatial_divisor() != 0) {
                return Err(cfg_err!(
                    "phantom extent {e} is not divisible by {} for {} levels",
                    net.spatial_divisor(),
                    net.levels
                ));
            }
        }
        self.geometry(self.sensors.n_angles)?;
        Ok(())
    }

    /// Simulation grid (phantom plus sponge on every side) for `n_angles`.
    pub fn geometry(&self, n_angles: usize) -> Result<SimGeometry> {
        let ext = self.phantom.extents().to_vec();
        let pad = self.simulation.sponge_width;
        let grid: Vec<usize> = ext.iter().map(|e| e + 2 * pad).collect();
        let mut center: Vec<f64> = ext.iter().map(|&e| (e as f64 - 1.0) / 2.0 + pad as f64).collect();
        if ext.len() == 3 {
            center[2] = 0.0;
        }
        let sensors = make_sensor_array(
            self.sensors.geometry,
            n_angles,
            self.sensors.n_z,
            self.sensors.radius,
            &center,
            &grid,
        )?;
        let assumed = Medium::homogeneous(&grid, self.simulation.dx, self.medium.assumed)?;
        Ok(SimGeometry {
            phantom_extents: ext,
            pad,
            grid,
            sensors,
            assumed,
        })
    }
}

/// Everything about the simulation grid that does not depend on the sample.
#[derive(Debug, Clone)]
pub struct SimGeometry {
    pub phantom_extents: Vec<usize>,
    pub pad: usize,
    pub grid: Vec<usize>,
    pub sensors: SensorArray,
    pub assumed: Medium,
}

impl SimGeometry {
    pub fn pad_phantom(&self, p0: &Tensor) -> Result<Tensor> {
        p0.pad_center(&vec![self.pad; self.grid.len()], &self.grid)
    }

    pub fn crop(&self, field: &Tensor) -> Result<Tensor> {
        field.crop(&vec![self.pad; self.grid.len()], &self.phantom_extents)
    }

    /// True medium for a padded phantom: inclusion tissue wherever the
    /// phantom exceeds the threshold, plus the sponge.
    pub fn true_medium(&self, cfg: &ExperimentConfig, padded: &Tensor) -> Result<Medium> {
        let mask = padded.map(|v| (v > cfg.medium.inclusion_threshold) as u8 as f64);
        let m = make_medium(&self.grid, cfg.simulation.dx, cfg.medium.background, Some(&mask), cfg.medium.inclusion)?;
        self.with_sponge(cfg, m)
    }

    pub fn with_sponge(&self, cfg: &ExperimentConfig, m: Medium) -> Result<Medium> {
        let dt = self.dt(cfg);
        m.with_sponge(self.pad, cfg.simulation.sponge_damping / dt)
    }

    /// Shared time step: stable for the fastest tissue in the configuration.
    pub fn dt(&self, cfg: &ExperimentConfig) -> f64 {
        let fastest = cfg
            .medium
            .background
            .sound_speed
            .max(cfg.medium.inclusion.sound_speed)
            .max(cfg.medium.assumed.sound_speed);
        cfg.simulation.safety * cfg.simulation.dx / (fastest * (self.grid.len() as f64).sqrt())
    }

    pub fn num_steps(&self, cfg: &ExperimentConfig) -> usize {
        cfg.simulation.num_steps.unwrap_or_else(|| {
            let slowest = cfg
                .medium
                .background
                .sound_speed
                .min(cfg.medium.inclusion.sound_speed)
                .min(cfg.medium.assumed.sound_speed);
            let diag = self.assumed.diagonal();
            (1.2 * diag / (slowest * self.dt(cfg))).ceil() as usize
        })
    }
}
