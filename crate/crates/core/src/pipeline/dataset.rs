use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SimGeometry, SCHEMA_VERSION};
use crate::acoustics::{add_noise_psnr, simulate_forward, time_reversal};
use crate::error::{Error, Result};
use crate::phantom::derive_seed;
use crate::tensor::{read_patn, write_patn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub split: Split,
    pub phantom_seed: u64,
    pub noise_seed: u64,
    /// Paths relative to the dataset directory.
    pub input: PathBuf,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n_angles: usize,
    pub num_steps: usize,
    pub dt: f64,
    pub config: ExperimentConfig,
    pub samples: Vec<SampleEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// One (time-reversal input, ground truth) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub input: Tensor,
    pub target: Tensor,
}

/// Phantom, forward simulation in the true medium, noise, and time reversal
/// in the assumed medium for one sample.
pub fn make_pair(cfg: &ExperimentConfig, geo: &SimGeometry, phantom_seed: u64, noise_seed: u64) -> Result<(Tensor, Tensor)> {
    let target = cfg.phantom.generate(phantom_seed)?;
    let input = reconstruct(cfg, geo, &target, Some(noise_seed))?;
    Ok((input, target))
}

/// Time-reversal image of `p0` as seen through `geo`'s sensors.
pub fn reconstruct(cfg: &ExperimentConfig, geo: &SimGeometry, p0: &Tensor, noise_seed: Option<u64>) -> Result<Tensor> {
    let padded = geo.pad_phantom(p0)?;
    let medium = geo.true_medium(cfg, &padded)?;
    let dt = geo.dt(cfg);
    let mut data = simulate_forward(&padded, &medium, &geo.sensors, geo.num_steps(cfg), dt)?;
    if let (Some(db), Some(seed)) = (cfg.noise_psnr_db, noise_seed) {
        if data.series.max_abs() > 0.0 {
            data = add_noise_psnr(&data, db, seed)?;
        }
    }
    let assumed = geo.with_sponge(cfg, geo.assumed.clone())?;
    geo.crop(&time_reversal(&data, &assumed, &geo.sensors)?)
}

fn entry(cfg: &ExperimentConfig, split: Split, i: usize) -> SampleEntry {
    let id = format!("{}_{i:05}", split.tag());
    SampleEntry {
        phantom_seed: derive_seed(cfg.seed, &format!("phantom/{}", split.tag()), i as u64),
        noise_seed: derive_seed(cfg.seed, &format!("noise/{}", split.tag()), i as u64),
        input: PathBuf::from(format!("{id}_input.patn")),
        target: PathBuf::from(format!("{id}_target.patn")),
        id,
        split,
    }
}

/// Simulates every sample of both splits for `n_angles` sensors and writes
/// the pairs plus a manifest into `dir`. Samples are built in parallel; each
/// has its own seeds, so the output does not depend on the thread count.
pub fn build_dataset(cfg: &ExperimentConfig, n_angles: usize, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let geo = cfg.geometry(n_angles)?;
    let entries: Vec<SampleEntry> = (0..cfg.dataset.train)
        .map(|i| entry(cfg, Split::Train, i))
        .chain((0..cfg.dataset.test).map(|i| entry(cfg, Split::Test, i)))
        .collect();
    entries.par_iter().enumerate().try_for_each(|(k, e)| -> Result<()> {
        let (input, target) = make_pair(cfg, &geo, e.phantom_seed, e.noise_seed).map_err(|source| Error::Sample {
            index: k,
            source: Box::new(source),
        })?;
        write_patn(&input, dir.join(&e.input))?;
        write_patn(&target, dir.join(&e.target))
    })?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        n_angles,
        num_steps: geo.num_steps(cfg),
        dt: geo.dt(cfg),
        config: cfg.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    log::info!(
        "dataset with {} samples at {n_angles} angles written to {}",
        manifest.samples.len(),
        dir.display()
    );
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

pub fn load_split(dir: impl AsRef<Path>, manifest: &DatasetManifest, split: Split) -> Result<Vec<Pair>> {
    let dir = dir.as_ref();
    manifest
        .samples
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            Ok(Pair {
                id: e.id.clone(),
                input: read_patn(dir.join(&e.input))?,
                target: read_patn(dir.join(&e.target))?,
            })
        })
        .collect()
}
