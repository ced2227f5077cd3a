use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{TrainingConfig, SCHEMA_VERSION};
use super::dataset::Pair;
use crate::autodiff::{adam_step, mse_loss_grad, AdamConfig, AdamState, OpGraph, Params};
use crate::error::{cfg_err, dim_err, Error, Result};
use crate::metrics::{ms_ssim, MsSsimConfig};
use crate::network::{build_network, init_params, NetworkConfig, Variant};
use crate::phantom::{derive_seed, rng_for};
use crate::tensor::{read_patn, write_patn, Tensor};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub ms_ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean training loss of each completed epoch.
    pub epoch_loss: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub epoch_seconds: Vec<f64>,
}

/// Network weights with the optimizer state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub params: Params,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct ParamFiles {
    name: String,
    value: PathBuf,
    first_moment: PathBuf,
    second_moment: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    schema_version: u32,
    network: NetworkConfig,
    optimizer: AdamConfig,
    step_count: u64,
    params: Vec<ParamFiles>,
}

impl Checkpoint {
    /// Graph for `network` carrying these parameters.
    pub fn graph(&self) -> Result<OpGraph> {
        let mut graph = build_network(&self.network)?.graph;
        graph.load_params(self.params.clone())?;
        Ok(graph)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.params.len());
        for (i, (name, value)) in self.params.iter().enumerate() {
            let entry = ParamFiles {
                name: name.to_string(),
                value: format!("param_{i:03}.patn").into(),
                first_moment: format!("m_{i:03}.patn").into(),
                second_moment: format!("v_{i:03}.patn").into(),
            };
            write_patn(value, dir.join(&entry.value))?;
            write_patn(&self.optimizer.first_moment[i], dir.join(&entry.first_moment))?;
            write_patn(&self.optimizer.second_moment[i], dir.join(&entry.second_moment))?;
            files.push(entry);
        }
        let manifest = CheckpointManifest {
            schema_version: SCHEMA_VERSION,
            network: self.network.clone(),
            optimizer: self.optimizer.config,
            step_count: self.optimizer.step_count,
            params: files,
        };
        let path = dir.join(CHECKPOINT_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
        let dir = dir.as_ref();
        let path = dir.join(CHECKPOINT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                path,
                reason: format!("unsupported schema_version {}", manifest.schema_version),
            });
        }
        let mut pairs = Vec::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for f in &manifest.params {
            pairs.push((f.name.clone(), read_patn(dir.join(&f.value))?));
            m.push(read_patn(dir.join(&f.first_moment))?);
            v.push(read_patn(dir.join(&f.second_moment))?);
        }
        let ckpt = Checkpoint {
            network: manifest.network,
            params: Params::from_pairs(pairs)?,
            optimizer: AdamState {
                config: manifest.optimizer,
                step_count: manifest.step_count,
                first_moment: m,
                second_moment: v,
            },
        };
        // Reject files that do not fit the declared architecture.
        ckpt.graph()?;
        Ok(ckpt)
    }
}

/// Initialization seed for a network variant under a training seed.
pub fn init_seed(training_seed: u64, variant: Variant) -> u64 {
    let tag = match variant {
        Variant::DdUnet => "init/dd_unet",
        Variant::FdUnet => "init/fd_unet",
    };
    derive_seed(training_seed, tag, 0)
}

/// A network with its optimizer, advanced one mini-batch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    network: NetworkConfig,
    graph: OpGraph,
    adam: AdamState,
}

impl Trainer {
    pub fn new(network: &NetworkConfig, seed: u64, learning_rate: f64) -> Result<Self> {
        let mut graph = build_network(network)?.graph;
        let params = init_params(&graph, seed);
        graph.load_params(params)?;
        let adam = AdamState::new(
            graph.params(),
            AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            network: network.clone(),
            graph,
            adam,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Ok(Trainer {
            graph: ckpt.graph()?,
            network: ckpt.network,
            adam: ckpt.optimizer,
        })
    }

    pub fn graph(&self) -> &OpGraph {
        &self.graph
    }

    pub fn steps(&self) -> u64 {
        self.adam.step_count
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.network.clone(),
            params: self.graph.params().clone(),
            optimizer: self.adam.clone(),
        }
    }

    /// MSE of the batch before the update. Parameters are left untouched
    /// when the loss is not finite.
    pub fn step(&mut self, batch: &[&Pair]) -> Result<f64> {
        let inputs: Vec<Tensor> = batch.iter().map(|p| p.input.as_batch()).collect();
        let targets: Vec<Tensor> = batch.iter().map(|p| p.target.as_batch()).collect();
        let x = Tensor::stack_batch(&inputs)?;
        let y = Tensor::stack_batch(&targets)?;
        let pred = self.graph.forward(&x)?;
        let (loss, grad) = mse_loss_grad(&pred, &y)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let grads = self.graph.backward(&grad)?;
        adam_step(self.graph.params_mut(), &grads.params, &mut self.adam)?;
        Ok(loss)
    }
}

/// Network outputs for single images, negatives clamped to zero.
pub fn predict(graph: &OpGraph, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    inputs
        .par_iter()
        .map(|x| {
            let divisor = graph.spatial_divisor();
            if x.ndim() != graph.spatial_dims() || x.shape().iter().any(|e| e % divisor != 0) {
                return Err(dim_err!(
                    "{}-D network with extents divisible by {divisor} cannot take an image shaped {:?}",
                    graph.spatial_dims(),
                    x.shape()
                ));
            }
            let y = graph.evaluate(&x.as_batch())?;
            Ok(y.into_shape(x.shape())?.map(|v| v.max(0.0)))
        })
        .collect()
}

pub fn run_inference(ckpt: &Checkpoint, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    predict(&ckpt.graph()?, inputs)
}

fn mean_ms_ssim(graph: &OpGraph, pairs: &[Pair]) -> Result<f64> {
    let inputs: Vec<Tensor> = pairs.iter().map(|p| p.input.clone()).collect();
    let outputs = predict(graph, &inputs)?;
    let cfg = MsSsimConfig::default();
    let scores = outputs
        .par_iter()
        .zip(pairs)
        .map(|(y, p)| ms_ssim(y, &p.target, &cfg))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

/// Trains `trainer` for `training.epochs` epochs over `train`.
///
/// Every epoch visits the pairs in an order drawn from the training seed and
/// the epoch index. When `checkpoint_dir` is given the final state is saved
/// there (plus `epoch_NNNN/` subdirectories at the configured interval).
pub fn train_epochs(
    trainer: &mut Trainer,
    training: &TrainingConfig,
    train: &[Pair],
    held_out: &[Pair],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainingHistory> {
    if train.is_empty() {
        return Err(cfg_err!("training set is empty"));
    }
    if training.batch_size == 0 {
        return Err(cfg_err!("batch_size must be at least 1"));
    }
    let eval = &held_out[..training.eval_samples.min(held_out.len())];
    let mut history = TrainingHistory::default();
    for epoch in 0..training.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(training.seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(training.batch_size).enumerate() {
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = trainer.step(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
        }
        let done = epoch + 1;
        history.epoch_loss.push(total / train.len() as f64);
        history.epoch_seconds.push(start.elapsed().as_secs_f64());
        if training.eval_every.is_some_and(|e| e > 0 && done % e == 0) && !eval.is_empty() {
            history.snapshots.push(Snapshot {
                epoch: done,
                ms_ssim: mean_ms_ssim(trainer.graph(), eval)?,
            });
        }
        log::info!(
            "epoch {done}/{}: loss {:.6e} ({:.1} s)",
            training.epochs,
            history.epoch_loss[epoch],
            history.epoch_seconds[epoch]
        );
        if let (Some(dir), Some(every)) = (checkpoint_dir, training.checkpoint_every) {
            if every > 0 && done % every == 0 && done < training.epochs {
                trainer.checkpoint().save(dir.join(format!("epoch_{done:04}")))?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        trainer.checkpoint().save(dir)?;
        let path = dir.join(HISTORY_FILE);
        let text = serde_json::to_string_pretty(&history).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(history)
}

/// Fresh network for `network`, trained under `training`.
pub fn run_training(
    network: &NetworkConfig,
    training: &TrainingConfig,
    train: &[Pair],
    held_out: &[Pair],
    checkpoint_dir: Option<&Path>,
) -> Result<(Checkpoint, TrainingHistory)> {
    let mut trainer = Trainer::new(network, init_seed(training.seed, network.variant), training.learning_rate)?;
    let history = train_epochs(&mut trainer, training, train, held_out, checkpoint_dir)?;
    Ok((trainer.checkpoint(), history))
}
