//! DD-UNet and FD-UNet graph builders.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, OpGraph, OpKind, Params};
use crate::error::{cfg_err, Result};
use crate::tensor::{ConvSpec, Padding, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    DdUnet,
    FdUnet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub spatial_dims: usize,
    pub f1: usize,
    pub k1: usize,
    pub levels: usize,
    pub dilation_rate: usize,
    pub input_channels: usize,
    pub output_channels: usize,
}

impl NetworkConfig {
    pub fn dd_unet(spatial_dims: usize, f1: usize, k1: usize, levels: usize, dilation_rate: usize) -> Self {
        NetworkConfig {
            variant: Variant::DdUnet,
            spatial_dims,
            f1,
            k1,
            levels,
            dilation_rate,
            input_channels: 1,
            output_channels: 1,
        }
    }

    pub fn fd_unet(spatial_dims: usize, f1: usize, k1: usize, levels: usize) -> Self {
        NetworkConfig {
            variant: Variant::FdUnet,
            dilation_rate: 1,
            ..Self::dd_unet(spatial_dims, f1, k1, levels, 1)
        }
    }

    /// Feature count at `level`.
    pub fn features(&self, level: usize) -> usize {
        self.f1 << level
    }

    /// Growth rate at `level`.
    pub fn growth(&self, level: usize) -> usize {
        self.k1 << level
    }

    /// Required divisor of every input spatial extent.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.spatial_dims) {
            return Err(cfg_err!("spatial_dims must be 2 or 3, got {}", self.spatial_dims));
        }
        for (name, v) in [
            ("f1", self.f1),
            ("k1", self.k1),
            ("levels", self.levels),
            ("dilation_rate", self.dilation_rate),
            ("input_channels", self.input_channels),
            ("output_channels", self.output_channels),
        ] {
            if v == 0 {
                return Err(cfg_err!("{name} must be positive"));
            }
        }
        if self.levels > 16 {
            return Err(cfg_err!("levels = {} is unreasonably deep", self.levels));
        }
        if self.variant == Variant::DdUnet && self.k1 % 2 != 0 {
            return Err(cfg_err!("k1 must be even for dd_unet, got {}", self.k1));
        }
        if self.f1 % 2 != 0 {
            return Err(cfg_err!("f1 must be even, got {}", self.f1));
        }
        // Every level shares T = (f_l - f_l/2) / k_l = f1 / (2 k1).
        DenseDilationBlockSpec::new(self.f1 / 2, self.f1, self.k1, self.dilation_rate)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseDilationBlockSpec {
    pub in_channels: usize,
    pub target_features: usize,
    pub growth: usize,
    pub dilation_rate: usize,
    pub steps: usize,
}

impl DenseDilationBlockSpec {
    /// Derives the step count `T = (f - C_in) / k`.
    pub fn new(in_channels: usize, target_features: usize, growth: usize, dilation_rate: usize) -> Result<Self> {
        if growth == 0 || dilation_rate == 0 || in_channels == 0 {
            return Err(cfg_err!("dense block needs positive channels, growth and rate"));
        }
        if target_features <= in_channels || (target_features - in_channels) % growth != 0 {
            return Err(cfg_err!(
                "dense block cannot grow {in_channels} channels to {target_features} in steps of {growth}"
            ));
        }
        Ok(DenseDilationBlockSpec {
            in_channels,
            target_features,
            growth,
            dilation_rate,
            steps: (target_features - in_channels) / growth,
        })
    }
}

/// One parameterized layer and its scalar parameter count, computed from the
/// layer's configuration arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerEntry {
    pub name: String,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub graph: OpGraph,
    pub ledger: Vec<LayerEntry>,
    pub blocks: Vec<DenseDilationBlockSpec>,
}

impl Network {
    pub fn ledger_total(&self) -> usize {
        self.ledger.iter().map(|e| e.params).sum()
    }
}

struct Builder {
    graph: OpGraph,
    dims: usize,
    ledger: Vec<LayerEntry>,
    blocks: Vec<DenseDilationBlockSpec>,
}

impl Builder {
    fn new(cfg: &NetworkConfig) -> Self {
        Builder {
            graph: OpGraph::new(cfg.input_channels, cfg.spatial_dims),
            dims: cfg.spatial_dims,
            ledger: Vec::new(),
            blocks: Vec::new(),
        }
    }

    fn channels(&self, id: NodeId) -> usize {
        self.graph.node(id).channels
    }

    fn record(&mut self, name: &str, spec: &ConvSpec) {
        let bias = if spec.bias { spec.out_channels } else { 0 };
        self.ledger.push(LayerEntry {
            name: name.into(),
            params: spec.in_channels * spec.out_channels * spec.taps() + bias,
        });
    }

    fn conv(&mut self, name: &str, input: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.record(name, &spec);
        self.graph.conv(name, input, spec)
    }

    fn conv_relu(&mut self, name: &str, input: NodeId, out: usize, k: usize, rate: usize) -> Result<NodeId> {
        let spec = ConvSpec::cube(self.dims, self.channels(input), out, k).with_dilation(rate);
        let c = self.conv(name, input, spec)?;
        self.graph.relu(&format!("{name}.relu"), c)
    }

    fn strided_down(&mut self, name: &str, input: NodeId, out: usize) -> Result<NodeId> {
        let spec = ConvSpec::cube(self.dims, self.channels(input), out, 2)
            .with_stride(2)
            .with_padding(Padding::Valid);
        let c = self.conv(name, input, spec)?;
        self.graph.relu(&format!("{name}.relu"), c)
    }

    fn up(&mut self, name: &str, input: NodeId, out: usize) -> Result<NodeId> {
        let spec = ConvSpec::cube(self.dims, self.channels(input), out, 2)
            .with_stride(2)
            .with_padding(Padding::Valid);
        self.record(name, &spec);
        let c = self.graph.transposed_conv(name, input, spec)?;
        self.graph.relu(&format!("{name}.relu"), c)
    }

    /// `dilated`: split each step into standard and dilated halves.
    fn block(&mut self, name: &str, input: NodeId, spec: DenseDilationBlockSpec, dilated: bool) -> Result<NodeId> {
        if self.channels(input) != spec.in_channels {
            return Err(cfg_err!(
                "block '{name}' expects {} channels, got {}",
                spec.in_channels,
                self.channels(input)
            ));
        }
        let mut running = input;
        for t in 0..spec.steps {
            let step = format!("{name}.step{t}");
            let new = if dilated {
                let half = spec.growth / 2;
                let std = self.conv_relu(&format!("{step}.std"), running, half, 3, 1)?;
                let dil = self.conv_relu(&format!("{step}.dil"), running, half, 3, spec.dilation_rate)?;
                vec![std, dil]
            } else {
                vec![self.conv_relu(&format!("{step}.conv"), running, spec.growth, 3, 1)?]
            };
            let mut parts = vec![running];
            parts.extend(new);
            running = self.graph.concat(&format!("{step}.cat"), &parts)?;
        }
        debug_assert_eq!(self.channels(running), spec.target_features);
        self.blocks.push(spec);
        Ok(running)
    }

    fn finish(mut self, cfg: &NetworkConfig) -> Network {
        self.graph.require_divisible(cfg.spatial_divisor());
        let total: usize = self.ledger.iter().map(|e| e.params).sum();
        log::info!("{:?} built: {} layers, {total} parameters", cfg.variant, self.ledger.len());
        for e in &self.ledger {
            log::debug!("  {:<28} {:>8}", e.name, e.params);
        }
        Network {
            graph: self.graph,
            ledger: self.ledger,
            blocks: self.blocks,
        }
    }
}

/// Adds one dense (dilation) block to `graph` after node `input` and returns
/// the node holding the block output (`f` channels, input passed through
/// first).
pub fn build_dense_dilation_block(
    graph: &mut OpGraph,
    name: &str,
    input: NodeId,
    spec: DenseDilationBlockSpec,
) -> Result<NodeId> {
    if spec.growth % 2 != 0 {
        return Err(cfg_err!("dilation block growth must be even, got {}", spec.growth));
    }
    let dims = graph.spatial_dims();
    let mut b = Builder {
        graph: std::mem::replace(graph, OpGraph::new(1, dims)),
        dims,
        ledger: Vec::new(),
        blocks: Vec::new(),
    };
    let out = b.block(name, input, spec, true);
    *graph = b.graph;
    out
}

fn build(cfg: &NetworkConfig) -> Result<Network> {
    cfg.validate()?;
    let dd = cfg.variant == Variant::DdUnet;
    let rate = if dd { cfg.dilation_rate } else { 1 };
    let block_spec = |l: usize| DenseDilationBlockSpec::new(cfg.features(l) / 2, cfg.features(l), cfg.growth(l), rate);
    let mut b = Builder::new(cfg);

    let mut x = b.conv_relu("enc0.init", b.graph.input(), cfg.f1 / 2, 3, 1)?;
    let mut skips = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        x = b.block(&format!("enc{l}.block"), x, block_spec(l)?, dd)?;
        if l + 1 < cfg.levels {
            skips.push(x);
            let name = format!("enc{l}.down");
            // f_l == f_{l+1} / 2, so pooling alone already yields the next block's input width.
            x = if dd {
                b.strided_down(&name, x, cfg.features(l + 1) / 2)?
            } else {
                b.graph.max_pool(&name, x, vec![2; cfg.spatial_dims])?
            };
        }
    }
    for l in (0..cfg.levels - 1).rev() {
        let half = cfg.features(l) / 2;
        let up = b.up(&format!("dec{l}.up"), x, half)?;
        let cat = b.graph.concat(&format!("dec{l}.skip"), &[up, skips[l]])?;
        let reduced = b.conv_relu(&format!("dec{l}.init"), cat, half, 1, 1)?;
        x = b.block(&format!("dec{l}.block"), reduced, block_spec(l)?, dd)?;
    }
    if dd {
        let reduced = b.conv_relu("refine.init", x, cfg.f1 / 2, 1, 1)?;
        x = b.block("refine.block", reduced, block_spec(0)?, true)?;
        x = b.conv_relu("refine.conv0", x, cfg.f1, 3, 1)?;
        x = b.conv_relu("refine.conv1", x, cfg.f1, 3, 1)?;
    }
    let head = ConvSpec::cube(cfg.spatial_dims, b.channels(x), cfg.output_channels, 1);
    b.conv("head", x, head)?;
    Ok(b.finish(cfg))
}

/// Builds either variant together with its per-layer parameter ledger.
pub fn build_network(cfg: &NetworkConfig) -> Result<Network> {
    build(cfg)
}

pub fn build_dd_unet(cfg: &NetworkConfig) -> Result<OpGraph> {
    if cfg.variant != Variant::DdUnet {
        return Err(cfg_err!("build_dd_unet called with variant {:?}", cfg.variant));
    }
    Ok(build(cfg)?.graph)
}

pub fn build_fd_unet(cfg: &NetworkConfig) -> Result<OpGraph> {
    if cfg.variant != Variant::FdUnet {
        return Err(cfg_err!("build_fd_unet called with variant {:?}", cfg.variant));
    }
    Ok(build(cfg)?.graph)
}

pub fn count_params(graph: &OpGraph) -> usize {
    graph.params().scalar_count()
}

/// He-normal weights (std `sqrt(2 / fan_in)`) and zero biases, drawn in
/// parameter order from a generator seeded by `seed`.
pub fn init_params(graph: &OpGraph, seed: u64) -> Params {
    let mut fan_in: Vec<Option<usize>> = vec![None; graph.params().len()];
    for node in graph.nodes() {
        match &node.kind {
            OpKind::Conv { spec, weight, .. } => {
                fan_in[*weight].get_or_insert(spec.in_channels * spec.taps());
            }
            OpKind::TransposedConv { spec, weight, .. } => {
                let per_output: usize = spec.kernel.iter().zip(&spec.stride).map(|(k, s)| k / s).product();
                fan_in[*weight].get_or_insert(spec.in_channels * per_output.max(1));
            }
            _ => {}
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = graph.params().clone();
    for (t, fan) in params.tensors_mut().zip(fan_in) {
        let precision = t.precision();
        *t = match fan {
            Some(n) => {
                let normal = Normal::new(0.0, (2.0 / n as f64).sqrt()).expect("positive std");
                Tensor::from_fn(t.shape(), |_| normal.sample(&mut rng)).with_precision(precision)
            }
            None => Tensor::zeros(t.shape()).with_precision(precision),
        };
    }
    params
}

#[cfg(test)]
mod tests;
