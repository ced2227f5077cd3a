use std::hash::{Hash, Hasher};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{cfg_err, dim_err, Error, Result};
use crate::tensor::{self, ConvSpec, Tensor};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OpKind {
    Input,
    Identity,
    Conv {
        spec: ConvSpec,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    TransposedConv {
        spec: ConvSpec,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    MaxPool {
        window: Vec<usize>,
    },
    Relu,
    Concat,
}

impl OpKind {
    pub fn label(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Identity => "identity",
            OpKind::Conv { .. } => "conv",
            OpKind::TransposedConv { .. } => "transposed_conv",
            OpKind::MaxPool { .. } => "max_pool",
            OpKind::Relu => "relu",
            OpKind::Concat => "concat",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: OpKind,
    pub inputs: Vec<NodeId>,
    /// Output channel count, fixed at build time.
    pub channels: usize,
}

/// Named parameter tensors, addressed by insertion index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params(IndexMap<String, Tensor>);

impl Params {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Tensor)>) -> Result<Self> {
        let mut p = Params::default();
        for (name, t) in pairs {
            p.insert(name, t)?;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.0.get_index_of(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.0.get_index(id).map(|(k, _)| k.as_str()).expect("param id")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.0.values()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.0.values_mut()
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    fn insert(&mut self, name: String, t: Tensor) -> Result<ParamId> {
        if self.0.contains_key(&name) {
            return Err(cfg_err!("duplicate parameter name '{name}'"));
        }
        Ok(self.0.insert_full(name, t).0)
    }
}

/// Parameter gradients (indexed like [`Params`]) and the gradient with
/// respect to the graph input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

/// A static, topologically ordered operation graph with one input and one
/// output. Node 0 is always the input.
#[derive(Debug, Clone)]
pub struct OpGraph {
    nodes: Vec<Node>,
    params: Params,
    output: NodeId,
    spatial_dims: usize,
    spatial_divisor: usize,
    activations: Option<Vec<Tensor>>,
}

impl OpGraph {
    pub fn new(input_channels: usize, spatial_dims: usize) -> Self {
        OpGraph {
            nodes: vec![Node {
                name: "input".into(),
                kind: OpKind::Input,
                inputs: vec![],
                channels: input_channels,
            }],
            params: Params::default(),
            output: 0,
            spatial_dims,
            spatial_divisor: 1,
            activations: None,
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn input_channels(&self) -> usize {
        self.nodes[0].channels
    }

    pub fn output_channels(&self) -> usize {
        self.nodes[self.output].channels
    }

    pub fn spatial_dims(&self) -> usize {
        self.spatial_dims
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Replaces every parameter tensor; names and shapes must match.
    pub fn load_params(&mut self, params: Params) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(dim_err!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            ));
        }
        for ((n0, t0), (n1, t1)) in self.params.iter().zip(params.iter()) {
            if n0 != n1 || t0.shape() != t1.shape() {
                return Err(dim_err!(
                    "parameter '{n1}' {:?} does not match '{n0}' {:?}",
                    t1.shape(),
                    t0.shape()
                ));
            }
        }
        self.params = params;
        self.activations = None;
        Ok(())
    }

    /// Requires every input spatial extent to be a multiple of `divisor`.
    pub fn require_divisible(&mut self, divisor: usize) {
        self.spatial_divisor = divisor.max(1);
    }

    pub fn spatial_divisor(&self) -> usize {
        self.spatial_divisor
    }

    pub fn set_output(&mut self, id: NodeId) {
        assert!(id < self.nodes.len());
        self.output = id;
    }

    fn push(&mut self, name: impl Into<String>, kind: OpKind, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            kind,
            inputs,
            channels,
        });
        self.output = self.nodes.len() - 1;
        self.activations = None;
        self.output
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(cfg_err!("node {id} does not exist yet"));
        }
        Ok(())
    }

    fn check_conv_input(&self, name: &str, input: NodeId, spec: &ConvSpec) -> Result<()> {
        self.check_node(input)?;
        spec.validate()?;
        if spec.spatial_dims() != self.spatial_dims {
            return Err(cfg_err!(
                "layer '{name}' has {} spatial dims, graph has {}",
                spec.spatial_dims(),
                self.spatial_dims
            ));
        }
        if self.nodes[input].channels != spec.in_channels {
            return Err(dim_err!(
                "layer '{name}' expects {} input channels, node '{}' provides {}",
                spec.in_channels,
                self.nodes[input].name,
                self.nodes[input].channels
            ));
        }
        Ok(())
    }

    fn new_params(&mut self, name: &str, weight_shape: Vec<usize>, spec: &ConvSpec) -> Result<(ParamId, Option<ParamId>)> {
        let weight = self
            .params
            .insert(format!("{name}.weight"), Tensor::zeros(&weight_shape))?;
        let bias = if spec.bias {
            Some(
                self.params
                    .insert(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))?,
            )
        } else {
            None
        };
        Ok((weight, bias))
    }

    /// Adds a convolution with freshly allocated (zero) parameters
    /// `<name>.weight` and `<name>.bias`.
    pub fn conv(&mut self, name: &str, input: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.check_conv_input(name, input, &spec)?;
        let (weight, bias) = self.new_params(name, spec.weight_shape(), &spec)?;
        let channels = spec.out_channels;
        Ok(self.push(name, OpKind::Conv { spec, weight, bias }, vec![input], channels))
    }

    /// Adds a convolution reusing existing parameters.
    pub fn conv_shared(
        &mut self,
        name: &str,
        input: NodeId,
        spec: ConvSpec,
        weight: ParamId,
        bias: Option<ParamId>,
    ) -> Result<NodeId> {
        self.check_conv_input(name, input, &spec)?;
        if weight >= self.params.len() || bias.is_some_and(|b| b >= self.params.len()) {
            return Err(cfg_err!("layer '{name}' references a missing parameter"));
        }
        if self.params.get(weight).shape() != spec.weight_shape() {
            return Err(dim_err!("shared weight for '{name}' has the wrong shape"));
        }
        if spec.bias != bias.is_some() {
            return Err(cfg_err!("layer '{name}' bias flag does not match the supplied bias"));
        }
        let channels = spec.out_channels;
        Ok(self.push(name, OpKind::Conv { spec, weight, bias }, vec![input], channels))
    }

    pub fn transposed_conv(&mut self, name: &str, input: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.check_conv_input(name, input, &spec)?;
        if spec.kernel != spec.stride || spec.dilation.iter().any(|&r| r != 1) {
            return Err(cfg_err!(
                "layer '{name}': transposed convolution needs kernel == stride and rate 1"
            ));
        }
        let (weight, bias) = self.new_params(name, spec.transposed_weight_shape(), &spec)?;
        let channels = spec.out_channels;
        Ok(self.push(
            name,
            OpKind::TransposedConv { spec, weight, bias },
            vec![input],
            channels,
        ))
    }

    pub fn max_pool(&mut self, name: &str, input: NodeId, window: Vec<usize>) -> Result<NodeId> {
        self.check_node(input)?;
        if window.len() != self.spatial_dims {
            return Err(cfg_err!("pool '{name}' window rank does not match the graph"));
        }
        let channels = self.nodes[input].channels;
        Ok(self.push(name, OpKind::MaxPool { window }, vec![input], channels))
    }

    pub fn relu(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        let channels = self.nodes[input].channels;
        Ok(self.push(name, OpKind::Relu, vec![input], channels))
    }

    pub fn identity(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.check_node(input)?;
        let channels = self.nodes[input].channels;
        Ok(self.push(name, OpKind::Identity, vec![input], channels))
    }

    pub fn concat(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(cfg_err!("concat '{name}' needs at least one input"));
        }
        for &i in inputs {
            self.check_node(i)?;
        }
        let channels = inputs.iter().map(|&i| self.nodes[i].channels).sum();
        Ok(self.push(name, OpKind::Concat, inputs.to_vec(), channels))
    }

    /// Count of nodes of the given kind label.
    pub fn count_kind(&self, pred: impl Fn(&OpKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.ndim() != self.spatial_dims + 2 {
            return Err(dim_err!(
                "graph input must be (batch, channels, {} spatial dims), got {:?}",
                self.spatial_dims,
                input.shape()
            ));
        }
        if input.channels() != self.input_channels() {
            return Err(dim_err!(
                "graph expects {} input channels, got {}",
                self.input_channels(),
                input.channels()
            ));
        }
        if let Some((d, &e)) = input
            .spatial()
            .iter()
            .enumerate()
            .find(|(_, &e)| e % self.spatial_divisor != 0)
        {
            let level = self.spatial_divisor.trailing_zeros();
            return Err(Error::Config(format!(
                "input extent {e} in spatial dim {d} is not divisible by {}, required by the {level} downsampling level(s)",
                self.spatial_divisor
            )));
        }
        Ok(())
    }

    fn eval_node(&self, id: NodeId, acts: &[Tensor]) -> Result<Tensor> {
        let node = &self.nodes[id];
        let arg = |k: usize| &acts[node.inputs[k]];
        let out = match &node.kind {
            OpKind::Input => unreachable!("input is seeded"),
            OpKind::Identity => Ok(arg(0).clone()),
            OpKind::Conv { spec, weight, bias } => tensor::conv_nd(
                arg(0),
                self.params.get(*weight),
                bias.map(|b| self.params.get(b)),
                spec,
            ),
            OpKind::TransposedConv { spec, weight, bias } => tensor::transposed_conv_nd(
                arg(0),
                self.params.get(*weight),
                bias.map(|b| self.params.get(b)),
                spec,
            ),
            OpKind::MaxPool { window } => tensor::max_pool_nd(arg(0), window),
            OpKind::Relu => Ok(tensor::relu(arg(0))),
            OpKind::Concat => {
                let parts: Vec<&Tensor> = node.inputs.iter().map(|&i| &acts[i]).collect();
                tensor::concat_channels(&parts)
            }
        };
        out.map_err(|e| name_error(&node.name, e))
    }

    /// Evaluates every node, returning all activations in node order.
    fn run(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.nodes.len());
        acts.push(input.clone());
        for id in 1..self.nodes.len() {
            let out = self.eval_node(id, &acts)?;
            acts.push(out);
        }
        Ok(acts)
    }

    /// Forward pass retaining activations for [`OpGraph::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let acts = self.run(input)?;
        let out = acts[self.output].clone();
        self.activations = Some(acts);
        Ok(out)
    }

    /// Forward pass without retaining activations; usable concurrently.
    pub fn evaluate(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        // Only the nodes the output depends on need evaluating, but the
        // builders never emit dead nodes, so run everything.
        let mut acts = self.run(input)?;
        Ok(acts.swap_remove(self.output))
    }

    /// Reverse-mode pass from `output_grad`, using the activations of the most
    /// recent [`OpGraph::forward`].
    pub fn backward(&self, output_grad: &Tensor) -> Result<Gradients> {
        let acts = self
            .activations
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        if output_grad.shape() != acts[self.output].shape() {
            return Err(dim_err!(
                "output gradient shaped {:?}, output is {:?}",
                output_grad.shape(),
                acts[self.output].shape()
            ));
        }
        let mut param_grads: Vec<Tensor> = self.params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(output_grad.clone());

        for id in (1..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let x = &acts[node.inputs[0]];
            let input_grads: Vec<Tensor> = match &node.kind {
                OpKind::Input => unreachable!(),
                OpKind::Identity => vec![g],
                OpKind::Relu => vec![tensor::relu_backward(x, &g).map_err(|e| name_error(&node.name, e))?],
                OpKind::MaxPool { window } => {
                    vec![tensor::max_pool_backward(x, window, &g).map_err(|e| name_error(&node.name, e))?]
                }
                OpKind::Concat => {
                    let channels: Vec<usize> = node.inputs.iter().map(|&i| acts[i].channels()).collect();
                    tensor::concat_channels_backward(&g, &channels).map_err(|e| name_error(&node.name, e))?
                }
                OpKind::Conv { spec, weight, bias } | OpKind::TransposedConv { spec, weight, bias } => {
                    let w = self.params.get(*weight);
                    let cg = match node.kind {
                        OpKind::Conv { .. } => tensor::conv_nd_backward(x, w, spec, &g),
                        _ => tensor::transposed_conv_nd_backward(x, w, spec, &g),
                    }
                    .map_err(|e| name_error(&node.name, e))?;
                    param_grads[*weight].add_assign(&cg.weight)?;
                    if let (Some(b), Some(db)) = (bias, cg.bias.as_ref()) {
                        param_grads[*b].add_assign(db)?;
                    }
                    vec![cg.input]
                }
            };
            for (&src, ig) in node.inputs.iter().zip(input_grads) {
                match &mut grads[src] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot => *slot = Some(ig),
                }
            }
        }
        let input = grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(acts[0].shape()));
        Ok(Gradients {
            params: param_grads,
            input,
        })
    }

    /// Hash of every ReLU mask and max-pool argmax pattern for `input`; two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub(crate) fn kink_signature(&self, input: &Tensor) -> Result<u64> {
        let acts = self.run(input)?;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.kind {
                OpKind::Relu => {
                    for &v in acts[node.inputs[0]].data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                OpKind::MaxPool { window } => {
                    tensor::max_pool_argmax(&acts[node.inputs[0]], window)?.hash(&mut h);
                }
                _ => {}
            }
        }
        Ok(h.finish())
    }
}

fn name_error(node: &str, e: Error) -> Error {
    match e {
        Error::Dimension(m) => Error::Dimension(format!("node '{node}': {m}")),
        Error::Config(m) => Error::Config(format!("node '{node}': {m}")),
        other => other,
    }
}
