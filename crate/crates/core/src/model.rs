//! Network assembly: VGG-style 1-D CNNs built from the layer set, the
//! two reference architectures, and transfer-learning surgery.
//!
//! A network is a flat sequence of convolution blocks (conv -> relu ->
//! dropout -> pool) followed by flatten and a three-layer fully connected
//! head. Convolutions all use kernel 3 / pad 1 / stride 1, pooling always
//! halves the length, and every dropout uses the same rate.

use crate::error::{Error, Result};
use crate::layers::{
    Conv1d, Dense, Dropout, Flatten, LayerKind, LayerNode, MaxPool1d, Mode, Relu,
};
use crate::tensor::{Rng, Scalar, Tensor};

/// Dropout rate used throughout both architectures.
pub const DROPOUT_P: f64 = 0.2;

/// Number of output classes (locomotion modes).
pub const NUM_CLASSES: usize = 10;

/// Which reference architecture a network instantiates.
///
/// `Custom` covers reduced networks used by fast tests; the two named
/// variants pin the reference channel progressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchId {
    Dep,
    Ind,
    Custom,
}

impl ArchId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::Dep => "dep",
            ArchId::Ind => "ind",
            ArchId::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dep" => Ok(ArchId::Dep),
            "ind" => Ok(ArchId::Ind),
            "custom" => Ok(ArchId::Custom),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Channel progression and head width of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Output channels of each convolution block, in order.
    pub block_channels: Vec<usize>,
    /// Width of the two hidden fully connected layers.
    pub hidden_width: usize,
    /// Output classes.
    pub classes: usize,
}

impl NetworkConfig {
    /// Subject-dependent architecture: four blocks, 1024-wide head.
    pub fn dep() -> Self {
        NetworkConfig {
            block_channels: vec![64, 128, 256, 512],
            hidden_width: 1024,
            classes: NUM_CLASSES,
        }
    }

    /// Subject-independent architecture: five blocks, 2048-wide head.
    pub fn ind() -> Self {
        NetworkConfig {
            block_channels: vec![64, 128, 256, 512, 1024],
            hidden_width: 2048,
            classes: NUM_CLASSES,
        }
    }

    pub fn for_arch(arch: ArchId) -> Option<Self> {
        match arch {
            ArchId::Dep => Some(NetworkConfig::dep()),
            ArchId::Ind => Some(NetworkConfig::ind()),
            ArchId::Custom => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() {
            return Err(Error::Config("network needs at least one block".into()));
        }
        if self.block_channels.iter().any(|&c| c == 0) || self.hidden_width == 0 {
            return Err(Error::Config("zero-width layer in network config".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Sequence length after each pooling stage.
///
/// Fails when any stage would pool a sequence shorter than 2, which is a
/// configuration problem (window too short for the block count).
pub fn pooled_lengths(window_len: usize, blocks: usize) -> Result<Vec<usize>> {
    let mut lengths = Vec::with_capacity(blocks);
    let mut l = window_len;
    for i in 0..blocks {
        if l < 2 {
            return Err(Error::Config(format!(
                "window of {window_len} samples is too short for {blocks} pooling stages \
                 (length {l} entering stage {})",
                i + 1
            )));
        }
        l /= 2;
        lengths.push(l);
    }
    Ok(lengths)
}

/// A fully assembled network with its construction parameters.
#[derive(Debug)]
pub struct Network<T: Scalar> {
    pub arch: ArchId,
    pub config: NetworkConfig,
    pub in_channels: usize,
    pub window_len: usize,
    pub layers: Vec<LayerNode<T>>,
}

/// Builds one of the two reference architectures.
pub fn build_network<T: Scalar>(
    arch: ArchId,
    in_channels: usize,
    window_len: usize,
    rng: &mut Rng,
) -> Result<Network<T>> {
    let config = NetworkConfig::for_arch(arch)
        .ok_or_else(|| Error::Config("custom architecture needs an explicit config".into()))?;
    build_with_config(arch, config, in_channels, window_len, rng)
}

/// Builds a network from an explicit channel progression.
pub fn build_custom_network<T: Scalar>(
    config: NetworkConfig,
    in_channels: usize,
    window_len: usize,
    rng: &mut Rng,
) -> Result<Network<T>> {
    build_with_config(ArchId::Custom, config, in_channels, window_len, rng)
}

fn build_with_config<T: Scalar>(
    arch: ArchId,
    config: NetworkConfig,
    in_channels: usize,
    window_len: usize,
    rng: &mut Rng,
) -> Result<Network<T>> {
    config.validate()?;
    if in_channels == 0 {
        return Err(Error::Config("network needs at least one input channel".into()));
    }
    let lengths = pooled_lengths(window_len, config.block_channels.len())?;

    let mut layers: Vec<LayerNode<T>> = Vec::new();
    let mut c_in = in_channels;
    for (i, &c_out) in config.block_channels.iter().enumerate() {
        let b = i + 1;
        layers.push(LayerNode::new(
            format!("block{b}.conv"),
            LayerKind::Conv1d(Conv1d::new(c_in, c_out, rng)?),
        ));
        layers.push(LayerNode::new(
            format!("block{b}.relu"),
            LayerKind::Relu(Relu::new()),
        ));
        layers.push(LayerNode::new(
            format!("block{b}.dropout"),
            LayerKind::Dropout(Dropout::new(DROPOUT_P)?),
        ));
        layers.push(LayerNode::new(
            format!("block{b}.pool"),
            LayerKind::MaxPool1d(MaxPool1d::new()),
        ));
        c_in = c_out;
    }

    let flat = c_in * lengths[lengths.len() - 1];
    layers.push(LayerNode::new("flatten", LayerKind::Flatten(Flatten::new())));
    layers.push(LayerNode::new(
        "fc1",
        LayerKind::Dense(Dense::new(flat, config.hidden_width, rng)?),
    ));
    layers.push(LayerNode::new("fc1.relu", LayerKind::Relu(Relu::new())));
    layers.push(LayerNode::new(
        "fc1.dropout",
        LayerKind::Dropout(Dropout::new(DROPOUT_P)?),
    ));
    layers.push(LayerNode::new(
        "fc2",
        LayerKind::Dense(Dense::new(config.hidden_width, config.hidden_width, rng)?),
    ));
    layers.push(LayerNode::new("fc2.relu", LayerKind::Relu(Relu::new())));
    layers.push(LayerNode::new(
        "fc2.dropout",
        LayerKind::Dropout(Dropout::new(DROPOUT_P)?),
    ));
    layers.push(LayerNode::new(
        "fc3",
        LayerKind::Dense(Dense::new(config.hidden_width, config.classes, rng)?),
    ));

    Ok(Network {
        arch,
        config,
        in_channels,
        window_len,
        layers,
    })
}

impl<T: Scalar> Network<T> {
    /// Width of the flattened feature vector entering the head.
    pub fn flatten_width(&self) -> usize {
        let lengths = pooled_lengths(self.window_len, self.config.block_channels.len())
            .expect("validated at construction");
        self.config.block_channels[self.config.block_channels.len() - 1]
            * lengths[lengths.len() - 1]
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        if x.shape() != [x.shape()[0], self.in_channels, self.window_len] {
            return Err(Error::InvalidShape(format!(
                "network built for [batch, {}, {}], got {:?}",
                self.in_channels,
                self.window_len,
                x.shape()
            )));
        }
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, mode, rng)?;
        }
        Ok(cur)
    }

    /// Inference forward pass; no dropout, no caching, no randomness.
    pub fn infer(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        // Eval mode never reads the rng, so a fixed throwaway is fine
        self.forward(x, Mode::Eval, &mut Rng::seed(0))
    }

    /// Backpropagates from the loss gradient at the logits down to the
    /// input, accumulating parameter gradients along the way.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = dlogits.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    /// Parameter tensors with fully qualified names, in layer order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Mutable parameter/gradient slots in the same order as [`params`].
    pub fn param_slots(&mut self) -> Vec<crate::layers::ParamSlot<'_, T>> {
        self.layers.iter_mut().flat_map(|l| l.param_slots()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Copies of all parameter tensors, for checkpointing.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) -> Result<()> {
        let mut slots = self.param_slots();
        if slots.len() != snapshot.len() {
            return Err(Error::InvalidState(format!(
                "snapshot holds {} tensors, network has {} params",
                snapshot.len(),
                slots.len()
            )));
        }
        for (slot, saved) in slots.iter_mut().zip(snapshot) {
            if slot.value.shape() != saved.shape() {
                return Err(Error::InvalidState(format!(
                    "snapshot shape {:?} does not match param {} {:?}",
                    saved.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            *slot.value = saved.clone();
        }
        Ok(())
    }

    /// Index of the flatten node, the boundary between the convolutional
    /// feature extractor and the fully connected head.
    fn head_start(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Flatten(_)))
            .expect("every built network has a flatten node")
    }

    /// Derives a transfer-learning network from a pretrained one.
    ///
    /// The feature extractor (everything before flatten) is copied and
    /// frozen. The head is copied too; with `reinit_head` its dense
    /// layers are re-initialized from `rng` instead, which is the default
    /// protocol. Caches and gradients do not carry over.
    pub fn transfer_surgery(&self, reinit_head: bool, rng: &mut Rng) -> Result<Network<T>> {
        let boundary = self.head_start();
        let mut layers: Vec<LayerNode<T>> = Vec::with_capacity(self.layers.len());
        for (i, src) in self.layers.iter().enumerate() {
            let kind = match &src.kind {
                LayerKind::Conv1d(l) => LayerKind::Conv1d(Conv1d::from_parts(
                    l.w.clone(),
                    l.b.clone(),
                )?),
                LayerKind::MaxPool1d(_) => LayerKind::MaxPool1d(MaxPool1d::new()),
                LayerKind::Relu(_) => LayerKind::Relu(Relu::new()),
                LayerKind::Dropout(l) => LayerKind::Dropout(Dropout::new(l.p())?),
                LayerKind::Flatten(_) => LayerKind::Flatten(Flatten::new()),
                LayerKind::Dense(l) => {
                    if i >= boundary && reinit_head {
                        LayerKind::Dense(Dense::new(l.in_features(), l.out_features(), rng)?)
                    } else {
                        LayerKind::Dense(Dense::from_parts(l.w.clone(), l.b.clone())?)
                    }
                }
            };
            let mut node = LayerNode::new(src.name.clone(), kind);
            node.trainable = i >= boundary;
            layers.push(node);
        }
        Ok(Network {
            arch: self.arch,
            config: self.config.clone(),
            in_channels: self.in_channels,
            window_len: self.window_len,
            layers,
        })
    }
}
