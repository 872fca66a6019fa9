//! Baseline backbone and early-exit branch graphs.
//!
//! A [`BranchGraph`] is split at a branch point into `common` layers (input up
//! to the branch point), an `exit_head` (branch point to a softmax) and the
//! backbone `tail` (branch point to the backbone softmax). The baseline keeps
//! the whole backbone in `common` and has neither exit head nor tail.

mod weights;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind, Mode, ParamRef, BATCHNORM_EPSILON, BATCHNORM_MOMENTUM};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

pub use weights::{
    decode_weights_into, encode_weights, load_graph, read_weights_into, weights_variant, write_weights, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};

/// Which network to build. V0 branches closest to the input, V3 farthest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    V0,
    V1,
    V2,
    V3,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::V0, Variant::V1, Variant::V2, Variant::V3];
    pub const EARLY_EXIT: [Variant; 4] = [Variant::V0, Variant::V1, Variant::V2, Variant::V3];

    /// Number of conv blocks in the common part (1-based block index of the branch point).
    pub fn branch_block(self) -> Option<usize> {
        match self {
            Variant::Baseline => None,
            Variant::V0 => Some(1),
            Variant::V1 => Some(2),
            Variant::V2 => Some(4),
            Variant::V3 => Some(5),
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::V0 => "v0",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown variant {s:?} (expected baseline, v0, v1, v2 or v3)")))
    }
}

/// One convolution block: conv → ReLU, optionally followed by max-pool(2,2) → batch-norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel_size: usize,
    pub pool_and_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub conv_blocks: Vec<ConvBlock>,
    /// Backbone dense widths; the last must equal `num_classes`.
    pub backbone_fc: Vec<usize>,
    /// Exit-head dense widths; the last must equal `num_classes`.
    pub exit_fc: Vec<usize>,
    pub dropout: f32,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_len: usize,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let block = |out_channels, pool_and_norm| ConvBlock {
            out_channels,
            kernel_size: 3,
            pool_and_norm,
        };
        ArchConfig {
            conv_blocks: vec![
                block(64, false),
                block(64, true),
                block(32, false),
                block(32, true),
                block(16, false),
                block(16, true),
            ],
            backbone_fc: vec![128, 64, NUM_CLASSES],
            exit_fc: vec![64, NUM_CLASSES],
            dropout: 0.3,
            num_classes: NUM_CLASSES,
            input_channels: 2,
            input_len: 128,
            seed: 0,
        }
    }
}

impl ArchConfig {
    pub const CONV_BLOCKS: usize = 6;
    pub const BACKBONE_FC_LAYERS: usize = 3;

    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.len() != Self::CONV_BLOCKS {
            return Err(Error::config(format!(
                "expected exactly {} conv blocks, got {}",
                Self::CONV_BLOCKS,
                self.conv_blocks.len()
            )));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::config(format!("num_classes must be {NUM_CLASSES}")));
        }
        if self.backbone_fc.len() != Self::BACKBONE_FC_LAYERS {
            return Err(Error::config(format!(
                "backbone needs {} dense layers, got {}",
                Self::BACKBONE_FC_LAYERS,
                self.backbone_fc.len()
            )));
        }
        for (name, widths) in [("backbone", &self.backbone_fc), ("exit head", &self.exit_fc)] {
            if widths.last() != Some(&self.num_classes) {
                return Err(Error::config(format!(
                    "{name} must end in a {}-wide dense layer",
                    self.num_classes
                )));
            }
            if widths.contains(&0) {
                return Err(Error::config(format!("{name} has a zero-width dense layer")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.conv_blocks.iter().any(|b| b.out_channels == 0 || b.kernel_size == 0) {
            return Err(Error::config("conv blocks need positive channels and kernel size"));
        }
        if self.input_channels == 0 || self.input_len == 0 {
            return Err(Error::config("input extents must be positive"));
        }
        Ok(())
    }

    fn block_kinds(&self, index: usize, in_channels: usize) -> Vec<LayerKind> {
        let b = self.conv_blocks[index];
        let mut kinds = vec![
            LayerKind::Conv1d {
                in_channels,
                out_channels: b.out_channels,
                kernel_size: b.kernel_size,
                stride: 1,
                padding: b.kernel_size / 2,
            },
            LayerKind::Relu,
        ];
        if b.pool_and_norm {
            kinds.push(LayerKind::MaxPool1d { window: 2, stride: 2 });
            kinds.push(LayerKind::BatchNorm1d {
                channels: b.out_channels,
                momentum: BATCHNORM_MOMENTUM,
                epsilon: BATCHNORM_EPSILON,
            });
        }
        kinds
    }

    /// Final pooling, flatten and the dense classifier for a `[channels, len]` feature map.
    fn classifier_kinds(&self, channels: usize, len: usize, widths: &[usize]) -> Result<Vec<LayerKind>> {
        let pooled = crate::nn::pool_out_len(len, 2, 2)?;
        let mut kinds = vec![LayerKind::MaxPool1d { window: 2, stride: 2 }, LayerKind::Flatten];
        let mut d = channels * pooled;
        for (i, &w) in widths.iter().enumerate() {
            kinds.push(LayerKind::Dense { in_dim: d, out_dim: w });
            if i + 1 < widths.len() {
                kinds.push(LayerKind::Relu);
                kinds.push(LayerKind::Dropout { rate: self.dropout });
            }
            d = w;
        }
        kinds.push(LayerKind::Softmax);
        Ok(kinds)
    }

    /// Backbone layer kinds split after conv block `split` (0 = no split).
    fn backbone_kinds(&self, split: usize) -> Result<(Vec<LayerKind>, Vec<LayerKind>)> {
        let mut head = Vec::new();
        let mut rest = Vec::new();
        let mut channels = self.input_channels;
        for i in 0..self.conv_blocks.len() {
            let kinds = self.block_kinds(i, channels);
            channels = self.conv_blocks[i].out_channels;
            if split == 0 || i < split {
                head.extend(kinds);
            } else {
                rest.extend(kinds);
            }
        }
        let all: Vec<LayerKind> = head.iter().chain(&rest).copied().collect();
        let conv_out = trace_shapes(&[self.input_channels, self.input_len], &all, "backbone")?;
        let classifier = self.classifier_kinds(conv_out[0], conv_out[1], &self.backbone_fc)?;
        if split == 0 {
            head.extend(classifier);
        } else {
            rest.extend(classifier);
        }
        Ok((head, rest))
    }
}

/// Push a per-sample shape through `kinds`, naming the first layer that fails.
fn trace_shapes(input: &[usize], kinds: &[LayerKind], section: &str) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    for (i, k) in kinds.iter().enumerate() {
        shape = k.output_shape(&shape).map_err(|e| {
            Error::config(format!("{section} layer {i} ({}): {e}", k.name()))
        })?;
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "{section} layer {i} ({}) produces an empty output",
                k.name()
            )));
        }
    }
    Ok(shape)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    Common,
    ExitHead,
    Tail,
}

impl Section {
    pub fn name(self) -> &'static str {
        match self {
            Section::Common => "common",
            Section::ExitHead => "exit_head",
            Section::Tail => "tail",
        }
    }
}

/// Which layers an inference runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitPath {
    /// Common layers and exit head.
    Exit,
    /// Common layers, exit head and tail (the exit was rejected).
    Full,
}

/// Identifies one trainable tensor: section, layer index, parameter index.
pub type ParamId = (Section, usize, usize);

#[derive(Debug, Clone)]
pub struct BranchGraph {
    variant: Variant,
    config: ArchConfig,
    pub(crate) common: Vec<Layer>,
    pub(crate) exit_head: Vec<Layer>,
    pub(crate) tail: Vec<Layer>,
    q_cache: Option<Tensor>,
    rng: ChaCha8Rng,
}

fn build_layers(kinds: &[LayerKind], rng: &mut ChaCha8Rng) -> Result<Vec<Layer>> {
    kinds.iter().map(|&k| Layer::new(k, rng)).collect()
}

/// Conv blocks ×6 → max-pool → flatten → dense ×3 (ReLU + dropout between) → softmax.
pub fn build_baseline(cfg: &ArchConfig) -> Result<BranchGraph> {
    cfg.validate()?;
    let (all, _) = cfg.backbone_kinds(0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(BranchGraph {
        variant: Variant::Baseline,
        config: cfg.clone(),
        common: build_layers(&all, &mut rng)?,
        exit_head: Vec::new(),
        tail: Vec::new(),
        q_cache: None,
        rng: dropout_rng(cfg.seed),
    })
}

/// Early-exit variant: the backbone split after conv block `variant.branch_block()`
/// with an exit head of max-pool → flatten → dense → ReLU → dropout → dense → softmax.
///
/// Backbone weights are initialized exactly as in [`build_baseline`] with the same seed.
pub fn build_ee_variant(variant: Variant, cfg: &ArchConfig) -> Result<BranchGraph> {
    let Some(split) = variant.branch_block() else {
        return build_baseline(cfg);
    };
    cfg.validate()?;
    let (common_kinds, tail_kinds) = cfg.backbone_kinds(split)?;
    let q_shape = trace_shapes(&[cfg.input_channels, cfg.input_len], &common_kinds, "common")?;
    let head_kinds = cfg.classifier_kinds(q_shape[0], q_shape[1], &cfg.exit_fc)?;
    trace_shapes(&q_shape, &head_kinds, "exit_head")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let common = build_layers(&common_kinds, &mut rng)?;
    let tail = build_layers(&tail_kinds, &mut rng)?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE417_4EAD);
    let exit_head = build_layers(&head_kinds, &mut head_rng)?;
    Ok(BranchGraph {
        variant,
        config: cfg.clone(),
        common,
        exit_head,
        tail,
        q_cache: None,
        rng: dropout_rng(cfg.seed),
    })
}

/// Build any variant, baseline included.
pub fn build(variant: Variant, cfg: &ArchConfig) -> Result<BranchGraph> {
    build_ee_variant(variant, cfg)
}

fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xD5_0F0D)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn classify(probs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn section_refs(section: Section, layers: &mut [Layer]) -> Vec<ParamRef<'_>> {
    let mut refs = Vec::new();
    for (i, layer) in layers.iter_mut().enumerate() {
        let kind = layer.kind().name();
        for (j, (value, grad)) in layer.params_and_grads().into_iter().enumerate() {
            refs.push(ParamRef {
                name: format!("{}[{i}].{kind}.{j}", section.name()),
                value,
                grad,
            });
        }
    }
    refs
}

fn run(layers: &mut [Layer], x: Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    layers.iter_mut().try_fold(x, |h, layer| layer.forward(&h, mode, rng))
}

impl BranchGraph {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn has_exit(&self) -> bool {
        !self.exit_head.is_empty()
    }

    pub fn section(&self, section: Section) -> &[Layer] {
        match section {
            Section::Common => &self.common,
            Section::ExitHead => &self.exit_head,
            Section::Tail => &self.tail,
        }
    }

    pub(crate) fn section_mut(&mut self, section: Section) -> &mut Vec<Layer> {
        match section {
            Section::Common => &mut self.common,
            Section::ExitHead => &mut self.exit_head,
            Section::Tail => &mut self.tail,
        }
    }

    pub fn layer_kinds(&self, section: Section) -> Vec<LayerKind> {
        self.section(section).iter().map(Layer::kind).collect()
    }

    /// `common ⧺ tail`
    pub fn backbone_kinds(&self) -> Vec<LayerKind> {
        let mut k = self.layer_kinds(Section::Common);
        k.extend(self.layer_kinds(Section::Tail));
        k
    }

    pub fn q_cache(&self) -> Option<&Tensor> {
        self.q_cache.as_ref()
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn input_shape(&self) -> [usize; 2] {
        [self.config.input_channels, self.config.input_len]
    }

    /// Accept `[C, L]` or `[N, C, L]`; returns the batched tensor and whether
    /// the input was batched.
    fn batch_input(&self, x: &Tensor) -> Result<(Tensor, bool)> {
        let [c, l] = self.input_shape();
        match *x.shape() {
            [xc, xl] if xc == c && xl == l => Ok((x.clone().reshape(&[1, c, l])?, false)),
            [_, xc, xl] if xc == c && xl == l => Ok((x.clone(), true)),
            _ => Err(Error::config(format!(
                "graph input must be [{c}, {l}] or [N, {c}, {l}], got {:?}",
                x.shape()
            ))),
        }
    }

    fn unbatch(t: Tensor, batched: bool) -> Result<Tensor> {
        if batched {
            Ok(t)
        } else {
            let shape = t.shape()[1..].to_vec();
            t.reshape(&shape)
        }
    }

    /// Common layers then exit head. Saves the common output as Q.
    pub fn forward_pass1(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if !self.has_exit() {
            return Err(Error::Contract(format!(
                "{} graph has no exit head",
                self.variant
            )));
        }
        let (xb, batched) = self.batch_input(x)?;
        let q = run(&mut self.common, xb, mode, &mut self.rng)?;
        self.q_cache = Some(Self::unbatch(q.clone(), batched)?);
        let probs = run(&mut self.exit_head, q, mode, &mut self.rng)?;
        Self::unbatch(probs, batched)
    }

    /// Backbone tail starting from the saved Q; the common layers are not re-run.
    /// Consumes the cache.
    pub fn forward_pass2(&mut self, mode: Mode) -> Result<Tensor> {
        if !self.has_exit() {
            return Err(Error::Contract(format!("{} graph has no tail", self.variant)));
        }
        let q = self
            .q_cache
            .take()
            .ok_or_else(|| Error::state("forward_pass2 called with an empty Q cache"))?;
        let batched = q.rank() == 3;
        let qb = if batched {
            q
        } else {
            let mut s = vec![1];
            s.extend_from_slice(q.shape());
            q.reshape(&s)?
        };
        let probs = run(&mut self.tail, qb, mode, &mut self.rng)?;
        Self::unbatch(probs, batched)
    }

    /// Monolithic `common ⧺ tail` forward without touching the Q cache.
    pub fn forward_backbone(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (xb, batched) = self.batch_input(x)?;
        let q = run(&mut self.common, xb, mode, &mut self.rng)?;
        let probs = run(&mut self.tail, q, mode, &mut self.rng)?;
        Self::unbatch(probs, batched)
    }

    /// Backpropagate through one section, last layer first, skipping a
    /// trailing softmax (the incoming gradient is taken with respect to its
    /// logits). Returns the gradient at the section input.
    pub fn backward_section(&mut self, section: Section, grad: Tensor, skip_softmax: bool) -> Result<Tensor> {
        let layers = self.section_mut(section);
        let mut end = layers.len();
        if skip_softmax && matches!(layers.last(), Some(Layer::Softmax(_))) {
            end -= 1;
        }
        layers[..end]
            .iter_mut()
            .rev()
            .try_fold(grad, |g, layer| layer.backward(&g))
    }

    pub fn zero_grad(&mut self) {
        for l in self.common.iter_mut().chain(&mut self.exit_head).chain(&mut self.tail) {
            l.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        for l in self.common.iter_mut().chain(&mut self.exit_head).chain(&mut self.tail) {
            l.clear_cache();
        }
        self.q_cache = None;
    }

    /// Parameters updated by the exit loss: common layers and exit head.
    pub fn theta1(&mut self) -> Vec<ParamRef<'_>> {
        let mut refs = section_refs(Section::Common, &mut self.common);
        refs.extend(section_refs(Section::ExitHead, &mut self.exit_head));
        refs
    }

    /// Parameters updated by the backbone loss: the tail only.
    pub fn theta2(&mut self) -> Vec<ParamRef<'_>> {
        section_refs(Section::Tail, &mut self.tail)
    }

    /// Every parameter of the graph.
    pub fn all_params(&mut self) -> Vec<ParamRef<'_>> {
        let mut refs = section_refs(Section::Common, &mut self.common);
        refs.extend(section_refs(Section::ExitHead, &mut self.exit_head));
        refs.extend(section_refs(Section::Tail, &mut self.tail));
        refs
    }

    pub fn param_ids(&self, section: Section) -> Vec<ParamId> {
        self.section(section)
            .iter()
            .enumerate()
            .flat_map(|(i, l)| (0..l.params().len()).map(move |j| (section, i, j)))
            .collect()
    }

    pub fn theta1_ids(&self) -> Vec<ParamId> {
        let mut ids = self.param_ids(Section::Common);
        ids.extend(self.param_ids(Section::ExitHead));
        ids
    }

    pub fn theta2_ids(&self) -> Vec<ParamId> {
        self.param_ids(Section::Tail)
    }

    /// Snapshot of every parameter tensor of a section.
    pub fn snapshot(&self, section: Section) -> Vec<Tensor> {
        self.section(section)
            .iter()
            .flat_map(|l| l.params().into_iter().cloned())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.common
            .iter()
            .chain(&self.exit_head)
            .chain(&self.tail)
            .map(|l| l.params().iter().map(|p| p.len()).sum::<usize>())
            .sum()
    }

    /// Per-sample output shape of a section.
    pub fn section_output_shape(&self, section: Section) -> Result<Vec<usize>> {
        let input = self.section_input_shape(section)?;
        trace_shapes(&input, &self.layer_kinds(section), section.name())
    }

    fn section_input_shape(&self, section: Section) -> Result<Vec<usize>> {
        match section {
            Section::Common => Ok(self.input_shape().to_vec()),
            Section::ExitHead | Section::Tail => self.section_output_shape(Section::Common),
        }
    }

    /// Closed-form per-sample operation count of one section.
    pub fn section_flops(&self, section: Section) -> u64 {
        let mut shape = self.section_input_shape(section).expect("validated at build");
        let mut total = 0;
        for k in self.layer_kinds(section) {
            total += k.flops(&shape).expect("validated at build");
            shape = k.output_shape(&shape).expect("validated at build");
        }
        total
    }

    /// Operations along an inference path, excluding the entropy gate.
    pub fn flop_count(&self, path: ExitPath) -> u64 {
        let common = self.section_flops(Section::Common);
        let head = self.section_flops(Section::ExitHead);
        match path {
            ExitPath::Exit => common + head,
            ExitPath::Full => common + head + self.section_flops(Section::Tail),
        }
    }

    /// Operations of a monolithic backbone forward.
    pub fn backbone_flops(&self) -> u64 {
        self.section_flops(Section::Common) + self.section_flops(Section::Tail)
    }
}
