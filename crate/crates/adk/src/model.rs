//! The kernel-prediction network: feature extraction at full resolution,
//! feature downsampling to the output grid, per-channel kernel generation,
//! and two-stage kernel normalization, composed into an end-to-end forward
//! pass shared by training and inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::resample;
use crate::tensor::{Scalar, Tensor};

/// Epsilon added to both normalization denominators.
pub const NORM_EPS: f64 = 1e-8;
/// A slice whose raw max-min range falls below this is treated as constant
/// and replaced by a uniform kernel (min-max modes).
pub const DEGENERATE_RANGE: f64 = 1e-12;
/// A slice whose raw sum magnitude falls below this is replaced by a
/// uniform kernel (sum-only mode), guarding the unscaled denominator.
pub const DEGENERATE_SUM: f64 = 1e-6;

/// Network architecture variants (the reduced forms double as ablations).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Three fully independent kernel-generator streams (one per channel).
    Full,
    /// One shared trunk feeding three per-channel branches.
    SharedTrunk,
    /// A single generator stream whose kernels apply to all channels.
    SingleStream,
    /// Like `Full`, but generator residual blocks become plain conv+ReLU
    /// stacks of the same convolution count (no shortcut).
    SimpleGen,
}

impl Variant {
    pub(crate) fn tag(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::SharedTrunk => 1,
            Variant::SingleStream => 2,
            Variant::SimpleGen => 3,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Variant::Full),
            1 => Ok(Variant::SharedTrunk),
            2 => Ok(Variant::SingleStream),
            3 => Ok(Variant::SimpleGen),
            other => Err(Error::Checkpoint(format!("unknown variant tag {other}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SharedTrunk => "shared_trunk",
            Variant::SingleStream => "single_stream",
            Variant::SimpleGen => "simple_gen",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "shared_trunk" => Ok(Variant::SharedTrunk),
            "single_stream" => Ok(Variant::SingleStream),
            "simple_gen" => Ok(Variant::SimpleGen),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected full, shared_trunk, single_stream, or simple_gen)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Kernel normalization modes; the reduced forms double as ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Min-max scale to `[0, 1]`, then scale to unit sum.
    MinMaxSum,
    /// Unit-sum scaling only.
    SumOnly,
    /// Min-max scaling only (kernels need not sum to 1).
    MinMaxOnly,
}

impl NormMode {
    pub(crate) fn tag(self) -> u32 {
        match self {
            NormMode::MinMaxSum => 0,
            NormMode::SumOnly => 1,
            NormMode::MinMaxOnly => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(NormMode::MinMaxSum),
            1 => Ok(NormMode::SumOnly),
            2 => Ok(NormMode::MinMaxOnly),
            other => Err(Error::Checkpoint(format!("unknown norm mode tag {other}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            NormMode::MinMaxSum => "minmax_sum",
            NormMode::SumOnly => "sum_only",
            NormMode::MinMaxOnly => "minmax_only",
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax_sum" => Ok(NormMode::MinMaxSum),
            "sum_only" => Ok(NormMode::SumOnly),
            "minmax_only" => Ok(NormMode::MinMaxOnly),
            other => Err(Error::Config(format!(
                "unknown norm mode '{other}' (expected minmax_sum, sum_only, or minmax_only)"
            ))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Output color channel; each one maps to a generator stream (all three map
/// to the same stream under `Variant::SingleStream`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }
}

/// Everything that determines the network graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Integer downscaling factor (>= 2).
    pub scale: usize,
    /// Color channels; the pipeline is defined for RGB.
    pub channels: usize,
    /// Feature width of every hidden convolution.
    pub feature_width: usize,
    /// Side length of each predicted resampling kernel (odd, >= 3).
    pub kernel_size: usize,
    /// Residual blocks in the full-resolution feature extractor.
    pub backbone_blocks: usize,
    /// Residual blocks in each generator trunk.
    pub trunk_blocks: usize,
    /// Residual blocks in each generator branch.
    pub branch_blocks: usize,
    pub variant: Variant,
    pub norm_mode: NormMode,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a given scale: width 64, kernel `2*scale + 1`, blocks
    /// 4/3/2, full variant, two-stage normalization.
    pub fn new(scale: usize) -> Self {
        ModelConfig {
            scale,
            channels: 3,
            feature_width: 64,
            kernel_size: 2 * scale + 1,
            backbone_blocks: 4,
            trunk_blocks: 3,
            branch_blocks: 2,
            variant: Variant::Full,
            norm_mode: NormMode::MinMaxSum,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::Config(format!(
                "scale must be at least 2, got {}",
                self.scale
            )));
        }
        if self.channels != 3 {
            return Err(Error::Config(format!(
                "pipeline is defined for 3 channels, got {}",
                self.channels
            )));
        }
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd and at least 3, got {}",
                self.kernel_size
            )));
        }
        if self.feature_width == 0 {
            return Err(Error::Config("feature_width must be positive".into()));
        }
        Ok(())
    }
}

// ---- parameter tree ----
//
// The same container shapes hold tensors (`ModelParams`) and graph handles
// (`BoundModel`). Traversal order — and therefore the canonical parameter
// order used by the optimizer and checkpoints — is fixed by `visit`; `map`
// and the mutable visitor follow the identical field order.

#[derive(Debug, Clone, PartialEq)]
struct ConvP<L> {
    w: L,
    b: L,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockP<L> {
    conv1: ConvP<L>,
    conv2: ConvP<L>,
}

/// A generator stage: a stack of blocks followed by a projection conv.
#[derive(Debug, Clone, PartialEq)]
struct StageP<L> {
    blocks: Vec<BlockP<L>>,
    conv: ConvP<L>,
}

#[derive(Debug, Clone, PartialEq)]
struct StreamP<L> {
    trunk: StageP<L>,
    branch: StageP<L>,
}

#[derive(Debug, Clone, PartialEq)]
enum GensP<L> {
    /// One independent stream per channel (r, g, b).
    Independent(Vec<StreamP<L>>),
    /// One trunk shared by three per-channel branches.
    SharedTrunk {
        trunk: StageP<L>,
        branches: Vec<StageP<L>>,
    },
    /// One stream for all channels.
    Single(StreamP<L>),
}

#[derive(Debug, Clone, PartialEq)]
struct TreeP<L> {
    head: ConvP<L>,
    backbone: Vec<BlockP<L>>,
    tail: ConvP<L>,
    down: ConvP<L>,
    gens: GensP<L>,
}

const STREAM_NAMES: [&str; 3] = ["r", "g", "b"];

impl<L> ConvP<L> {
    fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a L)) {
        f(format!("{name}.w"), &self.w);
        f(format!("{name}.b"), &self.b);
    }

    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut impl FnMut(String, &'a mut L)) {
        f(format!("{name}.w"), &mut self.w);
        f(format!("{name}.b"), &mut self.b);
    }

    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> ConvP<M> {
        ConvP {
            w: f(&self.w),
            b: f(&self.b),
        }
    }
}

impl<L> BlockP<L> {
    fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a L)) {
        self.conv1.visit(&format!("{name}.conv1"), f);
        self.conv2.visit(&format!("{name}.conv2"), f);
    }

    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut impl FnMut(String, &'a mut L)) {
        self.conv1.visit_mut(&format!("{name}.conv1"), f);
        self.conv2.visit_mut(&format!("{name}.conv2"), f);
    }

    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> BlockP<M> {
        BlockP {
            conv1: self.conv1.map(f),
            conv2: self.conv2.map(f),
        }
    }
}

impl<L> StageP<L> {
    fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a L)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{name}.block{i}"), f);
        }
        self.conv.visit(&format!("{name}.conv"), f);
    }

    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut impl FnMut(String, &'a mut L)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{name}.block{i}"), f);
        }
        self.conv.visit_mut(&format!("{name}.conv"), f);
    }

    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> StageP<M> {
        StageP {
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            conv: self.conv.map(f),
        }
    }
}

impl<L> StreamP<L> {
    fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a L)) {
        self.trunk.visit(&format!("{name}.trunk"), f);
        self.branch.visit(&format!("{name}.branch"), f);
    }

    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut impl FnMut(String, &'a mut L)) {
        self.trunk.visit_mut(&format!("{name}.trunk"), f);
        self.branch.visit_mut(&format!("{name}.branch"), f);
    }

    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> StreamP<M> {
        StreamP {
            trunk: self.trunk.map(f),
            branch: self.branch.map(f),
        }
    }
}

impl<L> GensP<L> {
    fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a L)) {
        match self {
            GensP::Independent(streams) => {
                for (s, name) in streams.iter().zip(STREAM_NAMES) {
                    s.visit(&format!("gen.{name}"), f);
                }
            }
            GensP::SharedTrunk { trunk, branches } => {
                trunk.visit("gen.shared.trunk", f);
                for (b, name) in branches.iter().zip(STREAM_NAMES) {
                    b.visit(&format!("gen.{name}.branch"), f);
                }
            }
            GensP::Single(stream) => stream.visit("gen.all", f),
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut L)) {
        match self {
            GensP::Independent(streams) => {
                for (s, name) in streams.iter_mut().zip(STREAM_NAMES) {
                    s.visit_mut(&format!("gen.{name}"), f);
                }
            }
            GensP::SharedTrunk { trunk, branches } => {
                trunk.visit_mut("gen.shared.trunk", f);
                for (b, name) in branches.iter_mut().zip(STREAM_NAMES) {
                    b.visit_mut(&format!("gen.{name}.branch"), f);
                }
            }
            GensP::Single(stream) => stream.visit_mut("gen.all", f),
        }
    }

    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> GensP<M> {
        match self {
            GensP::Independent(streams) => {
                GensP::Independent(streams.iter().map(|s| s.map(f)).collect())
            }
            GensP::SharedTrunk { trunk, branches } => GensP::SharedTrunk {
                trunk: trunk.map(f),
                branches: branches.iter().map(|b| b.map(f)).collect(),
            },
            GensP::Single(stream) => GensP::Single(stream.map(f)),
        }
    }
}

impl<L> TreeP<L> {
    fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a L)) {
        self.head.visit("extract.head", f);
        for (i, b) in self.backbone.iter().enumerate() {
            b.visit(&format!("extract.block{i}"), f);
        }
        self.tail.visit("extract.tail", f);
        self.down.visit("down.conv", f);
        self.gens.visit(f);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut L)) {
        self.head.visit_mut("extract.head", f);
        for (i, b) in self.backbone.iter_mut().enumerate() {
            b.visit_mut(&format!("extract.block{i}"), f);
        }
        self.tail.visit_mut("extract.tail", f);
        self.down.visit_mut("down.conv", f);
        self.gens.visit_mut(f);
    }

    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> TreeP<M> {
        TreeP {
            head: self.head.map(f),
            backbone: self.backbone.iter().map(|b| b.map(f)).collect(),
            tail: self.tail.map(f),
            down: self.down.map(f),
            gens: self.gens.map(f),
        }
    }
}

// ---- parameters ----

/// All trainable tensors of one model, together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    config: ModelConfig,
    tree: TreeP<Tensor<T>>,
}

fn init_conv<T: Scalar>(rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize) -> ConvP<Tensor<T>> {
    // He/Kaiming uniform over the fan-in; biases start at zero.
    let fan_in = (ci * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let w = Tensor::from_fn(vec![co, ci, k, k], |_| {
        T::from_f64(rng.random_range(-bound..bound))
    })
    .expect("conv shape is valid");
    let b = Tensor::zeros(vec![co]).expect("bias shape is valid");
    ConvP { w, b }
}

fn init_block<T: Scalar>(rng: &mut ChaCha8Rng, c: usize) -> BlockP<Tensor<T>> {
    BlockP {
        conv1: init_conv(rng, c, c, 3),
        conv2: init_conv(rng, c, c, 3),
    }
}

fn init_stage<T: Scalar>(
    rng: &mut ChaCha8Rng,
    c: usize,
    blocks: usize,
    out: usize,
) -> StageP<Tensor<T>> {
    StageP {
        blocks: (0..blocks).map(|_| init_block(rng, c)).collect(),
        conv: init_conv(rng, out, c, 3),
    }
}

fn init_stream<T: Scalar>(rng: &mut ChaCha8Rng, config: &ModelConfig) -> StreamP<Tensor<T>> {
    let c = config.feature_width;
    let k2 = config.kernel_size * config.kernel_size;
    StreamP {
        trunk: init_stage(rng, c, config.trunk_blocks, c),
        branch: init_stage(rng, c, config.branch_blocks, k2),
    }
}

/// Build a model with He/Kaiming-uniform weights and zero biases,
/// deterministically from `config.seed`.
pub fn build<T: Scalar>(config: &ModelConfig) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.feature_width;
    let s = config.scale;
    let tree = TreeP {
        head: init_conv(&mut rng, c, config.channels, 3),
        backbone: (0..config.backbone_blocks)
            .map(|_| init_block(&mut rng, c))
            .collect(),
        tail: init_conv(&mut rng, c, c, 3),
        down: init_conv(&mut rng, c, c * s * s, 3),
        gens: match config.variant {
            Variant::Full | Variant::SimpleGen => GensP::Independent(
                (0..3).map(|_| init_stream(&mut rng, config)).collect(),
            ),
            Variant::SharedTrunk => GensP::SharedTrunk {
                trunk: init_stage(&mut rng, c, config.trunk_blocks, c),
                branches: (0..3)
                    .map(|_| {
                        init_stage(
                            &mut rng,
                            c,
                            config.branch_blocks,
                            config.kernel_size * config.kernel_size,
                        )
                    })
                    .collect(),
            },
            Variant::SingleStream => GensP::Single(init_stream(&mut rng, config)),
        },
    };
    Ok(ModelParams {
        config: *config,
        tree,
    })
}

impl<T: Scalar> ModelParams<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter tensors with their canonical names, in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.tree.visit(&mut |name, t| out.push((name, t)));
        out
    }

    /// Mutable view in the same canonical order as [`Self::named_params`].
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.tree.visit_mut(&mut |name, t| out.push((name, t)));
        out
    }

    /// Total element count over all parameter tensors.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Element count of generator-stream parameters only (trunks+branches).
    pub fn generator_param_count(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|(name, _)| name.starts_with("gen."))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Convert every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            tree: self.tree.map(&mut |t: &Tensor<T>| t.cast::<U>()),
        }
    }

    /// Register every parameter on a graph — as trainable leaves when
    /// `trainable`, as constants otherwise — returning the handle tree.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Result<BoundModel> {
        let mut ids = Vec::new();
        let mut first_err: Option<Error> = None;
        self.tree.visit(&mut |_, t| {
            if first_err.is_some() {
                return;
            }
            let pushed = if trainable {
                graph.param(t.clone())
            } else {
                graph.input(t.clone())
            };
            match pushed {
                Ok(id) => ids.push(id),
                Err(e) => first_err = Some(e),
            }
        });
        if let Some(e) = first_err {
            return Err(e);
        }
        // `visit` and `map` traverse the identical field order, so handing
        // the collected ids back out in sequence rebuilds the same tree.
        let mut it = ids.into_iter();
        let tree = self
            .tree
            .map(&mut |_| it.next().expect("visit and map cover the same leaves"));
        assert!(it.next().is_none(), "visit and map cover the same leaves");
        Ok(BoundModel {
            config: self.config,
            tree,
        })
    }

    /// Full-resolution feature maps (`H x W x feature_width`).
    pub fn extract_features(&self, hr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.input(hr.clone())?;
        let id = bound.extract_features(&mut g, x)?;
        Ok(g.value(id).clone())
    }

    /// Output-grid feature maps (`H/s x W/s x feature_width`).
    pub fn downsample_features(&self, f_hr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.input(f_hr.clone())?;
        let id = bound.downsample_features(&mut g, x)?;
        Ok(g.value(id).clone())
    }

    /// Unnormalized kernel plane (`h x w x k*k`) for one channel's stream.
    pub fn generate_raw_kernels(&self, f_lr: &Tensor<T>, channel: Channel) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.input(f_lr.clone())?;
        let id = bound.generate_raw_kernels(&mut g, x, channel)?;
        Ok(g.value(id).clone())
    }

    /// End-to-end forward: downscaled image plus the normalized kernel
    /// field that produced it.
    pub fn forward(&self, hr: &Tensor<T>) -> Result<(Tensor<T>, KernelField<T>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.input(hr.clone())?;
        let nodes = bound.forward(&mut g, x)?;
        let out = g.value(nodes.output).clone();
        let field = KernelField::new(g.value(nodes.kernels).clone())?;
        Ok((out, field))
    }
}

// ---- graph construction ----

/// Model parameters registered on a graph, ready to build forward passes.
pub struct BoundModel {
    config: ModelConfig,
    tree: TreeP<NodeId>,
}

/// Handles produced by a bound forward pass.
pub struct ForwardNodes {
    /// Downscaled image, `h x w x 3`.
    pub output: NodeId,
    /// Normalized kernel field, `h x w x 3 x k x k`.
    pub kernels: NodeId,
    /// Raw (unnormalized) kernel planes per channel, each `h x w x k*k`.
    pub raw_kernels: [NodeId; 3],
}

fn conv_node<T: Scalar>(g: &mut Graph<T>, ids: &ConvP<NodeId>, x: NodeId) -> Result<NodeId> {
    g.conv2d(x, ids.w, ids.b)
}

fn res_block<T: Scalar>(g: &mut Graph<T>, ids: &BlockP<NodeId>, x: NodeId) -> Result<NodeId> {
    let a = conv_node(g, &ids.conv1, x)?;
    let r = g.relu(a)?;
    let c = conv_node(g, &ids.conv2, r)?;
    g.add(x, c)
}

fn simple_block<T: Scalar>(g: &mut Graph<T>, ids: &BlockP<NodeId>, x: NodeId) -> Result<NodeId> {
    let a = conv_node(g, &ids.conv1, x)?;
    let r = g.relu(a)?;
    let c = conv_node(g, &ids.conv2, r)?;
    g.relu(c)
}

fn run_stage<T: Scalar>(
    g: &mut Graph<T>,
    ids: &StageP<NodeId>,
    mut x: NodeId,
    simple: bool,
) -> Result<NodeId> {
    for b in &ids.blocks {
        x = if simple {
            simple_block(g, b, x)?
        } else {
            res_block(g, b, x)?
        };
    }
    conv_node(g, &ids.conv, x)
}

impl BoundModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter handles in canonical (named) order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.tree.visit(&mut |_, &id| out.push(id));
        out
    }

    /// Named parameter handles in canonical order.
    pub fn named_param_ids(&self) -> Vec<(String, NodeId)> {
        let mut out = Vec::new();
        self.tree.visit(&mut |name, &id| out.push((name, id)));
        out
    }

    /// Full-resolution features: head conv, residual backbone, tail conv.
    pub fn extract_features<T: Scalar>(&self, g: &mut Graph<T>, hr: NodeId) -> Result<NodeId> {
        let [h, w, c] = *g.shape(hr) else {
            return Err(Error::InvalidShape {
                op: "extract_features",
                msg: format!("expected rank-3 image, got {:?}", g.shape(hr)),
            });
        };
        if c != self.config.channels {
            return Err(Error::InvalidShape {
                op: "extract_features",
                msg: format!("expected {} channels, got {c}", self.config.channels),
            });
        }
        let k = self.config.kernel_size;
        if h < k || w < k {
            return Err(Error::InvalidShape {
                op: "extract_features",
                msg: format!("{h}x{w} input smaller than kernel size {k}"),
            });
        }
        let mut x = conv_node(g, &self.tree.head, hr)?;
        for b in &self.tree.backbone {
            x = res_block(g, b, x)?;
        }
        conv_node(g, &self.tree.tail, x)
    }

    /// Fold features onto the output grid and project back to the feature
    /// width: conv(pixel_unshuffle(F)).
    pub fn downsample_features<T: Scalar>(&self, g: &mut Graph<T>, f_hr: NodeId) -> Result<NodeId> {
        let folded = g.pixel_unshuffle(f_hr, self.config.scale)?;
        conv_node(g, &self.tree.down, folded)
    }

    /// Raw kernel plane (`h x w x k*k`) for one channel.
    pub fn generate_raw_kernels<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        f_lr: NodeId,
        channel: Channel,
    ) -> Result<NodeId> {
        let simple = self.config.variant == Variant::SimpleGen;
        match &self.tree.gens {
            GensP::Independent(streams) => {
                let s = &streams[channel.index()];
                let e = run_stage(g, &s.trunk, f_lr, simple)?;
                run_stage(g, &s.branch, e, simple)
            }
            GensP::SharedTrunk { trunk, branches } => {
                let e = run_stage(g, trunk, f_lr, simple)?;
                run_stage(g, &branches[channel.index()], e, simple)
            }
            GensP::Single(stream) => {
                let e = run_stage(g, &stream.trunk, f_lr, simple)?;
                run_stage(g, &stream.branch, e, simple)
            }
        }
    }

    /// End-to-end forward pass on the graph.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, hr: NodeId) -> Result<ForwardNodes> {
        let [h, w, _] = *g.shape(hr) else {
            return Err(Error::InvalidShape {
                op: "forward",
                msg: format!("expected rank-3 image, got {:?}", g.shape(hr)),
            });
        };
        let s = self.config.scale;
        if h % s != 0 || w % s != 0 {
            return Err(Error::InvalidShape {
                op: "forward",
                msg: format!("{h}x{w} input not divisible by scale {s}"),
            });
        }
        let f_hr = self.extract_features(g, hr)?;
        let f_lr = self.downsample_features(g, f_hr)?;
        let raw: Vec<NodeId> = match &self.tree.gens {
            // One stream feeds all three channels: reuse the same node so
            // its gradient accumulates across uses.
            GensP::Single(_) => {
                let one = self.generate_raw_kernels(g, f_lr, Channel::R)?;
                vec![one; 3]
            }
            _ => Channel::ALL
                .iter()
                .map(|&c| self.generate_raw_kernels(g, f_lr, c))
                .collect::<Result<_>>()?,
        };
        let stacked = g.stack_pre_last(&raw)?; // h x w x 3 x k^2
        let normed = normalize_kernels_on(g, stacked, self.config.norm_mode)?;
        let k = self.config.kernel_size;
        let kshape = vec![h / s, w / s, 3, k, k];
        let kernels = g.reshape(normed, kshape)?;
        let output = g.apply_kernels(hr, kernels, s)?;
        Ok(ForwardNodes {
            output,
            kernels,
            raw_kernels: [raw[0], raw[1], raw[2]],
        })
    }
}

// ---- kernel normalization ----

/// Normalize the last axis of `raw` on the graph according to `mode`.
/// Degenerate slices (constant under min-max modes, near-zero sum under
/// sum-only) become uniform `1/n` kernels and receive zero gradient.
pub fn normalize_kernels_on<T: Scalar>(
    g: &mut Graph<T>,
    raw: NodeId,
    mode: NormMode,
) -> Result<NodeId> {
    let v = g.rc_value(raw);
    let inner = *v.shape().last().expect("rank >= 1");
    let mask: Vec<bool> = v
        .data()
        .chunks_exact(inner)
        .map(|chunk| match mode {
            NormMode::MinMaxSum | NormMode::MinMaxOnly => {
                let mut mn = chunk[0];
                let mut mx = chunk[0];
                for &x in &chunk[1..] {
                    if x < mn {
                        mn = x;
                    }
                    if x > mx {
                        mx = x;
                    }
                }
                (mx - mn).to_f64() < DEGENERATE_RANGE
            }
            NormMode::SumOnly => {
                let sum = chunk.iter().fold(T::zero(), |a, &b| a + b);
                sum.to_f64().abs() < DEGENERATE_SUM
            }
        })
        .collect();
    let any_degenerate = mask.iter().any(|&m| m);
    // Pre-filling degenerate slices with a constant keeps every divisor on
    // the generic path safely away from zero; the post-fill then writes the
    // exact uniform value.
    let cur = if any_degenerate {
        g.mask_fill_slices(raw, mask.clone(), T::one())?
    } else {
        raw
    };
    let eps = T::from_f64(NORM_EPS);
    let normed = match mode {
        NormMode::MinMaxSum => {
            let scaled = minmax_stage(g, cur, eps)?;
            sum_stage(g, scaled, eps)?
        }
        NormMode::MinMaxOnly => minmax_stage(g, cur, eps)?,
        NormMode::SumOnly => sum_stage(g, cur, eps)?,
    };
    if any_degenerate {
        let uniform = T::from_f64(1.0 / inner as f64);
        g.mask_fill_slices(normed, mask, uniform)
    } else {
        Ok(normed)
    }
}

fn minmax_stage<T: Scalar>(g: &mut Graph<T>, x: NodeId, eps: T) -> Result<NodeId> {
    let mn = g.min_last(x)?;
    let mx = g.max_last(x)?;
    let shifted = g.sub(x, mn)?;
    let range = g.sub(mx, mn)?;
    let den = g.add_scalar(range, eps)?;
    g.div(shifted, den)
}

fn sum_stage<T: Scalar>(g: &mut Graph<T>, x: NodeId, eps: T) -> Result<NodeId> {
    let total = g.sum_last(x)?;
    let den = g.add_scalar(total, eps)?;
    g.div(x, den)
}

/// Value-level kernel normalization over the last axis (the graph path is
/// the single implementation; this wraps it).
pub fn normalize_kernels<T: Scalar>(raw: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let id = g.input(raw.clone())?;
    let out = normalize_kernels_on(&mut g, id, mode)?;
    Ok(g.value(out).clone())
}

// ---- kernel field ----

/// Normalized per-pixel, per-channel kernels: `h x w x channels x k x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField<T: Scalar>(Tensor<T>);

impl<T: Scalar> KernelField<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        let [_, _, _, k, k2] = *t.shape() else {
            return Err(Error::InvalidShape {
                op: "KernelField::new",
                msg: format!("expected rank-5 kernel field, got {:?}", t.shape()),
            });
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::InvalidShape {
                op: "KernelField::new",
                msg: format!("kernels must be odd and square, got {k}x{k2}"),
            });
        }
        Ok(KernelField(t))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn kernel_size(&self) -> usize {
        self.0.shape()[3]
    }

    /// One channel's kernels as `h x w x k x k`.
    pub fn channel(&self, channel: Channel) -> Tensor<T> {
        let [h, w, c, k, _] = *self.0.shape() else {
            unreachable!("validated at construction")
        };
        let ch = channel.index();
        let src = self.0.data();
        let mut data = Vec::with_capacity(h * w * k * k);
        for pix in 0..h * w {
            let base = (pix * c + ch) * k * k;
            data.extend_from_slice(&src[base..base + k * k]);
        }
        Tensor::new(vec![h, w, k, k], data).expect("shape arithmetic is exact")
    }

    /// Downscale `hr` with these kernels.
    pub fn apply(&self, hr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
        resample::apply_kernel_field(hr, &self.0, scale)
    }
}
