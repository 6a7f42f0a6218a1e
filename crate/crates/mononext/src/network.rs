//! The detection network: a backbone that brings the image down to the S×S
//! grid resolution, a sequence of ConvNext-style blocks, and five task heads
//! (confidence, class, position, dimension, yaw) whose concatenated outputs
//! form the prediction [`GridTensor`].
//!
//! Layout of each ConvNext block: Conv(k, N) → sub-block(N) → LayerNorm,
//! where the sub-block is Conv(7, N) → LayerNorm → Conv(1, 4N) → GELU →
//! Conv(1, N) added back onto its input. The 7×7 convolution is depthwise
//! unless configured dense.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, GridTensor};
use crate::nn::{
    gelu, gelu_backward, relu6, relu6_backward, sigmoid, sigmoid_backward, softmax_channels,
    softmax_channels_backward, AdamW, Conv2d, DepthwiseConv2d, LayerNorm, Param, ParamVisitor,
};
use crate::scalar::{real, Real};
use ndarray::{s, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Inverted-residual bottleneck stack (expansion 6, depthwise 3×3),
    /// stride 32. Channel normalization stands in for batch statistics so
    /// results do not depend on batch composition.
    MobilenetV2Like,
    /// A short stack of stride-2 convolutions for desk-scale runs.
    TinyBackbone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input image size (height, width, channels).
    pub input_size: (usize, usize, usize),
    pub backbone: BackboneKind,
    /// Per-block (filters, kernel); the final entry must keep 128 filters.
    pub block_schedule: Vec<(usize, usize)>,
    /// (filters, kernel) of the per-head block.
    pub head_block: (usize, usize),
    pub num_classes: usize,
    /// Depthwise 7×7 inside sub-blocks (dense when false).
    pub depthwise_k7: bool,
    /// Initial bias of the vertical-position channel in sigmoid units.
    /// Object centers sit low in the default vertical range (ty ≈ 0.2 for
    /// cars); starting the prediction there keeps the IoU term out of its
    /// zero-gradient region at the beginning of training.
    pub ty_prior: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: (480, 480, 3),
            backbone: BackboneKind::MobilenetV2Like,
            block_schedule: vec![(512, 3), (256, 4), (256, 3), (128, 3)],
            head_block: (256, 1),
            num_classes: 1,
            depthwise_k7: true,
            ty_prior: 0.2,
        }
    }
}

impl NetworkConfig {
    /// Full-size configuration with the lightweight test backbone.
    pub fn with_tiny_backbone() -> Self {
        NetworkConfig {
            backbone: BackboneKind::TinyBackbone,
            ..NetworkConfig::default()
        }
    }

    /// Desk-scale preset: tiny backbone and a narrow block schedule. Keeps
    /// the full architecture (four blocks, sub-blocks, five heads) at a
    /// fraction of the compute.
    pub fn tiny() -> Self {
        NetworkConfig {
            input_size: (480, 480, 3),
            backbone: BackboneKind::TinyBackbone,
            block_schedule: vec![(64, 3), (64, 3), (64, 3), (128, 3)],
            head_block: (64, 1),
            num_classes: 1,
            depthwise_k7: true,
            ty_prior: 0.2,
        }
    }

    pub fn validate(&self, s: usize) -> Result<()> {
        let (h, w, c) = self.input_size;
        if h != w || c != 3 {
            return Err(Error::Config(format!(
                "input size must be square RGB, got {h}x{w}x{c}"
            )));
        }
        if self.block_schedule.is_empty() || self.block_schedule.last().unwrap().0 != 128 {
            return Err(Error::Config(
                "block schedule must end with 128 filters".into(),
            ));
        }
        let stride = match self.backbone {
            BackboneKind::MobilenetV2Like => 32,
            BackboneKind::TinyBackbone => {
                if h % s != 0 || !(h / s).is_power_of_two() {
                    return Err(Error::Config(format!(
                        "tiny backbone needs input = S·2^n, got {h} for S = {s}"
                    )));
                }
                h / s
            }
        };
        if h / stride != s {
            return Err(Error::Config(format!(
                "backbone stride {stride} maps {h} to {}, grid wants {s}",
                h / stride
            )));
        }
        Ok(())
    }
}

/// One task head; width and output activation per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Conf,
    Class,
    Pos,
    Dim,
    Yaw,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Conf, Task::Class, Task::Pos, Task::Dim, Task::Yaw];

    pub fn width(self, num_classes: usize) -> usize {
        match self {
            Task::Conf | Task::Yaw => 1,
            Task::Class => num_classes,
            Task::Pos | Task::Dim => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Task::Conf => "conf",
            Task::Class => "class",
            Task::Pos => "pos",
            Task::Dim => "dim",
            Task::Yaw => "yaw",
        }
    }
}

/// The residual ConvNext sub-block: Conv(7) → LN → Conv(1, 4N) → GELU →
/// Conv(1, N), added back onto the input.
#[derive(Debug, Clone)]
struct SubBlock<T> {
    dw7: Option<DepthwiseConv2d<T>>,
    dense7: Option<Conv2d<T>>,
    norm: LayerNorm<T>,
    expand: Conv2d<T>,
    project: Conv2d<T>,
    pre_gelu: Option<Array3<T>>,
}

impl<T: Real> SubBlock<T> {
    fn new(n: usize, depthwise: bool, rng: &mut ChaCha8Rng) -> Self {
        let (dw7, dense7) = if depthwise {
            (Some(DepthwiseConv2d::new(n, 7, 1, rng)), None)
        } else {
            (None, Some(Conv2d::new(n, n, 7, 1, rng)))
        };
        let expand = Conv2d::new(n, 4 * n, 1, 1, rng);
        let mut project = Conv2d::new(4 * n, n, 1, 1, rng);
        // Zero projection makes the whole sub-block the identity at init.
        project.weight.value.fill(T::zero());
        SubBlock {
            dw7,
            dense7,
            norm: LayerNorm::new(n),
            expand,
            project,
            pre_gelu: None,
        }
    }

    fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let h = match (&mut self.dw7, &mut self.dense7) {
            (Some(dw), _) => dw.forward(x),
            (_, Some(d)) => d.forward(x),
            _ => unreachable!(),
        };
        let h = self.norm.forward(&h);
        let h = self.expand.forward(&h);
        self.pre_gelu = Some(h.clone());
        let h = gelu(&h);
        let f = self.project.forward(&h);
        x + &f
    }

    fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let g = self.project.backward(gy);
        let pre = self.pre_gelu.take().expect("SubBlock::backward before forward");
        let g = gelu_backward(&pre, &g);
        let g = self.expand.backward(&g);
        let g = self.norm.backward(&g);
        let g = match (&mut self.dw7, &mut self.dense7) {
            (Some(dw), _) => dw.backward(&g),
            (_, Some(d)) => d.backward(&g),
            _ => unreachable!(),
        };
        gy + &g
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        if let Some(dw) = &mut self.dw7 {
            dw.visit_params(&format!("{prefix}.conv7"), f);
        }
        if let Some(d) = &mut self.dense7 {
            d.visit_params(&format!("{prefix}.conv7"), f);
        }
        self.norm.visit_params(&format!("{prefix}.norm"), f);
        self.expand.visit_params(&format!("{prefix}.expand"), f);
        self.project.visit_params(&format!("{prefix}.project"), f);
    }
}

/// Conv(k, N) → sub-block(N) → LayerNorm.
#[derive(Debug, Clone)]
struct ConvNextBlock<T> {
    conv: Conv2d<T>,
    sub: SubBlock<T>,
    norm: LayerNorm<T>,
}

impl<T: Real> ConvNextBlock<T> {
    fn new(c_in: usize, filters: usize, kernel: usize, depthwise: bool, rng: &mut ChaCha8Rng) -> Self {
        ConvNextBlock {
            conv: Conv2d::new(c_in, filters, kernel, 1, rng),
            sub: SubBlock::new(filters, depthwise, rng),
            norm: LayerNorm::new(filters),
        }
    }

    fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let h = self.conv.forward(x);
        let h = self.sub.forward(&h);
        self.norm.forward(&h)
    }

    fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let g = self.norm.backward(gy);
        let g = self.sub.backward(&g);
        self.conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        self.conv.visit_params(&format!("{prefix}.conv"), f);
        self.sub.visit_params(&format!("{prefix}.sub"), f);
        self.norm.visit_params(&format!("{prefix}.norm"), f);
    }
}

#[derive(Debug, Clone)]
struct Head<T> {
    task: Task,
    block: ConvNextBlock<T>,
    out: Conv2d<T>,
    activated: Option<Array3<T>>,
}

impl<T: Real> Head<T> {
    fn new(task: Task, cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Self {
        let (filters, kernel) = cfg.head_block;
        let block = ConvNextBlock::new(128, filters, kernel, cfg.depthwise_k7, rng);
        let mut out = Conv2d::new(filters, task.width(cfg.num_classes), 1, 1, rng);
        if task == Task::Conf {
            // logit(0.01): initial confidence ≈ 0.01 against the ~224:1
            // negative-cell imbalance.
            let b = real::<T>((0.01f64 / 0.99).ln());
            out.bias.value.fill(b);
        }
        if task == Task::Pos {
            let p = cfg.ty_prior.clamp(1e-4, 1.0 - 1e-4);
            out.bias.value[[1]] = real::<T>((p / (1.0 - p)).ln());
        }
        Head {
            task,
            block,
            out,
            activated: None,
        }
    }

    fn forward(&mut self, features: &Array3<T>) -> Array3<T> {
        let h = self.block.forward(features);
        let z = self.out.forward(&h);
        let y = match self.task {
            Task::Class => softmax_channels(&z),
            _ => sigmoid(&z),
        };
        self.activated = Some(y.clone());
        y
    }

    fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let y = self.activated.take().expect("Head::backward before forward");
        let gz = match self.task {
            Task::Class => softmax_channels_backward(&y, gy),
            _ => sigmoid_backward(&y, gy),
        };
        let g = self.out.backward(&gz);
        self.block.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        self.block.visit_params(&format!("{prefix}.block"), f);
        self.out.visit_params(&format!("{prefix}.out"), f);
    }
}

/// Conv → LayerNorm → relu6 stage used by both backbones.
#[derive(Debug, Clone)]
struct ConvNormAct<T> {
    conv: Conv2d<T>,
    norm: LayerNorm<T>,
    pre_act: Option<Array3<T>>,
}

impl<T: Real> ConvNormAct<T> {
    fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvNormAct {
            conv: Conv2d::new(c_in, c_out, k, stride, rng),
            norm: LayerNorm::new(c_out),
            pre_act: None,
        }
    }

    fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let h = self.conv.forward(x);
        let h = self.norm.forward(&h);
        self.pre_act = Some(h.clone());
        relu6(&h)
    }

    fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let pre = self.pre_act.take().expect("ConvNormAct::backward before forward");
        let g = relu6_backward(&pre, gy);
        let g = self.norm.backward(&g);
        self.conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        self.conv.visit_params(&format!("{prefix}.conv"), f);
        self.norm.visit_params(&format!("{prefix}.norm"), f);
    }
}

/// MobileNetV2-style inverted residual bottleneck.
#[derive(Debug, Clone)]
struct InvertedResidual<T> {
    expand: Option<ConvNormAct<T>>,
    dw: DepthwiseConv2d<T>,
    dw_norm: LayerNorm<T>,
    dw_pre_act: Option<Array3<T>>,
    project: Conv2d<T>,
    project_norm: LayerNorm<T>,
    use_residual: bool,
}

impl<T: Real> InvertedResidual<T> {
    fn new(c_in: usize, c_out: usize, expansion: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = c_in * expansion;
        let expand = if expansion != 1 {
            Some(ConvNormAct::new(c_in, hidden, 1, 1, rng))
        } else {
            None
        };
        InvertedResidual {
            expand,
            dw: DepthwiseConv2d::new(hidden, 3, stride, rng),
            dw_norm: LayerNorm::new(hidden),
            dw_pre_act: None,
            project: Conv2d::new(hidden, c_out, 1, 1, rng),
            project_norm: LayerNorm::new(c_out),
            use_residual: stride == 1 && c_in == c_out,
        }
    }

    fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let h = match &mut self.expand {
            Some(e) => e.forward(x),
            None => x.clone(),
        };
        let h = self.dw.forward(&h);
        let h = self.dw_norm.forward(&h);
        self.dw_pre_act = Some(h.clone());
        let h = relu6(&h);
        let h = self.project.forward(&h);
        let h = self.project_norm.forward(&h);
        if self.use_residual {
            x + &h
        } else {
            h
        }
    }

    fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let g = self.project_norm.backward(gy);
        let g = self.project.backward(&g);
        let pre = self.dw_pre_act.take().expect("InvertedResidual::backward before forward");
        let g = relu6_backward(&pre, &g);
        let g = self.dw_norm.backward(&g);
        let g = self.dw.backward(&g);
        let gx = match &mut self.expand {
            Some(e) => e.backward(&g),
            None => g,
        };
        if self.use_residual {
            &gx + gy
        } else {
            gx
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        if let Some(e) = &mut self.expand {
            e.visit_params(&format!("{prefix}.expand"), f);
        }
        self.dw.visit_params(&format!("{prefix}.dw"), f);
        self.dw_norm.visit_params(&format!("{prefix}.dw_norm"), f);
        self.project.visit_params(&format!("{prefix}.project"), f);
        self.project_norm
            .visit_params(&format!("{prefix}.project_norm"), f);
    }
}

#[derive(Debug, Clone)]
enum Backbone<T> {
    Tiny(Vec<ConvNormAct<T>>),
    Mobilenet {
        stem: ConvNormAct<T>,
        blocks: Vec<InvertedResidual<T>>,
    },
}

impl<T: Real> Backbone<T> {
    fn new(cfg: &NetworkConfig, s: usize, rng: &mut ChaCha8Rng) -> Self {
        match cfg.backbone {
            BackboneKind::TinyBackbone => {
                let stages = (cfg.input_size.0 / s).trailing_zeros() as usize;
                let widths = [8usize, 16, 32, 48, 64];
                let mut layers = Vec::new();
                let mut c_in = 3;
                for i in 0..stages {
                    let c_out = widths[i.min(widths.len() - 1)];
                    layers.push(ConvNormAct::new(c_in, c_out, 3, 2, rng));
                    c_in = c_out;
                }
                Backbone::Tiny(layers)
            }
            BackboneKind::MobilenetV2Like => {
                let stem = ConvNormAct::new(3, 32, 3, 2, rng);
                // (expansion, channels, repeats, first stride)
                let settings = [
                    (1, 16, 1, 1),
                    (6, 24, 2, 2),
                    (6, 32, 3, 2),
                    (6, 64, 4, 2),
                    (6, 96, 3, 1),
                    (6, 160, 3, 2),
                    (6, 320, 1, 1),
                ];
                let mut blocks = Vec::new();
                let mut c_in = 32;
                for (t, c, n, s0) in settings {
                    for i in 0..n {
                        let stride = if i == 0 { s0 } else { 1 };
                        blocks.push(InvertedResidual::new(c_in, c, t, stride, rng));
                        c_in = c;
                    }
                }
                Backbone::Mobilenet { stem, blocks }
            }
        }
    }

    fn out_channels(&self) -> usize {
        match self {
            Backbone::Tiny(layers) => layers.last().map(|l| l.conv.c_out).unwrap_or(3),
            Backbone::Mobilenet { .. } => 320,
        }
    }

    fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        match self {
            Backbone::Tiny(layers) => {
                let mut h = x.clone();
                for l in layers {
                    h = l.forward(&h);
                }
                h
            }
            Backbone::Mobilenet { stem, blocks } => {
                let mut h = stem.forward(x);
                for b in blocks {
                    h = b.forward(&h);
                }
                h
            }
        }
    }

    fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        match self {
            Backbone::Tiny(layers) => {
                let mut g = gy.clone();
                for l in layers.iter_mut().rev() {
                    g = l.backward(&g);
                }
                g
            }
            Backbone::Mobilenet { stem, blocks } => {
                let mut g = gy.clone();
                for b in blocks.iter_mut().rev() {
                    g = b.backward(&g);
                }
                stem.backward(&g)
            }
        }
    }

    fn visit_params(&mut self, f: &mut ParamVisitor<T>) {
        match self {
            Backbone::Tiny(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    l.visit_params(&format!("backbone.stage{i}"), f);
                }
            }
            Backbone::Mobilenet { stem, blocks } => {
                stem.visit_params("backbone.stem", f);
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_params(&format!("backbone.ir{i}"), f);
                }
            }
        }
    }
}

/// The complete model.
#[derive(Debug, Clone)]
pub struct MonoNext<T> {
    pub config: NetworkConfig,
    pub grid_side: usize,
    backbone: Backbone<T>,
    blocks: Vec<ConvNextBlock<T>>,
    heads: Vec<Head<T>>,
}

impl<T: Real> MonoNext<T> {
    pub fn new(config: NetworkConfig, grid_side: usize, seed: u64) -> Result<Self> {
        config.validate(grid_side)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&config, grid_side, &mut rng);
        let mut blocks = Vec::new();
        let mut c_in = backbone.out_channels();
        for &(filters, kernel) in &config.block_schedule {
            blocks.push(ConvNextBlock::new(
                c_in,
                filters,
                kernel,
                config.depthwise_k7,
                &mut rng,
            ));
            c_in = filters;
        }
        let heads = Task::ALL
            .iter()
            .map(|&t| Head::new(t, &config, &mut rng))
            .collect();
        Ok(MonoNext {
            config,
            grid_side,
            backbone,
            blocks,
            heads,
        })
    }

    fn assert_input(&self, image: &Array3<T>) {
        let (h, w, c) = image.dim();
        assert_eq!(
            (h, w, c),
            self.config.input_size,
            "model input shape mismatch"
        );
    }

    /// Backbone features at grid resolution (S×S×K).
    pub fn backbone_forward(&mut self, image: &Array3<T>) -> Array3<T> {
        self.assert_input(image);
        self.backbone.forward(image)
    }

    /// Backbone plus the block schedule: S×S×128 features.
    pub fn feature_extractor_forward(&mut self, image: &Array3<T>) -> Array3<T> {
        let mut h = self.backbone_forward(image);
        for b in &mut self.blocks {
            h = b.forward(&h);
        }
        h
    }

    /// One task head on already-extracted features.
    pub fn head_forward(&mut self, features: &Array3<T>, task: Task) -> Array3<T> {
        let head = self
            .heads
            .iter_mut()
            .find(|h| h.task == task)
            .expect("unknown task");
        head.forward(features)
    }

    /// Full forward pass producing the prediction grid tensor.
    pub fn forward(&mut self, image: &Array3<T>) -> GridTensor<T> {
        let features = self.feature_extractor_forward(image);
        let s = self.grid_side;
        let c = self.config.num_classes;
        let mut out = GridTensor::zeros(s, c);
        let mut ch0 = 0;
        for head in &mut self.heads {
            let y = head.forward(&features);
            let w = head.task.width(c);
            out.data.slice_mut(s![.., .., ch0..ch0 + w]).assign(&y);
            ch0 += w;
        }
        out
    }

    /// Backpropagate a loss gradient (w.r.t. the prediction tensor) through
    /// the whole network, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &GridTensor<T>) {
        let s = self.grid_side;
        let c = self.config.num_classes;
        assert_eq!(grad.side(), s);
        assert_eq!(grad.num_classes, c);

        let mut g_features = Array3::<T>::zeros((s, s, 128));
        let mut ch0 = 0;
        for head in &mut self.heads {
            let w = head.task.width(c);
            let gy = grad.data.slice(s![.., .., ch0..ch0 + w]).to_owned();
            g_features = g_features + head.backward(&gy);
            ch0 += w;
        }
        let mut g = g_features;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        self.backbone.backward(&g);
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<T>) {
        self.backbone.visit_params(f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("block{i}"), f);
        }
        for h in self.heads.iter_mut() {
            let name = format!("head.{}", h.task.name());
            h.visit_params(&name, f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    /// Total trainable parameter count.
    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    /// Global gradient norm across all parameters.
    pub fn grad_norm(&mut self) -> T {
        let mut acc = T::zero();
        self.visit_params(&mut |_, p| {
            for g in p.grad.iter() {
                acc += *g * *g;
            }
        });
        acc.sqrt()
    }

    /// Scale all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: T) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > T::zero() {
            let scale = max_norm / norm;
            self.visit_params(&mut |_, p| {
                p.grad.mapv_inplace(|g| g * scale);
            });
        }
    }

    /// One optimizer update from the accumulated gradients.
    pub fn apply_step(&mut self, opt: &mut AdamW<T>) {
        let mut params: Vec<*mut Param<T>> = Vec::new();
        self.visit_params(&mut |_, p| params.push(p as *mut _));
        // The visitor borrows each parameter exactly once, so the pointers
        // are unique and reborrowing them is sound.
        let mut refs: Vec<&mut Param<T>> =
            params.into_iter().map(|p| unsafe { &mut *p }).collect();
        opt.step(&mut refs);
    }
}

/// Parameter count for a configuration (fresh model, any seed).
pub fn count_parameters(cfg: &NetworkConfig, grid_side: usize) -> Result<usize> {
    Ok(MonoNext::<f32>::new(cfg.clone(), grid_side, 0)?.param_count())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MNXC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CheckpointMeta {
    version: u32,
    scalar: String,
    grid_side: usize,
    config: NetworkConfig,
    grid: GridSpec<f64>,
}

fn grid_to_f64<T: Real>(g: &GridSpec<T>) -> GridSpec<f64> {
    GridSpec {
        s: g.s,
        x_range: [g.x_range[0].to_f64().unwrap(), g.x_range[1].to_f64().unwrap()],
        y_range: [g.y_range[0].to_f64().unwrap(), g.y_range[1].to_f64().unwrap()],
        z_range: [g.z_range[0].to_f64().unwrap(), g.z_range[1].to_f64().unwrap()],
        dim_max: [
            g.dim_max[0].to_f64().unwrap(),
            g.dim_max[1].to_f64().unwrap(),
            g.dim_max[2].to_f64().unwrap(),
        ],
        num_classes: g.num_classes,
    }
}

/// Save model parameters plus a config echo.
///
/// Format (version 1, little endian): magic "MNXC", u32 version, u32 JSON
/// length, JSON metadata (scalar type, network config, grid spec), u32
/// parameter count, then per parameter: u16 name length, name, u8 rank,
/// u32 dims, f64 data.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &mut MonoNext<T>,
    grid: &GridSpec<T>,
) -> Result<()> {
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        scalar: T::NAME.to_string(),
        grid_side: model.grid_side,
        config: model.config.clone(),
        grid: grid_to_f64(grid),
    };
    let meta_json =
        serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(format!("meta encode: {e}")))?;

    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |name, p| {
        let dims = p.value.shape().to_vec();
        let data = p.value.iter().map(|v| v.to_f64().unwrap()).collect();
        entries.push((name.to_string(), dims, data));
    });

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&meta_json).map_err(io_err)?;
    w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, dims, data) in entries {
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&[dims.len() as u8]).map_err(io_err)?;
        for d in dims {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_meta(file: &mut impl Read, path: &Path) -> Result<CheckpointMeta> {
    let io_err = |e: std::io::Error| Error::io(path, e);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    file.read_exact(&mut u32buf).map_err(io_err)?;
    let meta_len = u32::from_le_bytes(u32buf) as usize;
    let mut meta_json = vec![0u8; meta_len];
    file.read_exact(&mut meta_json).map_err(io_err)?;
    serde_json::from_slice(&meta_json).map_err(|e| Error::Checkpoint(format!("meta decode: {e}")))
}

/// Peek at a checkpoint's config echo: (network config, grid spec, scalar
/// type name).
pub fn read_checkpoint_info(path: &Path) -> Result<(NetworkConfig, GridSpec<f64>, String)> {
    let mut file =
        std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let meta = read_meta(&mut file, path)?;
    Ok((meta.config, meta.grid, meta.scalar))
}

/// Load a checkpoint into a freshly built model; the stored config echo must
/// match the expected config and grid exactly.
pub fn load_checkpoint<T: Real>(
    path: &Path,
    expected_config: &NetworkConfig,
    expected_grid: &GridSpec<T>,
) -> Result<MonoNext<T>> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
    );
    let io_err = |e: std::io::Error| Error::io(path, e);
    let mut u32buf = [0u8; 4];
    let meta = read_meta(&mut file, path)?;

    let expected_meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        scalar: T::NAME.to_string(),
        grid_side: expected_grid.s,
        config: expected_config.clone(),
        grid: grid_to_f64(expected_grid),
    };
    if meta != expected_meta {
        return Err(Error::Checkpoint(format!(
            "config mismatch\n  checkpoint: {}\n  requested:  {}",
            serde_json::to_string(&meta).unwrap_or_default(),
            serde_json::to_string(&expected_meta).unwrap_or_default(),
        )));
    }

    let mut model = MonoNext::<T>::new(expected_config.clone(), expected_grid.s, 0)?;

    file.read_exact(&mut u32buf).map_err(io_err)?;
    let n_params = u32::from_le_bytes(u32buf) as usize;
    let mut stored: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> =
        std::collections::HashMap::with_capacity(n_params);
    for _ in 0..n_params {
        let mut u16buf = [0u8; 2];
        file.read_exact(&mut u16buf).map_err(io_err)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let mut rank = [0u8; 1];
        file.read_exact(&mut rank).map_err(io_err)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            file.read_exact(&mut u32buf).map_err(io_err)?;
            dims.push(u32::from_le_bytes(u32buf) as usize);
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut f64buf = [0u8; 8];
        for _ in 0..count {
            file.read_exact(&mut f64buf).map_err(io_err)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        stored.insert(name, (dims, data));
    }

    let mut missing = Vec::new();
    model.visit_params(&mut |name, p| match stored.remove(name) {
        Some((dims, data)) if dims == p.value.shape() => {
            for (dst, src) in p.value.iter_mut().zip(data) {
                *dst = T::from_f64(src).unwrap();
            }
        }
        Some(_) => missing.push(format!("{name} (shape mismatch)")),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "parameters missing or mismatched: {missing:?}"
        )));
    }
    if !stored.is_empty() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds unknown parameters: {:?}",
            stored.keys().collect::<Vec<_>>()
        )));
    }
    Ok(model)
}
