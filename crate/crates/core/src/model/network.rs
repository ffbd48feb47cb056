//! SwishNet: causal gated 1D convolutions over frame-wise features.
//!
//! A [`ModelConfig`] is compiled into an [`Architecture`]: a list of blocks,
//! each a gated (or linear 1×1) convolution with an optional parallel
//! separable branch, optional residual add and optional skip output. Skip
//! outputs are brought to the final time resolution by strided 1×1
//! convolutions and summed before the head. Without skips the head reads the
//! last block.

use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LayerKind, LayerSpec, ModelConfig};
use super::params::ParamSet;
use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOp {
    Gated,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPlan {
    pub kernel: usize,
    pub width: usize,
    depth: usize,
    point: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    /// Index of the defining entry in `ModelConfig::layers`.
    pub layer: usize,
    pub op: BlockOp,
    pub kernel: usize,
    pub stride: usize,
    pub in_width: usize,
    /// Output width of the main path.
    pub width: usize,
    pub branch: Option<BranchPlan>,
    pub out_width: usize,
    pub residual: bool,
    pub skip: bool,
    /// Product of all strides up to and including this block.
    pub total_stride: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipPlan {
    pub block: usize,
    pub stride: usize,
    pub in_width: usize,
    pub width: usize,
    w: usize,
    b: usize,
}

/// A validated, compiled [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub blocks: Vec<BlockPlan>,
    pub skips: Vec<SkipPlan>,
    pub input_channels: usize,
    pub n_classes: usize,
    pub head_in: usize,
    pub dropout_rate: f64,
    head_w: usize,
    head_b: usize,
}

/// Name, shape and Glorot fan-in/fan-out of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan: Option<(usize, usize)>,
}

impl Architecture {
    pub fn compile(config: &ModelConfig) -> Result<(Self, Vec<ParamShape>)> {
        validate_header(config)?;
        let m = config.width_multiplier;
        let mut shapes: Vec<ParamShape> = Vec::new();
        let mut param = |name: String, shape: Vec<usize>, fan: Option<(usize, usize)>| {
            shapes.push(ParamShape { name, shape, fan });
            shapes.len() - 1
        };

        let mut blocks: Vec<BlockPlan> = Vec::new();
        let mut width = config.input_channels;
        let mut total_stride = 1;
        let mut head = None;
        let n_layers = config.layers.len();
        for (i, spec) in config.layers.iter().enumerate() {
            if head.is_some() {
                return Err(Error::config(format!("layer {i}: nothing may follow the head")));
            }
            check_spec(i, spec)?;
            match spec.kind {
                LayerKind::GatedConvBlock | LayerKind::StridedGatedConv | LayerKind::PointwiseConv => {
                    let (op, kernel, w_out) = match spec.kind {
                        LayerKind::PointwiseConv => (BlockOp::Pointwise, 1, spec.width * m),
                        _ => (BlockOp::Gated, spec.kernel, spec.width * m),
                    };
                    if spec.kind == LayerKind::PointwiseConv && spec.kernel != 1 {
                        return Err(Error::config(format!("layer {i}: pointwise convolutions have kernel 1")));
                    }
                    let conv_out = if op == BlockOp::Gated { 2 * w_out } else { w_out };
                    let b = blocks.len();
                    let w = param(
                        format!("block{b}.conv.w"),
                        vec![kernel, width, conv_out],
                        Some((kernel * width, kernel * conv_out)),
                    );
                    let bias = param(format!("block{b}.conv.b"), vec![conv_out], None);
                    total_stride *= spec.stride;
                    blocks.push(BlockPlan {
                        layer: i,
                        op,
                        kernel,
                        stride: spec.stride,
                        in_width: width,
                        width: w_out,
                        branch: None,
                        out_width: w_out,
                        residual: false,
                        skip: false,
                        total_stride,
                        w,
                        b: bias,
                    });
                }
                LayerKind::GatedSeparableBranch => {
                    let b = blocks.len();
                    let parent = match blocks.last_mut() {
                        Some(p) if p.op == BlockOp::Gated && p.branch.is_none() && p.layer + 1 == i => p,
                        _ => {
                            return Err(Error::config(format!(
                                "layer {i}: a separable branch must directly follow a gated conv layer"
                            )))
                        }
                    };
                    if spec.residual || spec.skip || spec.stride != 1 {
                        return Err(Error::config(format!(
                            "layer {i}: branches share their parent's stride, residual and skip settings"
                        )));
                    }
                    let w_out = spec.width * m;
                    let c_in = parent.in_width;
                    let depth = param(format!("block{}.sep.depth", b - 1), vec![spec.kernel, c_in], Some((spec.kernel, spec.kernel)));
                    let point = param(format!("block{}.sep.point", b - 1), vec![c_in, 2 * w_out], Some((c_in, 2 * w_out)));
                    let bias = param(format!("block{}.sep.b", b - 1), vec![2 * w_out], None);
                    parent.branch = Some(BranchPlan {
                        kernel: spec.kernel,
                        width: w_out,
                        depth,
                        point,
                        bias,
                    });
                    parent.out_width += w_out;
                }
                LayerKind::Head => {
                    if i + 1 != n_layers {
                        return Err(Error::config(format!("layer {i}: the head must be the last layer")));
                    }
                    head = Some(i);
                    continue;
                }
            }
            // residual/skip flags live on the layer that opens the block; a
            // branch may change the block's output width, so width checks wait
            // until the block is complete.
            let last = blocks.last_mut().unwrap();
            if spec.kind != LayerKind::GatedSeparableBranch {
                last.residual = spec.residual;
                last.skip = spec.skip;
            }
            width = last.out_width;
        }
        if head.is_none() {
            return Err(Error::config("the last layer must be a head"));
        }
        if blocks.is_empty() {
            return Err(Error::config("at least one convolutional layer is required"));
        }
        for (bi, blk) in blocks.iter().enumerate() {
            if blk.residual && (blk.in_width != blk.out_width || blk.stride != 1) {
                return Err(Error::config(format!(
                    "layer {}: residual add needs matching widths and stride 1 (in {}, out {}, stride {})",
                    blk.layer, blk.in_width, blk.out_width, blk.stride
                )));
            }
            if blk.skip && blocks[bi + 1..].iter().any(|b| !b.skip) {
                return Err(Error::config(format!(
                    "layer {}: every layer after the first skip layer must also be a skip layer",
                    blk.layer
                )));
            }
        }

        let mut skips = Vec::new();
        let head_in;
        let skip_blocks: Vec<usize> = blocks.iter().enumerate().filter(|(_, b)| b.skip).map(|(i, _)| i).collect();
        if let Some(&last) = skip_blocks.last() {
            let final_stride = blocks[last].total_stride;
            let skip_width = blocks[last].out_width;
            for (j, &bi) in skip_blocks.iter().enumerate() {
                let blk = &blocks[bi];
                let stride = final_stride / blk.total_stride;
                let w = param(format!("skip{j}.w"), vec![1, blk.out_width, skip_width], Some((blk.out_width, skip_width)));
                let b = param(format!("skip{j}.b"), vec![skip_width], None);
                skips.push(SkipPlan {
                    block: bi,
                    stride,
                    in_width: blk.out_width,
                    width: skip_width,
                    w,
                    b,
                });
            }
            head_in = skip_width;
        } else {
            head_in = width;
        }
        let head_w = param("head.w".into(), vec![1, head_in, config.n_classes], Some((head_in, config.n_classes)));
        let head_b = param("head.b".into(), vec![config.n_classes], None);

        Ok((
            Self {
                blocks,
                skips,
                input_channels: config.input_channels,
                n_classes: config.n_classes,
                head_in,
                dropout_rate: config.dropout_rate.unwrap_or(0.0),
                head_w,
                head_b,
            },
            shapes,
        ))
    }

    /// Overall downsampling factor of the stack.
    pub fn total_stride(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.total_stride)
    }

    /// Shortest accepted input: the strided stack must leave at least two steps.
    pub fn min_input_frames(&self) -> usize {
        2 * self.total_stride()
    }

    fn check_input(&self, t: usize, c: usize) -> Result<()> {
        if c != self.input_channels {
            return Err(Error::shape(format!(
                "model expects {} input channels, got {c}",
                self.input_channels
            )));
        }
        if t < self.min_input_frames() {
            return Err(Error::TooShort {
                needed: self.min_input_frames(),
                got: t,
                unit: "frames",
            });
        }
        Ok(())
    }
}

fn validate_header(config: &ModelConfig) -> Result<()> {
    if config.input_channels == 0 {
        return Err(Error::config("input_channels must be positive"));
    }
    if config.n_classes < 2 {
        return Err(Error::config("at least two classes are required"));
    }
    if config.width_multiplier == 0 {
        return Err(Error::config("width_multiplier must be positive"));
    }
    if let Some(r) = config.dropout_rate {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::config(format!("dropout_rate {r} outside [0, 1)")));
        }
    }
    Ok(())
}

fn check_spec(i: usize, spec: &LayerSpec) -> Result<()> {
    if spec.kind == LayerKind::Head {
        return Ok(());
    }
    if spec.width == 0 || spec.kernel == 0 || spec.stride == 0 {
        return Err(Error::config(format!("layer {i}: width, kernel and stride must be positive")));
    }
    Ok(())
}

/// Parameter count from the per-layer closed forms, without compiling.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    let m = config.width_multiplier;
    let mut width = config.input_channels;
    let mut block_in = width;
    let mut total = 0;
    let mut skip_widths = Vec::new();
    for spec in &config.layers {
        let w = spec.width * m;
        match spec.kind {
            LayerKind::GatedConvBlock | LayerKind::StridedGatedConv => {
                block_in = width;
                total += spec.kernel * width * 2 * w + 2 * w;
                width = w;
            }
            LayerKind::PointwiseConv => {
                block_in = width;
                total += width * w + w;
                width = w;
            }
            LayerKind::GatedSeparableBranch => {
                total += spec.kernel * block_in + block_in * 2 * w + 2 * w;
                width += w;
                if let Some(last) = skip_widths.last_mut() {
                    *last = width;
                }
                continue;
            }
            LayerKind::Head => {
                let head_in = match skip_widths.last() {
                    Some(&sw) => {
                        total += skip_widths.iter().map(|&iw| iw * sw + sw).sum::<usize>();
                        sw
                    }
                    None => width,
                };
                total += head_in * config.n_classes + config.n_classes;
                continue;
            }
        }
        if spec.skip {
            skip_widths.push(width);
        }
    }
    Architecture::compile(config)?;
    Ok(total)
}

/// Which paths to cut during a forward pass; for connectivity checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Block index whose residual add is skipped.
    pub residual: Option<usize>,
    /// Skip index left out of the sum.
    pub skip: Option<usize>,
}

/// One recorded intermediate activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub name: String,
    pub var: Var,
    /// Output step `t` of this activation reads input frames `≤ t · stride`.
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub logits: Var,
    pub activations: Vec<Activation>,
}

/// Training provenance stored alongside the weights.
pub type Metadata = Vec<(String, String)>;

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    arch: Architecture,
    params: ParamSet,
    pub metadata: Metadata,
}

impl Model {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let (arch, shapes) = Architecture::compile(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for s in shapes {
            let n: usize = s.shape.iter().product();
            let data = match s.fan {
                Some((fan_in, fan_out)) => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                }
                None => vec![0.0; n],
            };
            params.push(s.name, Tensor::from_raw(s.shape, data));
        }
        params.snap_to_f32();
        Ok(Self {
            config: config.clone(),
            arch,
            params,
            metadata: vec![("seed".into(), seed.to_string())],
        })
    }

    /// Wraps existing parameters; names and shapes must match the config.
    pub fn from_parts(config: ModelConfig, params: ParamSet, metadata: Metadata) -> Result<Self> {
        let template = Self::build(&config, 0)?;
        params.check_layout(&template.params)?;
        Ok(Self {
            arch: template.arch,
            config,
            params,
            metadata,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.n_scalars()
    }

    pub fn min_input_frames(&self) -> usize {
        self.arch.min_input_frames()
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    /// Records the forward pass. `x` is `[T, C]` or `[B, T, C]`; logits are
    /// `[n_classes]` or `[B, n_classes]`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        training: bool,
        rng: &mut dyn RngCore,
        ablation: Ablation,
    ) -> Result<Trace> {
        let shape = tape.shape(x).to_vec();
        let (t, c) = match shape[..] {
            [t, c] | [_, t, c] => (t, c),
            _ => return Err(Error::shape(format!("model input must be [T, C] or [B, T, C], got {shape:?}"))),
        };
        self.arch.check_input(t, c)?;
        let arch = &self.arch;
        let dropout = if training { arch.dropout_rate } else { 0.0 };
        let mut activations = Vec::new();
        let mut skip_outs = Vec::new();
        let mut h = x;
        for (bi, blk) in arch.blocks.iter().enumerate() {
            let (w, b) = (params[blk.w], params[blk.b]);
            let conv = tape.conv1d(h, w, b, blk.stride, true)?;
            let main = match blk.op {
                BlockOp::Gated => tape.gated_split(conv)?,
                BlockOp::Pointwise => conv,
            };
            let mut out = match &blk.branch {
                Some(br) => {
                    let sep = tape.separable_conv1d(h, params[br.depth], params[br.point], params[br.bias], blk.stride, true)?;
                    let gated = tape.gated_split(sep)?;
                    tape.concat_channels(main, gated)?
                }
                None => main,
            };
            if blk.residual && ablation.residual != Some(bi) {
                out = tape.add(h, out)?;
            }
            activations.push(Activation {
                name: format!("block{bi}"),
                var: out,
                stride: blk.total_stride,
            });
            if blk.skip {
                skip_outs.push(out);
            }
            h = if bi + 1 < arch.blocks.len() {
                tape.dropout(out, dropout, training, rng)?
            } else {
                out
            };
        }
        if !arch.skips.is_empty() {
            let mut sum: Option<Var> = None;
            for (j, (sp, &out)) in arch.skips.iter().zip(&skip_outs).enumerate() {
                if ablation.skip == Some(j) {
                    continue;
                }
                let aligned = tape.conv1d(out, params[sp.w], params[sp.b], sp.stride, true)?;
                activations.push(Activation {
                    name: format!("skip{j}"),
                    var: aligned,
                    stride: arch.blocks[sp.block].total_stride * sp.stride,
                });
                sum = Some(match sum {
                    Some(s) => tape.add(s, aligned)?,
                    None => aligned,
                });
            }
            h = sum.ok_or_else(|| Error::config("every skip path is ablated"))?;
        }
        let frame_logits = tape.conv1d(h, params[arch.head_w], params[arch.head_b], 1, true)?;
        activations.push(Activation {
            name: "head".into(),
            var: frame_logits,
            stride: self.arch.total_stride(),
        });
        let logits = tape.global_avg_pool_time(frame_logits)?;
        Ok(Trace { logits, activations })
    }

    fn features_tensor(&self, features: &FeatureMatrix) -> Result<Tensor> {
        self.arch.check_input(features.n_frames(), features.n_coeffs())?;
        Tensor::new([features.n_frames(), features.n_coeffs()], features.values().to_vec())
    }

    /// Logits through the tape. With `training`, dropout draws from a fixed seed.
    pub fn forward(&self, features: &FeatureMatrix, training: bool) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.params.record_constant(&mut tape);
        let x = tape.constant(self.features_tensor(features)?);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward_tape(&mut tape, &params, x, training, &mut rng, Ablation::default())?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Intermediate activations of an inference pass, in evaluation order.
    pub fn activations(&self, features: &FeatureMatrix, ablation: Ablation) -> Result<Vec<(Activation, Tensor)>> {
        let mut tape = Tape::new();
        let params = self.params.record_constant(&mut tape);
        let x = tape.constant(self.features_tensor(features)?);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward_tape(&mut tape, &params, x, false, &mut rng, ablation)?;
        let mut out: Vec<(Activation, Tensor)> =
            trace.activations.into_iter().map(|a| {
                let v = tape.value(a.var).clone();
                (a, v)
            }).collect();
        out.push((
            Activation {
                name: "logits".into(),
                var: trace.logits,
                stride: usize::MAX,
            },
            tape.value(trace.logits).clone(),
        ));
        Ok(out)
    }

    /// Inference-mode logits without recording a tape.
    pub fn logits(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        self.arch.check_input(features.n_frames(), features.n_coeffs())?;
        let params: Vec<&[f64]> = (0..self.params.len()).map(|i| self.params.tensor(i).data()).collect();
        Ok(run_inference(&self.arch, &params, features.values(), features.n_frames()))
    }

    pub fn probabilities(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let logits = self.logits(features)?;
        Ok(kernels::softmax_rows(&logits, logits.len()))
    }

    pub fn classify(&self, features: &FeatureMatrix) -> Result<usize> {
        Ok(argmax(&self.logits(features)?))
    }

    /// A copy of the weights in another float type for tape-free inference.
    pub fn compile<F: Float>(&self) -> Inference<F> {
        Inference {
            arch: self.arch.clone(),
            params: (0..self.params.len())
                .map(|i| self.params.tensor(i).data().iter().map(|&v| F::from(v).unwrap()).collect())
                .collect(),
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Tape-free forward pass for one sample in any float type.
#[derive(Debug, Clone)]
pub struct Inference<F> {
    arch: Architecture,
    params: Vec<Vec<F>>,
}

impl<F: Float> Inference<F> {
    /// `x` is `[t, input_channels]`, row-major.
    pub fn logits(&self, x: &[F], t: usize) -> Result<Vec<F>> {
        let c = self.arch.input_channels;
        if x.len() != t * c {
            return Err(Error::shape(format!("{} values for {t}×{c} input", x.len())));
        }
        self.arch.check_input(t, c)?;
        let params: Vec<&[F]> = self.params.iter().map(Vec::as_slice).collect();
        Ok(run_inference(&self.arch, &params, x, t))
    }

    pub fn min_input_frames(&self) -> usize {
        self.arch.min_input_frames()
    }
}

fn run_inference<F: Float>(arch: &Architecture, params: &[&[F]], x: &[F], t: usize) -> Vec<F> {
    let conv = |x: &[F], t_in: usize, c_in: usize, w: usize, b: usize, kernel: usize, stride: usize| {
        let c_out = params[b].len();
        let geom = ConvGeom {
            batch: 1,
            t_in,
            c_in,
            c_out,
            kernel,
            stride,
            causal: true,
        };
        (kernels::conv1d(x, params[w], params[b], geom), geom.t_out())
    };
    let mut h = x.to_vec();
    let mut t_cur = t;
    let mut skip_outs: Vec<(Vec<F>, usize)> = Vec::new();
    for blk in &arch.blocks {
        let (y, t_out) = conv(&h, t_cur, blk.in_width, blk.w, blk.b, blk.kernel, blk.stride);
        let main = match blk.op {
            BlockOp::Gated => kernels::gated_halves(&y, 2 * blk.width),
            BlockOp::Pointwise => y,
        };
        let mut out = match &blk.branch {
            Some(br) => {
                let geom = ConvGeom {
                    batch: 1,
                    t_in: t_cur,
                    c_in: blk.in_width,
                    c_out: blk.in_width,
                    kernel: br.kernel,
                    stride: blk.stride,
                    causal: true,
                };
                let depth = kernels::depthwise_conv1d(&h, params[br.depth], geom);
                let (sep, _) = conv(&depth, t_out, blk.in_width, br.point, br.bias, 1, 1);
                let gated = kernels::gated_halves(&sep, 2 * br.width);
                kernels::concat_rows(&main, blk.width, &gated, br.width)
            }
            None => main,
        };
        if blk.residual {
            out.iter_mut().zip(&h).for_each(|(o, &r)| *o = *o + r);
        }
        if blk.skip {
            skip_outs.push((out.clone(), t_out));
        }
        h = out;
        t_cur = t_out;
    }
    let mut width = arch.blocks.last().map_or(arch.input_channels, |b| b.out_width);
    if !arch.skips.is_empty() {
        let mut sum: Option<(Vec<F>, usize)> = None;
        for (sp, (out, t_skip)) in arch.skips.iter().zip(&skip_outs) {
            let (aligned, t_out) = conv(out, *t_skip, sp.in_width, sp.w, sp.b, 1, sp.stride);
            sum = Some(match sum {
                Some((mut s, t)) => {
                    s.iter_mut().zip(&aligned).for_each(|(a, &b)| *a = *a + b);
                    (s, t)
                }
                None => (aligned, t_out),
            });
        }
        let (s, ts) = sum.unwrap();
        h = s;
        t_cur = ts;
        width = arch.head_in;
    }
    let (frame_logits, t_out) = conv(&h, t_cur, width, arch.head_w, arch.head_b, 1, 1);
    kernels::mean_over_time(&frame_logits, 1, t_out, arch.n_classes)
}
