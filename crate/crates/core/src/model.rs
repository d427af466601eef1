//! A small pyramid encoder with multi-scale fusion.
//!
//! Four strided 3x3 convolution stages produce features at 1/2, 1/4, 1/8 and
//! 1/16 of the input resolution. The three lower-resolution maps are
//! channel-matched with 1x1 convolutions, bilinearly upsampled to the 1/4
//! grid, summed, reduced to one channel by a final 1x1 layer, and upsampled
//! back to the input size. The class is deliberately tiny (about 100k
//! parameters at the default widths) so full training runs fit in a test
//! suite, while keeping the multi-scale structure the mixed-supervision
//! losses are exercised against.
//!
//! All gradients are computed by hand; [`Model::backward`] consumes the
//! activations recorded by [`Model::forward_traced`].

use std::io::Read as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid;
use crate::losses::PredictionMap;
use crate::ImageTensor;

/// Input height and width must be divisible by this (the deepest stage sits
/// at 1/16 resolution).
pub const INPUT_SIZE_DIVISOR: usize = 16;

const LEAKY_SLOPE: f64 = 0.1;
const CHECKPOINT_MAGIC: &[u8; 7] = b"MIXSUP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stage_channels: [usize; 4],
    pub fusion_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stage_channels: [16, 32, 64, 128],
            fusion_channels: 32,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.fusion_channels == 0
            || self.stage_channels.contains(&0)
        {
            return Err(Error::InvalidConfig(
                "model channel counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Exact learnable-parameter count for a config, by closed form.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let mut total = 0;
    let mut cin = config.in_channels;
    for &cout in &config.stage_channels {
        total += cout * cin * 9 + cout;
        cin = cout;
    }
    for &source in &config.stage_channels[1..] {
        total += config.fusion_channels * source + config.fusion_channels;
    }
    total += config.fusion_channels + 1;
    total
}

// ---------------------------------------------------------------------------
// Convolution layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Conv2d {
    weight: Array4<f64>, // [out, in, k, k]
    bias: Array1<f64>,
    stride: usize,
    pad: usize,
}

/// Gradient (or momentum) buffers for one layer, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Per-layer buffers in the model's canonical layer order.
pub type ModelGrads = Vec<LayerGrads>;

impl Conv2d {
    fn init(
        cout: usize,
        cin: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let mut weight = Array4::zeros((cout, cin, k, k));
        for w in weight.iter_mut() {
            *w = dist.sample(rng);
        }
        Self {
            weight,
            bias: Array1::zeros(cout),
            stride,
            pad,
        }
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.dim().2;
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let (cout, cin, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .unwrap()
    }

    /// Returns the output and the unfolded input patches for backprop.
    fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (_, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let k = self.weight.dim().2;
        let col = im2col(x, k, self.stride, self.pad, oh, ow);
        let mut out_mat = self.weight_matrix().dot(&col);
        for (mut row, &b) in out_mat.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row += b;
        }
        let cout = self.weight.dim().0;
        let out = out_mat.into_shape_with_order((cout, oh, ow)).unwrap();
        (out, col)
    }

    /// Backprop through the layer: given dL/dy, the cached patches, and the
    /// input shape, produce parameter gradients and dL/dx.
    fn backward(
        &self,
        grad_out: &Array3<f64>,
        col: &Array2<f64>,
        in_dim: (usize, usize, usize),
    ) -> (LayerGrads, Array3<f64>) {
        let (cout, oh, ow) = grad_out.dim();
        let k = self.weight.dim().2;
        let gy = grad_out
            .view()
            .into_shape_with_order((cout, oh * ow))
            .unwrap();
        let grad_w_mat = gy.dot(&col.t());
        let grad_w = grad_w_mat
            .into_shape_with_order(self.weight.dim())
            .unwrap();
        let grad_b = gy.sum_axis(Axis(1));
        let grad_col = self.weight_matrix().t().dot(&gy);
        let grad_in = col2im(&grad_col, in_dim, k, self.stride, self.pad, oh, ow);
        (
            LayerGrads {
                weight: grad_w,
                bias: grad_b,
            },
            grad_in,
        )
    }

    fn zeros_like(&self) -> LayerGrads {
        LayerGrads {
            weight: Array4::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

fn im2col(
    x: &Array3<f64>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (cin, h, w) = x.dim();
    let mut col = Array2::zeros((cin * k * k, oh * ow));
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[[row, oy * ow + ox]] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

fn col2im(
    grad_col: &Array2<f64>,
    in_dim: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<f64> {
    let (cin, h, w) = in_dim;
    let mut grad_in = Array3::zeros((cin, h, w));
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        grad_in[[c, iy as usize, ix as usize]] += grad_col[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    grad_in
}

fn leaky_relu_inplace(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
}

fn leaky_relu_backward(grad: &mut Array3<f64>, activated: &Array3<f64>) {
    grad.zip_mut_with(activated, |g, &y| {
        if y <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

pub struct Model {
    config: ModelConfig,
    stages: Vec<Conv2d>,      // four strided 3x3 convs
    projections: Vec<Conv2d>, // 1x1 convs for the 1/4, 1/8, 1/16 maps
    head: Conv2d,             // 1x1 conv to a single logit channel
}

/// Activations recorded during a forward pass, consumed by backprop.
pub struct ForwardTrace {
    input_dim: (usize, usize, usize),
    stage_cols: Vec<Array2<f64>>,
    stage_outs: Vec<Array3<f64>>, // post-activation
    proj_cols: Vec<Array2<f64>>,
    proj_dims: Vec<(usize, usize, usize)>,
    head_col: Array2<f64>,
    fused_dim: (usize, usize, usize),
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::with_capacity(4);
        let mut cin = config.in_channels;
        for &cout in &config.stage_channels {
            stages.push(Conv2d::init(cout, cin, 3, 2, 1, &mut rng));
            cin = cout;
        }
        let projections = config.stage_channels[1..]
            .iter()
            .map(|&source| Conv2d::init(config.fusion_channels, source, 1, 1, 0, &mut rng))
            .collect();
        let head = Conv2d::init(1, config.fusion_channels, 1, 1, 0, &mut rng);
        Ok(Self {
            config,
            stages,
            projections,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn layers(&self) -> Vec<&Conv2d> {
        let mut out: Vec<&Conv2d> = self.stages.iter().collect();
        out.extend(self.projections.iter());
        out.push(&self.head);
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out: Vec<&mut Conv2d> = self.stages.iter_mut().collect();
        out.extend(self.projections.iter_mut());
        out.push(&mut self.head);
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn forward(&self, image: &ImageTensor) -> Result<PredictionMap> {
        Ok(self.forward_traced(image)?.0)
    }

    pub fn forward_traced(&self, image: &ImageTensor) -> Result<(PredictionMap, ForwardTrace)> {
        let (_, h, w) = image.data.dim();
        if h % INPUT_SIZE_DIVISOR != 0 || w % INPUT_SIZE_DIVISOR != 0 {
            return Err(Error::BadSize {
                height: h,
                width: w,
                divisor: INPUT_SIZE_DIVISOR,
            });
        }

        let mut stage_cols = Vec::with_capacity(4);
        let mut stage_outs = Vec::with_capacity(4);
        let mut cur = image.data.clone();
        for stage in &self.stages {
            let (mut out, col) = stage.forward(&cur);
            leaky_relu_inplace(&mut out);
            stage_cols.push(col);
            stage_outs.push(out.clone());
            cur = out;
        }

        // Project the 1/4, 1/8, 1/16 maps and merge them on the 1/4 grid.
        let (fh, fw) = (h / 4, w / 4);
        let mut proj_cols = Vec::with_capacity(3);
        let mut proj_dims = Vec::with_capacity(3);
        let mut fused: Option<Array3<f64>> = None;
        for (proj, feat) in self.projections.iter().zip(&stage_outs[1..]) {
            let (p, col) = proj.forward(feat);
            proj_cols.push(col);
            proj_dims.push(feat.dim());
            let up = if p.dim().1 == fh {
                p
            } else {
                grid::bilinear_resize3(&p, fh, fw)
            };
            fused = Some(match fused {
                None => up,
                Some(acc) => acc + &up,
            });
        }
        let fused = fused.unwrap();

        let (logit_low, head_col) = self.head.forward(&fused);
        let logit_plane = logit_low.index_axis(Axis(0), 0).to_owned();
        let logits = grid::bilinear_resize(&logit_plane, h, w);

        let trace = ForwardTrace {
            input_dim: image.data.dim(),
            stage_cols,
            stage_outs,
            proj_cols,
            proj_dims,
            head_col,
            fused_dim: fused.dim(),
        };
        Ok((PredictionMap::from_logits(logits), trace))
    }

    /// Backprop from dL/dlogits (full resolution) to parameter gradients,
    /// accumulated into `grads`.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Array2<f64>, grads: &mut ModelGrads) {
        let (_, fh, fw) = trace.fused_dim;

        let g_low = grid::bilinear_resize_adjoint(grad_logits, fh, fw);
        let g_low3 = g_low.into_shape_with_order((1, fh, fw)).unwrap();
        let (head_g, g_fused) = self
            .head
            .backward(&g_low3, &trace.head_col, trace.fused_dim);
        let n_layers = grads.len();
        accumulate(&mut grads[n_layers - 1], &head_g);

        // Each projected map received the fused gradient through the sum;
        // walk the three branches back to their encoder stages.
        let mut stage_grads: Vec<Option<Array3<f64>>> = vec![None, None, None, None];
        for (pi, proj) in self.projections.iter().enumerate() {
            let (_, ph, pw) = trace.proj_dims[pi];
            let g_proj = if ph == fh {
                g_fused.clone()
            } else {
                grid::bilinear_resize3_adjoint(&g_fused, ph, pw)
            };
            let (pg, g_feat) = proj.backward(&g_proj, &trace.proj_cols[pi], trace.proj_dims[pi]);
            accumulate(&mut grads[4 + pi], &pg);
            stage_grads[pi + 1] = Some(g_feat);
        }

        // Encoder stages, deepest first; stage i also receives the gradient
        // flowing down from stage i+1.
        let mut downstream: Option<Array3<f64>> = None;
        for i in (0..4).rev() {
            let mut g = match (stage_grads[i].take(), downstream.take()) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("every stage receives gradient"),
            };
            leaky_relu_backward(&mut g, &trace.stage_outs[i]);
            let in_dim = if i == 0 {
                trace.input_dim
            } else {
                trace.stage_outs[i - 1].dim()
            };
            let (sg, g_in) = self.stages[i].backward(&g, &trace.stage_cols[i], in_dim);
            accumulate(&mut grads[i], &sg);
            if i > 0 {
                downstream = Some(g_in);
            }
        }
    }

    pub fn zero_grads(&self) -> ModelGrads {
        self.layers().iter().map(|l| l.zeros_like()).collect()
    }

    /// SGD with momentum: `v = mu*v + g`, `p -= lr*v`.
    pub fn sgd_step(&mut self, grads: &ModelGrads, velocity: &mut ModelGrads, lr: f64, mu: f64) {
        for ((layer, g), v) in self
            .layers_mut()
            .into_iter()
            .zip(grads.iter())
            .zip(velocity.iter_mut())
        {
            for ((p, &gw), vw) in layer
                .weight
                .iter_mut()
                .zip(g.weight.iter())
                .zip(v.weight.iter_mut())
            {
                *vw = mu * *vw + gw;
                *p -= lr * *vw;
            }
            for ((p, &gb), vb) in layer
                .bias
                .iter_mut()
                .zip(g.bias.iter())
                .zip(v.bias.iter_mut())
            {
                *vb = mu * *vb + gb;
                *p -= lr * *vb;
            }
        }
    }

    /// Parameters flattened in canonical layer order (stages, projections,
    /// head; weights before bias within a layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in self.layers() {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if params.len() != expected {
            return Err(Error::BadCheckpoint(format!(
                "parameter count {} does not match model ({expected})",
                params.len()
            )));
        }
        let mut it = params.iter();
        for layer in self.layers_mut() {
            for w in layer.weight.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in layer.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }
}

fn accumulate(into: &mut LayerGrads, from: &LayerGrads) {
    into.weight += &from.weight;
    into.bias += &from.bias;
}

/// Flattens per-layer buffers with the same ordering as
/// [`Model::flat_params`].
pub fn grads_to_flat(grads: &ModelGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend(g.weight.iter());
        out.extend(g.bias.iter());
    }
    out
}

pub fn grads_from_flat(template: &ModelGrads, flat: &[f64]) -> Result<ModelGrads> {
    let expected: usize = template
        .iter()
        .map(|g| g.weight.len() + g.bias.len())
        .sum();
    if flat.len() != expected {
        return Err(Error::BadCheckpoint(format!(
            "buffer length {} does not match model ({expected})",
            flat.len()
        )));
    }
    let mut it = flat.iter();
    let mut out = Vec::with_capacity(template.len());
    for t in template {
        let mut g = LayerGrads {
            weight: Array4::zeros(t.weight.dim()),
            bias: Array1::zeros(t.bias.len()),
        };
        for w in g.weight.iter_mut() {
            *w = *it.next().unwrap();
        }
        for b in g.bias.iter_mut() {
            *b = *it.next().unwrap();
        }
        out.push(g);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// On-disk training state: model config and parameters, the step counter,
/// and (optionally) the optimizer's momentum buffers.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: u64,
    pub params: Vec<f64>,
    pub momentum: Option<Vec<f64>>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(u8::from(ckpt.momentum.is_some()));
    let mut dims = vec![ckpt.config.in_channels as u32];
    dims.extend(ckpt.config.stage_channels.iter().map(|&c| c as u32));
    dims.push(ckpt.config.fusion_channels as u32);
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&ckpt.iteration.to_le_bytes());
    buf.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for p in &ckpt.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(m) = &ckpt.momentum {
        for p in m {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 7];
    file.read_exact(&mut magic)
        .map_err(|_| Error::BadCheckpoint("file too short for header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }
    let mut flags = [0u8; 1];
    file.read_exact(&mut flags)
        .map_err(|_| Error::BadCheckpoint("missing flags byte".into()))?;
    if flags[0] > 1 {
        return Err(Error::BadCheckpoint(format!("unknown flags {}", flags[0])));
    }

    let read_u32 = |f: &mut dyn std::io::Read| -> Result<u32> {
        let mut b = [0u8; 4];
        f.read_exact(&mut b)
            .map_err(|_| Error::BadCheckpoint("truncated config".into()))?;
        Ok(u32::from_le_bytes(b))
    };
    let in_channels = read_u32(&mut file)? as usize;
    let mut stage_channels = [0usize; 4];
    for s in &mut stage_channels {
        *s = read_u32(&mut file)? as usize;
    }
    let fusion_channels = read_u32(&mut file)? as usize;
    let config = ModelConfig {
        in_channels,
        stage_channels,
        fusion_channels,
    };

    let mut b8 = [0u8; 8];
    file.read_exact(&mut b8)
        .map_err(|_| Error::BadCheckpoint("truncated iteration".into()))?;
    let iteration = u64::from_le_bytes(b8);
    file.read_exact(&mut b8)
        .map_err(|_| Error::BadCheckpoint("truncated parameter count".into()))?;
    let n = u64::from_le_bytes(b8) as usize;
    if n != parameter_count(&config) {
        return Err(Error::BadCheckpoint(format!(
            "parameter count {n} does not match config ({})",
            parameter_count(&config)
        )));
    }

    let read_params = |f: &mut dyn std::io::Read| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            f.read_exact(&mut b)
                .map_err(|_| Error::BadCheckpoint("truncated parameters".into()))?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let params = read_params(&mut file)?;
    let momentum = if flags[0] & 1 == 1 {
        Some(read_params(&mut file)?)
    } else {
        None
    };
    Ok(Checkpoint {
        config,
        iteration,
        params,
        momentum,
    })
}

impl Model {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(ckpt.config, 0)?;
        model.set_flat_params(&ckpt.params)?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
