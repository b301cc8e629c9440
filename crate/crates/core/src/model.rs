//! A small CNN over 1×9×9 GAF images with hand-written backpropagation.
//!
//! Activations are kept in a channels-last layout: a batch of `n` maps of
//! `h×w` pixels with `c` channels is an `(n*h*w, c)` matrix whose rows run
//! over `(sample, y, x)`. Convolutions are computed as im2col followed by a
//! matrix product.
//!
//! Pipeline: conv1 (3×3, pad 1) → ReLU → 2×2 max pool (9×9 → 4×4) →
//! further 3×3 convs with ReLU → flatten → FC stack with ReLU, dropout after
//! the first FC layer → logits → softmax.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::losses::{coral_loss_with_grad, mmd_squared_with_grad, FeatureBatch, KernelConfig, LossWeights};
use crate::preprocess::{FaultLabel, GafImage, IMAGE_PIXELS, NUM_CLASSES, NUM_FEATURES};
use crate::seed::rng_from_seed;
use crate::stats::WeightMatrix;

const KERNEL: usize = 3;
const KERNEL_AREA: usize = KERNEL * KERNEL;
const POOLED: usize = NUM_FEATURES / 2;

/// Layer shapes. The first conv is followed by the pool; later convs keep the
/// pooled 4×4 resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub conv_filters: Vec<usize>,
    pub fc_widths: Vec<usize>,
    pub dropout: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv_filters: vec![16, 32],
            fc_widths: vec![128, 64, 32, 16, NUM_CLASSES],
            dropout: 0.5,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(Error::invalid(
                "conv_filters must be a non-empty list of positive counts",
            ));
        }
        if self.fc_widths.contains(&0) {
            return Err(Error::invalid("fc_widths must be positive"));
        }
        if self.fc_widths.last() != Some(&NUM_CLASSES) {
            return Err(Error::invalid(format!("last fc width must be {NUM_CLASSES}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the flattened conv output feeding the first FC layer.
    pub fn flatten_size(&self) -> usize {
        self.conv_filters.last().copied().unwrap_or(0) * POOLED * POOLED
    }

    /// Canonical parameter layout: for every conv layer its weight
    /// `[out][ky][kx][in]` then bias, then for every FC layer its weight
    /// `[out][in]` then bias.
    pub fn layout(&self) -> Result<Vec<Segment>> {
        self.validate()?;
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, fan: (usize, usize)| {
            segments.push(Segment {
                name,
                offset,
                rows,
                cols,
                fan_in: fan.0,
                fan_out: fan.1,
            });
            offset += rows * cols;
        };
        let mut in_c = 1;
        for (l, &out_c) in self.conv_filters.iter().enumerate() {
            let fan = (in_c * KERNEL_AREA, out_c * KERNEL_AREA);
            push(format!("conv{}.weight", l + 1), out_c, in_c * KERNEL_AREA, fan);
            push(format!("conv{}.bias", l + 1), 1, out_c, fan);
            in_c = out_c;
        }
        let mut in_w = self.flatten_size();
        for (l, &out_w) in self.fc_widths.iter().enumerate() {
            push(format!("fc{}.weight", l + 1), out_w, in_w, (in_w, out_w));
            push(format!("fc{}.bias", l + 1), 1, out_w, (in_w, out_w));
            in_w = out_w;
        }
        Ok(segments)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.iter().map(Segment::len).sum())
    }
}

/// A named contiguous block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }
}

/// All trainable values in canonical flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: CnnConfig,
    segments: Vec<Segment>,
    values: Vec<f64>,
}

/// Gradient of a scalar loss, laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

impl GradientSet {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }
}

impl ModelParams {
    pub fn zeros(config: &CnnConfig) -> Result<Self> {
        let segments = config.layout()?;
        let n = segments.iter().map(Segment::len).sum();
        Ok(ModelParams {
            config: config.clone(),
            segments,
            values: vec![0.0; n],
        })
    }

    pub fn from_flat(config: &CnnConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::DimensionMismatch {
                expected: p.values.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    fn matrix(&self, idx: usize) -> ArrayView2<'_, f64> {
        let seg = &self.segments[idx];
        ArrayView2::from_shape((seg.rows, seg.cols), &self.values[seg.range()]).expect("layout")
    }

    fn bias(&self, idx: usize) -> &[f64] {
        &self.values[self.segments[idx].range()]
    }

    fn zero_gradients(&self) -> GradientSet {
        GradientSet {
            segments: self.segments.clone(),
            values: vec![0.0; self.values.len()],
        }
    }
}

/// Glorot-uniform weights with limit `sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(config: &CnnConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = rng_from_seed(seed);
    for seg in params.segments.clone() {
        if seg.is_bias() {
            continue;
        }
        let limit = (6.0 / (seg.fan_in + seg.fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).map_err(|e| Error::invalid(e.to_string()))?;
        for v in &mut params.values[seg.range()] {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Which per-sample representation the domain losses align.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentSubstrate {
    /// The flattened input image. Independent of the parameters, so the
    /// domain terms change the reported loss but not the gradients.
    InputImage,
    /// Channel mean of the ReLU'd first conv layer: a learned 9×9 map on the
    /// same feature-pair grid as the input and the weight matrix.
    Conv1Mean,
}

impl AlignmentSubstrate {
    pub fn name(&self) -> &'static str {
        match self {
            AlignmentSubstrate::InputImage => "input",
            AlignmentSubstrate::Conv1Mean => "conv1",
        }
    }
}

impl std::str::FromStr for AlignmentSubstrate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(AlignmentSubstrate::InputImage),
            "conv1" => Ok(AlignmentSubstrate::Conv1Mean),
            other => Err(Error::invalid(format!(
                "unknown alignment substrate `{other}` (input|conv1)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub probabilities: Array2<f64>,
    /// Input to the final FC layer.
    pub penultimate: Array2<f64>,
    /// Channel mean of the first conv activations, one 81-wide row per sample.
    pub conv1_mean: Array2<f64>,
}

struct ConvCache {
    cols: Array2<f64>,
    pre: Array2<f64>,
    side: usize,
}

struct FcCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    dropout_mask: Option<Array2<f64>>,
}

struct Cache {
    n: usize,
    convs: Vec<ConvCache>,
    pool_argmax: Vec<usize>,
    fcs: Vec<FcCache>,
}

fn im2col(x: ArrayView2<'_, f64>, n: usize, side: usize) -> Array2<f64> {
    let c = x.ncols();
    let mut cols = Array2::zeros((n * side * side, KERNEL_AREA * c));
    for s in 0..n {
        for y in 0..side {
            for xx in 0..side {
                let row = (s * side + y) * side + xx;
                for ky in 0..KERNEL {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = xx as isize + kx as isize - 1;
                        if ix < 0 || ix >= side as isize {
                            continue;
                        }
                        let src = (s * side + iy as usize) * side + ix as usize;
                        let dst = (ky * KERNEL + kx) * c;
                        cols.slice_mut(s![row, dst..dst + c]).assign(&x.row(src));
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: ArrayView2<'_, f64>, n: usize, side: usize, c: usize) -> Array2<f64> {
    let mut dx = Array2::zeros((n * side * side, c));
    for s in 0..n {
        for y in 0..side {
            for xx in 0..side {
                let row = (s * side + y) * side + xx;
                for ky in 0..KERNEL {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = xx as isize + kx as isize - 1;
                        if ix < 0 || ix >= side as isize {
                            continue;
                        }
                        let dst = (s * side + iy as usize) * side + ix as usize;
                        let src = (ky * KERNEL + kx) * c;
                        let mut target = dx.row_mut(dst);
                        target += &dcols.slice(s![row, src..src + c]);
                    }
                }
            }
        }
    }
    dx
}

fn add_bias(mut z: Array2<f64>, bias: &[f64]) -> Array2<f64> {
    for mut row in z.rows_mut() {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    z
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// 2×2 max pool, floor semantics. Returns pooled activations and, per output
/// entry, the flat index of the selected input entry.
fn max_pool(a: &Array2<f64>, n: usize, side: usize) -> (Array2<f64>, Vec<usize>) {
    let c = a.ncols();
    let out_side = side / 2;
    let mut out = Array2::zeros((n * out_side * out_side, c));
    let mut argmax = vec![0; out.len()];
    for s in 0..n {
        for py in 0..out_side {
            for px in 0..out_side {
                let orow = (s * out_side + py) * out_side + px;
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let irow = (s * side + 2 * py + dy) * side + 2 * px + dx;
                            let v = a[[irow, ch]];
                            if v > best {
                                best = v;
                                best_idx = irow * c + ch;
                            }
                        }
                    }
                    out[[orow, ch]] = best;
                    argmax[orow * c + ch] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    p
}

fn images_to_input(images: &[GafImage]) -> Array2<f64> {
    let flat: Vec<f64> = images.iter().flat_map(|im| im.pixels().iter().copied()).collect();
    Array2::from_shape_vec((images.len() * IMAGE_PIXELS, 1), flat).expect("image batch shape")
}

fn forward_cached(
    params: &ModelParams,
    images: &[GafImage],
    dropout_seed: Option<u64>,
) -> Result<(ForwardOutput, Cache)> {
    if images.is_empty() {
        return Err(Error::EmptyInput("forward needs at least one image"));
    }
    if params.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let n = images.len();
    let cfg = &params.config;
    let n_conv = cfg.conv_filters.len();

    let mut x = images_to_input(images);
    let mut side = NUM_FEATURES;
    let mut convs = Vec::with_capacity(n_conv);
    let mut pool_argmax = Vec::new();
    let mut conv1_mean = Array2::zeros((0, 0));
    for l in 0..n_conv {
        let cols = im2col(x.view(), n, side);
        let pre = add_bias(cols.dot(&params.matrix(2 * l).t()), params.bias(2 * l + 1));
        let act = relu(&pre);
        convs.push(ConvCache { cols, pre, side });
        if l == 0 {
            let mean = act.mean_axis(Axis(1)).expect("channels");
            conv1_mean = mean.into_shape_with_order((n, IMAGE_PIXELS)).expect("conv1 map");
            let (pooled, idx) = max_pool(&act, n, side);
            pool_argmax = idx;
            side /= 2;
            x = pooled;
        } else {
            x = act;
        }
    }

    let flat_width = cfg.flatten_size();
    let mut h = x.into_shape_with_order((n, flat_width)).expect("flatten");
    let n_fc = cfg.fc_widths.len();
    let mut fcs = Vec::with_capacity(n_fc);
    let mut penultimate = h.clone();
    for k in 0..n_fc {
        let idx = 2 * (n_conv + k);
        if k == n_fc - 1 {
            penultimate = h.clone();
        }
        let pre = add_bias(h.dot(&params.matrix(idx).t()), params.bias(idx + 1));
        let input = std::mem::replace(&mut h, Array2::zeros((0, 0)));
        if k == n_fc - 1 {
            h = pre.clone();
            fcs.push(FcCache {
                input,
                pre,
                dropout_mask: None,
            });
            continue;
        }
        let mut act = relu(&pre);
        let mut dropout_mask = None;
        if k == 0 && cfg.dropout > 0.0 {
            if let Some(seed) = dropout_seed {
                let keep = 1.0 - cfg.dropout;
                let mut rng = rng_from_seed(seed);
                let mask =
                    Array2::from_shape_fn(
                        act.raw_dim(),
                        |_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        },
                    );
                act *= &mask;
                dropout_mask = Some(mask);
            }
        }
        fcs.push(FcCache {
            input,
            pre,
            dropout_mask,
        });
        h = act;
    }
    let logits = h;
    let probabilities = softmax_rows(&logits);
    Ok((
        ForwardOutput {
            logits,
            probabilities,
            penultimate,
            conv1_mean,
        },
        Cache {
            n,
            convs,
            pool_argmax,
            fcs,
        },
    ))
}

/// Runs the network. Dropout is active only when `train_mode` is set, with
/// its mask drawn from `dropout_seed`.
pub fn forward(
    params: &ModelParams,
    images: &[GafImage],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<ForwardOutput> {
    let seed = train_mode.then_some(dropout_seed);
    Ok(forward_cached(params, images, seed)?.0)
}

/// Hash of every ReLU on/off state and max-pool selection for a batch.
/// Two parameter vectors with equal signatures lie in the same linear piece
/// of the network, which is what a finite-difference check needs.
pub fn activation_signature(params: &ModelParams, images: &[GafImage], dropout_seed: Option<u64>) -> Result<u64> {
    let (_, cache) = forward_cached(params, images, dropout_seed)?;
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    let mut feed = |v: u64| h = (h ^ v).wrapping_mul(0x0100_0000_01B3);
    let pres = cache
        .convs
        .iter()
        .map(|c| &c.pre)
        .chain(cache.fcs.iter().take(cache.fcs.len() - 1).map(|f| &f.pre));
    for pre in pres {
        for &z in pre.iter() {
            feed(u64::from(z > 0.0));
        }
    }
    for &idx in &cache.pool_argmax {
        feed(idx as u64);
    }
    Ok(h)
}

/// Arg-max class per image, inference mode.
pub fn predict(params: &ModelParams, images: &[GafImage]) -> Result<Vec<FaultLabel>> {
    let out = forward(params, images, false, 0)?;
    out.logits
        .rows()
        .into_iter()
        .map(|row| {
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                )
                .0;
            FaultLabel::from_index(best)
        })
        .collect()
}

/// Backpropagates `d_logits` and an optional gradient on the conv1 channel
/// mean into `grads`.
fn backward(
    params: &ModelParams,
    cache: &Cache,
    d_logits: Array2<f64>,
    d_conv1_mean: Option<&Array2<f64>>,
    grads: &mut GradientSet,
) {
    let cfg = &params.config;
    let n = cache.n;
    let n_conv = cfg.conv_filters.len();
    let n_fc = cfg.fc_widths.len();

    let mut dz = d_logits;
    for k in (0..n_fc).rev() {
        let idx = 2 * (n_conv + k);
        let fc = &cache.fcs[k];
        let dw = dz.t().dot(&fc.input);
        accumulate(grads, idx, dw.view());
        accumulate_bias(grads, idx + 1, &dz);
        let dh = dz.dot(&params.matrix(idx));
        if k == 0 {
            dz = dh;
            break;
        }
        let prev = &cache.fcs[k - 1];
        dz = relu_backward(dh, &prev.pre);
        if let Some(mask) = &prev.dropout_mask {
            dz *= mask;
        }
    }
    // dz now holds the gradient w.r.t. the flattened conv output.
    let last_c = *cfg.conv_filters.last().expect("conv layer");
    let mut d_act = dz
        .into_shape_with_order((n * POOLED * POOLED, last_c))
        .expect("unflatten");
    for l in (0..n_conv).rev() {
        let conv = &cache.convs[l];
        if l == 0 {
            let c1 = cfg.conv_filters[0];
            let mut d_full = Array2::zeros((n * IMAGE_PIXELS, c1));
            {
                let flat = d_full.as_slice_mut().expect("contiguous");
                for (g, &src) in d_act.iter().zip(&cache.pool_argmax) {
                    flat[src] += g;
                }
            }
            if let Some(d_mean) = d_conv1_mean {
                let share = 1.0 / c1 as f64;
                for (mut row, &g) in d_full.rows_mut().into_iter().zip(d_mean.iter()) {
                    row.mapv_inplace(|v| v + g * share);
                }
            }
            d_act = d_full;
        }
        let d_pre = relu_backward(d_act, &conv.pre);
        accumulate(grads, 2 * l, d_pre.t().dot(&conv.cols).view());
        accumulate_bias(grads, 2 * l + 1, &d_pre);
        if l == 0 {
            break;
        }
        let d_cols = d_pre.dot(&params.matrix(2 * l));
        let in_c = cfg.conv_filters[l - 1];
        d_act = col2im(d_cols.view(), n, conv.side, in_c);
    }
}

fn relu_backward(mut d: Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    d.zip_mut_with(pre, |g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

fn segment_view_mut(grads: &mut GradientSet, idx: usize) -> ArrayViewMut2<'_, f64> {
    let seg = &grads.segments[idx];
    let shape = (seg.rows, seg.cols);
    let range = seg.range();
    ArrayViewMut2::from_shape(shape, &mut grads.values[range]).expect("layout")
}

fn accumulate(grads: &mut GradientSet, idx: usize, g: ArrayView2<'_, f64>) {
    let mut view = segment_view_mut(grads, idx);
    view += &g;
}

fn accumulate_bias(grads: &mut GradientSet, idx: usize, dz: &Array2<f64>) {
    let sums = dz.sum_axis(Axis(0));
    let mut view = segment_view_mut(grads, idx);
    view.row_mut(0).zip_mut_with(&sums, |a, b| *a += b);
}

/// One optimization step's worth of data. Target labels are optional; when
/// present they join the classification term.
#[derive(Debug, Clone, Copy)]
pub struct TrainingBatch<'a> {
    pub source: &'a [GafImage],
    pub source_labels: &'a [FaultLabel],
    pub target: &'a [GafImage],
    pub target_labels: Option<&'a [FaultLabel]>,
}

/// Everything that shapes the domain term of the objective.
#[derive(Debug, Clone)]
pub struct DomainLossConfig {
    pub weights: WeightMatrix,
    pub loss_weights: LossWeights,
    pub kernel: KernelConfig,
    pub substrate: AlignmentSubstrate,
}

impl Default for DomainLossConfig {
    fn default() -> Self {
        DomainLossConfig {
            weights: WeightMatrix::uniform(),
            loss_weights: LossWeights::default(),
            kernel: KernelConfig::MedianHeuristic,
            substrate: AlignmentSubstrate::Conv1Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub mmd: f64,
    pub coral: f64,
    pub domain: f64,
    /// Kernel bandwidth used for MMD, when the domain term was active.
    pub sigma: Option<f64>,
}

/// Combined objective and its exact gradient with respect to every parameter.
///
/// The domain term needs at least two target images; otherwise it is zero
/// and the step is pure cross-entropy (`alpha` treated as 1).
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &TrainingBatch<'_>,
    domain: &DomainLossConfig,
    dropout_seed: Option<u64>,
) -> Result<(LossBreakdown, GradientSet)> {
    let ns = batch.source.len();
    let nt = batch.target.len();
    if ns == 0 {
        return Err(Error::EmptyInput("source batch"));
    }
    if batch.source_labels.len() != ns {
        return Err(Error::DimensionMismatch {
            expected: ns,
            found: batch.source_labels.len(),
        });
    }
    if let Some(tl) = batch.target_labels {
        if tl.len() != nt {
            return Err(Error::DimensionMismatch {
                expected: nt,
                found: tl.len(),
            });
        }
    }

    let images: Vec<GafImage> = batch.source.iter().chain(batch.target).cloned().collect();
    let (out, cache) = forward_cached(params, &images, dropout_seed)?;

    let labels: Vec<Option<FaultLabel>> = batch
        .source_labels
        .iter()
        .map(|&l| Some(l))
        .chain((0..nt).map(|i| batch.target_labels.map(|tl| tl[i])))
        .collect();
    let labeled = labels.iter().flatten().count() as f64;

    let domain_active = nt >= 2 && domain.loss_weights.alpha() < 1.0;
    let alpha = if domain_active {
        domain.loss_weights.alpha()
    } else {
        1.0
    };
    let beta = domain.loss_weights.beta();

    let mut cls = 0.0;
    let mut d_logits = Array2::zeros(out.logits.raw_dim());
    for (i, label) in labels.iter().enumerate() {
        let Some(label) = label else { continue };
        let y = label.index();
        let row = out.logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        cls += lse - row[y];
        for c in 0..NUM_CLASSES {
            let onehot = if c == y { 1.0 } else { 0.0 };
            d_logits[[i, c]] = alpha * (out.probabilities[[i, c]] - onehot) / labeled;
        }
    }
    cls /= labeled;

    let mut breakdown = LossBreakdown {
        total: 0.0,
        classification: cls,
        mmd: 0.0,
        coral: 0.0,
        domain: 0.0,
        sigma: None,
    };
    let mut d_conv1_mean = None;
    if domain_active {
        let features = match domain.substrate {
            AlignmentSubstrate::InputImage => images_to_input(&images)
                .into_shape_with_order((ns + nt, IMAGE_PIXELS))
                .expect("flatten"),
            AlignmentSubstrate::Conv1Mean => out.conv1_mean.clone(),
        };
        let scale: Vec<f64> = domain.weights.flat().iter().map(|w| w.sqrt()).collect();
        let scale = ndarray::Array1::from(scale);
        let weighted = &features * &scale;
        let xs = FeatureBatch::new(weighted.slice(s![..ns, ..]).to_owned())?;
        let xt = FeatureBatch::new(weighted.slice(s![ns.., ..]).to_owned())?;
        let sigma = domain.kernel.bandwidth(&xs, &xt);
        let mmd = mmd_squared_with_grad(&xs, &xt, sigma)?;
        let coral = coral_loss_with_grad(&xs, &xt)?;
        breakdown.mmd = mmd.value;
        breakdown.coral = coral.value;
        breakdown.domain = beta * mmd.value + (1.0 - beta) * coral.value;
        breakdown.sigma = Some(sigma);

        if domain.substrate == AlignmentSubstrate::Conv1Mean {
            let k = 1.0 - alpha;
            let mut d = Array2::zeros((ns + nt, IMAGE_PIXELS));
            d.slice_mut(s![..ns, ..])
                .assign(&((&mmd.grad_source * beta + &coral.grad_source * (1.0 - beta)) * k));
            d.slice_mut(s![ns.., ..])
                .assign(&((&mmd.grad_target * beta + &coral.grad_target * (1.0 - beta)) * k));
            d *= &scale;
            d_conv1_mean = Some(d);
        }
    }
    breakdown.total = alpha * cls + (1.0 - alpha) * breakdown.domain;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }

    let mut grads = params.zero_gradients();
    backward(params, &cache, d_logits, d_conv1_mean.as_ref(), &mut grads);
    Ok((breakdown, grads))
}

/// Velocity buffer for momentum SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    velocity: Vec<f64>,
}

impl MomentumState {
    pub fn new(params: &ModelParams) -> Self {
        MomentumState {
            velocity: vec![0.0; params.len()],
        }
    }
}

/// Classical momentum: `v <- mu v + g`, `p <- p - lr v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    lr: f64,
    state: &mut MomentumState,
    momentum: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
    }
    if grads.values.len() != params.values.len() || state.velocity.len() != params.values.len() {
        return Err(Error::DimensionMismatch {
            expected: params.values.len(),
            found: grads.values.len(),
        });
    }
    if grads.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients".into()));
    }
    for ((p, v), g) in params.values.iter_mut().zip(&mut state.velocity).zip(&grads.values) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{gaf_encode, ScaledFeatureVector};

    fn random_images(n: usize, seed: u64) -> Vec<GafImage> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let x: [f64; NUM_FEATURES] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                gaf_encode(&ScaledFeatureVector::new(x).unwrap())
            })
            .collect()
    }

    #[test]
    fn default_parameter_count() {
        // conv1 16*9+16, conv2 32*16*9+32, fc 512*128+128, 128*64+64, 64*32+32, 32*16+16, 16*5+5
        let expected = 160 + 4640 + 65664 + 8256 + 2080 + 528 + 85;
        assert_eq!(CnnConfig::default().param_count().unwrap(), expected);
        assert_eq!(CnnConfig::default().flatten_size(), 512);
    }

    #[test]
    fn invalid_configs() {
        let c = CnnConfig {
            fc_widths: vec![10, 4],
            ..CnnConfig::default()
        };
        assert!(init_params(&c, 0).is_err());
        let mut c = CnnConfig::default();
        c.conv_filters.clear();
        assert!(c.validate().is_err());
        let c = CnnConfig {
            dropout: 1.0,
            ..CnnConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = CnnConfig::default();
        let a = init_params(&cfg, 11).unwrap();
        let b = init_params(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&cfg, 12).unwrap());
        for seg in a.segments() {
            let vals = &a.values()[seg.range()];
            if seg.is_bias() {
                assert!(vals.iter().all(|&v| v == 0.0));
            } else {
                let limit = (6.0 / (seg.fan_in + seg.fan_out) as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= limit));
            }
        }
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let params = init_params(&CnnConfig::default(), 3).unwrap();
        let images = random_images(6, 1);
        let out = forward(&params, &images, true, 9).unwrap();
        assert_eq!(out.logits.dim(), (6, NUM_CLASSES));
        assert_eq!(out.penultimate.dim(), (6, 16));
        assert_eq!(out.conv1_mean.dim(), (6, IMAGE_PIXELS));
        for row in out.probabilities.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
        assert!(forward(&params, &[], false, 0).is_err());
    }

    #[test]
    fn zero_parameters_give_uniform_probabilities() {
        let params = ModelParams::zeros(&CnnConfig::default()).unwrap();
        let out = forward(&params, &random_images(3, 2), false, 0).unwrap();
        assert!(out.probabilities.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn inference_ignores_dropout_seed() {
        let params = init_params(&CnnConfig::default(), 4).unwrap();
        let images = random_images(4, 3);
        let a = forward(&params, &images, false, 1).unwrap();
        let b = forward(&params, &images, false, 2).unwrap();
        assert_eq!(a.logits, b.logits);
        let c = forward(&params, &images, true, 1).unwrap();
        let d = forward(&params, &images, true, 2).unwrap();
        assert_ne!(c.logits, d.logits);
    }

    #[test]
    fn duplicate_samples_get_identical_logits() {
        let params = init_params(&CnnConfig::default(), 5).unwrap();
        let mut images = random_images(3, 4);
        images.push(images[1].clone());
        let out = forward(&params, &images, false, 0).unwrap();
        assert_eq!(out.logits.row(1), out.logits.row(3));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln5() {
        let params = ModelParams::zeros(&CnnConfig::default()).unwrap();
        let images = random_images(4, 5);
        let labels = [FaultLabel::Pd, FaultLabel::D1, FaultLabel::T3, FaultLabel::D2];
        let batch = TrainingBatch {
            source: &images,
            source_labels: &labels,
            target: &[],
            target_labels: None,
        };
        let (loss, _) = loss_and_gradients(&params, &batch, &DomainLossConfig::default(), None).unwrap();
        assert!((loss.classification - 5f64.ln()).abs() < 1e-12);
        assert_eq!(loss.total, loss.classification);
    }

    #[test]
    fn alpha_one_gives_pure_cross_entropy_gradients() {
        let params = init_params(&CnnConfig::default(), 6).unwrap();
        let images = random_images(8, 6);
        let labels: Vec<FaultLabel> = (0..4).map(|i| FaultLabel::from_index(i).unwrap()).collect();
        let tl: Vec<FaultLabel> = (1..5).map(|i| FaultLabel::from_index(i).unwrap()).collect();
        let with_target = TrainingBatch {
            source: &images[..4],
            source_labels: &labels,
            target: &images[4..],
            target_labels: Some(&tl),
        };
        let mut domain = DomainLossConfig {
            loss_weights: LossWeights::new(1.0, 0.7).unwrap(),
            ..DomainLossConfig::default()
        };
        let (a, ga) = loss_and_gradients(&params, &with_target, &domain, Some(3)).unwrap();
        domain.loss_weights = LossWeights::new(0.5, 0.7).unwrap();
        domain.substrate = AlignmentSubstrate::InputImage;
        // With the input substrate the domain term carries no parameter
        // gradient; the classification gradient is then scaled by alpha.
        let (b, gb) = loss_and_gradients(&params, &with_target, &domain, Some(3)).unwrap();
        assert_eq!(a.classification, b.classification);
        for (x, y) in ga.values().iter().zip(gb.values()) {
            assert!((0.5 * x - y).abs() < 1e-15);
        }
        assert!(b.domain > 0.0);
    }

    #[test]
    fn rejects_label_count_mismatch() {
        let params = init_params(&CnnConfig::default(), 7).unwrap();
        let images = random_images(3, 7);
        let batch = TrainingBatch {
            source: &images,
            source_labels: &[FaultLabel::Pd],
            target: &[],
            target_labels: None,
        };
        assert!(loss_and_gradients(&params, &batch, &DomainLossConfig::default(), None).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let cfg = CnnConfig {
            conv_filters: vec![1],
            fc_widths: vec![NUM_CLASSES],
            dropout: 0.0,
        };
        let mut params = ModelParams::zeros(&cfg).unwrap();
        params.values_mut()[0] = 1.0;
        let mut grads = params.zero_gradients();
        grads.values[0] = 2.0;
        let mut state = MomentumState::new(&params);
        sgd_step(&mut params, &grads, 0.1, &mut state, 0.0).unwrap();
        assert!((params.values()[0] - 0.8).abs() < 1e-15);

        let before = params.clone();
        let zero = params.zero_gradients();
        let mut state = MomentumState::new(&params);
        sgd_step(&mut params, &zero, 0.1, &mut state, 0.9).unwrap();
        assert_eq!(params, before);

        grads.values[1] = f64::NAN;
        assert!(sgd_step(&mut params, &grads, 0.1, &mut state, 0.9).is_err());
        assert!(sgd_step(&mut params, &zero, 0.0, &mut state, 0.9).is_err());
        assert!(sgd_step(&mut params, &zero, 0.1, &mut state, 1.0).is_err());
    }
}
