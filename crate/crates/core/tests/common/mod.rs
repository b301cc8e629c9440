//! Test-only oracles and fixtures, independent of the library's fast paths.
#![allow(dead_code)]

use dga_adapt::losses::{KernelConfig, LossWeights};
use dga_adapt::model::{
    activation_signature, init_params, loss_and_gradients, AlignmentSubstrate, CnnConfig, DomainLossConfig,
    ModelParams, TrainingBatch,
};
use dga_adapt::preprocess::{gaf_encode, FaultLabel, GafImage, ScaledFeatureVector, NUM_FEATURES};
use dga_adapt::seed::rng_from_seed;
use dga_adapt::stats::{build_weight_matrix, KsVector};
use rand::Rng;

pub fn random_images(rng: &mut impl Rng, n: usize) -> Vec<GafImage> {
    (0..n)
        .map(|_| {
            let x: [f64; NUM_FEATURES] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            gaf_encode(&ScaledFeatureVector::new(x).unwrap())
        })
        .collect()
}

pub fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<FaultLabel> {
    (0..n)
        .map(|_| FaultLabel::from_index(rng.random_range(0..5)).unwrap())
        .collect()
}

/// Naive double-sum squared MMD with a Gaussian kernel.
pub fn mmd_oracle(xs: &[Vec<f64>], xt: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let mut d = 0.0;
        for i in 0..a.len() {
            d += (a[i] - b[i]) * (a[i] - b[i]);
        }
        (-d / (2.0 * sigma * sigma)).exp()
    };
    let (n, m) = (xs.len() as f64, xt.len() as f64);
    let mut ss = 0.0;
    for a in xs {
        for b in xs {
            ss += k(a, b);
        }
    }
    let mut tt = 0.0;
    for a in xt {
        for b in xt {
            tt += k(a, b);
        }
    }
    let mut st = 0.0;
    for a in xs {
        for b in xt {
            st += k(a, b);
        }
    }
    ss / (n * n) + tt / (m * m) - 2.0 * st / (n * m)
}

/// Element-loop sample covariance.
pub fn covariance_oracle(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for r in x {
                acc += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
            c[i][j] = acc / (n as f64 - 1.0);
        }
    }
    c
}

/// `|| W' ⊙ C_s - W' ⊙ C_t ||_F^2` from raw (unscaled) rows.
pub fn weighted_coral_oracle(xs: &[Vec<f64>], xt: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
    let cs = covariance_oracle(xs);
    let ct = covariance_oracle(xt);
    let mut total = 0.0;
    for i in 0..cs.len() {
        for j in 0..cs.len() {
            let d = w[i][j] * cs[i][j] - w[i][j] * ct[i][j];
            total += d * d;
        }
    }
    total
}

pub fn coral_oracle(xs: &[Vec<f64>], xt: &[Vec<f64>]) -> f64 {
    let d = xs[0].len();
    weighted_coral_oracle(xs, xt, &vec![vec![1.0; d]; d])
}

/// One random gradient-check instance.
pub struct GradInstance {
    pub params: ModelParams,
    pub source: Vec<GafImage>,
    pub source_labels: Vec<FaultLabel>,
    pub target: Vec<GafImage>,
    pub target_labels: Vec<FaultLabel>,
    pub domain: DomainLossConfig,
    pub dropout_seed: u64,
}

impl GradInstance {
    pub fn random(config: &CnnConfig, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut params = init_params(config, seed).unwrap();
        // Non-zero biases so every segment carries signal.
        for seg in params.segments().to_vec() {
            if seg.name.ends_with(".bias") {
                for v in &mut params.values_mut()[seg.range()] {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let source = random_images(&mut rng, 5);
        let source_labels = random_labels(&mut rng, 5);
        let target = random_images(&mut rng, 4);
        let target_labels = random_labels(&mut rng, 4);
        let ks: [f64; NUM_FEATURES] = std::array::from_fn(|_| rng.random_range(0.0..0.3));
        let weights = build_weight_matrix(&KsVector::new(ks).unwrap(), 1e-3).unwrap();
        let mut inst = GradInstance {
            params,
            source,
            source_labels,
            target,
            target_labels,
            domain: DomainLossConfig {
                weights,
                loss_weights: LossWeights::new(0.5, 0.7).unwrap(),
                kernel: KernelConfig::MedianHeuristic,
                substrate: AlignmentSubstrate::Conv1Mean,
            },
            dropout_seed: seed ^ 0xD0,
        };
        // Freeze the bandwidth at its value for the unperturbed parameters.
        let (loss, _) = inst.evaluate(&inst.params);
        inst.domain.kernel = KernelConfig::fixed(loss.sigma.unwrap()).unwrap();
        inst
    }

    pub fn evaluate(&self, params: &ModelParams) -> (dga_adapt::model::LossBreakdown, dga_adapt::model::GradientSet) {
        let batch = TrainingBatch {
            source: &self.source,
            source_labels: &self.source_labels,
            target: &self.target,
            target_labels: Some(&self.target_labels),
        };
        loss_and_gradients(params, &batch, &self.domain, Some(self.dropout_seed)).unwrap()
    }

    pub fn loss_at(&self, params: &ModelParams) -> f64 {
        self.evaluate(params).0.total
    }
}

impl GradInstance {
    pub fn signature(&self, params: &ModelParams) -> u64 {
        let images: Vec<GafImage> = self.source.iter().chain(&self.target).cloned().collect();
        activation_signature(params, &images, Some(self.dropout_seed)).unwrap()
    }
}

/// Central finite difference of the total loss along parameter `idx`, or
/// `None` when the stencil crosses a ReLU or max-pool switch (the loss is
/// not differentiable inside the interval).
pub fn central_difference(inst: &GradInstance, idx: usize, h: f64) -> Option<f64> {
    let mut p = inst.params.clone();
    let orig = p.values()[idx];
    p.values_mut()[idx] = orig + h;
    let plus = inst.loss_at(&p);
    let sig_plus = inst.signature(&p);
    p.values_mut()[idx] = orig - h;
    let minus = inst.loss_at(&p);
    let sig_minus = inst.signature(&p);
    (sig_plus == sig_minus).then(|| (plus - minus) / (2.0 * h))
}

/// `||a - n|| / max(||a||, ||n||)`, with a floor on the denominator.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-10)
}

pub struct SegmentCheck {
    pub name: String,
    pub relative_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Per-segment relative errors at `h = 1e-5`, checking at most `per_segment`
/// evenly spread coordinates in each segment (all of them when `None`).
pub fn gradient_check(inst: &GradInstance, per_segment: Option<usize>) -> Vec<SegmentCheck> {
    let (_, grads) = inst.evaluate(&inst.params);
    let mut out = Vec::new();
    for seg in inst.params.segments() {
        let len = seg.len();
        let count = per_segment.map_or(len, |k| k.min(len));
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let mut skipped = 0;
        for i in 0..count {
            let idx = seg.offset + i * len / count;
            match central_difference(inst, idx, 1e-5) {
                Some(fd) => {
                    analytic.push(grads.values()[idx]);
                    numeric.push(fd);
                }
                None => skipped += 1,
            }
        }
        out.push(SegmentCheck {
            name: seg.name.clone(),
            relative_error: relative_error(&analytic, &numeric),
            checked: analytic.len(),
            skipped_kinks: skipped,
        });
    }
    out
}

/// Brute-force two-sample K-S: both ECDFs evaluated at every pooled value.
pub fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |xs: &[f64], t: f64| xs.iter().filter(|&&x| x <= t).count() as f64 / xs.len() as f64;
    let mut best: f64 = 0.0;
    for &t in a.iter().chain(b) {
        best = best.max((ecdf(a, t) - ecdf(b, t)).abs());
    }
    best
}

/// Scalar step-by-step weight matrix: min-max to [-1,1], GASF, min-max to
/// [0,1], plus epsilon.
pub fn weight_matrix_oracle(ks: &[f64; NUM_FEATURES], eps: f64) -> [[f64; NUM_FEATURES]; NUM_FEATURES] {
    let lo = ks.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return [[1.0; NUM_FEATURES]; NUM_FEATURES];
    }
    let mut x = [0.0; NUM_FEATURES];
    for i in 0..NUM_FEATURES {
        x[i] = 2.0 * (ks[i] - lo) / (hi - lo) - 1.0;
    }
    let mut g = [[0.0; NUM_FEATURES]; NUM_FEATURES];
    let mut gmin = f64::INFINITY;
    let mut gmax = f64::NEG_INFINITY;
    for i in 0..NUM_FEATURES {
        for j in 0..NUM_FEATURES {
            let v = x[i] * x[j] - (1.0 - x[i] * x[i]).sqrt() * (1.0 - x[j] * x[j]).sqrt();
            g[i][j] = v;
            gmin = gmin.min(v);
            gmax = gmax.max(v);
        }
    }
    for row in g.iter_mut() {
        for v in row.iter_mut() {
            *v = (*v - gmin) / (gmax - gmin) + eps;
        }
    }
    g
}
