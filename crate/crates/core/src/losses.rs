//! Weighted MMD, weighted CORAL and the combined training objective.
//!
//! The 9×9 weight matrix is applied by scaling flattened coordinate `j` of
//! every row by `sqrt(w_flat[j])`. Plain MMD on the scaled batch is the
//! weighted MMD, and CORAL on the scaled batch equals the element-wise
//! weighted covariance difference with weights `sqrt(w_i w_j)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::preprocess::IMAGE_PIXELS;
use crate::stats::WeightMatrix;

/// `n` rows of `d` finite features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    data: Array2<f64>,
}

impl FeatureBatch {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("feature batch"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature batch".into()));
        }
        Ok(FeatureBatch { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(data)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// Classification/domain trade-off `alpha` and MMD/CORAL trade-off `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    alpha: f64,
    beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(LossWeights { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 0.7 }
    }
}

/// Gaussian kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelConfig {
    Fixed(f64),
    /// `sigma^2 = median(pairwise squared distances of the joint batch) / 2`,
    /// falling back to `sigma = 1` when the median is zero.
    MedianHeuristic,
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("kernel sigma must be positive, got {sigma}")));
        }
        Ok(KernelConfig::Fixed(sigma))
    }

    /// Resolves to a concrete `sigma` for the given pair of batches.
    pub fn bandwidth(&self, xs: &FeatureBatch, xt: &FeatureBatch) -> f64 {
        match *self {
            KernelConfig::Fixed(s) => s,
            KernelConfig::MedianHeuristic => median_heuristic_sigma(xs.view(), xt.view()),
        }
    }
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn median_heuristic_sigma(xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>) -> f64 {
    let joint: Vec<_> = xs.rows().into_iter().chain(xt.rows()).collect();
    let mut dists = Vec::with_capacity(joint.len() * joint.len().saturating_sub(1) / 2);
    for i in 0..joint.len() {
        for j in (i + 1)..joint.len() {
            dists.push(sq_dist(joint[i], joint[j]));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        (median / 2.0).sqrt()
    } else {
        1.0
    }
}

fn check_pair(xs: &FeatureBatch, xt: &FeatureBatch) -> Result<()> {
    if xs.dim() != xt.dim() {
        return Err(Error::DimensionMismatch {
            expected: xs.dim(),
            found: xt.dim(),
        });
    }
    Ok(())
}

/// Scales flattened coordinate `j` by `sqrt(w_flat[j])`.
pub fn weight_features(batch: &FeatureBatch, w: &WeightMatrix) -> Result<FeatureBatch> {
    if batch.dim() != IMAGE_PIXELS {
        return Err(Error::DimensionMismatch {
            expected: IMAGE_PIXELS,
            found: batch.dim(),
        });
    }
    let scale = Array1::from_iter(w.flat().iter().map(|v| v.sqrt()));
    Ok(FeatureBatch {
        data: &batch.data * &scale,
    })
}

/// Squared MMD and its gradients with respect to every entry of both batches.
#[derive(Debug, Clone)]
pub struct MmdOutput {
    pub value: f64,
    pub sigma: f64,
    pub grad_source: Array2<f64>,
    pub grad_target: Array2<f64>,
}

fn kernel_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, inv_two_sigma_sq: f64) -> Array2<f64> {
    let mut k = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            k[[i, j]] = (-sq_dist(ra, rb) * inv_two_sigma_sq).exp();
        }
    }
    k
}

/// `sum_j k_ij (x_i - y_j)` for every `i`, i.e. `diag(K 1) X - K Y`.
fn kernel_weighted_differences(k: &Array2<f64>, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
    let row_sums = k.sum_axis(Axis(1));
    let mut out = &x * &row_sums.insert_axis(Axis(1));
    out -= &k.dot(&y);
    out
}

/// Biased squared-MMD estimate with a Gaussian kernel of bandwidth `sigma`,
/// plus analytic gradients (sigma held constant).
pub fn mmd_squared_with_grad(xs: &FeatureBatch, xt: &FeatureBatch, sigma: f64) -> Result<MmdOutput> {
    check_pair(xs, xt)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("kernel sigma must be positive, got {sigma}")));
    }
    let (n, m) = (xs.rows() as f64, xt.rows() as f64);
    let g = 1.0 / (2.0 * sigma * sigma);
    let (s, t) = (xs.view(), xt.view());
    let kss = kernel_matrix(s, s, g);
    let ktt = kernel_matrix(t, t, g);
    let kst = kernel_matrix(s, t, g);
    let value = kss.sum() / (n * n) + ktt.sum() / (m * m) - 2.0 * kst.sum() / (n * m);

    // d k(x, y) / dx = -k(x, y) (x - y) / sigma^2
    let inv_sig_sq = 1.0 / (sigma * sigma);
    let kts = kst.t().to_owned();
    let grad_source = kernel_weighted_differences(&kss, s, s) * (-2.0 * inv_sig_sq / (n * n))
        + kernel_weighted_differences(&kst, s, t) * (2.0 * inv_sig_sq / (n * m));
    let grad_target = kernel_weighted_differences(&ktt, t, t) * (-2.0 * inv_sig_sq / (m * m))
        + kernel_weighted_differences(&kts, t, s) * (2.0 * inv_sig_sq / (n * m));
    Ok(MmdOutput {
        value,
        sigma,
        grad_source,
        grad_target,
    })
}

pub fn mmd_squared(xs: &FeatureBatch, xt: &FeatureBatch, kernel: &KernelConfig) -> Result<f64> {
    check_pair(xs, xt)?;
    let sigma = kernel.bandwidth(xs, xt);
    Ok(mmd_squared_with_grad(xs, xt, sigma)?.value)
}

/// Sample covariance `(X - mean)^T (X - mean) / (n - 1)` and the centred data.
pub(crate) fn covariance(x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    let centred = &x - &mean.insert_axis(Axis(0));
    let cov = centred.t().dot(&centred) / (x.nrows() as f64 - 1.0);
    (cov, centred)
}

#[derive(Debug, Clone)]
pub struct CoralOutput {
    pub value: f64,
    pub grad_source: Array2<f64>,
    pub grad_target: Array2<f64>,
}

/// `||C_s - C_t||_F^2` with analytic gradients.
pub fn coral_loss_with_grad(xs: &FeatureBatch, xt: &FeatureBatch) -> Result<CoralOutput> {
    check_pair(xs, xt)?;
    if xs.rows() < 2 || xt.rows() < 2 {
        return Err(Error::invalid("CORAL needs at least 2 rows in each batch"));
    }
    let (cs, centred_s) = covariance(xs.view());
    let (ct, centred_t) = covariance(xt.view());
    let diff = cs - ct;
    let value = diff.iter().map(|v| v * v).sum();
    // Centred rows have zero column means, so the centring projection drops out.
    let grad_source = centred_s.dot(&diff) * (4.0 / (xs.rows() as f64 - 1.0));
    let grad_target = centred_t.dot(&diff) * (-4.0 / (xt.rows() as f64 - 1.0));
    Ok(CoralOutput {
        value,
        grad_source,
        grad_target,
    })
}

pub fn coral_loss(xs: &FeatureBatch, xt: &FeatureBatch) -> Result<f64> {
    Ok(coral_loss_with_grad(xs, xt)?.value)
}

/// `alpha * cls + (1 - alpha) * (beta * mmd + (1 - beta) * coral)`.
pub fn combined_loss(cls: f64, mmd: f64, coral: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("classification", cls), ("mmd", mmd), ("coral", coral)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss")));
        }
    }
    let (a, b) = (w.alpha, w.beta);
    Ok(a * cls + (1.0 - a) * (b * mmd + (1.0 - b) * coral))
}
