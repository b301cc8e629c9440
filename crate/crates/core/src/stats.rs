//! Two-sample statistics: K-S statistics, the K-S derived weight matrix,
//! averaged KL divergence and pixel-intensity histograms.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::preprocess::{summation_field, FeatureVector, GafImage, IMAGE_PIXELS, NUM_FEATURES};

/// Default `epsilon` added to every normalized weight.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Default bin count for AKLD and histograms.
pub const DEFAULT_BINS: usize = 20;

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) - F_b(x)|`,
/// evaluated at every value in the union of both samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("ks_statistic needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("ks_statistic sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);

    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Per-feature K-S statistics in feature order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsVector(pub [f64; NUM_FEATURES]);

impl KsVector {
    pub fn new(values: [f64; NUM_FEATURES]) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("K-S entry {v} outside [0, 1]")));
        }
        Ok(KsVector(values))
    }

    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

fn marginal(features: &[FeatureVector], k: usize) -> Vec<f64> {
    features.iter().map(|v| v.0[k]).collect()
}

pub fn ks_feature_vector(source: &[FeatureVector], target: &[FeatureVector]) -> Result<KsVector> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("ks_feature_vector needs two non-empty sets"));
    }
    let mut out = [0.0; NUM_FEATURES];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = ks_statistic(&marginal(source, k), &marginal(target, k))?;
    }
    Ok(KsVector(out))
}

/// 9×9 pairwise feature weights in `[epsilon, 1 + epsilon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: [f64; IMAGE_PIXELS],
    epsilon: f64,
}

impl WeightMatrix {
    /// All-ones weights: alignment without feature prioritization.
    pub fn uniform() -> Self {
        WeightMatrix {
            values: [1.0; IMAGE_PIXELS],
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// Any non-negative finite 9×9 matrix, row-major. Used for synthetic
    /// weightings in tests and experiments.
    pub fn from_values(values: [f64; IMAGE_PIXELS], epsilon: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        Ok(WeightMatrix { values, epsilon })
    }

    /// Row-major flattening.
    pub fn flat(&self) -> &[f64; IMAGE_PIXELS] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * NUM_FEATURES + col]
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_uniform(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// K-S vector → min-max to `[-1, 1]` → summation field → min-max to `[0, 1]`
/// plus `epsilon`. A constant K-S vector carries no prioritization signal and
/// yields the all-ones matrix.
pub fn build_weight_matrix(ks: &KsVector, epsilon: f64) -> Result<WeightMatrix> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let ks = KsVector::new(ks.0)?;
    let (lo, hi) = min_max(&ks.0);
    if lo == hi {
        return Ok(WeightMatrix {
            values: [1.0; IMAGE_PIXELS],
            epsilon,
        });
    }
    let scaled: Vec<f64> =
        ks.0.iter()
            .map(|&v| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
            .collect();
    let field = summation_field(&scaled);
    let (glo, ghi) = min_max(&field);
    let mut values = [0.0; IMAGE_PIXELS];
    for (w, g) in values.iter_mut().zip(&field) {
        *w = (g - glo) / (ghi - glo) + epsilon;
    }
    Ok(WeightMatrix { values, epsilon })
}

/// Histogram counts over `[lo, hi]` with `bins` equal-width bins; the last bin
/// is closed on the right.
fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = hi - lo;
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        counts[idx] += 1.0;
    }
    counts
}

/// `KL(p || q)` for two probability vectors with strictly positive `q`
/// wherever `p` is positive.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::invalid(
                    "KL divergence undefined: q has zero mass where p does not",
                ));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// Per-feature `KL(source || target)` over shared-range histograms with
/// add-one count smoothing.
pub fn per_feature_kl(source: &[FeatureVector], target: &[FeatureVector], bins: usize) -> Result<[f64; NUM_FEATURES]> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("akld needs two non-empty sets"));
    }
    if bins < 2 {
        return Err(Error::invalid(format!("bins must be >= 2, got {bins}")));
    }
    let mut out = [0.0; NUM_FEATURES];
    for (k, slot) in out.iter_mut().enumerate() {
        let s = marginal(source, k);
        let t = marginal(target, k);
        let (slo, shi) = min_max(&s);
        let (tlo, thi) = min_max(&t);
        let (lo, hi) = (slo.min(tlo), shi.max(thi));
        let smooth = |counts: Vec<f64>, n: usize| -> Vec<f64> {
            let denom = (n + bins) as f64;
            counts.into_iter().map(|c| (c + 1.0) / denom).collect()
        };
        let p = smooth(bin_counts(&s, lo, hi, bins), s.len());
        let q = smooth(bin_counts(&t, lo, hi, bins), t.len());
        *slot = kl_divergence(&p, &q)?;
    }
    Ok(out)
}

/// Average Kullback-Leibler divergence over the nine features.
pub fn akld(source: &[FeatureVector], target: &[FeatureVector], bins: usize) -> Result<f64> {
    let per = per_feature_kl(source, target, bins)?;
    Ok(per.iter().sum::<f64>() / NUM_FEATURES as f64)
}

/// Pooled pixel-intensity distributions of two image sets over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport {
    pub edges: Vec<f64>,
    pub source_mass: Vec<f64>,
    pub target_mass: Vec<f64>,
}

pub const HISTOGRAM_CSV_HEADER: &str = "bin_lo,bin_hi,source_mass,target_mass";

impl HistogramReport {
    pub fn bins(&self) -> usize {
        self.source_mass.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTOGRAM_CSV_HEADER);
        out.push('\n');
        for b in 0..self.bins() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.edges[b],
                self.edges[b + 1],
                self.source_mass[b],
                self.target_mass[b]
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTOGRAM_CSV_HEADER) {
            return Err(Error::invalid("histogram CSV header mismatch"));
        }
        let mut report = HistogramReport {
            edges: Vec::new(),
            source_mass: Vec::new(),
            target_mass: Vec::new(),
        };
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    row: row + 2,
                    column: "*".into(),
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let parse = |i: usize| -> Result<f64> {
                fields[i].parse().map_err(|_| Error::Parse {
                    row: row + 2,
                    column: HISTOGRAM_CSV_HEADER.split(',').nth(i).unwrap_or("?").into(),
                    message: format!("not a number: `{}`", fields[i]),
                })
            };
            if report.edges.is_empty() {
                report.edges.push(parse(0)?);
            }
            report.edges.push(parse(1)?);
            report.source_mass.push(parse(2)?);
            report.target_mass.push(parse(3)?);
        }
        Ok(report)
    }
}

pub fn pixel_intensity_histogram(images_a: &[GafImage], images_b: &[GafImage], bins: usize) -> Result<HistogramReport> {
    if images_a.is_empty() || images_b.is_empty() {
        return Err(Error::EmptyInput("pixel histogram needs two non-empty image sets"));
    }
    if bins < 2 {
        return Err(Error::invalid(format!("bins must be >= 2, got {bins}")));
    }
    let edges: Vec<f64> = (0..=bins).map(|b| -1.0 + 2.0 * b as f64 / bins as f64).collect();
    let mass = |images: &[GafImage]| -> Vec<f64> {
        let pooled: Vec<f64> = images.iter().flat_map(|im| im.pixels().iter().copied()).collect();
        let total = pooled.len() as f64;
        bin_counts(&pooled, -1.0, 1.0, bins)
            .into_iter()
            .map(|c| c / total)
            .collect()
    };
    Ok(HistogramReport {
        edges,
        source_mass: mass(images_a),
        target_mass: mass(images_b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{gaf_encode, ScaledFeatureVector};
    use proptest::prelude::*;

    /// Brute-force ECDF oracle: evaluate both ECDFs at every pooled point.
    fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ks_oracle(&[1.0, 3.0], &[2.0, 4.0]), 0.5);
        assert_eq!(ks_statistic(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(ks_statistic(&[], &[1.0]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn ks_with_ties() {
        let a = [1.0, 1.0, 2.0, 2.0, 2.0];
        let b = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &b).unwrap(), ks_oracle(&a, &b));
    }

    #[test]
    fn shifted_feature_dominates_ks_vector() {
        let base: Vec<FeatureVector> = (0..200)
            .map(|i| {
                let x = (i as f64 * 0.618).fract() - 0.5;
                FeatureVector([x; NUM_FEATURES])
            })
            .collect();
        // unit-ish spread; shift feature 3 by ten spreads
        let shifted: Vec<FeatureVector> = base
            .iter()
            .map(|v| {
                let mut w = v.0;
                w[3] += 10.0;
                FeatureVector(w)
            })
            .collect();
        let ks = ks_feature_vector(&base, &shifted).unwrap();
        for k in 0..NUM_FEATURES {
            let expected = ks_oracle(&marginal(&base, k), &marginal(&shifted, k));
            assert_eq!(ks.0[k], expected);
        }
        assert_eq!(ks.0[3], 1.0);
        assert!(ks.0.iter().enumerate().all(|(k, &v)| k == 3 || v == 0.0));
        assert_eq!(ks_feature_vector(&base, &base).unwrap().0, [0.0; NUM_FEATURES]);
    }

    #[test]
    fn weight_matrix_degenerate_and_range() {
        let w = build_weight_matrix(&KsVector([0.2; NUM_FEATURES]), 1e-3).unwrap();
        assert!(w.is_uniform());
        assert!(build_weight_matrix(&KsVector([0.2; NUM_FEATURES]), 0.0).is_err());
        assert!(build_weight_matrix(&KsVector([0.2; NUM_FEATURES]), -1.0).is_err());
        assert!(build_weight_matrix(&KsVector([1.2; NUM_FEATURES]), 1e-3).is_err());
    }

    /// Recomputes the weight matrix step by step with scalar code.
    fn weight_oracle(ks: [f64; 9], eps: f64) -> [[f64; 9]; 9] {
        let lo = ks.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let phi: Vec<f64> = ks.iter().map(|v| (2.0 * (v - lo) / (hi - lo) - 1.0).acos()).collect();
        let mut g = [[0.0; 9]; 9];
        for i in 0..9 {
            for j in 0..9 {
                g[i][j] = (phi[i] + phi[j]).cos();
            }
        }
        let glo = g.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let ghi = g.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w = [[0.0; 9]; 9];
        for i in 0..9 {
            for j in 0..9 {
                w[i][j] = (g[i][j] - glo) / (ghi - glo) + eps;
            }
        }
        w
    }

    #[test]
    fn weight_matrix_from_reference_ks_values() {
        // Order: H2, CH4, C2H2, C2H4, C2H6 ratios, then the four log ratios.
        let ks = [0.1593, 0.1163, 0.1022, 0.1653, 0.0507, 0.0665, 0.0418, 0.1311, 0.0564];
        let eps = 1e-3;
        let w = build_weight_matrix(&KsVector::new(ks).unwrap(), eps).unwrap();
        let oracle = weight_oracle(ks, eps);
        let mut argmax = (0, 0);
        for i in 0..9 {
            for j in 0..9 {
                assert!((w.get(i, j) - oracle[i][j]).abs() < 1e-12);
                if oracle[i][j] > oracle[argmax.0][argmax.1] {
                    argmax = (i, j);
                }
            }
        }
        assert!((w.get(argmax.0, argmax.1) - (1.0 + eps)).abs() < 1e-12);
        // Largest K-S entry (C2H4 ratio) scales to +1; its self-pair hits the max.
        assert!((w.get(3, 3) - (1.0 + eps)).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_form() {
        let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn akld_large_sample_two_bin() {
        // Feature 0: source half at 0 / half at 1; target quarter at 0.
        let make = |n: usize, zeros: usize| -> Vec<FeatureVector> {
            (0..n)
                .map(|i| FeatureVector([if i < zeros { 0.0 } else { 1.0 }; NUM_FEATURES]))
                .collect()
        };
        let s = make(100_000, 50_000);
        let t = make(100_000, 25_000);
        let per = per_feature_kl(&s, &t, 2).unwrap();
        assert!((per[0] - 0.14384).abs() < 1e-4);
        assert!((akld(&s, &t, 2).unwrap() - 0.14384).abs() < 1e-4);
    }

    #[test]
    fn akld_identical_sets_vanish() {
        let s: Vec<FeatureVector> = (0..1000)
            .map(|i| FeatureVector([(i as f64 * 0.37).sin(); NUM_FEATURES]))
            .collect();
        assert!(akld(&s, &s, DEFAULT_BINS).unwrap() < 1e-6);
        assert!(akld(&s, &s, 1).is_err());
        assert!(akld(&[], &s, 20).is_err());
    }

    #[test]
    fn histogram_examples() {
        let neg = GafImage::from_pixels([-1.0; IMAGE_PIXELS]).unwrap();
        let h = pixel_intensity_histogram(std::slice::from_ref(&neg), &[neg.clone(), neg.clone()], 10).unwrap();
        assert_eq!(h.source_mass[0], 1.0);
        assert_eq!(h.source_mass, h.target_mass);
        assert_eq!(h.edges.len(), 11);
        let back = HistogramReport::from_csv(&h.to_csv()).unwrap();
        assert_eq!(back, h);
    }

    proptest! {
        #[test]
        fn ks_matches_oracle(
            a in proptest::collection::vec(-5i32..5, 1..50),
            b in proptest::collection::vec(-5i32..5, 1..50),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert_eq!(d, ks_oracle(&a, &b));
            prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
            let ta: Vec<f64> = a.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            let tb: Vec<f64> = b.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(d, ks_statistic(&ta, &tb).unwrap());
        }

        #[test]
        fn weight_matrix_range(ks in proptest::array::uniform9(0.0f64..=1.0)) {
            let lo = ks.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(hi > lo);
            let eps = 1e-3;
            let w = build_weight_matrix(&KsVector(ks), eps).unwrap();
            let (wlo, whi) = min_max(w.flat());
            prop_assert!((wlo - eps).abs() < 1e-12);
            prop_assert!((whi - 1.0 - eps).abs() < 1e-12);
            for i in 0..9 {
                for j in 0..9 {
                    prop_assert_eq!(w.get(i, j), w.get(j, i));
                }
            }
        }

        #[test]
        fn histogram_mass_sums_to_one(
            xs in proptest::collection::vec(proptest::array::uniform9(-1.0f64..=1.0), 1..8),
            bins in 2usize..30,
        ) {
            let imgs: Vec<GafImage> = xs
                .into_iter()
                .map(|x| gaf_encode(&ScaledFeatureVector::new(x).unwrap()))
                .collect();
            let h = pixel_intensity_histogram(&imgs, &imgs[..1], bins).unwrap();
            prop_assert!((h.source_mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((h.target_mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(h.source_mass.iter().all(|&m| m >= 0.0));
        }
    }
}
