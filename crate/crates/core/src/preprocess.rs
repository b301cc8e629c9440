//! Hybrid DGA ratios and Gramian Angular Field encoding.
//!
//! A gas measurement becomes a 9-entry feature vector: the five gas
//! percentages followed by the natural logs of Rogers' four ratios. After
//! min-max scaling into `[-1, 1]` the vector is encoded as a 9×9 Gramian
//! Angular Summation Field image.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of hybrid ratio features.
pub const NUM_FEATURES: usize = 9;
/// Number of pixels in a GAF image.
pub const IMAGE_PIXELS: usize = NUM_FEATURES * NUM_FEATURES;
/// Number of fault classes.
pub const NUM_CLASSES: usize = 5;

/// Concentrations below this (ppm) are raised to it before any ratio is taken.
pub const GAS_FLOOR_PPM: f64 = 0.1;

/// Feature names in vector order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "H2 Ratio",
    "CH4 Ratio",
    "C2H2 Ratio",
    "C2H4 Ratio",
    "C2H6 Ratio",
    "Ln(CH4/H2)",
    "Ln(C2H6/CH4)",
    "Ln(C2H4/C2H6)",
    "Ln(C2H2/C2H4)",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultLabel {
    /// Partial discharge.
    Pd,
    /// Low energy discharge.
    D1,
    /// High energy discharge.
    D2,
    /// Low and medium temperature thermal fault.
    T1T2,
    /// High temperature thermal fault.
    T3,
}

impl FaultLabel {
    pub const ALL: [FaultLabel; NUM_CLASSES] = [
        FaultLabel::Pd,
        FaultLabel::D1,
        FaultLabel::D2,
        FaultLabel::T1T2,
        FaultLabel::T3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {index} outside 0..{NUM_CLASSES}")))
    }

    pub fn code(self) -> &'static str {
        match self {
            FaultLabel::Pd => "PD",
            FaultLabel::D1 => "D1",
            FaultLabel::D2 => "D2",
            FaultLabel::T1T2 => "T1T2",
            FaultLabel::T3 => "T3",
        }
    }
}

impl fmt::Display for FaultLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for FaultLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.code() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fault label `{s}` (expected PD|D1|D2|T1T2|T3)")))
    }
}

/// One oil measurement, concentrations in ppm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasSample {
    pub h2: f64,
    pub ch4: f64,
    pub c2h2: f64,
    pub c2h4: f64,
    pub c2h6: f64,
    pub label: Option<FaultLabel>,
}

impl GasSample {
    /// Validated constructor; rejects negative or non-finite concentrations.
    pub fn new(h2: f64, ch4: f64, c2h2: f64, c2h4: f64, c2h6: f64, label: Option<FaultLabel>) -> Result<Self> {
        let sample = GasSample {
            h2,
            ch4,
            c2h2,
            c2h4,
            c2h6,
            label,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Concentrations in the order H2, CH4, C2H2, C2H4, C2H6.
    pub fn gases(&self) -> [f64; 5] {
        [self.h2, self.ch4, self.c2h2, self.c2h4, self.c2h6]
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 5] = ["h2", "ch4", "c2h2", "c2h4", "c2h6"];
        for (name, g) in NAMES.iter().zip(self.gases()) {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gas concentration {name}")));
            }
            if g < 0.0 {
                return Err(Error::invalid(format!("negative concentration {name} = {g}")));
            }
        }
        Ok(())
    }
}

/// The nine hybrid DGA ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

pub fn compute_hybrid_ratios(sample: &GasSample) -> Result<FeatureVector> {
    sample.validate()?;
    let [h2, ch4, c2h2, c2h4, c2h6] = sample.gases().map(|g| g.max(GAS_FLOOR_PPM));
    let total = h2 + ch4 + c2h2 + c2h4 + c2h6;
    Ok(FeatureVector([
        h2 / total,
        ch4 / total,
        c2h2 / total,
        c2h4 / total,
        c2h6 / total,
        (ch4 / h2).ln(),
        (c2h6 / ch4).ln(),
        (c2h4 / c2h6).ln(),
        (c2h2 / c2h4).ln(),
    ]))
}

/// Per-feature min/max used to map features into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScaler {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

impl FeatureScaler {
    /// Fits per-feature ranges. A feature with zero spread gets its range
    /// widened by 0.5 on each side.
    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        let first = features
            .first()
            .ok_or(Error::EmptyInput("feature scaler needs at least one vector"))?;
        let mut min = first.0;
        let mut max = first.0;
        for v in &features[1..] {
            for k in 0..NUM_FEATURES {
                min[k] = min[k].min(v.0[k]);
                max[k] = max[k].max(v.0[k]);
            }
        }
        for k in 0..NUM_FEATURES {
            if !(min[k].is_finite() && max[k].is_finite()) {
                return Err(Error::NonFinite(format!("feature {}", FEATURE_NAMES[k])));
            }
            if min[k] == max[k] {
                min[k] -= 0.5;
                max[k] += 0.5;
            }
        }
        Ok(FeatureScaler { min, max })
    }

    /// Builds a scaler from explicit ranges (used when loading checkpoints).
    pub fn from_ranges(min: [f64; NUM_FEATURES], max: [f64; NUM_FEATURES]) -> Result<Self> {
        for k in 0..NUM_FEATURES {
            if !(min[k].is_finite() && max[k].is_finite()) || max[k] < min[k] {
                return Err(Error::invalid(format!(
                    "scaler range for feature {k} is [{}, {}]",
                    min[k], max[k]
                )));
            }
        }
        Ok(FeatureScaler { min, max })
    }

    /// Maps into `[-1, 1]`, clamping values that fall outside the fitted range.
    pub fn scale(&self, v: &FeatureVector) -> ScaledFeatureVector {
        ScaledFeatureVector(std::array::from_fn(|k| {
            let span = self.max[k] - self.min[k];
            let x = if span > 0.0 {
                2.0 * (v.0[k] - self.min[k]) / span - 1.0
            } else {
                0.0
            };
            x.clamp(-1.0, 1.0)
        }))
    }
}

pub fn fit_feature_scaler(features: &[FeatureVector]) -> Result<FeatureScaler> {
    FeatureScaler::fit(features)
}

pub fn scale_features(v: &FeatureVector, scaler: &FeatureScaler) -> ScaledFeatureVector {
    scaler.scale(v)
}

/// A feature vector with every component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledFeatureVector([f64; NUM_FEATURES]);

impl ScaledFeatureVector {
    pub fn new(values: [f64; NUM_FEATURES]) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(Error::invalid(format!("scaled component {x} outside [-1, 1]")));
        }
        Ok(ScaledFeatureVector(values))
    }

    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

/// Single-channel 9×9 image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GafImage {
    pixels: [f64; IMAGE_PIXELS],
}

impl GafImage {
    /// Accepts any symmetric image with entries in `[-1, 1]`; augmented
    /// images satisfy this without being exact summation fields.
    pub fn from_pixels(pixels: [f64; IMAGE_PIXELS]) -> Result<Self> {
        for (idx, &p) in pixels.iter().enumerate() {
            if !(-1.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("pixel {idx} = {p} outside [-1, 1]")));
            }
        }
        for i in 0..NUM_FEATURES {
            for j in (i + 1)..NUM_FEATURES {
                if pixels[i * NUM_FEATURES + j] != pixels[j * NUM_FEATURES + i] {
                    return Err(Error::invalid(format!("image not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(GafImage { pixels })
    }

    pub(crate) fn from_pixels_unchecked(pixels: [f64; IMAGE_PIXELS]) -> Self {
        GafImage { pixels }
    }

    pub fn pixels(&self) -> &[f64; IMAGE_PIXELS] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * NUM_FEATURES + col]
    }
}

/// Summation field of an arbitrary vector in `[-1, 1]`:
/// `G[i][j] = x_i x_j - sqrt(1 - x_i^2) sqrt(1 - x_j^2) = cos(phi_i + phi_j)`.
pub(crate) fn summation_field(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let sines: Vec<f64> = x.iter().map(|&v| (1.0 - v * v).max(0.0).sqrt()).collect();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let g = (x[i] * x[j] - sines[i] * sines[j]).clamp(-1.0, 1.0);
            out[i * d + j] = g;
            out[j * d + i] = g;
        }
    }
    out
}

pub fn gaf_encode(x: &ScaledFeatureVector) -> GafImage {
    let field = summation_field(&x.0);
    let mut pixels = [0.0; IMAGE_PIXELS];
    pixels.copy_from_slice(&field);
    GafImage::from_pixels_unchecked(pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(h2: f64, ch4: f64, c2h2: f64, c2h4: f64, c2h6: f64) -> GasSample {
        GasSample::new(h2, ch4, c2h2, c2h4, c2h6, None).unwrap()
    }

    #[test]
    fn equal_gases_give_equal_shares() {
        let f = compute_hybrid_ratios(&sample(100.0, 100.0, 100.0, 100.0, 100.0)).unwrap();
        for k in 0..5 {
            assert!((f.0[k] - 0.2).abs() < 1e-15);
        }
        for k in 5..9 {
            assert_eq!(f.0[k], 0.0);
        }
    }

    #[test]
    fn methane_hydrogen_log_ratio() {
        let f = compute_hybrid_ratios(&sample(100.0, 200.0, 100.0, 100.0, 100.0)).unwrap();
        assert!((f.0[5] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_gas_is_floored() {
        let f = compute_hybrid_ratios(&sample(100.0, 100.0, 0.0, 100.0, 100.0)).unwrap();
        assert!((f.0[8] - (-6.907755)).abs() < 1e-6);
        assert!(f.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn all_zero_gases_stay_finite() {
        let f = compute_hybrid_ratios(&sample(0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(f.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_concentrations() {
        assert!(GasSample::new(-1.0, 0.0, 0.0, 0.0, 0.0, None).is_err());
        assert!(GasSample::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, None).is_err());
        let bad = GasSample {
            h2: 1.0,
            ch4: f64::INFINITY,
            c2h2: 0.0,
            c2h4: 0.0,
            c2h6: 0.0,
            label: None,
        };
        assert!(compute_hybrid_ratios(&bad).is_err());
    }

    #[test]
    fn scaler_fit_and_degenerate_widening() {
        let mut a = [0.0; NUM_FEATURES];
        let mut b = [0.0; NUM_FEATURES];
        a[0] = 0.1;
        b[0] = 0.3;
        let s = FeatureScaler::fit(&[FeatureVector(a), FeatureVector(b)]).unwrap();
        assert_eq!((s.min[0], s.max[0]), (0.1, 0.3));
        assert_eq!((s.min[1], s.max[1]), (-0.5, 0.5));

        let single = FeatureScaler::fit(&[FeatureVector([2.0; NUM_FEATURES])]).unwrap();
        assert!(single.min.iter().all(|&m| m == 1.5));
        assert!(single.max.iter().all(|&m| m == 2.5));

        assert!(matches!(FeatureScaler::fit(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn scaling_endpoints_midpoint_and_clamp() {
        let s = FeatureScaler::from_ranges([0.0; NUM_FEATURES], [2.0; NUM_FEATURES]).unwrap();
        let mut v = [0.0; NUM_FEATURES];
        v[1] = 1.0;
        v[2] = 2.0;
        v[3] = 12.0;
        v[4] = -5.0;
        let x = s.scale(&FeatureVector(v));
        assert_eq!(x.0[0], -1.0);
        assert_eq!(x.0[1], 0.0);
        assert_eq!(x.0[2], 1.0);
        assert_eq!(x.0[3], 1.0);
        assert_eq!(x.0[4], -1.0);
    }

    #[test]
    fn gaf_boundary_cases() {
        let zeros = gaf_encode(&ScaledFeatureVector::new([0.0; NUM_FEATURES]).unwrap());
        assert!(zeros.pixels().iter().all(|&p| (p + 1.0).abs() < 1e-15));

        let mut x = [0.0; NUM_FEATURES];
        x[0] = 1.0;
        let g = gaf_encode(&ScaledFeatureVector::new(x).unwrap());
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 1), -1.0);

        let mut x = [0.0; NUM_FEATURES];
        x[4] = 0.5;
        let g = gaf_encode(&ScaledFeatureVector::new(x).unwrap());
        assert!((g.get(4, 4) - (-0.5)).abs() < 1e-15);
        let direct = (2.0 * 0.5f64.acos()).cos();
        assert!((g.get(4, 4) - direct).abs() < 1e-15);
    }

    #[test]
    fn scaled_vector_rejects_out_of_range() {
        let mut x = [0.0; NUM_FEATURES];
        x[2] = 1.5;
        assert!(ScaledFeatureVector::new(x).is_err());
    }

    #[test]
    fn label_codes_round_trip() {
        for l in FaultLabel::ALL {
            assert_eq!(l.code().parse::<FaultLabel>().unwrap(), l);
            assert_eq!(FaultLabel::from_index(l.index()).unwrap(), l);
        }
        assert!("X1".parse::<FaultLabel>().is_err());
        assert!(FaultLabel::from_index(5).is_err());
    }

    proptest! {
        #[test]
        fn gaf_is_symmetric_bounded_with_diagonal_identity(
            xs in proptest::array::uniform9(-1.0f64..=1.0)
        ) {
            let g = gaf_encode(&ScaledFeatureVector::new(xs).unwrap());
            for (i, x) in xs.iter().enumerate() {
                prop_assert!((g.get(i, i) - (2.0 * x * x - 1.0)).abs() < 1e-12);
                for j in 0..NUM_FEATURES {
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                    prop_assert!((-1.0..=1.0).contains(&g.get(i, j)));
                }
            }
        }

        #[test]
        fn percentages_sum_to_one(gases in proptest::array::uniform5(0.0f64..1e5)) {
            let [h2, ch4, c2h2, c2h4, c2h6] = gases;
            let f = compute_hybrid_ratios(&sample(h2, ch4, c2h2, c2h4, c2h6)).unwrap();
            let total: f64 = f.0[..5].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(f.0[..5].iter().all(|&p| p > 0.0 && p <= 1.0));
            prop_assert!(f.0.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn fitted_set_maps_onto_unit_interval(
            rows in proptest::collection::vec(proptest::array::uniform9(-50.0f64..50.0), 2..20)
        ) {
            let feats: Vec<FeatureVector> = rows.into_iter().map(FeatureVector).collect();
            let s = FeatureScaler::fit(&feats).unwrap();
            for k in 0..NUM_FEATURES {
                let scaled: Vec<f64> = feats.iter().map(|v| s.scale(v).0[k]).collect();
                prop_assert!(scaled.iter().all(|x| (-1.0..=1.0).contains(x)));
                let lo = feats.iter().map(|v| v.0[k]).fold(f64::INFINITY, f64::min);
                let hi = feats.iter().map(|v| v.0[k]).fold(f64::NEG_INFINITY, f64::max);
                if lo < hi {
                    for (v, x) in feats.iter().zip(&scaled) {
                        if v.0[k] == lo { prop_assert_eq!(*x, -1.0); }
                        if v.0[k] == hi { prop_assert!((x - 1.0).abs() < 1e-12); }
                    }
                }
            }
        }
    }
}
