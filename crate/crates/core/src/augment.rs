//! Class-balancing augmentation of GAF images.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::preprocess::{FaultLabel, GafImage, IMAGE_PIXELS, NUM_CLASSES, NUM_FEATURES};
use crate::seed::{mix_seed, rng_from_seed};

/// One image perturbation with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentationKind {
    GaussianBlur { sigma: f64 },
    GaussianNoise { std: f64 },
    SaltPepper { density: f64 },
    Brighten { delta: f64 },
    Darken { delta: f64 },
}

impl AugmentationKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentationKind::GaussianBlur { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma}")))
            }
            AugmentationKind::GaussianNoise { std } if !(std >= 0.0 && std.is_finite()) => {
                Err(Error::invalid(format!("noise std must be >= 0, got {std}")))
            }
            AugmentationKind::SaltPepper { density } if !(0.0..=1.0).contains(&density) => Err(Error::invalid(
                format!("salt-and-pepper density must be in [0, 1], got {density}"),
            )),
            AugmentationKind::Brighten { delta } | AugmentationKind::Darken { delta } if !delta.is_finite() => {
                Err(Error::NonFinite("brightness delta".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AugmentationKind::GaussianBlur { .. } => "gaussian_blur",
            AugmentationKind::GaussianNoise { .. } => "gaussian_noise",
            AugmentationKind::SaltPepper { .. } => "salt_pepper",
            AugmentationKind::Brighten { .. } => "brighten",
            AugmentationKind::Darken { .. } => "darken",
        }
    }
}

/// Magnitudes for the five perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationParams {
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub salt_pepper_density: f64,
    pub brightness_delta: f64,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        AugmentationParams {
            blur_sigma: 0.8,
            noise_std: 0.05,
            salt_pepper_density: 0.02,
            brightness_delta: 0.1,
        }
    }
}

impl AugmentationParams {
    /// The five kinds in cycling order: blur, noise, salt-and-pepper,
    /// brighten, darken.
    pub fn kinds(&self) -> [AugmentationKind; 5] {
        [
            AugmentationKind::GaussianBlur { sigma: self.blur_sigma },
            AugmentationKind::GaussianNoise { std: self.noise_std },
            AugmentationKind::SaltPepper {
                density: self.salt_pepper_density,
            },
            AugmentationKind::Brighten {
                delta: self.brightness_delta,
            },
            AugmentationKind::Darken {
                delta: self.brightness_delta,
            },
        ]
    }
}

const N: usize = NUM_FEATURES;

fn blur_kernel(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    if sigma == 0.0 {
        k[1][1] = 1.0;
        return k;
    }
    let mut total = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (y, x) = (dy as f64 - 1.0, dx as f64 - 1.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= total);
    k
}

fn blur(pixels: &[f64; IMAGE_PIXELS], sigma: f64) -> [f64; IMAGE_PIXELS] {
    let k = blur_kernel(sigma);
    let mut out = [0.0; IMAGE_PIXELS];
    for i in 0..N {
        for j in 0..N {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                let y = (i + dy).saturating_sub(1).min(N - 1);
                for (dx, w) in row.iter().enumerate() {
                    let x = (j + dx).saturating_sub(1).min(N - 1);
                    acc += w * pixels[y * N + x];
                }
            }
            out[i * N + j] = acc;
        }
    }
    out
}

fn symmetrize_and_clamp(mut p: [f64; IMAGE_PIXELS]) -> GafImage {
    for i in 0..N {
        for j in (i + 1)..N {
            let avg = 0.5 * (p[i * N + j] + p[j * N + i]);
            p[i * N + j] = avg;
            p[j * N + i] = avg;
        }
    }
    for v in p.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    GafImage::from_pixels_unchecked(p)
}

/// Applies one perturbation. Output is symmetric, clamped to `[-1, 1]` and
/// deterministic for a fixed seed.
pub fn apply_augmentation(image: &GafImage, kind: &AugmentationKind, seed: u64) -> Result<GafImage> {
    kind.validate()?;
    let src = image.pixels();
    let mut rng = rng_from_seed(seed);
    let out = match *kind {
        AugmentationKind::GaussianBlur { sigma } => blur(src, sigma),
        AugmentationKind::GaussianNoise { std } => {
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            let mut p = *src;
            p.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            p
        }
        AugmentationKind::SaltPepper { density } => {
            // Corrupt mirrored pairs so the result is already symmetric.
            let mut p = *src;
            for i in 0..N {
                for j in i..N {
                    if rng.random::<f64>() < density {
                        let v = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        p[i * N + j] = v;
                        p[j * N + i] = v;
                    }
                }
            }
            p
        }
        AugmentationKind::Brighten { delta } => src.map(|v| v + delta),
        AugmentationKind::Darken { delta } => src.map(|v| v - delta),
    };
    Ok(symmetrize_and_clamp(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GafImage,
    pub label: FaultLabel,
    pub provenance: Provenance,
}

/// Labeled images with provenance; never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    items: Vec<LabeledImage>,
}

impl LabeledImageSet {
    pub fn new(items: Vec<LabeledImage>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyInput("labeled image set"));
        }
        Ok(LabeledImageSet { items })
    }

    pub fn from_originals(pairs: impl IntoIterator<Item = (GafImage, FaultLabel)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(image, label)| LabeledImage {
                    image,
                    label,
                    provenance: Provenance::Original,
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for item in &self.items {
            counts[item.label.index()] += 1;
        }
        counts
    }

    pub fn into_items(self) -> Vec<LabeledImage> {
        self.items
    }
}

/// Tops up every class below `target_per_class` with augmented copies.
///
/// The k-th augmented item of a class with `c` originals perturbs original
/// `k % c` with kind `(k / c) % 5` of [`AugmentationParams::kinds`], seeded by
/// `mix(seed, class, k)`. Output holds all input items in their original
/// order, followed by augmented items grouped by class.
pub fn balance_augment(
    data: &LabeledImageSet,
    target_per_class: usize,
    params: &AugmentationParams,
    seed: u64,
) -> Result<LabeledImageSet> {
    if target_per_class == 0 {
        return Err(Error::invalid("target_per_class must be positive"));
    }
    let kinds = params.kinds();
    for k in &kinds {
        k.validate()?;
    }
    let mut items = data.items.clone();
    for label in FaultLabel::ALL {
        let originals: Vec<&GafImage> = data
            .items
            .iter()
            .filter(|it| it.label == label && it.provenance == Provenance::Original)
            .map(|it| &it.image)
            .collect();
        if originals.is_empty() {
            return Err(Error::invalid(format!("class {label} has no original samples")));
        }
        let have = data.items.iter().filter(|it| it.label == label).count();
        let c = originals.len();
        for k in 0..target_per_class.saturating_sub(have) {
            let kind = &kinds[(k / c) % kinds.len()];
            let item_seed = mix_seed(seed, &[label.index() as u64, k as u64]);
            items.push(LabeledImage {
                image: apply_augmentation(originals[k % c], kind, item_seed)?,
                label,
                provenance: Provenance::Augmented,
            });
        }
    }
    Ok(LabeledImageSet { items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{gaf_encode, ScaledFeatureVector};
    use proptest::prelude::*;
    use rand::Rng;

    fn image(seed: u64) -> GafImage {
        let mut rng = rng_from_seed(seed);
        let x: [f64; N] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        gaf_encode(&ScaledFeatureVector::new(x).unwrap())
    }

    fn assert_valid(img: &GafImage) {
        assert!(GafImage::from_pixels(*img.pixels()).is_ok());
    }

    #[test]
    fn identity_parameters() {
        let img = image(1);
        for kind in [
            AugmentationKind::GaussianNoise { std: 0.0 },
            AugmentationKind::Brighten { delta: 0.0 },
            AugmentationKind::Darken { delta: 0.0 },
            AugmentationKind::GaussianBlur { sigma: 0.0 },
            AugmentationKind::SaltPepper { density: 0.0 },
        ] {
            assert_eq!(apply_augmentation(&img, &kind, 3).unwrap(), img, "{}", kind.name());
        }
    }

    #[test]
    fn full_salt_pepper() {
        let out = apply_augmentation(&image(2), &AugmentationKind::SaltPepper { density: 1.0 }, 9).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 1.0 || v == -1.0));
        assert_valid(&out);
    }

    #[test]
    fn blur_keeps_constant_image() {
        let c = GafImage::from_pixels([0.3; IMAGE_PIXELS]).unwrap();
        let out = apply_augmentation(&c, &AugmentationKind::GaussianBlur { sigma: 0.8 }, 0).unwrap();
        for &v in out.pixels() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn brighten_clamps() {
        let c = GafImage::from_pixels([0.95; IMAGE_PIXELS]).unwrap();
        let out = apply_augmentation(&c, &AugmentationKind::Brighten { delta: 0.1 }, 0).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let img = image(0);
        for kind in [
            AugmentationKind::GaussianBlur { sigma: -0.1 },
            AugmentationKind::GaussianNoise { std: -1.0 },
            AugmentationKind::SaltPepper { density: 1.5 },
            AugmentationKind::Brighten { delta: f64::NAN },
        ] {
            assert!(apply_augmentation(&img, &kind, 0).is_err());
        }
    }

    fn dataset(counts: [usize; NUM_CLASSES]) -> LabeledImageSet {
        let mut pairs = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                pairs.push((image((c * 100 + i) as u64), FaultLabel::from_index(c).unwrap()));
            }
        }
        LabeledImageSet::from_originals(pairs).unwrap()
    }

    #[test]
    fn balancing_counts() {
        let data = dataset([10, 5, 10, 10, 10]);
        let out = balance_augment(&data, 10, &AugmentationParams::default(), 4).unwrap();
        assert_eq!(out.class_counts(), [10; NUM_CLASSES]);
        let augmented: Vec<_> = out
            .items()
            .iter()
            .filter(|it| it.provenance == Provenance::Augmented)
            .collect();
        assert_eq!(augmented.len(), 5);
        assert!(augmented.iter().all(|it| it.label == FaultLabel::D1));
        assert_eq!(&out.items()[..data.len()], data.items());
    }

    #[test]
    fn balanced_input_passes_through() {
        let data = dataset([4; NUM_CLASSES]);
        let out = balance_augment(&data, 4, &AugmentationParams::default(), 1).unwrap();
        assert_eq!(out, data);
        let out = balance_augment(&data, 2, &AugmentationParams::default(), 1).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn missing_class_is_an_error() {
        let data = dataset([3, 0, 3, 3, 3]);
        assert!(balance_augment(&data, 5, &AugmentationParams::default(), 1).is_err());
    }

    proptest! {
        #[test]
        fn balance_is_deterministic_and_valid(
            counts in proptest::array::uniform5(1usize..6),
            target in 1usize..12,
            seed in any::<u64>(),
        ) {
            let data = dataset(counts);
            let params = AugmentationParams::default();
            let a = balance_augment(&data, target, &params, seed).unwrap();
            let b = balance_augment(&data, target, &params, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let got = a.class_counts();
            for c in 0..NUM_CLASSES {
                prop_assert_eq!(got[c], counts[c].max(target));
            }
            prop_assert_eq!(&a.items()[..data.len()], data.items());
            for it in a.items() {
                prop_assert!(GafImage::from_pixels(*it.image.pixels()).is_ok());
            }
        }
    }
}
