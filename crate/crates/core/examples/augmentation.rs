// The five image perturbations and class balancing.

use dga_adapt::augment::{apply_augmentation, balance_augment, AugmentationParams, LabeledImageSet, Provenance};
use dga_adapt::preprocess::{compute_hybrid_ratios, gaf_encode, FaultLabel, FeatureScaler};
use dga_adapt::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> dga_adapt::Result<()> {
    let (source, _) = generate(&SyntheticConfig::default())?;
    let features = source
        .iter()
        .map(compute_hybrid_ratios)
        .collect::<dga_adapt::Result<Vec<_>>>()?;
    let scaler = FeatureScaler::fit(&features)?;
    let images: Vec<_> = features.iter().map(|f| gaf_encode(&scaler.scale(f))).collect();

    let params = AugmentationParams::default();
    for (i, kind) in params.kinds().iter().enumerate() {
        let out = apply_augmentation(&images[0], kind, i as u64)?;
        let change = out
            .pixels()
            .iter()
            .zip(images[0].pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{:<12} max |Δpixel| = {change:.3}", kind.name());
    }

    let set = LabeledImageSet::from_originals(images.into_iter().zip(source.iter().map(|s| s.label.unwrap())))?;
    println!("before: {:?}", set.class_counts());
    let balanced = balance_augment(&set, 150, &params, 7)?;
    println!("after:  {:?}", balanced.class_counts());
    let added = balanced
        .items()
        .iter()
        .filter(|it| it.provenance == Provenance::Augmented)
        .count();
    println!("{added} augmented images, {} total", balanced.len());
    assert_eq!(balanced.class_counts(), [150; 5]);
    assert_eq!(set.class_counts()[FaultLabel::Pd.index()], 150);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
