// Distribution diagnostics: AKLD per feature and pooled GAF pixel histograms.

use dga_adapt::preprocess::{compute_hybrid_ratios, gaf_encode, FeatureScaler, FEATURE_NAMES};
use dga_adapt::stats::{akld, per_feature_kl, pixel_intensity_histogram, HistogramReport};
use dga_adapt::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> dga_adapt::Result<()> {
    let (source, target) = generate(&SyntheticConfig::default())?;
    let fs = source
        .iter()
        .map(compute_hybrid_ratios)
        .collect::<dga_adapt::Result<Vec<_>>>()?;
    let ft = target
        .iter()
        .map(compute_hybrid_ratios)
        .collect::<dga_adapt::Result<Vec<_>>>()?;

    let per = per_feature_kl(&fs, &ft, 20)?;
    for (name, kl) in FEATURE_NAMES.iter().zip(per) {
        println!("{name:>14}  KL = {kl:.4}");
    }
    println!("AKLD source vs target = {:.4}", akld(&fs, &ft, 20)?);
    println!("AKLD source vs source = {:.2e}", akld(&fs, &fs, 20)?);

    let scaler = FeatureScaler::fit(&fs)?;
    let img = |f: &Vec<_>| f.iter().map(|v| gaf_encode(&scaler.scale(v))).collect::<Vec<_>>();
    let hist = pixel_intensity_histogram(&img(&fs), &img(&ft), 10)?;
    let csv = hist.to_csv();
    print!("{csv}");
    assert_eq!(HistogramReport::from_csv(&csv)?, hist);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
