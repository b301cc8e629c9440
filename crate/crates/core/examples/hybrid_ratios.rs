// From raw gas concentrations to a 9×9 GAF image.

use dga_adapt::preprocess::{
    compute_hybrid_ratios, gaf_encode, FaultLabel, FeatureScaler, GasSample, FEATURE_NAMES, NUM_FEATURES,
};

pub fn run_example() -> dga_adapt::Result<()> {
    let fleet = [
        GasSample::new(500.0, 60.0, 0.0, 3.0, 20.0, Some(FaultLabel::Pd))?,
        GasSample::new(200.0, 50.0, 100.0, 60.0, 10.0, Some(FaultLabel::D1))?,
        GasSample::new(100.0, 300.0, 5.0, 700.0, 80.0, Some(FaultLabel::T3))?,
    ];
    let features = fleet
        .iter()
        .map(compute_hybrid_ratios)
        .collect::<dga_adapt::Result<Vec<_>>>()?;
    for (name, v) in FEATURE_NAMES.iter().zip(features[0].values()) {
        println!("{name:>14} = {v:.4}");
    }

    // The scaler is fitted on the fleet and clamps anything outside its range.
    let scaler = FeatureScaler::fit(&features)?;
    let image = gaf_encode(&scaler.scale(&features[0]));
    for r in 0..NUM_FEATURES {
        let row: Vec<String> = (0..NUM_FEATURES).map(|c| format!("{:+.2}", image.get(r, c))).collect();
        println!("{}", row.join(" "));
    }
    assert!((image.get(2, 5) - image.get(5, 2)).abs() < 1e-15);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
