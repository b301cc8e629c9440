// Per-feature K-S statistics between two fleets and the resulting weight
// matrix.

use dga_adapt::preprocess::{compute_hybrid_ratios, FEATURE_NAMES, NUM_FEATURES};
use dga_adapt::stats::{akld, build_weight_matrix, ks_feature_vector, DEFAULT_BINS, DEFAULT_EPSILON};
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

    let ks = ks_feature_vector(&fs, &ft)?;
    for (name, d) in FEATURE_NAMES.iter().zip(ks.0) {
        println!("{name:>14}  ks={d:.4}");
    }
    println!("AKLD = {:.4}", akld(&fs, &ft, DEFAULT_BINS)?);

    let w = build_weight_matrix(&ks, DEFAULT_EPSILON)?;
    let (lo, hi) = w
        .flat()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("weights in [{lo}, {hi}]");
    for r in 0..NUM_FEATURES {
        let row: Vec<String> = (0..NUM_FEATURES).map(|c| format!("{:.3}", w.get(r, c))).collect();
        println!("{}", row.join(" "));
    }
    assert!((lo - DEFAULT_EPSILON).abs() < 1e-12 && (hi - 1.0 - DEFAULT_EPSILON).abs() < 1e-12);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
