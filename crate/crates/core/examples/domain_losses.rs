// MMD, CORAL and their feature-weighted forms on two small batches.

use dga_adapt::losses::{
    combined_loss, coral_loss, mmd_squared, weight_features, FeatureBatch, KernelConfig, LossWeights,
};
use dga_adapt::preprocess::{IMAGE_PIXELS, NUM_FEATURES};
use dga_adapt::stats::WeightMatrix;

pub fn run_example() -> dga_adapt::Result<()> {
    let xs = FeatureBatch::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]])?;
    let xt = FeatureBatch::from_rows(&[vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]])?;

    let kernel = KernelConfig::MedianHeuristic;
    let mmd = mmd_squared(&xs, &xt, &kernel)?;
    let coral = coral_loss(&xs, &xt)?;
    println!("MMD^2 = {mmd:.6}, CORAL = {coral:.6}");
    assert!((coral - 4.0).abs() < 1e-12);

    // On GAF images, the 9x9 weight matrix scales each pixel coordinate.
    // Zeroing out (up to epsilon) the pixels that differ shrinks both terms.
    let mut a = vec![vec![0.0; IMAGE_PIXELS]; 6];
    let mut b = a.clone();
    for (i, (ra, rb)) in a.iter_mut().zip(b.iter_mut()).enumerate() {
        for p in 0..IMAGE_PIXELS {
            let base = ((i * 7 + p * 3) % 11) as f64 / 11.0 - 0.5;
            ra[p] = base;
            rb[p] = if p < NUM_FEATURES { base + 0.8 } else { base };
        }
    }
    let (ia, ib) = (FeatureBatch::from_rows(&a)?, FeatureBatch::from_rows(&b)?);
    let mut w = [1.0; IMAGE_PIXELS];
    w[..NUM_FEATURES].iter_mut().for_each(|v| *v = 1e-3);
    let w = WeightMatrix::from_values(w, 1e-3)?;
    let (wa, wb) = (weight_features(&ia, &w)?, weight_features(&ib, &w)?);
    let sigma = KernelConfig::fixed(4.0)?;
    let (plain_mmd, plain_coral) = (mmd_squared(&ia, &ib, &sigma)?, coral_loss(&ia, &ib)?);
    let (wmmd, wcoral) = (mmd_squared(&wa, &wb, &sigma)?, coral_loss(&wa, &wb)?);
    println!("images: MMD^2 {plain_mmd:.4} -> {wmmd:.4}, CORAL {plain_coral:.4} -> {wcoral:.4}");
    assert!(wmmd < plain_mmd && wcoral <= plain_coral);

    let total = combined_loss(0.9, mmd, coral, &LossWeights::default())?;
    println!("combined (cls = 0.9, alpha = 0.5, beta = 0.7) = {total:.6}");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
