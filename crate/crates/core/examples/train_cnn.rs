// Training the CNN directly: memorize 20 labeled GAF images with momentum SGD.

use dga_adapt::model::{
    init_params, loss_and_gradients, predict, sgd_step, CnnConfig, DomainLossConfig, MomentumState, TrainingBatch,
};
use dga_adapt::preprocess::{compute_hybrid_ratios, gaf_encode, FeatureScaler};
use dga_adapt::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> dga_adapt::Result<()> {
    let (source, _) = generate(&SyntheticConfig::default())?;
    // Four samples from each class.
    let picked: Vec<_> = (0..5)
        .flat_map(|c| source.iter().filter(move |s| s.label.unwrap().index() == c).take(4))
        .collect();
    let features = picked
        .iter()
        .map(|s| compute_hybrid_ratios(s))
        .collect::<dga_adapt::Result<Vec<_>>>()?;
    let scaler = FeatureScaler::fit(&features)?;
    let images: Vec<_> = features.iter().map(|f| gaf_encode(&scaler.scale(f))).collect();
    let labels: Vec<_> = picked.iter().map(|s| s.label.unwrap()).collect();

    let config = CnnConfig::default();
    println!("parameters: {}", config.param_count()?);
    let mut params = init_params(&config, 1)?;
    let mut state = MomentumState::new(&params);
    let batch = TrainingBatch {
        source: &images,
        source_labels: &labels,
        target: &[],
        target_labels: None,
    };
    let domain = DomainLossConfig::default();
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let (loss, grads) = loss_and_gradients(&params, &batch, &domain, Some(step))?;
        sgd_step(&mut params, &grads, 0.05, &mut state, 0.9)?;
        if step % 10 == 0 {
            println!("step {step:>2}  cross-entropy {:.4}", loss.classification);
        }
        last = loss.classification;
    }
    let correct = predict(&params, &images)?
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    println!("final loss {last:.4}, train accuracy {correct}/20");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
