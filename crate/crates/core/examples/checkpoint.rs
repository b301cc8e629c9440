// Saving a trained model and scoring new data from the checkpoint alone.

use dga_adapt::io::Checkpoint;
use dga_adapt::model::predict;
use dga_adapt::pipeline::{evaluate, Experiment, ExperimentConfig, Strategy};
use dga_adapt::preprocess::{compute_hybrid_ratios, gaf_encode};
use dga_adapt::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> dga_adapt::Result<()> {
    let (source, target) = generate(&SyntheticConfig::default())?;
    let mut config = ExperimentConfig::default();
    config.train.epochs = 2;
    let experiment = Experiment::new(config, &source, &target)?;
    let seed = 3;
    let params = experiment.train_source_only(seed)?;

    let checkpoint = Checkpoint {
        params,
        scaler: *experiment.scaler(),
        strategy: Strategy::SourceOnly,
        seed,
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.txt");
    checkpoint.save(&path)?;
    let restored = Checkpoint::load(&path)?;
    assert_eq!(restored, checkpoint);

    let images = target
        .iter()
        .map(|s| Ok(gaf_encode(&restored.scaler.scale(&compute_hybrid_ratios(s)?))))
        .collect::<dga_adapt::Result<Vec<_>>>()?;
    let labels: Vec<_> = target.iter().map(|s| s.label.unwrap()).collect();
    assert_eq!(
        predict(&restored.params, &images)?,
        predict(&checkpoint.params, &images)?
    );
    let metrics = evaluate(&restored.params, &images, &labels)?;
    println!(
        "checkpoint with {} parameters: target macro accuracy {:.2}%",
        restored.params.len(),
        metrics.macro_accuracy
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
