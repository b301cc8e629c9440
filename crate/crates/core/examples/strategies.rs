// SourceOnly, FineTune, MC and MCW on a synthetic fleet pair.
//
// Pass an epoch count to train longer (default 5).

use dga_adapt::pipeline::{Experiment, ExperimentConfig, Strategy};
use dga_adapt::synthetic::{generate, SyntheticConfig};

pub fn run_with_epochs(epochs: usize) -> dga_adapt::Result<()> {
    let (source, target) = generate(&SyntheticConfig::default())?;
    let mut config = ExperimentConfig::default();
    config.train.epochs = epochs;
    config.train.finetune_epochs = epochs;
    let experiment = Experiment::new(config, &source, &target)?;

    let seed = 0;
    let outcomes = experiment.run_strategies(&Strategy::ALL, seed, None)?;
    for o in &outcomes {
        println!(
            "{:<12} macro acc {:6.2}%  macro F1 {:6.2}%",
            o.model.strategy.name(),
            o.metrics.macro_accuracy,
            o.metrics.macro_f1
        );
    }
    if let Some(ks) = outcomes.iter().find_map(|o| o.model.ks.as_ref()) {
        println!("MCW K-S vector: {:.3?}", ks.0);
    }
    let mcw = outcomes.last().expect("four strategies");
    print!("{}", mcw.metrics.to_text(&[("strategy", "mcw".into())]));
    Ok(())
}

pub fn run_example() -> dga_adapt::Result<()> {
    run_with_epochs(2)
}

fn main() {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    if let Err(e) = run_with_epochs(epochs) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
