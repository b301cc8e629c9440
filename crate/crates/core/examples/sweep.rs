// Target-fraction and alpha/beta sweeps, reported as CSV.

use dga_adapt::pipeline::{run_sweep, Experiment, ExperimentConfig, Strategy, SweepAxis};
use dga_adapt::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> dga_adapt::Result<()> {
    let (source, target) = generate(&SyntheticConfig::default())?;
    let mut config = ExperimentConfig::default();
    config.train.epochs = 1;
    config.train.finetune_epochs = 1;
    config.seeds = vec![0, 1];
    let experiment = Experiment::new(config, &source, &target)?;

    let fractions = SweepAxis::TargetFraction(vec![0.3, 0.7]);
    let report = run_sweep(&experiment, &fractions, &[Strategy::FineTune, Strategy::Mcw])?;
    print!("{}", report.to_csv());

    let grid = SweepAxis::AlphaBeta(vec![(0.5, 0.7), (0.9, 0.3)]);
    let report = run_sweep(&experiment, &grid, &[Strategy::Mcw])?;
    print!("{}", report.to_csv());
    assert_eq!(report.rows.len(), 2);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
