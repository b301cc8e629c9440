// Driving the `dga-adapt` command line from code: write data, derive
// weights, train a short MCW run, then score its checkpoint.

use dga_adapt::cli;
use dga_adapt::io::{ks_from_csv, read_text, save_dataset, weights_from_csv};
use dga_adapt::synthetic::{generate, SyntheticConfig};

fn call(args: &[&str]) -> dga_adapt::Result<()> {
    let argv = std::iter::once("dga-adapt").chain(args.iter().copied());
    match cli::run(argv) {
        0 => Ok(()),
        code => Err(dga_adapt::Error::InvalidInput(format!(
            "`{}` exited with {code}",
            args.join(" ")
        ))),
    }
}

pub fn run_example() -> dga_adapt::Result<()> {
    let dir = tempfile::tempdir()?;
    let d = |name: &str| dir.path().join(name).display().to_string();
    let (source, target) = generate(&SyntheticConfig::default())?;
    save_dataset(d("source.csv"), &source)?;
    save_dataset(d("target.csv"), &target)?;

    call(&[
        "weights",
        "--source",
        &d("source.csv"),
        "--target",
        &d("target.csv"),
        "--out",
        &d("w"),
    ])?;
    let ks = ks_from_csv(&read_text(dir.path().join("w/ks.csv"))?)?;
    let w = weights_from_csv(&read_text(dir.path().join("w/weights.csv"))?, 1e-3)?;
    println!("K-S: {:.3?}", ks.0);
    println!(
        "weight range: [{}, {}]",
        w.flat().iter().copied().fold(f64::MAX, f64::min),
        w.flat().iter().copied().fold(0.0, f64::max)
    );

    std::fs::write(d("run.cfg"), "# short demo run\nepochs=1\nfinetune_epochs=1\n")?;
    call(&[
        "train",
        "--config",
        &d("run.cfg"),
        "--source",
        &d("source.csv"),
        "--target",
        &d("target.csv"),
        "--strategy",
        "mcw",
        "--seed",
        "7",
        "--out",
        &d("run"),
    ])?;
    print!("{}", read_text(dir.path().join("run/metrics.txt"))?);
    call(&[
        "evaluate",
        "--checkpoint",
        &d("run/checkpoint.txt"),
        "--data",
        &d("target.csv"),
        "--out",
        &d("eval.txt"),
    ])?;
    call(&[
        "diagnose",
        "--source",
        &d("source.csv"),
        "--target",
        &d("source.csv"),
        "--out",
        &d("diag"),
    ])?;
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
