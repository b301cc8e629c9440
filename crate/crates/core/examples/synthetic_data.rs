// Writes a synthetic source/target pair in the dataset CSV format.
//
// Usage: `cargo run --example synthetic_data -- <out-dir>`

use std::path::Path;

use dga_adapt::io::{load_dataset, save_dataset};
use dga_adapt::synthetic::{generate, SyntheticConfig};

pub fn write_pair(dir: &Path, config: &SyntheticConfig) -> dga_adapt::Result<()> {
    let (source, target) = generate(config)?;
    save_dataset(dir.join("source.csv"), &source)?;
    save_dataset(dir.join("target.csv"), &target)?;
    assert_eq!(load_dataset(dir.join("source.csv"))?, source);
    println!(
        "wrote {} source and {} target samples to {}",
        source.len(),
        target.len(),
        dir.display()
    );
    Ok(())
}

pub fn run_example() -> dga_adapt::Result<()> {
    let dir = tempfile::tempdir()?;
    write_pair(dir.path(), &SyntheticConfig::default())
}

fn main() {
    let result = match std::env::args().nth(1) {
        Some(dir) => write_pair(Path::new(&dir), &SyntheticConfig::default()),
        None => run_example(),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
