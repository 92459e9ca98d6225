//! Write a synthetic face dataset and a matching run config for the CLI.
//!
//! cargo run --release --example synth_dataset -- <dir> [count] [seed]
//! cargo run --release -- train --config <dir>/run.toml

use std::path::PathBuf;

use affectsr::synth::write_dataset;

fn main() -> affectsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "toy-run".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let layout = write_dataset(&dir.join("faces"), count, seed, 160)?;
    let config = format!(
        "[data]\nroot = \"faces\"\nscale = 8\neval_count = {}\n\n\
         [model]\nvariant = \"full\"\npreset = \"tiny\"\n\n\
         [train]\nmax_steps = 50\nbatch_size = 4\nseed = {seed}\n\n\
         [metrics]\nfer = \"toy:0\"\n\n\
         [output]\ndir = \"run\"\n",
        (count / 4).max(1)
    );
    let cfg_path = dir.join("run.toml");
    std::fs::write(&cfg_path, config).map_err(|e| affectsr::Error::io(&cfg_path, e))?;
    println!("{count} faces under {}", layout.image_dir.display());
    println!("config {}", cfg_path.display());
    Ok(())
}
