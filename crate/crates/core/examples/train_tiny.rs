//! Overfit the tiny full model on four synthetic faces, checkpoint it, and
//! resume from the checkpoint.
//!
//! cargo run --release --example train_tiny -- [steps]

use affectsr::checkpoint::Archive;
use affectsr::synth::synth_pairs;
use affectsr::{ModelConfig, TrainConfig, Trainer, Variant};
use candle_core::DType;

fn main() -> affectsr::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let samples = synth_pairs(4, 0, 8)?;
    let model = affectsr::init_params(&ModelConfig::tiny(8, Variant::Full), None, DType::F32)?;
    println!("parameters: {}", model.num_params());
    let cfg = TrainConfig {
        max_steps: steps,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg)?;
    let start = std::time::Instant::now();
    let records = trainer.fit(&samples, |_, rec| {
        if rec.step % 50 == 0 {
            println!(
                "step {:>4}  lr {:.2e}  total {:.5}  pix {:.5}  hist {:.6}  style {:.6}  emb {:.5}",
                rec.step, rec.lr, rec.loss.total, rec.loss.pix, rec.loss.hist, rec.loss.style, rec.loss.emb
            );
        }
        Ok(())
    })?;
    let first = records.first().map_or(f64::NAN, |r| r.loss.total);
    let last = records.last().map_or(f64::NAN, |r| r.loss.total);
    println!(
        "{} steps in {:.1}s, loss {first:.5} -> {last:.5} ({:.1}% of start)",
        records.len(),
        start.elapsed().as_secs_f64(),
        100.0 * last / first
    );

    let dir = tempfile::tempdir().map_err(|e| affectsr::Error::io("tmp", e))?;
    let path = dir.path().join("tiny.ckpt");
    trainer.checkpoint()?.save(&path)?;
    let resumed = Trainer::from_checkpoint(&Archive::load(&path)?)?;
    println!("checkpoint {} resumed at step {}", path.display(), resumed.step());
    Ok(())
}
