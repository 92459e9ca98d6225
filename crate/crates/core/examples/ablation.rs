//! Train every variant on the same synthetic split and print the comparison table.
//!
//! cargo run --release --example ablation -- [steps] [faces]

use affectsr::eval::{run_ablation, AblationSetup};
use affectsr::fer::toy_classifier;
use affectsr::synth::synth_pairs;
use affectsr::{ModelConfig, TrainConfig, Variant};

fn main() -> affectsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let faces: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(32);
    let samples = synth_pairs(faces, 0, 8)?;
    let (eval, train) = samples.split_at(faces / 4);
    let setup = AblationSetup {
        dataset: "synthetic".into(),
        model: ModelConfig::tiny(8, Variant::Full),
        train: TrainConfig {
            max_steps: steps,
            ..TrainConfig::default()
        },
        train_samples: train,
        eval_samples: eval,
    };
    let table = run_ablation(&Variant::ALL, &setup, || Ok(Box::new(toy_classifier(0))))?;
    print!("{}", table.render());
    Ok(())
}
