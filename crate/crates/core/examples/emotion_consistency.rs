//! Emotion consistency of bicubic and noise outputs under the toy classifier.

use affectsr::data::{bicubic_resize, HR_SIZE};
use affectsr::fer::ToyClassifier;
use affectsr::synth::{noise_image, synth_face};
use affectsr::{ecm, ImageTensor};

fn main() -> affectsr::Result<()> {
    let originals: Vec<ImageTensor> = (0..20)
        .map(|s| Ok(synth_face(s, HR_SIZE)?.image))
        .collect::<affectsr::Result<_>>()?;
    let upscaled = |side: usize| -> affectsr::Result<Vec<ImageTensor>> {
        originals
            .iter()
            .map(|img| bicubic_resize(&bicubic_resize(img, side, side)?, HR_SIZE, HR_SIZE))
            .collect()
    };
    let noise: Vec<ImageTensor> = (0..20)
        .map(|s| noise_image(1000 + s, HR_SIZE))
        .collect::<affectsr::Result<_>>()?;

    let mut fer = ToyClassifier::new(0);
    for (label, sr) in [
        ("identical", originals.clone()),
        ("bicubic x4", upscaled(32)?),
        ("bicubic x8", upscaled(16)?),
        ("noise", noise),
    ] {
        let r = ecm(&originals, &sr, &mut fer)?;
        println!(
            "{label:<11} L_H {:.5}  L_conf {:.5}  ECM {:>9.4}",
            r.l_h, r.l_conf, r.ecm
        );
    }
    Ok(())
}
