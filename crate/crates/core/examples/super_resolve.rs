//! Run the network at both scales, or super-resolve with a trained checkpoint.
//!
//! cargo run --release --example super_resolve -- [checkpoint out.png]

use affectsr::checkpoint::Archive;
use affectsr::data::{bicubic_resize, HR_SIZE};
use affectsr::synth::synth_face;
use affectsr::training::load_model;
use affectsr::{psnr, AffectSrNet, ModelConfig, Variant};
use candle_core::DType;

fn main() -> affectsr::Result<()> {
    let face = synth_face(11, HR_SIZE)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [ckpt, out] = args.as_slice() {
        let model = load_model(&Archive::load(ckpt.as_ref())?)?;
        let side = model.config().lr_size();
        let lr = bicubic_resize(&face.image, side, side)?;
        let lmk = face.landmarks.quantized(side, side);
        let sr = model.super_resolve(&lr, Some(&[&lmk]))?;
        sr.save_png(out.as_ref())?;
        println!("PSNR {:.2} dB, written to {out}", psnr(&face.image, &sr)?);
        return Ok(());
    }
    for scale in [4, 8] {
        for variant in Variant::ALL {
            let model = AffectSrNet::new(ModelConfig::standard(scale, variant), DType::F32)?;
            let side = HR_SIZE / scale;
            let lr = bicubic_resize(&face.image, side, side)?;
            let lmk = face.landmarks.quantized(side, side);
            let start = std::time::Instant::now();
            let sr = model.super_resolve(&lr, Some(&[&lmk]))?;
            println!(
                "x{scale} {variant:<8} {side}x{side} -> {}x{} ({} params, {:.0} ms, untrained PSNR {:.2} dB)",
                sr.height(),
                sr.width(),
                model.num_params(),
                start.elapsed().as_secs_f64() * 1e3,
                psnr(&face.image, &sr)?
            );
        }
    }
    Ok(())
}
