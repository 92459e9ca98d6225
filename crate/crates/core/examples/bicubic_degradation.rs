//! Bicubic LR generation at both supported scales and the bicubic baseline.
//!
//! cargo run --release --example bicubic_degradation -- [out_dir]

use affectsr::data::{bicubic_resize, HR_SIZE};
use affectsr::synth::synth_face;
use affectsr::{psnr, ssim};

fn main() -> affectsr::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let face = synth_face(7, HR_SIZE)?;
    for scale in [4, 8] {
        let side = HR_SIZE / scale;
        let lr = bicubic_resize(&face.image, side, side)?;
        let up = bicubic_resize(&lr, HR_SIZE, HR_SIZE)?;
        println!(
            "x{scale}: LR {side}x{side}, bicubic back to {HR_SIZE}: PSNR {:.2} dB, SSIM {:.4}",
            psnr(&face.image, &up)?,
            ssim(&face.image, &up)?
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| affectsr::Error::io(dir, e))?;
            lr.save_png(&dir.join(format!("lr_x{scale}.png")))?;
            up.save_png(&dir.join(format!("bicubic_x{scale}.png")))?;
        }
    }
    if let Some(dir) = &out {
        face.image.save_png(&dir.join("hr.png"))?;
        println!("images written to {}", dir.display());
    }
    Ok(())
}
