//! The four training losses and their weighted total for a bicubic "SR" output.

use affectsr::data::{bicubic_resize, LandmarkSet, HR_SIZE};
use affectsr::losses::{
    embedding_l2, pixel_l1, style_loss, total_loss, train_hist_loss, LossComponents, LossWeights, RandomConvExtractor,
};
use affectsr::synth::synth_face;
use affectsr::{AffectSrNet, ModelConfig, Variant};
use candle_core::DType;

fn main() -> affectsr::Result<()> {
    let face = synth_face(2, HR_SIZE)?;
    let lr = bicubic_resize(&face.image, 16, 16)?;
    let sr = bicubic_resize(&lr, HR_SIZE, HR_SIZE)?;
    let (sr, hr) = (sr.tensor(), face.image.tensor());

    let model = AffectSrNet::new(ModelConfig::tiny(8, Variant::Full), DType::F32)?;
    let coarse: LandmarkSet = face.landmarks.quantized(16, 16);
    let emb_lr = model.encode(&[&coarse])?.expect("full variant has a graph encoder");
    let emb_hr = model
        .encode(&[&face.landmarks])?
        .expect("full variant has a graph encoder");

    let components = LossComponents {
        pix: pixel_l1(sr, hr)?,
        hist: train_hist_loss(sr, hr)?,
        style: style_loss(sr, hr, &RandomConvExtractor::new(0)?)?,
        emb: embedding_l2(emb_lr.tensor(), emb_hr.tensor())?,
    };
    let weights = LossWeights::default();
    let record = components.record(&weights)?;
    println!("pixel L1      {:.6}", record.pix);
    println!("histogram     {:.6}", record.hist);
    println!("style (Gram)  {:.6}", record.style);
    println!("embedding L2  {:.6}", record.emb);
    println!(
        "total with k = ({}, {}, {}, {}): {:.6}",
        weights.k1,
        weights.k2,
        weights.k3,
        weights.k4,
        total_loss(&components, &weights)?.to_scalar::<f32>()?
    );
    Ok(())
}
