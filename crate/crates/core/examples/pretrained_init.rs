//! Export backbone weights to an archive and initialize a fresh model from it.

use affectsr::training::{export_backbone, init_params};
use affectsr::{AffectSrNet, ModelConfig, Variant};
use candle_core::DType;

fn main() -> affectsr::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| affectsr::Error::io("tmp", e))?;
    let path = dir.path().join("backbone.ckpt");

    let donor = AffectSrNet::new(ModelConfig::tiny(4, Variant::Rrdb).with_seed(42), DType::F32)?;
    let archive = export_backbone(&donor)?;
    archive.save(&path)?;
    println!("exported {} backbone tensors", archive.tensors.len());

    let cfg = ModelConfig::tiny(4, Variant::Full);
    let model = init_params(&cfg, Some(&path), DType::F32)?;
    let stem = |m: &AffectSrNet| -> affectsr::Result<Vec<f32>> {
        let v = m.params().get("backbone.stem.weight").expect("stem exists");
        Ok(v.as_tensor().flatten_all()?.to_vec1()?)
    };
    println!("stem weights copied: {}", stem(&model)? == stem(&donor)?);

    let mut partial = archive.clone();
    partial.tensors.remove("backbone.out_conv.bias");
    partial.save(&path)?;
    match init_params(&cfg, Some(&path), DType::F32) {
        Err(e) => println!("incomplete archive rejected: {e}"),
        Ok(_) => println!("incomplete archive unexpectedly accepted"),
    }
    Ok(())
}
