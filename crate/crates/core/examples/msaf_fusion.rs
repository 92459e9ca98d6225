//! Split-attention fusion of a backbone feature map with a rasterized graph map.

use affectsr::msaf::{Msaf, MsafConfig};
use affectsr::nn::Mode;
use affectsr::params::ParamStore;
use candle_core::{DType, Device, Tensor};

fn main() -> affectsr::Result<()> {
    let store = ParamStore::new(DType::F32, 1);
    let cfg = MsafConfig {
        block_channels: 16,
        reduction: 4,
    };
    let msaf = Msaf::new(&store.root().pp("fusion"), cfg, &[64, 64])?;
    let dev = Device::Cpu;
    let backbone = Tensor::randn(0f32, 1.0, (2, 64, 16, 16), &dev)?;
    let graph_map = Tensor::randn(0f32, 1.0, (2, 64, 16, 16), &dev)?;
    let out = msaf.forward_detailed(&[&backbone, &graph_map], Mode::Eval)?;
    println!("fused {:?}, joint {:?}", out.fused.dims(), out.joint.dims());
    for (m, a) in out.attention.iter().enumerate() {
        let sums = a.sum(1)?.flatten_all()?.to_vec1::<f32>()?;
        let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0f32, f32::max);
        println!(
            "modality {m}: attention {:?}, range [{:.3}, {:.3}], max |sum - 1| {worst:.2e}",
            a.dims(),
            a.min_all()?.to_scalar::<f32>()?,
            a.max_all()?.to_scalar::<f32>()?
        );
    }

    // A single-block modality has nothing to compete with and passes through.
    let narrow = Msaf::new(&store.root().pp("narrow"), cfg, &[16, 64])?;
    let x = Tensor::randn(0f32, 1.0, (1, 16, 8, 8), &dev)?;
    let g = Tensor::randn(0f32, 1.0, (1, 64, 8, 8), &dev)?;
    let y = narrow.fuse(&x, &g, Mode::Eval)?;
    let diff = (y - &x)?.abs()?.max_all()?.to_scalar::<f32>()?;
    println!("single-block passthrough max difference: {diff}");
    Ok(())
}
