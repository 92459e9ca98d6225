//! Encode landmark sets with the graph encoder and compare expressions.

use affectsr::gcn::GcnEncoder;
use affectsr::graph::canonical_edges;
use affectsr::params::ParamStore;
use affectsr::synth::synth_face;
use candle_core::DType;

fn main() -> affectsr::Result<()> {
    let store = ParamStore::new(DType::F64, 0);
    let encoder = GcnEncoder::new(&store.root().pp("gcn"), &[3, 32, 64, 64, 64])?;
    let graph = canonical_edges();
    let faces: Vec<_> = (0..4).map(|s| synth_face(s, 128)).collect::<Result<_, _>>()?;
    let sets: Vec<_> = faces.iter().map(|f| &f.landmarks).collect();
    let emb = encoder.encode(&sets, &graph)?;
    println!("embeddings {:?}", emb.dims()?);
    for (i, f) in faces.iter().enumerate() {
        let e = f.expression;
        println!("face {i}: open {:.2} smile {:.2} brow {:.2}", e.open, e.smile, e.brow);
    }
    let t = emb.tensor();
    println!("pairwise embedding distances (sum over nodes of squared L2):");
    for i in 0..faces.len() {
        let row: Vec<String> = (0..faces.len())
            .map(|j| {
                let d = (t.get(i)? - t.get(j)?)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
                Ok(format!("{d:>9.3}"))
            })
            .collect::<affectsr::Result<_>>()?;
        println!("  {}", row.join(" "));
    }
    Ok(())
}
