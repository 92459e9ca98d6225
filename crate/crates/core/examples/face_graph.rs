//! The canonical 478-node face graph and landmark rasterization.

use affectsr::data::LandmarkSet;
use affectsr::graph::{canonical_edges, scatter_embeddings};
use affectsr::synth::synth_face;
use affectsr::NUM_LANDMARKS;
use candle_core::{DType, Tensor};

fn main() -> affectsr::Result<()> {
    let graph = canonical_edges();
    let mut degree = vec![0usize; NUM_LANDMARKS];
    for &(a, b) in graph.edges() {
        degree[a] += 1;
        degree[b] += 1;
    }
    let isolated = degree.iter().filter(|&&d| d == 0).count();
    println!(
        "{} nodes, {} edges, max degree {}, {} isolated nodes",
        graph.num_nodes(),
        graph.edges().len(),
        degree.iter().max().unwrap_or(&0),
        isolated
    );
    let a = graph.adjacency_norm();
    println!(
        "normalized self-weight of an isolated node: {:.3}",
        a[(NUM_LANDMARKS - 1) * NUM_LANDMARKS + NUM_LANDMARKS - 1]
    );

    // Rasterize a one-hot "node id is even" feature onto a 16x16 grid.
    let face = synth_face(3, 128)?;
    let lmk: LandmarkSet = face.landmarks.quantized(16, 16);
    let feats: Vec<f64> = (0..NUM_LANDMARKS).map(|i| (i % 2) as f64).collect();
    let emb = Tensor::from_vec(feats, (1, NUM_LANDMARKS, 1), &candle_core::Device::Cpu)?;
    let map = scatter_embeddings(&emb, &[&lmk], 16, 16)?.to_dtype(DType::F64)?;
    let grid = map.squeeze(0)?.squeeze(0)?.to_vec2::<f64>()?;
    println!("odd-node counts per cell on the 16x16 grid:");
    for row in grid {
        println!(
            "  {}",
            row.iter().map(|v| format!("{:>2}", *v as u32)).collect::<String>()
        );
    }
    Ok(())
}
