//! Graph-convolution encoder turning landmark coordinates into node embeddings.

use candle_core::{Tensor, Var};

use crate::data::{LandmarkSet, NUM_LANDMARKS};
use crate::error::{Error, Result};
use crate::graph::FaceGraph;
use crate::params::ParamBuilder;

pub const GCN_LAYERS: usize = 4;

/// Per-node embeddings `(batch, nodes, dim)`.
#[derive(Debug, Clone)]
pub struct NodeEmbeddings(pub Tensor);

impl NodeEmbeddings {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        Ok(self.0.dims3()?)
    }
}

pub struct GcnLayer {
    /// `(in_dim, out_dim)`
    pub weight: Var,
    pub bias: Var,
}

impl GcnLayer {
    pub fn new(pb: &ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Ok(Self {
            weight: pb.uniform("weight", &[in_dim, out_dim], bound)?,
            bias: pb.constant("bias", &[out_dim], 0.0)?,
        })
    }
}

/// One propagation step `act(A_norm . X . W + b)` over `(batch, nodes, in)` features.
pub fn gcn_layer(
    features: &Tensor,
    adjacency: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    activate: bool,
) -> Result<Tensor> {
    let (_, nodes, in_dim) = features.dims3()?;
    let (an, am) = adjacency.dims2()?;
    let (w_in, _) = weight.dims2()?;
    if an != nodes || am != nodes || w_in != in_dim {
        return Err(Error::Shape(format!(
            "gcn layer: features {:?}, adjacency {:?}, weight {:?}",
            features.dims(),
            adjacency.dims(),
            weight.dims()
        )));
    }
    let projected = features.broadcast_matmul(weight)?;
    let mixed = adjacency.broadcast_matmul(&projected)?.broadcast_add(bias)?;
    if activate {
        Ok(mixed.relu()?)
    } else {
        Ok(mixed)
    }
}

/// Four stacked graph convolutions; ReLU between layers, linear output.
pub struct GcnEncoder {
    layers: Vec<GcnLayer>,
}

impl GcnEncoder {
    /// `dims` lists the widths from the 3-D coordinate input to the output.
    pub fn new(pb: &ParamBuilder, dims: &[usize]) -> Result<Self> {
        if dims.len() != GCN_LAYERS + 1 || dims[0] != 3 {
            return Err(Error::Config(format!(
                "gcn dims must list {} widths starting at 3, got {dims:?}",
                GCN_LAYERS + 1
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| GcnLayer::new(&pb.pp(format!("layer{i}")), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[GcnLayer] {
        &self.layers
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.dims()[1]).unwrap_or(0)
    }

    /// Runs the stack on raw node features `(batch, nodes, 3)`.
    pub fn forward(&self, features: &Tensor, adjacency: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut h = features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = gcn_layer(
                &h,
                adjacency,
                layer.weight.as_tensor(),
                layer.bias.as_tensor(),
                i != last,
            )?;
        }
        Ok(h)
    }

    /// Node embeddings for a batch of landmark sets; coordinates are the input features.
    pub fn encode(&self, landmarks: &[&LandmarkSet], graph: &FaceGraph) -> Result<NodeEmbeddings> {
        if graph.num_nodes() != NUM_LANDMARKS {
            return Err(Error::Shape(format!(
                "graph has {} nodes, landmarks have {NUM_LANDMARKS}",
                graph.num_nodes()
            )));
        }
        let dtype = self.layers[0].weight.dtype();
        let x = LandmarkSet::batch_tensor(landmarks, dtype)?;
        let adj = graph.adjacency_tensor(dtype)?;
        Ok(NodeEmbeddings(self.forward(&x, &adj)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn self_looped_single_node_identity() {
        let out = gcn_layer(
            &t(&[1.0, 2.0], &[1, 1, 2]),
            &t(&[1.0], &[1, 1]),
            &t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]),
            &t(&[0.0, 0.0], &[2]),
            true,
        )
        .unwrap();
        assert_eq!(out.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn two_connected_nodes_average() {
        let adj = crate::graph::normalize_adjacency(2, &[(0, 1)]);
        let out = gcn_layer(
            &t(&[1.0, 0.0, 0.0, 1.0], &[1, 2, 2]),
            &t(&adj, &[2, 2]),
            &t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]),
            &t(&[0.0, 0.0], &[2]),
            true,
        )
        .unwrap();
        for v in out.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_features_zero_output() {
        let out = gcn_layer(
            &Tensor::zeros((2, 3, 4), DType::F64, &Device::Cpu).unwrap(),
            &t(&crate::graph::normalize_adjacency(3, &[(0, 2)]), &[3, 3]),
            &t(&[0.3; 8], &[4, 2]),
            &t(&[0.0, 0.0], &[2]),
            true,
        )
        .unwrap();
        assert_eq!(out.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = gcn_layer(
            &Tensor::zeros((1, 3, 4), DType::F64, &Device::Cpu).unwrap(),
            &Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap(),
            &Tensor::zeros((4, 2), DType::F64, &Device::Cpu).unwrap(),
            &Tensor::zeros(2, DType::F64, &Device::Cpu).unwrap(),
            true,
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn layer_count_enforced() {
        let store = crate::params::ParamStore::new(DType::F32, 0);
        assert!(GcnEncoder::new(&store.root(), &[3, 8, 8]).is_err());
        assert!(GcnEncoder::new(&store.root(), &[2, 8, 8, 8, 8]).is_err());
        let enc = GcnEncoder::new(&store.root(), &[3, 32, 64, 64, 64]).unwrap();
        assert_eq!(enc.layers().len(), 4);
        assert_eq!(enc.out_dim(), 64);
    }
}
