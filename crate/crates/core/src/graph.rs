//! Facial landmark graph: fixed edge topology, normalized adjacency, and
//! rasterization of node embeddings onto the backbone's feature grid.

use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor};

use crate::data::{LandmarkSet, NUM_LANDMARKS};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::params::ParamBuilder;

/// Shipped edge list over the 478-point mesh (contours of eyes, eyebrows,
/// lips, face oval, irises, plus a few cheek links).
pub const CANONICAL_EDGES_V1: &str = include_str!("../data/face_edges_v1.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct FaceGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency_norm: Vec<f64>,
}

impl FaceGraph {
    /// Validates the edge list and computes the normalized adjacency.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(i, j) in &edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::DataIntegrity(format!(
                    "edge ({i}, {j}) out of range for {num_nodes} nodes"
                )));
            }
            if i == j {
                return Err(Error::DataIntegrity(format!("self edge ({i}, {i})")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::DataIntegrity(format!("duplicate edge ({i}, {j})")));
            }
        }
        let adjacency_norm = normalize_adjacency(num_nodes, &edges);
        Ok(Self {
            num_nodes,
            edges,
            adjacency_norm,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Dense row-major `num_nodes x num_nodes` matrix `D^-1/2 (A + I) D^-1/2`.
    pub fn adjacency_norm(&self) -> &[f64] {
        &self.adjacency_norm
    }

    pub fn adjacency_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_vec(
            self.adjacency_norm.clone(),
            (self.num_nodes, self.num_nodes),
            &Device::Cpu,
        )?
        .to_dtype(dtype)?)
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::Shape("permutation length must equal node count".into()));
        }
        let edges = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Self::new(self.num_nodes, edges)
    }
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(num_nodes: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut degree = vec![1.0f64; num_nodes];
    for &(i, j) in edges {
        degree[i] += 1.0;
        degree[j] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut adj = vec![0.0; num_nodes * num_nodes];
    for i in 0..num_nodes {
        adj[i * num_nodes + i] = inv_sqrt[i] * inv_sqrt[i];
    }
    for &(i, j) in edges {
        let v = inv_sqrt[i] * inv_sqrt[j];
        adj[i * num_nodes + j] = v;
        adj[j * num_nodes + i] = v;
    }
    adj
}

/// Parse the edge-list text format: one `i j` pair per line, `#` comments.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = || -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::DataIntegrity(format!("edge list line {}: `{line}`", lineno + 1)))
        };
        let (i, j) = (next()?, next()?);
        edges.push((i, j));
    }
    Ok(edges)
}

/// The shipped 478-node face graph.
pub fn canonical_edges() -> FaceGraph {
    let edges = parse_edge_list(CANONICAL_EDGES_V1).expect("shipped edge list parses");
    FaceGraph::new(NUM_LANDMARKS, edges).expect("shipped edge list is valid")
}

/// Grid cell `(row, col)` a normalized landmark falls into.
pub fn landmark_cell(x: f64, y: f64, height: usize, width: usize) -> (usize, usize) {
    let row = ((y * height as f64).floor().max(0.0) as usize).min(height - 1);
    let col = ((x * width as f64).floor().max(0.0) as usize).min(width - 1);
    (row, col)
}

/// `(batch, height*width, nodes)` one-hot scatter operator.
pub fn scatter_operator(landmarks: &[&LandmarkSet], height: usize, width: usize, dtype: DType) -> Result<Tensor> {
    let n = NUM_LANDMARKS;
    let hw = height * width;
    let mut data = vec![0.0f64; landmarks.len() * hw * n];
    for (b, set) in landmarks.iter().enumerate() {
        for (v, p) in set.coords().iter().enumerate() {
            let (r, c) = landmark_cell(p[0], p[1], height, width);
            data[b * hw * n + (r * width + c) * n + v] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (landmarks.len(), hw, n), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Scatter-add node embeddings `(batch, nodes, dim)` into a `(batch, dim, h, w)` map.
pub fn scatter_embeddings(emb: &Tensor, landmarks: &[&LandmarkSet], height: usize, width: usize) -> Result<Tensor> {
    let (b, nodes, dim) = emb.dims3()?;
    if nodes != NUM_LANDMARKS || b != landmarks.len() {
        return Err(Error::Shape(format!(
            "embeddings {:?} do not match {} landmark sets of {NUM_LANDMARKS} nodes",
            emb.dims(),
            landmarks.len()
        )));
    }
    let op = scatter_operator(landmarks, height, width, emb.dtype())?;
    // (b, dim, nodes) x (b, nodes, hw)
    let map = emb
        .transpose(1, 2)?
        .contiguous()?
        .matmul(&op.transpose(1, 2)?.contiguous()?)?;
    Ok(map.reshape((b, dim, height, width))?)
}

/// Scatter-add followed by a learned 3x3 smoothing convolution.
pub struct Rasterizer {
    smooth: Conv2d,
}

impl Rasterizer {
    pub fn new(pb: &ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            smooth: Conv2d::new(&pb.pp("smooth"), dim, dim, 3, 1.0)?,
        })
    }

    pub fn forward(&self, emb: &Tensor, landmarks: &[&LandmarkSet], height: usize, width: usize) -> Result<Tensor> {
        let scattered = scatter_embeddings(emb, landmarks, height, width)?;
        self.smooth.forward(&scattered)
    }
}
