mod common;

use affectsr::gcn::gcn_layer;
use affectsr::graph::{normalize_adjacency, FaceGraph};
use candle_core::{Device, Tensor};
use common::{dense_gcn_layer, dense_normalized_adjacency, rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_graph(r: &mut ChaCha8Rng) -> (usize, Vec<(usize, usize)>) {
    let n = r.random_range(1..=10);
    let p: f64 = r.random();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random::<f64>() < p {
                edges.push(if r.random() { (i, j) } else { (j, i) });
            }
        }
    }
    edges.shuffle(r);
    (n, edges)
}

fn matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

fn tensor(m: &[Vec<f64>]) -> Tensor {
    let (rows, cols) = (m.len(), m[0].len());
    Tensor::from_vec(m.concat(), (rows, cols), &Device::Cpu).unwrap()
}

#[test]
fn normalized_adjacency_matches_dense() {
    let mut r = rng(100);
    for _ in 0..200 {
        let (n, edges) = random_graph(&mut r);
        let got = normalize_adjacency(n, &edges);
        let want = dense_normalized_adjacency(n, &edges);
        for i in 0..n {
            for j in 0..n {
                assert!((got[i * n + j] - want[i][j]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn gcn_layer_matches_dense() {
    let mut r = rng(101);
    for trial in 0..200 {
        let (n, edges) = random_graph(&mut r);
        let (d_in, d_out) = (r.random_range(1..6), r.random_range(1..6));
        let graph = FaceGraph::new(n, edges.clone()).unwrap();
        let a = dense_normalized_adjacency(n, &edges);
        let x = matrix(&mut r, n, d_in);
        let w = matrix(&mut r, d_in, d_out);
        let b: Vec<f64> = (0..d_out).map(|_| r.random_range(-1.0..1.0)).collect();
        let relu = trial % 2 == 0;
        let got = gcn_layer(
            &tensor(&x).unsqueeze(0).unwrap(),
            &graph.adjacency_tensor(candle_core::DType::F64).unwrap(),
            &tensor(&w),
            &Tensor::new(b.as_slice(), &Device::Cpu).unwrap(),
            relu,
        )
        .unwrap()
        .squeeze(0)
        .unwrap()
        .to_vec2::<f64>()
        .unwrap();
        let want = dense_gcn_layer(&a, &x, &w, &b, relu);
        for (gr, wr) in got.iter().zip(&want) {
            for (g, w) in gr.iter().zip(wr) {
                assert!((g - w).abs() <= 1e-6, "trial {trial}: {g} vs {w}");
            }
        }
    }
}

/// Relabelling nodes permutes the rows of the output and nothing else.
#[test]
fn gcn_layer_is_permutation_equivariant() {
    let mut r = rng(102);
    for _ in 0..50 {
        let (n, edges) = random_graph(&mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let graph = FaceGraph::new(n, edges).unwrap();
        let permuted = graph.permuted(&perm).unwrap();
        let x = matrix(&mut r, n, 3);
        let mut px = vec![vec![]; n];
        for (i, row) in x.iter().enumerate() {
            px[perm[i]] = row.clone();
        }
        let w = tensor(&matrix(&mut r, 3, 4));
        let b = Tensor::zeros(4, candle_core::DType::F64, &Device::Cpu).unwrap();
        let run = |g: &FaceGraph, x: &[Vec<f64>]| {
            gcn_layer(
                &tensor(x).unsqueeze(0).unwrap(),
                &g.adjacency_tensor(candle_core::DType::F64).unwrap(),
                &w,
                &b,
                true,
            )
            .unwrap()
            .squeeze(0)
            .unwrap()
            .to_vec2::<f64>()
            .unwrap()
        };
        let y = run(&graph, &x);
        let py = run(&permuted, &px);
        for i in 0..n {
            for (a, b) in y[i].iter().zip(&py[perm[i]]) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn malformed_edge_lists_are_rejected() {
    assert!(FaceGraph::new(3, vec![(0, 3)]).is_err());
    assert!(FaceGraph::new(3, vec![(1, 1)]).is_err());
    assert!(FaceGraph::new(3, vec![(0, 1), (1, 0)]).is_err());
}
