//! Independent reference implementations and checking utilities shared by the
//! integration tests. Nothing here calls the library's numeric code paths.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap()
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)` between the backprop
/// gradient of `f` and central finite differences on up to `max_coords`
/// coordinates of `var` (f64 only).
pub fn grad_check(var: &Var, f: &dyn Fn() -> Tensor, max_coords: usize, h: f64, seed: u64) -> f64 {
    grad_check_many(std::slice::from_ref(var), f, max_coords, h, seed)
}

/// Same as [`grad_check`], pooled over several variables: up to
/// `coords_per_var` coordinates from each, one norm over all of them.
pub fn grad_check_many(vars: &[Var], f: &dyn Fn() -> Tensor, coords_per_var: usize, h: f64, seed: u64) -> f64 {
    let grads = f().backward().unwrap();
    let mut r = rng(seed);
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for var in vars {
        assert_eq!(var.dtype(), DType::F64, "gradient checks run in f64");
        let analytic = match grads.get(var) {
            Some(g) => values(g),
            None => vec![0.0; var.elem_count()],
        };
        let shape = var.shape().clone();
        let base = values(var.as_tensor());
        let n = base.len();
        let coords: Vec<usize> = if n <= coords_per_var {
            (0..n).collect()
        } else {
            let mut picked: Vec<usize> = (0..coords_per_var).map(|_| r.random_range(0..n)).collect();
            picked.sort_unstable();
            picked.dedup();
            picked
        };
        let eval_at = |i: usize, delta: f64| -> f64 {
            let mut v = base.clone();
            v[i] += delta;
            var.set(&Tensor::from_vec(v, shape.clone(), &Device::Cpu).unwrap())
                .unwrap();
            scalar(&f())
        };
        for &i in &coords {
            let numeric = (eval_at(i, h) - eval_at(i, -h)) / (2.0 * h);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        var.set(&Tensor::from_vec(base, shape, &Device::Cpu).unwrap()).unwrap();
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale < 1e-300 {
        return 0.0;
    }
    diff.sqrt() / scale
}

/// Dense `D^-1/2 (A + I) D^-1/2` from an undirected edge list.
pub fn dense_normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = a[i][j] / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    out
}

/// Triple-loop graph convolution on one graph: `act(A X W + b)`.
pub fn dense_gcn_layer(a: &[Vec<f64>], x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64], relu: bool) -> Vec<Vec<f64>> {
    let n = a.len();
    let d_out = b.len();
    let d_in = w.len();
    let mut xw = vec![vec![0.0; d_out]; n];
    for v in 0..n {
        for o in 0..d_out {
            for i in 0..d_in {
                xw[v][o] += x[v][i] * w[i][o];
            }
        }
    }
    let mut out = vec![vec![0.0; d_out]; n];
    for v in 0..n {
        for o in 0..d_out {
            let mut s = b[o];
            for u in 0..n {
                s += a[v][u] * xw[u][o];
            }
            out[v][o] = if relu { s.max(0.0) } else { s };
        }
    }
    out
}

/// Brute-force ECM: per-class 10-bin histograms filled one sample at a time,
/// entropies with an explicit loop, natural log, `1e-6` floor on `L_conf`.
pub struct NaiveEcm {
    pub l_h: f64,
    pub l_conf: f64,
    pub ecm: f64,
}

pub fn naive_bin(p: f64) -> usize {
    let mut bin = 0;
    while bin < 9 && p >= (bin + 1) as f64 / 10.0 {
        bin += 1;
    }
    bin
}

pub fn naive_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

pub fn naive_ecm(orig: &[Vec<f64>], sr: &[Vec<f64>]) -> NaiveEcm {
    let n = orig.len();
    let classes = orig[0].len();
    let mut l_h = 0.0;
    for c in 0..classes {
        let mut ho = [0usize; 10];
        let mut hs = [0usize; 10];
        for i in 0..n {
            ho[naive_bin(orig[i][c])] += 1;
            hs[naive_bin(sr[i][c])] += 1;
        }
        for k in 0..10 {
            let d = ho[k] as f64 / n as f64 - hs[k] as f64 / n as f64;
            l_h += d * d;
        }
    }
    let mut l_conf = 0.0;
    for i in 0..n {
        l_conf += (naive_entropy(&orig[i]) - naive_entropy(&sr[i])).abs();
    }
    l_conf /= n as f64;
    let ecm = 0.5 * l_h + if l_conf > 1e-6 { l_conf.ln() } else { (1e-6f64).ln() };
    NaiveEcm { l_h, l_conf, ecm }
}

/// Random probability vector; some entries are exactly zero or one-hot.
pub fn random_probs(rng: &mut ChaCha8Rng, classes: usize) -> Vec<f64> {
    match rng.random_range(0..10) {
        0 => {
            let mut v = vec![0.0; classes];
            v[rng.random_range(0..classes)] = 1.0;
            v
        }
        _ => {
            let mut v: Vec<f64> = (0..classes)
                .map(|_| {
                    if rng.random_range(0..6) == 0 {
                        0.0
                    } else {
                        rng.random::<f64>().powi(3)
                    }
                })
                .collect();
            if v.iter().all(|&x| x == 0.0) {
                v[0] = 1.0;
            }
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        }
    }
}

/// Scalar PSNR over all channels, `10 log10(1 / mse)`, capped at 100 dB.
pub fn scalar_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for (x, y) in a.iter().zip(b) {
        se += (x - y) * (x - y);
    }
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        return 100.0;
    }
    (10.0 * (1.0 / mse).log10()).min(100.0)
}

/// Scalar SSIM on BT.601 luma: 11x11 Gaussian (sigma 1.5), valid windows only.
/// `a`/`b` are CHW for a single image.
pub fn scalar_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let luma = |img: &[f64]| -> Vec<f64> {
        (0..h * w)
            .map(|i| 0.299 * img[i] + 0.587 * img[h * w + i] + 0.114 * img[2 * h * w + i])
            .collect()
    };
    let (la, lb) = (luma(a), luma(b));
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i][j] / total;
                    let p = la[(y + i) * w + x + j];
                    let q = lb[(y + i) * w + x + j];
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}
