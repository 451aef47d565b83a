//! Shared fixtures and independent reference implementations for the
//! integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use gacgp::deep_gp::{DeepGpModel, GpLayer, ModelConfig, NoiseDraws};
use gacgp::geometry::GeodesicGraph;
use gacgp::kernels::KernelSpec;
use gacgp::shapes;
use gacgp::{Manifold, ShapeRecord};
use nalgebra::{Cholesky, DMatrix, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense kernel on the symmetrized graph, using the shorter recorded lag when
/// both endpoints list each other. No jitter.
pub fn dense_graph_kernel(g: &GeodesicGraph, spec: &KernelSpec) -> DMatrix<f64> {
    let n = g.source_count;
    let mut lag = DMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        for (j, d) in g.neighbors(i) {
            lag[(i, j)] = lag[(i, j)].min(d);
            lag[(j, i)] = lag[(j, i)].min(d);
        }
    }
    DMatrix::from_fn(n, n, |i, j| {
        let r = lag[(i, j)];
        if r.is_finite() {
            let s: f64 = spec
                .frequencies
                .iter()
                .zip(&spec.phases)
                .map(|(l, p)| (-l * r).exp() * (l * r + p).cos())
                .sum();
            spec.variance / (4.0 * PI) * s
        } else {
            0.0
        }
    })
}

/// `K · diag(Σ_j |K_ij|) · K`.
pub fn dense_mmk(k: &DMatrix<f64>) -> DMatrix<f64> {
    let w = DMatrix::from_diagonal(&k.abs().column_sum());
    k * w * k
}

/// Greedy posterior-variance selection that re-inverts the selected block
/// densely at every iteration.
pub fn brute_force_saliency(mmk: &DMatrix<f64>, kappa: usize, rel_jitter: f64) -> Vec<usize> {
    let n = mmk.nrows();
    let jitter = rel_jitter * mmk.diagonal().mean();
    let mut ids: Vec<usize> = Vec::new();
    for _ in 0..kappa {
        let scores: Vec<f64> = if ids.is_empty() {
            mmk.diagonal().iter().copied().collect()
        } else {
            let j = ids.len();
            let block = DMatrix::from_fn(j, j, |a, b| mmk[(ids[a], ids[b])] + if a == b { jitter } else { 0.0 });
            let inv = block.try_inverse().expect("selected block invertible");
            (0..n)
                .map(|i| {
                    let k = nalgebra::DVector::from_fn(j, |a, _| mmk[(i, ids[a])]);
                    mmk[(i, i)] - (k.transpose() * &inv * &k)[(0, 0)]
                })
                .collect()
        };
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        ids.push(best);
    }
    ids
}

/// All-pairs shortest paths over mesh edges.
pub fn floyd_warshall(m: &Manifold) -> DMatrix<f64> {
    let n = m.vertex_count();
    let mut d = DMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        d[(i, i)] = 0.0;
    }
    for f in &m.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let w = (m.vertices[a] - m.vertices[b]).norm();
            d[(a, b)] = d[(a, b)].min(w);
            d[(b, a)] = d[(b, a)].min(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[(i, k)] + d[(k, j)];
                if via < d[(i, j)] {
                    d[(i, j)] = via;
                }
            }
        }
    }
    d
}

/// Irregular meshes with at most 300 vertices, jittered so that no two
/// saliency scores tie exactly.
pub fn small_jittered_meshes() -> Vec<(String, Manifold)> {
    let bump = shapes::Bump {
        center: shapes::random_direction(3, &[1]),
        amplitude: 0.5,
        width: 0.3,
    };
    vec![
        ("icosphere".into(), shapes::jitter(&shapes::icosphere(2, 1.0), 0.02, 11)),
        ("bump_sphere".into(), shapes::jitter(&shapes::bump_sphere(2, &bump), 0.02, 12)),
        ("torus".into(), shapes::jitter(&shapes::torus(1.0, 0.4, 24, 12), 0.02, 13)),
        ("cube".into(), shapes::jitter(&shapes::cube_sphere(2, 1.0), 0.02, 14)),
    ]
}

/// Two Gaussian blobs centred at (−2, −2) and (2, 2) with unit noise.
pub fn blobs(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut r = gacgp::rng::stream(seed, &[]);
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = DMatrix::from_fn(n, 2, |i, _| {
        let c = if y[i] == 0 { -2.0 } else { 2.0 };
        let e: f64 = StandardNormal.sample(&mut r);
        c + e
    });
    (x, y)
}

/// Alternating jittered, randomly rotated spheres (label 0) and cubes (label 1).
pub fn spheres_and_cubes(count: usize, level: u32, seed: u64) -> Vec<ShapeRecord> {
    (0..count as u64)
        .map(|i| {
            let base = if i % 2 == 0 {
                shapes::icosphere(level, 1.0)
            } else {
                shapes::cube_sphere(level, 1.0)
            };
            let m = shapes::rigid_transform(&base, &shapes::random_rotation(seed, &[i]), &Vector3::zeros());
            let m = shapes::jitter(&m, 0.01, gacgp::rng::derive_seed(seed, &[i]));
            ShapeRecord {
                id: format!("s{i:02}"),
                class_label: Some((i % 2) as i64),
                manifold: m,
            }
        })
        .collect()
}

/// Two-layer model on six 3-D inputs with four inducing points and three
/// Monte Carlo paths, nudged away from its initialization.
pub fn tiny_model() -> (DeepGpModel, DMatrix<f64>, Vec<usize>, NoiseDraws) {
    let (x2, _) = blobs(6, 5);
    let x = DMatrix::from_fn(6, 3, |i, j| if j < 2 { x2[(i, j)] } else { 0.3 * i as f64 - 0.7 });
    let y = vec![0, 1, 0, 1, 1, 0];
    let mut model = DeepGpModel::init(
        &x,
        &ModelConfig {
            hidden_dims: vec![2],
            inducing_count: 4,
            mc_samples: 3,
            seed: 9,
            ..Default::default()
        },
    )
    .unwrap();
    let mut r = gacgp::rng::stream(77, &[]);
    let mut p = model.params();
    for m in p.iter_mut().flatten() {
        for v in m.iter_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    model.set_params(&p);
    let noise = model.noise_draws(6, 3, 4, &[0]);
    (model, x, y, noise)
}

fn ard_value(a: &[f64], b: &[f64], layer: &GpLayer) -> f64 {
    let k = &layer.kernel;
    let r = a
        .iter()
        .zip(b)
        .zip(&k.ard_lengthscales)
        .map(|((u, v), s)| ((u - v) / s).powi(2))
        .sum::<f64>()
        .sqrt();
    let s: f64 = k
        .frequencies
        .iter()
        .zip(&k.phases)
        .map(|(l, p)| (-l * r).exp() * (l * r + p).cos())
        .sum();
    k.variance / (4.0 * PI) * s
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// `K_ZZ` plus the jitter the layer would settle on, and `k(x, x)`.
pub fn jittered_kzz(layer: &GpLayer) -> (DMatrix<f64>, f64) {
    let z = rows(&layer.inducing_inputs);
    let m = z.len();
    let kxx = layer.kernel.variance / (4.0 * PI) * layer.kernel.phases.iter().map(|p| p.cos()).sum::<f64>();
    let kzz = DMatrix::from_fn(m, m, |i, j| ard_value(&z[i], &z[j], layer));
    let mut c = layer.kernel.jitter;
    for _ in 0..=20 {
        let k = &kzz + DMatrix::identity(m, m) * (c * kxx);
        if Cholesky::new(k.clone()).is_some() {
            return (k, kxx);
        }
        c *= 2.0;
    }
    panic!("inducing covariance not factorizable");
}

/// Gaussian KL of one layer from explicit inverses and determinants.
pub fn straight_line_kl(layer: &GpLayer) -> f64 {
    let (k, _) = jittered_kzz(layer);
    let m = k.nrows() as f64;
    let kinv = k.clone().try_inverse().unwrap();
    let logdet_k = k.determinant().ln();
    (0..layer.output_dim)
        .map(|o| {
            let l = &layer.variational_chol[o];
            let s = l * l.transpose();
            let mu = layer.variational_mean.column(o);
            let logdet_s = s.determinant().ln();
            0.5 * ((&kinv * &s).trace() + (mu.transpose() * &kinv * mu)[(0, 0)] - m + logdet_k - logdet_s)
        })
        .sum()
}

/// ELBO written out directly with dense inverses, one path at a time.
pub fn straight_line_elbo(model: &DeepGpModel, x: &DMatrix<f64>, labels: &[usize], n_total: usize, noise: &NoiseDraws) -> f64 {
    let b = x.nrows();
    let xs = DMatrix::from_fn(b, x.ncols(), |i, j| (x[(i, j)] - model.input_mean[j]) / model.input_scale[j]);
    let mut ll = 0.0;
    for draws in noise {
        let mut h = xs.clone();
        for (layer, eps) in model.layers.iter().zip(draws) {
            let (k, kxx) = jittered_kzz(layer);
            let kinv = k.try_inverse().unwrap();
            let z = rows(&layer.inducing_inputs);
            let hr = rows(&h);
            let kxz = DMatrix::from_fn(b, z.len(), |i, j| ard_value(&hr[i], &z[j], layer));
            let proj = &kxz * &kinv;
            let mean = &h * &layer.mean_coeffs + &proj * &layer.variational_mean;
            let mut next = DMatrix::zeros(b, layer.output_dim);
            for o in 0..layer.output_dim {
                let l = &layer.variational_chol[o];
                let s = l * l.transpose();
                for i in 0..b {
                    let p = proj.row(i);
                    let explained = (p * kxz.row(i).transpose())[(0, 0)];
                    let extra = (p * &s * p.transpose())[(0, 0)];
                    let var = (kxx - explained + extra).max(1e-12);
                    next[(i, o)] = mean[(i, o)] + var.sqrt() * eps[(i, o)];
                }
            }
            h = next;
        }
        for (i, &y) in labels.iter().enumerate() {
            let row = h.row(i);
            let mx = row.max();
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            ll += h[(i, y)] - lse;
        }
    }
    let scale = n_total as f64 / b as f64 / noise.len() as f64;
    let kl: f64 = model.layers.iter().map(straight_line_kl).sum();
    scale * ll - kl
}
