//! Worked examples checked against independent recomputations.
#![allow(clippy::needless_range_loop)]

mod common;

use std::f64::consts::PI;
use std::path::Path;

use gacgp::evaluation::{ac_curve, curvature_scores};
use gacgp::features::{
    assemble_shape_features, energy_weights, laplace_beltrami_eigenpairs, laplace_beltrami_eigenpairs_with,
    wks_features, EigenMethod,
};
use gacgp::geometry::{self, mesh, CurvatureField, GraphMethod};
use gacgp::gpr::GpPosteriorState;
use gacgp::kernels::{self, KernelSpec, MixtureComponent};
use gacgp::manifold_io::{parse_manifold, to_ascii, MeshFormat};
use gacgp::saliency::{saliency_map, SaliencyConfig, SaliencyRecord, SaliencyResult};
use gacgp::{deep_gp::*, shapes, Manifold, ShapeRecord};
use nalgebra::{DMatrix, DVector, Point3, SymmetricEigen};
use rand::Rng;

fn rand_psd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = gacgp::rng::stream(seed, &[]);
    let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

#[test]
fn ply_roundtrip_keeps_six_decimals() {
    let m = shapes::jitter(&shapes::icosphere(1, 1.3), 0.05, 4);
    let text = to_ascii(&m, MeshFormat::Ply);
    let back = parse_manifold(text.as_bytes(), MeshFormat::Ply, Path::new("mem.ply")).unwrap();
    assert_eq!(back.faces, m.faces);
    for (a, b) in m.vertices.iter().zip(&back.vertices) {
        assert!((a - b).amax() <= 5e-7);
    }
}

#[test]
fn normalized_cloud_statistics() {
    let mut r = gacgp::rng::stream(21, &[]);
    let pts: Vec<Point3<f64>> = (0..50)
        .map(|_| Point3::new(r.random_range(-3.0..5.0), r.random_range(0.0..2.0), r.random_range(-1.0..9.0)))
        .collect();
    let m = geometry::normalize_coordinates(&Manifold::point_cloud(pts).unwrap()).unwrap();
    let n = m.vertices.len() as f64;
    let centroid = m.vertices.iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / n;
    let mean_norm = m.vertices.iter().map(|p| p.coords.norm()).sum::<f64>() / n;
    assert!(centroid.amax() <= 1e-12);
    assert!((mean_norm - 1.0).abs() <= 1e-12);
}

#[test]
fn dijkstra_matches_all_pairs_restricted_to_k() {
    let m = shapes::jitter(&shapes::icosphere(1, 1.0), 0.03, 8);
    let k = 10;
    let g = geometry::build_geodesic_graph(&m, k, GraphMethod::GraphDijkstra).unwrap();
    let fw = common::floyd_warshall(&m);
    for i in 0..m.vertex_count() {
        let mut order: Vec<usize> = (0..m.vertex_count()).collect();
        order.sort_by(|&a, &b| fw[(i, a)].total_cmp(&fw[(i, b)]).then(a.cmp(&b)));
        assert_eq!(g.neighbor_ids[i], order[..k]);
        for (j, d) in g.neighbors(i) {
            assert!((d - fw[(i, j)]).abs() <= 1e-12);
        }
    }
}

#[test]
fn doubled_sphere_halves_mean_curvature() {
    let m1 = shapes::icosphere(3, 1.0);
    let m2 = shapes::icosphere(3, 2.0);
    let h1 = geometry::mean_curvature(&m1).unwrap();
    let h2 = geometry::mean_curvature(&m2).unwrap();
    for (a, b) in h1.iter().zip(&h2) {
        assert!((b - 0.5 * a).abs() <= 0.05 * (0.5 * a).abs());
    }
}

#[test]
fn default_gac_at_half() {
    let spec = KernelSpec::gac_default(5, 1.0);
    let r: f64 = 0.5;
    let mut expected = 0.0;
    for n in 1..=5 {
        let lam = (0.2 * PI * n as f64).sqrt();
        let phi = (n - 1) as f64 * (PI / 2.0) / 4.0;
        expected += (-lam * r).exp() * (lam * r + phi).cos();
    }
    expected /= 4.0 * PI;
    assert!((kernels::gac_value(r, &spec) - expected).abs() <= 1e-15);
}

#[test]
fn single_component_mixture_is_rbf() {
    let ell: f64 = 0.7;
    let sm = KernelSpec::spectral_mixture(
        1.3,
        vec![MixtureComponent {
            weight: 1.0,
            mean: 0.0,
            variance: 1.0 / (2.0 * PI * ell).powi(2),
        }],
    );
    let rbf = KernelSpec::rbf(1.3, ell);
    for i in 0..40 {
        let r = 0.1 * i as f64;
        assert!((sm.value(r) - rbf.value(r)).abs() <= 1e-12, "r = {r}");
    }
}

#[test]
fn gpr_small_system_matches_dense_inverse() {
    let k = rand_psd(3, 1);
    let jitter = 1e-9;
    let state = GpPosteriorState::from_matrix(&k, vec![0, 1, 2], jitter).unwrap();
    let y = [0.3, -1.2, 0.8];
    let mut r = gacgp::rng::stream(2, &[]);
    let test = DMatrix::from_fn(4, 3, |_, _| r.random_range(-0.5..0.5));
    let prior = vec![2.0; 4];
    let post = state.posterior(&test, &prior, Some(&y)).unwrap();
    let inv = (&k + DMatrix::identity(3, 3) * state.jitter).try_inverse().unwrap();
    let alpha = &inv * DVector::from_row_slice(&y);
    for i in 0..4 {
        let t = test.row(i).transpose();
        assert!((post.mean[i] - t.dot(&alpha)).abs() <= 1e-10);
        assert!((post.variance[i] - (prior[i] - (t.transpose() * &inv * &t)[(0, 0)])).abs() <= 1e-10);
    }
}

#[test]
fn sequential_appends_match_one_shot_factor() {
    let k = rand_psd(10, 3);
    let batch = GpPosteriorState::from_matrix(&k, (0..10).collect(), 1e-10).unwrap();
    let mut inc = GpPosteriorState::new(1e-10, None);
    for i in 0..10 {
        let row: Vec<f64> = (0..i).map(|j| k[(i, j)]).collect();
        inc.append_training_point(i, &row, k[(i, i)]).unwrap();
    }
    assert!((inc.chol_factor() - batch.chol_factor()).amax() <= 1e-8);
}

#[test]
fn prior_selections_stay_dark_in_later_maps() {
    let bump = shapes::Bump {
        center: shapes::random_direction(0, &[1]),
        amplitude: 0.5,
        width: 0.2,
    };
    let m = shapes::bump_sphere(3, &bump);
    let cfg = SaliencyConfig {
        k: 100,
        method: GraphMethod::EuclideanKnn,
        kernel: KernelSpec::gac_default(5, 8.0),
        kappa: 10,
        keep_maps: true,
        normalize: true,
    };
    let res = cfg.run(&m).unwrap();
    for j in 0..res.salient_ids.len() {
        let map = saliency_map(&res, j).unwrap();
        for &prev in &res.salient_ids[..j] {
            assert!(map[prev] < 0.01, "map {j} at {prev}: {}", map[prev]);
        }
        let top = gacgp::saliency::argmax_lowest(&map).unwrap();
        assert_eq!(top, res.salient_ids[j]);
    }
}

#[test]
fn eigenvalues_match_dense_generalized_solve() {
    let m = shapes::jitter(&shapes::icosphere(2, 1.0), 0.02, 5);
    let stiff = mesh::cotangent_laplacian(&m).to_dense();
    let mass = mesh::lumped_mass(&m);
    let n = m.vertex_count();
    let a = DMatrix::from_fn(n, n, |i, j| stiff[(i, j)] / (mass[i] * mass[j]).sqrt());
    let mut oracle: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    oracle.sort_by(f64::total_cmp);
    let basis = laplace_beltrami_eigenpairs_with(&m, 12, EigenMethod::ShiftInvert).unwrap();
    assert!(basis.eigenvalues[0].abs() <= 1e-8);
    for k in 1..12 {
        let rel = (basis.eigenvalues[k] - oracle[k]).abs() / oracle[k];
        assert!(rel <= 1e-6, "λ{k}: {} vs {}", basis.eigenvalues[k], oracle[k]);
    }
}

#[test]
fn sphere_wks_is_uniform() {
    // 36 eigenpairs cover the ℓ ≤ 5 multiplets completely; a cut through a
    // multiplet breaks the rotational symmetry.
    let m = shapes::icosphere(4, 1.0);
    let basis = laplace_beltrami_eigenpairs(&m, 36).unwrap();
    let w = wks_features(&basis, 16, true).unwrap();
    for e in 0..16 {
        let col: Vec<f64> = w.iter().map(|r| r[e]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let spread = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        assert!(spread <= 0.02 * mean, "energy {e}: spread {spread}, mean {mean}");
    }
    for row in energy_weights(&basis, 16, true).unwrap() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn two_shape_layout_by_hand() {
    let tri = Manifold::new(
        vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let shapes: Vec<ShapeRecord> = ["a", "b"]
        .iter()
        .enumerate()
        .map(|(i, id)| ShapeRecord {
            id: id.to_string(),
            class_label: Some(i as i64),
            manifold: tri.clone(),
        })
        .collect();
    let sal = |ids: Vec<usize>| SaliencyResult {
        salient_ids: ids,
        score_maps: None,
        per_iter_seconds: vec![],
        config: SaliencyRecord {
            k_neighbors: 2,
            n_fre: 1,
            kappa: 2,
            jitter: 0.0,
            seed: None,
        },
    };
    let f0 = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
    let f1 = vec![vec![-1.0, -2.0, -3.0], vec![-4.0, -5.0, -6.0], vec![-7.0, -8.0, -9.0]];
    let fm = assemble_shape_features(&shapes, &[sal(vec![2, 0]), sal(vec![1, 2])], &[f0, f1]).unwrap();
    assert_eq!(fm.rows[0], vec![7.0, 8.0, 9.0, 1.0, 2.0, 3.0]);
    assert_eq!(fm.rows[1], vec![-4.0, -5.0, -6.0, -7.0, -8.0, -9.0]);
    assert_eq!((fm.kappa, fm.channels, fm.width()), (2, 3, 6));
    assert_eq!(fm.labels, vec![Some(0), Some(1)]);
}

#[test]
fn single_layer_batch_matches_dense_oracle() {
    let x = DMatrix::from_row_slice(3, 2, &[0.2, -0.4, 1.1, 0.3, -0.7, 0.9]);
    let mut model = DeepGpModel::init(
        &x,
        &ModelConfig {
            hidden_dims: vec![],
            inducing_count: 3,
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let mut r = gacgp::rng::stream(31, &[]);
    let mut p = model.params();
    for m in p.iter_mut().flatten() {
        for v in m.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    model.set_params(&p);
    let batch = x.rows(0, 2).into_owned();
    let noise = model.noise_draws(2, 1, 6, &[]);
    let ours = model.elbo(&batch, &[0, 1], 2, &noise).unwrap();
    let oracle = common::straight_line_elbo(&model, &batch, &[0, 1], 2, &noise);
    assert!((ours - oracle).abs() <= 1e-10, "{ours} vs {oracle}");
}

#[test]
fn tiny_model_elbo_matches_straight_line() {
    let (model, x, y, noise) = common::tiny_model();
    let ours = model.elbo(&x, &y, 6, &noise).unwrap();
    let oracle = common::straight_line_elbo(&model, &x, &y, 6, &noise);
    assert!((ours - oracle).abs() <= 1e-10, "{ours} vs {oracle}");
    let kl: f64 = model.layers.iter().map(common::straight_line_kl).sum();
    assert!((model.kl_divergence().unwrap() - kl).abs() <= 1e-10);
}

#[test]
fn thirty_vertex_curve_by_cumulative_sum() {
    let mut r = gacgp::rng::stream(30, &[]);
    let field = CurvatureField {
        mean: (0..30).map(|_| r.random_range(-2.0..3.0)).collect(),
        gaussian: (0..30).map(|_| r.random_range(-1.0..1.0)).collect(),
        flagged: vec![],
    };
    let ids = [4, 17, 0, 29, 8, 8, 13, 2, 21, 6, 11, 25];
    let curve = ac_curve(&ids, &field).unwrap();

    let g: Vec<f64> = field.gaussian.iter().map(|v| v.abs()).collect();
    let h: Vec<f64> = field.mean.iter().map(|v| v.abs()).collect();
    let norm = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        v.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<_>>()
    };
    let (gn, hn) = (norm(&g), norm(&h));
    let mut sum = 0.0;
    for (k, &i) in ids.iter().enumerate() {
        sum += gn[i] + hn[i];
        assert!((curve.values[k] - sum.ln()).abs() <= 1e-12);
    }
}

#[test]
fn bound_starts_inside_the_bump() {
    let bump = shapes::Bump {
        center: shapes::random_direction(2, &[1]),
        amplitude: 0.5,
        width: 0.2,
    };
    let m = shapes::bump_sphere(4, &bump);
    let scores = curvature_scores(&geometry::curvature(&m).unwrap());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    for &v in &order[..10] {
        assert!(bump.angle_of(&m.vertices[v]) <= 0.4, "vertex {v} at {}", bump.angle_of(&m.vertices[v]));
    }
}
