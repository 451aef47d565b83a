//! Property-based checks of the library's invariants.

mod common;

use std::path::Path;

use gacgp::dataset::split_indices;
use gacgp::deep_gp::{DeepGpModel, ModelConfig};
use gacgp::evaluation::{ac_curve_from_scores, max_ac_bound_from_scores, random_selection};
use gacgp::features::{assemble_shape_features, energy_weights, laplace_beltrami_eigenpairs, wks_features};
use gacgp::geometry::{self, mesh, GraphMethod};
use gacgp::gpr::GpPosteriorState;
use gacgp::kernels::{self, KernelInput, KernelSpec};
use gacgp::manifold_io::{parse_manifold, to_ascii, MeshFormat, SplitFractions};
use gacgp::saliency::{select_salient_points, SaliencyRecord, SaliencyResult};
use gacgp::{shapes, ShapeRecord};
use nalgebra::{DMatrix, Point3, SymmetricEigen, Vector3};
use proptest::prelude::*;
use rand::Rng;

fn random_points(n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut r = gacgp::rng::stream(seed, &[]);
    (0..n)
        .map(|_| Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn random_gac(seed: u64) -> KernelSpec {
    let mut r = gacgp::rng::stream(seed, &[1]);
    let n = r.random_range(1..=6);
    let freqs = (0..n).map(|_| r.random_range(0.1..4.0)).collect();
    let phases = (0..n).map(|_| r.random_range(0.0..std::f64::consts::FRAC_PI_2)).collect();
    KernelSpec::gac(freqs, phases, r.random_range(0.5..3.0))
}

fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = gacgp::rng::stream(seed, &[2]);
    let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() / n as f64
}

fn format_strategy() -> impl Strategy<Value = MeshFormat> {
    prop_oneof![Just(MeshFormat::Off), Just(MeshFormat::Obj), Just(MeshFormat::Ply)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn serialize_parse_is_idempotent(seed in 0u64..1000, fmt in format_strategy()) {
        let m = shapes::jitter(&shapes::icosphere(1, 1.0), 0.1, seed);
        let once = parse_manifold(to_ascii(&m, fmt).as_bytes(), fmt, Path::new("a")).unwrap();
        let twice = parse_manifold(to_ascii(&once, fmt).as_bytes(), fmt, Path::new("b")).unwrap();
        prop_assert_eq!(&once.faces, &m.faces);
        prop_assert_eq!(&twice.faces, &once.faces);
        for ((a, b), c) in m.vertices.iter().zip(&once.vertices).zip(&twice.vertices) {
            prop_assert!((a - b).amax() <= 1e-6);
            prop_assert_eq!(b, c);
        }
    }

    #[test]
    fn loader_never_panics_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..300), fmt in format_strategy()) {
        let _ = parse_manifold(&bytes, fmt, Path::new("garbage"));
    }

    #[test]
    fn loader_never_panics_on_near_miss_off(body in "[0-9 .eE+-]{0,12}(\n[0-9 .eE+-]{0,24}){0,12}") {
        let text = format!("OFF\n{body}");
        let _ = parse_manifold(text.as_bytes(), MeshFormat::Off, Path::new("near.off"));
    }

    #[test]
    fn geodesics_dominate_chords_and_obey_triangle_inequality(seed in 0u64..1000, k in 3usize..25) {
        let m = shapes::jitter(&shapes::icosphere(1, 1.0), 0.05, seed);
        let g = geometry::build_geodesic_graph(&m, k, GraphMethod::GraphDijkstra).unwrap();
        let fw = common::floyd_warshall(&m);
        for i in 0..m.vertex_count() {
            for (j, d) in g.neighbors(i) {
                prop_assert!(d + 1e-12 >= (m.vertices[i] - m.vertices[j]).norm());
                if let Some(back) = g.distance(j, i) {
                    prop_assert!((back - d).abs() <= 1e-12);
                }
                for l in 0..m.vertex_count() {
                    prop_assert!(d <= fw[(i, l)] + fw[(l, j)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn curvature_is_invariant_under_rigid_motion(seed in 0u64..1000) {
        let m = shapes::jitter(&shapes::icosphere(2, 1.0), 0.01, seed);
        let t = Vector3::new(3.0, -1.0, 0.5) * (seed as f64 / 100.0);
        let moved = shapes::rigid_transform(&m, &shapes::random_rotation(seed, &[]), &t);
        let a = geometry::curvature(&m).unwrap();
        let b = geometry::curvature(&moved).unwrap();
        for (x, y) in [(&a.mean, &b.mean), (&a.gaussian, &b.gaussian)] {
            let scale = x.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for (u, v) in x.iter().zip(y) {
                prop_assert!((u - v).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn kernel_is_stationary(seed in 0u64..1000, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let spec = random_gac(seed);
        let pts = random_points(20, seed);
        let shifted: Vec<Point3<f64>> = pts.iter().map(|p| p + Vector3::new(dx, dy, 1.0)).collect();
        let a = kernels::assemble_matrix(KernelInput::Points(&pts), &spec).unwrap().to_dense();
        let b = kernels::assemble_matrix(KernelInput::Points(&shifted), &spec).unwrap().to_dense();
        prop_assert!((a - b).amax() <= 1e-12);
    }

    #[test]
    fn kernel_is_bounded_and_additive(seed in 0u64..1000, r in 0.0f64..20.0) {
        let spec = random_gac(seed);
        let v = kernels::gac_value(r, &spec);
        let n = spec.frequencies.len();
        prop_assert!(v.abs() <= spec.variance / (4.0 * std::f64::consts::PI) * n as f64);
        let parts: f64 = (0..n)
            .map(|q| {
                let one = KernelSpec::gac(vec![spec.frequencies[q]], vec![spec.phases[q]], spec.variance);
                kernels::gac_value(r, &one)
            })
            .sum();
        prop_assert!((v - parts).abs() <= 1e-12);
    }

    #[test]
    fn mmk_keeps_symmetry_and_psd(seed in 0u64..1000, n in 2usize..12) {
        let k = kernels::KernelMatrix {
            storage: kernels::KernelStorage::Dense(random_psd(n, seed)),
            jitter_applied: 0.0,
        };
        let mmk = kernels::build_mmk(&k).unwrap();
        prop_assert!(mmk.is_symmetric());
        let min = SymmetricEigen::new(mmk.to_dense()).eigenvalues.min();
        prop_assert!(min >= -1e-10, "min eigenvalue {}", min);
    }

    #[test]
    fn posterior_variance_shrinks_with_data(seed in 0u64..1000, n in 2usize..8) {
        let k = random_psd(n + 3, seed) + DMatrix::identity(n + 3, n + 3) * 1e-3;
        let test = k.view((n, 0), (3, n)).into_owned();
        let prior: Vec<f64> = (n..n + 3).map(|i| k[(i, i)]).collect();
        let mut last = prior.clone();
        let mut inc = GpPosteriorState::new(1e-9, None);
        for j in 0..n {
            let row: Vec<f64> = (0..j).map(|c| k[(j, c)]).collect();
            inc.append_training_point(j, &row, k[(j, j)]).unwrap();
            let post = inc.posterior(&test.columns(0, j + 1).into_owned(), &prior, None).unwrap();
            for ((p, q), pr) in post.variance.iter().zip(&last).zip(&prior) {
                prop_assert!(*p <= q + 1e-10 && *p <= pr + 1e-10);
            }
            last = post.variance;
        }
        let batch = GpPosteriorState::from_matrix(&k.view((0, 0), (n, n)).into_owned(), (0..n).collect(), 1e-9).unwrap();
        prop_assert!((batch.chol_factor() - inc.chol_factor()).amax() <= 1e-8);
    }

    #[test]
    fn splits_are_disjoint_and_covering(n in 3usize..200, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (train, val) = (a, (1.0 - a) * b);
        let f = SplitFractions { train, val, test: 1.0 - train - val };
        let nonzero = [f.train, f.val, f.test].iter().filter(|&&x| x > 0.0).count();
        prop_assume!(n >= nonzero);
        let parts = split_indices(n, &f, seed).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(parts.clone(), split_indices(n, &f, seed).unwrap());
    }

    #[test]
    fn ac_curves_rise_and_stay_under_the_bound(seed in 0u64..1000, n in 5usize..80) {
        let mut r = gacgp::rng::stream(seed, &[3]);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.0..2.0)).collect();
        let k = n.min(20);
        let ids = random_selection(n, k, seed);
        let curve = ac_curve_from_scores(&ids, &scores, "random", "toy").unwrap();
        let bound = max_ac_bound_from_scores(&scores, k).unwrap();
        for w in curve.sums.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for (c, b) in curve.sums.iter().zip(&bound.sums) {
            prop_assert!(*c <= b + 1e-12 * b.abs());
        }
    }

    #[test]
    fn assembly_only_reindexes(seed in 0u64..1000, kappa in 1usize..6, l in 1usize..5) {
        let mut r = gacgp::rng::stream(seed, &[4]);
        let tri = shapes::icosphere(0, 1.0);
        let n = tri.vertex_count();
        let h = 3;
        let feats: Vec<Vec<Vec<f64>>> = (0..h)
            .map(|_| (0..n).map(|_| (0..l).map(|_| r.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        let sal: Vec<SaliencyResult> = (0..h)
            .map(|s| SaliencyResult {
                salient_ids: random_selection(n, kappa, seed + s as u64),
                score_maps: None,
                per_iter_seconds: vec![],
                config: SaliencyRecord { k_neighbors: 1, n_fre: 1, kappa, jitter: 0.0, seed: None },
            })
            .collect();
        let recs: Vec<ShapeRecord> = (0..h)
            .map(|s| ShapeRecord { id: format!("{s}"), class_label: None, manifold: tri.clone() })
            .collect();
        let fm = assemble_shape_features(&recs, &sal, &feats).unwrap();
        for s in 0..h {
            for (j, &v) in sal[s].salient_ids.iter().enumerate() {
                prop_assert_eq!(&fm.rows[s][j * l..(j + 1) * l], feats[s][v].as_slice());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn saliency_invariants(seed in 0u64..1000, kappa in 1usize..15) {
        let m = shapes::jitter(&shapes::icosphere(2, 1.0), 0.02, seed);
        let g = geometry::build_geodesic_graph(&m, 30, GraphMethod::GraphDijkstra).unwrap();
        let spec = KernelSpec::gac_default(5, 4.0);
        let res = select_salient_points(&m, &g, &spec, kappa, true).unwrap();
        let again = select_salient_points(&m, &g, &spec, kappa, true).unwrap();
        prop_assert_eq!(&res.salient_ids, &again.salient_ids);
        prop_assert_eq!(&res.score_maps, &again.score_maps);
        prop_assert_eq!(res.salient_ids.len(), kappa);
        let mut sorted = res.salient_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), kappa);
        let maps = res.score_maps.as_ref().unwrap();
        let scale = maps[0].iter().fold(0.0f64, |a, &b| a.max(b));
        for (j, map) in maps.iter().enumerate() {
            prop_assert_eq!(gacgp::saliency::argmax_lowest(map), Some(res.salient_ids[j]));
            for &prev in &res.salient_ids[..j] {
                prop_assert!(map[prev] <= res.config.jitter * (1.0 + 1e-6) + 1e-12 * scale);
            }
        }
    }

    #[test]
    fn spectral_basis_is_orthonormal_with_exact_rayleigh_quotients(seed in 0u64..1000) {
        let m = shapes::jitter(&shapes::icosphere(2, 1.0), 0.02, seed);
        let basis = laplace_beltrami_eigenpairs(&m, 12).unwrap();
        let stiff = mesh::cotangent_laplacian(&m);
        let phi = &basis.eigenfunctions;
        for a in 0..12 {
            let fa: Vec<f64> = phi.column(a).iter().copied().collect();
            let lf = stiff.matvec(&fa);
            let rq: f64 = fa.iter().zip(&lf).map(|(x, y)| x * y).sum();
            prop_assert!((rq - basis.eigenvalues[a]).abs() <= 1e-8 * basis.eigenvalues[a].max(1.0));
            for b in 0..12 {
                let dot: f64 = (0..m.vertex_count()).map(|i| basis.mass_weights[i] * phi[(i, a)] * phi[(i, b)]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - target).abs() <= 1e-6);
            }
        }
        let w = wks_features(&basis, 8, true).unwrap();
        prop_assert!(w.iter().flatten().all(|&v| v >= 0.0 && v.is_finite()));
        for row in energy_weights(&basis, 8, true).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn elbo_terms_have_the_right_signs(seed in 0u64..1000) {
        let (x, y) = common::blobs(12, seed);
        let mut model = DeepGpModel::init(&x, &ModelConfig { hidden_dims: vec![2], inducing_count: 5, seed, ..Default::default() }).unwrap();
        let mut r = gacgp::rng::stream(seed, &[5]);
        let mut p = model.params();
        for m in p.iter_mut().flatten() {
            for v in m.iter_mut() {
                *v += r.random_range(-0.3..0.3);
            }
        }
        model.set_params(&p);
        let noise = model.noise_draws(12, 4, seed, &[]);
        for kl in model.kl_terms().unwrap() {
            prop_assert!(kl >= 0.0);
        }
        prop_assert!(model.expected_log_likelihood(&x, &y, 12, &noise).unwrap() <= 0.0);
        for row in model.predict(&x, 5).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        }
    }
}
