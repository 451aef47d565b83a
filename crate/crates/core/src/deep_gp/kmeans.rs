use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

const MAX_ITERATIONS: usize = 100;
const MOVEMENT_TOL: f64 = 1e-8;

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (x.row(i) - c.row(j)).norm_squared()
}

/// Lloyd's k-means with a seeded farthest-point start. Ties go to the lowest index.
pub fn init_inducing_kmeans(inputs: &DMatrix<f64>, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = inputs.nrows();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cannot place {m} inducing points among {n} inputs")));
    }
    let first = rng::stream(seed, &[0x6b6d]).random_range(0..n);
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| (inputs.row(i) - inputs.row(first)).norm_squared()).collect();
    while chosen.len() < m {
        let far = (0..n).fold(0, |b, i| if nearest[i] > nearest[b] { i } else { b });
        chosen.push(far);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min((inputs.row(i) - inputs.row(far)).norm_squared());
        }
    }
    let mut centers = DMatrix::from_fn(m, inputs.ncols(), |j, d| inputs[(chosen[j], d)]);
    for _ in 0..MAX_ITERATIONS {
        let mut sums = DMatrix::<f64>::zeros(m, inputs.ncols());
        let mut counts = vec![0usize; m];
        for i in 0..n {
            let best = (0..m).fold(0, |b, j| {
                if sq_dist(inputs, i, &centers, j) < sq_dist(inputs, i, &centers, b) { j } else { b }
            });
            let mut row = sums.row_mut(best);
            row += inputs.row(i);
            counts[best] += 1;
        }
        let mut moved: f64 = 0.0;
        for j in 0..m {
            if counts[j] == 0 {
                continue;
            }
            let c = sums.row(j) / counts[j] as f64;
            moved = moved.max((&c - centers.row(j)).norm());
            centers.row_mut(j).copy_from(&c);
        }
        if moved < MOVEMENT_TOL {
            break;
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m_equals_n_returns_the_points() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 5.0, 5.0]);
        let c = init_inducing_kmeans(&x, 4, 3).unwrap();
        let mut rows: Vec<(f64, f64)> = (0..4).map(|i| (c[(i, 0)], c[(i, 1)])).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![(0.0, 0.0), (0.0, 3.0), (1.0, 0.0), (5.0, 5.0)]);
    }

    #[test]
    fn two_blobs_one_center_each() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let t = i as f64 * 0.1;
            pts.extend([t, 0.5 * t]);
            pts.extend([10.0 + t, 10.0 - t]);
        }
        let x = DMatrix::from_row_slice(20, 2, &pts);
        let c = init_inducing_kmeans(&x, 2, 11).unwrap();
        let blob = |j: usize| usize::from(c[(j, 0)] > 5.0);
        assert_ne!(blob(0), blob(1));
        assert_eq!(c, init_inducing_kmeans(&x, 2, 11).unwrap());
    }

    #[test]
    fn too_many_centers() {
        assert!(init_inducing_kmeans(&DMatrix::zeros(3, 2), 4, 0).is_err());
    }
}
