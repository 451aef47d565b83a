use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::euclidean_knn;
use super::mesh::{angle_at, boundary_vertices, cot_at, mixed_areas, vertex_normals};
use crate::error::{Error, Result};
use crate::manifold_io::{min_max_normalize, Manifold};

/// Neighborhood size for point-cloud quadric fits.
pub const POINT_CLOUD_NEIGHBORS: usize = 15;
const MIN_POINT_CLOUD_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureField {
    pub mean: Vec<f64>,
    pub gaussian: Vec<f64>,
    /// Vertices whose mixed area vanished; their values are set to 0.
    pub flagged: Vec<usize>,
}

impl CurvatureField {
    /// Min-max normalized `|GC|` and `|MC|`, each to `[0, 1]`.
    pub fn normalized_abs(&self) -> (Vec<f64>, Vec<f64>) {
        let g: Vec<f64> = self.gaussian.iter().map(|v| v.abs()).collect();
        let h: Vec<f64> = self.mean.iter().map(|v| v.abs()).collect();
        (min_max_normalize(&g), min_max_normalize(&h))
    }
}

/// Angle deficit per vertex: `2π − Σθ` inside, `π − Σθ` on the boundary.
pub fn angle_deficits(m: &Manifold) -> Vec<f64> {
    let mut sum = vec![0.0; m.vertex_count()];
    for f in &m.faces {
        let p = f.map(|i| m.vertices[i]);
        sum[f[0]] += angle_at(&p[0], &p[1], &p[2]);
        sum[f[1]] += angle_at(&p[1], &p[2], &p[0]);
        sum[f[2]] += angle_at(&p[2], &p[0], &p[1]);
    }
    let boundary = boundary_vertices(m);
    sum.iter()
        .zip(boundary)
        .map(|(s, b)| if b { PI - s } else { 2.0 * PI - s })
        .collect()
}

fn mesh_curvature(m: &Manifold) -> CurvatureField {
    let n = m.vertex_count();
    let area = mixed_areas(m);
    let normals = vertex_normals(m);
    let mut kvec = vec![Vector3::zeros(); n];
    for f in &m.faces {
        let p = f.map(|i| m.vertices[i]);
        for k in 0..3 {
            let (a, b, o) = (k, (k + 1) % 3, (k + 2) % 3);
            let w = cot_at(&p[o], &p[a], &p[b]);
            let e = p[a] - p[b];
            kvec[f[a]] += w * e;
            kvec[f[b]] -= w * e;
        }
    }
    let deficits = angle_deficits(m);
    let used: Vec<bool> = {
        let mut u = vec![false; n];
        for f in &m.faces {
            for &i in f {
                u[i] = true;
            }
        }
        u
    };
    let mut flagged = Vec::new();
    let mut mean = vec![0.0; n];
    let mut gaussian = vec![0.0; n];
    for i in 0..n {
        if !(area[i] > 0.0) || !used[i] {
            flagged.push(i);
            continue;
        }
        let kv = kvec[i] / (2.0 * area[i]);
        let h = kv.norm() / 2.0;
        mean[i] = if kv.dot(&normals[i]) >= 0.0 { h } else { -h };
        gaussian[i] = deficits[i] / area[i];
    }
    CurvatureField {
        mean,
        gaussian,
        flagged,
    }
}

fn point_cloud_curvature(m: &Manifold) -> Result<CurvatureField> {
    let n = m.vertex_count();
    let k = POINT_CLOUD_NEIGHBORS.min(n.saturating_sub(1));
    if k < MIN_POINT_CLOUD_NEIGHBORS {
        return Err(Error::invalid(format!(
            "point-cloud curvature needs at least {} neighbors, cloud has {} points",
            MIN_POINT_CLOUD_NEIGHBORS,
            n
        )));
    }
    let centroid = m.vertices.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let knn = euclidean_knn(m, k + 1);
    let fits: Vec<Option<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p0 = m.vertices[i].coords;
            let nb: Vec<Vector3<f64>> = knn[i].iter().map(|&(j, _)| m.vertices[j].coords - p0).collect();
            let mean = nb.iter().sum::<Vector3<f64>>() / nb.len() as f64;
            let cov = nb
                .iter()
                .map(|d| (d - mean) * (d - mean).transpose())
                .sum::<Matrix3<f64>>();
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
            if normal.dot(&(p0 - centroid)) < 0.0 {
                normal = -normal;
            }
            let u: Vector3<f64> = eig.eigenvectors.column(order[2]).into();
            let v = normal.cross(&u);
            // Least squares for h = a u² + b uv + c v² + d u + e v.
            let mut ata = nalgebra::Matrix5::<f64>::zeros();
            let mut atb = nalgebra::Vector5::<f64>::zeros();
            for d in &nb {
                let (x, y, h) = (d.dot(&u), d.dot(&v), d.dot(&normal));
                let row = nalgebra::Vector5::new(x * x, x * y, y * y, x, y);
                ata += row * row.transpose();
                atb += row * h;
            }
            let c = ata.cholesky()?.solve(&atb);
            let (fuu, fuv, fvv, fu, fv) = (2.0 * c[0], c[1], 2.0 * c[2], c[3], c[4]);
            let g = 1.0 + fu * fu + fv * fv;
            let h = ((1.0 + fv * fv) * fuu - 2.0 * fu * fv * fuv + (1.0 + fu * fu) * fvv)
                / (2.0 * g.powf(1.5));
            let kg = (fuu * fvv - fuv * fuv) / (g * g);
            // The outward normal sees a convex surface bending away, so flip the sign.
            Some((-h, kg))
        })
        .collect();
    let mut flagged = Vec::new();
    let mut mean = vec![0.0; n];
    let mut gaussian = vec![0.0; n];
    for (i, f) in fits.into_iter().enumerate() {
        match f {
            Some((h, kg)) if h.is_finite() && kg.is_finite() => {
                mean[i] = h;
                gaussian[i] = kg;
            }
            _ => flagged.push(i),
        }
    }
    Ok(CurvatureField {
        mean,
        gaussian,
        flagged,
    })
}

/// Mean and Gaussian curvature. Meshes use cotangent / angle-deficit operators
/// over mixed Voronoi areas; point clouds use local quadric fits.
pub fn curvature(m: &Manifold) -> Result<CurvatureField> {
    if m.is_mesh() {
        Ok(mesh_curvature(m))
    } else {
        point_cloud_curvature(m)
    }
}

pub fn mean_curvature(m: &Manifold) -> Result<Vec<f64>> {
    Ok(curvature(m)?.mean)
}

pub fn gaussian_curvature(m: &Manifold) -> Result<Vec<f64>> {
    Ok(curvature(m)?.gaussian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn flat_grid_interior_is_flat() {
        let m = shapes::grid(8, 8);
        let c = curvature(&m).unwrap();
        for j in 1..7 {
            for i in 1..7 {
                let v = j * 8 + i;
                assert!(c.mean[v].abs() < 1e-6);
                assert!(c.gaussian[v].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sphere_point_cloud_curvature_positive() {
        let m = shapes::icosphere(3, 1.0);
        let cloud = Manifold::point_cloud(m.vertices.clone()).unwrap();
        let c = curvature(&cloud).unwrap();
        let mean_h = c.mean.iter().sum::<f64>() / c.mean.len() as f64;
        let mean_k = c.gaussian.iter().sum::<f64>() / c.gaussian.len() as f64;
        assert!((mean_h - 1.0).abs() < 0.05, "{mean_h}");
        assert!((mean_k - 1.0).abs() < 0.1, "{mean_k}");
    }

    #[test]
    fn tiny_point_cloud_rejected() {
        let m = Manifold::point_cloud(shapes::icosphere(0, 1.0).vertices[..8].to_vec()).unwrap();
        assert!(curvature(&m).is_err());
    }
}
