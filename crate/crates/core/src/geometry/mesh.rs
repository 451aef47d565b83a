//! Per-triangle quantities: angles, cotangent weights, vertex areas.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::linalg::CsrMatrix;
use crate::manifold_io::Manifold;

pub fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Interior angle at `a` of triangle `(a, b, c)`.
pub fn angle_at(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    let u = b - a;
    let v = c - a;
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// Cotangent of the angle at `a`; zero-area triangles contribute 0.
pub fn cot_at(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    let u = b - a;
    let v = c - a;
    let s = u.cross(&v).norm();
    if s == 0.0 {
        0.0
    } else {
        u.dot(&v) / s
    }
}

pub fn total_area(m: &Manifold) -> f64 {
    m.faces
        .iter()
        .map(|f| triangle_area(&m.vertices[f[0]], &m.vertices[f[1]], &m.vertices[f[2]]))
        .sum()
}

/// Barycentric lumped mass: one third of each incident triangle's area.
pub fn lumped_mass(m: &Manifold) -> Vec<f64> {
    let mut mass = vec![0.0; m.vertex_count()];
    for f in &m.faces {
        let a = triangle_area(&m.vertices[f[0]], &m.vertices[f[1]], &m.vertices[f[2]]) / 3.0;
        for &i in f {
            mass[i] += a;
        }
    }
    mass
}

/// Mixed Voronoi area per vertex (Voronoi region for non-obtuse triangles,
/// area/2 or area/4 splits for obtuse ones).
pub fn mixed_areas(m: &Manifold) -> Vec<f64> {
    let mut area = vec![0.0; m.vertex_count()];
    for f in &m.faces {
        let p = f.map(|i| m.vertices[i]);
        let t = triangle_area(&p[0], &p[1], &p[2]);
        if t == 0.0 {
            continue;
        }
        let angles = [
            angle_at(&p[0], &p[1], &p[2]),
            angle_at(&p[1], &p[2], &p[0]),
            angle_at(&p[2], &p[0], &p[1]),
        ];
        let obtuse = angles.iter().position(|&a| a > std::f64::consts::FRAC_PI_2);
        for k in 0..3 {
            let (i, j, l) = (k, (k + 1) % 3, (k + 2) % 3);
            area[f[i]] += match obtuse {
                None => {
                    let cot_j = cot_at(&p[j], &p[l], &p[i]);
                    let cot_l = cot_at(&p[l], &p[i], &p[j]);
                    ((p[i] - p[l]).norm_squared() * cot_j + (p[i] - p[j]).norm_squared() * cot_l)
                        / 8.0
                }
                Some(o) if o == i => t / 2.0,
                Some(_) => t / 4.0,
            };
        }
    }
    area
}

/// Cotangent stiffness matrix `L` (positive semidefinite):
/// `L_ij = −½(cot α_ij + cot β_ij)`, `L_ii = −Σ_j L_ij`.
pub fn cotangent_laplacian(m: &Manifold) -> CsrMatrix {
    let n = m.vertex_count();
    let mut w: HashMap<(usize, usize), f64> = HashMap::new();
    for f in &m.faces {
        let p = f.map(|i| m.vertices[i]);
        for k in 0..3 {
            let (i, j, o) = (f[k], f[(k + 1) % 3], k + 2);
            let c = 0.5 * cot_at(&p[o % 3], &p[k], &p[(k + 1) % 3]);
            *w.entry((i.min(j), i.max(j))).or_insert(0.0) += c;
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut keys: Vec<_> = w.into_iter().collect();
    keys.sort_by_key(|k| k.0);
    let mut diag = vec![0.0; n];
    for ((i, j), c) in keys {
        rows[i].push((j, -c));
        rows[j].push((i, -c));
        diag[i] += c;
        diag[j] += c;
    }
    for (i, d) in diag.into_iter().enumerate() {
        rows[i].push((i, d));
    }
    CsrMatrix::from_rows(n, rows)
}

/// Area-weighted vertex normals from face orientation (unnormalized faces summed).
pub fn vertex_normals(m: &Manifold) -> Vec<Vector3<f64>> {
    let mut nrm = vec![Vector3::zeros(); m.vertex_count()];
    for f in &m.faces {
        let [a, b, c] = f.map(|i| m.vertices[i]);
        let fn_ = (b - a).cross(&(c - a));
        for &i in f {
            nrm[i] += fn_;
        }
    }
    for v in &mut nrm {
        let l = v.norm();
        if l > 0.0 {
            *v /= l;
        }
    }
    nrm
}

/// Vertices lying on an edge used by exactly one face.
pub fn boundary_vertices(m: &Manifold) -> Vec<bool> {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for f in &m.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut on = vec![false; m.vertex_count()];
    for ((a, b), c) in count {
        if c == 1 {
            on[a] = true;
            on[b] = true;
        }
    }
    on
}

/// `V − E + F` counted over vertices referenced by faces.
pub fn euler_characteristic(m: &Manifold) -> i64 {
    let mut used = vec![false; m.vertex_count()];
    for f in &m.faces {
        for &i in f {
            used[i] = true;
        }
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    v - m.edges().len() as i64 + m.faces.len() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use approx::assert_relative_eq;

    #[test]
    fn areas_partition_total() {
        let m = shapes::icosphere(2, 1.0);
        let total = total_area(&m);
        assert_relative_eq!(lumped_mass(&m).iter().sum::<f64>(), total, epsilon = 1e-12);
        assert_relative_eq!(mixed_areas(&m).iter().sum::<f64>(), total, epsilon = 1e-10);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let m = shapes::torus(2.0, 0.7, 12, 8);
        let l = cotangent_laplacian(&m);
        assert!(l.is_symmetric());
        for s in l.matvec(&vec![1.0; m.vertex_count()]) {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn euler_characteristics() {
        assert_eq!(euler_characteristic(&shapes::icosphere(2, 1.0)), 2);
        assert_eq!(euler_characteristic(&shapes::torus(2.0, 0.5, 10, 6)), 0);
        assert_eq!(euler_characteristic(&shapes::grid(4, 4)), 1);
    }
}
