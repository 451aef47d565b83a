//! Coordinate normalization, neighbor graphs and discrete differential geometry.

mod curvature;
mod graph;
pub mod mesh;

pub use curvature::{
    angle_deficits, curvature, gaussian_curvature, mean_curvature, CurvatureField,
    POINT_CLOUD_NEIGHBORS,
};
pub use graph::{build_geodesic_graph, euclidean_knn, GeodesicGraph, GraphMethod};

use crate::error::{Error, Result};
use crate::manifold_io::Manifold;

/// Translate the centroid to the origin and scale so the mean vertex norm is 1.
pub fn normalize_coordinates(m: &Manifold) -> Result<Manifold> {
    if m.vertices.is_empty() {
        return Err(Error::EmptyVertexSet);
    }
    let n = m.vertices.len() as f64;
    let centroid = m.vertices.iter().map(|p| p.coords).sum::<nalgebra::Vector3<f64>>() / n;
    let mean_norm = m.vertices.iter().map(|p| (p.coords - centroid).norm()).sum::<f64>() / n;
    if !(mean_norm > 0.0) || !mean_norm.is_finite() {
        return Err(Error::DegenerateSpread);
    }
    let mut out = m.clone();
    for p in &mut out.vertices {
        p.coords = (p.coords - centroid) / mean_norm;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn single_vertex_has_no_spread() {
        let m = Manifold::point_cloud(vec![Point3::new(5.0, 5.0, 5.0)]).unwrap();
        assert!(matches!(normalize_coordinates(&m), Err(Error::DegenerateSpread)));
    }

    #[test]
    fn symmetric_pair_unchanged() {
        let m = Manifold::point_cloud(vec![Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0)])
            .unwrap();
        assert_eq!(normalize_coordinates(&m).unwrap().vertices, m.vertices);
    }
}
