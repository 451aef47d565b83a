//! Per-vertex spectral and curvature descriptors, and fixed-length shape
//! feature rows built from salient points.

pub mod spectral;
mod wks;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use spectral::{laplace_beltrami_eigenpairs, laplace_beltrami_eigenpairs_with, EigenMethod, SpectralBasis};
pub use wks::{energy_weights, wks_features};

use crate::error::{Error, Result};
use crate::geometry::{self, euclidean_knn, POINT_CLOUD_NEIGHBORS};
use crate::manifold_io::{write_atomic, Manifold, ShapeRecord};
use crate::saliency::SaliencyResult;

/// Which per-vertex descriptor to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VertexFeatureKind {
    Wks {
        eigen_count: usize,
        energy_count: usize,
        scale_invariant: bool,
    },
    /// `|MC|`, `|GC|`, and the mean and variance of MC over the neighborhood.
    Curvature,
    /// WKS channels followed by the four curvature channels.
    WksCurvature {
        eigen_count: usize,
        energy_count: usize,
        scale_invariant: bool,
    },
}

impl Default for VertexFeatureKind {
    fn default() -> Self {
        VertexFeatureKind::Wks {
            eigen_count: 30,
            energy_count: 16,
            scale_invariant: true,
        }
    }
}

impl VertexFeatureKind {
    /// Channels per vertex (`l`).
    pub fn channels(&self, is_mesh: bool) -> usize {
        match self {
            _ if !is_mesh => 4,
            VertexFeatureKind::Wks { energy_count, .. } => *energy_count,
            VertexFeatureKind::Curvature => 4,
            VertexFeatureKind::WksCurvature { energy_count, .. } => energy_count + 4,
        }
    }
}

/// Curvature-statistics descriptor; works for meshes and point clouds.
pub fn curvature_features(m: &Manifold) -> Result<Vec<Vec<f64>>> {
    let c = geometry::curvature(m)?;
    let knn = euclidean_knn(m, POINT_CLOUD_NEIGHBORS + 1);
    Ok((0..m.vertex_count())
        .map(|i| {
            let hs: Vec<f64> = knn[i].iter().map(|&(j, _)| c.mean[j]).collect();
            let mean = hs.iter().sum::<f64>() / hs.len() as f64;
            let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / hs.len() as f64;
            vec![c.mean[i].abs(), c.gaussian[i].abs(), mean, var]
        })
        .collect())
}

/// Per-vertex features. Point clouds always fall back to curvature statistics.
pub fn vertex_features(m: &Manifold, kind: &VertexFeatureKind) -> Result<Vec<Vec<f64>>> {
    if !m.is_mesh() {
        return curvature_features(m);
    }
    match kind {
        VertexFeatureKind::Curvature => curvature_features(m),
        VertexFeatureKind::Wks {
            eigen_count,
            energy_count,
            scale_invariant,
        } => {
            let basis = laplace_beltrami_eigenpairs(m, (*eigen_count).min(m.vertex_count()))?;
            wks_features(&basis, *energy_count, *scale_invariant)
        }
        VertexFeatureKind::WksCurvature {
            eigen_count,
            energy_count,
            scale_invariant,
        } => {
            let basis = laplace_beltrami_eigenpairs(m, (*eigen_count).min(m.vertex_count()))?;
            let mut w = wks_features(&basis, *energy_count, *scale_invariant)?;
            for (row, c) in w.iter_mut().zip(curvature_features(m)?) {
                row.extend(c);
            }
            Ok(w)
        }
    }
}

/// `H × (κ·l)` design matrix: one row per shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub shape_ids: Vec<String>,
    pub labels: Vec<Option<i64>>,
    pub kappa: usize,
    pub channels: usize,
}

#[derive(Serialize, Deserialize)]
struct Layout {
    kappa: usize,
    channels: usize,
    shapes: usize,
    order: String,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.kappa * self.channels
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("shape_id,label");
        for j in 0..self.width() {
            let _ = write!(s, ",f_{j}");
        }
        s.push('\n');
        for ((row, id), label) in self.rows.iter().zip(&self.shape_ids).zip(&self.labels) {
            let _ = write!(s, "{id},{}", label.map(|l| l.to_string()).unwrap_or_default());
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn layout_json(&self) -> String {
        serde_json::to_string_pretty(&Layout {
            kappa: self.kappa,
            channels: self.channels,
            shapes: self.rows.len(),
            order: "salient point major, channel minor".into(),
        })
        .expect("layout serializes")
    }

    /// Write `<path>` (CSV) and `<path>.json` (layout sidecar).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        write_atomic(Path::new(&side), self.layout_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let side = Path::new(&side);
        let layout: Option<Layout> = std::fs::read_to_string(side)
            .ok()
            .map(|t| serde_json::from_str(&t))
            .transpose()?;
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty feature file".into()))?;
        let width = header.split(',').count().saturating_sub(2);
        let mut fm = FeatureMatrix {
            rows: Vec::new(),
            shape_ids: Vec::new(),
            labels: Vec::new(),
            kappa: layout.as_ref().map_or(width, |l| l.kappa),
            channels: layout.as_ref().map_or(1, |l| l.channels),
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split(',').collect();
            if toks.len() != width + 2 {
                return Err(perr(i + 1, format!("expected {} columns", width + 2)));
            }
            fm.shape_ids.push(toks[0].to_string());
            fm.labels.push(if toks[1].is_empty() {
                None
            } else {
                Some(toks[1].parse().map_err(|_| perr(i + 1, format!("bad label `{}`", toks[1])))?)
            });
            fm.rows.push(
                toks[2..]
                    .iter()
                    .map(|t| t.parse().map_err(|_| perr(i + 1, format!("bad value `{t}`"))))
                    .collect::<Result<_>>()?,
            );
        }
        if fm.width() != width {
            return Err(perr(1, "layout sidecar disagrees with column count".into()));
        }
        Ok(fm)
    }
}

/// Concatenate each shape's features at its salient points, in selection order.
pub fn assemble_shape_features(
    shapes: &[ShapeRecord],
    saliency: &[SaliencyResult],
    per_vertex_features: &[Vec<Vec<f64>>],
) -> Result<FeatureMatrix> {
    if shapes.len() != saliency.len() || shapes.len() != per_vertex_features.len() {
        return Err(Error::DimensionMismatch {
            expected: shapes.len(),
            found: saliency.len().min(per_vertex_features.len()),
        });
    }
    let first = saliency.first().ok_or_else(|| Error::invalid("no shapes"))?;
    let kappa = first.salient_ids.len();
    let channels = per_vertex_features[0].first().map_or(0, Vec::len);
    let rows = shapes
        .par_iter()
        .zip(saliency)
        .zip(per_vertex_features)
        .map(|((shape, sal), feats)| {
            if sal.salient_ids.len() != kappa {
                return Err(Error::invalid(format!(
                    "shape `{}` has {} salient points, expected κ = {kappa}",
                    shape.id,
                    sal.salient_ids.len()
                )));
            }
            let mut row = Vec::with_capacity(kappa * channels);
            for &v in &sal.salient_ids {
                let f = feats.get(v).ok_or_else(|| {
                    Error::invalid(format!("shape `{}`: salient vertex {v} has no features", shape.id))
                })?;
                if f.len() != channels {
                    return Err(Error::invalid(format!(
                        "shape `{}` has {} feature channels, expected l = {channels}",
                        shape.id,
                        f.len()
                    )));
                }
                if f.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("features of shape `{}`", shape.id)));
                }
                row.extend_from_slice(f);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        rows,
        shape_ids: shapes.iter().map(|s| s.id.clone()).collect(),
        labels: shapes.iter().map(|s| s.class_label).collect(),
        kappa,
        channels,
    })
}
