//! Greedy salient-point selection by maximum posterior variance under the MMK prior.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, GeodesicGraph, GraphMethod};
use crate::gpr::GpPosteriorState;
use crate::kernels::{self, KernelInput, KernelMatrix, KernelSpec, KernelStorage};
use crate::manifold_io::{min_max_normalize, Manifold};

/// Settings recorded alongside a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRecord {
    pub k_neighbors: usize,
    pub n_fre: usize,
    pub kappa: usize,
    /// Absolute jitter on the MMK training diagonal.
    pub jitter: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResult {
    pub salient_ids: Vec<usize>,
    /// `score_maps[j]` is the variance map used to pick `salient_ids[j]`.
    pub score_maps: Option<Vec<Vec<f64>>>,
    pub per_iter_seconds: Vec<f64>,
    pub config: SaliencyRecord,
}

/// Full pipeline configuration: normalization, graph, kernel and κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyConfig {
    pub k: usize,
    pub method: GraphMethod,
    pub kernel: KernelSpec,
    pub kappa: usize,
    #[serde(default)]
    pub keep_maps: bool,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig {
            k: 200,
            method: GraphMethod::GraphDijkstra,
            kernel: KernelSpec::gac_default(5, 1.0),
            kappa: 30,
            keep_maps: false,
            normalize: true,
        }
    }
}

impl SaliencyConfig {
    pub fn run(&self, manifold: &Manifold) -> Result<SaliencyResult> {
        let m = if self.normalize {
            geometry::normalize_coordinates(manifold)?
        } else {
            manifold.clone()
        };
        let graph = geometry::build_geodesic_graph(&m, self.k, self.method)?;
        select_salient_points(&m, &graph, &self.kernel, self.kappa, self.keep_maps)
    }
}

/// Assemble the sparse kernel on `graph`, square it into the MMK and run the
/// greedy selection.
pub fn select_salient_points(
    manifold: &Manifold,
    graph: &GeodesicGraph,
    spec: &KernelSpec,
    kappa: usize,
    keep_maps: bool,
) -> Result<SaliencyResult> {
    if graph.source_count != manifold.vertex_count() {
        return Err(Error::DimensionMismatch {
            expected: manifold.vertex_count(),
            found: graph.source_count,
        });
    }
    let k = kernels::assemble_matrix(KernelInput::Graph(graph), spec)?;
    let mmk = kernels::build_mmk(&k)?;
    let mut res = select_from_mmk(&mmk, kappa, spec.jitter, keep_maps)?;
    res.config.k_neighbors = graph.k;
    res.config.n_fre = spec.frequencies.len();
    Ok(res)
}

fn mmk_row(mmk: &KernelMatrix, s: usize, n: usize) -> Vec<f64> {
    match &mmk.storage {
        KernelStorage::Dense(d) => d.row(s).iter().copied().collect(),
        KernelStorage::Sparse(sp) => {
            let mut row = vec![0.0; n];
            let (cols, vals) = sp.row(s);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
            row
        }
    }
}

/// Index of the largest finite score; ties go to the lowest index.
pub fn argmax_lowest(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            continue;
        }
        match best {
            Some(b) if v[b] >= x => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Greedy selection on a jitter-free MMK.
///
/// The variance map is updated in place after each pick using the new column
/// of the (implicit) pivoted Cholesky factor, so one iteration costs O(n·j).
pub fn select_from_mmk(
    mmk: &KernelMatrix,
    kappa: usize,
    rel_jitter: f64,
    keep_maps: bool,
) -> Result<SaliencyResult> {
    let n = mmk.size();
    if kappa == 0 {
        return Err(Error::invalid("kappa must be at least 1"));
    }
    if kappa > n {
        return Err(Error::invalid(format!("kappa = {kappa} exceeds vertex count {n}")));
    }
    let diag = mmk.diagonal();
    let jitter = rel_jitter * diag.iter().sum::<f64>() / n as f64;
    let mut state = GpPosteriorState::new(jitter, None);
    let mut var = diag.clone();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(kappa);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(kappa);
    let mut maps = keep_maps.then(Vec::new);
    let mut ids = Vec::with_capacity(kappa);
    let mut seconds = Vec::with_capacity(kappa);
    let mut chosen = vec![false; n];

    for _ in 0..kappa {
        let t0 = Instant::now();
        let Some(s) = argmax_lowest(&var) else { break };
        if chosen[s] || !(var[s] > 0.0) {
            log::warn!("saliency stopped early after {} picks: degenerate scores", ids.len());
            break;
        }
        if let Some(m) = maps.as_mut() {
            m.push(var.clone());
        }
        let row = mmk_row(mmk, s, n);
        let k_sel: Vec<f64> = ids.iter().map(|&i: &usize| row[i]).collect();
        let jitter_before = state.jitter;
        state.append_training_point(s, &k_sel, diag[s])?;
        ids.push(s);
        chosen[s] = true;
        rows.push(row);

        if state.jitter != jitter_before {
            // The whole factor changed: rebuild every column.
            cols.clear();
            for j in 0..ids.len() {
                let lrow = state.factor_row(j).to_vec();
                let c = new_column(&rows[j], &cols, &lrow);
                cols.push(c);
            }
            var = diag
                .par_iter()
                .enumerate()
                .map(|(i, d)| d - cols.iter().map(|c| c[i] * c[i]).sum::<f64>())
                .collect();
        } else {
            let j = ids.len() - 1;
            let lrow = state.factor_row(j).to_vec();
            let c = new_column(&rows[j], &cols, &lrow);
            var.par_iter_mut().zip(&c).for_each(|(v, ci)| *v -= ci * ci);
            cols.push(c);
        }
        seconds.push(t0.elapsed().as_secs_f64());
    }

    Ok(SaliencyResult {
        salient_ids: ids,
        score_maps: maps,
        per_iter_seconds: seconds,
        config: SaliencyRecord {
            k_neighbors: 0,
            n_fre: 0,
            kappa,
            jitter,
            seed: None,
        },
    })
}

/// `c[i] = (row[i] − Σ_t l[t]·cols[t][i]) / l[j]` for all vertices.
fn new_column(row: &[f64], cols: &[Vec<f64>], lrow: &[f64]) -> Vec<f64> {
    let j = cols.len();
    let d = lrow[j];
    (0..row.len())
        .into_par_iter()
        .map(|i| {
            let mut s = row[i];
            for t in 0..j {
                s -= lrow[t] * cols[t][i];
            }
            s / d
        })
        .collect()
}

/// Min-max normalized variance map of iteration `iteration`.
pub fn saliency_map(result: &SaliencyResult, iteration: usize) -> Result<Vec<f64>> {
    let maps = result
        .score_maps
        .as_ref()
        .ok_or_else(|| Error::invalid("score maps were not retained (keep_maps = false)"))?;
    let m = maps.get(iteration).ok_or_else(|| {
        Error::invalid(format!("iteration {iteration} out of range (0..{})", maps.len()))
    })?;
    Ok(min_max_normalize(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dense(m: DMatrix<f64>) -> KernelMatrix {
        KernelMatrix {
            storage: KernelStorage::Dense(m),
            jitter_applied: 0.0,
        }
    }

    #[test]
    fn first_pick_is_diag_argmax() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 3.0, 0.3, 0.1, 0.3, 2.0]);
        let r = select_from_mmk(&dense(m), 1, 1e-6, true).unwrap();
        assert_eq!(r.salient_ids, vec![1]);
        assert_eq!(saliency_map(&r, 0).unwrap(), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn ties_break_low() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax_lowest(&[f64::NAN, 0.5]), Some(1));
    }

    #[test]
    fn kappa_bounds() {
        let m = DMatrix::identity(2, 2);
        assert!(select_from_mmk(&dense(m.clone()), 3, 1e-6, false).is_err());
        assert!(select_from_mmk(&dense(m), 0, 1e-6, false).is_err());
    }

    #[test]
    fn maps_not_kept() {
        let r = select_from_mmk(&dense(DMatrix::identity(2, 2)), 1, 1e-6, false).unwrap();
        assert!(saliency_map(&r, 0).is_err());
    }
}
