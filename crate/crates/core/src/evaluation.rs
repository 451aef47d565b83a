//! Accumulated-curvature curves, their greedy bound, and classification metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CurvatureField;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcCurve {
    /// `log Σ_{k≤κ} (|GC_k| + |MC_k|)` for κ = 1..=K.
    pub values: Vec<f64>,
    /// The cumulative sums before the logarithm.
    pub sums: Vec<f64>,
    pub method_name: String,
    pub shape_id: String,
}

impl AcCurve {
    fn from_terms(terms: impl IntoIterator<Item = f64>, method: &str, shape: &str) -> Self {
        let mut acc = 0.0;
        let sums: Vec<f64> = terms
            .into_iter()
            .map(|t| {
                acc += t;
                acc
            })
            .collect();
        AcCurve {
            values: sums.iter().map(|s| s.ln()).collect(),
            sums,
            method_name: method.to_string(),
            shape_id: shape.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with columns `kappa,ac_value,seconds`; `seconds` may be empty.
    pub fn to_csv(&self, seconds: Option<&[f64]>) -> String {
        let mut s = String::from("kappa,ac_value,seconds\n");
        for (i, v) in self.values.iter().enumerate() {
            let sec = seconds.and_then(|t| t.get(i)).map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", i + 1, v, sec);
        }
        s
    }
}

/// Per-vertex `|GC| + |MC|` after per-shape min-max normalization.
pub fn curvature_scores(c: &CurvatureField) -> Vec<f64> {
    let (g, h) = c.normalized_abs();
    g.iter().zip(&h).map(|(a, b)| a + b).collect()
}

/// Running log cumulative sum of normalized curvature over the selection order.
pub fn ac_curve(salient_ids: &[usize], curvature: &CurvatureField) -> Result<AcCurve> {
    ac_curve_from_scores(salient_ids, &curvature_scores(curvature), "selection", "")
}

pub fn ac_curve_from_scores(ids: &[usize], scores: &[f64], method: &str, shape: &str) -> Result<AcCurve> {
    if ids.is_empty() {
        return Err(Error::invalid("empty selection"));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= scores.len()) {
        return Err(Error::invalid(format!("vertex id {bad} out of range")));
    }
    Ok(AcCurve::from_terms(ids.iter().map(|&i| scores[i]), method, shape))
}

/// Greedy upper bound: vertices sorted by descending score.
pub fn max_ac_bound(curvature: &CurvatureField, k: usize) -> Result<AcCurve> {
    max_ac_bound_from_scores(&curvature_scores(curvature), k)
}

pub fn max_ac_bound_from_scores(scores: &[f64], k: usize) -> Result<AcCurve> {
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!("K = {k} must be in 1..={}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(AcCurve::from_terms(
        order[..k].iter().map(|&i| scores[i]),
        "max_gc_mc_bound",
        "",
    ))
}

/// Uniformly random selection of `k` distinct vertices.
pub fn random_selection(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, &[0x5e1ec7]));
    ids.truncate(k);
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    /// `log(mean of cumulative sums)`; the canonical aggregate.
    pub log_of_mean: Vec<f64>,
    /// `mean of log cumulative sums`, reported alongside.
    pub mean_of_logs: Vec<f64>,
    /// Mean seconds per selection index, when timings were supplied.
    pub mean_seconds: Vec<f64>,
}

pub fn aggregate_curves(curves: &[AcCurve], seconds: &[Vec<f64>]) -> Result<AggregateCurve> {
    let first = curves.first().ok_or_else(|| Error::invalid("no curves to aggregate"))?;
    let k = first.len();
    if let Some(c) = curves.iter().find(|c| c.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: c.len(),
        });
    }
    let n = curves.len() as f64;
    let log_of_mean = (0..k)
        .map(|i| (curves.iter().map(|c| c.sums[i]).sum::<f64>() / n).ln())
        .collect();
    let mean_of_logs = (0..k)
        .map(|i| curves.iter().map(|c| c.values[i]).sum::<f64>() / n)
        .collect();
    let mean_seconds = if seconds.is_empty() {
        Vec::new()
    } else {
        let len = seconds.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|i| seconds.iter().map(|s| s[i]).sum::<f64>() / seconds.len() as f64)
            .collect()
    };
    Ok(AggregateCurve {
        log_of_mean,
        mean_of_logs,
        mean_seconds,
    })
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p < classes && t < classes {
            m[t][p] += 1;
        }
    }
    m
}

/// Row-wise argmax, ties to the lowest class.
pub fn argmax_rows(probs: &[Vec<f64>]) -> Vec<usize> {
    probs
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_unit_term() {
        let c = ac_curve_from_scores(&[0], &[0.4 + 0.6], "m", "s").unwrap();
        assert_eq!(c.values, vec![0.0]);
    }

    #[test]
    fn zero_term_keeps_curve_flat() {
        let c = ac_curve_from_scores(&[0, 1], &[0.7, 0.0], "m", "s").unwrap();
        assert_eq!(c.values[0], c.values[1]);
    }

    #[test]
    fn empty_selection_rejected() {
        assert!(ac_curve_from_scores(&[], &[1.0], "m", "s").is_err());
    }

    #[test]
    fn bound_dominates_selection() {
        let scores = [0.3, 1.2, 0.0, 0.9, 0.5];
        let b = max_ac_bound_from_scores(&scores, 5).unwrap();
        let sel = ac_curve_from_scores(&[4, 0, 2, 3, 1], &scores, "m", "s").unwrap();
        for (x, y) in sel.values.iter().zip(&b.values) {
            assert!(x <= &(y + 1e-12 * y.abs()));
        }
    }

    #[test]
    fn aggregate_two_curves_by_hand() {
        let a = ac_curve_from_scores(&[0, 1], &[1.0, 1.0], "m", "a").unwrap();
        let b = ac_curve_from_scores(&[0, 1], &[3.0, 1.0], "m", "b").unwrap();
        let agg = aggregate_curves(&[a, b], &[]).unwrap();
        // Sums are (1, 2) and (3, 4): linear means 2 and 3.
        assert_relative_eq!(agg.log_of_mean[0], 2f64.ln());
        assert_relative_eq!(agg.log_of_mean[1], 3f64.ln());
        assert_relative_eq!(agg.mean_of_logs[1], (2f64.ln() + 4f64.ln()) / 2.0);
    }

    #[test]
    fn random_selection_is_distinct_and_seeded() {
        let a = random_selection(100, 20, 3);
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 20);
        assert_eq!(a, random_selection(100, 20, 3));
    }
}
