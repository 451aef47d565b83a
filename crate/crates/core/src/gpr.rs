//! Exact GP conditioning with a Cholesky factor grown one row at a time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{self, MAX_JITTER_DOUBLINGS};

/// Fraction of clamped variances above which a warning is logged.
const CLAMP_WARN_FRACTION: f64 = 0.01;

/// Posterior state over a growing training set.
///
/// The factor is stored packed by rows: row `i` holds `L[i, 0..=i]`.
#[derive(Debug, Clone)]
pub struct GpPosteriorState {
    pub training_indices: Vec<usize>,
    packed: Vec<f64>,
    /// Raw training covariance without jitter, kept for refactorization.
    k_train: Vec<Vec<f64>>,
    pub jitter: f64,
    pub alpha_weights: Vec<f64>,
    pub spec: Option<KernelSpec>,
}

/// Mean, variance and the number of variances clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub clamped: usize,
}

impl GpPosteriorState {
    /// Empty state that will use absolute `jitter` on the training diagonal.
    pub fn new(jitter: f64, spec: Option<KernelSpec>) -> Self {
        GpPosteriorState {
            training_indices: Vec::new(),
            packed: Vec::new(),
            k_train: Vec::new(),
            jitter,
            alpha_weights: Vec::new(),
            spec,
        }
    }

    /// Factor a full training covariance `k` (without jitter) at once.
    pub fn from_matrix(k: &DMatrix<f64>, indices: Vec<usize>, jitter: f64) -> Result<Self> {
        let n = k.nrows();
        if indices.len() != n || k.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: indices.len(),
            });
        }
        let (l, j) = linalg::cholesky_escalating(k, jitter)?;
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for c in 0..=i {
                packed.push(l[(i, c)]);
            }
        }
        Ok(GpPosteriorState {
            training_indices: indices,
            packed,
            k_train: (0..n).map(|i| (0..=i).map(|c| k[(i, c)]).collect()).collect(),
            jitter: j,
            alpha_weights: Vec::new(),
            spec: None,
        })
    }

    pub fn len(&self) -> usize {
        self.training_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.training_indices.is_empty()
    }

    /// Row `i` of the lower factor (length `i + 1`).
    pub fn factor_row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.packed[start..start + i + 1]
    }

    pub fn chol_factor(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            for (c, &v) in self.factor_row(i).iter().enumerate() {
                l[(i, c)] = v;
            }
        }
        l
    }

    /// Solve `L x = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        for i in 0..x.len() {
            let row = self.factor_row(i);
            let mut s = x[i];
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s / row[i];
        }
        x
    }

    fn backward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.factor_row(k)[i] * x[k];
            }
            x[i] = s / self.factor_row(i)[i];
        }
        x
    }

    /// Store `K⁻¹ Y` for mean prediction.
    pub fn set_observations(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: y.len(),
            });
        }
        self.alpha_weights = self.backward_solve(&self.forward_solve(y));
        Ok(())
    }

    /// Extend the factor by one training point in O(n²).
    ///
    /// If the Schur complement is not positive, the whole factor is rebuilt
    /// with doubled jitter (shared escalation policy).
    pub fn append_training_point(&mut self, index: usize, new_row: &[f64], new_diag: f64) -> Result<()> {
        let n = self.len();
        if new_row.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: new_row.len(),
            });
        }
        if !new_diag.is_finite() || new_row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("appended covariance row".into()));
        }
        let c = self.forward_solve(new_row);
        let schur = new_diag + self.jitter - c.iter().map(|v| v * v).sum::<f64>();
        let mut row = new_row.to_vec();
        row.push(new_diag);
        self.k_train.push(row);
        self.training_indices.push(index);
        self.alpha_weights.clear();
        if schur > 0.0 && schur.is_finite() {
            self.packed.extend_from_slice(&c);
            self.packed.push(schur.sqrt());
            return Ok(());
        }
        self.refactor_escalating()
    }

    fn refactor_escalating(&mut self) -> Result<()> {
        let n = self.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for (c, &v) in self.k_train[i].iter().enumerate() {
                k[(i, c)] = v;
                k[(c, i)] = v;
            }
        }
        let mut jitter = self.jitter;
        for _ in 0..MAX_JITTER_DOUBLINGS {
            jitter *= 2.0;
            let mut b = k.clone();
            for i in 0..n {
                b[(i, i)] += jitter;
            }
            if let Some(l) = linalg::cholesky(&b) {
                log::debug!("training factor rebuilt with jitter {jitter:e}");
                self.jitter = jitter;
                self.packed.clear();
                for i in 0..n {
                    for c in 0..=i {
                        self.packed.push(l[(i, c)]);
                    }
                }
                return Ok(());
            }
        }
        // Leave the state as it was before the failed append.
        self.k_train.pop();
        self.training_indices.pop();
        Err(Error::NotPositiveDefinite { jitter })
    }

    /// Posterior mean and variance at test points.
    ///
    /// `test_rows` is `m × n` with covariances to the training set, `prior_var`
    /// the test diagonal. Without observations the mean is 0.
    pub fn posterior(
        &self,
        test_rows: &DMatrix<f64>,
        prior_var: &[f64],
        observations: Option<&[f64]>,
    ) -> Result<Posterior> {
        let n = self.len();
        let m = prior_var.len();
        if test_rows.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: test_rows.ncols(),
            });
        }
        if test_rows.nrows() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: test_rows.nrows(),
            });
        }
        if test_rows.iter().chain(prior_var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("test covariances".into()));
        }
        let alpha = match observations {
            Some(y) => {
                if y.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: y.len() });
                }
                Some(self.backward_solve(&self.forward_solve(y)))
            }
            None if !self.alpha_weights.is_empty() => Some(self.alpha_weights.clone()),
            None => None,
        };
        let mut mean = vec![0.0; m];
        let mut variance = vec![0.0; m];
        let mut clamped = 0;
        for i in 0..m {
            let k: Vec<f64> = test_rows.row(i).iter().copied().collect();
            if let Some(a) = &alpha {
                mean[i] = k.iter().zip(a).map(|(x, y)| x * y).sum();
            }
            let v = self.forward_solve(&k);
            let var = prior_var[i] - v.iter().map(|x| x * x).sum::<f64>();
            if var < 0.0 {
                clamped += 1;
            }
            variance[i] = var.max(0.0);
        }
        if m > 0 && clamped as f64 > CLAMP_WARN_FRACTION * m as f64 {
            log::warn!("{clamped} of {m} posterior variances clamped at zero");
        }
        Ok(Posterior {
            mean,
            variance,
            clamped,
        })
    }

    /// Convenience: the factor as a dense matrix solve of `K⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.backward_solve(&self.forward_solve(b)))
    }
}
