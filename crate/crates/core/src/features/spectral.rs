//! Laplace–Beltrami eigenpairs of the cotangent stiffness with lumped mass.
//!
//! The generalized problem `L φ = λ M φ` is symmetrized as
//! `A = M^{-1/2} L M^{-1/2}`. Small meshes use a dense symmetric eigensolver.
//! Larger ones use a block Krylov subspace of the shift-inverted operator
//! `(A − σI)^{-1}` (σ < 0, sparse envelope Cholesky) followed by
//! Rayleigh–Ritz on `A`; blocks wider than the largest eigenvalue
//! multiplicity keep symmetric shapes' repeated eigenvalues intact.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mesh::{cotangent_laplacian, lumped_mass};
use crate::linalg::{CsrMatrix, EnvelopeCholesky};
use crate::manifold_io::Manifold;
use crate::rng;

/// Vertex count below which the dense solver is used.
pub const DENSE_LIMIT: usize = 500;
const BLOCK: usize = 8;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    /// `n × count`, columns orthonormal under the lumped mass.
    pub eigenfunctions: DMatrix<f64>,
    pub mass_weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Auto,
    Dense,
    ShiftInvert,
}

pub fn laplace_beltrami_eigenpairs(m: &Manifold, count: usize) -> Result<SpectralBasis> {
    laplace_beltrami_eigenpairs_with(m, count, EigenMethod::Auto)
}

pub fn laplace_beltrami_eigenpairs_with(
    m: &Manifold,
    count: usize,
    method: EigenMethod,
) -> Result<SpectralBasis> {
    if !m.is_mesh() {
        return Err(Error::invalid("Laplace–Beltrami eigenpairs need a triangle mesh"));
    }
    let n = m.vertex_count();
    if count == 0 || count > n {
        return Err(Error::invalid(format!("eigenpair count {count} not in 1..={n}")));
    }
    let stiff = cotangent_laplacian(m);
    let mass = lumped_mass(m);
    if let Some(i) = mass.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::invalid(format!("vertex {i} has zero lumped area")));
    }
    let inv_sqrt: Vec<f64> = mass.iter().map(|a| 1.0 / a.sqrt()).collect();
    let a = scale_symmetric(&stiff, &inv_sqrt);
    let use_dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::ShiftInvert => false,
        EigenMethod::Auto => n < DENSE_LIMIT,
    };
    let (vals, vecs) = if use_dense {
        dense_smallest(&a, count)
    } else {
        shift_invert_smallest(&a, count)?
    };
    let mut phi = vecs;
    for mut col in phi.column_iter_mut() {
        for (r, v) in col.iter_mut().enumerate() {
            *v *= inv_sqrt[r];
        }
        let scale = col.amax();
        if let Some(first) = col.iter().position(|v| v.abs() > 1e-10 * scale) {
            if col[first] < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok(SpectralBasis {
        eigenvalues: vals,
        eigenfunctions: phi,
        mass_weights: mass,
    })
}

/// `D · S · D` for diagonal `D`.
fn scale_symmetric(s: &CsrMatrix, d: &[f64]) -> CsrMatrix {
    let mut out = s.clone();
    for i in 0..out.nrows {
        for p in out.indptr[i]..out.indptr[i + 1] {
            out.values[p] *= d[i] * d[out.indices[p]];
        }
    }
    out
}

fn sorted_pairs(vals: &[f64], vecs: &DMatrix<f64>, count: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
    let chosen = &order[..count];
    let v = chosen.iter().map(|&i| vals[i]).collect();
    let cols: Vec<DVector<f64>> = chosen.iter().map(|&i| vecs.column(i).into_owned()).collect();
    (v, DMatrix::from_columns(&cols))
}

fn dense_smallest(a: &CsrMatrix, count: usize) -> (Vec<f64>, DMatrix<f64>) {
    let d = a.to_dense();
    let eig = SymmetricEigen::new(d);
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    sorted_pairs(&vals, &eig.eigenvectors, count)
}

/// Orthonormalize `x` against `basis` (two passes) and then internally.
/// Columns that collapse are dropped.
fn orthonormalize(basis: &[DVector<f64>], x: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for mut v in x {
        let norm0 = v.norm();
        for _ in 0..2 {
            for q in basis.iter().chain(out.iter()) {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-10 * norm0 && nv > 0.0 {
            out.push(v / nv);
        }
    }
    out
}

fn shift_invert_smallest(a: &CsrMatrix, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows;
    let diag = a.diagonal();
    let mean_diag = diag.iter().sum::<f64>() / n as f64;
    let norm_est = 2.0 * diag.iter().copied().fold(0.0, f64::max);
    let sigma = -1e-2 * mean_diag;
    let mut shifted = a.clone();
    for i in 0..n {
        for p in shifted.indptr[i]..shifted.indptr[i + 1] {
            if shifted.indices[p] == i {
                shifted.values[p] -= sigma;
            }
        }
    }
    let chol = EnvelopeCholesky::factor(&shifted)
        .ok_or_else(|| Error::EigenNonConvergence("shifted operator is not positive definite".into()))?;

    let mut r = rng::stream(0x1b5, &[n as u64]);
    let start: Vec<DVector<f64>> = (0..BLOCK)
        .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut r)))
        .collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut a_basis: Vec<DVector<f64>> = Vec::new();
    let mut block = orthonormalize(&basis, start);
    let max_dim = n.min(count * 6 + 10 * BLOCK);

    loop {
        if block.is_empty() {
            return Err(Error::EigenNonConvergence("Krylov space collapsed".into()));
        }
        for q in &block {
            a_basis.push(DVector::from_vec(a.matvec(q.as_slice())));
        }
        basis.extend(block.iter().cloned());
        let dim = basis.len();
        if dim >= count + BLOCK || dim == n {
            let q = DMatrix::from_columns(&basis);
            let aq = DMatrix::from_columns(&a_basis);
            let mut h = q.transpose() * &aq;
            h = (&h + h.transpose()) * 0.5;
            let eig = SymmetricEigen::new(h);
            let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let (theta, s) = sorted_pairs(&vals, &eig.eigenvectors, count.min(dim));
            let y = &q * &s;
            let ay = &aq * &s;
            let worst = (0..theta.len())
                .map(|i| (ay.column(i) - y.column(i) * theta[i]).norm())
                .fold(0.0, f64::max);
            if theta.len() == count && worst <= RESIDUAL_TOL * norm_est {
                return Ok((theta, y));
            }
            if dim >= max_dim || dim == n {
                return Err(Error::EigenNonConvergence(format!(
                    "residual {worst:e} after a {dim}-dimensional subspace"
                )));
            }
        }
        let next: Vec<DVector<f64>> = block
            .iter()
            .map(|q| DVector::from_vec(chol.solve(q.as_slice())))
            .collect();
        block = orthonormalize(&basis, next);
        if basis.len() + block.len() > max_dim {
            block.truncate(max_dim.saturating_sub(basis.len()).max(1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn closed_mesh_null_space() {
        let m = shapes::icosphere(2, 1.0);
        let b = laplace_beltrami_eigenpairs(&m, 6).unwrap();
        assert!(b.eigenvalues[0].abs() <= 1e-8);
        let c = b.eigenfunctions.column(0);
        let (lo, hi) = (c.min(), c.max());
        assert!(hi - lo <= 1e-6 * hi.abs());
        assert!(lo > 0.0);
    }

    #[test]
    fn point_cloud_rejected() {
        let m = Manifold::point_cloud(shapes::icosphere(1, 1.0).vertices).unwrap();
        assert!(laplace_beltrami_eigenpairs(&m, 3).is_err());
    }
}
