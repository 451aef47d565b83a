//! Stationary covariance functions, kernel-matrix assembly and the MMK square.
//!
//! All isotropic kernels take the first-power lag `r = ‖x − x′‖`.

pub mod oracle;

use std::f64::consts::PI;

use nalgebra::{DMatrix, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeodesicGraph;
use crate::linalg::{self, CsrMatrix, DEFAULT_REL_JITTER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gac,
    ArdGac,
    Rbf,
    Matern32,
    SpectralMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Hyperparameters of one kernel.
///
/// `jitter` is relative: assembled matrices receive `jitter · mean(diag)` on
/// the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default)]
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub phases: Vec<f64>,
    #[serde(default)]
    pub ard_lengthscales: Vec<f64>,
    #[serde(default = "one")]
    pub variance: f64,
    /// Length-scale for `rbf` and `matern32`.
    #[serde(default = "one")]
    pub lengthscale: f64,
    #[serde(default)]
    pub mixture: Vec<MixtureComponent>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn one() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    DEFAULT_REL_JITTER
}

/// `λ_n = scale·√(0.2πn)` for `n = 1..=count`.
pub fn default_frequencies(count: usize, scale: f64) -> Vec<f64> {
    (1..=count).map(|n| scale * (0.2 * PI * n as f64).sqrt()).collect()
}

/// Equally spaced phases on `[0, π/2]`; a single phase is 0.
pub fn default_phases(count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![0.0; count];
    }
    (0..count)
        .map(|n| n as f64 / (count - 1) as f64 * PI / 2.0)
        .collect()
}

impl KernelSpec {
    fn base(kind: KernelKind) -> Self {
        KernelSpec {
            kind,
            frequencies: Vec::new(),
            phases: Vec::new(),
            ard_lengthscales: Vec::new(),
            variance: 1.0,
            lengthscale: 1.0,
            mixture: Vec::new(),
            jitter: DEFAULT_REL_JITTER,
        }
    }

    pub fn gac(frequencies: Vec<f64>, phases: Vec<f64>, variance: f64) -> Self {
        KernelSpec {
            frequencies,
            phases,
            variance,
            ..Self::base(KernelKind::Gac)
        }
    }

    /// GAC with the default frequency grid multiplied by `scale` and equally spaced phases.
    pub fn gac_default(n_fre: usize, scale: f64) -> Self {
        Self::gac(default_frequencies(n_fre, scale), default_phases(n_fre), 1.0)
    }

    pub fn ard_gac(frequencies: Vec<f64>, phases: Vec<f64>, lengthscales: Vec<f64>, variance: f64) -> Self {
        KernelSpec {
            frequencies,
            phases,
            ard_lengthscales: lengthscales,
            variance,
            ..Self::base(KernelKind::ArdGac)
        }
    }

    pub fn rbf(variance: f64, lengthscale: f64) -> Self {
        KernelSpec {
            variance,
            lengthscale,
            ..Self::base(KernelKind::Rbf)
        }
    }

    pub fn matern32(variance: f64, lengthscale: f64) -> Self {
        KernelSpec {
            variance,
            lengthscale,
            ..Self::base(KernelKind::Matern32)
        }
    }

    pub fn spectral_mixture(variance: f64, mixture: Vec<MixtureComponent>) -> Self {
        KernelSpec {
            variance,
            mixture,
            ..Self::base(KernelKind::SpectralMixture)
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.variance) {
            bad.push("variance must be positive".to_string());
        }
        if !pos(self.jitter) {
            bad.push("jitter must be positive".to_string());
        }
        match self.kind {
            KernelKind::Gac | KernelKind::ArdGac => {
                if self.frequencies.is_empty() {
                    bad.push("at least one frequency required".into());
                }
                if self.frequencies.len() != self.phases.len() {
                    bad.push(format!(
                        "{} frequencies but {} phases",
                        self.frequencies.len(),
                        self.phases.len()
                    ));
                }
                if !self.frequencies.iter().all(|&l| pos(l)) {
                    bad.push("frequencies must be positive".into());
                }
                if !self.phases.iter().all(|p| p.is_finite()) {
                    bad.push("phases must be finite".into());
                }
                if self.kind == KernelKind::ArdGac
                    && (self.ard_lengthscales.is_empty() || !self.ard_lengthscales.iter().all(|&a| pos(a)))
                {
                    bad.push("ard_lengthscales must be non-empty and positive".into());
                }
            }
            KernelKind::Rbf | KernelKind::Matern32 => {
                if !pos(self.lengthscale) {
                    bad.push("lengthscale must be positive".into());
                }
            }
            KernelKind::SpectralMixture => {
                if self.mixture.is_empty() {
                    bad.push("spectral mixture needs at least one component".into());
                }
                if !self
                    .mixture
                    .iter()
                    .all(|c| c.weight >= 0.0 && c.variance > 0.0 && c.mean.is_finite())
                {
                    bad.push("mixture weights must be ≥ 0 and variances positive".into());
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(bad.join("; ")))
        }
    }

    /// Kernel value at lag `r`. For `ard_gac`, `r` is taken as the already
    /// scaled lag norm.
    pub fn value(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Gac | KernelKind::ArdGac => gac_sum(r, self),
            _ => baseline_value(r, self),
        }
    }

    /// Value at zero lag.
    pub fn diag_value(&self) -> f64 {
        self.value(0.0)
    }
}

fn gac_sum(r: f64, spec: &KernelSpec) -> f64 {
    let s: f64 = spec
        .frequencies
        .iter()
        .zip(&spec.phases)
        .map(|(&l, &p)| (-l * r).exp() * (l * r + p).cos())
        .sum();
    spec.variance / (4.0 * PI) * s
}

/// `σ²/(4π) Σ_n e^{−λ_n r} cos(λ_n r + φ_n)`.
pub fn gac_value(r: f64, spec: &KernelSpec) -> f64 {
    debug_assert!(r >= 0.0);
    gac_sum(r, spec)
}

/// Per-dimension lags divided by `α`, combined by euclidean norm, then the GAC sum.
pub fn ard_gac_value(lags: &[f64], spec: &KernelSpec) -> Result<f64> {
    if lags.len() != spec.ard_lengthscales.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.ard_lengthscales.len(),
            found: lags.len(),
        });
    }
    let rho = lags
        .iter()
        .zip(&spec.ard_lengthscales)
        .map(|(l, a)| (l / a).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(gac_sum(rho, spec))
}

/// RBF, Matérn-3/2 and spectral-mixture closed forms.
pub fn baseline_value(r: f64, spec: &KernelSpec) -> f64 {
    match spec.kind {
        KernelKind::Rbf => spec.variance * (-r * r / (2.0 * spec.lengthscale * spec.lengthscale)).exp(),
        KernelKind::Matern32 => {
            let a = 3f64.sqrt() * r / spec.lengthscale;
            spec.variance * (1.0 + a) * (-a).exp()
        }
        KernelKind::SpectralMixture => {
            spec.variance
                * spec
                    .mixture
                    .iter()
                    .map(|c| {
                        c.weight
                            * (-2.0 * PI * PI * r * r * c.variance).exp()
                            * (2.0 * PI * c.mean * r).cos()
                    })
                    .sum::<f64>()
        }
        KernelKind::Gac | KernelKind::ArdGac => gac_sum(r, spec),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelStorage {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

/// A symmetric covariance matrix with the absolute jitter already on its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub storage: KernelStorage,
    pub jitter_applied: f64,
}

/// Inputs for [`assemble_matrix`].
pub enum KernelInput<'a> {
    Points(&'a [Point3<f64>]),
    Graph(&'a GeodesicGraph),
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        match &self.storage {
            KernelStorage::Dense(d) => d.nrows(),
            KernelStorage::Sparse(s) => s.nrows,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            KernelStorage::Dense(d) => d[(i, j)],
            KernelStorage::Sparse(s) => s.get(i, j),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match &self.storage {
            KernelStorage::Dense(d) => d.diagonal().iter().copied().collect(),
            KernelStorage::Sparse(s) => s.diagonal(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            KernelStorage::Dense(d) => d.clone(),
            KernelStorage::Sparse(s) => s.to_dense(),
        }
    }

    pub fn to_sparse(&self) -> CsrMatrix {
        match &self.storage {
            KernelStorage::Dense(d) => CsrMatrix::from_dense(d),
            KernelStorage::Sparse(s) => s.clone(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match &self.storage {
            KernelStorage::Dense(d) => d == &d.transpose(),
            KernelStorage::Sparse(s) => s.is_symmetric(),
        }
    }

    /// Dense Cholesky factor; the jitter is doubled on failure up to the shared
    /// limit. Returns the factor and the total jitter on the diagonal.
    pub fn cholesky(&self) -> Result<(DMatrix<f64>, f64)> {
        let mut a = self.to_dense();
        for i in 0..a.nrows() {
            a[(i, i)] -= self.jitter_applied;
        }
        linalg::cholesky_escalating(&a, self.jitter_applied.max(f64::MIN_POSITIVE))
    }
}

fn add_jitter_dense(mut d: DMatrix<f64>, rel: f64) -> KernelMatrix {
    let j = rel * linalg::mean_diagonal(&d);
    for i in 0..d.nrows() {
        d[(i, i)] += j;
    }
    KernelMatrix {
        storage: KernelStorage::Dense(d),
        jitter_applied: j,
    }
}

/// Dense matrix from a symmetric lag function `lag(i, j)` with `i ≤ j`.
pub fn assemble_from_lags<F>(n: usize, spec: &KernelSpec, lag: F) -> Result<KernelMatrix>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| spec.value(lag(i, j))).collect())
        .collect();
    let mut d = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("kernel entry ({i}, {})", i + off)));
            }
            d[(i, i + off)] = v;
            d[(i + off, i)] = v;
        }
    }
    Ok(add_jitter_dense(d, spec.jitter))
}

/// Assemble a kernel matrix. Points give a dense matrix on euclidean lags;
/// a geodesic graph gives a sparse matrix whose entries outside the
/// (symmetrized) neighborhoods are exactly zero.
pub fn assemble_matrix(input: KernelInput<'_>, spec: &KernelSpec) -> Result<KernelMatrix> {
    spec.validate()?;
    match input {
        KernelInput::Points(pts) => {
            if spec.kind == KernelKind::ArdGac {
                if spec.ard_lengthscales.len() != 3 {
                    return Err(Error::DimensionMismatch {
                        expected: 3,
                        found: spec.ard_lengthscales.len(),
                    });
                }
                let rows: Vec<Vec<f64>> = (0..pts.len())
                    .into_par_iter()
                    .map(|i| {
                        (i..pts.len())
                            .map(|j| {
                                let d = (pts[i] - pts[j]).abs();
                                ard_gac_value(d.as_slice(), spec).unwrap_or(f64::NAN)
                            })
                            .collect()
                    })
                    .collect();
                let n = pts.len();
                let mut d = DMatrix::zeros(n, n);
                for (i, row) in rows.into_iter().enumerate() {
                    for (off, v) in row.into_iter().enumerate() {
                        d[(i, i + off)] = v;
                        d[(i + off, i)] = v;
                    }
                }
                Ok(add_jitter_dense(d, spec.jitter))
            } else {
                assemble_from_lags(pts.len(), spec, |i, j| (pts[i] - pts[j]).norm())
            }
        }
        KernelInput::Graph(g) => assemble_sparse(g, spec),
    }
}

fn assemble_sparse(g: &GeodesicGraph, spec: &KernelSpec) -> Result<KernelMatrix> {
    let n = g.source_count;
    // Symmetrize: keep (i, j) if either endpoint lists the other, using the
    // smaller recorded distance so both triangles see the same lag.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, d) in g.neighbors(i) {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::NonFinite(format!("geodesic distance {i}→{j}")));
            }
            rows[i].push((j, d));
            if i != j {
                rows[j].push((i, d));
            }
        }
    }
    let rows: Vec<Vec<(usize, f64)>> = rows
        .into_par_iter()
        .map(|mut r| {
            r.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            r.dedup_by_key(|e| e.0);
            r.into_iter().map(|(j, d)| (j, spec.value(d))).collect()
        })
        .collect();
    let mut s = CsrMatrix::from_rows(n, rows);
    let diag = s.diagonal();
    let j = spec.jitter * diag.iter().sum::<f64>() / n.max(1) as f64;
    for i in 0..n {
        let (a, b) = (s.indptr[i], s.indptr[i + 1]);
        if let Ok(p) = s.indices[a..b].binary_search(&i) {
            s.values[a + p] += j;
        }
    }
    Ok(KernelMatrix {
        storage: KernelStorage::Sparse(s),
        jitter_applied: j,
    })
}

/// MMK = K·W·K with `W = diag(Σ_u |K(v, u)|)`, computed on the jitter-free `K`.
///
/// Each entry is accumulated as `Σ_l W_l·(K_il·K_jl)` in ascending `l`, which
/// keeps the result exactly symmetric. The output carries no jitter.
pub fn build_mmk(k: &KernelMatrix) -> Result<KernelMatrix> {
    let n = k.size();
    let j = k.jitter_applied;
    match &k.storage {
        KernelStorage::Dense(d) => {
            if d.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, found: d.ncols() });
            }
            let mut k0 = d.clone();
            for i in 0..n {
                k0[(i, i)] -= j;
            }
            let w: Vec<f64> = (0..n).map(|i| k0.row(i).iter().map(|v| v.abs()).sum()).collect();
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    (i..n)
                        .map(|jj| (0..n).map(|l| w[l] * (k0[(i, l)] * k0[(jj, l)])).sum())
                        .collect()
                })
                .collect();
            let mut out = DMatrix::zeros(n, n);
            for (i, row) in rows.into_iter().enumerate() {
                for (off, v) in row.into_iter().enumerate() {
                    out[(i, i + off)] = v;
                    out[(i + off, i)] = v;
                }
            }
            Ok(KernelMatrix {
                storage: KernelStorage::Dense(out),
                jitter_applied: 0.0,
            })
        }
        KernelStorage::Sparse(s) => {
            let mut k0 = s.clone();
            for i in 0..n {
                let (a, b) = (k0.indptr[i], k0.indptr[i + 1]);
                if let Ok(p) = k0.indices[a..b].binary_search(&i) {
                    k0.values[a + p] -= j;
                }
            }
            let w: Vec<f64> = (0..n).map(|i| k0.row(i).1.iter().map(|v| v.abs()).sum()).collect();
            let rows: Vec<Vec<(usize, f64)>> = (0..n)
                .into_par_iter()
                .map_init(
                    || (vec![0.0; n], vec![false; n]),
                    |(acc, seen), i| {
                        let mut touched = Vec::new();
                        let (li, lv) = k0.row(i);
                        for (&l, &kil) in li.iter().zip(lv) {
                            let (cols, vals) = k0.row(l);
                            for (&c, &klc) in cols.iter().zip(vals) {
                                if !seen[c] {
                                    seen[c] = true;
                                    touched.push(c);
                                }
                                acc[c] += w[l] * (kil * klc);
                            }
                        }
                        touched.sort_unstable();
                        touched
                            .into_iter()
                            .map(|c| {
                                let v = acc[c];
                                acc[c] = 0.0;
                                seen[c] = false;
                                (c, v)
                            })
                            .collect()
                    },
                )
                .collect();
            Ok(KernelMatrix {
                storage: KernelStorage::Sparse(CsrMatrix::from_rows(n, rows)),
                jitter_applied: 0.0,
            })
        }
    }
}
