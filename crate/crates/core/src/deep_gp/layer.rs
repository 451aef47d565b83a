use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tape::{softplus_inverse, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelSpec};

/// The damped cosine is not positive definite in high dimension, so the
/// inducing covariance may need jitter up to roughly `k(x, x)` itself.
const MAX_JITTER_DOUBLINGS: usize = 20;
const JITTER_WARNING: f64 = 1e-3;

/// Floor applied to marginal variances before the square root.
pub(crate) const VARIANCE_FLOOR: f64 = 1e-12;

/// One sparse variational GP layer with independent outputs sharing `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpLayer {
    pub input_dim: usize,
    pub output_dim: usize,
    /// `M × input_dim`.
    pub inducing_inputs: DMatrix<f64>,
    /// `M × output_dim`.
    pub variational_mean: DMatrix<f64>,
    /// One lower-triangular `M × M` factor per output.
    pub variational_chol: Vec<DMatrix<f64>>,
    /// ARD-GAC; `ard_lengthscales.len() == input_dim`.
    pub kernel: KernelSpec,
    /// `input_dim × output_dim`.
    pub mean_coeffs: DMatrix<f64>,
}

/// Leaves of one layer's unconstrained parameters inside a [`Graph`].
pub(crate) struct LayerVars {
    log_freq: Var,
    log_alpha: Var,
    log_var: Var,
    z: Var,
    q_mu: Var,
    q_raw: Vec<Var>,
    mean: Var,
}

impl LayerVars {
    /// Leaves in the order of [`GpLayer::unconstrained`].
    pub(crate) fn leaves(&self) -> Vec<Var> {
        let mut v = vec![self.log_freq, self.log_alpha, self.log_var, self.z, self.q_mu];
        v.extend(&self.q_raw);
        v.push(self.mean);
        v
    }
}

/// Cholesky factor of `K_ZZ` with jitter, plus the prior variance `k(x, x)`.
pub(crate) struct Prior {
    pub chol: Var,
    pub kxx: Var,
}

impl GpLayer {
    pub fn inducing_count(&self) -> usize {
        self.inducing_inputs.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.inducing_count();
        let mut bad = Vec::new();
        if m == 0 {
            bad.push("no inducing points".to_string());
        }
        if self.inducing_inputs.ncols() != self.input_dim {
            bad.push(format!("Z has {} columns, input_dim is {}", self.inducing_inputs.ncols(), self.input_dim));
        }
        if self.variational_mean.shape() != (m, self.output_dim) {
            bad.push("variational mean shape".into());
        }
        if self.variational_chol.len() != self.output_dim {
            bad.push("one variational factor per output required".into());
        }
        for (o, l) in self.variational_chol.iter().enumerate() {
            if l.shape() != (m, m) || (0..m).any(|i| !(l[(i, i)] > 0.0)) {
                bad.push(format!("variational factor {o} must be M×M with positive diagonal"));
            }
        }
        if self.kernel.kind != KernelKind::ArdGac || self.kernel.ard_lengthscales.len() != self.input_dim {
            bad.push("kernel must be ard_gac with one length-scale per input dimension".into());
        }
        if self.mean_coeffs.shape() != (self.input_dim, self.output_dim) {
            bad.push("mean_coeffs shape".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(bad.join("; ")))
        }
    }

    /// Unconstrained parameters in a fixed order with their names.
    pub fn unconstrained(&self) -> Vec<(&'static str, DMatrix<f64>)> {
        let row = |v: &[f64]| DMatrix::from_row_slice(1, v.len(), v);
        let mut out = vec![
            ("log_frequencies", row(&self.kernel.frequencies.iter().map(|x| x.ln()).collect::<Vec<_>>())),
            ("log_lengthscales", row(&self.kernel.ard_lengthscales.iter().map(|x| x.ln()).collect::<Vec<_>>())),
            ("log_variance", DMatrix::from_element(1, 1, self.kernel.variance.ln())),
            ("inducing_inputs", self.inducing_inputs.clone()),
            ("variational_mean", self.variational_mean.clone()),
        ];
        for l in &self.variational_chol {
            let mut raw = l.clone();
            for i in 0..raw.nrows() {
                raw[(i, i)] = softplus_inverse(l[(i, i)]);
                for j in i + 1..raw.ncols() {
                    raw[(i, j)] = 0.0;
                }
            }
            out.push(("variational_chol", raw));
        }
        out.push(("mean_coeffs", self.mean_coeffs.clone()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        6 + self.output_dim
    }

    /// Inverse of [`GpLayer::unconstrained`].
    pub fn set_unconstrained(&mut self, p: &[DMatrix<f64>]) {
        let flat = |m: &DMatrix<f64>| m.iter().copied().collect::<Vec<f64>>();
        self.kernel.frequencies = flat(&p[0]).into_iter().map(f64::exp).collect();
        self.kernel.ard_lengthscales = flat(&p[1]).into_iter().map(f64::exp).collect();
        self.kernel.variance = p[2][(0, 0)].exp();
        self.inducing_inputs = p[3].clone();
        self.variational_mean = p[4].clone();
        for (o, l) in self.variational_chol.iter_mut().enumerate() {
            let raw = &p[5 + o];
            *l = DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Greater => raw[(i, j)],
                std::cmp::Ordering::Equal => super::tape::softplus(raw[(i, i)]),
                std::cmp::Ordering::Less => 0.0,
            });
        }
        self.mean_coeffs = p[5 + self.output_dim].clone();
    }

    pub(crate) fn register(&self, g: &mut Graph, p: &[DMatrix<f64>]) -> LayerVars {
        let mut leaf = |m: &DMatrix<f64>| g.leaf(m.clone());
        LayerVars {
            log_freq: leaf(&p[0]),
            log_alpha: leaf(&p[1]),
            log_var: leaf(&p[2]),
            z: leaf(&p[3]),
            q_mu: leaf(&p[4]),
            q_raw: (0..self.output_dim).map(|o| leaf(&p[5 + o])).collect(),
            mean: leaf(&p[5 + self.output_dim]),
        }
    }

    /// `σ²/(4π) Σ_q e^{−λ_q R} cos(λ_q R + φ_q)` applied to a distance matrix.
    fn kernel_of(&self, g: &mut Graph, v: &LayerVars, r: Var) -> Var {
        let lam = g.exp(v.log_freq);
        let mut total: Option<Var> = None;
        for (q, &phi) in self.kernel.phases.iter().enumerate() {
            let lq = g.element(lam, 0, q);
            let lr = g.scale_by(r, lq);
            let neg = g.mul_scalar(lr, -1.0);
            let decay = g.exp(neg);
            let shifted = g.offset(lr, phi);
            let osc = g.cos(shifted);
            let term = g.mul(decay, osc);
            total = Some(match total {
                Some(t) => g.add(t, term),
                None => term,
            });
        }
        let var = g.exp(v.log_var);
        let amp = g.mul_scalar(var, 1.0 / (4.0 * PI));
        g.scale_by(total.expect("at least one frequency"), amp)
    }

    fn inv_alpha(g: &mut Graph, v: &LayerVars) -> Var {
        let neg = g.mul_scalar(v.log_alpha, -1.0);
        g.exp(neg)
    }

    /// Factor `K_ZZ + c·k(x,x)·I` with `c` starting at the kernel's relative
    /// jitter and doubling on failure. The jitter stays differentiable.
    pub(crate) fn prior(&self, g: &mut Graph, v: &LayerVars) -> Result<Prior> {
        let ia = Self::inv_alpha(g, v);
        let zs = g.mul_row_broadcast(v.z, ia);
        let r = g.pairwise_distance(zs, zs);
        let kzz = self.kernel_of(g, v, r);
        let var = g.exp(v.log_var);
        let cos_sum: f64 = self.kernel.phases.iter().map(|p| p.cos()).sum();
        let kxx = g.mul_scalar(var, cos_sum / (4.0 * PI));
        let m = self.inducing_count();
        let eye = g.leaf(DMatrix::identity(m, m));
        let mut c = self.kernel.jitter;
        for _ in 0..=MAX_JITTER_DOUBLINGS {
            let s = g.mul_scalar(kxx, c);
            let j = g.scale_by(eye, s);
            let kj = g.add(kzz, j);
            if let Ok(chol) = g.cholesky(kj) {
                if c > JITTER_WARNING {
                    log::warn!("inducing covariance needed relative jitter {c:e}");
                }
                return Ok(Prior { chol, kxx });
            }
            c *= 2.0;
        }
        Err(Error::NotPositiveDefinite { jitter: c / 2.0 })
    }

    fn variational_factor(g: &mut Graph, raw: Var) -> Var {
        let lo = g.strict_lower(raw);
        let d = g.diag_part(raw);
        let sp = g.softplus(d);
        let de = g.diag_embed(sp);
        g.add(lo, de)
    }

    /// Marginal means (`B × output_dim`) and variances (one `B × 1` column per output).
    pub(crate) fn marginals(&self, g: &mut Graph, v: &LayerVars, prior: &Prior, x: Var) -> (Var, Vec<Var>) {
        let ia = Self::inv_alpha(g, v);
        let xs = g.mul_row_broadcast(x, ia);
        let zs = g.mul_row_broadcast(v.z, ia);
        let r = g.pairwise_distance(zs, xs);
        let kzx = self.kernel_of(g, v, r);
        let a = g.solve_lower(prior.chol, kzx);
        let b = g.solve_lower_t(prior.chol, a);
        let lin = g.matmul(x, v.mean);
        let bt = g.transpose(b);
        let cond = g.matmul(bt, v.q_mu);
        let mean = g.add(lin, cond);

        let n = g.value(x).nrows();
        let ones = g.leaf(DMatrix::from_element(1, n, 1.0));
        let prior_var = g.scale_by(ones, prior.kxx);
        let a2 = g.mul(a, a);
        let explained = g.col_sums(a2);
        let base = g.sub(prior_var, explained);
        let vars = v
            .q_raw
            .iter()
            .map(|&raw| {
                let ls = Self::variational_factor(g, raw);
                let lst = g.transpose(ls);
                let t = g.matmul(lst, b);
                let t2 = g.mul(t, t);
                let extra = g.col_sums(t2);
                let total = g.add(base, extra);
                let floored = g.clamp_min(total, VARIANCE_FLOOR);
                g.transpose(floored)
            })
            .collect();
        (mean, vars)
    }

    /// Draw `mean + √var ⊙ ε` per output.
    pub(crate) fn sample(&self, g: &mut Graph, v: &LayerVars, prior: &Prior, x: Var, noise: &DMatrix<f64>) -> Var {
        let (mean, vars) = self.marginals(g, v, prior, x);
        let cols = vars
            .into_iter()
            .enumerate()
            .map(|(o, var)| {
                let mo = g.column(mean, o);
                let sd = g.sqrt(var);
                let eps = g.leaf(DMatrix::from_column_slice(noise.nrows(), 1, noise.column(o).as_slice()));
                let jit = g.mul(sd, eps);
                g.add(mo, jit)
            })
            .collect();
        g.hconcat(cols)
    }

    /// `Σ_o KL(N(m_o, S_o) ‖ N(0, K_ZZ))`.
    pub(crate) fn kl(&self, g: &mut Graph, v: &LayerVars, prior: &Prior) -> Var {
        let m = self.inducing_count() as f64;
        let ld = g.diag_part(prior.chol);
        let lld = g.log(ld);
        let logdet_p = g.sum_all(lld);
        let mut total: Option<Var> = None;
        for (o, &raw) in v.q_raw.iter().enumerate() {
            let ls = Self::variational_factor(g, raw);
            let w = g.solve_lower(prior.chol, ls);
            let w2 = g.mul(w, w);
            let trace = g.sum_all(w2);
            let mo = g.column(v.q_mu, o);
            let u = g.solve_lower(prior.chol, mo);
            let u2 = g.mul(u, u);
            let maha = g.sum_all(u2);
            let sd = g.diag_part(ls);
            let lsd = g.log(sd);
            let logdet_q = g.sum_all(lsd);
            let t = g.add(trace, maha);
            let t = g.offset(t, -m);
            let dl = g.sub(logdet_p, logdet_q);
            let dl2 = g.mul_scalar(dl, 2.0);
            let t = g.add(t, dl2);
            let kl = g.mul_scalar(t, 0.5);
            total = Some(match total {
                Some(x) => g.add(x, kl),
                None => kl,
            });
        }
        total.expect("at least one output")
    }
}
