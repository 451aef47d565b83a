//! Stacked sparse variational GP classifier.
//!
//! Each layer is a set of independent GPs sharing inducing inputs, with an
//! ARD-GAC kernel and a linear mean function. Training maximizes a Monte Carlo
//! ELBO with reparameterized samples; gradients come from [`tape`].

mod kmeans;
mod layer;
pub mod tape;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::init_inducing_kmeans;
pub use layer::GpLayer;

use crate::error::{Error, Result};
use crate::kernels::{default_frequencies, default_phases, KernelSpec};
use crate::manifold_io::write_atomic;
use crate::rng;
use layer::{LayerVars, Prior};
use tape::Graph;

const PREDICT_STREAM: u64 = 0x9e3d;
/// Initial ARD length-scales are this multiple of `√D · std`. Shorter scales
/// put typical lags where the damped cosine turns negative and `K_ZZ` becomes
/// strongly indefinite in high dimension.
const LENGTHSCALE_SPREAD: f64 = 2.0;
const BATCH_STREAM: u64 = 0xba7c;

/// Unconstrained parameters, one list per layer.
pub type Params = Vec<Vec<DMatrix<f64>>>;
/// Standard-normal draws indexed `[sample][layer]`, each `B × output_dim`.
pub type NoiseDraws = Vec<Vec<DMatrix<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output widths of the hidden layers; the final layer has `class_count` outputs.
    pub hidden_dims: Vec<usize>,
    pub class_count: usize,
    /// Capped at the number of training inputs.
    pub inducing_count: usize,
    pub n_fre: usize,
    pub frequency_scale: f64,
    /// Initial diagonal of hidden-layer variational factors.
    pub hidden_chol_scale: f64,
    pub mc_samples: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dims: vec![5],
            class_count: 2,
            inducing_count: 50,
            n_fre: 5,
            frequency_scale: 1.0,
            hidden_chol_scale: 0.1,
            mc_samples: 10,
            jitter: crate::linalg::DEFAULT_REL_JITTER,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepGpModel {
    pub layers: Vec<GpLayer>,
    pub class_count: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Per-feature centering and scaling applied before the first layer.
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Top principal directions of the centered rows of `x`, as a `d × k` matrix.
/// Identity when `k == d`; zero-padded columns when `k > d`.
fn pca_projection(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = x.ncols();
    if k >= d {
        return DMatrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 });
    }
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(x.nrows(), d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut w = DMatrix::zeros(d, k);
    for (c, &idx) in order[..k].iter().enumerate() {
        let mut col = eig.eigenvectors.column(idx).into_owned();
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        w.set_column(c, &col);
    }
    w
}

impl DeepGpModel {
    /// Initialize from training inputs: standardize features, place inducing
    /// points by k-means on each layer's (mean-propagated) inputs, and set the
    /// hidden mean functions by PCA.
    pub fn init(x: &DMatrix<f64>, config: &ModelConfig) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(Error::invalid("empty training matrix"));
        }
        if config.class_count < 2 {
            return Err(Error::invalid("class_count must be at least 2"));
        }
        if config.mc_samples == 0 || config.n_fre == 0 || config.inducing_count == 0 {
            return Err(Error::invalid("mc_samples, n_fre and inducing_count must be positive"));
        }
        if let Some(bad) = config.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::invalid(format!("hidden layer {bad} has zero width")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training inputs".into()));
        }
        let input_mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
        let input_scale: Vec<f64> = (0..d)
            .map(|j| {
                let sd = x.column(j).iter().map(|v| (v - input_mean[j]).powi(2)).sum::<f64>() / n as f64;
                if sd.sqrt() > 1e-12 { sd.sqrt() } else { 1.0 }
            })
            .collect();
        let mut model = DeepGpModel {
            layers: Vec::new(),
            class_count: config.class_count,
            mc_samples: config.mc_samples,
            seed: config.seed,
            input_mean,
            input_scale,
        };
        let mut h = model.standardize(x)?;
        let m = config.inducing_count.min(n);
        let phases = default_phases(config.n_fre);
        let variance = 4.0 * PI / phases.iter().map(|p| p.cos()).sum::<f64>();
        let widths: Vec<usize> = config.hidden_dims.iter().copied().chain([config.class_count]).collect();
        for (l, &out) in widths.iter().enumerate() {
            let din = h.ncols();
            let last = l + 1 == widths.len();
            let z = init_inducing_kmeans(&h, m, rng::derive_seed(config.seed, &[l as u64]))?;
            let spread: Vec<f64> = (0..din)
                .map(|j| {
                    let c = h.column(j);
                    let mu = c.mean();
                    let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
                    LENGTHSCALE_SPREAD * (din as f64).sqrt() * if sd > 1e-12 { sd } else { 1.0 }
                })
                .collect();
            let kernel = KernelSpec::ard_gac(
                default_frequencies(config.n_fre, config.frequency_scale),
                phases.clone(),
                spread,
                variance,
            )
            .with_jitter(config.jitter);
            let chol_scale = if last { 1.0 } else { config.hidden_chol_scale };
            let mean_coeffs = if last { DMatrix::zeros(din, out) } else { pca_projection(&h, out) };
            let next = &h * &mean_coeffs;
            model.layers.push(GpLayer {
                input_dim: din,
                output_dim: out,
                inducing_inputs: z,
                variational_mean: DMatrix::zeros(m, out),
                variational_chol: vec![DMatrix::identity(m, m) * chol_scale; out],
                kernel,
                mean_coeffs,
            });
            h = next;
        }
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.layers.first().ok_or_else(|| Error::invalid("model has no layers"))?;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|e| Error::invalid(format!("layer {l}: {e}")))?;
            if let Some(next) = self.layers.get(l + 1) {
                if next.input_dim != layer.output_dim {
                    return Err(Error::DimensionMismatch {
                        expected: layer.output_dim,
                        found: next.input_dim,
                    });
                }
            }
        }
        let out = self.layers.last().map_or(0, |l| l.output_dim);
        if out != self.class_count {
            return Err(Error::DimensionMismatch {
                expected: self.class_count,
                found: out,
            });
        }
        if self.input_mean.len() != first.input_dim || self.input_scale.len() != first.input_dim {
            return Err(Error::invalid("input normalization length differs from input_dim"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    fn standardize(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_mean.len(),
                found: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.input_mean[j]) / self.input_scale[j]
        }))
    }

    pub fn params(&self) -> Params {
        self.layers
            .iter()
            .map(|l| l.unconstrained().into_iter().map(|(_, m)| m).collect())
            .collect()
    }

    /// `layer{l}.{name}` for every entry of [`DeepGpModel::params`].
    pub fn param_names(&self) -> Vec<Vec<String>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let mut out_idx = 0;
                layer
                    .unconstrained()
                    .into_iter()
                    .map(|(name, _)| {
                        if name == "variational_chol" {
                            out_idx += 1;
                            format!("layer{l}.{name}[{}]", out_idx - 1)
                        } else {
                            format!("layer{l}.{name}")
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn set_params(&mut self, p: &Params) {
        for (layer, lp) in self.layers.iter_mut().zip(p) {
            layer.set_unconstrained(lp);
        }
    }

    /// Standard-normal draws for `samples` paths over a batch of `rows`.
    pub fn noise_draws(&self, rows: usize, samples: usize, seed: u64, path: &[u64]) -> NoiseDraws {
        (0..samples)
            .map(|s| {
                let mut p = path.to_vec();
                p.push(s as u64);
                let mut r = rng::stream(seed, &p);
                self.layers
                    .iter()
                    .map(|l| DMatrix::from_fn(rows, l.output_dim, |_, _| StandardNormal.sample(&mut r)))
                    .collect()
            })
            .collect()
    }

    fn register(&self, g: &mut Graph, p: &Params) -> Vec<LayerVars> {
        self.layers.iter().zip(p).map(|(l, lp)| l.register(g, lp)).collect()
    }

    fn priors(&self, g: &mut Graph, vars: &[LayerVars]) -> Result<Vec<Prior>> {
        self.layers.iter().zip(vars).map(|(l, v)| l.prior(g, v)).collect()
    }

    /// Logits of one Monte Carlo path.
    fn path(&self, g: &mut Graph, vars: &[LayerVars], priors: &[Prior], x: &DMatrix<f64>, noise: &[DMatrix<f64>]) -> tape::Var {
        let mut h = g.leaf(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.sample(g, &vars[l], &priors[l], h, &noise[l]);
        }
        h
    }

    /// `Σ_l KL(q(U_l) ‖ p(U_l))`.
    pub fn kl_divergence(&self) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, &self.params());
        let priors = self.priors(&mut g, &vars)?;
        let kl = self.kl_node(&mut g, &vars, &priors);
        Ok(g.scalar(kl))
    }

    /// Per-layer KL terms.
    pub fn kl_terms(&self) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, &self.params());
        let priors = self.priors(&mut g, &vars)?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let k = layer.kl(&mut g, &vars[l], &priors[l]);
                g.scalar(k)
            })
            .collect())
    }

    fn kl_node(&self, g: &mut Graph, vars: &[LayerVars], priors: &[Prior]) -> tape::Var {
        let terms: Vec<tape::Var> = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| layer.kl(g, &vars[l], &priors[l]))
            .collect();
        terms[1..].iter().fold(terms[0], |acc, &t| g.add(acc, t))
    }

    fn check_batch(&self, x: &DMatrix<f64>, labels: &[usize], noise: &NoiseDraws) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if labels.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::invalid(format!("label {bad} is not below class count {}", self.class_count)));
        }
        if noise.is_empty() {
            return Err(Error::invalid("no Monte Carlo samples"));
        }
        for draws in noise {
            if draws.len() != self.layers.len()
                || draws.iter().zip(&self.layers).any(|(e, l)| e.shape() != (x.nrows(), l.output_dim))
            {
                return Err(Error::invalid("noise draws do not match batch and layer widths"));
            }
        }
        Ok(())
    }

    /// ELBO estimate and, if requested, its gradient with respect to `params`.
    fn evaluate(
        &self,
        params: &Params,
        x: &DMatrix<f64>,
        labels: &[usize],
        n_total: usize,
        noise: &NoiseDraws,
        want_grad: bool,
    ) -> Result<(f64, Option<Params>)> {
        self.check_batch(x, labels, noise)?;
        let xs = self.standardize(x)?;
        let weight = n_total as f64 / x.nrows() as f64 / noise.len() as f64;
        let collect = |g: &Graph, vars: &[LayerVars], out: tape::Var, sign: f64| -> Params {
            let grads = g.backward(out);
            vars.iter()
                .zip(params)
                .map(|(v, lp)| {
                    v.leaves()
                        .into_iter()
                        .zip(lp)
                        .map(|(leaf, m)| {
                            grads[leaf.index()]
                                .as_ref()
                                .map_or_else(|| DMatrix::zeros(m.nrows(), m.ncols()), |d| d * sign)
                        })
                        .collect()
                })
                .collect()
        };

        let mut g = Graph::new();
        let vars = self.register(&mut g, params);
        let priors = self.priors(&mut g, &vars)?;
        let kl_var = self.kl_node(&mut g, &vars, &priors);
        let kl = g.scalar(kl_var);
        let kl_grad = want_grad.then(|| collect(&g, &vars, kl_var, -1.0));

        let per_sample: Vec<(f64, Option<Params>)> = noise
            .par_iter()
            .map(|draws| {
                let mut g = Graph::new();
                let vars = self.register(&mut g, params);
                let priors = self.priors(&mut g, &vars)?;
                let logits = self.path(&mut g, &vars, &priors, &xs, draws);
                let lse = g.log_sum_exp_rows(logits);
                let pick = g.pick_per_row(logits, labels.to_vec());
                let ll = g.sub(pick, lse);
                let total = g.sum_all(ll);
                let out = g.mul_scalar(total, weight);
                let grad = want_grad.then(|| collect(&g, &vars, out, 1.0));
                Ok((g.scalar(out), grad))
            })
            .collect::<Result<_>>()?;

        let mut elbo = 0.0;
        let mut grad = kl_grad;
        for (v, gs) in per_sample {
            elbo += v;
            if let (Some(acc), Some(gs)) = (grad.as_mut(), gs) {
                for (al, gl) in acc.iter_mut().zip(gs) {
                    for (a, b) in al.iter_mut().zip(gl) {
                        *a += b;
                    }
                }
            }
        }
        Ok((elbo - kl, grad))
    }

    /// Expected log-likelihood term only (no KL), scaled to `n_total`.
    pub fn expected_log_likelihood(&self, x: &DMatrix<f64>, labels: &[usize], n_total: usize, noise: &NoiseDraws) -> Result<f64> {
        Ok(self.elbo(x, labels, n_total, noise)? + self.kl_divergence()?)
    }

    /// Doubly stochastic ELBO for fixed noise draws.
    pub fn elbo(&self, x: &DMatrix<f64>, labels: &[usize], n_total: usize, noise: &NoiseDraws) -> Result<f64> {
        Ok(self.evaluate(&self.params(), x, labels, n_total, noise, false)?.0)
    }

    /// ELBO at explicit unconstrained parameters.
    pub fn elbo_at(&self, params: &Params, x: &DMatrix<f64>, labels: &[usize], n_total: usize, noise: &NoiseDraws) -> Result<f64> {
        Ok(self.evaluate(params, x, labels, n_total, noise, false)?.0)
    }

    /// ELBO and its gradient with respect to the unconstrained parameters.
    pub fn elbo_gradient(&self, x: &DMatrix<f64>, labels: &[usize], n_total: usize, noise: &NoiseDraws) -> Result<(f64, Params)> {
        let (v, g) = self.evaluate(&self.params(), x, labels, n_total, noise, true)?;
        let g = g.expect("gradient requested");
        for (names, gl) in self.param_names().iter().zip(&g) {
            for (name, m) in names.iter().zip(gl) {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.clone()));
                }
            }
        }
        Ok((v, g))
    }

    /// Monte Carlo average of the softmax over `mc_samples` paths.
    pub fn predict(&self, x: &DMatrix<f64>, mc_samples: usize) -> Result<Vec<Vec<f64>>> {
        if mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be positive"));
        }
        let xs = self.standardize(x)?;
        let params = self.params();
        let noise = self.noise_draws(x.nrows(), mc_samples, self.seed, &[PREDICT_STREAM]);
        let runs: Vec<DMatrix<f64>> = noise
            .par_iter()
            .map(|draws| {
                let mut g = Graph::new();
                let vars = self.register(&mut g, &params);
                let priors = self.priors(&mut g, &vars)?;
                let logits = self.path(&mut g, &vars, &priors, &xs, draws);
                let f = g.value(logits);
                Ok(DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| {
                    let mx = f.row(i).max();
                    let z: f64 = f.row(i).iter().map(|v| (v - mx).exp()).sum();
                    (f[(i, j)] - mx).exp() / z
                }))
            })
            .collect::<Result<_>>()?;
        let mut mean = DMatrix::zeros(x.nrows(), self.class_count);
        for r in &runs {
            mean += r;
        }
        mean /= runs.len() as f64;
        Ok((0..mean.nrows())
            .map(|i| {
                let s: f64 = mean.row(i).sum();
                mean.row(i).iter().map(|v| v / s).collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Step from which `decayed_learning_rate` applies.
    pub decay_step: usize,
    pub decayed_learning_rate: f64,
    /// `None` uses the full dataset every step.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            learning_rate: 1e-3,
            decay_step: 200,
            decayed_learning_rate: 1e-4,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if step < self.decay_step {
            self.learning_rate
        } else {
            self.decayed_learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub elbo: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

pub fn trace_csv(trace: &[TraceRow], with_seconds: bool) -> String {
    let mut s = String::from("step,elbo,lr,seconds\n");
    for r in trace {
        let secs = if with_seconds { r.seconds.to_string() } else { String::new() };
        let _ = writeln!(s, "{},{},{},{}", r.step, r.elbo, r.learning_rate, secs);
    }
    s
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: usize,
    pub first_moments: Params,
    pub second_moments: Params,
    pub batch_size: usize,
    pub seed: u64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainerState,
}

impl Trainer {
    pub fn new(model: &DeepGpModel, n_total: usize, config: TrainConfig) -> Result<Self> {
        let batch_size = config.batch_size.unwrap_or(n_total).min(n_total);
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let zeros: Params = model
            .params()
            .iter()
            .map(|lp| lp.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect())
            .collect();
        Ok(Trainer {
            state: TrainerState {
                step: 0,
                first_moments: zeros.clone(),
                second_moments: zeros,
                batch_size,
                seed: config.seed,
            },
            config,
        })
    }

    fn batch(&self, x: &DMatrix<f64>, labels: &[usize], step: usize) -> (DMatrix<f64>, Vec<usize>) {
        let n = x.nrows();
        if self.state.batch_size >= n {
            return (x.clone(), labels.to_vec());
        }
        let mut idx = sample(&mut rng::stream(self.state.seed, &[BATCH_STREAM, step as u64]), n, self.state.batch_size).into_vec();
        idx.sort_unstable();
        (x.select_rows(&idx), idx.iter().map(|&i| labels[i]).collect())
    }

    /// ELBO at the current step's noise without updating anything.
    pub fn evaluate(&self, model: &DeepGpModel, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        let step = self.state.step;
        let (bx, by) = self.batch(x, labels, step);
        let noise = model.noise_draws(bx.nrows(), model.mc_samples, self.state.seed, &[step as u64]);
        model.elbo(&bx, &by, x.nrows(), &noise)
    }

    /// One Adam ascent step. The returned row holds the ELBO before the update.
    pub fn step(&mut self, model: &mut DeepGpModel, x: &DMatrix<f64>, labels: &[usize]) -> Result<TraceRow> {
        let start = Instant::now();
        let step = self.state.step;
        let (bx, by) = self.batch(x, labels, step);
        let noise = model.noise_draws(bx.nrows(), model.mc_samples, self.state.seed, &[step as u64]);
        let (elbo, grad) = model.elbo_gradient(&bx, &by, x.nrows(), &noise)?;
        if !elbo.is_finite() {
            return Err(Error::Divergence { step, elbo });
        }
        let lr = self.config.learning_rate_at(step);
        let t = (step + 1) as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let mut params = model.params();
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let mut changed = false;
            for (k, g) in grad[l].iter().enumerate() {
                let m = &mut self.state.first_moments[l][k];
                let v = &mut self.state.second_moments[l][k];
                let p = &mut params[l][k];
                for i in 0..g.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let delta = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.config.epsilon);
                    if delta != 0.0 {
                        p[i] += delta;
                        changed = true;
                    }
                }
            }
            if changed {
                layer.set_unconstrained(&params[l]);
            }
        }
        self.state.step += 1;
        Ok(TraceRow {
            step,
            elbo,
            learning_rate: lr,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Run `config.steps` updates. The trace has one row per update followed by
/// a final evaluation row at `step = config.steps`.
pub fn train(model: &mut DeepGpModel, x: &DMatrix<f64>, labels: &[usize], config: &TrainConfig) -> Result<(TrainerState, Vec<TraceRow>)> {
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    let mut trainer = Trainer::new(model, x.nrows(), config.clone())?;
    let mut trace = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        trace.push(trainer.step(model, x, labels)?);
    }
    let start = Instant::now();
    let elbo = trainer.evaluate(model, x, labels)?;
    if !elbo.is_finite() {
        return Err(Error::Divergence { step: config.steps, elbo });
    }
    trace.push(TraceRow {
        step: config.steps,
        elbo,
        learning_rate: config.learning_rate_at(config.steps),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok((trainer.state, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: DeepGpModel,
    pub step: usize,
    pub trainer: Option<TrainerState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text)?;
        c.model.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, Vec<usize>) {
        let pts = [
            [0.1, 0.2], [0.3, -0.1], [-0.2, 0.0], [0.0, 0.3], [0.2, 0.1], [-0.1, -0.2],
            [2.0, 2.1], [2.2, 1.9], [1.8, 2.0], [2.1, 2.3], [1.9, 1.7], [2.3, 2.2],
        ];
        let x = DMatrix::from_fn(12, 2, |i, j| pts[i][j]);
        (x, (0..12).map(|i| usize::from(i >= 6)).collect())
    }

    fn single_layer(m: usize) -> (DeepGpModel, DMatrix<f64>, Vec<usize>) {
        let (x, y) = toy();
        let cfg = ModelConfig {
            hidden_dims: vec![],
            inducing_count: m,
            ..ModelConfig::default()
        };
        (DeepGpModel::init(&x, &cfg).unwrap(), x, y)
    }

    #[test]
    fn prior_matching_q_has_zero_kl() {
        let (mut model, _, _) = single_layer(4);
        let layer = &mut model.layers[0];
        let mut g = Graph::new();
        let vars = layer.register(&mut g, &layer.unconstrained().into_iter().map(|(_, m)| m).collect::<Vec<_>>());
        let prior = layer.prior(&mut g, &vars).unwrap();
        let l = g.value(prior.chol).clone();
        layer.variational_chol = vec![l.clone(), l];
        assert!(model.kl_divergence().unwrap().abs() < 1e-10);
    }

    #[test]
    fn scalar_kl_formula() {
        let (mut model, _, _) = single_layer(1);
        let layer = &mut model.layers[0];
        layer.kernel.jitter = 0.0;
        layer.variational_mean = DMatrix::from_element(1, 2, 1.0);
        layer.variational_chol = vec![DMatrix::from_element(1, 1, 1.0); 2];
        // k(0) = 1 by construction, so each output contributes ½(1 + 1 − 1 − 0).
        assert!((model.kl_divergence().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_expectation() {
        let (model, x, y) = single_layer(4);
        let noise: NoiseDraws = vec![vec![DMatrix::zeros(12, 2)]];
        let ell = model.expected_log_likelihood(&x, &y, 12, &noise).unwrap();
        assert!((ell - 12.0 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn predictions_are_distributions() {
        let (x, _) = toy();
        let model = DeepGpModel::init(&x, &ModelConfig { inducing_count: 5, ..Default::default() }).unwrap();
        for row in model.predict(&x, 7).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (x, y) = toy();
        let mut model = DeepGpModel::init(&x, &ModelConfig { inducing_count: 4, ..Default::default() }).unwrap();
        let before = model.clone();
        let cfg = TrainConfig { steps: 3, learning_rate: 0.0, decayed_learning_rate: 0.0, ..Default::default() };
        train(&mut model, &x, &y, &cfg).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn unconstrained_roundtrip() {
        let (model, _, _) = single_layer(4);
        let mut copy = model.clone();
        copy.set_params(&model.params());
        let p0 = model.params();
        let p1 = copy.params();
        for (a, b) in p0.iter().flatten().zip(p1.iter().flatten()) {
            assert!((a - b).amax() < 1e-12);
        }
    }
}
