use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gacgp::deep_gp::{self, Checkpoint, DeepGpModel, ModelConfig, TrainConfig};
use gacgp::evaluation::{self, AcCurve};
use gacgp::features::{self, FeatureMatrix, VertexFeatureKind};
use gacgp::geometry::{self, GraphMethod};
use gacgp::kernels::{oracle, KernelSpec};
use gacgp::manifold_io::{self, Manifest, SplitFractions};
use gacgp::saliency::{self, SaliencyConfig, SaliencyResult};
use gacgp::{dataset, ShapeRecord};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{Checks, ConfigError};
use crate::*;

const SALIENCY_SUFFIX: &str = ".saliency.json";

fn write(path: &Path, bytes: &[u8], artifacts: &mut Vec<PathBuf>) -> Result<()> {
    manifold_io::write_atomic(path, bytes)?;
    artifacts.push(path.to_path_buf());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// A manifest (`.json`) or a single mesh whose id is its file stem.
fn load_inputs(path: &Path) -> Result<Vec<ShapeRecord>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        Ok(Manifest::load(path)?.load_shapes()?)
    } else {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "shape".into());
        Ok(vec![ShapeRecord {
            id,
            class_label: None,
            manifold: manifold_io::load_manifold(path, None)?,
        }])
    }
}

impl SelectionArgs {
    fn check(&self, c: &mut Checks) {
        c.check(self.kappa.is_none_or(|k| k >= 1), "kappa: must be at least 1");
        c.check(self.k.is_none_or(|k| k >= 2), "k: must be at least 2");
        c.check(self.n_fre.is_none_or(|n| n >= 1), "n_fre: must be at least 1");
        c.check(
            self.frequency_scale.is_none_or(|s| s > 0.0 && s.is_finite()),
            "frequency_scale: must be positive",
        );
        c.check(self.jitter.is_none_or(|j| j > 0.0 && j.is_finite()), "jitter: must be positive");
        if let Some(m) = &self.method {
            c.check(m.parse::<GraphMethod>().is_ok(), format!("method: unknown graph method `{m}`"));
        }
        if let Some(k) = &self.kernel {
            if let Err(e) = k.validate() {
                c.0.push(format!("kernel: {e}"));
            }
        }
    }

    /// Settings after validation; `default_kappa` applies when κ is unset.
    fn to_config(&self, default_kappa: usize) -> SaliencyConfig {
        let base = SaliencyConfig::default();
        let mut kernel = self.kernel.clone().unwrap_or_else(|| {
            KernelSpec::gac_default(self.n_fre.unwrap_or(5), self.frequency_scale.unwrap_or(1.0))
        });
        if let Some(j) = self.jitter {
            kernel.jitter = j;
        }
        SaliencyConfig {
            k: self.k.unwrap_or(base.k),
            method: self.method.as_deref().map_or(base.method, |m| m.parse().expect("validated")),
            kernel,
            kappa: self.kappa.unwrap_or(default_kappa),
            keep_maps: false,
            normalize: !self.no_normalize.unwrap_or(false),
        }
    }
}

fn run_saliency(shapes: &[ShapeRecord], cfg: &SaliencyConfig) -> Result<Vec<SaliencyResult>> {
    shapes
        .par_iter()
        .map(|s| cfg.run(&s.manifold).with_context(|| format!("saliency on `{}`", s.id)))
        .collect()
}

pub fn saliency(a: &SaliencyArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    c.file("input", &a.input);
    c.require("out_dir", &a.out_dir);
    a.selection.check(&mut c);
    c.finish()?;
    let mut cfg = a.selection.to_config(30);
    cfg.keep_maps = a.maps.as_ref().is_some_and(|m| !m.is_empty());
    let shapes = load_inputs(a.input.as_ref().unwrap())?;
    let out_dir = a.out_dir.as_ref().unwrap();
    create_dir(out_dir)?;
    let results = run_saliency(&shapes, &cfg)?;
    let mut artifacts = Vec::new();
    let mut ids = Map::new();
    for (shape, mut res) in shapes.iter().zip(results) {
        for &j in a.maps.iter().flatten() {
            let map = saliency::saliency_map(&res, j).with_context(|| format!("map {j} of `{}`", shape.id))?;
            let mut m = shape.manifold.clone();
            m.set_scalar("saliency", map)?;
            let path = out_dir.join(format!("{}.map{j}.ply", shape.id));
            write(&path, manifold_io::colored_ply_string(&m, "saliency")?.as_bytes(), &mut artifacts)?;
        }
        res.score_maps = None;
        res.config.seed = a.seed;
        if !a.record_timings.unwrap_or(false) {
            res.per_iter_seconds.clear();
        }
        let path = out_dir.join(format!("{}{SALIENCY_SUFFIX}", shape.id));
        write(&path, serde_json::to_string_pretty(&res)?.as_bytes(), &mut artifacts)?;
        ids.insert(shape.id.clone(), json!(res.salient_ids));
    }
    Ok(Outcome {
        artifacts,
        results: json!({ "salient_ids": ids }),
    })
}

fn curves_for(shapes: &[ShapeRecord], fields: &[geometry::CurvatureField], ids: &[Vec<usize>], method: &str) -> Result<Vec<AcCurve>> {
    shapes
        .iter()
        .zip(fields)
        .zip(ids)
        .map(|((s, f), ids)| {
            let mut c = evaluation::ac_curve(ids, f)?;
            c.method_name = method.into();
            c.shape_id = s.id.clone();
            Ok(c)
        })
        .collect()
}

pub fn ac_eval(a: &AcEvalArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    c.file("input", &a.input);
    c.require("out_dir", &a.out_dir);
    c.require("seed", &a.seed);
    a.selection.check(&mut c);
    if let Some(g) = &a.scale_grid {
        c.check(!g.is_empty() && g.iter().all(|s| *s > 0.0 && s.is_finite()), "scale_grid: needs positive scales");
        c.check(a.selection.kernel.is_none(), "scale_grid: cannot be combined with an explicit kernel");
    }
    for b in a.baselines.iter().flatten() {
        c.check(["random", "rbf", "matern32"].contains(&b.as_str()), format!("baselines: unknown baseline `{b}`"));
    }
    c.check(a.baseline_lengthscale.is_none_or(|l| l > 0.0), "baseline_lengthscale: must be positive");
    c.finish()?;

    let seed = a.seed.unwrap();
    let timings = a.record_timings.unwrap_or(false);
    let shapes = load_inputs(a.input.as_ref().unwrap())?;
    let out_dir = a.out_dir.as_ref().unwrap();
    create_dir(out_dir)?;
    let base = a.selection.to_config(50);
    let kappa = base.kappa;
    let fields: Vec<geometry::CurvatureField> = shapes
        .par_iter()
        .map(|s| geometry::curvature(&s.manifold).with_context(|| format!("curvature of `{}`", s.id)))
        .collect::<Result<_>>()?;

    struct Method {
        name: String,
        curves: Vec<AcCurve>,
        seconds: Vec<Vec<f64>>,
    }
    let select = |cfg: &SaliencyConfig, name: &str| -> Result<Method> {
        let res = run_saliency(&shapes, cfg)?;
        let ids: Vec<Vec<usize>> = res.iter().map(|r| r.salient_ids.clone()).collect();
        Ok(Method {
            name: name.into(),
            curves: curves_for(&shapes, &fields, &ids, name)?,
            seconds: res.into_iter().map(|r| r.per_iter_seconds).collect(),
        })
    };
    let final_score = |m: &Method| -> Result<f64> {
        Ok(*evaluation::aggregate_curves(&m.curves, &[])?.log_of_mean.last().expect("κ ≥ 1"))
    };

    let mut grid_scores = Vec::new();
    let mut best: Option<(f64, f64, Method)> = None;
    match &a.scale_grid {
        Some(grid) => {
            for &s in grid {
                let mut cfg = base.clone();
                let jitter = cfg.kernel.jitter;
                cfg.kernel = KernelSpec::gac_default(a.selection.n_fre.unwrap_or(5), s).with_jitter(jitter);
                let m = select(&cfg, "gac")?;
                let score = final_score(&m)?;
                grid_scores.push(json!({ "scale": s, "ac_at_kappa": score }));
                if best.as_ref().is_none_or(|b| score > b.1) {
                    best = Some((s, score, m));
                }
            }
        }
        None => {
            let m = select(&base, "gac")?;
            let score = final_score(&m)?;
            best = Some((a.selection.frequency_scale.unwrap_or(1.0), score, m));
        }
    }
    let (scale, _, gac) = best.expect("at least one scale");
    let mut methods = vec![gac];

    let ls = a.baseline_lengthscale.unwrap_or(0.3);
    let default_baselines = vec!["random".to_string(), "rbf".into(), "matern32".into()];
    for b in a.baselines.as_ref().unwrap_or(&default_baselines) {
        let m = match b.as_str() {
            "random" => {
                let ids: Vec<Vec<usize>> = shapes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let n = s.manifold.vertex_count();
                        if kappa > n {
                            bail!("kappa = {kappa} exceeds vertex count {n} of `{}`", s.id);
                        }
                        Ok(evaluation::random_selection(n, kappa, gacgp::rng::derive_seed(seed, &[i as u64])))
                    })
                    .collect::<Result<_>>()?;
                Method {
                    name: "random".into(),
                    curves: curves_for(&shapes, &fields, &ids, "random")?,
                    seconds: Vec::new(),
                }
            }
            kind => {
                let mut cfg = base.clone();
                let kernel = if kind == "rbf" { KernelSpec::rbf(1.0, ls) } else { KernelSpec::matern32(1.0, ls) };
                cfg.kernel = kernel.with_jitter(base.kernel.jitter);
                select(&cfg, kind)?
            }
        };
        methods.push(m);
    }
    let bound: Vec<AcCurve> = shapes
        .iter()
        .zip(&fields)
        .map(|(s, f)| {
            let mut c = evaluation::max_ac_bound(f, kappa)?;
            c.method_name = "bound".into();
            c.shape_id = s.id.clone();
            Ok(c)
        })
        .collect::<Result<_>>()?;
    methods.push(Method {
        name: "bound".into(),
        curves: bound,
        seconds: Vec::new(),
    });

    let mut artifacts = Vec::new();
    let mut summary = Map::new();
    for m in &methods {
        let secs: &[Vec<f64>] = if timings { &m.seconds } else { &[] };
        let agg = evaluation::aggregate_curves(&m.curves, secs)?;
        let dir = out_dir.join(&m.name);
        create_dir(&dir)?;
        for (i, curve) in m.curves.iter().enumerate() {
            let s = secs.get(i).map(Vec::as_slice);
            write(&dir.join(format!("{}.csv", curve.shape_id)), curve.to_csv(s).as_bytes(), &mut artifacts)?;
        }
        let mut csv = String::from("kappa,ac_value,mean_of_logs,seconds\n");
        for k in 0..kappa {
            let sec = agg.mean_seconds.get(k).map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{sec}", k + 1, agg.log_of_mean[k], agg.mean_of_logs[k]);
        }
        let file = format!("{}.csv", m.name);
        write(&out_dir.join(&file), csv.as_bytes(), &mut artifacts)?;
        let mut entry = json!({
            "curve_file": file,
            "ac_at_kappa": agg.log_of_mean[kappa - 1],
            "mean_of_logs_at_kappa": agg.mean_of_logs[kappa - 1],
        });
        if !agg.mean_seconds.is_empty() {
            entry["mean_runtime_seconds"] = json!(agg.mean_seconds.iter().sum::<f64>() / agg.mean_seconds.len() as f64);
        }
        summary.insert(m.name.clone(), entry);
    }
    let report = json!({
        "kappa": kappa,
        "shapes": shapes.len(),
        "selected_scale": scale,
        "scale_grid": grid_scores,
        "methods": summary,
    });
    write(&out_dir.join("summary.json"), serde_json::to_string_pretty(&report)?.as_bytes(), &mut artifacts)?;
    Ok(Outcome { artifacts, results: report })
}

fn feature_kind(a: &FeaturesArgs) -> VertexFeatureKind {
    let eigen_count = a.eigen_count.unwrap_or(30);
    let energy_count = a.energy_count.unwrap_or(16);
    let scale_invariant = a.scale_invariant.unwrap_or(true);
    match a.kind.as_deref().unwrap_or("wks") {
        "curvature" => VertexFeatureKind::Curvature,
        "wks_curvature" => VertexFeatureKind::WksCurvature {
            eigen_count,
            energy_count,
            scale_invariant,
        },
        _ => VertexFeatureKind::Wks {
            eigen_count,
            energy_count,
            scale_invariant,
        },
    }
}

pub fn features(a: &FeaturesArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    c.file("input", &a.input);
    c.require("out", &a.out);
    a.selection.check(&mut c);
    if let Some(k) = &a.kind {
        c.check(["wks", "curvature", "wks_curvature"].contains(&k.as_str()), format!("kind: unknown feature kind `{k}`"));
    }
    c.check(a.eigen_count.is_none_or(|e| e >= 3), "eigen_count: must be at least 3");
    c.check(a.energy_count.is_none_or(|e| e >= 2), "energy_count: must be at least 2");
    if let Some(d) = &a.saliency_dir {
        c.check(d.is_dir(), format!("saliency_dir: {} is not a directory", d.display()));
    }
    c.finish()?;

    let shapes = load_inputs(a.input.as_ref().unwrap())?;
    let sal: Vec<SaliencyResult> = match &a.saliency_dir {
        Some(dir) => shapes
            .iter()
            .map(|s| {
                let p = dir.join(format!("{}{SALIENCY_SUFFIX}", s.id));
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            })
            .collect::<Result<_>>()?,
        None => run_saliency(&shapes, &a.selection.to_config(30))?,
    };
    let kind = feature_kind(a);
    let per_vertex: Vec<Vec<Vec<f64>>> = shapes
        .par_iter()
        .map(|s| features::vertex_features(&s.manifold, &kind).with_context(|| format!("features of `{}`", s.id)))
        .collect::<Result<_>>()?;
    let fm = features::assemble_shape_features(&shapes, &sal, &per_vertex)?;
    let out = a.out.as_ref().unwrap();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fm.save(out)?;
    let mut side = out.as_os_str().to_owned();
    side.push(".json");
    Ok(Outcome {
        artifacts: vec![out.clone(), PathBuf::from(side)],
        results: json!({
            "shapes": fm.rows.len(),
            "kappa": fm.kappa,
            "channels": fm.channels,
            "width": fm.width(),
        }),
    })
}

/// Feature rows restricted to the ids of `subset`, in feature-file order.
fn design_matrix(fm: &FeatureMatrix, subset: Option<&Path>) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let rows: Vec<usize> = match subset {
        None => (0..fm.rows.len()).collect(),
        Some(p) => {
            let m = Manifest::load(p)?;
            let index: HashMap<&str, usize> = fm.shape_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let mut missing = Vec::new();
            let mut keep: Vec<usize> = m
                .shapes
                .iter()
                .filter_map(|e| {
                    let hit = index.get(e.id.as_str()).copied();
                    if hit.is_none() {
                        missing.push(e.id.clone());
                    }
                    hit
                })
                .collect();
            if !missing.is_empty() {
                bail!("subset ids missing from the feature file: {}", missing.join(", "));
            }
            keep.sort_unstable();
            keep
        }
    };
    if rows.is_empty() {
        bail!("no feature rows selected");
    }
    let x = DMatrix::from_fn(rows.len(), fm.width(), |i, j| fm.rows[rows[i]][j]);
    Ok((rows, x))
}

fn labels_of(fm: &FeatureMatrix, rows: &[usize]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|&i| match fm.labels[i] {
            Some(l) if l >= 0 => Ok(l as usize),
            Some(l) => bail!("shape `{}` has negative label {l}", fm.shape_ids[i]),
            None => bail!("shape `{}` has no label", fm.shape_ids[i]),
        })
        .collect()
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    c.file("features", &a.features);
    c.require("out_dir", &a.out_dir);
    c.require("seed", &a.seed);
    if a.subset.is_some() {
        c.file("subset", &a.subset);
    }
    c.check(a.hidden_dims.iter().flatten().all(|&d| d >= 1), "hidden_dims: widths must be positive");
    c.check(a.class_count.is_none_or(|n| n >= 2), "class_count: must be at least 2");
    c.check(a.inducing.is_none_or(|m| m >= 1), "inducing: must be at least 1");
    c.check(a.n_fre.is_none_or(|n| n >= 1), "n_fre: must be at least 1");
    c.check(a.frequency_scale.is_none_or(|s| s > 0.0), "frequency_scale: must be positive");
    c.check(a.mc_samples.is_none_or(|s| s >= 1), "mc_samples: must be at least 1");
    c.check(a.learning_rate.is_none_or(|l| l >= 0.0), "learning_rate: must be nonnegative");
    c.check(a.decayed_learning_rate.is_none_or(|l| l >= 0.0), "decayed_learning_rate: must be nonnegative");
    c.check(a.batch_size.is_none_or(|b| b >= 1), "batch_size: must be at least 1");
    c.finish()?;

    let seed = a.seed.unwrap();
    let fm = FeatureMatrix::load(a.features.as_ref().unwrap())?;
    let (rows, x) = design_matrix(&fm, a.subset.as_deref())?;
    let y = labels_of(&fm, &rows)?;
    let observed = y.iter().max().map_or(0, |m| m + 1);
    let class_count = a.class_count.unwrap_or(observed.max(2));
    if observed > class_count {
        return Err(ConfigError {
            problems: vec![format!("class_count: {class_count} is below the largest label + 1 ({observed})")],
        }
        .into());
    }
    let mc = ModelConfig::default();
    let model_cfg = ModelConfig {
        hidden_dims: a.hidden_dims.clone().unwrap_or(mc.hidden_dims),
        class_count,
        inducing_count: a.inducing.unwrap_or(mc.inducing_count),
        n_fre: a.n_fre.unwrap_or(mc.n_fre),
        frequency_scale: a.frequency_scale.unwrap_or(mc.frequency_scale),
        mc_samples: a.mc_samples.unwrap_or(mc.mc_samples),
        seed,
        ..mc
    };
    let tc = TrainConfig::default();
    let train_cfg = TrainConfig {
        steps: a.steps.unwrap_or(tc.steps),
        learning_rate: a.learning_rate.unwrap_or(tc.learning_rate),
        decay_step: a.decay_step.unwrap_or(tc.decay_step),
        decayed_learning_rate: a.decayed_learning_rate.unwrap_or(tc.decayed_learning_rate),
        batch_size: a.batch_size,
        seed,
        ..tc
    };
    let mut model = DeepGpModel::init(&x, &model_cfg)?;
    let (state, trace) = deep_gp::train(&mut model, &x, &y, &train_cfg)?;
    let out_dir = a.out_dir.as_ref().unwrap();
    create_dir(out_dir)?;
    let mut artifacts = Vec::new();
    let ckpt = Checkpoint {
        model,
        step: state.step,
        trainer: Some(state),
    };
    let ckpt_path = out_dir.join("checkpoint.json");
    ckpt.save(&ckpt_path)?;
    artifacts.push(ckpt_path);
    let csv = deep_gp::trace_csv(&trace, a.record_timings.unwrap_or(false));
    write(&out_dir.join("trace.csv"), csv.as_bytes(), &mut artifacts)?;
    let probs = ckpt.model.predict(&x, ckpt.model.mc_samples)?;
    let acc = evaluation::accuracy(&evaluation::argmax_rows(&probs), &y);
    Ok(Outcome {
        artifacts,
        results: json!({
            "rows": x.nrows(),
            "input_dim": x.ncols(),
            "class_count": class_count,
            "initial_elbo": trace.first().map(|r| r.elbo),
            "final_elbo": trace.last().map(|r| r.elbo),
            "train_accuracy": acc,
        }),
    })
}

pub fn predict(a: &PredictArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    c.file("checkpoint", &a.checkpoint);
    c.file("features", &a.features);
    c.require("out", &a.out);
    if a.subset.is_some() {
        c.file("subset", &a.subset);
    }
    c.check(a.mc_samples.is_none_or(|s| s >= 1), "mc_samples: must be at least 1");
    c.finish()?;

    let ckpt = Checkpoint::load(a.checkpoint.as_ref().unwrap())?;
    let fm = FeatureMatrix::load(a.features.as_ref().unwrap())?;
    let (rows, x) = design_matrix(&fm, a.subset.as_deref())?;
    let probs = ckpt.model.predict(&x, a.mc_samples.unwrap_or(ckpt.model.mc_samples))?;
    let pred = evaluation::argmax_rows(&probs);
    let mut csv = String::from("shape_id,label,predicted");
    for k in 0..ckpt.model.class_count {
        let _ = write!(csv, ",p_{k}");
    }
    csv.push('\n');
    for ((&r, p), &yhat) in rows.iter().zip(&probs).zip(&pred) {
        let label = fm.labels[r].map(|l| l.to_string()).unwrap_or_default();
        let _ = write!(csv, "{},{label},{yhat}", fm.shape_ids[r]);
        for v in p {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let out = a.out.as_ref().unwrap();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut artifacts = Vec::new();
    write(out, csv.as_bytes(), &mut artifacts)?;
    let mut results = json!({ "rows": rows.len() });
    if rows.iter().all(|&r| fm.labels[r].is_some_and(|l| l >= 0)) {
        let y = labels_of(&fm, &rows)?;
        results["accuracy"] = json!(evaluation::accuracy(&pred, &y));
        results["confusion"] = json!(evaluation::confusion_matrix(&pred, &y, ckpt.model.class_count));
    }
    Ok(Outcome { artifacts, results })
}

pub fn kernel_verify(a: &KernelVerifyArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    let grid = |v: &Option<Vec<f64>>, d: &[f64]| v.clone().unwrap_or_else(|| d.to_vec());
    let rs = grid(&a.r, &[0.1, 0.5, 1.0, 2.0]);
    let omegas = grid(&a.omega, &[0.5, 1.0, 2.0]);
    let ts = grid(&a.t, &[0.0, 0.5]);
    c.check(!rs.is_empty() && rs.iter().all(|r| *r > 0.0), "r: values must be positive");
    c.check(!omegas.is_empty() && omegas.iter().all(|w| *w > 0.0), "omega: values must be positive");
    c.check(!ts.is_empty() && ts.iter().all(|t| t.is_finite()), "t: values must be finite");
    c.check(a.tol.is_none_or(|t| t > 0.0), "tol: must be positive");
    c.finish()?;
    let tol = a.tol.unwrap_or(1e-10);
    let mut rows = Vec::new();
    for &r in &rs {
        for &w in &omegas {
            for &t in &ts {
                rows.push(oracle::diffusion_oracle(r, w, t, tol)?);
            }
        }
    }
    let csv = oracle::to_csv(&rows);
    let mut artifacts = Vec::new();
    if let Some(out) = &a.out {
        write(out, csv.as_bytes(), &mut artifacts)?;
    }
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(Outcome {
        artifacts,
        results: json!({ "csv": csv, "rows": rows, "max_rel_error": worst }),
    })
}

pub fn bench(a: &BenchArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    c.file("input", &a.input);
    c.require("out_dir", &a.out_dir);
    a.selection.check(&mut c);
    for k in a.kernels.iter().flatten() {
        c.check(["gac", "rbf", "matern32"].contains(&k.as_str()), format!("kernels: unknown kernel `{k}`"));
    }
    c.check(a.baseline_lengthscale.is_none_or(|l| l > 0.0), "baseline_lengthscale: must be positive");
    c.finish()?;

    let shapes = load_inputs(a.input.as_ref().unwrap())?;
    let out_dir = a.out_dir.as_ref().unwrap();
    create_dir(out_dir)?;
    let base = a.selection.to_config(30);
    let ls = a.baseline_lengthscale.unwrap_or(0.3);
    let mut artifacts = Vec::new();
    let mut results = Map::new();
    for kind in a.kernels.clone().unwrap_or_else(|| vec!["gac".into()]) {
        let mut cfg = base.clone();
        cfg.kernel = match kind.as_str() {
            "rbf" => KernelSpec::rbf(1.0, ls).with_jitter(base.kernel.jitter),
            "matern32" => KernelSpec::matern32(1.0, ls).with_jitter(base.kernel.jitter),
            _ => base.kernel.clone(),
        };
        // Shapes run one after another so per-iteration timings are not shared.
        let mut per_shape = Vec::new();
        for s in &shapes {
            per_shape.push(cfg.run(&s.manifold).with_context(|| format!("bench on `{}`", s.id))?.per_iter_seconds);
        }
        let len = per_shape.iter().map(Vec::len).min().unwrap_or(0);
        let mean: Vec<f64> = (0..len)
            .map(|i| per_shape.iter().map(|s| s[i]).sum::<f64>() / per_shape.len() as f64)
            .collect();
        let mut csv = String::from("kappa,seconds\n");
        for (i, s) in mean.iter().enumerate() {
            let _ = writeln!(csv, "{},{s}", i + 1);
        }
        write(&out_dir.join(format!("bench_{kind}.csv")), csv.as_bytes(), &mut artifacts)?;
        results.insert(
            kind,
            json!({
                "mean_seconds_per_selection": mean.iter().sum::<f64>() / mean.len().max(1) as f64,
                "first": mean.first(),
                "last": mean.last(),
            }),
        );
    }
    Ok(Outcome {
        artifacts,
        results: Value::Object(results),
    })
}

pub fn split(a: &SplitArgs) -> Result<Outcome> {
    let mut c = Checks::default();
    c.file("manifest", &a.manifest);
    c.require("out_dir", &a.out_dir);
    c.require("seed", &a.seed);
    let f = SplitFractions {
        train: a.train.unwrap_or(0.9),
        val: a.val.unwrap_or(0.05),
        test: a.test.unwrap_or(0.05),
    };
    for (name, v) in [("train", f.train), ("val", f.val), ("test", f.test)] {
        c.check((0.0..=1.0).contains(&v), format!("{name}: fraction must lie in [0, 1]"));
    }
    c.check(((f.train + f.val + f.test) - 1.0).abs() <= 1e-9, "train/val/test: fractions must sum to 1");
    c.finish()?;

    let manifest = Manifest::load(a.manifest.as_ref().unwrap())?;
    let splits = dataset::make_splits(&manifest, &f, a.seed.unwrap())?;
    let out_dir = a.out_dir.as_ref().unwrap();
    create_dir(out_dir)?;
    let mut artifacts = Vec::new();
    let mut sizes = Map::new();
    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        // Absolute shape paths keep the split manifests valid wherever they are written.
        let mut part = part.clone();
        for s in &mut part.shapes {
            if let Ok(abs) = std::path::absolute(&s.path) {
                s.path = abs;
            }
        }
        let path = out_dir.join(format!("{name}.json"));
        write(&path, serde_json::to_string_pretty(&part)?.as_bytes(), &mut artifacts)?;
        sizes.insert(name.into(), json!(part.shapes.len()));
    }
    Ok(Outcome {
        artifacts,
        results: json!({ "sizes": sizes }),
    })
}
