//! Quadrature check of the damped-cosine kernel against the time-harmonic
//! heat equation in ℝ³.
//!
//! For the heat Green's function `G(r, s) = (4πs)^{-3/2} e^{−r²/4s}` the
//! cosine and sine transforms in `s` have the closed forms
//! `e^{−rλ}cos(rλ)/(4πr)` and `e^{−rλ}sin(rλ)/(4πr)` with `λ = √(ω/2)`.
//! The oracle integrates them numerically (adaptive Gauss–Kronrod over
//! half-periods, then Wynn's epsilon on the partial sums of the oscillatory
//! tail) and compares.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) to an absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
        let (v, e) = gk15(f, a, b);
        if e <= tol || (e <= 1e-15 * v.abs()) {
            return Ok(v);
        }
        if depth == 0 {
            return Err(Error::Quadrature(format!("no convergence on [{a}, {b}], error {e:e}")));
        }
        let m = 0.5 * (a + b);
        Ok(rec(f, a, m, tol / 2.0, depth - 1)? + rec(f, m, b, tol / 2.0, depth - 1)?)
    }
    rec(f, a, b, abs_tol, 60)
}

/// Wynn's epsilon algorithm; returns the highest-order even-column estimate.
pub fn wynn_epsilon(seq: &[f64]) -> f64 {
    let n = seq.len();
    if n < 3 {
        return *seq.last().unwrap_or(&0.0);
    }
    let mut prev = vec![0.0; n + 1];
    let mut cur = seq.to_vec();
    let mut best = seq[n - 1];
    for col in 1..n {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            if d == 0.0 {
                return best;
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        if col % 2 == 0 {
            if let Some(&v) = next.last() {
                if !v.is_finite() {
                    return best;
                }
                best = v;
            }
        }
        prev = cur;
        cur = next;
    }
    best
}

pub fn heat_green(r: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    (4.0 * PI * s).powf(-1.5) * (-r * r / (4.0 * s)).exp()
}

/// `∫₀^∞ trig(ωs)·G(r,s) ds` via half-period panels and tail extrapolation.
fn oscillatory_transform(r: f64, omega: f64, sine: bool, rel_tol: f64) -> Result<f64> {
    let f = |s: f64| {
        let w = if sine { (omega * s).sin() } else { (omega * s).cos() };
        w * heat_green(r, s)
    };
    let period = PI / omega;
    let scale = 1.0 / (4.0 * PI * r);
    let abs_tol = 1e-3 * rel_tol * scale;
    let mut partial = Vec::new();
    let mut acc = 0.0;
    let mut last_est = f64::NAN;
    const MIN_PANELS: usize = 12;
    let max_panels = 400 + (r * r / period).ceil() as usize;
    for k in 0..max_panels {
        acc += integrate(&f, k as f64 * period, (k + 1) as f64 * period, abs_tol / 8.0)?;
        partial.push(acc);
        // Only extrapolate once the panels are past the Green's function peak at s = r²/6.
        let past_peak = (k + 1) as f64 * period >= r * r;
        if past_peak && k + 1 >= MIN_PANELS && (k + 1) % 4 == 0 {
            // Wynn on the most recent partial sums.
            let start = partial.len().saturating_sub(24);
            let est = wynn_epsilon(&partial[start..]);
            if (est - last_est).abs() <= 1e-2 * rel_tol * scale {
                return Ok(est);
            }
            last_est = est;
        }
    }
    Err(Error::Quadrature(format!(
        "tail extrapolation did not settle for r={r}, ω={omega}"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub r: f64,
    pub omega: f64,
    pub t: f64,
    pub quadrature: f64,
    pub analytic: f64,
    /// The phase-shifted form `(1/4π)e^{−rλ}cos(rλ + ωt)` without the radial factor.
    pub alt_form: f64,
    pub rel_error: f64,
}

/// Numerically evaluate `cos(ωt)f̂_c + sin(ωt)f̂_s` and the closed form
/// `e^{−rλ}cos(rλ − ωt)/(4πr)`.
pub fn diffusion_oracle(r: f64, omega: f64, t: f64, quadrature_tol: f64) -> Result<OracleReport> {
    if !(r > 0.0) || !(omega > 0.0) {
        return Err(Error::invalid("diffusion oracle needs r > 0 and ω > 0"));
    }
    let fc = oscillatory_transform(r, omega, false, quadrature_tol)?;
    let fs = oscillatory_transform(r, omega, true, quadrature_tol)?;
    let quadrature = (omega * t).cos() * fc + (omega * t).sin() * fs;
    let lam = (omega / 2.0).sqrt();
    let analytic = (-r * lam).exp() * (r * lam - omega * t).cos() / (4.0 * PI * r);
    let alt_form = (-r * lam).exp() * (r * lam + omega * t).cos() / (4.0 * PI);
    let rel_error = (quadrature - analytic).abs() / analytic.abs().max(f64::MIN_POSITIVE);
    Ok(OracleReport {
        r,
        omega,
        t,
        quadrature,
        analytic,
        alt_form,
        rel_error,
    })
}

pub const CSV_HEADER: &str = "r,omega,t,quadrature,analytic,alt_form,rel_error";

pub fn to_csv(rows: &[OracleReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.3e}",
            r.r, r.omega, r.t, r.quadrature, r.analytic, r.alt_form, r.rel_error
        );
    }
    s
}
