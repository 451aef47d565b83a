use super::spectral::SpectralBasis;
use crate::error::{Error, Result};

/// Relative threshold under which an eigenvalue counts as zero.
const ZERO_EIGENVALUE: f64 = 1e-8;
/// Gaussian width in units of the energy grid spacing.
const SIGMA_IN_STEPS: f64 = 7.0;

/// Indices of nonzero eigenvalues and the (possibly rescaled) log energies.
fn log_spectrum(basis: &SpectralBasis, scale_invariant: bool) -> Result<(Vec<usize>, Vec<f64>)> {
    let max = basis.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..basis.eigenvalues.len())
        .filter(|&k| basis.eigenvalues[k] > ZERO_EIGENVALUE * max)
        .collect();
    if keep.len() < 2 {
        return Err(Error::invalid("WKS needs at least two nonzero eigenvalues"));
    }
    let l2 = basis.eigenvalues[keep[0]];
    let logs: Vec<f64> = keep
        .iter()
        .map(|&k| {
            let l = basis.eigenvalues[k];
            if scale_invariant { (l / l2).ln() } else { l.ln() }
        })
        .collect();
    let (lo, hi) = (logs[0], logs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if !(hi > lo) {
        return Err(Error::invalid("degenerate spectrum: all nonzero eigenvalues equal"));
    }
    Ok((keep, logs))
}

/// `w[e][k]`: per-energy Gaussian weights over the nonzero eigenvalues, each row summing to 1.
pub fn energy_weights(basis: &SpectralBasis, energy_count: usize, scale_invariant: bool) -> Result<Vec<Vec<f64>>> {
    if energy_count < 2 {
        return Err(Error::invalid("energy_count must be at least 2"));
    }
    let (_, logs) = log_spectrum(basis, scale_invariant)?;
    let lo = logs[0];
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = (hi - lo) / (energy_count - 1) as f64;
    let sigma = SIGMA_IN_STEPS * step;
    Ok((0..energy_count)
        .map(|j| {
            let e = lo + j as f64 * step;
            let raw: Vec<f64> = logs
                .iter()
                .map(|l| (-(e - l).powi(2) / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        })
        .collect())
}

/// Wave kernel signature per vertex on a log-energy grid over `[log λ₂, log λ_max]`.
///
/// With `scale_invariant`, eigenvalues are divided by the first nonzero one and
/// squared eigenfunctions are multiplied by the total area, which cancels a
/// uniform rescaling of the shape.
pub fn wks_features(basis: &SpectralBasis, energy_count: usize, scale_invariant: bool) -> Result<Vec<Vec<f64>>> {
    let weights = energy_weights(basis, energy_count, scale_invariant)?;
    let (keep, _) = log_spectrum(basis, scale_invariant)?;
    let area: f64 = if scale_invariant {
        basis.mass_weights.iter().sum()
    } else {
        1.0
    };
    let n = basis.eigenfunctions.nrows();
    Ok((0..n)
        .map(|x| {
            let sq: Vec<f64> = keep
                .iter()
                .map(|&k| basis.eigenfunctions[(x, k)].powi(2) * area)
                .collect();
            weights
                .iter()
                .map(|w| w.iter().zip(&sq).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect())
}
