//! Seeded train/val/test partitioning of manifests.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::manifold_io::{Manifest, SplitFractions};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Partition sizes by largest remainder, so they always sum to `n`.
pub fn split_sizes(n: usize, f: &SplitFractions) -> Result<[usize; 3]> {
    let fr = [f.train, f.val, f.test];
    if fr.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::invalid("split fractions must lie in [0, 1]"));
    }
    let total: f64 = fr.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
    }
    let nonzero = fr.iter().filter(|&&x| x > 0.0).count();
    if n < nonzero {
        return Err(Error::invalid(format!(
            "{n} shapes cannot fill {nonzero} non-empty partitions"
        )));
    }
    let exact: Vec<f64> = fr.iter().map(|x| x * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fr[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    // Every non-empty fraction gets at least one shape.
    for i in 0..3 {
        if fr[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    Ok([sizes[0], sizes[1], sizes[2]])
}

/// Seeded shuffle of `0..n` cut into train/val/test index lists.
pub fn split_indices(n: usize, fractions: &SplitFractions, seed: u64) -> Result<[Vec<usize>; 3]> {
    let [a, b, _] = split_sizes(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[0x5b117]));
    Ok([idx[..a].to_vec(), idx[a..a + b].to_vec(), idx[a + b..].to_vec()])
}

/// Seeded shuffle followed by a contiguous partition.
pub fn make_splits(manifest: &Manifest, fractions: &SplitFractions, seed: u64) -> Result<Splits> {
    manifest.validate()?;
    let parts = split_indices(manifest.shapes.len(), fractions, seed)?;
    let part = |ids: &[usize]| Manifest {
        shapes: ids.iter().map(|&i| manifest.shapes[i].clone()).collect(),
        seed: Some(seed),
        split: Some(*fractions),
    };
    Ok(Splits {
        train: part(&parts[0]),
        val: part(&parts[1]),
        test: part(&parts[2]),
    })
}
