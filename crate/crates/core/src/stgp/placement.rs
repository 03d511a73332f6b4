//! Inducing-point layouts over a rectangular operating box.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::config("operating box bounds have mismatched dimensions"));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(u > l)) {
        return Err(Error::config("operating box needs upper > lower in every dimension"));
    }
    Ok(())
}

/// Full tensor grid with `counts[d]` evenly spaced points per dimension
/// (cell centres when `counts[d] == 1`).
pub fn uniform_grid(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<DMatrix<f64>> {
    check_box(lower, upper)?;
    if counts.len() != lower.len() || counts.contains(&0) {
        return Err(Error::config("grid counts must be positive, one per dimension"));
    }
    let total: usize = counts.iter().product();
    let dim = lower.len();
    let mut out = DMatrix::<f64>::zeros(total, dim);
    for idx in 0..total {
        let mut rem = idx;
        for d in 0..dim {
            let c = counts[d];
            let k = rem % c;
            rem /= c;
            out[(idx, d)] = if c == 1 {
                0.5 * (lower[d] + upper[d])
            } else {
                lower[d] + (upper[d] - lower[d]) * k as f64 / (c - 1) as f64
            };
        }
    }
    Ok(out)
}

/// Latin-hypercube sample of `m` points, deterministic in `seed`.
pub fn latin_hypercube(lower: &[f64], upper: &[f64], m: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_box(lower, upper)?;
    if m == 0 {
        return Err(Error::config("need at least one inducing point"));
    }
    let dim = lower.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::<f64>::zeros(m, dim);
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        for (i, s) in strata.into_iter().enumerate() {
            let u: f64 = rng.random();
            let frac = (s as f64 + u) / m as f64;
            out[(i, d)] = lower[d] + (upper[d] - lower[d]) * frac;
        }
    }
    Ok(out)
}
