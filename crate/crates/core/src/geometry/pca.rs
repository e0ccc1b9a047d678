//! Two-component PCA by power iteration with deflation, for exporting latent
//! vectors as 2-D plot coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 20_000;
const SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Variance (1/n normalisation) captured by each axis.
    pub eigenvalues: [f64; 2],
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

pub fn project_2d(latents: &[Vec<f64>]) -> Result<Projection> {
    let n = latents.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("projection needs at least 2 samples, got {n}")));
    }
    let d = latents[0].len();
    if latents.iter().any(|v| v.len() != d) {
        return Err(Error::Dimension("latent vectors have differing widths".into()));
    }
    let mut mean = vec![0.0; d];
    for v in latents {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = latents
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut cov = vec![0.0; d * d];
    for v in &centered {
        for i in 0..d {
            if v[i] == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += v[i] * v[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let c = cov[i * d + j] / n as f64;
            cov[i * d + j] = c;
            cov[j * d + i] = c;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let first = power_iteration(&cov, d, &[], &mut rng);
    let second = if d > 1 {
        power_iteration(&cov, d, std::slice::from_ref(&first.0), &mut rng)
    } else {
        (vec![0.0; d], 0.0)
    };

    let coords = centered
        .iter()
        .map(|v| [dot(v, &first.0), dot(v, &second.0)])
        .collect();
    Ok(Projection {
        coords,
        eigenvalues: [first.1, second.1],
        components: [first.0, second.0],
        mean,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, bi)| *x -= p * bi);
    }
}

/// Dominant eigenpair of the symmetric matrix restricted to the orthogonal
/// complement of `basis`. Signs are fixed so the largest-magnitude entry is
/// positive.
fn power_iteration(mat: &[f64], d: usize, basis: &[Vec<f64>], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, basis);
    if normalize(&mut v) == 0.0 {
        return (vec![0.0; d], 0.0);
    }
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let mut w: Vec<f64> = (0..d).map(|i| dot(&mat[i * d..(i + 1) * d], &v)).collect();
        orthogonalize(&mut w, basis);
        let norm = normalize(&mut w);
        if norm <= f64::EPSILON * 1e3 {
            // remaining spectrum is numerically zero; keep the orthogonal
            // direction we already have
            lambda = 0.0;
            break;
        }
        // w and v may differ by sign only at convergence
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if delta < TOLERANCE {
            break;
        }
    }
    let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let mv: Vec<f64> = (0..d).map(|i| dot(&mat[i * d..(i + 1) * d], &v)).collect();
    let rayleigh = dot(&v, &mv);
    (v, if lambda == 0.0 { rayleigh.max(0.0) } else { rayleigh })
}
