//! Exact t-SNE into two dimensions.

use crate::geometry::Vec2;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub const MAX_SAMPLES: usize = 5000;
const ENTROPY_TOL: f64 = 1e-5;
const SEARCH_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// Defaults to `n / 12` when absent.
    pub learning_rate: Option<f64>,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    pub embedding: Vec<Vec2>,
    /// KL(P || Q) after each iteration, always against the unexaggerated P.
    pub kl_history: Vec<f64>,
}

/// Conditional affinities of row `i` whose entropy matches `ln(perplexity)`.
fn row_affinities(d2: &[f64], i: usize, target: f64) -> Result<Vec<f64>> {
    let n = d2.len();
    let (mut beta, mut lo, mut hi) = (1.0, 0.0f64, f64::INFINITY);
    let mut p = vec![0.0; n];
    // Shift by the nearest distance so the exponentials cannot all underflow.
    let dmin = d2.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    for _ in 0..SEARCH_STEPS {
        let mut sum = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-(d2[j] - dmin) * beta).exp() };
            sum += p[j];
        }
        let mut h = 0.0;
        for j in 0..n {
            if j != i {
                p[j] /= sum;
                h += beta * (d2[j] - dmin) * p[j];
            }
        }
        h += sum.ln();
        let diff = h - target;
        if diff.abs() < ENTROPY_TOL {
            return Ok(p);
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    Err(Error::Flatten(format!("perplexity search did not converge for sample {i}")))
}

pub fn tsne_embed(data: &[Vec<f64>], opts: &TsneOptions) -> Result<TsneResult> {
    let n = data.len();
    if n < 4 {
        return Err(Error::Flatten("t-SNE needs at least 4 samples".into()));
    }
    if n > MAX_SAMPLES {
        return Err(Error::Flatten(format!("{n} samples exceed the exact t-SNE limit of {MAX_SAMPLES}")));
    }
    if !(opts.perplexity > 1.0) || opts.perplexity >= n as f64 / 3.0 {
        return Err(Error::Flatten(format!("perplexity {} must lie in (1, n/3)", opts.perplexity)));
    }
    let d2: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| data[i].iter().zip(&data[j]).map(|(a, b)| (a - b) * (a - b)).sum()).collect())
        .collect();
    let target = opts.perplexity.ln();
    let cond: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| row_affinities(&d2[i], i, target)).collect::<Result<_>>()?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let lr = opts.learning_rate.unwrap_or(n as f64 / 12.0);
    let mut kl_history = Vec::with_capacity(opts.iterations);
    let mut num = vec![0.0; n * n];
    for it in 0..opts.iterations {
        let early = it < opts.exaggeration_iterations;
        let ex = if early { opts.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let mut zsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                    1.0 / (1.0 + dx * dx + dy * dy)
                };
                num[i * n + j] = v;
                zsum += v;
            }
        }
        let mut kl = 0.0;
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (pij, w) = (p[i * n + j], num[i * n + j]);
                let q = (w / zsum).max(1e-300);
                kl += pij * (pij / q).ln();
                let m = (ex * pij - q) * w;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let grad = 4.0 * g[d];
                gains[i][d] = if (grad > 0.0) != (update[i][d] > 0.0) { gains[i][d] + 0.2 } else { gains[i][d] * 0.8 };
                gains[i][d] = gains[i][d].max(0.01);
                update[i][d] = momentum * update[i][d] - lr * gains[i][d] * grad;
            }
        }
        for i in 0..n {
            y[i][0] += update[i][0];
            y[i][1] += update[i][1];
        }
        let mean = y.iter().fold([0.0; 2], |a, q| [a[0] + q[0], a[1] + q[1]]);
        for q in &mut y {
            q[0] -= mean[0] / n as f64;
            q[1] -= mean[1] / n as f64;
        }
        kl_history.push(kl);
    }
    Ok(TsneResult { embedding: y.into_iter().map(|q| Vec2::new(q[0], q[1])).collect(), kl_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatten::tsne_flatten;
    use crate::geometry::Vec3;

    fn swiss(n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let t = 1.5 + 3.0 * (i % 20) as f64 / 19.0;
                let h = (i / 20) as f64 * 0.3;
                Vec3::new(t * t.cos(), h, t * t.sin())
            })
            .collect()
    }

    #[test]
    fn deterministic_and_decreasing() {
        let pts = swiss(120);
        let a = tsne_flatten(&pts, 10.0, 1000, 7).unwrap();
        let b = tsne_flatten(&pts, 10.0, 1000, 7).unwrap();
        assert_eq!(a.forward, b.forward);
        assert_eq!(a.forward.len(), pts.len());
        assert_eq!(a.kl_history.len(), 1000);
        assert!(a.kl_history[999] <= a.kl_history[249], "{} > {}", a.kl_history[999], a.kl_history[249]);
    }

    #[test]
    fn affinity_rows_hit_the_perplexity() {
        let pts = swiss(60);
        let d2: Vec<f64> = pts.iter().map(|q| (q - pts[3]).norm_squared()).collect();
        let p = row_affinities(&d2, 3, 8f64.ln()).unwrap();
        let h: f64 = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        assert!((h.exp() - 8.0).abs() < 1e-3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configurations() {
        let pts = swiss(30);
        assert!(tsne_flatten(&pts, 10.0, 10, 0).is_err());
        assert!(tsne_flatten(&pts[..3], 1.5, 10, 0).is_err());
        // Identical points admit no bandwidth with the requested entropy.
        let same = vec![Vec3::zeros(); 40];
        let mut same2 = same.clone();
        same2[0] = Vec3::new(1.0, 0.0, 0.0);
        assert!(tsne_flatten(&same2, 5.0, 10, 0).is_err());
    }
}
