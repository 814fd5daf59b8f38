//! Sheet irregularity and flattening maps from a 3D sheet sample to the plane.

mod tsne;

pub use tsne::{tsne_embed, TsneOptions, TsneResult};

use crate::geometry::{frame_from_axes, orient_by_first_point, pca3, Frame3, Vec2, Vec3};
use crate::spatial::{tree2, tree3};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Neighbours used by the local quadric and normal estimates, not counting the point itself.
pub const NEIGHBORS: usize = 12;
pub const MIN_IRREGULARITY_SAMPLES: usize = 30;
/// Sheets whose irregularity falls below this are treated as semi-flat.
pub const SEMI_FLAT: f64 = 0.01;
/// A local normal this close to the projection plane is ambiguous and not
/// counted as a flip.
const FLIP_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlattenMethod {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatteningMap {
    pub method: FlattenMethod,
    pub samples: Vec<Vec3>,
    /// Image of `samples[i]` is `forward[i]`.
    pub forward: Vec<Vec2>,
    /// PCA frame: centroid and first, second and third axes. Absent for t-SNE.
    pub frame: Option<Frame3>,
    /// Absent when the sample is too small for the curvature estimate.
    pub irregularity: Option<f64>,
    pub flatable: bool,
    /// Objective per iteration, t-SNE only.
    pub kl_history: Vec<f64>,
}

impl FlatteningMap {
    pub fn is_semi_flat(&self) -> bool {
        self.irregularity.is_some_and(|x| x < SEMI_FLAT)
    }

    /// Height of sample `i` above the projection plane (PCA only).
    pub fn height(&self, i: usize) -> Option<f64> {
        self.frame.map(|f| f.to_local(&self.samples[i]).z)
    }

    /// World point with plane coordinates `q` and height `h` (PCA only).
    pub fn lift(&self, q: &Vec2, h: f64) -> Option<Vec3> {
        self.frame.map(|f| f.to_world(&Vec3::new(q.x, q.y, h)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,x,y,z,u,v\n");
        for (i, (p, q)) in self.samples.iter().zip(&self.forward).enumerate() {
            s.push_str(&format!("{i},{},{},{},{},{}\n", p.x, p.y, p.z, q.x, q.y));
        }
        s
    }
}

fn diag3(points: &[Vec3]) -> f64 {
    crate::mesh::bbox_diag(points)
}

/// Principal curvatures of the local quadric through `points[center]`.
fn local_curvatures(points: &[Vec3], center: usize, nbrs: &[usize]) -> Result<(f64, f64)> {
    let p0 = points[center];
    let local: Vec<Vec3> = nbrs.iter().map(|&j| points[j]).collect();
    let pca = pca3(&local);
    if pca.variances[1] <= 1e-12 * pca.variances[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Flatten(format!("neighbourhood of sample {center} is collinear")));
    }
    let (e1, e2, e3) = (pca.axes[0], pca.axes[1], pca.axes[2]);
    // Monge patch w = a u^2 + b uv + c v^2 + d u + e v + f about p0.
    let a = DMatrix::from_fn(local.len(), 6, |r, k| {
        let q = local[r] - p0;
        let (u, v) = (q.dot(&e1), q.dot(&e2));
        [u * u, u * v, v * v, u, v, 1.0][k]
    });
    let rhs = DVector::from_iterator(local.len(), local.iter().map(|q| (q - p0).dot(&e3)));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax;
    let c = svd.solve(&rhs, tol).map_err(|e| Error::Flatten(e.to_string()))?;
    let (wu, wv) = (c[3], c[4]);
    let first = Matrix2::new(1.0 + wu * wu, wu * wv, wu * wv, 1.0 + wv * wv);
    let g = (1.0 + wu * wu + wv * wv).sqrt();
    let second = Matrix2::new(2.0 * c[0], c[1], c[1], 2.0 * c[2]) / g;
    let shape = first.try_inverse().ok_or_else(|| Error::Flatten("singular first fundamental form".into()))? * second;
    // Eigenvalues of a 2x2 matrix that is similar to a symmetric one.
    let tr = shape.trace();
    let det = shape.determinant();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    Ok((0.5 * tr + disc, 0.5 * tr - disc))
}

/// Curvature-based irregularity `2 atan(max_p kappa_p) / pi`, where
/// `kappa_p` is the mean absolute principal curvature of a quadric fitted
/// to the point and its nearest neighbours.
pub fn irregularity(samples: &[Vec3]) -> Result<f64> {
    if samples.len() < MIN_IRREGULARITY_SAMPLES {
        return Err(Error::Flatten(format!(
            "{} samples; irregularity needs at least {MIN_IRREGULARITY_SAMPLES}",
            samples.len()
        )));
    }
    let tree = tree3(samples);
    let mut kmax: f64 = 0.0;
    for (i, p) in samples.iter().enumerate() {
        let nbrs: Vec<usize> = tree.knn(&[p.x, p.y, p.z], NEIGHBORS + 1).into_iter().map(|(j, _)| j).collect();
        let (k1, k2) = local_curvatures(samples, i, &nbrs)?;
        kmax = kmax.max(0.5 * (k1.abs() + k2.abs()));
    }
    Ok(2.0 * kmax.atan() / std::f64::consts::PI)
}

/// No two samples land within `eps` of each other in the plane while being
/// more than `3 eps` apart in space, with `eps` a thousandth of the diagonal.
fn injective(samples: &[Vec3], image: &[Vec2]) -> bool {
    let eps3 = 1e-3 * diag3(samples);
    let lo = image.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = image.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let eps2 = 1e-3 * (hi - lo).norm();
    let tree = tree2(image);
    image.iter().enumerate().all(|(i, q)| {
        tree.within(&[q.x, q.y], eps2)
            .into_iter()
            .all(|j| j == i || (samples[i] - samples[j]).norm() <= 3.0 * eps3)
    })
}

/// Local normals from neighbourhood PCA, made consistent by propagation over
/// the nearest-neighbour graph.
fn consistent_normals(samples: &[Vec3]) -> Vec<Vec3> {
    let n = samples.len();
    let k = NEIGHBORS.min(n - 1);
    let tree = tree3(samples);
    let nbrs: Vec<Vec<usize>> = samples
        .iter()
        .map(|p| tree.knn(&[p.x, p.y, p.z], k + 1).into_iter().map(|(j, _)| j).collect())
        .collect();
    let mut normals: Vec<Vec3> = nbrs
        .iter()
        .map(|nb| {
            let local: Vec<Vec3> = nb.iter().map(|&j| samples[j]).collect();
            pca3(&local).axes[2]
        })
        .collect();
    let mut adj: Vec<Vec<usize>> = nbrs.clone();
    for (i, nb) in nbrs.iter().enumerate() {
        for &j in nb {
            if j != i {
                adj[j].push(i);
            }
        }
    }
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    if normals[j].dot(&normals[i]) < 0.0 {
                        normals[j] = -normals[j];
                    }
                    queue.push_back(j);
                }
            }
        }
    }
    normals
}

fn orientation_preserved(samples: &[Vec3], image: &[Vec2], e3: &Vec3, triangles: Option<&[[usize; 3]]>) -> bool {
    let signs: Vec<f64> = match triangles {
        Some(tris) => tris
            .iter()
            .filter_map(|t| {
                let normal = (samples[t[1]] - samples[t[0]]).cross(&(samples[t[2]] - samples[t[0]]));
                let up = normal.dot(e3);
                if up.abs() <= FLIP_MARGIN * normal.norm() {
                    return None;
                }
                // Consistently wound triangles must all keep one winding in the plane.
                let (a, b, c) = (image[t[0]], image[t[1]], image[t[2]]);
                Some((b - a).perp(&(c - a)).signum())
            })
            .collect(),
        None => consistent_normals(samples)
            .iter()
            .filter(|n| n.dot(e3).abs() > FLIP_MARGIN)
            .map(|n| n.dot(e3).signum())
            .collect(),
    };
    let pos = signs.iter().filter(|&&s| s > 0.0).count();
    pos == signs.len() || pos == 0
}

/// Orthogonal projection onto the first principal plane.
pub fn pca_flatten(samples: &[Vec3]) -> Result<FlatteningMap> {
    pca_flatten_with(samples, None)
}

/// As [`pca_flatten`]; when `triangles` over the samples are given, the
/// orientation test uses their signed areas instead of estimated normals.
pub fn pca_flatten_with(samples: &[Vec3], triangles: Option<&[[usize; 3]]>) -> Result<FlatteningMap> {
    if samples.len() < 3 {
        return Err(Error::Flatten("need at least 3 samples".into()));
    }
    let pca = pca3(samples);
    if !(pca.variances[1] > 1e-12 * pca.variances[0]) {
        return Err(Error::Flatten("sample covariance is rank-deficient".into()));
    }
    let tol = 1e-3 * diag3(samples);
    let e1 = orient_by_first_point(pca.axes[0], &pca.mean, samples, tol);
    let e3 = orient_by_first_point(pca.axes[2], &pca.mean, samples, tol);
    let frame = Frame3 { origin: pca.mean, axes: frame_from_axes(e1, e3) };
    let forward: Vec<Vec2> = samples.iter().map(|p| frame.to_local(p).xy()).collect();
    let flatable = injective(samples, &forward) && orientation_preserved(samples, &forward, &frame.axis(2), triangles);
    Ok(FlatteningMap {
        method: FlattenMethod::Pca,
        samples: samples.to_vec(),
        forward,
        frame: Some(frame),
        irregularity: irregularity(samples).ok(),
        flatable,
        kl_history: Vec::new(),
    })
}

/// Exact t-SNE embedding of the sample into the plane.
pub fn tsne_flatten(samples: &[Vec3], perplexity: f64, iterations: usize, seed: u64) -> Result<FlatteningMap> {
    let opts = TsneOptions { perplexity, iterations, seed, ..TsneOptions::default() };
    let rows: Vec<Vec<f64>> = samples.iter().map(|p| vec![p.x, p.y, p.z]).collect();
    let res = tsne_embed(&rows, &opts)?;
    let flatable = injective(samples, &res.embedding);
    Ok(FlatteningMap {
        method: FlattenMethod::Tsne,
        samples: samples.to_vec(),
        forward: res.embedding,
        frame: None,
        irregularity: irregularity(samples).ok(),
        flatable,
        kl_history: res.kl_history,
    })
}
