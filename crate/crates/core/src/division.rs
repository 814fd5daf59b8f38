//! Top/bottom division of a boundary by spectral clustering, and the crest loop.

use crate::geometry::{orient_by_first_point, pca3, Vec3};
use crate::mesh::{geodesic_distances, GeodesicOptions, TriangleMesh};
use crate::{Error, Result};
use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Largest vertex count divided without decimation.
pub const MAX_DIVISION_VERTICES: usize = 3000;
/// Above this size the eigenvector comes from Lanczos iteration instead of a dense solve.
const DENSE_LIMIT: usize = 700;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Top,
    Bottom,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Top => Side::Bottom,
            Side::Bottom => Side::Top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityVariant {
    /// `exp(δ ⟨n_i, n_j⟩ d_ij)`.
    #[default]
    Literal,
    /// `exp(-δ (1 - ⟨n_i, n_j⟩) d_ij)`.
    Decaying,
}

impl std::str::FromStr for AffinityVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(AffinityVariant::Literal),
            "decaying" => Ok(AffinityVariant::Decaying),
            _ => Err(Error::Config(format!("unknown affinity variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDivision {
    pub labels: Vec<Side>,
    /// Top-side vertices bordering the bottom part, counter-clockwise seen
    /// from outside the top part.
    pub crest: Vec<usize>,
    pub delta: f64,
}

impl BoundaryDivision {
    /// Majority label of a face's three vertices.
    pub fn face_side(&self, mesh: &TriangleMesh, f: usize) -> Side {
        let tops = mesh.faces()[f].iter().filter(|&&v| self.labels[v] == Side::Top).count();
        if tops >= 2 {
            Side::Top
        } else {
            Side::Bottom
        }
    }

    pub fn swapped(&self, mesh: &TriangleMesh) -> Result<BoundaryDivision> {
        let labels: Vec<Side> = self.labels.iter().map(|s| s.flip()).collect();
        division_from_labels(mesh, labels, self.delta)
    }

    pub fn labels_csv(&self) -> String {
        let mut s = String::from("vertex_index,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            s.push_str(&format!("{i},{}\n", if *l == Side::Top { "top" } else { "bottom" }));
        }
        s
    }

    pub fn crest_json(&self) -> String {
        serde_json::json!({ "crest": self.crest }).to_string()
    }
}

/// Spectral top/bottom split of the boundary.
pub fn divide_boundary(mesh: &TriangleMesh, delta: f64, variant: AffinityVariant) -> Result<BoundaryDivision> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Division(format!("delta must be positive, got {delta}")));
    }
    let nv = mesh.vertex_count();
    let samples: Vec<usize> = if nv <= MAX_DIVISION_VERTICES {
        (0..nv).collect()
    } else {
        farthest_point_samples(mesh.vertices(), MAX_DIVISION_VERTICES)
    };
    let dist = geodesic_distances(mesh, &samples, GeodesicOptions::default())?;
    let n = samples.len();
    let dmax = (0..n)
        .flat_map(|i| samples.iter().map(move |&j| (i, j)))
        .map(|(i, j)| dist.get(i, j))
        .fold(0.0, f64::max);
    if !(dmax > 0.0) {
        return Err(Error::Division("degenerate geodesic distances".into()));
    }
    let normals = mesh.normals();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ni = normals[samples[i]];
            samples
                .iter()
                .map(|&vj| {
                    let c = ni.dot(&normals[vj]);
                    let d = dist.get(i, vj) / dmax;
                    match variant {
                        AffinityVariant::Literal => (delta * c * d).exp(),
                        AffinityVariant::Decaying => (-delta * (1.0 - c) * d).exp(),
                    }
                })
                .collect()
        })
        .collect();
    let w = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let fiedler = fiedler_vector(&w)?;

    // Entries at rounding level (vertices on a symmetry plane) go to the top
    // side so the split does not depend on floating-point noise.
    let tie = 1e-8 * fiedler.amax();
    let mut labels_s: Vec<Side> = fiedler.iter().map(|&x| if x >= -tie { Side::Top } else { Side::Bottom }).collect();
    let mut labels = if n == nv {
        std::mem::take(&mut labels_s)
    } else {
        (0..nv)
            .map(|v| {
                let best = (0..n).min_by(|&a, &b| dist.get(a, v).total_cmp(&dist.get(b, v))).unwrap();
                labels_s[best]
            })
            .collect()
    };
    clean_labels(mesh, &mut labels)?;
    canonical_naming(mesh, &mut labels);
    division_from_labels(mesh, labels, delta)
}

/// Eigenvector of the second-smallest eigenvalue of the normalized Laplacian
/// of `w` (symmetrized first).
fn fiedler_vector(w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = w.nrows();
    if n < 3 {
        return Err(Error::Division("too few samples".into()));
    }
    let w = (w + w.transpose()) * 0.5;
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if deg.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Division("affinity has an isolated vertex".into()));
    }
    let s: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * s[i] * s[j]);
    let top = DVector::from_iterator(n, deg.iter().map(|d| d.sqrt())).normalize();
    if n <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        return Ok(eig.eigenvectors.column(order[1]).into_owned());
    }
    lanczos_second(&m, &top)
}

/// Largest eigenpair of `m` on the orthogonal complement of `top`, by Lanczos
/// iteration with full reorthogonalization.
fn lanczos_second(m: &DMatrix<f64>, top: &DVector<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    let max_iter = n.min(600);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f1ed);
    let project = |v: &mut DVector<f64>, basis: &[DVector<f64>]| {
        for _ in 0..2 {
            let c = top.dot(v);
            v.axpy(-c, top, 1.0);
            for q in basis {
                let c = q.dot(v);
                v.axpy(-c, q, 1.0);
            }
        }
    };
    let mut q = DVector::from_iterator(n, (0..n).map(|_| rng.random::<f64>() - 0.5));
    project(&mut q, &[]);
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let k = basis.len() - 1;
        let mut v = m * &basis[k];
        let a = basis[k].dot(&v);
        alpha.push(a);
        project(&mut v, &basis);
        let b = v.norm();
        let k1 = alpha.len();
        if k1 % 10 == 0 || b < 1e-12 || k1 >= max_iter {
            let t = DMatrix::from_fn(k1, k1, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let best = (0..k1).max_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y])).unwrap();
            let s = eig.eigenvectors.column(best);
            let resid = (b * s[k1 - 1]).abs();
            if resid < 1e-11 || b < 1e-12 || k1 >= max_iter {
                if resid > 1e-6 {
                    return Err(Error::Division(format!("eigensolver did not converge (residual {resid:.2e})")));
                }
                debug!("lanczos converged after {k1} steps, residual {resid:.2e}");
                let mut y = DVector::zeros(n);
                for (i, qi) in basis.iter().enumerate() {
                    y.axpy(s[i], qi, 1.0);
                }
                return Ok(y);
            }
        }
        beta.push(b);
        basis.push(v / b);
    }
}

fn farthest_point_samples(points: &[Vec3], count: usize) -> Vec<usize> {
    let mut chosen = vec![0usize];
    let mut d: Vec<f64> = points.iter().map(|p| (p - points[0]).norm_squared()).collect();
    while chosen.len() < count {
        let (far, _) = d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap();
        chosen.push(far);
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min((p - points[far]).norm_squared());
        }
    }
    chosen.sort_unstable();
    chosen
}

fn components(mesh: &TriangleMesh, labels: &[Side], side: Side) -> Vec<Vec<usize>> {
    let nb = mesh.neighbors();
    let mut seen = vec![false; labels.len()];
    let mut comps = Vec::new();
    for s in 0..labels.len() {
        if seen[s] || labels[s] != side {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &nb[v] {
                if !seen[w] && labels[w] == side {
                    seen[w] = true;
                    comp.push(w);
                    stack.push(w);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Relabel stray islands and top vertices that touch no all-top face, until
/// each class is one connected piece.
fn clean_labels(mesh: &TriangleMesh, labels: &mut [Side]) -> Result<()> {
    for _ in 0..20 {
        let mut changed = false;
        for side in [Side::Top, Side::Bottom] {
            let mut comps = components(mesh, labels, side);
            if comps.len() > 1 {
                comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
                for c in &comps[1..] {
                    for &v in c {
                        labels[v] = side.flip();
                    }
                }
                changed = true;
            }
        }
        let mut in_top_face = vec![false; labels.len()];
        for f in mesh.faces() {
            if f.iter().all(|&v| labels[v] == Side::Top) {
                for &v in f {
                    in_top_face[v] = true;
                }
            }
        }
        for v in 0..labels.len() {
            if labels[v] == Side::Top && !in_top_face[v] {
                labels[v] = Side::Bottom;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for side in [Side::Top, Side::Bottom] {
        if !labels.contains(&side) {
            return Err(Error::Division(format!("{side:?} class empty after cleanup")));
        }
    }
    Ok(())
}

/// Name the class with the larger mean along the third principal axis `Top`.
fn canonical_naming(mesh: &TriangleMesh, labels: &mut [Side]) {
    let v = mesh.vertices();
    let pca = pca3(v);
    let e3 = orient_by_first_point(pca.axes[2], &pca.mean, v, 1e-3 * mesh.diagonal());
    let mean_of = |side: Side| {
        let (s, c) = v
            .iter()
            .zip(labels.iter())
            .filter(|(_, &l)| l == side)
            .fold((0.0, 0usize), |(s, c), (p, _)| (s + (p - pca.mean).dot(&e3), c + 1));
        s / c as f64
    };
    if mean_of(Side::Bottom) > mean_of(Side::Top) {
        for l in labels.iter_mut() {
            *l = l.flip();
        }
    }
}

/// Build a division from given labels, validating the class structure and extracting the crest.
pub fn division_from_labels(mesh: &TriangleMesh, labels: Vec<Side>, delta: f64) -> Result<BoundaryDivision> {
    if labels.len() != mesh.vertex_count() {
        return Err(Error::Division("label count does not match vertex count".into()));
    }
    for side in [Side::Top, Side::Bottom] {
        let n = components(mesh, &labels, side).len();
        if n != 1 {
            return Err(Error::Division(format!("{side:?} class has {n} connected components")));
        }
    }
    let crest = extract_crest(mesh, &labels)?;
    Ok(BoundaryDivision { labels, crest, delta })
}

/// Ordered crest loop: the boundary of the region of all-top faces, walked
/// with that region on the left.
pub fn extract_crest(mesh: &TriangleMesh, labels: &[Side]) -> Result<Vec<usize>> {
    let mut directed: HashMap<(usize, usize), bool> = HashMap::new();
    for f in mesh.faces() {
        let top = f.iter().all(|&v| labels[v] == Side::Top);
        for k in 0..3 {
            directed.insert((f[k], f[(k + 1) % 3]), top);
        }
    }
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut edges: Vec<(usize, usize)> = directed
        .iter()
        .filter(|(&(a, b), &top)| top && !directed[&(b, a)])
        .map(|(&e, _)| e)
        .collect();
    edges.sort_unstable();
    if edges.is_empty() {
        return Err(Error::Division("no crest: one side has no complete face".into()));
    }
    for &(a, b) in &edges {
        if next.insert(a, b).is_some() {
            return Err(Error::Division(format!("crest is not a simple loop at vertex {a}")));
        }
    }
    let start = edges[0].0;
    let mut lp = vec![start];
    let mut cur = next[&start];
    while cur != start {
        if lp.len() > edges.len() {
            return Err(Error::Division("crest walk did not close".into()));
        }
        lp.push(cur);
        cur = *next.get(&cur).ok_or_else(|| Error::Division("crest walk broke".into()))?;
    }
    if lp.len() != edges.len() {
        return Err(Error::Division(format!(
            "crest splits into several loops ({} of {} edges in the first)",
            lp.len(),
            edges.len()
        )));
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_ellipsoid;
    use nalgebra::{Rotation3, Vector3};

    fn z_labels(m: &TriangleMesh) -> Vec<Side> {
        m.vertices().iter().map(|p| if p.z >= 0.0 { Side::Top } else { Side::Bottom }).collect()
    }

    fn agreement(a: &[Side], b: &[Side]) -> f64 {
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64;
        same.max(1.0 - same)
    }

    #[test]
    fn ellipsoid_split_follows_z() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 3).unwrap();
        for variant in [AffinityVariant::Literal, AffinityVariant::Decaying] {
            let d = divide_boundary(&m, 0.5, variant).unwrap();
            let agree = agreement(&d.labels, &z_labels(&m));
            assert!(agree >= 0.95, "{variant:?}: agreement {agree}");
            assert_eq!(d.labels[0], Side::Top);
        }
    }

    #[test]
    fn lanczos_matches_dense() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 4).unwrap();
        let d = divide_boundary(&m, 0.5, AffinityVariant::Literal).unwrap();
        let agree = agreement(&d.labels, &z_labels(&m));
        assert!(agree >= 0.95, "agreement {agree}");
        let mean_edge = m.mean_edge_length();
        for &v in &d.crest {
            assert!(m.vertices()[v].z.abs() <= 2.0 * mean_edge);
        }
    }

    #[test]
    fn rigid_motion_preserves_labels() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 3).unwrap();
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let moved = m.transformed(&r, &Vector3::new(3.0, -1.0, 0.5));
        let a = divide_boundary(&m, 0.5, AffinityVariant::Literal).unwrap();
        let b = divide_boundary(&moved, 0.5, AffinityVariant::Literal).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.crest, b.crest);
    }

    #[test]
    fn hemisphere_crest_is_equator() {
        let m = make_ellipsoid([1.0, 1.0, 1.0], 3).unwrap();
        let labels = z_labels(&m);
        let d = division_from_labels(&m, labels, 0.5).unwrap();
        let edge = m.mean_edge_length();
        let mut angles: Vec<f64> = d.crest.iter().map(|&v| m.vertices()[v].y.atan2(m.vertices()[v].x)).collect();
        for &v in &d.crest {
            let p = m.vertices()[v];
            assert!(p.z >= 0.0 && p.z <= edge, "crest vertex off the equator: {p:?}");
        }
        angles.sort_by(f64::total_cmp);
        let max_gap = angles.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(max_gap < 0.2, "crest skips longitudes");
        // Counter-clockwise seen from +z, the outside of the top part.
        let area: f64 = (0..d.crest.len())
            .map(|i| {
                let (p, q) = (m.vertices()[d.crest[i]], m.vertices()[d.crest[(i + 1) % d.crest.len()]]);
                p.x * q.y - p.y * q.x
            })
            .sum();
        assert!(area > 0.0);
    }

    #[test]
    fn crest_vertices_border_both_labels() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 3).unwrap();
        let d = divide_boundary(&m, 0.5, AffinityVariant::Literal).unwrap();
        let crest: std::collections::HashSet<usize> = d.crest.iter().copied().collect();
        for v in 0..m.vertex_count() {
            let bordering = d.labels[v] == Side::Top && m.neighbors()[v].iter().any(|&w| d.labels[w] == Side::Bottom);
            assert_eq!(bordering, crest.contains(&v), "vertex {v}");
        }
    }

    #[test]
    fn two_islands_rejected() {
        let m = make_ellipsoid([1.0, 1.0, 1.0], 3).unwrap();
        let labels: Vec<Side> = m.vertices().iter().map(|p| if p.x.abs() > 0.6 { Side::Top } else { Side::Bottom }).collect();
        assert!(division_from_labels(&m, labels.clone(), 0.5).is_err());
        assert!(extract_crest(&m, &labels).is_err());
    }

    #[test]
    fn swap_is_an_involution() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 2).unwrap();
        let d = divide_boundary(&m, 0.5, AffinityVariant::Decaying).unwrap();
        let back = d.swapped(&m).unwrap().swapped(&m).unwrap();
        assert_eq!(back.labels, d.labels);
    }
}
