//! Central medial skeleton: the interior locus equidistant from the top and
//! bottom boundary parts, sampled as the zero set of `d_top - d_bottom` on a
//! regular grid.

use crate::division::{BoundaryDivision, Side};
use crate::geometry::{dist_point_segment2, dist_point_segment3, point_in_polygon, Vec2, Vec3};
use crate::mesh::{inside_mask, write_ply_points, TriangleMesh, VoxelGrid};
use crate::spatial::{tree2, tree3, KdTree};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Components smaller than this fraction of all interface points are treated as noise.
const MIN_COMPONENT_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmsPointSet {
    pub points: Vec<Vec3>,
    /// `|d_top - d_bottom|` at each point.
    pub residuals: Vec<f64>,
    pub spacing: f64,
}

impl CmsPointSet {
    pub fn to_ply(&self) -> String {
        write_ply_points(&self.points, &[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmsPointSet2 {
    pub points: Vec<Vec2>,
    pub residuals: Vec<f64>,
    pub spacing: f64,
}

/// Relative width, in pitches, of the band where the distance difference counts as zero.
const ZERO_BAND: f64 = 1e-9;

/// Node count along an axis: even, so that the two central nodes straddle
/// the box centre and no node lies on a mid-plane of symmetry.
fn even_nodes(extent: f64, pitch: f64) -> usize {
    2 * ((extent / (2.0 * pitch)).ceil() as usize + 1)
}

/// CMS of a closed mesh under a top/bottom division, sampled at grid pitch `pitch`.
pub fn extract_cms(mesh: &TriangleMesh, division: &BoundaryDivision, pitch: f64) -> Result<CmsPointSet> {
    let diag = mesh.diagonal();
    if !(pitch > 0.0) || pitch > diag / 50.0 {
        return Err(Error::Cms(format!("pitch {pitch} must lie in (0, diagonal/50 = {}]", diag / 50.0)));
    }
    let (top, bottom) = boundary_samples(mesh, division, pitch);
    if top.is_empty() || bottom.is_empty() {
        return Err(Error::Cms("one boundary part has no samples".into()));
    }
    let (tt, tb) = (tree3(&top), tree3(&bottom));
    let field = |p: &Vec3| {
        let q = [p.x, p.y, p.z];
        tt.nearest(&q).unwrap().1.sqrt() - tb.nearest(&q).unwrap().1.sqrt()
    };

    let (lo, hi) = mesh.bounds();
    let center = (lo + hi) * 0.5;
    let ext = hi - lo;
    let dims = [even_nodes(ext.x, pitch), even_nodes(ext.y, pitch), even_nodes(ext.z, pitch)];
    let half = Vec3::new(dims[0] as f64 - 1.0, dims[1] as f64 - 1.0, dims[2] as f64 - 1.0) * (0.5 * pitch);
    let grid = VoxelGrid { origin: center - half, spacing: Vec3::repeat(pitch), dims };
    let inside = inside_mask(mesh.vertices(), mesh.faces(), &grid);

    let values: Vec<f64> = (0..dims[2])
        .into_par_iter()
        .flat_map_iter(|k| {
            let (inside, grid, field) = (&inside, &grid, &field);
            (0..dims[1]).flat_map(move |j| {
                (0..dims[0]).map(move |i| {
                    if inside[grid.index(i, j, k)] {
                        field(&grid.center(i, j, k))
                    } else {
                        f64::NAN
                    }
                })
            })
        })
        .collect();

    // Values this close to zero count as zero, so that rounding noise in
    // symmetric configurations cannot decide a sign.
    let zero = ZERO_BAND * pitch;
    let sign = |f: f64| if f > zero { 1 } else if f < -zero { -1 } else { 0 };
    let mut candidates: Vec<Vec3> = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let f0 = values[grid.index(i, j, k)];
                if f0.is_nan() {
                    continue;
                }
                let x0 = grid.center(i, j, k);
                if sign(f0) == 0 {
                    candidates.push(x0);
                    continue;
                }
                for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                    let (i1, j1, k1) = (i + di, j + dj, k + dk);
                    if i1 >= dims[0] || j1 >= dims[1] || k1 >= dims[2] {
                        continue;
                    }
                    let f1 = values[grid.index(i1, j1, k1)];
                    if f1.is_nan() || sign(f0) * sign(f1) >= 0 {
                        continue;
                    }
                    let t = f0 / (f0 - f1);
                    candidates.push(x0 + (grid.center(i1, j1, k1) - x0) * t);
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Cms("empty interface: the division is degenerate".into()));
    }

    let rim = mixed_face_edges(mesh, division);
    let kept: Vec<(Vec3, f64)> = candidates
        .par_iter()
        .filter_map(|p| {
            let r = field(p).abs();
            let near_rim = rim.iter().any(|(a, b)| dist_point_segment3(p, a, b) < pitch);
            (r <= pitch && !near_rim).then_some((*p, r))
        })
        .collect();
    let kept = largest_component(kept, |p| [p.x, p.y, p.z], pitch)?;
    let (points, residuals) = kept.into_iter().unzip();
    Ok(CmsPointSet { points, residuals, spacing: pitch })
}

/// Edges of faces whose vertices carry both labels; the band around the crest.
fn mixed_face_edges(mesh: &TriangleMesh, division: &BoundaryDivision) -> Vec<(Vec3, Vec3)> {
    let v = mesh.vertices();
    let mut out = Vec::new();
    for f in mesh.faces() {
        let tops = f.iter().filter(|&&i| division.labels[i] == Side::Top).count();
        if tops == 1 || tops == 2 {
            for k in 0..3 {
                out.push((v[f[k]], v[f[(k + 1) % 3]]));
            }
        }
    }
    out
}

/// Dense samples of the two boundary parts: vertices by label, plus interior
/// points of each face (labelled by vertex majority) at spacing below `pitch`.
fn boundary_samples(mesh: &TriangleMesh, division: &BoundaryDivision, pitch: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    let v = mesh.vertices();
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    for (p, l) in v.iter().zip(&division.labels) {
        match l {
            Side::Top => top.push(*p),
            Side::Bottom => bottom.push(*p),
        }
    }
    for (fi, f) in mesh.faces().iter().enumerate() {
        let (a, b, c) = (v[f[0]], v[f[1]], v[f[2]]);
        let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
        let k = (longest / pitch).ceil() as usize;
        if k < 2 {
            continue;
        }
        let dst = if division.face_side(mesh, fi) == Side::Top { &mut top } else { &mut bottom };
        for i in 0..=k {
            for j in 0..=(k - i) {
                if (i == 0 && j == 0) || i == k || j == k {
                    continue;
                }
                let (s, t) = (i as f64 / k as f64, j as f64 / k as f64);
                dst.push(a + (b - a) * s + (c - a) * t);
            }
        }
    }
    (top, bottom)
}

/// Keep the points forming the dominant component of the `2h` neighbourhood
/// graph; fails if more than one sizeable component remains.
fn largest_component<P: Copy + Send + Sync, const K: usize>(
    pts: Vec<(P, f64)>,
    coords: impl Fn(&P) -> [f64; K],
    pitch: f64,
) -> Result<Vec<(P, f64)>> {
    if pts.is_empty() {
        return Err(Error::Cms("no interface point passed the residual and crest filters".into()));
    }
    let tree = KdTree::new(pts.iter().map(|(p, _)| coords(p)).collect());
    let mut comp = vec![usize::MAX; pts.len()];
    let mut sizes = Vec::new();
    for s in 0..pts.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        comp[s] = id;
        let mut size = 1;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in tree.within(tree.point(i), 2.0 * pitch) {
                if comp[j] == usize::MAX {
                    comp[j] = id;
                    size += 1;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    let big: Vec<usize> = (0..sizes.len())
        .filter(|&c| sizes[c] as f64 >= MIN_COMPONENT_FRACTION * pts.len() as f64)
        .collect();
    match big.as_slice() {
        [one] => Ok(pts.into_iter().zip(comp).filter(|(_, c)| c == one).map(|(p, _)| p).collect()),
        [] => Err(Error::Cms("interface is fragmented into small pieces".into())),
        many => Err(Error::Cms(format!("interface is disconnected ({} components)", many.len()))),
    }
}

/// CMS of a simple polygon whose vertices are labelled top or bottom.
pub fn extract_cms_2d(polygon: &[Vec2], labels: &[Side], pitch: f64) -> Result<CmsPointSet2> {
    let n = polygon.len();
    if n < 3 || labels.len() != n {
        return Err(Error::Cms("polygon needs at least 3 labelled vertices".into()));
    }
    let lo = polygon.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = polygon.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let diag = (hi - lo).norm();
    if !(pitch > 0.0) || pitch > diag / 50.0 {
        return Err(Error::Cms(format!("pitch {pitch} must lie in (0, diagonal/50 = {}]", diag / 50.0)));
    }
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    let mut rim = Vec::new();
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let (la, lb) = (labels[i], labels[(i + 1) % n]);
        if la != lb {
            rim.push((a, b));
        }
        let k = ((b - a).norm() / pitch * 2.0).ceil().max(1.0) as usize;
        for s in 0..k {
            let t = s as f64 / k as f64;
            let side = if t < 0.5 { la } else { lb };
            let p = a + (b - a) * t;
            match side {
                Side::Top => top.push(p),
                Side::Bottom => bottom.push(p),
            }
        }
    }
    if top.is_empty() || bottom.is_empty() {
        return Err(Error::Cms("one boundary part has no samples".into()));
    }
    let (tt, tb) = (tree2(&top), tree2(&bottom));
    let field = |p: &Vec2| {
        let q = [p.x, p.y];
        tt.nearest(&q).unwrap().1.sqrt() - tb.nearest(&q).unwrap().1.sqrt()
    };
    let center = (lo + hi) * 0.5;
    let ext = hi - lo;
    let (nx, ny) = (even_nodes(ext.x, pitch), even_nodes(ext.y, pitch));
    let origin = center - Vec2::new(nx as f64 - 1.0, ny as f64 - 1.0) * (0.5 * pitch);
    let node = |i: usize, j: usize| origin + Vec2::new(i as f64, j as f64) * pitch;
    let values: Vec<f64> = (0..ny)
        .into_par_iter()
        .flat_map_iter(|j| {
            let (node, field) = (&node, &field);
            (0..nx).map(move |i| {
                let p = node(i, j);
                if point_in_polygon(&p, polygon) {
                    field(&p)
                } else {
                    f64::NAN
                }
            })
        })
        .collect();
    let zero = ZERO_BAND * pitch;
    let sign = |f: f64| if f > zero { 1 } else if f < -zero { -1 } else { 0 };
    let mut crossings = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let f0 = values[i + nx * j];
            if f0.is_nan() {
                continue;
            }
            if sign(f0) == 0 {
                crossings.push(node(i, j));
                continue;
            }
            for (i1, j1) in [(i + 1, j), (i, j + 1)] {
                if i1 >= nx || j1 >= ny {
                    continue;
                }
                let f1 = values[i1 + nx * j1];
                if f1.is_nan() || sign(f0) * sign(f1) >= 0 {
                    continue;
                }
                crossings.push(node(i, j) + (node(i1, j1) - node(i, j)) * (f0 / (f0 - f1)));
            }
        }
    }
    let mut kept = Vec::new();
    for p in crossings {
        let r = field(&p).abs();
        let near_rim = rim.iter().any(|(a, b)| dist_point_segment2(&p, a, b) < pitch);
        if r <= pitch && !near_rim {
            kept.push((p, r));
        }
    }
    let kept = largest_component(kept, |p| [p.x, p.y], pitch)?;
    let (points, residuals) = kept.into_iter().unzip();
    Ok(CmsPointSet2 { points, residuals, spacing: pitch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::division::division_from_labels;
    use crate::synth::make_ellipsoid;
    use std::f64::consts::TAU;

    fn disk(n: usize) -> (Vec<Vec2>, Vec<Side>) {
        let poly: Vec<Vec2> = (0..n).map(|i| {
            let t = (i as f64 + 0.5) / n as f64 * TAU;
            Vec2::new(t.cos(), t.sin())
        }).collect();
        let labels = poly.iter().map(|p| if p.y > 0.0 { Side::Top } else { Side::Bottom }).collect();
        (poly, labels)
    }

    #[test]
    fn disk_cms_is_the_diameter() {
        let (poly, labels) = disk(400);
        let h = 0.02;
        let cms = extract_cms_2d(&poly, &labels, h).unwrap();
        assert!(cms.points.len() > 50);
        for (p, r) in cms.points.iter().zip(&cms.residuals) {
            assert!(p.y.abs() <= h, "{p:?}");
            assert!(*r <= h);
        }
    }

    #[test]
    fn disk_refinement_is_stable() {
        let (poly, labels) = disk(400);
        let h = 0.04;
        let coarse = extract_cms_2d(&poly, &labels, h).unwrap();
        let fine = extract_cms_2d(&poly, &labels, h / 2.0).unwrap();
        let t = tree2(&fine.points);
        for p in &coarse.points {
            let (_, d2) = t.nearest(&[p.x, p.y]).unwrap();
            assert!(d2.sqrt() <= h);
        }
    }

    fn ellipsoid_case() -> (TriangleMesh, BoundaryDivision) {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 4).unwrap();
        let labels = m.vertices().iter().map(|p| if p.z >= 0.0 { Side::Top } else { Side::Bottom }).collect();
        let d = division_from_labels(&m, labels, 0.5).unwrap();
        (m, d)
    }

    #[test]
    fn ellipsoid_cms_is_mid_plane() {
        let (m, d) = ellipsoid_case();
        let h = m.diagonal() / 60.0;
        let cms = extract_cms(&m, &d, h).unwrap();
        assert!(cms.points.len() > 100);
        let v = m.vertices();
        let crest: Vec<Vec3> = d.crest.iter().map(|&i| v[i]).collect();
        for (p, r) in cms.points.iter().zip(&cms.residuals) {
            assert!(p.z.abs() <= h, "{p:?}");
            assert!(*r <= h);
            assert!(crate::mesh::contains_point(&m, p));
            let dc = (0..crest.len())
                .map(|i| dist_point_segment3(p, &crest[i], &crest[(i + 1) % crest.len()]))
                .fold(f64::INFINITY, f64::min);
            assert!(dc >= h);
        }
    }

    #[test]
    fn label_swap_leaves_points_unchanged() {
        let (m, d) = ellipsoid_case();
        let h = m.diagonal() / 60.0;
        let a = extract_cms(&m, &d, h).unwrap();
        let b = extract_cms(&m, &d.swapped(&m).unwrap(), h).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn coarse_pitch_rejected() {
        let (m, d) = ellipsoid_case();
        assert!(extract_cms(&m, &d, m.diagonal() / 10.0).is_err());
    }
}
