//! Ray casting against mesh triangles.

use super::TriangleMesh;
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Vec3,
    pub face: usize,
    pub t: f64,
}

/// Möller–Trumbore; ray parameter of a hit, with inclusive barycentric bounds.
fn intersect_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// First hit along `origin + t·direction` with `t > eps`, where `eps` scales
/// with the mesh size.
pub fn ray_intersect(mesh: &TriangleMesh, origin: &Vec3, direction: &Vec3) -> Option<RayHit> {
    ray_intersect_filtered(mesh, origin, direction, |_| true)
}

/// As [`ray_intersect`] but only faces accepted by `keep` are considered.
pub fn ray_intersect_filtered(
    mesh: &TriangleMesh,
    origin: &Vec3,
    direction: &Vec3,
    keep: impl Fn(usize) -> bool,
) -> Option<RayHit> {
    let eps = 1e-9 * mesh.diagonal();
    let v = mesh.vertices();
    let mut best: Option<(f64, usize)> = None;
    for (fi, f) in mesh.faces().iter().enumerate() {
        if !keep(fi) {
            continue;
        }
        if let Some(t) = intersect_triangle(origin, direction, &v[f[0]], &v[f[1]], &v[f[2]]) {
            if t > eps && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, fi));
            }
        }
    }
    best.map(|(t, face)| RayHit { point: origin + direction * t, face, t })
}

/// Signed parameters of every crossing of the full line `origin + t·direction`.
pub fn line_hits(mesh: &TriangleMesh, origin: &Vec3, direction: &Vec3) -> Vec<f64> {
    let v = mesh.vertices();
    let mut ts: Vec<f64> = mesh
        .faces()
        .iter()
        .filter_map(|f| intersect_triangle(origin, direction, &v[f[0]], &v[f[1]], &v[f[2]]))
        .collect();
    ts.sort_by(f64::total_cmp);
    ts
}

/// Parity inside test voted over three fixed, non-axis-aligned directions.
pub fn contains_point(mesh: &TriangleMesh, p: &Vec3) -> bool {
    const DIRS: [[f64; 3]; 3] = [
        [0.577_215_664_9, 0.318_309_886_2, 0.751_988_123_5],
        [-0.412_310_562_6, 0.871_779_788_7, 0.264_575_131_1],
        [0.300_000_000_1, -0.447_213_595_5, -0.842_614_977_3],
    ];
    let v = mesh.vertices();
    let votes = DIRS
        .iter()
        .filter(|d| {
            let d = Vec3::new(d[0], d[1], d[2]).normalize();
            let n = mesh
                .faces()
                .iter()
                .filter_map(|f| intersect_triangle(p, &d, &v[f[0]], &v[f[1]], &v[f[2]]))
                .filter(|&t| t > 0.0)
                .count();
            n % 2 == 1
        })
        .count();
    votes >= 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures::cube;
    use crate::synth::make_ellipsoid;
    use proptest::prelude::*;

    #[test]
    fn cube_axis_hit() {
        let m = cube(1.0, Vec3::repeat(-0.5));
        let hit = ray_intersect(&m, &Vec3::zeros(), &Vec3::x()).unwrap();
        assert!((hit.point - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert!((hit.t - 0.5).abs() < 1e-15);
    }

    #[test]
    fn miss_when_pointing_away() {
        let m = cube(1.0, Vec3::repeat(-0.5));
        assert!(ray_intersect(&m, &Vec3::new(3.0, 0.0, 0.0), &Vec3::x()).is_none());
    }

    #[test]
    fn inside_test() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 3).unwrap();
        assert!(contains_point(&m, &Vec3::zeros()));
        assert!(contains_point(&m, &Vec3::new(1.5, 0.1, 0.0)));
        assert!(!contains_point(&m, &Vec3::new(0.0, 0.0, 0.6)));
    }

    proptest! {
        #[test]
        fn sphere_hit_distance(theta in 0.0f64..std::f64::consts::PI, phi in 0.0f64..std::f64::consts::TAU) {
            // The largest facet deviation from the sphere is 1 minus the
            // smallest distance from the centre to a face plane.
            let m = make_ellipsoid([1.0, 1.0, 1.0], 3).unwrap();
            let inner = (0..m.face_count())
                .map(|f| m.vertices()[m.faces()[f][0]].dot(&m.face_normal(f)))
                .fold(f64::INFINITY, f64::min);
            let d = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let hit = ray_intersect(&m, &Vec3::zeros(), &d).unwrap();
            prop_assert!(hit.t <= 1.0 + 1e-12);
            prop_assert!(hit.t >= inner - 1e-12, "t = {}, inner radius {}", hit.t, inner);
            let f = m.faces()[hit.face];
            let n = m.face_normal(hit.face);
            let off = (hit.point - m.vertices()[f[0]]).dot(&n).abs();
            prop_assert!(off <= 1e-7 * m.diagonal());
        }
    }
}
