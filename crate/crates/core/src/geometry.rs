//! Small vector, frame and polygon helpers shared across modules.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Right-handed orthonormal frame with an origin.
///
/// Columns of `axes` are the frame's first, second and third axes expressed
/// in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame3 {
    pub origin: Vec3,
    pub axes: Matrix3<f64>,
}

impl Frame3 {
    pub fn identity() -> Self {
        Frame3 { origin: Vec3::zeros(), axes: Matrix3::identity() }
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        self.axes.column(i).into_owned()
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.axes.transpose() * (p - self.origin)
    }

    pub fn to_world(&self, q: &Vec3) -> Vec3 {
        self.origin + self.axes * q
    }

    pub fn dir_to_local(&self, d: &Vec3) -> Vec3 {
        self.axes.transpose() * d
    }

    pub fn dir_to_world(&self, d: &Vec3) -> Vec3 {
        self.axes * d
    }
}

/// Mean and principal axes of a point cloud, variances sorted descending.
#[derive(Debug, Clone)]
pub struct Pca3 {
    pub mean: Vec3,
    pub axes: [Vec3; 3],
    pub variances: [f64; 3],
}

pub fn pca3(points: &[Vec3]) -> Pca3 {
    let n = points.len().max(1) as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = order.map(|i| eig.eigenvectors.column(i).into_owned());
    let variances = order.map(|i| eig.eigenvalues[i].max(0.0));
    Pca3 { mean, axes, variances }
}

/// Mean and principal axes of a planar point cloud, variances sorted descending.
pub fn pca2(points: &[Vec2]) -> (Vec2, [Vec2; 2], [f64; 2]) {
    let n = points.len().max(1) as f64;
    let mean = points.iter().fold(Vec2::zeros(), |a, p| a + p) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let cov = nalgebra::Matrix2::new(sxx / n, sxy / n, sxy / n, syy / n);
    let eig = SymmetricEigen::new(cov);
    let (i, j) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    (
        mean,
        [eig.eigenvectors.column(i).into_owned(), eig.eigenvectors.column(j).into_owned()],
        [eig.eigenvalues[i].max(0.0), eig.eigenvalues[j].max(0.0)],
    )
}

/// Flip `axis` so that the first point with a non-negligible projection on it
/// lies on its positive side. Depends only on point order, so it commutes with
/// rigid motions.
pub fn orient_by_first_point(axis: Vec3, mean: &Vec3, points: &[Vec3], tol: f64) -> Vec3 {
    for p in points {
        let s = (p - mean).dot(&axis);
        if s.abs() > tol {
            return if s > 0.0 { axis } else { -axis };
        }
    }
    axis
}

/// Rotation taking the world axes onto `(e1, e2, e3)`; `e2` is recomputed so
/// the result is exactly orthonormal and right-handed.
pub fn frame_from_axes(e1: Vec3, e3: Vec3) -> Matrix3<f64> {
    let e3 = e3.normalize();
    let e1 = (e1 - e3 * e1.dot(&e3)).normalize();
    let e2 = e3.cross(&e1);
    Matrix3::from_columns(&[e1, e2, e3])
}

pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    Rotation3::from_matrix_unchecked(a.transpose() * b).angle()
}

pub fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Left normal of a planar direction.
pub fn perp(v: &Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross2(&poly[i], &poly[(i + 1) % n])).sum::<f64>() * 0.5
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: &Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn dist_point_segment2(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

pub fn dist_point_segment3(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to the closed polygon boundary.
pub fn dist_to_polygon(p: &Vec2, poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| dist_point_segment2(p, &poly[i], &poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Parameters `(s, t)` of the crossing of segments `a0 + s(a1-a0)` and
/// `b0 + t(b1-b0)`, when both lie in `[0, 1]`.
pub fn segment_intersection(a0: &Vec2, a1: &Vec2, b0: &Vec2, b1: &Vec2) -> Option<(f64, f64)> {
    let r = a1 - a0;
    let q = b1 - b0;
    let den = cross2(&r, &q);
    if den.abs() < 1e-300 {
        return None;
    }
    let w = b0 - a0;
    let s = cross2(&w, &q) / den;
    let t = cross2(&w, &r) / den;
    if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
        Some((s, t))
    } else {
        None
    }
}

/// First boundary crossing of the ray `o + t d`, `t > eps`: returns
/// `(t, edge index, edge fraction)`.
pub fn ray_polygon(o: &Vec2, d: &Vec2, poly: &[Vec2], eps: f64) -> Option<(f64, usize, f64)> {
    let n = poly.len();
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let e = b - a;
        let den = cross2(d, &e);
        if den.abs() < 1e-300 {
            continue;
        }
        let w = a - o;
        let t = cross2(&w, &e) / den;
        let u = cross2(&w, d) / den;
        if t > eps && (-1e-12..=1.0 + 1e-12).contains(&u) && best.is_none_or(|(bt, _, _)| t < bt) {
            best = Some((t, i, u.clamp(0.0, 1.0)));
        }
    }
    best
}

/// Cumulative arclength of a polyline, starting at zero.
pub fn cumulative_length<V>(points: &[V]) -> Vec<f64>
where
    V: std::ops::Sub<Output = V> + Copy + Norm,
{
    let mut acc = Vec::with_capacity(points.len());
    let mut s = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            s += (*p - points[i - 1]).length();
        }
        acc.push(s);
    }
    acc
}

pub trait Norm {
    fn length(&self) -> f64;
}

impl Norm for Vec2 {
    fn length(&self) -> f64 {
        self.norm()
    }
}

impl Norm for Vec3 {
    fn length(&self) -> f64 {
        self.norm()
    }
}

/// Point at arclength `s` along a polyline with precomputed cumulative lengths.
pub fn polyline_at<V>(points: &[V], cum: &[f64], s: f64) -> V
where
    V: std::ops::Sub<Output = V> + std::ops::Add<Output = V> + std::ops::Mul<f64, Output = V> + Copy,
{
    let n = points.len();
    if n == 1 || s <= cum[0] {
        return points[0];
    }
    if s >= cum[n - 1] {
        return points[n - 1];
    }
    let i = cum.partition_point(|&c| c <= s).clamp(1, n - 1);
    let seg = cum[i] - cum[i - 1];
    let t = if seg > 0.0 { (s - cum[i - 1]) / seg } else { 0.0 };
    points[i - 1] + (points[i] - points[i - 1]) * t
}

/// Root of `f` on `[a, b]` by bisection; `f(a)` and `f(b)` must differ in sign.
pub fn bisect(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64, iters: usize) -> f64 {
    let mut fa = f(a);
    for _ in 0..iters {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_basics() {
        let sq = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)];
        assert!((signed_area(&sq) - 1.0).abs() < 1e-15);
        assert!(point_in_polygon(&Vec2::new(0.5, 0.5), &sq));
        assert!(!point_in_polygon(&Vec2::new(1.5, 0.5), &sq));
        let (t, e, u) = ray_polygon(&Vec2::new(0.5, 0.5), &Vec2::new(1.0, 0.0), &sq, 1e-12).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        assert_eq!(e, 1);
        assert!((u - 0.5).abs() < 1e-15);
        assert!((dist_to_polygon(&Vec2::new(0.5, 0.2), &sq) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn polyline_interp() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 2.0)];
        let cum = cumulative_length(&pts);
        assert_eq!(cum, vec![0.0, 1.0, 3.0]);
        let p = polyline_at(&pts, &cum, 2.0);
        assert!((p - Vec2::new(1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn frame_is_orthonormal() {
        let m = frame_from_axes(Vec3::new(1.0, 0.2, 0.1), Vec3::new(0.1, 0.0, 1.0));
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-14);
        assert!((m.determinant() - 1.0).abs() < 1e-14);
    }
}
