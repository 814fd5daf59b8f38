//! Planar generalized cylinders: relaxed CMS curve, medial spokes, the
//! semi-chordal structure and straightening.

use crate::cms::extract_cms_2d;
use crate::division::Side;
use crate::geometry::{dist_to_polygon, pca2, perp, point_in_polygon, ray_polygon, segment_intersection, signed_area, Vec2};
use crate::polyfit::{fit_poly1, Poly1};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Stations closer than this fraction of the curve length to an end are skipped.
pub const END_CAP_FRACTION: f64 = 0.02;
const TABLE: usize = 1024;

/// Planar rigid frame: `origin` and first axis `e1`; the second axis is its left normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame2 {
    pub origin: Vec2,
    pub e1: Vec2,
}

impl Frame2 {
    pub fn identity() -> Self {
        Frame2 { origin: Vec2::zeros(), e1: Vec2::x() }
    }

    pub fn to_local(&self, p: &Vec2) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.e1), d.dot(&perp(&self.e1)))
    }

    pub fn to_world(&self, q: &Vec2) -> Vec2 {
        self.origin + self.e1 * q.x + perp(&self.e1) * q.y
    }
}

/// Closed polygon in its local frame, counter-clockwise, split at its two
/// extreme-x vertices into a bottom chain (from the left vertex) and a top chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcBoundary {
    pub polygon: Vec<Vec2>,
    pub labels: Vec<Side>,
    /// Indices of the left and right object vertices.
    pub vertices: [usize; 2],
    pub frame: Frame2,
}

impl GcBoundary {
    /// Boundary expressed in the principal frame of its vertices.
    pub fn new(polygon: &[Vec2]) -> Result<Self> {
        if polygon.len() < 4 {
            return Err(Error::Gc2d("polygon needs at least 4 vertices".into()));
        }
        let (mean, axes, var) = pca2(polygon);
        if !(var[1] > 0.0) {
            return Err(Error::Gc2d("polygon is degenerate".into()));
        }
        let diag = bbox(polygon).2;
        let mut e1 = axes[0];
        if let Some(p) = polygon.iter().find(|p| (*p - mean).dot(&e1).abs() > 1e-3 * diag) {
            if (p - mean).dot(&e1) < 0.0 {
                e1 = -e1;
            }
        }
        Self::in_frame(polygon, Frame2 { origin: mean, e1 })
    }

    /// Boundary expressed in a caller-supplied frame.
    pub fn in_frame(polygon: &[Vec2], frame: Frame2) -> Result<Self> {
        let mut local: Vec<Vec2> = polygon.iter().map(|p| frame.to_local(p)).collect();
        let area = signed_area(&local);
        if area.abs() <= 1e-12 * bbox(&local).2.powi(2) {
            return Err(Error::Gc2d("polygon has zero area".into()));
        }
        if area < 0.0 {
            local.reverse();
        }
        let n = local.len();
        // Among vertices within a hair of the extreme x, the one nearest the axis.
        let tol = 1e-6 * bbox(&local).2;
        let pick = |sign: f64| {
            let ext = local.iter().map(|p| sign * p.x).fold(f64::NEG_INFINITY, f64::max);
            (0..n)
                .filter(|&i| sign * local[i].x >= ext - tol)
                .min_by(|&a, &b| local[a].y.abs().total_cmp(&local[b].y.abs()).then(a.cmp(&b)))
                .unwrap()
        };
        let (left, right) = (pick(-1.0), pick(1.0));
        if left == right {
            return Err(Error::Gc2d("polygon has a single extreme vertex".into()));
        }
        // Each object vertex appears twice, once closing each chain, so the
        // split between the chains falls exactly on it.
        let mut polygon = Vec::with_capacity(n + 2);
        let mut i = left;
        loop {
            polygon.push(local[i]);
            if i == right {
                break;
            }
            i = (i + 1) % n;
        }
        let k = polygon.len() - 1;
        loop {
            polygon.push(local[i]);
            if i == left {
                break;
            }
            i = (i + 1) % n;
        }
        let labels = (0..polygon.len()).map(|j| if j <= k { Side::Bottom } else { Side::Top }).collect();
        Ok(GcBoundary { polygon, labels, vertices: [0, k], frame })
    }

    pub fn diagonal(&self) -> f64 {
        bbox(&self.polygon).2
    }
}

fn bbox(points: &[Vec2]) -> (Vec2, Vec2, f64) {
    let lo = points.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = points.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    (lo, hi, (hi - lo).norm())
}

/// Graph `y = poly(x)` over `x_range`, parameterized by arclength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterCurve {
    pub poly: Poly1,
    pub x_range: [f64; 2],
    xs: Vec<f64>,
    cum: Vec<f64>,
}

impl CenterCurve {
    pub fn new(poly: Poly1, x0: f64, x1: f64) -> Result<Self> {
        if !(x1 > x0) {
            return Err(Error::Gc2d(format!("empty curve range [{x0}, {x1}]")));
        }
        let xs: Vec<f64> = (0..=TABLE).map(|i| x0 + (x1 - x0) * i as f64 / TABLE as f64).collect();
        let mut curve = CenterCurve { poly, x_range: [x0, x1], xs, cum: Vec::new() };
        let mut cum = vec![0.0];
        for w in curve.xs.windows(2) {
            cum.push(cum.last().unwrap() + curve.simpson(w[0], w[1]));
        }
        curve.cum = cum;
        Ok(curve)
    }

    /// The graph restricted to the stretch around `seed_x` that lies inside `polygon`.
    pub fn clipped(poly: Poly1, polygon: &[Vec2], seed_x: f64) -> Result<Self> {
        let inside = |x: f64| point_in_polygon(&Vec2::new(x, poly.eval(x)), polygon);
        if !inside(seed_x) {
            return Err(Error::Gc2d("fitted curve leaves the polygon at its centre".into()));
        }
        let (lo, hi, _) = bbox(polygon);
        let step = (hi.x - lo.x) / 2000.0;
        let sign = |x: f64| if inside(x) { 1.0 } else { -1.0 };
        let exit = |dir: f64| {
            let mut x = seed_x;
            while inside(x + dir * step) && (lo.x..=hi.x).contains(&(x + dir * step)) {
                x += dir * step;
            }
            crate::geometry::bisect(x, x + dir * step, sign, 60)
        };
        Self::new(poly.clone(), exit(-1.0), exit(1.0))
    }

    fn speed(&self, x: f64) -> f64 {
        let d = self.poly.deriv(x);
        (1.0 + d * d).sqrt()
    }

    fn simpson(&self, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (self.speed(a) + 4.0 * self.speed(0.5 * (a + b)) + self.speed(b))
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn arclength_at(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_range[0], self.x_range[1]);
        let i = (self.xs.partition_point(|&t| t <= x).max(1) - 1).min(TABLE - 1);
        self.cum[i] + self.simpson(self.xs[i], x)
    }

    pub fn x_at(&self, l: f64) -> f64 {
        let l = l.clamp(0.0, self.length());
        let i = (self.cum.partition_point(|&c| c <= l).max(1) - 1).min(TABLE - 1);
        let seg = self.cum[i + 1] - self.cum[i];
        let mut x = self.xs[i] + (self.xs[i + 1] - self.xs[i]) * if seg > 0.0 { (l - self.cum[i]) / seg } else { 0.0 };
        for _ in 0..3 {
            x = (x - (self.arclength_at(x) - l) / self.speed(x)).clamp(self.x_range[0], self.x_range[1]);
        }
        x
    }

    pub fn point(&self, l: f64) -> Vec2 {
        let x = self.x_at(l);
        Vec2::new(x, self.poly.eval(x))
    }

    pub fn tangent(&self, l: f64) -> Vec2 {
        let x = self.x_at(l);
        Vec2::new(1.0, self.poly.deriv(x)).normalize()
    }

    /// Left unit normal, pointing towards the top chain.
    pub fn normal(&self, l: f64) -> Vec2 {
        perp(&self.tangent(l))
    }

    /// Signed curvature; positive when the curve bends towards its normal.
    pub fn curvature(&self, l: f64) -> f64 {
        let x = self.x_at(l);
        self.poly.deriv2(x) / self.speed(x).powi(3)
    }

    pub fn polyline(&self, segments: usize) -> Vec<Vec2> {
        (0..=segments).map(|i| self.point(self.length() * i as f64 / segments as f64)).collect()
    }
}

/// Least-squares curve through CMS points given in the boundary's local frame.
pub fn fit_relaxed_cms_2d(points: &[Vec2], degree: usize) -> Result<(Poly1, f64)> {
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    fit_poly1(&xs, &ys, degree).map_err(|e| match e {
        Error::Fit(m) if m.contains("ill-conditioned") => {
            Error::Gc2d(format!("curve fit {m}; re-align the points with their principal axis"))
        }
        other => other,
    })
}

/// Relaxed CMS curve extended to where it leaves the boundary near the two vertices.
pub fn fit_center_curve(boundary: &GcBoundary, cms_points: &[Vec2], degree: usize) -> Result<CenterCurve> {
    let (poly, _) = fit_relaxed_cms_2d(cms_points, degree)?;
    let seed = cms_points.iter().map(|p| p.x).sum::<f64>() / cms_points.len() as f64;
    CenterCurve::clipped(poly, &boundary.polygon, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedialSpoke2 {
    pub arclength: f64,
    pub fraction: f64,
    pub point: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
    pub radius: f64,
    /// Finite-difference `dR/dl`.
    pub slope: f64,
    pub up_tip: Vec2,
    pub down_tip: Vec2,
}

/// Up and down spoke at arclength `l`, with `dR/dl` from a centred difference of step `dl`.
pub fn spoke_at(curve: &CenterCurve, radius: &dyn Fn(f64) -> f64, l: f64, dl: f64) -> Result<MedialSpoke2> {
    let r = radius(l);
    if !(r > 0.0) {
        return Err(Error::Gc2d(format!("non-positive radius {r} at arclength {l}")));
    }
    let slope = (radius(l + dl) - radius(l - dl)) / (2.0 * dl);
    if slope.abs() >= 1.0 {
        return Err(Error::Gc2d(format!("|dR/dl| = {:.3} >= 1 at arclength {l:.4}: end-cap region", slope.abs())));
    }
    let (p, t, n) = (curve.point(l), curve.tangent(l), curve.normal(l));
    let base = p - t * (r * slope);
    let off = n * (r * (1.0 - slope * slope).sqrt());
    Ok(MedialSpoke2 {
        arclength: l,
        fraction: l / curve.length(),
        point: p,
        tangent: t,
        normal: n,
        radius: r,
        slope,
        up_tip: base + off,
        down_tip: base - off,
    })
}

/// Spokes at arclength fractions `k / (count + 1)`, skipping end caps.
pub fn medial_spokes_2d(curve: &CenterCurve, radius: &dyn Fn(f64) -> f64, count: usize) -> Result<Vec<MedialSpoke2>> {
    if count == 0 {
        return Err(Error::Gc2d("station count must be positive".into()));
    }
    let len = curve.length();
    let dl = len / (4.0 * count as f64);
    (1..=count)
        .map(|k| k as f64 / (count + 1) as f64)
        .filter(|f| (END_CAP_FRACTION..=1.0 - END_CAP_FRACTION).contains(f))
        .map(|f| spoke_at(curve, radius, f * len, dl))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiChord {
    pub arclength: f64,
    pub fraction: f64,
    pub spine_point: Vec2,
    pub up_tip: Vec2,
    pub down_tip: Vec2,
    pub trimmed: bool,
}

impl SemiChord {
    pub fn length(&self) -> f64 {
        (self.up_tip - self.down_tip).norm()
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.up_tip + self.down_tip) * 0.5
    }
}

/// Chord through the spoke tips, stretched both ways to the polygon.
pub fn stretch_chord(spoke: &MedialSpoke2, polygon: &[Vec2]) -> Result<SemiChord> {
    let m = (spoke.up_tip + spoke.down_tip) * 0.5;
    if !point_in_polygon(&m, polygon) {
        return Err(Error::Gc2d(format!("chord at arclength {:.4} starts outside the polygon", spoke.arclength)));
    }
    let eps = 1e-12 * bbox(polygon).2;
    let reach = |d: Vec2| {
        ray_polygon(&m, &d, polygon, eps)
            .map(|(t, _, _)| m + d * t)
            .ok_or_else(|| Error::Gc2d(format!("chord at arclength {:.4} fails to reach the boundary", spoke.arclength)))
    };
    Ok(SemiChord {
        arclength: spoke.arclength,
        fraction: spoke.fraction,
        spine_point: spoke.point,
        up_tip: reach(spoke.normal)?,
        down_tip: reach(-spoke.normal)?,
        trimmed: false,
    })
}

fn proper_crossing(a: &SemiChord, b: &SemiChord) -> Option<Vec2> {
    const TOL: f64 = 1e-9;
    segment_intersection(&a.down_tip, &a.up_tip, &b.down_tip, &b.up_tip)
        .filter(|&(s, t)| s > TOL && s < 1.0 - TOL && t > TOL && t < 1.0 - TOL)
        .map(|(s, _)| a.down_tip + (a.up_tip - a.down_tip) * s)
}

/// Cut crossing chords back to their crossing point until no two cross.
pub fn trim_chords(chords: &mut [SemiChord]) {
    let n = chords.len();
    for _ in 0..4 * n.max(1) {
        let mut changed = false;
        for i in 0..n {
            for j in i + 1..n {
                if let Some(x) = proper_crossing(&chords[i], &chords[j]) {
                    for c in [i, j] {
                        let ch = &mut chords[c];
                        if (x - ch.up_tip).norm() < (x - ch.down_tip).norm() {
                            ch.up_tip = x;
                        } else {
                            ch.down_tip = x;
                        }
                        ch.trimmed = true;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

pub fn chords_cross(chords: &[SemiChord]) -> bool {
    (0..chords.len()).any(|i| (i + 1..chords.len()).any(|j| proper_crossing(&chords[i], &chords[j]).is_some()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gc2dModel {
    pub boundary: GcBoundary,
    pub center_curve: CenterCurve,
    pub degree: usize,
    pub spokes: Vec<MedialSpoke2>,
    pub chords: Vec<SemiChord>,
    /// `(l, R(l))` at each station.
    pub radius_samples: Vec<[f64; 2]>,
    /// Stations whose concave-side half-width reaches the radius of curvature.
    pub rcc_violations: Vec<usize>,
}

impl Gc2dModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Diagram of the polygon, centre curve, chords and spokes in local coordinates.
    pub fn to_svg(&self) -> String {
        let (lo, hi, diag) = bbox(&self.boundary.polygon);
        let pad = 0.05 * diag;
        let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
        let stroke = diag / 400.0;
        let pt = |p: &Vec2| format!("{:.6},{:.6}", p.x, -p.y);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.6} {:.6} {:.6} {:.6}" width="800" height="{:.0}">"#,
            lo.x - pad,
            -hi.y - pad,
            w,
            h,
            800.0 * h / w
        );
        let poly = &self.boundary.polygon;
        let n = poly.len();
        for i in 0..n {
            let color = match self.boundary.labels[i] {
                Side::Top => "#1f5fbf",
                Side::Bottom => "#bf3f1f",
            };
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="{stroke:.6}"/>"#,
                poly[i].x, -poly[i].y, poly[(i + 1) % n].x, -poly[(i + 1) % n].y
            );
        }
        let curve: Vec<String> = self.center_curve.polyline(200).iter().map(pt).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="{:.6}"/>"#, curve.join(" "), 2.0 * stroke);
        for c in &self.chords {
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#2a9d4a" stroke-width="{stroke:.6}"/>"##,
                c.down_tip.x, -c.down_tip.y, c.up_tip.x, -c.up_tip.y
            );
        }
        for sp in &self.spokes {
            for tip in [sp.up_tip, sp.down_tip] {
                let _ = writeln!(
                    s,
                    r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#8a2be2" stroke-width="{:.6}"/>"##,
                    sp.point.x, -sp.point.y, tip.x, -tip.y, 0.5 * stroke
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Spokes, stretched and trimmed chords at `count` uniformly registered stations.
pub fn semi_chordal_structure(boundary: &GcBoundary, curve: &CenterCurve, degree: usize, count: usize) -> Result<Gc2dModel> {
    let poly = &boundary.polygon;
    let radius = |l: f64| dist_to_polygon(&curve.point(l), poly);
    let spokes = medial_spokes_2d(curve, &radius, count)?;
    let mut chords = spokes.iter().map(|s| stretch_chord(s, poly)).collect::<Result<Vec<_>>>()?;
    trim_chords(&mut chords);
    let rcc_violations = chords
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let k = curve.curvature(c.arclength);
            let half = if k > 0.0 { (c.up_tip - c.spine_point).norm() } else { (c.down_tip - c.spine_point).norm() };
            half * k.abs() >= 1.0
        })
        .map(|(i, _)| i)
        .collect();
    Ok(Gc2dModel {
        boundary: boundary.clone(),
        center_curve: curve.clone(),
        degree,
        radius_samples: spokes.iter().map(|s| [s.arclength, s.radius]).collect(),
        spokes,
        chords,
        rcc_violations,
    })
}

/// Full planar pipeline: division at the extreme vertices, CMS, curve fit and chords.
/// `pitch` defaults to a two-hundredth of the polygon diagonal.
pub fn fit_gc2d(polygon: &[Vec2], degree: usize, count: usize, pitch: Option<f64>) -> Result<Gc2dModel> {
    let boundary = GcBoundary::new(polygon)?;
    fit_gc2d_boundary(&boundary, degree, count, pitch)
}

pub fn fit_gc2d_boundary(boundary: &GcBoundary, degree: usize, count: usize, pitch: Option<f64>) -> Result<Gc2dModel> {
    let pitch = pitch.unwrap_or(boundary.diagonal() / 200.0);
    let cms = extract_cms_2d(&boundary.polygon, &boundary.labels, pitch)?;
    let curve = fit_center_curve(boundary, &cms.points, degree)?;
    semi_chordal_structure(boundary, &curve, degree, count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraightenedGc {
    /// Images of the stations on the x-axis, at their spine arclengths.
    pub spine: Vec<Vec2>,
    /// Vertical chords `[down, up]` centred on the axis.
    pub chords: Vec<[Vec2; 2]>,
    /// Outline through the chord ends: down ends left to right, then up ends back.
    pub polygon: Vec<Vec2>,
}

impl StraightenedGc {
    pub fn to_svg(&self) -> String {
        let (lo, hi, diag) = bbox(&self.polygon);
        let pad = 0.05 * diag;
        let stroke = diag / 400.0;
        let mut s = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.6} {:.6} {:.6} {:.6}" width="800">"#,
            lo.x - pad,
            -hi.y - pad,
            hi.x - lo.x + 2.0 * pad,
            hi.y - lo.y + 2.0 * pad
        );
        s.push('\n');
        let pts: Vec<String> = self.polygon.iter().map(|p| format!("{:.6},{:.6}", p.x, -p.y)).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="none" stroke="black" stroke-width="{stroke:.6}"/>"#, pts.join(" "));
        for [d, u] in &self.chords {
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#2a9d4a" stroke-width="{stroke:.6}"/>"##,
                d.x, -d.y, u.x, -u.y
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Lay the stations out on a line at their spine arclengths and stand each
/// chord perpendicular to it, centred, with its length kept.
pub fn straighten_2d(model: &Gc2dModel) -> StraightenedGc {
    let spine: Vec<Vec2> = model.chords.iter().map(|c| Vec2::new(c.arclength, 0.0)).collect();
    let chords: Vec<[Vec2; 2]> = model
        .chords
        .iter()
        .map(|c| {
            let half = 0.5 * c.length();
            [Vec2::new(c.arclength, -half), Vec2::new(c.arclength, half)]
        })
        .collect();
    let mut polygon: Vec<Vec2> = chords.iter().map(|c| c[0]).collect();
    polygon.extend(chords.iter().rev().map(|c| c[1]));
    StraightenedGc { spine, chords, polygon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Rectangle `[0, len] x [-r, r]` with edges subdivided every `r / 40`.
    fn tube(len: f64, r: f64) -> Vec<Vec2> {
        let corners = [Vec2::new(0.0, -r), Vec2::new(len, -r), Vec2::new(len, r), Vec2::new(0.0, r)];
        let mut poly = Vec::new();
        for i in 0..4 {
            let (a, b) = (corners[i], corners[(i + 1) % 4]);
            let k = ((b - a).norm() / (r / 40.0)).round() as usize;
            poly.extend((0..k).map(|s| a + (b - a) * (s as f64 / k as f64)));
        }
        poly
    }

    fn flat(x0: f64, x1: f64) -> CenterCurve {
        CenterCurve::new(Poly1 { shift: 0.0, scale: 1.0, coeffs: vec![0.0, 0.0] }, x0, x1).unwrap()
    }

    #[test]
    fn curve_fits() {
        let pts: Vec<Vec2> = (0..20).map(|i| Vec2::new(i as f64 * 0.1, 0.5 * i as f64 * 0.1 - 1.0)).collect();
        let (_, rms) = fit_relaxed_cms_2d(&pts, 1).unwrap();
        assert!(rms * rms * 20.0 <= 1e-12);
        let par: Vec<Vec2> = (0..21).map(|i| Vec2::new(-1.0 + 0.1 * i as f64, (-1.0 + 0.1 * i as f64).powi(2))).collect();
        let (p, _) = fit_relaxed_cms_2d(&par, 2).unwrap();
        let c = p.power_coefficients();
        assert!(c[0].abs() < 1e-9 && c[1].abs() < 1e-9 && (c[2] - 1.0).abs() < 1e-9);
        assert!(fit_relaxed_cms_2d(&par, 0).is_err() && fit_relaxed_cms_2d(&par, 8).is_err());
    }

    #[test]
    fn arclength_of_a_parabola() {
        let c = CenterCurve::new(Poly1 { shift: 0.0, scale: 1.0, coeffs: vec![0.0, 0.0, 1.0] }, 0.0, 1.0).unwrap();
        // Closed form of the integral of sqrt(1 + 4x^2) over [0, 1].
        let exact = 0.5 * 5f64.sqrt() + 0.25 * (2.0 + 5f64.sqrt()).ln();
        assert!((c.length() - exact).abs() < 1e-10);
        for l in [0.1, 0.7, 1.3] {
            assert!((c.arclength_at(c.x_at(l)) - l).abs() < 1e-12);
        }
        assert!((c.curvature(0.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_radius_spokes() {
        let c = flat(0.0, 10.0);
        let spokes = medial_spokes_2d(&c, &|_| 0.7, 9).unwrap();
        assert_eq!(spokes.len(), 9);
        for s in &spokes {
            assert_eq!(s.up_tip, s.point + Vec2::new(0.0, 0.7));
            assert_eq!(s.down_tip, s.point - Vec2::new(0.0, 0.7));
        }
    }

    #[test]
    fn cone_tangency() {
        // Circles of radius 1 + 0.1 x centred on the x-axis are tangent to the
        // two lines through the apex (-10, 0) at angle asin(0.1).
        let c = flat(0.0, 10.0);
        let spokes = medial_spokes_2d(&c, &|l| 1.0 + 0.1 * l, 12).unwrap();
        let (sa, ca) = (0.1f64, (1.0f64 - 0.01).sqrt());
        for s in &spokes {
            let along = (s.point.x + 10.0) * ca;
            let up = Vec2::new(-10.0, 0.0) + Vec2::new(ca, sa) * along;
            let down = Vec2::new(-10.0, 0.0) + Vec2::new(ca, -sa) * along;
            assert!((s.up_tip - up).norm() < 1e-9 && (s.down_tip - down).norm() < 1e-9);
        }
    }

    #[test]
    fn steep_radius_is_an_end_cap() {
        let c = flat(0.0, 1.0);
        assert!(medial_spokes_2d(&c, &|l| 0.01 + l, 5).is_err());
    }

    #[test]
    fn straight_tube() {
        let (len, r) = (10.0, 0.3);
        let model = fit_gc2d(&tube(len, r), 1, 25, None).unwrap();
        assert_eq!(model.chords.len(), 25);
        for (k, c) in model.chords.iter().enumerate() {
            assert!((c.fraction - (k + 1) as f64 / 26.0).abs() < 1e-12);
            assert!((c.length() - 2.0 * r).abs() < 1e-9, "{}", c.length());
            let d = (c.up_tip - c.down_tip).normalize();
            let t = model.center_curve.tangent(c.arclength);
            assert!(d.dot(&t).abs() < 1e-9);
            assert!(c.midpoint().y.abs() < 1e-9);
        }
        assert!(model.rcc_violations.is_empty());
        assert!(!chords_cross(&model.chords));
        // A straight, symmetric tube straightens into a translate of itself.
        let st = straighten_2d(&model);
        for (c, s) in model.chords.iter().zip(&st.chords) {
            let shift = c.midpoint() - (s[0] + s[1]) * 0.5;
            assert!((c.down_tip - s[0] - shift).norm() < 1e-9 && (c.up_tip - s[1] - shift).norm() < 1e-9);
        }
        let _ = model.to_svg();
        let back: Gc2dModel = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn boundary_frame_and_labels() {
        let rot = nalgebra::Rotation2::new(0.8);
        let poly: Vec<Vec2> = tube(6.0, 0.5).iter().rev().map(|p| rot * p + Vec2::new(2.0, -1.0)).collect();
        let b = GcBoundary::new(&poly).unwrap();
        assert!(signed_area(&b.polygon) > 0.0);
        let [l, r] = b.vertices;
        assert!(b.polygon[l].x < b.polygon[r].x);
        for (p, s) in b.polygon.iter().zip(&b.labels) {
            if p.y.abs() > 0.3 {
                assert_eq!(*s == Side::Top, p.y > 0.0);
            }
        }
    }

    #[test]
    fn trimming_removes_crossings() {
        let mk = |d: Vec2, u: Vec2| SemiChord {
            arclength: 0.0,
            fraction: 0.0,
            spine_point: (d + u) * 0.5,
            up_tip: u,
            down_tip: d,
            trimmed: false,
        };
        let mut chords = vec![
            mk(Vec2::new(0.0, -1.0), Vec2::new(0.0, 1.0)),
            mk(Vec2::new(0.5, -1.0), Vec2::new(-0.5, 1.0)),
            mk(Vec2::new(1.0, -1.0), Vec2::new(1.0, 1.0)),
        ];
        assert!(chords_cross(&chords));
        trim_chords(&mut chords);
        assert!(!chords_cross(&chords));
        assert!(chords[0].trimmed && chords[1].trimmed && !chords[2].trimmed);
    }

    #[test]
    fn mirror_symmetric_skeleton_on_axis() {
        // Symmetric about y = 0 with a bulge in the middle.
        let n = 300;
        let w = |x: f64| 0.4 * (1.0 - (x / 3.0).powi(2)).max(0.0).sqrt() * (1.0 + 0.3 * (x * 1.3).cos());
        let mut poly: Vec<Vec2> = (0..=n).map(|i| {
            let x = -3.0 * (std::f64::consts::PI * i as f64 / n as f64).cos();
            Vec2::new(x, -w(x))
        }).collect();
        let upper: Vec<Vec2> = (1..n).rev().map(|i| Vec2::new(poly[i].x, -poly[i].y)).collect();
        poly.extend(upper);
        let b = GcBoundary::in_frame(&poly, Frame2::identity()).unwrap();
        // Degree-1 curve on the symmetry axis.
        let curve = CenterCurve::clipped(Poly1 { shift: 0.0, scale: 1.0, coeffs: vec![0.0, 0.0] }, &b.polygon, 0.0).unwrap();
        let model = semi_chordal_structure(&b, &curve, 1, 15).unwrap();
        for c in &model.chords {
            assert!(c.midpoint().y.abs() < 1e-9, "{:?}", c.midpoint());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn spokes_have_radius_length(a in 0.0f64..0.3, w in 0.5f64..1.5, r0 in 0.3f64..0.6, s in -0.05f64..0.05) {
            let poly = Poly1 { shift: 0.0, scale: 1.0, coeffs: vec![0.0, a, -0.2 * a * w, 0.03 * w] };
            let c = CenterCurve::new(poly, -2.0, 2.0).unwrap();
            let spokes = medial_spokes_2d(&c, &|l| r0 + s * l, 20).unwrap();
            for sp in &spokes {
                let r = r0 + s * sp.arclength;
                prop_assert!(((sp.up_tip - sp.point).norm() - r).abs() < 1e-9);
                prop_assert!(((sp.down_tip - sp.point).norm() - r).abs() < 1e-9);
            }
        }
    }
}

#[cfg(test)]
mod random_tests {
    use super::*;
    use crate::synth::random_gc2d;

    #[test]
    fn random_tubes_fit_and_straighten() {
        for seed in 0..20 {
            let poly = random_gc2d(seed);
            let model = fit_gc2d(&poly, 5, 15, None).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert_eq!(model.chords.len(), 15);
            assert!(!chords_cross(&model.chords));
            for s in &model.spokes {
                assert!(((s.up_tip - s.point).norm() - s.radius).abs() < 1e-9);
            }
            let st = straighten_2d(&model);
            for (c, s) in model.chords.iter().zip(&st.chords) {
                assert!(((s[1] - s[0]).norm() - c.length()).abs() < 1e-9);
            }
        }
    }
}
