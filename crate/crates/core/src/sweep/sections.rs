//! Stations along the spine, their slicing planes and veins, and the check
//! that neighbouring planes do not meet inside the object.

use super::{PlaneMode, SheetSurface, SpineFit, SpineKind};
use crate::gc2d::spoke_at;
use crate::geometry::{bisect, cross2, cumulative_length, dist_to_polygon, perp, point_in_polygon, polyline_at, Vec2, Vec3};
use crate::mesh::TriangleMesh;
use crate::{Error, Result};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Newton corrections after each marching step.
const NEWTON_STEPS: usize = 2;
/// Scan resolution for the chord through a station.
const CHORD_SCAN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub index: usize,
    /// 3D arclength along the spine.
    pub arclength: f64,
    pub uv: Vec2,
    pub point: Vec3,
    /// Rotation-minimizing frame: columns are tangent, side and normal.
    pub frame: Matrix3<f64>,
    /// Unit normal of the slicing plane.
    pub plane_normal: Vec3,
    /// Whether the plane came from a chord rather than the spine tangent.
    pub chordal: bool,
    pub is_end: bool,
}

impl Station {
    pub fn tangent(&self) -> Vec3 {
        self.frame.column(0).into_owned()
    }

    /// Points to the left of the spine, `normal × tangent`.
    pub fn side(&self) -> Vec3 {
        self.frame.column(1).into_owned()
    }

    pub fn normal(&self) -> Vec3 {
        self.frame.column(2).into_owned()
    }
}

/// Curve of the sheet inside one slicing plane, from the spine to the crest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vein {
    pub uv: Vec<Vec2>,
    pub points: Vec<Vec3>,
    pub cum: Vec<f64>,
}

impl Vein {
    fn new(uv: Vec<Vec2>, points: Vec<Vec3>) -> Self {
        let cum = cumulative_length(&points);
        Vein { uv, points, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn end(&self) -> Vec3 {
        *self.points.last().unwrap()
    }

    /// Point and sheet parameter at a fraction of the arclength.
    pub fn at_fraction(&self, f: f64) -> (Vec3, Vec2) {
        let s = f * self.length();
        (polyline_at(&self.points, &self.cum, s), polyline_at(&self.uv, &self.cum, s))
    }

    /// Unit direction of travel at a fraction of the arclength.
    pub fn direction(&self, f: f64) -> Vec3 {
        let n = self.points.len();
        if n < 2 {
            return Vec3::zeros();
        }
        let s = f * self.length();
        let i = self.cum.partition_point(|&c| c <= s).clamp(1, n - 1);
        (self.points[i] - self.points[i - 1]).normalize()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub station: Station,
    pub left: Vein,
    pub right: Vein,
}

/// Normals transported along a polyline by the minimal rotation between
/// consecutive tangents, so each step turns the frame by the tangent's angle.
pub fn rotation_minimizing_frames(tangents: &[Vec3], r0: Vec3) -> Vec<Vec3> {
    let mut r = vec![(r0 - tangents[0] * r0.dot(&tangents[0])).normalize()];
    for w in tangents.windows(2) {
        let prev = *r.last().unwrap();
        let (a, b) = (w[0].normalize(), w[1].normalize());
        let (axis, c) = (a.cross(&b), a.dot(&b));
        let sn = axis.norm();
        let next = if sn < 1e-15 {
            prev
        } else {
            // Rodrigues' formula without going through the angle.
            let k = axis / sn;
            prev * c + k.cross(&prev) * sn + k * (k.dot(&prev) * (1.0 - c))
        };
        r.push((next - w[1] * next.dot(&w[1])).normalize());
    }
    r
}

/// Station normals from the chord family: the chord through the station's
/// position on the flattened sheet, or `None` where no chord reaches it.
fn chordal_plane(surface: &SheetSurface, fit: &SpineFit, q: &Vec2, param: f64) -> Option<Vec3> {
    let fam = &fit.family;
    let len = fam.curve.length();
    let poly = &fam.boundary.polygon;
    let radius = |s: f64| dist_to_polygon(&fam.curve.point(s), poly);
    let g = |l: f64| -> Option<f64> {
        let sp = spoke_at(&fam.curve, &radius, l, fam.step).ok()?;
        let m = sp.point - sp.tangent * (sp.radius * sp.slope);
        Some((q - m).dot(&sp.tangent))
    };
    let (lo, hi) = ((param - len / 4.0).max(0.0), (param + len / 4.0).min(len));
    let ls: Vec<f64> = (0..=CHORD_SCAN).map(|k| lo + (hi - lo) * k as f64 / CHORD_SCAN as f64).collect();
    let gs: Vec<Option<f64>> = ls.iter().map(|&l| g(l)).collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for k in 0..CHORD_SCAN {
        if let (Some(a), Some(b)) = (gs[k], gs[k + 1]) {
            if a == 0.0 || (a > 0.0) != (b > 0.0) {
                let mid = 0.5 * (ls[k] + ls[k + 1]);
                if best.is_none_or(|(m, _, _)| (mid - param).abs() < (m - param).abs()) {
                    best = Some((mid, ls[k], ls[k + 1]));
                }
            }
        }
    }
    let (_, a, b) = best?;
    let l = bisect(a, b, |l| g(l).unwrap_or(0.0), 60);
    g(l)?;
    let d = fam.curve.normal(l);
    Some(surface.frame.dir_to_world(&Vec3::new(-d.y, d.x, 0.0)).normalize())
}

/// Station parameters on the sheet, placed uniformly in 3D arclength.
fn place_stations(surface: &SheetSurface, fit: &SpineFit, count: usize) -> Vec<(f64, Vec2, Vec3, f64)> {
    let spine = &fit.spine;
    let len = spine.length();
    (0..count)
        .map(|k| {
            let s = len * k as f64 / (count - 1) as f64;
            let param = spine.param_at(s);
            if k == 0 || k == count - 1 {
                let uv = spine.uv_at(s);
                return (s, uv, spine.at(s), param);
            }
            let uv = match spine.kind {
                SpineKind::Chordal => fit.family.chord(param).map(|c| c.midpoint()).unwrap_or_else(|| spine.uv_at(s)),
                SpineKind::Relaxed => fit.family.curve.point(param),
                SpineKind::Free => spine.uv_at(s),
            };
            (s, uv, surface.point(&uv), param)
        })
        .collect()
}

/// Stations with their planes and veins. End stations get single-point veins.
pub fn build_cross_sections(surface: &SheetSurface, fit: &SpineFit, count: usize, mode: PlaneMode) -> Result<Vec<CrossSection>> {
    if count < 3 {
        return Err(Error::Sweep(format!("need at least 3 stations, got {count}")));
    }
    let spine = &fit.spine;
    let h = spine.length() / 400.0;
    let placed = place_stations(surface, fit, count);
    let tangents: Vec<Vec3> = placed.iter().map(|p| spine.tangent(p.0, h)).collect();
    let normals = rotation_minimizing_frames(&tangents, surface.normal(&placed[0].1));
    let mut out = Vec::with_capacity(count);
    for (k, ((s, uv, point, param), (t, n))) in placed.into_iter().zip(tangents.into_iter().zip(normals)).enumerate() {
        let is_end = k == 0 || k == count - 1;
        let side = n.cross(&t);
        let chord = match mode {
            PlaneMode::Normal => None,
            _ if is_end => None,
            _ => chordal_plane(surface, fit, &uv, param),
        };
        let chordal = chord.is_some();
        let plane_normal = chord.map(|p| if p.dot(&t) < 0.0 { -p } else { p }).unwrap_or(t);
        let station = Station {
            index: k,
            arclength: s,
            uv,
            point,
            frame: Matrix3::from_columns(&[t, side, n]),
            plane_normal,
            chordal,
            is_end,
        };
        let (left, right) = if is_end {
            let v = Vein::new(vec![uv], vec![point]);
            (v.clone(), v)
        } else {
            (trace_vein(surface, &station, 1.0)?, trace_vein(surface, &station, -1.0)?)
        };
        out.push(CrossSection { station, left, right });
    }
    Ok(out)
}

/// March the plane's trace on the sheet from the station to the crest, on the
/// side where the 3D direction agrees with `sign · side`.
fn trace_vein(surface: &SheetSurface, station: &Station, sign: f64) -> Result<Vein> {
    let pn = station.plane_normal;
    let s0 = station.point;
    let g = |uv: &Vec2| (surface.point(uv) - s0).dot(&pn);
    let grad = |uv: &Vec2| {
        let (tu, tv) = surface.tangents(uv);
        Vec2::new(pn.dot(&tu), pn.dot(&tv))
    };
    let newton = |mut uv: Vec2| {
        for _ in 0..NEWTON_STEPS {
            let gr = grad(&uv);
            let n2 = gr.norm_squared();
            if n2 > 1e-300 {
                uv -= gr * (g(&uv) / n2);
            }
        }
        uv
    };
    let domain = &surface.domain;
    let lo = domain.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = domain.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let step = (hi - lo).norm() / 300.0;
    let max_steps = 3000;

    let mut uv = station.uv;
    let mut uvs = vec![uv];
    let mut pts = vec![s0];
    let mut dir: Option<Vec2> = None;
    let side = station.side() * sign;
    let exit = 'march: {
        for _ in 0..max_steps {
            let gr = grad(&uv);
            if gr.norm_squared() < 1e-300 {
                return Err(Error::Sweep(format!("slicing plane {} is tangent to the sheet", station.index)));
            }
            let mut d = perp(&gr).normalize();
            match dir {
                None => {
                    let (tu, tv) = surface.tangents(&uv);
                    if (tu * d.x + tv * d.y).dot(&side) < 0.0 {
                        d = -d;
                    }
                }
                Some(prev) if prev.dot(&d) < 0.0 => d = -d,
                _ => {}
            }
            dir = Some(d);
            let next = newton(uv + d * step);
            if !point_in_polygon(&next, domain) {
                let t = bisect(0.0, 1.0, |t| if point_in_polygon(&(uv + (next - uv) * t), domain) { 1.0 } else { -1.0 }, 40);
                break 'march uv + (next - uv) * t;
            }
            uv = next;
            uvs.push(uv);
            pts.push(surface.point(&uv));
        }
        return Err(Error::Sweep(format!("vein at station {} did not reach the crest", station.index)));
    };
    // Finish on the crest where it crosses the plane, nearest the exit point.
    let (n, crest) = (domain.len(), &surface.crest);
    let mut best: Option<(f64, Vec2, Vec3)> = None;
    for i in 0..n {
        let j = (i + 1) % n;
        let (da, db) = ((crest[i] - s0).dot(&pn), (crest[j] - s0).dot(&pn));
        if (da > 0.0) == (db > 0.0) || da == db {
            continue;
        }
        let t = da / (da - db);
        let q = domain[i] + (domain[j] - domain[i]) * t;
        let d = (q - exit).norm();
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, q, crest[i] + (crest[j] - crest[i]) * t));
        }
    }
    let (_, q, c) = best.ok_or_else(|| Error::Sweep(format!("slicing plane {} misses the crest", station.index)))?;
    uvs.push(q);
    pts.push(c);
    Ok(Vein::new(uvs, pts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RccPair {
    pub stations: [usize; 2],
    /// Whether the two planes meet inside both cross-sections.
    pub intersects_inside: bool,
    /// Negative overlap of the cross-sections along the planes' common line,
    /// or their separation when they do not meet.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RccReport {
    pub pairs: Vec<RccPair>,
}

impl RccReport {
    pub fn violations(&self) -> usize {
        self.pairs.iter().filter(|p| p.intersects_inside).count()
    }

    pub fn satisfied(&self) -> bool {
        self.violations() == 0
    }

    pub fn min_margin(&self) -> f64 {
        self.pairs.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Closed loops where the plane `(x - origin)·normal = 0` cuts the mesh.
pub fn slice_loops(mesh: &TriangleMesh, origin: &Vec3, normal: &Vec3) -> Vec<Vec<Vec3>> {
    let v = mesh.vertices();
    // Vertices on the plane count as positive so every crossing is on an edge.
    let d: Vec<f64> = v.iter().map(|p| (p - origin).dot(normal)).collect();
    let pos = |i: usize| d[i] >= 0.0;
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut point_of: HashMap<(usize, usize), Vec3> = HashMap::new();
    let mut next: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for f in mesh.faces() {
        let cut: Vec<(usize, usize)> = (0..3)
            .map(|k| (f[k], f[(k + 1) % 3]))
            .filter(|&(a, b)| pos(a) != pos(b))
            .collect();
        if cut.len() != 2 {
            continue;
        }
        for &(a, b) in &cut {
            point_of.entry(key(a, b)).or_insert_with(|| {
                let t = d[a] / (d[a] - d[b]);
                v[a] + (v[b] - v[a]) * t
            });
        }
        // Orient by the face winding so loops chain head to tail.
        let (e0, e1) = (key(cut[0].0, cut[0].1), key(cut[1].0, cut[1].1));
        if pos(cut[0].0) {
            next.insert(e1, e0);
        } else {
            next.insert(e0, e1);
        }
    }
    let mut loops = Vec::new();
    let mut seen: std::collections::HashSet<(usize, usize)> = Default::default();
    let mut starts: Vec<_> = next.keys().copied().collect();
    starts.sort_unstable();
    for start in starts {
        if seen.contains(&start) {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while seen.insert(e) {
            lp.push(point_of[&e]);
            match next.get(&e) {
                Some(&n) => e = n,
                None => break,
            }
        }
        if lp.len() >= 3 {
            loops.push(lp);
        }
    }
    loops
}

/// In-plane coordinates for a plane with the given unit normal.
fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (a - n * a.dot(n)).normalize();
    (e1, n.cross(&e1))
}

/// Smallest slice loop around the station, in 3D.
fn section_region(mesh: &TriangleMesh, st: &Station) -> Option<Vec<Vec3>> {
    let (e1, e2) = plane_basis(&st.plane_normal);
    let flat = |p: &Vec3| Vec2::new((p - st.point).dot(&e1), (p - st.point).dot(&e2));
    slice_loops(mesh, &st.point, &st.plane_normal)
        .into_iter()
        .filter(|lp| {
            let poly: Vec<Vec2> = lp.iter().map(flat).collect();
            point_in_polygon(&Vec2::zeros(), &poly)
        })
        .min_by(|a, b| {
            let area = |lp: &Vec<Vec3>| crate::geometry::signed_area(&lp.iter().map(flat).collect::<Vec<_>>()).abs();
            area(a).total_cmp(&area(b))
        })
}

/// Parameter intervals where the line `o + t d` lies inside a planar loop.
fn line_intervals(lp: &[Vec3], o: &Vec3, d: &Vec3, n: &Vec3) -> Vec<[f64; 2]> {
    let (e1, e2) = plane_basis(n);
    let flat = |p: &Vec3| Vec2::new((p - o).dot(&e1), (p - o).dot(&e2));
    let dir = Vec2::new(d.dot(&e1), d.dot(&e2));
    let m = lp.len();
    let mut ts = Vec::new();
    for i in 0..m {
        let (a, b) = (flat(&lp[i]), flat(&lp[(i + 1) % m]));
        let (sa, sb) = (cross2(&dir, &a), cross2(&dir, &b));
        if (sa >= 0.0) != (sb >= 0.0) {
            let q = a + (b - a) * (sa / (sa - sb));
            ts.push(q.dot(&dir) / dir.norm_squared());
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn dist_to_line(p: &Vec3, o: &Vec3, d: &Vec3) -> f64 {
    let w = p - o;
    (w - d * w.dot(d)).norm()
}

fn pair_check(mesh: &TriangleMesh, a: &Station, b: &Station) -> RccPair {
    let stations = [a.index, b.index];
    let (na, nb) = (a.plane_normal, b.plane_normal);
    let dir = na.cross(&nb);
    if dir.norm() < 1e-9 {
        let margin = (b.point - a.point).dot(&na).abs();
        return RccPair { stations, intersects_inside: false, margin };
    }
    let d = dir.normalize();
    // Point on both planes nearest the stations' midpoint.
    let m = (a.point + b.point) * 0.5;
    let c = na.dot(&nb);
    let (ra, rb) = (na.dot(&(a.point - m)), nb.dot(&(b.point - m)));
    let det = 1.0 - c * c;
    let (x, y) = ((ra - c * rb) / det, (rb - c * ra) / det);
    let o = m + na * x + nb * y;

    let (ra, rb) = (section_region(mesh, a), section_region(mesh, b));
    let (Some(ra), Some(rb)) = (ra, rb) else {
        return RccPair { stations, intersects_inside: false, margin: f64::MAX };
    };
    let ia = line_intervals(&ra, &o, &d, &na);
    let ib = line_intervals(&rb, &o, &d, &nb);
    let nearest = |lp: &[Vec3]| lp.iter().map(|p| dist_to_line(p, &o, &d)).fold(f64::INFINITY, f64::min);
    if ia.is_empty() || ib.is_empty() {
        let margin = if ia.is_empty() { nearest(&ra) } else { 0.0 }.max(if ib.is_empty() { nearest(&rb) } else { 0.0 });
        return RccPair { stations, intersects_inside: false, margin };
    }
    let mut overlap = f64::NEG_INFINITY;
    for p in &ia {
        for q in &ib {
            overlap = overlap.max(p[1].min(q[1]) - p[0].max(q[0]));
        }
    }
    RccPair { stations, intersects_inside: overlap > 0.0, margin: -overlap }
}

/// Clearance of consecutive interior slicing planes.
pub fn rcc_report(mesh: &TriangleMesh, sections: &[CrossSection]) -> RccReport {
    let interior: Vec<&Station> = sections.iter().map(|s| &s.station).filter(|s| !s.is_end).collect();
    let pairs = interior.windows(2).map(|w| pair_check(mesh, w[0], w[1])).collect();
    RccReport { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::tests::ellipsoid_setup;
    use crate::sweep::{fit_skeletal_sheet, fit_spine, Spine};

    #[test]
    fn rotation_minimizing_on_a_helix() {
        let tang: Vec<Vec3> = (0..80).map(|i| {
            let t = i as f64 * 0.1;
            Vec3::new(-t.sin(), t.cos(), 0.3).normalize()
        }).collect();
        let r = rotation_minimizing_frames(&tang, Vec3::z());
        for i in 0..79 {
            assert!((r[i].dot(&tang[i])).abs() < 1e-12);
            let fa = Matrix3::from_columns(&[tang[i], r[i], tang[i].cross(&r[i])]);
            let fb = Matrix3::from_columns(&[tang[i + 1], r[i + 1], tang[i + 1].cross(&r[i + 1])]);
            let frame_angle = crate::geometry::rotation_angle(&fa, &fb);
            let turn = tang[i].dot(&tang[i + 1]).clamp(-1.0, 1.0).acos();
            assert!(frame_angle <= turn + 1e-9, "{frame_angle} > {turn}");
        }
    }

    #[test]
    fn ellipsoid_cross_sections() {
        let (mesh, div, cms) = ellipsoid_setup(4);
        let sheet = fit_skeletal_sheet(&cms, &mesh, &div, 1, false).unwrap();
        for mode in [PlaneMode::Normal, PlaneMode::Chordal, PlaneMode::ChordalSpine] {
            let fit = fit_spine(&sheet, 1, mode, 15).unwrap();
            let secs = build_cross_sections(&sheet, &fit, 15, mode).unwrap();
            assert_eq!(secs.len(), 15);
            assert_eq!(secs.iter().flat_map(|s| [&s.left, &s.right]).count(), 30);
            for s in &secs[1..14] {
                let n = s.station.plane_normal;
                let ang = n.x.abs().clamp(0.0, 1.0).acos().to_degrees();
                assert!(ang < 2.0, "{mode:?} station {} plane off by {ang}°", s.station.index);
                for v in [&s.left, &s.right] {
                    for p in &v.points {
                        assert!((p - s.station.point).dot(&n).abs() < 1e-6);
                    }
                }
                assert!(s.left.end().y * s.right.end().y < 0.0, "{mode:?} {} {:?} {:?} {:?}", s.station.index, s.left.end(), s.right.end(), s.station.frame);
                assert!(s.left.end().y * s.station.side().y > 0.0);
            }
            let rcc = rcc_report(&mesh, &secs);
            assert_eq!(rcc.pairs.len(), 12);
            assert!(rcc.satisfied());
            assert!(rcc.pairs.iter().all(|p| p.margin.is_finite() && p.margin > 0.0));
        }
    }

    #[test]
    fn over_bent_spine_fails_the_clearance() {
        let (mesh, div, cms) = ellipsoid_setup(4);
        let sheet = fit_skeletal_sheet(&cms, &mesh, &div, 1, false).unwrap();
        let mut fit = fit_spine(&sheet, 1, PlaneMode::Normal, 9).unwrap();
        // Tight arc around the centre: its normal planes all meet there.
        let uv: Vec<Vec2> = (0..=200).map(|i| {
            let a = std::f64::consts::PI * (0.1 + 0.8 * i as f64 / 200.0);
            Vec2::new(0.3 * a.cos(), 0.3 * a.sin())
        }).collect();
        fit.spine = Spine::from_polyline(&sheet, uv);
        let secs = build_cross_sections(&sheet, &fit, 9, PlaneMode::Normal).unwrap();
        let rcc = rcc_report(&mesh, &secs);
        assert!(!rcc.satisfied());
        assert!(rcc.pairs.iter().all(|p| p.margin.is_finite()));
        assert!(rcc.min_margin() < 0.0);
    }

    #[test]
    fn slicing_an_ellipsoid_gives_one_loop() {
        let (mesh, _, _) = ellipsoid_setup(3);
        let loops = slice_loops(&mesh, &Vec3::new(0.3, 0.0, 0.0), &Vec3::x());
        assert_eq!(loops.len(), 1);
        for p in &loops[0] {
            assert!((p.x - 0.3).abs() < 1e-12);
        }
    }
}
