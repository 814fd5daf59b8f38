//! Swept skeletal structure of a slab-like object: a height-field sheet
//! relaxing the CMS, a spine across it, slicing planes with their veins,
//! the slicing-plane clearance check and the up/down spoke grid.

mod sections;
mod spokes;

pub use sections::{build_cross_sections, rcc_report, rotation_minimizing_frames, slice_loops, CrossSection, RccPair, RccReport, Station, Vein};
pub use spokes::{compute_spokes, Site, SiteKind, SpokeGrid};

use crate::cms::CmsPointSet;
use crate::division::{BoundaryDivision, Side};
use crate::flatten::pca_flatten;
use crate::gc2d::{fit_center_curve, spoke_at, stretch_chord, CenterCurve, Frame2, GcBoundary, SemiChord};
use crate::geometry::{dist_point_segment2, dist_to_polygon, frame_from_axes, orient_by_first_point, Frame3, Vec2, Vec3};
use crate::cms::extract_cms_2d;
use crate::mesh::{write_ply_points, TriangleMesh};
use crate::polyfit::{fit_poly2, Poly2};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Vertices of the dense spine polyline.
const SPINE_SAMPLES: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaneMode {
    /// Spine through the chord midpoints, planes through the chords.
    ChordalSpine,
    /// Relaxed-CMS spine, planes through the chords.
    #[default]
    Chordal,
    /// Relaxed-CMS spine, planes normal to it.
    Normal,
}

impl std::str::FromStr for PlaneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chordal-spine" => Ok(PlaneMode::ChordalSpine),
            "chordal" => Ok(PlaneMode::Chordal),
            "normal" => Ok(PlaneMode::Normal),
            _ => Err(Error::Config(format!("unknown plane mode {s:?} (chordal-spine, chordal, normal)"))),
        }
    }
}

/// Height field `w = poly(u, v)` over the crest's projection, in the sheet frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetSurface {
    /// Origin at the CMS centroid; third axis towards the top part.
    pub frame: Frame3,
    pub poly: Poly2,
    pub rms: f64,
    /// Crest projected to the sheet plane, counter-clockwise.
    pub domain: Vec<Vec2>,
    /// Crest points in world coordinates, in the order of `domain`.
    pub crest: Vec<Vec3>,
    pub flatable: bool,
    pub irregularity: Option<f64>,
}

impl SheetSurface {
    pub fn degree(&self) -> usize {
        self.poly.degree
    }

    pub fn to_uv(&self, p: &Vec3) -> Vec2 {
        self.frame.to_local(p).xy()
    }

    pub fn height(&self, uv: &Vec2) -> f64 {
        self.poly.eval(uv.x, uv.y)
    }

    pub fn point(&self, uv: &Vec2) -> Vec3 {
        self.frame.to_world(&Vec3::new(uv.x, uv.y, self.height(uv)))
    }

    /// Unit normal pointing to the top side.
    pub fn normal(&self, uv: &Vec2) -> Vec3 {
        let (fu, fv) = self.poly.gradient(uv.x, uv.y);
        self.frame.dir_to_world(&Vec3::new(-fu, -fv, 1.0).normalize())
    }

    /// World-space partial derivatives of [`SheetSurface::point`].
    pub fn tangents(&self, uv: &Vec2) -> (Vec3, Vec3) {
        let (fu, fv) = self.poly.gradient(uv.x, uv.y);
        (self.frame.dir_to_world(&Vec3::new(1.0, 0.0, fu)), self.frame.dir_to_world(&Vec3::new(0.0, 1.0, fv)))
    }

    pub fn contains_uv(&self, uv: &Vec2) -> bool {
        crate::geometry::point_in_polygon(uv, &self.domain)
    }

    /// Crest point over the domain boundary location nearest `uv`.
    pub fn crest_at(&self, uv: &Vec2) -> Vec3 {
        let n = self.domain.len();
        let (mut best, mut bi) = (f64::INFINITY, 0);
        for i in 0..n {
            let d = dist_point_segment2(uv, &self.domain[i], &self.domain[(i + 1) % n]);
            if d < best {
                best = d;
                bi = i;
            }
        }
        let (a, b) = (self.domain[bi], self.domain[(bi + 1) % n]);
        let ab = b - a;
        let t = if ab.norm_squared() > 0.0 { ((uv - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
        self.crest[bi] + (self.crest[(bi + 1) % n] - self.crest[bi]) * t
    }
}

/// Least-squares sheet through the CMS. The fit is refused when the CMS does
/// not project injectively onto its principal plane, unless `allow_irregular`.
pub fn fit_skeletal_sheet(
    cms: &CmsPointSet,
    mesh: &TriangleMesh,
    division: &BoundaryDivision,
    degree: usize,
    allow_irregular: bool,
) -> Result<SheetSurface> {
    let flat = pca_flatten(&cms.points)?;
    if !flat.flatable && !allow_irregular {
        return Err(Error::Sweep("CMS is not flatable by projection onto its principal plane".into()));
    }
    let pca_frame = flat.frame.expect("pca map has a frame");
    let mean = pca_frame.origin;
    let e1 = orient_by_first_point(pca_frame.axis(0), &mean, mesh.vertices(), 1e-3 * mesh.diagonal());
    let mut e3 = pca_frame.axis(2);
    let centroid = |side: Side| {
        let pts: Vec<&Vec3> = mesh.vertices().iter().zip(&division.labels).filter(|(_, s)| **s == side).map(|(p, _)| p).collect();
        pts.iter().fold(Vec3::zeros(), |a, p| a + *p) / pts.len().max(1) as f64
    };
    if (centroid(Side::Top) - centroid(Side::Bottom)).dot(&e3) < 0.0 {
        e3 = -e3;
    }
    let frame = Frame3 { origin: mean, axes: frame_from_axes(e1, e3) };
    let samples: Vec<[f64; 3]> = cms.points.iter().map(|p| frame.to_local(p).into()).collect();
    let (poly, rms) = fit_poly2(&samples, degree).map_err(|e| Error::Sweep(format!("sheet fit: {e}")))?;
    let crest: Vec<Vec3> = division.crest.iter().map(|&i| mesh.vertices()[i]).collect();
    let mut domain: Vec<Vec2> = crest.iter().map(|p| frame.to_local(p).xy()).collect();
    let mut crest = crest;
    if crate::geometry::signed_area(&domain) < 0.0 {
        domain.reverse();
        crest.reverse();
    }
    Ok(SheetSurface { frame, poly, rms, domain, crest, flatable: flat.flatable, irregularity: flat.irregularity })
}

/// Chords of the flattened sheet, as a planar generalized cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordFamily {
    pub boundary: GcBoundary,
    /// Relaxed CMS of the flattened sheet.
    pub curve: CenterCurve,
    /// Finite-difference step for the radius slope.
    pub step: f64,
}

impl ChordFamily {
    pub fn chord(&self, l: f64) -> Option<SemiChord> {
        let poly = &self.boundary.polygon;
        let radius = |s: f64| dist_to_polygon(&self.curve.point(s), poly);
        let spoke = spoke_at(&self.curve, &radius, l, self.step).ok()?;
        stretch_chord(&spoke, poly).ok()
    }
}

/// The spine as a dense polyline on the sheet, ending on the crest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spine {
    pub uv: Vec<Vec2>,
    pub points: Vec<Vec3>,
    pub cum: Vec<f64>,
    /// Parameter of each vertex along the relaxed CMS of the flattened sheet:
    /// its arclength for a relaxed spine, the chord's station for a chordal spine.
    pub params: Vec<f64>,
    pub kind: SpineKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpineKind {
    /// Lifted relaxed CMS of the flattened sheet.
    Relaxed,
    /// Through the midpoints of the flattened sheet's chords.
    Chordal,
    /// Any other polyline on the sheet; `params` are unused.
    Free,
}

impl Spine {
    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.points.len();
        let s = s.clamp(0.0, self.length());
        let i = self.cum.partition_point(|&c| c <= s).clamp(1, n - 1);
        let seg = self.cum[i] - self.cum[i - 1];
        (i - 1, if seg > 0.0 { (s - self.cum[i - 1]) / seg } else { 0.0 })
    }

    pub fn at(&self, s: f64) -> Vec3 {
        let (i, t) = self.locate(s);
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }

    pub fn uv_at(&self, s: f64) -> Vec2 {
        let (i, t) = self.locate(s);
        self.uv[i] + (self.uv[i + 1] - self.uv[i]) * t
    }

    pub fn param_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        self.params[i] + (self.params[i + 1] - self.params[i]) * t
    }

    /// Unit tangent by a centred difference of step `h`, one-sided at the ends.
    pub fn tangent(&self, s: f64, h: f64) -> Vec3 {
        let (a, b) = ((s - h).max(0.0), (s + h).min(self.length()));
        (self.at(b) - self.at(a)).normalize()
    }

    pub fn endpoints(&self) -> [Vec3; 2] {
        [self.points[0], *self.points.last().unwrap()]
    }

    /// Spine through the lifted relaxed CMS curve, its ends moved onto the crest.
    pub fn from_curve(surface: &SheetSurface, curve: &CenterCurve) -> Self {
        let len = curve.length();
        let params: Vec<f64> = (0..=SPINE_SAMPLES).map(|i| len * i as f64 / SPINE_SAMPLES as f64).collect();
        let uv: Vec<Vec2> = params.iter().map(|&l| curve.point(l)).collect();
        Self::assemble(surface, uv, params, SpineKind::Relaxed)
    }

    /// Spine along an arbitrary polyline of sheet parameters.
    pub fn from_polyline(surface: &SheetSurface, uv: Vec<Vec2>) -> Self {
        let params = vec![0.0; uv.len()];
        Self::assemble(surface, uv, params, SpineKind::Free)
    }

    fn assemble(surface: &SheetSurface, uv: Vec<Vec2>, params: Vec<f64>, kind: SpineKind) -> Self {
        let n = uv.len();
        let mut points: Vec<Vec3> = uv.iter().map(|q| surface.point(q)).collect();
        points[0] = surface.crest_at(&uv[0]);
        points[n - 1] = surface.crest_at(&uv[n - 1]);
        let cum = crate::geometry::cumulative_length(&points);
        Spine { uv, points, cum, params, kind }
    }
}

/// Spine and, for the chordal modes, the chord family of the flattened sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineFit {
    pub spine: Spine,
    pub family: ChordFamily,
    pub degree: usize,
    pub mode: PlaneMode,
}

/// Fit the spine as the relaxed CMS of the flattened sheet, or through the
/// midpoints of its chords in the chordal-spine mode. `stations` sets the
/// finite-difference step of the chord family.
pub fn fit_spine(surface: &SheetSurface, degree: usize, mode: PlaneMode, stations: usize) -> Result<SpineFit> {
    let boundary = GcBoundary::in_frame(&surface.domain, Frame2::identity())
        .map_err(|e| Error::Sweep(format!("flattened sheet: {e}")))?;
    let pitch = boundary.diagonal() / 200.0;
    let cms2 = extract_cms_2d(&boundary.polygon, &boundary.labels, pitch)?;
    let curve = fit_center_curve(&boundary, &cms2.points, degree)?;
    let step = curve.length() / (4.0 * stations.max(1) as f64);
    let family = ChordFamily { boundary, curve, step };
    let spine = match mode {
        PlaneMode::Chordal | PlaneMode::Normal => Spine::from_curve(surface, &family.curve),
        PlaneMode::ChordalSpine => {
            let len = family.curve.length();
            let mut uv = vec![family.curve.point(0.0)];
            let mut params = vec![0.0];
            for i in 1..SPINE_SAMPLES {
                let l = len * i as f64 / SPINE_SAMPLES as f64;
                if let Some(c) = family.chord(l) {
                    let m = c.midpoint();
                    if surface.contains_uv(&m) {
                        uv.push(m);
                        params.push(l);
                    }
                }
            }
            uv.push(family.curve.point(len));
            params.push(len);
            if uv.len() < 4 {
                return Err(Error::Sweep("too few chords for a chordal spine".into()));
            }
            Spine::assemble(surface, uv, params, SpineKind::Chordal)
        }
    };
    Ok(SpineFit { spine, family, degree, mode })
}

/// The fitted swept structure of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletalSheet {
    pub surface: SheetSurface,
    pub spine: SpineFit,
    pub sections: Vec<CrossSection>,
    pub rcc: RccReport,
    pub mode: PlaneMode,
}

impl SkeletalSheet {
    /// Spine, veins and their links as a PLY point/edge set.
    pub fn to_ply(&self) -> String {
        let mut pts = Vec::new();
        let mut edges = Vec::new();
        let polyline = |line: &[Vec3], pts: &mut Vec<Vec3>, edges: &mut Vec<[usize; 2]>| {
            let base = pts.len();
            pts.extend_from_slice(line);
            for i in 1..line.len() {
                edges.push([base + i - 1, base + i]);
            }
        };
        polyline(&self.spine.spine.points, &mut pts, &mut edges);
        for s in &self.sections {
            polyline(&s.left.points, &mut pts, &mut edges);
            polyline(&s.right.points, &mut pts, &mut edges);
        }
        write_ply_points(&pts, &edges)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cms::extract_cms;
    use crate::division::division_from_labels;
    use crate::synth::make_ellipsoid;

    /// Ellipsoid with the analytic z-split, its CMS and division.
    pub(crate) fn ellipsoid_setup(level: u32) -> (TriangleMesh, BoundaryDivision, CmsPointSet) {
        let mesh = make_ellipsoid([2.0, 1.0, 0.5], level).unwrap();
        let labels = mesh.vertices().iter().map(|p| if p.z > -1e-9 { Side::Top } else { Side::Bottom }).collect();
        let div = division_from_labels(&mesh, labels, 0.5).unwrap();
        let cms = extract_cms(&mesh, &div, mesh.diagonal() / 100.0).unwrap();
        (mesh, div, cms)
    }

    #[test]
    fn ellipsoid_sheet_and_spine() {
        let (mesh, div, cms) = ellipsoid_setup(4);
        let h = cms.spacing;
        let mut last = f64::INFINITY;
        for d in 1..=3 {
            let s = fit_skeletal_sheet(&cms, &mesh, &div, d, false).unwrap();
            assert!(s.rms <= last + 1e-12);
            last = s.rms;
        }
        let sheet = fit_skeletal_sheet(&cms, &mesh, &div, 1, false).unwrap();
        assert!(sheet.flatable);
        for p in cms.points.iter().step_by(17) {
            let q = sheet.point(&sheet.to_uv(p));
            assert!(q.z.abs() <= h, "{q:?}");
        }
        assert!(sheet.normal(&Vec2::zeros()).z > 0.99);
        let fit = fit_spine(&sheet, 1, PlaneMode::Normal, 15).unwrap();
        let [a, b] = fit.spine.endpoints();
        let (lo, hi) = if a.x < b.x { (a, b) } else { (b, a) };
        assert!((lo - Vec3::new(-2.0, 0.0, 0.0)).norm() < 0.1, "{lo:?}");
        assert!((hi - Vec3::new(2.0, 0.0, 0.0)).norm() < 0.1, "{hi:?}");
        let n = fit.spine.points.len();
        for (p, q) in fit.spine.points[1..n - 1].iter().zip(&fit.spine.uv[1..n - 1]) {
            assert!((p - sheet.point(q)).norm() <= 2.0 * sheet.rms + 1e-12);
        }
        let chordal = fit_spine(&sheet, 1, PlaneMode::ChordalSpine, 15).unwrap();
        assert!(chordal.spine.points.len() > 100);
    }

    #[test]
    fn bent_ellipsoid_spine_reaches_both_tips() {
        use crate::synth::{deform, Bend, Deformation};
        let bend = Bend { elbow_x: 0.0, angle_deg: 40.0, band: 1.0 };
        let base = make_ellipsoid([2.0, 1.0, 0.5], 4).unwrap();
        let mesh = deform(&base, [2.0, 1.0, 0.5], &Deformation { protrusion: None, bend: Some(bend) }).unwrap();
        let labels = mesh.vertices().iter().map(|p| if p.z > -1e-9 { Side::Top } else { Side::Bottom }).collect();
        let div = division_from_labels(&mesh, labels, 0.5).unwrap();
        let cms = extract_cms(&mesh, &div, mesh.diagonal() / 100.0).unwrap();
        let sheet = fit_skeletal_sheet(&cms, &mesh, &div, 2, false).unwrap();
        let fit = fit_spine(&sheet, 3, PlaneMode::Normal, 15).unwrap();
        let tips = [bend.apply(&Vec3::new(-2.0, 0.0, 0.0)), bend.apply(&Vec3::new(2.0, 0.0, 0.0))];
        for e in fit.spine.endpoints() {
            let d = tips.iter().map(|t| (t - e).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 0.1, "{e:?} is {d} from the nearest tip");
        }
        let secs = build_cross_sections(&sheet, &fit, 15, PlaneMode::Normal).unwrap();
        for w in secs.windows(2) {
            let (a, b) = (&w[0].station, &w[1].station);
            let turn = a.tangent().dot(&b.tangent()).clamp(-1.0, 1.0).acos();
            assert!(crate::geometry::rotation_angle(&a.frame, &b.frame) <= turn + 1e-9);
        }
    }
}
