//! Up and down spokes on the spine and along each vein.

use super::{CrossSection, PlaneMode, SheetSurface};
use crate::division::{BoundaryDivision, Side};
use crate::mesh::{ray_intersect_filtered, TriangleMesh};
use crate::{Error, Result, Vec2, Vec3};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Spine,
    /// `j`-th sample from the spine on the left vein, starting at 1.
    Left(usize),
    Right(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    /// Index into the interior cross-sections.
    pub section: usize,
    pub kind: SiteKind,
    pub uv: Vec2,
    pub point: Vec3,
    /// Columns `b`, `b⊥`, `n`: along the curve, across it, sheet normal.
    pub frame: Matrix3<f64>,
    /// Unit up direction; the down spoke points exactly the other way.
    pub up: Vec3,
    pub up_len: f64,
    pub down_len: f64,
    pub up_face: usize,
    pub down_face: usize,
}

impl Site {
    pub fn up_tip(&self) -> Vec3 {
        self.point + self.up * self.up_len
    }

    pub fn down_tip(&self) -> Vec3 {
        self.point - self.up * self.down_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpokeGrid {
    /// Per interior section: the spine site, `m` left sites, `m` right sites.
    pub sites: Vec<Site>,
    pub vein_samples: usize,
    /// Per interior section, the unit direction from the first right sample
    /// to the first left sample.
    pub section_axes: Vec<Vec3>,
}

impl SpokeGrid {
    pub fn per_section(&self) -> usize {
        1 + 2 * self.vein_samples
    }

    pub fn section(&self, i: usize) -> &[Site] {
        let k = self.per_section();
        &self.sites[i * k..(i + 1) * k]
    }

    pub fn sections(&self) -> usize {
        self.sites.len() / self.per_section()
    }
}

fn frame_with(n: Vec3, b: Vec3) -> Matrix3<f64> {
    let b = (b - n * b.dot(&n)).normalize();
    Matrix3::from_columns(&[b, n.cross(&b), n])
}

/// Spokes at the spine point and `vein_samples` evenly spaced points on each
/// vein of every interior cross-section.
pub fn compute_spokes(
    mesh: &TriangleMesh,
    division: &BoundaryDivision,
    surface: &SheetSurface,
    sections: &[CrossSection],
    vein_samples: usize,
    mode: PlaneMode,
) -> Result<SpokeGrid> {
    if vein_samples == 0 {
        return Err(Error::Sweep("need at least one sample per vein".into()));
    }
    let m = vein_samples;
    let interior: Vec<&CrossSection> = sections.iter().filter(|s| !s.station.is_end).collect();
    let mut sites = Vec::with_capacity(interior.len() * (1 + 2 * m));
    let mut section_axes = Vec::with_capacity(interior.len());
    for (ci, cs) in interior.iter().enumerate() {
        let st = &cs.station;
        let pn = st.plane_normal;
        let make = |kind: SiteKind, uv: Vec2, point: Vec3, b: Vec3| -> Result<Site> {
            let n = surface.normal(&uv);
            let up = match mode {
                PlaneMode::Normal => n,
                _ => (n - pn * n.dot(&pn)).normalize(),
            };
            let hit = |d: Vec3, side: Side| {
                ray_intersect_filtered(mesh, &point, &d, |f| division.face_side(mesh, f) == side).ok_or_else(|| {
                    Error::Sweep(format!("{side:?} spoke at section {} ({kind:?}) misses the boundary", st.index))
                })
            };
            let (hu, hd) = (hit(up, Side::Top)?, hit(-up, Side::Bottom)?);
            Ok(Site {
                section: ci,
                kind,
                uv,
                point,
                frame: frame_with(n, b),
                up,
                up_len: hu.t,
                down_len: hd.t,
                up_face: hu.face,
                down_face: hd.face,
            })
        };
        let mut here = vec![make(SiteKind::Spine, st.uv, st.point, st.tangent())?];
        for (vein, left) in [(&cs.left, true), (&cs.right, false)] {
            for j in 1..=m {
                let f = j as f64 / (m + 1) as f64;
                let (_, uv) = vein.at_fraction(f);
                let dir = vein.direction(f);
                // Point every vein frame towards the left side.
                let b = if left { dir } else { -dir };
                let kind = if left { SiteKind::Left(j) } else { SiteKind::Right(j) };
                here.push(make(kind, uv, surface.point(&uv), b)?);
            }
        }
        section_axes.push((here[1].point - here[1 + m].point).normalize());
        sites.extend(here);
    }
    Ok(SpokeGrid { sites, vein_samples, section_axes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::tests::ellipsoid_setup;
    use crate::sweep::{build_cross_sections, fit_skeletal_sheet, fit_spine};

    #[test]
    fn ellipsoid_spokes_are_symmetric() {
        let (mesh, div, cms) = ellipsoid_setup(4);
        let sheet = fit_skeletal_sheet(&cms, &mesh, &div, 1, false).unwrap();
        for mode in [PlaneMode::Normal, PlaneMode::Chordal] {
            let fit = fit_spine(&sheet, 1, mode, 15).unwrap();
            let secs = build_cross_sections(&sheet, &fit, 15, mode).unwrap();
            let grid = compute_spokes(&mesh, &div, &sheet, &secs, 3, mode).unwrap();
            assert_eq!(grid.sites.len(), 91);
            assert_eq!(grid.sections(), 13);
            for s in &grid.sites {
                assert!((s.up.norm() - 1.0).abs() < 1e-12);
                assert_eq!(div.face_side(&mesh, s.up_face), Side::Top);
                assert_eq!(div.face_side(&mesh, s.down_face), Side::Bottom);
                assert!((s.up_len - s.down_len).abs() <= 0.01, "{:?} {} {}", s.kind, s.up_len, s.down_len);
                let f = s.frame;
                assert!((f.transpose() * f - Matrix3::identity()).norm() < 1e-9);
                assert!((f.determinant() - 1.0).abs() < 1e-9);
            }
            for i in 0..grid.sections() {
                let sec = grid.section(i);
                assert_eq!(sec[0].kind, SiteKind::Spine);
                assert!(matches!(sec[1].kind, SiteKind::Left(1)));
                assert!(matches!(sec[4].kind, SiteKind::Right(1)));
                assert!(grid.section_axes[i].dot(&sec[1].frame.column(0).into_owned()) > 0.9);
            }
        }
    }
}
