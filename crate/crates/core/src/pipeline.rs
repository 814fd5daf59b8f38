//! End-to-end fitting: canonical frame, boundary division and CMS once per
//! mesh, then sheet, spine, cross-sections, spokes, tuple and scores per
//! degree pair.

use crate::cms::{extract_cms, CmsPointSet};
use crate::division::{divide_boundary, division_from_labels, AffinityVariant, BoundaryDivision, Side};
use crate::geometry::{frame_from_axes, orient_by_first_point, pca3, Frame3};
use crate::gof::{evaluate, Criterion, GofReport};
use crate::lp::{build_lp_dssrep, LpDssRep, RepMeta};
use crate::mesh::TriangleMesh;
use crate::polyfit::MAX_DEGREE;
use crate::sweep::{build_cross_sections, compute_spokes, fit_skeletal_sheet, fit_spine, PlaneMode, SkeletalSheet, SpokeGrid};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub delta: f64,
    pub affinity: AffinityVariant,
    pub stations: usize,
    pub vein_samples: usize,
    pub mode: PlaneMode,
    /// CMS grid pitch; a hundredth of the bounding-box diagonal when absent.
    pub pitch: Option<f64>,
    /// Fit the sheet even when the CMS does not flatten by projection.
    pub allow_irregular: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            delta: 0.5,
            affinity: AffinityVariant::default(),
            stations: 15,
            vein_samples: 3,
            mode: PlaneMode::default(),
            pitch: None,
            allow_irregular: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.stations < 5 || self.stations % 2 == 0 {
            return Err(Error::Config(format!("stations must be odd and at least 5, got {}", self.stations)));
        }
        if self.vein_samples == 0 {
            return Err(Error::Config("vein samples must be positive".into()));
        }
        if let Some(p) = self.pitch {
            if !(p > 0.0) {
                return Err(Error::Config(format!("pitch must be positive, got {p}")));
            }
        }
        Ok(())
    }
}

/// Principal axes of the vertices, signs fixed by the first-vertex rule.
pub fn canonical_frame(mesh: &TriangleMesh) -> Frame3 {
    let pca = pca3(mesh.vertices());
    let tol = 1e-3 * mesh.diagonal();
    let e1 = orient_by_first_point(pca.axes[0], &pca.mean, mesh.vertices(), tol);
    let e3 = orient_by_first_point(pca.axes[2], &pca.mean, mesh.vertices(), tol);
    Frame3 { origin: pca.mean, axes: frame_from_axes(e1, e3) }
}

/// Mesh in canonical coordinates with its division and CMS.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Canonical frame in the input's coordinates.
    pub frame: Frame3,
    pub mesh: TriangleMesh,
    pub division: BoundaryDivision,
    pub cms: CmsPointSet,
}

fn to_canonical(mesh: &TriangleMesh) -> Result<(Frame3, TriangleMesh)> {
    let frame = canonical_frame(mesh);
    let r = frame.axes.transpose();
    let local = mesh.linear_transformed(&r, &(-(r * frame.origin)))?;
    Ok((frame, local))
}

fn finish(frame: Frame3, mesh: TriangleMesh, division: BoundaryDivision, cfg: &FitConfig) -> Result<Prepared> {
    let pitch = cfg.pitch.unwrap_or(mesh.diagonal() / 100.0);
    let cms = extract_cms(&mesh, &division, pitch)?;
    Ok(Prepared { frame, mesh, division, cms })
}

pub fn prepare(mesh: &TriangleMesh, cfg: &FitConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (frame, local) = to_canonical(mesh)?;
    let division = divide_boundary(&local, cfg.delta, cfg.affinity)?;
    finish(frame, local, division, cfg)
}

/// As [`prepare`] with the top/bottom labels given per vertex.
pub fn prepare_with_labels(mesh: &TriangleMesh, labels: Vec<Side>, cfg: &FitConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (frame, local) = to_canonical(mesh)?;
    let division = division_from_labels(&local, labels, cfg.delta)?;
    finish(frame, local, division, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub sheet: SkeletalSheet,
    pub grid: SpokeGrid,
    pub rep: LpDssRep,
    pub gof: GofReport,
    /// Canonical frame in the input's coordinates.
    pub frame: Frame3,
}

impl FittedModel {
    pub fn rcc_ok(&self) -> bool {
        self.sheet.rcc.satisfied()
    }

    /// Spoke segments in input coordinates as a PLY point/edge set.
    pub fn spokes_ply(&self) -> String {
        let mut pts = Vec::new();
        let mut edges = Vec::new();
        for s in &self.grid.sites {
            let k = pts.len();
            pts.extend([s.point, s.up_tip(), s.down_tip()].map(|p| self.frame.to_world(&p)));
            edges.extend([[k, k + 1], [k, k + 2]]);
        }
        crate::mesh::write_ply_points(&pts, &edges)
    }

    /// Spine and veins in input coordinates as a PLY point/edge set.
    pub fn skeleton_ply(&self) -> String {
        let mut pts = Vec::new();
        let mut edges = Vec::new();
        let lines = std::iter::once(&self.sheet.spine.spine.points)
            .chain(self.sheet.sections.iter().flat_map(|s| [&s.left.points, &s.right.points]));
        for line in lines {
            let k = pts.len();
            pts.extend(line.iter().map(|p| self.frame.to_world(p)));
            edges.extend((1..line.len()).map(|i| [k + i - 1, k + i]));
        }
        crate::mesh::write_ply_points(&pts, &edges)
    }
}

/// Fit one (sheet, spine) degree pair.
pub fn fit_prepared(prep: &Prepared, degrees: [usize; 2], cfg: &FitConfig) -> Result<FittedModel> {
    for d in degrees {
        if !(1..=MAX_DEGREE).contains(&d) {
            return Err(Error::Config(format!("degree {d} outside 1..={MAX_DEGREE}")));
        }
    }
    let surface = fit_skeletal_sheet(&prep.cms, &prep.mesh, &prep.division, degrees[0], cfg.allow_irregular)?;
    let spine = fit_spine(&surface, degrees[1], cfg.mode, cfg.stations)?;
    let sections = build_cross_sections(&surface, &spine, cfg.stations, cfg.mode)?;
    let rcc = crate::sweep::rcc_report(&prep.mesh, &sections);
    let sheet = SkeletalSheet { surface, spine, sections, rcc, mode: cfg.mode };
    let grid = compute_spokes(&prep.mesh, &prep.division, &sheet.surface, &sheet.sections, cfg.vein_samples, cfg.mode)?;
    let meta = RepMeta { mode: cfg.mode, degrees, stations: cfg.stations, vein_samples: cfg.vein_samples, delta: cfg.delta };
    let rep = build_lp_dssrep(&grid, meta)?;
    let gof = evaluate(&prep.mesh, &sheet, &grid, degrees)?;
    Ok(FittedModel { sheet, grid, rep, gof, frame: prep.frame })
}

pub fn fit_mesh(mesh: &TriangleMesh, degrees: [usize; 2], cfg: &FitConfig) -> Result<FittedModel> {
    fit_prepared(&prepare(mesh, cfg)?, degrees, cfg)
}

/// Every degree pair in `1..=n` squared, in row-major order.
pub fn degree_grid(n: usize) -> Result<Vec<[usize; 2]>> {
    if !(1..=MAX_DEGREE).contains(&n) {
        return Err(Error::Config(format!("degree grid bound {n} outside 1..={MAX_DEGREE}")));
    }
    Ok((1..=n).flat_map(|a| (1..=n).map(move |b| [a, b])).collect())
}

/// Fit all degree pairs in parallel, keeping per-pair failures.
pub fn score_grid(prep: &Prepared, n: usize, cfg: &FitConfig) -> Result<Vec<([usize; 2], Result<FittedModel>)>> {
    Ok(degree_grid(n)?.into_par_iter().map(|d| (d, fit_prepared(prep, d, cfg))).collect())
}

/// Best fit by `criterion` among pairs that fit and pass the clearance
/// check; ties go to the lower total degree.
pub fn select_best_fit(prep: &Prepared, n: usize, criterion: Criterion, cfg: &FitConfig) -> Result<FittedModel> {
    let results = score_grid(prep, n, cfg)?;
    let mut failures = Vec::new();
    let mut best: Option<FittedModel> = None;
    for (d, r) in results {
        match r {
            Ok(m) if m.rcc_ok() => {
                let better = best.as_ref().is_none_or(|b| {
                    let (s, t) = (m.gof.score(criterion), b.gof.score(criterion));
                    s > t || (s == t && d[0] + d[1] < b.gof.degrees[0] + b.gof.degrees[1])
                });
                if better {
                    best = Some(m);
                }
            }
            Ok(m) => failures.push(format!("{d:?}: {} slicing-plane pairs meet inside", m.sheet.rcc.violations())),
            Err(e) => failures.push(format!("{d:?}: {e}")),
        }
    }
    best.ok_or_else(|| Error::Gof(format!("no degree pair produced a valid fit: {}", failures.join("; "))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_ellipsoid;

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig { stations: 14, ..Default::default() }.validate().is_err());
        assert!(FitConfig { delta: 0.0, ..Default::default() }.validate().is_err());
        assert_eq!(degree_grid(7).unwrap().len(), 49);
        assert!(degree_grid(8).is_err());
    }

    #[test]
    fn canonical_frame_is_rigid_invariant() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 2).unwrap();
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let t = crate::Vec3::new(3.0, -1.0, 0.5);
        let (a, b) = (canonical_frame(&m), canonical_frame(&m.transformed(&r, &t)));
        for (p, q) in m.vertices().iter().zip(m.transformed(&r, &t).vertices()) {
            assert!((a.to_local(p) - b.to_local(q)).norm() < 1e-9);
        }
    }
}
