//! Goodness of fit: volume coverage of the implied boundary, symmetry of the
//! skeleton, average and strict tidiness of its frames, and their products.

use crate::lp::{quat_distance, quat_from_matrix, Quat};
use crate::mesh::{jaccard_soup, TriangleMesh};
use crate::spatial::tree3;
use crate::sweep::{SkeletalSheet, SpokeGrid};
use crate::{Error, Result, Vec3};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

pub const MIN_IMPLIED_POINTS: usize = 40;
pub const COVERAGE_RESOLUTION: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Score1,
    #[default]
    Score2,
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score1" => Ok(Criterion::Score1),
            "score2" => Ok(Criterion::Score2),
            _ => Err(Error::Config(format!("unknown criterion {s:?} (score1, score2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tidiness {
    pub avg: f64,
    pub strict: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub volume_coverage: f64,
    pub skeletal_symmetry: f64,
    pub avg_tidiness: f64,
    pub strict_tidiness: f64,
    pub score1: f64,
    pub score2: f64,
    /// Sheet and spine degrees.
    pub degrees: [usize; 2],
}

impl GofReport {
    pub fn new(volume_coverage: f64, skeletal_symmetry: f64, tidiness: Tidiness, degrees: [usize; 2]) -> Self {
        let [score1, score2] = gof_score(volume_coverage, skeletal_symmetry, tidiness);
        GofReport {
            volume_coverage,
            skeletal_symmetry,
            avg_tidiness: tidiness.avg,
            strict_tidiness: tidiness.strict,
            score1,
            score2,
            degrees,
        }
    }

    pub fn score(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Score1 => self.score1,
            Criterion::Score2 => self.score2,
        }
    }
}

/// Products of the three components with average and strict tidiness.
pub fn gof_score(volume_coverage: f64, skeletal_symmetry: f64, t: Tidiness) -> [f64; 2] {
    let base = volume_coverage * skeletal_symmetry;
    [base * t.avg, base * t.strict]
}

/// Jaccard index between the mesh and the mesh with every vertex moved to
/// its nearest implied boundary point.
pub fn volume_coverage(mesh: &TriangleMesh, implied: &[Vec3]) -> Result<f64> {
    if implied.len() < MIN_IMPLIED_POINTS {
        return Err(Error::Gof(format!("{} implied boundary points, need {MIN_IMPLIED_POINTS}", implied.len())));
    }
    let tree = tree3(implied);
    let collapsed: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|p| implied[tree.nearest(&[p.x, p.y, p.z]).expect("non-empty tree").0])
        .collect();
    jaccard_soup((mesh.vertices(), mesh.faces()), (&collapsed, mesh.faces()), COVERAGE_RESOLUTION)
}

/// Weighted mean of `min/max` ratios of paired lengths, weights proportional to pair sums.
pub fn skeletal_symmetry(plus: &[f64], minus: &[f64]) -> Result<f64> {
    if plus.len() != minus.len() || plus.is_empty() {
        return Err(Error::Gof(format!("{} positive and {} negative lengths", plus.len(), minus.len())));
    }
    if plus.iter().chain(minus).any(|&l| !(l > 0.0)) {
        return Err(Error::Gof("zero-length spoke or vein".into()));
    }
    let total: f64 = plus.iter().chain(minus).sum();
    Ok(plus.iter().zip(minus).map(|(a, b)| (a + b) / total * a.min(*b) / a.max(*b)).sum::<f64>().min(1.0))
}

/// Mean consecutive rotation distance along a framed curve.
pub fn mean_rotation(frames: &[Quat]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Gof("a framed curve needs at least 2 frames".into()));
    }
    Ok(frames.windows(2).map(|w| quat_distance(&w[0], &w[1])).sum::<f64>() / (frames.len() - 1) as f64)
}

/// Tidiness from the spine's frames, each cross-section curve's frames and
/// the spine/cross-section axis angles at their shared points.
pub fn tidiness_from(spine: &[Quat], sections: &[Vec<Quat>], axis_angles: &[f64]) -> Result<Tidiness> {
    if sections.len() != axis_angles.len() {
        return Err(Error::Gof("one axis angle per cross-section is required".into()));
    }
    let mut terms = vec![mean_rotation(spine)?];
    for s in sections {
        terms.push(mean_rotation(s)?);
    }
    terms.extend_from_slice(axis_angles);
    let n = sections.len() as f64;
    let avg = 1.0 - terms.iter().sum::<f64>() / ((2.0 * n + 1.0) * FRAC_PI_2);
    let strict = 1.0 - terms.iter().copied().fold(0.0, f64::max) / FRAC_PI_2;
    Ok(Tidiness { avg, strict })
}

fn nbb(site_frame: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_columns(&[site_frame.column(2).into_owned(), site_frame.column(0).into_owned(), site_frame.column(1).into_owned()])
}

/// Tidiness of a spoke grid: the spine curve through the spine sites, and per
/// section the curve from the outermost right sample through the spine point
/// to the outermost left sample.
pub fn tidiness(grid: &SpokeGrid) -> Result<Tidiness> {
    let m = grid.vein_samples;
    let mut spine = Vec::new();
    let mut sections = Vec::new();
    let mut angles = Vec::new();
    for i in 0..grid.sections() {
        let sites = grid.section(i);
        let sf = sites[0].frame;
        spine.push(quat_from_matrix(&nbb(&sf)));
        let n = sf.column(2).into_owned();
        let b = grid.section_axes[i];
        let b = (b - n * b.dot(&n)).normalize();
        let centre = Matrix3::from_columns(&[n, b, n.cross(&b)]);
        let mut curve: Vec<Quat> = sites[m + 1..].iter().rev().map(|s| quat_from_matrix(&nbb(&s.frame))).collect();
        curve.push(quat_from_matrix(&centre));
        curve.extend(sites[1..=m].iter().map(|s| quat_from_matrix(&nbb(&s.frame))));
        sections.push(curve);
        let bperp = sf.column(1).into_owned();
        angles.push(bperp.dot(&b).abs().min(1.0).acos());
    }
    tidiness_from(&spine, &sections, &angles)
}

/// Spoke tips, vein ends and spine ends.
pub fn implied_boundary(sheet: &SkeletalSheet, grid: &SpokeGrid) -> Vec<Vec3> {
    let mut pts: Vec<Vec3> = grid.sites.iter().flat_map(|s| [s.up_tip(), s.down_tip()]).collect();
    for s in &sheet.sections {
        if !s.station.is_end {
            pts.push(s.left.end());
            pts.push(s.right.end());
        }
    }
    pts.extend(sheet.spine.spine.endpoints());
    pts
}

/// Up spokes and left veins against down spokes and right veins.
pub fn symmetry_of(sheet: &SkeletalSheet, grid: &SpokeGrid) -> Result<f64> {
    let mut plus: Vec<f64> = grid.sites.iter().map(|s| s.up_len).collect();
    let mut minus: Vec<f64> = grid.sites.iter().map(|s| s.down_len).collect();
    for s in sheet.sections.iter().filter(|s| !s.station.is_end) {
        plus.push(s.left.length());
        minus.push(s.right.length());
    }
    skeletal_symmetry(&plus, &minus)
}

pub fn evaluate(mesh: &TriangleMesh, sheet: &SkeletalSheet, grid: &SpokeGrid, degrees: [usize; 2]) -> Result<GofReport> {
    let vc = volume_coverage(mesh, &implied_boundary(sheet, grid))?;
    let ss = symmetry_of(sheet, grid)?;
    Ok(GofReport::new(vc, ss, tidiness(grid)?, degrees))
}

/// Table of reports as CSV.
pub fn reports_csv(reports: &[GofReport]) -> String {
    let mut s = String::from("sheet_degree,spine_degree,volume_coverage,skeletal_symmetry,avg_tidiness,strict_tidiness,score1,score2\n");
    for r in reports {
        s += &format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.degrees[0], r.degrees[1], r.volume_coverage, r.skeletal_symmetry, r.avg_tidiness, r.strict_tidiness, r.score1, r.score2
        );
    }
    s
}

/// Table of reports as aligned text.
pub fn reports_table(reports: &[GofReport]) -> String {
    let mut s = format!("{:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "#", "degrees", "vol.cov", "sym", "avg.tid", "str.tid", "score1", "score2");
    for (i, r) in reports.iter().enumerate() {
        s += &format!(
            "{:>4} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
            i + 1,
            format!("{}, {}", r.degrees[0], r.degrees[1]),
            r.volume_coverage,
            r.skeletal_symmetry,
            r.avg_tidiness,
            r.strict_tidiness,
            r.score1,
            r.score2
        );
    }
    s
}
