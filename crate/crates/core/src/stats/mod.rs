//! Cohort statistics on fitted tuples: tangent-space features, a global
//! direction-projection permutation test, per-property partial tests with
//! false discovery rate control, and cross-validated classification.

mod classify;
mod inference;

pub use classify::{classify_cv, ClassifierKind, CvMetrics};
pub use inference::{bh_adjust, cohort_features, global_test, hotelling, partial_tests, test_cohorts, GlobalResult, PartialEntry, PartialMethod, PartialResult, TestOptions, TestReport};

use crate::lp::LpDssRep;
use crate::{Error, Result, Vec3};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub const MAX_FRECHET_ITERATIONS: usize = 100;
const FRECHET_TOL: f64 = 1e-12;

/// Kind of one geometric object property of the tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GopKind {
    Frame,
    ConnectionDir,
    SpokeDir,
    ConnectionLen,
    UpSpokeLen,
    DownSpokeLen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GopId {
    pub kind: GopKind,
    /// Index within its kind.
    pub index: usize,
    /// Frame the property is attached to; a connection belongs to its child.
    pub frame: usize,
}

impl GopId {
    pub fn is_length(&self) -> bool {
        matches!(self.kind, GopKind::ConnectionLen | GopKind::UpSpokeLen | GopKind::DownSpokeLen)
    }

    pub fn is_spoke_length(&self) -> bool {
        matches!(self.kind, GopKind::UpSpokeLen | GopKind::DownSpokeLen)
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            GopKind::Frame => 3,
            GopKind::ConnectionDir | GopKind::SpokeDir => 2,
            _ => 1,
        }
    }
}

/// Properties in test order: frames, connection directions, spoke directions,
/// connection lengths, up then down spoke lengths.
pub fn gop_census(rep: &LpDssRep) -> Vec<GopId> {
    let nf = rep.n_frames();
    let mut out = Vec::new();
    let mut push = |kind, n: usize, frame: &dyn Fn(usize) -> usize| {
        out.extend((0..n).map(|index| GopId { kind, index, frame: frame(index) }));
    };
    push(GopKind::Frame, nf, &|i| i);
    push(GopKind::ConnectionDir, rep.n_connections(), &|j| rep.connection_child[j]);
    push(GopKind::SpokeDir, nf, &|i| i);
    push(GopKind::ConnectionLen, rep.n_connections(), &|j| rep.connection_child[j]);
    push(GopKind::UpSpokeLen, nf, &|i| i);
    push(GopKind::DownSpokeLen, nf, &|i| i);
    out
}

/// Tangent-space features of one tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanizedRep {
    pub frame_feats: Vec<[f64; 3]>,
    /// Connection directions, then spoke directions.
    pub dir_feats: Vec<[f64; 2]>,
    /// Log connection lengths, then log spoke lengths.
    pub len_feats: Vec<f64>,
}

impl EuclideanizedRep {
    /// Features grouped per property, in census order.
    pub fn blocks(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.frame_feats.iter().map(|f| f.to_vec()).collect();
        out.extend(self.dir_feats.iter().map(|f| f.to_vec()));
        out.extend(self.len_feats.iter().map(|&l| vec![l]));
        out
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.blocks().concat()
    }
}

/// Unit quaternion as a point of the 3-sphere, on the hemisphere of `reference`.
fn aligned(q: &DVector<f64>, reference: &DVector<f64>) -> DVector<f64> {
    if q.dot(reference) < 0.0 {
        -q
    } else {
        q.clone()
    }
}

/// Log map of the unit sphere at `base`, in ambient coordinates.
pub fn sphere_log(base: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    if x == base {
        return DVector::zeros(base.len());
    }
    let c = base.dot(x).clamp(-1.0, 1.0);
    let w = x - base * c;
    let s = w.norm();
    if s < 1e-300 {
        return DVector::zeros(base.len());
    }
    w * (s.atan2(c) / s)
}

/// Exp map of the unit sphere at `base`.
pub fn sphere_exp(base: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let t = v.norm();
    if t < 1e-300 {
        return base.clone();
    }
    (base * t.cos() + v * (t.sin() / t)).normalize()
}

/// Orthonormal basis of the tangent space at `base`, built from the ambient
/// axes in order so it depends only on `base`.
pub fn tangent_basis(base: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = base.len();
    let mut basis: Vec<DVector<f64>> = vec![base.clone()];
    let mut axes: Vec<usize> = (0..d).collect();
    // Drop the axis most aligned with the base so the rest stay well conditioned.
    let drop = (0..d).max_by(|&a, &b| base[a].abs().total_cmp(&base[b].abs())).unwrap();
    axes.retain(|&a| a != drop);
    for a in axes {
        let mut e = DVector::zeros(d);
        e[a] = 1.0;
        for b in &basis {
            e -= b * b.dot(&e);
        }
        basis.push(e.normalize());
    }
    basis.remove(0);
    basis
}

/// Spherical Fréchet mean by iterated tangent averaging, started at the
/// first sample. With `antipodal`, samples are treated as `±x` pairs.
pub fn frechet_mean(samples: &[DVector<f64>], antipodal: bool) -> Result<DVector<f64>> {
    let mut mu = samples[0].clone();
    for _ in 0..MAX_FRECHET_ITERATIONS {
        let mut step = DVector::zeros(mu.len());
        for x in samples {
            let x = if antipodal { aligned(x, &mu) } else { x.clone() };
            step += sphere_log(&mu, &x);
        }
        step /= samples.len() as f64;
        if step.norm() < FRECHET_TOL {
            // Fix the representative so flipping any sample changes nothing.
            let lead = mu.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
            return Ok(if antipodal && lead < 0.0 { -mu } else { mu });
        }
        mu = sphere_exp(&mu, &step);
    }
    Err(Error::Stats(format!("Fréchet mean did not converge in {MAX_FRECHET_ITERATIONS} iterations")))
}

/// Per-property base points and tangent bases of a cohort.
#[derive(Debug, Clone)]
pub struct TangentModel {
    frames: Vec<(DVector<f64>, Vec<DVector<f64>>)>,
    dirs: Vec<(DVector<f64>, Vec<DVector<f64>>)>,
}

fn v3(v: &Vec3) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn check_topology(cohort: &[&LpDssRep]) -> Result<()> {
    let first = cohort.first().ok_or_else(|| Error::Stats("empty cohort".into()))?;
    for (k, r) in cohort.iter().enumerate() {
        if r.topology != first.topology || r.connection_child != first.connection_child {
            return Err(Error::Stats(format!("sample {k} has a different tree from sample 0")));
        }
    }
    Ok(())
}

impl TangentModel {
    pub fn fit(cohort: &[&LpDssRep]) -> Result<Self> {
        check_topology(cohort)?;
        let first = cohort[0];
        let frames = (0..first.n_frames())
            .map(|i| {
                let xs: Vec<DVector<f64>> = cohort.iter().map(|r| DVector::from_column_slice(&r.frames[i])).collect();
                let mu = frechet_mean(&xs, true)?;
                let basis = tangent_basis(&mu);
                Ok((mu, basis))
            })
            .collect::<Result<Vec<_>>>()?;
        let dir_of = |r: &LpDssRep, k: usize| -> Vec3 {
            if k < r.n_connections() {
                r.connection_dirs[k]
            } else {
                r.spoke_dirs[k - r.n_connections()]
            }
        };
        let dirs = (0..first.n_connections() + first.n_frames())
            .map(|k| {
                let xs: Vec<DVector<f64>> = cohort.iter().map(|r| v3(&dir_of(r, k))).collect();
                let mu = frechet_mean(&xs, false)?;
                let basis = tangent_basis(&mu);
                Ok((mu, basis))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TangentModel { frames, dirs })
    }

    pub fn project(&self, rep: &LpDssRep) -> EuclideanizedRep {
        let coords = |(mu, basis): &(DVector<f64>, Vec<DVector<f64>>), x: DVector<f64>| -> Vec<f64> {
            let v = sphere_log(mu, &x);
            basis.iter().map(|b| b.dot(&v)).collect()
        };
        let frame_feats = self
            .frames
            .iter()
            .zip(&rep.frames)
            .map(|(m, q)| {
                let x = aligned(&DVector::from_column_slice(q), &m.0);
                let c = coords(m, x);
                [c[0], c[1], c[2]]
            })
            .collect();
        let dirs = rep.connection_dirs.iter().chain(&rep.spoke_dirs);
        let dir_feats = self
            .dirs
            .iter()
            .zip(dirs)
            .map(|(m, d)| {
                let c = coords(m, v3(d));
                [c[0], c[1]]
            })
            .collect();
        let len_feats = rep.all_lengths().map(f64::ln).collect();
        EuclideanizedRep { frame_feats, dir_feats, len_feats }
    }
}

/// Tangent features of every tuple at the cohort's per-property Fréchet means.
pub fn euclideanize(cohort: &[&LpDssRep]) -> Result<Vec<EuclideanizedRep>> {
    let model = TangentModel::fit(cohort)?;
    Ok(cohort.iter().map(|r| model.project(r)).collect())
}

/// Feature rows, one per sample, as a CSV with a header naming each column.
pub fn features_csv(gops: &[GopId], rows: &[EuclideanizedRep]) -> String {
    let mut header = vec!["sample".to_string()];
    for g in gops {
        for c in 0..g.dim() {
            header.push(format!("{:?}_{}_{}", g.kind, g.index, c).to_lowercase());
        }
    }
    let mut s = header.join(",") + "\n";
    for (i, r) in rows.iter().enumerate() {
        let v: Vec<String> = r.to_vector().iter().map(|x| format!("{x}")).collect();
        s += &format!("{i},{}\n", v.join(","));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::tests::ellipsoid_rep;
    use crate::sweep::PlaneMode;
    use crate::synth::jitter_rep;
    use proptest::prelude::*;

    #[test]
    fn identical_cohort_has_zero_features() {
        let rep = ellipsoid_rep(PlaneMode::Normal);
        let cohort = vec![&rep; 4];
        let feats = euclideanize(&cohort).unwrap();
        for f in &feats {
            assert!(f.frame_feats.iter().flatten().all(|&x| x == 0.0));
            assert!(f.dir_feats.iter().flatten().all(|&x| x == 0.0));
            for (l, r) in f.len_feats.iter().zip(rep.all_lengths()) {
                assert_eq!(*l, r.ln());
            }
        }
        assert_eq!(gop_census(&rep).len(), 4 * 91 + 2 * 90);
        assert_eq!(feats[0].blocks().len(), gop_census(&rep).len());
    }

    #[test]
    fn quaternion_sign_does_not_matter() {
        let base = ellipsoid_rep(PlaneMode::Normal);
        let reps: Vec<LpDssRep> = (0..6).map(|s| jitter_rep(&base, 0.05, s)).collect();
        let mut flipped = reps.clone();
        for q in &mut flipped[2].frames {
            *q = q.map(|x| -x);
        }
        let a = euclideanize(&reps.iter().collect::<Vec<_>>()).unwrap();
        let b = euclideanize(&flipped.iter().collect::<Vec<_>>()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.to_vector().iter().zip(y.to_vector()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_has_zero_mean_log() {
        let pts: Vec<DVector<f64>> = [[1.0, 0.1, 0.0], [0.9, -0.2, 0.3], [1.0, 0.0, -0.2]]
            .iter()
            .map(|p| DVector::from_column_slice(p).normalize())
            .collect();
        let mu = frechet_mean(&pts, false).unwrap();
        let s = pts.iter().fold(DVector::zeros(3), |a, x| a + sphere_log(&mu, x));
        assert!(s.norm() < 1e-11);
    }

    proptest! {
        #[test]
        fn exp_inverts_log(a in proptest::collection::vec(-1.0f64..1.0, 4), b in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let (x, y) = (DVector::from_vec(a), DVector::from_vec(b));
            prop_assume!(x.norm() > 0.1 && y.norm() > 0.1);
            let (x, y) = (x.normalize(), y.normalize());
            prop_assume!(x.dot(&y) > -0.99);
            let back = sphere_exp(&x, &sphere_log(&x, &y));
            prop_assert!((back - &y).norm() < 1e-9);
            for b in tangent_basis(&x) {
                prop_assert!(b.dot(&x).abs() < 1e-12);
            }
        }
    }
}
