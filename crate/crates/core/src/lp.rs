//! Locally parameterized tuple of a fitted swept skeleton: relative frames,
//! connection vectors, spoke directions and lengths on a tree rooted at the
//! central spine frame.

use crate::sweep::{PlaneMode, SiteKind, SpokeGrid};
use crate::{Error, Result, Vec3};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

/// Unit quaternion stored as `[w, x, y, z]` with `w ≥ 0`.
pub type Quat = [f64; 4];

pub fn quat_from_matrix(m: &Matrix3<f64>) -> Quat {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
    let c = [q.w, q.i, q.j, q.k];
    if c[0] < 0.0 {
        c.map(|x| -x)
    } else {
        c
    }
}

pub fn quat_to_matrix(q: &Quat) -> Matrix3<f64> {
    let u = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    u.to_rotation_matrix().into_inner()
}

/// Geodesic distance `acos |q·q'|` between the rotations of two unit quaternions.
pub fn quat_distance(a: &Quat, b: &Quat) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d.abs().min(1.0).acos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMeta {
    pub mode: PlaneMode,
    /// Sheet and spine polynomial degrees.
    pub degrees: [usize; 2],
    pub stations: usize,
    pub vein_samples: usize,
    pub delta: f64,
}

/// Where a frame sits on the skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSite {
    /// Interior cross-section index.
    pub section: usize,
    pub kind: SiteKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpDssRep {
    /// Parent of each frame; the root has none.
    pub topology: Vec<Option<usize>>,
    /// Child-in-parent rotations with columns `(n, b, b⊥)`; the root's is
    /// relative to the object's canonical frame.
    pub frames: Vec<Quat>,
    /// Frame receiving each connection, in frame order with the root skipped.
    pub connection_child: Vec<usize>,
    /// Parent-to-child offsets in the parent frame.
    pub connection_dirs: Vec<Vec3>,
    pub connection_lens: Vec<f64>,
    /// Up spoke directions in their own frame; down spokes are the negation.
    pub spoke_dirs: Vec<Vec3>,
    /// All up spoke lengths, then all down spoke lengths.
    pub spoke_lens: Vec<f64>,
    /// Frame origins in canonical coordinates.
    pub origins: Vec<Vec3>,
    pub sites: Vec<FrameSite>,
    pub meta: RepMeta,
}

impl LpDssRep {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_connections(&self) -> usize {
        self.connection_dirs.len()
    }

    pub fn root(&self) -> usize {
        self.topology.iter().position(|p| p.is_none()).expect("rep has a root")
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n_frames()).filter(|&c| self.topology[c] == Some(i)).collect()
    }

    pub fn up_len(&self, i: usize) -> f64 {
        self.spoke_lens[i]
    }

    pub fn down_len(&self, i: usize) -> f64 {
        self.spoke_lens[self.n_frames() + i]
    }

    pub fn all_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.connection_lens.iter().chain(&self.spoke_lens).copied()
    }

    /// Absolute frame rotations, composed from the root.
    pub fn absolute_rotations(&self) -> Vec<Matrix3<f64>> {
        let n = self.n_frames();
        let mut out: Vec<Option<Matrix3<f64>>> = vec![None; n];
        for i in self.traversal() {
            let rel = quat_to_matrix(&self.frames[i]);
            out[i] = Some(match self.topology[i] {
                None => rel,
                Some(p) => out[p].expect("parents precede children") * rel,
            });
        }
        out.into_iter().map(|m| m.unwrap()).collect()
    }

    /// Frames in an order where every parent precedes its children.
    pub fn traversal(&self) -> Vec<usize> {
        let mut order = vec![self.root()];
        let mut k = 0;
        while k < order.len() {
            order.extend(self.children(order[k]));
            k += 1;
        }
        order
    }

    /// Origins recovered by chaining connection vectors out from the root.
    pub fn reconstruct_origins(&self) -> Vec<Vec3> {
        let rot = self.absolute_rotations();
        let mut conn = vec![usize::MAX; self.n_frames()];
        for (j, &c) in self.connection_child.iter().enumerate() {
            conn[c] = j;
        }
        let mut out = vec![Vec3::zeros(); self.n_frames()];
        for i in self.traversal() {
            out[i] = match self.topology[i] {
                None => self.origins[i],
                Some(p) => {
                    let j = conn[i];
                    out[p] + rot[p] * self.connection_dirs[j] * self.connection_lens[j]
                }
            };
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rep: LpDssRep = serde_json::from_str(text)?;
        rep.validate()?;
        Ok(rep)
    }

    /// Structural checks: sizes, a single root, acyclic parents, unit vectors, positive lengths.
    pub fn validate(&self) -> Result<()> {
        let (nf, nc) = (self.n_frames(), self.n_connections());
        let bad = |m: String| Err(Error::Rep(m));
        if self.topology.len() != nf || self.spoke_dirs.len() != nf || self.spoke_lens.len() != 2 * nf || self.origins.len() != nf {
            return bad("tuple sizes disagree with the frame count".into());
        }
        if nc + 1 != nf || self.connection_lens.len() != nc || self.connection_child.len() != nc {
            return bad(format!("{nc} connections for {nf} frames"));
        }
        if self.topology.iter().filter(|p| p.is_none()).count() != 1 {
            return bad("tree must have exactly one root".into());
        }
        if self.traversal().len() != nf {
            return bad("parent links do not form a tree".into());
        }
        let unit = |v: &Vec3| (v.norm() - 1.0).abs() <= 1e-9;
        if !self.connection_dirs.iter().chain(&self.spoke_dirs).all(unit) {
            return bad("direction not of unit length".into());
        }
        if !self.frames.iter().all(|q| (q.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() <= 1e-9) {
            return bad("frame quaternion not of unit length".into());
        }
        if !self.all_lengths().all(|l| l > 0.0 && l.is_finite()) {
            return bad("lengths must be positive".into());
        }
        Ok(())
    }
}

/// Geometric mean of all connection and spoke lengths.
pub fn lp_size(rep: &LpDssRep) -> f64 {
    let (sum, n) = rep.all_lengths().fold((0.0, 0usize), |(s, n), l| (s + l.ln(), n + 1));
    (sum / n as f64).exp()
}

/// Divide every length by the LP-size; origins scale about the root.
pub fn normalize(rep: &LpDssRep) -> LpDssRep {
    let s = lp_size(rep);
    let root = rep.origins[rep.root()];
    let mut out = rep.clone();
    out.connection_lens.iter_mut().for_each(|l| *l /= s);
    out.spoke_lens.iter_mut().for_each(|l| *l /= s);
    out.origins.iter_mut().for_each(|o| *o = root + (*o - root) / s);
    out
}

/// Columns `(n, b, b⊥)` from a site frame stored as `(b, b⊥, n)`.
fn reorder(site: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_columns(&[site.column(2).into_owned(), site.column(0).into_owned(), site.column(1).into_owned()])
}

/// Build the tuple from a spoke grid laid out per section as spine site,
/// left samples and right samples. The central section's spine frame is
/// the root, spine frames point towards it and vein frames hang off the
/// spine frame of their section, sample by sample.
pub fn build_lp_dssrep(grid: &SpokeGrid, meta: RepMeta) -> Result<LpDssRep> {
    let nsec = grid.sections();
    if meta.stations % 2 == 0 || nsec % 2 == 0 {
        return Err(Error::Rep(format!("{} stations leave no central spine station", meta.stations)));
    }
    if nsec == 0 {
        return Err(Error::Rep("no interior stations".into()));
    }
    let m = grid.vein_samples;
    let k = grid.per_section();
    let centre = nsec / 2;
    let nf = grid.sites.len();
    let mut parents = vec![None; nf];
    for s in 0..nsec {
        let base = s * k;
        parents[base] = match s.cmp(&centre) {
            std::cmp::Ordering::Less => Some(base + k),
            std::cmp::Ordering::Greater => Some(base - k),
            std::cmp::Ordering::Equal => None,
        };
        for side in 0..2 {
            for j in 1..=m {
                let i = base + side * m + j;
                parents[i] = Some(if j == 1 { base } else { i - 1 });
            }
        }
    }
    let rot: Vec<Matrix3<f64>> = grid.sites.iter().map(|s| reorder(&s.frame)).collect();
    let mut frames = Vec::with_capacity(nf);
    let (mut connection_child, mut connection_dirs, mut connection_lens) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..nf {
        match parents[i] {
            None => frames.push(quat_from_matrix(&rot[i])),
            Some(p) => {
                frames.push(quat_from_matrix(&(rot[p].transpose() * rot[i])));
                let v = rot[p].transpose() * (grid.sites[i].point - grid.sites[p].point);
                let len = v.norm();
                if !(len > 0.0) {
                    return Err(Error::Rep(format!("frames {p} and {i} coincide")));
                }
                connection_child.push(i);
                connection_dirs.push(v / len);
                connection_lens.push(len);
            }
        }
    }
    let spoke_dirs = grid.sites.iter().zip(&rot).map(|(s, r)| (r.transpose() * s.up).normalize()).collect();
    let spoke_lens = grid.sites.iter().map(|s| s.up_len).chain(grid.sites.iter().map(|s| s.down_len)).collect();
    let rep = LpDssRep {
        topology: parents,
        frames,
        connection_child,
        connection_dirs,
        connection_lens,
        spoke_dirs,
        spoke_lens,
        origins: grid.sites.iter().map(|s| s.point).collect(),
        sites: grid.sites.iter().map(|s| FrameSite { section: s.section, kind: s.kind }).collect(),
        meta,
    };
    rep.validate()?;
    Ok(rep)
}
