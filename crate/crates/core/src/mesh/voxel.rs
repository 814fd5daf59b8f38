//! Voxel inside masks and the volumetric Jaccard index.

use super::{bounds_of, signed_volume_of, TriangleMesh};
use crate::geometry::Vec3;
use crate::{Error, Result};
use rayon::prelude::*;

/// Regular grid of sample points; `origin` is the centre of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: [usize; 3],
}

impl VoxelGrid {
    /// Grid of `resolution` voxels per axis spanning the box `[lo, hi]`.
    pub fn spanning(lo: Vec3, hi: Vec3, resolution: usize) -> Self {
        let spacing = (hi - lo) / resolution as f64;
        VoxelGrid { origin: lo + spacing * 0.5, spacing, dims: [resolution; 3] }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 * self.spacing.x, j as f64 * self.spacing.y, k as f64 * self.spacing.z)
    }
}

/// Inside flags for every grid point, by majority vote of three scanline
/// parity sweeps, one along each axis. Each sweep shifts its scanlines by a
/// small irrational fraction of a voxel so that no scanline passes through a
/// mesh edge or vertex of an axis-aligned model.
pub fn inside_mask(vertices: &[Vec3], faces: &[[usize; 3]], grid: &VoxelGrid) -> Vec<bool> {
    let sweeps: Vec<Vec<bool>> = (0..3usize).into_par_iter().map(|axis| sweep(vertices, faces, grid, axis)).collect();
    (0..grid.len())
        .map(|i| sweeps.iter().filter(|s| s[i]).count() >= 2)
        .collect()
}

const JITTER: [[f64; 2]; 3] = [[0.131_783_457, 0.071_645_291], [0.093_418_761, 0.117_390_524], [0.058_327_193, 0.142_871_605]];

fn sweep(vertices: &[Vec3], faces: &[[usize; 3]], grid: &VoxelGrid, axis: usize) -> Vec<bool> {
    let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
    let (nb, nc, na) = (grid.dims[b], grid.dims[c], grid.dims[axis]);
    let ob = grid.origin[b] + JITTER[axis][0] * grid.spacing[b];
    let oc = grid.origin[c] + JITTER[axis][1] * grid.spacing[c];
    let (sb, sc) = (grid.spacing[b], grid.spacing[c]);
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); nb * nc];
    for f in faces {
        let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
        let (p0, p1, p2) = ((p[0][b], p[0][c]), (p[1][b], p[1][c]), (p[2][b], p[2][c]));
        let den = (p1.0 - p0.0) * (p2.1 - p0.1) - (p2.0 - p0.0) * (p1.1 - p0.1);
        if den.abs() < 1e-300 {
            continue;
        }
        let lo_b = p0.0.min(p1.0).min(p2.0);
        let hi_b = p0.0.max(p1.0).max(p2.0);
        let lo_c = p0.1.min(p1.1).min(p2.1);
        let hi_c = p0.1.max(p1.1).max(p2.1);
        let ib0 = ((lo_b - ob) / sb).ceil().max(0.0) as usize;
        let ic0 = ((lo_c - oc) / sc).ceil().max(0.0) as usize;
        let ib1 = ((hi_b - ob) / sb).floor();
        let ic1 = ((hi_c - oc) / sc).floor();
        if ib1 < 0.0 || ic1 < 0.0 {
            continue;
        }
        let ib1 = (ib1 as usize).min(nb.saturating_sub(1));
        let ic1 = (ic1 as usize).min(nc.saturating_sub(1));
        for ic in ic0..=ic1 {
            let y = oc + ic as f64 * sc;
            for ib in ib0..=ib1 {
                let x = ob + ib as f64 * sb;
                let w1 = ((x - p0.0) * (p2.1 - p0.1) - (p2.0 - p0.0) * (y - p0.1)) / den;
                let w2 = ((p1.0 - p0.0) * (y - p0.1) - (x - p0.0) * (p1.1 - p0.1)) / den;
                let w0 = 1.0 - w1 - w2;
                if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                    let depth = w0 * p[0][axis] + w1 * p[1][axis] + w2 * p[2][axis];
                    columns[ib + nb * ic].push(depth);
                }
            }
        }
    }
    let mut out = vec![false; grid.len()];
    for ic in 0..nc {
        for ib in 0..nb {
            let col = &mut columns[ib + nb * ic];
            if col.is_empty() {
                continue;
            }
            col.sort_by(f64::total_cmp);
            let mut crossed = 0;
            for ia in 0..na {
                let t = grid.origin[axis] + ia as f64 * grid.spacing[axis];
                while crossed < col.len() && col[crossed] < t {
                    crossed += 1;
                }
                if crossed % 2 == 1 {
                    let mut idx = [0usize; 3];
                    idx[axis] = ia;
                    idx[b] = ib;
                    idx[c] = ic;
                    out[grid.index(idx[0], idx[1], idx[2])] = true;
                }
            }
        }
    }
    out
}

/// Volumetric Jaccard index of two closed meshes over their joint bounding box.
pub fn jaccard_volume(a: &TriangleMesh, b: &TriangleMesh, resolution: usize) -> Result<f64> {
    jaccard_soup((a.vertices(), a.faces()), (b.vertices(), b.faces()), resolution)
}

/// Jaccard index of two closed triangle soups, which need not be manifold
/// (collapsed copies of a mesh are).
pub fn jaccard_soup(
    a: (&[Vec3], &[[usize; 3]]),
    b: (&[Vec3], &[[usize; 3]]),
    resolution: usize,
) -> Result<f64> {
    if resolution < 16 {
        return Err(Error::Mesh(format!("voxel resolution {resolution} below 16")));
    }
    let (lo_a, hi_a) = bounds_of(a.0);
    let (lo_b, hi_b) = bounds_of(b.0);
    let (lo, hi) = (lo_a.inf(&lo_b), hi_a.sup(&hi_b));
    let diag = (hi - lo).norm();
    for (name, soup) in [("first", a), ("second", b)] {
        if signed_volume_of(soup.0, soup.1).abs() <= 1e-12 * diag.powi(3) {
            return Err(Error::Mesh(format!("{name} Jaccard operand has zero volume")));
        }
    }
    // Pad degenerate extents so every axis has a positive spacing.
    let pad = Vec3::repeat(1e-9 * diag);
    let grid = VoxelGrid::spanning(lo - pad, hi + pad, resolution);
    let (ma, mb) = rayon::join(|| inside_mask(a.0, a.1, &grid), || inside_mask(b.0, b.1, &grid));
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in ma.iter().zip(&mb) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        return Err(Error::Mesh("no voxel lies inside either operand".into()));
    }
    Ok(inter as f64 / union as f64)
}
