//! Closed, genus-0, outward-oriented triangle meshes.

mod geodesic;
mod io;
mod ray;
mod voxel;

pub use geodesic::{geodesic_distances, DistanceMatrix, GeodesicOptions};
pub use io::{load_mesh, parse_obj, parse_ply, save_mesh, write_obj, write_ply, write_ply_points, MeshFormat, PlyEncoding};
pub use ray::{contains_point, line_hits, ray_intersect, ray_intersect_filtered, RayHit};
pub use voxel::{inside_mask, jaccard_soup, jaccard_volume, VoxelGrid};

use crate::geometry::Vec3;
use crate::{Error, Result};
use nalgebra::{Matrix3, Rotation3};
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<[usize; 2]>,
}

impl TriangleMesh {
    /// Validate and build a mesh. Faces are flipped if the enclosed volume is
    /// negative, so the result is always outward-oriented.
    pub fn new(vertices: Vec<Vec3>, mut faces: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if nv < 4 || faces.len() < 4 {
            return Err(Error::Mesh(format!("too few elements ({nv} vertices, {} faces)", faces.len())));
        }
        if let Some(p) = vertices.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Mesh(format!("non-finite vertex {p:?}")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= nv) {
                return Err(Error::Mesh(format!("face {fi} references a missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Mesh(format!("face {fi} repeats a vertex")));
            }
        }

        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if directed.insert(e, fi).is_some() {
                    return Err(Error::Mesh(format!(
                        "inconsistent face orientation or non-manifold edge ({}, {})",
                        e.0, e.1
                    )));
                }
            }
        }
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3 / 2);
        for &(a, b) in directed.keys() {
            *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
        }
        let mut edges: Vec<[usize; 2]> = Vec::with_capacity(undirected.len());
        for (&(a, b), &c) in &undirected {
            match c {
                2 => edges.push([a, b]),
                1 => return Err(Error::OpenBoundary(a, b)),
                _ => return Err(Error::NonManifold(a, b, c)),
            }
        }
        edges.sort_unstable();

        let mut neighbors = vec![Vec::new(); nv];
        for &[a, b] in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        if let Some(i) = neighbors.iter().position(|n| n.is_empty()) {
            return Err(Error::Mesh(format!("vertex {i} is not used by any face")));
        }
        let euler = nv as i64 - edges.len() as i64 + faces.len() as i64;
        if euler != 2 {
            return Err(Error::Genus(euler));
        }
        if connected_components(&neighbors) != 1 {
            return Err(Error::Mesh("mesh has more than one connected component".into()));
        }

        let vol = signed_volume_of(&vertices, &faces);
        let scale = bbox_diag(&vertices);
        if vol.abs() <= 1e-12 * scale.powi(3) {
            return Err(Error::Mesh("mesh encloses no volume".into()));
        }
        if vol < 0.0 {
            for f in &mut faces {
                f.swap(1, 2);
            }
        }

        let normals = vertex_normals(&vertices, &faces)?;
        Ok(TriangleMesh { vertices, faces, normals, neighbors, edges })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Area-weighted unit vertex normals, outward.
    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    /// Sorted one-ring neighbours of each vertex.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Undirected edges `[a, b]` with `a < b`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    pub fn signed_volume(&self) -> f64 {
        signed_volume_of(&self.vertices, &self.faces)
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a])).normalize()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds_of(&self.vertices)
    }

    pub fn diagonal(&self) -> f64 {
        bbox_diag(&self.vertices)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let s: f64 = self.edges.iter().map(|&[a, b]| (self.vertices[a] - self.vertices[b]).norm()).sum();
        s / self.edges.len() as f64
    }

    /// Apply `x -> r x + t`. Orientation and topology are preserved.
    pub fn transformed(&self, r: &Rotation3<f64>, t: &Vec3) -> TriangleMesh {
        self.map_vertices(|p| r * p + t)
    }

    /// Apply a general linear map plus offset; fails if the map degenerates the mesh.
    pub fn linear_transformed(&self, m: &Matrix3<f64>, t: &Vec3) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices.iter().map(|p| m * p + t).collect(), self.faces.clone())
    }

    fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        let vertices: Vec<Vec3> = self.vertices.iter().map(f).collect();
        let normals = vertex_normals(&vertices, &self.faces).unwrap_or_else(|_| self.normals.clone());
        TriangleMesh {
            vertices,
            faces: self.faces.clone(),
            normals,
            neighbors: self.neighbors.clone(),
            edges: self.edges.clone(),
        }
    }

    /// Replace vertex positions, keeping connectivity; the result is revalidated.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriangleMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Mesh("vertex count mismatch".into()));
        }
        TriangleMesh::new(vertices, self.faces.clone())
    }
}

fn connected_components(neighbors: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; neighbors.len()];
    let mut count = 0;
    for s in 0..neighbors.len() {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

pub(crate) fn signed_volume_of(vertices: &[Vec3], faces: &[[usize; 3]]) -> f64 {
    faces
        .iter()
        .map(|&[a, b, c]| vertices[a].dot(&vertices[b].cross(&vertices[c])))
        .sum::<f64>()
        / 6.0
}

pub(crate) fn bounds_of(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub(crate) fn bbox_diag(points: &[Vec3]) -> f64 {
    let (lo, hi) = bounds_of(points);
    (hi - lo).norm()
}

fn vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<Vec3>> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in faces {
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                Ok(n / len)
            } else {
                Err(Error::Mesh(format!("vertex {i} has a degenerate normal")))
            }
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::synth::make_ellipsoid;

    #[test]
    fn cube_is_valid() {
        let m = cube(1.0, Vec3::zeros());
        assert_eq!(m.euler_characteristic(), 2);
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
        for (p, n) in m.vertices().iter().zip(m.normals()) {
            assert!((p - Vec3::repeat(0.5)).dot(n) > 0.0);
        }
    }

    #[test]
    fn inverted_faces_are_reoriented() {
        let m = tetra();
        let flipped: Vec<[usize; 3]> = m.faces().iter().map(|f| [f[0], f[2], f[1]]).collect();
        let again = TriangleMesh::new(m.vertices().to_vec(), flipped).unwrap();
        assert!(again.signed_volume() > 0.0);
        assert!((again.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn open_mesh_rejected() {
        let m = tetra();
        let err = TriangleMesh::new(m.vertices().to_vec(), m.faces()[..3].to_vec()).unwrap_err();
        assert!(matches!(err, Error::OpenBoundary(..) | Error::Mesh(_)), "{err}");
    }

    #[test]
    fn torus_rejected_by_genus() {
        let (nu, nv) = (8, 6);
        let mut verts = Vec::new();
        for i in 0..nu {
            for j in 0..nv {
                let u = i as f64 / nu as f64 * std::f64::consts::TAU;
                let v = j as f64 / nv as f64 * std::f64::consts::TAU;
                verts.push(Vec3::new((2.0 + v.cos()) * u.cos(), (2.0 + v.cos()) * u.sin(), v.sin()));
            }
        }
        let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
        let mut faces = Vec::new();
        for i in 0..nu {
            for j in 0..nv {
                faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        assert!(matches!(TriangleMesh::new(verts, faces), Err(Error::Genus(0))));
    }

    #[test]
    fn ellipsoid_normals_match_gradient() {
        // Radial direction of the implicit function x²/a²+y²/b²+z²/c²: (x/a², y/b², z/c²).
        let m = make_ellipsoid([2.0, 1.0, 0.5], 4).unwrap();
        let mut worst: f64 = 0.0;
        for (p, n) in m.vertices().iter().zip(m.normals()) {
            let g = Vec3::new(p.x / 4.0, p.y, p.z / 0.25).normalize();
            worst = worst.max(g.dot(n).clamp(-1.0, 1.0).acos());
        }
        assert!(worst < 3f64.to_radians(), "worst normal deviation {worst}");
    }
}
