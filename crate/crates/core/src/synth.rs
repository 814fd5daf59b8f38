//! Synthetic slab-like objects: ellipsoids, protrusions, bends and two-group cohorts.

use crate::geometry::{Vec2, Vec3};
use crate::lp::{quat_from_matrix, quat_to_matrix, LpDssRep};
use nalgebra::Rotation3;
use rand_distr::{Distribution, Normal};
use crate::mesh::TriangleMesh;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Localized bump on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protrusion {
    /// Cap centre as a unit direction in the unit-sphere parameter space of
    /// the ellipsoid (vertex `v` has parameter direction `v / radii`).
    pub center: [f64; 3],
    pub angular_radius_deg: f64,
    pub height: f64,
}

impl Protrusion {
    /// Cap over the top part, 60% of the way along x towards the +x vertex,
    /// 25° wide, 0.3·c high.
    pub fn standard(c: f64) -> Self {
        Protrusion { center: [0.6, 0.0, 0.8], angular_radius_deg: 25.0, height: 0.3 * c }
    }

    fn center_dir(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.center[2]).normalize()
    }

    /// Compactly supported Gaussian profile: `height` at the centre, exactly
    /// zero at and beyond the angular radius.
    pub fn profile(&self, angle: f64) -> f64 {
        let r = self.angular_radius_deg.to_radians();
        if angle >= r {
            return 0.0;
        }
        let s2 = 2.0 * (r / 2.0).powi(2);
        let tail = (-r * r / s2).exp();
        self.height * ((-angle * angle / s2).exp() - tail) / (1.0 - tail)
    }
}

/// Rotation of everything beyond `elbow_x` about the z-parallel axis through
/// `(elbow_x, 0, 0)`; the angle ramps in with a smoothstep over `band`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bend {
    pub elbow_x: f64,
    pub angle_deg: f64,
    pub band: f64,
}

impl Bend {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let t = ((p.x - self.elbow_x) / self.band).clamp(0.0, 1.0);
        if t <= 0.0 {
            return *p;
        }
        let s = t * t * (3.0 - 2.0 * t);
        let th = self.angle_deg.to_radians() * s;
        let (sn, cs) = th.sin_cos();
        let dx = p.x - self.elbow_x;
        Vec3::new(self.elbow_x + cs * dx - sn * p.y, sn * dx + cs * p.y, p.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deformation {
    pub protrusion: Option<Protrusion>,
    pub bend: Option<Bend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub radii: [f64; 3],
    #[serde(default)]
    pub deformation: Deformation,
    pub resolution: u32,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.radii;
        if !(a > b && b > c && c > 0.0) {
            return Err(Error::Synth(format!("radii must satisfy a > b > c > 0, got {:?}", self.radii)));
        }
        if let Some(p) = self.deformation.protrusion {
            if !(p.height >= 0.0 && p.height < c) {
                return Err(Error::Synth(format!("protrusion height {} must lie in [0, c)", p.height)));
            }
            if !(p.angular_radius_deg > 0.0 && p.angular_radius_deg < 90.0) {
                return Err(Error::Synth("protrusion angular radius must lie in (0°, 90°)".into()));
            }
        }
        if let Some(b) = self.deformation.bend {
            if !(0.0..=80.0).contains(&b.angle_deg) {
                return Err(Error::Synth(format!("bend angle {}° outside [0°, 80°]", b.angle_deg)));
            }
            if b.band <= 0.0 {
                return Err(Error::Synth("bend blend band must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<TriangleMesh> {
        self.validate()?;
        let m = make_ellipsoid(self.radii, self.resolution)?;
        deform(&m, self.radii, &self.deformation)
    }
}

/// Icosahedron with vertex 0 in the x > 0, z > 0 octant; downstream frame
/// orientation rules key off the first vertex.
fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let v = [
        [p, 0.0, 1.0], [1.0, p, 0.0], [-1.0, -p, 0.0], [1.0, -p, 0.0],
        [0.0, -1.0, p], [0.0, 1.0, p], [0.0, -1.0, -p], [0.0, 1.0, -p],
        [p, 0.0, -1.0], [-1.0, p, 0.0], [-p, 0.0, -1.0], [-p, 0.0, 1.0],
    ];
    let f = vec![
        [9, 11, 5], [9, 5, 1], [9, 1, 7], [9, 7, 10], [9, 10, 11],
        [1, 5, 0], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 0, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 0],
        [4, 0, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [0, 8, 1],
    ];
    (v.iter().map(|c| Vec3::new(c[0], c[1], c[2]).normalize()).collect(), f)
}

/// Unit icosphere after `levels` rounds of 4-to-1 subdivision.
pub fn icosphere(levels: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let (mut v, mut f) = icosahedron();
    for _ in 0..levels {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for &[a, b, c] in &f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

/// Ellipsoid with semi-axes `radii` along x, y, z, from a level-`resolution` icosphere.
pub fn make_ellipsoid(radii: [f64; 3], resolution: u32) -> Result<TriangleMesh> {
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Synth(format!("radii must be positive, got {radii:?}")));
    }
    if resolution > 7 {
        return Err(Error::Synth(format!("resolution {resolution} too large")));
    }
    let (v, f) = icosphere(resolution);
    let r = Vec3::new(radii[0], radii[1], radii[2]);
    TriangleMesh::new(v.into_iter().map(|p| p.component_mul(&r)).collect(), f)
}

/// Apply a protrusion (measured in the parameter space of an ellipsoid with
/// the given radii) and then a bend.
pub fn deform(mesh: &TriangleMesh, radii: [f64; 3], spec: &Deformation) -> Result<TriangleMesh> {
    let r = Vec3::new(radii[0], radii[1], radii[2]);
    let mut v: Vec<Vec3> = mesh.vertices().to_vec();
    if let Some(p) = spec.protrusion {
        let c = p.center_dir();
        for (x, n) in v.iter_mut().zip(mesh.normals()) {
            let u = x.component_div(&r).normalize();
            let h = p.profile(u.dot(&c).clamp(-1.0, 1.0).acos());
            if h > 0.0 {
                *x += n * h;
            }
        }
    }
    if let Some(b) = spec.bend {
        for x in v.iter_mut() {
            *x = b.apply(x);
        }
    }
    mesh.with_vertices(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Protrusion,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub group: String,
    pub index: usize,
    pub seed: u64,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub root_seed: u64,
    pub effect: Effect,
    pub resolution: u32,
    pub objects: Vec<ManifestEntry>,
}

pub struct Cohorts {
    pub a: Vec<TriangleMesh>,
    pub b: Vec<TriangleMesh>,
    pub manifest: Manifest,
}

/// Seed for object `index` of `group` derived from the root seed.
pub fn object_seed(root: u64, group: u64, index: u64) -> u64 {
    let mut z = root ^ (group << 56) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Radii with a ~ U(1.8, 2.2), b ~ U(0.9, 1.1), c ~ U(0.45, 0.55), redrawn until strictly ordered.
pub fn draw_radii(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let r = [rng.random_range(1.8..2.2), rng.random_range(0.9..1.1), rng.random_range(0.45..0.55)];
        if r[0] > r[1] && r[1] > r[2] {
            return r;
        }
    }
}

/// Two cohorts of random ellipsoids; group B carries the protrusion when `effect` asks for it.
pub fn simulate_groups(n_per_group: usize, effect: Effect, resolution: u32, seed: u64) -> Result<Cohorts> {
    let specs: Vec<ManifestEntry> = (0..2u64)
        .flat_map(|g| (0..n_per_group).map(move |i| (g, i)))
        .map(|(g, i)| {
            let s = object_seed(seed, g, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let radii = draw_radii(&mut rng);
            let protrusion = (g == 1 && effect == Effect::Protrusion).then(|| Protrusion::standard(radii[2]));
            ManifestEntry {
                group: if g == 0 { "A".into() } else { "B".into() },
                index: i,
                seed: s,
                spec: SynthSpec { radii, deformation: Deformation { protrusion, bend: None }, resolution, seed: s },
            }
        })
        .collect();
    let meshes: Vec<TriangleMesh> = specs.par_iter().map(|e| e.spec.build()).collect::<Result<_>>()?;
    let mut meshes = meshes.into_iter();
    let a: Vec<TriangleMesh> = meshes.by_ref().take(n_per_group).collect();
    let b: Vec<TriangleMesh> = meshes.collect();
    Ok(Cohorts { a, b, manifest: Manifest { root_seed: seed, effect, resolution, objects: specs } })
}

/// Random planar tube of length 4: a wavy centre line with a half-width
/// profile that closes like an ellipse at both ends. Counter-clockwise.
pub fn random_gc2d(seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 4.0;
    let amp = rng.random_range(0.0..0.3);
    let freq = rng.random_range(0.5..1.5) * std::f64::consts::PI / len;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let w0 = rng.random_range(0.3..0.4);
    let ripple = rng.random_range(0.0..0.15);
    let center = |x: f64| amp * (freq * x + phase).sin();
    let slope = |x: f64| amp * freq * (freq * x + phase).cos();
    let width = |x: f64| {
        let t = 2.0 * x / len - 1.0;
        w0 * (1.0 - t * t).max(0.0).sqrt() * (1.0 + ripple * (3.0 * t).cos())
    };
    let side = |x: f64, up: f64| {
        let n = Vec2::new(-slope(x), 1.0).normalize();
        Vec2::new(x, center(x)) + n * (up * width(x))
    };
    let m = 200;
    let xs: Vec<f64> = (0..=m).map(|i| 0.5 * len * (1.0 - (std::f64::consts::PI * i as f64 / m as f64).cos())).collect();
    let mut poly: Vec<Vec2> = xs.iter().map(|&x| side(x, -1.0)).collect();
    poly.extend(xs[1..m].iter().rev().map(|&x| side(x, 1.0)));
    poly
}

/// Copy of `rep` with every frame rotated by a random axis-angle of scale
/// `sigma`, every direction moved by a tangent Gaussian of scale `sigma`, and
/// every length scaled log-normally with log-sd `sigma`. Origins follow.
pub fn jitter_rep(rep: &LpDssRep, sigma: f64, seed: u64) -> LpDssRep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let gauss3 = |rng: &mut ChaCha8Rng| Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    let mut out = rep.clone();
    for q in &mut out.frames {
        let r = Rotation3::new(gauss3(&mut rng)).into_inner() * quat_to_matrix(q);
        *q = quat_from_matrix(&r);
    }
    for d in out.connection_dirs.iter_mut().chain(out.spoke_dirs.iter_mut()) {
        let g = gauss3(&mut rng);
        let moved = *d + (g - *d * d.dot(&g));
        *d = moved.normalize();
    }
    for l in out.connection_lens.iter_mut().chain(out.spoke_lens.iter_mut()) {
        *l *= normal.sample(&mut rng).exp();
    }
    out.origins = out.reconstruct_origins();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn icosphere_counts() {
        for (level, nv) in [(0, 12), (1, 42), (2, 162), (3, 642), (4, 2562)] {
            let (v, f) = icosphere(level);
            assert_eq!(v.len(), nv);
            assert_eq!(f.len(), 2 * nv - 4);
        }
    }

    #[test]
    fn ellipsoid_volume_close_to_analytic() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 4).unwrap();
        let exact = 4.0 / 3.0 * PI * 2.0 * 1.0 * 0.5;
        assert!((m.signed_volume() - exact).abs() / exact < 0.01);
    }

    #[test]
    fn ellipsoid_is_mirror_symmetric() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 3).unwrap();
        let tree = crate::spatial::tree3(m.vertices());
        for p in m.vertices() {
            let (_, d2) = tree.nearest(&[p.x, p.y, -p.z]).unwrap();
            assert!(d2.sqrt() < 1e-12);
        }
    }

    #[test]
    fn zero_deformation_is_identity() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 2).unwrap();
        let bend = Bend { elbow_x: 0.5, angle_deg: 0.0, band: 0.3 };
        let d = deform(&m, [2.0, 1.0, 0.5], &Deformation { protrusion: None, bend: Some(bend) }).unwrap();
        assert_eq!(d.vertices(), m.vertices());
    }

    #[test]
    fn protrusion_bounded_and_local() {
        let radii = [2.0, 1.0, 0.5];
        let m = make_ellipsoid(radii, 4).unwrap();
        let p = Protrusion::standard(0.5);
        let d = deform(&m, radii, &Deformation { protrusion: Some(p), bend: None }).unwrap();
        let c = p.center_dir();
        let mut max_disp: f64 = 0.0;
        for (x, y) in m.vertices().iter().zip(d.vertices()) {
            let disp = (y - x).norm();
            max_disp = max_disp.max(disp);
            let u = x.component_div(&Vec3::new(2.0, 1.0, 0.5)).normalize();
            if u.dot(&c).acos() >= p.angular_radius_deg.to_radians() {
                assert_eq!(disp, 0.0);
            }
        }
        assert!(max_disp <= p.height + 1e-9);
        assert!(max_disp > 0.5 * p.height);
    }

    #[test]
    fn bend_matches_closed_form() {
        let b = Bend { elbow_x: 0.5, angle_deg: 40.0, band: 0.5 };
        let th = 40f64.to_radians();
        let q = b.apply(&Vec3::new(2.0, 0.0, 0.0));
        let exact = Vec3::new(0.5 + 1.5 * th.cos(), 1.5 * th.sin(), 0.0);
        assert!((q - exact).norm() < 1e-6);
        let m = make_ellipsoid([2.0, 1.0, 0.5], 3).unwrap();
        let i = m.vertices().iter().position(|v| (v - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12).unwrap();
        let d = deform(&m, [2.0, 1.0, 0.5], &Deformation { protrusion: None, bend: Some(b) }).unwrap();
        assert!((d.vertices()[i] - exact).norm() < 1e-6);
    }

    #[test]
    fn cohorts_reproducible_and_symmetric_only_in_a() {
        let c1 = simulate_groups(3, Effect::Protrusion, 2, 7).unwrap();
        let c2 = simulate_groups(3, Effect::Protrusion, 2, 7).unwrap();
        for (x, y) in c1.a.iter().chain(&c1.b).zip(c2.a.iter().chain(&c2.b)) {
            assert_eq!(x.vertices(), y.vertices());
        }
        let mirrored = |m: &TriangleMesh| {
            let t = crate::spatial::tree3(m.vertices());
            m.vertices().iter().all(|p| t.nearest(&[p.x, p.y, -p.z]).unwrap().1.sqrt() < 1e-12)
        };
        assert!(c1.a.iter().all(mirrored));
        assert!(!c1.b.iter().any(mirrored));
    }

    #[test]
    fn spec_validation() {
        let bad = SynthSpec { radii: [1.0, 2.0, 0.5], deformation: Deformation::default(), resolution: 2, seed: 0 };
        assert!(bad.validate().is_err());
    }
}
