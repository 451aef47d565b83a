//! Procedural test shapes: icospheres, tori, grids, bumped spheres and cubes.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::manifold_io::Manifold;
use crate::rng;

/// Subdivided icosahedron projected onto a sphere. Level `l` has `10·4ˡ + 2` vertices.
pub fn icosphere(level: u32, radius: f64) -> Manifold {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = verts.into_iter().map(|v| Point3::from(v * radius)).collect();
    Manifold::new(vertices, faces).expect("icosphere is valid")
}

/// Torus with major radius `big_r`, tube radius `small_r` and an `nu × nv` grid.
pub fn torus(big_r: f64, small_r: f64, nu: usize, nv: usize) -> Manifold {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let rr = big_r + small_r * v.cos();
            vertices.push(Point3::new(rr * u.cos(), rr * u.sin(), small_r * v.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Manifold::new(vertices, faces).expect("torus is valid")
}

/// Flat `nx × ny` vertex grid on `[0,1]²` in the z = 0 plane.
pub fn grid(nx: usize, ny: usize) -> Manifold {
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Point3::new(
                i as f64 / (nx - 1) as f64,
                j as f64 / (ny - 1) as f64,
                0.0,
            ));
        }
    }
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            faces.push([a, a + 1, a + nx + 1]);
            faces.push([a, a + nx + 1, a + nx]);
        }
    }
    Manifold::new(vertices, faces).expect("grid is valid")
}

/// Gaussian radial bump on the unit sphere, centred on `center`.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    pub center: Unit<Vector3<f64>>,
    pub amplitude: f64,
    /// Angular width of the Gaussian profile, in radians.
    pub width: f64,
}

impl Bump {
    pub fn radius_at(&self, theta: f64) -> f64 {
        1.0 + self.amplitude * (-theta * theta / (2.0 * self.width * self.width)).exp()
    }

    /// Angular distance of `p` from the bump centre.
    pub fn angle_of(&self, p: &Point3<f64>) -> f64 {
        let n = p.coords.norm();
        if n == 0.0 {
            return 0.0;
        }
        (p.coords.dot(&self.center) / n).clamp(-1.0, 1.0).acos()
    }
}

/// A unit sphere carrying one radial Gaussian bump.
///
/// Vertices of an icosphere are slid along meridians so that the bumped
/// surface keeps a uniform vertex density per unit area; a plain radial
/// displacement would leave the bump flank badly under-sampled.
pub fn bump_sphere(level: u32, bump: &Bump) -> Manifold {
    let base = icosphere(level, 1.0);
    let c = bump.center.into_inner();
    let helper = if c.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = c.cross(&helper).normalize();
    let e2 = c.cross(&e1);

    // Cumulative surface area of the bumped profile as a function of polar angle.
    const STEPS: usize = 20_000;
    let ts: Vec<f64> = (0..=STEPS).map(|i| PI * i as f64 / STEPS as f64).collect();
    let dens = |t: f64| {
        let r = bump.radius_at(t);
        let dr = (r - 1.0) * (-t / (bump.width * bump.width));
        r * (r * r + dr * dr).sqrt() * t.sin()
    };
    let mut area = vec![0.0; STEPS + 1];
    for i in 1..=STEPS {
        area[i] = area[i - 1] + 0.5 * (dens(ts[i]) + dens(ts[i - 1])) * (ts[i] - ts[i - 1]);
    }
    let total = area[STEPS];
    let invert = |target: f64| -> f64 {
        let k = area.partition_point(|&a| a < target).clamp(1, STEPS);
        let (a0, a1) = (area[k - 1], area[k]);
        let w = if a1 > a0 { (target - a0) / (a1 - a0) } else { 0.0 };
        ts[k - 1] + w * (ts[k] - ts[k - 1])
    };

    let vertices = base
        .vertices
        .iter()
        .map(|p| {
            let v = p.coords;
            let theta0 = v.dot(&c).clamp(-1.0, 1.0).acos();
            let phi = v.dot(&e2).atan2(v.dot(&e1));
            let theta = invert((1.0 - theta0.cos()) / 2.0 * total);
            let dir = c * theta.cos() + (e1 * phi.cos() + e2 * phi.sin()) * theta.sin();
            Point3::from(dir * bump.radius_at(theta))
        })
        .collect();
    Manifold::new(vertices, base.faces).expect("bump sphere is valid")
}

/// Icosphere pushed onto the surface of the cube `[-h, h]³`.
pub fn cube_sphere(level: u32, half: f64) -> Manifold {
    let mut m = icosphere(level, 1.0);
    for p in &mut m.vertices {
        let s = p.coords.amax();
        *p = Point3::from(p.coords / s * half);
    }
    m
}

/// Uniformly random unit vector from the stream `(seed, path)`.
pub fn random_direction(seed: u64, path: &[u64]) -> Unit<Vector3<f64>> {
    let mut r = rng::stream(seed, path);
    loop {
        let v = Vector3::new(
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
        );
        if v.norm() > 1e-9 {
            return Unit::new_normalize(v);
        }
    }
}

pub fn random_rotation(seed: u64, path: &[u64]) -> Rotation3<f64> {
    let axis = random_direction(seed, path);
    let angle = rng::stream(seed, &[path, &[1]].concat()).random_range(0.0..2.0 * PI);
    Rotation3::from_axis_angle(&axis, angle)
}

/// Apply `x ↦ R·x + t` to every vertex.
pub fn rigid_transform(m: &Manifold, rot: &Rotation3<f64>, t: &Vector3<f64>) -> Manifold {
    let mut out = m.clone();
    for p in &mut out.vertices {
        *p = rot * *p + t;
    }
    out
}

/// Isotropic Gaussian vertex noise with standard deviation `sigma`.
pub fn jitter(m: &Manifold, sigma: f64, seed: u64) -> Manifold {
    let mut r = rng::stream(seed, &[0x6a17]);
    let mut out = m.clone();
    for p in &mut out.vertices {
        for c in p.coords.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *c += sigma * z;
        }
    }
    out
}

pub fn scale(m: &Manifold, s: f64) -> Manifold {
    let mut out = m.clone();
    for p in &mut out.vertices {
        p.coords *= s;
    }
    out
}
