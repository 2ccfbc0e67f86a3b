//! Procedural corpus of labelled primitives for desk-scale experiments.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::mesh::{add, axis_angle, rotate, scale, Mesh, Vec3};
use crate::{Error, Result};

/// Class names in generation order.
pub const PRIMITIVES: [&str; 7] = [
    "sphere",
    "box",
    "cylinder",
    "cone",
    "torus",
    "octahedron",
    "prism",
];

const STRETCH: (f64, f64) = (0.85, 1.15);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub classes: usize,
    pub instances: usize,
    /// Standard deviation of the per-vertex Gaussian jitter.
    pub noise: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > PRIMITIVES.len() {
            return Err(Error::BadSpec(format!(
                "classes must be between 2 and {}, got {}",
                PRIMITIVES.len(),
                self.classes
            )));
        }
        if self.instances < 2 {
            return Err(Error::BadSpec(format!(
                "need at least 2 instances per class, got {}",
                self.instances
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::BadSpec(format!(
                "noise must be a finite non-negative number, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

/// Merges vertices that coincide up to rounding.
#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    lookup: HashMap<[i64; 3], u32>,
}

impl Builder {
    fn vertex(&mut self, v: Vec3) -> u32 {
        let key = v.map(|x| (x * 1e9).round() as i64);
        let next = self.vertices.len() as u32;
        *self.lookup.entry(key).or_insert_with(|| {
            self.vertices.push(v);
            next
        })
    }

    fn triangle(&mut self, a: Vec3, b: Vec3, c: Vec3) {
        let t = [self.vertex(a), self.vertex(b), self.vertex(c)];
        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
            self.triangles.push(t);
        }
    }

    /// Splits a triangle into `n²` smaller ones.
    fn subdivided(&mut self, a: Vec3, b: Vec3, c: Vec3, n: usize) {
        let point = |i: usize, j: usize| -> Vec3 {
            let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
            add(
                add(a, scale(crate::mesh::sub(b, a), u)),
                scale(crate::mesh::sub(c, a), v),
            )
        };
        for i in 0..n {
            for j in 0..n - i {
                self.triangle(point(i, j), point(i + 1, j), point(i, j + 1));
                if i + j + 1 < n {
                    self.triangle(point(i + 1, j), point(i + 1, j + 1), point(i, j + 1));
                }
            }
        }
    }

    /// Surface of revolution about z from a profile of `(radius, z)` points.
    fn revolve(&mut self, profile: &[(f64, f64)], slices: usize) {
        let at = |(r, z): (f64, f64), s: usize| -> Vec3 {
            let phi = TAU * (s % slices) as f64 / slices as f64;
            [r * phi.cos(), r * phi.sin(), z]
        };
        for w in profile.windows(2) {
            for s in 0..slices {
                let (a, b, c, d) = (at(w[0], s), at(w[0], s + 1), at(w[1], s), at(w[1], s + 1));
                self.triangle(a, b, d);
                self.triangle(a, d, c);
            }
        }
    }

    fn finish(self, id: String) -> Result<Mesh> {
        Mesh::new(id, self.vertices, self.triangles)
    }
}

fn ring(from: (f64, f64), to: (f64, f64), steps: usize) -> impl Iterator<Item = (f64, f64)> {
    (0..=steps).map(move |i| {
        let t = i as f64 / steps as f64;
        (from.0 + (to.0 - from.0) * t, from.1 + (to.1 - from.1) * t)
    })
}

/// Base (unperturbed) primitive, roughly unit-sized and centred.
pub fn generate_shape(class: &str) -> Result<Mesh> {
    let mut b = Builder::default();
    match class {
        "sphere" => {
            let profile: Vec<(f64, f64)> = (0..=16)
                .map(|i| {
                    let theta = PI * i as f64 / 16.0;
                    (theta.sin(), -theta.cos())
                })
                .collect();
            b.revolve(&profile, 32);
        }
        "box" => {
            let h = 0.6;
            let corner = |i: usize| -> Vec3 {
                [
                    if i & 1 == 0 { -h } else { h },
                    if i & 2 == 0 { -h } else { h },
                    if i & 4 == 0 { -h } else { h },
                ]
            };
            for face in [
                [0, 2, 3, 1],
                [4, 5, 7, 6],
                [0, 1, 5, 4],
                [2, 6, 7, 3],
                [0, 4, 6, 2],
                [1, 3, 7, 5],
            ] {
                let [p, q, r, s] = face.map(corner);
                b.subdivided(p, q, r, 6);
                b.subdivided(p, r, s, 6);
            }
        }
        "cylinder" => {
            let (r, h) = (0.55, 0.8);
            let profile: Vec<_> = ring((0.0, -h), (r, -h), 4)
                .chain(ring((r, -h), (r, h), 10).skip(1))
                .chain(ring((r, h), (0.0, h), 4).skip(1))
                .collect();
            b.revolve(&profile, 32);
        }
        "cone" => {
            let (r, h) = (0.75, 0.8);
            let profile: Vec<_> = ring((0.0, -h), (r, -h), 5)
                .chain(ring((r, -h), (0.0, h), 12).skip(1))
                .collect();
            b.revolve(&profile, 32);
        }
        "torus" => {
            let (big, small) = (0.7, 0.25);
            let profile: Vec<_> = (0..=16)
                .map(|i| {
                    let t = TAU * i as f64 / 16.0;
                    (big + small * t.cos(), small * t.sin())
                })
                .collect();
            b.revolve(&profile, 32);
        }
        "octahedron" => {
            let axes: [Vec3; 6] = [
                [1., 0., 0.],
                [-1., 0., 0.],
                [0., 1., 0.],
                [0., -1., 0.],
                [0., 0., 1.],
                [0., 0., -1.],
            ];
            for &x in &axes[0..2] {
                for &y in &axes[2..4] {
                    for &z in &axes[4..6] {
                        b.subdivided(x, y, z, 6);
                    }
                }
            }
        }
        "prism" => {
            let h = 0.8;
            let base: Vec<Vec3> = (0..3)
                .map(|i| {
                    let phi = TAU * i as f64 / 3.0;
                    [0.8 * phi.cos(), 0.8 * phi.sin(), 0.0]
                })
                .collect();
            let lift = |p: Vec3, z: f64| [p[0], p[1], z];
            b.subdivided(lift(base[0], -h), lift(base[2], -h), lift(base[1], -h), 6);
            b.subdivided(lift(base[0], h), lift(base[1], h), lift(base[2], h), 6);
            for i in 0..3 {
                let (p, q) = (base[i], base[(i + 1) % 3]);
                b.subdivided(lift(p, -h), lift(q, -h), lift(q, h), 6);
                b.subdivided(lift(p, -h), lift(q, h), lift(p, h), 6);
            }
        }
        other => return Err(Error::BadSpec(format!("unknown primitive {other}"))),
    }
    b.finish(class.to_owned())
}

fn random_rotation(rng: &mut ChaCha8Rng) -> crate::mesh::Mat3 {
    let axis: Vec3 = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    // Haar-uniform angle density on SO(3) is (1 - cos θ)/π.
    let angle = loop {
        let t = rng.gen_range(0.0..PI);
        if rng.gen_range(0.0..2.0) <= 1.0 - t.cos() {
            break t;
        }
    };
    axis_angle(axis, angle)
}

/// Perturbed instance: per-axis stretch, random rotation, vertex jitter.
fn instance(base: &Mesh, id: String, noise: f64, rng: &mut ChaCha8Rng) -> Result<Mesh> {
    let stretch: Vec3 = [
        rng.gen_range(STRETCH.0..=STRETCH.1),
        rng.gen_range(STRETCH.0..=STRETCH.1),
        rng.gen_range(STRETCH.0..=STRETCH.1),
    ];
    let rot = random_rotation(rng);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::BadSpec(e.to_string()))?;
    let vertices = base
        .vertices
        .iter()
        .map(|v| {
            let r = rotate(
                &rot,
                [v[0] * stretch[0], v[1] * stretch[1], v[2] * stretch[2]],
            );
            if noise > 0.0 {
                [
                    r[0] + jitter.sample(rng),
                    r[1] + jitter.sample(rng),
                    r[2] + jitter.sample(rng),
                ]
            } else {
                r
            }
        })
        .collect();
    Mesh::new(id, vertices, base.triangles.clone())
}

/// Writes `{class}_{i:03}.off` files and `manifest.tsv` into `out`.
/// Returns the manifest path.
pub fn gen_dataset(spec: &GenSpec, out: &Path) -> Result<PathBuf> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = String::new();
    for class in &PRIMITIVES[..spec.classes] {
        let base = generate_shape(class)?;
        for i in 0..spec.instances {
            let name = format!("{class}_{i:03}");
            let mesh = instance(&base, name.clone(), spec.noise, &mut rng)?;
            let path = out.join(format!("{name}.off"));
            fs::write(&path, mesh.to_off_string()).map_err(|e| Error::io(&path, e))?;
            manifest.push_str(&format!("{name}.off\t{class}\n"));
        }
    }
    let path = out.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
