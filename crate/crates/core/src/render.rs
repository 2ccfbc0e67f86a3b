//! Orthographic depth-buffer rendering from cameras on the unit sphere.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::mesh::{cross, dot, normalized, Mesh, Vec3};
use crate::{Error, Result};

/// Depth assigned to the far plane; background stays exactly zero.
pub const FAR_DEPTH: f64 = 0.05;

pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Radians in `[0, 2π)`.
    pub azimuth: f64,
    /// Radians in `[-π/2, π/2]`.
    pub elevation: f64,
}

impl Camera {
    /// Unit vector from the origin towards the camera.
    pub fn direction(&self) -> Vec3 {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [ce * ca, ce * sa, se]
    }

    /// Image-plane basis `(right, up)`. Up is world +z projected onto the
    /// image plane, or +x when looking straight along z.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let d = self.direction();
        let world_up = if d[2].abs() > 1.0 - 1e-9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let k = dot(world_up, d);
        let up = normalized([
            world_up[0] - k * d[0],
            world_up[1] - k * d[1],
            world_up[2] - k * d[2],
        ]);
        (cross(up, d), up)
    }
}

/// `n_views` cameras on a spherical Fibonacci lattice.
///
/// Point `i` sits at height `z = 1 - (2i + 1)/n` and azimuth `i` times the
/// golden angle, so a single camera lands on the equator at azimuth zero.
pub fn camera_positions(n_views: usize) -> Vec<Camera> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n_views)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n_views as f64;
            Camera {
                azimuth: (i as f64 * golden).rem_euclid(2.0 * PI),
                elevation: z.clamp(-1.0, 1.0).asin(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 at the top of the image.
    pub depth: Vec<f32>,
}

impl DepthImage {
    pub fn blank(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            depth: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.depth[row * self.width + col]
    }

    pub fn is_empty(&self) -> bool {
        self.depth.iter().all(|&d| d == 0.0)
    }

    /// Binary 8-bit PGM, depth scaled by 255 and rounded.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.depth
                .iter()
                .map(|&d| (d.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Maps signed distance along the view direction, in `[-1, 1]`, to a depth
/// value in `[FAR_DEPTH, 1]`.
#[inline]
pub fn depth_value(t: f64) -> f64 {
    FAR_DEPTH + (1.0 - FAR_DEPTH) * 0.5 * (t + 1.0)
}

/// Renders the depth buffer of a normalized mesh seen from `camera`.
///
/// The orthographic window is `[-1, 1]²`. A pixel is covered when its
/// center lies inside or on the edge of a projected triangle, and the
/// nearest surface (largest depth) wins.
pub fn render_depth(mesh: &Mesh, camera: &Camera, resolution: usize) -> Result<DepthImage> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if resolution < MIN_RESOLUTION {
        return Err(Error::BadSpec(format!(
            "resolution {resolution} below minimum {MIN_RESOLUTION}"
        )));
    }
    let d = camera.direction();
    let (right, up) = camera.basis();
    let half = resolution as f64 * 0.5;
    // screen coordinates: pixel (r, c) has its center at (c + 0.5, r + 0.5)
    let projected: Vec<[f64; 3]> = mesh
        .vertices
        .iter()
        .map(|&v| {
            [
                (dot(v, right) + 1.0) * half,
                (1.0 - dot(v, up)) * half,
                depth_value(dot(v, d)),
            ]
        })
        .collect();

    let mut img = DepthImage::blank(resolution, resolution);
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(|i| projected[i as usize]);
        rasterize(&mut img, a, b, c);
    }
    Ok(img)
}

#[inline]
fn edge(a: [f64; 3], b: [f64; 3], px: f64, py: f64) -> f64 {
    (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
}

fn rasterize(img: &mut DepthImage, a: [f64; 3], b: [f64; 3], c: [f64; 3]) {
    let area = edge(a, b, c[0], c[1]);
    if area.abs() < 1e-12 {
        return;
    }
    let res = img.width as f64;
    let min_x = a[0].min(b[0]).min(c[0]);
    let max_x = a[0].max(b[0]).max(c[0]);
    let min_y = a[1].min(b[1]).min(c[1]);
    let max_y = a[1].max(b[1]).max(c[1]);
    if max_x < 0.0 || max_y < 0.0 || min_x > res || min_y > res {
        return;
    }
    let c0 = ((min_x - 0.5).ceil().max(0.0)) as usize;
    let c1 = ((max_x - 0.5).floor().min(res - 1.0)) as isize;
    let r0 = ((min_y - 0.5).ceil().max(0.0)) as usize;
    let r1 = ((max_y - 0.5).floor().min(res - 1.0)) as isize;
    if c1 < c0 as isize || r1 < r0 as isize {
        return;
    }
    let inv = 1.0 / area;
    for row in r0..=r1 as usize {
        let py = row as f64 + 0.5;
        for col in c0..=c1 as usize {
            let px = col as f64 + 0.5;
            let wa = edge(b, c, px, py) * inv;
            let wb = edge(c, a, px, py) * inv;
            let wc = edge(a, b, px, py) * inv;
            if wa < 0.0 || wb < 0.0 || wc < 0.0 {
                continue;
            }
            let z = (wa * a[2] + wb * b[2] + wc * c[2]) as f32;
            let slot = &mut img.depth[row * img.width + col];
            if z > *slot {
                *slot = z;
            }
        }
    }
}

/// Renders every camera, in camera order.
pub fn render_views(mesh: &Mesh, cameras: &[Camera], resolution: usize) -> Result<Vec<DepthImage>> {
    crate::par::map(cameras, |cam| render_depth(mesh, cam, resolution))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{axis_angle, rotate};

    fn angle(a: Vec3, b: Vec3) -> f64 {
        dot(a, b).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn single_camera_is_seed_point() {
        let c = camera_positions(1);
        assert_eq!(
            c,
            vec![Camera {
                azimuth: 0.0,
                elevation: 0.0
            }]
        );
    }

    #[test]
    fn two_cameras_are_far_apart() {
        let c = camera_positions(2);
        assert!(angle(c[0].direction(), c[1].direction()).to_degrees() >= 90.0);
    }

    #[test]
    fn lattice_64_is_well_spread() {
        let cams = camera_positions(64);
        assert_eq!(cams, camera_positions(64));
        let dirs: Vec<Vec3> = cams.iter().map(Camera::direction).collect();
        let mut min = f64::MAX;
        for i in 0..dirs.len() {
            for j in 0..i {
                min = min.min(angle(dirs[i], dirs[j]));
            }
        }
        assert!(
            min.to_degrees() > 10.0,
            "min separation {}",
            min.to_degrees()
        );
        for c in &cams {
            assert!((0.0..2.0 * PI).contains(&c.azimuth));
            assert!(c.elevation.abs() <= PI / 2.0);
        }
    }

    #[test]
    fn basis_is_orthonormal_including_poles() {
        for cam in camera_positions(64).into_iter().chain([
            Camera {
                azimuth: 0.3,
                elevation: PI / 2.0,
            },
            Camera {
                azimuth: 0.0,
                elevation: -PI / 2.0,
            },
        ]) {
            let d = cam.direction();
            let (r, u) = cam.basis();
            assert!(dot(r, u).abs() < 1e-12 && dot(r, d).abs() < 1e-12 && dot(u, d).abs() < 1e-12);
            assert!((dot(r, r) - 1.0).abs() < 1e-12 && (dot(u, u) - 1.0).abs() < 1e-12);
            // right-handed: right x up points back at the camera
            let c = cross(r, u);
            assert!((dot(c, d) - 1.0).abs() < 1e-12);
        }
    }

    const FRONT: Camera = Camera {
        azimuth: 0.0,
        elevation: 0.0,
    };

    fn quad_facing_x(x: f64, half: f64) -> (Vec<Vec3>, Vec<[u32; 3]>) {
        (
            vec![
                [x, -half, -half],
                [x, half, -half],
                [x, half, half],
                [x, -half, half],
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    #[test]
    fn triangle_covers_its_footprint() {
        // camera at +x looking down -x; image right is +y, up is +z
        let m = Mesh::new(
            "t",
            vec![[0.2, -0.5, -0.5], [0.2, 0.5, -0.5], [0.2, 0.0, 0.5]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let img = render_depth(&m, &FRONT, 32).unwrap();
        let expected = depth_value(0.2) as f32;
        for row in 0..32 {
            for col in 0..32 {
                let x = (col as f64 + 0.5) / 16.0 - 1.0;
                let y = 1.0 - (row as f64 + 0.5) / 16.0;
                // inside test against the triangle (-0.5,-0.5),(0.5,-0.5),(0,0.5)
                let inside = y >= -0.5 - 1e-9 && y <= 0.5 - 2.0 * x.abs() + 1e-9;
                let strict = y > -0.5 + 1e-9 && y < 0.5 - 2.0 * x.abs() - 1e-9;
                let v = img.at(row, col);
                if strict {
                    assert_eq!(v, expected, "pixel {row},{col}");
                } else if !inside {
                    assert_eq!(v, 0.0, "pixel {row},{col}");
                }
            }
        }
        assert!(img.at(16, 16) > 0.0);
    }

    #[test]
    fn nearer_surface_wins() {
        let (mut v, mut t) = quad_facing_x(-0.3, 0.5);
        let (v2, t2) = quad_facing_x(0.4, 0.25);
        let off = v.len() as u32;
        v.extend(v2);
        t.extend(t2.iter().map(|tri| tri.map(|i| i + off)));
        let m = Mesh::new("z", v, t).unwrap();
        let img = render_depth(&m, &FRONT, 32).unwrap();
        assert_eq!(img.at(16, 16), depth_value(0.4) as f32);
        assert_eq!(img.at(16, 10), depth_value(-0.3) as f32);
        assert_eq!(img.at(0, 0), 0.0);

        // order of triangles does not matter
        let mut rev = m.clone();
        rev.triangles.reverse();
        assert_eq!(render_depth(&rev, &FRONT, 32).unwrap(), img);
    }

    pub(crate) fn uv_sphere(stacks: usize, slices: usize) -> Mesh {
        let mut v = vec![[0.0, 0.0, 1.0]];
        for i in 1..stacks {
            let phi = PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let th = 2.0 * PI * j as f64 / slices as f64;
                v.push([phi.sin() * th.cos(), phi.sin() * th.sin(), phi.cos()]);
            }
        }
        v.push([0.0, 0.0, -1.0]);
        let last = (v.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let mut t = Vec::new();
        for j in 0..slices {
            t.push([0, ring(1, j), ring(1, j + 1)]);
            t.push([last, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                t.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
                t.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
            }
        }
        Mesh::new("sphere", v, t).unwrap()
    }

    #[test]
    fn sphere_matches_analytic_depth() {
        let res = 64;
        let m = uv_sphere(64, 128);
        let img = render_depth(&m, &FRONT, res).unwrap();
        let tol = 2.0 / res as f64;
        let center = img.at(res / 2, res / 2);
        for row in 0..res {
            for col in 0..res {
                let x = (col as f64 + 0.5) * 2.0 / res as f64 - 1.0;
                let y = 1.0 - (row as f64 + 0.5) * 2.0 / res as f64;
                let r2 = x * x + y * y;
                let got = img.at(row, col) as f64;
                assert!(got <= center as f64);
                if r2 < 0.9 {
                    let want = depth_value((1.0 - r2).sqrt());
                    assert!((got - want).abs() < tol, "({row},{col}) {got} vs {want}");
                } else if r2 > 1.0 + tol {
                    assert_eq!(got, 0.0);
                }
            }
        }
        // radially decreasing along the central row
        for col in res / 2..res - 1 {
            assert!(img.at(res / 2, col) >= img.at(res / 2, col + 1));
        }
    }

    #[test]
    fn rotation_about_view_axis_rotates_image() {
        let m = crate::mesh::normalize_pose(
            &Mesh::new(
                "l",
                vec![
                    [0.1, -0.7, -0.2],
                    [0.3, 0.6, -0.5],
                    [-0.2, 0.1, 0.8],
                    [0.5, 0.2, 0.1],
                ],
                vec![[0, 1, 2], [0, 1, 3], [1, 2, 3], [0, 2, 3]],
            )
            .unwrap(),
        )
        .unwrap();
        // +90° about +x (the view axis): image-right (+y) goes to image-up (+z)
        let r = axis_angle([1.0, 0.0, 0.0], PI / 2.0);
        let rotated = m.map_vertices(|v| rotate(&r, v));
        let res = 64;
        let a = render_depth(&m, &FRONT, res).unwrap();
        let b = render_depth(&rotated, &FRONT, res).unwrap();
        let mut mismatched = 0;
        let mut covered = 0;
        for row in 0..res {
            for col in 0..res {
                // a point at image (x, y) moves to (-y, x)
                let (r2, c2) = (res - 1 - col, row);
                let (va, vb) = (a.at(row, col), b.at(r2, c2));
                if va > 0.0 {
                    covered += 1;
                }
                if (va - vb).abs() > 1e-5 {
                    mismatched += 1;
                }
            }
        }
        assert!(covered > 200);
        assert!(mismatched * 100 <= covered, "{mismatched} of {covered}");
    }

    #[test]
    fn deterministic_and_within_range() {
        let m = uv_sphere(8, 12);
        for cam in camera_positions(8) {
            let a = render_depth(&m, &cam, 32).unwrap();
            let b = render_depth(&m, &cam, 32).unwrap();
            assert_eq!(a, b);
            assert!(!a.is_empty());
            assert!(a.depth.iter().all(|&d| (0.0..=1.0).contains(&d)));
        }
    }

    #[test]
    fn low_resolution_rejected() {
        let m = uv_sphere(4, 4);
        assert!(render_depth(&m, &FRONT, 8).is_err());
    }

    #[test]
    fn pgm_header_and_payload() {
        let mut img = DepthImage::blank(16, 16);
        img.depth[0] = 1.0;
        img.depth[1] = 0.5;
        let pgm = img.to_pgm();
        let header = b"P5\n16 16\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm[header.len()], 255);
        assert_eq!(pgm[header.len() + 1], 128);
        assert_eq!(pgm.len(), header.len() + 256);
    }
}
