//! Triangle meshes: ASCII OFF/OBJ readers, an OFF writer, and translation
//! plus scale normalization.
//!
//! Rotation is deliberately left alone; the multi-view descriptors are
//! expected to absorb it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    /// Guesses the format from a file extension (case-insensitive).
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }

    pub fn parse_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub id: String,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    /// Builds a mesh, checking that every index is in range and that there
    /// is at least one triangle.
    pub fn new(
        id: impl Into<String>,
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = vertices.len();
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i as usize >= n))
        {
            return Err(Error::Parse {
                line: 0,
                msg: format!("triangle {t:?} references a vertex past {n}"),
            });
        }
        Ok(Mesh {
            id: id.into(),
            vertices,
            triangles,
        })
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Mesh {
        Mesh {
            id: self.id.clone(),
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Area-weighted mean of triangle centroids, with the total area.
    pub fn surface_centroid(&self) -> (Vec3, f64) {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let area = 0.5 * norm(cross(sub(b, a), sub(c, a)));
            for k in 0..3 {
                acc[k] += area * (a[k] + b[k] + c[k]) / 3.0;
            }
            total += area;
        }
        if total > 0.0 {
            (scale(acc, 1.0 / total), total)
        } else {
            ([0.0; 3], 0.0)
        }
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices.iter().map(|&v| norm(v)).fold(0.0, f64::max)
    }

    /// Serializes to ASCII OFF with fixed-precision coordinates.
    pub fn to_off_string(&self) -> String {
        let mut s = String::with_capacity(32 * (self.vertices.len() + self.triangles.len()));
        s.push_str("OFF\n");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}

/// Reads a mesh from disk. The shape id is the file stem.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_mesh(&text, format, id)
}

pub fn parse_mesh(text: &str, format: MeshFormat, id: impl Into<String>) -> Result<Mesh> {
    let (vertices, triangles) = match format {
        MeshFormat::Off => parse_off(text)?,
        MeshFormat::Obj => parse_obj(text)?,
    };
    Mesh::new(id, vertices, triangles)
}

type Soup = (Vec<Vec3>, Vec<[u32; 3]>);

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn fan(poly: &[u32], out: &mut Vec<[u32; 3]>) {
    for k in 1..poly.len().saturating_sub(1) {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

fn parse_off(text: &str) -> Result<Soup> {
    // Tokens with their line numbers; '#' starts a comment.
    let mut tokens = text.lines().enumerate().flat_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("");
        line.split_whitespace().map(move |t| (i + 1, t))
    });

    let (line, head) = tokens.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if !head.ends_with("OFF") {
        return Err(parse_err(
            line,
            format!("expected OFF header, found {head:?}"),
        ));
    }
    if head != "OFF" {
        return Err(parse_err(line, format!("unsupported OFF variant {head:?}")));
    }

    let mut next_num = |what: &str| -> Result<(usize, &str)> {
        tokens
            .next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of file reading {what}")))
    };
    let mut read_count = |what: &str| -> Result<usize> {
        let (line, tok) = next_num(what)?;
        tok.parse()
            .map_err(|_| parse_err(line, format!("bad {what}: {tok:?}")))
    };
    let nv = read_count("vertex count")?;
    let nf = read_count("face count")?;
    let _ne = read_count("edge count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut v = [0.0; 3];
        for c in &mut v {
            let (line, tok) = next_num("vertex coordinate")?;
            *c = tok
                .parse()
                .map_err(|_| parse_err(line, format!("bad coordinate {tok:?}")))?;
        }
        vertices.push(v);
    }

    // Faces may carry trailing color values, so they are read line by line.
    let mut triangles = Vec::with_capacity(nf);
    let mut remaining: Vec<(usize, &str)> = tokens.collect();
    remaining.reverse();
    for _ in 0..nf {
        let (line, tok) = remaining
            .pop()
            .ok_or_else(|| parse_err(0, "unexpected end of file reading faces"))?;
        let n: usize = tok
            .parse()
            .map_err(|_| parse_err(line, format!("bad face size {tok:?}")))?;
        let mut poly = Vec::with_capacity(n);
        for _ in 0..n {
            let (l, t) = remaining
                .pop()
                .ok_or_else(|| parse_err(line, "truncated face"))?;
            let idx: u32 = t
                .parse()
                .map_err(|_| parse_err(l, format!("bad vertex index {t:?}")))?;
            if idx as usize >= nv {
                return Err(parse_err(l, format!("vertex index {idx} out of range")));
            }
            poly.push(idx);
        }
        // skip optional per-face color on the same line
        while remaining.last().is_some_and(|&(l, _)| l == line) {
            remaining.pop();
        }
        if n < 3 {
            return Err(parse_err(line, format!("face with {n} vertices")));
        }
        fan(&poly, &mut triangles);
    }
    Ok((vertices, triangles))
}

fn parse_obj(text: &str) -> Result<Soup> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut poly = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in &mut v {
                    let tok = parts.next().ok_or_else(|| {
                        parse_err(line_no, "vertex with fewer than 3 coordinates")
                    })?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(v);
            }
            Some("f") => {
                poly.clear();
                for tok in parts {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad face index {tok:?}")))?;
                    let n = vertices.len() as i64;
                    let resolved = match idx {
                        0 => return Err(parse_err(line_no, "face index 0")),
                        i if i > 0 => i - 1,
                        i => n + i,
                    };
                    if resolved < 0 || resolved >= n {
                        return Err(parse_err(line_no, format!("face index {idx} out of range")));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(parse_err(
                        line_no,
                        format!("face with {} vertices", poly.len()),
                    ));
                }
                fan(&poly, &mut triangles);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

/// Moves the surface centroid to the origin and scales so the farthest
/// vertex lies on the unit sphere.
///
/// Meshes with zero surface area fall back to the vertex mean; only a mesh
/// whose vertices all coincide is rejected.
pub fn normalize_pose(mesh: &Mesh) -> Result<Mesh> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (mut center, area) = mesh.surface_centroid();
    if area <= 0.0 {
        let mut acc = [0.0; 3];
        for v in &mesh.vertices {
            acc = add(acc, *v);
        }
        center = scale(acc, 1.0 / mesh.vertices.len() as f64);
    }
    let radius = mesh
        .vertices
        .iter()
        .map(|&v| norm(sub(v, center)))
        .fold(0.0, f64::max);
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::DegenerateMesh);
    }
    let inv = 1.0 / radius;
    Ok(mesh.map_vertices(|v| scale(sub(v, center), inv)))
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalized(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

/// Row-major 3x3 rotation applied as `m * v`.
pub type Mat3 = [[f64; 3]; 3];

pub fn rotate(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Rotation by `angle` radians about a unit `axis` (Rodrigues).
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let [x, y, z] = normalized(axis);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}
