//! Per-view descriptors.
//!
//! Two deterministic channels are computed from depth images: a pooled
//! depth grid and a histogram of depth-gradient orientations. Externally
//! computed features can be imported from the binary feature file format
//! instead. Every non-empty descriptor has unit Euclidean norm; a view that
//! renders nothing keeps a zero vector so view sets stay aligned.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::render::DepthImage;
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"GIFTFT1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct ViewDescriptor {
    values: Vec<f32>,
    sq_norm: f64,
}

impl ViewDescriptor {
    /// L2-normalizes `raw`. An all-zero input yields a flagged empty
    /// descriptor of the same dimension.
    pub fn normalize(raw: &[f64]) -> Self {
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values: Vec<f32> = if n > 0.0 && n.is_finite() {
            raw.iter().map(|&v| (v / n) as f32).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Self::from_stored(values)
    }

    /// Wraps already-normalized values without touching them.
    pub fn from_stored(values: Vec<f32>) -> Self {
        let sq_norm = values.iter().map(|&v| v as f64 * v as f64).sum();
        ViewDescriptor { values, sq_norm }
    }

    pub fn empty(dim: usize) -> Self {
        Self::from_stored(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// True for the zero vector of an all-background view.
    pub fn is_empty(&self) -> bool {
        self.sq_norm == 0.0
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm.sqrt()
    }

    /// Cosine similarity, 0 when either side is empty.
    ///
    /// Computed as `dot / sqrt(|a|² |b|²)` so a descriptor compared with
    /// itself gives exactly 1.
    #[inline]
    pub fn cosine(&self, other: &ViewDescriptor) -> f64 {
        cosine_raw(&self.values, self.sq_norm, &other.values, other.sq_norm)
    }

    /// Cosine clamped to `[0, 1]`: the view similarity used for matching.
    #[inline]
    pub fn similarity(&self, other: &ViewDescriptor) -> f64 {
        self.cosine(other).max(0.0)
    }
}

#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub(crate) fn cosine_raw(a: &[f32], a_sq: f64, b: &[f32], b_sq: f64) -> f64 {
    if a_sq == 0.0 || b_sq == 0.0 {
        return 0.0;
    }
    (dot_f32(a, b) / (a_sq * b_sq).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// Mean-pooled depth grid.
    Grid,
    /// Orientation histogram of depth gradients.
    Gradient,
    /// Loaded from a feature file.
    Imported,
}

/// A view set: one ordered descriptor list per channel, aligned by view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub shape_id: String,
    pub channels: Vec<Vec<ViewDescriptor>>,
}

impl ViewSet {
    pub fn n_views(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn channel(&self, c: usize) -> &[ViewDescriptor] {
        &self.channels[c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    /// Grid side for the pooled-depth channel.
    pub grid: usize,
    /// Cell grid side for the gradient channel.
    pub cells: usize,
    /// Orientation bins per cell.
    pub bins: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            grid: 8,
            cells: 4,
            bins: 8,
        }
    }
}

impl DescriptorConfig {
    pub fn grid_dim(&self) -> usize {
        self.grid * self.grid
    }

    pub fn gradient_dim(&self) -> usize {
        self.cells * self.cells * self.bins
    }

    pub fn validate(&self, resolution: usize) -> Result<()> {
        for g in [self.grid, self.cells] {
            if g == 0 || !resolution.is_multiple_of(g) {
                return Err(Error::BadGrid {
                    grid: g,
                    side: resolution,
                });
            }
        }
        if self.bins < 4 {
            return Err(Error::BadSpec(format!(
                "need at least 4 orientation bins, got {}",
                self.bins
            )));
        }
        Ok(())
    }
}

fn check_square(image: &DepthImage, grid: usize) -> Result<usize> {
    if grid == 0 || image.width != image.height || !image.width.is_multiple_of(grid) {
        return Err(Error::BadGrid {
            grid,
            side: image.width,
        });
    }
    Ok(image.width / grid)
}

/// Mean depth over each of `grid × grid` blocks, L2-normalized.
pub fn extract_grid_descriptor(image: &DepthImage, grid: usize) -> Result<ViewDescriptor> {
    let block = check_square(image, grid)?;
    let mut acc = vec![0.0f64; grid * grid];
    for row in 0..image.height {
        let base = (row / block) * grid;
        for col in 0..image.width {
            acc[base + col / block] += image.at(row, col) as f64;
        }
    }
    let area = (block * block) as f64;
    acc.iter_mut().for_each(|v| *v /= area);
    Ok(ViewDescriptor::normalize(&acc))
}

/// Per-cell histograms of gradient orientation weighted by magnitude.
///
/// Gradients are central differences with image y pointing up, taken only
/// where the pixel and its four neighbours are all foreground. Bin `b`
/// covers orientations `[2πb/o, 2π(b+1)/o)`, so a ramp increasing towards
/// +x lands in bin 0.
pub fn extract_gradient_descriptor(
    image: &DepthImage,
    cells: usize,
    bins: usize,
) -> Result<ViewDescriptor> {
    let cell = check_square(image, cells)?;
    if bins < 4 {
        return Err(Error::BadSpec(format!(
            "need at least 4 orientation bins, got {bins}"
        )));
    }
    let (w, h) = (image.width, image.height);
    let bin_width = 2.0 * PI / bins as f64;
    let mut hist = vec![0.0f64; cells * cells * bins];
    for row in 1..h.saturating_sub(1) {
        for col in 1..w.saturating_sub(1) {
            let center = image.at(row, col);
            let (l, r) = (image.at(row, col - 1), image.at(row, col + 1));
            let (u, d) = (image.at(row - 1, col), image.at(row + 1, col));
            if center == 0.0 || l == 0.0 || r == 0.0 || u == 0.0 || d == 0.0 {
                continue;
            }
            let gx = 0.5 * (r as f64 - l as f64);
            let gy = 0.5 * (u as f64 - d as f64);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((theta / bin_width) as usize).min(bins - 1);
            let c = (row / cell) * cells + col / cell;
            hist[c * bins + bin] += mag;
        }
    }
    Ok(ViewDescriptor::normalize(&hist))
}

/// Descriptors of every image for the two built-in channels, in the order
/// `[grid, gradient]`.
pub fn describe_views(
    images: &[DepthImage],
    cfg: &DescriptorConfig,
) -> Result<[Vec<ViewDescriptor>; 2]> {
    let pairs = crate::par::map(images, |img| -> Result<(ViewDescriptor, ViewDescriptor)> {
        Ok((
            extract_grid_descriptor(img, cfg.grid)?,
            extract_gradient_descriptor(img, cfg.cells, cfg.bins)?,
        ))
    });
    let mut grid = Vec::with_capacity(images.len());
    let mut grad = Vec::with_capacity(images.len());
    for p in pairs {
        let (a, b) = p?;
        grid.push(a);
        grad.push(b);
    }
    Ok([grid, grad])
}

/// One shape's rows in a feature file: `n_views` vectors of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub shape_id: String,
    pub views: Vec<Vec<f32>>,
}

/// Encodes records in the little-endian feature file layout.
pub fn encode_feature_file<'a, I>(records: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, &'a [ViewDescriptor])>,
{
    let records: Vec<_> = records.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (id, views) in records {
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::Format(format!("shape id too long: {id}")))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        let dim = views.first().map_or(0, ViewDescriptor::dim);
        out.extend_from_slice(&(views.len() as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in views {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            for x in v.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Decodes a feature file without renormalizing.
pub fn decode_feature_file(buf: &[u8]) -> Result<Vec<FeatureRecord>> {
    let mut r = Reader::new(buf);
    if r.take(8)? != FEATURE_MAGIC {
        return Err(Error::Format("bad feature file magic".into()));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let shape_id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("shape id is not UTF-8".into()))?
            .to_owned();
        let n_views = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let views = (0..n_views).map(|_| r.f32s(dim)).collect::<Result<_>>()?;
        records.push(FeatureRecord { shape_id, views });
    }
    r.finish()?;
    Ok(records)
}

pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureRecord>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&buf)
}

pub fn write_feature_file<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [ViewDescriptor])>,
{
    let bytes = encode_feature_file(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Converts decoded records of one channel into unit-norm descriptors,
/// checking that every shape has the same view count and dimension.
pub fn records_to_views(
    records: Vec<FeatureRecord>,
    renormalize: bool,
) -> Result<Vec<(String, Vec<ViewDescriptor>)>> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let n_views = first.views.len();
    let dim = first.views.first().map_or(0, Vec::len);
    if n_views == 0 || dim == 0 {
        return Err(Error::Format(format!(
            "shape {} has no feature values",
            first.shape_id
        )));
    }
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .map(|rec| {
            if !seen.insert(rec.shape_id.clone()) {
                return Err(Error::Format(format!(
                    "duplicate shape id {}",
                    rec.shape_id
                )));
            }
            if rec.views.len() != n_views {
                return Err(Error::DimensionMismatch {
                    expected: n_views,
                    got: rec.views.len(),
                });
            }
            let views = rec
                .views
                .into_iter()
                .map(|v| {
                    if v.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: v.len(),
                        });
                    }
                    Ok(if renormalize {
                        ViewDescriptor::normalize(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
                    } else {
                        ViewDescriptor::from_stored(v)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((rec.shape_id, views))
        })
        .collect()
}

/// Imports one feature file per channel and joins them by shape id.
///
/// Every shape must appear in every file, and all view counts must agree
/// across channels. Vectors are renormalized to unit length.
pub fn import_features(paths: &[&Path]) -> Result<BTreeMap<String, ViewSet>> {
    let mut out: BTreeMap<String, ViewSet> = BTreeMap::new();
    let mut n_views = None;
    for (c, path) in paths.iter().enumerate() {
        let views = records_to_views(read_feature_file(path)?, true)?;
        if c > 0 && views.len() != out.len() {
            return Err(Error::ChannelMismatch(format!(
                "{} lists {} shapes, earlier channels list {}",
                path.display(),
                views.len(),
                out.len()
            )));
        }
        for (id, v) in views {
            let expected = *n_views.get_or_insert(v.len());
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: v.len(),
                });
            }
            if c == 0 {
                out.insert(
                    id.clone(),
                    ViewSet {
                        shape_id: id,
                        channels: vec![v],
                    },
                );
            } else {
                let set = out.get_mut(&id).ok_or_else(|| {
                    Error::ChannelMismatch(format!("shape {id} missing from earlier channels"))
                })?;
                set.channels.push(v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(side: usize, mut f: impl FnMut(usize, usize) -> f32) -> DepthImage {
        let mut img = DepthImage::blank(side, side);
        for r in 0..side {
            for c in 0..side {
                img.depth[r * side + c] = f(r, c);
            }
        }
        img
    }

    #[test]
    fn constant_image_grid_is_uniform() {
        let d = extract_grid_descriptor(&image(16, |_, _| 0.5), 4).unwrap();
        assert_eq!(d.dim(), 16);
        for &v in d.values() {
            assert!((v - 0.25).abs() < 1e-7);
        }
        assert!((d.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn background_view_is_flagged() {
        let img = DepthImage::blank(16, 16);
        let a = extract_grid_descriptor(&img, 4).unwrap();
        let b = extract_gradient_descriptor(&img, 4, 8).unwrap();
        assert!(a.is_empty() && b.is_empty());
        assert_eq!(a.dim(), 16);
        assert_eq!(b.dim(), 128);
        assert_eq!(a.cosine(&a), 0.0);
    }

    #[test]
    fn half_lit_image_grid() {
        // top half lit: cells (0,0),(0,1) carry c, bottom cells are dark
        let d =
            extract_grid_descriptor(&image(16, |r, _| if r < 8 { 0.7 } else { 0.0 }), 2).unwrap();
        let c = std::f32::consts::FRAC_1_SQRT_2;
        let want = [c, c, 0.0, 0.0];
        for (a, b) in d.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn bad_grid_rejected() {
        let img = DepthImage::blank(16, 16);
        assert!(matches!(
            extract_grid_descriptor(&img, 3),
            Err(Error::BadGrid { .. })
        ));
        assert!(matches!(
            extract_gradient_descriptor(&img, 5, 8),
            Err(Error::BadGrid { .. })
        ));
        assert!(extract_gradient_descriptor(&img, 4, 3).is_err());
    }

    #[test]
    fn constant_image_has_no_gradient() {
        let d = extract_gradient_descriptor(&image(16, |_, _| 0.4), 4, 8).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn ramp_along_x_lands_in_bin_zero() {
        let bins = 8;
        let d =
            extract_gradient_descriptor(&image(16, |_, c| 0.1 + 0.05 * c as f32), 2, bins).unwrap();
        let mut mass = vec![0.0; bins];
        for (i, &v) in d.values().iter().enumerate() {
            mass[i % bins] += v as f64;
        }
        assert!(mass[0] > 0.0);
        assert!(mass[1..].iter().all(|&m| m == 0.0));
    }

    /// Straightforward per-pixel reimplementation used as an oracle.
    fn gradient_oracle(img: &DepthImage, cells: usize, bins: usize) -> Vec<f64> {
        let side = img.width;
        let cs = side / cells;
        let mut out = vec![0.0; cells * cells * bins];
        for cy in 0..cells {
            for cx in 0..cells {
                for r in cy * cs..(cy + 1) * cs {
                    for c in cx * cs..(cx + 1) * cs {
                        if r == 0 || c == 0 || r == side - 1 || c == side - 1 {
                            continue;
                        }
                        let px = |rr: usize, cc: usize| img.depth[rr * side + cc] as f64;
                        let nb = [
                            px(r, c),
                            px(r, c - 1),
                            px(r, c + 1),
                            px(r - 1, c),
                            px(r + 1, c),
                        ];
                        if nb.contains(&0.0) {
                            continue;
                        }
                        let gx = (nb[2] - nb[1]) / 2.0;
                        let gy = (nb[3] - nb[4]) / 2.0;
                        let m = (gx * gx + gy * gy).sqrt();
                        if m == 0.0 {
                            continue;
                        }
                        let mut a = gy.atan2(gx);
                        if a < 0.0 {
                            a += 2.0 * PI;
                        }
                        let mut b = (a / (2.0 * PI) * bins as f64).floor() as usize;
                        if b >= bins {
                            b = bins - 1;
                        }
                        out[(cy * cells + cx) * bins + b] += m;
                    }
                }
            }
        }
        let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.iter().map(|v| v / n).collect()
    }

    #[test]
    fn gradient_matches_oracle_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let img = image(32, |_, _| {
                if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(0.05f32..1.0)
                }
            });
            let got = extract_gradient_descriptor(&img, 4, 8).unwrap();
            let want = gradient_oracle(&img, 4, 8);
            for (g, w) in got.values().iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-6, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn self_cosine_is_exactly_one() {
        let d = ViewDescriptor::normalize(&[0.3, 0.1, 0.7, 0.2]);
        assert_eq!(d.cosine(&d), 1.0);
        let e = ViewDescriptor::normalize(&[-0.3, -0.1, -0.7, -0.2]);
        assert_eq!(d.similarity(&e), 0.0);
    }

    fn desc(vals: &[f32]) -> ViewDescriptor {
        ViewDescriptor::normalize(&vals.iter().map(|&v| v as f64).collect::<Vec<_>>())
    }

    #[test]
    fn feature_file_round_trip_and_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shapes: Vec<(String, Vec<ViewDescriptor>)> = (0..2)
            .map(|s| {
                let views = (0..4)
                    .map(|_| desc(&(0..8).map(|_| rng.gen::<f32>()).collect::<Vec<_>>()))
                    .collect();
                (format!("shape{s}"), views)
            })
            .collect();
        write_feature_file(
            &path,
            shapes.iter().map(|(id, v)| (id.as_str(), v.as_slice())),
        )
        .unwrap();
        let sets = import_features(&[&path]).unwrap();
        assert_eq!(sets.len(), 2);
        for (id, views) in &shapes {
            let set = &sets[id];
            assert_eq!(set.n_views(), 4);
            assert_eq!(set.channels.len(), 1);
            for (a, b) in set.channel(0).iter().zip(views) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn import_renormalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let raw = ViewDescriptor::from_stored(vec![2.0, 0.0, 0.0, 0.0]);
        write_feature_file(&path, [("s", std::slice::from_ref(&raw))]).unwrap();
        let sets = import_features(&[&path]).unwrap();
        let d = &sets["s"].channels[0][0];
        assert_eq!(d.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ragged_view_counts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bin");
        let a = vec![desc(&[1.0, 0.0]); 4];
        let b = vec![desc(&[1.0, 0.0]); 3];
        write_feature_file(&path, [("a", a.as_slice()), ("b", b.as_slice())]).unwrap();
        assert!(matches!(
            import_features(&[&path]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn malformed_feature_files() {
        assert!(matches!(
            decode_feature_file(b"NOTMAGIC\0\0\0\0"),
            Err(Error::Format(_))
        ));
        let good = encode_feature_file([("x", [desc(&[1.0, 2.0])].as_slice())]).unwrap();
        assert!(matches!(
            decode_feature_file(&good[..good.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_feature_file(&long), Err(Error::Format(_))));
        assert_eq!(decode_feature_file(&good).unwrap()[0].views[0].len(), 2);
    }

    #[test]
    fn channels_join_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        let va = vec![desc(&[1.0, 0.0]); 2];
        let vb = vec![desc(&[0.0, 1.0, 1.0]); 2];
        write_feature_file(&pa, [("x", va.as_slice()), ("y", va.as_slice())]).unwrap();
        write_feature_file(&pb, [("y", vb.as_slice()), ("x", vb.as_slice())]).unwrap();
        let sets = import_features(&[&pa, &pb]).unwrap();
        assert_eq!(sets["x"].channels[1][0].dim(), 3);

        let pc = dir.path().join("c.bin");
        write_feature_file(&pc, [("x", vb.as_slice()), ("z", vb.as_slice())]).unwrap();
        assert!(matches!(
            import_features(&[&pa, &pc]),
            Err(Error::ChannelMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn descriptors_are_unit_or_flagged(seed in any::<u64>(), fill in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = image(32, |_, _| if rng.gen_bool(fill) { rng.gen_range(0.05f32..1.0) } else { 0.0 });
            let cfg = DescriptorConfig::default();
            let [a, b] = describe_views(std::slice::from_ref(&img), &cfg).unwrap();
            for d in [&a[0], &b[0]] {
                prop_assert!(d.is_empty() || (d.norm() - 1.0).abs() < 1e-6);
            }
            prop_assert_eq!(a[0].dim(), 64);
            prop_assert_eq!(b[0].dim(), 128);
            let again = extract_grid_descriptor(&img, cfg.grid).unwrap();
            prop_assert_eq!(&again, &a[0]);
        }
    }
}
