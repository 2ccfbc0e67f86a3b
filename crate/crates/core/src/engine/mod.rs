//! End-to-end search engine: index building, querying, evaluation,
//! persistence, synthetic datasets and the HTTP query service.

mod dataset;
mod persist;
mod pipeline;
mod serve;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::codebook::train_codebook;
use crate::eval::{self, EvalReport};
use crate::features::{
    describe_views, import_features, ChannelKind, DescriptorConfig, ViewDescriptor, ViewSet,
};
use crate::matching::{build_fif, exact_scores, FirstInvertedFile};
use crate::mesh::{load_mesh, normalize_pose, Mesh, MeshFormat};
use crate::render::{camera_positions, render_views};
use crate::{Error, Result};

pub use dataset::{gen_dataset, generate_shape, GenSpec, PRIMITIVES};
pub use persist::FORMAT_VERSION;
pub use pipeline::{RerankContext, RerankParams};
pub use serve::{serve, QueryService, ServerHandle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub n_views: usize,
    pub resolution: usize,
    pub descriptors: DescriptorConfig,
    pub codebook_size: usize,
    pub max_iters: usize,
    pub ma: usize,
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            n_views: 64,
            resolution: 64,
            descriptors: DescriptorConfig::default(),
            codebook_size: 256,
            max_iters: crate::codebook::DEFAULT_MAX_ITERS,
            ma: 2,
            k1: 10,
            k2: 4,
            alpha: 0.5,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("views", self.n_views),
            ("codebook size", self.codebook_size),
            ("max iterations", self.max_iters),
            ("multiple assignment", self.ma),
            ("k1", self.k1),
            ("k2", self.k2),
        ];
        if let Some((name, _)) = counts.iter().find(|c| c.1 == 0) {
            return Err(Error::BadSpec(format!("{name} must be at least 1")));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::BadSpec(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.ma > self.codebook_size {
            return Err(Error::BadSpec(format!(
                "multiple assignment {} exceeds codebook size {}",
                self.ma, self.codebook_size
            )));
        }
        if self.resolution < crate::render::MIN_RESOLUTION {
            return Err(Error::BadSpec(format!(
                "resolution {} too small",
                self.resolution
            )));
        }
        self.descriptors.validate(self.resolution)
    }

    pub fn rerank_params(&self) -> RerankParams {
        RerankParams {
            k1: self.k1,
            k2: self.k2,
            alpha: self.alpha,
        }
    }
}

/// Renders and describes a mesh with the built-in channels.
pub fn describe_mesh(mesh: &Mesh, cfg: &IndexConfig) -> Result<ViewSet> {
    let normalized = normalize_pose(mesh)?;
    let images = render_views(&normalized, &camera_positions(cfg.n_views), cfg.resolution)?;
    let [grid, gradient] = describe_views(&images, &cfg.descriptors)?;
    Ok(ViewSet {
        shape_id: mesh.id.clone(),
        channels: vec![grid, gradient],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<String>,
}

impl ManifestEntry {
    /// Shape id: the file stem.
    pub fn id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// `path<TAB>label` rows; relative paths resolve against the manifest's
/// directory. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let path = parts.next().unwrap_or("").trim();
            if path.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "missing path".into(),
                });
            }
            let label = parts
                .next()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned);
            let p = Path::new(path);
            entries.push(ManifestEntry {
                path: if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                },
                label,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Labels keyed by shape id.
    pub fn labels(&self) -> HashMap<String, String> {
        self.entries
            .iter()
            .filter_map(|e| e.label.clone().map(|l| (e.id(), l)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub id: String,
    pub label: Option<String>,
}

/// One descriptor channel of the index.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelIndex {
    pub kind: ChannelKind,
    pub fif: FirstInvertedFile,
    /// Database view descriptors, by shape ordinal.
    pub views: Vec<Vec<ViewDescriptor>>,
}

#[derive(Debug)]
pub struct IndexBundle {
    pub config: IndexConfig,
    pub shapes: Vec<ShapeEntry>,
    pub channels: Vec<ChannelIndex>,
    pub rerank: RerankContext,
    by_id: HashMap<String, usize>,
    exact: OnceLock<RerankContext>,
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    /// `(manifest path, reason)` for every skipped shape.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Where the shape features come from.
#[derive(Debug, Clone, Default)]
pub enum FeatureSource {
    /// Render every mesh and compute the built-in channels.
    #[default]
    Render,
    /// One feature file per channel, joined to the manifest by shape id.
    Files(Vec<PathBuf>),
}

/// First-stage scorer for queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matcher {
    /// Inverted-file approximation.
    #[default]
    Approximate,
    /// All-pairs view comparison.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub matcher: Matcher,
    pub rerank: bool,
    pub top_k: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            matcher: Matcher::Approximate,
            rerank: true,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub ordinal: usize,
    pub id: String,
    pub label: Option<String>,
    pub score: f64,
}

/// Wall-clock time of the query phases.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    /// First-stage view-set matching.
    pub matching: Duration,
    /// Activation, augmentation and second inverted file lookup.
    pub rerank: Duration,
}

/// What to search with.
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    /// A shape already in the index.
    Id(&'a str),
    /// An external view set.
    Views(&'a ViewSet),
}

pub fn build_index(
    manifest: &Manifest,
    cfg: &IndexConfig,
    source: &FeatureSource,
) -> Result<(IndexBundle, BuildReport)> {
    cfg.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut report = BuildReport::default();
    let (kinds, described): (Vec<ChannelKind>, Vec<Result<ViewSet>>) = match source {
        FeatureSource::Render => (
            vec![ChannelKind::Grid, ChannelKind::Gradient],
            crate::par::map(&manifest.entries, |e| {
                let format = MeshFormat::from_path(&e.path).ok_or_else(|| {
                    Error::BadSpec(format!("unknown mesh extension: {}", e.path.display()))
                })?;
                describe_mesh(&load_mesh(&e.path, format)?, cfg)
            }),
        ),
        FeatureSource::Files(paths) => {
            if paths.is_empty() || paths.len() > 2 {
                return Err(Error::ChannelMismatch(format!(
                    "expected 1 or 2 feature files, got {}",
                    paths.len()
                )));
            }
            let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
            let mut imported = import_features(&refs)?;
            (
                vec![ChannelKind::Imported; paths.len()],
                manifest
                    .entries
                    .iter()
                    .map(|e| {
                        imported
                            .remove(&e.id())
                            .ok_or_else(|| Error::UnknownShape(e.id()))
                    })
                    .collect(),
            )
        }
    };

    let mut shapes = Vec::new();
    let mut sets = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (entry, set) in manifest.entries.iter().zip(described) {
        let outcome = set.and_then(|s| {
            if seen.insert(entry.id()) {
                Ok(s)
            } else {
                Err(Error::BadSpec(format!("duplicate shape id {}", entry.id())))
            }
        });
        match outcome {
            Ok(s) => {
                shapes.push(ShapeEntry {
                    id: entry.id(),
                    label: entry.label.clone(),
                });
                sets.push(s);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.path.display());
                report.skipped.push((entry.path.clone(), e.to_string()));
            }
        }
    }
    if sets.is_empty() {
        return Err(Error::AllShapesFailed);
    }
    let bundle = assemble(cfg.clone(), shapes, kinds, sets)?;
    Ok((bundle, report))
}

fn assemble(
    cfg: IndexConfig,
    shapes: Vec<ShapeEntry>,
    kinds: Vec<ChannelKind>,
    sets: Vec<ViewSet>,
) -> Result<IndexBundle> {
    let n_views = sets[0].n_views();
    if let Some(bad) = sets
        .iter()
        .find(|s| s.n_views() != n_views || s.channels.len() != kinds.len())
    {
        return Err(Error::ChannelMismatch(format!(
            "view set of {} does not match the index layout",
            bad.shape_id
        )));
    }
    let mut channels = Vec::with_capacity(kinds.len());
    for (c, kind) in kinds.into_iter().enumerate() {
        let views: Vec<Vec<ViewDescriptor>> = sets.iter().map(|s| s.channels[c].clone()).collect();
        let dim = views[0][0].dim();
        let data: Vec<f32> = views
            .iter()
            .flatten()
            .filter(|v| !v.is_empty())
            .flat_map(|v| v.values().iter().copied())
            .collect();
        let codebook = train_codebook(
            &data,
            dim,
            cfg.codebook_size,
            cfg.seed.wrapping_add(c as u64),
            cfg.max_iters,
        )?;
        let refs: Vec<&[ViewDescriptor]> = views.iter().map(Vec::as_slice).collect();
        let fif = build_fif(&refs, codebook)?;
        channels.push(ChannelIndex { kind, fif, views });
    }
    let n = shapes.len();
    let ma = cfg.ma;
    let rerank = RerankContext::build(n, channels.len(), cfg.rerank_params(), |q| {
        channels
            .iter()
            .map(|ch| ch.fif.query(&ch.views[q], ma))
            .collect()
    })?;
    Ok(IndexBundle::from_parts(cfg, shapes, channels, rerank))
}

impl IndexBundle {
    pub(crate) fn from_parts(
        config: IndexConfig,
        shapes: Vec<ShapeEntry>,
        channels: Vec<ChannelIndex>,
        rerank: RerankContext,
    ) -> Self {
        let by_id = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        IndexBundle {
            config,
            shapes,
            channels,
            rerank,
            by_id,
            exact: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.shapes.iter().map(|s| s.id.clone()).collect()
    }

    /// Whether queries can be rendered from meshes (built-in channels).
    pub fn renders_meshes(&self) -> bool {
        self.channels
            .iter()
            .all(|c| c.kind != ChannelKind::Imported)
    }

    /// Stored view set of a database shape.
    pub fn view_set(&self, ordinal: usize) -> ViewSet {
        ViewSet {
            shape_id: self.shapes[ordinal].id.clone(),
            channels: self
                .channels
                .iter()
                .map(|c| c.views[ordinal].clone())
                .collect(),
        }
    }

    fn check_views(&self, views: &ViewSet) -> Result<()> {
        if views.channels.len() != self.channels.len() {
            return Err(Error::ChannelMismatch(format!(
                "query has {} channels, index has {}",
                views.channels.len(),
                self.channels.len()
            )));
        }
        for (ch, qv) in self.channels.iter().zip(&views.channels) {
            if let Some(v) = qv.iter().find(|v| v.dim() != ch.fif.dim()) {
                return Err(Error::ChannelMismatch(format!(
                    "descriptor dimension {} where the index expects {}",
                    v.dim(),
                    ch.fif.dim()
                )));
            }
        }
        Ok(())
    }

    /// First-stage scores of a view set against the database, per channel.
    pub fn first_stage(&self, views: &ViewSet, matcher: Matcher) -> Result<Vec<Vec<f64>>> {
        self.check_views(views)?;
        self.channels
            .iter()
            .zip(&views.channels)
            .map(|(ch, qv)| match matcher {
                Matcher::Approximate => ch.fif.query(qv, self.config.ma),
                Matcher::Exact => {
                    let db: Vec<&[ViewDescriptor]> = ch.views.iter().map(Vec::as_slice).collect();
                    exact_scores(qv, &db)
                }
            })
            .collect()
    }

    /// Re-ranking context built on exact first-stage scores, computed on
    /// first use.
    pub fn exact_context(&self) -> Result<&RerankContext> {
        if let Some(ctx) = self.exact.get() {
            return Ok(ctx);
        }
        let ctx = RerankContext::build(
            self.len(),
            self.channels.len(),
            self.config.rerank_params(),
            |q| self.first_stage(&self.view_set(q), Matcher::Exact),
        )?;
        Ok(self.exact.get_or_init(|| ctx))
    }

    fn context(&self, matcher: Matcher) -> Result<&RerankContext> {
        match matcher {
            Matcher::Approximate => Ok(&self.rerank),
            Matcher::Exact => self.exact_context(),
        }
    }

    /// Scores against every database shape.
    pub fn score(&self, query: Query<'_>, matcher: Matcher, rerank: bool) -> Result<Vec<f64>> {
        self.score_timed(query, matcher, rerank).map(|(s, _)| s)
    }

    /// Like [`IndexBundle::score`], also reporting time spent per phase.
    pub fn score_timed(
        &self,
        query: Query<'_>,
        matcher: Matcher,
        rerank: bool,
    ) -> Result<(Vec<f64>, PhaseTimes)> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut times = PhaseTimes::default();
        let views;
        let v = match query {
            Query::Id(id) => {
                let q = self
                    .ordinal(id)
                    .ok_or_else(|| Error::UnknownShape(id.to_owned()))?;
                if rerank {
                    let t = Instant::now();
                    let scores = self.context(matcher)?.database_scores(q);
                    times.rerank = t.elapsed();
                    return Ok((scores, times));
                }
                views = self.view_set(q);
                &views
            }
            Query::Views(v) => v,
        };
        let t = Instant::now();
        let first = self.first_stage(v, matcher)?;
        times.matching = t.elapsed();
        if !rerank {
            return Ok((mean_channels(&first), times));
        }
        let t = Instant::now();
        let scores = self
            .context(matcher)?
            .query_scores(&first, self.config.rerank_params())?;
        times.rerank = t.elapsed();
        Ok((scores, times))
    }

    /// Top `opts.top_k` shapes, score descending, ties by id. A database
    /// query ranks itself first among equal scores.
    pub fn search(&self, query: Query<'_>, opts: &SearchOptions) -> Result<Vec<Hit>> {
        self.search_timed(query, opts).map(|(h, _)| h)
    }

    pub fn search_timed(
        &self,
        query: Query<'_>,
        opts: &SearchOptions,
    ) -> Result<(Vec<Hit>, PhaseTimes)> {
        let (scores, times) = self.score_timed(query, opts.matcher, opts.rerank)?;
        let ids = self.ids();
        let mut order = eval::rank_by_scores(&scores, &ids, None);
        if let Query::Id(id) = query {
            let q = self.ordinal(id).expect("checked in score");
            let pos = order
                .iter()
                .position(|&i| i == q)
                .expect("every ordinal is ranked");
            if scores[q] == scores[order[0]] {
                order.remove(pos);
                order.insert(0, q);
            }
        }
        let hits = order
            .into_iter()
            .take(opts.top_k)
            .map(|i| Hit {
                ordinal: i,
                id: self.shapes[i].id.clone(),
                label: self.shapes[i].label.clone(),
                score: scores[i],
            })
            .collect();
        Ok((hits, times))
    }

    /// Renders a mesh and searches with it.
    pub fn search_mesh(&self, mesh: &Mesh, opts: &SearchOptions) -> Result<Vec<Hit>> {
        if !self.renders_meshes() {
            return Err(Error::ChannelMismatch(
                "index was built from imported features; query by id or features".into(),
            ));
        }
        let views = describe_mesh(mesh, &self.config)?;
        self.search(Query::Views(&views), opts)
    }

    fn labels(&self, overrides: Option<&HashMap<String, String>>) -> Result<Vec<String>> {
        self.shapes
            .iter()
            .map(|s| {
                overrides
                    .and_then(|m| m.get(&s.id).cloned())
                    .or_else(|| s.label.clone())
                    .ok_or_else(|| Error::BadSpec(format!("shape {} has no class label", s.id)))
            })
            .collect()
    }

    /// Leave-one-out retrieval metrics, every database shape taken in turn
    /// as the query.
    pub fn evaluate(
        &self,
        mode: EvalMode,
        labels: Option<&HashMap<String, String>>,
    ) -> Result<EvalReport> {
        let labels = self.labels(labels)?;
        let ids = self.ids();
        match mode {
            EvalMode::Reranked(m) => {
                let ctx = self.context(m)?;
                eval::evaluate(&ids, &labels, |q| Ok(ctx.database_scores(q)))
            }
            EvalMode::FirstStage(m) => eval::evaluate(&ids, &labels, |q| {
                Ok(mean_channels(&self.first_stage(&self.view_set(q), m)?))
            }),
            EvalMode::Channel(m, c) => {
                if c >= self.channels.len() {
                    return Err(Error::ChannelMismatch(format!("no channel {c}")));
                }
                eval::evaluate(&ids, &labels, |q| {
                    Ok(self.first_stage(&self.view_set(q), m)?.swap_remove(c))
                })
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        persist::save(self, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        persist::load(dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Full pipeline.
    Reranked(Matcher),
    /// Channel-averaged first-stage similarity, no re-ranking.
    FirstStage(Matcher),
    /// A single channel's first-stage similarity.
    Channel(Matcher, usize),
}

fn mean_channels(per_channel: &[Vec<f64>]) -> Vec<f64> {
    let n = per_channel.len() as f64;
    let mut out = per_channel[0].clone();
    for c in &per_channel[1..] {
        for (o, v) in out.iter_mut().zip(c) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}
