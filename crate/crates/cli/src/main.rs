use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gift_core::engine::{
    build_index, gen_dataset, serve, EvalMode, FeatureSource, GenSpec, Hit, IndexBundle,
    IndexConfig, Manifest, Matcher, Query, SearchOptions,
};
use gift_core::eval::{pr_curve_csv, pr_curve_svg, EvalReport};
use gift_core::mesh::{load_mesh, MeshFormat};

#[derive(Parser)]
#[command(name = "gift", version, about = "Projection-based 3D shape search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render, describe and index every shape in a manifest.
    BuildIndex(BuildArgs),
    /// Search an index with a mesh file or a database shape id.
    Query(QueryArgs),
    /// Leave-one-out retrieval metrics over the indexed shapes.
    Evaluate(EvalArgs),
    /// Write a synthetic labelled corpus of primitives.
    GenDataset(GenArgs),
    /// Answer queries over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 256)]
    codebook_size: usize,
    #[arg(long, default_value_t = 2)]
    ma: usize,
    #[arg(long, default_value_t = 10)]
    k1: usize,
    #[arg(long, default_value_t = 4)]
    k2: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lloyd iteration cap for codebook training.
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Precomputed features for the first channel, instead of rendering.
    #[arg(long)]
    features_a: Option<PathBuf>,
    /// Precomputed features for the second channel.
    #[arg(long, requires = "features_a")]
    features_b: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, conflicts_with = "id", required_unless_present = "id")]
    mesh: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Exact view-set matching instead of the inverted file.
    #[arg(long)]
    exact: bool,
    /// Rank by first-stage similarity only.
    #[arg(long)]
    no_rerank: bool,
    /// Print results as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    /// Labels are taken from this manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// PR curve samples; defaults to the report path with a .csv extension.
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    /// Also plot the PR curves.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also evaluate the exact pipeline, first-stage and per-channel baselines.
    #[arg(long)]
    compare: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

fn load_bundle(dir: &Path) -> Result<IndexBundle> {
    IndexBundle::load(dir).with_context(|| format!("loading index {}", dir.display()))
}

fn build(args: BuildArgs) -> Result<()> {
    let cfg = IndexConfig {
        n_views: args.views,
        resolution: args.resolution,
        codebook_size: args.codebook_size,
        ma: args.ma,
        k1: args.k1,
        k2: args.k2,
        alpha: args.alpha,
        seed: args.seed,
        max_iters: args.max_iters,
        ..IndexConfig::default()
    };
    let manifest = Manifest::load(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let source = match args.features_a {
        Some(a) => FeatureSource::Files(std::iter::once(a).chain(args.features_b).collect()),
        None => FeatureSource::Render,
    };
    let start = Instant::now();
    let (bundle, report) = build_index(&manifest, &cfg, &source)?;
    bundle.save(&args.out)?;
    eprintln!(
        "indexed {} shapes ({} skipped) in {:.2?} -> {}",
        bundle.len(),
        report.skipped.len(),
        start.elapsed(),
        args.out.display()
    );
    Ok(())
}

fn print_hits(query: &str, hits: &[Hit], json: bool) -> Result<()> {
    if json {
        let value = serde_json::json!({ "query": query, "results": hits });
        println!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(());
    }
    println!("rank\tid\tlabel\tscore");
    for (r, h) in hits.iter().enumerate() {
        println!(
            "{}\t{}\t{}\t{:.6}",
            r + 1,
            h.id,
            h.label.as_deref().unwrap_or("-"),
            h.score
        );
    }
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let t0 = Instant::now();
    let bundle = load_bundle(&args.index)?;
    let loaded = t0.elapsed();
    let opts = SearchOptions {
        matcher: if args.exact {
            Matcher::Exact
        } else {
            Matcher::Approximate
        },
        rerank: !args.no_rerank,
        top_k: args.top_k,
    };
    let (name, hits, render, times) = match (&args.mesh, &args.id) {
        (Some(path), _) => {
            let format = MeshFormat::from_path(path).context("mesh must be .off or .obj")?;
            let t = Instant::now();
            let mesh = load_mesh(path, format)?;
            let views = gift_core::engine::describe_mesh(&mesh, &bundle.config)?;
            let prep = t.elapsed();
            let (hits, times) = bundle.search_timed(Query::Views(&views), &opts)?;
            (mesh.id, hits, Some(prep), times)
        }
        (None, Some(id)) => {
            let (hits, times) = bundle.search_timed(Query::Id(id), &opts)?;
            (id.clone(), hits, None, times)
        }
        (None, None) => bail!("one of --mesh or --id is required"),
    };
    print_hits(&name, &hits, args.json)?;
    let render = render.map_or(String::new(), |r| format!(", render+describe {r:.2?}"));
    eprintln!(
        "load {loaded:.2?}{render}, match {:.2?}, rerank {:.2?}",
        times.matching, times.rerank
    );
    Ok(())
}

fn evaluate(args: EvalArgs) -> Result<()> {
    let bundle = load_bundle(&args.index)?;
    let labels = Manifest::load(&args.manifest)?.labels();
    let mut modes = vec![("reranked", EvalMode::Reranked(Matcher::Approximate))];
    if args.compare {
        modes.push(("reranked_exact", EvalMode::Reranked(Matcher::Exact)));
        modes.push(("first_stage", EvalMode::FirstStage(Matcher::Approximate)));
        for c in 0..bundle.channels.len() {
            modes.push((
                ["channel_0_exact", "channel_1_exact"][c],
                EvalMode::Channel(Matcher::Exact, c),
            ));
        }
    }
    let mut reports: Vec<(&str, EvalReport)> = Vec::new();
    for (name, mode) in modes {
        let t = Instant::now();
        let r = bundle.evaluate(mode, Some(&labels))?;
        eprintln!(
            "{name:>16}: NN {:.4}  FT {:.4}  ST {:.4}  MAP {:.4}  AUC {:.4}  ({:.2?})",
            r.nn,
            r.ft,
            r.st,
            r.map,
            r.auc,
            t.elapsed()
        );
        reports.push((name, r));
    }
    let json: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|(n, r)| Ok((n.to_string(), serde_json::to_value(r)?)))
        .collect::<Result<_>>()?;
    std::fs::write(&args.report, serde_json::to_string_pretty(&json)?)
        .with_context(|| format!("writing {}", args.report.display()))?;
    let curves: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    let csv = args
        .pr_csv
        .unwrap_or_else(|| args.report.with_extension("csv"));
    std::fs::write(&csv, pr_curve_csv(&curves))
        .with_context(|| format!("writing {}", csv.display()))?;
    if let Some(svg) = args.svg {
        std::fs::write(&svg, pr_curve_svg(&curves))
            .with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::BuildIndex(a) => build(a),
        Command::Query(a) => query(a),
        Command::Evaluate(a) => evaluate(a),
        Command::GenDataset(a) => {
            let spec = GenSpec {
                classes: a.classes,
                instances: a.instances,
                noise: a.noise,
                seed: a.seed,
            };
            let manifest = gen_dataset(&spec, &a.out)?;
            eprintln!(
                "wrote {} shapes, manifest {}",
                a.classes * a.instances,
                manifest.display()
            );
            Ok(())
        }
        Command::Serve(a) => {
            let bundle = Arc::new(load_bundle(&a.index)?);
            let handle = serve(bundle, &a.listen, a.workers)?;
            match handle.addr() {
                Some(addr) => eprintln!("listening on http://{addr}"),
                None => eprintln!("listening on {}", a.listen),
            }
            handle.join();
            Ok(())
        }
    }
}
