//! Command-line entry point wiring all stages: anchor normalization, index
//! build, query, re-scoring, filtering, reporting, the end-to-end run, and
//! the synthetic fixture generator.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure. Logs
//! are line-oriented `key=value` records on stderr; manifests and statistics
//! go to files only.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anchorsieve::config::{self, Preset, RunConfig, ThresholdPopulation};
use anchorsieve::embed;
use anchorsieve::error::Error;
use anchorsieve::fixture::{generate_fixture_corpus, FixtureParams};
use anchorsieve::index::{build_index, IndexParams, IvfIndex};
use anchorsieve::pipeline::{self, compute_thresholds, ManifestRow};
use anchorsieve::report;
use anchorsieve::{anchor, Result};

#[derive(Parser)]
#[command(
    name = "anchorsieve",
    version,
    about = "Anchor-driven corpus extraction and filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw anchor images (PNG or raw-grid) to 8-bit PNGs.
    NormalizeAnchors(NormalizeAnchorsArgs),
    /// Train coarse centroids (and optional PQ codebooks) over an embedding
    /// file and write the index.
    BuildIndex(BuildIndexArgs),
    /// Query an index with every row of an embedding file.
    Query(QueryArgs),
    /// Re-score query matches against exact embeddings and a text reference.
    Rescore(RescoreArgs),
    /// Derive dual thresholds from scored matches and classify quadrants.
    Filter(FilterArgs),
    /// Compute dataset statistics from a manifest.
    Report(ReportArgs),
    /// End-to-end extraction from a run config file.
    Run(RunArgs),
    /// Generate a synthetic corpus fixture.
    GenFixture(GenFixtureArgs),
}

#[derive(Args)]
struct NormalizeAnchorsArgs {
    /// Input images (PNG 8/16-bit or raw-grid text).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Coarse centroid count; defaults to ceil(sqrt(n)).
    #[arg(long)]
    nlist: Option<usize>,
    /// Lists scanned per query; defaults to max(1, nlist/8).
    #[arg(long)]
    nprobe: Option<usize>,
    /// Enable product quantization.
    #[arg(long)]
    pq: bool,
    /// Sub-quantizer count; defaults to dim/8.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    kmeans_max_iter: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long, value_name = "FILE")]
    index: PathBuf,
    /// Embedding file whose rows are the queries.
    #[arg(long, value_name = "FILE")]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Override the index's stored nprobe.
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct RescoreArgs {
    /// Matches CSV from `query` (anchor_id,record_id,rank,fast_similarity).
    #[arg(long, value_name = "FILE")]
    matches: PathBuf,
    #[arg(long, value_name = "FILE")]
    corpus_embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    anchor_embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    text_embedding: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    /// Scored CSV from `rescore`.
    #[arg(long, value_name = "FILE")]
    scored: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    multiplier: f64,
    /// Include dropped rows in the output.
    #[arg(long)]
    keep_dropped: bool,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Total anchors queried; defaults to the distinct anchors in the
    /// manifest.
    #[arg(long)]
    anchors_total: Option<u64>,
    /// Keep only rows at or above this text similarity before reporting.
    #[arg(long)]
    min_text_sim: Option<f32>,
    /// Manifest column holding the language tag.
    #[arg(long, default_value = "language")]
    language_column: String,
    /// Bins per axis of the divergence histogram.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    min_dim: Option<u32>,
    #[arg(long)]
    multiplier: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap for all worker pools (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    keep_dropped: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    max_concurrent_fetches: Option<usize>,
    #[arg(long)]
    max_bytes: Option<u64>,
    /// Threshold statistics population: `validated` or `all`.
    #[arg(long)]
    threshold_population: Option<String>,
}

#[derive(Args)]
struct GenFixtureArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    planted_fraction: f64,
    #[arg(long, default_value_t = 3)]
    anchors: usize,
    #[arg(long, default_value_t = 10)]
    url_dup_pairs: usize,
    #[arg(long, default_value_t = 10)]
    byte_dup_pairs: usize,
    #[arg(long, default_value_t = 5)]
    decoys_per_anchor: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error={e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::NormalizeAnchors(args) => cmd_normalize_anchors(args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Query(args) => cmd_query(args),
        Command::Rescore(args) => cmd_rescore(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Report(args) => cmd_report(args),
        Command::Run(args) => cmd_run(args),
        Command::GenFixture(args) => cmd_gen_fixture(args),
    }
}

fn create_dir(path: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn cmd_normalize_anchors(args: NormalizeAnchorsArgs) -> Result<()> {
    create_dir(&args.out_dir)?;
    for input in &args.inputs {
        let raw = anchor::load_anchor(input)?;
        let normalized = anchor::normalize_anchor(&raw)?;
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("bad input name {input:?}")))?;
        let out = args.out_dir.join(format!("{stem}.png"));
        anchor::save_normalized_png(&normalized, &out)?;
        eprintln!(
            "anchor={} applied_gain={} out={}",
            input.display(),
            normalized.applied_gain,
            out.display()
        );
    }
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs) -> Result<()> {
    let matrix = embed::load_embeddings(&args.embeddings)?;
    let defaults = IndexParams::desk_scale(matrix.count(), matrix.dim(), args.pq, args.seed);
    let nlist = args.nlist.unwrap_or(defaults.nlist);
    let params = IndexParams {
        nlist,
        nprobe: args.nprobe.unwrap_or((nlist / 8).max(1)),
        pq_enabled: args.pq,
        m: args.m.unwrap_or(defaults.m),
        bits: 8,
        seed: args.seed,
        kmeans_max_iter: args.kmeans_max_iter,
    };
    let index = build_index(&matrix, &params)?;
    index.save(&args.out)?;
    eprintln!(
        "indexed={} dim={} nlist={} nprobe={} pq={} out={}",
        index.count(),
        index.dim(),
        params.nlist,
        params.nprobe,
        params.pq_enabled,
        args.out.display()
    );
    Ok(())
}

fn write_matches_csv(path: &PathBuf, rows: &[pipeline::CandidateMatch]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["anchor_id", "record_id", "rank", "fast_similarity"])?;
    for m in rows {
        w.write_record([
            m.anchor_id.to_string(),
            m.record_id.to_string(),
            m.rank.to_string(),
            m.fast_similarity.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_matches_csv(path: &PathBuf) -> Result<Vec<pipeline::CandidateMatch>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let bad = |what: &str, e: &dyn std::fmt::Display| {
        Error::InvalidInput(format!("{}: bad {what}: {e}", path.display()))
    };
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        out.push(pipeline::CandidateMatch {
            anchor_id: record[0].parse().map_err(|e| bad("anchor_id", &e))?,
            record_id: record[1].parse().map_err(|e| bad("record_id", &e))?,
            rank: record[2].parse().map_err(|e| bad("rank", &e))?,
            fast_similarity: record[3].parse().map_err(|e| bad("fast_similarity", &e))?,
        });
    }
    Ok(out)
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let index = IvfIndex::load(&args.index)?;
    let queries = embed::load_embeddings(&args.queries)?;
    let mut matches = Vec::new();
    for a in 0..queries.count() {
        let hits = match args.nprobe {
            Some(nprobe) => index.query_with_nprobe(queries.row(a), args.k, nprobe)?,
            None => index.query(queries.row(a), args.k)?,
        };
        matches.extend(hits.into_iter().map(|h| pipeline::CandidateMatch {
            anchor_id: a as u64,
            record_id: h.record_id,
            rank: h.rank,
            fast_similarity: h.fast_similarity,
        }));
    }
    write_matches_csv(&args.out, &matches)?;
    eprintln!(
        "queries={} matches={} out={}",
        queries.count(),
        matches.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_rescore(args: RescoreArgs) -> Result<()> {
    let matches = read_matches_csv(&args.matches)?;
    let corpus_exact = embed::load_embeddings(&args.corpus_embeddings)?;
    let anchors = embed::load_embeddings(&args.anchor_embeddings)?;
    let text = embed::load_embeddings(&args.text_embedding)?;
    if text.count() != 1 {
        return Err(Error::InvalidInput(
            "text embedding file must hold exactly one vector".into(),
        ));
    }
    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record([
        "anchor_id",
        "record_id",
        "rank",
        "fast_similarity",
        "image_similarity",
        "text_similarity",
    ])?;
    for m in &matches {
        let row = m.record_id as usize;
        if row >= corpus_exact.count() {
            return Err(Error::MissingExactEmbedding {
                record_id: m.record_id,
            });
        }
        let (image, text_sim) = pipeline::rescore(
            corpus_exact.row(row),
            anchors.row(m.anchor_id as usize),
            text.row(0),
        )?;
        w.write_record([
            m.anchor_id.to_string(),
            m.record_id.to_string(),
            m.rank.to_string(),
            m.fast_similarity.to_string(),
            image.to_string(),
            text_sim.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    eprintln!("rescored={} out={}", matches.len(), args.out.display());
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let file = std::fs::File::open(&args.scored).map_err(|e| Error::io(&args.scored, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let bad = |what: &str, e: &dyn std::fmt::Display| {
        Error::InvalidInput(format!("{}: bad {what}: {e}", args.scored.display()))
    };
    let mut rows: Vec<(u64, u64, u32, f32, f32, f32)> = Vec::new();
    for record in r.records() {
        let record = record?;
        rows.push((
            record[0].parse().map_err(|e| bad("anchor_id", &e))?,
            record[1].parse().map_err(|e| bad("record_id", &e))?,
            record[2].parse().map_err(|e| bad("rank", &e))?,
            record[3].parse().map_err(|e| bad("fast_similarity", &e))?,
            record[4].parse().map_err(|e| bad("image_similarity", &e))?,
            record[5].parse().map_err(|e| bad("text_similarity", &e))?,
        ));
    }
    let scores: Vec<(f32, f32)> = rows.iter().map(|r| (r.4, r.5)).collect();
    let thresholds = compute_thresholds(&scores, args.multiplier)?;
    eprintln!(
        "tau_image={} tau_text={} mean_image={} std_image={} mean_text={} std_text={}",
        thresholds.tau_image,
        thresholds.tau_text,
        thresholds.mean_image,
        thresholds.std_image,
        thresholds.mean_text,
        thresholds.std_text
    );

    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record([
        "anchor_id",
        "record_id",
        "rank",
        "fast_similarity",
        "image_similarity",
        "text_similarity",
        "quadrant",
    ])?;
    let mut kept = 0u64;
    for (anchor_id, record_id, rank, fast, image, text) in rows {
        let q = pipeline::classify_quadrant(image, text, &thresholds);
        if q == pipeline::Quadrant::KeptBoth {
            kept += 1;
        } else if !args.keep_dropped {
            continue;
        }
        w.write_record([
            anchor_id.to_string(),
            record_id.to_string(),
            rank.to_string(),
            fast.to_string(),
            image.to_string(),
            text.to_string(),
            q.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    eprintln!("kept={kept} out={}", args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    create_dir(&args.out_dir)?;
    let mut rows = pipeline::read_manifest(&args.manifest)?;
    if args.language_column != "language" {
        override_language_column(&args.manifest, &args.language_column, &mut rows)?;
    }
    if let Some(min) = args.min_text_sim {
        rows = report::filter_min_text_sim(&rows, min);
    }
    let anchors_total = args.anchors_total.unwrap_or_else(|| {
        let distinct: std::collections::BTreeSet<u64> = rows.iter().map(|r| r.anchor_id).collect();
        distinct.len() as u64
    });

    let coverage = report::coverage_stats(&rows, anchors_total.max(1))?;
    let hist = report::match_histogram(&rows, anchors_total);
    let div = report::divergence_report(&rows, args.bins);
    let quadrants = report::quadrant_counts(&rows);
    let langs = report::language_distribution(&rows);

    report::write_stats_txt(
        &rows,
        None,
        anchors_total,
        args.bins,
        args.out_dir.join("stats.txt"),
    )?;
    report::write_histogram_csv(&hist, args.out_dir.join("fig2_histogram.csv"))?;
    report::write_divergence_csv(&div, args.out_dir.join("fig3_divergence.csv"))?;
    report::write_quadrants_csv(&quadrants, args.out_dir.join("quadrants.csv"))?;
    report::write_languages_csv(&langs, args.out_dir.join("languages.csv"))?;

    eprintln!(
        "rows={} coverage={} mean_matches={} overestimation_rate={}",
        rows.len(),
        coverage.coverage_percent_str(),
        coverage.mean_matches_str(),
        div.overestimation_rate
    );
    Ok(())
}

fn override_language_column(
    manifest: &PathBuf,
    column: &str,
    rows: &mut [ManifestRow],
) -> Result<()> {
    let file = std::fs::File::open(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = r.headers()?.clone();
    let Some(idx) = headers.iter().position(|h| h == column) else {
        return Err(Error::InvalidInput(format!(
            "manifest has no column `{column}`"
        )));
    };
    for (row, record) in rows.iter_mut().zip(r.records()) {
        let record = record?;
        row.language = record.get(idx).unwrap_or_default().to_string();
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (mut cfg, warnings) = config::parse_config(&args.config)?;
    for w in &warnings {
        eprintln!("warning={w}");
    }
    if let Some(p) = &args.preset {
        let preset = Preset::from_name(p).ok_or_else(|| Error::ConfigParse {
            line: 0,
            msg: format!("unknown preset `{p}`"),
        })?;
        cfg.preset = Some(preset);
        if args.k.is_none() {
            cfg.k = preset.k();
        }
    }
    if let Some(k) = args.k {
        if cfg.preset.is_some() && Some(k) != cfg.preset.map(|p| p.k()) {
            eprintln!("warning=explicit k={k} overrides preset");
        }
        cfg.k = k;
    }
    if let Some(v) = args.min_dim {
        cfg.min_dim = v;
    }
    if let Some(v) = args.multiplier {
        cfg.multiplier = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.jobs {
        cfg.jobs = v;
    }
    if args.keep_dropped {
        cfg.keep_dropped = true;
    }
    if let Some(v) = args.output_dir {
        cfg.output_dir = v;
    }
    if let Some(v) = args.timeout_ms {
        cfg.timeout_ms = v;
    }
    if let Some(v) = args.retries {
        cfg.retries = v;
    }
    if let Some(v) = args.max_concurrent_fetches {
        cfg.max_concurrent_fetches = v;
    }
    if let Some(v) = args.max_bytes {
        cfg.max_bytes = v;
    }
    if let Some(v) = &args.threshold_population {
        cfg.threshold_population = match v.as_str() {
            "validated" => ThresholdPopulation::Validated,
            "all" => ThresholdPopulation::All,
            _ => {
                return Err(Error::ConfigParse {
                    line: 0,
                    msg: format!("bad threshold_population `{v}`"),
                })
            }
        };
    }
    cfg.validate()?;

    if let Some(preset) = cfg.preset {
        eprintln!(
            "preset={} k={} reference_tau_image={} reference_tau_text={}",
            preset.as_str(),
            cfg.k,
            config::REFERENCE_TAU_IMAGE,
            config::REFERENCE_TAU_TEXT
        );
    }

    create_dir(&cfg.output_dir)?;
    let output = run_with_jobs(&cfg)?;

    for c in &output.dropped {
        eprintln!(
            "drop record_id={} anchor_id={} stage={}",
            c.record_id,
            c.anchor_id,
            c.drop.map(|d| d.as_str()).unwrap_or("?")
        );
    }

    let rows = pipeline::compose_manifest(&output, cfg.keep_dropped);
    let manifest_path = cfg.output_dir.join("manifest.csv");
    pipeline::write_manifest(&rows, &manifest_path)?;
    let stats_path = cfg.output_dir.join("stats.txt");
    report::write_stats_txt(
        &rows,
        Some(&output.stats),
        output.stats.anchors_total,
        20,
        &stats_path,
    )?;

    let mut log = std::io::stderr().lock();
    let _ = writeln!(
        log,
        "candidates={} kept={} dropped={} manifest={} stats={}",
        output.stats.global.candidates_in,
        output.stats.global.kept,
        output.stats.global.dropped_total(),
        manifest_path.display(),
        stats_path.display()
    );
    Ok(())
}

fn run_with_jobs(cfg: &RunConfig) -> Result<pipeline::PipelineOutput> {
    if cfg.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| pipeline::run_pipeline(cfg))
    } else {
        pipeline::run_pipeline(cfg)
    }
}

fn cmd_gen_fixture(args: GenFixtureArgs) -> Result<()> {
    let params = FixtureParams {
        seed: args.seed,
        n: args.n,
        dim: args.dim,
        planted_fraction: args.planted_fraction,
        anchors: args.anchors,
        url_dup_pairs: args.url_dup_pairs,
        byte_dup_pairs: args.byte_dup_pairs,
        decoys_per_anchor: args.decoys_per_anchor,
        out_dir: args.out_dir,
    };
    let summary = generate_fixture_corpus(&params)?;
    eprintln!(
        "n={} planted={} anchors={} margin={:.3} config={}",
        summary.n,
        summary.planted,
        summary.anchors,
        summary.margin,
        summary.config_path.display()
    );
    Ok(())
}
