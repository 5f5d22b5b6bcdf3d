//! Deterministic synthetic corpus generator for tests and demos.
//!
//! The corpus mixes: an in-domain cluster planted around per-anchor
//! directions (the ground truth a run is judged against), pairs of records
//! sharing a URL, pairs of distinct URLs serving byte-identical images,
//! mid-similarity decoys that rank inside the anchors' neighbor lists but
//! sit far below the planted cluster, and random background records with
//! sizes straddling the minimum-dimension rule, unreachable URLs, and
//! non-image payloads.
//!
//! Anchor directions are orthonormalized, so each in-domain record is
//! retrieved by exactly one anchor and the duplicate-pair drop counts are
//! exact. Everything derives from the single seed; identical parameters
//! produce identical bytes.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::{self, dot, l2_normalize, CorpusRecord, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Similarity of decoy records to their home anchor. Far below the planted
/// cluster (~0.98), above anything a random background vector reaches in
/// practice.
const DECOY_SIM: f64 = 0.5;
/// Noise scale of the planted cluster around its anchor direction.
const PLANTED_NOISE: f32 = 0.02;

#[derive(Debug, Clone)]
pub struct FixtureParams {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub planted_fraction: f64,
    pub anchors: usize,
    pub url_dup_pairs: usize,
    pub byte_dup_pairs: usize,
    pub decoys_per_anchor: usize,
    pub out_dir: PathBuf,
}

impl FixtureParams {
    pub fn new(seed: u64, n: usize, dim: usize, planted_fraction: f64, out_dir: PathBuf) -> Self {
        FixtureParams {
            seed,
            n,
            dim,
            planted_fraction,
            anchors: 3,
            url_dup_pairs: 10,
            byte_dup_pairs: 10,
            decoys_per_anchor: 5,
            out_dir,
        }
    }
}

/// What each record is, for the ground-truth sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Planted,
    UrlDup,
    ByteDup,
    Decoy,
    BgOk,
    BgSmall,
    BgUnreachable,
    BgJunk,
}

impl RecordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::Planted => "planted",
            RecordKind::UrlDup => "url_dup",
            RecordKind::ByteDup => "byte_dup",
            RecordKind::Decoy => "decoy",
            RecordKind::BgOk => "bg_ok",
            RecordKind::BgSmall => "bg_small",
            RecordKind::BgUnreachable => "bg_unreachable",
            RecordKind::BgJunk => "bg_junk",
        }
    }

    pub fn from_name(s: &str) -> Option<RecordKind> {
        [
            RecordKind::Planted,
            RecordKind::UrlDup,
            RecordKind::ByteDup,
            RecordKind::Decoy,
            RecordKind::BgOk,
            RecordKind::BgSmall,
            RecordKind::BgUnreachable,
            RecordKind::BgJunk,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

/// One ground-truth line: enough for an oracle to replay the pipeline
/// without touching the fetch or probe code.
#[derive(Debug, Clone)]
pub struct GroundTruthRow {
    pub record_id: u64,
    pub kind: RecordKind,
    /// Home anchor for in-domain records and decoys.
    pub home_anchor: Option<u64>,
    pub width: u32,
    pub height: u32,
    /// Records with equal groups serve byte-identical files.
    pub byte_group: String,
}

#[derive(Debug, Clone)]
pub struct FixtureSummary {
    pub n: usize,
    pub planted: u64,
    pub anchors: usize,
    /// Smallest in-domain anchor similarity minus the largest similarity of
    /// any other record to that anchor; guaranteed >= 0.2.
    pub margin: f64,
    pub corpus_embeddings: PathBuf,
    pub corpus_exact: PathBuf,
    pub anchors_path: PathBuf,
    pub text_ref_path: PathBuf,
    pub corpus_csv: PathBuf,
    pub ground_truth: PathBuf,
    pub config_path: PathBuf,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    // Box-Muller; two uniforms per normal draw keeps the stream simple.
    (0..dim)
        .map(|_| {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random::<f64>();
            ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
        })
        .collect()
}

/// Orthonormal anchor directions via Gram-Schmidt over Gaussian draws.
fn anchor_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Result<Vec<Vec<f32>>> {
    if count > dim {
        return Err(Error::InvalidInput(format!(
            "cannot build {count} orthogonal anchors in dimension {dim}"
        )));
    }
    let mut dirs: Vec<Vec<f32>> = Vec::with_capacity(count);
    while dirs.len() < count {
        let mut v = gaussian(rng, dim);
        for u in &dirs {
            let proj = dot(&v, u);
            for (x, y) in v.iter_mut().zip(u) {
                *x = (*x as f64 - proj * *y as f64) as f32;
            }
        }
        match l2_normalize(&v) {
            Ok(unit) => dirs.push(unit),
            Err(_) => continue,
        }
    }
    Ok(dirs)
}

fn near(rng: &mut ChaCha8Rng, dir: &[f32], noise: f32) -> Vec<f32> {
    let g = gaussian(rng, dir.len());
    let v: Vec<f32> = dir.iter().zip(&g).map(|(d, n)| d + noise * n).collect();
    l2_normalize(&v).expect("noisy direction cannot be zero")
}

/// Unit vector with an exact inner product `sim` against `dir`.
fn at_similarity(rng: &mut ChaCha8Rng, dir: &[f32], sim: f64) -> Vec<f32> {
    loop {
        let g = gaussian(rng, dir.len());
        let proj = dot(&g, dir);
        let mut w: Vec<f32> = g
            .iter()
            .zip(dir)
            .map(|(x, d)| (*x as f64 - proj * *d as f64) as f32)
            .collect();
        let Ok(unit) = l2_normalize(&w) else { continue };
        w = unit;
        let ortho = (1.0 - sim * sim).sqrt();
        let out: Vec<f32> = dir
            .iter()
            .zip(&w)
            .map(|(d, o)| (sim * *d as f64 + ortho * *o as f64) as f32)
            .collect();
        return l2_normalize(&out).expect("unit by construction");
    }
}

fn uniform_png(path: &Path, width: u32, height: u32, rgb: [u8; 3]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Png(e.to_string()))?;
    let mut row = Vec::with_capacity(width as usize * 3);
    for _ in 0..width {
        row.extend_from_slice(&rgb);
    }
    let data: Vec<u8> = row
        .iter()
        .copied()
        .cycle()
        .take(width as usize * height as usize * 3)
        .collect();
    writer
        .write_image_data(&data)
        .map_err(|e| Error::Png(e.to_string()))
}

// Colors are injective per class and classes are disjoint in the blue
// channel, so two files are byte-identical only when the fixture plans them
// to be.
fn record_color(id: u64) -> [u8; 3] {
    [id as u8, (id >> 8) as u8, 0x10 | ((id >> 16) as u8 & 0x0F)]
}

fn pair_color(class: u8, pair: usize) -> [u8; 3] {
    [pair as u8, (pair >> 8) as u8, class]
}

const LANGUAGES: [&str; 8] = ["en", "en", "de", "", "fr", "en", "es", ""];

fn caption_of(id: u64) -> String {
    if id.is_multiple_of(7) {
        format!("aerial tile {id}, \"band composite\" crop")
    } else if id.is_multiple_of(5) {
        format!("scene {id}; mosaic, level-2")
    } else {
        format!("sample {id}")
    }
}

pub fn generate_fixture_corpus(params: &FixtureParams) -> Result<FixtureSummary> {
    let p = params;
    if p.n == 0 {
        return Err(Error::InvalidInput(
            "fixture needs at least one record".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p.planted_fraction) {
        return Err(Error::InvalidInput(
            "planted_fraction must be in [0, 1]".into(),
        ));
    }
    if p.anchors == 0 {
        return Err(Error::InvalidInput(
            "fixture needs at least one anchor".into(),
        ));
    }
    let planted_count = (p.n as f64 * p.planted_fraction).round() as usize;
    let special = planted_count
        + 2 * p.url_dup_pairs
        + 2 * p.byte_dup_pairs
        + p.anchors * p.decoys_per_anchor;
    if special > p.n {
        return Err(Error::InvalidInput(format!(
            "n={} too small for {special} special records",
            p.n
        )));
    }

    std::fs::create_dir_all(&p.out_dir).map_err(|e| Error::io(&p.out_dir, e))?;
    let out_dir = std::path::absolute(&p.out_dir).map_err(|e| Error::io(&p.out_dir, e))?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    // Anchor directions and the text reference (their normalized mean).
    let dirs = anchor_directions(&mut rng, p.anchors, p.dim)?;
    let mut text_ref = vec![0f32; p.dim];
    for d in &dirs {
        for (t, x) in text_ref.iter_mut().zip(d) {
            *t += x;
        }
    }
    let text_ref = l2_normalize(&text_ref)?;

    // Role assignment: scatter the special records over the id space.
    let mut perm: Vec<usize> = (0..p.n).collect();
    for i in (1..p.n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    #[derive(Clone, Copy)]
    enum Role {
        Planted { home: usize },
        UrlDup { pair: usize, home: usize },
        ByteDup { pair: usize, home: usize },
        Decoy { home: usize },
        Background,
    }
    let mut roles = vec![Role::Background; p.n];
    let mut cursor = 0usize;
    for i in 0..planted_count {
        roles[perm[cursor]] = Role::Planted {
            home: i % p.anchors,
        };
        cursor += 1;
    }
    for pair in 0..p.url_dup_pairs {
        for _member in 0..2 {
            roles[perm[cursor]] = Role::UrlDup {
                pair,
                home: pair % p.anchors,
            };
            cursor += 1;
        }
    }
    for pair in 0..p.byte_dup_pairs {
        for _member in 0..2 {
            roles[perm[cursor]] = Role::ByteDup {
                pair,
                home: pair % p.anchors,
            };
            cursor += 1;
        }
    }
    for home in 0..p.anchors {
        for _slot in 0..p.decoys_per_anchor {
            roles[perm[cursor]] = Role::Decoy { home };
            cursor += 1;
        }
    }

    // Shared assets for the duplicate pairs.
    let url_pair_assets: Vec<(u32, u32, [u8; 3])> = (0..p.url_dup_pairs)
        .map(|j| {
            (
                rng.random_range(256..=320),
                rng.random_range(256..=320),
                pair_color(0x20, j),
            )
        })
        .collect();
    let byte_pair_assets: Vec<(u32, u32, [u8; 3])> = (0..p.byte_dup_pairs)
        .map(|j| {
            (
                rng.random_range(256..=320),
                rng.random_range(256..=320),
                pair_color(0x30, j),
            )
        })
        .collect();

    // Per-record embeddings, images, and metadata, in id order.
    let mut matrix = EmbeddingMatrix::new(p.dim);
    let mut records: Vec<CorpusRecord> = Vec::with_capacity(p.n);
    let mut truth: Vec<GroundTruthRow> = Vec::with_capacity(p.n);
    let mut url_pair_paths: Vec<Option<PathBuf>> = vec![None; p.url_dup_pairs];

    for id in 0..p.n {
        let record_id = id as u64;
        let role = roles[id];
        let (embedding, kind, home): (Vec<f32>, RecordKind, Option<u64>) = match role {
            Role::Planted { home } => (
                near(&mut rng, &dirs[home], PLANTED_NOISE),
                RecordKind::Planted,
                Some(home as u64),
            ),
            Role::UrlDup { home, .. } => (
                near(&mut rng, &dirs[home], PLANTED_NOISE),
                RecordKind::UrlDup,
                Some(home as u64),
            ),
            Role::ByteDup { home, .. } => (
                near(&mut rng, &dirs[home], PLANTED_NOISE),
                RecordKind::ByteDup,
                Some(home as u64),
            ),
            Role::Decoy { home } => (
                at_similarity(&mut rng, &dirs[home], DECOY_SIM),
                RecordKind::Decoy,
                Some(home as u64),
            ),
            Role::Background => {
                let g = gaussian(&mut rng, p.dim);
                (l2_normalize(&g)?, RecordKind::Planted, None) // kind patched below
            }
        };
        // Background records split into four behaviors on a fixed cycle.
        let kind = if matches!(role, Role::Background) {
            match id % 20 {
                0..=13 => RecordKind::BgOk,
                14..=16 => RecordKind::BgSmall,
                17 | 18 => RecordKind::BgUnreachable,
                _ => RecordKind::BgJunk,
            }
        } else {
            kind
        };

        let (url, width, height, byte_group) = match role {
            Role::UrlDup { pair, .. } => {
                let (w, h, rgb) = url_pair_assets[pair];
                let path = match &url_pair_paths[pair] {
                    Some(path) => path.clone(),
                    None => {
                        let path = images_dir.join(format!("urlpair_{pair:03}.png"));
                        uniform_png(&path, w, h, rgb)?;
                        url_pair_paths[pair] = Some(path.clone());
                        path
                    }
                };
                (
                    format!("file://{}", path.display()),
                    w,
                    h,
                    format!("urlpair{pair}"),
                )
            }
            Role::ByteDup { pair, .. } => {
                let (w, h, rgb) = byte_pair_assets[pair];
                let path = images_dir.join(format!("bytepair_{pair:03}_{record_id:06}.png"));
                uniform_png(&path, w, h, rgb)?;
                (
                    format!("file://{}", path.display()),
                    w,
                    h,
                    format!("bytepair{pair}"),
                )
            }
            Role::Planted { .. } | Role::Decoy { .. } => {
                let w = rng.random_range(256..=320);
                let h = rng.random_range(256..=320);
                let path = images_dir.join(format!("img_{record_id:06}.png"));
                uniform_png(&path, w, h, record_color(record_id))?;
                (
                    format!("file://{}", path.display()),
                    w,
                    h,
                    format!("r{record_id}"),
                )
            }
            Role::Background => match kind {
                RecordKind::BgOk => {
                    let w = rng.random_range(256..=400);
                    let h = rng.random_range(256..=400);
                    let path = images_dir.join(format!("img_{record_id:06}.png"));
                    uniform_png(&path, w, h, record_color(record_id))?;
                    (
                        format!("file://{}", path.display()),
                        w,
                        h,
                        format!("r{record_id}"),
                    )
                }
                RecordKind::BgSmall => {
                    let w = rng.random_range(64..=255);
                    let h = rng.random_range(64..=320);
                    let path = images_dir.join(format!("img_{record_id:06}.png"));
                    uniform_png(&path, w, h, record_color(record_id))?;
                    (
                        format!("file://{}", path.display()),
                        w,
                        h,
                        format!("r{record_id}"),
                    )
                }
                RecordKind::BgUnreachable => {
                    let path = images_dir.join(format!("missing_{record_id:06}.png"));
                    (
                        format!("file://{}", path.display()),
                        0,
                        0,
                        format!("r{record_id}"),
                    )
                }
                _ => {
                    let path = images_dir.join(format!("junk_{record_id:06}.bin"));
                    let mut junk = vec![0u8; 64];
                    rng.fill(&mut junk[..]);
                    std::fs::write(&path, &junk).map_err(|e| Error::io(&path, e))?;
                    (
                        format!("file://{}", path.display()),
                        0,
                        0,
                        format!("r{record_id}"),
                    )
                }
            },
        };

        matrix.push_row(&embedding)?;
        records.push(CorpusRecord {
            record_id,
            url,
            caption: caption_of(record_id),
            language: {
                let tag = LANGUAGES[id % LANGUAGES.len()];
                if tag.is_empty() {
                    None
                } else {
                    Some(tag.to_string())
                }
            },
            embedding_row: id,
        });
        truth.push(GroundTruthRow {
            record_id,
            kind,
            home_anchor: home,
            width,
            height,
            byte_group,
        });
    }
    matrix.assume_normalized();

    // Construction guarantee: in-domain records sit at least 0.2 above every
    // other record's similarity to the same anchor.
    let mut margin = f64::INFINITY;
    for (a, dir) in dirs.iter().enumerate() {
        let mut min_in = f64::INFINITY;
        let mut max_out = f64::NEG_INFINITY;
        for (id, row) in matrix.rows().enumerate() {
            let sim = dot(row, dir);
            let in_domain = matches!(
                truth[id].kind,
                RecordKind::Planted | RecordKind::UrlDup | RecordKind::ByteDup
            ) && truth[id].home_anchor == Some(a as u64);
            if in_domain {
                min_in = min_in.min(sim);
            } else {
                max_out = max_out.max(sim);
            }
        }
        if min_in.is_finite() {
            margin = margin.min(min_in - max_out);
        }
    }
    if planted_count > 0 && margin < 0.2 {
        return Err(Error::InvalidInput(format!(
            "fixture margin {margin:.3} below the guaranteed 0.2; regenerate with another seed"
        )));
    }

    // Anchor matrix: the directions themselves.
    let mut anchor_matrix = EmbeddingMatrix::new(p.dim);
    for d in &dirs {
        anchor_matrix.push_row(d)?;
    }
    anchor_matrix.assume_normalized();
    let mut text_matrix = EmbeddingMatrix::new(p.dim);
    text_matrix.push_row(&text_ref)?;
    text_matrix.assume_normalized();

    let corpus_embeddings = out_dir.join("corpus_embeddings.aemb");
    let corpus_exact = out_dir.join("corpus_exact.aemb");
    let anchors_path = out_dir.join("anchors.aemb");
    let text_ref_path = out_dir.join("text_ref.aemb");
    let corpus_csv = out_dir.join("corpus.csv");
    let ground_truth = out_dir.join("groundtruth.csv");
    let config_path = out_dir.join("fixture.conf");

    embed::save_embeddings(&matrix, &corpus_embeddings)?;
    embed::save_embeddings(&matrix, &corpus_exact)?;
    embed::save_embeddings(&anchor_matrix, &anchors_path)?;
    embed::save_embeddings(&text_matrix, &text_ref_path)?;
    embed::save_corpus(&records, &corpus_csv)?;

    {
        let file = File::create(&ground_truth).map_err(|e| Error::io(&ground_truth, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record([
            "record_id",
            "kind",
            "home_anchor",
            "width",
            "height",
            "byte_group",
        ])?;
        for t in &truth {
            w.write_record([
                t.record_id.to_string(),
                t.kind.as_str().to_string(),
                t.home_anchor.map(|a| a.to_string()).unwrap_or_default(),
                t.width.to_string(),
                t.height.to_string(),
                t.byte_group.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&ground_truth, e))?;
    }

    let conf = format!(
        "# generated fixture run config\n\
         index = index.aivf\n\
         corpus = corpus.csv\n\
         corpus_embeddings = corpus_exact.aemb\n\
         anchor_embeddings = anchors.aemb\n\
         text_embedding = text_ref.aemb\n\
         output_dir = run\n\
         preset = ver0\n\
         seed = {}\n",
        p.seed
    );
    std::fs::write(&config_path, conf).map_err(|e| Error::io(&config_path, e))?;

    Ok(FixtureSummary {
        n: p.n,
        planted: planted_count as u64,
        anchors: p.anchors,
        margin: if margin.is_finite() { margin } else { 0.0 },
        corpus_embeddings,
        corpus_exact,
        anchors_path,
        text_ref_path,
        corpus_csv,
        ground_truth,
        config_path,
    })
}

/// Read the ground-truth sidecar back.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let kind = RecordKind::from_name(&record[1])
            .ok_or_else(|| Error::InvalidInput(format!("bad kind `{}`", &record[1])))?;
        out.push(GroundTruthRow {
            record_id: record[0]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad record_id: {e}")))?,
            kind,
            home_anchor: if record[2].is_empty() {
                None
            } else {
                Some(
                    record[2]
                        .parse()
                        .map_err(|e| Error::InvalidInput(format!("bad home_anchor: {e}")))?,
                )
            },
            width: record[3].parse().unwrap_or(0),
            height: record[4].parse().unwrap_or(0),
            byte_group: record[5].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        std::env::temp_dir()
            .join("anchorsieve-fixture-tests")
            .join(name)
    }

    #[test]
    fn zero_planted_fraction_lists_no_in_domain() {
        let params = FixtureParams {
            decoys_per_anchor: 2,
            url_dup_pairs: 2,
            byte_dup_pairs: 2,
            anchors: 2,
            ..FixtureParams::new(3, 120, 16, 0.0, tmp("zero"))
        };
        let summary = generate_fixture_corpus(&params).unwrap();
        assert_eq!(summary.planted, 0);
        let truth = load_ground_truth(&summary.ground_truth).unwrap();
        assert_eq!(
            truth
                .iter()
                .filter(|t| t.kind == RecordKind::Planted)
                .count(),
            0
        );
    }

    #[test]
    fn same_seed_identical_bytes() {
        let mk = |dir: &str| {
            let params = FixtureParams {
                anchors: 2,
                url_dup_pairs: 2,
                byte_dup_pairs: 2,
                decoys_per_anchor: 2,
                ..FixtureParams::new(99, 150, 16, 0.1, tmp(dir))
            };
            generate_fixture_corpus(&params).unwrap()
        };
        let a = mk("det-a");
        let b = mk("det-b");
        for (pa, pb) in [
            (&a.corpus_embeddings, &b.corpus_embeddings),
            (&a.corpus_csv, &b.corpus_csv),
            (&a.ground_truth, &b.ground_truth),
        ] {
            let ba = std::fs::read(pa).unwrap();
            let mut bb = std::fs::read(pb).unwrap();
            // The corpus CSV embeds absolute paths; compare after mapping
            // the directory name.
            if pa.extension().is_some_and(|e| e == "csv") {
                bb = String::from_utf8(bb)
                    .unwrap()
                    .replace("det-b", "det-a")
                    .into_bytes();
            }
            assert_eq!(ba, bb, "{pa:?} differs");
        }
    }

    #[test]
    fn planted_margin_holds() {
        let params = FixtureParams {
            anchors: 3,
            ..FixtureParams::new(7, 400, 32, 0.1, tmp("margin"))
        };
        let summary = generate_fixture_corpus(&params).unwrap();
        assert!(summary.margin >= 0.2, "margin {}", summary.margin);
    }

    #[test]
    fn duplicate_structure_is_exact() {
        let params = FixtureParams {
            anchors: 2,
            url_dup_pairs: 4,
            byte_dup_pairs: 3,
            decoys_per_anchor: 2,
            ..FixtureParams::new(11, 200, 48, 0.08, tmp("dups"))
        };
        let summary = generate_fixture_corpus(&params).unwrap();
        let truth = load_ground_truth(&summary.ground_truth).unwrap();
        let corpus = embed::load_corpus(&summary.corpus_csv).unwrap();

        assert_eq!(
            truth
                .iter()
                .filter(|t| t.kind == RecordKind::UrlDup)
                .count(),
            8
        );
        assert_eq!(
            truth
                .iter()
                .filter(|t| t.kind == RecordKind::ByteDup)
                .count(),
            6
        );

        // URL-dup members share URLs pairwise; all other URLs unique.
        let mut url_counts: std::collections::HashMap<&str, usize> = Default::default();
        for r in &corpus {
            *url_counts.entry(r.url.as_str()).or_default() += 1;
        }
        let dupes: Vec<usize> = url_counts.values().copied().filter(|&c| c > 1).collect();
        assert_eq!(dupes.len(), 4);
        assert!(dupes.iter().all(|&c| c == 2));

        // Byte-dup twins actually serve identical bytes.
        for pair_group in ["bytepair0", "bytepair1", "bytepair2"] {
            let members: Vec<&GroundTruthRow> = truth
                .iter()
                .filter(|t| t.byte_group == pair_group)
                .collect();
            assert_eq!(members.len(), 2);
            let bytes: Vec<Vec<u8>> = members
                .iter()
                .map(|m| {
                    let url = &corpus[m.record_id as usize].url;
                    std::fs::read(url.strip_prefix("file://").unwrap()).unwrap()
                })
                .collect();
            assert_eq!(bytes[0], bytes[1]);
        }
    }
}
