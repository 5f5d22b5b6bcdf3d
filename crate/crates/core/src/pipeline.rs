//! End-to-end extraction: per-anchor k-NN query, URL dedup, fetch
//! validation, exact re-scoring against the anchor and the reference text
//! embedding, dual-threshold computation, quadrant classification, content
//! dedup, and manifest assembly.
//!
//! Every stage output is canonically sorted by (anchor_id, rank, record_id)
//! so results never depend on scheduling. Dropped candidates stay in the
//! run's bookkeeping with the stage that removed them; conservation
//! (candidates in = kept + dropped) holds exactly, per anchor and globally.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ThresholdPopulation};
use crate::embed::{self, cosine_sim, CorpusRecord, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::fetch::{self, FetchOptions, FetchStatus};
use crate::index::IvfIndex;

/// One (anchor, neighbor) pair straight out of the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch {
    pub anchor_id: u64,
    pub record_id: u64,
    /// 1-based rank within the anchor's result list.
    pub rank: u32,
    pub fast_similarity: f32,
}

/// Thresholds with the statistics they were derived from. By construction
/// `tau = mean - multiplier * std` (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    pub tau_image: f64,
    pub tau_text: f64,
    pub mean_image: f64,
    pub std_image: f64,
    pub mean_text: f64,
    pub std_text: f64,
    pub multiplier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quadrant {
    KeptBoth,
    VisualOnly,
    SemanticOnly,
    Neither,
}

impl Quadrant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quadrant::KeptBoth => "kept_both",
            Quadrant::VisualOnly => "visual_only",
            Quadrant::SemanticOnly => "semantic_only",
            Quadrant::Neither => "neither",
        }
    }

    pub fn from_name(s: &str) -> Option<Quadrant> {
        match s {
            "kept_both" => Some(Quadrant::KeptBoth),
            "visual_only" => Some(Quadrant::VisualOnly),
            "semantic_only" => Some(Quadrant::SemanticOnly),
            "neither" => Some(Quadrant::Neither),
            _ => None,
        }
    }
}

/// Why a candidate left the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropStage {
    DuplicateUrl,
    Unreachable,
    NotAnImage,
    TooSmall,
    BelowTauImage,
    BelowTauText,
    BelowBoth,
    DuplicateContent,
}

impl DropStage {
    pub const ALL: [DropStage; 8] = [
        DropStage::DuplicateUrl,
        DropStage::Unreachable,
        DropStage::NotAnImage,
        DropStage::TooSmall,
        DropStage::BelowTauImage,
        DropStage::BelowTauText,
        DropStage::BelowBoth,
        DropStage::DuplicateContent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropStage::DuplicateUrl => "duplicate_url",
            DropStage::Unreachable => "unreachable",
            DropStage::NotAnImage => "not_an_image",
            DropStage::TooSmall => "too_small",
            DropStage::BelowTauImage => "below_tau_image",
            DropStage::BelowTauText => "below_tau_text",
            DropStage::BelowBoth => "below_both",
            DropStage::DuplicateContent => "duplicate_content",
        }
    }

    pub fn from_name(s: &str) -> Option<DropStage> {
        DropStage::ALL.iter().copied().find(|d| d.as_str() == s)
    }
}

/// Full per-candidate state as it moves through the stages.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub anchor_id: u64,
    pub record_id: u64,
    pub rank: u32,
    pub fast_similarity: f32,
    pub url: String,
    pub caption: String,
    pub language: Option<String>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub content_digest: Option<[u8; 32]>,
    pub image_similarity: Option<f32>,
    pub text_similarity: Option<f32>,
    pub quadrant: Option<Quadrant>,
    pub drop: Option<DropStage>,
}

impl Candidate {
    fn sort_key(&self) -> (u64, u32, u64) {
        (self.anchor_id, self.rank, self.record_id)
    }
}

/// One emitted manifest line. Column order is fixed:
/// `sample_id,anchor_id,record_id,url,caption,fast_similarity,
/// image_similarity,text_similarity,width,height,language,quadrant,drop_stage`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: u64,
    pub anchor_id: u64,
    pub record_id: u64,
    pub url: String,
    pub caption: String,
    pub fast_similarity: f32,
    pub image_similarity: Option<f32>,
    pub text_similarity: Option<f32>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub language: String,
    pub quadrant: String,
    pub drop_stage: String,
}

impl ManifestRow {
    pub fn is_kept(&self) -> bool {
        self.drop_stage.is_empty()
    }
}

/// Query the index with every anchor row. Output is sorted by
/// (anchor_id, rank).
pub fn query_anchors(
    index: &IvfIndex,
    anchors: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<CandidateMatch>> {
    if index.count() == 0 {
        return Err(Error::EmptyIndex);
    }
    let per_anchor: Vec<Result<Vec<CandidateMatch>>> = (0..anchors.count())
        .into_par_iter()
        .map(|a| {
            let hits = index.query(anchors.row(a), k)?;
            Ok(hits
                .into_iter()
                .map(|h| CandidateMatch {
                    anchor_id: a as u64,
                    record_id: h.record_id,
                    rank: h.rank,
                    fast_similarity: h.fast_similarity,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for chunk in per_anchor {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Normalize a URL for dedup: trim whitespace, lowercase the scheme and the
/// host (up to the first `/`, `?`, or `#` after `://`). Path and query are
/// untouched.
pub fn normalize_url(url: &str) -> String {
    let url = url.trim();
    let Some(sep) = url.find("://") else {
        return url.to_string();
    };
    let scheme = url[..sep].to_ascii_lowercase();
    let rest = &url[sep + 3..];
    let host_end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let host = rest[..host_end].to_ascii_lowercase();
    format!("{scheme}://{host}{}", &rest[host_end..])
}

/// For each normalized URL keep only the candidate with the highest fast
/// similarity; ties go to the smaller anchor_id, then the smaller record_id.
/// Losers are marked `duplicate_url` in place.
pub fn dedup_by_url(candidates: &mut [Candidate]) {
    let mut best: HashMap<String, usize> = HashMap::new();
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..candidates.len()).collect();
        idx.sort_by_key(|&i| candidates[i].sort_key());
        idx
    };
    for i in order {
        if candidates[i].drop.is_some() {
            continue;
        }
        let key = normalize_url(&candidates[i].url);
        match best.entry(key) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(i);
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                let inc = *e.get();
                let challenger = &candidates[i];
                let incumbent = &candidates[inc];
                let challenger_wins = challenger.fast_similarity > incumbent.fast_similarity
                    || (challenger.fast_similarity == incumbent.fast_similarity
                        && (challenger.anchor_id, challenger.record_id)
                            < (incumbent.anchor_id, incumbent.record_id));
                if challenger_wins {
                    e.insert(i);
                    candidates[inc].drop = Some(DropStage::DuplicateUrl);
                } else {
                    candidates[i].drop = Some(DropStage::DuplicateUrl);
                }
            }
        }
    }
}

/// Exact re-scoring of one candidate: cosine against the anchor's exact
/// embedding and against the reference text embedding. The fast similarity
/// is preserved on the candidate for divergence reporting.
pub fn rescore(record_exact: &[f32], anchor_exact: &[f32], text_ref: &[f32]) -> Result<(f32, f32)> {
    let image = cosine_sim(record_exact, anchor_exact)?;
    let text = cosine_sim(record_exact, text_ref)?;
    Ok((image, text))
}

/// Population-statistics thresholds: `tau = mean - multiplier * std` for the
/// image and text similarity distributions. Needs at least two samples.
pub fn compute_thresholds(scores: &[(f32, f32)], multiplier: f64) -> Result<FilterThresholds> {
    if scores.len() < 2 {
        return Err(Error::TooFewSamples {
            got: scores.len(),
            need: 2,
        });
    }
    let n = scores.len() as f64;
    let (mut sum_i, mut sum_t) = (0f64, 0f64);
    for &(i, t) in scores {
        sum_i += i as f64;
        sum_t += t as f64;
    }
    let mean_image = sum_i / n;
    let mean_text = sum_t / n;
    let (mut var_i, mut var_t) = (0f64, 0f64);
    for &(i, t) in scores {
        var_i += (i as f64 - mean_image).powi(2);
        var_t += (t as f64 - mean_text).powi(2);
    }
    let std_image = (var_i / n).sqrt();
    let std_text = (var_t / n).sqrt();
    Ok(FilterThresholds {
        tau_image: mean_image - multiplier * std_image,
        tau_text: mean_text - multiplier * std_text,
        mean_image,
        std_image,
        mean_text,
        std_text,
        multiplier,
    })
}

/// Inclusive on the keep side: a candidate sitting exactly on both
/// thresholds is kept.
pub fn classify_quadrant(image_sim: f32, text_sim: f32, t: &FilterThresholds) -> Quadrant {
    let image_ok = image_sim as f64 >= t.tau_image;
    let text_ok = text_sim as f64 >= t.tau_text;
    match (image_ok, text_ok) {
        (true, true) => Quadrant::KeptBoth,
        (true, false) => Quadrant::VisualOnly,
        (false, true) => Quadrant::SemanticOnly,
        (false, false) => Quadrant::Neither,
    }
}

/// One survivor per content digest: the highest exact image similarity wins,
/// ties go to the smaller record_id. Losers are marked `duplicate_content`.
/// Every live candidate must carry a digest.
pub fn dedup_by_content(candidates: &mut [Candidate]) -> Result<()> {
    let mut best: HashMap<[u8; 32], usize> = HashMap::new();
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..candidates.len()).collect();
        idx.sort_by_key(|&i| candidates[i].sort_key());
        idx
    };
    for i in order {
        if candidates[i].drop.is_some() {
            continue;
        }
        let digest = candidates[i].content_digest.ok_or(Error::MissingDigest {
            record_id: candidates[i].record_id,
        })?;
        let sim = candidates[i]
            .image_similarity
            .ok_or(Error::MissingExactEmbedding {
                record_id: candidates[i].record_id,
            })?;
        match best.entry(digest) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(i);
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                let inc = *e.get();
                let inc_sim = candidates[inc].image_similarity.unwrap();
                let challenger_wins = sim > inc_sim
                    || (sim == inc_sim && candidates[i].record_id < candidates[inc].record_id);
                if challenger_wins {
                    e.insert(i);
                    candidates[inc].drop = Some(DropStage::DuplicateContent);
                } else {
                    candidates[i].drop = Some(DropStage::DuplicateContent);
                }
            }
        }
    }
    Ok(())
}

/// Per-anchor and global stage accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageCounts {
    pub candidates_in: u64,
    pub kept: u64,
    pub drops: BTreeMap<DropStage, u64>,
}

impl StageCounts {
    pub fn dropped_total(&self) -> u64 {
        self.drops.values().sum()
    }

    pub fn conserves(&self) -> bool {
        self.candidates_in == self.kept + self.dropped_total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub anchors_total: u64,
    pub global: StageCounts,
    pub per_anchor: BTreeMap<u64, StageCounts>,
    pub scored_count: u64,
    pub quadrant_counts: BTreeMap<Quadrant, u64>,
    pub thresholds: Option<FilterThresholds>,
}

impl RunStats {
    pub fn conserves(&self) -> bool {
        self.global.conserves() && self.per_anchor.values().all(|c| c.conserves())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Kept candidates in canonical order.
    pub kept: Vec<Candidate>,
    /// Dropped candidates in canonical order, each with its drop stage.
    pub dropped: Vec<Candidate>,
    pub stats: RunStats,
}

/// Run the full pipeline from loaded inputs.
///
/// `corpus[i].embedding_row` must equal `i`; record ids used by the index
/// are matrix row positions.
pub fn run_pipeline_loaded(
    index: &IvfIndex,
    corpus: &[CorpusRecord],
    corpus_exact: &EmbeddingMatrix,
    anchors_exact: &EmbeddingMatrix,
    text_ref: &[f32],
    cfg: &RunConfig,
) -> Result<PipelineOutput> {
    let anchors_total = anchors_exact.count() as u64;
    if corpus.is_empty() {
        return Ok(PipelineOutput {
            kept: Vec::new(),
            dropped: Vec::new(),
            stats: RunStats {
                anchors_total,
                global: StageCounts::default(),
                per_anchor: BTreeMap::new(),
                scored_count: 0,
                quadrant_counts: BTreeMap::new(),
                thresholds: None,
            },
        });
    }
    embed::validate_corpus_rows(corpus, corpus_exact)?;

    let by_row: HashMap<usize, &CorpusRecord> =
        corpus.iter().map(|r| (r.embedding_row, r)).collect();

    // Stage: query.
    let matches = query_anchors(index, anchors_exact, cfg.k)?;
    let mut candidates: Vec<Candidate> = Vec::with_capacity(matches.len());
    for m in &matches {
        let rec = by_row
            .get(&(m.record_id as usize))
            .ok_or(Error::RowOutOfRange {
                row: m.record_id as usize,
                count: corpus.len(),
            })?;
        candidates.push(Candidate {
            anchor_id: m.anchor_id,
            record_id: m.record_id,
            rank: m.rank,
            fast_similarity: m.fast_similarity,
            url: rec.url.clone(),
            caption: rec.caption.clone(),
            language: rec.language.clone(),
            width: None,
            height: None,
            content_digest: None,
            image_similarity: None,
            text_similarity: None,
            quadrant: None,
            drop: None,
        });
    }
    candidates.sort_by_key(|c| c.sort_key());

    // Stage: URL dedup (before fetching, mirroring the construction order).
    dedup_by_url(&mut candidates);

    // Stage: fetch + validate. One fetch per live candidate; each URL is
    // unique after dedup.
    let fetch_opts = FetchOptions {
        timeout: std::time::Duration::from_millis(cfg.timeout_ms),
        retries: cfg.retries,
        max_bytes: cfg.max_bytes,
        politeness_delay: std::time::Duration::from_millis(cfg.politeness_delay_ms),
    };
    let work: Vec<(usize, u64, String)> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.drop.is_none())
        .map(|(i, c)| (i, c.record_id, c.url.clone()))
        .collect();
    let keyed: Vec<(u64, String)> = work
        .iter()
        .map(|(i, _, url)| (*i as u64, url.clone()))
        .collect();
    let results = fetch::fetch_batch(&keyed, cfg.min_dim, &fetch_opts, cfg.fetch_workers());
    for res in results {
        let c = &mut candidates[res.record_id as usize];
        c.width = res.width;
        c.height = res.height;
        c.content_digest = res.content_digest;
        c.drop = match res.status {
            FetchStatus::Ok => None,
            FetchStatus::Unreachable => Some(DropStage::Unreachable),
            FetchStatus::NotAnImage => Some(DropStage::NotAnImage),
            FetchStatus::TooSmall => Some(DropStage::TooSmall),
        };
    }

    // Stage: exact re-scoring over the threshold population.
    let rescore_all = cfg.threshold_population == ThresholdPopulation::All;
    let indices: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            if rescore_all {
                c.drop.is_none()
                    || c.drop == Some(DropStage::Unreachable)
                    || c.drop == Some(DropStage::NotAnImage)
                    || c.drop == Some(DropStage::TooSmall)
            } else {
                c.drop.is_none()
            }
        })
        .map(|(i, _)| i)
        .collect();
    let scored: Vec<(usize, f32, f32)> = indices
        .par_iter()
        .map(|&i| {
            let c = &candidates[i];
            let row = c.record_id as usize;
            if row >= corpus_exact.count() {
                return Err(Error::MissingExactEmbedding {
                    record_id: c.record_id,
                });
            }
            let (image, text) = rescore(
                corpus_exact.row(row),
                anchors_exact.row(c.anchor_id as usize),
                text_ref,
            )?;
            Ok((i, image, text))
        })
        .collect::<Result<Vec<_>>>()?;
    for &(i, image, text) in &scored {
        candidates[i].image_similarity = Some(image);
        candidates[i].text_similarity = Some(text);
    }

    // Stage: thresholds over the configured population. Fewer than two
    // scores cannot define a distribution; such degenerate runs keep every
    // validated candidate and record no thresholds.
    let population: Vec<(f32, f32)> = scored.iter().map(|&(_, i, t)| (i, t)).collect();
    let thresholds = if population.len() >= 2 {
        Some(compute_thresholds(&population, cfg.multiplier)?)
    } else {
        None
    };

    // Stage: classification. Only fetch-validated candidates can be kept.
    let mut quadrant_counts: BTreeMap<Quadrant, u64> = BTreeMap::new();
    if let Some(thresholds) = &thresholds {
        for c in candidates.iter_mut() {
            let (Some(image), Some(text)) = (c.image_similarity, c.text_similarity) else {
                continue;
            };
            let q = classify_quadrant(image, text, thresholds);
            c.quadrant = Some(q);
            *quadrant_counts.entry(q).or_insert(0) += 1;
            if c.drop.is_none() {
                c.drop = match q {
                    Quadrant::KeptBoth => None,
                    Quadrant::VisualOnly => Some(DropStage::BelowTauText),
                    Quadrant::SemanticOnly => Some(DropStage::BelowTauImage),
                    Quadrant::Neither => Some(DropStage::BelowBoth),
                };
            }
        }
    }

    // Stage: content dedup over the kept set.
    dedup_by_content(&mut candidates)?;

    // Assemble.
    let scored_count = scored.len() as u64;
    let mut per_anchor: BTreeMap<u64, StageCounts> = BTreeMap::new();
    let mut global = StageCounts::default();
    for c in &candidates {
        let entry = per_anchor.entry(c.anchor_id).or_default();
        entry.candidates_in += 1;
        global.candidates_in += 1;
        match c.drop {
            None => {
                entry.kept += 1;
                global.kept += 1;
            }
            Some(stage) => {
                *entry.drops.entry(stage).or_insert(0) += 1;
                *global.drops.entry(stage).or_insert(0) += 1;
            }
        }
    }

    let kept: Vec<Candidate> = candidates
        .iter()
        .filter(|c| c.drop.is_none())
        .cloned()
        .collect();
    let dropped: Vec<Candidate> = candidates
        .into_iter()
        .filter(|c| c.drop.is_some())
        .collect();

    Ok(PipelineOutput {
        kept,
        dropped,
        stats: RunStats {
            anchors_total,
            global,
            per_anchor,
            scored_count,
            quadrant_counts,
            thresholds,
        },
    })
}

/// Load all inputs named by the config and run the pipeline.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let corpus = embed::load_corpus(&cfg.corpus_path)?;
    if corpus.is_empty() {
        // Nothing to extract; the index is not even consulted.
        let anchors_exact = embed::load_embeddings(&cfg.anchor_embeddings)?;
        return Ok(PipelineOutput {
            kept: Vec::new(),
            dropped: Vec::new(),
            stats: RunStats {
                anchors_total: anchors_exact.count() as u64,
                global: StageCounts::default(),
                per_anchor: BTreeMap::new(),
                scored_count: 0,
                quadrant_counts: BTreeMap::new(),
                thresholds: None,
            },
        });
    }
    let index = IvfIndex::load(&cfg.index_path)?;
    let corpus_exact = embed::load_embeddings(&cfg.corpus_embeddings)?;
    let anchors_exact = embed::load_embeddings(&cfg.anchor_embeddings)?;
    let text_matrix = embed::load_embeddings(&cfg.text_embedding)?;
    if text_matrix.count() != 1 {
        return Err(Error::InvalidInput(format!(
            "text embedding file must hold exactly one vector, got {}",
            text_matrix.count()
        )));
    }
    run_pipeline_loaded(
        &index,
        &corpus,
        &corpus_exact,
        &anchors_exact,
        text_matrix.row(0),
        cfg,
    )
}

fn candidate_to_row(c: &Candidate) -> ManifestRow {
    ManifestRow {
        sample_id: 0,
        anchor_id: c.anchor_id,
        record_id: c.record_id,
        url: c.url.clone(),
        caption: c.caption.clone(),
        fast_similarity: c.fast_similarity,
        image_similarity: c.image_similarity,
        text_similarity: c.text_similarity,
        width: c.width,
        height: c.height,
        language: c.language.clone().unwrap_or_default(),
        quadrant: c
            .quadrant
            .map(|q| q.as_str().to_string())
            .unwrap_or_default(),
        drop_stage: c.drop.map(|d| d.as_str().to_string()).unwrap_or_default(),
    }
}

/// Compose the manifest rows in canonical order, numbering rows 1-based.
/// With `keep_dropped`, dropped candidates are interleaved by the same sort
/// key.
pub fn compose_manifest(output: &PipelineOutput, keep_dropped: bool) -> Vec<ManifestRow> {
    let mut all: Vec<&Candidate> = output.kept.iter().collect();
    if keep_dropped {
        all.extend(output.dropped.iter());
    }
    all.sort_by_key(|c| c.sort_key());
    all.iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row = candidate_to_row(c);
            row.sample_id = (i + 1) as u64;
            row
        })
        .collect()
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut rows = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(anchor: u64, record: u64, rank: u32, sim: f32, url: &str) -> Candidate {
        Candidate {
            anchor_id: anchor,
            record_id: record,
            rank,
            fast_similarity: sim,
            url: url.into(),
            caption: String::new(),
            language: None,
            width: None,
            height: None,
            content_digest: None,
            image_similarity: None,
            text_similarity: None,
            quadrant: None,
            drop: None,
        }
    }

    #[test]
    fn url_normalization() {
        assert_eq!(
            normalize_url("  HTTP://Example.COM/Path?Q=1 "),
            "http://example.com/Path?Q=1"
        );
        assert_eq!(normalize_url("https://a.b/x"), "https://a.b/x");
        assert_eq!(normalize_url("file:///TMP/x.PNG"), "file:///TMP/x.PNG");
        assert_eq!(normalize_url("no-scheme/path"), "no-scheme/path");
    }

    #[test]
    fn url_dedup_keeps_highest_similarity() {
        let mut cands = vec![
            candidate(0, 0, 1, 0.9, "http://host/a"),
            candidate(1, 1, 1, 0.8, "http://HOST/a"),
        ];
        dedup_by_url(&mut cands);
        assert_eq!(cands[0].drop, None);
        assert_eq!(cands[1].drop, Some(DropStage::DuplicateUrl));
    }

    #[test]
    fn url_dedup_distinct_urls_untouched() {
        let mut cands = vec![
            candidate(0, 0, 1, 0.9, "http://host/a"),
            candidate(0, 1, 2, 0.8, "http://host/b"),
        ];
        dedup_by_url(&mut cands);
        assert!(cands.iter().all(|c| c.drop.is_none()));
    }

    #[test]
    fn url_dedup_tie_prefers_smaller_anchor_then_record() {
        let mut cands = vec![
            candidate(2, 5, 1, 0.7, "http://h/x"),
            candidate(1, 9, 1, 0.7, "http://h/x"),
            candidate(1, 3, 2, 0.7, "http://h/x"),
        ];
        dedup_by_url(&mut cands);
        let alive: Vec<u64> = cands
            .iter()
            .filter(|c| c.drop.is_none())
            .map(|c| c.record_id)
            .collect();
        assert_eq!(alive, vec![3]);
    }

    #[test]
    fn rescore_identity_and_orthogonal() {
        let anchor = [1.0f32, 0.0, 0.0];
        let text = [0.0f32, 1.0, 0.0];
        let (image, text_sim) = rescore(&anchor, &anchor, &text).unwrap();
        assert!(image >= 1.0 - 1e-6 && image <= 1.0);
        assert_eq!(text_sim, 0.0);

        let record = [0.0f32, 0.0, 1.0];
        let (image, text_sim) = rescore(&record, &anchor, &text).unwrap();
        assert_eq!(image, 0.0);
        assert_eq!(text_sim, 0.0);
    }

    #[test]
    fn thresholds_on_zero_one() {
        let t = compute_thresholds(&[(0.0, 0.0), (1.0, 1.0)], 1.5).unwrap();
        assert!((t.mean_image - 0.5).abs() < 1e-12);
        assert!((t.std_image - 0.5).abs() < 1e-12);
        assert!((t.tau_image - (-0.25)).abs() < 1e-12);
        assert!((t.tau_text - (-0.25)).abs() < 1e-12);
    }

    #[test]
    fn thresholds_degenerate_distribution() {
        let t = compute_thresholds(&[(0.42, 0.1), (0.42, 0.1), (0.42, 0.1)], 1.5).unwrap();
        assert!((t.std_image - 0.0).abs() < 1e-12);
        assert!((t.tau_image - 0.41999998688697815).abs() < 1e-9); // 0.42f32 as f64
        assert_eq!(t.tau_image, t.mean_image);
    }

    #[test]
    fn thresholds_need_two_samples() {
        assert!(matches!(
            compute_thresholds(&[(0.5, 0.5)], 1.5),
            Err(Error::TooFewSamples { got: 1, need: 2 })
        ));
    }

    #[test]
    fn quadrant_boundaries_are_inclusive() {
        let t = FilterThresholds {
            tau_image: 0.5,
            tau_text: 0.2,
            mean_image: 0.0,
            std_image: 0.0,
            mean_text: 0.0,
            std_text: 0.0,
            multiplier: 1.5,
        };
        assert_eq!(classify_quadrant(0.5, 0.2, &t), Quadrant::KeptBoth);
        assert_eq!(classify_quadrant(0.6, 0.1, &t), Quadrant::VisualOnly);
        assert_eq!(classify_quadrant(0.4, 0.3, &t), Quadrant::SemanticOnly);
        assert_eq!(classify_quadrant(0.4, 0.1, &t), Quadrant::Neither);
    }

    #[test]
    fn quadrants_partition_everything() {
        let t = FilterThresholds {
            tau_image: 0.3,
            tau_text: 0.1,
            mean_image: 0.0,
            std_image: 0.0,
            mean_text: 0.0,
            std_text: 0.0,
            multiplier: 1.5,
        };
        let mut counts = BTreeMap::new();
        for i in -10..=10 {
            for j in -10..=10 {
                let q = classify_quadrant(i as f32 / 10.0, j as f32 / 10.0, &t);
                *counts.entry(q).or_insert(0u64) += 1;
            }
        }
        assert_eq!(counts.values().sum::<u64>(), 21 * 21);
        assert_eq!(counts.len(), 4);
    }

    #[test]
    fn content_dedup_keeps_best_similarity() {
        let digest_a = [1u8; 32];
        let digest_b = [2u8; 32];
        let mut cands = vec![
            candidate(0, 0, 1, 0.9, "u0"),
            candidate(0, 1, 2, 0.8, "u1"),
            candidate(0, 2, 3, 0.7, "u2"),
            candidate(0, 3, 4, 0.6, "u3"),
        ];
        cands[0].content_digest = Some(digest_a);
        cands[0].image_similarity = Some(0.8);
        cands[1].content_digest = Some(digest_a);
        cands[1].image_similarity = Some(0.9);
        cands[2].content_digest = Some(digest_a);
        cands[2].image_similarity = Some(0.85);
        cands[3].content_digest = Some(digest_b);
        cands[3].image_similarity = Some(0.1);
        dedup_by_content(&mut cands).unwrap();
        assert_eq!(cands[0].drop, Some(DropStage::DuplicateContent));
        assert_eq!(cands[1].drop, None);
        assert_eq!(cands[2].drop, Some(DropStage::DuplicateContent));
        assert_eq!(cands[3].drop, None);
    }

    #[test]
    fn content_dedup_requires_digest() {
        let mut cands = vec![candidate(0, 7, 1, 0.9, "u")];
        cands[0].image_similarity = Some(0.5);
        assert!(matches!(
            dedup_by_content(&mut cands),
            Err(Error::MissingDigest { record_id: 7 })
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let rows = vec![ManifestRow {
            sample_id: 1,
            anchor_id: 0,
            record_id: 42,
            url: "file:///x.png".into(),
            caption: "a, \"quoted\" caption".into(),
            fast_similarity: 0.75,
            image_similarity: Some(0.8),
            text_similarity: None,
            width: Some(300),
            height: None,
            language: "en".into(),
            quadrant: "kept_both".into(),
            drop_stage: String::new(),
        }];
        let dir = std::env::temp_dir().join("anchorsieve-pipeline-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.csv");
        write_manifest(&rows, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, rows);
        assert!(back[0].is_kept());
    }
}
