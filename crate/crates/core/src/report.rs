//! Dataset statistics over an emitted manifest: per-anchor coverage and
//! match-count histogram, size and language distributions, quadrant counts,
//! and the fast-vs-exact similarity divergence table. Everything here is a
//! pure function of manifest rows, so re-running a report reproduces its
//! outputs byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::{DropStage, FilterThresholds, ManifestRow, Quadrant, RunStats};

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStats {
    pub anchors_total: u64,
    pub anchors_with_results: u64,
    pub coverage_fraction: f64,
    /// Mean kept matches over anchors that contributed at least one; zero
    /// (with `no_results` set) when nothing matched.
    pub mean_matches_per_contributing_anchor: f64,
    pub no_results: bool,
}

impl CoverageStats {
    /// The rounding used in run summaries: percentage to two decimals, mean
    /// to one.
    pub fn coverage_percent_str(&self) -> String {
        format!("{:.2}%", self.coverage_fraction * 100.0)
    }

    pub fn mean_matches_str(&self) -> String {
        format!("{:.1}", self.mean_matches_per_contributing_anchor)
    }
}

fn kept_rows(rows: &[ManifestRow]) -> impl Iterator<Item = &ManifestRow> {
    rows.iter().filter(|r| r.is_kept())
}

fn kept_per_anchor(rows: &[ManifestRow]) -> BTreeMap<u64, u64> {
    let mut counts = BTreeMap::new();
    for row in kept_rows(rows) {
        *counts.entry(row.anchor_id).or_insert(0u64) += 1;
    }
    counts
}

/// Coverage fraction (contributing anchors / total) and mean kept matches
/// per contributing anchor.
pub fn coverage_stats(rows: &[ManifestRow], anchors_total: u64) -> Result<CoverageStats> {
    if anchors_total == 0 {
        return Err(Error::ZeroAnchors);
    }
    let per_anchor = kept_per_anchor(rows);
    let contributing = per_anchor.len() as u64;
    let total_kept: u64 = per_anchor.values().sum();
    let no_results = contributing == 0;
    Ok(CoverageStats {
        anchors_total,
        anchors_with_results: contributing,
        coverage_fraction: contributing as f64 / anchors_total as f64,
        mean_matches_per_contributing_anchor: if no_results {
            0.0
        } else {
            total_kept as f64 / contributing as f64
        },
        no_results,
    })
}

/// Frequency of per-anchor kept counts, including the zero bucket for
/// anchors that contributed nothing.
pub fn match_histogram(rows: &[ManifestRow], anchors_total: u64) -> BTreeMap<u64, u64> {
    let per_anchor = kept_per_anchor(rows);
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    let silent = anchors_total.saturating_sub(per_anchor.len() as u64);
    if silent > 0 {
        hist.insert(0, silent);
    }
    for count in per_anchor.values() {
        *hist.entry(*count).or_insert(0) += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeStats {
    pub rows: u64,
    pub mean_width: f64,
    pub mean_height: f64,
    pub max_width: u32,
    pub max_height: u32,
}

/// Arithmetic mean (reported to one decimal) and exact maxima of kept-row
/// dimensions. Rows without dimensions are skipped.
pub fn size_stats(rows: &[ManifestRow]) -> SizeStats {
    let mut n = 0u64;
    let (mut sum_w, mut sum_h) = (0f64, 0f64);
    let (mut max_w, mut max_h) = (0u32, 0u32);
    for row in kept_rows(rows) {
        let (Some(w), Some(h)) = (row.width, row.height) else {
            continue;
        };
        n += 1;
        sum_w += w as f64;
        sum_h += h as f64;
        max_w = max_w.max(w);
        max_h = max_h.max(h);
    }
    SizeStats {
        rows: n,
        mean_width: if n > 0 { sum_w / n as f64 } else { 0.0 },
        mean_height: if n > 0 { sum_h / n as f64 } else { 0.0 },
        max_width: max_w,
        max_height: max_h,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageStats {
    /// Fraction per tag over rows with a non-empty tag.
    pub fractions: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub labeled: u64,
    pub unlabeled: u64,
}

/// Language fractions over kept rows with non-empty tags; empty tags are
/// counted separately as unlabeled.
pub fn language_distribution(rows: &[ManifestRow]) -> LanguageStats {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut labeled = 0u64;
    let mut unlabeled = 0u64;
    for row in kept_rows(rows) {
        if row.language.is_empty() {
            unlabeled += 1;
        } else {
            labeled += 1;
            *counts.entry(row.language.clone()).or_insert(0) += 1;
        }
    }
    let fractions = counts
        .iter()
        .map(|(tag, &c)| (tag.clone(), c as f64 / labeled.max(1) as f64))
        .collect();
    LanguageStats {
        fractions,
        counts,
        labeled,
        unlabeled,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub n_bins: usize,
    /// Row-major `n_bins x n_bins` counts; fast similarity indexes the row,
    /// exact similarity the column, both binned over [-1, 1].
    pub bins: Vec<u64>,
    pub total: u64,
    pub overestimated: u64,
    pub overestimation_rate: f64,
}

fn bin_of(value: f32, n_bins: usize) -> usize {
    let x = ((value as f64 + 1.0) / 2.0 * n_bins as f64).floor() as isize;
    x.clamp(0, n_bins as isize - 1) as usize
}

/// 2-D histogram of (fast, exact) similarity pairs plus the overestimation
/// rate (fraction with fast strictly above exact). Uses every row that
/// carries both similarities, kept or dropped.
pub fn divergence_report(rows: &[ManifestRow], n_bins: usize) -> DivergenceReport {
    let n_bins = n_bins.max(1);
    let mut bins = vec![0u64; n_bins * n_bins];
    let mut total = 0u64;
    let mut overestimated = 0u64;
    for row in rows {
        let Some(exact) = row.image_similarity else {
            continue;
        };
        let fast = row.fast_similarity;
        bins[bin_of(fast, n_bins) * n_bins + bin_of(exact, n_bins)] += 1;
        total += 1;
        if fast > exact {
            overestimated += 1;
        }
    }
    DivergenceReport {
        n_bins,
        bins,
        total,
        overestimated,
        overestimation_rate: if total > 0 {
            overestimated as f64 / total as f64
        } else {
            0.0
        },
    }
}

/// Keep rows whose text similarity reaches the bound (the gallery selection
/// rule; rows without a text similarity are dropped by the filter).
pub fn filter_min_text_sim(rows: &[ManifestRow], min_text_sim: f32) -> Vec<ManifestRow> {
    rows.iter()
        .filter(|r| {
            r.text_similarity
                .map(|t| t >= min_text_sim)
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub fn write_histogram_csv(hist: &BTreeMap<u64, u64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "matches,anchors").map_err(|e| Error::io(path, e))?;
    for (count, freq) in hist {
        writeln!(w, "{count},{freq}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_divergence_csv(div: &DivergenceReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "fast_low,fast_high,exact_low,exact_high,count").map_err(|e| Error::io(path, e))?;
    let width = 2.0 / div.n_bins as f64;
    for fi in 0..div.n_bins {
        for ei in 0..div.n_bins {
            let count = div.bins[fi * div.n_bins + ei];
            if count == 0 {
                continue;
            }
            let f_low = -1.0 + fi as f64 * width;
            let e_low = -1.0 + ei as f64 * width;
            writeln!(
                w,
                "{:.4},{:.4},{:.4},{:.4},{count}",
                f_low,
                f_low + width,
                e_low,
                e_low + width
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_quadrants_csv(counts: &BTreeMap<Quadrant, u64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "quadrant,count").map_err(|e| Error::io(path, e))?;
    for q in [
        Quadrant::KeptBoth,
        Quadrant::VisualOnly,
        Quadrant::SemanticOnly,
        Quadrant::Neither,
    ] {
        writeln!(w, "{},{}", q.as_str(), counts.get(&q).copied().unwrap_or(0))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_languages_csv(lang: &LanguageStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "language,count,fraction").map_err(|e| Error::io(path, e))?;
    for (tag, count) in &lang.counts {
        writeln!(w, "{tag},{count},{}", lang.fractions[tag]).map_err(|e| Error::io(path, e))?;
    }
    writeln!(w, "unlabeled,{},", lang.unlabeled).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Quadrant counts recomputed from manifest rows (kept and dropped rows that
/// carry a quadrant).
pub fn quadrant_counts(rows: &[ManifestRow]) -> BTreeMap<Quadrant, u64> {
    let mut counts = BTreeMap::new();
    for row in rows {
        if let Some(q) = Quadrant::from_name(&row.quadrant) {
            *counts.entry(q).or_insert(0u64) += 1;
        }
    }
    counts
}

/// Drop-stage counts recomputed from manifest rows.
pub fn drop_counts(rows: &[ManifestRow]) -> BTreeMap<DropStage, u64> {
    let mut counts = BTreeMap::new();
    for row in rows {
        if let Some(d) = DropStage::from_name(&row.drop_stage) {
            *counts.entry(d).or_insert(0u64) += 1;
        }
    }
    counts
}

/// The plain-text run summary. Line-oriented `key=value`, fixed order, no
/// timestamps, so identical runs produce identical bytes.
pub fn write_stats_txt(
    rows: &[ManifestRow],
    stats: Option<&RunStats>,
    anchors_total: u64,
    n_bins: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);

    let coverage = coverage_stats(rows, anchors_total.max(1))?;
    let sizes = size_stats(rows);
    let langs = language_distribution(rows);
    let div = divergence_report(rows, n_bins);
    let kept = rows.iter().filter(|r| r.is_kept()).count();

    writeln!(w, "anchors_total={anchors_total}").map_err(io)?;
    writeln!(w, "anchors_with_results={}", coverage.anchors_with_results).map_err(io)?;
    writeln!(w, "coverage={}", coverage.coverage_percent_str()).map_err(io)?;
    writeln!(
        w,
        "mean_matches_per_contributing_anchor={}",
        coverage.mean_matches_str()
    )
    .map_err(io)?;
    writeln!(w, "kept_rows={kept}").map_err(io)?;
    if let Some(stats) = stats {
        writeln!(w, "candidates_in={}", stats.global.candidates_in).map_err(io)?;
        writeln!(w, "scored_candidates={}", stats.scored_count).map_err(io)?;
        for stage in DropStage::ALL {
            writeln!(
                w,
                "dropped_{}={}",
                stage.as_str(),
                stats.global.drops.get(&stage).copied().unwrap_or(0)
            )
            .map_err(io)?;
        }
        if let Some(t) = &stats.thresholds {
            write_thresholds(&mut w, t).map_err(io)?;
        }
        for q in [
            Quadrant::KeptBoth,
            Quadrant::VisualOnly,
            Quadrant::SemanticOnly,
            Quadrant::Neither,
        ] {
            writeln!(
                w,
                "quadrant_{}={}",
                q.as_str(),
                stats.quadrant_counts.get(&q).copied().unwrap_or(0)
            )
            .map_err(io)?;
        }
    }
    writeln!(w, "mean_width={:.1}", sizes.mean_width).map_err(io)?;
    writeln!(w, "mean_height={:.1}", sizes.mean_height).map_err(io)?;
    writeln!(w, "max_width={}", sizes.max_width).map_err(io)?;
    writeln!(w, "max_height={}", sizes.max_height).map_err(io)?;
    writeln!(w, "language_labeled={}", langs.labeled).map_err(io)?;
    writeln!(w, "language_unlabeled={}", langs.unlabeled).map_err(io)?;
    for (tag, frac) in &langs.fractions {
        writeln!(w, "language_{tag}={:.4}", frac).map_err(io)?;
    }
    writeln!(w, "divergence_pairs={}", div.total).map_err(io)?;
    writeln!(w, "overestimation_rate={}", div.overestimation_rate).map_err(io)?;
    w.flush().map_err(io)
}

fn write_thresholds<W: Write>(w: &mut W, t: &FilterThresholds) -> std::io::Result<()> {
    writeln!(w, "tau_image={}", t.tau_image)?;
    writeln!(w, "tau_text={}", t.tau_text)?;
    writeln!(w, "mean_image={}", t.mean_image)?;
    writeln!(w, "std_image={}", t.std_image)?;
    writeln!(w, "mean_text={}", t.mean_text)?;
    writeln!(w, "std_text={}", t.std_text)?;
    writeln!(w, "multiplier={}", t.multiplier)
}
