//! Run configuration: a line-oriented `key = value` file with `#` comments,
//! built-in presets, and flag overrides applied by the CLI.
//!
//! Recognized keys: `index`, `corpus`, `corpus_embeddings`,
//! `anchor_embeddings`, `text_embedding`, `output_dir`, `preset`, `k`,
//! `min_dim`, `multiplier`, `seed`, `jobs`, `keep_dropped`,
//! `threshold_population`, `timeout_ms`, `retries`,
//! `max_concurrent_fetches`, `max_bytes`, `politeness_delay_ms`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fetch::{DEFAULT_MAX_BYTES, DEFAULT_MIN_DIM};

/// Reference image-similarity threshold published with the ver-0/ver-1
/// corpus releases. Recorded for comparison; runs always derive their own
/// thresholds from the data.
pub const REFERENCE_TAU_IMAGE: f64 = 0.78026;
/// Reference text-similarity threshold, same provenance.
pub const REFERENCE_TAU_TEXT: f64 = 0.14919;

/// Neighbor count of the version-0 release.
pub const VER0_K: usize = 100;
/// Neighbor count of the version-1 release.
pub const VER1_K: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Ver0,
    Ver1,
}

impl Preset {
    pub fn k(&self) -> usize {
        match self {
            Preset::Ver0 => VER0_K,
            Preset::Ver1 => VER1_K,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Ver0 => "ver0",
            Preset::Ver1 => "ver1",
        }
    }

    pub fn from_name(s: &str) -> Option<Preset> {
        match s {
            "ver0" => Some(Preset::Ver0),
            "ver1" => Some(Preset::Ver1),
            _ => None,
        }
    }
}

/// Which candidates feed the threshold statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdPopulation {
    /// Candidates that passed fetch validation (the default).
    #[default]
    Validated,
    /// Every URL-deduplicated candidate, fetchable or not.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub index_path: PathBuf,
    pub corpus_path: PathBuf,
    pub corpus_embeddings: PathBuf,
    pub anchor_embeddings: PathBuf,
    pub text_embedding: PathBuf,
    pub output_dir: PathBuf,
    pub preset: Option<Preset>,
    pub k: usize,
    pub min_dim: u32,
    pub multiplier: f64,
    pub seed: u64,
    /// 0 means "use every core".
    pub jobs: usize,
    pub keep_dropped: bool,
    pub threshold_population: ThresholdPopulation,
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_concurrent_fetches: usize,
    pub max_bytes: u64,
    pub politeness_delay_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            index_path: PathBuf::new(),
            corpus_path: PathBuf::new(),
            corpus_embeddings: PathBuf::new(),
            anchor_embeddings: PathBuf::new(),
            text_embedding: PathBuf::new(),
            output_dir: PathBuf::new(),
            preset: None,
            k: VER0_K,
            min_dim: DEFAULT_MIN_DIM,
            multiplier: 1.5,
            seed: 0,
            jobs: 0,
            keep_dropped: false,
            threshold_population: ThresholdPopulation::Validated,
            timeout_ms: 10_000,
            retries: 2,
            max_concurrent_fetches: 16,
            max_bytes: DEFAULT_MAX_BYTES,
            politeness_delay_ms: 0,
        }
    }
}

impl RunConfig {
    /// Effective fetch worker count: the fetch bound, additionally capped by
    /// `jobs` when set.
    pub fn fetch_workers(&self) -> usize {
        let base = self.max_concurrent_fetches.max(1);
        if self.jobs > 0 {
            base.min(self.jobs)
        } else {
            base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.index_path.as_os_str().is_empty() {
            return Err(Error::MissingRequired("index"));
        }
        if self.corpus_path.as_os_str().is_empty() {
            return Err(Error::MissingRequired("corpus"));
        }
        if self.corpus_embeddings.as_os_str().is_empty() {
            return Err(Error::MissingRequired("corpus_embeddings"));
        }
        if self.anchor_embeddings.as_os_str().is_empty() {
            return Err(Error::MissingRequired("anchor_embeddings"));
        }
        if self.text_embedding.as_os_str().is_empty() {
            return Err(Error::MissingRequired("text_embedding"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::MissingRequired("output_dir"));
        }
        if self.k == 0 {
            return Err(Error::ConfigParse {
                line: 0,
                msg: "k must be positive".into(),
            });
        }
        Ok(())
    }
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::ConfigParse {
            line,
            msg: format!("bad boolean for {key}: `{value}`"),
        }),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::ConfigParse {
        line,
        msg: format!("bad value for {key}: {e}"),
    })
}

/// Parse a config file. Relative paths resolve against the file's directory.
/// Returns the config plus human-readable warnings (an explicit `k` next to
/// a preset is honored but warned about).
pub fn parse_config(path: impl AsRef<Path>) -> Result<(RunConfig, Vec<String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut cfg = RunConfig::default();
    let mut warnings = Vec::new();
    let mut explicit_k: Option<usize> = None;
    let mut preset: Option<Preset> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ConfigParse {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        match key {
            "index" => cfg.index_path = resolve(value),
            "corpus" => cfg.corpus_path = resolve(value),
            "corpus_embeddings" => cfg.corpus_embeddings = resolve(value),
            "anchor_embeddings" => cfg.anchor_embeddings = resolve(value),
            "text_embedding" => cfg.text_embedding = resolve(value),
            "output_dir" => cfg.output_dir = resolve(value),
            "preset" => {
                preset = Some(Preset::from_name(value).ok_or(Error::ConfigParse {
                    line: line_no,
                    msg: format!("unknown preset `{value}` (expected ver0 or ver1)"),
                })?);
            }
            "k" => explicit_k = Some(parse_num(line_no, key, value)?),
            "min_dim" => cfg.min_dim = parse_num(line_no, key, value)?,
            "multiplier" => cfg.multiplier = parse_num(line_no, key, value)?,
            "seed" => cfg.seed = parse_num(line_no, key, value)?,
            "jobs" => cfg.jobs = parse_num(line_no, key, value)?,
            "keep_dropped" => cfg.keep_dropped = parse_bool(line_no, key, value)?,
            "threshold_population" => {
                cfg.threshold_population = match value {
                    "validated" => ThresholdPopulation::Validated,
                    "all" => ThresholdPopulation::All,
                    _ => {
                        return Err(Error::ConfigParse {
                            line: line_no,
                            msg: format!(
                                "bad threshold_population `{value}` (expected validated or all)"
                            ),
                        })
                    }
                }
            }
            "timeout_ms" => cfg.timeout_ms = parse_num(line_no, key, value)?,
            "retries" => cfg.retries = parse_num(line_no, key, value)?,
            "max_concurrent_fetches" => {
                cfg.max_concurrent_fetches = parse_num(line_no, key, value)?
            }
            "max_bytes" => cfg.max_bytes = parse_num(line_no, key, value)?,
            "politeness_delay_ms" => cfg.politeness_delay_ms = parse_num(line_no, key, value)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
    }

    cfg.preset = preset;
    match (preset, explicit_k) {
        (Some(p), Some(k)) => {
            cfg.k = k;
            if k != p.k() {
                warnings.push(format!(
                    "explicit k={k} overrides preset {} (k={})",
                    p.as_str(),
                    p.k()
                ));
            }
        }
        (Some(p), None) => cfg.k = p.k(),
        (None, Some(k)) => cfg.k = k,
        (None, None) => {}
    }

    Ok((cfg, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(name: &str, body: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("anchorsieve-config-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    const BASE: &str = "index = idx.aivf\ncorpus = corpus.csv\ncorpus_embeddings = c.aemb\nanchor_embeddings = a.aemb\ntext_embedding = t.aemb\noutput_dir = out\n";

    #[test]
    fn preset_ver0_sets_k_100() {
        let path = write_config("ver0.conf", &format!("{BASE}preset = ver0\n"));
        let (cfg, warnings) = parse_config(&path).unwrap();
        assert_eq!(cfg.k, 100);
        assert_eq!(cfg.preset, Some(Preset::Ver0));
        assert!(warnings.is_empty());
    }

    #[test]
    fn preset_ver1_sets_k_1000() {
        let path = write_config("ver1.conf", &format!("{BASE}preset = ver1\n"));
        let (cfg, _) = parse_config(&path).unwrap();
        assert_eq!(cfg.k, 1000);
    }

    #[test]
    fn explicit_k_overrides_preset_with_warning() {
        let path = write_config("override.conf", &format!("{BASE}preset = ver0\nk = 250\n"));
        let (cfg, warnings) = parse_config(&path).unwrap();
        assert_eq!(cfg.k, 250);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("ver0"));
    }

    #[test]
    fn unknown_key_names_the_key() {
        let path = write_config("unknown.conf", &format!("{BASE}foo = bar\n"));
        match parse_config(&path) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "foo"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let path = write_config("comments.conf", &format!("# header\n\n{BASE}\n# tail\n"));
        let (cfg, _) = parse_config(&path).unwrap();
        assert!(cfg.index_path.ends_with("idx.aivf"));
        cfg.validate().unwrap();
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let path = write_config("paths.conf", BASE);
        let (cfg, _) = parse_config(&path).unwrap();
        assert!(cfg.corpus_path.is_absolute());
        assert!(cfg
            .corpus_path
            .parent()
            .unwrap()
            .ends_with("anchorsieve-config-tests"));
    }

    #[test]
    fn missing_required_key_is_reported() {
        let path = write_config("missing.conf", "k = 10\n");
        let (cfg, _) = parse_config(&path).unwrap();
        assert!(matches!(
            cfg.validate(),
            Err(Error::MissingRequired("index"))
        ));
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let path = write_config("malformed.conf", "just words\n");
        assert!(matches!(
            parse_config(&path),
            Err(Error::ConfigParse { line: 1, .. })
        ));
    }

    #[test]
    fn reference_constants() {
        assert_eq!(REFERENCE_TAU_IMAGE, 0.78026);
        assert_eq!(REFERENCE_TAU_TEXT, 0.14919);
        assert_eq!(Preset::Ver0.k(), 100);
        assert_eq!(Preset::Ver1.k(), 1000);
    }
}
