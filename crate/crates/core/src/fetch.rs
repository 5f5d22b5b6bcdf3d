//! Candidate retrieval and validation: fetch bytes by URL (http, https, or
//! file for offline runs), probe image dimensions from headers without
//! decoding pixels, enforce the minimum-size rule, and fingerprint content
//! for duplicate removal.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Inclusive minimum width and height for a candidate to count.
pub const DEFAULT_MIN_DIM: u32 = 256;
/// Default response size cap: 64 MiB.
pub const DEFAULT_MAX_BYTES: u64 = 64 * 1024 * 1024;
pub const DEFAULT_MAX_REDIRECTS: u32 = 5;

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub timeout: Duration,
    pub retries: u32,
    pub max_bytes: u64,
    /// Minimum delay between two requests to the same host.
    pub politeness_delay: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            timeout: Duration::from_millis(10_000),
            retries: 2,
            max_bytes: DEFAULT_MAX_BYTES,
            politeness_delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchStatus {
    Ok,
    Unreachable,
    NotAnImage,
    TooSmall,
}

impl FetchStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FetchStatus::Ok => "ok",
            FetchStatus::Unreachable => "unreachable",
            FetchStatus::NotAnImage => "not_an_image",
            FetchStatus::TooSmall => "too_small",
        }
    }
}

/// Outcome of fetching and validating one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchResult {
    pub record_id: u64,
    pub status: FetchStatus,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub content_digest: Option<[u8; 32]>,
    pub byte_count: Option<u64>,
}

/// Fetch the full body behind a URL.
///
/// `file://` paths are read from disk; http and https go through one shared
/// agent with the configured timeout and at most five redirects. Transport
/// failures (DNS, connect, timeout) are retried `retries` times and then
/// reported as `Unreachable`; any status other than 200 is an `HttpStatus`
/// error and is not retried.
pub fn fetch(url: &str, opts: &FetchOptions) -> Result<Vec<u8>> {
    let url = url.trim();
    if let Some(path) = url.strip_prefix("file://") {
        return fetch_file(url, path, opts);
    }
    if url.starts_with("http://") || url.starts_with("https://") {
        return fetch_http(url, opts);
    }
    Err(Error::Unreachable {
        url: url.into(),
        reason: "unsupported URL scheme".into(),
    })
}

fn fetch_file(url: &str, raw_path: &str, opts: &FetchOptions) -> Result<Vec<u8>> {
    // file://host/path is not supported; file:///abs/path keeps the leading
    // slash after stripping the empty host.
    let path = PathBuf::from(raw_path);
    let meta = std::fs::metadata(&path).map_err(|e| Error::Unreachable {
        url: url.into(),
        reason: e.to_string(),
    })?;
    if meta.len() > opts.max_bytes {
        return Err(Error::TooLarge {
            url: url.into(),
            cap: opts.max_bytes,
        });
    }
    std::fs::read(&path).map_err(|e| Error::Unreachable {
        url: url.into(),
        reason: e.to_string(),
    })
}

fn fetch_http(url: &str, opts: &FetchOptions) -> Result<Vec<u8>> {
    let config = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .max_redirects(DEFAULT_MAX_REDIRECTS)
        .timeout_global(Some(opts.timeout))
        .build();
    let agent = ureq::Agent::new_with_config(config);

    let mut last_reason = String::new();
    for _attempt in 0..=opts.retries {
        match agent.get(url).call() {
            Ok(mut response) => {
                let status = response.status().as_u16();
                if status != 200 {
                    return Err(Error::HttpStatus {
                        url: url.into(),
                        status,
                    });
                }
                return match response
                    .body_mut()
                    .with_config()
                    .limit(opts.max_bytes)
                    .read_to_vec()
                {
                    Ok(bytes) => Ok(bytes),
                    Err(ureq::Error::BodyExceedsLimit(_)) => Err(Error::TooLarge {
                        url: url.into(),
                        cap: opts.max_bytes,
                    }),
                    Err(e) => Err(Error::Unreachable {
                        url: url.into(),
                        reason: e.to_string(),
                    }),
                };
            }
            Err(e) => {
                last_reason = e.to_string();
            }
        }
    }
    Err(Error::Unreachable {
        url: url.into(),
        reason: last_reason,
    })
}

/// Read width and height from the image header alone.
///
/// PNG: 8-byte signature, IHDR tag check, then width/height as 32-bit
/// big-endian at offsets 16 and 20. JPEG: walk the marker stream to the
/// first SOF0/SOF1/SOF2 frame header and read height then width as 16-bit
/// big-endian. Never reads beyond the supplied bytes and never allocates
/// proportional to pixel count.
pub fn probe_dimensions(bytes: &[u8]) -> Result<(u32, u32)> {
    const PNG_SIG: [u8; 8] = [0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A];
    if bytes.len() >= 8 && bytes[..8] == PNG_SIG {
        return probe_png(bytes);
    }
    if bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8 {
        return probe_jpeg(bytes);
    }
    Err(Error::UnknownFormat)
}

fn probe_png(bytes: &[u8]) -> Result<(u32, u32)> {
    if bytes.len() < 24 {
        return Err(Error::CorruptHeader("png shorter than IHDR".into()));
    }
    if &bytes[12..16] != b"IHDR" {
        return Err(Error::CorruptHeader("png first chunk is not IHDR".into()));
    }
    let width = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let height = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(Error::CorruptHeader("png declares zero dimension".into()));
    }
    Ok((width, height))
}

fn probe_jpeg(bytes: &[u8]) -> Result<(u32, u32)> {
    let mut pos = 2usize;
    loop {
        // Markers may be preceded by fill bytes (0xFF).
        if pos >= bytes.len() {
            return Err(Error::CorruptHeader("jpeg ended before SOF marker".into()));
        }
        if bytes[pos] != 0xFF {
            return Err(Error::CorruptHeader(format!(
                "jpeg expected marker at {pos}"
            )));
        }
        while pos < bytes.len() && bytes[pos] == 0xFF {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::CorruptHeader("jpeg ended inside marker".into()));
        }
        let marker = bytes[pos];
        pos += 1;
        match marker {
            // Standalone markers without a length field.
            0x01 | 0xD0..=0xD7 => continue,
            0xD9 | 0xDA => {
                // EOI or start-of-scan without a frame header first.
                return Err(Error::CorruptHeader("jpeg has no SOF before scan".into()));
            }
            _ => {}
        }
        if pos + 2 > bytes.len() {
            return Err(Error::CorruptHeader("jpeg segment length truncated".into()));
        }
        let len = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        if len < 2 || pos + len > bytes.len() {
            return Err(Error::CorruptHeader("jpeg segment overruns buffer".into()));
        }
        if matches!(marker, 0xC0..=0xC2) {
            if len < 7 {
                return Err(Error::CorruptHeader("jpeg SOF segment too short".into()));
            }
            let height = u16::from_be_bytes([bytes[pos + 3], bytes[pos + 4]]) as u32;
            let width = u16::from_be_bytes([bytes[pos + 5], bytes[pos + 6]]) as u32;
            if width == 0 || height == 0 {
                return Err(Error::CorruptHeader("jpeg declares zero dimension".into()));
            }
            return Ok((width, height));
        }
        pos += len;
    }
}

/// Probe, size-check, and fingerprint fetched bytes.
///
/// Undecodable bytes yield `NotAnImage` with no digest. Decodable images get
/// a SHA-256 digest of the raw bytes; the status is `TooSmall` unless both
/// dimensions reach `min_dim` (inclusive).
pub fn validate_candidate(record_id: u64, bytes: &[u8], min_dim: u32) -> FetchResult {
    match probe_dimensions(bytes) {
        Err(_) => FetchResult {
            record_id,
            status: FetchStatus::NotAnImage,
            width: None,
            height: None,
            content_digest: None,
            byte_count: Some(bytes.len() as u64),
        },
        Ok((width, height)) => {
            let digest: [u8; 32] = Sha256::digest(bytes).into();
            let status = if width >= min_dim && height >= min_dim {
                FetchStatus::Ok
            } else {
                FetchStatus::TooSmall
            };
            FetchResult {
                record_id,
                status,
                width: Some(width),
                height: Some(height),
                content_digest: Some(digest),
                byte_count: Some(bytes.len() as u64),
            }
        }
    }
}

/// Fetch and validate one candidate, mapping fetch failures to statuses.
pub fn fetch_and_validate(
    record_id: u64,
    url: &str,
    min_dim: u32,
    opts: &FetchOptions,
    politeness: &PolitenessGate,
) -> FetchResult {
    politeness.wait_for(url, opts.politeness_delay);
    match fetch(url, opts) {
        Ok(bytes) => validate_candidate(record_id, &bytes, min_dim),
        Err(_) => FetchResult {
            record_id,
            status: FetchStatus::Unreachable,
            width: None,
            height: None,
            content_digest: None,
            byte_count: None,
        },
    }
}

/// Tracks the last request instant per host to honor the politeness delay.
#[derive(Default)]
pub struct PolitenessGate {
    last: Mutex<HashMap<String, Instant>>,
}

impl PolitenessGate {
    pub fn new() -> Self {
        Self::default()
    }

    fn wait_for(&self, url: &str, delay: Duration) {
        if delay.is_zero() {
            return;
        }
        let host = host_of(url);
        if host.is_empty() {
            return;
        }
        loop {
            let now = Instant::now();
            let mut last = self.last.lock().unwrap();
            match last.get(&host) {
                Some(&t) if now.duration_since(t) < delay => {
                    let remaining = delay - now.duration_since(t);
                    drop(last);
                    std::thread::sleep(remaining);
                }
                _ => {
                    last.insert(host, now);
                    return;
                }
            }
        }
    }
}

fn host_of(url: &str) -> String {
    let rest = match url.find("://") {
        Some(i) => &url[i + 3..],
        None => return String::new(),
    };
    let end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    rest[..end].to_ascii_lowercase()
}

/// Fetch and validate a batch over a bounded worker pool. Results come back
/// sorted by record id; arrival order is never exposed.
pub fn fetch_batch(
    work: &[(u64, String)],
    min_dim: u32,
    opts: &FetchOptions,
    workers: usize,
) -> Vec<FetchResult> {
    let workers = workers.max(1).min(work.len().max(1));
    let gate = PolitenessGate::new();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Mutex<Vec<FetchResult>> = Mutex::new(Vec::with_capacity(work.len()));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= work.len() {
                    break;
                }
                let (record_id, url) = &work[i];
                let res = fetch_and_validate(*record_id, url, min_dim, opts, &gate);
                results.lock().unwrap().push(res);
            });
        }
    });

    let mut out = results.into_inner().unwrap();
    out.sort_by_key(|r| r.record_id);
    out
}
