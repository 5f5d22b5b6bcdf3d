//! Shared test support: a scriptable local HTTP stub and an independent
//! straight-line re-implementation of every pipeline stage, used as the
//! end-to-end oracle.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

// ---------------------------------------------------------------------------
// HTTP stub server

/// Behaviors the stub supports, keyed by request path:
///   /ok            -> 200 with the configured body
///   /status/<n>    -> response with status n and a tiny body
///   /hang          -> accepts, never answers (client times out)
///   /chain/<n>     -> 302 to /chain/<n-1>; /chain/0 -> 200 body
///   /big           -> 200 with a large body
/// Request counts per path are recorded for retry assertions.
pub struct StubServer {
    addr: String,
    hits: Arc<Mutex<HashMap<String, u32>>>,
    stop: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(body: Vec<u8>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        listener.set_nonblocking(true).unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let hits: Arc<Mutex<HashMap<String, u32>>> = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));

        let thread_hits = hits.clone();
        let thread_stop = stop.clone();
        let handle = std::thread::spawn(move || {
            let body = Arc::new(body);
            while !thread_stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        // One thread per connection so a hanging handler
                        // never blocks concurrent retry attempts.
                        let body = body.clone();
                        let hits = thread_hits.clone();
                        std::thread::spawn(move || {
                            let _ = handle_conn(stream, &body, &hits);
                        });
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });

        StubServer {
            addr,
            hits,
            stop,
            handle: Some(handle),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.addr, path)
    }

    pub fn hits(&self, path: &str) -> u32 {
        self.hits.lock().unwrap().get(path).copied().unwrap_or(0)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_conn(
    mut stream: TcpStream,
    body: &[u8],
    hits: &Mutex<HashMap<String, u32>>,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(500)))?;
    let mut buf = [0u8; 4096];
    let n = stream.read(&mut buf)?;
    let request = String::from_utf8_lossy(&buf[..n]).to_string();
    let path = request
        .lines()
        .next()
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or("/")
        .to_string();
    *hits.lock().unwrap().entry(path.clone()).or_insert(0) += 1;

    if path == "/hang" {
        // Hold the socket open past any client timeout.
        std::thread::sleep(Duration::from_millis(1500));
        return Ok(());
    }
    if let Some(rest) = path.strip_prefix("/status/") {
        let status: u16 = rest.parse().unwrap_or(500);
        let head =
            format!("HTTP/1.1 {status} X\r\nContent-Length: 4\r\nConnection: close\r\n\r\ngone");
        stream.write_all(head.as_bytes())?;
        return Ok(());
    }
    if let Some(rest) = path.strip_prefix("/chain/") {
        let depth: u32 = rest.parse().unwrap_or(0);
        if depth > 0 {
            let head = format!(
                "HTTP/1.1 302 Found\r\nLocation: /chain/{}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n",
                depth - 1
            );
            stream.write_all(head.as_bytes())?;
            return Ok(());
        }
    }
    if path == "/big" {
        let big = vec![0x42u8; 256 * 1024];
        let head = format!(
            "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            big.len()
        );
        stream.write_all(head.as_bytes())?;
        stream.write_all(&big)?;
        return Ok(());
    }
    let head = format!(
        "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(body)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Independent pipeline oracle

/// Minimal AEMB reader, written against the documented layout rather than
/// the library loader.
pub fn oracle_load_aemb(path: &Path) -> (usize, Vec<Vec<f32>>) {
    let bytes = std::fs::read(path).expect("read aemb");
    assert_eq!(&bytes[0..4], b"AEMB");
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let mut rows = Vec::with_capacity(count);
    let mut off = 20;
    for _ in 0..count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        rows.push(row);
    }
    (dim, rows)
}

/// f64-accumulated dot in index order; the same rounding contract the
/// implementation documents, written independently.
pub fn odot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc.clamp(-1.0, 1.0) as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub sample_id: u64,
    pub anchor_id: u64,
    pub record_id: u64,
    pub rank: u32,
    pub url: String,
    pub caption: String,
    pub language: String,
    pub fast: f32,
    pub image_sim: Option<f32>,
    pub text_sim: Option<f32>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub quadrant: String,
    pub drop_stage: String,
}

pub struct OracleCorpusRow {
    pub record_id: u64,
    pub url: String,
    pub caption: String,
    pub language: String,
}

pub struct OracleTruth {
    pub kind: String,
    pub width: u32,
    pub height: u32,
    pub byte_group: String,
}

pub struct OracleOutput {
    /// Kept rows in manifest order, sample ids assigned.
    pub kept: Vec<OracleRow>,
    /// All rows (kept + dropped) in manifest order with sample ids, the
    /// keep-dropped manifest shape.
    pub all: Vec<OracleRow>,
    pub tau_image: f64,
    pub tau_text: f64,
    pub drop_counts: HashMap<String, u64>,
}

pub fn oracle_read_corpus(path: &Path) -> Vec<OracleCorpusRow> {
    let mut rdr = csv::Reader::from_path(path).expect("corpus csv");
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            OracleCorpusRow {
                record_id: r[0].parse().unwrap(),
                url: r[1].to_string(),
                caption: r[2].to_string(),
                language: r[3].to_string(),
            }
        })
        .collect()
}

pub fn oracle_read_truth(path: &Path) -> Vec<OracleTruth> {
    let mut rdr = csv::Reader::from_path(path).expect("truth csv");
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            OracleTruth {
                kind: r[1].to_string(),
                width: r[3].parse().unwrap_or(0),
                height: r[4].parse().unwrap_or(0),
                byte_group: r[5].to_string(),
            }
        })
        .collect()
}

fn oracle_normalize_url(url: &str) -> String {
    let url = url.trim();
    match url.find("://") {
        None => url.to_string(),
        Some(sep) => {
            let scheme = url[..sep].to_lowercase();
            let rest = &url[sep + 3..];
            let host_end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
            format!(
                "{scheme}://{}{}",
                rest[..host_end].to_lowercase(),
                &rest[host_end..]
            )
        }
    }
}

/// Brute-force every stage of the extraction over a generated fixture.
///
/// Fetch outcomes come from the ground-truth sidecar (missing files,
/// non-image payloads, recorded dimensions) and byte equality from the
/// generator's byte groups, so no pipeline code is consulted.
pub fn run_oracle(fixture_dir: &Path, k: usize, min_dim: u32, multiplier: f64) -> OracleOutput {
    let corpus = oracle_read_corpus(&fixture_dir.join("corpus.csv"));
    let truth = oracle_read_truth(&fixture_dir.join("groundtruth.csv"));
    let (_, corpus_vecs) = oracle_load_aemb(&fixture_dir.join("corpus_exact.aemb"));
    let (_, anchor_vecs) = oracle_load_aemb(&fixture_dir.join("anchors.aemb"));
    let (_, text_vecs) = oracle_load_aemb(&fixture_dir.join("text_ref.aemb"));
    let text_ref = &text_vecs[0];

    #[derive(Clone)]
    struct Cand {
        anchor: u64,
        record: u64,
        rank: u32,
        fast: f32,
        image: Option<f32>,
        text: Option<f32>,
        width: Option<u32>,
        height: Option<u32>,
        drop: Option<&'static str>,
        quadrant: String,
    }

    // Stage: exhaustive query per anchor.
    let mut cands: Vec<Cand> = Vec::new();
    for (a, anchor) in anchor_vecs.iter().enumerate() {
        let mut sims: Vec<(u64, f32)> = corpus_vecs
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u64, odot(v, anchor)))
            .collect();
        sims.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then_with(|| x.0.cmp(&y.0)));
        for (rank0, (record, fast)) in sims.into_iter().take(k).enumerate() {
            cands.push(Cand {
                anchor: a as u64,
                record,
                rank: (rank0 + 1) as u32,
                fast,
                image: None,
                text: None,
                width: None,
                height: None,
                drop: None,
                quadrant: String::new(),
            });
        }
    }
    cands.sort_by_key(|c| (c.anchor, c.rank, c.record));

    // Stage: URL dedup (highest fast similarity; ties smaller anchor then
    // record).
    let mut best: HashMap<String, usize> = HashMap::new();
    for i in 0..cands.len() {
        let key = oracle_normalize_url(&corpus[cands[i].record as usize].url);
        match best.get(&key).copied() {
            None => {
                best.insert(key, i);
            }
            Some(j) => {
                let wins = cands[i].fast > cands[j].fast
                    || (cands[i].fast == cands[j].fast
                        && (cands[i].anchor, cands[i].record) < (cands[j].anchor, cands[j].record));
                if wins {
                    cands[j].drop = Some("duplicate_url");
                    best.insert(key, i);
                } else {
                    cands[i].drop = Some("duplicate_url");
                }
            }
        }
    }

    // Stage: fetch + validate from ground truth.
    for c in cands.iter_mut() {
        if c.drop.is_some() {
            continue;
        }
        let t = &truth[c.record as usize];
        match t.kind.as_str() {
            "bg_unreachable" => c.drop = Some("unreachable"),
            "bg_junk" => c.drop = Some("not_an_image"),
            _ => {
                c.width = Some(t.width);
                c.height = Some(t.height);
                if t.width < min_dim || t.height < min_dim {
                    c.drop = Some("too_small");
                }
            }
        }
    }

    // Stage: exact re-scoring of fetch survivors.
    for c in cands.iter_mut() {
        if c.drop.is_some() {
            continue;
        }
        let v = &corpus_vecs[c.record as usize];
        c.image = Some(odot(v, &anchor_vecs[c.anchor as usize]));
        c.text = Some(odot(v, text_ref));
    }

    // Stage: thresholds (population std over the scored set).
    let scored: Vec<(f64, f64)> = cands
        .iter()
        .filter(|c| c.image.is_some())
        .map(|c| (c.image.unwrap() as f64, c.text.unwrap() as f64))
        .collect();
    let n = scored.len() as f64;
    let mean_i = scored.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_t = scored.iter().map(|s| s.1).sum::<f64>() / n;
    let var_i = scored.iter().map(|s| (s.0 - mean_i).powi(2)).sum::<f64>() / n;
    let var_t = scored.iter().map(|s| (s.1 - mean_t).powi(2)).sum::<f64>() / n;
    let tau_image = mean_i - multiplier * var_i.sqrt();
    let tau_text = mean_t - multiplier * var_t.sqrt();

    // Stage: quadrant classification, inclusive on the keep side.
    for c in cands.iter_mut() {
        let (Some(image), Some(text)) = (c.image, c.text) else {
            continue;
        };
        let image_ok = image as f64 >= tau_image;
        let text_ok = text as f64 >= tau_text;
        c.quadrant = match (image_ok, text_ok) {
            (true, true) => "kept_both",
            (true, false) => "visual_only",
            (false, true) => "semantic_only",
            (false, false) => "neither",
        }
        .to_string();
        if c.drop.is_none() {
            c.drop = match (image_ok, text_ok) {
                (true, true) => None,
                (true, false) => Some("below_tau_text"),
                (false, true) => Some("below_tau_image"),
                (false, false) => Some("below_both"),
            };
        }
    }

    // Stage: content dedup by the generator's byte groups.
    let mut best_content: HashMap<String, usize> = HashMap::new();
    for i in 0..cands.len() {
        if cands[i].drop.is_some() {
            continue;
        }
        let group = truth[cands[i].record as usize].byte_group.clone();
        match best_content.get(&group).copied() {
            None => {
                best_content.insert(group, i);
            }
            Some(j) => {
                let si = cands[i].image.unwrap();
                let sj = cands[j].image.unwrap();
                let wins = si > sj || (si == sj && cands[i].record < cands[j].record);
                if wins {
                    cands[j].drop = Some("duplicate_content");
                    best_content.insert(group, i);
                } else {
                    cands[i].drop = Some("duplicate_content");
                }
            }
        }
    }

    let mut drop_counts: HashMap<String, u64> = HashMap::new();
    for c in &cands {
        if let Some(d) = c.drop {
            *drop_counts.entry(d.to_string()).or_insert(0) += 1;
        }
    }

    let to_row = |c: &Cand, sample_id: u64| OracleRow {
        sample_id,
        anchor_id: c.anchor,
        record_id: c.record,
        rank: c.rank,
        url: corpus[c.record as usize].url.clone(),
        caption: corpus[c.record as usize].caption.clone(),
        language: corpus[c.record as usize].language.clone(),
        fast: c.fast,
        image_sim: c.image,
        text_sim: c.text,
        width: c.width,
        height: c.height,
        quadrant: c.quadrant.clone(),
        drop_stage: c.drop.unwrap_or("").to_string(),
    };

    let kept: Vec<OracleRow> = cands
        .iter()
        .filter(|c| c.drop.is_none())
        .enumerate()
        .map(|(i, c)| to_row(c, (i + 1) as u64))
        .collect();
    let all: Vec<OracleRow> = cands
        .iter()
        .enumerate()
        .map(|(i, c)| to_row(c, (i + 1) as u64))
        .collect();

    OracleOutput {
        kept,
        all,
        tau_image,
        tau_text,
        drop_counts,
    }
}
