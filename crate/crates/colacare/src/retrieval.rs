//! Corpus ingestion, chunking, embedding, and cosine top-K retrieval.
//!
//! The index is a linear scan over unit-norm chunk embeddings — exact by
//! construction and trivially comparable against a brute-force oracle.
//! Text embedding goes through the [`TextEmbedder`] trait; the offline
//! default is a signed hashing embedder over unigrams and bigrams.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// One source document of the corpus file (JSON lines of id/title/text).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// A chunk of a source document with its unit-norm embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusChunk {
    pub chunk_id: String,
    pub doc_title: String,
    pub text: String,
    pub embedding: Vec<f64>,
}

/// Ranked retrieval hits for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEvidence {
    /// Short digest of the query text (for transcript bookkeeping).
    pub query_digest: String,
    /// (chunk_id, cosine score), sorted by score descending.
    pub hits: Vec<(String, f64)>,
}

/// In-memory retrieval index; immutable after ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub d: usize,
    pub chunks: Vec<CorpusChunk>,
}

/// Pluggable text embedding provider. Implementations must be deterministic
/// for a fixed input and must return unit-norm vectors of `dim()` entries.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Deterministic signed-hashing embedder: lowercase, split on
/// non-alphanumerics, hash unigrams and bigrams into `d` signed buckets,
/// L2-normalize. Content-free text maps to the unit vector e1.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    d: usize,
}

impl HashEmbedder {
    pub fn new(d: usize) -> Result<Self> {
        if d < 16 {
            return Err(Error::parameter("d", "embedding dimension must be at least 16"));
        }
        Ok(HashEmbedder { d })
    }
}

/// FNV-1a, fixed here so hashes are stable across platforms and builds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Short hex digest used for query bookkeeping.
pub fn digest(text: &str) -> String {
    format!("{:016x}", fnv1a(text.as_bytes()))
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.d
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let tokens = tokenize(text);
        let mut v = vec![0.0f64; self.d];
        let mut bump = |term: &str| {
            let h = fnv1a(term.as_bytes());
            let bucket = (h % self.d as u64) as usize;
            let sign = if h & (1 << 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        };
        for t in &tokens {
            bump(t);
        }
        for pair in tokens.windows(2) {
            bump(&format!("{} {}", pair[0], pair[1]));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

/// Splits `text` into fixed-stride character windows snapped to word
/// boundaries. Window k covers [k·(size−overlap), k·(size−overlap)+size);
/// a document no longer than `size` yields a single chunk.
fn chunk_text(text: &str, size: usize, overlap: usize) -> Vec<(usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= size {
        let t = text.trim();
        return if t.is_empty() { vec![] } else { vec![(0, t.to_string())] };
    }
    let stride = size - overlap;
    let mut out = Vec::new();
    let mut start = 0usize;
    while start < chars.len() {
        // Snap the start forward off the middle of a word.
        let mut s = start;
        if s > 0 && !chars[s - 1].is_whitespace() {
            while s < chars.len() && !chars[s].is_whitespace() {
                s += 1;
            }
        }
        let raw_end = (start + size).min(chars.len());
        // Snap the end back to whitespace unless it already hits the end.
        let mut e = raw_end;
        if e < chars.len() && !chars[e].is_whitespace() {
            while e > s && !chars[e - 1].is_whitespace() {
                e -= 1;
            }
            if e == s {
                e = raw_end; // single huge token: hard split
            }
        }
        if e > s {
            let piece: String = chars[s..e].iter().collect();
            let piece = piece.trim().to_string();
            if !piece.is_empty() {
                out.push((start, piece));
            }
        }
        start += stride;
    }
    out
}

/// Reads a JSONL corpus, chunks every document, and embeds every chunk.
pub fn ingest_corpus(
    path: &Path,
    chunk_size_chars: usize,
    overlap_chars: usize,
    embedder: &dyn TextEmbedder,
) -> Result<CorpusIndex> {
    if overlap_chars >= chunk_size_chars {
        return Err(Error::parameter(
            "overlap_chars",
            "overlap must be smaller than the chunk size",
        ));
    }
    let file = std::fs::File::open(path)?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDoc = serde_json::from_str(&line)
            .map_err(|e| Error::schema(&format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        docs.push(doc);
    }
    build_index(&docs, chunk_size_chars, overlap_chars, embedder)
}

/// Chunks and embeds in-memory documents.
pub fn build_index(
    docs: &[CorpusDoc],
    chunk_size_chars: usize,
    overlap_chars: usize,
    embedder: &dyn TextEmbedder,
) -> Result<CorpusIndex> {
    if overlap_chars >= chunk_size_chars {
        return Err(Error::parameter(
            "overlap_chars",
            "overlap must be smaller than the chunk size",
        ));
    }
    if docs.is_empty() {
        return Err(Error::Ingestion("corpus contains no documents".to_string()));
    }
    let mut pending: Vec<(String, String, String)> = Vec::new();
    for doc in docs {
        let pieces = chunk_text(&doc.text, chunk_size_chars, overlap_chars);
        for (k, (_, piece)) in pieces.into_iter().enumerate() {
            pending.push((format!("{}#{k}", doc.id), doc.title.clone(), piece));
        }
    }
    if pending.is_empty() {
        return Err(Error::Ingestion("corpus documents contain no text".to_string()));
    }
    {
        let mut ids: Vec<&str> = pending.iter().map(|(id, _, _)| id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != pending.len() {
            return Err(Error::Ingestion("duplicate chunk ids (duplicate doc ids?)".to_string()));
        }
    }
    let chunks: Vec<CorpusChunk> = par::map_slice(&pending, true, |(id, title, text)| {
        CorpusChunk {
            chunk_id: id.clone(),
            doc_title: title.clone(),
            text: text.clone(),
            embedding: embedder.embed(text),
        }
    });
    Ok(CorpusIndex { d: embedder.dim(), chunks })
}

impl CorpusIndex {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&CorpusChunk> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }
}

/// Top-K chunks by cosine similarity to the query; ties broken by chunk_id
/// ascending. K larger than the corpus is clamped.
pub fn retrieve(
    index: &CorpusIndex,
    query: &str,
    k: usize,
    embedder: &dyn TextEmbedder,
) -> Result<RetrievedEvidence> {
    retrieve_impl(index, query, k, embedder, true)
}

/// Sequential variant of [`retrieve`] (same result; used by the benches).
pub fn retrieve_serial(
    index: &CorpusIndex,
    query: &str,
    k: usize,
    embedder: &dyn TextEmbedder,
) -> Result<RetrievedEvidence> {
    retrieve_impl(index, query, k, embedder, false)
}

fn retrieve_impl(
    index: &CorpusIndex,
    query: &str,
    k: usize,
    embedder: &dyn TextEmbedder,
    parallel: bool,
) -> Result<RetrievedEvidence> {
    if index.chunks.is_empty() {
        return Err(Error::Ingestion("index is empty".to_string()));
    }
    if k == 0 {
        return Err(Error::parameter("k", "K must be at least 1"));
    }
    if embedder.dim() != index.d {
        return Err(Error::Embedding(format!(
            "embedder dimension {} does not match index dimension {}",
            embedder.dim(),
            index.d
        )));
    }
    let q = embedder.embed(query);
    let mut scored: Vec<(usize, f64)> = par::map_range(index.chunks.len(), parallel, |i| {
        let dot = index.chunks[i]
            .embedding
            .iter()
            .zip(&q)
            .map(|(a, b)| a * b)
            .sum::<f64>();
        (i, dot)
    });
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| index.chunks[a.0].chunk_id.cmp(&index.chunks[b.0].chunk_id))
    });
    scored.truncate(k);
    Ok(RetrievedEvidence {
        query_digest: digest(query),
        hits: scored
            .into_iter()
            .map(|(i, s)| (index.chunks[i].chunk_id.clone(), s))
            .collect(),
    })
}

/// Embedder wrapper that replays a fixed vector, useful in tests.
pub struct ConstantEmbedder {
    pub d: usize,
    pub value: Mutex<Vec<f64>>,
}

impl TextEmbedder for ConstantEmbedder {
    fn dim(&self) -> usize {
        self.d
    }

    fn embed(&self, _text: &str) -> Vec<f64> {
        self.value.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, text: &str) -> CorpusDoc {
        CorpusDoc { id: id.to_string(), title: format!("title {id}"), text: text.to_string() }
    }

    fn words(n: usize, word_len: usize) -> String {
        // "aaaa aaaa ..." — predictable character geometry for chunk tests.
        std::iter::repeat("a".repeat(word_len))
            .take(n)
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn thousand_char_doc_chunks_on_the_stride_grid() {
        // 200 five-char units ("aaaa ") = 1000 chars: windows at 0/300/600/900.
        let text = words(200, 4);
        assert_eq!(text.chars().count(), 999);
        let text = format!("{text} "); // pad to exactly 1000
        let chunks = chunk_text(&text, 400, 100);
        assert_eq!(chunks.len(), 4);
        let starts: Vec<usize> = chunks.iter().map(|(s, _)| *s).collect();
        assert_eq!(starts, vec![0, 300, 600, 900]);
        for (_, piece) in &chunks {
            assert!(piece.chars().count() <= 400);
            assert!(!piece.starts_with(' ') && !piece.ends_with(' '));
        }
    }

    #[test]
    fn short_doc_is_one_chunk() {
        let chunks = chunk_text("just a short note", 400, 100);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].1, "just a short note");
    }

    #[test]
    fn overlap_must_be_smaller_than_chunk() {
        let embedder = HashEmbedder::new(32).unwrap();
        let err = build_index(&[doc("d", "text")], 100, 100, &embedder);
        assert!(err.is_err());
    }

    #[test]
    fn empty_corpus_rejected() {
        let embedder = HashEmbedder::new(32).unwrap();
        assert!(build_index(&[], 400, 100, &embedder).is_err());
    }

    #[test]
    fn hash_embed_deterministic_and_whitespace_insensitive() {
        let e = HashEmbedder::new(128).unwrap();
        let a = e.embed("heart failure");
        let b = e.embed("heart failure");
        let c = e.embed("  heart\tfailure \n");
        assert_eq!(a, b);
        assert_eq!(a, c);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_text_embeds_to_e1() {
        let e = HashEmbedder::new(16).unwrap();
        let v = e.embed("  \t ");
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn disjoint_token_texts_have_low_cosine() {
        let e = HashEmbedder::new(128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vocab: Vec<String> = (0..400).map(|i| format!("w{i}x{}", i * 7 + 1)).collect();
        let mut cosines = Vec::new();
        for _ in 0..100 {
            let mut pool: Vec<&String> = vocab.iter().collect();
            pool.shuffle(&mut rng);
            let n_a = rng.gen_range(5..20);
            let n_b = rng.gen_range(5..20);
            let a: Vec<&str> = pool[..n_a].iter().map(|s| s.as_str()).collect();
            let b: Vec<&str> = pool[n_a..n_a + n_b].iter().map(|s| s.as_str()).collect();
            let va = e.embed(&a.join(" "));
            let vb = e.embed(&b.join(" "));
            let cos: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
            cosines.push(cos.abs());
        }
        cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p95 = cosines[94];
        assert!(p95 < 0.3, "95th percentile |cosine| = {p95}");
    }

    #[test]
    fn self_query_ranks_first_with_unit_score() {
        let e = HashEmbedder::new(64).unwrap();
        let docs = vec![
            doc("a", "fever and chills in the evening"),
            doc("b", "elevated lactate suggests hypoperfusion"),
            doc("c", "renal function declined gradually"),
        ];
        let index = build_index(&docs, 400, 100, &e).unwrap();
        let ev = retrieve(&index, "elevated lactate suggests hypoperfusion", 2, &e).unwrap();
        assert_eq!(ev.hits[0].0, "b#0");
        assert!((ev.hits[0].1 - 1.0).abs() < 1e-9);
        assert_eq!(ev.hits.len(), 2);
    }

    #[test]
    fn k_clamps_to_corpus_size() {
        let e = HashEmbedder::new(64).unwrap();
        let docs: Vec<CorpusDoc> = (0..5).map(|i| doc(&format!("d{i}"), "one two three")).collect();
        let index = build_index(&docs, 400, 100, &e).unwrap();
        let ev = retrieve(&index, "two", 16, &e).unwrap();
        assert_eq!(ev.hits.len(), 5);
        // Equal scores: ordering by chunk_id ascending.
        let ids: Vec<&str> = ev.hits.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["d0#0", "d1#0", "d2#0", "d3#0", "d4#0"]);
    }

    #[test]
    fn matches_bruteforce_scan_and_serial_path() {
        let e = HashEmbedder::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vocab = ["sepsis", "lactate", "renal", "oxygen", "fever", "cardiac", "pressure",
                     "rate", "failure", "shock", "acute", "chronic"];
        let docs: Vec<CorpusDoc> = (0..60)
            .map(|i| {
                let n = rng.gen_range(4..30);
                let text: Vec<&str> =
                    (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
                doc(&format!("d{i:02}"), &text.join(" "))
            })
            .collect();
        let index = build_index(&docs, 80, 20, &e).unwrap();
        let query = "acute renal failure with shock";
        let ev = retrieve(&index, query, 7, &e).unwrap();
        let ev_serial = retrieve_serial(&index, query, 7, &e).unwrap();
        assert_eq!(ev, ev_serial);

        // Brute force over all chunks.
        let q = e.embed(query);
        let mut all: Vec<(String, f64)> = index
            .chunks
            .iter()
            .map(|c| {
                (c.chunk_id.clone(), c.embedding.iter().zip(&q).map(|(a, b)| a * b).sum())
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        all.truncate(7);
        assert_eq!(ev.hits, all);
        assert!(ev.hits.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(ev.hits.iter().all(|(_, s)| (-1.0..=1.0).contains(&(*s - 1e-12))));
    }

    #[test]
    fn index_file_roundtrip() {
        let e = HashEmbedder::new(32).unwrap();
        let index = build_index(&[doc("a", "some corpus text here")], 400, 100, &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        index.save(&path).unwrap();
        let loaded = CorpusIndex::load(&path).unwrap();
        assert_eq!(loaded.d, index.d);
        assert_eq!(
            serde_json::to_string(&loaded).unwrap(),
            serde_json::to_string(&index).unwrap()
        );
    }
}
