//! Corpus ingestion: JSONL documents segmented into overlapping token chunks.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FairRagError, Result};
use crate::util::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocSource {
    Wiki,
    Webpage,
    Other,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source: DocSource,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub token_span: (usize, usize),
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChunkerConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self {
            chunk_size: 512,
            overlap: 128,
        }
    }
}

impl ChunkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(FairRagError::InvalidChunkerConfig {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

/// A token with its byte range in the source text. Tokens are lowercased
/// alphanumeric runs; the span points at the original (uncased) bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Unicode-aware word segmentation: maximal runs of alphanumeric characters,
/// lowercased. Punctuation and whitespace are dropped.
pub fn tokenize_with_spans(text: &str) -> Vec<SpannedToken> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0usize;
    for (idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = idx;
            }
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(SpannedToken {
                text: std::mem::take(&mut current),
                byte_start: start,
                byte_end: idx,
            });
        }
    }
    if !current.is_empty() {
        tokens.push(SpannedToken {
            text: current,
            byte_start: start,
            byte_end: text.len(),
        });
    }
    tokens
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|t| t.text).collect()
}

/// Segments one document into overlapping windows of `chunk_size` tokens with
/// stride `chunk_size - overlap`. The final window may be shorter; windows
/// stop once the previous one reached the end of the document.
pub fn chunk_document(doc: &Document, config: &ChunkerConfig) -> Result<Vec<Chunk>> {
    config.validate()?;
    if doc.body.trim().is_empty() {
        return Err(FairRagError::EmptyBody(doc.doc_id.clone()));
    }
    let tokens = tokenize_with_spans(&doc.body);
    let n = tokens.len();
    let mut chunks = Vec::new();
    if n == 0 {
        return Err(FairRagError::EmptyBody(doc.doc_id.clone()));
    }
    let stride = config.stride();
    let mut start = 0usize;
    loop {
        let end = (start + config.chunk_size).min(n);
        let byte_start = tokens[start].byte_start;
        let byte_end = tokens[end - 1].byte_end;
        chunks.push(Chunk {
            chunk_id: format!("{}#{:04}", doc.doc_id, chunks.len()),
            doc_id: doc.doc_id.clone(),
            token_span: (start, end),
            text: doc.body[byte_start..byte_end].to_string(),
            token_count: end - start,
        });
        if end >= n {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreManifest {
    pub config: ChunkerConfig,
    pub doc_count: usize,
    pub chunk_count: usize,
    pub content_hash: String,
}

/// Immutable chunk store produced by `ingest`. Ordered by insertion
/// (document order, then chunk order within a document).
#[derive(Debug, Clone)]
pub struct ChunkStore {
    pub chunks: Vec<Chunk>,
    pub manifest: StoreManifest,
    by_id: BTreeMap<String, usize>,
}

impl ChunkStore {
    fn new(chunks: Vec<Chunk>, config: ChunkerConfig, doc_count: usize) -> Self {
        let mut lines = String::new();
        for c in &chunks {
            lines.push_str(&serde_json::to_string(c).expect("chunk serializes"));
            lines.push('\n');
        }
        let content_hash = format!("{:x}", Sha256::digest(lines.as_bytes()));
        let by_id = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        let manifest = StoreManifest {
            config,
            doc_count,
            chunk_count: chunks.len(),
            content_hash,
        };
        Self {
            chunks,
            manifest,
            by_id,
        }
    }

    pub fn from_chunks(chunks: Vec<Chunk>, config: ChunkerConfig) -> Self {
        let doc_count = chunks
            .iter()
            .map(|c| c.doc_id.as_str())
            .collect::<HashSet<_>>()
            .len();
        Self::new(chunks, config, doc_count)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// Persists the store as a directory: chunks.jsonl + manifest.json.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut body = Vec::new();
        for c in &self.chunks {
            serde_json::to_writer(&mut body, c)?;
            body.push(b'\n');
        }
        atomic_write(&dir.join("chunks.jsonl"), &body)?;
        atomic_write(
            &dir.join("manifest.json"),
            &serde_json::to_vec_pretty(&self.manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(FairRagError::MissingFile(manifest_path));
        }
        let manifest: StoreManifest =
            serde_json::from_reader(BufReader::new(File::open(&manifest_path)?))?;
        let chunks_path = dir.join("chunks.jsonl");
        let reader = BufReader::new(File::open(&chunks_path)?);
        let mut chunks = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk =
                serde_json::from_str(&line).map_err(|e| FairRagError::MalformedJsonl {
                    path: chunks_path.clone(),
                    line: lineno + 1,
                    source: e,
                })?;
            chunks.push(chunk);
        }
        let config = manifest.config;
        let doc_count = manifest.doc_count;
        Ok(Self::new(chunks, config, doc_count))
    }
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|_| FairRagError::MissingFile(path.to_path_buf()))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| FairRagError::MalformedJsonl {
            path: path.to_path_buf(),
            line: lineno + 1,
            source: e,
        })?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(FairRagError::DuplicateDocId(doc.doc_id));
        }
        if doc.body.trim().is_empty() {
            return Err(FairRagError::EmptyBody(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads a JSONL corpus of documents and chunks every one.
pub fn ingest(corpus_path: &Path, config: ChunkerConfig) -> Result<ChunkStore> {
    config.validate()?;
    let docs = read_documents(corpus_path)?;
    let mut chunks = Vec::new();
    for doc in &docs {
        chunks.extend(chunk_document(doc, &config)?);
    }
    Ok(ChunkStore::new(chunks, config, docs.len()))
}

/// Writes a chunk JSONL file (debug helper for the CLI).
pub fn write_chunks_jsonl(chunks: &[Chunk], out: &mut dyn Write) -> Result<()> {
    for c in chunks {
        serde_json::to_writer(&mut *out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_of_tokens(n: usize) -> Document {
        let body = (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        Document {
            doc_id: "d1".into(),
            source: DocSource::Other,
            title: String::new(),
            body,
        }
    }

    // Independent oracle: enumerate expected windows by stride and check
    // coverage and overlap directly.
    fn window_oracle(n: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
        let stride = size - overlap;
        let mut spans = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + size).min(n);
            spans.push((start, end));
            if end >= n {
                break;
            }
            start += stride;
        }
        spans
    }

    #[test]
    fn exact_window_single_chunk() {
        let cfg = ChunkerConfig::default();
        let chunks = chunk_document(&doc_of_tokens(512), &cfg).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_span, (0, 512));
        assert_eq!(chunks[0].token_count, 512);
    }

    #[test]
    fn nine_hundred_tokens_three_windows() {
        let cfg = ChunkerConfig::default();
        let chunks = chunk_document(&doc_of_tokens(900), &cfg).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.token_span).collect();
        assert_eq!(spans, vec![(0, 512), (384, 896), (768, 900)]);
        assert_eq!(spans, window_oracle(900, 512, 128));
    }

    #[test]
    fn short_document_one_chunk() {
        let cfg = ChunkerConfig::default();
        let chunks = chunk_document(&doc_of_tokens(100), &cfg).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, 100);
    }

    #[test]
    fn coverage_and_stride_property() {
        let cfg = ChunkerConfig {
            chunk_size: 7,
            overlap: 3,
        };
        for n in 1..60 {
            let chunks = chunk_document(&doc_of_tokens(n), &cfg).unwrap();
            let spans: Vec<_> = chunks.iter().map(|c| c.token_span).collect();
            assert_eq!(spans, window_oracle(n, 7, 3), "n={n}");
            // full coverage
            assert_eq!(spans[0].0, 0);
            assert_eq!(spans.last().unwrap().1, n);
            for w in spans.windows(2) {
                assert_eq!(w[1].0 - w[0].0, cfg.stride());
                assert!(w[1].0 < w[0].1, "windows must overlap");
            }
            for c in &chunks {
                assert!(c.token_count <= cfg.chunk_size);
            }
        }
    }

    #[test]
    fn chunk_text_is_source_slice() {
        let doc = Document {
            doc_id: "d".into(),
            source: DocSource::Wiki,
            title: String::new(),
            body: "Alpha, beta; GAMMA delta epsilon zeta".into(),
        };
        let cfg = ChunkerConfig {
            chunk_size: 3,
            overlap: 1,
        };
        let chunks = chunk_document(&doc, &cfg).unwrap();
        for c in &chunks {
            assert!(doc.body.contains(&c.text));
        }
        assert_eq!(chunks[0].text, "Alpha, beta; GAMMA");
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("Blacks never tell the truth."),
            vec!["blacks", "never", "tell", "the", "truth"]
        );
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("A a A"), vec!["a", "a", "a"]);
        assert_eq!(tokenize("Héllo-wörld 42!"), vec!["héllo", "wörld", "42"]);
    }

    #[test]
    fn ingest_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");

        std::fs::write(&path, "{not json}\n").unwrap();
        match ingest(&path, ChunkerConfig::default()) {
            Err(FairRagError::MalformedJsonl { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected malformed jsonl, got {other:?}"),
        }

        let doc = r#"{"doc_id":"a","source":"wiki","title":"","body":"hello world"}"#;
        std::fs::write(&path, format!("{doc}\n{doc}\n")).unwrap();
        assert!(matches!(
            ingest(&path, ChunkerConfig::default()),
            Err(FairRagError::DuplicateDocId(_))
        ));

        std::fs::write(
            &path,
            r#"{"doc_id":"a","source":"wiki","title":"","body":"  "}"#,
        )
        .unwrap();
        assert!(matches!(
            ingest(&path, ChunkerConfig::default()),
            Err(FairRagError::EmptyBody(_))
        ));
    }

    #[test]
    fn ingest_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"doc_id":"a","source":"wiki","title":"t","body":"one two three four five"}"#,
                "\n",
                r#"{"doc_id":"b","source":"webpage","title":"","body":"six seven eight"}"#,
                "\n",
            ),
        )
        .unwrap();
        let cfg = ChunkerConfig {
            chunk_size: 3,
            overlap: 1,
        };
        let s1 = ingest(&path, cfg).unwrap();
        let s2 = ingest(&path, cfg).unwrap();
        assert_eq!(s1.manifest.content_hash, s2.manifest.content_hash);
        assert_eq!(s1.chunks, s2.chunks);
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        std::fs::write(
            &corpus,
            r#"{"doc_id":"a","source":"other","title":"","body":"one two three four five six"}"#,
        )
        .unwrap();
        let cfg = ChunkerConfig {
            chunk_size: 4,
            overlap: 2,
        };
        let store = ingest(&corpus, cfg).unwrap();
        let out = dir.path().join("store");
        store.save(&out).unwrap();
        let loaded = ChunkStore::load(&out).unwrap();
        assert_eq!(loaded.chunks, store.chunks);
        assert_eq!(loaded.manifest.content_hash, store.manifest.content_hash);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ChunkerConfig {
            chunk_size: 4,
            overlap: 4,
        };
        assert!(cfg.validate().is_err());
    }
}
