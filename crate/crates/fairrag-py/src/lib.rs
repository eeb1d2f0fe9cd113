//! Python bindings for the fairrag core: tokenization, chunking, BM25,
//! the softmax distributions, KL divergence, verdict parsing, and the
//! mock-backed filter pipeline.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fairrag::corpus::{chunk_document, tokenize as rs_tokenize, ChunkerConfig, DocSource, Document};
use fairrag::evaluation::{classify_stance as rs_classify, Stance};
use fairrag::fairfilter::{parse_verdict as rs_parse_verdict, render_template, FAIRNESS_TEMPLATE, UTILITY_TEMPLATE};
use fairrag::fairft::kl_divergence as rs_kl;
use fairrag::retrieval::bm25::{bm25_build, bm25_search};
use fairrag::retrieval::dense::{dense_search, EmbeddingStore};
use fairrag::retrieval::{softmax_with_temperature, ProbabilityDistribution};

fn to_py_err(e: fairrag::FairRagError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    rs_tokenize(text)
}

/// Chunk a document body; returns (start, end, text) per chunk.
#[pyfunction]
#[pyo3(signature = (body, chunk_size=512, overlap=128))]
fn chunk_text(body: &str, chunk_size: usize, overlap: usize) -> PyResult<Vec<(usize, usize, String)>> {
    let doc = Document {
        doc_id: "doc".into(),
        source: DocSource::Other,
        title: String::new(),
        body: body.into(),
    };
    let cfg = ChunkerConfig {
        chunk_size,
        overlap,
    };
    let chunks = chunk_document(&doc, &cfg).map_err(to_py_err)?;
    Ok(chunks
        .into_iter()
        .map(|c| (c.token_span.0, c.token_span.1, c.text))
        .collect())
}

/// Temperature softmax over raw scores.
#[pyfunction]
#[pyo3(signature = (scores, temperature=0.1))]
fn softmax(scores: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    softmax_with_temperature(&scores, temperature).map_err(to_py_err)
}

#[pyfunction]
fn kl_divergence(p: Vec<f64>, t: Vec<f64>) -> PyResult<f64> {
    let support: Vec<String> = (0..p.len()).map(|i| i.to_string()).collect();
    let pd = ProbabilityDistribution {
        support: support.clone(),
        weights: p,
    };
    let td = ProbabilityDistribution {
        support,
        weights: t,
    };
    rs_kl(&pd, &td).map_err(to_py_err)
}

/// BM25 top-k over (id, text) pairs; returns (id, score) ranked.
#[pyfunction]
#[pyo3(signature = (docs, query, k=3))]
fn bm25_topk(docs: Vec<(String, String)>, query: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
    use fairrag::corpus::{Chunk, ChunkStore};
    let chunks = docs
        .into_iter()
        .map(|(id, text)| {
            let n = rs_tokenize(&text).len();
            Chunk {
                chunk_id: id.clone(),
                doc_id: id,
                token_span: (0, n),
                text,
                token_count: n,
            }
        })
        .collect();
    let store = ChunkStore::from_chunks(chunks, ChunkerConfig::default());
    let index = bm25_build(&store, 1.2, 0.75).map_err(to_py_err)?;
    Ok(bm25_search(&index, query, k).entries)
}

/// Exhaustive cosine top-k over (id, vector) pairs.
#[pyfunction]
#[pyo3(signature = (vectors, query, k=3))]
fn dense_topk(
    vectors: Vec<(String, Vec<f64>)>,
    query: Vec<f64>,
    k: usize,
) -> PyResult<Vec<(String, f64)>> {
    let dim = query.len();
    let mut store = EmbeddingStore::new(dim);
    for (id, v) in vectors {
        store.insert(id, v).map_err(to_py_err)?;
    }
    let set = dense_search(&store, &query, k, None).map_err(to_py_err)?;
    Ok(set.entries)
}

/// Parse a filter verdict from model output: (pass or None, status).
#[pyfunction]
fn parse_verdict(response: &str) -> (Option<bool>, &'static str) {
    let (pass, status) = rs_parse_verdict(response);
    let status = match status {
        fairrag::fairfilter::ParseStatus::Ok => "ok",
        fairrag::fairfilter::ParseStatus::Recovered => "recovered",
        fairrag::fairfilter::ParseStatus::Unparseable => "unparseable",
    };
    (pass, status)
}

#[pyfunction]
fn classify_stance(response: &str) -> &'static str {
    match rs_classify(response) {
        Stance::Agree => "agree",
        Stance::Disagree => "disagree",
        Stance::Unclassified => "unclassified",
    }
}

#[pyfunction]
fn fairness_filter_prompt(query: &str, document: &str) -> String {
    render_template(FAIRNESS_TEMPLATE, query, document)
}

#[pyfunction]
fn utility_filter_prompt(query: &str, document: &str) -> String {
    render_template(UTILITY_TEMPLATE, query, document)
}

#[pymodule]
fn fairrag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_text, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(bm25_topk, m)?)?;
    m.add_function(wrap_pyfunction!(dense_topk, m)?)?;
    m.add_function(wrap_pyfunction!(parse_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(classify_stance, m)?)?;
    m.add_function(wrap_pyfunction!(fairness_filter_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(utility_filter_prompt, m)?)?;
    Ok(())
}
