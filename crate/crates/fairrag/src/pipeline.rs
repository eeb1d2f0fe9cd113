//! Answer pipelines: plain generation, retrieval-augmented generation,
//! and the filtered variant. The evaluator only sees the `Pipeline` trait.

use crate::corpus::ChunkStore;
use crate::error::{FairRagError, Result};
use crate::fairfilter::{run_pipeline as run_filter_pipeline, FilterResult, FilterTemplates};
use crate::gateway::{GenerationParams, LlmGateway};
use crate::retrieval::bm25::{bm25_search, Bm25Index};
use crate::retrieval::dense::{dense_search, EmbeddingStore};
use crate::retrieval::RetrievedSet;
use crate::transform::QueryTransform;

#[derive(Debug, Clone)]
pub struct PipelineAnswer {
    pub response: String,
    pub retrieved: Vec<String>,
    pub context: String,
}

pub trait Pipeline {
    fn answer(&self, query: &str) -> Result<PipelineAnswer>;
    fn label(&self) -> &str;
}

/// Retriever handle shared by the RAG pipelines.
pub enum Retriever<'a> {
    Bm25(&'a Bm25Index),
    Dense {
        store: &'a EmbeddingStore,
        transform: Option<&'a QueryTransform>,
        gateway: &'a dyn LlmGateway,
    },
}

impl Retriever<'_> {
    pub fn retrieve(&self, query: &str, k: usize) -> Result<RetrievedSet> {
        match self {
            Retriever::Bm25(index) => Ok(bm25_search(index, query, k)),
            Retriever::Dense {
                store,
                transform,
                gateway,
            } => {
                let query_vec = gateway.embed(query)?;
                let mut set = dense_search(store, &query_vec, k, *transform)?;
                set.query_id = query.to_string();
                Ok(set)
            }
        }
    }
}

/// Concatenates the retrieved documents with the query: d1 + d2 + ... + q.
pub fn build_context(chunk_texts: &[&str], query: &str) -> String {
    let mut out = String::new();
    for text in chunk_texts {
        out.push_str(text);
        out.push_str("\n\n");
    }
    out.push_str(query);
    out
}

pub struct NoRagPipeline<'a> {
    pub gateway: &'a dyn LlmGateway,
    pub params: GenerationParams,
}

impl Pipeline for NoRagPipeline<'_> {
    fn answer(&self, query: &str) -> Result<PipelineAnswer> {
        let response = self.gateway.generate(query, &self.params)?;
        Ok(PipelineAnswer {
            response,
            retrieved: Vec::new(),
            context: query.to_string(),
        })
    }

    fn label(&self) -> &str {
        "no_rag"
    }
}

pub struct RagPipeline<'a> {
    pub retriever: Retriever<'a>,
    pub chunk_store: &'a ChunkStore,
    pub gateway: &'a dyn LlmGateway,
    pub params: GenerationParams,
    pub top_k: usize,
    pub label: String,
}

impl RagPipeline<'_> {
    fn chunk_texts(&self, set: &RetrievedSet) -> Result<Vec<String>> {
        set.entries
            .iter()
            .map(|(id, _)| {
                self.chunk_store
                    .get(id)
                    .map(|c| c.text.clone())
                    .ok_or_else(|| FairRagError::UnknownChunk(id.clone()))
            })
            .collect()
    }
}

impl Pipeline for RagPipeline<'_> {
    fn answer(&self, query: &str) -> Result<PipelineAnswer> {
        let set = self.retriever.retrieve(query, self.top_k)?;
        let texts = self.chunk_texts(&set)?;
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let context = build_context(&refs, query);
        let response = self.gateway.generate(&context, &self.params)?;
        Ok(PipelineAnswer {
            response,
            retrieved: set.chunk_ids(),
            context,
        })
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// RAG with the two-step filter between retrieval and generation.
pub struct FairFilterPipeline<'a> {
    pub retriever: Retriever<'a>,
    pub chunk_store: &'a ChunkStore,
    pub gateway: &'a dyn LlmGateway,
    pub params: GenerationParams,
    pub top_k: usize,
    pub templates: FilterTemplates,
    pub label: String,
}

impl FairFilterPipeline<'_> {
    pub fn answer_with_filter(&self, query: &str) -> Result<(PipelineAnswer, FilterResult)> {
        let set = self.retriever.retrieve(query, self.top_k)?;
        let chunks: Vec<&crate::corpus::Chunk> = set
            .entries
            .iter()
            .map(|(id, _)| {
                self.chunk_store
                    .get(id)
                    .ok_or_else(|| FairRagError::UnknownChunk(id.clone()))
            })
            .collect::<Result<_>>()?;
        let filter =
            run_filter_pipeline(query, &set, &chunks, self.gateway, &self.templates, &self.params)?;
        let kept = filter.final_context(&set);
        let texts: Vec<&str> = kept
            .iter()
            .filter_map(|id| self.chunk_store.get(id).map(|c| c.text.as_str()))
            .collect();
        let context = build_context(&texts, query);
        let response = self.gateway.generate(&context, &self.params)?;
        Ok((
            PipelineAnswer {
                response,
                retrieved: kept,
                context,
            },
            filter,
        ))
    }
}

impl Pipeline for FairFilterPipeline<'_> {
    fn answer(&self, query: &str) -> Result<PipelineAnswer> {
        self.answer_with_filter(query).map(|(a, _)| a)
    }

    fn label(&self) -> &str {
        &self.label
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Chunk, ChunkerConfig};
    use crate::gateway::mock::{MockLlm, MockLlmSpec};
    use crate::retrieval::bm25::bm25_build;

    fn store() -> ChunkStore {
        let chunks = vec![
            Chunk {
                chunk_id: "c1".into(),
                doc_id: "d1".into(),
                token_span: (0, 4),
                text: "the cat sat down".into(),
                token_count: 4,
            },
            Chunk {
                chunk_id: "c2".into(),
                doc_id: "d2".into(),
                token_span: (0, 4),
                text: "a dog ran away".into(),
                token_count: 4,
            },
        ];
        ChunkStore::from_chunks(chunks, ChunkerConfig::default())
    }

    #[test]
    fn rag_pipeline_builds_context_from_retrieval() {
        let store = store();
        let index = bm25_build(&store, 1.2, 0.75).unwrap();
        let llm = MockLlm::new(MockLlmSpec {
            markers: vec!["cat".into()],
            ..Default::default()
        });
        let pipeline = RagPipeline {
            retriever: Retriever::Bm25(&index),
            chunk_store: &store,
            gateway: &llm,
            params: GenerationParams::default(),
            top_k: 1,
            label: "rag_bm25".into(),
        };
        let a = pipeline.answer("where did the cat sit").unwrap();
        assert_eq!(a.retrieved, vec!["c1"]);
        assert!(a.context.starts_with("the cat sat down\n\n"));
        assert!(a.response.starts_with("Yes."));
    }

    #[test]
    fn no_rag_pipeline_passes_query_through() {
        let llm = MockLlm::new(MockLlmSpec {
            markers: vec!["cat".into()],
            ..Default::default()
        });
        let pipeline = NoRagPipeline {
            gateway: &llm,
            params: GenerationParams::default(),
        };
        let a = pipeline.answer("no marker here").unwrap();
        assert!(a.response.starts_with("No."));
        assert!(a.retrieved.is_empty());
        assert_eq!(a.context, "no marker here");
    }

    #[test]
    fn context_concatenation_order() {
        let ctx = build_context(&["doc one", "doc two"], "the query");
        assert_eq!(ctx, "doc one\n\ndoc two\n\nthe query");
    }
}
