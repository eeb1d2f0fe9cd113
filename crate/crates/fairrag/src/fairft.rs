//! Retriever alignment trainer: minimizes the mean KL divergence between
//! the retrieval likelihood and the frozen model's fairness score
//! distribution, by gradient descent on a linear transform over frozen
//! embeddings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkStore;
use crate::error::{FairRagError, Result};
use crate::gateway::{LlmGateway, ScoredTarget};
use crate::retrieval::dense::{cosine, dense_search, norm, EmbeddingStore};
use crate::retrieval::{softmax_with_temperature, ProbabilityDistribution};
use crate::transform::QueryTransform;
use crate::util::atomic_write;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingExample {
    pub query: String,
    pub target: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub beta: f64,
    pub gamma: f64,
    pub top_k_train: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub refresh_per_epoch: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.1,
            top_k_train: 20,
            batch_size: 20,
            learning_rate: 1e-5,
            epochs: 1,
            refresh_per_epoch: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            self.beta,
            self.gamma,
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
        ];
        if positives.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(FairRagError::NonFinite("trainer config"));
        }
        if self.top_k_train == 0 || self.batch_size == 0 || self.refresh_per_epoch == 0 {
            return Err(FairRagError::EmptyInput("trainer config counts must be >= 1"));
        }
        Ok(())
    }
}

/// Softmax over mean target log-probabilities at temperature `beta`.
pub fn fairness_distribution(
    scored: &[(String, ScoredTarget)],
    beta: f64,
) -> Result<ProbabilityDistribution> {
    if scored.is_empty() {
        return Err(FairRagError::EmptyInput("fairness_distribution on empty list"));
    }
    let scores: Vec<f64> = scored.iter().map(|(_, s)| s.avg_logprob).collect();
    let weights = softmax_with_temperature(&scores, beta)?;
    Ok(ProbabilityDistribution {
        support: scored.iter().map(|(id, _)| id.clone()).collect(),
        weights,
    })
}

/// KL(p || t) = sum p_i ln(p_i / t_i); terms with p_i = 0 contribute 0.
pub fn kl_divergence(p: &ProbabilityDistribution, t: &ProbabilityDistribution) -> Result<f64> {
    if p.support != t.support {
        return Err(FairRagError::SupportMismatch);
    }
    let mut kl = 0.0;
    for (pi, ti) in p.weights.iter().zip(&t.weights) {
        if *pi > 0.0 {
            kl += pi * (pi / ti).ln();
        }
    }
    Ok(kl)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, dim: usize) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Frozen-model score cache keyed by (query, chunk_id, refresh generation).
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: HashMap<(String, String, u64), ScoredTarget>,
    pub hits: usize,
    pub misses: usize,
}

impl ScoreCache {
    pub fn get_or_score(
        &mut self,
        gateway: &dyn LlmGateway,
        query: &str,
        chunk_id: &str,
        context: &str,
        target: &str,
        generation: u64,
    ) -> Result<ScoredTarget> {
        let key = (query.to_string(), chunk_id.to_string(), generation);
        if let Some(s) = self.map.get(&key) {
            self.hits += 1;
            return Ok(*s);
        }
        self.misses += 1;
        let scored = gateway.score_target(context, target).map_err(|e| {
            FairRagError::ChunkGateway {
                chunk_id: chunk_id.to_string(),
                source: Box::new(e),
            }
        })?;
        self.map.insert(key, scored);
        Ok(scored)
    }
}

/// Context handed to the frozen model when scoring how much a document
/// helps produce the fair answer: document text, blank line, query.
pub fn scoring_context(chunk_text: &str, query: &str) -> String {
    format!("{chunk_text}\n\n{query}")
}

pub struct TrainStores<'a> {
    pub chunk_store: &'a ChunkStore,
    pub embeddings: &'a EmbeddingStore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefreshEvent {
    pub epoch: usize,
    pub batch: usize,
    pub generation: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub epoch_mean_losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub refreshes: Vec<RefreshEvent>,
    pub skipped_queries: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,grad_norm\n");
        for (i, (l, g)) in self.step_losses.iter().zip(&self.grad_norms).enumerate() {
            out.push_str(&format!("{i},{l},{g}\n"));
        }
        out
    }
}

/// Projects every document vector through W, producing the store the
/// dense index searches between refresh points.
pub fn materialize_projections(emb: &EmbeddingStore, w: &QueryTransform) -> EmbeddingStore {
    let mut out = EmbeddingStore::new(emb.dim);
    for (id, v) in &emb.vectors {
        out.vectors.insert(id.clone(), w.apply(v));
    }
    out
}

/// One-query KL loss and its gradient with respect to W, given a fixed
/// selection of retrieved chunks and their frozen fairness scores.
fn query_loss_and_grad(
    w: &QueryTransform,
    query_vec: &[f64],
    doc_ids: &[String],
    doc_vecs: &[&Vec<f64>],
    fairness_scores: &[f64],
    gamma: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let dim = w.dim;
    let u = w.apply(query_vec);
    let nu = norm(&u);
    if nu == 0.0 {
        return Err(FairRagError::ZeroNormVector);
    }
    let mut sims = Vec::with_capacity(doc_ids.len());
    let mut projected = Vec::with_capacity(doc_ids.len());
    for v in doc_vecs {
        let pv = w.apply(v);
        sims.push(cosine(&u, &pv)?);
        projected.push(pv);
    }
    let p = softmax_with_temperature(&sims, gamma)?;
    let t = softmax_with_temperature(fairness_scores, beta)?;
    let g: Vec<f64> = p.iter().zip(&t).map(|(pi, ti)| (pi / ti).ln()).collect();
    let loss: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();

    // dL/ds_k = (p_k / gamma) * (g_k - sum_i p_i g_i)
    let mut grad = vec![0.0; dim * dim];
    for k in 0..doc_ids.len() {
        let coeff = p[k] / gamma * (g[k] - loss);
        if coeff == 0.0 {
            continue;
        }
        let v = &projected[k];
        let nv = norm(v);
        let s = sims[k];
        let inv = 1.0 / (nu * nv);
        // ds/du and ds/dv for s = cos(u, v)
        let ds_du: Vec<f64> = (0..dim)
            .map(|i| v[i] * inv - s * u[i] / (nu * nu))
            .collect();
        let ds_dv: Vec<f64> = (0..dim)
            .map(|i| u[i] * inv - s * v[i] / (nv * nv))
            .collect();
        // chain into W: dW += coeff * (ds_du outer q + ds_dv outer d)
        let d = doc_vecs[k];
        for r in 0..dim {
            let a = coeff * ds_du[r];
            let b = coeff * ds_dv[r];
            let row = &mut grad[r * dim..(r + 1) * dim];
            for c in 0..dim {
                row[c] += a * query_vec[c] + b * d[c];
            }
        }
    }
    Ok((loss, grad))
}

/// Mean batch loss and gradient. Selection runs against `selection_store`
/// when given (the refreshed index during training) or against projections
/// under the current W otherwise. Queries with empty retrieval are skipped
/// and excluded from the mean.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradient(
    batch: &[TrainingExample],
    w: &QueryTransform,
    stores: &TrainStores<'_>,
    gateway: &dyn LlmGateway,
    cfg: &TrainerConfig,
    cache: &mut ScoreCache,
    generation: u64,
    selection_store: Option<&EmbeddingStore>,
) -> Result<(f64, Vec<f64>, usize)> {
    if batch.is_empty() {
        return Err(FairRagError::EmptyInput("loss_and_gradient batch"));
    }
    cfg.validate()?;
    let owned_selection;
    let selection = match selection_store {
        Some(s) => s,
        None => {
            owned_selection = materialize_projections(stores.embeddings, w);
            &owned_selection
        }
    };
    let dim = w.dim;
    let mut total_loss = 0.0;
    let mut total_grad = vec![0.0; dim * dim];
    let mut scored_queries = 0usize;
    for example in batch {
        let query_vec = gateway.embed(&example.query)?;
        let projected_query = w.apply(&query_vec);
        let retrieved = dense_search(selection, &projected_query, cfg.top_k_train, None)?;
        if retrieved.is_empty() {
            continue;
        }
        let mut doc_ids = Vec::new();
        let mut doc_vecs = Vec::new();
        let mut fairness_scores = Vec::new();
        for (chunk_id, _) in &retrieved.entries {
            let chunk = stores
                .chunk_store
                .get(chunk_id)
                .ok_or_else(|| FairRagError::UnknownChunk(chunk_id.clone()))?;
            let vec = stores
                .embeddings
                .vectors
                .get(chunk_id)
                .ok_or_else(|| FairRagError::UnknownChunk(chunk_id.clone()))?;
            let context = scoring_context(&chunk.text, &example.query);
            let scored = cache.get_or_score(
                gateway,
                &example.query,
                chunk_id,
                &context,
                &example.target,
                generation,
            )?;
            doc_ids.push(chunk_id.clone());
            doc_vecs.push(vec);
            fairness_scores.push(scored.avg_logprob);
        }
        let (loss, grad) = query_loss_and_grad(
            w,
            &query_vec,
            &doc_ids,
            &doc_vecs,
            &fairness_scores,
            cfg.gamma,
            cfg.beta,
        )?;
        total_loss += loss;
        for (acc, g) in total_grad.iter_mut().zip(&grad) {
            *acc += g;
        }
        scored_queries += 1;
    }
    if scored_queries == 0 {
        return Err(FairRagError::EmptyInput("all batch queries had empty retrieval"));
    }
    let n = scored_queries as f64;
    total_loss /= n;
    for g in total_grad.iter_mut() {
        *g /= n;
    }
    if !total_loss.is_finite() || total_grad.iter().any(|g| !g.is_finite()) {
        return Err(FairRagError::NonFiniteGradient {
            step: 0,
            detail: format!("loss={total_loss}"),
        });
    }
    Ok((total_loss, total_grad, batch.len() - scored_queries))
}

/// Full training loop: Adam updates per batch, document projections
/// re-materialized into the search index at each refresh point
/// (`refresh_per_epoch` evenly spaced points, the last at epoch end).
pub fn train(
    examples: &[TrainingExample],
    stores: &TrainStores<'_>,
    gateway: &dyn LlmGateway,
    cfg: &TrainerConfig,
) -> Result<(QueryTransform, TrainReport)> {
    if examples.is_empty() {
        return Err(FairRagError::EmptyInput("training examples"));
    }
    cfg.validate()?;
    let dim = stores.embeddings.dim;
    let mut w = QueryTransform::identity(dim);
    let mut adam = Adam::new(
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        dim * dim,
    );
    let mut report = TrainReport::default();
    let mut cache = ScoreCache::default();
    let mut generation: u64 = 0;
    let mut materialized = materialize_projections(stores.embeddings, &w);

    let batches: Vec<&[TrainingExample]> = examples.chunks(cfg.batch_size).collect();
    let total = batches.len();
    for epoch in 0..cfg.epochs {
        let mut epoch_losses = Vec::new();
        for (batch_idx, batch) in batches.iter().enumerate() {
            let (loss, grad, skipped) = loss_and_gradient(
                batch,
                &w,
                stores,
                gateway,
                cfg,
                &mut cache,
                generation,
                Some(&materialized),
            )?;
            report.skipped_queries += skipped;
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            adam.update(&mut w.data, &grad);
            w.validate()?;
            report.step_losses.push(loss);
            report.grad_norms.push(grad_norm);
            epoch_losses.push(loss);

            // refresh when (batch_idx+1)/total crosses an i/refresh_per_epoch
            // boundary: for refresh_per_epoch=2 that is the midpoint and the
            // epoch end
            let done = batch_idx + 1;
            let crossed = |b: usize| b * cfg.refresh_per_epoch / total;
            if done == total || crossed(done) > crossed(done.saturating_sub(1)) {
                generation += 1;
                materialized = materialize_projections(stores.embeddings, &w);
                report.refreshes.push(RefreshEvent {
                    epoch,
                    batch: batch_idx,
                    generation,
                });
            }
        }
        let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        report.epoch_mean_losses.push(mean);
    }
    Ok((w, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainerConfig,
    pub epochs_completed: usize,
    pub loss_curve: Vec<f64>,
}

pub fn save_checkpoint(
    dir: &Path,
    w: &QueryTransform,
    meta: &CheckpointMeta,
    report: &TrainReport,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    w.save(&dir.join("transform.bin"))?;
    atomic_write(&dir.join("meta.json"), &serde_json::to_vec_pretty(meta)?)?;
    atomic_write(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    atomic_write(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    Ok(())
}

pub fn read_training_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let file = File::open(path).map_err(|_| FairRagError::MissingFile(path.to_path_buf()))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample =
            serde_json::from_str(&line).map_err(|e| FairRagError::MalformedJsonl {
                path: path.to_path_buf(),
                line: lineno + 1,
                source: e,
            })?;
        if ex.query.is_empty() || ex.target.is_empty() {
            return Err(FairRagError::EmptyInput("training example fields"));
        }
        out.push(ex);
    }
    Ok(out)
}
