//! Candidate tool pools: every called tool, the nearest catalog neighbors by
//! embedding similarity, and a seeded random fill.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::judge::RetryPolicy;
use crate::model::{ToolCatalog, ToolSpec, Trajectory};
use crate::seed;

pub trait EmbeddingClient: Send + Sync {
    /// One vector per input text, all the same dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn batch_size(&self) -> usize {
        64
    }
}

impl<E: EmbeddingClient + ?Sized> EmbeddingClient for &E {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }

    fn batch_size(&self) -> usize {
        (**self).batch_size()
    }
}

/// Offline embedder: signed feature hashing of lowercase word unigrams and
/// bigrams, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: 256 }
    }
}

impl HashingEmbedder {
    fn embed_one(&self, text: &str) -> Vec<f64> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut v = vec![0.0; self.dim];
        let features = words.iter().cloned().chain(words.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        for f in features {
            let h = seed::derive_seed(0, &f);
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            v[((h >> 1) % self.dim as u64) as usize] += sign;
        }
        normalize(&mut v);
        v
    }
}

impl EmbeddingClient for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedVector {
    pub name: String,
    pub content_hash: String,
    pub vector: Vec<f64>,
}

pub fn content_hash(tool: &ToolSpec) -> String {
    seed::sha256_hex(tool.embedding_text())
}

pub type VectorTable = BTreeMap<String, Vec<f64>>;

/// Embeds `name: description` for every catalog tool. Vectors whose cache
/// entry matches the tool's content hash are reused; new vectors are
/// appended to the cache after each batch, so a failure keeps earlier
/// batches.
pub fn embed_catalog(
    catalog: &ToolCatalog,
    client: &dyn EmbeddingClient,
    cache: Option<&Path>,
    retry: RetryPolicy,
) -> Result<VectorTable> {
    let mut cached: BTreeMap<String, CachedVector> = BTreeMap::new();
    if let Some(path) = cache {
        for rec in io::read_jsonl_if_exists::<CachedVector>(path)? {
            cached.insert(rec.name.clone(), rec);
        }
    }
    let mut table = VectorTable::new();
    let mut missing = Vec::new();
    for tool in catalog.tools() {
        match cached.get(&tool.name) {
            Some(rec) if rec.content_hash == content_hash(tool) => {
                table.insert(tool.name.clone(), rec.vector.clone());
            }
            _ => missing.push(tool),
        }
    }
    let mut file = match cache {
        Some(path) if !missing.is_empty() => Some(OpenOptions::new().create(true).append(true).open(path)?),
        _ => None,
    };
    for batch in missing.chunks(client.batch_size().max(1)) {
        let texts: Vec<String> = batch.iter().map(|t| t.embedding_text()).collect();
        let vectors = retry.run(|| client.embed(&texts))?;
        if vectors.len() != batch.len() {
            return Err(Error::Embedding(format!(
                "asked for {} vectors, got {}",
                batch.len(),
                vectors.len()
            )));
        }
        for (tool, mut vector) in batch.iter().zip(vectors) {
            normalize(&mut vector);
            if let Some(f) = file.as_mut() {
                io::append_jsonl(
                    f,
                    &CachedVector {
                        name: tool.name.clone(),
                        content_hash: content_hash(tool),
                        vector: vector.clone(),
                    },
                )?;
            }
            table.insert(tool.name.clone(), vector);
        }
    }
    let mut dims = table.values().map(Vec::len);
    if let Some(d) = dims.next() {
        if d == 0 || dims.any(|x| x != d) {
            return Err(Error::Embedding("vectors differ in dimension".into()));
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub size: usize,
    pub similar_frac: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            size: 30,
            similar_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolPool {
    pub example_id: String,
    /// Called, then similar in rank order, then random in draw order.
    pub tools: Vec<String>,
    pub called: Vec<String>,
    pub similar: Vec<String>,
    pub random: Vec<String>,
}

impl ToolPool {
    pub fn contains(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t == name)
    }

    /// Specs of pool tools, in pool order.
    pub fn specs(&self, catalog: &ToolCatalog) -> Vec<ToolSpec> {
        self.tools.iter().filter_map(|n| catalog.get(n).cloned()).collect()
    }
}

pub fn called_tools(t: &Trajectory) -> BTreeSet<String> {
    t.unique_tools().into_iter().map(str::to_owned).collect()
}

/// Highest cosine similarity between `name` and any called tool.
pub fn max_similarity(name: &str, called: &BTreeSet<String>, vectors: &VectorTable) -> Result<f64> {
    let v = lookup(vectors, name)?;
    called
        .iter()
        .map(|c| Ok(cosine(v, lookup(vectors, c)?)))
        .try_fold(f64::NEG_INFINITY, |acc, s: Result<f64>| Ok(acc.max(s?)))
}

fn lookup<'a>(vectors: &'a VectorTable, name: &str) -> Result<&'a Vec<f64>> {
    vectors
        .get(name)
        .ok_or_else(|| Error::Embedding(format!("no vector for tool {name}")))
}

/// Number of similarity slots for `called` tools in a pool of `size`.
pub fn similar_slots(size: usize, called: usize, frac: f64) -> usize {
    let free = size.saturating_sub(called);
    ((frac * free as f64 + 1e-9).floor() as usize).min(free)
}

pub fn build_pool(
    example_id: &str,
    called: &BTreeSet<String>,
    catalog: &ToolCatalog,
    vectors: &VectorTable,
    cfg: PoolConfig,
    corpus_seed: u64,
) -> Result<ToolPool> {
    if let Some(unknown) = called.iter().find(|c| !catalog.contains(c)) {
        return Err(Error::Validation(format!("{example_id}: called tool {unknown} is not in the catalog")));
    }
    let called_list: Vec<String> = called.iter().cloned().collect();
    let size = cfg.size.min(catalog.len());
    if called.len() >= size {
        if called.len() > cfg.size {
            tracing::warn!(example_id, called = called.len(), "called tools exceed pool size");
        }
        return Ok(ToolPool {
            example_id: example_id.to_owned(),
            tools: called_list.clone(),
            called: called_list,
            similar: Vec::new(),
            random: Vec::new(),
        });
    }
    let k = if called.is_empty() {
        0
    } else {
        similar_slots(size, called.len(), cfg.similar_frac)
    };
    let mut ranked: Vec<(f64, &str)> = catalog
        .names()
        .filter(|n| !called.contains(*n))
        .map(|n| Ok((max_similarity(n, called, vectors)?, n)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1)));
    let similar: Vec<String> = ranked.iter().take(k).map(|(_, n)| (*n).to_owned()).collect();

    let mut rest: Vec<&str> = ranked.iter().skip(k).map(|(_, n)| *n).collect();
    rest.sort_unstable();
    let mut rng = seed::rng(seed::derive_seed(corpus_seed, example_id));
    let random: Vec<String> = rest
        .choose_multiple(&mut rng, size - called.len() - k)
        .map(|n| (*n).to_owned())
        .collect();

    let tools = called_list.iter().chain(&similar).chain(&random).cloned().collect();
    Ok(ToolPool {
        example_id: example_id.to_owned(),
        tools,
        called: called_list,
        similar,
        random,
    })
}
