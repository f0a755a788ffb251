//! Corpus splitting and chosen/rejected pair construction.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::ToolPool;
use crate::concurrency::bounded_map;
use crate::error::{Error, Result};
use crate::judge::{prompts, Judge, JudgeClient, PairOutcome, PairVerdict};
use crate::model::{Message, ToolCatalog, Trajectory};
use crate::seed;

/// Seeded partition into (first, second) with `floor(frac * n)` items in
/// the first part. Both parts keep key order.
pub fn split_by_key<T: Clone>(items: &[T], key: impl Fn(&T) -> &str, frac: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Validation(format!("split fraction {frac} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| key(&items[a]).cmp(key(&items[b])));
    let mut shuffled = order.clone();
    shuffled.shuffle(&mut seed::rng(seed));
    let k = (frac * items.len() as f64 + 1e-9).floor() as usize;
    let mut first_set = vec![false; items.len()];
    for &i in &shuffled[..k] {
        first_set[i] = true;
    }
    let (mut first, mut second) = (Vec::with_capacity(k), Vec::with_capacity(items.len() - k));
    for i in order {
        if first_set[i] {
            first.push(items[i].clone());
        } else {
            second.push(items[i].clone());
        }
    }
    Ok((first, second))
}

/// Splits reference trajectories into (SFT, preference) by query id.
pub fn split_corpus(examples: &[Trajectory], frac_sft: f64, seed: u64) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    split_by_key(examples, |t| t.query_id.as_str(), frac_sft, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: String,
    pub pool: Vec<String>,
    pub chosen_messages: Vec<Message>,
    pub rejected_messages: Vec<Message>,
    pub verdict: PairOutcome,
    pub reasoning: String,
    pub a_was_chosen_slot: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairingOutcome {
    pub pairs: Vec<PreferencePair>,
    pub ties: usize,
    pub rejected_wins: usize,
    pub skipped: usize,
    /// Query ids skipped for a missing rollout or judge result.
    pub skipped_ids: Vec<String>,
}

impl PairingOutcome {
    pub fn total(&self) -> usize {
        self.pairs.len() + self.ties + self.rejected_wins + self.skipped
    }
}

/// Keeps only pairs the judge found chosen-better; one rollout per query.
pub fn build_pairs(
    references: &[Trajectory],
    rollouts: &[Trajectory],
    verdicts: &HashMap<String, PairVerdict>,
    pools: &HashMap<String, ToolPool>,
) -> PairingOutcome {
    let by_query: HashMap<&str, &Trajectory> = rollouts.iter().map(|t| (t.query_id.as_str(), t)).collect();
    let mut out = PairingOutcome::default();
    for r in references {
        let id = r.query_id.as_str();
        let (Some(rollout), Some(v)) = (by_query.get(id), verdicts.get(id)) else {
            out.skipped += 1;
            out.skipped_ids.push(id.to_owned());
            continue;
        };
        match v.outcome() {
            PairOutcome::Tie => out.ties += 1,
            PairOutcome::RejectedIsBetter => out.rejected_wins += 1,
            PairOutcome::ChosenIsBetter => out.pairs.push(PreferencePair {
                query_id: id.to_owned(),
                pool: pools.get(id).map(|p| p.tools.clone()).unwrap_or_default(),
                chosen_messages: r.messages.clone(),
                rejected_messages: rollout.messages.clone(),
                verdict: PairOutcome::ChosenIsBetter,
                reasoning: v.reasoning.clone(),
                a_was_chosen_slot: v.a_was_chosen_slot,
            }),
        }
    }
    out
}

/// Judges each reference against its rollout, with the slot assignment
/// seeded per query, then builds the pair set.
pub fn judge_and_pair<C: JudgeClient>(
    judge: &Judge<C>,
    references: &[Trajectory],
    rollouts: &[Trajectory],
    pools: &HashMap<String, ToolPool>,
    catalog: &ToolCatalog,
    corpus_seed: u64,
) -> PairingOutcome {
    let by_query: HashMap<&str, &Trajectory> = rollouts.iter().map(|t| (t.query_id.as_str(), t)).collect();
    let results = bounded_map(references, judge.client().max_concurrency(), |_, r| {
        let rollout = by_query.get(r.query_id.as_str())?;
        let summary = match pools.get(&r.query_id) {
            Some(p) => prompts::tool_summary(&p.specs(catalog)),
            None => prompts::tool_summary(catalog.tools()),
        };
        let seed = seed::derive_seed(corpus_seed, &r.query_id);
        match judge.pairwise_judge(r.user_query(), r, rollout, &summary, seed) {
            Ok(v) => Some((r.query_id.clone(), v)),
            Err(e) => {
                tracing::warn!(query = %r.query_id, error = %e, "pairwise judging failed");
                None
            }
        }
    });
    let verdicts: HashMap<String, PairVerdict> = results.into_iter().flatten().collect();
    build_pairs(references, rollouts, &verdicts, pools)
}
