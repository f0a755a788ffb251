//! Difficulty scoring, percentile tiering and outcome-stratified sampling.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clean::is_successful_response;
use crate::error::{Error, Result};
use crate::model::{Outcome, Query, Tier, Trajectory};
use crate::seed;

pub const COMPUTATION_KEYWORDS: [&str; 9] = [
    "calculate",
    "compute",
    "compare",
    "growth",
    "ratio",
    "percentage",
    "cagr",
    "average",
    "forecast",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub outcome_pts: u32,
    pub length_pts: u32,
    pub diversity_pts: u32,
    pub complexity_pts: u32,
    pub total: u32,
}

impl DifficultyScore {
    pub fn new(outcome_pts: u32, length_pts: u32, diversity_pts: u32, complexity_pts: u32) -> Self {
        DifficultyScore {
            outcome_pts,
            length_pts,
            diversity_pts,
            complexity_pts,
            total: outcome_pts + length_pts + diversity_pts + complexity_pts,
        }
    }
}

/// A trajectory counts as successful when it is not marked failed, made at
/// least one successful tool invocation, produced a final answer, and that
/// answer was not judged incorrect.
pub fn trajectory_succeeded(t: &Trajectory, answer_correct: Option<bool>) -> bool {
    !t.failed
        && t.tool_responses().any(|m| is_successful_response(&m.content))
        && !t.final_answer().trim().is_empty()
        && answer_correct != Some(false)
}

pub fn length_points(turns: usize) -> u32 {
    match turns {
        0..=3 => 0,
        4..=6 => 1,
        7..=10 => 2,
        _ => 3,
    }
}

fn enumerator() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s)\d{1,2}[.)]\s|\([a-zA-Z0-9]\)").unwrap())
}

/// Number of interrogative or enumerated parts in a query (at least 1).
pub fn query_parts(text: &str) -> usize {
    text.split('?')
        .flat_map(|s| enumerator().split(s))
        .filter(|s| !s.trim().is_empty())
        .count()
        .max(1)
}

pub fn complexity_points(text: &str) -> u32 {
    let parts = query_parts(text) as u32 - 1;
    let words = text.split_whitespace().count();
    let length = match words {
        0..=40 => 0,
        41..=80 => 1,
        _ => 2,
    };
    let lower = text.to_lowercase();
    let keyword = COMPUTATION_KEYWORDS.iter().any(|k| lower.contains(k)) as u32;
    parts + length + keyword
}

pub fn score_trajectory_difficulty(q: &Query, t: &Trajectory, answer_correct: Option<bool>) -> DifficultyScore {
    DifficultyScore::new(
        (!trajectory_succeeded(t, answer_correct)) as u32,
        length_points(t.turn_count()),
        t.unique_tools().len() as u32,
        complexity_points(&q.text),
    )
}

/// Aggregate difficulty of one query over its model trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDifficulty {
    pub query_id: String,
    pub score: f64,
    pub outcome: Outcome,
    pub trajectories: usize,
}

/// Mean of per-trajectory totals; successful iff a strict majority succeeded.
pub fn aggregate_query(query_id: &str, scored: &[(DifficultyScore, bool)]) -> QueryDifficulty {
    let n = scored.len();
    let total: u32 = scored.iter().map(|(s, _)| s.total).sum();
    let successes = scored.iter().filter(|(_, ok)| *ok).count();
    QueryDifficulty {
        query_id: query_id.to_owned(),
        score: if n == 0 { 0.0 } else { f64::from(total) / n as f64 },
        outcome: if n > 0 && successes * 2 > n { Outcome::Successful } else { Outcome::Failed },
        trajectories: n,
    }
}

/// Scores every query against its trajectories in parallel. Queries with no
/// trajectories score as one empty failed attempt. `correctness` maps
/// `(query_id, source_model)` to an answer-correctness flag.
pub fn score_corpus(
    queries: &[Query],
    trajectories: &[Trajectory],
    correctness: &HashMap<(String, String), bool>,
) -> Vec<QueryDifficulty> {
    let mut by_query: HashMap<&str, Vec<&Trajectory>> = HashMap::new();
    for t in trajectories {
        by_query.entry(t.query_id.as_str()).or_default().push(t);
    }
    queries
        .par_iter()
        .map(|q| {
            let ts = by_query.get(q.id.as_str()).map(Vec::as_slice).unwrap_or_default();
            let mut scored: Vec<_> = ts
                .iter()
                .map(|t| {
                    let flag = correctness.get(&(t.query_id.clone(), t.source_model.clone())).copied();
                    (score_trajectory_difficulty(q, t, flag), trajectory_succeeded(t, flag))
                })
                .collect();
            if scored.is_empty() {
                let empty = Trajectory::new(q.id.clone(), "", Vec::new());
                scored.push((score_trajectory_difficulty(q, &empty, None), false));
            }
            aggregate_query(&q.id, &scored)
        })
        .collect()
}

/// Percentile cutoffs as exact fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCutoffs {
    pub easy: (u64, u64),
    pub medium: (u64, u64),
}

impl Default for TierCutoffs {
    fn default() -> Self {
        TierCutoffs {
            easy: (1, 3),
            medium: (2, 3),
        }
    }
}

impl TierCutoffs {
    pub fn percentiles(easy: u64, medium: u64) -> Self {
        TierCutoffs {
            easy: (easy, 100),
            medium: (medium, 100),
        }
    }
}

/// Inclusive nearest-rank percentile of sorted `values` at `num/den`.
pub fn nearest_rank(sorted: &[f64], (num, den): (u64, u64)) -> f64 {
    let n = sorted.len() as u64;
    let rank = (num * n).div_ceil(den).clamp(1, n);
    sorted[rank as usize - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieredQuery {
    pub query_id: String,
    pub score: f64,
    pub tier: Tier,
    pub outcome: Outcome,
}

/// Tiers by global nearest-rank cutoffs; output follows input order.
pub fn assign_tiers(scores: &[QueryDifficulty], cutoffs: TierCutoffs) -> Result<Vec<TieredQuery>> {
    if scores.len() < 3 {
        return Err(Error::Validation(format!("tiering needs at least 3 queries, got {}", scores.len())));
    }
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Validation(format!("non-finite score for query {}", bad.query_id)));
    }
    let mut sorted: Vec<f64> = scores.iter().map(|s| s.score).collect();
    sorted.sort_by(f64::total_cmp);
    let p_easy = nearest_rank(&sorted, cutoffs.easy);
    let p_medium = nearest_rank(&sorted, cutoffs.medium);
    Ok(scores
        .iter()
        .map(|s| TieredQuery {
            query_id: s.query_id.clone(),
            score: s.score,
            tier: if s.score <= p_easy {
                Tier::Easy
            } else if s.score <= p_medium {
                Tier::Medium
            } else {
                Tier::Hard
            },
            outcome: s.outcome,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    /// Sorted selected query ids.
    pub selected: Vec<String>,
    /// Selected (successful, failed) counts per tier.
    pub per_tier: BTreeMap<Tier, (usize, usize)>,
    pub warnings: Vec<String>,
}

/// Per-tier quotas: `n_total / 3` each, remainder to hard.
pub fn tier_quotas(n_total: usize) -> [(Tier, usize); 3] {
    let base = n_total / 3;
    [(Tier::Easy, base), (Tier::Medium, base), (Tier::Hard, n_total - 2 * base)]
}

/// Successful-outcome target for a tier of `n_tier` draws.
pub fn success_quota(n_tier: usize, success_frac: f64) -> usize {
    ((success_frac * n_tier as f64).round() as usize).min(n_tier)
}

/// Outcome-stratified sample. Short strata are topped up first from the
/// other outcome class in the same tier and then from other tiers; each
/// top-up is reported in `warnings`.
pub fn stratified_sample(pool: &[TieredQuery], n_total: usize, success_frac: f64, seed: u64) -> Result<SampleResult> {
    if !(0.0..=1.0).contains(&success_frac) {
        return Err(Error::Validation(format!("success fraction {success_frac} outside [0, 1]")));
    }
    if n_total > pool.len() {
        return Err(Error::Validation(format!("requested {n_total} queries from a pool of {}", pool.len())));
    }
    // Shuffled leftovers per stratum; draws pop from the front.
    let mut strata: BTreeMap<(Tier, Outcome), Vec<&str>> = BTreeMap::new();
    for q in pool {
        strata.entry((q.tier, q.outcome)).or_default().push(&q.query_id);
    }
    for ((tier, outcome), ids) in strata.iter_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut seed::rng(seed::derive_seed(seed, &format!("{tier}/{outcome:?}"))));
        ids.reverse();
    }
    let mut take = |tier: Tier, outcome: Outcome, n: usize| -> Vec<String> {
        let ids = strata.entry((tier, outcome)).or_default();
        let k = n.min(ids.len());
        ids.split_off(ids.len() - k).into_iter().rev().map(str::to_owned).collect()
    };

    let mut warnings = Vec::new();
    let mut selected = Vec::with_capacity(n_total);
    let mut per_tier: BTreeMap<Tier, (usize, usize)> = BTreeMap::new();
    let mut deficit = Vec::new();
    for (tier, n_tier) in tier_quotas(n_total) {
        let want_s = success_quota(n_tier, success_frac);
        let want_f = n_tier - want_s;
        let mut got_s = take(tier, Outcome::Successful, want_s);
        let mut got_f = take(tier, Outcome::Failed, want_f);
        if got_s.len() < want_s {
            let extra = take(tier, Outcome::Failed, want_s - got_s.len());
            warnings.push(format!(
                "{tier}: {} successful short, filled {} from failed",
                want_s - got_s.len(),
                extra.len()
            ));
            got_f.extend(extra);
        }
        if got_f.len() < want_f && got_s.len() + got_f.len() < n_tier {
            let extra = take(tier, Outcome::Successful, n_tier - got_s.len() - got_f.len());
            warnings.push(format!("{tier}: failed short, filled {} from successful", extra.len()));
            got_s.extend(extra);
        }
        let short = n_tier - got_s.len() - got_f.len();
        if short > 0 {
            deficit.push((tier, short));
        }
        per_tier.insert(tier, (got_s.len(), got_f.len()));
        selected.extend(got_s);
        selected.extend(got_f);
    }
    for (tier, short) in deficit {
        let mut remaining = short;
        for donor in Tier::ALL.into_iter().filter(|t| *t != tier) {
            for outcome in [Outcome::Successful, Outcome::Failed] {
                let got = take(donor, outcome, remaining);
                remaining -= got.len();
                let entry = per_tier.entry(donor).or_default();
                match outcome {
                    Outcome::Successful => entry.0 += got.len(),
                    Outcome::Failed => entry.1 += got.len(),
                }
                selected.extend(got);
            }
        }
        warnings.push(format!("{tier}: {short} short, redistributed {} from other tiers", short - remaining));
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    selected.sort();
    Ok(SampleResult {
        selected,
        per_tier,
        warnings,
    })
}
