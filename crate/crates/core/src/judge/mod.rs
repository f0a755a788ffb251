//! LLM-judge orchestration: the six judged rubric metrics, golden-candidate
//! selection, and position-randomized pairwise comparison.
//!
//! The judge itself sits behind [`JudgeClient`]. Every call goes through a
//! [`RetryPolicy`]; malformed replies are retried like transport failures and
//! surface as [`Error::JudgeFormat`] once attempts run out.

mod agreement;
mod parse;
pub mod prompts;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use agreement::cohens_kappa;
pub use parse::{parse_likert, parse_selection, parse_verdict};

use crate::concurrency::bounded_map;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_overall, score_algorithmic};
use crate::model::{JudgedMetric, MetricReport, Query, Trajectory};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeRequest {
    pub prompt: String,
    /// Structured-output schema the reply must follow, when the caller forces one.
    pub schema: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JudgeReply {
    Text(String),
    Structured(Value),
}

pub trait JudgeClient: Send + Sync {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeReply>;

    /// Upper bound on in-flight requests.
    fn max_concurrency(&self) -> usize {
        4
    }
}

impl<J: JudgeClient + ?Sized> JudgeClient for Arc<J> {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeReply> {
        (**self).complete(request)
    }

    fn max_concurrency(&self) -> usize {
        (**self).max_concurrency()
    }
}

impl<J: JudgeClient + ?Sized> JudgeClient for &J {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeReply> {
        (**self).complete(request)
    }

    fn max_concurrency(&self) -> usize {
        (**self).max_concurrency()
    }
}

/// Adapts a closure into a judge; handy for stubs.
pub struct FnJudge<F>(pub F);

impl<F> JudgeClient for FnJudge<F>
where
    F: Fn(&JudgeRequest) -> Result<JudgeReply> + Send + Sync,
{
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeReply> {
        (self.0)(request)
    }
}

/// Always replies with the same text.
#[derive(Debug, Clone)]
pub struct ConstantJudge(pub String);

impl JudgeClient for ConstantJudge {
    fn complete(&self, _: &JudgeRequest) -> Result<JudgeReply> {
        Ok(JudgeReply::Text(self.0.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the first retry; doubles after each further failure.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            backoff: Duration::ZERO,
        }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if attempt >= self.attempts.max(1) => return Err(e),
                Err(e) => {
                    tracing::debug!(attempt, error = %e, "retrying judge call");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertResult {
    pub metric: JudgedMetric,
    pub score: u8,
    pub rationale: String,
}

/// The three pairwise verdict literals, in slot terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictLabel {
    #[serde(rename = "A is better")]
    ABetter,
    #[serde(rename = "B is better")]
    BBetter,
    #[serde(rename = "same quality")]
    Same,
}

impl VerdictLabel {
    pub const ALL: [VerdictLabel; 3] = [VerdictLabel::ABetter, VerdictLabel::BBetter, VerdictLabel::Same];

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::ABetter => "A is better",
            VerdictLabel::BBetter => "B is better",
            VerdictLabel::Same => "same quality",
        }
    }
}

/// Verdict with the slot assignment undone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOutcome {
    ChosenIsBetter,
    RejectedIsBetter,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub verdict: VerdictLabel,
    pub reasoning: String,
    /// True when the chosen trajectory was shown as Response A.
    pub a_was_chosen_slot: bool,
}

impl PairVerdict {
    pub fn outcome(&self) -> PairOutcome {
        match (self.verdict, self.a_was_chosen_slot) {
            (VerdictLabel::Same, _) => PairOutcome::Tie,
            (VerdictLabel::ABetter, true) | (VerdictLabel::BBetter, false) => PairOutcome::ChosenIsBetter,
            _ => PairOutcome::RejectedIsBetter,
        }
    }
}

fn likert_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "score": {"type": "integer", "minimum": 1, "maximum": 5},
            "rationale": {"type": "string"}
        },
        "required": ["score", "rationale"]
    })
}

/// Forced schema for pairwise comparison.
pub fn verdict_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "verdict": {"type": "string", "enum": ["A is better", "B is better", "same quality"]},
            "reasoning": {"type": "string", "description": "brief 2-3 sentence explanation"}
        },
        "required": ["verdict", "reasoning"]
    })
}

fn selection_schema(n: usize) -> Value {
    json!({
        "type": "object",
        "properties": {
            "best_candidate": {"type": "integer", "minimum": 1, "maximum": n},
            "reasoning": {"type": "string"}
        },
        "required": ["best_candidate", "reasoning"]
    })
}

/// Builds the prompt for one judged metric.
pub fn metric_prompt(
    metric: JudgedMetric,
    query: &Query,
    candidate: &Trajectory,
    golden: Option<&Trajectory>,
) -> Result<String> {
    let golden_text = match (prompts::needs_golden(metric), golden) {
        (true, Some(g)) => prompts::render_transcript(g),
        (true, None) => {
            return Err(Error::Validation(format!("{metric} needs the golden trajectory")));
        }
        (false, _) => String::new(),
    };
    let reference = match (metric, query.reference_answer.as_deref()) {
        (JudgedMetric::PassRate, None) => {
            return Err(Error::Validation(format!("{metric} needs a reference answer for query {}", query.id)));
        }
        (_, r) => r.unwrap_or("(no reference answer available)").to_owned(),
    };
    let final_answer = match candidate.final_answer() {
        "" => "(no answer provided)".to_owned(),
        a => a.to_owned(),
    };
    let body = prompts::render_template(
        prompts::template(metric),
        &[
            ("query", &query.text),
            ("reference_answer", &reference),
            ("final_answer", &final_answer),
            ("candidate", &prompts::render_transcript(candidate)),
            ("golden", &golden_text),
        ],
    );
    Ok(format!("{body}{}", prompts::LIKERT_INSTRUCTION))
}

/// Judge operations bound to a client and retry policy.
pub struct Judge<C> {
    client: C,
    retry: RetryPolicy,
}

impl<C: JudgeClient> Judge<C> {
    pub fn new(client: C) -> Self {
        Judge {
            client,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    fn ask<T>(&self, request: &JudgeRequest, parse: impl Fn(&JudgeReply) -> Result<T>) -> Result<T> {
        self.retry.run(|| parse(&self.client.complete(request)?))
    }

    pub fn judge_metric(
        &self,
        metric: JudgedMetric,
        query: &Query,
        candidate: &Trajectory,
        golden: Option<&Trajectory>,
    ) -> Result<LikertResult> {
        let request = JudgeRequest {
            prompt: metric_prompt(metric, query, candidate, golden)?,
            schema: Some(likert_schema()),
        };
        let (score, rationale) = self.ask(&request, parse_likert)?;
        Ok(LikertResult {
            metric,
            score,
            rationale,
        })
    }

    /// Fills `metrics` into `report`, recomputing `overall` when all nine are present.
    ///
    /// A metric whose judging fails is recorded in `failed_metrics` and left
    /// empty; `overall` then stays unset.
    pub fn fill_report(
        &self,
        report: &mut MetricReport,
        metrics: &[JudgedMetric],
        query: &Query,
        candidate: &Trajectory,
        golden: Option<&Trajectory>,
    ) {
        let results = bounded_map(metrics, self.client.max_concurrency(), |_, &m| {
            (m, self.judge_metric(m, query, candidate, golden))
        });
        for (metric, result) in results {
            match result {
                Ok(r) => {
                    report.set_judged(metric, Some(f64::from(r.score)));
                    report.judge_rationales.insert(metric.as_str().to_owned(), r.rationale);
                    report.failed_metrics.retain(|m| *m != metric);
                }
                Err(e) => {
                    tracing::warn!(query = %query.id, %metric, error = %e, "judged metric failed");
                    report.set_judged(metric, None);
                    if !report.failed_metrics.contains(&metric) {
                        report.failed_metrics.push(metric);
                    }
                }
            }
        }
        report.failed_metrics.sort();
        report.overall = if report.failed_metrics.is_empty() {
            report.scores().and_then(|s| aggregate_overall(&s).ok())
        } else {
            None
        };
    }

    /// Complete nine-metric report for one candidate.
    pub fn judge_all(&self, query: &Query, candidate: &Trajectory, golden: &Trajectory) -> MetricReport {
        let mut report = score_algorithmic(candidate, golden);
        self.fill_report(&mut report, &JudgedMetric::ALL, query, candidate, Some(golden));
        report
    }

    /// Index of the judge-preferred candidate. A lone candidate is returned
    /// without consulting the judge.
    pub fn select_golden(&self, query: &Query, candidates: &[Trajectory]) -> Result<usize> {
        match candidates.len() {
            0 => return Err(Error::Validation("select_golden needs at least one candidate".into())),
            1 => return Ok(0),
            _ => {}
        }
        let listing = candidates
            .iter()
            .enumerate()
            .map(|(i, t)| {
                format!(
                    "## Candidate {} (model: {}, turns: {}, unique tools: {})\n{}",
                    i + 1,
                    t.source_model,
                    t.turn_count(),
                    t.unique_tools().len(),
                    prompts::render_transcript(t)
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let body = prompts::render_template(
            prompts::SELECT_GOLDEN,
            &[
                ("query", &query.text),
                ("reference_answer", query.reference_answer.as_deref().unwrap_or("(no reference answer available)")),
                ("candidates", &listing),
            ],
        );
        let request = JudgeRequest {
            prompt: format!(
                "{body}\nRespond with the number of the best candidate (1-{}) and a brief reasoning.\n",
                candidates.len()
            ),
            schema: Some(selection_schema(candidates.len())),
        };
        self.ask(&request, |r| parse_selection(r, candidates.len())).map(|(i, _)| i)
    }

    /// Compares `chosen` against `rejected` with a seeded random slot assignment.
    pub fn pairwise_judge(
        &self,
        query_text: &str,
        chosen: &Trajectory,
        rejected: &Trajectory,
        tool_summary: &str,
        rng_seed: u64,
    ) -> Result<PairVerdict> {
        let a_was_chosen_slot = seed::rng(rng_seed).gen_bool(0.5);
        let (a, b) = if a_was_chosen_slot { (chosen, rejected) } else { (rejected, chosen) };
        let request = JudgeRequest {
            prompt: prompts::render_template(
                prompts::PAIRWISE,
                &[
                    ("user_query", query_text),
                    ("tool_summary", tool_summary),
                    ("trajectory_a", &prompts::render_transcript(a)),
                    ("trajectory_b", &prompts::render_transcript(b)),
                ],
            ),
            schema: Some(verdict_schema()),
        };
        let (verdict, reasoning) = self.ask(&request, parse_verdict)?;
        Ok(PairVerdict {
            verdict,
            reasoning,
            a_was_chosen_slot,
        })
    }
}

/// One candidate to judge against its golden trajectory.
#[derive(Debug, Clone)]
pub struct JudgeJob {
    pub query: Query,
    pub candidate: Trajectory,
    pub golden: Option<Trajectory>,
    /// Algorithmic scores computed earlier, if any.
    pub report: Option<MetricReport>,
}

/// Judges many candidates concurrently; output order follows `jobs`.
pub fn judge_corpus<C: JudgeClient>(judge: &Judge<C>, jobs: &[JudgeJob], metrics: &[JudgedMetric]) -> Vec<MetricReport> {
    // Per-report metric calls already fan out, so the outer level stays narrow.
    let outer = (judge.client.max_concurrency() / metrics.len().max(1)).max(1);
    bounded_map(jobs, outer, |_, job| {
        let mut report = match (&job.report, &job.golden) {
            (Some(r), _) => r.clone(),
            (None, Some(g)) => score_algorithmic(&job.candidate, g),
            (None, None) => score_algorithmic(&job.candidate, &job.candidate),
        };
        judge.fill_report(&mut report, metrics, &job.query, &job.candidate, job.golden.as_ref());
        report
    })
}

/// Per-metric mean Likert score over complete reports.
pub fn judged_means(reports: &[MetricReport]) -> BTreeMap<JudgedMetric, f64> {
    let complete: Vec<_> = reports.iter().filter(|r| r.is_complete()).collect();
    let mut out = BTreeMap::new();
    if complete.is_empty() {
        return out;
    }
    for m in JudgedMetric::ALL {
        let sum: f64 = complete.iter().filter_map(|r| r.judged(m)).sum();
        out.insert(m, sum / complete.len() as f64);
    }
    out
}
