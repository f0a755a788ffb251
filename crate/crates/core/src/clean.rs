//! Session-log cleaning: system-prompt replacement, ghost tool-call removal,
//! reasoning relocation, and the quality filters applied afterwards.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::parse_jsonl_lenient;
use crate::model::{Message, Role, ToolSpec, Trajectory};

/// Generic assistant system prompt used for training data and evaluation.
pub const GENERIC_SYSTEM_PROMPT: &str = include_str!("../prompts/system.txt");

/// Default context limit, in tokens.
pub const DEFAULT_TOKEN_LIMIT: usize = 16_384;

const GHOST_PATTERNS: [&str; 2] = ["<function_calls>", "<function="];
const EMPTY_RESPONSES: [&str; 3] = ["", "[]", "{}"];

/// Counts tokens for the length filter and the loss mask.
///
/// A message sequence counts as the sum of its messages' rendered counts, so
/// per-message spans always add up to the whole.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;

    fn count_message(&self, message: &Message) -> usize {
        self.count(&message.render())
    }

    fn count_messages(&self, messages: &[Message]) -> usize {
        messages.iter().map(|m| self.count_message(m)).sum()
    }
}

/// `ceil(utf8_len / 4)`; a stand-in for a model tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

impl<F> TokenCounter for F
where
    F: Fn(&str) -> usize + Send + Sync,
{
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// True for a tool response that is empty, `[]` or `{}` after trimming.
pub fn is_empty_response(content: &str) -> bool {
    EMPTY_RESPONSES.contains(&content.trim())
}

/// A tool response that carries data and is not an error.
pub fn is_successful_response(content: &str) -> bool {
    !is_empty_response(content) && !content.trim_start().starts_with("Error")
}

pub fn replace_system_prompt(t: &Trajectory, generic_prompt: &str) -> Trajectory {
    replace_system_prompt_counted(t, generic_prompt).0
}

fn replace_system_prompt_counted(t: &Trajectory, generic_prompt: &str) -> (Trajectory, usize) {
    let mut out = t.clone();
    let mut changed = 0;
    let mut any = false;
    for m in out.messages.iter_mut().filter(|m| m.role == Role::System) {
        any = true;
        if m.content != generic_prompt {
            m.content = generic_prompt.to_owned();
            changed += 1;
        }
    }
    if !any {
        out.messages.insert(0, Message::system(generic_prompt));
        changed += 1;
    }
    (out, changed)
}

fn is_ghost(messages: &[Message], idx: usize) -> bool {
    let m = &messages[idx];
    m.role == Role::Assistant
        && !m.has_tool_calls()
        && GHOST_PATTERNS.iter().any(|p| m.content.contains(p))
        && messages.get(idx + 1).is_none_or(|next| next.role != Role::Tool)
}

/// Drops assistant messages holding unexecuted plain-text tool calls.
pub fn remove_ghost_tool_calls(t: &Trajectory) -> (Trajectory, usize) {
    let keep: Vec<bool> = (0..t.messages.len()).map(|i| !is_ghost(&t.messages, i)).collect();
    let removed = keep.iter().filter(|k| !**k).count();
    let messages = t
        .messages
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(m, _)| m.clone())
        .collect();
    (Trajectory { messages, ..t.clone() }, removed)
}

pub fn relocate_reasoning(t: &Trajectory) -> Trajectory {
    relocate_reasoning_counted(t).0
}

fn relocate_reasoning_counted(t: &Trajectory) -> (Trajectory, usize) {
    let mut out = t.clone();
    let mut moved = 0;
    for m in out.messages.iter_mut() {
        if m.role != Role::Assistant || m.content.is_empty() || !m.has_tool_calls() {
            continue;
        }
        let text = std::mem::take(&mut m.content);
        m.reasoning_content = Some(match m.reasoning_content.take().filter(|r| !r.is_empty()) {
            Some(existing) => format!("{existing}\n{text}"),
            None => text,
        });
        moved += 1;
    }
    (out, moved)
}

/// Drop when there is at least one tool response and all of them are empty.
pub fn filter_all_empty(t: &Trajectory) -> bool {
    let mut responses = t.tool_responses().peekable();
    responses.peek().is_some() && responses.all(|m| is_empty_response(&m.content))
}

/// Drop when the trajectory plus its tool context exceeds `limit` tokens.
pub fn filter_token_length(t: &Trajectory, tools: &[ToolSpec], counter: &dyn TokenCounter, limit: usize) -> bool {
    token_length(t, tools, counter) > limit
}

pub fn token_length(t: &Trajectory, tools: &[ToolSpec], counter: &dyn TokenCounter) -> usize {
    counter.count_messages(&t.messages) + tools.iter().map(|s| counter.count(&s.render())).sum::<usize>()
}

/// Drop when no tool response is a successful invocation.
pub fn filter_no_success(t: &Trajectory) -> bool {
    !t.tool_responses().any(|m| is_successful_response(&m.content))
}

#[derive(Debug, Clone)]
pub struct CleanConfig {
    pub generic_prompt: String,
    pub token_limit: usize,
    /// Tool schemas rendered into every example's context for the length filter.
    pub tool_context: Vec<ToolSpec>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            generic_prompt: GENERIC_SYSTEM_PROMPT.to_owned(),
            token_limit: DEFAULT_TOKEN_LIMIT,
            tool_context: Vec::new(),
        }
    }
}

/// Tallies for one cleaning pass.
///
/// `retained + dropped_all_empty + dropped_over_length + dropped_no_success
/// + skipped_malformed == input`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input: usize,
    pub ghost_calls_removed: usize,
    pub reasoning_relocations: usize,
    pub system_prompts_replaced: usize,
    pub dropped_all_empty: usize,
    pub dropped_over_length: usize,
    pub dropped_no_success: usize,
    pub skipped_malformed: usize,
    pub retained: usize,
}

impl CleaningReport {
    pub fn is_balanced(&self) -> bool {
        self.retained + self.dropped_all_empty + self.dropped_over_length + self.dropped_no_success + self.skipped_malformed
            == self.input
    }
}

enum Verdict {
    Keep(Trajectory),
    AllEmpty,
    OverLength,
    NoSuccess,
    Malformed,
}

struct Cleaned {
    verdict: Verdict,
    ghosts: usize,
    relocations: usize,
    prompts: usize,
}

fn clean_one(t: Trajectory, cfg: &CleanConfig, counter: &dyn TokenCounter) -> Cleaned {
    let (t, prompts) = replace_system_prompt_counted(&t, &cfg.generic_prompt);
    let (t, ghosts) = remove_ghost_tool_calls(&t);
    let (t, relocations) = relocate_reasoning_counted(&t);
    let verdict = if t.validate().is_err() {
        Verdict::Malformed
    } else if filter_all_empty(&t) {
        Verdict::AllEmpty
    } else if filter_token_length(&t, &cfg.tool_context, counter, cfg.token_limit) {
        Verdict::OverLength
    } else if filter_no_success(&t) {
        Verdict::NoSuccess
    } else {
        Verdict::Keep(t)
    };
    Cleaned {
        verdict,
        ghosts,
        relocations,
        prompts,
    }
}

/// Cleans already-parsed trajectories. Output keeps input order.
pub fn clean_trajectories(
    input: Vec<Trajectory>,
    cfg: &CleanConfig,
    counter: &dyn TokenCounter,
) -> (Vec<Trajectory>, CleaningReport) {
    let results: Vec<Cleaned> = input.into_par_iter().map(|t| clean_one(t, cfg, counter)).collect();
    tally(results.into_iter().map(Some))
}

/// Parses newline-delimited records and cleans them; unparsable lines are
/// counted as malformed and skipped.
pub fn clean_pipeline(raw: &str, cfg: &CleanConfig, counter: &dyn TokenCounter) -> (Vec<Trajectory>, CleaningReport) {
    let parsed = parse_jsonl_lenient::<Trajectory>(raw);
    let results: Vec<Option<Cleaned>> = parsed
        .into_par_iter()
        .map(|(line, r)| match r {
            Ok(t) => Some(clean_one(t, cfg, counter)),
            Err(e) => {
                tracing::warn!(line, error = %e, "skipping unparsable record");
                None
            }
        })
        .collect();
    tally(results.into_iter())
}

fn tally(results: impl Iterator<Item = Option<Cleaned>>) -> (Vec<Trajectory>, CleaningReport) {
    let mut report = CleaningReport::default();
    let mut kept = Vec::new();
    for r in results {
        report.input += 1;
        let Some(c) = r else {
            report.skipped_malformed += 1;
            continue;
        };
        report.ghost_calls_removed += c.ghosts;
        report.reasoning_relocations += c.relocations;
        report.system_prompts_replaced += c.prompts;
        match c.verdict {
            Verdict::Keep(t) => {
                report.retained += 1;
                kept.push(t);
            }
            Verdict::AllEmpty => report.dropped_all_empty += 1,
            Verdict::OverLength => report.dropped_over_length += 1,
            Verdict::NoSuccess => report.dropped_no_success += 1,
            Verdict::Malformed => report.skipped_malformed += 1,
        }
    }
    (kept, report)
}
