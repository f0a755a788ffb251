//! Judge prompt templates and transcript rendering.

use std::collections::HashMap;

use crate::model::{JudgedMetric, Role, ToolSpec, Trajectory};

pub const PASS_RATE: &str = include_str!("../../prompts/pass_rate.txt");
pub const TASK_RELEVANCE: &str = include_str!("../../prompts/task_relevance.txt");
pub const LOGICAL_PROGRESSION: &str = include_str!("../../prompts/logical_progression.txt");
pub const INFO_UTILIZATION: &str = include_str!("../../prompts/info_utilization.txt");
pub const PROGRESS_SCORE: &str = include_str!("../../prompts/progress_score.txt");
pub const ANSWER_QUALITY: &str = include_str!("../../prompts/answer_quality.txt");
pub const PAIRWISE: &str = include_str!("../../prompts/pairwise.txt");
pub const SELECT_GOLDEN: &str = include_str!("../../prompts/select_golden.txt");

pub(crate) const LIKERT_INSTRUCTION: &str =
    "\nRespond with `score: N` on the first line, where N is an integer from 1 to 5, followed by a brief rationale.\n";

pub fn template(metric: JudgedMetric) -> &'static str {
    match metric {
        JudgedMetric::PassRate => PASS_RATE,
        JudgedMetric::TaskRelevance => TASK_RELEVANCE,
        JudgedMetric::LogicalProgression => LOGICAL_PROGRESSION,
        JudgedMetric::InfoUtilization => INFO_UTILIZATION,
        JudgedMetric::ProgressScore => PROGRESS_SCORE,
        JudgedMetric::AnswerQuality => ANSWER_QUALITY,
    }
}

/// Whether the metric's prompt shows the golden trajectory.
pub fn needs_golden(metric: JudgedMetric) -> bool {
    matches!(metric, JudgedMetric::LogicalProgression | JudgedMetric::AnswerQuality)
}

/// Whether the metric's prompt shows the reference answer.
pub fn needs_reference(metric: JudgedMetric) -> bool {
    matches!(metric, JudgedMetric::PassRate | JudgedMetric::AnswerQuality)
}

/// Substitutes `{key}` placeholders in one pass; substituted text is never rescanned.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let vars: HashMap<&str, &str> = vars.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if vars.contains_key(&after[..end]) => {
                out.push_str(vars[&after[..end]]);
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Plain-text transcript of a trajectory for judge prompts. System messages
/// are omitted.
pub fn render_transcript(t: &Trajectory) -> String {
    let mut names: HashMap<&str, &str> = HashMap::new();
    let mut out = String::new();
    let mut turn = 0;
    for m in &t.messages {
        match m.role {
            Role::System => {}
            Role::User => {
                out.push_str("USER: ");
                out.push_str(&m.content);
                out.push('\n');
            }
            Role::Assistant => {
                turn += 1;
                out.push_str(&format!("ASSISTANT (turn {turn}):\n"));
                if let Some(r) = m.reasoning_content.as_deref().filter(|r| !r.is_empty()) {
                    out.push_str(&format!("  reasoning: {r}\n"));
                }
                if !m.content.is_empty() {
                    out.push_str(&format!("  content: {}\n", m.content));
                }
                for c in m.calls() {
                    names.insert(c.id.as_str(), c.name.as_str());
                    out.push_str(&format!("  tool call: {} {}\n", c.name, c.arguments.canonical()));
                }
            }
            Role::Tool => {
                let name = m.tool_call_id.as_deref().and_then(|id| names.get(id)).copied().unwrap_or("?");
                out.push_str(&format!("TOOL ({name}): {}\n", m.content));
            }
        }
    }
    let answer = t.final_answer();
    out.push_str("FINAL ANSWER: ");
    out.push_str(if answer.is_empty() { "(none)" } else { answer });
    out.push('\n');
    out
}

/// One `name: description` line per tool.
pub fn tool_summary<'a>(tools: impl IntoIterator<Item = &'a ToolSpec>) -> String {
    tools
        .into_iter()
        .map(|t| t.embedding_text())
        .collect::<Vec<_>>()
        .join("\n")
}
