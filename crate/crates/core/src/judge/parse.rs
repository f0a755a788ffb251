//! Parsing judge replies.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use super::{JudgeReply, VerdictLabel};
use crate::error::{Error, Result};

fn score_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bscore\b\s*[:=]?\s*(-?\d+)").unwrap())
}

fn integer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+").unwrap())
}

fn field_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn field_text(obj: &Value, keys: &[&str]) -> String {
    keys.iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .unwrap_or_default()
        .to_owned()
}

fn likert_from_text(text: &str) -> Result<(u8, String)> {
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(text.trim()) {
        return likert_from_value(&v, text);
    }
    let in_range = |n: i64| (1..=5).contains(&n).then_some(n as u8);
    if let Some(c) = score_label().captures(text) {
        let n: i64 = c[1].parse().unwrap_or(i64::MAX);
        return in_range(n)
            .map(|s| (s, text.trim().to_owned()))
            .ok_or_else(|| Error::judge_format(format!("score {n} outside 1-5"), text));
    }
    integer()
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<i64>().ok())
        .find_map(in_range)
        .map(|s| (s, text.trim().to_owned()))
        .ok_or_else(|| Error::judge_format("no integer score in 1-5", text))
}

fn likert_from_value(v: &Value, raw: &str) -> Result<(u8, String)> {
    let n = v
        .get("score")
        .and_then(field_int)
        .ok_or_else(|| Error::judge_format("structured reply lacks an integer `score`", raw))?;
    if !(1..=5).contains(&n) {
        return Err(Error::judge_format(format!("score {n} outside 1-5"), raw));
    }
    Ok((n as u8, field_text(v, &["rationale", "reasoning", "explanation"])))
}

/// Likert score and rationale from a judge reply.
///
/// Structured replies need a `score` field. Text replies use an explicit
/// `score: N` label when present, otherwise the first integer in 1..=5.
pub fn parse_likert(reply: &JudgeReply) -> Result<(u8, String)> {
    match reply {
        JudgeReply::Structured(v) => likert_from_value(v, &v.to_string()),
        JudgeReply::Text(t) => likert_from_text(t),
    }
}

fn verdict_literal(s: &str) -> Option<VerdictLabel> {
    let cleaned = s.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace());
    VerdictLabel::ALL
        .into_iter()
        .find(|l| l.as_str().eq_ignore_ascii_case(cleaned))
}

/// Pairwise verdict and reasoning; the verdict must be one of the three literals.
pub fn parse_verdict(reply: &JudgeReply) -> Result<(VerdictLabel, String)> {
    let (value, raw) = match reply {
        JudgeReply::Structured(v) => (Some(v.clone()), v.to_string()),
        JudgeReply::Text(t) => (serde_json::from_str::<Value>(t.trim()).ok().filter(Value::is_object), t.clone()),
    };
    if let Some(v) = value {
        let label = v
            .get("verdict")
            .and_then(Value::as_str)
            .and_then(verdict_literal)
            .ok_or_else(|| Error::judge_format("`verdict` is not one of the three options", &raw))?;
        return Ok((label, field_text(&v, &["reasoning", "rationale"])));
    }
    let first_line = raw.lines().next().unwrap_or_default();
    verdict_literal(&raw)
        .or_else(|| verdict_literal(first_line))
        .map(|l| (l, raw.lines().skip(1).collect::<Vec<_>>().join("\n").trim().to_owned()))
        .ok_or_else(|| Error::judge_format("verdict is not one of the three options", &raw))
}

/// 0-based index of the chosen candidate; the judge answers 1-based.
pub fn parse_selection(reply: &JudgeReply, n_candidates: usize) -> Result<(usize, String)> {
    let (n, reasoning, raw) = match reply {
        JudgeReply::Structured(v) => (
            v.get("best_candidate").and_then(field_int),
            field_text(v, &["reasoning", "rationale"]),
            v.to_string(),
        ),
        JudgeReply::Text(t) => match serde_json::from_str::<Value>(t.trim()).ok().filter(Value::is_object) {
            Some(v) => (v.get("best_candidate").and_then(field_int), field_text(&v, &["reasoning", "rationale"]), t.clone()),
            None => (
                integer().find(t).and_then(|m| m.as_str().parse().ok()),
                t.trim().to_owned(),
                t.clone(),
            ),
        },
    };
    let n = n.ok_or_else(|| Error::judge_format("no candidate number in reply", &raw))?;
    if n < 1 || n as usize > n_candidates {
        return Err(Error::judge_format(
            format!("candidate {n} does not exist (have {n_candidates})"),
            &raw,
        ));
    }
    Ok((n as usize - 1, reasoning))
}
