//! Shared data model: queries, messages, trajectories, tools and metric reports.
//!
//! Wire field names (`role`, `content`, `reasoning_content`, `tool_calls`,
//! `tool_call_id`, `query_id`, `source_model`, `messages`) are fixed; every
//! record type here serializes to exactly those names.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::canonical::{canonical_string, sort_keys};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        })
    }
}

/// Tool-call arguments held in canonical (key-sorted) form.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Arguments(Value);

impl Arguments {
    pub fn new(value: Value) -> Self {
        match value {
            Value::Null => Arguments(Value::Object(Default::default())),
            v => Arguments(sort_keys(&v)),
        }
    }

    pub fn parse(raw: &str) -> Result<Self> {
        crate::canonical::canonicalize_arguments(raw)
            .map(|s| Arguments(serde_json::from_str(&s).expect("canonical output parses")))
    }

    pub fn value(&self) -> &Value {
        &self.0
    }

    /// Canonical byte string used for duplicate detection.
    pub fn canonical(&self) -> String {
        canonical_string(&self.0)
    }
}

impl Serialize for Arguments {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Arguments {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        match value {
            // Chat-completion logs carry arguments as a JSON-encoded string.
            Value::String(raw) if raw.trim().is_empty() => Ok(Arguments::default()),
            Value::String(raw) => Arguments::parse(&raw).map_err(serde::de::Error::custom),
            Value::Null | Value::Object(_) => Ok(Arguments::new(value)),
            other => Err(serde::de::Error::custom(format!(
                "tool-call arguments must be an object, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Arguments,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        ToolCall {
            id: id.into(),
            name: name.into(),
            arguments: Arguments::new(arguments),
        }
    }

    /// `{"arguments":...,"name":...}` in canonical form.
    pub fn render(&self) -> String {
        canonical_string(&serde_json::json!({
            "name": self.name,
            "arguments": self.arguments.value(),
        }))
    }
}

// Accepts the flat form written by this crate as well as the nested
// `{"type":"function","function":{...}}` form found in raw chat logs.
impl<'de> Deserialize<'de> for ToolCall {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Function {
            name: String,
            #[serde(default)]
            arguments: Arguments,
        }
        #[derive(Deserialize)]
        struct Wire {
            #[serde(default)]
            id: String,
            name: Option<String>,
            #[serde(default)]
            arguments: Option<Arguments>,
            function: Option<Function>,
        }
        let wire = Wire::deserialize(d)?;
        let (name, arguments) = match (wire.name, wire.function) {
            (Some(name), _) => (name, wire.arguments.unwrap_or_default()),
            (None, Some(f)) => (f.name, f.arguments),
            (None, None) => return Err(serde::de::Error::missing_field("name")),
        };
        if name.is_empty() {
            return Err(serde::de::Error::custom("tool-call name must be nonempty"));
        }
        Ok(ToolCall {
            id: wire.id,
            name,
            arguments,
        })
    }
}

fn null_as_empty<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    Ok(Option::<String>::deserialize(d)?.unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
            reasoning_content: None,
            tool_calls: None,
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_calls(content: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        Message {
            tool_calls: Some(calls),
            ..Self::plain(Role::Assistant, content)
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Message {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    pub fn with_reasoning(mut self, reasoning: impl Into<String>) -> Self {
        self.reasoning_content = Some(reasoning.into());
        self
    }

    /// Structured tool calls; an absent field and an empty list are treated alike.
    pub fn calls(&self) -> &[ToolCall] {
        self.tool_calls.as_deref().unwrap_or(&[])
    }

    pub fn has_tool_calls(&self) -> bool {
        !self.calls().is_empty()
    }

    /// Text the model (or environment) produced for this message, as fed to the
    /// token counter: reasoning, content, then one line per tool call.
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if let Some(r) = self.reasoning_content.as_deref().filter(|r| !r.is_empty()) {
            parts.push(r.to_owned());
        }
        if !self.content.is_empty() {
            parts.push(self.content.clone());
        }
        parts.extend(self.calls().iter().map(ToolCall::render));
        parts.join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Easy => "easy",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Successful,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_tier: Option<Tier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_flag: Option<Outcome>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>, category: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
            category: category.into(),
            reference_answer: None,
            difficulty_tier: None,
            outcome_flag: None,
        }
    }
}

/// The declared set of task-category labels for a corpus.
#[derive(Debug, Clone, Default)]
pub struct CategoryRegistry {
    labels: BTreeSet<String>,
}

impl CategoryRegistry {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CategoryRegistry {
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks id uniqueness and category membership across a query corpus.
    pub fn validate_corpus(&self, queries: &[Query]) -> Result<()> {
        let mut seen = HashSet::new();
        for q in queries {
            if q.id.is_empty() {
                return Err(Error::Validation("query id must be nonempty".into()));
            }
            if !seen.insert(q.id.as_str()) {
                return Err(Error::Validation(format!("duplicate query id {}", q.id)));
            }
            if !self.contains(&q.category) {
                return Err(Error::Validation(format!(
                    "query {} has undeclared category {:?}",
                    q.id, q.category
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query_id: String,
    #[serde(default)]
    pub source_model: String,
    pub messages: Vec<Message>,
    /// Set when generation aborted; the messages are whatever was produced.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl Trajectory {
    pub fn new(query_id: impl Into<String>, source_model: impl Into<String>, messages: Vec<Message>) -> Self {
        Trajectory {
            query_id: query_id.into(),
            source_model: source_model.into(),
            messages,
            failed: false,
        }
    }

    /// Number of assistant messages.
    pub fn turn_count(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }

    /// Content of the last assistant message without tool calls, or `""`.
    pub fn final_answer(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::Assistant && !m.has_tool_calls())
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Text of the first user message, or `""`.
    pub fn user_query(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .flat_map(|m| m.calls())
    }

    pub fn tool_responses(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.role == Role::Tool)
    }

    pub fn unique_tools(&self) -> BTreeSet<&str> {
        self.tool_calls().map(|c| c.name.as_str()).collect()
    }

    /// Checks the structural invariants every trajectory must satisfy.
    pub fn validate(&self) -> Result<()> {
        let bad = |i: usize, what: &str| Err(Error::InvalidTrajectory(format!("{}: message {i}: {what}", self.query_id)));
        let mut issued: HashSet<&str> = HashSet::new();
        let mut first_conversational = true;
        for (i, m) in self.messages.iter().enumerate() {
            if m.role != Role::System && first_conversational {
                first_conversational = false;
                if m.role != Role::User {
                    return bad(i, "first non-system message must be a user message");
                }
            }
            if m.has_tool_calls() && m.role != Role::Assistant {
                return bad(i, "tool_calls on a non-assistant message");
            }
            match (m.role, m.tool_call_id.as_deref()) {
                (Role::Tool, None) => return bad(i, "tool message without tool_call_id"),
                (Role::Tool, Some(id)) if !issued.contains(id) => {
                    return bad(i, "tool message answers a call no earlier assistant message issued");
                }
                (Role::Tool, Some(_)) => {}
                (_, Some(_)) => return bad(i, "tool_call_id on a non-tool message"),
                (_, None) => {}
            }
            for call in m.calls() {
                issued.insert(call.id.as_str());
            }
        }
        Ok(())
    }
}

/// One `(name, canonical arguments)` entry per structured tool call, in message order.
pub fn extract_tool_sequence(t: &Trajectory) -> Vec<(String, String)> {
    t.tool_calls()
        .map(|c| (c.name.clone(), c.arguments.canonical()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameter_schema: Value,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        ToolSpec {
            name: name.into(),
            description: description.into(),
            parameter_schema: Value::Object(Default::default()),
        }
    }

    /// `"{name}: {description}"`, the text that gets embedded.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }

    /// Rendering used when a tool schema counts toward context length.
    pub fn render(&self) -> String {
        format!("{}\n{}", self.embedding_text(), canonical_string(&self.parameter_schema))
    }
}

/// A tool catalog with unique names, kept in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToolCatalog {
    tools: Vec<ToolSpec>,
    index: BTreeMap<String, usize>,
}

impl ToolCatalog {
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, t) in tools.iter().enumerate() {
            if t.name.is_empty() {
                return Err(Error::Validation(format!("tool {i} has an empty name")));
            }
            if index.insert(t.name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate tool name {}", t.name)));
            }
        }
        Ok(ToolCatalog { tools, index })
    }

    /// Parses a catalog document: a JSON array of tool specs.
    pub fn from_json(raw: &str) -> Result<Self> {
        let tools: Vec<ToolSpec> = serde_json::from_str(raw).map_err(|e| crate::canonical::parse_error(raw, &e))?;
        Self::new(tools)
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|&i| &self.tools[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}

/// The six rubric metrics scored by an LLM judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgedMetric {
    PassRate,
    TaskRelevance,
    LogicalProgression,
    InfoUtilization,
    ProgressScore,
    AnswerQuality,
}

impl JudgedMetric {
    pub const ALL: [JudgedMetric; 6] = [
        JudgedMetric::PassRate,
        JudgedMetric::TaskRelevance,
        JudgedMetric::LogicalProgression,
        JudgedMetric::InfoUtilization,
        JudgedMetric::ProgressScore,
        JudgedMetric::AnswerQuality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JudgedMetric::PassRate => "pass_rate",
            JudgedMetric::TaskRelevance => "task_relevance",
            JudgedMetric::LogicalProgression => "logical_progression",
            JudgedMetric::InfoUtilization => "info_utilization",
            JudgedMetric::ProgressScore => "progress_score",
            JudgedMetric::AnswerQuality => "answer_quality",
        }
    }
}

impl fmt::Display for JudgedMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for JudgedMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        JudgedMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown judged metric {s:?}")))
    }
}

/// All nine rubric values for one trajectory (or a model-level mean).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub tool_call_f1: f64,
    pub step_efficiency: f64,
    pub redundancy: f64,
    pub pass_rate: f64,
    pub task_relevance: f64,
    pub logical_progression: f64,
    pub info_utilization: f64,
    pub progress_score: f64,
    pub answer_quality: f64,
}

impl MetricScores {
    pub fn judged(&self, metric: JudgedMetric) -> f64 {
        match metric {
            JudgedMetric::PassRate => self.pass_rate,
            JudgedMetric::TaskRelevance => self.task_relevance,
            JudgedMetric::LogicalProgression => self.logical_progression,
            JudgedMetric::InfoUtilization => self.info_utilization,
            JudgedMetric::ProgressScore => self.progress_score,
            JudgedMetric::AnswerQuality => self.answer_quality,
        }
    }
}

/// Rubric scores for one (candidate, golden, query) triple.
///
/// Judged fields stay `None` until the judge fills them; `overall` is only
/// set on complete reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub query_id: String,
    pub source_model: String,
    pub tool_call_f1: f64,
    pub step_efficiency: f64,
    pub redundancy: f64,
    pub pass_rate: Option<f64>,
    pub task_relevance: Option<f64>,
    pub logical_progression: Option<f64>,
    pub info_utilization: Option<f64>,
    pub progress_score: Option<f64>,
    pub answer_quality: Option<f64>,
    pub overall: Option<f64>,
    #[serde(default)]
    pub judge_rationales: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_metrics: Vec<JudgedMetric>,
}

impl MetricReport {
    pub fn judged(&self, metric: JudgedMetric) -> Option<f64> {
        match metric {
            JudgedMetric::PassRate => self.pass_rate,
            JudgedMetric::TaskRelevance => self.task_relevance,
            JudgedMetric::LogicalProgression => self.logical_progression,
            JudgedMetric::InfoUtilization => self.info_utilization,
            JudgedMetric::ProgressScore => self.progress_score,
            JudgedMetric::AnswerQuality => self.answer_quality,
        }
    }

    pub fn set_judged(&mut self, metric: JudgedMetric, value: Option<f64>) {
        let slot = match metric {
            JudgedMetric::PassRate => &mut self.pass_rate,
            JudgedMetric::TaskRelevance => &mut self.task_relevance,
            JudgedMetric::LogicalProgression => &mut self.logical_progression,
            JudgedMetric::InfoUtilization => &mut self.info_utilization,
            JudgedMetric::ProgressScore => &mut self.progress_score,
            JudgedMetric::AnswerQuality => &mut self.answer_quality,
        };
        *slot = value;
    }

    /// All nine values, when every judged field is present.
    pub fn scores(&self) -> Option<MetricScores> {
        Some(MetricScores {
            tool_call_f1: self.tool_call_f1,
            step_efficiency: self.step_efficiency,
            redundancy: self.redundancy,
            pass_rate: self.pass_rate?,
            task_relevance: self.task_relevance?,
            logical_progression: self.logical_progression?,
            info_utilization: self.info_utilization?,
            progress_score: self.progress_score?,
            answer_quality: self.answer_quality?,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.failed_metrics.is_empty() && self.overall.is_some() && self.scores().is_some()
    }
}
