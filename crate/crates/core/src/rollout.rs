//! Drives a chat model against a tool executor to produce trajectories.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::canonical_string;
use crate::clean::{TokenCounter, GENERIC_SYSTEM_PROMPT};
use crate::concurrency::bounded_map;
use crate::error::{Error, Result};
use crate::model::{Message, Query, Role, ToolCall, ToolSpec, Trajectory};

pub const FORCED_ANSWER_PROMPT: &str =
    "You have reached the maximum number of turns. Do not call any more tools; give your final answer now.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

pub trait ChatModel: Send + Sync {
    fn name(&self) -> &str;

    /// Next assistant message given the conversation so far and the tools on offer.
    fn respond(&self, messages: &[Message], tools: &[ToolSpec], sampling: &Sampling) -> Result<Message>;
}

pub trait ToolExecutor: Send + Sync {
    /// Tool message answering `call`; its `tool_call_id` is `call.id`.
    fn execute(&self, call: &ToolCall) -> Message;
}

/// Closure-backed model.
pub struct FnModel<F> {
    pub name: String,
    pub f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[Message], &[ToolSpec]) -> Result<Message> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnModel { name: name.into(), f }
    }
}

impl<F> ChatModel for FnModel<F>
where
    F: Fn(&[Message], &[ToolSpec]) -> Result<Message> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, messages: &[Message], tools: &[ToolSpec], _: &Sampling) -> Result<Message> {
        (self.f)(messages, tools)
    }
}

/// Replays recorded assistant messages for each query, matched on the
/// first user message. Once the recording runs out it answers with the
/// recorded final answer.
pub struct ReplayModel {
    name: String,
    scripts: HashMap<String, Vec<Message>>,
}

impl ReplayModel {
    pub fn new(name: impl Into<String>, recordings: &[Trajectory]) -> Self {
        let scripts = recordings
            .iter()
            .map(|t| {
                let turns = t.messages.iter().filter(|m| m.role == Role::Assistant).cloned().collect();
                (t.user_query().to_owned(), turns)
            })
            .collect();
        ReplayModel {
            name: name.into(),
            scripts,
        }
    }
}

impl ChatModel for ReplayModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, messages: &[Message], tools: &[ToolSpec], _: &Sampling) -> Result<Message> {
        let query = messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let script = self
            .scripts
            .get(query)
            .ok_or_else(|| Error::Model(format!("no recording for query {query:?}")))?;
        let turn = messages.iter().filter(|m| m.role == Role::Assistant).count();
        let answer = || {
            let text = script
                .iter()
                .rev()
                .find(|m| !m.has_tool_calls())
                .map(|m| m.content.clone())
                .unwrap_or_default();
            Message::assistant(text)
        };
        Ok(match script.get(turn) {
            Some(m) if m.has_tool_calls() && tools.is_empty() => answer(),
            Some(m) => m.clone(),
            None => answer(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub tool: String,
    #[serde(default)]
    pub args: Value,
    pub response: String,
}

pub fn unknown_tool(call: &ToolCall) -> Message {
    Message::tool(call.id.clone(), format!("Error: unknown tool {}", call.name))
}

/// Canned responses keyed by tool name and canonical arguments. A known
/// tool with unrecognized arguments answers `[]`.
#[derive(Debug, Clone, Default)]
pub struct FixtureExecutor {
    responses: HashMap<(String, String), String>,
    tools: BTreeSet<String>,
}

impl FixtureExecutor {
    pub fn new(records: &[FixtureRecord]) -> Self {
        let mut ex = FixtureExecutor::default();
        for r in records {
            let args = if r.args.is_null() { Value::Object(Default::default()) } else { r.args.clone() };
            ex.tools.insert(r.tool.clone());
            ex.responses.insert((r.tool.clone(), canonical_string(&args)), r.response.clone());
        }
        ex
    }

    pub fn tools(&self) -> &BTreeSet<String> {
        &self.tools
    }
}

impl ToolExecutor for FixtureExecutor {
    fn execute(&self, call: &ToolCall) -> Message {
        if !self.tools.contains(&call.name) {
            return unknown_tool(call);
        }
        let content = self
            .responses
            .get(&(call.name.clone(), call.arguments.canonical()))
            .cloned()
            .unwrap_or_else(|| "[]".to_owned());
        Message::tool(call.id.clone(), content)
    }
}

/// Rejects calls to tools outside the offered pool.
pub struct PoolExecutor<'a, E: ?Sized> {
    pub inner: &'a E,
    pub pool: BTreeSet<String>,
}

impl<'a, E: ToolExecutor + ?Sized> PoolExecutor<'a, E> {
    pub fn new(inner: &'a E, tools: &[ToolSpec]) -> Self {
        PoolExecutor {
            inner,
            pool: tools.iter().map(|t| t.name.clone()).collect(),
        }
    }
}

impl<E: ToolExecutor + ?Sized> ToolExecutor for PoolExecutor<'_, E> {
    fn execute(&self, call: &ToolCall) -> Message {
        if self.pool.contains(&call.name) {
            self.inner.execute(call)
        } else {
            unknown_tool(call)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub max_turns: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_sequence_tokens: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_turns: 7,
            top_p: 0.9,
            temperature: 1.0,
            max_sequence_tokens: 16_384,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::Validation("max_turns must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Validation(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }

    pub fn sampling(&self) -> Sampling {
        Sampling {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }
}

/// Runs one rollout. At the last allowed turn the model is asked once for
/// a final answer with no tools on offer. Model failures and context
/// overflow mark the trajectory failed and keep the messages so far.
pub fn run_rollout(
    query: &Query,
    tools: &[ToolSpec],
    model: &dyn ChatModel,
    executor: &dyn ToolExecutor,
    counter: &dyn TokenCounter,
    cfg: &RolloutConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let sampling = cfg.sampling();
    let mut messages = vec![Message::system(GENERIC_SYSTEM_PROMPT), Message::user(query.text.clone())];
    let mut failed = false;
    for turn in 1..=cfg.max_turns {
        let forced = turn == cfg.max_turns && turn > 1;
        if forced {
            messages.push(Message::user(FORCED_ANSWER_PROMPT));
        }
        if counter.count_messages(&messages) > cfg.max_sequence_tokens {
            tracing::warn!(query = %query.id, turn, "rollout exceeded the context budget");
            failed = true;
            break;
        }
        let offered = if forced { &[][..] } else { tools };
        let reply = match model.respond(&messages, offered, &sampling) {
            Ok(m) if m.role == Role::Assistant => m,
            Ok(m) => {
                tracing::warn!(query = %query.id, role = %m.role, "model returned a non-assistant message");
                failed = true;
                break;
            }
            Err(e) => {
                tracing::warn!(query = %query.id, error = %e, "model call failed");
                failed = true;
                break;
            }
        };
        let calls = reply.calls().to_vec();
        messages.push(reply);
        if calls.is_empty() {
            break;
        }
        for call in &calls {
            let mut response = executor.execute(call);
            response.role = Role::Tool;
            response.tool_call_id = Some(call.id.clone());
            messages.push(response);
        }
    }
    let mut t = Trajectory::new(query.id.clone(), model.name(), messages);
    t.failed = failed;
    Ok(t)
}

#[derive(Debug, Clone)]
pub struct RolloutJob {
    pub query: Query,
    pub tools: Vec<ToolSpec>,
}

/// Runs rollouts for distinct queries concurrently; output order follows `jobs`.
pub fn run_rollouts(
    jobs: &[RolloutJob],
    model: &dyn ChatModel,
    executor: &dyn ToolExecutor,
    counter: &dyn TokenCounter,
    cfg: &RolloutConfig,
    concurrency: usize,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    bounded_map(jobs, concurrency, |_, job| {
        let pooled = PoolExecutor::new(executor, &job.tools);
        run_rollout(&job.query, &job.tools, model, &pooled, counter, cfg)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clean::ApproxTokenCounter;
    use serde_json::json;

    fn fixtures() -> FixtureExecutor {
        FixtureExecutor::new(&[FixtureRecord {
            tool: "income-statement".into(),
            args: json!({"symbol": "AAPL"}),
            response: "[{\"revenue\": 383285000000}]".into(),
        }])
    }

    fn specs() -> Vec<ToolSpec> {
        vec![ToolSpec::new("income-statement", "Annual income statements")]
    }

    fn query() -> Query {
        Query::new("q1", "AAPL revenue?", "Financial Statements")
    }

    fn looping() -> impl ChatModel {
        FnModel::new("loop", |m: &[Message], _: &[ToolSpec]| {
            let n = m.len();
            Ok(Message::assistant_calls(
                "",
                vec![ToolCall::new(format!("c{n}"), "income-statement", json!({"symbol": "AAPL"}))],
            ))
        })
    }

    #[test]
    fn fixture_semantics() {
        let ex = fixtures();
        let hit = ex.execute(&ToolCall::new("1", "income-statement", json!({"symbol": "AAPL"})));
        assert_eq!(hit.content, "[{\"revenue\": 383285000000}]");
        assert_eq!(hit.tool_call_id.as_deref(), Some("1"));
        assert_eq!(ex.execute(&ToolCall::new("2", "income-statement", json!({"symbol": "MSFT"}))).content, "[]");
        assert_eq!(ex.execute(&ToolCall::new("3", "quote", json!({}))).content, "Error: unknown tool quote");
    }

    #[test]
    fn fixture_file_round_trip() {
        let text = "{\"tool\":\"income-statement\",\"args\":{\"symbol\":\"AAPL\",\"period\":\"annual\"},\"response\":\"ok\"}\n";
        let ex = FixtureExecutor::new(&crate::io::parse_jsonl::<FixtureRecord>(text).unwrap());
        let call = ToolCall::new("1", "income-statement", json!({"period": "annual", "symbol": "AAPL"}));
        assert_eq!(ex.execute(&call).content, "ok");
    }

    #[test]
    fn immediate_answer() {
        let model = FnModel::new("m", |_: &[Message], _: &[ToolSpec]| Ok(Message::assistant("42")));
        let t = run_rollout(&query(), &specs(), &model, &fixtures(), &ApproxTokenCounter, &RolloutConfig::default()).unwrap();
        assert_eq!(t.turn_count(), 1);
        assert_eq!(t.tool_responses().count(), 0);
        assert_eq!(t.source_model, "m");
        assert!(!t.failed);
    }

    #[test]
    fn looping_model_hits_cap() {
        for max_turns in [1, 2, 7] {
            let cfg = RolloutConfig {
                max_turns,
                ..Default::default()
            };
            let t = run_rollout(&query(), &specs(), &looping(), &fixtures(), &ApproxTokenCounter, &cfg).unwrap();
            assert_eq!(t.turn_count(), max_turns);
            t.validate().unwrap();
        }
    }

    #[test]
    fn forced_turn_withholds_tools() {
        let model = FnModel::new("m", |m: &[Message], tools: &[ToolSpec]| {
            if tools.is_empty() {
                Ok(Message::assistant("final"))
            } else {
                Ok(Message::assistant_calls("", vec![ToolCall::new(format!("c{}", m.len()), "income-statement", json!({}))]))
            }
        });
        let cfg = RolloutConfig {
            max_turns: 3,
            ..Default::default()
        };
        let t = run_rollout(&query(), &specs(), &model, &fixtures(), &ApproxTokenCounter, &cfg).unwrap();
        assert_eq!(t.turn_count(), 3);
        assert_eq!(t.final_answer(), "final");
        assert!(t.messages.iter().any(|m| m.content == FORCED_ANSWER_PROMPT));
    }

    #[test]
    fn out_of_pool_call_continues() {
        let model = FnModel::new("m", |m: &[Message], _: &[ToolSpec]| {
            Ok(if m.len() == 2 {
                Message::assistant_calls("", vec![ToolCall::new("x", "secret-tool", json!({}))])
            } else {
                Message::assistant("done")
            })
        });
        let ex = fixtures();
        let pooled = PoolExecutor::new(&ex, &specs());
        let t = run_rollout(&query(), &specs(), &model, &pooled, &ApproxTokenCounter, &RolloutConfig::default()).unwrap();
        assert_eq!(t.tool_responses().next().unwrap().content, "Error: unknown tool secret-tool");
        assert_eq!(t.final_answer(), "done");
    }

    #[test]
    fn model_failure_keeps_partial() {
        let model = FnModel::new("m", |m: &[Message], _: &[ToolSpec]| {
            if m.len() > 2 {
                Err(Error::Model("boom".into()))
            } else {
                Ok(Message::assistant_calls("", vec![ToolCall::new("c", "income-statement", json!({}))]))
            }
        });
        let t = run_rollout(&query(), &specs(), &model, &fixtures(), &ApproxTokenCounter, &RolloutConfig::default()).unwrap();
        assert!(t.failed);
        assert_eq!(t.messages.len(), 4);
    }

    #[test]
    fn parallel_calls_in_order() {
        let model = FnModel::new("m", |m: &[Message], _: &[ToolSpec]| {
            Ok(if m.len() == 2 {
                Message::assistant_calls(
                    "",
                    vec![
                        ToolCall::new("b", "income-statement", json!({"symbol": "AAPL"})),
                        ToolCall::new("a", "nope", json!({})),
                    ],
                )
            } else {
                Message::assistant("done")
            })
        });
        let t = run_rollout(&query(), &specs(), &model, &fixtures(), &ApproxTokenCounter, &RolloutConfig::default()).unwrap();
        let ids: Vec<_> = t.tool_responses().map(|m| m.tool_call_id.clone().unwrap()).collect();
        assert_eq!(ids, vec!["b", "a"]);
    }

    #[test]
    fn deterministic_and_concurrent() {
        let jobs: Vec<_> = (0..6)
            .map(|i| RolloutJob {
                query: Query::new(format!("q{i}"), format!("question {i}"), "c"),
                tools: specs(),
            })
            .collect();
        let cfg = RolloutConfig::default();
        let a = run_rollouts(&jobs, &looping(), &fixtures(), &ApproxTokenCounter, &cfg, 3).unwrap();
        let b = run_rollouts(&jobs, &looping(), &fixtures(), &ApproxTokenCounter, &cfg, 1).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a[4].query_id, "q4");
    }

    #[test]
    fn replay_reproduces_recording() {
        let recorded = Trajectory::new(
            "q1",
            "ref",
            vec![
                Message::system(GENERIC_SYSTEM_PROMPT),
                Message::user("AAPL revenue?"),
                Message::assistant_calls("", vec![ToolCall::new("c1", "income-statement", json!({"symbol": "AAPL"}))]),
                Message::tool("c1", "[{\"revenue\": 383285000000}]"),
                Message::assistant("$383.3B"),
            ],
        );
        let model = ReplayModel::new("replay", std::slice::from_ref(&recorded));
        let t = run_rollout(&query(), &specs(), &model, &fixtures(), &ApproxTokenCounter, &RolloutConfig::default()).unwrap();
        assert_eq!(t.messages, recorded.messages);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = RolloutConfig {
            top_p: 0.0,
            ..Default::default()
        };
        assert!(run_rollout(&query(), &specs(), &looping(), &fixtures(), &ApproxTokenCounter, &cfg).is_err());
    }
}
