//! Roll out a scripted policy against fixture tool responses.

use serde_json::json;
use trajkit::clean::ApproxTokenCounter;
use trajkit::rollout::{run_rollout, FixtureExecutor, FixtureRecord, FnModel, PoolExecutor, RolloutConfig};
use trajkit::{Message, Query, Role, ToolCall, ToolSpec};

fn main() {
    let fixtures = FixtureExecutor::new(&[FixtureRecord {
        tool: "get_quote".into(),
        args: json!({"ticker": "AMD"}),
        response: r#"{"price": 162.5}"#.into(),
    }]);
    let tools = vec![ToolSpec::new("get_quote", "Latest quote for a ticker"), ToolSpec::new("get_news", "Headlines")];

    // Calls get_quote once, then answers from the tool output.
    let policy = FnModel::new("scripted", |msgs: &[Message], offered: &[ToolSpec]| {
        let seen_tool = msgs.iter().rev().find(|m| m.role == Role::Tool);
        Ok(match seen_tool {
            Some(t) => Message::assistant(format!("AMD quote: {}", t.content)),
            None if !offered.is_empty() => {
                Message::assistant_calls("", vec![ToolCall::new("call_1", "get_quote", json!({"ticker": "AMD"}))])
            }
            None => Message::assistant("I could not look that up."),
        })
    });

    let query = Query::new("q1", "What is AMD trading at?", "equity");
    let cfg = RolloutConfig::default();
    let pooled = PoolExecutor::new(&fixtures, &tools);
    let t = run_rollout(&query, &tools, &policy, &pooled, &ApproxTokenCounter, &cfg).unwrap();
    println!("turns: {} failed: {}", t.turn_count(), t.failed);
    for m in &t.messages {
        println!("{:?}: {}", m.role, m.render());
    }
}
