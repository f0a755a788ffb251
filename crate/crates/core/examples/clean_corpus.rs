//! Clean a small raw corpus and print the tallies.
//!
//! cargo run -p trajkit --example clean_corpus [raw.jsonl]

use serde_json::json;
use trajkit::clean::{clean_pipeline, ApproxTokenCounter, CleanConfig};
use trajkit::{Message, ToolCall, Trajectory};

fn demo_corpus() -> String {
    let call = |id: &str| ToolCall::new(id, "get_quote", json!({"ticker": "NVDA"}));
    let records = [
        // protocol-laden system prompt, reasoning next to a call, a ghost call
        Trajectory::new(
            "q1",
            "model-a",
            vec![
                Message::system("You are connected to MCP server finance-v2. Use <tool> blocks."),
                Message::user("Where is NVDA trading?"),
                Message::assistant_calls("Let me fetch the quote.", vec![call("c1")]),
                Message::tool("c1", r#"{"price": 131.2}"#),
                Message::assistant("<function_calls><invoke name=\"get_news\"/></function_calls>"),
                Message::assistant("NVDA last traded at $131.20."),
            ],
        ),
        // every tool response empty
        Trajectory::new(
            "q2",
            "model-a",
            vec![
                Message::user("Any filings for XYZ?"),
                Message::assistant_calls("", vec![call("c1")]),
                Message::tool("c1", "[]"),
                Message::assistant("Nothing found."),
            ],
        ),
    ];
    let mut raw: String = records.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect();
    raw.push_str("{truncated record\n");
    raw
}

fn main() {
    let raw = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path).expect("read corpus"),
        None => demo_corpus(),
    };
    let (kept, report) = clean_pipeline(&raw, &CleanConfig::default(), &ApproxTokenCounter);
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    for t in &kept {
        println!("{} ({} messages):", t.query_id, t.messages.len());
        for m in &t.messages {
            let text = m.render();
            let short: String = text.chars().take(60).collect();
            println!("  {:?}: {short}", m.role);
        }
    }
}
