//! Seed a store with two annotators' selections, print agreement, then serve it.
//!
//! cargo run -p trajkit-service --example annotate_demo [addr] [data-dir]

use serde_json::json;
use trajkit::{Message, Query, ToolCall, Trajectory};
use trajkit_service::Store;

fn candidate(qid: &str, model: &str, calls: usize) -> Trajectory {
    let mut m = vec![Message::user("question")];
    for i in 0..calls {
        let id = format!("c{i}");
        m.push(Message::assistant_calls("", vec![ToolCall::new(&id, "get_quote", json!({"n": i}))]));
        m.push(Message::tool(id, "{\"price\": 1}"));
    }
    m.push(Message::assistant("answer"));
    Trajectory::new(qid, model, m)
}

#[tokio::main]
async fn main() {
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());
    let dir = std::env::args()
        .nth(2)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("trajkit-annotate-demo"));

    {
        let mut store = Store::open(&dir).unwrap();
        if store.queries(None, None).is_empty() {
            for (i, cat) in ["equity", "macro", "crypto"].iter().enumerate() {
                let qid = format!("q{i}");
                store.add_query(Query::new(&qid, format!("demo question {i}"), *cat)).unwrap();
                for (model, calls) in [("alpha", 1), ("beta", 2), ("gamma", 0)] {
                    store.add_candidate(&qid, candidate(&qid, model, calls), None).unwrap();
                }
                store.select(&qid, "ann1", &json!(i % 3)).unwrap();
                store.select(&qid, "ann2", &json!((i + i / 2) % 3)).unwrap();
            }
        }
        println!("{}", serde_json::to_string_pretty(&store.agreement()).unwrap());
    }

    println!("data in {}, listening on {addr}", dir.display());
    trajkit_service::serve(addr.parse().unwrap(), &dir, None).await.unwrap();
}
