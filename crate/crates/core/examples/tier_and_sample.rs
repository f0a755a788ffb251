//! Difficulty scores, tiers and a stratified sample on a synthetic corpus.

use std::collections::HashMap;

use rand::Rng;
use trajkit::curation::{assign_tiers, score_corpus, stratified_sample, TierCutoffs};
use trajkit::seed::rng;
use trajkit::{Message, Query, ToolCall, Trajectory};

fn main() {
    let mut r = rng(1);
    let mut queries = Vec::new();
    let mut trajectories = Vec::new();
    for i in 0..60 {
        let text = if i % 4 == 0 {
            format!("1) Get revenue for company {i} 2) compute the growth rate 3) compare to peers?")
        } else {
            format!("Latest price for ticker {i}?")
        };
        queries.push(Query::new(format!("q{i}"), text, "equity"));
        for model in ["a", "b", "c"] {
            let mut m = vec![Message::user("q")];
            for j in 0..r.gen_range(0..6) {
                let id = format!("c{j}");
                m.push(Message::assistant_calls("", vec![ToolCall::new(&id, format!("tool_{}", r.gen_range(0..4)), serde_json::json!({}))]));
                m.push(Message::tool(id, if r.gen_bool(0.7) { "[1]" } else { "[]" }));
            }
            m.push(Message::assistant("answer"));
            trajectories.push(Trajectory::new(format!("q{i}"), model, m));
        }
    }
    let scores = score_corpus(&queries, &trajectories, &HashMap::new());
    let tiers = assign_tiers(&scores, TierCutoffs::default()).unwrap();
    let sample = stratified_sample(&tiers, 24, 0.55, 42).unwrap();
    for (tier, (ok, failed)) in &sample.per_tier {
        println!("{tier}: {ok} successful, {failed} failed");
    }
    for w in &sample.warnings {
        println!("warning: {w}");
    }
    println!("selected: {}", sample.selected.join(" "));
}
