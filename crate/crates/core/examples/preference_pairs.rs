//! Split a corpus, judge references against rollouts and export DPO records.

use std::collections::HashMap;

use trajkit::clean::ApproxTokenCounter;
use trajkit::judge::{ConstantJudge, Judge};
use trajkit::preference::{judge_and_pair, split_corpus};
use trajkit::train::preference_records;
use trajkit::augment::ToolPool;
use trajkit::{Message, ToolCatalog, ToolSpec, Trajectory};

fn example(id: &str, answer: &str) -> Trajectory {
    Trajectory::new(id, "m", vec![Message::user(format!("question {id}")), Message::assistant(answer)])
}

fn main() {
    let corpus: Vec<Trajectory> = (0..10).map(|i| example(&format!("q{i}"), "reference answer")).collect();
    let (sft, pref) = split_corpus(&corpus, 0.5, 42).unwrap();
    println!("sft {} / pref {}", sft.len(), pref.len());

    let rollouts: Vec<Trajectory> = pref.iter().map(|t| example(&t.query_id, "weaker answer")).collect();
    let catalog = ToolCatalog::new(vec![ToolSpec::new("get_quote", "Latest quote")]).unwrap();
    let pools: HashMap<String, ToolPool> = pref
        .iter()
        .map(|t| {
            let p = ToolPool {
                example_id: t.query_id.clone(),
                tools: vec!["get_quote".into()],
                called: vec![],
                similar: vec![],
                random: vec!["get_quote".into()],
            };
            (t.query_id.clone(), p)
        })
        .collect();

    // A judge that always prefers slot A: only pairs where the reference
    // landed in slot A survive.
    let judge = Judge::new(ConstantJudge("A is better".into()));
    let outcome = judge_and_pair(&judge, &pref, &rollouts, &pools, &catalog, 42);
    println!(
        "pairs {} ties {} rejected-wins {} skipped {}",
        outcome.pairs.len(),
        outcome.ties,
        outcome.rejected_wins,
        outcome.skipped
    );
    let pool_list: Vec<ToolPool> = pools.into_values().collect();
    let records = preference_records(&outcome.pairs, &pool_list, &ApproxTokenCounter).unwrap();
    if let Some(r) = records.first() {
        println!("{}", serde_json::to_string_pretty(r).unwrap());
    }
}
