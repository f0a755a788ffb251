//! Embed a tool catalog (cached on disk) and build a distractor pool.
//!
//! cargo run -p trajkit --example build_tool_pools [catalog.json]

use std::collections::BTreeSet;

use trajkit::augment::{build_pool, embed_catalog, HashingEmbedder, PoolConfig};
use trajkit::judge::RetryPolicy;
use trajkit::{ToolCatalog, ToolSpec};

fn demo_catalog() -> ToolCatalog {
    let topics = ["stock price", "income statement", "balance sheet", "dividend history", "analyst rating", "crypto price", "fx rate", "treasury yield", "insider trades", "earnings calendar"];
    let verbs = ["get", "search", "list", "compare"];
    let tools = topics
        .iter()
        .flat_map(|t| verbs.iter().map(move |v| ToolSpec::new(format!("{v}_{}", t.replace(' ', "_")), format!("{v} {t} for a symbol"))))
        .collect();
    ToolCatalog::new(tools).unwrap()
}

fn main() {
    let catalog = match std::env::args().nth(1) {
        Some(p) => ToolCatalog::from_json(&std::fs::read_to_string(p).unwrap()).unwrap(),
        None => demo_catalog(),
    };
    let cache = std::env::temp_dir().join("trajkit-example-vectors.jsonl");
    let vectors = embed_catalog(&catalog, &HashingEmbedder::default(), Some(&cache), RetryPolicy::default()).unwrap();
    println!("{} vectors (cache: {})", vectors.len(), cache.display());

    let first = catalog.tools()[0].name.clone();
    let called: BTreeSet<String> = [first].into();
    let pool = build_pool("example-1", &called, &catalog, &vectors, PoolConfig { size: 12, similar_frac: 0.5 }, 42).unwrap();
    println!("called:  {:?}", pool.called);
    println!("similar: {:?}", pool.similar);
    println!("random:  {:?}", pool.random);
}
