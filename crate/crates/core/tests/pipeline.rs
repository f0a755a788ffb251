use std::collections::{BTreeSet, HashMap};

use serde_json::json;

use trajkit::augment::{build_pool, called_tools, embed_catalog, HashingEmbedder, PoolConfig, ToolPool};
use trajkit::clean::{clean_pipeline, ApproxTokenCounter, CleanConfig};
use trajkit::curation::{assign_tiers, score_corpus, stratified_sample, TierCutoffs};
use trajkit::judge::{FnJudge, Judge, JudgeReply, JudgeRequest, RetryPolicy};
use trajkit::metrics::aggregate_overall;
use trajkit::preference::{judge_and_pair, split_corpus};
use trajkit::rollout::{run_rollouts, FixtureExecutor, FixtureRecord, FnModel, RolloutConfig, RolloutJob};
use trajkit::train::{preference_records, sft_records};
use trajkit::{Message, Query, Role, ToolCall, ToolCatalog, ToolSpec, Trajectory};

const N: usize = 18;

fn catalog() -> ToolCatalog {
    ToolCatalog::new((0..24).map(|i| ToolSpec::new(format!("tool_{i}"), format!("finance endpoint number {i}"))).collect()).unwrap()
}

fn raw_corpus() -> (Vec<Query>, String) {
    let mut queries = Vec::new();
    let mut raw = String::new();
    for q in 0..N {
        let qid = format!("q{q}");
        let mut query = Query::new(&qid, format!("question {q} about ticker T{q}"), ["equity", "macro"][q % 2]);
        query.reference_answer = Some(format!("reference {q}"));
        queries.push(query);
        for (k, model) in ["a", "b", "c"].iter().enumerate() {
            let mut m = vec![Message::system("Connected via MCP."), Message::user(format!("question {q}"))];
            for j in 0..=(q + k) % 3 {
                let id = format!("c{j}");
                m.push(Message::assistant_calls("", vec![ToolCall::new(&id, format!("tool_{}", (q + j) % 24), json!({"t": q}))]));
                m.push(Message::tool(id, if (q + k) % 5 == 0 { "[]" } else { "{\"v\": 1}" }));
            }
            m.push(Message::assistant(format!("answer from {model}")));
            raw.push_str(&serde_json::to_string(&Trajectory::new(&qid, *model, m)).unwrap());
            raw.push('\n');
        }
    }
    (queries, raw)
}

fn stub_judge() -> Judge<impl trajkit::judge::JudgeClient> {
    let client = FnJudge(|req: &JudgeRequest| {
        Ok(if req.schema.as_ref().is_some_and(|s| s.to_string().contains("verdict")) {
            JudgeReply::Structured(json!({"verdict": "A is better", "reasoning": "r"}))
        } else if req.prompt.contains("## Candidate 1") {
            JudgeReply::Text("1".into())
        } else {
            JudgeReply::Text(format!("{}", 1 + req.prompt.len() % 5))
        })
    });
    Judge::new(client).with_retry(RetryPolicy::immediate(1))
}

#[derive(Debug, PartialEq)]
struct Outputs {
    retained: usize,
    overalls: Vec<f64>,
    sampled: Vec<String>,
    pools: Vec<ToolPool>,
    sft: usize,
    pairs: usize,
    records: String,
}

fn run() -> Outputs {
    let (queries, raw) = raw_corpus();
    let (clean, report) = clean_pipeline(&raw, &CleanConfig::default(), &ApproxTokenCounter);
    assert!(report.is_balanced());
    assert!(clean.iter().all(|t| t.messages[0].role == Role::System));

    let judge = stub_judge();
    let mut golden = Vec::new();
    let mut overalls = Vec::new();
    for q in &queries {
        let cands: Vec<Trajectory> = clean.iter().filter(|t| t.query_id == q.id).cloned().collect();
        if cands.is_empty() {
            continue;
        }
        let g = cands[judge.select_golden(q, &cands).unwrap()].clone();
        for c in &cands {
            let r = judge.judge_all(q, c, &g);
            assert!(r.failed_metrics.is_empty(), "{:?}", r.failed_metrics);
            assert_eq!(r.overall, Some(aggregate_overall(&r.scores().unwrap()).unwrap()));
            overalls.push(r.overall.unwrap());
        }
        golden.push(g);
    }

    let scores = score_corpus(&queries, &clean, &HashMap::new());
    let tiers = assign_tiers(&scores, TierCutoffs::default()).unwrap();
    let sample = stratified_sample(&tiers, 9, 0.55, 7).unwrap();
    assert_eq!(sample.selected.len(), 9);
    let examples: Vec<Trajectory> = golden.iter().filter(|g| sample.selected.contains(&g.query_id)).cloned().collect();

    let catalog = catalog();
    let vectors = embed_catalog(&catalog, &HashingEmbedder::default(), None, RetryPolicy::immediate(1)).unwrap();
    let cfg = PoolConfig { size: 10, similar_frac: 0.4 };
    let pools: Vec<ToolPool> = examples
        .iter()
        .map(|e| build_pool(&e.query_id, &called_tools(e), &catalog, &vectors, cfg, 7).unwrap())
        .collect();
    for (p, e) in pools.iter().zip(&examples) {
        let set: BTreeSet<&String> = p.tools.iter().collect();
        assert_eq!(set.len(), 10);
        assert!(called_tools(e).iter().all(|c| set.contains(c)));
    }

    let (sft, pref) = split_corpus(&examples, 0.5, 7).unwrap();
    assert_eq!(sft.len() + pref.len(), examples.len());

    let fixtures = FixtureExecutor::new(
        &(0..24)
            .map(|i| FixtureRecord { tool: format!("tool_{i}"), args: json!({"t": 0}), response: "{\"v\": 2}".into() })
            .collect::<Vec<_>>(),
    );
    let model = FnModel::new("policy", |m: &[Message], tools: &[ToolSpec]| {
        Ok(if m.iter().any(|x| x.role == Role::Tool) || tools.is_empty() {
            Message::assistant("done")
        } else {
            Message::assistant_calls("", vec![ToolCall::new("r1", &tools[0].name, json!({"t": 0}))])
        })
    });
    let pool_map: HashMap<String, ToolPool> = pools.iter().map(|p| (p.example_id.clone(), p.clone())).collect();
    let jobs: Vec<RolloutJob> = pref
        .iter()
        .map(|e| RolloutJob {
            query: queries.iter().find(|q| q.id == e.query_id).unwrap().clone(),
            tools: pool_map[&e.query_id].specs(&catalog),
        })
        .collect();
    let rollouts = run_rollouts(&jobs, &model, &fixtures, &ApproxTokenCounter, &RolloutConfig::default(), 4).unwrap();
    assert!(rollouts.iter().all(|r| !r.failed && r.turn_count() == 2));

    let outcome = judge_and_pair(&judge, &pref, &rollouts, &pool_map, &catalog, 7);
    assert_eq!(outcome.pairs.len() + outcome.ties + outcome.rejected_wins + outcome.skipped, pref.len());

    let sft_out = sft_records(&sft, &pools, &ApproxTokenCounter).unwrap();
    let pref_out = preference_records(&outcome.pairs, &pools, &ApproxTokenCounter).unwrap();
    assert_eq!(sft_out.len(), sft.len());
    Outputs {
        retained: clean.len(),
        overalls,
        sampled: sample.selected,
        pools,
        sft: sft_out.len(),
        pairs: pref_out.len(),
        records: serde_json::to_string(&(sft_out, pref_out)).unwrap(),
    }
}

#[test]
fn library_pipeline_end_to_end_is_deterministic() {
    let a = run();
    assert!(a.retained > 0);
    assert!(a.overalls.iter().all(|o| (0.0..=1.0).contains(o)));
    assert_eq!(a, run());
}
