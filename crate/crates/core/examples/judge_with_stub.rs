//! Drive the judge with an offline stub: rubric metrics, golden selection
//! and a pairwise comparison. Swap the stub for `RemoteJudge::from_env()`
//! to use a real endpoint.

use trajkit::judge::{FnJudge, Judge, JudgeReply, JudgeRequest, RetryPolicy};
use trajkit::{Message, Query, ToolCall, Trajectory};

fn traj(model: &str, answer: &str) -> Trajectory {
    Trajectory::new(
        "q1",
        model,
        vec![
            Message::user("What is Tesla's P/E ratio?"),
            Message::assistant_calls("", vec![ToolCall::new("c1", "get_ratios", serde_json::json!({"ticker": "TSLA"}))]),
            Message::tool("c1", r#"{"pe": 61.8}"#),
            Message::assistant(answer),
        ],
    )
}

fn main() {
    // Structured replies for pairwise prompts, a Likert line for everything else.
    let stub = FnJudge(|req: &JudgeRequest| {
        Ok(if req.schema.as_ref().is_some_and(|s| s.to_string().contains("verdict")) {
            JudgeReply::Structured(serde_json::json!({"verdict": "A is better", "reasoning": "cites the tool"}))
        } else if req.prompt.contains("## Candidate 2") {
            JudgeReply::Text("2 - it quotes the number".into())
        } else {
            JudgeReply::Text("score: 4\nGrounded in the tool output.".into())
        })
    });
    let judge = Judge::new(stub).with_retry(RetryPolicy::immediate(2));

    let mut query = Query::new("q1", "What is Tesla's P/E ratio?", "valuation");
    query.reference_answer = Some("About 62".into());
    let vague = traj("model-a", "It is high.");
    let precise = traj("model-b", "Tesla trades at a P/E of 61.8.");

    let golden_idx = judge.select_golden(&query, &[vague.clone(), precise.clone()]).unwrap();
    println!("golden: candidate {golden_idx}");

    let report = judge.judge_all(&query, &vague, &precise);
    println!("{}", serde_json::to_string_pretty(&report).unwrap());

    let verdict = judge.pairwise_judge(&query.text, &precise, &vague, "get_ratios: valuation ratios", 7).unwrap();
    println!("pairwise: {:?} (chosen in slot A: {})", verdict.outcome(), verdict.a_was_chosen_slot);
}
