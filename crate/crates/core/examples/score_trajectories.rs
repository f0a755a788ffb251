//! Algorithmic metrics for a candidate against its golden trajectory, then
//! the nine-metric overall with made-up judge scores.

use serde_json::json;
use trajkit::metrics::{aggregate_overall, score_algorithmic};
use trajkit::{JudgedMetric, Message, ToolCall, Trajectory};

fn trajectory(model: &str, calls: &[(&str, &str)]) -> Trajectory {
    let mut m = vec![Message::user("Compare AAPL and MSFT revenue growth.")];
    for (i, (tool, ticker)) in calls.iter().enumerate() {
        let id = format!("call_{i}");
        m.push(Message::assistant_calls("", vec![ToolCall::new(&id, *tool, json!({"ticker": ticker}))]));
        m.push(Message::tool(id, r#"{"revenue": [1, 2]}"#));
    }
    m.push(Message::assistant("AAPL grew faster."));
    Trajectory::new("q7", model, m)
}

fn main() {
    let golden = trajectory("golden", &[("get_income_statement", "AAPL"), ("get_income_statement", "MSFT")]);
    let candidate = trajectory(
        "candidate",
        &[
            ("get_income_statement", "AAPL"),
            ("get_income_statement", "AAPL"),
            ("search_news", "MSFT"),
            ("get_income_statement", "MSFT"),
        ],
    );
    let mut report = score_algorithmic(&candidate, &golden);
    println!("tool_call_f1    {:.3}", report.tool_call_f1);
    println!("step_efficiency {:.3}", report.step_efficiency);
    println!("redundancy      {:.3}", report.redundancy);

    for (metric, score) in JudgedMetric::ALL.into_iter().zip([3.0, 4.0, 4.0, 3.0, 3.0, 4.0]) {
        report.set_judged(metric, Some(score));
    }
    let overall = aggregate_overall(&report.scores().unwrap()).unwrap();
    println!("overall         {overall:.3}");
}
