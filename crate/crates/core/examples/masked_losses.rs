//! Token masks and the masked SFT / DPO losses on hand-made log-probs.

use trajkit::clean::ApproxTokenCounter;
use trajkit::train::{compute_trajectory_mask, masked_dpo_loss, masked_sft_loss, LogProbTrace, Split, TrainingConfig};
use trajkit::{Message, ToolCall, Trajectory};

fn main() {
    let t = Trajectory::new(
        "q1",
        "m",
        vec![
            Message::system("You are a helpful assistant."),
            Message::user("Price of GOOG?"),
            Message::assistant_calls("", vec![ToolCall::new("c1", "get_quote", serde_json::json!({"ticker": "GOOG"}))]),
            Message::tool("c1", r#"{"price": 171.3}"#),
            Message::assistant("GOOG is at $171.30."),
        ],
    );
    let mask = compute_trajectory_mask(&t, &ApproxTokenCounter, Split::Sft);
    for s in &mask.token_spans {
        println!("message {} tokens {} z={}", s.message_index, s.token_count, s.z);
    }
    println!("trainable {}/{}", mask.trainable_tokens(), mask.len());

    let n = mask.len();
    let policy: Vec<f64> = (0..n).map(|i| -0.1 * (i % 5) as f64).collect();
    let sft = masked_sft_loss(&LogProbTrace::policy(policy.clone()), &mask).unwrap();
    println!("sft loss {sft:.4}");

    let reference = vec![-0.3; n];
    let chosen = LogProbTrace::with_reference(policy, reference.clone());
    let rejected = LogProbTrace::with_reference(vec![-0.5; n], reference);
    let beta = TrainingConfig::dpo().beta.unwrap();
    let dpo = masked_dpo_loss(&chosen, &mask, &rejected, &mask, beta).unwrap();
    println!("dpo loss {dpo:.4} (beta {beta})");
}
