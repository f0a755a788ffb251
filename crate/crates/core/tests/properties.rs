use proptest::prelude::*;
use serde_json::json;

use trajkit::clean::{self, ApproxTokenCounter, CleanConfig};
use trajkit::metrics::{redundancy_score, step_efficiency_from_turns, tool_call_f1};
use trajkit::{Message, Role, ToolCall, Trajectory};

fn from_calls(calls: &[(u8, u8)]) -> Trajectory {
    let mut m = vec![Message::user("q")];
    for (i, (name, arg)) in calls.iter().enumerate() {
        let id = format!("c{i}");
        m.push(Message::assistant_calls("", vec![ToolCall::new(id.clone(), format!("t{name}"), json!({"a": arg}))]));
        m.push(Message::tool(id, "[1]"));
    }
    m.push(Message::assistant("done"));
    Trajectory::new("q", "m", m)
}

fn sorted_names(calls: &[(u8, u8)]) -> Vec<u8> {
    let mut v: Vec<u8> = calls.iter().map(|c| c.0).collect();
    v.sort();
    v
}

fn calls() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..4, 0u8..3), 0..8)
}

proptest! {
    #[test]
    fn f1_is_one_iff_name_multisets_match(a in calls(), b in calls()) {
        let f1 = tool_call_f1(&from_calls(&a), &from_calls(&b));
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert_eq!(f1 == 1.0, sorted_names(&a) == sorted_names(&b));
        prop_assert_eq!(f1, tool_call_f1(&from_calls(&b), &from_calls(&a)));
    }

    #[test]
    fn step_efficiency_non_increasing(golden in 1usize..20, c in 1usize..30) {
        let s = step_efficiency_from_turns(c, golden);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(step_efficiency_from_turns(c + 1, golden) <= s);
    }

    #[test]
    fn redundancy_ignores_order_of_distinct_calls(a in calls(), seed in any::<u64>()) {
        let mut distinct = a.clone();
        distinct.sort();
        distinct.dedup();
        let mut shuffled = distinct.clone();
        let n = shuffled.len();
        if n > 1 {
            shuffled.swap((seed as usize) % n, (seed as usize / 7) % n);
        }
        prop_assert_eq!(redundancy_score(&from_calls(&distinct)), 1.0);
        prop_assert_eq!(redundancy_score(&from_calls(&shuffled)), 1.0);
        let dups = a.len() - distinct.len();
        if !a.is_empty() {
            prop_assert_eq!(redundancy_score(&from_calls(&a)), (a.len() - dups) as f64 / a.len() as f64);
        }
    }
}

/// Random assistant/tool/user messages, some carrying ghost patterns.
fn messages() -> impl Strategy<Value = Vec<Message>> {
    let msg = prop_oneof![
        Just(Message::assistant("<function_calls>x</function_calls>")),
        Just(Message::assistant("<function=get_pe>{}</function>")),
        Just(Message::assistant("plain answer")),
        Just(Message::assistant_calls("thinking", vec![ToolCall::new("c", "get_pe", json!({}))])),
        Just(Message::tool("c", "[]")),
        Just(Message::tool("c", "{\"pe\": 3}")),
        Just(Message::tool("c", "Error: boom")),
        Just(Message::user("more")),
    ];
    prop::collection::vec(msg, 0..12)
}

fn is_subsequence(sub: &[Message], full: &[Message]) -> bool {
    let mut it = full.iter();
    sub.iter().all(|m| it.any(|f| f == m))
}

proptest! {
    #[test]
    fn ghost_removal_keeps_order_and_answered_calls(ms in messages()) {
        let t = Trajectory::new("q", "m", ms.clone());
        let (out, removed) = clean::remove_ghost_tool_calls(&t);
        prop_assert_eq!(out.messages.len() + removed, ms.len());
        prop_assert!(is_subsequence(&out.messages, &ms));
        for (i, m) in ms.iter().enumerate() {
            if ms.get(i + 1).is_some_and(|n| n.role == Role::Tool) {
                prop_assert!(out.messages.iter().any(|o| o == m));
            }
        }
    }

    #[test]
    fn kept_trajectories_have_a_successful_response(records in prop::collection::vec(messages(), 0..10)) {
        let raw: String = records
            .iter()
            .map(|ms| serde_json::to_string(&Trajectory::new("q", "m", ms.clone())).unwrap() + "\n")
            .collect();
        let (kept, report) = clean::clean_pipeline(&raw, &CleanConfig::default(), &ApproxTokenCounter);
        prop_assert!(report.is_balanced());
        for t in &kept {
            prop_assert!(t.tool_responses().any(|m| clean::is_successful_response(&m.content)));
            prop_assert_eq!(t.messages[0].role, Role::System);
        }
    }
}
