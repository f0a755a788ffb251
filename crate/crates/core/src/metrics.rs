//! Deterministic rubric metrics and the nine-metric aggregation.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{extract_tool_sequence, MetricReport, MetricScores, Trajectory};

/// Golden-label review state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldenStatus {
    Candidate,
    Approved,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenLabel {
    pub query_id: String,
    pub trajectory: Trajectory,
    pub status: GoldenStatus,
}

/// F1 from an overlap count and the two collection sizes.
///
/// Two empty collections agree perfectly; one empty side scores zero.
pub fn f1_from_counts(overlap: usize, candidate: usize, golden: usize) -> f64 {
    match (candidate, golden) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * overlap as f64 / (candidate + golden) as f64,
    }
}

fn tool_names(t: &Trajectory) -> Vec<&str> {
    t.tool_calls().map(|c| c.name.as_str()).collect()
}

/// Set-level F1 over unique tool names.
pub fn set_f1(candidate: &Trajectory, golden: &Trajectory) -> f64 {
    let c: BTreeSet<&str> = tool_names(candidate).into_iter().collect();
    let g: BTreeSet<&str> = tool_names(golden).into_iter().collect();
    f1_from_counts(c.intersection(&g).count(), c.len(), g.len())
}

/// Bag-level F1 over the multiset of tool names.
pub fn bag_f1(candidate: &Trajectory, golden: &Trajectory) -> f64 {
    let counts = |names: Vec<&str>| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        for n in names {
            *m.entry(n.to_owned()).or_default() += 1;
        }
        m
    };
    let c = counts(tool_names(candidate));
    let g = counts(tool_names(golden));
    let overlap = c.iter().map(|(k, n)| (*n).min(g.get(k).copied().unwrap_or(0))).sum();
    f1_from_counts(overlap, c.values().sum(), g.values().sum())
}

/// Mean of set-level and bag-level F1.
pub fn tool_call_f1(candidate: &Trajectory, golden: &Trajectory) -> f64 {
    (set_f1(candidate, golden) + bag_f1(candidate, golden)) / 2.0
}

/// `min(T_golden / T_candidate, 1)`, or 0 when the candidate took no turns.
pub fn step_efficiency(candidate: &Trajectory, golden: &Trajectory) -> f64 {
    step_efficiency_from_turns(candidate.turn_count(), golden.turn_count())
}

pub fn step_efficiency_from_turns(candidate_turns: usize, golden_turns: usize) -> f64 {
    if candidate_turns == 0 {
        return 0.0;
    }
    (golden_turns as f64 / candidate_turns as f64).min(1.0)
}

/// `1 - N_dup / N_total` where a duplicate repeats an earlier (name, arguments) pair.
pub fn redundancy_score(candidate: &Trajectory) -> f64 {
    let seq = extract_tool_sequence(candidate);
    if seq.is_empty() {
        return 1.0;
    }
    let mut seen = HashSet::with_capacity(seq.len());
    let dups = seq.iter().filter(|call| !seen.insert(*call)).count();
    (seq.len() - dups) as f64 / seq.len() as f64
}

fn check_range(name: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} = {value} outside [{lo}, {hi}]")))
    }
}

/// Mean of the three algorithmic scores and the six Likert scores divided by 5.
pub fn aggregate_overall(s: &MetricScores) -> Result<f64> {
    let algorithmic = [
        ("tool_call_f1", s.tool_call_f1),
        ("step_efficiency", s.step_efficiency),
        ("redundancy", s.redundancy),
    ];
    let likert = [
        ("pass_rate", s.pass_rate),
        ("task_relevance", s.task_relevance),
        ("logical_progression", s.logical_progression),
        ("info_utilization", s.info_utilization),
        ("progress_score", s.progress_score),
        ("answer_quality", s.answer_quality),
    ];
    for (name, v) in algorithmic {
        check_range(name, v, 0.0, 1.0)?;
    }
    for (name, v) in likert {
        check_range(name, v, 1.0, 5.0)?;
    }
    let total: f64 = algorithmic.iter().map(|(_, v)| v).sum::<f64>() + likert.iter().map(|(_, v)| v / 5.0).sum::<f64>();
    Ok(total / 9.0)
}

/// Report with the algorithmic fields filled and the judged ones empty.
pub fn score_algorithmic(candidate: &Trajectory, golden: &Trajectory) -> MetricReport {
    MetricReport {
        query_id: candidate.query_id.clone(),
        source_model: candidate.source_model.clone(),
        tool_call_f1: tool_call_f1(candidate, golden),
        step_efficiency: step_efficiency(candidate, golden),
        redundancy: redundancy_score(candidate),
        pass_rate: None,
        task_relevance: None,
        logical_progression: None,
        info_utilization: None,
        progress_score: None,
        answer_quality: None,
        overall: None,
        judge_rationales: BTreeMap::new(),
        failed_metrics: Vec::new(),
    }
}

/// Mean of `overall` over complete reports only; `None` when there are none.
pub fn mean_overall<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Option<f64> {
    let vals: Vec<f64> = reports.into_iter().filter(|r| r.is_complete()).filter_map(|r| r.overall).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Message, ToolCall};
    use approx::assert_abs_diff_eq;
    use serde_json::json;

    fn traj(calls: &[(&str, serde_json::Value)], turns: usize) -> Trajectory {
        let mut messages = vec![Message::user("q")];
        let tool_calls: Vec<ToolCall> = calls
            .iter()
            .enumerate()
            .map(|(i, (n, a))| ToolCall::new(format!("c{i}"), *n, a.clone()))
            .collect();
        if !tool_calls.is_empty() {
            messages.push(Message::assistant_calls("", tool_calls));
        }
        while messages.iter().filter(|m| m.role == crate::model::Role::Assistant).count() < turns {
            messages.push(Message::assistant("..."));
        }
        Trajectory::new("q", "m", messages)
    }

    #[test]
    fn f1_bag_example() {
        let c = traj(&[("A", json!({})), ("A", json!({"x":1})), ("B", json!({}))], 1);
        let g = traj(&[("A", json!({})), ("B", json!({})), ("B", json!({"y":2}))], 1);
        assert_eq!(set_f1(&c, &g), 1.0);
        assert_abs_diff_eq!(bag_f1(&c, &g), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tool_call_f1(&c, &g), 0.8333333333, epsilon = 1e-9);
    }

    #[test]
    fn f1_identity_and_empty_cases() {
        let a = traj(&[("A", json!({})), ("B", json!({}))], 1);
        assert_eq!(tool_call_f1(&a, &a), 1.0);
        let none = traj(&[], 1);
        let just_a = traj(&[("A", json!({}))], 1);
        assert_eq!(tool_call_f1(&none, &just_a), 0.0);
        assert_eq!(tool_call_f1(&none, &none), 1.0);
    }

    #[test]
    fn step_efficiency_cases() {
        assert_eq!(step_efficiency_from_turns(8, 4), 0.5);
        assert_eq!(step_efficiency_from_turns(3, 4), 1.0);
        assert_eq!(step_efficiency_from_turns(4, 4), 1.0);
        assert_eq!(step_efficiency_from_turns(0, 4), 0.0);
        let g = traj(&[], 4);
        let c = traj(&[], 8);
        assert_eq!(step_efficiency(&c, &g), 0.5);
    }

    #[test]
    fn redundancy_cases() {
        let t = traj(
            &[
                ("A", json!({"s":"X"})),
                ("B", json!({})),
                ("A", json!({"s":"X"})),
                ("C", json!({})),
                ("D", json!({})),
            ],
            1,
        );
        assert_abs_diff_eq!(redundancy_score(&t), 0.8, epsilon = 1e-12);
        let distinct_args = traj(&[("A", json!({"s":"X"})), ("A", json!({"s":"Y"}))], 1);
        assert_eq!(redundancy_score(&distinct_args), 1.0);
        assert_eq!(redundancy_score(&traj(&[], 1)), 1.0);
        // Key order does not make a call distinct.
        let reordered = traj(&[("A", json!({"a":1,"b":2})), ("A", json!({"b":2,"a":1}))], 1);
        assert_eq!(redundancy_score(&reordered), 0.5);
    }

    fn row(v: [f64; 9]) -> MetricScores {
        MetricScores {
            tool_call_f1: v[0],
            step_efficiency: v[1],
            redundancy: v[2],
            pass_rate: v[3],
            task_relevance: v[4],
            logical_progression: v[5],
            info_utilization: v[6],
            progress_score: v[7],
            answer_quality: v[8],
        }
    }

    #[test]
    fn aggregate_reference_rows() {
        let opus = row([0.896, 0.926, 0.997, 2.65, 4.14, 4.51, 3.23, 3.49, 3.34]);
        assert_abs_diff_eq!(aggregate_overall(&opus).unwrap(), 0.788, epsilon = 0.002);
        let gpt = row([0.804, 0.966, 0.994, 3.00, 3.79, 3.71, 2.89, 2.99, 2.99]);
        assert_abs_diff_eq!(aggregate_overall(&gpt).unwrap(), 0.737, epsilon = 0.002);
        let max = row([1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
        assert_eq!(aggregate_overall(&max).unwrap(), 1.0);
    }

    #[test]
    fn aggregate_rejects_out_of_range() {
        assert!(aggregate_overall(&row([1.1, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0])).is_err());
        assert!(aggregate_overall(&row([1.0, 1.0, 1.0, 0.5, 5.0, 5.0, 5.0, 5.0, 5.0])).is_err());
        assert!(aggregate_overall(&row([f64::NAN, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0])).is_err());
    }

    #[test]
    fn identical_trajectories_score_one() {
        let t = traj(&[("A", json!({})), ("B", json!({}))], 2);
        let r = score_algorithmic(&t, &t);
        assert_eq!((r.tool_call_f1, r.step_efficiency, r.redundancy), (1.0, 1.0, 1.0));
        assert!(r.pass_rate.is_none() && r.overall.is_none());
    }
}
