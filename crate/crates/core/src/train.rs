//! Loss masks, masked SFT/DPO loss arithmetic, and training-file export.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::ToolPool;
use crate::clean::TokenCounter;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{Message, Role, Trajectory};
use crate::preference::PreferencePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Sft,
    #[serde(alias = "pref")]
    Preference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub message_index: usize,
    pub token_count: usize,
    /// 1 when the span's tokens contribute to the loss.
    pub z: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub example_id: String,
    pub token_spans: Vec<TokenSpan>,
    pub split: Split,
}

impl MaskedExample {
    pub fn len(&self) -> usize {
        self.token_spans.iter().map(|s| s.token_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-token mask bits.
    pub fn mask(&self) -> Vec<u8> {
        self.token_spans
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.z, s.token_count))
            .collect()
    }

    pub fn trainable_tokens(&self) -> usize {
        self.token_spans.iter().filter(|s| s.z == 1).map(|s| s.token_count).sum()
    }
}

/// Only assistant tokens (content, reasoning and tool-call renderings) are trainable.
pub fn compute_mask(
    example_id: &str,
    messages: &[Message],
    counter: &dyn TokenCounter,
    split: Split,
) -> MaskedExample {
    let token_spans = messages
        .iter()
        .enumerate()
        .map(|(i, m)| TokenSpan {
            message_index: i,
            token_count: counter.count_message(m),
            z: (m.role == Role::Assistant) as u8,
        })
        .collect();
    MaskedExample {
        example_id: example_id.to_owned(),
        token_spans,
        split,
    }
}

pub fn compute_trajectory_mask(t: &Trajectory, counter: &dyn TokenCounter, split: Split) -> MaskedExample {
    compute_mask(&t.query_id, &t.messages, counter, split)
}

/// Per-token log-probabilities under the policy and, for DPO, the reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbTrace {
    pub policy: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
}

impl LogProbTrace {
    pub fn policy(policy: Vec<f64>) -> Self {
        LogProbTrace { policy, reference: None }
    }

    pub fn with_reference(policy: Vec<f64>, reference: Vec<f64>) -> Self {
        LogProbTrace {
            policy,
            reference: Some(reference),
        }
    }
}

fn check_len(what: &str, got: usize, mask: &MaskedExample) -> Result<()> {
    if got != mask.len() {
        return Err(Error::Validation(format!(
            "{what} has {got} tokens but the mask for {} has {}",
            mask.example_id,
            mask.len()
        )));
    }
    Ok(())
}

fn masked_sum(values: &[f64], mask: &MaskedExample) -> f64 {
    values.iter().zip(mask.mask()).filter(|(_, z)| *z == 1).map(|(v, _)| v).sum()
}

/// Negative masked log-likelihood of one example.
pub fn masked_sft_loss(trace: &LogProbTrace, mask: &MaskedExample) -> Result<f64> {
    check_len("policy trace", trace.policy.len(), mask)?;
    let s = masked_sum(&trace.policy, mask);
    Ok(if s == 0.0 { 0.0 } else { -s })
}

/// Mean per-example masked SFT loss.
pub fn mean_sft_loss(examples: &[(LogProbTrace, MaskedExample)]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Validation("no examples".into()));
    }
    let total = examples
        .iter()
        .map(|(t, m)| masked_sft_loss(t, m))
        .sum::<Result<f64>>()?;
    Ok(total / examples.len() as f64)
}

/// Masked sum of policy minus reference log-probabilities.
pub fn masked_log_ratio(trace: &LogProbTrace, mask: &MaskedExample) -> Result<f64> {
    let reference = trace
        .reference
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("trace for {} has no reference log-probabilities", mask.example_id)))?;
    check_len("policy trace", trace.policy.len(), mask)?;
    check_len("reference trace", reference.len(), mask)?;
    let diff: Vec<f64> = trace.policy.iter().zip(reference).map(|(p, r)| p - r).collect();
    Ok(masked_sum(&diff, mask))
}

/// `-log σ(m)` computed without overflow.
pub fn dpo_loss_from_margin(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

pub fn masked_dpo_loss(
    chosen: &LogProbTrace,
    chosen_mask: &MaskedExample,
    rejected: &LogProbTrace,
    rejected_mask: &MaskedExample,
    beta: f64,
) -> Result<f64> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Validation(format!("beta {beta} must be finite and non-negative")));
    }
    let dw = masked_log_ratio(chosen, chosen_mask)?;
    let dl = masked_log_ratio(rejected, rejected_mask)?;
    if beta == 0.0 {
        return Ok(LN_2);
    }
    Ok(dpo_loss_from_margin(beta * (dw - dl)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub effective_batch_size: u32,
    pub max_sequence_length: usize,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub lora_targets: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl TrainingConfig {
    pub fn sft() -> Self {
        TrainingConfig {
            learning_rate: 1e-5,
            epochs: 6,
            effective_batch_size: 24,
            max_sequence_length: 16_384,
            lora_rank: 32,
            lora_alpha: 32,
            lora_dropout: 0.0,
            lora_targets: "all-linear".into(),
            beta: None,
        }
    }

    pub fn dpo() -> Self {
        TrainingConfig {
            learning_rate: 5e-7,
            lora_rank: 64,
            lora_alpha: 64,
            beta: Some(0.1),
            ..Self::sft()
        }
    }

    pub fn for_split(split: Split) -> Self {
        match split {
            Split::Sft => Self::sft(),
            Split::Preference => Self::dpo(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub example_id: String,
    pub pool: Vec<String>,
    pub messages: Vec<Message>,
    pub token_spans: Vec<TokenSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub example_id: String,
    pub pool: Vec<String>,
    pub chosen_messages: Vec<Message>,
    pub rejected_messages: Vec<Message>,
    pub chosen_spans: Vec<TokenSpan>,
    pub rejected_spans: Vec<TokenSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub split: Split,
    pub records: usize,
    pub trainable_tokens: usize,
    pub total_tokens: usize,
    pub training: TrainingConfig,
}

fn pool_index(pools: &[ToolPool]) -> HashMap<&str, &ToolPool> {
    pools.iter().map(|p| (p.example_id.as_str(), p)).collect()
}

fn dangling<'a>(ids: impl Iterator<Item = &'a str>, pools: &HashMap<&str, &ToolPool>) -> Result<()> {
    let missing: BTreeSet<String> = ids.filter(|id| !pools.contains_key(id)).map(str::to_owned).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Dangling {
            ids: missing.into_iter().collect(),
        })
    }
}

/// SFT records sorted by example id.
pub fn sft_records(examples: &[Trajectory], pools: &[ToolPool], counter: &dyn TokenCounter) -> Result<Vec<SftRecord>> {
    let index = pool_index(pools);
    dangling(examples.iter().map(|t| t.query_id.as_str()), &index)?;
    let mut records: Vec<SftRecord> = examples
        .iter()
        .map(|t| SftRecord {
            example_id: t.query_id.clone(),
            pool: index[t.query_id.as_str()].tools.clone(),
            messages: t.messages.clone(),
            token_spans: compute_trajectory_mask(t, counter, Split::Sft).token_spans,
        })
        .collect();
    records.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    Ok(records)
}

/// Preference records sorted by example id.
pub fn preference_records(
    pairs: &[PreferencePair],
    pools: &[ToolPool],
    counter: &dyn TokenCounter,
) -> Result<Vec<PreferenceRecord>> {
    let index = pool_index(pools);
    dangling(pairs.iter().map(|p| p.query_id.as_str()), &index)?;
    let mut records: Vec<PreferenceRecord> = pairs
        .iter()
        .map(|p| PreferenceRecord {
            example_id: p.query_id.clone(),
            pool: index[p.query_id.as_str()].tools.clone(),
            chosen_spans: compute_mask(&p.query_id, &p.chosen_messages, counter, Split::Preference).token_spans,
            rejected_spans: compute_mask(&p.query_id, &p.rejected_messages, counter, Split::Preference).token_spans,
            chosen_messages: p.chosen_messages.clone(),
            rejected_messages: p.rejected_messages.clone(),
        })
        .collect();
    records.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    Ok(records)
}

fn span_totals<'a>(spans: impl Iterator<Item = &'a TokenSpan>) -> (usize, usize) {
    spans.fold((0, 0), |(z, all), s| (z + s.z as usize * s.token_count, all + s.token_count))
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the JSONL training file and its `.meta.json` sidecar.
pub fn write_sft_file(out: &Path, examples: &[Trajectory], pools: &[ToolPool], counter: &dyn TokenCounter) -> Result<ExportMeta> {
    let records = sft_records(examples, pools, counter)?;
    let (trainable_tokens, total_tokens) = span_totals(records.iter().flat_map(|r| &r.token_spans));
    let meta = ExportMeta {
        split: Split::Sft,
        records: records.len(),
        trainable_tokens,
        total_tokens,
        training: TrainingConfig::sft(),
    };
    io::write_jsonl(out, &records)?;
    std::fs::write(meta_path(out), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

pub fn write_preference_file(
    out: &Path,
    pairs: &[PreferencePair],
    pools: &[ToolPool],
    counter: &dyn TokenCounter,
) -> Result<ExportMeta> {
    let records = preference_records(pairs, pools, counter)?;
    let (trainable_tokens, total_tokens) =
        span_totals(records.iter().flat_map(|r| r.chosen_spans.iter().chain(&r.rejected_spans)));
    let meta = ExportMeta {
        split: Split::Preference,
        records: records.len(),
        trainable_tokens,
        total_tokens,
        training: TrainingConfig::dpo(),
    };
    io::write_jsonl(out, &records)?;
    std::fs::write(meta_path(out), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::PairOutcome;
    use crate::model::ToolCall;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use serde_json::json;

    /// One token per whitespace-separated word.
    fn words(s: &str) -> usize {
        s.split_whitespace().count()
    }

    fn traj(id: &str) -> Trajectory {
        Trajectory::new(
            id,
            "ref",
            vec![
                Message::system("be helpful"),
                Message::user("AAPL revenue please"),
                Message::assistant_calls("", vec![ToolCall::new("c1", "income-statement", json!({"symbol": "AAPL"}))]),
                Message::tool("c1", "revenue 383 billion"),
                Message::assistant("It was $383B."),
            ],
        )
    }

    fn pool(id: &str) -> ToolPool {
        ToolPool {
            example_id: id.into(),
            tools: vec!["income-statement".into()],
            called: vec!["income-statement".into()],
            similar: vec![],
            random: vec![],
        }
    }

    #[test]
    fn span_arithmetic() {
        let m = [Message::system("a b"), Message::user("c d e"), Message::assistant("f g h i")];
        let ex = compute_mask("x", &m, &words, Split::Sft);
        assert_eq!(ex.mask(), vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
        let ex = compute_trajectory_mask(&traj("q"), &words, Split::Sft);
        let tool_span = ex.token_spans[3];
        assert_eq!((tool_span.token_count, tool_span.z), (3, 0));
        assert_eq!(ex.len(), words_total(&traj("q")));
    }

    fn words_total(t: &Trajectory) -> usize {
        (&words as &dyn TokenCounter).count_messages(&t.messages)
    }

    #[test]
    fn empty_assistant_span() {
        let m = [Message::user("a"), Message::assistant("")];
        let ex = compute_mask("x", &m, &words, Split::Sft);
        assert_eq!(ex.token_spans[1].token_count, 0);
        assert_eq!(ex.mask(), vec![0]);
    }

    fn mask(bits: &[u8]) -> MaskedExample {
        MaskedExample {
            example_id: "x".into(),
            token_spans: bits
                .iter()
                .enumerate()
                .map(|(i, &z)| TokenSpan {
                    message_index: i,
                    token_count: 1,
                    z,
                })
                .collect(),
            split: Split::Sft,
        }
    }

    #[test]
    fn sft_examples() {
        assert_eq!(masked_sft_loss(&LogProbTrace::policy(vec![-1.0, -2.0]), &mask(&[0, 0])).unwrap(), 0.0);
        assert_eq!(masked_sft_loss(&LogProbTrace::policy(vec![-1.0, -2.0]), &mask(&[1, 1])).unwrap(), 3.0);
        let zero = masked_sft_loss(&LogProbTrace::policy(vec![0.0, 0.0]), &mask(&[1, 1])).unwrap();
        assert!(zero == 0.0 && zero.is_sign_positive());
        assert!(masked_sft_loss(&LogProbTrace::policy(vec![-1.0]), &mask(&[1, 1])).is_err());
        let mean = mean_sft_loss(&[
            (LogProbTrace::policy(vec![-1.0, -2.0]), mask(&[1, 1])),
            (LogProbTrace::policy(vec![-1.0, -2.0]), mask(&[1, 0])),
        ])
        .unwrap();
        assert_eq!(mean, 2.0);
    }

    #[test]
    fn dpo_examples() {
        let t = LogProbTrace::with_reference(vec![-1.0, -3.0], vec![-2.0, -2.0]);
        assert_eq!(masked_dpo_loss(&t, &mask(&[1, 1]), &t, &mask(&[1, 0]), 0.0).unwrap(), LN_2);
        assert_abs_diff_eq!(dpo_loss_from_margin(0.1 * 20.0), 0.126928, epsilon = 1e-6);
        // Δw = 20, Δl = 0.
        let w = LogProbTrace::with_reference(vec![-1.0, 19.0], vec![-1.0, -1.0]);
        let l = LogProbTrace::with_reference(vec![-1.0], vec![-1.0]);
        assert_abs_diff_eq!(masked_dpo_loss(&w, &mask(&[1, 1]), &l, &mask(&[1]), 0.1).unwrap(), 0.126928, epsilon = 1e-6);
        assert!(masked_dpo_loss(&LogProbTrace::policy(vec![0.0]), &mask(&[1]), &l, &mask(&[1]), 0.1).is_err());
        assert!(masked_dpo_loss(&w, &mask(&[1, 1]), &l, &mask(&[1]), -0.1).is_err());
    }

    #[test]
    fn dpo_stable_at_extremes() {
        assert_eq!(dpo_loss_from_margin(-1000.0), 1000.0);
        assert!(dpo_loss_from_margin(1000.0) >= 0.0);
        assert!(dpo_loss_from_margin(40.0) > 0.0);
    }

    #[test]
    fn export_is_byte_stable_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sft.jsonl");
        let ex = vec![traj("b"), traj("a")];
        let pools = vec![pool("a"), pool("b")];
        write_sft_file(&out, &ex, &pools, &words).unwrap();
        let first = std::fs::read(&out).unwrap();
        let meta = std::fs::read(meta_path(&out)).unwrap();
        write_sft_file(&out, &ex, &pools, &words).unwrap();
        assert_eq!(first, std::fs::read(&out).unwrap());
        assert_eq!(meta, std::fs::read(meta_path(&out)).unwrap());
        let back: Vec<SftRecord> = io::read_jsonl(&out).unwrap();
        assert_eq!(back, sft_records(&ex, &pools, &words).unwrap());
        assert_eq!(back[0].example_id, "a");
    }

    #[test]
    fn dangling_pool_names_example() {
        let pair = PreferencePair {
            query_id: "orphan".into(),
            pool: vec![],
            chosen_messages: traj("orphan").messages,
            rejected_messages: traj("orphan").messages,
            verdict: PairOutcome::ChosenIsBetter,
            reasoning: String::new(),
            a_was_chosen_slot: true,
        };
        match preference_records(&[pair], &[pool("a")], &words) {
            Err(Error::Dangling { ids }) => assert_eq!(ids, vec!["orphan"]),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn sft_ignores_masked_positions(
            entries in prop::collection::vec((any::<bool>(), -20.0f64..0.0, -20.0f64..0.0), 1..60)
        ) {
            let bits: Vec<u8> = entries.iter().map(|e| e.0 as u8).collect();
            let a: Vec<f64> = entries.iter().map(|e| e.1).collect();
            let b: Vec<f64> = entries.iter().map(|e| if e.0 { e.1 } else { e.2 }).collect();
            let m = mask(&bits);
            let la = masked_sft_loss(&LogProbTrace::policy(a), &m).unwrap();
            let lb = masked_sft_loss(&LogProbTrace::policy(b), &m).unwrap();
            prop_assert_eq!(la.to_bits(), lb.to_bits());
            prop_assert!(la >= 0.0);
        }

        #[test]
        fn dpo_margin_properties(m in -50.0f64..50.0, d in 0.001f64..10.0) {
            prop_assert!(dpo_loss_from_margin(m) > dpo_loss_from_margin(m + d));
            prop_assert!(dpo_loss_from_margin(m) + dpo_loss_from_margin(-m) >= 2.0 * LN_2 - 1e-12);
        }
    }
}
