//! File-backed state: one append-only JSONL log per entity and an in-memory
//! index rebuilt from the logs on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use trajkit::io::{append_jsonl, parse_jsonl_lenient};
use trajkit::judge::cohens_kappa;
use trajkit::metrics::GoldenStatus;
use trajkit::{MetricReport, Query, Tier, Trajectory};

use crate::error::{ServiceError, ServiceResult};

/// Annotator id under which judge selections are recorded.
pub const JUDGE_ANNOTATOR: &str = "judge";

const QUERIES: &str = "queries.jsonl";
const CANDIDATES: &str = "candidates.jsonl";
const GOLDEN_EVENTS: &str = "golden_events.jsonl";
const ANNOTATIONS: &str = "annotations.jsonl";
const REPORTS: &str = "reports.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub trajectory_id: String,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenEvent {
    pub trajectory_id: String,
    pub status: GoldenStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnnotationEvent {
    Selection {
        query_id: String,
        annotator_id: String,
        trajectory_id: String,
        timestamp_ms: u64,
    },
    Flag {
        query_id: String,
        annotator_id: String,
        trajectory_id: String,
        issue_text: String,
        timestamp_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub trajectory_id: String,
    pub issue_text: String,
}

/// Current review state of one annotator on one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub query_id: String,
    pub annotator_id: String,
    pub selected_candidate: Option<String>,
    pub candidate_index: Option<usize>,
    pub flags: Vec<Flag>,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    #[serde(flatten)]
    pub query: Query,
    pub candidates: usize,
    pub golden: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub trajectory_id: String,
    pub index: usize,
    pub source_model: String,
    pub turn_count: usize,
    pub unique_tools: usize,
    pub tool_names: Vec<String>,
    pub status: GoldenStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_from: Option<String>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterPair {
    pub rater_a: String,
    pub rater_b: String,
    pub shared_queries: usize,
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub metric: String,
    /// Mean kappa over annotator pairs, judge excluded.
    pub kappa: Option<f64>,
    /// Mean kappa between each annotator and the judge.
    pub judge_kappa: Option<f64>,
    pub pairs: Vec<RaterPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMean {
    pub source_model: String,
    pub category: String,
    pub mean_overall: f64,
    pub reports: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub trajectory_id: String,
    pub query_id: String,
    pub status: GoldenStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_from: Option<String>,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Default)]
struct Index {
    queries: BTreeMap<String, Query>,
    candidates: HashMap<String, CandidateRecord>,
    by_query: HashMap<String, Vec<String>>,
    status: HashMap<String, GoldenStatus>,
    flags: HashMap<String, Vec<(String, Flag)>>,
    selections: BTreeMap<(String, String), (String, u64)>,
    annotator_flags: BTreeMap<(String, String), (Vec<Flag>, u64)>,
    reports: Vec<MetricReport>,
}

impl Index {
    fn apply_query(&mut self, q: Query) {
        self.queries.insert(q.id.clone(), q);
    }

    fn apply_candidate(&mut self, c: CandidateRecord) {
        self.by_query.entry(c.query_id.clone()).or_default().push(c.trajectory_id.clone());
        self.status.insert(c.trajectory_id.clone(), GoldenStatus::Candidate);
        self.candidates.insert(c.trajectory_id.clone(), c);
    }

    fn apply_golden(&mut self, e: GoldenEvent) {
        self.status.insert(e.trajectory_id, e.status);
    }

    fn apply_annotation(&mut self, e: AnnotationEvent) {
        match e {
            AnnotationEvent::Selection {
                query_id,
                annotator_id,
                trajectory_id,
                timestamp_ms,
            } => {
                self.selections.insert((query_id, annotator_id), (trajectory_id, timestamp_ms));
            }
            AnnotationEvent::Flag {
                query_id,
                annotator_id,
                trajectory_id,
                issue_text,
                timestamp_ms,
            } => {
                let flag = Flag {
                    trajectory_id: trajectory_id.clone(),
                    issue_text,
                };
                self.flags.entry(trajectory_id).or_default().push((annotator_id.clone(), flag.clone()));
                let entry = self.annotator_flags.entry((query_id, annotator_id)).or_default();
                entry.0.push(flag);
                entry.1 = entry.1.max(timestamp_ms);
            }
        }
    }

    fn apply_report(&mut self, r: MetricReport) {
        self.reports.push(r);
    }

    fn candidate_ids(&self, query_id: &str) -> &[String] {
        self.by_query.get(query_id).map(Vec::as_slice).unwrap_or_default()
    }
}

struct Logs {
    queries: File,
    candidates: File,
    golden: File,
    annotations: File,
    reports: File,
}

pub struct Store {
    dir: PathBuf,
    index: Index,
    logs: Logs,
    clock: fn() -> u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Drops an unterminated final line, which is what an interrupted append leaves behind.
fn repair_tail(path: &Path) -> ServiceResult<()> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.last().is_some_and(|b| *b != b'\n') {
        let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "dropping torn final record");
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

fn replay<T: DeserializeOwned>(path: &Path) -> ServiceResult<Vec<T>> {
    repair_tail(path)?;
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    parse_jsonl_lenient::<T>(&text)
        .into_iter()
        .map(|(line, r)| r.map_err(|e| ServiceError::Internal(format!("{}: line {line}: {e}", path.display()))))
        .collect()
}

fn open_log(dir: &Path, name: &str) -> ServiceResult<File> {
    Ok(OpenOptions::new().create(true).append(true).open(dir.join(name))?)
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> ServiceResult<Store> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut index = Index::default();
        for q in replay::<Query>(&dir.join(QUERIES))? {
            index.apply_query(q);
        }
        for c in replay::<CandidateRecord>(&dir.join(CANDIDATES))? {
            index.apply_candidate(c);
        }
        for e in replay::<GoldenEvent>(&dir.join(GOLDEN_EVENTS))? {
            index.apply_golden(e);
        }
        for e in replay::<AnnotationEvent>(&dir.join(ANNOTATIONS))? {
            index.apply_annotation(e);
        }
        for r in replay::<MetricReport>(&dir.join(REPORTS))? {
            index.apply_report(r);
        }
        let logs = Logs {
            queries: open_log(&dir, QUERIES)?,
            candidates: open_log(&dir, CANDIDATES)?,
            golden: open_log(&dir, GOLDEN_EVENTS)?,
            annotations: open_log(&dir, ANNOTATIONS)?,
            reports: open_log(&dir, REPORTS)?,
        };
        Ok(Store {
            dir,
            index,
            logs,
            clock: now_ms,
        })
    }

    /// Replaces the wall clock, for reproducible tests.
    pub fn with_clock(mut self, clock: fn() -> u64) -> Self {
        self.clock = clock;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn add_query(&mut self, q: Query) -> ServiceResult<()> {
        if q.id.is_empty() {
            return Err(ServiceError::Unprocessable("query id must be nonempty".into()));
        }
        append_jsonl(&mut self.logs.queries, &q)?;
        self.index.apply_query(q);
        Ok(())
    }

    pub fn add_candidate(&mut self, query_id: &str, trajectory: Trajectory, trajectory_id: Option<String>) -> ServiceResult<String> {
        self.insert_candidate(query_id, trajectory, trajectory_id, None, None)
    }

    fn insert_candidate(
        &mut self,
        query_id: &str,
        mut trajectory: Trajectory,
        trajectory_id: Option<String>,
        revised_from: Option<String>,
        feedback: Option<String>,
    ) -> ServiceResult<String> {
        self.require_query(query_id)?;
        trajectory.query_id = query_id.to_owned();
        trajectory.validate()?;
        let id = trajectory_id.unwrap_or_else(|| format!("{query_id}/{}", self.index.candidate_ids(query_id).len()));
        if id.is_empty() || self.index.candidates.contains_key(&id) {
            return Err(ServiceError::Conflict(format!("trajectory id {id:?} is empty or already used")));
        }
        let rec = CandidateRecord {
            trajectory_id: id.clone(),
            query_id: query_id.to_owned(),
            revised_from,
            feedback,
            trajectory,
        };
        append_jsonl(&mut self.logs.candidates, &rec)?;
        self.index.apply_candidate(rec);
        Ok(id)
    }

    pub fn add_report(&mut self, r: MetricReport) -> ServiceResult<()> {
        self.require_query(&r.query_id)?;
        append_jsonl(&mut self.logs.reports, &r)?;
        self.index.apply_report(r);
        Ok(())
    }

    fn require_query(&self, id: &str) -> ServiceResult<&Query> {
        self.index
            .queries
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown query {id}")))
    }

    fn require_candidate(&self, id: &str) -> ServiceResult<&CandidateRecord> {
        self.index
            .candidates
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown trajectory {id}")))
    }

    /// Resolves a candidate reference: a 0-based index into the query's
    /// candidate list or a trajectory id.
    pub fn resolve_candidate(&self, query_id: &str, candidate: &serde_json::Value) -> ServiceResult<String> {
        let ids = self.index.candidate_ids(query_id);
        let found = match candidate {
            serde_json::Value::Number(n) => n.as_u64().and_then(|i| ids.get(i as usize)).cloned(),
            serde_json::Value::String(s) => ids.iter().find(|id| *id == s).cloned(),
            _ => None,
        };
        found.ok_or_else(|| ServiceError::Unprocessable(format!("query {query_id} has no candidate {candidate}")))
    }

    pub fn select(&mut self, query_id: &str, annotator_id: &str, candidate: &serde_json::Value) -> ServiceResult<AnnotationRecord> {
        self.require_query(query_id)?;
        if annotator_id.is_empty() {
            return Err(ServiceError::BadRequest("annotator_id is required".into()));
        }
        let trajectory_id = self.resolve_candidate(query_id, candidate)?;
        let e = AnnotationEvent::Selection {
            query_id: query_id.to_owned(),
            annotator_id: annotator_id.to_owned(),
            trajectory_id,
            timestamp_ms: (self.clock)(),
        };
        append_jsonl(&mut self.logs.annotations, &e)?;
        self.index.apply_annotation(e);
        Ok(self.annotation(query_id, annotator_id).expect("just written"))
    }

    fn set_status(&mut self, trajectory_id: &str, status: GoldenStatus, annotator_id: Option<&str>, note: Option<String>) -> ServiceResult<()> {
        let e = GoldenEvent {
            trajectory_id: trajectory_id.to_owned(),
            status,
            annotator_id: annotator_id.map(str::to_owned),
            note,
            timestamp_ms: (self.clock)(),
        };
        append_jsonl(&mut self.logs.golden, &e)?;
        self.index.apply_golden(e);
        Ok(())
    }

    pub fn flag(&mut self, trajectory_id: &str, annotator_id: &str, issue_text: &str) -> ServiceResult<QueueEntry> {
        let query_id = self.require_candidate(trajectory_id)?.query_id.clone();
        if annotator_id.is_empty() {
            return Err(ServiceError::BadRequest("annotator_id is required".into()));
        }
        if issue_text.trim().is_empty() {
            return Err(ServiceError::Unprocessable("issue_text must be nonempty".into()));
        }
        let e = AnnotationEvent::Flag {
            query_id,
            annotator_id: annotator_id.to_owned(),
            trajectory_id: trajectory_id.to_owned(),
            issue_text: issue_text.to_owned(),
            timestamp_ms: (self.clock)(),
        };
        append_jsonl(&mut self.logs.annotations, &e)?;
        self.index.apply_annotation(e);
        self.set_status(trajectory_id, GoldenStatus::Flagged, Some(annotator_id), Some(issue_text.to_owned()))?;
        Ok(self.queue_entry(trajectory_id))
    }

    /// Approves a golden; any previously approved candidate of the same
    /// query is demoted back to candidate.
    pub fn approve(&mut self, trajectory_id: &str, annotator_id: &str) -> ServiceResult<QueueEntry> {
        let query_id = self.require_candidate(trajectory_id)?.query_id.clone();
        if self.index.status.get(trajectory_id) == Some(&GoldenStatus::Flagged) {
            return Err(ServiceError::Conflict(format!(
                "trajectory {trajectory_id} is flagged; revise it and approve the revision"
            )));
        }
        let prior: Vec<String> = self
            .index
            .candidate_ids(&query_id)
            .iter()
            .filter(|id| *id != trajectory_id && self.index.status.get(*id) == Some(&GoldenStatus::Approved))
            .cloned()
            .collect();
        for id in prior {
            self.set_status(&id, GoldenStatus::Candidate, Some(annotator_id), Some(format!("demoted by approval of {trajectory_id}")))?;
        }
        self.set_status(trajectory_id, GoldenStatus::Approved, Some(annotator_id), None)?;
        Ok(self.queue_entry(trajectory_id))
    }

    pub fn trajectory(&self, id: &str) -> ServiceResult<&CandidateRecord> {
        self.require_candidate(id)
    }

    pub fn feedback_for(&self, trajectory_id: &str) -> Vec<Flag> {
        self.index
            .flags
            .get(trajectory_id)
            .map(|v| v.iter().map(|(_, f)| f.clone()).collect())
            .unwrap_or_default()
    }

    pub fn status(&self, trajectory_id: &str) -> Option<GoldenStatus> {
        self.index.status.get(trajectory_id).copied()
    }

    /// Stores a revision of a flagged trajectory as a new candidate.
    pub fn add_revision(&mut self, original_id: &str, revised: Trajectory, feedback: String) -> ServiceResult<CandidateView> {
        let original = self.require_candidate(original_id)?;
        let query_id = original.query_id.clone();
        let n = self
            .index
            .candidates
            .values()
            .filter(|c| c.revised_from.as_deref() == Some(original_id))
            .count();
        let id = self.insert_candidate(
            &query_id,
            revised,
            Some(format!("{original_id}.r{}", n + 1)),
            Some(original_id.to_owned()),
            Some(feedback),
        )?;
        Ok(self.candidates(&query_id)?.into_iter().find(|c| c.trajectory_id == id).expect("just written"))
    }

    pub fn queries(&self, tier: Option<Tier>, category: Option<&str>) -> Vec<QueryView> {
        self.index
            .queries
            .values()
            .filter(|q| tier.is_none() || q.difficulty_tier == tier)
            .filter(|q| category.is_none_or(|c| q.category == c))
            .map(|q| {
                let ids = self.index.candidate_ids(&q.id);
                QueryView {
                    query: q.clone(),
                    candidates: ids.len(),
                    golden: ids.iter().find(|id| self.status(id) == Some(GoldenStatus::Approved)).cloned(),
                }
            })
            .collect()
    }

    pub fn candidates(&self, query_id: &str) -> ServiceResult<Vec<CandidateView>> {
        self.require_query(query_id)?;
        Ok(self
            .index
            .candidate_ids(query_id)
            .iter()
            .enumerate()
            .map(|(index, id)| {
                let c = &self.index.candidates[id];
                let tools = c.trajectory.unique_tools();
                CandidateView {
                    trajectory_id: id.clone(),
                    index,
                    source_model: c.trajectory.source_model.clone(),
                    turn_count: c.trajectory.turn_count(),
                    unique_tools: tools.len(),
                    tool_names: tools.into_iter().map(str::to_owned).collect(),
                    status: self.status(id).unwrap_or(GoldenStatus::Candidate),
                    revised_from: c.revised_from.clone(),
                    trajectory: c.trajectory.clone(),
                }
            })
            .collect())
    }

    fn annotation(&self, query_id: &str, annotator_id: &str) -> Option<AnnotationRecord> {
        let key = (query_id.to_owned(), annotator_id.to_owned());
        let sel = self.index.selections.get(&key);
        let flags = self.index.annotator_flags.get(&key);
        if sel.is_none() && flags.is_none() {
            return None;
        }
        let ids = self.index.candidate_ids(query_id);
        Some(AnnotationRecord {
            query_id: query_id.to_owned(),
            annotator_id: annotator_id.to_owned(),
            selected_candidate: sel.map(|s| s.0.clone()),
            candidate_index: sel.and_then(|s| ids.iter().position(|id| *id == s.0)),
            flags: flags.map(|f| f.0.clone()).unwrap_or_default(),
            timestamp_ms: sel.map(|s| s.1).unwrap_or(0).max(flags.map(|f| f.1).unwrap_or(0)),
        })
    }

    pub fn selections(&self, query_id: &str) -> ServiceResult<Vec<AnnotationRecord>> {
        self.require_query(query_id)?;
        let annotators: BTreeSet<&String> = self
            .index
            .selections
            .keys()
            .chain(self.index.annotator_flags.keys())
            .filter(|(q, _)| q == query_id)
            .map(|(_, a)| a)
            .collect();
        Ok(annotators.into_iter().filter_map(|a| self.annotation(query_id, a)).collect())
    }

    pub fn agreement(&self) -> AgreementReport {
        let mut by_rater: BTreeMap<&str, BTreeMap<&str, &str>> = BTreeMap::new();
        for ((q, a), (t, _)) in &self.index.selections {
            by_rater.entry(a).or_default().insert(q, t);
        }
        let raters: Vec<&str> = by_rater.keys().copied().collect();
        let mut pairs = Vec::new();
        for (i, a) in raters.iter().enumerate() {
            for b in &raters[i + 1..] {
                let (la, lb): (Vec<&str>, Vec<&str>) = by_rater[a]
                    .iter()
                    .filter_map(|(q, ta)| by_rater[b].get(q).map(|tb| (*ta, *tb)))
                    .unzip();
                let (kappa, note) = match cohens_kappa(&la, &lb) {
                    Ok(k) => (Some(k), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                pairs.push(RaterPair {
                    rater_a: a.to_string(),
                    rater_b: b.to_string(),
                    shared_queries: la.len(),
                    kappa,
                    note,
                });
            }
        }
        let mean = |judge: bool| {
            let ks: Vec<f64> = pairs
                .iter()
                .filter(|p| (p.rater_a == JUDGE_ANNOTATOR || p.rater_b == JUDGE_ANNOTATOR) == judge)
                .filter_map(|p| p.kappa)
                .collect();
            (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64)
        };
        AgreementReport {
            metric: "selection".into(),
            kappa: mean(false),
            judge_kappa: mean(true),
            pairs,
        }
    }

    /// Mean overall score per (source model, category) over complete reports.
    pub fn reports_by_category(&self) -> Vec<CategoryMean> {
        let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        for r in self.index.reports.iter().filter(|r| r.is_complete()) {
            let (Some(q), Some(overall)) = (self.index.queries.get(&r.query_id), r.overall) else {
                continue;
            };
            let e = acc.entry((r.source_model.clone(), q.category.clone())).or_default();
            e.0 += overall;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|((source_model, category), (sum, n))| CategoryMean {
                source_model,
                category,
                mean_overall: sum / n as f64,
                reports: n,
            })
            .collect()
    }

    fn queue_entry(&self, id: &str) -> QueueEntry {
        let c = &self.index.candidates[id];
        QueueEntry {
            trajectory_id: id.to_owned(),
            query_id: c.query_id.clone(),
            status: self.status(id).unwrap_or(GoldenStatus::Candidate),
            revised_from: c.revised_from.clone(),
            flags: self.feedback_for(id),
        }
    }

    /// Flagged trajectories and revisions awaiting review, in query order.
    pub fn review_queue(&self) -> Vec<QueueEntry> {
        self.index
            .queries
            .keys()
            .flat_map(|q| self.index.candidate_ids(q))
            .filter(|id| {
                let s = self.status(id);
                s == Some(GoldenStatus::Flagged)
                    || (s == Some(GoldenStatus::Candidate) && self.index.candidates[*id].revised_from.is_some())
            })
            .map(|id| self.queue_entry(id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use trajkit::model::{Message, ToolCall};

    fn clock() -> u64 {
        1_700_000_000_000
    }

    fn traj(model: &str, tools: usize) -> Trajectory {
        let mut m = vec![Message::user("q")];
        for i in 0..tools {
            let id = format!("c{i}");
            m.push(Message::assistant_calls("", vec![ToolCall::new(&id, format!("tool{i}"), json!({}))]));
            m.push(Message::tool(id, "[1]"));
        }
        m.push(Message::assistant("answer"));
        Trajectory::new("q1", model, m)
    }

    fn seeded(dir: &Path) -> Store {
        let mut s = Store::open(dir).unwrap().with_clock(clock);
        let mut q = Query::new("q1", "What is AAPL's P/E?", "Market Data");
        q.difficulty_tier = Some(Tier::Easy);
        s.add_query(q).unwrap();
        s.add_query(Query::new("q2", "Compare MSFT and GOOG margins", "Financial Statements")).unwrap();
        for (m, n) in [("a", 1), ("b", 2), ("c", 3)] {
            s.add_candidate("q1", traj(m, n), None).unwrap();
        }
        s
    }

    #[test]
    fn read_your_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        let rec = s.select("q1", "ann1", &json!(1)).unwrap();
        assert_eq!(rec.selected_candidate.as_deref(), Some("q1/1"));
        let sels = s.selections("q1").unwrap();
        assert_eq!(sels.len(), 1);
        assert_eq!(sels[0].candidate_index, Some(1));
        let c = s.candidates("q1").unwrap();
        assert_eq!((c[2].turn_count, c[2].unique_tools), (4, 3));
    }

    #[test]
    fn unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        assert!(matches!(s.select("nope", "a", &json!(0)), Err(ServiceError::NotFound(_))));
        assert!(matches!(s.select("q1", "a", &json!(7)), Err(ServiceError::Unprocessable(_))));
        assert!(matches!(s.flag("q9/0", "a", "x"), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn last_write_wins_per_annotator() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        s.select("q1", "ann1", &json!(0)).unwrap();
        s.select("q1", "ann1", &json!("q1/2")).unwrap();
        s.select("q1", "ann2", &json!(0)).unwrap();
        let sels = s.selections("q1").unwrap();
        assert_eq!(sels[0].selected_candidate.as_deref(), Some("q1/2"));
        assert_eq!(sels[1].selected_candidate.as_deref(), Some("q1/0"));
    }

    #[test]
    fn approval_demotes_prior() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        s.approve("q1/0", "ann1").unwrap();
        s.approve("q1/2", "ann1").unwrap();
        assert_eq!(s.status("q1/0"), Some(GoldenStatus::Candidate));
        assert_eq!(s.status("q1/2"), Some(GoldenStatus::Approved));
        assert_eq!(s.queries(None, None)[0].golden.as_deref(), Some("q1/2"));
        let log = fs::read_to_string(dir.path().join(GOLDEN_EVENTS)).unwrap();
        assert_eq!(log.lines().count(), 3);
        assert!(log.contains("demoted by approval of q1/2"));
    }

    #[test]
    fn flag_then_revise_enters_queue() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        s.flag("q1/1", "ann1", "wrong ticker in turn 2").unwrap();
        assert!(matches!(s.approve("q1/1", "ann1"), Err(ServiceError::Conflict(_))));
        let q = s.review_queue();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].flags[0].issue_text, "wrong ticker in turn 2");
        let v = s.add_revision("q1/1", traj("a", 1), "wrong ticker in turn 2".into()).unwrap();
        assert_eq!(v.trajectory_id, "q1/1.r1");
        assert_eq!(v.revised_from.as_deref(), Some("q1/1"));
        assert_eq!(s.review_queue().len(), 2);
        let rec = &s.selections("q1").unwrap()[0];
        assert_eq!(rec.flags.len(), 1);
        assert!(rec.selected_candidate.is_none());
    }

    #[test]
    fn replay_reproduces_state() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let mut s = seeded(dir.path());
            s.select("q1", "ann1", &json!(0)).unwrap();
            s.flag("q1/2", "ann2", "missing data").unwrap();
            s.approve("q1/0", "ann1").unwrap();
            serde_json::to_string(&(s.queries(None, None), s.candidates("q1").unwrap(), s.selections("q1").unwrap(), s.agreement())).unwrap()
        };
        let s = Store::open(dir.path()).unwrap();
        let after =
            serde_json::to_string(&(s.queries(None, None), s.candidates("q1").unwrap(), s.selections("q1").unwrap(), s.agreement())).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn torn_tail_is_ignored_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        drop(seeded(dir.path()));
        let path = dir.path().join(ANNOTATIONS);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        std::io::Write::write_all(&mut f, b"{\"kind\":\"selection\",\"query_id\":\"q1\"").unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        s.select("q1", "ann1", &json!(0)).unwrap();
        drop(s);
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.selections("q1").unwrap().len(), 1);
    }

    #[test]
    fn agreement_identical_annotators() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        for i in 0..10 {
            let q = format!("q{i}");
            s.add_query(Query::new(&q, "x", "c")).unwrap();
            for m in ["a", "b", "c"] {
                s.add_candidate(&q, traj(m, 1), None).unwrap();
            }
            s.select(&q, "ann1", &json!(i % 3)).unwrap();
            s.select(&q, "ann2", &json!(i % 3)).unwrap();
        }
        let a = s.agreement();
        assert_eq!(a.kappa, Some(1.0));
        assert_eq!(a.judge_kappa, None);
        assert_eq!(a.pairs[0].shared_queries, 10);
    }

    #[test]
    fn category_means_skip_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        let report = |q: &str, model: &str, overall: f64| {
            let t = traj(model, 1);
            let mut r = trajkit::metrics::score_algorithmic(&t, &t);
            r.query_id = q.into();
            for m in trajkit::JudgedMetric::ALL {
                r.set_judged(m, Some(3.0));
            }
            r.overall = Some(overall);
            r
        };
        s.add_report(report("q1", "m", 0.6)).unwrap();
        s.add_report(report("q1", "m", 0.8)).unwrap();
        s.add_report(report("q2", "m", 0.5)).unwrap();
        let mut partial = report("q2", "m", 0.1);
        partial.pass_rate = None;
        partial.failed_metrics.push(trajkit::JudgedMetric::PassRate);
        s.add_report(partial).unwrap();
        let means = s.reports_by_category();
        assert_eq!(means.len(), 2);
        assert_eq!((means[0].category.as_str(), means[0].reports), ("Financial Statements", 1));
        assert!((means[0].mean_overall - 0.5).abs() < 1e-12);
        assert!((means[1].mean_overall - 0.7).abs() < 1e-12);
    }
}
