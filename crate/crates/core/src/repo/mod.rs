//! Content-addressed policy repository with BM25 search, append-only
//! outcome history and a forward-only promotion lifecycle.

pub mod bm25;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Family, Goal, PerformanceDelta};
use crate::dsl::{builtin, PolicySpec, BUILTIN_NAMES};
use bm25::{tokenize, Bm25Index};

/// Consecutive regressions after which a record retires itself.
pub const AUTO_RETIRE_STREAK: usize = 3;
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyStatus {
    Candidate,
    Promoted,
    Retired,
}

impl std::fmt::Display for PolicyStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyStatus::Candidate => "candidate",
            PolicyStatus::Promoted => "promoted",
            PolicyStatus::Retired => "retired",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub fingerprint: String,
    pub goal: Goal,
    pub delta: PerformanceDelta,
    /// Unix seconds.
    pub timestamp: u64,
    pub deployment_id: String,
}

impl OutcomeRecord {
    /// Improvement on the outcome's own goal, in percent; positive is better.
    pub fn improvement_pct(&self) -> f64 {
        self.goal.improvement_pct(&self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Antipattern {
    pub deployment_id: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub id: String,
    pub spec: PolicySpec,
    pub description: String,
    pub target_families: BTreeSet<Family>,
    pub status: PolicyStatus,
    #[serde(default)]
    pub outcomes: Vec<OutcomeRecord>,
    #[serde(default)]
    pub antipatterns: Vec<Antipattern>,
}

impl PolicyRecord {
    fn indexed_tokens(&self) -> Vec<String> {
        let mut text = self.description.clone();
        for t in &self.spec.tags {
            text.push(' ');
            text.push_str(t);
        }
        for f in &self.target_families {
            text.push(' ');
            text.push_str(f.as_str());
        }
        tokenize(&text)
    }

    fn has_positive_outcome(&self) -> bool {
        self.outcomes.iter().any(|o| o.improvement_pct() > 0.0)
    }

    fn regression_streak(&self) -> usize {
        self.outcomes
            .iter()
            .rev()
            .take_while(|o| o.improvement_pct() < 0.0)
            .count()
    }

    pub fn has_deployment(&self, deployment_id: &str) -> bool {
        self.outcomes.iter().any(|o| o.deployment_id == deployment_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record: PolicyRecord,
    pub score: f64,
    /// `score` over the query's score against itself.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoBundle {
    pub version: u32,
    pub records: Vec<PolicyRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RepoError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("deployment `{0}` already recorded")]
    DuplicateDeployment(String),
    #[error("policy `{0}` has no outcome that improves its goal")]
    PromotionBlocked(String),
    #[error("policy `{id}` cannot go from {from} to {to}")]
    IllegalTransition {
        id: String,
        from: PolicyStatus,
        to: PolicyStatus,
    },
    #[error("query has no searchable tokens")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("record `{0}` does not match its content hash")]
    Tampered(String),
    #[error("unsupported bundle version {0}")]
    BundleVersion(u32),
    #[error("io: {0}")]
    Io(String),
    #[error("malformed record {path}: {message}")]
    Malformed { path: String, message: String },
}

impl From<std::io::Error> for RepoError {
    fn from(e: std::io::Error) -> Self {
        RepoError::Io(e.to_string())
    }
}

/// Families each built-in is meant for.
pub fn builtin_target_families(name: &str) -> BTreeSet<Family> {
    let f: &[Family] = match name {
        "fifo" => &[Family::Custom],
        "round_robin" => &[Family::LatencyChain],
        "fair_vruntime" => &[Family::LatencyChain, Family::Custom],
        "sjf" => &[Family::Custom],
        "ljf" => &[Family::BatchLongtail, Family::BuildDag],
        "layered_weight" => &[Family::Custom],
        _ => &[],
    };
    f.iter().copied().collect()
}

#[derive(Debug, Clone)]
pub struct Repository {
    root: Option<PathBuf>,
    records: BTreeMap<String, PolicyRecord>,
}

impl Repository {
    /// Empty repository that lives only in memory.
    pub fn in_memory() -> Self {
        Repository {
            root: None,
            records: BTreeMap::new(),
        }
    }

    /// In-memory repository holding the six built-ins.
    pub fn seeded() -> Self {
        let mut r = Self::in_memory();
        r.seed_builtins().expect("built-ins are valid");
        r
    }

    /// Open (creating if needed) a repository rooted at `root`. Records are
    /// re-hashed on load; the index file is rebuilt from them. An empty
    /// repository is seeded with the built-ins.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RepoError> {
        let root = root.as_ref().to_path_buf();
        let dir = root.join("records");
        fs::create_dir_all(&dir)?;
        let mut records = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            let rec: PolicyRecord = serde_json::from_str(&text).map_err(|e| RepoError::Malformed {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if rec.spec.content_id() != rec.id || stem != rec.id {
                return Err(RepoError::Tampered(rec.id));
            }
            records.insert(rec.id.clone(), rec);
        }
        let mut repo = Repository {
            root: Some(root),
            records,
        };
        if repo.records.is_empty() {
            repo.seed_builtins()?;
        }
        repo.write_index()?;
        Ok(repo)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn seed_builtins(&mut self) -> Result<(), RepoError> {
        for name in BUILTIN_NAMES {
            let spec = builtin(name).map_err(|e| RepoError::InvalidSpec(e.to_string()))?;
            let desc = spec.description.clone();
            self.add(spec, &desc, builtin_target_families(name))?;
        }
        Ok(())
    }

    fn persist(&self, id: &str) -> Result<(), RepoError> {
        let Some(root) = &self.root else { return Ok(()) };
        let rec = &self.records[id];
        let body = serde_json::to_vec_pretty(rec).map_err(|e| RepoError::Io(e.to_string()))?;
        atomic_write(&root.join("records").join(format!("{id}.json")), &body)?;
        self.write_index()
    }

    fn write_index(&self) -> Result<(), RepoError> {
        let Some(root) = &self.root else { return Ok(()) };
        let index: Vec<_> = self
            .records
            .values()
            .map(|r| {
                serde_json::json!({
                    "id": r.id,
                    "name": r.spec.name,
                    "status": r.status,
                    "outcomes": r.outcomes.len(),
                })
            })
            .collect();
        let body = serde_json::to_vec_pretty(&index).map_err(|e| RepoError::Io(e.to_string()))?;
        atomic_write(&root.join("index.json"), &body)
    }

    /// Register `spec` as a candidate. Adding an identical spec again
    /// returns the stored record unchanged.
    pub fn add(
        &mut self,
        spec: PolicySpec,
        description: &str,
        target_families: BTreeSet<Family>,
    ) -> Result<PolicyRecord, RepoError> {
        spec.validate().map_err(|e| RepoError::InvalidSpec(e.to_string()))?;
        let id = spec.content_id();
        if let Some(existing) = self.records.get(&id) {
            return Ok(existing.clone());
        }
        let description = if description.trim().is_empty() {
            spec.description.clone()
        } else {
            description.to_string()
        };
        let rec = PolicyRecord {
            id: id.clone(),
            spec,
            description,
            target_families,
            status: PolicyStatus::Candidate,
            outcomes: Vec::new(),
            antipatterns: Vec::new(),
        };
        self.records.insert(id.clone(), rec.clone());
        self.persist(&id)?;
        Ok(rec)
    }

    pub fn get(&self, id: &str) -> Result<&PolicyRecord, RepoError> {
        self.records.get(id).ok_or_else(|| RepoError::UnknownPolicy(id.to_string()))
    }

    /// First record whose spec carries `name`.
    pub fn find_by_name(&self, name: &str) -> Option<&PolicyRecord> {
        self.records.values().find(|r| r.spec.name == name)
    }

    /// All records ordered by id.
    pub fn list(&self) -> Vec<&PolicyRecord> {
        self.records.values().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// BM25 over description, tags and target families of non-retired
    /// records. Only records sharing a token with the query are returned,
    /// best first, ties by id.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, RepoError> {
        if k == 0 {
            return Err(RepoError::InvalidK);
        }
        let q = tokenize(query);
        if q.is_empty() {
            return Err(RepoError::EmptyQuery);
        }
        let live: Vec<&PolicyRecord> = self
            .records
            .values()
            .filter(|r| r.status != PolicyStatus::Retired)
            .collect();
        let docs: Vec<Vec<String>> = live.iter().map(|r| r.indexed_tokens()).collect();
        let index = Bm25Index::new(&docs);
        let self_score = index.self_score(&q);
        let mut hits: Vec<SearchHit> = live
            .iter()
            .enumerate()
            .filter(|&(i, _)| index.contains_any(&q, i))
            .map(|(i, r)| {
                let score = index.score(&q, i);
                SearchHit {
                    record: (*r).clone(),
                    score,
                    normalized: if self_score > 0.0 { score / self_score } else { 0.0 },
                }
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.record.id.cmp(&b.record.id)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Non-retired records with an outcome on `fingerprint`, best improvement first.
    pub fn search_by_fingerprint(&self, fingerprint: &str) -> Vec<&PolicyRecord> {
        let best = |r: &PolicyRecord| {
            r.outcomes
                .iter()
                .filter(|o| o.fingerprint == fingerprint)
                .map(OutcomeRecord::improvement_pct)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut out: Vec<&PolicyRecord> = self
            .records
            .values()
            .filter(|r| r.status != PolicyStatus::Retired)
            .filter(|r| r.outcomes.iter().any(|o| o.fingerprint == fingerprint))
            .collect();
        out.sort_by(|a, b| best(b).total_cmp(&best(a)).then_with(|| a.id.cmp(&b.id)));
        out
    }

    /// Append an outcome. A record whose last three outcomes all regressed
    /// is retired with an antipattern note.
    pub fn record_outcome(&mut self, id: &str, outcome: OutcomeRecord) -> Result<PolicyRecord, RepoError> {
        let rec = self
            .records
            .get_mut(id)
            .ok_or_else(|| RepoError::UnknownPolicy(id.to_string()))?;
        if rec.has_deployment(&outcome.deployment_id) {
            return Err(RepoError::DuplicateDeployment(outcome.deployment_id));
        }
        let dep = outcome.deployment_id.clone();
        rec.outcomes.push(outcome);
        if rec.status != PolicyStatus::Retired && rec.regression_streak() >= AUTO_RETIRE_STREAK {
            rec.status = PolicyStatus::Retired;
            rec.antipatterns.push(Antipattern {
                deployment_id: dep,
                note: format!("retired after {AUTO_RETIRE_STREAK} consecutive regressions"),
            });
        }
        let out = rec.clone();
        self.persist(id)?;
        Ok(out)
    }

    pub fn promote(&mut self, id: &str) -> Result<PolicyRecord, RepoError> {
        let rec = self
            .records
            .get_mut(id)
            .ok_or_else(|| RepoError::UnknownPolicy(id.to_string()))?;
        if rec.status != PolicyStatus::Candidate {
            return Err(RepoError::IllegalTransition {
                id: id.to_string(),
                from: rec.status,
                to: PolicyStatus::Promoted,
            });
        }
        if !rec.has_positive_outcome() {
            return Err(RepoError::PromotionBlocked(id.to_string()));
        }
        rec.status = PolicyStatus::Promoted;
        let out = rec.clone();
        self.persist(id)?;
        Ok(out)
    }

    pub fn retire(&mut self, id: &str) -> Result<PolicyRecord, RepoError> {
        let rec = self
            .records
            .get_mut(id)
            .ok_or_else(|| RepoError::UnknownPolicy(id.to_string()))?;
        if rec.status == PolicyStatus::Retired {
            return Err(RepoError::IllegalTransition {
                id: id.to_string(),
                from: rec.status,
                to: PolicyStatus::Retired,
            });
        }
        rec.status = PolicyStatus::Retired;
        let out = rec.clone();
        self.persist(id)?;
        Ok(out)
    }

    /// Attach an antipattern note for one deployment; a second note for the
    /// same deployment is rejected.
    pub fn annotate(&mut self, id: &str, deployment_id: &str, note: &str) -> Result<PolicyRecord, RepoError> {
        let rec = self
            .records
            .get_mut(id)
            .ok_or_else(|| RepoError::UnknownPolicy(id.to_string()))?;
        if rec.antipatterns.iter().any(|a| a.deployment_id == deployment_id) {
            return Err(RepoError::DuplicateDeployment(deployment_id.to_string()));
        }
        rec.antipatterns.push(Antipattern {
            deployment_id: deployment_id.to_string(),
            note: note.to_string(),
        });
        let out = rec.clone();
        self.persist(id)?;
        Ok(out)
    }

    pub fn export_bundle(&self) -> RepoBundle {
        RepoBundle {
            version: BUNDLE_VERSION,
            records: self.records.values().cloned().collect(),
        }
    }

    /// Merge a bundle. Unknown records are inserted; known ones gain any
    /// outcomes and notes they lack and move forward to the later status.
    /// Returns the number of records inserted or changed.
    pub fn import_bundle(&mut self, bundle: RepoBundle) -> Result<usize, RepoError> {
        if bundle.version != BUNDLE_VERSION {
            return Err(RepoError::BundleVersion(bundle.version));
        }
        for rec in &bundle.records {
            if rec.spec.content_id() != rec.id {
                return Err(RepoError::Tampered(rec.id.clone()));
            }
        }
        let mut changed = Vec::new();
        for rec in bundle.records {
            match self.records.get_mut(&rec.id) {
                None => {
                    changed.push(rec.id.clone());
                    self.records.insert(rec.id.clone(), rec);
                }
                Some(mine) => {
                    let before = mine.clone();
                    for o in rec.outcomes {
                        if !mine.has_deployment(&o.deployment_id) {
                            mine.outcomes.push(o);
                        }
                    }
                    for a in rec.antipatterns {
                        if !mine.antipatterns.contains(&a) {
                            mine.antipatterns.push(a);
                        }
                    }
                    mine.status = mine.status.max(rec.status);
                    if *mine != before {
                        changed.push(rec.id.clone());
                    }
                }
            }
        }
        for id in &changed {
            self.persist(id)?;
        }
        Ok(changed.len())
    }
}

fn atomic_write(path: &Path, body: &[u8]) -> Result<(), RepoError> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_expr;

    fn outcome(dep: &str, makespan_pct: f64) -> OutcomeRecord {
        OutcomeRecord {
            fingerprint: "fp".into(),
            goal: Goal::MinMakespan,
            delta: PerformanceDelta {
                makespan_pct,
                ..PerformanceDelta::ZERO
            },
            timestamp: 0,
            deployment_id: dep.into(),
        }
    }

    fn ljf_id(r: &Repository) -> String {
        r.find_by_name("ljf").unwrap().id.clone()
    }

    #[test]
    fn seeded_with_builtins_and_idempotent_add() {
        let mut r = Repository::seeded();
        assert_eq!(r.len(), 6);
        let fifo = builtin("fifo").unwrap();
        let a = r.add(fifo.clone(), "", BTreeSet::new()).unwrap();
        assert_eq!(a.id, fifo.content_id());
        assert_eq!(r.len(), 6);

        let mut variant = builtin("ljf").unwrap();
        variant.priority = parse_expr("expected_runtime + 0.01 * wait_time").unwrap();
        let v = r.add(variant, "ljf with aging", BTreeSet::new()).unwrap();
        assert_ne!(v.id, ljf_id(&r));
        assert_eq!(r.len(), 7);

        let mut bad = builtin("fifo").unwrap();
        bad.priority = parse_expr("k * weight").unwrap();
        assert!(matches!(r.add(bad, "", BTreeSet::new()), Err(RepoError::InvalidSpec(_))));
    }

    #[test]
    fn lifecycle() {
        let mut r = Repository::seeded();
        let id = ljf_id(&r);
        assert_eq!(r.promote(&id), Err(RepoError::PromotionBlocked(id.clone())));
        r.record_outcome(&id, outcome("d1", -45.0)).unwrap();
        assert_eq!(r.promote(&id).unwrap().status, PolicyStatus::Promoted);
        assert!(matches!(r.promote(&id), Err(RepoError::IllegalTransition { .. })));
        r.retire(&id).unwrap();
        assert!(matches!(
            r.promote(&id),
            Err(RepoError::IllegalTransition { from: PolicyStatus::Retired, .. })
        ));
        assert!(matches!(r.retire(&id), Err(RepoError::IllegalTransition { .. })));
        assert_eq!(r.promote("nope"), Err(RepoError::UnknownPolicy("nope".into())));
    }

    #[test]
    fn outcomes_are_append_only_and_unique_per_deployment() {
        let mut r = Repository::seeded();
        let id = ljf_id(&r);
        assert_eq!(r.record_outcome(&id, outcome("d1", -5.0)).unwrap().outcomes.len(), 1);
        assert_eq!(
            r.record_outcome(&id, outcome("d1", -5.0)),
            Err(RepoError::DuplicateDeployment("d1".into()))
        );
        assert_eq!(r.search_by_fingerprint("fp")[0].id, id);
        assert!(r.search_by_fingerprint("other").is_empty());
    }

    #[test]
    fn three_regressions_retire() {
        let mut r = Repository::seeded();
        let id = ljf_id(&r);
        r.record_outcome(&id, outcome("a", 10.0)).unwrap();
        r.record_outcome(&id, outcome("b", 10.0)).unwrap();
        assert_eq!(r.get(&id).unwrap().status, PolicyStatus::Candidate);
        let rec = r.record_outcome(&id, outcome("c", 10.0)).unwrap();
        assert_eq!(rec.status, PolicyStatus::Retired);
        assert_eq!(rec.antipatterns.len(), 1);
        assert!(r.search("longtail", 5).unwrap().iter().all(|h| h.record.id != id));
    }

    #[test]
    fn search_basics() {
        let r = Repository::seeded();
        assert_eq!(r.search("  ", 3), Err(RepoError::EmptyQuery));
        assert_eq!(r.search("x", 0), Err(RepoError::InvalidK));
        assert!(r.search("quantum teleportation", 3).unwrap().is_empty());
        let a = r.search("batch longtail long job completion", 3).unwrap();
        assert_eq!(a[0].record.spec.name, "ljf");
        assert_eq!(a, r.search("batch longtail long job completion", 3).unwrap());
        assert!(a.len() <= 3);
    }

    #[test]
    fn annotations_reject_duplicates() {
        let mut r = Repository::seeded();
        let id = ljf_id(&r);
        r.annotate(&id, "d9", "reverted on latency-chain").unwrap();
        assert_eq!(
            r.annotate(&id, "d9", "again"),
            Err(RepoError::DuplicateDeployment("d9".into()))
        );
    }

    #[test]
    fn persistence_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let mut r = Repository::open(dir.path()).unwrap();
            assert_eq!(r.len(), 6);
            let id = ljf_id(&r);
            r.record_outcome(&id, outcome("d1", -20.0)).unwrap();
            id
        };
        let reopened = Repository::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&id).unwrap().outcomes.len(), 1);
        assert!(dir.path().join("index.json").exists());

        // index corruption heals on open
        fs::write(dir.path().join("index.json"), "garbage").unwrap();
        Repository::open(dir.path()).unwrap();

        let path = dir.path().join("records").join(format!("{id}.json"));
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("expected_runtime", "wait_time")).unwrap();
        assert_eq!(Repository::open(dir.path()).unwrap_err(), RepoError::Tampered(id));
    }

    #[test]
    fn bundle_round_trip_keeps_ids() {
        let mut a = Repository::seeded();
        let id = ljf_id(&a);
        a.record_outcome(&id, outcome("d1", -20.0)).unwrap();
        let bundle = a.export_bundle();
        let json = serde_json::to_string(&bundle).unwrap();
        let mut b = Repository::in_memory();
        assert_eq!(b.import_bundle(serde_json::from_str(&json).unwrap()).unwrap(), 6);
        let ids_a: Vec<_> = a.list().iter().map(|r| r.id.clone()).collect();
        let ids_b: Vec<_> = b.list().iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(b.get(&id).unwrap().outcomes, a.get(&id).unwrap().outcomes);
        assert_eq!(b.import_bundle(a.export_bundle()).unwrap(), 0);
    }
}
