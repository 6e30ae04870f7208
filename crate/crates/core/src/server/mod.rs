//! JSON-RPC 2.0 tool server in the MCP style.
//!
//! Methods: `initialize`, `ping`, `tools/list` and `tools/call`. Every
//! `tools/call` answers with an envelope, never a transport error:
//!
//! ```text
//! {"ok": true,  "tool": "summarize", "cost": 1, "session_cost": 7, "data": {...}}
//! {"ok": false, "tool": "summarize", "error": {"kind": "BudgetExhausted", "message": "..."}}
//! ```
//!
//! Protocol faults (unparseable JSON, unknown method, missing tool name) use
//! JSON-RPC error objects whose `data.kind` names the fault.

pub mod tools;
mod transport;

pub use tools::{descriptors, CostClass, ToolDescriptor, SIMULATE_COST, VERIFY_COST};
pub use transport::{serve_lines, serve_stdio, serve_tcp};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Debug;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{
    classify, fingerprint, goal_for_family, profile_deep, summarize, AnalysisSession, FeedbackLedger, Probe,
    ProfileReport, WorkloadSummary,
};
use crate::domain::{Family, Goal, PerformanceDelta, WorkloadSpec};
use crate::dsl::{builtin, parse_policy, render_policy, PolicySpec};
use crate::repo::{OutcomeRecord, PolicyRecord, Repository};
use crate::sim::{simulate_with, SimConfig};
use crate::verifier::{
    issue_token, suite_hash, Canary, CanaryConfig, CanaryError, CanaryState, Clock, DeploymentToken,
    DynamicTarget, ReplaySource, SimMeter, SystemClock, Verdict, Verifier, VerifierConfig, DEFAULT_TTL_SECS,
};

/// Environment variable holding the token signing key unless the config
/// names another.
pub const DEFAULT_KEY_ENV: &str = "SCHEDPLANE_SIGNING_KEY";
pub const BASELINE_POLICY: &str = "fair_vruntime";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Listen {
    Stdio,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanaryDefaults {
    pub window_size: u32,
    pub threshold_pct: f64,
    pub trip_limit: u32,
    pub windows: u32,
    /// Noise on runtime hints in canary windows; 0 replays windows exactly.
    pub hint_noise: f64,
}

impl Default for CanaryDefaults {
    fn default() -> Self {
        let c = CanaryConfig::default();
        CanaryDefaults {
            window_size: c.window_size,
            threshold_pct: c.threshold_pct,
            trip_limit: c.trip_limit,
            windows: c.windows,
            hint_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: Listen,
    pub addr: String,
    /// Repository directory; an in-memory seeded repository when absent.
    pub repo_path: Option<PathBuf>,
    pub signing_key_env: String,
    /// Per-session cost cap in cost units.
    pub cost_cap: u64,
    /// Largest summary any session may render, in bytes.
    pub context_budget: usize,
    /// JSON-lines call log.
    pub log_file: Option<PathBuf>,
    pub token_ttl_secs: u64,
    pub perf_threshold_pct: f64,
    pub canary: CanaryDefaults,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: Listen::Stdio,
            addr: "127.0.0.1:7878".into(),
            repo_path: None,
            signing_key_env: DEFAULT_KEY_ENV.into(),
            cost_cap: 1000,
            context_budget: 2048,
            log_file: None,
            token_ttl_secs: DEFAULT_TTL_SECS,
            perf_threshold_pct: VerifierConfig::default().perf_threshold_pct,
            canary: CanaryDefaults::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Repo(#[from] crate::repo::RepoError),
}

impl ServerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ServerError> {
        toml::from_str(text).map_err(|e| ServerError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ServerError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Key from the configured environment variable, or a random key that
    /// only this process knows when the variable is unset.
    pub fn signing_key(&self) -> (Vec<u8>, bool) {
        match std::env::var(&self.signing_key_env) {
            Ok(k) if !k.is_empty() => (k.into_bytes(), true),
            _ => {
                let mut k = vec![0u8; 32];
                rand::rng().fill_bytes(&mut k);
                (k, false)
            }
        }
    }
}

/// Structured failure of one tool call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolError {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ToolError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        ToolError {
            kind: kind.to_string(),
            message: message.into(),
            details: None,
        }
    }

    /// Kind taken from the error's enum variant name.
    fn from_err<E: Debug + std::fmt::Display>(e: &E) -> Self {
        let dbg = format!("{e:?}");
        let kind = dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error");
        ToolError::new(kind, e.to_string())
    }
}

fn canary_err(e: CanaryError) -> ToolError {
    match &e {
        CanaryError::Token(t) => ToolError::from_err(t),
        _ => ToolError::from_err(&e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub session: Option<String>,
    pub tool: String,
    pub ok: bool,
    pub cost: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Session {
    id: String,
    analysis: AnalysisSession,
    workload: WorkloadSpec,
    suite: Vec<WorkloadSpec>,
    suite_hash: String,
    fingerprint: String,
    cost_cap: u64,
    context_budget: usize,
    active: PolicySpec,
    deployments: Vec<String>,
}

struct Deployment {
    session: String,
    state: CanaryState,
}

struct Tool {
    desc: ToolDescriptor,
    input: jsonschema::Validator,
    output: jsonschema::Validator,
}

pub struct Server {
    config: ServerConfig,
    key: Vec<u8>,
    clock: Arc<dyn Clock>,
    verifier: Verifier,
    repo: Mutex<Repository>,
    ledger: Mutex<FeedbackLedger>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    deployments: Mutex<BTreeMap<String, Deployment>>,
    tools: Vec<Tool>,
    log: Mutex<Vec<LogEntry>>,
    log_file: Option<Mutex<File>>,
    next_session: AtomicU64,
    next_deployment: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn arg<T: DeserializeOwned>(args: &Value, key: &str) -> Result<Option<T>, ToolError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| ToolError::new("SchemaViolation", format!("`{key}`: {e}"))),
    }
}

fn req<T: DeserializeOwned>(args: &Value, key: &str) -> Result<T, ToolError> {
    arg(args, key)?.ok_or_else(|| ToolError::new("SchemaViolation", format!("missing `{key}`")))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn policy_out(spec: &PolicySpec) -> Value {
    json!({ "id": spec.content_id(), "name": spec.name, "source": render_policy(spec) })
}

fn record_brief(r: &PolicyRecord) -> Value {
    json!({
        "id": r.id,
        "name": r.spec.name,
        "status": r.status,
        "outcomes": r.outcomes.len(),
        "antipatterns": r.antipatterns.len(),
    })
}

impl Server {
    pub fn new(config: ServerConfig, repo: Repository, key: Vec<u8>) -> Self {
        let verifier = Verifier::new(VerifierConfig {
            perf_threshold_pct: config.perf_threshold_pct,
            ..VerifierConfig::default()
        });
        let tools = descriptors()
            .into_iter()
            .map(|desc| Tool {
                input: jsonschema::validator_for(&desc.input_schema).expect("input schema compiles"),
                output: jsonschema::validator_for(&desc.output_schema).expect("output schema compiles"),
                desc,
            })
            .collect();
        Server {
            config,
            key,
            clock: Arc::new(SystemClock),
            verifier,
            repo: Mutex::new(repo),
            ledger: Mutex::new(FeedbackLedger::new()),
            sessions: Mutex::new(HashMap::new()),
            deployments: Mutex::new(BTreeMap::new()),
            tools,
            log: Mutex::new(Vec::new()),
            log_file: None,
            next_session: AtomicU64::new(1),
            next_deployment: AtomicU64::new(1),
        }
    }

    /// Build from a config: opens (creating) the repository directory, the
    /// log file and reads the signing key. The flag reports whether the key
    /// came from the environment.
    pub fn from_config(config: ServerConfig) -> Result<(Self, bool), ServerError> {
        let repo = match &config.repo_path {
            Some(p) => Repository::open(p)?,
            None => Repository::seeded(),
        };
        let (key, from_env) = config.signing_key();
        let log_file = match &config.log_file {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        let mut s = Server::new(config, repo, key);
        s.log_file = log_file;
        Ok((s, from_env))
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_verifier(mut self, verifier: Verifier) -> Self {
        self.verifier = verifier;
        self
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn list_tools(&self) -> Vec<&ToolDescriptor> {
        self.tools.iter().map(|t| &t.desc).collect()
    }

    /// Read access to the repository, for operators and tests.
    pub fn with_repo<R>(&self, f: impl FnOnce(&Repository) -> R) -> R {
        f(&lock(&self.repo))
    }

    pub fn log_entries(&self) -> Vec<LogEntry> {
        lock(&self.log).clone()
    }

    pub fn session_log(&self, session: &str) -> Vec<LogEntry> {
        lock(&self.log)
            .iter()
            .filter(|e| e.session.as_deref() == Some(session))
            .cloned()
            .collect()
    }

    fn write_log(&self, session: Option<String>, tool: &str, result: &Result<u64, ToolError>) {
        let mut log = lock(&self.log);
        let entry = LogEntry {
            seq: log.len() as u64 + 1,
            session,
            tool: tool.to_string(),
            ok: result.is_ok(),
            cost: *result.as_ref().unwrap_or(&0),
            error: result.as_ref().err().map(|e| e.kind.clone()),
        };
        if let Some(f) = &self.log_file {
            let _ = writeln!(lock(f), "{}", to_json(&entry));
        }
        log.push(entry);
    }

    /// Dispatch one tool call and wrap the outcome in the result envelope.
    pub fn call_tool(&self, name: &str, args: Value) -> Value {
        let session_id = args.get("session").and_then(Value::as_str).map(str::to_string);
        let (result, cost, total) = match self.call_inner(name, &args) {
            Ok((data, cost, total)) => (Ok(data), cost, total),
            Err(e) => (Err(e), 0, 0),
        };
        let logged_session = match (&result, name) {
            (Ok(d), "session.open") => d.get("session").and_then(Value::as_str).map(str::to_string),
            _ => session_id,
        };
        self.write_log(logged_session, name, &result.as_ref().map(|_| cost).map_err(Clone::clone));
        match result {
            Ok(data) => json!({ "ok": true, "tool": name, "cost": cost, "session_cost": total, "data": data }),
            Err(e) => json!({ "ok": false, "tool": name, "error": e }),
        }
    }

    fn call_inner(&self, name: &str, args: &Value) -> Result<(Value, u64, u64), ToolError> {
        let tool = self
            .tools
            .iter()
            .find(|t| t.desc.name == name)
            .ok_or_else(|| ToolError::new("UnknownTool", format!("no tool named `{name}`")))?;
        let problems: Vec<String> = tool.input.iter_errors(args).map(|e| format!("{}: {e}", e.instance_path)).collect();
        if !problems.is_empty() {
            return Err(ToolError {
                details: Some(json!(problems)),
                ..ToolError::new("SchemaViolation", format!("arguments do not match the `{name}` schema"))
            });
        }
        let (data, cost, total) = if name == "session.open" {
            (self.open_session(args)?, 0, 0)
        } else {
            let id: String = req(args, "session")?;
            let handle = lock(&self.sessions)
                .get(&id)
                .cloned()
                .ok_or_else(|| ToolError::new("UnknownSession", format!("no session `{id}`")))?;
            let mut s = lock(&handle);
            let units = match tool.desc.cost_class {
                CostClass::Probe => {
                    let names: Vec<String> = req(args, "probes")?;
                    let distinct: BTreeSet<String> = names
                        .iter()
                        .map(|n| n.parse::<Probe>().map(|p| format!("{p:?}")).unwrap_or_else(|_| n.clone()))
                        .collect();
                    tool.desc.cost_class.units(distinct.len())
                }
                c => c.units(0),
            };
            let before = s.analysis.cost();
            if before + units > s.cost_cap {
                return Err(ToolError::new(
                    "BudgetExhausted",
                    format!("call costs {units}, session has spent {before} of {}", s.cost_cap),
                ));
            }
            let data = self.dispatch(name, &mut s, args)?;
            if name == "session.close" {
                lock(&self.sessions).remove(&id);
            }
            // summary and probe tools charge themselves through the analysis engine
            let charged = s.analysis.cost() - before;
            if charged < units {
                s.analysis.charge(units - charged);
            }
            (data, units, s.analysis.cost())
        };
        if !tool.output.is_valid(&data) {
            return Err(ToolError::new("Internal", format!("`{name}` produced output outside its schema")));
        }
        Ok((data, cost, total))
    }

    fn open_session(&self, args: &Value) -> Result<Value, ToolError> {
        let workload: WorkloadSpec = req(args, "workload")?;
        let suite: Vec<WorkloadSpec> = arg(args, "suite")?.unwrap_or_else(|| vec![workload.clone()]);
        for w in std::iter::once(&workload).chain(&suite) {
            w.validate()
                .map_err(|e| ToolError::new("InvalidWorkload", format!("{}: {e}", w.name)))?;
        }
        let cost_cap = arg(args, "cost_cap")?.unwrap_or(self.config.cost_cap);
        let context_budget = arg::<usize>(args, "context_budget")?
            .unwrap_or(self.config.context_budget)
            .min(self.config.context_budget);
        let mut probe = AnalysisSession::for_workload(workload.clone());
        let fp = summarize(&mut probe, 4096).map(|s| fingerprint(&s)).map_err(|e| ToolError::from_err(&e))?;
        let id = format!("s-{}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let hash = suite_hash(&suite);
        let out = json!({
            "session": id,
            "workload": workload.name,
            "cost_cap": cost_cap,
            "context_budget": context_budget,
            "suite_hash": hash,
        });
        let s = Session {
            id: id.clone(),
            analysis: AnalysisSession::for_workload(workload.clone()),
            workload,
            suite,
            suite_hash: hash,
            fingerprint: fp,
            cost_cap,
            context_budget,
            active: builtin(BASELINE_POLICY).map_err(|e| ToolError::from_err(&e))?,
            deployments: Vec::new(),
        };
        lock(&self.sessions).insert(id, Arc::new(Mutex::new(s)));
        Ok(out)
    }

    /// Resolve `{name}`, `{id}` or `{source}`. Names look in the repository
    /// first, then the built-ins.
    fn resolve_policy(&self, v: &Value) -> Result<PolicySpec, ToolError> {
        if let Some(src) = v.get("source").and_then(Value::as_str) {
            return parse_policy(src).map_err(|e| ToolError::new("InvalidPolicy", e.to_string()));
        }
        let repo = lock(&self.repo);
        if let Some(id) = v.get("id").and_then(Value::as_str) {
            return repo.get(id).map(|r| r.spec.clone()).map_err(|e| ToolError::from_err(&e));
        }
        let name = v.get("name").and_then(Value::as_str).unwrap_or_default();
        match repo.find_by_name(name) {
            Some(r) => Ok(r.spec.clone()),
            None => builtin(name).map_err(|_| ToolError::new("UnknownPolicy", format!("no policy named `{name}`"))),
        }
    }

    fn deployment_of(&self, s: &Session, id: &str) -> Result<CanaryState, ToolError> {
        let deps = lock(&self.deployments);
        match deps.get(id) {
            Some(d) if d.session == s.id => Ok(d.state.clone()),
            _ => Err(ToolError::new("UnknownDeployment", format!("no deployment `{id}` in this session"))),
        }
    }

    fn dispatch(&self, name: &str, s: &mut Session, args: &Value) -> Result<Value, ToolError> {
        let repo_err = |e: crate::repo::RepoError| ToolError::from_err(&e);
        match name {
            "session.status" => Ok(json!({
                "session": s.id,
                "cost": s.analysis.cost(),
                "cost_cap": s.cost_cap,
                "context_budget": s.context_budget,
                "active_policy": policy_out(&s.active),
                "deployments": s.deployments,
            })),
            "session.close" => Ok(json!({ "closed": true })),
            "summarize" => {
                let budget = arg::<usize>(args, "budget")?.unwrap_or(s.context_budget).min(s.context_budget);
                summarize(&mut s.analysis, budget)
                    .map(|r| to_json(&r))
                    .map_err(|e| ToolError::from_err(&e))
            }
            "profile_deep" => {
                let probes: Vec<String> = req(args, "probes")?;
                profile_deep(&mut s.analysis, &probes)
                    .map(|r| to_json(&r))
                    .map_err(|e| ToolError::from_err(&e))
            }
            "classify" => {
                let summary: WorkloadSummary = req(args, "summary")?;
                let report: Option<ProfileReport> = arg(args, "report")?;
                Ok(to_json(&classify(&summary, report.as_ref())))
            }
            "simulate" => {
                let spec = self.resolve_policy(&args["policy"])?;
                let seed = arg(args, "seed")?.unwrap_or(s.workload.seed);
                let r = simulate_with(&s.workload, &spec, &SimConfig::seeded(seed)).map_err(|e| ToolError::from_err(&e))?;
                Ok(json!({
                    "policy": policy_out(&spec),
                    "complete": r.complete,
                    "metrics": r.metrics,
                    "violations": r.violations.len(),
                    "end_time": r.end_time,
                }))
            }
            "repo.search" => {
                let query: String = req(args, "query")?;
                let k = arg(args, "k")?.unwrap_or(5);
                let hits = lock(&self.repo).search(&query, k).map_err(repo_err)?;
                let hits: Vec<Value> = hits
                    .iter()
                    .map(|h| {
                        json!({
                            "id": h.record.id,
                            "name": h.record.spec.name,
                            "description": h.record.description,
                            "status": h.record.status,
                            "target_families": h.record.target_families,
                            "score": h.score,
                            "normalized": h.normalized,
                            "source": render_policy(&h.record.spec),
                        })
                    })
                    .collect();
                Ok(json!({ "hits": hits }))
            }
            "repo.get" => {
                let id: String = req(args, "id")?;
                let repo = lock(&self.repo);
                let r = repo.get(&id).map_err(repo_err)?;
                Ok(json!({ "record": r, "source": render_policy(&r.spec) }))
            }
            "repo.add" => {
                let spec = self.resolve_policy(&args["policy"])?;
                let description: String = arg(args, "description")?.unwrap_or_else(|| spec.description.clone());
                let families: BTreeSet<Family> =
                    arg(args, "target_families")?.unwrap_or_else(|| BTreeSet::from([s.workload.family]));
                let r = lock(&self.repo).add(spec, &description, families).map_err(repo_err)?;
                Ok(record_brief(&r))
            }
            "repo.record_outcome" => {
                let id: String = req(args, "id")?;
                let outcome = OutcomeRecord {
                    fingerprint: arg(args, "fingerprint")?.unwrap_or_else(|| s.fingerprint.clone()),
                    goal: req(args, "goal")?,
                    delta: req::<PerformanceDelta>(args, "delta")?,
                    timestamp: self.clock.now_secs(),
                    deployment_id: req(args, "deployment_id")?,
                };
                let r = lock(&self.repo).record_outcome(&id, outcome).map_err(repo_err)?;
                Ok(record_brief(&r))
            }
            "repo.promote" => {
                let id: String = req(args, "id")?;
                let r = lock(&self.repo).promote(&id).map_err(repo_err)?;
                Ok(record_brief(&r))
            }
            "repo.annotate" => {
                let id: String = req(args, "id")?;
                let dep: String = req(args, "deployment_id")?;
                let note: String = req(args, "note")?;
                let r = lock(&self.repo).annotate(&id, &dep, &note).map_err(repo_err)?;
                Ok(record_brief(&r))
            }
            "verify.pipeline" => self.verify(s, args),
            "deploy.canary" => self.deploy(s, args),
            "deploy.status" => {
                let id: String = req(args, "deployment_id")?;
                Ok(json!({ "state": self.deployment_of(s, &id)? }))
            }
            "feedback.report" => {
                let id: String = req(args, "deployment_id")?;
                self.deployment_of(s, &id)?;
                let ledger = lock(&self.ledger);
                let delta = ledger.report_feedback(&id).map_err(|e| ToolError::from_err(&e))?;
                Ok(json!({ "deployment_id": id, "delta": delta, "closed": ledger.is_closed(&id) == Some(true) }))
            }
            _ => Err(ToolError::new("UnknownTool", format!("no handler for `{name}`"))),
        }
    }

    fn verify(&self, s: &mut Session, args: &Value) -> Result<Value, ToolError> {
        let spec = self.resolve_policy(&args["policy"])?;
        let baseline = match args.get("baseline") {
            Some(b) => self.resolve_policy(b)?,
            None => builtin(BASELINE_POLICY).map_err(|e| ToolError::from_err(&e))?,
        };
        let goal: Goal = arg(args, "goal")?.unwrap_or_else(|| goal_for_family(s.workload.family));
        let target = DynamicTarget {
            family: s.workload.family,
            goal,
        };
        let report = self.verifier.run_pipeline(&spec, &s.suite, &baseline, Some(target));
        let token = match report.verdict {
            Verdict::Pass => Some(
                issue_token(&report, &self.key, self.clock.now_secs(), self.config.token_ttl_secs)
                    .map_err(|e| ToolError::from_err(&e))?,
            ),
            Verdict::Fail => None,
        };
        Ok(json!({
            "verdict": report.verdict,
            "policy": policy_out(&spec),
            "suite_hash": report.suite_hash,
            "report": report,
            "token": token,
        }))
    }

    fn deploy(&self, s: &mut Session, args: &Value) -> Result<Value, ToolError> {
        let token: DeploymentToken = req(args, "token")?;
        let spec = self.resolve_policy(&args["policy"])?;
        let d = &self.config.canary;
        let cfg_args = args.get("config").cloned().unwrap_or(json!({}));
        let config = CanaryConfig {
            window_size: arg(&cfg_args, "window_size")?.unwrap_or(d.window_size),
            threshold_pct: arg(&cfg_args, "threshold_pct")?.unwrap_or(d.threshold_pct),
            trip_limit: arg(&cfg_args, "trip_limit")?.unwrap_or(d.trip_limit),
            windows: arg(&cfg_args, "windows")?.unwrap_or(d.windows),
            goal: arg(&cfg_args, "goal")?.unwrap_or_else(|| goal_for_family(s.workload.family)),
        };
        let dep_id = format!("dep-{:06}", self.next_deployment.load(Ordering::SeqCst));
        let mut canary = Canary::start(
            &token,
            &self.key,
            self.clock.now_secs(),
            &s.suite_hash,
            spec.clone(),
            s.active.clone(),
            &dep_id,
            &config,
        )
        .map_err(canary_err)?;
        self.next_deployment.fetch_add(1, Ordering::SeqCst);
        let source = ReplaySource(s.workload.clone());
        let meter = SimMeter {
            hint_noise: d.hint_noise,
        };
        let state = canary
            .run(&source, &meter, Some(&mut lock(&self.ledger)))
            .map_err(canary_err)?
            .clone();
        if state.active_policy_id == state.candidate_policy_id {
            s.active = spec.clone();
        }
        s.deployments.push(dep_id.clone());
        lock(&self.deployments).insert(
            dep_id.clone(),
            Deployment {
                session: s.id.clone(),
                state: state.clone(),
            },
        );

        let description: String = arg(args, "description")?.unwrap_or_else(|| spec.description.clone());
        let outcome_recorded = match canary.outcome(&s.fingerprint, self.clock.now_secs()) {
            Some(o) => {
                let mut repo = lock(&self.repo);
                let id = spec.content_id();
                if repo.get(&id).is_err() {
                    repo.add(spec.clone(), &description, BTreeSet::from([s.workload.family]))
                        .map_err(|e| ToolError::from_err(&e))?;
                }
                repo.record_outcome(&id, o).is_ok()
            }
            None => false,
        };
        Ok(json!({
            "deployment_id": dep_id,
            "policy": policy_out(&spec),
            "state": state,
            "outcome_recorded": outcome_recorded,
        }))
    }

    /// Handle one JSON-RPC message (single or batch). Notifications produce
    /// no reply.
    pub fn handle_message(&self, text: &str) -> Option<String> {
        let v: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return Some(rpc_error(Value::Null, -32700, "ParseError", &e.to_string()).to_string()),
        };
        match v {
            Value::Array(items) if items.is_empty() => {
                Some(rpc_error(Value::Null, -32600, "InvalidRequest", "empty batch").to_string())
            }
            Value::Array(items) => {
                let out: Vec<Value> = items.iter().filter_map(|i| self.handle_value(i)).collect();
                (!out.is_empty()).then(|| Value::Array(out).to_string())
            }
            other => self.handle_value(&other).map(|r| r.to_string()),
        }
    }

    fn handle_value(&self, v: &Value) -> Option<Value> {
        let Some(obj) = v.as_object() else {
            return Some(rpc_error(Value::Null, -32600, "InvalidRequest", "request must be an object"));
        };
        let id = obj.get("id").cloned();
        let method = obj.get("method").and_then(Value::as_str);
        let (Some(method), true) = (method, obj.get("jsonrpc") == Some(&json!("2.0"))) else {
            return Some(rpc_error(id.unwrap_or(Value::Null), -32600, "InvalidRequest", "not a JSON-RPC 2.0 request"));
        };
        let params = obj.get("params").cloned().unwrap_or(json!({}));
        let result = match method {
            "initialize" => Ok(json!({
                "protocolVersion": "2024-11-05",
                "serverInfo": { "name": "schedplane", "version": env!("CARGO_PKG_VERSION") },
                "capabilities": { "tools": {} },
            })),
            "ping" => Ok(json!({})),
            "tools/list" => Ok(json!({ "tools": self.list_tools() })),
            "tools/call" => match params.get("name").and_then(Value::as_str) {
                Some(name) => Ok(self.call_tool(name, params.get("arguments").cloned().unwrap_or(json!({})))),
                None => Err((-32602, "InvalidParams", "tools/call needs a string `name`".to_string())),
            },
            m => Err((-32601, "MethodNotFound", format!("unknown method `{m}`"))),
        };
        let id = id?;
        Some(match result {
            Ok(r) => json!({ "jsonrpc": "2.0", "id": id, "result": r }),
            Err((code, kind, msg)) => rpc_error(id, code, kind, &msg),
        })
    }
}

fn rpc_error(id: Value, code: i64, kind: &str, message: &str) -> Value {
    json!({
        "jsonrpc": "2.0",
        "id": id,
        "error": { "code": code, "message": message, "data": { "kind": kind } },
    })
}
