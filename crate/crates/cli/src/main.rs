mod bench;

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use schedplane_core::agent::{Agent, AgentConfig, HeuristicProvider, LocalClient};
use schedplane_core::domain::WorkloadSpec;
use schedplane_core::dsl::{builtin, parse_policy, PolicySpec};
use schedplane_core::repo::{RepoBundle, RepoError, Repository};
use schedplane_core::server::{serve_stdio, serve_tcp, Listen, Server, ServerConfig, ServerError};
use schedplane_core::sim::{simulate_with, trace_csv, SimConfig};

/// Scheduler policy control plane.
#[derive(Parser)]
#[command(name = "schedplane", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the JSON-RPC tool server.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate one workload under one policy; metrics JSON on stdout.
    Sim {
        workload: PathBuf,
        /// Built-in name or a policy file.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the per-task trace as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare policies against fair_vruntime over a named suite.
    Bench {
        suite: String,
        /// Comma-separated built-in names or policy files.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run the agent loop headlessly and print its iteration records.
    Loop {
        workload: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_iters: u32,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Inspect or move the policy repository.
    Repo {
        #[arg(long, default_value = "schedplane-repo")]
        path: PathBuf,
        #[command(subcommand)]
        cmd: RepoCmd,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum RepoCmd {
    List,
    Show { id: String },
    /// Bundle JSON to stdout, or to `--out`.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Import { bundle: PathBuf },
}

/// Exit 2 for usage and configuration problems, 3 for domain errors.
enum Failure {
    Usage(String),
    Domain(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) => 3,
        }
    }
}

impl From<ServerError> for Failure {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Repo(e) => Failure::Domain(e.to_string()),
            e => Failure::Usage(e.to_string()),
        }
    }
}

impl From<RepoError> for Failure {
    fn from(e: RepoError) -> Self {
        match e {
            RepoError::Io(e) => Failure::Usage(e.to_string()),
            e => Failure::Domain(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_workload(path: &Path) -> Result<WorkloadSpec> {
    let w: WorkloadSpec =
        serde_json::from_str(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    w.validate().map_err(|e| domain(format!("{}: {e}", path.display())))?;
    Ok(w)
}

/// A built-in name, or a path to a policy file.
pub(crate) fn resolve_policy(name: &str) -> std::result::Result<PolicySpec, String> {
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| format!("{name}: {e}"))?;
        return parse_policy(&text).map_err(|e| format!("{name}: {e}"));
    }
    builtin(name).map_err(|_| format!("unknown policy `{name}`"))
}

fn load_config(path: Option<&Path>) -> Result<ServerConfig> {
    match path {
        Some(p) => Ok(ServerConfig::load(p)?),
        None => Ok(ServerConfig::default()),
    }
}

/// Write to stdout; a closed pipe is not an error worth a panic.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json(v: &Value) {
    emit(&serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn serve(config: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let (server, key_from_env) = Server::from_config(config)?;
    let c = server.config();
    let repo = c.repo_path.as_ref().map_or("in-memory".into(), |p| p.display().to_string());
    if !key_from_env {
        eprintln!("schedplane: {} unset, tokens signed with an ephemeral key", c.signing_key_env);
    }
    match c.listen {
        Listen::Stdio => {
            eprintln!("schedplane: serving JSON-RPC on stdio (repo {repo})");
            serve_stdio(&server).map_err(domain)
        }
        Listen::Tcp => {
            let listener = TcpListener::bind(&c.addr).map_err(|e| Failure::Usage(format!("{}: {e}", c.addr)))?;
            eprintln!("schedplane: listening on {} (repo {repo})", c.addr);
            serve_tcp(Arc::new(server), listener).map_err(domain)
        }
    }
}

fn sim(workload: &Path, policy: &str, seed: Option<u64>, csv: Option<&Path>) -> Result<()> {
    let w = load_workload(workload)?;
    let spec = resolve_policy(policy).map_err(Failure::Domain)?;
    let seed = seed.unwrap_or(w.seed);
    let r = simulate_with(&w, &spec, &SimConfig::seeded(seed)).map_err(domain)?;
    if let Some(path) = csv {
        fs::write(path, trace_csv(&r)).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    print_json(&json!({
        "workload": w.name,
        "policy": spec.name,
        "policy_id": spec.content_id(),
        "seed": seed,
        "complete": r.complete,
        "violations": r.violations.len(),
        "metrics": r.metrics,
    }));
    Ok(())
}

fn run_loop(workload: &Path, max_iters: u32, config: Option<&Path>) -> Result<()> {
    let w = load_workload(workload)?;
    let config = load_config(config)?;
    let (server, _) = Server::from_config(config)?;
    let mut agent = Agent::new(LocalClient::new(&server), HeuristicProvider, AgentConfig::default());
    let session = agent.open(&w, None).map_err(domain)?;
    eprintln!("schedplane: agent loop on {} in {session}, up to {max_iters} iterations", w.name);
    let records = agent.run_loop(max_iters).map_err(domain)?;
    for r in &records {
        eprintln!(
            "  iteration {}: {} -> {} ({})",
            r.iteration,
            r.plan.rationale,
            r.phase.map_or("not deployed".to_string(), |p| format!("{p:?}").to_lowercase()),
            r.live_metric
        );
    }
    print_json(&json!({
        "workload": w.name,
        "baseline_metric": agent.baseline_metric(),
        "records": records,
    }));
    Ok(())
}

fn repo(path: &Path, cmd: RepoCmd) -> Result<()> {
    let mut repo = Repository::open(path)?;
    match cmd {
        RepoCmd::List => {
            let rows: Vec<Value> = repo
                .list()
                .into_iter()
                .map(|r| {
                    json!({
                        "id": r.id,
                        "name": r.spec.name,
                        "status": r.status,
                        "target_families": r.target_families,
                        "outcomes": r.outcomes.len(),
                    })
                })
                .collect();
            print_json(&Value::Array(rows));
        }
        RepoCmd::Show { id } => {
            let r = repo.get(&id)?;
            print_json(&serde_json::to_value(r).map_err(domain)?);
        }
        RepoCmd::Export { out } => {
            let text = serde_json::to_string_pretty(&repo.export_bundle()).map_err(domain)?;
            match out {
                Some(p) => fs::write(&p, text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
                None => emit(&text),
            }
        }
        RepoCmd::Import { bundle } => {
            let b: RepoBundle = serde_json::from_str(&read(&bundle)?)
                .map_err(|e| Failure::Usage(format!("{}: {e}", bundle.display())))?;
            let changed = repo.import_bundle(b)?;
            print_json(&json!({ "changed": changed, "records": repo.len() }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Serve { config } => serve(config.as_deref()),
        Cmd::Sim {
            workload,
            policy,
            seed,
            csv,
        } => sim(&workload, &policy, seed, csv.as_deref()),
        Cmd::Bench {
            suite,
            policies,
            seeds,
            format,
        } => bench::run(&suite, &policies, seeds, format),
        Cmd::Loop {
            workload,
            max_iters,
            config,
        } => run_loop(&workload, max_iters, config.as_deref()),
        Cmd::Repo { path, cmd } => repo(&path, cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Domain(m)) = &f;
            eprintln!("schedplane: {m}");
            ExitCode::from(f.code())
        }
    }
}
