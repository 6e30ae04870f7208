use super::*;
use crate::repo::Repository;
use crate::server::{Server, ServerConfig};
use crate::sim::{gen_build_dag, gen_longtail_batch, DurationDist, SimError, SimResult};
use crate::sim::SimConfig;
use crate::verifier::{Sandbox, Verifier, VerifierConfig};

fn server_with(repo: Repository) -> Server {
    Server::new(ServerConfig::default(), repo, b"agent-key".to_vec())
}

fn longtail() -> WorkloadSpec {
    gen_longtail_batch(39, 1_000_000, 1, 30_000_000).unwrap()
}

fn custom() -> WorkloadSpec {
    let mut w = longtail();
    w.family = crate::domain::Family::Custom;
    w.name = "unlabeled".into();
    w
}

fn agent(s: &Server) -> Agent<LocalClient<'_>, HeuristicProvider> {
    Agent::new(LocalClient::new(s), HeuristicProvider, AgentConfig::default())
}

fn tools(s: &Server, session: &str) -> Vec<String> {
    s.session_log(session)
        .into_iter()
        .map(|e| e.tool)
        .filter(|t| t != "session.open")
        .collect()
}

fn ljf_id() -> String {
    crate::dsl::builtin("ljf").unwrap().content_id()
}

#[test]
fn confident_profile_skips_probes() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    let sid = a.open(&longtail(), None).unwrap();
    let p = a.observe().unwrap();
    assert_eq!(p.optimization_goal, Goal::MinAvgCompletion);
    assert_eq!(tools(&s, &sid), ["summarize", "classify"]);
}

#[test]
fn unsure_profile_probes_once_after_summary() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    let sid = a.open(&custom(), None).unwrap();
    a.observe().unwrap();
    assert_eq!(tools(&s, &sid), ["summarize", "classify", "profile_deep", "classify"]);
}

#[test]
fn build_dag_targets_makespan() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    a.open(&gen_build_dag(60, 3, DurationDist::default(), 4).unwrap(), None).unwrap();
    assert_eq!(a.observe().unwrap().optimization_goal, Goal::MinMakespan);
}

#[test]
fn errors_propagate_without_a_session() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    assert!(matches!(a.observe(), Err(AgentError::NoSession)));
    a.attach("s-404");
    assert_eq!(a.observe().unwrap_err().tool_kind(), Some("UnknownSession"));
}

#[test]
fn seeded_longtail_plan_reuses_ljf() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    a.open(&longtail(), None).unwrap();
    let p = a.observe().unwrap();
    let plan = a.plan(&p).unwrap();
    assert_eq!(plan.variant.policy_id(), Some(ljf_id().as_str()));
    assert_eq!(plan.expected, Direction::Decrease);
    assert_eq!(a.plan(&p).unwrap(), plan);
}

#[test]
fn empty_repo_composes() {
    let s = server_with(Repository::in_memory());
    let mut a = agent(&s);
    a.open(&longtail(), None).unwrap();
    let p = a.observe().unwrap();
    let plan = a.plan(&p).unwrap();
    let (fragments, weights) = compose_recipe(Goal::MinAvgCompletion);
    assert_eq!(plan.variant, PlanVariant::ComposeNew { fragments, weights });
}

#[test]
fn pure_ljf_gets_aged_then_deploys() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    a.open(&longtail(), None).unwrap();
    let plan = Plan {
        variant: PlanVariant::ComposeNew {
            fragments: vec!["longest_first".into()],
            weights: vec![1.0],
        },
        rationale: "pure ljf".into(),
        goal: Goal::MinAvgCompletion,
        expected: Direction::Decrease,
    };
    let e = a.execute(&plan).unwrap();
    assert_eq!(e.refinements(), 1);
    assert!(e.trail[0].findings.contains(&FindingCode::Starvation));
    assert_eq!(e.trail[1].verdict, Verdict::Pass);
    assert!(e.source.contains("0.01 * wait_time"), "{}", e.source);
    assert_eq!(e.canary.unwrap().phase, CanaryPhase::Promoted);
}

#[test]
fn retired_policy_invalidates_plan() {
    let mut repo = Repository::seeded();
    repo.retire(&ljf_id()).unwrap();
    let s = server_with(repo);
    let mut a = agent(&s);
    a.open(&longtail(), None).unwrap();
    let stale = Plan {
        variant: PlanVariant::ConfigureExisting {
            policy_id: ljf_id(),
            params: BTreeMap::new(),
        },
        rationale: "stale".into(),
        goal: Goal::MinAvgCompletion,
        expected: Direction::Decrease,
    };
    assert!(matches!(a.execute(&stale), Err(AgentError::PlanInvalid { .. })));
    let p = a.observe().unwrap();
    assert_ne!(a.plan(&p).unwrap().variant.policy_id(), Some(ljf_id().as_str()));
}

struct Broken;

impl Sandbox for Broken {
    fn run(&self, _: &WorkloadSpec, _: &PolicySpec, _: &SimConfig) -> Result<SimResult, SimError> {
        Err(SimError::NothingCompleted)
    }
}

#[test]
fn failing_verifier_exhausts_refinements() {
    let s = server_with(Repository::seeded())
        .with_verifier(Verifier::with_sandbox(VerifierConfig::default(), Box::new(Broken)));
    let mut a = agent(&s);
    let sid = a.open(&longtail(), None).unwrap();
    let p = a.observe().unwrap();
    let plan = a.plan(&p).unwrap();
    match a.execute(&plan) {
        Err(AgentError::ExhaustedRefinements { trail }) => {
            assert_eq!(trail.len(), 4);
            assert!(trail.iter().all(|t| t.verdict == Verdict::Fail));
        }
        other => panic!("{other:?}"),
    }
    assert!(!tools(&s, &sid).contains(&"deploy.canary".to_string()));
}

#[test]
fn zero_iterations_do_nothing() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    let sid = a.open(&longtail(), None).unwrap();
    assert!(a.run_loop(0).unwrap().is_empty());
    assert!(tools(&s, &sid).is_empty());
}

// 8 cores, 39 x 1 s and 1 x 30 s at t=0. Long job first: the short jobs
// run five deep on 7 cores, mean (30 + 7*(1+2+3+4+5) + 4*6) / 40 = 3.975 s.
// Shortest first: 8 cores 5 deep minus the long one, mean (8*(1+2+3+4)
// + 7*5 + 34) / 40 = 3.725 s.
const LJF_MEAN: f64 = 3_975_000.0;
const SJF_MEAN: f64 = 3_725_000.0;

#[test]
fn longtail_loop_climbs_and_stays_safe() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    a.open(&longtail(), None).unwrap();
    let recs = a.run_loop(3).unwrap();
    let base = a.baseline_metric().unwrap();
    assert_eq!(recs.len(), 3);
    let levels: Vec<u8> = recs.iter().map(|r| r.plan.variant.level()).collect();
    assert_eq!(levels, [0, 1, 2]);

    assert_eq!(recs[0].plan.variant.policy_id(), Some(ljf_id().as_str()));
    assert_eq!(recs[0].trail[0].findings, [FindingCode::Starvation]);
    assert_eq!(recs[0].phase, Some(CanaryPhase::Promoted));
    assert!(matches!(recs[0].action, LearnAction::Promoted { .. }));
    assert_eq!(recs[0].live_metric, LJF_MEAN);
    assert!(recs[0].gain_pct.unwrap() > 20.0);

    assert_eq!(recs[1].phase, Some(CanaryPhase::Promoted));
    assert_eq!(recs[1].live_metric, SJF_MEAN);
    let g = recs[1].gain_pct.unwrap();
    assert!((g - 100.0 * (1.0 - SJF_MEAN / LJF_MEAN)).abs() < 1e-9, "{g}");

    // composing longest first again would undo iteration 1
    assert_eq!(recs[2].verdict, Verdict::Fail);
    assert_eq!(recs[2].trail[0].findings, [FindingCode::PerfRegression]);
    assert_eq!(recs[2].hint, Hint::TryAlternative);

    assert!(recs.iter().all(|r| r.live_metric <= base * 1.10));
    assert!(recs.last().unwrap().live_metric < base);
    let record = s.with_repo(|r| r.get(recs[1].policy_id.as_ref().unwrap()).unwrap().clone());
    assert_eq!(record.status, PolicyStatus::Promoted);
    assert_eq!(record.outcomes.len(), 1);
}

#[test]
fn loop_is_deterministic() {
    let run = || {
        let s = server_with(Repository::seeded());
        let mut a = agent(&s);
        a.open(&longtail(), None).unwrap();
        a.run_loop(2).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn learning_twice_from_one_deployment_is_refused() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    a.open(&longtail(), None).unwrap();
    let r = a.iterate().unwrap();
    let id = r.policy_id.clone().unwrap();
    assert!(matches!(a.learn(&r), Err(AgentError::DuplicateDeployment(_))));
    let n = s.with_repo(|repo| repo.get(&id).unwrap().outcomes.len());
    assert_eq!(n, 1);
}

#[test]
fn revert_leaves_an_antipattern() {
    let s = server_with(Repository::seeded());
    let mut a = agent(&s);
    a.open(&longtail(), None).unwrap();
    let mut r = a.iterate().unwrap();
    r.deployment_id = Some("dep-replayed".into());
    r.phase = Some(CanaryPhase::Reverted);
    r.gain_pct = Some(-30.0);
    let (action, hint) = a.learn(&r).unwrap();
    assert!(matches!(action, LearnAction::Antipattern { .. }));
    assert_eq!(hint, Hint::TryAlternative);
    let id = r.policy_id.unwrap();
    assert!(a.excluded().contains(&id));
    let notes = s.with_repo(|repo| repo.get(&id).unwrap().antipatterns.clone());
    assert_eq!(notes.last().unwrap().deployment_id, "dep-replayed");
}
