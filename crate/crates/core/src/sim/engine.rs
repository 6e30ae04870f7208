use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    EventKind, PendingState, PendingTask, SimConfig, SimError, SimResult, TaskTrace, Violation,
    ViolationKind,
};
use crate::domain::{
    compute_metrics, Micros, TaskCompletion, TaskRuntimeState, WorkloadSpec, NICE_0_WEIGHT,
};
use crate::dsl::{BoundPolicy, PolicySpec, RankKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    NotArrived,
    Blocked,
    Queued,
    Running(usize),
    Done,
}

#[derive(Debug, Clone)]
struct Task {
    status: Status,
    arrival: Micros,
    weight: u32,
    total_work: Micros,
    remaining: Micros,
    hint: Option<Micros>,
    exec: Micros,
    vruntime: f64,
    enqueue_time: Micros,
    wakeup: Micros,
    wakeup_count: u64,
    first_run: Option<Micros>,
    first_enqueue: Option<Micros>,
    completion: Micros,
    max_wait: Micros,
    total_wait: Micros,
    run_start: Micros,
    deps_left: usize,
    generation: u64,
    dispatches: u64,
}

fn kind_code(k: EventKind) -> u8 {
    match k {
        EventKind::Arrival => 0,
        EventKind::SliceExpiry => 1,
        EventKind::Completion => 2,
        EventKind::Wakeup => 3,
    }
}

fn kind_of(code: u8) -> EventKind {
    match code {
        0 => EventKind::Arrival,
        1 => EventKind::SliceExpiry,
        2 => EventKind::Completion,
        _ => EventKind::Wakeup,
    }
}

/// (time, sequence, kind, task index, generation)
type Queued = Reverse<(Micros, u64, u8, usize, u64)>;

pub(super) struct Engine<'a> {
    workload: &'a WorkloadSpec,
    policy_name: String,
    policy: BoundPolicy,
    tasks: Vec<Task>,
    dependents: Vec<Vec<usize>>,
    deps: Vec<Vec<usize>>,
    cores: Vec<Option<usize>>,
    runqueue: Vec<usize>,
    events: BinaryHeap<Queued>,
    seq: u64,
    now: Micros,
    violations: Vec<Violation>,
    event_count: u64,
    arrivals: u64,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        workload: &'a WorkloadSpec,
        policy: &PolicySpec,
        config: &SimConfig,
    ) -> Result<Self, SimError> {
        let graph = workload.dependency_graph()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let noise = if config.hint_noise > 0.0 && config.hint_noise.is_finite() {
            Normal::new(0.0, config.hint_noise).ok()
        } else {
            None
        };
        let tasks = workload
            .tasks
            .iter()
            .zip(&graph.deps)
            .map(|(t, d)| {
                let hint = t.expected_runtime_hint.map(|h| match &noise {
                    Some(n) => {
                        let f: f64 = n.sample(&mut rng);
                        (h as f64 * (1.0 + f).max(0.0)).round() as Micros
                    }
                    None => h,
                });
                Task {
                    status: Status::NotArrived,
                    arrival: t.arrival_time,
                    weight: t.weight,
                    total_work: t.total_work,
                    remaining: t.total_work,
                    hint,
                    exec: 0,
                    vruntime: 0.0,
                    enqueue_time: 0,
                    wakeup: 0,
                    wakeup_count: 0,
                    first_run: None,
                    first_enqueue: None,
                    completion: 0,
                    max_wait: 0,
                    total_wait: 0,
                    run_start: 0,
                    deps_left: d.len(),
                    generation: 0,
                    dispatches: 0,
                }
            })
            .collect();
        let mut engine = Engine {
            workload,
            policy_name: policy.name.clone(),
            policy: BoundPolicy::new(policy),
            tasks,
            dependents: graph.dependents,
            deps: graph.deps.into_iter().map(|d| d.into_iter().collect()).collect(),
            cores: vec![None; workload.core_count as usize],
            runqueue: Vec::new(),
            events: BinaryHeap::new(),
            seq: 0,
            now: 0,
            violations: Vec::new(),
            event_count: 0,
            arrivals: 0,
        };
        // Arrivals enter in task-list order so equal times keep that order.
        for i in 0..engine.tasks.len() {
            let at = engine.tasks[i].arrival;
            engine.push(at, EventKind::Arrival, i, 0);
        }
        Ok(engine)
    }

    fn push(&mut self, time: Micros, kind: EventKind, task: usize, generation: u64) {
        if time < self.now {
            self.violation(ViolationKind::ClockRegression, Some(task), format!("event scheduled at {time} before now"));
        }
        self.seq += 1;
        self.events
            .push(Reverse((time, self.seq, kind_code(kind), task, generation)));
    }

    fn violation(&mut self, kind: ViolationKind, task: Option<usize>, detail: String) {
        let task = task.map(|i| self.workload.tasks[i].id);
        self.violations.push(Violation {
            time: self.now,
            kind,
            task,
            detail,
        });
    }

    /// Feature vector of task `i` at the current instant. Running tasks are
    /// seen as if freshly enqueued now, with their in-flight execution settled.
    fn state(&self, i: usize) -> TaskRuntimeState {
        let t = &self.tasks[i];
        let (exec, vruntime, enqueue_time) = match t.status {
            Status::Running(_) => {
                let ran = self.now - t.run_start;
                (t.exec + ran, t.vruntime + vr_delta(ran, t.weight), self.now)
            }
            _ => (t.exec, t.vruntime, t.enqueue_time),
        };
        TaskRuntimeState {
            arrival_time: t.arrival,
            enqueue_time,
            wait_time: self.now.saturating_sub(enqueue_time),
            exec_runtime: exec,
            vruntime,
            expected_runtime: t.hint.unwrap_or(exec),
            weight: t.weight,
            wakeup_count: t.wakeup_count,
            now: self.now,
        }
    }

    fn key(&self, i: usize) -> Result<RankKey, SimError> {
        let s = self.state(i);
        let priority = self.policy.priority(&s).map_err(|source| SimError::RuntimeEval {
            task: self.workload.tasks[i].id,
            source,
        })?;
        Ok(RankKey {
            priority,
            enqueue_time: s.enqueue_time,
            id: self.workload.tasks[i].id,
        })
    }

    fn min_runnable_vruntime(&self, except: usize) -> Option<f64> {
        let running = self.cores.iter().flatten().copied();
        self.runqueue
            .iter()
            .copied()
            .chain(running)
            .filter(|&j| j != except)
            .map(|j| self.state(j).vruntime)
            .reduce(f64::min)
    }

    fn make_runnable(&mut self, i: usize) {
        if let Some(floor) = self.min_runnable_vruntime(i) {
            let t = &mut self.tasks[i];
            t.vruntime = t.vruntime.max(floor);
        }
        let now = self.now;
        let t = &mut self.tasks[i];
        t.status = Status::Queued;
        t.enqueue_time = now;
        t.wakeup = now;
        t.first_enqueue.get_or_insert(now);
        self.runqueue.push(i);
    }

    /// Stop task `i` running and account for the time since it was dispatched.
    fn settle(&mut self, i: usize) -> usize {
        let now = self.now;
        let t = &mut self.tasks[i];
        let Status::Running(core) = t.status else {
            unreachable!("settling a task that is not running")
        };
        let ran = now - t.run_start;
        t.exec += ran;
        t.remaining -= ran;
        t.vruntime += vr_delta(ran, t.weight);
        t.generation += 1;
        self.cores[core] = None;
        core
    }

    fn requeue(&mut self, i: usize) {
        let now = self.now;
        let t = &mut self.tasks[i];
        t.status = Status::Queued;
        t.enqueue_time = now;
        self.runqueue.push(i);
    }

    fn dispatch(&mut self, i: usize, core: usize) -> Result<(), SimError> {
        if let Some(&d) = self.deps[i].iter().find(|&&d| self.tasks[d].status != Status::Done) {
            let dep = self.workload.tasks[d].id;
            self.violation(ViolationKind::DependencyOrder, Some(i), format!("dispatched before dependency {dep}"));
        }
        let state = self.state(i);
        let slice = self.policy.slice(&state).map_err(|source| SimError::RuntimeEval {
            task: self.workload.tasks[i].id,
            source,
        })?;
        let now = self.now;
        let t = &mut self.tasks[i];
        let waited = now - t.enqueue_time;
        t.max_wait = t.max_wait.max(waited);
        t.total_wait += waited;
        t.first_run.get_or_insert(now);
        t.status = Status::Running(core);
        t.run_start = now;
        t.dispatches += 1;
        t.generation += 1;
        let generation = t.generation;
        let remaining = t.remaining;
        self.cores[core] = Some(i);
        match slice {
            Some(s) if s < remaining => self.push(now + s, EventKind::SliceExpiry, i, generation),
            _ => self.push(now + remaining, EventKind::Completion, i, generation),
        }
        Ok(())
    }

    /// Fill idle cores from the run queue in dispatch order.
    fn fill_idle_cores(&mut self) -> Result<(), SimError> {
        let idle: Vec<usize> = (0..self.cores.len()).filter(|&c| self.cores[c].is_none()).collect();
        if idle.is_empty() || self.runqueue.is_empty() {
            return Ok(());
        }
        let mut keyed = Vec::with_capacity(self.runqueue.len());
        for &i in &self.runqueue {
            keyed.push((self.key(i)?, i));
        }
        let take = idle.len().min(keyed.len());
        if take < keyed.len() {
            keyed.select_nth_unstable_by(take - 1, |a, b| a.0.dispatch_cmp(&b.0));
            keyed.truncate(take);
        }
        keyed.sort_by(|a, b| a.0.dispatch_cmp(&b.0));
        let chosen: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
        self.runqueue.retain(|i| !chosen.contains(i));
        for (core, i) in idle.into_iter().zip(chosen) {
            self.dispatch(i, core)?;
        }
        Ok(())
    }

    /// Let tasks that just became runnable displace the lowest-priority
    /// running task when strictly higher.
    fn preempt_for(&mut self, newcomers: &[usize]) -> Result<(), SimError> {
        let mut waiting: Vec<(RankKey, usize)> = Vec::new();
        for &i in newcomers {
            if self.tasks[i].status == Status::Queued {
                waiting.push((self.key(i)?, i));
            }
        }
        waiting.sort_by(|a, b| a.0.dispatch_cmp(&b.0));
        for (key, i) in waiting {
            let mut lowest: Option<(RankKey, usize)> = None;
            for c in 0..self.cores.len() {
                if let Some(r) = self.cores[c] {
                    let k = self.key(r)?;
                    if lowest.as_ref().is_none_or(|(lk, _)| k.dispatch_cmp(lk).is_gt()) {
                        lowest = Some((k, r));
                    }
                }
            }
            let Some((victim_key, victim)) = lowest else { break };
            if key.priority <= victim_key.priority {
                break;
            }
            let core = self.settle(victim);
            self.requeue(victim);
            self.runqueue.retain(|&j| j != i);
            self.dispatch(i, core)?;
        }
        Ok(())
    }

    fn check_work_conservation(&mut self) {
        let idle = self.cores.iter().filter(|c| c.is_none()).count();
        if idle > 0 && !self.runqueue.is_empty() {
            let n = self.runqueue.len();
            self.violation(
                ViolationKind::WorkConservation,
                None,
                format!("{idle} idle cores with {n} runnable tasks"),
            );
        }
    }

    pub(super) fn run(mut self) -> Result<SimResult, SimError> {
        let horizon = self.workload.horizon.unwrap_or(Micros::MAX);
        let mut stopped_at_horizon = false;
        while let Some(&Reverse((time, ..))) = self.events.peek() {
            if time > horizon {
                stopped_at_horizon = true;
                break;
            }
            if time < self.now {
                self.violation(ViolationKind::ClockRegression, None, format!("event at {time} after {}", self.now));
            }
            self.now = time;
            let mut newcomers = Vec::new();
            while let Some(&Reverse((t, _, code, i, generation))) = self.events.peek() {
                if t != time {
                    break;
                }
                self.events.pop();
                self.handle(kind_of(code), i, generation, &mut newcomers);
            }
            self.fill_idle_cores()?;
            if self.policy.preemptive && !newcomers.is_empty() {
                self.preempt_for(&newcomers)?;
            }
            self.check_work_conservation();
        }
        if stopped_at_horizon {
            self.now = horizon;
        }
        Ok(self.finish(stopped_at_horizon))
    }

    fn handle(&mut self, kind: EventKind, i: usize, generation: u64, newcomers: &mut Vec<usize>) {
        match kind {
            EventKind::Arrival => {
                self.event_count += 1;
                self.arrivals += 1;
                if self.tasks[i].deps_left == 0 {
                    self.make_runnable(i);
                    newcomers.push(i);
                } else {
                    self.tasks[i].status = Status::Blocked;
                }
            }
            EventKind::Wakeup => {
                self.event_count += 1;
                if self.tasks[i].status == Status::Blocked {
                    self.tasks[i].wakeup_count += 1;
                    self.make_runnable(i);
                    newcomers.push(i);
                }
            }
            EventKind::SliceExpiry | EventKind::Completion => {
                if self.tasks[i].generation != generation {
                    return;
                }
                self.event_count += 1;
                self.settle(i);
                if kind == EventKind::SliceExpiry {
                    if !self.policy.preemptive {
                        self.violation(ViolationKind::NonPreemption, Some(i), "slice expiry under a run-to-completion policy".into());
                    }
                    self.requeue(i);
                    return;
                }
                let now = self.now;
                let t = &mut self.tasks[i];
                t.status = Status::Done;
                t.completion = now;
                if t.remaining != 0 {
                    let left = t.remaining;
                    self.violation(ViolationKind::TaskConservation, Some(i), format!("completed with {left} us of work left"));
                }
                for k in 0..self.dependents[i].len() {
                    let j = self.dependents[i][k];
                    let d = &mut self.tasks[j];
                    d.deps_left -= 1;
                    if d.deps_left == 0 && d.status == Status::Blocked {
                        self.push(now, EventKind::Wakeup, j, 0);
                    }
                }
            }
        }
    }

    fn finish(mut self, stopped_at_horizon: bool) -> SimResult {
        let now = self.now;
        let mut trace = Vec::new();
        let mut completions = Vec::new();
        let mut pending = Vec::new();
        let mut short_work = Vec::new();
        for (i, t) in self.tasks.iter().enumerate() {
            let id = self.workload.tasks[i].id;
            let pending_task = |state, exec, max_wait| PendingTask {
                id,
                weight: t.weight,
                state,
                exec,
                max_wait,
            };
            match t.status {
                Status::NotArrived => {}
                Status::Done => {
                    if t.exec != t.total_work {
                        short_work.push(i);
                    }
                    let first_run = t.first_run.unwrap_or(t.completion);
                    trace.push(TaskTrace {
                        id,
                        weight: t.weight,
                        arrival: t.arrival,
                        enqueue: t.first_enqueue.unwrap_or(t.arrival),
                        first_run,
                        completion: t.completion,
                        exec: t.exec,
                        max_wait: t.max_wait,
                        total_wait: t.total_wait,
                        dispatches: t.dispatches,
                    });
                    completions.push(TaskCompletion {
                        id,
                        weight: t.weight,
                        arrival: t.arrival,
                        wakeup: t.wakeup,
                        first_run,
                        completion: t.completion,
                        exec: t.exec,
                        max_wait: t.max_wait,
                    });
                }
                Status::Blocked => pending.push(pending_task(PendingState::Blocked, t.exec, t.max_wait)),
                Status::Queued => pending.push(pending_task(
                    PendingState::Queued,
                    t.exec,
                    t.max_wait.max(now - t.enqueue_time),
                )),
                Status::Running(_) => pending.push(pending_task(
                    PendingState::Running,
                    t.exec + (now - t.run_start),
                    t.max_wait,
                )),
            }
        }
        for i in short_work {
            self.violation(ViolationKind::TaskConservation, Some(i), "executed work differs from total work".into());
        }
        if trace.len() + pending.len() != self.arrivals as usize {
            let detail = format!(
                "{} arrivals but {} completed and {} pending",
                self.arrivals,
                trace.len(),
                pending.len()
            );
            self.violation(ViolationKind::TaskConservation, None, detail);
        }

        let end_time = if stopped_at_horizon {
            now
        } else {
            trace.iter().map(|t| t.completion).max().unwrap_or(now)
        };
        let start = self
            .tasks
            .iter()
            .filter(|t| t.status != Status::NotArrived)
            .map(|t| t.arrival)
            .min()
            .unwrap_or(0);
        let metrics = if completions.is_empty() {
            None
        } else {
            compute_metrics(&completions, self.workload.core_count, (end_time - start).max(1)).ok()
        };
        SimResult {
            workload: self.workload.name.clone(),
            policy: self.policy_name,
            complete: !stopped_at_horizon && pending.is_empty(),
            metrics,
            trace,
            pending,
            violations: self.violations,
            arrivals: self.arrivals,
            event_count: self.event_count,
            end_time,
        }
    }
}

fn vr_delta(ran: Micros, weight: u32) -> f64 {
    ran as f64 * NICE_0_WEIGHT as f64 / weight as f64
}
