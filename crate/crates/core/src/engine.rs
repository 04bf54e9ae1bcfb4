//! Discrete-event simulation core.
//!
//! Advances a cluster of machines through task arrivals, completions, and
//! periodic idling passes. Core aging is applied lazily: each core's
//! threshold shift is brought up to date whenever its idle/task state
//! changes and at every idling pass, using the ADF of the state it was in
//! over the elapsed interval.
//!
//! When a machine has more runnable tasks than active cores, housed tasks
//! run under a processor-sharing stretch (`active / total_tasks`) and the
//! excess waits in a FIFO queue for the next freed or woken core.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aging::{adf, advance_vth, AgingParams, CoreAging, CoreState};
use crate::baselines::{least_aged_select_core, linux_select_core, parse_weights_csv, CoreWorkLedger};
use crate::config::{ExperimentConfig, Policy, TraceSource};
use crate::error::{Result, SimError};
use crate::metrics::MetricSample;
use crate::policy::{
    plan_idling, record_idle_transition, select_core, IdleEvent, IdleState, ManagedCore,
};
use crate::variation::{assign_core_sections, initial_core_frequency, sample_variation_grid};
use crate::workload::{expand_request, generate_synthetic_trace, parse_trace, InferenceTask, Request};

/// A core whose frequency falls to this fraction of its f0 is retired: it
/// finishes its current task at the floor speed and then deep-idles forever.
const FREQ_FLOOR_FRAC: f64 = 0.01;

const GRID_RESAMPLE_ATTEMPTS: u64 = 16;

/// splitmix64 finalizer; decorrelates the per-machine seed streams.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    /// Carries the generation so stale completions are dropped after any
    /// reschedule (rates change at every event on the machine).
    Completion { task: usize, gen: u64 },
    IdlingPass,
    Arrival { task: usize },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Completion { .. } => 0,
            EventKind::IdlingPass => 1,
            EventKind::Arrival { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    t: f64,
    machine: usize,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (f64, usize, u8, u64) {
        (self.t, self.machine, self.kind.rank(), self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest event.
        let (ta, ma, ra, sa) = self.key();
        let (tb, mb, rb, sb) = other.key();
        tb.total_cmp(&ta)
            .then(mb.cmp(&ma))
            .then(rb.cmp(&ra))
            .then(sb.cmp(&sa))
    }
}

/// One event-log record, exportable as CSV.
#[derive(Debug, Clone)]
pub struct EventRecord {
    pub t: f64,
    pub machine: usize,
    pub kind: &'static str,
    pub task: Option<usize>,
    pub core: Option<usize>,
}

/// One selective-idling decision, for the debug CSV.
#[derive(Debug, Clone)]
pub struct IdlingRecord {
    pub t: f64,
    pub machine: usize,
    pub n: usize,
    pub c_slp: usize,
    pub total_tasks: usize,
    pub e_norm: f64,
    pub reaction: f64,
    pub e_corr: i64,
}

/// Final state of one core after a run.
#[derive(Debug, Clone)]
pub struct FinalCore {
    pub core_id: usize,
    pub f0: f64,
    pub vth_shift: f64,
    /// Eq.-1 frequency at the end of the run, clamped at 0 for failed cores.
    pub frequency: f64,
    pub idle_state: IdleState,
    pub failed: bool,
    /// Total aging time applied to this core (already time-scaled), s.
    pub applied_tau: f64,
}

/// Everything a single simulation cell produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub samples: Vec<MetricSample>,
    /// Per machine, per core.
    pub machines: Vec<Vec<FinalCore>>,
    pub events: Vec<EventRecord>,
    pub idling: Vec<IdlingRecord>,
    pub end_time: f64,
    pub tasks_total: usize,
    pub tasks_completed: usize,
}

struct Task {
    machine: usize,
    start: f64,
    nominal: f64,
    /// Remaining work in nominal-frequency seconds.
    remaining: f64,
    core: Option<usize>,
    gen: u64,
    done: bool,
}

struct Machine {
    cores: Vec<ManagedCore>,
    aging: Vec<CoreAging>,
    failed: Vec<bool>,
    applied_tau: Vec<f64>,
    ledger: CoreWorkLedger,
    queue: VecDeque<usize>,
    last_progress: f64,
    rng: ChaCha8Rng,
}

impl Machine {
    fn active_cores(&self) -> usize {
        self.cores.iter().filter(|c| c.idle_state == IdleState::Active).count()
    }

    fn housed_tasks(&self) -> usize {
        self.cores.iter().filter(|c| c.assigned_task.is_some()).count()
    }

    fn running_tasks(&self) -> usize {
        self.housed_tasks() + self.queue.len()
    }

    fn idle_cores(&self) -> usize {
        self.cores.len() - self.active_cores()
    }
}

struct Sim<'a> {
    cfg: &'a ExperimentConfig,
    policy: Policy,
    params: AgingParams,
    f_nominal: f64,
    scale: f64,
    weights: Option<Vec<f64>>,
    machines: Vec<Machine>,
    tasks: Vec<Task>,
    heap: BinaryHeap<Event>,
    seq: u64,
    outstanding: usize,
    completed: usize,
    /// Idling passes keep firing at least until this time.
    end_floor: f64,
    samples: Vec<MetricSample>,
    events: Vec<EventRecord>,
    idling: Vec<IdlingRecord>,
}

impl<'a> Sim<'a> {
    fn push(&mut self, t: f64, machine: usize, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event { t, machine, seq: self.seq, kind });
    }

    fn log(&mut self, t: f64, machine: usize, kind: &'static str, task: Option<usize>, core: Option<usize>) {
        if self.cfg.record_event_log {
            self.events.push(EventRecord { t, machine, kind, task, core });
        }
    }

    fn sample(&mut self, machine: usize, t: f64) {
        let m = &self.machines[machine];
        self.samples.push(MetricSample {
            t,
            machine,
            n_total: m.cores.len(),
            n_idle: m.idle_cores(),
            n_running: m.running_tasks(),
        });
    }

    fn core_state(&self, machine: usize, core: usize) -> CoreState {
        let c = &self.machines[machine].cores[core];
        if c.idle_state == IdleState::DeepIdle {
            CoreState::DeepIdle
        } else if c.assigned_task.is_some() {
            CoreState::ActiveAllocated
        } else {
            CoreState::ActiveUnallocated
        }
    }

    /// Lazy aging update: advance the core's shift over the interval it spent
    /// in its current state, then move `last_update` to `until`.
    fn flush_core(&mut self, machine: usize, core: usize, until: f64) -> Result<()> {
        let state = self.core_state(machine, core);
        let m = &mut self.machines[machine];
        let dt = until - m.aging[core].last_update;
        if dt < -1e-9 {
            return Err(SimError::Internal(format!(
                "time regression on machine {machine} core {core}: {} -> {until}",
                m.aging[core].last_update
            )));
        }
        let tau = dt.max(0.0) * self.scale;
        let a = adf(state, &self.params);
        m.aging[core].vth_shift = advance_vth(m.aging[core].vth_shift, a, tau, self.params.n_exp)?;
        m.aging[core].last_update = until;
        m.applied_tau[core] += tau;
        let f0 = m.aging[core].f0;
        let f = f0 * (1.0 - m.aging[core].vth_shift / self.params.voltage_headroom());
        if f <= FREQ_FLOOR_FRAC * f0 {
            m.failed[core] = true;
        }
        Ok(())
    }

    /// Core speed relative to nominal, floored for failed cores.
    fn core_speed(&self, machine: usize, core: usize) -> f64 {
        let ca = &self.machines[machine].aging[core];
        let f = ca.f0 * (1.0 - ca.vth_shift / self.params.voltage_headroom());
        f.max(FREQ_FLOOR_FRAC * ca.f0) / self.f_nominal
    }

    /// Processor-sharing factor: 1 unless runnable tasks exceed active cores.
    fn ps_factor(&self, machine: usize) -> f64 {
        let m = &self.machines[machine];
        let total = m.running_tasks();
        let active = m.active_cores();
        if total > active && total > 0 {
            active as f64 / total as f64
        } else {
            1.0
        }
    }

    /// Drain elapsed work for every housed task on the machine.
    fn advance_progress(&mut self, machine: usize, now: f64) {
        let dt = now - self.machines[machine].last_progress;
        if dt <= 0.0 {
            self.machines[machine].last_progress = now;
            return;
        }
        let ps = self.ps_factor(machine);
        let housed: Vec<(usize, usize)> = self.machines[machine]
            .cores
            .iter()
            .filter_map(|c| c.assigned_task.map(|t| (t as usize, c.core_id)))
            .collect();
        for (task, core) in housed {
            let rate = self.core_speed(machine, core) * ps;
            let rem = &mut self.tasks[task].remaining;
            *rem = (*rem - dt * rate).max(0.0);
        }
        self.machines[machine].last_progress = now;
    }

    /// Re-issue completion events for every housed task at current rates.
    fn reschedule(&mut self, machine: usize, now: f64) {
        let ps = self.ps_factor(machine);
        let housed: Vec<(usize, usize)> = self.machines[machine]
            .cores
            .iter()
            .filter_map(|c| c.assigned_task.map(|t| (t as usize, c.core_id)))
            .collect();
        for (task, core) in housed {
            let rate = self.core_speed(machine, core) * ps;
            self.tasks[task].gen += 1;
            let gen = self.tasks[task].gen;
            let t_done = now + self.tasks[task].remaining.max(0.0) / rate;
            self.push(t_done, machine, EventKind::Completion { task, gen });
        }
    }

    fn assign(&mut self, machine: usize, core: usize, task: usize, now: f64) -> Result<()> {
        self.flush_core(machine, core, now)?;
        let c = &mut self.machines[machine].cores[core];
        record_idle_transition(c, IdleEvent::TaskAssigned, now)?;
        c.assigned_task = Some(task as u64);
        self.tasks[task].core = Some(core);
        self.log(now, machine, "assign", Some(task), Some(core));
        Ok(())
    }

    fn sleep_core(&mut self, machine: usize, core: usize, now: f64) {
        let c = &mut self.machines[machine].cores[core];
        // Close the open idle interval into the history before parking.
        if let Some(open) = c.idle_open_since.take() {
            if c.idle_history.len() == crate::policy::IDLE_HISTORY_LEN {
                c.idle_history.pop_front();
            }
            c.idle_history.push_back((now - open).max(0.0));
        }
        c.idle_state = IdleState::DeepIdle;
        self.log(now, machine, "sleep", None, Some(core));
    }

    fn wake_core(&mut self, machine: usize, core: usize, now: f64) {
        let c = &mut self.machines[machine].cores[core];
        c.idle_state = IdleState::Active;
        c.idle_open_since = Some(now);
        self.log(now, machine, "wake", None, Some(core));
    }

    /// Pick a free core for a new or queued task under the run's policy.
    fn pick_core(&mut self, machine: usize, now: f64) -> Option<usize> {
        let m = &mut self.machines[machine];
        match self.policy {
            Policy::Proposed => select_core(&m.cores, now),
            Policy::Linux => linux_select_core(&m.cores, self.weights.as_deref(), &mut m.rng),
            Policy::LeastAged => least_aged_select_core(&m.cores, &m.ledger),
        }
    }

    fn drain_queue(&mut self, machine: usize, now: f64) -> Result<()> {
        while !self.machines[machine].queue.is_empty() {
            match self.pick_core(machine, now) {
                Some(core) => {
                    let task = self.machines[machine].queue.pop_front().unwrap();
                    self.assign(machine, core, task, now)?;
                }
                None => break,
            }
        }
        Ok(())
    }

    fn handle_arrival(&mut self, task: usize, t: f64) -> Result<()> {
        let machine = self.tasks[task].machine;
        self.advance_progress(machine, t);
        self.log(t, machine, "arrival", Some(task), None);
        match self.pick_core(machine, t) {
            Some(core) => self.assign(machine, core, task, t)?,
            None => self.machines[machine].queue.push_back(task),
        }
        self.reschedule(machine, t);
        self.sample(machine, t);
        Ok(())
    }

    fn handle_completion(&mut self, task: usize, gen: u64, t: f64) -> Result<()> {
        if self.tasks[task].done || self.tasks[task].gen != gen {
            return Ok(()); // stale: superseded by a later reschedule
        }
        let machine = self.tasks[task].machine;
        self.advance_progress(machine, t);
        if self.tasks[task].remaining > 1e-9 * self.tasks[task].nominal.max(1e-12) {
            // Defensive: rates moved underneath us; re-issue at current state.
            self.reschedule(machine, t);
            return Ok(());
        }
        let core = self.tasks[task].core.ok_or_else(|| {
            SimError::Internal(format!("completed task {task} has no core"))
        })?;
        self.tasks[task].done = true;
        self.tasks[task].core = None;
        self.outstanding -= 1;
        self.completed += 1;
        self.flush_core(machine, core, t)?;
        let nominal = self.tasks[task].nominal;
        let m = &mut self.machines[machine];
        m.ledger.add(core, nominal);
        m.cores[core].assigned_task = None;
        record_idle_transition(&mut m.cores[core], IdleEvent::BecameIdle, t)?;
        self.log(t, machine, "completion", Some(task), Some(core));
        if self.machines[machine].failed[core] {
            self.sleep_core(machine, core, t);
        } else if let Some(next) = self.machines[machine].queue.pop_front() {
            self.assign(machine, core, next, t)?;
        }
        self.reschedule(machine, t);
        self.sample(machine, t);
        Ok(())
    }

    fn handle_idling_pass(&mut self, machine: usize, t: f64) -> Result<()> {
        self.advance_progress(machine, t);
        let n = self.machines[machine].cores.len();
        for core in 0..n {
            self.flush_core(machine, core, t)?;
            let vth = self.machines[machine].aging[core].vth_shift;
            self.machines[machine].cores[core].age_estimate = vth;
        }
        // Retire failed task-free cores under any policy.
        for core in 0..n {
            let m = &self.machines[machine];
            if m.failed[core]
                && m.cores[core].assigned_task.is_none()
                && m.cores[core].idle_state == IdleState::Active
            {
                self.sleep_core(machine, core, t);
            }
        }
        // Every core dead with work still queued: the run can never finish.
        if self.machines[machine].failed.iter().all(|f| *f)
            && !self.machines[machine].queue.is_empty()
        {
            return Err(SimError::EndOfLife { core_id: 0 });
        }
        if self.policy == Policy::Proposed {
            let decision = {
                let m = &self.machines[machine];
                plan_idling(&m.cores, m.queue.len(), &self.cfg.reaction)?
            };
            for (core, new_state) in &decision.transitions {
                match new_state {
                    IdleState::DeepIdle => self.sleep_core(machine, *core, t),
                    IdleState::Active => {
                        if !self.machines[machine].failed[*core] {
                            self.wake_core(machine, *core, t);
                        }
                    }
                }
            }
            self.drain_queue(machine, t)?;
            if self.cfg.debug_idling_csv {
                self.idling.push(IdlingRecord {
                    t,
                    machine,
                    n: decision.n,
                    c_slp: decision.sleeping,
                    total_tasks: decision.total_tasks,
                    e_norm: decision.e_norm,
                    reaction: decision.reaction,
                    e_corr: decision.e_corr,
                });
            }
        }
        self.log(t, machine, "idling_pass", None, None);
        self.reschedule(machine, t);
        self.sample(machine, t);
        let next = t + self.cfg.reaction.idling_period;
        if self.outstanding > 0 || next <= self.end_floor {
            self.push(next, machine, EventKind::IdlingPass);
        }
        Ok(())
    }
}

/// Build the request trace for one matrix cell.
///
/// Synthetic traces interpret `rate` as cluster-level requests per second;
/// file traces interpret it as a replay speed-up (arrivals divided by rate).
pub fn build_trace(cfg: &ExperimentConfig, rate: f64, seed: u64) -> Result<Vec<Request>> {
    match &cfg.trace {
        TraceSource::Synthetic { duration_s, tokens } => {
            generate_synthetic_trace(rate, *duration_s, tokens, seed)
        }
        TraceSource::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                SimError::Config(format!("cannot read trace {}: {e}", path.display()))
            })?;
            let mut reqs = parse_trace(&text)?;
            for r in &mut reqs {
                r.arrival /= rate;
            }
            Ok(reqs)
        }
    }
}

/// Route requests across machines (explicit column or round-robin) and
/// expand each into its CPU tasks.
pub fn expand_trace(
    cfg: &ExperimentConfig,
    trace: &[Request],
) -> Result<Vec<(usize, InferenceTask)>> {
    let machines = cfg.cluster.machines;
    let mut out = Vec::new();
    for (idx, req) in trace.iter().enumerate() {
        let machine = match req.machine {
            Some(m) if m < machines => m,
            Some(m) => {
                return Err(SimError::Config(format!(
                    "request {idx} routed to machine {m}, cluster has {machines}"
                )))
            }
            None => idx % machines,
        };
        for task in expand_request(req, &cfg.durations, idx as u64)? {
            out.push((machine, task));
        }
    }
    Ok(out)
}

/// Run one simulation cell over pre-expanded, pre-routed tasks.
pub fn run_tasks(
    cfg: &ExperimentConfig,
    policy: Policy,
    routed: Vec<(usize, InferenceTask)>,
    seed: u64,
) -> Result<RunResult> {
    let params = cfg.effective_aging_params()?;
    let f_nominal = cfg.variation.nominal_frequency();
    let weights = match &cfg.linux_weights_csv {
        Some(path) if policy == Policy::Linux => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                SimError::Config(format!("cannot read weights {}: {e}", path.display()))
            })?;
            Some(parse_weights_csv(&text, cfg.cluster.cores_per_vm)?)
        }
        _ => None,
    };

    let mut machines = Vec::with_capacity(cfg.cluster.machines);
    for machine_id in 0..cfg.cluster.machines {
        // Grid seed is policy-independent so every policy sees the same
        // silicon in a given (seed, machine) cell.
        let base = mix_seed(seed, machine_id as u64);
        let mut f0s = None;
        for attempt in 0..GRID_RESAMPLE_ATTEMPTS {
            let mut grid = sample_variation_grid(
                cfg.variation.n_chip,
                cfg.variation.alpha,
                cfg.variation.mean_p,
                cfg.variation.sigma_p,
                mix_seed(base, attempt),
            )?;
            assign_core_sections(&mut grid, cfg.cluster.cores_per_vm);
            let drawn: Result<Vec<f64>> = (0..cfg.cluster.cores_per_vm)
                .map(|c| initial_core_frequency(&grid, c, cfg.variation.k_prime))
                .collect();
            match drawn {
                Ok(v) => {
                    f0s = Some(v);
                    break;
                }
                Err(SimError::ResampleRequired { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let f0s = f0s.ok_or_else(|| {
            SimError::InvalidParams(format!(
                "machine {machine_id}: grid kept sampling non-positive cells"
            ))
        })?;
        let n = cfg.cluster.cores_per_vm;
        machines.push(Machine {
            cores: (0..n).map(|id| ManagedCore::new(id, 0.0)).collect(),
            aging: f0s.iter().map(|&f0| CoreAging::new(f0)).collect(),
            failed: vec![false; n],
            applied_tau: vec![0.0; n],
            ledger: CoreWorkLedger::new(n),
            queue: VecDeque::new(),
            last_progress: 0.0,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(base, 0x9_0112 + policy as u64)),
        });
    }

    let tasks: Vec<Task> = routed
        .iter()
        .map(|(machine, t)| Task {
            machine: *machine,
            start: t.start,
            nominal: t.nominal_duration,
            remaining: t.nominal_duration,
            core: None,
            gen: 0,
            done: false,
        })
        .collect();

    let last_arrival = tasks.iter().map(|t| t.start).fold(0.0, f64::max);
    let end_floor = cfg.sim_duration_s.unwrap_or(0.0).max(last_arrival);

    let mut sim = Sim {
        cfg,
        policy,
        params,
        f_nominal,
        scale: cfg.aging_time_scale,
        weights,
        machines,
        tasks,
        heap: BinaryHeap::new(),
        seq: 0,
        outstanding: 0,
        completed: 0,
        end_floor,
        samples: Vec::new(),
        events: Vec::new(),
        idling: Vec::new(),
    };

    for machine in 0..cfg.cluster.machines {
        sim.sample(machine, 0.0);
        sim.push(cfg.reaction.idling_period, machine, EventKind::IdlingPass);
    }
    for task in 0..sim.tasks.len() {
        let (t, machine) = (sim.tasks[task].start, sim.tasks[task].machine);
        sim.push(t, machine, EventKind::Arrival { task });
        sim.outstanding += 1;
    }

    let tasks_total = sim.tasks.len();
    let mut last_t = 0.0;
    while let Some(ev) = sim.heap.pop() {
        if ev.t < last_t - 1e-9 {
            return Err(SimError::Internal(format!(
                "event time regression: {} after {last_t}",
                ev.t
            )));
        }
        last_t = last_t.max(ev.t);
        match ev.kind {
            EventKind::Arrival { task } => sim.handle_arrival(task, ev.t)?,
            EventKind::Completion { task, gen } => sim.handle_completion(task, gen, ev.t)?,
            EventKind::IdlingPass => sim.handle_idling_pass(ev.machine, ev.t)?,
        }
    }

    if sim.outstanding > 0 {
        return Err(SimError::Internal(format!(
            "{} tasks never completed",
            sim.outstanding
        )));
    }

    let end_time = last_t.max(end_floor);
    for machine in 0..cfg.cluster.machines {
        sim.advance_progress(machine, end_time);
        for core in 0..cfg.cluster.cores_per_vm {
            sim.flush_core(machine, core, end_time)?;
        }
        sim.sample(machine, end_time);
    }

    let headroom = sim.params.voltage_headroom();
    let machines_final = sim
        .machines
        .iter()
        .map(|m| {
            m.cores
                .iter()
                .map(|c| {
                    let id = c.core_id;
                    let f0 = m.aging[id].f0;
                    let vth = m.aging[id].vth_shift;
                    FinalCore {
                        core_id: id,
                        f0,
                        vth_shift: vth,
                        frequency: (f0 * (1.0 - vth / headroom)).max(0.0),
                        idle_state: c.idle_state,
                        failed: m.failed[id],
                        applied_tau: m.applied_tau[id],
                    }
                })
                .collect()
        })
        .collect();

    Ok(RunResult {
        samples: sim.samples,
        machines: machines_final,
        events: sim.events,
        idling: sim.idling,
        end_time,
        tasks_total,
        tasks_completed: sim.completed,
    })
}

/// Run one simulation cell from a request trace.
pub fn run_simulation(
    cfg: &ExperimentConfig,
    policy: Policy,
    trace: &[Request],
    seed: u64,
) -> Result<RunResult> {
    cfg.validate()?;
    let routed = expand_trace(cfg, trace)?;
    run_tasks(cfg, policy, routed, seed)
}
