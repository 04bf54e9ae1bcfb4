//! Inference request traces and their expansion into CPU tasks.
//!
//! A request is characterized by its arrival time and input/output token
//! counts. Each request expands into the eleven CPU task types of the
//! serving stack: five submission-side control tasks, one scheduling
//! iteration per output token, and five completion-side control tasks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Trace CSV header without the optional machine column.
pub const TRACE_HEADER: &str = "arrival_s,input_tokens,output_tokens";
/// Trace CSV header with pre-routed machine assignments.
pub const TRACE_HEADER_MACHINE: &str = "arrival_s,input_tokens,output_tokens,machine";

/// One inference request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub arrival: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Pre-routed machine, or `None` for round-robin routing.
    pub machine: Option<usize>,
}

/// The eleven CPU inference task types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    FinishFlow,
    FinishRequest,
    FinishTask,
    Submit,
    SubmitChain,
    SubmitFlow,
    SubmitTask,
    AllocMemory,
    FreeMemory,
    StartIteration,
    FlowCompletion,
}

impl TaskType {
    pub const ALL: [TaskType; 11] = [
        TaskType::FinishFlow,
        TaskType::FinishRequest,
        TaskType::FinishTask,
        TaskType::Submit,
        TaskType::SubmitChain,
        TaskType::SubmitFlow,
        TaskType::SubmitTask,
        TaskType::AllocMemory,
        TaskType::FreeMemory,
        TaskType::StartIteration,
        TaskType::FlowCompletion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskType::FinishFlow => "finish_flow",
            TaskType::FinishRequest => "finish_request",
            TaskType::FinishTask => "finish_task",
            TaskType::Submit => "submit",
            TaskType::SubmitChain => "submit_chain",
            TaskType::SubmitFlow => "submit_flow",
            TaskType::SubmitTask => "submit_task",
            TaskType::AllocMemory => "alloc_memory",
            TaskType::FreeMemory => "free_memory",
            TaskType::StartIteration => "start_iteration",
            TaskType::FlowCompletion => "flow_completion",
        }
    }
}

/// One CPU task instance at nominal frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTask {
    pub task_type: TaskType,
    pub start: f64,
    pub nominal_duration: f64,
    pub request_id: u64,
}

/// Which token count scales a task's duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    Input,
    Output,
    None,
}

/// Per-type duration coefficients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DurationCoeffs {
    pub base: f64,
    pub per_token: f64,
    pub token_source: TokenSource,
}

/// Duration model over all eleven task types plus the iteration spacing.
///
/// The upstream serving stack never publishes per-task CPU costs; these
/// coefficients are an explicit stand-in and fully configurable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDurationModel {
    pub control_base: f64,
    pub iteration_base: f64,
    pub submit_per_input_token: f64,
    /// Spacing between consecutive start_iteration tasks of one request.
    pub iteration_interval: f64,
}

impl Default for TaskDurationModel {
    fn default() -> Self {
        TaskDurationModel {
            control_base: 0.002,
            iteration_base: 0.001,
            submit_per_input_token: 0.00001,
            iteration_interval: 0.025,
        }
    }
}

impl TaskDurationModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("control_base", self.control_base),
            ("iteration_base", self.iteration_base),
            ("submit_per_input_token", self.submit_per_input_token),
            ("iteration_interval", self.iteration_interval),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(SimError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.control_base + self.submit_per_input_token <= 0.0 || self.iteration_base <= 0.0 {
            return Err(SimError::Config("task durations must be positive".into()));
        }
        Ok(())
    }

    pub fn coeffs(&self, task_type: TaskType) -> DurationCoeffs {
        match task_type {
            TaskType::StartIteration => DurationCoeffs {
                base: self.iteration_base,
                per_token: 0.0,
                token_source: TokenSource::None,
            },
            TaskType::Submit => DurationCoeffs {
                base: self.control_base,
                per_token: self.submit_per_input_token,
                token_source: TokenSource::Input,
            },
            _ => DurationCoeffs {
                base: self.control_base,
                per_token: 0.0,
                token_source: TokenSource::None,
            },
        }
    }

    pub fn duration(&self, task_type: TaskType, req: &Request) -> f64 {
        let c = self.coeffs(task_type);
        let tokens = match c.token_source {
            TokenSource::Input => req.input_tokens as f64,
            TokenSource::Output => req.output_tokens as f64,
            TokenSource::None => 0.0,
        };
        c.base + c.per_token * tokens
    }
}

/// Parse a request trace CSV. Rows need not be sorted by arrival.
pub fn parse_trace(text: &str) -> Result<Vec<Request>> {
    let mut lines = text.lines().enumerate();
    let has_machine = match lines.next() {
        Some((_, h)) if h.trim_end() == TRACE_HEADER => false,
        Some((_, h)) if h.trim_end() == TRACE_HEADER_MACHINE => true,
        Some((_, h)) => {
            return Err(SimError::Parse {
                line: 1,
                message: format!("expected header '{TRACE_HEADER}[,machine]', got '{h}'"),
            })
        }
        None => return Ok(Vec::new()),
    };
    let mut requests = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let expected = if has_machine { 4 } else { 3 };
        if parts.len() != expected {
            return Err(SimError::Parse {
                line: line_no,
                message: format!("expected {expected} fields, got {}", parts.len()),
            });
        }
        let arrival: f64 = parts[0].trim().parse().map_err(|_| SimError::Parse {
            line: line_no,
            message: format!("bad arrival_s '{}'", parts[0]),
        })?;
        let input_tokens: u64 = parts[1].trim().parse().map_err(|_| SimError::Parse {
            line: line_no,
            message: format!("bad input_tokens '{}'", parts[1]),
        })?;
        let output_tokens: u64 = parts[2].trim().parse().map_err(|_| SimError::Parse {
            line: line_no,
            message: format!("bad output_tokens '{}'", parts[2]),
        })?;
        if arrival < 0.0 {
            return Err(SimError::Parse { line: line_no, message: "arrival_s < 0".into() });
        }
        if input_tokens < 1 || output_tokens < 1 {
            return Err(SimError::Parse {
                line: line_no,
                message: "token counts must be >= 1".into(),
            });
        }
        let machine = if has_machine {
            Some(parts[3].trim().parse().map_err(|_| SimError::Parse {
                line: line_no,
                message: format!("bad machine '{}'", parts[3]),
            })?)
        } else {
            None
        };
        requests.push(Request { arrival, input_tokens, output_tokens, machine });
    }
    Ok(requests)
}

/// Write requests back to the trace CSV format.
pub fn write_trace(requests: &[Request]) -> String {
    let has_machine = requests.iter().any(|r| r.machine.is_some());
    let mut out = String::new();
    out.push_str(if has_machine { TRACE_HEADER_MACHINE } else { TRACE_HEADER });
    out.push('\n');
    for r in requests {
        if has_machine {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.arrival,
                r.input_tokens,
                r.output_tokens,
                r.machine.unwrap_or(0)
            ));
        } else {
            out.push_str(&format!("{},{},{}\n", r.arrival, r.input_tokens, r.output_tokens));
        }
    }
    out
}

/// Expand one request into its CPU tasks.
///
/// Five submission-side control tasks chain sequentially from the arrival,
/// then one start_iteration per output token spaced by the iteration
/// interval, then five completion-side control tasks chained after the last
/// iteration slot. Task count is always `10 + output_tokens`.
pub fn expand_request(
    req: &Request,
    model: &TaskDurationModel,
    request_id: u64,
) -> Result<Vec<InferenceTask>> {
    model.validate()?;
    let mut tasks = Vec::with_capacity(10 + req.output_tokens as usize);
    let mut t = req.arrival;
    for ty in [
        TaskType::Submit,
        TaskType::SubmitChain,
        TaskType::SubmitFlow,
        TaskType::SubmitTask,
        TaskType::AllocMemory,
    ] {
        let d = model.duration(ty, req);
        tasks.push(InferenceTask { task_type: ty, start: t, nominal_duration: d, request_id });
        t += d;
    }
    for i in 0..req.output_tokens {
        tasks.push(InferenceTask {
            task_type: TaskType::StartIteration,
            start: t + i as f64 * model.iteration_interval,
            nominal_duration: model.duration(TaskType::StartIteration, req),
            request_id,
        });
    }
    let mut t = t + req.output_tokens as f64 * model.iteration_interval;
    for ty in [
        TaskType::FlowCompletion,
        TaskType::FinishTask,
        TaskType::FinishFlow,
        TaskType::FinishRequest,
        TaskType::FreeMemory,
    ] {
        let d = model.duration(ty, req);
        tasks.push(InferenceTask { task_type: ty, start: t, nominal_duration: d, request_id });
        t += d;
    }
    Ok(tasks)
}

/// Token-count distribution of a synthetic trace (lognormal, clipped).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TokenDist {
    /// Mean of the underlying normal (log scale).
    pub mu: f64,
    /// Std of the underlying normal (log scale).
    pub sigma: f64,
    pub max: u64,
}

impl TokenDist {
    fn sample<R: rand::Rng>(&self, rng: &mut R) -> u64 {
        let v = LogNormal::new(self.mu, self.sigma).unwrap().sample(rng);
        (v.round() as i64).clamp(1, self.max as i64) as u64
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TokenDists {
    pub input: TokenDist,
    pub output: TokenDist,
}

impl Default for TokenDists {
    fn default() -> Self {
        TokenDists {
            input: TokenDist { mu: 128f64.ln(), sigma: 0.8, max: 4096 },
            output: TokenDist { mu: 32f64.ln(), sigma: 0.8, max: 1024 },
        }
    }
}

/// Poisson-arrival synthetic trace. Deterministic per seed.
pub fn generate_synthetic_trace(
    rate: f64,
    duration: f64,
    dists: &TokenDists,
    seed: u64,
) -> Result<Vec<Request>> {
    if rate <= 0.0 {
        return Err(SimError::InvalidArgument(format!("rate must be > 0, got {rate}")));
    }
    if duration < 0.0 {
        return Err(SimError::InvalidArgument(format!("duration must be >= 0, got {duration}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(rate).map_err(|e| SimError::InvalidArgument(e.to_string()))?;
    let mut requests = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp.sample(&mut rng);
        if t >= duration {
            break;
        }
        requests.push(Request {
            arrival: t,
            input_tokens: dists.input.sample(&mut rng),
            output_tokens: dists.output.sample(&mut rng),
            machine: None,
        });
    }
    Ok(requests)
}
