//! Discrete-event simulation kernel.
//!
//! The kernel owns the event queue and every agent. Agents never hold
//! references to each other; they interact only through the services on
//! [`AgentContext`], which stamp outbound messages with the sender's clock,
//! computation delay and network latency.
//!
//! Timing rules:
//!
//! * each agent has its own clock; after every activity it advances by the
//!   agent's computation delay,
//! * a message leaves at `agent_time + computation_delay + extra_delay` and
//!   arrives after the pair's latency plus a jitter draw,
//! * an event dequeued while its target's clock is ahead of it is put back at
//!   the target's clock (with a fresh sequence number),
//! * events with equal delivery times run in enqueue order.

use std::any::Any;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{AgentError, KernelError, ServiceError};
use crate::latency::LatencyModel;
use crate::message::{Body, Message};
use crate::rng::{agent_seed, rng_from_seed, SimRng};
use crate::time::SimTime;

/// Dense numeric identity of an agent; the only handle agents ever see of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One line of an agent's archived log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp_ns: i64,
    pub event_type: String,
    pub payload: serde_json::Value,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }

    pub fn parse(line: &str) -> Result<LogRecord, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Participant in a simulation. All lifecycle hooks are invoked exactly once per run.
pub trait Agent: Any {
    fn name(&self) -> &str;

    /// Tag used by [`AgentContext::find_agent_by_type`].
    fn agent_type(&self) -> &str;

    fn kernel_initializing(&mut self, _ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        Ok(())
    }

    /// Default: request a wakeup at the start time.
    fn kernel_starting(&mut self, ctx: &mut AgentContext<'_>, start_time: SimTime) -> Result<(), AgentError> {
        ctx.set_wakeup(start_time)?;
        Ok(())
    }

    fn kernel_stopping(&mut self, _ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        Ok(())
    }

    /// Default: hand the agent's log, if non-empty, to the kernel for archival.
    fn kernel_terminating(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        ctx.archive_log()?;
        Ok(())
    }

    fn wakeup(&mut self, _ctx: &mut AgentContext<'_>, _now: SimTime) -> Result<(), AgentError> {
        Ok(())
    }

    fn receive_message(&mut self, _ctx: &mut AgentContext<'_>, _now: SimTime, _msg: Message) -> Result<(), AgentError> {
        Ok(())
    }

    fn as_any(&self) -> &dyn Any;
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Payload {
    Message(Message),
    Wakeup,
}

#[derive(Debug)]
struct QueuedEvent {
    delivery: SimTime,
    seq: u64,
    target: AgentId,
    payload: Payload,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.delivery == other.delivery && self.seq == other.seq
    }
}

impl Eq for QueuedEvent {}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedEvent {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.delivery, other.seq).cmp(&(self.delivery, self.seq))
    }
}

/// A delivered event, recorded when tracing is enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Delivery {
    pub time: SimTime,
    pub seq: u64,
    pub target: AgentId,
    /// `None` for wakeup calls.
    pub sent_time: Option<SimTime>,
    pub kind: &'static str,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct RunStats {
    pub start_ns: i64,
    pub stop_ns: i64,
    /// Delivery time of the last processed event.
    pub gvt_ns: i64,
    pub events_delivered: u64,
    pub deferrals: u64,
    pub messages_sent: u64,
    pub wakeups_set: u64,
    /// Events left in the queue past the stop time.
    pub abandoned: u64,
}

#[derive(Debug, Default)]
pub struct RunResult {
    /// Archived files by name, in name order.
    pub files: BTreeMap<String, String>,
    pub stats: RunStats,
    pub trace: Vec<Delivery>,
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub start: SimTime,
    pub stop: SimTime,
    pub master_seed: u64,
    pub default_computation_delay: i64,
    /// When set, archived files are also written here as they are produced.
    pub log_dir: Option<PathBuf>,
    pub trace: bool,
}

impl KernelConfig {
    pub fn new(start: SimTime, stop: SimTime, master_seed: u64) -> Self {
        KernelConfig { start, stop, master_seed, default_computation_delay: 0, log_dir: None, trace: false }
    }
}

/// Kernel state reachable from agent callbacks.
pub struct KernelCore {
    names: Vec<String>,
    types: Vec<String>,
    agent_times: Vec<SimTime>,
    computation_delay: Vec<i64>,
    rngs: Vec<SimRng>,
    logs: Vec<Vec<LogRecord>>,
    queue: BinaryHeap<QueuedEvent>,
    next_seq: u64,
    current_time: SimTime,
    latency: LatencyModel,
    files: BTreeMap<String, String>,
    log_dir: Option<PathBuf>,
    stats: RunStats,
    trace: Option<Vec<Delivery>>,
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

impl KernelCore {
    fn enqueue(&mut self, delivery: SimTime, target: AgentId, payload: Payload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(QueuedEvent { delivery, seq, target, payload });
    }

    fn file_stem(&self, agent: AgentId) -> String {
        format!("{:04}_{}", agent.0, sanitize(&self.names[agent.index()]))
    }

    fn store_file(&mut self, name: String, content: String) -> Result<(), ServiceError> {
        if let Some(dir) = &self.log_dir {
            let path = dir.join(&name);
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(&path, &content))
                .map_err(|e| ServiceError::Archive { path: path.display().to_string(), reason: e.to_string() })?;
        }
        self.files.insert(name, content);
        Ok(())
    }

    /// Archives `records` for `sender`, sorted by timestamp, one file per agent.
    /// An empty record set writes nothing.
    pub fn write_log(&mut self, sender: AgentId, records: &[LogRecord]) -> Result<(), ServiceError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut sorted: Vec<&LogRecord> = records.iter().collect();
        sorted.sort_by_key(|r| r.timestamp_ns);
        let mut text = String::new();
        for r in sorted {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        let name = format!("{}.log", self.file_stem(sender));
        self.store_file(name, text)
    }

    fn find_agent_by_type(&self, agent_type: &str) -> Option<AgentId> {
        self.types.iter().position(|t| t == agent_type).map(|i| AgentId(i as u32))
    }
}

/// Services available to an agent while the kernel is calling into it.
pub struct AgentContext<'a> {
    core: &'a mut KernelCore,
    me: AgentId,
}

impl<'a> AgentContext<'a> {
    pub fn id(&self) -> AgentId {
        self.me
    }

    pub fn name(&self) -> &str {
        &self.core.names[self.me.index()]
    }

    /// This agent's own clock.
    pub fn now(&self) -> SimTime {
        self.core.agent_times[self.me.index()]
    }

    pub fn agent_count(&self) -> usize {
        self.core.names.len()
    }

    /// The agent's private PRNG; all of its randomness must come from here.
    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.core.rngs[self.me.index()]
    }

    pub fn computation_delay(&self) -> i64 {
        self.core.computation_delay[self.me.index()]
    }

    /// Applies from the current activity onward.
    pub fn set_computation_delay(&mut self, nanos: i64) -> Result<(), ServiceError> {
        if nanos < 0 {
            return Err(ServiceError::NegativeComputationDelay(nanos));
        }
        self.core.computation_delay[self.me.index()] = nanos;
        Ok(())
    }

    pub fn send(&mut self, recipient: AgentId, body: Body) -> Result<Message, ServiceError> {
        self.send_with_delay(recipient, body, 0)
    }

    /// Sends `body` to `recipient`. Returns the stamped message as enqueued.
    pub fn send_with_delay(
        &mut self,
        recipient: AgentId,
        body: Body,
        extra_delay: i64,
    ) -> Result<Message, ServiceError> {
        if extra_delay < 0 {
            return Err(ServiceError::NegativeDelay(extra_delay));
        }
        if recipient.index() >= self.core.names.len() {
            return Err(ServiceError::UnknownRecipient(recipient));
        }
        let sent_time = self.now().checked_add(self.computation_delay())?.checked_add(extra_delay)?;
        let transit = self.core.latency.transit(self.me, recipient).ok_or(ServiceError::UnknownRecipient(recipient))?;
        let delivery_time = sent_time.checked_add(transit)?;
        let msg = Message { sender: self.me, recipient, sent_time, delivery_time, body };
        self.core.stats.messages_sent += 1;
        self.core.enqueue(delivery_time, recipient, Payload::Message(msg.clone()));
        Ok(msg)
    }

    /// Schedules a wakeup for this agent. No latency applies.
    pub fn set_wakeup(&mut self, requested: SimTime) -> Result<(), ServiceError> {
        let current = self.now();
        if requested < current {
            return Err(ServiceError::WakeupInPast { requested: requested.0, current: current.0 });
        }
        self.core.stats.wakeups_set += 1;
        self.core.enqueue(requested, self.me, Payload::Wakeup);
        Ok(())
    }

    /// Lowest id among agents of the given type.
    pub fn find_agent_by_type(&self, agent_type: &str) -> Option<AgentId> {
        self.core.find_agent_by_type(agent_type)
    }

    /// Appends to this agent's log, stamped with its current time.
    pub fn log_event(&mut self, event_type: impl Into<String>, payload: serde_json::Value) {
        let record = LogRecord { timestamp_ns: self.now().0, event_type: event_type.into(), payload };
        self.core.logs[self.me.index()].push(record);
    }

    pub fn log_len(&self) -> usize {
        self.core.logs[self.me.index()].len()
    }

    /// Passes the buffered log to the kernel for archival (no file when empty).
    pub fn archive_log(&mut self) -> Result<(), ServiceError> {
        let records = std::mem::take(&mut self.core.logs[self.me.index()]);
        self.core.write_log(self.me, &records)
    }

    /// Archives an additional named file for this agent, `<id>_<name>.<suffix>`.
    pub fn archive_file(&mut self, suffix: &str, content: String) -> Result<(), ServiceError> {
        let name = format!("{}.{}", self.core.file_stem(self.me), suffix);
        self.core.store_file(name, content)
    }
}

pub struct Kernel {
    agents: Vec<Box<dyn Agent>>,
    core: KernelCore,
    config: KernelConfig,
}

impl Kernel {
    pub fn new(agents: Vec<Box<dyn Agent>>, latency: LatencyModel, config: KernelConfig) -> Result<Self, KernelError> {
        if agents.is_empty() {
            return Err(KernelError::NoAgents);
        }
        if config.start >= config.stop {
            return Err(KernelError::BadWindow { start: config.start.0, stop: config.stop.0 });
        }
        if latency.agents() != agents.len() {
            return Err(KernelError::LatencyShape { model: latency.agents(), agents: agents.len() });
        }
        let n = agents.len();
        let core = KernelCore {
            names: agents.iter().map(|a| a.name().to_string()).collect(),
            types: agents.iter().map(|a| a.agent_type().to_string()).collect(),
            agent_times: vec![config.start; n],
            computation_delay: vec![config.default_computation_delay.max(0); n],
            rngs: (0..n).map(|i| rng_from_seed(agent_seed(config.master_seed, AgentId(i as u32)))).collect(),
            logs: vec![Vec::new(); n],
            queue: BinaryHeap::new(),
            next_seq: 0,
            current_time: config.start,
            latency,
            files: BTreeMap::new(),
            log_dir: config.log_dir.clone(),
            stats: RunStats::default(),
            trace: config.trace.then(Vec::new),
        };
        Ok(Kernel { agents, core, config })
    }

    pub fn set_computation_delay(&mut self, agent: AgentId, nanos: i64) -> Result<(), ServiceError> {
        if nanos < 0 {
            return Err(ServiceError::NegativeComputationDelay(nanos));
        }
        let slot = self.core.computation_delay.get_mut(agent.index()).ok_or(ServiceError::UnknownRecipient(agent))?;
        *slot = nanos;
        Ok(())
    }

    pub fn agents(&self) -> &[Box<dyn Agent>] {
        &self.agents
    }

    pub fn agent<T: Agent>(&self, id: AgentId) -> Option<&T> {
        self.agents.get(id.index()).and_then(|a| a.as_any().downcast_ref::<T>())
    }

    fn each_agent(
        &mut self,
        phase: &'static str,
        mut f: impl FnMut(&mut dyn Agent, &mut AgentContext<'_>) -> Result<(), AgentError>,
    ) -> Result<(), KernelError> {
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let me = AgentId(i as u32);
            let mut ctx = AgentContext { core: &mut self.core, me };
            f(agent.as_mut(), &mut ctx).map_err(|source| KernelError::AgentFailed {
                agent: me,
                name: self.core.names[i].clone(),
                phase,
                source,
            })?;
        }
        Ok(())
    }

    /// Runs every lifecycle phase and the event loop. A kernel runs once.
    pub fn run(&mut self) -> Result<RunResult, KernelError> {
        let start = self.config.start;
        let stop = self.config.stop;
        self.core.latency.reseed(self.config.master_seed);
        self.core.stats.start_ns = start.0;
        self.core.stats.stop_ns = stop.0;
        self.core.stats.gvt_ns = start.0;

        self.each_agent("kernel_initializing", |a, ctx| a.kernel_initializing(ctx))?;
        self.each_agent("kernel_starting", |a, ctx| a.kernel_starting(ctx, start))?;

        while let Some(head) = self.core.queue.peek() {
            if head.delivery > stop {
                break;
            }
            let mut event = self.core.queue.pop().expect("peeked");
            debug_assert!(event.delivery >= self.core.current_time, "GVT moved backwards");
            self.core.current_time = event.delivery;
            let target = event.target.index();

            let agent_time = self.core.agent_times[target];
            if agent_time > event.delivery {
                event.delivery = agent_time;
                if let Payload::Message(m) = &mut event.payload {
                    m.delivery_time = agent_time;
                }
                self.core.stats.deferrals += 1;
                self.core.enqueue(event.delivery, event.target, event.payload);
                continue;
            }

            self.core.agent_times[target] = event.delivery;
            self.core.stats.events_delivered += 1;
            self.core.stats.gvt_ns = event.delivery.0;
            if let Some(trace) = self.core.trace.as_mut() {
                let (sent_time, kind) = match &event.payload {
                    Payload::Message(m) => (Some(m.sent_time), m.kind().as_str()),
                    Payload::Wakeup => (None, Body::WakeupCall.kind().as_str()),
                };
                trace.push(Delivery { time: event.delivery, seq: event.seq, target: event.target, sent_time, kind });
            }

            let agent = self.agents[target].as_mut();
            let mut ctx = AgentContext { core: &mut self.core, me: event.target };
            let (phase, outcome) = match event.payload {
                Payload::Wakeup => ("wakeup", agent.wakeup(&mut ctx, event.delivery)),
                Payload::Message(m) => ("receive_message", agent.receive_message(&mut ctx, event.delivery, m)),
            };
            outcome.map_err(|source| KernelError::AgentFailed {
                agent: event.target,
                name: self.core.names[target].clone(),
                phase,
                source,
            })?;

            let delay = self.core.computation_delay[target];
            self.core.agent_times[target] = self.core.agent_times[target].checked_add(delay)?;
        }
        self.core.stats.abandoned = self.core.queue.len() as u64;
        self.core.queue.clear();

        self.each_agent("kernel_stopping", |a, ctx| a.kernel_stopping(ctx))?;
        self.each_agent("kernel_terminating", |a, ctx| a.kernel_terminating(ctx))?;

        Ok(RunResult {
            files: std::mem::take(&mut self.core.files),
            stats: self.core.stats.clone(),
            trace: self.core.trace.take().unwrap_or_default(),
        })
    }
}
