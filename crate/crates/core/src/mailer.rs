//! Deterministic discrete-event message transport.
//!
//! A single global Logical Time Counter orders deliveries; every ordered
//! (src, dst) pair is a FIFO lane, delays are sampled from a seeded generator
//! in whole logical steps, and each receiver processes everything due at a
//! tick as one atomic batch. Non-concurrent constraint checks are accounted
//! with the carried-counter scheme: a receiver's counter becomes the maximum
//! of its own and the message-carried counter, plus the local work it then
//! performs, so concurrent work is never counted twice.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dcsp::{AgentId, Assignment, CheckCounter, Nogood};

/// Wire message kinds exchanged among agents.
#[derive(Debug, Clone)]
pub enum DcspMessage {
    /// Value announcement: one assignment of the sender's variable.
    Ok(Assignment),
    /// Inconsistency report: a set of assignments with no consistent extension.
    Nogood { sender: AgentId, nogood: Nogood },
    /// The empty nogood was derived; the problem has no solution.
    NoSolution,
    /// One-bit violation signal. Sent by a PU whose interference cap is
    /// exceeded, and by a victim CR during STDMA conflict discovery; the
    /// payload is nothing but the sender's address.
    PuViolation { from: AgentId },
}

impl DcspMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            DcspMessage::Ok(_) => MessageKind::Ok,
            DcspMessage::Nogood { .. } => MessageKind::Nogood,
            DcspMessage::NoSolution => MessageKind::NoSolution,
            DcspMessage::PuViolation { .. } => MessageKind::PuViolation,
        }
    }

    fn summary(&self) -> String {
        match self {
            DcspMessage::Ok(a) => format!("ok {}={} pri {}", a.var, a.value, a.priority.0),
            DcspMessage::Nogood { sender, nogood } => {
                format!("nogood from {} {}", sender, nogood)
            }
            DcspMessage::NoSolution => "no-solution".to_string(),
            DcspMessage::PuViolation { from } => format!("violation bit from {}", from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    Ok,
    Nogood,
    NoSolution,
    PuViolation,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MessageKind::Ok => write!(f, "ok"),
            MessageKind::Nogood => write!(f, "nogood"),
            MessageKind::NoSolution => write!(f, "no-solution"),
            MessageKind::PuViolation => write!(f, "pu-violation"),
        }
    }
}

/// An in-flight message with its logical send/delivery times and the
/// sender-side counters it carries.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub src: AgentId,
    pub dst: AgentId,
    pub payload: DcspMessage,
    pub send_ltc: u64,
    pub deliver_ltc: u64,
    /// Sender's logical step stamp at send time.
    pub carried_ltc: u64,
    /// Sender's NCCC counter at send time.
    pub carried_nccc: u64,
}

/// Message delay policy in whole logical steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DelayPolicy {
    #[default]
    None,
    Fixed {
        steps: u64,
    },
    Uniform {
        max: u64,
    },
}

impl DelayPolicy {
    pub fn uniform(max: u64) -> Self {
        if max == 0 {
            DelayPolicy::None
        } else {
            DelayPolicy::Uniform { max }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            DelayPolicy::None => 0,
            DelayPolicy::Fixed { steps } => *steps,
            DelayPolicy::Uniform { max } => rng.random_range(0..=*max),
        }
    }
}

/// Message totals by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub ok: u64,
    pub nogood: u64,
    pub no_solution: u64,
    pub pu_violation: u64,
}

impl MessageCounts {
    pub fn total(&self) -> u64 {
        self.ok + self.nogood + self.no_solution + self.pu_violation
    }
}

/// Metrics of one simulated run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub cycles: u64,
    pub messages: MessageCounts,
    /// Max over agents of their non-concurrent constraint check counter.
    pub nccc: u64,
    /// Plain per-agent constraint check totals.
    pub checks_per_agent: BTreeMap<u32, u64>,
}

/// Per-agent bookkeeping held by the mailer.
#[derive(Debug, Clone, Copy, Default)]
struct Lane {
    stamp: u64,
    nccc: u64,
    checks_total: u64,
}

/// Sink for outgoing messages produced while handling a batch.
#[derive(Debug, Default)]
pub struct Outbox {
    sends: Vec<(AgentId, DcspMessage)>,
    broadcasts: Vec<DcspMessage>,
}

impl Outbox {
    pub fn send(&mut self, dst: AgentId, msg: DcspMessage) {
        self.sends.push((dst, msg));
    }

    /// One envelope per registered recipient other than the sender.
    pub fn broadcast(&mut self, msg: DcspMessage) {
        self.broadcasts.push(msg);
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty() && self.broadcasts.is_empty()
    }
}

/// Optional line-oriented event trace: one record per delivery
/// (`ltc,src,dst,kind,payload-summary`) plus agent-side event records.
#[derive(Debug, Default)]
pub struct Trace {
    enabled: bool,
    lines: Vec<String>,
}

impl Trace {
    pub fn enabled() -> Self {
        Trace {
            enabled: true,
            lines: Vec::new(),
        }
    }

    pub fn log(&mut self, line: impl FnOnce() -> String) {
        if self.enabled {
            self.lines.push(line());
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

/// Context handed to an actor while it processes one batch.
pub struct BatchCtx<'a> {
    pub checks: &'a mut CheckCounter,
    pub out: &'a mut Outbox,
    pub trace: &'a mut Trace,
    /// Mailer logical time of the tick being processed.
    pub ltc: u64,
}

impl BatchCtx<'_> {
    pub fn event(&mut self, agent: AgentId, kind: &str, detail: impl fmt::Display) {
        let at = self.ltc;
        self.trace
            .log(|| format!("{},{},-,{},{}", at, agent, kind, detail));
    }
}

/// A message-driven agent hosted by the simulator.
pub trait Actor {
    fn id(&self) -> AgentId;

    /// Emits the initial message burst (initial value announcements).
    fn on_start(&mut self, ctx: &mut BatchCtx<'_>);

    /// Processes every envelope due at the current tick as one atomic step.
    fn on_batch(&mut self, batch: &[Envelope], ctx: &mut BatchCtx<'_>);

    /// Local consistency of the agent's current assignment with its view.
    fn is_consistent(&self) -> bool;

    /// True once the agent has emitted or received a no-solution broadcast.
    fn is_halted(&self) -> bool {
        false
    }
}

/// Result of advancing the simulation by one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleStatus {
    /// Messages remain in flight.
    Active,
    /// All queues empty and every agent locally consistent.
    Quiescent,
    /// A no-solution broadcast was delivered this tick.
    NoSolution,
    /// All queues empty but some agent is inconsistent: a livelock tripwire,
    /// never expected from a correct solver.
    Stalled,
}

/// Terminal outcome of a run driven to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunOutcome {
    Quiescent,
    NoSolution,
    /// The configured cycle cap was hit; treated as a failure at desk scale.
    CapHit,
    Stalled,
}

/// The deterministic mailer: global logical clock, per-pair FIFO queues and
/// run metrics.
pub struct Mailer {
    ltc: u64,
    queues: BTreeMap<(AgentId, AgentId), VecDeque<Envelope>>,
    rng: ChaCha8Rng,
    delay: DelayPolicy,
    lanes: BTreeMap<AgentId, Lane>,
    counts: MessageCounts,
    cycles: u64,
    pub trace: Trace,
}

impl Mailer {
    pub fn new(seed: u64, delay: DelayPolicy) -> Self {
        Mailer {
            ltc: 0,
            queues: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            delay,
            lanes: BTreeMap::new(),
            counts: MessageCounts::default(),
            cycles: 0,
            trace: Trace::default(),
        }
    }

    pub fn ltc(&self) -> u64 {
        self.ltc
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn message_counts(&self) -> MessageCounts {
        self.counts
    }

    pub fn queues_empty(&self) -> bool {
        self.queues.values().all(|q| q.is_empty())
    }

    /// Enqueues one message.
    ///
    /// The delivery time is `max(ltc + 1 + delay, last enqueued delivery for
    /// the pair)`, which preserves per-pair FIFO order under any delay policy.
    pub fn send(&mut self, src: AgentId, dst: AgentId, payload: DcspMessage) {
        assert_ne!(src, dst, "an agent never mails itself");
        match payload.kind() {
            MessageKind::Ok => self.counts.ok += 1,
            MessageKind::Nogood => self.counts.nogood += 1,
            MessageKind::NoSolution => self.counts.no_solution += 1,
            MessageKind::PuViolation => self.counts.pu_violation += 1,
        }
        let delay = self.delay.sample(&mut self.rng);
        let lane = self.lanes.entry(src).or_default();
        let carried_ltc = lane.stamp;
        let carried_nccc = lane.nccc;
        let queue = self.queues.entry((src, dst)).or_default();
        let mut deliver_ltc = self.ltc + 1 + delay;
        if let Some(back) = queue.back() {
            deliver_ltc = deliver_ltc.max(back.deliver_ltc);
        }
        queue.push_back(Envelope {
            src,
            dst,
            payload,
            send_ltc: self.ltc,
            deliver_ltc,
            carried_ltc,
            carried_nccc,
        });
    }

    fn flush_outbox<A: Actor>(
        &mut self,
        src: AgentId,
        out: Outbox,
        agents: &BTreeMap<AgentId, A>,
    ) {
        for (dst, msg) in out.sends {
            self.send(src, dst, msg);
        }
        for msg in out.broadcasts {
            let recipients: Vec<AgentId> =
                agents.keys().copied().filter(|id| *id != src).collect();
            for dst in recipients {
                self.send(src, dst, msg.clone());
            }
        }
    }

    /// Runs every agent's start hook and mails the initial bursts.
    pub fn start<A: Actor>(&mut self, agents: &mut BTreeMap<AgentId, A>) {
        let ids: Vec<AgentId> = agents.keys().copied().collect();
        for id in ids {
            let mut out = Outbox::default();
            let mut checks = CheckCounter::new();
            {
                let agent = agents.get_mut(&id).expect("registered agent");
                let mut ctx = BatchCtx {
                    checks: &mut checks,
                    out: &mut out,
                    trace: &mut self.trace,
                    ltc: self.ltc,
                };
                agent.on_start(&mut ctx);
            }
            let lane = self.lanes.entry(id).or_default();
            lane.nccc += checks.get();
            lane.checks_total += checks.get();
            self.flush_outbox(id, out, agents);
        }
    }

    /// Advances the logical clock to the next pending delivery, delivers every
    /// envelope due at that tick, and lets each receiver process its batch
    /// atomically. Returns the resulting status.
    pub fn advance_cycle<A: Actor>(&mut self, agents: &mut BTreeMap<AgentId, A>) -> CycleStatus {
        let tick = match self
            .queues
            .values()
            .filter_map(|q| q.front().map(|e| e.deliver_ltc))
            .min()
        {
            Some(t) => t,
            None => return Self::drained_status(agents),
        };
        debug_assert!(tick > self.ltc, "logical time must advance");
        self.ltc = tick;
        self.cycles += 1;

        // Collect everything due at this tick, grouped per receiver. Queue
        // iteration order is (src, dst) ascending, so each batch lists
        // envelopes by sender and in per-pair send order.
        let mut batches: BTreeMap<AgentId, Vec<Envelope>> = BTreeMap::new();
        for queue in self.queues.values_mut() {
            while queue.front().is_some_and(|e| e.deliver_ltc == tick) {
                let env = queue.pop_front().expect("front checked");
                debug_assert!(env.deliver_ltc <= self.ltc);
                batches.entry(env.dst).or_default().push(env);
            }
        }

        let mut saw_no_solution = false;
        for (dst, batch) in batches {
            for env in &batch {
                let summary = env.payload.summary();
                self.trace.log(|| {
                    format!("{},{},{},{},{}", tick, env.src, env.dst, env.payload.kind(), summary)
                });
                if matches!(env.payload, DcspMessage::NoSolution) {
                    saw_no_solution = true;
                }
                // The paper's rule: a carried stamp larger than the mailer's
                // own raises the global clock.
                if env.carried_ltc > self.ltc {
                    self.ltc = env.carried_ltc;
                }
            }
            let max_carried_ltc = batch.iter().map(|e| e.carried_ltc).max().unwrap_or(0);
            let max_carried_nccc = batch.iter().map(|e| e.carried_nccc).max().unwrap_or(0);

            let mut out = Outbox::default();
            let mut checks = CheckCounter::new();
            {
                let agent = match agents.get_mut(&dst) {
                    Some(a) => a,
                    None => continue, // late mail for a deregistered actor
                };
                let mut ctx = BatchCtx {
                    checks: &mut checks,
                    out: &mut out,
                    trace: &mut self.trace,
                    ltc: tick,
                };
                agent.on_batch(&batch, &mut ctx);
            }
            let local_checks = checks.get();
            let lane = self.lanes.entry(dst).or_default();
            lane.nccc = nccc_account(lane.nccc, max_carried_nccc, local_checks);
            lane.stamp = lane.stamp.max(max_carried_ltc) + 1;
            lane.checks_total += local_checks;
            self.flush_outbox(dst, out, agents);
        }

        if saw_no_solution {
            return CycleStatus::NoSolution;
        }
        if self.queues_empty() {
            Self::drained_status(agents)
        } else {
            CycleStatus::Active
        }
    }

    /// Status once every queue is empty. An agent halted at this point means
    /// a no-solution broadcast that had no one left to reach.
    fn drained_status<A: Actor>(agents: &BTreeMap<AgentId, A>) -> CycleStatus {
        if agents.values().any(|a| a.is_halted()) {
            CycleStatus::NoSolution
        } else if agents.values().all(|a| a.is_consistent()) {
            CycleStatus::Quiescent
        } else {
            CycleStatus::Stalled
        }
    }

    /// Drives the simulation until quiescence, a no-solution broadcast, a
    /// stall, or the cycle cap.
    pub fn run_to_quiescence<A: Actor>(
        &mut self,
        agents: &mut BTreeMap<AgentId, A>,
        cycle_cap: u64,
    ) -> RunOutcome {
        self.start(agents);
        loop {
            match self.advance_cycle(agents) {
                CycleStatus::Active => {
                    if self.cycles >= cycle_cap {
                        return RunOutcome::CapHit;
                    }
                }
                CycleStatus::Quiescent => return RunOutcome::Quiescent,
                CycleStatus::NoSolution => return RunOutcome::NoSolution,
                CycleStatus::Stalled => return RunOutcome::Stalled,
            }
        }
    }

    /// Omniscient-observer termination test: every queue empty, every agent
    /// locally consistent, and the supplied global predicate satisfied on the
    /// actual current assignments.
    pub fn quiescence_check<A: Actor>(
        &self,
        agents: &BTreeMap<AgentId, A>,
        globally_satisfied: impl FnOnce() -> bool,
    ) -> bool {
        self.queues_empty()
            && agents.values().all(|a| a.is_consistent() || a.is_halted())
            && globally_satisfied()
    }

    /// Snapshot of the run metrics so far.
    pub fn metrics(&self) -> RunMetrics {
        RunMetrics {
            cycles: self.cycles,
            messages: self.counts,
            nccc: self.lanes.values().map(|l| l.nccc).max().unwrap_or(0),
            checks_per_agent: self
                .lanes
                .iter()
                .map(|(id, lane)| (id.0, lane.checks_total))
                .collect(),
        }
    }
}

/// Carried-counter NCCC update: `max(receiver, carried) + local_checks`.
pub fn nccc_account(receiver_counter: u64, carried_nccc: u64, local_checks: u64) -> u64 {
    receiver_counter.max(carried_nccc) + local_checks
}
