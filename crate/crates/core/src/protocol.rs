//! The staged QoS protocols.
//!
//! Every mode starts with PU interference negotiation: CRs report their
//! powers, violated PUs answer with one-bit signals, and CRs step down one
//! quantized level at a time until no PU objects. The resulting per-CR caps
//! become unary domain truncations for everything that follows, so later
//! stages can never re-violate a PU.
//!
//! CDMA then runs weak-commitment search over powers (equal rate) or over
//! (power, rate) pairs (unequal rate). STDMA instead discovers conflict
//! groups from exchanged SINR requirements, negotiates in-group powers, and
//! builds the rotating round-robin frame schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::awcs::multi::AwcsMultiAgent;
use crate::awcs::single::AwcsSingleAgent;
use crate::dcsp::{
    AgentId, Assignment, Constraint, Domain, PriorityValue, Value, VarId,
};
use crate::mailer::{
    Actor, BatchCtx, DcspMessage, DelayPolicy, Envelope, Mailer, RunMetrics, RunOutcome, Trace,
};
use crate::radio::{FrameSchedule, Mode, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid domain: {0}")]
    Domain(#[from] crate::dcsp::DomainError),
    #[error("frame needs {needed} slots but only {available} are available")]
    InfeasibleSchedule { needed: u32, available: u32 },
}

/// Protocol stage, advancing strictly forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    PuNegotiation,
    CrAwcs,
    StdmaSchedule,
    Done,
    Infeasible,
}

/// Terminal outcome of a protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Solved,
    NoSolution,
    InfeasibleSchedule,
    /// Anomalies: recorded, never silently dropped.
    CapHit,
    Stalled,
}

impl Outcome {
    pub fn feasible(&self) -> bool {
        matches!(self, Outcome::Solved)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub delay: DelayPolicy,
    pub cycle_cap: u64,
    pub trace: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            seed: 0,
            delay: DelayPolicy::None,
            cycle_cap: 20_000,
            trace: false,
        }
    }
}

/// Disjoint CR sets covering the live links; each set is identified by its
/// head, the member with the lowest id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterferingPartition {
    /// Sets in ascending head order; members sorted.
    pub sets: Vec<Vec<u32>>,
}

impl InterferingPartition {
    pub fn from_sets(mut sets: Vec<Vec<u32>>) -> Self {
        for s in &mut sets {
            s.sort_unstable();
        }
        sets.sort_by_key(|s| s[0]);
        InterferingPartition { sets }
    }

    pub fn heads(&self) -> Vec<u32> {
        self.sets.iter().map(|s| s[0]).collect()
    }

    /// Set order for a frame: the ascending head list rotated right once per
    /// frame, so the last head of frame f leads frame f+1.
    pub fn rotated_order(&self, frame_index: u64) -> Vec<usize> {
        let m = self.sets.len();
        let mut order: Vec<usize> = (0..m).collect();
        if m > 0 {
            order.rotate_right((frame_index % m as u64) as usize);
        }
        order
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub phase: Phase,
    pub outcome: Outcome,
    pub pu_caps_mw: Vec<f64>,
    /// CRs driven to 0 mW during PU negotiation.
    pub silenced: Vec<u32>,
    pub powers_mw: Vec<f64>,
    pub rates_bps: Vec<f64>,
    pub sum_log_rate: f64,
    pub partition: Option<InterferingPartition>,
    pub schedule: Option<FrameSchedule>,
    /// Sets that failed group power negotiation and were serialized.
    pub degraded_sets: Vec<Vec<u32>>,
    pub metrics: RunMetrics,
    /// Max over CRs of their phase-1 step-downs; bounded by the domain size.
    pub phase1_steps_max: u32,
    #[serde(skip)]
    pub trace: Vec<String>,
}

fn power_var(cr: u32) -> VarId {
    VarId::new(AgentId(cr), 0)
}

fn rate_var(cr: u32) -> VarId {
    VarId::new(AgentId(cr), 1)
}

// ---------------------------------------------------------------------------
// Phase 1: PU interference negotiation
// ---------------------------------------------------------------------------

/// Result of the negotiation: the largest power each CR may use without any
/// PU objection, assuming everyone transmits at their cap.
#[derive(Debug, Clone)]
pub struct Phase1Result {
    pub caps: Vec<Value>,
    pub silenced: Vec<u32>,
    pub max_steps: u32,
    pub outcome: RunOutcome,
}

enum Phase1Actor {
    Cr(CrReporter),
    Pu(PuWatchdog),
}

struct CrReporter {
    id: AgentId,
    domain: Domain,
    level: usize,
    steps: u32,
    pu_ids: Vec<AgentId>,
}

impl CrReporter {
    fn assignment(&self) -> Assignment {
        Assignment::new(
            power_var(self.id.0),
            self.domain.values()[self.level],
            PriorityValue(0),
        )
    }
}

struct PuWatchdog {
    id: AgentId,
    cap_mw: f64,
    /// Gain from each CR's transmitter, keyed by CR id.
    gains: BTreeMap<u32, f64>,
    reports: BTreeMap<u32, f64>,
    violated: bool,
}

impl PuWatchdog {
    fn aggregate_mw(&self) -> f64 {
        self.reports
            .iter()
            .map(|(cr, p)| self.gains[cr] * p)
            .sum()
    }
}

impl Actor for Phase1Actor {
    fn id(&self) -> AgentId {
        match self {
            Phase1Actor::Cr(c) => c.id,
            Phase1Actor::Pu(p) => p.id,
        }
    }

    fn on_start(&mut self, ctx: &mut BatchCtx<'_>) {
        if let Phase1Actor::Cr(cr) = self {
            for pu in &cr.pu_ids {
                ctx.out.send(*pu, DcspMessage::Ok(cr.assignment()));
            }
        }
    }

    fn on_batch(&mut self, batch: &[Envelope], ctx: &mut BatchCtx<'_>) {
        match self {
            Phase1Actor::Cr(cr) => {
                let violators: BTreeSet<AgentId> = batch
                    .iter()
                    .filter_map(|e| match e.payload {
                        DcspMessage::PuViolation { from } => Some(from),
                        _ => None,
                    })
                    .collect();
                if violators.is_empty() {
                    return;
                }
                // One quantized step down per batch, floor at the 0 mW
                // sentinel, then re-report to every objecting PU.
                if cr.level + 1 < cr.domain.len() {
                    cr.level += 1;
                    cr.steps += 1;
                    ctx.event(
                        cr.id,
                        "power-step",
                        format_args!("{}", cr.domain.values()[cr.level]),
                    );
                }
                for pu in violators {
                    ctx.out.send(pu, DcspMessage::Ok(cr.assignment()));
                }
            }
            Phase1Actor::Pu(pu) => {
                for env in batch {
                    if let DcspMessage::Ok(a) = &env.payload {
                        pu.reports.insert(a.var.owner.0, a.value.as_f64());
                    }
                }
                ctx.checks.bump();
                pu.violated = pu.aggregate_mw() > pu.cap_mw;
                if pu.violated {
                    // Signal the contributors above a fair share of the cap;
                    // when the overshoot comes from many small contributions,
                    // fall back to the single largest one. Keeps descent
                    // monotone without crushing marginal transmitters.
                    let contributions: Vec<(u32, f64)> = pu
                        .reports
                        .iter()
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(cr, p)| (*cr, pu.gains[cr] * p))
                        .collect();
                    if contributions.is_empty() {
                        return;
                    }
                    let share = pu.cap_mw / contributions.len() as f64;
                    let over: Vec<u32> = contributions
                        .iter()
                        .filter(|(_, c)| *c > share)
                        .map(|(cr, _)| *cr)
                        .collect();
                    let targets = if over.is_empty() {
                        let top = contributions
                            .iter()
                            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
                            .expect("non-empty");
                        vec![top.0]
                    } else {
                        over
                    };
                    for cr in targets {
                        ctx.out
                            .send(AgentId(cr), DcspMessage::PuViolation { from: pu.id });
                    }
                }
            }
        }
    }

    fn is_consistent(&self) -> bool {
        match self {
            Phase1Actor::Cr(_) => true,
            Phase1Actor::Pu(pu) => !pu.violated,
        }
    }
}

/// Runs the negotiation to its fixpoint on the shared mailer.
pub fn phase1_pu_negotiation(
    scenario: &Scenario,
    mailer: &mut Mailer,
    cycle_cap: u64,
) -> Result<Phase1Result, ProtocolError> {
    let pu_ids: Vec<AgentId> = scenario.pu.iter().map(|p| p.agent()).collect();
    let mut agents: BTreeMap<AgentId, Phase1Actor> = BTreeMap::new();
    for (i, link) in scenario.cr.iter().enumerate() {
        agents.insert(
            link.agent(),
            Phase1Actor::Cr(CrReporter {
                id: link.agent(),
                domain: scenario.power_domain(i)?,
                level: 0,
                steps: 0,
                pu_ids: pu_ids.clone(),
            }),
        );
    }
    for (k, pu) in scenario.pu.iter().enumerate() {
        let gains = scenario
            .cr
            .iter()
            .enumerate()
            .map(|(i, link)| (link.id, scenario.gains.cr_to_pu[k][i]))
            .collect();
        agents.insert(
            pu.agent(),
            Phase1Actor::Pu(PuWatchdog {
                id: pu.agent(),
                cap_mw: pu.interference_cap_mw,
                gains,
                reports: BTreeMap::new(),
                violated: false,
            }),
        );
    }
    let outcome = mailer.run_to_quiescence(&mut agents, cycle_cap);

    let mut caps = Vec::with_capacity(scenario.n_cr());
    let mut silenced = Vec::new();
    let mut max_steps = 0;
    for link in &scenario.cr {
        match &agents[&link.agent()] {
            Phase1Actor::Cr(cr) => {
                let cap = cr.domain.values()[cr.level];
                debug_assert!(cr.steps as usize <= cr.domain.len());
                max_steps = max_steps.max(cr.steps);
                if cap.is_zero() {
                    silenced.push(link.id);
                }
                caps.push(cap);
            }
            Phase1Actor::Pu(_) => unreachable!("CR id maps to a CR actor"),
        }
    }
    Ok(Phase1Result {
        caps,
        silenced,
        max_steps,
        outcome,
    })
}

// ---------------------------------------------------------------------------
// Phase 2: CDMA power (and rate) allocation
// ---------------------------------------------------------------------------

/// Indices of CRs that still transmit after phase 1.
fn live_indices(caps: &[Value]) -> Vec<usize> {
    caps.iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(i, _)| i)
        .collect()
}

/// Interferers of CR `i` worth negotiating with, plus a worst-case margin
/// for the rest.
///
/// An interferer whose full-budget contribution at CR i's receiver stays
/// below the receiver's own noise floor is dropped from the constraint
/// scope; its full-budget contribution is folded into the noise term
/// instead. The pruned SINR therefore lower-bounds the true SINR for any
/// admissible power vector, so a satisfied pruned constraint implies the
/// exact formula holds.
fn significant_interferers(scenario: &Scenario, i: usize, live: &[usize]) -> (Vec<usize>, f64) {
    let floor = scenario.effective_noise_mw(i);
    let mut kept = Vec::new();
    let mut margin = 0.0;
    for j in live {
        if *j == i {
            continue;
        }
        let worst = scenario.gains.cr_to_cr[i][*j] * scenario.cr[*j].power_budget_mw;
        if worst > floor {
            kept.push(*j);
        } else {
            margin += worst;
        }
    }
    (kept, margin)
}

/// SINR constraint of CR `i` over its significant live interferers.
fn sinr_constraint(scenario: &Arc<Scenario>, cid: u64, i: usize, live: &[usize]) -> Arc<Constraint> {
    let (kept, margin) = significant_interferers(scenario, i, live);
    let mut scope_cr = kept;
    scope_cr.push(i);
    scope_cr.sort_unstable();
    let scope: Vec<VarId> = scope_cr
        .iter()
        .map(|j| power_var(scenario.cr[*j].id))
        .collect();
    let own_pos = scope_cr.iter().position(|j| *j == i).expect("own var");
    let gains: Vec<f64> = scope_cr
        .iter()
        .map(|j| scenario.gains.cr_to_cr[i][*j])
        .collect();
    let direct = scenario.gains.cr_to_cr[i][i];
    let noise = scenario.effective_noise_mw(i) + margin;
    let threshold = scenario.cr[i].sinr_threshold;
    Arc::new(Constraint::new(cid, scope, move |vals| {
        let mut interference = noise;
        for (pos, v) in vals.iter().enumerate() {
            if pos != own_pos {
                interference += gains[pos] * v.as_f64();
            }
        }
        direct * vals[own_pos].as_f64() / interference >= threshold
    }))
}

/// Joint rate/SINR constraint of CR `i`: its significant live interferers'
/// powers plus CR i's own power and rate.
fn rate_sinr_constraint(
    scenario: &Arc<Scenario>,
    cid: u64,
    i: usize,
    live: &[usize],
) -> Arc<Constraint> {
    let (kept, margin) = significant_interferers(scenario, i, live);
    let mut scope_cr = kept;
    scope_cr.push(i);
    scope_cr.sort_unstable();
    let mut scope: Vec<VarId> = scope_cr
        .iter()
        .map(|j| power_var(scenario.cr[*j].id))
        .collect();
    scope.push(rate_var(scenario.cr[i].id));
    scope.sort_unstable();
    let rate_pos = scope
        .binary_search(&rate_var(scenario.cr[i].id))
        .expect("rate var in scope");
    // Map scope positions (minus the rate slot) back to gain entries.
    let mut gains = Vec::with_capacity(scope.len());
    let mut own_pos = 0;
    {
        let mut cr_iter = scope_cr.iter();
        for (pos, _) in scope.iter().enumerate() {
            if pos == rate_pos {
                gains.push(0.0);
                continue;
            }
            let j = *cr_iter.next().expect("power slot");
            if j == i {
                own_pos = pos;
            }
            gains.push(scenario.gains.cr_to_cr[i][j]);
        }
    }
    let direct = scenario.gains.cr_to_cr[i][i];
    let noise = scenario.effective_noise_mw(i) + margin;
    let anchor_threshold = scenario.cr[i].sinr_threshold;
    let rate_min = scenario.cr[i].rate_min_bps;
    Arc::new(Constraint::new(cid, scope, move |vals| {
        let rate = vals[rate_pos].as_f64();
        let required = anchor_threshold * (rate / rate_min);
        let mut interference = noise;
        for (pos, v) in vals.iter().enumerate() {
            if pos != own_pos && pos != rate_pos {
                interference += gains[pos] * v.as_f64();
            }
        }
        direct * vals[own_pos].as_f64() / interference >= required
    }))
}

/// Result of a CDMA allocation phase.
#[derive(Debug, Clone)]
pub struct Phase2Result {
    pub outcome: RunOutcome,
    pub powers_mw: Vec<f64>,
    pub rates_bps: Vec<f64>,
}

/// Equal-rate CDMA: one power variable per live CR, PU caps as domain
/// truncation, one SINR constraint per live CR.
pub fn phase2_cdma_equal(
    scenario: &Arc<Scenario>,
    caps: &[Value],
    mailer: &mut Mailer,
    cycle_cap: u64,
) -> Result<Phase2Result, ProtocolError> {
    let live = live_indices(caps);
    let mut powers = vec![0.0; scenario.n_cr()];
    if live.is_empty() {
        return Ok(Phase2Result {
            outcome: RunOutcome::Quiescent,
            powers_mw: powers,
            rates_bps: Vec::new(),
        });
    }
    let constraints: Vec<Arc<Constraint>> = live
        .iter()
        .map(|i| sinr_constraint(scenario, *i as u64, *i, &live))
        .collect();
    let mut agents: BTreeMap<AgentId, AwcsSingleAgent> = BTreeMap::new();
    for i in &live {
        let id = scenario.cr[*i].agent();
        let domain = scenario.power_domain(*i)?.truncate_at(caps[*i])?;
        let mine: Vec<Arc<Constraint>> = constraints
            .iter()
            .filter(|c| c.mentions(power_var(id.0)))
            .cloned()
            .collect();
        agents.insert(id, AwcsSingleAgent::new(id, power_var(id.0), domain, mine));
    }
    let outcome = mailer.run_to_quiescence(&mut agents, cycle_cap);
    for i in &live {
        powers[*i] = agents[&scenario.cr[*i].agent()].current_value().as_f64();
    }
    Ok(Phase2Result {
        outcome,
        powers_mw: powers,
        rates_bps: Vec::new(),
    })
}

/// Unequal-rate CDMA: each live CR owns a power and a rate variable; the
/// descending domains bias the search toward high powers and rates.
pub fn phase2_cdma_unequal(
    scenario: &Arc<Scenario>,
    caps: &[Value],
    mailer: &mut Mailer,
    cycle_cap: u64,
) -> Result<Phase2Result, ProtocolError> {
    let live = live_indices(caps);
    let mut powers = vec![0.0; scenario.n_cr()];
    let mut rates = vec![0.0; scenario.n_cr()];
    if live.is_empty() {
        return Ok(Phase2Result {
            outcome: RunOutcome::Quiescent,
            powers_mw: powers,
            rates_bps: rates,
        });
    }
    let constraints: Vec<Arc<Constraint>> = live
        .iter()
        .map(|i| rate_sinr_constraint(scenario, *i as u64, *i, &live))
        .collect();
    let mut agents: BTreeMap<AgentId, AwcsMultiAgent> = BTreeMap::new();
    for i in &live {
        let id = scenario.cr[*i].agent();
        let power_domain = scenario.power_domain(*i)?.truncate_at(caps[*i])?;
        let rate_domain = scenario.rate_domain(*i)?;
        let mine: Vec<Arc<Constraint>> = constraints
            .iter()
            .filter(|c| c.scope().iter().any(|v| v.owner == id))
            .cloned()
            .collect();
        agents.insert(
            id,
            AwcsMultiAgent::new(
                id,
                vec![(power_var(id.0), power_domain), (rate_var(id.0), rate_domain)],
                mine,
            ),
        );
    }
    let outcome = mailer.run_to_quiescence(&mut agents, cycle_cap);
    for i in &live {
        let agent = &agents[&scenario.cr[*i].agent()];
        powers[*i] = agent.value_of(power_var(scenario.cr[*i].id)).unwrap().as_f64();
        rates[*i] = agent.value_of(rate_var(scenario.cr[*i].id)).unwrap().as_f64();
    }
    Ok(Phase2Result {
        outcome,
        powers_mw: powers,
        rates_bps: rates,
    })
}

// ---------------------------------------------------------------------------
// STDMA: conflict partition, group power, frame schedule
// ---------------------------------------------------------------------------

/// No-op endpoint for the SINR-requirement exchange; the mailer counts the
/// traffic and advances the clock.
struct ExchangePeer {
    id: AgentId,
}

impl Actor for ExchangePeer {
    fn id(&self) -> AgentId {
        self.id
    }
    fn on_start(&mut self, _ctx: &mut BatchCtx<'_>) {}
    fn on_batch(&mut self, _batch: &[Envelope], _ctx: &mut BatchCtx<'_>) {}
    fn is_consistent(&self) -> bool {
        true
    }
}

/// Conservative pairwise conflict test at the negotiated caps: CR `i` is the
/// victim of `j` when their simultaneous transmission leaves CR i short of
/// its SINR threshold.
fn is_victim(scenario: &Scenario, caps: &[Value], i: usize, j: usize) -> bool {
    let mut powers = vec![0.0; scenario.n_cr()];
    powers[i] = caps[i].as_f64();
    powers[j] = caps[j].as_f64();
    scenario.sinr(i, &powers) < scenario.cr[i].sinr_threshold
}

/// Builds the interference partition: CRs broadcast their SINR requirements,
/// victims answer with one-bit signals, and the conflict graph's connected
/// components become the partition sets (heads = lowest member id).
pub fn stdma_build_partition(
    scenario: &Scenario,
    caps: &[Value],
    mailer: &mut Mailer,
    cycle_cap: u64,
) -> InterferingPartition {
    let live = live_indices(caps);
    let mut agents: BTreeMap<AgentId, ExchangePeer> = BTreeMap::new();
    for i in &live {
        let id = scenario.cr[*i].agent();
        agents.insert(id, ExchangePeer { id });
    }
    // Requirement exchange: one ok? per ordered pair.
    for i in &live {
        let src = scenario.cr[*i].agent();
        let gamma = Value::ratio(scenario.cr[*i].sinr_threshold);
        for j in &live {
            if i != j {
                let dst = scenario.cr[*j].agent();
                mailer.send(
                    src,
                    dst,
                    DcspMessage::Ok(Assignment::new(power_var(src.0), gamma, PriorityValue(0))),
                );
            }
        }
    }
    // Victim bits.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for a in 0..live.len() {
        for b in (a + 1)..live.len() {
            let (i, j) = (live[a], live[b]);
            let v_i = is_victim(scenario, caps, i, j);
            let v_j = is_victim(scenario, caps, j, i);
            if v_i {
                mailer.send(
                    scenario.cr[i].agent(),
                    scenario.cr[j].agent(),
                    DcspMessage::PuViolation {
                        from: scenario.cr[i].agent(),
                    },
                );
            }
            if v_j {
                mailer.send(
                    scenario.cr[j].agent(),
                    scenario.cr[i].agent(),
                    DcspMessage::PuViolation {
                        from: scenario.cr[j].agent(),
                    },
                );
            }
            if v_i || v_j {
                edges.push((i, j));
            }
        }
    }
    let _ = mailer.run_to_quiescence(&mut agents, cycle_cap);
    partition_from_edges(
        &live.iter().map(|i| scenario.cr[*i].id).collect::<Vec<_>>(),
        &edges
            .iter()
            .map(|(i, j)| (scenario.cr[*i].id, scenario.cr[*j].id))
            .collect::<Vec<_>>(),
    )
}

/// Connected components of the conflict graph over `nodes`.
pub fn partition_from_edges(nodes: &[u32], edges: &[(u32, u32)]) -> InterferingPartition {
    let mut parent: BTreeMap<u32, u32> = nodes.iter().map(|n| (*n, *n)).collect();
    fn find(parent: &mut BTreeMap<u32, u32>, x: u32) -> u32 {
        let p = parent[&x];
        if p == x {
            return x;
        }
        let root = find(parent, p);
        parent.insert(x, root);
        root
    }
    for (a, b) in edges {
        let ra = find(&mut parent, *a);
        let rb = find(&mut parent, *b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent.insert(hi, lo);
        }
    }
    let mut sets: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for n in nodes {
        sets.entry(find(&mut parent, *n)).or_default().push(*n);
    }
    InterferingPartition::from_sets(sets.into_values().collect())
}

/// Group power negotiation result.
#[derive(Debug, Clone)]
pub struct GroupPowerResult {
    pub powers_mw: Vec<f64>,
    /// The partition actually scheduled, after any degradation.
    pub partition: InterferingPartition,
    pub degraded_sets: Vec<Vec<u32>>,
}

/// Within each multi-member set, AWCS negotiates powers so the slot-sharing
/// members tolerate each other; a set with no solution is split into
/// serialized singletons at their caps (documented degradation). Singleton
/// sets simply keep their caps.
pub fn stdma_group_power(
    partition: &InterferingPartition,
    scenario: &Arc<Scenario>,
    caps: &[Value],
    mailer: &mut Mailer,
    cycle_cap: u64,
) -> Result<GroupPowerResult, ProtocolError> {
    let mut powers = vec![0.0; scenario.n_cr()];
    let mut final_sets: Vec<Vec<u32>> = Vec::new();
    let mut degraded: Vec<Vec<u32>> = Vec::new();
    for set in &partition.sets {
        let members: Vec<usize> = set
            .iter()
            .map(|id| scenario.cr_index(AgentId(*id)).expect("member exists"))
            .collect();
        if members.len() == 1 {
            powers[members[0]] = caps[members[0]].as_f64();
            final_sets.push(set.clone());
            continue;
        }
        let constraints: Vec<Arc<Constraint>> = members
            .iter()
            .map(|i| sinr_constraint(scenario, *i as u64, *i, &members))
            .collect();
        let mut agents: BTreeMap<AgentId, AwcsSingleAgent> = BTreeMap::new();
        for i in &members {
            let id = scenario.cr[*i].agent();
            let domain = scenario.power_domain(*i)?.truncate_at(caps[*i])?;
            let mine: Vec<Arc<Constraint>> = constraints
                .iter()
                .filter(|c| c.mentions(power_var(id.0)))
                .cloned()
                .collect();
            agents.insert(id, AwcsSingleAgent::new(id, power_var(id.0), domain, mine));
        }
        let outcome = mailer.run_to_quiescence(&mut agents, cycle_cap);
        if outcome == RunOutcome::Quiescent {
            for i in &members {
                powers[*i] = agents[&scenario.cr[*i].agent()].current_value().as_f64();
            }
            final_sets.push(set.clone());
        } else {
            // The members cannot share slots at any power: serialize them.
            for i in &members {
                powers[*i] = caps[*i].as_f64();
            }
            degraded.push(set.clone());
            for id in set {
                final_sets.push(vec![*id]);
            }
        }
    }
    Ok(GroupPowerResult {
        powers_mw: powers,
        partition: InterferingPartition::from_sets(final_sets),
        degraded_sets: degraded,
    })
}

/// Builds one frame: sets take strictly sequential turns in circular
/// round-robin order; within a set's turn every member transmits from the
/// turn's first slot until its demand is met, so the turn spans the largest
/// member demand.
pub fn stdma_schedule(
    partition: &InterferingPartition,
    demands: &BTreeMap<u32, u32>,
    frame_slots: u32,
    frame_index: u64,
) -> Result<FrameSchedule, ProtocolError> {
    let needed: u32 = partition
        .sets
        .iter()
        .map(|s| s.iter().map(|id| demands[id]).max().unwrap_or(0))
        .sum();
    if needed > frame_slots {
        return Err(ProtocolError::InfeasibleSchedule {
            needed,
            available: frame_slots,
        });
    }
    let order = partition.rotated_order(frame_index);
    let mut patterns: Vec<BTreeSet<u32>> = Vec::new();
    let mut slots: Vec<u32> = Vec::new();
    for set_idx in &order {
        let set = &partition.sets[*set_idx];
        let turn_len = set.iter().map(|id| demands[id]).max().unwrap_or(0);
        for k in 0..turn_len {
            let active: BTreeSet<u32> = set
                .iter()
                .copied()
                .filter(|id| demands[id] > k)
                .collect();
            match patterns.last() {
                Some(last) if *last == active => *slots.last_mut().unwrap() += 1,
                _ => {
                    patterns.push(active);
                    slots.push(1);
                }
            }
        }
    }
    Ok(FrameSchedule {
        patterns,
        slots,
        set_order: order.iter().map(|i| partition.sets[*i][0]).collect(),
        rotation_index: frame_index,
    })
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Drives a scenario through its full protocol on one mailer.
pub fn run_protocol(scenario: &Scenario, config: &ProtocolConfig) -> Result<ProtocolReport, ProtocolError> {
    scenario.validate()?;
    let scenario = Arc::new(scenario.clone());
    let mut mailer = Mailer::new(config.seed, config.delay);
    if config.trace {
        mailer.trace = Trace::enabled();
    }

    let phase1 = phase1_pu_negotiation(&scenario, &mut mailer, config.cycle_cap)?;
    let pu_caps_mw: Vec<f64> = phase1.caps.iter().map(|c| c.as_f64()).collect();
    let mut report = ProtocolReport {
        phase: Phase::PuNegotiation,
        outcome: Outcome::Solved,
        pu_caps_mw,
        silenced: phase1.silenced.clone(),
        powers_mw: vec![0.0; scenario.n_cr()],
        rates_bps: Vec::new(),
        sum_log_rate: 0.0,
        partition: None,
        schedule: None,
        degraded_sets: Vec::new(),
        metrics: RunMetrics::default(),
        phase1_steps_max: phase1.max_steps,
        trace: Vec::new(),
    };
    if phase1.outcome != RunOutcome::Quiescent {
        report.outcome = match phase1.outcome {
            RunOutcome::CapHit => Outcome::CapHit,
            _ => Outcome::Stalled,
        };
        report.metrics = mailer.metrics();
        report.trace = mailer.trace.lines().to_vec();
        return Ok(report);
    }

    report.phase = Phase::CrAwcs;
    match scenario.mode {
        Mode::CdmaEqualRate => {
            let p2 = phase2_cdma_equal(&scenario, &phase1.caps, &mut mailer, config.cycle_cap)?;
            report.powers_mw = p2.powers_mw;
            report.outcome = outcome_of(p2.outcome);
            if report.outcome == Outcome::Solved {
                report.phase = Phase::Done;
            } else {
                report.phase = Phase::Infeasible;
            }
        }
        Mode::CdmaUnequalRate => {
            let p2 = phase2_cdma_unequal(&scenario, &phase1.caps, &mut mailer, config.cycle_cap)?;
            report.powers_mw = p2.powers_mw;
            report.rates_bps = p2.rates_bps;
            report.outcome = outcome_of(p2.outcome);
            if report.outcome == Outcome::Solved {
                let live_rates: Vec<f64> = report
                    .rates_bps
                    .iter()
                    .copied()
                    .filter(|r| *r > 0.0)
                    .collect();
                if !live_rates.is_empty() {
                    report.sum_log_rate =
                        crate::radio::objective_log_rate(&live_rates).expect("positive rates");
                }
                report.phase = Phase::Done;
            } else {
                report.phase = Phase::Infeasible;
            }
        }
        Mode::Stdma => {
            let partition =
                stdma_build_partition(&scenario, &phase1.caps, &mut mailer, config.cycle_cap);
            let group = stdma_group_power(
                &partition,
                &scenario,
                &phase1.caps,
                &mut mailer,
                config.cycle_cap,
            )?;
            report.powers_mw = group.powers_mw;
            report.degraded_sets = group.degraded_sets;
            report.phase = Phase::StdmaSchedule;
            let demands: BTreeMap<u32, u32> = scenario
                .cr
                .iter()
                .filter(|c| !phase1.silenced.contains(&c.id))
                .map(|c| (c.id, c.demand_slots.max(1)))
                .collect();
            match stdma_schedule(&group.partition, &demands, scenario.frame_slots, 0) {
                Ok(schedule) => {
                    report.schedule = Some(schedule);
                    report.partition = Some(group.partition);
                    report.phase = Phase::Done;
                    report.outcome = Outcome::Solved;
                }
                Err(ProtocolError::InfeasibleSchedule { .. }) => {
                    report.partition = Some(group.partition);
                    report.phase = Phase::Infeasible;
                    report.outcome = Outcome::InfeasibleSchedule;
                }
                Err(e) => return Err(e),
            }
        }
    }
    report.metrics = mailer.metrics();
    report.trace = mailer.trace.lines().to_vec();
    Ok(report)
}

fn outcome_of(run: RunOutcome) -> Outcome {
    match run {
        RunOutcome::Quiescent => Outcome::Solved,
        RunOutcome::NoSolution => Outcome::NoSolution,
        RunOutcome::CapHit => Outcome::CapHit,
        RunOutcome::Stalled => Outcome::Stalled,
    }
}

/// The structured result record written by the CLI: outcome, allocations,
/// metrics, seed and a config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub seed: u64,
    pub mode: Mode,
    pub outcome: Outcome,
    pub feasible: bool,
    pub phase: Phase,
    pub delay: DelayPolicy,
    pub cycle_cap: u64,
    pub pu_caps_mw: Vec<f64>,
    pub silenced: Vec<u32>,
    pub powers_mw: Vec<f64>,
    pub rates_bps: Vec<f64>,
    pub sum_log_rate: f64,
    pub cycles: u64,
    pub messages_ok: u64,
    pub messages_nogood: u64,
    pub messages_no_solution: u64,
    pub messages_pu: u64,
    pub nccc: u64,
    pub phase1_steps_max: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<FrameSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<InterferingPartition>,
}

impl ResultRecord {
    pub fn new(scenario: &Scenario, config: &ProtocolConfig, report: &ProtocolReport) -> Self {
        ResultRecord {
            seed: config.seed,
            mode: scenario.mode,
            outcome: report.outcome,
            feasible: report.outcome.feasible(),
            phase: report.phase,
            delay: config.delay,
            cycle_cap: config.cycle_cap,
            pu_caps_mw: report.pu_caps_mw.clone(),
            silenced: report.silenced.clone(),
            powers_mw: report.powers_mw.clone(),
            rates_bps: report.rates_bps.clone(),
            sum_log_rate: report.sum_log_rate,
            cycles: report.metrics.cycles,
            messages_ok: report.metrics.messages.ok,
            messages_nogood: report.metrics.messages.nogood,
            messages_no_solution: report.metrics.messages.no_solution,
            messages_pu: report.metrics.messages.pu_violation,
            nccc: report.metrics.nccc,
            phase1_steps_max: report.phase1_steps_max,
            schedule: report.schedule.clone(),
            partition: report.partition.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        let body = toml::to_string_pretty(self).expect("record serializes");
        format!("# crqos result record\n{body}")
    }
}
