//! Multi-local-variable AWCS agent: the rate-and-power case.
//!
//! The agent repairs its local variables in priority order and talks to other
//! CRs only once the whole local assignment satisfies every local constraint,
//! which is what keeps the message count below one-agent-per-variable search.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::awcs::{Scan, SolveReport, LOCAL_REPAIR_BUDGET};
use crate::dcsp::{
    AgentId, AgentView, Assignment, CheckCounter, Constraint, Domain, Nogood, PriorityKey,
    PriorityValue, Value, VarId,
};
use crate::mailer::{Actor, BatchCtx, DcspMessage, Envelope, Mailer, RunOutcome};
use crate::oracle::CspInstance;

/// One local variable with its search state.
#[derive(Debug, Clone)]
struct LocalVar {
    var: VarId,
    domain: Domain,
    idx: usize,
    priority: PriorityValue,
    /// Value or priority changed since the last outgoing batch.
    changed: bool,
}

impl LocalVar {
    fn value(&self) -> Value {
        self.domain.values()[self.idx]
    }

    fn assignment(&self) -> Assignment {
        Assignment::new(self.var, self.value(), self.priority)
    }

    fn key(&self) -> PriorityKey {
        PriorityKey::new(self.priority, self.var)
    }
}

pub struct AwcsMultiAgent {
    id: AgentId,
    locals: Vec<LocalVar>,
    view: AgentView,
    nogood_list: BTreeSet<Nogood>,
    nogood_sent: BTreeSet<Nogood>,
    constraints: Vec<Arc<Constraint>>,
    /// Per local variable: agents sharing at least one inter-agent constraint.
    related: BTreeMap<VarId, BTreeSet<AgentId>>,
    /// Agents that have addressed us; they track some of our values.
    watchers: BTreeSet<AgentId>,
    halted: bool,
}

impl AwcsMultiAgent {
    pub fn new(
        id: AgentId,
        locals: Vec<(VarId, Domain)>,
        constraints: Vec<Arc<Constraint>>,
    ) -> Self {
        assert!(!locals.is_empty());
        let mut locals: Vec<LocalVar> = locals
            .into_iter()
            .map(|(var, domain)| LocalVar {
                var,
                domain,
                idx: 0,
                priority: PriorityValue(0),
                changed: false,
            })
            .collect();
        locals.sort_by_key(|l| l.var);
        let mut related: BTreeMap<VarId, BTreeSet<AgentId>> = BTreeMap::new();
        for l in &locals {
            let peers: BTreeSet<AgentId> = constraints
                .iter()
                .filter(|c| c.mentions(l.var))
                .flat_map(|c| c.scope().iter())
                .map(|v| v.owner)
                .filter(|a| *a != id)
                .collect();
            related.insert(l.var, peers);
        }
        AwcsMultiAgent {
            id,
            locals,
            view: AgentView::new(),
            nogood_list: BTreeSet::new(),
            nogood_sent: BTreeSet::new(),
            constraints,
            related,
            watchers: BTreeSet::new(),
            halted: false,
        }
    }

    pub fn assignments(&self) -> Vec<Assignment> {
        self.locals.iter().map(|l| l.assignment()).collect()
    }

    pub fn value_of(&self, var: VarId) -> Option<Value> {
        self.locals.iter().find(|l| l.var == var).map(|l| l.value())
    }

    fn local(&self, var: VarId) -> Option<&LocalVar> {
        self.locals.iter().find(|l| l.var == var)
    }

    /// One pass over local `k`'s domain; other locals contribute their
    /// current values, remote variables come from the view.
    fn scan_var(&self, k: usize, with_justifications: bool, checks: &mut CheckCounter) -> Scan {
        let var = self.locals[k].var;
        let own_key = self.locals[k].key();
        let n = self.locals[k].domain.len();
        let mut scan = Scan::new(n);

        let lookup = |w: VarId| -> Option<(Value, PriorityKey)> {
            if let Some(l) = self.local(w) {
                Some((l.value(), l.key()))
            } else {
                self.view
                    .get(w)
                    .map(|a| (a.value, PriorityKey::new(a.priority, w)))
            }
        };

        let mut vals: Vec<Value> = Vec::new();
        for c in &self.constraints {
            let own_pos = match c.scope().binary_search(&var) {
                Ok(p) => p,
                Err(_) => continue,
            };
            vals.clear();
            let mut complete = true;
            let mut binding = true;
            for (pos, w) in c.scope().iter().enumerate() {
                if pos == own_pos {
                    vals.push(self.locals[k].value());
                    continue;
                }
                match lookup(*w) {
                    Some((value, key)) => {
                        if key <= own_key {
                            binding = false;
                        }
                        vals.push(value);
                    }
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if !complete {
                continue;
            }
            let unary = c.scope().len() == 1;
            let mut mask = if with_justifications && binding {
                Some(vec![false; n])
            } else {
                None
            };
            for (i, v) in self.locals[k].domain.values().iter().enumerate() {
                vals[own_pos] = *v;
                checks.bump();
                if c.satisfied_by(&vals) {
                    continue;
                }
                scan.total[i] += 1;
                if binding {
                    scan.blocked[i] = true;
                    if unary {
                        scan.unconditional[i] = true;
                    }
                    if let Some(mask) = mask.as_mut() {
                        mask[i] = true;
                    }
                } else {
                    scan.lower[i] += 1;
                }
            }
            if let Some(mask) = mask {
                if mask.iter().any(|b| *b) && !unary {
                    let parts: Vec<Assignment> = c
                        .scope()
                        .iter()
                        .filter(|w| **w != var)
                        .map(|w| {
                            self.local(*w)
                                .map(|l| l.assignment())
                                .or_else(|| self.view.get(*w).copied())
                                .expect("gathered above")
                        })
                        .collect();
                    scan.justifications.push((mask, parts));
                }
            }
        }

        for ng in &self.nogood_list {
            let own_value = ng.value_of(var);
            let mut others_match = true;
            let mut others_assigned = true;
            let mut binding = true;
            let mut foreign = 0usize;
            for m in ng.members() {
                if m.var == var {
                    continue;
                }
                foreign += 1;
                match lookup(m.var) {
                    Some((value, key)) => {
                        if value != m.value {
                            others_match = false;
                        }
                        if key <= own_key {
                            binding = false;
                        }
                    }
                    None => {
                        others_assigned = false;
                        break;
                    }
                }
            }
            if !others_assigned {
                continue;
            }
            checks.bump();
            if !others_match {
                continue;
            }
            let targets: Vec<usize> = match own_value {
                Some(w) => match self.locals[k].domain.values().iter().position(|v| *v == w) {
                    Some(i) => vec![i],
                    None => continue,
                },
                None => (0..n).collect(),
            };
            let mut mask = if with_justifications && binding {
                Some(vec![false; n])
            } else {
                None
            };
            for i in targets {
                scan.total[i] += 1;
                if binding {
                    scan.blocked[i] = true;
                    if foreign == 0 {
                        scan.unconditional[i] = true;
                    }
                    if let Some(mask) = mask.as_mut() {
                        mask[i] = true;
                    }
                } else {
                    scan.lower[i] += 1;
                }
            }
            if let Some(mask) = mask {
                if foreign > 0 {
                    let parts: Vec<Assignment> = ng
                        .members()
                        .filter(|m| m.var != var)
                        .map(|m| {
                            self.local(m.var)
                                .map(|l| l.assignment())
                                .or_else(|| self.view.get(m.var).copied())
                                .expect("matched above")
                        })
                        .collect();
                    scan.justifications.push((mask, parts));
                }
            }
        }
        scan
    }

    fn locally_consistent(&self, checks: &mut CheckCounter) -> bool {
        (0..self.locals.len()).all(|k| {
            let scan = self.scan_var(k, false, checks);
            !scan.blocked[self.locals[k].idx]
        })
    }

    /// Deterministic repair target: the highest-ranked local variable whose
    /// current value is blocked by higher-priority variables, together with
    /// its scan.
    fn select_repair_target(&self, checks: &mut CheckCounter) -> Option<(usize, Scan)> {
        let mut best: Option<(usize, Scan)> = None;
        for k in 0..self.locals.len() {
            let scan = self.scan_var(k, false, checks);
            if !scan.blocked[self.locals[k].idx] {
                continue;
            }
            best = match best {
                Some((b, bscan)) if self.locals[b].key() > self.locals[k].key() => {
                    Some((b, bscan))
                }
                _ => Some((k, scan)),
            };
        }
        best
    }

    fn set_local(&mut self, k: usize, idx: usize, ctx: &mut BatchCtx<'_>) {
        if self.locals[k].idx != idx {
            self.locals[k].idx = idx;
            self.locals[k].changed = true;
            let var = self.locals[k].var;
            let value = self.locals[k].value();
            ctx.event(self.id, "value", format_args!("{}={}", var, value));
        }
    }

    fn flush_changes(&mut self, ctx: &mut BatchCtx<'_>) {
        for k in 0..self.locals.len() {
            if !self.locals[k].changed {
                continue;
            }
            let a = self.locals[k].assignment();
            let mut recipients = self.related[&a.var].clone();
            recipients.extend(self.watchers.iter().copied());
            recipients.remove(&self.id);
            for dst in recipients {
                ctx.out.send(dst, DcspMessage::Ok(a));
            }
            self.locals[k].changed = false;
        }
    }

    /// Highest priority among variables related to `var` (sharing a
    /// constraint), used for the bump rule.
    fn max_related_priority(&self, var: VarId) -> PriorityValue {
        let mut max = PriorityValue(0);
        for c in &self.constraints {
            if !c.mentions(var) {
                continue;
            }
            for w in c.scope() {
                if *w == var {
                    continue;
                }
                let p = self
                    .local(*w)
                    .map(|l| l.priority)
                    .or_else(|| self.view.get(*w).map(|a| a.priority));
                if let Some(p) = p {
                    max = max.max(p);
                }
            }
        }
        max
    }

    /// Algorithm 2's check-agent-view: repair locals from the highest
    /// priority down; changed assignments leave the agent only once all local
    /// constraints hold.
    fn check_agent_view(&mut self, ctx: &mut BatchCtx<'_>) {
        let mut budget = LOCAL_REPAIR_BUDGET;
        loop {
            if budget == 0 {
                ctx.event(self.id, "repair-budget", "local repair loop exhausted");
                return;
            }
            budget -= 1;

            let picked = {
                let mut checks = std::mem::take(ctx.checks);
                let picked = self.select_repair_target(&mut checks);
                *ctx.checks = checks;
                picked
            };
            let (k, scan) = match picked {
                None => {
                    // Consistent local solution: communicate the changes.
                    self.flush_changes(ctx);
                    return;
                }
                Some(p) => p,
            };

            if scan.blocked.iter().any(|b| !*b) {
                let chosen = (0..self.locals[k].domain.len())
                    .filter(|i| !scan.blocked[*i])
                    .min_by_key(|i| (scan.lower[*i], *i))
                    .expect("some value unblocked");
                self.set_local(k, chosen, ctx);
                continue;
            }

            // No consistent value: record and communicate a nogood. The
            // communication is unconditional; only the priority bump waits
            // for a new nogood.
            let scan = {
                let mut checks = std::mem::take(ctx.checks);
                let scan = self.scan_var(k, true, &mut checks);
                *ctx.checks = checks;
                scan
            };
            let nogood = Nogood::from_assignments(scan.resolvent().into_values());
            if nogood.is_empty() {
                ctx.event(self.id, "no-solution", "empty nogood derived");
                ctx.out.broadcast(DcspMessage::NoSolution);
                self.halted = true;
                return;
            }
            let var = self.locals[k].var;
            self.nogood_list.insert(nogood.clone());
            for owner in nogood.owners() {
                if owner != self.id {
                    ctx.out.send(
                        owner,
                        DcspMessage::Nogood {
                            sender: self.id,
                            nogood: nogood.clone(),
                        },
                    );
                    self.watchers.insert(owner);
                }
            }
            let is_new = !self.nogood_sent.contains(&nogood);
            if is_new {
                self.nogood_sent.insert(nogood.clone());
                let old = self.locals[k].priority;
                self.locals[k].priority = PriorityValue(self.max_related_priority(var).0 + 1);
                self.locals[k].changed = true;
                ctx.event(
                    self.id,
                    "priority",
                    format_args!("{} {} -> {}", var, old.0, self.locals[k].priority.0),
                );
                ctx.event(self.id, "nogood", format_args!("{}", nogood));
            }
            // Weak commitment: move by total-conflict pressure. The derived
            // nogood fires uniformly over this domain, so the argmin stands.
            let chosen = (0..self.locals[k].domain.len())
                .min_by_key(|i| (scan.total[*i], *i))
                .expect("non-empty domain");
            if is_new || chosen != self.locals[k].idx {
                self.set_local(k, chosen, ctx);
                continue;
            }
            // Repeated deadend with no movement: wait for the notified
            // participants to act.
            return;
        }
    }

    fn absorb_nogood(&mut self, sender: AgentId, nogood: Nogood, ctx: &mut BatchCtx<'_>) {
        self.watchers.insert(sender);
        let mut obsolete = false;
        for m in nogood.members() {
            if m.var.owner == self.id {
                if self.value_of(m.var) != Some(m.value) {
                    obsolete = true;
                }
                continue;
            }
            if m.var.owner == sender {
                // Authoritative for the sender's own variables and ordered
                // with its ok? messages on the same FIFO lane.
                self.view.update(m);
            } else if self.view.get(m.var).is_none() {
                // First sighting of this variable; its owner must see our
                // announcements from now on.
                self.watchers.insert(m.var.owner);
                self.view.update(m);
            } else {
                self.view.raise_priority(m.var, m.priority);
            }
        }
        if obsolete {
            // The sender's view of our variables is stale; repair it.
            for m in nogood.members() {
                if m.var.owner == self.id {
                    let a = self.local(m.var).expect("own var").assignment();
                    ctx.out.send(sender, DcspMessage::Ok(a));
                }
            }
        }
        self.nogood_list.insert(nogood);
    }
}

impl Actor for AwcsMultiAgent {
    fn id(&self) -> AgentId {
        self.id
    }

    fn on_start(&mut self, ctx: &mut BatchCtx<'_>) {
        for l in &mut self.locals {
            l.changed = true;
        }
        // Settle intra-agent constraints before anything leaves the agent.
        self.check_agent_view(ctx);
    }

    fn on_batch(&mut self, batch: &[Envelope], ctx: &mut BatchCtx<'_>) {
        if self.halted {
            return;
        }
        for env in batch {
            match &env.payload {
                DcspMessage::Ok(a) => {
                    self.watchers.insert(env.src);
                    self.view.update(*a);
                }
                DcspMessage::Nogood { sender, nogood } => {
                    self.absorb_nogood(*sender, nogood.clone(), ctx);
                }
                DcspMessage::NoSolution => {
                    self.halted = true;
                }
                DcspMessage::PuViolation { .. } => {}
            }
        }
        if self.halted {
            return;
        }
        let consistent = {
            let mut checks = std::mem::take(ctx.checks);
            let ok = self.locally_consistent(&mut checks);
            *ctx.checks = checks;
            ok
        };
        if !consistent {
            self.check_agent_view(ctx);
        } else if self.locals.iter().any(|l| l.changed) {
            self.flush_changes(ctx);
        }
    }

    fn is_consistent(&self) -> bool {
        let mut scratch = CheckCounter::new();
        self.locally_consistent(&mut scratch) && !self.locals.iter().any(|l| l.changed)
    }

    fn is_halted(&self) -> bool {
        self.halted
    }
}

/// Groups the instance's variables by owner and runs one multi-variable agent
/// per owner on a fresh mailer.
pub fn solve_multi(
    instance: &CspInstance,
    seed: u64,
    delay: crate::mailer::DelayPolicy,
    cycle_cap: u64,
) -> SolveReport {
    let mut mailer = Mailer::new(seed, delay);
    let mut agents: BTreeMap<AgentId, AwcsMultiAgent> = BTreeMap::new();
    for owner in instance.agent_ids() {
        let locals: Vec<(VarId, Domain)> = instance
            .vars
            .iter()
            .filter(|(v, _)| v.owner == owner)
            .map(|(v, d)| (*v, d.clone()))
            .collect();
        let constraints: Vec<Arc<Constraint>> = instance
            .constraints
            .iter()
            .filter(|c| c.scope().iter().any(|v| v.owner == owner))
            .cloned()
            .collect();
        agents.insert(owner, AwcsMultiAgent::new(owner, locals, constraints));
    }
    let outcome = mailer.run_to_quiescence(&mut agents, cycle_cap);
    let assignment: BTreeMap<VarId, Value> = agents
        .values()
        .flat_map(|a| a.assignments().into_iter().map(|x| (x.var, x.value)))
        .collect();
    let satisfied = instance.is_solution(&assignment);
    debug_assert!(
        outcome != RunOutcome::Quiescent || satisfied,
        "quiescence must imply a globally satisfying assignment"
    );
    SolveReport {
        outcome,
        assignment,
        metrics: mailer.metrics(),
        satisfied,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mailer::DelayPolicy;
    use crate::oracle::{brute_force_solve, random_multi_instance, ratio, MultiFamily};

    fn v(agent: u32, local: u32) -> VarId {
        VarId::new(AgentId(agent), local)
    }

    fn dom(vals: &[f64]) -> Domain {
        Domain::new(vals.iter().map(|x| ratio(*x)).collect()).unwrap()
    }

    fn test_ctx<'a>(
        checks: &'a mut CheckCounter,
        out: &'a mut crate::mailer::Outbox,
        trace: &'a mut crate::mailer::Trace,
    ) -> BatchCtx<'a> {
        BatchCtx {
            checks,
            out,
            trace,
            ltc: 1,
        }
    }

    #[test]
    fn consistent_view_update_sends_nothing() {
        let c = Arc::new(Constraint::new(0, vec![v(0, 0), v(1, 0)], |x| x[0] != x[1]));
        let mut agent = AwcsMultiAgent::new(
            AgentId(0),
            vec![(v(0, 0), dom(&[2.0, 1.0])), (v(0, 1), dom(&[2.0, 1.0]))],
            vec![c],
        );
        let mut out = crate::mailer::Outbox::default();
        let mut checks = CheckCounter::new();
        let mut trace = crate::mailer::Trace::default();
        let mut ctx = test_ctx(&mut checks, &mut out, &mut trace);
        agent
            .view
            .update(Assignment::new(v(1, 0), ratio(1.0), PriorityValue(0)));
        let mut scratch = CheckCounter::new();
        assert!(agent.locally_consistent(&mut scratch));
        agent.on_batch(&[], &mut ctx);
        assert!(out.is_empty());
    }

    #[test]
    fn intra_agent_repair_precedes_any_message() {
        // Rate strictly below power as a pure intra-agent coupling; the
        // initial maxima (2, 2) violate it, so the agent must settle locally
        // before anything would leave.
        let power = v(0, 0);
        let rate = v(0, 1);
        let c = Arc::new(Constraint::new(0, vec![power, rate], |x| x[1] < x[0]));
        let mut agent = AwcsMultiAgent::new(
            AgentId(0),
            vec![(power, dom(&[2.0, 1.0])), (rate, dom(&[2.0, 1.0]))],
            vec![c],
        );
        let mut out = crate::mailer::Outbox::default();
        let mut checks = CheckCounter::new();
        let mut trace = crate::mailer::Trace::default();
        let mut ctx = test_ctx(&mut checks, &mut out, &mut trace);
        agent.on_start(&mut ctx);
        // Power keeps its preferred maximum; the lower-ranked rate moved.
        assert_eq!(agent.value_of(power), Some(ratio(2.0)));
        assert_eq!(agent.value_of(rate), Some(ratio(1.0)));
        let mut scratch = CheckCounter::new();
        assert!(agent.locally_consistent(&mut scratch));
        // No inter-agent constraint, so nothing leaves the agent.
        assert!(out.is_empty());
    }

    #[test]
    fn repair_target_is_highest_priority_violator() {
        let power = v(0, 0);
        let rate = v(0, 1);
        // Both locals violate their unary constraints.
        let c0 = Arc::new(Constraint::new(0, vec![power], |x| x[0] < ratio(2.0)));
        let c1 = Arc::new(Constraint::new(1, vec![rate], |x| x[0] < ratio(2.0)));
        let mut agent = AwcsMultiAgent::new(
            AgentId(0),
            vec![(power, dom(&[2.0, 1.0])), (rate, dom(&[2.0, 1.0]))],
            vec![c0, c1],
        );
        let mut scratch = CheckCounter::new();
        let (k, _) = agent.select_repair_target(&mut scratch).unwrap();
        // Equal priorities: the tie breaks to the lower local index (power).
        assert_eq!(agent.locals[k].var, power);
        agent.locals[1].priority = PriorityValue(3);
        let (k, _) = agent.select_repair_target(&mut scratch).unwrap();
        assert_eq!(agent.locals[k].var, rate);
    }

    #[test]
    fn two_agent_multi_instance_solves() {
        // Cross constraints force both agents away from their initial maxima.
        let c0 = Arc::new(Constraint::new(0, vec![v(0, 0), v(1, 0)], |x| x[0] != x[1]));
        let c1 = Arc::new(Constraint::new(1, vec![v(0, 1), v(1, 1)], |x| x[0] != x[1]));
        let instance = CspInstance {
            vars: vec![
                (v(0, 0), dom(&[2.0, 1.0])),
                (v(0, 1), dom(&[2.0, 1.0])),
                (v(1, 0), dom(&[2.0, 1.0])),
                (v(1, 1), dom(&[2.0, 1.0])),
            ],
            constraints: vec![c0, c1],
        };
        let report = solve_multi(&instance, 11, DelayPolicy::None, 200);
        assert_eq!(report.outcome, RunOutcome::Quiescent);
        assert!(report.satisfied);
    }

    #[test]
    fn desk_scale_equivalence_with_brute_force() {
        for seed in 0..40 {
            let instance = random_multi_instance(seed, MultiFamily::default());
            let oracle = brute_force_solve(&instance);
            let report = solve_multi(&instance, seed, DelayPolicy::None, 5_000);
            match oracle {
                Some(_) => {
                    assert_eq!(report.outcome, RunOutcome::Quiescent, "seed {seed}");
                    assert!(report.satisfied, "seed {seed}");
                }
                None => assert_eq!(report.outcome, RunOutcome::NoSolution, "seed {seed}"),
            }
        }
    }

    #[test]
    fn multi_needs_no_more_messages_than_split_single() {
        use crate::awcs::single::solve_single;
        use crate::oracle::split_locals;
        let mut multi_totals = Vec::new();
        let mut split_totals = Vec::new();
        for seed in 0..50 {
            let instance = random_multi_instance(seed, MultiFamily::default());
            let split = split_locals(&instance, MultiFamily::default().locals_per_agent);
            let m = solve_multi(&instance, seed, DelayPolicy::None, 5_000);
            let s = solve_single(&split, seed, DelayPolicy::None, 5_000);
            multi_totals.push(m.metrics.messages.total());
            split_totals.push(s.metrics.messages.total());
        }
        multi_totals.sort_unstable();
        split_totals.sort_unstable();
        let median = |v: &[u64]| v[v.len() / 2];
        assert!(
            median(&multi_totals) <= median(&split_totals),
            "multi median {} vs split median {}",
            median(&multi_totals),
            median(&split_totals)
        );
    }
}
