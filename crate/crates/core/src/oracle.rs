//! Reference brute-force solver and seeded instance generators.
//!
//! The enumerator here is deliberately independent of the asynchronous search
//! path: it walks the raw cross product of all domains and tests every
//! constraint directly. It backs the `validate` command and the equivalence
//! test suites.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dcsp::{
    evaluate, AgentId, AgentView, Assignment, CheckCounter, Constraint, Domain, Eval,
    PriorityValue, Unit, Value, VarId,
};

/// A self-contained constraint satisfaction instance. Variables are grouped
/// into agents by their owner id.
#[derive(Debug, Clone)]
pub struct CspInstance {
    pub vars: Vec<(VarId, Domain)>,
    pub constraints: Vec<Arc<Constraint>>,
}

impl CspInstance {
    pub fn agent_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<AgentId> = self.vars.iter().map(|(v, _)| v.owner).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Total assignments in the cross product of all domains.
    pub fn search_space(&self) -> u64 {
        self.vars
            .iter()
            .map(|(_, d)| d.len() as u64)
            .product()
    }

    /// True iff `assignment` binds every variable and satisfies every
    /// constraint.
    pub fn is_solution(&self, assignment: &BTreeMap<VarId, Value>) -> bool {
        if self.vars.iter().any(|(v, _)| !assignment.contains_key(v)) {
            return false;
        }
        let mut view = AgentView::new();
        for (var, value) in assignment {
            view.update(Assignment::new(*var, *value, PriorityValue(0)));
        }
        let mut scratch = CheckCounter::new();
        self.constraints
            .iter()
            .all(|c| evaluate(c, &view, &mut scratch) == Eval::Satisfied)
    }
}

/// Exhaustive search over the full cross product; returns the first
/// satisfying assignment in lexicographic domain order, or `None` when the
/// instance is unsatisfiable.
pub fn brute_force_solve(instance: &CspInstance) -> Option<BTreeMap<VarId, Value>> {
    let n = instance.vars.len();
    let mut indices = vec![0usize; n];
    let mut view = AgentView::new();
    let mut scratch = CheckCounter::new();
    'outer: loop {
        let mut assignment = BTreeMap::new();
        for (i, (var, domain)) in instance.vars.iter().enumerate() {
            let value = domain.values()[indices[i]];
            assignment.insert(*var, value);
            view.update(Assignment::new(*var, value, PriorityValue(0)));
        }
        if instance
            .constraints
            .iter()
            .all(|c| evaluate(c, &view, &mut scratch) != Eval::Violated)
        {
            return Some(assignment);
        }
        // Odometer increment over the index vector.
        for i in (0..n).rev() {
            indices[i] += 1;
            if indices[i] < instance.vars[i].1.len() {
                continue 'outer;
            }
            indices[i] = 0;
        }
        return None;
    }
}

/// Descending ratio-valued domain `[k, k-1, ..., 1]`.
fn abstract_domain(k: usize) -> Domain {
    Domain::new((1..=k).rev().map(|v| Value::ratio(v as f64)).collect()).expect("valid domain")
}

/// Random binary table constraint: each value pair is forbidden with the
/// given tightness.
fn random_table_constraint(
    cid: u64,
    a: VarId,
    b: VarId,
    da: &Domain,
    db: &Domain,
    tightness: f64,
    rng: &mut ChaCha8Rng,
) -> Arc<Constraint> {
    let mut forbidden: Vec<(Value, Value)> = Vec::new();
    for va in da.values() {
        for vb in db.values() {
            if rng.random_bool(tightness) {
                forbidden.push((*va, *vb));
            }
        }
    }
    // Scope is sorted inside Constraint::new; keep the predicate aligned.
    let (lo, hi, swap) = if a < b { (a, b, false) } else { (b, a, true) };
    let _ = (lo, hi);
    Arc::new(Constraint::new(cid, vec![a, b], move |vals| {
        let (va, vb) = if swap { (vals[1], vals[0]) } else { (vals[0], vals[1]) };
        !forbidden.iter().any(|(fa, fb)| *fa == va && *fb == vb)
    }))
}

/// Parameters of the random binary instance family used by the equivalence
/// suites: 3-6 agents with one variable each, 2-5 values, random binary
/// constraints.
#[derive(Debug, Clone, Copy)]
pub struct SingleFamily {
    pub agents: (u32, u32),
    pub domain_size: (usize, usize),
    pub density: f64,
    pub tightness: f64,
}

impl Default for SingleFamily {
    fn default() -> Self {
        SingleFamily {
            agents: (3, 6),
            domain_size: (2, 5),
            density: 0.6,
            tightness: 0.35,
        }
    }
}

/// Seeded random single-variable-per-agent instance.
pub fn random_single_instance(seed: u64, family: SingleFamily) -> CspInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(family.agents.0..=family.agents.1);
    let vars: Vec<(VarId, Domain)> = (0..n)
        .map(|i| {
            let k = rng.random_range(family.domain_size.0..=family.domain_size.1);
            (VarId::new(AgentId(i), 0), abstract_domain(k))
        })
        .collect();
    let mut constraints = Vec::new();
    let mut cid = 0;
    for i in 0..vars.len() {
        for j in (i + 1)..vars.len() {
            if rng.random_bool(family.density) {
                let (a, da) = (&vars[i].0, &vars[i].1);
                let (b, db) = (&vars[j].0, &vars[j].1);
                constraints.push(random_table_constraint(
                    cid,
                    *a,
                    *b,
                    da,
                    db,
                    family.tightness,
                    &mut rng,
                ));
                cid += 1;
            }
        }
    }
    CspInstance { vars, constraints }
}

/// Parameters of the random two-local-variable family for the multi-variable
/// equivalence suite.
#[derive(Debug, Clone, Copy)]
pub struct MultiFamily {
    pub agents: (u32, u32),
    pub locals_per_agent: u32,
    pub domain_size: (usize, usize),
    pub inter_density: f64,
    pub intra_density: f64,
    pub tightness: f64,
}

impl Default for MultiFamily {
    fn default() -> Self {
        MultiFamily {
            agents: (2, 4),
            locals_per_agent: 2,
            domain_size: (2, 4),
            inter_density: 0.5,
            intra_density: 0.8,
            tightness: 0.3,
        }
    }
}

/// Seeded random instance with several local variables per agent, mixing
/// intra-agent and inter-agent binary constraints.
pub fn random_multi_instance(seed: u64, family: MultiFamily) -> CspInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(family.agents.0..=family.agents.1);
    let mut vars: Vec<(VarId, Domain)> = Vec::new();
    for a in 0..n {
        for l in 0..family.locals_per_agent {
            let k = rng.random_range(family.domain_size.0..=family.domain_size.1);
            vars.push((VarId::new(AgentId(a), l), abstract_domain(k)));
        }
    }
    let mut constraints = Vec::new();
    let mut cid = 0;
    for i in 0..vars.len() {
        for j in (i + 1)..vars.len() {
            let same_agent = vars[i].0.owner == vars[j].0.owner;
            let density = if same_agent {
                family.intra_density
            } else {
                family.inter_density
            };
            if rng.random_bool(density) {
                constraints.push(random_table_constraint(
                    cid,
                    vars[i].0,
                    vars[j].0,
                    &vars[i].1,
                    &vars[j].1,
                    family.tightness,
                    &mut rng,
                ));
                cid += 1;
            }
        }
    }
    CspInstance { vars, constraints }
}

/// Remaps a multi-variable instance so every local variable becomes its own
/// single-variable agent. The map `(agent a, local l) -> agent a*L + l`
/// preserves variable ordering, so constraint predicates stay aligned.
pub fn split_locals(instance: &CspInstance, locals_per_agent: u32) -> CspInstance {
    let remap = move |v: VarId| VarId::new(AgentId(v.owner.0 * locals_per_agent + v.local_index), 0);
    let vars = instance
        .vars
        .iter()
        .map(|(v, d)| (remap(*v), d.clone()))
        .collect();
    let constraints = instance
        .constraints
        .iter()
        .map(|c| {
            let scope: Vec<VarId> = c.scope().iter().map(|v| remap(*v)).collect();
            let inner = c.clone();
            Arc::new(Constraint::new(c.cid(), scope, move |vals| {
                // Scope order is preserved by the monotone remap.
                let mut scratch = CheckCounter::new();
                let shadow: Vec<(VarId, Value)> = inner
                    .scope()
                    .iter()
                    .zip(vals.iter())
                    .map(|(v, x)| (*v, *x))
                    .collect();
                let overlay = crate::dcsp::Overlay::new(&EmptySource, &shadow);
                evaluate(&inner, &overlay, &mut scratch) == Eval::Satisfied
            }))
        })
        .collect();
    CspInstance { vars, constraints }
}

struct EmptySource;

impl crate::dcsp::Assignments for EmptySource {
    fn value_for(&self, _var: VarId) -> Option<Value> {
        None
    }
}

/// Ratio helper used across test fixtures.
pub fn ratio(v: f64) -> Value {
    Value::from_micros((v * 1e6).round() as i64, Unit::Ratio)
}
