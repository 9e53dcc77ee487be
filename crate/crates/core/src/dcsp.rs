//! Distributed-CSP substrate: variables, discrete domains, constraints,
//! assignments, agent views, nogoods, priority ordering and constraint-check
//! counting.
//!
//! Everything here is a pure value type or a pure function; the only mutation
//! is the explicit [`CheckCounter`] passed by the caller.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of one agent (a CR, a PU, or an abstract test agent).
///
/// The numeric value doubles as the agreed-upon tie-break convention: at equal
/// priority values, the agent with the *lower* id ranks higher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CR{}", self.0)
    }
}

/// Identifier of one variable: the owning agent plus a local index.
///
/// Local index 0 is power and local index 1 is rate in the multi-variable
/// CDMA case; single-variable agents always use index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId {
    pub owner: AgentId,
    pub local_index: u32,
}

impl VarId {
    pub fn new(owner: AgentId, local_index: u32) -> Self {
        VarId { owner, local_index }
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.owner, self.local_index)
    }
}

/// Measurement unit carried by a [`Value`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Unit {
    MilliWatt,
    BitPerSec,
    /// Dimensionless quantity (ratios, abstract test domains).
    Ratio,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::MilliWatt => write!(f, "mW"),
            Unit::BitPerSec => write!(f, "bit/s"),
            Unit::Ratio => Ok(()),
        }
    }
}

/// An exact scalar: millionths of its unit, stored as an integer.
///
/// Constraint predicates never compare floating-point values for equality;
/// domains, views and nogoods all work on this fixed-point representation.
/// Conversion to `f64` happens only at the arithmetic boundary (SINR and
/// interference sums) and at I/O.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Value {
    micros: i64,
    unit: Unit,
}

impl Value {
    pub fn from_micros(micros: i64, unit: Unit) -> Self {
        Value { micros, unit }
    }

    pub fn milliwatts(mw: f64) -> Self {
        Value::from_micros((mw * 1e6).round() as i64, Unit::MilliWatt)
    }

    pub fn bits_per_sec(bps: f64) -> Self {
        Value::from_micros((bps * 1e6).round() as i64, Unit::BitPerSec)
    }

    pub fn ratio(r: f64) -> Self {
        Value::from_micros((r * 1e6).round() as i64, Unit::Ratio)
    }

    pub fn micros(&self) -> i64 {
        self.micros
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// Scalar magnitude in whole units (mW, bit/s, ...).
    pub fn as_f64(&self) -> f64 {
        self.micros as f64 * 1e-6
    }

    pub fn is_zero(&self) -> bool {
        self.micros == 0
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            Unit::Ratio => write!(f, "{}", self.as_f64()),
            u => write!(f, "{} {}", self.as_f64(), u),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("domain must not be empty")]
    Empty,
    #[error("domain values must share one unit")]
    MixedUnits,
    #[error("domain values must be strictly descending (preference order)")]
    NotDescending,
}

/// Finite discrete domain, stored in descending preference order: the first
/// element is the most preferred (maximum power, maximum rate).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    values: Vec<Value>,
}

impl Domain {
    pub fn new(values: Vec<Value>) -> Result<Self, DomainError> {
        if values.is_empty() {
            return Err(DomainError::Empty);
        }
        let unit = values[0].unit();
        if values.iter().any(|v| v.unit() != unit) {
            return Err(DomainError::MixedUnits);
        }
        if values.windows(2).any(|w| w[0] <= w[1]) {
            return Err(DomainError::NotDescending);
        }
        Ok(Domain { values })
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Most preferred value (head of the preference order).
    pub fn first(&self) -> Value {
        self.values[0]
    }

    pub fn contains(&self, v: &Value) -> bool {
        self.values.contains(v)
    }

    pub fn unit(&self) -> Unit {
        self.values[0].unit()
    }

    /// Keeps only the values at or below `cap`, preserving order.
    pub fn truncate_at(&self, cap: Value) -> Result<Self, DomainError> {
        Domain::new(self.values.iter().copied().filter(|v| *v <= cap).collect())
    }
}

/// Dynamic priority of one variable. Starts at 0 and only ever increases
/// within a run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct PriorityValue(pub u64);

/// One variable bound to one value at one priority: the unit of information
/// exchanged in *ok?* messages and recorded in views and nogoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub var: VarId,
    pub value: Value,
    pub priority: PriorityValue,
}

impl Assignment {
    pub fn new(var: VarId, value: Value, priority: PriorityValue) -> Self {
        Assignment {
            var,
            value,
            priority,
        }
    }
}

/// Total priority order over variables: larger priority value wins, then
/// lower agent id, then lower local index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorityKey {
    pub priority: PriorityValue,
    pub var: VarId,
}

impl PriorityKey {
    pub fn new(priority: PriorityValue, var: VarId) -> Self {
        PriorityKey { priority, var }
    }
}

impl Ord for PriorityKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .cmp(&other.priority)
            .then_with(|| other.var.owner.cmp(&self.var.owner))
            .then_with(|| other.var.local_index.cmp(&self.var.local_index))
    }
}

impl PartialOrd for PriorityKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Compares two (priority, variable) pairs; `Greater` means the first ranks
/// higher in the agreed order.
pub fn priority_order(a: &PriorityKey, b: &PriorityKey) -> Ordering {
    a.cmp(b)
}

/// The latest known assignments of other agents' variables.
///
/// Replacing an entry keeps the newest value but never lowers the stored
/// priority: under delayed delivery an *ok?* carrying an older priority still
/// wins on value (per-pair FIFO guarantees it is the most recent value from
/// that sender) while priorities stay monotone.
#[derive(Debug, Clone, Default)]
pub struct AgentView {
    entries: BTreeMap<VarId, Assignment>,
}

impl AgentView {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `a`, returning true when the visible entry changed.
    pub fn update(&mut self, a: Assignment) -> bool {
        match self.entries.get_mut(&a.var) {
            Some(existing) => {
                let merged = Assignment {
                    var: a.var,
                    value: a.value,
                    priority: existing.priority.max(a.priority),
                };
                let changed = *existing != merged;
                *existing = merged;
                changed
            }
            None => {
                self.entries.insert(a.var, a);
                true
            }
        }
    }

    /// Raises the stored priority of `var` to at least `priority`; values are
    /// untouched. No-op for unknown variables.
    pub fn raise_priority(&mut self, var: VarId, priority: PriorityValue) {
        if let Some(existing) = self.entries.get_mut(&var) {
            existing.priority = existing.priority.max(priority);
        }
    }

    pub fn get(&self, var: VarId) -> Option<&Assignment> {
        self.entries.get(&var)
    }

    pub fn value_of(&self, var: VarId) -> Option<Value> {
        self.entries.get(&var).map(|a| a.value)
    }

    pub fn key_of(&self, var: VarId) -> Option<PriorityKey> {
        self.entries.get(&var).map(|a| PriorityKey::new(a.priority, var))
    }

    pub fn entries(&self) -> impl Iterator<Item = &Assignment> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_priority(&self) -> PriorityValue {
        self.entries
            .values()
            .map(|a| a.priority)
            .max()
            .unwrap_or_default()
    }
}

/// A set of assignments known to admit no consistent extension.
///
/// Equality and ordering consider only the (variable, value) pairs: two
/// nogoods over the same combination are the same inference even when the
/// recorded priorities differ. The priorities ride along because Algorithm
/// 1's nogood handler feeds them back into the receiver's view.
#[derive(Debug, Clone, Default)]
pub struct Nogood {
    members: BTreeMap<VarId, (Value, PriorityValue)>,
}

impl Nogood {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_assignments<I: IntoIterator<Item = Assignment>>(iter: I) -> Self {
        let mut ng = Nogood::new();
        for a in iter {
            ng.insert(a);
        }
        ng
    }

    pub fn insert(&mut self, a: Assignment) {
        self.members.insert(a.var, (a.value, a.priority));
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> impl Iterator<Item = Assignment> + '_ {
        self.members
            .iter()
            .map(|(var, (value, priority))| Assignment::new(*var, *value, *priority))
    }

    pub fn contains_var(&self, var: VarId) -> bool {
        self.members.contains_key(&var)
    }

    pub fn value_of(&self, var: VarId) -> Option<Value> {
        self.members.get(&var).map(|(v, _)| *v)
    }

    /// Agents that own at least one member variable.
    pub fn owners(&self) -> BTreeSet<AgentId> {
        self.members.keys().map(|v| v.owner).collect()
    }
}

impl PartialEq for Nogood {
    fn eq(&self, other: &Self) -> bool {
        self.members.len() == other.members.len()
            && self
                .members
                .iter()
                .zip(other.members.iter())
                .all(|((va, (xa, _)), (vb, (xb, _)))| va == vb && xa == xb)
    }
}

impl Eq for Nogood {}

impl Ord for Nogood {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.members.iter().map(|(v, (x, _))| (*v, *x));
        let rhs = other.members.iter().map(|(v, (x, _))| (*v, *x));
        lhs.cmp(rhs)
    }
}

impl PartialOrd for Nogood {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Nogood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (var, (value, _))) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}={}", var, value)?;
        }
        write!(f, "}}")
    }
}

/// Counts full-scope constraint evaluations, the unit of the NCCC metric.
#[derive(Debug, Default, Clone, Copy)]
pub struct CheckCounter(u64);

impl CheckCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bump(&mut self) {
        self.0 += 1;
    }

    pub fn get(&self) -> u64 {
        self.0
    }
}

/// Outcome of evaluating a constraint against a (possibly partial) view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eval {
    Satisfied,
    Violated,
    /// Some scope variable has no entry in the view.
    Undetermined,
}

/// Source of variable bindings for constraint evaluation. Implemented by
/// [`AgentView`] directly and by overlays that shadow a few variables with
/// candidate values.
pub trait Assignments {
    fn value_for(&self, var: VarId) -> Option<Value>;
}

impl Assignments for AgentView {
    fn value_for(&self, var: VarId) -> Option<Value> {
        self.value_of(var)
    }
}

/// A base binding source with a small set of shadowing entries on top.
pub struct Overlay<'a, S: Assignments> {
    base: &'a S,
    shadow: &'a [(VarId, Value)],
}

impl<'a, S: Assignments> Overlay<'a, S> {
    pub fn new(base: &'a S, shadow: &'a [(VarId, Value)]) -> Self {
        Overlay { base, shadow }
    }
}

impl<S: Assignments> Assignments for Overlay<'_, S> {
    fn value_for(&self, var: VarId) -> Option<Value> {
        self.shadow
            .iter()
            .find(|(v, _)| *v == var)
            .map(|(_, x)| *x)
            .or_else(|| self.base.value_for(var))
    }
}

/// A predicate over a fixed variable scope.
///
/// The predicate receives the scope's values in ascending [`VarId`] order and
/// must be deterministic and side-effect-free.
#[derive(Clone)]
pub struct Constraint {
    cid: u64,
    scope: Vec<VarId>,
    pred: Arc<dyn Fn(&[Value]) -> bool + Send + Sync>,
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint")
            .field("cid", &self.cid)
            .field("scope", &self.scope)
            .finish()
    }
}

impl Constraint {
    pub fn new(
        cid: u64,
        mut scope: Vec<VarId>,
        pred: impl Fn(&[Value]) -> bool + Send + Sync + 'static,
    ) -> Self {
        scope.sort_unstable();
        scope.dedup();
        Constraint {
            cid,
            scope,
            pred: Arc::new(pred),
        }
    }

    pub fn cid(&self) -> u64 {
        self.cid
    }

    /// Scope variables in ascending order.
    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn mentions(&self, var: VarId) -> bool {
        self.scope.binary_search(&var).is_ok()
    }

    /// Raw predicate application over scope-ordered values; the caller is
    /// responsible for check counting.
    pub fn satisfied_by(&self, vals: &[Value]) -> bool {
        debug_assert_eq!(vals.len(), self.scope.len());
        (self.pred)(vals)
    }
}

/// Evaluates `constraint` against `view`. Returns [`Eval::Undetermined`] iff
/// some scope variable is unbound; the counter is bumped exactly once per
/// full-scope evaluation.
pub fn evaluate(
    constraint: &Constraint,
    view: &impl Assignments,
    counter: &mut CheckCounter,
) -> Eval {
    let mut vals = Vec::with_capacity(constraint.scope.len());
    for var in &constraint.scope {
        match view.value_for(*var) {
            Some(v) => vals.push(v),
            None => return Eval::Undetermined,
        }
    }
    counter.bump();
    if (constraint.pred)(&vals) {
        Eval::Satisfied
    } else {
        Eval::Violated
    }
}

/// Values of `domain` that make no constraint in `constraints` evaluate to
/// violated when substituted for `var` (undetermined counts as not violated).
/// Domain order is preserved.
pub fn consistent_values(
    domain: &Domain,
    var: VarId,
    view: &impl Assignments,
    constraints: &[Arc<Constraint>],
    counter: &mut CheckCounter,
) -> Vec<Value> {
    domain
        .values()
        .iter()
        .copied()
        .filter(|v| {
            let shadow = [(var, *v)];
            let overlay = Overlay::new(view, &shadow);
            constraints
                .iter()
                .all(|c| evaluate(c, &overlay, counter) != Eval::Violated)
        })
        .collect()
}

/// Picks the candidate minimizing a caller-supplied violation count; ties are
/// broken by candidate order (first wins).
pub fn argmin_by_count(candidates: &[Value], mut count: impl FnMut(Value) -> u64) -> Value {
    assert!(!candidates.is_empty(), "argmin over empty candidate list");
    let mut best = candidates[0];
    let mut best_count = count(best);
    for &v in &candidates[1..] {
        let c = count(v);
        if c < best_count {
            best = v;
            best_count = c;
        }
    }
    best
}

/// Min-conflict value ordering: among `candidates`, the one violating the
/// fewest of `lower_priority_constraints`; ties broken by candidate order.
pub fn min_conflict_value(
    candidates: &[Value],
    var: VarId,
    view: &impl Assignments,
    lower_priority_constraints: &[Arc<Constraint>],
    counter: &mut CheckCounter,
) -> Value {
    argmin_by_count(candidates, |v| {
        let shadow = [(var, v)];
        let overlay = Overlay::new(view, &shadow);
        lower_priority_constraints
            .iter()
            .filter(|c| evaluate(c, &overlay, counter) == Eval::Violated)
            .count() as u64
    })
}
