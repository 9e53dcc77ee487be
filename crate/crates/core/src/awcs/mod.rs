//! Asynchronous weak-commitment search agents.
//!
//! [`single`] hosts agents owning one variable; [`multi`] hosts agents owning
//! several local variables that announce values only once their local
//! assignment is internally consistent.
//!
//! Both share the same notion of responsibility: a constraint binds on the
//! lowest-ranked variable in its scope (every other scope variable carries a
//! strictly higher priority key). Constraints whose scope is only partially
//! known evaluate to undetermined and never block a value. Stored nogoods are
//! treated exactly like learned constraints, including the priority scoping.

pub mod multi;
pub mod single;

use std::collections::BTreeMap;

use crate::dcsp::{Assignment, Value, VarId};
use crate::mailer::{RunMetrics, RunOutcome};

/// Bounds one batch's local repair iteration; hitting it indicates a search
/// bug rather than a hard instance and is surfaced through the cycle cap.
pub(crate) const LOCAL_REPAIR_BUDGET: usize = 10_000;

/// Result of driving one instance to completion.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub outcome: RunOutcome,
    pub assignment: BTreeMap<VarId, Value>,
    pub metrics: RunMetrics,
    pub satisfied: bool,
}

/// One pass over a variable's whole domain against every constraint and
/// stored nogood; each blocker's foreign values are gathered once. Indexed by
/// domain position and independent of the variable's current value.
pub(crate) struct Scan {
    /// Ruled out by a binding constraint or nogood.
    pub blocked: Vec<bool>,
    /// Violated non-binding blocker count: the min-conflict objective
    /// against lower-priority variables.
    pub lower: Vec<u64>,
    /// Violations ignoring the priority partition.
    pub total: Vec<u64>,
    /// Ruled out by a blocker with no foreign participants.
    pub unconditional: Vec<bool>,
    /// For backtrack: (violated-value mask, foreign participants) per
    /// binding blocker.
    pub justifications: Vec<(Vec<bool>, Vec<Assignment>)>,
}

impl Scan {
    pub fn new(n: usize) -> Self {
        Scan {
            blocked: vec![false; n],
            lower: vec![0; n],
            total: vec![0; n],
            unconditional: vec![false; n],
            justifications: Vec::new(),
        }
    }

    /// Union of binding-blocker participants over values that are not
    /// self-justifying; empty means the variable is stuck unconditionally.
    pub fn resolvent(&self) -> BTreeMap<VarId, Assignment> {
        let mut participants = BTreeMap::new();
        for (mask, parts) in &self.justifications {
            if mask
                .iter()
                .enumerate()
                .any(|(i, hit)| *hit && !self.unconditional[i])
            {
                for a in parts {
                    participants.insert(a.var, *a);
                }
            }
        }
        participants
    }
}
