//! Decentralized QoS provision for cognitive radio networks via asynchronous
//! weak-commitment search.
//!
//! The crate layers a deterministic multi-agent simulator on top of a small
//! distributed-CSP substrate:
//!
//! - [`dcsp`]: variables, discrete domains, constraints, views, nogoods and
//!   the priority order.
//! - [`awcs`]: the single-variable and multi-variable search agents.
//! - [`mailer`]: logical-clock message transport with FIFO lanes, seeded
//!   delays and NCCC/cycle/message metrics.
//! - [`radio`]: path loss, SINR and interference arithmetic, quantized
//!   power/rate domains, scenario generation and file I/O.
//! - [`protocol`]: the staged QoS protocols (PU negotiation, CDMA power and
//!   rate allocation, STDMA partitioning and scheduling).
//! - [`experiments`]: the Monte Carlo sweep harness with CSV and SVG output.
//! - [`oracle`]: brute-force reference solver and seeded instance generators.

pub mod awcs;
pub mod dcsp;
pub mod experiments;
pub mod mailer;
pub mod oracle;
pub mod protocol;
pub mod radio;

pub use awcs::{multi::AwcsMultiAgent, single::AwcsSingleAgent, SolveReport};
pub use dcsp::{
    AgentId, AgentView, Assignment, CheckCounter, Constraint, Domain, Nogood, PriorityKey,
    PriorityValue, Unit, Value, VarId,
};
pub use mailer::{
    nccc_account, Actor, CycleStatus, DcspMessage, DelayPolicy, Envelope, Mailer, MessageCounts,
    RunMetrics, RunOutcome,
};
