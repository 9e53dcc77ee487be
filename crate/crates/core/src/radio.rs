//! Cognitive-radio scenario model: placements, deterministic path loss, SINR
//! and interference arithmetic, quantized power/rate domains, and seeded
//! scenario generation.
//!
//! Scenario files are TOML with the units noted in the emitted header: meters
//! for positions, mW for powers and interference caps, bit/s for rates.
//! Channel gains are dimensionless.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcsp::{AgentId, Domain, DomainError, Unit, Value};

/// Minimum node separation in meters; distances below it are clamped in gain
/// arithmetic and rejected during placement.
pub const MIN_NODE_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("co-located nodes: distance {0} m is not positive")]
    CoLocated(f64),
    #[error("degenerate placement persisted after {0} retries")]
    DegeneratePlacement(u32),
    #[error("scenario needs at least one CR link")]
    NoLinks,
    #[error("invalid domain: {0}")]
    Domain(#[from] DomainError),
    #[error("invalid gain table: {0}")]
    Gains(String),
    #[error("rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("power step {step} mW must be in (0, {budget}] mW")]
    BadPowerStep { step: f64, budget: f64 },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
}

/// Which QoS problem the scenario instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    #[serde(alias = "cdma-eq", alias = "cdma-equal")]
    CdmaEqualRate,
    #[serde(alias = "cdma-uneq", alias = "cdma-unequal")]
    CdmaUnequalRate,
    Stdma,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::CdmaEqualRate => write!(f, "cdma-eq"),
            Mode::CdmaUnequalRate => write!(f, "cdma-uneq"),
            Mode::Stdma => write!(f, "stdma"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cdma-eq" | "cdma-equal" | "cdma-equal-rate" => Ok(Mode::CdmaEqualRate),
            "cdma-uneq" | "cdma-unequal" | "cdma-unequal-rate" => Ok(Mode::CdmaUnequalRate),
            "stdma" => Ok(Mode::Stdma),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// One CR transmitter-receiver pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrLink {
    pub id: u32,
    pub tx: [f64; 2],
    pub rx: [f64; 2],
    pub power_budget_mw: f64,
    pub power_step_mw: f64,
    /// Required SINR at the receiver, a dimensionless ratio.
    pub sinr_threshold: f64,
    /// Minimum time slots per frame (STDMA).
    #[serde(default = "one")]
    pub demand_slots: u32,
    #[serde(default)]
    pub rate_min_bps: f64,
    #[serde(default)]
    pub rate_max_bps: f64,
    #[serde(default)]
    pub rate_step_bps: f64,
}

fn one() -> u32 {
    1
}

impl CrLink {
    pub fn agent(&self) -> AgentId {
        AgentId(self.id)
    }
}

/// One PU receiver with its interference cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PuLink {
    pub id: u32,
    pub rx: [f64; 2],
    pub interference_cap_mw: f64,
}

impl PuLink {
    pub fn agent(&self) -> AgentId {
        AgentId(self.id)
    }
}

/// Channel gains: `cr_to_cr[i][j]` is CR j's transmitter into CR i's
/// receiver (the diagonal is the direct link gain); `cr_to_pu[k][i]` is CR
/// i's transmitter into PU k's receiver. PU transmitters are not modeled
/// individually; their interference enters each CR's noise floor through
/// `pu_noise_mw`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct GainTable {
    pub cr_to_cr: Vec<Vec<f64>>,
    pub cr_to_pu: Vec<Vec<f64>>,
    pub pu_noise_mw: Vec<f64>,
}

impl GainTable {
    fn validate(&self, n_cr: usize, n_pu: usize) -> Result<(), ScenarioError> {
        let square = self.cr_to_cr.len() == n_cr
            && self.cr_to_cr.iter().all(|row| row.len() == n_cr);
        if !square {
            return Err(ScenarioError::Gains(format!(
                "cr_to_cr must be {n_cr}x{n_cr}"
            )));
        }
        if self.cr_to_pu.len() != n_pu || self.cr_to_pu.iter().any(|row| row.len() != n_cr) {
            return Err(ScenarioError::Gains(format!(
                "cr_to_pu must be {n_pu}x{n_cr}"
            )));
        }
        if self.pu_noise_mw.len() != n_cr {
            return Err(ScenarioError::Gains(format!("pu_noise_mw must have {n_cr} entries")));
        }
        let positive = self
            .cr_to_cr
            .iter()
            .chain(self.cr_to_pu.iter())
            .flatten()
            .all(|g| g.is_finite() && *g > 0.0);
        if !positive {
            return Err(ScenarioError::Gains("all gains must be positive and finite".into()));
        }
        Ok(())
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub mode: Mode,
    /// Generator seed, echoed into every output; 0 for hand-built scenarios.
    pub seed: u64,
    pub noise_floor_mw: f64,
    pub spreading_gain: f64,
    /// Slots per frame (STDMA only).
    #[serde(default)]
    pub frame_slots: u32,
    pub cr: Vec<CrLink>,
    #[serde(default)]
    pub pu: Vec<PuLink>,
    pub gains: GainTable,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.cr.is_empty() {
            return Err(ScenarioError::NoLinks);
        }
        self.gains.validate(self.cr.len(), self.pu.len())
    }

    pub fn n_cr(&self) -> usize {
        self.cr.len()
    }

    pub fn n_pu(&self) -> usize {
        self.pu.len()
    }

    /// Index of a CR link by agent id.
    pub fn cr_index(&self, agent: AgentId) -> Option<usize> {
        self.cr.iter().position(|c| c.id == agent.0)
    }

    /// Effective noise floor at CR i's receiver: thermal floor plus the
    /// constant PU interference column.
    pub fn effective_noise_mw(&self, i: usize) -> f64 {
        self.noise_floor_mw + self.gains.pu_noise_mw[i]
    }

    /// SINR at CR i's receiver given all CR transmit powers in mW.
    pub fn sinr(&self, i: usize, powers_mw: &[f64]) -> f64 {
        let mut interference = self.effective_noise_mw(i);
        for (j, p) in powers_mw.iter().enumerate() {
            if j != i && *p > 0.0 {
                interference += self.gains.cr_to_cr[i][j] * p;
            }
        }
        self.gains.cr_to_cr[i][i] * powers_mw[i] / interference
    }

    /// Aggregate CR interference at PU k's receiver in mW.
    pub fn pu_interference_mw(&self, k: usize, powers_mw: &[f64]) -> f64 {
        self.gains.cr_to_pu[k]
            .iter()
            .zip(powers_mw.iter())
            .map(|(h, p)| h * p)
            .sum()
    }

    /// Quantized power domain of CR i.
    pub fn power_domain(&self, i: usize) -> Result<Domain, ScenarioError> {
        power_domain(self.cr[i].power_budget_mw, self.cr[i].power_step_mw)
    }

    /// Quantized rate domain of CR i (unequal-rate CDMA).
    pub fn rate_domain(&self, i: usize) -> Result<Domain, ScenarioError> {
        let link = &self.cr[i];
        rate_domain(link.rate_max_bps, link.rate_min_bps, link.rate_step_bps)
    }

    /// SINR required to sustain rate `r` on link i: the threshold scales
    /// linearly from its anchor at the minimum rate.
    pub fn rate_sinr_requirement(&self, i: usize, rate_bps: f64) -> f64 {
        let link = &self.cr[i];
        link.sinr_threshold * (rate_bps / link.rate_min_bps)
    }

    /// Serializes the scenario with a unit header.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string_pretty(self).expect("scenario serializes");
        format!(
            "# crqos scenario\n# units: positions m, power/interference mW, rates bit/s, gains dimensionless\n{body}"
        )
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let scenario: Scenario = toml::from_str(text)?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let scenario = Self::from_toml(&text).map_err(|source| ScenarioError::Parse {
            path: path.display().to_string(),
            source: Box::new(source),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Deterministic path gain `1 / (B * d^4)` with the distance clamped at
/// [`MIN_NODE_DISTANCE_M`]. Requires `d > 0`.
pub fn path_gain(d_m: f64, spreading_gain: f64) -> f64 {
    assert!(d_m > 0.0, "path_gain needs a positive distance");
    let d = d_m.max(MIN_NODE_DISTANCE_M);
    1.0 / (spreading_gain * d.powi(4))
}

/// Descending quantized power levels `[P_max, P_max - step, ...]` down to the
/// smallest positive level, plus the terminal 0 mW (silenced CR).
pub fn power_domain(budget_mw: f64, step_mw: f64) -> Result<Domain, ScenarioError> {
    if !(step_mw > 0.0 && step_mw <= budget_mw) {
        return Err(ScenarioError::BadPowerStep {
            step: step_mw,
            budget: budget_mw,
        });
    }
    let step = Value::milliwatts(step_mw).micros();
    let mut level = Value::milliwatts(budget_mw).micros();
    let mut values = Vec::new();
    while level > 0 {
        values.push(Value::from_micros(level, Unit::MilliWatt));
        level -= step;
    }
    values.push(Value::from_micros(0, Unit::MilliWatt));
    Ok(Domain::new(values)?)
}

/// Descending quantized rates `[R_max, R_max - step, ...]` with the terminal
/// R_min anchor.
pub fn rate_domain(max_bps: f64, min_bps: f64, step_bps: f64) -> Result<Domain, ScenarioError> {
    if min_bps <= 0.0 {
        return Err(ScenarioError::NonPositiveRate(min_bps));
    }
    if !(step_bps > 0.0 && min_bps <= max_bps) {
        return Err(ScenarioError::BadPowerStep {
            step: step_bps,
            budget: max_bps,
        });
    }
    let step = Value::bits_per_sec(step_bps).micros();
    let floor = Value::bits_per_sec(min_bps).micros();
    let mut level = Value::bits_per_sec(max_bps).micros();
    let mut values = Vec::new();
    while level > floor {
        values.push(Value::from_micros(level, Unit::BitPerSec));
        level -= step;
    }
    values.push(Value::from_micros(floor, Unit::BitPerSec));
    Ok(Domain::new(values)?)
}

/// Proportional-fairness objective `sum ln R_i`.
pub fn objective_log_rate(rates_bps: &[f64]) -> Result<f64, ScenarioError> {
    let mut sum = 0.0;
    for r in rates_bps {
        if *r <= 0.0 {
            return Err(ScenarioError::NonPositiveRate(*r));
        }
        sum += r.ln();
    }
    Ok(sum)
}

/// Generator knobs. Budget, step and the propagation model defaults follow
/// the simulation setup; every other range is declared here and overridable
/// from config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub area_side_m: f64,
    pub pair_dist_m: (f64, f64),
    pub noise_floor_mw: f64,
    pub spreading_gain: f64,
    pub power_budget_mw: f64,
    pub power_step_mw: f64,
    /// CR SINR thresholds are drawn uniformly from this ratio interval.
    pub sinr_range: (f64, f64),
    /// PU interference caps are drawn uniformly from this mW interval.
    pub pu_cap_range_mw: (f64, f64),
    /// Constant PU interference folded into each CR's noise floor, per PU.
    pub pu_ambient_mw: f64,
    pub rate_min_bps: f64,
    pub rate_max_bps: f64,
    pub rate_step_bps: f64,
    pub demand_range: (u32, u32),
    pub frame_slots: u32,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            area_side_m: 1000.0,
            pair_dist_m: (10.0, 100.0),
            noise_floor_mw: 1e-6,
            spreading_gain: 128.0,
            power_budget_mw: 100.0,
            power_step_mw: 2.0,
            sinr_range: (0.002, 0.01),
            pu_cap_range_mw: (5e-9, 5e-8),
            pu_ambient_mw: 1e-6,
            rate_min_bps: 250_000.0,
            rate_max_bps: 1_000_000.0,
            rate_step_bps: 125_000.0,
            demand_range: (1, 3),
            frame_slots: 64,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

const PLACEMENT_RETRIES: u32 = 100;

/// Seeded scenario generation: CR transmitters uniform in the square, each
/// receiver at a uniform distance within the configured pair range, PU
/// receivers uniform in the square. Gains come from [`path_gain`]; caps,
/// thresholds and demands are sampled from the configured intervals.
pub fn generate_scenario(
    seed: u64,
    n_cr: usize,
    n_pu: usize,
    mode: Mode,
    params: &ScenarioParams,
) -> Result<Scenario, ScenarioError> {
    if n_cr == 0 {
        return Err(ScenarioError::NoLinks);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = params.area_side_m;
    let mut nodes: Vec<[f64; 2]> = Vec::new();
    let place = |rng: &mut ChaCha8Rng, nodes: &[[f64; 2]]| -> Result<[f64; 2], ScenarioError> {
        for _ in 0..PLACEMENT_RETRIES {
            let p = [rng.random_range(0.0..side), rng.random_range(0.0..side)];
            if nodes.iter().all(|q| dist(p, *q) >= MIN_NODE_DISTANCE_M) {
                return Ok(p);
            }
        }
        Err(ScenarioError::DegeneratePlacement(PLACEMENT_RETRIES))
    };

    let mut cr = Vec::with_capacity(n_cr);
    for i in 0..n_cr {
        let tx = place(&mut rng, &nodes)?;
        nodes.push(tx);
        let rx = {
            let mut found = None;
            for _ in 0..PLACEMENT_RETRIES {
                let d = rng.random_range(params.pair_dist_m.0..=params.pair_dist_m.1);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let p = [tx[0] + d * theta.cos(), tx[1] + d * theta.sin()];
                if nodes.iter().all(|q| dist(p, *q) >= MIN_NODE_DISTANCE_M) {
                    found = Some(p);
                    break;
                }
            }
            found.ok_or(ScenarioError::DegeneratePlacement(PLACEMENT_RETRIES))?
        };
        nodes.push(rx);
        cr.push(CrLink {
            id: i as u32,
            tx,
            rx,
            power_budget_mw: params.power_budget_mw,
            power_step_mw: params.power_step_mw,
            sinr_threshold: rng.random_range(params.sinr_range.0..=params.sinr_range.1),
            demand_slots: rng.random_range(params.demand_range.0..=params.demand_range.1),
            rate_min_bps: params.rate_min_bps,
            rate_max_bps: params.rate_max_bps,
            rate_step_bps: params.rate_step_bps,
        });
    }

    let mut pu = Vec::with_capacity(n_pu);
    for k in 0..n_pu {
        let rx = place(&mut rng, &nodes)?;
        nodes.push(rx);
        pu.push(PuLink {
            id: (n_cr + k) as u32,
            rx,
            interference_cap_mw: rng
                .random_range(params.pu_cap_range_mw.0..=params.pu_cap_range_mw.1),
        });
    }

    let cr_to_cr = (0..n_cr)
        .map(|i| {
            (0..n_cr)
                .map(|j| path_gain(dist(cr[j].tx, cr[i].rx), params.spreading_gain))
                .collect()
        })
        .collect();
    let cr_to_pu = (0..n_pu)
        .map(|k| {
            (0..n_cr)
                .map(|i| path_gain(dist(cr[i].tx, pu[k].rx), params.spreading_gain))
                .collect()
        })
        .collect();
    let pu_noise_mw = vec![params.pu_ambient_mw * n_pu as f64; n_cr];

    let scenario = Scenario {
        mode,
        seed,
        noise_floor_mw: params.noise_floor_mw,
        spreading_gain: params.spreading_gain,
        frame_slots: params.frame_slots,
        cr,
        pu,
        gains: GainTable {
            cr_to_cr,
            cr_to_pu,
            pu_noise_mw,
        },
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Access patterns Q with their slot counts: one frame's worth of schedule.
///
/// `patterns[s]` is the set of CRs active in pattern s and `slots[s]` the
/// number of consecutive slots (`y_s`) it occupies; patterns are listed in
/// transmission order. `set_order` gives the rotation order of the partition
/// sets for this frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub patterns: Vec<BTreeSet<u32>>,
    pub slots: Vec<u32>,
    pub set_order: Vec<u32>,
    pub rotation_index: u64,
}

impl FrameSchedule {
    /// Slots granted to one CR across the frame.
    pub fn granted(&self, cr: u32) -> u32 {
        self.patterns
            .iter()
            .zip(self.slots.iter())
            .filter(|(p, _)| p.contains(&cr))
            .map(|(_, y)| *y)
            .sum()
    }

    /// Total slots used by the frame.
    pub fn slots_used(&self) -> u32 {
        self.slots.iter().sum()
    }

    /// The binary activity matrix Q (`q[i][s]`) over `links` in the given
    /// order.
    pub fn q_matrix(&self, links: &[u32]) -> Vec<Vec<u8>> {
        links
            .iter()
            .map(|i| {
                self.patterns
                    .iter()
                    .map(|p| u8::from(p.contains(i)))
                    .collect()
            })
            .collect()
    }

    /// Expands patterns into one active-set per slot.
    pub fn per_slot(&self) -> Vec<BTreeSet<u32>> {
        let mut out = Vec::with_capacity(self.slots_used() as usize);
        for (p, y) in self.patterns.iter().zip(self.slots.iter()) {
            for _ in 0..*y {
                out.push(p.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_gain_values() {
        assert_eq!(path_gain(1.0, 1.0), 1.0);
        assert_eq!(path_gain(2.0, 1.0), 0.0625);
        let g = path_gain(10.0, 128.0);
        assert!((g - 7.8125e-7).abs() < 1e-18, "got {g}");
    }

    #[test]
    fn power_domain_paper_parameters() {
        let d = power_domain(100.0, 2.0).unwrap();
        assert_eq!(d.len(), 51);
        assert_eq!(d.first(), Value::milliwatts(100.0));
        assert_eq!(*d.values().last().unwrap(), Value::milliwatts(0.0));
        assert_eq!(d.values()[49], Value::milliwatts(2.0));
    }

    #[test]
    fn power_domain_coarse_and_offset() {
        let d = power_domain(100.0, 50.0).unwrap();
        let want: Vec<Value> = [100.0, 50.0, 0.0].iter().map(|m| Value::milliwatts(*m)).collect();
        assert_eq!(d.values(), want);
        // Top level is the budget even when it is not a step multiple.
        let d = power_domain(3.0, 2.0).unwrap();
        let want: Vec<Value> = [3.0, 1.0, 0.0].iter().map(|m| Value::milliwatts(*m)).collect();
        assert_eq!(d.values(), want);
    }

    #[test]
    fn power_domain_rejects_bad_step() {
        assert!(power_domain(100.0, 0.0).is_err());
        assert!(power_domain(100.0, 101.0).is_err());
    }

    fn tiny_scenario() -> Scenario {
        Scenario {
            mode: Mode::CdmaEqualRate,
            seed: 0,
            noise_floor_mw: 1e-3,
            spreading_gain: 1.0,
            frame_slots: 0,
            cr: vec![CrLink {
                id: 0,
                tx: [0.0, 0.0],
                rx: [1.0, 0.0],
                power_budget_mw: 100.0,
                power_step_mw: 2.0,
                sinr_threshold: 1.0,
                demand_slots: 1,
                rate_min_bps: 1.0,
                rate_max_bps: 2.0,
                rate_step_bps: 1.0,
            }],
            pu: vec![],
            gains: GainTable {
                cr_to_cr: vec![vec![0.01]],
                cr_to_pu: vec![],
                pu_noise_mw: vec![0.0],
            },
        }
    }

    #[test]
    fn sinr_single_link() {
        let s = tiny_scenario();
        // g = 0.01, p = 100 mW, noise = 1e-3 mW -> SINR 1000
        let got = s.sinr(0, &[100.0]);
        assert!((got - 1000.0).abs() < 1e-9, "got {got}");
        assert_eq!(s.sinr(0, &[0.0]), 0.0);
    }

    #[test]
    fn sinr_two_links_matches_manual_arithmetic() {
        let mut s = tiny_scenario();
        s.cr.push(s.cr[0].clone());
        s.cr[1].id = 1;
        s.gains.cr_to_cr = vec![vec![0.02, 0.001], vec![0.003, 0.04]];
        s.gains.pu_noise_mw = vec![0.0, 0.0];
        let p = [80.0, 60.0];
        let want0 = 0.02 * 80.0 / (1e-3 + 0.001 * 60.0);
        let want1 = 0.04 * 60.0 / (1e-3 + 0.003 * 80.0);
        assert!((s.sinr(0, &p) - want0).abs() < 1e-12);
        assert!((s.sinr(1, &p) - want1).abs() < 1e-12);
    }

    #[test]
    fn pu_interference_examples() {
        let mut s = tiny_scenario();
        s.pu.push(PuLink {
            id: 1,
            rx: [5.0, 5.0],
            interference_cap_mw: 0.05,
        });
        s.gains.cr_to_pu = vec![vec![0.001]];
        assert_eq!(s.pu_interference_mw(0, &[0.0]), 0.0);
        let got = s.pu_interference_mw(0, &[100.0]);
        assert!((got - 0.1).abs() < 1e-15);
    }

    #[test]
    fn pu_interference_matches_naive_loop() {
        let mut s = tiny_scenario();
        s.cr = (0..4)
            .map(|i| {
                let mut c = s.cr[0].clone();
                c.id = i;
                c
            })
            .collect();
        s.gains.cr_to_cr = vec![vec![0.01; 4]; 4];
        s.gains.pu_noise_mw = vec![0.0; 4];
        s.pu.push(PuLink {
            id: 4,
            rx: [5.0, 5.0],
            interference_cap_mw: 0.05,
        });
        s.gains.cr_to_pu = vec![vec![1e-3, 2e-3, 3e-3, 4e-3]];
        let p = [10.0, 20.0, 30.0, 40.0];
        let mut naive = 0.0;
        for i in 0..4 {
            naive += s.gains.cr_to_pu[0][i] * p[i];
        }
        assert!((s.pu_interference_mw(0, &p) - naive).abs() < 1e-15);
    }

    #[test]
    fn rate_requirement_is_linear_from_anchor() {
        let mut s = tiny_scenario();
        s.cr[0].rate_min_bps = 250e3;
        s.cr[0].rate_max_bps = 1e6;
        s.cr[0].sinr_threshold = 2.0;
        assert_eq!(s.rate_sinr_requirement(0, 250e3), 2.0);
        assert_eq!(s.rate_sinr_requirement(0, 500e3), 4.0);
    }

    #[test]
    fn objective_log_rate_values() {
        assert_eq!(objective_log_rate(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let got = objective_log_rate(&[e, e]).unwrap();
        assert!((got - 2.0).abs() < 1e-12);
        assert!(objective_log_rate(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn generate_scenario_is_deterministic() {
        let p = ScenarioParams::default();
        let a = generate_scenario(77, 7, 2, Mode::CdmaEqualRate, &p).unwrap();
        let b = generate_scenario(77, 7, 2, Mode::CdmaEqualRate, &p).unwrap();
        assert_eq!(a.to_toml(), b.to_toml());
        assert_eq!(a.n_cr(), 7);
        assert_eq!(a.n_pu(), 2);
        assert_eq!(a.gains.cr_to_cr.len(), 7);
        assert_eq!(a.gains.cr_to_pu.len(), 2);
        assert_eq!(a.gains.cr_to_pu[0].len(), 7);
    }

    #[test]
    fn generate_scenario_paper_range() {
        let p = ScenarioParams::default();
        for n_cr in [7usize, 12, 20, 30] {
            let s = generate_scenario(n_cr as u64, n_cr, 2, Mode::Stdma, &p).unwrap();
            assert_eq!(s.n_cr(), n_cr);
            for link in &s.cr {
                assert!(link.demand_slots >= 1);
                let d = dist(link.tx, link.rx);
                assert!(d >= p.pair_dist_m.0 - 1e-9 && d <= p.pair_dist_m.1 + 1e-9);
            }
        }
    }

    #[test]
    fn scenario_toml_round_trip() {
        let p = ScenarioParams::default();
        let s = generate_scenario(5, 3, 1, Mode::CdmaUnequalRate, &p).unwrap();
        let text = s.to_toml();
        assert!(text.starts_with("# crqos scenario"));
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(s.to_toml(), back.to_toml());
        assert_eq!(back.mode, Mode::CdmaUnequalRate);
    }

    #[test]
    fn frame_schedule_accounting() {
        let schedule = FrameSchedule {
            patterns: vec![
                [1u32, 2].into_iter().collect(),
                [1u32].into_iter().collect(),
                [3u32].into_iter().collect(),
            ],
            slots: vec![1, 2, 1],
            set_order: vec![1, 3],
            rotation_index: 0,
        };
        assert_eq!(schedule.granted(1), 3);
        assert_eq!(schedule.granted(2), 1);
        assert_eq!(schedule.granted(3), 1);
        assert_eq!(schedule.slots_used(), 4);
        assert_eq!(schedule.per_slot().len(), 4);
        let q = schedule.q_matrix(&[1, 2, 3]);
        assert_eq!(q[0], vec![1, 1, 0]);
        assert_eq!(q[1], vec![1, 0, 0]);
        assert_eq!(q[2], vec![0, 0, 1]);
    }
}
