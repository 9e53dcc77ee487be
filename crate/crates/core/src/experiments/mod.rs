//! Monte Carlo sweep harness: seeded scenario grids, per-run metric rows,
//! aggregate statistics, trend checks and CSV/SVG emission.
//!
//! Grid points and runs are embarrassingly parallel; every run's seed is a
//! pure function of the base seed and the point parameters, and results are
//! merged in deterministic key order, so parallelism never changes a byte of
//! output.

pub mod plot;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mailer::DelayPolicy;
use crate::protocol::{run_protocol, Outcome, ProtocolConfig, ProtocolError};
use crate::radio::{generate_scenario, Mode, ScenarioParams};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep config: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Scenario(#[from] crate::radio::ScenarioError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv at {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// One sweep: the cartesian grid of CR counts, interference thresholds,
/// quantization steps and delay bounds, with `runs_per_point` seeded runs at
/// every point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub runs_per_point: u32,
    pub base_seed: u64,
    pub n_cr: Vec<usize>,
    pub n_pu: usize,
    /// PU interference caps in mW; each point fixes all caps to one value.
    pub thresholds_mw: Vec<f64>,
    pub steps_mw: Vec<f64>,
    pub delay_max: Vec<u64>,
    pub mode: Mode,
    pub cycle_cap: u64,
    pub scenario: ScenarioParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            runs_per_point: 20,
            base_seed: 1,
            n_cr: vec![7],
            n_pu: 2,
            thresholds_mw: vec![2e-8],
            steps_mw: vec![2.0],
            delay_max: vec![0],
            mode: Mode::CdmaEqualRate,
            cycle_cap: 20_000,
            scenario: ScenarioParams::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.runs_per_point == 0 {
            return Err(SweepError::Config("runs_per_point must be >= 1".into()));
        }
        for (name, empty) in [
            ("n_cr", self.n_cr.is_empty()),
            ("thresholds_mw", self.thresholds_mw.is_empty()),
            ("steps_mw", self.steps_mw.is_empty()),
            ("delay_max", self.delay_max.is_empty()),
        ] {
            if empty {
                return Err(SweepError::Config(format!("{name} range is empty")));
            }
        }
        Ok(())
    }

    /// The calibrated family used for trend reproduction: a deployment dense
    /// enough that PU caps and SINR requirements bind at the swept scales.
    pub fn paper_trends() -> Self {
        SweepConfig {
            runs_per_point: 100,
            base_seed: 7,
            n_cr: vec![7, 11, 15, 20, 25, 30],
            n_pu: 2,
            thresholds_mw: vec![1e-8, 3e-8, 8e-8, 2e-7, 5e-7],
            steps_mw: vec![2.0],
            delay_max: vec![0],
            mode: Mode::CdmaEqualRate,
            cycle_cap: 1_000,
            scenario: trend_family(),
        }
    }

    /// Quantization-step sweep at 7 CRs: the threshold binds deep, so the
    /// descent length (and with it the message count) tracks the number of
    /// quantization levels.
    pub fn paper_quantization() -> Self {
        SweepConfig {
            runs_per_point: 100,
            base_seed: 11,
            n_cr: vec![7],
            thresholds_mw: vec![5e-9],
            steps_mw: vec![1.0, 2.0, 3.0],
            ..Self::paper_trends()
        }
    }

    /// Delay sweep on a contended family: caps stay loose so the traffic is
    /// the inter-CR search, which is what message delays disturb.
    pub fn delay_sensitivity() -> Self {
        SweepConfig {
            runs_per_point: 50,
            base_seed: 13,
            n_cr: vec![15],
            thresholds_mw: vec![5e-7],
            steps_mw: vec![2.0],
            delay_max: vec![0, 5, 10],
            scenario: ScenarioParams {
                sinr_range: (0.8, 2.0),
                ..trend_family()
            },
            ..Self::paper_trends()
        }
    }
}

/// Deployment used by the trend presets: short links in an 800 m square, low
/// noise floor, modest SINR requirements.
fn trend_family() -> ScenarioParams {
    ScenarioParams {
        area_side_m: 800.0,
        pair_dist_m: (10.0, 25.0),
        noise_floor_mw: 1e-9,
        pu_ambient_mw: 1e-9,
        sinr_range: (0.5, 1.5),
        ..ScenarioParams::default()
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointKey {
    pub n_cr: usize,
    pub threshold_mw: f64,
    pub step_mw: f64,
    pub delay_max: u64,
}

/// One run's raw metrics: exactly the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub n_cr: usize,
    pub n_pu: usize,
    pub threshold: f64,
    pub step: f64,
    pub delay_max: u64,
    pub mode: Mode,
    pub cycles: u64,
    pub messages_ok: u64,
    pub messages_nogood: u64,
    pub messages_pu: u64,
    pub nccc: u64,
    pub avg_power_mw: f64,
    pub sum_log_rate: f64,
    pub feasible: bool,
}

/// Per-point aggregates, recomputable from the raw rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub key: PointKey,
    pub runs: u32,
    pub feasible_runs: u32,
    pub mean_avg_power_mw: f64,
    pub median_avg_power_mw: f64,
    pub std_avg_power_mw: f64,
    pub mean_cycles: f64,
    pub median_cycles: f64,
    pub mean_messages_per_cr: f64,
    pub median_messages_per_cr: f64,
    pub mean_nccc: f64,
    pub median_nccc: f64,
}

/// Raw rows plus per-point aggregates plus anomaly records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<RunRow>,
    pub points: Vec<PointStats>,
    /// Runs that hit the cycle cap or stalled: (seed, outcome label).
    pub anomalies: Vec<(u64, String)>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Run seed as a pure function of the point parameters; execution order can
/// never influence it.
fn run_seed(base: u64, key: &PointKey, run: u32) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ key.n_cr as u64);
    h = splitmix64(h ^ key.threshold_mw.to_bits());
    h = splitmix64(h ^ key.step_mw.to_bits());
    h = splitmix64(h ^ key.delay_max);
    splitmix64(h ^ run as u64)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn messages_per_cr(row: &RunRow) -> f64 {
    (row.messages_ok + row.messages_nogood + row.messages_pu) as f64 / row.n_cr as f64
}

/// Aggregates rows belonging to one point.
pub fn point_stats(key: PointKey, rows: &[RunRow]) -> PointStats {
    let powers: Vec<f64> = rows.iter().map(|r| r.avg_power_mw).collect();
    let cycles: Vec<f64> = rows.iter().map(|r| r.cycles as f64).collect();
    let msgs: Vec<f64> = rows.iter().map(messages_per_cr).collect();
    let nccc: Vec<f64> = rows.iter().map(|r| r.nccc as f64).collect();
    PointStats {
        key,
        runs: rows.len() as u32,
        feasible_runs: rows.iter().filter(|r| r.feasible).count() as u32,
        mean_avg_power_mw: mean(&powers),
        median_avg_power_mw: median(&powers),
        std_avg_power_mw: std_dev(&powers),
        mean_cycles: mean(&cycles),
        median_cycles: median(&cycles),
        mean_messages_per_cr: mean(&msgs),
        median_messages_per_cr: median(&msgs),
        mean_nccc: mean(&nccc),
        median_nccc: median(&nccc),
    }
}

fn run_one(config: &SweepConfig, key: &PointKey, run: u32) -> Result<(RunRow, Option<String>), SweepError> {
    let seed = run_seed(config.base_seed, key, run);
    let mut params = config.scenario.clone();
    params.power_step_mw = key.step_mw;
    params.pu_cap_range_mw = (key.threshold_mw, key.threshold_mw);
    let scenario = generate_scenario(seed, key.n_cr, config.n_pu, config.mode, &params)?;
    let pc = ProtocolConfig {
        seed,
        delay: DelayPolicy::uniform(key.delay_max),
        cycle_cap: config.cycle_cap,
        trace: false,
    };
    let report = run_protocol(&scenario, &pc)?;
    let n = scenario.n_cr();
    let row = RunRow {
        seed,
        n_cr: n,
        n_pu: scenario.n_pu(),
        threshold: key.threshold_mw,
        step: key.step_mw,
        delay_max: key.delay_max,
        mode: config.mode,
        cycles: report.metrics.cycles,
        messages_ok: report.metrics.messages.ok,
        messages_nogood: report.metrics.messages.nogood,
        messages_pu: report.metrics.messages.pu_violation,
        nccc: report.metrics.nccc,
        avg_power_mw: report.powers_mw.iter().sum::<f64>() / n as f64,
        sum_log_rate: report.sum_log_rate,
        feasible: report.outcome.feasible(),
    };
    let anomaly = match report.outcome {
        Outcome::CapHit => Some(format!("seed {seed}: cycle cap hit")),
        Outcome::Stalled => Some(format!("seed {seed}: stalled")),
        _ => None,
    };
    Ok((row, anomaly))
}

/// Runs the whole grid. Deterministic for a given config.
pub fn run_monte_carlo(config: &SweepConfig) -> Result<SweepResult, SweepError> {
    config.validate()?;
    let mut keys = Vec::new();
    for n_cr in &config.n_cr {
        for thr in &config.thresholds_mw {
            for step in &config.steps_mw {
                for delay in &config.delay_max {
                    keys.push(PointKey {
                        n_cr: *n_cr,
                        threshold_mw: *thr,
                        step_mw: *step,
                        delay_max: *delay,
                    });
                }
            }
        }
    }
    let jobs: Vec<(usize, u32)> = keys
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| (0..config.runs_per_point).map(move |r| (pi, r)))
        .collect();
    let mut outcomes: Vec<(usize, u32, RunRow, Option<String>)> = jobs
        .par_iter()
        .map(|(pi, run)| {
            let (row, anomaly) = run_one(config, &keys[*pi], *run)?;
            Ok((*pi, *run, row, anomaly))
        })
        .collect::<Result<Vec<_>, SweepError>>()?;
    outcomes.sort_by_key(|(pi, run, _, _)| (*pi, *run));

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut anomalies = Vec::new();
    let mut by_point: BTreeMap<usize, Vec<RunRow>> = BTreeMap::new();
    for (pi, _, row, anomaly) in outcomes {
        by_point.entry(pi).or_default().push(row.clone());
        rows.push(row);
        if let Some(a) = anomaly {
            anomalies.push((rows.last().unwrap().seed, a));
        }
    }
    let points = by_point
        .into_iter()
        .map(|(pi, rows)| point_stats(keys[pi], &rows))
        .collect();
    Ok(SweepResult {
        config: config.clone(),
        rows,
        points,
        anomalies,
    })
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side has no variance or fewer than two samples.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|a, b| vals[*a].partial_cmp(&vals[*b]).expect("finite"));
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                ranks[idx[k]] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendStatus {
    Pass,
    Fail,
    /// Fewer than three axis points: not evaluable.
    Skipped,
}

/// One monotone-trend verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendCheck {
    pub metric: String,
    pub axis: String,
    /// +1 for increasing, -1 for decreasing.
    pub expected_sign: i8,
    pub rho: Option<f64>,
    pub status: TrendStatus,
    /// (axis value, pooled median) pairs the verdict was computed from.
    pub series: Vec<(f64, f64)>,
}

impl TrendCheck {
    pub fn passed(&self) -> bool {
        self.status == TrendStatus::Pass
    }

    pub fn line(&self) -> String {
        let dir = if self.expected_sign > 0 { "increasing" } else { "decreasing" };
        let rho = self
            .rho
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "n/a".into());
        format!(
            "{:<28} vs {:<12} expected {dir:<10} rho {rho:>6}  {:?}",
            self.metric, self.axis, self.status
        )
    }
}

/// Pooled per-axis medians of `metric` with the Spearman verdict at the 0.8
/// threshold.
pub fn trend_check(
    rows: &[RunRow],
    metric_name: &str,
    metric: impl Fn(&RunRow) -> f64,
    axis_name: &str,
    axis: impl Fn(&RunRow) -> f64,
    expected_sign: i8,
) -> TrendCheck {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let a = axis(row);
        groups
            .entry(a.to_bits())
            .or_insert_with(|| (a, Vec::new()))
            .1
            .push(metric(row));
    }
    let mut series: Vec<(f64, f64)> = groups
        .into_values()
        .map(|(a, vals)| (a, median(&vals)))
        .collect();
    series.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite axis"));
    if series.len() < 3 {
        return TrendCheck {
            metric: metric_name.into(),
            axis: axis_name.into(),
            expected_sign,
            rho: None,
            status: TrendStatus::Skipped,
            series,
        };
    }
    let xs: Vec<f64> = series.iter().map(|(a, _)| *a).collect();
    let ys: Vec<f64> = series.iter().map(|(_, m)| *m).collect();
    let rho = spearman(&xs, &ys);
    let status = match rho {
        Some(r) if r * expected_sign as f64 >= 0.8 => TrendStatus::Pass,
        Some(_) => TrendStatus::Fail,
        None => TrendStatus::Fail,
    };
    TrendCheck {
        metric: metric_name.into(),
        axis: axis_name.into(),
        expected_sign,
        rho,
        status,
        series,
    }
}

/// The reported trend battery: power and cycles against threshold and CR
/// count, messages against threshold, quantization step and delay, NCCC
/// against delay. Trends whose axis is not swept come back Skipped.
pub fn assert_trends(result: &SweepResult) -> Vec<TrendCheck> {
    let rows = &result.rows;
    vec![
        trend_check(rows, "avg_power_mw", |r| r.avg_power_mw, "threshold", |r| r.threshold, 1),
        trend_check(rows, "avg_power_mw", |r| r.avg_power_mw, "n_cr", |r| r.n_cr as f64, -1),
        trend_check(rows, "cycles", |r| r.cycles as f64, "n_cr", |r| r.n_cr as f64, 1),
        trend_check(rows, "cycles", |r| r.cycles as f64, "threshold", |r| r.threshold, -1),
        trend_check(rows, "messages_per_cr", messages_per_cr, "threshold", |r| r.threshold, -1),
        trend_check(
            rows,
            "messages_total",
            |r| (r.messages_ok + r.messages_nogood + r.messages_pu) as f64,
            "step",
            |r| r.step,
            -1,
        ),
        trend_check(
            rows,
            "messages_total",
            |r| (r.messages_ok + r.messages_nogood + r.messages_pu) as f64,
            "delay_max",
            |r| r.delay_max as f64,
            1,
        ),
        trend_check(rows, "nccc", |r| r.nccc as f64, "delay_max", |r| r.delay_max as f64, 1),
    ]
}

pub const CSV_HEADER: &str = "seed,n_cr,n_pu,threshold,step,delay_max,mode,cycles,messages_ok,messages_nogood,messages_pu,nccc,avg_power_mw,sum_log_rate,feasible";

fn format_row(row: &RunRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.seed,
        row.n_cr,
        row.n_pu,
        row.threshold,
        row.step,
        row.delay_max,
        row.mode,
        row.cycles,
        row.messages_ok,
        row.messages_nogood,
        row.messages_pu,
        row.nccc,
        row.avg_power_mw,
        row.sum_log_rate,
        row.feasible
    )
}

/// Serializes the raw rows; header and field order are a stable contract.
pub fn csv_string(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &result.rows {
        out.push_str(&format_row(row));
        out.push('\n');
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<(), SweepError> {
    let text = csv_string(result);
    let mut file = std::fs::File::create(path).map_err(|source| SweepError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(text.as_bytes()).map_err(|source| SweepError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads rows back from an emitted CSV.
pub fn parse_csv(path: &Path) -> Result<Vec<RunRow>, SweepError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| SweepError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| SweepError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        let bad = |i: usize| SweepError::Config(format!("csv field {i} unparsable: {}", field(i)));
        rows.push(RunRow {
            seed: field(0).parse().map_err(|_| bad(0))?,
            n_cr: field(1).parse().map_err(|_| bad(1))?,
            n_pu: field(2).parse().map_err(|_| bad(2))?,
            threshold: field(3).parse().map_err(|_| bad(3))?,
            step: field(4).parse().map_err(|_| bad(4))?,
            delay_max: field(5).parse().map_err(|_| bad(5))?,
            mode: field(6).parse().map_err(|_| SweepError::Config(field(6)))?,
            cycles: field(7).parse().map_err(|_| bad(7))?,
            messages_ok: field(8).parse().map_err(|_| bad(8))?,
            messages_nogood: field(9).parse().map_err(|_| bad(9))?,
            messages_pu: field(10).parse().map_err(|_| bad(10))?,
            nccc: field(11).parse().map_err(|_| bad(11))?,
            avg_power_mw: field(12).parse().map_err(|_| bad(12))?,
            sum_log_rate: field(13).parse().map_err(|_| bad(13))?,
            feasible: field(14).parse().map_err(|_| bad(14))?,
        });
    }
    Ok(rows)
}

/// Writes `<metric>_vs_<axis>.svg` line charts for every evaluable trend.
pub fn emit_plots(result: &SweepResult, dir: &Path) -> Result<Vec<std::path::PathBuf>, SweepError> {
    let mut written = Vec::new();
    for check in assert_trends(result) {
        if check.series.len() < 2 {
            continue;
        }
        let name = format!("{}_vs_{}.svg", check.metric, check.axis);
        let path = dir.join(&name);
        let title = format!("{} vs {}", check.metric, check.axis);
        let svg = plot::line_chart(&title, &check.axis, &check.metric, &check.series);
        std::fs::write(&path, svg).map_err(|source| SweepError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
