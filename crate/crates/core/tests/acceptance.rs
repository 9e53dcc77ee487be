//! Acceptance suite: one test per acceptance criterion, each printing a
//! single pass/fail line (run with `--nocapture` to see them all).
//!
//! Thresholds are pinned here, not configured elsewhere: oracle equivalence
//! must be exact, safety checks use the same arithmetic as the model, trends
//! pass at signed rank correlation >= 0.8.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crqos_core::awcs::multi::solve_multi;
use crqos_core::awcs::single::solve_single;
use crqos_core::experiments::{
    csv_string, run_monte_carlo, spearman, trend_check, RunRow, SweepConfig, TrendStatus,
};
use crqos_core::mailer::{DelayPolicy, RunOutcome};
use crqos_core::oracle::{
    brute_force_solve, random_multi_instance, random_single_instance, MultiFamily, SingleFamily,
};
use crqos_core::protocol::{
    partition_from_edges, run_protocol, stdma_schedule, Outcome, ProtocolConfig, ResultRecord,
};
use crqos_core::radio::{generate_scenario, power_domain, Mode, ScenarioParams};

const TREND_RHO: f64 = 0.8;

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

#[test]
fn oracle_equivalence_single_variable() {
    let t0 = Instant::now();
    let total = 200;
    let mut matched = 0;
    for seed in 0..total {
        let instance = random_single_instance(seed, SingleFamily::default());
        let oracle_sat = brute_force_solve(&instance).is_some();
        let report = solve_single(&instance, seed, DelayPolicy::None, 10_000);
        let ok = match report.outcome {
            RunOutcome::Quiescent => oracle_sat && report.satisfied,
            RunOutcome::NoSolution => !oracle_sat,
            _ => false,
        };
        matched += u64::from(ok);
    }
    let elapsed = t0.elapsed();
    verdict(
        "oracle equivalence (single-variable)",
        matched == total && elapsed.as_secs() < 30,
        &format!("{matched}/{total} matched in {elapsed:.2?} (budget 30 s)"),
    );
}

#[test]
fn oracle_equivalence_multi_variable() {
    let total = 100;
    let mut matched = 0;
    for seed in 0..total {
        let instance = random_multi_instance(seed, MultiFamily::default());
        let oracle_sat = brute_force_solve(&instance).is_some();
        let report = solve_multi(&instance, seed, DelayPolicy::None, 10_000);
        let ok = match report.outcome {
            RunOutcome::Quiescent => oracle_sat && report.satisfied,
            RunOutcome::NoSolution => !oracle_sat,
            _ => false,
        };
        matched += u64::from(ok);
    }
    verdict(
        "oracle equivalence (multi-variable)",
        matched == total,
        &format!("{matched}/{total} matched"),
    );
}

/// Paper-parameter Monte Carlo family: 100 mW budget, 2 mW step.
fn qos_params() -> ScenarioParams {
    ScenarioParams {
        area_side_m: 800.0,
        pair_dist_m: (10.0, 25.0),
        noise_floor_mw: 1e-9,
        pu_ambient_mw: 1e-9,
        sinr_range: (0.5, 1.5),
        pu_cap_range_mw: (1e-8, 2e-7),
        power_budget_mw: 100.0,
        power_step_mw: 2.0,
        ..ScenarioParams::default()
    }
}

#[test]
fn pu_safety_and_cr_qos_over_monte_carlo_runs() {
    let params = qos_params();
    let domain_len = power_domain(params.power_budget_mw, params.power_step_mw)
        .unwrap()
        .len() as u32;
    let mut safe = 0;
    let mut qos_ok = 0;
    let mut solved = 0;
    let mut phase1_bounded = 0;
    let total = 100u64;
    for seed in 0..total {
        let mode = if seed % 2 == 0 {
            Mode::CdmaEqualRate
        } else {
            Mode::CdmaUnequalRate
        };
        let scenario = generate_scenario(seed, 7, 2, mode, &params).unwrap();
        let config = ProtocolConfig {
            seed,
            delay: DelayPolicy::None,
            cycle_cap: 10_000,
            trace: false,
        };
        let report = run_protocol(&scenario, &config).unwrap();

        // PU safety holds in every terminal state, with the same arithmetic
        // the watchdogs used.
        let pu_safe = (0..scenario.n_pu()).all(|k| {
            scenario.pu_interference_mw(k, &report.powers_mw)
                <= scenario.pu[k].interference_cap_mw
        });
        safe += u64::from(pu_safe);

        // Every non-silenced CR in a solved run meets its SINR requirement.
        let qos = if report.outcome == Outcome::Solved {
            solved += 1;
            (0..scenario.n_cr()).all(|i| {
                if report.silenced.contains(&scenario.cr[i].id) {
                    return report.powers_mw[i] == 0.0;
                }
                match mode {
                    Mode::CdmaEqualRate => {
                        scenario.sinr(i, &report.powers_mw) >= scenario.cr[i].sinr_threshold
                    }
                    Mode::CdmaUnequalRate => {
                        let rate = report.rates_bps[i];
                        rate >= scenario.cr[i].rate_min_bps
                            && rate <= scenario.cr[i].rate_max_bps
                            && scenario.sinr(i, &report.powers_mw)
                                >= scenario.rate_sinr_requirement(i, rate)
                    }
                    Mode::Stdma => unreachable!("not part of this family"),
                }
            })
        } else {
            true
        };
        qos_ok += u64::from(qos);
        phase1_bounded += u64::from(report.phase1_steps_max <= domain_len);
    }
    verdict(
        "PU safety and CR QoS",
        safe == total && qos_ok == total,
        &format!("pu-safe {safe}/{total}, qos {qos_ok}/{total} ({solved} solved runs)"),
    );
    verdict(
        "phase-1 bound",
        phase1_bounded == total,
        &format!("negotiation within |power domain| = {domain_len} steps on {phase1_bounded}/{total} runs"),
    );
}

#[test]
fn stdma_worked_example_rotation() {
    let partition = partition_from_edges(&[1, 2, 3, 4, 5, 6, 7], &[(1, 2), (2, 4), (3, 6), (5, 7)]);
    let sets_ok = partition.sets == vec![vec![1, 2, 4], vec![3, 6], vec![5, 7]]
        && partition.heads() == vec![1, 3, 5];

    let demands: BTreeMap<u32, u32> = (1..=7).map(|i| (i, 1)).collect();
    let order = |frame: u64| {
        stdma_schedule(&partition, &demands, 16, frame)
            .unwrap()
            .set_order
    };
    let rotation_ok = order(0) == vec![1, 3, 5]
        && order(1) == vec![5, 1, 3]
        && order(2) == vec![3, 5, 1]
        && order(3) == order(0);
    verdict(
        "worked STDMA example",
        sets_ok && rotation_ok,
        &format!(
            "partition {:?} heads {:?}; frame orders {:?} / {:?} / {:?}",
            partition.sets,
            partition.heads(),
            order(0),
            order(1),
            order(2)
        ),
    );
}

#[test]
fn trend_reproduction_at_paper_scale() {
    let t0 = Instant::now();
    let trends = run_monte_carlo(&SweepConfig::paper_trends()).unwrap();
    let quant = run_monte_carlo(&SweepConfig::paper_quantization()).unwrap();
    let elapsed = t0.elapsed();

    let checks = [
        trend_check(&trends.rows, "avg_power_mw", |r: &RunRow| r.avg_power_mw, "threshold", |r| r.threshold, 1),
        trend_check(&trends.rows, "avg_power_mw", |r: &RunRow| r.avg_power_mw, "n_cr", |r| r.n_cr as f64, -1),
        trend_check(&trends.rows, "cycles", |r: &RunRow| r.cycles as f64, "n_cr", |r| r.n_cr as f64, 1),
        trend_check(&trends.rows, "cycles", |r: &RunRow| r.cycles as f64, "threshold", |r| r.threshold, -1),
        trend_check(
            &trends.rows,
            "messages_per_cr",
            |r: &RunRow| (r.messages_ok + r.messages_nogood + r.messages_pu) as f64 / r.n_cr as f64,
            "threshold",
            |r| r.threshold,
            -1,
        ),
        trend_check(
            &quant.rows,
            "messages_total",
            |r: &RunRow| (r.messages_ok + r.messages_nogood + r.messages_pu) as f64,
            "step",
            |r| r.step,
            -1,
        ),
    ];
    let mut all = true;
    for check in &checks {
        let pass = check.status == TrendStatus::Pass;
        all &= pass;
        println!(
            "{} trend {} vs {}: rho {:?} (expected sign {:+}, threshold {TREND_RHO})",
            if pass { "PASS" } else { "FAIL" },
            check.metric,
            check.axis,
            check.rho,
            check.expected_sign,
        );
    }
    let in_budget = elapsed.as_secs() < 300;
    println!(
        "{} trend grid runtime: {elapsed:.1?} for {} runs (budget 5 min)",
        if in_budget { "PASS" } else { "FAIL" },
        trends.rows.len() + quant.rows.len()
    );
    assert!(all, "all paper trends must reproduce at rho >= {TREND_RHO}");
    assert!(in_budget, "trend grid exceeded its runtime budget");
}

#[test]
fn delay_sensitivity_on_fixed_families() {
    // 50-seed family of contended search instances under the delay-aware
    // mailer: medians of total messages and of NCCC are nondecreasing in the
    // delay bound.
    let family = SingleFamily {
        agents: (6, 8),
        domain_size: (3, 6),
        density: 0.7,
        tightness: 0.25,
    };
    let base = 1000u64;
    let delays = [0u64, 5, 10];
    let mut msg_medians = Vec::new();
    let mut nccc_medians = Vec::new();
    for d in delays {
        let mut msgs = Vec::new();
        let mut nccc = Vec::new();
        for i in 0..50 {
            let seed = base + i;
            let instance = random_single_instance(seed, family);
            let report = solve_single(&instance, seed, DelayPolicy::uniform(d), 10_000);
            msgs.push(report.metrics.messages.total());
            nccc.push(report.metrics.nccc);
        }
        msgs.sort_unstable();
        nccc.sort_unstable();
        msg_medians.push(msgs[msgs.len() / 2] as f64);
        nccc_medians.push(nccc[nccc.len() / 2] as f64);
    }
    let axis: Vec<f64> = delays.iter().map(|d| *d as f64).collect();
    let rho_msg = spearman(&axis, &msg_medians).unwrap_or(0.0);
    let rho_nccc = spearman(&axis, &nccc_medians).unwrap_or(0.0);
    verdict(
        "delay sensitivity",
        rho_msg >= TREND_RHO && rho_nccc >= TREND_RHO,
        &format!(
            "median messages {msg_medians:?} (rho {rho_msg:.2}), median nccc {nccc_medians:?} (rho {rho_nccc:.2})"
        ),
    );
}

#[test]
fn determinism_of_csv_and_result_records() {
    let sweep = SweepConfig {
        runs_per_point: 3,
        base_seed: 21,
        n_cr: vec![3, 5],
        n_pu: 1,
        thresholds_mw: vec![1e-7],
        steps_mw: vec![2.0],
        delay_max: vec![2],
        mode: Mode::CdmaEqualRate,
        cycle_cap: 5_000,
        scenario: qos_params(),
    };
    let csv_a = csv_string(&run_monte_carlo(&sweep).unwrap());
    let csv_b = csv_string(&run_monte_carlo(&sweep).unwrap());

    let scenario = generate_scenario(13, 4, 2, Mode::CdmaUnequalRate, &qos_params()).unwrap();
    let config = ProtocolConfig {
        seed: 13,
        delay: DelayPolicy::uniform(3),
        cycle_cap: 10_000,
        trace: false,
    };
    let rec_a = ResultRecord::new(&scenario, &config, &run_protocol(&scenario, &config).unwrap()).to_toml();
    let rec_b = ResultRecord::new(&scenario, &config, &run_protocol(&scenario, &config).unwrap()).to_toml();

    verdict(
        "determinism",
        csv_a == csv_b && rec_a == rec_b,
        &format!(
            "csv {} bytes identical across reruns, result record {} bytes identical",
            csv_a.len(),
            rec_a.len()
        ),
    );
}
