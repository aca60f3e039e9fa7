//! Whole runs checked against their own event logs.

mod common;

use proptest::prelude::*;

use common::*;
use tiersim::balancer::RatioVector;
use tiersim::cache::WritePolicy;

fn small_config(
    balancer: &str,
    capacity: u64,
    working_set: u64,
    read_fraction: f64,
    rates: (f64, f64),
    latencies: (u64, u64, u64, u64),
    interval: u64,
    hold: bool,
    seed: u64,
) -> String {
    format!(
        "balancer = {balancer}
seed = {seed}
ssd_read_latency_us = {}
ssd_write_latency_us = {}
hdd_read_latency_us = {}
hdd_write_latency_us = {}
capacity_blocks = {capacity}
interval_us = {interval}
lbica_hold_policy = {hold}
phase.0.duration_us = 30000
phase.0.rate = {}
phase.0.read_fraction = {read_fraction}
phase.0.address = uniform:0
phase.0.working_set = {working_set}
phase.1.duration_us = 20000
phase.1.rate = {}
phase.1.read_fraction = {read_fraction}
phase.1.address = uniform:0
phase.1.working_set = {working_set}
",
        latencies.0, latencies.1, latencies.2, latencies.3, rates.0, rates.1
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_runs_conserve_requests_and_match_their_logs(
        balancer in prop::sample::select(vec!["none-wb", "sib", "lbica"]),
        capacity in 2u64..48,
        working_set in 4u64..96,
        read_fraction in 0.0f64..=1.0,
        rates in (1000.0f64..20_000.0, 100.0f64..3000.0),
        latencies in (20u64..200, 20u64..200, 20u64..400, 20u64..400),
        interval in 500u64..8000,
        hold in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = config_from(&small_config(
            balancer, capacity, working_set, read_fraction, rates, latencies, interval, hold, seed,
        ));
        let run = run_logged(&cfg);
        let audit = audit(&run.log);
        prop_assert!(audit.violations.is_empty(), "{:?}", &audit.violations[..audit.violations.len().min(3)]);
        prop_assert_eq!(audit.promotions_under_wo, 0);
        prop_assert_eq!(audit.cache_writes_under_ro, 0);
        prop_assert_eq!(audit.apps, run.result.summary.app_requests);

        let rows = &run.result.rows;
        let d = run.result.summary.duration_us;
        prop_assert_eq!(rows.len() as u64, d.div_ceil(interval));
        let recount = recount_intervals(&run.log);
        prop_assert_eq!(recount.len(), rows.len());
        for (i, (row, rc)) in rows.iter().zip(&recount).enumerate() {
            prop_assert_eq!(row.stats.interval_index, i as u64);
            prop_assert_eq!(rc.index, i as u64);
            prop_assert_eq!(row.stats.window.1.0, rc.end);
            prop_assert_eq!(row.stats.served_counts, rc.served, "served, interval {}", i);
            prop_assert_eq!(row.stats.submitted_counts, rc.submitted, "submitted, interval {}", i);
            prop_assert_eq!(row.stats.ssd_qsize, rc.ssd_qsize);
            prop_assert_eq!(row.stats.hdd_qsize, rc.hdd_qsize);
            prop_assert_eq!(row.bypass, rc.bypass);
            prop_assert_eq!(row.ratios, RatioVector::from_counts(rc.ssd_inqueue));
            prop_assert_eq!(row.burst, row.stats.cache_qtime > row.stats.disk_qtime);
        }
    }
}

#[test]
fn identical_runs_produce_identical_results() {
    let text = small_config("lbica", 16, 64, 0.5, (15_000.0, 500.0), (100, 100, 150, 150), 2000, true, 9);
    let a = run_logged(&config_from(&text));
    let b = run_logged(&config_from(&text));
    assert_eq!(a.log, b.log);
    assert_eq!(a.result.rows, b.result.rows);
    assert_eq!(a.result.summary, b.result.summary);
}

#[test]
fn write_back_promotions_track_the_miss_ratio() {
    // In a write-back burst every read hit queues one R and every miss one
    // P, so the in-queue P share follows the miss ratio.
    let run = run_plain(&scenario("random_read", &[("balancer", "none-wb")]));
    let burst: Vec<_> = run.rows.iter().filter(|r| r.burst).collect();
    assert!(burst.len() >= 35, "only {} burst intervals", burst.len());
    let mean_p = burst.iter().map(|r| r.ratios.p).sum::<f64>() / burst.len() as f64;
    let miss = 1.0 - run.summary.hit_ratio();
    assert!((mean_p - miss).abs() < 0.03, "in-queue P {mean_p:.3} vs miss ratio {miss:.3}");
}

#[test]
fn balancer_only_changes_rows_once_a_burst_is_seen() {
    let wb = run_plain(&scenario("random_read", &[("balancer", "none-wb")]));
    let lb = run_plain(&scenario("random_read", &[("balancer", "lbica")]));
    let first_burst = wb.rows.iter().position(|r| r.burst).expect("a burst");
    assert!(first_burst > 0);
    for i in 0..=first_burst {
        let (a, b) = (&wb.rows[i], &lb.rows[i]);
        assert_eq!(a.stats, b.stats, "interval {i}");
        assert_eq!(a.ratios, b.ratios);
        assert_eq!((a.burst, a.class, a.active_policy), (b.burst, b.class, b.active_policy));
    }
    assert_eq!(lb.rows[first_burst].policy, WritePolicy::WO);
    let wo_burst = lb
        .rows
        .iter()
        .filter(|r| r.burst)
        .skip(1)
        .all(|r| r.active_policy == WritePolicy::WO && r.policy == WritePolicy::WO);
    assert!(wo_burst, "every later burst interval runs write-only");
}

#[test]
fn reverting_controller_returns_to_write_back_when_calm() {
    let run = run_plain(&scenario(
        "random_read",
        &[("balancer", "lbica"), ("lbica_hold_policy", "false")],
    ));
    for r in &run.rows {
        if !r.burst {
            assert_eq!(r.policy, WritePolicy::WB, "interval {}", r.stats.interval_index);
        }
    }
    assert!(run.rows.iter().any(|r| r.policy == WritePolicy::WO));
}
