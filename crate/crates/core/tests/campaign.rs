use cellfree_core::experiment::output::to_csv;
use cellfree_core::experiment::{experiment_outage, run_campaign, Scenario};

fn small() -> Scenario {
    let mut s = Scenario::reference_baseline();
    s.num_aps = 16;
    s.num_users = 3;
    s.drops = 6;
    s.seed = 42;
    s
}

#[test]
fn same_seed_same_bytes_across_worker_counts() {
    let s = small();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| to_csv(&run_campaign(&s).unwrap().to_rows()));
    let b = three.install(|| to_csv(&run_campaign(&s).unwrap().to_rows()));
    assert_eq!(a, b);
    let mut other = s.clone();
    other.seed = 43;
    assert_ne!(a, to_csv(&run_campaign(&other).unwrap().to_rows()));
}

#[test]
fn infeasible_drops_are_left_out_of_the_means() {
    let s = small();
    let r = run_campaign(&s).unwrap();
    for (res, agg) in r.results.iter().zip(&r.aggregates) {
        assert_eq!(agg.feasible_drops, res.iter().filter(|d| d.feasible).count());
        assert!(res.iter().filter(|d| !d.feasible).all(|d| d.objective.is_nan()));
        if agg.feasible_drops > 0 {
            assert!(agg.mean_se.is_finite());
        }
    }
}

#[test]
fn outage_grows_with_the_rate_demand() {
    let s = small();
    let o = experiment_outage(&s, &[0.0, 1.0, 2.0, 3.0, 4.0], &[20, 60]).unwrap();
    for a in 0..o.algorithms.len() {
        assert_eq!(o.outage_rate(a, 0), 0.0);
        for r in 1..o.rate_grid.len() {
            assert!(o.outage_rate(a, r) >= o.outage_rate(a, r - 1));
        }
    }
}

#[test]
fn scenario_file_round_trip_drives_the_same_campaign() {
    let s = small();
    let back = Scenario::from_toml_str(&s.to_toml()).unwrap();
    assert_eq!(to_csv(&run_campaign(&s).unwrap().to_rows()), to_csv(&run_campaign(&back).unwrap().to_rows()));
}
