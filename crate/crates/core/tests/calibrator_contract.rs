#[path = "common/stub.rs"]
mod stub;

use std::ops::ControlFlow;

use srlm_core::calibrator::{calibrate, calibrate_resumable, CalibConfig, CalibOutcome, CalibProgress};
use srlm_core::Sequential;
use stub::{oracle_calibrate, StubModel, Threads};

fn config(loss_inc: f64, heuristic: bool) -> CalibConfig {
    CalibConfig {
        loss_inc,
        heuristic,
        ..CalibConfig::default()
    }
}

fn check_against_oracle(model: &StubModel, loss_inc: f64, heuristic: bool) {
    let docs = stub::documents(6, 20, 3);
    let cfg = config(loss_inc, heuristic);
    let (assignment, report) = calibrate(model, &docs, &cfg, &Sequential).unwrap();
    let oracle = oracle_calibrate(model, &docs, &cfg.percentages, loss_inc, heuristic);
    assert_eq!(report.sites.len(), oracle.len());
    for (r, o) in report.sites.iter().zip(&oracle) {
        assert_eq!(r.site, o.site);
        assert_eq!(r.chosen_percentage, o.chosen_percentage, "{}", r.site);
        assert!(stub::equivalent(&o.magnitudes, r.lambda, o.lambda), "{}", r.site);
        assert_eq!(r.candidates_evaluated, o.evaluated, "{}", r.site);
        assert_eq!(assignment.lambda(r.site), r.lambda);
    }
}

#[test]
fn ascending_search_matches_exhaustive_oracle() {
    for seed in 0..3 {
        for loss_inc in [1.001, 1.01, 1.05] {
            check_against_oracle(&StubModel::new(3, seed), loss_inc, false);
        }
    }
}

#[test]
fn warm_start_search_matches_exhaustive_oracle() {
    for seed in 0..3 {
        for loss_inc in [1.001, 1.01, 1.05] {
            check_against_oracle(&StubModel::new(3, seed), loss_inc, true);
        }
    }
}

#[test]
fn non_monotone_loss_follows_probe_rule() {
    for seed in 0..3 {
        let mut model = StubModel::new(3, seed);
        model.ripple = true;
        check_against_oracle(&model, 1.01, true);
        check_against_oracle(&model, 1.01, false);
    }
}

#[test]
fn report_level_contract() {
    let model = StubModel::new(4, 9);
    let docs = stub::documents(6, 20, 4);
    for heuristic in [false, true] {
        let cfg = config(1.01, heuristic);
        let (_, report) = calibrate(&model, &docs, &cfg, &Sequential).unwrap();
        report.verify().unwrap();
        for s in &report.sites {
            assert!(s.candidates_evaluated <= cfg.percentages.len());
            if let Some(loss) = s.accepted_loss {
                assert!(loss / s.base_loss < cfg.loss_inc);
            }
        }
        assert!(report.candidate_evaluations <= report.worst_case_evaluations);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = StubModel::new(3, 5);
    let docs = stub::documents(9, 20, 5);
    let cfg = config(1.01, true);
    let one = calibrate(&model, &docs, &cfg, &Threads(1)).unwrap();
    for t in [2, 3, 4] {
        assert_eq!(calibrate(&model, &docs, &cfg, &Threads(t)).unwrap(), one);
    }
    assert_eq!(calibrate(&model, &docs, &cfg, &Sequential).unwrap(), one);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let model = StubModel::new(3, 6);
    let docs = stub::documents(6, 20, 6);
    let cfg = config(1.01, true);
    let full = calibrate(&model, &docs, &cfg, &Sequential).unwrap();
    for cut in [1, 5, 6, 11] {
        let stopped = calibrate_resumable(&model, &docs, &cfg, &Sequential, CalibProgress::default(), &mut stub::stop_after(cut)).unwrap();
        let CalibOutcome::Stopped(progress) = stopped else { panic!("expected a stop") };
        assert_eq!(progress.next_site(), cut);
        let resumed = calibrate_resumable(&model, &docs, &cfg, &Sequential, progress, &mut |_| ControlFlow::Continue(())).unwrap();
        let CalibOutcome::Complete(a, r) = resumed else { panic!("expected completion") };
        assert_eq!((a, r), full);
    }
}

#[test]
fn looser_tolerance_never_lowers_sparsity() {
    let model = StubModel::new(2, 8);
    let docs = stub::documents(6, 20, 8);
    let mut prev = 0u32;
    for loss_inc in [1.001, 1.01, 1.1, 1.5] {
        let (_, report) = calibrate(&model, &docs, &config(loss_inc, false), &Sequential).unwrap();
        let total: u32 = report.sites.iter().map(|s| s.chosen_percentage as u32).sum();
        assert!(total >= prev);
        prev = total;
    }
}
