//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test -p srlm --test acceptance -- 7 8`.

#[allow(dead_code)]
#[path = "../../core/tests/common/mod.rs"]
mod common;
#[allow(dead_code)]
#[path = "../../core/tests/common/stub.rs"]
mod stub;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use srlm::corpus_io::{self, LoadOptions, Part};
use srlm::exec::{resolve_threads, Pool};
use srlm_core::calibrator::{calibrate, lambda_for_percentile, CalibConfig, CalibrationReport};
use srlm_core::corpus::{Document, SplitConfig};
use srlm_core::hwcost::{self, reference, BlockShape, CostReport};
use srlm_core::metrics::{loss_increase, measure, SparsityReport};
use srlm_core::numerics::{linear_forward, LinearMode};
use srlm_core::rwkv::{wkv_step, RwkvConfig, RwkvModel, WkvState};
use srlm_core::threshold::{apply, apply_in_place};
use srlm_core::train::graph::{loss, loss_and_grad, Graph};
use srlm_core::train::tape::ParamStore;
use srlm_core::train::{train_rwkv, train_transformer, TrainConfig};
use srlm_core::transformer::{overall_sparsity_opt, TransformerConfig, TransformerModel};
use srlm_core::{Matrix, Position, Sequential, SiteId, SparseLm, ThresholdAssignment};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn event_dense() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(2024);
    let mut skipped = 0u64;
    for case in 0..1000 {
        let rows = rng.random_range(1..64);
        let cols = rng.random_range(1..64);
        let w = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0));
        let sparsity: f64 = rng.random();
        let x: Vec<f32> = (0..cols)
            .map(|_| if rng.random_bool(sparsity) { 0.0 } else { rng.random_range(-2.0f32..2.0) })
            .collect();
        let bias: Option<Vec<f32>> = (case % 2 == 0).then(|| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (dense, _) = linear_forward(&w, bias.as_deref(), &x, LinearMode::Dense).map_err(err)?;
        let (event, tally) = linear_forward(&w, bias.as_deref(), &x, LinearMode::Event).map_err(err)?;
        skipped += tally.skipped_count;
        let same = dense.as_slice().iter().zip(event.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "case {case} differs");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("1000 cases bit-identical, {skipped} inputs skipped, {secs:.3} s"))
}

fn threshold_semantics() -> Outcome {
    let mut rng = rng(7);
    for case in 0..10_000 {
        let n = rng.random_range(1..32);
        let lambda: f32 = rng.random_range(0.0..2.0);
        let mut x: Vec<f32> = (0..n).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let at = rng.random_range(0..n);
        x[at] = if rng.random_bool(0.5) { lambda } else { -lambda };
        let y = apply(&x, lambda).map_err(err)?;
        let y = y.as_slice();
        for (a, b) in x.iter().zip(y) {
            let want = if a.abs() >= lambda { *a } else { 0.0 };
            ensure!(b.to_bits() == want.to_bits() || (want == 0.0 && *b == 0.0), "case {case}: {a} -> {b}");
        }
        ensure!(y[at] == x[at], "case {case}: boundary value {} dropped", x[at]);
        let twice = apply(y, lambda).map_err(err)?;
        ensure!(twice.as_slice() == y, "case {case}: not idempotent");
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let yn = apply(&neg, lambda).map_err(err)?;
        ensure!(yn.as_slice().iter().zip(y).all(|(a, b)| *a == -b), "case {case}: not sign-equivariant");
        let mut id = x.clone();
        apply_in_place(&mut id, 0.0);
        ensure!(id.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits()), "case {case}: λ=0 changed x");
    }
    Ok("10000 cases".into())
}

// Smallest achievable zero fraction that reaches p, found by a linear scan.
fn oracle_sparsity(sample: &[f32], p: f64) -> f64 {
    let mut mags: Vec<f32> = sample.iter().map(|v| v.abs()).collect();
    mags.sort_by(f32::total_cmp);
    let n = mags.len() as f64;
    (1..mags.len())
        .filter(|&i| mags[i] > mags[i - 1])
        .map(|i| i as f64 / n)
        .find(|s| s * 100.0 >= p - 1e-9)
        .unwrap_or(1.0)
}

fn percentile() -> Outcome {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mut worst = [0.0f64; 3];
    for (case, (n, quantum, tol, seeds)) in
        [(1_000, Some(1e-3f32), 2.0, 10u64), (1_000, None, 2.0, 10), (100_000, None, 0.5, 2)].into_iter().enumerate()
    {
        for seed in 0..seeds {
            let mut rng = rng(seed + 100 * case as u64);
            let sample: Vec<f32> = (0..n)
                .map(|_| {
                    let v = normal.sample(&mut rng);
                    quantum.map_or(v, |q| (v / q).round() * q)
                })
                .collect();
            for p in (10..=90).step_by(10) {
                let lambda = lambda_for_percentile(&sample, p as f64).map_err(err)?;
                let s = sample.iter().filter(|v| v.abs() < lambda).count() as f64 / n as f64;
                let dev = (s * 100.0 - p as f64).abs();
                worst[case] = worst[case].max(dev);
                ensure!(dev <= tol, "n={n} seed={seed} p={p}: {:.3}%", s * 100.0);
                ensure!(s == oracle_sparsity(&sample, p as f64), "n={n} seed={seed} p={p}: oracle disagrees");
            }
        }
    }
    Ok(format!(
        "max deviation {:.2} (10^3 ties), {:.2} (10^3), {:.3} (10^5) points",
        worst[0], worst[1], worst[2]
    ))
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    let check = |graph: &Graph, mut store: ParamStore, tokens: &[u32], seed: u64| -> Result<f64, String> {
        let (_, grads) = loss_and_grad(graph, &store, tokens).map_err(err)?;
        let mut rng = rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..8 {
            let id = rng.random_range(0..store.len());
            let j = rng.random_range(0..store.data[id].len());
            let orig = store.data[id][j];
            store.data[id][j] = orig + H;
            let up = loss(graph, &store, tokens).map_err(err)?;
            store.data[id][j] = orig - H;
            let down = loss(graph, &store, tokens).map_err(err)?;
            store.data[id][j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads[id][j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            ensure!(rel < 1e-3, "{}[{j}]: analytic {analytic:e} numeric {numeric:e}", store.name(id));
            worst = worst.max(rel);
        }
        Ok(worst)
    };
    let tokens = [0, 3, 5, 2, 11, 7, 3, 1];
    let rc = RwkvConfig { vocab_size: 12, n_blocks: 1, d_model: 4 };
    let tc = TransformerConfig { vocab_size: 12, n_blocks: 1, d_model: 8, n_heads: 2, max_positions: 8 };
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let m = RwkvModel::random(rc, seed).map_err(err)?;
        let store = ParamStore::from_tensors(&m.named_tensors()).map_err(err)?;
        worst = worst.max(check(&Graph::rwkv(rc, &store).map_err(err)?, store, &tokens, seed)?);
        let m = TransformerModel::random(tc, seed).map_err(err)?;
        let store = ParamStore::from_tensors(&m.named_tensors()).map_err(err)?;
        worst = worst.max(check(&Graph::transformer(tc, &store).map_err(err)?, store, &tokens, seed)?);
    }
    Ok(format!("worst relative error {worst:.2e}"))
}

fn wkv_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = rng(seed);
        let d = rng.random_range(1..=8);
        let t_len = rng.random_range(1..=64);
        let w: Vec<f32> = (0..d).map(|_| rng.random_range(0.01..3.0)).collect();
        let u: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ks: Vec<Vec<f32>> = (0..t_len).map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let vs: Vec<Vec<f32>> = (0..t_len).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut state = WkvState::new(d);
        let mut got = Vec::new();
        for (k, v) in ks.iter().zip(&vs) {
            got.push(wkv_step(&mut state, k, v, &w, &u).map_err(err)?.into_inner());
        }
        let wide = |m: &[Vec<f32>]| -> Vec<Vec<f64>> { m.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect() };
        let w64: Vec<f64> = w.iter().map(|&x| x as f64).collect();
        let u64s: Vec<f64> = u.iter().map(|&x| x as f64).collect();
        let want = common::wkv_direct(&wide(&ks), &wide(&vs), &w64, &u64s);
        for (g, r) in got.iter().zip(&want) {
            for (&a, &b) in g.iter().zip(r) {
                worst = worst.max((a as f64 - b).abs() / b.abs().max(1e-2));
            }
        }
        ensure!(worst < 1e-4, "seed {seed}: relative error {worst:e}");
    }
    Ok(format!("100 seeds, worst relative error {worst:.2e}"))
}

fn calibrator_contract() -> Outcome {
    let docs = stub::documents(6, 20, 3);
    let mut sites = 0;
    for seed in 0..3 {
        for ripple in [false, true] {
            let mut model = stub::StubModel::new(3, seed);
            model.ripple = ripple;
            for heuristic in [false, true] {
                let cfg = CalibConfig { loss_inc: 1.01, heuristic, ..CalibConfig::default() };
                let (assignment, report) = calibrate(&model, &docs, &cfg, &Sequential).map_err(err)?;
                report.verify().map_err(err)?;
                for s in &report.sites {
                    if let Some(l) = s.accepted_loss {
                        ensure!(l / s.base_loss < cfg.loss_inc, "{}: ratio {}", s.site, l / s.base_loss);
                    }
                    ensure!(s.candidates_evaluated <= cfg.percentages.len(), "{}: too many evaluations", s.site);
                }
                let oracle = stub::oracle_calibrate(&model, &docs, &cfg.percentages, cfg.loss_inc, heuristic);
                ensure!(oracle.len() == report.sites.len(), "site count differs from oracle");
                for (r, o) in report.sites.iter().zip(&oracle) {
                    ensure!(
                        r.chosen_percentage == o.chosen_percentage && r.candidates_evaluated == o.evaluated,
                        "{} (heuristic {heuristic}): got {}% after {}, oracle {}% after {}",
                        r.site, r.chosen_percentage, r.candidates_evaluated, o.chosen_percentage, o.evaluated
                    );
                    ensure!(stub::equivalent(&o.magnitudes, r.lambda, o.lambda), "{}: λ differs from oracle", r.site);
                    ensure!(assignment.lambda(r.site) == r.lambda, "{}: assignment disagrees", r.site);
                }
                sites += report.sites.len();
                for threads in [2, 5] {
                    let pool = Pool::new(threads).map_err(err)?;
                    let (a2, r2) = calibrate(&model, &docs, &cfg, &pool).map_err(err)?;
                    ensure!(a2 == assignment && r2 == report, "{threads} threads changed the result");
                }
            }
        }
    }
    Ok(format!("{sites} stub sites match the exhaustive oracle; 1, 2 and 5 threads agree"))
}

struct Desk {
    model: RwkvModel,
    calibration: Vec<Document>,
    test: Vec<Document>,
    baseline: SparsityReport,
    pool: Pool,
    threads: usize,
    train_secs: f64,
    final_train_loss: f64,
}

const DESK_LOSS_INC: f64 = 1.003;

fn corpus_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/shakespeare.txt"))
}

fn desk_docs(split: SplitConfig, part: Part, max_len: usize) -> Result<Vec<Document>, String> {
    let opts = LoadOptions { max_len: Some(max_len), ..LoadOptions::default() };
    corpus_io::load_part(corpus_path(), opts, split, part).map_err(err)
}

fn desk() -> Result<Desk, String> {
    let split = SplitConfig { n_calib: 16, n_test: 64, seed: 0 };
    let train = desk_docs(split, Part::Train, 512)?;
    let calibration = desk_docs(split, Part::Calibration, 256)?;
    let test = desk_docs(split, Part::Test, 512)?;
    let threads = resolve_threads(None).map_err(err)?;
    let pool = Pool::new(threads).map_err(err)?;
    let cfg = TrainConfig { steps: 400, learning_rate: 3e-3, seq_len: 128, batch_size: 8, ..TrainConfig::default() };
    let config = RwkvConfig { vocab_size: 257, n_blocks: 4, d_model: 64 };
    let start = Instant::now();
    let (model, curve) = train_rwkv(config, 0, &train, &cfg, &pool).map_err(err)?;
    let train_secs = start.elapsed().as_secs_f64();
    let baseline = measure(&model, &ThresholdAssignment::new(), &test, None, &pool).map_err(err)?;
    Ok(Desk {
        model,
        calibration,
        test,
        baseline,
        pool,
        threads,
        train_secs,
        final_train_loss: curve.last().map_or(f64::NAN, |p| p.loss),
    })
}

fn desk_calibrate(d: &Desk, heuristic: bool) -> Result<(SparsityReport, CalibrationReport, f64), String> {
    let start = Instant::now();
    let cfg = CalibConfig { loss_inc: DESK_LOSS_INC, heuristic, ..CalibConfig::default() };
    let (assignment, report) = calibrate(&d.model, &d.calibration, &cfg, &d.pool).map_err(err)?;
    report.verify().map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let sparse = measure(&d.model, &assignment, &d.test, Some(d.baseline.loss), &d.pool).map_err(err)?;
    Ok((sparse, report, secs))
}

fn end_to_end(d: &Desk, heuristic_run: &(SparsityReport, CalibrationReport, f64)) -> Outcome {
    let uniform = 257f64.ln();
    let (sparse, _, calib_secs) = heuristic_run;
    let base = &d.baseline;
    let inc = sparse.loss_increase_percent.unwrap_or(f64::NAN);
    let summary = format!(
        "train {:.0} s with {} worker thread(s) (final {:.3}); test loss {:.4} = {:.1}% of ln 257; baseline sparsity {:.1}%; \
         calibrated {:.1}% at +{:.2}% loss (calib {:.0} s)",
        d.train_secs,
        d.threads,
        d.final_train_loss,
        base.loss,
        100.0 * base.loss / uniform,
        100.0 * base.weighted_average_sparsity,
        100.0 * sparse.weighted_average_sparsity,
        inc,
        calib_secs
    );
    ensure!(base.loss <= 0.8 * uniform, "test loss too high: {summary}");
    ensure!((0.15..=0.40).contains(&base.weighted_average_sparsity), "baseline sparsity out of band: {summary}");
    ensure!(sparse.weighted_average_sparsity >= 0.45, "calibrated sparsity too low: {summary}");
    ensure!(inc <= 10.0, "loss increase too high: {summary}");
    ensure!(d.train_secs + calib_secs < 1800.0 * d.threads as f64, "over budget: {summary}");
    Ok(summary)
}

fn heuristic(on: &CalibrationReport, off: &CalibrationReport) -> Outcome {
    let (a, b) = (on.candidate_evaluations, off.candidate_evaluations);
    ensure!(a < b, "heuristic on {a} evaluations, off {b}");
    Ok(format!("{a} evaluations with warm start, {b} without, ratio {:.2}", b as f64 / a as f64))
}

fn monotone() -> Outcome {
    let split = SplitConfig { n_calib: 8, n_test: 16, seed: 1 };
    let train = desk_docs(split, Part::Train, 256)?;
    let calib = desk_docs(split, Part::Calibration, 256)?;
    let test = desk_docs(split, Part::Test, 256)?;
    let pool = Pool::new(resolve_threads(None).map_err(err)?).map_err(err)?;
    let cfg = TrainConfig { steps: 150, seq_len: 64, batch_size: 4, learning_rate: 3e-3, ..TrainConfig::default() };
    let (model, _) = train_rwkv(RwkvConfig { vocab_size: 257, n_blocks: 1, d_model: 32 }, 5, &train, &cfg, &pool)
        .map_err(err)?;
    let baseline = measure(&model, &ThresholdAssignment::new(), &test, None, &pool).map_err(err)?;
    let mut rows = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for loss_inc in [1.001, 1.01, 1.1] {
        let (a, _) = calibrate(&model, &calib, &CalibConfig { loss_inc, ..CalibConfig::default() }, &pool).map_err(err)?;
        let r = measure(&model, &a, &test, Some(baseline.loss), &pool).map_err(err)?;
        rows.push(format!("{loss_inc}: {:.1}% / {:.4}", 100.0 * r.weighted_average_sparsity, r.loss));
        if let Some((s, l)) = prev {
            ensure!(r.weighted_average_sparsity >= s && r.loss >= l, "not monotone: {}", rows.join(", "));
        }
        prev = Some((r.weighted_average_sparsity, r.loss));
    }
    Ok(rows.join(", "))
}

fn cost_model() -> Outcome {
    let start = Instant::now();
    let config = srlm::cost_io::load_cost_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/seneca-default.toml"))
        .map_err(err)?;
    ensure!(config == hwcost::CostConfig::SENECA_DEFAULT, "configs/seneca-default.toml differs from the preset");
    let shape = BlockShape::rwkv(reference::D_MODEL);
    let run = |profile: &hwcost::DensityProfile| -> Result<CostReport, String> {
        let ops = hwcost::block_op_counts(&shape, profile, &config).map_err(err)?;
        hwcost::cost(&ops, &config).map_err(err)
    };
    let dense = run(&srlm::cli::reference_dense_profile(&shape))?;
    let dense_err = hwcost::max_relative_error(&dense, &reference::DENSE);
    ensure!(dense_err <= 0.05, "dense cells off by up to {:.2}%", 100.0 * dense_err);
    let profile = hwcost::back_derived_profile(&shape, &reference::DENSE, &reference::SPARSE, hwcost::SENECA_NATURAL_DENSITY);
    let sparse = run(&profile)?;
    let subs = |r: &CostReport| [r.time_mix, r.channel_mix, r.overall];
    let mut total_err = 0.0f64;
    for (m, r) in subs(&sparse).iter().zip(subs(&reference::SPARSE)) {
        for (a, b) in [(m.energy.total, r.energy.total), (m.latency.total, r.latency.total)] {
            total_err = total_err.max(((a - b) / b).abs());
        }
    }
    ensure!(total_err <= 0.05, "sparse totals off by up to {:.2}%", 100.0 * total_err);
    let ratio = hwcost::improvement(&dense, &sparse).map_err(err)?;
    let (tm, cm, all) = (ratio.time_mix.energy.total, ratio.channel_mix.energy.total, ratio.overall.energy.total);
    ensure!((2.3..=2.5).contains(&tm), "Time-Mix improvement {tm:.3}");
    ensure!((1.6..=1.75).contains(&cm), "Channel-Mix improvement {cm:.3}");
    ensure!((1.85..=1.95).contains(&all), "overall improvement {all:.3}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.2} s");
    Ok(format!(
        "dense max error {:.2}%, sparse totals max error {:.2}%, improvement TM {tm:.2}x CM {cm:.2}x overall {all:.2}x",
        100.0 * dense_err,
        100.0 * total_err
    ))
}

fn opt_overall() -> Outcome {
    let rows = [(0.0, 0.0, 96.0, 48.0), (50.0, 35.0, 96.0, 71.125), (46.0, 35.0, 97.0, 70.125), (48.0, 38.0, 97.0, 71.25), (50.0, 39.0, 97.0, 72.125)];
    for (q, u, d, want) in rows {
        let got = overall_sparsity_opt(q, u, d).map_err(err)?;
        ensure!(got == want, "({q}, {u}, {d}) gave {got}, expected {want}");
    }
    Ok("5 rows exact".into())
}

fn transformer() -> Outcome {
    let split = SplitConfig { n_calib: 8, n_test: 16, seed: 2 };
    let train = desk_docs(split, Part::Train, 128)?;
    let calib = desk_docs(split, Part::Calibration, 128)?;
    let test = desk_docs(split, Part::Test, 128)?;
    let pool = Pool::new(resolve_threads(None).map_err(err)?).map_err(err)?;
    let config = TransformerConfig { vocab_size: 257, n_blocks: 2, d_model: 32, n_heads: 4, max_positions: 128 };
    let cfg = TrainConfig { steps: 100, seq_len: 64, batch_size: 4, learning_rate: 3e-3, ..TrainConfig::default() };
    let (model, _) = train_transformer(config, 4, &train, &cfg, &pool).map_err(err)?;
    let positions: Vec<Position> = model.threshold_sites().iter().map(|s| s.id.position).collect();
    ensure!(positions == [Position::Qkv, Position::Up, Position::Qkv, Position::Up], "sites {positions:?}");
    let baseline = measure(&model, &ThresholdAssignment::new(), &test, None, &pool).map_err(err)?;
    let mut zeros = ThresholdAssignment::new();
    for b in 0..2 {
        for p in [Position::Qkv, Position::Up] {
            zeros.set(SiteId::new(b, p), 0.0, None).map_err(err)?;
        }
    }
    let same = measure(&model, &zeros, &test, Some(baseline.loss), &pool).map_err(err)?;
    ensure!(same.loss.to_bits() == baseline.loss.to_bits() && same.sites == baseline.sites, "λ=0 is not the baseline");
    let (assignment, report) =
        calibrate(&model, &calib, &CalibConfig { loss_inc: 1.01, ..CalibConfig::default() }, &pool).map_err(err)?;
    report.verify().map_err(err)?;
    let sparse = measure(&model, &assignment, &test, Some(baseline.loss), &pool).map_err(err)?;
    ensure!(
        sparse.weighted_average_sparsity > baseline.weighted_average_sparsity,
        "calibrated {} vs baseline {}",
        sparse.weighted_average_sparsity,
        baseline.weighted_average_sparsity
    );
    Ok(format!(
        "baseline {:.1}% -> {:.1}% at +{:.2}% loss",
        100.0 * baseline.weighted_average_sparsity,
        100.0 * sparse.weighted_average_sparsity,
        sparse.loss_increase_percent.unwrap_or(f64::NAN)
    ))
}

fn loss_increase_rows() -> Outcome {
    let a = format!("{:.2}", loss_increase(2.2377, 2.3377).map_err(err)?);
    let b = format!("{:.2}", loss_increase(1.9297, 2.0510).map_err(err)?);
    ensure!(a == "4.47" && b == "6.29", "got {a} and {b}");
    Ok(format!("{a}% and {b}%"))
}

fn report(n: usize, name: &str, outcome: Outcome, failed: &mut usize) {
    match outcome {
        Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail})"),
        Err(detail) => {
            *failed += 1;
            println!("criterion {n:>2} {name}: FAIL ({detail})");
        }
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failed = 0;
    let simple: [(usize, &str, fn() -> Outcome); 6] = [
        (1, "event/dense equivalence", event_dense),
        (2, "threshold operator semantics", threshold_semantics),
        (3, "percentile oracle", percentile),
        (4, "gradient check", gradient_check),
        (5, "WKV oracle", wkv_oracle),
        (6, "calibrator contract", calibrator_contract),
    ];
    for (n, name, f) in simple {
        if on(n) {
            report(n, name, guarded(f), &mut failed);
        }
    }
    if on(7) || on(8) {
        let desk = std::panic::catch_unwind(desk).unwrap_or_else(|_| Err("training panicked".into()));
        match desk {
            Ok(d) => {
                let with = desk_calibrate(&d, true);
                if on(7) {
                    let o = guarded(|| with.as_ref().map_err(Clone::clone).and_then(|w| end_to_end(&d, w)));
                    report(7, "desk-scale end to end", o, &mut failed);
                }
                if on(8) {
                    let o = guarded(|| {
                        let w = with.as_ref().map_err(Clone::clone)?;
                        let (_, off, _) = desk_calibrate(&d, false)?;
                        heuristic(&w.1, &off)
                    });
                    report(8, "heuristic effectiveness", o, &mut failed);
                }
            }
            Err(e) => {
                for (n, name) in [(7, "desk-scale end to end"), (8, "heuristic effectiveness")] {
                    if on(n) {
                        report(n, name, Err(e.clone()), &mut failed);
                    }
                }
            }
        }
    }
    let rest: [(usize, &str, fn() -> Outcome); 5] = [
        (9, "monotone tradeoff", monotone),
        (10, "cost-model reproduction", cost_model),
        (11, "OPT overall sparsity arithmetic", opt_overall),
        (12, "transformer generalization", transformer),
        (13, "loss-increase formula", loss_increase_rows),
    ];
    for (n, name, f) in rest {
        if on(n) {
            report(n, name, guarded(f), &mut failed);
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
