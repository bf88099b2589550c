//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use common::{
    brute_force_pinball, golden_section, median, pinball_objective, random_design, sample_quantile,
    to_vec,
};
use hetqr::estimator::{Estimator, Method};
use hetqr::hetqr::{fit_hetqr, lambda1_for, make_weights, HetQrConfig};
use hetqr::lp::{solve_pinball, PinballProblem, SolverOptions};
use hetqr::model::{group_penalty, CoefficientSet, Dataset, PenaltyWeights, QuantileGrid};
use hetqr::qr_fit::fit_qr;
use hetqr::simgen::{rng_from_seed, sample, Correlation, ErrorDist, OracleTruth, ScenarioKind};
use hetqr::study::{run_study, MethodRecord, StudyConfig, StudyReport};
use hetqr::tuning::LambdaGrid;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Objective traces of every Het-QR fit produced by the suite.
static TRACES: Mutex<Vec<Vec<f64>>> = Mutex::new(Vec::new());

fn levels() -> QuantileGrid {
    QuantileGrid::new(vec![0.25, 0.5, 0.75]).unwrap()
}

/// Grid in units of `λ·n`.
fn scaled_grid(n: usize, lo: f64, hi: f64, count: usize) -> LambdaGrid {
    LambdaGrid::log_spaced(lo / n as f64, hi / n as f64, count).unwrap()
}

fn study(
    kind: ScenarioKind,
    n: usize,
    reps: usize,
    seed: u64,
    methods: Vec<Method>,
    lambdas: LambdaGrid,
) -> StudyReport {
    let mut config = StudyConfig::new(kind, n, reps, seed, methods);
    config.lambdas = lambdas;
    let report = run_study(&config).expect("study runs");
    let mut traces = TRACES.lock().unwrap();
    for rec in &report.records {
        for (_, outcome) in &rec.outcomes {
            if let Ok(MethodRecord { trace: Some(t), .. }) = outcome {
                traces.push(t.clone());
            }
        }
    }
    report
}

fn records(report: &StudyReport, method: Method) -> Vec<&MethodRecord> {
    report
        .records
        .iter()
        .flat_map(|r| r.outcomes.iter())
        .filter(|(m, _)| *m == method)
        .filter_map(|(_, o)| o.as_ref().ok())
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn no_failures(report: &StudyReport) -> Result<(), String> {
    match report.failure_count() {
        0 => Ok(()),
        k => Err(format!("{k} fit(s) failed")),
    }
}

fn heteroscale_small() -> Outcome {
    let report = study(
        ScenarioKind::HeteroScale6,
        500,
        20,
        101,
        vec![Method::HetQr],
        scaled_grid(500, 0.01, 100.0, 25),
    );
    no_failures(&report)?;
    let het = records(&report, Method::HetQr);
    let size = mean(het.iter().map(|r| r.metrics.model_size));
    let fm = mean(het.iter().map(|r| r.metrics.fm));
    verdict(
        (8.5..=11.5).contains(&size) && fm >= 0.90,
        format!("p=6, 20 reps: Het-QR mean size {size:.2} (want 8.5..11.5), mean FM {fm:.3} (want >= 0.90)"),
    )
}

fn heteroscale_padded() -> Outcome {
    let report = study(
        ScenarioKind::HeteroScale100,
        500,
        20,
        102,
        vec![Method::Qr, Method::HetQr],
        scaled_grid(500, 0.01, 100.0, 25),
    );
    no_failures(&report)?;
    let het = records(&report, Method::HetQr);
    let size = mean(het.iter().map(|r| r.metrics.model_size));
    let fm = mean(het.iter().map(|r| r.metrics.fm));
    let qr_sizes: Vec<f64> = records(&report, Method::Qr)
        .iter()
        .map(|r| r.metrics.model_size)
        .collect();
    let qr_full = qr_sizes.len() == 20 && qr_sizes.iter().all(|&s| s == 300.0);
    verdict(
        (8.0..=12.0).contains(&size) && fm >= 0.90 && qr_full,
        format!(
            "p=100, 20 reps: Het-QR mean size {size:.2} (want 8..12), mean FM {fm:.3} (want >= 0.90), QR size 300 in {}/20",
            qr_sizes.iter().filter(|&&s| s == 300.0).count()
        ),
    )
}

fn block_design() -> Outcome {
    let kind = ScenarioKind::block_sparse(ErrorDist::Normal, Correlation::Ar1);
    let report = study(
        kind,
        500,
        20,
        103,
        vec![Method::QrLasso, Method::HetQr],
        scaled_grid(500, 1e-4, 1e3, 36),
    );
    no_failures(&report)?;
    let het = records(&report, Method::HetQr);
    let lasso = records(&report, Method::QrLasso);
    let size = mean(het.iter().map(|r| r.metrics.model_size));
    let pee = 100.0 * mean(het.iter().map(|r| r.metrics.pee));
    let wins = het
        .iter()
        .zip(&lasso)
        .filter(|(h, l)| h.metrics.pee < l.metrics.pee)
        .count();
    verdict(
        (7.5..=10.5).contains(&size) && pee <= 60.0 && wins >= 16,
        format!(
            "block AR normal, 20 reps: Het-QR mean size {size:.2} (want 7.5..10.5), PEE x100 {pee:.1} (want <= 60), \
             beats QR-LASSO PEE in {wins}/20 (want >= 16)"
        ),
    )
}

fn high_dimensional() -> Outcome {
    let kind = ScenarioKind::HighDim600 {
        error: ErrorDist::Normal,
        corr: Correlation::Ar1,
    };
    let start = Instant::now();
    let report = study(
        kind,
        500,
        10,
        104,
        vec![Method::HetQr],
        scaled_grid(500, 1.0, 100.0, 9),
    );
    let elapsed = start.elapsed();
    no_failures(&report)?;
    let size = mean(
        records(&report, Method::HetQr)
            .iter()
            .map(|r| r.metrics.model_size),
    );
    verdict(
        (9.0..=13.0).contains(&size) && elapsed <= Duration::from_secs(30 * 60),
        format!(
            "p=600 > n=500, 10 reps: Het-QR mean size {size:.2} (want 9..13), no solver failures, {:.0} s (want <= 1800)",
            elapsed.as_secs_f64()
        ),
    )
}

fn pinball_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let q = rng.random_range(1..=2);
        let r = rng.random_range(q..=8);
        let intercept = q == 2 && rng.random_bool(0.5);
        let x = random_design(&mut rng, r, q, intercept);
        let y: Vec<f64> = (0..r).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..r).map(|_| rng.random_range(0.05..0.95)).collect();
        let w: Vec<f64> = (0..r).map(|_| rng.random_range(0.5..2.0)).collect();
        let prob = PinballProblem::new(
            x.clone(),
            DVector::from_row_slice(&y),
            DVector::from_row_slice(&t),
            DVector::from_row_slice(&w),
        )
        .map_err(|e| e.to_string())?;
        let sol = solve_pinball(&prob, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let got = pinball_objective(&x, &y, &t, &w, &to_vec(&sol.beta));
        let (_, best) = brute_force_pinball(&x, &y, &t, &w);
        worst = worst.max((got - best).abs());
    }
    verdict(
        worst < 1e-6,
        format!("200 instances: max objective gap to brute force {worst:.2e} (want < 1e-6)"),
    )
}

fn transformed_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (m, p, n) = (
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(1..=100),
        );
        let slopes = DMatrix::from_fn(m, p, |_, _| {
            if rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(-5.0..5.0)
            }
        });
        let coef = CoefficientSet::new(DVector::zeros(m), slopes).unwrap();
        let omega = DMatrix::from_fn(m, p, |_, _| rng.random_range(0.01..10.0));
        let lambda_n = rng.random_range(1e-3..5.0);
        let w = PenaltyWeights::new(omega.clone(), lambda_n).unwrap();
        let lambda1 = lambda1_for(n, lambda_n);
        let direct = group_penalty(&coef, &w, n).unwrap();
        let transformed: f64 = (0..p)
            .map(|j| {
                let s: f64 = (0..m).map(|k| omega[(k, j)] * coef.slope(k, j).abs()).sum();
                let f = |xi: f64| lambda1 * xi + if s == 0.0 { 0.0 } else { s / xi };
                let ln = golden_section(|u| f(u.exp()), -690.0, (1e6 * (1.0 + s)).ln(), 300);
                f(ln.exp())
            })
            .sum();
        worst = worst.max((transformed - direct).abs() / direct.max(1.0));
    }
    verdict(worst <= 1e-8, format!("200 triples: max gap between the xi-minimized form and the direct penalty {worst:.2e} (want <= 1e-8)"))
}

fn extra_paths() {
    // Full λ paths on fresh data so the descent check also sees fits that
    // tuning would not select.
    let grid = levels();
    let kinds = [
        (ScenarioKind::HeteroScale6, 300),
        (
            ScenarioKind::BlockSparse {
                error: ErrorDist::T3,
                corr: Correlation::CompoundSymmetry,
                blocks: 4,
            },
            300,
        ),
        (
            ScenarioKind::block_sparse(ErrorDist::Exp1, Correlation::Ar1),
            200,
        ),
    ];
    let est = Estimator::new(Method::HetQr);
    let mut traces = TRACES.lock().unwrap();
    for (i, (kind, n)) in kinds.into_iter().enumerate() {
        let data = sample(kind, n, &mut rng_from_seed(107 + i as u64)).unwrap();
        for fit in est
            .fit_path(&data, &grid, scaled_grid(n, 1e-3, 1e3, 25).values())
            .into_iter()
            .flatten()
        {
            if let Some(r) = fit.report {
                traces.push(r.objective_trace);
            }
        }
    }
}

fn monotone_descent() -> Outcome {
    extra_paths();
    let traces = TRACES.lock().unwrap();
    let steps: usize = traces.iter().map(|t| t.len().saturating_sub(1)).sum();
    let violations = traces
        .iter()
        .flat_map(|t| t.windows(2))
        .filter(|w| w[1] > w[0] + 1e-10)
        .count();
    verdict(
        violations == 0 && !traces.is_empty(),
        format!(
            "{} Het-QR traces, {steps} outer steps: {violations} increases beyond 1e-10",
            traces.len()
        ),
    )
}

fn reductions() -> Outcome {
    let grid = levels();
    let mut zero_gap: f64 = 0.0;
    let mut slope_max: f64 = 0.0;
    let mut quantile_gap: f64 = 0.0;
    let kinds = [
        ScenarioKind::HeteroScale6,
        ScenarioKind::BlockSparse {
            error: ErrorDist::Normal,
            corr: Correlation::Ar1,
            blocks: 4,
        },
        ScenarioKind::block_sparse(ErrorDist::T3, Correlation::CompoundSymmetry),
    ];
    for (i, kind) in kinds.into_iter().enumerate() {
        // Odd sample sizes keep the sample quantiles at these levels unique.
        let data: Dataset = sample(kind, 301, &mut rng_from_seed(110 + i as u64)).unwrap();
        let qr = fit_qr(&data, &grid).map_err(|e| e.to_string())?;
        for (lambda, huge) in [(0.0, false), (1e6, true)] {
            let config = HetQrConfig::with_lambda(lambda);
            let w = make_weights(&data, &grid, &config).map_err(|e| e.to_string())?;
            let fit = fit_hetqr(&data, &grid, &w, &config).map_err(|e| e.to_string())?;
            if huge {
                slope_max = slope_max.max(fit.coef.slopes().amax());
                let y: Vec<f64> = data.y().iter().copied().collect();
                for (m, &tau) in grid.taus().iter().enumerate() {
                    quantile_gap =
                        quantile_gap.max((fit.coef.intercept(m) - sample_quantile(&y, tau)).abs());
                }
            } else {
                zero_gap = zero_gap
                    .max((fit.coef.slopes() - qr.slopes()).amax())
                    .max((fit.coef.intercepts() - qr.intercepts()).amax());
            }
        }
    }
    verdict(
        zero_gap < 1e-6 && slope_max < 1e-6 && quantile_gap < 1e-6,
        format!(
            "lambda=0 vs QR max gap {zero_gap:.1e}; huge lambda max |slope| {slope_max:.1e}, intercept vs sample quantile {quantile_gap:.1e} (want all < 1e-6)"
        ),
    )
}

fn generator_coverage() -> Outcome {
    let taus = [0.1, 0.25, 0.5, 0.75, 0.9];
    let mut kinds = ScenarioKind::all();
    kinds.push(ScenarioKind::BlockSparse {
        error: ErrorDist::Normal,
        corr: Correlation::Ar1,
        blocks: 4,
    });
    let draws = 100_000;
    let chunk = 10_000;
    let mut worst = (0.0, String::new());
    for (i, &kind) in kinds.iter().enumerate() {
        let truth = OracleTruth::new(kind);
        let mut rng = rng_from_seed(120 + i as u64);
        let mut below = [0usize; 5];
        for _ in 0..draws / chunk {
            let data = sample(kind, chunk, &mut rng).map_err(|e| e.to_string())?;
            for r in 0..chunk {
                let z: Vec<f64> = data.z().row(r).iter().copied().collect();
                for (k, &tau) in taus.iter().enumerate() {
                    if data.y()[r] <= truth.q_star(tau, &z) {
                        below[k] += 1;
                    }
                }
            }
        }
        for (k, &tau) in taus.iter().enumerate() {
            let gap = (below[k] as f64 / draws as f64 - tau).abs();
            if gap > worst.0 {
                worst = (gap, format!("{kind} at tau={tau}"));
            }
        }
    }
    verdict(
        worst.0 <= 0.01,
        format!(
            "{} designs, 1e5 draws each: worst coverage gap {:.4} ({}) (want <= 0.01)",
            kinds.len(),
            worst.0,
            worst.1
        ),
    )
}

fn consistency_trend() -> Outcome {
    let kind = ScenarioKind::BlockSparse {
        error: ErrorDist::Normal,
        corr: Correlation::Ar1,
        blocks: 4,
    };
    let truth = OracleTruth::new(kind).coef_at(&levels());
    let mut medians = Vec::new();
    for (n, seed) in [(200, 130), (800, 131)] {
        let report = study(
            kind,
            n,
            10,
            seed,
            vec![Method::HetQr],
            scaled_grid(n, 1e-3, 1e3, 31),
        );
        no_failures(&report)?;
        let mut errors: Vec<f64> = records(&report, Method::HetQr)
            .iter()
            .map(|r| {
                let ds = r.coef.slopes() - truth.slopes();
                let di = r.coef.intercepts() - truth.intercepts();
                (ds.norm_squared() + di.norm_squared()).sqrt()
            })
            .collect();
        medians.push(median(&mut errors));
    }
    verdict(
        medians[1] < medians[0],
        format!(
            "p=20 block design, 10 reps: median coefficient error {:.4} at n=200, {:.4} at n=800",
            medians[0], medians[1]
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("heteroscale p=6 sanity", heteroscale_small),
        ("heteroscale p=100", heteroscale_padded),
        ("block AR normal design", block_design),
        ("p > n design", high_dimensional),
        ("pinball solver vs brute force", pinball_oracle),
        ("transformed-objective identity", transformed_identity),
        ("monotone descent", monotone_descent),
        ("reductions", reductions),
        ("generator coverage", generator_coverage),
        ("consistency trend", consistency_trend),
    ];
    // Run descent last so it sees the traces of every study.
    let order = [0, 1, 2, 3, 4, 5, 7, 8, 9, 6];
    let mut lines = vec![String::new(); criteria.len()];
    let mut failed = 0;
    for &k in &order {
        let (name, run) = criteria[k];
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let line = format!(
            "criterion {:>2} {tag} {name}: {detail} [{:.1} s]",
            k + 1,
            start.elapsed().as_secs_f64()
        );
        eprintln!("{line}");
        lines[k] = line;
    }
    println!("\nacceptance summary");
    for line in &lines {
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
