//! Monte-Carlo study harness: repeated draws of a design, tuning on an
//! independent validation sample, scoring on a large test sample, and
//! mean (standard error) summaries per method.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::estimator::{Estimator, EstimatorFit, Method};
use crate::hetqr::HetQrConfig;
use crate::metrics::{f_measure, model_size, pee};
use crate::model::{stacked_loss, CoefficientSet, QuantileGrid};
use crate::simgen::{mix_seed, rng_from_seed, sample, OracleTruth, ScenarioKind};
use crate::tuning::{tune_validation_with_fit, LambdaGrid};

/// Test rows generated per chunk when scoring.
const TEST_CHUNK: usize = 5_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub kind: ScenarioKind,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub grid: QuantileGrid,
    pub lambdas: LambdaGrid,
    pub hetqr: HetQrConfig,
    /// Validation size as a multiple of `n`.
    pub valid_factor: usize,
    /// Test size as a multiple of `n`.
    pub test_factor: usize,
}

impl StudyConfig {
    /// Levels 0.25, 0.5, 0.75, the default λ grid for `n`, validation `10n`
    /// and test `100n`.
    pub fn new(
        kind: ScenarioKind,
        n: usize,
        replications: usize,
        seed: u64,
        methods: Vec<Method>,
    ) -> Self {
        Self {
            kind,
            n,
            replications,
            seed,
            methods,
            grid: QuantileGrid::new(vec![0.25, 0.5, 0.75]).expect("valid levels"),
            lambdas: LambdaGrid::default_for(n),
            hetqr: HetQrConfig::default(),
            valid_factor: 10,
            test_factor: 100,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.replications == 0 {
            return invalid("sample size and replication count must be positive");
        }
        if self.valid_factor == 0 || self.test_factor == 0 {
            return invalid("validation and test multiples must be positive");
        }
        if self.methods.is_empty() {
            return invalid("no methods requested");
        }
        self.hetqr.validate()
    }

    /// Methods that will actually run, plus a notice for each dropped one.
    /// Unpenalized QR is skipped when `p >= n`.
    pub fn effective_methods(&self) -> (Vec<Method>, Vec<String>) {
        let mut kept = Vec::new();
        let mut notices = Vec::new();
        for &m in &self.methods {
            if kept.contains(&m) {
                continue;
            }
            if m == Method::Qr && self.kind.p() >= self.n {
                notices.push(format!(
                    "omitting {}: unpenalized quantile regression needs n > p (n = {}, p = {})",
                    m.label(),
                    self.n,
                    self.kind.p()
                ));
            } else {
                kept.push(m);
            }
        }
        (kept, notices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub model_size: f64,
    pub fm: f64,
    pub pee: f64,
    pub qpe: f64,
    pub pe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecord {
    pub method: Method,
    /// Selected λ (`None` for unpenalized QR).
    pub lambda: Option<f64>,
    pub metrics: Metrics,
    pub coef: CoefficientSet,
    /// Het-QR objective trace at the selected λ.
    pub trace: Option<Vec<f64>>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub outcomes: Vec<(Method, std::result::Result<MethodRecord, String>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard error of the mean; absent with fewer than two values.
    pub se: Option<f64>,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let k = values.len();
        if k == 0 {
            return Self {
                mean: f64::NAN,
                se: None,
            };
        }
        let mean = values.iter().sum::<f64>() / k as f64;
        let se = (k > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        });
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    pub model_size: MeanSe,
    pub fm: MeanSe,
    pub pee: MeanSe,
    pub qpe: MeanSe,
    pub pe: MeanSe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub kind: ScenarioKind,
    pub n: usize,
    pub replications: usize,
    pub notices: Vec<String>,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicationRecord>,
}

/// Runs the study; replications run in parallel and are reported in order.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let (methods, notices) = config.effective_methods();
    for notice in &notices {
        log::info!("{notice}");
    }
    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, &methods, r))
        .collect::<Result<_>>()?;
    let rows = methods.iter().map(|&m| summarize(m, &records)).collect();
    Ok(StudyReport {
        kind: config.kind,
        n: config.n,
        replications: config.replications,
        notices,
        rows,
        records,
    })
}

fn run_replication(
    config: &StudyConfig,
    methods: &[Method],
    index: usize,
) -> Result<ReplicationRecord> {
    let seed = mix_seed(config.seed, index as u64);
    let mut rng = rng_from_seed(seed);
    let train = sample(config.kind, config.n, &mut rng)?;
    let valid = sample(config.kind, config.valid_factor * config.n, &mut rng)?;
    let oracle = OracleTruth::new(config.kind);

    let fits: Vec<(Method, std::result::Result<EstimatorFit, String>)> = methods
        .iter()
        .map(|&m| {
            let est = Estimator::with_config(m, config.hetqr);
            let fit = if m.is_penalized() {
                tune_validation_with_fit(&train, &valid, &config.grid, &config.lambdas, &est)
                    .map(|(_, fit)| fit)
            } else {
                est.fit(&train, &config.grid, 0.0)
            };
            if let Err(e) = &fit {
                log::warn!("replication {index}: {} failed: {e}", m.label());
            }
            (m, fit.map_err(|e| e.to_string()))
        })
        .collect();

    // Score every successful fit on one test sample, generated in chunks.
    let ok: Vec<&CoefficientSet> = fits
        .iter()
        .filter_map(|(_, f)| f.as_ref().ok().map(|f| &f.coef))
        .collect();
    let mut loss = vec![0.0; ok.len()];
    let mut sq_gap = vec![0.0; ok.len()];
    let truth = oracle.coef_at(&config.grid);
    let total = config.test_factor * config.n;
    let mut done = 0;
    while done < total {
        let rows = TEST_CHUNK.min(total - done);
        let chunk = sample(config.kind, rows, &mut rng)?;
        let targets: Vec<_> = (0..config.grid.m())
            .map(|m| truth.predict_level(m, chunk.z()))
            .collect();
        for (k, coef) in ok.iter().enumerate() {
            loss[k] += stacked_loss(&chunk, &config.grid, coef)?;
            for (m, target) in targets.iter().enumerate() {
                sq_gap[k] += (target - coef.predict_level(m, chunk.z())).norm_squared();
            }
        }
        done += rows;
    }

    let truth_pattern = oracle.true_pattern(&config.grid);
    let truth_slopes = oracle.slopes_at(&config.grid);
    let mut k = 0;
    let mut outcomes = Vec::with_capacity(fits.len());
    for (m, fit) in fits {
        let outcome = match fit {
            Ok(fit) => {
                let metrics = Metrics {
                    model_size: model_size(&fit.pattern) as f64,
                    fm: f_measure(&fit.pattern, &truth_pattern)?,
                    pee: pee(&fit.coef, &truth_slopes)?,
                    qpe: sq_gap[k] / (config.grid.m() * total) as f64,
                    pe: loss[k] / total as f64,
                };
                k += 1;
                Ok(MethodRecord {
                    method: m,
                    lambda: m.is_penalized().then_some(fit.lambda),
                    metrics,
                    trace: fit.report.as_ref().map(|r| r.objective_trace.clone()),
                    converged: fit.report.as_ref().map(|r| r.converged),
                    iterations: fit.report.as_ref().map(|r| r.iterations),
                    coef: fit.coef,
                })
            }
            Err(e) => Err(e),
        };
        outcomes.push((m, outcome));
    }
    Ok(ReplicationRecord {
        index,
        seed,
        outcomes,
    })
}

fn summarize(method: Method, records: &[ReplicationRecord]) -> SummaryRow {
    let ok: Vec<&Metrics> = records
        .iter()
        .flat_map(|r| r.outcomes.iter())
        .filter(|(m, _)| *m == method)
        .filter_map(|(_, o)| o.as_ref().ok().map(|rec| &rec.metrics))
        .collect();
    let column = |f: fn(&Metrics) -> f64| MeanSe::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
    SummaryRow {
        method,
        successes: ok.len(),
        failures: records.len() - ok.len(),
        model_size: column(|m| m.model_size),
        fm: column(|m| m.fm),
        pee: column(|m| m.pee),
        qpe: column(|m| m.qpe),
        pe: column(|m| m.pe),
    }
}

fn cell(v: MeanSe, scale: f64) -> String {
    if v.mean.is_nan() {
        return "-".to_string();
    }
    let mean = v.mean * scale;
    match v.se {
        Some(se) if se > 0.0 => format!("{mean:.1}({:.1})", se * scale),
        _ if mean.fract() == 0.0 => format!("{mean:.0}"),
        _ => format!("{mean:.1}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StudyReport {
    /// Total failed (replication, method) fits.
    pub fn failure_count(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }

    /// Aligned text table, scaled as model size, FM (%), PEE×100, QPE×10³,
    /// PE×10³, with standard errors of the mean in parentheses.
    pub fn to_text(&self) -> String {
        let header = [
            "Method",
            "Model-size",
            "FM (%)",
            "PEE x 100",
            "QPE x 10^3",
            "PE x 10^3",
        ];
        let mut rows: Vec<[String; 6]> = vec![header.map(str::to_string)];
        for r in &self.rows {
            rows.push([
                r.method.label().to_string(),
                cell(r.model_size, 1.0),
                cell(r.fm, 100.0),
                cell(r.pee, 100.0),
                cell(r.qpe, 1e3),
                cell(r.pe, 1e3),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "{} (n = {}, p = {}, {} replications)\n",
            self.kind,
            self.n,
            self.kind.p(),
            self.replications
        );
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 10));
            }
        }
        for r in self.rows.iter().filter(|r| r.failures > 0) {
            let _ = writeln!(
                out,
                "{}: {} of {} replications failed and are excluded",
                r.method.label(),
                r.failures,
                self.replications
            );
        }
        for notice in &self.notices {
            let _ = writeln!(out, "note: {notice}");
        }
        out
    }

    /// Summary table in unscaled units, one row per method.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["method".to_string(), "successes".into(), "failures".into()];
        for name in ["model_size", "fm", "pee", "qpe", "pe"] {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_se"));
        }
        csv.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.method.to_string(),
                r.successes.to_string(),
                r.failures.to_string(),
            ];
            for v in [r.model_size, r.fm, r.pee, r.qpe, r.pe] {
                rec.push(v.mean.to_string());
                rec.push(opt(v.se));
            }
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// One row per (replication, method), including failures.
    pub fn write_records_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "replication",
            "seed",
            "method",
            "lambda",
            "model_size",
            "fm",
            "pee",
            "qpe",
            "pe",
            "iterations",
            "converged",
            "error",
        ])?;
        for rec in &self.records {
            for (m, outcome) in &rec.outcomes {
                let mut row = vec![rec.index.to_string(), rec.seed.to_string(), m.to_string()];
                match outcome {
                    Ok(r) => {
                        let x = r.metrics;
                        row.push(opt(r.lambda));
                        for v in [x.model_size, x.fm, x.pee, x.qpe, x.pe] {
                            row.push(v.to_string());
                        }
                        row.push(r.iterations.map(|i| i.to_string()).unwrap_or_default());
                        row.push(r.converged.map(|c| c.to_string()).unwrap_or_default());
                        row.push(String::new());
                    }
                    Err(e) => {
                        row.extend(std::iter::repeat_n(String::new(), 8));
                        row.push(e.clone());
                    }
                }
                csv.write_record(&row)?;
            }
        }
        csv.flush()?;
        Ok(())
    }
}
