use std::fs::File;
use std::io::{BufWriter, Write};

use hetqr::estimator::{Estimator, EstimatorFit, FitPenalty, Method};
use hetqr::hetqr::HetQrConfig;
use hetqr::model::{Dataset, QuantileGrid};
use hetqr::tuning::{tune_cv, tune_validation_with_fit, LambdaGrid, TuningMethod, TuningResult};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::{Failure, FitArgs};

const SCHEMA: u32 = 1;

#[derive(Serialize)]
struct FitJson {
    schema: u32,
    method: String,
    taus: Vec<f64>,
    pis: Vec<f64>,
    n: usize,
    feature_names: Vec<String>,
    lambda: Option<f64>,
    tuning: Option<TuningJson>,
    intercepts: Vec<f64>,
    /// One row per level; zeros are written out.
    slopes: Vec<Vec<f64>>,
    pattern: Vec<Vec<bool>>,
    model_size: usize,
    objective: f64,
    penalty: PenaltyJson,
    objective_trace: Option<Vec<f64>>,
    iterations: Option<usize>,
    converged: Option<bool>,
    xi: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct TuningJson {
    rule: String,
    lambdas: Vec<f64>,
    scores: Vec<f64>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PenaltyJson {
    None,
    /// Objective adds `Σ_mj weights[m][j]·|slope_mj|`.
    L1 {
        weights: Vec<Vec<f64>>,
    },
    /// Objective adds `n·lambda_n·Σ_j sqrt(Σ_m omega[m][j]·|slope_mj|)`.
    Group {
        lambda_n: f64,
        omega: Vec<Vec<f64>>,
    },
}

enum TuneSpec {
    Cv(usize),
    Valid(String),
}

fn parse_tune(spec: &str) -> Result<TuneSpec, Failure> {
    match spec.split_once(':') {
        Some(("cv", k)) => k
            .parse()
            .map(TuneSpec::Cv)
            .map_err(|_| Failure::input(format!("bad fold count in --tune {spec:?}"))),
        Some(("valid", path)) if !path.is_empty() => Ok(TuneSpec::Valid(path.to_string())),
        _ => Err(Failure::input(format!(
            "--tune must be cv:<k> or valid:<csv>, got {spec:?}"
        ))),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn run(args: FitArgs) -> Result<(), Failure> {
    let data = Dataset::from_csv_path(&args.data)
        .map_err(|e| Failure::input(format!("{}: {e}", args.data.display())))?;
    let grid = match &args.pis {
        Some(pis) => QuantileGrid::with_weights(args.taus.clone(), pis.clone())?,
        None => QuantileGrid::new(args.taus.clone())?,
    };
    let config = HetQrConfig {
        max_outer_iters: args.max_outer_iters,
        tol: args.tol,
        ..HetQrConfig::default()
    };
    config.validate()?;
    let est = Estimator::with_config(args.method, config);

    let (fit, tuning) = if !args.method.is_penalized() {
        (est.fit(&data, &grid, 0.0)?, None)
    } else if let Some(lambda) = args.lambda {
        (est.fit(&data, &grid, lambda)?, None)
    } else {
        let lambdas = match &args.lambdas {
            Some(v) => LambdaGrid::new(v.clone())?,
            None => LambdaGrid::default_for(data.n()),
        };
        match parse_tune(args.tune.as_deref().unwrap_or("cv:3"))? {
            TuneSpec::Cv(k) => {
                let result = tune_cv(&data, &grid, &lambdas, k, args.seed, &est)?;
                (est.fit(&data, &grid, result.best_lambda)?, Some(result))
            }
            TuneSpec::Valid(path) => {
                let valid = Dataset::from_csv_path(&path)
                    .map_err(|e| Failure::input(format!("{path}: {e}")))?;
                let (result, fit) = tune_validation_with_fit(&data, &valid, &grid, &lambdas, &est)?;
                (fit, Some(result))
            }
        }
    };

    print_table(&data, &grid, &fit, tuning.as_ref());
    if let Some(path) = &args.out {
        let json = to_json(&data, &grid, &fit, tuning.as_ref())?;
        let file =
            File::create(path).map_err(|e| Failure::output(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &json).map_err(|e| Failure::output(e.to_string()))?;
        writeln!(w)
            .and_then(|_| w.flush())
            .map_err(|e| Failure::output(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn to_json(
    data: &Dataset,
    grid: &QuantileGrid,
    fit: &EstimatorFit,
    tuning: Option<&TuningResult>,
) -> Result<FitJson, Failure> {
    let penalty = match &fit.penalty {
        FitPenalty::None => PenaltyJson::None,
        FitPenalty::L1(w) => PenaltyJson::L1 { weights: rows(w) },
        FitPenalty::Group(w) => PenaltyJson::Group {
            lambda_n: w.lambda_n(),
            omega: rows(w.omega()),
        },
    };
    let report = fit.report.as_ref();
    Ok(FitJson {
        schema: SCHEMA,
        method: fit.method.to_string(),
        taus: grid.taus().to_vec(),
        pis: grid.pis().to_vec(),
        n: data.n(),
        feature_names: data.feature_labels(),
        lambda: fit.method.is_penalized().then_some(fit.lambda),
        tuning: tuning.map(|t| TuningJson {
            rule: match t.method {
                TuningMethod::ValidationSet => "validation".to_string(),
                TuningMethod::KFoldCV { k } => format!("cv:{k}"),
            },
            lambdas: t.lambdas.clone(),
            scores: t.scores.clone(),
        }),
        intercepts: fit.coef.intercepts().iter().copied().collect(),
        slopes: rows(fit.coef.slopes()),
        pattern: fit.pattern.rows().map(<[bool]>::to_vec).collect(),
        model_size: fit.pattern.count(),
        objective: fit.objective(data, grid)?,
        penalty,
        objective_trace: report.map(|r| r.objective_trace.clone()),
        iterations: report.map(|r| r.iterations),
        converged: report.map(|r| r.converged),
        xi: report.map(|r| r.xi.clone()),
    })
}

/// Coefficients by level; zero slopes are left blank.
fn print_table(
    data: &Dataset,
    grid: &QuantileGrid,
    fit: &EstimatorFit,
    tuning: Option<&TuningResult>,
) {
    let mut lines = Vec::new();
    match (fit.method, tuning) {
        (Method::Qr, _) => lines.push(format!("method {}", fit.method)),
        (_, Some(t)) => lines.push(format!(
            "method {}  lambda {:.6e} (selected from {} candidates)",
            fit.method,
            fit.lambda,
            t.lambdas.len()
        )),
        (_, None) => lines.push(format!("method {}  lambda {:.6e}", fit.method, fit.lambda)),
    }
    let labels = data.feature_labels();
    let name_w = labels.iter().map(String::len).max().unwrap_or(0).max(11);
    let mut header = format!("{:<name_w$}", "");
    for tau in grid.taus() {
        header.push_str(&format!("  {:>10}", format!("tau={tau}")));
    }
    lines.push(header.trim_end().to_string());
    let mut row = format!("{:<name_w$}", "(intercept)");
    for m in 0..grid.m() {
        row.push_str(&format!("  {:>10.4}", fit.coef.intercept(m)));
    }
    lines.push(row);
    for (j, label) in labels.iter().enumerate() {
        let mut row = format!("{label:<name_w$}");
        for m in 0..grid.m() {
            if fit.pattern.get(m, j) {
                row.push_str(&format!("  {:>10.4}", fit.coef.slope(m, j)));
            } else {
                row.push_str(&format!("  {:>10}", ""));
            }
        }
        lines.push(row.trim_end().to_string());
    }
    lines.push(format!("model size {}", fit.pattern.count()));
    println!("{}", lines.join("\n"));
}
