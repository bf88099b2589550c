use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hetqr::estimator::Method;
use hetqr::model::QuantileGrid;
use hetqr::simgen::ScenarioKind;
use hetqr::study::{run_study, StudyConfig, StudyReport};
use hetqr::tuning::LambdaGrid;
use log::warn;
use serde::Deserialize;

use crate::{Failure, SimulateArgs};

/// Settings accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<String>,
    n: Option<usize>,
    reps: Option<usize>,
    methods: Option<Vec<String>>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    taus: Option<Vec<f64>>,
    lambdas: Option<Vec<f64>>,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    lambda_count: Option<usize>,
    valid_factor: Option<usize>,
    test_factor: Option<usize>,
    max_outer_iters: Option<usize>,
    tol: Option<f64>,
}

fn load_config(path: &Path) -> Result<FileConfig, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn required<T>(value: Option<T>, name: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::input(format!("missing --{name} (flag or config key)")))
}

fn build(args: SimulateArgs, file: FileConfig) -> Result<(StudyConfig, Option<PathBuf>), Failure> {
    let scenario = required(args.scenario.or(file.scenario), "scenario")?;
    let kind: ScenarioKind = scenario.parse()?;
    let n = required(args.n.or(file.n), "n")?;
    let reps = required(args.reps.or(file.reps), "reps")?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let methods = match args.methods.or(file.methods) {
        Some(names) => names
            .iter()
            .map(|s| s.parse::<Method>())
            .collect::<Result<Vec<_>, _>>()?,
        None => Method::ALL.to_vec(),
    };

    let mut config = StudyConfig::new(kind, n, reps, seed, methods);
    if let Some(taus) = file.taus {
        config.grid = QuantileGrid::new(taus)?;
    }
    let range = (file.lambda_min, file.lambda_max, file.lambda_count);
    config.lambdas = match (file.lambdas, range) {
        (Some(_), (Some(_), _, _) | (_, Some(_), _) | (_, _, Some(_))) => {
            return Err(Failure::input(
                "config gives both lambdas and lambda_min/lambda_max/lambda_count",
            ))
        }
        (Some(values), _) => LambdaGrid::new(values)?,
        (None, (Some(lo), Some(hi), count)) => LambdaGrid::log_spaced(lo, hi, count.unwrap_or(30))?,
        (None, (None, None, None)) => LambdaGrid::default_for(n),
        (None, _) => {
            return Err(Failure::input(
                "lambda_min and lambda_max must be given together",
            ))
        }
    };
    if let Some(v) = file.valid_factor {
        config.valid_factor = v;
    }
    if let Some(v) = file.test_factor {
        config.test_factor = v;
    }
    if let Some(v) = file.max_outer_iters {
        config.hetqr.max_outer_iters = v;
    }
    if let Some(v) = file.tol {
        config.hetqr.tol = v;
    }
    Ok((config, args.out.or(file.out)))
}

fn write_file(
    path: &Path,
    write: impl FnOnce(BufWriter<File>) -> hetqr::Result<()>,
) -> Result<(), Failure> {
    let file =
        File::create(path).map_err(|e| Failure::output(format!("{}: {e}", path.display())))?;
    write(BufWriter::new(file)).map_err(|e| Failure::output(format!("{}: {e}", path.display())))
}

fn write_outputs(report: &StudyReport, dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::output(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("summary.csv"), |w| report.write_summary_csv(w))?;
    write_file(&dir.join("records.csv"), |w| report.write_records_csv(w))?;
    let path = dir.join("summary.txt");
    fs::write(&path, report.to_text())
        .map_err(|e| Failure::output(format!("{}: {e}", path.display())))
}

pub fn run(args: SimulateArgs) -> Result<(), Failure> {
    let file = match &args.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    let (config, out) = build(args, file)?;
    let report = run_study(&config)?;

    for notice in &report.notices {
        eprintln!("note: {notice}");
    }
    let failures = report.failure_count();
    if failures > 0 {
        warn!("{failures} fit(s) failed; see records.csv for details");
    }
    print!("{}", report.to_text());
    if let Some(dir) = out {
        write_outputs(&report, &dir)?;
    }
    Ok(())
}
