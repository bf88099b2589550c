//! Tuning-parameter selection by held-out check loss, either on a separate
//! validation sample or by k-fold cross-validation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{Estimator, EstimatorFit};
use crate::model::{stacked_loss, Dataset, QuantileGrid};
use crate::simgen::rng_from_seed;

/// Candidate λ values, kept in ascending order. Duplicates are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("lambda grid is empty");
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return invalid(format!(
                "lambda values must be finite and nonnegative, got {bad}"
            ));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    /// `count` log-spaced values from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
            return invalid(format!("bad log-spaced grid ({lo}, {hi}, {count})"));
        }
        if count == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (count - 1) as f64;
        Self::new((0..count).map(|k| (a + step * k as f64).exp()).collect())
    }

    /// 30 log-spaced values over `[1e-4, 10] / n`.
    pub fn default_for(n: usize) -> Self {
        let n = n.max(1) as f64;
        Self::log_spaced(1e-4 / n, 10.0 / n, 30).expect("valid default grid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuningMethod {
    ValidationSet,
    KFoldCV { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best_lambda: f64,
    /// Position of `best_lambda` within `lambdas`.
    pub best_index: usize,
    /// λ values that were fitted successfully, ascending.
    pub lambdas: Vec<f64>,
    /// Held-out check loss for each entry of `lambdas`.
    pub scores: Vec<f64>,
    pub method: TuningMethod,
}

/// Index of the smallest score; ties go to the later (larger) λ.
fn argmin_prefer_last(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s <= scores[best] {
            best = i;
        }
    }
    best
}

fn summarize(
    lambdas: &[f64],
    scores: Vec<Option<f64>>,
    method: TuningMethod,
) -> Result<TuningResult> {
    let (kept, scores): (Vec<f64>, Vec<f64>) = lambdas
        .iter()
        .zip(scores)
        .filter_map(|(&l, s)| s.map(|s| (l, s)))
        .unzip();
    if kept.is_empty() {
        return Err(Error::AllFitsFailed);
    }
    let best_index = argmin_prefer_last(&scores);
    Ok(TuningResult {
        best_lambda: kept[best_index],
        best_index,
        lambdas: kept,
        scores,
        method,
    })
}

/// Fits on `train` at every λ and scores the stacked check loss on `valid`.
pub fn tune_validation(
    train: &Dataset,
    valid: &Dataset,
    grid: &QuantileGrid,
    lambdas: &LambdaGrid,
    est: &Estimator,
) -> Result<TuningResult> {
    tune_validation_with_fit(train, valid, grid, lambdas, est).map(|(r, _)| r)
}

/// As [`tune_validation`], also returning the fit at the selected λ.
pub fn tune_validation_with_fit(
    train: &Dataset,
    valid: &Dataset,
    grid: &QuantileGrid,
    lambdas: &LambdaGrid,
    est: &Estimator,
) -> Result<(TuningResult, EstimatorFit)> {
    if valid.p() != train.p() {
        return Err(Error::DimensionMismatch {
            context: "validation covariates",
            expected: train.p(),
            found: valid.p(),
        });
    }
    let mut fits = Vec::with_capacity(lambdas.len());
    let mut scores = Vec::with_capacity(lambdas.len());
    for (fit, &l) in est
        .fit_path(train, grid, lambdas.values())
        .into_iter()
        .zip(lambdas.values())
    {
        match fit.and_then(|f| stacked_loss(valid, grid, &f.coef).map(|s| (f, s))) {
            Ok((f, s)) => {
                scores.push(Some(s));
                fits.push(Some(f));
            }
            Err(e) => {
                log::warn!("{} at lambda = {l} failed and is excluded: {e}", est.method);
                scores.push(None);
                fits.push(None);
            }
        }
    }
    let result = summarize(lambdas.values(), scores, TuningMethod::ValidationSet)?;
    let chosen = fits
        .into_iter()
        .flatten()
        .nth(result.best_index)
        .expect("selected fit exists");
    Ok((result, chosen))
}

/// Seeded random partition of `0..n` into `k` folds whose sizes differ by at
/// most one. Each fold is sorted.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return invalid(format!(
            "need 2 <= k <= n for cross-validation (k = {k}, n = {n})"
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// k-fold cross-validation: the score of λ is the held-out check loss summed
/// over folds. A λ that fails on any fold is excluded.
pub fn tune_cv(
    data: &Dataset,
    grid: &QuantileGrid,
    lambdas: &LambdaGrid,
    k: usize,
    seed: u64,
    est: &Estimator,
) -> Result<TuningResult> {
    let folds = fold_partition(data.n(), k, seed)?;
    let mut totals: Vec<Option<f64>> = vec![Some(0.0); lambdas.len()];
    for (f, held) in folds.iter().enumerate() {
        let mut in_fold = vec![false; data.n()];
        for &i in held {
            in_fold[i] = true;
        }
        let train_idx: Vec<usize> = (0..data.n()).filter(|&i| !in_fold[i]).collect();
        let train = data.subset(&train_idx);
        let test = data.subset(held);
        let path = est.fit_path(&train, grid, lambdas.values());
        for ((total, fit), &l) in totals.iter_mut().zip(path).zip(lambdas.values()) {
            let score = fit.and_then(|fit| stacked_loss(&test, grid, &fit.coef));
            match (total.as_mut(), score) {
                (Some(t), Ok(s)) => *t += s,
                (Some(_), Err(e)) => {
                    log::warn!(
                        "{} at lambda = {l} failed on fold {f} and is excluded: {e}",
                        est.method
                    );
                    *total = None;
                }
                (None, _) => {}
            }
        }
    }
    summarize(lambdas.values(), totals, TuningMethod::KFoldCV { k })
}
