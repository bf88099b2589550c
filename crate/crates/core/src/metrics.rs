//! Scores used to compare fitted models against a design's truth.

use nalgebra::DMatrix;

use crate::error::{check_dim, Result};
use crate::model::{stacked_loss, CoefficientSet, Dataset, QuantileGrid, SparsityPattern};
use crate::simgen::OracleTruth;

/// Number of nonzero slopes over all levels.
pub fn model_size(pattern: &SparsityPattern) -> usize {
    pattern.count()
}

/// `2·S_a / M_a`: `S_a` true positives, `M_a` estimated plus true size.
/// Two empty patterns agree perfectly and score 1.
pub fn f_measure(est: &SparsityPattern, truth: &SparsityPattern) -> Result<f64> {
    check_dim("pattern levels", truth.m(), est.m())?;
    check_dim("pattern covariates", truth.p(), est.p())?;
    let total = est.count() + truth.count();
    if total == 0 {
        return Ok(1.0);
    }
    let hits = (0..est.m())
        .flat_map(|m| (0..est.p()).map(move |j| (m, j)))
        .filter(|&(m, j)| est.get(m, j) && truth.get(m, j))
        .count();
    Ok(2.0 * hits as f64 / total as f64)
}

/// Parameter estimation error `Σ_mj |γ̂_mj − γ*_mj| / M`.
pub fn pee(est: &CoefficientSet, truth_slopes: &DMatrix<f64>) -> Result<f64> {
    check_dim("truth levels", est.m(), truth_slopes.nrows())?;
    check_dim("truth covariates", est.p(), truth_slopes.ncols())?;
    let l1: f64 = est
        .slopes()
        .iter()
        .zip(truth_slopes.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(l1 / est.m() as f64)
}

/// Quantile prediction error: mean over test subjects of the level-averaged
/// squared gap between true and fitted conditional quantiles.
pub fn qpe(
    est: &CoefficientSet,
    oracle: &OracleTruth,
    test: &Dataset,
    grid: &QuantileGrid,
) -> Result<f64> {
    est.check_shape(grid.m(), test.p())?;
    check_dim("oracle covariates", oracle.kind().p(), test.p())?;
    let truth = oracle.coef_at(grid);
    let mut total = 0.0;
    for m in 0..grid.m() {
        let fitted = est.predict_level(m, test.z());
        let target = truth.predict_level(m, test.z());
        total += (target - fitted).norm_squared();
    }
    Ok(total / (grid.m() * test.n()) as f64)
}

/// Prediction error: stacked check loss on `test` divided by its size.
pub fn pe(est: &CoefficientSet, test: &Dataset, grid: &QuantileGrid) -> Result<f64> {
    Ok(stacked_loss(test, grid, est)? / test.n() as f64)
}
