//! Baseline estimators fitted level by level: unpenalized quantile
//! regression, the lasso, and the adaptive lasso.
//!
//! Penalties use the total-loss scale `n·λ·Σ_j |γ_j|` so that a given `λ`
//! means the same thing here as in the Het-QR objective.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};
use crate::lp::{solve_penalized_level, SlopePenalty, SolverOptions};
use crate::model::{stacked_loss, CoefficientSet, Dataset, QuantileGrid};

/// Floor applied to pilot magnitudes before taking reciprocals.
pub const PILOT_CLIP: f64 = 1e-4;

/// Fits every level independently with the slope penalties returned by
/// `penalties(m)`.
pub(crate) fn fit_levels<F>(
    data: &Dataset,
    grid: &QuantileGrid,
    opts: &SolverOptions,
    penalties: F,
) -> Result<CoefficientSet>
where
    F: Fn(usize) -> Vec<SlopePenalty> + Sync,
{
    let fits: Vec<Result<(f64, DVector<f64>)>> = (0..grid.m())
        .into_par_iter()
        .map(|m| {
            let tau = grid.taus()[m];
            solve_penalized_level(data.z(), data.y(), tau, grid.pis()[m], &penalties(m), opts)
                .map(|f| (f.intercept, f.slopes))
                .map_err(|source| Error::Solver { tau, source })
        })
        .collect();
    let mut coef = CoefficientSet::zeros(grid.m(), data.p());
    for (m, fit) in fits.into_iter().enumerate() {
        let (b0, b) = fit?;
        coef.set_level(m, b0, &b);
    }
    Ok(coef)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        invalid(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        ))
    }
}

/// Unpenalized quantile regression at each level.
pub fn fit_qr(data: &Dataset, grid: &QuantileGrid) -> Result<CoefficientSet> {
    if data.n() <= data.p() {
        log::warn!(
            "unpenalized quantile regression with n = {} <= p = {}; the solution is not unique",
            data.n(),
            data.p()
        );
    }
    fit_levels(data, grid, &SolverOptions::default(), |_| {
        vec![SlopePenalty::L1(0.0); data.p()]
    })
}

/// L1-penalized quantile regression with slope weight `n·lambda` at each level.
pub fn fit_qr_lasso(data: &Dataset, grid: &QuantileGrid, lambda: f64) -> Result<CoefficientSet> {
    check_lambda(lambda)?;
    let l = data.n() as f64 * lambda;
    fit_levels(data, grid, &SolverOptions::default(), |_| {
        vec![SlopePenalty::L1(l); data.p()]
    })
}

/// Adaptive lasso: slope weight `n·lambda / max(|pilot_mj|, PILOT_CLIP)`.
pub fn fit_qr_alasso(
    data: &Dataset,
    grid: &QuantileGrid,
    lambda: f64,
    pilot: &CoefficientSet,
) -> Result<CoefficientSet> {
    check_lambda(lambda)?;
    pilot.check_shape(grid.m(), data.p())?;
    let weights = alasso_weights(pilot, data.n(), lambda);
    fit_levels(data, grid, &SolverOptions::default(), |m| {
        weights
            .row(m)
            .iter()
            .map(|&l| SlopePenalty::L1(l))
            .collect()
    })
}

/// Per-slope adaptive-lasso weights `n·lambda / max(|pilot_mj|, PILOT_CLIP)`.
pub fn alasso_weights(pilot: &CoefficientSet, n: usize, lambda: f64) -> DMatrix<f64> {
    let nl = n as f64 * lambda;
    pilot.slopes().map(|g| nl / g.abs().max(PILOT_CLIP))
}

/// Default adaptive-lasso pilot: unpenalized fit when `n > p`, otherwise the
/// lasso fit at `lambda`.
pub fn alasso_pilot(data: &Dataset, grid: &QuantileGrid, lambda: f64) -> Result<CoefficientSet> {
    if data.n() > data.p() {
        fit_qr(data, grid)
    } else {
        fit_qr_lasso(data, grid, lambda)
    }
}

/// Lasso objective `Σ_m π_m Σ_i ρ + n·lambda·Σ_mj |γ_mj|`.
pub fn lasso_objective(
    data: &Dataset,
    grid: &QuantileGrid,
    coef: &CoefficientSet,
    lambda: f64,
) -> Result<f64> {
    let l1: f64 = coef.slopes().iter().map(|v| v.abs()).sum();
    Ok(stacked_loss(data, grid, coef)? + data.n() as f64 * lambda * l1)
}

/// Adaptive-lasso objective for the given pilot.
pub fn alasso_objective(
    data: &Dataset,
    grid: &QuantileGrid,
    coef: &CoefficientSet,
    lambda: f64,
    pilot: &CoefficientSet,
) -> Result<f64> {
    check_dim("pilot levels", coef.m(), pilot.m())?;
    check_dim("pilot covariates", coef.p(), pilot.p())?;
    let weights = alasso_weights(pilot, data.n(), lambda);
    Ok(stacked_loss(data, grid, coef)? + weighted_l1(&weights, coef))
}

/// `Σ_mj λ_mj |γ_mj|`.
pub fn weighted_l1(weights: &DMatrix<f64>, coef: &CoefficientSet) -> f64 {
    weights
        .iter()
        .zip(coef.slopes().iter())
        .map(|(w, g)| w * g.abs())
        .sum()
}
