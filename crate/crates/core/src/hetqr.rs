//! Heterogeneous quantile regression.
//!
//! Minimizes
//!
//! ```text
//! L_n(θ) = Σ_m π_m Σ_i ρ_{τ_m}(y_i − γ_{m0} − z_iᵀγ_m) + nλ_n Σ_j (Σ_m ω_mj |γ_mj|)^{1/2}
//! ```
//!
//! through the equivalent problem over `(θ, ξ)`
//!
//! ```text
//! Σ_m π_m Σ_i ρ_{τ_m}(…) + λ₁ Σ_j ξ_j + Σ_j ξ_j⁻¹ Σ_m ω_mj |γ_mj|,   2√λ₁ = nλ_n,
//! ```
//!
//! alternating the closed-form `ξ` update with `M` independent weighted-L1
//! quantile regressions. Each half-step is an exact block minimization, so
//! `L_n` never increases from one outer iteration to the next. The penalty is
//! nonconvex; the result is a local minimizer.

use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};
use crate::lp::{solve_penalized_level, SlopePenalty, SolverOptions};
use crate::model::{
    group_penalty, group_sums, stacked_loss, CoefficientSet, Dataset, FitReport, PenaltyWeights,
    QuantileGrid, SparsityPattern, ZERO_THRESHOLD,
};
use crate::qr_fit::fit_qr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HetQrConfig {
    pub lambda_n: f64,
    pub max_outer_iters: usize,
    /// Relative change in `L_n` below which the outer loop stops.
    pub tol: f64,
    /// Lower bound on `ξ_j` when forming the step-2 penalties.
    pub xi_floor: f64,
    /// Floor on pilot magnitudes when building adaptive weights.
    pub weight_clip: f64,
    pub solver: SolverOptions,
}

impl Default for HetQrConfig {
    fn default() -> Self {
        Self {
            lambda_n: 0.0,
            max_outer_iters: 100,
            tol: 1e-6,
            xi_floor: 1e-8,
            weight_clip: 1e-4,
            solver: SolverOptions::default(),
        }
    }
}

impl HetQrConfig {
    pub fn with_lambda(lambda_n: f64) -> Self {
        Self {
            lambda_n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_n >= 0.0 && self.lambda_n.is_finite()) {
            return invalid(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda_n
            ));
        }
        if self.max_outer_iters == 0 {
            return invalid("max_outer_iters must be positive");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return invalid("tol must lie in (0, 1)");
        }
        if !(self.xi_floor > 0.0 && self.weight_clip > 0.0) {
            return invalid("xi_floor and weight_clip must be positive");
        }
        Ok(())
    }
}

/// `λ₁` of the transformed objective, from `2√λ₁ = nλ_n`.
pub fn lambda1_for(n: usize, lambda_n: f64) -> f64 {
    let half = 0.5 * n as f64 * lambda_n;
    half * half
}

/// Adaptive weights from the unpenalized fit: `ω_mj = 1 / max(|γ̃_mj|, clip)`.
/// Requires `n > p`; use [`make_weights_highdim`] otherwise.
pub fn make_weights(
    data: &Dataset,
    grid: &QuantileGrid,
    config: &HetQrConfig,
) -> Result<PenaltyWeights> {
    if data.p() >= data.n() {
        return invalid(format!(
            "unpenalized pilot needs n > p (n = {}, p = {}); use the high-dimensional weights",
            data.n(),
            data.p()
        ));
    }
    config.validate()?;
    let pilot = fit_qr(data, grid)?;
    PenaltyWeights::from_pilot(&pilot, config.weight_clip, config.lambda_n)
}

/// Two-stage weights for `p ≥ n`: fit with `ω ≡ 1` at `config.lambda_n`, then
/// take clipped reciprocals of that fit's slopes.
pub fn make_weights_highdim(
    data: &Dataset,
    grid: &QuantileGrid,
    config: &HetQrConfig,
) -> Result<PenaltyWeights> {
    config.validate()?;
    let unit = PenaltyWeights::uniform(grid.m(), data.p(), config.lambda_n)?;
    let stage1 = fit_hetqr(data, grid, &unit, config)?;
    PenaltyWeights::from_pilot(&stage1.coef, config.weight_clip, config.lambda_n)
}

/// Closed-form step 1: `ξ_j = (Σ_m ω_mj |γ_mj|)^{1/2} λ₁^{-1/2}`.
pub fn xi_update(coef: &CoefficientSet, w: &PenaltyWeights, lambda1: f64) -> Result<Vec<f64>> {
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return invalid(format!(
            "lambda1 must be positive and finite, got {lambda1}"
        ));
    }
    check_dim("penalty weight levels", w.m(), coef.m())?;
    check_dim("penalty weight covariates", w.p(), coef.p())?;
    let root = lambda1.sqrt();
    Ok(group_sums(coef, w.omega())
        .into_iter()
        .map(|s| s.sqrt() / root)
        .collect())
}

/// `L_n(θ) = Q_n(θ) + P_n(γ)`.
pub fn objective(
    data: &Dataset,
    grid: &QuantileGrid,
    coef: &CoefficientSet,
    w: &PenaltyWeights,
) -> Result<f64> {
    Ok(stacked_loss(data, grid, coef)? + group_penalty(coef, w, data.n())?)
}

fn check_inputs(
    data: &Dataset,
    grid: &QuantileGrid,
    w: &PenaltyWeights,
    config: &HetQrConfig,
) -> Result<()> {
    config.validate()?;
    check_dim("penalty weight levels", grid.m(), w.m())?;
    check_dim("penalty weight covariates", data.p(), w.p())
}

/// Step 2 for every level given the current `ξ`. Groups with `ξ_j = 0` are
/// held at zero.
fn solve_blocks(
    data: &Dataset,
    grid: &QuantileGrid,
    solver: &SolverOptions,
    penalty: impl Fn(usize, usize) -> SlopePenalty + Sync,
) -> Result<CoefficientSet> {
    let fits: Vec<Result<_>> = (0..grid.m())
        .into_par_iter()
        .map(|m| {
            let tau = grid.taus()[m];
            let pens: Vec<SlopePenalty> = (0..data.p()).map(|j| penalty(m, j)).collect();
            solve_penalized_level(data.z(), data.y(), tau, grid.pis()[m], &pens, solver)
                .map_err(|source| Error::Solver { tau, source })
        })
        .collect();
    let mut coef = CoefficientSet::zeros(grid.m(), data.p());
    for (m, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        coef.set_level(m, fit.intercept, &fit.slopes);
    }
    Ok(coef)
}

/// One full outer iteration (ξ-update then the `M` block solves) from `coef`.
/// Returns the new coefficients and the `ξ` used.
pub fn outer_step(
    data: &Dataset,
    grid: &QuantileGrid,
    w: &PenaltyWeights,
    config: &HetQrConfig,
    coef: &CoefficientSet,
) -> Result<(CoefficientSet, Vec<f64>)> {
    check_inputs(data, grid, w, config)?;
    coef.check_shape(grid.m(), data.p())?;
    if w.lambda_n() == 0.0 {
        let next = solve_blocks(data, grid, &config.solver, |_, _| SlopePenalty::L1(0.0))?;
        return Ok((next, Vec::new()));
    }
    let xi = xi_update(coef, w, lambda1_for(data.n(), w.lambda_n()))?;
    let omega = w.omega();
    let next = solve_blocks(data, grid, &config.solver, |m, j| {
        if xi[j] == 0.0 {
            SlopePenalty::Zero
        } else {
            SlopePenalty::L1(omega[(m, j)] / xi[j].max(config.xi_floor))
        }
    })?;
    Ok((next, xi))
}

/// Starting point: the unpenalized fit when `n > p`. Otherwise the alternation
/// cannot start from zero slopes (every `ξ_j` would vanish), so the first
/// block solve uses the uniform `ξ_j = 1/(nλ_n)`, i.e. per-level weighted
/// lasso with slope weights `nλ_n ω_mj`.
pub fn initial_point(
    data: &Dataset,
    grid: &QuantileGrid,
    w: &PenaltyWeights,
    config: &HetQrConfig,
) -> Result<CoefficientSet> {
    if data.n() > data.p() {
        return fit_qr(data, grid);
    }
    let nl = data.n() as f64 * w.lambda_n();
    let omega = w.omega();
    solve_blocks(data, grid, &config.solver, |m, j| {
        SlopePenalty::L1(nl * omega[(m, j)])
    })
}

/// Fits Het-QR from [`initial_point`].
pub fn fit_hetqr(
    data: &Dataset,
    grid: &QuantileGrid,
    w: &PenaltyWeights,
    config: &HetQrConfig,
) -> Result<FitReport> {
    check_inputs(data, grid, w, config)?;
    let init = initial_point(data, grid, w, config)?;
    fit_hetqr_from(data, grid, w, config, init)
}

/// Fits Het-QR from a caller-supplied starting point. `λ_n` is taken from
/// `w`.
pub fn fit_hetqr_from(
    data: &Dataset,
    grid: &QuantileGrid,
    w: &PenaltyWeights,
    config: &HetQrConfig,
    init: CoefficientSet,
) -> Result<FitReport> {
    check_inputs(data, grid, w, config)?;
    init.check_shape(grid.m(), data.p())?;

    let mut coef = init;
    let mut current = objective(data, grid, &coef, w)?;
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    let mut xi = Vec::new();

    while iterations < config.max_outer_iters {
        iterations += 1;
        let (next, used_xi) = outer_step(data, grid, w, config, &coef)?;
        let value = objective(data, grid, &next, w)?;
        let scale = current.abs().max(f64::MIN_POSITIVE);
        if value > current {
            // Only solver round-off can raise L_n; keep the previous iterate.
            converged = (value - current) <= config.tol * scale;
            if !converged {
                log::warn!(
                    "Het-QR objective rose from {current} to {value} at iteration {iterations}"
                );
            }
            break;
        }
        let decrease = current - value;
        coef = next;
        xi = used_xi;
        current = value;
        trace.push(value);
        if decrease <= config.tol * scale {
            converged = true;
            break;
        }
    }

    if w.lambda_n() > 0.0 {
        xi = xi_update(&coef, w, lambda1_for(data.n(), w.lambda_n()))?;
    }
    if !converged {
        log::warn!(
            "Het-QR stopped after {iterations} outer iterations without meeting tol = {}",
            config.tol
        );
    }
    Ok(FitReport {
        pattern: SparsityPattern::from_coef(&coef, ZERO_THRESHOLD),
        coef,
        objective_trace: trace,
        iterations,
        converged,
        xi,
    })
}
