//! Single-level L1-penalized quantile regression,
//!
//! ```text
//! min_{γ0, γ}  π Σ_i ρ_τ(y_i − γ0 − z_iᵀγ) + Σ_j λ_j |γ_j|
//! ```
//!
//! encoded for [`solve_pinball`] with one pseudo-row per penalized slope:
//! response 0, design row `2λ_j e_j`, level ½, weight 1, since
//! `ρ_{1/2}(2λγ) = λ|γ|`.

use nalgebra::{DMatrix, DVector};

use super::{solve_pinball, LpError, PinballProblem, SolverOptions};
use crate::model::{rho, Dataset};

/// How one slope enters a penalized fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopePenalty {
    /// L1 penalty with the given nonnegative weight.
    L1(f64),
    /// Held at exactly zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub intercept: f64,
    pub slopes: DVector<f64>,
    /// Penalized objective at the returned point.
    pub objective: f64,
}

/// Minimizer of `Σ_i ρ_τ(y_i − γ0 − z_iᵀγ) + Σ_j λ_j |γ_j|`.
pub fn solve_penalized_qr(
    data: &Dataset,
    tau: f64,
    slope_penalties: &[f64],
) -> Result<(f64, DVector<f64>), LpError> {
    if slope_penalties.len() != data.p() {
        return Err(LpError::InvalidProblem(format!(
            "expected {} slope penalties, got {}",
            data.p(),
            slope_penalties.len()
        )));
    }
    let pens: Vec<SlopePenalty> = slope_penalties
        .iter()
        .map(|&l| SlopePenalty::L1(l))
        .collect();
    let fit = solve_penalized_level(
        data.z(),
        data.y(),
        tau,
        1.0,
        &pens,
        &SolverOptions::default(),
    )?;
    Ok((fit.intercept, fit.slopes))
}

/// Per-coefficient Lipschitz bound of the loss: a slope whose L1 weight
/// reaches it is zero at some optimum, so it can be dropped before solving.
fn screening_bound(z: &DMatrix<f64>, j: usize, tau: f64, loss_weight: f64) -> f64 {
    loss_weight * tau.max(1.0 - tau) * z.column(j).iter().map(|v| v.abs()).sum::<f64>()
}

/// General form used by every estimator: loss weight `π` and a per-slope
/// penalty or hard zero.
pub fn solve_penalized_level(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    loss_weight: f64,
    penalties: &[SlopePenalty],
    opts: &SolverOptions,
) -> Result<PenalizedFit, LpError> {
    let (n, p) = (z.nrows(), z.ncols());
    if penalties.len() != p || y.len() != n {
        return Err(LpError::InvalidProblem(
            "penalty or response length does not match the design".to_string(),
        ));
    }
    let mut active = Vec::new();
    let mut lambdas = Vec::new();
    for (j, pen) in penalties.iter().enumerate() {
        match *pen {
            SlopePenalty::Zero => {}
            SlopePenalty::L1(l) => {
                if l.is_nan() || l < 0.0 {
                    return Err(LpError::InvalidProblem(format!(
                        "slope penalty {j} must be nonnegative, got {l}"
                    )));
                }
                if l.is_finite() && l < screening_bound(z, j, tau, loss_weight) {
                    active.push(j);
                    lambdas.push(l);
                }
            }
        }
    }

    let q = active.len() + 1;
    let pseudo: Vec<(usize, f64)> = lambdas
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0.0)
        .map(|(k, &l)| (k + 1, l))
        .collect();
    let r = n + pseudo.len();
    let mut x = DMatrix::zeros(r, q);
    x.view_mut((0, 0), (n, 1)).fill(1.0);
    for (k, &j) in active.iter().enumerate() {
        x.view_mut((0, k + 1), (n, 1)).copy_from(&z.column(j));
    }
    for (row, &(col, l)) in pseudo.iter().enumerate() {
        x[(n + row, col)] = 2.0 * l;
    }
    let mut yy = DVector::zeros(r);
    yy.rows_mut(0, n).copy_from(y);
    let mut t = DVector::from_element(r, 0.5);
    t.rows_mut(0, n).fill(tau);
    let mut w = DVector::from_element(r, 1.0);
    w.rows_mut(0, n).fill(loss_weight);

    let prob = PinballProblem::new(x, yy, t, w)?;
    let sol = solve_pinball(&prob, opts)?.into_optimal()?;

    let mut slopes = DVector::zeros(p);
    for (k, &j) in active.iter().enumerate() {
        slopes[j] = sol.beta[k + 1];
    }
    let intercept = sol.beta[0];
    let fitted = z * &slopes;
    let loss: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| rho(yi - intercept - fi, tau))
        .sum();
    let penalty: f64 = active
        .iter()
        .zip(&lambdas)
        .map(|(&j, &l)| l * slopes[j].abs())
        .sum();
    Ok(PenalizedFit {
        intercept,
        slopes,
        objective: loss_weight * loss + penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let z = [0.1, 0.9, 0.4, 1.3, 0.7, 0.2];
        let y = vec![0.5, 1.9, 0.3, 2.2, 1.6, 0.1];
        Dataset::from_rows(y, &z.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_penalty_is_plain_quantile_regression() {
        let d = toy();
        let (b0, b) = solve_penalized_qr(&d, 0.5, &[0.0]).unwrap();
        let mut x = DMatrix::from_element(6, 2, 1.0);
        x.set_column(1, &d.z().column(0));
        let plain = solve_pinball(
            &PinballProblem::unweighted(x, d.y().clone(), 0.5).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((b0 - plain.beta[0]).abs() < 1e-6);
        assert!((b[0] - plain.beta[1]).abs() < 1e-6);
    }

    #[test]
    fn huge_penalty_gives_sample_quantile() {
        let d = toy();
        let (b0, b) = solve_penalized_qr(&d, 0.5, &[1e6]).unwrap();
        assert_eq!(b[0], 0.0);
        // Median of the responses: any value between the 3rd and 4th order statistic.
        let mut ys: Vec<f64> = d.y().iter().copied().collect();
        ys.sort_by(f64::total_cmp);
        assert!(b0 >= ys[2] - 1e-9 && b0 <= ys[3] + 1e-9);
    }

    #[test]
    fn hard_zero_is_respected() {
        let d = toy();
        let fit = solve_penalized_level(
            d.z(),
            d.y(),
            0.3,
            1.0,
            &[SlopePenalty::Zero],
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(fit.slopes[0], 0.0);
    }

    #[test]
    fn rejects_negative_penalty() {
        assert!(solve_penalized_qr(&toy(), 0.5, &[-1.0]).is_err());
        assert!(solve_penalized_qr(&toy(), 0.5, &[1.0, 2.0]).is_err());
    }
}
