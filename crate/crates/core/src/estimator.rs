//! A uniform handle over the four estimators so tuning and the study harness
//! can fit any of them along a λ grid.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hetqr::{fit_hetqr, fit_hetqr_from, make_weights_highdim, HetQrConfig};
use crate::model::{
    group_penalty, stacked_loss, CoefficientSet, Dataset, FitReport, PenaltyWeights, QuantileGrid,
    SparsityPattern, ZERO_THRESHOLD,
};
use crate::qr_fit::{alasso_weights, fit_qr, fit_qr_alasso, fit_qr_lasso, weighted_l1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Qr,
    QrLasso,
    QrAlasso,
    HetQr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Qr, Method::QrLasso, Method::QrAlasso, Method::HetQr];

    /// Whether the fit depends on λ at all.
    pub fn is_penalized(self) -> bool {
        self != Method::Qr
    }

    /// Display label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Qr => "QR",
            Method::QrLasso => "QR-LASSO",
            Method::QrAlasso => "QR-aLASSO",
            Method::HetQr => "Het-QR",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Qr => "qr",
            Method::QrLasso => "qr-lasso",
            Method::QrAlasso => "qr-alasso",
            Method::HetQr => "hetqr",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qr" => Ok(Method::Qr),
            "qr-lasso" | "lasso" => Ok(Method::QrLasso),
            "qr-alasso" | "alasso" => Ok(Method::QrAlasso),
            "hetqr" | "het-qr" => Ok(Method::HetQr),
            other => invalid(format!(
                "unknown method {other:?} (expected qr, qr-lasso, qr-alasso or hetqr)"
            )),
        }
    }
}

/// The penalty a fit minimized, in absolute (total-loss) units.
#[derive(Debug, Clone, PartialEq)]
pub enum FitPenalty {
    None,
    /// Per-slope L1 weights `λ_mj`, `M × p`.
    L1(DMatrix<f64>),
    /// Square-root group penalty.
    Group(PenaltyWeights),
}

impl FitPenalty {
    pub fn value(&self, coef: &CoefficientSet, n: usize) -> Result<f64> {
        match self {
            FitPenalty::None => Ok(0.0),
            FitPenalty::L1(w) => {
                coef.check_shape(w.nrows(), w.ncols())?;
                Ok(weighted_l1(w, coef))
            }
            FitPenalty::Group(w) => group_penalty(coef, w, n),
        }
    }
}

/// Result of one estimator at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorFit {
    pub method: Method,
    pub lambda: f64,
    pub coef: CoefficientSet,
    pub pattern: SparsityPattern,
    pub penalty: FitPenalty,
    /// Het-QR diagnostics.
    pub report: Option<FitReport>,
}

impl EstimatorFit {
    fn plain(method: Method, lambda: f64, coef: CoefficientSet, penalty: FitPenalty) -> Self {
        Self {
            method,
            lambda,
            pattern: SparsityPattern::from_coef(&coef, ZERO_THRESHOLD),
            coef,
            penalty,
            report: None,
        }
    }

    /// Penalized objective on the training data.
    pub fn objective(&self, data: &Dataset, grid: &QuantileGrid) -> Result<f64> {
        Ok(stacked_loss(data, grid, &self.coef)? + self.penalty.value(&self.coef, data.n())?)
    }
}

/// Copy of a shared failure for every λ; solver errors keep their kind.
fn duplicate(e: &Error) -> Error {
    match e {
        Error::Solver { tau, source } => Error::Solver {
            tau: *tau,
            source: source.clone(),
        },
        other => Error::InvalidInput(other.to_string()),
    }
}

/// An estimator plus the Het-QR settings it uses (ignored by the baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub method: Method,
    pub config: HetQrConfig,
}

impl Estimator {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            config: HetQrConfig::default(),
        }
    }

    pub fn with_config(method: Method, config: HetQrConfig) -> Self {
        Self { method, config }
    }

    /// Fits at a single λ.
    pub fn fit(&self, data: &Dataset, grid: &QuantileGrid, lambda: f64) -> Result<EstimatorFit> {
        self.fit_path(data, grid, &[lambda])
            .pop()
            .expect("one result per lambda")
    }

    /// Fits at every λ, in order. Work that does not depend on λ (the
    /// unpenalized pilot) is done once and shared. Pilot failures are
    /// reported at every λ.
    pub fn fit_path(
        &self,
        data: &Dataset,
        grid: &QuantileGrid,
        lambdas: &[f64],
    ) -> Vec<Result<EstimatorFit>> {
        for &l in lambdas {
            if !(l >= 0.0 && l.is_finite()) {
                return lambdas
                    .iter()
                    .map(|_| invalid(format!("lambda must be finite and nonnegative, got {l}")))
                    .collect();
            }
        }
        let lowdim = data.n() > data.p();
        let pilot = if lowdim && self.method != Method::QrLasso {
            match fit_qr(data, grid) {
                Ok(p) => Some(p),
                Err(e) => return lambdas.iter().map(|_| Err(duplicate(&e))).collect(),
            }
        } else {
            None
        };

        if self.method == Method::Qr {
            let coef = match pilot {
                Some(c) => c,
                None => match fit_qr(data, grid) {
                    Ok(c) => c,
                    Err(e) => return lambdas.iter().map(|_| Err(duplicate(&e))).collect(),
                },
            };
            return lambdas
                .iter()
                .map(|&l| {
                    Ok(EstimatorFit::plain(
                        Method::Qr,
                        l,
                        coef.clone(),
                        FitPenalty::None,
                    ))
                })
                .collect();
        }

        lambdas
            .par_iter()
            .map(|&lambda| self.fit_one(data, grid, lambda, pilot.as_ref()))
            .collect()
    }

    fn fit_one(
        &self,
        data: &Dataset,
        grid: &QuantileGrid,
        lambda: f64,
        pilot: Option<&CoefficientSet>,
    ) -> Result<EstimatorFit> {
        match self.method {
            Method::Qr => fit_qr(data, grid)
                .map(|c| EstimatorFit::plain(Method::Qr, lambda, c, FitPenalty::None)),
            Method::QrLasso => {
                let weights = DMatrix::from_element(grid.m(), data.p(), data.n() as f64 * lambda);
                fit_qr_lasso(data, grid, lambda)
                    .map(|c| EstimatorFit::plain(self.method, lambda, c, FitPenalty::L1(weights)))
            }
            Method::QrAlasso => {
                let owned;
                let pilot = match pilot {
                    Some(p) => p,
                    None => {
                        owned = fit_qr_lasso(data, grid, lambda)?;
                        &owned
                    }
                };
                let weights = alasso_weights(pilot, data.n(), lambda);
                fit_qr_alasso(data, grid, lambda, pilot)
                    .map(|c| EstimatorFit::plain(self.method, lambda, c, FitPenalty::L1(weights)))
            }
            Method::HetQr => {
                let config = HetQrConfig {
                    lambda_n: lambda,
                    ..self.config
                };
                let (weights, report) = match pilot {
                    Some(p) => {
                        let w = PenaltyWeights::from_pilot(p, config.weight_clip, lambda)?;
                        let report = fit_hetqr_from(data, grid, &w, &config, p.clone())?;
                        (w, report)
                    }
                    None => {
                        let w = make_weights_highdim(data, grid, &config)?;
                        let report = fit_hetqr(data, grid, &w, &config)?;
                        (w, report)
                    }
                };
                Ok(EstimatorFit {
                    method: Method::HetQr,
                    lambda,
                    coef: report.coef.clone(),
                    pattern: report.pattern.clone(),
                    penalty: FitPenalty::Group(weights),
                    report: Some(report),
                })
            }
        }
    }
}
