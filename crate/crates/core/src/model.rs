//! Core domain types: data, quantile levels, coefficients, penalty weights and
//! the loss/penalty terms that make up the Het-QR objective
//!
//! ```text
//! L_n(θ) = Σ_m π_m Σ_i ρ_{τ_m}(y_i − γ_{m0} − z_iᵀγ_m)  +  nλ_n Σ_j (Σ_m ω_mj |γ_mj|)^{1/2}
//! ```
//!
//! Intercepts are never penalized.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};

/// Magnitude below which an estimated slope counts as zero.
pub const ZERO_THRESHOLD: f64 = 1e-6;

/// Quantile check loss `ρ_τ(u) = u (τ − 1{u < 0})`, without argument checks.
#[inline]
pub fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Quantile check loss with validated arguments.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    if !u.is_finite() {
        return invalid(format!("check loss argument must be finite, got {u}"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return invalid(format!("quantile level must lie in (0, 1), got {tau}"));
    }
    Ok(rho(u, tau))
}

/// Response vector plus covariate matrix. Row `i` of `z` pairs with `y[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    z: DMatrix<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        if y.is_empty() {
            return invalid("dataset needs at least one observation");
        }
        if z.ncols() == 0 {
            return invalid("dataset needs at least one covariate");
        }
        check_dim("dataset rows", y.len(), z.nrows())?;
        if y.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return invalid("dataset contains non-finite values");
        }
        Ok(Self {
            y,
            z,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        check_dim("feature names", self.p(), names.len())?;
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Builds a dataset from row-major covariates.
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return invalid("ragged covariate rows");
        }
        let z = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Self::new(DVector::from_vec(y), z)
    }

    /// Reads a CSV with a header row, response in the first column and
    /// covariates in the remaining columns.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return invalid("csv needs a response column and at least one covariate column");
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        let mut y = Vec::new();
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let mut values = record.iter().map(|field| {
                field.parse::<f64>().map_err(|_| {
                    crate::Error::InvalidInput(format!(
                        "row {}: cannot parse {field:?} as a number",
                        line + 2
                    ))
                })
            });
            y.push(values.next().unwrap_or_else(|| invalid("empty row"))?);
            rows.push(values.collect::<Result<Vec<f64>>>()?);
        }
        Self::from_rows(y, &rows)?.with_feature_names(names)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Names for every covariate, falling back to `z1..zp`.
    pub fn feature_labels(&self) -> Vec<String> {
        match &self.feature_names {
            Some(names) => names.clone(),
            None => (1..=self.p()).map(|j| format!("z{j}")).collect(),
        }
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        let z = self.z.select_rows(idx);
        Self {
            y,
            z,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Ordered quantile levels `0 < τ_1 < … < τ_M < 1` with positive loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    taus: Vec<f64>,
    pis: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        let pis = vec![1.0; taus.len()];
        Self::with_weights(taus, pis)
    }

    pub fn with_weights(taus: Vec<f64>, pis: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return invalid("quantile grid must contain at least one level");
        }
        check_dim("quantile loss weights", taus.len(), pis.len())?;
        if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return invalid("quantile levels must lie strictly inside (0, 1)");
        }
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("quantile levels must be strictly increasing");
        }
        if pis.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return invalid("quantile loss weights must be positive and finite");
        }
        Ok(Self { taus, pis })
    }

    pub fn m(&self) -> usize {
        self.taus.len()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn pis(&self) -> &[f64] {
        &self.pis
    }
}

/// Per-level intercepts `γ_{m0}` and the `M × p` slope matrix `γ_mj`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    intercepts: DVector<f64>,
    slopes: DMatrix<f64>,
}

impl CoefficientSet {
    pub fn new(intercepts: DVector<f64>, slopes: DMatrix<f64>) -> Result<Self> {
        check_dim("coefficient levels", intercepts.len(), slopes.nrows())?;
        if intercepts
            .iter()
            .chain(slopes.iter())
            .any(|v| !v.is_finite())
        {
            return invalid("coefficients must be finite");
        }
        Ok(Self { intercepts, slopes })
    }

    pub fn zeros(m: usize, p: usize) -> Self {
        Self {
            intercepts: DVector::zeros(m),
            slopes: DMatrix::zeros(m, p),
        }
    }

    pub fn m(&self) -> usize {
        self.intercepts.len()
    }

    pub fn p(&self) -> usize {
        self.slopes.ncols()
    }

    pub fn intercepts(&self) -> &DVector<f64> {
        &self.intercepts
    }

    pub fn slopes(&self) -> &DMatrix<f64> {
        &self.slopes
    }

    pub fn intercept(&self, m: usize) -> f64 {
        self.intercepts[m]
    }

    pub fn slope(&self, m: usize, j: usize) -> f64 {
        self.slopes[(m, j)]
    }

    pub(crate) fn set_level(&mut self, m: usize, intercept: f64, slopes: &DVector<f64>) {
        self.intercepts[m] = intercept;
        self.slopes.row_mut(m).copy_from(&slopes.transpose());
    }

    /// Fitted `τ_m` quantile for every row of `z`.
    pub fn predict_level(&self, m: usize, z: &DMatrix<f64>) -> DVector<f64> {
        let gamma = self.slopes.row(m).transpose();
        let mut fitted = z * gamma;
        fitted.add_scalar_mut(self.intercepts[m]);
        fitted
    }

    pub(crate) fn check_shape(&self, m: usize, p: usize) -> Result<()> {
        check_dim("coefficient levels", m, self.m())?;
        check_dim("coefficient slopes", p, self.p())
    }
}

/// Adaptive weights `ω_mj > 0` and the tuning parameter `λ_n ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    omega: DMatrix<f64>,
    lambda_n: f64,
}

impl PenaltyWeights {
    pub fn new(omega: DMatrix<f64>, lambda_n: f64) -> Result<Self> {
        if omega.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return invalid("penalty weights must be positive and finite");
        }
        if !(lambda_n >= 0.0 && lambda_n.is_finite()) {
            return invalid(format!(
                "lambda must be finite and nonnegative, got {lambda_n}"
            ));
        }
        Ok(Self { omega, lambda_n })
    }

    /// All weights equal to one.
    pub fn uniform(m: usize, p: usize, lambda_n: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(m, p, 1.0), lambda_n)
    }

    /// Reciprocals of pilot slopes, `ω_mj = 1 / max(|γ̃_mj|, clip)`.
    pub fn from_pilot(pilot: &CoefficientSet, clip: f64, lambda_n: f64) -> Result<Self> {
        if !(clip > 0.0 && clip.is_finite()) {
            return invalid("weight clip must be positive");
        }
        let omega = pilot.slopes().map(|g| 1.0 / g.abs().max(clip));
        Self::new(omega, lambda_n)
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn lambda_n(&self) -> f64 {
        self.lambda_n
    }

    pub fn with_lambda(&self, lambda_n: f64) -> Result<Self> {
        Self::new(self.omega.clone(), lambda_n)
    }

    pub fn m(&self) -> usize {
        self.omega.nrows()
    }

    pub fn p(&self) -> usize {
        self.omega.ncols()
    }
}

/// Which slopes are nonzero, level by level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    m: usize,
    p: usize,
    active: Vec<bool>,
}

impl SparsityPattern {
    pub fn from_coef(coef: &CoefficientSet, threshold: f64) -> Self {
        Self::from_fn(coef.m(), coef.p(), |m, j| {
            coef.slope(m, j).abs() >= threshold
        })
    }

    pub fn from_fn(m: usize, p: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let active = (0..m)
            .flat_map(|mi| (0..p).map(move |j| (mi, j)))
            .map(|(mi, j)| f(mi, j))
            .collect();
        Self { m, p, active }
    }

    pub fn full(m: usize, p: usize) -> Self {
        Self::from_fn(m, p, |_, _| true)
    }

    pub fn empty(m: usize, p: usize) -> Self {
        Self::from_fn(m, p, |_, _| false)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, m: usize, j: usize) -> bool {
        self.active[m * self.p + j]
    }

    /// Number of active entries (the model size).
    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.active.chunks(self.p.max(1))
    }
}

/// Result of a Het-QR fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub coef: CoefficientSet,
    pub pattern: SparsityPattern,
    /// `L_n` at the initial point followed by one entry per accepted outer iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub xi: Vec<f64>,
}

impl FitReport {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// `Σ_m π_m Σ_i ρ_{τ_m}(y_i − γ_{m0} − z_iᵀγ_m)`.
pub fn stacked_loss(data: &Dataset, grid: &QuantileGrid, coef: &CoefficientSet) -> Result<f64> {
    coef.check_shape(grid.m(), data.p())?;
    let total = (0..grid.m())
        .map(|m| {
            let tau = grid.taus()[m];
            let fitted = coef.predict_level(m, data.z());
            let level: f64 = data
                .y()
                .iter()
                .zip(fitted.iter())
                .map(|(y, f)| rho(y - f, tau))
                .sum();
            grid.pis()[m] * level
        })
        .sum();
    Ok(total)
}

/// `nλ_n Σ_j (Σ_m ω_mj |γ_mj|)^{1/2}` over slopes only.
pub fn group_penalty(coef: &CoefficientSet, w: &PenaltyWeights, n: usize) -> Result<f64> {
    check_dim("penalty weight levels", w.m(), coef.m())?;
    check_dim("penalty weight covariates", w.p(), coef.p())?;
    if w.lambda_n() == 0.0 {
        return Ok(0.0);
    }
    let groups: f64 = group_sums(coef, w.omega()).iter().map(|s| s.sqrt()).sum();
    Ok(n as f64 * w.lambda_n() * groups)
}

/// `S_j = Σ_m ω_mj |γ_mj|` for each covariate.
pub(crate) fn group_sums(coef: &CoefficientSet, omega: &DMatrix<f64>) -> Vec<f64> {
    (0..coef.p())
        .map(|j| {
            (0..coef.m())
                .map(|m| omega[(m, j)] * coef.slope(m, j).abs())
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(2.0, 0.5).unwrap(), 1.0);
        assert_eq!(check_loss(-4.0, 0.25).unwrap(), 3.0);
        assert_eq!(check_loss(4.0, 0.75).unwrap(), 3.0);
        assert_eq!(check_loss(0.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn check_loss_rejects_bad_arguments() {
        assert!(check_loss(f64::NAN, 0.5).is_err());
        assert!(check_loss(f64::INFINITY, 0.5).is_err());
        assert!(check_loss(1.0, 0.0).is_err());
        assert!(check_loss(1.0, 1.0).is_err());
    }

    #[test]
    fn dataset_rejects_non_finite_and_empty() {
        let z = DMatrix::from_element(2, 1, 1.0);
        assert!(Dataset::new(DVector::from_vec(vec![1.0, f64::NAN]), z.clone()).is_err());
        assert!(Dataset::new(DVector::from_vec(vec![1.0]), z).is_err());
        assert!(Dataset::new(DVector::zeros(0), DMatrix::zeros(0, 1)).is_err());
        assert!(Dataset::new(DVector::zeros(2), DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(QuantileGrid::new(vec![0.25, 0.5, 0.75]).is_ok());
        assert!(QuantileGrid::new(vec![]).is_err());
        assert!(QuantileGrid::new(vec![0.5, 0.5]).is_err());
        assert!(QuantileGrid::new(vec![0.7, 0.3]).is_err());
        assert!(QuantileGrid::new(vec![0.0, 0.5]).is_err());
        assert!(QuantileGrid::with_weights(vec![0.5], vec![0.0]).is_err());
    }

    #[test]
    fn csv_loading() {
        let text = "y,a,b\n1.0,2,3\n4, 5.5 ,6\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);
        assert_eq!(d.y()[1], 4.0);
        assert_eq!(d.z()[(1, 0)], 5.5);
        assert_eq!(
            d.feature_names().unwrap(),
            &["a".to_string(), "b".to_string()]
        );
        assert!(Dataset::from_csv_reader("y,a\n1,x\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("y\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn stacked_loss_examples() {
        let grid = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
        let d = Dataset::from_rows(vec![0.0, 0.0], &[vec![3.0], vec![-1.0]]).unwrap();
        assert_eq!(
            stacked_loss(&d, &grid, &CoefficientSet::zeros(2, 1)).unwrap(),
            0.0
        );

        let grid = QuantileGrid::new(vec![0.5]).unwrap();
        let d = Dataset::from_rows(vec![1.0, 3.0], &[vec![0.0], vec![0.0]]).unwrap();
        let coef = CoefficientSet::new(DVector::from_vec(vec![2.0]), DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(stacked_loss(&d, &grid, &coef).unwrap(), 1.0);
    }

    #[test]
    fn stacked_loss_matches_direct_summation() {
        // Five observations, two covariates, three levels, unequal loss weights.
        let rows = vec![
            vec![0.3, 1.2],
            vec![-0.7, 0.4],
            vec![1.5, -0.2],
            vec![0.0, 0.9],
            vec![2.2, 1.1],
        ];
        let y = vec![1.0, -0.5, 2.5, 0.7, 3.1];
        let d = Dataset::from_rows(y.clone(), &rows).unwrap();
        let taus = [0.25, 0.5, 0.75];
        let pis = [1.0, 2.0, 0.5];
        let grid = QuantileGrid::with_weights(taus.to_vec(), pis.to_vec()).unwrap();
        let b0 = [0.1, 0.4, 0.9];
        let b = [[0.8, 0.0], [1.0, -0.3], [1.1, 0.2]];
        let coef = CoefficientSet::new(
            DVector::from_vec(b0.to_vec()),
            DMatrix::from_fn(3, 2, |m, j| b[m][j]),
        )
        .unwrap();

        let mut expected = 0.0;
        for m in 0..3 {
            for i in 0..5 {
                let u = y[i] - b0[m] - rows[i][0] * b[m][0] - rows[i][1] * b[m][1];
                let loss = if u >= 0.0 {
                    taus[m] * u
                } else {
                    (taus[m] - 1.0) * u
                };
                expected += pis[m] * loss;
            }
        }
        let got = stacked_loss(&d, &grid, &coef).unwrap();
        assert!(close(got, expected, 1e-12), "{got} vs {expected}");
    }

    #[test]
    fn stacked_loss_dimension_mismatch() {
        let grid = QuantileGrid::new(vec![0.5]).unwrap();
        let d = Dataset::from_rows(vec![1.0], &[vec![0.0, 1.0]]).unwrap();
        assert!(stacked_loss(&d, &grid, &CoefficientSet::zeros(1, 3)).is_err());
        assert!(stacked_loss(&d, &grid, &CoefficientSet::zeros(2, 2)).is_err());
    }

    #[test]
    fn group_penalty_examples() {
        let slopes = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 1.0, 0.0]);
        let coef = CoefficientSet::new(DVector::zeros(2), slopes).unwrap();
        let w = PenaltyWeights::uniform(2, 2, 1.0).unwrap();
        assert!(close(group_penalty(&coef, &w, 1).unwrap(), 2.0, 1e-12));
        let w0 = PenaltyWeights::uniform(2, 2, 0.0).unwrap();
        assert_eq!(group_penalty(&coef, &w0, 100).unwrap(), 0.0);

        let coef =
            CoefficientSet::new(DVector::zeros(2), DMatrix::from_element(2, 1, 0.5)).unwrap();
        let w = PenaltyWeights::new(DMatrix::from_element(2, 1, 2.0), 0.5).unwrap();
        assert!(close(
            group_penalty(&coef, &w, 10).unwrap(),
            5.0 * 2f64.sqrt(),
            1e-12
        ));
    }

    #[test]
    fn objective_by_hand_on_two_observations() {
        // y = (1, -1), z = (1, 2), tau = (0.3, 0.6), unit weights, n lambda = 2 * 0.5.
        let d = Dataset::from_rows(vec![1.0, -1.0], &[vec![1.0], vec![2.0]]).unwrap();
        let grid = QuantileGrid::new(vec![0.3, 0.6]).unwrap();
        let coef = CoefficientSet::new(
            DVector::from_vec(vec![0.0, 0.5]),
            DMatrix::from_column_slice(2, 1, &[0.5, -0.25]),
        )
        .unwrap();
        let w = PenaltyWeights::uniform(2, 1, 0.5).unwrap();
        // level 1 residuals: 0.5, -2.0 -> 0.15 + 1.4; level 2: 0.75, -1.0 -> 0.45 + 0.4
        let loss = stacked_loss(&d, &grid, &coef).unwrap();
        assert!(close(loss, 0.15 + 1.4 + 0.45 + 0.4, 1e-12));
        let pen = group_penalty(&coef, &w, 2).unwrap();
        assert!(close(pen, 0.75f64.sqrt(), 1e-12));
    }

    #[test]
    fn pilot_weights_are_clipped() {
        let coef = CoefficientSet::new(
            DVector::zeros(1),
            DMatrix::from_row_slice(1, 3, &[0.5, 0.0, -4.0]),
        )
        .unwrap();
        let w = PenaltyWeights::from_pilot(&coef, 1e-4, 1.0).unwrap();
        assert_eq!(w.omega()[(0, 0)], 2.0);
        assert!(close(w.omega()[(0, 1)], 1e4, 1e-8));
        assert_eq!(w.omega()[(0, 2)], 0.25);
        assert!(PenaltyWeights::new(DMatrix::from_element(1, 1, 0.0), 1.0).is_err());
        assert!(PenaltyWeights::uniform(1, 1, -1.0).is_err());
    }

    #[test]
    fn pattern_counts() {
        let coef = CoefficientSet::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 3, &[1.0, 1e-7, 0.0, -2.0, 0.0, 3e-6]),
        )
        .unwrap();
        let pat = SparsityPattern::from_coef(&coef, ZERO_THRESHOLD);
        assert_eq!(pat.count(), 3);
        assert!(pat.get(0, 0) && !pat.get(0, 1) && pat.get(1, 2));
        assert_eq!(SparsityPattern::full(3, 100).count(), 300);
        assert_eq!(SparsityPattern::empty(3, 4).count(), 0);
    }
}
