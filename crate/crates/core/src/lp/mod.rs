//! Weighted check-loss linear programs.
//!
//! Every estimator in the crate reduces to
//!
//! ```text
//! min_β  Σ_i w_i ρ_{t_i}(y_i − x_iᵀβ)
//! ```
//!
//! where rows may be real observations or L1 pseudo-rows. Rows are first
//! scaled by their weights (`w ρ_t(u) = ρ_t(w u)` for `w > 0`), then the
//! bounded dual
//!
//! ```text
//! max ỹᵀa   s.t.  X̃ᵀa = X̃ᵀ(1 − t),  0 ≤ a ≤ 1
//! ```
//!
//! is solved with a Frisch–Newton primal–dual interior point method using a
//! Mehrotra predictor–corrector step. The interior point is then purified to
//! an exact basic solution (one interpolating `q` rows), which is accepted when
//! its dual certificate `a ∈ [0, 1]` holds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

mod penalized;

pub use penalized::{solve_penalized_level, solve_penalized_qr, PenalizedFit, SlopePenalty};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(
        "interior point stopped after {iterations} iterations without reaching the gap tolerance"
    )]
    IterationLimit { iterations: usize },
    #[error("problem reported infeasible: {0}")]
    Infeasible(String),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

/// `min Σ w_i ρ_{t_i}(y_i − x_iᵀβ)` with per-row levels and weights.
#[derive(Debug, Clone)]
pub struct PinballProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    t: DVector<f64>,
    w: DVector<f64>,
}

impl PinballProblem {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        t: DVector<f64>,
        w: DVector<f64>,
    ) -> Result<Self, LpError> {
        let bad = |m: &str| Err(LpError::InvalidProblem(m.to_string()));
        let r = x.nrows();
        if r == 0 || x.ncols() == 0 {
            return bad("design must have at least one row and one column");
        }
        if y.len() != r || t.len() != r || w.len() != r {
            return bad("row-wise vectors must match the design row count");
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return bad("design and response must be finite");
        }
        if t.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return bad("row quantile levels must lie in (0, 1)");
        }
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("row weights must be positive and finite");
        }
        Ok(Self { x, y, t, w })
    }

    /// Single level, unit weights.
    pub fn unweighted(x: DMatrix<f64>, y: DVector<f64>, tau: f64) -> Result<Self, LpError> {
        let r = x.nrows();
        Self::new(
            x,
            y,
            DVector::from_element(r, tau),
            DVector::from_element(r, 1.0),
        )
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn t(&self) -> &DVector<f64> {
        &self.t
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        self.residuals(beta)
            .iter()
            .zip(self.t.iter().zip(self.w.iter()))
            .map(|(&u, (&t, &w))| w * crate::model::rho(u, t))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once the duality gap is below `gap_tol · (1 + |objective|)`.
    pub gap_tol: f64,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
    /// Attempt to recover an exact vertex after the interior point phase.
    pub purify: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gap_tol: 1e-8,
            step_fraction: 0.9995,
            purify: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    IterationLimit,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub beta: DVector<f64>,
    pub objective: f64,
    /// Dual point `a ∈ [0, 1]^r`, in the caller's row order.
    pub dual: Option<DVector<f64>>,
    pub status: LpStatus,
    pub iterations: usize,
    /// True when `beta` is a basic solution with a verified dual certificate.
    pub vertex: bool,
}

impl LpSolution {
    pub fn into_optimal(self) -> Result<Self, LpError> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::IterationLimit => Err(LpError::IterationLimit {
                iterations: self.iterations,
            }),
            LpStatus::Infeasible => Err(LpError::Infeasible(
                "bounded dual reported empty".to_string(),
            )),
        }
    }
}

/// Rows with a single nonzero entry are kept out of the dense block; L1
/// pseudo-rows are all of this form.
#[derive(Debug, Clone)]
struct Design {
    dense: DMatrix<f64>,
    unit_col: Vec<usize>,
    unit_val: Vec<f64>,
}

impl Design {
    fn rows(&self) -> usize {
        self.dense.nrows() + self.unit_col.len()
    }

    fn cols(&self) -> usize {
        self.dense.ncols()
    }

    fn n_dense(&self) -> usize {
        self.dense.nrows()
    }

    /// `X v`
    fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let rd = self.n_dense();
        let mut out = DVector::zeros(self.rows());
        out.rows_mut(0, rd).copy_from(&(&self.dense * v));
        for (k, (&c, &a)) in self.unit_col.iter().zip(&self.unit_val).enumerate() {
            out[rd + k] = a * v[c];
        }
        out
    }

    /// `Xᵀ u`
    fn tr_mul(&self, u: &DVector<f64>) -> DVector<f64> {
        let rd = self.n_dense();
        let mut out = self.dense.tr_mul(&u.rows(0, rd));
        for (k, (&c, &a)) in self.unit_col.iter().zip(&self.unit_val).enumerate() {
            out[c] += a * u[rd + k];
        }
        out
    }

    /// `Xᵀ diag(d) X`
    fn gram(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let rd = self.n_dense();
        let sd = d.rows(0, rd).map(f64::sqrt);
        let mut xs = self.dense.clone();
        for mut col in xs.column_iter_mut() {
            col.component_mul_assign(&sd);
        }
        let mut g = xs.transpose() * &xs;
        for (k, (&c, &a)) in self.unit_col.iter().zip(&self.unit_val).enumerate() {
            g[(c, c)] += d[rd + k] * a * a;
        }
        g
    }

    fn row(&self, i: usize) -> DVector<f64> {
        let rd = self.n_dense();
        if i < rd {
            self.dense.row(i).transpose()
        } else {
            let mut v = DVector::zeros(self.cols());
            v[self.unit_col[i - rd]] = self.unit_val[i - rd];
            v
        }
    }
}

/// Internal form of a problem: weight-scaled rows, dependent columns dropped,
/// rows reordered (dense first, then unit rows).
struct Reduced {
    design: Design,
    y: DVector<f64>,
    t: DVector<f64>,
    /// Original row index of each internal row.
    row_map: Vec<usize>,
    /// Original column index of each retained column.
    col_map: Vec<usize>,
}

fn reduce(prob: &PinballProblem) -> Reduced {
    let (r, q) = (prob.rows(), prob.cols());
    let scaled = DMatrix::from_fn(r, q, |i, j| prob.w[i] * prob.x[(i, j)]);
    let ys = prob.y.component_mul(&prob.w);

    let cols = independent_columns(&scaled);

    let mut dense_rows = Vec::new();
    let mut unit_rows = Vec::new();
    for i in 0..r {
        let nz: Vec<usize> = cols
            .iter()
            .enumerate()
            .filter(|&(_, &j)| scaled[(i, j)] != 0.0)
            .map(|(k, _)| k)
            .collect();
        match nz.len() {
            // Rows outside the retained column span only add a constant.
            0 => {}
            1 => unit_rows.push((i, nz[0])),
            _ => dense_rows.push(i),
        }
    }

    let dense = DMatrix::from_fn(dense_rows.len(), cols.len(), |a, b| {
        scaled[(dense_rows[a], cols[b])]
    });
    let unit_col: Vec<usize> = unit_rows.iter().map(|&(_, k)| k).collect();
    let unit_val: Vec<f64> = unit_rows
        .iter()
        .map(|&(i, k)| scaled[(i, cols[k])])
        .collect();
    let row_map: Vec<usize> = dense_rows
        .iter()
        .copied()
        .chain(unit_rows.iter().map(|&(i, _)| i))
        .collect();
    let y = DVector::from_iterator(row_map.len(), row_map.iter().map(|&i| ys[i]));
    let t = DVector::from_iterator(row_map.len(), row_map.iter().map(|&i| prob.t[i]));

    Reduced {
        design: Design {
            dense,
            unit_col,
            unit_val,
        },
        y,
        t,
        row_map,
        col_map: cols,
    }
}

/// Greedy column selection by incremental Cholesky of `XᵀX`, keeping the
/// earliest columns of any dependent set.
fn independent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let q = x.ncols();
    let g = x.transpose() * x;
    let mut kept: Vec<usize> = Vec::with_capacity(q);
    // Rows of the lower-triangular factor of the kept block.
    let mut l: Vec<Vec<f64>> = Vec::with_capacity(q);
    for c in 0..q {
        let diag = g[(c, c)];
        if diag <= 0.0 {
            continue;
        }
        let mut v = Vec::with_capacity(kept.len());
        for (a, &ka) in kept.iter().enumerate() {
            let s: f64 = (0..a).map(|b| l[a][b] * v[b]).sum();
            v.push((g[(ka, c)] - s) / l[a][a]);
        }
        let pivot = diag - v.iter().map(|x| x * x).sum::<f64>();
        if pivot > 1e-11 * diag {
            v.push(pivot.sqrt());
            l.push(v);
            kept.push(c);
        }
    }
    kept
}

/// Cholesky factor of a symmetric matrix, adding diagonal jitter when
/// rounding has pushed it off positive definiteness.
fn robust_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, LpError> {
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut a = m.clone();
        if jitter > 0.0 {
            for k in 0..a.nrows() {
                a[(k, k)] += jitter;
            }
        }
        if let Some(ch) = a.cholesky() {
            return Ok(ch);
        }
        jitter = if jitter == 0.0 {
            1e-14 * scale
        } else {
            jitter * 100.0
        };
    }
    Err(LpError::Numerical(
        "normal equations are not positive definite".to_string(),
    ))
}

/// Largest step `α` with `v + α dv ≥ 0`, or `+∞`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

struct InteriorPoint {
    /// Dual point in `[0, 1]^r`.
    a: DVector<f64>,
    /// Coefficients (negated LP multipliers).
    beta: DVector<f64>,
    iterations: usize,
    converged: bool,
}

/// Frisch–Newton on `min cᵀx s.t. Aᵀ… = b, 0 ≤ x ≤ 1` with `A = X̃ᵀ`,
/// `c = −ỹ`, `b = X̃ᵀ(1 − t)`, started at `x = 1 − t`.
fn interior_point(red: &Reduced, opts: &SolverOptions) -> Result<InteriorPoint, LpError> {
    let d = &red.design;
    let r = d.rows();
    let c = -&red.y;
    let mut x = red.t.map(|t| 1.0 - t);
    let b = d.tr_mul(&x);
    let mut s = red.t.clone();

    let mut y = robust_cholesky(&d.gram(&DVector::from_element(r, 1.0)))?.solve(&d.tr_mul(&c));
    let mut resid = &c - d.mul(&y);
    resid.apply(|v| {
        if *v == 0.0 {
            *v = 0.001
        }
    });
    let mut z = resid.map(|v| v.max(0.0));
    let mut w = &z - &resid;

    let gap = |x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>| {
        let cx = c.dot(x);
        (cx - y.dot(&b) + w.sum(), cx)
    };
    let (mut g, mut cx) = gap(&x, &y, &w);
    let beta_step = opts.step_fraction;
    let mut it = 0;
    let mut stalled = 0;
    while g > opts.gap_tol * (1.0 + cx.abs()) && it < opts.max_iter {
        it += 1;
        let qd = DVector::from_iterator(r, (0..r).map(|i| 1.0 / (z[i] / x[i] + w[i] / s[i])));
        // `c − X̃y` equals `z − w` on the dual-feasible manifold; using it and
        // the primal residual directly keeps round-off from accumulating.
        let rv = &c - d.mul(&y);
        let primal_resid = &b - d.tr_mul(&x);
        let aqa = d.gram(&qd);
        let chol = robust_cholesky(&aqa)?;

        // Affine (predictor) step.
        let mut rhs = qd.component_mul(&rv);
        let mut dy = chol.solve(&(d.tr_mul(&rhs) + &primal_resid));
        let mut dx = qd.component_mul(&(d.mul(&dy) - &rv));
        let mut ds = -&dx;
        let mut dz = DVector::from_iterator(r, (0..r).map(|i| -z[i] * (dx[i] / x[i] + 1.0)));
        let mut dw = DVector::from_iterator(r, (0..r).map(|i| -w[i] * (ds[i] / s[i] + 1.0)));

        let steps = |dx: &DVector<f64>,
                     ds: &DVector<f64>,
                     dz: &DVector<f64>,
                     dw: &DVector<f64>,
                     x: &DVector<f64>,
                     s: &DVector<f64>,
                     z: &DVector<f64>,
                     w: &DVector<f64>| {
            let fp = (beta_step * max_step(x, dx).min(max_step(s, ds))).min(1.0);
            let fd = (beta_step * max_step(w, dw).min(max_step(z, dz))).min(1.0);
            (fp, fd)
        };
        let (mut fp, mut fd) = steps(&dx, &ds, &dz, &dw, &x, &s, &z, &w);

        if fp.min(fd) < 1.0 {
            // Corrector step with centering.
            let mu0 = z.dot(&x) + w.dot(&s);
            let gp = (&z + &dz * fd).dot(&(&x + &dx * fp)) + (&w + &dw * fd).dot(&(&s + &ds * fp));
            let mu = mu0 * (gp / mu0).powi(3) / (2.0 * r as f64);
            let dxdz = dx.component_mul(&dz);
            let dsdw = ds.component_mul(&dw);
            let xinv = x.map(|v| 1.0 / v);
            let sinv = s.map(|v| 1.0 / v);
            let xi = (&xinv - &sinv) * mu;
            rhs += qd.component_mul(&(&dxdz - &dsdw - &xi));
            dy = chol.solve(&(d.tr_mul(&rhs) + &primal_resid));
            dx = qd.component_mul(&(d.mul(&dy) + &xi - &rv - &dxdz + &dsdw));
            ds = -&dx;
            dz = DVector::from_iterator(
                r,
                (0..r).map(|i| mu * xinv[i] - z[i] - xinv[i] * z[i] * dx[i] - dxdz[i]),
            );
            dw = DVector::from_iterator(
                r,
                (0..r).map(|i| mu * sinv[i] - w[i] - sinv[i] * w[i] * ds[i] - dsdw[i]),
            );
            (fp, fd) = steps(&dx, &ds, &dz, &dw, &x, &s, &z, &w);
        }

        x.axpy(fp, &dx, 1.0);
        s.axpy(fp, &ds, 1.0);
        y.axpy(fd, &dy, 1.0);
        w.axpy(fd, &dw, 1.0);
        z.axpy(fd, &dz, 1.0);
        (g, cx) = gap(&x, &y, &w);

        if fp.max(fd) < 1e-12 {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    if !g.is_finite() {
        return Err(LpError::Numerical("duality gap is not finite".to_string()));
    }
    Ok(InteriorPoint {
        a: x,
        beta: -y,
        iterations: it,
        converged: g <= opts.gap_tol * (1.0 + cx.abs()),
    })
}

struct Vertex {
    beta: DVector<f64>,
    a: DVector<f64>,
    certified: bool,
}

/// Picks `q` linearly independent rows with the smallest normalized residuals
/// at `beta`, solves for the interpolating fit, and checks the dual.
fn purify(red: &Reduced, ip: &InteriorPoint) -> Option<Vertex> {
    let d = &red.design;
    let (r, q) = (d.rows(), d.cols());
    if r < q {
        return None;
    }
    let fitted = d.mul(&ip.beta);
    let mut order: Vec<(f64, usize)> = (0..r)
        .map(|i| {
            let norm = d.row(i).norm();
            (
                (red.y[i] - fitted[i]).abs() / norm.max(f64::MIN_POSITIVE),
                i,
            )
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Modified Gram–Schmidt over candidate rows.
    let mut basis_rows = Vec::with_capacity(q);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(q);
    for &(_, i) in &order {
        if basis_rows.len() == q {
            break;
        }
        let row = d.row(i);
        let norm0 = row.norm();
        let mut v = row;
        for u in &ortho {
            let proj = u.dot(&v);
            v.axpy(-proj, u, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-9 * norm0 {
            ortho.push(v / norm);
            basis_rows.push(i);
        }
    }
    if basis_rows.len() < q {
        return None;
    }

    let bmat = DMatrix::from_fn(q, q, |a, k| {
        let i = basis_rows[a];
        if i < d.n_dense() {
            d.dense[(i, k)]
        } else if d.unit_col[i - d.n_dense()] == k {
            d.unit_val[i - d.n_dense()]
        } else {
            0.0
        }
    });
    let yb = DVector::from_iterator(q, basis_rows.iter().map(|&i| red.y[i]));
    let lu = bmat.clone().lu();
    let mut beta = lu.solve(&yb)?;
    // Unit basis rows pin their coefficient exactly.
    for &i in &basis_rows {
        if i >= d.n_dense() {
            let k = i - d.n_dense();
            beta[d.unit_col[k]] = red.y[i] / d.unit_val[k];
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let fitted = d.mul(&beta);
    let beta_abs = beta.map(f64::abs);
    let mut in_basis = vec![false; r];
    for &i in &basis_rows {
        in_basis[i] = true;
    }
    let mut a = DVector::zeros(r);
    for i in 0..r {
        if in_basis[i] {
            continue;
        }
        let res = red.y[i] - fitted[i];
        let scale = red.y[i].abs() + d.row(i).map(f64::abs).dot(&beta_abs);
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        a[i] = if res > tol {
            1.0
        } else if res < -tol {
            0.0
        } else {
            ip.a[i].clamp(0.0, 1.0)
        };
    }
    // Bᵀ a_B = X̃ᵀ(1 − t) − X̃_Nᵀ a_N
    let target = d.tr_mul(&red.t.map(|t| 1.0 - t)) - d.tr_mul(&a);
    let ab = lu_transpose_solve(&bmat, &target)?;
    let certified = ab.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v));
    for (k, &i) in basis_rows.iter().enumerate() {
        a[i] = ab[k].clamp(0.0, 1.0);
    }
    Some(Vertex { beta, a, certified })
}

fn lu_transpose_solve(b: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let sol = b.transpose().lu().solve(rhs)?;
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// Minimizes the weighted check loss of `prob`.
///
/// Returns the best point found together with its status; a solution whose
/// status is not [`LpStatus::Optimal`] is still the lowest-objective iterate.
pub fn solve_pinball(prob: &PinballProblem, opts: &SolverOptions) -> Result<LpSolution, LpError> {
    let red = reduce(prob);
    let q = prob.cols();
    let expand = |beta_red: &DVector<f64>| {
        let mut beta = DVector::zeros(q);
        for (k, &j) in red.col_map.iter().enumerate() {
            beta[j] = beta_red[k];
        }
        beta
    };
    let expand_dual = |a_red: &DVector<f64>| {
        // Rows outside the column span are free in the dual; pick the end
        // that maximizes ỹ_i a_i.
        let mut a = DVector::from_iterator(
            prob.rows(),
            (0..prob.rows()).map(|i| if prob.y[i] > 0.0 { 1.0 } else { 0.0 }),
        );
        for (k, &i) in red.row_map.iter().enumerate() {
            a[i] = a_red[k];
        }
        a
    };

    if red.col_map.is_empty() || red.design.rows() == 0 {
        let beta = DVector::zeros(q);
        let a = expand_dual(&DVector::zeros(0));
        return Ok(LpSolution {
            objective: prob.objective(&beta),
            beta,
            dual: Some(a),
            status: LpStatus::Optimal,
            iterations: 0,
            vertex: true,
        });
    }

    let ip = interior_point(&red, opts)?;
    let ip_beta = expand(&ip.beta);
    let ip_obj = prob.objective(&ip_beta);
    let ip_status = if ip.converged {
        LpStatus::Optimal
    } else {
        LpStatus::IterationLimit
    };
    let fallback = LpSolution {
        beta: ip_beta,
        objective: ip_obj,
        dual: Some(expand_dual(&ip.a.map(|v| v.clamp(0.0, 1.0)))),
        status: ip_status,
        iterations: ip.iterations,
        vertex: false,
    };
    if !opts.purify {
        return Ok(fallback);
    }
    match purify(&red, &ip) {
        Some(v) => {
            let beta = expand(&v.beta);
            let obj = prob.objective(&beta);
            let slack = 1e-12 * (1.0 + ip_obj.abs());
            if v.certified && obj <= ip_obj + 1e-9 * (1.0 + ip_obj.abs()) {
                Ok(LpSolution {
                    beta,
                    objective: obj,
                    dual: Some(expand_dual(&v.a)),
                    status: LpStatus::Optimal,
                    iterations: ip.iterations,
                    vertex: true,
                })
            } else if obj <= ip_obj + slack {
                Ok(LpSolution {
                    beta,
                    objective: obj,
                    vertex: false,
                    ..fallback
                })
            } else {
                Ok(fallback)
            }
        }
        None => Ok(fallback),
    }
}
