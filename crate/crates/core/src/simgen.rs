//! Data-generating processes for the simulation designs, with the true
//! conditional-quantile structure exposed for scoring.
//!
//! * `HeteroScale6` / `HeteroScale100`: `Y = 1 + Z1 + Z2 + 2 Z6 + 2 Z6 ε`,
//!   `Z ~ U(0,1)^p`, `ε ~ N(0,1)`, so the `Z6` slope is `2 + 2Φ⁻¹(τ)`.
//!   The 100-covariate version pads with independent `U(0,1)` noise columns.
//! * `BlockSparse`: blocks of 5 covariates (20 in the standard design), each
//!   block `|N(1, R)|` with AR(1) or compound-symmetry correlation `R` at
//!   ρ = 0.5; then
//!   `Y = 1 + Zᵀγ(U) + F⁻¹(U)` with `U ~ U(0,1)` and piecewise-constant `γ`.
//! * `HighDim600`: the same construction with 120 blocks and its own `γ`.
//!
//! Every `γ(τ)` here is non-decreasing in `τ` and the covariates are
//! nonnegative, so `Q_τ(Y|Z) = 1 + F⁻¹(τ) + Zᵀγ(τ)` exactly.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::model::{CoefficientSet, Dataset, QuantileGrid, SparsityPattern};

/// Within-block correlation of the block designs.
pub const BLOCK_RHO: f64 = 0.5;
pub const BLOCK_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorDist {
    Normal,
    /// Student t with 3 degrees of freedom.
    T3,
    /// Exponential with rate 1.
    Exp1,
}

impl ErrorDist {
    pub const ALL: [ErrorDist; 3] = [ErrorDist::Normal, ErrorDist::T3, ErrorDist::Exp1];

    /// Inverse CDF `F⁻¹(u)`.
    pub fn quantile(self, u: f64) -> f64 {
        match self {
            ErrorDist::Normal => std_normal_quantile(u),
            ErrorDist::T3 => StudentsT::new(0.0, 1.0, 3.0)
                .expect("valid t parameters")
                .inverse_cdf(u),
            ErrorDist::Exp1 => -(-u).ln_1p(),
        }
    }

    fn tag(self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::T3 => "t3",
            ErrorDist::Exp1 => "exp",
        }
    }
}

pub fn std_normal_quantile(u: f64) -> f64 {
    Normal::standard().inverse_cdf(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Correlation {
    /// `ρ^|i−j|`
    Ar1,
    /// `ρ` off the diagonal.
    CompoundSymmetry,
}

impl Correlation {
    pub const ALL: [Correlation; 2] = [Correlation::Ar1, Correlation::CompoundSymmetry];

    pub fn matrix(self, size: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(size, size, |i, j| match self {
            _ if i == j => 1.0,
            Correlation::Ar1 => rho.powi((i as i32 - j as i32).abs()),
            Correlation::CompoundSymmetry => rho,
        })
    }

    fn tag(self) -> &'static str {
        match self {
            Correlation::Ar1 => "ar",
            Correlation::CompoundSymmetry => "cs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    HeteroScale6,
    HeteroScale100,
    /// `blocks` blocks of five covariates; the standard design has 20.
    BlockSparse {
        error: ErrorDist,
        corr: Correlation,
        blocks: usize,
    },
    HighDim600 {
        error: ErrorDist,
        corr: Correlation,
    },
}

/// Block count of the standard 100-covariate block design.
pub const STANDARD_BLOCKS: usize = 20;

impl ScenarioKind {
    /// The standard 100-covariate block design.
    pub fn block_sparse(error: ErrorDist, corr: Correlation) -> Self {
        ScenarioKind::BlockSparse {
            error,
            corr,
            blocks: STANDARD_BLOCKS,
        }
    }

    pub fn p(self) -> usize {
        match self {
            ScenarioKind::HeteroScale6 => 6,
            ScenarioKind::HeteroScale100 => 100,
            ScenarioKind::BlockSparse { blocks, .. } => blocks * BLOCK_SIZE,
            ScenarioKind::HighDim600 { .. } => 600,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            // The slope pattern reaches covariate 8, so two blocks are needed.
            ScenarioKind::BlockSparse { blocks, .. } if blocks < 2 => invalid(format!(
                "block design needs at least 2 blocks, got {blocks}"
            )),
            _ => Ok(()),
        }
    }

    /// Every design in the repo.
    pub fn all() -> Vec<ScenarioKind> {
        let mut kinds = vec![ScenarioKind::HeteroScale6, ScenarioKind::HeteroScale100];
        for corr in Correlation::ALL {
            for error in ErrorDist::ALL {
                kinds.push(ScenarioKind::block_sparse(error, corr));
                kinds.push(ScenarioKind::HighDim600 { error, corr });
            }
        }
        kinds
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioKind::HeteroScale6 => write!(f, "hetero6"),
            ScenarioKind::HeteroScale100 => write!(f, "hetero100"),
            ScenarioKind::BlockSparse {
                error,
                corr,
                blocks,
            } => {
                write!(f, "block-{}-{}", corr.tag(), error.tag())?;
                if *blocks != STANDARD_BLOCKS {
                    write!(f, "-p{}", blocks * BLOCK_SIZE)?;
                }
                Ok(())
            }
            ScenarioKind::HighDim600 { error, corr } => {
                write!(f, "highdim-{}-{}", corr.tag(), error.tag())
            }
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    /// `hetero6`, `hetero100`, `block-<ar|cs>-<normal|t3|exp>[-p<multiple of 5>]`,
    /// `highdim-<ar|cs>[-<normal|t3|exp>]`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = lower.split('-').collect();
        let corr = |t: &str| match t {
            "ar" => Ok(Correlation::Ar1),
            "cs" => Ok(Correlation::CompoundSymmetry),
            other => invalid(format!("unknown correlation {other:?}")),
        };
        let error = |t: &str| match t {
            "normal" => Ok(ErrorDist::Normal),
            "t3" => Ok(ErrorDist::T3),
            "exp" => Ok(ErrorDist::Exp1),
            other => invalid(format!("unknown error distribution {other:?}")),
        };
        match parts.as_slice() {
            ["hetero6"] => Ok(ScenarioKind::HeteroScale6),
            ["hetero100"] => Ok(ScenarioKind::HeteroScale100),
            ["block", c, e] => Ok(ScenarioKind::block_sparse(error(e)?, corr(c)?)),
            ["block", c, e, size] => {
                let p: usize = size
                    .strip_prefix('p')
                    .and_then(|v| v.parse().ok())
                    .filter(|p| p % BLOCK_SIZE == 0)
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("bad block design size {size:?} in {s:?}"))
                    })?;
                let kind = ScenarioKind::BlockSparse {
                    error: error(e)?,
                    corr: corr(c)?,
                    blocks: p / BLOCK_SIZE,
                };
                kind.validate()?;
                Ok(kind)
            }
            ["highdim", c] => Ok(ScenarioKind::HighDim600 {
                error: ErrorDist::Normal,
                corr: corr(c)?,
            }),
            ["highdim", c, e] => Ok(ScenarioKind::HighDim600 {
                error: error(e)?,
                corr: corr(c)?,
            }),
            _ => invalid(format!("unknown scenario {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub seed: u64,
}

/// Known truth of a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleTruth {
    kind: ScenarioKind,
}

impl OracleTruth {
    pub fn new(kind: ScenarioKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    /// True slope vector at level `tau`.
    pub fn gamma_star(&self, tau: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.kind.p()];
        let piece = |lo: [f64; 8], mid: [f64; 8], hi: [f64; 8]| {
            if tau <= 0.3 {
                lo
            } else if tau <= 0.7 {
                mid
            } else {
                hi
            }
        };
        match self.kind {
            ScenarioKind::HeteroScale6 | ScenarioKind::HeteroScale100 => {
                g[0] = 1.0;
                g[1] = 1.0;
                g[5] = 2.0 + 2.0 * std_normal_quantile(tau);
            }
            ScenarioKind::BlockSparse { .. } => {
                let head = piece(
                    [0.5, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0],
                    [0.5, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.7],
                    [0.6, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.7],
                );
                g[..8].copy_from_slice(&head);
            }
            ScenarioKind::HighDim600 { .. } => {
                let head = piece(
                    [0.6, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0],
                    [0.6, 0.0, 0.8, 0.0, 0.0, 0.7, 0.0, 0.8],
                    [0.8, 0.0, 0.8, 0.0, 0.0, 0.8, 0.0, 1.0],
                );
                g[..8].copy_from_slice(&head);
            }
        }
        g
    }

    /// True intercept at level `tau`.
    pub fn intercept_star(&self, tau: f64) -> f64 {
        match self.kind {
            ScenarioKind::HeteroScale6 | ScenarioKind::HeteroScale100 => 1.0,
            ScenarioKind::BlockSparse { error, .. } | ScenarioKind::HighDim600 { error, .. } => {
                1.0 + error.quantile(tau)
            }
        }
    }

    /// `Q_τ(Y | Z = z)`.
    pub fn q_star(&self, tau: f64, z: &[f64]) -> f64 {
        let g = self.gamma_star(tau);
        self.intercept_star(tau) + g.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }

    /// True slopes at each level of `grid`, `M × p`.
    pub fn slopes_at(&self, grid: &QuantileGrid) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = grid.taus().iter().map(|&t| self.gamma_star(t)).collect();
        DMatrix::from_fn(grid.m(), self.kind.p(), |m, j| rows[m][j])
    }

    /// True intercepts and slopes at each level of `grid`.
    pub fn coef_at(&self, grid: &QuantileGrid) -> CoefficientSet {
        let b0 = DVector::from_iterator(
            grid.m(),
            grid.taus().iter().map(|&t| self.intercept_star(t)),
        );
        CoefficientSet::new(b0, self.slopes_at(grid)).expect("finite truth")
    }

    pub fn true_pattern(&self, grid: &QuantileGrid) -> SparsityPattern {
        let s = self.slopes_at(grid);
        SparsityPattern::from_fn(grid.m(), self.kind.p(), |m, j| s[(m, j)] != 0.0)
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        ^ salt
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws one block of covariates before the absolute value is taken: normal
/// with unit means, unit variances and correlation `BLOCK_RHO`.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    chol: DMatrix<f64>,
}

impl BlockSampler {
    pub fn new(corr: Correlation) -> Self {
        let chol = corr
            .matrix(BLOCK_SIZE, BLOCK_RHO)
            .cholesky()
            .expect("block correlation is positive definite")
            .l();
        Self { chol }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let e = DVector::from_fn(BLOCK_SIZE, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.chol * e).add_scalar(1.0)
    }
}

/// Draws `n` observations of `kind`.
pub fn sample<R: Rng + ?Sized>(kind: ScenarioKind, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return invalid("sample size must be positive");
    }
    kind.validate()?;
    let p = kind.p();
    let mut z = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    match kind {
        ScenarioKind::HeteroScale6 | ScenarioKind::HeteroScale100 => {
            for i in 0..n {
                for j in 0..p {
                    z[(i, j)] = rng.random::<f64>();
                }
                let eps: f64 = rng.sample(StandardNormal);
                let z6 = z[(i, 5)];
                y[i] = 1.0 + z[(i, 0)] + z[(i, 1)] + 2.0 * z6 + 2.0 * z6 * eps;
            }
        }
        ScenarioKind::BlockSparse { error, corr, .. }
        | ScenarioKind::HighDim600 { error, corr } => {
            let blocks = BlockSampler::new(corr);
            let truth = OracleTruth::new(kind);
            let pieces = [0.15, 0.5, 0.85].map(|t| truth.gamma_star(t));
            for i in 0..n {
                for b in 0..p / BLOCK_SIZE {
                    let x = blocks.draw(rng);
                    for k in 0..BLOCK_SIZE {
                        z[(i, b * BLOCK_SIZE + k)] = x[k].abs();
                    }
                }
                let u: f64 = loop {
                    let u = rng.random::<f64>();
                    if u > 0.0 {
                        break u;
                    }
                };
                let gamma = &pieces[if u <= 0.3 {
                    0
                } else if u <= 0.7 {
                    1
                } else {
                    2
                }];
                let lin: f64 = gamma[..8]
                    .iter()
                    .enumerate()
                    .map(|(j, g)| g * z[(i, j)])
                    .sum();
                y[i] = 1.0 + lin + error.quantile(u);
            }
        }
    }
    Dataset::new(y, z)
}

/// Reproducible draw of `scenario.n` observations plus the design's truth.
pub fn generate(scenario: &Scenario) -> Result<(Dataset, OracleTruth)> {
    let mut rng = rng_from_seed(scenario.seed);
    let data = sample(scenario.kind, scenario.n, &mut rng)?;
    Ok((data, OracleTruth::new(scenario.kind)))
}
