//! Objective models `F(θ, ξ)` with seeded noise samplers, and the
//! closed-form entropic oracles for Gaussian returns.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RiskError};

/// RNG used for every noise stream.
pub type NoiseRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn noise_rng(seed: u64, stream: u64) -> NoiseRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major batch of noise draws, one `dim`-vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    dim: usize,
    data: Vec<f64>,
}

impl NoiseBatch {
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(invalid("noise batch length is not a multiple of its dimension"));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// A parameterized objective `F(θ, ξ)` and a sampler for `ξ`.
pub trait ScenarioModel: Send + Sync {
    /// Dimension of the decision vector `θ`.
    fn dim(&self) -> usize;

    /// Dimension of one noise draw.
    fn noise_dim(&self) -> usize;

    /// Returns `F(θ, z)` and writes `∇_θ F(θ, z)` into `grad`.
    fn evaluate(&self, theta: &[f64], z: &[f64], grad: &mut [f64]) -> f64;

    fn draw(&self, rng: &mut NoiseRng, out: &mut [f64]);

    fn seed(&self) -> u64;

    fn value(&self, theta: &[f64], z: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.evaluate(theta, z, &mut grad)
    }

    /// A fresh stream for substream `id` of this scenario's seed.
    fn stream(&self, id: u64) -> NoiseRng {
        noise_rng(self.seed(), id)
    }

    fn draw_batch(&self, rng: &mut NoiseRng, m: usize) -> NoiseBatch {
        let k = self.noise_dim();
        let mut data = vec![0.0; m * k];
        for row in data.chunks_exact_mut(k) {
            self.draw(rng, row);
        }
        NoiseBatch { dim: k, data }
    }
}

/// Largest gap between `∇F` and central differences of `F` at `(θ, z)`.
pub fn gradient_discrepancy(model: &dyn ScenarioModel, theta: &[f64], z: &[f64], h: f64) -> f64 {
    let mut grad = vec![0.0; model.dim()];
    model.evaluate(theta, z, &mut grad);
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = model.value(&probe, z);
        probe[i] = theta[i] - h;
        let down = model.value(&probe, z);
        probe[i] = theta[i];
        worst = worst.max(((up - down) / (2.0 * h) - grad[i]).abs());
    }
    worst
}

/// `ξ ~ N(μ, Σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoiseSpec {
    pub mu: Vec<f64>,
    /// Row-major `d × d` covariance.
    pub sigma: Vec<Vec<f64>>,
    pub seed: u64,
}

impl GaussianNoiseSpec {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows(&self.sigma, self.mu.len())
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d {
        return Err(RiskError::DimensionMismatch {
            expected: d,
            got: rows.len(),
        });
    }
    for r in rows {
        if r.len() != d {
            return Err(RiskError::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// Bootstrap over the rows of a returns matrix, with independent Gaussian
/// noise of variance `noise_scale · var_i` added to asset `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNoiseSpec {
    /// `T × d`, one row per period.
    pub returns: Vec<Vec<f64>>,
    pub noise_scale: f64,
    pub seed: u64,
}

/// Default fraction of the per-asset variance injected as noise.
pub const DEFAULT_NOISE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian(GaussianNoiseSpec),
    Empirical(EmpiricalNoiseSpec),
}

#[derive(Debug, Clone)]
enum Sampler {
    Gaussian {
        mu: Vec<f64>,
        chol: DMatrix<f64>,
    },
    Empirical {
        rows: Vec<f64>,
        periods: usize,
        noise_sd: Vec<f64>,
    },
}

/// `F(θ, ξ) = θᵀξ`, `∇F = ξ`.
#[derive(Debug, Clone)]
pub struct LinearPortfolio {
    d: usize,
    seed: u64,
    sampler: Sampler,
}

/// Build the linear portfolio scenario over the given noise model.
pub fn linear_portfolio(noise: &NoiseSpec) -> Result<LinearPortfolio> {
    match noise {
        NoiseSpec::Gaussian(g) => {
            let d = g.dim();
            if d == 0 {
                return Err(invalid("gaussian noise needs d >= 1"));
            }
            let sigma = g.sigma_matrix()?;
            let chol = sigma.cholesky().ok_or(RiskError::NotPositiveDefinite)?;
            Ok(LinearPortfolio {
                d,
                seed: g.seed,
                sampler: Sampler::Gaussian {
                    mu: g.mu.clone(),
                    chol: chol.l(),
                },
            })
        }
        NoiseSpec::Empirical(e) => {
            let periods = e.returns.len();
            if periods == 0 {
                return Err(RiskError::Data("returns matrix is empty".into()));
            }
            let d = e.returns[0].len();
            if d == 0 {
                return Err(RiskError::Data("returns matrix has no assets".into()));
            }
            if !(e.noise_scale >= 0.0 && e.noise_scale.is_finite()) {
                return Err(invalid("noise scale must be a nonnegative number"));
            }
            let mut rows = Vec::with_capacity(periods * d);
            for (i, r) in e.returns.iter().enumerate() {
                if r.len() != d {
                    return Err(RiskError::Data(format!(
                        "row {i} has {} values, expected {d}",
                        r.len()
                    )));
                }
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(RiskError::Data(format!("row {i} has a non-finite value")));
                }
                rows.extend_from_slice(r);
            }
            let noise_sd = (0..d)
                .map(|j| {
                    let col = e.returns.iter().map(|r| r[j]);
                    let mean = col.clone().sum::<f64>() / periods as f64;
                    let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / periods as f64;
                    (e.noise_scale * var).sqrt()
                })
                .collect();
            Ok(LinearPortfolio {
                d,
                seed: e.seed,
                sampler: Sampler::Empirical {
                    rows,
                    periods,
                    noise_sd,
                },
            })
        }
    }
}

impl ScenarioModel for LinearPortfolio {
    fn dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn evaluate(&self, theta: &[f64], z: &[f64], grad: &mut [f64]) -> f64 {
        grad.copy_from_slice(z);
        theta.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    fn value(&self, theta: &[f64], z: &[f64]) -> f64 {
        theta.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn draw(&self, rng: &mut NoiseRng, out: &mut [f64]) {
        match &self.sampler {
            Sampler::Gaussian { mu, chol } => {
                let normals: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..self.d {
                    let mut acc = mu[i];
                    for (j, n) in normals.iter().enumerate().take(i + 1) {
                        acc += chol[(i, j)] * n;
                    }
                    out[i] = acc;
                }
            }
            Sampler::Empirical {
                rows,
                periods,
                noise_sd,
            } => {
                let t = rng.random_range(0..*periods);
                let row = &rows[t * self.d..(t + 1) * self.d];
                for i in 0..self.d {
                    let n: f64 = rng.sample(StandardNormal);
                    out[i] = row[i] + noise_sd[i] * n;
                }
            }
        }
    }
}

/// Entropic risk of `N(μ, σ²)`: `-μ + βσ²/2`.
pub fn entropic_risk_closed_form(x_mu: f64, x_sigma2: f64, beta: f64) -> f64 {
    -x_mu + beta * x_sigma2 / 2.0
}

/// The mean-variance objective `ρ(θ) = -θᵀμ + (β/2) θᵀΣθ`, which is the
/// entropic risk of `θᵀξ` for Gaussian `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVarianceObjective {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub beta: f64,
}

impl MeanVarianceObjective {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, beta: f64) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(RiskError::DimensionMismatch {
                expected: mu.len(),
                got: sigma.nrows(),
            });
        }
        if !(beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        Ok(Self { mu, sigma, beta })
    }

    pub fn from_gaussian(spec: &GaussianNoiseSpec, beta: f64) -> Result<Self> {
        Self::new(spec.mu_vector(), spec.sigma_matrix()?, beta)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn check(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.dim() {
            return Err(RiskError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(DVector::from_column_slice(theta))
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let t = self.check(theta)?;
        Ok(-t.dot(&self.mu) + 0.5 * self.beta * t.dot(&(&self.sigma * &t)))
    }

    /// `-μ + βΣθ`
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let t = self.check(theta)?;
        let g = -&self.mu + self.beta * (&self.sigma * &t);
        Ok(g.iter().copied().collect())
    }
}

/// Evaluate `-θᵀμ + (β/2) θᵀΣθ`.
pub fn entropic_objective_theta(mu: &[f64], sigma: &[Vec<f64>], beta: f64, theta: &[f64]) -> Result<f64> {
    let obj = MeanVarianceObjective::new(
        DVector::from_column_slice(mu),
        matrix_from_rows(sigma, mu.len())?,
        beta,
    )?;
    obj.value(theta)
}

/// Deterministic synthetic market: `μ_i = 0.02·(i+1)` and
/// `Σ = A·Aᵀ/d + ridge·I` with `A` a seeded standard-normal matrix.
pub fn synthetic_gaussian(d: usize, ridge: f64, matrix_seed: u64, noise_seed: u64) -> GaussianNoiseSpec {
    let mut rng = noise_rng(matrix_seed, 0);
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let sigma = &a * a.transpose() / d as f64 + DMatrix::<f64>::identity(d, d) * ridge;
    GaussianNoiseSpec {
        mu: (0..d).map(|i| 0.02 * (i + 1) as f64).collect(),
        sigma: (0..d).map(|i| (0..d).map(|j| sigma[(i, j)]).collect()).collect(),
        seed: noise_seed,
    }
}

/// Default ridge added to the synthetic covariance.
pub const SYNTHETIC_RIDGE: f64 = 0.01;
/// Default seed for the synthetic covariance factor.
pub const SYNTHETIC_MATRIX_SEED: u64 = 2024;
