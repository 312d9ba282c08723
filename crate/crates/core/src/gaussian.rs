//! One-class joint Gaussian over Feature II, and a 1-D two-component
//! Gaussian mixture used to clean load histograms.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Relative covariance shrinkage: `λ = 1e-6 · trace(Σ) / d`.
pub const DEFAULT_SHRINKAGE: f64 = 1e-6;

/// Absolute lower bound on `λ`, used when the sample covariance vanishes.
pub const MIN_RIDGE: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Full-covariance Gaussian fitted by maximum likelihood with a diagonal ridge.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    /// Lower Cholesky factor of `covariance`.
    factor: DMatrix<f64>,
    log_det: f64,
    ridge: f64,
    training_mean_nl: f64,
}

impl PartialEq for JointGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean
            && self.covariance == other.covariance
            && self.ridge == other.ridge
            && self.training_mean_nl == other.training_mean_nl
    }
}

impl JointGaussian {
    /// Maximum-likelihood fit on the rows of `samples`, plus
    /// `λ = max(shrinkage · trace(Σ)/d, 1e-12)` on the diagonal.
    pub fn fit(samples: ArrayView2<'_, f64>, shrinkage: f64) -> Result<Self> {
        let (t, d) = samples.dim();
        if t < 2 {
            return Err(Error::invalid(format!("need at least 2 samples, got {t}")));
        }
        if d == 0 {
            return Err(Error::invalid("zero-dimensional samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite sample".into()));
        }
        let n = t as f64;
        let mean = DVector::from_iterator(
            d,
            (0..d).map(|j| samples.column(j).iter().sum::<f64>() / n),
        );
        let mut cov = DMatrix::zeros(d, d);
        for row in samples.rows() {
            let centered = DVector::from_iterator(d, row.iter().zip(mean.iter()).map(|(x, m)| x - m));
            cov.ger(1.0 / n, &centered, &centered, 1.0);
        }
        let ridge = (shrinkage * cov.trace() / d as f64).max(MIN_RIDGE);
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        let mut model = Self::assemble(mean, cov, ridge, f64::NAN)?;
        let total: f64 = samples
            .rows()
            .into_iter()
            .map(|r| model.nl_unchecked(r.iter().copied()))
            .sum();
        model.training_mean_nl = total / n;
        if !model.training_mean_nl.is_finite() {
            return Err(Error::DegenerateModel("training NL is not finite".into()));
        }
        Ok(model)
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_parts(
        mean: Vec<f64>,
        covariance_row_major: Vec<f64>,
        ridge: f64,
        training_mean_nl: f64,
    ) -> Result<Self> {
        let d = mean.len();
        if covariance_row_major.len() != d * d {
            return Err(Error::invalid("covariance size does not match mean"));
        }
        let cov = DMatrix::from_row_slice(d, d, &covariance_row_major);
        Self::assemble(DVector::from_vec(mean), cov, ridge, training_mean_nl)
    }

    fn assemble(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        ridge: f64,
        training_mean_nl: f64,
    ) -> Result<Self> {
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateModel("covariance is not positive definite".into()))?;
        let factor = chol.l();
        let log_det = 2.0 * factor.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            covariance,
            factor,
            log_det,
            ridge,
            training_mean_nl,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Covariance in row-major order.
    pub fn covariance_row_major(&self) -> Vec<f64> {
        self.covariance.transpose().as_slice().to_vec()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn training_mean_nl(&self) -> f64 {
        self.training_mean_nl
    }

    fn nl_unchecked(&self, x: impl Iterator<Item = f64>) -> f64 {
        let d = self.dim();
        let centered = DVector::from_iterator(d, x.zip(self.mean.iter()).map(|(v, m)| v - m));
        let z = self
            .factor
            .solve_lower_triangular(&centered)
            .expect("factor has a positive diagonal");
        0.5 * (z.norm_squared() + self.log_det + d as f64 * LN_2PI)
    }

    /// `½[(x−μ)ᵀΣ⁻¹(x−μ) + log det Σ + d·log 2π]`
    pub fn negative_log_likelihood(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "sample has dimension {}, model has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.nl_unchecked(x.iter().copied()))
    }

    /// NL of `x` divided by the mean NL over the training set.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if self.training_mean_nl == 0.0 || !self.training_mean_nl.is_finite() {
            return Err(Error::DegenerateModel(format!(
                "training mean NL is {}",
                self.training_mean_nl
            )));
        }
        Ok(self.negative_log_likelihood(x)? / self.training_mean_nl)
    }
}

/// Quartile frequencies expressed in frequency bins (`f2 · D_L/2`), the
/// units the joint Gaussian is fitted in.
pub fn quartiles_in_bins(f2: &[f64], window_len: usize) -> Vec<f64> {
    let half = (window_len / 2) as f64;
    f2.iter().map(|v| v * half).collect()
}

pub fn fit_1cg(samples: ArrayView2<'_, f64>, shrinkage: f64) -> Result<JointGaussian> {
    JointGaussian::fit(samples, shrinkage)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.weight.ln() - 0.5 * (LN_2PI + self.variance.ln() + d * d / self.variance)
    }
}

/// Two-component 1-D Gaussian mixture, components in ascending-mean order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm2 {
    pub components: [Component; 2],
    pub log_likelihood: f64,
    /// Log-likelihood after each EM iteration.
    pub trace: Vec<f64>,
}

const GMM_MAX_ITER: usize = 500;
const GMM_TOL: f64 = 1e-8;

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn moments(xs: &[f64], floor: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(floor))
}

impl Gmm2 {
    /// EM from a median split: the lower and upper halves of the sorted data
    /// seed the two components with equal weights.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < 4 {
            return Err(Error::invalid(format!(
                "need at least 4 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let range = sorted[sorted.len() - 1] - sorted[0];
        if range == 0.0 {
            return Err(Error::DegenerateFit);
        }
        let floor = 1e-12 * range * range;
        let half = sorted.len() / 2;
        let (m0, v0) = moments(&sorted[..half], floor);
        let (m1, v1) = moments(&sorted[half..], floor);
        let mut comps = [
            Component { weight: 0.5, mean: m0, variance: v0 },
            Component { weight: 0.5, mean: m1, variance: v1 },
        ];

        let n = samples.len() as f64;
        let mut trace: Vec<f64> = Vec::new();
        let mut resp = vec![0.0; samples.len()];
        for _ in 0..GMM_MAX_ITER {
            // E-step: responsibility of component 1
            let mut ll = 0.0;
            for (r, &x) in resp.iter_mut().zip(samples) {
                let a = comps[0].log_density(x);
                let b = comps[1].log_density(x);
                let total = log_sum_exp(a, b);
                ll += total;
                *r = (b - total).exp();
            }
            if let Some(&prev) = trace.last() {
                debug_assert!(
                    ll >= prev - 1e-9 * prev.abs().max(1.0),
                    "EM log-likelihood decreased: {prev} -> {ll}"
                );
                trace.push(ll);
                if ll - prev < GMM_TOL {
                    break;
                }
            } else {
                trace.push(ll);
            }
            // M-step
            let n1: f64 = resp.iter().sum();
            let n0 = n - n1;
            let mut next = comps;
            for (k, nk) in [(0usize, n0), (1usize, n1)] {
                if nk <= f64::MIN_POSITIVE {
                    // empty component: keep its shape, give it negligible weight
                    next[k].weight = f64::MIN_POSITIVE;
                    continue;
                }
                let w = |r: f64| if k == 1 { r } else { 1.0 - r };
                let mean = resp.iter().zip(samples).map(|(&r, &x)| w(r) * x).sum::<f64>() / nk;
                let var = resp
                    .iter()
                    .zip(samples)
                    .map(|(&r, &x)| w(r) * (x - mean) * (x - mean))
                    .sum::<f64>()
                    / nk;
                next[k] = Component {
                    weight: nk / n,
                    mean,
                    variance: var.max(floor),
                };
            }
            comps = next;
        }
        if comps[0].mean > comps[1].mean {
            comps.swap(0, 1);
        }
        Ok(Self {
            components: comps,
            log_likelihood: *trace.last().expect("at least one iteration"),
            trace,
        })
    }

    /// Index (0 = lower mean, 1 = upper mean) of the component with the
    /// larger responsibility for `x`. Ties go to the lower component.
    pub fn assign(&self, x: f64) -> usize {
        let a = self.components[0].log_density(x);
        let b = self.components[1].log_density(x);
        usize::from(b > a)
    }
}

pub fn fit_gmm2(samples: &[f64]) -> Result<Gmm2> {
    Gmm2::fit(samples)
}
