//! Log-density targets: the user callback contract and the built-in test
//! densities exposed through the command line.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// A natural-log density, possibly unnormalized.
///
/// `f64::NEG_INFINITY` marks points outside the support; such proposals are
/// rejected with certainty. NaN is treated as a bug in the target and aborts
/// the run.
pub trait LogDensity: Sync {
    fn ndim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn ndim(&self) -> usize {
        (**self).ndim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
}

/// Wraps a closure as a target of known dimension.
pub struct FnTarget<F> {
    ndim: usize,
    f: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(ndim: usize, f: F) -> Self {
        FnTarget { ndim, f }
    }
}

impl<F> LogDensity for FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn ndim(&self) -> usize {
        self.ndim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Gaussian in Cholesky form. `log_density_unnormalized` drops the
/// `-½ log det - d/2 log 2π` constant.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Usage("gaussian needs at least one dimension".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Usage(format!(
                "covariance is {}x{}, mean has {} entries",
                cov.nrows(),
                cov.ncols(),
                d
            )));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (cov[(i, j)], cov[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Usage("covariance matrix is not symmetric".into()));
                }
            }
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Usage("covariance matrix is not positive definite".into()))?;
        let chol_lower = chol.l();
        let log_det: f64 = (0..d).map(|i| 2.0 * chol_lower[(i, i)].ln()).sum();
        let log_norm = -0.5 * log_det - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(Gaussian {
            mean: DVector::from_vec(mean),
            cov,
            chol_lower,
            log_norm,
        })
    }

    pub fn standard(ndim: usize) -> Self {
        Gaussian::new(vec![0.0; ndim], DMatrix::identity(ndim, ndim))
            .expect("identity covariance is positive definite")
    }

    pub fn ndim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.ndim();
        let mut v = vec![0.0; d];
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= self.chol_lower[(i, j)] * v[j];
            }
            v[i] = acc / self.chol_lower[(i, i)];
        }
        v.iter().map(|t| t * t).sum()
    }

    pub fn log_density_unnormalized(&self, x: &[f64]) -> f64 {
        -0.5 * self.mahalanobis_sq(x)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.log_norm + self.log_density_unnormalized(x)
    }
}

#[derive(Clone, Debug)]
pub struct MixtureComponent {
    pub weight: f64,
    pub gaussian: Gaussian,
}

#[derive(Clone, Debug)]
pub enum BuiltinTarget {
    Mvn(Gaussian),
    /// `-scale⁻¹ Σ [100 (x_{i+1} - x_i²)² + (1 - x_i)²]`
    Rosenbrock { ndim: usize, scale: f64 },
    GaussMixture(Vec<MixtureComponent>),
}

impl BuiltinTarget {
    pub fn standard_mvn(ndim: usize) -> Self {
        BuiltinTarget::Mvn(Gaussian::standard(ndim))
    }

    pub fn rosenbrock(ndim: usize, scale: f64) -> Result<Self> {
        if ndim < 2 {
            return Err(Error::Usage("rosenbrock needs ndim >= 2".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Usage(format!("rosenbrock scale must be positive, got {scale}")));
        }
        Ok(BuiltinTarget::Rosenbrock { ndim, scale })
    }

    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Usage("mixture needs at least one component".into()));
        };
        let d = first.gaussian.ndim();
        if components.iter().any(|c| c.gaussian.ndim() != d) {
            return Err(Error::Usage("mixture components differ in dimension".into()));
        }
        if components.iter().any(|c| !(c.weight > 0.0)) {
            return Err(Error::Usage("mixture weights must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(BuiltinTarget::GaussMixture(components))
    }

    /// Log-density up to an additive constant. Fails on dimension mismatch.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.ndim() {
            return Err(Error::Usage(format!(
                "point has {} coordinates, target has {}",
                x.len(),
                self.ndim()
            )));
        }
        Ok(self.log_density(x))
    }
}

impl LogDensity for BuiltinTarget {
    fn ndim(&self) -> usize {
        match self {
            BuiltinTarget::Mvn(g) => g.ndim(),
            BuiltinTarget::Rosenbrock { ndim, .. } => *ndim,
            BuiltinTarget::GaussMixture(c) => c[0].gaussian.ndim(),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            BuiltinTarget::Mvn(g) => g.log_density_unnormalized(x),
            BuiltinTarget::Rosenbrock { scale, .. } => {
                let s: f64 = x
                    .windows(2)
                    .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                    .sum();
                -s / scale
            }
            BuiltinTarget::GaussMixture(components) => {
                // log Σ w_k N_k(x), evaluated with the max-shift trick
                let terms: Vec<f64> = components
                    .iter()
                    .map(|c| c.weight.ln() + c.gaussian.log_pdf(x))
                    .collect();
                let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return max;
                }
                max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_mvn_at_origin_and_ones() {
        let t = BuiltinTarget::standard_mvn(4);
        assert_eq!(t.eval(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(t.eval(&[1.0; 4]).unwrap(), -2.0);
        let x = [0.3, -1.7, 2.2, 0.05];
        let direct = -0.5 * x.iter().map(|v| v * v).sum::<f64>();
        assert_eq!(t.eval(&x).unwrap(), direct);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let t = BuiltinTarget::standard_mvn(4);
        assert!(matches!(t.eval(&[0.0; 3]), Err(Error::Usage(_))));
    }

    #[test]
    fn mixture_at_origin_matches_direct_formula() {
        let mu = 1.5;
        let comp = |m: f64| MixtureComponent {
            weight: 0.5,
            gaussian: Gaussian::new(vec![m], DMatrix::identity(1, 1)).unwrap(),
        };
        let t = BuiltinTarget::mixture(vec![comp(mu), comp(-mu)]).unwrap();
        let pdf = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let direct = (0.5 * pdf(0.0, mu) + 0.5 * pdf(0.0, -mu)).ln();
        assert!((t.eval(&[0.0]).unwrap() - direct).abs() < 1e-14);
        let direct2 = (0.5 * pdf(0.7, mu) + 0.5 * pdf(0.7, -mu)).ln();
        assert!((t.eval(&[0.7]).unwrap() - direct2).abs() < 1e-14);
    }

    #[test]
    fn mixture_weights_validated() {
        let g = Gaussian::standard(1);
        let bad = vec![
            MixtureComponent { weight: 0.5, gaussian: g.clone() },
            MixtureComponent { weight: 0.6, gaussian: g },
        ];
        assert!(BuiltinTarget::mixture(bad).is_err());
    }

    #[test]
    fn mvn_rejects_non_spd() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Gaussian::new(vec![0.0, 0.0], cov).is_err());
    }

    #[test]
    fn mvn_permutation_invariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let mean = vec![0.5, -1.0, 2.0];
        let x = [0.1, 0.2, 0.3];
        let perm = [2usize, 0, 1];
        let pcov = DMatrix::from_fn(3, 3, |i, j| cov[(perm[i], perm[j])]);
        let pmean: Vec<f64> = perm.iter().map(|&p| mean[p]).collect();
        let px: Vec<f64> = perm.iter().map(|&p| x[p]).collect();
        let a = BuiltinTarget::Mvn(Gaussian::new(mean, cov).unwrap());
        let b = BuiltinTarget::Mvn(Gaussian::new(pmean, pcov).unwrap());
        assert!((a.eval(&x).unwrap() - b.eval(&px).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rosenbrock_mode() {
        let t = BuiltinTarget::rosenbrock(3, 1.0).unwrap();
        assert_eq!(t.eval(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(t.eval(&[0.0, 1.0, 0.0]).unwrap() < 0.0);
    }
}
