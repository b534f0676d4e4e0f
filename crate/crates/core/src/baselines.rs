//! Feature-vector regressors: ordinary least squares, Gaussian-process
//! regression with an RBF kernel, and the R² metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, solve_lower};
use crate::tensor::Tensor;

/// `y ≈ x · weightsᵀ + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Tensor,
    pub bias: f64,
}

impl LinearModel {
    pub fn width(&self) -> usize {
        self.weights.cols()
    }

    /// `n x d` features to `n x 1` predictions.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weights.transpose())?.map(|v| v + self.bias)
    }
}

fn check_targets(x: &Tensor, y: &Tensor, op: &'static str) -> Result<()> {
    if y.cols() != 1 || y.rows() != x.rows() {
        return Err(Error::Shape {
            op,
            left: x.shape(),
            right: y.shape(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Usage(format!("{op} needs at least one sample")));
    }
    Ok(())
}

/// Relative ridges tried, in order, when the normal equations do not factor.
const RIDGES: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Least squares through the normal equations of the centred design
/// matrix; the bias is recovered as `ȳ − x̄·w`. Rank-deficient inputs are
/// retried with a ridge of `r · trace(XᵀX) / d` for growing `r`.
pub fn linreg_fit(x: &Tensor, y: &Tensor) -> Result<LinearModel> {
    check_targets(x, y, "linreg_fit")?;
    let (n, d) = (x.rows(), x.cols());
    let x_mean = x.aggregate(crate::Aggregator::Mean)?;
    let y_mean = y.sum() / n as f64;
    if d == 0 {
        return Ok(LinearModel {
            weights: Tensor::zeros(1, 0),
            bias: y_mean,
        });
    }
    let xc = x.add_row_broadcast(&x_mean.scale(-1.0)?)?;
    let yc = y.map(|v| v - y_mean)?;
    let xt = xc.transpose();
    let xtx = xt.matmul(&xc)?;
    let xty = xt.matmul(&yc)?;
    let scale = (0..d).map(|i| xtx.get(i, i)).sum::<f64>() / d as f64;
    for r in RIDGES {
        let mut a = xtx.clone();
        for i in 0..d {
            a.set(i, i, xtx.get(i, i) + r * scale.max(f64::MIN_POSITIVE))?;
        }
        // Without a ridge, near-zero pivots mean (numerical) rank deficiency.
        let usable = |l: &Tensor| r > 0.0 || (0..d).all(|j| l.get(j, j).powi(2) > 1e-12 * scale);
        if let Some(l) = cholesky(&a).ok().filter(usable) {
            let w = cholesky_solve(&l, &xty)?.transpose();
            let bias = y_mean - x_mean.hadamard(&w)?.sum();
            return Ok(LinearModel { weights: w, bias });
        }
    }
    Err(Error::Numerical("normal equations are singular".into()))
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2_score(pred: &Tensor, y: &Tensor) -> Result<f64> {
    if pred.shape() != y.shape() {
        return Err(Error::Shape {
            op: "r2_score",
            left: pred.shape(),
            right: y.shape(),
        });
    }
    let n = y.data().len();
    if n < 2 {
        return Err(Error::UndefinedMetric("R² needs at least two samples".into()));
    }
    let mean = y.sum() / n as f64;
    let ss_tot: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R² is undefined for constant targets".into()));
    }
    let ss_res: f64 = pred.data().iter().zip(y.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Squared-exponential kernel `σ² exp(−‖x−x′‖² / (2ℓ²))` with observation
/// noise `σₙ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl RbfKernel {
    pub fn new(lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let k = RbfKernel {
            lengthscale,
            signal_variance,
            noise_variance,
        };
        k.check()?;
        Ok(k)
    }

    fn check(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.signal_variance > 0.0 && self.noise_variance >= 0.0)
            || !(self.lengthscale.is_finite() && self.signal_variance.is_finite() && self.noise_variance.is_finite())
        {
            return Err(Error::Usage(format!(
                "kernel needs lengthscale > 0, signal variance > 0, noise ≥ 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// A fitted GP: training data plus the Cholesky factor of `K + σₙ²I` and
/// `α = (K + σₙ²I)⁻¹ y`. Fitting costs `O(n³)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub kernel: RbfKernel,
    /// Diagonal jitter that was needed on top of `σₙ²`.
    pub jitter: f64,
    chol: Tensor,
    alpha: Tensor,
}

/// Jitter ladder tried when `K + σₙ²I` does not factor.
const JITTERS: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub fn gp_fit(x: &Tensor, y: &Tensor, kernel: RbfKernel) -> Result<GpModel> {
    check_targets(x, y, "gp_fit")?;
    kernel.check()?;
    let n = x.rows();
    let mut k = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k.set(i, j, kernel.eval(x.row_slice(i), x.row_slice(j)))?;
        }
    }
    for jitter in JITTERS {
        let mut kj = k.clone();
        for i in 0..n {
            kj.set(i, i, k.get(i, i) + kernel.noise_variance + jitter)?;
        }
        if let Ok(chol) = cholesky(&kj) {
            let alpha = cholesky_solve(&chol, y)?;
            return Ok(GpModel {
                inputs: x.clone(),
                targets: y.clone(),
                kernel,
                jitter,
                chol,
                alpha,
            });
        }
    }
    Err(Error::Numerical("kernel matrix is not positive definite even with 1e-6 jitter".into()))
}

impl GpModel {
    /// Posterior mean and variance of the latent function at one `1 x d`
    /// point. Variance is clamped at 0.
    pub fn predict(&self, x: &Tensor) -> Result<(f64, f64)> {
        if x.rows() != 1 || x.cols() != self.inputs.cols() {
            return Err(Error::Shape {
                op: "gp_predict",
                left: x.shape(),
                right: crate::Shape::new(1, self.inputs.cols()),
            });
        }
        let n = self.inputs.rows();
        let ks: Vec<f64> = (0..n).map(|i| self.kernel.eval(self.inputs.row_slice(i), x.data())).collect();
        let ks = Tensor::column(ks)?;
        let mean = ks.transpose().matmul(&self.alpha)?.item()?;
        let v = solve_lower(&self.chol, &ks)?;
        let var = self.kernel.signal_variance - v.data().iter().map(|a| a * a).sum::<f64>();
        Ok((mean, var.max(0.0)))
    }

    /// Means for every row of `x`, as `n x 1`.
    pub fn predict_mean(&self, x: &Tensor) -> Result<Tensor> {
        let means = (0..x.rows())
            .map(|r| self.predict(&x.row_tensor(r)).map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()?;
        Tensor::column(means)
    }
}

/// Free-function form of [`GpModel::predict`].
pub fn gp_predict(m: &GpModel, x: &Tensor) -> Result<(f64, f64)> {
    m.predict(x)
}
