//! Exact Gaussian-process regression, one model per scalar output channel.
//!
//! Models use a squared-exponential kernel with per-dimension (ARD)
//! lengthscales. Inputs are scaled to `[0, 1]` by the channel's box bounds
//! and outputs are standardized by the training mean/std, so hyperparameters
//! always live on normalized scales. Fitted models are immutable: refitting
//! builds a new model from the full dataset.

mod optimize;

pub use optimize::{optimize_hyperparams, OptimizeOptions};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Jitter escalation ladder tried when factorizing the kernel matrix.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Affine map taking physical inputs into the unit box.
#[derive(Debug, Clone)]
pub struct InputNormalizer<T> {
    lo: DVector<T>,
    width: DVector<T>,
}

impl<T: Scalar> InputNormalizer<T> {
    pub fn from_box(bounds: &[(T, T)]) -> Result<Self> {
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi > lo) {
                return Err(Error::config(format!(
                    "degenerate input bounds on dim {i}: [{}, {}]",
                    lo.to_f64_s(),
                    hi.to_f64_s()
                )));
            }
        }
        Ok(Self {
            lo: DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0)),
            width: DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.1 - b.0)),
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn normalize(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_fn(x.len(), |i, _| (x[i] - self.lo[i]) / self.width[i])
    }

    pub fn denormalize(&self, u: &DVector<T>) -> DVector<T> {
        DVector::from_fn(u.len(), |i, _| u[i] * self.width[i] + self.lo[i])
    }
}

/// Affine map standardizing one output channel.
#[derive(Debug, Clone)]
pub struct OutputNormalizer<T> {
    pub mean: T,
    pub scale: T,
}

impl<T: Scalar> OutputNormalizer<T> {
    /// Mean/population-std of the samples; unit scale for (near-)constant data.
    pub fn from_samples(y: &[T]) -> Self {
        let n = T::of(y.len() as f64);
        let mean = y.iter().fold(T::zero(), |acc, &v| acc + v) / n;
        let var = y
            .iter()
            .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
            / n;
        let std = var.sqrt();
        let scale = if std > T::of(1e-12) { std } else { T::one() };
        Self { mean, scale }
    }

    pub fn normalize(&self, y: T) -> T {
        (y - self.mean) / self.scale
    }

    pub fn denormalize(&self, y: T) -> T {
        y * self.scale + self.mean
    }
}

/// Training data for one output channel, kept on physical scales.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    channel: String,
    input_box: Vec<(T, T)>,
    inputs: Vec<DVector<T>>,
    outputs: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(channel: impl Into<String>, input_box: Vec<(T, T)>) -> Result<Self> {
        InputNormalizer::from_box(&input_box)?;
        Ok(Self {
            channel: channel.into(),
            input_box,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn dim(&self) -> usize {
        self.input_box.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[DVector<T>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[T] {
        &self.outputs
    }

    pub fn input_box(&self) -> &[(T, T)] {
        &self.input_box
    }

    pub fn push(&mut self, x: DVector<T>, y: T) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "dataset push",
                expected: self.dim(),
                got: x.len(),
            });
        }
        self.inputs.push(x);
        self.outputs.push(y);
        Ok(())
    }

    pub fn input_normalizer(&self) -> InputNormalizer<T> {
        InputNormalizer::from_box(&self.input_box).expect("validated at construction")
    }
}

/// Kernel hyperparameters on normalized scales.
///
/// All of these are strictly positive except `noise_variance`, which may be
/// zero; optimization works on their natural logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyperparams<T> {
    pub signal_variance: T,
    pub lengthscales: DVector<T>,
    pub noise_variance: T,
}

impl<T: Scalar> GpHyperparams<T> {
    pub fn new(signal_variance: T, lengthscales: Vec<T>, noise_variance: T) -> Result<Self> {
        if !(signal_variance > T::zero()) {
            return Err(Error::config("signal_variance must be positive"));
        }
        if lengthscales.iter().any(|l| !(*l > T::zero())) {
            return Err(Error::config("lengthscales must be positive"));
        }
        if noise_variance < T::zero() {
            return Err(Error::config("noise_variance must be non-negative"));
        }
        Ok(Self {
            signal_variance,
            lengthscales: DVector::from_vec(lengthscales),
            noise_variance,
        })
    }

    /// Unit signal variance and uniform lengthscale 0.3 on the normalized box.
    pub fn default_for_dim(dim: usize, noise_variance: T) -> Self {
        Self {
            signal_variance: T::one(),
            lengthscales: DVector::from_element(dim, T::of(0.3)),
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Log-space vector `[ln sv, ln l_1 .. ln l_d, ln nv]`.
    pub fn to_log_vec(&self) -> DVector<T> {
        let d = self.dim();
        DVector::from_fn(d + 2, |i, _| {
            if i == 0 {
                self.signal_variance.ln()
            } else if i <= d {
                self.lengthscales[i - 1].ln()
            } else {
                self.noise_variance.ln()
            }
        })
    }

    pub fn from_log_vec(theta: &DVector<T>) -> Self {
        let d = theta.len() - 2;
        Self {
            signal_variance: theta[0].exp(),
            lengthscales: DVector::from_fn(d, |i, _| theta[i + 1].exp()),
            noise_variance: theta[d + 1].exp(),
        }
    }
}

/// Posterior mean and standard deviation at one point, physical scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub mean: T,
    pub std: T,
}

/// A fitted GP for one channel.
#[derive(Clone)]
pub struct GpModel<T: Scalar> {
    channel: String,
    hyperparams: GpHyperparams<T>,
    input_norm: InputNormalizer<T>,
    output_norm: OutputNormalizer<T>,
    /// Normalized training inputs, one row per point.
    x_norm: DMatrix<T>,
    /// Standardized training targets.
    y_std: DVector<T>,
    chol: nalgebra::Cholesky<T, nalgebra::Dyn>,
    alpha: DVector<T>,
    jitter: T,
}

fn se_kernel<T: Scalar>(a: &DVector<T>, b: &DVector<T>, hp: &GpHyperparams<T>) -> T {
    let mut acc = T::zero();
    for d in 0..a.len() {
        let r = (a[d] - b[d]) / hp.lengthscales[d];
        acc += r * r;
    }
    hp.signal_variance * (-acc / T::of(2.0)).exp()
}

/// Fits an exact GP to one channel's dataset.
pub fn fit<T: Scalar>(dataset: &Dataset<T>, hp: &GpHyperparams<T>) -> Result<GpModel<T>> {
    if dataset.is_empty() {
        return Err(Error::config(format!(
            "cannot fit channel `{}` on an empty dataset",
            dataset.channel()
        )));
    }
    if hp.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "hyperparameter lengthscales",
            expected: dataset.dim(),
            got: hp.dim(),
        });
    }
    let n = dataset.len();
    let d = dataset.dim();
    let input_norm = dataset.input_normalizer();
    let output_norm = OutputNormalizer::from_samples(dataset.outputs());

    let rows: Vec<DVector<T>> = dataset.inputs().iter().map(|x| input_norm.normalize(x)).collect();
    let x_norm = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let y_std = DVector::from_iterator(
        n,
        dataset.outputs().iter().map(|&y| output_norm.normalize(y)),
    );

    let base = DMatrix::from_fn(n, n, |i, j| se_kernel(&rows[i], &rows[j], hp));
    for &jitter in &JITTER_LADDER {
        let jitter = T::of(jitter);
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += hp.noise_variance + jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(k) {
            let alpha = chol.solve(&y_std);
            return Ok(GpModel {
                channel: dataset.channel().to_string(),
                hyperparams: hp.clone(),
                input_norm,
                output_norm,
                x_norm,
                y_std,
                chol,
                alpha,
                jitter,
            });
        }
    }
    Err(Error::IllConditionedKernel {
        channel: dataset.channel().to_string(),
        max_jitter: *JITTER_LADDER.last().expect("non-empty ladder"),
    })
}

impl<T: Scalar> std::fmt::Debug for GpModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpModel")
            .field("channel", &self.channel)
            .field("n", &self.y_std.len())
            .field("dim", &self.x_norm.ncols())
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> GpModel<T> {
    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn hyperparams(&self) -> &GpHyperparams<T> {
        &self.hyperparams
    }

    pub fn len(&self) -> usize {
        self.y_std.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_std.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x_norm.ncols()
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    fn train_row(&self, i: usize) -> DVector<T> {
        self.x_norm.row(i).transpose()
    }

    /// Posterior mean and (noise-free latent) standard deviation at `x`.
    pub fn predict(&self, x: &DVector<T>) -> Result<Prediction<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "gp predict input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let u = self.input_norm.normalize(x);
        let n = self.len();
        let k_star = DVector::from_fn(n, |i, _| se_kernel(&self.train_row(i), &u, &self.hyperparams));
        let mean_std = k_star.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&k_star)
            .ok_or_else(|| Error::SingularSystem("triangular solve in predict".into()))?;
        let var = (self.hyperparams.signal_variance - v.dot(&v)).max(T::zero());
        Ok(Prediction {
            mean: self.output_norm.denormalize(mean_std),
            std: var.sqrt() * self.output_norm.scale,
        })
    }

    /// Log marginal likelihood of the standardized training targets.
    pub fn log_marginal_likelihood(&self) -> T {
        let n = self.len();
        let half = T::of(0.5);
        let mut log_det_half = T::zero();
        let l = self.chol.l_dirty();
        for i in 0..n {
            log_det_half += l[(i, i)].ln();
        }
        -half * self.y_std.dot(&self.alpha)
            - log_det_half
            - T::of(n as f64 / 2.0) * T::of(std::f64::consts::TAU).ln()
    }

    /// Gradient of the log marginal likelihood with respect to the
    /// log-hyperparameters `[ln sv, ln l_1 .. ln l_d, ln nv]`.
    pub fn lml_gradient(&self) -> DVector<T> {
        let n = self.len();
        let d = self.dim();
        let hp = &self.hyperparams;
        let half = T::of(0.5);

        let k_inv = self.chol.inverse();
        // B = alpha alpha^T - K^{-1}; grad_j = 0.5 * sum(B .* dK_j).
        let b = &self.alpha * self.alpha.transpose() - k_inv;

        let rows: Vec<DVector<T>> = (0..n).map(|i| self.train_row(i)).collect();
        let k_f = DMatrix::from_fn(n, n, |i, j| se_kernel(&rows[i], &rows[j], hp));

        let mut grad = DVector::zeros(d + 2);
        let mut g_sv = T::zero();
        for i in 0..n {
            for j in 0..n {
                g_sv += b[(i, j)] * k_f[(i, j)];
            }
        }
        grad[0] = half * g_sv;

        for dd in 0..d {
            let ls2 = hp.lengthscales[dd] * hp.lengthscales[dd];
            let mut g = T::zero();
            for i in 0..n {
                for j in 0..n {
                    let diff = rows[i][dd] - rows[j][dd];
                    g += b[(i, j)] * k_f[(i, j)] * diff * diff / ls2;
                }
            }
            grad[1 + dd] = half * g;
        }

        let mut g_nv = T::zero();
        for i in 0..n {
            g_nv += b[(i, i)];
        }
        grad[d + 1] = half * g_nv * hp.noise_variance;
        grad
    }
}

/// How a channel reads its model inputs out of the decision vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpec {
    pub name: String,
    /// Indices of the decision vector forming this channel's input point.
    pub select: Vec<usize>,
}

impl ChannelSpec {
    pub fn new(name: impl Into<String>, select: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            select,
        }
    }

    pub fn project<T: Scalar>(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.select.len(), self.select.iter().map(|&i| x[i]))
    }
}

/// Independent per-channel GPs sharing a channel registry.
#[derive(Clone)]
pub struct SurrogateBundle<T: Scalar> {
    channels: Vec<ChannelSpec>,
    models: Vec<GpModel<T>>,
}

impl<T: Scalar> SurrogateBundle<T> {
    pub fn new(channels: Vec<ChannelSpec>, models: Vec<GpModel<T>>) -> Result<Self> {
        if channels.len() != models.len() {
            return Err(Error::config("channel registry and model count differ"));
        }
        for (spec, model) in channels.iter().zip(&models) {
            if spec.select.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    context: "bundle channel input dims",
                    expected: spec.select.len(),
                    got: model.dim(),
                });
            }
        }
        if let Some(first) = models.first() {
            if models.iter().any(|m| m.dim() != first.dim()) {
                return Err(Error::config("bundle models must share one input dimension"));
            }
        }
        Ok(Self { channels, models })
    }

    pub fn output_count(&self) -> usize {
        self.models.len()
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn models(&self) -> &[GpModel<T>] {
        &self.models
    }

    pub fn replace_model(&mut self, idx: usize, model: GpModel<T>) {
        self.models[idx] = model;
    }

    /// Channel-wise posterior means and standard deviations at decision `x`.
    pub fn predict(&self, x: &DVector<T>) -> Result<(DVector<T>, DVector<T>)> {
        let m = self.output_count();
        let mut mu = DVector::zeros(m);
        let mut sigma = DVector::zeros(m);
        for (i, (spec, model)) in self.channels.iter().zip(&self.models).enumerate() {
            let p = model.predict(&spec.project(x))?;
            mu[i] = p.mean;
            sigma[i] = p.std;
        }
        Ok((mu, sigma))
    }
}
