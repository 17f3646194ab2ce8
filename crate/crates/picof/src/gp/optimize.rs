//! Marginal-likelihood hyperparameter selection.
//!
//! Multi-start Nelder–Mead over `[ln sv, ln l_1 .. ln l_d]` in log-space
//! boxes; the observation noise stays fixed at its configured value. The
//! incumbent hyperparameters always participate as a candidate, so the
//! selected point never has a lower marginal likelihood than the input.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fit, Dataset, GpHyperparams};
use crate::error::{Error, Result};
use crate::outer::nelder_mead::{self, NmOptions};
use crate::scalar::Scalar;

/// Search configuration for [`optimize_hyperparams`].
#[derive(Debug, Clone)]
pub struct OptimizeOptions<T> {
    /// Total starts: the incumbent plus `restarts - 1` random draws.
    pub restarts: usize,
    /// Lengthscale search bounds on the normalized input box.
    pub lengthscale_bounds: (T, T),
    /// Signal-variance search bounds on the standardized output scale.
    pub signal_variance_bounds: (T, T),
    /// Simplex iteration budget per start.
    pub max_iters: usize,
}

impl<T: Scalar> Default for OptimizeOptions<T> {
    fn default() -> Self {
        Self {
            restarts: 4,
            lengthscale_bounds: (T::of(1e-2), T::of(2.0)),
            signal_variance_bounds: (T::of(1e-4), T::of(1e4)),
            max_iters: 200,
        }
    }
}

fn clamp_theta<T: Scalar>(theta: &DVector<T>, bounds: &[(T, T)]) -> DVector<T> {
    DVector::from_fn(theta.len(), |i, _| nalgebra::clamp(theta[i], bounds[i].0, bounds[i].1))
}

/// Selects hyperparameters maximizing the log marginal likelihood.
///
/// Deterministic for a fixed `(dataset, init, opts, seed)` tuple. Noise is
/// carried over from `init` unchanged. Errors if every candidate fails to
/// factorize.
pub fn optimize_hyperparams<T: Scalar>(
    dataset: &Dataset<T>,
    init: &GpHyperparams<T>,
    opts: &OptimizeOptions<T>,
    seed: u64,
) -> Result<GpHyperparams<T>> {
    if dataset.len() < 2 {
        return Err(Error::config(format!(
            "hyperparameter optimization needs at least 2 points, channel `{}` has {}",
            dataset.channel(),
            dataset.len()
        )));
    }
    let d = dataset.dim();
    let noise = init.noise_variance;

    // Search space: [ln sv, ln l_1 .. ln l_d].
    let mut bounds = Vec::with_capacity(d + 1);
    bounds.push((
        opts.signal_variance_bounds.0.ln(),
        opts.signal_variance_bounds.1.ln(),
    ));
    for _ in 0..d {
        bounds.push((opts.lengthscale_bounds.0.ln(), opts.lengthscale_bounds.1.ln()));
    }

    let hp_of = |theta: &DVector<T>| GpHyperparams {
        signal_variance: theta[0].exp(),
        lengthscales: DVector::from_fn(d, |i, _| theta[i + 1].exp()),
        noise_variance: noise,
    };
    let nlml = |theta: &DVector<T>| match fit(dataset, &hp_of(theta)) {
        Ok(model) => -model.log_marginal_likelihood(),
        Err(_) => T::of(1e50),
    };

    let incumbent_theta = DVector::from_fn(d + 1, |i, _| {
        if i == 0 {
            init.signal_variance.ln()
        } else {
            init.lengthscales[i - 1].ln()
        }
    });

    // Candidate list: raw incumbent first, then one polished run per start.
    let mut candidates: Vec<(DVector<T>, T)> = vec![(incumbent_theta.clone(), nlml(&incumbent_theta))];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nm_opts = NmOptions {
        max_iters: opts.max_iters,
        ..NmOptions::default()
    };
    for restart in 0..opts.restarts.max(1) {
        let start = if restart == 0 {
            clamp_theta(&incumbent_theta, &bounds)
        } else {
            DVector::from_fn(d + 1, |i, _| {
                let (lo, hi) = bounds[i];
                lo + (hi - lo) * T::of(rng.gen::<f64>())
            })
        };
        let res = nelder_mead::minimize(&nlml, &start, &bounds, &nm_opts);
        candidates.push((res.x, res.value));
    }

    let best = candidates
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite nlml"))
        .expect("at least one candidate");
    if best.1 >= T::of(1e50) {
        // Surface the underlying factorization error.
        fit(dataset, &hp_of(&best.0))?;
        return Err(Error::IllConditionedKernel {
            channel: dataset.channel().to_string(),
            max_jitter: 1e-6,
        });
    }
    Ok(hp_of(&best.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn synth_dataset(seed: u64, n: usize, lengthscale: f64) -> Dataset<f64> {
        // Draw y ~ N(0, K(theta_true)) on a fixed grid in [0, 1].
        let mut data = Dataset::new("synth", vec![(0.0, 1.0)]).unwrap();
        let hp = GpHyperparams::new(1.0, vec![lengthscale], 1e-6).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let r = (xs[i] - xs[j]) / hp.lengthscales[0];
            hp.signal_variance * (-0.5 * r * r).exp() + if i == j { 1e-8 } else { 0.0 }
        });
        let chol = nalgebra::Cholesky::new(k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = nalgebra::DVector::from_fn(n, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let y = chol.l() * z;
        for (i, &x) in xs.iter().enumerate() {
            data.push(dvector![x], y[i]).unwrap();
        }
        data
    }

    #[test]
    fn needs_two_points() {
        let mut data = Dataset::new("tiny", vec![(0.0, 1.0)]).unwrap();
        data.push(dvector![0.3], 1.0).unwrap();
        let init = GpHyperparams::default_for_dim(1, 1e-6);
        assert!(optimize_hyperparams(&data, &init, &OptimizeOptions::default(), 0).is_err());
    }

    #[test]
    fn never_worse_than_incumbent() {
        let data = synth_dataset(3, 20, 0.2);
        let init = GpHyperparams::new(0.5, vec![0.05], 1e-6).unwrap();
        let opts = OptimizeOptions::default();
        let tuned = optimize_hyperparams(&data, &init, &opts, 42).unwrap();
        let lml_init = fit(&data, &init).unwrap().log_marginal_likelihood();
        let lml_tuned = fit(&data, &tuned).unwrap().log_marginal_likelihood();
        assert!(lml_tuned >= lml_init - 1e-9, "{lml_tuned} < {lml_init}");
        assert_eq!(tuned.noise_variance, 1e-6);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = synth_dataset(7, 16, 0.3);
        let init = GpHyperparams::default_for_dim(1, 1e-6);
        let opts = OptimizeOptions::default();
        let a = optimize_hyperparams(&data, &init, &opts, 9).unwrap();
        let b = optimize_hyperparams(&data, &init, &opts, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recovers_lengthscale_within_factor_three() {
        let true_ls = 0.2;
        let data = synth_dataset(11, 40, true_ls);
        let init = GpHyperparams::new(1.0, vec![0.9], 1e-4).unwrap();
        let tuned = optimize_hyperparams(&data, &init, &OptimizeOptions::default(), 5).unwrap();
        let recovered = tuned.lengthscales[0];
        assert!(
            recovered > true_ls / 3.0 && recovered < true_ls * 3.0,
            "recovered lengthscale {recovered} not within factor 3 of {true_ls}"
        );
    }
}
