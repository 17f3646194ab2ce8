//! 1-D two-output ground truth used by the small demonstration scenario.
//!
//! The two outputs satisfy `p1 + p2 = 140 x` identically, which is exactly
//! the balance the reconciliation layer is told about.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Decision domain.
pub const DOMAIN: (f64, f64) = (0.0, 2.0);

/// `p1(x) = 120 sin(0.6 x) + 10 cos(5 x) - 10`.
pub fn true_p1<T: Scalar>(x: T) -> T {
    T::of(120.0) * (T::of(0.6) * x).sin() + T::of(10.0) * (T::of(5.0) * x).cos() - T::of(10.0)
}

/// `p2(x) = 140 x - p1(x)`.
pub fn true_p2<T: Scalar>(x: T) -> T {
    T::of(140.0) * x - true_p1(x)
}

/// Stateful toy plant: evaluates the true maps, optionally with seeded
/// Gaussian observation noise (noiseless by default).
#[derive(Debug, Clone)]
pub struct ToyPlant<T> {
    noise_std: [T; 2],
    rng: ChaCha8Rng,
}

impl<T: Scalar> ToyPlant<T> {
    pub fn noiseless() -> Self {
        Self::new([T::zero(), T::zero()], 0)
    }

    pub fn new(noise_std: [T; 2], seed: u64) -> Self {
        Self {
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Measures both outputs at `x`.
    pub fn observe(&mut self, x: T) -> Result<(T, T)> {
        let xf = x.to_f64_s();
        if !(DOMAIN.0..=DOMAIN.1).contains(&xf) {
            return Err(Error::Domain(format!(
                "toy plant input {xf} outside [{}, {}]",
                DOMAIN.0, DOMAIN.1
            )));
        }
        let mut p = [true_p1(x), true_p2(x)];
        for (value, std) in p.iter_mut().zip(self.noise_std) {
            if std > T::zero() {
                let noise: f64 = Normal::new(0.0, std.to_f64_s())
                    .expect("valid noise std")
                    .sample(&mut self.rng);
                *value += T::of(noise);
            }
        }
        Ok((p[0], p[1]))
    }

    /// Both outputs as a vector, for bundle-shaped consumers.
    pub fn observe_vec(&mut self, x: &DVector<T>) -> Result<DVector<T>> {
        let (p1, p2) = self.observe(x[0])?;
        Ok(DVector::from_vec(vec![p1, p2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observations_match_the_closed_forms() {
        let mut plant = ToyPlant::<f64>::noiseless();
        let (p1, p2) = plant.observe(0.2).unwrap();
        assert!((p1 - 9.768_487_933_351_721_6).abs() < 1e-12);
        assert!((p2 - 18.231_512_066_648_278).abs() < 1e-12);
    }

    #[test]
    fn origin_maps_to_zero_outputs() {
        let mut plant = ToyPlant::<f64>::noiseless();
        let (p1, p2) = plant.observe(0.0).unwrap();
        assert_eq!(p1, 0.0);
        assert_eq!(p2, 0.0);
    }

    #[test]
    fn balance_identity_holds_exactly_when_noiseless() {
        let mut plant = ToyPlant::<f64>::noiseless();
        for i in 0..=40 {
            let x = 2.0 * i as f64 / 40.0;
            let (p1, p2) = plant.observe(x).unwrap();
            assert!(
                (p1 + p2 - 140.0 * x).abs() < 1e-12,
                "balance broken at x={x}"
            );
        }
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let mut plant = ToyPlant::<f64>::noiseless();
        assert!(plant.observe(-0.01).is_err());
        assert!(plant.observe(2.01).is_err());
    }

    #[test]
    fn noise_is_seeded_and_reproducible() {
        let mut a = ToyPlant::<f64>::new([0.5, 0.5], 7);
        let mut b = ToyPlant::<f64>::new([0.5, 0.5], 7);
        assert_eq!(a.observe(1.0).unwrap(), b.observe(1.0).unwrap());
        let (p1, _) = ToyPlant::<f64>::new([0.5, 0.5], 8).observe(1.0).unwrap();
        assert_ne!(p1, a.observe(1.0).unwrap().0);
    }
}
