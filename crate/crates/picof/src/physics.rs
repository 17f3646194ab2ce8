//! Physics systems: q residual equations over the decision vector and the
//! corrected outputs, with Jacobians with respect to the outputs.
//!
//! Residuals are evaluated on physical scales. Systems declared affine in
//! the outputs are verified by a randomized check at construction, which
//! unlocks the closed-form inner solve.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative step used by the central-difference Jacobian fallback.
const FD_STEP: f64 = 1e-6;

/// Whether the residuals are affine in the corrected outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearity {
    AffineInOutputs,
    General,
}

type ResidualFn<T> = dyn Fn(&DVector<T>, &DVector<T>) -> DVector<T> + Send + Sync;
type JacobianFn<T> = dyn Fn(&DVector<T>, &DVector<T>) -> DMatrix<T> + Send + Sync;

/// A system of `q` residual equations `F(x, p) = 0`.
#[derive(Clone)]
pub struct PhysicsSystem<T> {
    name: String,
    input_count: usize,
    residual_count: usize,
    output_count: usize,
    residual_fn: Arc<ResidualFn<T>>,
    jacobian_fn: Option<Arc<JacobianFn<T>>>,
    linearity: Linearity,
}

impl<T> std::fmt::Debug for PhysicsSystem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhysicsSystem")
            .field("name", &self.name)
            .field("inputs", &self.input_count)
            .field("residuals", &self.residual_count)
            .field("outputs", &self.output_count)
            .field("linearity", &self.linearity)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> PhysicsSystem<T> {
    /// Builds a system and, when declared affine, verifies the declaration
    /// with a seeded randomized check (`r(x, p+d) - r(x, p) = J d` to 1e-10).
    pub fn new(
        name: impl Into<String>,
        input_count: usize,
        residual_count: usize,
        output_count: usize,
        residual_fn: impl Fn(&DVector<T>, &DVector<T>) -> DVector<T> + Send + Sync + 'static,
        jacobian_fn: Option<Arc<JacobianFn<T>>>,
        linearity: Linearity,
    ) -> Result<Self> {
        let sys = Self {
            name: name.into(),
            input_count,
            residual_count,
            output_count,
            residual_fn: Arc::new(residual_fn),
            jacobian_fn,
            linearity,
        };
        if linearity == Linearity::AffineInOutputs {
            sys.verify_affine()?;
        }
        Ok(sys)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_count(&self) -> usize {
        self.input_count
    }

    pub fn residual_count(&self) -> usize {
        self.residual_count
    }

    pub fn output_count(&self) -> usize {
        self.output_count
    }

    pub fn linearity(&self) -> Linearity {
        self.linearity
    }

    /// True when the system has at least as many equations as outputs; such
    /// systems are allowed but worth surfacing in diagnostics.
    pub fn is_overdetermined(&self) -> bool {
        self.residual_count >= self.output_count
    }

    /// Evaluates the residual vector, checking shapes and finiteness.
    pub fn residuals(&self, x: &DVector<T>, outputs: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.input_count {
            return Err(Error::DimensionMismatch {
                context: "physics inputs",
                expected: self.input_count,
                got: x.len(),
            });
        }
        if outputs.len() != self.output_count {
            return Err(Error::DimensionMismatch {
                context: "physics outputs",
                expected: self.output_count,
                got: outputs.len(),
            });
        }
        let r = (self.residual_fn)(x, outputs);
        if r.len() != self.residual_count {
            return Err(Error::DimensionMismatch {
                context: "physics residual count",
                expected: self.residual_count,
                got: r.len(),
            });
        }
        for (i, v) in r.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteResidual { index: i });
            }
        }
        Ok(r)
    }

    /// Jacobian of the residuals with respect to the outputs: analytic when
    /// supplied, otherwise central finite differences with a per-component
    /// relative step.
    pub fn jacobian_wrt_outputs(&self, x: &DVector<T>, outputs: &DVector<T>) -> Result<DMatrix<T>> {
        let jac = match &self.jacobian_fn {
            Some(f) => f(x, outputs),
            None => self.fd_jacobian(x, outputs)?,
        };
        if jac.nrows() != self.residual_count || jac.ncols() != self.output_count {
            return Err(Error::DimensionMismatch {
                context: "physics jacobian shape",
                expected: self.residual_count * self.output_count,
                got: jac.nrows() * jac.ncols(),
            });
        }
        for i in 0..jac.nrows() {
            for j in 0..jac.ncols() {
                if !jac[(i, j)].is_finite() {
                    return Err(Error::NonFiniteJacobian { row: i, col: j });
                }
            }
        }
        Ok(jac)
    }

    fn fd_jacobian(&self, x: &DVector<T>, outputs: &DVector<T>) -> Result<DMatrix<T>> {
        let m = self.output_count;
        let q = self.residual_count;
        let mut jac = DMatrix::zeros(q, m);
        for j in 0..m {
            let step = T::of(FD_STEP) * outputs[j].abs().max(T::one());
            let mut hi = outputs.clone();
            hi[j] += step;
            let mut lo = outputs.clone();
            lo[j] -= step;
            let r_hi = self.residuals(x, &hi)?;
            let r_lo = self.residuals(x, &lo)?;
            for i in 0..q {
                jac[(i, j)] = (r_hi[i] - r_lo[i]) / (step + step);
            }
        }
        Ok(jac)
    }

    /// Randomized affinity check: exact superposition at several scales.
    fn verify_affine(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xAFF1E);
        for &scale in &[1.0, 100.0] {
            for _ in 0..8 {
                let x = DVector::from_fn(self.input_count, |_, _| {
                    T::of(rng.gen::<f64>() * 2.0 - 1.0)
                });
                let p = DVector::from_fn(self.output_count, |_, _| {
                    T::of((rng.gen::<f64>() * 2.0 - 1.0) * scale)
                });
                let delta = DVector::from_fn(self.output_count, |_, _| {
                    T::of((rng.gen::<f64>() * 2.0 - 1.0) * scale)
                });
                let shifted = &p + &delta;
                let base = self.residuals(&x, &p)?;
                let moved = self.residuals(&x, &shifted)?;
                let jac = self.jacobian_wrt_outputs(&x, &p)?;
                let predicted = &base + &jac * &delta;
                let tol = T::of(1e-10) * T::of(scale.max(1.0));
                for i in 0..self.residual_count {
                    if (moved[i] - predicted[i]).abs() > tol {
                        return Err(Error::config(format!(
                            "system `{}` declared affine but superposition fails at equation {i}",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Built-in systems, registered by name.
pub mod builtin {
    use super::*;

    pub const TOY_BALANCE: &str = "toy-balance";
    pub const FC_ENERGY_BALANCE: &str = "fc-energy-balance";

    /// Toy mass balance: `140 x - p1 - p2 = 0`.
    pub fn toy_balance<T: Scalar>() -> PhysicsSystem<T> {
        let jac = Arc::new(|_x: &DVector<T>, _p: &DVector<T>| {
            DMatrix::from_row_slice(1, 2, &[-T::one(), -T::one()])
        });
        PhysicsSystem::new(
            TOY_BALANCE,
            1,
            1,
            2,
            |x: &DVector<T>, p: &DVector<T>| {
                DVector::from_element(1, T::of(140.0) * x[0] - p[0] - p[1])
            },
            Some(jac),
            Linearity::AffineInOutputs,
        )
        .expect("toy balance is affine")
    }

    /// Per-stack energy balance: `p_h[i] * dH - p_th[i] - x[i] = 0`.
    ///
    /// Outputs are ordered as `stacks` hydrogen rates followed by `stacks`
    /// thermal loads.
    pub fn fc_energy_balance<T: Scalar>(stacks: usize, reaction_enthalpy: T) -> PhysicsSystem<T> {
        let dh = reaction_enthalpy;
        let jac = Arc::new(move |_x: &DVector<T>, p: &DVector<T>| {
            let stacks = p.len() / 2;
            let mut j = DMatrix::zeros(stacks, 2 * stacks);
            for i in 0..stacks {
                j[(i, i)] = dh;
                j[(i, stacks + i)] = -T::one();
            }
            j
        });
        PhysicsSystem::new(
            FC_ENERGY_BALANCE,
            stacks,
            stacks,
            2 * stacks,
            move |x: &DVector<T>, p: &DVector<T>| {
                let stacks = p.len() / 2;
                DVector::from_fn(stacks, |i, _| p[i] * dh - p[stacks + i] - x[i])
            },
            Some(jac),
            Linearity::AffineInOutputs,
        )
        .expect("energy balance is affine")
    }

    /// Looks up a built-in system by registry name.
    pub fn by_name<T: Scalar>(
        name: &str,
        stacks: usize,
        reaction_enthalpy: T,
    ) -> Result<PhysicsSystem<T>> {
        match name {
            TOY_BALANCE => Ok(toy_balance()),
            FC_ENERGY_BALANCE => Ok(fc_energy_balance(stacks, reaction_enthalpy)),
            other => Err(Error::config(format!("unknown physics system `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn toy_p1(x: f64) -> f64 {
        120.0 * (0.6 * x).sin() + 10.0 * (5.0 * x).cos() - 10.0
    }

    #[test]
    fn toy_residual_is_zero_at_true_values() {
        let sys = builtin::toy_balance::<f64>();
        let p1 = toy_p1(0.2);
        let p2 = 140.0 * 0.2 - p1;
        let r = sys.residuals(&dvector![0.2], &dvector![p1, p2]).unwrap();
        assert!(r[0].abs() < 1e-12);
    }

    #[test]
    fn toy_residual_at_zero_outputs_is_28() {
        let sys = builtin::toy_balance::<f64>();
        let r = sys.residuals(&dvector![0.2], &dvector![0.0, 0.0]).unwrap();
        assert!((r[0] - 28.0).abs() < 1e-12);
    }

    #[test]
    fn toy_jacobian_is_minus_ones() {
        let sys = builtin::toy_balance::<f64>();
        let j = sys
            .jacobian_wrt_outputs(&dvector![0.7], &dvector![3.0, -5.0])
            .unwrap();
        assert_eq!(j[(0, 0)], -1.0);
        assert_eq!(j[(0, 1)], -1.0);
    }

    #[test]
    fn fc_balance_zero_when_thermal_matches_enthalpy() {
        // p_th = p_h * dH - x makes the residual vanish by construction.
        let dh = 285.8;
        let sys = builtin::fc_energy_balance::<f64>(1, dh);
        let x = dvector![50.0];
        let p_h = 0.35;
        let p_th = p_h * dh - x[0];
        let r = sys.residuals(&x, &dvector![p_h, p_th]).unwrap();
        assert!(r[0].abs() < 1e-12);
        let j = sys.jacobian_wrt_outputs(&x, &dvector![p_h, p_th]).unwrap();
        assert_eq!(j[(0, 0)], dh);
        assert_eq!(j[(0, 1)], -1.0);
    }

    #[test]
    fn finite_difference_matches_analytic_on_quadratic_residual() {
        let residual = |_x: &DVector<f64>, p: &DVector<f64>| {
            dvector![p[0] * p[0] - p[1], 2.0 * p[0] * p[1] + 0.5]
        };
        let analytic = Arc::new(|_x: &DVector<f64>, p: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[2.0 * p[0], -1.0, 2.0 * p[1], 2.0 * p[0]])
        });
        let with_fd =
            PhysicsSystem::new("quad", 1, 2, 2, residual, None, Linearity::General).unwrap();
        let with_analytic =
            PhysicsSystem::new("quad", 1, 2, 2, residual, Some(analytic), Linearity::General)
                .unwrap();
        let x = dvector![0.0];
        let p = dvector![0.8, -1.3];
        let fd = with_fd.jacobian_wrt_outputs(&x, &p).unwrap();
        let exact = with_analytic.jacobian_wrt_outputs(&x, &p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (fd[(i, j)] - exact[(i, j)]).abs() <= 1e-5,
                    "fd {} vs analytic {}",
                    fd[(i, j)],
                    exact[(i, j)]
                );
            }
        }
    }

    #[test]
    fn affine_declaration_is_verified() {
        // A quadratic residual wrongly declared affine is rejected.
        let err = PhysicsSystem::new(
            "liar",
            1,
            1,
            2,
            |_x: &DVector<f64>, p: &DVector<f64>| dvector![p[0] * p[0] - p[1]],
            None,
            Linearity::AffineInOutputs,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn affine_superposition_holds_for_builtin_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sys = builtin::fc_energy_balance::<f64>(5, 285.8);
        for _ in 0..20 {
            let x = DVector::from_fn(5, |_, _| rng.gen::<f64>() * 100.0);
            let p = DVector::from_fn(10, |_, _| rng.gen::<f64>() * 50.0);
            let d = DVector::from_fn(10, |_, _| rng.gen::<f64>() * 10.0 - 5.0);
            let lhs = sys.residuals(&x, &(&p + &d)).unwrap() - sys.residuals(&x, &p).unwrap();
            let rhs = sys.jacobian_wrt_outputs(&x, &p).unwrap() * &d;
            for i in 0..5 {
                assert!((lhs[i] - rhs[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn non_finite_residual_reports_index() {
        let sys = PhysicsSystem::new(
            "nan",
            1,
            2,
            1,
            |_x: &DVector<f64>, p: &DVector<f64>| dvector![p[0], (p[0] - 1.0).ln()],
            None,
            Linearity::General,
        )
        .unwrap();
        let err = sys.residuals(&dvector![0.0], &dvector![0.5]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteResidual { index: 1 }));
    }

    #[test]
    fn registry_resolves_builtin_names() {
        assert!(builtin::by_name::<f64>(builtin::TOY_BALANCE, 0, 0.0).is_ok());
        assert!(builtin::by_name::<f64>(builtin::FC_ENERGY_BALANCE, 5, 285.8).is_ok());
        assert!(builtin::by_name::<f64>("nope", 0, 0.0).is_err());
    }
}
