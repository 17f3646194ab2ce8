//! The inner reconciliation problem: find correction factors `c*` minimizing
//!
//! `h(x, c) = sum_i F_i^2(x, p~(x, c)) + sum_j w_j * pen_j(c)`
//!
//! where `p~` applies additive or multiplicative corrections to the surrogate
//! means and `pen` is a weighted quadratic pulling `c` toward the
//! no-correction element. Affine systems get a closed-form regularized
//! least-squares solve; general systems run Gauss–Newton with Armijo
//! backtracking, started at the identity element so descent guarantees
//! `h(c*) <= h(identity)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::SurrogateBundle;
use crate::physics::{Linearity, PhysicsSystem};
use crate::scalar::Scalar;

/// How corrections enter the predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionMode {
    /// `p~ = mu + c`; the identity element is `c = 0`.
    Additive,
    /// `p~ = c .* mu`; the identity element is `c = 1`.
    Multiplicative,
}

impl CorrectionMode {
    pub fn identity_element<T: Scalar>(&self, m: usize) -> DVector<T> {
        match self {
            CorrectionMode::Additive => DVector::zeros(m),
            CorrectionMode::Multiplicative => DVector::from_element(m, T::one()),
        }
    }

    pub fn corrected<T: Scalar>(&self, mu: &DVector<T>, c: &DVector<T>) -> DVector<T> {
        match self {
            CorrectionMode::Additive => mu + c,
            CorrectionMode::Multiplicative => mu.component_mul(c),
        }
    }

    /// Diagonal of `d p~ / d c`.
    fn output_sensitivity<T: Scalar>(&self, mu: &DVector<T>) -> DVector<T> {
        match self {
            CorrectionMode::Additive => DVector::from_element(mu.len(), T::one()),
            CorrectionMode::Multiplicative => mu.clone(),
        }
    }
}

/// Where the quadratic penalty is centered for multiplicative corrections.
///
/// `Identity` penalizes deviation from the no-correction element `c = 1`;
/// `Origin` penalizes `c` itself, which pulls multiplicative corrections
/// toward annihilating the prediction and forfeits the residual
/// non-increase guarantee. Additive corrections are unaffected (both centers
/// coincide at zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyCenter {
    #[default]
    Identity,
    Origin,
}

/// Weight construction from the predictive standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `w = k`.
    Constant,
    /// `w = k .* sigma`.
    SigmaScaled,
    /// `w = k ./ max(sigma, floor)`.
    SigmaInverse,
}

/// Per-channel weight policy for the regularization term.
#[derive(Debug, Clone)]
pub struct WeightPolicy<T> {
    pub mode: WeightMode,
    pub coefficients: DVector<T>,
    pub floor: T,
}

impl<T: Scalar> WeightPolicy<T> {
    pub fn new(mode: WeightMode, coefficients: Vec<T>) -> Result<Self> {
        let policy = Self {
            mode,
            coefficients: DVector::from_vec(coefficients),
            floor: T::of(1e-8),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.iter().any(|k| !(*k > T::zero())) {
            return Err(Error::config("weight coefficients must be positive"));
        }
        if !(self.floor > T::zero()) {
            return Err(Error::config("weight floor must be positive"));
        }
        Ok(())
    }
}

/// Evaluates a weight policy at the given sigmas, clamping at the floor.
pub fn compute_weights<T: Scalar>(policy: &WeightPolicy<T>, sigma: &DVector<T>) -> Result<DVector<T>> {
    policy.validate()?;
    if sigma.len() != policy.coefficients.len() {
        return Err(Error::DimensionMismatch {
            context: "weight policy sigma",
            expected: policy.coefficients.len(),
            got: sigma.len(),
        });
    }
    let k = &policy.coefficients;
    let floor = policy.floor;
    let raw = match policy.mode {
        WeightMode::Constant => k.clone(),
        WeightMode::SigmaScaled => k.component_mul(sigma),
        WeightMode::SigmaInverse => {
            DVector::from_fn(k.len(), |i, _| k[i] / sigma[i].max(floor))
        }
    };
    Ok(raw.map(|w| w.max(floor)))
}

/// Gauss–Newton controls for the general (non-affine) inner solve.
#[derive(Debug, Clone)]
pub struct GnOptions<T> {
    pub max_iter: usize,
    pub tol_grad: T,
    pub tol_step: T,
    pub armijo_factor: T,
    pub armijo_c1: T,
}

impl<T: Scalar> Default for GnOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol_grad: T::of(1e-8),
            tol_step: T::of(1e-10),
            armijo_factor: T::of(0.5),
            armijo_c1: T::of(1e-4),
        }
    }
}

/// Options shared by both inner solvers.
#[derive(Debug, Clone)]
pub struct ReconcileOptions<T: Scalar> {
    pub penalty_center: PenaltyCenter,
    pub gn: GnOptions<T>,
}

impl<T: Scalar> Default for ReconcileOptions<T> {
    fn default() -> Self {
        Self {
            penalty_center: PenaltyCenter::default(),
            gn: GnOptions::default(),
        }
    }
}

/// Outcome of one inner solve.
#[derive(Debug, Clone)]
pub struct ReconciliationResult<T> {
    /// Correction factors.
    pub c_star: DVector<T>,
    /// Corrected predictions on the physical scale.
    pub p_tilde: DVector<T>,
    /// Residuals at the identity element.
    pub residual_before: DVector<T>,
    /// Residuals at `c_star`.
    pub residual_after: DVector<T>,
    /// Inner objective at `c_star`.
    pub h_value: T,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the inner gradient at `c_star`.
    pub gradient_norm: T,
}

impl<T: Scalar> ReconciliationResult<T> {
    pub fn residual_sq_before(&self) -> T {
        self.residual_before.norm_squared()
    }

    pub fn residual_sq_after(&self) -> T {
        self.residual_after.norm_squared()
    }
}

struct InnerProblem<'a, T: Scalar> {
    x: &'a DVector<T>,
    mu: &'a DVector<T>,
    sys: &'a PhysicsSystem<T>,
    mode: CorrectionMode,
    weights: &'a DVector<T>,
    /// Penalty reference point in c-space.
    c_pen: DVector<T>,
}

impl<'a, T: Scalar> InnerProblem<'a, T> {
    fn new(
        x: &'a DVector<T>,
        mu: &'a DVector<T>,
        sys: &'a PhysicsSystem<T>,
        mode: CorrectionMode,
        weights: &'a DVector<T>,
        opts: &ReconcileOptions<T>,
    ) -> Result<Self> {
        let m = sys.output_count();
        if mu.len() != m {
            return Err(Error::DimensionMismatch {
                context: "reconcile outputs",
                expected: m,
                got: mu.len(),
            });
        }
        if weights.len() != m {
            return Err(Error::DimensionMismatch {
                context: "reconcile weights",
                expected: m,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w > T::zero())) {
            return Err(Error::config("reconcile weights must be positive"));
        }
        let c_pen = match (mode, opts.penalty_center) {
            (CorrectionMode::Additive, _) => DVector::zeros(m),
            (CorrectionMode::Multiplicative, PenaltyCenter::Identity) => {
                DVector::from_element(m, T::one())
            }
            (CorrectionMode::Multiplicative, PenaltyCenter::Origin) => DVector::zeros(m),
        };
        Ok(Self {
            x,
            mu,
            sys,
            mode,
            weights,
            c_pen,
        })
    }

    fn penalty(&self, c: &DVector<T>) -> T {
        let mut acc = T::zero();
        for j in 0..c.len() {
            let d = c[j] - self.c_pen[j];
            acc += self.weights[j] * d * d;
        }
        acc
    }

    fn evaluate(&self, c: &DVector<T>) -> Result<(DVector<T>, DVector<T>, T)> {
        let p = self.mode.corrected(self.mu, c);
        let r = self.sys.residuals(self.x, &p)?;
        let h = r.norm_squared() + self.penalty(c);
        Ok((p, r, h))
    }

    /// `J~ = dF/dp * diag(dp/dc)` at the given corrected outputs.
    fn scaled_jacobian(&self, p: &DVector<T>) -> Result<DMatrix<T>> {
        let mut jac = self.sys.jacobian_wrt_outputs(self.x, p)?;
        let sens = self.mode.output_sensitivity(self.mu);
        for j in 0..jac.ncols() {
            let mut col = jac.column_mut(j);
            col *= sens[j];
        }
        Ok(jac)
    }

    /// `grad h = 2 (J~^T r + W (c - c_pen))`.
    fn gradient(&self, c: &DVector<T>, r: &DVector<T>, jac: &DMatrix<T>) -> DVector<T> {
        let mut g = jac.transpose() * r;
        for j in 0..c.len() {
            g[j] += self.weights[j] * (c[j] - self.c_pen[j]);
        }
        g * T::of(2.0)
    }

    /// Solves `(J~^T J~ + W) step = -(J~^T r + W (c - c_pen))`.
    fn newton_step(&self, c: &DVector<T>, r: &DVector<T>, jac: &DMatrix<T>) -> Result<DVector<T>> {
        let m = c.len();
        let mut lhs = jac.transpose() * jac;
        let mut rhs = -(jac.transpose() * r);
        for j in 0..m {
            lhs[(j, j)] += self.weights[j];
            rhs[j] -= self.weights[j] * (c[j] - self.c_pen[j]);
        }
        let chol = nalgebra::Cholesky::new(lhs).ok_or_else(|| {
            Error::SingularSystem(format!(
                "regularized normal equations for `{}` are not positive definite",
                self.sys.name()
            ))
        })?;
        Ok(chol.solve(&rhs))
    }
}

/// Closed-form solve for systems affine in the outputs.
pub fn solve_affine<T: Scalar>(
    x: &DVector<T>,
    mu: &DVector<T>,
    sys: &PhysicsSystem<T>,
    mode: CorrectionMode,
    weights: &DVector<T>,
    opts: &ReconcileOptions<T>,
) -> Result<ReconciliationResult<T>> {
    if sys.linearity() != Linearity::AffineInOutputs {
        return Err(Error::config(format!(
            "system `{}` is not declared affine; use the Gauss-Newton solver",
            sys.name()
        )));
    }
    let problem = InnerProblem::new(x, mu, sys, mode, weights, opts)?;
    let c0 = mode.identity_element(mu.len());
    let (p0, r0, _) = problem.evaluate(&c0)?;
    let jac = problem.scaled_jacobian(&p0)?;
    let step = problem.newton_step(&c0, &r0, &jac)?;
    let c_star = &c0 + step;
    let (p_star, r_star, h) = problem.evaluate(&c_star)?;
    let grad = problem.gradient(&c_star, &r_star, &jac);
    Ok(ReconciliationResult {
        c_star,
        p_tilde: p_star,
        residual_before: r0,
        residual_after: r_star,
        h_value: h,
        iterations: 1,
        converged: true,
        gradient_norm: grad.amax(),
    })
}

/// Gauss–Newton with Armijo backtracking, started at the identity element.
pub fn solve_gauss_newton<T: Scalar>(
    x: &DVector<T>,
    mu: &DVector<T>,
    sys: &PhysicsSystem<T>,
    mode: CorrectionMode,
    weights: &DVector<T>,
    opts: &ReconcileOptions<T>,
) -> Result<ReconciliationResult<T>> {
    let problem = InnerProblem::new(x, mu, sys, mode, weights, opts)?;
    let mut c = mode.identity_element(mu.len());
    let (mut p, mut r, mut h) = problem.evaluate(&c)?;
    let r_before = r.clone();

    let mut iterations = 0;
    let mut converged = false;
    let mut gradient_norm;
    loop {
        let jac = problem.scaled_jacobian(&p)?;
        let grad = problem.gradient(&c, &r, &jac);
        gradient_norm = grad.amax();
        if gradient_norm <= opts.gn.tol_grad {
            converged = true;
            break;
        }
        if iterations >= opts.gn.max_iter {
            break;
        }
        iterations += 1;

        let step = problem.newton_step(&c, &r, &jac)?;
        let slope = grad.dot(&step);
        let mut t = T::one();
        let mut accepted = None;
        loop {
            let cand = &c + &step * t;
            let (pc, rc, hc) = problem.evaluate(&cand)?;
            if hc <= h + opts.gn.armijo_c1 * t * slope {
                accepted = Some((cand, pc, rc, hc));
                break;
            }
            t *= opts.gn.armijo_factor;
            if t < T::of(1e-16) {
                break;
            }
        }
        let Some((cand, pc, rc, hc)) = accepted else {
            // Line search stagnated; report the best point found so far.
            break;
        };
        let step_norm = (&step * t).norm();
        c = cand;
        p = pc;
        r = rc;
        h = hc;
        if step_norm <= opts.gn.tol_step {
            let jac = problem.scaled_jacobian(&p)?;
            let grad = problem.gradient(&c, &r, &jac);
            gradient_norm = grad.amax();
            converged = gradient_norm <= opts.gn.tol_grad;
            break;
        }
    }

    Ok(ReconciliationResult {
        c_star: c,
        p_tilde: p,
        residual_before: r_before,
        residual_after: r,
        h_value: h,
        iterations,
        converged,
        gradient_norm,
    })
}

/// Full inner solve at decision `x`: predict, weight, dispatch.
pub fn reconcile<T: Scalar>(
    x: &DVector<T>,
    bundle: &SurrogateBundle<T>,
    sys: &PhysicsSystem<T>,
    mode: CorrectionMode,
    policy: &WeightPolicy<T>,
) -> Result<ReconciliationResult<T>> {
    reconcile_with(x, bundle, sys, mode, policy, &ReconcileOptions::default())
}

/// [`reconcile`] with explicit solver options.
pub fn reconcile_with<T: Scalar>(
    x: &DVector<T>,
    bundle: &SurrogateBundle<T>,
    sys: &PhysicsSystem<T>,
    mode: CorrectionMode,
    policy: &WeightPolicy<T>,
    opts: &ReconcileOptions<T>,
) -> Result<ReconciliationResult<T>> {
    if bundle.output_count() != sys.output_count() {
        return Err(Error::DimensionMismatch {
            context: "bundle vs physics outputs",
            expected: sys.output_count(),
            got: bundle.output_count(),
        });
    }
    let (mu, sigma) = bundle.predict(x)?;
    let weights = compute_weights(policy, &sigma)?;
    solve_corrections(x, &mu, sys, mode, &weights, opts)
}

/// Dispatches to the closed form for affine systems, Gauss–Newton otherwise.
pub fn solve_corrections<T: Scalar>(
    x: &DVector<T>,
    mu: &DVector<T>,
    sys: &PhysicsSystem<T>,
    mode: CorrectionMode,
    weights: &DVector<T>,
    opts: &ReconcileOptions<T>,
) -> Result<ReconciliationResult<T>> {
    match sys.linearity() {
        Linearity::AffineInOutputs => solve_affine(x, mu, sys, mode, weights, opts),
        Linearity::General => solve_gauss_newton(x, mu, sys, mode, weights, opts),
    }
}
