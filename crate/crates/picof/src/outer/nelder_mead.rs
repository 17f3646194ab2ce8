//! Bounded Nelder–Mead simplex minimizer.
//!
//! Standard coefficients (reflection 1, expansion 2, contraction 0.5,
//! shrink 0.5); box constraints are enforced by clamping every trial point
//! into the bounds before evaluation. Fully deterministic for a fixed
//! starting point.

use nalgebra::DVector;

use crate::scalar::Scalar;

/// Options for a single Nelder–Mead run.
#[derive(Debug, Clone)]
pub struct NmOptions<T> {
    /// Iteration budget (one reflect/expand/contract/shrink cycle each).
    pub max_iters: usize,
    /// Initial simplex step as a fraction of each box width.
    pub initial_step: T,
    /// Stop when the simplex objective spread falls below this value.
    pub ftol: T,
    /// Stop only if the simplex diameter is also below this value.
    pub xtol: T,
}

impl<T: Scalar> Default for NmOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 200,
            initial_step: T::of(0.05),
            ftol: T::of(1e-12),
            xtol: T::of(1e-10),
        }
    }
}

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub struct NmResult<T> {
    pub x: DVector<T>,
    pub value: T,
    pub iterations: usize,
    pub evaluations: usize,
}

fn clamp_into<T: Scalar>(x: &mut DVector<T>, bounds: &[(T, T)]) {
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        x[i] = nalgebra::clamp(x[i], lo, hi);
    }
}

/// Minimizes `f` over the box `bounds` starting from `x0`.
pub fn minimize<T, F>(mut f: F, x0: &DVector<T>, bounds: &[(T, T)], opts: &NmOptions<T>) -> NmResult<T>
where
    T: Scalar,
    F: FnMut(&DVector<T>) -> T,
{
    let n = x0.len();
    assert_eq!(bounds.len(), n, "bounds/point dimension mismatch");
    let mut evaluations = 0;
    let mut eval = |x: &DVector<T>, evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    // Initial simplex: x0 plus one step per coordinate, stepping inward when
    // x0 sits on the upper bound.
    let mut start = x0.clone();
    clamp_into(&mut start, bounds);
    let mut simplex: Vec<DVector<T>> = vec![start.clone()];
    for i in 0..n {
        let (lo, hi) = bounds[i];
        let width = hi - lo;
        let step = if width > T::zero() {
            opts.initial_step * width
        } else {
            T::of(1e-3)
        };
        let mut vertex = start.clone();
        vertex[i] = if start[i] + step <= hi {
            start[i] + step
        } else {
            start[i] - step
        };
        clamp_into(&mut vertex, bounds);
        simplex.push(vertex);
    }
    let mut values: Vec<T> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();

    let alpha = T::one();
    let gamma = T::of(2.0);
    let rho = T::of(0.5);
    let sigma = T::of(0.5);

    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        iterations += 1;

        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite objective"));
        let reordered: Vec<DVector<T>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalued: Vec<T> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalued;

        let diameter = simplex[1..]
            .iter()
            .map(|v| (v - &simplex[0]).amax())
            .fold(T::zero(), |acc, d| acc.max(d));
        if values[n] - values[0] < opts.ftol && diameter < opts.xtol {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = DVector::zeros(n);
        for vertex in simplex.iter().take(n) {
            centroid += vertex;
        }
        centroid /= T::of(n as f64);

        let mut reflected = &centroid + (&centroid - &simplex[n]) * alpha;
        clamp_into(&mut reflected, bounds);
        let f_reflected = eval(&reflected, &mut evaluations);

        if f_reflected < values[0] {
            let mut expanded = &centroid + (&centroid - &simplex[n]) * gamma;
            clamp_into(&mut expanded, bounds);
            let f_expanded = eval(&expanded, &mut evaluations);
            if f_expanded < f_reflected {
                simplex[n] = expanded;
                values[n] = f_expanded;
            } else {
                simplex[n] = reflected;
                values[n] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_reflected;
            continue;
        }

        // Contract toward the better of worst/reflected.
        let (anchor, f_anchor) = if f_reflected < values[n] {
            (reflected.clone(), f_reflected)
        } else {
            (simplex[n].clone(), values[n])
        };
        let mut contracted = &centroid + (&anchor - &centroid) * rho;
        clamp_into(&mut contracted, bounds);
        let f_contracted = eval(&contracted, &mut evaluations);
        if f_contracted < f_anchor {
            simplex[n] = contracted;
            values[n] = f_contracted;
            continue;
        }

        // Shrink toward the best vertex.
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut shrunk = &best + (&simplex[i] - &best) * sigma;
            clamp_into(&mut shrunk, bounds);
            values[i] = eval(&shrunk, &mut evaluations);
            simplex[i] = shrunk;
        }
    }

    let mut best_idx = 0;
    for i in 1..values.len() {
        if values[i] < values[best_idx] {
            best_idx = i;
        }
    }
    NmResult {
        x: simplex[best_idx].clone(),
        value: values[best_idx],
        iterations,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn minimizes_shifted_quadratic() {
        let f = |x: &DVector<f64>| (x[0] - 1.3).powi(2) + 2.0 * (x[1] + 0.4).powi(2);
        let res = minimize(
            f,
            &dvector![0.0, 0.0],
            &[(-5.0, 5.0), (-5.0, 5.0)],
            &NmOptions::default(),
        );
        assert!((res.x[0] - 1.3).abs() < 1e-5, "x = {}", res.x);
        assert!((res.x[1] + 0.4).abs() < 1e-5);
    }

    #[test]
    fn respects_bounds_when_optimum_outside() {
        let f = |x: &DVector<f64>| (x[0] - 10.0).powi(2);
        let res = minimize(f, &dvector![0.5], &[(0.0, 2.0)], &NmOptions::default());
        assert!((res.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn handles_start_on_upper_bound() {
        let f = |x: &DVector<f64>| x[0] * x[0];
        let res = minimize(f, &dvector![2.0], &[(-2.0, 2.0)], &NmOptions::default());
        assert!(res.x[0].abs() < 1e-6);
    }

    #[test]
    fn deterministic_for_fixed_start() {
        let f = |x: &DVector<f64>| (x[0] - 0.7).sin().powi(2) + x[1].powi(2);
        let bounds = [(-3.0, 3.0), (-3.0, 3.0)];
        let a = minimize(f, &dvector![1.0, 1.0], &bounds, &NmOptions::default());
        let b = minimize(f, &dvector![1.0, 1.0], &bounds, &NmOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn rosenbrock_reaches_valley() {
        let f = |x: &DVector<f64>| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        };
        let opts = NmOptions {
            max_iters: 2000,
            ..NmOptions::default()
        };
        let res = minimize(f, &dvector![-1.2, 1.0], &[(-5.0, 5.0), (-5.0, 5.0)], &opts);
        assert!(res.value < 1e-8, "value = {}", res.value);
    }
}
