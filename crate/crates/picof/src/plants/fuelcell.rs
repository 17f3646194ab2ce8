//! Five-stack fuel-cell plant simulator.
//!
//! Each stack has a quadratic net-efficiency curve `eta(u)` over load
//! fraction `u = x / x_max` and first-order power tracking with time
//! constant `tau`. The static maps are
//!
//! * hydrogen rate `p_h = x / (eta(u) * dH)` in mol/s,
//! * thermal load `p_th = p_h * dH - x` in kW,
//!
//! so the per-stack energy balance `p_h * dH - p_th - x = 0` holds exactly
//! at every reported sample by construction.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hydrogen higher heating value, kJ/mol.
pub const REACTION_ENTHALPY_KJ_PER_MOL: f64 = 285.8;

/// One stack's frozen characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcStackParams<T> {
    /// Efficiency curve `eta(u) = a + b u + cq u^2`.
    pub eta_a: T,
    pub eta_b: T,
    pub eta_cq: T,
    /// Rated electric power, kW.
    pub x_max: T,
    /// Power-tracking time constant, s.
    pub tau: T,
}

impl<T: Scalar> FcStackParams<T> {
    pub fn efficiency(&self, load_fraction: T) -> T {
        self.eta_a + self.eta_b * load_fraction + self.eta_cq * load_fraction * load_fraction
    }

    /// Checks `eta` stays in (0, 1) over the working load range and the
    /// dynamic constants are positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) {
            return Err(Error::config("stack tau must be positive"));
        }
        if !(self.x_max > T::zero()) {
            return Err(Error::config("stack x_max must be positive"));
        }
        let mut u = 0.05_f64;
        while u <= 1.0 {
            let eta = self.efficiency(T::of(u)).to_f64_s();
            if !(0.0 < eta && eta < 1.0) {
                return Err(Error::config(format!(
                    "stack efficiency {eta:.4} at load {u:.2} outside (0, 1)"
                )));
            }
            u += 0.01;
        }
        Ok(())
    }
}

/// End-of-interval measurements from one plant step.
#[derive(Debug, Clone)]
pub struct FcObservation<T> {
    /// Achieved electric powers, kW.
    pub achieved: DVector<T>,
    /// Hydrogen consumption rates, mol/s.
    pub hydrogen: DVector<T>,
    /// Thermal loads, kW.
    pub thermal: DVector<T>,
}

/// Aggregates over the current plant state.
#[derive(Debug, Clone, Copy)]
pub struct FcTotals<T> {
    pub power_kw: T,
    pub thermal_kw: T,
    pub h2_rate_mol_s: T,
    pub cumulative_h2_mol: T,
}

/// The five-stack plant with first-order setpoint tracking.
#[derive(Debug, Clone)]
pub struct FuelCellPlant<T> {
    stacks: Vec<FcStackParams<T>>,
    reaction_enthalpy: T,
    dt: T,
    achieved: DVector<T>,
    cumulative_h2: T,
}

impl<T: Scalar> FuelCellPlant<T> {
    /// Builds the plant at the given initial achieved powers (kW). The
    /// integration step must satisfy `dt <= min(tau) / 10`.
    pub fn new(
        stacks: Vec<FcStackParams<T>>,
        reaction_enthalpy: T,
        dt: T,
        initial_achieved: DVector<T>,
    ) -> Result<Self> {
        if stacks.is_empty() {
            return Err(Error::config("at least one stack required"));
        }
        if initial_achieved.len() != stacks.len() {
            return Err(Error::DimensionMismatch {
                context: "initial achieved powers",
                expected: stacks.len(),
                got: initial_achieved.len(),
            });
        }
        for stack in &stacks {
            stack.validate()?;
        }
        let min_tau = stacks
            .iter()
            .map(|s| s.tau)
            .fold(T::of(f64::INFINITY), |a, b| a.min(b));
        if !(dt > T::zero()) || dt > min_tau / T::of(10.0) {
            return Err(Error::config(format!(
                "integration step {} must be in (0, min tau / 10 = {}]",
                dt.to_f64_s(),
                (min_tau / T::of(10.0)).to_f64_s()
            )));
        }
        Ok(Self {
            stacks,
            reaction_enthalpy,
            dt,
            achieved: initial_achieved,
            cumulative_h2: T::zero(),
        })
    }

    pub fn stack_count(&self) -> usize {
        self.stacks.len()
    }

    pub fn stacks(&self) -> &[FcStackParams<T>] {
        &self.stacks
    }

    pub fn reaction_enthalpy(&self) -> T {
        self.reaction_enthalpy
    }

    pub fn achieved(&self) -> &DVector<T> {
        &self.achieved
    }

    /// Static maps at the given achieved power of stack `i`.
    pub fn static_maps(&self, i: usize, achieved: T) -> (T, T) {
        let stack = &self.stacks[i];
        let u = achieved / stack.x_max;
        let eta = stack.efficiency(u);
        let hydrogen = achieved / (eta * self.reaction_enthalpy);
        let thermal = hydrogen * self.reaction_enthalpy - achieved;
        (hydrogen, thermal)
    }

    fn observation(&self) -> FcObservation<T> {
        let n = self.stack_count();
        let mut hydrogen = DVector::zeros(n);
        let mut thermal = DVector::zeros(n);
        for i in 0..n {
            let (h, th) = self.static_maps(i, self.achieved[i]);
            hydrogen[i] = h;
            thermal[i] = th;
        }
        FcObservation {
            achieved: self.achieved.clone(),
            hydrogen,
            thermal,
        }
    }

    /// Integrates the power dynamics over `horizon` seconds under constant
    /// setpoints and returns end-of-interval measurements. Out-of-range
    /// setpoints are clamped into `[0, x_max]` with a warning. The horizon
    /// must be an integer multiple of the integration step.
    pub fn step(&mut self, setpoints: &DVector<T>, horizon: T) -> Result<FcObservation<T>> {
        let n = self.stack_count();
        if setpoints.len() != n {
            return Err(Error::DimensionMismatch {
                context: "fuel cell setpoints",
                expected: n,
                got: setpoints.len(),
            });
        }
        let mut clamped = setpoints.clone();
        for i in 0..n {
            let hi = self.stacks[i].x_max;
            if clamped[i] < T::zero() || clamped[i] > hi {
                log::warn!(
                    "stack {} setpoint {} kW clamped into [0, {}]",
                    i + 1,
                    clamped[i].to_f64_s(),
                    hi.to_f64_s()
                );
                clamped[i] = nalgebra::clamp(clamped[i], T::zero(), hi);
            }
        }
        let steps_f = (horizon / self.dt).to_f64_s();
        let steps = steps_f.round() as usize;
        if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 {
            return Err(Error::config(format!(
                "horizon {} is not a positive multiple of dt {}",
                horizon.to_f64_s(),
                self.dt.to_f64_s()
            )));
        }
        for _ in 0..steps {
            let mut h2_rate = T::zero();
            for i in 0..n {
                let rate = (clamped[i] - self.achieved[i]) / self.stacks[i].tau;
                self.achieved[i] += rate * self.dt;
                let (h, _) = self.static_maps(i, self.achieved[i]);
                h2_rate += h;
            }
            self.cumulative_h2 += h2_rate * self.dt;
        }
        Ok(self.observation())
    }

    /// Aggregated quantities at the current state.
    pub fn totals(&self) -> FcTotals<T> {
        let obs = self.observation();
        FcTotals {
            power_kw: obs.achieved.sum(),
            thermal_kw: obs.thermal.sum(),
            h2_rate_mol_s: obs.hydrogen.sum(),
            cumulative_h2_mol: self.cumulative_h2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn one_stack(tau: f64) -> FcStackParams<f64> {
        FcStackParams {
            eta_a: 0.5512,
            eta_b: 0.144,
            eta_cq: -0.18,
            x_max: 100.0,
            tau,
        }
    }

    fn five_distinct() -> Vec<FcStackParams<f64>> {
        let table = [
            (0.5512, 0.144, -0.18, 25.0),
            (0.5226, 0.144, -0.16, 32.0),
            (0.486192, 0.1848, -0.22, 40.0),
            (0.43855, 0.294, -0.42, 48.0),
            (0.4055, 0.33, -0.55, 55.0),
        ];
        table
            .iter()
            .map(|&(a, b, cq, tau)| FcStackParams {
                eta_a: a,
                eta_b: b,
                eta_cq: cq,
                x_max: 100.0,
                tau,
            })
            .collect()
    }

    #[test]
    fn equilibrium_state_is_a_fixed_point_with_exact_balance() {
        let init = dvector![40.0, 50.0, 60.0, 70.0, 30.0];
        let mut plant =
            FuelCellPlant::new(five_distinct(), REACTION_ENTHALPY_KJ_PER_MOL, 2.0, init.clone())
                .unwrap();
        let obs = plant.step(&init, 500.0).unwrap();
        for i in 0..5 {
            assert!((obs.achieved[i] - init[i]).abs() < 1e-9);
            let balance = obs.hydrogen[i] * REACTION_ENTHALPY_KJ_PER_MOL
                - obs.thermal[i]
                - obs.achieved[i];
            assert!(balance.abs() <= 1e-9, "stack {i} balance {balance}");
        }
    }

    #[test]
    fn step_response_matches_first_order_exponential() {
        // dt = tau/50 keeps the explicit scheme within 2% of the closed form
        // at one time constant.
        let tau = 50.0;
        let mut plant = FuelCellPlant::new(
            vec![one_stack(tau)],
            REACTION_ENTHALPY_KJ_PER_MOL,
            tau / 50.0,
            dvector![0.0],
        )
        .unwrap();
        let target = 80.0;
        let obs = plant.step(&dvector![target], tau).unwrap();
        let analytic = target * (1.0 - (-1.0f64).exp());
        let rel = (obs.achieved[0] - analytic).abs() / analytic;
        assert!(rel < 0.02, "achieved {} vs analytic {analytic}", obs.achieved[0]);
    }

    #[test]
    fn totals_aggregate_the_per_stack_maps() {
        let init = dvector![20.0, 35.0, 55.0, 65.0, 45.0];
        let mut plant =
            FuelCellPlant::new(five_distinct(), REACTION_ENTHALPY_KJ_PER_MOL, 2.0, init).unwrap();
        let obs = plant.step(&dvector![25.0, 40.0, 50.0, 60.0, 50.0], 250.0).unwrap();
        let totals = plant.totals();
        assert!((totals.power_kw - obs.achieved.sum()).abs() < 1e-12);
        assert!((totals.thermal_kw - obs.thermal.sum()).abs() < 1e-12);
        let recomputed: f64 = (0..5)
            .map(|i| obs.hydrogen[i] * REACTION_ENTHALPY_KJ_PER_MOL - obs.achieved[i])
            .sum();
        assert!((totals.thermal_kw - recomputed).abs() <= 1e-9);
    }

    #[test]
    fn out_of_range_setpoints_are_clamped() {
        let mut plant = FuelCellPlant::new(
            vec![one_stack(25.0)],
            REACTION_ENTHALPY_KJ_PER_MOL,
            2.0,
            dvector![50.0],
        )
        .unwrap();
        let obs = plant.step(&dvector![500.0], 2000.0).unwrap();
        assert!(obs.achieved[0] <= 100.0 + 1e-9);
        let obs = plant.step(&dvector![-10.0], 2000.0).unwrap();
        assert!(obs.achieved[0] >= -1e-9);
    }

    #[test]
    fn cumulative_hydrogen_is_monotone() {
        let mut plant = FuelCellPlant::new(
            five_distinct(),
            REACTION_ENTHALPY_KJ_PER_MOL,
            2.0,
            dvector![10.0, 10.0, 10.0, 10.0, 10.0],
        )
        .unwrap();
        let mut last = 0.0;
        for _ in 0..5 {
            plant.step(&dvector![60.0, 55.0, 50.0, 45.0, 40.0], 250.0).unwrap();
            let totals = plant.totals();
            assert!(totals.cumulative_h2_mol >= last);
            last = totals.cumulative_h2_mol;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn fractional_horizon_is_rejected() {
        let mut plant = FuelCellPlant::new(
            vec![one_stack(25.0)],
            REACTION_ENTHALPY_KJ_PER_MOL,
            2.0,
            dvector![0.0],
        )
        .unwrap();
        assert!(plant.step(&dvector![10.0], 3.0).is_err());
    }

    #[test]
    fn too_coarse_integration_step_is_rejected() {
        let err = FuelCellPlant::new(
            vec![one_stack(25.0)],
            REACTION_ENTHALPY_KJ_PER_MOL,
            3.0,
            dvector![0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn efficiency_curves_are_pairwise_distinct() {
        let stacks = five_distinct();
        for i in 0..stacks.len() {
            stacks[i].validate().unwrap();
            for j in i + 1..stacks.len() {
                let mut max_gap = 0.0_f64;
                let mut u = 0.05;
                while u <= 1.0 {
                    let gap = (stacks[i].efficiency(u) - stacks[j].efficiency(u)).abs();
                    max_gap = max_gap.max(gap);
                    u += 0.01;
                }
                assert!(
                    max_gap >= 0.01,
                    "stacks {i} and {j} within 1 percentage point everywhere"
                );
            }
        }
    }
}
