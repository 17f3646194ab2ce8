//! The five-stack fuel-cell RTO scenario.
//!
//! Decisions are per-stack electric power setpoints. The surrogates are
//! trained on achieved powers (what the plant actually delivered), one pair
//! of channels per stack: hydrogen rate and thermal load. The physics tying
//! them together is the per-stack energy balance.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AssumedDefaults, FcScenario, GpChannelSummary, RunMode, RunSummary, Scenario};
use crate::error::{Error, Result};
use crate::gp::{ChannelSpec, Dataset, GpHyperparams};
use crate::outer::{derive_seed, LoopConfig, OuterProblem, Plant, PlantObservation, RtoLoop};
use crate::physics::builtin;
use crate::plants::fuelcell::FuelCellPlant;
use crate::reconcile::ReconcileOptions;
use crate::scalar::Scalar;
use crate::trace::{RunTrace, TraceSchema};

const STREAM_PRETRAIN: u64 = 17;

/// Everything a fuel-cell run produces.
#[derive(Debug, Clone)]
pub struct FcRunArtifacts {
    pub trace: RunTrace<f64>,
    pub summary: RunSummary,
}

struct ScenarioFcPlant {
    inner: FuelCellPlant<f64>,
    interval_s: f64,
    thermal_limit_kw: f64,
}

impl Plant<f64> for ScenarioFcPlant {
    fn apply(&mut self, _t: usize, x: &DVector<f64>) -> Result<PlantObservation<f64>> {
        let obs = self.inner.step(x, self.interval_s)?;
        let n = obs.achieved.len();
        let mut samples = Vec::with_capacity(2 * n);
        for i in 0..n {
            samples.push((DVector::from_element(1, obs.achieved[i]), obs.hydrogen[i]));
        }
        for i in 0..n {
            samples.push((DVector::from_element(1, obs.achieved[i]), obs.thermal[i]));
        }
        let totals = self.inner.totals();
        let mut extras: Vec<f64> = obs.achieved.iter().copied().collect();
        extras.extend([
            totals.power_kw,
            totals.thermal_kw,
            totals.h2_rate_mol_s,
            totals.cumulative_h2_mol,
        ]);
        Ok(PlantObservation {
            samples,
            constraint_truth: vec![totals.thermal_kw - self.thermal_limit_kw],
            extras,
        })
    }
}

fn fc_problem(scenario: &FcScenario) -> Result<OuterProblem<f64>> {
    let n = scenario.stacks.len();
    let fuel_weight = scenario.alpha1 * scenario.hydrogen_rate_scale;
    let tracking_weight = scenario.alpha2;
    let reference = scenario.power_reference_kw;
    let limit = scenario.thermal_limit_kw;

    let objective = Arc::new(
        move |_t: usize, x: &DVector<f64>, p: &DVector<f64>, sigma: &DVector<f64>, z: f64| {
            let mut fuel = 0.0;
            let mut exploration = 0.0;
            for i in 0..n {
                fuel += p[i] * p[i];
                exploration += sigma[i];
            }
            let tracking_error = reference - x.sum();
            fuel_weight * fuel + tracking_weight * tracking_error * tracking_error
                - z * exploration
        },
    );
    let constraint = Arc::new(
        move |_t: usize, _x: &DVector<f64>, p: &DVector<f64>, sigma: &DVector<f64>, beta: f64| {
            let mut total = 0.0;
            for i in 0..n {
                total += p[n + i] + beta * sigma[n + i];
            }
            total - limit
        },
    );

    let bounds = scenario
        .stacks
        .iter()
        .map(|s| (0.0, s.x_max_kw))
        .collect::<Vec<_>>();
    OuterProblem::new(objective, vec![constraint], bounds, scenario.z, scenario.beta)
}

/// Seeded pre-training sweep: random setpoint vectors simulated to steady
/// state on a scratch plant, with achieved powers recorded as the model
/// inputs. Identical for matched-seed corrected and baseline runs.
fn pretrain_datasets(
    scenario: &FcScenario,
    seed: u64,
) -> Result<(Vec<Dataset<f64>>, Vec<ChannelSpec>)> {
    let n = scenario.stacks.len();
    let mut channels = Vec::with_capacity(2 * n);
    let mut datasets = Vec::with_capacity(2 * n);
    for i in 0..n {
        channels.push(ChannelSpec::new(format!("h{}", i + 1), vec![i]));
        datasets.push(Dataset::new(
            format!("h{}", i + 1),
            vec![(0.0, scenario.stacks[i].x_max_kw)],
        )?);
    }
    for i in 0..n {
        channels.push(ChannelSpec::new(format!("th{}", i + 1), vec![i]));
        datasets.push(Dataset::new(
            format!("th{}", i + 1),
            vec![(0.0, scenario.stacks[i].x_max_kw)],
        )?);
    }

    let mut scratch = FuelCellPlant::new(
        scenario.stack_params(),
        scenario.reaction_enthalpy_kj_per_mol,
        scenario.simulator_dt_s,
        DVector::zeros(n),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PRETRAIN, 0));
    let pt = &scenario.pretraining;
    let settle = (pt.settle_s / scenario.simulator_dt_s).round() * scenario.simulator_dt_s;
    for point in 0..pt.points {
        // Round-robin probe stack drawn high, the rest low: every stack's
        // rated range gets observed while totals stay inside the limit.
        let probe = point % n;
        let setpoints = DVector::from_fn(n, |i, _| {
            if i == probe {
                pt.probe_min_kw + rng.gen::<f64>() * (pt.probe_max_kw - pt.probe_min_kw)
            } else {
                pt.low_min_kw + rng.gen::<f64>() * (pt.low_max_kw - pt.low_min_kw)
            }
        });
        let obs = scratch.step(&setpoints, settle)?;
        for i in 0..n {
            datasets[i].push(DVector::from_element(1, obs.achieved[i]), obs.hydrogen[i])?;
            datasets[n + i].push(DVector::from_element(1, obs.achieved[i]), obs.thermal[i])?;
        }
    }
    Ok((datasets, channels))
}

/// Runs the fuel-cell scenario end to end.
pub fn run_fuelcell(scenario: &FcScenario, seed: u64, picof: bool) -> Result<FcRunArtifacts> {
    scenario.validate()?;
    let started = Instant::now();
    let n = scenario.stacks.len();

    let (datasets, channels) = pretrain_datasets(scenario, seed)?;
    let hp: Vec<GpHyperparams<f64>> = datasets
        .iter()
        .map(|_| GpHyperparams::default_for_dim(1, scenario.gp.noise_variance))
        .collect();

    let plant = ScenarioFcPlant {
        inner: FuelCellPlant::new(
            scenario.stack_params(),
            scenario.reaction_enthalpy_kj_per_mol,
            scenario.simulator_dt_s,
            DVector::zeros(n),
        )?,
        interval_s: scenario.sampling_interval_s,
        thermal_limit_kw: scenario.thermal_limit_kw,
    };
    let sys = builtin::fc_energy_balance::<f64>(n, scenario.reaction_enthalpy_kj_per_mol);
    let mut rto = RtoLoop::new(
        fc_problem(scenario)?,
        channels.clone(),
        datasets,
        hp,
        sys,
        Box::new(plant),
        LoopConfig {
            mode: scenario.correction_mode,
            policy: scenario.weight_config().policy()?,
            recon: ReconcileOptions::default(),
            solver: scenario.solver.clone(),
            refit: scenario.gp.refit_schedule(),
            gp_search: scenario.gp.search_options(),
            baseline: !picof,
            seed,
        },
    )?;

    let mut extra_names: Vec<String> = (0..n).map(|i| format!("achieved_{}", i + 1)).collect();
    extra_names.extend(
        ["total_power_kw", "total_thermal_kw", "h2_rate_mol_s", "cumulative_h2_mol"]
            .map(String::from),
    );
    let mut trace = RunTrace::new(TraceSchema {
        decision_names: (0..n).map(|i| format!("sp_{}", i + 1)).collect(),
        channel_names: channels.iter().map(|c| c.name.clone()).collect(),
        constraint_names: vec!["thermal".into()],
        extra_names,
    });
    for t in 0..scenario.steps() {
        let record = rto.step(t)?;
        trace.records.push(record);
    }
    trace.audit = rto.audit();

    // Figure quantities from the recorded extras.
    let power_col = n; // extras: [achieved x n, power, thermal, h2 rate, cumulative]
    let thermal_col = n + 1;
    let cumulative_col = n + 3;
    let max_total_thermal = trace
        .records
        .iter()
        .map(|r| r.extras[thermal_col])
        .fold(f64::NEG_INFINITY, f64::max);
    let last10 = trace.records.len().saturating_sub(10);
    let mean_power_last10 = {
        let tail = &trace.records[last10..];
        tail.iter().map(|r| r.extras[power_col]).sum::<f64>() / tail.len() as f64
    };
    let cumulative_h2 = trace
        .records
        .last()
        .map(|r| r.extras[cumulative_col])
        .ok_or_else(|| Error::config("fuel-cell run produced no steps"))?;

    let scenario_echo = Scenario::Fuelcell(scenario.clone());
    let mode = if picof { RunMode::Picof } else { RunMode::Baseline };
    let summary = RunSummary {
        scenario_name: scenario.name.clone(),
        scenario_hash: scenario_echo.hash()?,
        seed,
        mode,
        steps: trace.len(),
        violations: trace.violations(),
        final_objective: trace
            .records
            .last()
            .map(|r| r.objective)
            .unwrap_or(f64::NAN),
        cumulative_h2_mol: Some(cumulative_h2),
        max_total_thermal_kw: Some(max_total_thermal),
        mean_total_power_last10_kw: Some(mean_power_last10),
        wall_clock_s: started.elapsed().as_secs_f64(),
        step_wall_ms: trace.step_wall_ms(),
        reconcile: trace.audit,
        inner_nonconverged_steps: rto.inner_nonconverged_steps(),
        gp_channels: rto
            .datasets()
            .iter()
            .zip(rto.hyperparams())
            .map(|(dataset, hp)| GpChannelSummary {
                name: dataset.channel().to_string(),
                observations: dataset.len(),
                signal_variance: hp.signal_variance.to_f64_s(),
                lengthscales: hp.lengthscales.iter().map(|l| l.to_f64_s()).collect(),
                noise_variance: hp.noise_variance.to_f64_s(),
            })
            .collect(),
        assumed_defaults: AssumedDefaults {
            beta: scenario.beta,
            observation_noise_std: vec![0.0; 2 * n],
        },
        scenario: scenario_echo,
    };

    Ok(FcRunArtifacts { trace, summary })
}
