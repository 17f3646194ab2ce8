//! The outer problem of the bilevel program and the closed RTO loop.
//!
//! Every outer evaluation first solves the inner reconciliation problem
//! (unless running the uncorrected baseline), then feeds the corrected
//! predictions into the gray-box objective and constraint closures. The
//! outer solver is derivative-free: a low-discrepancy candidate sweep, a
//! feasibility-first selection, and bounded Nelder–Mead refinement on a
//! penalized objective. All randomness is derived from the run seed and the
//! step index, so baseline and corrected runs draw identical candidate
//! sequences.

pub mod nelder_mead;
pub mod sobol;

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::{
    fit, optimize_hyperparams, ChannelSpec, Dataset, GpHyperparams, OptimizeOptions,
    SurrogateBundle,
};
use crate::physics::PhysicsSystem;
use crate::reconcile::{
    reconcile_with, CorrectionMode, ReconcileOptions, ReconciliationResult, WeightPolicy,
};
use crate::scalar::Scalar;
use crate::trace::{ReconcileAudit, TrialRecord};

use nelder_mead::NmOptions;
use sobol::SobolSequence;

/// Objective closure: `(t, x, p_tilde, sigma, z) -> value` (minimized).
pub type ObjectiveFn<T> = dyn Fn(usize, &DVector<T>, &DVector<T>, &DVector<T>, T) -> T + Send + Sync;
/// Constraint closure: `(t, x, p_tilde, sigma, beta) -> slack` (<= 0 feasible).
pub type ConstraintFn<T> = dyn Fn(usize, &DVector<T>, &DVector<T>, &DVector<T>, T) -> T + Send + Sync;

/// Gray-box outer problem over corrected predictions.
#[derive(Clone)]
pub struct OuterProblem<T: Scalar> {
    pub objective: Arc<ObjectiveFn<T>>,
    pub constraints: Vec<Arc<ConstraintFn<T>>>,
    pub bounds: Vec<(T, T)>,
    /// Exploration weight on the predictive standard deviation.
    pub z: T,
    /// Confidence multiplier inside constraints.
    pub beta: T,
}

impl<T: Scalar> OuterProblem<T> {
    pub fn new(
        objective: Arc<ObjectiveFn<T>>,
        constraints: Vec<Arc<ConstraintFn<T>>>,
        bounds: Vec<(T, T)>,
        z: T,
        beta: T,
    ) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::config("outer problem needs at least one decision"));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::config(format!(
                    "decision bound {i} must be finite and non-degenerate"
                )));
            }
        }
        Ok(Self {
            objective,
            constraints,
            bounds,
            z,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }
}

/// Derivative-free solver controls.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig<T> {
    /// Low-discrepancy candidates per step.
    pub candidate_count: usize,
    /// Nelder–Mead iterations per refinement start.
    pub local_refine: usize,
    /// Refinement starts (first one at the best candidate).
    pub restarts: usize,
    /// Quadratic penalty per unit constraint violation during refinement.
    pub infeasibility_penalty: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            candidate_count: 512,
            local_refine: 200,
            restarts: 4,
            infeasibility_penalty: T::of(1e6),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_count == 0 || self.local_refine == 0 || self.restarts == 0 {
            return Err(Error::config("solver counts must be at least 1"));
        }
        if !(self.infeasibility_penalty > T::zero()) {
            return Err(Error::config("infeasibility penalty must be positive"));
        }
        Ok(())
    }
}

/// Everything an outer evaluation needs besides the point itself.
pub struct EvalContext<'a, T: Scalar> {
    pub problem: &'a OuterProblem<T>,
    pub bundle: &'a SurrogateBundle<T>,
    pub sys: &'a PhysicsSystem<T>,
    pub mode: CorrectionMode,
    pub policy: &'a WeightPolicy<T>,
    pub recon: &'a ReconcileOptions<T>,
    /// Skip reconciliation, reproducing the uncorrected safe-BO baseline.
    pub baseline: bool,
}

/// One outer evaluation at a point.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub objective: T,
    pub constraints: Vec<T>,
    pub mu: DVector<T>,
    pub sigma: DVector<T>,
    pub p_tilde: DVector<T>,
    /// `None` on baseline evaluations.
    pub reconciliation: Option<ReconciliationResult<T>>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn is_feasible(&self) -> bool {
        self.constraints.iter().all(|g| *g <= T::zero())
    }

    pub fn total_violation(&self) -> T {
        self.constraints
            .iter()
            .fold(T::zero(), |acc, g| acc + (*g).max(T::zero()))
    }

    /// False only when an inner solve hit its iteration cap.
    pub fn inner_converged(&self) -> bool {
        self.reconciliation.as_ref().map_or(true, |r| r.converged)
    }
}

/// Evaluates objective and constraints at `x`, running the inner problem
/// first unless `baseline` is set. A non-converged inner solve is carried
/// through with its best-found corrections and surfaces via
/// [`Evaluation::inner_converged`]; it never silently poisons the outputs.
pub fn evaluate<T: Scalar>(ctx: &EvalContext<'_, T>, t: usize, x: &DVector<T>) -> Result<Evaluation<T>> {
    let (mu, sigma) = ctx.bundle.predict(x)?;
    let (p_tilde, reconciliation) = if ctx.baseline {
        (mu.clone(), None)
    } else {
        let recon = reconcile_with(x, ctx.bundle, ctx.sys, ctx.mode, ctx.policy, ctx.recon)?;
        (recon.p_tilde.clone(), Some(recon))
    };
    let objective = (ctx.problem.objective)(t, x, &p_tilde, &sigma, ctx.problem.z);
    let constraints = ctx
        .problem
        .constraints
        .iter()
        .map(|g| g(t, x, &p_tilde, &sigma, ctx.problem.beta))
        .collect::<Vec<_>>();
    if !objective.is_finite() || constraints.iter().any(|g| !g.is_finite()) {
        return Err(Error::config(format!(
            "non-finite outer evaluation at x = {x:?}"
        )));
    }
    Ok(Evaluation {
        objective,
        constraints,
        mu,
        sigma,
        p_tilde,
        reconciliation,
    })
}

/// Splitmix-style seed derivation for independent deterministic streams.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_CANDIDATES: u64 = 1;
const STREAM_REFINE: u64 = 2;
const STREAM_GP: u64 = 3;

/// Candidate set for one step: Sobol points under a seeded
/// Cranley–Patterson rotation, plus a uniform 101-point grid in 1-D.
/// Depends only on `(bounds, count, seed, t)`, so matched-seed runs share
/// candidate streams regardless of model state.
pub fn generate_candidates<T: Scalar>(
    bounds: &[(T, T)],
    count: usize,
    seed: u64,
    t: usize,
) -> Result<Vec<DVector<T>>> {
    let n = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CANDIDATES, t as u64));
    let shift: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let mut sobol = SobolSequence::new(n)?;
    let mut candidates = Vec::with_capacity(count + if n == 1 { 101 } else { 0 });
    for _ in 0..count {
        let u = sobol.next_point();
        candidates.push(DVector::from_fn(n, |d, _| {
            let rotated = (u[d] + shift[d]).fract();
            let (lo, hi) = bounds[d];
            lo + (hi - lo) * T::of(rotated)
        }));
    }
    if n == 1 {
        let (lo, hi) = bounds[0];
        for i in 0..=100 {
            candidates.push(DVector::from_element(
                1,
                lo + (hi - lo) * T::of(i as f64 / 100.0),
            ));
        }
    }
    Ok(candidates)
}

/// Solver outcome bookkeeping.
#[derive(Debug, Clone)]
pub struct OuterDiagnostics<T> {
    /// Evaluation actually implemented (at the returned point).
    pub chosen: Evaluation<T>,
    pub evaluations: usize,
    pub feasible_candidates: usize,
    /// No candidate satisfied every constraint; minimal-violation point used.
    pub no_feasible_candidate: bool,
    pub refined_accepted: bool,
}

fn better<T: Scalar>(a: &Evaluation<T>, b: &Evaluation<T>) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective < b.objective,
        (false, false) => {
            let (va, vb) = (a.total_violation(), b.total_violation());
            va < vb || (va == vb && a.objective < b.objective)
        }
    }
}

/// Solves the outer problem at step `t`: candidate sweep, feasibility-first
/// selection, Nelder–Mead refinement, guarded acceptance. Deterministic for
/// fixed inputs and seed. Inner-solve statistics accumulate into `audit`.
pub fn solve_outer<T: Scalar>(
    ctx: &EvalContext<'_, T>,
    t: usize,
    config: &SolverConfig<T>,
    seed: u64,
    audit: &mut ReconcileAudit,
) -> Result<(DVector<T>, OuterDiagnostics<T>)> {
    config.validate()?;
    let bounds = &ctx.problem.bounds;
    let candidates = generate_candidates(bounds, config.candidate_count, seed, t)?;

    let mut evaluations = 0;
    let mut feasible_candidates = 0;
    let mut chosen_x: Option<DVector<T>> = None;
    let mut chosen: Option<Evaluation<T>> = None;
    for x in candidates {
        let ev = evaluate(ctx, t, &x)?;
        evaluations += 1;
        if let Some(r) = &ev.reconciliation {
            audit.absorb(r);
        }
        if ev.is_feasible() {
            feasible_candidates += 1;
        }
        if chosen.as_ref().map_or(true, |best| better(&ev, best)) {
            chosen = Some(ev);
            chosen_x = Some(x);
        }
    }
    let mut chosen_x = chosen_x.expect("candidate set is never empty");
    let mut chosen = chosen.expect("candidate set is never empty");
    let no_feasible_candidate = feasible_candidates == 0;

    // Refinement on objective + penalty * sum(max(0, g)^2), clipped to bounds.
    let mut refined_accepted = false;
    let nm_opts = NmOptions {
        max_iters: config.local_refine,
        ..NmOptions::default()
    };
    for restart in 0..config.restarts {
        let start = if restart == 0 {
            chosen_x.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                STREAM_REFINE,
                (t as u64) << 8 | restart as u64,
            ));
            DVector::from_fn(chosen_x.len(), |d, _| {
                let (lo, hi) = bounds[d];
                let width = hi - lo;
                let jitter = T::of(rng.gen::<f64>() - 0.5) * T::of(0.2) * width;
                nalgebra::clamp(chosen_x[d] + jitter, lo, hi)
            })
        };
        let mut nm_evals = 0usize;
        let penalized = |x: &DVector<T>| -> T {
            nm_evals += 1;
            match evaluate(ctx, t, x) {
                Ok(ev) => {
                    if let Some(r) = &ev.reconciliation {
                        audit.absorb(r);
                    }
                    let violation_sq = ev.constraints.iter().fold(T::zero(), |acc, g| {
                        let v = (*g).max(T::zero());
                        acc + v * v
                    });
                    ev.objective + config.infeasibility_penalty * violation_sq
                }
                Err(_) => T::of(1e100),
            }
        };
        let result = nelder_mead::minimize(penalized, &start, bounds, &nm_opts);
        evaluations += nm_evals;

        // Guarded acceptance under a clean re-evaluation.
        let ev = evaluate(ctx, t, &result.x)?;
        evaluations += 1;
        if let Some(r) = &ev.reconciliation {
            audit.absorb(r);
        }
        let accept = if chosen.is_feasible() {
            ev.is_feasible() && ev.objective < chosen.objective
        } else {
            ev.is_feasible() || ev.total_violation() < chosen.total_violation()
        };
        if accept {
            chosen_x = result.x;
            chosen = ev;
            refined_accepted = true;
        }
    }

    Ok((
        chosen_x,
        OuterDiagnostics {
            chosen,
            evaluations,
            feasible_candidates,
            no_feasible_candidate,
            refined_accepted,
        },
    ))
}

/// Plant-side view of one implemented decision.
#[derive(Debug, Clone)]
pub struct PlantObservation<T> {
    /// Per-channel (model input, measured output), aligned with the bundle
    /// registry. Inputs are what the surrogates should train on (for the
    /// fuel cell: achieved powers, not setpoints).
    pub samples: Vec<(DVector<T>, T)>,
    /// Plant-truth constraint slack values (<= 0 feasible), aligned with
    /// the outer problem's constraints.
    pub constraint_truth: Vec<T>,
    /// Scenario-defined extra trace columns.
    pub extras: Vec<T>,
}

/// A ground-truth environment the loop can implement decisions in.
pub trait Plant<T: Scalar> {
    fn apply(&mut self, t: usize, x: &DVector<T>) -> Result<PlantObservation<T>>;
}

/// When to re-select GP hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RefitSchedule {
    /// Re-optimize after this many new observations per channel (0 = never).
    pub refit_every: usize,
    /// Optimize once on the pre-training data at loop construction.
    pub optimize_on_init: bool,
}

impl Default for RefitSchedule {
    fn default() -> Self {
        Self {
            refit_every: 5,
            optimize_on_init: true,
        }
    }
}

/// Loop-level configuration.
pub struct LoopConfig<T: Scalar> {
    pub mode: CorrectionMode,
    pub policy: WeightPolicy<T>,
    pub recon: ReconcileOptions<T>,
    pub solver: SolverConfig<T>,
    pub refit: RefitSchedule,
    pub gp_search: OptimizeOptions<T>,
    pub baseline: bool,
    pub seed: u64,
}

/// The closed solve → implement → observe → refit loop.
pub struct RtoLoop<T: Scalar> {
    problem: OuterProblem<T>,
    sys: PhysicsSystem<T>,
    plant: Box<dyn Plant<T>>,
    datasets: Vec<Dataset<T>>,
    hyperparams: Vec<GpHyperparams<T>>,
    bundle: SurrogateBundle<T>,
    config: LoopConfig<T>,
    audit: ReconcileAudit,
    observations_since_refit: usize,
    inner_nonconverged_steps: usize,
    steps_executed: usize,
}

impl<T: Scalar> RtoLoop<T> {
    /// Builds the loop, fitting (and optionally tuning) the initial models
    /// on the pre-training datasets.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        problem: OuterProblem<T>,
        channels: Vec<ChannelSpec>,
        datasets: Vec<Dataset<T>>,
        init_hyperparams: Vec<GpHyperparams<T>>,
        sys: PhysicsSystem<T>,
        plant: Box<dyn Plant<T>>,
        config: LoopConfig<T>,
    ) -> Result<Self> {
        if channels.len() != datasets.len() || channels.len() != init_hyperparams.len() {
            return Err(Error::config(
                "channel registry, datasets, and hyperparameters must align",
            ));
        }
        config.solver.validate()?;
        let mut hyperparams = init_hyperparams;
        if config.refit.optimize_on_init {
            for (i, dataset) in datasets.iter().enumerate() {
                if dataset.len() >= 2 {
                    hyperparams[i] = optimize_hyperparams(
                        dataset,
                        &hyperparams[i],
                        &config.gp_search,
                        derive_seed(config.seed, STREAM_GP, i as u64),
                    )?;
                }
            }
        }
        let models = datasets
            .iter()
            .zip(&hyperparams)
            .map(|(dataset, hp)| fit(dataset, hp))
            .collect::<Result<Vec<_>>>()?;
        let bundle = SurrogateBundle::new(channels, models)?;
        Ok(Self {
            problem,
            sys,
            plant,
            datasets,
            hyperparams,
            bundle,
            config,
            audit: ReconcileAudit::default(),
            observations_since_refit: 0,
            inner_nonconverged_steps: 0,
            steps_executed: 0,
        })
    }

    pub fn bundle(&self) -> &SurrogateBundle<T> {
        &self.bundle
    }

    pub fn datasets(&self) -> &[Dataset<T>] {
        &self.datasets
    }

    pub fn hyperparams(&self) -> &[GpHyperparams<T>] {
        &self.hyperparams
    }

    pub fn audit(&self) -> ReconcileAudit {
        self.audit
    }

    pub fn steps_executed(&self) -> usize {
        self.steps_executed
    }

    pub fn inner_nonconverged_steps(&self) -> usize {
        self.inner_nonconverged_steps
    }

    pub fn eval_context(&self) -> EvalContext<'_, T> {
        EvalContext {
            problem: &self.problem,
            bundle: &self.bundle,
            sys: &self.sys,
            mode: self.config.mode,
            policy: &self.config.policy,
            recon: &self.config.recon,
            baseline: self.config.baseline,
        }
    }

    /// Executes one RTO step: solve the outer problem, implement the
    /// decision in the plant, log, append observations, refit models.
    pub fn step(&mut self, t: usize) -> Result<TrialRecord<T>> {
        let started = Instant::now();
        let mut audit = self.audit;
        let (x_star, diagnostics) = {
            let ctx = self.eval_context();
            solve_outer(&ctx, t, &self.config.solver, self.config.seed, &mut audit)?
        };
        self.audit = audit;
        if !diagnostics.chosen.inner_converged() {
            self.inner_nonconverged_steps += 1;
        }

        let observation = self.plant.apply(t, &x_star)?;
        if observation.samples.len() != self.bundle.output_count() {
            return Err(Error::DimensionMismatch {
                context: "plant observation channels",
                expected: self.bundle.output_count(),
                got: observation.samples.len(),
            });
        }
        let violation = observation
            .constraint_truth
            .iter()
            .any(|g| *g > T::zero());

        for (dataset, (input, output)) in self.datasets.iter_mut().zip(&observation.samples) {
            dataset.push(input.clone(), *output)?;
        }
        self.observations_since_refit += 1;
        let optimize_now = self.config.refit.refit_every > 0
            && self.observations_since_refit >= self.config.refit.refit_every;
        for i in 0..self.datasets.len() {
            if optimize_now && self.datasets[i].len() >= 2 {
                self.hyperparams[i] = optimize_hyperparams(
                    &self.datasets[i],
                    &self.hyperparams[i],
                    &self.config.gp_search,
                    derive_seed(self.config.seed, STREAM_GP, ((t as u64) << 16) | i as u64),
                )?;
            }
            let model = fit(&self.datasets[i], &self.hyperparams[i])?;
            self.bundle.replace_model(i, model);
        }
        if optimize_now {
            self.observations_since_refit = 0;
        }
        self.steps_executed += 1;

        let m = self.bundle.output_count();
        let chosen = diagnostics.chosen;
        let (c_star, inner_iterations) = match &chosen.reconciliation {
            Some(r) => (r.c_star.iter().copied().collect(), r.iterations),
            None => (
                self.config.mode.identity_element::<T>(m).iter().copied().collect(),
                0,
            ),
        };
        Ok(TrialRecord {
            t,
            x: x_star.iter().copied().collect(),
            observations: observation.samples.iter().map(|(_, y)| *y).collect(),
            corrected: chosen.p_tilde.iter().copied().collect(),
            c_star,
            objective: chosen.objective,
            constraint_pred: chosen.constraints.clone(),
            constraint_truth: observation.constraint_truth.clone(),
            violation,
            inner_iterations,
            extras: observation.extras.clone(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

#[cfg(test)]
mod tests;
