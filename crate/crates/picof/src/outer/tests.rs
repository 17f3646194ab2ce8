use super::*;
use crate::physics::builtin;
use crate::plants::toy::{true_p1, true_p2, ToyPlant};
use crate::reconcile::{WeightMode, WeightPolicy};
use nalgebra::dvector;

fn toy_bundle() -> SurrogateBundle<f64> {
    let mut d1 = Dataset::new("p1", vec![(0.0, 2.0)]).unwrap();
    let mut d2 = Dataset::new("p2", vec![(0.0, 2.0)]).unwrap();
    for x in [0.2, 0.1, 0.05] {
        d1.push(dvector![x], true_p1(x)).unwrap();
        d2.push(dvector![x], true_p2(x)).unwrap();
    }
    let hp = GpHyperparams::new(1.0, vec![0.2], 1e-10).unwrap();
    SurrogateBundle::new(
        vec![ChannelSpec::new("p1", vec![0]), ChannelSpec::new("p2", vec![0])],
        vec![fit(&d1, &hp).unwrap(), fit(&d2, &hp).unwrap()],
    )
    .unwrap()
}

fn toy_problem(z: f64, beta: f64) -> OuterProblem<f64> {
    OuterProblem::new(
        Arc::new(|_t, _x, p: &DVector<f64>, sigma: &DVector<f64>, z| -p[0] - z * sigma[0]),
        vec![Arc::new(
            |_t, _x, p: &DVector<f64>, sigma: &DVector<f64>, beta| {
                p[1] + beta * sigma[1] - 140.0
            },
        )],
        vec![(0.0, 2.0)],
        z,
        beta,
    )
    .unwrap()
}

fn toy_policy() -> WeightPolicy<f64> {
    WeightPolicy::new(WeightMode::SigmaScaled, vec![0.5, 0.008]).unwrap()
}

fn ctx<'a>(
    problem: &'a OuterProblem<f64>,
    bundle: &'a SurrogateBundle<f64>,
    sys: &'a PhysicsSystem<f64>,
    policy: &'a WeightPolicy<f64>,
    recon: &'a ReconcileOptions<f64>,
    baseline: bool,
) -> EvalContext<'a, f64> {
    EvalContext {
        problem,
        bundle,
        sys,
        mode: CorrectionMode::Additive,
        policy,
        recon,
        baseline,
    }
}

#[test]
fn evaluate_at_training_point_reduces_to_mean_plus_exploration() {
    // At a noise-free training point the physics holds and corrections
    // vanish, so the objective is -p1(x) - z sigma1(x).
    let bundle = toy_bundle();
    let problem = toy_problem(10.0, 2.0);
    let sys = builtin::toy_balance::<f64>();
    let policy = toy_policy();
    let recon = ReconcileOptions::default();
    let c = ctx(&problem, &bundle, &sys, &policy, &recon, false);
    let x = dvector![0.2];
    let ev = evaluate(&c, 0, &x).unwrap();
    let (_, sigma) = bundle.predict(&x).unwrap();
    let expected = -true_p1(0.2) - 10.0 * sigma[0];
    assert!(
        (ev.objective - expected).abs() < 1e-6,
        "objective {} vs {expected}",
        ev.objective
    );
}

#[test]
fn zero_exploration_weight_gives_pure_objective() {
    let bundle = toy_bundle();
    let problem = toy_problem(0.0, 2.0);
    let sys = builtin::toy_balance::<f64>();
    let policy = toy_policy();
    let recon = ReconcileOptions::default();
    let c = ctx(&problem, &bundle, &sys, &policy, &recon, false);
    let ev = evaluate(&c, 0, &dvector![0.2]).unwrap();
    assert!((ev.objective + true_p1(0.2)).abs() < 1e-6);
}

#[test]
fn baseline_and_corrected_agree_where_physics_already_holds() {
    let bundle = toy_bundle();
    let problem = toy_problem(10.0, 2.0);
    let sys = builtin::toy_balance::<f64>();
    let policy = toy_policy();
    let recon = ReconcileOptions::default();
    let x = dvector![0.1];
    let base = evaluate(&ctx(&problem, &bundle, &sys, &policy, &recon, true), 0, &x).unwrap();
    let corr = evaluate(&ctx(&problem, &bundle, &sys, &policy, &recon, false), 0, &x).unwrap();
    assert!((base.objective - corr.objective).abs() < 1e-5);
    assert!((base.constraints[0] - corr.constraints[0]).abs() < 1e-4);
    assert!(base.reconciliation.is_none());
    assert!(corr.reconciliation.is_some());
}

#[test]
fn solver_finds_unconstrained_quadratic_minimum() {
    // Constraint constantly feasible, objective ignores predictions.
    let bundle = toy_bundle();
    let problem = OuterProblem::new(
        Arc::new(|_t, x: &DVector<f64>, _p, _s, _z| (x[0] - 1.0).powi(2)),
        vec![Arc::new(|_t, _x, _p, _s, _beta| -1.0)],
        vec![(0.0, 2.0)],
        0.0,
        2.0,
    )
    .unwrap();
    let sys = builtin::toy_balance::<f64>();
    let policy = toy_policy();
    let recon = ReconcileOptions::default();
    let c = ctx(&problem, &bundle, &sys, &policy, &recon, true);
    let mut audit = ReconcileAudit::default();
    let (x, diag) = solve_outer(&c, 0, &SolverConfig::default(), 0, &mut audit).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-3, "x = {}", x[0]);
    assert!(diag.chosen.is_feasible());
    assert!(!diag.no_feasible_candidate);
}

#[test]
fn solver_lands_on_the_active_constraint() {
    // f decreasing in x, g = x - 0.5 -> optimum at 0.5.
    let bundle = toy_bundle();
    let problem = OuterProblem::new(
        Arc::new(|_t, x: &DVector<f64>, _p, _s, _z| -x[0]),
        vec![Arc::new(|_t, x: &DVector<f64>, _p, _s, _beta| x[0] - 0.5)],
        vec![(0.0, 2.0)],
        0.0,
        2.0,
    )
    .unwrap();
    let sys = builtin::toy_balance::<f64>();
    let policy = toy_policy();
    let recon = ReconcileOptions::default();
    let c = ctx(&problem, &bundle, &sys, &policy, &recon, true);
    let mut audit = ReconcileAudit::default();
    let (x, diag) = solve_outer(&c, 0, &SolverConfig::default(), 0, &mut audit).unwrap();
    assert!((x[0] - 0.5).abs() < 1e-3, "x = {}", x[0]);
    assert!(diag.chosen.is_feasible());
}

#[test]
fn infeasible_everywhere_reports_minimal_violation() {
    let bundle = toy_bundle();
    let problem = OuterProblem::new(
        Arc::new(|_t, _x, _p, _s, _z| 0.0),
        vec![Arc::new(|_t, x: &DVector<f64>, _p, _s, _beta| 1.0 + x[0])],
        vec![(0.0, 2.0)],
        0.0,
        2.0,
    )
    .unwrap();
    let sys = builtin::toy_balance::<f64>();
    let policy = toy_policy();
    let recon = ReconcileOptions::default();
    let c = ctx(&problem, &bundle, &sys, &policy, &recon, true);
    let mut audit = ReconcileAudit::default();
    let (x, diag) = solve_outer(&c, 0, &SolverConfig::default(), 0, &mut audit).unwrap();
    assert!(diag.no_feasible_candidate);
    assert_eq!(diag.feasible_candidates, 0);
    // Minimal violation is at the lower bound.
    assert!(x[0] < 1e-2, "x = {}", x[0]);
}

#[test]
fn candidate_streams_depend_only_on_seed_and_step() {
    let bounds = [(0.0, 2.0)];
    let a = generate_candidates(&bounds, 64, 7, 3).unwrap();
    let b = generate_candidates(&bounds, 64, 7, 3).unwrap();
    assert_eq!(a, b);
    let c = generate_candidates(&bounds, 64, 7, 4).unwrap();
    assert_ne!(a, c);
    let d = generate_candidates(&bounds, 64, 8, 3).unwrap();
    assert_ne!(a, d);
    // 1-D candidate sets append the uniform grid.
    assert_eq!(a.len(), 64 + 101);
    assert!(a.iter().all(|x| (0.0..=2.0).contains(&x[0])));
    assert_eq!(a[64][0], 0.0);
    assert_eq!(a[164][0], 2.0);
}

#[test]
fn derive_seed_separates_streams() {
    let s = derive_seed(42, 1, 0);
    assert_ne!(s, derive_seed(42, 2, 0));
    assert_ne!(s, derive_seed(42, 1, 1));
    assert_ne!(s, derive_seed(43, 1, 0));
    assert_eq!(s, derive_seed(42, 1, 0));
}

struct ToyLoopPlant {
    inner: ToyPlant<f64>,
    limit: f64,
}

impl Plant<f64> for ToyLoopPlant {
    fn apply(&mut self, _t: usize, x: &DVector<f64>) -> crate::error::Result<PlantObservation<f64>> {
        let (p1, p2) = self.inner.observe(x[0])?;
        Ok(PlantObservation {
            samples: vec![(x.clone(), p1), (x.clone(), p2)],
            constraint_truth: vec![true_p2(x[0]) - self.limit],
            extras: vec![],
        })
    }
}

#[test]
fn loop_steps_extend_datasets_and_log_consistent_records() {
    let problem = toy_problem(10.0, 2.0);
    let mut d1 = Dataset::new("p1", vec![(0.0, 2.0)]).unwrap();
    let mut d2 = Dataset::new("p2", vec![(0.0, 2.0)]).unwrap();
    for x in [0.2, 0.1, 0.05] {
        d1.push(dvector![x], true_p1(x)).unwrap();
        d2.push(dvector![x], true_p2(x)).unwrap();
    }
    let hp = GpHyperparams::new(1.0, vec![0.2], 1e-6).unwrap();
    let mut rto = RtoLoop::new(
        problem,
        vec![ChannelSpec::new("p1", vec![0]), ChannelSpec::new("p2", vec![0])],
        vec![d1, d2],
        vec![hp.clone(), hp],
        builtin::toy_balance(),
        Box::new(ToyLoopPlant {
            inner: ToyPlant::noiseless(),
            limit: 140.0,
        }),
        LoopConfig {
            mode: CorrectionMode::Additive,
            policy: toy_policy(),
            recon: ReconcileOptions::default(),
            solver: SolverConfig {
                candidate_count: 64,
                local_refine: 40,
                restarts: 2,
                ..SolverConfig::default()
            },
            refit: RefitSchedule::default(),
            gp_search: OptimizeOptions {
                restarts: 2,
                max_iters: 60,
                ..OptimizeOptions::default()
            },
            baseline: false,
            seed: 0,
        },
    )
    .unwrap();

    for t in 0..3 {
        let record = rto.step(t).unwrap();
        assert_eq!(record.t, t);
        assert_eq!(record.x.len(), 1);
        assert_eq!(record.observations.len(), 2);
        assert_eq!(record.corrected.len(), 2);
        assert_eq!(record.c_star.len(), 2);
        assert_eq!(record.constraint_pred.len(), 1);
        assert_eq!(record.constraint_truth.len(), 1);
        // Observations are the true maps at the implemented decision.
        assert!((record.observations[0] - true_p1(record.x[0])).abs() < 1e-12);
        assert!((record.observations[1] - true_p2(record.x[0])).abs() < 1e-12);
    }
    assert_eq!(rto.steps_executed(), 3);
    assert_eq!(rto.datasets()[0].len(), 6);
    assert_eq!(rto.datasets()[1].len(), 6);
    assert!(rto.audit().calls > 0);
    assert!(rto.audit().max_sq_residual_increase <= 1e-12);
}
