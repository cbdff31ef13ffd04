//! Execution-engine checks on the catalog: cost accounting, stage capture,
//! reversibility, and driver behavior.

use embsplit::problems::{harmonic_flows, kepler_flows, kepler_init};
use embsplit::schemes::{find_method, replicate_halved};
use embsplit::stepper::{
    apply_estimator, diff_norm, integrate_adaptive, integrate_fixed, lower_scheme, per_step_fevals,
    step_with_stages, ControllerConfig, ErrorNorm, FlowSet, StepperError,
};

#[test]
fn per_step_force_evaluations_match_the_cost_model() {
    let expected = [
        ("SS5", 6),
        ("MCL7", 8),
        ("YOS7", 8),
        ("SS11", 12),
        ("SS17", 18),
        ("MA6", 7),
        ("PRK6", 7),
        ("RKN6", 7),
    ];
    for (alias, fevals) in expected {
        let m = find_method(alias).unwrap();
        assert_eq!(per_step_fevals(&m.scheme), fevals, "{alias}");
    }
}

#[test]
fn prk6_records_thirteen_outputs_at_seven_force_evaluations() {
    let m = find_method("PRK6").unwrap();
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.2).unwrap().to_state();
    let r = step_with_stages(&lower_scheme(&m.scheme), &flows, &x0, 0.05).unwrap();
    assert_eq!(r.stages.len(), 13); // input plus 12 intermediates
    assert_eq!(r.stages[0], x0);
    assert_eq!(r.fevals, 7);
}

#[test]
fn symmetric_schemes_step_back_to_the_start() {
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.2).unwrap().to_state();
    let h = 0.05;
    for m in embsplit::schemes::catalog() {
        let lowered = lower_scheme(&m.scheme);
        let fwd = step_with_stages(&lowered, &flows, &x0, h).unwrap();
        let back = step_with_stages(&lowered, &flows, &fwd.x_next, -h).unwrap();
        let rel = diff_norm(ErrorNorm::Euclidean, &back.x_next, &x0)
            / x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel < 1e-12, "{}: relative gap {rel}", m.name);
    }
}

#[test]
fn replicated_scheme_reproduces_two_half_steps_exactly() {
    let ss5 = find_method("SS5").unwrap();
    let rep = replicate_halved(&ss5.scheme, 2).unwrap();
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.4).unwrap().to_state();
    let h = 0.1;

    let one = step_with_stages(&lower_scheme(&rep), &flows, &x0, h).unwrap();
    let base = lower_scheme(&ss5.scheme);
    let first = step_with_stages(&base, &flows, &x0, h / 2.0).unwrap();
    let second = step_with_stages(&base, &flows, &first.x_next, h / 2.0).unwrap();

    assert_eq!(one.x_next, second.x_next); // identical flow sequence, bit for bit
    assert_eq!(one.stages[5], first.x_next); // seam state is a captured stage
}

#[test]
fn fixed_run_work_is_steps_times_cost_model() {
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.2).unwrap().to_state();
    for (alias, per_step) in [("SS5", 6), ("SS17", 18), ("MA6", 7)] {
        let m = find_method(alias).unwrap();
        let run = integrate_fixed(&m, &flows, &x0, 0.01, 0.0, 20.0, None).unwrap();
        assert_eq!(run.nsteps, 2000);
        assert!(!run.adjusted_final_step);
        assert_eq!(run.fevals, run.nsteps * per_step, "{alias}");
    }
}

#[test]
fn one_fixed_step_equals_step_with_stages() {
    let m = find_method("SS11").unwrap();
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.2).unwrap().to_state();
    let h = 0.25;
    let run = integrate_fixed(&m, &flows, &x0, h, 0.0, h, None).unwrap();
    let step = step_with_stages(&lower_scheme(&m.scheme), &flows, &x0, h).unwrap();
    assert_eq!(run.nsteps, 1);
    assert_eq!(run.states[1], step.x_next);
    assert_eq!(run.fevals, step.fevals);
    let tilde = apply_estimator(&m.estimators[0], &step).unwrap();
    let diff = diff_norm(ErrorNorm::Euclidean, &tilde, &step.x_next);
    assert_eq!(run.est_diffs[0][0], diff);
}

#[test]
fn partial_final_step_is_flagged_and_lands_on_t_end() {
    let m = find_method("SS5").unwrap();
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.2).unwrap().to_state();
    let run = integrate_fixed(&m, &flows, &x0, 0.3, 0.0, 1.0, None).unwrap();
    assert!(run.adjusted_final_step);
    assert_eq!(run.nsteps, 4); // three full steps and one of length 0.1
    assert_eq!(*run.times.last().unwrap(), 1.0);

    let exact = integrate_fixed(&m, &flows, &x0, 0.25, 0.0, 1.0, None).unwrap();
    assert!(!exact.adjusted_final_step);
    assert_eq!(exact.nsteps, 4);
}

#[test]
fn controller_grows_by_facmax_when_error_is_negligible() {
    let m = find_method("SS5").unwrap();
    let flows = harmonic_flows();
    let cfg = ControllerConfig::new(1.0, 1e-3);
    let run = integrate_adaptive(&m, &flows, &[1.0, 0.3], 0.0, 10.0, &cfg, None).unwrap();
    assert!(run.hs.len() >= 4);
    for w in run.hs[..3].windows(2) {
        assert!((w[1] / w[0] - 5.0).abs() < 1e-12, "ratio {}", w[1] / w[0]);
    }
    // Accepted steps tile the interval.
    let sum: f64 = run.hs.iter().sum();
    let span = run.times.last().unwrap() - run.times[0];
    assert!((sum - span).abs() < 1e-12);
    assert!((run.times.last().unwrap() - 10.0).abs() < 1e-9);
    assert_eq!(run.accepted, run.hs.len());
}

#[test]
fn unreachable_tolerance_aborts_after_max_rejects() {
    let m = find_method("SS5").unwrap();
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.2).unwrap().to_state();
    let cfg = ControllerConfig::new(1e-30, 0.1);
    let res = integrate_adaptive(&m, &flows, &x0, 0.0, 20.0, &cfg, None);
    match res {
        Err(StepperError::MaxRejects { rejects, .. }) => assert_eq!(rejects, 20),
        other => panic!("expected MaxRejects, got {other:?}"),
    }
}

#[test]
fn non_finite_flow_aborts_with_location() {
    let m = find_method("SS5").unwrap();
    let flows = FlowSet::rkn(1, |_, out| out[0] = f64::NAN);
    let res = integrate_fixed(&m, &flows, &[1.0, 0.0], 0.1, 0.0, 1.0, None);
    assert!(matches!(
        res,
        Err(StepperError::NonFiniteState { step: 0, stage: 0 })
    ));
}

#[test]
fn exact_flows_compose_as_a_semigroup() {
    use embsplit::opalg::Role;
    let kepler = kepler_flows(1.0).unwrap();
    let harmonic = harmonic_flows();
    let cases: [(&FlowSet, Vec<f64>); 2] = [
        (&kepler, kepler_init(0.3).unwrap().to_state()),
        (&harmonic, vec![0.8, -0.4]),
    ];
    for (flows, x0) in cases {
        for role in [Role::FlowA, Role::FlowB] {
            let mut two = x0.clone();
            flows.apply_role(role, 0.2, &mut two);
            flows.apply_role(role, 0.5, &mut two);
            let mut once = x0.clone();
            flows.apply_role(role, 0.7, &mut once);
            for (a, b) in two.iter().zip(&once) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn adaptive_uses_all_work_including_rejections() {
    let m = find_method("SS11").unwrap();
    let flows = kepler_flows(1.0).unwrap();
    let x0 = kepler_init(0.4).unwrap().to_state();
    let cfg = ControllerConfig::new(1e-8, 0.5);
    let run = integrate_adaptive(&m, &flows, &x0, 0.0, 20.0, &cfg, None).unwrap();
    assert_eq!(run.fevals, (run.accepted + run.rejected) * 12);
    assert_eq!(run.times.len(), run.accepted + 1);
    assert_eq!(run.states.len(), run.accepted + 1);
}
