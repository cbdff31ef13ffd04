//! Scheme execution against exact split flows, with stage capture, estimator
//! evaluation, and fixed/adaptive step drivers.
//!
//! Schemes are lowered to a flat list of drift/kick primitives per stage.
//! Consecutive kicks leave the position block untouched, so one force
//! evaluation serves a whole kick run; the cost model counts exactly those
//! evaluations, and the executor realizes the count by caching the force
//! until a drift invalidates it. The cache resets at each step boundary: no
//! reuse is assumed across steps.

use crate::estgen::{EstimatorWeights, SchemeSpec};
use crate::opalg::Role;
use crate::schemes::EmbeddedMethod;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum StepperError {
    #[error("non-finite state after stage {stage} of step {step}")]
    NonFiniteState { step: usize, stage: usize },
    #[error("estimator has {weights} weights but the step produced {stages} stage outputs")]
    WeightsLengthMismatch { weights: usize, stages: usize },
    #[error("adaptive stepping needs a method with at least one estimator")]
    NoEstimator,
    #[error("invalid controller configuration: {0}")]
    BadController(&'static str),
    #[error("invalid run setup: {0}")]
    BadRun(&'static str),
    #[error("step at t = {t} rejected {rejects} times in a row")]
    MaxRejects { t: f64, rejects: u32 },
    #[error("trajectory sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// Second-order mechanical system ẏ' = g(y): the state is (y, ẏ) with the
/// position block first. The drift advances positions from velocities; the
/// kick advances velocities from the acceleration, at one force evaluation
/// per fresh position.
pub struct FlowSet {
    dof: usize,
    accel: AccelFn,
}

type AccelFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

impl FlowSet {
    pub fn rkn(dof: usize, accel: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> FlowSet {
        FlowSet {
            dof,
            accel: Box::new(accel),
        }
    }

    /// Full state dimension (positions then velocities).
    pub fn dim(&self) -> usize {
        2 * self.dof
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// g evaluated at the position block of `state`, written to `out`.
    pub fn eval_accel(&self, state: &[f64], out: &mut [f64]) {
        (self.accel)(&state[..self.dof], out);
    }

    fn drift(&self, tau: f64, state: &mut [f64]) {
        let (q, p) = state.split_at_mut(self.dof);
        for i in 0..self.dof {
            q[i] += tau * p[i];
        }
    }

    fn kick_with(&self, tau: f64, state: &mut [f64], force: &[f64]) {
        let p = &mut state[self.dof..];
        for i in 0..force.len() {
            p[i] += tau * force[i];
        }
    }

    /// Apply one role's flow with time coefficient `tau` in place; returns
    /// the number of force evaluations spent. Standalone entry point with no
    /// cross-call force caching.
    pub fn apply_role(&self, role: Role, tau: f64, state: &mut [f64]) -> usize {
        let mut force = vec![0.0; self.dof];
        let mut fevals = 0;
        for op in role_primitives(role, tau) {
            match op.kind {
                PrimKind::Drift => self.drift(op.coeff, state),
                PrimKind::Kick => {
                    self.eval_accel(state, &mut force);
                    fevals += 1;
                    self.kick_with(op.coeff, state, &force);
                }
            }
        }
        fevals
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimKind {
    Drift,
    Kick,
}

/// One primitive flow application; `coeff` multiplies the step size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimOp {
    pub kind: PrimKind,
    pub coeff: f64,
}

fn role_primitives(role: Role, c: f64) -> Vec<PrimOp> {
    let ops = match role {
        Role::S2 => vec![
            PrimOp {
                kind: PrimKind::Kick,
                coeff: c / 2.0,
            },
            PrimOp {
                kind: PrimKind::Drift,
                coeff: c,
            },
            PrimOp {
                kind: PrimKind::Kick,
                coeff: c / 2.0,
            },
        ],
        Role::BasicChi => vec![
            PrimOp {
                kind: PrimKind::Drift,
                coeff: c,
            },
            PrimOp {
                kind: PrimKind::Kick,
                coeff: c,
            },
        ],
        Role::AdjointChi => vec![
            PrimOp {
                kind: PrimKind::Kick,
                coeff: c,
            },
            PrimOp {
                kind: PrimKind::Drift,
                coeff: c,
            },
        ],
        Role::FlowA => vec![PrimOp {
            kind: PrimKind::Drift,
            coeff: c,
        }],
        Role::FlowB => vec![PrimOp {
            kind: PrimKind::Kick,
            coeff: c,
        }],
    };
    ops.into_iter().filter(|op| op.coeff != 0.0).collect()
}

/// A scheme lowered to per-stage primitive lists, with the per-step force
/// evaluation count under the shared-force cost model.
#[derive(Clone, Debug)]
pub struct LoweredScheme {
    pub stage_ops: Vec<Vec<PrimOp>>,
    pub fevals_per_step: usize,
}

/// Lower each stage to primitives, dropping zero-coefficient flows. The cost
/// counts maximal kick runs in the flattened per-step op stream: kicks not
/// separated by a drift see the same positions and share one evaluation.
pub fn lower_scheme(scheme: &SchemeSpec) -> LoweredScheme {
    let stage_ops: Vec<Vec<PrimOp>> = scheme
        .stages
        .iter()
        .map(|&(role, c)| role_primitives(role, c))
        .collect();
    let mut fevals = 0;
    let mut force_valid = false;
    for op in stage_ops.iter().flatten() {
        match op.kind {
            PrimKind::Drift => force_valid = false,
            PrimKind::Kick => {
                if !force_valid {
                    fevals += 1;
                    force_valid = true;
                }
            }
        }
    }
    LoweredScheme {
        stage_ops,
        fevals_per_step: fevals,
    }
}

/// Force evaluations for one step of a scheme.
pub fn per_step_fevals(scheme: &SchemeSpec) -> usize {
    lower_scheme(scheme).fevals_per_step
}

/// One executed step: the new state, the usable stage outputs
/// x_{n,0}..x_{n,K−1} (input state first), and the force evaluations spent.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub x_next: Vec<f64>,
    pub stages: Vec<Vec<f64>>,
    pub fevals: usize,
}

/// Execute one step of size `h` from `x`, recording the state after every
/// stage prefix. The final state is returned separately, never as a stage.
pub fn step_with_stages(
    lowered: &LoweredScheme,
    flows: &FlowSet,
    x: &[f64],
    h: f64,
) -> Result<StepResult, StepperError> {
    let nstages = lowered.stage_ops.len();
    let mut state = x.to_vec();
    let mut stages = Vec::with_capacity(nstages);
    stages.push(state.clone());
    let mut force = vec![0.0; flows.dof()];
    let mut force_valid = false;
    let mut fevals = 0;
    for (si, ops) in lowered.stage_ops.iter().enumerate() {
        for op in ops {
            match op.kind {
                PrimKind::Drift => {
                    flows.drift(op.coeff * h, &mut state);
                    force_valid = false;
                }
                PrimKind::Kick => {
                    if !force_valid {
                        flows.eval_accel(&state, &mut force);
                        fevals += 1;
                        force_valid = true;
                    }
                    flows.kick_with(op.coeff * h, &mut state, &force);
                }
            }
        }
        if !state.iter().all(|v| v.is_finite()) {
            return Err(StepperError::NonFiniteState { step: 0, stage: si });
        }
        if si + 1 < nstages {
            stages.push(state.clone());
        }
    }
    Ok(StepResult {
        x_next: state,
        stages,
        fevals,
    })
}

/// x̃ = Σ_k w_k·x_{n,k} over the captured stage outputs.
pub fn apply_estimator(
    weights: &EstimatorWeights,
    result: &StepResult,
) -> Result<Vec<f64>, StepperError> {
    if weights.w.len() != result.stages.len() {
        return Err(StepperError::WeightsLengthMismatch {
            weights: weights.w.len(),
            stages: result.stages.len(),
        });
    }
    let dim = result.x_next.len();
    let mut out = vec![0.0; dim];
    for (wk, stage) in weights.w.iter().zip(&result.stages) {
        if *wk == 0.0 {
            continue;
        }
        for i in 0..dim {
            out[i] += wk * stage[i];
        }
    }
    Ok(out)
}

/// Blend of a higher- and lower-order error estimate:
/// err5² / sqrt(err5² + 0.01·err3²), with 0/0 defined as 0.
pub fn combined_error(err5: f64, err3: f64) -> f64 {
    if err5 == 0.0 {
        return 0.0;
    }
    if err3 == 0.0 {
        return err5; // the exact value; avoids x²/sqrt(x²) rounding
    }
    let e5sq = err5 * err5;
    e5sq / (e5sq + 0.01 * err3 * err3).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorNorm {
    Euclidean,
    Max,
    /// Euclidean over the position block (first half of the state).
    PositionsOnlyEuclidean,
}

/// ‖a − b‖ in the given norm; positions-only uses the first half.
pub fn diff_norm(norm: ErrorNorm, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let take = match norm {
        ErrorNorm::PositionsOnlyEuclidean => a.len() / 2,
        _ => a.len(),
    };
    match norm {
        ErrorNorm::Max => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
        _ => a[..take]
            .iter()
            .zip(&b[..take])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    }
}

/// Step-size controller settings for [`integrate_adaptive`].
#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub tol: f64,
    pub fac: f64,
    pub facmin: f64,
    pub facmax: f64,
    pub h_init: f64,
    pub max_rejects: u32,
    pub error_norm: ErrorNorm,
    /// Override for the controller exponent; the default is 1/(ℓ+1) for a
    /// single estimator of order ℓ and 1/8 for dual-estimator methods, whose
    /// combined value is treated as an order-7 local estimate.
    pub exponent: Option<f64>,
}

impl ControllerConfig {
    pub fn new(tol: f64, h_init: f64) -> Self {
        ControllerConfig {
            tol,
            fac: 0.9,
            facmin: 0.2,
            facmax: 5.0,
            h_init,
            max_rejects: 20,
            error_norm: ErrorNorm::Euclidean,
            exponent: None,
        }
    }

    pub fn validate(&self) -> Result<(), StepperError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(StepperError::BadController("tol must be positive"));
        }
        if !(self.fac > 0.0 && self.fac <= 1.0) {
            return Err(StepperError::BadController("fac must be in (0, 1]"));
        }
        if !(0.0 < self.facmin && self.facmin < 1.0 && 1.0 < self.facmax) {
            return Err(StepperError::BadController("need 0 < facmin < 1 < facmax"));
        }
        if !(self.h_init > 0.0 && self.h_init.is_finite()) {
            return Err(StepperError::BadController("h_init must be positive"));
        }
        if self.max_rejects == 0 {
            return Err(StepperError::BadController("max_rejects must be positive"));
        }
        if let Some(k) = self.exponent {
            if !(k > 0.0 && k.is_finite()) {
                return Err(StepperError::BadController("exponent must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-step record consumer for trajectory dumps.
pub trait TrajectorySink {
    fn record(&mut self, t: f64, state: &[f64], err: f64, h: f64) -> std::io::Result<()>;
}

/// Fixed-step run output. `times`/`states` hold the initial point plus one
/// entry per step. `est_diffs[e][n]` is the Euclidean full-state distance
/// between estimator e's output and the step-n result.
#[derive(Clone, Debug)]
pub struct FixedRun {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub est_diffs: Vec<Vec<f64>>,
    pub nsteps: usize,
    pub fevals: usize,
    /// True when (t_end − t0)/h was not an integer and the last step was
    /// shortened to land on t_end.
    pub adjusted_final_step: bool,
}

/// Integrate with constant step h from t0 to t_end. When (t_end − t0)/h is
/// within one ulp of an integer the run takes exactly that many steps;
/// otherwise the final step is shortened and flagged.
pub fn integrate_fixed(
    method: &EmbeddedMethod,
    flows: &FlowSet,
    x0: &[f64],
    h: f64,
    t0: f64,
    t_end: f64,
    mut sink: Option<&mut dyn TrajectorySink>,
) -> Result<FixedRun, StepperError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(StepperError::BadRun("h must be positive"));
    }
    if !t0.is_finite() || !t_end.is_finite() || t_end < t0 {
        return Err(StepperError::BadRun(
            "time span must be finite with t_end >= t0",
        ));
    }
    if x0.len() != flows.dim() {
        return Err(StepperError::BadRun("state dimension mismatch"));
    }
    let lowered = lower_scheme(&method.scheme);
    let span = t_end - t0;
    let ratio = span / h;
    let near = ratio.round();
    let integral = (ratio - near).abs() <= ratio.abs() * f64::EPSILON && near > 0.0;
    let (full_steps, partial): (usize, Option<f64>) = if span == 0.0 {
        (0, None)
    } else if integral {
        (near as usize, None)
    } else {
        let nfull = ratio.floor() as usize;
        let rem = span - nfull as f64 * h;
        (nfull, Some(rem))
    };
    let nsteps = full_steps + usize::from(partial.is_some());

    let mut times = Vec::with_capacity(nsteps + 1);
    let mut states = Vec::with_capacity(nsteps + 1);
    let mut est_diffs = vec![Vec::with_capacity(nsteps); method.estimators.len()];
    times.push(t0);
    states.push(x0.to_vec());
    let mut fevals = 0;

    for n in 0..nsteps {
        let hh = if n < full_steps {
            h
        } else {
            partial.expect("partial step exists")
        };
        let result = step_with_stages(&lowered, flows, states.last().expect("nonempty"), hh)
            .map_err(|e| match e {
                StepperError::NonFiniteState { stage, .. } => {
                    StepperError::NonFiniteState { step: n, stage }
                }
                other => other,
            })?;
        for (e, ew) in method.estimators.iter().enumerate() {
            let tilde = apply_estimator(ew, &result)?;
            est_diffs[e].push(diff_norm(ErrorNorm::Euclidean, &tilde, &result.x_next));
        }
        fevals += result.fevals;
        let t = if n + 1 == nsteps && partial.is_some() {
            t_end
        } else {
            t0 + (n + 1) as f64 * h
        };
        if let Some(s) = sink.as_deref_mut() {
            let err = est_diffs
                .first()
                .and_then(|d| d.last())
                .copied()
                .unwrap_or(0.0);
            s.record(t, &result.x_next, err, hh)?;
        }
        times.push(t);
        states.push(result.x_next);
    }

    Ok(FixedRun {
        times,
        states,
        est_diffs,
        nsteps,
        fevals,
        adjusted_final_step: partial.is_some(),
    })
}

/// Adaptive run output. `hs` holds the accepted step sizes; `times`/`states`
/// hold the initial point plus one entry per accepted step.
#[derive(Clone, Debug)]
pub struct AdaptiveRun {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub hs: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub fevals: usize,
}

/// Integrate from t0 to t_end with the standard accept/reject controller:
/// accept when the estimator difference is at most tol, and rescale
/// h ← h·min(facmax, max(facmin, fac·(tol/err)^k)). Dual-estimator methods
/// drive the controller with the combined error.
pub fn integrate_adaptive(
    method: &EmbeddedMethod,
    flows: &FlowSet,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    cfg: &ControllerConfig,
    mut sink: Option<&mut dyn TrajectorySink>,
) -> Result<AdaptiveRun, StepperError> {
    cfg.validate()?;
    if method.estimators.is_empty() {
        return Err(StepperError::NoEstimator);
    }
    if !t0.is_finite() || !t_end.is_finite() || t_end < t0 {
        return Err(StepperError::BadRun(
            "time span must be finite with t_end >= t0",
        ));
    }
    if x0.len() != flows.dim() {
        return Err(StepperError::BadRun("state dimension mismatch"));
    }
    let lowered = lower_scheme(&method.scheme);
    let dual = method.estimators.len() >= 2;
    let k = cfg.exponent.unwrap_or_else(|| {
        if dual {
            1.0 / 8.0
        } else {
            1.0 / (f64::from(method.estimators[0].order) + 1.0)
        }
    });

    let mut times = vec![t0];
    let mut states = vec![x0.to_vec()];
    let mut hs = Vec::new();
    let mut t = t0;
    let mut h = cfg.h_init;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut fevals = 0usize;
    let mut rejects_in_a_row = 0u32;

    while (t_end - t) > 1e-12 * t_end.abs().max(1.0) {
        let hh = h.min(t_end - t);
        let result = step_with_stages(&lowered, flows, states.last().expect("nonempty"), hh)
            .map_err(|e| match e {
                StepperError::NonFiniteState { stage, .. } => StepperError::NonFiniteState {
                    step: accepted + rejected,
                    stage,
                },
                other => other,
            })?;
        fevals += result.fevals;
        let err = if dual {
            let high = apply_estimator(&method.estimators[0], &result)?;
            let low = apply_estimator(&method.estimators[1], &result)?;
            combined_error(
                diff_norm(cfg.error_norm, &high, &result.x_next),
                diff_norm(cfg.error_norm, &low, &result.x_next),
            )
        } else {
            let tilde = apply_estimator(&method.estimators[0], &result)?;
            diff_norm(cfg.error_norm, &tilde, &result.x_next)
        };
        let factor = if err == 0.0 {
            cfg.facmax
        } else {
            (cfg.fac * (cfg.tol / err).powf(k)).clamp(cfg.facmin, cfg.facmax)
        };
        if err <= cfg.tol {
            t += hh;
            times.push(t);
            hs.push(hh);
            if let Some(s) = sink.as_deref_mut() {
                s.record(t, &result.x_next, err, hh)?;
            }
            states.push(result.x_next);
            accepted += 1;
            rejects_in_a_row = 0;
        } else {
            rejected += 1;
            rejects_in_a_row += 1;
            if rejects_in_a_row >= cfg.max_rejects {
                return Err(StepperError::MaxRejects {
                    t,
                    rejects: rejects_in_a_row,
                });
            }
        }
        h = hh * factor;
    }

    Ok(AdaptiveRun {
        times,
        states,
        hs,
        accepted,
        rejected,
        fevals,
    })
}
