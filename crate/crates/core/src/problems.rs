//! Test systems with exactly integrable split flows and closed-form
//! reference solutions.

use crate::stepper::FlowSet;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ProblemError {
    #[error("eccentricity must lie in [0, 1), got {0}")]
    BadEccentricity(f64),
    #[error("gravitational parameter must be positive, got {0}")]
    BadMu(f64),
    #[error("position has zero norm")]
    ZeroRadius,
    #[error("Kepler equation solve did not converge after {0} iterations")]
    NoConvergence(u32),
}

/// Planar two-body state in canonical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeplerState {
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub mu: f64,
    pub e: f64,
}

impl KeplerState {
    /// Flat state vector (q, p) for the stepper.
    pub fn to_state(self) -> Vec<f64> {
        vec![self.q[0], self.q[1], self.p[0], self.p[1]]
    }

    pub fn energy(&self) -> f64 {
        kepler_energy(self).expect("state has positive radius")
    }
}

/// H = ½‖p‖² − μ/‖q‖.
pub fn kepler_energy(state: &KeplerState) -> Result<f64, ProblemError> {
    let r = (state.q[0] * state.q[0] + state.q[1] * state.q[1]).sqrt();
    if r == 0.0 {
        return Err(ProblemError::ZeroRadius);
    }
    Ok(0.5 * (state.p[0] * state.p[0] + state.p[1] * state.p[1]) - state.mu / r)
}

/// Split flows of the Kepler Hamiltonian: drift q ← q + τ·p and kick
/// p ← p − τ·μ·q/‖q‖³, at one force evaluation per kick. A kick at zero
/// radius produces a non-finite state, which the stepper reports.
pub fn kepler_flows(mu: f64) -> Result<FlowSet, ProblemError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(ProblemError::BadMu(mu));
    }
    Ok(FlowSet::rkn(2, move |q, out| {
        let r2 = q[0] * q[0] + q[1] * q[1];
        let scale = -mu / (r2 * r2.sqrt());
        out[0] = scale * q[0];
        out[1] = scale * q[1];
    }))
}

/// Perihelion start of an orbit with eccentricity e: q = (1−e, 0),
/// p = (0, sqrt((1+e)/(1−e))), μ = 1; the energy is −1/2 for every e.
pub fn kepler_init(e: f64) -> Result<KeplerState, ProblemError> {
    if !(0.0..1.0).contains(&e) {
        return Err(ProblemError::BadEccentricity(e));
    }
    Ok(KeplerState {
        q: [1.0 - e, 0.0],
        p: [0.0, ((1.0 + e) / (1.0 - e)).sqrt()],
        mu: 1.0,
        e,
    })
}

const KEPLER_NEWTON_TOL: f64 = 1e-14;
const KEPLER_NEWTON_MAX_ITERS: u32 = 50;

/// Exact state at time t for the [`kepler_init`] orbit, via the eccentric
/// anomaly: solve E − e·sin E = t (mod 2π) by Newton iteration, then
/// q = (cos E − e, sqrt(1−e²)·sin E) and p = q′/(1 − e·cos E).
pub fn kepler_exact(e: f64, t: f64) -> Result<KeplerState, ProblemError> {
    if !(0.0..1.0).contains(&e) {
        return Err(ProblemError::BadEccentricity(e));
    }
    let m = t.rem_euclid(2.0 * std::f64::consts::PI);
    let mut big_e = m + e * m.sin();
    let mut converged = false;
    for _ in 0..KEPLER_NEWTON_MAX_ITERS {
        let delta = (big_e - e * big_e.sin() - m) / (1.0 - e * big_e.cos());
        big_e -= delta;
        if delta.abs() <= KEPLER_NEWTON_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ProblemError::NoConvergence(KEPLER_NEWTON_MAX_ITERS));
    }
    let (sin_e, cos_e) = big_e.sin_cos();
    let beta = (1.0 - e * e).sqrt();
    let denom = 1.0 - e * cos_e;
    Ok(KeplerState {
        q: [cos_e - e, beta * sin_e],
        p: [-sin_e / denom, beta * cos_e / denom],
        mu: 1.0,
        e,
    })
}

/// Unit harmonic oscillator ÿ = −y as a split system.
pub fn harmonic_flows() -> FlowSet {
    FlowSet::rkn(1, |q, out| out[0] = -q[0])
}

/// Exact harmonic state at time t from x0 = (y, ẏ): a clockwise rotation of
/// the phase point.
pub fn harmonic_exact(x0: &[f64], t: f64) -> Vec<f64> {
    let (s, c) = t.sin_cos();
    vec![x0[0] * c + x0[1] * s, -x0[0] * s + x0[1] * c]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_states() {
        let s = kepler_init(0.0).unwrap();
        assert_eq!(s.q, [1.0, 0.0]);
        assert_eq!(s.p, [0.0, 1.0]);
        for e in [0.0, 0.2, 0.4, 0.6, 0.8] {
            let s = kepler_init(e).unwrap();
            assert!((s.energy() + 0.5).abs() < 1e-14);
        }
        assert!(kepler_init(1.0).is_err());
        assert!(kepler_init(-0.1).is_err());
    }

    #[test]
    fn energy_direct_value() {
        let s = KeplerState {
            q: [1.0, 0.0],
            p: [0.0, 0.0],
            mu: 1.0,
            e: 0.0,
        };
        assert_eq!(kepler_energy(&s).unwrap(), -1.0);
        let zero = KeplerState {
            q: [0.0, 0.0],
            p: [0.0, 0.0],
            mu: 1.0,
            e: 0.0,
        };
        assert!(kepler_energy(&zero).is_err());
    }

    #[test]
    fn exact_solution_landmarks() {
        for e in [0.0, 0.3, 0.7] {
            let s0 = kepler_exact(e, 0.0).unwrap();
            let init = kepler_init(e).unwrap();
            assert!((s0.q[0] - init.q[0]).abs() < 1e-14);
            assert!((s0.p[1] - init.p[1]).abs() < 1e-14);
        }
        // Half period of the e=0.5 orbit: aphelion, moving in −y.
        let s = kepler_exact(0.5, std::f64::consts::PI).unwrap();
        assert!((s.q[0] + 1.5).abs() < 1e-13);
        assert!(s.q[1].abs() < 1e-13);
        assert!(s.p[0].abs() < 1e-13);
        assert!((s.p[1] + (1.0f64 / 3.0).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn harmonic_quarter_turn() {
        let x = harmonic_exact(&[1.0, 0.0], std::f64::consts::FRAC_PI_2);
        assert!(x[0].abs() < 1e-15);
        assert!((x[1] + 1.0).abs() < 1e-15);
        assert_eq!(harmonic_exact(&[0.4, -0.2], 0.0), vec![0.4, -0.2]);
    }

    #[test]
    fn kick_and_drift_preserve_their_complements() {
        let flows = kepler_flows(1.0).unwrap();
        let mut state = vec![0.8, 0.1, -0.2, 0.9];
        flows.apply_role(crate::opalg::Role::FlowA, 0.3, &mut state);
        assert_eq!(&state[2..], &[-0.2, 0.9]); // drift leaves p alone
        let q_before = [state[0], state[1]];
        flows.apply_role(crate::opalg::Role::FlowB, 0.3, &mut state);
        assert_eq!(&state[..2], &q_before); // kick leaves q alone
    }
}
