//! Self-adjusting gradient balancer.
//!
//! Each class carries a PID controller whose measured variable is
//! `delta = cum_pos - cum_neg`, the difference between the cumulative
//! re-weighted positive and negative logit-gradient magnitudes seen during
//! the current local training. The controller output `u` is squashed through
//! a logistic `phi` into a pair of coefficients: a class lagging its target
//! (`u < 0`) gets its positive gradients amplified and its negative gradients
//! suppressed, and the reverse when it leads.
//!
//! A per-class gate decides whether the controller's coefficients are used on
//! a given batch: with a fresh uniform draw `r`, the coefficients apply when
//! `r > threshold_j` and the neutral pair `(1, 1)` is used otherwise. The
//! threshold is normally the class's prior mass from the prior analyzer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coefficients, LogitGradientSplit};

fn default_kp() -> f64 {
    10.0
}
fn default_ki() -> f64 {
    0.01
}
fn default_kd() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}
fn default_integral_bound() -> f64 {
    1e6
}

/// Controller gains, activation shape, and setpoint shared by all classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgbGains {
    #[serde(default = "default_kp")]
    pub kp: f64,
    #[serde(default = "default_ki")]
    pub ki: f64,
    #[serde(default = "default_kd")]
    pub kd: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_one")]
    pub delta: f64,
    #[serde(default = "default_one")]
    pub zeta: f64,
    #[serde(default)]
    pub target: f64,
    /// Anti-windup clamp on `|integral|`.
    #[serde(default = "default_integral_bound")]
    pub integral_bound: f64,
}

impl Default for SgbGains {
    fn default() -> Self {
        Self {
            kp: default_kp(),
            ki: default_ki(),
            kd: default_kd(),
            gamma: default_gamma(),
            delta: 1.0,
            zeta: 1.0,
            target: 0.0,
            integral_bound: default_integral_bound(),
        }
    }
}

impl SgbGains {
    pub fn with_pid(kp: f64, ki: f64, kd: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("sgb.{field}"), what))
            }
        };
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            check(name, v >= 0.0 && v.is_finite(), "must be finite and >= 0")?;
        }
        for (name, v) in [("gamma", self.gamma), ("delta", self.delta), ("zeta", self.zeta)] {
            check(name, v > 0.0 && v.is_finite(), "must be finite and > 0")?;
        }
        check("target", self.target.is_finite(), "must be finite")?;
        check("integral_bound", self.integral_bound > 0.0, "must be > 0")
    }
}

/// Controller memory for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SgbClassState {
    /// Sum of re-weighted positive magnitudes.
    pub cum_pos: f64,
    /// Sum of re-weighted negative magnitudes.
    pub cum_neg: f64,
    /// Sums of the raw (unweighted) magnitudes, kept for diagnostics.
    pub raw_pos: f64,
    pub raw_neg: f64,
    pub integral: f64,
    pub prev_error: f64,
    pub step: u64,
}

impl SgbClassState {
    pub fn delta(&self) -> f64 {
        self.cum_pos - self.cum_neg
    }

    /// Signed cumulative difference of the raw magnitudes.
    pub fn raw_delta(&self) -> f64 {
        self.raw_pos - self.raw_neg
    }

    pub fn raw_magnitude(&self) -> f64 {
        self.raw_pos + self.raw_neg
    }
}

/// Result of one controller evaluation, committed by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidOutput {
    pub u: f64,
    pub error: f64,
    pub integral: f64,
}

pub fn pid_output(state: &SgbClassState, gains: &SgbGains, delta_now: f64) -> PidOutput {
    let error = delta_now - gains.target;
    let integral = (state.integral + error).clamp(-gains.integral_bound, gains.integral_bound);
    let u = gains.kp * error + gains.ki * integral + gains.kd * (error - state.prev_error);
    PidOutput { u, error, integral }
}

/// Logistic activation `gamma / (1 + delta * exp(-zeta * x))`.
pub fn phi(x: f64, gamma: f64, delta: f64, zeta: f64) -> f64 {
    gamma / (1.0 + delta * (-zeta * x).exp())
}

/// Gated coefficient pair for one class on one batch.
pub fn coefficients(u: f64, threshold: f64, r: f64, gains: &SgbGains) -> Coefficients {
    if r > threshold {
        Coefficients {
            pos: phi(-u, gains.gamma, gains.delta, gains.zeta),
            neg: phi(u, gains.gamma, gains.delta, gains.zeta),
        }
    } else {
        Coefficients::NEUTRAL
    }
}

/// Add a batch's magnitudes to the collector.
pub fn collect(state: &mut SgbClassState, coeffs: Coefficients, raw_pos: f64, raw_neg: f64) {
    state.cum_pos += coeffs.pos * raw_pos;
    state.cum_neg += coeffs.neg * raw_neg;
    state.raw_pos += raw_pos;
    state.raw_neg += raw_neg;
    state.step += 1;
}

/// What the controller did for one class on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStep {
    pub delta: f64,
    pub error: f64,
    pub u: f64,
    pub coeffs: Coefficients,
}

/// One controller per class, owned by a single client for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct SgbBank {
    pub states: Vec<SgbClassState>,
    pub gains: SgbGains,
}

impl SgbBank {
    pub fn new(num_classes: usize, gains: SgbGains) -> Self {
        Self {
            states: vec![SgbClassState::default(); num_classes],
            gains,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.states.len()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.states.iter().map(SgbClassState::delta).collect()
    }

    /// error -> PID -> gate -> collect for every class; returns what each
    /// class used so the caller can re-weight this batch's backprop.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        thresholds: &[f64],
        split: &LogitGradientSplit,
        rng: &mut R,
    ) -> Result<Vec<ClassStep>> {
        let m = self.states.len();
        if thresholds.len() != m || split.pos.len() != m || split.neg.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "bank has {m} classes, got {} thresholds and a {}-class split",
                thresholds.len(),
                split.pos.len()
            )));
        }
        let gains = self.gains;
        let mut out = Vec::with_capacity(m);
        for (j, state) in self.states.iter_mut().enumerate() {
            let delta = state.delta();
            let pid = pid_output(state, &gains, delta);
            let r: f64 = rng.random();
            let coeffs = coefficients(pid.u, thresholds[j], r, &gains);
            state.integral = pid.integral;
            state.prev_error = pid.error;
            collect(state, coeffs, split.pos[j], split.neg[j]);
            if !(state.delta().is_finite() && pid.u.is_finite()) {
                return Err(Error::NonFinite("controller state"));
            }
            out.push(ClassStep {
                delta,
                error: pid.error,
                u: pid.u,
                coeffs,
            });
        }
        Ok(out)
    }

    /// Record a batch without any re-weighting.
    pub fn observe_neutral(&mut self, split: &LogitGradientSplit) {
        for (j, state) in self.states.iter_mut().enumerate() {
            collect(state, Coefficients::NEUTRAL, split.pos[j], split.neg[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn pid_zero_error() {
        let out = pid_output(&SgbClassState::default(), &SgbGains::default(), 0.0);
        assert_eq!(out.u, 0.0);
    }

    #[test]
    fn pid_direct_substitution() {
        let gains = SgbGains::with_pid(10.0, 0.01, 0.1);
        let out = pid_output(&SgbClassState::default(), &gains, 0.5);
        assert!(close(out.u, 5.055), "{}", out.u);
        assert_eq!(out.integral, 0.5);
        assert_eq!(out.error, 0.5);
    }

    #[test]
    fn pid_pure_proportional() {
        let gains = SgbGains::with_pid(3.0, 0.0, 0.0);
        let state = SgbClassState {
            integral: 40.0,
            prev_error: -2.0,
            ..Default::default()
        };
        assert!(close(pid_output(&state, &gains, 0.7).u, 2.1));
    }

    #[test]
    fn pid_error_is_relative_to_target() {
        let gains = SgbGains {
            target: -1.0,
            ..SgbGains::with_pid(1.0, 0.0, 0.0)
        };
        assert!(close(pid_output(&SgbClassState::default(), &gains, -1.0).u, 0.0));
    }

    #[test]
    fn integral_is_clamped() {
        let gains = SgbGains {
            integral_bound: 5.0,
            ..SgbGains::with_pid(0.0, 1.0, 0.0)
        };
        let state = SgbClassState {
            integral: -4.5,
            ..Default::default()
        };
        let out = pid_output(&state, &gains, -3.0);
        assert_eq!(out.integral, -5.0);
        assert_eq!(out.u, -5.0);
    }

    #[test]
    fn phi_values_and_limits() {
        assert!(close(phi(0.0, 2.0, 1.0, 1.0), 1.0));
        assert!(close(phi(1e3, 2.0, 1.0, 1.0), 2.0));
        assert!(phi(-1e3, 2.0, 1.0, 1.0) < 1e-300);
        for x in [-3.0, -0.2, 0.7, 5.0] {
            assert!(close(phi(x, 2.0, 1.0, 0.5) + phi(-x, 2.0, 1.0, 0.5), 2.0));
        }
    }

    #[test]
    fn gate_open_uses_controller() {
        let g = SgbGains::default();
        let c = coefficients(0.8, 0.05, 0.9, &g);
        assert!(close(c.pos, phi(-0.8, 2.0, 1.0, 1.0)));
        assert!(close(c.neg, phi(0.8, 2.0, 1.0, 1.0)));
    }

    #[test]
    fn gate_closed_is_neutral() {
        let c = coefficients(0.8, 0.3, 0.01, &SgbGains::default());
        assert_eq!(c, Coefficients::NEUTRAL);
        // r equal to the threshold stays closed
        assert_eq!(coefficients(0.8, 0.3, 0.3, &SgbGains::default()), Coefficients::NEUTRAL);
    }

    #[test]
    fn zero_output_is_neutral_either_way() {
        let g = SgbGains::default();
        for r in [0.0, 0.5, 0.99] {
            let c = coefficients(0.0, 0.2, r, &g);
            assert!(close(c.pos, 1.0) && close(c.neg, 1.0));
        }
    }

    #[test]
    fn coefficients_monotone_in_u() {
        let g = SgbGains::default();
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
        for w in grid.windows(2) {
            let a = coefficients(w[0], 0.0, 0.5, &g);
            let b = coefficients(w[1], 0.0, 0.5, &g);
            assert!(b.pos < a.pos, "pos not decreasing at {}", w[1]);
            assert!(b.neg > a.neg, "neg not increasing at {}", w[1]);
        }
    }

    #[test]
    fn collect_arithmetic() {
        let mut s = SgbClassState::default();
        collect(&mut s, Coefficients::NEUTRAL, 0.5, 0.5);
        assert_eq!(s.delta(), 0.0);
        collect(&mut s, Coefficients::NEUTRAL, 0.0, 0.0);
        assert_eq!(s.delta(), 0.0);
        assert_eq!(s.step, 2);
        let mut t = SgbClassState::default();
        collect(&mut t, Coefficients { pos: 2.0, neg: 0.5 }, 1.0, 1.0);
        assert_eq!(t.delta(), 1.5);
        assert_eq!(t.raw_delta(), 0.0);
        assert_eq!(t.raw_magnitude(), 2.0);
    }

    #[test]
    fn balanced_stream_stays_at_fixed_point() {
        let mut bank = SgbBank::new(3, SgbGains::default());
        let split = LogitGradientSplit {
            pos: vec![0.4, 0.2, 0.7],
            neg: vec![0.4, 0.2, 0.7],
        };
        let mut rng = stream_rng(1, 0, 0, Stream::Gate);
        for _ in 0..50 {
            for step in bank.step(&[0.0; 3], &split, &mut rng).unwrap() {
                assert_eq!(step.error, 0.0);
                assert_eq!(step.coeffs, Coefficients::NEUTRAL);
            }
        }
    }

    #[test]
    fn threshold_one_never_reweights() {
        let mut bank = SgbBank::new(2, SgbGains::default());
        let split = LogitGradientSplit {
            pos: vec![0.0, 1.0],
            neg: vec![1.0, 0.0],
        };
        let mut rng = stream_rng(2, 0, 0, Stream::Gate);
        for _ in 0..100 {
            for step in bank.step(&[1.0; 2], &split, &mut rng).unwrap() {
                assert_eq!(step.coeffs, Coefficients::NEUTRAL);
            }
        }
    }

    #[test]
    fn starved_tail_suppresses_negatives_and_amplifies_positives() {
        let mut bank = SgbBank::new(2, SgbGains::default());
        let mut rng = stream_rng(3, 0, 0, Stream::Gate);
        let split = LogitGradientSplit {
            pos: vec![0.6, 0.0],
            neg: vec![0.0, 0.6],
        };
        let mut steps = Vec::new();
        for _ in 0..100 {
            steps.push(bank.step(&[0.0; 2], &split, &mut rng).unwrap()[1]);
        }
        for s in &steps[1..] {
            assert!(s.delta < 0.0 && s.error < 0.0 && s.u < 0.0);
            assert!(s.coeffs.neg < 1.0 && s.coeffs.pos > 1.0);
        }
    }

    #[test]
    fn step_rejects_shape_mismatch() {
        let mut bank = SgbBank::new(2, SgbGains::default());
        let split = LogitGradientSplit {
            pos: vec![0.0; 3],
            neg: vec![0.0; 3],
        };
        let mut rng = stream_rng(3, 0, 0, Stream::Gate);
        assert!(bank.step(&[0.0; 2], &split, &mut rng).is_err());
    }

    #[test]
    fn gains_validation() {
        assert!(SgbGains::default().validate().is_ok());
        assert!(SgbGains { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(SgbGains { kp: -1.0, ..Default::default() }.validate().is_err());
    }
}
