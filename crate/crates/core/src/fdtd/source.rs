use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::field::Component;

/// Time dependence of a soft current source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// `exp(-(t-t0)²/2σ²)·sin(2πf0(t-t0))`, with σ = 1/(2π·bandwidth).
    ///
    /// The waveform is odd about `t0`, so it deposits no net charge.
    GaussianPulse { f0: f64, bandwidth: f64, t0: f64 },
    /// `sin(2πf0 t)` switched on by a raised-cosine ramp of length `ramp`.
    Continuous { f0: f64, ramp: f64 },
    /// Single nonzero sample at time step `step`, of unit integrated charge flow.
    Impulse { step: u64 },
}

impl Waveform {
    /// Gaussian pulse starting near t = 0, with `t0` placed on a current
    /// sample time so the discrete charge sum vanishes.
    pub fn gaussian(f0: f64, bandwidth: f64, dt: f64) -> Self {
        let sigma = 1.0 / (2.0 * PI * bandwidth);
        let n0 = (8.0 * sigma / dt).ceil();
        Waveform::GaussianPulse {
            f0,
            bandwidth,
            t0: (n0 + 0.5) * dt,
        }
    }

    /// Current value at time `t`; `step` is the half-step index (t = (step+½)dt).
    pub fn value(&self, t: f64, step: u64, dt: f64) -> f64 {
        match *self {
            Waveform::GaussianPulse { f0, bandwidth, t0 } => {
                let sigma = 1.0 / (2.0 * PI * bandwidth);
                let s = t - t0;
                if s.abs() > 8.0 * sigma {
                    return 0.0;
                }
                (-(s * s) / (2.0 * sigma * sigma)).exp() * (2.0 * PI * f0 * s).sin()
            }
            Waveform::Continuous { f0, ramp } => {
                let env = if ramp <= 0.0 || t >= ramp {
                    1.0
                } else if t <= 0.0 {
                    0.0
                } else {
                    0.5 * (1.0 - (PI * t / ramp).cos())
                };
                env * (2.0 * PI * f0 * t).sin()
            }
            Waveform::Impulse { step: s } => {
                if s == step {
                    1.0 / dt
                } else {
                    0.0
                }
            }
        }
    }

    /// Time after which the source is negligibly small, or `None` if it never turns off.
    pub fn turn_off_time(&self, dt: f64) -> Option<f64> {
        match *self {
            Waveform::GaussianPulse { bandwidth, t0, .. } => {
                Some(t0 + 6.0 / (2.0 * PI * bandwidth))
            }
            Waveform::Continuous { .. } => None,
            Waveform::Impulse { step } => Some((step as f64 + 1.0) * dt),
        }
    }

    pub fn center_frequency(&self) -> Option<f64> {
        match *self {
            Waveform::GaussianPulse { f0, .. } | Waveform::Continuous { f0, .. } => Some(f0),
            Waveform::Impulse { .. } => None,
        }
    }
}

/// Point current density injected at one Yee node of an electric component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceTerm {
    pub component: Component,
    pub index: [usize; 3],
    /// Current density scale (current moment divided by cell volume).
    pub amplitude: f64,
    pub waveform: Waveform,
}

impl SourceTerm {
    pub fn current(&self, t: f64, step: u64, dt: f64) -> f64 {
        self.amplitude * self.waveform.value(t, step, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_pulse_has_zero_discrete_charge() {
        let dt = 0.025;
        let w = Waveform::gaussian(0.27, 0.1, dt);
        let total: f64 = (0..4000)
            .map(|n| w.value((n as f64 + 0.5) * dt, n, dt))
            .sum();
        assert!(total.abs() < 1e-9, "net charge {total}");
    }

    #[test]
    fn continuous_ramp_starts_at_zero() {
        let w = Waveform::Continuous {
            f0: 0.3,
            ramp: 10.0,
        };
        assert_eq!(w.value(0.0, 0, 0.1), 0.0);
        assert!(w.turn_off_time(0.1).is_none());
    }
}
