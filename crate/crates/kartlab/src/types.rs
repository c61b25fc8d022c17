//! Domain types shared across the simulator, the learned model, the
//! controller, and the adaptation loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::INPUT_DIM;

/// Dynamic state of the vehicle in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Roll angle (rad).
    pub phi: f64,
    /// Longitudinal velocity (m/s).
    pub vx: f64,
    /// Lateral velocity (m/s).
    pub vy: f64,
    /// Yaw rate (rad/s).
    pub r: f64,
}

impl VehicleState {
    pub fn to_array(self) -> [f64; 4] {
        [self.phi, self.vx, self.vy, self.r]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        VehicleState {
            phi: a[0],
            vx: a[1],
            vy: a[2],
            r: a[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.vx.is_finite() && self.vy.is_finite() && self.r.is_finite()
    }
}

/// World pose. `psi` is kept unwrapped (never reduced modulo 2*pi) so the
/// yaw error term of the rollout loss stays continuous.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite()
    }
}

/// Two-channel normalized command: steering and acceleration, each in
/// [-1, 1] after clamping. Sampled perturbations are added upstream (in the
/// controller) and clamped here.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Steering command, normalized.
    pub steer: f64,
    /// Acceleration command, normalized.
    pub accel: f64,
}

impl ControlInput {
    pub fn new(steer: f64, accel: f64) -> Self {
        ControlInput { steer, accel }
    }

    pub fn clamped(self) -> Self {
        ControlInput {
            steer: self.steer.clamp(-1.0, 1.0),
            accel: self.accel.clamp(-1.0, 1.0),
        }
    }
}

/// One measured tuple of a trajectory log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: VehicleState,
    pub pose: Pose,
    pub input: ControlInput,
}

impl Sample {
    /// Raw (unnormalized) network input `[phi, vx, vy, r, steer, accel]`.
    pub fn net_input(&self) -> [f64; INPUT_DIM] {
        [
            self.state.phi,
            self.state.vx,
            self.state.vy,
            self.state.r,
            self.input.steer,
            self.input.accel,
        ]
    }
}

/// A window of consecutive measured samples spaced `dt` apart: the unit of
/// online adaptation and of the rollout training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub dt: f64,
    pub samples: Vec<Sample>,
}

impl SampleWindow {
    pub fn new(dt: f64, samples: Vec<Sample>) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::InvalidArg(format!("window dt must be > 0, got {dt}")));
        }
        if samples.len() < 2 {
            return Err(Error::WindowTooShort(samples.len()));
        }
        Ok(SampleWindow { dt, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of prediction steps the window supports (its length minus the
    /// seeding sample).
    pub fn horizon(&self) -> usize {
        self.samples.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_input_clamps_to_unit_box() {
        let u = ControlInput::new(1.7, -2.3).clamped();
        assert_eq!(u.steer, 1.0);
        assert_eq!(u.accel, -1.0);
        let v = ControlInput::new(0.4, -0.2).clamped();
        assert_eq!(v, ControlInput::new(0.4, -0.2));
    }

    #[test]
    fn window_rejects_too_short() {
        let s = Sample {
            state: VehicleState::default(),
            pose: Pose::default(),
            input: ControlInput::default(),
        };
        assert!(matches!(
            SampleWindow::new(0.02, vec![s]),
            Err(Error::WindowTooShort(1))
        ));
        assert!(SampleWindow::new(0.02, vec![s, s]).is_ok());
        assert!(SampleWindow::new(0.0, vec![s, s]).is_err());
    }

    #[test]
    fn net_input_ordering() {
        let s = Sample {
            state: VehicleState {
                phi: 0.1,
                vx: 1.0,
                vy: -0.2,
                r: 0.5,
            },
            pose: Pose::default(),
            input: ControlInput::new(0.3, -0.7),
        };
        assert_eq!(s.net_input(), [0.1, 1.0, -0.2, 0.5, 0.3, -0.7]);
    }
}
