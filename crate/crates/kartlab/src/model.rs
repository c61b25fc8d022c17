//! The network as a discrete-time vehicle model, plus the multi-step
//! rollout loss used for offline training and online adaptation.
//!
//! State update is explicit Euler on the learned derivative:
//! `x(t+1) = x(t) + f(x(t), u(t)) * dt`. World pose follows kinematically
//! from the state, always using the pre-update state and heading. The
//! rollout loss seeds a prediction from a window's first measured sample,
//! propagates under the recorded inputs, and sums squared X, Y, roll, and
//! yaw errors against the measurements over the whole horizon; its gradient
//! flows through the full state and pose recurrence.

use crate::error::{Error, Result};
use crate::nn::{self, Gradient, MlpParams, Normalizer, OUTPUT_DIM};
use crate::types::{ControlInput, Pose, SampleWindow, VehicleState};

/// One Euler step of the learned model. Inputs are standardized with the
/// frozen statistics before hitting the network.
pub fn step(
    params: &MlpParams,
    norm: &Normalizer,
    s: &VehicleState,
    u: &ControlInput,
    dt: f64,
) -> Result<VehicleState> {
    debug_assert!(dt > 0.0);
    let raw = [s.phi, s.vx, s.vy, s.r, u.steer, u.accel];
    let z = norm.normalize(&raw);
    let f = nn::forward(params, &z);
    let next = VehicleState {
        phi: s.phi + f[0] * dt,
        vx: s.vx + f[1] * dt,
        vy: s.vy + f[2] * dt,
        r: s.r + f[3] * dt,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite(format!(
            "model step from state {s:?} under input {u:?}"
        )));
    }
    Ok(next)
}

/// Kinematic pose propagation from the pre-update state:
/// `psi += r dt`, `X += (vx cos psi - vy sin psi) dt`,
/// `Y += (vx sin psi + vy cos psi) dt`, with the pre-update heading in the
/// position terms.
pub fn propagate_pose(p: &Pose, s: &VehicleState, dt: f64) -> Pose {
    let (sin_psi, cos_psi) = p.psi.sin_cos();
    Pose {
        x: p.x + (s.vx * cos_psi - s.vy * sin_psi) * dt,
        y: p.y + (s.vx * sin_psi + s.vy * cos_psi) * dt,
        psi: p.psi + s.r * dt,
    }
}

/// Multi-step propagation: returns every intermediate (state, pose) pair,
/// one per input.
pub fn rollout(
    params: &MlpParams,
    norm: &Normalizer,
    s0: &VehicleState,
    p0: &Pose,
    inputs: &[ControlInput],
    dt: f64,
) -> Result<Vec<(VehicleState, Pose)>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArg("rollout: empty input sequence".into()));
    }
    let mut out = Vec::with_capacity(inputs.len());
    let mut s = *s0;
    let mut p = *p0;
    for u in inputs {
        let s_next = step(params, norm, &s, u, dt)?;
        let p_next = propagate_pose(&p, &s, dt);
        out.push((s_next, p_next));
        s = s_next;
        p = p_next;
    }
    Ok(out)
}

/// Rollout loss of a window: squared X, Y, roll, and yaw error summed over
/// every predicted step. Serves both the pre-training horizon and the
/// short online-adaptation horizon.
pub fn rollout_loss(params: &MlpParams, norm: &Normalizer, window: &SampleWindow) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::WindowTooShort(window.len()));
    }
    let first = &window.samples[0];
    let mut s = first.state;
    let mut p = first.pose;
    let mut loss = 0.0;
    for t in 1..window.len() {
        let u = window.samples[t - 1].input;
        let s_next = step(params, norm, &s, &u, window.dt)?;
        let p_next = propagate_pose(&p, &s, window.dt);
        let m = &window.samples[t];
        let dx = p_next.x - m.pose.x;
        let dy = p_next.y - m.pose.y;
        let dphi = s_next.phi - m.state.phi;
        let dpsi = p_next.psi - m.pose.psi;
        loss += dx * dx + dy * dy + dphi * dphi + dpsi * dpsi;
        s = s_next;
        p = p_next;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("rollout loss".into()));
    }
    Ok(loss)
}

/// Rollout loss plus its exact parameter gradient, backpropagated through
/// the state and pose recurrence of the whole window.
pub fn window_loss_and_grad(
    params: &MlpParams,
    norm: &Normalizer,
    window: &SampleWindow,
) -> Result<(f64, Gradient)> {
    if window.len() < 2 {
        return Err(Error::WindowTooShort(window.len()));
    }
    let n = window.horizon();
    let dt = window.dt;
    let first = &window.samples[0];

    // Forward sweep, recording predicted states, poses, normalized inputs,
    // and activation tapes.
    let mut states = Vec::with_capacity(n + 1);
    let mut poses = Vec::with_capacity(n + 1);
    let mut zs = Vec::with_capacity(n);
    let mut tapes = Vec::with_capacity(n);
    states.push(first.state);
    poses.push(first.pose);
    let mut loss = 0.0;
    for t in 0..n {
        let s = states[t];
        let p = poses[t];
        let u = window.samples[t].input;
        let raw = [s.phi, s.vx, s.vy, s.r, u.steer, u.accel];
        let z = norm.normalize(&raw);
        let tape = nn::forward_tape(params, &z);
        let s_next = VehicleState {
            phi: s.phi + tape.y[0] * dt,
            vx: s.vx + tape.y[1] * dt,
            vy: s.vy + tape.y[2] * dt,
            r: s.r + tape.y[3] * dt,
        };
        if !s_next.is_finite() {
            return Err(Error::NonFinite(format!(
                "model step {t} of window rollout"
            )));
        }
        let p_next = propagate_pose(&p, &s, dt);
        let m = &window.samples[t + 1];
        let dx = p_next.x - m.pose.x;
        let dy = p_next.y - m.pose.y;
        let dphi = s_next.phi - m.state.phi;
        let dpsi = p_next.psi - m.pose.psi;
        loss += dx * dx + dy * dy + dphi * dphi + dpsi * dpsi;
        states.push(s_next);
        poses.push(p_next);
        zs.push(z);
        tapes.push(tape);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("rollout loss".into()));
    }

    // Reverse sweep. `ax` is dL/d(state_t) as [phi, vx, vy, r]; `ap` is
    // dL/d(pose_t) as [X, Y, psi].
    let mut grad = Gradient::zeros();
    let last = window.len() - 1;
    let mut ax = [
        2.0 * (states[last].phi - window.samples[last].state.phi),
        0.0,
        0.0,
        0.0,
    ];
    let mut ap = [
        2.0 * (poses[last].x - window.samples[last].pose.x),
        2.0 * (poses[last].y - window.samples[last].pose.y),
        2.0 * (poses[last].psi - window.samples[last].pose.psi),
    ];
    for t in (0..n).rev() {
        let s = states[t];
        let (sin_psi, cos_psi) = poses[t].psi.sin_cos();

        // Through the pose recurrence (which reads the pre-update state).
        let mut ax_t = [
            ax[0],
            ax[1] + ap[0] * cos_psi * dt + ap[1] * sin_psi * dt,
            ax[2] - ap[0] * sin_psi * dt + ap[1] * cos_psi * dt,
            ax[3] + ap[2] * dt,
        ];
        let mut ap_t = [
            ap[0],
            ap[1],
            ap[2]
                + ap[0] * (-s.vx * sin_psi - s.vy * cos_psi) * dt
                + ap[1] * (s.vx * cos_psi - s.vy * sin_psi) * dt,
        ];

        // Through the Euler state update: parameter gradient plus the
        // chain back into the pre-update state via the network input.
        let out_grad: [f64; OUTPUT_DIM] = [ax[0] * dt, ax[1] * dt, ax[2] * dt, ax[3] * dt];
        let dz = nn::backward_single(params, &zs[t], &tapes[t], &out_grad, &mut grad);
        for c in 0..4 {
            ax_t[c] += dz[c] / norm.std[c];
        }

        // Direct loss terms at step t (none at the seed).
        if t >= 1 {
            let m = &window.samples[t];
            ax_t[0] += 2.0 * (states[t].phi - m.state.phi);
            ap_t[0] += 2.0 * (poses[t].x - m.pose.x);
            ap_t[1] += 2.0 * (poses[t].y - m.pose.y);
            ap_t[2] += 2.0 * (poses[t].psi - m.pose.psi);
        }
        ax = ax_t;
        ap = ap_t;
    }
    Ok((loss, grad))
}
