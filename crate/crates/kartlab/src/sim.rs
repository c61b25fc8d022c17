//! Ground-truth plant: a dynamic bicycle model with friction-dependent
//! brush tires, first-order steering and roll dynamics, and a
//! position-dependent surface map. Serves as both the data generator and
//! the closed-loop vehicle.
//!
//! None of these physical constants describe a specific real platform;
//! they are desk-scale stand-ins sized for a one-tenth kart and are fully
//! configurable.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ControlInput, Pose, VehicleState};

/// Low-speed guard for slip-angle computation.
const V_EPS: f64 = 0.05;
const GRAVITY: f64 = 9.81;

/// Per-channel observation noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseStd {
    pub phi: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Default for NoiseStd {
    fn default() -> Self {
        NoiseStd {
            phi: 0.002,
            vx: 0.01,
            vy: 0.01,
            r: 0.02,
            x: 0.002,
            y: 0.002,
            psi: 0.004,
        }
    }
}

impl NoiseStd {
    pub fn zero() -> Self {
        NoiseStd {
            phi: 0.0,
            vx: 0.0,
            vy: 0.0,
            r: 0.0,
            x: 0.0,
            y: 0.0,
            psi: 0.0,
        }
    }
}

/// Physical constants of the simulated kart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Yaw moment of inertia (kg m^2).
    pub inertia_z: f64,
    /// Distance from CG to front axle (m).
    pub len_front: f64,
    /// Distance from CG to rear axle (m).
    pub len_rear: f64,
    /// Tire cornering stiffness per unit friction coefficient (N/rad).
    pub stiffness_per_mu: f64,
    /// Steering angle at full command (rad).
    pub max_steer: f64,
    /// Commanded acceleration at full command (m/s^2).
    pub max_accel: f64,
    /// First-order steering actuator lag (s).
    pub steer_lag: f64,
    /// Steady-state roll angle per unit lateral acceleration (rad/(m/s^2)).
    pub roll_gain: f64,
    /// First-order roll response lag (s).
    pub roll_lag: f64,
    /// Rolling-resistance deceleration coefficient (fraction of g).
    pub rolling_resist: f64,
    /// Internal integration substep (s); must divide the control period.
    pub dt_sim: f64,
    pub noise_std: NoiseStd,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mass: 3.5,
            inertia_z: 0.047,
            len_front: 0.16,
            len_rear: 0.17,
            stiffness_per_mu: 140.0,
            max_steer: 0.40,
            max_accel: 5.0,
            steer_lag: 0.06,
            roll_gain: 0.012,
            roll_lag: 0.12,
            rolling_resist: 0.015,
            dt_sim: 0.002,
            noise_std: NoiseStd::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self, control_dt: f64) -> Result<()> {
        let positive = [
            self.mass,
            self.inertia_z,
            self.len_front,
            self.len_rear,
            self.stiffness_per_mu,
            self.max_steer,
            self.max_accel,
            self.steer_lag,
            self.roll_lag,
            self.dt_sim,
        ];
        if positive.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("all physical constants must be > 0".into()));
        }
        if self.dt_sim > 0.002 + 1e-12 {
            return Err(Error::Config(format!(
                "dt_sim {} exceeds 0.002 s",
                self.dt_sim
            )));
        }
        let ratio = control_dt / self.dt_sim;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Config(format!(
                "dt_sim {} must divide the control period {}",
                self.dt_sim, control_dt
            )));
        }
        Ok(())
    }
}

/// A half-plane friction region: claims every point with
/// `normal . (x, y) >= offset`. First matching region wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRegion {
    pub id: String,
    pub mu: f64,
    pub normal: [f64; 2],
    pub offset: f64,
}

/// Ordered friction regions over the plane with a default surface
/// everywhere else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMap {
    pub default_id: String,
    pub default_mu: f64,
    pub regions: Vec<SurfaceRegion>,
}

impl Default for SurfaceMap {
    fn default() -> Self {
        SurfaceMap::uniform_cement()
    }
}

impl SurfaceMap {
    /// Uniform cement floor (the pre-training surface).
    pub fn uniform_cement() -> Self {
        SurfaceMap {
            default_id: "cement".into(),
            default_mu: 0.9,
            regions: Vec::new(),
        }
    }

    /// The two-mat layout: rubber for X >= 0, foam for X < 0, with the
    /// transition through the middle of both straights.
    pub fn two_mats() -> Self {
        SurfaceMap {
            default_id: "cement".into(),
            default_mu: 0.9,
            regions: vec![
                SurfaceRegion {
                    id: "rubber".into(),
                    mu: 1.2,
                    normal: [1.0, 0.0],
                    offset: 0.0,
                },
                SurfaceRegion {
                    id: "foam".into(),
                    mu: 0.6,
                    normal: [-1.0, 0.0],
                    offset: 0.0,
                },
            ],
        }
    }

    /// Uniform world of one named surface.
    pub fn uniform(id: &str, mu: f64) -> Self {
        SurfaceMap {
            default_id: id.into(),
            default_mu: mu,
            regions: Vec::new(),
        }
    }

    /// Deterministic lookup; ties on region boundaries go to the region
    /// listed first.
    pub fn surface_at(&self, x: f64, y: f64) -> (&str, f64) {
        for region in &self.regions {
            if region.normal[0] * x + region.normal[1] * y >= region.offset {
                return (&region.id, region.mu);
            }
        }
        (&self.default_id, self.default_mu)
    }
}

/// Full internal plant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub pose: Pose,
    pub state: VehicleState,
    /// Actual (lagged) steering angle (rad).
    pub steer_angle: f64,
}

impl SimState {
    pub fn at_rest(pose: Pose) -> Self {
        SimState {
            pose,
            state: VehicleState::default(),
            steer_angle: 0.0,
        }
    }
}

/// Fiala brush-tire lateral force saturating at the friction limit.
fn fiala_lateral(stiffness: f64, limit: f64, slip: f64) -> f64 {
    let t = slip.tan();
    let ct = stiffness * t;
    if ct.abs() >= 3.0 * limit {
        return -limit * t.signum();
    }
    -ct * (1.0 - ct.abs() / (3.0 * limit) + ct * ct / (27.0 * limit * limit))
}

/// The plant. Single-owner mutable state; clone for independent replicates.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: SimConfig,
    pub map: SurfaceMap,
    pub sim: SimState,
    pub time: f64,
}

/// Integration state vector: [X, Y, psi, vx, vy, r, steer, phi].
type PlantVec = [f64; 8];

impl Simulator {
    pub fn new(cfg: SimConfig, map: SurfaceMap, start: Pose) -> Self {
        Simulator {
            cfg,
            map,
            sim: SimState::at_rest(start),
            time: 0.0,
        }
    }

    pub fn surface_here(&self) -> (&str, f64) {
        self.map.surface_at(self.sim.pose.x, self.sim.pose.y)
    }

    fn pack(&self) -> PlantVec {
        let s = &self.sim;
        [
            s.pose.x,
            s.pose.y,
            s.pose.psi,
            s.state.vx,
            s.state.vy,
            s.state.r,
            s.steer_angle,
            s.state.phi,
        ]
    }

    fn unpack(&mut self, y: PlantVec) {
        self.sim.pose.x = y[0];
        self.sim.pose.y = y[1];
        self.sim.pose.psi = y[2];
        self.sim.state.vx = y[3].max(0.0); // no reverse in these experiments
        self.sim.state.vy = y[4];
        self.sim.state.r = y[5];
        self.sim.steer_angle = y[6];
        self.sim.state.phi = y[7];
    }

    /// Body-frame derivative with the friction coefficient frozen for the
    /// substep.
    fn derivative(&self, y: &PlantVec, steer_cmd: f64, accel_cmd: f64, mu: f64) -> PlantVec {
        let cfg = &self.cfg;
        let (psi, vx, vy, r, steer, phi) = (y[2], y[3], y[4], y[5], y[6], y[7]);
        let vx_eff = vx.max(V_EPS);

        let slip_f = (vy + cfg.len_front * r).atan2(vx_eff) - steer;
        let slip_r = (vy - cfg.len_rear * r).atan2(vx_eff);
        let wheelbase = cfg.len_front + cfg.len_rear;
        let fz_front = cfg.mass * GRAVITY * cfg.len_rear / wheelbase;
        let fz_rear = cfg.mass * GRAVITY * cfg.len_front / wheelbase;
        let stiffness = cfg.stiffness_per_mu * mu;
        let fy_f = fiala_lateral(stiffness, mu * fz_front, slip_f);
        let fy_r = fiala_lateral(stiffness, mu * fz_rear, slip_r);

        let a_lat = (fy_f * steer.cos() + fy_r) / cfg.mass;

        // Longitudinal command under a combined-slip budget of mu*g.
        let budget = mu * GRAVITY;
        let cap = (budget * budget - a_lat * a_lat).max(0.0).sqrt();
        let a_drive = accel_cmd.clamp(-cap, cap);
        let a_roll_resist = cfg.rolling_resist * GRAVITY * vx / (vx.abs() + 0.1);

        let vdot_x = a_drive - a_roll_resist + vy * r - fy_f * steer.sin() / cfg.mass;
        let vdot_y = a_lat - vx * r;
        let rdot = (cfg.len_front * fy_f * steer.cos() - cfg.len_rear * fy_r) / cfg.inertia_z;
        let steerdot = (steer_cmd - steer) / cfg.steer_lag;
        let phidot = (cfg.roll_gain * a_lat - phi) / cfg.roll_lag;

        let (sin_psi, cos_psi) = psi.sin_cos();
        [
            vx * cos_psi - vy * sin_psi,
            vx * sin_psi + vy * cos_psi,
            r,
            vdot_x,
            vdot_y,
            rdot,
            steerdot,
            phidot,
        ]
    }

    /// Advances one control period under a held command, sub-stepping with
    /// RK4 at `dt_sim` and looking the friction up at each substep start.
    pub fn sim_step(&mut self, command: ControlInput, dt: f64) -> Result<()> {
        let u = command.clamped();
        let steer_cmd = u.steer * self.cfg.max_steer;
        let accel_cmd = u.accel * self.cfg.max_accel;
        let n = (dt / self.cfg.dt_sim).round() as usize;
        debug_assert!((dt / self.cfg.dt_sim - n as f64).abs() < 1e-9);
        let h = self.cfg.dt_sim;
        for _ in 0..n {
            let y0 = self.pack();
            let (_, mu) = self.map.surface_at(y0[0], y0[1]);
            let k1 = self.derivative(&y0, steer_cmd, accel_cmd, mu);
            let y1 = add_scaled(&y0, &k1, h / 2.0);
            let k2 = self.derivative(&y1, steer_cmd, accel_cmd, mu);
            let y2 = add_scaled(&y0, &k2, h / 2.0);
            let k3 = self.derivative(&y2, steer_cmd, accel_cmd, mu);
            let y3 = add_scaled(&y0, &k3, h);
            let k4 = self.derivative(&y3, steer_cmd, accel_cmd, mu);
            let mut y = y0;
            for i in 0..8 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "simulator state at t={:.3}",
                    self.time
                )));
            }
            self.unpack(y);
        }
        self.time += dt;
        Ok(())
    }

    /// Noisy measurement of the current state and pose. Zero noise yields
    /// the exact state.
    pub fn observe<R: Rng>(&self, rng: &mut R) -> (VehicleState, Pose) {
        let ns = &self.cfg.noise_std;
        let mut draw = |std: f64| {
            if std > 0.0 {
                Normal::new(0.0, std).unwrap().sample(rng)
            } else {
                // Consume a draw regardless so channel noise streams stay
                // aligned across configurations.
                let _: f64 = rng.gen();
                0.0
            }
        };
        let state = VehicleState {
            phi: self.sim.state.phi + draw(ns.phi),
            vx: self.sim.state.vx + draw(ns.vx),
            vy: self.sim.state.vy + draw(ns.vy),
            r: self.sim.state.r + draw(ns.r),
        };
        let pose = Pose {
            x: self.sim.pose.x + draw(ns.x),
            y: self.sim.pose.y + draw(ns.y),
            psi: self.sim.pose.psi + draw(ns.psi),
        };
        (state, pose)
    }
}

fn add_scaled(y: &PlantVec, k: &PlantVec, h: f64) -> PlantVec {
    std::array::from_fn(|i| y[i] + k[i] * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const DT: f64 = 0.02;

    fn quiet_cfg() -> SimConfig {
        SimConfig {
            noise_std: NoiseStd::zero(),
            ..SimConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate(DT).is_ok());
        let mut c = SimConfig::default();
        c.dt_sim = 0.003;
        assert!(c.validate(DT).is_err());
        c.dt_sim = 0.0015; // does not divide 0.02
        assert!(c.validate(DT).is_err());
        c.dt_sim = 0.002;
        c.mass = 0.0;
        assert!(c.validate(DT).is_err());
    }

    #[test]
    fn rest_is_equilibrium() {
        let mut sim = Simulator::new(quiet_cfg(), SurfaceMap::uniform_cement(), Pose::default());
        let before = sim.sim;
        for _ in 0..50 {
            sim.sim_step(ControlInput::default(), DT).unwrap();
        }
        assert_eq!(sim.sim, before);
    }

    #[test]
    fn surface_lookup_rules() {
        let map = SurfaceMap::two_mats();
        assert_eq!(map.surface_at(1.0, 0.5).0, "rubber");
        assert_eq!(map.surface_at(-1.0, 0.5).0, "foam");
        // Boundary belongs to the first listed region.
        assert_eq!(map.surface_at(0.0, -2.0).0, "rubber");
        let cement = SurfaceMap::uniform_cement();
        assert_eq!(cement.surface_at(100.0, -50.0), ("cement", 0.9));
    }

    /// Drives to a steady speed, then holds a small steering angle and
    /// compares the settled yaw rate with the kinematic bicycle value.
    #[test]
    fn low_speed_yaw_rate_matches_kinematic_bicycle() {
        let cfg = quiet_cfg();
        let mut sim = Simulator::new(cfg, SurfaceMap::uniform_cement(), Pose::default());
        let target_v = 0.6;
        let steer_norm = 0.2;
        for _ in 0..1500 {
            let accel = (2.0 * (target_v - sim.sim.state.vx)).clamp(-1.0, 1.0);
            sim.sim_step(ControlInput::new(steer_norm, accel), DT).unwrap();
        }
        let delta = steer_norm * cfg.max_steer;
        let wheelbase = cfg.len_front + cfg.len_rear;
        let r_kin = sim.sim.state.vx * delta.tan() / wheelbase;
        let r = sim.sim.state.r;
        assert!(
            ((r - r_kin) / r_kin).abs() < 0.05,
            "r {r} vs kinematic {r_kin}"
        );
    }

    /// Identical seeded maneuver on half friction produces a larger peak
    /// front slip angle.
    #[test]
    fn lower_friction_raises_peak_slip() {
        let peak_slip = |mu: f64| -> f64 {
            let cfg = quiet_cfg();
            let mut sim = Simulator::new(cfg, SurfaceMap::uniform("test", mu), Pose::default());
            let mut peak: f64 = 0.0;
            for k in 0..800 {
                let t = k as f64 * DT;
                let steer = if t > 3.0 { (1.5 * t).sin() } else { 0.0 };
                let accel = (1.5 * (2.0 - sim.sim.state.vx)).clamp(-1.0, 1.0);
                sim.sim_step(ControlInput::new(steer, accel), DT).unwrap();
                let s = &sim.sim;
                let slip_f = (s.state.vy + cfg.len_front * s.state.r)
                    .atan2(s.state.vx.max(V_EPS))
                    - s.steer_angle;
                peak = peak.max(slip_f.abs());
            }
            peak
        };
        let high = peak_slip(0.9);
        let low = peak_slip(0.45);
        assert!(low > high, "slip at mu=0.45 ({low}) <= mu=0.9 ({high})");
    }

    #[test]
    fn coasting_kinetic_energy_is_nonincreasing() {
        let cfg = quiet_cfg();
        let mut sim = Simulator::new(cfg, SurfaceMap::uniform_cement(), Pose::default());
        sim.sim.state.vx = 2.5;
        sim.sim.state.vy = 0.3;
        sim.sim.state.r = 1.0;
        let ke = |s: &SimState| {
            0.5 * cfg.mass * (s.state.vx.powi(2) + s.state.vy.powi(2))
                + 0.5 * cfg.inertia_z * s.state.r.powi(2)
        };
        let mut prev = ke(&sim.sim);
        for _ in 0..400 {
            sim.sim_step(ControlInput::default(), DT).unwrap();
            let now = ke(&sim.sim);
            assert!(now <= prev + 1e-9, "energy rose: {prev} -> {now}");
            prev = now;
        }
    }

    /// Halving the integration substep moves a 10 s endpoint by < 1 cm.
    #[test]
    fn substep_convergence() {
        let run = |dt_sim: f64| -> Pose {
            let cfg = SimConfig {
                dt_sim,
                noise_std: NoiseStd::zero(),
                ..SimConfig::default()
            };
            let mut sim = Simulator::new(cfg, SurfaceMap::uniform_cement(), Pose::default());
            for k in 0..500 {
                let t = k as f64 * DT;
                let steer = 0.7 * (0.9 * t).sin();
                let accel = (1.2 * (2.2 - sim.sim.state.vx)).clamp(-1.0, 1.0);
                sim.sim_step(ControlInput::new(steer, accel), DT).unwrap();
            }
            sim.sim.pose
        };
        let coarse = run(0.002);
        let fine = run(0.001);
        let gap = (coarse.x - fine.x).hypot(coarse.y - fine.y);
        assert!(gap < 0.01, "endpoint moved {gap} m");
    }

    #[test]
    fn observe_zero_noise_is_exact_and_seeded_noise_repeats() {
        let mut sim = Simulator::new(quiet_cfg(), SurfaceMap::uniform_cement(), Pose::default());
        sim.sim.state.vx = 1.0;
        let (s, p) = sim.observe(&mut StdRng::seed_from_u64(1));
        assert_eq!(s, sim.sim.state);
        assert_eq!(p, sim.sim.pose);

        let mut noisy = sim.clone();
        noisy.cfg.noise_std = NoiseStd::default();
        let a = noisy.observe(&mut StdRng::seed_from_u64(7));
        let b = noisy.observe(&mut StdRng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    /// Sample mean of many observations lands within 4 sigma / sqrt(n) of
    /// the true value per channel.
    #[test]
    fn observation_noise_is_unbiased() {
        let mut sim = Simulator::new(SimConfig::default(), SurfaceMap::uniform_cement(), Pose::default());
        sim.sim.state.vx = 1.5;
        sim.sim.pose.x = 2.0;
        let n = 100_000;
        let mut rng = StdRng::seed_from_u64(42);
        let mut mean_vx = 0.0;
        let mut mean_x = 0.0;
        for _ in 0..n {
            let (s, p) = sim.observe(&mut rng);
            mean_vx += s.vx;
            mean_x += p.x;
        }
        mean_vx /= n as f64;
        mean_x /= n as f64;
        let tol_vx = 4.0 * sim.cfg.noise_std.vx / (n as f64).sqrt();
        let tol_x = 4.0 * sim.cfg.noise_std.x / (n as f64).sqrt();
        assert!((mean_vx - 1.5).abs() < tol_vx);
        assert!((mean_x - 2.0).abs() < tol_x);
    }
}
