//! Offline phase: drive the simulator on the cement floor under smoothed
//! random excitation, decimate the log to the control rate, and fit the
//! network to the multi-step rollout loss with Adam.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logfile::TrajectoryRecord;
use crate::model::window_loss_and_grad;
use crate::nn::{self, AdamState, Gradient, MlpParams, Normalizer, PARAM_COUNT};
use crate::sim::{SimConfig, Simulator, SurfaceMap};
use crate::types::{ControlInput, Pose, SampleWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Seconds of excitation driving to collect.
    pub collect_duration: f64,
    /// Raw collection sampling period (s); decimated down to the control
    /// period before training.
    pub log_dt: f64,
    /// Car is re-centered when it leaves +/- this bound (m).
    pub workspace_bound: f64,
    /// Training rollout horizon in steps (window length minus one).
    pub horizon: usize,
    /// Stride between consecutive training windows, in samples.
    pub window_stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_lr: f64,
    /// Fraction of windows held out for validation.
    pub holdout_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            collect_duration: 600.0,
            log_dt: 0.01,
            workspace_bound: 12.0,
            horizon: 100,
            window_stride: 25,
            epochs: 200,
            batch_size: 32,
            adam_lr: 1e-3,
            holdout_fraction: 0.1,
        }
    }
}

/// Logged excitation data, split into contiguous segments (a segment ends
/// when the car leaves the workspace and is re-centered).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dt: f64,
    pub segments: Vec<Vec<TrajectoryRecord>>,
}

impl Dataset {
    pub fn total_samples(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    /// Cuts fixed-length windows with the given stride out of every
    /// segment.
    pub fn windows(&self, len: usize, stride: usize) -> Vec<SampleWindow> {
        let mut out = Vec::new();
        for seg in &self.segments {
            if seg.len() < len {
                continue;
            }
            let mut start = 0;
            while start + len <= seg.len() {
                let samples = seg[start..start + len].iter().map(|r| r.sample()).collect();
                out.push(SampleWindow::new(self.dt, samples).expect("len >= 2"));
                start += stride;
            }
        }
        out
    }

    /// All raw network input vectors, for fitting the normalizer.
    pub fn net_inputs(&self) -> Vec<[f64; 6]> {
        self.segments
            .iter()
            .flat_map(|seg| seg.iter().map(|r| r.sample().net_input()))
            .collect()
    }
}

/// Band-limited random excitation: Ornstein-Uhlenbeck steering, plus a
/// proportional speed loop chasing a piecewise-constant random target with
/// an OU disturbance on top.
pub struct ExcitationPolicy {
    steer: f64,
    accel_noise: f64,
    target_speed: f64,
    until_retarget: f64,
}

impl Default for ExcitationPolicy {
    fn default() -> Self {
        Self::new()
    }
}

impl ExcitationPolicy {
    pub fn new() -> Self {
        ExcitationPolicy {
            steer: 0.0,
            accel_noise: 0.0,
            target_speed: 1.5,
            until_retarget: 0.0,
        }
    }

    pub fn command<R: Rng>(&mut self, vx: f64, dt: f64, rng: &mut R) -> ControlInput {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        if self.until_retarget <= 0.0 {
            self.target_speed = rng.gen_range(0.8..3.4);
            self.until_retarget = rng.gen_range(2.0..4.0);
        }
        self.until_retarget -= dt;
        // OU pullback time constants: 0.5 s steering, 0.3 s acceleration.
        self.steer += -self.steer / 0.5 * dt + 1.1 * dt.sqrt() * unit.sample(rng);
        self.steer = self.steer.clamp(-1.0, 1.0);
        self.accel_noise += -self.accel_noise / 0.3 * dt + 0.5 * dt.sqrt() * unit.sample(rng);
        let accel = 1.5 * (self.target_speed - vx) + self.accel_noise;
        ControlInput::new(self.steer, accel).clamped()
    }
}

/// Drives the simulator under the excitation policy and logs at `log_dt`.
/// Segments that leave the workspace are truncated and the car restarts at
/// the origin.
pub fn collect_data(
    sim_cfg: &SimConfig,
    map: &SurfaceMap,
    pt: &PretrainConfig,
    control_dt: f64,
    seed: u64,
) -> Result<Dataset> {
    if pt.collect_duration <= 0.0 {
        return Ok(Dataset {
            dt: pt.log_dt,
            segments: Vec::new(),
        });
    }
    let ratio = control_dt / pt.log_dt;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(Error::Config(format!(
            "log_dt {} must divide the control period {control_dt}",
            pt.log_dt
        )));
    }
    sim_cfg.validate(pt.log_dt)?;

    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs_rng = ChaCha8Rng::seed_from_u64(seed);
    obs_rng.set_stream(1);

    let mut sim = Simulator::new(*sim_cfg, map.clone(), Pose::default());
    let mut policy = ExcitationPolicy::new();
    let logs_per_command = ratio.round() as usize;
    let total_logs = (pt.collect_duration / pt.log_dt).round() as usize;

    let mut segments = Vec::new();
    let mut current: Vec<TrajectoryRecord> = Vec::new();
    let mut command = ControlInput::default();
    for k in 0..total_logs {
        if k % logs_per_command == 0 {
            command = policy.command(sim.sim.state.vx, control_dt, &mut rng);
        }
        let (state, pose) = sim.observe(&mut obs_rng);
        let (surface, _) = sim.surface_here();
        current.push(TrajectoryRecord {
            time: k as f64 * pt.log_dt,
            state,
            pose,
            input: command,
            surface: surface.to_string(),
        });
        sim.sim_step(command, pt.log_dt)?;
        let out_of_bounds = sim.sim.pose.x.abs() > pt.workspace_bound
            || sim.sim.pose.y.abs() > pt.workspace_bound;
        if out_of_bounds {
            segments.push(std::mem::take(&mut current));
            sim.sim = crate::sim::SimState::at_rest(Pose::default());
            policy = ExcitationPolicy::new();
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    Ok(Dataset {
        dt: pt.log_dt,
        segments,
    })
}

/// Keeps every k-th sample so the dataset lands on `target_dt`. The source
/// rate must be an integer multiple of the target rate.
pub fn decimate(dataset: &Dataset, target_dt: f64) -> Result<Dataset> {
    let ratio = target_dt / dataset.dt;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(Error::InvalidArg(format!(
            "cannot decimate dt {} to {target_dt}: keep ratio {ratio} is not a positive integer; \
             resample the source first",
            dataset.dt
        )));
    }
    let k = ratio.round() as usize;
    if k == 1 {
        return Ok(dataset.clone());
    }
    Ok(Dataset {
        dt: target_dt,
        segments: dataset
            .segments
            .iter()
            .map(|seg| seg.iter().step_by(k).cloned().collect())
            .collect(),
    })
}

/// Result of the offline fit.
pub struct TrainedModel {
    pub params: MlpParams,
    pub norm: Normalizer,
    /// Mean window loss per epoch; entry 0 is the pre-training baseline.
    pub curve: Vec<f64>,
}

/// Fits the network by Adam on mini-batches of rollout-loss gradients.
/// Deterministic for a fixed seed: shuffling, batching, and the gradient
/// reduction all run in fixed order.
pub fn train_offline(dataset: &Dataset, pt: &PretrainConfig, seed: u64) -> Result<TrainedModel> {
    let windows = dataset.windows(pt.horizon + 1, pt.window_stride);
    if windows.is_empty() {
        return Err(Error::InvalidArg(
            "train_offline: dataset yields no training windows".into(),
        ));
    }
    let norm = Normalizer::fit(&dataset.net_inputs())?;

    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = nn::init_params(&mut rng);
    let mut adam = AdamState::new(PARAM_COUNT);

    let mean_loss = |p: &MlpParams| -> Result<f64> {
        let total: f64 = windows
            .par_iter()
            .map(|w| crate::model::rollout_loss(p, &norm, w))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        Ok(total / windows.len() as f64)
    };

    let mut curve = vec![mean_loss(&params)?];
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for _epoch in 0..pt.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(pt.batch_size) {
            let results: Vec<(f64, Gradient)> = batch
                .par_iter()
                .map(|&i| window_loss_and_grad(&params, &norm, &windows[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = Gradient::zeros();
            for (loss, g) in &results {
                epoch_loss += loss;
                grad.add_assign(g);
            }
            grad.scale(1.0 / batch.len() as f64);
            let (next, adam2) = nn::adam_step(&params, &grad, &adam, pt.adam_lr);
            params = next;
            adam = adam2;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(
                "parameters during offline training".into(),
            ));
        }
        curve.push(epoch_loss / windows.len() as f64);
    }
    Ok(TrainedModel {
        params,
        norm,
        curve,
    })
}

/// Settles the pre-trained model on the cement oval: one closed-loop run
/// under the controller with gradient-descent adaptation active. The
/// returned parameters are the common starting point for every compared
/// model, so course mismatch cannot masquerade as surface adaptation.
pub fn finetune_on_track(
    cfg: &crate::config::ExperimentConfig,
    params: &MlpParams,
    norm: &Normalizer,
    seed: u64,
) -> Result<MlpParams> {
    use crate::harness::{run_closed_loop, StopCondition};
    let costmap = crate::costmap::build_oval_costmap(&cfg.track, cfg.control.costmap_resolution)?;
    let out = run_closed_loop(
        cfg,
        &cfg.pretrain_surface,
        params,
        norm,
        crate::adapt::AdaptMode::Gd,
        seed,
        StopCondition::Duration(cfg.run.finetune_duration),
        &costmap,
    )?;
    if out.diverged {
        return Err(Error::NonFinite("control diverged during fine-tuning".into()));
    }
    Ok(out.final_params)
}

/// Fisher-Yates with the run's seeded generator.
fn shuffle<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Splits windows into train/holdout by index stride, deterministic and
/// disjoint.
pub fn holdout_split(
    windows: Vec<SampleWindow>,
    fraction: f64,
) -> (Vec<SampleWindow>, Vec<SampleWindow>) {
    if fraction <= 0.0 {
        return (windows, Vec::new());
    }
    let every = (1.0 / fraction).round().max(2.0) as usize;
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for (i, w) in windows.into_iter().enumerate() {
        if i % every == every - 1 {
            hold.push(w);
        } else {
            train.push(w);
        }
    }
    (train, hold)
}
