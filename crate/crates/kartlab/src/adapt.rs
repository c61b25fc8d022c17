//! Online update policies for the learned model during driving: a frozen
//! model, plain gradient descent, and the continual meta-learning scheme
//! with fast and meta parameters.
//!
//! The continual scheme keeps two parameter sets. Fast parameters drive the
//! controller and take one gradient step per update period on the freshest
//! window. Meta parameters accumulate task knowledge: at every known
//! surface boundary they take one meta step from the buffered train/test
//! windows, after which the buffers are cleared and the fast parameters
//! restart from the meta parameters with a single adaptation step on the
//! current window. Meta parameters are additionally refreshed on a fixed
//! period without resetting the fast parameters, so they keep tracking the
//! surfaces actually visited.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::window_loss_and_grad;
use crate::nn::{self, AdamState, Gradient, MlpParams, Normalizer, PARAM_COUNT};
use crate::types::SampleWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    /// No online updates.
    Fixed,
    /// Fine-tuning of the live parameters only.
    Gd,
    /// Full fast/meta scheme.
    Cmaml,
}

impl std::fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdaptMode::Fixed => write!(f, "fixed"),
            AdaptMode::Gd => write!(f, "gd"),
            AdaptMode::Cmaml => write!(f, "cmaml"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaGradMode {
    /// Exact meta-gradient `(I - eta H_train) g_test` with the Hessian
    /// applied through a finite-difference product.
    ExactHvp,
    /// First-order approximation: `g_test` alone.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub mode: AdaptMode,
    /// Seconds between adaptation updates.
    pub update_period: f64,
    /// Window length in samples.
    pub window_len: usize,
    /// Fast learning rate (gradient descent).
    pub eta: f64,
    /// Meta learning rate (Adam).
    pub meta_lr: f64,
    /// Seconds between periodic meta updates.
    pub meta_period: f64,
    pub meta_grad: MetaGradMode,
    /// Gradient-norm clip applied before any parameter step.
    pub grad_clip: f64,
    /// Finite-difference step for the Hessian-vector product.
    pub hvp_eps: f64,
    /// Probability that a full buffer pair keeps its contents on insert;
    /// the remainder splits evenly between replacing train and test.
    pub keep_prob: f64,
    /// Windows whose mean |vx| falls below this are skipped: a stationary
    /// car carries no dynamics information and would teach the model that
    /// commands do nothing (m/s).
    pub min_window_speed: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            mode: AdaptMode::Cmaml,
            update_period: 0.08,
            window_len: 14,
            eta: 0.1,
            meta_lr: 1e-4,
            meta_period: 0.4,
            meta_grad: MetaGradMode::ExactHvp,
            grad_clip: 10.0,
            hvp_eps: 1e-4,
            keep_prob: 0.5,
            min_window_speed: 0.25,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self, control_dt: f64) -> Result<()> {
        let steps = self.update_period / control_dt;
        if (steps - steps.round()).abs() > 1e-9 || steps < 1.0 {
            return Err(Error::Config(format!(
                "update period {} must be an integer multiple of the control period {}",
                self.update_period, control_dt
            )));
        }
        let metas = self.meta_period / self.update_period;
        if (metas - metas.round()).abs() > 1e-9 || metas < 1.0 {
            return Err(Error::Config(format!(
                "meta period {} must be an integer multiple of the update period {}",
                self.meta_period, self.update_period
            )));
        }
        if self.window_len < 2 {
            return Err(Error::Config("window_len must be >= 2".into()));
        }
        if self.eta <= 0.0 || self.meta_lr <= 0.0 || self.grad_clip <= 0.0 || self.hvp_eps <= 0.0 {
            return Err(Error::Config(
                "eta, meta_lr, grad_clip, hvp_eps must be > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(Error::Config("keep_prob must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Update ticks between periodic meta updates.
    pub fn meta_every_ticks(&self) -> usize {
        (self.meta_period / self.update_period).round() as usize
    }
}

/// What happened during one adaptation tick, for the run log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    FineTune,
    MetaPeriodic,
    MetaBoundary,
    Reset,
    Skipped,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::FineTune => write!(f, "fine_tune"),
            EventKind::MetaPeriodic => write!(f, "meta_periodic"),
            EventKind::MetaBoundary => write!(f, "meta_boundary"),
            EventKind::Reset => write!(f, "reset"),
            EventKind::Skipped => write!(f, "skipped"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptEvent {
    pub kind: EventKind,
    pub loss_before: f64,
    pub loss_after: f64,
    pub grad_norm: f64,
}

/// Live adaptation state: both parameter sets, the size-1 window buffers,
/// meta-optimizer state, and scheduling counters.
#[derive(Debug, Clone)]
pub struct AdaptState {
    /// Meta parameters: the learned restart point.
    pub theta: MlpParams,
    /// Fast parameters: what the controller actually uses.
    pub theta_fast: MlpParams,
    pub norm: Normalizer,
    pub train_buf: Option<SampleWindow>,
    pub test_buf: Option<SampleWindow>,
    pub adam: AdamState,
    pub ticks_since_meta: usize,
    rng: ChaCha8Rng,
}

impl AdaptState {
    pub fn new(params: MlpParams, norm: Normalizer, seed: u64) -> Self {
        use rand::SeedableRng;
        AdaptState {
            theta: params.clone(),
            theta_fast: params,
            norm,
            train_buf: None,
            test_buf: None,
            adam: AdamState::new(PARAM_COUNT),
            ticks_since_meta: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The parameters the controller should roll out with.
    pub fn live_params(&self) -> &MlpParams {
        &self.theta_fast
    }

    /// Processes one update-period tick. `boundary` flags that the surface
    /// changed since the previous tick (task boundaries are given, not
    /// detected). Returns the events performed, in order.
    pub fn on_sample(
        &mut self,
        window: &SampleWindow,
        boundary: bool,
        cfg: &AdaptConfig,
    ) -> Vec<AdaptEvent> {
        if cfg.mode == AdaptMode::Fixed {
            return Vec::new();
        }
        let mean_speed = window
            .samples
            .iter()
            .map(|s| s.state.vx.abs())
            .sum::<f64>()
            / window.len() as f64;
        let valid = window.len() == cfg.window_len
            && mean_speed >= cfg.min_window_speed
            && window
                .samples
                .iter()
                .all(|s| s.state.is_finite() && s.pose.is_finite());

        if cfg.mode == AdaptMode::Gd {
            if !valid {
                return vec![skipped()];
            }
            return match fast_step(&self.theta_fast, &self.norm, window, cfg) {
                Ok((next, ev)) => {
                    self.theta_fast = next;
                    vec![ev]
                }
                Err(_) => vec![skipped()],
            };
        }

        // Continual meta-learning branch.
        let mut events = Vec::new();
        if boundary {
            if self.train_buf.is_some() && self.test_buf.is_some() {
                match self.meta_step(cfg, EventKind::MetaBoundary) {
                    Ok(ev) => events.push(ev),
                    Err(_) => events.push(skipped()),
                }
            }
            self.train_buf = None;
            self.test_buf = None;
            self.ticks_since_meta = 0;
            if !valid {
                events.push(skipped());
                return events;
            }
            // Fast parameters restart from the meta parameters with one
            // adaptation step on the current window.
            match fast_step(&self.theta, &self.norm, window, cfg) {
                Ok((next, ev)) => {
                    self.theta_fast = next;
                    events.push(AdaptEvent {
                        kind: EventKind::Reset,
                        ..ev
                    });
                }
                Err(_) => events.push(skipped()),
            }
            return events;
        }

        if !valid {
            return vec![skipped()];
        }
        self.buffer_insert(window.clone(), cfg);
        match fast_step(&self.theta_fast, &self.norm, window, cfg) {
            Ok((next, ev)) => {
                self.theta_fast = next;
                events.push(ev);
            }
            Err(_) => events.push(skipped()),
        }
        self.ticks_since_meta += 1;
        if self.ticks_since_meta >= cfg.meta_every_ticks()
            && self.train_buf.is_some()
            && self.test_buf.is_some()
        {
            match self.meta_step(cfg, EventKind::MetaPeriodic) {
                Ok(ev) => {
                    events.push(ev);
                    self.ticks_since_meta = 0;
                }
                Err(_) => events.push(skipped()),
            }
        }
        events
    }

    /// Inserts a window into the size-1 buffers: empty slots fill first
    /// (train before test); with both full, a random draw keeps the pair
    /// with probability `keep_prob` and otherwise evicts train or test with
    /// equal probability. A window can never sit in both buffers.
    pub fn buffer_insert(&mut self, window: SampleWindow, cfg: &AdaptConfig) {
        if self.train_buf.is_none() {
            self.train_buf = Some(window);
            return;
        }
        if self.test_buf.is_none() {
            self.test_buf = Some(window);
            return;
        }
        let u: f64 = self.rng.gen();
        if u < cfg.keep_prob {
            return;
        }
        let replace_train = u < cfg.keep_prob + (1.0 - cfg.keep_prob) / 2.0;
        if replace_train {
            self.train_buf = Some(window);
        } else {
            self.test_buf = Some(window);
        }
    }

    fn meta_step(&mut self, cfg: &AdaptConfig, kind: EventKind) -> Result<AdaptEvent> {
        let train = self.train_buf.as_ref().expect("train buffer present");
        let test = self.test_buf.as_ref().expect("test buffer present");
        let (theta2, adam2, diag) = meta_update(
            &self.theta,
            &self.norm,
            train,
            test,
            cfg,
            &self.adam,
        )?;
        self.theta = theta2;
        self.adam = adam2;
        Ok(AdaptEvent {
            kind,
            loss_before: diag.test_loss_before,
            loss_after: diag.test_loss_after,
            grad_norm: diag.meta_grad_norm,
        })
    }
}

fn skipped() -> AdaptEvent {
    AdaptEvent {
        kind: EventKind::Skipped,
        loss_before: f64::NAN,
        loss_after: f64::NAN,
        grad_norm: 0.0,
    }
}

/// One clipped gradient-descent step on a window. Used both for the
/// per-tick fine-tuning of the fast parameters and for their restart from
/// the meta parameters at a boundary.
fn fast_step(
    from: &MlpParams,
    norm: &Normalizer,
    window: &SampleWindow,
    cfg: &AdaptConfig,
) -> Result<(MlpParams, AdaptEvent)> {
    let (loss_before, mut grad) = window_loss_and_grad(from, norm, window)?;
    grad.clip_norm(cfg.grad_clip);
    let next = nn::sgd_step(from, &grad, cfg.eta);
    let loss_after = crate::model::rollout_loss(&next, norm, window)?;
    Ok((
        next,
        AdaptEvent {
            kind: EventKind::FineTune,
            loss_before,
            loss_after,
            grad_norm: grad.norm(),
        },
    ))
}

/// One fast-adaptation step from `theta` on a training window:
/// `theta - eta * grad`, with the gradient clipped.
pub fn fast_adapt(
    theta: &MlpParams,
    norm: &Normalizer,
    train: &SampleWindow,
    eta: f64,
    grad_clip: f64,
) -> Result<MlpParams> {
    assert!(eta > 0.0);
    let (_, mut grad) = window_loss_and_grad(theta, norm, train)?;
    grad.clip_norm(grad_clip);
    Ok(nn::sgd_step(theta, &grad, eta))
}

/// One fine-tuning step continuing from the previous fast parameters.
pub fn fine_tune(
    theta_fast: &MlpParams,
    norm: &Normalizer,
    window: &SampleWindow,
    eta: f64,
    grad_clip: f64,
) -> Result<MlpParams> {
    fast_adapt(theta_fast, norm, window, eta, grad_clip)
}

/// Diagnostics of a meta update.
#[derive(Debug, Clone, Copy)]
pub struct MetaDiag {
    pub test_loss_before: f64,
    pub test_loss_after: f64,
    pub meta_grad_norm: f64,
}

/// Meta-gradient of the one-inner-step objective, layout-agnostic.
///
/// With `theta' = theta - eta * grad_train(theta)`, the exact gradient of
/// `L_test(theta')` with respect to `theta` is
/// `(I - eta * H_train(theta)) * grad_test(theta')`; the first-order mode
/// drops the Hessian term. The inner step uses the raw (unclipped)
/// gradient so the identity holds exactly.
pub fn meta_gradient<FTr, FTe>(
    theta: &[f64],
    grad_train: FTr,
    grad_test: FTe,
    eta: f64,
    mode: MetaGradMode,
    hvp_eps: f64,
) -> Result<Vec<f64>>
where
    FTr: Fn(&[f64]) -> Vec<f64>,
    FTe: Fn(&[f64]) -> Vec<f64>,
{
    let g_train = grad_train(theta);
    let theta_prime: Vec<f64> = theta
        .iter()
        .zip(&g_train)
        .map(|(t, g)| t - eta * g)
        .collect();
    let g_test = grad_test(&theta_prime);
    let g_norm = g_test.iter().map(|g| g * g).sum::<f64>().sqrt();
    if mode == MetaGradMode::FirstOrder || eta == 0.0 || g_norm < 1e-12 {
        return Ok(g_test);
    }
    let h = nn::hvp(theta, grad_train, &g_test, hvp_eps)?;
    Ok(g_test
        .iter()
        .zip(&h)
        .map(|(g, hv)| g - eta * hv)
        .collect())
}

/// One meta update from a train/test window pair: fast-adapt from `theta`
/// on the train window, evaluate the test gradient there, assemble the
/// meta-gradient, and apply one Adam step at `meta_lr`.
pub fn meta_update(
    theta: &MlpParams,
    norm: &Normalizer,
    train: &SampleWindow,
    test: &SampleWindow,
    cfg: &AdaptConfig,
    adam: &AdamState,
) -> Result<(MlpParams, AdamState, MetaDiag)> {
    let grad_of = |window: &SampleWindow| {
        let w = window.clone();
        let norm = norm.clone();
        move |flat: &[f64]| -> Vec<f64> {
            let p = MlpParams(flat.to_vec());
            window_loss_and_grad(&p, &norm, &w)
                .map(|(_, g)| g.0)
                .unwrap_or_else(|_| vec![f64::NAN; flat.len()])
        }
    };
    let g_meta_flat = meta_gradient(
        theta.as_slice(),
        grad_of(train),
        grad_of(test),
        cfg.eta,
        cfg.meta_grad,
        cfg.hvp_eps,
    )?;
    if !g_meta_flat.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("meta gradient".into()));
    }
    let mut g_meta = Gradient(g_meta_flat);
    g_meta.clip_norm(cfg.grad_clip);

    let test_loss_before = crate::model::rollout_loss(theta, norm, test)?;
    let (theta2, adam2) = nn::adam_step(theta, &g_meta, adam, cfg.meta_lr);
    let test_loss_after = crate::model::rollout_loss(&theta2, norm, test)?;
    Ok((
        theta2,
        adam2,
        MetaDiag {
            test_loss_before,
            test_loss_after,
            meta_grad_norm: g_meta.norm(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rollout;
    use crate::nn::init_params;
    use crate::types::{ControlInput, Pose, Sample, VehicleState};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const DT: f64 = 0.02;

    fn window_from_model(
        gen: &MlpParams,
        norm: &Normalizer,
        len: usize,
        seed: u64,
    ) -> SampleWindow {
        let mut rng = StdRng::seed_from_u64(seed);
        let s0 = VehicleState {
            phi: 0.01,
            vx: 1.2,
            vy: -0.05,
            r: 0.2,
        };
        let inputs: Vec<ControlInput> = (0..len - 1)
            .map(|_| ControlInput::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)))
            .collect();
        let traj = rollout(gen, norm, &s0, &Pose::default(), &inputs, DT).unwrap();
        let mut samples = vec![Sample {
            state: s0,
            pose: Pose::default(),
            input: inputs[0],
        }];
        for (t, (s, p)) in traj.iter().enumerate() {
            samples.push(Sample {
                state: *s,
                pose: *p,
                input: inputs.get(t + 1).copied().unwrap_or_default(),
            });
        }
        SampleWindow::new(DT, samples).unwrap()
    }

    fn test_cfg(mode: AdaptMode) -> AdaptConfig {
        AdaptConfig {
            mode,
            ..AdaptConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(AdaptConfig::default().validate(DT).is_ok());
        let mut c = AdaptConfig::default();
        c.update_period = 0.05; // not a multiple of 0.02
        assert!(c.validate(DT).is_err());
        let mut c = AdaptConfig::default();
        c.meta_period = 0.1; // not a multiple of 0.08
        assert!(c.validate(DT).is_err());
        assert_eq!(AdaptConfig::default().meta_every_ticks(), 5);
    }

    #[test]
    fn fixed_mode_is_bit_identical() {
        let mut rng = StdRng::seed_from_u64(1);
        let params = init_params(&mut rng);
        let norm = Normalizer::identity();
        let gen = init_params(&mut rng);
        let cfg = test_cfg(AdaptMode::Fixed);
        let mut st = AdaptState::new(params.clone(), norm.clone(), 0);
        for k in 0..20 {
            let w = window_from_model(&gen, &norm, cfg.window_len, k);
            let events = st.on_sample(&w, k % 7 == 3, &cfg);
            assert!(events.is_empty());
        }
        assert_eq!(st.theta_fast.0, params.0);
        assert_eq!(st.theta.0, params.0);
    }

    #[test]
    fn gd_mode_updates_only_fast_params() {
        let mut rng = StdRng::seed_from_u64(2);
        let params = init_params(&mut rng);
        let gen = init_params(&mut rng);
        let norm = Normalizer::identity();
        let cfg = test_cfg(AdaptMode::Gd);
        let mut st = AdaptState::new(params.clone(), norm.clone(), 0);
        let w = window_from_model(&gen, &norm, cfg.window_len, 5);
        let events = st.on_sample(&w, false, &cfg);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::FineTune);
        assert_ne!(st.theta_fast.0, params.0);
        assert_eq!(st.theta.0, params.0);
        // Matches one clipped sgd step computed by hand.
        let (_, mut g) = window_loss_and_grad(&params, &norm, &w).unwrap();
        g.clip_norm(cfg.grad_clip);
        let want = nn::sgd_step(&params, &g, cfg.eta);
        assert_eq!(st.theta_fast.0, want.0);
    }

    #[test]
    fn boundary_with_empty_buffers_resets_without_meta() {
        let mut rng = StdRng::seed_from_u64(3);
        let params = init_params(&mut rng);
        let gen = init_params(&mut rng);
        let norm = Normalizer::identity();
        let cfg = test_cfg(AdaptMode::Cmaml);
        let mut st = AdaptState::new(params.clone(), norm.clone(), 0);
        let w = window_from_model(&gen, &norm, cfg.window_len, 9);
        let events = st.on_sample(&w, true, &cfg);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Reset);
        assert!(st.train_buf.is_none() && st.test_buf.is_none());
        // Meta parameters untouched; fast restarted from them.
        assert_eq!(st.theta.0, params.0);
        let want = fast_adapt(&params, &norm, &w, cfg.eta, cfg.grad_clip).unwrap();
        assert_eq!(st.theta_fast.0, want.0);
    }

    #[test]
    fn buffers_fill_train_first_then_test() {
        let mut rng = StdRng::seed_from_u64(4);
        let params = init_params(&mut rng);
        let gen = init_params(&mut rng);
        let norm = Normalizer::identity();
        let cfg = test_cfg(AdaptMode::Cmaml);
        let mut st = AdaptState::new(params, norm.clone(), 0);
        let w1 = window_from_model(&gen, &norm, cfg.window_len, 1);
        let w2 = window_from_model(&gen, &norm, cfg.window_len, 2);
        st.buffer_insert(w1.clone(), &cfg);
        assert!(st.train_buf.as_ref() == Some(&w1) && st.test_buf.is_none());
        st.buffer_insert(w2.clone(), &cfg);
        assert!(st.test_buf.as_ref() == Some(&w2));
    }

    #[test]
    fn full_buffer_replacement_frequencies() {
        let mut rng = StdRng::seed_from_u64(5);
        let params = init_params(&mut rng);
        let gen = init_params(&mut rng);
        let norm = Normalizer::identity();
        let cfg = test_cfg(AdaptMode::Cmaml);
        let mut st = AdaptState::new(params, norm.clone(), 77);
        let w = window_from_model(&gen, &norm, cfg.window_len, 1);
        st.buffer_insert(w.clone(), &cfg);
        st.buffer_insert(w.clone(), &cfg);
        let n = 10_000;
        let mut train_replaced = 0;
        let mut test_replaced = 0;
        for k in 0..n {
            let fresh = window_from_model(&gen, &norm, cfg.window_len, 1000 + k);
            let before_train = st.train_buf.clone();
            let before_test = st.test_buf.clone();
            st.buffer_insert(fresh, &cfg);
            if st.train_buf != before_train {
                train_replaced += 1;
            }
            if st.test_buf != before_test {
                test_replaced += 1;
            }
        }
        let ft = train_replaced as f64 / n as f64;
        let fe = test_replaced as f64 / n as f64;
        assert!((ft - 0.25).abs() < 0.02, "train replace rate {ft}");
        assert!((fe - 0.25).abs() < 0.02, "test replace rate {fe}");
    }

    #[test]
    fn meta_gradient_matches_quadratic_closed_form() {
        // L_train = a/2 theta^2, L_test = b/2 theta^2 in one dimension.
        let (a, b) = (0.7, 1.3);
        let eta = 0.1;
        let theta = [0.8];
        let got = meta_gradient(
            &theta,
            |t: &[f64]| vec![a * t[0]],
            |t: &[f64]| vec![b * t[0]],
            eta,
            MetaGradMode::ExactHvp,
            1e-4,
        )
        .unwrap();
        let want = b * (1.0 - eta * a).powi(2) * theta[0];
        assert!((got[0] - want).abs() < 1e-6, "{} vs {want}", got[0]);

        // First-order drops one factor of (1 - eta a).
        let fo = meta_gradient(
            &theta,
            |t: &[f64]| vec![a * t[0]],
            |t: &[f64]| vec![b * t[0]],
            eta,
            MetaGradMode::FirstOrder,
            1e-4,
        )
        .unwrap();
        assert!((fo[0] - b * (1.0 - eta * a) * theta[0]).abs() < 1e-12);
    }

    #[test]
    fn meta_gradient_modes_coincide_at_eta_zero() {
        let theta = [0.4, -0.9];
        let gt = |t: &[f64]| vec![t[0] * t[0], t[1]];
        let ge = |t: &[f64]| vec![2.0 * t[0], -t[1]];
        let exact = meta_gradient(&theta, gt, ge, 0.0, MetaGradMode::ExactHvp, 1e-4).unwrap();
        let first = meta_gradient(&theta, gt, ge, 0.0, MetaGradMode::FirstOrder, 1e-4).unwrap();
        assert_eq!(exact, first);
    }

    #[test]
    fn meta_gradient_modes_agree_as_eta_shrinks() {
        let mut rng = StdRng::seed_from_u64(6);
        let gen = init_params(&mut rng);
        let theta = init_params(&mut rng);
        let norm = Normalizer::identity();
        let train = window_from_model(&gen, &norm, 14, 21);
        let test = window_from_model(&gen, &norm, 14, 22);
        let diff_at = |eta: f64| -> f64 {
            let grad_of = |w: &SampleWindow| {
                let w = w.clone();
                let norm = norm.clone();
                move |flat: &[f64]| {
                    let p = MlpParams(flat.to_vec());
                    window_loss_and_grad(&p, &norm, &w).unwrap().1 .0
                }
            };
            let e = meta_gradient(
                theta.as_slice(),
                grad_of(&train),
                grad_of(&test),
                eta,
                MetaGradMode::ExactHvp,
                1e-5,
            )
            .unwrap();
            let f = meta_gradient(
                theta.as_slice(),
                grad_of(&train),
                grad_of(&test),
                eta,
                MetaGradMode::FirstOrder,
                1e-5,
            )
            .unwrap();
            e.iter()
                .zip(&f)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let d_small = diff_at(1e-3);
        let d_large = diff_at(1e-2);
        // Difference norm is O(eta): a decade of eta buys about a decade.
        assert!(
            d_small < 0.2 * d_large,
            "diff at 1e-3 = {d_small}, at 1e-2 = {d_large}"
        );
    }

    #[test]
    fn meta_update_with_self_consistent_windows_is_a_noop() {
        let mut rng = StdRng::seed_from_u64(7);
        let theta = init_params(&mut rng);
        let norm = Normalizer::identity();
        // Both windows generated by theta itself: all gradients vanish.
        let train = window_from_model(&theta, &norm, 14, 31);
        let test = window_from_model(&theta, &norm, 14, 32);
        let cfg = test_cfg(AdaptMode::Cmaml);
        let adam = AdamState::new(PARAM_COUNT);
        let (theta2, adam2, diag) = meta_update(&theta, &norm, &train, &test, &cfg, &adam).unwrap();
        assert_eq!(adam2.t, 1);
        assert!(diag.meta_grad_norm < 1e-9);
        let max_move = theta
            .0
            .iter()
            .zip(&theta2.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_move < 1e-12, "moved {max_move}");
    }

    #[test]
    fn fast_adapt_zero_gradient_window_keeps_params() {
        let mut rng = StdRng::seed_from_u64(8);
        let theta = init_params(&mut rng);
        let norm = Normalizer::identity();
        let w = window_from_model(&theta, &norm, 14, 41);
        let out = fast_adapt(&theta, &norm, &w, 0.1, 10.0).unwrap();
        let max_move = theta
            .0
            .iter()
            .zip(&out.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_move < 1e-12);
    }

    #[test]
    fn fine_tune_descends_with_halving_guard() {
        let mut rng = StdRng::seed_from_u64(9);
        let gen = init_params(&mut rng);
        let theta = init_params(&mut rng);
        let norm = Normalizer::identity();
        let w = window_from_model(&gen, &norm, 14, 51);
        let l0 = crate::model::rollout_loss(&theta, &norm, &w).unwrap();
        let mut eta = 0.1;
        let mut ok = false;
        for _ in 0..12 {
            let out = fine_tune(&theta, &norm, &w, eta, 10.0).unwrap();
            if crate::model::rollout_loss(&out, &norm, &w).unwrap() < l0 {
                ok = true;
                break;
            }
            eta *= 0.5;
        }
        assert!(ok);
    }

    #[test]
    fn invalid_window_is_skipped() {
        let mut rng = StdRng::seed_from_u64(10);
        let params = init_params(&mut rng);
        let gen = init_params(&mut rng);
        let norm = Normalizer::identity();
        let cfg = test_cfg(AdaptMode::Cmaml);
        let mut st = AdaptState::new(params.clone(), norm.clone(), 0);
        // Wrong length: 10 instead of 14.
        let w = window_from_model(&gen, &norm, 10, 61);
        let events = st.on_sample(&w, false, &cfg);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Skipped);
        assert_eq!(st.theta_fast.0, params.0);
    }

    #[test]
    fn periodic_meta_fires_every_fifth_tick_with_full_buffers() {
        let mut rng = StdRng::seed_from_u64(11);
        let params = init_params(&mut rng);
        let gen = init_params(&mut rng);
        let norm = Normalizer::identity();
        let cfg = test_cfg(AdaptMode::Cmaml);
        let mut st = AdaptState::new(params.clone(), norm.clone(), 0);
        let mut meta_ticks = Vec::new();
        for k in 0..12 {
            let w = window_from_model(&gen, &norm, cfg.window_len, 100 + k);
            let events = st.on_sample(&w, false, &cfg);
            if events.iter().any(|e| e.kind == EventKind::MetaPeriodic) {
                meta_ticks.push(k);
            }
        }
        assert_eq!(meta_ticks, vec![4, 9]);
        // Meta parameters moved away from the checkpoint; Adam advanced.
        assert_ne!(st.theta.0, params.0);
        assert_eq!(st.adam.t, 2);
    }
}
