//! The inference comparison in miniature: record a short drive over the
//! two-mat course with a frozen model, then replay the identical log
//! through the frozen, gradient-descent, and continual-meta-learning
//! models, comparing the window loss each accumulates.
//!
//! ```bash
//! cargo run --release --example adapt_compare -- [ckpt.json]
//! ```

use kartlab::adapt::AdaptMode;
use kartlab::config::ExperimentConfig;
use kartlab::harness::{record_drive_log, replay_log};
use kartlab::nn::Checkpoint;
use kartlab::pretrain::{collect_data, decimate, train_offline, PretrainConfig};

fn main() -> kartlab::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.mppi.samples = 128;
    cfg.run.record_duration = 24.0;

    let (params, norm) = match std::env::args().nth(1) {
        Some(path) => Checkpoint::load(std::path::Path::new(&path))?.into_parts()?,
        None => {
            println!("no checkpoint given; quick-training one (~1 min)");
            let pt = PretrainConfig {
                collect_duration: 180.0,
                epochs: 60,
                ..cfg.pretrain
            };
            let ds = decimate(
                &collect_data(&cfg.sim, &cfg.pretrain_surface, &pt, cfg.control.dt, 0)?,
                cfg.control.dt,
            )?;
            let trained = train_offline(&ds, &pt, 0)?;
            (trained.params, trained.norm)
        }
    };

    println!(
        "recording a {:.0} s drive on the two-mat oval with the frozen model...",
        cfg.run.record_duration
    );
    let log = record_drive_log(&cfg, &params, &norm, 3)?;
    println!("recorded {} steps; replaying through each model:", log.len());

    for mode in [AdaptMode::Fixed, AdaptMode::Gd, AdaptMode::Cmaml] {
        let (stats, series) = replay_log(&log, &params, &norm, &cfg.adapt, mode, cfg.control.dt, 3)?;
        let peak = series
            .losses
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{:>6}: mean window loss {:.5}  (sum {:.3}, peak {:.4}, {} ticks)",
            mode.to_string(),
            stats.mean_window_loss,
            stats.sum_window_loss,
            peak,
            stats.ticks
        );
    }
    println!("lower is better; the adaptive models update online from the replayed stream");
    Ok(())
}
