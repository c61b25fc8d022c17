//! Closed-loop driving demo: the sampling controller laps the cement oval
//! with a learned model while gradient-descent adaptation settles it on
//! the course. Prints per-lap times and errors.
//!
//! Pass a checkpoint path to reuse one (e.g. from `pretrain_quick`);
//! otherwise a quick model is trained first.
//!
//! ```bash
//! cargo run --release --example drive_oval -- [ckpt.json]
//! ```

use kartlab::adapt::AdaptMode;
use kartlab::config::ExperimentConfig;
use kartlab::costmap::build_oval_costmap;
use kartlab::harness::{run_closed_loop, StopCondition};
use kartlab::nn::Checkpoint;
use kartlab::pretrain::{collect_data, decimate, train_offline, PretrainConfig};

fn main() -> kartlab::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.mppi.samples = 128; // keep the demo snappy

    let (params, norm) = match std::env::args().nth(1) {
        Some(path) => {
            println!("loading checkpoint {path}");
            Checkpoint::load(std::path::Path::new(&path))?.into_parts()?
        }
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
            println!("trained: loss {:.3} -> {:.3}", trained.curve[0], trained.curve.last().unwrap());
            (trained.params, trained.norm)
        }
    };

    let costmap = build_oval_costmap(&cfg.track, cfg.control.costmap_resolution)?;
    let out = run_closed_loop(
        &cfg,
        &cfg.pretrain_surface, // uniform cement
        &params,
        &norm,
        AdaptMode::Gd,
        7,
        StopCondition::Laps(5),
        &costmap,
    )?;
    println!(
        "drove {:.1} s, {:.1} m of path, {} laps{}",
        out.sim_time,
        out.path_length,
        out.laps.len(),
        if out.diverged { " (DIVERGED)" } else { "" }
    );
    for lap in &out.laps {
        println!(
            "lap {:>2}: {:>5.2} s, control error {:>8.1}",
            lap.index, lap.lap_time, lap.control_error
        );
    }
    let mean_speed =
        out.true_speed.iter().map(|(_, v)| v).sum::<f64>() / out.true_speed.len() as f64;
    println!("mean speed {mean_speed:.2} m/s (reference {})", cfg.mppi.v_ref);
    Ok(())
}
