//! Scaled-down offline training walkthrough: collect a couple of minutes
//! of cement-floor excitation driving, decimate to the control rate, fit
//! the network, and write a checkpoint.
//!
//! ```bash
//! cargo run --release --example pretrain_quick -- /tmp/quick_ckpt.json
//! ```

use kartlab::config::ExperimentConfig;
use kartlab::nn::Checkpoint;
use kartlab::pretrain::{collect_data, decimate, train_offline, PretrainConfig};

fn main() -> kartlab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "quick_ckpt.json".to_string());
    let cfg = ExperimentConfig::default();
    let pt = PretrainConfig {
        collect_duration: 120.0,
        epochs: 40,
        ..cfg.pretrain
    };

    let raw = collect_data(&cfg.sim, &cfg.pretrain_surface, &pt, cfg.control.dt, 0)?;
    println!(
        "collected {} samples at {} ms in {} segments",
        raw.total_samples(),
        pt.log_dt * 1e3,
        raw.segments.len()
    );
    let ds = decimate(&raw, cfg.control.dt)?;
    println!("decimated to {} samples at {} ms", ds.total_samples(), cfg.control.dt * 1e3);

    let trained = train_offline(&ds, &pt, 0)?;
    for (epoch, loss) in trained.curve.iter().enumerate().step_by(10) {
        println!("epoch {epoch:>3}: mean window loss {loss:.4}");
    }
    println!(
        "final loss {:.4} ({:.1}% of initial)",
        trained.curve.last().unwrap(),
        100.0 * trained.curve.last().unwrap() / trained.curve[0]
    );
    Checkpoint::new(&trained.params, &trained.norm).save(std::path::Path::new(&out))?;
    println!("checkpoint written to {out}");
    Ok(())
}
