//! Surface-revisit probe: the simulated kart drives on foam, then rubber,
//! then foam again under scripted excitation. Both adaptive rules see the
//! identical measured stream; the table shows how many update ticks each
//! needs on the *second* foam visit to pull its window loss back under a
//! common threshold. Restarting from meta parameters pays off exactly
//! here.
//!
//! ```bash
//! cargo run --release --example readapt_demo -- [ckpt.json]
//! ```

use kartlab::config::ExperimentConfig;
use kartlab::harness::run_readaptation;
use kartlab::nn::Checkpoint;
use kartlab::pretrain::{collect_data, decimate, train_offline, PretrainConfig};

fn main() -> kartlab::Result<()> {
    let cfg = ExperimentConfig::default();
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

    println!("foam -> rubber -> foam, 8 s per phase, update tick every 80 ms");
    println!("{:>6} {:>12} {:>16} {:>16}", "seed", "threshold", "cmaml updates", "gd updates");
    let mut cm_total = 0usize;
    let mut gd_total = 0usize;
    let seeds = [11, 12, 13, 14, 15];
    for seed in seeds {
        let r = run_readaptation(&cfg, &params, &norm, seed, 8.0)?;
        println!(
            "{:>6} {:>12.5} {:>16} {:>16}",
            r.seed, r.threshold, r.cmaml_updates, r.gd_updates
        );
        cm_total += r.cmaml_updates;
        gd_total += r.gd_updates;
    }
    println!(
        "mean updates to threshold: cmaml {:.1}, gd {:.1}",
        cm_total as f64 / seeds.len() as f64,
        gd_total as f64 / seeds.len() as f64
    );
    Ok(())
}
